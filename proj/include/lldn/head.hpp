#pragma once

#include <string>
#include <vector>

#include "lldn/gfc.hpp"
#include "lldn/tape.hpp"
#include "lldn/tensor.hpp"

namespace lldn {

struct HeadConfig {
  int c_out = 64;  // backbone output channels
  int n_cls = 7;   // background + 6 lane classes
};

// Prediction maps plus the raw tensors needed by the losses; everything here
// still lives on the forward tape.
template <typename T>
struct HeadOutput {
  Tensor<T> confidence;  // [H, W, 1], sigmoid
  Tensor<T> cls_probs;   // [H, W, N_cls], grid-wise softmax
  Tensor<T> cls_logits;  // [H, W, N_cls]
};

// Two segmentation heads, each a two-layer shared MLP (C_out -> 2*C_out ->
// {1, N_cls}) applied grid-wise, with sigmoid / softmax activations.
template <typename T>
struct DetectionHead {
  HeadConfig cfg;
  LinearLayer<T> conf1, conf2, cls1, cls2;

  void init(const HeadConfig& config, Rng& rng) {
    cfg = config;
    conf1.init(cfg.c_out, 2 * cfg.c_out, rng);
    conf2.init(2 * cfg.c_out, 1, rng);
    cls1.init(cfg.c_out, 2 * cfg.c_out, rng);
    cls2.init(2 * cfg.c_out, cfg.n_cls, rng);
  }

  void collect(const std::string& prefix, NamedParams<T>& out) {
    conf1.collect(prefix + ".conf1", out);
    conf2.collect(prefix + ".conf2", out);
    cls1.collect(prefix + ".cls1", out);
    cls2.collect(prefix + ".cls2", out);
  }

  HeadOutput<T> forward(Tape<T>& tape, const Tensor<T>& features) const {
    if (features.rank() != 3 || features.dim(2) != cfg.c_out)
      throw OpError("head: expected [H,W," + std::to_string(cfg.c_out) + "] features, got " +
                    shape_str(features.shape()));
    HeadOutput<T> out;
    Tensor<T> hc = tape.relu(tape.pointwise_linear(features, conf1.w, conf1.b));
    out.confidence = tape.sigmoid(tape.pointwise_linear(hc, conf2.w, conf2.b));
    Tensor<T> hk = tape.relu(tape.pointwise_linear(features, cls1.w, cls1.b));
    out.cls_logits = tape.pointwise_linear(hk, cls2.w, cls2.b);
    out.cls_probs = tape.softmax(out.cls_logits, 2);
    return out;
  }
};

// Loss terms for one frame. Confidence labels come from the class raster
// (any lane class -> 1); classification uses all grids, background included.
template <typename T>
struct FrameLoss {
  Tensor<T> dice;
  Tensor<T> cross_entropy;
  Tensor<T> total;
};

template <typename T>
FrameLoss<T> segmentation_loss(Tape<T>& tape, const HeadOutput<T>& pred,
                               const std::vector<std::uint8_t>& cls_label, int rows, int cols) {
  Tensor<T> conf_label(Shape{rows, cols, 1});
  for (std::size_t i = 0; i < cls_label.size(); ++i)
    conf_label.at(static_cast<std::int64_t>(i)) = cls_label[i] > 0 ? T(1) : T(0);
  FrameLoss<T> loss;
  loss.dice = tape.soft_dice(pred.confidence, conf_label);
  loss.cross_entropy = tape.cross_entropy(pred.cls_logits, cls_label);
  loss.total = tape.add(loss.dice, loss.cross_entropy);
  return loss;
}

}  // namespace lldn
