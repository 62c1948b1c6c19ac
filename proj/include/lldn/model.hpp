#pragma once

#include <string>
#include <vector>

#include "lldn/bev_encoder.hpp"
#include "lldn/gfc.hpp"
#include "lldn/head.hpp"
#include "lldn/metrics.hpp"
#include "lldn/rnf.hpp"
#include "lldn/runconfig.hpp"
#include "lldn/scene.hpp"

namespace lldn {

// Full detector: BEV encoder + backbone + two-head segmentation. Which
// encoder/backbone are active follows the RunConfig; the inactive ones stay
// empty and own no parameters.
template <typename T>
class LaneModel {
 public:
  RunConfig cfg;
  PillarEncoder<T> pillar_enc;
  ProjectorCnn<T> projector;
  GfcBackbone<T> gfc;
  RnfBackbone<T> rnf;
  DetectionHead<T> head;

  void init(const RunConfig& config, Rng& rng) {
    cfg = config;
    cfg.validate();
    if (cfg.encoder == "pillars")
      pillar_enc.init(cfg.c_bev, rng);
    else
      projector.init(cfg.c_bev, rng);
    if (cfg.is_gfc()) {
      GfcConfig g;
      g.variant = cfg.backbone == "gfc-t" ? GfcVariant::T : GfcVariant::M;
      g.depth = cfg.depth;
      g.patch_h = g.patch_w = cfg.patch;
      g.hidden = cfg.hidden;
      g.heads = cfg.heads;
      g.mlp_ratio = cfg.mlp_ratio;
      g.c_out = cfg.c_out;
      gfc.init(g, cfg.grid.rows, cfg.grid.cols, cfg.c_bev, rng);
    } else {
      RnfConfig r;
      r.variant = cfg.backbone == "rnf-s" ? RnfVariant::S : RnfVariant::D;
      r.c_out = cfg.c_out;
      rnf.init(r, cfg.c_bev, rng);
    }
    head.init({.c_out = cfg.c_out, .n_cls = cfg.n_cls}, rng);
  }

  NamedParams<T> named_params() {
    NamedParams<T> out;
    if (cfg.encoder == "pillars")
      pillar_enc.collect("encoder.pillars", out);
    else
      projector.collect("encoder.projector", out);
    if (cfg.is_gfc())
      gfc.collect("backbone", out);
    else
      rnf.collect("backbone", out);
    head.collect("head", out);
    return out;
  }

  struct Forward {
    HeadOutput<T> out;
    GfcActivations<T> gfc_acts;
    RnfActivations<T> rnf_acts;
  };

  Forward forward(Tape<T>& tape, const Frame& frame, bool want_acts = false) const {
    if (!(frame.label.grid == cfg.grid))
      throw DataError("model: frame grid does not match the configured grid");
    Forward fw;
    Tensor<T> features = encode(tape, frame.cloud);
    Tensor<T> fmap;
    if (cfg.is_gfc())
      fmap = gfc.forward(tape, features, want_acts ? &fw.gfc_acts : nullptr);
    else
      fmap = rnf.forward(tape, features, want_acts ? &fw.rnf_acts : nullptr);
    fw.out = head.forward(tape, fmap);
    return fw;
  }

  // Tape-local inference adapted to the shared evaluator.
  Detection detect(const Frame& frame) const {
    Tape<T> tape;
    Forward fw = forward(tape, frame, false);
    Detection det;
    det.n_cls = cfg.n_cls;
    det.confidence.assign(fw.out.confidence.data().begin(), fw.out.confidence.data().end());
    det.cls_probs.assign(fw.out.cls_probs.data().begin(), fw.out.cls_probs.data().end());
    return det;
  }

  Detector detector() const {
    return [this](const Frame& f) { return detect(f); };
  }

 private:
  Tensor<T> encode(Tape<T>& tape, const PointCloud& cloud) const {
    if (cfg.encoder == "pillars") {
      auto pillars = pillarize<T>(cloud, cfg.grid, cfg.n_p);
      return pillar_enc.forward(tape, pillars);
    }
    Tensor<T> img = project_points<T>(cloud, cfg.grid.refined(8));
    return projector.forward(tape, img);
  }
};

using LaneModelF = LaneModel<float>;

}  // namespace lldn
