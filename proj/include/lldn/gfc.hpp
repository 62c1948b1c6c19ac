#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "lldn/errors.hpp"
#include "lldn/tape.hpp"
#include "lldn/tensor.hpp"

namespace lldn {

enum class GfcVariant { T, M };

struct GfcConfig {
  GfcVariant variant = GfcVariant::T;
  int depth = 3;      // N_D blocks
  int patch_h = 8;    // H_p
  int patch_w = 8;    // W_p
  int hidden = 512;   // N_h
  int heads = 4;      // GFC-T only
  int mlp_ratio = 2;
  int c_out = 64;

  int pixel_channels() const { return hidden / (patch_h * patch_w); }

  void validate(int h_bev, int w_bev) const {
    if (depth < 0) throw ConfigError("gfc: negative depth");
    if (patch_h <= 0 || patch_w <= 0 || hidden <= 0 || c_out <= 0 || mlp_ratio <= 0)
      throw ConfigError("gfc: non-positive dimension");
    if (h_bev % patch_h != 0 || w_bev % patch_w != 0)
      throw ConfigError("gfc: grid " + std::to_string(h_bev) + "x" + std::to_string(w_bev) +
                        " not divisible by patch " + std::to_string(patch_h) + "x" + std::to_string(patch_w));
    if (hidden % (patch_h * patch_w) != 0)
      throw ConfigError("gfc: hidden dim " + std::to_string(hidden) + " not divisible by patch area " +
                        std::to_string(patch_h * patch_w));
    if (variant == GfcVariant::T && (heads <= 0 || hidden % heads != 0))
      throw ConfigError("gfc: hidden dim " + std::to_string(hidden) + " not divisible by " +
                        std::to_string(heads) + " heads");
  }
};

template <typename T>
struct LinearLayer {
  Tensor<T> w, b;

  void init(int in, int out, Rng& rng) {
    w = Tensor<T>::glorot(Shape{in, out}, in, out, rng);
    b = Tensor<T>(Shape{out});
  }

  void collect(const std::string& prefix, NamedParams<T>& out) {
    out.emplace_back(prefix + ".w", w);
    out.emplace_back(prefix + ".b", b);
  }

  Tensor<T> apply(Tape<T>& tape, const Tensor<T>& x) const {
    return tape.add(tape.matmul(x, w), b);
  }
};

template <typename T>
struct NormLayer {
  Tensor<T> gain, bias;

  void init(int n) {
    gain = Tensor<T>::full(Shape{n}, T(1));
    bias = Tensor<T>(Shape{n});
  }

  void collect(const std::string& prefix, NamedParams<T>& out) {
    out.emplace_back(prefix + ".gain", gain);
    out.emplace_back(prefix + ".bias", bias);
  }

  Tensor<T> apply(Tape<T>& tape, const Tensor<T>& x, int axis) const {
    return tape.layer_norm(x, gain, bias, axis);
  }
};

// Per-forward activity of the backbone: attention score matrices for GFC-T
// and un-patched per-block activations for heatmap rendering. Values are
// detached copies; they never join any tape.
template <typename T>
struct GfcActivations {
  std::vector<Tensor<T>> attention;  // per block: [heads, N_patch, N_patch]
  std::vector<Tensor<T>> blocks;     // per block: [H_bev, W_bev, N_h/(H_p*W_p)]
};

template <typename T>
struct TransformerBlock {
  NormLayer<T> ln1, ln2;
  LinearLayer<T> wq, wv, wo, ffn1, ffn2;
  Tensor<T> wk;  // key projection carries no bias: a shared key offset cancels in the softmax

  void init(const GfcConfig& cfg, Rng& rng) {
    ln1.init(cfg.hidden);
    ln2.init(cfg.hidden);
    wq.init(cfg.hidden, cfg.hidden, rng);
    wk = Tensor<T>::glorot(Shape{cfg.hidden, cfg.hidden}, cfg.hidden, cfg.hidden, rng);
    wv.init(cfg.hidden, cfg.hidden, rng);
    wo.init(cfg.hidden, cfg.hidden, rng);
    ffn1.init(cfg.hidden, cfg.mlp_ratio * cfg.hidden, rng);
    ffn2.init(cfg.mlp_ratio * cfg.hidden, cfg.hidden, rng);
  }

  void collect(const std::string& prefix, NamedParams<T>& out) {
    ln1.collect(prefix + ".ln1", out);
    ln2.collect(prefix + ".ln2", out);
    wq.collect(prefix + ".wq", out);
    out.emplace_back(prefix + ".wk.w", wk);
    wv.collect(prefix + ".wv", out);
    wo.collect(prefix + ".wo", out);
    ffn1.collect(prefix + ".ffn1", out);
    ffn2.collect(prefix + ".ffn2", out);
  }

  // pre-norm residual: t += MHA(LN(t)); t += FFN(LN(t))
  Tensor<T> forward(Tape<T>& tape, const Tensor<T>& tokens, const GfcConfig& cfg,
                    Tensor<T>* attention_out) const {
    const int n = tokens.dim(0);
    const int d_head = cfg.hidden / cfg.heads;
    Tensor<T> u = ln1.apply(tape, tokens, 1);
    auto split_heads = [&](const Tensor<T>& x) {
      return tape.transpose(tape.reshape(x, Shape{n, cfg.heads, d_head}), {1, 0, 2});
    };
    Tensor<T> q = split_heads(wq.apply(tape, u));        // [h, n, d]
    Tensor<T> k = split_heads(tape.matmul(u, wk));
    Tensor<T> v = split_heads(wv.apply(tape, u));
    Tensor<T> kt = tape.transpose(k, {0, 2, 1});         // [h, d, n]
    Tensor<T> scores = tape.scale(tape.matmul(q, kt), static_cast<T>(1.0 / std::sqrt(static_cast<double>(d_head))));
    Tensor<T> attn = tape.softmax(scores, 2);            // rows over the key axis
    for (int h = 0; h < cfg.heads; ++h)
      for (int r = 0; r < n; ++r) {
        double sum = 0.0;
        for (int c = 0; c < n; ++c) sum += static_cast<double>(attn.at((static_cast<std::int64_t>(h) * n + r) * n + c));
        if (std::abs(sum - 1.0) > 1e-6)
          throw NumericError("attention row does not sum to 1");
      }
    if (attention_out) *attention_out = attn.clone();
    Tensor<T> ctx = tape.matmul(attn, v);                // [h, n, d]
    ctx = tape.reshape(tape.transpose(ctx, {1, 0, 2}), Shape{n, cfg.hidden});
    Tensor<T> t = tape.add(tokens, wo.apply(tape, ctx));
    Tensor<T> u2 = ln2.apply(tape, t, 1);
    Tensor<T> f = ffn2.apply(tape, tape.gelu(ffn1.apply(tape, u2)));
    return tape.add(t, f);
  }
};

template <typename T>
struct MixerBlock {
  NormLayer<T> ln1, ln2;
  LinearLayer<T> tok1, tok2;  // mixing across the patch axis, per channel
  LinearLayer<T> ch1, ch2;    // mixing across the channel axis, per patch

  void init(const GfcConfig& cfg, int n_patch, Rng& rng) {
    ln1.init(cfg.hidden);
    ln2.init(cfg.hidden);
    tok1.init(n_patch, cfg.mlp_ratio * n_patch, rng);
    tok2.init(cfg.mlp_ratio * n_patch, n_patch, rng);
    ch1.init(cfg.hidden, cfg.mlp_ratio * cfg.hidden, rng);
    ch2.init(cfg.mlp_ratio * cfg.hidden, cfg.hidden, rng);
  }

  void collect(const std::string& prefix, NamedParams<T>& out) {
    ln1.collect(prefix + ".ln1", out);
    ln2.collect(prefix + ".ln2", out);
    tok1.collect(prefix + ".tok1", out);
    tok2.collect(prefix + ".tok2", out);
    ch1.collect(prefix + ".ch1", out);
    ch2.collect(prefix + ".ch2", out);
  }

  Tensor<T> forward(Tape<T>& tape, const Tensor<T>& tokens) const {
    // token mixing on [N_h, N_patch]
    Tensor<T> u = tape.transpose(ln1.apply(tape, tokens, 1), {1, 0});
    Tensor<T> m = tok2.apply(tape, tape.gelu(tok1.apply(tape, u)));
    Tensor<T> t = tape.add(tokens, tape.transpose(m, {1, 0}));
    // channel mixing on [N_patch, N_h]
    Tensor<T> u2 = ln2.apply(tape, t, 1);
    Tensor<T> c = ch2.apply(tape, tape.gelu(ch1.apply(tape, u2)));
    return tape.add(t, c);
  }
};

// Non-overlapping patches flattened row-major, linearly embedded, plus a
// learned positional embedding: [H, W, C] -> [N_patch, N_h].
template <typename T>
Tensor<T> patchify(Tape<T>& tape, const Tensor<T>& x, int patch_h, int patch_w) {
  const int H = x.dim(0), W = x.dim(1), C = x.dim(2);
  const int nph = H / patch_h, npw = W / patch_w;
  Tensor<T> r = tape.reshape(x, Shape{nph, patch_h, npw, patch_w, C});
  r = tape.transpose(r, {0, 2, 1, 3, 4});
  return tape.reshape(r, Shape{nph * npw, patch_h * patch_w * C});
}

template <typename T>
Tensor<T> unpatchify(Tape<T>& tape, const Tensor<T>& tokens, int h_bev, int w_bev, int patch_h,
                     int patch_w) {
  const int nph = h_bev / patch_h, npw = w_bev / patch_w;
  const int cp = tokens.dim(1) / (patch_h * patch_w);
  Tensor<T> r = tape.reshape(tokens, Shape{nph, npw, patch_h, patch_w, cp});
  r = tape.transpose(r, {0, 2, 1, 3, 4});
  return tape.reshape(r, Shape{h_bev, w_bev, cp});
}

// The global feature correlator: patch embedding, N_D Transformer or Mixer
// blocks, un-patching back to the input resolution, and the anti-bottleneck
// 1x1 fuse. Output spatial shape always equals the input spatial shape.
template <typename T>
struct GfcBackbone {
  GfcConfig cfg;
  int h_bev = 0, w_bev = 0, c_bev = 0;
  LinearLayer<T> embed;
  Tensor<T> pos;  // [N_patch, N_h], learned
  std::vector<TransformerBlock<T>> tblocks;
  std::vector<MixerBlock<T>> mblocks;
  LinearLayer<T> fuse;  // 1x1 conv: N_h/(H_p*W_p) -> C_out

  void init(const GfcConfig& config, int h, int w, int c, Rng& rng) {
    cfg = config;
    cfg.validate(h, w);
    h_bev = h;
    w_bev = w;
    c_bev = c;
    const int n_patch = (h / cfg.patch_h) * (w / cfg.patch_w);
    embed.init(cfg.patch_h * cfg.patch_w * c, cfg.hidden, rng);
    pos = Tensor<T>::normal(Shape{n_patch, cfg.hidden}, rng, 0.0, 0.02);
    if (cfg.variant == GfcVariant::T) {
      tblocks.resize(static_cast<std::size_t>(cfg.depth));
      for (auto& b : tblocks) b.init(cfg, rng);
    } else {
      mblocks.resize(static_cast<std::size_t>(cfg.depth));
      for (auto& b : mblocks) b.init(cfg, n_patch, rng);
    }
    fuse.init(cfg.pixel_channels(), cfg.c_out, rng);
  }

  void collect(const std::string& prefix, NamedParams<T>& out) {
    embed.collect(prefix + ".embed", out);
    out.emplace_back(prefix + ".pos", pos);
    for (std::size_t i = 0; i < tblocks.size(); ++i)
      tblocks[i].collect(prefix + ".block" + std::to_string(i), out);
    for (std::size_t i = 0; i < mblocks.size(); ++i)
      mblocks[i].collect(prefix + ".block" + std::to_string(i), out);
    fuse.collect(prefix + ".fuse", out);
  }

  Tensor<T> forward(Tape<T>& tape, const Tensor<T>& x, GfcActivations<T>* acts = nullptr) const {
    if (x.dim(0) != h_bev || x.dim(1) != w_bev || x.dim(2) != c_bev)
      throw OpError("gfc: input " + shape_str(x.shape()) + " does not match configured grid");
    Tensor<T> tokens = tape.add(embed.apply(tape, patchify(tape, x, cfg.patch_h, cfg.patch_w)), pos);
    for (int d = 0; d < cfg.depth; ++d) {
      if (cfg.variant == GfcVariant::T) {
        Tensor<T> attn;
        tokens = tblocks[static_cast<std::size_t>(d)].forward(tape, tokens, cfg, acts ? &attn : nullptr);
        if (acts) acts->attention.push_back(attn);
      } else {
        tokens = mblocks[static_cast<std::size_t>(d)].forward(tape, tokens);
      }
      if (acts) acts->blocks.push_back(unpatch_detached(tokens));
    }
    Tensor<T> map = unpatchify(tape, tokens, h_bev, w_bev, cfg.patch_h, cfg.patch_w);
    return tape.pointwise_linear(map, fuse.w, fuse.b);
  }

  // un-patch token data without touching any tape (for heatmaps)
  Tensor<T> unpatch_detached(const Tensor<T>& tokens) const {
    const int nph = h_bev / cfg.patch_h, npw = w_bev / cfg.patch_w;
    const int cp = cfg.pixel_channels();
    Tensor<T> out(Shape{h_bev, w_bev, cp});
    for (int p = 0; p < nph * npw; ++p) {
      int ph = p / npw, pw = p % npw;
      for (int i = 0; i < cfg.patch_h; ++i)
        for (int j = 0; j < cfg.patch_w; ++j)
          for (int c = 0; c < cp; ++c)
            out.at(((static_cast<std::int64_t>(ph * cfg.patch_h + i)) * w_bev + (pw * cfg.patch_w + j)) * cp + c) =
                tokens.at(static_cast<std::int64_t>(p) * cfg.hidden + (i * cfg.patch_w + j) * cp + c);
    }
    return out;
  }
};

}  // namespace lldn
