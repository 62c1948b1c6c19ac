#pragma once

#include <array>
#include <string>
#include <vector>

#include "lldn/bev_encoder.hpp"
#include "lldn/errors.hpp"
#include "lldn/tape.hpp"
#include "lldn/tensor.hpp"

namespace lldn {

enum class RnfVariant { S, D };

// The CNN counterpart backbone: 5 residual blocks of 3, 5, 5, 5, 5 conv
// layers, each block halving the spatial dims, fused back to full resolution
// by a feature pyramid. Variant S downsamples with strided convs throughout;
// variant D switches blocks 3-5 to dilation-2 convs with 2x2 max-pooling.
struct RnfConfig {
  RnfVariant variant = RnfVariant::S;
  std::array<int, 5> widths{16, 32, 48, 64, 64};
  int lateral = 32;  // FPN channel width before concat
  int c_out = 64;

  static constexpr std::array<int, 5> kConvCounts{3, 5, 5, 5, 5};
};

template <typename T>
struct RnfActivations {
  std::vector<Tensor<T>> blocks;  // per block, at its native resolution
};

template <typename T>
struct RnfBackbone {
  struct Unit {
    ConvLayer<T> c1, c2;
  };
  struct Block {
    ConvLayer<T> down;
    std::vector<Unit> units;
  };

  RnfConfig cfg;
  std::array<Block, 5> blocks;
  std::array<ConvLayer<T>, 5> laterals;  // 1x1 onto the pyramid width
  ConvLayer<T> fuse;                     // 1x1 after concat

  void init(const RnfConfig& config, int c_in, Rng& rng) {
    cfg = config;
    int prev = c_in;
    for (int bi = 0; bi < 5; ++bi) {
      Block& b = blocks[static_cast<std::size_t>(bi)];
      const int width = cfg.widths[static_cast<std::size_t>(bi)];
      b.down.init(3, prev, width, rng);
      const int n_units = (RnfConfig::kConvCounts[static_cast<std::size_t>(bi)] - 1) / 2;
      b.units.resize(static_cast<std::size_t>(n_units));
      for (auto& u : b.units) {
        u.c1.init(3, width, width, rng);
        u.c2.init(3, width, width, rng);
      }
      // 1x1 convs are shared linear maps over channels; store them as matrices
      laterals[static_cast<std::size_t>(bi)].w =
          Tensor<T>::glorot(Shape{width, cfg.lateral}, width, cfg.lateral, rng);
      laterals[static_cast<std::size_t>(bi)].b = Tensor<T>(Shape{cfg.lateral});
      prev = width;
    }
    fuse.w = Tensor<T>::glorot(Shape{5 * cfg.lateral, cfg.c_out}, 5 * cfg.lateral, cfg.c_out, rng);
    fuse.b = Tensor<T>(Shape{cfg.c_out});
  }

  void collect(const std::string& prefix, NamedParams<T>& out) {
    for (int bi = 0; bi < 5; ++bi) {
      Block& b = blocks[static_cast<std::size_t>(bi)];
      std::string base = prefix + ".block" + std::to_string(bi);
      out.emplace_back(base + ".down.w", b.down.w);
      out.emplace_back(base + ".down.b", b.down.b);
      for (std::size_t ui = 0; ui < b.units.size(); ++ui) {
        out.emplace_back(base + ".unit" + std::to_string(ui) + ".c1.w", b.units[ui].c1.w);
        out.emplace_back(base + ".unit" + std::to_string(ui) + ".c1.b", b.units[ui].c1.b);
        out.emplace_back(base + ".unit" + std::to_string(ui) + ".c2.w", b.units[ui].c2.w);
        out.emplace_back(base + ".unit" + std::to_string(ui) + ".c2.b", b.units[ui].c2.b);
      }
      out.emplace_back(prefix + ".lateral" + std::to_string(bi) + ".w", laterals[static_cast<std::size_t>(bi)].w);
      out.emplace_back(prefix + ".lateral" + std::to_string(bi) + ".b", laterals[static_cast<std::size_t>(bi)].b);
    }
    out.emplace_back(prefix + ".fuse.w", fuse.w);
    out.emplace_back(prefix + ".fuse.b", fuse.b);
  }

  std::int64_t param_count() {
    NamedParams<T> ps;
    collect("", ps);
    std::int64_t n = 0;
    for (auto& [name, t] : ps) n += t.size();
    return n;
  }

  static Tensor<T> max_pool2(Tape<T>& tape, const Tensor<T>& x) {
    const int H = x.dim(0), W = x.dim(1), C = x.dim(2);
    Tensor<T> r = tape.reshape(x, Shape{H / 2, 2, W / 2, 2, C});
    return tape.max_reduce(tape.max_reduce(r, 3), 1);
  }

  Tensor<T> forward(Tape<T>& tape, const Tensor<T>& x, RnfActivations<T>* acts = nullptr) const {
    if (x.dim(0) % 32 != 0 || x.dim(1) % 32 != 0)
      throw OpError("rnf: input " + shape_str(x.shape()) + " not divisible by 2^5");
    const int H = x.dim(0), W = x.dim(1);
    Tensor<T> h = x;
    std::vector<Tensor<T>> pyramid;
    for (int bi = 0; bi < 5; ++bi) {
      const Block& b = blocks[static_cast<std::size_t>(bi)];
      const bool dilated = cfg.variant == RnfVariant::D && bi >= 2;
      if (dilated) {
        h = tape.relu(tape.add(tape.conv2d(h, b.down.w, 1, 2, 2), b.down.b));
        h = max_pool2(tape, h);
      } else {
        h = tape.relu(tape.add(tape.conv2d(h, b.down.w, 2, 1, 1), b.down.b));
      }
      const int dil = dilated ? 2 : 1;
      for (const auto& u : b.units) {
        Tensor<T> r = tape.relu(tape.add(tape.conv2d(h, u.c1.w, 1, dil, dil), u.c1.b));
        r = tape.add(tape.conv2d(r, u.c2.w, 1, dil, dil), u.c2.b);
        h = tape.relu(tape.add(h, r));
      }
      if (acts) acts->blocks.push_back(h.clone());
      Tensor<T> lat = tape.pointwise_linear(h, laterals[static_cast<std::size_t>(bi)].w,
                                            laterals[static_cast<std::size_t>(bi)].b);
      for (int up = 0; up <= bi; ++up) lat = tape.upsample2(lat);
      if (lat.dim(0) != H || lat.dim(1) != W)
        throw OpError("rnf: pyramid level " + std::to_string(bi) + " does not restore input resolution");
      pyramid.push_back(lat);
    }
    Tensor<T> cat = tape.concat(pyramid, 2);
    return tape.pointwise_linear(cat, fuse.w, fuse.b);
  }
};

}  // namespace lldn
