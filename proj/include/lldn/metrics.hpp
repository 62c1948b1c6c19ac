#pragma once

#include <array>
#include <chrono>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "lldn/errors.hpp"
#include "lldn/scene.hpp"

namespace lldn {

struct ConfusionCounts {
  long tp = 0, fp = 0, fn = 0;

  ConfusionCounts& operator+=(const ConfusionCounts& o) {
    tp += o.tp;
    fp += o.fp;
    fn += o.fn;
    return *this;
  }
  bool operator==(const ConfusionCounts&) const = default;
};

// strict threshold: positive iff conf > sigma
inline std::vector<std::uint8_t> threshold_confidence(const std::vector<double>& conf, double sigma) {
  std::vector<std::uint8_t> out(conf.size());
  for (std::size_t i = 0; i < conf.size(); ++i) out[i] = conf[i] > sigma ? 1 : 0;
  return out;
}

// One-cell-tolerant matching: a positive prediction is TP if any positive
// label sits in its 3x3 neighborhood (clipped at borders), else FP; a
// positive label with no positive prediction in its neighborhood is FN.
inline ConfusionCounts confusion_confidence(const std::vector<std::uint8_t>& pred,
                                            const std::vector<std::uint8_t>& label, int rows, int cols) {
  if (pred.size() != label.size() || pred.size() != static_cast<std::size_t>(rows) * cols)
    throw OpError("confusion: map sizes disagree");
  auto any_near = [&](const std::vector<std::uint8_t>& m, int r, int c) {
    for (int dr = -1; dr <= 1; ++dr)
      for (int dc = -1; dc <= 1; ++dc) {
        int rr = r + dr, cc = c + dc;
        if (rr < 0 || rr >= rows || cc < 0 || cc >= cols) continue;
        if (m[static_cast<std::size_t>(rr) * cols + cc]) return true;
      }
    return false;
  };
  ConfusionCounts out;
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) {
      std::size_t i = static_cast<std::size_t>(r) * cols + c;
      if (pred[i]) {
        if (any_near(label, r, c))
          ++out.tp;
        else
          ++out.fp;
      }
      if (label[i] && !any_near(pred, r, c)) ++out.fn;
    }
  return out;
}

// argmax per grid with ties toward the smaller class index
inline std::vector<std::uint8_t> argmax_classes(const std::vector<double>& probs, int n_grids, int n_cls) {
  std::vector<std::uint8_t> out(static_cast<std::size_t>(n_grids));
  for (int g = 0; g < n_grids; ++g) {
    int best = 0;
    double bv = probs[static_cast<std::size_t>(g) * n_cls];
    for (int k = 1; k < n_cls; ++k) {
      double v = probs[static_cast<std::size_t>(g) * n_cls + k];
      if (v > bv) {
        bv = v;
        best = k;
      }
    }
    out[static_cast<std::size_t>(g)] = static_cast<std::uint8_t>(best);
  }
  return out;
}

// One-hot class matching: the neighborhood rule applied per lane class
// (1..n_cls-1), counts summed over classes. Background argmax is a
// non-prediction.
inline ConfusionCounts confusion_classification(const std::vector<double>& cls_probs,
                                                const std::vector<std::uint8_t>& cls_label, int rows,
                                                int cols, int n_cls) {
  if (cls_probs.size() != static_cast<std::size_t>(rows) * cols * n_cls)
    throw OpError("confusion: classification map size disagrees with grid");
  std::vector<std::uint8_t> pred_ids = argmax_classes(cls_probs, rows * cols, n_cls);
  ConfusionCounts out;
  std::vector<std::uint8_t> p(static_cast<std::size_t>(rows) * cols), l(p.size());
  for (int k = 1; k < n_cls; ++k) {
    for (std::size_t i = 0; i < p.size(); ++i) {
      p[i] = pred_ids[i] == k ? 1 : 0;
      l[i] = cls_label[i] == k ? 1 : 0;
    }
    out += confusion_confidence(p, l, rows, cols);
  }
  return out;
}

// F1 = TP / (TP + 0.5 (FP + FN)); all-empty counts score 1.0 so background
// frames do not zero a slice.
inline double f1_from_counts(const ConfusionCounts& c) {
  if (c.tp == 0 && c.fp == 0 && c.fn == 0) return 1.0;
  return static_cast<double>(c.tp) / (static_cast<double>(c.tp) + 0.5 * static_cast<double>(c.fp + c.fn));
}

// ---- dataset evaluation -----------------------------------------------------

// What a detector produces for one frame; classification is optional (the
// heuristic baseline has none).
struct Detection {
  std::vector<double> confidence;         // rows*cols
  std::vector<double> cls_probs;          // rows*cols*n_cls, empty if n/a
  int n_cls = 0;
};

using Detector = std::function<Detection(const Frame&)>;

struct SliceCounts {
  ConfusionCounts conf, cls;
  long frames = 0;

  SliceCounts& operator+=(const SliceCounts& o) {
    conf += o.conf;
    cls += o.cls;
    frames += o.frames;
    return *this;
  }
};

struct EvalReport {
  std::array<SliceCounts, kNumConditions> slices{};
  SliceCounts total;
  bool has_cls = true;
  double fps = 0.0;  // measured, reported outside the CSV

  std::string to_csv() const {
    std::string out = "slice,frames,tp_conf,fp_conf,fn_conf,f1_conf,tp_cls,fp_cls,fn_cls,f1_cls\n";
    auto row = [&](const std::string& name, const SliceCounts& s) {
      char buf[256];
      if (has_cls)
        std::snprintf(buf, sizeof buf, "%s,%ld,%ld,%ld,%ld,%.6f,%ld,%ld,%ld,%.6f\n", name.c_str(),
                      s.frames, s.conf.tp, s.conf.fp, s.conf.fn, f1_from_counts(s.conf), s.cls.tp,
                      s.cls.fp, s.cls.fn, f1_from_counts(s.cls));
      else
        std::snprintf(buf, sizeof buf, "%s,%ld,%ld,%ld,%ld,%.6f,0,0,0,n/a\n", name.c_str(), s.frames,
                      s.conf.tp, s.conf.fp, s.conf.fn, f1_from_counts(s.conf));
      out += buf;
    };
    for (int i = 0; i < kNumConditions; ++i)
      row(condition_name(static_cast<Condition>(i)), slices[static_cast<std::size_t>(i)]);
    row("total", total);
    return out;
  }

  double f1_conf(Condition c) const { return f1_from_counts(slices[static_cast<std::size_t>(static_cast<int>(c))].conf); }
  double f1_cls(Condition c) const { return f1_from_counts(slices[static_cast<std::size_t>(static_cast<int>(c))].cls); }
};

// Per-frame confusion, accumulated per condition slice and overall; F1 is
// computed from the aggregated counts (not averaged per frame). Work is
// split over `threads` workers; integer-count merging is order-independent,
// so any thread count yields the identical report.
inline EvalReport evaluate_dataset(const std::vector<Frame>& frames, const Detector& detector,
                                   double sigma_conf, int threads = 1) {
  if (!(sigma_conf > 0.0 && sigma_conf < 1.0)) throw ConfigError("sigma_conf must be in (0,1)");
  EvalReport report;
  if (frames.empty()) return report;
  const GridSpec grid = frames[0].label.grid;
  for (const Frame& f : frames)
    if (!(f.label.grid == grid)) throw DataError("evaluate: frames use different grids");

  struct FrameResult {
    ConfusionCounts conf, cls;
    std::uint16_t tags = 0;
    bool has_cls = false;
  };
  std::vector<FrameResult> results(frames.size());

  auto worker = [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      const Frame& f = frames[i];
      Detection det = detector(f);
      if (det.confidence.size() != f.label.cells.size())
        throw DataError("detector returned a confidence map of the wrong size");
      FrameResult& r = results[i];
      auto pred_bin = threshold_confidence(det.confidence, sigma_conf);
      r.conf = confusion_confidence(pred_bin, f.label.confidence(), grid.rows, grid.cols);
      if (!det.cls_probs.empty()) {
        r.cls = confusion_classification(det.cls_probs, f.label.cells, grid.rows, grid.cols, det.n_cls);
        r.has_cls = true;
      }
      r.tags = f.tags.bits;
    }
  };

  auto start = std::chrono::steady_clock::now();
  threads = std::max(1, threads);
  if (threads == 1) {
    worker(0, frames.size());
  } else {
    std::vector<std::thread> pool;
    std::size_t chunk = (frames.size() + static_cast<std::size_t>(threads) - 1) / static_cast<std::size_t>(threads);
    for (int t = 0; t < threads; ++t) {
      std::size_t b = static_cast<std::size_t>(t) * chunk;
      std::size_t e = std::min(frames.size(), b + chunk);
      if (b >= e) break;
      pool.emplace_back(worker, b, e);
    }
    for (auto& th : pool) th.join();
  }
  double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  report.fps = secs > 0 ? static_cast<double>(frames.size()) / secs : 0.0;

  report.has_cls = true;
  for (const FrameResult& r : results) {
    if (!r.has_cls) report.has_cls = false;
    SliceCounts one;
    one.conf = r.conf;
    one.cls = r.cls;
    one.frames = 1;
    report.total += one;
    for (int c = 0; c < kNumConditions; ++c)
      if ((r.tags >> c) & 1u) report.slices[static_cast<std::size_t>(c)] += one;
  }
  return report;
}

// Oracle detector: feeds the ground-truth label back as a prediction.
inline Detector perfect_detector(int n_cls = 7) {
  return [n_cls](const Frame& f) {
    Detection det;
    det.n_cls = n_cls;
    det.confidence.assign(f.label.cells.size(), 0.0);
    det.cls_probs.assign(f.label.cells.size() * static_cast<std::size_t>(n_cls), 0.0);
    for (std::size_t i = 0; i < f.label.cells.size(); ++i) {
      det.confidence[i] = f.label.cells[i] > 0 ? 1.0 : 0.0;
      det.cls_probs[i * static_cast<std::size_t>(n_cls) + f.label.cells[i]] = 1.0;
    }
    return det;
  };
}

}  // namespace lldn
