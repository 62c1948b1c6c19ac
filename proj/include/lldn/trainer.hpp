#pragma once

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <string>
#include <vector>

#include "lldn/adam.hpp"
#include "lldn/checkpoint.hpp"
#include "lldn/frame_io.hpp"
#include "lldn/metrics.hpp"
#include "lldn/model.hpp"

namespace lldn {

struct TrainOptions {
  std::filesystem::path out_dir = "runs";
  double stop_at_f1 = 0.0;  // early stop once held-out F1_conf reaches this (0 = never)
  bool quiet = false;
};

struct TrainResult {
  std::filesystem::path best_path, last_path, log_path;
  double best_f1_conf = 0.0;
  int best_epoch = -1;
  int epochs_run = 0;
  std::vector<double> epoch_losses;
};

// Mini-batch training over the manifest's train split with per-epoch
// evaluation on the test split. Single-threaded and bitwise deterministic in
// (config, dataset). The log CSV carries a wall-clock column; everything
// else in it is deterministic.
template <typename T>
TrainResult train_model(LaneModel<T>& model, const Dataset& ds, const TrainOptions& opts,
                        std::ostream& log_stream) {
  const RunConfig& cfg = model.cfg;
  if (ds.train.empty()) throw DataError("training split is empty");
  std::filesystem::create_directories(opts.out_dir);

  NamedParams<T> params = model.named_params();
  std::vector<Tensor<T>> tensors;
  for (auto& [name, t] : params) tensors.push_back(t);
  Adam<T> opt(tensors, {.lr = cfg.lr});
  Rng shuffle_rng(Rng::mix(cfg.seed, 0x53485546));

  TrainResult result;
  result.log_path = opts.out_dir / "train_log.csv";
  result.best_path = opts.out_dir / "best.ckpt";
  result.last_path = opts.out_dir / "last.ckpt";
  std::ofstream log(result.log_path);
  if (!log) throw DataError("cannot open '" + result.log_path.string() + "' for writing");
  log << "epoch,loss,f1_conf,f1_cls,seconds\n";

  std::vector<std::size_t> order(ds.train.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    auto t0 = std::chrono::steady_clock::now();
    shuffle_rng.shuffle(order.begin(), order.end());
    double loss_sum = 0.0;
    long batches = 0;
    Tape<T> tape;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch)) {
      std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch));
      Tensor<T> batch_loss;
      for (std::size_t i = start; i < end; ++i) {
        const Frame& frame = ds.train[order[i]];
        auto fw = model.forward(tape, frame, false);
        auto fl = segmentation_loss(tape, fw.out, frame.label.cells, cfg.grid.rows, cfg.grid.cols);
        batch_loss = batch_loss.defined() ? tape.add(batch_loss, fl.total) : fl.total;
      }
      Tensor<T> mean_loss = tape.scale(batch_loss, static_cast<T>(1.0 / static_cast<double>(end - start)));
      double lv = static_cast<double>(mean_loss.at(0));
      if (!std::isfinite(lv)) throw NumericError("non-finite training loss at epoch " + std::to_string(epoch));
      loss_sum += lv;
      ++batches;
      tape.backward(mean_loss);
      opt.step();
      tape.reset();
    }
    double mean_epoch_loss = batches > 0 ? loss_sum / static_cast<double>(batches) : 0.0;
    result.epoch_losses.push_back(mean_epoch_loss);

    double f1c = 0.0, f1k = 0.0;
    if (!ds.test.empty()) {
      EvalReport report = evaluate_dataset(ds.test, model.detector(), cfg.sigma_conf, 1);
      f1c = f1_from_counts(report.total.conf);
      f1k = f1_from_counts(report.total.cls);
    }
    double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    char line[160];
    std::snprintf(line, sizeof line, "%d,%.6f,%.6f,%.6f,%.3f", epoch, mean_epoch_loss, f1c, f1k, secs);
    log << line << "\n";
    log.flush();
    if (!opts.quiet) log_stream << "epoch " << line << "\n";

    result.epochs_run = epoch;
    if (f1c > result.best_f1_conf || result.best_epoch < 0) {
      result.best_f1_conf = f1c;
      result.best_epoch = epoch;
      save_checkpoint(snapshot_model<T>(model, epoch, nullptr, cfg.seed, 0), result.best_path);
    }
    if (opts.stop_at_f1 > 0.0 && f1c >= opts.stop_at_f1) break;
  }
  save_checkpoint(snapshot_model(model, result.epochs_run, &opt, cfg.seed, 0), result.last_path);
  return result;
}

}  // namespace lldn
