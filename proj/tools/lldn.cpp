#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <string>

#include "CLI11.hpp"
#include "lldn/lldn.hpp"

namespace fs = std::filesystem;
using namespace lldn;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitNumeric = 4;

void echo_config(const RunConfig& cfg) {
  std::cout << "--- resolved config ---\n" << cfg.to_text() << "-----------------------\n";
}

void cmd_generate(const std::string& out_dir, int frames, std::uint64_t seed,
                  const std::string& profile, int points) {
  if (frames < 0) throw ConfigError("--frames must be non-negative");
  GridSpec grid;  // the desk-scale default profile
  fs::create_directories(fs::path(out_dir) / "frames");
  std::cout << "generate: out=" << out_dir << " frames=" << frames << " seed=" << seed
            << " profile=" << profile << " points=" << points << " grid=" << grid.rows << "x"
            << grid.cols << "\n";

  std::vector<ManifestEntry> manifest;
  std::array<long, kNumConditions> histogram{};
  for (int i = 0; i < frames; ++i) {
    SceneConfig cfg = scheduled_config(profile, i, grid, points, seed);
    std::uint64_t frame_seed = seed + static_cast<std::uint64_t>(i);
    Frame frame = generate_frame(cfg, frame_seed);
    char name[64];
    std::snprintf(name, sizeof name, "frames/frame_%05d.klnf", i);
    write_frame(frame, fs::path(out_dir) / name);
    manifest.push_back({name, frame_seed % 2 == 0});  // split by seed parity
    for (Condition c : frame.tags.list()) ++histogram[static_cast<std::size_t>(static_cast<int>(c))];
  }
  write_manifest(manifest, fs::path(out_dir) / "manifest.txt");

  std::cout << "condition histogram:\n";
  for (int c = 0; c < kNumConditions; ++c)
    std::cout << "  " << condition_name(static_cast<Condition>(c)) << ": "
              << histogram[static_cast<std::size_t>(c)] << "\n";
  long train_n = 0;
  for (const auto& e : manifest) train_n += e.train ? 1 : 0;
  std::cout << "wrote " << frames << " frames (" << train_n << " train, "
            << frames - train_n << " test) to " << out_dir << "\n";
}

void cmd_train(const std::string& config_path, const std::string& data_dir,
               const std::string& out_dir) {
  RunConfig cfg = RunConfig::from_file(config_path);
  cfg.validate();
  echo_config(cfg);
  Dataset ds = load_dataset(data_dir);
  if (ds.train.empty()) throw DataError("no frames tagged 'train' in " + data_dir + "/manifest.txt");
  for (const Frame& f : ds.train)
    if (!(f.label.grid == cfg.grid))
      throw ConfigError("config grid does not match the dataset grid; fix the [grid] section");

  LaneModelF model;
  Rng init_rng(Rng::mix(cfg.seed, 0x494e4954));
  model.init(cfg, init_rng);
  TrainOptions opts;
  opts.out_dir = out_dir;
  TrainResult result = train_model(model, ds, opts, std::cout);
  std::cout << "best f1_conf " << result.best_f1_conf << " at epoch " << result.best_epoch << "\n";
  std::cout << "checkpoints: " << result.best_path.string() << ", " << result.last_path.string()
            << "\nlog: " << result.log_path.string() << "\n";
}

void cmd_eval(const std::string& ckpt_path, bool heuristic, const std::string& data_dir,
              double sigma_conf, int threads, const std::string& out_path) {
  Dataset ds = load_dataset(data_dir);
  if (ds.test.empty()) throw DataError("no frames tagged 'test' in " + data_dir + "/manifest.txt");

  EvalReport report;
  if (heuristic) {
    std::cout << "eval: heuristic baseline, sigma_conf=" << sigma_conf << " threads=" << threads
              << "\n";
    report = evaluate_dataset(ds.test, heuristic_detector(HeuristicConfig{}), sigma_conf, threads);
  } else {
    Checkpoint ckpt = load_checkpoint(ckpt_path);
    echo_config(ckpt.config);  // the checkpoint's config governs the model
    LaneModelF model = model_from_checkpoint(ckpt);
    report = evaluate_dataset(ds.test, model.detector(), sigma_conf, threads);
  }

  std::string csv = report.to_csv();
  std::ofstream os(out_path);
  if (!os) throw DataError("cannot open '" + out_path + "' for writing");
  os << csv;
  os.close();

  // print the total row
  auto pos = csv.rfind("total,");
  std::cout << "report: " << out_path << "\n" << csv.substr(0, csv.find('\n') + 1)
            << csv.substr(pos);
  std::printf("fps: %.2f\n", report.fps);
}

void cmd_infer(const std::string& ckpt_path, const std::string& frame_path,
               const std::string& out_dir) {
  Checkpoint ckpt = load_checkpoint(ckpt_path);
  echo_config(ckpt.config);
  LaneModelF model = model_from_checkpoint(ckpt);
  Frame frame = read_frame(frame_path);
  Detection det = model.detect(frame);
  fs::create_directories(out_dir);

  const GridSpec& g = frame.label.grid;
  write_pgm(det.confidence, g.rows, g.cols, fs::path(out_dir) / "confidence.pgm");
  auto ids = argmax_classes(det.cls_probs, g.rows * g.cols, det.n_cls);
  std::vector<double> cls_gray(ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i)
    cls_gray[i] = static_cast<double>(ids[i]) / static_cast<double>(det.n_cls - 1);
  write_pgm(cls_gray, g.rows, g.cols, fs::path(out_dir) / "classes.pgm");

  auto pred_bin = threshold_confidence(det.confidence, ckpt.config.sigma_conf);
  ConfusionCounts c = confusion_confidence(pred_bin, frame.label.confidence(), g.rows, g.cols);
  std::printf("frame f1_conf %.4f (tp %ld fp %ld fn %ld)\n", f1_from_counts(c), c.tp, c.fp, c.fn);
  std::cout << "wrote " << out_dir << "/confidence.pgm and classes.pgm\n";
}

void cmd_viz(const std::string& ckpt_path, const std::string& frame_path, const std::string& kind,
             int block, int head, int query, const std::string& out_dir) {
  Checkpoint ckpt = load_checkpoint(ckpt_path);
  echo_config(ckpt.config);
  LaneModelF model = model_from_checkpoint(ckpt);
  Frame frame = read_frame(frame_path);
  fs::create_directories(out_dir);

  TapeF tape;
  auto fw = model.forward(tape, frame, true);
  const RunConfig& cfg = ckpt.config;

  if (kind == "heatmap") {
    const auto& acts = cfg.is_gfc() ? fw.gfc_acts.blocks : fw.rnf_acts.blocks;
    if (block < 1 || block > static_cast<int>(acts.size()))
      throw ConfigError("block " + std::to_string(block) + " out of range; valid blocks are 1.." +
                        std::to_string(acts.size()));
    const TensorF& act = acts[static_cast<std::size_t>(block - 1)];
    int channels = std::min(act.dim(2), 8);
    for (int c = 0; c < channels; ++c) {
      char name[64];
      std::snprintf(name, sizeof name, "heatmap_block%d_ch%d.pgm", block, c);
      write_pgm(heatmap_channel(act, c), act.dim(0), act.dim(1), fs::path(out_dir) / name);
    }
    std::cout << "wrote " << channels << " heatmap channel(s) for block " << block << " ("
              << act.dim(0) << "x" << act.dim(1) << ") to " << out_dir << "\n";
  } else if (kind == "attention") {
    if (cfg.backbone != "gfc-t")
      throw ConfigError("attention visualization needs a gfc-t checkpoint; '" + cfg.backbone +
                        "' records no attention scores");
    const auto& records = fw.gfc_acts.attention;
    if (block < 1 || block > static_cast<int>(records.size()))
      throw ConfigError("block " + std::to_string(block) + " out of range; valid blocks are 1.." +
                        std::to_string(records.size()));
    const TensorF& rec = records[static_cast<std::size_t>(block - 1)];
    auto rgb = attention_overlay(rec, head, query, cfg.grid.rows / cfg.patch,
                                 cfg.grid.cols / cfg.patch, frame);
    char name[64];
    std::snprintf(name, sizeof name, "attention_block%d_head%d_query%d.ppm", block, head, query);
    write_ppm(rgb, cfg.grid.rows, cfg.grid.cols, fs::path(out_dir) / name);
    std::cout << "wrote " << (fs::path(out_dir) / name).string() << "\n";
  } else {
    throw ConfigError("unknown viz kind '" + kind + "' (expected heatmap|attention)");
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"lidar lane detection: synthetic BEV scenes, GFC/RNF training, F1 evaluation"};
  app.require_subcommand(1);

  auto* gen = app.add_subcommand("generate", "synthesize a frame dataset with train/test manifest");
  std::string gen_out = "data";
  int gen_frames = 100;
  std::uint64_t gen_seed = 1;
  std::string gen_profile = "default";
  int gen_points = 8192;
  gen->add_option("--out", gen_out, "output directory")->required();
  gen->add_option("--frames", gen_frames, "number of frames")->required();
  gen->add_option("--seed", gen_seed, "dataset seed");
  gen->add_option("--profile", gen_profile, "scene profile: default|straight");
  gen->add_option("--points", gen_points, "points per frame");
  gen->callback([&] { cmd_generate(gen_out, gen_frames, gen_seed, gen_profile, gen_points); });

  auto* train = app.add_subcommand("train", "train a model from a config file");
  std::string train_config, train_data, train_out = "runs";
  train->add_option("--config", train_config, "key=value config file")->required();
  train->add_option("--data", train_data, "dataset directory")->required();
  train->add_option("--out", train_out, "output directory for checkpoints and the log");
  train->callback([&] { cmd_train(train_config, train_data, train_out); });

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint or the heuristic baseline");
  std::string eval_ckpt, eval_data, eval_out = "eval_report.csv";
  bool eval_heuristic = false;
  double eval_sigma = 0.5;
  int eval_threads = 1;
  auto* ckpt_opt = eval->add_option("--checkpoint", eval_ckpt, "checkpoint file");
  auto* heur_opt = eval->add_flag("--heuristic", eval_heuristic, "evaluate the non-learning baseline");
  ckpt_opt->excludes(heur_opt);
  eval->add_option("--data", eval_data, "dataset directory")->required();
  eval->add_option("--sigma-conf", eval_sigma, "confidence threshold");
  eval->add_option("--threads", eval_threads, "worker threads (1 = bitwise reproducible timing-free path)");
  eval->add_option("--out", eval_out, "report CSV path");
  eval->callback([&] {
    if (!eval_heuristic && eval_ckpt.empty())
      throw ConfigError("eval needs --checkpoint FILE or --heuristic");
    cmd_eval(eval_ckpt, eval_heuristic, eval_data, eval_sigma, eval_threads, eval_out);
  });

  auto* infer = app.add_subcommand("infer", "run one frame through a checkpoint");
  std::string infer_ckpt, infer_frame, infer_out = "infer_out";
  infer->add_option("--checkpoint", infer_ckpt, "checkpoint file")->required();
  infer->add_option("--frame", infer_frame, "frame file")->required();
  infer->add_option("--out", infer_out, "output directory")->required();
  infer->callback([&] { cmd_infer(infer_ckpt, infer_frame, infer_out); });

  auto* viz = app.add_subcommand("viz", "render feature heatmaps or attention overlays");
  std::string viz_ckpt, viz_frame, viz_kind = "heatmap", viz_out = "viz_out";
  int viz_block = 1, viz_head = 0, viz_query = 0;
  viz->add_option("--checkpoint", viz_ckpt, "checkpoint file")->required();
  viz->add_option("--frame", viz_frame, "frame file")->required();
  viz->add_option("--kind", viz_kind, "heatmap|attention")->required();
  viz->add_option("--block", viz_block, "backbone block, 1-based");
  viz->add_option("--head", viz_head, "attention head (attention only)");
  viz->add_option("--query", viz_query, "query patch index (attention only)");
  viz->add_option("--out", viz_out, "output directory")->required();
  viz->callback([&] { cmd_viz(viz_ckpt, viz_frame, viz_kind, viz_block, viz_head, viz_query, viz_out); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const OpError& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return kExitNumeric;
  }
  return 0;
}
