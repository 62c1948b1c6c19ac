#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "lldn/errors.hpp"
#include "lldn/frame_io.hpp"
#include "lldn/grid.hpp"

namespace lldn {

// Fully-resolved run configuration: model spec, grid profile, and training
// hyperparameters. Serializes to the documented key=value text with section
// headers; unknown keys are errors.
struct RunConfig {
  // [model]
  std::string encoder = "pillars";   // pillars | projector
  std::string backbone = "gfc-m";    // gfc-t | gfc-m | rnf-s | rnf-d
  int depth = 5;
  int patch = 8;
  int hidden = 128;
  int heads = 4;
  int mlp_ratio = 2;
  int c_bev = 64;
  int c_out = 64;
  int n_cls = 7;
  int n_p = 16;
  // [grid]
  GridSpec grid;
  // [train]
  int epochs = 60;
  int batch = 4;
  double lr = 2e-4;
  std::uint64_t seed = 1;
  double sigma_conf = 0.5;

  bool is_gfc() const { return backbone == "gfc-t" || backbone == "gfc-m"; }

  void validate() const {
    grid.validate();
    if (encoder != "pillars" && encoder != "projector")
      throw ConfigError("unknown encoder '" + encoder + "' (expected pillars|projector)");
    if (backbone != "gfc-t" && backbone != "gfc-m" && backbone != "rnf-s" && backbone != "rnf-d")
      throw ConfigError("unknown backbone '" + backbone + "' (expected gfc-t|gfc-m|rnf-s|rnf-d)");
    if (depth < 0 || patch <= 0 || hidden <= 0 || heads <= 0 || mlp_ratio <= 0 || c_bev <= 0 ||
        c_out <= 0 || n_cls < 2 || n_p < 1)
      throw ConfigError("model dimensions must be positive");
    if (epochs < 0 || batch < 1 || lr < 0.0) throw ConfigError("invalid training hyperparameters");
    if (!(sigma_conf > 0.0 && sigma_conf < 1.0)) throw ConfigError("sigma_conf must be in (0,1)");
    if (is_gfc()) {
      if (grid.rows % patch != 0 || grid.cols % patch != 0)
        throw ConfigError("grid " + std::to_string(grid.rows) + "x" + std::to_string(grid.cols) +
                          " not divisible by patch " + std::to_string(patch));
      if (hidden % (patch * patch) != 0)
        throw ConfigError("hidden dim " + std::to_string(hidden) + " not divisible by patch area");
      if (backbone == "gfc-t" && hidden % heads != 0)
        throw ConfigError("hidden dim not divisible by head count");
    } else {
      if (grid.rows % 32 != 0 || grid.cols % 32 != 0)
        throw ConfigError("rnf backbones need grid dims divisible by 32");
    }
  }

  // The paper-named model presets, at desk-scale widths.
  static RunConfig preset(const std::string& name) {
    RunConfig cfg;
    if (name == "proj28-gfc-t3") {
      cfg.encoder = "projector";
      cfg.backbone = "gfc-t";
      cfg.depth = 3;
      cfg.hidden = 128;
    } else if (name == "pillars-gfc-m5") {
      cfg.encoder = "pillars";
      cfg.backbone = "gfc-m";
      cfg.depth = 5;
      cfg.hidden = 128;
    } else if (name == "proj28-rnf-s13") {
      cfg.encoder = "projector";
      cfg.backbone = "rnf-s";
      cfg.depth = 5;
    } else {
      throw ConfigError("unknown preset '" + name +
                        "' (expected proj28-gfc-t3|pillars-gfc-m5|proj28-rnf-s13)");
    }
    return cfg;
  }

  std::string to_text() const {
    using io_detail::fmt_double;
    std::ostringstream os;
    os << "[model]\n";
    os << "encoder = " << encoder << "\n";
    os << "backbone = " << backbone << "\n";
    os << "depth = " << depth << "\n";
    os << "patch = " << patch << "\n";
    os << "hidden = " << hidden << "\n";
    os << "heads = " << heads << "\n";
    os << "mlp_ratio = " << mlp_ratio << "\n";
    os << "c_bev = " << c_bev << "\n";
    os << "c_out = " << c_out << "\n";
    os << "n_cls = " << n_cls << "\n";
    os << "n_p = " << n_p << "\n";
    os << "[grid]\n";
    os << "rows = " << grid.rows << "\n";
    os << "cols = " << grid.cols << "\n";
    os << "cell_dx = " << fmt_double(grid.cell_dx) << "\n";
    os << "cell_dy = " << fmt_double(grid.cell_dy) << "\n";
    os << "x0 = " << fmt_double(grid.x0) << "\n";
    os << "y0 = " << fmt_double(grid.y0) << "\n";
    os << "[train]\n";
    os << "epochs = " << epochs << "\n";
    os << "batch = " << batch << "\n";
    os << "lr = " << fmt_double(lr) << "\n";
    os << "seed = " << seed << "\n";
    os << "sigma_conf = " << fmt_double(sigma_conf) << "\n";
    return os.str();
  }

  static RunConfig from_text(const std::string& text) {
    RunConfig cfg;
    // a preset key rebases the defaults before other keys apply
    {
      std::istringstream pre(text);
      std::string line;
      while (std::getline(pre, line)) {
        auto [key, value] = split_kv(line);
        if (key == "preset") cfg = preset(value);
      }
    }
    std::istringstream is(text);
    std::string line, section;
    int line_no = 0;
    while (std::getline(is, line)) {
      ++line_no;
      std::string t = trim(line);
      if (t.empty() || t[0] == '#') continue;
      if (t.front() == '[' && t.back() == ']') {
        section = t.substr(1, t.size() - 2);
        if (section != "model" && section != "grid" && section != "train")
          throw ConfigError("config line " + std::to_string(line_no) + ": unknown section [" + section + "]");
        continue;
      }
      auto [key, value] = split_kv(t);
      if (key.empty()) throw ConfigError("config line " + std::to_string(line_no) + ": expected key = value");
      if (!apply_key(cfg, section, key, value))
        throw ConfigError("config line " + std::to_string(line_no) + ": unknown key '" + key + "'" +
                          (section.empty() ? "" : " in section [" + section + "]"));
    }
    return cfg;
  }

  static RunConfig from_file(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot open config file '" + path.string() + "'");
    std::ostringstream ss;
    ss << is.rdbuf();
    return from_text(ss.str());
  }

 private:
  static std::string trim(const std::string& s) {
    auto a = s.find_first_not_of(" \t\r");
    auto b = s.find_last_not_of(" \t\r");
    return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
  }

  static std::pair<std::string, std::string> split_kv(const std::string& line) {
    auto eq = line.find('=');
    if (eq == std::string::npos) return {"", ""};
    return {trim(line.substr(0, eq)), trim(line.substr(eq + 1))};
  }

  static bool apply_key(RunConfig& cfg, const std::string& section, const std::string& key,
                        const std::string& value) {
    try {
      if (section.empty() || section == "model") {
        if (key == "preset") return true;  // handled in the first pass
        if (key == "encoder") return cfg.encoder = value, true;
        if (key == "backbone") return cfg.backbone = value, true;
        if (key == "depth") return cfg.depth = std::stoi(value), true;
        if (key == "patch") return cfg.patch = std::stoi(value), true;
        if (key == "hidden") return cfg.hidden = std::stoi(value), true;
        if (key == "heads") return cfg.heads = std::stoi(value), true;
        if (key == "mlp_ratio") return cfg.mlp_ratio = std::stoi(value), true;
        if (key == "c_bev") return cfg.c_bev = std::stoi(value), true;
        if (key == "c_out") return cfg.c_out = std::stoi(value), true;
        if (key == "n_cls") return cfg.n_cls = std::stoi(value), true;
        if (key == "n_p") return cfg.n_p = std::stoi(value), true;
        if (!section.empty()) return false;
      }
      if (section == "grid") {
        if (key == "rows") return cfg.grid.rows = std::stoi(value), true;
        if (key == "cols") return cfg.grid.cols = std::stoi(value), true;
        if (key == "cell_dx") return cfg.grid.cell_dx = std::stod(value), true;
        if (key == "cell_dy") return cfg.grid.cell_dy = std::stod(value), true;
        if (key == "x0") return cfg.grid.x0 = std::stod(value), true;
        if (key == "y0") return cfg.grid.y0 = std::stod(value), true;
        return false;
      }
      if (section == "train") {
        if (key == "epochs") return cfg.epochs = std::stoi(value), true;
        if (key == "batch") return cfg.batch = std::stoi(value), true;
        if (key == "lr") return cfg.lr = std::stod(value), true;
        if (key == "seed") return cfg.seed = std::stoull(value), true;
        if (key == "sigma_conf") return cfg.sigma_conf = std::stod(value), true;
        return false;
      }
    } catch (const std::exception&) {
      throw ConfigError("config: cannot parse value '" + value + "' for key '" + key + "'");
    }
    return section.empty() ? false : true;
  }
};

}  // namespace lldn
