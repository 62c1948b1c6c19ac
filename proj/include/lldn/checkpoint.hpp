#pragma once

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "lldn/adam.hpp"
#include "lldn/errors.hpp"
#include "lldn/frame_io.hpp"
#include "lldn/model.hpp"
#include "lldn/runconfig.hpp"
#include "lldn/tensor.hpp"

namespace lldn {

// Checkpoint file layout (little-endian):
//   magic "LLDN1"
//   u32 config_len; config text = RunConfig text + [state] section
//   u32 tensor_count
//   repeated records, sorted by name:
//     [u16 name_len][name][u8 rank][u32 dims x rank][f32 data]
// Optimizer moments, when present, ride along as "opt.m.<name>" /
// "opt.v.<name>" records.

inline constexpr char kCheckpointMagic[5] = {'L', 'L', 'D', 'N', '1'};

struct Checkpoint {
  RunConfig config;
  int epoch = 0;
  std::int64_t adam_t = 0;
  std::uint64_t rng_key = 0;
  std::uint64_t rng_counter = 0;
  bool has_optimizer = false;
  NamedParams<float> tensors;  // canonical order: sorted by name

  void sort_tensors() {
    std::sort(tensors.begin(), tensors.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });
  }

  const TensorF* find(const std::string& name) const {
    for (const auto& [n, t] : tensors)
      if (n == name) return &t;
    return nullptr;
  }
};

inline std::string checkpoint_to_bytes(const Checkpoint& ckpt) {
  using namespace io_detail;
  Checkpoint sorted = ckpt;
  sorted.sort_tensors();
  std::string out;
  out.append(kCheckpointMagic, 5);
  std::string cfg = sorted.config.to_text();
  cfg += "[state]\n";
  cfg += "epoch = " + std::to_string(sorted.epoch) + "\n";
  cfg += "adam_t = " + std::to_string(sorted.adam_t) + "\n";
  cfg += "rng_key = " + std::to_string(sorted.rng_key) + "\n";
  cfg += "rng_counter = " + std::to_string(sorted.rng_counter) + "\n";
  cfg += "has_optimizer = " + std::string(sorted.has_optimizer ? "1" : "0") + "\n";
  put_u32(out, static_cast<std::uint32_t>(cfg.size()));
  out += cfg;
  put_u32(out, static_cast<std::uint32_t>(sorted.tensors.size()));
  for (const auto& [name, t] : sorted.tensors) {
    put_u16(out, static_cast<std::uint16_t>(name.size()));
    out += name;
    out.push_back(static_cast<char>(t.rank()));
    for (int d : t.shape()) put_u32(out, static_cast<std::uint32_t>(d));
    for (std::int64_t i = 0; i < t.size(); ++i) put_f32(out, t.at(i));
  }
  return out;
}

inline Checkpoint checkpoint_from_bytes(const std::string& buf, const std::string& context) {
  using namespace io_detail;
  if (buf.size() < 5 || std::memcmp(buf.data(), kCheckpointMagic, 5) != 0)
    throw DataError(context + ": bad checkpoint magic '" +
                    buf.substr(0, std::min<std::size_t>(5, buf.size())) + "' (expected LLDN1)");
  Reader rd{buf, 5, context};
  std::uint32_t cfg_len = rd.u32();
  std::string cfg_text = rd.bytes(cfg_len);

  Checkpoint ckpt;
  {
    // peel the [state] section off before parsing the run config
    std::istringstream is(cfg_text);
    std::string line, run_part;
    bool in_state = false;
    while (std::getline(is, line)) {
      if (line == "[state]") {
        in_state = true;
        continue;
      }
      if (!in_state) {
        run_part += line + "\n";
        continue;
      }
      auto eq = line.find('=');
      if (eq == std::string::npos) continue;
      std::string key = line.substr(0, eq);
      std::string val = line.substr(eq + 1);
      auto trim = [](std::string s) {
        auto a = s.find_first_not_of(" \t");
        auto b = s.find_last_not_of(" \t\r");
        return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
      };
      key = trim(key);
      val = trim(val);
      if (key == "epoch") ckpt.epoch = std::stoi(val);
      else if (key == "adam_t") ckpt.adam_t = std::stoll(val);
      else if (key == "rng_key") ckpt.rng_key = std::stoull(val);
      else if (key == "rng_counter") ckpt.rng_counter = std::stoull(val);
      else if (key == "has_optimizer") ckpt.has_optimizer = val != "0";
      else throw DataError(context + ": unknown state key '" + key + "'");
    }
    ckpt.config = RunConfig::from_text(run_part);
  }

  std::uint32_t count = rd.u32();
  ckpt.tensors.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    std::uint16_t name_len = rd.u16();
    std::string name = rd.bytes(name_len);
    rd.need(1);
    int rank = static_cast<std::uint8_t>(buf[rd.pos++]);
    Shape shape;
    std::int64_t numel = 1;
    for (int d = 0; d < rank; ++d) {
      shape.push_back(static_cast<int>(rd.u32()));
      numel *= shape.back();
    }
    if (numel < 0 || numel > (1 << 28)) throw DataError(context + ": implausible tensor size");
    TensorF t(shape);
    for (std::int64_t j = 0; j < numel; ++j) t.at(j) = rd.f32();
    ckpt.tensors.emplace_back(std::move(name), std::move(t));
  }
  return ckpt;
}

inline void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open '" + path.string() + "' for writing");
  std::string bytes = checkpoint_to_bytes(ckpt);
  os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw DataError("write failed for '" + path.string() + "'");
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open checkpoint '" + path.string() + "'");
  std::ostringstream ss;
  ss << is.rdbuf();
  return checkpoint_from_bytes(ss.str(), path.string());
}

// Captures a model's weights (and optionally optimizer moments) into a
// checkpoint / restores them. Tensor names must match the model exactly.
template <typename T>
Checkpoint snapshot_model(LaneModel<T>& model, int epoch, Adam<T>* opt, std::uint64_t rng_key,
                          std::uint64_t rng_counter) {
  Checkpoint ckpt;
  ckpt.config = model.cfg;
  ckpt.epoch = epoch;
  ckpt.rng_key = rng_key;
  ckpt.rng_counter = rng_counter;
  NamedParams<T> params = model.named_params();
  for (auto& [name, t] : params) ckpt.tensors.emplace_back(name, t.template cast<float>());
  if (opt) {
    ckpt.has_optimizer = true;
    ckpt.adam_t = opt->step_count();
    for (std::size_t i = 0; i < params.size(); ++i) {
      TensorF m(params[i].second.shape()), v(params[i].second.shape());
      for (std::int64_t j = 0; j < m.size(); ++j) {
        m.at(j) = static_cast<float>(opt->moment1(i)[static_cast<std::size_t>(j)]);
        v.at(j) = static_cast<float>(opt->moment2(i)[static_cast<std::size_t>(j)]);
      }
      ckpt.tensors.emplace_back("opt.m." + params[i].first, std::move(m));
      ckpt.tensors.emplace_back("opt.v." + params[i].first, std::move(v));
    }
  }
  ckpt.sort_tensors();
  return ckpt;
}

template <typename T>
void restore_model(LaneModel<T>& model, const Checkpoint& ckpt) {
  NamedParams<T> params = model.named_params();
  for (auto& [name, t] : params) {
    const TensorF* src = ckpt.find(name);
    if (!src) throw DataError("checkpoint is missing tensor '" + name + "'");
    if (src->shape() != t.shape())
      throw DataError("checkpoint tensor '" + name + "' has shape " + shape_str(src->shape()) +
                      ", model expects " + shape_str(t.shape()));
    for (std::int64_t i = 0; i < t.size(); ++i) t.at(i) = static_cast<T>(src->at(i));
  }
}

// Builds the model a checkpoint describes and loads its weights.
inline LaneModelF model_from_checkpoint(const Checkpoint& ckpt) {
  LaneModelF model;
  Rng rng(0);  // weights are overwritten right away
  model.init(ckpt.config, rng);
  restore_model(model, ckpt);
  return model;
}

}  // namespace lldn
