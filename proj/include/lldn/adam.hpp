#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "lldn/errors.hpp"
#include "lldn/tensor.hpp"

namespace lldn {

struct AdamConfig {
  double lr = 2e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Adam with bias correction over a fixed parameter list. Per-parameter
// moments are kept in step with the parameter shapes; gradients are consumed
// and cleared by each step.
template <typename T>
class Adam {
 public:
  Adam(std::vector<Tensor<T>> params, AdamConfig cfg = {})
      : params_(std::move(params)), cfg_(cfg) {
    m_.reserve(params_.size());
    v_.reserve(params_.size());
    for (const auto& p : params_) {
      m_.emplace_back(std::vector<double>(static_cast<std::size_t>(p.size()), 0.0));
      v_.emplace_back(std::vector<double>(static_cast<std::size_t>(p.size()), 0.0));
      shapes_.push_back(p.shape());
    }
  }

  std::int64_t step_count() const { return t_; }
  const AdamConfig& config() const { return cfg_; }
  std::size_t num_params() const { return params_.size(); }

  std::vector<double>& moment1(std::size_t i) { return m_[i]; }
  std::vector<double>& moment2(std::size_t i) { return v_[i]; }
  void set_step_count(std::int64_t t) { t_ = t; }

  void step() {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
      auto& p = params_[i];
      if (p.shape() != shapes_[i])
        throw OpError("adam: parameter " + std::to_string(i) + " changed shape between steps");
      if (!p.has_grad())
        throw OpError("adam: parameter " + std::to_string(i) + " has no gradient");
      auto& m = m_[i];
      auto& v = v_[i];
      for (std::int64_t j = 0; j < p.size(); ++j) {
        const double g = static_cast<double>(p.grad()[static_cast<std::size_t>(j)]);
        m[static_cast<std::size_t>(j)] = cfg_.beta1 * m[static_cast<std::size_t>(j)] + (1.0 - cfg_.beta1) * g;
        v[static_cast<std::size_t>(j)] = cfg_.beta2 * v[static_cast<std::size_t>(j)] + (1.0 - cfg_.beta2) * g * g;
        const double mhat = m[static_cast<std::size_t>(j)] / bc1;
        const double vhat = v[static_cast<std::size_t>(j)] / bc2;
        p.at(j) -= static_cast<T>(cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps));
      }
      p.clear_grad();
    }
  }

 private:
  std::vector<Tensor<T>> params_;
  std::vector<Shape> shapes_;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
  AdamConfig cfg_;
  std::int64_t t_ = 0;
};

}  // namespace lldn
