#pragma once

#include <atomic>
#include <cmath>
#include <cstdint>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "lldn/errors.hpp"
#include "lldn/rng.hpp"

namespace lldn {

using Shape = std::vector<int>;

inline std::int64_t shape_numel(const Shape& s) {
  std::int64_t n = 1;
  for (int d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << ']';
  return os.str();
}

// Dense row-major tensor with an optional same-shape gradient buffer.
// Copies are shallow handles to shared storage; ops never mutate input data,
// so handles are safe to pass across threads once detached from a live tape.
template <typename T>
class Tensor {
 public:
  Tensor() : s_(std::make_shared<Storage>()) {}

  explicit Tensor(Shape shape) : s_(std::make_shared<Storage>()) {
    for (int d : shape) {
      if (d <= 0) throw OpError("tensor dimension must be positive, got shape " + shape_str(shape));
    }
    s_->shape = std::move(shape);
    s_->data.assign(static_cast<std::size_t>(shape_numel(s_->shape)), T(0));
  }

  Tensor(Shape shape, std::vector<T> values) : Tensor(std::move(shape)) {
    if (values.size() != s_->data.size())
      throw OpError("tensor init: " + std::to_string(values.size()) + " values for shape " + shape_str(s_->shape));
    s_->data = std::move(values);
  }

  static Tensor scalar(T v) { return Tensor(Shape{1}, std::vector<T>{v}); }

  static Tensor full(Shape shape, T v) {
    Tensor t(std::move(shape));
    for (auto& x : t.data()) x = v;
    return t;
  }

  static Tensor uniform(Shape shape, Rng& rng, double lo, double hi) {
    Tensor t(std::move(shape));
    for (auto& x : t.data()) x = static_cast<T>(rng.uniform(lo, hi));
    return t;
  }

  static Tensor normal(Shape shape, Rng& rng, double mean, double sd) {
    Tensor t(std::move(shape));
    for (auto& x : t.data()) x = static_cast<T>(rng.normal(mean, sd));
    return t;
  }

  // Glorot-style uniform init over [-a, a], a = sqrt(6 / (fan_in + fan_out)).
  static Tensor glorot(Shape shape, int fan_in, int fan_out, Rng& rng) {
    double a = std::sqrt(6.0 / (fan_in + fan_out));
    return uniform(std::move(shape), rng, -a, a);
  }

  const Shape& shape() const { return s_->shape; }
  int rank() const { return static_cast<int>(s_->shape.size()); }
  int dim(int i) const { return s_->shape[static_cast<std::size_t>(i)]; }
  std::int64_t size() const { return static_cast<std::int64_t>(s_->data.size()); }
  bool defined() const { return !s_->shape.empty(); }

  std::vector<T>& data() { return s_->data; }
  const std::vector<T>& data() const { return s_->data; }
  T& at(std::int64_t i) { return s_->data[static_cast<std::size_t>(i)]; }
  T at(std::int64_t i) const { return s_->data[static_cast<std::size_t>(i)]; }

  bool has_grad() const { return !s_->grad.empty(); }
  std::vector<T>& grad() {
    if (s_->grad.empty()) throw OpError("tensor has no gradient buffer");
    return s_->grad;
  }
  const std::vector<T>& grad() const {
    if (s_->grad.empty()) throw OpError("tensor has no gradient buffer");
    return s_->grad;
  }
  void ensure_grad() {
    if (s_->grad.empty()) s_->grad.assign(s_->data.size(), T(0));
  }
  void zero_grad() {
    if (!s_->grad.empty()) s_->grad.assign(s_->data.size(), T(0));
  }
  void clear_grad() { s_->grad.clear(); }

  // Identity of the underlying node within a recorded graph.
  std::uint64_t node_id() const { return s_->id; }
  bool same_storage(const Tensor& other) const { return s_ == other.s_; }

  Tensor clone() const {
    Tensor t;
    t.s_->shape = s_->shape;
    t.s_->data = s_->data;
    return t;
  }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> t(s_->shape.empty() ? Shape{} : s_->shape);
    if (!s_->shape.empty())
      for (std::size_t i = 0; i < s_->data.size(); ++i)
        t.data()[i] = static_cast<U>(s_->data[i]);
    return t;
  }

  bool all_finite() const {
    for (T v : s_->data)
      if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }

 private:
  struct Storage {
    Shape shape;
    std::vector<T> data;
    std::vector<T> grad;
    std::uint64_t id = next_id();
  };

  static std::uint64_t next_id() {
    static std::atomic<std::uint64_t> counter{1};
    return counter.fetch_add(1);
  }

  std::shared_ptr<Storage> s_;

  template <typename U>
  friend class Tensor;
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

// (name, tensor) registry used for checkpoints and optimizers; handles share
// storage with the owning module.
template <typename T>
using NamedParams = std::vector<std::pair<std::string, Tensor<T>>>;

}  // namespace lldn
