#pragma once

#include <cmath>
#include <vector>

#include "lldn/errors.hpp"
#include "lldn/tape.hpp"
#include "lldn/tensor.hpp"

namespace lldn {

// Compares reverse-mode gradients against central finite differences at
// 64-bit precision. `f` must be a pure scalar-valued function of `inputs`,
// evaluated on the tape it is given. Returns the max over all input elements
// of |analytic - fd| / max(|analytic|, |fd|, 1e-8).
template <typename F>
double grad_check(F&& f, std::vector<TensorD> inputs, double h = 1e-5) {
  if (!(h >= 1e-7 && h <= 1e-3)) throw OpError("grad_check: step size out of [1e-7, 1e-3]");

  for (auto& in : inputs) in.clear_grad();  // handles may carry grads from earlier passes

  TapeD tape;
  TensorD loss = f(tape, inputs);
  if (loss.size() != 1) throw OpError("grad_check: function must return a scalar");
  tape.backward(loss);

  std::vector<std::vector<double>> analytic;
  analytic.reserve(inputs.size());
  for (auto& in : inputs)
    analytic.push_back(in.has_grad() ? in.grad() : std::vector<double>(static_cast<std::size_t>(in.size()), 0.0));

  auto eval = [&](const std::vector<TensorD>& xs) {
    TapeD t;
    TensorD out = f(t, xs);
    return out.at(0);
  };

  double max_err = 0.0;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    auto& x = inputs[i];
    x.clear_grad();
    for (std::int64_t j = 0; j < x.size(); ++j) {
      const double orig = x.at(j);
      x.at(j) = orig + h;
      const double fp = eval(inputs);
      x.at(j) = orig - h;
      const double fm = eval(inputs);
      x.at(j) = orig;
      const double fd = (fp - fm) / (2.0 * h);
      const double an = analytic[i][static_cast<std::size_t>(j)];
      const double err = std::abs(an - fd) / std::max({std::abs(an), std::abs(fd), 1e-8});
      max_err = std::max(max_err, err);
    }
  }
  return max_err;
}

}  // namespace lldn
