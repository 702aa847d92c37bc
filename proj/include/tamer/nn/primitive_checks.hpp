#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "tamer/nn/gradcheck.hpp"
#include "tamer/nn/ops.hpp"
#include "tamer/rng.hpp"

namespace tamer::nn {

/// A scalar objective over named parameters, ready for `gradcheck`.
struct GradCheckCase {
  std::string name;
  std::function<Tensor()> objective;
  std::vector<NamedTensor> params;
};

namespace detail {

// Inputs are kept away from 0 so ReLU kinks sit far outside +-eps.
inline Tensor random_param(Rng& rng, Shape shape, double lo = -1.0, double hi = 1.0, double min_abs = 0.0) {
  std::vector<double> v(numel(shape));
  for (auto& x : v) {
    do {
      x = rng.uniform(lo, hi);
    } while (std::abs(x) < min_abs);
  }
  return Tensor::parameter(std::move(shape), std::move(v));
}

inline Tensor random_const(Rng& rng, Shape shape) {
  std::vector<double> v(numel(shape));
  for (auto& x : v) x = rng.uniform(-1.0, 1.0);
  return Tensor::from(std::move(shape), std::move(v));
}

// Scalar read-out sum_i w_i * y_i with fixed random w, so every output
// element reaches the loss with a distinct weight.
inline Tensor project(const Tensor& y, const Tensor& weights) {
  return sum(matmul(reshape(y, {1, y.numel()}), weights));
}

}  // namespace detail

/// One case per primitive op, each checked through a random linear read-out.
inline std::vector<GradCheckCase> primitive_cases(std::uint64_t seed) {
  Rng rng(seed, "gradcheck.primitives");
  std::vector<GradCheckCase> cases;
  auto readout = [&](std::size_t n) { return detail::random_const(rng, {n, 1}); };

  {
    Tensor a = detail::random_param(rng, {3, 4});
    Tensor b = detail::random_param(rng, {4, 2});
    Tensor w = readout(6);
    cases.push_back({"matmul", [=] { return detail::project(matmul(a, b), w); }, {{"a", a}, {"b", b}}});
  }
  {
    Tensor a = detail::random_param(rng, {2, 3, 4});
    Tensor b = detail::random_param(rng, {2, 4, 2});
    Tensor w = readout(12);
    cases.push_back({"matmul_batched", [=] { return detail::project(matmul(a, b), w); }, {{"a", a}, {"b", b}}});
  }
  {
    Tensor a = detail::random_param(rng, {2, 3, 4});
    Tensor b = detail::random_param(rng, {4});
    Tensor c = detail::random_param(rng, {2, 1, 4});
    Tensor d = detail::random_param(rng, {1, 3, 1});
    Tensor w = readout(24);
    cases.push_back({"add_broadcast",
                     [=] { return detail::project(add(add(a, b), add(c, d)), w); },
                     {{"a", a}, {"b", b}, {"c", c}, {"d", d}}});
  }
  {
    Tensor x = detail::random_param(rng, {3, 5}, -1.0, 1.0, 0.05);
    Tensor w = readout(15);
    cases.push_back({"relu", [=] { return detail::project(relu(x), w); }, {{"x", x}}});
  }
  {
    Tensor x = detail::random_param(rng, {2, 3, 4}, -2.0, 2.0);
    Tensor w = readout(24);
    cases.push_back({"softmax_axis1", [=] { return detail::project(softmax(x, 1), w); }, {{"x", x}}});
  }
  {
    Tensor x = detail::random_param(rng, {3, 5}, -2.0, 2.0);
    Tensor w = readout(15);
    cases.push_back({"log_softmax", [=] { return detail::project(log_softmax(x, -1), w); }, {{"x", x}}});
  }
  {
    Tensor x = detail::random_param(rng, {3, 6}, -2.0, 2.0);
    Tensor g = detail::random_param(rng, {6}, 0.5, 1.5);
    Tensor b = detail::random_param(rng, {6});
    Tensor w = readout(18);
    cases.push_back({"layer_norm", [=] { return detail::project(layer_norm(x, g, b), w); },
                     {{"x", x}, {"gamma", g}, {"beta", b}}});
  }
  {
    Tensor table = detail::random_param(rng, {5, 3});
    std::vector<int> ids{4, 0, 4, 2};
    Tensor w = readout(12);
    cases.push_back({"embedding", [=] { return detail::project(embedding(table, ids, {2, 2}), w); }, {{"table", table}}});
  }
  {
    Tensor x = detail::random_param(rng, {2, 3, 4});
    Tensor w = readout(24);
    cases.push_back({"transpose", [=] { return detail::project(transpose(x, 0, 2), w); }, {{"x", x}}});
  }
  {
    Tensor x = detail::random_param(rng, {2, 3, 4});
    Tensor w = readout(24);
    std::vector<std::uint8_t> mask(24, 0);
    for (std::size_t i = 0; i < mask.size(); i += 3) mask[i] = 1;
    cases.push_back({"masked_fill_softmax",
                     [=] { return detail::project(softmax(masked_fill(x, mask), -1), w); },
                     {{"x", x}}});
  }
  {
    Tensor x = detail::random_param(rng, {4, 3});
    Tensor w = readout(12);
    cases.push_back({"scale_reshape", [=] { return detail::project(reshape(scale(x, -1.7), {2, 6}), w); }, {{"x", x}}});
  }
  {
    Tensor a = detail::random_param(rng, {2, 2, 3});
    Tensor b = detail::random_param(rng, {2, 1, 3});
    Tensor w = readout(18);
    cases.push_back({"concat", [=] { return detail::project(concat({a, b}, 1), w); }, {{"a", a}, {"b", b}}});
  }
  {
    Tensor x = detail::random_param(rng, {3, 4});
    cases.push_back({"mean", [=] { return mean(relu(add(x, Tensor::scalar(2.0)))); }, {{"x", x}}});
  }
  {
    Tensor logits = detail::random_param(rng, {4, 5}, -2.0, 2.0);
    std::vector<int> targets{1, -100, 4, 0};
    cases.push_back({"cross_entropy", [=] { return cross_entropy(logits, targets); }, {{"logits", logits}}});
  }
  return cases;
}

}  // namespace tamer::nn
