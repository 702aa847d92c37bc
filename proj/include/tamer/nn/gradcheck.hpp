#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "tamer/nn/ops.hpp"

namespace tamer::nn {

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

struct GradCheckEntry {
  std::string name;
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  double analytic = 0.0;  // at worst_index
  double numeric = 0.0;
  bool pass = true;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double max_rel_error = 0.0;
  double tolerance = 0.0;
  bool pass = true;
};

inline double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
  return std::abs(analytic - numeric) / denom;
}

/// Compares reverse-mode gradients of the scalar `f` against central
/// differences, perturbing every element of every parameter by +-eps.
/// `f` must rebuild its graph from the parameters on each call.
inline GradCheckReport gradcheck(const std::function<Tensor()>& f, std::vector<NamedTensor> params,
                                 double eps = 1e-5, double tol = 1e-4) {
  for (auto& p : params) p.tensor.zero_grad();
  {
    Tape tape;
    Tape::Scope scope(tape);
    Tensor loss = f();
    if (!std::isfinite(loss.item())) fail(ErrorKind::NonFiniteValue, "objective is not finite");
    tape.backward(loss);
  }

  GradCheckReport report;
  report.tolerance = tol;
  for (auto& p : params) {
    GradCheckEntry entry;
    entry.name = p.name;
    std::vector<double> analytic(p.tensor.grad().begin(), p.tensor.grad().end());
    auto values = p.tensor.mutable_data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      if (!std::isfinite(analytic[i])) fail(ErrorKind::NonFiniteValue, p.name + ": analytic gradient is not finite");
      const double saved = values[i];
      values[i] = saved + eps;
      const double up = f().item();
      values[i] = saved - eps;
      const double down = f().item();
      values[i] = saved;
      if (!std::isfinite(up) || !std::isfinite(down))
        fail(ErrorKind::NonFiniteValue, p.name + ": objective is not finite under perturbation");
      const double numeric = (up - down) / (2.0 * eps);
      const double err = relative_error(analytic[i], numeric);
      if (i == 0 || err > entry.max_rel_error) {
        entry.max_rel_error = err;
        entry.worst_index = i;
        entry.analytic = analytic[i];
        entry.numeric = numeric;
      }
    }
    entry.pass = entry.max_rel_error < tol;
    report.max_rel_error = std::max(report.max_rel_error, entry.max_rel_error);
    report.pass = report.pass && entry.pass;
    report.entries.push_back(std::move(entry));
  }
  return report;
}

}  // namespace tamer::nn
