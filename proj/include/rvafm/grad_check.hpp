#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "rvafm/autodiff.hpp"
#include "rvafm/tensor.hpp"

namespace rvafm {

struct GradCheckEntry {
  std::string name;
  double max_rel_error = 0.0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> params;
  double max_rel_error = 0.0;
  double tolerance = 0.0;
  bool pass = false;
};

/// Max elementwise |a-b| / max(|a|, |b|, 1). The floor keeps near-zero
/// gradients on an absolute criterion instead of dividing by noise.
inline double max_relative_error(const Tensor<double>& a, const Tensor<double>& b) {
  double worst = 0.0;
  for (long i = 0; i < a.size(); ++i) {
    const double x = a.data()[i], y = b.data()[i];
    const double denom = std::max({std::abs(x), std::abs(y), 1.0});
    worst = std::max(worst, std::abs(x - y) / denom);
  }
  return worst;
}

/// BuildFn: Tensor<double> f(Graph<double>&, const std::vector<Tensor<double>>&)
/// where the callee attaches the given parameters as leaves and returns a
/// scalar loss built on the graph.
template <typename BuildFn>
std::vector<Tensor<double>> autodiff_gradients(BuildFn&& build,
                                               const std::vector<Tensor<double>>& params) {
  Graph<double> g;
  std::vector<Tensor<double>> leaves;
  leaves.reserve(params.size());
  for (const auto& p : params) leaves.push_back(g.leaf(p));
  Tensor<double> loss = build(g, leaves);
  g.backward(loss);
  std::vector<Tensor<double>> grads;
  grads.reserve(leaves.size());
  for (const auto& l : leaves) grads.push_back(g.grad(l));
  return grads;
}

template <typename BuildFn>
double forward_value(BuildFn&& build, const std::vector<Tensor<double>>& params) {
  Graph<double> g;
  std::vector<Tensor<double>> leaves;
  leaves.reserve(params.size());
  for (const auto& p : params) leaves.push_back(g.leaf(p));
  Tensor<double> loss = build(g, leaves);
  if (loss.size() != 1) throw std::invalid_argument("grad check requires a scalar loss");
  return loss(0);
}

/// Central finite differences, one forward pair per parameter element.
template <typename BuildFn>
std::vector<Tensor<double>> finite_difference_gradients(BuildFn&& build,
                                                        const std::vector<Tensor<double>>& params,
                                                        double eps) {
  std::vector<Tensor<double>> grads;
  grads.reserve(params.size());
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Tensor<double> grad(params[pi].shape());
    double* gp = grad.mutable_data();
    for (long i = 0; i < params[pi].size(); ++i) {
      std::vector<Tensor<double>> probe = params;
      std::vector<double> vals = params[pi].values();
      vals[static_cast<std::size_t>(i)] += eps;
      probe[pi] = Tensor<double>(params[pi].shape(), vals);
      const double up = forward_value(build, probe);
      vals[static_cast<std::size_t>(i)] -= 2 * eps;
      probe[pi] = Tensor<double>(params[pi].shape(), vals);
      const double down = forward_value(build, probe);
      gp[i] = (up - down) / (2 * eps);
    }
    grads.push_back(std::move(grad));
  }
  return grads;
}

template <typename BuildFn>
GradCheckReport grad_check(BuildFn&& build, const std::vector<Tensor<double>>& params,
                           const std::vector<std::string>& names, double eps, double tol) {
  GradCheckReport report;
  report.tolerance = tol;
  auto exact = autodiff_gradients(build, params);
  auto approx = finite_difference_gradients(build, params, eps);
  for (std::size_t i = 0; i < params.size(); ++i) {
    GradCheckEntry entry;
    entry.name = i < names.size() ? names[i] : "param" + std::to_string(i);
    entry.max_rel_error = max_relative_error(exact[i], approx[i]);
    report.max_rel_error = std::max(report.max_rel_error, entry.max_rel_error);
    report.params.push_back(std::move(entry));
  }
  report.pass = report.max_rel_error <= tol;
  return report;
}

template <typename BuildFn>
GradCheckReport grad_check(BuildFn&& build, const std::vector<Tensor<double>>& params, double eps,
                           double tol) {
  return grad_check(std::forward<BuildFn>(build), params, {}, eps, tol);
}

}  // namespace rvafm
