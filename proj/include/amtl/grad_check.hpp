#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "amtl/error.hpp"
#include "amtl/tensor.hpp"

namespace amtl {

struct GradReport {
  double max_rel_err = 0.0;
  std::string worst_param_path;
};

// Central-difference check of reverse-mode gradients.
//
// `f` is a deterministic callable returning a scalar Tensor built from the
// current values of `params` (it must re-run the forward pass on every
// call). The analytic gradient from backward() is compared per coordinate
// against (f(p+eps)-f(p-eps))/(2*eps) with relative error denominator
// max(|analytic|, |numeric|, 1e-8).
template <class F>
GradReport grad_check(F&& f, std::vector<Tensor>& params, double eps) {
  require(eps > 0.0 && eps <= 1e-2, ErrorKind::contract,
          "grad_check: eps must be in (0, 1e-2]");

  const double l0 = f().value();
  const double l1 = f().value();
  require(l0 == l1, ErrorKind::nondeterminism,
          "grad_check: two evaluations of f differ");

  zero_grad(params);
  backward(f());
  std::vector<std::vector<double>> analytic;
  analytic.reserve(params.size());
  for (Tensor& p : params) analytic.push_back(p.grad());

  GradReport report;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Tensor& p = params[pi];
    for (std::size_t i = 0; i < p.numel(); ++i) {
      const double saved = p.data()[i];
      p.data()[i] = saved + eps;
      const double fp = f().value();
      p.data()[i] = saved - eps;
      const double fm = f().value();
      p.data()[i] = saved;
      const double numeric = (fp - fm) / (2.0 * eps);
      const double a = analytic[pi][i];
      const double denom = std::max({std::fabs(a), std::fabs(numeric), 1e-8});
      const double rel = std::fabs(a - numeric) / denom;
      if (rel > report.max_rel_err) {
        report.max_rel_err = rel;
        report.worst_param_path =
            (p.name().empty() ? std::string("param") + std::to_string(pi) : p.name()) +
            "[" + std::to_string(i) + "]";
      }
    }
  }
  return report;
}

}  // namespace amtl
