#pragma once

// Finite-difference gradient reference for the fusion score. The forward
// pass here is written out with plain loops over the weight matrices and
// does not use the library's encode/fuse code. It accumulates in long double
// so the central difference at h = 1e-5 is not dominated by roundoff.

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "mtfn/fusion.hpp"

namespace oracle {

inline long double naive_score(const mtfn::FusionBranchParams& p, std::span<const double> x,
                               std::span<const double> y) {
  using LD = long double;
  const std::size_t da = p.w_in_a.rows();
  const std::size_t db = p.w_in_b.rows();
  const std::size_t df = p.w_out.cols();
  std::vector<LD> xa(da, 0.0L);
  std::vector<LD> yb(db, 0.0L);
  for (std::size_t i = 0; i < da; ++i)
    for (std::size_t j = 0; j < x.size(); ++j) xa[i] += p.w_in_a(i, j) * x[j];
  for (std::size_t i = 0; i < db; ++i)
    for (std::size_t j = 0; j < y.size(); ++j) yb[i] += p.w_in_b(i, j) * y[j];
  std::vector<LD> f(df, 0.0L);
  for (std::size_t r = 0; r < p.factors_a.size(); ++r) {
    for (std::size_t k = 0; k < df; ++k) {
      LD u = 0.0L;
      LD v = 0.0L;
      for (std::size_t i = 0; i < da; ++i) u += p.factors_a[r](k, i) * xa[i];
      for (std::size_t i = 0; i < db; ++i) v += p.factors_b[r](k, i) * yb[i];
      f[k] += u * v;
    }
  }
  LD logit = p.out_bias.empty() ? 0.0L : p.out_bias(0, 0);
  for (std::size_t k = 0; k < df; ++k) logit += p.w_out(0, k) * f[k];
  return 1.0L / (1.0L + std::exp(-logit));
}

// Largest |a - n| / max(1e-8, |a| + |n|) over every weight.
inline double max_rel_error(const mtfn::FusionBranchParams& branch,
                            const mtfn::FusionBranchParams& analytic, std::span<const double> x,
                            std::span<const double> y, double h = 1e-5) {
  std::vector<const mtfn::Mat*> grads;
  analytic.for_each_tensor([&](const std::string&, const mtfn::Mat& m) { grads.push_back(&m); });
  mtfn::FusionBranchParams probe = branch;
  double worst = 0.0;
  std::size_t t = 0;
  probe.for_each_tensor([&](const std::string&, mtfn::Mat& w) {
    auto d = w.data();
    for (std::size_t k = 0; k < d.size(); ++k) {
      const double saved = d[k];
      d[k] = saved + h;
      const long double up = naive_score(probe, x, y);
      d[k] = saved - h;
      const long double down = naive_score(probe, x, y);
      d[k] = saved;
      // Use the step actually representable in the perturbed weight.
      const long double step = static_cast<long double>(saved + h) - static_cast<long double>(saved - h);
      const double n = static_cast<double>((up - down) / step);
      const double a = grads[t]->data()[k];
      worst = std::max(worst, std::abs(a - n) / std::max(1e-8, std::abs(a) + std::abs(n)));
    }
    ++t;
  });
  return worst;
}

}  // namespace oracle
