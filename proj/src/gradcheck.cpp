#include "cebsnet/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace cebsnet {

std::string GradCheckReport::describe() const {
  std::ostringstream os;
  os.precision(6);
  if (pass) {
    os << "pass (max_rel=" << max_rel_err << " over " << elements_checked
       << " elements)";
  } else {
    os << "FAIL at input " << worst_input << " element " << worst_element
       << ": analytic=" << worst_analytic << " numeric=" << worst_numeric
       << " rel=" << max_rel_err;
  }
  return os.str();
}

namespace {

double eval_scalar(const GradFn& fn, const std::vector<TensorD>& inputs,
                   const std::vector<double>& covector) {
  NoGradGuard ng;
  TensorD out = fn(inputs);
  const auto& v = out.values();
  check(v.size() == covector.size(), "gradcheck: output shape changed");
  double acc = 0;
  for (size_t i = 0; i < v.size(); ++i) acc += v[i] * covector[i];
  return acc;
}

double central_diff(const GradFn& fn, std::vector<TensorD>& inputs, size_t i,
                    size_t j, double eps,
                    const std::vector<double>& covector) {
  auto& vals = inputs[i].values_mut();
  const double saved = vals[j];
  vals[j] = saved + eps;
  const double lp = eval_scalar(fn, inputs, covector);
  vals[j] = saved - eps;
  const double lm = eval_scalar(fn, inputs, covector);
  vals[j] = saved;
  return (lp - lm) / (2.0 * eps);
}

}  // namespace

GradCheckReport gradcheck(const GradFn& fn, std::vector<TensorD> inputs,
                          double eps, double tol,
                          std::uint64_t covector_seed) {
  check(eps > 0 && tol > 0, "gradcheck: eps and tol must be positive");
  for (auto& in : inputs) {
    in.set_requires_grad(true);
    in.zero_grad();
  }
  TensorD out = fn(inputs);
  Rng crng(covector_seed);
  std::vector<double> covector(out.values().size());
  for (auto& w : covector) w = rand_uniform(crng, -1.0, 1.0);
  out.backward(covector);

  std::vector<std::vector<double>> analytic;
  analytic.reserve(inputs.size());
  for (auto& in : inputs) {
    analytic.push_back(in.has_grad()
                           ? in.grad()
                           : std::vector<double>(in.values().size(), 0.0));
  }

  // The absolute floor forgives differencing noise on near-zero gradients; it
  // scales down with tol so unreachable tolerances still report failures.
  const double atol = std::min(1e-8, tol);
  GradCheckReport report;
  for (size_t i = 0; i < inputs.size(); ++i) {
    for (size_t j = 0; j < inputs[i].values().size(); ++j) {
      const double a = analytic[i][j];
      double n = central_diff(fn, inputs, i, j, eps, covector);
      double diff = std::fabs(a - n);
      double denom = std::max(std::fabs(a), std::fabs(n));
      bool ok = diff <= atol || diff <= tol * denom;
      if (!ok) {
        // Retry closer to the sample point: kink-crossing artifacts shrink
        // with eps, genuine gradient errors do not.
        n = central_diff(fn, inputs, i, j, eps / 8.0, covector);
        diff = std::fabs(a - n);
        denom = std::max(std::fabs(a), std::fabs(n));
        ok = diff <= atol || diff <= tol * denom;
      }
      const double rel = diff / std::max(denom, 1e-12);
      ++report.elements_checked;
      if (!ok) {
        report.pass = false;
        if (rel > report.max_rel_err) {
          report.max_rel_err = rel;
          report.worst_input = static_cast<int>(i);
          report.worst_element = static_cast<i64>(j);
          report.worst_analytic = a;
          report.worst_numeric = n;
        }
      } else if (report.pass && denom > 1e-8) {
        report.max_rel_err = std::max(report.max_rel_err, rel);
      }
    }
  }
  return report;
}

std::vector<GradSuiteLine> run_gradcheck_suite(
    const std::string& module_filter, double tol, int seeds) {
  std::vector<GradSuiteLine> lines;
  for (const auto& gcase : gradcheck_cases()) {
    if (!module_filter.empty() && gcase.module != module_filter) continue;
    GradSuiteLine line;
    line.module = gcase.module;
    line.name = gcase.name;
    line.seeds = seeds;
    for (int s = 0; s < seeds; ++s) {
      const auto report =
          gcase.run(static_cast<std::uint64_t>(s) * 7919 + 17, gcase.eps, tol);
      line.max_rel_err = std::max(line.max_rel_err, report.max_rel_err);
      if (!report.pass) {
        line.pass = false;
        line.detail = "seed " + std::to_string(s) + ": " + report.describe();
        break;
      }
    }
    lines.push_back(std::move(line));
  }
  return lines;
}

TensorD random_tensor(Rng& rng, Shape s, double lo, double hi,
                      bool requires_grad) {
  std::vector<double> vals(static_cast<size_t>(s.numel()));
  for (auto& v : vals) v = rand_uniform(rng, lo, hi);
  return TensorD::from_values(s, std::move(vals), requires_grad);
}

TensorD random_separated_tensor(Rng& rng, Shape s, bool requires_grad) {
  const i64 n = s.numel();
  std::vector<i64> perm(static_cast<size_t>(n));
  for (i64 i = 0; i < n; ++i) perm[static_cast<size_t>(i)] = i;
  for (i64 i = n; i > 1; --i) {
    std::swap(perm[static_cast<size_t>(i - 1)],
              perm[static_cast<size_t>(rand_index(rng, i))]);
  }
  std::vector<double> vals(static_cast<size_t>(n));
  for (i64 i = 0; i < n; ++i) {
    vals[static_cast<size_t>(i)] =
        0.05 * static_cast<double>(perm[static_cast<size_t>(i)]) +
        rand_uniform(rng, -0.01, 0.01);
  }
  return TensorD::from_values(s, std::move(vals), requires_grad);
}

}  // namespace cebsnet
