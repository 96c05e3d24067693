#pragma once

// Central finite-difference verification of analytic gradients. The checker
// reduces any output to a scalar through a fixed random covector, then
// compares per-element central differences against the tape's gradients.
// Kinked ops (ReLU, abs, max routing) can alias a crossing within eps of a
// sample point; a failing element is retried at eps/8 so only systematic
// disagreements are reported.

#include <functional>
#include <string>
#include <vector>

#include "cebsnet/ops.hpp"
#include "cebsnet/rng.hpp"

namespace cebsnet {

struct GradCheckReport {
  bool pass = true;
  double max_rel_err = 0.0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  int worst_input = -1;
  i64 worst_element = -1;
  i64 elements_checked = 0;

  std::string describe() const;
};

using GradFn = std::function<TensorD(const std::vector<TensorD>&)>;

// eps default 1e-4, tol default 1e-3 (relative, with a 1e-8 absolute floor).
GradCheckReport gradcheck(const GradFn& fn, std::vector<TensorD> inputs,
                          double eps = 1e-4, double tol = 1e-3,
                          std::uint64_t covector_seed = 0x5eed);

struct GradCase {
  std::string module;  // tensorops | refine | detector | objective
  std::string name;
  double eps = 1e-4;
  std::function<GradCheckReport(std::uint64_t seed, double eps, double tol)>
      run;
};

const std::vector<GradCase>& gradcheck_cases();

struct GradSuiteLine {
  std::string module;
  std::string name;
  bool pass = true;
  double max_rel_err = 0.0;
  int seeds = 0;
  std::string detail;
};

// Runs every registered case over `seeds` seeds; empty filter means all
// modules.
std::vector<GradSuiteLine> run_gradcheck_suite(const std::string& module_filter,
                                               double tol, int seeds);

// Helpers shared by registry cases and tests.
TensorD random_tensor(Rng& rng, Shape s, double lo = -1.0, double hi = 1.0,
                      bool requires_grad = true);
// Values pairwise separated by >= 0.05: safe for argmax-routing checks.
TensorD random_separated_tensor(Rng& rng, Shape s, bool requires_grad = true);

}  // namespace cebsnet
