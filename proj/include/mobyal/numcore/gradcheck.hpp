#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "mobyal/numcore/tape.hpp"
#include "mobyal/numcore/tensor.hpp"

namespace mobyal::numcore {

// Builds a scalar loss on the given tape. Called once for the analytic
// gradient and twice per coordinate for the central differences.
using ScalarFn = std::function<Tensor<double>(Tape<double>&)>;

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::size_t coordinates = 0;
  // Coordinates where |a - n| is within the rounding noise of the quotient,
  // 16 ulp(f) / eps; they count as exact.
  std::size_t at_noise_floor = 0;
  // Coordinates whose quotient changes with a 10x smaller step (a kink of
  // relu inside the probe interval). Only probed when the error exceeds 1e-4.
  std::size_t unstable = 0;
};

// Compares the analytic gradient of f with respect to every tensor in
// `inputs` against (f(x+eps e) - f(x-eps e)) / (2 eps). Per coordinate the
// error is |a - n| / max(1e-8, |a| + |n|), or 0 at the noise floor; the
// maximum is returned.
GradCheckResult gradient_check(const ScalarFn& f, std::vector<Tensor<double>> inputs, double eps = 1e-5);

double finite_difference_check(const ScalarFn& f, Tensor<double> x, double eps = 1e-5);

struct GradCheckCase {
  std::string name;
  int seeds = 0;
  double worst_error = 0.0;
  double tolerance = 0.0;
  int redrawn = 0;  // instances replaced because the quotient was step-unstable
  bool passed() const { return worst_error < tolerance; }
};

// Runs fn on `seeds` instances drawn from base_seed. An instance with
// unstable coordinates is replaced by the next draw of the same seed, at
// most kMaxRedraws - 1 times; the last draw counts regardless.
inline constexpr std::uint64_t kMaxRedraws = 8;
GradCheckCase run_case(const std::string& name, const std::function<GradCheckResult(std::uint64_t, double)>& fn,
                       std::uint64_t base_seed, int seeds, double eps, double tolerance);

// The verification suite behind `mobyal grad-check`: every differentiable op
// plus a composed conv/bn/relu/pool/linear/cross-entropy network, each over
// `seeds` random instances.
std::vector<GradCheckCase> run_gradient_suite(int seeds = 20, double eps = 1e-5, double tolerance = 1e-3);

}  // namespace mobyal::numcore
