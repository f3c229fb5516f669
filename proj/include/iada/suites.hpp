#pragma once

// Verification suites: each draws its own random instances, compares the
// implementation against a brute-force reference and reports one verdict.
// Shared by `iada verify` and the acceptance runner.

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"

namespace iada::suites {

struct SuiteResult {
  std::string name;
  bool passed = false;
  /// Worst observed value of the checked quantity, next to its bound.
  double measured = 0.0;
  double bound = 0.0;
  std::string detail;
  double seconds = 0.0;

  nlohmann::json to_json() const;
};

/// ε ≡ 0, α = 0: the IADA loss against hand-written CE (β = 0) and LA (β = 1).
SuiteResult reduction(int instances = 100, std::uint64_t seed = 1);

/// Closed-form per-sample surrogate ≥ Monte-Carlo E[ℓ_CE] − 3 s.e. on every
/// instance. `rho_sign = -1` injects a sign fault into ρ and must fail.
SuiteResult jensen(int instances = 1000, long draws = 100000, std::uint64_t seed = 1, double rho_sign = 1.0);

/// E[e^{tX}] by Monte-Carlo on a 5×5×5 grid of t ∈ [−1, 1], μ ∈ [−1, 1],
/// σ² ∈ [0, 2], within 4 s.e. of the closed form.
SuiteResult mgf(long draws = 1000000, std::uint64_t seed = 1);

/// Mean over seeds of the log-log slope of the finite-ℳ gap at
/// ℳ ∈ {10, 100, 1000}; expected −0.5 ± 0.15.
SuiteResult convergence(int seeds = 50, std::uint64_t seed = 1);

/// Autodiff vs central differences for every classifier tensor.
SuiteResult gradient(int instances = 50, std::uint64_t seed = 1);

/// Ω and Σ hypergradients through the pseudo step vs central differences on
/// a C = 2, 𝓗 = 2, n = m = 4 instance.
SuiteResult hypergradient(int instances = 5, std::uint64_t seed = 1);

/// Streaming class covariances vs the full-batch estimate over random
/// partitions of one dataset.
SuiteResult pooling(int partitions = 20, std::uint64_t seed = 1);

/// All of the above with default sizes.
std::vector<SuiteResult> run_all(std::uint64_t seed = 1, double rho_sign = 1.0);

}  // namespace iada::suites
