#ifndef LTRCJM_BOOTSTRAP_HPP
#define LTRCJM_BOOTSTRAP_HPP

#include <functional>
#include <string>
#include <vector>

#include "ltrcjm/em.hpp"
#include "ltrcjm/types.hpp"

namespace ltrcjm {

struct BootstrapReport {
  int B = 0;
  int n_converged = 0;
  std::vector<std::string> columns;   // beta[, beta_ext_*], sigma2, mu_*, Sigma_*, Lambda@t
  std::vector<double> probe_times;
  Eigen::MatrixXd estimates;          // B rows; NaN rows for non-converged
  std::vector<char> converged;        // per resample
  Eigen::VectorXd se;                 // SD over converged resamples
};

// Test seam: maps (resample index, n) to subject indices.
using ResampleHook = std::function<std::vector<int>(int b, int n)>;

// Subject-level nonparametric bootstrap: B with-replacement resamples of
// size n, each refit from auto_init (or warm-started at `center`), SDs over
// the converged refits only. Resample b is keyed by (seed, b). The hazard is
// summarized at probe_times (default: quartiles of the original event
// times), since jump locations differ across resamples.
BootstrapReport bootstrap_se(const Dataset& d, const EmConfig& cfg, int B,
                             std::uint64_t seed,
                             std::vector<double> probe_times = {},
                             const std::optional<JointParams>& warm_start = std::nullopt,
                             const ResampleHook& hook = nullptr);

}  // namespace ltrcjm

#endif
