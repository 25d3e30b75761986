#ifndef LTRCJM_SIMULATE_HPP
#define LTRCJM_SIMULATE_HPP

#include <optional>
#include <string>
#include <vector>

#include "ltrcjm/rng.hpp"
#include "ltrcjm/types.hpp"

namespace ltrcjm {

// Optional fully observed change-point covariate in the hazard:
// lambda(t|a) picks up the factor exp(beta2 * 1{t > V}), with V ~
// Exp(change_rate) or never (probability never_prob).
struct ExtCovSim {
  double beta2 = 0.0;
  double change_rate = 1.0;
  double never_prob = 0.0;
};

struct SimSetting {
  int n = 200;
  double beta = 1.0;
  Eigen::VectorXd mu;      // (2, 0.5)
  Eigen::MatrixXd Sigma;   // 2x2 SPD
  double sigma2 = 0.1;
  double trunc_rate = 1.0;    // T* ~ Exp(trunc_rate)
  double u_rate = 1.0 / 3.0;  // entry-to-drop-out U ~ Exp(u_rate), C = T + U
  double baseline = 1.0;      // hazard level of the a = mu subject
  // Random effects enter the hazard as deviations from their mean:
  // lambda(t|a) = baseline * exp(beta (a - mu)'g(t)), so the mean subject's
  // survival is exactly Exp(baseline). Generated data still follow the
  // fitted model, with true baseline hazard  baseline * exp(-beta mu'g(t)).
  bool center_random_effects = true;
  double meas_spacing = 0.1;  // grid from entry to exit
  std::uint64_t seed = 1;
  std::optional<ExtCovSim> ext;
};

// The five benchmark configurations, varying (sigma22, sigma2):
// (0.01,0.1), (0.01,0.4), (0.01,0.025), (0.0025,0.1), (0.04,0.1).
SimSetting preset(int case_id);

struct TruthRecord {
  std::string id;
  Eigen::VectorXd a;
  double y_star = 0.0;  // may be +inf
  double c = 0.0;
};

struct SimResult {
  Dataset data;
  std::vector<TruthRecord> truth;
};

// Latent survival time under hazard baseline * exp(beta (a0 + a1 t)) by
// closed-form inverse transform; +inf when the finite total hazard mass is
// exhausted (beta*a1 < 0 tail).
double draw_survival(const Eigen::VectorXd& a, const SimSetting& s, Rng& rng);

// Rejection sampling of the enrolled subpopulation (Y* >= T*), followed by
// censoring and the measurement grid. Deterministic per seed.
SimResult generate(const SimSetting& s);

// Accepted-population sample used for conditional targets and the
// full-score population terms.
struct PopulationOracle {
  Eigen::MatrixXd a;   // N x q
  Eigen::VectorXd t;   // truncation times of accepted draws
  Eigen::VectorXd mu_star;
  Eigen::MatrixXd Sigma_star;
  Eigen::VectorXd mu_star_se;
  double acceptance_rate = 0.0;

  int n_draws() const { return static_cast<int>(a.rows()); }

  // E[exp(beta g(y)'A) 1{y <= T} | enrolled]
  double exp_tilt_after(double y, double beta, const Basis& basis) const;

  // E[sum_{k : y_k <= T} lambda_k (g(y_k)'A) exp(beta g(y_k)'A) | enrolled]
  double q3_population(const StepHazard& hazard, double beta, const Basis& basis) const;

  // E[(A - mu)(A - mu)' | enrolled]
  Eigen::MatrixXd centered_moment(const Eigen::VectorXd& mu) const;
};

PopulationOracle population_oracle(const SimSetting& s, int n_accepted);

}  // namespace ltrcjm

#endif
