#ifndef LTRCJM_LIKELIHOOD_HPP
#define LTRCJM_LIKELIHOOD_HPP

#include <optional>
#include <string>
#include <vector>

#include "ltrcjm/posterior.hpp"
#include "ltrcjm/types.hpp"
#include "ltrcjm/validate.hpp"

namespace ltrcjm {

struct PopulationOracle;  // simulate.hpp

// First derivatives of the log modified likelihood at fixed hazard, per
// parameter block. full_scores subtracts the population correction terms to
// recover the full-likelihood scores for the lambda and beta blocks.
struct ScoreVector {
  double s_beta = 0.0;
  Eigen::VectorXd s_beta_ext;  // size 0 when absent
  Eigen::VectorXd s_lambda;
  double s_sigma2 = 0.0;
  Eigen::VectorXd s_mu;
  Eigen::MatrixXd s_Sigma;
};

// Log modified likelihood by conjugate-Gaussian importance sampling,
// deterministic per (mc.seed, mc.stream). Hazard jumps must sit at the
// dataset's uncensored event times. A zero jump size at an uncensored
// endpoint yields -inf rather than an exception.
//
// `anchor`, when given, fixes the proposal (and its importance correction)
// at a different parameter point; finite differences taken around the
// anchor under common random numbers then differentiate a single smooth
// function whose gradient at the anchor is exactly modified_scores.
double log_modified_likelihood(const Dataset& d, const JointParams& p, const McConfig& mc,
                               const JointParams* anchor = nullptr);

ScoreVector modified_scores(const Dataset& d, const JointParams& p, const McConfig& mc);

// Full-likelihood scores of the unconditional model: the lambda and beta
// blocks subtract Q2/Q3 population terms estimated from the oracle, and the
// mu/Sigma blocks are centered at the oracle's conditional moments.
// Diagnostic use only; requires a dataset without external covariates.
ScoreVector full_scores(const Dataset& d, const JointParams& p, const McConfig& mc,
                        const PopulationOracle& pop);

struct FdEntry {
  std::string block;
  std::string name;
  double analytic = 0.0;
  double fd = 0.0;
  double rel_err = 0.0;
};

struct FdReport {
  std::vector<FdEntry> entries;
  double max_rel_err = 0.0;
  double max_rel_err_euclidean = 0.0;
  double max_rel_err_lambda = 0.0;
};

// Central finite differences of log_modified_likelihood against
// modified_scores under common random numbers. Probes every Euclidean
// coordinate and n_lambda_probe randomly chosen jump sizes.
FdReport finite_difference_check(const Dataset& d, const JointParams& p, const McConfig& mc,
                                 double eps, int n_lambda_probe = 10,
                                 std::uint64_t probe_seed = 1);

// --- shared E-step accumulators ---------------------------------------
//
// For each jump k and the subjects i at risk there, with
// c_i(u, a) = (g(u)'a, x_i(u)) and eta = (beta, beta_ext)' c:
//   D[k]  = sum_i E[exp eta | o_i]
//   N1[k] = sum_i E[c exp eta | o_i]          (row k, 1 + n_ext columns)
//   N2[k] = sum_i E[c c' exp eta | o_i]       (row k, flattened)
struct RiskAccums {
  Eigen::VectorXd D;
  Eigen::MatrixXd N1;
  Eigen::MatrixXd N2;
  int dim = 1;  // 1 + n_ext
};

RiskAccums compute_risk_accums(const Dataset& d, const JointParams& p,
                               const std::vector<PosteriorDraws>& draws,
                               const EventTable& table, bool need_moments = true);

// Per-subject posterior moments and the expected squared measurement
// residual sum E[sum_j (w_ij - g(s_ij)'A)^2 | o_i].
struct SubjectMoments {
  std::vector<Eigen::VectorXd> mean;   // E[A | o_i]
  std::vector<Eigen::MatrixXd> outer;  // E[A A' | o_i]
  std::vector<double> resid2;
  std::vector<double> ess;
};

SubjectMoments compute_subject_moments(const Dataset& d,
                                       const std::vector<PosteriorDraws>& draws);

}  // namespace ltrcjm

#endif
