#ifndef LTRCJM_POSTERIOR_HPP
#define LTRCJM_POSTERIOR_HPP

#include <cmath>

#include "ltrcjm/rng.hpp"
#include "ltrcjm/types.hpp"

namespace ltrcjm {

// Exact Gaussian conditional of the random effects given the subject's
// longitudinal measurements under the linear mixed model.
struct GaussianPosterior {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;
};

// Importance-weighted Monte Carlo representation of the full posterior of
// the random effects given all observed data of one subject.
struct PosteriorDraws {
  Eigen::MatrixXd draws;    // M x q
  Eigen::VectorXd weights;  // nonnegative, sum 1
  double ess = 0.0;         // 1 / sum w^2
  double log_mean_tilt = 0.0;  // log (1/M) sum_m exp(survival log weight)
  double log_marginal = 0.0;   // log density of the measurement vector
};

struct McConfig {
  int draws = 2000;
  std::uint64_t seed = 20260810ull;
  std::uint64_t stream = 0;  // e.g. EM iteration index
};

// Conjugate pieces reused by the likelihood: posterior moments, Cholesky of
// the covariance, and the log marginal density of the measurement vector.
struct ConjugateParts {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;
  Eigen::MatrixXd chol;  // lower triangular, cov = chol * chol^T
  double log_marginal = 0.0;
};

ConjugateParts lmm_posterior_parts(const SubjectRecord& s, const Basis& basis,
                                   const JointParams& p);

GaussianPosterior lmm_posterior(const SubjectRecord& s, const Basis& basis,
                                const JointParams& p);

// Log of the survival tilt, excluding terms constant in a and the
// log-jump-size factor (both cancel in normalized weights):
//   delta * eta(z, a) - sum_{j : t < y_j <= z} lambda_j exp(eta(y_j, a)),
// with eta(u, a) = beta g(u)'a + beta_ext' x(u).
double survival_log_weight(const Eigen::VectorXd& a, const SubjectRecord& s,
                           const Basis& basis, const JointParams& p);

// Batched version over the rows of A (M x q).
Eigen::VectorXd survival_log_weights(const Eigen::MatrixXd& A, const SubjectRecord& s,
                                     const Basis& basis, const JointParams& p);

// M x q standard normals in draw-major order.
Eigen::MatrixXd standard_normal_matrix(int M, int q, Rng& rng);

// M rows of mean + chol * xi, consuming q normals per draw.
Eigen::MatrixXd gaussian_draws(const ConjugateParts& parts, int M, Rng& rng);

// Tilted draws built from externally supplied standard normals; lets a
// caller hold the normals fixed while the proposal tracks the parameters.
PosteriorDraws posterior_from_normals(const SubjectRecord& s, const Basis& basis,
                                      const JointParams& p, const Eigen::MatrixXd& Z);

// Draws from the conjugate Gaussian, tilted by the survival factor via
// normalized importance weights (log-sum-exp). Deterministic given rng state.
PosteriorDraws sample_posterior(const SubjectRecord& s, const Basis& basis,
                                const JointParams& p, int M, Rng& rng);

// Stream key for subject draws: (seed, subject id, stream/iteration).
inline Rng subject_rng(std::uint64_t seed, const std::string& subject_id,
                       std::uint64_t stream) {
  return Rng(derive_seed(seed, fnv1a64(subject_id), stream));
}

PosteriorDraws sample_posterior(const SubjectRecord& s, const Basis& basis,
                                const JointParams& p, const McConfig& mc);

// Self-normalized expectation sum_m w_m h(a_m); h maps a q-vector to a
// double or an Eigen vector/matrix. Non-finite h values raise NumericError
// naming the draw.
template <typename F>
auto expect(F&& h, const PosteriorDraws& pd) {
  const int M = static_cast<int>(pd.draws.rows());
  auto acc = [&](int m) { return h(Eigen::VectorXd(pd.draws.row(m))); };
  auto result = acc(0);
  auto check = [](const auto& v, int m) {
    if constexpr (std::is_arithmetic_v<std::decay_t<decltype(v)>>) {
      if (!std::isfinite(v)) throw NumericError("expect: non-finite h at draw " + std::to_string(m));
    } else {
      if (!v.allFinite()) throw NumericError("expect: non-finite h at draw " + std::to_string(m));
    }
  };
  check(result, 0);
  result = result * pd.weights[0];
  for (int m = 1; m < M; ++m) {
    auto hm = acc(m);
    check(hm, m);
    result = result + hm * pd.weights[m];
  }
  return result;
}

inline double logsumexp(const Eigen::VectorXd& v) {
  double mx = v.maxCoeff();
  if (!std::isfinite(mx)) return mx;
  return mx + std::log((v.array() - mx).exp().sum());
}

}  // namespace ltrcjm

#endif
