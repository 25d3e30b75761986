#include "ltrcjm/posterior.hpp"

#include <cmath>

#include <Eigen/Cholesky>

namespace ltrcjm {

namespace {
constexpr double kLog2Pi = 1.8378770664093454835606594728112;

Eigen::LLT<Eigen::MatrixXd> checked_llt(const Eigen::MatrixXd& m, const char* what) {
  Eigen::LLT<Eigen::MatrixXd> llt(m);
  if (llt.info() != Eigen::Success) throw ValidationError(std::string(what) + " is not positive definite");
  return llt;
}

double eta_ext(const SubjectRecord& s, const JointParams& p, double u) {
  if (!p.beta_ext || p.beta_ext->size() == 0) return 0.0;
  return (*p.beta_ext)[0] * s.ext_value(u);
}
}  // namespace

ConjugateParts lmm_posterior_parts(const SubjectRecord& s, const Basis& basis,
                                   const JointParams& p) {
  const int q = basis.q;
  const int n = s.n_meas();
  auto Sigma_llt = checked_llt(p.Sigma, "Sigma");

  ConjugateParts parts;
  if (n == 0) {
    parts.mean = p.mu;
    parts.cov = p.Sigma;
    parts.chol = Sigma_llt.matrixL();
    parts.log_marginal = 0.0;
    return parts;
  }

  Eigen::MatrixXd G(n, q);
  Eigen::VectorXd w(n);
  for (int j = 0; j < n; ++j) {
    G.row(j) = basis.eval(s.meas_times[j]).transpose();
    w[j] = s.meas_values[j];
  }

  Eigen::MatrixXd Sigma_inv = Sigma_llt.solve(Eigen::MatrixXd::Identity(q, q));
  Eigen::MatrixXd precision = Sigma_inv + G.transpose() * G / p.sigma2;
  auto prec_llt = checked_llt(precision, "posterior precision");
  Eigen::VectorXd rhs = Sigma_inv * p.mu + G.transpose() * w / p.sigma2;
  parts.mean = prec_llt.solve(rhs);
  parts.cov = prec_llt.solve(Eigen::MatrixXd::Identity(q, q));
  parts.chol = Eigen::LLT<Eigen::MatrixXd>(parts.cov).matrixL();

  double logdet_Sigma = 0.0, logdet_prec = 0.0;
  Eigen::MatrixXd Ls = Sigma_llt.matrixL();
  Eigen::MatrixXd Lp = prec_llt.matrixL();
  for (int i = 0; i < q; ++i) {
    logdet_Sigma += 2.0 * std::log(Ls(i, i));
    logdet_prec += 2.0 * std::log(Lp(i, i));
  }
  double quad = w.squaredNorm() / p.sigma2 + p.mu.dot(Sigma_inv * p.mu) - parts.mean.dot(rhs);
  parts.log_marginal = -0.5 * n * (kLog2Pi + std::log(p.sigma2)) - 0.5 * logdet_Sigma -
                       0.5 * logdet_prec - 0.5 * quad;
  return parts;
}

GaussianPosterior lmm_posterior(const SubjectRecord& s, const Basis& basis,
                                const JointParams& p) {
  auto parts = lmm_posterior_parts(s, basis, p);
  return {parts.mean, parts.cov};
}

Eigen::VectorXd survival_log_weights(const Eigen::MatrixXd& A, const SubjectRecord& s,
                                     const Basis& basis, const JointParams& p) {
  const int M = static_cast<int>(A.rows());
  Eigen::VectorXd slw = Eigen::VectorXd::Zero(M);
  auto [lo, hi] = p.hazard.window(s.entry, s.exit);
  for (int k = lo; k < hi; ++k) {
    double y = p.hazard.times[k];
    Eigen::VectorXd g = basis.eval(y);
    Eigen::ArrayXd eta = (p.beta * (A * g).array()) + eta_ext(s, p, y);
    slw.array() -= p.hazard.sizes[k] * eta.exp();
  }
  if (s.event) {
    Eigen::VectorXd gz = basis.eval(s.exit);
    slw.array() += p.beta * (A * gz).array() + eta_ext(s, p, s.exit);
  }
  return slw;
}

double survival_log_weight(const Eigen::VectorXd& a, const SubjectRecord& s,
                           const Basis& basis, const JointParams& p) {
  return survival_log_weights(a.transpose(), s, basis, p)[0];
}

Eigen::MatrixXd standard_normal_matrix(int M, int q, Rng& rng) {
  Eigen::MatrixXd Z(M, q);
  for (int m = 0; m < M; ++m)
    for (int j = 0; j < q; ++j) Z(m, j) = rng.normal();
  return Z;
}

Eigen::MatrixXd gaussian_draws(const ConjugateParts& parts, int M, Rng& rng) {
  const int q = static_cast<int>(parts.mean.size());
  Eigen::MatrixXd A = standard_normal_matrix(M, q, rng) * parts.chol.transpose();
  A.rowwise() += parts.mean.transpose();
  return A;
}

namespace {
PosteriorDraws finish_draws(const SubjectRecord& s, const Basis& basis, const JointParams& p,
                            const ConjugateParts& parts, Eigen::MatrixXd&& A) {
  PosteriorDraws pd;
  pd.draws = std::move(A);
  Eigen::VectorXd slw = survival_log_weights(pd.draws, s, basis, p);
  double lse = logsumexp(slw);
  if (!std::isfinite(lse))
    throw NumericError("degenerate importance weights for subject " + s.id);
  pd.weights = (slw.array() - lse).exp();
  pd.ess = 1.0 / pd.weights.squaredNorm();
  pd.log_mean_tilt = lse - std::log(static_cast<double>(pd.draws.rows()));
  pd.log_marginal = parts.log_marginal;
  return pd;
}
}  // namespace

PosteriorDraws posterior_from_normals(const SubjectRecord& s, const Basis& basis,
                                      const JointParams& p, const Eigen::MatrixXd& Z) {
  auto parts = lmm_posterior_parts(s, basis, p);
  Eigen::MatrixXd A = Z * parts.chol.transpose();
  A.rowwise() += parts.mean.transpose();
  return finish_draws(s, basis, p, parts, std::move(A));
}

PosteriorDraws sample_posterior(const SubjectRecord& s, const Basis& basis,
                                const JointParams& p, int M, Rng& rng) {
  if (M < 1) throw ConfigError("sample_posterior: need M >= 1");
  auto parts = lmm_posterior_parts(s, basis, p);
  Eigen::MatrixXd A = gaussian_draws(parts, M, rng);
  return finish_draws(s, basis, p, parts, std::move(A));
}

PosteriorDraws sample_posterior(const SubjectRecord& s, const Basis& basis,
                                const JointParams& p, const McConfig& mc) {
  Rng rng = subject_rng(mc.seed, s.id, mc.stream);
  return sample_posterior(s, basis, p, mc.draws, rng);
}

}  // namespace ltrcjm
