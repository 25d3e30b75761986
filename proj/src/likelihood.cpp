#include "ltrcjm/likelihood.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <Eigen/Cholesky>

#include "ltrcjm/parallel.hpp"
#include "ltrcjm/simulate.hpp"

namespace ltrcjm {

namespace {
constexpr double kLog2Pi = 1.8378770664093454835606594728112;

void require_aligned(const StepHazard& h, const EventTable& table) {
  if (!hazard_aligned(h, table))
    throw ValidationError("hazard jumps must sit at the dataset's uncensored event times");
}

// log N(w | G a, sigma2 I) per draw row of A
Eigen::VectorXd log_meas_density(const Eigen::MatrixXd& A, const SubjectRecord& s,
                                 const Basis& basis, double sigma2) {
  const int n = s.n_meas();
  const int M = static_cast<int>(A.rows());
  if (n == 0) return Eigen::VectorXd::Zero(M);
  Eigen::MatrixXd G(n, basis.q);
  Eigen::VectorXd w(n);
  for (int j = 0; j < n; ++j) {
    G.row(j) = basis.eval(s.meas_times[j]).transpose();
    w[j] = s.meas_values[j];
  }
  Eigen::MatrixXd R = (A * G.transpose()).rowwise() - w.transpose();
  return (-0.5 * n * (kLog2Pi + std::log(sigma2)) -
          (R.rowwise().squaredNorm().array() / (2.0 * sigma2)))
      .matrix();
}

// log N(a | mean, cov) per draw row, given the lower Cholesky of cov
Eigen::VectorXd log_mvn(const Eigen::MatrixXd& A, const Eigen::VectorXd& mean,
                        const Eigen::MatrixXd& chol) {
  const int q = static_cast<int>(mean.size());
  double logdet = 0.0;
  for (int i = 0; i < q; ++i) logdet += std::log(chol(i, i));
  Eigen::MatrixXd C = (A.rowwise() - mean.transpose()).transpose();
  chol.triangularView<Eigen::Lower>().solveInPlace(C);
  return (-0.5 * q * kLog2Pi - logdet - 0.5 * C.colwise().squaredNorm().array())
      .transpose()
      .matrix();
}

double ext_x(const SubjectRecord& s, double u) { return s.ext_value(u); }
}  // namespace

double log_modified_likelihood(const Dataset& d, const JointParams& p, const McConfig& mc,
                               const JointParams* anchor) {
  check_params(p, d.basis.q);
  EventTable table = build_event_table(d);
  require_aligned(p.hazard, table);
  const int n = d.n();
  const double logM = std::log(static_cast<double>(mc.draws));

  std::vector<double> contrib(n);
  parallel_for(n, [&](int i) {
    const SubjectRecord& s = d.subjects[i];
    const JointParams& prop = anchor ? *anchor : p;
    ConjugateParts parts = lmm_posterior_parts(s, d.basis, prop);
    Rng rng = subject_rng(mc.seed, s.id, mc.stream);
    Eigen::MatrixXd A = gaussian_draws(parts, mc.draws, rng);
    Eigen::VectorXd lw = survival_log_weights(A, s, d.basis, p);
    if (anchor) {
      lw += log_meas_density(A, s, d.basis, p.sigma2);
      Eigen::MatrixXd Lprior = Eigen::LLT<Eigen::MatrixXd>(p.Sigma).matrixL();
      lw += log_mvn(A, p.mu, Lprior);
      lw -= log_mvn(A, parts.mean, parts.chol);
    }
    double value = logsumexp(lw) - logM;
    if (!anchor) value += parts.log_marginal;
    if (s.event) {
      double jump = p.hazard.sizes[table.event_jump[i]];
      value += jump > 0.0 ? std::log(jump) : -kInf;
    }
    contrib[i] = value;
  });

  // canonical (id-sorted) summation so subject order cannot change the value
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](int a, int b) { return d.subjects[a].id < d.subjects[b].id; });
  double total = 0.0;
  for (int i : order) total += contrib[i];
  return total;
}

RiskAccums compute_risk_accums(const Dataset& d, const JointParams& p,
                               const std::vector<PosteriorDraws>& draws,
                               const EventTable& table, bool need_moments) {
  const int n_u = table.n_jumps();
  const int dim = 1 + p.n_ext();
  RiskAccums acc;
  acc.dim = dim;
  acc.D = Eigen::VectorXd::Zero(n_u);
  acc.N1 = Eigen::MatrixXd::Zero(n_u, dim);
  acc.N2 = Eigen::MatrixXd::Zero(n_u, dim * dim);

  std::vector<Eigen::VectorXd> g_jump(n_u);
  for (int k = 0; k < n_u; ++k) g_jump[k] = d.basis.eval(table.times[k]);

  // per-subject partial rows, reduced in index order
  struct Part {
    int lo = 0;
    Eigen::MatrixXd rows;  // (hi-lo) x (1 + dim + dim^2)
  };
  std::vector<Part> parts(d.n());
  parallel_for(d.n(), [&](int i) {
    const SubjectRecord& s = d.subjects[i];
    auto [lo, hi] = table.windows[i];
    parts[i].lo = lo;
    parts[i].rows.resize(hi - lo, 1 + dim + dim * dim);
    if (hi == lo) return;
    const Eigen::MatrixXd& A = draws[i].draws;
    const Eigen::ArrayXd w = draws[i].weights.array();
    for (int k = lo; k < hi; ++k) {
      Eigen::ArrayXd c = (A * g_jump[k]).array();
      Eigen::ArrayXd e = (p.beta * c).exp() * w;
      double x = dim > 1 ? ext_x(s, table.times[k]) : 0.0;
      double factor = dim > 1 && p.beta_ext ? std::exp((*p.beta_ext)[0] * x) : 1.0;
      double s0 = factor * e.sum();
      auto row = parts[i].rows.row(k - lo);
      row[0] = s0;
      if (!need_moments) {
        row.tail(dim + dim * dim).setZero();
        continue;
      }
      double s1 = factor * (e * c).sum();
      row[1] = s1;
      if (dim > 1) {
        row[2] = x * s0;
        double s2 = factor * (e * c * c).sum();
        row[3] = s2;          // (0,0)
        row[4] = x * s1;      // (0,1)
        row[5] = x * s1;      // (1,0)
        row[6] = x * x * s0;  // (1,1)
      } else {
        double s2 = factor * (e * c * c).sum();
        row[2] = s2;
      }
    }
  });
  for (int i = 0; i < d.n(); ++i) {
    const auto& part = parts[i];
    for (int r = 0; r < part.rows.rows(); ++r) {
      int k = part.lo + r;
      acc.D[k] += part.rows(r, 0);
      acc.N1.row(k) += part.rows.row(r).segment(1, dim);
      acc.N2.row(k) += part.rows.row(r).tail(dim * dim);
    }
  }
  return acc;
}

SubjectMoments compute_subject_moments(const Dataset& d,
                                       const std::vector<PosteriorDraws>& draws) {
  const int n = d.n();
  SubjectMoments m;
  m.mean.resize(n);
  m.outer.resize(n);
  m.resid2.assign(n, 0.0);
  m.ess.assign(n, 0.0);
  parallel_for(n, [&](int i) {
    const Eigen::MatrixXd& A = draws[i].draws;
    const Eigen::VectorXd& w = draws[i].weights;
    m.mean[i] = A.transpose() * w;
    m.outer[i] = A.transpose() * w.asDiagonal() * A;
    m.ess[i] = draws[i].ess;
    const SubjectRecord& s = d.subjects[i];
    double r2 = 0.0;
    for (int j = 0; j < s.n_meas(); ++j) {
      Eigen::VectorXd g = d.basis.eval(s.meas_times[j]);
      double wj = s.meas_values[j];
      r2 += wj * wj - 2.0 * wj * g.dot(m.mean[i]) + g.dot(m.outer[i] * g);
    }
    m.resid2[i] = r2;
  });
  return m;
}

namespace {
std::vector<PosteriorDraws> all_draws(const Dataset& d, const JointParams& p,
                                      const McConfig& mc) {
  std::vector<PosteriorDraws> out(d.n());
  parallel_for(d.n(), [&](int i) {
    out[i] = sample_posterior(d.subjects[i], d.basis, p, mc);
  });
  return out;
}
}  // namespace

namespace {
ScoreVector scores_from_draws(const Dataset& d, const JointParams& p,
                              const std::vector<PosteriorDraws>& draws,
                              const EventTable& table, const SubjectMoments& moments) {
  auto acc = compute_risk_accums(d, p, draws, table);
  const int n_u = table.n_jumps();
  const int n_ext = p.n_ext();

  ScoreVector sv;
  sv.s_lambda.resize(n_u);
  for (int k = 0; k < n_u; ++k) sv.s_lambda[k] = 1.0 / p.hazard.sizes[k] - acc.D[k];

  sv.s_beta = 0.0;
  sv.s_beta_ext = Eigen::VectorXd::Zero(n_ext);
  for (int i = 0; i < d.n(); ++i) {
    const SubjectRecord& s = d.subjects[i];
    if (!s.event) continue;
    sv.s_beta += d.basis.eval(s.exit).dot(moments.mean[i]);
    if (n_ext > 0) sv.s_beta_ext[0] += ext_x(s, s.exit);
  }
  for (int k = 0; k < n_u; ++k) {
    sv.s_beta -= p.hazard.sizes[k] * acc.N1(k, 0);
    if (n_ext > 0) sv.s_beta_ext[0] -= p.hazard.sizes[k] * acc.N1(k, 1);
  }

  long long n_meas = 0;
  double resid_total = 0.0;
  for (int i = 0; i < d.n(); ++i) {
    n_meas += d.subjects[i].n_meas();
    resid_total += moments.resid2[i];
  }
  sv.s_sigma2 = resid_total / (2.0 * p.sigma2 * p.sigma2) - n_meas / (2.0 * p.sigma2);

  const int q = d.basis.q;
  Eigen::MatrixXd Sigma_inv =
      Eigen::LLT<Eigen::MatrixXd>(p.Sigma).solve(Eigen::MatrixXd::Identity(q, q));
  Eigen::VectorXd dev = Eigen::VectorXd::Zero(q);
  Eigen::MatrixXd Sdev = Eigen::MatrixXd::Zero(q, q);
  for (int i = 0; i < d.n(); ++i) {
    dev += moments.mean[i] - p.mu;
    Eigen::MatrixXd Si = moments.outer[i] - moments.mean[i] * p.mu.transpose() -
                         p.mu * moments.mean[i].transpose() + p.mu * p.mu.transpose();
    Sdev += Si - p.Sigma;
  }
  sv.s_mu = Sigma_inv * dev;
  sv.s_Sigma = 0.5 * Sigma_inv * Sdev * Sigma_inv;
  return sv;
}
}  // namespace

ScoreVector modified_scores(const Dataset& d, const JointParams& p, const McConfig& mc) {
  check_params(p, d.basis.q);
  EventTable table = build_event_table(d);
  require_aligned(p.hazard, table);
  auto draws = all_draws(d, p, mc);
  auto moments = compute_subject_moments(d, draws);
  return scores_from_draws(d, p, draws, table, moments);
}

ScoreVector full_scores(const Dataset& d, const JointParams& p, const McConfig& mc,
                        const PopulationOracle& pop) {
  if (d.has_ext())
    throw ConfigError("full_scores: external covariates are not supported by the population oracle");
  check_params(p, d.basis.q);
  EventTable table = build_event_table(d);
  require_aligned(p.hazard, table);

  // The full-likelihood conditional of the random effects carries the
  // pre-entry hazard mass: its survival tilt runs over jumps in (0, z_i]
  // rather than (t_i, z_i]. The subject-specific prior-normalization terms
  // are replaced by their enrolled-population expectations from the oracle.
  const int n = d.n();
  const int n_u = table.n_jumps();
  const int q = d.basis.q;
  std::vector<Eigen::VectorXd> g_jump(n_u);
  for (int k = 0; k < n_u; ++k) g_jump[k] = d.basis.eval(table.times[k]);

  struct Part {
    Eigen::VectorXd mean;          // E[A | o]
    Eigen::MatrixXd outer;         // E[A A' | o]
    double resid2 = 0.0;
    double beta_jump_sum = 0.0;    // sum_{k: y_k <= z} lambda_k E[c exp(beta c)]
    Eigen::VectorXd d_row;         // per jump: E[exp(beta c)] for y_k <= z
    int hi = 0;
  };
  std::vector<Part> parts(n);
  parallel_for(n, [&](int i) {
    const SubjectRecord& s = d.subjects[i];
    SubjectRecord from_zero = s;
    from_zero.entry = 0.0;
    Rng rng = subject_rng(mc.seed, s.id, mc.stream);
    ConjugateParts conj = lmm_posterior_parts(s, d.basis, p);
    Eigen::MatrixXd A = gaussian_draws(conj, mc.draws, rng);
    Eigen::VectorXd slw = survival_log_weights(A, from_zero, d.basis, p);
    double lse = logsumexp(slw);
    if (!std::isfinite(lse))
      throw NumericError("degenerate full-posterior weights for subject " + s.id);
    Eigen::VectorXd w = (slw.array() - lse).exp();

    Part& part = parts[i];
    part.mean = A.transpose() * w;
    part.outer = A.transpose() * w.asDiagonal() * A;
    double r2 = 0.0;
    for (int j = 0; j < s.n_meas(); ++j) {
      Eigen::VectorXd g = d.basis.eval(s.meas_times[j]);
      double wj = s.meas_values[j];
      r2 += wj * wj - 2.0 * wj * g.dot(part.mean) + g.dot(part.outer * g);
    }
    part.resid2 = r2;
    part.hi = table.windows[i].second;
    part.d_row = Eigen::VectorXd::Zero(part.hi);
    const Eigen::ArrayXd wa = w.array();
    for (int k = 0; k < part.hi; ++k) {
      Eigen::ArrayXd c = (A * g_jump[k]).array();
      Eigen::ArrayXd e = (p.beta * c).exp() * wa;
      part.d_row[k] = e.sum();
      part.beta_jump_sum += p.hazard.sizes[k] * (e * c).sum();
    }
  });

  ScoreVector sv;
  sv.s_lambda = Eigen::VectorXd::Zero(n_u);
  sv.s_beta = 0.0;
  double resid_total = 0.0;
  long long n_meas = 0;
  Eigen::VectorXd dev = Eigen::VectorXd::Zero(q);
  Eigen::MatrixXd Sdev = Eigen::MatrixXd::Zero(q, q);
  Eigen::MatrixXd pop_moment = pop.centered_moment(p.mu);
  for (int i = 0; i < n; ++i) {
    const Part& part = parts[i];
    const SubjectRecord& s = d.subjects[i];
    if (s.event) sv.s_beta += d.basis.eval(s.exit).dot(part.mean);
    sv.s_beta -= part.beta_jump_sum;
    for (int k = 0; k < part.hi; ++k) sv.s_lambda[k] -= part.d_row[k];
    resid_total += part.resid2;
    n_meas += s.n_meas();
    dev += part.mean - pop.mu_star;
    Eigen::MatrixXd Si = part.outer - part.mean * p.mu.transpose() -
                         p.mu * part.mean.transpose() + p.mu * p.mu.transpose();
    Sdev += Si - pop_moment;
  }
  sv.s_beta += n * pop.q3_population(p.hazard, p.beta, d.basis);
  for (int k = 0; k < n_u; ++k)
    sv.s_lambda[k] += 1.0 / p.hazard.sizes[k] +
                      n * pop.exp_tilt_after(table.times[k], p.beta, d.basis);
  sv.s_sigma2 = resid_total / (2.0 * p.sigma2 * p.sigma2) - n_meas / (2.0 * p.sigma2);
  Eigen::MatrixXd Sigma_inv =
      Eigen::LLT<Eigen::MatrixXd>(p.Sigma).solve(Eigen::MatrixXd::Identity(q, q));
  sv.s_mu = Sigma_inv * dev;
  sv.s_Sigma = 0.5 * Sigma_inv * Sdev * Sigma_inv;
  return sv;
}

FdReport finite_difference_check(const Dataset& d, const JointParams& p, const McConfig& mc,
                                 double eps, int n_lambda_probe, std::uint64_t probe_seed) {
  if (!(eps > 0.0)) throw ConfigError("finite_difference_check: eps must be positive");
  ScoreVector sv = modified_scores(d, p, mc);
  auto value = [&](const JointParams& q) {
    return log_modified_likelihood(d, q, mc, &p);
  };
  FdReport rep;
  auto add = [&](const std::string& block, const std::string& name, double analytic,
                 double fd) {
    double denom = std::max({std::abs(analytic), std::abs(fd), 1e-8});
    FdEntry e{block, name, analytic, fd, std::abs(analytic - fd) / denom};
    rep.entries.push_back(e);
    rep.max_rel_err = std::max(rep.max_rel_err, e.rel_err);
    if (block == "lambda")
      rep.max_rel_err_lambda = std::max(rep.max_rel_err_lambda, e.rel_err);
    else
      rep.max_rel_err_euclidean = std::max(rep.max_rel_err_euclidean, e.rel_err);
  };
  auto central = [&](const std::function<void(JointParams&, double)>& bump, double h) {
    JointParams hi = p, lo = p;
    bump(hi, h);
    bump(lo, -h);
    return (value(hi) - value(lo)) / (2.0 * h);
  };

  {
    double h = eps * std::max(1.0, std::abs(p.beta));
    add("beta", "beta", sv.s_beta,
        central([](JointParams& q, double dh) { q.beta += dh; }, h));
  }
  for (int e = 0; e < p.n_ext(); ++e) {
    double h = eps * std::max(1.0, std::abs((*p.beta_ext)[e]));
    add("beta", "beta_ext_" + std::to_string(e), sv.s_beta_ext[e],
        central([e](JointParams& q, double dh) { (*q.beta_ext)[e] += dh; }, h));
  }
  {
    double h = eps * std::max(0.01, p.sigma2);
    add("sigma2", "sigma2", sv.s_sigma2,
        central([](JointParams& q, double dh) { q.sigma2 += dh; }, h));
  }
  for (int j = 0; j < d.basis.q; ++j) {
    double h = eps * std::max(1.0, std::abs(p.mu[j]));
    add("mu", "mu_" + std::to_string(j), sv.s_mu[j],
        central([j](JointParams& q, double dh) { q.mu[j] += dh; }, h));
  }
  for (int a = 0; a < d.basis.q; ++a) {
    for (int b = 0; b <= a; ++b) {
      double h = eps * std::max(0.01, std::abs(p.Sigma(a, b)));
      double analytic = a == b ? sv.s_Sigma(a, a) : 2.0 * sv.s_Sigma(a, b);
      add("Sigma", "Sigma_" + std::to_string(a) + std::to_string(b), analytic,
          central(
              [a, b](JointParams& q, double dh) {
                q.Sigma(a, b) += dh;
                if (a != b) q.Sigma(b, a) += dh;
              },
              h));
    }
  }
  const int n_u = p.hazard.size();
  std::vector<int> ks;
  if (n_u <= n_lambda_probe) {
    ks.resize(n_u);
    std::iota(ks.begin(), ks.end(), 0);
  } else {
    Rng rng(derive_seed(probe_seed, fnv1a64("lambda-probe")));
    std::vector<char> used(n_u, 0);
    while (static_cast<int>(ks.size()) < n_lambda_probe) {
      int k = rng.uniform_int(n_u);
      if (!used[k]) {
        used[k] = 1;
        ks.push_back(k);
      }
    }
    std::sort(ks.begin(), ks.end());
  }
  for (int k : ks) {
    double lam = p.hazard.sizes[k];
    double h = eps * std::max(std::abs(lam), 1e-2);
    if (lam - h <= 0.0) h = lam / 2.0;
    add("lambda", "lambda_" + std::to_string(k), sv.s_lambda[k],
        central([k](JointParams& q, double dh) { q.hazard.sizes[k] += dh; }, h));
  }
  return rep;
}

}  // namespace ltrcjm
