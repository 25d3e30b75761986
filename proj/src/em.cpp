#include "ltrcjm/em.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include "ltrcjm/parallel.hpp"
#include "ltrcjm/validate.hpp"

namespace ltrcjm {

namespace {

std::vector<double> lambda_from_accums(const EventTable& table, const RiskAccums& acc) {
  const int n_u = table.n_jumps();
  std::vector<double> lambda(n_u);
  for (int k = 0; k < n_u; ++k) {
    if (table.risk_count[k] == 0)
      throw ValidationError("empty risk set at event time " + std::to_string(table.times[k]));
    if (!(acc.D[k] > 0.0) || !std::isfinite(acc.D[k]))
      throw NumericError("non-finite risk-set expectation at event time " +
                         std::to_string(table.times[k]));
    lambda[k] = 1.0 / acc.D[k];
  }
  return lambda;
}

// Profiled score and Hessian of (beta, beta_ext) given risk accumulators.
struct ProfileScore {
  Eigen::VectorXd s;
  Eigen::MatrixXd H;
};

ProfileScore profile_score(const Dataset& d, const EventTable& table,
                           const SubjectMoments& moments, const RiskAccums& acc,
                           const JointParams& p) {
  const int dim = acc.dim;
  ProfileScore ps;
  ps.s = Eigen::VectorXd::Zero(dim);
  ps.H = Eigen::MatrixXd::Zero(dim, dim);
  for (int k = 0; k < table.n_jumps(); ++k) {
    int i = table.subject_of[k];
    const SubjectRecord& s = d.subjects[i];
    Eigen::VectorXd own(dim);
    own[0] = d.basis.eval(s.exit).dot(moments.mean[i]);
    if (dim > 1) own[1] = s.ext_value(s.exit);
    Eigen::VectorXd ratio = acc.N1.row(k).transpose() / acc.D[k];
    Eigen::MatrixXd second =
        Eigen::Map<const Eigen::MatrixXd>(acc.N2.row(k).data(), dim, dim) / acc.D[k];
    ps.s += own - ratio;
    ps.H += ratio * ratio.transpose() - second;
  }
  return ps;
}

NewtonResult newton_from_accums(const Dataset& d, const std::vector<PosteriorDraws>& draws,
                                const EventTable& table, const SubjectMoments& moments,
                                const RiskAccums& acc, const JointParams& p,
                                const EmConfig& cfg) {
  const int dim = acc.dim;
  ProfileScore ps = profile_score(d, table, moments, acc, p);
  Eigen::VectorXd theta(dim);
  theta[0] = p.beta;
  if (dim > 1) theta.tail(dim - 1) = *p.beta_ext;

  if (dim == 1) {
    if (std::abs(ps.H(0, 0)) < 1e-12) throw NumericError("newton_beta: singular Hessian");
  } else {
    Eigen::FullPivLU<Eigen::MatrixXd> lu(ps.H);
    if (!lu.isInvertible()) throw NumericError("newton_beta: singular Hessian");
  }
  Eigen::VectorXd step = -ps.H.fullPivLu().solve(ps.s);

  NewtonResult out;
  out.score_norm = ps.s.norm();
  double damp = cfg.damping;
  // trust region: a nearly flat profiled Hessian must not launch the
  // coefficient across the parameter space in one move
  double max_move = 2.0 * (1.0 + theta.lpNorm<Eigen::Infinity>());
  while (damp * step.lpNorm<Eigen::Infinity>() > max_move) damp *= 0.5;
  Eigen::VectorXd cand = theta + damp * step;
  double step_scale = step.norm() / (1.0 + theta.norm());
  for (int attempt = 0; attempt < 30; ++attempt) {
    cand = theta + damp * step;
    if (!cand.allFinite()) {
      damp *= 0.5;
      continue;
    }
    // moves at the tolerance scale cannot overshoot destructively; skip the
    // candidate-score pass
    if (step_scale * damp < 1e-5) break;
    JointParams trial = p;
    trial.beta = cand[0];
    if (dim > 1) *trial.beta_ext = cand.tail(dim - 1);
    RiskAccums acc_c = compute_risk_accums(d, trial, draws, table);
    ProfileScore ps_c = profile_score(d, table, moments, acc_c, trial);
    bool flipped = ps_c.s.dot(step) < 0.0;
    bool larger = ps_c.s.norm() > ps.s.norm();
    if (flipped && larger) {
      damp *= 0.5;
      continue;
    }
    break;
  }
  if (!cand.allFinite()) throw NumericError("newton_beta: non-finite step");
  out.beta = cand[0];
  if (dim > 1) out.beta_ext = cand.tail(dim - 1);
  out.damping_used = damp;
  return out;
}

double block_change(double a, double b) { return std::abs(a - b) / (1.0 + std::abs(b)); }

double block_change(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  double num = (a - b).lpNorm<Eigen::Infinity>();
  return num / (1.0 + b.lpNorm<Eigen::Infinity>());
}

double block_change(const std::vector<double>& a, const std::vector<double>& b) {
  double num = 0.0, den = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    num = std::max(num, std::abs(a[k] - b[k]));
    den = std::max(den, std::abs(b[k]));
  }
  return num / (1.0 + den);
}

// Projects onto matrices with eigenvalues >= floor; reports whether any
// eigenvalue was clipped.
Eigen::MatrixXd spd_floor(const Eigen::MatrixXd& m, double floor, bool* clipped) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m);
  Eigen::VectorXd ev = es.eigenvalues();
  bool any = false;
  for (int i = 0; i < ev.size(); ++i)
    if (ev[i] < floor) {
      ev[i] = floor;
      any = true;
    }
  if (clipped) *clipped = any;
  if (!any) return m;
  return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

// Projects a given hazard onto the dataset's event times by increments of
// its cumulative between consecutive distinct jump times; tied event times
// split the increment evenly.
StepHazard rebase_hazard(const StepHazard& h, const EventTable& table) {
  const int n_u = table.n_jumps();
  StepHazard out;
  out.times = table.times;
  out.sizes.resize(n_u);
  int k = 0;
  double prev_cum = 0.0;
  while (k < n_u) {
    int j = k;
    while (j < n_u && table.times[j] == table.times[k]) ++j;
    double cum = h.cumulative(table.times[k]);
    double inc = (cum - prev_cum) / (j - k);
    for (int m = k; m < j; ++m) out.sizes[m] = std::max(inc, 1e-8);
    prev_cum = cum;
    k = j;
  }
  return out;
}

}  // namespace

std::vector<PosteriorDraws> e_step(const Dataset& d, const JointParams& p,
                                   const EmConfig& cfg, int iteration) {
  check_params(p, d.basis.q);
  McConfig mc{cfg.mc_draws, cfg.seed,
              cfg.refresh_draws ? static_cast<std::uint64_t>(iteration) : 0ull};
  std::vector<PosteriorDraws> out(d.n());
  parallel_for(d.n(), [&](int i) {
    out[i] = sample_posterior(d.subjects[i], d.basis, p, mc);
  });
  return out;
}

std::vector<double> m_step_lambda(const Dataset& d, const std::vector<PosteriorDraws>& draws,
                                  const JointParams& p) {
  EventTable table = build_event_table(d);
  RiskAccums acc = compute_risk_accums(d, p, draws, table, /*need_moments=*/false);
  return lambda_from_accums(table, acc);
}

double m_step_sigma2(const Dataset& d, const std::vector<PosteriorDraws>& draws) {
  auto moments = compute_subject_moments(d, draws);
  long long n_meas = 0;
  double total = 0.0;
  for (int i = 0; i < d.n(); ++i) {
    n_meas += d.subjects[i].n_meas();
    total += moments.resid2[i];
  }
  if (n_meas == 0) throw ValidationError("sigma2 undefined: dataset has no measurements");
  return total / static_cast<double>(n_meas);
}

std::pair<Eigen::VectorXd, Eigen::MatrixXd> m_step_mu_Sigma(
    const Dataset& d, const std::vector<PosteriorDraws>& draws) {
  if (d.n() < 1) throw ValidationError("m_step_mu_Sigma: empty dataset");
  auto moments = compute_subject_moments(d, draws);
  const int q = d.basis.q;
  Eigen::VectorXd mu = Eigen::VectorXd::Zero(q);
  Eigen::MatrixXd second = Eigen::MatrixXd::Zero(q, q);
  for (int i = 0; i < d.n(); ++i) {
    mu += moments.mean[i];
    second += moments.outer[i];
  }
  mu /= d.n();
  second /= d.n();
  Eigen::MatrixXd Sigma = second - mu * mu.transpose();
  Sigma = 0.5 * (Sigma + Sigma.transpose());
  if (!mu.allFinite() || !Sigma.allFinite())
    throw NumericError("m_step_mu_Sigma: non-finite moment estimate");
  return {mu, Sigma};
}

NewtonResult newton_beta(const Dataset& d, const std::vector<PosteriorDraws>& draws,
                         const JointParams& p, const EmConfig& cfg) {
  EventTable table = build_event_table(d);
  auto moments = compute_subject_moments(d, draws);
  RiskAccums acc = compute_risk_accums(d, p, draws, table);
  return newton_from_accums(d, draws, table, moments, acc, p, cfg);
}

namespace {
// Measurement-only Gaussian LMM maximum likelihood by exact EM, polishing
// rough initial moments. No survival terms, no Monte Carlo.
void lmm_ml_polish(const Dataset& d, Eigen::VectorXd& mu, Eigen::MatrixXd& Sigma,
                   double& sigma2) {
  const int q = d.basis.q;
  struct Obs {
    Eigen::MatrixXd G;
    Eigen::VectorXd w;
  };
  std::vector<Obs> obs;
  long long n_meas = 0;
  for (const auto& s : d.subjects) {
    if (s.n_meas() == 0) continue;
    Obs o;
    o.G.resize(s.n_meas(), q);
    o.w.resize(s.n_meas());
    for (int j = 0; j < s.n_meas(); ++j) {
      o.G.row(j) = d.basis.eval(s.meas_times[j]).transpose();
      o.w[j] = s.meas_values[j];
    }
    obs.push_back(std::move(o));
    n_meas += s.n_meas();
  }
  if (obs.empty()) return;
  const double n_sub = static_cast<double>(obs.size());
  for (int it = 0; it < 200; ++it) {
    Eigen::MatrixXd Sigma_inv = Sigma.llt().solve(Eigen::MatrixXd::Identity(q, q));
    Eigen::VectorXd mu_new = Eigen::VectorXd::Zero(q);
    Eigen::MatrixXd S2 = Eigen::MatrixXd::Zero(q, q);
    double rss = 0.0;
    std::vector<Eigen::VectorXd> means(obs.size());
    std::vector<Eigen::MatrixXd> covs(obs.size());
    for (std::size_t i = 0; i < obs.size(); ++i) {
      Eigen::MatrixXd prec = Sigma_inv + obs[i].G.transpose() * obs[i].G / sigma2;
      Eigen::LLT<Eigen::MatrixXd> llt(prec);
      covs[i] = llt.solve(Eigen::MatrixXd::Identity(q, q));
      means[i] = llt.solve(Sigma_inv * mu + obs[i].G.transpose() * obs[i].w / sigma2);
      mu_new += means[i];
    }
    mu_new /= n_sub;
    for (std::size_t i = 0; i < obs.size(); ++i) {
      Eigen::VectorXd dlt = means[i] - mu_new;
      S2 += covs[i] + dlt * dlt.transpose();
      Eigen::VectorXd r = obs[i].w - obs[i].G * means[i];
      rss += r.squaredNorm() + (obs[i].G * covs[i] * obs[i].G.transpose()).trace();
    }
    Eigen::MatrixXd Sigma_new = S2 / n_sub;
    double sigma2_new = std::max(rss / n_meas, 1e-12);
    double rel = (mu_new - mu).norm() + (Sigma_new - Sigma).norm() +
                 std::abs(sigma2_new - sigma2);
    mu = mu_new;
    Sigma = spd_floor(Sigma_new, 1e-10, nullptr);
    sigma2 = sigma2_new;
    if (rel < 1e-10) break;
  }
}
}  // namespace

JointParams auto_init(const Dataset& d) {
  require_valid(d);
  EventTable table = build_event_table(d);
  const int q = d.basis.q;

  std::set<double> distinct;
  for (const auto& s : d.subjects)
    for (double t : s.meas_times) distinct.insert(t);
  if (static_cast<int>(distinct.size()) < q)
    throw ValidationError(
        "auto_init: fewer distinct measurement times than basis dimension; supply an "
        "explicit initialization");

  // per-subject least squares, pooled residual variance
  std::vector<Eigen::VectorXd> a_hat;
  std::vector<Eigen::MatrixXd> gtg_inv;
  double ssr = 0.0;
  long long ssr_dof = 0;
  double ssr_all = 0.0;
  long long n_all = 0;
  // pooled fallback pieces
  Eigen::MatrixXd GtG_pool = Eigen::MatrixXd::Zero(q, q);
  Eigen::VectorXd Gtw_pool = Eigen::VectorXd::Zero(q);
  double w2_pool = 0.0;
  for (const auto& s : d.subjects) {
    const int ni = s.n_meas();
    if (ni == 0) continue;
    Eigen::MatrixXd G(ni, q);
    Eigen::VectorXd w(ni);
    for (int j = 0; j < ni; ++j) {
      G.row(j) = d.basis.eval(s.meas_times[j]).transpose();
      w[j] = s.meas_values[j];
    }
    GtG_pool += G.transpose() * G;
    Gtw_pool += G.transpose() * w;
    w2_pool += w.squaredNorm();
    n_all += ni;
    if (ni < q) continue;
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(G);
    if (qr.rank() < q) continue;
    Eigen::VectorXd a = qr.solve(w);
    a_hat.push_back(a);
    gtg_inv.push_back((G.transpose() * G).llt().solve(Eigen::MatrixXd::Identity(q, q)));
    if (ni > q) {
      ssr += (w - G * a).squaredNorm();
      ssr_dof += ni - q;
    }
  }
  if (n_all == 0) throw ValidationError("auto_init: dataset has no measurements");

  double sigma2;
  if (ssr_dof > 0) {
    sigma2 = ssr / static_cast<double>(ssr_dof);
  } else {
    Eigen::VectorXd a_pool = GtG_pool.ldlt().solve(Gtw_pool);
    double ssr_pool = w2_pool - a_pool.dot(Gtw_pool);
    sigma2 = ssr_pool / std::max<long long>(1, n_all - q);
  }
  sigma2 = std::max(sigma2, 1e-12);

  JointParams p;
  p.beta = 0.0;
  if (d.has_ext()) p.beta_ext = Eigen::VectorXd::Zero(1);
  p.sigma2 = sigma2;
  if (a_hat.size() >= 2) {
    Eigen::VectorXd mu = Eigen::VectorXd::Zero(q);
    for (const auto& a : a_hat) mu += a;
    mu /= static_cast<double>(a_hat.size());
    Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(q, q);
    Eigen::MatrixXd noise = Eigen::MatrixXd::Zero(q, q);
    for (std::size_t i = 0; i < a_hat.size(); ++i) {
      cov += (a_hat[i] - mu) * (a_hat[i] - mu).transpose();
      noise += gtg_inv[i];
    }
    cov /= static_cast<double>(a_hat.size() - 1);
    noise *= sigma2 / static_cast<double>(a_hat.size());
    p.mu = mu;
    p.Sigma = spd_floor(cov - noise, 1e-8, nullptr) +
              1e-8 * Eigen::MatrixXd::Identity(q, q);
  } else {
    p.mu = GtG_pool.ldlt().solve(Gtw_pool);
    p.Sigma = std::max(sigma2, 1e-2) * Eigen::MatrixXd::Identity(q, q);
  }
  // the moment estimates are noise-dominated when windows are short; polish
  // them by exact maximum likelihood on the measurement model alone
  lmm_ml_polish(d, p.mu, p.Sigma, p.sigma2);
  p.Sigma += 1e-8 * Eigen::MatrixXd::Identity(q, q);

  p.hazard.times = table.times;
  p.hazard.sizes.resize(table.n_jumps());
  for (int k = 0; k < table.n_jumps(); ++k) {
    if (table.risk_count[k] == 0)
      throw ValidationError("empty risk set at event time " + std::to_string(table.times[k]));
    p.hazard.sizes[k] = 1.0 / table.risk_count[k];
  }
  return p;
}

FitReport fit(const Dataset& d, const std::optional<JointParams>& init, const EmConfig& cfg) {
  require_valid(d);
  if (cfg.max_iter < 1 || !(cfg.tol > 0.0) || cfg.mc_draws < 1)
    throw ConfigError("fit: invalid EM configuration");
  EventTable table = build_event_table(d);
  if (table.n_jumps() == 0) throw ValidationError("fit: dataset has no uncensored events");

  JointParams params = init ? *init : auto_init(d);
  if (init && !hazard_aligned(params.hazard, table)) params.hazard = rebase_hazard(params.hazard, table);
  check_params(params, d.basis.q);
  if (d.has_ext() && !params.beta_ext) params.beta_ext = Eigen::VectorXd::Zero(1);

  FitReport report;
  report.converged = false;

  auto snapshot_of = [&](const JointParams& p) {
    IterationSnapshot s;
    s.beta = p.beta;
    if (p.beta_ext) s.beta_ext = *p.beta_ext;
    s.sigma2 = p.sigma2;
    s.mu = p.mu;
    s.Sigma = p.Sigma;
    s.hazard_total = p.hazard.total();
    return s;
  };

  // with a held draw stream the standard normals are cached once and
  // re-centered through the current proposal each iteration
  std::vector<Eigen::MatrixXd> z_cache(cfg.refresh_draws ? 0 : d.n());
  auto iteration_draws = [&](int iteration) {
    if (cfg.refresh_draws) return e_step(d, params, cfg, iteration);
    std::vector<PosteriorDraws> out(d.n());
    parallel_for(d.n(), [&](int i) {
      if (z_cache[i].size() == 0) {
        Rng rng = subject_rng(cfg.seed, d.subjects[i].id, 0);
        z_cache[i] = standard_normal_matrix(cfg.mc_draws, d.basis.q, rng);
      }
      out[i] = posterior_from_normals(d.subjects[i], d.basis, params, z_cache[i]);
    });
    return out;
  };

  int iter = 0;
  try {
    for (iter = 0; iter < cfg.max_iter; ++iter) {
      auto draws = iteration_draws(iter);
      auto moments = compute_subject_moments(d, draws);
      RiskAccums acc = compute_risk_accums(d, params, draws, table);

      double loglik = 0.0;
      double min_ess = kInf, sum_ess = 0.0;
      for (int i = 0; i < d.n(); ++i) {
        loglik += draws[i].log_marginal + draws[i].log_mean_tilt;
        if (d.subjects[i].event) {
          double jump = params.hazard.sizes[table.event_jump[i]];
          loglik += jump > 0.0 ? std::log(jump) : -kInf;
        }
        min_ess = std::min(min_ess, draws[i].ess);
        sum_ess += draws[i].ess;
      }

      JointParams next = params;
      next.hazard.sizes = lambda_from_accums(table, acc);
      next.sigma2 = m_step_sigma2(d, draws);
      if (next.sigma2 < cfg.sigma2_floor) {
        next.sigma2 = cfg.sigma2_floor;
        report.diagnostics.sigma2_floored = true;
      }
      auto [mu_new, Sigma_new] = m_step_mu_Sigma(d, draws);
      bool clipped = false;
      next.mu = mu_new;
      next.Sigma = spd_floor(Sigma_new, cfg.var_floor, &clipped);
      if (clipped) report.diagnostics.Sigma_floored = true;

      NewtonResult nr{};
      for (int step = 0; step < cfg.newton_steps_per_iter; ++step) {
        JointParams at = next;
        at.beta = step == 0 ? params.beta : next.beta;
        if (params.beta_ext) at.beta_ext = step == 0 ? *params.beta_ext : *next.beta_ext;
        RiskAccums acc_step =
            step == 0 ? std::move(acc) : compute_risk_accums(d, at, draws, table);
        nr = newton_from_accums(d, draws, table, moments, acc_step, at, cfg);
        next.beta = nr.beta;
        if (next.beta_ext) *next.beta_ext = nr.beta_ext;
      }
      report.diagnostics.score_beta_exit = nr.score_norm;
      report.diagnostics.min_ess_exit = min_ess;

      double rel = block_change(next.beta, params.beta);
      if (params.beta_ext) rel = std::max(rel, block_change(*next.beta_ext, *params.beta_ext));
      rel = std::max(rel, block_change(next.sigma2, params.sigma2));
      rel = std::max(rel, block_change(next.mu, params.mu));
      rel = std::max(rel, block_change(Eigen::VectorXd(next.Sigma.reshaped()),
                                       Eigen::VectorXd(params.Sigma.reshaped())));
      rel = std::max(rel, block_change(next.hazard.sizes, params.hazard.sizes));
      if (!std::isfinite(rel)) throw NumericError("non-finite parameter change");

      IterationSnapshot snap = snapshot_of(next);
      snap.iter = iter;
      snap.loglik = loglik;
      snap.rel_change = rel;
      snap.min_ess = min_ess;
      snap.mean_ess = sum_ess / d.n();
      report.trace.push_back(std::move(snap));

      params = std::move(next);
      if (rel <= cfg.tol) {
        report.converged = true;
        ++iter;
        break;
      }
    }
  } catch (const NumericError& e) {
    report.diagnostics.divergence_reason = e.what();
    report.converged = false;
  }
  report.iterations = std::min(iter, cfg.max_iter);
  report.params = params;
  if (report.diagnostics.divergence_reason.empty()) {
    McConfig mc{cfg.mc_draws, cfg.seed,
                cfg.refresh_draws ? static_cast<std::uint64_t>(report.iterations) : 0ull};
    report.loglik = log_modified_likelihood(d, params, mc);
  } else {
    report.loglik = -kInf;
  }
  return report;
}

}  // namespace ltrcjm
