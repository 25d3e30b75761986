#include "ltrcjm/baseline.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/Dense>

#include "ltrcjm/validate.hpp"

namespace ltrcjm {

StepHazard nelson_aalen_ltrc(const Dataset& d) {
  auto times = uncensored_times(d);
  if (times.empty()) throw ValidationError("nelson_aalen_ltrc: no uncensored events");
  StepHazard h;
  std::size_t k = 0;
  while (k < times.size()) {
    std::size_t j = k;
    while (j < times.size() && times[j] == times[k]) ++j;
    double y = times[k];
    int at_risk = static_cast<int>(risk_set(d, y).size());
    if (at_risk == 0)
      throw ValidationError("nelson_aalen_ltrc: empty risk set at event time " +
                            std::to_string(y));
    h.times.push_back(y);
    h.sizes.push_back(static_cast<double>(j - k) / at_risk);
    k = j;
  }
  return h;
}

CoxFit cox_partial_ltrc(const Dataset& d, const CovariatePath& path, int p) {
  if (p < 1) throw ConfigError("cox_partial_ltrc: need p >= 1 covariates");
  EventTable table = build_event_table(d);
  const int n_u = table.n_jumps();
  if (n_u == 0) throw ValidationError("cox_partial_ltrc: no uncensored events");

  // risk membership per jump: subjects j with k inside window(j)
  std::vector<std::vector<int>> risk(n_u);
  for (int i = 0; i < d.n(); ++i) {
    auto [lo, hi] = table.windows[i];
    for (int k = lo; k < hi; ++k) risk[k].push_back(i);
  }
  for (int k = 0; k < n_u; ++k)
    if (risk[k].empty())
      throw ValidationError("cox_partial_ltrc: empty risk set at event time " +
                            std::to_string(table.times[k]));

  // covariate values at event times, cached per (jump, risk member)
  std::vector<Eigen::MatrixXd> X(n_u);
  for (int k = 0; k < n_u; ++k) {
    X[k].resize(static_cast<int>(risk[k].size()), p);
    for (std::size_t r = 0; r < risk[k].size(); ++r) {
      Eigen::VectorXd x = path(risk[k][r], table.times[k]);
      if (x.size() != p) throw ConfigError("cox_partial_ltrc: covariate path has wrong dimension");
      X[k].row(static_cast<int>(r)) = x.transpose();
    }
  }
  std::vector<int> own_row(n_u, -1);
  for (int k = 0; k < n_u; ++k) {
    int subj = table.subject_of[k];
    for (std::size_t r = 0; r < risk[k].size(); ++r)
      if (risk[k][r] == subj) own_row[k] = static_cast<int>(r);
    if (own_row[k] < 0)
      throw ValidationError("cox_partial_ltrc: event subject not in its own risk set at time " +
                            std::to_string(table.times[k]));
  }

  auto loglik_at = [&](const Eigen::VectorXd& beta) {
    double ll = 0.0;
    for (int k = 0; k < n_u; ++k) {
      Eigen::ArrayXd eta = (X[k] * beta).array();
      double mx = eta.maxCoeff();
      ll += eta[own_row[k]] - (mx + std::log((eta - mx).exp().sum()));
    }
    return ll;
  };

  Eigen::VectorXd beta = Eigen::VectorXd::Zero(p);
  double ll = loglik_at(beta);
  Eigen::MatrixXd info(p, p);
  int it = 0;
  for (; it < 100; ++it) {
    Eigen::VectorXd score = Eigen::VectorXd::Zero(p);
    info.setZero();
    for (int k = 0; k < n_u; ++k) {
      Eigen::ArrayXd e = (X[k] * beta).array().exp();
      double s0 = e.sum();
      Eigen::VectorXd s1 = X[k].transpose() * e.matrix();
      Eigen::MatrixXd s2 = X[k].transpose() * e.matrix().asDiagonal() * X[k];
      Eigen::VectorXd xbar = s1 / s0;
      score += X[k].row(own_row[k]).transpose() - xbar;
      info += s2 / s0 - xbar * xbar.transpose();
    }
    if (score.lpNorm<Eigen::Infinity>() < 1e-10) break;
    Eigen::LLT<Eigen::MatrixXd> llt(info);
    if (llt.info() != Eigen::Success)
      throw NumericError("cox_partial_ltrc: singular information matrix");
    Eigen::VectorXd step = llt.solve(score);
    double damp = 1.0;
    for (int half = 0; half < 30; ++half) {
      Eigen::VectorXd cand = beta + damp * step;
      double ll_c = loglik_at(cand);
      if (std::isfinite(ll_c) && ll_c >= ll - 1e-12) {
        beta = cand;
        ll = ll_c;
        break;
      }
      damp *= 0.5;
      if (half == 29) throw NumericError("cox_partial_ltrc: line search failed");
    }
  }

  CoxFit fit;
  fit.coef = beta;
  fit.loglik = ll;
  fit.iterations = it;
  fit.information = info;

  // Breslow baseline aggregated per distinct time
  int k = 0;
  while (k < n_u) {
    int j = k;
    while (j < n_u && table.times[j] == table.times[k]) ++j;
    double denom = (X[k] * beta).array().exp().sum();
    fit.baseline.times.push_back(table.times[k]);
    fit.baseline.sizes.push_back(static_cast<double>(j - k) / denom);
    k = j;
  }
  return fit;
}

LvcfFit lvcf_two_stage(const Dataset& d) {
  for (const auto& s : d.subjects)
    if (s.n_meas() == 0)
      throw ValidationError("lvcf_two_stage: subject " + s.id + " has no measurements");
  LvcfFit out;
  bool* filled = &out.backward_filled;
  CovariatePath path = [&d, filled](int i, double t) {
    const auto& s = d.subjects[i];
    auto it = std::upper_bound(s.meas_times.begin(), s.meas_times.end(), t);
    Eigen::VectorXd x(1);
    if (it == s.meas_times.begin()) {
      *filled = true;  // needed before the first measurement: fill forward from it
      x[0] = s.meas_values.front();
    } else {
      x[0] = s.meas_values[std::distance(s.meas_times.begin(), it) - 1];
    }
    return x;
  };
  out.cox = cox_partial_ltrc(d, path, 1);
  return out;
}

}  // namespace ltrcjm
