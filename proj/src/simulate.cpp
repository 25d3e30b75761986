#include "ltrcjm/simulate.hpp"

#include <cmath>
#include <cstdio>

#include <Eigen/Cholesky>

namespace ltrcjm {

namespace {

// Cumulative hazard of the no-change-point model at y given a:
// H0(y) = baseline * exp(b0) * (exp(b1 y) - 1) / b1 with b = beta * a.
// Inverse at level L; +inf when the finite total mass is exceeded.
double invert_h0(double level, double b0, double b1, double baseline) {
  double scale = baseline * std::exp(b0);
  if (std::abs(b1) < 1e-8) return level / scale;
  double arg = level * b1 / scale;
  if (arg <= -1.0) return kInf;
  return std::log1p(arg) / b1;
}

double h0_at(double y, double b0, double b1, double baseline) {
  double scale = baseline * std::exp(b0);
  if (std::abs(b1) < 1e-8) return scale * y;
  return scale * std::expm1(b1 * y) / b1;
}

double draw_survival_at(const Eigen::VectorXd& a, const SimSetting& s, double v_change,
                        Rng& rng) {
  double a0 = s.center_random_effects ? a[0] - s.mu[0] : a[0];
  double a1 = s.center_random_effects ? a[1] - s.mu[1] : a[1];
  double b0 = s.beta * a0;
  double b1 = s.beta * a1;
  double e = rng.exponential(1.0);
  if (!s.ext || !std::isfinite(v_change)) return invert_h0(e, b0, b1, s.baseline);
  double hv = h0_at(v_change, b0, b1, s.baseline);
  if (e <= hv) return invert_h0(e, b0, b1, s.baseline);
  return invert_h0(hv + (e - hv) * std::exp(-s.ext->beta2), b0, b1, s.baseline);
}

struct AcceptedDraw {
  Eigen::VectorXd a;
  double t = 0.0;
  double y = 0.0;
  double v = kInf;
};

// Rejection sampling from the enrolled subpopulation Y* >= T*.
class Acceptor {
 public:
  Acceptor(const SimSetting& s, Rng& rng) : s_(s), rng_(rng) {
    chol_ = Eigen::LLT<Eigen::MatrixXd>(s.Sigma).matrixL();
    if (!chol_.allFinite()) throw ConfigError("simulate: Sigma is not positive definite");
  }

  AcceptedDraw next() {
    for (;;) {
      ++attempts_;
      AcceptedDraw d;
      d.a = s_.mu + chol_ * rng_.normal_vector(static_cast<int>(s_.mu.size()));
      d.t = rng_.exponential(s_.trunc_rate);
      if (s_.ext) {
        bool never = s_.ext->never_prob > 0.0 && rng_.uniform() < s_.ext->never_prob;
        d.v = never ? kInf : rng_.exponential(s_.ext->change_rate);
      }
      d.y = draw_survival_at(d.a, s_, d.v, rng_);
      if (d.y >= d.t) {
        ++accepted_;
        return d;
      }
      if (attempts_ >= 10000 && accepted_ < attempts_ * 1e-4)
        throw ConfigError("simulate: acceptance probability below 1e-4");
    }
  }

  double rate() const { return attempts_ ? static_cast<double>(accepted_) / attempts_ : 0.0; }

 private:
  const SimSetting& s_;
  Rng& rng_;
  Eigen::MatrixXd chol_;
  long long attempts_ = 0;
  long long accepted_ = 0;
};

std::string subject_id(int i, int n) {
  int width = 1;
  for (int v = n; v >= 10; v /= 10) ++width;
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%0*d", std::min(width, 19), i + 1);
  return buf;
}

}  // namespace

SimSetting preset(int case_id) {
  double sigma22, sigma2;
  switch (case_id) {
    case 1: sigma22 = 0.01;   sigma2 = 0.1;   break;
    case 2: sigma22 = 0.01;   sigma2 = 0.4;   break;
    case 3: sigma22 = 0.01;   sigma2 = 0.025; break;
    case 4: sigma22 = 0.0025; sigma2 = 0.1;   break;
    case 5: sigma22 = 0.04;   sigma2 = 0.1;   break;
    default: throw ConfigError("preset: case must be in 1..5");
  }
  SimSetting s;
  s.n = 200;
  s.beta = 1.0;
  s.mu = Eigen::Vector2d(2.0, 0.5);
  s.Sigma = Eigen::Matrix2d{{0.5, -0.001}, {-0.001, sigma22}};
  s.sigma2 = sigma2;
  s.trunc_rate = 1.0;
  s.u_rate = 1.0 / 3.0;
  s.baseline = 1.0;
  s.meas_spacing = 0.1;
  return s;
}

double draw_survival(const Eigen::VectorXd& a, const SimSetting& s, Rng& rng) {
  return draw_survival_at(a, s, kInf, rng);
}

SimResult generate(const SimSetting& s) {
  if (s.n < 1) throw ConfigError("generate: n must be >= 1");
  Rng rng(derive_seed(s.seed, fnv1a64("generate")));
  Acceptor acc(s, rng);

  SimResult out;
  out.data.basis = linear_basis();
  out.data.subjects.reserve(s.n);
  out.truth.reserve(s.n);
  double noise_sd = std::sqrt(s.sigma2);

  for (int i = 0; i < s.n; ++i) {
    AcceptedDraw d = acc.next();
    SubjectRecord rec;
    rec.id = subject_id(i, s.n);
    rec.entry = d.t;
    double u = rng.exponential(s.u_rate);
    double c = d.t + u;
    rec.exit = std::min(d.y, c);
    rec.event = d.y <= c;
    if (std::isfinite(d.v)) rec.ext_cov = ExternalCovariate{d.v};
    for (int k = 0;; ++k) {
      double t = d.t + k * s.meas_spacing;
      if (t > rec.exit) break;
      rec.meas_times.push_back(t);
      rec.meas_values.push_back(d.a[0] + d.a[1] * t + noise_sd * rng.normal());
    }
    out.data.subjects.push_back(std::move(rec));
    out.truth.push_back({out.data.subjects.back().id, d.a, d.y, c});
  }
  return out;
}

PopulationOracle population_oracle(const SimSetting& s, int n_accepted) {
  if (n_accepted < 10000) throw ConfigError("population_oracle: need at least 1e4 draws");
  Rng rng(derive_seed(s.seed, fnv1a64("population_oracle")));
  Acceptor acc(s, rng);
  const int q = static_cast<int>(s.mu.size());

  PopulationOracle pop;
  pop.a.resize(n_accepted, q);
  pop.t.resize(n_accepted);
  for (int i = 0; i < n_accepted; ++i) {
    AcceptedDraw d = acc.next();
    pop.a.row(i) = d.a.transpose();
    pop.t[i] = d.t;
  }
  pop.acceptance_rate = acc.rate();
  pop.mu_star = pop.a.colwise().mean().transpose();
  Eigen::MatrixXd centered = pop.a.rowwise() - pop.mu_star.transpose();
  pop.Sigma_star = centered.transpose() * centered / (n_accepted - 1.0);
  pop.mu_star_se = (pop.Sigma_star.diagonal() / n_accepted).cwiseSqrt();
  return pop;
}

double PopulationOracle::exp_tilt_after(double y, double beta, const Basis& basis) const {
  Eigen::VectorXd g = basis.eval(y);
  Eigen::ArrayXd e = (beta * (a * g).array()).exp();
  double sum = ((t.array() >= y).cast<double>() * e).sum();
  return sum / n_draws();
}

double PopulationOracle::q3_population(const StepHazard& hazard, double beta,
                                       const Basis& basis) const {
  double total = 0.0;
  for (int k = 0; k < hazard.size(); ++k) {
    double y = hazard.times[k];
    Eigen::VectorXd g = basis.eval(y);
    Eigen::ArrayXd c = (a * g).array();
    Eigen::ArrayXd e = (beta * c).exp();
    total += hazard.sizes[k] * ((t.array() >= y).cast<double>() * c * e).sum();
  }
  return total / n_draws();
}

Eigen::MatrixXd PopulationOracle::centered_moment(const Eigen::VectorXd& mu) const {
  Eigen::MatrixXd centered = a.rowwise() - mu.transpose();
  return centered.transpose() * centered / static_cast<double>(n_draws());
}

}  // namespace ltrcjm
