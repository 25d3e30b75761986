#ifndef LTRCJM_TYPES_HPP
#define LTRCJM_TYPES_HPP

#include <functional>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace ltrcjm {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ValidationError : Error {
  using Error::Error;
};
struct NumericError : Error {
  using Error::Error;
};
struct ConfigError : Error {
  using Error::Error;
};
struct IoError : Error {
  using Error::Error;
};

inline constexpr double kInf = std::numeric_limits<double>::infinity();

// Fully observed binary covariate path x(t) = 1{t > change_time}.
// change_time may be +inf (path identically zero).
struct ExternalCovariate {
  double change_time = kInf;
  double value_at(double t) const { return t > change_time ? 1.0 : 0.0; }
};

// One subject: left-truncation/entry time, observed endpoint, event flag,
// and the intermittent longitudinal measurements taken on [entry, exit].
struct SubjectRecord {
  std::string id;
  double entry = 0.0;
  double exit = 0.0;
  bool event = false;
  std::vector<double> meas_times;
  std::vector<double> meas_values;
  std::optional<ExternalCovariate> ext_cov;

  int n_meas() const { return static_cast<int>(meas_times.size()); }
  double ext_value(double t) const { return ext_cov ? ext_cov->value_at(t) : 0.0; }
};

// Known q-dimensional time basis of the longitudinal model.
struct Basis {
  int q = 0;
  std::function<Eigen::VectorXd(double)> eval;
};

// Random intercept + slope: g(t) = (1, t).
inline Basis linear_basis() {
  Basis b;
  b.q = 2;
  b.eval = [](double t) {
    Eigen::VectorXd g(2);
    g << 1.0, t;
    return g;
  };
  return b;
}

// Step cumulative hazard with jumps at uncensored event times. Jump times are
// nondecreasing; tied event times are kept as separate per-event jumps.
struct StepHazard {
  std::vector<double> times;
  std::vector<double> sizes;

  int size() const { return static_cast<int>(times.size()); }

  double cumulative(double t) const {
    double s = 0.0;
    for (int k = 0; k < size() && times[k] <= t; ++k) s += sizes[k];
    return s;
  }

  double total() const {
    double s = 0.0;
    for (double v : sizes) s += v;
    return s;
  }

  // Index range [lo, hi) of jumps with t0 < times[k] <= t1.
  std::pair<int, int> window(double t0, double t1) const {
    auto lo = std::upper_bound(times.begin(), times.end(), t0) - times.begin();
    auto hi = std::upper_bound(times.begin(), times.end(), t1) - times.begin();
    return {static_cast<int>(lo), static_cast<int>(hi)};
  }
};

// Euclidean parameters plus the step baseline cumulative hazard.
struct JointParams {
  double beta = 0.0;
  std::optional<Eigen::VectorXd> beta_ext;
  double sigma2 = 1.0;
  Eigen::VectorXd mu;
  Eigen::MatrixXd Sigma;
  StepHazard hazard;

  int n_ext() const { return beta_ext ? static_cast<int>(beta_ext->size()) : 0; }
};

struct Dataset {
  std::vector<SubjectRecord> subjects;
  Basis basis;

  int n() const { return static_cast<int>(subjects.size()); }
  bool has_ext() const {
    for (const auto& s : subjects)
      if (s.ext_cov) return true;
    return false;
  }
};

}  // namespace ltrcjm

#endif
