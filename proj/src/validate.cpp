#include "ltrcjm/validate.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include <Eigen/Cholesky>

namespace ltrcjm {

std::vector<Violation> validate_dataset(const Dataset& d) {
  std::vector<Violation> out;
  if (d.basis.q <= 0 || !d.basis.eval) out.push_back({"", "basis must have q >= 1 and an eval function"});
  std::set<std::string> seen;
  bool any_event = false;
  for (const auto& s : d.subjects) {
    if (!seen.insert(s.id).second) out.push_back({s.id, "duplicate subject id"});
    if (!(s.entry >= 0.0)) out.push_back({s.id, "t >= 0"});
    if (!(s.entry <= s.exit)) out.push_back({s.id, "t <= z"});
    if (s.meas_times.size() != s.meas_values.size())
      out.push_back({s.id, "meas_times and meas_values have equal length"});
    for (std::size_t j = 0; j < s.meas_times.size(); ++j) {
      double t = s.meas_times[j];
      if (t < s.entry || t > s.exit) {
        out.push_back({s.id, "measurement times inside [t, z]"});
        break;
      }
    }
    for (std::size_t j = 1; j < s.meas_times.size(); ++j) {
      if (!(s.meas_times[j] > s.meas_times[j - 1])) {
        out.push_back({s.id, "measurement times strictly increasing"});
        break;
      }
    }
    for (double w : s.meas_values) {
      if (!std::isfinite(w)) {
        out.push_back({s.id, "measurement values finite"});
        break;
      }
    }
    if (s.ext_cov && !(s.ext_cov->change_time >= 0.0))
      out.push_back({s.id, "external covariate change time >= 0"});
    any_event = any_event || s.event;
  }
  if (!d.subjects.empty() && !any_event) out.push_back({"", "no uncensored events"});
  return out;
}

void require_valid(const Dataset& d) {
  auto v = validate_dataset(d);
  if (v.empty()) return;
  std::ostringstream os;
  os << "invalid dataset:";
  for (const auto& x : v) os << " [" << (x.subject_id.empty() ? "dataset" : x.subject_id) << ": " << x.rule << "]";
  throw ValidationError(os.str());
}

std::vector<int> risk_set(const Dataset& d, double u) {
  std::vector<int> out;
  for (int i = 0; i < d.n(); ++i) {
    const auto& s = d.subjects[i];
    if (s.entry < u && u <= s.exit) out.push_back(i);
  }
  return out;
}

std::vector<double> uncensored_times(const Dataset& d) {
  std::vector<double> out;
  for (const auto& s : d.subjects)
    if (s.event) out.push_back(s.exit);
  std::stable_sort(out.begin(), out.end());
  return out;
}

void check_params(const JointParams& p, int q) {
  if (!(p.sigma2 > 0.0) || !std::isfinite(p.sigma2)) throw ValidationError("sigma2 must be positive and finite");
  if (p.mu.size() != q) throw ValidationError("mu dimension must match basis q");
  if (p.Sigma.rows() != q || p.Sigma.cols() != q) throw ValidationError("Sigma must be q x q");
  if (!p.Sigma.isApprox(p.Sigma.transpose(), 1e-10)) throw ValidationError("Sigma must be symmetric");
  Eigen::LLT<Eigen::MatrixXd> llt(p.Sigma);
  if (llt.info() != Eigen::Success) throw ValidationError("Sigma must be positive definite");
  if (!std::isfinite(p.beta)) throw ValidationError("beta must be finite");
  if (p.beta_ext && !p.beta_ext->allFinite()) throw ValidationError("beta_ext must be finite");
  for (int k = 0; k < p.hazard.size(); ++k) {
    if (!(p.hazard.sizes[k] >= 0.0) || !std::isfinite(p.hazard.sizes[k]))
      throw ValidationError("hazard jump sizes must be nonnegative and finite");
    if (k > 0 && p.hazard.times[k] < p.hazard.times[k - 1])
      throw ValidationError("hazard jump times must be nondecreasing");
  }
}

EventTable build_event_table(const Dataset& d) {
  EventTable t;
  std::vector<std::pair<double, int>> events;  // (time, subject)
  for (int i = 0; i < d.n(); ++i)
    if (d.subjects[i].event) events.push_back({d.subjects[i].exit, i});
  std::stable_sort(events.begin(), events.end(),
                   [](const auto& a, const auto& b) { return a.first < b.first; });
  t.event_jump.assign(d.n(), -1);
  for (const auto& [time, subj] : events) {
    t.subject_of.push_back(subj);
    t.event_jump[subj] = static_cast<int>(t.times.size());
    t.times.push_back(time);
  }
  const int n_u = t.n_jumps();
  t.risk_count.assign(n_u, 0);
  t.windows.resize(d.n());
  for (int i = 0; i < d.n(); ++i) {
    const auto& s = d.subjects[i];
    auto lo = std::upper_bound(t.times.begin(), t.times.end(), s.entry) - t.times.begin();
    auto hi = std::upper_bound(t.times.begin(), t.times.end(), s.exit) - t.times.begin();
    t.windows[i] = {static_cast<int>(lo), static_cast<int>(hi)};
    for (int k = static_cast<int>(lo); k < static_cast<int>(hi); ++k) ++t.risk_count[k];
  }
  return t;
}

bool hazard_aligned(const StepHazard& h, const EventTable& table) {
  if (h.size() != table.n_jumps()) return false;
  for (int k = 0; k < h.size(); ++k)
    if (h.times[k] != table.times[k]) return false;
  return true;
}

}  // namespace ltrcjm
