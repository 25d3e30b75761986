#include "ltrcjm/bootstrap.hpp"

#include <algorithm>
#include <cmath>

#include "ltrcjm/parallel.hpp"
#include "ltrcjm/rng.hpp"
#include "ltrcjm/validate.hpp"

namespace ltrcjm {

namespace {
std::vector<double> default_probes(const Dataset& d) {
  auto times = uncensored_times(d);
  if (times.empty()) return {};
  auto at = [&](double f) {
    std::size_t idx = static_cast<std::size_t>(f * (times.size() - 1));
    return times[idx];
  };
  std::vector<double> probes{at(0.25), at(0.5), at(0.75)};
  probes.erase(std::unique(probes.begin(), probes.end()), probes.end());
  return probes;
}
}  // namespace

BootstrapReport bootstrap_se(const Dataset& d, const EmConfig& cfg, int B,
                             std::uint64_t seed, std::vector<double> probe_times,
                             const std::optional<JointParams>& warm_start,
                             const ResampleHook& hook) {
  if (B < 2) throw ConfigError("bootstrap_se: need at least 2 resamples");
  require_valid(d);
  const int n = d.n();
  const int q = d.basis.q;
  const bool ext = d.has_ext();
  if (probe_times.empty()) probe_times = default_probes(d);

  BootstrapReport rep;
  rep.B = B;
  rep.probe_times = probe_times;
  rep.columns.push_back("beta");
  if (ext) rep.columns.push_back("beta_ext_0");
  rep.columns.push_back("sigma2");
  for (int j = 0; j < q; ++j) rep.columns.push_back("mu_" + std::to_string(j));
  for (int a = 0; a < q; ++a)
    for (int b = 0; b <= a; ++b)
      rep.columns.push_back("Sigma_" + std::to_string(a) + std::to_string(b));
  for (double t : probe_times) rep.columns.push_back("Lambda@" + std::to_string(t));
  const int ncol = static_cast<int>(rep.columns.size());

  rep.estimates.resize(B, ncol);
  rep.estimates.setConstant(std::numeric_limits<double>::quiet_NaN());
  rep.converged.assign(B, 0);

  parallel_for(B, [&](int b) {
    std::vector<int> idx;
    if (hook) {
      idx = hook(b, n);
    } else {
      Rng rng(derive_seed(seed, fnv1a64("bootstrap"), static_cast<std::uint64_t>(b)));
      idx.resize(n);
      for (int i = 0; i < n; ++i) idx[i] = rng.uniform_int(n);
    }
    Dataset resample;
    resample.basis = d.basis;
    resample.subjects.reserve(n);
    for (int i = 0; i < n; ++i) {
      SubjectRecord s = d.subjects[idx[i]];
      s.id += "#" + std::to_string(i);  // keep ids unique across duplicates
      resample.subjects.push_back(std::move(s));
    }
    EmConfig bcfg = cfg;
    bcfg.seed = derive_seed(seed, fnv1a64("bootstrap-fit"), static_cast<std::uint64_t>(b));
    FitReport fr;
    try {
      fr = fit(resample, warm_start, bcfg);
    } catch (const Error&) {
      return;  // counted as non-converged
    }
    if (!fr.converged) return;
    int c = 0;
    rep.estimates(b, c++) = fr.params.beta;
    if (ext) rep.estimates(b, c++) = fr.params.beta_ext ? (*fr.params.beta_ext)[0] : 0.0;
    rep.estimates(b, c++) = fr.params.sigma2;
    for (int j = 0; j < q; ++j) rep.estimates(b, c++) = fr.params.mu[j];
    for (int a = 0; a < q; ++a)
      for (int bb = 0; bb <= a; ++bb) rep.estimates(b, c++) = fr.params.Sigma(a, bb);
    for (double t : probe_times) rep.estimates(b, c++) = fr.params.hazard.cumulative(t);
    rep.converged[b] = 1;
  });

  rep.n_converged = 0;
  for (char c : rep.converged) rep.n_converged += c;
  if (rep.n_converged < 2)
    throw NumericError("bootstrap_se: fewer than 2 resamples converged; SE undefined");

  rep.se.resize(ncol);
  for (int c = 0; c < ncol; ++c) {
    double mean = 0.0;
    for (int b = 0; b < B; ++b)
      if (rep.converged[b]) mean += rep.estimates(b, c);
    mean /= rep.n_converged;
    double ss = 0.0;
    for (int b = 0; b < B; ++b)
      if (rep.converged[b]) {
        double dlt = rep.estimates(b, c) - mean;
        ss += dlt * dlt;
      }
    rep.se[c] = std::sqrt(ss / (rep.n_converged - 1));
  }
  return rep;
}

}  // namespace ltrcjm
