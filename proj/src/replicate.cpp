#include "ltrcjm/replicate.hpp"

#include <cmath>

#include "ltrcjm/parallel.hpp"
#include "ltrcjm/rng.hpp"

namespace ltrcjm {

namespace {
RepOutcome one_rep(const SimSetting& setting, const EmConfig& cfg, std::uint64_t seed, int rep) {
  SimSetting s = setting;
  s.seed = derive_seed(seed, fnv1a64("replicate-sim"), static_cast<std::uint64_t>(rep));
  SimResult sim = generate(s);
  EmConfig c = cfg;
  c.seed = derive_seed(seed, fnv1a64("replicate-fit"), static_cast<std::uint64_t>(rep));
  RepOutcome out;
  try {
    FitReport fr = fit(sim.data, std::nullopt, c);
    out.converged = fr.converged;
    out.iterations = fr.iterations;
    out.beta = fr.params.beta;
    out.sigma2 = fr.params.sigma2;
    out.mu = fr.params.mu;
    out.Sigma = fr.params.Sigma;
  } catch (const Error&) {
    out.converged = false;
  }
  return out;
}

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / v.size();
}

double sd_of(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  double m = mean_of(v);
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return std::sqrt(ss / (v.size() - 1));
}

double mse_of(const std::vector<double>& v, double truth) {
  double s = 0.0;
  for (double x : v) s += (x - truth) * (x - truth);
  return v.empty() ? 0.0 : s / v.size();
}
}  // namespace

Table1Study run_table1(const SimSetting& setting, int reps, const EmConfig& cfg,
                       std::uint64_t seed) {
  Table1Study study;
  study.reps.resize(reps);
  parallel_for(reps, [&](int r) { study.reps[r] = one_rep(setting, cfg, seed, r); });

  int n_conv = 0;
  for (const auto& r : study.reps) n_conv += r.converged;
  study.convergence_rate = reps > 0 ? static_cast<double>(n_conv) / reps : 0.0;

  auto collect = [&](const std::function<double(const RepOutcome&)>& get) {
    std::vector<double> v;
    for (const auto& r : study.reps)
      if (r.converged) v.push_back(get(r));
    return v;
  };
  auto add_row = [&](const std::string& name, double truth,
                     const std::function<double(const RepOutcome&)>& get) {
    auto v = collect(get);
    study.rows.push_back({name, truth, mean_of(v), sd_of(v), mse_of(v, truth)});
  };
  add_row("beta", setting.beta, [](const RepOutcome& r) { return r.beta; });
  add_row("sigma2", setting.sigma2, [](const RepOutcome& r) { return r.sigma2; });
  for (int j = 0; j < setting.mu.size(); ++j)
    add_row("mu_" + std::to_string(j + 1), setting.mu[j],
            [j](const RepOutcome& r) { return r.mu[j]; });
  for (int a = 0; a < setting.mu.size(); ++a)
    for (int b = 0; b <= a; ++b)
      add_row("Sigma_" + std::to_string(a + 1) + std::to_string(b + 1), setting.Sigma(a, b),
              [a, b](const RepOutcome& r) { return r.Sigma(a, b); });
  return study;
}

Table2Study run_table2(const SimSetting& setting, int reps, int resamples,
                       const EmConfig& cfg, std::uint64_t seed) {
  Table2Study study;
  study.reps.resize(reps);
  std::vector<double> bt_beta(reps, std::numeric_limits<double>::quiet_NaN());
  std::vector<double> bt_sigma2(reps, std::numeric_limits<double>::quiet_NaN());

  parallel_for(reps, [&](int r) {
    study.reps[r] = one_rep(setting, cfg, seed, r);
    if (!study.reps[r].converged) return;
    SimSetting s = setting;
    s.seed = derive_seed(seed, fnv1a64("replicate-sim"), static_cast<std::uint64_t>(r));
    SimResult sim = generate(s);
    try {
      BootstrapReport br =
          bootstrap_se(sim.data, cfg, resamples,
                       derive_seed(seed, fnv1a64("replicate-boot"), static_cast<std::uint64_t>(r)));
      bt_beta[r] = br.se[0];
      int sigma2_col = 1 + (sim.data.has_ext() ? 1 : 0);
      bt_sigma2[r] = br.se[sigma2_col];
    } catch (const Error&) {
      study.reps[r].converged = false;  // no usable SE from this replication
    }
  });

  std::vector<double> beta_hat, sig_hat;
  for (int r = 0; r < reps; ++r) {
    if (!study.reps[r].converged || !std::isfinite(bt_beta[r])) continue;
    beta_hat.push_back(study.reps[r].beta);
    sig_hat.push_back(study.reps[r].sigma2);
    study.se_bt_beta.push_back(bt_beta[r]);
    study.se_bt_sigma2.push_back(bt_sigma2[r]);
  }
  study.convergence_rate =
      reps > 0 ? static_cast<double>(beta_hat.size()) / reps : 0.0;
  study.sd_mc_beta = sd_of(beta_hat);
  study.mean_se_bt_beta = mean_of(study.se_bt_beta);
  study.sd_mc_sigma2 = sd_of(sig_hat);
  study.mean_se_bt_sigma2 = mean_of(study.se_bt_sigma2);
  return study;
}

}  // namespace ltrcjm
