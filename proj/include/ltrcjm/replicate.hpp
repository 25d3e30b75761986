#ifndef LTRCJM_REPLICATE_HPP
#define LTRCJM_REPLICATE_HPP

#include <string>
#include <vector>

#include "ltrcjm/bootstrap.hpp"
#include "ltrcjm/em.hpp"
#include "ltrcjm/simulate.hpp"

namespace ltrcjm {

struct RepOutcome {
  bool converged = false;
  int iterations = 0;
  double beta = 0.0;
  double sigma2 = 0.0;
  Eigen::VectorXd mu;
  Eigen::MatrixXd Sigma;
};

struct SummaryRow {
  std::string parameter;
  double truth = 0.0;
  double mean = 0.0;
  double se_mc = 0.0;  // SD over converged replications
  double mse = 0.0;    // against the unconditional truth
};

// Monte Carlo study mirroring the estimation-accuracy table: simulate +
// fit `reps` times with per-rep derived seeds.
struct Table1Study {
  std::vector<RepOutcome> reps;
  double convergence_rate = 0.0;
  std::vector<SummaryRow> rows;  // over converged reps
};

Table1Study run_table1(const SimSetting& setting, int reps, const EmConfig& cfg,
                       std::uint64_t seed);

// Bootstrap-SE study: per replication, fit then bootstrap; compares the
// across-replication SD with the mean bootstrap SE for beta and sigma2.
struct Table2Study {
  std::vector<RepOutcome> reps;
  std::vector<double> se_bt_beta;    // per converged rep
  std::vector<double> se_bt_sigma2;
  double sd_mc_beta = 0.0;
  double mean_se_bt_beta = 0.0;
  double sd_mc_sigma2 = 0.0;
  double mean_se_bt_sigma2 = 0.0;
  double convergence_rate = 0.0;
};

Table2Study run_table2(const SimSetting& setting, int reps, int resamples,
                       const EmConfig& cfg, std::uint64_t seed);

}  // namespace ltrcjm

#endif
