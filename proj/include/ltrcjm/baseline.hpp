#ifndef LTRCJM_BASELINE_HPP
#define LTRCJM_BASELINE_HPP

#include <functional>

#include "ltrcjm/types.hpp"

namespace ltrcjm {

// Truncation-adjusted Nelson-Aalen: jump (multiplicity at y) / |risk(y)| at
// each distinct uncensored time. Empty risk at an event time is an error.
StepHazard nelson_aalen_ltrc(const Dataset& d);

// Evaluable covariate path for subject i at time t.
using CovariatePath = std::function<Eigen::VectorXd(int subject_index, double t)>;

struct CoxFit {
  Eigen::VectorXd coef;
  StepHazard baseline;   // Breslow, truncation-adjusted denominators
  double loglik = 0.0;
  int iterations = 0;
  Eigen::MatrixXd information;  // at the solution
};

// LTRC Cox partial likelihood with risk sets {i : t_i < u <= z_i} and
// Breslow tie handling, maximized by damped Newton iterations.
CoxFit cox_partial_ltrc(const Dataset& d, const CovariatePath& path, int p);

struct LvcfFit {
  CoxFit cox;
  bool backward_filled = false;  // some subject needed its first value before
                                 // its first measurement time
};

// Two-stage comparator: impute X(t) by the most recent measurement, then fit
// the LTRC Cox model on the imputed scalar path.
LvcfFit lvcf_two_stage(const Dataset& d);

}  // namespace ltrcjm

#endif
