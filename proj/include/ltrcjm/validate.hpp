#ifndef LTRCJM_VALIDATE_HPP
#define LTRCJM_VALIDATE_HPP

#include <string>
#include <vector>

#include "ltrcjm/types.hpp"

namespace ltrcjm {

struct Violation {
  std::string subject_id;  // empty for dataset-level rules
  std::string rule;
};

// Empty result iff all subject and dataset invariants hold.
std::vector<Violation> validate_dataset(const Dataset& d);

// Throws ValidationError listing every violation.
void require_valid(const Dataset& d);

// Truncation-adjusted risk set {i : t_i < u <= z_i}, ascending indices.
std::vector<int> risk_set(const Dataset& d, double u);

// Sorted uncensored event times; ties kept as separate entries, ordered by
// subject position within a tie.
std::vector<double> uncensored_times(const Dataset& d);

// Throws on invalid Euclidean parameters (sigma2 <= 0, Sigma not SPD,
// dimension mismatch with the basis, negative jump sizes).
void check_params(const JointParams& p, int q);

// Per-event bookkeeping shared by the likelihood, EM and baselines: the jump
// times, which subject owns each jump, each subject's jump window
// (t_i, z_i], and each subject's own event jump.
struct EventTable {
  std::vector<double> times;                  // n_u, nondecreasing
  std::vector<int> subject_of;                // n_u, owning subject index
  std::vector<std::pair<int, int>> windows;   // per subject: [lo, hi)
  std::vector<int> event_jump;                // per subject: own jump or -1
  std::vector<int> risk_count;                // n_u, |{i : t_i < y_k <= z_i}|

  int n_jumps() const { return static_cast<int>(times.size()); }
};

EventTable build_event_table(const Dataset& d);

// True iff the hazard jumps exactly at the table's event times.
bool hazard_aligned(const StepHazard& h, const EventTable& table);

}  // namespace ltrcjm

#endif
