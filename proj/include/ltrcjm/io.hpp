#ifndef LTRCJM_IO_HPP
#define LTRCJM_IO_HPP

#include <string>
#include <vector>

#include "ltrcjm/bootstrap.hpp"
#include "ltrcjm/em.hpp"
#include "ltrcjm/simulate.hpp"
#include "ltrcjm/types.hpp"

namespace ltrcjm {

// Shortest round-trip decimal form, locale-independent ('.' decimal).
std::string format_double(double v);
double parse_double(const std::string& s);

// Written via a temp file + rename.
void write_text_atomic(const std::string& path, const std::string& content);

// Dataset CSV schema:
//   survival.csv:     subject_id,t,z,delta[,v_change]
//   longitudinal.csv: subject_id,s,w         (grouped by subject, s ascending)
//   truth.csv:        subject_id,a_0..a_{q-1},y_star,c
// v_change is included only when some subject carries the external
// covariate; an empty cell means none.
void write_dataset(const Dataset& d, const std::string& dir);
void write_truth(const std::vector<TruthRecord>& truth, const std::string& dir);
Dataset read_dataset(const std::string& dir);
std::vector<TruthRecord> read_truth(const std::string& dir);

void write_fit_report(const FitReport& r, const std::string& dir);
void write_bootstrap_report(const BootstrapReport& r, const std::string& dir);

// JSON mirrors of the config structs (field names match).
SimSetting sim_setting_from_json_file(const std::string& path);
void apply_em_config_json(const std::string& path, EmConfig& cfg);

}  // namespace ltrcjm

#endif
