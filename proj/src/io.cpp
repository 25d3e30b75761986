#include "ltrcjm/io.hpp"

#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include <json.hpp>

namespace fs = std::filesystem;
using nlohmann::json;

namespace ltrcjm {

std::string format_double(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  if (std::isnan(v)) return "nan";
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

double parse_double(const std::string& s) {
  if (s == "inf") return kInf;
  if (s == "-inf") return -kInf;
  if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
  double v = 0.0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc{} || res.ptr != s.data() + s.size())
    throw IoError("cannot parse number: '" + s + "'");
  return v;
}

void write_text_atomic(const std::string& path, const std::string& content) {
  fs::path target(path);
  fs::path tmp = target;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + tmp.string() + " for writing");
    out << content;
    if (!out) throw IoError("write failed for " + tmp.string());
  }
  fs::rename(tmp, target);
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

std::vector<std::vector<std::string>> read_csv(const std::string& path,
                                               std::vector<std::string>* header) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw IoError(path + ": missing header row");
  *header = split_csv_line(line);
  std::vector<std::vector<std::string>> rows;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    auto cells = split_csv_line(line);
    if (cells.size() != header->size())
      throw IoError(path + ":" + std::to_string(lineno) + ": expected " +
                    std::to_string(header->size()) + " columns, got " +
                    std::to_string(cells.size()));
    rows.push_back(std::move(cells));
  }
  return rows;
}

}  // namespace

void write_dataset(const Dataset& d, const std::string& dir) {
  fs::create_directories(dir);
  bool ext = d.has_ext();
  std::ostringstream surv;
  surv << "subject_id,t,z,delta";
  if (ext) surv << ",v_change";
  surv << "\n";
  for (const auto& s : d.subjects) {
    surv << s.id << ',' << format_double(s.entry) << ',' << format_double(s.exit) << ','
         << (s.event ? 1 : 0);
    if (ext) {
      surv << ',';
      if (s.ext_cov && std::isfinite(s.ext_cov->change_time))
        surv << format_double(s.ext_cov->change_time);
    }
    surv << "\n";
  }
  write_text_atomic((fs::path(dir) / "survival.csv").string(), surv.str());

  std::ostringstream lon;
  lon << "subject_id,s,w\n";
  for (const auto& s : d.subjects)
    for (int j = 0; j < s.n_meas(); ++j)
      lon << s.id << ',' << format_double(s.meas_times[j]) << ','
          << format_double(s.meas_values[j]) << "\n";
  write_text_atomic((fs::path(dir) / "longitudinal.csv").string(), lon.str());
}

void write_truth(const std::vector<TruthRecord>& truth, const std::string& dir) {
  fs::create_directories(dir);
  if (truth.empty()) return;
  const int q = static_cast<int>(truth.front().a.size());
  std::ostringstream os;
  os << "subject_id";
  for (int j = 0; j < q; ++j) os << ",a_" << j;
  os << ",y_star,c\n";
  for (const auto& t : truth) {
    os << t.id;
    for (int j = 0; j < q; ++j) os << ',' << format_double(t.a[j]);
    os << ',' << format_double(t.y_star) << ',' << format_double(t.c) << "\n";
  }
  write_text_atomic((fs::path(dir) / "truth.csv").string(), os.str());
}

Dataset read_dataset(const std::string& dir) {
  Dataset d;
  d.basis = linear_basis();

  std::vector<std::string> header;
  auto rows = read_csv((fs::path(dir) / "survival.csv").string(), &header);
  bool has_v = false;
  if (header.size() == 5 && header[4] == "v_change")
    has_v = true;
  else if (header.size() != 4)
    throw IoError("survival.csv: expected header subject_id,t,z,delta[,v_change]");
  if (header[0] != "subject_id" || header[1] != "t" || header[2] != "z" || header[3] != "delta")
    throw IoError("survival.csv: unexpected header");

  std::map<std::string, int> index;
  for (const auto& r : rows) {
    SubjectRecord s;
    s.id = r[0];
    s.entry = parse_double(r[1]);
    s.exit = parse_double(r[2]);
    if (r[3] != "0" && r[3] != "1") throw IoError("survival.csv: delta must be 0 or 1");
    s.event = r[3] == "1";
    if (has_v && !r[4].empty()) s.ext_cov = ExternalCovariate{parse_double(r[4])};
    if (!index.emplace(s.id, d.n()).second)
      throw IoError("survival.csv: duplicate subject_id " + s.id);
    d.subjects.push_back(std::move(s));
  }

  auto lrows = read_csv((fs::path(dir) / "longitudinal.csv").string(), &header);
  if (header.size() != 3 || header[0] != "subject_id" || header[1] != "s" || header[2] != "w")
    throw IoError("longitudinal.csv: expected header subject_id,s,w");
  std::size_t lineno = 1;
  for (const auto& r : lrows) {
    ++lineno;
    auto it = index.find(r[0]);
    if (it == index.end())
      throw IoError("longitudinal.csv:" + std::to_string(lineno) + ": unknown subject_id " + r[0]);
    auto& s = d.subjects[it->second];
    s.meas_times.push_back(parse_double(r[1]));
    s.meas_values.push_back(parse_double(r[2]));
  }
  return d;
}

std::vector<TruthRecord> read_truth(const std::string& dir) {
  std::vector<std::string> header;
  auto rows = read_csv((fs::path(dir) / "truth.csv").string(), &header);
  if (header.size() < 4 || header[0] != "subject_id")
    throw IoError("truth.csv: unexpected header");
  const int q = static_cast<int>(header.size()) - 3;
  std::vector<TruthRecord> out;
  for (const auto& r : rows) {
    TruthRecord t;
    t.id = r[0];
    t.a.resize(q);
    for (int j = 0; j < q; ++j) t.a[j] = parse_double(r[1 + j]);
    t.y_star = parse_double(r[1 + q]);
    t.c = parse_double(r[2 + q]);
    out.push_back(std::move(t));
  }
  return out;
}

namespace {
json params_to_json(const JointParams& p) {
  json j;
  j["beta"] = p.beta;
  if (p.beta_ext) {
    std::vector<double> v(p.beta_ext->data(), p.beta_ext->data() + p.beta_ext->size());
    j["beta_ext"] = v;
  }
  j["sigma2"] = p.sigma2;
  j["mu"] = std::vector<double>(p.mu.data(), p.mu.data() + p.mu.size());
  std::vector<std::vector<double>> S;
  for (int a = 0; a < p.Sigma.rows(); ++a) {
    std::vector<double> row;
    for (int b = 0; b < p.Sigma.cols(); ++b) row.push_back(p.Sigma(a, b));
    S.push_back(row);
  }
  j["Sigma"] = S;
  json hz;
  hz["times"] = p.hazard.times;
  hz["jumps"] = p.hazard.sizes;
  std::vector<double> cum;
  double acc = 0.0;
  for (double s : p.hazard.sizes) cum.push_back(acc += s);
  hz["cumulative"] = cum;
  j["hazard"] = hz;
  return j;
}
}  // namespace

void write_fit_report(const FitReport& r, const std::string& dir) {
  fs::create_directories(dir);
  json j;
  j["estimates"] = params_to_json(r.params);
  j["converged"] = r.converged;
  j["iterations"] = r.iterations;
  j["loglik"] = std::isfinite(r.loglik) ? json(r.loglik) : json(nullptr);
  json diag;
  diag["score_beta_exit"] = r.diagnostics.score_beta_exit;
  diag["min_ess_exit"] = r.diagnostics.min_ess_exit;
  diag["sigma2_floored"] = r.diagnostics.sigma2_floored;
  diag["Sigma_floored"] = r.diagnostics.Sigma_floored;
  diag["divergence_reason"] = r.diagnostics.divergence_reason;
  j["diagnostics"] = diag;
  write_text_atomic((fs::path(dir) / "estimates.json").string(), j.dump(2) + "\n");

  std::ostringstream tr;
  const int q = static_cast<int>(r.params.mu.size());
  tr << "iter,loglik,rel_change,beta";
  if (r.params.beta_ext) tr << ",beta_ext_0";
  tr << ",sigma2";
  for (int a = 0; a < q; ++a) tr << ",mu_" << a;
  for (int a = 0; a < q; ++a)
    for (int b = 0; b <= a; ++b) tr << ",Sigma_" << a << b;
  tr << ",Lambda_total,min_ess,mean_ess\n";
  for (const auto& s : r.trace) {
    tr << s.iter << ',' << format_double(s.loglik) << ',' << format_double(s.rel_change) << ','
       << format_double(s.beta);
    if (r.params.beta_ext) tr << ',' << format_double(s.beta_ext.size() ? s.beta_ext[0] : 0.0);
    tr << ',' << format_double(s.sigma2);
    for (int a = 0; a < q; ++a) tr << ',' << format_double(s.mu[a]);
    for (int a = 0; a < q; ++a)
      for (int b = 0; b <= a; ++b) tr << ',' << format_double(s.Sigma(a, b));
    tr << ',' << format_double(s.hazard_total) << ',' << format_double(s.min_ess) << ','
       << format_double(s.mean_ess) << "\n";
  }
  write_text_atomic((fs::path(dir) / "trace.csv").string(), tr.str());
}

void write_bootstrap_report(const BootstrapReport& r, const std::string& dir) {
  fs::create_directories(dir);
  json j;
  j["B"] = r.B;
  j["n_converged"] = r.n_converged;
  j["probe_times"] = r.probe_times;
  json se;
  for (std::size_t c = 0; c < r.columns.size(); ++c) se[r.columns[c]] = r.se[c];
  j["se"] = se;
  write_text_atomic((fs::path(dir) / "bootstrap.json").string(), j.dump(2) + "\n");

  std::ostringstream os;
  os << "resample,converged";
  for (const auto& c : r.columns) os << ',' << c;
  os << "\n";
  for (int b = 0; b < r.B; ++b) {
    os << b << ',' << (r.converged[b] ? 1 : 0);
    for (int c = 0; c < r.estimates.cols(); ++c) {
      os << ',';
      if (r.converged[b]) os << format_double(r.estimates(b, c));
    }
    os << "\n";
  }
  write_text_atomic((fs::path(dir) / "resamples.csv").string(), os.str());
}

SimSetting sim_setting_from_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw IoError(path + ": " + e.what());
  }
  SimSetting s;
  s.mu = Eigen::Vector2d(2.0, 0.5);
  s.Sigma = Eigen::Matrix2d{{0.5, -0.001}, {-0.001, 0.01}};
  if (j.contains("case")) s = preset(j["case"].get<int>());
  if (j.contains("n")) s.n = j["n"].get<int>();
  if (j.contains("beta")) s.beta = j["beta"].get<double>();
  if (j.contains("mu")) {
    auto v = j["mu"].get<std::vector<double>>();
    s.mu = Eigen::Map<Eigen::VectorXd>(v.data(), v.size());
  }
  if (j.contains("Sigma")) {
    auto rows = j["Sigma"].get<std::vector<std::vector<double>>>();
    const int q = static_cast<int>(rows.size());
    s.Sigma.resize(q, q);
    for (int a = 0; a < q; ++a)
      for (int b = 0; b < q; ++b) s.Sigma(a, b) = rows[a][b];
  }
  if (j.contains("sigma2")) s.sigma2 = j["sigma2"].get<double>();
  if (j.contains("trunc_rate")) s.trunc_rate = j["trunc_rate"].get<double>();
  if (j.contains("u_rate")) s.u_rate = j["u_rate"].get<double>();
  if (j.contains("baseline")) s.baseline = j["baseline"].get<double>();
  if (j.contains("meas_spacing")) s.meas_spacing = j["meas_spacing"].get<double>();
  if (j.contains("seed")) s.seed = j["seed"].get<std::uint64_t>();
  if (j.contains("ext")) {
    ExtCovSim e;
    e.beta2 = j["ext"].value("beta2", 0.0);
    e.change_rate = j["ext"].value("change_rate", 1.0);
    e.never_prob = j["ext"].value("never_prob", 0.0);
    s.ext = e;
  }
  return s;
}

void apply_em_config_json(const std::string& path, EmConfig& cfg) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw IoError(path + ": " + e.what());
  }
  if (j.contains("max_iter")) cfg.max_iter = j["max_iter"].get<int>();
  if (j.contains("tol")) cfg.tol = j["tol"].get<double>();
  if (j.contains("mc_draws")) cfg.mc_draws = j["mc_draws"].get<int>();
  if (j.contains("newton_steps_per_iter"))
    cfg.newton_steps_per_iter = j["newton_steps_per_iter"].get<int>();
  if (j.contains("seed")) cfg.seed = j["seed"].get<std::uint64_t>();
  if (j.contains("damping")) cfg.damping = j["damping"].get<double>();
  if (j.contains("refresh_draws")) cfg.refresh_draws = j["refresh_draws"].get<bool>();
}

}  // namespace ltrcjm
