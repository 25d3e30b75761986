#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "ltrcjm/em.hpp"
#include "ltrcjm/io.hpp"
#include "ltrcjm/simulate.hpp"

using namespace ltrcjm;
namespace fs = std::filesystem;

namespace {
struct TempDir {
  fs::path path;
  TempDir(const std::string& tag) {
    path = fs::temp_directory_path() / ("ltrcjm_test_" + tag);
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), {});
}
}  // namespace

TEST_SUITE("io") {
  TEST_CASE("doubles round-trip through the shortest decimal form") {
    for (double v : {0.1, 1.0 / 3.0, 1e-300, 12345.6789, -0.0, 2.0}) {
      CHECK(parse_double(format_double(v)) == v);
    }
    CHECK(format_double(kInf) == "inf");
    CHECK(parse_double("inf") == kInf);
    CHECK_THROWS_AS(parse_double("1,5"), IoError);
    CHECK_THROWS_AS(parse_double("abc"), IoError);
  }

  TEST_CASE("dataset round-trips exactly through the CSV schema") {
    SimSetting s = preset(1);
    s.n = 40;
    s.seed = 2101;
    SimResult r = generate(s);
    TempDir dir("roundtrip");
    write_dataset(r.data, dir.path.string());
    write_truth(r.truth, dir.path.string());
    Dataset back = read_dataset(dir.path.string());
    REQUIRE(back.n() == r.data.n());
    for (int i = 0; i < back.n(); ++i) {
      const auto& a = r.data.subjects[i];
      const auto& b = back.subjects[i];
      CHECK(a.id == b.id);
      CHECK(a.entry == b.entry);
      CHECK(a.exit == b.exit);
      CHECK(a.event == b.event);
      CHECK(a.meas_times == b.meas_times);
      CHECK(a.meas_values == b.meas_values);
      CHECK(a.ext_cov.has_value() == b.ext_cov.has_value());
    }
    auto truth = read_truth(dir.path.string());
    REQUIRE(truth.size() == r.truth.size());
    for (std::size_t i = 0; i < truth.size(); ++i) {
      CHECK(truth[i].id == r.truth[i].id);
      CHECK(truth[i].a == r.truth[i].a);
      CHECK(truth[i].y_star == r.truth[i].y_star);
      CHECK(truth[i].c == r.truth[i].c);
    }
  }

  TEST_CASE("external covariate column round-trips, empty meaning none") {
    SimSetting s = preset(1);
    s.n = 30;
    s.seed = 2102;
    s.ext = ExtCovSim{-0.5, 2.0, 0.3};
    SimResult r = generate(s);
    TempDir dir("ext");
    write_dataset(r.data, dir.path.string());
    Dataset back = read_dataset(dir.path.string());
    for (int i = 0; i < back.n(); ++i) {
      REQUIRE(back.subjects[i].ext_cov.has_value() == r.data.subjects[i].ext_cov.has_value());
      if (back.subjects[i].ext_cov)
        CHECK(back.subjects[i].ext_cov->change_time == r.data.subjects[i].ext_cov->change_time);
    }
  }

  TEST_CASE("same seed writes byte-identical files") {
    SimSetting s = preset(3);
    s.n = 25;
    s.seed = 2103;
    TempDir d1("bytes1"), d2("bytes2");
    SimResult r1 = generate(s);
    write_dataset(r1.data, d1.path.string());
    write_truth(r1.truth, d1.path.string());
    SimResult r2 = generate(s);
    write_dataset(r2.data, d2.path.string());
    write_truth(r2.truth, d2.path.string());
    for (const char* f : {"survival.csv", "longitudinal.csv", "truth.csv"})
      CHECK(slurp(d1.path / f) == slurp(d2.path / f));
  }

  TEST_CASE("schema violations are pinpointed") {
    TempDir dir("bad");
    write_text_atomic((dir.path / "survival.csv").string(), "subject_id,t,z,delta\na,0,1,1\n");
    write_text_atomic((dir.path / "longitudinal.csv").string(),
                      "subject_id,s,w\na,0.5\n");  // missing column
    try {
      read_dataset(dir.path.string());
      FAIL("expected IoError");
    } catch (const IoError& e) {
      std::string msg = e.what();
      CHECK(msg.find("longitudinal.csv") != std::string::npos);
      CHECK(msg.find("expected 3 columns") != std::string::npos);
    }
    write_text_atomic((dir.path / "longitudinal.csv").string(), "subject_id,s,w\nzz,0.5,1.0\n");
    CHECK_THROWS_AS(read_dataset(dir.path.string()), IoError);
  }

  TEST_CASE("fit report files carry all parameter blocks") {
    SimSetting s = preset(1);
    s.n = 30;
    s.seed = 2104;
    Dataset d = generate(s).data;
    EmConfig cfg;
    cfg.mc_draws = 150;
    cfg.max_iter = 8;
    cfg.tol = 1e-300;
    cfg.refresh_draws = false;
    FitReport r = fit(d, std::nullopt, cfg);
    TempDir dir("fitrep");
    write_fit_report(r, dir.path.string());
    std::string est = slurp(dir.path / "estimates.json");
    for (const char* key : {"\"beta\"", "\"sigma2\"", "\"mu\"", "\"Sigma\"", "\"hazard\"",
                            "\"cumulative\"", "\"converged\"", "\"iterations\""})
      CHECK(est.find(key) != std::string::npos);
    std::string trace = slurp(dir.path / "trace.csv");
    CHECK(trace.find("iter,loglik,rel_change,beta") == 0);
    int lines = 0;
    for (char c : trace)
      if (c == '\n') ++lines;
    CHECK(lines == 9);  // header + 8 iterations
  }

  TEST_CASE("sim setting json honors every field") {
    TempDir dir("cfg");
    write_text_atomic((dir.path / "s.json").string(), R"({
      "n": 55, "beta": 0.7, "mu": [1.0, 0.2], "Sigma": [[0.3, 0.0], [0.0, 0.02]],
      "sigma2": 0.05, "trunc_rate": 0.8, "u_rate": 2.5, "baseline": 1.5,
      "meas_spacing": 0.2, "seed": 31, "ext": {"beta2": -0.4, "change_rate": 1.5, "never_prob": 0.1}
    })");
    SimSetting s = sim_setting_from_json_file((dir.path / "s.json").string());
    CHECK(s.n == 55);
    CHECK(s.beta == 0.7);
    CHECK(s.mu[1] == 0.2);
    CHECK(s.Sigma(1, 1) == 0.02);
    CHECK(s.sigma2 == 0.05);
    CHECK(s.trunc_rate == 0.8);
    CHECK(s.u_rate == 2.5);
    CHECK(s.baseline == 1.5);
    CHECK(s.meas_spacing == 0.2);
    CHECK(s.seed == 31);
    REQUIRE(s.ext.has_value());
    CHECK(s.ext->beta2 == -0.4);
    CHECK(s.ext->never_prob == 0.1);

    write_text_atomic((dir.path / "e.json").string(),
                      R"({"max_iter": 33, "tol": 0.002, "mc_draws": 123, "seed": 9,
                          "damping": 0.5, "refresh_draws": false})");
    EmConfig cfg;
    apply_em_config_json((dir.path / "e.json").string(), cfg);
    CHECK(cfg.max_iter == 33);
    CHECK(cfg.tol == 0.002);
    CHECK(cfg.mc_draws == 123);
    CHECK(cfg.seed == 9);
    CHECK(cfg.damping == 0.5);
    CHECK(cfg.refresh_draws == false);
  }
}
