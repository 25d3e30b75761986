#include <doctest.h>

#include <cmath>

#include "ltrcjm/baseline.hpp"
#include "ltrcjm/simulate.hpp"
#include "ltrcjm/validate.hpp"
#include "test_helpers.hpp"

using namespace ltrcjm;
using testing::subject;

namespace {
CovariatePath binary_path(const std::vector<double>& x) {
  return [x](int i, double) {
    Eigen::VectorXd v(1);
    v << x[i];
    return v;
  };
}
}  // namespace

TEST_SUITE("baseline") {
  TEST_CASE("nelson_aalen_ltrc: hand-counted two-subject instance") {
    Dataset d;
    d.basis = linear_basis();
    d.subjects = {subject("a", 0.0, 1.0, true), subject("b", 0.0, 2.0, true)};
    StepHazard h = nelson_aalen_ltrc(d);
    REQUIRE(h.size() == 2);
    CHECK(h.sizes[0] == doctest::Approx(0.5));
    CHECK(h.sizes[1] == doctest::Approx(1.0));
  }

  TEST_CASE("nelson_aalen_ltrc: no truncation reduces to classical Nelson-Aalen") {
    Dataset d;
    d.basis = linear_basis();
    d.subjects = {subject("a", 0.0, 1.0, true), subject("b", 0.0, 2.0, false),
                  subject("c", 0.0, 3.0, true), subject("e", 0.0, 3.0, true)};
    StepHazard h = nelson_aalen_ltrc(d);
    REQUIRE(h.size() == 2);
    CHECK(h.sizes[0] == doctest::Approx(1.0 / 4));  // 1 event, 4 at risk
    CHECK(h.sizes[1] == doctest::Approx(2.0 / 2));  // tie: 2 events, 2 at risk
  }

  TEST_CASE("nelson_aalen_ltrc increments ignore subjects whose window excludes the time") {
    Dataset d;
    d.basis = linear_basis();
    d.subjects = {subject("a", 0.0, 1.0, true), subject("b", 0.0, 2.0, true)};
    StepHazard before = nelson_aalen_ltrc(d);
    // window (1.2, 1.8] excludes both event times 1 and 2
    d.subjects.push_back(subject("c", 1.2, 1.8, false));
    StepHazard after = nelson_aalen_ltrc(d);
    CHECK(before.sizes[0] == after.sizes[0]);
    CHECK(before.sizes[1] == after.sizes[1]);
  }

  TEST_CASE("cox_partial_ltrc: hand-solved 4-subject instance, beta = log(2)/2") {
    // all t = 0 (right-censored only); events at 1, 2, 4 with x = 1, 0, 0 and
    // a censored x = 1 at z = 3. The partial-likelihood score root solves
    // 1 - u/(u+1) - u/(u+2) = 0 for u = e^beta, i.e. u = sqrt(2).
    Dataset d;
    d.basis = linear_basis();
    d.subjects = {subject("1", 0.0, 1.0, true), subject("2", 0.0, 2.0, true),
                  subject("3", 0.0, 3.0, false), subject("4", 0.0, 4.0, true)};
    CoxFit f = cox_partial_ltrc(d, binary_path({1.0, 0.0, 1.0, 0.0}), 1);
    double u = std::sqrt(2.0);
    CHECK(f.coef[0] == doctest::Approx(0.5 * std::log(2.0)).epsilon(1e-8));
    REQUIRE(f.baseline.size() == 3);
    CHECK(f.baseline.sizes[0] == doctest::Approx(1.0 / (2.0 * u + 2.0)).epsilon(1e-8));
    CHECK(f.baseline.sizes[1] == doctest::Approx(1.0 / (u + 2.0)).epsilon(1e-8));
    CHECK(f.baseline.sizes[2] == doctest::Approx(1.0).epsilon(1e-8));
    // hand value of the maximized log partial likelihood
    double ll = 0.5 * std::log(2.0) - std::log(2.0 * u + 2.0) - std::log(u + 2.0);
    CHECK(f.loglik == doctest::Approx(ll).epsilon(1e-10));
  }

  TEST_CASE("cox_partial_ltrc: null covariate reduces to Nelson-Aalen baseline") {
    Dataset d;
    d.basis = linear_basis();
    d.subjects = {subject("a", 0.0, 1.0, true), subject("b", 0.3, 2.0, true),
                  subject("c", 0.5, 3.0, false)};
    CoxFit f = cox_partial_ltrc(d, binary_path({0.0, 0.0, 0.0}), 1);
    CHECK(f.coef[0] == 0.0);
    StepHazard na = nelson_aalen_ltrc(d);
    REQUIRE(f.baseline.size() == na.size());
    for (int k = 0; k < na.size(); ++k)
      CHECK(f.baseline.sizes[k] == doctest::Approx(na.sizes[k]).epsilon(1e-12));
  }

  TEST_CASE("cox_partial_ltrc: truncation changes risk sets and the estimate") {
    // same exits/events, but late entry keeps subject 4 out of the first risk set
    Dataset d;
    d.basis = linear_basis();
    d.subjects = {subject("1", 0.0, 1.0, true), subject("2", 0.0, 2.0, true),
                  subject("3", 0.0, 3.0, false), subject("4", 1.5, 4.0, true)};
    CoxFit f = cox_partial_ltrc(d, binary_path({1.0, 0.0, 1.0, 0.0}), 1);
    // risk sets: at 1: {1,2,3}; at 2: {2,3,4}; at 4: {4}
    // score: 1 - 2u/(2u+1) - u/(u+2) = 0 => u^2 = 2/3... solve numerically
    // directly assert the score is zero at the fitted value instead
    double u = std::exp(f.coef[0]);
    double score = 1.0 - 2.0 * u / (2.0 * u + 1.0) - u / (u + 2.0);
    CHECK(std::abs(score) < 1e-8);
    CHECK(f.coef[0] != doctest::Approx(0.5 * std::log(2.0)).epsilon(1e-6));
  }

  TEST_CASE("cox_partial_ltrc on simulated data with the true path recovers beta") {
    SimSetting s = preset(1);
    s.n = 500;
    s.seed = 7001;
    SimResult r = generate(s);
    // true latent covariate path from the sidecar
    std::vector<Eigen::VectorXd> a(r.truth.size());
    for (std::size_t i = 0; i < r.truth.size(); ++i) a[i] = r.truth[i].a;
    CovariatePath path = [&a](int i, double t) {
      Eigen::VectorXd v(1);
      v << a[i][0] + a[i][1] * t;
      return v;
    };
    CoxFit f = cox_partial_ltrc(r.data, path, 1);
    double se = std::sqrt(1.0 / f.information(0, 0));
    CHECK(std::abs(f.coef[0] - 1.0) < 3.0 * se);
  }

  TEST_CASE("lvcf: dense noise-free measurements agree with the true path fit") {
    SimSetting s = preset(1);
    s.n = 150;
    s.seed = 7002;
    s.sigma2 = 1e-12;      // effectively noise-free
    s.meas_spacing = 0.005;  // dense
    SimResult r = generate(s);
    std::vector<Eigen::VectorXd> a(r.truth.size());
    for (std::size_t i = 0; i < r.truth.size(); ++i) a[i] = r.truth[i].a;
    CovariatePath truth = [&a](int i, double t) {
      Eigen::VectorXd v(1);
      v << a[i][0] + a[i][1] * t;
      return v;
    };
    CoxFit ref = cox_partial_ltrc(r.data, truth, 1);
    LvcfFit lv = lvcf_two_stage(r.data);
    CHECK(std::abs(lv.cox.coef[0] - ref.coef[0]) < 1e-2);
  }

  TEST_CASE("lvcf: one measurement at entry imputes a constant path") {
    Dataset d;
    d.basis = linear_basis();
    d.subjects = {subject("a", 0.0, 1.0, true, {0.0}, {0.7}),
                  subject("b", 0.0, 2.0, true, {0.0}, {-0.2})};
    LvcfFit lv = lvcf_two_stage(d);
    CHECK(!lv.backward_filled);  // the entry measurement covers every event time
    // equivalent to a baseline-covariate Cox fit with x = (0.7, -0.2)
    CoxFit ref = cox_partial_ltrc(d, binary_path({0.7, -0.2}), 1);
    CHECK(lv.cox.coef[0] == doctest::Approx(ref.coef[0]).epsilon(1e-10));
  }

  TEST_CASE("lvcf requires at least one measurement per subject") {
    Dataset d;
    d.basis = linear_basis();
    d.subjects = {subject("a", 0.0, 1.0, true, {0.0}, {0.7}), subject("b", 0.0, 2.0, true)};
    CHECK_THROWS_AS(lvcf_two_stage(d), ValidationError);
  }
}
