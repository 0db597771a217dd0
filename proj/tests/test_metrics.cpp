#include "doctest.h"

#include "oracles/oracles.hpp"
#include "qprobe/aggregate.hpp"
#include "qprobe/metrics.hpp"

#include <random>

using namespace qprobe;

TEST_CASE("hand-built replay log gives kappa 2/3 and alpha 3/4") {
  const auto manifest = parse_manifest_csv(oracle::metric_manifest_csv(), "hand");
  const auto trials = parse_trial_log(oracle::metric_replay_log());
  const auto outcomes = pair_outcomes(trials);
  REQUIRE(outcomes.size() == 6);
  CHECK(consistency_kappa(outcomes) == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
  const auto alpha = accuracy_alpha(outcomes, mos_table(manifest));
  REQUIRE(alpha.has_value());
  CHECK(*alpha == doctest::Approx(0.75).epsilon(1e-12));
}

TEST_CASE("plcc hand example") {
  Eigen::VectorXd x(4), y(4);
  x << 1, 2, 3, 4;
  y << 1, 3, 2, 4;
  CHECK(std::abs(plcc(x, y) - 0.8) < 1e-12);
  CHECK(plcc(x, x) == doctest::Approx(1.0));
  CHECK(plcc(x, -x) == doctest::Approx(-1.0));
  CHECK_THROWS_AS(plcc(x, Eigen::VectorXd::Constant(4, 2.0)), ValidationError);
  CHECK_THROWS_AS(plcc(x.head(1), y.head(1)), ValidationError);
}

TEST_CASE("kappa and alpha edge cases") {
  CHECK_THROWS_AS(consistency_kappa({}), ValidationError);
  PairOutcome o;
  o.a_id = "a";
  o.b_id = "b";
  o.forward = Response::Second;
  o.reverse = Response::Second;
  const std::vector<PairOutcome> none = {o, o};
  CHECK(consistency_kappa(none) == 0.0);
  CHECK_FALSE(accuracy_alpha(none, MosTable{{"a", 1.0}, {"b", 2.0}}).has_value());

  // Ties in MOS: picking the lexicographically first image counts as correct.
  o.forward = Response::First;
  o.reverse = Response::Second;
  o.consistent = true;
  const std::vector<PairOutcome> tie = {o};
  CHECK(accuracy_alpha(tie, MosTable{{"a", 5.0}, {"b", 5.0}}) == 1.0);
}

TEST_CASE("logistic mapping is invariant to affine changes of the scores") {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0, 100);
  Eigen::VectorXd mos(40), s(40);
  for (int i = 0; i < 40; ++i) {
    mos(i) = u(rng);
    s(i) = std::tanh((mos(i) - 50) / 30) + 0.05 * (u(rng) - 50) / 50;
  }
  const auto f1 = fit_monotonic_logistic(s, mos);
  const auto f2 = fit_monotonic_logistic(3.0 * s.array() + 7.0, mos);
  CHECK_FALSE(f1.fallback);
  CHECK(plcc(f1.mapped, mos) == doctest::Approx(plcc(f2.mapped, mos)).epsilon(1e-9));
  CHECK(plcc(f1.mapped, mos) >= plcc(s, mos) - 1e-12);
}

TEST_CASE("logistic mapping recovers exact logistic data") {
  Eigen::VectorXd s = Eigen::VectorXd::LinSpaced(50, -3, 3);
  MappingParams truth{90, 10, 0.3, 0.7};
  Eigen::VectorXd mos(50);
  for (int i = 0; i < 50; ++i) mos(i) = truth(s(i));
  const auto fit = fit_monotonic_logistic(s, mos);
  CHECK(plcc(fit.mapped, mos) > 1.0 - 1e-9);
  CHECK_THROWS_AS(fit_monotonic_logistic(s.head(4), mos.head(4)), ValidationError);
  CHECK_THROWS_AS(fit_monotonic_logistic(Eigen::VectorXd::Ones(6), mos.head(6)), ValidationError);
}

TEST_CASE("property: mapping never lowers PLCC for monotone warps") {
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> u(0, 100);
  for (int rep = 0; rep < 10; ++rep) {
    Eigen::VectorXd mos(30), s(30);
    const double k = 0.02 + 0.1 * rep;
    for (int i = 0; i < 30; ++i) {
      mos(i) = u(rng);
      s(i) = std::exp(k * mos(i) / 10.0);
    }
    const auto fit = fit_monotonic_logistic(s, mos);
    CHECK(plcc(fit.mapped, mos) >= plcc(s, mos) - 1e-9);
  }
}

TEST_CASE("nelder-mead minimizes a quadratic") {
  const auto r = nelder_mead([](const Eigen::VectorXd& x) { return (x(0) - 1) * (x(0) - 1) + 4 * (x(1) + 2) * (x(1) + 2); },
                             Eigen::Vector2d(5, 5), Eigen::Vector2d(1, 1));
  CHECK(r.x(0) == doctest::Approx(1.0).epsilon(1e-5));
  CHECK(r.x(1) == doctest::Approx(-2.0).epsilon(1e-5));
}

TEST_CASE("report groups by dataset and adds a pooled row") {
  std::vector<ImageRecord> images;
  for (int i = 0; i < 12; ++i) {
    ImageRecord r;
    r.id = "x" + std::to_string(i);
    r.dataset_id = i < 6 ? "A" : "B";
    r.file_ref = r.id + ".pgm";
    r.mos = 5.0 + 7.0 * i;
    images.push_back(r);
  }
  const DatasetManifest m("two", images);
  std::vector<TrialRecord> trials;
  std::size_t idx = 0;
  for (int base : {0, 6}) {
    for (int i = 0; i < 6; ++i) {
      for (int j = i + 1; j < 6; ++j) {
        const auto a = "x" + std::to_string(base + i), b = "x" + std::to_string(base + j);
        TrialRecord f;
        f.trial_id = "f" + std::to_string(idx);
        f.first_id = a;
        f.second_id = b;
        f.response = Response::Second;  // later ids have higher mos
        f.pair_index = idx;
        TrialRecord r = f;
        r.trial_id = "r" + std::to_string(idx);
        std::swap(r.first_id, r.second_id);
        r.response = Response::First;
        trials.push_back(f);
        trials.push_back(r);
        ++idx;
      }
    }
  }
  const auto outcomes = pair_outcomes(trials);
  const auto c = build_matrix(m.ids(), outcomes);
  const auto ranking = map_estimate(c);
  const auto reports = eval_report(trials, m, ranking);
  REQUIRE(reports.size() == 3);
  CHECK(reports[0].group_id == "A");
  CHECK(reports[1].group_id == "B");
  CHECK(reports[2].group_id == "all");
  for (const auto& r : reports) {
    CHECK(r.kappa == 1.0);
    CHECK(r.alpha == 1.0);
    REQUIRE(r.rho.has_value());
  }
  // No cross-group comparisons, so only the per-group scales are meaningful.
  CHECK(*reports[0].rho > 0.95);
  CHECK(*reports[1].rho > 0.95);
  for (const auto& r : reports) {
    CHECK(r.bias_first_rate == doctest::Approx(0.5));
  }
  CHECK(reports[2].n_pairs == 30);
  const auto csv = reports_to_csv(reports);
  CHECK(csv.rfind("group,kappa,alpha,rho,n_pairs,n_consistent,bias_first,bias_second\n", 0) == 0);
}

TEST_CASE("report leaves undefined cells empty") {
  EvalReport r;
  r.group_id = "g";
  r.kappa = 0.0;
  r.n_pairs = 3;
  const std::vector<EvalReport> rows = {r};
  CHECK(reports_to_csv(rows) == "group,kappa,alpha,rho,n_pairs,n_consistent,bias_first,bias_second\ng,0,,,3,0,0,0\n");
}
