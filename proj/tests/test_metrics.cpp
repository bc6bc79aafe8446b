// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <random>
#include <vector>

#include <json.hpp>

#include "gmbm/errors.hpp"
#include "gmbm/metrics.hpp"
#include "metric_oracle.hpp"

using namespace gmbm;
using namespace gmbm::metrics;
using synth::EnumerationMode;
using synth::GroupCounts;
using synth::LabelSource;

namespace {

/// |G| labels over one attribute with a single value: exactly one assignment.
GroupCounts single_assignment(std::vector<std::uint64_t> counts, LabelSource source = LabelSource::GroundTruth) {
  GroupCounts t(counts.size(), {1}, EnumerationMode::Singletons, source);
  for (std::size_t g = 0; g < counts.size(); ++g) t.set_count(g, 0, counts[g]);
  return t;
}

template <typename F>
bool throws_insufficient(F&& f) {
  try {
    f();
  } catch (const InsufficientSupportError&) {
    return true;
  }
  return false;
}

bool close(double a, long double b) { return std::fabs(static_cast<long double>(a) - b) <= 1e-12L; }

}  // namespace

TEST_CASE("hand fixture: train (9,1), test predictions (8,2)") {
  const auto train = single_assignment({9, 1});
  const auto test = single_assignment({8, 2}, LabelSource::Predicted);
  SUBCASE("base MABA") {
    const auto table = base_delta_table(train, test);
    CHECK(table.is_included(0, 0));
    CHECK_FALSE(table.is_included(1, 0));
    CHECK(table.at(1, 0) == 0.0);
    const auto a = maba_base(train, test);
    CHECK(std::abs(a.mean - 0.1) <= 1e-15);
    CHECK(a.variance == 0.0);
    CHECK(a.included_cells == 1);
  }
  SUBCASE("min-support with tau 5 keeps only the count-9 cell") {
    const auto a = maba_min_support(train, test, 5.0);
    CHECK(a.included_cells == 1);
    CHECK(std::abs(a.mean - 0.1) <= 1e-15);
  }
  SUBCASE("min-support with tau 0 keeps every cell") {
    const auto a = maba_min_support(train, test, 0.0);
    CHECK(a.included_cells == 2);
    CHECK(std::abs(a.mean - 0.2) <= 1e-15);
    CHECK(std::abs(a.variance - 0.01) <= 1e-15);
  }
  SUBCASE("min-support above every count is empty") {
    const auto a = maba_min_support(train, test, 9.0);
    CHECK(a.empty());
    CHECK(a.mean == 0.0);
    CHECK(a.variance == 0.0);
  }
  SUBCASE("weighted MABA") { CHECK(std::abs(maba_weighted(train, test) - 0.1) <= 1e-15); }
  SUBCASE("identical proportions give zero") {
    const auto same = single_assignment({18, 2}, LabelSource::Predicted);
    CHECK(maba_base(train, same).mean == 0.0);
    CHECK(maba_weighted(train, same) == 0.0);
  }
}

TEST_CASE("hand fixture: SBA with actual (3,1) and predictions (4,0)") {
  const auto actual = single_assignment({3, 1});
  const auto pred = single_assignment({4, 0}, LabelSource::Predicted);
  SUBCASE("default epsilon") {
    const auto r = sba(pred, actual, {1e-6});
    // 2 * 0.25 / (sqrt(4) + 1e-6) / 2
    CHECK(std::abs(r.mean - 0.25 / (2.0 + 1e-6)) <= 1e-15);
    CHECK(std::abs(r.mean - 0.125) <= 1e-6);
    CHECK(r.variance == 0.0);
    CHECK(r.included_assignments == 1);
  }
  SUBCASE("vanishing epsilon reproduces 0.125 exactly") {
    CHECK(sba(pred, actual, {1e-300}).mean == 0.125);
  }
  SUBCASE("predictions equal to actual give zero") {
    CHECK(sba(actual, actual).mean == 0.0);
  }
  SUBCASE("epsilon must be positive") { CHECK_THROWS_AS(sba(pred, actual, {0.0}), ContractError); }
}

TEST_CASE("SBA exclusions and errors") {
  GroupCounts actual(2, {2}, EnumerationMode::Singletons);
  GroupCounts pred(2, {2}, EnumerationMode::Singletons, LabelSource::Predicted);
  actual.set_count(0, 0, 3);
  actual.set_count(1, 0, 1);
  pred.set_count(0, 0, 4);
  pred.set_count(1, 1, 2);  // pred mass on an assignment with no actual samples
  const auto r = sba(pred, actual, {1e-300});
  CHECK(r.included_assignments == 1);
  REQUIRE(r.excluded_assignments.size() == 1);
  CHECK(r.mean == 0.125);

  GroupCounts pred_missing(2, {2}, EnumerationMode::Singletons, LabelSource::Predicted);
  actual.set_count(0, 1, 1);
  pred_missing.set_count(0, 0, 4);
  CHECK(throws_insufficient([&] { sba(pred_missing, actual); }));

  GroupCounts empty(2, {2}, EnumerationMode::Singletons);
  CHECK(throws_insufficient([&] { sba(empty, empty); }));
}

TEST_CASE("MABA support errors and enumeration mismatch") {
  GroupCounts train(2, {2}, EnumerationMode::Singletons);
  GroupCounts test(2, {2}, EnumerationMode::Singletons, LabelSource::Predicted);
  train.set_count(0, 0, 5);
  train.set_count(0, 1, 5);
  test.set_count(0, 0, 5);
  CHECK(throws_insufficient([&] { maba_base(train, test); }));
  // Zero train mass: the indicator cannot fire and the cell is skipped.
  GroupCounts sparse_train(2, {2}, EnumerationMode::Singletons);
  sparse_train.set_count(0, 0, 5);
  CHECK(maba_base(sparse_train, test).included_cells == 1);
  GroupCounts other(2, {3}, EnumerationMode::Singletons);
  CHECK_THROWS_AS(maba_base(train, other), SchemaError);
  CHECK_THROWS_AS(sba(train, other), SchemaError);
  CHECK_THROWS_AS(maba_min_support(train, test, -1.0), ContractError);
  GroupCounts zero(2, {2}, EnumerationMode::Singletons);
  CHECK_THROWS_AS(maba_weighted(zero, test), ContractError);
}

TEST_CASE("every amplification metric matches its literal evaluator on random tables") {
  std::mt19937_64 rng(20240601);
  std::size_t defined[4] = {0, 0, 0, 0};
  for (int trial = 0; trial < 1000; ++trial) {
    const auto pair = testing::random_table_pair(rng);
    const auto& a = pair.a;
    const auto& b = pair.b;
    const double tau = std::uniform_real_distribution<double>(0.0, 12.0)(rng);
    const double eps = std::uniform_real_distribution<double>(1e-8, 0.5)(rng);
    CAPTURE(trial);

    const auto ob = testing::oracle_maba_base(a, b);
    if (ob) {
      const auto r = maba_base(a, b);
      REQUIRE(close(r.mean, ob->mean));
      REQUIRE(close(r.variance, ob->variance));
      ++defined[0];
    } else {
      REQUIRE(throws_insufficient([&] { maba_base(a, b); }));
    }

    const auto om = testing::oracle_maba_min_support(a, b, tau);
    if (om) {
      const auto r = maba_min_support(a, b, tau);
      REQUIRE(close(r.mean, om->mean));
      REQUIRE(close(r.variance, om->variance));
      ++defined[1];
    } else {
      REQUIRE(throws_insufficient([&] { maba_min_support(a, b, tau); }));
    }

    const auto ow = testing::oracle_maba_weighted(a, b);
    if (ow) {
      REQUIRE(close(maba_weighted(a, b), *ow));
      ++defined[2];
    } else if (a.total_cells() > 0) {
      REQUIRE(throws_insufficient([&] { maba_weighted(a, b); }));
    }

    for (bool weighted : {true, false}) {
      const auto os = testing::oracle_sba(a, b, eps, weighted);
      const SbaOptions opts{eps, weighted ? SbaVariance::WeightedGaps : SbaVariance::UnweightedGaps};
      if (os) {
        const auto r = sba(a, b, opts);
        REQUIRE(close(r.mean, os->mean));
        REQUIRE(close(r.variance, os->variance));
        if (weighted) ++defined[3];
      } else {
        REQUIRE(throws_insufficient([&] { sba(a, b, opts); }));
      }
    }
  }
  MESSAGE("defined cases: base " << defined[0] << ", min-support " << defined[1] << ", weighted " << defined[2]
                                 << ", sba " << defined[3]);
  for (auto n : defined) CHECK(n >= 500);
}

TEST_CASE("SBA is invariant to a consistent relabelling of groups") {
  std::mt19937_64 rng(77);
  for (int trial = 0; trial < 200; ++trial) {
    const auto pair = testing::random_table_pair(rng);
    const std::size_t n = pair.a.num_classes();
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    auto pa = pair.a;
    auto pb = pair.b;
    for (std::size_t g = 0; g < n; ++g) {
      for (std::size_t m = 0; m < pa.num_assignments(); ++m) {
        pa.set_count(perm[g], m, pair.a.count(g, m));
        pb.set_count(perm[g], m, pair.b.count(g, m));
      }
    }
    if (!testing::oracle_sba(pair.a, pair.b, 1e-6)) continue;
    const auto x = sba(pair.a, pair.b);
    const auto y = sba(pa, pb);
    REQUIRE(std::abs(x.mean - y.mean) <= 1e-15 * (1.0 + x.mean));
    REQUIRE(std::abs(x.variance - y.variance) <= 1e-15 * (1.0 + x.variance));
  }
}

TEST_CASE("SBA weights scale as the inverse square root of assignment mass") {
  // Two assignments with identical proportions; scaling one by s^2 divides its
  // weighted gap by s when epsilon is negligible.
  GroupCounts actual(2, {2}, EnumerationMode::Singletons);
  GroupCounts pred(2, {2}, EnumerationMode::Singletons, LabelSource::Predicted);
  for (std::size_t m = 0; m < 2; ++m) {
    actual.set_count(0, m, 3);
    actual.set_count(1, m, 1);
    pred.set_count(0, m, 4);
  }
  const double base = sba(pred, actual, {1e-300}).mean;
  for (std::uint64_t s : {2u, 3u, 10u}) {
    auto a2 = actual;
    auto p2 = pred;
    for (std::size_t g = 0; g < 2; ++g) {
      a2.set_count(g, 1, actual.count(g, 1) * s * s);
      p2.set_count(g, 1, pred.count(g, 1) * s * s);
    }
    // m=0 keeps its gap 0.25/2 per label; m=1 drops to 0.25/(2s).
    const double expected = (0.25 / 2.0 + 0.25 / (2.0 * static_cast<double>(s))) / 2.0;
    CHECK(std::abs(sba(p2, a2, {1e-300}).mean - expected) <= 1e-15);
  }
  CHECK(base == 0.125);
}

TEST_CASE("gating and weighted bound on random tables") {
  std::mt19937_64 rng(91);
  for (int trial = 0; trial < 500; ++trial) {
    const auto pair = testing::random_table_pair(rng);
    if (!testing::oracle_maba_base(pair.a, pair.b) || !testing::oracle_maba_min_support(pair.a, pair.b, 0.0)) continue;
    const auto table = base_delta_table(pair.a, pair.b);
    const double prior = 1.0 / static_cast<double>(pair.a.num_classes());
    std::vector<double> kept;
    double sum = 0.0;
    for (std::size_t g = 0; g < table.num_classes; ++g) {
      for (std::size_t m = 0; m < table.num_assignments; ++m) {
        const auto mass = pair.a.assignment_total(m);
        const bool above = mass > 0 && static_cast<double>(pair.a.count(g, m)) / static_cast<double>(mass) > prior;
        REQUIRE(table.is_included(g, m) == above);
        if (!above) REQUIRE(table.at(g, m) == 0.0);
        sum += std::abs(table.at(g, m));
      }
    }
    REQUIRE(std::abs(summarize(table).mean - sum / static_cast<double>(table.num_assignments)) <= 1e-15);

    // Unweighted shifts over every supported cell bound the weighted mean.
    const auto all = min_support_delta_table(pair.a, pair.b, 0.0);
    double max_delta = 0.0;
    for (double d : all.delta) max_delta = std::max(max_delta, std::abs(d));
    const double bound = max_delta * static_cast<double>(pair.a.num_classes()) /
                         static_cast<double>(pair.a.num_assignments());
    REQUIRE(maba_weighted(pair.a, pair.b) <= bound + 1e-15);
  }
}

TEST_CASE("unbiased accuracy") {
  SUBCASE("all correct") {
    const std::vector<std::size_t> y{0, 1, 2}, groups{0, 1, 2};
    CHECK(unbiased_accuracy(y, y, groups) == 1.0);
  }
  SUBCASE("cell-balanced, not sample-weighted") {
    std::vector<std::size_t> truth(100, 0), preds(100, 0), groups(100, 0);
    preds[99] = 1;
    groups[99] = 1;
    CHECK(unbiased_accuracy(preds, truth, groups) == 0.5);
  }
  SUBCASE("duplicating a cell changes nothing") {
    std::vector<std::size_t> truth{0, 0, 1, 1}, preds{0, 1, 1, 1}, groups{0, 0, 1, 1};
    const double before = unbiased_accuracy(preds, truth, groups);
    for (std::size_t i = 0; i < 2; ++i) {
      truth.push_back(truth[i]);
      preds.push_back(preds[i]);
      groups.push_back(groups[i]);
    }
    CHECK(unbiased_accuracy(preds, truth, groups) == before);
  }
  SUBCASE("empty input") {
    const std::vector<std::size_t> none;
    CHECK_THROWS_AS(unbiased_accuracy(none, none, none), ContractError);
  }
}

TEST_CASE("bias-conflicting accuracy") {
  // N=3, one attribute with 3 values; aligned value is y.
  const std::vector<std::size_t> cards{3};
  const std::vector<std::size_t> truth{0, 1, 2, 0, 1, 2};
  const std::vector<std::size_t> bias{0, 1, 2, 1, 2, 0};  // last three conflict
  const std::vector<std::size_t> preds{0, 1, 2, 0, 1, 1};
  CHECK(bias_conflicting_accuracy(preds, truth, bias, cards, 0) == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
  CHECK(bias_conflicting_accuracy(preds, truth, bias, cards, std::nullopt) ==
        doctest::Approx(2.0 / 3.0).epsilon(1e-15));
  const std::vector<std::size_t> aligned{0, 1, 2};
  const std::vector<std::size_t> first{0, 1, 2};
  CHECK(throws_insufficient([&] {
    bias_conflicting_accuracy(std::span(first), std::span(first), std::span(aligned), cards, 0);
  }));
  CHECK_THROWS_AS(bias_conflicting_accuracy(preds, truth, bias, cards, 1), IndexError);
  SUBCASE("all-conflicting needs every attribute to conflict") {
    const std::vector<std::size_t> cards2{2, 2};
    const std::vector<std::size_t> t{0, 0, 1};
    const std::vector<std::size_t> b{1, 0, 1, 1, 0, 1};  // rows: (1,0) (1,1) (0,1)
    const std::vector<std::size_t> p{0, 1, 1};
    CHECK(bias_conflicting_accuracy(p, t, b, cards2, std::nullopt) == 0.0);  // only row 1 qualifies
    CHECK(bias_conflicting_accuracy(p, t, b, cards2, 0) == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
    CHECK(bias_conflicting_accuracy(p, t, b, cards2, 1) == 0.0);  // only row 1
  }
}

TEST_CASE("random predictions on an unbiased split sit at chance") {
  std::mt19937_64 rng(5);
  const std::size_t n = 20000;
  std::vector<std::size_t> truth(n), preds(n), bias(n);
  for (std::size_t i = 0; i < n; ++i) {
    truth[i] = rng() % 2;
    preds[i] = rng() % 2;
    bias[i] = rng() % 2;
  }
  const std::vector<std::size_t> cards{2};
  CHECK(std::abs(bias_conflicting_accuracy(preds, truth, bias, cards, 0) - 0.5) < 0.03);
}

TEST_CASE("evaluate and the report schema") {
  std::mt19937_64 rng(9);
  const std::vector<std::size_t> cards{2, 3};
  const std::size_t n = 400;
  std::vector<std::size_t> truth(n), bias(2 * n), preds(n);
  GroupCounts train(3, cards, EnumerationMode::AllSubsets);
  for (std::size_t i = 0; i < 3000; ++i) {
    const std::size_t y = rng() % 3;
    const std::vector<std::size_t> b{rng() % 10 < 8 ? y % 2 : rng() % 2, rng() % 10 < 8 ? y : rng() % 3};
    train.add_sample(y, b);
  }
  for (std::size_t i = 0; i < n; ++i) {
    truth[i] = rng() % 3;
    bias[2 * i] = rng() % 2;
    bias[2 * i + 1] = rng() % 3;
    preds[i] = rng() % 4 == 0 ? bias[2 * i + 1] : truth[i];
  }
  const MetricParams params;
  const auto report = evaluate(preds, truth, bias, train, params);
  CHECK(report.samples == n);
  CHECK(report.tau == doctest::Approx(30.0));
  CHECK(report.groups.size() == 18);
  CHECK(report.bias_conflicting.size() == 2);
  CHECK(report.unbiased_accuracy <= 1.0);
  CHECK(report.worst_group_accuracy <= report.unbiased_accuracy);

  // Cross-check the amplification fields against the oracles on the same tables.
  const auto test_pred = synth::group_table(3, cards, preds, bias, LabelSource::Predicted, train.mode());
  const auto test_actual = synth::group_table(3, cards, truth, bias, LabelSource::GroundTruth, train.mode());
  CHECK(close(report.maba_base.mean, testing::oracle_maba_base(train, test_pred)->mean));
  CHECK(close(report.maba_min_support.mean, testing::oracle_maba_min_support(train, test_pred, 30.0)->mean));
  CHECK(close(report.maba_weighted, *testing::oracle_maba_weighted(train, test_pred)));
  CHECK(close(report.sba.mean, testing::oracle_sba(test_pred, test_actual, 1e-6)->mean));

  const auto json = report_to_json(report);
  CHECK(validate_report_json(json).empty());
  const auto parsed = nlohmann::json::parse(json);
  CHECK(parsed["schema"] == "gmbm-metrics/1");
  CHECK(parsed["groups"].size() == 18);

  auto broken = parsed;
  broken.erase("sba");
  CHECK_FALSE(validate_report_json(broken.dump()).empty());
  broken = parsed;
  broken["accuracy"] = 1.5;
  CHECK_FALSE(validate_report_json(broken.dump()).empty());
  CHECK_FALSE(validate_report_json("not json").empty());

  const auto text = report_to_text(report);
  CHECK(text.find("SBA") != std::string::npos);

  SUBCASE("predictions equal to the truth") {
    const auto perfect = evaluate(truth, truth, bias, train, params);
    CHECK(perfect.accuracy == 1.0);
    CHECK(perfect.unbiased_accuracy == 1.0);
    CHECK(perfect.sba.mean == 0.0);
    CHECK(perfect.sba.variance == 0.0);
  }
}
