#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "support/oracles.hpp"

using namespace flexfas;

namespace {

std::vector<ScoreRecord> make(std::initializer_list<std::pair<double, Label>> xs) {
  std::vector<ScoreRecord> out;
  int i = 0;
  for (auto [s, l] : xs) out.push_back({"x" + std::to_string(i++), s, l, {}});
  return out;
}

constexpr auto B = Label::kBonafide;
constexpr auto A = Label::kAttack;

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error thrown";
  return ErrorCode::kIoError;
}

}  // namespace

TEST(Metrics, HandWorkedExample) {
  // Bonafide 0.9, 0.8, 0.4; attack 0.7, 0.3, 0.2, 0.1.
  const auto recs = make({{0.9, B}, {0.8, B}, {0.4, B}, {0.7, A}, {0.3, A}, {0.2, A}, {0.1, A}});
  const auto r = classify_rates(recs, 0.5);
  EXPECT_DOUBLE_EQ(r.apcer, 0.25);
  EXPECT_DOUBLE_EQ(r.bpcer, 1.0 / 3.0);
  EXPECT_DOUBLE_EQ(r.acer, (0.25 + 1.0 / 3.0) / 2.0);
  // Gaps at the candidate midpoints 0.15, 0.25, 0.35, 0.55, 0.75, 0.85 are
  // 3/4, 1/2, 1/4, 1/12, 1/3, 2/3; the minimum sits between 0.4 and 0.7.
  const auto e = eer_threshold(recs);
  EXPECT_DOUBLE_EQ(e.threshold, 0.55);
  EXPECT_DOUBLE_EQ(e.apcer, 0.25);
  EXPECT_DOUBLE_EQ(e.bpcer, 1.0 / 3.0);
  EXPECT_DOUBLE_EQ(e.eer, 7.0 / 24.0);
  // FPR 0 first reached at threshold 0.8: TPR 2/3.
  EXPECT_DOUBLE_EQ(tpr_at_fpr(recs, 0.01), 2.0 / 3.0);
}

TEST(Metrics, ThresholdIsInclusive) {
  const auto recs = make({{0.5, B}, {0.5, A}});
  const auto r = classify_rates(recs, 0.5);
  EXPECT_EQ(r.apcer, 1.0);
  EXPECT_EQ(r.bpcer, 0.0);
}

TEST(Metrics, PerfectSeparationGivesZeroEer) {
  const auto recs = make({{0.9, B}, {0.6, B}, {0.2, A}, {0.1, A}});
  const auto e = eer_threshold(recs);
  EXPECT_EQ(e.eer, 0.0);
  EXPECT_DOUBLE_EQ(e.threshold, 0.4);
  EXPECT_EQ(tpr_at_fpr(recs, 0.001), 1.0);
}

TEST(Metrics, AllTiedScoresPickLowestSentinel) {
  // Every candidate has gap 1; the lowest (-inf) wins the tie.
  const auto recs = make({{0.5, B}, {0.5, A}});
  const auto e = eer_threshold(recs);
  EXPECT_EQ(e.threshold, -std::numeric_limits<double>::infinity());
  EXPECT_EQ(e.eer, 0.5);
  EXPECT_EQ(tpr_at_fpr(recs, 0.5), 0.0);
}

TEST(Metrics, OneClassOnlyIsRejected) {
  const auto only_bona = make({{0.1, B}, {0.9, B}});
  EXPECT_EQ(code_of([&] { classify_rates(only_bona, 0.5); }), ErrorCode::kOneClassOnly);
  EXPECT_EQ(code_of([&] { eer_threshold(only_bona); }), ErrorCode::kOneClassOnly);
  EXPECT_EQ(code_of([&] { tpr_at_fpr(only_bona, 0.01); }), ErrorCode::kOneClassOnly);
  EXPECT_EQ(code_of([&] { classify_rates({}, 0.5); }), ErrorCode::kOneClassOnly);
}

TEST(Metrics, FprTargetOutsideOpenUnitIntervalRejected) {
  const auto recs = make({{0.9, B}, {0.1, A}});
  for (double t : {0.0, 1.0, -0.1, std::nan("")})
    EXPECT_EQ(code_of([&] { tpr_at_fpr(recs, t); }), ErrorCode::kInvalidArgument);
}

TEST(Metrics, FixedRuleIgnoresValidation) {
  std::mt19937_64 rng(3);
  const auto test = oracle::random_scores(rng, 50);
  const auto val1 = oracle::random_scores(rng, 40), val2 = oracle::random_scores(rng, 40);
  const auto a = build_report(val1, test, ThresholdRule::kFixedHalf);
  const auto b = build_report(val2, test, ThresholdRule::kFixedHalf);
  EXPECT_EQ(a, b);
  EXPECT_EQ(a.threshold, 0.5);
}

TEST(Metrics, EerRuleUsesValidationThreshold) {
  std::mt19937_64 rng(4);
  const auto val = oracle::random_scores(rng, 60), test = oracle::random_scores(rng, 60);
  const auto rep = build_report(val, test, ThresholdRule::kEerOnValidation);
  EXPECT_EQ(rep.threshold, eer_threshold(val).threshold);
  const auto o = oracle::rates_at(test, rep.threshold);
  EXPECT_EQ(rep.apcer, o.apcer);
  EXPECT_EQ(rep.bpcer, o.bpcer);
  EXPECT_EQ(rep.n_bonafide + rep.n_attack, test.size());
}

TEST(Metrics, ApcerPerPaiCountsEachInstrument) {
  auto recs = make({{0.9, B}, {0.8, A}, {0.2, A}, {0.7, A}});
  recs[1].pai = "print";
  recs[2].pai = "print";
  recs[3].pai = "replay";
  const auto per = apcer_per_pai(recs, 0.5);
  EXPECT_DOUBLE_EQ(per.at("print"), 0.5);
  EXPECT_DOUBLE_EQ(per.at("replay"), 1.0);
}

// Randomized comparison against the exhaustive sweep, plus invariants.
class MetricsSweep : public ::testing::TestWithParam<int> {};

TEST_P(MetricsSweep, MatchesExhaustiveSweep) {
  std::mt19937_64 rng(1000 + GetParam());
  std::uniform_int_distribution<std::size_t> size(4, 200);
  for (int trial = 0; trial < 25; ++trial) {
    const auto recs = oracle::random_scores(rng, size(rng));
    for (double t : oracle::sweep_thresholds(recs)) {
      const auto got = classify_rates(recs, t);
      const auto want = oracle::rates_at(recs, t);
      ASSERT_EQ(got.apcer, want.apcer);
      ASSERT_EQ(got.bpcer, want.bpcer);
      ASSERT_EQ(got.acer, (got.apcer + got.bpcer) / 2.0);
      ASSERT_GE(got.apcer, 0.0);
      ASSERT_LE(got.apcer, 1.0);
    }
    const auto e = eer_threshold(recs);
    const auto o = oracle::eer_by_sweep(recs);
    EXPECT_EQ(e.eer, o.eer);
    EXPECT_EQ(e.apcer, o.rates.apcer);
    EXPECT_EQ(e.bpcer, o.rates.bpcer);
    const auto at = oracle::rates_at(recs, e.threshold);
    EXPECT_EQ(at.apcer, e.apcer);
    EXPECT_EQ(at.bpcer, e.bpcer);
    for (double target : {0.001, 0.01, 0.1, 0.5})
      EXPECT_EQ(tpr_at_fpr(recs, target), oracle::tpr_at_fpr_by_sweep(recs, target));
  }
}

TEST_P(MetricsSweep, InvariantUnderRecordOrder) {
  std::mt19937_64 rng(2000 + GetParam());
  auto recs = oracle::random_scores(rng, 80);
  const auto a = build_report(recs, recs, ThresholdRule::kEerOnValidation);
  std::shuffle(recs.begin(), recs.end(), rng);
  EXPECT_EQ(build_report(recs, recs, ThresholdRule::kEerOnValidation), a);
}

INSTANTIATE_TEST_SUITE_P(Random, MetricsSweep, ::testing::Range(0, 20));
