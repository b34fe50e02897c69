#include <gtest/gtest.h>

#include <algorithm>
#include <random>

#include "support/oracles.hpp"

using namespace flexfas;

namespace {

ModalitySample full_sample() {
  ModalitySample s;
  s.sample_id = "a";
  s.image(ModalityId::kRgb) = Tensor({3, 4, 4}, 0.3);
  s.image(ModalityId::kDepth) = Tensor({1, 4, 4}, 0.6);
  s.image(ModalityId::kIr) = Tensor({1, 4, 4}, 0.9);
  return s;
}

bool all_equal(const Tensor& t, double v) {
  for (double x : t.data())
    if (x != v) return false;
  return true;
}

}  // namespace

TEST(Augment, ProbabilityZeroKeepsEverything) {
  std::mt19937_64 rng(1);
  for (int i = 0; i < 1000; ++i) EXPECT_EQ(draw_dropmodal({0.0, 0.0, 0}, rng), ModalitySet::all());
}

TEST(Augment, ProbabilityOneDropsDepthAndIrOnly) {
  std::mt19937_64 rng(2);
  for (int i = 0; i < 1000; ++i) EXPECT_EQ(draw_dropmodal({1.0, 1.0, 0}, rng), ModalitySet{ModalityId::kRgb});
}

TEST(Augment, DropRatesWithinBinomialInterval) {
  const DropModalConfig cfg{0.3, 0.3, 17};
  auto rng = dropmodal_stream(cfg);
  const std::size_t n = 10000;
  std::size_t depth = 0, ir = 0, both = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const ModalitySet k = draw_dropmodal(cfg, rng);
    ASSERT_TRUE(k.contains(ModalityId::kRgb));
    depth += !k.contains(ModalityId::kDepth);
    ir += !k.contains(ModalityId::kIr);
    both += !k.contains(ModalityId::kDepth) && !k.contains(ModalityId::kIr);
  }
  for (std::size_t count : {depth, ir}) {
    const auto [lo, hi] = oracle::binomial_ci99(0.3, n);
    const double rate = static_cast<double>(count) / n;
    EXPECT_GE(rate, lo);
    EXPECT_LE(rate, hi);
  }
  // Independent drops: both gone with probability 0.09.
  const auto [lo, hi] = oracle::binomial_ci99(0.09, n);
  EXPECT_GE(static_cast<double>(both) / n, lo);
  EXPECT_LE(static_cast<double>(both) / n, hi);
}

TEST(Augment, SameSeedSameDraws) {
  const DropModalConfig cfg{0.5, 0.2, 99};
  auto a = dropmodal_stream(cfg), b = dropmodal_stream(cfg);
  for (int i = 0; i < 500; ++i) EXPECT_EQ(draw_dropmodal(cfg, a), draw_dropmodal(cfg, b));
  auto w1 = dropmodal_stream(cfg, 1);
  auto w0 = dropmodal_stream(cfg, 0);
  int differ = 0;
  for (int i = 0; i < 100; ++i) differ += !(draw_dropmodal(cfg, w0) == draw_dropmodal(cfg, w1));
  EXPECT_GT(differ, 0);
}

TEST(Augment, MaskZeroesExactlyTheInactiveArrays) {
  const auto s = full_sample();
  const auto m = mask_modalities(s, {ModalityId::kRgb, ModalityId::kIr});
  EXPECT_TRUE(all_equal(*m.image(ModalityId::kRgb), 0.3));
  EXPECT_TRUE(all_equal(*m.image(ModalityId::kDepth), 0.0));
  EXPECT_TRUE(all_equal(*m.image(ModalityId::kIr), 0.9));
  EXPECT_TRUE(all_equal(*s.image(ModalityId::kDepth), 0.6));  // input untouched
}

TEST(Augment, MaskIsIdempotentAndComposesByIntersection) {
  const auto s = full_sample();
  const ModalitySet sets[] = {ModalitySet{ModalityId::kRgb}, ModalitySet{ModalityId::kRgb, ModalityId::kDepth},
                              ModalitySet{ModalityId::kRgb, ModalityId::kIr}, ModalitySet::all()};
  auto same = [](const ModalitySample& a, const ModalitySample& b) {
    for (auto m : kAllModalities)
      if (!std::ranges::equal(a.image(m)->data(), b.image(m)->data())) return false;
    return true;
  };
  for (auto a : sets) {
    const auto once = mask_modalities(s, a);
    EXPECT_TRUE(same(mask_modalities(once, a), once));
    for (auto b : sets) EXPECT_TRUE(same(mask_modalities(once, b), mask_modalities(s, a.intersect(b))));
  }
}

TEST(Augment, MaskWithoutRgbIsRejected) {
  try {
    mask_modalities(full_sample(), {ModalityId::kDepth});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kMissingRgb);
  }
}

TEST(Augment, AbsentModalityStaysAbsent) {
  auto s = full_sample();
  s.image(ModalityId::kIr).reset();
  const auto m = mask_modalities(s, {ModalityId::kRgb});
  EXPECT_FALSE(m.has(ModalityId::kIr));
  EXPECT_TRUE(all_equal(*m.image(ModalityId::kDepth), 0.0));
}

TEST(Augment, InvalidProbabilityRejected) {
  EXPECT_THROW((DropModalConfig{1.5, 0.3, 0}.validate()), Error);
  EXPECT_THROW((DropModalConfig{0.3, -0.1, 0}.validate()), Error);
}
