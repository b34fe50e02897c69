#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <map>
#include <set>

#include "support/oracles.hpp"

using namespace flexfas;

namespace {

SynthConfig small(std::uint64_t seed = 1) {
  SynthConfig c;
  c.n_subjects = 20;
  c.frames_per_subject = 3;
  c.height = c.width = 8;
  c.seed = seed;
  return c;
}

double spatial_mean(const Tensor& t) {
  double s = 0.0;
  for (double v : t.data()) s += v;
  return s / static_cast<double>(t.size());
}

fs::path fresh_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("flexfas_test_" + name);
  fs::remove_all(p);
  return p;
}

}  // namespace

TEST(Synthgen, SameSeedIsBitIdentical) {
  const auto a = generate(small(5)), b = generate(small(5));
  ASSERT_EQ(a.samples.size(), b.samples.size());
  EXPECT_EQ(a.manifest, b.manifest);
  for (std::size_t i = 0; i < a.samples.size(); ++i)
    for (auto m : kAllModalities)
      EXPECT_TRUE(std::ranges::equal(a.samples[i].image(m)->data(), b.samples[i].image(m)->data()));
}

TEST(Synthgen, DifferentSeedDiffers) {
  const auto a = generate(small(5)), b = generate(small(6));
  EXPECT_FALSE(std::ranges::equal(a.samples[0].image(ModalityId::kRgb)->data(),
                                  b.samples[0].image(ModalityId::kRgb)->data()));
}

TEST(Synthgen, SamplesAreValidWithExpectedShapes) {
  const auto out = generate(small());
  ASSERT_EQ(out.samples.size(), 60u);
  std::set<std::string> ids;
  for (const auto& s : out.samples) {
    EXPECT_FALSE(validate_sample(s).has_value()) << s.sample_id;
    EXPECT_EQ(s.image(ModalityId::kRgb)->shape(), (Shape{3, 8, 8}));
    EXPECT_EQ(s.image(ModalityId::kDepth)->shape(), (Shape{1, 8, 8}));
    EXPECT_EQ(s.image(ModalityId::kIr)->shape(), (Shape{1, 8, 8}));
    EXPECT_TRUE(ids.insert(s.sample_id).second);
  }
}

TEST(Synthgen, SplitsAreSubjectDisjointWithRequestedSizes) {
  auto cfg = small();
  cfg.n_subjects = 50;
  const auto out = generate(cfg);
  std::map<std::string, std::set<Split>> by_subject;
  std::map<Split, std::set<std::string>> subjects;
  for (std::size_t i = 0; i < out.samples.size(); ++i) {
    by_subject[out.samples[i].subject_id].insert(out.manifest.rows[i].split);
    subjects[out.manifest.rows[i].split].insert(out.samples[i].subject_id);
  }
  for (const auto& [s, splits] : by_subject) EXPECT_EQ(splits.size(), 1u) << s;
  EXPECT_EQ(subjects[Split::kTrain].size(), 30u);
  EXPECT_EQ(subjects[Split::kVal].size(), 10u);
  EXPECT_EQ(subjects[Split::kTest].size(), 10u);
}

TEST(Synthgen, AttackCountsPerSplitAndPaiRoundRobin) {
  auto cfg = small();
  cfg.n_subjects = 50;
  cfg.attack_ratio = 0.3;
  cfg.pai_types = {"print", "replay", "mask"};
  const auto out = generate(cfg);
  std::map<Split, std::pair<std::size_t, std::size_t>> counts;  // attacks, total
  std::map<std::string, std::size_t> pai;
  std::size_t k = 0;
  for (std::size_t i = 0; i < out.samples.size(); ++i) {
    const auto& s = out.samples[i];
    auto& c = counts[out.manifest.rows[i].split];
    c.second += 1;
    if (s.label == Label::kAttack) {
      c.first += 1;
      ASSERT_TRUE(s.pai.has_value());
      EXPECT_EQ(*s.pai, cfg.pai_types[k++ % 3]);
      pai[*s.pai] += 1;
    } else {
      EXPECT_FALSE(s.pai.has_value());
    }
  }
  for (const auto& [split, c] : counts)
    EXPECT_EQ(c.first, static_cast<std::size_t>(std::llround(0.3 * static_cast<double>(c.second))));
  EXPECT_LE(pai["print"] - pai["mask"], 1u);
}

TEST(Synthgen, ZeroSeparabilityGivesChanceAuc) {
  auto cfg = small(3);
  cfg.n_subjects = 300;
  cfg.separability = {0.0, 0.0, 0.0};
  const auto out = generate(cfg);
  std::vector<double> bona, att;
  for (const auto& s : out.samples)
    (s.label == Label::kBonafide ? bona : att).push_back(spatial_mean(*s.image(ModalityId::kDepth)));
  EXPECT_NEAR(oracle::auc_pairs(bona, att), 0.5, 0.05);
}

class SynthCalibration : public ::testing::TestWithParam<double> {};

TEST_P(SynthCalibration, MeanThresholdAucMatchesClosedForm) {
  const double d = GetParam();
  SynthConfig cfg;
  cfg.n_subjects = 500;
  cfg.frames_per_subject = 4;
  cfg.separability = {d, d, d};
  cfg.seed = 11;
  const auto out = generate(cfg);
  ASSERT_EQ(out.samples.size(), 2000u);
  const double expected = oracle::normal_cdf(d / std::sqrt(2.0));
  for (auto m : kAllModalities) {
    std::vector<double> bona, att;
    for (const auto& s : out.samples) (s.label == Label::kBonafide ? bona : att).push_back(spatial_mean(*s.image(m)));
    EXPECT_NEAR(oracle::auc_pairs(bona, att), expected, 0.03) << to_string(m);
  }
}

INSTANTIATE_TEST_SUITE_P(Separability, SynthCalibration, ::testing::Values(0.5, 1.0, 1.5, 3.0));

TEST(Synthgen, InvalidConfigsRejected) {
  auto bad = [](auto mutate) {
    auto c = small();
    mutate(c);
    EXPECT_THROW(c.validate(), Error);
  };
  bad([](SynthConfig& c) { c.n_subjects = 0; });
  bad([](SynthConfig& c) { c.separability[1] = -1.0; });
  bad([](SynthConfig& c) { c.noise_sigma = 0.0; });
  bad([](SynthConfig& c) { c.attack_ratio = 1.0; });
  bad([](SynthConfig& c) { c.pai_types.clear(); });
  bad([](SynthConfig& c) { c.split_fractions = {0.5, 0.5, 0.5}; });
  bad([](SynthConfig& c) { c.dataset_id = "a,b"; });
}

TEST(Synthgen, WrittenDatasetLoadsBackWithinQuantization) {
  const auto out = generate(small());
  const fs::path dir = fresh_dir("synth_roundtrip");
  const fs::path manifest = write_synth_dataset(out, dir);
  const Dataset d = load_dataset(load_manifest(manifest));
  ASSERT_EQ(d.size(), out.samples.size());
  for (std::size_t i = 0; i < d.size(); ++i) {
    EXPECT_EQ(d[i].sample.sample_id, out.samples[i].sample_id);
    EXPECT_EQ(d[i].sample.label, out.samples[i].label);
    EXPECT_EQ(d[i].split, out.manifest.rows[i].split);
    for (auto m : kAllModalities) {
      const auto& a = d[i].sample.image(m)->data();
      const auto& b = out.samples[i].image(m)->data();
      ASSERT_EQ(a.size(), b.size());
      for (std::size_t j = 0; j < a.size(); ++j) ASSERT_NEAR(a[j], b[j], 0.5 / 65535.0 + 1e-15);
    }
  }
  fs::remove_all(dir);
}
