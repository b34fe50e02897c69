#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>

#include "flexfas/config.hpp"

using namespace flexfas;

namespace {

// Message of the CONFIG_ERROR raised for `text`; empty if none was raised.
std::string config_error(const std::string& text) {
  try {
    run_config_from_json(json::parse(text));
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kConfigError) << e.what();
    return e.what();
  }
  ADD_FAILURE() << "accepted: " << text;
  return {};
}

void expect_names_key(const std::string& text, const std::string& key) {
  const std::string msg = config_error(text);
  EXPECT_NE(msg.find(key), std::string::npos) << "message '" << msg << "' does not name " << key;
}

class EnvSeed {
 public:
  explicit EnvSeed(const char* v) { ::setenv("FLEXFAS_SEED", v, 1); }
  ~EnvSeed() { ::unsetenv("FLEXFAS_SEED"); }
};

const char* kFull = R"({
  "seed": 3, "output_dir": "run", "mode": "separate", "protocols": ["P1", "P4"], "manifests": ["m.csv"],
  "synth": {"output_dir": "data", "seed": 8, "n_subjects": 10, "frames_per_subject": 2, "height": 16,
            "width": 16, "separability": {"rgb": 1.0, "depth": 2.0, "ir": 0.0}, "noise_sigma": 0.5,
            "attack_ratio": 0.4, "pai_types": ["print"], "dataset_id": "d", "split_fractions": [0.5, 0.25, 0.25],
            "pixel_scale": 0.02},
  "model": {"arch": "toy_resnet", "shared": false, "feature_channels": 8, "patch_size": 4,
            "fusion": "cross_attention", "se_reduction": 2, "head": "binary_map", "input_size": [16, 24]},
  "trainer": {"optimizer": "adamw", "learning_rate": 0.002, "epochs": 4, "lr_halving_epoch": 3, "batch_size": 5,
              "grad_clip": 5.0, "weight_decay": 0.1},
  "dropmodal": {"enabled": true, "p_depth": 0.2, "p_ir": 0.4, "seed": 12}
})";

}  // namespace

TEST(Config, EmptyObjectGivesDefaults) {
  const RunConfig rc = run_config_from_json(json::object());
  EXPECT_EQ(rc.seed, 0u);
  EXPECT_EQ(rc.mode, RunMode::kUnified);
  EXPECT_EQ(rc.protocols.size(), 4u);
  EXPECT_EQ(rc.model, ModelConfig{});
  EXPECT_FALSE(rc.trainer.dropmodal.has_value());
  EXPECT_EQ(rc.trainer.optimizer, OptimizerKind::kAdam);
  EXPECT_EQ(rc.synth_output_dir, rc.output_dir / "data");
  EXPECT_EQ(rc.config_hash.size(), 16u);
}

TEST(Config, EveryKeyIsRead) {
  const RunConfig rc = run_config_from_json(json::parse(kFull), "/base");
  EXPECT_EQ(rc.seed, 3u);
  EXPECT_EQ(rc.output_dir, fs::path("/base/run"));
  EXPECT_EQ(rc.synth_output_dir, fs::path("/base/data"));
  EXPECT_EQ(rc.manifests, (std::vector<fs::path>{"/base/m.csv"}));
  EXPECT_EQ(rc.mode, RunMode::kSeparate);
  EXPECT_EQ(rc.protocols, (std::vector<ProtocolId>{ProtocolId::kP1, ProtocolId::kP4}));
  EXPECT_EQ(rc.synth.seed, 8u);
  EXPECT_EQ(rc.synth.n_subjects, 10u);
  EXPECT_EQ(rc.synth.height, 16u);
  EXPECT_EQ(rc.synth.separability, (std::array<double, 3>{1.0, 2.0, 0.0}));
  EXPECT_EQ(rc.synth.noise_sigma, 0.5);
  EXPECT_EQ(rc.synth.attack_ratio, 0.4);
  EXPECT_EQ(rc.synth.pai_types, (std::vector<std::string>{"print"}));
  EXPECT_EQ(rc.synth.split_fractions, (std::array<double, 3>{0.5, 0.25, 0.25}));
  EXPECT_EQ(rc.synth.pixel_scale, 0.02);
  EXPECT_EQ(rc.model.branch.arch, Arch::kToyResnet);
  EXPECT_FALSE(rc.model.branch.shared);
  EXPECT_EQ(rc.model.branch.feature_channels, 8u);
  EXPECT_EQ(rc.model.fusion, FusionKind::kCrossAttention);
  EXPECT_EQ(rc.model.se_reduction, 2u);
  EXPECT_EQ(rc.model.head.kind, HeadKind::kBinaryMap);
  EXPECT_EQ(rc.model.input_height, 16u);
  EXPECT_EQ(rc.model.input_width, 24u);
  EXPECT_EQ(rc.trainer.optimizer, OptimizerKind::kAdamW);
  EXPECT_EQ(rc.trainer.learning_rate, 0.002);
  EXPECT_EQ(rc.trainer.epochs, 4u);
  EXPECT_EQ(rc.trainer.lr_halving_epoch, 3u);
  EXPECT_EQ(rc.trainer.batch_size, 5u);
  EXPECT_EQ(rc.trainer.grad_clip_norm, 5.0);
  EXPECT_EQ(rc.trainer.weight_decay, 0.1);
  EXPECT_EQ(rc.trainer.seed, 3u);
  ASSERT_TRUE(rc.trainer.dropmodal.has_value());
  EXPECT_EQ(*rc.trainer.dropmodal, (DropModalConfig{0.2, 0.4, 12}));

  const RunPlan plan = rc.plan();
  EXPECT_EQ(plan.protocols.size(), 2u);
  EXPECT_EQ(plan.model_seed, 3u);
}

TEST(Config, SubSeedsDefaultToTopLevelSeed) {
  const RunConfig rc = run_config_from_json(json::parse(R"({"seed": 42, "dropmodal": {"enabled": true}})"));
  EXPECT_EQ(rc.synth.seed, 42u);
  EXPECT_EQ(rc.trainer.seed, 42u);
  EXPECT_EQ(rc.trainer.dropmodal->seed, 42u);
  EXPECT_EQ(rc.trainer.dropmodal->p_depth, 0.3);
}

TEST(Config, DisabledDropModalIsOff) {
  EXPECT_FALSE(run_config_from_json(json::parse(R"({"dropmodal": {"enabled": false, "p_depth": 0.9}})"))
                   .trainer.dropmodal.has_value());
}

TEST(Config, TransformerDefaultsToAdamWAtLowerRate) {
  const RunConfig a = run_config_from_json(json::parse(R"({"model": {"arch": "toy_vit"}})"));
  EXPECT_EQ(a.trainer.optimizer, OptimizerKind::kAdamW);
  EXPECT_EQ(a.trainer.learning_rate, 1e-4);
  const RunConfig b =
      run_config_from_json(json::parse(R"({"model": {"arch": "toy_vit"}, "trainer": {"optimizer": "adam", "learning_rate": 0.01}})"));
  EXPECT_EQ(b.trainer.optimizer, OptimizerKind::kAdam);
  EXPECT_EQ(b.trainer.learning_rate, 0.01);
}

TEST(Config, HalvingEpochDefaultClampsToEpochCount) {
  EXPECT_EQ(run_config_from_json(json::parse(R"({"trainer": {"epochs": 3}})")).trainer.lr_halving_epoch, 3u);
  EXPECT_EQ(run_config_from_json(json::parse(R"({"trainer": {"epochs": 20}})")).trainer.lr_halving_epoch, 7u);
}

TEST(Config, ZeroLearningRateIsAccepted) {
  EXPECT_EQ(run_config_from_json(json::parse(R"({"trainer": {"learning_rate": 0}})")).trainer.learning_rate, 0.0);
}

TEST(Config, SchemaErrorsNameTheKey) {
  expect_names_key(R"({"sed": 1})", "sed");
  expect_names_key(R"({"model": {"depth": 3}})", "model.depth");
  expect_names_key(R"({"model": {"arch": "resnet50"}})", "model.arch");
  expect_names_key(R"({"trainer": {"epochs": "ten"}})", "trainer.epochs");
  expect_names_key(R"({"trainer": {"epochs": 0}})", "trainer.epochs");
  expect_names_key(R"({"trainer": {"batch_size": 2.5}})", "trainer.batch_size");
  expect_names_key(R"({"trainer": {"learning_rate": -0.1}})", "trainer.learning_rate");
  expect_names_key(R"({"protocols": []})", "protocols");
  expect_names_key(R"({"protocols": ["P1", "P1"]})", "protocols");
  expect_names_key(R"({"protocols": ["P1", "P7"]})", "protocols[1]");
  expect_names_key(R"({"synth": {"attack_ratio": 1.0}})", "synth.attack_ratio");
  expect_names_key(R"({"synth": {"noise_sigma": 0}})", "synth.noise_sigma");
  expect_names_key(R"({"synth": {"split_fractions": [0.5, 0.5]}})", "synth.split_fractions");
  expect_names_key(R"({"synth": {"separability": {"thermal": 1}}})", "synth.separability.thermal");
  expect_names_key(R"({"model": {"input_size": [32, 0]}})", "model.input_size[1]");
  expect_names_key(R"({"dropmodal": {"p_ir": 1.5}})", "dropmodal.p_ir");
  expect_names_key(R"({"seed": -1})", "seed");
  expect_names_key(R"([1, 2])", "<root>");
}

TEST(Config, DomainErrorsAreConfigErrors) {
  config_error(R"({"synth": {"split_fractions": [0.5, 0.5, 0.5]}})");
  config_error(R"({"model": {"arch": "toy_vit", "patch_size": 5}})");
  config_error(R"({"trainer": {"epochs": 3, "lr_halving_epoch": 4}})");
}

TEST(Config, SchemaHasAnEntryForEveryKeyItReads) {
  const json full = json::parse(kFull);
  const json& props = run_config_schema()["properties"];
  for (const auto& [k, v] : full.items()) {
    ASSERT_TRUE(props.contains(k)) << k;
    if (!v.is_object()) continue;
    for (const auto& [k2, v2] : v.items()) EXPECT_TRUE(props[k]["properties"].contains(k2)) << k << "." << k2;
  }
}

TEST(Config, HashTracksContentAndSeedOverride) {
  const json j = json::parse(R"({"seed": 1, "trainer": {"epochs": 2}})");
  const auto a = run_config_from_json(j), b = run_config_from_json(json::parse(R"({"trainer":{"epochs":2},"seed":1})"));
  EXPECT_EQ(a.config_hash, b.config_hash);  // key order and whitespace do not matter
  const auto c = run_config_from_json(j, {}, 9);
  EXPECT_NE(c.config_hash, a.config_hash);
  EXPECT_EQ(c.seed, 9u);
  EXPECT_EQ(c.synth.seed, 9u);
  EXPECT_EQ(c.config_hash, run_config_from_json(json::parse(R"({"seed": 9, "trainer": {"epochs": 2}})")).config_hash);
  EXPECT_EQ(a.config_hash, hex64(fnv1a64(j.dump())));
}

TEST(Config, EnvironmentSeed) {
  ::unsetenv("FLEXFAS_SEED");
  EXPECT_FALSE(seed_from_env().has_value());
  {
    EnvSeed e("123");
    EXPECT_EQ(seed_from_env(), 123u);
  }
  for (const char* bad : {"-4", "12x", "abc"}) {
    EnvSeed e(bad);
    try {
      seed_from_env();
      ADD_FAILURE() << bad;
    } catch (const Error& err) {
      EXPECT_EQ(err.code(), ErrorCode::kConfigError);
    }
  }
}

TEST(Config, LoadingFromDisk) {
  const fs::path dir = fs::temp_directory_path() / "flexfas_test_config";
  fs::remove_all(dir);
  fs::create_directories(dir);
  write_file_atomic(dir / "ok.json", R"({"seed": 5, "output_dir": "o", "manifests": ["/abs/m.csv"]})");
  const RunConfig rc = load_run_config(dir / "ok.json", 6);
  EXPECT_EQ(rc.seed, 6u);
  EXPECT_EQ(rc.output_dir, dir / "o");
  EXPECT_EQ(rc.manifests[0], fs::path("/abs/m.csv"));

  write_file_atomic(dir / "bad.json", "{ \"seed\": ");
  try {
    load_run_config(dir / "bad.json");
    ADD_FAILURE();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kConfigError);
  }
  try {
    load_run_config(dir / "missing.json");
    ADD_FAILURE();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kFileNotFound);
  }
  fs::remove_all(dir);
}
