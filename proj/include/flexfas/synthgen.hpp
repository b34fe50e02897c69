#pragma once

// Parametric synthetic RGB/Depth/IR captures with a known class structure.
//
// For modality m, channel c and pixel (h, w) of one capture:
//
//   x = clamp(base_s[c,h,w] + k * sigma * (y * sep_m * P_m[h,w] + g + e[c,h,w]), 0, 1)
//
//   base_s   per-subject low-frequency texture around 0.5 (zero spatial mean offset)
//   y        +1/2 for bonafide, -1/2 for attack
//   P_m      fixed low-frequency pattern with spatial mean 1
//   g        per-capture, per-modality N(0,1) offset shared by all pixels
//   e        per-pixel N(0,1) noise
//   k        pixel units per noise sigma
//
// The spatial mean of a modality therefore differs between classes by
// sep_m noise-sigma units relative to the capture-level spread, so
// thresholding it attains AUC close to Phi(sep_m / sqrt(2)).

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <numbers>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "flexfas/core.hpp"
#include "flexfas/manifest.hpp"

namespace flexfas {

struct SynthConfig {
  std::size_t n_subjects = 200;
  std::size_t frames_per_subject = 4;
  std::size_t height = 32;
  std::size_t width = 32;
  std::array<double, kNumModalities> separability{1.5, 3.0, 0.5};  // rgb, depth, ir
  double noise_sigma = 1.0;
  double attack_ratio = 0.5;
  std::vector<std::string> pai_types{"print", "replay"};
  std::uint64_t seed = 0;
  std::string dataset_id = "synth";
  std::array<double, 3> split_fractions{0.6, 0.2, 0.2};  // train, val, test
  double pixel_scale = 0.04;

  double separability_of(ModalityId m) const { return separability[index_of(m)]; }

  void validate() const {
    auto bad = [](const std::string& msg) { throw Error(ErrorCode::kInvalidArgument, "synth: " + msg); };
    if (n_subjects < 1 || frames_per_subject < 1 || height < 1 || width < 1) bad("sizes must be >= 1");
    for (double s : separability)
      if (!std::isfinite(s) || s < 0.0) bad("separability must be finite and >= 0");
    if (!(noise_sigma > 0.0) || !std::isfinite(noise_sigma)) bad("noise_sigma must be > 0");
    if (!(attack_ratio > 0.0 && attack_ratio < 1.0)) bad("attack_ratio must lie in (0,1)");
    if (pai_types.empty()) bad("pai_types must be nonempty");
    double total = 0.0;
    for (double f : split_fractions) {
      if (f < 0.0) bad("split fractions must be >= 0");
      total += f;
    }
    if (std::abs(total - 1.0) > 1e-9) bad("split fractions must sum to 1");
    if (!(pixel_scale > 0.0)) bad("pixel_scale must be > 0");
    if (dataset_id.empty() || dataset_id.find(',') != std::string::npos) bad("dataset_id must be nonempty without commas");
  }
};

struct SynthOutput {
  std::vector<ModalitySample> samples;
  DatasetManifest manifest;
};

namespace detail {

inline constexpr std::array<std::array<int, 2>, kNumModalities> kPatternFreq{{{1, 0}, {0, 1}, {1, 1}}};

/// 1 + 0.5 cos(2 pi (fx w / W + fy h / H)); spatial mean 1 on a full grid.
inline double class_pattern(ModalityId m, std::size_t h, std::size_t w, std::size_t H, std::size_t W) {
  const auto [fx, fy] = kPatternFreq[index_of(m)];
  const double phase = 2.0 * std::numbers::pi *
                       (fx * static_cast<double>(w) / static_cast<double>(W) +
                        fy * static_cast<double>(h) / static_cast<double>(H));
  return 1.0 + 0.5 * std::cos(phase);
}

inline std::size_t channels_of(ModalityId m) { return m == ModalityId::kRgb ? 3 : 1; }

/// Sum of two random integer-frequency cosines per channel, amplitude <= 0.1.
inline Tensor subject_texture(std::size_t C, std::size_t H, std::size_t W, Rng& rng) {
  std::uniform_int_distribution<int> freq(1, 3);
  std::uniform_real_distribution<double> amp(0.0, 0.05), phase(0.0, 2.0 * std::numbers::pi);
  Tensor t({C, H, W}, 0.5);
  for (std::size_t c = 0; c < C; ++c)
    for (int k = 0; k < 2; ++k) {
      const int fx = freq(rng), fy = freq(rng);
      const double a = amp(rng), ph = phase(rng);
      for (std::size_t h = 0; h < H; ++h)
        for (std::size_t w = 0; w < W; ++w)
          t.at(c, h, w) += a * std::cos(2.0 * std::numbers::pi *
                                            (fx * static_cast<double>(w) / static_cast<double>(W) +
                                             fy * static_cast<double>(h) / static_cast<double>(H)) +
                                        ph);
    }
  return t;
}

}  // namespace detail

inline SynthOutput generate(const SynthConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed);
  const std::size_t H = cfg.height, W = cfg.width;

  // Subject-disjoint splits.
  std::vector<std::size_t> order(cfg.n_subjects);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng);
  const auto n_train = static_cast<std::size_t>(std::llround(cfg.split_fractions[0] * cfg.n_subjects));
  const auto n_val = std::min(cfg.n_subjects - std::min(n_train, cfg.n_subjects),
                              static_cast<std::size_t>(std::llround(cfg.split_fractions[1] * cfg.n_subjects)));
  std::vector<Split> subject_split(cfg.n_subjects, Split::kTest);
  for (std::size_t i = 0; i < cfg.n_subjects; ++i) {
    subject_split[order[i]] = i < n_train ? Split::kTrain : i < n_train + n_val ? Split::kVal : Split::kTest;
  }

  // Labels: within each split exactly round(attack_ratio * n) attacks.
  const std::size_t F = cfg.frames_per_subject;
  std::vector<Label> labels(cfg.n_subjects * F, Label::kBonafide);
  for (Split split : {Split::kTrain, Split::kVal, Split::kTest}) {
    std::vector<std::size_t> idx;
    for (std::size_t s = 0; s < cfg.n_subjects; ++s)
      if (subject_split[s] == split)
        for (std::size_t f = 0; f < F; ++f) idx.push_back(s * F + f);
    std::shuffle(idx.begin(), idx.end(), rng);
    const auto n_attack = static_cast<std::size_t>(std::llround(cfg.attack_ratio * static_cast<double>(idx.size())));
    for (std::size_t i = 0; i < n_attack; ++i) labels[idx[i]] = Label::kAttack;
  }

  std::array<Tensor, kNumModalities> patterns;
  for (auto m : kAllModalities) {
    patterns[index_of(m)] = Tensor({H, W});
    for (std::size_t h = 0; h < H; ++h)
      for (std::size_t w = 0; w < W; ++w) patterns[index_of(m)][h * W + w] = detail::class_pattern(m, h, w, H, W);
  }

  SynthOutput out;
  out.samples.reserve(cfg.n_subjects * F);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::size_t attack_counter = 0;
  const double unit = cfg.pixel_scale * cfg.noise_sigma;
  for (std::size_t s = 0; s < cfg.n_subjects; ++s) {
    char subject_buf[32];
    std::snprintf(subject_buf, sizeof subject_buf, "s%04zu", s);
    const std::string subject_id = cfg.dataset_id + "_" + subject_buf;
    std::array<Tensor, kNumModalities> texture;
    for (auto m : kAllModalities) texture[index_of(m)] = detail::subject_texture(detail::channels_of(m), H, W, rng);

    for (std::size_t f = 0; f < F; ++f) {
      ModalitySample smp;
      char frame_buf[32];
      std::snprintf(frame_buf, sizeof frame_buf, "_f%02zu", f);
      smp.sample_id = subject_id + frame_buf;
      smp.subject_id = subject_id;
      smp.dataset_id = cfg.dataset_id;
      smp.label = labels[s * F + f];
      if (smp.label == Label::kAttack) smp.pai = cfg.pai_types[attack_counter++ % cfg.pai_types.size()];
      const double y = smp.label == Label::kBonafide ? 0.5 : -0.5;
      for (auto m : kAllModalities) {
        const std::size_t C = detail::channels_of(m);
        const double g = normal(rng);
        const double shift = y * cfg.separability_of(m);
        Tensor img = texture[index_of(m)];
        for (std::size_t c = 0; c < C; ++c)
          for (std::size_t p = 0; p < H * W; ++p) {
            double& v = img[c * H * W + p];
            v = std::clamp(v + unit * (shift * patterns[index_of(m)][p] + g + normal(rng)), 0.0, 1.0);
          }
        smp.image(m) = std::move(img);
      }
      ManifestRow row;
      row.sample_id = smp.sample_id;
      row.split = subject_split[s];
      row.dataset_id = cfg.dataset_id;
      row.label = smp.label;
      row.pai = smp.pai;
      row.rgb_path = "images/" + smp.sample_id + "_rgb.ppm";
      row.depth_path = "images/" + smp.sample_id + "_depth.pgm";
      row.ir_path = "images/" + smp.sample_id + "_ir.pgm";
      out.manifest.rows.push_back(std::move(row));
      out.samples.push_back(std::move(smp));
    }
  }
  return out;
}

/// Joins generated samples with their manifest rows (same order).
inline Dataset make_dataset(const SynthOutput& out) {
  Dataset d;
  d.reserve(out.samples.size());
  for (std::size_t i = 0; i < out.samples.size(); ++i) d.push_back({out.manifest.rows[i].split, out.samples[i]});
  return d;
}

/// Writes images and manifest.csv under `dir`; returns the manifest path.
inline fs::path write_synth_dataset(const SynthOutput& out, const fs::path& dir) {
  for (std::size_t i = 0; i < out.samples.size(); ++i) {
    const auto& row = out.manifest.rows[i];
    const auto& smp = out.samples[i];
    write_pnm(dir / row.rgb_path, *smp.image(ModalityId::kRgb));
    if (row.depth_path) write_pnm(dir / *row.depth_path, *smp.image(ModalityId::kDepth));
    if (row.ir_path) write_pnm(dir / *row.ir_path, *smp.image(ModalityId::kIr));
  }
  const fs::path manifest_path = dir / "manifest.csv";
  write_manifest(out.manifest, manifest_path);
  return manifest_path;
}

}  // namespace flexfas
