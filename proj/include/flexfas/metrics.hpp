#pragma once

// Presentation-attack-detection metrics. Bonafide is the positive class and a
// presentation is accepted as bonafide iff score >= threshold.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "flexfas/core.hpp"

namespace flexfas {

struct ErrorRates {
  double apcer = 0.0;
  double bpcer = 0.0;
  double acer = 0.0;
};

struct EerResult {
  double threshold = 0.0;
  double eer = 0.0;
  double apcer = 0.0;
  double bpcer = 0.0;
};

enum class ThresholdRule { kEerOnValidation, kFixedHalf };

constexpr std::string_view to_string(ThresholdRule r) {
  return r == ThresholdRule::kEerOnValidation ? "eer_on_validation" : "fixed_0_5";
}

inline constexpr double kTprTargetLow = 0.001;
inline constexpr double kTprTargetHigh = 0.01;

struct EvalReport {
  double apcer = 0.0;
  double bpcer = 0.0;
  double acer = 0.0;
  double threshold = 0.5;
  double eer = 0.0;  // equal error rate of the evaluated records
  double tpr_at_fpr_0_001 = 0.0;
  double tpr_at_fpr_0_01 = 0.0;
  std::size_t n_bonafide = 0;
  std::size_t n_attack = 0;
  ThresholdRule rule = ThresholdRule::kEerOnValidation;
  std::map<std::string, double> apcer_per_pai;  // informational

  friend bool operator==(const EvalReport&, const EvalReport&) = default;
};

namespace detail {

struct SplitScores {
  std::vector<double> bonafide;  // sorted ascending
  std::vector<double> attack;    // sorted ascending
};

inline SplitScores split_sorted(std::span<const ScoreRecord> records) {
  SplitScores s;
  for (const auto& r : records) (r.label == Label::kBonafide ? s.bonafide : s.attack).push_back(r.score);
  if (s.bonafide.empty() || s.attack.empty()) {
    throw Error(ErrorCode::kOneClassOnly, "need both bonafide and attack records (got " +
                                              std::to_string(s.bonafide.size()) + " bonafide, " +
                                              std::to_string(s.attack.size()) + " attack)");
  }
  std::sort(s.bonafide.begin(), s.bonafide.end());
  std::sort(s.attack.begin(), s.attack.end());
  return s;
}

/// Number of sorted values strictly below t.
inline std::size_t count_below(const std::vector<double>& sorted, double t) {
  return static_cast<std::size_t>(std::lower_bound(sorted.begin(), sorted.end(), t) - sorted.begin());
}

inline double frac(std::size_t k, std::size_t n) { return static_cast<double>(k) / static_cast<double>(n); }

}  // namespace detail

inline ErrorRates classify_rates(std::span<const ScoreRecord> records, double threshold) {
  const auto s = detail::split_sorted(records);
  const std::size_t attacks_accepted = s.attack.size() - detail::count_below(s.attack, threshold);
  const std::size_t bonafide_rejected = detail::count_below(s.bonafide, threshold);
  ErrorRates r;
  r.apcer = detail::frac(attacks_accepted, s.attack.size());
  r.bpcer = detail::frac(bonafide_rejected, s.bonafide.size());
  r.acer = (r.apcer + r.bpcer) / 2.0;
  return r;
}

/// Threshold minimizing |APCER - BPCER| over the midpoints between adjacent
/// distinct scores and the two infinite sentinels; ties go to the lower
/// threshold. The reported EER is the mean of APCER and BPCER there.
inline EerResult eer_threshold(std::span<const ScoreRecord> records) {
  const auto s = detail::split_sorted(records);
  std::vector<double> all;
  all.reserve(s.bonafide.size() + s.attack.size());
  all.insert(all.end(), s.bonafide.begin(), s.bonafide.end());
  all.insert(all.end(), s.attack.begin(), s.attack.end());
  std::sort(all.begin(), all.end());
  all.erase(std::unique(all.begin(), all.end()), all.end());

  std::vector<double> candidates;
  candidates.reserve(all.size() + 1);
  candidates.push_back(-std::numeric_limits<double>::infinity());
  for (std::size_t i = 0; i + 1 < all.size(); ++i) candidates.push_back((all[i] + all[i + 1]) / 2.0);
  candidates.push_back(std::numeric_limits<double>::infinity());

  EerResult best;
  double best_gap = std::numeric_limits<double>::infinity();
  for (double t : candidates) {  // ascending, so strict < keeps the lowest tied threshold
    const double apcer = detail::frac(s.attack.size() - detail::count_below(s.attack, t), s.attack.size());
    const double bpcer = detail::frac(detail::count_below(s.bonafide, t), s.bonafide.size());
    const double gap = std::abs(apcer - bpcer);
    if (gap < best_gap) {
      best_gap = gap;
      best = {t, (apcer + bpcer) / 2.0, apcer, bpcer};
    }
  }
  return best;
}

/// Largest TPR (bonafide accepted) over thresholds whose FPR (attacks
/// accepted) does not exceed fpr_target. Step-wise, no interpolation.
inline double tpr_at_fpr(std::span<const ScoreRecord> records, double fpr_target) {
  if (!(fpr_target > 0.0 && fpr_target < 1.0)) {
    throw Error(ErrorCode::kInvalidArgument, "fpr_target must lie in (0,1), got " + std::to_string(fpr_target));
  }
  const auto s = detail::split_sorted(records);
  // Raising the threshold only lowers both rates, so the best threshold is the
  // lowest one that satisfies the FPR bound; it is always a score value or +inf.
  std::vector<double> thresholds = s.attack;
  thresholds.insert(thresholds.end(), s.bonafide.begin(), s.bonafide.end());
  std::sort(thresholds.begin(), thresholds.end());
  for (double t : thresholds) {
    const double fpr = detail::frac(s.attack.size() - detail::count_below(s.attack, t), s.attack.size());
    if (fpr <= fpr_target) return detail::frac(s.bonafide.size() - detail::count_below(s.bonafide, t), s.bonafide.size());
  }
  return 0.0;
}

inline std::map<std::string, double> apcer_per_pai(std::span<const ScoreRecord> records, double threshold) {
  std::map<std::string, std::pair<std::size_t, std::size_t>> counts;  // accepted, total
  for (const auto& r : records) {
    if (r.label != Label::kAttack) continue;
    auto& c = counts[r.pai.value_or("unknown")];
    c.second += 1;
    if (r.score >= threshold) c.first += 1;
  }
  std::map<std::string, double> out;
  for (const auto& [pai, c] : counts) out[pai] = detail::frac(c.first, c.second);
  return out;
}

/// Threshold from the validation EER (or fixed at 0.5), then every rate on the
/// test records.
inline EvalReport build_report(std::span<const ScoreRecord> val, std::span<const ScoreRecord> test,
                               ThresholdRule rule) {
  EvalReport rep;
  rep.rule = rule;
  rep.threshold = rule == ThresholdRule::kEerOnValidation ? eer_threshold(val).threshold : 0.5;
  const ErrorRates rates = classify_rates(test, rep.threshold);
  rep.apcer = rates.apcer;
  rep.bpcer = rates.bpcer;
  rep.acer = rates.acer;
  rep.eer = eer_threshold(test).eer;
  rep.tpr_at_fpr_0_001 = tpr_at_fpr(test, kTprTargetLow);
  rep.tpr_at_fpr_0_01 = tpr_at_fpr(test, kTprTargetHigh);
  for (const auto& r : test) (r.label == Label::kBonafide ? rep.n_bonafide : rep.n_attack) += 1;
  rep.apcer_per_pai = apcer_per_pai(test, rep.threshold);
  return rep;
}

}  // namespace flexfas
