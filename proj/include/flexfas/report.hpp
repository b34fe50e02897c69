#pragma once

// On-disk evaluation artifacts.
//
// Score files are tab-separated with a header line
//
//   sample_id  score  label  pai
//
// and scores printed with 17 significant digits so recomputed metrics match
// the report exactly. Reports and cost reports are JSON.

#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "flexfas/config.hpp"
#include "flexfas/efficiency.hpp"
#include "flexfas/metrics.hpp"

namespace flexfas {

inline constexpr std::string_view kScoreHeader = "sample_id\tscore\tlabel\tpai";

inline std::string format_scores(std::span<const ScoreRecord> records) {
  std::string out(kScoreHeader);
  out += '\n';
  char buf[64];
  for (const auto& r : records) {
    std::snprintf(buf, sizeof buf, "%.17g", r.score);
    out += r.sample_id + '\t' + buf + '\t' + std::string(to_string(r.label)) + '\t' + r.pai.value_or("") + '\n';
  }
  return out;
}

inline std::vector<ScoreRecord> parse_scores(std::string_view text, const std::string& origin = "<scores>") {
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t lineno = 0;
  std::vector<ScoreRecord> out;
  auto fail = [&](const std::string& msg) {
    throw Error(ErrorCode::kParseError, origin + ":" + std::to_string(lineno) + ": " + msg);
  };
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (lineno == 1) {
      if (line != kScoreHeader) fail("expected score header");
      continue;
    }
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::size_t start = 0;
    while (true) {
      const auto tab = line.find('\t', start);
      f.push_back(line.substr(start, tab == std::string::npos ? std::string::npos : tab - start));
      if (tab == std::string::npos) break;
      start = tab + 1;
    }
    if (f.size() != 4) fail("expected 4 fields");
    ScoreRecord r;
    r.sample_id = f[0];
    char* end = nullptr;
    r.score = std::strtod(f[1].c_str(), &end);
    if (f[1].empty() || *end != '\0') fail("bad score '" + f[1] + "'");
    try {
      r.label = parse_label(f[2]);
    } catch (const Error&) {
      fail("bad label '" + f[2] + "'");
    }
    if (!f[3].empty()) r.pai = f[3];
    out.push_back(std::move(r));
  }
  if (lineno == 0) throw Error(ErrorCode::kParseError, origin + ": empty score file");
  return out;
}

inline void write_scores(const fs::path& path, std::span<const ScoreRecord> records) {
  write_file_atomic(path, format_scores(records));
}

inline std::vector<ScoreRecord> read_scores(const fs::path& path) { return parse_scores(read_file(path), path.string()); }

/// Thresholds can be +-inf (EER at an extreme); JSON has no infinity, so
/// those are written as strings.
inline json threshold_to_json(double t) {
  if (std::isinf(t)) return t > 0 ? "inf" : "-inf";
  return t;
}

inline double threshold_from_json(const json& j) {
  if (j.is_string()) {
    if (j == "inf") return std::numeric_limits<double>::infinity();
    if (j == "-inf") return -std::numeric_limits<double>::infinity();
    throw Error(ErrorCode::kParseError, "bad threshold " + j.dump());
  }
  return j.get<double>();
}

inline json report_to_json(const EvalReport& r, const std::string& config_hash = "") {
  return {{"apcer", r.apcer},
          {"bpcer", r.bpcer},
          {"acer", r.acer},
          {"eer", r.eer},
          {"threshold", threshold_to_json(r.threshold)},
          {"tpr_at_fpr_0.001", r.tpr_at_fpr_0_001},
          {"tpr_at_fpr_0.01", r.tpr_at_fpr_0_01},
          {"n_bonafide", r.n_bonafide},
          {"n_attack", r.n_attack},
          {"rule", to_string(r.rule)},
          {"apcer_per_pai", r.apcer_per_pai},
          {"config_hash", config_hash}};
}

inline EvalReport report_from_json(const json& j) {
  EvalReport r;
  r.apcer = j.at("apcer").get<double>();
  r.bpcer = j.at("bpcer").get<double>();
  r.acer = j.at("acer").get<double>();
  r.eer = j.at("eer").get<double>();
  r.threshold = threshold_from_json(j.at("threshold"));
  r.tpr_at_fpr_0_001 = j.at("tpr_at_fpr_0.001").get<double>();
  r.tpr_at_fpr_0_01 = j.at("tpr_at_fpr_0.01").get<double>();
  r.n_bonafide = j.at("n_bonafide").get<std::size_t>();
  r.n_attack = j.at("n_attack").get<std::size_t>();
  r.rule = j.at("rule") == "fixed_0_5" ? ThresholdRule::kFixedHalf : ThresholdRule::kEerOnValidation;
  r.apcer_per_pai = j.value("apcer_per_pai", std::map<std::string, double>{});
  return r;
}

inline json cost_to_json(const CostReport& c, const std::string& config_hash = "") {
  json breakdown = json::object();
  for (const auto& [name, m] : c.breakdown) breakdown[name] = {{"params", m.params}, {"flops", m.flops}};
  return {{"params", c.params}, {"flops", c.flops}, {"breakdown", breakdown}, {"config_hash", config_hash}};
}

}  // namespace flexfas
