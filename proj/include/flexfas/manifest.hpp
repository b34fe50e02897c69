#pragma once

// Dataset manifests: a header line followed by comma-separated rows
//
//   sample_id,split,dataset_id,label,pai,rgb_path,depth_path,ir_path
//
// split is train|val|test, label is bonafide|attack, and pai, depth_path and
// ir_path may be empty. Paths are relative to the manifest's directory.

#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include "flexfas/core.hpp"
#include "flexfas/io.hpp"

namespace flexfas {

enum class Split { kTrain, kVal, kTest };

constexpr std::string_view to_string(Split s) {
  switch (s) {
    case Split::kTrain: return "train";
    case Split::kVal: return "val";
    case Split::kTest: return "test";
  }
  return "?";
}

inline std::optional<Split> parse_split(std::string_view s) {
  if (s == "train") return Split::kTrain;
  if (s == "val") return Split::kVal;
  if (s == "test") return Split::kTest;
  return std::nullopt;
}

struct ManifestRow {
  std::string sample_id;
  Split split = Split::kTrain;
  std::string dataset_id;
  Label label = Label::kBonafide;
  std::optional<std::string> pai;
  std::string rgb_path;
  std::optional<std::string> depth_path;
  std::optional<std::string> ir_path;

  const std::optional<std::string>& path(ModalityId m) const {
    static const std::optional<std::string> none;
    return m == ModalityId::kDepth ? depth_path : m == ModalityId::kIr ? ir_path : none;
  }

  friend bool operator==(const ManifestRow&, const ManifestRow&) = default;
};

struct DatasetManifest {
  std::vector<ManifestRow> rows;
  fs::path base_dir;  // directory that relative image paths resolve against

  friend bool operator==(const DatasetManifest& a, const DatasetManifest& b) { return a.rows == b.rows; }
};

inline constexpr std::string_view kManifestHeader = "sample_id,split,dataset_id,label,pai,rgb_path,depth_path,ir_path";

namespace detail {
inline std::vector<std::string> split_commas(std::string_view line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    out.emplace_back(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

inline std::optional<std::string> optional_field(std::string s) {
  if (s.empty()) return std::nullopt;
  return s;
}
}  // namespace detail

inline DatasetManifest parse_manifest(std::string_view text, const std::string& origin = "<manifest>") {
  DatasetManifest m;
  std::unordered_set<std::string> ids;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t lineno = 0;
  bool header_seen = false;
  auto fail = [&](ErrorCode code, const std::string& msg) {
    throw Error(code, origin + ":" + std::to_string(lineno) + ": " + msg);
  };
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (!header_seen) {
      if (line != kManifestHeader) fail(ErrorCode::kParseError, "expected header '" + std::string(kManifestHeader) + "'");
      header_seen = true;
      continue;
    }
    auto f = detail::split_commas(line);
    if (f.size() != 8) fail(ErrorCode::kParseError, "expected 8 fields, got " + std::to_string(f.size()));
    ManifestRow row;
    row.sample_id = f[0];
    if (row.sample_id.empty()) fail(ErrorCode::kParseError, "empty sample_id");
    auto split = parse_split(f[1]);
    if (!split) fail(ErrorCode::kParseError, "bad split '" + f[1] + "'");
    row.split = *split;
    row.dataset_id = f[2];
    if (f[3] == "bonafide") {
      row.label = Label::kBonafide;
    } else if (f[3] == "attack") {
      row.label = Label::kAttack;
    } else {
      fail(ErrorCode::kParseError, "bad label '" + f[3] + "'");
    }
    row.pai = detail::optional_field(f[4]);
    row.rgb_path = f[5];
    row.depth_path = detail::optional_field(f[6]);
    row.ir_path = detail::optional_field(f[7]);
    if (row.rgb_path.empty()) fail(ErrorCode::kMissingRgbPath, "row '" + row.sample_id + "' has no rgb_path");
    if (!ids.insert(row.sample_id).second) fail(ErrorCode::kDuplicateId, "duplicate sample_id '" + row.sample_id + "'");
    m.rows.push_back(std::move(row));
  }
  if (!header_seen) throw Error(ErrorCode::kParseError, origin + ": empty manifest");
  return m;
}

inline DatasetManifest load_manifest(const fs::path& path) {
  if (!fs::exists(path)) throw Error(ErrorCode::kFileNotFound, "manifest " + path.string() + " not found");
  DatasetManifest m = parse_manifest(read_file(path), path.string());
  m.base_dir = path.parent_path();
  return m;
}

inline std::string format_manifest(const DatasetManifest& m) {
  std::string out(kManifestHeader);
  out += '\n';
  for (const auto& r : m.rows) {
    out += r.sample_id + ',' + std::string(to_string(r.split)) + ',' + r.dataset_id + ',' +
           std::string(to_string(r.label)) + ',' + r.pai.value_or("") + ',' + r.rgb_path + ',' +
           r.depth_path.value_or("") + ',' + r.ir_path.value_or("") + '\n';
  }
  return out;
}

inline void write_manifest(const DatasetManifest& m, const fs::path& path) { write_file_atomic(path, format_manifest(m)); }

// ---------------------------------------------------------------------------
// In-memory dataset

struct SplitSample {
  Split split = Split::kTrain;
  ModalitySample sample;
};

using Dataset = std::vector<SplitSample>;

inline std::vector<const ModalitySample*> select(const Dataset& d, Split split) {
  std::vector<const ModalitySample*> out;
  for (const auto& s : d)
    if (s.split == split) out.push_back(&s.sample);
  return out;
}

inline std::set<std::string> dataset_ids(const Dataset& d, Split split) {
  std::set<std::string> ids;
  for (const auto& s : d)
    if (s.split == split) ids.insert(s.sample.dataset_id);
  return ids;
}

/// Reads every image referenced by the manifest and validates the samples.
inline Dataset load_dataset(const DatasetManifest& m) {
  Dataset d;
  d.reserve(m.rows.size());
  for (const auto& r : m.rows) {
    SplitSample s;
    s.split = r.split;
    s.sample.sample_id = r.sample_id;
    s.sample.label = r.label;
    s.sample.pai = r.pai;
    s.sample.dataset_id = r.dataset_id;
    s.sample.image(ModalityId::kRgb) = read_pnm(m.base_dir / r.rgb_path);
    for (auto mod : {ModalityId::kDepth, ModalityId::kIr})
      if (const auto& p = r.path(mod)) s.sample.image(mod) = read_pnm(m.base_dir / *p);
    require_valid(s.sample);
    d.push_back(std::move(s));
  }
  return d;
}

}  // namespace flexfas
