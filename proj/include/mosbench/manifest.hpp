#pragma once

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <unordered_set>
#include <vector>

#include "mosbench/common.hpp"
#include "mosbench/csv.hpp"
#include "mosbench/rng.hpp"

namespace mosbench {

enum class SystemType { kBc, kEspnet, kVcc, kNatural, kOther };
enum class Split { kTrain, kVal, kTest };

inline const char* to_string(SystemType t) {
  switch (t) {
    case SystemType::kBc: return "BC";
    case SystemType::kEspnet: return "ESPNET";
    case SystemType::kVcc: return "VCC";
    case SystemType::kNatural: return "NATURAL";
    case SystemType::kOther: return "OTHER";
  }
  return "?";
}

inline const char* to_string(Split s) {
  switch (s) {
    case Split::kTrain: return "TRAIN";
    case Split::kVal: return "VAL";
    case Split::kTest: return "TEST";
  }
  return "?";
}

inline std::optional<SystemType> system_type_from_string(const std::string& s) {
  if (s == "BC") return SystemType::kBc;
  if (s == "ESPNET") return SystemType::kEspnet;
  if (s == "VCC") return SystemType::kVcc;
  if (s == "NATURAL") return SystemType::kNatural;
  if (s == "OTHER") return SystemType::kOther;
  return std::nullopt;
}

inline std::optional<Split> split_from_string(const std::string& s) {
  if (s == "TRAIN") return Split::kTrain;
  if (s == "VAL") return Split::kVal;
  if (s == "TEST") return Split::kTest;
  return std::nullopt;
}

// One labeled audio sample: the atomic dataset row.
struct Utterance {
  std::string utterance_id;
  std::string audio_path;
  std::string system_id;
  SystemType system_type = SystemType::kOther;
  double mos = 0.0;  // in [1, 5]
  Split split = Split::kTrain;
  std::optional<int> num_raters;
};

struct Manifest {
  std::string name;
  std::vector<Utterance> utterances;
  std::string label_scale_note;

  size_t size() const { return utterances.size(); }
  bool empty() const { return utterances.empty(); }

  // Rows of one split, order preserved. May be empty.
  Manifest subset_by_split(Split s) const {
    Manifest out{name + "_" + to_string(s), {}, label_scale_note};
    for (const auto& u : utterances)
      if (u.split == s) out.utterances.push_back(u);
    return out;
  }

  // Same, but an absent split is a structured error.
  Manifest require_split(Split s) const {
    Manifest out = subset_by_split(s);
    if (out.empty())
      throw MosError(ErrorCode::kEmptySplit,
                     "manifest '" + name + "' has no rows in split " +
                         to_string(s));
    return out;
  }

  size_t count_split(Split s) const {
    size_t n = 0;
    for (const auto& u : utterances) n += (u.split == s) ? 1 : 0;
    return n;
  }

  const Utterance* find(const std::string& utterance_id) const {
    for (const auto& u : utterances)
      if (u.utterance_id == utterance_id) return &u;
    return nullptr;
  }
};

struct UnlabeledManifest {
  std::string name;
  std::vector<std::string> audio_paths;
};

inline const std::vector<std::string>& manifest_header() {
  static const std::vector<std::string> h = {
      "utterance_id", "audio_path", "system_id", "system_type",
      "mos",          "split",      "num_raters"};
  return h;
}

inline Manifest load_manifest(const std::string& path, std::string name = {}) {
  CsvTable table = read_csv(path);
  for (const auto& col : manifest_header()) {
    if (table.column(col) < 0)
      throw ValidationError("manifest " + path + ": missing column '" + col + "'",
                            1, col);
  }
  const int c_id = table.column("utterance_id");
  const int c_path = table.column("audio_path");
  const int c_sys = table.column("system_id");
  const int c_type = table.column("system_type");
  const int c_mos = table.column("mos");
  const int c_split = table.column("split");
  const int c_raters = table.column("num_raters");

  Manifest m;
  m.name = name.empty() ? std::filesystem::path(path).stem().string() : std::move(name);
  std::unordered_set<std::string> seen;
  for (size_t r = 0; r < table.rows.size(); ++r) {
    const auto& row = table.rows[r];
    const long line = table.line_numbers[r];
    if (row.size() < manifest_header().size())
      throw ValidationError("manifest row has too few fields", line);
    Utterance u;
    u.utterance_id = row[c_id];
    if (u.utterance_id.empty())
      throw ValidationError("empty utterance_id", line, "utterance_id");
    if (!seen.insert(u.utterance_id).second)
      throw ValidationError("duplicate utterance_id '" + u.utterance_id + "'",
                            line, "utterance_id");
    u.audio_path = row[c_path];
    u.system_id = row[c_sys];
    const auto type = system_type_from_string(row[c_type]);
    if (!type)
      throw ValidationError("unknown system_type '" + row[c_type] + "'", line,
                            "system_type");
    u.system_type = *type;
    char* end = nullptr;
    u.mos = std::strtod(row[c_mos].c_str(), &end);
    if (end == row[c_mos].c_str() || *end != '\0')
      throw ValidationError("mos is not a number: '" + row[c_mos] + "'", line,
                            "mos");
    if (!(u.mos >= 1.0 && u.mos <= 5.0))
      throw ValidationError("mos " + row[c_mos] + " outside [1, 5]", line,
                            "mos");
    const auto split = split_from_string(row[c_split]);
    if (!split)
      throw ValidationError("unknown split '" + row[c_split] + "'", line,
                            "split");
    u.split = *split;
    if (!row[c_raters].empty()) {
      const long v = std::strtol(row[c_raters].c_str(), &end, 10);
      if (*end != '\0' || v <= 0)
        throw ValidationError("num_raters must be a positive integer", line,
                              "num_raters");
      u.num_raters = static_cast<int>(v);
    }
    m.utterances.push_back(std::move(u));
  }
  if (m.empty()) throw ValidationError("manifest has no rows: " + path);
  return m;
}

inline void save_manifest(const Manifest& m, const std::string& path) {
  std::vector<std::vector<std::string>> rows;
  rows.reserve(m.size());
  for (const auto& u : m.utterances) {
    rows.push_back({u.utterance_id, u.audio_path, u.system_id,
                    to_string(u.system_type), format_double(u.mos),
                    to_string(u.split),
                    u.num_raters ? std::to_string(*u.num_raters) : ""});
  }
  write_csv(path, manifest_header(), rows);
}

inline UnlabeledManifest load_unlabeled_manifest(const std::string& path,
                                                 std::string name = {}) {
  CsvTable table = read_csv(path);
  const int c = table.column("audio_path");
  if (c < 0)
    throw ValidationError("unlabeled manifest " + path +
                              ": missing column 'audio_path'",
                          1, "audio_path");
  UnlabeledManifest m;
  m.name = name.empty() ? std::filesystem::path(path).stem().string() : std::move(name);
  for (const auto& row : table.rows) m.audio_paths.push_back(row[c]);
  if (m.audio_paths.empty())
    throw ValidationError("unlabeled manifest has no rows: " + path);
  return m;
}

// Subset containing exactly the utterances whose type is in `types`,
// order preserved. An empty result is legal (returned, not thrown).
inline Manifest filter_by_system_type(const Manifest& m,
                                      const std::set<SystemType>& types) {
  if (types.empty())
    throw ValidationError("filter_by_system_type: empty type set");
  Manifest out{m.name + "_filtered", {}, m.label_scale_note};
  for (const auto& u : m.utterances)
    if (types.count(u.system_type)) out.utterances.push_back(u);
  return out;
}

// Largest-remainder apportionment of `target` draws over bins with the
// given populations. Exact integer arithmetic; remainder ties go to the
// lower bin index. Returns per-bin allocations; appends to `warnings` if
// the clamp-and-redistribute fallback fires.
inline std::vector<size_t> largest_remainder_allocate(
    const std::vector<size_t>& bin_pop, size_t target,
    std::vector<std::string>* warnings = nullptr) {
  const size_t nbins = bin_pop.size();
  uint64_t total = 0;
  for (size_t p : bin_pop) total += p;
  if (target > total)
    throw ValidationError("allocation target exceeds population");
  std::vector<size_t> alloc(nbins, 0);
  if (total == 0) return alloc;

  std::vector<uint64_t> rem(nbins, 0);
  uint64_t assigned = 0;
  for (size_t b = 0; b < nbins; ++b) {
    const uint64_t num = static_cast<uint64_t>(target) * bin_pop[b];
    alloc[b] = static_cast<size_t>(num / total);
    rem[b] = num % total;
    assigned += alloc[b];
  }
  uint64_t deficit = target - assigned;
  std::vector<size_t> order(nbins);
  for (size_t b = 0; b < nbins; ++b) order[b] = b;
  std::stable_sort(order.begin(), order.end(),
                   [&](size_t a, size_t b) { return rem[a] > rem[b]; });
  for (size_t i = 0; i < nbins && deficit > 0; ++i) {
    const size_t b = order[i];
    if (alloc[b] < bin_pop[b]) {
      ++alloc[b];
      --deficit;
    }
  }
  // Fallback: a bin allocated beyond its population gets clamped and the
  // excess reassigned wherever capacity remains.
  uint64_t excess = deficit;
  for (size_t b = 0; b < nbins; ++b) {
    if (alloc[b] > bin_pop[b]) {
      excess += alloc[b] - bin_pop[b];
      if (warnings)
        warnings->push_back("bin " + std::to_string(b) +
                            " allocation clamped to population " +
                            std::to_string(bin_pop[b]));
      alloc[b] = bin_pop[b];
    }
  }
  for (size_t i = 0; i < nbins && excess > 0; ++i) {
    const size_t b = order[i];
    while (alloc[b] < bin_pop[b] && excess > 0) {
      ++alloc[b];
      --excess;
    }
  }
  return alloc;
}

struct SubsampleResult {
  Manifest manifest;
  std::vector<std::string> warnings;
};

inline size_t mos_bin_index(double mos, double bin_width, size_t nbins) {
  const double x = (mos - 1.0) / bin_width;
  auto b = static_cast<long>(std::floor(x));
  if (b < 0) b = 0;
  if (static_cast<size_t>(b) >= nbins) b = static_cast<long>(nbins) - 1;
  return static_cast<size_t>(b);
}

// Random subset of exactly target_size utterances whose per-bin MOS
// proportions match the source under largest-remainder allocation.
// Deterministic given seed; selection order follows the source manifest.
inline SubsampleResult subsample_matched(const Manifest& m, size_t target_size,
                                         double bin_width, uint64_t seed) {
  if (m.empty()) throw ValidationError("subsample_matched: empty manifest");
  if (target_size > m.size())
    throw ValidationError("subsample_matched: target_size " +
                          std::to_string(target_size) +
                          " exceeds population " + std::to_string(m.size()));
  if (!(bin_width > 0.0))
    throw ValidationError("subsample_matched: bin_width must be > 0");

  const size_t nbins =
      static_cast<size_t>(std::ceil((5.0 - 1.0) / bin_width));
  std::vector<std::vector<size_t>> members(nbins);
  for (size_t i = 0; i < m.size(); ++i)
    members[mos_bin_index(m.utterances[i].mos, bin_width, nbins)].push_back(i);

  std::vector<size_t> pop(nbins);
  for (size_t b = 0; b < nbins; ++b) pop[b] = members[b].size();

  SubsampleResult result;
  std::vector<size_t> alloc =
      largest_remainder_allocate(pop, target_size, &result.warnings);

  Rng rng(seed);
  std::vector<size_t> chosen;
  chosen.reserve(target_size);
  for (size_t b = 0; b < nbins; ++b) {
    if (alloc[b] == 0) continue;
    for (size_t k : rng.sample_indices(pop[b], alloc[b]))
      chosen.push_back(members[b][k]);
  }
  std::sort(chosen.begin(), chosen.end());

  result.manifest.name = m.name + "_sub" + std::to_string(target_size);
  result.manifest.label_scale_note = m.label_scale_note;
  for (size_t i : chosen) result.manifest.utterances.push_back(m.utterances[i]);
  return result;
}

}  // namespace mosbench
