#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "mosbench/common.hpp"
#include "mosbench/evaluation.hpp"
#include "mosbench/manifest.hpp"

namespace mosbench {

// Linear-interpolation percentile between closest ranks; v must be sorted.
inline double percentile_sorted(const std::vector<double>& v, double p) {
  if (v.empty()) throw ValidationError("percentile of empty data");
  if (p <= 0.0) return v.front();
  if (p >= 100.0) return v.back();
  const double rank = p / 100.0 * static_cast<double>(v.size() - 1);
  const size_t lo = static_cast<size_t>(rank);
  const double frac = rank - static_cast<double>(lo);
  if (lo + 1 >= v.size()) return v.back();
  return v[lo] + frac * (v[lo + 1] - v[lo]);
}

// ---------------------------------------------------------------------------
// MOS histogram

struct HistogramSpec {
  std::vector<double> edges;  // explicit; empty = nbins equal bins over [1,5]
  int nbins = 16;
  enum class Norm { kCount, kProportion };
  Norm norm = Norm::kCount;
};

struct Histogram {
  std::vector<double> edges;
  std::vector<double> values;  // per bin, count or proportion
  size_t total = 0;
};

// Bins are [e_i, e_{i+1}) with a right-inclusive final bin.
inline Histogram mos_histogram(const Manifest& m, const HistogramSpec& spec) {
  if (m.utterances.empty())
    throw ValidationError("histogram: empty manifest '" + m.name + "'");
  Histogram h;
  if (!spec.edges.empty()) {
    if (spec.edges.size() < 2)
      throw ValidationError("histogram: needs at least 2 edges");
    for (size_t i = 1; i < spec.edges.size(); ++i)
      if (spec.edges[i] <= spec.edges[i - 1])
        throw ValidationError("histogram: edges must be strictly increasing");
    h.edges = spec.edges;
  } else {
    if (spec.nbins < 1)
      throw ValidationError("histogram: bin count must be positive");
    for (int i = 0; i <= spec.nbins; ++i)
      h.edges.push_back(1.0 + 4.0 * static_cast<double>(i) / spec.nbins);
  }
  const size_t nb = h.edges.size() - 1;
  h.values.assign(nb, 0.0);
  for (const auto& u : m.utterances) {
    if (u.mos < h.edges.front() || u.mos > h.edges.back())
      throw ValidationError("histogram: mos " + format_double(u.mos, 6) +
                            " outside the edge range");
    size_t b = nb - 1;
    for (size_t i = 0; i < nb; ++i) {
      if (u.mos < h.edges[i + 1]) {
        b = i;
        break;
      }
    }
    h.values[b] += 1.0;
    ++h.total;
  }
  if (spec.norm == HistogramSpec::Norm::kProportion)
    for (auto& v : h.values) v /= static_cast<double>(h.total);
  return h;
}

// ---------------------------------------------------------------------------
// Per-system MOS quintile composition

struct SystemMos {
  std::string system_id;
  SystemType type = SystemType::kNatural;
  double mean_mos = 0.0;
  size_t utterances = 0;
};

struct PercentileBinReport {
  std::vector<double> edges;  // the 20/40/60/80 percentiles of per-system MOS
  struct Bin {
    std::map<std::string, size_t> by_type;  // type name -> system count
    std::vector<std::string> systems;
  };
  std::vector<Bin> bins;  // 5, ordered low to high MOS
  std::vector<SystemMos> systems;
  std::string note =
      "percentiles use linear interpolation between closest ranks; systems "
      "on an edge fall into the lower bin";
};

inline std::vector<SystemMos> per_system_mos(const Manifest& m) {
  std::map<std::string, SystemMos> acc;
  for (const auto& u : m.utterances) {
    auto& s = acc[u.system_id];
    if (s.utterances == 0) {
      s.system_id = u.system_id;
      s.type = u.system_type;
    }
    s.mean_mos += u.mos;
    s.utterances += 1;
  }
  std::vector<SystemMos> out;
  for (auto& [id, s] : acc) {
    s.mean_mos /= static_cast<double>(s.utterances);
    out.push_back(s);
  }
  return out;
}

inline PercentileBinReport percentile_bins_by_system(const Manifest& m) {
  PercentileBinReport rep;
  rep.systems = per_system_mos(m);
  if (rep.systems.size() < 5)
    throw ValidationError(
        "percentile bins need at least 5 systems, got " +
        std::to_string(rep.systems.size()) +
        "; provide a manifest covering more synthesis systems");
  std::vector<double> mos;
  for (const auto& s : rep.systems) mos.push_back(s.mean_mos);
  std::sort(mos.begin(), mos.end());
  for (double p : {20.0, 40.0, 60.0, 80.0})
    rep.edges.push_back(percentile_sorted(mos, p));
  rep.bins.assign(5, {});
  for (const auto& s : rep.systems) {
    size_t b = 0;
    for (double e : rep.edges)
      if (e < s.mean_mos) ++b;
    rep.bins[b].by_type[to_string(s.type)] += 1;
    rep.bins[b].systems.push_back(s.system_id);
  }
  return rep;
}

inline nlohmann::json to_json(const PercentileBinReport& r) {
  nlohmann::json bins = nlohmann::json::array();
  for (const auto& b : r.bins)
    bins.push_back({{"by_type", b.by_type}, {"systems", b.systems}});
  nlohmann::json systems = nlohmann::json::array();
  for (const auto& s : r.systems)
    systems.push_back({{"system_id", s.system_id},
                       {"type", to_string(s.type)},
                       {"mean_mos", s.mean_mos},
                       {"utterances", s.utterances}});
  return {{"schema_version", kSchemaVersion},
          {"edges", r.edges},
          {"bins", bins},
          {"systems", systems},
          {"note", r.note}};
}

// ---------------------------------------------------------------------------
// Performance breakdown by system type

struct TypePartition {
  std::string name;
  std::set<SystemType> types;
};

// The synthesized-speech split used throughout: TTS sources vs VC sources,
// natural recordings excluded unless requested.
inline std::vector<TypePartition> default_partitions() {
  return {{"tts", {SystemType::kBc, SystemType::kEspnet}},
          {"vc", {SystemType::kVcc}}};
}

struct BreakdownReport {
  struct Entry {
    std::string partition;
    EvalReport report;
    bool empty = false;
  };
  EvalLevel level = EvalLevel::kUtterance;
  std::vector<Entry> entries;
  std::string note = "mapping coefficients refitted within each partition";
};

inline BreakdownReport system_type_breakdown(
    const std::vector<PredictionSet>& runs, const Manifest& manifest,
    const std::vector<TypePartition>& partitions = default_partitions(),
    EvalLevel level = EvalLevel::kUtterance) {
  for (size_t i = 0; i < partitions.size(); ++i)
    for (size_t j = i + 1; j < partitions.size(); ++j)
      for (SystemType t : partitions[i].types)
        if (partitions[j].types.count(t))
          throw ValidationError("breakdown partitions overlap on type " +
                                std::string(to_string(t)));
  BreakdownReport rep;
  rep.level = level;
  for (const auto& part : partitions) {
    BreakdownReport::Entry e;
    e.partition = part.name;
    e.report = evaluate(runs, manifest, level, part.types, part.name);
    e.empty = e.report.mse.runs_used == 0 && e.report.lcc.runs_used == 0;
    rep.entries.push_back(std::move(e));
  }
  return rep;
}

inline nlohmann::json to_json(const BreakdownReport& r) {
  nlohmann::json entries = nlohmann::json::array();
  for (const auto& e : r.entries)
    entries.push_back({{"partition", e.partition},
                       {"empty", e.empty},
                       {"report", to_json(e.report)}});
  return {{"schema_version", kSchemaVersion},
          {"level", to_string(r.level)},
          {"entries", entries},
          {"note", r.note}};
}

// ---------------------------------------------------------------------------
// Worst-system audit

struct WorstSystem {
  std::string system_id;
  SystemType type = SystemType::kNatural;
  size_t utterances = 0;
  double mean_abs_error = 0.0;  // after system-level mapping, averaged on runs
};

struct WorstSystemsReport {
  std::vector<WorstSystem> items;
  bool truncated = false;
  bool degenerate = false;
  std::vector<std::string> notes;
};

inline WorstSystemsReport worst_systems_audit(
    const std::vector<PredictionSet>& runs, const Manifest& manifest,
    size_t k) {
  if (runs.empty()) throw ValidationError("worst-systems audit: no runs");
  WorstSystemsReport rep;
  std::map<std::string, WorstSystem> acc;
  std::map<std::string, size_t> seen_runs;
  for (const auto& ps : runs) {
    const JoinedPredictions joined = join_with_manifest(ps, manifest);
    auto aggs = aggregate_by_system(joined);
    std::vector<double> pred, truth;
    for (const auto& a : aggs) {
      pred.push_back(a.mean_pred);
      truth.push_back(a.mean_truth);
    }
    MappingCoefficients map{0.0, 1.0};
    try {
      map = fit_p1401(pred, truth);
    } catch (const MosError& e) {
      if (e.code() != ErrorCode::kMappingDegenerate) throw;
      rep.notes.push_back("run " + ps.run_id +
                          ": mapping degenerate, errors computed unmapped");
    }
    for (const auto& a : aggs) {
      auto& w = acc[a.system_id];
      if (seen_runs[a.system_id]++ == 0) {
        w.system_id = a.system_id;
        w.type = a.system_type;
        w.utterances = a.count;
      }
      w.mean_abs_error +=
          std::abs(map.intercept + map.slope * a.mean_pred - a.mean_truth);
    }
  }
  for (auto& [id, w] : acc) {
    w.mean_abs_error /= static_cast<double>(seen_runs[id]);
    rep.items.push_back(w);
  }
  std::stable_sort(rep.items.begin(), rep.items.end(),
                   [](const WorstSystem& a, const WorstSystem& b) {
                     return a.mean_abs_error > b.mean_abs_error;
                   });
  if (k < rep.items.size()) {
    rep.items.resize(k);
  } else if (k > rep.items.size()) {
    rep.truncated = true;
    rep.notes.push_back("requested " + std::to_string(k) +
                        " systems, only " + std::to_string(rep.items.size()) +
                        " available");
  }
  double max_err = 0.0;
  for (const auto& w : rep.items) max_err = std::max(max_err, w.mean_abs_error);
  if (max_err < 1e-12) {
    rep.degenerate = true;
    rep.notes.push_back(
        "every system error is (near) zero; the ranking is arbitrary");
  }
  return rep;
}

inline nlohmann::json to_json(const WorstSystemsReport& r) {
  nlohmann::json items = nlohmann::json::array();
  for (const auto& w : r.items)
    items.push_back({{"system_id", w.system_id},
                     {"type", to_string(w.type)},
                     {"utterances", w.utterances},
                     {"mean_abs_error", w.mean_abs_error}});
  return {{"schema_version", kSchemaVersion},
          {"items", items},
          {"truncated", r.truncated},
          {"degenerate", r.degenerate},
          {"notes", r.notes}};
}

// ---------------------------------------------------------------------------
// Figures: minimal self-contained SVG bar charts

struct BarSeries {
  std::string label;
  std::vector<double> values;
  std::vector<double> ci_half;  // optional whiskers, empty = none
};

inline std::string svg_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

// Grouped bar chart with optional confidence whiskers. Pure geometry, no
// external assets; one <svg> document string.
inline std::string svg_bar_chart(const std::string& title,
                                 const std::vector<std::string>& categories,
                                 const std::vector<BarSeries>& series,
                                 int width = 720, int height = 400) {
  static const char* kColors[] = {"#4878a8", "#e49444", "#6a9f58",
                                  "#d1605e", "#857aab", "#937860"};
  const int ml = 56, mr = 16, mt = 40, mb = 56;
  const int pw = width - ml - mr, ph = height - mt - mb;
  double vmax = 0.0, vmin = 0.0;
  for (const auto& s : series)
    for (size_t i = 0; i < s.values.size(); ++i) {
      const double hi = s.values[i] + (i < s.ci_half.size() ? s.ci_half[i] : 0);
      const double lo = s.values[i] - (i < s.ci_half.size() ? s.ci_half[i] : 0);
      vmax = std::max(vmax, hi);
      vmin = std::min(vmin, lo);
    }
  if (vmax == vmin) vmax = vmin + 1.0;
  const double span = vmax - vmin;
  auto ypix = [&](double v) { return mt + ph - (v - vmin) / span * ph; };

  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width
     << "\" height=\"" << height << "\" viewBox=\"0 0 " << width << " "
     << height << "\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << width / 2 << "\" y=\"20\" text-anchor=\"middle\" "
     << "font-family=\"sans-serif\" font-size=\"14\">" << svg_escape(title)
     << "</text>\n";
  for (int i = 0; i <= 4; ++i) {
    const double v = vmin + span * i / 4.0;
    const double y = ypix(v);
    os << "<line x1=\"" << ml << "\" y1=\"" << y << "\" x2=\"" << width - mr
       << "\" y2=\"" << y << "\" stroke=\"#ddd\"/>\n";
    os << "<text x=\"" << ml - 6 << "\" y=\"" << y + 4
       << "\" text-anchor=\"end\" font-family=\"sans-serif\" "
          "font-size=\"10\">"
       << format_double(v, 3) << "</text>\n";
  }
  const size_t ncat = categories.size();
  const size_t nser = series.size();
  const double group_w = static_cast<double>(pw) / std::max<size_t>(1, ncat);
  const double bar_w = group_w * 0.8 / std::max<size_t>(1, nser);
  for (size_t c = 0; c < ncat; ++c) {
    for (size_t s = 0; s < nser; ++s) {
      if (c >= series[s].values.size()) continue;
      const double v = series[s].values[c];
      const double x = ml + group_w * c + group_w * 0.1 + bar_w * s;
      const double y0 = ypix(std::max(0.0, vmin));
      const double y1 = ypix(v);
      os << "<rect x=\"" << x << "\" y=\"" << std::min(y0, y1) << "\" width=\""
         << bar_w * 0.92 << "\" height=\"" << std::abs(y0 - y1) << "\" fill=\""
         << kColors[s % 6] << "\"/>\n";
      if (c < series[s].ci_half.size() && series[s].ci_half[c] > 0) {
        const double cx = x + bar_w * 0.46;
        const double yt = ypix(v + series[s].ci_half[c]);
        const double yb = ypix(v - series[s].ci_half[c]);
        os << "<line x1=\"" << cx << "\" y1=\"" << yt << "\" x2=\"" << cx
           << "\" y2=\"" << yb << "\" stroke=\"black\"/>\n";
        os << "<line x1=\"" << cx - 4 << "\" y1=\"" << yt << "\" x2=\""
           << cx + 4 << "\" y2=\"" << yt << "\" stroke=\"black\"/>\n";
        os << "<line x1=\"" << cx - 4 << "\" y1=\"" << yb << "\" x2=\""
           << cx + 4 << "\" y2=\"" << yb << "\" stroke=\"black\"/>\n";
      }
    }
    os << "<text x=\"" << ml + group_w * c + group_w / 2 << "\" y=\""
       << height - mb + 16
       << "\" text-anchor=\"middle\" font-family=\"sans-serif\" "
          "font-size=\"10\">"
       << svg_escape(categories[c]) << "</text>\n";
  }
  for (size_t s = 0; s < nser; ++s) {
    const int lx = ml + static_cast<int>(s) * 120;
    const int ly = height - 16;
    os << "<rect x=\"" << lx << "\" y=\"" << ly - 9
       << "\" width=\"10\" height=\"10\" fill=\"" << kColors[s % 6]
       << "\"/>\n";
    os << "<text x=\"" << lx + 14 << "\" y=\"" << ly
       << "\" font-family=\"sans-serif\" font-size=\"10\">"
       << svg_escape(series[s].label) << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

inline std::string svg_histogram(const std::string& title, const Histogram& h,
                                 int width = 720, int height = 400) {
  std::vector<std::string> cats;
  for (size_t i = 0; i + 1 < h.edges.size(); ++i)
    cats.push_back(format_double(h.edges[i], 3));
  BarSeries s;
  s.label = "mos";
  s.values = h.values;
  return svg_bar_chart(title, cats, {s}, width, height);
}

}  // namespace mosbench
