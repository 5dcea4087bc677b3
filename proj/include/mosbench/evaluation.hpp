#pragma once

#include <cmath>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "mosbench/common.hpp"
#include "mosbench/csv.hpp"
#include "mosbench/distributions.hpp"
#include "mosbench/manifest.hpp"
#include "mosbench/metrics.hpp"

namespace mosbench {

enum class EvalLevel { kUtterance, kSystem };

inline const char* to_string(EvalLevel l) {
  return l == EvalLevel::kUtterance ? "utterance" : "system";
}

// Predictions of one trained model instance (one run) on a test split.
// Ground truth is joined from the manifest at evaluation time.
struct PredictionSet {
  std::string model_id;
  std::string run_id;
  std::vector<std::pair<std::string, double>> records;  // (utterance_id, pred)
};

inline const std::vector<std::string>& prediction_header() {
  static const std::vector<std::string> h = {"utterance_id", "model_id",
                                             "run_id", "prediction"};
  return h;
}

inline void save_predictions(const PredictionSet& ps, const std::string& path) {
  std::vector<std::vector<std::string>> rows;
  rows.reserve(ps.records.size());
  for (const auto& [id, pred] : ps.records)
    rows.push_back({id, ps.model_id, ps.run_id, format_double(pred, 12)});
  write_csv(path, prediction_header(), rows);
}

inline PredictionSet load_predictions(const std::string& path) {
  CsvTable t = read_csv(path);
  for (const auto& col : prediction_header())
    if (t.column(col) < 0)
      throw ValidationError("prediction file " + path + ": missing column '" +
                                col + "'",
                            1, col);
  const int c_id = t.column("utterance_id");
  const int c_model = t.column("model_id");
  const int c_run = t.column("run_id");
  const int c_pred = t.column("prediction");
  PredictionSet ps;
  std::set<std::string> seen;
  for (size_t r = 0; r < t.rows.size(); ++r) {
    const auto& row = t.rows[r];
    if (ps.records.empty()) {
      ps.model_id = row[c_model];
      ps.run_id = row[c_run];
    }
    if (!seen.insert(row[c_id]).second)
      throw ValidationError("duplicate utterance_id in prediction file",
                            t.line_numbers[r], "utterance_id");
    char* end = nullptr;
    const double v = std::strtod(row[c_pred].c_str(), &end);
    if (end == row[c_pred].c_str() || *end != '\0')
      throw ValidationError("prediction is not a number", t.line_numbers[r],
                            "prediction");
    ps.records.emplace_back(row[c_id], v);
  }
  if (ps.records.empty())
    throw ValidationError("prediction file has no rows: " + path);
  return ps;
}

// Prediction records joined with ground truth, system identity and type.
struct JoinedPredictions {
  std::vector<std::string> utterance_ids;
  std::vector<double> pred;
  std::vector<double> truth;
  std::vector<std::string> system_ids;
  std::vector<SystemType> system_types;

  size_t size() const { return pred.size(); }
};

inline JoinedPredictions join_with_manifest(
    const PredictionSet& ps, const Manifest& manifest,
    const std::optional<std::set<SystemType>>& type_filter = std::nullopt) {
  std::map<std::string, const Utterance*> index;
  for (const auto& u : manifest.utterances) index[u.utterance_id] = &u;
  JoinedPredictions j;
  for (const auto& [id, pred] : ps.records) {
    auto it = index.find(id);
    if (it == index.end())
      throw ValidationError("prediction references unknown utterance_id '" +
                            id + "' (manifest '" + manifest.name + "')");
    const Utterance& u = *it->second;
    if (type_filter && !type_filter->count(u.system_type)) continue;
    j.utterance_ids.push_back(id);
    j.pred.push_back(pred);
    j.truth.push_back(u.mos);
    j.system_ids.push_back(u.system_id);
    j.system_types.push_back(u.system_type);
  }
  return j;
}

struct SystemAggregate {
  std::string system_id;
  SystemType system_type;
  double mean_pred = 0.0;
  double mean_truth = 0.0;
  size_t count = 0;
};

// Per-system means of prediction and ground truth, sorted by system_id.
inline std::vector<SystemAggregate> aggregate_by_system(
    const JoinedPredictions& j) {
  if (j.size() == 0)
    throw ValidationError("aggregate_by_system: empty prediction set");
  std::map<std::string, SystemAggregate> acc;
  for (size_t i = 0; i < j.size(); ++i) {
    auto& a = acc[j.system_ids[i]];
    if (a.count == 0) {
      a.system_id = j.system_ids[i];
      a.system_type = j.system_types[i];
    }
    a.mean_pred += j.pred[i];
    a.mean_truth += j.truth[i];
    a.count += 1;
  }
  std::vector<SystemAggregate> out;
  out.reserve(acc.size());
  for (auto& [id, a] : acc) {
    a.mean_pred /= static_cast<double>(a.count);
    a.mean_truth /= static_cast<double>(a.count);
    out.push_back(a);
  }
  return out;
}

// Metric values of one run at one level, after P.1401 mapping.
struct RunMetrics {
  std::string run_id;
  double mse = std::numeric_limits<double>::quiet_NaN();
  double lcc = std::numeric_limits<double>::quiet_NaN();
  double srcc = std::numeric_limits<double>::quiet_NaN();
  MappingCoefficients mapping;
  bool mapping_degenerate = false;
  std::vector<std::string> flags;
};

struct MetricSummary {
  double mean = std::numeric_limits<double>::quiet_NaN();
  double ci95_half = 0.0;
  size_t runs_used = 0;
};

struct EvalReport {
  std::string model_id;
  EvalLevel level = EvalLevel::kUtterance;
  std::string subset = "all";
  size_t run_count = 0;
  MetricSummary mse, lcc, srcc;
  std::vector<RunMetrics> per_run;
  std::vector<std::string> notes;
};

// Mean and 95% CI half-width over runs (Student-t, n-1 df). A single run
// has half-width 0 by convention.
inline MetricSummary summarize_runs(const std::vector<double>& values) {
  MetricSummary s;
  std::vector<double> ok;
  for (double v : values)
    if (std::isfinite(v)) ok.push_back(v);
  s.runs_used = ok.size();
  if (ok.empty()) return s;
  s.mean = mean(ok);
  if (ok.size() < 2) {
    s.ci95_half = 0.0;
    return s;
  }
  double ss = 0.0;
  for (double v : ok) ss += (v - s.mean) * (v - s.mean);
  const double sd = std::sqrt(ss / static_cast<double>(ok.size() - 1));
  const double tq =
      student_t_quantile(0.975, static_cast<double>(ok.size() - 1));
  s.ci95_half = tq * sd / std::sqrt(static_cast<double>(ok.size()));
  return s;
}

// One run, one level: fit the first-degree mapping on the evaluated pairs,
// apply it, compute MSE/LCC/SRCC. Degenerate fits fall back to unmapped
// values and are flagged rather than thrown.
inline RunMetrics evaluate_run(const JoinedPredictions& joined, EvalLevel level,
                               const std::string& run_id) {
  RunMetrics rm;
  rm.run_id = run_id;
  std::vector<double> pred, truth;
  if (level == EvalLevel::kUtterance) {
    pred = joined.pred;
    truth = joined.truth;
  } else {
    for (const auto& a : aggregate_by_system(joined)) {
      pred.push_back(a.mean_pred);
      truth.push_back(a.mean_truth);
    }
  }
  if (pred.size() < 2) {
    rm.flags.push_back("fewer than 2 evaluation pairs");
    return rm;
  }
  std::vector<double> mapped;
  try {
    rm.mapping = fit_p1401(pred, truth);
    mapped = apply_mapping(pred, rm.mapping);
  } catch (const MosError& e) {
    if (e.code() != ErrorCode::kMappingDegenerate) throw;
    rm.mapping_degenerate = true;
    rm.mapping = {0.0, 1.0};
    rm.flags.push_back("MAPPING_DEGENERATE: metrics computed unmapped");
    mapped = pred;
  }
  rm.mse = mse(mapped, truth);
  try {
    rm.lcc = lcc(mapped, truth);
  } catch (const MosError& e) {
    if (e.code() != ErrorCode::kCorrDegenerate) throw;
    rm.flags.push_back("CORR_DEGENERATE: lcc undefined");
  }
  try {
    rm.srcc = srcc(mapped, truth);
  } catch (const MosError& e) {
    if (e.code() != ErrorCode::kCorrDegenerate) throw;
    rm.flags.push_back("CORR_DEGENERATE: srcc undefined");
  }
  return rm;
}

inline EvalReport evaluate(
    const std::vector<PredictionSet>& runs, const Manifest& manifest,
    EvalLevel level,
    const std::optional<std::set<SystemType>>& type_filter = std::nullopt,
    std::string subset_name = "all") {
  if (runs.empty()) throw ValidationError("evaluate: no runs given");
  EvalReport report;
  report.model_id = runs.front().model_id;
  report.level = level;
  report.subset = std::move(subset_name);
  report.run_count = runs.size();
  std::vector<double> v_mse, v_lcc, v_srcc;
  for (const auto& ps : runs) {
    const JoinedPredictions joined = join_with_manifest(ps, manifest, type_filter);
    if (joined.size() == 0) {
      RunMetrics rm;
      rm.run_id = ps.run_id;
      rm.flags.push_back("empty subset after filtering");
      report.per_run.push_back(rm);
      v_mse.push_back(rm.mse);
      v_lcc.push_back(rm.lcc);
      v_srcc.push_back(rm.srcc);
      continue;
    }
    RunMetrics rm = evaluate_run(joined, level, ps.run_id);
    v_mse.push_back(rm.mse);
    v_lcc.push_back(rm.lcc);
    v_srcc.push_back(rm.srcc);
    report.per_run.push_back(std::move(rm));
  }
  report.mse = summarize_runs(v_mse);
  report.lcc = summarize_runs(v_lcc);
  report.srcc = summarize_runs(v_srcc);
  report.notes.push_back("mapping fitted per run at the evaluated level");
  report.notes.push_back("mapped values are not clipped");
  return report;
}

inline nlohmann::json to_json(const MetricSummary& s) {
  return {{"mean", s.mean}, {"ci95_half", s.ci95_half}, {"runs_used", s.runs_used}};
}

inline nlohmann::json to_json(const EvalReport& r) {
  nlohmann::json per_run = nlohmann::json::array();
  for (const auto& rm : r.per_run) {
    per_run.push_back({{"run_id", rm.run_id},
                       {"mse", rm.mse},
                       {"lcc", rm.lcc},
                       {"srcc", rm.srcc},
                       {"mapping", {{"intercept", rm.mapping.intercept},
                                    {"slope", rm.mapping.slope}}},
                       {"mapping_degenerate", rm.mapping_degenerate},
                       {"flags", rm.flags}});
  }
  return {{"schema_version", kSchemaVersion},
          {"model_id", r.model_id},
          {"level", to_string(r.level)},
          {"subset", r.subset},
          {"run_count", r.run_count},
          {"metrics",
           {{"mse", to_json(r.mse)}, {"lcc", to_json(r.lcc)}, {"srcc", to_json(r.srcc)}}},
          {"per_run", per_run},
          {"notes", r.notes}};
}

}  // namespace mosbench
