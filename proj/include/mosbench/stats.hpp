#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "mosbench/common.hpp"
#include "mosbench/distributions.hpp"
#include "mosbench/evaluation.hpp"

namespace mosbench {

// Repeated measurements of one metric for one model, one value per run.
struct MetricSamples {
  std::string model_id;
  std::vector<double> values;
};

enum class AnovaStatus { kOk, kInfiniteF, kDegenerate };

inline const char* to_string(AnovaStatus s) {
  switch (s) {
    case AnovaStatus::kOk: return "ok";
    case AnovaStatus::kInfiniteF: return "infinite_f";
    case AnovaStatus::kDegenerate: return "degenerate";
  }
  return "?";
}

struct AnovaResult {
  double f_stat = std::numeric_limits<double>::quiet_NaN();
  double p_value = std::numeric_limits<double>::quiet_NaN();
  double ss_between = 0.0;
  double ss_within = 0.0;
  double ms_between = std::numeric_limits<double>::quiet_NaN();
  double ms_within = std::numeric_limits<double>::quiet_NaN();
  size_t df_between = 0;
  size_t df_within = 0;
  AnovaStatus status = AnovaStatus::kOk;
};

inline AnovaResult one_way_anova(const std::vector<MetricSamples>& groups) {
  if (groups.size() < 2)
    throw ValidationError("one_way_anova: needs at least 2 groups");
  size_t n_total = 0;
  for (const auto& g : groups) {
    if (g.values.empty())
      throw ValidationError("one_way_anova: group '" + g.model_id +
                            "' is empty");
    for (double v : g.values)
      if (!std::isfinite(v))
        throw MosError(ErrorCode::kDegenerateStats,
                       "one_way_anova: non-finite value in group '" +
                           g.model_id + "'");
    n_total += g.values.size();
  }
  AnovaResult r;
  r.df_between = groups.size() - 1;
  if (n_total <= groups.size()) {
    r.status = AnovaStatus::kDegenerate;
    return r;
  }
  r.df_within = n_total - groups.size();

  double grand = 0.0;
  for (const auto& g : groups)
    for (double v : g.values) grand += v;
  grand /= static_cast<double>(n_total);

  for (const auto& g : groups) {
    double gm = 0.0;
    for (double v : g.values) gm += v;
    gm /= static_cast<double>(g.values.size());
    r.ss_between += static_cast<double>(g.values.size()) * (gm - grand) * (gm - grand);
    for (double v : g.values) r.ss_within += (v - gm) * (v - gm);
  }
  r.ms_between = r.ss_between / static_cast<double>(r.df_between);
  r.ms_within = r.ss_within / static_cast<double>(r.df_within);
  if (r.ms_within == 0.0) {
    if (r.ss_between == 0.0) {
      r.status = AnovaStatus::kDegenerate;  // all values identical
      return r;
    }
    r.status = AnovaStatus::kInfiniteF;
    r.f_stat = std::numeric_limits<double>::infinity();
    r.p_value = 0.0;
    return r;
  }
  r.f_stat = r.ms_between / r.ms_within;
  r.p_value = f_sf(r.f_stat, static_cast<double>(r.df_between),
                   static_cast<double>(r.df_within));
  return r;
}

struct PairwiseResult {
  std::string model_a;
  std::string model_b;
  double mean_diff = 0.0;   // mean(a) - mean(b)
  double q_stat = std::numeric_limits<double>::quiet_NaN();
  double p_value = std::numeric_limits<double>::quiet_NaN();
  bool significant = false;
};

struct TukeyResult {
  double q_critical = std::numeric_limits<double>::quiet_NaN();
  double alpha = 0.05;
  std::vector<PairwiseResult> pairs;
};

// Tukey HSD over all group pairs, using the Tukey-Kramer statistic for
// unequal group sizes. Requires a finite positive within-group mean square.
inline TukeyResult tukey_hsd(const std::vector<MetricSamples>& groups,
                             const AnovaResult& anova, double alpha = 0.05) {
  if (anova.status != AnovaStatus::kOk)
    throw MosError(ErrorCode::kDegenerateStats,
                   std::string("tukey_hsd: anova status is ") +
                       to_string(anova.status));
  TukeyResult t;
  t.alpha = alpha;
  const double k = static_cast<double>(groups.size());
  const double nu = static_cast<double>(anova.df_within);
  t.q_critical = studentized_range_quantile(1.0 - alpha, k, nu);
  std::vector<double> means(groups.size());
  for (size_t i = 0; i < groups.size(); ++i) {
    double m = 0.0;
    for (double v : groups[i].values) m += v;
    means[i] = m / static_cast<double>(groups[i].values.size());
  }
  for (size_t i = 0; i < groups.size(); ++i) {
    for (size_t j = i + 1; j < groups.size(); ++j) {
      PairwiseResult p;
      p.model_a = groups[i].model_id;
      p.model_b = groups[j].model_id;
      p.mean_diff = means[i] - means[j];
      const double ni = static_cast<double>(groups[i].values.size());
      const double nj = static_cast<double>(groups[j].values.size());
      const double se =
          std::sqrt(anova.ms_within / 2.0 * (1.0 / ni + 1.0 / nj));
      p.q_stat = std::abs(p.mean_diff) / se;
      p.p_value = studentized_range_sf(p.q_stat, k, nu);
      p.significant = p.q_stat > t.q_critical;
      t.pairs.push_back(p);
    }
  }
  return t;
}

// Full comparison of models on one (metric, level) cell: ANOVA gate first,
// pairwise Tukey only when the omnibus test rejects.
struct ComparisonCell {
  std::string metric;  // "mse" | "lcc" | "srcc"
  EvalLevel level = EvalLevel::kUtterance;
  AnovaResult anova;
  bool tukey_run = false;
  TukeyResult tukey;
  std::vector<MetricSamples> groups;
};

struct ComparisonReport {
  double alpha = 0.05;
  std::vector<ComparisonCell> cells;
};

inline ComparisonCell compare_one_cell(std::vector<MetricSamples> groups,
                                       const std::string& metric,
                                       EvalLevel level, double alpha) {
  ComparisonCell cell;
  cell.metric = metric;
  cell.level = level;
  cell.anova = one_way_anova(groups);
  if (cell.anova.status == AnovaStatus::kOk &&
      cell.anova.p_value < alpha) {
    cell.tukey = tukey_hsd(groups, cell.anova, alpha);
    cell.tukey_run = true;
  } else if (cell.anova.status == AnovaStatus::kInfiniteF) {
    // Within-group variance is exactly zero; every pair with distinct
    // means separates trivially. Record that without a q statistic.
    cell.tukey_run = false;
  }
  cell.groups = std::move(groups);
  return cell;
}

inline nlohmann::json to_json(const AnovaResult& a) {
  return {{"f_stat", a.f_stat},
          {"p_value", a.p_value},
          {"ss_between", a.ss_between},
          {"ss_within", a.ss_within},
          {"ms_between", a.ms_between},
          {"ms_within", a.ms_within},
          {"df_between", a.df_between},
          {"df_within", a.df_within},
          {"status", to_string(a.status)}};
}

inline nlohmann::json to_json(const TukeyResult& t) {
  nlohmann::json pairs = nlohmann::json::array();
  for (const auto& p : t.pairs)
    pairs.push_back({{"model_a", p.model_a},
                     {"model_b", p.model_b},
                     {"mean_diff", p.mean_diff},
                     {"q_stat", p.q_stat},
                     {"p_value", p.p_value},
                     {"significant", p.significant}});
  return {{"q_critical", t.q_critical}, {"alpha", t.alpha}, {"pairs", pairs}};
}

inline nlohmann::json to_json(const ComparisonReport& r) {
  nlohmann::json cells = nlohmann::json::array();
  for (const auto& c : r.cells) {
    nlohmann::json groups = nlohmann::json::array();
    for (const auto& g : c.groups)
      groups.push_back({{"model_id", g.model_id}, {"values", g.values}});
    nlohmann::json cell = {{"metric", c.metric},
                           {"level", to_string(c.level)},
                           {"anova", to_json(c.anova)},
                           {"tukey_run", c.tukey_run},
                           {"groups", groups}};
    if (c.tukey_run) cell["tukey"] = to_json(c.tukey);
    cells.push_back(cell);
  }
  return {{"schema_version", kSchemaVersion}, {"alpha", r.alpha}, {"cells", cells}};
}

// Text rendering: one block per cell, * marks pairs separated at alpha.
inline std::string render_comparison(const ComparisonReport& r) {
  std::ostringstream os;
  os << "model comparison (alpha=" << format_double(r.alpha, 4) << ")\n";
  for (const auto& c : r.cells) {
    os << "\n[" << c.metric << " @ " << to_string(c.level) << " level]\n";
    const auto& a = c.anova;
    if (a.status == AnovaStatus::kDegenerate) {
      os << "  anova: degenerate (no within-group variation to test)\n";
      continue;
    }
    if (a.status == AnovaStatus::kInfiniteF) {
      os << "  anova: F=inf (zero within-group variance), p=0\n";
      os << "  pairwise q statistics undefined; distinct means separate trivially\n";
      continue;
    }
    os << "  anova: F(" << a.df_between << "," << a.df_within
       << ")=" << format_double(a.f_stat, 6)
       << " p=" << format_double(a.p_value, 6) << "\n";
    if (!c.tukey_run) {
      os << "  omnibus test not rejected; no pairwise comparisons\n";
      continue;
    }
    os << "  tukey hsd, q_crit=" << format_double(c.tukey.q_critical, 6)
       << "\n";
    for (const auto& p : c.tukey.pairs) {
      os << "    " << p.model_a << " vs " << p.model_b
         << ": diff=" << format_double(p.mean_diff, 6)
         << " q=" << format_double(p.q_stat, 6)
         << " p=" << format_double(p.p_value, 6)
         << (p.significant ? " *" : "") << "\n";
    }
  }
  return os.str();
}

}  // namespace mosbench
