#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "mosbench/common.hpp"

namespace mosbench {

inline void check_pair(const std::vector<double>& a,
                       const std::vector<double>& b, const char* op) {
  if (a.empty())
    throw ValidationError(std::string(op) + ": empty input");
  if (a.size() != b.size())
    throw ValidationError(std::string(op) + ": length mismatch (" +
                          std::to_string(a.size()) + " vs " +
                          std::to_string(b.size()) + ")");
}

inline double mean(const std::vector<double>& v) {
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

// Mean squared error.
inline double mse(const std::vector<double>& pred,
                  const std::vector<double>& truth) {
  check_pair(pred, truth, "mse");
  double acc = 0.0;
  for (size_t i = 0; i < pred.size(); ++i) {
    const double d = pred[i] - truth[i];
    acc += d * d;
  }
  return acc / static_cast<double>(pred.size());
}

// Pearson linear correlation. Constant input is CORR_DEGENERATE.
inline double lcc(const std::vector<double>& x, const std::vector<double>& y) {
  check_pair(x, y, "lcc");
  if (x.size() < 2) throw ValidationError("lcc: need n >= 2");
  const double mx = mean(x), my = mean(y);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - mx, dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0.0 || syy == 0.0)
    throw MosError(ErrorCode::kCorrDegenerate,
                   "lcc: constant input has no defined correlation");
  return sxy / std::sqrt(sxx * syy);
}

// Fractional (mid) ranks, 1-based; ties receive the average rank.
inline std::vector<double> midranks(const std::vector<double>& v) {
  const size_t n = v.size();
  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](size_t a, size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(n);
  size_t i = 0;
  while (i < n) {
    size_t j = i;
    while (j + 1 < n && v[order[j + 1]] == v[order[i]]) ++j;
    const double r = (static_cast<double>(i + 1) + static_cast<double>(j + 1)) / 2.0;
    for (size_t k = i; k <= j; ++k) ranks[order[k]] = r;
    i = j + 1;
  }
  return ranks;
}

// Spearman rank correlation: Pearson over mid-ranks.
inline double srcc(const std::vector<double>& x, const std::vector<double>& y) {
  check_pair(x, y, "srcc");
  if (x.size() < 2) throw ValidationError("srcc: need n >= 2");
  return lcc(midranks(x), midranks(y));
}

// First-degree polynomial mapping of predictions onto ground truth.
struct MappingCoefficients {
  double intercept = 0.0;
  double slope = 1.0;
};

// Least squares of truth on prediction: minimizes sum(truth - (a + b*pred))^2.
inline MappingCoefficients fit_p1401(const std::vector<double>& pred,
                                     const std::vector<double>& truth) {
  check_pair(pred, truth, "fit_p1401");
  if (pred.size() < 2) throw ValidationError("fit_p1401: need n >= 2");
  const double mp = mean(pred), mt = mean(truth);
  double spp = 0.0, spt = 0.0;
  for (size_t i = 0; i < pred.size(); ++i) {
    const double dp = pred[i] - mp;
    spp += dp * dp;
    spt += dp * (truth[i] - mt);
  }
  if (spp == 0.0)
    throw MosError(ErrorCode::kMappingDegenerate,
                   "fit_p1401: constant predictions cannot be mapped");
  MappingCoefficients m;
  m.slope = spt / spp;
  m.intercept = mt - m.slope * mp;
  if (!std::isfinite(m.slope) || !std::isfinite(m.intercept))
    throw MosError(ErrorCode::kMappingDegenerate, "fit_p1401: non-finite fit");
  return m;
}

// Elementwise a + b*pred. No clipping.
inline std::vector<double> apply_mapping(const std::vector<double>& pred,
                                         const MappingCoefficients& m) {
  std::vector<double> out(pred.size());
  for (size_t i = 0; i < pred.size(); ++i)
    out[i] = m.intercept + m.slope * pred[i];
  return out;
}

// Mean absolute error; the training loss, also used by evaluation audits.
inline double mean_abs_error(const std::vector<double>& pred,
                             const std::vector<double>& truth) {
  check_pair(pred, truth, "mean_abs_error");
  double acc = 0.0;
  for (size_t i = 0; i < pred.size(); ++i) acc += std::abs(pred[i] - truth[i]);
  return acc / static_cast<double>(pred.size());
}

}  // namespace mosbench
