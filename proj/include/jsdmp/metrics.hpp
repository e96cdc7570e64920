#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <span>
#include <utility>
#include <vector>

#include "jsdmp/error.hpp"
#include "jsdmp/matrix.hpp"

namespace jsdmp {

/// Row-wise argmax; ties go to the lowest column.
inline std::vector<int> argmax_rows(const Matrix& logits) {
  std::vector<int> out(logits.rows());
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    auto row = logits.row(r);
    std::size_t best = 0;
    for (std::size_t j = 1; j < row.size(); ++j)
      if (row[j] > row[best]) best = j;
    out[r] = static_cast<int>(best);
  }
  return out;
}

namespace detail {
inline void check_metric_inputs(std::span<const int> pred, std::span<const int> truth,
                                std::span<const std::uint8_t> mask) {
  if (pred.size() != truth.size() || pred.size() != mask.size()) {
    throw DimensionError("metric inputs differ in length");
  }
  if (std::none_of(mask.begin(), mask.end(), [](std::uint8_t m) { return m != 0; })) {
    throw ConfigError("metric mask selects no nodes");
  }
}
}  // namespace detail

inline double accuracy(std::span<const int> pred, std::span<const int> truth, std::span<const std::uint8_t> mask) {
  detail::check_metric_inputs(pred, truth, mask);
  std::size_t hit = 0, total = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (!mask[i]) continue;
    ++total;
    if (pred[i] == truth[i]) ++hit;
  }
  return static_cast<double>(hit) / static_cast<double>(total);
}

/// Normalised mutual information 2 I(Y; P) / (H(Y) + H(P)) with natural logs
/// over the masked contingency table. Two identical single-cluster labelings
/// score 1.
inline double nmi(std::span<const int> pred, std::span<const int> truth, std::span<const std::uint8_t> mask) {
  detail::check_metric_inputs(pred, truth, mask);
  std::map<std::pair<int, int>, double> joint;
  std::map<int, double> pm, tm;
  double total = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (!mask[i]) continue;
    joint[{truth[i], pred[i]}] += 1.0;
    tm[truth[i]] += 1.0;
    pm[pred[i]] += 1.0;
    total += 1.0;
  }
  auto entropy = [total](const std::map<int, double>& m) {
    double h = 0.0;
    for (const auto& [k, c] : m) {
      const double p = c / total;
      h -= p * std::log(p);
    }
    return h;
  };
  const double ht = entropy(tm), hp = entropy(pm);
  if (tm.size() == 1 && pm.size() == 1) return 1.0;
  if (ht + hp <= 0.0) return 0.0;
  double mi = 0.0;
  for (const auto& [key, c] : joint) {
    const double pij = c / total;
    mi += pij * std::log(pij / ((tm[key.first] / total) * (pm[key.second] / total)));
  }
  return std::clamp(2.0 * mi / (ht + hp), 0.0, 1.0);
}

}  // namespace jsdmp
