#pragma once

#include <algorithm>
#include <limits>
#include <numeric>
#include <utility>
#include <vector>

#include "maskfield/common.hpp"

namespace maskfield {

/// Row-major cost matrix: rows are predictions, columns are targets.
struct CostMatrix {
  int rows = 0;
  int cols = 0;
  std::vector<double> data;

  CostMatrix() = default;
  CostMatrix(int r, int c, double fill = 0.0) : rows(r), cols(c), data(static_cast<std::size_t>(r) * c, fill) {}
  CostMatrix(std::initializer_list<std::initializer_list<double>> init) {
    rows = static_cast<int>(init.size());
    cols = rows ? static_cast<int>(init.begin()->size()) : 0;
    for (const auto& row : init) {
      require(static_cast<int>(row.size()) == cols, "CostMatrix: ragged initializer");
      data.insert(data.end(), row.begin(), row.end());
    }
  }

  double& operator()(int i, int j) { return data[static_cast<std::size_t>(i) * cols + j]; }
  double operator()(int i, int j) const { return data[static_cast<std::size_t>(i) * cols + j]; }
};

struct MatchResult {
  std::vector<std::pair<int, int>> pairs;  // (pred, target), ascending target
  std::vector<int> unmatched_preds;        // ascending
  double total_cost = 0.0;
};

namespace detail {

inline void check_match_input(const CostMatrix& cost, const char* who) {
  require(cost.rows >= 1 && cost.cols >= 1, std::string(who) + ": empty cost matrix");
  require(cost.rows >= cost.cols, std::string(who) + ": " + std::to_string(cost.cols) +
                                      " targets exceed capacity of " + std::to_string(cost.rows) + " predictions");
  require(all_finite(cost.data), std::string(who) + ": cost matrix has non-finite entries");
}

// Sum in target order so that equal assignments give bitwise-equal totals.
inline double assignment_total(const CostMatrix& cost, const std::vector<int>& pred_of_target) {
  double total = 0.0;
  for (int j = 0; j < cost.cols; ++j) total += cost(pred_of_target[static_cast<std::size_t>(j)], j);
  return total;
}

inline MatchResult make_result(const CostMatrix& cost, const std::vector<int>& pred_of_target) {
  MatchResult r;
  std::vector<bool> used(static_cast<std::size_t>(cost.rows), false);
  for (int j = 0; j < cost.cols; ++j) {
    r.pairs.emplace_back(pred_of_target[static_cast<std::size_t>(j)], j);
    used[static_cast<std::size_t>(pred_of_target[static_cast<std::size_t>(j)])] = true;
  }
  for (int i = 0; i < cost.rows; ++i)
    if (!used[static_cast<std::size_t>(i)]) r.unmatched_preds.push_back(i);
  r.total_cost = assignment_total(cost, pred_of_target);
  return r;
}

// Shortest-augmenting-path Kuhn-Munkres with potentials on the sub-problem
// (targets x preds). Returns the pred chosen for each listed target.
inline std::vector<int> solve_assignment(const CostMatrix& cost, const std::vector<int>& targets,
                                         const std::vector<int>& preds) {
  const int n = static_cast<int>(targets.size());
  const int m = static_cast<int>(preds.size());
  std::vector<int> result(static_cast<std::size_t>(n), -1);
  if (n == 0) return result;
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(static_cast<std::size_t>(n) + 1, 0.0), v(static_cast<std::size_t>(m) + 1, 0.0);
  std::vector<int> p(static_cast<std::size_t>(m) + 1, 0), way(static_cast<std::size_t>(m) + 1, 0);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(static_cast<std::size_t>(m) + 1, inf);
    std::vector<char> used(static_cast<std::size_t>(m) + 1, 0);
    do {
      used[j0] = 1;
      const int i0 = p[j0];
      double delta = inf;
      int j1 = 0;
      for (int j = 1; j <= m; ++j) {
        if (used[j]) continue;
        const double cur = cost(preds[j - 1], targets[i0 - 1]) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= m; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  for (int j = 1; j <= m; ++j)
    if (p[j] != 0) result[static_cast<std::size_t>(p[j] - 1)] = preds[j - 1];
  return result;
}

inline bool within_optimum(double candidate, double optimum) {
  return candidate <= optimum + 1e-12 * (1.0 + std::abs(optimum));
}

}  // namespace detail

/// Minimum-cost assignment of every target (column) to a distinct prediction
/// (row). Among optimal assignments the one whose per-target prediction
/// sequence is lexicographically smallest is returned.
inline MatchResult hungarian_match(const CostMatrix& cost) {
  detail::check_match_input(cost, "hungarian_match");
  std::vector<int> all_targets(static_cast<std::size_t>(cost.cols)), all_preds(static_cast<std::size_t>(cost.rows));
  std::iota(all_targets.begin(), all_targets.end(), 0);
  std::iota(all_preds.begin(), all_preds.end(), 0);
  std::vector<int> best = detail::solve_assignment(cost, all_targets, all_preds);
  const double optimum = detail::assignment_total(cost, best);

  // Canonicalize: fix targets in order, each to the smallest prediction that
  // still admits an optimal completion.
  std::vector<bool> taken(static_cast<std::size_t>(cost.rows), false);
  double prefix = 0.0;
  for (int j = 0; j < cost.cols; ++j) {
    std::vector<int> rest_targets;
    for (int t = j + 1; t < cost.cols; ++t) rest_targets.push_back(t);
    for (int i = 0; i < best[static_cast<std::size_t>(j)]; ++i) {
      if (taken[static_cast<std::size_t>(i)]) continue;
      std::vector<int> rest_preds;
      for (int r = 0; r < cost.rows; ++r)
        if (!taken[static_cast<std::size_t>(r)] && r != i) rest_preds.push_back(r);
      const std::vector<int> sub = detail::solve_assignment(cost, rest_targets, rest_preds);
      double total = prefix + cost(i, j);
      for (std::size_t k = 0; k < sub.size(); ++k) total += cost(sub[k], rest_targets[k]);
      if (detail::within_optimum(total, optimum)) {
        best[static_cast<std::size_t>(j)] = i;
        for (std::size_t k = 0; k < sub.size(); ++k) best[static_cast<std::size_t>(rest_targets[k])] = sub[k];
        break;
      }
    }
    taken[static_cast<std::size_t>(best[static_cast<std::size_t>(j)])] = true;
    prefix += cost(best[static_cast<std::size_t>(j)], j);
  }
  return detail::make_result(cost, best);
}

inline constexpr int kBruteForceMaxTargets = 8;

/// Exhaustive minimum over all injections targets -> predictions, scanned
/// in lexicographic order so ties resolve like hungarian_match.
inline MatchResult brute_force_match(const CostMatrix& cost) {
  detail::check_match_input(cost, "brute_force_match");
  require(cost.cols <= kBruteForceMaxTargets, "brute_force_match: at most " + std::to_string(kBruteForceMaxTargets) +
                                                  " targets supported, got " + std::to_string(cost.cols));
  std::vector<int> current(static_cast<std::size_t>(cost.cols), -1), best;
  std::vector<bool> used(static_cast<std::size_t>(cost.rows), false);
  double best_total = std::numeric_limits<double>::infinity();
  auto recurse = [&](auto&& self, int j) -> void {
    if (j == cost.cols) {
      const double total = detail::assignment_total(cost, current);
      if (best.empty() || !detail::within_optimum(best_total, total)) {
        best_total = total;
        best = current;
      }
      return;
    }
    for (int i = 0; i < cost.rows; ++i) {
      if (used[static_cast<std::size_t>(i)]) continue;
      used[static_cast<std::size_t>(i)] = true;
      current[static_cast<std::size_t>(j)] = i;
      self(self, j + 1);
      used[static_cast<std::size_t>(i)] = false;
    }
  };
  recurse(recurse, 0);
  return detail::make_result(cost, best);
}

}  // namespace maskfield
