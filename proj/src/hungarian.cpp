#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>

#include "infosculpt/errors.hpp"
#include "infosculpt/eval.hpp"

namespace infosculpt {
namespace {

struct Solution {
  std::vector<std::size_t> col_of_row;
  std::vector<double> u;  // row potentials
  std::vector<double> v;  // column potentials
};

// Shortest augmenting path Hungarian method with potentials, O(n^3).
Solution solve(const Matrix& a) {
  const std::size_t n = a.rows();
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0), minv(n + 1);
  std::vector<std::size_t> p(n + 1, 0), way(n + 1, 0);
  std::vector<char> used(n + 1);
  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::fill(minv.begin(), minv.end(), inf);
    std::fill(used.begin(), used.end(), 0);
    do {
      used[j0] = 1;
      const std::size_t i0 = p[j0];
      double delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = a(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= n; ++j) {
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
      const std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  Solution s;
  s.col_of_row.assign(n, 0);
  for (std::size_t j = 1; j <= n; ++j) s.col_of_row[p[j] - 1] = j - 1;
  s.u.assign(u.begin() + 1, u.end());
  s.v.assign(v.begin() + 1, v.end());
  return s;
}

}  // namespace

double assignment_cost(const Matrix& cost, std::span<const std::size_t> perm) {
  double total = 0.0;
  for (std::size_t r = 0; r < perm.size(); ++r) total += cost(r, perm[r]);
  return total;
}

std::vector<std::size_t> hungarian(const Matrix& cost) {
  if (cost.rows() != cost.cols()) throw DimensionError("hungarian: cost matrix must be square");
  if (!cost.all_finite()) throw DomainError("hungarian: non-finite cost");
  const std::size_t n = cost.rows();
  if (n == 0) return {};

  Solution s = solve(cost);

  // Every optimal assignment uses only edges that are tight under the optimal
  // duals, so the lexicographically smallest optimum is the lexicographically
  // smallest perfect matching of the tight-edge graph. Rows are fixed greedily;
  // a candidate column is accepted when an alternating path restores a perfect
  // matching on the unfixed rows.
  const double tol = 1e-9 * std::max(1.0, max_abs(cost));
  auto tight = [&](std::size_t r, std::size_t c) { return std::abs(cost(r, c) - s.u[r] - s.v[c]) <= tol; };

  std::vector<std::size_t> col_of_row = s.col_of_row;
  std::vector<std::size_t> row_of_col(n);
  for (std::size_t r = 0; r < n; ++r) row_of_col[col_of_row[r]] = r;
  std::vector<char> col_locked(n, 0);

  std::vector<char> visited(n);
  // Re-match `row` (rows <= `fixed` are frozen) to some column on a path ending at `target`.
  std::function<bool(std::size_t, std::size_t, std::size_t)> augment = [&](std::size_t row, std::size_t target,
                                                                            std::size_t fixed) -> bool {
    for (std::size_t c = 0; c < n; ++c) {
      if (col_locked[c] || visited[c] || !tight(row, c)) continue;
      visited[c] = 1;
      if (c == target) {
        col_of_row[row] = c;
        row_of_col[c] = row;
        return true;
      }
      const std::size_t next = row_of_col[c];
      if (next <= fixed) continue;
      if (augment(next, target, fixed)) {
        col_of_row[row] = c;
        row_of_col[c] = row;
        return true;
      }
    }
    return false;
  };

  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < n; ++c) {
      if (col_locked[c] || !tight(r, c)) continue;
      if (col_of_row[r] == c) {
        col_locked[c] = 1;
        break;
      }
      const std::size_t freed = col_of_row[r];
      const std::size_t displaced = row_of_col[c];
      const auto saved_cols = col_of_row;
      const auto saved_rows = row_of_col;
      col_of_row[r] = c;
      row_of_col[c] = r;
      col_locked[c] = 1;
      std::fill(visited.begin(), visited.end(), 0);
      if (augment(displaced, freed, r)) break;
      col_of_row = saved_cols;
      row_of_col = saved_rows;
      col_locked[c] = 0;
    }
  }
  return col_of_row;
}

}  // namespace infosculpt
