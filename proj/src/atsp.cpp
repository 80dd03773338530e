#include "scanplan/atsp.hpp"

#include <algorithm>
#include <iomanip>
#include <limits>
#include <numeric>
#include <random>
#include <ostream>
#include <stdexcept>

namespace scanplan {

double tour_cost(const CostMatrix& costs, std::span<const int> order) {
  double total = 0.0;
  for (std::size_t k = 0; k + 1 < order.size(); ++k) total += costs(order[k], order[k + 1]);
  return total;
}

std::vector<int> solve_open_atsp_exact(const CostMatrix& costs) {
  const std::size_t n = costs.size();
  if (n == 0) return {};
  if (n == 1) return {0};
  const std::size_t m = n - 1;  // targets 1..n-1 map to bits 0..m-1
  if (m > 20) throw std::invalid_argument("solve_open_atsp_exact: too many nodes");
  const std::size_t full = (std::size_t{1} << m) - 1;
  constexpr double inf = std::numeric_limits<double>::infinity();
  std::vector<double> dp((full + 1) * m, inf);
  std::vector<int> parent((full + 1) * m, -1);
  for (std::size_t j = 0; j < m; ++j) dp[(std::size_t{1} << j) * m + j] = costs(0, j + 1);
  for (std::size_t mask = 1; mask <= full; ++mask) {
    for (std::size_t j = 0; j < m; ++j) {
      if (!(mask & (std::size_t{1} << j))) continue;
      const double base = dp[mask * m + j];
      if (base == inf) continue;
      for (std::size_t k = 0; k < m; ++k) {
        if (mask & (std::size_t{1} << k)) continue;
        const std::size_t next = mask | (std::size_t{1} << k);
        const double c = base + costs(j + 1, k + 1);
        if (c < dp[next * m + k]) {
          dp[next * m + k] = c;
          parent[next * m + k] = static_cast<int>(j);
        }
      }
    }
  }
  std::size_t last = 0;
  for (std::size_t j = 1; j < m; ++j)
    if (dp[full * m + j] < dp[full * m + last]) last = j;
  std::vector<int> order;
  std::size_t mask = full;
  int cur = static_cast<int>(last);
  while (cur >= 0) {
    order.push_back(cur + 1);
    const int prev = parent[mask * m + static_cast<std::size_t>(cur)];
    mask &= ~(std::size_t{1} << cur);
    cur = prev;
  }
  order.push_back(0);
  std::reverse(order.begin(), order.end());
  return order;
}

namespace {

std::vector<int> nearest_neighbour(const CostMatrix& costs, int first) {
  const std::size_t n = costs.size();
  std::vector<int> order{0};
  std::vector<char> used(n, 0);
  used[0] = 1;
  if (first > 0) {
    order.push_back(first);
    used[static_cast<std::size_t>(first)] = 1;
  }
  while (order.size() < n) {
    const int cur = order.back();
    int best = -1;
    for (std::size_t j = 1; j < n; ++j) {
      if (used[j]) continue;
      if (best < 0 || costs(cur, j) < costs(cur, best)) best = static_cast<int>(j);
    }
    used[best] = 1;
    order.push_back(best);
  }
  return order;
}

// Prefix sums of the forward and backward edge costs along the order, so a
// reversed stretch costs B[j] - B[i] without walking it.
struct Prefix {
  std::vector<double> fwd, bwd;
  void build(const CostMatrix& c, const std::vector<int>& o) {
    fwd.assign(o.size(), 0.0);
    bwd.assign(o.size(), 0.0);
    for (std::size_t k = 1; k < o.size(); ++k) {
      fwd[k] = fwd[k - 1] + c(o[k - 1], o[k]);
      bwd[k] = bwd[k - 1] + c(o[k], o[k - 1]);
    }
  }
};

constexpr double kGain = 1e-10;

bool improve_two_opt(const CostMatrix& c, std::vector<int>& o, const Prefix& p) {
  const std::size_t n = o.size();
  for (std::size_t i = 1; i + 1 < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const bool tail = j + 1 < n;
      const double before = c(o[i - 1], o[i]) + (p.fwd[j] - p.fwd[i]) + (tail ? c(o[j], o[j + 1]) : 0.0);
      const double after = c(o[i - 1], o[j]) + (p.bwd[j] - p.bwd[i]) + (tail ? c(o[i], o[j + 1]) : 0.0);
      if (after < before - kGain) {
        std::reverse(o.begin() + static_cast<std::ptrdiff_t>(i), o.begin() + static_cast<std::ptrdiff_t>(j) + 1);
        return true;
      }
    }
  }
  return false;
}

// Moves a stretch o[i..i+len) between o[q] and o[q+1] (or after the last
// node), optionally reversed.
bool improve_or_opt(const CostMatrix& c, std::vector<int>& o, const Prefix& p) {
  const std::size_t n = o.size();
  for (std::size_t len = 1; len + 1 < n; ++len) {
    for (std::size_t i = 1; i + len <= n; ++i) {
      const std::size_t e = i + len - 1;
      const int prev = o[i - 1], first = o[i], last = o[e];
      const bool has_next = e + 1 < n;
      const double removed = c(prev, first) + (has_next ? c(last, o[e + 1]) - c(prev, o[e + 1]) : 0.0);
      const double flip = (p.bwd[e] - p.bwd[i]) - (p.fwd[e] - p.fwd[i]);
      for (std::size_t q = 0; q < n; ++q) {
        if (q + 1 >= i && q <= e) continue;
        const int a = o[q];
        const bool has_b = q + 1 < n;
        const double ab = has_b ? c(a, o[q + 1]) : 0.0;
        for (int rev = 0; rev < (len > 1 ? 2 : 1); ++rev) {
          const int head = rev ? last : first, foot = rev ? first : last;
          const double added = c(a, head) + (has_b ? c(foot, o[q + 1]) : 0.0) - ab + (rev ? flip : 0.0);
          if (added < removed - kGain) {
            std::vector<int> seg(o.begin() + static_cast<std::ptrdiff_t>(i), o.begin() + static_cast<std::ptrdiff_t>(e) + 1);
            if (rev) std::reverse(seg.begin(), seg.end());
            std::vector<int> out;
            out.reserve(n);
            for (std::size_t k = 0; k < n; ++k) {
              if (k >= i && k <= e) continue;
              out.push_back(o[k]);
              if (k == q) out.insert(out.end(), seg.begin(), seg.end());
            }
            o.swap(out);
            return true;
          }
        }
      }
    }
  }
  return false;
}

void local_search(const CostMatrix& costs, std::vector<int>& order) {
  Prefix p;
  while (true) {
    p.build(costs, order);
    if (improve_two_opt(costs, order, p)) continue;
    if (improve_or_opt(costs, order, p)) continue;
    break;
  }
}

constexpr std::size_t kStarts = 8;
constexpr int kKicks = 64;

// Double bridge on the open path: A B C D -> A D C B, start node fixed.
std::vector<int> double_bridge(const std::vector<int>& o, std::mt19937_64& rng) {
  const std::size_t n = o.size();
  std::uniform_int_distribution<std::size_t> pick(1, n - 1);
  std::size_t cut[3] = {pick(rng), pick(rng), pick(rng)};
  std::sort(cut, cut + 3);
  std::vector<int> out(o.begin(), o.begin() + static_cast<std::ptrdiff_t>(cut[0]));
  out.insert(out.end(), o.begin() + static_cast<std::ptrdiff_t>(cut[2]), o.end());
  out.insert(out.end(), o.begin() + static_cast<std::ptrdiff_t>(cut[1]), o.begin() + static_cast<std::ptrdiff_t>(cut[2]));
  out.insert(out.end(), o.begin() + static_cast<std::ptrdiff_t>(cut[0]), o.begin() + static_cast<std::ptrdiff_t>(cut[1]));
  return out;
}

}  // namespace

std::vector<int> solve_open_atsp_heuristic(const CostMatrix& costs) {
  const std::size_t n = costs.size();
  if (n == 0) return {};
  // Restarts from the cheapest first legs; the first is the plain greedy tour.
  std::vector<int> firsts(n - 1);
  std::iota(firsts.begin(), firsts.end(), 1);
  std::stable_sort(firsts.begin(), firsts.end(), [&](int a, int b) { return costs(0, a) < costs(0, b); });
  firsts.resize(std::min(firsts.size(), kStarts));
  std::vector<int> best;
  double best_cost = std::numeric_limits<double>::infinity();
  for (int f : firsts) {
    std::vector<int> order = nearest_neighbour(costs, f);
    local_search(costs, order);
    const double cost = tour_cost(costs, order);
    if (cost < best_cost - kGain) {
      best_cost = cost;
      best = std::move(order);
    }
  }
  if (best.empty()) return {0};
  // 2-opt and Or-opt stall in poor local optima on asymmetric costs; kick the
  // incumbent and keep improvements. Fixed seed keeps the result repeatable.
  if (n >= 5) {
    std::mt19937_64 rng(0x5eed);
    for (int k = 0; k < kKicks; ++k) {
      std::vector<int> trial = double_bridge(best, rng);
      local_search(costs, trial);
      const double cost = tour_cost(costs, trial);
      if (cost < best_cost - kGain) {
        best_cost = cost;
        best = std::move(trial);
      }
    }
  }
  return best;
}

std::vector<int> solve_open_atsp(const CostMatrix& costs, const AtspOptions& options) {
  for (std::size_t i = 0; i < costs.size(); ++i) {
    if (costs(i, i) != 0.0) throw std::invalid_argument("solve_open_atsp: diagonal must be zero");
  }
  if (costs.size() <= 1) return costs.size() == 1 ? std::vector<int>{0} : std::vector<int>{};
  if (costs.size() - 1 <= options.exact_limit) return solve_open_atsp_exact(costs);
  return solve_open_atsp_heuristic(costs);
}

void write_cost_matrix(std::ostream& out, const CostMatrix& costs) {
  out << std::setprecision(17) << "cost_matrix " << costs.size() << '\n';
  for (std::size_t i = 0; i < costs.size(); ++i) {
    for (std::size_t j = 0; j < costs.size(); ++j) out << (j ? " " : "") << costs(i, j);
    out << '\n';
  }
}

void write_tour(std::ostream& out, std::span<const int> order, double cost) {
  out << std::setprecision(17) << "tour";
  for (int v : order) out << ' ' << v;
  out << "\ncost " << cost << '\n';
}

}  // namespace scanplan
