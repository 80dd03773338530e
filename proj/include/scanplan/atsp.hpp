#pragma once

#include <iosfwd>
#include <span>
#include <vector>

namespace scanplan {

/// Dense square cost matrix; node 0 is the start of an open tour.
class CostMatrix {
 public:
  static constexpr double kUnreachable = 1e6;

  CostMatrix() = default;
  explicit CostMatrix(std::size_t n, double fill = 0.0) : n_(n), data_(n * n, fill) {}

  std::size_t size() const { return n_; }
  double operator()(std::size_t i, std::size_t j) const { return data_[i * n_ + j]; }
  double& operator()(std::size_t i, std::size_t j) { return data_[i * n_ + j]; }

 private:
  std::size_t n_ = 0;
  std::vector<double> data_;
};

/// Sum of d(order[k], order[k+1]).
double tour_cost(const CostMatrix& costs, std::span<const int> order);

/// Exact open-path optimum starting at node 0 (Held-Karp DP). Practical up
/// to about 16 nodes.
std::vector<int> solve_open_atsp_exact(const CostMatrix& costs);

/// Nearest-neighbour construction followed by first-improvement 2-opt and
/// Or-opt passes until no move improves the tour. Repeated from the few
/// cheapest first legs, then refined by a fixed number of seeded
/// double-bridge kicks.
std::vector<int> solve_open_atsp_heuristic(const CostMatrix& costs);

struct AtspOptions {
  /// Use the exact solver when the number of targets (size - 1) is at most this.
  std::size_t exact_limit = 10;
};

/// Visiting order (0, pi_1, ..., pi_M).
std::vector<int> solve_open_atsp(const CostMatrix& costs, const AtspOptions& options = {});

void write_cost_matrix(std::ostream& out, const CostMatrix& costs);
void write_tour(std::ostream& out, std::span<const int> order, double cost);

}  // namespace scanplan
