#include "scanplan/frontier.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numbers>
#include <ostream>

#include <Eigen/Eigenvalues>

namespace scanplan {

namespace {

constexpr int kFace[6][3] = {{1, 0, 0}, {-1, 0, 0}, {0, 1, 0}, {0, -1, 0}, {0, 0, 1}, {0, 0, -1}};

bool diameter_exceeds(std::span<const Vec3> pts, double limit) {
  if (pts.size() < 2) return false;
  // Scan from the point farthest from the centroid; far pairs show up early.
  Vec3 mean = Vec3::Zero();
  for (const auto& p : pts) mean += p;
  mean /= static_cast<double>(pts.size());
  std::size_t far = 0;
  for (std::size_t i = 1; i < pts.size(); ++i)
    if ((pts[i] - mean).squaredNorm() > (pts[far] - mean).squaredNorm()) far = i;
  const double lim2 = limit * limit;
  for (std::size_t k = 0; k < pts.size(); ++k) {
    const std::size_t i = (far + k) % pts.size();
    for (std::size_t j = 0; j < pts.size(); ++j)
      if ((pts[i] - pts[j]).squaredNorm() > lim2) return true;
  }
  return false;
}

void split_component(const OccupancyGrid& grid, std::vector<std::size_t> cells, double max_extent,
                     std::vector<std::vector<std::size_t>>& out) {
  std::vector<Vec3> pts;
  pts.reserve(cells.size());
  for (auto c : cells) pts.push_back(grid.center_of(c));
  if (!diameter_exceeds(pts, max_extent)) {
    out.push_back(std::move(cells));
    return;
  }
  Vec3 mean = Vec3::Zero();
  for (const auto& p : pts) mean += p;
  mean /= static_cast<double>(pts.size());
  Mat3 cov = Mat3::Zero();
  for (const auto& p : pts) cov += (p - mean) * (p - mean).transpose();
  Eigen::SelfAdjointEigenSolver<Mat3> eig(cov);
  const Vec3 axis = eig.eigenvectors().col(2);
  std::vector<std::size_t> lo, hi;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    ((pts[i] - mean).dot(axis) < 0.0 ? lo : hi).push_back(cells[i]);
  }
  if (lo.empty() || hi.empty()) {
    const auto half = static_cast<std::ptrdiff_t>(cells.size() / 2);
    lo.assign(cells.begin(), cells.begin() + half);
    hi.assign(cells.begin() + half, cells.end());
  }
  split_component(grid, std::move(lo), max_extent, out);
  split_component(grid, std::move(hi), max_extent, out);
}

FrontierCluster summarize(const OccupancyGrid& grid, std::vector<std::size_t> cells) {
  std::sort(cells.begin(), cells.end());
  FrontierCluster fc;
  fc.cells = std::move(cells);
  fc.intensity = static_cast<double>(fc.cells.size());

  Vec3 center = Vec3::Zero();
  for (auto c : fc.cells) center += grid.center_of(c);
  center /= static_cast<double>(fc.cells.size());
  fc.center = center;

  // Offset toward the adjacent free side; falls back to "away from unknown".
  Vec3 free_sum = Vec3::Zero(), unknown_sum = Vec3::Zero();
  std::size_t n_free = 0, n_unknown = 0;
  for (auto flat : fc.cells) {
    const Cell c = grid.unflatten(flat);
    for (const auto& o : kFace) {
      const Cell nb(c.x() + o[0], c.y() + o[1], c.z() + o[2]);
      if (!grid.in_bounds(nb)) continue;
      const CellState s = grid.at(nb);
      if (s == CellState::Free && !std::binary_search(fc.cells.begin(), fc.cells.end(), grid.flatten(nb))) {
        free_sum += grid.center_of(nb);
        ++n_free;
      } else if (s == CellState::Unknown) {
        unknown_sum += grid.center_of(nb);
        ++n_unknown;
      }
    }
  }
  Vec3 offset = Vec3::Zero();
  if (n_free > 0) {
    offset = free_sum / static_cast<double>(n_free) - center;
  } else if (n_unknown > 0) {
    offset = center - unknown_sum / static_cast<double>(n_unknown);
  }

  Mat3 cov = Mat3::Zero();
  for (auto c : fc.cells) {
    const Vec3 d = grid.center_of(c) - center;
    cov += d * d.transpose();
  }
  Eigen::SelfAdjointEigenSolver<Mat3> eig(cov);
  const double scale = std::max(eig.eigenvalues()(2), 1e-300);
  const bool degenerate = fc.cells.size() < 3 || eig.eigenvalues()(1) <= 1e-12 * scale;

  Vec3 normal;
  if (degenerate) {
    normal = offset.norm() > 1e-12 ? Vec3(offset.normalized()) : Vec3(Vec3::UnitZ());
  } else {
    normal = eig.eigenvectors().col(0).normalized();
    const double side = normal.dot(offset);
    if (std::abs(side) <= 1e-12) {
      if (normal.z() < 0.0) normal = -normal;
    } else if (side < 0.0) {
      normal = -normal;
    }
  }
  fc.normal = normal;
  return fc;
}

Vec3 any_perpendicular(const Vec3& n) {
  const Vec3 ref = std::abs(n.z()) < 0.9 ? Vec3::UnitZ() : Vec3::UnitX();
  return n.cross(ref).normalized();
}

bool lex_less(const Vec3& a, const Vec3& b) {
  if (a.x() != b.x()) return a.x() < b.x();
  if (a.y() != b.y()) return a.y() < b.y();
  return a.z() < b.z();
}

void choose_representative(DynamicCluster& dyn, std::span<const Vec3> pool) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < dyn.shared_region.size(); ++i) {
    const double a = dyn.summed_visibility[i];
    const double b = dyn.summed_visibility[best];
    if (a > b || (a == b && lex_less(pool[dyn.shared_region[i]], pool[dyn.shared_region[best]]))) {
      best = i;
    }
  }
  dyn.representative.position = pool[dyn.shared_region[best]];
  dyn.representative.visibility =
      dyn.summed_visibility[best] / static_cast<double>(dyn.members.size());
}

}  // namespace

std::vector<FrontierCluster> cluster_frontiers(std::span<const std::size_t> cells,
                                               const OccupancyGrid& grid,
                                               const ClusteringParams& params) {
  std::vector<FrontierCluster> result;
  if (cells.empty()) return result;

  std::vector<std::size_t> sorted(cells.begin(), cells.end());
  std::sort(sorted.begin(), sorted.end());
  sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());

  std::vector<int> slot(grid.size(), -1);
  for (std::size_t i = 0; i < sorted.size(); ++i) slot[sorted[i]] = static_cast<int>(i);

  const double r_cells = params.link_radius / grid.resolution();
  const int r = static_cast<int>(std::floor(r_cells + 1e-9));
  std::vector<Cell> offsets;
  for (int z = -r; z <= r; ++z)
    for (int y = -r; y <= r; ++y)
      for (int x = -r; x <= r; ++x)
        if ((x || y || z) && std::sqrt(double(x * x + y * y + z * z)) <= r_cells + 1e-9)
          offsets.emplace_back(x, y, z);

  std::vector<std::vector<std::size_t>> parts;
  std::vector<char> seen(sorted.size(), 0);
  std::vector<std::size_t> stack;
  for (std::size_t seed = 0; seed < sorted.size(); ++seed) {
    if (seen[seed]) continue;
    std::vector<std::size_t> component;
    seen[seed] = 1;
    stack.push_back(seed);
    while (!stack.empty()) {
      const std::size_t i = stack.back();
      stack.pop_back();
      component.push_back(sorted[i]);
      const Cell c = grid.unflatten(sorted[i]);
      for (const auto& o : offsets) {
        const Cell n = c + o;
        if (!grid.in_bounds(n)) continue;
        const int j = slot[grid.flatten(n)];
        if (j >= 0 && !seen[j]) {
          seen[j] = 1;
          stack.push_back(static_cast<std::size_t>(j));
        }
      }
    }
    std::sort(component.begin(), component.end());
    split_component(grid, std::move(component), params.max_extent, parts);
  }

  for (auto& part : parts) {
    if (part.size() < std::max<std::size_t>(params.min_cells, 1)) continue;
    result.push_back(summarize(grid, std::move(part)));
  }
  std::sort(result.begin(), result.end(),
            [](const FrontierCluster& a, const FrontierCluster& b) { return a.cells.front() < b.cells.front(); });
  for (std::size_t i = 0; i < result.size(); ++i) result[i].id = static_cast<int>(i);
  return result;
}

std::vector<Vec3> sample_viewpoints(const FrontierCluster& cluster, const OccupancyGrid& grid,
                                    const ClearanceMap& clearance,
                                    const ViewpointSampling& sampling,
                                    const ReachabilityTest& reachable) {
  std::vector<Vec3> out;
  const Vec3 n = cluster.normal.normalized();
  const Vec3 t1 = any_perpendicular(n);
  const Vec3 t2 = n.cross(t1);
  const int shells = std::max(sampling.n_shells, 1);
  for (int s = 0; s < shells; ++s) {
    const double radius =
        shells == 1 ? sampling.r_min
                    : sampling.r_min + (sampling.r_max - sampling.r_min) * s / (shells - 1);
    for (int e = 0; e < sampling.n_el; ++e) {
      const double el = (e + 0.5) / sampling.n_el * (std::numbers::pi / 2.0);
      for (int a = 0; a < sampling.n_az; ++a) {
        const double az = 2.0 * std::numbers::pi * a / sampling.n_az;
        const Vec3 dir = std::cos(el) * (std::cos(az) * t1 + std::sin(az) * t2) + std::sin(el) * n;
        const Vec3 v = cluster.center + radius * dir;
        if ((v - cluster.center).dot(n) < 0.0) continue;
        if (!grid.contains(v) || !is_navigable(grid, clearance, v)) continue;
        if (reachable && !reachable(v)) continue;
        out.push_back(v);
      }
    }
  }
  return out;
}

double visibility_ratio(const Vec3& v, const FrontierCluster& cluster, const OccupancyGrid& grid,
                        const VisibilityParams& params) {
  const std::size_t n = cluster.cells.size();
  if (n == 0) return 0.0;
  const std::size_t stride =
      params.max_samples > 0 && n > params.max_samples ? (n + params.max_samples - 1) / params.max_samples : 1;
  const double sin_max = std::sin(std::min(params.max_elevation, std::numbers::pi / 2.0));
  std::size_t visible = 0, evaluated = 0;
  for (std::size_t i = 0; i < n; i += stride) {
    ++evaluated;
    const Cell c = grid.unflatten(cluster.cells[i]);
    const Vec3 d = grid.center_of(c) - v;
    const double len = d.norm();
    if (len > 0.0 && std::abs(d.z()) / len > sin_max + 1e-12) continue;
    if (line_of_sight(grid, v, c, params.max_range)) ++visible;
  }
  return static_cast<double>(visible) / static_cast<double>(evaluated);
}

VisibleRegion visible_region(const FrontierCluster& cluster, std::span<const Vec3> candidates,
                             const OccupancyGrid& grid, double r0,
                             const VisibilityParams& params) {
  VisibleRegion region;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    const double r = visibility_ratio(candidates[i], cluster, grid, params);
    if (r >= r0) {
      region.candidates.push_back(static_cast<int>(i));
      region.ratios.push_back(r);
    }
  }
  return region;
}

double spatial_extent(std::span<const Vec3> points) {
  double best = 0.0;
  for (std::size_t i = 0; i < points.size(); ++i)
    for (std::size_t j = i + 1; j < points.size(); ++j)
      best = std::max(best, (points[i] - points[j]).norm());
  return best;
}

std::optional<double> merge_cost(const DynamicCluster& dyn, const Vec3& fc_center,
                                 std::span<const int> region, const MergeWeights& weights) {
  std::size_t q = 0;
  auto a = dyn.shared_region.begin();
  auto b = region.begin();
  while (a != dyn.shared_region.end() && b != region.end()) {
    if (*a < *b) {
      ++a;
    } else if (*b < *a) {
      ++b;
    } else {
      ++q;
      ++a;
      ++b;
    }
  }
  if (q == 0) return std::nullopt;
  std::vector<Vec3> grown = dyn.member_centers;
  grown.push_back(fc_center);
  const double delta = spatial_extent(grown) - dyn.extent;
  return weights.alpha_m * delta - weights.beta_m * static_cast<double>(q);
}

void update_dynamic_clusters(std::vector<DynamicCluster>& state,
                             std::span<const ObservedCluster> observed,
                             std::span<const Vec3> pool, const MergeWeights& weights) {
  for (const auto& obs : observed) {
    if (obs.cluster == nullptr || obs.region.candidates.empty()) continue;
    const FrontierCluster& fc = *obs.cluster;

    std::optional<std::size_t> best;
    double best_cost = 0.0;
    for (std::size_t d = 0; d < state.size(); ++d) {
      const auto cost = merge_cost(state[d], fc.center, obs.region.candidates, weights);
      if (cost && (!best || *cost < best_cost)) {
        best = d;
        best_cost = *cost;
      }
    }

    if (!best) {
      DynamicCluster dyn;
      dyn.members = {fc.id};
      dyn.member_centers = {fc.center};
      dyn.shared_region = obs.region.candidates;
      dyn.summed_visibility = obs.region.ratios;
      dyn.extent = 0.0;
      choose_representative(dyn, pool);
      state.push_back(std::move(dyn));
      continue;
    }

    DynamicCluster& dyn = state[*best];
    std::vector<int> region;
    std::vector<double> summed;
    std::size_t i = 0, j = 0;
    const auto& cand = obs.region.candidates;
    while (i < dyn.shared_region.size() && j < cand.size()) {
      if (dyn.shared_region[i] < cand[j]) {
        ++i;
      } else if (cand[j] < dyn.shared_region[i]) {
        ++j;
      } else {
        region.push_back(cand[j]);
        summed.push_back(dyn.summed_visibility[i] + obs.region.ratios[j]);
        ++i;
        ++j;
      }
    }
    dyn.members.push_back(fc.id);
    dyn.member_centers.push_back(fc.center);
    dyn.shared_region = std::move(region);
    dyn.summed_visibility = std::move(summed);
    dyn.extent = spatial_extent(dyn.member_centers);
    choose_representative(dyn, pool);
  }
}

namespace {
void put_vec(std::ostream& out, const Vec3& v) { out << v.x() << ' ' << v.y() << ' ' << v.z(); }
}  // namespace

void write_clusters(std::ostream& out, std::span<const FrontierCluster> clusters) {
  out << std::setprecision(17);
  for (const auto& c : clusters) {
    out << "cluster " << c.id << "\n  center ";
    put_vec(out, c.center);
    out << "\n  normal ";
    put_vec(out, c.normal);
    out << "\n  intensity " << c.intensity << "\n  cells";
    for (auto cell : c.cells) out << ' ' << cell;
    out << '\n';
  }
}

void write_dynamic_clusters(std::ostream& out, std::span<const DynamicCluster> clusters) {
  out << std::setprecision(17);
  for (std::size_t i = 0; i < clusters.size(); ++i) {
    const auto& d = clusters[i];
    out << "dynamic_cluster " << i << "\n  members";
    for (auto m : d.members) out << ' ' << m;
    out << "\n  extent " << d.extent << "\n  representative ";
    put_vec(out, d.representative.position);
    out << "\n  visibility " << d.representative.visibility << "\n  shared_region";
    for (auto r : d.shared_region) out << ' ' << r;
    out << '\n';
  }
}

}  // namespace scanplan
