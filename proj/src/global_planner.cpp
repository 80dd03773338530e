#include "scanplan/global_planner.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <queue>

namespace scanplan {

int TopoGraph::add_node(const Vec3& p) {
  nodes_.push_back(p);
  adj_.emplace_back();
  retired_.push_back(0);
  return static_cast<int>(nodes_.size() - 1);
}

bool TopoGraph::connect(int a, int b) {
  if (a == b || !has_node(a) || !has_node(b) || retired(a) || retired(b)) return false;
  auto& na = adj_[static_cast<std::size_t>(a)];
  const auto it = std::lower_bound(na.begin(), na.end(), b,
                                   [](const TopoEdge& e, int id) { return e.to < id; });
  if (it != na.end() && it->to == b) return false;
  const double len = (node(a) - node(b)).norm();
  na.insert(it, TopoEdge{b, len});
  auto& nb = adj_[static_cast<std::size_t>(b)];
  const auto jt = std::lower_bound(nb.begin(), nb.end(), a,
                                   [](const TopoEdge& e, int id) { return e.to < id; });
  nb.insert(jt, TopoEdge{a, len});
  edges_ += 2;
  return true;
}

namespace {

// Node ids within max_len of p, nearest first (ties by id).
std::vector<int> nodes_near(const std::vector<Vec3>& nodes, const std::vector<std::uint8_t>& retired,
                            const Vec3& p, double max_len, int skip = -1) {
  std::vector<std::pair<double, int>> near;
  const double lim2 = max_len * max_len;
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    if (static_cast<int>(i) == skip || retired[i]) continue;
    const double d2 = (nodes[i] - p).squaredNorm();
    if (d2 <= lim2) near.emplace_back(d2, static_cast<int>(i));
  }
  std::sort(near.begin(), near.end());
  std::vector<int> ids;
  ids.reserve(near.size());
  for (const auto& [d, id] : near) ids.push_back(id);
  return ids;
}

bool has_edge(const std::vector<TopoEdge>& adj, int to) {
  return std::binary_search(adj.begin(), adj.end(), TopoEdge{to, 0.0},
                            [](const TopoEdge& a, const TopoEdge& b) { return a.to < b.to; });
}

}  // namespace

int TopoGraph::attach(int id, const OccupancyGrid& grid, const ClearanceMap& clearance, int k,
                      double max_len, bool free_only) {
  int added = 0;
  if (retired(id)) return 0;
  const Vec3 p = node(id);
  for (int other : nodes_near(nodes_, retired_, p, max_len, id)) {
    if (static_cast<int>(neighbors(id).size()) >= k) break;
    if (has_edge(neighbors(id), other)) continue;
    const bool ok = free_only ? segment_free(grid, p, node(other))
                              : segment_navigable(grid, clearance, p, node(other));
    if (ok && connect(id, other)) ++added;
  }
  return added;
}

bool TopoGraph::can_attach(const Vec3& p, const OccupancyGrid& grid,
                           const ClearanceMap& clearance, double max_len) const {
  for (int other : nodes_near(nodes_, retired_, p, max_len)) {
    if (segment_navigable(grid, clearance, p, node(other))) return true;
  }
  return false;
}

void TopoGraph::retire(int id) {
  auto& mine = adj_.at(static_cast<std::size_t>(id));
  for (const auto& e : mine) {
    auto& other = adj_[static_cast<std::size_t>(e.to)];
    other.erase(std::remove_if(other.begin(), other.end(),
                               [id](const TopoEdge& x) { return x.to == id; }),
                other.end());
  }
  edges_ -= 2 * mine.size();
  mine.clear();
  retired_[static_cast<std::size_t>(id)] = 1;
  if (odom_ == id) odom_ = -1;
}

int TopoGraph::nearest_node(const Vec3& p) const {
  int best = -1;
  double best_d2 = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    if (retired_[i]) continue;
    const double d2 = (nodes_[i] - p).squaredNorm();
    if (d2 < best_d2) {
      best_d2 = d2;
      best = static_cast<int>(i);
    }
  }
  return best;
}

void update_topo_graph(TopoGraph& graph, const OccupancyGrid& grid,
                       const ClearanceMap& clearance, const Vec3& current_pose,
                       const TopoParams& params) {
  const double res = grid.resolution();
  const int block = std::max(1, static_cast<int>(std::lround(params.lattice_spacing / res)));
  const Cell& dims = grid.dims();
  const Cell blocks((dims.x() + block - 1) / block, (dims.y() + block - 1) / block,
                    (dims.z() + block - 1) / block);

  // In-block offsets ordered by distance from the block center.
  std::vector<Cell> offsets;
  for (int z = 0; z < block; ++z)
    for (int y = 0; y < block; ++y)
      for (int x = 0; x < block; ++x) offsets.emplace_back(x, y, z);
  const double mid = (block - 1) / 2.0;
  std::stable_sort(offsets.begin(), offsets.end(), [mid](const Cell& a, const Cell& b) {
    return (a.cast<double>().array() - mid).matrix().squaredNorm() <
           (b.cast<double>().array() - mid).matrix().squaredNorm();
  });

  auto& filled = graph.filled_blocks();
  // Nodes placed next to space that was Unknown can lose their clearance once
  // the obstacle is seen; retire them so the block is filled again.
  for (std::size_t i = 0; i < graph.node_count(); ++i) {
    const int id = static_cast<int>(i);
    if (!graph.retired(id) && !is_navigable(grid, clearance, graph.node(id))) graph.retire(id);
  }
  for (auto it = filled.begin(); it != filled.end();) {
    it = graph.retired(it->second) ? filled.erase(it) : std::next(it);
  }
  for (int bz = 0; bz < blocks.z(); ++bz) {
    for (int by = 0; by < blocks.y(); ++by) {
      for (int bx = 0; bx < blocks.x(); ++bx) {
        const long long key = (static_cast<long long>(bz) * blocks.y() + by) * blocks.x() + bx;
        if (filled.count(key)) continue;
        const Cell base(bx * block, by * block, bz * block);
        for (const auto& o : offsets) {
          const Cell c = base + o;
          if (!grid.in_bounds(c)) continue;
          if (grid.at(c) != CellState::Free || !clearance.is_clear(c)) continue;
          filled.emplace(key, graph.add_node(grid.center_of(c)));
          break;
        }
      }
    }
  }

  // Top up degrees; new free space may have opened connections.
  for (std::size_t i = 0; i < graph.node_count(); ++i) {
    const int id = static_cast<int>(i);
    if (id == graph.odom_node() || graph.retired(id)) continue;
    if (static_cast<int>(graph.neighbors(id).size()) < params.k_neighbors) {
      graph.attach(id, grid, clearance, params.k_neighbors, params.max_edge_length);
    }
  }

  // Bridge components: the degree cap can leave neighbouring groups of nodes
  // unlinked even though a clear segment joins them.
  const std::size_t n = graph.node_count();
  std::vector<int> comp(n, -1);
  int n_comp = 0;
  for (std::size_t s = 0; s < n; ++s) {
    if (comp[s] >= 0 || graph.retired(static_cast<int>(s))) continue;
    std::vector<int> stack{static_cast<int>(s)};
    comp[s] = n_comp;
    while (!stack.empty()) {
      const int u = stack.back();
      stack.pop_back();
      for (const auto& e : graph.neighbors(u)) {
        if (comp[static_cast<std::size_t>(e.to)] < 0) {
          comp[static_cast<std::size_t>(e.to)] = n_comp;
          stack.push_back(e.to);
        }
      }
    }
    ++n_comp;
  }
  if (n_comp > 1) {
    const double lim2 = params.max_edge_length * params.max_edge_length;
    for (std::size_t a = 0; a < n; ++a) {
      if (comp[a] < 0) continue;
      for (std::size_t b = a + 1; b < n; ++b) {
        if (comp[b] < 0 || comp[a] == comp[b]) continue;
        if ((graph.node(static_cast<int>(a)) - graph.node(static_cast<int>(b))).squaredNorm() > lim2) continue;
        if (!segment_navigable(grid, clearance, graph.node(static_cast<int>(a)),
                               graph.node(static_cast<int>(b)))) {
          continue;
        }
        graph.connect(static_cast<int>(a), static_cast<int>(b));
        const int from = comp[b], to = comp[a];
        for (auto& c : comp) {
          if (c == from) c = to;
        }
      }
    }
  }

  int nearest = graph.nearest_node(current_pose);
  const bool need_new =
      nearest < 0 || (graph.node(nearest) - current_pose).norm() > params.odom_snap ||
      graph.neighbors(nearest).empty() || !segment_free(grid, current_pose, graph.node(nearest));
  if (need_new) {
    nearest = graph.add_node(current_pose);
    graph.attach(nearest, grid, clearance, params.k_neighbors, params.max_edge_length, true);
  }
  graph.set_odom_node(nearest);
}

std::optional<GraphPath> shortest_path(const TopoGraph& graph, int from, int to) {
  if (!graph.has_node(from) || !graph.has_node(to)) {
    throw InvalidQuery("shortest_path: unknown node id");
  }
  const std::size_t n = graph.node_count();
  constexpr double inf = std::numeric_limits<double>::infinity();
  std::vector<double> dist(n, inf);
  std::vector<int> prev(n, -1);
  std::vector<char> settled(n, 0);
  using Item = std::pair<double, int>;
  std::priority_queue<Item, std::vector<Item>, std::greater<>> open;
  dist[static_cast<std::size_t>(from)] = 0.0;
  open.emplace(0.0, from);
  while (!open.empty()) {
    const auto [d, u] = open.top();
    open.pop();
    if (settled[static_cast<std::size_t>(u)]) continue;
    settled[static_cast<std::size_t>(u)] = 1;
    if (u == to) break;
    for (const auto& e : graph.neighbors(u)) {
      // Settled nodes keep their predecessor; re-pointing them on a tie can
      // close a cycle through zero-length edges.
      if (settled[static_cast<std::size_t>(e.to)]) continue;
      const double nd = d + e.length;
      auto& cur = dist[static_cast<std::size_t>(e.to)];
      auto& p = prev[static_cast<std::size_t>(e.to)];
      if (nd < cur || (nd == cur && u < p)) {
        cur = nd;
        p = u;
        open.emplace(nd, e.to);
      }
    }
  }
  if (dist[static_cast<std::size_t>(to)] == inf) return std::nullopt;
  GraphPath path;
  path.length = dist[static_cast<std::size_t>(to)];
  for (int v = to; v >= 0; v = (v == from ? -1 : prev[static_cast<std::size_t>(v)])) {
    path.nodes.push_back(v);
  }
  std::reverse(path.nodes.begin(), path.nodes.end());
  for (int v : path.nodes) path.polyline.push_back(graph.node(v));
  return path;
}

double polyline_transition_cost(std::span<const Vec3> polyline, double v_max) {
  double sum = 0.0;
  for (std::size_t l = 0; l + 1 < polyline.size(); ++l) {
    sum += (polyline[l + 1] - polyline[l]).norm() +
           0.5 * std::abs(polyline[l + 1].z() - polyline[l].z());
  }
  return sum / (v_max / 2.0);
}

std::optional<double> transition_cost(const TopoGraph& graph, int i, int j, double v_max) {
  if (!graph.has_node(i) || !graph.has_node(j)) {
    throw InvalidQuery("transition_cost: unknown node id");
  }
  if (i == j) return 0.0;
  const auto path = shortest_path(graph, i, j);
  if (!path) return std::nullopt;
  return polyline_transition_cost(path->polyline, v_max);
}

double heading_penalty(const Vec3& current_velocity, const Vec3& target,
                       const Vec3& current_position, double w_f, double hover_speed) {
  const double speed = current_velocity.norm();
  const Vec3 bearing = target - current_position;
  if (speed < hover_speed || bearing.norm() == 0.0) return 0.0;
  const double c = std::clamp(current_velocity.dot(bearing) / (speed * bearing.norm()), -1.0, 1.0);
  return w_f * std::acos(c);
}

CostMatrixResult build_cost_matrix(const TopoGraph& graph, std::span<const Vec3> viewpoints,
                                   const VehicleState& state, const OccupancyGrid& grid,
                                   const ClearanceMap& clearance, const TourParams& params) {
  const std::size_t m = viewpoints.size();
  CostMatrixResult result{CostMatrix(m + 1, params.big), {}};
  result.paths_from_odom.resize(m);
  for (std::size_t i = 0; i <= m; ++i) {
    result.costs(i, i) = 0.0;
    result.costs(i, 0) = 0.0;
  }
  if (m == 0) return result;

  TopoGraph temp = graph;
  std::vector<int> ids(m + 1, -1);
  ids[0] = graph.odom_node();
  for (std::size_t j = 0; j < m; ++j) {
    const int id = temp.add_node(viewpoints[j]);
    if (is_navigable(grid, clearance, viewpoints[j])) {
      temp.attach(id, grid, clearance, params.attach_k, params.attach_radius);
    }
    ids[j + 1] = id;
  }

  for (std::size_t i = 0; i <= m; ++i) {
    if (!temp.has_node(ids[i])) continue;
    for (std::size_t j = 1; j <= m; ++j) {
      if (i == j) continue;
      const auto path = shortest_path(temp, ids[i], ids[j]);
      if (!path) continue;
      double c = polyline_transition_cost(path->polyline, params.v_max);
      if (i == 0) {
        c += heading_penalty(state.velocity, viewpoints[j - 1], state.position, params.w_f,
                             params.hover_speed);
        result.paths_from_odom[j - 1] = *path;
      }
      result.costs(i, j) = std::min(c, params.big);
    }
  }
  return result;
}

TourPlan plan_global_tour(const TopoGraph& graph, std::span<const DynamicCluster> clusters,
                          const VehicleState& state, const OccupancyGrid& grid,
                          const ClearanceMap& clearance, const TourParams& params) {
  TourPlan plan;
  if (clusters.empty()) {
    plan.status = TourStatus::Complete;
    return plan;
  }
  std::vector<Vec3> viewpoints;
  viewpoints.reserve(clusters.size());
  for (const auto& c : clusters) viewpoints.push_back(c.representative.position);

  auto matrix = build_cost_matrix(graph, viewpoints, state, grid, clearance, params);
  plan.order = solve_open_atsp(matrix.costs, AtspOptions{params.exact_limit});
  plan.costs = std::move(matrix.costs);
  plan.status = TourStatus::Stall;
  for (std::size_t k = 1; k < plan.order.size(); ++k) {
    const int j = plan.order[k];
    const auto& path = matrix.paths_from_odom[static_cast<std::size_t>(j - 1)];
    if (!path) continue;
    plan.status = TourStatus::Ok;
    plan.goal_index = j - 1;
    plan.next_goal = viewpoints[static_cast<std::size_t>(j - 1)];
    if ((state.position - path->polyline.front()).norm() > 1e-9) plan.path.push_back(state.position);
    plan.path.insert(plan.path.end(), path->polyline.begin(), path->polyline.end());
    break;
  }
  return plan;
}

}  // namespace scanplan
