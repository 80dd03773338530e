#pragma once

#include <iosfwd>
#include <optional>
#include <span>
#include <unordered_map>
#include <vector>

#include "scanplan/atsp.hpp"
#include "scanplan/frontier.hpp"
#include "scanplan/world_model.hpp"

namespace scanplan {

struct TopoParams {
  double lattice_spacing = 2.0;
  int k_neighbors = 6;
  double max_edge_length = 3.5;
  /// The odom node is re-anchored at the current pose beyond this distance.
  double odom_snap = 1.0;
};

struct TopoEdge {
  int to = 0;
  double length = 0.0;
};

/// Sparse roadmap over known free space. Edges are straight segments whose
/// voxels were Free and clear when inserted.
class TopoGraph {
 public:
  int add_node(const Vec3& p);
  /// Adds the undirected edge a-b. Returns false if it already exists.
  bool connect(int a, int b);
  /// Connects node id to up to k nearest nodes within max_len over navigable
  /// segments. With free_only, segments only need to be Free (used for the
  /// odom node, which may sit inside an obstacle's clearance band).
  int attach(int id, const OccupancyGrid& grid, const ClearanceMap& clearance, int k,
             double max_len, bool free_only = false);
  /// Some node within max_len is connectable to p.
  bool can_attach(const Vec3& p, const OccupancyGrid& grid, const ClearanceMap& clearance,
                  double max_len) const;

  std::size_t node_count() const { return nodes_.size(); }
  std::size_t edge_count() const { return edges_ / 2; }
  const Vec3& node(int id) const { return nodes_.at(static_cast<std::size_t>(id)); }
  const std::vector<Vec3>& nodes() const { return nodes_; }
  const std::vector<TopoEdge>& neighbors(int id) const { return adj_.at(static_cast<std::size_t>(id)); }
  bool has_node(int id) const { return id >= 0 && static_cast<std::size_t>(id) < nodes_.size(); }
  /// Nearest node that has not been retired.
  int nearest_node(const Vec3& p) const;
  /// Drops every edge of `id` and excludes it from nearest-node queries and
  /// future attachment. Used when map updates leave a node without clearance.
  void retire(int id);
  bool retired(int id) const { return retired_.at(static_cast<std::size_t>(id)) != 0; }

  int odom_node() const { return odom_; }
  void set_odom_node(int id) { odom_ = id; }

  /// Lattice block key -> node representing it.
  std::unordered_map<long long, int>& filled_blocks() { return filled_blocks_; }

 private:
  std::vector<Vec3> nodes_;
  std::vector<std::vector<TopoEdge>> adj_;
  std::size_t edges_ = 0;
  int odom_ = -1;
  std::vector<std::uint8_t> retired_;
  std::unordered_map<long long, int> filled_blocks_;
};

/// Adds lattice nodes in newly navigable space, tops up node degrees and
/// moves the odom node to the current pose.
void update_topo_graph(TopoGraph& graph, const OccupancyGrid& grid,
                       const ClearanceMap& clearance, const Vec3& current_pose,
                       const TopoParams& params = {});

struct GraphPath {
  std::vector<int> nodes;
  std::vector<Vec3> polyline;
  double length = 0.0;
};

/// Dijkstra over edge lengths; ties broken toward smaller node ids.
std::optional<GraphPath> shortest_path(const TopoGraph& graph, int from, int to);

/// Travel-time cost of a polyline: sum of segment length plus half the
/// altitude change, divided by v_max / 2.
double polyline_transition_cost(std::span<const Vec3> polyline, double v_max);

/// Cost of the shortest topological path from i to j, nullopt if
/// unreachable. Throws InvalidQuery for unknown node ids.
std::optional<double> transition_cost(const TopoGraph& graph, int i, int j, double v_max);

/// w_f times the angle between the current velocity and the bearing to the
/// target; zero while hovering.
double heading_penalty(const Vec3& current_velocity, const Vec3& target,
                       const Vec3& current_position, double w_f, double hover_speed = 0.05);

struct VehicleState {
  Vec3 position = Vec3::Zero();
  Vec3 velocity = Vec3::Zero();
};

struct TourParams {
  double v_max = 3.0;
  double w_f = 2.0;
  double big = CostMatrix::kUnreachable;
  double hover_speed = 0.05;
  std::size_t exact_limit = 10;
  int attach_k = 6;
  double attach_radius = 3.5;
};

struct CostMatrixResult {
  CostMatrix costs;
  /// Path from the odom node to each viewpoint (index j-1), if reachable.
  std::vector<std::optional<GraphPath>> paths_from_odom;
};

/// Inserts the viewpoints into a copy of the graph and assembles the open-tour
/// matrix: row 0 from the odom node (plus heading penalty), column 0 zero,
/// unreachable entries set to params.big.
CostMatrixResult build_cost_matrix(const TopoGraph& graph, std::span<const Vec3> viewpoints,
                                   const VehicleState& state, const OccupancyGrid& grid,
                                   const ClearanceMap& clearance, const TourParams& params = {});

enum class TourStatus { Ok, Stall, Complete };

struct TourPlan {
  TourStatus status = TourStatus::Complete;
  int goal_index = -1;  // index into the viewpoint list
  Vec3 next_goal = Vec3::Zero();
  std::vector<int> order;
  std::vector<Vec3> path;  // current position .. next_goal
  CostMatrix costs;
};

TourPlan plan_global_tour(const TopoGraph& graph, std::span<const DynamicCluster> clusters,
                          const VehicleState& state, const OccupancyGrid& grid,
                          const ClearanceMap& clearance, const TourParams& params = {});

}  // namespace scanplan
