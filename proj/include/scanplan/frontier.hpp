#pragma once

#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <vector>

#include "scanplan/world_model.hpp"

namespace scanplan {

struct FrontierCluster {
  int id = 0;
  std::vector<std::size_t> cells;  // flat indices, ascending
  Vec3 center = Vec3::Zero();
  Vec3 normal = Vec3::UnitZ();
  double intensity = 0.0;  // number of member cells
};

struct ClusteringParams {
  double link_radius = 0.6;
  double max_extent = 5.0;
  /// Components smaller than this are dropped (0 keeps everything).
  std::size_t min_cells = 0;
};

/// Groups frontier cells by Euclidean linkage, bisecting components whose
/// diameter exceeds max_extent. Ids are assigned 0..n-1 in order of each
/// cluster's smallest member index.
std::vector<FrontierCluster> cluster_frontiers(std::span<const std::size_t> cells,
                                               const OccupancyGrid& grid,
                                               const ClusteringParams& params);

struct Viewpoint {
  Vec3 position = Vec3::Zero();
  double visibility = 0.0;
};

struct ViewpointSampling {
  double r_min = 1.5;
  double r_max = 3.0;
  int n_shells = 2;
  int n_az = 12;
  int n_el = 3;
};

using ReachabilityTest = std::function<bool(const Vec3&)>;

/// Candidates on spherical shells in the hemisphere (v - c).n >= 0 that are in
/// bounds, navigable (Free and clear) and accepted by `reachable`.
std::vector<Vec3> sample_viewpoints(const FrontierCluster& cluster, const OccupancyGrid& grid,
                                    const ClearanceMap& clearance,
                                    const ViewpointSampling& sampling,
                                    const ReachabilityTest& reachable = {});

struct VisibilityParams {
  double max_range = 20.0;
  /// Cells whose elevation seen from the viewpoint exceeds this are not
  /// visible (the sensor's vertical fan). pi/2 disables the gate.
  double max_elevation = 1.5707963267948966;
  /// Evaluate at most this many member cells, evenly strided (0 = all).
  std::size_t max_samples = 0;
};

/// Fraction of the cluster's cells with an unobstructed line of sight from v.
double visibility_ratio(const Vec3& v, const FrontierCluster& cluster,
                        const OccupancyGrid& grid, const VisibilityParams& params = {});

/// Candidate indices (ascending) whose visibility ratio is at least r0, with
/// the matching ratios.
struct VisibleRegion {
  std::vector<int> candidates;
  std::vector<double> ratios;
};

VisibleRegion visible_region(const FrontierCluster& cluster, std::span<const Vec3> candidates,
                             const OccupancyGrid& grid, double r0,
                             const VisibilityParams& params = {});

struct DynamicCluster {
  std::vector<int> members;  // frontier cluster ids
  std::vector<Vec3> member_centers;
  std::vector<int> shared_region;        // candidate ids, ascending
  std::vector<double> summed_visibility;  // parallel to shared_region
  double extent = 0.0;
  Viewpoint representative;
};

struct MergeWeights {
  double alpha_m = 1.0;
  double beta_m = 0.2;
};

/// Largest pairwise distance between points.
double spatial_extent(std::span<const Vec3> points);

/// alpha_m * (growth of extent) - beta_m * |R n shared|, or nullopt when the
/// regions are disjoint.
std::optional<double> merge_cost(const DynamicCluster& dyn, const Vec3& fc_center,
                                 std::span<const int> region, const MergeWeights& weights);

struct ObservedCluster {
  const FrontierCluster* cluster = nullptr;
  VisibleRegion region;
};

/// Greedy merge of each observed cluster into the cheapest feasible dynamic
/// cluster; spawns a new one otherwise. Clusters with an empty region are
/// skipped. `pool` maps candidate ids to positions.
void update_dynamic_clusters(std::vector<DynamicCluster>& state,
                             std::span<const ObservedCluster> observed,
                             std::span<const Vec3> pool, const MergeWeights& weights);

void write_clusters(std::ostream& out, std::span<const FrontierCluster> clusters);
void write_dynamic_clusters(std::ostream& out, std::span<const DynamicCluster> clusters);

}  // namespace scanplan
