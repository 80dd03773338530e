#pragma once

#include <cstdint>
#include <future>
#include <iosfwd>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "scanplan/frontier.hpp"
#include "scanplan/global_planner.hpp"
#include "scanplan/scan_controller.hpp"
#include "scanplan/trajectory.hpp"
#include "scanplan/world_model.hpp"

namespace scanplan {

// ---------------------------------------------------------------------------
// Scenes

enum class SceneKind { Corridor, MultiRoom, Cavern };

SceneKind parse_scene_kind(const std::string& name);
std::string scene_kind_name(SceneKind kind);

struct SceneSpec {
  SceneKind kind = SceneKind::Corridor;
  Vec3 size{40.0, 10.0, 5.0};
  double resolution = 0.2;
  std::uint64_t seed = 1;
  /// Builds multi_room without door gaps; generation must then fail.
  bool seal_doors = false;
};

struct Scene {
  OccupancyGrid truth;  // Free / Occupied only
  std::string name;
  Vec3 spawn = Vec3::Zero();
  std::size_t explorable = 0;  // Free cells, all in one connected region
};

/// Throws InvalidQuery when the size cannot hold the layout or the Free space
/// ends up split into more than one sizeable region.
Scene generate_scene(const SceneSpec& spec);

/// FNV-1a over the serialized grid.
std::uint64_t layout_hash(const OccupancyGrid& grid);

/// Free cells 6-connected to `seed`.
std::vector<std::uint8_t> flood_fill_free(const OccupancyGrid& grid, const Cell& seed,
                                          std::size_t* reached = nullptr);

// ---------------------------------------------------------------------------
// Sensor

struct SensorParams {
  int n_beams = 64;  // vertical channels
  int n_columns = 32;  // horizontal columns across the field of view
  double fan_half_angle = 0.6108652381980153;  // 35 deg
  double fov = 1.2217304763960306;             // 70 deg horizontal
  double max_range = 20.0;
  double sigma_r = 0.01;
  double rate = 10.0;  // Hz
};

/// Casts the beam pattern around the scan direction of `pose` (pose.theta is
/// the motor angle). Hits are returned just inside the struck voxel.
std::vector<Beam> simulate_lidar(const OccupancyGrid& truth, const SensorPoseChain& pose,
                                 const SensorParams& params, std::mt19937_64& rng);

/// Lidar origin in the world frame.
Vec3 sensor_origin(const SensorPoseChain& pose);

// ---------------------------------------------------------------------------
// Episode configuration

struct ControllerChoice {
  bool fu_mpc = true;
  double fixed_omega = 0.0;  // rad/s, used when !fu_mpc

  static ControllerChoice parse(const std::string& text);  // "fu_mpc" or "fixed:<deg/s>"
  std::string name() const;
};

struct TableParams {
  int n_c = 36;
  double half_window = 0.6108652381980153;  // half the horizontal FoV
  double epsilon = 1e-3;
  double radius = 10.0;  // surface points used around the sensor
  int normal_k = 8;
  double period = 0.5;  // s
};

struct FrontierParams {
  ClusteringParams clustering{0.6, 5.0, 5};
  ViewpointSampling sampling;
  double r0 = 0.3;
  MergeWeights merge;
  double safety_clearance = 0.6;
  std::size_t max_samples = 16;
};

struct SimConfig {
  SceneSpec scene;
  double v_max = 3.0;
  double a_max = 2.0;
  SensorParams sensor;
  ControllerChoice controller;
  MpcWeights weights;
  MpcOptions mpc;
  TableParams table;
  FrontierParams frontier;
  TopoParams topo;
  TourParams tour;
  std::uint64_t seed = 1;
  double dt_sim = 0.01;
  double control_dt = 0.1;
  double replan_period = 1.0;
  double time_limit = 300.0;
  double completion = 0.95;
  double kappa_loc = 0.02;  // m
  /// Hover time at a reached goal before its frontier cells are dropped.
  double give_up_time = 15.0;
  /// Time spent without any reachable goal before the episode ends.
  double stall_timeout = 10.0;
  /// When false the vehicle holds the spawn pose and never plans.
  bool explore = true;

  /// Throws InvalidQuery on inconsistent values.
  void validate() const;
};

// ---------------------------------------------------------------------------
// Metrics

struct CycleRecord {
  double t = 0.0;
  double theta = 0.0;
  double omega = 0.0;
  double omega_cmd = 0.0;
  double objective = 0.0;
  double j_sum = 0.0;
  double f_sum = 0.0;
  double coverage = 0.0;
  double trajectory = 0.0;
  double pose_error = 0.0;
};

struct EpisodeMetrics {
  std::string controller;
  std::uint64_t seed = 0;
  std::vector<CycleRecord> cycles;
  std::vector<double> solve_times;  // s, wall clock; kept out of the metrics files
  bool completed = false;
  double completion_time = 0.0;
  double end_time = 0.0;
  double trajectory_length = 0.0;
  double coverage_final = 0.0;
  double ape_proxy_rmse = 0.0;
  double ape_proxy_mean = 0.0;
  bool failed = false;
  std::string end_reason;
  std::size_t solves = 0;
  std::size_t contract_violations = 0;
  std::size_t soundness_mismatches = 0;
  bool coverage_monotone = true;
};

void write_metrics_csv(std::ostream& out, const EpisodeMetrics& m);
void write_summary_json(std::ostream& out, const EpisodeMetrics& m);
void write_timing_csv(std::ostream& out, const EpisodeMetrics& m);

// ---------------------------------------------------------------------------
// Closed loop

/// One deterministic episode. step() advances by dt_sim.
class Episode {
 public:
  explicit Episode(const SimConfig& config);
  Episode(const SimConfig& config, Scene scene);
  Episode(const Episode&) = delete;
  Episode& operator=(const Episode&) = delete;
  ~Episode();

  /// Returns false once the episode has ended.
  bool step();
  bool done() const { return done_; }
  /// Steps until done; finalizes and returns the metrics.
  EpisodeMetrics run();
  EpisodeMetrics finish();

  double time() const { return static_cast<double>(tick_) * config_.dt_sim; }
  const ScanState& scan_state() const { return scan_; }
  const Vec3& position() const { return position_; }
  double coverage() const;
  const OccupancyGrid& belief() const { return belief_; }
  const Scene& scene() const { return scene_; }
  const EpisodeMetrics& metrics() const { return metrics_; }
  const ReferenceTrajectory& reference() const { return reference_; }
  bool has_goal() const { return has_goal_; }
  const Vec3& goal() const { return goal_; }
  std::span<const FrontierCluster> frontier_clusters() const { return clusters_; }
  std::span<const DynamicCluster> dynamic_clusters() const { return dynamic_; }
  const TopoGraph& graph() const { return graph_; }
  /// Cells believed Free that are Occupied in the scene.
  std::size_t soundness_mismatches() const;

 private:
  void fire_sensor();
  void refresh_table();
  void replan();
  void control_cycle();
  void end(bool completed, const std::string& reason);
  std::vector<ClusterSummary> cluster_summaries() const;

  SimConfig config_;
  Scene scene_;
  OccupancyGrid belief_;
  ClearanceMap clearance_;
  TopoGraph graph_;
  std::mt19937_64 lidar_rng_;
  std::mt19937_64 pose_rng_;
  std::normal_distribution<double> unit_normal_{0.0, 1.0};

  std::int64_t tick_ = 0;
  int control_every_ = 10;
  int sensor_every_ = 10;
  int replan_every_ = 100;
  int table_every_ = 50;

  ScanState scan_;
  double omega_cmd_ = 0.0;
  double theta_anchor_ = 0.0;
  std::int64_t anchor_tick_ = 0;
  ControlSequence warm_;

  Vec3 position_ = Vec3::Zero();
  Vec3 velocity_ = Vec3::Zero();
  ReferenceTrajectory reference_;
  bool has_goal_ = false;
  Vec3 goal_ = Vec3::Zero();
  std::vector<std::size_t> goal_cells_;
  bool was_arrived_ = false;
  Vec3 hover_anchor_ = Vec3::Zero();
  double hover_since_ = 0.0;
  double stall_since_ = -1.0;

  std::vector<std::size_t> occupied_cells_;
  std::vector<std::uint8_t> ignored_;
  std::vector<FrontierCluster> clusters_;
  std::vector<DynamicCluster> dynamic_;

  TableChannel channel_;
  std::future<std::shared_ptr<const UncertaintyTable>> pending_;
  std::shared_ptr<const UncertaintyTable> fallback_table_;

  std::size_t known_explorable_ = 0;
  double last_coverage_ = 0.0;
  double pose_sq_sum_ = 0.0;
  double pose_sum_ = 0.0;
  std::size_t pose_samples_ = 0;
  EpisodeMetrics metrics_;
  bool done_ = false;
  bool finished_ = false;
};

EpisodeMetrics run_episode(const SimConfig& config);

/// Surface points (belief Occupied cells within `radius`) with K-neighbour
/// normals taken from the grid neighbourhood.
std::vector<SurfacePoint> surface_points(const OccupancyGrid& grid,
                                         std::span<const std::size_t> occupied,
                                         const Vec3& sensor, double radius, int k);

}  // namespace scanplan
