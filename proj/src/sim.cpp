#include "scanplan/sim.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <ostream>

#include <nlohmann/json.hpp>

namespace scanplan {

namespace {

constexpr double kDeg = std::numbers::pi / 180.0;

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

// A noiseless beam is kept only when the traversal that integration will run
// (origin to endpoint) crosses no Occupied voxel before its end voxel. Rays
// grazing a voxel edge can otherwise slip between two Occupied voxels.
bool consistent(const OccupancyGrid& truth, const Vec3& o, const Beam& b) {
  const Cell end = truth.cell_of(b.end);
  bool ok = true;
  traverse_segment(truth, o, b.end, [&](const Cell& c) {
    if (c == end) return false;
    if (truth.at(c) == CellState::Occupied) {
      ok = false;
      return false;
    }
    return true;
  });
  return ok;
}

int ticks_per(double period, double dt) {
  return std::max(1, static_cast<int>(std::lround(period / dt)));
}

}  // namespace

// ---------------------------------------------------------------------------
// Sensor

Vec3 sensor_origin(const SensorPoseChain& pose) { return compose_sensor_pose(pose, Vec3::Zero()); }

std::vector<Beam> simulate_lidar(const OccupancyGrid& truth, const SensorPoseChain& pose,
                                 const SensorParams& params, std::mt19937_64& rng) {
  const Vec3 o = sensor_origin(pose);
  const Mat3 R = pose.R_B_W * pose.R_MB_B * motor_rotation(pose.theta) * pose.R_L_M;
  std::normal_distribution<double> noise(0.0, 1.0);
  std::vector<Beam> beams;
  beams.reserve(static_cast<std::size_t>(params.n_beams * params.n_columns));
  for (int i = 0; i < params.n_beams; ++i) {
    const double phi = params.n_beams == 1
                           ? 0.0
                           : -params.fan_half_angle + 2.0 * params.fan_half_angle * i / (params.n_beams - 1);
    for (int j = 0; j < params.n_columns; ++j) {
      const double psi =
          params.n_columns == 1 ? 0.0 : -params.fov / 2.0 + params.fov * j / (params.n_columns - 1);
      const Vec3 d = (R * Vec3(std::cos(phi) * std::cos(psi), std::cos(phi) * std::sin(psi),
                               std::sin(phi)))
                         .normalized();
      const double n = noise(rng);  // drawn for every beam to keep the stream aligned
      const auto hit = cast_ray(truth, o, d, params.max_range);
      Beam b;
      b.end = o + d * params.max_range;
      if (hit) {
        const double range = std::max(0.0, hit->entry_distance + params.sigma_r * n);
        if (range <= params.max_range) {
          b.end = o + d * (range + 1e-4);
          b.hit = true;
        }
      }
      if (params.sigma_r == 0.0 && !consistent(truth, o, b)) continue;
      beams.push_back(b);
    }
  }
  return beams;
}

std::vector<SurfacePoint> surface_points(const OccupancyGrid& grid,
                                         std::span<const std::size_t> occupied,
                                         const Vec3& sensor, double radius, int k) {
  std::vector<SurfacePoint> out;
  std::vector<Vec3> near;
  const double r2 = radius * radius;
  for (std::size_t f : occupied) {
    const Vec3 p = grid.center_of(f);
    if ((p - sensor).squaredNorm() > r2) continue;
    const Cell c = grid.unflatten(f);
    near.clear();
    for (int dz = -2; dz <= 2; ++dz)
      for (int dy = -2; dy <= 2; ++dy)
        for (int dx = -2; dx <= 2; ++dx) {
          const Cell n = c + Cell(dx, dy, dz);
          if (grid.in_bounds(n) && grid.at(n) == CellState::Occupied) near.push_back(grid.center_of(n));
        }
    const auto est = estimate_normal(near, p, k, sensor);
    if (est.valid) out.push_back({p, est.normal});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Configuration

ControllerChoice ControllerChoice::parse(const std::string& text) {
  ControllerChoice c;
  if (text == "fu_mpc") return c;
  const std::string prefix = "fixed:";
  if (text.rfind(prefix, 0) == 0) {
    std::size_t used = 0;
    double deg = 0.0;
    try {
      deg = std::stod(text.substr(prefix.size()), &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != text.size() - prefix.size() || !std::isfinite(deg)) {
      throw InvalidQuery("controller: bad fixed rate in '" + text + "'");
    }
    c.fu_mpc = false;
    c.fixed_omega = deg * kDeg;
    return c;
  }
  throw InvalidQuery("controller: expected 'fu_mpc' or 'fixed:<deg/s>', got '" + text + "'");
}

std::string ControllerChoice::name() const {
  if (fu_mpc) return "fu_mpc";
  return "fixed:" + fmt(fixed_omega / kDeg);
}

void SimConfig::validate() const {
  auto need = [](bool ok, const char* what) {
    if (!ok) throw InvalidQuery(std::string("config: ") + what);
  };
  need(dt_sim > 0.0, "dt_sim must be positive");
  need(control_dt >= dt_sim - 1e-12, "dt_sim must not exceed the control period");
  need(std::abs(control_dt / dt_sim - std::round(control_dt / dt_sim)) < 1e-6,
       "control period must be a multiple of dt_sim");
  need(replan_period >= control_dt, "replan period must be at least the control period");
  need(time_limit > 0.0, "time_limit must be positive");
  need(completion > 0.0 && completion <= 1.0, "completion must lie in (0, 1]");
  need(kappa_loc >= 0.0, "kappa_loc must be non-negative");
  need(v_max > 0.0 && a_max > 0.0, "v_max and a_max must be positive");
  need(sensor.n_beams >= 1 && sensor.n_columns >= 1, "sensor needs at least one beam");
  need(sensor.max_range > 0.0 && sensor.rate > 0.0, "sensor range and rate must be positive");
  need(sensor.sigma_r >= 0.0, "sigma_r must be non-negative");
  need(mpc.horizon >= 2, "mpc.horizon must be at least 2");
  need(mpc.limits.omega_min <= mpc.limits.omega_max, "omega_min exceeds omega_max");
  need(mpc.limits.u_max > 0.0, "u_max must be positive");
  need(weights.alpha >= 0.0 && weights.beta >= 0.0 && weights.gamma >= 0.0 &&
           weights.alpha + weights.beta + weights.gamma > 0.0,
       "weights must be non-negative and not all zero");
  need(table.n_c >= 8, "table.n_c must be at least 8");
  need(table.epsilon > 0.0, "table.epsilon must be positive");
  need(frontier.r0 > 0.0 && frontier.r0 <= 1.0, "frontier.r0 must lie in (0, 1]");
}

// ---------------------------------------------------------------------------
// Metrics output

void write_metrics_csv(std::ostream& out, const EpisodeMetrics& m) {
  out << "t,theta,omega,omega_cmd,objective,j_sum,f_sum,coverage,traj_m,pose_err\n";
  for (const auto& r : m.cycles) {
    out << fmt(r.t) << ',' << fmt(r.theta) << ',' << fmt(r.omega) << ',' << fmt(r.omega_cmd)
        << ',' << fmt(r.objective) << ',' << fmt(r.j_sum) << ',' << fmt(r.f_sum) << ','
        << fmt(r.coverage) << ',' << fmt(r.trajectory) << ',' << fmt(r.pose_error) << '\n';
  }
}

void write_summary_json(std::ostream& out, const EpisodeMetrics& m) {
  nlohmann::ordered_json j;
  j["controller"] = m.controller;
  j["seed"] = m.seed;
  j["completion"] = m.completed;
  j["time"] = m.completed ? m.completion_time : m.end_time;
  j["trajectory_m"] = m.trajectory_length;
  j["coverage_final"] = m.coverage_final;
  j["ape_proxy_rmse"] = m.ape_proxy_rmse;
  j["ape_proxy_mean"] = m.ape_proxy_mean;
  j["failed"] = m.failed;
  j["end_reason"] = m.end_reason;
  j["solves"] = m.solves;
  j["contract_violations"] = m.contract_violations;
  j["soundness_mismatches"] = m.soundness_mismatches;
  j["coverage_monotone"] = m.coverage_monotone;
  out << j.dump(2) << '\n';
}

void write_timing_csv(std::ostream& out, const EpisodeMetrics& m) {
  out << "solve,seconds\n";
  for (std::size_t i = 0; i < m.solve_times.size(); ++i) out << i << ',' << fmt(m.solve_times[i]) << '\n';
}

// ---------------------------------------------------------------------------
// Episode

namespace {

// Greedy string pulling: from each kept vertex jump to the furthest vertex in
// clear line of sight. Keeps the vehicle from doubling back to a graph node
// behind it after every replan.
std::vector<Vec3> shortcut_path(const std::vector<Vec3>& path, const OccupancyGrid& grid,
                                const ClearanceMap& clearance) {
  if (path.size() <= 2) return path;
  std::vector<Vec3> out{path.front()};
  std::size_t i = 0;
  while (i + 1 < path.size()) {
    std::size_t next = i + 1;
    for (std::size_t j = path.size() - 1; j > i + 1; --j) {
      if (segment_navigable(grid, clearance, path[i], path[j])) {
        next = j;
        break;
      }
    }
    out.push_back(path[next]);
    i = next;
  }
  return out;
}

Scene make_scene(const SimConfig& config) {
  SceneSpec spec = config.scene;
  spec.seed = config.seed;
  return generate_scene(spec);
}

}  // namespace

Episode::Episode(const SimConfig& config) : Episode(config, make_scene(config)) {}

Episode::Episode(const SimConfig& config, Scene scene)
    : config_(config),
      scene_(std::move(scene)),
      belief_(scene_.truth.origin(), scene_.truth.resolution(), scene_.truth.dims()),
      clearance_(belief_, config.frontier.safety_clearance) {
  config_.validate();
  std::seed_seq lidar_seed{config_.seed, std::uint64_t{0x11DA5}};
  std::seed_seq pose_seed{config_.seed, std::uint64_t{0x9053}};
  lidar_rng_.seed(lidar_seed);
  pose_rng_.seed(pose_seed);

  control_every_ = ticks_per(config_.control_dt, config_.dt_sim);
  sensor_every_ = ticks_per(1.0 / config_.sensor.rate, config_.dt_sim);
  replan_every_ = ticks_per(config_.replan_period, config_.dt_sim);
  table_every_ = ticks_per(config_.table.period, config_.dt_sim);

  config_.mpc.dt = static_cast<double>(control_every_) * config_.dt_sim;
  position_ = scene_.spawn;
  hover_anchor_ = position_;
  const std::vector<Vec3> hold{position_};
  reference_ = plan_reference(hold, TrajectoryLimits{config_.v_max, config_.a_max, 0.0}, 0.0);
  scan_.omega = config_.controller.fu_mpc ? config_.mpc.limits.omega_min
                                          : config_.controller.fixed_omega;
  omega_cmd_ = scan_.omega;
  ignored_.assign(belief_.size(), 0);
  fallback_table_ = std::make_shared<const UncertaintyTable>(
      std::vector<double>(static_cast<std::size_t>(config_.table.n_c), 3.0 / config_.table.epsilon),
      config_.table.epsilon, -1.0);
  metrics_.controller = config_.controller.name();
  metrics_.seed = config_.seed;
}

Episode::~Episode() {
  if (pending_.valid()) pending_.wait();
}

double Episode::coverage() const {
  return scene_.explorable == 0
             ? 1.0
             : static_cast<double>(known_explorable_) / static_cast<double>(scene_.explorable);
}

std::size_t Episode::soundness_mismatches() const {
  std::size_t bad = 0;
  for (std::size_t f = 0; f < belief_.size(); ++f) {
    if (belief_.at(f) == CellState::Free && scene_.truth.at(f) == CellState::Occupied) ++bad;
  }
  return bad;
}

void Episode::fire_sensor() {
  SensorPoseChain pose;
  pose.r_B_W = position_;
  pose.theta = wrap_angle(scan_.theta);
  const auto beams = simulate_lidar(scene_.truth, pose, config_.sensor, lidar_rng_);
  std::vector<std::size_t> occupied, known;
  integrate_scan(belief_, sensor_origin(pose), beams, &occupied, &known);
  for (std::size_t f : known) {
    if (scene_.truth.at(f) == CellState::Free) ++known_explorable_;
  }
  clearance_.mark_occupied(occupied);
  occupied_cells_.insert(occupied_cells_.end(), occupied.begin(), occupied.end());
}

void Episode::refresh_table() {
  if (pending_.valid()) channel_.publish(pending_.get());
  const TableParams tp = config_.table;
  const Vec3 sensor = position_;
  const double stamp = time();
  auto build = [tp, sensor, stamp, grid = belief_, occupied = occupied_cells_]() {
    const auto pts = surface_points(grid, occupied, sensor, tp.radius, tp.normal_k);
    return std::make_shared<const UncertaintyTable>(
        build_uncertainty_table(pts, sensor, tp.n_c, tp.half_window, tp.epsilon, stamp));
  };
  if (tick_ == 0) {
    // Initialization: the loop starts with a table from the first scan.
    channel_.publish(build());
    return;
  }
  pending_ = std::async(std::launch::async, std::move(build));
}

std::vector<ClusterSummary> Episode::cluster_summaries() const {
  std::vector<ClusterSummary> out;
  out.reserve(clusters_.size());
  for (const auto& c : clusters_) out.push_back({c.center, c.intensity});
  return out;
}

void Episode::replan() {
  const double t = time();
  update_topo_graph(graph_, belief_, clearance_, position_, config_.topo);

  std::vector<std::size_t> cells;
  for (std::size_t f : detect_frontiers(belief_)) {
    if (!ignored_[f]) cells.push_back(f);
  }
  clusters_ = cluster_frontiers(cells, belief_, config_.frontier.clustering);

  const double attach = config_.topo.max_edge_length;
  const ReachabilityTest reachable = [&](const Vec3& v) {
    return graph_.can_attach(v, belief_, clearance_, attach);
  };
  std::vector<Vec3> pool;
  for (const auto& c : clusters_) {
    const auto vs = sample_viewpoints(c, belief_, clearance_, config_.frontier.sampling, reachable);
    pool.insert(pool.end(), vs.begin(), vs.end());
  }

  VisibilityParams vis;
  vis.max_range = config_.sensor.max_range;
  vis.max_elevation = config_.sensor.fan_half_angle;
  vis.max_samples = config_.frontier.max_samples;
  const double r_max = config_.frontier.sampling.r_max + 1e-9;
  std::vector<ObservedCluster> observed;
  std::vector<Vec3> subset;
  std::vector<int> subset_ids;
  for (const auto& c : clusters_) {
    subset.clear();
    subset_ids.clear();
    for (std::size_t i = 0; i < pool.size(); ++i) {
      const Vec3 off = pool[i] - c.center;
      if (off.norm() <= r_max && off.dot(c.normal) >= 0.0) {
        subset.push_back(pool[i]);
        subset_ids.push_back(static_cast<int>(i));
      }
    }
    VisibleRegion region = visible_region(c, subset, belief_, config_.frontier.r0, vis);
    if (region.candidates.empty()) continue;
    for (int& id : region.candidates) id = subset_ids[static_cast<std::size_t>(id)];
    observed.push_back({&c, std::move(region)});
  }
  dynamic_.clear();
  update_dynamic_clusters(dynamic_, observed, pool, config_.frontier.merge);

  TourParams tour = config_.tour;
  tour.v_max = config_.v_max;
  const VehicleState state{position_, velocity_};
  const TourPlan plan = plan_global_tour(graph_, dynamic_, state, belief_, clearance_, tour);

  const std::size_t mismatches = soundness_mismatches();
  metrics_.soundness_mismatches = std::max(metrics_.soundness_mismatches, mismatches);

  if (plan.status != TourStatus::Ok) {
    if (stall_since_ < 0.0) stall_since_ = t;
    has_goal_ = false;
    const std::vector<Vec3> hold{position_};
    reference_ = plan_reference(hold, TrajectoryLimits{config_.v_max, config_.a_max, 0.0}, t);
    return;
  }
  stall_since_ = -1.0;
  has_goal_ = true;
  goal_ = plan.next_goal;
  goal_cells_.clear();
  for (int member : dynamic_[static_cast<std::size_t>(plan.goal_index)].members) {
    for (const auto& c : clusters_) {
      if (c.id == member) goal_cells_.insert(goal_cells_.end(), c.cells.begin(), c.cells.end());
    }
  }
  const std::vector<Vec3> path = shortcut_path(plan.path, belief_, clearance_);
  double v_start = 0.0;
  if (path.size() >= 2 && velocity_.norm() > 0.0) {
    const Vec3 dir = (path[1] - path[0]).normalized();
    v_start = std::max(0.0, velocity_.dot(dir));
  }
  reference_ = plan_reference(path, TrajectoryLimits{config_.v_max, config_.a_max, 0.0}, t, v_start);
}

void Episode::control_cycle() {
  const auto published = channel_.latest();
  const UncertaintyTable& table = published ? *published : *fallback_table_;
  CycleRecord rec;
  rec.t = time();
  rec.theta = wrap_angle(scan_.theta);
  rec.omega = scan_.omega;

  if (config_.controller.fu_mpc) {
    const auto clusters = cluster_summaries();
    const auto start = std::chrono::steady_clock::now();
    const MpcSolution sol =
        solve_fu_mpc(scan_, reference_, rec.t, table, clusters, config_.weights, warm_, config_.mpc);
    const auto stop = std::chrono::steady_clock::now();
    metrics_.solve_times.push_back(std::chrono::duration<double>(stop - start).count());
    ++metrics_.solves;

    const auto& lim = config_.mpc.limits;
    bool ok = sol.objective <= sol.warm_objective + 1e-12 * std::max(1.0, std::abs(sol.warm_objective));
    for (double u : sol.control.u) ok = ok && std::abs(u) <= lim.u_max;
    for (const auto& x : sol.predicted) ok = ok && x.omega >= lim.omega_min && x.omega <= lim.omega_max;
    if (!ok) ++metrics_.contract_violations;

    warm_ = sol.control;
    omega_cmd_ = sol.omega_command;
    rec.objective = sol.objective;
    rec.j_sum = sol.complexity_sum;
    rec.f_sum = sol.uncertainty_sum;
  } else {
    omega_cmd_ = config_.controller.fixed_omega;
  }
  theta_anchor_ = scan_.theta;
  anchor_tick_ = tick_;

  rec.omega_cmd = omega_cmd_;
  rec.coverage = coverage();
  rec.trajectory = metrics_.trajectory_length;
  rec.pose_error = metrics_.cycles.empty() ? 0.0 : metrics_.cycles.back().pose_error;
  if (!metrics_.cycles.empty() && rec.coverage < metrics_.cycles.back().coverage) {
    metrics_.coverage_monotone = false;
  }
  metrics_.cycles.push_back(rec);
}

void Episode::end(bool completed, const std::string& reason) {
  done_ = true;
  metrics_.completed = completed;
  metrics_.end_reason = reason;
  if (completed) metrics_.completion_time = time();
}

bool Episode::step() {
  if (done_) return false;
  const double t = time();

  if (tick_ % sensor_every_ == 0) fire_sensor();
  if (tick_ % table_every_ == 0) refresh_table();
  if (coverage() >= config_.completion) {
    end(true, "complete");
    return false;
  }

  if (config_.explore) {
    bool need = tick_ % replan_every_ == 0;
    const bool arrived = has_goal_ && t >= reference_.end_time() && (position_ - goal_).norm() < 0.3;
    if (arrived && !was_arrived_) need = true;
    was_arrived_ = arrived;
    if ((position_ - hover_anchor_).norm() > 0.5) {
      hover_anchor_ = position_;
      hover_since_ = t;
    }
    // A goal whose frontier never clears while we hover on it is dropped.
    if (has_goal_ && t - hover_since_ > config_.give_up_time) {
      for (std::size_t f : goal_cells_) ignored_[f] = 1;
      hover_since_ = t;
      need = true;
    }
    if (need) replan();
    if (stall_since_ >= 0.0 && t - stall_since_ > config_.stall_timeout) {
      end(false, has_goal_ ? "stall" : "no_reachable_frontier");
      return false;
    }
  }
  if (tick_ % control_every_ == 0) control_cycle();

  // Advance.
  ++tick_;
  const double t_next = time();
  const Vec3 prev = position_;
  const auto sample = sample_reference(reference_, t_next);
  position_ = sample.position;
  velocity_ = sample.velocity;
  metrics_.trajectory_length += (position_ - prev).norm();
  scan_.theta = theta_anchor_ + omega_cmd_ * static_cast<double>(tick_ - anchor_tick_) * config_.dt_sim;
  scan_.omega = omega_cmd_;

  // Localization proxy: per-axis Gaussian scaled by the current table cost.
  const auto published = channel_.latest();
  const UncertaintyTable& table = published ? *published : *fallback_table_;
  const double sigma = config_.kappa_loc * lookup_uncertainty(table, scan_.theta) / table.empty_value();
  const Vec3 z(unit_normal_(pose_rng_), unit_normal_(pose_rng_), unit_normal_(pose_rng_));
  const double err = (sigma * z).norm();
  pose_sum_ += err;
  pose_sq_sum_ += err * err;
  ++pose_samples_;
  if (!metrics_.cycles.empty()) metrics_.cycles.back().pose_error = err;

  if (!scene_.truth.contains(position_) || scene_.truth.at_point(position_) == CellState::Occupied) {
    metrics_.failed = true;
    end(false, "collision");
    return false;
  }
  if (t_next >= config_.time_limit - 1e-9) {
    end(false, "time_limit");
    return false;
  }
  return true;
}

EpisodeMetrics Episode::finish() {
  if (!finished_) {
    finished_ = true;
    if (pending_.valid()) pending_.wait();
    metrics_.end_time = time();
    metrics_.coverage_final = coverage();
    metrics_.soundness_mismatches = std::max(metrics_.soundness_mismatches, soundness_mismatches());
    if (pose_samples_ > 0) {
      metrics_.ape_proxy_mean = pose_sum_ / static_cast<double>(pose_samples_);
      metrics_.ape_proxy_rmse = std::sqrt(pose_sq_sum_ / static_cast<double>(pose_samples_));
    }
  }
  return metrics_;
}

EpisodeMetrics Episode::run() {
  while (step()) {
  }
  return finish();
}

EpisodeMetrics run_episode(const SimConfig& config) {
  Episode episode(config);
  return episode.run();
}

}  // namespace scanplan
