#include <sstream>

#include <pybind11/eigen.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "scanplan/config.hpp"
#include "scanplan/sim.hpp"

namespace py = pybind11;
using namespace pybind11::literals;
using namespace scanplan;

namespace {

using Points = Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor>;

std::vector<Vec3> to_vec3(const Points& m) {
  std::vector<Vec3> out(static_cast<std::size_t>(m.rows()));
  for (Eigen::Index i = 0; i < m.rows(); ++i) out[static_cast<std::size_t>(i)] = m.row(i).transpose();
  return out;
}

Points from_vec3(std::span<const Vec3> v) {
  Points m(static_cast<Eigen::Index>(v.size()), 3);
  for (std::size_t i = 0; i < v.size(); ++i) m.row(static_cast<Eigen::Index>(i)) = v[i].transpose();
  return m;
}

CostMatrix to_costs(const Eigen::MatrixXd& m) {
  if (m.rows() != m.cols()) throw InvalidQuery("cost matrix must be square");
  CostMatrix c(static_cast<std::size_t>(m.rows()));
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) c(i, j) = m(i, j);
  return c;
}

py::object json_to_py(const ConfigTree& t) {
  return py::module_::import("json").attr("loads")(t.dump());
}

py::dict metrics_dict(const EpisodeMetrics& m) {
  py::dict d;
  d["controller"] = m.controller;
  d["seed"] = m.seed;
  d["completed"] = m.completed;
  d["completion_time"] = m.completion_time;
  d["end_time"] = m.end_time;
  d["end_reason"] = m.end_reason;
  d["failed"] = m.failed;
  d["trajectory_length"] = m.trajectory_length;
  d["coverage_final"] = m.coverage_final;
  d["ape_proxy_rmse"] = m.ape_proxy_rmse;
  d["ape_proxy_mean"] = m.ape_proxy_mean;
  d["solves"] = m.solves;
  d["contract_violations"] = m.contract_violations;
  d["soundness_mismatches"] = m.soundness_mismatches;
  d["coverage_monotone"] = m.coverage_monotone;
  const auto n = static_cast<py::ssize_t>(m.cycles.size());
  py::array_t<double> cycles({n, py::ssize_t{10}});
  auto c = cycles.mutable_unchecked<2>();
  for (py::ssize_t i = 0; i < n; ++i) {
    const auto& r = m.cycles[static_cast<std::size_t>(i)];
    const double row[10] = {r.t, r.theta, r.omega, r.omega_cmd, r.objective,
                            r.j_sum, r.f_sum, r.coverage, r.trajectory, r.pose_error};
    for (int k = 0; k < 10; ++k) c(i, k) = row[k];
  }
  d["cycles"] = cycles;
  d["cycle_columns"] = std::vector<std::string>{"t", "theta", "omega", "omega_cmd", "objective",
                                                "j_sum", "f_sum", "coverage", "traj_m", "pose_err"};
  d["solve_times"] = m.solve_times;
  return d;
}

}  // namespace

PYBIND11_MODULE(_scanplan, m) {
  m.doc() = "Scan planning core: occupancy mapping, frontiers, tours, scan-speed MPC, episodes";
  py::register_exception<InvalidQuery>(m, "InvalidQuery", PyExc_ValueError);

  // world model
  py::enum_<CellState>(m, "CellState")
      .value("Unknown", CellState::Unknown)
      .value("Free", CellState::Free)
      .value("Occupied", CellState::Occupied);

  py::class_<OccupancyGrid>(m, "OccupancyGrid")
      .def(py::init<const Vec3&, double, const Cell&, CellState>(), "origin"_a, "resolution"_a,
           "dims"_a, "fill"_a = CellState::Unknown)
      .def_property_readonly("origin", &OccupancyGrid::origin)
      .def_property_readonly("resolution", &OccupancyGrid::resolution)
      .def_property_readonly("dims", &OccupancyGrid::dims)
      .def("__len__", &OccupancyGrid::size)
      .def("cell_of", &OccupancyGrid::cell_of)
      .def("center_of", py::overload_cast<const Cell&>(&OccupancyGrid::center_of, py::const_))
      .def("flatten", &OccupancyGrid::flatten)
      .def("unflatten", &OccupancyGrid::unflatten)
      .def("at", [](const OccupancyGrid& g, const Cell& c) {
        if (!g.in_bounds(c)) throw InvalidQuery("cell out of bounds");
        return g.at(c);
      })
      .def("set", [](OccupancyGrid& g, const Cell& c, CellState s) {
        if (!g.in_bounds(c)) throw InvalidQuery("cell out of bounds");
        g.set(c, s);
      })
      .def("count", &OccupancyGrid::count)
      .def("states", [](const OccupancyGrid& g) {
        // (nz, ny, nx) so that states()[z, y, x] matches flat indexing
        const Cell& d = g.dims();
        py::array_t<std::uint8_t> a({d.z(), d.y(), d.x()});
        auto* out = a.mutable_data();
        for (std::size_t i = 0; i < g.size(); ++i) out[i] = static_cast<std::uint8_t>(g.at(i));
        return a;
      })
      .def("__eq__", [](const OccupancyGrid& a, const OccupancyGrid& b) { return a == b; });

  m.def("save_grid", &save_grid, "path"_a, "grid"_a);
  m.def("load_grid", &load_grid, "path"_a);
  m.def("wrap_angle", &wrap_angle);
  m.def("motor_rotation", &motor_rotation);

  m.def(
      "cast_ray",
      [](const OccupancyGrid& g, const Vec3& origin, const Vec3& dir, double max_range) -> py::object {
        const auto hit = cast_ray(g, origin, dir, max_range);
        if (!hit) return py::none();
        return py::dict("hit_point"_a = hit->hit_point, "hit_cell"_a = hit->hit_cell,
                        "entry_distance"_a = hit->entry_distance,
                        "traversed"_a = hit->traversed);
      },
      "grid"_a, "origin"_a, "direction"_a, "max_range"_a);

  m.def(
      "integrate_scan",
      [](OccupancyGrid& g, const Vec3& origin, const Points& ends, const std::vector<bool>& hits) {
        if (static_cast<std::size_t>(ends.rows()) != hits.size()) {
          throw InvalidQuery("ends and hits differ in length");
        }
        std::vector<Beam> beams;
        for (Eigen::Index i = 0; i < ends.rows(); ++i) {
          beams.push_back({ends.row(i).transpose(), hits[static_cast<std::size_t>(i)]});
        }
        return integrate_scan(g, origin, beams);
      },
      "grid"_a, "origin"_a, "ends"_a, "hits"_a);

  m.def("detect_frontiers", &detect_frontiers, "grid"_a);

  // frontiers
  py::class_<ClusteringParams>(m, "ClusteringParams")
      .def(py::init<>())
      .def_readwrite("link_radius", &ClusteringParams::link_radius)
      .def_readwrite("max_extent", &ClusteringParams::max_extent)
      .def_readwrite("min_cells", &ClusteringParams::min_cells);

  py::class_<FrontierCluster>(m, "FrontierCluster")
      .def_readonly("id", &FrontierCluster::id)
      .def_readonly("cells", &FrontierCluster::cells)
      .def_readonly("center", &FrontierCluster::center)
      .def_readonly("normal", &FrontierCluster::normal)
      .def_readonly("intensity", &FrontierCluster::intensity);

  m.def(
      "cluster_frontiers",
      [](const std::vector<std::size_t>& cells, const OccupancyGrid& g, const ClusteringParams& p) {
        return cluster_frontiers(cells, g, p);
      },
      "cells"_a, "grid"_a, "params"_a = ClusteringParams{});

  // tours
  m.def("solve_open_atsp", [](const Eigen::MatrixXd& c, std::size_t exact_limit) {
    return solve_open_atsp(to_costs(c), AtspOptions{exact_limit});
  }, "costs"_a, "exact_limit"_a = 10);
  m.def("solve_open_atsp_exact", [](const Eigen::MatrixXd& c) { return solve_open_atsp_exact(to_costs(c)); });
  m.def("solve_open_atsp_heuristic",
        [](const Eigen::MatrixXd& c) { return solve_open_atsp_heuristic(to_costs(c)); });
  m.def("tour_cost", [](const Eigen::MatrixXd& c, const std::vector<int>& order) {
    return tour_cost(to_costs(c), order);
  });
  m.def("polyline_transition_cost", [](const Points& p, double v_max) {
    return polyline_transition_cost(to_vec3(p), v_max);
  }, "polyline"_a, "v_max"_a);
  m.def("heading_penalty", &heading_penalty, "velocity"_a, "target"_a, "position"_a, "w_f"_a,
        "hover_speed"_a = 0.05);

  // trajectory
  py::class_<TrajectoryLimits>(m, "TrajectoryLimits")
      .def(py::init<>())
      .def_readwrite("v_max", &TrajectoryLimits::v_max)
      .def_readwrite("a_max", &TrajectoryLimits::a_max)
      .def_readwrite("corner_gain", &TrajectoryLimits::corner_gain);

  py::class_<ReferenceTrajectory>(m, "ReferenceTrajectory")
      .def_property_readonly("t0", &ReferenceTrajectory::t0)
      .def_property_readonly("total_time", &ReferenceTrajectory::total_time)
      .def_property_readonly("length", &ReferenceTrajectory::length)
      .def_property_readonly("end_time", &ReferenceTrajectory::end_time)
      .def("sample", [](const ReferenceTrajectory& t, double time) {
        const auto s = sample_reference(t, time);
        return py::dict("position"_a = s.position, "velocity"_a = s.velocity, "speed"_a = s.speed,
                        "arc_length"_a = s.arc_length);
      });

  m.def("plan_reference", [](const Points& path, const TrajectoryLimits& limits, double t0,
                             double v_start) { return plan_reference(to_vec3(path), limits, t0, v_start); },
        "path"_a, "limits"_a = TrajectoryLimits{}, "t0"_a = 0.0, "v_start"_a = 0.0);

  // scan controller
  py::class_<ScanState>(m, "ScanState")
      .def(py::init([](double theta, double omega) { return ScanState{theta, omega}; }),
           "theta"_a = 0.0, "omega"_a = 0.0)
      .def_readwrite("theta", &ScanState::theta)
      .def_readwrite("omega", &ScanState::omega)
      .def("__repr__", [](const ScanState& s) {
        std::ostringstream os;
        os << "ScanState(theta=" << s.theta << ", omega=" << s.omega << ")";
        return os.str();
      });

  py::class_<ScanLimits>(m, "ScanLimits")
      .def(py::init<>())
      .def_readwrite("omega_min", &ScanLimits::omega_min)
      .def_readwrite("omega_max", &ScanLimits::omega_max)
      .def_readwrite("u_max", &ScanLimits::u_max);

  m.def("predict_scan_states", [](const ScanState& x0, const std::vector<double>& u, double dt,
                                  const ScanLimits& limits) {
    return predict_scan_states(x0, ControlSequence{u, dt}, limits);
  }, "x0"_a, "u"_a, "dt"_a = 0.1, "limits"_a = ScanLimits{});

  py::class_<UncertaintyTable>(m, "UncertaintyTable")
      .def(py::init<std::vector<double>, double, double>(), "values"_a, "epsilon"_a = 1e-3,
           "stamp"_a = 0.0)
      .def_property_readonly("values", &UncertaintyTable::values)
      .def_property_readonly("epsilon", &UncertaintyTable::epsilon)
      .def_property_readonly("empty_value", &UncertaintyTable::empty_value)
      .def_readonly("fisher_traces", &UncertaintyTable::fisher_traces)
      .def("__len__", &UncertaintyTable::size)
      .def("__call__", [](const UncertaintyTable& t, double theta) { return lookup_uncertainty(t, theta); });

  m.def("build_uncertainty_table",
        [](const Points& points, const Points& normals, const Vec3& sensor, int n_c,
           double half_window, double epsilon) {
          if (points.rows() != normals.rows()) throw InvalidQuery("points and normals differ in length");
          std::vector<SurfacePoint> sp;
          for (Eigen::Index i = 0; i < points.rows(); ++i) {
            sp.push_back({points.row(i).transpose(), normals.row(i).transpose()});
          }
          return build_uncertainty_table(sp, sensor, n_c, half_window, epsilon);
        },
        "points"_a, "normals"_a, "sensor"_a, "n_c"_a = 36, "half_window"_a = 0.6108652381980153,
        "epsilon"_a = 1e-3);
  m.def("lookup_uncertainty", &lookup_uncertainty, "table"_a, "theta"_a);
  m.def("estimate_normal", [](const Points& pts, const Vec3& q, int k, const Vec3& vp) -> py::object {
    const auto n = estimate_normal(to_vec3(pts), q, k, vp);
    if (!n.valid) return py::none();
    return py::cast(n.normal);
  }, "points"_a, "query"_a, "k"_a, "viewpoint"_a);
  m.def("frontier_reward", &frontier_reward, "p"_a, "center"_a, "intensity"_a, "sigma"_a);

  py::class_<ClusterSummary>(m, "ClusterSummary")
      .def(py::init([](const Vec3& c, double s) { return ClusterSummary{c, s}; }), "center"_a,
           "intensity"_a = 1.0)
      .def_readwrite("center", &ClusterSummary::center)
      .def_readwrite("intensity", &ClusterSummary::intensity);

  py::class_<FrontierGates>(m, "FrontierGates")
      .def(py::init<>())
      .def_readwrite("max_dist", &FrontierGates::max_dist)
      .def_readwrite("half_angle", &FrontierGates::half_angle)
      .def_readwrite("sigma", &FrontierGates::sigma);

  m.def("complexity_cost",
        [](const Vec3& p, double theta, const std::vector<ClusterSummary>& cl, const FrontierGates& g) {
          const auto c = complexity_cost(p, theta, cl, g);
          return py::make_tuple(c.cost, c.total);
        },
        "scan_position"_a, "theta"_a, "clusters"_a, "gates"_a = FrontierGates{});

  py::class_<MpcWeights>(m, "MpcWeights")
      .def(py::init([](double a, double b, double g) { return MpcWeights{a, b, g}; }),
           "alpha"_a = 1.0, "beta"_a = 0.5, "gamma"_a = 0.05)
      .def_readwrite("alpha", &MpcWeights::alpha)
      .def_readwrite("beta", &MpcWeights::beta)
      .def_readwrite("gamma", &MpcWeights::gamma);

  py::class_<MpcOptions>(m, "MpcOptions")
      .def(py::init<>())
      .def_readwrite("limits", &MpcOptions::limits)
      .def_readwrite("dt", &MpcOptions::dt)
      .def_readwrite("horizon", &MpcOptions::horizon)
      .def_readwrite("max_iterations", &MpcOptions::max_iterations)
      .def_readwrite("rel_tolerance", &MpcOptions::rel_tolerance)
      .def_readwrite("complexity_knots", &MpcOptions::complexity_knots)
      .def_readwrite("gates", &MpcOptions::gates)
      .def_readwrite("normalize", &MpcOptions::normalize)
      .def_readwrite("constant_starts", &MpcOptions::constant_starts)
      .def_readwrite("constant_scan", &MpcOptions::constant_scan);

  py::class_<MpcSolution>(m, "MpcSolution")
      .def_property_readonly("u", [](const MpcSolution& s) { return s.control.u; })
      .def_readonly("predicted", &MpcSolution::predicted)
      .def_readonly("omega_command", &MpcSolution::omega_command)
      .def_readonly("objective", &MpcSolution::objective)
      .def_readonly("warm_objective", &MpcSolution::warm_objective)
      .def_readonly("complexity_sum", &MpcSolution::complexity_sum)
      .def_readonly("uncertainty_sum", &MpcSolution::uncertainty_sum)
      .def_readonly("iterations", &MpcSolution::iterations);

  m.def("solve_fu_mpc",
        [](const ScanState& x0, const Points& positions, const UncertaintyTable& table,
           const std::vector<ClusterSummary>& clusters, const MpcWeights& w,
           const std::vector<double>& warm, const MpcOptions& opt) {
          return solve_fu_mpc(x0, to_vec3(positions), table, clusters, w,
                              ControlSequence{warm, opt.dt}, opt);
        },
        "x0"_a, "positions"_a, "table"_a, "clusters"_a, "weights"_a = MpcWeights{},
        "warm"_a = std::vector<double>{}, "options"_a = MpcOptions{});

  // scenes and episodes
  py::class_<Scene>(m, "Scene")
      .def_readonly("truth", &Scene::truth)
      .def_readonly("name", &Scene::name)
      .def_readonly("spawn", &Scene::spawn)
      .def_readonly("explorable", &Scene::explorable)
      .def_property_readonly("layout_hash", [](const Scene& s) { return layout_hash(s.truth); });

  m.def("generate_scene",
        [](const std::string& kind, const Vec3& size, std::uint64_t seed, double resolution) {
          SceneSpec spec;
          spec.kind = parse_scene_kind(kind);
          spec.size = size;
          spec.seed = seed;
          spec.resolution = resolution;
          return generate_scene(spec);
        },
        "kind"_a = "corridor", "size"_a = Vec3(40.0, 10.0, 5.0), "seed"_a = 1,
        "resolution"_a = 0.2);

  m.def("layout_hash", &layout_hash, "grid"_a);
  m.def("sample_lidar_ends", [](const OccupancyGrid& truth, const Vec3& position, double theta,
                                std::uint64_t seed, double sigma_r) {
    SensorPoseChain pose;
    pose.r_B_W = position;
    pose.theta = theta;
    pose.validate();
    SensorParams p;
    p.sigma_r = sigma_r;
    std::mt19937_64 rng(seed);
    const auto beams = simulate_lidar(truth, pose, p, rng);
    std::vector<Vec3> ends;
    std::vector<bool> hits;
    for (const auto& b : beams) {
      ends.push_back(b.end);
      hits.push_back(b.hit);
    }
    return py::make_tuple(from_vec3(ends), hits);
  }, "truth"_a, "position"_a, "theta"_a, "seed"_a = 1, "sigma_r"_a = 0.0);

  m.def("default_config", [] { return json_to_py(default_config_tree()); });
  m.def("_run_episode_json", [](const std::string& patch) {
    ConfigTree tree = default_config_tree();
    merge_config(tree, ConfigTree::parse(patch));
    const SimConfig config = config_from_tree(tree);
    EpisodeMetrics metrics;
    {
      py::gil_scoped_release release;
      metrics = run_episode(config);
    }
    return metrics_dict(metrics);
  });
}
