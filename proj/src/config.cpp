#include "scanplan/config.hpp"

#include <cmath>
#include <fstream>
#include <numbers>
#include <type_traits>

namespace scanplan {

namespace {

constexpr double kDeg = std::numbers::pi / 180.0;

std::vector<std::string> split_key(const std::string& key) {
  std::vector<std::string> parts;
  std::size_t start = 0;
  while (true) {
    const std::size_t dot = key.find('.', start);
    parts.push_back(key.substr(start, dot == std::string::npos ? std::string::npos : dot - start));
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  for (const auto& p : parts) {
    if (p.empty()) throw InvalidQuery("config: malformed key '" + key + "'");
  }
  return parts;
}

bool compatible(const ConfigTree& slot, const ConfigTree& value) {
  if (slot.is_number()) return value.is_number();
  if (slot.is_boolean()) return value.is_boolean();
  if (slot.is_string()) return value.is_string();
  if (slot.is_array()) return value.is_array();
  if (slot.is_object()) return value.is_object();
  return true;
}

template <class T>
T integer(const ConfigTree& node, const char* key) {
  const auto& v = node.at(key);
  if (!v.is_number_integer() || (std::is_unsigned_v<T> && v.get<long long>() < 0)) {
    throw InvalidQuery(std::string("config: key '") + key + "' needs a non-fractional value");
  }
  return v.get<T>();
}

}  // namespace

ConfigTree default_config_tree() {
  const SimConfig d;
  ConfigTree t;
  t["seed"] = d.seed;
  t["controller"] = "fu_mpc";
  t["time_limit"] = d.time_limit;
  t["dt_sim"] = d.dt_sim;
  t["control_dt"] = d.control_dt;
  t["replan_period"] = d.replan_period;
  t["completion"] = d.completion;
  t["kappa_loc"] = d.kappa_loc;
  t["v_max"] = d.v_max;
  t["a_max"] = d.a_max;
  t["give_up_time"] = d.give_up_time;
  t["stall_timeout"] = d.stall_timeout;
  t["explore"] = d.explore;
  t["scene"] = {{"kind", "corridor"},
                {"size", {d.scene.size.x(), d.scene.size.y(), d.scene.size.z()}},
                {"resolution", d.scene.resolution}};
  t["sensor"] = {{"n_beams", d.sensor.n_beams},
                 {"n_columns", d.sensor.n_columns},
                 {"fan_half_angle_deg", d.sensor.fan_half_angle / kDeg},
                 {"fov_deg", d.sensor.fov / kDeg},
                 {"max_range", d.sensor.max_range},
                 {"sigma_r", d.sensor.sigma_r},
                 {"rate", d.sensor.rate}};
  t["weights"] = {{"alpha", d.weights.alpha}, {"beta", d.weights.beta}, {"gamma", d.weights.gamma}};
  t["mpc"] = {{"omega_min_deg", d.mpc.limits.omega_min / kDeg},
              {"omega_max_deg", d.mpc.limits.omega_max / kDeg},
              {"u_max_deg", d.mpc.limits.u_max / kDeg},
              {"horizon", d.mpc.horizon},
              {"max_iterations", d.mpc.max_iterations},
              {"rel_tolerance", d.mpc.rel_tolerance},
              {"complexity_knots", d.mpc.complexity_knots},
              {"constant_starts", d.mpc.constant_starts},
              {"constant_scan", d.mpc.constant_scan},
              {"max_dist", d.mpc.gates.max_dist},
              {"half_angle_deg", d.mpc.gates.half_angle / kDeg},
              {"sigma", d.mpc.gates.sigma}};
  t["table"] = {{"n_c", d.table.n_c},
                {"half_window_deg", d.table.half_window / kDeg},
                {"epsilon", d.table.epsilon},
                {"radius", d.table.radius},
                {"normal_k", d.table.normal_k},
                {"period", d.table.period}};
  t["frontier"] = {{"link_radius", d.frontier.clustering.link_radius},
                   {"max_extent", d.frontier.clustering.max_extent},
                   {"min_cells", d.frontier.clustering.min_cells},
                   {"r0", d.frontier.r0},
                   {"alpha_m", d.frontier.merge.alpha_m},
                   {"beta_m", d.frontier.merge.beta_m},
                   {"r_min", d.frontier.sampling.r_min},
                   {"r_max", d.frontier.sampling.r_max},
                   {"n_shells", d.frontier.sampling.n_shells},
                   {"n_az", d.frontier.sampling.n_az},
                   {"n_el", d.frontier.sampling.n_el},
                   {"safety_clearance", d.frontier.safety_clearance},
                   {"max_samples", d.frontier.max_samples}};
  t["planner"] = {{"lattice_spacing", d.topo.lattice_spacing},
                  {"k_neighbors", d.topo.k_neighbors},
                  {"max_edge_length", d.topo.max_edge_length},
                  {"odom_snap", d.topo.odom_snap},
                  {"w_f", d.tour.w_f},
                  {"big", d.tour.big},
                  {"hover_speed", d.tour.hover_speed},
                  {"exact_limit", d.tour.exact_limit}};
  return t;
}

void merge_config(ConfigTree& base, const ConfigTree& patch, const std::string& prefix) {
  if (!patch.is_object()) throw InvalidQuery("config: expected an object at '" + prefix + "'");
  for (const auto& [key, value] : patch.items()) {
    const std::string path = prefix.empty() ? key : prefix + "." + key;
    if (!base.contains(key)) throw InvalidQuery("config: unknown key '" + path + "'");
    ConfigTree& slot = base[key];
    if (slot.is_object()) {
      merge_config(slot, value, path);
    } else {
      if (!compatible(slot, value)) throw InvalidQuery("config: wrong type for key '" + path + "'");
      slot = value;
    }
  }
}

const ConfigTree& config_value(const ConfigTree& tree, const std::string& key) {
  const ConfigTree* node = &tree;
  for (const auto& part : split_key(key)) {
    if (!node->is_object() || !node->contains(part)) {
      throw InvalidQuery("config: unknown key '" + key + "'");
    }
    node = &(*node)[part];
  }
  return *node;
}

void apply_override(ConfigTree& tree, const std::string& assignment) {
  const std::size_t eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw InvalidQuery("config: override must look like key=value, got '" + assignment + "'");
  }
  const std::string key = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  ConfigTree value = ConfigTree::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;

  ConfigTree patch = value;
  const auto parts = split_key(key);
  for (auto it = parts.rbegin(); it != parts.rend(); ++it) {
    ConfigTree wrap;
    wrap[*it] = std::move(patch);
    patch = std::move(wrap);
  }
  merge_config(tree, patch);
}

ConfigTree load_scenario(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InvalidQuery("cannot open scenario file '" + path + "'");
  ConfigTree patch;
  try {
    patch = ConfigTree::parse(in, nullptr, true, true);
  } catch (const nlohmann::json::parse_error& e) {
    throw InvalidQuery("scenario '" + path + "': " + e.what());
  }
  ConfigTree tree = default_config_tree();
  merge_config(tree, patch);
  return tree;
}

SimConfig config_from_tree(const ConfigTree& t) {
  SimConfig c;
  try {
    c.seed = integer<std::uint64_t>(t, "seed");
    c.controller = ControllerChoice::parse(t.at("controller").get<std::string>());
    c.time_limit = t.at("time_limit").get<double>();
    c.dt_sim = t.at("dt_sim").get<double>();
    c.control_dt = t.at("control_dt").get<double>();
    c.replan_period = t.at("replan_period").get<double>();
    c.completion = t.at("completion").get<double>();
    c.kappa_loc = t.at("kappa_loc").get<double>();
    c.v_max = t.at("v_max").get<double>();
    c.a_max = t.at("a_max").get<double>();
    c.give_up_time = t.at("give_up_time").get<double>();
    c.stall_timeout = t.at("stall_timeout").get<double>();
    c.explore = t.at("explore").get<bool>();

    const auto& sc = t.at("scene");
    c.scene.kind = parse_scene_kind(sc.at("kind").get<std::string>());
    const auto size = sc.at("size").get<std::vector<double>>();
    if (size.size() != 3) throw InvalidQuery("config: scene.size needs three values");
    c.scene.size = Vec3(size[0], size[1], size[2]);
    c.scene.resolution = sc.at("resolution").get<double>();
    c.scene.seed = c.seed;

    const auto& s = t.at("sensor");
    c.sensor.n_beams = integer<int>(s, "n_beams");
    c.sensor.n_columns = integer<int>(s, "n_columns");
    c.sensor.fan_half_angle = s.at("fan_half_angle_deg").get<double>() * kDeg;
    c.sensor.fov = s.at("fov_deg").get<double>() * kDeg;
    c.sensor.max_range = s.at("max_range").get<double>();
    c.sensor.sigma_r = s.at("sigma_r").get<double>();
    c.sensor.rate = s.at("rate").get<double>();

    const auto& w = t.at("weights");
    c.weights = {w.at("alpha").get<double>(), w.at("beta").get<double>(), w.at("gamma").get<double>()};

    const auto& m = t.at("mpc");
    c.mpc.limits.omega_min = m.at("omega_min_deg").get<double>() * kDeg;
    c.mpc.limits.omega_max = m.at("omega_max_deg").get<double>() * kDeg;
    c.mpc.limits.u_max = m.at("u_max_deg").get<double>() * kDeg;
    c.mpc.horizon = integer<int>(m, "horizon");
    c.mpc.max_iterations = integer<int>(m, "max_iterations");
    c.mpc.rel_tolerance = m.at("rel_tolerance").get<double>();
    c.mpc.complexity_knots = integer<int>(m, "complexity_knots");
    c.mpc.constant_starts = integer<int>(m, "constant_starts");
    c.mpc.constant_scan = integer<int>(m, "constant_scan");
    c.mpc.gates.max_dist = m.at("max_dist").get<double>();
    c.mpc.gates.half_angle = m.at("half_angle_deg").get<double>() * kDeg;
    c.mpc.gates.sigma = m.at("sigma").get<double>();

    const auto& tb = t.at("table");
    c.table.n_c = integer<int>(tb, "n_c");
    c.table.half_window = tb.at("half_window_deg").get<double>() * kDeg;
    c.table.epsilon = tb.at("epsilon").get<double>();
    c.table.radius = tb.at("radius").get<double>();
    c.table.normal_k = integer<int>(tb, "normal_k");
    c.table.period = tb.at("period").get<double>();

    const auto& f = t.at("frontier");
    c.frontier.clustering.link_radius = f.at("link_radius").get<double>();
    c.frontier.clustering.max_extent = f.at("max_extent").get<double>();
    c.frontier.clustering.min_cells = integer<std::size_t>(f, "min_cells");
    c.frontier.r0 = f.at("r0").get<double>();
    c.frontier.merge = {f.at("alpha_m").get<double>(), f.at("beta_m").get<double>()};
    c.frontier.sampling.r_min = f.at("r_min").get<double>();
    c.frontier.sampling.r_max = f.at("r_max").get<double>();
    c.frontier.sampling.n_shells = integer<int>(f, "n_shells");
    c.frontier.sampling.n_az = integer<int>(f, "n_az");
    c.frontier.sampling.n_el = integer<int>(f, "n_el");
    c.frontier.safety_clearance = f.at("safety_clearance").get<double>();
    c.frontier.max_samples = integer<std::size_t>(f, "max_samples");

    const auto& p = t.at("planner");
    c.topo.lattice_spacing = p.at("lattice_spacing").get<double>();
    c.topo.k_neighbors = integer<int>(p, "k_neighbors");
    c.topo.max_edge_length = p.at("max_edge_length").get<double>();
    c.topo.odom_snap = p.at("odom_snap").get<double>();
    c.tour.w_f = p.at("w_f").get<double>();
    c.tour.big = p.at("big").get<double>();
    c.tour.hover_speed = p.at("hover_speed").get<double>();
    c.tour.exact_limit = integer<std::size_t>(p, "exact_limit");
    c.tour.attach_k = c.topo.k_neighbors;
    c.tour.attach_radius = c.topo.max_edge_length;
  } catch (const nlohmann::json::exception& e) {
    throw InvalidQuery(std::string("config: ") + e.what());
  }
  c.validate();
  return c;
}

}  // namespace scanplan
