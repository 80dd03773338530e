#include "scanplan/scan_controller.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include <Eigen/Eigenvalues>

namespace scanplan {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

struct KnotPosition {
  std::size_t k = 0;
  double frac = 0.0;
};

// Locates theta on a periodic grid of n uniformly spaced knots. An angle equal
// to a knot angle (as UncertaintyTable::angle computes it) snaps to that knot
// so lookups there are exact.
KnotPosition locate(std::size_t n, double theta) {
  const double wrapped = wrap_angle(theta);
  const double pos = wrapped / kTwoPi * static_cast<double>(n);
  const double nearest = std::round(pos);
  if (kTwoPi * nearest / static_cast<double>(n) == wrapped) {
    return {static_cast<std::size_t>(nearest) % n, 0.0};
  }
  const double base = std::floor(pos);
  return {static_cast<std::size_t>(base) % n, pos - base};
}

double periodic_value(const std::vector<double>& v, double theta) {
  const auto [k, frac] = locate(v.size(), theta);
  if (frac == 0.0) return v[k];
  return v[k] + frac * (v[(k + 1) % v.size()] - v[k]);
}

double periodic_slope(const std::vector<double>& v, double theta) {
  const auto [k, frac] = locate(v.size(), theta);
  (void)frac;
  const double spacing = kTwoPi / static_cast<double>(v.size());
  return (v[(k + 1) % v.size()] - v[k]) / spacing;
}

// tr(A^-1) for a symmetric 3x3 matrix via cofactors; +inf when singular.
double trace_of_inverse(const Mat3& A) {
  const double c00 = A(1, 1) * A(2, 2) - A(1, 2) * A(2, 1);
  const double c11 = A(0, 0) * A(2, 2) - A(0, 2) * A(2, 0);
  const double c22 = A(0, 0) * A(1, 1) - A(0, 1) * A(1, 0);
  const double det = A(0, 0) * c00 - A(0, 1) * (A(1, 0) * A(2, 2) - A(1, 2) * A(2, 0)) +
                     A(0, 2) * (A(1, 0) * A(2, 1) - A(1, 1) * A(2, 0));
  if (!(det > 0.0)) return std::numeric_limits<double>::infinity();
  return (c00 + c11 + c22) / det;
}

double clamp_omega(double w, const ScanLimits& limits) {
  return std::clamp(w, limits.omega_min, limits.omega_max);
}

}  // namespace

std::vector<ScanState> predict_scan_states(const ScanState& x0, const ControlSequence& u,
                                           const ScanLimits& limits) {
  std::vector<ScanState> states;
  states.reserve(u.u.size());
  ScanState x = x0;
  for (double ui : u.u) {
    x.omega = clamp_omega(x.omega + ui * u.dt, limits);
    x.theta = x.theta + x.omega * u.dt;
    states.push_back(x);
  }
  return states;
}

Vec3 scan_direction(const Mat3& R_B_W, const Mat3& R_MB_B, double theta) {
  return R_B_W * (R_MB_B * Vec3(std::cos(theta), std::sin(theta), 0.0));
}

NormalEstimate estimate_normal(std::span<const Vec3> points, const Vec3& query, int K,
                               const Vec3& viewpoint) {
  NormalEstimate out;
  if (K < 3 || points.size() < static_cast<std::size_t>(K)) return out;

  std::vector<std::pair<double, std::size_t>> dist(points.size());
  for (std::size_t i = 0; i < points.size(); ++i) dist[i] = {(points[i] - query).squaredNorm(), i};
  std::partial_sort(dist.begin(), dist.begin() + K, dist.end());

  Vec3 mean = Vec3::Zero();
  for (int i = 0; i < K; ++i) mean += points[dist[static_cast<std::size_t>(i)].second];
  mean /= K;
  Mat3 cov = Mat3::Zero();
  for (int i = 0; i < K; ++i) {
    const Vec3 d = points[dist[static_cast<std::size_t>(i)].second] - mean;
    cov += d * d.transpose();
  }
  Eigen::SelfAdjointEigenSolver<Mat3> eig(cov);
  const auto& lambda = eig.eigenvalues();
  if (!(lambda(2) > 1e-12) || lambda(1) <= 1e-6 * lambda(2)) return out;

  Vec3 n = eig.eigenvectors().col(0).normalized();
  if (n.dot(viewpoint - query) < 0.0) n = -n;
  out.normal = n;
  out.valid = true;
  return out;
}

UncertaintyTable::UncertaintyTable(std::vector<double> values, double epsilon, double stamp)
    : values_(std::move(values)), epsilon_(epsilon), stamp_(stamp) {
  if (values_.size() < 2) throw InvalidQuery("uncertainty table needs at least two samples");
  if (!(epsilon_ > 0.0)) epsilon_ = 0.0;
}

double UncertaintyTable::angle(std::size_t k) const {
  return kTwoPi * static_cast<double>(k) / static_cast<double>(values_.size());
}

double UncertaintyTable::spacing() const { return kTwoPi / static_cast<double>(values_.size()); }

UncertaintyTable build_uncertainty_table(std::span<const SurfacePoint> points,
                                         const Vec3& sensor, int n_c, double half_window,
                                         double epsilon, double stamp) {
  if (n_c < 8) throw InvalidQuery("build_uncertainty_table: need at least 8 candidate angles");
  std::vector<double> azimuth(points.size());
  for (std::size_t i = 0; i < points.size(); ++i) {
    const Vec3 d = points[i].position - sensor;
    azimuth[i] = std::atan2(d.y(), d.x());
  }
  std::vector<double> values(static_cast<std::size_t>(n_c));
  std::vector<double> traces(static_cast<std::size_t>(n_c));
  for (int c = 0; c < n_c; ++c) {
    const double theta_c = kTwoPi * c / n_c;
    Mat3 F = Mat3::Zero();
    for (std::size_t i = 0; i < points.size(); ++i) {
      double diff = std::remainder(azimuth[i] - theta_c, kTwoPi);
      if (std::abs(diff) <= half_window) F += points[i].normal * points[i].normal.transpose();
    }
    const Mat3 A = F + epsilon * Mat3::Identity();
    values[static_cast<std::size_t>(c)] = trace_of_inverse(A);
    traces[static_cast<std::size_t>(c)] = A.trace();
  }
  UncertaintyTable table(std::move(values), epsilon, stamp);
  table.fisher_traces = std::move(traces);
  return table;
}

double lookup_uncertainty(const UncertaintyTable& table, double theta) {
  return periodic_value(table.values(), theta);
}

double uncertainty_slope(const UncertaintyTable& table, double theta) {
  return periodic_slope(table.values(), theta);
}

double frontier_reward(const Vec3& p, const Vec3& center, double intensity, double sigma) {
  const double d2 = (p - center).squaredNorm();
  return std::exp(-d2 / (2.0 * sigma * sigma)) * intensity;
}

ComplexityCost complexity_cost(const Vec3& scan_position, const Vec3& direction,
                               std::span<const ClusterSummary> clusters,
                               const FrontierGates& gates) {
  ComplexityCost out;
  const double cos_gate = std::cos(gates.half_angle);
  const Vec3 dir = direction.normalized();
  double visible = 0.0;
  for (const auto& c : clusters) {
    const double r = frontier_reward(scan_position, c.center, c.intensity, gates.sigma);
    out.total += r;
    const Vec3 to = c.center - scan_position;
    const double d = to.norm();
    if (d > gates.max_dist) continue;
    if (d == 0.0 || dir.dot(to) / d >= cos_gate) visible += r;
  }
  out.cost = std::max(0.0, out.total - visible);
  return out;
}

ComplexityCost complexity_cost(const Vec3& scan_position, double theta,
                               std::span<const ClusterSummary> clusters,
                               const FrontierGates& gates, const Mat3& R_B_W,
                               const Mat3& R_MB_B) {
  return complexity_cost(scan_position, scan_direction(R_B_W, R_MB_B, theta), clusters, gates);
}

// ---------------------------------------------------------------------------
// Receding-horizon problem

MpcProblem::MpcProblem(const ScanState& x0, std::span<const Vec3> positions,
                       const UncertaintyTable& table, std::span<const ClusterSummary> clusters,
                       const MpcWeights& weights, const MpcOptions& options)
    : x0_(x0), table_(&table), weights_(weights), options_(options) {
  if (options_.horizon < 2) throw InvalidQuery("MPC horizon must be at least 2");
  if (!(options_.dt > 0.0)) throw InvalidQuery("MPC dt must be positive");
  if (weights.alpha < 0.0 || weights.beta < 0.0 || weights.gamma < 0.0 ||
      (weights.alpha == 0.0 && weights.beta == 0.0 && weights.gamma == 0.0)) {
    throw InvalidQuery("MPC weights must be non-negative and not all zero");
  }
  const std::size_t n = horizon();
  const std::size_t knots = static_cast<std::size_t>(std::max(options_.complexity_knots, 2));
  j_knots_.assign(n, std::vector<double>(knots, 0.0));
  if (weights.alpha > 0.0 && !clusters.empty()) {
    for (std::size_t k = 0; k < n; ++k) {
      const Vec3& p = positions.empty() ? Vec3::Zero().eval()
                                        : positions[std::min(k, positions.size() - 1)];
      for (std::size_t j = 0; j < knots; ++j) {
        const double theta = kTwoPi * static_cast<double>(j) / static_cast<double>(knots);
        const auto c = complexity_cost(p, theta, clusters, options_.gates, options_.R_B_W,
                                       options_.R_MB_B);
        j_knots_[k][j] = options_.normalize ? (c.total > 0.0 ? c.cost / c.total : 0.0) : c.cost;
      }
    }
  }
  f_scale_ = options_.normalize ? 1.0 / table.empty_value() : 1.0;
  if (!std::isfinite(f_scale_)) f_scale_ = 1.0;
}

double MpcProblem::complexity_at(std::size_t step, double theta) const {
  return periodic_value(j_knots_[step], theta);
}

double MpcProblem::complexity_slope(std::size_t step, double theta) const {
  return periodic_slope(j_knots_[step], theta);
}

MpcProblem::Breakdown MpcProblem::evaluate(std::span<const double> u) const {
  Breakdown b;
  const auto& lim = options_.limits;
  ScanState x = x0_;
  for (std::size_t k = 0; k < u.size(); ++k) {
    x.omega = clamp_omega(x.omega + u[k] * options_.dt, lim);
    x.theta += x.omega * options_.dt;
    b.complexity += complexity_at(k, x.theta);
    b.uncertainty += lookup_uncertainty(*table_, x.theta) * f_scale_;
  }
  for (std::size_t k = 0; k + 1 < u.size(); ++k) b.smoothness += (u[k + 1] - u[k]) * (u[k + 1] - u[k]);
  b.total = weights_.alpha * b.complexity + weights_.beta * b.uncertainty + weights_.gamma * b.smoothness;
  return b;
}

std::vector<double> MpcProblem::gradient(std::span<const double> u) const {
  const std::size_t n = u.size();
  const auto& lim = options_.limits;
  const double dt = options_.dt;
  std::vector<double> theta(n), pre(n);
  ScanState x = x0_;
  for (std::size_t k = 0; k < n; ++k) {
    pre[k] = x.omega + u[k] * dt;
    x.omega = clamp_omega(pre[k], lim);
    x.theta += x.omega * dt;
    theta[k] = x.theta;
  }
  std::vector<double> g(n);
  for (std::size_t k = 0; k < n; ++k) {
    g[k] = weights_.alpha * complexity_slope(k, theta[k]) +
           weights_.beta * uncertainty_slope(*table_, theta[k]) * f_scale_;
  }
  // adj[k]: total derivative w.r.t. omega_{k+1}; pass[k]: d omega_{k+1} / d pre[k].
  std::vector<double> grad(n, 0.0);
  double tail = 0.0;
  double adj_next = 0.0;
  double pass_next = 0.0;
  for (std::size_t k = n; k-- > 0;) {
    tail += g[k];
    const double adj = dt * tail + pass_next * adj_next;
    double pass = 1.0;
    if (pre[k] > lim.omega_max) {
      pass = adj > 0.0 ? 1.0 : 0.0;
    } else if (pre[k] < lim.omega_min) {
      pass = adj < 0.0 ? 1.0 : 0.0;
    }
    grad[k] = pass * dt * adj;
    adj_next = adj;
    pass_next = pass;
  }
  const double two_gamma = 2.0 * weights_.gamma;
  for (std::size_t k = 0; k < n; ++k) {
    if (k > 0) grad[k] += two_gamma * (u[k] - u[k - 1]);
    if (k + 1 < n) grad[k] -= two_gamma * (u[k + 1] - u[k]);
  }
  return grad;
}

ControlSequence shift_warm_start(const ControlSequence& previous, int horizon, double dt,
                                 double u_max) {
  ControlSequence out;
  out.dt = dt;
  out.u.assign(static_cast<std::size_t>(horizon), 0.0);
  if (!previous.u.empty()) {
    for (int k = 0; k < horizon; ++k) {
      const std::size_t src = std::min(static_cast<std::size_t>(k) + 1, previous.u.size() - 1);
      out.u[static_cast<std::size_t>(k)] = previous.u[src];
    }
  }
  for (auto& v : out.u) v = std::clamp(v, -u_max, u_max);
  return out;
}

namespace {

struct Descent {
  std::vector<double> u;
  double value = 0.0;
  int iterations = 0;
};

Descent projected_gradient(const MpcProblem& problem, std::vector<double> u) {
  const auto& opt = problem.options();
  const double u_max = opt.limits.u_max;
  auto project = [u_max](std::vector<double>& v) {
    for (auto& x : v) x = std::clamp(x, -u_max, u_max);
  };
  project(u);
  Descent d{u, problem.objective(u), 0};
  double step = -1.0;
  std::vector<double> trial(u.size());
  while (d.iterations < opt.max_iterations) {
    const auto grad = problem.gradient(d.u);
    double gmax = 0.0;
    for (double gk : grad) gmax = std::max(gmax, std::abs(gk));
    if (gmax == 0.0) break;
    if (step <= 0.0) step = u_max / gmax;
    bool accepted = false;
    for (int backtrack = 0; backtrack < 40; ++backtrack) {
      for (std::size_t k = 0; k < trial.size(); ++k) trial[k] = d.u[k] - step * grad[k];
      project(trial);
      const double value = problem.objective(trial);
      if (value < d.value) {
        const double rel = (d.value - value) / std::max(std::abs(d.value), 1e-12);
        d.u = trial;
        d.value = value;
        accepted = true;
        ++d.iterations;
        step *= 2.0;
        if (rel < opt.rel_tolerance) return d;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) break;
  }
  return d;
}

}  // namespace

MpcSolution solve_fu_mpc(const ScanState& x0, std::span<const Vec3> positions,
                         const UncertaintyTable& table, std::span<const ClusterSummary> clusters,
                         const MpcWeights& weights, const ControlSequence& warm,
                         const MpcOptions& options) {
  const MpcProblem problem(x0, positions, table, clusters, weights, options);
  const double u_max = options.limits.u_max;
  const ControlSequence start = shift_warm_start(warm, options.horizon, options.dt, u_max);

  MpcSolution sol;
  sol.warm_objective = problem.objective(start.u);
  Descent best = projected_gradient(problem, start.u);

  const int extra = std::max(options.constant_starts, 0);
  for (int s = 0; s < extra; ++s) {
    const double level = extra == 1 ? 0.0 : -u_max + 2.0 * u_max * s / (extra - 1);
    std::vector<double> init(start.u.size(), level);
    Descent d = projected_gradient(problem, std::move(init));
    if (d.value < best.value) best = std::move(d);
  }

  // Narrow table minima trap the gradient; a cheap scan over constant
  // accelerations finds the right basin for one more descent.
  if (options.constant_scan > 1) {
    std::vector<double> init(start.u.size());
    double scan_best = std::numeric_limits<double>::infinity(), scan_level = 0.0;
    for (int s = 0; s < options.constant_scan; ++s) {
      const double level = -u_max + 2.0 * u_max * s / (options.constant_scan - 1);
      std::fill(init.begin(), init.end(), level);
      const double v = problem.objective(init);
      if (v < scan_best) {
        scan_best = v;
        scan_level = level;
      }
    }
    std::fill(init.begin(), init.end(), scan_level);
    Descent d = projected_gradient(problem, std::move(init));
    if (d.value < best.value) best = std::move(d);
  }

  sol.control.u = std::move(best.u);
  sol.control.dt = options.dt;
  sol.iterations = best.iterations;
  const auto parts = problem.evaluate(sol.control.u);
  sol.objective = parts.total;
  sol.complexity_sum = parts.complexity;
  sol.uncertainty_sum = parts.uncertainty;
  sol.predicted = predict_scan_states(x0, sol.control, options.limits);
  sol.omega_command = sol.predicted.front().omega;
  return sol;
}

MpcSolution solve_fu_mpc(const ScanState& x0, const ReferenceTrajectory& traj, double t0,
                         const UncertaintyTable& table, std::span<const ClusterSummary> clusters,
                         const MpcWeights& weights, const ControlSequence& warm,
                         const MpcOptions& options) {
  std::vector<Vec3> positions;
  positions.reserve(static_cast<std::size_t>(options.horizon));
  for (int k = 1; k <= options.horizon; ++k) {
    positions.push_back(sample_reference(traj, t0 + k * options.dt).position);
  }
  return solve_fu_mpc(x0, positions, table, clusters, weights, warm, options);
}

}  // namespace scanplan
