#pragma once

#include <memory>
#include <mutex>
#include <span>
#include <vector>

#include "scanplan/trajectory.hpp"
#include "scanplan/world_model.hpp"

namespace scanplan {

struct ScanState {
  double theta = 0.0;  // unwrapped; wrap only for lookups
  double omega = 0.0;
};

struct ScanLimits {
  double omega_min = 0.5235987755982988;  // 30 deg/s
  double omega_max = 6.283185307179586;   // 360 deg/s
  double u_max = 12.566370614359172;      // 4 pi rad/s^2
};

struct ControlSequence {
  std::vector<double> u;  // angular accelerations u_0 .. u_{N-1}
  double dt = 0.1;
  std::size_t horizon() const { return u.size(); }
};

/// omega_{i+1} = sat(omega_i + u_i dt), theta_{i+1} = theta_i + omega_{i+1} dt.
/// Returns x_1 .. x_N.
std::vector<ScanState> predict_scan_states(const ScanState& x0, const ControlSequence& u,
                                           const ScanLimits& limits);

/// R_B_W * R_MB_B * (cos theta, sin theta, 0).
Vec3 scan_direction(const Mat3& R_B_W, const Mat3& R_MB_B, double theta);

struct NormalEstimate {
  Vec3 normal = Vec3::Zero();
  bool valid = false;
};

/// Plane normal of the K nearest neighbours of `query` (smallest-eigenvalue
/// eigenvector of their covariance), oriented toward `viewpoint`. Invalid when
/// fewer than K points exist or the neighbourhood is not planar-spanning
/// (rank < 2).
NormalEstimate estimate_normal(std::span<const Vec3> points, const Vec3& query, int K,
                               const Vec3& viewpoint);

struct SurfacePoint {
  Vec3 position;
  Vec3 normal;
};

/// Direction-dependent A-optimality cost sampled at uniformly spaced motor
/// angles, with periodic linear interpolation between samples.
class UncertaintyTable {
 public:
  UncertaintyTable() = default;
  /// values[k] is the cost at angle 2 pi k / values.size().
  explicit UncertaintyTable(std::vector<double> values, double epsilon = 1e-3, double stamp = 0.0);

  std::size_t size() const { return values_.size(); }
  const std::vector<double>& values() const { return values_; }
  double angle(std::size_t k) const;
  double spacing() const;
  double epsilon() const { return epsilon_; }
  /// Cost of an unobserved direction, 3 / epsilon.
  double empty_value() const { return 3.0 / epsilon_; }
  double stamp() const { return stamp_; }

  /// Traces of F + eps I per knot, kept for the AM-HM bound check.
  std::vector<double> fisher_traces;

 private:
  std::vector<double> values_;
  double epsilon_ = 1e-3;
  double stamp_ = 0.0;
};

/// f(theta_c) = tr((F + eps I)^-1), F = sum n n^T over points whose azimuth
/// from `sensor` lies within half_window of theta_c.
UncertaintyTable build_uncertainty_table(std::span<const SurfacePoint> points,
                                         const Vec3& sensor, int n_c, double half_window,
                                         double epsilon = 1e-3, double stamp = 0.0);

double lookup_uncertainty(const UncertaintyTable& table, double theta);
/// Slope d f / d theta of the interpolant on the segment containing theta.
double uncertainty_slope(const UncertaintyTable& table, double theta);

/// exp(-d^2 / (2 sigma^2)) * intensity.
double frontier_reward(const Vec3& p, const Vec3& center, double intensity, double sigma);

struct ClusterSummary {
  Vec3 center;
  double intensity = 1.0;
};

struct FrontierGates {
  double max_dist = 15.0;
  double half_angle = 0.6108652381980153;  // 35 deg
  double sigma = 8.0;
};

struct ComplexityCost {
  double cost = 0.0;   // R_total - visible reward
  double total = 0.0;  // R_total
};

/// Reward of all clusters minus the reward of those inside the distance and
/// angular gates around `direction`.
ComplexityCost complexity_cost(const Vec3& scan_position, const Vec3& direction,
                               std::span<const ClusterSummary> clusters,
                               const FrontierGates& gates);

ComplexityCost complexity_cost(const Vec3& scan_position, double theta,
                               std::span<const ClusterSummary> clusters,
                               const FrontierGates& gates, const Mat3& R_B_W = Mat3::Identity(),
                               const Mat3& R_MB_B = Mat3::Identity());

struct MpcWeights {
  double alpha = 1.0;   // frontier complexity
  double beta = 0.5;    // localization uncertainty
  double gamma = 0.05;  // control smoothness
};

struct MpcOptions {
  ScanLimits limits;
  double dt = 0.1;
  int horizon = 20;
  int max_iterations = 30;
  double rel_tolerance = 1e-4;
  /// Knots of the per-step piecewise-linear complexity surrogate.
  int complexity_knots = 36;
  FrontierGates gates;
  Mat3 R_B_W = Mat3::Identity();
  Mat3 R_MB_B = Mat3::Identity();
  /// Divide J by R_total and f by the table's empty value.
  bool normalize = true;
  /// Extra constant-acceleration starts tried besides the warm start.
  int constant_starts = 5;
  /// Constant-acceleration levels scanned (objective only) to seed one more
  /// descent from the best of them; 0 disables.
  int constant_scan = 61;
};

/// Precomputed per-step surrogates for one solve.
class MpcProblem {
 public:
  MpcProblem(const ScanState& x0, std::span<const Vec3> positions, const UncertaintyTable& table,
             std::span<const ClusterSummary> clusters, const MpcWeights& weights,
             const MpcOptions& options);

  struct Breakdown {
    double total = 0.0;
    double complexity = 0.0;   // sum of (normalized) J over the horizon
    double uncertainty = 0.0;  // sum of (normalized) f over the horizon
    double smoothness = 0.0;
  };

  Breakdown evaluate(std::span<const double> u) const;
  double objective(std::span<const double> u) const { return evaluate(u).total; }
  /// Gradient of the surrogate objective (one-sided slopes at knots).
  std::vector<double> gradient(std::span<const double> u) const;

  std::size_t horizon() const { return static_cast<std::size_t>(options_.horizon); }
  const MpcOptions& options() const { return options_; }
  const ScanState& initial_state() const { return x0_; }
  double complexity_at(std::size_t step, double theta) const;

 private:
  double complexity_slope(std::size_t step, double theta) const;

  ScanState x0_;
  const UncertaintyTable* table_;
  MpcWeights weights_;
  MpcOptions options_;
  std::vector<std::vector<double>> j_knots_;  // per step, normalized
  double f_scale_ = 1.0;
};

struct MpcSolution {
  ControlSequence control;
  std::vector<ScanState> predicted;  // x_1 .. x_N
  double omega_command = 0.0;        // omega_1
  double objective = 0.0;
  double warm_objective = 0.0;
  double complexity_sum = 0.0;
  double uncertainty_sum = 0.0;
  int iterations = 0;
};

/// Shift by one step, duplicate the last element, clip to the box.
ControlSequence shift_warm_start(const ControlSequence& previous, int horizon, double dt,
                                 double u_max);

MpcSolution solve_fu_mpc(const ScanState& x0, const ReferenceTrajectory& traj, double t0,
                         const UncertaintyTable& table, std::span<const ClusterSummary> clusters,
                         const MpcWeights& weights, const ControlSequence& warm,
                         const MpcOptions& options = {});

/// Same solve with sensor positions given directly (p_1 .. p_N).
MpcSolution solve_fu_mpc(const ScanState& x0, std::span<const Vec3> positions,
                         const UncertaintyTable& table, std::span<const ClusterSummary> clusters,
                         const MpcWeights& weights, const ControlSequence& warm,
                         const MpcOptions& options = {});

/// Single-slot publish/subscribe holder: readers always get a complete table.
class TableChannel {
 public:
  void publish(std::shared_ptr<const UncertaintyTable> table) {
    std::lock_guard lock(mutex_);
    table_ = std::move(table);
  }
  std::shared_ptr<const UncertaintyTable> latest() const {
    std::lock_guard lock(mutex_);
    return table_;
  }

 private:
  mutable std::mutex mutex_;
  std::shared_ptr<const UncertaintyTable> table_;
};

}  // namespace scanplan
