#pragma once

#include <iosfwd>
#include <span>
#include <vector>

#include "scanplan/world_model.hpp"

namespace scanplan {

struct TrajectoryLimits {
  double v_max = 3.0;
  double a_max = 2.0;
  /// Corner speed is min(v_max, corner_gain * (1 + cos(turn)) / 2); a
  /// non-positive gain means v_max.
  double corner_gain = 0.0;
};

/// One polyline segment traversed with a trapezoidal (or triangular) speed
/// profile: accelerate from v_start to v_peak, cruise, decelerate to v_end.
struct SpeedSegment {
  Vec3 from;
  Vec3 direction;  // unit
  double length = 0.0;
  double s_begin = 0.0;  // arc length at `from`
  double accel = 0.0;
  double v_start = 0.0;
  double v_peak = 0.0;
  double v_end = 0.0;
  double t_begin = 0.0;  // relative to t0
  double t_accel = 0.0;
  double t_cruise = 0.0;
  double t_decel = 0.0;
  double duration() const { return t_accel + t_cruise + t_decel; }
};

struct TrajectorySample {
  Vec3 position;
  Vec3 velocity;
  double speed = 0.0;
  double arc_length = 0.0;
};

class ReferenceTrajectory {
 public:
  ReferenceTrajectory() = default;
  ReferenceTrajectory(std::vector<Vec3> waypoints, std::vector<SpeedSegment> segments, double t0);

  const std::vector<Vec3>& waypoints() const { return waypoints_; }
  const std::vector<SpeedSegment>& segments() const { return segments_; }
  double t0() const { return t0_; }
  double total_time() const { return total_time_; }
  double length() const { return length_; }
  double end_time() const { return t0_ + total_time_; }

 private:
  std::vector<Vec3> waypoints_;
  std::vector<SpeedSegment> segments_;
  double t0_ = 0.0;
  double total_time_ = 0.0;
  double length_ = 0.0;
};

/// Time-parameterizes a polyline. The trajectory ends at rest; it starts at
/// v_start (clamped to what the first segments can absorb).
ReferenceTrajectory plan_reference(std::span<const Vec3> path, const TrajectoryLimits& limits,
                                   double t0, double v_start = 0.0);

/// Position and velocity at time t, clamped to [t0, t0 + total_time].
TrajectorySample sample_reference(const ReferenceTrajectory& traj, double t);

/// CSV rows "t,x,y,z,v" at the given spacing, including both ends.
void write_trajectory_csv(std::ostream& out, const ReferenceTrajectory& traj, double dt);

}  // namespace scanplan
