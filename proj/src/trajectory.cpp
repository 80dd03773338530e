#include "scanplan/trajectory.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <ostream>

namespace scanplan {

ReferenceTrajectory::ReferenceTrajectory(std::vector<Vec3> waypoints,
                                         std::vector<SpeedSegment> segments, double t0)
    : waypoints_(std::move(waypoints)), segments_(std::move(segments)), t0_(t0) {
  for (const auto& s : segments_) {
    total_time_ += s.duration();
    length_ += s.length;
  }
}

ReferenceTrajectory plan_reference(std::span<const Vec3> path, const TrajectoryLimits& limits,
                                   double t0, double v_start) {
  if (path.empty()) throw InvalidQuery("plan_reference: empty path");
  if (!(limits.v_max > 0.0) || !(limits.a_max > 0.0)) {
    throw InvalidQuery("plan_reference: limits must be positive");
  }
  std::vector<Vec3> pts{path.front()};
  for (const auto& p : path.subspan(1)) {
    if ((p - pts.back()).norm() > 1e-9) pts.push_back(p);
  }
  if (pts.size() < 2) return ReferenceTrajectory(std::move(pts), {}, t0);

  const std::size_t n = pts.size() - 1;
  const double a = limits.a_max;
  const double vmax = limits.v_max;
  const double gain = limits.corner_gain > 0.0 ? limits.corner_gain : vmax;

  std::vector<double> len(n);
  std::vector<Vec3> dir(n);
  for (std::size_t i = 0; i < n; ++i) {
    const Vec3 d = pts[i + 1] - pts[i];
    len[i] = d.norm();
    dir[i] = d / len[i];
  }

  std::vector<double> v(n + 1);
  v[0] = std::clamp(v_start, 0.0, vmax);
  v[n] = 0.0;
  for (std::size_t i = 1; i < n; ++i) {
    const double cos_turn = std::clamp(dir[i - 1].dot(dir[i]), -1.0, 1.0);
    v[i] = std::min(vmax, gain * (1.0 + cos_turn) / 2.0);
  }
  for (std::size_t i = 0; i < n; ++i) v[i + 1] = std::min(v[i + 1], std::sqrt(v[i] * v[i] + 2.0 * a * len[i]));
  for (std::size_t i = n; i-- > 0;) v[i] = std::min(v[i], std::sqrt(v[i + 1] * v[i + 1] + 2.0 * a * len[i]));

  std::vector<SpeedSegment> segs(n);
  double t = 0.0, s = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    SpeedSegment& seg = segs[i];
    seg.from = pts[i];
    seg.direction = dir[i];
    seg.length = len[i];
    seg.s_begin = s;
    seg.accel = a;
    seg.v_start = v[i];
    seg.v_end = v[i + 1];
    seg.v_peak = std::min(vmax, std::sqrt(a * len[i] + 0.5 * (v[i] * v[i] + v[i + 1] * v[i + 1])));
    seg.v_peak = std::max({seg.v_peak, seg.v_start, seg.v_end});
    seg.t_accel = (seg.v_peak - seg.v_start) / a;
    seg.t_decel = (seg.v_peak - seg.v_end) / a;
    const double d_acc = (seg.v_peak * seg.v_peak - seg.v_start * seg.v_start) / (2.0 * a);
    const double d_dec = (seg.v_peak * seg.v_peak - seg.v_end * seg.v_end) / (2.0 * a);
    const double cruise = std::max(0.0, len[i] - d_acc - d_dec);
    seg.t_cruise = seg.v_peak > 0.0 ? cruise / seg.v_peak : 0.0;
    seg.t_begin = t;
    t += seg.duration();
    s += len[i];
  }
  return ReferenceTrajectory(std::move(pts), std::move(segs), t0);
}

TrajectorySample sample_reference(const ReferenceTrajectory& traj, double t) {
  TrajectorySample out;
  const auto& segs = traj.segments();
  if (segs.empty()) {
    out.position = traj.waypoints().empty() ? Vec3::Zero() : traj.waypoints().front();
    out.velocity = Vec3::Zero();
    return out;
  }
  const double rel = t - traj.t0();
  if (rel >= traj.total_time()) {
    out.position = traj.waypoints().back();
    out.velocity = Vec3::Zero();
    out.arc_length = traj.length();
    return out;
  }
  const double tau_all = std::max(rel, 0.0);
  auto it = std::upper_bound(segs.begin(), segs.end(), tau_all,
                             [](double x, const SpeedSegment& s) { return x < s.t_begin; });
  const SpeedSegment& seg = *std::prev(it);
  const double tau = tau_all - seg.t_begin;
  const double a = seg.accel;
  double s, v;
  const double d_acc = seg.v_start * seg.t_accel + 0.5 * a * seg.t_accel * seg.t_accel;
  if (tau < seg.t_accel) {
    s = seg.v_start * tau + 0.5 * a * tau * tau;
    v = seg.v_start + a * tau;
  } else if (tau < seg.t_accel + seg.t_cruise) {
    s = d_acc + seg.v_peak * (tau - seg.t_accel);
    v = seg.v_peak;
  } else {
    const double td = std::min(tau - seg.t_accel - seg.t_cruise, seg.t_decel);
    s = d_acc + seg.v_peak * seg.t_cruise + seg.v_peak * td - 0.5 * a * td * td;
    v = seg.v_peak - a * td;
  }
  s = std::clamp(s, 0.0, seg.length);
  out.position = seg.from + seg.direction * s;
  out.speed = std::max(v, 0.0);
  out.velocity = seg.direction * out.speed;
  out.arc_length = seg.s_begin + s;
  return out;
}

void write_trajectory_csv(std::ostream& out, const ReferenceTrajectory& traj, double dt) {
  out << "t,x,y,z,v\n" << std::setprecision(10);
  const int steps = dt > 0.0 ? static_cast<int>(std::ceil(traj.total_time() / dt - 1e-9)) : 0;
  for (int k = 0; k <= steps; ++k) {
    const double t = traj.t0() + std::min(k * dt, traj.total_time());
    const auto s = sample_reference(traj, t);
    out << t << ',' << s.position.x() << ',' << s.position.y() << ',' << s.position.z() << ','
        << s.speed << '\n';
  }
}

}  // namespace scanplan
