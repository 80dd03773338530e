#include "scanplan/world_model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <istream>
#include <limits>
#include <numbers>
#include <ostream>

namespace scanplan {

OccupancyGrid::OccupancyGrid(const Vec3& origin, double resolution, const Cell& dims,
                             CellState fill)
    : origin_(origin), resolution_(resolution), dims_(dims) {
  if (!(resolution > 0.0) || !std::isfinite(resolution)) {
    throw InvalidQuery("grid resolution must be positive");
  }
  if ((dims.array() < 1).any()) {
    throw InvalidQuery("grid dims must be >= 1 in every axis");
  }
  cells_.assign(static_cast<std::size_t>(dims.x()) * dims.y() * dims.z(), fill);
}

bool OccupancyGrid::contains(const Vec3& p) const {
  return in_bounds(cell_of(p));
}

Cell OccupancyGrid::cell_of(const Vec3& p) const {
  const Vec3 q = (p - origin_) / resolution_;
  return {static_cast<int>(std::floor(q.x())), static_cast<int>(std::floor(q.y())),
          static_cast<int>(std::floor(q.z()))};
}

Vec3 OccupancyGrid::center_of(const Cell& c) const {
  return origin_ + (c.cast<double>().array() + 0.5).matrix() * resolution_;
}

Cell OccupancyGrid::unflatten(std::size_t flat) const {
  const auto dx = static_cast<std::size_t>(dims_.x());
  const auto dy = static_cast<std::size_t>(dims_.y());
  return {static_cast<int>(flat % dx), static_cast<int>((flat / dx) % dy),
          static_cast<int>(flat / (dx * dy))};
}

CellState OccupancyGrid::at_point(const Vec3& p) const {
  const Cell c = cell_of(p);
  return in_bounds(c) ? at(c) : CellState::Unknown;
}

std::size_t OccupancyGrid::count(CellState s) const {
  return static_cast<std::size_t>(std::count(cells_.begin(), cells_.end(), s));
}

// ---------------------------------------------------------------------------
// Sensor pose chain

double wrap_angle(double theta) {
  constexpr double two_pi = 2.0 * std::numbers::pi;
  double w = std::fmod(theta, two_pi);
  if (w < 0.0) w += two_pi;
  if (w >= two_pi) w -= two_pi;  // fmod of tiny negatives
  return w;
}

Mat3 motor_rotation(double theta) {
  const double c = std::cos(theta);
  const double s = std::sin(theta);
  Mat3 R;
  R << c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0;
  return R;
}

bool is_rotation(const Mat3& R, double tol) {
  return (R.transpose() * R - Mat3::Identity()).cwiseAbs().maxCoeff() <= tol &&
         std::abs(R.determinant() - 1.0) <= tol;
}

void SensorPoseChain::validate() {
  if (!is_rotation(R_B_W) || !is_rotation(R_MB_B) || !is_rotation(R_L_M)) {
    throw InvalidQuery("sensor pose chain contains a non-rotation matrix");
  }
  theta = wrap_angle(theta);
}

Vec3 compose_sensor_pose(const SensorPoseChain& chain, const Vec3& p_lidar) {
  const Vec3 p_motor = chain.R_L_M * p_lidar + chain.r_L_M;
  const Vec3 p_base = motor_rotation(chain.theta) * p_motor;
  const Vec3 p_body = chain.R_MB_B * p_base + chain.r_MB_B;
  return chain.R_B_W * p_body + chain.r_B_W;
}

// ---------------------------------------------------------------------------
// Voxel traversal

namespace {

// Amanatides & Woo traversal over the segment a + t*(b-a), t in [0,1].
// visit(cell, t_enter) returns false to stop.
template <typename Visit>
void dda(const OccupancyGrid& grid, const Vec3& a, const Vec3& b, Visit&& visit) {
  Cell cell = grid.cell_of(a);
  if (!grid.in_bounds(cell)) return;
  const Cell end_cell = grid.cell_of(b);
  const Vec3 d = b - a;
  const double res = grid.resolution();
  constexpr double inf = std::numeric_limits<double>::infinity();

  int step[3];
  double t_max[3];
  double t_delta[3];
  for (int i = 0; i < 3; ++i) {
    if (d[i] > 0.0) {
      step[i] = 1;
      const double boundary = grid.origin()[i] + (cell[i] + 1) * res;
      t_max[i] = (boundary - a[i]) / d[i];
      t_delta[i] = res / d[i];
    } else if (d[i] < 0.0) {
      step[i] = -1;
      const double boundary = grid.origin()[i] + cell[i] * res;
      t_max[i] = (boundary - a[i]) / d[i];
      t_delta[i] = -res / d[i];
    } else {
      step[i] = 0;
      t_max[i] = inf;
      t_delta[i] = inf;
    }
  }

  double t_enter = 0.0;
  while (true) {
    if (!visit(static_cast<const Cell&>(cell), t_enter)) return;
    if (cell == end_cell) return;
    int axis = 0;
    if (t_max[1] < t_max[axis]) axis = 1;
    if (t_max[2] < t_max[axis]) axis = 2;
    if (t_max[axis] > 1.0) return;
    t_enter = t_max[axis];
    cell[axis] += step[axis];
    t_max[axis] += t_delta[axis];
    if (!grid.in_bounds(cell)) return;
  }
}

}  // namespace

void traverse_segment(const OccupancyGrid& grid, const Vec3& a, const Vec3& b,
                      const std::function<bool(const Cell&)>& visit) {
  dda(grid, a, b, [&](const Cell& c, double) { return visit(c); });
}

std::size_t integrate_scan(OccupancyGrid& grid, const Vec3& sensor_origin,
                           std::span<const Beam> beams,
                           std::vector<std::size_t>* newly_occupied,
                           std::vector<std::size_t>* newly_known) {
  std::size_t changed = 0;
  auto mark = [&](std::size_t flat, CellState next) {
    const CellState prev = grid.at(flat);
    if (prev == next || prev == CellState::Occupied) return;
    if (prev == CellState::Unknown) {
      ++changed;
      if (newly_known) newly_known->push_back(flat);
    }
    if (next == CellState::Occupied && newly_occupied) newly_occupied->push_back(flat);
    grid.set(flat, next);
  };

  // Endpoints first so that Occupied wins over any Free write in this scan.
  for (const auto& beam : beams) {
    if (!beam.hit) continue;
    const Cell c = grid.cell_of(beam.end);
    if (grid.in_bounds(c)) mark(grid.flatten(c), CellState::Occupied);
  }
  for (const auto& beam : beams) {
    const Cell end_cell = grid.cell_of(beam.end);
    dda(grid, sensor_origin, beam.end, [&](const Cell& c, double) {
      if (c == end_cell) return false;
      mark(grid.flatten(c), CellState::Free);
      return true;
    });
  }
  return changed;
}

std::optional<RayHit> cast_ray(const OccupancyGrid& grid, const Vec3& origin,
                               const Vec3& dir, double max_range) {
  if (!grid.contains(origin)) {
    throw InvalidQuery("cast_ray: origin outside grid");
  }
  if (std::abs(dir.norm() - 1.0) > 1e-9) {
    throw InvalidQuery("cast_ray: direction must be a unit vector");
  }
  if (!(max_range > 0.0)) {
    throw InvalidQuery("cast_ray: max_range must be positive");
  }
  RayHit result;
  bool hit = false;
  dda(grid, origin, origin + dir * max_range, [&](const Cell& c, double t) {
    result.traversed.push_back(c);
    if (grid.at(c) == CellState::Occupied) {
      hit = true;
      result.hit_cell = c;
      result.hit_point = grid.center_of(c);
      result.entry_distance = t * max_range;
      return false;
    }
    return true;
  });
  if (!hit) return std::nullopt;
  return result;
}

bool line_of_sight(const OccupancyGrid& grid, const Vec3& from, const Cell& target,
                   double max_range) {
  if (!grid.contains(from) || !grid.in_bounds(target)) return false;
  const Vec3 goal = grid.center_of(target);
  if ((goal - from).norm() > max_range) return false;
  bool clear = true;
  dda(grid, from, goal, [&](const Cell& c, double) {
    if (c == target) return false;
    if (grid.at(c) == CellState::Occupied) {
      clear = false;
      return false;
    }
    return true;
  });
  return clear && grid.at(target) != CellState::Occupied;
}

std::vector<std::size_t> detect_frontiers(const OccupancyGrid& grid) {
  static constexpr int kFace[6][3] = {{1, 0, 0},  {-1, 0, 0}, {0, 1, 0},
                                      {0, -1, 0}, {0, 0, 1},  {0, 0, -1}};
  std::vector<std::size_t> out;
  const Cell& d = grid.dims();
  for (int z = 0; z < d.z(); ++z) {
    for (int y = 0; y < d.y(); ++y) {
      for (int x = 0; x < d.x(); ++x) {
        const Cell c(x, y, z);
        if (grid.at(c) != CellState::Free) continue;
        for (const auto& o : kFace) {
          const Cell n(x + o[0], y + o[1], z + o[2]);
          if (grid.in_bounds(n) && grid.at(n) == CellState::Unknown) {
            out.push_back(grid.flatten(c));
            break;
          }
        }
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Clearance

ClearanceMap::ClearanceMap(const OccupancyGrid& grid, double clearance)
    : grid_(&grid), clearance_(clearance), blocked_(grid.size(), 0) {
  const int r = static_cast<int>(std::ceil(clearance / grid.resolution()));
  const double limit = clearance / grid.resolution() - 1e-9;
  for (int z = -r; z <= r; ++z)
    for (int y = -r; y <= r; ++y)
      for (int x = -r; x <= r; ++x)
        if (std::sqrt(double(x * x + y * y + z * z)) < limit || (x == 0 && y == 0 && z == 0))
          stencil_.emplace_back(x, y, z);
  const auto cells = grid.cells();
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (cells[i] == CellState::Occupied) mark_occupied(i);
  }
}

void ClearanceMap::mark_occupied(std::size_t flat) {
  const Cell c = grid_->unflatten(flat);
  for (const auto& o : stencil_) {
    const Cell n = c + o;
    if (grid_->in_bounds(n)) blocked_[grid_->flatten(n)] = 1;
  }
}

bool ClearanceMap::is_clear(const Cell& c) const {
  return grid_->in_bounds(c) && blocked_[grid_->flatten(c)] == 0;
}

bool is_navigable(const OccupancyGrid& grid, const ClearanceMap& clearance, const Vec3& p) {
  const Cell c = grid.cell_of(p);
  return grid.in_bounds(c) && grid.at(c) == CellState::Free && clearance.is_clear(c);
}

bool segment_navigable(const OccupancyGrid& grid, const ClearanceMap& clearance,
                       const Vec3& a, const Vec3& b) {
  if (!is_navigable(grid, clearance, a) || !is_navigable(grid, clearance, b)) return false;
  const Cell end_cell = grid.cell_of(b);
  bool ok = true;
  bool reached = false;
  dda(grid, a, b, [&](const Cell& c, double) {
    if (grid.at(c) != CellState::Free || !clearance.is_clear(c)) {
      ok = false;
      return false;
    }
    if (c == end_cell) reached = true;
    return true;
  });
  return ok && reached;
}

bool segment_free(const OccupancyGrid& grid, const Vec3& a, const Vec3& b) {
  if (!grid.contains(a) || !grid.contains(b)) return false;
  const Cell end_cell = grid.cell_of(b);
  bool ok = true;
  bool reached = false;
  dda(grid, a, b, [&](const Cell& c, double) {
    if (grid.at(c) != CellState::Free) {
      ok = false;
      return false;
    }
    if (c == end_cell) reached = true;
    return true;
  });
  return ok && reached;
}

// ---------------------------------------------------------------------------
// Serialization

namespace {

void put_u64(std::ostream& out, std::uint64_t v) {
  char bytes[8];
  for (int i = 0; i < 8; ++i) bytes[i] = static_cast<char>((v >> (8 * i)) & 0xffu);
  out.write(bytes, 8);
}

std::uint64_t get_u64(std::istream& in) {
  unsigned char bytes[8];
  in.read(reinterpret_cast<char*>(bytes), 8);
  if (!in) throw InvalidQuery("grid file truncated in header");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
  return v;
}

void put_f64(std::ostream& out, double v) { put_u64(out, std::bit_cast<std::uint64_t>(v)); }
double get_f64(std::istream& in) { return std::bit_cast<double>(get_u64(in)); }

}  // namespace

void write_grid(std::ostream& out, const OccupancyGrid& grid) {
  for (int i = 0; i < 3; ++i) put_f64(out, grid.origin()[i]);
  put_f64(out, grid.resolution());
  for (int i = 0; i < 3; ++i) put_u64(out, static_cast<std::uint64_t>(std::int64_t{grid.dims()[i]}));
  const auto cells = grid.cells();
  out.write(reinterpret_cast<const char*>(cells.data()), static_cast<std::streamsize>(cells.size()));
}

OccupancyGrid read_grid(std::istream& in) {
  Vec3 origin;
  for (int i = 0; i < 3; ++i) origin[i] = get_f64(in);
  const double res = get_f64(in);
  Cell dims;
  for (int i = 0; i < 3; ++i) {
    const auto v = static_cast<std::int64_t>(get_u64(in));
    if (v < 1 || v > std::numeric_limits<int>::max()) throw InvalidQuery("grid file: bad dims");
    dims[i] = static_cast<int>(v);
  }
  OccupancyGrid grid(origin, res, dims);
  std::vector<std::uint8_t> raw(grid.size());
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (static_cast<std::size_t>(in.gcount()) != raw.size()) {
    throw InvalidQuery("grid file truncated in body");
  }
  for (std::size_t i = 0; i < raw.size(); ++i) {
    if (raw[i] > 2) throw InvalidQuery("grid file: invalid cell state byte");
    grid.set(i, static_cast<CellState>(raw[i]));
  }
  return grid;
}

void save_grid(const std::string& path, const OccupancyGrid& grid) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InvalidQuery("cannot open for writing: " + path);
  write_grid(out, grid);
}

OccupancyGrid load_grid(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidQuery("cannot open for reading: " + path);
  return read_grid(in);
}

}  // namespace scanplan
