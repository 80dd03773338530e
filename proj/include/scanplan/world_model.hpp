#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace scanplan {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Cell = Eigen::Vector3i;

/// Raised for queries that fall outside the contract of an operation
/// (e.g. a ray starting outside the grid).
class InvalidQuery : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

enum class CellState : std::uint8_t { Unknown = 0, Free = 1, Occupied = 2 };

/// Dense tri-state voxel map over an axis-aligned box.
///
/// Cells are stored x-fastest: flat = x + dx * (y + dy * z). Cell (i,j,k)
/// covers [origin + res*(i,j,k), origin + res*(i+1,j+1,k+1)).
class OccupancyGrid {
 public:
  OccupancyGrid(const Vec3& origin, double resolution, const Cell& dims,
                CellState fill = CellState::Unknown);

  const Vec3& origin() const { return origin_; }
  double resolution() const { return resolution_; }
  const Cell& dims() const { return dims_; }
  std::size_t size() const { return cells_.size(); }
  Vec3 extent() const { return dims_.cast<double>() * resolution_; }

  bool in_bounds(const Cell& c) const {
    return c.x() >= 0 && c.y() >= 0 && c.z() >= 0 && c.x() < dims_.x() &&
           c.y() < dims_.y() && c.z() < dims_.z();
  }
  bool contains(const Vec3& p) const;

  /// Cell containing p (may be out of bounds; check with in_bounds).
  Cell cell_of(const Vec3& p) const;
  Vec3 center_of(const Cell& c) const;
  Vec3 center_of(std::size_t flat) const { return center_of(unflatten(flat)); }

  std::size_t flatten(const Cell& c) const {
    return static_cast<std::size_t>(c.x()) +
           static_cast<std::size_t>(dims_.x()) *
               (static_cast<std::size_t>(c.y()) +
                static_cast<std::size_t>(dims_.y()) * static_cast<std::size_t>(c.z()));
  }
  Cell unflatten(std::size_t flat) const;

  CellState at(const Cell& c) const { return cells_[flatten(c)]; }
  CellState at(std::size_t flat) const { return cells_[flat]; }
  /// State at a world point; out-of-bounds points read as Unknown.
  CellState at_point(const Vec3& p) const;
  void set(const Cell& c, CellState s) { cells_[flatten(c)] = s; }
  void set(std::size_t flat, CellState s) { cells_[flat] = s; }

  std::span<const CellState> cells() const { return cells_; }
  std::size_t count(CellState s) const;

  bool operator==(const OccupancyGrid& other) const = default;

 private:
  Vec3 origin_;
  double resolution_;
  Cell dims_;
  std::vector<CellState> cells_;
};

/// Frame chain world <- body <- motor base <- motor(theta) <- lidar.
struct SensorPoseChain {
  Mat3 R_B_W = Mat3::Identity();
  Vec3 r_B_W = Vec3::Zero();
  Mat3 R_MB_B = Mat3::Identity();
  Vec3 r_MB_B = Vec3::Zero();
  Mat3 R_L_M = Mat3::Identity();
  Vec3 r_L_M = Vec3::Zero();
  double theta = 0.0;  // wrapped to [0, 2pi) by validate()

  /// Throws InvalidQuery unless every rotation is orthonormal with det +1
  /// (tolerance 1e-9); wraps theta.
  void validate();
};

double wrap_angle(double theta);  // into [0, 2pi)
Mat3 motor_rotation(double theta);
bool is_rotation(const Mat3& R, double tol = 1e-9);

Vec3 compose_sensor_pose(const SensorPoseChain& chain, const Vec3& p_lidar);

/// One beam of a scan: world-frame endpoint and whether it hit a surface.
struct Beam {
  Vec3 end;
  bool hit = false;
};

/// Walks the voxels pierced by segment a->b (3D-DDA), starting at cell(a).
/// The visitor returns false to stop early. Traversal stops when the segment
/// leaves the grid. Each voxel is visited at most once.
void traverse_segment(const OccupancyGrid& grid, const Vec3& a, const Vec3& b,
                      const std::function<bool(const Cell&)>& visit);

/// Integrates one scan taken from sensor_origin. Returns the number of cells
/// that changed from Unknown. Occupied cells are never cleared. If
/// newly_occupied is given, flat indices of cells that became Occupied are
/// appended to it.
std::size_t integrate_scan(OccupancyGrid& grid, const Vec3& sensor_origin,
                           std::span<const Beam> beams,
                           std::vector<std::size_t>* newly_occupied = nullptr,
                           std::vector<std::size_t>* newly_known = nullptr);

struct RayHit {
  Vec3 hit_point;  // center of the first Occupied voxel
  Cell hit_cell;
  double entry_distance = 0.0;  // distance along the ray to the voxel face
  std::vector<Cell> traversed;  // origin cell .. hit cell inclusive
};

std::optional<RayHit> cast_ray(const OccupancyGrid& grid, const Vec3& origin,
                               const Vec3& dir, double max_range);

/// True when no Occupied voxel lies strictly between `from` and `target`'s
/// cell along the straight segment, and the target center is within range.
bool line_of_sight(const OccupancyGrid& grid, const Vec3& from, const Cell& target,
                   double max_range);

/// Free cells with at least one Unknown face-neighbor, ascending flat index.
std::vector<std::size_t> detect_frontiers(const OccupancyGrid& grid);

/// Marks every cell within `clearance` of a known Occupied cell. Kept up to
/// date incrementally from integrate_scan's newly-occupied output.
class ClearanceMap {
 public:
  ClearanceMap(const OccupancyGrid& grid, double clearance);

  void mark_occupied(std::size_t flat);
  void mark_occupied(std::span<const std::size_t> flats) {
    for (auto f : flats) mark_occupied(f);
  }
  /// True when the cell is farther than `clearance` from every known
  /// Occupied cell. Out-of-bounds cells are never clear.
  bool is_clear(const Cell& c) const;
  double clearance() const { return clearance_; }

 private:
  const OccupancyGrid* grid_;
  double clearance_;
  std::vector<Cell> stencil_;
  std::vector<std::uint8_t> blocked_;
};

/// Navigable = known Free and clear of obstacles.
bool is_navigable(const OccupancyGrid& grid, const ClearanceMap& clearance, const Vec3& p);

/// Every voxel on a->b is known Free and clear.
bool segment_navigable(const OccupancyGrid& grid, const ClearanceMap& clearance,
                       const Vec3& a, const Vec3& b);

/// Every voxel on a->b is known Free (clearance ignored).
bool segment_free(const OccupancyGrid& grid, const Vec3& a, const Vec3& b);

// Flat binary layout: origin (3 x f64 LE), resolution (f64 LE), dims
// (3 x i64 LE), then one byte per cell in flat order (0/1/2).
void write_grid(std::ostream& out, const OccupancyGrid& grid);
OccupancyGrid read_grid(std::istream& in);
void save_grid(const std::string& path, const OccupancyGrid& grid);
OccupancyGrid load_grid(const std::string& path);

}  // namespace scanplan
