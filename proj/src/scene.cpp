#include <algorithm>
#include <cmath>
#include <deque>
#include <random>
#include <sstream>

#include "scanplan/sim.hpp"

namespace scanplan {

SceneKind parse_scene_kind(const std::string& name) {
  if (name == "corridor") return SceneKind::Corridor;
  if (name == "multi_room") return SceneKind::MultiRoom;
  if (name == "cavern") return SceneKind::Cavern;
  throw InvalidQuery("unknown scene kind '" + name + "'");
}

std::string scene_kind_name(SceneKind kind) {
  switch (kind) {
    case SceneKind::Corridor: return "corridor";
    case SceneKind::MultiRoom: return "multi_room";
    case SceneKind::Cavern: return "cavern";
  }
  return "unknown";
}

std::uint64_t layout_hash(const OccupancyGrid& grid) {
  std::ostringstream buf;
  write_grid(buf, grid);
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : buf.str()) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

std::vector<std::uint8_t> flood_fill_free(const OccupancyGrid& grid, const Cell& seed,
                                          std::size_t* reached) {
  std::vector<std::uint8_t> mark(grid.size(), 0);
  std::size_t count = 0;
  if (grid.in_bounds(seed) && grid.at(seed) == CellState::Free) {
    std::deque<std::size_t> open{grid.flatten(seed)};
    mark[open.front()] = 1;
    static const Cell steps[6] = {Cell(1, 0, 0), Cell(-1, 0, 0), Cell(0, 1, 0),
                                  Cell(0, -1, 0), Cell(0, 0, 1), Cell(0, 0, -1)};
    while (!open.empty()) {
      const std::size_t f = open.front();
      open.pop_front();
      ++count;
      const Cell c = grid.unflatten(f);
      for (const auto& s : steps) {
        const Cell n = c + s;
        if (!grid.in_bounds(n)) continue;
        const std::size_t nf = grid.flatten(n);
        if (mark[nf] || grid.at(nf) != CellState::Free) continue;
        mark[nf] = 1;
        open.push_back(nf);
      }
    }
  }
  if (reached) *reached = count;
  return mark;
}

namespace {

struct Carver {
  OccupancyGrid& g;

  void box(const Vec3& lo, const Vec3& hi, CellState s) {
    const double r = g.resolution();
    const Cell a = g.cell_of(lo.cwiseMax(g.origin()));
    const Cell b = g.cell_of(hi.cwiseMin(g.origin() + g.extent() - Vec3::Constant(r * 1e-6)));
    for (int z = std::max(a.z(), 0); z <= std::min(b.z(), g.dims().z() - 1); ++z)
      for (int y = std::max(a.y(), 0); y <= std::min(b.y(), g.dims().y() - 1); ++y)
        for (int x = std::max(a.x(), 0); x <= std::min(b.x(), g.dims().x() - 1); ++x) {
          const Cell c(x, y, z);
          const Vec3 p = g.center_of(c);
          if ((p.array() >= lo.array()).all() && (p.array() <= hi.array()).all()) g.set(c, s);
        }
  }

  void sphere(const Vec3& center, double radius, CellState s) {
    const Vec3 d = Vec3::Constant(radius);
    const double r2 = radius * radius;
    const Cell a = g.cell_of((center - d).cwiseMax(g.origin()));
    const Cell b = g.cell_of((center + d).cwiseMin(g.origin() + g.extent() - Vec3::Constant(1e-9)));
    for (int z = std::max(a.z(), 0); z <= std::min(b.z(), g.dims().z() - 1); ++z)
      for (int y = std::max(a.y(), 0); y <= std::min(b.y(), g.dims().y() - 1); ++y)
        for (int x = std::max(a.x(), 0); x <= std::min(b.x(), g.dims().x() - 1); ++x) {
          const Cell c(x, y, z);
          if ((g.center_of(c) - center).squaredNorm() <= r2) g.set(c, s);
        }
  }
};

void require(bool ok, const std::string& what) {
  if (!ok) throw InvalidQuery("generate_scene: " + what);
}

void build_corridor(OccupancyGrid& g, const Vec3& size, std::mt19937_64& rng, Vec3& spawn) {
  require(size.x() >= 12.0 && size.y() >= 8.0 && size.z() >= 3.0,
          "corridor needs at least 12 x 8 x 3 m");
  Carver carve{g};
  const double shell = 0.4, hw = 1.5;
  const double z0 = shell, z1 = size.z() - shell;
  const double y1 = 0.25 * size.y(), y2 = 0.75 * size.y();
  std::uniform_real_distribution<double> jitter(-0.15, 0.15);
  const double xa = size.x() * (0.5 + jitter(rng));

  carve.box({shell, y1 - hw, z0}, {xa + hw, y1 + hw, z1}, CellState::Free);
  carve.box({xa - hw, y1 - hw, z0}, {xa + hw, y2 + hw, z1}, CellState::Free);
  carve.box({xa - hw, y2 - hw, z0}, {size.x() - shell, y2 + hw, z1}, CellState::Free);
  spawn = Vec3(2.0, y1, 0.5 * size.z());

  // Boulders on the tunnel walls.
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const int bumps = 8 + static_cast<int>(rng() % 5);
  for (int i = 0; i < bumps; ++i) {
    const int leg = static_cast<int>(rng() % 3);
    const double u = unit(rng);
    const double radius = 0.3 + 0.4 * unit(rng);
    const int side = static_cast<int>(rng() % 4);
    Vec3 c;
    if (leg == 1) {
      const double y = y1 + u * (y2 - y1);
      c = Vec3(side == 0 ? xa - hw : xa + hw, y, z0 + unit(rng) * (z1 - z0));
      if (side >= 2) c = Vec3(xa - hw + unit(rng) * 2.0 * hw, y, side == 2 ? z0 : z1);
    } else {
      const double x = leg == 0 ? shell + u * (xa - shell) : xa + u * (size.x() - shell - xa);
      const double yc = leg == 0 ? y1 : y2;
      c = Vec3(x, side == 0 ? yc - hw : yc + hw, z0 + unit(rng) * (z1 - z0));
      if (side >= 2) c = Vec3(x, yc - hw + unit(rng) * 2.0 * hw, side == 2 ? z0 : z1);
    }
    if ((c - spawn).norm() < 3.0) continue;
    carve.sphere(c, radius, CellState::Occupied);
  }
}

void build_multi_room(OccupancyGrid& g, const Vec3& size, std::mt19937_64& rng, bool sealed,
                      Vec3& spawn) {
  require(size.x() >= 12.0 && size.y() >= 8.0 && size.z() >= 3.0,
          "multi_room needs at least 12 x 8 x 3 m");
  Carver carve{g};
  const double shell = 0.4, wall = 0.4, door_w = 2.4;
  const double z0 = shell, z1 = size.z() - shell;
  const double door_h = std::min(3.0, z1 - z0);
  carve.box({shell, shell, z0}, {size.x() - shell, size.y() - shell, z1}, CellState::Free);

  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double xs[2] = {size.x() / 3.0, 2.0 * size.x() / 3.0};
  const double ym = size.y() / 2.0;
  for (double x : xs) {
    carve.box({x - wall / 2, 0.0, 0.0}, {x + wall / 2, size.y(), size.z()}, CellState::Occupied);
    if (!sealed) {
      // One door per half so every room touches its neighbours.
      for (int half = 0; half < 2; ++half) {
        const double lo = (half == 0 ? shell : ym + wall / 2) + 0.3;
        const double hi = (half == 0 ? ym - wall / 2 : size.y() - shell) - 0.3 - door_w;
        const double y = lo + unit(rng) * std::max(hi - lo, 0.0);
        carve.box({x - wall, y, z0}, {x + wall, y + door_w, z0 + door_h}, CellState::Free);
      }
    }
  }
  carve.box({0.0, ym - wall / 2, 0.0}, {size.x(), ym + wall / 2, size.z()}, CellState::Occupied);
  if (!sealed) {
    for (int room = 0; room < 3; ++room) {
      const double lo = (room == 0 ? shell : xs[room - 1] + wall / 2) + 0.3;
      const double hi = (room == 2 ? size.x() - shell : xs[room] - wall / 2) - 0.3 - door_w;
      const double x = lo + unit(rng) * std::max(hi - lo, 0.0);
      carve.box({x, ym - wall, z0}, {x + door_w, ym + wall, z0 + door_h}, CellState::Free);
    }
  }

  // Barrier of varying height across the middle room, passable above.
  const double top_max = z0 + 0.5 * (z1 - z0);
  const double phase = unit(rng) * 6.283185307179586;
  const double bx = 0.5 * size.x();
  for (double y = shell; y < ym - wall / 2; y += g.resolution()) {
    const double top = z0 + (0.4 + 0.6 * (0.5 + 0.5 * std::sin(phase + y))) * (top_max - z0);
    carve.box({bx - 0.2, y, z0}, {bx + 0.2, y + g.resolution(), top}, CellState::Occupied);
  }
  spawn = Vec3(size.x() / 6.0, size.y() / 4.0, 0.5 * size.z());
}

void build_cavern(OccupancyGrid& g, const Vec3& size, std::mt19937_64& rng, Vec3& spawn) {
  require(size.x() >= 10.0 && size.y() >= 10.0 && size.z() >= 6.0,
          "cavern needs at least 10 x 10 x 6 m");
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double floor_z = 0.3 * size.z();
  const Vec3 c(0.5 * size.x(), 0.5 * size.y(), floor_z);
  const Vec3 axes(0.5 * size.x() - 0.8, 0.5 * size.y() - 0.8, size.z() - floor_z - 0.8);
  double ph[6];
  for (double& p : ph) p = unit(rng) * 6.283185307179586;

  for (std::size_t f = 0; f < g.size(); ++f) {
    const Vec3 p = g.center_of(f);
    if (p.z() < floor_z) continue;
    const Vec3 q = (p - c).cwiseQuotient(axes);
    const double wobble = 0.08 * std::sin(0.9 * p.x() + ph[0]) * std::sin(0.7 * p.y() + ph[1]) +
                          0.05 * std::sin(1.3 * p.z() + ph[2]);
    if (q.squaredNorm() < 0.92 + wobble) g.set(f, CellState::Free);
  }
  // The pit: a shaft from the floor down to the shell.
  const double pr = 0.15 * std::min(size.x(), size.y());
  const Vec3 pc(c.x() + (unit(rng) - 0.5) * 0.3 * size.x(), c.y() + (unit(rng) - 0.5) * 0.3 * size.y(),
                0.0);
  for (std::size_t f = 0; f < g.size(); ++f) {
    const Vec3 p = g.center_of(f);
    if (p.z() < 0.4 || p.z() > floor_z + 0.5) continue;
    if ((p - pc).head<2>().norm() <= pr) g.set(f, CellState::Free);
  }
  spawn = Vec3(c.x() - 0.3 * axes.x(), c.y(), floor_z + 0.4 * axes.z());
}

}  // namespace

Scene generate_scene(const SceneSpec& spec) {
  require(spec.resolution > 0.0, "resolution must be positive");
  const Cell dims = (spec.size / spec.resolution).array().round().cast<int>();
  require((dims.array() >= 1).all(), "size must be positive");
  const double cells = static_cast<double>(dims.x()) * dims.y() * dims.z();
  require(cells <= 3.0e7, "size exceeds the memory budget");

  Scene scene{OccupancyGrid(Vec3::Zero(), spec.resolution, dims, CellState::Occupied),
              scene_kind_name(spec.kind), Vec3::Zero(), 0};
  std::mt19937_64 rng(spec.seed * 0x9E3779B97F4A7C15ULL + 0x5CE4E);
  switch (spec.kind) {
    case SceneKind::Corridor: build_corridor(scene.truth, spec.size, rng, scene.spawn); break;
    case SceneKind::MultiRoom:
      build_multi_room(scene.truth, spec.size, rng, spec.seal_doors, scene.spawn);
      break;
    case SceneKind::Cavern: build_cavern(scene.truth, spec.size, rng, scene.spawn); break;
  }
  auto& g = scene.truth;

  // Spawn clearance.
  const Cell sc = g.cell_of(scene.spawn);
  const int reach = static_cast<int>(std::ceil(1.0 / spec.resolution));
  for (int dz = -reach; dz <= reach; ++dz)
    for (int dy = -reach; dy <= reach; ++dy)
      for (int dx = -reach; dx <= reach; ++dx) {
        const Cell c = sc + Cell(dx, dy, dz);
        if ((g.center_of(c) - scene.spawn).norm() > 1.0) continue;
        require(g.in_bounds(c) && g.at(c) == CellState::Free, "spawn lacks 1 m clearance");
      }

  // Connectivity: pockets below 1% of the Free space are filled in; anything
  // larger means the layout is split.
  const std::size_t total_free = g.count(CellState::Free);
  std::size_t reached = 0;
  const auto main = flood_fill_free(g, sc, &reached);
  if (reached < total_free) {
    const std::size_t tolerance = std::max<std::size_t>(50, total_free / 100);
    std::vector<std::uint8_t> seen = main;
    for (std::size_t f = 0; f < g.size(); ++f) {
      if (seen[f] || g.at(f) != CellState::Free) continue;
      std::size_t n = 0;
      const auto pocket = flood_fill_free(g, g.unflatten(f), &n);
      require(n <= tolerance, "free space is disconnected");
      for (std::size_t k = 0; k < g.size(); ++k) {
        if (pocket[k]) {
          seen[k] = 1;
          g.set(k, CellState::Occupied);
        }
      }
    }
  }
  scene.explorable = g.count(CellState::Free);
  return scene;
}

}  // namespace scanplan
