#include "countfuse/mesh.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <ostream>
#include <sstream>

#include "countfuse/common.hpp"

namespace countfuse {

namespace {

double cross(const Point2& o, const Point2& a, const Point2& b) {
  return (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x);
}

double segment_distance(const Point2& p, const Point2& a, const Point2& b) {
  const double vx = b.x - a.x, vy = b.y - a.y;
  const double wx = p.x - a.x, wy = p.y - a.y;
  const double vv = vx * vx + vy * vy;
  double t = vv > 0.0 ? (wx * vx + wy * vy) / vv : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  const double dx = p.x - (a.x + t * vx);
  const double dy = p.y - (a.y + t * vy);
  return std::hypot(dx, dy);
}

bool segments_properly_intersect(const Point2& a, const Point2& b, const Point2& c,
                                 const Point2& d) {
  const double d1 = cross(c, d, a);
  const double d2 = cross(c, d, b);
  const double d3 = cross(a, b, c);
  const double d4 = cross(a, b, d);
  return ((d1 > 0 && d2 < 0) || (d1 < 0 && d2 > 0)) &&
         ((d3 > 0 && d4 < 0) || (d3 < 0 && d4 > 0));
}

void validate_domain(const DomainSpec& dom) {
  if (dom.boundary.size() < 3) throw input_error("domain boundary needs at least 3 vertices");
  for (const auto& p : dom.boundary) {
    if (!std::isfinite(p.x) || !std::isfinite(p.y))
      throw input_error("domain boundary has non-finite coordinates");
  }
  if (!(dom.max_edge_inner > 0.0)) throw input_error("max_edge_inner must be positive");
  if (!(dom.max_edge_outer > 0.0)) throw input_error("max_edge_outer must be positive");
  if (dom.buffer_width < 0.0) throw input_error("buffer_width must be nonnegative");
  const double area = polygon_signed_area(dom.boundary);
  const double scale = dom.max_edge_inner * dom.max_edge_inner;
  if (std::abs(area) < 1e-12 * std::max(scale, 1.0))
    throw input_error("degenerate domain polygon (area 0)");
  if (area < 0.0) throw input_error("domain boundary must be counterclockwise");
  const std::size_t m = dom.boundary.size();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = i + 1; j < m; ++j) {
      if (j == i || (j + 1) % m == i || (i + 1) % m == j) continue;
      if (segments_properly_intersect(dom.boundary[i], dom.boundary[(i + 1) % m],
                                      dom.boundary[j], dom.boundary[(j + 1) % m]))
        throw input_error("domain boundary is self-intersecting");
    }
  }
}

struct Bbox {
  double x0, y0, x1, y1;
};

Bbox polygon_bbox(std::span<const Point2> poly) {
  Bbox b{poly[0].x, poly[0].y, poly[0].x, poly[0].y};
  for (const auto& p : poly) {
    b.x0 = std::min(b.x0, p.x);
    b.y0 = std::min(b.y0, p.y);
    b.x1 = std::max(b.x1, p.x);
    b.y1 = std::max(b.y1, p.y);
  }
  return b;
}

void assemble_fem(TriMesh& mesh) {
  const int n = mesh.n_nodes();
  mesh.mass = Eigen::VectorXd::Zero(n);
  std::vector<Eigen::Triplet<double>> trips;
  trips.reserve(mesh.triangles.size() * 9);
  for (const auto& tri : mesh.triangles) {
    const Point2& p0 = mesh.nodes[static_cast<std::size_t>(tri[0])];
    const Point2& p1 = mesh.nodes[static_cast<std::size_t>(tri[1])];
    const Point2& p2 = mesh.nodes[static_cast<std::size_t>(tri[2])];
    const double area = 0.5 * cross(p0, p1, p2);
    if (!(area > 0.0)) throw numeric_error("triangle with non-positive area");
    const double bx[3] = {p1.y - p2.y, p2.y - p0.y, p0.y - p1.y};
    const double by[3] = {p2.x - p1.x, p0.x - p2.x, p1.x - p0.x};
    for (int i = 0; i < 3; ++i) {
      mesh.mass[tri[static_cast<std::size_t>(i)]] += area / 3.0;
      for (int j = 0; j < 3; ++j) {
        const double g = (bx[i] * bx[j] + by[i] * by[j]) / (4.0 * area);
        trips.emplace_back(tri[static_cast<std::size_t>(i)], tri[static_cast<std::size_t>(j)], g);
      }
    }
  }
  mesh.stiffness.resize(n, n);
  mesh.stiffness.setFromTriplets(trips.begin(), trips.end());
  mesh.stiffness.makeCompressed();
}

}  // namespace

DomainSpec DomainSpec::rectangle(double x0, double y0, double x1, double y1,
                                 double max_edge_inner, double max_edge_outer,
                                 double buffer_width) {
  DomainSpec d;
  d.boundary = {{x0, y0}, {x1, y0}, {x1, y1}, {x0, y1}};
  d.max_edge_inner = max_edge_inner;
  d.max_edge_outer = max_edge_outer;
  d.buffer_width = buffer_width;
  return d;
}

double TriMesh::triangle_area(int t) const {
  const auto& tri = triangles[static_cast<std::size_t>(t)];
  return 0.5 * cross(nodes[static_cast<std::size_t>(tri[0])],
                     nodes[static_cast<std::size_t>(tri[1])],
                     nodes[static_cast<std::size_t>(tri[2])]);
}

double polygon_signed_area(std::span<const Point2> poly) {
  double s = 0.0;
  const std::size_t m = poly.size();
  for (std::size_t i = 0; i < m; ++i) {
    const Point2& a = poly[i];
    const Point2& b = poly[(i + 1) % m];
    s += a.x * b.y - b.x * a.y;
  }
  return 0.5 * s;
}

bool point_in_polygon(const Point2& p, std::span<const Point2> poly) {
  const std::size_t m = poly.size();
  // boundary counts as inside
  for (std::size_t i = 0; i < m; ++i) {
    const Point2& a = poly[i];
    const Point2& b = poly[(i + 1) % m];
    if (std::abs(cross(a, b, p)) == 0.0 && p.x >= std::min(a.x, b.x) &&
        p.x <= std::max(a.x, b.x) && p.y >= std::min(a.y, b.y) && p.y <= std::max(a.y, b.y))
      return true;
  }
  bool inside = false;
  for (std::size_t i = 0, j = m - 1; i < m; j = i++) {
    const Point2& a = poly[i];
    const Point2& b = poly[j];
    if ((a.y > p.y) != (b.y > p.y)) {
      const double xint = a.x + (p.y - a.y) / (b.y - a.y) * (b.x - a.x);
      if (p.x < xint) inside = !inside;
    }
  }
  return inside;
}

double polygon_boundary_distance(const Point2& p, std::span<const Point2> poly) {
  double d = std::numeric_limits<double>::infinity();
  const std::size_t m = poly.size();
  for (std::size_t i = 0; i < m; ++i)
    d = std::min(d, segment_distance(p, poly[i], poly[(i + 1) % m]));
  return d;
}

TriMesh build_mesh(const DomainSpec& dom) {
  validate_domain(dom);
  const double max_edge =
      dom.buffer_width > 0.0 ? std::min(dom.max_edge_inner, dom.max_edge_outer)
                             : dom.max_edge_inner;
  const double pitch = max_edge / std::sqrt(2.0);

  Bbox bb = polygon_bbox(dom.boundary);
  bb.x0 -= dom.buffer_width;
  bb.y0 -= dom.buffer_width;
  bb.x1 += dom.buffer_width;
  bb.y1 += dom.buffer_width;

  const double w = bb.x1 - bb.x0, h = bb.y1 - bb.y0;
  const long nx = std::max(1L, static_cast<long>(std::ceil(w / pitch)));
  const long ny = std::max(1L, static_cast<long>(std::ceil(h / pitch)));
  const double dx = w / static_cast<double>(nx);
  const double dy = h / static_cast<double>(ny);
  if (static_cast<std::size_t>((nx + 1) * (ny + 1)) > dom.max_nodes) {
    std::ostringstream msg;
    msg << "mesh rejected: lattice would have " << (nx + 1) * (ny + 1)
        << " nodes, cap is " << dom.max_nodes;
    throw input_error(msg.str());
  }

  const auto in_region = [&](const Point2& p) {
    return point_in_polygon(p, dom.boundary) ||
           polygon_boundary_distance(p, dom.boundary) <= dom.buffer_width;
  };
  const auto node_at = [&](long i, long j) {
    return Point2{bb.x0 + static_cast<double>(i) * dx, bb.y0 + static_cast<double>(j) * dy};
  };

  // Structured lattice, cells split along a common diagonal. Every interior
  // node then has six neighbors, which keeps the SPDE marginal variance
  // spatially flat (alternating-diagonal patterns oscillate between 4- and
  // 8-neighbor nodes).
  std::vector<int> node_map(static_cast<std::size_t>((nx + 1) * (ny + 1)), -1);
  std::vector<std::array<long, 3>> kept;  // lattice ids
  const auto lid = [&](long i, long j) { return j * (nx + 1) + i; };
  for (long j = 0; j < ny; ++j) {
    for (long i = 0; i < nx; ++i) {
      const long n00 = lid(i, j), n10 = lid(i + 1, j);
      const long n01 = lid(i, j + 1), n11 = lid(i + 1, j + 1);
      const std::array<std::array<long, 3>, 2> cand = {{{n00, n10, n11}, {n00, n11, n01}}};
      for (const auto& t : cand) {
        Point2 a = node_at(t[0] % (nx + 1), t[0] / (nx + 1));
        Point2 b = node_at(t[1] % (nx + 1), t[1] / (nx + 1));
        Point2 c = node_at(t[2] % (nx + 1), t[2] / (nx + 1));
        const Point2 centroid{(a.x + b.x + c.x) / 3.0, (a.y + b.y + c.y) / 3.0};
        if (in_region(centroid) || in_region(a) || in_region(b) || in_region(c)) {
          kept.push_back(t);
          for (long v : t) node_map[static_cast<std::size_t>(v)] = 0;
        }
      }
    }
  }
  if (kept.empty()) throw input_error("no triangles inside domain");

  TriMesh mesh;
  int next = 0;
  for (long j = 0; j <= ny; ++j) {
    for (long i = 0; i <= nx; ++i) {
      auto& slot = node_map[static_cast<std::size_t>(lid(i, j))];
      if (slot == 0) {
        slot = next++;
        mesh.nodes.push_back(node_at(i, j));
      }
    }
  }
  if (mesh.nodes.size() > dom.max_nodes) {
    std::ostringstream msg;
    msg << "mesh rejected: " << mesh.nodes.size() << " nodes, cap is " << dom.max_nodes;
    throw input_error(msg.str());
  }
  mesh.triangles.reserve(kept.size());
  for (const auto& t : kept) {
    mesh.triangles.push_back({node_map[static_cast<std::size_t>(t[0])],
                              node_map[static_cast<std::size_t>(t[1])],
                              node_map[static_cast<std::size_t>(t[2])]});
  }
  assemble_fem(mesh);
  return mesh;
}

namespace {

// Uniform bucket grid over triangle bounding boxes. Query returns candidate
// triangles in ascending index order, which implements the lowest-index
// tie-break for points on shared edges.
class TriLocator {
 public:
  explicit TriLocator(const TriMesh& mesh) : mesh_(mesh) {
    bb_ = Bbox{mesh.nodes[0].x, mesh.nodes[0].y, mesh.nodes[0].x, mesh.nodes[0].y};
    for (const auto& p : mesh.nodes) {
      bb_.x0 = std::min(bb_.x0, p.x);
      bb_.y0 = std::min(bb_.y0, p.y);
      bb_.x1 = std::max(bb_.x1, p.x);
      bb_.y1 = std::max(bb_.y1, p.y);
    }
    const std::size_t t = mesh.triangles.size();
    const long side = std::max(1L, static_cast<long>(std::floor(std::sqrt(static_cast<double>(t)))));
    nx_ = side;
    ny_ = side;
    dx_ = (bb_.x1 - bb_.x0) / static_cast<double>(nx_);
    dy_ = (bb_.y1 - bb_.y0) / static_cast<double>(ny_);
    if (dx_ <= 0.0) dx_ = 1.0;
    if (dy_ <= 0.0) dy_ = 1.0;
    buckets_.resize(static_cast<std::size_t>(nx_ * ny_));
    for (std::size_t k = 0; k < t; ++k) {
      const auto& tri = mesh.triangles[k];
      Bbox tb{mesh.nodes[static_cast<std::size_t>(tri[0])].x,
              mesh.nodes[static_cast<std::size_t>(tri[0])].y,
              mesh.nodes[static_cast<std::size_t>(tri[0])].x,
              mesh.nodes[static_cast<std::size_t>(tri[0])].y};
      for (int v = 1; v < 3; ++v) {
        const Point2& p = mesh.nodes[static_cast<std::size_t>(tri[static_cast<std::size_t>(v)])];
        tb.x0 = std::min(tb.x0, p.x);
        tb.y0 = std::min(tb.y0, p.y);
        tb.x1 = std::max(tb.x1, p.x);
        tb.y1 = std::max(tb.y1, p.y);
      }
      for (long j = cell_y(tb.y0); j <= cell_y(tb.y1); ++j)
        for (long i = cell_x(tb.x0); i <= cell_x(tb.x1); ++i)
          buckets_[static_cast<std::size_t>(j * nx_ + i)].push_back(static_cast<int>(k));
    }
  }

  // barycentric coordinates of p in its containing triangle; -1 if outside
  int locate(const Point2& p, std::array<double, 3>& bary) const {
    if (p.x < bb_.x0 || p.x > bb_.x1 || p.y < bb_.y0 || p.y > bb_.y1) return -1;
    const auto& cand = buckets_[static_cast<std::size_t>(cell_y(p.y) * nx_ + cell_x(p.x))];
    for (int k : cand) {
      const auto& tri = mesh_.triangles[static_cast<std::size_t>(k)];
      const Point2& a = mesh_.nodes[static_cast<std::size_t>(tri[0])];
      const Point2& b = mesh_.nodes[static_cast<std::size_t>(tri[1])];
      const Point2& c = mesh_.nodes[static_cast<std::size_t>(tri[2])];
      const double area2 = cross(a, b, c);
      const double l0 = cross(p, b, c) / area2;
      const double l1 = cross(p, c, a) / area2;
      const double l2 = 1.0 - l0 - l1;
      const double tol = -1e-10;
      if (l0 >= tol && l1 >= tol && l2 >= tol) {
        bary = {l0, l1, l2};
        return k;
      }
    }
    return -1;
  }

 private:
  long cell_x(double x) const {
    return std::clamp(static_cast<long>((x - bb_.x0) / dx_), 0L, nx_ - 1);
  }
  long cell_y(double y) const {
    return std::clamp(static_cast<long>((y - bb_.y0) / dy_), 0L, ny_ - 1);
  }

  const TriMesh& mesh_;
  Bbox bb_{};
  long nx_ = 1, ny_ = 1;
  double dx_ = 1.0, dy_ = 1.0;
  std::vector<std::vector<int>> buckets_;
};

}  // namespace

Projector make_projector(const TriMesh& mesh, std::span<const Point2> locations) {
  const TriLocator locator(mesh);
  Projector proj;
  proj.outside.assign(locations.size(), 0);
  std::vector<Eigen::Triplet<double>> trips;
  trips.reserve(locations.size() * 3);
  for (std::size_t r = 0; r < locations.size(); ++r) {
    std::array<double, 3> bary{};
    const int k = locator.locate(locations[r], bary);
    if (k < 0) {
      proj.outside[r] = 1;
      continue;
    }
    double sum = 0.0;
    for (double& l : bary) {
      l = std::max(l, 0.0);
      sum += l;
    }
    const auto& tri = mesh.triangles[static_cast<std::size_t>(k)];
    for (int v = 0; v < 3; ++v) {
      const double wv = bary[static_cast<std::size_t>(v)] / sum;
      if (wv > 0.0)
        trips.emplace_back(static_cast<int>(r), tri[static_cast<std::size_t>(v)], wv);
    }
  }
  proj.A.resize(static_cast<Eigen::Index>(locations.size()), mesh.n_nodes());
  proj.A.setFromTriplets(trips.begin(), trips.end());
  proj.A.makeCompressed();
  return proj;
}

void write_mesh(std::ostream& os, const TriMesh& mesh) {
  os << "nodes " << mesh.nodes.size() << " triangles " << mesh.triangles.size() << "\n";
  char buf[64];
  for (const auto& p : mesh.nodes) {
    std::snprintf(buf, sizeof(buf), "%.17g %.17g\n", p.x, p.y);
    os << buf;
  }
  for (const auto& t : mesh.triangles) os << t[0] << " " << t[1] << " " << t[2] << "\n";
}

TriMesh read_mesh(std::istream& is) {
  std::string kw1, kw2;
  std::size_t n = 0, t = 0;
  is >> kw1 >> n >> kw2 >> t;
  if (kw1 != "nodes" || kw2 != "triangles" || !is)
    throw input_error("bad mesh header, expected 'nodes <n> triangles <t>'");
  TriMesh mesh;
  mesh.nodes.resize(n);
  for (auto& p : mesh.nodes) is >> p.x >> p.y;
  mesh.triangles.resize(t);
  for (auto& tri : mesh.triangles) is >> tri[0] >> tri[1] >> tri[2];
  if (!is) throw input_error("truncated mesh file");
  for (const auto& tri : mesh.triangles)
    for (int v : tri)
      if (v < 0 || static_cast<std::size_t>(v) >= n) throw input_error("mesh triangle index out of range");
  assemble_fem(mesh);
  return mesh;
}

void write_mesh_file(const std::string& path, const TriMesh& mesh) {
  std::ofstream os(path);
  if (!os) throw input_error("cannot open mesh file for writing: " + path);
  write_mesh(os, mesh);
}

TriMesh read_mesh_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw input_error("cannot open mesh file: " + path);
  return read_mesh(is);
}

}  // namespace countfuse
