#pragma once

#include <Eigen/Core>
#include <Eigen/SparseCore>
#include <array>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <vector>

namespace countfuse {

struct Point2 {
  double x = 0.0;
  double y = 0.0;
};

// Planar study domain: simple counterclockwise polygon plus an outer buffer
// band that absorbs boundary effects of the SPDE approximation.
struct DomainSpec {
  std::vector<Point2> boundary;
  double max_edge_inner = 0.0;
  double max_edge_outer = 0.0;  // edge bound inside the buffer band
  double buffer_width = 0.0;
  std::size_t max_nodes = 200000;

  static DomainSpec rectangle(double x0, double y0, double x1, double y1,
                              double max_edge_inner, double max_edge_outer,
                              double buffer_width);
};

// Conforming triangulation with linear-FEM matrices. mass is the lumped
// (diagonal) mass matrix C; stiffness is G. Node and triangle ordering is a
// pure function of the DomainSpec.
struct TriMesh {
  std::vector<Point2> nodes;
  std::vector<std::array<int, 3>> triangles;
  Eigen::VectorXd mass;                     // diag(C), strictly positive
  Eigen::SparseMatrix<double> stiffness;    // G, symmetric, zero row sums

  int n_nodes() const { return static_cast<int>(nodes.size()); }
  double triangle_area(int t) const;
  double total_area() const { return mass.sum(); }
};

// Sparse barycentric interpolation from mesh nodes to point locations.
// Rows of points outside the mesh are all-zero and flagged.
struct Projector {
  Eigen::SparseMatrix<double, Eigen::RowMajor> A;  // m x n, row sums 1 for interior points
  std::vector<std::uint8_t> outside;

  bool is_outside(int row) const { return outside[static_cast<std::size_t>(row)] != 0; }
};

double polygon_signed_area(std::span<const Point2> poly);
bool point_in_polygon(const Point2& p, std::span<const Point2> poly);
double polygon_boundary_distance(const Point2& p, std::span<const Point2> poly);

TriMesh build_mesh(const DomainSpec& domain);
Projector make_projector(const TriMesh& mesh, std::span<const Point2> locations);

// Plain-text node/triangle listing for golden tests:
//   nodes <n> triangles <t>
//   <x> <y>          (n rows)
//   <a> <b> <c>      (t rows)
void write_mesh(std::ostream& os, const TriMesh& mesh);
TriMesh read_mesh(std::istream& is);
void write_mesh_file(const std::string& path, const TriMesh& mesh);
TriMesh read_mesh_file(const std::string& path);

}  // namespace countfuse
