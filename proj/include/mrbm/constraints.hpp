#pragma once

#include <limits>
#include <memory>
#include <optional>
#include <vector>

#include "mrbm/types.hpp"

namespace mrbm {

/// Ring-based lower bound on the geodesic distance from a point to a
/// spherical polygon boundary.  Ring k has radius k*step; the bound is
/// step * (number of leading rings whose sampled points all lie inside),
/// which makes it a step function of the query point.
struct RingSurrogateConfig {
  double step = 0.01;       // radians between consecutive rings
  int rings = 5;            // number of rings probed
  int samples_per_ring = 16;
};

/// Region on the unit 2-sphere bounded by geodesic edges between consecutive
/// vertices (closed implicitly from the last vertex back to the first).  The
/// inside is the component containing the reference point.  Membership is
/// decided by parity of boundary crossings of the geodesic from the reference
/// to the query, evaluated edge by edge in a frame whose pole is the
/// reference: an edge is crossed iff the query longitude falls in the edge's
/// half-open longitude window (wrap at +-pi handled by splitting the window;
/// half-openness keeps vertex-grazing meridians counted consistently) and the
/// edge's great-circle plane separates query from reference.
class SphericalPolygon {
 public:
  /// vertices: 3 x n matrix of unit columns, n >= 3, consecutive columns
  /// distinct and non-antipodal; reference: unit vector strictly inside.
  SphericalPolygon(Matrix vertices, Vector reference, RingSurrogateConfig ring = {});

  int vertex_count() const { return static_cast<int>(vertices_.cols()); }
  const Matrix& vertices() const { return vertices_; }
  const Vector& reference() const { return reference_; }
  const RingSurrogateConfig& ring_config() const { return ring_; }

  /// Throws BoundaryAmbiguous when q lies within 1e-12 of an edge plane
  /// inside that edge's longitude window.
  bool contains(const Vector& q) const;

  /// Number of polygon edges crossed by the reference-to-q geodesic.
  int crossing_count(const Vector& q) const;

  double boundary_distance_lb(const Vector& q) const;

 private:
  double longitude(const Vector& u) const;

  Matrix vertices_;       // 3 x n
  Vector reference_;      // 3
  Vector frame_x_, frame_y_;
  Matrix edge_normals_;   // 3 x n, column i = unit normal of edge (i, i+1)
  Vector ref_side_;       // <edge normal, reference> per edge
  std::vector<std::pair<double, double>> windows_lo_;  // per edge, 1 or 2 windows
  std::vector<std::pair<double, double>> windows_hi_;
  std::vector<bool> has_second_window_;
  RingSurrogateConfig ring_;
};

/// Result of a ray/boundary intersection in a flat chart: arc length t along
/// the direction and the outward unit normal of the face hit.
struct RayHit {
  double t = 0.0;
  Vector normal;
  int face = -1;
};

/// Inequality-constrained region {x : f_i(x) < 0 for all i} in the chart of
/// its manifold.  Evaluation is strict: boundary points do not belong.
class ConstraintSet {
 public:
  enum class Kind { kHalfspaces, kHypercube, kSimplex, kTraceBound, kSphericalPolygon, kAll, kProduct };

  /// { x : A x < b } row-wise.
  static ConstraintSet halfspaces(Matrix a, Vector b);
  static ConstraintSet hypercube(Vector lo, Vector hi);
  static ConstraintSet hypercube(int dim, double lo, double hi);
  /// Open simplex { x_i > 0, sum x < 1 }.
  static ConstraintSet simplex(int dim);
  /// { tr(S) < c } for S in LogCholeskySpd(order) coordinates.
  static ConstraintSet trace_bound(int order, double c);
  static ConstraintSet spherical_polygon(SphericalPolygon poly);
  /// Unconstrained block of the given chart length.
  static ConstraintSet all(int dim);
  static ConstraintSet product(std::vector<ConstraintSet> parts);

  Kind kind() const { return kind_; }
  /// Chart coordinate length the set applies to.
  int dim() const { return dim_; }
  const std::vector<ConstraintSet>& parts() const { return parts_; }
  const SphericalPolygon& polygon() const;
  double trace_cap() const { return trace_cap_; }
  int spd_order() const { return order_; }
  const Matrix& halfspace_a() const { return require_kind(Kind::kHalfspaces, "halfspace_a"), a_; }
  const Vector& halfspace_b() const { return require_kind(Kind::kHalfspaces, "halfspace_b"), b_; }
  const Vector& cube_lo() const { return require_kind(Kind::kHypercube, "cube_lo"), lo_; }
  const Vector& cube_hi() const { return require_kind(Kind::kHypercube, "cube_hi"), hi_; }

  /// Strict membership; spherical-polygon boundary ambiguity counts as outside.
  bool contains(const Vector& x) const;

  /// max_i f_i(x): negative iff x is inside.  For spherical polygons the
  /// constraint functions are not smooth scalars; the sign is +-1.
  double max_violation(const Vector& x) const;

  /// Lower bound on the chart distance from x to the boundary.  x must lie
  /// inside the set (ContractViolation otherwise).  Exact (min over
  /// face-plane distances) for linear sets; for the trace bound uses
  /// (c - tr) / (2 sqrt(c + c^2)), valid because tr(L L^T) = c on the
  /// boundary caps the gradient norm by 2 sqrt(c + c^2); for spherical
  /// polygons uses the ring surrogate.
  double boundary_distance_lb(const Vector& x) const;

  /// Almost-everywhere gradient of boundary_distance_lb (zero for the
  /// polygon surrogate, which is piecewise constant).
  Vector boundary_distance_lb_gradient(const Vector& x) const;

  /// First boundary hit along x + t * dir for t in (0, len], linear faces in
  /// closed form, trace bound by safeguarded bisection (tol 1e-12).  Returns
  /// t = 0 when x sits within 1e-9 of a face with dir pointing outward.
  /// Flat charts only: spherical polygons raise UnsupportedOperation.
  std::optional<RayHit> ray_intersect(const Vector& x, const Vector& dir, double len) const;

  /// Same query solved the way branch-free vectorised implementations do it:
  /// a fixed-iteration (50) bisection per face regardless of face type, no
  /// early out.  Used by the runtime-scaling experiment as the reference
  /// general-purpose intersection; agrees with ray_intersect to 1e-12.
  std::optional<RayHit> ray_intersect_generic(const Vector& x, const Vector& dir, double len) const;

  /// Number of scalar constraint functions (product sums children; polygon
  /// faces are not enumerable this way).
  int face_count() const;
  double face_value(int face, const Vector& x) const;
  Vector face_gradient(int face, const Vector& x) const;

  /// Axis-aligned box containing the set, used as a rejection proposal for
  /// uniform initialisation.  Defined for hypercube (itself), simplex
  /// ([0,1]^d), trace bound (off-diagonals in [-sqrt(c), sqrt(c)], log-diag
  /// in [kSpdLogDiagFloor, log(c)/2]) and products of these.
  void proposal_box(Vector& lo, Vector& hi) const;

  static constexpr double kSpdLogDiagFloor = -3.0;

 private:
  ConstraintSet(Kind kind, int dim) : kind_(kind), dim_(dim) {}

  void require_kind(Kind expected, const char* who) const {
    if (kind_ != expected)
      throw ContractViolation(std::string("ConstraintSet::") + who + ": wrong constraint kind");
  }

  Kind kind_;
  int dim_ = 0;
  // Halfspaces
  Matrix a_;
  Vector b_;
  Vector row_norms_;
  // Hypercube
  Vector lo_, hi_;
  // TraceBound
  int order_ = 0;
  double trace_cap_ = 0.0;
  // Product
  std::vector<ConstraintSet> parts_;
  std::vector<int> offsets_;
  // SphericalPolygon
  std::shared_ptr<const SphericalPolygon> poly_;
};

}  // namespace mrbm
