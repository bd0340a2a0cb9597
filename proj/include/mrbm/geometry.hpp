#pragma once

#include <memory>
#include <string>
#include <vector>

#include "mrbm/rng.hpp"
#include "mrbm/types.hpp"

namespace mrbm {

/// Supported state spaces.  Points are chart coordinate vectors:
///   Euclidean(d)        d coordinates
///   Sphere(a)           a ambient coordinates on the unit sphere S^{a-1}
///   Torus(d)            d angles in [0, 2*pi)
///   LogCholeskySpd(n)   n(n+1)/2 coordinates: the lower triangle of the
///                       Cholesky factor in row-major order with the diagonal
///                       stored as its logarithm; the chart is flat
///   Product             concatenation of factor charts
class Manifold {
 public:
  enum class Kind { kEuclidean, kSphere, kTorus, kLogCholeskySpd, kProduct };

  static Manifold euclidean(int dim);
  static Manifold sphere(int ambient_dim);
  static Manifold torus(int dim);
  static Manifold log_cholesky_spd(int order);
  static Manifold product(std::vector<Manifold> factors);

  Kind kind() const { return kind_; }
  /// Intrinsic dimension.
  int dim() const { return dim_; }
  /// Length of the coordinate vector (equals tangent storage length).
  int storage_size() const { return storage_; }
  /// Matrix order n for LogCholeskySpd.
  int spd_order() const { return order_; }
  const std::vector<Manifold>& factors() const { return factors_; }
  /// True when the chart is flat (all factors Euclidean/Torus/LogCholeskySpd),
  /// i.e. geodesics are straight lines in coordinates.
  bool is_flat() const;
  std::string describe() const;

 private:
  Manifold(Kind kind, int dim, int storage, int order)
      : kind_(kind), dim_(dim), storage_(storage), order_(order) {}

  Kind kind_;
  int dim_ = 0;
  int storage_ = 0;
  int order_ = 0;  // LogCholeskySpd only
  std::vector<Manifold> factors_;
};

/// Geodesic exponential: follow the geodesic from p with initial velocity v
/// for unit time.  Flat charts add, torus coordinates wrap into [0, 2*pi),
/// sphere points are renormalised on write.
Point exp_map(const Manifold& m, const Point& p, const Tangent& v);

/// Standard normal draw in the tangent space at p (ambient Gaussian projected
/// onto the tangent plane for sphere factors).
Tangent tangent_randn(const Manifold& m, const Point& p, RngStream& rng);

/// Projects arbitrary storage coordinates onto the tangent space at p
/// (identity on flat charts, removes the radial component on spheres).
Tangent project_tangent(const Manifold& m, const Point& p, const Vector& w);

/// Parallel transport of v from p to q along the connecting geodesic.
/// Identity on flat charts; great-circle transport on spheres (q != -p).
Tangent parallel_transport(const Manifold& m, const Point& p, const Tangent& v, const Point& q);

/// Reflect v across the hyperplane with unit normal n in the tangent space:
/// v - 2 <v, n> n.  n must be unit within 1e-8.
Tangent reflect_tangent(const Manifold& m, const Tangent& v, const Tangent& n);

/// Geodesic distance between points (Euclidean in flat non-periodic charts,
/// arc length on spheres, shortest wrapped difference per torus angle).
double geodesic_distance(const Manifold& m, const Point& p, const Point& q);

/// Canonical representative of p: wraps torus angles, renormalises sphere
/// blocks.  Flat non-periodic charts are returned unchanged.
Point normalize_point(const Manifold& m, const Point& p);

/// Reconstruct the SPD matrix from LogCholeskySpd coordinates.
Matrix spd_from_coords(int order, const Vector& coords);

/// Chart coordinates of an SPD matrix (Cholesky, then log the diagonal).
Vector coords_from_spd(const Matrix& spd);

/// Trace of the SPD matrix represented by LogCholeskySpd coordinates,
/// computed directly from the coordinates.
double spd_trace_from_coords(int order, const Vector& coords);

}  // namespace mrbm
