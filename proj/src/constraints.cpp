#include "mrbm/constraints.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include "mrbm/geometry.hpp"

namespace mrbm {
namespace {

constexpr double kEdgePlaneTol = 1e-12;
constexpr double kOnBoundaryRayTol = 1e-9;  // |t| below this counts as a t=0 hit
constexpr double kBisectTol = 1e-12;
constexpr int kGenericBisectIters = 50;

void check_dim(const char* op, Index got, Index want) {
  if (got != want) {
    std::ostringstream msg;
    msg << op << ": vector has length " << got << ", expected " << want;
    throw ContractViolation(msg.str());
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// SphericalPolygon

SphericalPolygon::SphericalPolygon(Matrix vertices, Vector reference, RingSurrogateConfig ring)
    : vertices_(std::move(vertices)), reference_(std::move(reference)), ring_(ring) {
  if (vertices_.rows() != 3 || reference_.size() != 3) {
    throw ContractViolation("SphericalPolygon: vertices must be 3 x n, reference length 3");
  }
  const int n = static_cast<int>(vertices_.cols());
  if (n < 3) throw ContractViolation("SphericalPolygon: needs at least 3 vertices");
  if (ring_.step <= 0 || ring_.rings < 1 || ring_.samples_per_ring < 4) {
    throw ConfigError("SphericalPolygon: invalid ring surrogate config");
  }
  for (int i = 0; i < n; ++i) {
    if (std::abs(vertices_.col(i).norm() - 1.0) > 1e-10) {
      throw ContractViolation("SphericalPolygon: vertex " + std::to_string(i) + " is not unit length");
    }
    vertices_.col(i).normalize();
  }
  if (std::abs(reference_.norm() - 1.0) > 1e-10) {
    throw ContractViolation("SphericalPolygon: reference is not unit length");
  }
  reference_.normalize();

  // Pole-at-reference frame for longitudes.
  int k = 0;
  for (int i = 1; i < 3; ++i)
    if (std::abs(reference_[i]) < std::abs(reference_[k])) k = i;
  Vector e = Vector::Zero(3);
  e[k] = 1.0;
  frame_x_ = e - e.dot(reference_) * reference_;
  frame_x_.normalize();
  frame_y_ = Vector(3);
  frame_y_[0] = reference_[1] * frame_x_[2] - reference_[2] * frame_x_[1];
  frame_y_[1] = reference_[2] * frame_x_[0] - reference_[0] * frame_x_[2];
  frame_y_[2] = reference_[0] * frame_x_[1] - reference_[1] * frame_x_[0];

  edge_normals_.resize(3, n);
  ref_side_.resize(n);
  windows_lo_.resize(n);
  windows_hi_.resize(n);
  has_second_window_.assign(n, false);

  std::vector<double> lon(n);
  for (int i = 0; i < n; ++i) {
    if (1.0 - std::abs(vertices_.col(i).dot(reference_)) < 1e-12) {
      throw ContractViolation("SphericalPolygon: vertex " + std::to_string(i) +
                              " coincides with the reference pole or its antipode");
    }
    lon[i] = longitude(vertices_.col(i));
  }
  for (int i = 0; i < n; ++i) {
    const int j = (i + 1) % n;
    Vector vi = vertices_.col(i), vj = vertices_.col(j);
    Vector cr(3);
    cr[0] = vi[1] * vj[2] - vi[2] * vj[1];
    cr[1] = vi[2] * vj[0] - vi[0] * vj[2];
    cr[2] = vi[0] * vj[1] - vi[1] * vj[0];
    const double cn = cr.norm();
    if (cn < 1e-12) {
      throw ContractViolation("SphericalPolygon: consecutive vertices " + std::to_string(i) + ", " +
                              std::to_string(j) + " coincide or are antipodal");
    }
    edge_normals_.col(i) = cr / cn;
    ref_side_[i] = edge_normals_.col(i).dot(reference_);

    const double a = std::min(lon[i], lon[j]);
    const double b = std::max(lon[i], lon[j]);
    if (b - a <= std::numbers::pi) {
      windows_lo_[i] = {a, b};
    } else {
      // Edge wraps through +-pi; keep the two outer pieces.
      windows_lo_[i] = {-std::numbers::pi, a};
      windows_hi_[i] = {b, std::numbers::pi};
      has_second_window_[i] = true;
    }
  }
  for (int i = 0; i < n; ++i) {
    if (std::abs(ref_side_[i]) <= kEdgePlaneTol) {
      throw ContractViolation("SphericalPolygon: reference lies on the great circle of edge " + std::to_string(i));
    }
  }
}

double SphericalPolygon::longitude(const Vector& u) const {
  return std::atan2(u.dot(frame_y_), u.dot(frame_x_));
}

int SphericalPolygon::crossing_count(const Vector& q) const {
  check_dim("SphericalPolygon::crossing_count", q.size(), 3);
  const double lq = longitude(q);
  const int n = vertex_count();
  int crossings = 0;
  for (int i = 0; i < n; ++i) {
    // Half-open windows (lower endpoint in, upper out; wrapped edges invert)
    // so a query meridian through a vertex counts exactly one incident edge
    // on a transversal pass and zero or two on a graze.
    const bool in_window =
        has_second_window_[i]
            ? (lq >= windows_hi_[i].first || lq < windows_lo_[i].second)
            : (lq >= windows_lo_[i].first && lq < windows_lo_[i].second);
    if (!in_window) continue;
    const double side = edge_normals_.col(i).dot(q);
    if (std::abs(side) <= kEdgePlaneTol) {
      throw BoundaryAmbiguous("SphericalPolygon: query within tolerance of edge " + std::to_string(i));
    }
    if (ref_side_[i] * side < 0.0) ++crossings;
  }
  return crossings;
}

bool SphericalPolygon::contains(const Vector& q) const {
  return crossing_count(q) % 2 == 0;
}

double SphericalPolygon::boundary_distance_lb(const Vector& q) const {
  check_dim("SphericalPolygon::boundary_distance_lb", q.size(), 3);
  auto inside = [this](const Vector& u) {
    try {
      return contains(u);
    } catch (const BoundaryAmbiguous&) {
      return false;
    }
  };
  if (!inside(q)) return 0.0;

  // Tangent basis at q.
  int k = 0;
  for (int i = 1; i < 3; ++i)
    if (std::abs(q[i]) < std::abs(q[k])) k = i;
  Vector e = Vector::Zero(3);
  e[k] = 1.0;
  Vector u = e - e.dot(q) * q;
  u.normalize();
  Vector w(3);
  w[0] = q[1] * u[2] - q[2] * u[1];
  w[1] = q[2] * u[0] - q[0] * u[2];
  w[2] = q[0] * u[1] - q[1] * u[0];

  int clear_rings = 0;
  for (int r = 1; r <= ring_.rings; ++r) {
    const double rho = r * ring_.step;
    bool ok = true;
    for (int s = 0; s < ring_.samples_per_ring && ok; ++s) {
      const double th = 2.0 * std::numbers::pi * s / ring_.samples_per_ring;
      Vector c = std::cos(rho) * q + std::sin(rho) * (std::cos(th) * u + std::sin(th) * w);
      ok = inside(c);
    }
    if (!ok) break;
    clear_rings = r;
  }
  return clear_rings * ring_.step;
}

// ---------------------------------------------------------------------------
// ConstraintSet factories

ConstraintSet ConstraintSet::halfspaces(Matrix a, Vector b) {
  if (a.rows() != b.size() || a.rows() < 1) {
    throw ContractViolation("ConstraintSet::halfspaces: A rows must match b length and be >= 1");
  }
  ConstraintSet c(Kind::kHalfspaces, static_cast<int>(a.cols()));
  c.row_norms_ = a.rowwise().norm();
  if ((c.row_norms_.array() <= 0.0).any()) {
    throw ContractViolation("ConstraintSet::halfspaces: zero row in A");
  }
  c.a_ = std::move(a);
  c.b_ = std::move(b);
  return c;
}

ConstraintSet ConstraintSet::hypercube(Vector lo, Vector hi) {
  if (lo.size() != hi.size() || lo.size() < 1 || ((hi - lo).array() <= 0.0).any()) {
    throw ContractViolation("ConstraintSet::hypercube: need lo < hi componentwise");
  }
  ConstraintSet c(Kind::kHypercube, static_cast<int>(lo.size()));
  c.lo_ = std::move(lo);
  c.hi_ = std::move(hi);
  return c;
}

ConstraintSet ConstraintSet::hypercube(int dim, double lo, double hi) {
  return hypercube(Vector::Constant(dim, lo), Vector::Constant(dim, hi));
}

ConstraintSet ConstraintSet::simplex(int dim) {
  if (dim < 1) throw ContractViolation("ConstraintSet::simplex: dim must be >= 1");
  return ConstraintSet(Kind::kSimplex, dim);
}

ConstraintSet ConstraintSet::trace_bound(int order, double cap) {
  if (order < 1) throw ContractViolation("ConstraintSet::trace_bound: order must be >= 1");
  if (!(cap > 0.0)) throw ContractViolation("ConstraintSet::trace_bound: cap must be positive");
  ConstraintSet c(Kind::kTraceBound, order * (order + 1) / 2);
  c.order_ = order;
  c.trace_cap_ = cap;
  return c;
}

ConstraintSet ConstraintSet::spherical_polygon(SphericalPolygon poly) {
  ConstraintSet c(Kind::kSphericalPolygon, 3);
  c.poly_ = std::make_shared<const SphericalPolygon>(std::move(poly));
  return c;
}

ConstraintSet ConstraintSet::all(int dim) {
  if (dim < 1) throw ContractViolation("ConstraintSet::all: dim must be >= 1");
  return ConstraintSet(Kind::kAll, dim);
}

ConstraintSet ConstraintSet::product(std::vector<ConstraintSet> parts) {
  if (parts.empty()) throw ContractViolation("ConstraintSet::product: needs at least one part");
  int dim = 0;
  std::vector<int> offsets;
  for (const auto& p : parts) {
    if (p.kind() == Kind::kProduct) {
      throw ContractViolation("ConstraintSet::product: nested products are not supported, flatten the part list");
    }
    offsets.push_back(dim);
    dim += p.dim();
  }
  ConstraintSet c(Kind::kProduct, dim);
  c.parts_ = std::move(parts);
  c.offsets_ = std::move(offsets);
  return c;
}

const SphericalPolygon& ConstraintSet::polygon() const {
  if (kind_ != Kind::kSphericalPolygon || !poly_) {
    throw ContractViolation("ConstraintSet::polygon: not a spherical polygon set");
  }
  return *poly_;
}

// ---------------------------------------------------------------------------
// Membership and violations

bool ConstraintSet::contains(const Vector& x) const {
  check_dim("ConstraintSet::contains", x.size(), dim_);
  switch (kind_) {
    case Kind::kHalfspaces:
      return ((a_ * x - b_).array() < 0.0).all();
    case Kind::kHypercube:
      return (x.array() > lo_.array()).all() && (x.array() < hi_.array()).all();
    case Kind::kSimplex:
      return (x.array() > 0.0).all() && x.sum() < 1.0;
    case Kind::kTraceBound:
      return spd_trace_from_coords(order_, x) < trace_cap_;
    case Kind::kSphericalPolygon:
      try {
        return poly_->contains(x);
      } catch (const BoundaryAmbiguous&) {
        return false;
      }
    case Kind::kAll:
      return true;
    case Kind::kProduct:
      for (size_t i = 0; i < parts_.size(); ++i) {
        if (!parts_[i].contains(x.segment(offsets_[i], parts_[i].dim()))) return false;
      }
      return true;
  }
  throw ContractViolation("ConstraintSet::contains: unknown kind");
}

double ConstraintSet::max_violation(const Vector& x) const {
  check_dim("ConstraintSet::max_violation", x.size(), dim_);
  switch (kind_) {
    case Kind::kHalfspaces:
      return (a_ * x - b_).maxCoeff();
    case Kind::kHypercube:
      return std::max((lo_ - x).maxCoeff(), (x - hi_).maxCoeff());
    case Kind::kSimplex:
      return std::max(-x.minCoeff(), x.sum() - 1.0);
    case Kind::kTraceBound:
      return spd_trace_from_coords(order_, x) - trace_cap_;
    case Kind::kSphericalPolygon:
      return contains(x) ? -1.0 : 1.0;
    case Kind::kAll:
      return -std::numeric_limits<double>::infinity();
    case Kind::kProduct: {
      double v = -std::numeric_limits<double>::infinity();
      for (size_t i = 0; i < parts_.size(); ++i) {
        v = std::max(v, parts_[i].max_violation(x.segment(offsets_[i], parts_[i].dim())));
      }
      return v;
    }
  }
  throw ContractViolation("ConstraintSet::max_violation: unknown kind");
}

double ConstraintSet::boundary_distance_lb(const Vector& x) const {
  check_dim("ConstraintSet::boundary_distance_lb", x.size(), dim_);
  if (!contains(x))
    throw ContractViolation("ConstraintSet::boundary_distance_lb: x must lie inside the set");
  switch (kind_) {
    case Kind::kHalfspaces:
      return std::max(0.0, ((b_ - a_ * x).array() / row_norms_.array()).minCoeff());
    case Kind::kHypercube:
      return std::max(0.0, std::min((x - lo_).minCoeff(), (hi_ - x).minCoeff()));
    case Kind::kSimplex:
      return std::max(0.0, std::min(x.minCoeff(), (1.0 - x.sum()) / std::sqrt(double(dim_))));
    case Kind::kTraceBound: {
      const double tr = spd_trace_from_coords(order_, x);
      return std::max(0.0, (trace_cap_ - tr) / (2.0 * std::sqrt(trace_cap_ + trace_cap_ * trace_cap_)));
    }
    case Kind::kSphericalPolygon:
      return poly_->boundary_distance_lb(x);
    case Kind::kAll:
      return std::numeric_limits<double>::infinity();
    case Kind::kProduct: {
      double v = std::numeric_limits<double>::infinity();
      for (size_t i = 0; i < parts_.size(); ++i) {
        v = std::min(v, parts_[i].boundary_distance_lb(x.segment(offsets_[i], parts_[i].dim())));
      }
      return v;
    }
  }
  throw ContractViolation("ConstraintSet::boundary_distance_lb: unknown kind");
}

Vector ConstraintSet::boundary_distance_lb_gradient(const Vector& x) const {
  check_dim("ConstraintSet::boundary_distance_lb_gradient", x.size(), dim_);
  if (!contains(x))
    throw ContractViolation(
        "ConstraintSet::boundary_distance_lb_gradient: x must lie inside the set");
  Vector g = Vector::Zero(dim_);
  switch (kind_) {
    case Kind::kHalfspaces: {
      Vector d = (b_ - a_ * x).array() / row_norms_.array();
      Index i;
      if (d.minCoeff(&i) <= 0.0) return g;
      g = -a_.row(i).transpose() / row_norms_[i];
      return g;
    }
    case Kind::kHypercube: {
      double best = std::numeric_limits<double>::infinity();
      Index bi = 0;
      double sign = 1.0;
      for (Index i = 0; i < dim_; ++i) {
        if (x[i] - lo_[i] < best) { best = x[i] - lo_[i]; bi = i; sign = 1.0; }
        if (hi_[i] - x[i] < best) { best = hi_[i] - x[i]; bi = i; sign = -1.0; }
      }
      if (best <= 0.0) return g;
      g[bi] = sign;
      return g;
    }
    case Kind::kSimplex: {
      Index i;
      const double cmin = x.minCoeff(&i);
      const double sdist = (1.0 - x.sum()) / std::sqrt(double(dim_));
      if (std::min(cmin, sdist) <= 0.0) return g;
      if (cmin <= sdist) {
        g[i] = 1.0;
      } else {
        g.setConstant(-1.0 / std::sqrt(double(dim_)));
      }
      return g;
    }
    case Kind::kTraceBound: {
      if (boundary_distance_lb(x) <= 0.0) return g;
      const double scale = -1.0 / (2.0 * std::sqrt(trace_cap_ + trace_cap_ * trace_cap_));
      Index k = 0;
      for (int i = 0; i < order_; ++i) {
        for (int j = 0; j <= i; ++j, ++k) {
          g[k] = scale * ((i == j) ? 2.0 * std::exp(2.0 * x[k]) : 2.0 * x[k]);
        }
      }
      return g;
    }
    case Kind::kSphericalPolygon:
    case Kind::kAll:
      return g;  // piecewise constant / unbounded: zero almost everywhere
    case Kind::kProduct: {
      double best = std::numeric_limits<double>::infinity();
      size_t bi = 0;
      for (size_t i = 0; i < parts_.size(); ++i) {
        const double v = parts_[i].boundary_distance_lb(x.segment(offsets_[i], parts_[i].dim()));
        if (v < best) { best = v; bi = i; }
      }
      if (!std::isfinite(best)) return g;
      g.segment(offsets_[bi], parts_[bi].dim()) =
          parts_[bi].boundary_distance_lb_gradient(x.segment(offsets_[bi], parts_[bi].dim()));
      return g;
    }
  }
  throw ContractViolation("ConstraintSet::boundary_distance_lb_gradient: unknown kind");
}

// ---------------------------------------------------------------------------
// Faces

int ConstraintSet::face_count() const {
  switch (kind_) {
    case Kind::kHalfspaces:
      return static_cast<int>(a_.rows());
    case Kind::kHypercube:
      return 2 * dim_;
    case Kind::kSimplex:
      return dim_ + 1;
    case Kind::kTraceBound:
      return 1;
    case Kind::kAll:
      return 0;
    case Kind::kSphericalPolygon:
      throw UnsupportedOperation("ConstraintSet: spherical polygon faces are not scalar constraint functions");
    case Kind::kProduct: {
      int n = 0;
      for (const auto& p : parts_) n += p.face_count();
      return n;
    }
  }
  throw ContractViolation("ConstraintSet::face_count: unknown kind");
}

double ConstraintSet::face_value(int face, const Vector& x) const {
  switch (kind_) {
    case Kind::kHalfspaces:
      return a_.row(face).dot(x) - b_[face];
    case Kind::kHypercube:
      return face < dim_ ? x[face] - hi_[face] : lo_[face - dim_] - x[face - dim_];
    case Kind::kSimplex:
      return face < dim_ ? -x[face] : x.sum() - 1.0;
    case Kind::kTraceBound:
      return spd_trace_from_coords(order_, x) - trace_cap_;
    case Kind::kProduct: {
      for (size_t i = 0; i < parts_.size(); ++i) {
        const int n = parts_[i].face_count();
        if (face < n) return parts_[i].face_value(face, x.segment(offsets_[i], parts_[i].dim()));
        face -= n;
      }
      throw ContractViolation("ConstraintSet::face_value: face index out of range");
    }
    default:
      throw UnsupportedOperation("ConstraintSet::face_value: unsupported kind");
  }
}

Vector ConstraintSet::face_gradient(int face, const Vector& x) const {
  Vector g = Vector::Zero(dim_);
  switch (kind_) {
    case Kind::kHalfspaces:
      g = a_.row(face).transpose();
      return g;
    case Kind::kHypercube:
      if (face < dim_) g[face] = 1.0;
      else g[face - dim_] = -1.0;
      return g;
    case Kind::kSimplex:
      if (face < dim_) g[face] = -1.0;
      else g.setOnes();
      return g;
    case Kind::kTraceBound: {
      Index k = 0;
      for (int i = 0; i < order_; ++i) {
        for (int j = 0; j <= i; ++j, ++k) {
          g[k] = (i == j) ? 2.0 * std::exp(2.0 * x[k]) : 2.0 * x[k];
        }
      }
      return g;
    }
    case Kind::kProduct: {
      for (size_t i = 0; i < parts_.size(); ++i) {
        const int n = parts_[i].face_count();
        if (face < n) {
          g.segment(offsets_[i], parts_[i].dim()) =
              parts_[i].face_gradient(face, x.segment(offsets_[i], parts_[i].dim()));
          return g;
        }
        face -= n;
      }
      throw ContractViolation("ConstraintSet::face_gradient: face index out of range");
    }
    default:
      throw UnsupportedOperation("ConstraintSet::face_gradient: unsupported kind");
  }
}

// ---------------------------------------------------------------------------
// Ray intersection

namespace {

// Keeps the smallest-t hit, breaking ties by face order.
struct BestHit {
  double t = std::numeric_limits<double>::infinity();
  int face = -1;
  bool valid = false;

  void offer(double t_cand, int face_cand, double len) {
    if (t_cand < -kOnBoundaryRayTol || t_cand > len) return;
    const double t_clamped = std::max(t_cand, 0.0);
    if (!valid || t_clamped < t) {
      t = t_clamped;
      face = face_cand;
      valid = true;
    }
  }
};

}  // namespace

std::optional<RayHit> ConstraintSet::ray_intersect(const Vector& x, const Vector& dir, double len) const {
  check_dim("ConstraintSet::ray_intersect", x.size(), dim_);
  check_dim("ConstraintSet::ray_intersect", dir.size(), dim_);
  if (!(len > 0.0)) throw ContractViolation("ConstraintSet::ray_intersect: len must be positive");

  BestHit best;
  switch (kind_) {
    case Kind::kAll:
      return std::nullopt;
    case Kind::kSphericalPolygon:
      throw UnsupportedOperation("ConstraintSet::ray_intersect: not defined for spherical polygons (non-flat chart)");
    case Kind::kHalfspaces: {
      const Vector fx = a_ * x - b_;
      const Vector fd = a_ * dir;
      for (Index i = 0; i < fx.size(); ++i) {
        if (fd[i] > 0.0) best.offer(-fx[i] / fd[i], static_cast<int>(i), len);
      }
      break;
    }
    case Kind::kHypercube: {
      for (Index i = 0; i < dim_; ++i) {
        if (dir[i] > 0.0) best.offer((hi_[i] - x[i]) / dir[i], static_cast<int>(i), len);
        else if (dir[i] < 0.0) best.offer((lo_[i] - x[i]) / dir[i], static_cast<int>(dim_ + i), len);
      }
      break;
    }
    case Kind::kSimplex: {
      for (Index i = 0; i < dim_; ++i) {
        if (dir[i] < 0.0) best.offer(x[i] / (-dir[i]), static_cast<int>(i), len);
      }
      const double ds = dir.sum();
      if (ds > 0.0) best.offer((1.0 - x.sum()) / ds, dim_, len);
      break;
    }
    case Kind::kTraceBound: {
      auto g = [&](double t) { return spd_trace_from_coords(order_, x + t * dir) - trace_cap_; };
      const double g0 = g(0.0);
      const double glen = g(len);
      if (g0 >= -kBisectTol) {
        // On (or a hair past) the boundary; the trace along the ray is convex,
        // so either we exit immediately or dip back inside first.
        Vector grad = face_gradient(0, x);
        if (grad.dot(dir) >= 0.0) {
          best.offer(0.0, 0, len);
          break;
        }
        if (glen < 0.0) break;  // dips inside and stays inside up to len
        double probe = len;
        double t_neg = -1.0;
        for (int it = 0; it < 60; ++it) {
          probe *= 0.5;
          if (g(probe) < 0.0) { t_neg = probe; break; }
        }
        if (t_neg < 0.0) { best.offer(0.0, 0, len); break; }
        double lo = t_neg, hi = len;
        while (hi - lo > kBisectTol) {
          const double mid = 0.5 * (lo + hi);
          (g(mid) < 0.0 ? lo : hi) = mid;
        }
        best.offer(hi, 0, len);
        break;
      }
      if (glen < 0.0) break;  // convex along the ray: no crossing in (0, len]
      double lo = 0.0, hi = len;
      while (hi - lo > kBisectTol) {
        const double mid = 0.5 * (lo + hi);
        (g(mid) < 0.0 ? lo : hi) = mid;
      }
      best.offer(hi, 0, len);
      break;
    }
    case Kind::kProduct: {
      std::optional<RayHit> joint;
      for (size_t i = 0; i < parts_.size(); ++i) {
        const int off = offsets_[i];
        const int n = parts_[i].dim();
        if (parts_[i].kind() == Kind::kAll) continue;
        Vector bdir = dir.segment(off, n);
        if (bdir.isZero(0.0)) continue;
        auto hit = parts_[i].ray_intersect(x.segment(off, n), bdir, len);
        if (hit && (!joint || hit->t < joint->t)) {
          RayHit h;
          h.t = hit->t;
          h.face = hit->face;  // face index within the part that was hit
          h.normal = Vector::Zero(dim_);
          h.normal.segment(off, n) = hit->normal;
          joint = std::move(h);
        }
      }
      return joint;
    }
  }

  if (!best.valid) return std::nullopt;
  RayHit hit;
  hit.t = best.t;
  hit.face = best.face;
  // Closed-form t can round a hair inside; nudge it up until the hit face
  // evaluates on the boundary or beyond, so x + t * dir never tests as
  // strictly interior.
  double step = std::numeric_limits<double>::epsilon() *
                (1.0 + hit.t + x.cwiseAbs().maxCoeff());
  for (int i = 0; i < 100 && face_value(hit.face, x + hit.t * dir) < 0.0; ++i) {
    hit.t += step;
    step *= 2.0;
  }
  Vector grad = face_gradient(hit.face, x + hit.t * dir);
  hit.normal = grad / grad.norm();
  return hit;
}

std::optional<RayHit> ConstraintSet::ray_intersect_generic(const Vector& x, const Vector& dir, double len) const {
  check_dim("ConstraintSet::ray_intersect_generic", x.size(), dim_);
  check_dim("ConstraintSet::ray_intersect_generic", dir.size(), dim_);
  if (!(len > 0.0)) throw ContractViolation("ConstraintSet::ray_intersect_generic: len must be positive");

  const int faces = face_count();  // throws UnsupportedOperation for polygons
  double best_t = std::numeric_limits<double>::infinity();
  int best_face = -1;
  Vector probe(dim_);  // reused across faces; the loop must not allocate
  for (int f = 0; f < faces; ++f) {
    probe = x;
    probe += len * dir;
    const double gend = face_value(f, probe);
    double lo = 0.0, hi = len;
    for (int it = 0; it < kGenericBisectIters; ++it) {
      const double mid = 0.5 * (lo + hi);
      probe = x;
      probe += mid * dir;
      (face_value(f, probe) < 0.0 ? lo : hi) = mid;
    }
    if (gend < 0.0) continue;  // still inside this face at the end of the ray
    if (hi < best_t) {
      best_t = hi;
      best_face = f;
    }
  }
  if (best_face < 0) return std::nullopt;
  RayHit hit;
  hit.t = best_t;
  hit.face = best_face;
  Vector grad = face_gradient(best_face, x + best_t * dir);
  hit.normal = grad / grad.norm();
  return hit;
}

void ConstraintSet::proposal_box(Vector& lo, Vector& hi) const {
  switch (kind_) {
    case Kind::kHypercube:
      lo = lo_;
      hi = hi_;
      return;
    case Kind::kSimplex:
      lo = Vector::Zero(dim_);
      hi = Vector::Ones(dim_);
      return;
    case Kind::kTraceBound: {
      lo.resize(dim_);
      hi.resize(dim_);
      const double off = std::sqrt(trace_cap_);
      Index k = 0;
      for (int i = 0; i < order_; ++i) {
        for (int j = 0; j <= i; ++j, ++k) {
          if (i == j) {
            lo[k] = kSpdLogDiagFloor;
            hi[k] = 0.5 * std::log(trace_cap_);
          } else {
            lo[k] = -off;
            hi[k] = off;
          }
        }
      }
      return;
    }
    case Kind::kProduct: {
      lo.resize(dim_);
      hi.resize(dim_);
      for (size_t i = 0; i < parts_.size(); ++i) {
        Vector plo, phi;
        parts_[i].proposal_box(plo, phi);
        lo.segment(offsets_[i], parts_[i].dim()) = plo;
        hi.segment(offsets_[i], parts_[i].dim()) = phi;
      }
      return;
    }
    default:
      throw UnsupportedOperation("ConstraintSet::proposal_box: no box proposal for " + std::to_string(int(kind_)));
  }
}

}  // namespace mrbm
