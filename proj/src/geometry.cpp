#include "mrbm/geometry.hpp"

#include <Eigen/Cholesky>
#include <cmath>
#include <numbers>
#include <sstream>

namespace mrbm {
namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;
constexpr double kSphereZeroVel = 1e-12;
constexpr double kUnitNormalTol = 1e-8;

void check_size(const char* op, const char* what, Index got, Index want) {
  if (got != want) {
    std::ostringstream msg;
    msg << op << ": " << what << " has length " << got << ", expected " << want;
    throw ContractViolation(msg.str());
  }
}

double wrap_angle(double a) {
  double w = std::fmod(a, kTwoPi);
  if (w < 0.0) w += kTwoPi;
  if (w >= kTwoPi) w = 0.0;  // guard against fmod landing exactly on 2*pi
  return w;
}

Point sphere_exp(const Point& p, const Tangent& v) {
  const double speed = v.norm();
  if (speed < kSphereZeroVel) return p;
  Point q = std::cos(speed) * p + (std::sin(speed) / speed) * v;
  q /= q.norm();
  return q;
}

Tangent sphere_transport(const Point& p, const Tangent& v, const Point& q) {
  const double c = p.dot(q);
  if (c <= -1.0 + 1e-12) {
    throw ContractViolation("parallel_transport: transport between antipodal sphere points is undefined");
  }
  return v - (v.dot(q) / (1.0 + c)) * (p + q);
}

}  // namespace

Manifold Manifold::euclidean(int dim) {
  if (dim < 1) throw ContractViolation("Manifold::euclidean: dim must be >= 1");
  return Manifold(Kind::kEuclidean, dim, dim, 0);
}

Manifold Manifold::sphere(int ambient_dim) {
  if (ambient_dim < 2) throw ContractViolation("Manifold::sphere: ambient dim must be >= 2");
  return Manifold(Kind::kSphere, ambient_dim - 1, ambient_dim, 0);
}

Manifold Manifold::torus(int dim) {
  if (dim < 1) throw ContractViolation("Manifold::torus: dim must be >= 1");
  return Manifold(Kind::kTorus, dim, dim, 0);
}

Manifold Manifold::log_cholesky_spd(int order) {
  if (order < 1) throw ContractViolation("Manifold::log_cholesky_spd: order must be >= 1");
  const int stor = order * (order + 1) / 2;
  return Manifold(Kind::kLogCholeskySpd, stor, stor, order);
}

Manifold Manifold::product(std::vector<Manifold> factors) {
  if (factors.empty()) throw ContractViolation("Manifold::product: needs at least one factor");
  int dim = 0, stor = 0;
  for (const auto& f : factors) {
    if (f.kind() == Kind::kProduct) {
      throw ContractViolation("Manifold::product: nested products are not supported, flatten the factor list");
    }
    dim += f.dim();
    stor += f.storage_size();
  }
  Manifold m(Kind::kProduct, dim, stor, 0);
  m.factors_ = std::move(factors);
  return m;
}

bool Manifold::is_flat() const {
  switch (kind_) {
    case Kind::kSphere:
      return false;
    case Kind::kProduct:
      for (const auto& f : factors_)
        if (!f.is_flat()) return false;
      return true;
    default:
      return true;
  }
}

std::string Manifold::describe() const {
  switch (kind_) {
    case Kind::kEuclidean:
      return "euclidean(" + std::to_string(dim_) + ")";
    case Kind::kSphere:
      return "sphere(" + std::to_string(storage_) + ")";
    case Kind::kTorus:
      return "torus(" + std::to_string(dim_) + ")";
    case Kind::kLogCholeskySpd:
      return "log_cholesky_spd(" + std::to_string(order_) + ")";
    case Kind::kProduct: {
      std::string s = "product(";
      for (size_t i = 0; i < factors_.size(); ++i) {
        if (i) s += ", ";
        s += factors_[i].describe();
      }
      return s + ")";
    }
  }
  return "?";
}

Point exp_map(const Manifold& m, const Point& p, const Tangent& v) {
  check_size("exp_map", "point", p.size(), m.storage_size());
  check_size("exp_map", "tangent", v.size(), m.storage_size());
  switch (m.kind()) {
    case Manifold::Kind::kEuclidean:
    case Manifold::Kind::kLogCholeskySpd:
      return p + v;
    case Manifold::Kind::kTorus: {
      Point q = p + v;
      for (Index i = 0; i < q.size(); ++i) q[i] = wrap_angle(q[i]);
      return q;
    }
    case Manifold::Kind::kSphere:
      return sphere_exp(p, v);
    case Manifold::Kind::kProduct: {
      Point q(m.storage_size());
      Index off = 0;
      for (const auto& f : m.factors()) {
        const Index n = f.storage_size();
        q.segment(off, n) = exp_map(f, p.segment(off, n), v.segment(off, n));
        off += n;
      }
      return q;
    }
  }
  throw ContractViolation("exp_map: unknown manifold kind");
}

Tangent tangent_randn(const Manifold& m, const Point& p, RngStream& rng) {
  check_size("tangent_randn", "point", p.size(), m.storage_size());
  switch (m.kind()) {
    case Manifold::Kind::kEuclidean:
    case Manifold::Kind::kTorus:
    case Manifold::Kind::kLogCholeskySpd:
      return rng.normal_vector(m.storage_size());
    case Manifold::Kind::kSphere: {
      Tangent z = rng.normal_vector(m.storage_size());
      return z - z.dot(p) * p;
    }
    case Manifold::Kind::kProduct: {
      Tangent z(m.storage_size());
      Index off = 0;
      for (const auto& f : m.factors()) {
        const Index n = f.storage_size();
        z.segment(off, n) = tangent_randn(f, p.segment(off, n), rng);
        off += n;
      }
      return z;
    }
  }
  throw ContractViolation("tangent_randn: unknown manifold kind");
}

Tangent project_tangent(const Manifold& m, const Point& p, const Vector& w) {
  check_size("project_tangent", "point", p.size(), m.storage_size());
  check_size("project_tangent", "vector", w.size(), m.storage_size());
  switch (m.kind()) {
    case Manifold::Kind::kEuclidean:
    case Manifold::Kind::kTorus:
    case Manifold::Kind::kLogCholeskySpd:
      return w;
    case Manifold::Kind::kSphere:
      return w - w.dot(p) * p;
    case Manifold::Kind::kProduct: {
      Tangent out(m.storage_size());
      Index off = 0;
      for (const auto& f : m.factors()) {
        const Index n = f.storage_size();
        out.segment(off, n) = project_tangent(f, p.segment(off, n), w.segment(off, n));
        off += n;
      }
      return out;
    }
  }
  throw ContractViolation("project_tangent: unknown manifold kind");
}

Tangent parallel_transport(const Manifold& m, const Point& p, const Tangent& v, const Point& q) {
  check_size("parallel_transport", "source point", p.size(), m.storage_size());
  check_size("parallel_transport", "tangent", v.size(), m.storage_size());
  check_size("parallel_transport", "target point", q.size(), m.storage_size());
  switch (m.kind()) {
    case Manifold::Kind::kEuclidean:
    case Manifold::Kind::kTorus:
    case Manifold::Kind::kLogCholeskySpd:
      return v;
    case Manifold::Kind::kSphere:
      return sphere_transport(p, v, q);
    case Manifold::Kind::kProduct: {
      Tangent w(m.storage_size());
      Index off = 0;
      for (const auto& f : m.factors()) {
        const Index n = f.storage_size();
        w.segment(off, n) = parallel_transport(f, p.segment(off, n), v.segment(off, n), q.segment(off, n));
        off += n;
      }
      return w;
    }
  }
  throw ContractViolation("parallel_transport: unknown manifold kind");
}

Tangent reflect_tangent(const Manifold& m, const Tangent& v, const Tangent& n) {
  check_size("reflect_tangent", "tangent", v.size(), m.storage_size());
  check_size("reflect_tangent", "normal", n.size(), m.storage_size());
  const double len = n.norm();
  if (std::abs(len - 1.0) > kUnitNormalTol) {
    throw ContractViolation("reflect_tangent: normal must be unit length (|n| = " + std::to_string(len) + ")");
  }
  return v - 2.0 * v.dot(n) * n;
}

double geodesic_distance(const Manifold& m, const Point& p, const Point& q) {
  check_size("geodesic_distance", "first point", p.size(), m.storage_size());
  check_size("geodesic_distance", "second point", q.size(), m.storage_size());
  switch (m.kind()) {
    case Manifold::Kind::kEuclidean:
    case Manifold::Kind::kLogCholeskySpd:
      return (p - q).norm();
    case Manifold::Kind::kTorus: {
      double s = 0.0;
      for (Index i = 0; i < p.size(); ++i) {
        double d = std::abs(wrap_angle(p[i]) - wrap_angle(q[i]));
        d = std::min(d, kTwoPi - d);
        s += d * d;
      }
      return std::sqrt(s);
    }
    case Manifold::Kind::kSphere: {
      const double c = std::clamp(p.dot(q), -1.0, 1.0);
      return std::acos(c);
    }
    case Manifold::Kind::kProduct: {
      double s = 0.0;
      Index off = 0;
      for (const auto& f : m.factors()) {
        const Index n = f.storage_size();
        const double d = geodesic_distance(f, p.segment(off, n), q.segment(off, n));
        s += d * d;
        off += n;
      }
      return std::sqrt(s);
    }
  }
  throw ContractViolation("geodesic_distance: unknown manifold kind");
}

Point normalize_point(const Manifold& m, const Point& p) {
  check_size("normalize_point", "point", p.size(), m.storage_size());
  switch (m.kind()) {
    case Manifold::Kind::kEuclidean:
    case Manifold::Kind::kLogCholeskySpd:
      return p;
    case Manifold::Kind::kTorus: {
      Point q = p;
      for (Index i = 0; i < q.size(); ++i) q[i] = wrap_angle(q[i]);
      return q;
    }
    case Manifold::Kind::kSphere: {
      const double len = p.norm();
      if (len == 0.0) throw ContractViolation("normalize_point: zero vector is not a sphere point");
      return p / len;
    }
    case Manifold::Kind::kProduct: {
      Point q(m.storage_size());
      Index off = 0;
      for (const auto& f : m.factors()) {
        const Index n = f.storage_size();
        q.segment(off, n) = normalize_point(f, p.segment(off, n));
        off += n;
      }
      return q;
    }
  }
  throw ContractViolation("normalize_point: unknown manifold kind");
}

Matrix spd_from_coords(int order, const Vector& coords) {
  check_size("spd_from_coords", "coords", coords.size(), order * (order + 1) / 2);
  Matrix l = Matrix::Zero(order, order);
  Index k = 0;
  for (int i = 0; i < order; ++i) {
    for (int j = 0; j <= i; ++j, ++k) {
      l(i, j) = (i == j) ? std::exp(coords[k]) : coords[k];
    }
  }
  return l * l.transpose();
}

Vector coords_from_spd(const Matrix& spd) {
  if (spd.rows() != spd.cols()) throw ContractViolation("coords_from_spd: matrix must be square");
  const int order = static_cast<int>(spd.rows());
  Eigen::LLT<Matrix> llt(spd);
  if (llt.info() != Eigen::Success) {
    throw ContractViolation("coords_from_spd: matrix is not positive definite");
  }
  Matrix l = llt.matrixL();
  Vector coords(order * (order + 1) / 2);
  Index k = 0;
  for (int i = 0; i < order; ++i) {
    for (int j = 0; j <= i; ++j, ++k) {
      coords[k] = (i == j) ? std::log(l(i, j)) : l(i, j);
    }
  }
  return coords;
}

double spd_trace_from_coords(int order, const Vector& coords) {
  check_size("spd_trace_from_coords", "coords", coords.size(), order * (order + 1) / 2);
  // tr(L L^T) is the squared Frobenius norm of L.
  double tr = 0.0;
  Index k = 0;
  for (int i = 0; i < order; ++i) {
    for (int j = 0; j <= i; ++j, ++k) {
      const double lij = (i == j) ? std::exp(coords[k]) : coords[k];
      tr += lij * lij;
    }
  }
  return tr;
}

}  // namespace mrbm
