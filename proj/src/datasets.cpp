#include "mrbm/datasets.hpp"

#include <cmath>
#include <iostream>
#include <numeric>
#include <sstream>

#include "json.hpp"
#include "mrbm/io.hpp"
#include "mrbm/rng.hpp"

namespace mrbm {

namespace {

Matrix select_columns(const Matrix& points, const std::vector<Index>& idx) {
  Matrix out(points.rows(), static_cast<Index>(idx.size()));
  for (size_t j = 0; j < idx.size(); ++j) out.col(static_cast<Index>(j)) = points.col(idx[j]);
  return out;
}

// Shared rejection driver; aborts when the accept rate shows the generator
// does not fit the constraint set.
template <typename Propose>
Matrix rejection_fill(const char* who, const ConstraintSet& c, Index dim, long n, Propose propose) {
  Matrix pts(dim, n);
  long accepted = 0;
  long proposals = 0;
  while (accepted < n) {
    ++proposals;
    const Vector x = propose();
    if (c.contains(x)) pts.col(accepted++) = x;
    if (proposals >= 10000 && static_cast<double>(accepted) < 1e-4 * static_cast<double>(proposals)) {
      std::ostringstream msg;
      msg << who << ": generator mismatch, acceptance rate " << static_cast<double>(accepted) / proposals
          << " after " << proposals << " proposals";
      throw NumericalError(msg.str());
    }
  }
  return pts;
}

}  // namespace

Matrix Dataset::train_points() const { return select_columns(points, train_idx); }

Matrix Dataset::test_points() const { return select_columns(points, test_idx); }

void make_split(Index n, std::uint64_t seed, std::vector<Index>& train, std::vector<Index>& test) {
  if (n < 0) throw ConfigError("make_split: negative size");
  std::vector<Index> idx(static_cast<size_t>(n));
  std::iota(idx.begin(), idx.end(), Index{0});
  RngStream rng(seed, "split", 0);
  for (Index i = n - 1; i > 0; --i) {
    const Index j = static_cast<Index>(rng.uniform_index(static_cast<std::uint64_t>(i) + 1));
    std::swap(idx[static_cast<size_t>(i)], idx[static_cast<size_t>(j)]);
  }
  const Index n_test = n / 10;
  train.assign(idx.begin(), idx.end() - n_test);
  test.assign(idx.end() - n_test, idx.end());
  std::sort(train.begin(), train.end());
  std::sort(test.begin(), test.end());
}

Dataset synth_bimodal(const Manifold& m, const ConstraintSet& c, int d, long n, std::uint64_t seed) {
  if (d < 1 || n < 1) throw ConfigError("synth_bimodal: need d >= 1 and n >= 1");
  if (m.kind() != Manifold::Kind::kEuclidean || m.storage_size() != d)
    throw ConfigError("synth_bimodal: manifold must be Euclidean(d)");
  if (c.dim() != d) throw ConfigError("synth_bimodal: constraint dimension mismatch");
  const bool cube = c.kind() == ConstraintSet::Kind::kHypercube;
  if (!cube && c.kind() != ConstraintSet::Kind::kSimplex)
    throw ConfigError("synth_bimodal: constraint must be a hypercube or simplex");

  Vector mean_a(d), mean_b(d);
  double sigma = 0.0;
  if (cube) {
    mean_a.setConstant(-0.5);
    mean_b.setConstant(0.5);
    sigma = 0.2;
  } else {
    mean_a.setConstant(1.0 / (2.0 * d));
    mean_b.setConstant(1.0 / (d + 1.0));
    mean_b[0] += std::min(0.25, 1.0 / (2.0 * (d + 1.0)));
    sigma = 0.1 / std::sqrt(static_cast<double>(d));
  }

  RngStream rng(seed, "bimodal", 0);
  Matrix pts = rejection_fill("synth_bimodal", c, d, n, [&]() -> Vector {
    const Vector& mu = rng.uniform() < 0.5 ? mean_a : mean_b;
    return mu + sigma * rng.normal_vector(d);
  });

  nlohmann::json meta;
  meta["generator"] = "synth_bimodal";
  meta["target"] = cube ? "hypercube" : "simplex";
  meta["d"] = d;
  meta["n"] = n;
  meta["seed"] = seed;
  meta["sigma"] = sigma;
  meta["mean_a"] = std::vector<double>(mean_a.data(), mean_a.data() + d);
  meta["mean_b"] = std::vector<double>(mean_b.data(), mean_b.data() + d);

  std::vector<Index> train, test;
  make_split(n, seed, train, test);
  return Dataset{m, c, std::move(pts), meta.dump(), std::move(train), std::move(test), seed};
}

Dataset load_geo_points(const std::string& points_path, const std::string& polygon_path,
                        GeoLoadReport* report) {
  const SphericalPolygon poly = load_spherical_polygon(polygon_path);
  const Manifold m = Manifold::sphere(3);
  const ConstraintSet c = ConstraintSet::spherical_polygon(poly);

  const auto rows = read_lon_lat_csv(points_path);
  GeoLoadReport rep;
  rep.total_rows = static_cast<long>(rows.cols());
  std::vector<Index> keep;
  for (Index j = 0; j < rows.cols(); ++j) {
    if (c.contains(rows.col(j)))
      keep.push_back(j);
    else
      ++rep.dropped;
  }
  rep.kept = static_cast<long>(keep.size());
  rep.suspicious = rep.total_rows > 0 && 2 * rep.dropped > rep.total_rows;
  if (rep.suspicious)
    std::cerr << "load_geo_points: " << rep.dropped << " of " << rep.total_rows
              << " rows fall outside the polygon; check that the files belong together\n";
  if (report) *report = rep;

  Matrix pts = select_columns(rows, keep);
  nlohmann::json meta;
  meta["source"] = points_path;
  meta["polygon"] = polygon_path;
  meta["rows"] = rep.total_rows;
  meta["dropped"] = rep.dropped;

  std::vector<Index> train, test;
  make_split(pts.cols(), 0, train, test);  // loads carry no seed; split fixed at 0
  return Dataset{m, c, std::move(pts), meta.dump(), std::move(train), std::move(test), 0};
}

Dataset synth_spd_ellipsoids(long n, double trace_cap, std::uint64_t seed) {
  if (n < 1) throw ConfigError("synth_spd_ellipsoids: need n >= 1");
  if (!(trace_cap > 0.0)) throw ConfigError("synth_spd_ellipsoids: trace cap must be positive");
  const Manifold m = Manifold::product({Manifold::log_cholesky_spd(2), Manifold::euclidean(2)});
  const ConstraintSet c =
      ConstraintSet::product({ConstraintSet::trace_bound(2, trace_cap), ConstraintSet::all(2)});

  RngStream rng(seed, "spd", 0);
  Matrix pts = rejection_fill("synth_spd_ellipsoids", c, m.storage_size(), n, [&]() -> Vector {
    Matrix a(2, 2);
    for (Index r = 0; r < 2; ++r)
      for (Index col = 0; col < 2; ++col) a(r, col) = rng.normal();
    Matrix w = a * a.transpose() + 0.1 * Matrix::Identity(2, 2);
    const double tr = w.trace();
    if (tr >= trace_cap) w *= rng.uniform(0.1, 0.95) * trace_cap / tr;
    Vector x(5);
    x.head(3) = coords_from_spd(w);
    x.tail(2) = rng.normal_vector(2);
    return x;
  });

  nlohmann::json meta;
  meta["generator"] = "synth_spd_ellipsoids";
  meta["n"] = n;
  meta["trace_cap"] = trace_cap;
  meta["seed"] = seed;

  std::vector<Index> train, test;
  make_split(n, seed, train, test);
  return Dataset{m, c, std::move(pts), meta.dump(), std::move(train), std::move(test), seed};
}

}  // namespace mrbm
