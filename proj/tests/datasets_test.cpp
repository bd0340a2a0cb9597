#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "doctest.h"
#include "json.hpp"
#include "mrbm/constraints.hpp"
#include "mrbm/datasets.hpp"
#include "mrbm/geometry.hpp"
#include "mrbm/io.hpp"
#include "support/oracles.hpp"

using namespace mrbm;

namespace {

struct TempDir {
  std::filesystem::path path;
  TempDir() {
    std::string tmpl = (std::filesystem::temp_directory_path() / "mrbm-data-XXXXXX").string();
    path = mkdtemp(tmpl.data());
  }
  ~TempDir() { std::filesystem::remove_all(path); }
  std::string file(const std::string& name) const { return (path / name).string(); }
};

void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path);
  out << content;
}

std::string polar_square_polygon() {
  return "lon_deg,lat_deg\n# reference: 0,90\n0,45\n90,45\n180,45\n270,45\n";
}

}  // namespace

TEST_SUITE("datasets") {

TEST_CASE("make_split is a deterministic 90/10 partition") {
  std::vector<Index> train, test;
  make_split(100, 7, train, test);
  CHECK(train.size() == 90);
  CHECK(test.size() == 10);
  CHECK(std::is_sorted(train.begin(), train.end()));
  CHECK(std::is_sorted(test.begin(), test.end()));

  std::set<Index> all(train.begin(), train.end());
  all.insert(test.begin(), test.end());
  CHECK(all.size() == 100);
  CHECK(*all.begin() == 0);
  CHECK(*all.rbegin() == 99);

  std::vector<Index> train2, test2;
  make_split(100, 7, train2, test2);
  CHECK(train2 == train);
  CHECK(test2 == test);

  make_split(100, 8, train2, test2);
  CHECK(train2 != train);

  // Tiny sets keep everything in train; empty sets stay empty.
  make_split(5, 1, train, test);
  CHECK(train.size() == 5);
  CHECK(test.empty());
  make_split(0, 1, train, test);
  CHECK(train.empty());
  CHECK(test.empty());
  CHECK_THROWS_AS(make_split(-1, 1, train, test), ConfigError);
}

TEST_CASE("synth_bimodal on a cube recovers the documented mixture") {
  const int d = 2;
  const long n = 20000;
  const Manifold m = Manifold::euclidean(d);
  const ConstraintSet c =
      ConstraintSet::hypercube(Vector::Constant(d, -1.0), Vector::Constant(d, 1.0));
  const Dataset ds = synth_bimodal(m, c, d, n, 3);

  REQUIRE(ds.points.rows() == d);
  REQUIRE(ds.points.cols() == n);
  for (Index j = 0; j < ds.points.cols(); ++j) CHECK(c.contains(ds.points.col(j)));
  CHECK(ds.train_idx.size() == 18000);
  CHECK(ds.test_idx.size() == 2000);
  CHECK(ds.split_seed == 3);

  // Means-only EM run by an independent routine lands on +-0.5 per axis.
  const auto [mu_a, mu_b] = oracle::em_two_gaussians(ds.points, 0.2, 60);
  CHECK((mu_a - Vector::Constant(d, -0.5)).lpNorm<Eigen::Infinity>() <= 0.05);
  CHECK((mu_b - Vector::Constant(d, 0.5)).lpNorm<Eigen::Infinity>() <= 0.05);

  const auto meta = nlohmann::json::parse(ds.meta);
  CHECK(meta.at("generator") == "synth_bimodal");
  CHECK(meta.at("target") == "hypercube");
  CHECK(meta.at("sigma").get<double>() == doctest::Approx(0.2));
  CHECK(meta.at("mean_b").get<std::vector<double>>() == std::vector<double>{0.5, 0.5});

  // Rerun with the same seed reproduces every byte of the sample.
  const Dataset again = synth_bimodal(m, c, d, n, 3);
  CHECK(again.points == ds.points);
  CHECK(again.meta == ds.meta);
  const Dataset other = synth_bimodal(m, c, d, n, 4);
  CHECK(other.points != ds.points);
}

TEST_CASE("synth_bimodal on a simplex places the documented modes") {
  const int d = 3;
  const long n = 20000;
  const Manifold m = Manifold::euclidean(d);
  const ConstraintSet c = ConstraintSet::simplex(d);
  const Dataset ds = synth_bimodal(m, c, d, n, 11);

  for (Index j = 0; j < ds.points.cols(); ++j) CHECK(c.contains(ds.points.col(j)));

  Vector mean_a = Vector::Constant(d, 1.0 / (2.0 * d));
  Vector mean_b = Vector::Constant(d, 1.0 / (d + 1.0));
  mean_b[0] += std::min(0.25, 1.0 / (2.0 * (d + 1.0)));

  // Assign each sample to the nearer documented mode; the cluster means must
  // sit on those modes (the separation is ~4 sigma, so leakage is tiny).
  Vector sum_a = Vector::Zero(d), sum_b = Vector::Zero(d);
  long na = 0, nb = 0;
  for (Index j = 0; j < ds.points.cols(); ++j) {
    const Vector x = ds.points.col(j);
    if ((x - mean_a).norm() < (x - mean_b).norm()) {
      sum_a += x;
      ++na;
    } else {
      sum_b += x;
      ++nb;
    }
  }
  REQUIRE(na > n / 4);
  REQUIRE(nb > n / 4);
  CHECK((sum_a / na - mean_a).lpNorm<Eigen::Infinity>() <= 0.05);
  CHECK((sum_b / nb - mean_b).lpNorm<Eigen::Infinity>() <= 0.05);

  const auto meta = nlohmann::json::parse(ds.meta);
  CHECK(meta.at("target") == "simplex");
}

TEST_CASE("synth_bimodal validates inputs and detects hopeless targets") {
  const Manifold m1 = Manifold::euclidean(1);
  const ConstraintSet cube1 =
      ConstraintSet::hypercube(Vector::Constant(1, -1.0), Vector::Constant(1, 1.0));
  CHECK_THROWS_AS(synth_bimodal(m1, cube1, 0, 10, 0), ConfigError);
  CHECK_THROWS_AS(synth_bimodal(m1, cube1, 1, 0, 0), ConfigError);
  CHECK_THROWS_AS(synth_bimodal(Manifold::sphere(3), cube1, 1, 10, 0), ConfigError);
  CHECK_THROWS_AS(synth_bimodal(m1, ConstraintSet::all(1), 1, 10, 0), ConfigError);
  CHECK_THROWS_AS(
      synth_bimodal(Manifold::euclidean(2),
                    ConstraintSet::hypercube(Vector::Zero(3), Vector::Ones(3)), 2, 10, 0),
      ConfigError);

  // A box far from both mixture modes starves the rejection loop.
  const ConstraintSet far_box =
      ConstraintSet::hypercube(Vector::Constant(1, 10.0), Vector::Constant(1, 11.0));
  CHECK_THROWS_AS(synth_bimodal(m1, far_box, 1, 10, 0), NumericalError);
}

TEST_CASE("synth_spd_ellipsoids emits valid constrained pairs") {
  const long n = 500;
  const double cap = 3.0;
  const Dataset ds = synth_spd_ellipsoids(n, cap, 9);

  CHECK(ds.manifold.kind() == Manifold::Kind::kProduct);
  REQUIRE(ds.manifold.storage_size() == 5);
  REQUIRE(ds.points.rows() == 5);
  REQUIRE(ds.points.cols() == n);
  for (Index j = 0; j < n; ++j) CHECK(ds.constraint.contains(ds.points.col(j)));

  // Decode the log-Cholesky block (row-major lower triangle, log on the
  // diagonal): L = [[exp(p0), 0], [p1, exp(p2)]] and W = L L^T must be
  // symmetric positive definite under the trace cap.
  for (Index j = 0; j < n; ++j) {
    const Vector p = ds.points.col(j);
    Eigen::Matrix2d l;
    l << std::exp(p[0]), 0.0, p[1], std::exp(p[2]);
    const Eigen::Matrix2d w = l * l.transpose();
    CHECK(w(0, 1) == doctest::Approx(w(1, 0)).epsilon(1e-15));
    CHECK(w.trace() < cap);
    // PD via the 2x2 criteria: positive diagonal and positive determinant.
    CHECK(w(0, 0) > 0.0);
    CHECK(w(0, 0) * w(1, 1) - w(0, 1) * w(1, 0) > 0.0);
  }

  const auto meta = nlohmann::json::parse(ds.meta);
  CHECK(meta.at("generator") == "synth_spd_ellipsoids");
  CHECK(meta.at("trace_cap").get<double>() == doctest::Approx(cap));

  const Dataset again = synth_spd_ellipsoids(n, cap, 9);
  CHECK(again.points == ds.points);

  CHECK_THROWS_AS(synth_spd_ellipsoids(0, cap, 9), ConfigError);
  CHECK_THROWS_AS(synth_spd_ellipsoids(10, 0.0, 9), ConfigError);
}

TEST_CASE("load_geo_points keeps polygon members and reports drops") {
  TempDir tmp;
  const std::string poly_path = tmp.file("poly.csv");
  write_file(poly_path, polar_square_polygon());

  // 60 points safely inside the polar cap, 30 well below it.
  std::string rows;
  for (int i = 0; i < 60; ++i)
    rows += std::to_string(-180 + i * 6) + "," + std::to_string(62.0 + (i % 20)) + "\n";
  for (int i = 0; i < 30; ++i)
    rows += std::to_string(-150 + i * 10) + "," + std::to_string(-10.0 + i) + "\n";
  const std::string pts_path = tmp.file("points.csv");
  write_file(pts_path, "# visitor log\n" + rows);

  GeoLoadReport report;
  const Dataset ds = load_geo_points(pts_path, poly_path, &report);
  CHECK(report.total_rows == 90);
  CHECK(report.kept == 60);
  CHECK(report.dropped == 30);
  CHECK_FALSE(report.suspicious);

  CHECK(ds.manifold.kind() == Manifold::Kind::kSphere);
  REQUIRE(ds.points.rows() == 3);
  REQUIRE(ds.points.cols() == 60);
  for (Index j = 0; j < ds.points.cols(); ++j) {
    CHECK(ds.points.col(j).norm() == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(ds.constraint.contains(ds.points.col(j)));
  }
  CHECK(ds.train_idx.size() + ds.test_idx.size() == 60);

  const auto meta = nlohmann::json::parse(ds.meta);
  CHECK(meta.at("rows").get<long>() == 90);
  CHECK(meta.at("dropped").get<long>() == 30);
}

TEST_CASE("load_geo_points flags suspicious files and parse errors") {
  TempDir tmp;
  const std::string poly_path = tmp.file("poly.csv");
  write_file(poly_path, polar_square_polygon());

  std::string mostly_outside;
  for (int i = 0; i < 5; ++i) mostly_outside += std::to_string(10 * i) + ",70\n";
  for (int i = 0; i < 20; ++i) mostly_outside += std::to_string(10 * i) + ",-45\n";
  const std::string bad_mix = tmp.file("mostly_outside.csv");
  write_file(bad_mix, mostly_outside);
  GeoLoadReport report;
  const Dataset ds = load_geo_points(bad_mix, poly_path, &report);
  CHECK(report.suspicious);
  CHECK(ds.points.cols() == 5);

  // An empty listing is legal and keeps the polygon attached.
  const std::string empty = tmp.file("empty.csv");
  write_file(empty, "# nothing yet\n");
  const Dataset none = load_geo_points(empty, poly_path, &report);
  CHECK(report.total_rows == 0);
  CHECK_FALSE(report.suspicious);
  CHECK(none.points.cols() == 0);
  CHECK(none.constraint.kind() == ConstraintSet::Kind::kSphericalPolygon);

  // Malformed rows name the offending line.
  const std::string broken = tmp.file("broken.csv");
  write_file(broken, "10,50\n20,60\nnot-a-number,70\n");
  CHECK_THROWS_WITH_AS(load_geo_points(broken, poly_path, nullptr), doctest::Contains(":3"),
                       ConfigError);
  const std::string short_row = tmp.file("short.csv");
  write_file(short_row, "10,50\n20\n");
  CHECK_THROWS_WITH_AS(load_geo_points(short_row, poly_path, nullptr), doctest::Contains(":2"),
                       ConfigError);
  const std::string out_of_range = tmp.file("range.csv");
  write_file(out_of_range, "10,95\n");
  CHECK_THROWS_AS(load_geo_points(out_of_range, poly_path, nullptr), ConfigError);

  // Polygon file problems surface the same way.
  const std::string no_ref = tmp.file("no_ref.csv");
  write_file(no_ref, "lon_deg,lat_deg\n0,45\n90,45\n180,45\n");
  CHECK_THROWS_AS(load_geo_points(empty, no_ref, nullptr), ConfigError);
  const std::string two_verts = tmp.file("two.csv");
  write_file(two_verts, "# reference: 0,90\n0,45\n90,45\n");
  CHECK_THROWS_AS(load_geo_points(empty, two_verts, nullptr), ConfigError);
}

TEST_CASE("train and test views select the split columns") {
  const Manifold m = Manifold::euclidean(1);
  const ConstraintSet c =
      ConstraintSet::hypercube(Vector::Constant(1, -1.0), Vector::Constant(1, 1.0));
  const Dataset ds = synth_bimodal(m, c, 1, 50, 2);
  const Matrix train = ds.train_points();
  const Matrix test = ds.test_points();
  REQUIRE(train.cols() == static_cast<Index>(ds.train_idx.size()));
  REQUIRE(test.cols() == static_cast<Index>(ds.test_idx.size()));
  for (size_t i = 0; i < ds.train_idx.size(); ++i)
    CHECK(train.col(static_cast<Index>(i)) == ds.points.col(ds.train_idx[i]));
  for (size_t i = 0; i < ds.test_idx.size(); ++i)
    CHECK(test.col(static_cast<Index>(i)) == ds.points.col(ds.test_idx[i]));
}

}  // TEST_SUITE
