#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <sys/wait.h>
#include <vector>

#include "doctest.h"
#include "json.hpp"
#include "mrbm/constraints.hpp"
#include "mrbm/datasets.hpp"
#include "mrbm/geometry.hpp"
#include "mrbm/io.hpp"
#include "mrbm/rng.hpp"
#include "mrbm/samplers.hpp"
#include "mrbm/scorenet.hpp"

using namespace mrbm;
using nlohmann::json;

namespace {

struct TempDir {
  std::filesystem::path path;
  TempDir() {
    std::string tmpl = (std::filesystem::temp_directory_path() / "mrbm-io-XXXXXX").string();
    path = mkdtemp(tmpl.data());
  }
  ~TempDir() { std::filesystem::remove_all(path); }
  std::string file(const std::string& name) const { return (path / name).string(); }
};

void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  out << content;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

// Runs the experiment binary through the shell, muting its streams; the
// prefix slot takes environment assignments.
int run_cli(const std::string& args, const std::string& env_prefix = "") {
  std::string cmd = env_prefix.empty() ? "" : env_prefix + " ";
  cmd += std::string("\"") + MRBM_CLI_PATH + "\" " + args + " > /dev/null 2>&1";
  const int rc = std::system(cmd.c_str());
  REQUIRE(rc != -1);
  return WEXITSTATUS(rc);
}

std::string first_line(const std::string& text) {
  return text.substr(0, text.find('\n'));
}

std::string polar_square_polygon() {
  return "lon_deg,lat_deg\n# reference: 0,90\n0,45\n90,45\n180,45\n270,45\n";
}

Matrix random_points(std::uint64_t seed, Index rows, Index cols, double scale) {
  RngStream rng(seed, "pts", 0);
  Matrix x(rows, cols);
  for (Index j = 0; j < cols; ++j)
    for (Index i = 0; i < rows; ++i) x(i, j) = scale * rng.normal();
  return x;
}

}  // namespace

TEST_SUITE("io_cli") {

TEST_CASE("format_double round-trips exactly") {
  const double values[] = {0.0,    1.0,   -1.0,          0.1,   1.0 / 3.0, M_PI,
                           1e-308, 1e308, -2.5e-17,      123456789.123456789,
                           -0.0,   2.0,   6.02214076e23, 5e-324};
  for (double v : values) {
    const std::string s = format_double(v);
    CHECK(std::stod(s) == v);
  }
  // Short decimals print without noise digits.
  CHECK(format_double(0.5) == "0.5");
  CHECK(format_double(2.0) == "2");
}

TEST_CASE("samples CSV round-trips bitwise") {
  TempDir tmp;
  const Matrix pts = random_points(1, 3, 7, 1e5);
  Vector times(7);
  times << 0.0, 0.1, 1.0 / 3.0, 0.2, 1e-17, 5.0, 0.7;
  const std::string path = tmp.file("samples.csv");
  write_samples_csv(path, times, pts);

  CHECK(first_line(slurp(path)) == "t,coord_0,coord_1,coord_2");
  const auto [rt, rp] = read_samples_csv(path);
  CHECK(rt == times);
  CHECK(rp == pts);

  // The scalar-time overload stamps every row with the same t.
  const std::string path2 = tmp.file("flat.csv");
  write_samples_csv(path2, 0.25, pts);
  const auto [ft, fp] = read_samples_csv(path2);
  CHECK(ft == Vector::Constant(7, 0.25));
  CHECK(fp == pts);

  CHECK_THROWS_AS(write_samples_csv(tmp.file("bad.csv"), Vector::Zero(3), pts),
                  ContractViolation);
  write_file(tmp.file("empty.csv"), "");
  CHECK_THROWS_AS(read_samples_csv(tmp.file("empty.csv")), ConfigError);
  write_file(tmp.file("header.csv"), "x,y\n1,2\n");
  CHECK_THROWS_AS(read_samples_csv(tmp.file("header.csv")), ConfigError);
  write_file(tmp.file("ragged.csv"), "t,coord_0\n0,1\n0,1,2\n");
  CHECK_THROWS_AS(read_samples_csv(tmp.file("ragged.csv")), ConfigError);
}

TEST_CASE("trajectory CSV layout") {
  TempDir tmp;
  const Manifold m = Manifold::euclidean(2);
  const ConstraintSet c = ConstraintSet::hypercube(Vector::Zero(2), Vector::Ones(2));
  Vector x0(2);
  x0 << 0.5, 0.5;
  StepConfig scfg;
  scfg.gamma = 1e-3;
  const auto schedule = constant_schedule(1e-3, 5e-3);
  std::vector<Trajectory> trajs;
  trajs.push_back(run_chain(m, c, x0, SamplerKind::kMetropolis, schedule, scfg, 3, 0));
  trajs.push_back(run_chain(m, c, x0, SamplerKind::kMetropolis, schedule, scfg, 3, 1));

  const std::string path = tmp.file("traj.csv");
  write_trajectories_csv(path, trajs);
  const std::string text = slurp(path);
  CHECK(first_line(text) == "chain_id,k,t,accept,coord_0,coord_1");

  std::istringstream in(text);
  std::string line;
  std::getline(in, line);
  long rows = 0;
  while (std::getline(in, line)) {
    if (!line.empty()) ++rows;
  }
  CHECK(rows == 2 * 6);  // two chains, five steps plus the start state

  // Starting rows carry k = 0, accept = 1, and the seed coordinates.
  std::istringstream again(text);
  std::getline(again, line);
  std::getline(again, line);
  CHECK(line == "0,0,0,1,0.5,0.5");

  CHECK_THROWS_AS(write_trajectories_csv(tmp.file("none.csv"), {}), ContractViolation);
}

TEST_CASE("scaling and loss CSV formats") {
  TempDir tmp;
  const std::vector<ScalingRow> rows = {{1, 100, 0.5}, {2, 400, 2.25}};
  write_scaling_csv(tmp.file("scaling.csv"), rows);
  CHECK(slurp(tmp.file("scaling.csv")) == "d,steps,wall_seconds\n1,100,0.5\n2,400,2.25\n");

  // Dyadic values so the shortest decimal form is also the exact one.
  Vector losses(2), lrs(2);
  losses << 1.5, 0.75;
  lrs << 0.03125, 0.015625;
  write_loss_csv(tmp.file("loss.csv"), losses, lrs);
  CHECK(slurp(tmp.file("loss.csv")) == "step,loss,lr\n0,1.5,0.03125\n1,0.75,0.015625\n");
  CHECK_THROWS_AS(write_loss_csv(tmp.file("bad.csv"), losses, Vector::Zero(3)),
                  ContractViolation);
}

TEST_CASE("manifold JSON round-trips every kind") {
  const std::vector<Manifold> cases = {
      Manifold::euclidean(3), Manifold::sphere(3), Manifold::torus(2),
      Manifold::log_cholesky_spd(2),
      Manifold::product({Manifold::euclidean(2), Manifold::sphere(3)})};
  for (const Manifold& m : cases) {
    const Manifold back = manifold_from_json(manifold_to_json(m));
    CHECK(back.kind() == m.kind());
    CHECK(back.storage_size() == m.storage_size());
    CHECK(back.dim() == m.dim());
    CHECK(back.describe() == m.describe());
  }
  CHECK_THROWS_AS(manifold_from_json(json{{"type", "banana"}}), ConfigError);
  CHECK_THROWS_AS(manifold_from_json(json{{"type", "euclidean"}}), ConfigError);
  CHECK_THROWS_AS(manifold_from_json(json{{"type", "euclidean"}, {"dim", 2}, {"extra", 1}}),
                  ConfigError);
}

TEST_CASE("constraint JSON round-trips every kind") {
  Matrix a(3, 2);
  a << 1.0, 0.0, 0.0, 1.0, -1.0, -1.0;
  Vector b(3);
  b << 1.0, 1.0, 0.25;
  Matrix verts(3, 4);
  RngStream rng(5, "poly", 0);
  const SphericalPolygon poly = [&] {
    Matrix v(3, 4);
    const double lat = M_PI / 4.0;
    for (int k = 0; k < 4; ++k) {
      const double lon = k * M_PI / 2.0;
      v.col(k) << std::cos(lat) * std::cos(lon), std::cos(lat) * std::sin(lon), std::sin(lat);
    }
    Vector ref(3);
    ref << 0.0, 0.0, 1.0;
    return SphericalPolygon(v, ref);
  }();

  const std::vector<ConstraintSet> cases = {
      ConstraintSet::all(2),
      ConstraintSet::hypercube(Vector::Constant(2, -1.0), Vector::Constant(2, 1.0)),
      ConstraintSet::simplex(3),
      ConstraintSet::halfspaces(a, b),
      ConstraintSet::trace_bound(2, 4.0),
      ConstraintSet::spherical_polygon(poly),
      ConstraintSet::product({ConstraintSet::trace_bound(2, 4.0), ConstraintSet::all(2)})};

  for (const ConstraintSet& c : cases) {
    const ConstraintSet back = constraint_from_json(constraint_to_json(c));
    CHECK(back.kind() == c.kind());
    CHECK(back.dim() == c.dim());
    // Behavioral spot check on a few probe points.
    RngStream probe(7, "probe", 0);
    for (int i = 0; i < 20; ++i) {
      Vector x(c.dim());
      if (c.kind() == ConstraintSet::Kind::kSphericalPolygon) {
        for (Index k = 0; k < 3; ++k) x[k] = probe.normal();
        x /= x.norm();
      } else {
        for (Index k = 0; k < x.size(); ++k) x[k] = probe.uniform(-1.0, 1.0);
      }
      CHECK(back.contains(x) == c.contains(x));
    }
  }
  CHECK_THROWS_AS(constraint_from_json(json{{"type", "blob"}}), ConfigError);
  CHECK_THROWS_AS(constraint_from_json(json{{"type", "simplex"}}), ConfigError);
}

TEST_CASE("checkpoints round-trip parameters and metadata") {
  TempDir tmp;
  const MlpParams p = mlp_init(3, 2, 8, 3, 17);
  const json extra = {{"note", "fixture"}, {"grid", {{"T", 1.0}}}};
  const std::string path = tmp.file("model.ckpt");
  save_checkpoint(path, p, extra);

  const Checkpoint ck = load_checkpoint(path);
  CHECK(mlp_flatten(ck.params) == mlp_flatten(p));
  CHECK(ck.params.layers() == p.layers());
  CHECK(ck.header.at("note") == "fixture");
  CHECK(ck.header.at("format") == "mrbm-checkpoint");
  CHECK(ck.header.at("count").get<long>() == p.parameter_count());

  // Truncated payloads and mangled headers are rejected.
  const std::string whole = slurp(path);
  write_file(tmp.file("short.ckpt"), whole.substr(0, whole.size() - 9));
  CHECK_THROWS_AS(load_checkpoint(tmp.file("short.ckpt")), ConfigError);
  write_file(tmp.file("noise.ckpt"), "definitely not json\n1234");
  CHECK_THROWS_AS(load_checkpoint(tmp.file("noise.ckpt")), ConfigError);
  write_file(tmp.file("alien.ckpt"), "{\"format\":\"other\"}\n");
  CHECK_THROWS_AS(load_checkpoint(tmp.file("alien.ckpt")), ConfigError);
  CHECK_THROWS_AS(load_checkpoint(tmp.file("missing.ckpt")), ConfigError);
}

TEST_CASE("halfspace CSV loading") {
  TempDir tmp;
  const std::string path = tmp.file("faces.csv");
  write_file(path, "# unit square via four rows\n1,0,1\n0,1,1\n-1,0,0\n0,-1,0\n");
  const ConstraintSet c = load_halfspaces_csv(path);
  CHECK(c.kind() == ConstraintSet::Kind::kHalfspaces);
  CHECK(c.dim() == 2);
  Vector inside(2), outside(2);
  inside << 0.5, 0.5;
  outside << 1.5, 0.5;
  CHECK(c.contains(inside));
  CHECK_FALSE(c.contains(outside));

  write_file(tmp.file("ragged.csv"), "1,0,1\n0,1\n");
  CHECK_THROWS_WITH_AS(load_halfspaces_csv(tmp.file("ragged.csv")), doctest::Contains(":2"),
                       ConfigError);
  write_file(tmp.file("empty.csv"), "# nothing\n");
  CHECK_THROWS_AS(load_halfspaces_csv(tmp.file("empty.csv")), ConfigError);
  write_file(tmp.file("single.csv"), "1\n");
  CHECK_THROWS_AS(load_halfspaces_csv(tmp.file("single.csv")), ConfigError);
}

TEST_CASE("dataset save and load round-trip") {
  TempDir tmp;
  const Manifold m = Manifold::euclidean(2);
  const ConstraintSet c =
      ConstraintSet::hypercube(Vector::Constant(2, -1.0), Vector::Constant(2, 1.0));
  const Dataset ds = synth_bimodal(m, c, 2, 120, 6);
  const std::string base = tmp.file("bimodal");
  save_dataset(ds, base);
  CHECK(std::filesystem::exists(base + ".csv"));
  CHECK(std::filesystem::exists(base + ".json"));

  const Dataset back = load_dataset(base);
  CHECK(back.points == ds.points);
  CHECK(back.train_idx == ds.train_idx);
  CHECK(back.test_idx == ds.test_idx);
  CHECK(back.split_seed == ds.split_seed);
  CHECK(back.manifold.describe() == ds.manifold.describe());
  CHECK(back.constraint.kind() == ds.constraint.kind());
  CHECK(json::parse(back.meta) == json::parse(ds.meta));

  CHECK_THROWS_AS(load_dataset(tmp.file("nope")), ConfigError);
}

TEST_CASE("json file helpers and key checking") {
  TempDir tmp;
  const json j = {{"alpha", 1}, {"beta", {1, 2, 3}}};
  save_json_file(tmp.file("x.json"), j);
  CHECK(load_json_file(tmp.file("x.json")) == j);

  write_file(tmp.file("broken.json"), "{oops");
  CHECK_THROWS_AS(load_json_file(tmp.file("broken.json")), ConfigError);
  CHECK_THROWS_AS(load_json_file(tmp.file("absent.json")), ConfigError);

  CHECK_NOTHROW(check_keys(j, "ctx", {"alpha"}, {"beta"}));
  CHECK_THROWS_WITH_AS(check_keys(j, "ctx", {"alpha"}, {}), doctest::Contains("beta"),
                       ConfigError);
  CHECK_THROWS_WITH_AS(check_keys(j, "ctx", {"alpha", "gamma"}, {"beta"}),
                       doctest::Contains("gamma"), ConfigError);
  CHECK_THROWS_AS(check_keys(json::array(), "ctx", {}, {}), ConfigError);
}

TEST_CASE("cli rejects bad invocations") {
  CHECK(run_cli("--help") == 0);
  CHECK(run_cli("density1d --help") == 0);
  CHECK(run_cli("") == 2);
  CHECK(run_cli("unknown-subcommand --config x.json") == 2);
  CHECK(run_cli("density1d") == 2);  // --config is required
  TempDir tmp;
  CHECK(run_cli("density1d --config " + tmp.file("absent.json")) == 2);
  write_file(tmp.file("broken.json"), "{not json");
  CHECK(run_cli("density1d --config " + tmp.file("broken.json")) == 2);
}

TEST_CASE("cli density1d writes the documented outputs deterministically") {
  TempDir tmp;
  json cfg = {{"gamma", 2e-3},
              {"times", {0.02, 0.05}},
              {"n_chains", 4000},
              {"bins", 10},
              {"seed", 1}};
  save_json_file(tmp.file("cfg.json"), cfg);

  const std::string out1 = tmp.file("run1");
  const std::string out2 = tmp.file("run2");
  CHECK(run_cli("density1d --config " + tmp.file("cfg.json") + " --out " + out1) == 0);
  CHECK(run_cli("density1d --config " + tmp.file("cfg.json") + " --out " + out2) == 0);

  const std::string csv = slurp(out1 + "/density1d.csv");
  CHECK(first_line(csv) == "sampler,t,x,empirical_density,oracle_density,tv");
  std::istringstream in(csv);
  std::string line;
  long rows = -1;  // skip header
  while (std::getline(in, line)) {
    if (!line.empty()) ++rows;
  }
  CHECK(rows == 2 * 2 * 10);  // samplers x times x bins

  // Reruns with one seed are byte-identical.
  CHECK(csv == slurp(out2 + "/density1d.csv"));
  CHECK(slurp(out1 + "/result.json") == slurp(out2 + "/result.json"));

  const json result = load_json_file(out1 + "/result.json");
  CHECK(result.at("slices").size() == 4);
  CHECK(result.at("max_tv").get<double>() > 0.0);
  CHECK(result.at("max_tv").get<double>() < 0.5);

  // A generous TV target passes, an impossible one exits 4 with pass=false.
  cfg["tv_target"] = 0.9;
  save_json_file(tmp.file("pass.json"), cfg);
  CHECK(run_cli("density1d --config " + tmp.file("pass.json") + " --out " + tmp.file("p")) == 0);
  CHECK(load_json_file(tmp.file("p") + "/result.json").at("pass").get<bool>());
  cfg["tv_target"] = 1e-9;
  save_json_file(tmp.file("fail.json"), cfg);
  CHECK(run_cli("density1d --config " + tmp.file("fail.json") + " --out " + tmp.file("f")) == 4);
  CHECK_FALSE(load_json_file(tmp.file("f") + "/result.json").at("pass").get<bool>());
}

TEST_CASE("cli density1d validates its config") {
  TempDir tmp;
  save_json_file(tmp.file("nokey.json"), json{{"times", {0.1}}});
  CHECK(run_cli("density1d --config " + tmp.file("nokey.json")) == 2);
  save_json_file(tmp.file("unknown.json"), json{{"gamma", 1e-3}, {"zeta", 1}});
  CHECK(run_cli("density1d --config " + tmp.file("unknown.json")) == 2);
  save_json_file(tmp.file("order.json"), json{{"gamma", 1e-3}, {"times", {0.2, 0.1}}});
  CHECK(run_cli("density1d --config " + tmp.file("order.json")) == 2);
  save_json_file(tmp.file("x0.json"), json{{"gamma", 1e-3}, {"x0", 0.0}});
  CHECK(run_cli("density1d --config " + tmp.file("x0.json")) == 2);
  save_json_file(tmp.file("short.json"), json{{"gamma", 1.0}, {"times", {0.1}}});
  CHECK(run_cli("density1d --config " + tmp.file("short.json")) == 2);
}

TEST_CASE("cli density1d is independent of the thread count") {
  TempDir tmp;
  json cfg = {{"gamma", 2e-3}, {"times", {0.02}}, {"n_chains", 2000}, {"bins", 8}, {"seed", 9}};
  save_json_file(tmp.file("cfg.json"), cfg);
  const std::string base = "density1d --config " + tmp.file("cfg.json") + " --out ";
  CHECK(run_cli(base + tmp.file("one"), "MRBM_THREADS=1") == 0);
  CHECK(run_cli(base + tmp.file("two"), "MRBM_THREADS=2") == 0);
  CHECK(slurp(tmp.file("one") + "/density1d.csv") == slurp(tmp.file("two") + "/density1d.csv"));
}

TEST_CASE("cli scaling reports per-sampler fits") {
  TempDir tmp;
  json cfg = {{"dims", {1, 2, 3}}, {"gamma", 5e-3},    {"tv_threshold", 0.35},
              {"n_chains", 512},   {"bins", 6},        {"check_every", 20},
              {"max_steps", 200000}, {"seed", 4}};
  save_json_file(tmp.file("cfg.json"), cfg);
  const std::string out1 = tmp.file("a");
  const std::string out2 = tmp.file("b");
  CHECK(run_cli("scaling --config " + tmp.file("cfg.json") + " --out " + out1) == 0);
  CHECK(run_cli("scaling --config " + tmp.file("cfg.json") + " --out " + out2) == 0);

  CHECK(first_line(slurp(out1 + "/scaling_metropolis.csv")) == "d,steps,wall_seconds");
  CHECK(std::filesystem::exists(out1 + "/scaling_reflected.csv"));

  const json r1 = load_json_file(out1 + "/result.json");
  const json r2 = load_json_file(out2 + "/result.json");
  CHECK(r1.contains("exponent_gap"));
  for (const char* name : {"metropolis", "reflected"}) {
    CHECK(r1.at(name).contains("exponent"));
    const auto& rows1 = r1.at(name).at("rows");
    const auto& rows2 = r2.at(name).at("rows");
    REQUIRE(rows1.size() == 3);
    // Step counts are seeded and reproducible; wall times are not.
    for (size_t i = 0; i < rows1.size(); ++i) {
      CHECK(rows1[i].at("steps").get<long>() == rows2[i].at("steps").get<long>());
      CHECK(rows1[i].at("steps").get<long>() > 0);
      CHECK(rows1[i].at("wall_seconds").get<double>() > 0.0);
    }
  }

  // Fewer than three dims cannot support a power-law fit.
  save_json_file(tmp.file("one_dim.json"), json{{"dims", {2}}, {"n_chains", 128}});
  CHECK(run_cli("scaling --config " + tmp.file("one_dim.json") + " --out " + tmp.file("c")) == 2);
  save_json_file(tmp.file("bad_dim.json"), json{{"dims", {0, 1, 2}}});
  CHECK(run_cli("scaling --config " + tmp.file("bad_dim.json") + " --out " + tmp.file("d")) == 2);
}

TEST_CASE("cli mmd compares sample files") {
  TempDir tmp;
  RngStream rng(31, "clouds", 0);
  Matrix a(1, 200), b(1, 200);
  for (Index j = 0; j < 200; ++j) {
    a(0, j) = rng.normal();
    b(0, j) = 3.0 + rng.normal();
  }
  write_samples_csv(tmp.file("a.csv"), 0.0, a);
  write_samples_csv(tmp.file("a_copy.csv"), 0.0, a);
  write_samples_csv(tmp.file("b.csv"), 0.0, b);

  // A set against itself scores zero and passes any positive threshold.
  json self_cfg = {{"a", tmp.file("a.csv")},      {"b", tmp.file("a_copy.csv")},
                   {"lengthscales", {1.0}},       {"resamples", 8},
                   {"subsample_cap", 64},         {"seed", 2},
                   {"threshold", 0.05}};
  save_json_file(tmp.file("self.json"), self_cfg);
  CHECK(run_cli("mmd --config " + tmp.file("self.json") + " --out " + tmp.file("self")) == 0);
  const json self_res = load_json_file(tmp.file("self") + "/mmd.json");
  CHECK(self_res.at("mmd").get<double>() == 0.0);
  CHECK(self_res.at("pass").get<bool>());
  CHECK(self_res.at("resamples").get<int>() == 8);

  // Separated clouds trip the same threshold, exit code 4.
  json far_cfg = self_cfg;
  far_cfg["b"] = tmp.file("b.csv");
  save_json_file(tmp.file("far.json"), far_cfg);
  CHECK(run_cli("mmd --config " + tmp.file("far.json") + " --out " + tmp.file("far")) == 4);
  const json far_res = load_json_file(tmp.file("far") + "/mmd.json");
  CHECK(far_res.at("mmd").get<double>() > 0.5);
  CHECK_FALSE(far_res.at("pass").get<bool>());
  CHECK(far_res.at("ci_lo").get<double>() <= far_res.at("ci_hi").get<double>());

  // Missing kernel scales and mismatched weights are config errors.
  json no_scales = {{"a", tmp.file("a.csv")}, {"b", tmp.file("b.csv")}};
  save_json_file(tmp.file("noscale.json"), no_scales);
  CHECK(run_cli("mmd --config " + tmp.file("noscale.json") + " --out " + tmp.file("x")) == 2);
  json bad_weights = far_cfg;
  bad_weights["weights"] = {1.0, 2.0};
  save_json_file(tmp.file("badw.json"), bad_weights);
  CHECK(run_cli("mmd --config " + tmp.file("badw.json") + " --out " + tmp.file("y")) == 2);
}

TEST_CASE("cli polycheck matches in-process membership") {
  TempDir tmp;
  write_file(tmp.file("poly.csv"), polar_square_polygon());
  // Mix of clear members, clear outsiders, and one exact vertex.
  const std::string pts =
      "0,90\n45,60\n-120,75\n45,44\n10,-50\n179,30\n0,45\n";
  write_file(tmp.file("pts.csv"), pts);

  json cfg = {{"polygon", tmp.file("poly.csv")}, {"points", tmp.file("pts.csv")}};
  save_json_file(tmp.file("cfg.json"), cfg);
  const std::string out1 = tmp.file("r1");
  const std::string out2 = tmp.file("r2");
  CHECK(run_cli("polycheck --config " + tmp.file("cfg.json") + " --out " + out1) == 0);
  CHECK(run_cli("polycheck --config " + tmp.file("cfg.json") + " --out " + out2) == 0);
  CHECK(slurp(out1 + "/membership.csv") == slurp(out2 + "/membership.csv"));

  const std::string csv = slurp(out1 + "/membership.csv");
  CHECK(first_line(csv) == "index,lon_deg,lat_deg,inside");

  // Reproduce the verdicts with direct polygon queries.
  const SphericalPolygon poly = load_spherical_polygon(tmp.file("poly.csv"));
  const Matrix q = read_lon_lat_csv(tmp.file("pts.csv"));
  std::vector<std::string> expected;
  long inside = 0, outside = 0, ambiguous = 0;
  for (Index j = 0; j < q.cols(); ++j) {
    try {
      const bool in = poly.contains(q.col(j));
      expected.push_back(in ? "1" : "0");
      (in ? inside : outside) += 1;
    } catch (const BoundaryAmbiguous&) {
      expected.push_back("ambiguous");
      ++ambiguous;
    }
  }
  std::istringstream lines(csv);
  std::string line;
  std::getline(lines, line);
  size_t row = 0;
  while (std::getline(lines, line)) {
    if (line.empty()) continue;
    REQUIRE(row < expected.size());
    CHECK(line.substr(line.rfind(',') + 1) == expected[row]);
    ++row;
  }
  CHECK(row == expected.size());

  const json result = load_json_file(out1 + "/result.json");
  CHECK(result.at("total").get<long>() == 7);
  CHECK(result.at("inside").get<long>() == inside);
  CHECK(result.at("outside").get<long>() == outside);
  CHECK(result.at("ambiguous").get<long>() == ambiguous);
  CHECK(inside >= 3);
  CHECK(outside >= 2);

  // Ring surrogate knobs are accepted; junk keys are not.
  json ring_cfg = cfg;
  ring_cfg["ring"] = {{"rings", 3}, {"step", 0.02}};
  save_json_file(tmp.file("ring.json"), ring_cfg);
  CHECK(run_cli("polycheck --config " + tmp.file("ring.json") + " --out " + tmp.file("r3")) == 0);
  json bad_cfg = cfg;
  bad_cfg["ring"] = {{"loops", 3}};
  save_json_file(tmp.file("badring.json"), bad_cfg);
  CHECK(run_cli("polycheck --config " + tmp.file("badring.json") + " --out " + tmp.file("r4")) ==
        2);
}

TEST_CASE("cli train and sample round-trip a tiny model") {
  TempDir tmp;
  json cfg = {{"dataset", {{"kind", "bimodal"}, {"shape", "cube"}, {"d", 1}, {"n", 400}, {"seed", 2}}},
              {"grid", {{"beta0", 1e-3}, {"beta1", 5.0}, {"steps", 12}}},
              {"train",
               {{"lr", 1e-3},
                {"batch_size", 16},
                {"repeats", 4},
                {"total_steps", 8},
                {"width", 8},
                {"layers", 2},
                {"divergence", "exact"},
                {"seed", 7}}},
              {"save_dataset", "data"}};
  save_json_file(tmp.file("train.json"), cfg);
  const std::string out = tmp.file("model");
  CHECK(run_cli("train --config " + tmp.file("train.json") + " --out " + out) == 0);
  CHECK(std::filesystem::exists(out + "/model.ckpt"));
  CHECK(std::filesystem::exists(out + "/loss.csv"));
  CHECK(std::filesystem::exists(out + "/data.csv"));
  CHECK(std::filesystem::exists(out + "/data.json"));

  const json tres = load_json_file(out + "/result.json");
  CHECK(tres.at("beta1").get<double>() == 5.0);
  CHECK(tres.at("n_train").get<long>() == 360);
  CHECK(tres.at("n_test").get<long>() == 40);
  CHECK(std::isfinite(tres.at("final_loss").get<double>()));

  std::istringstream loss(slurp(out + "/loss.csv"));
  std::string line;
  long rows = -1;
  while (std::getline(loss, line)) {
    if (!line.empty()) ++rows;
  }
  CHECK(rows == 8);

  // The checkpoint carries everything sample needs.
  json scfg = {{"checkpoint", out + "/model.ckpt"}, {"n_samples", 64}, {"seed", 3}};
  save_json_file(tmp.file("sample.json"), scfg);
  const std::string s1 = tmp.file("s1");
  const std::string s2 = tmp.file("s2");
  CHECK(run_cli("sample --config " + tmp.file("sample.json") + " --out " + s1) == 0);
  CHECK(run_cli("sample --config " + tmp.file("sample.json") + " --out " + s2) == 0);
  CHECK(slurp(s1 + "/samples.csv") == slurp(s2 + "/samples.csv"));

  const auto [times, samples] = read_samples_csv(s1 + "/samples.csv");
  REQUIRE(samples.rows() == 1);
  REQUIRE(samples.cols() == 64);
  for (Index j = 0; j < samples.cols(); ++j) {
    CHECK(samples(0, j) > -1.0);
    CHECK(samples(0, j) < 1.0);
  }

  // Config slip-ups exit 2: missing checkpoint file, unknown train key.
  json missing = scfg;
  missing["checkpoint"] = tmp.file("ghost.ckpt");
  save_json_file(tmp.file("missing.json"), missing);
  CHECK(run_cli("sample --config " + tmp.file("missing.json") + " --out " + tmp.file("sx")) == 2);
  json bad_train = cfg;
  bad_train["train"]["momentum"] = 0.9;
  save_json_file(tmp.file("badtrain.json"), bad_train);
  CHECK(run_cli("train --config " + tmp.file("badtrain.json") + " --out " + tmp.file("tx")) == 2);
}

TEST_CASE("cli train can tune the schedule endpoint") {
  TempDir tmp;
  json cfg = {{"dataset", {{"kind", "bimodal"}, {"shape", "cube"}, {"d", 1}, {"n", 300}, {"seed", 5}}},
              {"grid",
               {{"beta0", 1e-3},
                {"beta1", "auto"},
                {"steps", 15},
                {"tune",
                 {{"criterion_tv", 0.2},
                  {"n_eval", 5000},
                  {"bins", 8},
                  {"n_reference", 5000},
                  {"bisect_rounds", 4},
                  {"seed", 1}}}}},
              {"train",
               {{"lr", 1e-3}, {"batch_size", 8}, {"repeats", 4}, {"total_steps", 2},
                {"width", 4}, {"layers", 2}, {"divergence", "exact"}, {"seed", 3}}}};
  save_json_file(tmp.file("auto.json"), cfg);
  const std::string out = tmp.file("tuned");
  CHECK(run_cli("train --config " + tmp.file("auto.json") + " --out " + out) == 0);
  const json result = load_json_file(out + "/result.json");
  const double beta1 = result.at("tune").at("beta1").get<double>();
  CHECK(beta1 > 0.0);
  CHECK(result.at("beta1").get<double>() == beta1);
  CHECK(result.at("tune").at("tv").get<double>() <= 0.2);

  // The tuned endpoint is embedded in the checkpoint grid metadata.
  const Checkpoint ck = load_checkpoint(out + "/model.ckpt");
  CHECK(ck.header.at("grid").at("beta1").get<double>() == beta1);

  json bad = cfg;
  bad["grid"]["beta1"] = "fast";
  save_json_file(tmp.file("bad.json"), bad);
  CHECK(run_cli("train --config " + tmp.file("bad.json") + " --out " + tmp.file("bx")) == 2);
}

}  // TEST_SUITE
