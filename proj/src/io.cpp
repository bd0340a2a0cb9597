#include "mrbm/io.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <numbers>
#include <optional>
#include <sstream>
#include <utility>

namespace mrbm {

namespace {

std::ofstream open_output(const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot open for writing: " + path);
  return out;
}

std::ifstream open_input(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open for reading: " + path);
  return in;
}

void strip_cr(std::string& line) {
  if (!line.empty() && line.back() == '\r') line.pop_back();
}

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> fields;
  std::string::size_type start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    if (comma == std::string::npos) {
      fields.push_back(line.substr(start));
      return fields;
    }
    fields.push_back(line.substr(start, comma - start));
    start = comma + 1;
  }
}

double parse_double_field(const std::string& field, const std::string& path, long line_no) {
  const char* begin = field.c_str();
  char* end = nullptr;
  const double v = std::strtod(begin, &end);
  if (end == begin) {
    throw ConfigError(path + ":" + std::to_string(line_no) + ": expected a number, got '" + field + "'");
  }
  while (*end == ' ' || *end == '\t') ++end;
  if (*end != '\0') {
    throw ConfigError(path + ":" + std::to_string(line_no) + ": trailing characters in '" + field + "'");
  }
  return v;
}

std::string trimmed(const std::string& s) {
  auto b = s.find_first_not_of(" \t");
  if (b == std::string::npos) return "";
  auto e = s.find_last_not_of(" \t");
  return s.substr(b, e - b + 1);
}

Vector lon_lat_to_unit(double lon_deg, double lat_deg) {
  const double lon = lon_deg * std::numbers::pi / 180.0;
  const double lat = lat_deg * std::numbers::pi / 180.0;
  Vector u(3);
  u << std::cos(lat) * std::cos(lon), std::cos(lat) * std::sin(lon), std::sin(lat);
  return u;
}

struct LonLatFile {
  Matrix points;  // 3 x n unit vectors
  std::optional<Vector> reference;
};

/// Shared parser for the lon/lat CSV format: optional `# reference: lon,lat`
/// comment, optional `lon_deg,lat_deg` header, then one `lon,lat` row per
/// point.  Degrees; |lat| <= 90 and |lon| <= 360 enforced per row.
LonLatFile parse_lon_lat_file(const std::string& path) {
  auto in = open_input(path);
  LonLatFile out;
  std::vector<Vector> pts;
  std::string line;
  long line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    strip_cr(line);
    const std::string t = trimmed(line);
    if (t.empty()) continue;
    if (t[0] == '#') {
      std::string body = trimmed(t.substr(1));
      constexpr const char* kTag = "reference:";
      if (body.rfind(kTag, 0) == 0) {
        const auto fields = split_fields(body.substr(std::strlen(kTag)));
        if (fields.size() != 2) {
          throw ConfigError(path + ":" + std::to_string(line_no) + ": reference needs 'lon,lat'");
        }
        const double lon = parse_double_field(trimmed(fields[0]), path, line_no);
        const double lat = parse_double_field(trimmed(fields[1]), path, line_no);
        out.reference = lon_lat_to_unit(lon, lat);
      }
      continue;
    }
    if (t == "lon_deg,lat_deg") continue;  // header row
    const auto fields = split_fields(t);
    if (fields.size() != 2) {
      throw ConfigError(path + ":" + std::to_string(line_no) + ": expected 'lon,lat', got " +
                        std::to_string(fields.size()) + " fields");
    }
    const double lon = parse_double_field(trimmed(fields[0]), path, line_no);
    const double lat = parse_double_field(trimmed(fields[1]), path, line_no);
    if (std::abs(lat) > 90.0 || std::abs(lon) > 360.0) {
      throw ConfigError(path + ":" + std::to_string(line_no) + ": lon/lat out of range");
    }
    pts.push_back(lon_lat_to_unit(lon, lat));
  }
  out.points.resize(3, static_cast<Index>(pts.size()));
  for (Index j = 0; j < out.points.cols(); ++j) out.points.col(j) = pts[static_cast<size_t>(j)];
  return out;
}

nlohmann::json vector_to_json(const Vector& v) {
  nlohmann::json arr = nlohmann::json::array();
  for (Index i = 0; i < v.size(); ++i) arr.push_back(v[i]);
  return arr;
}

Vector vector_from_json(const nlohmann::json& arr, const std::string& context) {
  if (!arr.is_array()) throw ConfigError(context + ": expected an array");
  Vector v(static_cast<Index>(arr.size()));
  for (Index i = 0; i < v.size(); ++i) v[i] = arr[static_cast<size_t>(i)].get<double>();
  return v;
}

nlohmann::json matrix_rows_to_json(const Matrix& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (Index i = 0; i < m.rows(); ++i) rows.push_back(vector_to_json(m.row(i).transpose()));
  return rows;
}

Matrix matrix_rows_from_json(const nlohmann::json& rows, const std::string& context) {
  if (!rows.is_array() || rows.empty()) throw ConfigError(context + ": expected a non-empty array of rows");
  const Index nr = static_cast<Index>(rows.size());
  Vector first = vector_from_json(rows[0], context);
  Matrix m(nr, first.size());
  m.row(0) = first.transpose();
  for (Index i = 1; i < nr; ++i) {
    Vector r = vector_from_json(rows[static_cast<size_t>(i)], context);
    if (r.size() != m.cols()) throw ConfigError(context + ": ragged rows");
    m.row(i) = r.transpose();
  }
  return m;
}

constexpr std::uint64_t bswap64(std::uint64_t v) {
  return ((v & 0x00000000000000ffULL) << 56) | ((v & 0x000000000000ff00ULL) << 40) |
         ((v & 0x0000000000ff0000ULL) << 24) | ((v & 0x00000000ff000000ULL) << 8) |
         ((v & 0x000000ff00000000ULL) >> 8) | ((v & 0x0000ff0000000000ULL) >> 24) |
         ((v & 0x00ff000000000000ULL) >> 40) | ((v & 0xff00000000000000ULL) >> 56);
}

/// Payload doubles are little-endian on disk regardless of host order.
void write_doubles_le(std::ostream& out, const double* data, Index n) {
  if constexpr (std::endian::native == std::endian::little) {
    out.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(n) * 8);
  } else {
    for (Index i = 0; i < n; ++i) {
      const std::uint64_t swapped = bswap64(std::bit_cast<std::uint64_t>(data[i]));
      out.write(reinterpret_cast<const char*>(&swapped), 8);
    }
  }
}

void read_doubles_le(std::istream& in, double* data, Index n) {
  in.read(reinterpret_cast<char*>(data), static_cast<std::streamsize>(n) * 8);
  if (in.gcount() != static_cast<std::streamsize>(n) * 8) {
    throw ConfigError("checkpoint payload truncated");
  }
  if constexpr (std::endian::native != std::endian::little) {
    for (Index i = 0; i < n; ++i) {
      data[i] = std::bit_cast<double>(bswap64(std::bit_cast<std::uint64_t>(data[i])));
    }
  }
}

}  // namespace

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void write_trajectories_csv(const std::string& path, const std::vector<Trajectory>& trajectories) {
  if (trajectories.empty()) throw ContractViolation("write_trajectories_csv: no trajectories");
  auto out = open_output(path);
  const Index coords = trajectories.front().states.rows();
  out << "chain_id,k,t,accept";
  for (Index r = 0; r < coords; ++r) out << ",coord_" << r;
  out << "\n";
  for (const Trajectory& tr : trajectories) {
    if (tr.states.rows() != coords) throw ContractViolation("write_trajectories_csv: mixed dimensions");
    for (Index k = 0; k < tr.states.cols(); ++k) {
      const int accept = k == 0 ? 1 : static_cast<int>(tr.accepted[static_cast<size_t>(k - 1)]);
      out << tr.chain_index << ',' << k << ',' << format_double(tr.times[k]) << ',' << accept;
      for (Index r = 0; r < coords; ++r) out << ',' << format_double(tr.states(r, k));
      out << "\n";
    }
  }
  if (!out) throw ConfigError("write failed: " + path);
}

void write_samples_csv(const std::string& path, const Vector& times, const Matrix& points) {
  if (times.size() != points.cols()) {
    throw ContractViolation("write_samples_csv: times length must match sample count");
  }
  auto out = open_output(path);
  out << "t";
  for (Index r = 0; r < points.rows(); ++r) out << ",coord_" << r;
  out << "\n";
  for (Index j = 0; j < points.cols(); ++j) {
    out << format_double(times[j]);
    for (Index r = 0; r < points.rows(); ++r) out << ',' << format_double(points(r, j));
    out << "\n";
  }
  if (!out) throw ConfigError("write failed: " + path);
}

void write_samples_csv(const std::string& path, double t, const Matrix& points) {
  write_samples_csv(path, Vector::Constant(points.cols(), t), points);
}

std::pair<Vector, Matrix> read_samples_csv(const std::string& path) {
  auto in = open_input(path);
  std::string line;
  if (!std::getline(in, line)) throw ConfigError(path + ": empty file");
  strip_cr(line);
  const auto header = split_fields(line);
  if (header.empty() || header[0] != "t") {
    throw ConfigError(path + ":1: expected header starting with 't'");
  }
  const Index coords = static_cast<Index>(header.size()) - 1;
  if (coords < 1) throw ConfigError(path + ":1: header has no coordinate columns");
  std::vector<double> times;
  std::vector<double> values;
  long line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    strip_cr(line);
    if (trimmed(line).empty()) continue;
    const auto fields = split_fields(line);
    if (static_cast<Index>(fields.size()) != coords + 1) {
      throw ConfigError(path + ":" + std::to_string(line_no) + ": wrong field count");
    }
    times.push_back(parse_double_field(fields[0], path, line_no));
    for (Index r = 0; r < coords; ++r) {
      values.push_back(parse_double_field(fields[static_cast<size_t>(r) + 1], path, line_no));
    }
  }
  const Index n = static_cast<Index>(times.size());
  Vector t(n);
  Matrix pts(coords, n);
  for (Index j = 0; j < n; ++j) {
    t[j] = times[static_cast<size_t>(j)];
    for (Index r = 0; r < coords; ++r) pts(r, j) = values[static_cast<size_t>(j * coords + r)];
  }
  return {std::move(t), std::move(pts)};
}

void write_scaling_csv(const std::string& path, const std::vector<ScalingRow>& rows) {
  auto out = open_output(path);
  out << "d,steps,wall_seconds\n";
  for (const ScalingRow& r : rows) {
    out << r.d << ',' << r.steps << ',' << format_double(r.wall_seconds) << "\n";
  }
  if (!out) throw ConfigError("write failed: " + path);
}

nlohmann::json manifold_to_json(const Manifold& m) {
  switch (m.kind()) {
    case Manifold::Kind::kEuclidean:
      return {{"type", "euclidean"}, {"dim", m.dim()}};
    case Manifold::Kind::kSphere:
      return {{"type", "sphere"}, {"ambient_dim", m.storage_size()}};
    case Manifold::Kind::kTorus:
      return {{"type", "torus"}, {"dim", m.dim()}};
    case Manifold::Kind::kLogCholeskySpd:
      return {{"type", "log_cholesky_spd"}, {"order", m.spd_order()}};
    case Manifold::Kind::kProduct: {
      nlohmann::json factors = nlohmann::json::array();
      for (const Manifold& f : m.factors()) factors.push_back(manifold_to_json(f));
      return {{"type", "product"}, {"factors", std::move(factors)}};
    }
  }
  throw ContractViolation("manifold_to_json: unknown kind");
}

Manifold manifold_from_json(const nlohmann::json& j) {
  if (!j.is_object() || !j.contains("type")) throw ConfigError("manifold: expected object with 'type'");
  const std::string type = j.at("type").get<std::string>();
  if (type == "euclidean") {
    check_keys(j, "manifold(euclidean)", {"type", "dim"}, {});
    return Manifold::euclidean(j.at("dim").get<int>());
  }
  if (type == "sphere") {
    check_keys(j, "manifold(sphere)", {"type", "ambient_dim"}, {});
    return Manifold::sphere(j.at("ambient_dim").get<int>());
  }
  if (type == "torus") {
    check_keys(j, "manifold(torus)", {"type", "dim"}, {});
    return Manifold::torus(j.at("dim").get<int>());
  }
  if (type == "log_cholesky_spd") {
    check_keys(j, "manifold(log_cholesky_spd)", {"type", "order"}, {});
    return Manifold::log_cholesky_spd(j.at("order").get<int>());
  }
  if (type == "product") {
    check_keys(j, "manifold(product)", {"type", "factors"}, {});
    std::vector<Manifold> factors;
    for (const auto& f : j.at("factors")) factors.push_back(manifold_from_json(f));
    return Manifold::product(std::move(factors));
  }
  throw ConfigError("manifold: unknown type '" + type + "'");
}

nlohmann::json constraint_to_json(const ConstraintSet& c) {
  switch (c.kind()) {
    case ConstraintSet::Kind::kHalfspaces:
      return {{"type", "halfspaces"},
              {"a", matrix_rows_to_json(c.halfspace_a())},
              {"b", vector_to_json(c.halfspace_b())}};
    case ConstraintSet::Kind::kHypercube:
      return {{"type", "hypercube"}, {"lo", vector_to_json(c.cube_lo())}, {"hi", vector_to_json(c.cube_hi())}};
    case ConstraintSet::Kind::kSimplex:
      return {{"type", "simplex"}, {"dim", c.dim()}};
    case ConstraintSet::Kind::kTraceBound:
      return {{"type", "trace_bound"}, {"order", c.spd_order()}, {"cap", c.trace_cap()}};
    case ConstraintSet::Kind::kSphericalPolygon: {
      const SphericalPolygon& p = c.polygon();
      nlohmann::json verts = nlohmann::json::array();
      for (Index j = 0; j < p.vertices().cols(); ++j) verts.push_back(vector_to_json(p.vertices().col(j)));
      const RingSurrogateConfig& ring = p.ring_config();
      return {{"type", "spherical_polygon"},
              {"vertices", std::move(verts)},
              {"reference", vector_to_json(p.reference())},
              {"ring", {{"step", ring.step}, {"rings", ring.rings}, {"samples_per_ring", ring.samples_per_ring}}}};
    }
    case ConstraintSet::Kind::kAll:
      return {{"type", "all"}, {"dim", c.dim()}};
    case ConstraintSet::Kind::kProduct: {
      nlohmann::json parts = nlohmann::json::array();
      for (const ConstraintSet& p : c.parts()) parts.push_back(constraint_to_json(p));
      return {{"type", "product"}, {"parts", std::move(parts)}};
    }
  }
  throw ContractViolation("constraint_to_json: unknown kind");
}

ConstraintSet constraint_from_json(const nlohmann::json& j) {
  if (!j.is_object() || !j.contains("type")) throw ConfigError("constraint: expected object with 'type'");
  const std::string type = j.at("type").get<std::string>();
  if (type == "halfspaces") {
    check_keys(j, "constraint(halfspaces)", {"type", "a", "b"}, {});
    return ConstraintSet::halfspaces(matrix_rows_from_json(j.at("a"), "constraint(halfspaces).a"),
                                     vector_from_json(j.at("b"), "constraint(halfspaces).b"));
  }
  if (type == "hypercube") {
    check_keys(j, "constraint(hypercube)", {"type", "lo", "hi"}, {});
    return ConstraintSet::hypercube(vector_from_json(j.at("lo"), "constraint(hypercube).lo"),
                                    vector_from_json(j.at("hi"), "constraint(hypercube).hi"));
  }
  if (type == "simplex") {
    check_keys(j, "constraint(simplex)", {"type", "dim"}, {});
    return ConstraintSet::simplex(j.at("dim").get<int>());
  }
  if (type == "trace_bound") {
    check_keys(j, "constraint(trace_bound)", {"type", "order", "cap"}, {});
    return ConstraintSet::trace_bound(j.at("order").get<int>(), j.at("cap").get<double>());
  }
  if (type == "spherical_polygon") {
    check_keys(j, "constraint(spherical_polygon)", {"type", "vertices", "reference"}, {"ring"});
    const auto& vj = j.at("vertices");
    if (!vj.is_array() || vj.size() < 3) throw ConfigError("constraint(spherical_polygon): need >= 3 vertices");
    Matrix verts(3, static_cast<Index>(vj.size()));
    for (Index k = 0; k < verts.cols(); ++k) {
      Vector v = vector_from_json(vj[static_cast<size_t>(k)], "constraint(spherical_polygon).vertices");
      if (v.size() != 3) throw ConfigError("constraint(spherical_polygon): vertices must be 3-vectors");
      verts.col(k) = v;
    }
    RingSurrogateConfig ring;
    if (j.contains("ring")) {
      const auto& rj = j.at("ring");
      check_keys(rj, "constraint(spherical_polygon).ring", {}, {"step", "rings", "samples_per_ring"});
      if (rj.contains("step")) ring.step = rj.at("step").get<double>();
      if (rj.contains("rings")) ring.rings = rj.at("rings").get<int>();
      if (rj.contains("samples_per_ring")) ring.samples_per_ring = rj.at("samples_per_ring").get<int>();
    }
    return ConstraintSet::spherical_polygon(SphericalPolygon(
        std::move(verts), vector_from_json(j.at("reference"), "constraint(spherical_polygon).reference"), ring));
  }
  if (type == "all") {
    check_keys(j, "constraint(all)", {"type", "dim"}, {});
    return ConstraintSet::all(j.at("dim").get<int>());
  }
  if (type == "product") {
    check_keys(j, "constraint(product)", {"type", "parts"}, {});
    std::vector<ConstraintSet> parts;
    for (const auto& p : j.at("parts")) parts.push_back(constraint_from_json(p));
    return ConstraintSet::product(std::move(parts));
  }
  throw ConfigError("constraint: unknown type '" + type + "'");
}

SphericalPolygon load_spherical_polygon(const std::string& path, RingSurrogateConfig ring) {
  const LonLatFile file = parse_lon_lat_file(path);
  if (!file.reference.has_value()) {
    throw ConfigError(path + ": missing '# reference: lon,lat' line");
  }
  if (file.points.cols() < 3) throw ConfigError(path + ": a polygon needs at least 3 vertices");
  return SphericalPolygon(file.points, *file.reference, ring);
}

Matrix read_lon_lat_csv(const std::string& path) {
  return parse_lon_lat_file(path).points;
}

ConstraintSet load_halfspaces_csv(const std::string& path) {
  auto in = open_input(path);
  std::vector<std::vector<double>> rows;
  std::string line;
  long line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    strip_cr(line);
    const std::string t = trimmed(line);
    if (t.empty() || t[0] == '#') continue;
    const auto fields = split_fields(t);
    if (fields.size() < 2) {
      throw ConfigError(path + ":" + std::to_string(line_no) + ": a halfspace row needs a_1..a_d,b");
    }
    std::vector<double> row;
    row.reserve(fields.size());
    for (const auto& f : fields) row.push_back(parse_double_field(trimmed(f), path, line_no));
    if (!rows.empty() && row.size() != rows.front().size()) {
      throw ConfigError(path + ":" + std::to_string(line_no) + ": inconsistent field count");
    }
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw ConfigError(path + ": no halfspace rows");
  const Index faces = static_cast<Index>(rows.size());
  const Index d = static_cast<Index>(rows.front().size()) - 1;
  Matrix a(faces, d);
  Vector b(faces);
  for (Index i = 0; i < faces; ++i) {
    for (Index k = 0; k < d; ++k) a(i, k) = rows[static_cast<size_t>(i)][static_cast<size_t>(k)];
    b[i] = rows[static_cast<size_t>(i)][static_cast<size_t>(d)];
  }
  return ConstraintSet::halfspaces(std::move(a), std::move(b));
}

void save_dataset(const Dataset& ds, const std::string& base_path) {
  {
    auto out = open_output(base_path + ".csv");
    for (Index r = 0; r < ds.points.rows(); ++r) out << (r == 0 ? "" : ",") << "coord_" << r;
    out << "\n";
    for (Index j = 0; j < ds.points.cols(); ++j) {
      for (Index r = 0; r < ds.points.rows(); ++r) {
        out << (r == 0 ? "" : ",") << format_double(ds.points(r, j));
      }
      out << "\n";
    }
    if (!out) throw ConfigError("write failed: " + base_path + ".csv");
  }
  nlohmann::json manifest = {{"format", "mrbm-dataset"},
                             {"version", 1},
                             {"manifold", manifold_to_json(ds.manifold)},
                             {"constraint", constraint_to_json(ds.constraint)},
                             {"generator", ds.meta},
                             {"split_seed", ds.split_seed},
                             {"n", ds.points.cols()}};
  save_json_file(base_path + ".json", manifest);
}

Dataset load_dataset(const std::string& base_path) {
  const nlohmann::json manifest = load_json_file(base_path + ".json");
  check_keys(manifest, "dataset manifest", {"format", "version", "manifold", "constraint", "generator", "split_seed", "n"},
             {});
  if (manifest.at("format").get<std::string>() != "mrbm-dataset") {
    throw ConfigError(base_path + ".json: not a dataset manifest");
  }
  Manifold m = manifold_from_json(manifest.at("manifold"));
  ConstraintSet c = constraint_from_json(manifest.at("constraint"));

  const std::string csv = base_path + ".csv";
  auto in = open_input(csv);
  std::string line;
  if (!std::getline(in, line)) throw ConfigError(csv + ": empty file");
  strip_cr(line);
  const Index storage = static_cast<Index>(split_fields(line).size());
  if (storage != m.storage_size()) {
    throw ConfigError(csv + ": column count does not match the manifold");
  }
  std::vector<double> values;
  long line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    strip_cr(line);
    if (trimmed(line).empty()) continue;
    const auto fields = split_fields(line);
    if (static_cast<Index>(fields.size()) != storage) {
      throw ConfigError(csv + ":" + std::to_string(line_no) + ": wrong field count");
    }
    for (const auto& f : fields) values.push_back(parse_double_field(f, csv, line_no));
  }
  const Index n = static_cast<Index>(values.size()) / storage;
  if (n != manifest.at("n").get<Index>()) {
    throw ConfigError(csv + ": row count does not match the manifest");
  }
  Matrix pts(storage, n);
  for (Index j = 0; j < n; ++j) {
    for (Index r = 0; r < storage; ++r) pts(r, j) = values[static_cast<size_t>(j * storage + r)];
  }
  const auto split_seed = manifest.at("split_seed").get<std::uint64_t>();
  std::vector<Index> train, test;
  make_split(n, split_seed, train, test);
  return Dataset{std::move(m),  std::move(c),    std::move(pts), manifest.at("generator"),
                 std::move(train), std::move(test), split_seed};
}

void save_checkpoint(const std::string& path, const MlpParams& params, const nlohmann::json& extra) {
  params.validate();
  nlohmann::json header = extra.is_object() ? extra : nlohmann::json::object();
  nlohmann::json layers = nlohmann::json::array();
  for (const Matrix& w : params.w) layers.push_back({w.rows(), w.cols()});
  header["format"] = "mrbm-checkpoint";
  header["version"] = 1;
  header["layers"] = std::move(layers);
  header["count"] = params.parameter_count();
  auto out = open_output(path);
  out << header.dump() << "\n";
  const Vector flat = mlp_flatten(params);
  write_doubles_le(out, flat.data(), flat.size());
  if (!out) throw ConfigError("write failed: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  auto in = open_input(path);
  std::string line;
  if (!std::getline(in, line)) throw ConfigError(path + ": missing checkpoint header");
  strip_cr(line);
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(line);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(path + ": bad checkpoint header: " + e.what());
  }
  if (!header.is_object() || header.value("format", "") != "mrbm-checkpoint") {
    throw ConfigError(path + ": not a checkpoint file");
  }
  if (header.value("version", 0) != 1) throw ConfigError(path + ": unsupported checkpoint version");
  Checkpoint ck;
  ck.header = header;
  long expected = 0;
  for (const auto& shape : header.at("layers")) {
    const Index rows = shape.at(0).get<Index>();
    const Index cols = shape.at(1).get<Index>();
    if (rows < 1 || cols < 1) throw ConfigError(path + ": bad layer shape");
    ck.params.w.emplace_back(rows, cols);
    ck.params.b.emplace_back(rows);
    expected += rows * cols + rows;
  }
  if (expected != header.at("count").get<long>()) {
    throw ConfigError(path + ": parameter count does not match the layer shapes");
  }
  Vector flat(expected);
  read_doubles_le(in, flat.data(), flat.size());
  mlp_assign(ck.params, flat);
  ck.params.validate();
  return ck;
}

void write_loss_csv(const std::string& path, const Vector& losses, const Vector& lrs) {
  if (losses.size() != lrs.size()) throw ContractViolation("write_loss_csv: losses and lrs must align");
  auto out = open_output(path);
  out << "step,loss,lr\n";
  for (Index i = 0; i < losses.size(); ++i) {
    out << i << ',' << format_double(losses[i]) << ',' << format_double(lrs[i]) << "\n";
  }
  if (!out) throw ConfigError("write failed: " + path);
}

nlohmann::json load_json_file(const std::string& path) {
  auto in = open_input(path);
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

void save_json_file(const std::string& path, const nlohmann::json& j) {
  auto out = open_output(path);
  out << j.dump(2) << "\n";
  if (!out) throw ConfigError("write failed: " + path);
}

void check_keys(const nlohmann::json& obj, const std::string& context,
                const std::vector<std::string>& required, const std::vector<std::string>& optional) {
  if (!obj.is_object()) throw ConfigError(context + ": expected a JSON object");
  for (const auto& item : obj.items()) {
    const std::string& key = item.key();
    const bool known = std::find(required.begin(), required.end(), key) != required.end() ||
                       std::find(optional.begin(), optional.end(), key) != optional.end();
    if (!known) throw ConfigError(context + ": unknown key '" + key + "'");
  }
  for (const std::string& key : required) {
    if (!obj.contains(key)) throw ConfigError(context + ": missing key '" + key + "'");
  }
}

}  // namespace mrbm
