#pragma once

#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "mrbm/constraints.hpp"
#include "mrbm/datasets.hpp"
#include "mrbm/geometry.hpp"
#include "mrbm/samplers.hpp"
#include "mrbm/scorenet.hpp"
#include "mrbm/types.hpp"

namespace mrbm {

/// Doubles in CSV output are printed with %.17g so rereads are bit-exact and
/// reruns with the same seed produce byte-identical files.
std::string format_double(double v);

/// Rows `chain_id,k,t,accept,coord_0,...`; one block per trajectory in order.
void write_trajectories_csv(const std::string& path, const std::vector<Trajectory>& trajectories);

/// Rows `t,coord_0,...`, one per column of points.
void write_samples_csv(const std::string& path, const Vector& times, const Matrix& points);
void write_samples_csv(const std::string& path, double t, const Matrix& points);

/// Reads the samples format back: (times, points).
std::pair<Vector, Matrix> read_samples_csv(const std::string& path);

struct ScalingRow {
  int d = 0;
  long steps = 0;
  double wall_seconds = 0.0;
};

/// Rows `d,steps,wall_seconds`.
void write_scaling_csv(const std::string& path, const std::vector<ScalingRow>& rows);

nlohmann::json manifold_to_json(const Manifold& m);
Manifold manifold_from_json(const nlohmann::json& j);
nlohmann::json constraint_to_json(const ConstraintSet& c);
ConstraintSet constraint_from_json(const nlohmann::json& j);

/// Polygon file: `lon_deg,lat_deg` header, one vertex per row in order, and
/// one `# reference: lon,lat` comment giving an interior point.
SphericalPolygon load_spherical_polygon(const std::string& path, RingSurrogateConfig ring = {});

/// Reads `lon_deg,lat_deg` rows into unit 3-vectors (comments ignored).
/// Malformed rows raise ConfigError naming the line.
Matrix read_lon_lat_csv(const std::string& path);

/// Halfspace file: rows `a_1,...,a_d,b` meaning <a, x> - b < 0.
ConstraintSet load_halfspaces_csv(const std::string& path);

/// Writes base.csv (points) and base.json (manifest with manifold,
/// constraint, generator metadata, and the split seed).
void save_dataset(const Dataset& ds, const std::string& base_path);
Dataset load_dataset(const std::string& base_path);

/// Checkpoint file: one compact JSON header line (layer shapes plus whatever
/// the caller adds under extra), then '\n', then the flattened parameters as
/// little-endian 64-bit floats.
void save_checkpoint(const std::string& path, const MlpParams& params, const nlohmann::json& extra);

struct Checkpoint {
  MlpParams params;
  nlohmann::json header;
};
Checkpoint load_checkpoint(const std::string& path);

/// Rows `step,loss,lr`.
void write_loss_csv(const std::string& path, const Vector& losses, const Vector& lrs);

nlohmann::json load_json_file(const std::string& path);
void save_json_file(const std::string& path, const nlohmann::json& j);

/// Strict schema helper: every key of obj must appear in required or
/// optional, and every required key must be present.
void check_keys(const nlohmann::json& obj, const std::string& context,
                const std::vector<std::string>& required, const std::vector<std::string>& optional);

}  // namespace mrbm
