#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mrbm/constraints.hpp"
#include "mrbm/geometry.hpp"
#include "mrbm/types.hpp"

namespace mrbm {

/// A point set bound to its manifold and constraint, with a deterministic
/// train/test split.  Every column of points satisfies contains.
struct Dataset {
  Manifold manifold;
  ConstraintSet constraint;
  Matrix points;     // storage x n
  std::string meta;  // JSON text recording the generator or source
  std::vector<Index> train_idx;
  std::vector<Index> test_idx;
  std::uint64_t split_seed = 0;  // make_split(n, split_seed) reproduces the split

  Matrix train_points() const;
  Matrix test_points() const;
};

/// Disjoint, covering 90/10 shuffle split of 0..n-1, fixed by (seed, n).
void make_split(Index n, std::uint64_t seed, std::vector<Index>& train, std::vector<Index>& test);

/// Equal-weight two-Gaussian mixture truncated to the set by rejection.
/// Cube targets use means +-0.5 per coordinate with sigma 0.2; simplex
/// targets use means 1/(2d) per coordinate and 1/(d+1) per coordinate plus a
/// first-coordinate offset min(0.25, 1/(2(d+1))) (shrunk so the mean keeps
/// clearance from the sum face), with sigma 0.1/sqrt(d).  The mixture
/// parameters are recorded in meta.  Throws NumericalError if the rejection
/// acceptance rate falls below 1e-4.
Dataset synth_bimodal(const Manifold& m, const ConstraintSet& c, int d, long n, std::uint64_t seed);

struct GeoLoadReport {
  long total_rows = 0;
  long kept = 0;
  long dropped = 0;
  bool suspicious = false;  // more than half of the rows fell outside
};

/// Reads `lon_deg,lat_deg` rows, converts to unit vectors, and keeps the
/// points inside the spherical polygon loaded from polygon_path (boundary
/// ambiguity counts as outside).  Malformed rows raise ConfigError with the
/// line number.
Dataset load_geo_points(const std::string& points_path, const std::string& polygon_path,
                        GeoLoadReport* report = nullptr);

/// Random 2x2 SPD matrices squeezed under the trace bound paired with plane
/// locations: W = A A^T + 0.1 I (A standard normal) rescaled to a uniform
/// fraction of the bound when its trace exceeds it, location standard normal
/// on both coordinates.  Lives on LogCholeskySPD(2) x Euclidean(2) with
/// constraint TraceBound(C) x All.
Dataset synth_spd_ellipsoids(long n, double trace_cap, std::uint64_t seed);

}  // namespace mrbm
