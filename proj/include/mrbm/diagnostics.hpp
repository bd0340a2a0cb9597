#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "mrbm/samplers.hpp"
#include "mrbm/types.hpp"

namespace mrbm {

/// Transition density at x of unit-variance Brownian motion on [0, 1] with
/// normal reflection at both walls, started at x0, after time t.  Computed by
/// the method of images over the period-2 reflection group; image shells are
/// added until a shell contributes less than tol relative to the running sum.
double rbm_density_1d(double x, double t, double x0, double tol = 1e-12);

/// Total variation distance between the binned empirical distributions of two
/// 1-d sample sets over [lo, hi] (samples outside are clamped to edge bins).
double histogram_tv(const Vector& a, const Vector& b, int bins, double lo, double hi);

/// Binned TV between samples and an analytic density; the density is
/// integrated per bin with a 32-subpoint midpoint rule.
double histogram_tv(const Vector& a, const std::function<double(double)>& density, int bins,
                    double lo, double hi);

/// TV between 2-d histograms of the first two rows of each sample matrix
/// (columns are samples), bins x bins cells over [lo0,hi0] x [lo1,hi1].
double histogram_tv_2d(const Matrix& a, const Matrix& b, int bins, const Vector& lo, const Vector& hi);

/// Same against explicit per-cell reference masses (row-major, length bins^2,
/// must sum to 1 within 1e-12).
double histogram_tv_2d(const Matrix& a, const Vector& ref_mass, int bins, const Vector& lo, const Vector& hi);

/// Mixture-of-RBF kernel sum_l w_l exp(-|x-y|^2 / (2 l_l^2)).
struct MmdKernel {
  std::vector<double> lengthscales;
  std::vector<double> weights;
};

struct MmdResult {
  double mmd = 0.0;        // sqrt(max(0, mmd_sq_raw))
  double mmd_sq_raw = 0.0; // unbiased U-statistic, may be negative
};

/// Unbiased two-sample MMD between column sets a and b (same row count,
/// at least 2 columns each).
MmdResult mmd(const Matrix& a, const Matrix& b, const MmdKernel& kernel);

struct MmdCi {
  double lo = 0.0;
  double hi = 0.0;
  int resamples = 0;
  int subsample = 0;
};

/// Percentile bootstrap CI (2.5/97.5) for the MMD statistic; each resample
/// draws min(subsample_cap, n) columns with replacement from each set.
MmdCi mmd_bootstrap_ci(const Matrix& a, const Matrix& b, const MmdKernel& kernel,
                       int resamples, int subsample_cap, std::uint64_t seed);

struct ConvergenceConfig {
  long n_chains = 4096;
  double gamma = 1e-3;
  int check_every = 50;
  double tv_threshold = 0.25;
  long max_steps = 10000000;
  int bins = 20;              // per dimension; d = 1 uses a 1-d histogram
  long n_reference = 100000;  // uniform reference sample size for non-cube sets
  std::uint64_t seed = 0;
  /// Reflected chains use the fixed-iteration per-face intersection when set,
  /// matching general-purpose implementations of the reflected walk.
  bool generic_intersection = true;
};

struct ConvergenceResult {
  long steps = 0;
  double sampler_seconds = 0.0;  // wall-clock spent stepping chains only
  double tv = 0.0;               // value at the stopping checkpoint
};

/// Runs cfg.n_chains chains (chain i starts at starts.col(i % cols)) and
/// every cfg.check_every steps measures TV between the chains'
/// first-two-coordinate histogram and the uniform distribution on the
/// constraint set (exact cell masses for hypercubes, a uniform reference
/// sample otherwise).  TV is checked before the first step, so already-mixed
/// starts return steps = 0.  Returns at the first checkpoint with TV below
/// the threshold; throws NumericalError at the step cap.  Only the stepping
/// work is timed.
ConvergenceResult convergence_time(const Manifold& m, const ConstraintSet& c, const Matrix& starts,
                                   SamplerKind kind, const ConvergenceConfig& cfg);

struct PowerLawFit {
  double exponent = 0.0;
  double log_coeff = 0.0;
  double r_squared = 0.0;
};

/// Least squares fit of log(value) against log(size); needs >= 3 points with
/// positive sizes and values.
PowerLawFit fit_power_law(const Vector& sizes, const Vector& values);

}  // namespace mrbm
