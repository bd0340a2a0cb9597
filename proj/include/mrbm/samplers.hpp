#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "mrbm/constraints.hpp"
#include "mrbm/geometry.hpp"
#include "mrbm/rng.hpp"
#include "mrbm/types.hpp"

namespace mrbm {

/// Optional drift callback: tangent vector at x, time t.
using DriftFn = std::function<Tangent(double t, const Point& x)>;

struct StepConfig {
  double gamma = 1e-3;
  DriftFn drift;                     // empty: pure noise
  long max_rejection_tries = 10000;
  long max_reflections = 1000;
  /// Reflected steps resolve boundary hits with the closed-form/bisection
  /// solver by default; true switches to the fixed-iteration per-face
  /// bisection used as the general-purpose reference implementation.
  bool generic_intersection = false;
};

struct StepOutcome {
  Point x;
  bool accepted = false;
};

/// One proposal per call: q = exp_x(gamma * drift + sqrt(gamma) * z), accepted
/// iff q lies strictly inside the constraint set; otherwise the chain stays.
StepOutcome metropolis_step(const Manifold& m, const ConstraintSet& c, const Point& x,
                            const StepConfig& cfg, double t, RngStream& rng);

/// Same step with the tangent noise z supplied by the caller.
StepOutcome metropolis_step_with_noise(const Manifold& m, const ConstraintSet& c, const Point& x,
                                       const StepConfig& cfg, double t, const Tangent& z);

/// Redraws z until the proposal lands inside; the chain always moves.  Throws
/// StuckChainError after max_rejection_tries failed draws.
Point rejection_step(const Manifold& m, const ConstraintSet& c, const Point& x,
                     const StepConfig& cfg, double t, RngStream& rng);

/// Transports the displacement v from x, reflecting off constraint faces:
/// advance to the first boundary hit, reflect the remaining direction across
/// the face normal, repeat until the arc length is used up.  Flat charts
/// only.  A landing exactly on the boundary is nudged 1e-10 inward.  Throws
/// ReflectionBudgetError past cfg.max_reflections.
Point reflected_step(const Manifold& m, const ConstraintSet& c, const Point& x,
                     const Tangent& v, const StepConfig& cfg);

enum class SamplerKind { kMetropolis, kRejection, kReflected };

/// Time at the start of a step and the step size.
struct ScheduleStep {
  double t = 0.0;
  double gamma = 0.0;
};

/// Constant-gamma schedule covering total_time (steps = total_time / gamma).
std::vector<ScheduleStep> constant_schedule(double gamma, double total_time);

struct Trajectory {
  Matrix states;                  // storage x (steps + 1)
  Vector times;                   // steps + 1
  std::vector<std::uint8_t> accepted;  // per step; always 1 for non-Metropolis
  std::uint64_t seed = 0;
  std::uint64_t chain_index = 0;
};

/// Runs one chain from x0 through the schedule, recording every state.  The
/// chain draws from the ("chain", chain_index) sub-stream of seed.  The
/// reflected variant uses the displacement v = sqrt(gamma) * z + gamma * b.
Trajectory run_chain(const Manifold& m, const ConstraintSet& c, const Point& x0,
                     SamplerKind kind, const std::vector<ScheduleStep>& schedule,
                     const StepConfig& cfg, std::uint64_t seed, std::uint64_t chain_index = 0);

/// Monte Carlo estimates of the one-step kernel moments at x for step size
/// gamma, in a flat chart.  Rejection-kernel drift/covariance are computed
/// from proposals conditioned on acceptance; Metropolis-kernel moments come
/// from an independent second batch where rejected proposals contribute a
/// zero increment.  Drift is E[increment]/gamma, covariance E[inc inc^T]/gamma.
struct LocalMoments {
  double accept_prob = 0.0;
  double accept_se = 0.0;
  Vector drift;              // rejection kernel
  Vector drift_se;
  Matrix cov;                // rejection kernel
  Matrix cov_se;
  Vector metropolis_drift;
  Vector metropolis_drift_se;
  Matrix metropolis_cov;
  Matrix metropolis_cov_se;
  long n_samples = 0;
};

LocalMoments empirical_local_moments(const Manifold& m, const ConstraintSet& c, const Point& x,
                                     double gamma, long n_samples, RngStream& rng);

/// Runs n_chains independent chains (chain i starts at starts.col(i % cols)
/// and draws from the ("chain", i) sub-stream of seed) and records the states
/// after the step counts listed in snapshot_steps (sorted, 0 = initial state).
/// Returns one storage x n_chains matrix per snapshot.  Chains run in
/// parallel subject to MRBM_THREADS; results do not depend on thread count.
std::vector<Matrix> run_chain_batch_snapshots(const Manifold& m, const ConstraintSet& c,
                                              const Matrix& starts, SamplerKind kind,
                                              const std::vector<ScheduleStep>& schedule,
                                              const StepConfig& cfg, std::uint64_t seed,
                                              long n_chains, const std::vector<long>& snapshot_steps);

/// Final states only.
Matrix run_chain_batch_finals(const Manifold& m, const ConstraintSet& c, const Matrix& starts,
                              SamplerKind kind, const std::vector<ScheduleStep>& schedule,
                              const StepConfig& cfg, std::uint64_t seed, long n_chains);

/// Uniform draw from the constraint set.  Flat charts reject from the
/// constraint's proposal box, except the open simplex which is sampled
/// directly through exponential spacings; Sphere(3) with a polygon rejects
/// from the area measure of the sphere.  Throws StuckChainError when
/// max_tries rejections pass without a hit.
Point uniform_sample(const Manifold& m, const ConstraintSet& c, RngStream& rng,
                     long max_tries = 1000000);

}  // namespace mrbm
