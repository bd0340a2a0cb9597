#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "mrbm/samplers.hpp"
#include "mrbm/types.hpp"

namespace mrbm {

/// Linear noise schedule beta(t) = beta0 + (t/T) * (beta1 - beta0).
struct BetaSchedule {
  double beta0 = 1e-3;
  double beta1 = 20.0;
  double T = 1.0;

  double beta(double t) const { return beta0 + (t / T) * (beta1 - beta0); }
  void validate() const;
};

/// Uniform grid of N steps over [0, T]: t_k = k T / N, gamma_k = beta(t_k) T / N.
/// N = 0 is the degenerate grid {0} with no steps (used for pass-through
/// reverse generation).
class TimeGrid {
 public:
  TimeGrid(BetaSchedule schedule, int n_steps);

  int steps() const { return n_steps_; }
  const BetaSchedule& schedule() const { return schedule_; }
  const Vector& times() const { return times_; }            // N + 1 entries
  const Vector& gammas() const { return gammas_; }          // N entries
  /// Accumulated diffusion time tau_j = sum_{i<j} gamma_i (N + 1 entries);
  /// tau_N approximates the integral of beta over [0, T].
  const Vector& accumulated() const { return accumulated_; }

 private:
  BetaSchedule schedule_;
  int n_steps_ = 0;
  Vector times_, gammas_, accumulated_;
};

struct NoisedSample {
  double t = 0.0;  // grid time of the recorded state
  long step = 0;   // index on the grid (state after `step` chain steps)
  long datum = 0;  // column of the source datum
  Point x;
};

/// For each data column, draws a maximal step count K uniform on {0..N},
/// rolls the driftless Metropolis chain through gamma_0..gamma_{K-1}, and
/// records states at min(repeats, K+1) distinct uniformly chosen indices <= K.
/// Deterministic given seed; parallel over data columns.
std::vector<NoisedSample> forward_noise_batch(const Manifold& m, const ConstraintSet& c,
                                              const Matrix& data, const TimeGrid& grid,
                                              int repeats, std::uint64_t seed);

/// Multiplier min(1, boundary_distance_lb(x) / eps): ramps the score to zero
/// at the boundary so it respects the reflecting (Neumann) condition.
double score_rescale_factor(const ConstraintSet& c, const Point& x, double eps = 0.01);

Tangent score_rescale(const ConstraintSet& c, const Point& x, const Tangent& raw, double eps = 0.01);

/// Score evaluated on a batch: columns of x are points, returns one tangent
/// column per input column.
using BatchScoreFn = std::function<Matrix(double t, const Matrix& x)>;
using ScoreFn = std::function<Tangent(double t, const Point& x)>;

/// Adapts a pointwise score to the batch interface (column-by-column calls).
BatchScoreFn batch_score(ScoreFn score);

struct ReverseConfig {
  double rescale_eps = 0.01;
  bool apply_rescale = true;   // multiply the raw score by the boundary ramp
  bool parallel_score = true;  // false if the callback is not thread-safe
  long block = 4096;           // samples advanced in lockstep per score call
  long max_init_tries = 100000;
};

/// Draws n_samples uniform starts and runs the Metropolis chain backward
/// through the grid: reverse step j uses gamma_k with k = N-1-j and drift
/// gamma_k * score(t_{k+1}, x) inside the proposal.  Returns the final states
/// as columns, all inside the constraint set.
Matrix reverse_generate(const Manifold& m, const ConstraintSet& c, const BatchScoreFn& score,
                        const TimeGrid& grid, long n_samples, std::uint64_t seed,
                        const ReverseConfig& cfg = {});

struct TuneBeta1Config {
  int n_steps = 100;        // grid steps per forward trial
  long n_eval = 100000;     // chains per candidate evaluation
  int bins = 20;            // histogram resolution per dimension
  long n_reference = 100000;  // uniform reference draws for non-box sets
  double beta0 = 1e-3;
  double beta1_cap = 1e4;
  int bisect_rounds = 10;
  std::uint64_t seed = 0;
};

struct TuneResult {
  double beta1 = 0.0;
  double tv = 0.0;  // TV-to-uniform at the returned beta1
};

/// Smallest beta1 (up to the bisection resolution) for which the forward
/// process started from x0_sample columns reaches TV-to-uniform below
/// criterion_tv at t = T.  Doubling from beta0 finds a passing bracket, then
/// fixed-round bisection shrinks it.  Candidate evaluations share chain
/// substreams, so the search is deterministic given cfg.seed.  Throws
/// NumericalError if no beta1 below cfg.beta1_cap passes.
TuneResult tune_beta1(const Manifold& m, const ConstraintSet& c, const Matrix& x0_sample,
                      double criterion_tv = 0.05, const TuneBeta1Config& cfg = {});

}  // namespace mrbm
