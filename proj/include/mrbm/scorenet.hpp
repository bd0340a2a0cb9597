#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "mrbm/constraints.hpp"
#include "mrbm/diffusion.hpp"
#include "mrbm/rng.hpp"
#include "mrbm/types.hpp"

namespace mrbm {

/// Score network parameters: a stack of linear layers with sine activations
/// between them and a linear last layer.  Layer l maps in_l -> out_l via
/// w[l] * a + b[l].  Input rows are [t; x], output is the score in chart
/// coordinates, so input_dim = storage + 1 and output_dim = storage.
struct MlpParams {
  std::vector<Matrix> w;
  std::vector<Vector> b;

  int layers() const { return static_cast<int>(w.size()); }
  int input_dim() const { return static_cast<int>(w.front().cols()); }
  int output_dim() const { return static_cast<int>(w.back().rows()); }
  long parameter_count() const;
  void validate() const;
};

/// Hidden layers start uniform on +-sqrt(6 / fan_in) with zero biases, the
/// usual scheme for sine activations with first-layer frequency scale 1.
MlpParams mlp_init(int input_dim, int output_dim, int width, int layers, std::uint64_t seed);

/// Flat parameter order: per layer, the weight matrix row-major, then the
/// bias.  mlp_assign reads the same order back into an allocated net.
Vector mlp_flatten(const MlpParams& p);
void mlp_assign(MlpParams& p, const Vector& flat);

/// Saved forward state for one batch: inputs, activations a[l] entering each
/// layer, and pre-activations z[l].  Enough to run reverse passes for
/// parameter and input gradients, and forward-mode directional passes.
struct Tape {
  std::vector<Matrix> a;  // a[0] = input, a[l] = sin(z[l-1]);  layers entries
  std::vector<Matrix> z;  // z[l] = w[l] a[l] + b[l];           layers entries
  const Matrix& output() const { return z.back(); }
};

/// Forward pass on a batch whose rows are already [t; x].  Writes the tape
/// when given one.
Matrix mlp_forward(const MlpParams& p, const Matrix& input, Tape* tape = nullptr);

/// Convenience wrappers stacking the time row for you.
Matrix mlp_score_batch(const MlpParams& p, double t, const Matrix& x);
Vector mlp_score(const MlpParams& p, double t, const Vector& x);

/// Parameter gradients, same shapes as the net.
struct MlpGrads {
  std::vector<Matrix> w;
  std::vector<Vector> b;
  void resize_like(const MlpParams& p);
  void set_zero();
  void axpy(double scale, const MlpGrads& other);  // this += scale * other
};

/// Reverse pass: accumulates d<out_cot, output>/d(params) into grads and
/// returns the input cotangent.  out_cot has the output's shape.
Matrix mlp_backward(const MlpParams& p, const Tape& tape, const Matrix& out_cot, MlpGrads& grads);

/// Forward-mode pass: directional derivative of the outputs along the input
/// perturbation v_in (same shape as the input batch).  When d_a/d_z are
/// given, the per-layer directional states are kept for second-order use.
Matrix mlp_jvp(const MlpParams& p, const Tape& tape, const Matrix& v_in,
               std::vector<Matrix>* d_a = nullptr, std::vector<Matrix>* d_z = nullptr);

/// Accumulates the parameter gradient of phi = sum_b <u_b, J_b v_b> given the
/// forward tape and the directional states of the v pass; u enters as the
/// (already weighted) output-side probe matrix.
void mlp_bilinear_backward(const MlpParams& p, const Tape& tape, const std::vector<Matrix>& d_a,
                           const std::vector<Matrix>& d_z, const Matrix& u, MlpGrads& grads);

enum class DivergenceMode { kAuto, kExact, kHutchinson };

/// Divergence of x -> score(t, x) in chart coordinates.  Exact mode runs one
/// directional pass per coordinate (warns on stderr above 64 dims); the
/// Hutchinson estimate averages Rademacher probes and needs an rng.  kAuto
/// picks exact for dim <= 3.
double divergence(const MlpParams& p, double t, const Vector& x, DivergenceMode mode,
                  int probes = 1, RngStream* rng = nullptr);

struct IsmConfig {
  DivergenceMode mode = DivergenceMode::kAuto;
  int hutchinson_probes = 1;
  double rescale_eps = 0.01;
  /// Loss weighting; empty means lambda(t) = 1 + t.
  std::function<double(double)> lambda_weight;
};

/// Implicit score-matching loss over noised samples: the mean of
/// lambda(t) * (0.5 |s~|^2 + div s~) where s~ is the net's score passed
/// through the boundary rescale ramp.  grad, when given, receives the exact
/// parameter gradient (including the divergence term) scaled like the loss.
double ism_loss(const MlpParams& p, const ConstraintSet& c, const std::vector<NoisedSample>& batch,
                const IsmConfig& cfg, RngStream* rng = nullptr, MlpGrads* grad = nullptr);

struct TrainConfig {
  double lr = 2e-4;        // cosine-decayed over total_steps
  long batch_size = 256;   // nominal loss terms per step (rolls = batch/repeats)
  int repeats = 8;         // recorded states per rolled trajectory
  long total_steps = 1000;
  int width = 512;
  int layers = 6;
  DivergenceMode mode = DivergenceMode::kAuto;
  int hutchinson_probes = 1;
  double rescale_eps = 0.01;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 0;
};

struct TrainResult {
  MlpParams params;
  Vector losses;  // one entry per optimiser step
  Vector lrs;
};

/// Trains the score net on data columns: every step draws batch_size/repeats
/// data columns, rolls forward noise through the grid, and takes one Adam
/// step on the ism loss.  Reproducible from cfg.seed; a non-finite loss
/// aborts with the step index and parameter norm.
TrainResult train_score_model(const Manifold& m, const ConstraintSet& c, const Matrix& data,
                              const TimeGrid& grid, const TrainConfig& cfg);

/// Batch score callback backed by a parameter snapshot (safe for concurrent
/// calls).
BatchScoreFn make_score_fn(MlpParams params);

}  // namespace mrbm
