#include "mrbm/scorenet.hpp"

#include <cmath>
#include <iostream>
#include <numbers>
#include <sstream>

namespace mrbm {

namespace {

void check_net_shapes(const char* who, const MlpParams& p, Index point_dim) {
  if (p.w.empty()) throw ConfigError(std::string(who) + ": empty network");
  if (p.input_dim() != point_dim + 1)
    throw ConfigError(std::string(who) + ": network input dim must be point dim + 1");
  if (p.output_dim() != point_dim)
    throw ConfigError(std::string(who) + ": network output dim must match point dim");
}

Matrix stack_time(double t, const Matrix& x) {
  Matrix input(x.rows() + 1, x.cols());
  input.row(0).setConstant(t);
  input.bottomRows(x.rows()) = x;
  return input;
}

}  // namespace

long MlpParams::parameter_count() const {
  long n = 0;
  for (size_t l = 0; l < w.size(); ++l) n += w[l].size() + b[l].size();
  return n;
}

void MlpParams::validate() const {
  if (w.empty() || w.size() != b.size())
    throw ConfigError("MlpParams: need matching, nonempty weight and bias stacks");
  for (size_t l = 0; l < w.size(); ++l) {
    if (w[l].rows() != b[l].size()) throw ConfigError("MlpParams: bias size mismatch");
    if (l > 0 && w[l].cols() != w[l - 1].rows())
      throw ConfigError("MlpParams: layer dimension chain mismatch");
    if (!w[l].allFinite() || !b[l].allFinite())
      throw ConfigError("MlpParams: non-finite parameter entries");
  }
}

MlpParams mlp_init(int input_dim, int output_dim, int width, int layers, std::uint64_t seed) {
  if (input_dim < 1 || output_dim < 1 || width < 1 || layers < 1)
    throw ConfigError("mlp_init: dimensions and layer count must be positive");
  RngStream rng(seed, "mlp_init", 0);
  MlpParams p;
  p.w.reserve(static_cast<size_t>(layers));
  p.b.reserve(static_cast<size_t>(layers));
  for (int l = 0; l < layers; ++l) {
    const int in = l == 0 ? input_dim : width;
    const int out = l == layers - 1 ? output_dim : width;
    const double bound = std::sqrt(6.0 / in);
    Matrix wl(out, in);
    for (Index r = 0; r < wl.rows(); ++r)
      for (Index col = 0; col < wl.cols(); ++col) wl(r, col) = rng.uniform(-bound, bound);
    p.w.push_back(std::move(wl));
    p.b.push_back(Vector::Zero(out));
  }
  return p;
}

Vector mlp_flatten(const MlpParams& p) {
  Vector flat(p.parameter_count());
  Index k = 0;
  for (size_t l = 0; l < p.w.size(); ++l) {
    for (Index r = 0; r < p.w[l].rows(); ++r)
      for (Index col = 0; col < p.w[l].cols(); ++col) flat[k++] = p.w[l](r, col);
    flat.segment(k, p.b[l].size()) = p.b[l];
    k += p.b[l].size();
  }
  return flat;
}

void mlp_assign(MlpParams& p, const Vector& flat) {
  if (flat.size() != p.parameter_count())
    throw ConfigError("mlp_assign: flat vector length does not match the network");
  Index k = 0;
  for (size_t l = 0; l < p.w.size(); ++l) {
    for (Index r = 0; r < p.w[l].rows(); ++r)
      for (Index col = 0; col < p.w[l].cols(); ++col) p.w[l](r, col) = flat[k++];
    p.b[l] = flat.segment(k, p.b[l].size());
    k += p.b[l].size();
  }
}

Matrix mlp_forward(const MlpParams& p, const Matrix& input, Tape* tape) {
  p.validate();
  if (input.rows() != p.input_dim()) throw ConfigError("mlp_forward: input row mismatch");
  const int layers = p.layers();
  if (tape) {
    tape->a.assign(static_cast<size_t>(layers), Matrix());
    tape->z.assign(static_cast<size_t>(layers), Matrix());
    tape->a[0] = input;
    for (int l = 0; l < layers; ++l) {
      tape->z[l] = p.w[l] * tape->a[l];
      tape->z[l].colwise() += p.b[l];
      if (l + 1 < layers) tape->a[l + 1] = tape->z[l].array().sin();
    }
    return tape->z.back();
  }
  Matrix a = input;
  for (int l = 0; l < layers; ++l) {
    Matrix z = p.w[l] * a;
    z.colwise() += p.b[l];
    if (l + 1 < layers)
      a = z.array().sin();
    else
      a = std::move(z);
  }
  return a;
}

Matrix mlp_score_batch(const MlpParams& p, double t, const Matrix& x) {
  return mlp_forward(p, stack_time(t, x));
}

Vector mlp_score(const MlpParams& p, double t, const Vector& x) {
  return mlp_score_batch(p, t, x).col(0);
}

void MlpGrads::resize_like(const MlpParams& p) {
  w.assign(p.w.size(), Matrix());
  b.assign(p.b.size(), Vector());
  for (size_t l = 0; l < p.w.size(); ++l) {
    w[l] = Matrix::Zero(p.w[l].rows(), p.w[l].cols());
    b[l] = Vector::Zero(p.b[l].size());
  }
}

void MlpGrads::set_zero() {
  for (auto& m : w) m.setZero();
  for (auto& v : b) v.setZero();
}

void MlpGrads::axpy(double scale, const MlpGrads& other) {
  for (size_t l = 0; l < w.size(); ++l) {
    w[l] += scale * other.w[l];
    b[l] += scale * other.b[l];
  }
}

Matrix mlp_backward(const MlpParams& p, const Tape& tape, const Matrix& out_cot, MlpGrads& grads) {
  const int layers = p.layers();
  if (grads.w.size() != p.w.size()) grads.resize_like(p);
  Matrix r = out_cot;  // cotangent of z[l] while descending
  for (int l = layers - 1; l >= 0; --l) {
    grads.w[static_cast<size_t>(l)].noalias() += r * tape.a[static_cast<size_t>(l)].transpose();
    grads.b[static_cast<size_t>(l)] += r.rowwise().sum();
    Matrix prev = p.w[static_cast<size_t>(l)].transpose() * r;
    if (l == 0) return prev;
    r = (prev.array() * tape.z[static_cast<size_t>(l - 1)].array().cos()).matrix();
  }
  return r;  // unreachable; layers >= 1
}

Matrix mlp_jvp(const MlpParams& p, const Tape& tape, const Matrix& v_in,
               std::vector<Matrix>* d_a, std::vector<Matrix>* d_z) {
  const int layers = p.layers();
  if (v_in.rows() != p.input_dim() || v_in.cols() != tape.a[0].cols())
    throw ConfigError("mlp_jvp: perturbation shape must match the taped input");
  if (d_a) d_a->assign(static_cast<size_t>(layers), Matrix());
  if (d_z) d_z->assign(static_cast<size_t>(layers), Matrix());
  Matrix d = v_in;
  Matrix dz;
  for (int l = 0; l < layers; ++l) {
    if (d_a) (*d_a)[static_cast<size_t>(l)] = d;
    dz.noalias() = p.w[static_cast<size_t>(l)] * d;
    if (d_z) (*d_z)[static_cast<size_t>(l)] = dz;
    if (l + 1 < layers) d = (tape.z[static_cast<size_t>(l)].array().cos() * dz.array()).matrix();
  }
  return dz;
}

void mlp_bilinear_backward(const MlpParams& p, const Tape& tape, const std::vector<Matrix>& d_a,
                           const std::vector<Matrix>& d_z, const Matrix& u, MlpGrads& grads) {
  const int layers = p.layers();
  if (grads.w.size() != p.w.size()) grads.resize_like(p);
  // phi = sum_b <u_b, (J v)_b>.  Two adjoint streams descend together:
  // c = dphi/d(directional state), a_cot = dphi/d(activation value).
  grads.w[static_cast<size_t>(layers - 1)].noalias() +=
      u * d_a[static_cast<size_t>(layers - 1)].transpose();
  if (layers == 1) return;
  Matrix c = p.w[static_cast<size_t>(layers - 1)].transpose() * u;
  Matrix a_cot = Matrix::Zero(c.rows(), c.cols());
  for (int l = layers - 2; l >= 0; --l) {
    const size_t sl = static_cast<size_t>(l);
    const auto cos_z = tape.z[sl].array().cos();
    const Matrix cz = (cos_z * c.array()).matrix();
    const Matrix zc =
        (a_cot.array() * cos_z - c.array() * d_z[sl].array() * tape.z[sl].array().sin()).matrix();
    grads.w[sl].noalias() += cz * d_a[sl].transpose();
    grads.w[sl].noalias() += zc * tape.a[sl].transpose();
    grads.b[sl] += zc.rowwise().sum();
    if (l > 0) {
      Matrix next_c = p.w[sl].transpose() * cz;
      a_cot = p.w[sl].transpose() * zc;
      c = std::move(next_c);
    }
  }
}

namespace {

bool resolve_exact(DivergenceMode mode, Index dim) {
  if (mode == DivergenceMode::kExact) return true;
  if (mode == DivergenceMode::kHutchinson) return false;
  return dim <= 3;
}

void warn_exact_cost(Index dim) {
  if (dim > 64)
    std::cerr << "divergence: exact mode over " << dim << " dims runs " << dim
              << " directional passes; consider the Hutchinson estimator\n";
}

}  // namespace

double divergence(const MlpParams& p, double t, const Vector& x, DivergenceMode mode, int probes,
                  RngStream* rng) {
  check_net_shapes("divergence", p, x.size());
  const Index d = x.size();
  Tape tape;
  mlp_forward(p, stack_time(t, x), &tape);
  if (resolve_exact(mode, d)) {
    warn_exact_cost(d);
    double div = 0.0;
    Matrix v = Matrix::Zero(d + 1, 1);
    for (Index i = 0; i < d; ++i) {
      v(1 + i, 0) = 1.0;
      div += mlp_jvp(p, tape, v)(i, 0);
      v(1 + i, 0) = 0.0;
    }
    return div;
  }
  if (probes < 1) throw ConfigError("divergence: need at least one Hutchinson probe");
  if (!rng) throw ConfigError("divergence: Hutchinson mode needs an rng");
  double acc = 0.0;
  Matrix v = Matrix::Zero(d + 1, 1);
  for (int k = 0; k < probes; ++k) {
    for (Index i = 0; i < d; ++i) v(1 + i, 0) = rng->rademacher();
    const Matrix jv = mlp_jvp(p, tape, v);
    acc += (v.bottomRows(d).array() * jv.array()).sum();
  }
  return acc / probes;
}

double ism_loss(const MlpParams& p, const ConstraintSet& c, const std::vector<NoisedSample>& batch,
                const IsmConfig& cfg, RngStream* rng, MlpGrads* grad) {
  if (batch.empty()) throw ConfigError("ism_loss: empty batch");
  if (!(cfg.rescale_eps > 0.0)) throw ConfigError("ism_loss: rescale_eps must be positive");
  const Index d = batch.front().x.size();
  check_net_shapes("ism_loss", p, d);
  if (c.dim() != d) throw ConfigError("ism_loss: constraint dimension mismatch");
  const Index n = static_cast<Index>(batch.size());

  Matrix input(d + 1, n);
  Vector lam(n), rho(n);
  Matrix ramp_grad = Matrix::Zero(d, n);  // gradient of rho where the ramp is active
  for (Index j = 0; j < n; ++j) {
    const NoisedSample& s = batch[static_cast<size_t>(j)];
    if (s.x.size() != d) throw ConfigError("ism_loss: inconsistent point dimensions in batch");
    if (!c.contains(s.x)) {
      std::ostringstream msg;
      msg << "ism_loss: batch point " << j << " lies outside the constraint set";
      throw ContractViolation(msg.str());
    }
    input(0, j) = s.t;
    input.col(j).tail(d) = s.x;
    lam[j] = cfg.lambda_weight ? cfg.lambda_weight(s.t) : 1.0 + s.t;
    const double lb = c.boundary_distance_lb(s.x);
    if (lb < cfg.rescale_eps) {
      rho[j] = lb / cfg.rescale_eps;
      ramp_grad.col(j) = c.boundary_distance_lb_gradient(s.x) / cfg.rescale_eps;
    } else {
      rho[j] = 1.0;
    }
  }

  Tape tape;
  const Matrix score = mlp_forward(p, input, &tape);
  if (grad) {
    if (grad->w.size() != p.w.size()) grad->resize_like(p);
    grad->set_zero();
  }

  const bool exact = resolve_exact(cfg.mode, d);
  if (exact) warn_exact_cost(d);
  if (!exact && !rng) throw ConfigError("ism_loss: Hutchinson mode needs an rng");
  if (!exact && cfg.hutchinson_probes < 1)
    throw ConfigError("ism_loss: need at least one Hutchinson probe");

  // Divergence of the raw score per batch column, plus the second-order
  // parameter gradient when requested.  The probe cotangent u is pre-scaled
  // by the per-sample loss weight lam * rho / n.
  Vector div = Vector::Zero(n);
  std::vector<Matrix> d_a, d_z;
  std::vector<Matrix>* d_a_ptr = grad ? &d_a : nullptr;
  std::vector<Matrix>* d_z_ptr = grad ? &d_z : nullptr;
  const Vector div_weight = (lam.array() * rho.array() / static_cast<double>(n)).matrix();
  if (exact) {
    Matrix v = Matrix::Zero(d + 1, n);
    for (Index i = 0; i < d; ++i) {
      v.row(1 + i).setOnes();
      const Matrix jv = mlp_jvp(p, tape, v, d_a_ptr, d_z_ptr);
      div += jv.row(i).transpose();
      if (grad) {
        Matrix u = Matrix::Zero(d, n);
        u.row(i) = div_weight.transpose();
        mlp_bilinear_backward(p, tape, d_a, d_z, u, *grad);
      }
      v.row(1 + i).setZero();
    }
  } else {
    const int probes = cfg.hutchinson_probes;
    Matrix v = Matrix::Zero(d + 1, n);
    for (int k = 0; k < probes; ++k) {
      for (Index j = 0; j < n; ++j)
        for (Index i = 0; i < d; ++i) v(1 + i, j) = rng->rademacher();
      const Matrix jv = mlp_jvp(p, tape, v, d_a_ptr, d_z_ptr);
      div += (v.bottomRows(d).array() * jv.array()).colwise().sum().transpose().matrix() / probes;
      if (grad) {
        const Matrix u =
            v.bottomRows(d) * (div_weight / probes).asDiagonal();
        mlp_bilinear_backward(p, tape, d_a, d_z, u, *grad);
      }
    }
  }

  double loss = 0.0;
  for (Index j = 0; j < n; ++j) {
    const double s_sq = score.col(j).squaredNorm();
    const double cross = ramp_grad.col(j).dot(score.col(j));
    loss += lam[j] * (0.5 * rho[j] * rho[j] * s_sq + rho[j] * div[j] + cross);
  }
  loss /= static_cast<double>(n);

  if (grad) {
    Matrix u1(d, n);
    for (Index j = 0; j < n; ++j)
      u1.col(j) = (lam[j] / static_cast<double>(n)) *
                  (rho[j] * rho[j] * score.col(j) + ramp_grad.col(j));
    mlp_backward(p, tape, u1, *grad);
  }
  return loss;
}

TrainResult train_score_model(const Manifold& m, const ConstraintSet& c, const Matrix& data,
                              const TimeGrid& grid, const TrainConfig& cfg) {
  if (data.cols() == 0) throw ConfigError("train_score_model: empty data set");
  if (data.rows() != m.storage_size())
    throw ConfigError("train_score_model: data rows must match manifold storage");
  if (cfg.batch_size < 1 || cfg.repeats < 1 || cfg.total_steps < 0 || cfg.width < 1 ||
      cfg.layers < 1)
    throw ConfigError("train_score_model: counts must be positive");
  if (!(cfg.lr > 0.0)) throw ConfigError("train_score_model: learning rate must be positive");

  const int d = m.storage_size();
  TrainResult result;
  result.params = mlp_init(d + 1, d, cfg.width, cfg.layers, cfg.seed);
  result.losses.resize(cfg.total_steps);
  result.lrs.resize(cfg.total_steps);
  if (cfg.total_steps == 0) return result;

  IsmConfig icfg;
  icfg.mode = cfg.mode;
  icfg.hutchinson_probes = cfg.hutchinson_probes;
  icfg.rescale_eps = cfg.rescale_eps;

  MlpGrads grads, adam_m, adam_v;
  grads.resize_like(result.params);
  adam_m.resize_like(result.params);
  adam_v.resize_like(result.params);

  RngStream train_rng(cfg.seed, "train", 0);
  RngStream hutch_rng(cfg.seed, "hutch", 0);
  const long rolls = std::max<long>(1, cfg.batch_size / cfg.repeats);
  Matrix selected(d, rolls);

  for (long step = 0; step < cfg.total_steps; ++step) {
    for (long r = 0; r < rolls; ++r)
      selected.col(r) = data.col(static_cast<Index>(train_rng.uniform_index(data.cols())));
    const std::uint64_t batch_seed = train_rng.engine()();
    const auto batch = forward_noise_batch(m, c, selected, grid, cfg.repeats, batch_seed);

    const double loss = ism_loss(result.params, c, batch, icfg, &hutch_rng, &grads);
    if (!std::isfinite(loss)) {
      const double pnorm = mlp_flatten(result.params).norm();
      std::ostringstream msg;
      msg << "train_score_model: non-finite loss at step " << step << " (parameter norm " << pnorm
          << ")";
      throw NumericalError(msg.str());
    }

    const double lr =
        cfg.lr * 0.5 * (1.0 + std::cos(std::numbers::pi * static_cast<double>(step) /
                                       static_cast<double>(cfg.total_steps)));
    const double bc1 = 1.0 - std::pow(cfg.adam_beta1, static_cast<double>(step + 1));
    const double bc2 = 1.0 - std::pow(cfg.adam_beta2, static_cast<double>(step + 1));
    for (size_t l = 0; l < result.params.w.size(); ++l) {
      adam_m.w[l] = cfg.adam_beta1 * adam_m.w[l] + (1.0 - cfg.adam_beta1) * grads.w[l];
      adam_v.w[l].array() =
          cfg.adam_beta2 * adam_v.w[l].array() + (1.0 - cfg.adam_beta2) * grads.w[l].array().square();
      result.params.w[l].array() -=
          lr * (adam_m.w[l].array() / bc1) / ((adam_v.w[l].array() / bc2).sqrt() + cfg.adam_eps);
      adam_m.b[l] = cfg.adam_beta1 * adam_m.b[l] + (1.0 - cfg.adam_beta1) * grads.b[l];
      adam_v.b[l].array() =
          cfg.adam_beta2 * adam_v.b[l].array() + (1.0 - cfg.adam_beta2) * grads.b[l].array().square();
      result.params.b[l].array() -=
          lr * (adam_m.b[l].array() / bc1) / ((adam_v.b[l].array() / bc2).sqrt() + cfg.adam_eps);
    }
    result.losses[step] = loss;
    result.lrs[step] = lr;
  }
  return result;
}

BatchScoreFn make_score_fn(MlpParams params) {
  params.validate();
  return [p = std::move(params)](double t, const Matrix& x) { return mlp_score_batch(p, t, x); };
}

}  // namespace mrbm
