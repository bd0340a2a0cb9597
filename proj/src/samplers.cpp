#include "mrbm/samplers.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

#include "mrbm/parallel.hpp"

namespace mrbm {
namespace {

constexpr double kBoundaryNudge = 1e-10;

Tangent step_displacement(const StepConfig& cfg, double t, const Point& x, const Tangent& z, double gamma) {
  Tangent v = std::sqrt(gamma) * z;
  if (cfg.drift) v += gamma * cfg.drift(t, x);
  return v;
}

}  // namespace

StepOutcome metropolis_step_with_noise(const Manifold& m, const ConstraintSet& c, const Point& x,
                                       const StepConfig& cfg, double t, const Tangent& z) {
  if (!(cfg.gamma > 0.0)) throw ConfigError("metropolis_step: gamma must be positive");
  const Point q = exp_map(m, x, step_displacement(cfg, t, x, z, cfg.gamma));
  if (c.contains(q)) return {q, true};
  return {x, false};
}

StepOutcome metropolis_step(const Manifold& m, const ConstraintSet& c, const Point& x,
                            const StepConfig& cfg, double t, RngStream& rng) {
  return metropolis_step_with_noise(m, c, x, cfg, t, tangent_randn(m, x, rng));
}

Point rejection_step(const Manifold& m, const ConstraintSet& c, const Point& x,
                     const StepConfig& cfg, double t, RngStream& rng) {
  if (!(cfg.gamma > 0.0)) throw ConfigError("rejection_step: gamma must be positive");
  for (long tries = 1; tries <= cfg.max_rejection_tries; ++tries) {
    const Point q = exp_map(m, x, step_displacement(cfg, t, x, tangent_randn(m, x, rng), cfg.gamma));
    if (c.contains(q)) return q;
  }
  throw StuckChainError("rejection_step: no proposal accepted", cfg.max_rejection_tries);
}

Point reflected_step(const Manifold& m, const ConstraintSet& c, const Point& x,
                     const Tangent& v, const StepConfig& cfg) {
  if (!m.is_flat()) {
    throw UnsupportedOperation("reflected_step: requires a flat chart (got " + m.describe() + ")");
  }
  double remaining = v.norm();
  if (remaining == 0.0) return x;
  Vector dir = v / remaining;
  Point cur = x;
  long reflections = 0;
  while (remaining > 0.0) {
    const auto hit = cfg.generic_intersection ? c.ray_intersect_generic(cur, dir, remaining)
                                              : c.ray_intersect(cur, dir, remaining);
    if (!hit) {
      cur += remaining * dir;
      break;
    }
    cur += hit->t * dir;
    remaining -= hit->t;
    dir = reflect_tangent(m, dir, hit->normal);
    if (++reflections > cfg.max_reflections) {
      throw ReflectionBudgetError("reflected_step: reflection budget exhausted", reflections);
    }
  }
  cur = normalize_point(m, cur);
  if (!c.contains(cur)) {
    // Landed on (or within roundoff of) the boundary: push off every face we
    // are touching.
    for (int attempt = 0; attempt < 4 && !c.contains(cur); ++attempt) {
      const int faces = c.face_count();
      for (int f = 0; f < faces; ++f) {
        if (c.face_value(f, cur) >= -1e-14) {
          Vector g = c.face_gradient(f, cur);
          cur -= (kBoundaryNudge / g.norm()) * g;
        }
      }
      cur = normalize_point(m, cur);
    }
    if (!c.contains(cur)) {
      throw NumericalError("reflected_step: failed to re-enter the domain after a boundary landing");
    }
  }
  return cur;
}

std::vector<ScheduleStep> constant_schedule(double gamma, double total_time) {
  if (!(gamma > 0.0) || !(total_time > 0.0)) {
    throw ConfigError("constant_schedule: gamma and total_time must be positive");
  }
  const long n = std::lround(total_time / gamma);
  if (n < 1) throw ConfigError("constant_schedule: total_time shorter than one step");
  std::vector<ScheduleStep> s(n);
  for (long k = 0; k < n; ++k) s[k] = {k * gamma, gamma};
  return s;
}

Trajectory run_chain(const Manifold& m, const ConstraintSet& c, const Point& x0,
                     SamplerKind kind, const std::vector<ScheduleStep>& schedule,
                     const StepConfig& cfg, std::uint64_t seed, std::uint64_t chain_index) {
  if (!c.contains(x0)) throw ContractViolation("run_chain: x0 is not inside the constraint set");

  RngStream rng(seed, "chain", chain_index);
  const long n = static_cast<long>(schedule.size());
  Trajectory traj;
  traj.seed = seed;
  traj.chain_index = chain_index;
  traj.states.resize(m.storage_size(), n + 1);
  traj.times.resize(n + 1);
  traj.accepted.assign(n, 1);
  traj.states.col(0) = x0;
  traj.times[0] = schedule.empty() ? 0.0 : schedule.front().t;  // empty schedule: just x0

  Point x = x0;
  StepConfig step_cfg = cfg;
  for (long k = 0; k < n; ++k) {
    step_cfg.gamma = schedule[k].gamma;
    const double t = schedule[k].t;
    try {
      switch (kind) {
        case SamplerKind::kMetropolis: {
          const StepOutcome out = metropolis_step(m, c, x, step_cfg, t, rng);
          x = out.x;
          traj.accepted[k] = out.accepted ? 1 : 0;
          break;
        }
        case SamplerKind::kRejection:
          x = rejection_step(m, c, x, step_cfg, t, rng);
          break;
        case SamplerKind::kReflected: {
          Tangent v = std::sqrt(step_cfg.gamma) * tangent_randn(m, x, rng);
          if (step_cfg.drift) v += step_cfg.gamma * step_cfg.drift(t, x);
          x = reflected_step(m, c, x, v, step_cfg);
          break;
        }
      }
    } catch (const StuckChainError& e) {
      std::ostringstream msg;
      msg << "run_chain: chain " << chain_index << " stuck at step " << k << ": " << e.what();
      throw StuckChainError(msg.str(), e.tries());
    }
    traj.states.col(k + 1) = x;
    traj.times[k + 1] = schedule[k].t + schedule[k].gamma;
  }
  return traj;
}

LocalMoments empirical_local_moments(const Manifold& m, const ConstraintSet& c, const Point& x,
                                     double gamma, long n_samples, RngStream& rng) {
  if (n_samples < 100) throw ConfigError("empirical_local_moments: need at least 100 samples");
  if (!(gamma > 0.0)) throw ConfigError("empirical_local_moments: gamma must be positive");
  if (!m.is_flat()) {
    throw UnsupportedOperation("empirical_local_moments: requires a flat chart");
  }
  if (!c.contains(x)) throw ContractViolation("empirical_local_moments: x is not inside the constraint set");

  const Index d = m.storage_size();
  const double sg = std::sqrt(gamma);

  // Batch A: rejection kernel (conditioned on acceptance).
  long accepted = 0;
  Vector sum = Vector::Zero(d), sum_sq = Vector::Zero(d);
  Matrix outer_sum = Matrix::Zero(d, d), outer_sq = Matrix::Zero(d, d);
  Vector w(d);
  for (long i = 0; i < n_samples; ++i) {
    for (Index j = 0; j < d; ++j) w[j] = sg * rng.normal();
    if (!c.contains(x + w)) continue;
    ++accepted;
    sum += w;
    sum_sq += w.cwiseProduct(w);
    const Matrix o = w * w.transpose();
    outer_sum += o;
    outer_sq += o.cwiseProduct(o);
  }
  if (accepted == 0) throw NumericalError("empirical_local_moments: no proposal accepted");

  LocalMoments out;
  out.n_samples = n_samples;
  out.accept_prob = double(accepted) / double(n_samples);
  out.accept_se = std::sqrt(out.accept_prob * (1.0 - out.accept_prob) / double(n_samples));

  const double na = double(accepted);
  out.drift = sum / (na * gamma);
  out.cov = outer_sum / (na * gamma);
  out.drift_se.resize(d);
  for (Index j = 0; j < d; ++j) {
    const double var = sum_sq[j] / na - (sum[j] / na) * (sum[j] / na);
    out.drift_se[j] = std::sqrt(std::max(0.0, var) / na) / gamma;
  }
  out.cov_se.resize(d, d);
  for (Index r = 0; r < d; ++r) {
    for (Index s = 0; s < d; ++s) {
      const double mean = outer_sum(r, s) / na;
      const double var = outer_sq(r, s) / na - mean * mean;
      out.cov_se(r, s) = std::sqrt(std::max(0.0, var) / na) / gamma;
    }
  }

  // Batch B: Metropolis kernel (rejected proposals contribute zero increment).
  sum.setZero();
  sum_sq.setZero();
  outer_sum.setZero();
  outer_sq.setZero();
  for (long i = 0; i < n_samples; ++i) {
    for (Index j = 0; j < d; ++j) w[j] = sg * rng.normal();
    if (!c.contains(x + w)) continue;  // increment is zero: adds nothing to sums
    sum += w;
    sum_sq += w.cwiseProduct(w);
    const Matrix o = w * w.transpose();
    outer_sum += o;
    outer_sq += o.cwiseProduct(o);
  }
  const double nb = double(n_samples);
  out.metropolis_drift = sum / (nb * gamma);
  out.metropolis_cov = outer_sum / (nb * gamma);
  out.metropolis_drift_se.resize(d);
  for (Index j = 0; j < d; ++j) {
    const double var = sum_sq[j] / nb - (sum[j] / nb) * (sum[j] / nb);
    out.metropolis_drift_se[j] = std::sqrt(std::max(0.0, var) / nb) / gamma;
  }
  out.metropolis_cov_se.resize(d, d);
  for (Index r = 0; r < d; ++r) {
    for (Index s = 0; s < d; ++s) {
      const double mean = outer_sum(r, s) / nb;
      const double var = outer_sq(r, s) / nb - mean * mean;
      out.metropolis_cov_se(r, s) = std::sqrt(std::max(0.0, var) / nb) / gamma;
    }
  }
  return out;
}

std::vector<Matrix> run_chain_batch_snapshots(const Manifold& m, const ConstraintSet& c,
                                              const Matrix& starts, SamplerKind kind,
                                              const std::vector<ScheduleStep>& schedule,
                                              const StepConfig& cfg, std::uint64_t seed,
                                              long n_chains, const std::vector<long>& snapshot_steps) {
  if (schedule.empty()) throw ConfigError("run_chain_batch_snapshots: empty schedule");
  if (n_chains < 1) throw ConfigError("run_chain_batch_snapshots: need at least one chain");
  if (starts.rows() != m.storage_size() || starts.cols() < 1) {
    throw ContractViolation("run_chain_batch_snapshots: starts must be storage x k with k >= 1");
  }
  if (snapshot_steps.empty()) throw ConfigError("run_chain_batch_snapshots: no snapshots requested");
  const long n_steps = static_cast<long>(schedule.size());
  for (size_t i = 0; i < snapshot_steps.size(); ++i) {
    if (snapshot_steps[i] < 0 || snapshot_steps[i] > n_steps ||
        (i > 0 && snapshot_steps[i] <= snapshot_steps[i - 1])) {
      throw ConfigError("run_chain_batch_snapshots: snapshot steps must be sorted within [0, steps]");
    }
  }

  std::vector<Matrix> out(snapshot_steps.size());
  for (auto& s : out) s.resize(m.storage_size(), n_chains);

  parallel_for(n_chains, [&](long i) {
    RngStream rng(seed, "chain", static_cast<std::uint64_t>(i));
    Point x = starts.col(i % starts.cols());
    if (!c.contains(x)) {
      throw ContractViolation("run_chain_batch_snapshots: start of chain " + std::to_string(i) +
                              " is not inside the constraint set");
    }
    StepConfig step_cfg = cfg;
    size_t next_snap = 0;
    if (snapshot_steps[0] == 0) {
      out[0].col(i) = x;
      next_snap = 1;
    }
    for (long k = 0; k < n_steps && next_snap < snapshot_steps.size(); ++k) {
      step_cfg.gamma = schedule[k].gamma;
      const double t = schedule[k].t;
      switch (kind) {
        case SamplerKind::kMetropolis:
          x = metropolis_step(m, c, x, step_cfg, t, rng).x;
          break;
        case SamplerKind::kRejection:
          x = rejection_step(m, c, x, step_cfg, t, rng);
          break;
        case SamplerKind::kReflected: {
          Tangent v = std::sqrt(step_cfg.gamma) * tangent_randn(m, x, rng);
          if (step_cfg.drift) v += step_cfg.gamma * step_cfg.drift(t, x);
          x = reflected_step(m, c, x, v, step_cfg);
          break;
        }
      }
      if (k + 1 == snapshot_steps[next_snap]) {
        out[next_snap].col(i) = x;
        ++next_snap;
      }
    }
  });
  return out;
}

Matrix run_chain_batch_finals(const Manifold& m, const ConstraintSet& c, const Matrix& starts,
                              SamplerKind kind, const std::vector<ScheduleStep>& schedule,
                              const StepConfig& cfg, std::uint64_t seed, long n_chains) {
  return run_chain_batch_snapshots(m, c, starts, kind, schedule, cfg, seed, n_chains,
                                   {static_cast<long>(schedule.size())})
      .back();
}

Point uniform_sample(const Manifold& m, const ConstraintSet& c, RngStream& rng, long max_tries) {
  const Index d = m.storage_size();
  if (m.kind() == Manifold::Kind::kSphere) {
    if (d != 3) throw UnsupportedOperation("uniform_sample: only Sphere(3) is supported");
    for (long tries = 1; tries <= max_tries; ++tries) {
      Vector z = rng.normal_vector(3);
      const double len = z.norm();
      if (len < 1e-12) continue;
      z /= len;
      if (c.contains(z)) return z;
    }
    throw StuckChainError("uniform_sample: sphere rejection budget exhausted", max_tries);
  }
  if (!m.is_flat()) {
    throw UnsupportedOperation("uniform_sample: unsupported manifold " + m.describe());
  }
  if (m.kind() == Manifold::Kind::kEuclidean && c.kind() == ConstraintSet::Kind::kSimplex) {
    // Exponential spacings give the area measure of the open simplex directly.
    Vector e(d + 1);
    Vector x(d);
    for (long tries = 1; tries <= max_tries; ++tries) {
      for (Index i = 0; i <= d; ++i) e[i] = -std::log(1.0 - rng.uniform());
      x = e.head(d) / e.sum();
      if (c.contains(x)) return x;  // rejects the measure-zero boundary landings
    }
    throw StuckChainError("uniform_sample: simplex sampling budget exhausted", max_tries);
  }
  if (m.kind() == Manifold::Kind::kTorus && c.kind() == ConstraintSet::Kind::kAll) {
    Vector x(d);
    for (Index i = 0; i < d; ++i) x[i] = rng.uniform(0.0, 2.0 * std::numbers::pi);
    return x;
  }
  Vector lo, hi;
  c.proposal_box(lo, hi);
  Vector x(d);
  for (long tries = 1; tries <= max_tries; ++tries) {
    for (Index i = 0; i < d; ++i) x[i] = rng.uniform(lo[i], hi[i]);
    if (c.contains(x)) return x;
  }
  throw StuckChainError("uniform_sample: box rejection budget exhausted", max_tries);
}

}  // namespace mrbm
