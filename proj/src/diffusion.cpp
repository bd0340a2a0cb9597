#include "mrbm/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <utility>

#include "mrbm/diagnostics.hpp"
#include "mrbm/parallel.hpp"
#include "mrbm/rng.hpp"

namespace mrbm {

void BetaSchedule::validate() const {
  if (!(beta0 > 0.0)) throw ConfigError("BetaSchedule: beta0 must be positive");
  if (!(beta1 >= beta0)) throw ConfigError("BetaSchedule: need beta1 >= beta0");
  if (!(T > 0.0)) throw ConfigError("BetaSchedule: horizon must be positive");
}

TimeGrid::TimeGrid(BetaSchedule schedule, int n_steps) : schedule_(schedule), n_steps_(n_steps) {
  schedule_.validate();
  if (n_steps < 0) throw ConfigError("TimeGrid: step count must be >= 0");
  times_.resize(n_steps + 1);
  gammas_.resize(n_steps);
  accumulated_.resize(n_steps + 1);
  accumulated_[0] = 0.0;
  for (int k = 0; k <= n_steps; ++k) times_[k] = schedule_.T * k / std::max(1, n_steps);
  for (int k = 0; k < n_steps; ++k) {
    gammas_[k] = schedule_.beta(times_[k]) * schedule_.T / n_steps;
    accumulated_[k + 1] = accumulated_[k] + gammas_[k];
  }
}

std::vector<NoisedSample> forward_noise_batch(const Manifold& m, const ConstraintSet& c,
                                              const Matrix& data, const TimeGrid& grid,
                                              int repeats, std::uint64_t seed) {
  if (data.cols() == 0) throw ConfigError("forward_noise_batch: empty data batch");
  if (data.rows() != m.storage_size())
    throw ConfigError("forward_noise_batch: data rows must match manifold storage");
  if (repeats < 1) throw ConfigError("forward_noise_batch: repeats must be >= 1");
  for (Index j = 0; j < data.cols(); ++j) {
    if (!c.contains(data.col(j))) {
      std::ostringstream msg;
      msg << "forward_noise_batch: datum " << j << " lies outside the constraint set";
      throw ContractViolation(msg.str());
    }
  }

  const int n_steps = grid.steps();
  std::vector<std::vector<NoisedSample>> per_datum(static_cast<size_t>(data.cols()));
  parallel_for(data.cols(), [&](long j) {
    RngStream rng(seed, "noise", static_cast<std::uint64_t>(j));
    const long max_k = static_cast<long>(rng.uniform_index(static_cast<std::uint64_t>(n_steps) + 1));

    // Distinct record indices in {0..max_k}, drawn by partial shuffle.
    const long n_rec = std::min<long>(repeats, max_k + 1);
    std::vector<long> idx(static_cast<size_t>(max_k + 1));
    std::iota(idx.begin(), idx.end(), 0L);
    for (long r = 0; r < n_rec; ++r) {
      const long pick = r + static_cast<long>(rng.uniform_index(static_cast<std::uint64_t>(max_k + 1 - r)));
      std::swap(idx[static_cast<size_t>(r)], idx[static_cast<size_t>(pick)]);
    }
    idx.resize(static_cast<size_t>(n_rec));
    std::sort(idx.begin(), idx.end());

    auto& out = per_datum[static_cast<size_t>(j)];
    out.reserve(static_cast<size_t>(n_rec));
    StepConfig scfg;
    Point x = data.col(j);
    size_t next = 0;
    if (next < idx.size() && idx[next] == 0) {
      out.push_back({grid.times()[0], 0, j, x});
      ++next;
    }
    for (long k = 0; k < max_k && next < idx.size(); ++k) {
      scfg.gamma = grid.gammas()[k];
      x = metropolis_step(m, c, x, scfg, grid.times()[k], rng).x;
      if (idx[next] == k + 1) {
        out.push_back({grid.times()[k + 1], k + 1, j, x});
        ++next;
      }
    }
  });

  std::vector<NoisedSample> flat;
  for (auto& v : per_datum) {
    flat.insert(flat.end(), std::make_move_iterator(v.begin()), std::make_move_iterator(v.end()));
  }
  return flat;
}

double score_rescale_factor(const ConstraintSet& c, const Point& x, double eps) {
  if (!(eps > 0.0)) throw ConfigError("score_rescale: eps must be positive");
  return std::min(1.0, c.boundary_distance_lb(x) / eps);
}

Tangent score_rescale(const ConstraintSet& c, const Point& x, const Tangent& raw, double eps) {
  return score_rescale_factor(c, x, eps) * raw;
}

BatchScoreFn batch_score(ScoreFn score) {
  if (!score) throw ConfigError("batch_score: missing score callback");
  return [score = std::move(score)](double t, const Matrix& x) {
    Matrix out(x.rows(), x.cols());
    for (Index j = 0; j < x.cols(); ++j) out.col(j) = score(t, x.col(j));
    return out;
  };
}

Matrix reverse_generate(const Manifold& m, const ConstraintSet& c, const BatchScoreFn& score,
                        const TimeGrid& grid, long n_samples, std::uint64_t seed,
                        const ReverseConfig& cfg) {
  if (!score) throw ConfigError("reverse_generate: missing score callback");
  if (n_samples < 1) throw ConfigError("reverse_generate: need at least one sample");
  if (cfg.block < 1) throw ConfigError("reverse_generate: block must be >= 1");
  if (!(cfg.rescale_eps > 0.0)) throw ConfigError("reverse_generate: rescale_eps must be positive");
  if (c.dim() != m.storage_size())
    throw ConfigError("reverse_generate: constraint dimension must match manifold storage");

  const int d = m.storage_size();
  const int n_steps = grid.steps();
  Matrix out(d, n_samples);

  for (long b0 = 0; b0 < n_samples; b0 += cfg.block) {
    const long nb = std::min(cfg.block, n_samples - b0);
    std::vector<RngStream> streams;
    streams.reserve(static_cast<size_t>(nb));
    for (long i = 0; i < nb; ++i)
      streams.emplace_back(seed, "sample", static_cast<std::uint64_t>(b0 + i));

    Matrix x_blk(d, nb);
    parallel_for(nb, [&](long i) {
      x_blk.col(i) = uniform_sample(m, c, streams[static_cast<size_t>(i)], cfg.max_init_tries);
    });

    Matrix s_blk(d, nb);
    for (int j = 0; j < n_steps; ++j) {
      const int k = n_steps - 1 - j;
      const double gamma = grid.gammas()[k];
      const double sg = std::sqrt(gamma);
      const double t_eval = grid.times()[k + 1];

      auto eval_chunk = [&](long j0, long nj) {
        const Matrix chunk = score(t_eval, x_blk.middleCols(j0, nj));
        if (chunk.rows() != d || chunk.cols() != nj)
          throw ConfigError("reverse_generate: score callback returned a wrong-shaped batch");
        s_blk.middleCols(j0, nj) = chunk;
      };
      if (cfg.parallel_score) {
        const long chunks = std::min<long>(thread_count(), nb);
        const long per = (nb + chunks - 1) / chunks;
        parallel_for(chunks, [&](long ci) {
          const long j0 = ci * per;
          if (j0 < nb) eval_chunk(j0, std::min(per, nb - j0));
        });
      } else {
        eval_chunk(0, nb);
      }

      parallel_for(nb, [&](long i) {
        RngStream& rng = streams[static_cast<size_t>(i)];
        const Point x = x_blk.col(i);
        const double factor =
            cfg.apply_rescale ? score_rescale_factor(c, x, cfg.rescale_eps) : 1.0;
        Tangent v = project_tangent(m, x, s_blk.col(i));
        v *= gamma * factor;
        v += sg * tangent_randn(m, x, rng);
        const Point q = exp_map(m, x, v);
        if (c.contains(q)) x_blk.col(i) = q;
      });
    }
    out.middleCols(b0, nb) = x_blk;
  }
  return out;
}

namespace {

// TV-to-uniform of the forward process at t = T for one candidate beta1.
// Chain substreams are indexed by chain number only, so every candidate sees
// the same noise (common random numbers keep the search deterministic).
double forward_tv_to_uniform(const Manifold& m, const ConstraintSet& c, const Matrix& x0_sample,
                             const TimeGrid& grid, const TuneBeta1Config& cfg,
                             const Vector& lo, const Vector& hi, const Vector* ref_mass,
                             const Matrix* ref_sample) {
  const int d = m.storage_size();
  Matrix finals(d, cfg.n_eval);
  const bool fast = m.kind() == Manifold::Kind::kEuclidean;
  parallel_for(cfg.n_eval, [&](long i) {
    RngStream rng(cfg.seed, "chain", static_cast<std::uint64_t>(i));
    Vector x = x0_sample.col(i % x0_sample.cols());
    if (fast) {
      Vector q(d);
      for (int k = 0; k < grid.steps(); ++k) {
        const double sg = std::sqrt(grid.gammas()[k]);
        for (int r = 0; r < d; ++r) q[r] = x[r] + sg * rng.normal();
        if (c.contains(q)) x.swap(q);
      }
    } else {
      StepConfig scfg;
      for (int k = 0; k < grid.steps(); ++k) {
        scfg.gamma = grid.gammas()[k];
        x = metropolis_step(m, c, x, scfg, grid.times()[k], rng).x;
      }
    }
    finals.col(i) = x;
  });

  if (d == 1) {
    if (ref_mass) {
      const double inv_width = 1.0 / (hi[0] - lo[0]);
      return histogram_tv(finals.row(0).transpose(), [=](double) { return inv_width; },
                          cfg.bins, lo[0], hi[0]);
    }
    return histogram_tv(finals.row(0).transpose(), ref_sample->row(0).transpose(), cfg.bins,
                        lo[0], hi[0]);
  }
  if (ref_mass) return histogram_tv_2d(finals, *ref_mass, cfg.bins, lo, hi);
  return histogram_tv_2d(finals, *ref_sample, cfg.bins, lo, hi);
}

}  // namespace

TuneResult tune_beta1(const Manifold& m, const ConstraintSet& c, const Matrix& x0_sample,
                      double criterion_tv, const TuneBeta1Config& cfg) {
  if (x0_sample.cols() == 0) throw ConfigError("tune_beta1: empty start sample");
  if (x0_sample.rows() != m.storage_size())
    throw ConfigError("tune_beta1: start rows must match manifold storage");
  if (!(criterion_tv > 0.0)) throw ConfigError("tune_beta1: criterion must be positive");
  if (cfg.n_steps < 1 || cfg.n_eval < 1 || cfg.bins < 1 || cfg.bisect_rounds < 0)
    throw ConfigError("tune_beta1: counts must be positive");
  if (!(cfg.beta0 > 0.0) || !(cfg.beta1_cap >= cfg.beta0))
    throw ConfigError("tune_beta1: need 0 < beta0 <= beta1_cap");
  for (Index j = 0; j < x0_sample.cols(); ++j) {
    if (!c.contains(x0_sample.col(j))) {
      std::ostringstream msg;
      msg << "tune_beta1: start " << j << " lies outside the constraint set";
      throw ContractViolation(msg.str());
    }
  }

  Vector lo, hi;
  c.proposal_box(lo, hi);
  const bool analytic = c.kind() == ConstraintSet::Kind::kHypercube &&
                        m.kind() == Manifold::Kind::kEuclidean;
  Vector ref_mass;
  Matrix ref_sample;
  if (analytic) {
    const Index cells = m.storage_size() >= 2 ? static_cast<Index>(cfg.bins) * cfg.bins : cfg.bins;
    ref_mass = Vector::Constant(cells, 1.0 / static_cast<double>(cells));
  } else {
    RngStream ref_rng(cfg.seed, "reference", 0);
    ref_sample.resize(m.storage_size(), cfg.n_reference);
    for (long j = 0; j < cfg.n_reference; ++j) ref_sample.col(j) = uniform_sample(m, c, ref_rng);
  }

  auto eval = [&](double beta1) {
    const TimeGrid grid({cfg.beta0, beta1, 1.0}, cfg.n_steps);
    return forward_tv_to_uniform(m, c, x0_sample, grid, cfg, lo, hi,
                                 analytic ? &ref_mass : nullptr,
                                 analytic ? nullptr : &ref_sample);
  };

  double tv = eval(cfg.beta0);
  if (tv < criterion_tv) return {cfg.beta0, tv};

  double fail = cfg.beta0;
  double pass = 2.0 * cfg.beta0;
  while (true) {
    if (pass > cfg.beta1_cap) {
      std::ostringstream msg;
      msg << "tune_beta1: TV criterion " << criterion_tv << " not reached below beta1 cap "
          << cfg.beta1_cap;
      throw NumericalError(msg.str());
    }
    tv = eval(pass);
    if (tv < criterion_tv) break;
    fail = pass;
    pass *= 2.0;
  }
  for (int r = 0; r < cfg.bisect_rounds; ++r) {
    const double mid = 0.5 * (fail + pass);
    const double mid_tv = eval(mid);
    if (mid_tv < criterion_tv) {
      pass = mid;
      tv = mid_tv;
    } else {
      fail = mid;
    }
  }
  return {pass, tv};
}

}  // namespace mrbm
