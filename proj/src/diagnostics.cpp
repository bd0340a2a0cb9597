#include "mrbm/diagnostics.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>

#include "mrbm/parallel.hpp"
#include "mrbm/rng.hpp"

namespace mrbm {

namespace {

double gauss_pdf(double u, double var) {
  return std::exp(-u * u / (2.0 * var)) / std::sqrt(2.0 * std::numbers::pi * var);
}

int clamp_bin(double x, double lo, double hi, int bins) {
  const int b = static_cast<int>(std::floor((x - lo) / (hi - lo) * bins));
  return std::clamp(b, 0, bins - 1);
}

void check_hist_args(const char* who, int bins, double lo, double hi) {
  if (bins < 1) throw ConfigError(std::string(who) + ": bins must be >= 1");
  if (!(hi > lo)) throw ConfigError(std::string(who) + ": need hi > lo");
}

Vector histogram_mass_1d(const Vector& a, int bins, double lo, double hi) {
  Vector mass = Vector::Zero(bins);
  for (Index i = 0; i < a.size(); ++i) mass[clamp_bin(a[i], lo, hi, bins)] += 1.0;
  mass /= static_cast<double>(a.size());
  return mass;
}

// Row-major cells over the first two rows of a: cell = b0 * bins + b1.
Vector histogram_mass_2d(const Matrix& a, int bins, const Vector& lo, const Vector& hi) {
  Vector mass = Vector::Zero(static_cast<Index>(bins) * bins);
  for (Index j = 0; j < a.cols(); ++j) {
    const int b0 = clamp_bin(a(0, j), lo[0], hi[0], bins);
    const int b1 = clamp_bin(a(1, j), lo[1], hi[1], bins);
    mass[static_cast<Index>(b0) * bins + b1] += 1.0;
  }
  mass /= static_cast<double>(a.cols());
  return mass;
}

double tv_from_mass(const Vector& p, const Vector& q) { return 0.5 * (p - q).cwiseAbs().sum(); }

void check_kernel(const MmdKernel& kernel) {
  if (kernel.lengthscales.empty() || kernel.lengthscales.size() != kernel.weights.size())
    throw ConfigError("mmd: kernel needs matching, nonempty lengthscales and weights");
  for (double l : kernel.lengthscales)
    if (!(l > 0.0)) throw ConfigError("mmd: kernel lengthscales must be positive");
  for (double w : kernel.weights)
    if (!(w > 0.0)) throw ConfigError("mmd: kernel weights must be positive");
}

constexpr Index kMmdTile = 512;

// Sum of kernel values over the (rows = columns of x in [i0, i0+ni)) x
// (cols = columns of y in [j0, j0+nj)) block, via the squared-distance
// expansion |x|^2 + |y|^2 - 2 x.y so the inner work is one GEMM per tile.
double kernel_tile_sum(const Matrix& x, const Matrix& y, const Vector& xsq, const Vector& ysq,
                       Index i0, Index ni, Index j0, Index nj, const MmdKernel& kernel) {
  Matrix d2 = -2.0 * (x.middleCols(i0, ni).transpose() * y.middleCols(j0, nj));
  d2.colwise() += xsq.segment(i0, ni);
  d2.rowwise() += ysq.segment(j0, nj).transpose();
  d2 = d2.cwiseMax(0.0);  // guards tiny negative round-off
  double s = 0.0;
  for (size_t l = 0; l < kernel.lengthscales.size(); ++l) {
    const double inv = -0.5 / (kernel.lengthscales[l] * kernel.lengthscales[l]);
    s += kernel.weights[l] * (d2.array() * inv).exp().sum();
  }
  return s;
}

// Sum over all ordered pairs (i, j), including the diagonal when x and y are
// the same set; callers subtract the diagonal for U-statistics.
double kernel_full_sum(const Matrix& x, const Matrix& y, const MmdKernel& kernel) {
  const Vector xsq = x.colwise().squaredNorm().transpose();
  const Vector ysq = y.colwise().squaredNorm().transpose();
  double s = 0.0;
  for (Index i0 = 0; i0 < x.cols(); i0 += kMmdTile) {
    const Index ni = std::min(kMmdTile, x.cols() - i0);
    for (Index j0 = 0; j0 < y.cols(); j0 += kMmdTile) {
      const Index nj = std::min(kMmdTile, y.cols() - j0);
      s += kernel_tile_sum(x, y, xsq, ysq, i0, ni, j0, nj, kernel);
    }
  }
  return s;
}

double mmd_sq_raw(const Matrix& a, const Matrix& b, const MmdKernel& kernel) {
  const double m = static_cast<double>(a.cols());
  const double n = static_cast<double>(b.cols());
  double wsum = 0.0;
  for (double w : kernel.weights) wsum += w;  // k(x, x) for this kernel family
  const double saa = kernel_full_sum(a, a, kernel) - m * wsum;
  const double sbb = kernel_full_sum(b, b, kernel) - n * wsum;
  const double sab = kernel_full_sum(a, b, kernel);
  return saa / (m * (m - 1.0)) + sbb / (n * (n - 1.0)) - 2.0 * sab / (m * n);
}

double sorted_quantile(const std::vector<double>& sorted, double q) {
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const size_t lo = static_cast<size_t>(std::floor(pos));
  const size_t hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] * (1.0 - frac) + sorted[hi] * frac;
}

}  // namespace

double rbm_density_1d(double x, double t, double x0, double tol) {
  if (!(t > 0.0)) throw ContractViolation("rbm_density_1d: t must be positive");
  if (x < 0.0 || x > 1.0 || x0 < 0.0 || x0 > 1.0)
    throw ContractViolation("rbm_density_1d: x and x0 must lie in [0, 1]");
  if (!(tol > 0.0)) throw ContractViolation("rbm_density_1d: tol must be positive");
  // Method of images for the Neumann heat kernel on [0, 1]: charges at
  // +-x0 + 2k.  Shells in k are added symmetrically until negligible.
  double sum = gauss_pdf(x - x0, t) + gauss_pdf(x + x0, t);
  for (int k = 1; k < 1000000; ++k) {
    const double shift = 2.0 * static_cast<double>(k);
    const double shell = gauss_pdf(x - x0 + shift, t) + gauss_pdf(x - x0 - shift, t) +
                         gauss_pdf(x + x0 + shift, t) + gauss_pdf(x + x0 - shift, t);
    sum += shell;
    if (shell < tol * sum) break;
  }
  return sum;
}

double histogram_tv(const Vector& a, const Vector& b, int bins, double lo, double hi) {
  check_hist_args("histogram_tv", bins, lo, hi);
  if (a.size() == 0 || b.size() == 0) throw ConfigError("histogram_tv: empty sample set");
  return tv_from_mass(histogram_mass_1d(a, bins, lo, hi), histogram_mass_1d(b, bins, lo, hi));
}

double histogram_tv(const Vector& a, const std::function<double(double)>& density, int bins,
                    double lo, double hi) {
  check_hist_args("histogram_tv", bins, lo, hi);
  if (a.size() == 0) throw ConfigError("histogram_tv: empty sample set");
  if (!density) throw ConfigError("histogram_tv: missing density");
  const Vector pa = histogram_mass_1d(a, bins, lo, hi);
  Vector pb(bins);
  const double w = (hi - lo) / bins;
  constexpr int kSub = 32;
  for (int i = 0; i < bins; ++i) {
    double acc = 0.0;
    for (int s = 0; s < kSub; ++s) {
      acc += density(lo + w * (i + (s + 0.5) / kSub));
    }
    pb[i] = acc * w / kSub;
  }
  return tv_from_mass(pa, pb);
}

double histogram_tv_2d(const Matrix& a, const Matrix& b, int bins, const Vector& lo, const Vector& hi) {
  if (lo.size() < 2 || hi.size() < 2) throw ConfigError("histogram_tv_2d: need 2-d bounds");
  check_hist_args("histogram_tv_2d", bins, lo[0], hi[0]);
  check_hist_args("histogram_tv_2d", bins, lo[1], hi[1]);
  if (a.rows() < 2 || b.rows() < 2) throw ConfigError("histogram_tv_2d: need >= 2 coordinate rows");
  if (a.cols() == 0 || b.cols() == 0) throw ConfigError("histogram_tv_2d: empty sample set");
  return tv_from_mass(histogram_mass_2d(a, bins, lo, hi), histogram_mass_2d(b, bins, lo, hi));
}

double histogram_tv_2d(const Matrix& a, const Vector& ref_mass, int bins, const Vector& lo, const Vector& hi) {
  if (lo.size() < 2 || hi.size() < 2) throw ConfigError("histogram_tv_2d: need 2-d bounds");
  check_hist_args("histogram_tv_2d", bins, lo[0], hi[0]);
  check_hist_args("histogram_tv_2d", bins, lo[1], hi[1]);
  if (a.rows() < 2) throw ConfigError("histogram_tv_2d: need >= 2 coordinate rows");
  if (a.cols() == 0) throw ConfigError("histogram_tv_2d: empty sample set");
  if (ref_mass.size() != static_cast<Index>(bins) * bins)
    throw ConfigError("histogram_tv_2d: reference mass size must be bins^2");
  if (std::abs(ref_mass.sum() - 1.0) > 1e-12)
    throw ConfigError("histogram_tv_2d: reference masses must sum to 1");
  return tv_from_mass(histogram_mass_2d(a, bins, lo, hi), ref_mass);
}

MmdResult mmd(const Matrix& a, const Matrix& b, const MmdKernel& kernel) {
  check_kernel(kernel);
  if (a.rows() != b.rows()) throw ConfigError("mmd: sample sets must share the coordinate dimension");
  if (a.cols() < 2 || b.cols() < 2) throw ConfigError("mmd: need at least 2 samples per set");
  MmdResult out;
  out.mmd_sq_raw = mmd_sq_raw(a, b, kernel);
  out.mmd = std::sqrt(std::max(0.0, out.mmd_sq_raw));
  return out;
}

MmdCi mmd_bootstrap_ci(const Matrix& a, const Matrix& b, const MmdKernel& kernel,
                       int resamples, int subsample_cap, std::uint64_t seed) {
  check_kernel(kernel);
  if (a.rows() != b.rows()) throw ConfigError("mmd_bootstrap_ci: dimension mismatch");
  if (resamples < 2) throw ConfigError("mmd_bootstrap_ci: need >= 2 resamples");
  if (subsample_cap < 2) throw ConfigError("mmd_bootstrap_ci: subsample cap must be >= 2");
  if (a.cols() < 2 || b.cols() < 2) throw ConfigError("mmd_bootstrap_ci: need at least 2 samples per set");
  const Index na = std::min<Index>(subsample_cap, a.cols());
  const Index nb = std::min<Index>(subsample_cap, b.cols());
  std::vector<double> stats(static_cast<size_t>(resamples));
  parallel_for(resamples, [&](long r) {
    RngStream rng(seed, "mmd_boot", static_cast<std::uint64_t>(r));
    Matrix ra(a.rows(), na), rb(b.rows(), nb);
    for (Index j = 0; j < na; ++j) ra.col(j) = a.col(static_cast<Index>(rng.uniform_index(a.cols())));
    for (Index j = 0; j < nb; ++j) rb.col(j) = b.col(static_cast<Index>(rng.uniform_index(b.cols())));
    stats[static_cast<size_t>(r)] = std::sqrt(std::max(0.0, mmd_sq_raw(ra, rb, kernel)));
  });
  std::sort(stats.begin(), stats.end());
  MmdCi ci;
  ci.lo = sorted_quantile(stats, 0.025);
  ci.hi = sorted_quantile(stats, 0.975);
  ci.resamples = resamples;
  ci.subsample = static_cast<int>(std::max(na, nb));
  return ci;
}

ConvergenceResult convergence_time(const Manifold& m, const ConstraintSet& c, const Matrix& starts,
                                   SamplerKind kind, const ConvergenceConfig& cfg) {
  if (c.dim() != m.storage_size())
    throw ConfigError("convergence_time: constraint dimension must match manifold storage");
  if (starts.rows() != m.storage_size() || starts.cols() < 1)
    throw ConfigError("convergence_time: starts must be storage x k with k >= 1");
  for (Index j = 0; j < starts.cols(); ++j) {
    if (!c.contains(starts.col(j)))
      throw ContractViolation("convergence_time: every start must lie inside the set");
  }
  if (cfg.n_chains < 1 || cfg.check_every < 1 || cfg.bins < 1 || cfg.n_reference < 1)
    throw ConfigError("convergence_time: counts must be positive");
  if (!(cfg.gamma > 0.0)) throw ConfigError("convergence_time: gamma must be positive");
  if (!(cfg.tv_threshold > 0.0)) throw ConfigError("convergence_time: tv threshold must be positive");

  const int d = m.storage_size();
  const bool two_d = d >= 2;
  const Index cells = two_d ? static_cast<Index>(cfg.bins) * cfg.bins : cfg.bins;

  Vector lo, hi;
  c.proposal_box(lo, hi);  // histogram bounds over the first coordinates

  // Uniform reference masses: exact for a box target, sampled otherwise.
  Vector ref_mass;
  if (c.kind() == ConstraintSet::Kind::kHypercube && m.kind() == Manifold::Kind::kEuclidean) {
    ref_mass = Vector::Constant(cells, 1.0 / static_cast<double>(cells));
  } else {
    RngStream ref_rng(cfg.seed, "reference", 0);
    Matrix refs(d, cfg.n_reference);
    for (long j = 0; j < cfg.n_reference; ++j) refs.col(j) = uniform_sample(m, c, ref_rng);
    ref_mass = two_d ? histogram_mass_2d(refs, cfg.bins, lo, hi)
                     : histogram_mass_1d(refs.row(0).transpose(), cfg.bins, lo[0], hi[0]);
  }

  Matrix states(d, cfg.n_chains);
  for (long i = 0; i < cfg.n_chains; ++i) states.col(i) = starts.col(i % starts.cols());
  std::vector<RngStream> streams;
  streams.reserve(static_cast<size_t>(cfg.n_chains));
  for (long i = 0; i < cfg.n_chains; ++i) streams.emplace_back(cfg.seed, "chain", static_cast<std::uint64_t>(i));

  StepConfig scfg;
  scfg.gamma = cfg.gamma;
  scfg.generic_intersection = cfg.generic_intersection;
  const double sg = std::sqrt(cfg.gamma);
  const bool fast_metropolis = kind == SamplerKind::kMetropolis && m.kind() == Manifold::Kind::kEuclidean;

  ConvergenceResult out;
  double seconds = 0.0;
  long steps_done = 0;
  while (true) {
    // TV is evaluated before stepping so already-mixed starts report zero steps.
    const double tv =
        two_d ? tv_from_mass(histogram_mass_2d(states, cfg.bins, lo, hi), ref_mass)
              : tv_from_mass(histogram_mass_1d(states.row(0).transpose(), cfg.bins, lo[0], hi[0]), ref_mass);
    if (tv < cfg.tv_threshold) {
      out.steps = steps_done;
      out.sampler_seconds = seconds;
      out.tv = tv;
      return out;
    }
    if (steps_done >= cfg.max_steps) {
      std::ostringstream msg;
      msg << "convergence_time: TV " << tv << " still above " << cfg.tv_threshold << " after "
          << steps_done << " steps";
      throw NumericalError(msg.str());
    }

    const long seg = std::min<long>(cfg.check_every, cfg.max_steps - steps_done);
    const auto t0 = std::chrono::steady_clock::now();
    parallel_for(cfg.n_chains, [&](long i) {
      RngStream& rng = streams[static_cast<size_t>(i)];
      Vector x = states.col(i);
      if (fast_metropolis) {
        Vector q(d);
        for (long s = 0; s < seg; ++s) {
          for (int r = 0; r < d; ++r) q[r] = x[r] + sg * rng.normal();
          if (c.contains(q)) x.swap(q);
        }
      } else if (kind == SamplerKind::kMetropolis) {
        for (long s = 0; s < seg; ++s) x = metropolis_step(m, c, x, scfg, 0.0, rng).x;
      } else if (kind == SamplerKind::kRejection) {
        for (long s = 0; s < seg; ++s) x = rejection_step(m, c, x, scfg, 0.0, rng);
      } else {
        Vector v(d);
        for (long s = 0; s < seg; ++s) {
          rng.fill_normal(v);
          v *= sg;
          x = reflected_step(m, c, x, v, scfg);
        }
      }
      states.col(i) = x;
    });
    seconds += std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    steps_done += seg;
  }
}

PowerLawFit fit_power_law(const Vector& sizes, const Vector& values) {
  if (sizes.size() != values.size()) throw ConfigError("fit_power_law: size mismatch");
  if (sizes.size() < 3) throw ConfigError("fit_power_law: need at least 3 points");
  const Index n = sizes.size();
  Vector lx(n), ly(n);
  for (Index i = 0; i < n; ++i) {
    if (!(sizes[i] > 0.0) || !(values[i] > 0.0))
      throw ConfigError("fit_power_law: sizes and values must be positive");
    lx[i] = std::log(sizes[i]);
    ly[i] = std::log(values[i]);
  }
  const double mx = lx.mean();
  const double my = ly.mean();
  const double sxx = (lx.array() - mx).square().sum();
  if (sxx <= 0.0) throw ConfigError("fit_power_law: sizes must not be all equal");
  const double sxy = ((lx.array() - mx) * (ly.array() - my)).sum();
  PowerLawFit fit;
  fit.exponent = sxy / sxx;
  fit.log_coeff = my - fit.exponent * mx;
  const double ss_res = (ly.array() - fit.log_coeff - fit.exponent * lx.array()).square().sum();
  const double ss_tot = (ly.array() - my).square().sum();
  fit.r_squared = ss_tot > 0.0 ? 1.0 - ss_res / ss_tot : 1.0;
  return fit;
}

}  // namespace mrbm
