#include "distillbound/augment.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "distillbound/error.hpp"
#include "distillbound/rng.hpp"

namespace distillbound {
namespace {

constexpr double kPi = 3.14159265358979323846;

void check_alpha(double alpha) {
  if (!(alpha > 0.0) || alpha > 1.0)
    throw ConfigError("augmentation: alpha must lie in (0, 1]");
}

void check_anchors(const DenseMatrix& anchors) {
  for (std::size_t i = 0; i < anchors.rows(); ++i)
    for (std::size_t j = 0; j < anchors.cols(); ++j) {
      const double v = anchors(i, j);
      if (v < 0.0 || v > 1.0)
        throw ConfigError("augmentation: anchors must lie in the unit cube");
    }
}

// One-axis density for the product families.
double axis_density(const HolderDensity& p, double t) {
  switch (p.family) {
    case HolderFamily::uniform:
      return 1.0;
    case HolderFamily::cosine_bump:
      return 1.0 + p.amplitude * std::cos(2.0 * kPi * t);
    case HolderFamily::tent:
      return 2.0 - std::abs(4.0 * t - 2.0);
  }
  return 0.0;
}

// One-axis inverse CDF.
double axis_inverse_cdf(const HolderDensity& p, double u) {
  switch (p.family) {
    case HolderFamily::uniform:
      return u;
    case HolderFamily::cosine_bump: {
      // F(t) = t + a sin(2 pi t) / (2 pi), strictly increasing for a < 1.
      double lo = 0.0, hi = 1.0;
      for (int it = 0; it < 60; ++it) {
        const double mid = 0.5 * (lo + hi);
        const double f = mid + p.amplitude * std::sin(2.0 * kPi * mid) / (2.0 * kPi);
        (f < u ? lo : hi) = mid;
      }
      return 0.5 * (lo + hi);
    }
    case HolderFamily::tent:
      return u <= 0.5 ? std::sqrt(u / 2.0) : 1.0 - std::sqrt((1.0 - u) / 2.0);
  }
  return u;
}

// Midpoint-rule integral of the density over the cube; construction-time
// normalization check for d <= 3.
void check_normalization(const HolderDensity& p) {
  if (p.dim > 3) return;
  const std::size_t res = p.dim == 1 ? 4096 : (p.dim == 2 ? 256 : 64);
  const double cell = 1.0 / static_cast<double>(res);
  std::vector<std::size_t> idx(p.dim, 0);
  std::vector<double> z(p.dim, 0.0);
  double total = 0.0;
  while (true) {
    for (std::size_t a = 0; a < p.dim; ++a) z[a] = (static_cast<double>(idx[a]) + 0.5) * cell;
    total += p(z);
    std::size_t a = 0;
    while (a < p.dim && ++idx[a] == res) idx[a++] = 0;
    if (a == p.dim) break;
  }
  total *= std::pow(cell, static_cast<double>(p.dim));
  if (std::abs(total - 1.0) > 1e-3) {
    std::ostringstream msg;
    msg << "holder density integrates to " << total << " instead of 1";
    throw NumericalError(msg.str());
  }
}

}  // namespace

AugmentationSampler make_sampler(const DenseMatrix& anchors, double alpha) {
  check_alpha(alpha);
  if (anchors.rows() == 0) throw ConfigError("augmentation: need at least one anchor");
  check_anchors(anchors);
  AugmentationSampler s;
  s.anchors = anchors;
  s.alpha = alpha;
  s.dim = anchors.cols();
  const double n = static_cast<double>(anchors.rows());
  s.sigma = std::pow(n, -1.0 / (2.0 * alpha + static_cast<double>(s.dim)));
  return s;
}

AugmentationSampler make_sampler_with_sigma(const DenseMatrix& anchors, double alpha,
                                            double sigma) {
  check_alpha(alpha);
  if (anchors.rows() == 0) throw ConfigError("augmentation: need at least one anchor");
  if (!(sigma > 0.0)) throw ConfigError("augmentation: sigma must be positive");
  check_anchors(anchors);
  AugmentationSampler s;
  s.anchors = anchors;
  s.alpha = alpha;
  s.sigma = sigma;
  s.dim = anchors.cols();
  return s;
}

AugmentationSampler make_uniform_sampler(std::size_t dim) {
  if (dim == 0) throw ConfigError("augmentation: dimension must be positive");
  AugmentationSampler s;
  s.dim = dim;
  return s;
}

AugmentedSample sample_augmented(const AugmentationSampler& s, std::size_t m,
                                 std::uint64_t seed) {
  if (m < 1) throw ConfigError("sample_augmented: need at least one sample");
  AugmentedSample out;
  out.points = DenseMatrix(m, s.dim);
  out.from_uniform.assign(m, true);
  out.anchor_index.assign(m, 0);
  out.pure_uniform = s.anchor_count() == 0;

  auto eng = make_engine(derive_seed(seed, "augment"));
  for (std::size_t i = 0; i < m; ++i) {
    const bool uniform_branch = out.pure_uniform || canonical_unit(eng) < s.beta;
    if (uniform_branch) {
      for (std::size_t j = 0; j < s.dim; ++j) out.points(i, j) = canonical_unit(eng);
    } else {
      const auto pick = static_cast<std::size_t>(canonical_unit(eng) *
                                                 static_cast<double>(s.anchor_count()));
      const std::size_t anchor = std::min(pick, s.anchor_count() - 1);
      out.from_uniform[i] = false;
      out.anchor_index[i] = anchor;
      for (std::size_t j = 0; j < s.dim; ++j)
        out.points(i, j) = s.anchors(anchor, j) + s.sigma * standard_normal(eng);
    }
  }
  return out;
}

double density_nu(const AugmentationSampler& s, const std::vector<double>& z) {
  if (z.size() != s.dim) throw ConfigError("density_nu: point has the wrong dimension");
  bool in_cube = true;
  for (double v : z)
    if (v < 0.0 || v > 1.0) in_cube = false;
  double value = in_cube ? s.beta : 0.0;

  const std::size_t n = s.anchor_count();
  if (n == 0) return value;

  const double d = static_cast<double>(s.dim);
  const double log_norm = -d * std::log(s.sigma * std::sqrt(2.0 * kPi));
  double max_log = -std::numeric_limits<double>::infinity();
  std::vector<double> logs(n);
  for (std::size_t i = 0; i < n; ++i) {
    double sq = 0.0;
    for (std::size_t j = 0; j < s.dim; ++j) {
      const double diff = z[j] - s.anchors(i, j);
      sq += diff * diff;
    }
    logs[i] = log_norm - sq / (2.0 * s.sigma * s.sigma);
    max_log = std::max(max_log, logs[i]);
  }
  if (std::isfinite(max_log)) {
    double acc = 0.0;
    for (double l : logs) acc += std::exp(l - max_log);
    const double log_kde = max_log + std::log(acc) - std::log(static_cast<double>(n));
    value += (1.0 - s.beta) * std::exp(log_kde);
  }
  return value;
}

double HolderDensity::operator()(const std::vector<double>& z) const {
  if (z.size() != dim) throw ConfigError("holder density: point has the wrong dimension");
  double value = 1.0;
  for (double t : z) {
    if (t < 0.0 || t > 1.0) return 0.0;
    value *= axis_density(*this, t);
  }
  return value;
}

DenseMatrix HolderDensity::sample(std::size_t n, std::uint64_t seed) const {
  DenseMatrix out(n, dim);
  auto eng = make_engine(derive_seed(seed, "holder"));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < dim; ++j)
      out(i, j) = axis_inverse_cdf(*this, canonical_unit(eng));
  return out;
}

HolderDensity make_uniform_density(std::size_t dim) {
  if (dim == 0) throw ConfigError("holder density: dimension must be positive");
  HolderDensity p;
  p.family = HolderFamily::uniform;
  p.dim = dim;
  p.holder_const = 0.0;
  check_normalization(p);
  return p;
}

HolderDensity make_cosine_bump_density(std::size_t dim, double amplitude) {
  if (dim == 0) throw ConfigError("holder density: dimension must be positive");
  if (amplitude < 0.0 || amplitude >= 1.0)
    throw ConfigError("holder density: cosine amplitude must lie in [0, 1)");
  HolderDensity p;
  p.family = HolderFamily::cosine_bump;
  p.dim = dim;
  p.amplitude = amplitude;
  // Per-axis slope 2 pi a, other axes bounded by 1 + a.
  p.holder_const = 2.0 * kPi * amplitude * static_cast<double>(dim) *
                   std::pow(1.0 + amplitude, static_cast<double>(dim - 1));
  check_normalization(p);
  return p;
}

HolderDensity make_tent_density(std::size_t dim) {
  if (dim == 0) throw ConfigError("holder density: dimension must be positive");
  HolderDensity p;
  p.family = HolderFamily::tent;
  p.dim = dim;
  p.holder_const = 4.0 * static_cast<double>(dim) * std::pow(2.0, static_cast<double>(dim - 1));
  check_normalization(p);
  return p;
}

double density_ratio_sup(const HolderDensity& p, const AugmentationSampler& s,
                         std::size_t grid_resolution) {
  if (p.dim != s.dim) throw ConfigError("density_ratio_sup: dimension mismatch");
  if (p.dim > 3) throw ConfigError("density_ratio_sup: grids above d=3 are not supported");
  if (grid_resolution < 8)
    throw ConfigError("density_ratio_sup: need at least 8 grid points per axis");

  const double cell = 1.0 / static_cast<double>(grid_resolution);
  std::vector<std::size_t> idx(p.dim, 0);
  std::vector<double> z(p.dim, 0.0);
  double sup = 0.0;
  while (true) {
    for (std::size_t a = 0; a < p.dim; ++a) z[a] = (static_cast<double>(idx[a]) + 0.5) * cell;
    const double denom = density_nu(s, z);
    if (denom > 0.0) sup = std::max(sup, p(z) / denom);
    std::size_t a = 0;
    while (a < p.dim && ++idx[a] == grid_resolution) idx[a++] = 0;
    if (a == p.dim) break;
  }
  return sup;
}

double ratio_bound_formula(std::size_t n, double alpha, std::size_t d, double c) {
  if (n < 2) throw ConfigError("ratio_bound_formula: n must be at least 2");
  check_alpha(alpha);
  if (d == 0) throw ConfigError("ratio_bound_formula: dimension must be positive");
  if (c < 0.0) throw ConfigError("ratio_bound_formula: constant must be nonnegative");
  const double nn = static_cast<double>(n);
  const double expo = alpha / (2.0 * alpha + static_cast<double>(d));
  return 4.0 + c * std::sqrt(std::log(nn)) / std::pow(nn, expo);
}

}  // namespace distillbound
