#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "distillbound/matrix.hpp"

namespace distillbound {

// Half-uniform, half-KDE smoothing measure around a set of anchor points in
// the unit cube. The Gaussian branch is NOT truncated to the cube, so the
// measure carries mass outside [0,1]^d; density tests account for that.
struct AugmentationSampler {
  DenseMatrix anchors;  // n x d, all entries in [0,1]
  double alpha = 1.0;   // smoothness exponent in (0,1]
  double sigma = 0.0;   // Gaussian bandwidth
  double beta = 0.5;    // uniform-branch weight
  std::size_t dim = 0;

  std::size_t anchor_count() const { return anchors.rows(); }
};

// Bandwidth sigma = n^{-1/(2 alpha + d)} from the anchor count.
AugmentationSampler make_sampler(const DenseMatrix& anchors, double alpha);
// Explicit bandwidth, for limit studies.
AugmentationSampler make_sampler_with_sigma(const DenseMatrix& anchors, double alpha,
                                            double sigma);
// No anchors at all: sampling degenerates to the uniform branch.
AugmentationSampler make_uniform_sampler(std::size_t dim);

struct AugmentedSample {
  DenseMatrix points;                     // m x d
  std::vector<bool> from_uniform;         // branch taken per point
  std::vector<std::size_t> anchor_index;  // meaningful where from_uniform is false
  bool pure_uniform = false;              // sampler had no anchors
};

AugmentedSample sample_augmented(const AugmentationSampler& s, std::size_t m, std::uint64_t seed);

// beta * 1[z in cube] + (1 - beta) * mean_i N(z; anchor_i, sigma^2 I),
// KDE evaluated in log space so tiny bandwidths cannot underflow to an error.
double density_nu(const AugmentationSampler& s, const std::vector<double>& z);

// Smooth product-form densities on the unit cube used to exercise the
// density-ratio machinery. All three families have exponent 1; the constant
// is a (crude, valid) Lipschitz bound on the cube.
enum class HolderFamily { uniform, cosine_bump, tent };

struct HolderDensity {
  HolderFamily family = HolderFamily::uniform;
  std::size_t dim = 1;
  double alpha = 1.0;
  double holder_const = 0.0;
  double amplitude = 0.0;  // cosine family parameter in [0, 1)

  double operator()(const std::vector<double>& z) const;
  // n iid points via per-axis inverse CDF.
  DenseMatrix sample(std::size_t n, std::uint64_t seed) const;
};

// Constructors check numerically (d <= 3) that the density integrates to 1
// over the cube within 1e-3.
HolderDensity make_uniform_density(std::size_t dim);
HolderDensity make_cosine_bump_density(std::size_t dim, double amplitude);
HolderDensity make_tent_density(std::size_t dim);

// max over a regular midpoint grid of p(z) / density_nu(s, z). Requires
// d <= 3 and at least 8 points per axis.
double density_ratio_sup(const HolderDensity& p, const AugmentationSampler& s,
                         std::size_t grid_resolution);

// 4 + C sqrt(ln n) / n^{alpha/(2 alpha + d)}.
double ratio_bound_formula(std::size_t n, double alpha, std::size_t d, double c);

}  // namespace distillbound
