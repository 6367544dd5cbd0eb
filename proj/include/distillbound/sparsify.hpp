#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "distillbound/compgraph.hpp"
#include "distillbound/matrix.hpp"

namespace distillbound {

// Diagonal column-sampling matrix M = sum_j Z_j e_{i_j} e_{i_j}^T / ||a_{i_j}||.
// One entry per draw; repeated indices accumulate, so at most draw_count()
// distinct diagonal entries are nonzero.
struct SamplingMatrix {
  std::size_t dim = 0;                 // source column count
  std::vector<std::size_t> indices;    // drawn column per draw
  std::vector<double> weights;         // Z value per draw
  std::vector<double> diag_coeffs;     // Z / ||a_{i_j}||, the diagonal increment

  std::size_t draw_count() const { return indices.size(); }
  // Accumulated diagonal, length dim.
  std::vector<double> diagonal() const;
  DenseMatrix to_dense() const;
};

std::string sampling_to_json(const SamplingMatrix& m);
SamplingMatrix sampling_from_json(const std::string& text);

struct MaureyResult {
  SamplingMatrix sampling;
  double achieved_error = 0.0;  // ||AB^T - AMB^T||_F
  double error_bound = 0.0;     // bound the retry loop enforced
  double max_weight = 0.0;      // largest stored Z
  double tail_error = 0.0;      // bounded variant: ||(A - A_tau)B^T||_F
  std::size_t draws_used = 0;
  int doublings = 0;
};

// Column sampling for the product AB^T. A is d x m, B is n x m; k columns are
// drawn by squared-norm importance. Best of `draws` candidates; the draw count
// doubles (up to three times) until the best error is within
// ||A||_F ||B||_F / sqrt(k), after which NumericalError is thrown.
// A zero A yields an empty sampling with error ||AB^T||_F = 0.
MaureyResult maurey_product(const DenseMatrix& a, const DenseMatrix& b, std::size_t k,
                            std::uint64_t seed, std::size_t draws = 32);

// Same sampler applied after zeroing columns with norm below
// tau = ||A||_F / sqrt(mk). The dropped tail costs at most tau sqrt(m) ||B||_F,
// the enforced total is 2 ||A||_F ||B||_F / sqrt(k), and every stored weight
// obeys Z <= ||A||_F sqrt(m/k).
MaureyResult maurey_product_bounded(const DenseMatrix& a, const DenseMatrix& b, std::size_t k,
                                    std::uint64_t seed, std::size_t draws = 32);

struct SparseEntry {
  std::size_t row = 0;
  std::size_t col = 0;
  double value = 0.0;
};

// Sum of scaled one-entry matrices; the cover elements for trainable layers.
struct SparseOuterSum {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<SparseEntry> entries;  // distinct positions, coefficients accumulated

  DenseMatrix to_dense() const;
};

struct CoverResult {
  SparseOuterSum w_hat;
  double achieved_error = 0.0;   // ||WX^T - What X^T||_F
  double error_bound = 0.0;      // r ||X||_F / sqrt(k)
  double log_cardinality = 0.0;  // k ln(2 rows(W) cols(W))
  std::size_t draws_used = 0;
  int doublings = 0;
};

// Samples a k-term cover element for WX^T with entry probabilities
// |W_ij| ||X e_j|| / (r ||X||_F), padded to a probability vector by a
// cancelling +/- pair on the first usable position. Requires
// norm21_of_transpose(W) <= r. The total entry mass can exceed 1 only when the
// (2,1) mass of W is spread against X in a way the column-norm orientation
// cannot absorb; that case aborts with NumericalError rather than renormalize.
CoverResult cover21_sample(const DenseMatrix& w, const DenseMatrix& x, double r, std::size_t k,
                           std::uint64_t seed, std::size_t draws = 32);

struct SparsifiedNetwork {
  std::vector<SamplingMatrix> samplings;
  std::vector<DenseMatrix> sampled_weights;  // W_i M_i
  std::vector<double> projection_radii;      // Frobenius radius per layer
  std::vector<bool> projection_active;       // radius actually clipped the batch
  std::vector<double> layer_error_bounds;    // per-layer enforced Maurey bound
  double bound_value = 0.0;                  // ||X||_F prod ||W||_2 sum sqrt(sr_i/k_i)
  double discrepancy = 0.0;                  // ||X_L - Xhat_L||_F on the batch
  DenseMatrix reference_output;
  DenseMatrix sparsified_output;
};

// Layer-by-layer bounded column sampling of a ReLU/identity chain, evaluated
// on the batch X. After each sampled layer the activations are projected onto
// the Frobenius ball of radius ||X||_F prod_{j<=i} ||W_j||_2. The final
// discrepancy is asserted against twice bound_value (the per-layer retry
// slack); violation throws NumericalError.
SparsifiedNetwork network_sparsify(const DenseChain& net, const DenseMatrix& x,
                                   const std::vector<std::size_t>& k_per_layer,
                                   std::uint64_t seed, std::size_t draws = 32);

struct GridCoverResult {
  DenseMatrix rounded;
  double achieved_error = 0.0;
  double pitch = 0.0;
  double log_cardinality = 0.0;
};

// Rounds a matrix with at most `support_rows` nonzero rows, `support_cols`
// nonzero columns and entries in [-b, b] to the grid of pitch
// eps / sqrt(k1 k2), clamping so the result stays within the magnitude bound.
// Guarantees ||A - Ahat||_F <= eps and reports the log-cardinality
// (k1 + k2) ln m + k1 k2 ln(2 b sqrt(k1 k2) / eps) of the family.
GridCoverResult infty_grid_cover_round(const DenseMatrix& a, std::size_t support_rows,
                                       std::size_t support_cols, double b, double eps);

}  // namespace distillbound
