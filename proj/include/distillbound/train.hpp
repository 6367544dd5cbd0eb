#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "distillbound/bounds.hpp"
#include "distillbound/compgraph.hpp"
#include "distillbound/error.hpp"
#include "distillbound/matrix.hpp"

namespace distillbound {

enum class Optimizer { sgd, adam };

// norm21: sum_i ||W_i^T||_{2,1}. norm21_log_spectral adds the log of each
// layer's spectral norm (floored, see train.cpp) as a product-of-spectral
// surrogate.
enum class ComplexityMode { norm21, norm21_log_spectral };

struct TrainConfig {
  Optimizer optimizer = Optimizer::adam;
  double learning_rate = 1e-3;
  double lr_decay = 1.0;  // per-epoch multiplier
  std::size_t batch_size = 32;
  std::size_t epochs = 20;  // 0 is allowed and returns the initialization
  std::uint64_t seed = 0;
  double gamma = 1.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;

  void validate() const;
};

// Training blew up (non-finite loss or weights). Carries the last snapshot
// that was still finite so callers can inspect or resume.
struct DivergenceError : NumericalError {
  DenseChain last_finite;
  DivergenceError(const std::string& what, DenseChain snapshot)
      : NumericalError(what), last_finite(std::move(snapshot)) {}
};

// Bias-free chain with scaled normal entries (2/fan_in for ReLU layers,
// 1/fan_in otherwise). dims = {input, hidden..., output}.
DenseChain init_chain(const std::vector<std::size_t>& dims, const std::vector<GateKind>& gates,
                      std::uint64_t seed);

struct TrainResult {
  DenseChain net;
  double train_error = 0.0;  // zero-one on the training set
  double final_loss = 0.0;   // full-set cross-entropy at exit
};

// Cross-entropy training at the configured temperature. Deterministic given
// (init, data, config).
TrainResult train_initial(const DenseChain& init, const DenseMatrix& x, const std::vector<int>& y,
                          const TrainConfig& cfg);

double complexity_surrogate(const DenseChain& g, ComplexityMode mode);

struct DistillStepResult {
  DenseChain g;
  double initial_loss = 0.0;  // composite objective at entry, full batch
  double final_loss = 0.0;    // same objective at exit
};

// One rung: minimize distillation distance to f plus lambda times the
// complexity surrogate over the fixed augmented batch. Optimizer state starts
// fresh; the teacher's probabilities are computed once.
DistillStepResult distill_step(const DenseChain& f, const DenseChain& g_init, double lambda,
                               const DenseMatrix& aug_points, const TrainConfig& cfg,
                               ComplexityMode mode);

// What stands in for the teacher-class complexity in per-step reports:
// zero drops the constant term, surrogate measures f like a student,
// value passes a caller-supplied number through.
enum class RadFMode { zero, surrogate, value };

struct LadderConfig {
  TrainConfig step;  // per-rung optimizer settings
  std::size_t steps = 12;
  ComplexityMode mode = ComplexityMode::norm21;
  double lambda_multiplier = 1.0;
  double delta = 0.1;
  double ratio_bound = 4.0;
  double c_tilde = 1.0;
  RadFMode rad_f_mode = RadFMode::zero;
  double rad_f_value = 0.0;

  void validate() const;
};

struct LadderStep {
  double lambda = 0.0;
  DenseChain snapshot;  // g after this rung's optimization
  double phi = 0.0;
  double complexity = 0.0;
  double train_error = 0.0;
  double test_error = 0.0;
  double softmax_err = 0.0;  // student's, on the training set
  BoundReport bound;
  double margin_q10 = 0.0;  // 10% quantile of margins / rad_compgraph(hp, n)
  double initial_loss = 0.0;
  double final_loss = 0.0;
};

struct BaselineRow {
  double train_error = 0.0;
  double test_error = 0.0;
  double complexity = 0.0;
  double softmax_err = 0.0;
  BoundReport bound;  // phi = 0 against itself
  double margin_q10 = 0.0;
};

struct DistillationTrace {
  double lambda0 = 0.0;
  BaselineRow baseline;           // the teacher's own row
  std::vector<LadderStep> steps;  // rung j ran at lambda0 * 2^j
  std::size_t selected = 0;       // largest margin_q10 among the rungs
};

// lambda0 = softmax_error(f) * multiplier / complexity(f); rung 0 starts from
// a bitwise copy of f, later rungs warm-start from the previous snapshot.
DistillationTrace distill_ladder(const DenseChain& f, const DenseMatrix& x_train,
                                 const std::vector<int>& y_train, const DenseMatrix& x_test,
                                 const std::vector<int>& y_test, const DenseMatrix& aug_points,
                                 const LadderConfig& cfg);

}  // namespace distillbound
