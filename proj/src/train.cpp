#include "distillbound/train.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "distillbound/rng.hpp"
#include "distillbound/softmax.hpp"

namespace distillbound {
namespace {

// Spectral norms below this are treated as zero by the log-spectral surrogate
// and its gradient, so fully zeroed layers stay zeroed.
constexpr double kSpectralFloor = 1e-6;

bool all_finite(const DenseMatrix& m) {
  for (std::size_t i = 0; i < m.rows(); ++i) {
    const double* row = m.row(i);
    for (std::size_t j = 0; j < m.cols(); ++j)
      if (!std::isfinite(row[j])) return false;
  }
  return true;
}

bool all_finite(const DenseChain& net) {
  for (const DenseMatrix& w : net.weights)
    if (!all_finite(w)) return false;
  return true;
}

std::vector<std::size_t> shuffled_indices(std::size_t n, std::mt19937_64& eng) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  for (std::size_t i = n; i > 1; --i) {
    const auto j = static_cast<std::size_t>(canonical_unit(eng) * static_cast<double>(i));
    std::swap(idx[i - 1], idx[std::min(j, i - 1)]);
  }
  return idx;
}

DenseMatrix gather_rows(const DenseMatrix& x, const std::vector<std::size_t>& idx,
                        std::size_t begin, std::size_t end) {
  DenseMatrix out(end - begin, x.cols());
  for (std::size_t r = begin; r < end; ++r)
    for (std::size_t j = 0; j < x.cols(); ++j) out(r - begin, j) = x(idx[r], j);
  return out;
}

// dL/dW_i for a batch whose activations and logit gradient are given.
// ReLU subgradient at the kink is 0 (post-activation 0 means a dead unit).
std::vector<DenseMatrix> backprop(const DenseChain& net, const std::vector<DenseMatrix>& acts,
                                  DenseMatrix dlogits) {
  const std::size_t depth = net.weights.size();
  std::vector<DenseMatrix> grads(depth);
  DenseMatrix delta = std::move(dlogits);
  for (std::size_t layer = depth; layer-- > 0;) {
    if (net.gates[layer] == GateKind::relu) {
      const DenseMatrix& out = acts[layer + 1];
      for (std::size_t i = 0; i < delta.rows(); ++i)
        for (std::size_t j = 0; j < delta.cols(); ++j)
          if (out(i, j) <= 0.0) delta(i, j) = 0.0;
    }
    grads[layer] = matmul_tn(delta, acts[layer]);
    if (layer > 0) delta = matmul(delta, net.weights[layer]);
  }
  return grads;
}

// Mean cross-entropy at temperature gamma; fills dlogits with the mean
// gradient (softmax minus one-hot, divided by gamma and the batch size).
double ce_loss_grad(const DenseMatrix& logits, const std::vector<int>& labels, double gamma,
                    DenseMatrix& dlogits) {
  const std::size_t b = logits.rows();
  const std::size_t k = logits.cols();
  dlogits = DenseMatrix(b, k);
  double loss = 0.0;
  for (std::size_t i = 0; i < b; ++i) {
    const double* v = logits.row(i);
    double vmax = v[0];
    for (std::size_t c = 1; c < k; ++c) vmax = std::max(vmax, v[c]);
    double z = 0.0;
    for (std::size_t c = 0; c < k; ++c) z += std::exp((v[c] - vmax) / gamma);
    const double lse = vmax / gamma + std::log(z);
    const auto y = static_cast<std::size_t>(labels[i]);
    loss += lse - v[y] / gamma;
    for (std::size_t c = 0; c < k; ++c) {
      const double p = std::exp((v[c] - vmax) / gamma) / z;
      dlogits(i, c) = (p - (c == y ? 1.0 : 0.0)) / (gamma * static_cast<double>(b));
    }
  }
  return loss / static_cast<double>(b);
}

// Mean l1 distance between teacher probabilities and the student softmax;
// fills the logit gradient with sign convention sign(0) = 0.
double phi_loss_grad(const DenseMatrix& teacher_probs, const DenseMatrix& logits, double gamma,
                     DenseMatrix& dlogits) {
  const std::size_t b = logits.rows();
  const std::size_t k = logits.cols();
  dlogits = DenseMatrix(b, k);
  double loss = 0.0;
  std::vector<double> p(k), s(k);
  for (std::size_t i = 0; i < b; ++i) {
    const double* v = logits.row(i);
    double vmax = v[0];
    for (std::size_t c = 1; c < k; ++c) vmax = std::max(vmax, v[c]);
    double z = 0.0;
    for (std::size_t c = 0; c < k; ++c) z += std::exp((v[c] - vmax) / gamma);
    double dot = 0.0;
    for (std::size_t c = 0; c < k; ++c) {
      p[c] = std::exp((v[c] - vmax) / gamma) / z;
      const double diff = p[c] - teacher_probs(i, c);
      loss += std::abs(diff);
      s[c] = diff > 0.0 ? 1.0 : (diff < 0.0 ? -1.0 : 0.0);
      dot += s[c] * p[c];
    }
    for (std::size_t c = 0; c < k; ++c)
      dlogits(i, c) = p[c] * (s[c] - dot) / (gamma * static_cast<double>(b));
  }
  return loss / static_cast<double>(b);
}

// Subgradient of the column-norm sum: each nonzero column is normalized,
// zero columns contribute nothing (they are exactly stationary).
void add_norm21_grad(const DenseMatrix& w, double coeff, DenseMatrix& grad) {
  for (std::size_t j = 0; j < w.cols(); ++j) {
    double sq = 0.0;
    for (std::size_t i = 0; i < w.rows(); ++i) sq += w(i, j) * w(i, j);
    const double norm = std::sqrt(sq);
    if (norm <= 0.0) continue;
    for (std::size_t i = 0; i < w.rows(); ++i) grad(i, j) += coeff * w(i, j) / norm;
  }
}

// Rank-one estimate of the spectral direction, kept warm across steps and
// refreshed by a single power iteration per optimizer step.
struct SpectralState {
  std::vector<std::vector<double>> right;  // one unit vector per layer

  static SpectralState init(const DenseChain& net, std::uint64_t seed) {
    SpectralState st;
    auto eng = make_engine(derive_seed(seed, "spectral"));
    for (const DenseMatrix& w : net.weights) {
      std::vector<double> v(w.cols());
      double sq = 0.0;
      for (double& e : v) {
        e = standard_normal(eng);
        sq += e * e;
      }
      const double norm = std::sqrt(sq);
      for (double& e : v) e /= norm > 0.0 ? norm : 1.0;
      st.right.push_back(std::move(v));
    }
    return st;
  }

  // Refreshes layer `idx` and adds coeff * d(ln sigma)/dW to grad.
  void add_log_spectral_grad(std::size_t idx, const DenseMatrix& w, double coeff,
                             DenseMatrix& grad) {
    std::vector<double>& v = right[idx];
    std::vector<double> u(w.rows(), 0.0);
    for (std::size_t i = 0; i < w.rows(); ++i)
      for (std::size_t j = 0; j < w.cols(); ++j) u[i] += w(i, j) * v[j];
    double sigma = 0.0;
    for (double e : u) sigma += e * e;
    sigma = std::sqrt(sigma);
    if (sigma < kSpectralFloor) return;  // floored surrogate is flat here
    for (double& e : u) e /= sigma;

    std::vector<double> next(w.cols(), 0.0);
    for (std::size_t i = 0; i < w.rows(); ++i)
      for (std::size_t j = 0; j < w.cols(); ++j) next[j] += w(i, j) * u[i];
    double nn = 0.0;
    for (double e : next) nn += e * e;
    nn = std::sqrt(nn);
    if (nn > 0.0)
      for (std::size_t j = 0; j < w.cols(); ++j) v[j] = next[j] / nn;

    for (std::size_t i = 0; i < w.rows(); ++i)
      for (std::size_t j = 0; j < w.cols(); ++j) grad(i, j) += coeff * u[i] * v[j] / sigma;
  }
};

struct OptimizerState {
  std::vector<DenseMatrix> m, v;
  std::size_t t = 0;

  static OptimizerState init(const DenseChain& net) {
    OptimizerState st;
    for (const DenseMatrix& w : net.weights) {
      st.m.emplace_back(w.rows(), w.cols());
      st.v.emplace_back(w.rows(), w.cols());
    }
    return st;
  }
};

void apply_update(DenseChain& net, const std::vector<DenseMatrix>& grads, const TrainConfig& cfg,
                  double lr, OptimizerState& st) {
  if (cfg.optimizer == Optimizer::sgd) {
    for (std::size_t l = 0; l < net.weights.size(); ++l) {
      DenseMatrix& w = net.weights[l];
      const DenseMatrix& g = grads[l];
      for (std::size_t i = 0; i < w.rows(); ++i)
        for (std::size_t j = 0; j < w.cols(); ++j) w(i, j) -= lr * g(i, j);
    }
    return;
  }
  ++st.t;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(st.t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(st.t));
  for (std::size_t l = 0; l < net.weights.size(); ++l) {
    DenseMatrix& w = net.weights[l];
    const DenseMatrix& g = grads[l];
    DenseMatrix& m = st.m[l];
    DenseMatrix& v = st.v[l];
    for (std::size_t i = 0; i < w.rows(); ++i)
      for (std::size_t j = 0; j < w.cols(); ++j) {
        const double gij = g(i, j);
        m(i, j) = cfg.beta1 * m(i, j) + (1.0 - cfg.beta1) * gij;
        v(i, j) = cfg.beta2 * v(i, j) + (1.0 - cfg.beta2) * gij * gij;
        w(i, j) -= lr * (m(i, j) / bc1) / (std::sqrt(v(i, j) / bc2) + cfg.adam_eps);
      }
  }
}

void check_labels(const std::vector<int>& y, std::size_t n, std::size_t k) {
  if (y.size() != n) throw ConfigError("trainer: label count does not match the batch");
  for (int label : y)
    if (label < 0 || static_cast<std::size_t>(label) >= k)
      throw ConfigError("trainer: label out of range");
}

}  // namespace

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw ConfigError("train config: learning rate must be positive");
  if (!(lr_decay > 0.0)) throw ConfigError("train config: decay must be positive");
  if (batch_size < 1) throw ConfigError("train config: batch size must be at least 1");
  if (!(gamma > 0.0)) throw ConfigError("train config: temperature must be positive");
  if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0)
    throw ConfigError("train config: Adam betas must lie in [0, 1)");
  if (!(adam_eps > 0.0)) throw ConfigError("train config: Adam epsilon must be positive");
}

void LadderConfig::validate() const {
  step.validate();
  if (steps < 1) throw ConfigError("ladder config: need at least one rung");
  if (!(lambda_multiplier > 0.0))
    throw ConfigError("ladder config: lambda multiplier must be positive");
  if (!(delta > 0.0) || !(delta < 1.0))
    throw ConfigError("ladder config: failure probability must lie in (0, 1)");
  if (ratio_bound < 0.0) throw ConfigError("ladder config: ratio bound must be nonnegative");
  if (c_tilde < 0.0) throw ConfigError("ladder config: constant policy must be nonnegative");
  if (rad_f_value < 0.0) throw ConfigError("ladder config: rad_f must be nonnegative");
}

DenseChain init_chain(const std::vector<std::size_t>& dims, const std::vector<GateKind>& gates,
                      std::uint64_t seed) {
  if (dims.size() < 2) throw ConfigError("init_chain: need input and output dimensions");
  if (gates.size() != dims.size() - 1)
    throw ConfigError("init_chain: need one gate per layer");
  for (std::size_t d : dims)
    if (d < 1) throw ConfigError("init_chain: dimensions must be positive");

  DenseChain net;
  auto eng = make_engine(derive_seed(seed, "init"));
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    const double fan_in = static_cast<double>(dims[l]);
    const double scale =
        std::sqrt((gates[l] == GateKind::relu ? 2.0 : 1.0) / fan_in);
    DenseMatrix w(dims[l + 1], dims[l]);
    for (std::size_t i = 0; i < w.rows(); ++i)
      for (std::size_t j = 0; j < w.cols(); ++j) w(i, j) = scale * standard_normal(eng);
    net.weights.push_back(std::move(w));
    net.gates.push_back(gates[l]);
  }
  net.validate();
  return net;
}

TrainResult train_initial(const DenseChain& init, const DenseMatrix& x, const std::vector<int>& y,
                          const TrainConfig& cfg) {
  cfg.validate();
  init.validate();
  if (x.rows() == 0) throw ConfigError("train_initial: empty training set");
  if (x.cols() != init.input_dim())
    throw ConfigError("train_initial: feature width does not match the network");
  check_labels(y, x.rows(), init.output_dim());

  DenseChain net = init;
  OptimizerState opt = OptimizerState::init(net);
  auto eng = make_engine(derive_seed(cfg.seed, "shuffle"));
  const std::size_t n = x.rows();

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = cfg.learning_rate * std::pow(cfg.lr_decay, static_cast<double>(epoch));
    const std::vector<std::size_t> order = shuffled_indices(n, eng);
    for (std::size_t begin = 0; begin < n; begin += cfg.batch_size) {
      const std::size_t end = std::min(n, begin + cfg.batch_size);
      DenseMatrix xb = gather_rows(x, order, begin, end);
      std::vector<int> yb(end - begin);
      for (std::size_t r = begin; r < end; ++r) yb[r - begin] = y[order[r]];

      DenseChain last_good = net;
      const std::vector<DenseMatrix> acts = net.forward_layers(xb);
      DenseMatrix dlogits;
      const double loss = ce_loss_grad(acts.back(), yb, cfg.gamma, dlogits);
      apply_update(net, backprop(net, acts, std::move(dlogits)), cfg, lr, opt);
      if (!std::isfinite(loss) || !all_finite(net)) {
        std::ostringstream msg;
        msg << "train_initial: non-finite state at epoch " << epoch;
        throw DivergenceError(msg.str(), std::move(last_good));
      }
    }
  }

  TrainResult result;
  const DenseMatrix logits = net.forward(x);
  result.train_error = zero_one_error(logits, y);
  DenseMatrix scratch;
  result.final_loss = ce_loss_grad(logits, y, cfg.gamma, scratch);
  result.net = std::move(net);
  return result;
}

double complexity_surrogate(const DenseChain& g, ComplexityMode mode) {
  double total = 0.0;
  for (const DenseMatrix& w : g.weights) total += norm21_of_transpose(w);
  if (mode == ComplexityMode::norm21_log_spectral)
    for (const DenseMatrix& w : g.weights)
      total += std::log(std::max(spectral_norm(w), kSpectralFloor));
  return total;
}

DistillStepResult distill_step(const DenseChain& f, const DenseChain& g_init, double lambda,
                               const DenseMatrix& aug_points, const TrainConfig& cfg,
                               ComplexityMode mode) {
  cfg.validate();
  f.validate();
  g_init.validate();
  if (lambda < 0.0) throw ConfigError("distill_step: lambda must be nonnegative");
  if (aug_points.rows() == 0) throw ConfigError("distill_step: empty augmented batch");
  if (f.input_dim() != g_init.input_dim() || f.output_dim() != g_init.output_dim())
    throw ConfigError("distill_step: teacher and student shapes differ");
  if (aug_points.cols() != f.input_dim())
    throw ConfigError("distill_step: augmented batch width does not match the networks");

  const DenseMatrix f_logits = f.forward(aug_points);
  const DenseMatrix f_probs = softmax_gamma_rows(f_logits, cfg.gamma);

  DistillStepResult result;
  DenseChain net = g_init;
  result.initial_loss = distillation_distance(f_logits, net.forward(aug_points), cfg.gamma) +
                        lambda * complexity_surrogate(net, mode);

  OptimizerState opt = OptimizerState::init(net);
  SpectralState spectral = SpectralState::init(net, cfg.seed);
  auto eng = make_engine(derive_seed(cfg.seed, "shuffle"));
  const std::size_t m = aug_points.rows();

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = cfg.learning_rate * std::pow(cfg.lr_decay, static_cast<double>(epoch));
    const std::vector<std::size_t> order = shuffled_indices(m, eng);
    for (std::size_t begin = 0; begin < m; begin += cfg.batch_size) {
      const std::size_t end = std::min(m, begin + cfg.batch_size);
      DenseMatrix xb = gather_rows(aug_points, order, begin, end);
      DenseMatrix pb(end - begin, f_probs.cols());
      for (std::size_t r = begin; r < end; ++r)
        for (std::size_t c = 0; c < f_probs.cols(); ++c) pb(r - begin, c) = f_probs(order[r], c);

      DenseChain last_good = net;
      const std::vector<DenseMatrix> acts = net.forward_layers(xb);
      DenseMatrix dlogits;
      const double loss = phi_loss_grad(pb, acts.back(), cfg.gamma, dlogits);
      std::vector<DenseMatrix> grads = backprop(net, acts, std::move(dlogits));
      if (lambda > 0.0) {
        for (std::size_t l = 0; l < net.weights.size(); ++l) {
          add_norm21_grad(net.weights[l], lambda, grads[l]);
          if (mode == ComplexityMode::norm21_log_spectral)
            spectral.add_log_spectral_grad(l, net.weights[l], lambda, grads[l]);
        }
      }
      apply_update(net, grads, cfg, lr, opt);
      if (!std::isfinite(loss) || !all_finite(net)) {
        std::ostringstream msg;
        msg << "distill_step: non-finite state at epoch " << epoch;
        throw DivergenceError(msg.str(), std::move(last_good));
      }
    }
  }

  result.final_loss = distillation_distance(f_logits, net.forward(aug_points), cfg.gamma) +
                      lambda * complexity_surrogate(net, mode);
  result.g = std::move(net);
  return result;
}

DistillationTrace distill_ladder(const DenseChain& f, const DenseMatrix& x_train,
                                 const std::vector<int>& y_train, const DenseMatrix& x_test,
                                 const std::vector<int>& y_test, const DenseMatrix& aug_points,
                                 const LadderConfig& cfg) {
  cfg.validate();
  f.validate();
  if (x_train.rows() == 0 || x_test.rows() == 0)
    throw ConfigError("distill_ladder: empty train or test set");
  check_labels(y_train, x_train.rows(), f.output_dim());
  check_labels(y_test, x_test.rows(), f.output_dim());

  const std::size_t n = x_train.rows();
  const std::size_t m = aug_points.rows();
  const double gamma = cfg.step.gamma;

  const DenseMatrix f_train_logits = f.forward(x_train);
  const DenseMatrix f_test_logits = f.forward(x_test);
  const DenseMatrix f_aug_logits = f.forward(aug_points);

  const double f_complexity = complexity_surrogate(f, cfg.mode);
  if (!(f_complexity > 0.0))
    throw ConfigError("distill_ladder: teacher complexity must be positive to set lambda0");
  const double f_softmax_err = softmax_error(f_train_logits, y_train, gamma);

  double rad_f = 0.0;
  if (cfg.rad_f_mode == RadFMode::surrogate)
    rad_f = rad_compgraph(measure_chain_hyperparams(f, aug_points), m);
  else if (cfg.rad_f_mode == RadFMode::value)
    rad_f = cfg.rad_f_value;

  BoundInputs base;
  base.n = n;
  base.m = m;
  base.k = f.output_dim();
  base.gamma = gamma;
  base.delta = cfg.delta;
  base.ratio_bound = cfg.ratio_bound;
  base.rad_f = rad_f;
  base.c_tilde = cfg.c_tilde;

  DistillationTrace trace;
  trace.lambda0 = f_softmax_err * cfg.lambda_multiplier / f_complexity;

  {
    BaselineRow& row = trace.baseline;
    row.train_error = zero_one_error(f_train_logits, y_train);
    row.test_error = zero_one_error(f_test_logits, y_test);
    row.complexity = f_complexity;
    row.softmax_err = f_softmax_err;
    BoundInputs bi = base;
    bi.hp = measure_chain_hyperparams(f, x_train);
    bi.phi = 0.0;
    bi.softmax_err = f_softmax_err;
    row.bound = full_bound_compgraph(bi);
    const double normalizer = rad_compgraph(bi.hp, n);
    std::vector<double> norm_margins = margins(f_train_logits, y_train);
    for (double& v : norm_margins) v /= normalizer;
    row.margin_q10 = quantile(std::move(norm_margins), 0.10);
  }

  DenseChain g = f;  // rung 0 starts from a bitwise copy of the teacher
  double lambda = trace.lambda0;
  for (std::size_t j = 0; j < cfg.steps; ++j) {
    TrainConfig step_cfg = cfg.step;
    step_cfg.seed = derive_seed(cfg.step.seed, "rung", j);
    DistillStepResult res = distill_step(f, g, lambda, aug_points, step_cfg, cfg.mode);
    g = res.g;

    LadderStep step;
    step.lambda = lambda;
    step.initial_loss = res.initial_loss;
    step.final_loss = res.final_loss;
    const DenseMatrix g_train_logits = g.forward(x_train);
    step.phi = distillation_distance(f_aug_logits, g.forward(aug_points), gamma);
    step.complexity = complexity_surrogate(g, cfg.mode);
    step.train_error = zero_one_error(g_train_logits, y_train);
    step.test_error = zero_one_error(g.forward(x_test), y_test);
    step.softmax_err = softmax_error(g_train_logits, y_train, gamma);

    BoundInputs bi = base;
    bi.hp = measure_chain_hyperparams(g, x_train);
    bi.phi = step.phi;
    bi.softmax_err = step.softmax_err;
    step.bound = full_bound_compgraph(bi);

    const double normalizer = rad_compgraph(bi.hp, n);
    std::vector<double> norm_margins = margins(g_train_logits, y_train);
    for (double& v : norm_margins) v /= normalizer;
    step.margin_q10 = quantile(std::move(norm_margins), 0.10);

    step.snapshot = g;
    trace.steps.push_back(std::move(step));
    lambda *= 2.0;
  }

  trace.selected = 0;
  for (std::size_t j = 1; j < trace.steps.size(); ++j)
    if (trace.steps[j].margin_q10 > trace.steps[trace.selected].margin_q10) trace.selected = j;
  return trace;
}

}  // namespace distillbound
