#include "distillbound/sparsify.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <sstream>
#include <utility>

#include "json.hpp"

#include "distillbound/error.hpp"
#include "distillbound/rng.hpp"

namespace distillbound {
namespace {

// Multiplicities for k draws from distribution p: the integer part of k*p_i is
// assigned outright, the leftover draws follow the fractional parts. Unbiased,
// and exact (no randomness) when every k*p_i is an integer.
std::vector<std::size_t> allocate_counts(const std::vector<double>& p, std::size_t k,
                                         std::mt19937_64& eng) {
  const std::size_t n = p.size();
  std::vector<std::size_t> counts(n, 0);
  std::vector<double> residual(n, 0.0);
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double target = static_cast<double>(k) * p[i];
    const auto base = static_cast<std::size_t>(std::floor(target + 1e-9));
    counts[i] = base;
    assigned += base;
    residual[i] = std::max(0.0, target - static_cast<double>(base));
  }
  if (assigned >= k) return counts;

  double total = std::accumulate(residual.begin(), residual.end(), 0.0);
  const std::vector<double>& weights = total > 0.0 ? residual : p;
  if (total <= 0.0) total = std::accumulate(p.begin(), p.end(), 0.0);
  for (std::size_t d = assigned; d < k; ++d) {
    const double u = canonical_unit(eng) * total;
    double acc = 0.0;
    std::size_t pick = n - 1;
    for (std::size_t i = 0; i < n; ++i) {
      acc += weights[i];
      if (u < acc) {
        pick = i;
        break;
      }
    }
    ++counts[pick];
  }
  return counts;
}

std::vector<double> column_norms(const DenseMatrix& a) {
  std::vector<double> sq(a.cols(), 0.0);
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const double* row = a.row(i);
    for (std::size_t j = 0; j < a.cols(); ++j) sq[j] += row[j] * row[j];
  }
  for (double& v : sq) v = std::sqrt(v);
  return sq;
}

// A with column j scaled by diag[j]; the product A*M for diagonal M.
DenseMatrix scale_columns(const DenseMatrix& a, const std::vector<double>& diag) {
  DenseMatrix out(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const double* src = a.row(i);
    double* dst = out.row(i);
    for (std::size_t j = 0; j < a.cols(); ++j) dst[j] = src[j] * diag[j];
  }
  return out;
}

double diff_norm(const DenseMatrix& a, const DenseMatrix& b) {
  double sq = 0.0;
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const double* pa = a.row(i);
    const double* pb = b.row(i);
    for (std::size_t j = 0; j < a.cols(); ++j) {
      const double d = pa[j] - pb[j];
      sq += d * d;
    }
  }
  return std::sqrt(sq);
}

// Shared core: column sampling of `eff` (the possibly thresholded matrix)
// against reference product ref = a b^T. Returns the best-of-draws candidate,
// doubling the draw budget until `bound` is met.
MaureyResult run_maurey(const DenseMatrix& a, const DenseMatrix& b, const DenseMatrix& eff,
                        std::size_t k, std::uint64_t seed, std::size_t draws, double bound,
                        const char* what) {
  const std::vector<double> norms = column_norms(eff);
  double fro_sq = 0.0;
  for (double v : norms) fro_sq += v * v;
  const double fro = std::sqrt(fro_sq);

  const DenseMatrix ref = matmul_nt(a, b);
  MaureyResult result;
  result.error_bound = bound;
  result.sampling.dim = eff.cols();

  if (fro <= 0.0) {
    result.achieved_error = frobenius_norm(ref);
    return result;
  }

  std::vector<std::size_t> support;
  std::vector<double> beta;
  for (std::size_t j = 0; j < norms.size(); ++j) {
    if (norms[j] > 0.0) {
      support.push_back(j);
      beta.push_back(norms[j] * norms[j] / fro_sq);
    }
  }

  double best_err = -1.0;
  SamplingMatrix best;
  std::uint64_t candidate = 0;
  std::size_t attempt = draws;
  for (int doubling = 0; doubling <= 3; ++doubling) {
    for (std::size_t d = 0; d < attempt; ++d, ++candidate) {
      auto eng = make_engine(derive_seed(seed, "maurey", candidate));
      const std::vector<std::size_t> counts = allocate_counts(beta, k, eng);

      SamplingMatrix cand;
      cand.dim = eff.cols();
      std::vector<double> diag(eff.cols(), 0.0);
      for (std::size_t s = 0; s < support.size(); ++s) {
        const std::size_t col = support[s];
        const double z = fro_sq / (static_cast<double>(k) * norms[col]);
        for (std::size_t c = 0; c < counts[s]; ++c) {
          cand.indices.push_back(col);
          cand.weights.push_back(z);
          cand.diag_coeffs.push_back(z / norms[col]);
          diag[col] += z / norms[col];
        }
      }
      const double err = diff_norm(ref, matmul_nt(scale_columns(a, diag), b));
      if (best_err < 0.0 || err < best_err) {
        best_err = err;
        best = std::move(cand);
      }
    }
    result.draws_used += attempt;
    result.doublings = doubling;
    if (best_err <= bound * (1.0 + 1e-12)) break;
    if (doubling == 3) {
      std::ostringstream msg;
      msg << what << ": best error " << best_err << " above bound " << bound << " after "
          << result.draws_used << " draws";
      throw NumericalError(msg.str());
    }
    attempt *= 2;
  }

  result.sampling = std::move(best);
  result.achieved_error = best_err;
  for (double z : result.sampling.weights) result.max_weight = std::max(result.max_weight, z);
  return result;
}

void check_product_shapes(const DenseMatrix& a, const DenseMatrix& b, std::size_t k,
                          const char* what) {
  if (k < 1) throw ConfigError(std::string(what) + ": k must be at least 1");
  if (a.cols() != b.cols())
    throw ConfigError(std::string(what) + ": operands must share their column count");
  if (a.cols() == 0) throw ConfigError(std::string(what) + ": empty operands");
}

}  // namespace

std::vector<double> SamplingMatrix::diagonal() const {
  std::vector<double> diag(dim, 0.0);
  for (std::size_t d = 0; d < indices.size(); ++d) diag[indices[d]] += diag_coeffs[d];
  return diag;
}

DenseMatrix SamplingMatrix::to_dense() const {
  DenseMatrix m(dim, dim);
  const std::vector<double> diag = diagonal();
  for (std::size_t j = 0; j < dim; ++j) m(j, j) = diag[j];
  return m;
}

std::string sampling_to_json(const SamplingMatrix& m) {
  nlohmann::json j;
  j["dims"] = m.dim;
  j["indices"] = m.indices;
  j["weights"] = m.weights;
  j["diag_coeffs"] = m.diag_coeffs;
  return j.dump(2);
}

SamplingMatrix sampling_from_json(const std::string& text) {
  try {
    const nlohmann::json j = nlohmann::json::parse(text);
    SamplingMatrix m;
    m.dim = j.at("dims").get<std::size_t>();
    m.indices = j.at("indices").get<std::vector<std::size_t>>();
    m.weights = j.at("weights").get<std::vector<double>>();
    m.diag_coeffs = j.at("diag_coeffs").get<std::vector<double>>();
    if (m.indices.size() != m.weights.size() || m.indices.size() != m.diag_coeffs.size())
      throw ConfigError("sampling matrix: index/weight length mismatch");
    for (std::size_t idx : m.indices)
      if (idx >= m.dim) throw ConfigError("sampling matrix: index out of range");
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("sampling matrix: bad JSON: ") + e.what());
  }
}

MaureyResult maurey_product(const DenseMatrix& a, const DenseMatrix& b, std::size_t k,
                            std::uint64_t seed, std::size_t draws) {
  check_product_shapes(a, b, k, "maurey_product");
  const double bound = frobenius_norm(a) * frobenius_norm(b) / std::sqrt(static_cast<double>(k));
  return run_maurey(a, b, a, k, seed, draws, bound, "maurey_product");
}

MaureyResult maurey_product_bounded(const DenseMatrix& a, const DenseMatrix& b, std::size_t k,
                                    std::uint64_t seed, std::size_t draws) {
  check_product_shapes(a, b, k, "maurey_product_bounded");
  const double fro_a = frobenius_norm(a);
  const double m_cols = static_cast<double>(a.cols());
  const double tau = fro_a / std::sqrt(m_cols * static_cast<double>(k));

  DenseMatrix eff = a;
  const std::vector<double> norms = column_norms(a);
  for (std::size_t j = 0; j < a.cols(); ++j) {
    if (norms[j] < tau)
      for (std::size_t i = 0; i < a.rows(); ++i) eff(i, j) = 0.0;
  }

  const double bound =
      2.0 * fro_a * frobenius_norm(b) / std::sqrt(static_cast<double>(k));
  MaureyResult result = run_maurey(a, b, eff, k, seed, draws, bound, "maurey_product_bounded");
  result.tail_error = diff_norm(matmul_nt(a, b), matmul_nt(eff, b));

  const double cap = fro_a * std::sqrt(m_cols / static_cast<double>(k));
  for (double z : result.sampling.weights) {
    if (z > cap * (1.0 + 1e-12)) {
      std::ostringstream msg;
      msg << "maurey_product_bounded: weight " << z << " exceeds cap " << cap;
      throw NumericalError(msg.str());
    }
  }
  return result;
}

DenseMatrix SparseOuterSum::to_dense() const {
  DenseMatrix m(rows, cols);
  for (const SparseEntry& e : entries) m(e.row, e.col) += e.value;
  return m;
}

CoverResult cover21_sample(const DenseMatrix& w, const DenseMatrix& x, double r, std::size_t k,
                           std::uint64_t seed, std::size_t draws) {
  if (k < 1) throw ConfigError("cover21_sample: k must be at least 1");
  if (r < 0.0) throw ConfigError("cover21_sample: radius must be nonnegative");
  if (w.cols() != x.cols())
    throw ConfigError("cover21_sample: W and X must share their column count");
  const double measured = norm21_of_transpose(w);
  if (measured > r * (1.0 + 1e-9) + 1e-12)
    throw ConfigError("cover21_sample: norm21_of_transpose(W) exceeds the declared radius");

  CoverResult result;
  result.w_hat.rows = w.rows();
  result.w_hat.cols = w.cols();
  result.error_bound = r * frobenius_norm(x) / std::sqrt(static_cast<double>(k));
  result.log_cardinality =
      static_cast<double>(k) *
      std::log(2.0 * static_cast<double>(w.rows()) * static_cast<double>(w.cols()));

  const std::vector<double> xnorm = column_norms(x);
  const double fro_x = frobenius_norm(x);
  const DenseMatrix ref = matmul_nt(w, x);

  // Outcome list: one atom per usable entry of W, then the +/- padding pair.
  struct Atom {
    std::size_t row, col;
    double sign;
    double mass;
  };
  std::vector<Atom> atoms;
  double mass = 0.0;
  if (r > 0.0 && fro_x > 0.0) {
    for (std::size_t i = 0; i < w.rows(); ++i) {
      for (std::size_t j = 0; j < w.cols(); ++j) {
        const double v = w(i, j);
        if (v == 0.0 || xnorm[j] <= 0.0) continue;
        const double q = std::abs(v) * xnorm[j] / (r * fro_x);
        atoms.push_back({i, j, v > 0.0 ? 1.0 : -1.0, q});
        mass += q;
      }
    }
  }
  if (atoms.empty()) {
    // No entry mass: the exact cover element is the zero matrix.
    result.achieved_error = frobenius_norm(ref);
    return result;
  }
  if (mass > 1.0 + 1e-9) {
    std::ostringstream msg;
    msg << "cover21_sample: entry mass " << mass
        << " exceeds 1; the column-norm (2,1) orientation cannot pad this W/X pair";
    throw NumericalError(msg.str());
  }
  const double deficit = std::max(0.0, 1.0 - mass);
  if (deficit > 0.0) {
    const Atom& first = atoms.front();
    atoms.push_back({first.row, first.col, 1.0, deficit / 2.0});
    atoms.push_back({first.row, first.col, -1.0, deficit / 2.0});
  }

  std::vector<double> p;
  p.reserve(atoms.size());
  for (const Atom& atom : atoms) p.push_back(atom.mass);

  const double coeff_scale = r * fro_x / static_cast<double>(k);
  double best_err = -1.0;
  SparseOuterSum best;
  std::uint64_t candidate = 0;
  std::size_t attempt = draws;
  for (int doubling = 0; doubling <= 3; ++doubling) {
    for (std::size_t d = 0; d < attempt; ++d, ++candidate) {
      auto eng = make_engine(derive_seed(seed, "cover21", candidate));
      const std::vector<std::size_t> counts = allocate_counts(p, k, eng);

      std::map<std::pair<std::size_t, std::size_t>, double> accum;
      for (std::size_t s = 0; s < atoms.size(); ++s) {
        if (counts[s] == 0) continue;
        const Atom& atom = atoms[s];
        accum[{atom.row, atom.col}] += static_cast<double>(counts[s]) * coeff_scale * atom.sign /
                                       xnorm[atom.col];
      }
      SparseOuterSum cand;
      cand.rows = w.rows();
      cand.cols = w.cols();
      for (const auto& [pos, value] : accum) cand.entries.push_back({pos.first, pos.second, value});

      const double err = diff_norm(ref, matmul_nt(cand.to_dense(), x));
      if (best_err < 0.0 || err < best_err) {
        best_err = err;
        best = std::move(cand);
      }
    }
    result.draws_used += attempt;
    result.doublings = doubling;
    if (best_err <= result.error_bound * (1.0 + 1e-12)) break;
    if (doubling == 3) {
      std::ostringstream msg;
      msg << "cover21_sample: best error " << best_err << " above bound " << result.error_bound
          << " after " << result.draws_used << " draws";
      throw NumericalError(msg.str());
    }
    attempt *= 2;
  }

  result.w_hat = std::move(best);
  result.achieved_error = best_err;
  return result;
}

SparsifiedNetwork network_sparsify(const DenseChain& net, const DenseMatrix& x,
                                   const std::vector<std::size_t>& k_per_layer,
                                   std::uint64_t seed, std::size_t draws) {
  net.validate();
  if (net.weights.empty()) throw ConfigError("network_sparsify: empty network");
  if (x.cols() != net.input_dim())
    throw ConfigError("network_sparsify: batch width does not match the network input");
  if (k_per_layer.size() != net.weights.size())
    throw ConfigError("network_sparsify: need one k per layer");
  for (std::size_t k : k_per_layer)
    if (k < 1) throw ConfigError("network_sparsify: every k must be at least 1");
  for (GateKind gate : net.gates)
    if (gate != GateKind::relu && gate != GateKind::identity)
      throw ConfigError("network_sparsify: only ReLU/identity gates are supported");

  const std::size_t depth = net.weights.size();
  const double fro_x = frobenius_norm(x);

  SparsifiedNetwork out;
  out.reference_output = net.forward(x);

  double spec_prod = 1.0;
  double bound_sum = 0.0;
  DenseMatrix current = x;
  for (std::size_t i = 0; i < depth; ++i) {
    const DenseMatrix& w = net.weights[i];
    MaureyResult mr =
        maurey_product_bounded(w, current, k_per_layer[i], derive_seed(seed, "layer", i), draws);
    out.layer_error_bounds.push_back(mr.error_bound);

    DenseMatrix sampled = scale_columns(w, mr.sampling.diagonal());
    DenseMatrix pre = matmul_nt(current, sampled);
    if (net.gates[i] == GateKind::relu) {
      for (std::size_t a = 0; a < pre.rows(); ++a) {
        double* row = pre.row(a);
        for (std::size_t c = 0; c < pre.cols(); ++c) row[c] = std::max(0.0, row[c]);
      }
    }

    spec_prod *= spectral_norm(w);
    const double radius = fro_x * spec_prod;
    out.projection_active.push_back(frobenius_norm(pre) > radius);
    current = project_frobenius(pre, radius);

    out.samplings.push_back(std::move(mr.sampling));
    out.sampled_weights.push_back(std::move(sampled));
    out.projection_radii.push_back(radius);
    bound_sum += std::sqrt(stable_rank(w) / static_cast<double>(k_per_layer[i]));
  }
  out.sparsified_output = std::move(current);
  out.bound_value = fro_x * spec_prod * bound_sum;
  out.discrepancy = diff_norm(out.reference_output, out.sparsified_output);

  if (out.discrepancy > 2.0 * out.bound_value * (1.0 + 1e-9) + 1e-12) {
    std::ostringstream msg;
    msg << "network_sparsify: discrepancy " << out.discrepancy << " above 2x bound "
        << out.bound_value;
    throw NumericalError(msg.str());
  }
  return out;
}

GridCoverResult infty_grid_cover_round(const DenseMatrix& a, std::size_t support_rows,
                                       std::size_t support_cols, double b, double eps) {
  if (eps <= 0.0) throw ConfigError("infty_grid_cover_round: eps must be positive");
  if (b < 0.0) throw ConfigError("infty_grid_cover_round: magnitude bound must be nonnegative");
  if (support_rows < 1 || support_cols < 1)
    throw ConfigError("infty_grid_cover_round: support budgets must be at least 1");

  std::size_t nonzero_rows = 0;
  std::size_t nonzero_cols = 0;
  std::vector<bool> col_used(a.cols(), false);
  for (std::size_t i = 0; i < a.rows(); ++i) {
    bool row_used = false;
    for (std::size_t j = 0; j < a.cols(); ++j) {
      const double v = a(i, j);
      if (v == 0.0) continue;
      row_used = true;
      if (!col_used[j]) {
        col_used[j] = true;
        ++nonzero_cols;
      }
      if (std::abs(v) > b * (1.0 + 1e-12))
        throw ConfigError("infty_grid_cover_round: entry exceeds the magnitude bound");
    }
    if (row_used) ++nonzero_rows;
  }
  if (nonzero_rows > support_rows)
    throw ConfigError("infty_grid_cover_round: more nonzero rows than declared");
  if (nonzero_cols > support_cols)
    throw ConfigError("infty_grid_cover_round: more nonzero columns than declared");

  const double k1 = static_cast<double>(support_cols);
  const double k2 = static_cast<double>(support_rows);
  const double pitch = eps / std::sqrt(k1 * k2);

  GridCoverResult result;
  result.pitch = pitch;
  result.rounded = DenseMatrix(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < a.cols(); ++j) {
      const double v = a(i, j);
      if (v == 0.0) continue;
      double snapped = std::nearbyint(v / pitch) * pitch;
      // Stay inside the declared family: step one multiple toward zero when
      // rounding overshoots the magnitude bound. Error per entry stays <= pitch.
      if (std::abs(snapped) > b) snapped -= (snapped > 0.0 ? pitch : -pitch);
      if (std::abs(snapped) > b) snapped = 0.0;
      result.rounded(i, j) = snapped;
    }
  }
  result.achieved_error = frobenius_norm(sub(a, result.rounded));
  if (result.achieved_error > eps * (1.0 + 1e-12))
    throw NumericalError("infty_grid_cover_round: rounding error exceeded eps");

  const double m = static_cast<double>(std::max(a.rows(), a.cols()));
  const double grid_arg = std::max(1.0, 2.0 * b * std::sqrt(k1 * k2) / eps);
  result.log_cardinality = (k1 + k2) * std::log(std::max(m, 1.0)) + k1 * k2 * std::log(grid_arg);
  return result;
}

}  // namespace distillbound
