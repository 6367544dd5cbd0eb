#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "distillbound/compgraph.hpp"

namespace distillbound {

// Rademacher complexity of the clamped-hyperparameter graph class at sample
// size n:
//   4/n + 12 sqrt(ln(2 m^2)/n) [ sum_i (r_i b_i rho_i prod_{l>i} s_l rho_l)^{2/3} ]^{3/2}
// with m the widest layer. b is per example; the batch scaling is internal.
double rad_compgraph(const GraphHyperParams& hp, std::size_t n);

// ln of the covering-set size behind rad_compgraph at resolution eps:
//   (2^{4/3} n ln(2 m^2) / eps^2) [ sum_i ( ... )^{2/3} ]^3
double covering_log_cardinality(const GraphHyperParams& hp, std::size_t n, double eps);

// Entropy-integral step used to turn a cover exponent tau into a Rademacher
// value: 12 max(tau, 1/3) / n. Monotone in tau, floor 4/n.
double dudley_rad_from_cover(double tau, std::size_t n);

struct BoundInputs {
  std::size_t n = 1;        // fresh-sample count
  std::size_t m = 1;        // augmented-sample count
  std::size_t k = 2;        // class count
  double gamma = 1.0;       // softmax temperature
  double delta = 0.1;       // failure probability
  double ratio_bound = 4.0; // sup density ratio between data and augmentation
  GraphHyperParams hp;      // student hyperparameters
  double rad_f = 0.0;       // teacher-class complexity at size m
  double phi = 0.0;         // distillation distance
  double softmax_err = 0.0; // teacher training softmax error
  double c_tilde = 1.0;     // leading-constant policy knob

  void validate() const;
};

struct BoundTerm {
  std::string name;
  double value = 0.0;
};

struct BoundReport {
  std::string formula_id;
  double constant_policy = 1.0;
  std::vector<BoundTerm> terms;
  double total = 0.0;  // exact running sum of terms, in order

  double term(const std::string& name) const;
};

// Risk-transfer bound with externally supplied student complexities:
//   2 ratio phi + 2 err
//   + C [ (k^{3/2}/gamma) ratio (rad_f + rad_g_m) + (sqrt(k)/gamma) rad_g_n ]
//   + 6 sqrt(ln(1/delta)/(2n)) (1 + ratio sqrt(n/m))
BoundReport abstract_bound(const BoundInputs& bi, double rad_g_m, double rad_g_n);

// The same bound with both student complexities instantiated by rad_compgraph
// at sizes m and n. Hyperparameters are evaluated as measured and clamped;
// no shell search.
BoundReport full_bound_compgraph(const BoundInputs& bi);

// Width-insensitive complexity from per-layer spectral norms s_i and
// Frobenius norms R_i:
//   (X_frob / n^{3/4}) prod s_i [ sum (R_i/s_i)^{4/5} ]^{5/4} [ sum ln max(R_i, e) ]^{1/4}
// m_width is accepted for the record; its effect sits in suppressed log factors.
double stable_rank_rad(const std::vector<double>& spectral, const std::vector<double>& frobenius,
                       double x_frob, std::size_t n, std::size_t m_width);

// Product of per-layer Frobenius norms. Defined for plain chains only; a graph
// with a skip path (or any structure a chain cannot express) is refused.
double generalization_measure_frob(const DenseChain& chain);
double generalization_measure_frob(const CanonicalGraph& g);

std::string report_to_json(const BoundReport& report, const BoundInputs& bi);
std::string report_csv_header();
std::string report_csv_row(const BoundReport& report);

}  // namespace distillbound
