#include "distillbound/bounds.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "json.hpp"

#include "distillbound/error.hpp"
#include "distillbound/format.hpp"

namespace distillbound {
namespace {

// sum_i (r_i b_i rho_i prod_{l>i} s_l rho_l)^{2/3}, the layer-mass series
// shared by the Rademacher and covering formulas.
double layer_series(const GraphHyperParams& hp) {
  const std::size_t depth = hp.r.size();
  if (depth == 0 || hp.b.size() != depth || hp.rho.size() != depth || hp.s.size() != depth)
    throw ConfigError("bounds: hyperparameter vectors must be nonempty and aligned");
  for (std::size_t i = 0; i < depth; ++i) {
    if (!(hp.r[i] > 0.0) || !(hp.b[i] > 0.0) || !(hp.rho[i] > 0.0) || !(hp.s[i] > 0.0))
      throw ConfigError("bounds: every hyperparameter must be positive");
  }
  double series = 0.0;
  for (std::size_t i = 0; i < depth; ++i) {
    double suffix = 1.0;
    for (std::size_t l = i + 1; l < depth; ++l) suffix *= hp.s[l] * hp.rho[l];
    series += std::pow(hp.r[i] * hp.b[i] * hp.rho[i] * suffix, 2.0 / 3.0);
  }
  return series;
}

double width_log(const GraphHyperParams& hp) {
  if (hp.width_max < 1) throw ConfigError("bounds: width_max must be at least 1");
  const double m = static_cast<double>(hp.width_max);
  return std::log(2.0 * m * m);
}

void push_term(BoundReport& report, const std::string& name, double value) {
  report.terms.push_back({name, value});
  report.total += value;
}

}  // namespace

double rad_compgraph(const GraphHyperParams& hp, std::size_t n) {
  if (n < 1) throw ConfigError("rad_compgraph: n must be at least 1");
  const double series = layer_series(hp);
  const double nn = static_cast<double>(n);
  return 4.0 / nn + 12.0 * std::sqrt(width_log(hp) / nn) * std::pow(series, 1.5);
}

double covering_log_cardinality(const GraphHyperParams& hp, std::size_t n, double eps) {
  if (n < 1) throw ConfigError("covering_log_cardinality: n must be at least 1");
  if (!(eps > 0.0)) throw ConfigError("covering_log_cardinality: eps must be positive");
  const double series = layer_series(hp);
  const double nn = static_cast<double>(n);
  return std::pow(2.0, 4.0 / 3.0) * nn * width_log(hp) / (eps * eps) * std::pow(series, 3.0);
}

double dudley_rad_from_cover(double tau, std::size_t n) {
  if (tau < 0.0) throw ConfigError("dudley_rad_from_cover: tau must be nonnegative");
  if (n < 1) throw ConfigError("dudley_rad_from_cover: n must be at least 1");
  return 12.0 * std::max(tau, 1.0 / 3.0) / static_cast<double>(n);
}

void BoundInputs::validate() const {
  if (n < 1 || m < 1) throw ConfigError("bound inputs: sample counts must be at least 1");
  if (k < 1) throw ConfigError("bound inputs: class count must be at least 1");
  if (!(gamma > 0.0)) throw ConfigError("bound inputs: temperature must be positive");
  if (!(delta > 0.0) || !(delta < 1.0))
    throw ConfigError("bound inputs: failure probability must lie in (0, 1)");
  if (ratio_bound < 0.0 || rad_f < 0.0 || phi < 0.0 || softmax_err < 0.0 || c_tilde < 0.0)
    throw ConfigError("bound inputs: measured quantities must be nonnegative");
}

double BoundReport::term(const std::string& name) const {
  for (const BoundTerm& t : terms)
    if (t.name == name) return t.value;
  throw ConfigError("bound report: no term named " + name);
}

BoundReport abstract_bound(const BoundInputs& bi, double rad_g_m, double rad_g_n) {
  bi.validate();
  if (rad_g_m < 0.0 || rad_g_n < 0.0)
    throw ConfigError("abstract_bound: complexities must be nonnegative");

  const double k = static_cast<double>(bi.k);
  const double nn = static_cast<double>(bi.n);
  const double mm = static_cast<double>(bi.m);

  BoundReport report;
  report.formula_id = "risk_transfer";
  report.constant_policy = bi.c_tilde;
  push_term(report, "distillation", 2.0 * bi.ratio_bound * bi.phi);
  push_term(report, "softmax_error", 2.0 * bi.softmax_err);
  const double k32_over_gamma = std::pow(k, 1.5) / bi.gamma;
  push_term(report, "rad_f", bi.c_tilde * k32_over_gamma * bi.ratio_bound * bi.rad_f);
  push_term(report, "rad_g_m", bi.c_tilde * k32_over_gamma * bi.ratio_bound * rad_g_m);
  push_term(report, "rad_g_n", bi.c_tilde * std::sqrt(k) / bi.gamma * rad_g_n);
  push_term(report, "confidence",
            6.0 * std::sqrt(std::log(1.0 / bi.delta) / (2.0 * nn)) *
                (1.0 + bi.ratio_bound * std::sqrt(nn / mm)));
  return report;
}

BoundReport full_bound_compgraph(const BoundInputs& bi) {
  bi.validate();
  const double rad_g_m = rad_compgraph(bi.hp, bi.m);
  const double rad_g_n = rad_compgraph(bi.hp, bi.n);
  BoundReport report = abstract_bound(bi, rad_g_m, rad_g_n);
  report.formula_id = "risk_transfer_compgraph";
  return report;
}

double stable_rank_rad(const std::vector<double>& spectral, const std::vector<double>& frobenius,
                       double x_frob, std::size_t n, std::size_t m_width) {
  if (spectral.empty() || spectral.size() != frobenius.size())
    throw ConfigError("stable_rank_rad: need aligned, nonempty norm vectors");
  if (x_frob < 0.0) throw ConfigError("stable_rank_rad: batch norm must be nonnegative");
  if (n < 1) throw ConfigError("stable_rank_rad: n must be at least 1");
  if (m_width < 1) throw ConfigError("stable_rank_rad: width must be at least 1");

  double prod_s = 1.0;
  double ratio_series = 0.0;
  double log_series = 0.0;
  for (std::size_t i = 0; i < spectral.size(); ++i) {
    const double s = spectral[i];
    const double r = frobenius[i];
    if (!(s > 0.0)) throw ConfigError("stable_rank_rad: spectral norms must be positive");
    if (r < s * (1.0 - 1e-12))
      throw ConfigError("stable_rank_rad: Frobenius norm below spectral norm");
    prod_s *= s;
    ratio_series += std::pow(r / s, 0.8);
    log_series += std::log(std::max(r, std::exp(1.0)));
  }
  const double nn = static_cast<double>(n);
  return x_frob / std::pow(nn, 0.75) * prod_s * std::pow(ratio_series, 1.25) *
         std::pow(log_series, 0.25);
}

double generalization_measure_frob(const DenseChain& chain) {
  chain.validate();
  if (chain.weights.empty()) throw ConfigError("frobenius measure: empty chain");
  double prod = 1.0;
  for (const DenseMatrix& w : chain.weights) prod *= frobenius_norm(w);
  return prod;
}

double generalization_measure_frob(const CanonicalGraph& g) {
  for (std::size_t i = 0; i < g.layers.size(); ++i) {
    const GraphLayer& layer = g.layers[i];
    const bool elementwise =
        layer.gate.kind == GateKind::relu || layer.gate.kind == GateKind::identity;
    if (layer.F.rows() != 0 || !layer.selector.empty() || !elementwise)
      throw ConfigError(
          "frobenius measure: defined for plain chains only; a skip path makes the product of "
          "Frobenius norms meaningless (a zero block zeroes the measure while the network still "
          "computes)");
  }
  double prod = 1.0;
  for (const GraphLayer& layer : g.layers) prod *= frobenius_norm(layer.W);
  return prod;
}

std::string report_to_json(const BoundReport& report, const BoundInputs& bi) {
  nlohmann::json j;
  j["formula"] = report.formula_id;
  j["constant_policy"] = report.constant_policy;
  j["total"] = report.total;
  nlohmann::json terms = nlohmann::json::object();
  for (const BoundTerm& t : report.terms) terms[t.name] = t.value;
  j["terms"] = terms;
  j["inputs"] = {{"n", bi.n},       {"m", bi.m},
                 {"k", bi.k},       {"gamma", bi.gamma},
                 {"delta", bi.delta}, {"ratio_bound", bi.ratio_bound},
                 {"rad_f", bi.rad_f}, {"phi", bi.phi},
                 {"softmax_err", bi.softmax_err}};
  return j.dump(2);
}

std::string report_csv_header() {
  return "# columns: formula,distillation,softmax_error,rad_f,rad_g_m,rad_g_n,confidence,total";
}

std::string report_csv_row(const BoundReport& report) {
  std::ostringstream row;
  row << report.formula_id;
  for (const char* name :
       {"distillation", "softmax_error", "rad_f", "rad_g_m", "rad_g_n", "confidence"})
    row << ',' << g17(report.term(name));
  row << ',' << g17(report.total);
  return row.str();
}

}  // namespace distillbound
