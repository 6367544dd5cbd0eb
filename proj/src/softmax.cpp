#include "distillbound/softmax.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace distillbound {

namespace {

void check_gamma(double gamma) {
  if (!(gamma > 0.0)) throw std::invalid_argument("softmax: gamma must be positive");
}

void check_labels(const DenseMatrix& logits, const std::vector<int>& labels) {
  if (labels.size() != logits.rows())
    throw std::invalid_argument("labels/logits row count mismatch");
  for (int y : labels)
    if (y < 0 || static_cast<std::size_t>(y) >= logits.cols())
      throw std::invalid_argument("label out of range");
}

}  // namespace

std::vector<double> softmax_gamma(std::span<const double> v, double gamma) {
  check_gamma(gamma);
  if (v.empty()) throw std::invalid_argument("softmax: empty logit vector");
  const double vmax = *std::max_element(v.begin(), v.end());
  std::vector<double> p(v.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    p[i] = std::exp((v[i] - vmax) / gamma);
    sum += p[i];
  }
  for (auto& x : p) x /= sum;
  return p;
}

DenseMatrix softmax_gamma_rows(const DenseMatrix& logits, double gamma) {
  check_gamma(gamma);
  DenseMatrix out(logits.rows(), logits.cols());
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    auto p = softmax_gamma(std::span<const double>(logits.row(i), logits.cols()), gamma);
    std::copy(p.begin(), p.end(), out.row(i));
  }
  return out;
}

DenseMatrix softmax_gamma_jacobian(std::span<const double> v, double gamma) {
  const auto p = softmax_gamma(v, gamma);
  const std::size_t k = p.size();
  DenseMatrix j(k, k);
  for (std::size_t a = 0; a < k; ++a)
    for (std::size_t b = 0; b < k; ++b)
      j(a, b) = ((a == b ? p[a] : 0.0) - p[a] * p[b]) / gamma;
  return j;
}

double distillation_distance(const DenseMatrix& f_logits, const DenseMatrix& g_logits,
                             double gamma) {
  check_gamma(gamma);
  if (f_logits.rows() != g_logits.rows() || f_logits.cols() != g_logits.cols())
    throw std::invalid_argument("distillation_distance: logit shapes differ");
  if (f_logits.rows() == 0) throw std::invalid_argument("distillation_distance: no rows");
  double total = 0.0;
  for (std::size_t i = 0; i < f_logits.rows(); ++i) {
    auto pf = softmax_gamma(std::span<const double>(f_logits.row(i), f_logits.cols()), gamma);
    auto pg = softmax_gamma(std::span<const double>(g_logits.row(i), g_logits.cols()), gamma);
    for (std::size_t c = 0; c < pf.size(); ++c) total += std::abs(pf[c] - pg[c]);
  }
  return total / static_cast<double>(f_logits.rows());
}

double softmax_error(const DenseMatrix& logits, const std::vector<int>& labels, double gamma) {
  check_gamma(gamma);
  check_labels(logits, labels);
  double total = 0.0;
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    auto p = softmax_gamma(std::span<const double>(logits.row(i), logits.cols()), gamma);
    total += 1.0 - p[static_cast<std::size_t>(labels[i])];
  }
  return total / static_cast<double>(logits.rows());
}

double ramp_scalar(double z, double gamma) {
  check_gamma(gamma);
  if (z <= 0.0) return 1.0;
  if (z >= gamma) return 0.0;
  return 1.0 - z / gamma;
}

std::vector<double> margins(const DenseMatrix& logits, const std::vector<int>& labels) {
  check_labels(logits, labels);
  if (logits.cols() < 2) throw std::invalid_argument("margins: need at least 2 classes");
  std::vector<double> out(logits.rows());
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    const auto y = static_cast<std::size_t>(labels[i]);
    double best_other = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < logits.cols(); ++c)
      if (c != y) best_other = std::max(best_other, logits(i, c));
    out[i] = logits(i, y) - best_other;
  }
  return out;
}

double ramp_margin_loss(const DenseMatrix& logits, const std::vector<int>& labels, double gamma) {
  check_gamma(gamma);
  const auto m = margins(logits, labels);
  double total = 0.0;
  for (double z : m) total += ramp_scalar(z, gamma);
  return total / static_cast<double>(m.size());
}

double zero_one_error(const DenseMatrix& logits, const std::vector<int>& labels) {
  const auto m = margins(logits, labels);
  double wrong = 0.0;
  for (double z : m)
    if (z <= 0.0) wrong += 1.0;  // tie = error
  return wrong / static_cast<double>(m.size());
}

double quantile(std::vector<double> values, double p) {
  if (values.empty()) throw std::invalid_argument("quantile: empty");
  if (p < 0.0 || p > 1.0) throw std::invalid_argument("quantile: p outside [0,1]");
  std::sort(values.begin(), values.end());
  const auto n = static_cast<double>(values.size());
  auto idx = static_cast<std::ptrdiff_t>(std::ceil(p * n)) - 1;
  idx = std::clamp<std::ptrdiff_t>(idx, 0, static_cast<std::ptrdiff_t>(values.size()) - 1);
  return values[static_cast<std::size_t>(idx)];
}

MarginHistogram margin_histogram(const std::vector<double>& raw_margins, double normalizer,
                                 int bins) {
  if (raw_margins.empty()) throw std::invalid_argument("margin_histogram: no margins");
  if (!(normalizer > 0.0)) throw std::invalid_argument("margin_histogram: normalizer must be > 0");
  if (bins < 1) throw std::invalid_argument("margin_histogram: bins must be >= 1");

  std::vector<double> norm(raw_margins.size());
  for (std::size_t i = 0; i < raw_margins.size(); ++i) norm[i] = raw_margins[i] / normalizer;

  double lo = *std::min_element(norm.begin(), norm.end());
  double hi = *std::max_element(norm.begin(), norm.end());
  if (lo == hi) {  // degenerate range: widen so the single value sits mid-bin
    lo -= 0.5;
    hi += 0.5;
  }

  MarginHistogram h;
  h.normalizer = normalizer;
  h.n = norm.size();
  h.q10 = quantile(norm, 0.10);
  h.q50 = quantile(norm, 0.50);
  h.edges.resize(static_cast<std::size_t>(bins) + 1);
  h.counts.assign(static_cast<std::size_t>(bins), 0);
  const double width = (hi - lo) / bins;
  for (int b = 0; b <= bins; ++b) h.edges[static_cast<std::size_t>(b)] = lo + width * b;
  for (double x : norm) {
    auto b = static_cast<std::ptrdiff_t>((x - lo) / width);
    b = std::clamp<std::ptrdiff_t>(b, 0, bins - 1);
    ++h.counts[static_cast<std::size_t>(b)];
  }
  return h;
}

MarginHistogram margin_histogram(const DenseMatrix& logits, const std::vector<int>& labels,
                                 double normalizer, int bins) {
  return margin_histogram(margins(logits, labels), normalizer, bins);
}

}  // namespace distillbound
