#pragma once

#include <span>
#include <vector>

#include "distillbound/matrix.hpp"

namespace distillbound {

// Temperature softmax phi_gamma(v) with phi_gamma(v)_i proportional to
// exp(v_i / gamma). Computed max-subtracted; gamma must be positive.
std::vector<double> softmax_gamma(std::span<const double> v, double gamma);

// Row-wise softmax of a logits matrix (n x k).
DenseMatrix softmax_gamma_rows(const DenseMatrix& logits, double gamma);

// Jacobian of phi_gamma at v: J_{ab} = (delta_{ab} p_a - p_a p_b) / gamma.
DenseMatrix softmax_gamma_jacobian(std::span<const double> v, double gamma);

// Mean l1 distance between the softmaxed rows of two logit matrices:
// (1/m) sum_i || phi(f_i) - phi(g_i) ||_1. Rows must align.
double distillation_distance(const DenseMatrix& f_logits, const DenseMatrix& g_logits,
                             double gamma);

// (1/n) sum_i (1 - phi_gamma(v_i)_{y_i}).
double softmax_error(const DenseMatrix& logits, const std::vector<int>& labels, double gamma);

// Ramp: 1 for z <= 0, 1 - z/gamma on (0, gamma), 0 for z >= gamma.
double ramp_scalar(double z, double gamma);

// Mean ramp loss of the label margins v_y - max_{j != y} v_j.
double ramp_margin_loss(const DenseMatrix& logits, const std::vector<int>& labels, double gamma);

// Raw label margins, one per row.
std::vector<double> margins(const DenseMatrix& logits, const std::vector<int>& labels);

// Fraction of rows where the label is not the unique argmax. Ties count as
// errors everywhere in this project.
double zero_one_error(const DenseMatrix& logits, const std::vector<int>& labels);

// Lower empirical quantile: sorted[ceil(p*n) - 1], clamped into range.
double quantile(std::vector<double> values, double p);

struct MarginHistogram {
  std::vector<double> edges;        // bins+1 edges, equal width
  std::vector<std::size_t> counts;  // bins entries
  double normalizer;                // what raw margins were divided by
  double q10;                       // 10% quantile of normalized margins
  double q50;
  std::size_t n;
};

// Histogram of raw_margins / normalizer over 64 equal-width bins spanning the
// observed range. The 10% quantile comes from the raw values, not the bins.
MarginHistogram margin_histogram(const std::vector<double>& raw_margins, double normalizer,
                                 int bins = 64);
MarginHistogram margin_histogram(const DenseMatrix& logits, const std::vector<int>& labels,
                                 double normalizer, int bins = 64);

}  // namespace distillbound
