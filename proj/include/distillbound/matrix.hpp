#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <initializer_list>
#include <vector>

namespace distillbound {

// Dense row-major double matrix. Small and deliberately boring: every
// experiment in this project fits in a few MB, so there is no view/expression
// machinery, just owned storage and plain loops.
class DenseMatrix {
 public:
  DenseMatrix() : rows_(0), cols_(0) {}
  DenseMatrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  static DenseMatrix from_rows(std::initializer_list<std::initializer_list<double>> rows);
  static DenseMatrix identity(std::size_t n);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  const double* row(std::size_t i) const { return data_.data() + i * cols_; }
  double* row(std::size_t i) { return data_.data() + i * cols_; }

  bool operator==(const DenseMatrix& other) const = default;

 private:
  std::size_t rows_, cols_;
  std::vector<double> data_;
};

DenseMatrix matmul(const DenseMatrix& a, const DenseMatrix& b);      // a*b
DenseMatrix matmul_nt(const DenseMatrix& a, const DenseMatrix& b);   // a*b^T
DenseMatrix matmul_tn(const DenseMatrix& a, const DenseMatrix& b);   // a^T*b
DenseMatrix transpose(const DenseMatrix& a);
DenseMatrix add(const DenseMatrix& a, const DenseMatrix& b);
DenseMatrix sub(const DenseMatrix& a, const DenseMatrix& b);
DenseMatrix scale(const DenseMatrix& a, double c);

double frobenius_norm(const DenseMatrix& a);

// Largest singular value by power iteration on the Gram matrix (the smaller
// of A^T A / A A^T). Deterministic: the start vector comes from `seed`.
// Throws ConvergenceError when the relative change has not dropped below
// `tol` within `max_iter` iterations.
double spectral_norm(const DenseMatrix& a, double tol = 1e-9, int max_iter = 10000,
                     std::uint64_t seed = 0x5eedULL);

// Sum of the l2 norms of the columns of `a`, i.e. ||a^T||_{2,1}. This is the
// orientation the trainable-layer bounds use throughout.
double norm21_of_transpose(const DenseMatrix& a);

// ||a||_F^2 / ||a||_2^2, defined as 0 for the zero matrix.
double stable_rank(const DenseMatrix& a, double tol = 1e-9, int max_iter = 10000);

// Euclidean projection onto the Frobenius ball of the given radius.
DenseMatrix project_frobenius(const DenseMatrix& a, double radius);

struct NormProfile {
  double frobenius;
  double spectral;
  double norm21;      // of the transpose, see above
  double stable_rank;
};
NormProfile norm_profile(const DenseMatrix& a);

// Binary matrix file: magic "DBM1", u32 rows, u32 cols, row-major f64, all
// little-endian. Structured errors on bad magic / truncation.
void write_dbm(const std::filesystem::path& path, const DenseMatrix& a);
DenseMatrix read_dbm(const std::filesystem::path& path);

}  // namespace distillbound
