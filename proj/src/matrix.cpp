#include "distillbound/matrix.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>

#include "distillbound/error.hpp"
#include "distillbound/rng.hpp"

namespace distillbound {

DenseMatrix DenseMatrix::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r == 0 ? 0 : rows.begin()->size();
  DenseMatrix out(r, c);
  std::size_t i = 0;
  for (const auto& row : rows) {
    if (row.size() != c) throw std::invalid_argument("from_rows: ragged rows");
    std::size_t j = 0;
    for (double v : row) out(i, j++) = v;
    ++i;
  }
  return out;
}

DenseMatrix DenseMatrix::identity(std::size_t n) {
  DenseMatrix out(n, n);
  for (std::size_t i = 0; i < n; ++i) out(i, i) = 1.0;
  return out;
}

static void check_mul(std::size_t inner_a, std::size_t inner_b, const char* who) {
  if (inner_a != inner_b)
    throw std::invalid_argument(std::string(who) + ": inner dimensions " +
                                std::to_string(inner_a) + " vs " + std::to_string(inner_b));
}

DenseMatrix matmul(const DenseMatrix& a, const DenseMatrix& b) {
  check_mul(a.cols(), b.rows(), "matmul");
  DenseMatrix out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const double* ai = a.row(i);
    double* oi = out.row(i);
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = ai[k];
      if (aik == 0.0) continue;
      const double* bk = b.row(k);
      for (std::size_t j = 0; j < b.cols(); ++j) oi[j] += aik * bk[j];
    }
  }
  return out;
}

DenseMatrix matmul_nt(const DenseMatrix& a, const DenseMatrix& b) {
  check_mul(a.cols(), b.cols(), "matmul_nt");
  DenseMatrix out(a.rows(), b.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const double* ai = a.row(i);
    for (std::size_t j = 0; j < b.rows(); ++j) {
      const double* bj = b.row(j);
      double s = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k) s += ai[k] * bj[k];
      out(i, j) = s;
    }
  }
  return out;
}

DenseMatrix matmul_tn(const DenseMatrix& a, const DenseMatrix& b) {
  check_mul(a.rows(), b.rows(), "matmul_tn");
  DenseMatrix out(a.cols(), b.cols());
  for (std::size_t k = 0; k < a.rows(); ++k) {
    const double* ak = a.row(k);
    const double* bk = b.row(k);
    for (std::size_t i = 0; i < a.cols(); ++i) {
      const double aki = ak[i];
      if (aki == 0.0) continue;
      double* oi = out.row(i);
      for (std::size_t j = 0; j < b.cols(); ++j) oi[j] += aki * bk[j];
    }
  }
  return out;
}

DenseMatrix transpose(const DenseMatrix& a) {
  DenseMatrix out(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) out(j, i) = a(i, j);
  return out;
}

static void check_same_shape(const DenseMatrix& a, const DenseMatrix& b, const char* who) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw std::invalid_argument(std::string(who) + ": shape mismatch");
}

DenseMatrix add(const DenseMatrix& a, const DenseMatrix& b) {
  check_same_shape(a, b, "add");
  DenseMatrix out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] += b.data()[i];
  return out;
}

DenseMatrix sub(const DenseMatrix& a, const DenseMatrix& b) {
  check_same_shape(a, b, "sub");
  DenseMatrix out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] -= b.data()[i];
  return out;
}

DenseMatrix scale(const DenseMatrix& a, double c) {
  DenseMatrix out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] *= c;
  return out;
}

double frobenius_norm(const DenseMatrix& a) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a.data()[i] * a.data()[i];
  return std::sqrt(s);
}

namespace {

// Gram matrix of the smaller side so power iteration runs on a
// min(rows,cols)^2 problem.
DenseMatrix gram_small(const DenseMatrix& a) {
  return a.rows() >= a.cols() ? matmul_tn(a, a) : matmul_nt(a, a);
}

}  // namespace

double spectral_norm(const DenseMatrix& a, double tol, int max_iter, std::uint64_t seed) {
  if (a.empty()) return 0.0;
  if (frobenius_norm(a) == 0.0) return 0.0;
  const DenseMatrix g = gram_small(a);
  const std::size_t n = g.rows();

  auto engine = make_engine(splitmix64(seed));
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<double> v(n);
  double vnorm = 0.0;
  while (vnorm == 0.0) {
    for (auto& x : v) x = gauss(engine);
    vnorm = 0.0;
    for (double x : v) vnorm += x * x;
    vnorm = std::sqrt(vnorm);
  }
  for (auto& x : v) x /= vnorm;

  std::vector<double> w(n);
  double lambda_prev = 0.0;
  for (int it = 0; it < max_iter; ++it) {
    for (std::size_t i = 0; i < n; ++i) {
      double s = 0.0;
      const double* gi = g.row(i);
      for (std::size_t j = 0; j < n; ++j) s += gi[j] * v[j];
      w[i] = s;
    }
    double wnorm = 0.0, lambda = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      wnorm += w[i] * w[i];
      lambda += v[i] * w[i];
    }
    wnorm = std::sqrt(wnorm);
    if (wnorm == 0.0) {
      // v landed in the null space; restart from a fresh direction.
      for (auto& x : v) x = gauss(engine);
      double nn = 0.0;
      for (double x : v) nn += x * x;
      nn = std::sqrt(nn);
      if (nn == 0.0) return 0.0;
      for (auto& x : v) x /= nn;
      continue;
    }
    for (std::size_t i = 0; i < n; ++i) v[i] = w[i] / wnorm;
    if (it > 0 && std::abs(lambda - lambda_prev) <= tol * std::max(std::abs(lambda), 1e-300))
      return std::sqrt(std::max(lambda, 0.0));
    lambda_prev = lambda;
  }
  throw ConvergenceError("spectral_norm: power iteration did not converge in " +
                             std::to_string(max_iter) + " iterations",
                         std::sqrt(std::max(lambda_prev, 0.0)));
}

double norm21_of_transpose(const DenseMatrix& a) {
  double total = 0.0;
  for (std::size_t j = 0; j < a.cols(); ++j) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.rows(); ++i) s += a(i, j) * a(i, j);
    total += std::sqrt(s);
  }
  return total;
}

double stable_rank(const DenseMatrix& a, double tol, int max_iter) {
  const double f = frobenius_norm(a);
  if (f == 0.0) return 0.0;
  const double s = spectral_norm(a, tol, max_iter);
  return (f * f) / (s * s);
}

DenseMatrix project_frobenius(const DenseMatrix& a, double radius) {
  if (radius < 0.0) throw std::invalid_argument("project_frobenius: negative radius");
  const double f = frobenius_norm(a);
  if (f <= radius) return a;
  return scale(a, radius / f);
}

NormProfile norm_profile(const DenseMatrix& a) {
  return NormProfile{frobenius_norm(a), spectral_norm(a), norm21_of_transpose(a),
                     stable_rank(a)};
}

namespace {

constexpr char kMagic[4] = {'D', 'B', 'M', '1'};

void put_u32_le(std::ofstream& out, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>((v >> 8) & 0xff),
                        static_cast<unsigned char>((v >> 16) & 0xff),
                        static_cast<unsigned char>((v >> 24) & 0xff)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32_le(std::ifstream& in) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

void put_f64_le(std::ofstream& out, double v) {
  std::uint64_t u;
  std::memcpy(&u, &v, 8);
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((u >> (8 * i)) & 0xff);
  out.write(reinterpret_cast<const char*>(b), 8);
}

double get_f64_le(const unsigned char* b) {
  std::uint64_t u = 0;
  for (int i = 0; i < 8; ++i) u |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  double v;
  std::memcpy(&v, &u, 8);
  return v;
}

}  // namespace

void write_dbm(const std::filesystem::path& path, const DenseMatrix& a) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("write_dbm: cannot open " + path.string());
  out.write(kMagic, 4);
  put_u32_le(out, static_cast<std::uint32_t>(a.rows()));
  put_u32_le(out, static_cast<std::uint32_t>(a.cols()));
  for (std::size_t i = 0; i < a.size(); ++i) put_f64_le(out, a.data()[i]);
  if (!out) throw ConfigError("write_dbm: write failed for " + path.string());
}

DenseMatrix read_dbm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("read_dbm: cannot open " + path.string());
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kMagic, 4) != 0)
    throw ConfigError("read_dbm: bad magic in " + path.string());
  const std::uint32_t rows = get_u32_le(in);
  const std::uint32_t cols = get_u32_le(in);
  if (!in) throw ConfigError("read_dbm: truncated header in " + path.string());
  DenseMatrix out(rows, cols);
  std::vector<unsigned char> buf(static_cast<std::size_t>(rows) * cols * 8);
  in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (in.gcount() != static_cast<std::streamsize>(buf.size()))
    throw ConfigError("read_dbm: truncated payload in " + path.string());
  for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] = get_f64_le(buf.data() + 8 * i);
  return out;
}

}  // namespace distillbound
