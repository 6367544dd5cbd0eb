#include "distillbound/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>

#include "distillbound/error.hpp"
#include "distillbound/rng.hpp"

namespace distillbound {
namespace {

constexpr double kPi = 3.14159265358979323846;

double clip01(double v) { return std::min(1.0, std::max(0.0, v)); }

// Class centers on the arc from 18 to 72 degrees at radius 0.85, so every
// center keeps a wide angle both to the axes and to its neighbors.
std::vector<std::vector<double>> blob_centers(std::size_t d, std::size_t k) {
  std::vector<std::vector<double>> centers(k, std::vector<double>(d, 0.5));
  for (std::size_t c = 0; c < k; ++c) {
    const double t = k == 1 ? 0.0 : static_cast<double>(c) / static_cast<double>(k - 1);
    const double theta = (18.0 + 54.0 * t) * kPi / 180.0;
    centers[c][0] = 0.85 * std::cos(theta);
    centers[c][1] = 0.85 * std::sin(theta);
  }
  return centers;
}

void fill_blob_split(DenseMatrix& x, std::vector<int>& y,
                     const std::vector<std::vector<double>>& centers, std::size_t k,
                     std::mt19937_64& eng) {
  const double noise = 0.07;
  for (std::size_t i = 0; i < x.rows(); ++i) {
    const auto label = static_cast<int>(i % k);
    y[i] = label;
    for (std::size_t j = 0; j < x.cols(); ++j)
      x(i, j) = clip01(centers[label][j] + noise * standard_normal(eng));
  }
}

void fill_ring_split(DenseMatrix& x, std::vector<int>& y, std::mt19937_64& eng) {
  for (std::size_t i = 0; i < x.rows(); ++i) {
    const int label = static_cast<int>(i % 2);
    y[i] = label;
    const double theta = 2.0 * kPi * canonical_unit(eng);
    const double radius = (label == 0 ? 0.22 : 0.42) + 0.03 * standard_normal(eng);
    x(i, 0) = clip01(0.5 + radius * std::cos(theta));
    x(i, 1) = clip01(0.5 + radius * std::sin(theta));
    for (std::size_t j = 2; j < x.cols(); ++j) x(i, j) = 1.0;
  }
}

std::uint32_t read_u32_be(std::istream& in, const char* what) {
  unsigned char bytes[4];
  in.read(reinterpret_cast<char*>(bytes), 4);
  if (in.gcount() != 4) throw ConfigError(std::string("idx: truncated ") + what);
  return (static_cast<std::uint32_t>(bytes[0]) << 24) |
         (static_cast<std::uint32_t>(bytes[1]) << 16) |
         (static_cast<std::uint32_t>(bytes[2]) << 8) | static_cast<std::uint32_t>(bytes[3]);
}

}  // namespace

Dataset make_blobs(std::size_t n_train, std::size_t n_test, std::size_t d, std::size_t k,
                   std::uint64_t seed) {
  if (d < 2) throw ConfigError("make_blobs: need at least 2 dimensions");
  if (k < 2) throw ConfigError("make_blobs: need at least 2 classes");
  if (n_train < k || n_test < 1) throw ConfigError("make_blobs: split sizes too small");

  const auto centers = blob_centers(d, k);
  Dataset ds;
  ds.classes = k;
  ds.x_train = DenseMatrix(n_train, d);
  ds.y_train.resize(n_train);
  ds.x_test = DenseMatrix(n_test, d);
  ds.y_test.resize(n_test);

  auto train_eng = make_engine(derive_seed(seed, "blobs-train"));
  auto test_eng = make_engine(derive_seed(seed, "blobs-test"));
  fill_blob_split(ds.x_train, ds.y_train, centers, k, train_eng);
  fill_blob_split(ds.x_test, ds.y_test, centers, k, test_eng);
  return ds;
}

Dataset make_ring(std::size_t n_train, std::size_t n_test, std::size_t d, std::uint64_t seed) {
  if (d < 3) throw ConfigError("make_ring: need at least 3 dimensions (third carries the bias)");
  if (n_train < 2 || n_test < 1) throw ConfigError("make_ring: split sizes too small");

  Dataset ds;
  ds.classes = 2;
  ds.x_train = DenseMatrix(n_train, d);
  ds.y_train.resize(n_train);
  ds.x_test = DenseMatrix(n_test, d);
  ds.y_test.resize(n_test);

  auto train_eng = make_engine(derive_seed(seed, "ring-train"));
  auto test_eng = make_engine(derive_seed(seed, "ring-test"));
  fill_ring_split(ds.x_train, ds.y_train, train_eng);
  fill_ring_split(ds.x_test, ds.y_test, test_eng);
  return ds;
}

std::vector<int> permute_labels(const std::vector<int>& y, double fraction, std::uint64_t seed) {
  if (fraction < 0.0 || fraction > 1.0)
    throw ConfigError("permute_labels: fraction must lie in [0, 1]");
  const auto count =
      static_cast<std::size_t>(std::floor(fraction * static_cast<double>(y.size())));
  std::vector<int> out = y;
  if (count < 2) return out;  // a 1-cycle cannot move anything

  // Seeded choice of `count` positions (partial Fisher-Yates), then a cyclic
  // shift of the labels through those positions: no chosen position keeps its
  // own label slot.
  std::vector<std::size_t> idx(y.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  auto eng = make_engine(derive_seed(seed, "permute"));
  for (std::size_t i = 0; i < count; ++i) {
    const auto j =
        i + static_cast<std::size_t>(canonical_unit(eng) * static_cast<double>(idx.size() - i));
    std::swap(idx[i], idx[std::min(j, idx.size() - 1)]);
  }
  const int first = out[idx[0]];
  for (std::size_t i = 0; i + 1 < count; ++i) out[idx[i]] = out[idx[i + 1]];
  out[idx[count - 1]] = first;
  return out;
}

IdxData load_idx(const std::filesystem::path& image_path,
                 const std::filesystem::path& label_path) {
  std::ifstream images(image_path, std::ios::binary);
  if (!images) throw ConfigError("idx: cannot open image file " + image_path.string());
  if (read_u32_be(images, "image magic") != 0x00000803u)
    throw ConfigError("idx: bad image magic in " + image_path.string());
  const std::uint32_t count = read_u32_be(images, "image count");
  const std::uint32_t rows = read_u32_be(images, "image rows");
  const std::uint32_t cols = read_u32_be(images, "image cols");

  IdxData data;
  data.images = DenseMatrix(count, static_cast<std::size_t>(rows) * cols);
  std::vector<unsigned char> pixel_row(static_cast<std::size_t>(rows) * cols);
  for (std::uint32_t i = 0; i < count; ++i) {
    images.read(reinterpret_cast<char*>(pixel_row.data()),
                static_cast<std::streamsize>(pixel_row.size()));
    if (images.gcount() != static_cast<std::streamsize>(pixel_row.size()))
      throw ConfigError("idx: truncated pixel data in " + image_path.string());
    for (std::size_t j = 0; j < pixel_row.size(); ++j)
      data.images(i, j) = static_cast<double>(pixel_row[j]) / 255.0;
  }

  std::ifstream labels(label_path, std::ios::binary);
  if (!labels) throw ConfigError("idx: cannot open label file " + label_path.string());
  if (read_u32_be(labels, "label magic") != 0x00000801u)
    throw ConfigError("idx: bad label magic in " + label_path.string());
  const std::uint32_t label_count = read_u32_be(labels, "label count");
  if (label_count != count)
    throw ConfigError("idx: label count does not match image count");
  data.labels.resize(label_count);
  for (std::uint32_t i = 0; i < label_count; ++i) {
    char byte;
    labels.read(&byte, 1);
    if (labels.gcount() != 1) throw ConfigError("idx: truncated labels in " + label_path.string());
    data.labels[i] = static_cast<unsigned char>(byte);
  }
  return data;
}

}  // namespace distillbound
