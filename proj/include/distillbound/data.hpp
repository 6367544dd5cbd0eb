#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "distillbound/matrix.hpp"

namespace distillbound {

struct Dataset {
  DenseMatrix x_train;
  std::vector<int> y_train;
  DenseMatrix x_test;
  std::vector<int> y_test;
  std::size_t classes = 0;
};

// k Gaussian clusters clipped to the unit cube. Centers sit on an arc away
// from the origin (first two coordinates), remaining coordinates at 0.5, so
// bias-free classifiers can separate them. Requires d >= 2.
Dataset make_blobs(std::size_t n_train, std::size_t n_test, std::size_t d, std::size_t k,
                   std::uint64_t seed);

// Two concentric annuli around (0.5, 0.5) in the first two coordinates; every
// further coordinate is the constant 1, which stands in for a bias term.
// Requires d >= 3.
Dataset make_ring(std::size_t n_train, std::size_t n_test, std::size_t d, std::uint64_t seed);

// Applies a cyclic shift to the labels at floor(fraction * n) seeded
// positions and fixes the rest. fraction = 0 returns the input unchanged.
std::vector<int> permute_labels(const std::vector<int>& y, double fraction, std::uint64_t seed);

struct IdxData {
  DenseMatrix images;  // one row per image, pixels scaled to [0, 1]
  std::vector<int> labels;
};

// IDX image/label pair (big-endian, magics 0x00000803 / 0x00000801).
// Structured errors on bad magic, truncation, or count mismatch.
IdxData load_idx(const std::filesystem::path& image_path,
                 const std::filesystem::path& label_path);

}  // namespace distillbound
