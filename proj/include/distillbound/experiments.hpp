#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "distillbound/data.hpp"
#include "distillbound/train.hpp"

namespace distillbound {

struct DatasetSpec {
  std::string source = "synthetic_blobs";  // synthetic_blobs | synthetic_ring | idx_files
  std::size_t n_train = 256;
  std::size_t n_test = 256;
  std::size_t d = 3;
  std::size_t k = 2;
  double label_permute_fraction = 0.0;
  std::string images, labels, test_images, test_labels;  // idx_files only
};

struct AugmentSpec {
  double alpha = 1.0;
  std::size_t m = 0;                 // 0 means 4 * n_train
  std::string ratio_mode = "fixed";  // fixed | formula
  double ratio_value = 4.0;
  double ratio_constant = 1.0;
};

struct SparsifyCliSpec {
  std::size_t rows_a = 20;
  std::size_t rows_b = 30;
  std::size_t cols = 50;
  std::size_t k = 25;
  std::size_t draws = 32;
  std::size_t trials = 20;
};

// One JSON document configures every subcommand; defaults are materialized
// back into `materialized` so emitted manifests are self-describing.
struct ExperimentConfig {
  std::string experiment = "ladder";
  std::uint64_t seed = 1;
  std::string out = "out";
  double gamma = 0.0;  // required in the document; no claimed default
  DatasetSpec dataset;
  std::vector<std::size_t> hidden{64};
  TrainConfig train;    // teacher training
  LadderConfig ladder;  // rung optimization lives in ladder.step
  AugmentSpec augment;
  std::vector<std::size_t> sweep_widths{16, 64, 256};
  std::vector<double> fractions{0.0, 0.25, 0.5, 0.75, 1.0};
  std::size_t parallel = 1;

  std::string model_path;    // bounds subcommand input
  std::string anchors_path;  // augment subcommand input (DBM1)
  std::size_t augment_samples = 128;
  SparsifyCliSpec sparsify;

  std::string materialized;  // defaults-filled JSON document
  std::string config_hash;   // fnv1a64 of `materialized`, hex
};

ExperimentConfig parse_config(const std::string& json_text);
ExperimentConfig load_config(const std::filesystem::path& path);

std::string fnv1a_hex(std::string_view text);

// One dataset/train/distill unit. `width` replaces every hidden layer width
// when nonzero; `fraction` permutes that share of the training labels. The
// width-sweep and label-permutation experiments both run exactly this, so a
// fraction-0 cell at the same width and seed is identical between them.
struct CellResult {
  Dataset data;
  std::vector<int> y_train_used;  // after label permutation
  DenseChain f;
  DistillationTrace trace;
  double pre_q10 = 0.0, post_q10 = 0.0;
  double pre_q50 = 0.0, post_q50 = 0.0;
  std::string pre_hist_csv, post_hist_csv;
  std::string pre_meta_json, post_meta_json;
  std::string trace_csv;
};

std::uint64_t cell_seed(const ExperimentConfig& cfg, std::size_t width, double fraction);
CellResult run_cell(const ExperimentConfig& cfg, std::size_t width, double fraction,
                    std::uint64_t seed);

// Experiment runners; each writes artifacts plus a manifest under cfg.out and
// returns that directory. On error a failure manifest is written and the
// exception propagates.
std::filesystem::path run_ladder(const ExperimentConfig& cfg);
std::filesystem::path run_width_sweep(const ExperimentConfig& cfg);
std::filesystem::path run_random_labels(const ExperimentConfig& cfg);
std::filesystem::path run_bound_compare(const ExperimentConfig& cfg);

// Component subcommands.
std::filesystem::path run_train_cmd(const ExperimentConfig& cfg);
std::filesystem::path run_distill_cmd(const ExperimentConfig& cfg);
std::filesystem::path run_bounds_cmd(const ExperimentConfig& cfg);
std::filesystem::path run_sparsify_cmd(const ExperimentConfig& cfg);
std::filesystem::path run_augment_cmd(const ExperimentConfig& cfg);

}  // namespace distillbound
