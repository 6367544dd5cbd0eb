#include <sys/wait.h>

#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "distillbound/bounds.hpp"
#include "distillbound/compgraph.hpp"
#include "distillbound/data.hpp"
#include "distillbound/error.hpp"
#include "distillbound/experiments.hpp"
#include "distillbound/matrix.hpp"
#include "doctest.h"
#include "json.hpp"

using namespace distillbound;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Fresh directory under the system temp root; reruns wipe the previous one.
fs::path fresh_dir(const std::string& name) {
  fs::path dir = fs::temp_directory_path() / "distillbound-harness" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE_MESSAGE(in.good(), "missing file: " << path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

std::vector<std::string> lines_of(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) out.push_back(line);
  return out;
}

std::vector<double> csv_fields(const std::string& line) {
  std::vector<double> out;
  std::istringstream in(line);
  std::string cell;
  while (std::getline(in, cell, ',')) out.push_back(std::stod(cell));
  return out;
}

// Small/fast experiment base: 24 blob points in 2-d, width-4 net, 3 rungs.
json base_config(const fs::path& out) {
  json j;
  j["gamma"] = 0.5;
  j["seed"] = 3;
  j["out"] = out.string();
  j["dataset"] = {{"source", "synthetic_blobs"}, {"n_train", 24}, {"n_test", 12},
                  {"d", 2},                      {"k", 2}};
  j["arch"] = {{"hidden", json::array({4})}};
  j["train"] = {{"optimizer", "adam"}, {"learning_rate", 0.01}, {"epochs", 2}};
  j["distill"] = {{"steps", 3},
                  {"epochs", 1},
                  {"optimizer", "adam"},
                  {"learning_rate", 0.01},
                  {"lambda_multiplier", 100.0}};
  j["augment"] = {{"m", 32}};
  return j;
}

ExperimentConfig config_for(json doc, const std::string& experiment) {
  doc["experiment"] = experiment;
  return parse_config(doc.dump());
}

std::map<std::string, std::string> snapshot_tree(const fs::path& root) {
  std::map<std::string, std::string> files;
  for (const auto& entry : fs::recursive_directory_iterator(root))
    if (entry.is_regular_file())
      files[fs::relative(entry.path(), root).string()] = read_file(entry.path());
  return files;
}

void put_u32_be(std::string& s, std::uint32_t v) {
  s.push_back(static_cast<char>((v >> 24) & 0xff));
  s.push_back(static_cast<char>((v >> 16) & 0xff));
  s.push_back(static_cast<char>((v >> 8) & 0xff));
  s.push_back(static_cast<char>(v & 0xff));
}

void write_bytes(const fs::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary);
  REQUIRE(out.good());
  out << bytes;
}

// 2 images of 2x2 pixels plus matching labels; tweakable for malformed cases.
std::string idx_image_bytes(std::uint32_t magic = 0x00000803u, std::uint32_t count = 2,
                            std::size_t pixels = 8) {
  std::string s;
  put_u32_be(s, magic);
  put_u32_be(s, count);
  put_u32_be(s, 2);
  put_u32_be(s, 2);
  const unsigned char px[8] = {0, 51, 102, 153, 204, 255, 128, 64};
  for (std::size_t i = 0; i < pixels; ++i) s.push_back(static_cast<char>(px[i % 8]));
  return s;
}

std::string idx_label_bytes(std::uint32_t magic = 0x00000801u, std::uint32_t count = 2,
                            std::size_t body = 2) {
  std::string s;
  put_u32_be(s, magic);
  put_u32_be(s, count);
  const unsigned char lab[3] = {1, 0, 1};
  for (std::size_t i = 0; i < body; ++i) s.push_back(static_cast<char>(lab[i % 3]));
  return s;
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(DISTILLBOUND_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int raw = std::system(cmd.c_str());
  if (raw == -1) return -1;
  return WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
}

}  // namespace

TEST_CASE("config hash matches the published fnv1a-64 vectors") {
  CHECK(fnv1a_hex("") == "cbf29ce484222325");
  CHECK(fnv1a_hex("a") == "af63dc4c8601ec8c");
  CHECK(fnv1a_hex("foobar") == "85944171f73967e8");
}

TEST_CASE("parse_config requires gamma and rejects malformed documents") {
  CHECK_THROWS_AS(parse_config("{}"), ConfigError);
  CHECK_THROWS_AS(parse_config(R"({"gamma": 0})"), ConfigError);
  CHECK_THROWS_AS(parse_config(R"({"gamma": -1})"), ConfigError);
  CHECK_THROWS_AS(parse_config(R"({"gamma": "hot"})"), ConfigError);
  CHECK_THROWS_AS(parse_config("{not json"), ConfigError);
  CHECK_THROWS_AS(parse_config("[1, 2]"), ConfigError);
  CHECK_THROWS_AS(parse_config(R"({"gamma": 1, "dataset": {"source": "csv"}})"), ConfigError);
  CHECK_THROWS_AS(parse_config(R"({"gamma": 1, "dataset": {"label_permute_fraction": 1.5}})"),
                  ConfigError);
  CHECK_THROWS_AS(parse_config(R"({"gamma": 1, "dataset": {"source": "idx_files"}})"),
                  ConfigError);
  CHECK_THROWS_AS(parse_config(R"({"gamma": 1, "arch": {"hidden": []}})"), ConfigError);
  CHECK_THROWS_AS(parse_config(R"({"gamma": 1, "arch": {"hidden": [0]}})"), ConfigError);
  CHECK_THROWS_AS(parse_config(R"({"gamma": 1, "width_sweep": {"widths": [3, 0]}})"),
                  ConfigError);
  CHECK_THROWS_AS(parse_config(R"({"gamma": 1, "random_labels": {"fractions": [0.5, 2.0]}})"),
                  ConfigError);
  CHECK_THROWS_AS(parse_config(R"({"gamma": 1, "train": {"optimizer": "lbfgs"}})"), ConfigError);
  CHECK_THROWS_AS(parse_config(R"({"gamma": 1, "distill": {"mode": "l1"}})"), ConfigError);
  CHECK_THROWS_AS(parse_config(R"({"gamma": 1, "augment": {"ratio_mode": "adaptive"}})"),
                  ConfigError);
  CHECK_THROWS_AS(parse_config(R"({"gamma": 1, "sparsify": {"k": 0}})"), ConfigError);
}

TEST_CASE("parse_config materializes defaults into a hashable document") {
  const ExperimentConfig cfg = parse_config(R"({"gamma": 0.5})");
  CHECK(cfg.experiment == "ladder");
  CHECK(cfg.seed == 1);
  CHECK(cfg.out == "out");
  CHECK(cfg.gamma == 0.5);
  CHECK(cfg.train.gamma == 0.5);
  CHECK(cfg.ladder.step.gamma == 0.5);
  CHECK(cfg.hidden == std::vector<std::size_t>{64});
  CHECK(cfg.sweep_widths == std::vector<std::size_t>{16, 64, 256});
  CHECK(cfg.fractions == std::vector<double>{0.0, 0.25, 0.5, 0.75, 1.0});
  CHECK(cfg.augment.m == 0);
  CHECK(cfg.augment.ratio_value == 4.0);

  CHECK(cfg.config_hash.size() == 16);
  CHECK(cfg.config_hash == fnv1a_hex(cfg.materialized));

  const json doc = json::parse(cfg.materialized);
  CHECK(doc.at("gamma").get<double>() == 0.5);
  CHECK(doc.at("dataset").at("n_train").get<std::size_t>() == 256);
  CHECK(doc.at("train").at("optimizer").get<std::string>() == "adam");

  // Materialization is idempotent: re-parsing the emitted document is a fixed point.
  const ExperimentConfig again = parse_config(cfg.materialized);
  CHECK(again.materialized == cfg.materialized);
  CHECK(again.config_hash == cfg.config_hash);

  const ExperimentConfig other = parse_config(R"({"gamma": 0.5, "seed": 2})");
  CHECK(other.config_hash != cfg.config_hash);
}

TEST_CASE("cell seeds separate width from label fraction") {
  const ExperimentConfig cfg = parse_config(R"({"gamma": 1.0, "seed": 7})");
  const std::uint64_t a = cell_seed(cfg, 16, 0.0);
  CHECK(cell_seed(cfg, 16, 0.0) == a);
  CHECK(cell_seed(cfg, 64, 0.0) != a);
  CHECK(cell_seed(cfg, 16, 0.25) != a);
  CHECK(cell_seed(cfg, 16, 0.5) != cell_seed(cfg, 16, 0.25));
}

TEST_CASE("label permutation moves exactly the floored share of labels") {
  std::vector<int> y(10);
  for (int i = 0; i < 10; ++i) y[i] = i;  // distinct, so every moved slot changes value

  CHECK(permute_labels(y, 0.0, 5) == y);
  CHECK(permute_labels(y, 0.1, 5) == y);  // floor(1) is a 1-cycle: nothing can move

  for (double fraction : {0.5, 0.7, 1.0}) {
    const std::vector<int> out = permute_labels(y, fraction, 5);
    const auto want = static_cast<std::size_t>(std::floor(fraction * 10.0));
    std::size_t moved = 0;
    for (int i = 0; i < 10; ++i) moved += out[i] != y[i] ? 1 : 0;
    CHECK(moved == want);

    std::vector<int> sorted = out;
    std::sort(sorted.begin(), sorted.end());
    CHECK(sorted == y);  // a permutation preserves the multiset

    CHECK(permute_labels(y, fraction, 5) == out);  // seeded, so reproducible
  }

  // count = 2 is a transposition: the two moved slots swap values.
  std::vector<int> y5 = {10, 11, 12, 13, 14};
  const std::vector<int> swapped = permute_labels(y5, 0.5, 9);
  std::vector<std::size_t> moved_at;
  for (std::size_t i = 0; i < y5.size(); ++i)
    if (swapped[i] != y5[i]) moved_at.push_back(i);
  REQUIRE(moved_at.size() == 2);
  CHECK(swapped[moved_at[0]] == y5[moved_at[1]]);
  CHECK(swapped[moved_at[1]] == y5[moved_at[0]]);

  CHECK_THROWS_AS(permute_labels(y, -0.1, 1), ConfigError);
  CHECK_THROWS_AS(permute_labels(y, 1.1, 1), ConfigError);
}

TEST_CASE("idx fixture loads exactly and malformed files are rejected") {
  const fs::path dir = fresh_dir("idx");
  write_bytes(dir / "images.idx", idx_image_bytes());
  write_bytes(dir / "labels.idx", idx_label_bytes());

  const IdxData data = load_idx(dir / "images.idx", dir / "labels.idx");
  REQUIRE(data.images.rows() == 2);
  REQUIRE(data.images.cols() == 4);
  CHECK(data.images(0, 0) == 0.0);
  CHECK(data.images(0, 1) == 51.0 / 255.0);
  CHECK(data.images(0, 2) == 102.0 / 255.0);
  CHECK(data.images(0, 3) == 153.0 / 255.0);
  CHECK(data.images(1, 0) == 204.0 / 255.0);
  CHECK(data.images(1, 1) == 1.0);
  CHECK(data.images(1, 2) == 128.0 / 255.0);
  CHECK(data.images(1, 3) == 64.0 / 255.0);
  CHECK(data.labels == std::vector<int>{1, 0});

  write_bytes(dir / "empty.idx", "");
  CHECK_THROWS_AS(load_idx(dir / "empty.idx", dir / "labels.idx"), ConfigError);

  write_bytes(dir / "badmagic.idx", idx_image_bytes(0x00000804u));
  CHECK_THROWS_AS(load_idx(dir / "badmagic.idx", dir / "labels.idx"), ConfigError);

  write_bytes(dir / "short_pixels.idx", idx_image_bytes(0x00000803u, 2, 7));
  CHECK_THROWS_AS(load_idx(dir / "short_pixels.idx", dir / "labels.idx"), ConfigError);

  write_bytes(dir / "labels3.idx", idx_label_bytes(0x00000801u, 3, 3));
  CHECK_THROWS_AS(load_idx(dir / "images.idx", dir / "labels3.idx"), ConfigError);

  write_bytes(dir / "labels_short.idx", idx_label_bytes(0x00000801u, 2, 1));
  CHECK_THROWS_AS(load_idx(dir / "images.idx", dir / "labels_short.idx"), ConfigError);

  write_bytes(dir / "labels_badmagic.idx", idx_label_bytes(0x00000802u));
  CHECK_THROWS_AS(load_idx(dir / "images.idx", dir / "labels_badmagic.idx"), ConfigError);

  CHECK_THROWS_AS(load_idx(dir / "nope.idx", dir / "labels.idx"), ConfigError);
}

TEST_CASE("idx files feed the training subcommand end to end") {
  const fs::path dir = fresh_dir("idx-train");
  write_bytes(dir / "images.idx", idx_image_bytes());
  write_bytes(dir / "labels.idx", idx_label_bytes());

  json doc;
  doc["gamma"] = 1.0;
  doc["seed"] = 5;
  doc["out"] = (dir / "out").string();
  doc["dataset"] = {{"source", "idx_files"},
                    {"images", (dir / "images.idx").string()},
                    {"labels", (dir / "labels.idx").string()},
                    {"test_images", (dir / "images.idx").string()},
                    {"test_labels", (dir / "labels.idx").string()}};
  doc["arch"] = {{"hidden", json::array({3})}};
  doc["train"] = {{"epochs", 1}};
  const ExperimentConfig cfg = config_for(doc, "train");

  const fs::path out = run_train_cmd(cfg);
  const auto rows = lines_of(read_file(out / "traces/train.csv"));
  REQUIRE(rows.size() == 2);
  CHECK(rows[0] == "# columns: train_error,test_error,softmax_error,final_loss");
  const std::vector<double> vals = csv_fields(rows[1]);
  REQUIRE(vals.size() == 4);
  for (double v : vals) CHECK(std::isfinite(v));

  const CanonicalGraph g = load_graph(out / "models/teacher.json");
  const IdxData data = load_idx(dir / "images.idx", dir / "labels.idx");
  const DenseMatrix logits = forward_logits(g, data.images);
  CHECK(logits.rows() == 2);
  CHECK(logits.cols() == 2);

  // Referencing a missing idx file is a config error at parse time.
  doc["dataset"]["images"] = (dir / "nope.idx").string();
  CHECK_THROWS_AS(config_for(doc, "train"), ConfigError);
}

TEST_CASE("ladder run writes one row per rung plus the teacher baseline") {
  const fs::path out = fresh_dir("ladder-rows");
  json doc = base_config(out);
  doc["distill"]["steps"] = 12;
  const ExperimentConfig cfg = config_for(doc, "ladder");
  run_ladder(cfg);

  const auto rows = lines_of(read_file(out / "traces/ladder.csv"));
  REQUIRE(rows.size() == 14);  // header + baseline + 12 rungs
  CHECK(rows[0] ==
        "# columns: step,lambda,phi,bound_total,generalization_measure_frob,complexity,"
        "train_error,test_error,softmax_error,margin_q10");

  std::vector<std::vector<double>> table;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    table.push_back(csv_fields(rows[i]));
    REQUIRE(table.back().size() == 10);
  }
  for (std::size_t i = 0; i < table.size(); ++i)
    CHECK(table[i][0] == static_cast<double>(i));  // step column counts up from 0

  CHECK(table[0][1] == 0.0);  // the baseline row carries no penalty weight
  REQUIRE(table[1][1] > 0.0);
  for (std::size_t i = 2; i < table.size(); ++i)
    CHECK(table[i][1] == 2.0 * table[i - 1][1]);  // exact doubling, rung over rung

  for (const auto& row : table) {
    CHECK(std::isfinite(row[3]));
    CHECK(row[3] > 0.0);  // bound_total
    CHECK(row[4] > 0.0);  // Frobenius product
    CHECK(row[5] > 0.0);  // complexity surrogate
  }

  const json man = json::parse(read_file(out / "manifest.json"));
  CHECK(man.at("status") == "ok");
  CHECK(man.at("experiment") == "ladder");
  CHECK(man.at("seed").get<std::uint64_t>() == 3);
  CHECK(man.at("config_hash") == cfg.config_hash);
  CHECK(man.at("config") == json::parse(cfg.materialized));
  CHECK(man.at("modules").size() == 8);
  for (const auto& [name, version] : man.at("modules").items()) {
    CHECK(!name.empty());
    CHECK(version.get<std::string>() == "1.0.0");
  }
  const auto& artifacts = man.at("artifacts");
  REQUIRE(artifacts.is_array());
  std::vector<std::string> names = artifacts.get<std::vector<std::string>>();
  std::vector<std::string> sorted = names;
  std::sort(sorted.begin(), sorted.end());
  CHECK(names == sorted);
  for (const std::string rel : {"traces/ladder.csv", "traces/trace.csv", "histograms/pre.csv",
                                 "histograms/post.csv", "models/teacher.json",
                                 "models/student.json"}) {
    CHECK(std::find(names.begin(), names.end(), rel) != names.end());
    CHECK(fs::exists(out / rel));
  }
}

TEST_CASE("distill subcommand writes the cell artifact set") {
  const fs::path out = fresh_dir("distill-cell");
  const ExperimentConfig cfg = config_for(base_config(out), "distill");
  run_distill_cmd(cfg);

  const auto trace = lines_of(read_file(out / "traces/trace.csv"));
  REQUIRE(trace.size() == 2 + 3);  // header + baseline + 3 rungs
  CHECK(trace[0] ==
        "# columns: step,lambda,phi,complexity,train_error,test_error,softmax_error,"
        "bound_total,margin_q10,initial_loss,final_loss");

  for (const char* rel : {"histograms/pre.csv", "histograms/post.csv"}) {
    const auto rows = lines_of(read_file(out / rel));
    REQUIRE(rows.size() >= 2);
    CHECK(rows[0] == "# columns: bin_left,bin_right,count");
    std::size_t total = 0;
    for (std::size_t i = 1; i < rows.size(); ++i) {
      const auto f = csv_fields(rows[i]);
      REQUIRE(f.size() == 3);
      CHECK(f[0] < f[1]);
      total += static_cast<std::size_t>(f[2]);
    }
    CHECK(total == 24);  // every training margin lands in some bin
  }

  const json meta = json::parse(read_file(out / "histograms/post_meta.json"));
  CHECK(meta.at("n").get<std::size_t>() == 24);
  CHECK(meta.at("gamma").get<double>() == 0.5);
  CHECK(meta.at("normalizer").get<double>() > 0.0);
  CHECK(std::isfinite(meta.at("q10").get<double>()));
  CHECK(std::isfinite(meta.at("q50").get<double>()));

  CHECK_NOTHROW(load_graph(out / "models/student.json"));
}

TEST_CASE("width sweep emits histograms per width and a summary table") {
  const fs::path out = fresh_dir("width-sweep");
  json doc = base_config(out);
  doc["width_sweep"] = {{"widths", json::array({2, 3, 4})}};
  run_width_sweep(config_for(doc, "width_sweep"));

  for (const std::string w : {"2", "3", "4"}) {
    CHECK(fs::exists(out / ("histograms/pre_w" + w + ".csv")));
    CHECK(fs::exists(out / ("histograms/post_w" + w + ".csv")));
    CHECK(fs::exists(out / ("histograms/pre_w" + w + "_meta.json")));
    CHECK(fs::exists(out / ("histograms/post_w" + w + "_meta.json")));
    CHECK(fs::exists(out / ("traces/trace_w" + w + ".csv")));
  }

  const auto summary = lines_of(read_file(out / "traces/width_summary.csv"));
  REQUIRE(summary.size() == 4);
  CHECK(summary[0] == "# columns: width,pre_q10,pre_q50,post_q10,post_q50");
  const double widths[3] = {2.0, 3.0, 4.0};
  for (int i = 0; i < 3; ++i) {
    const auto f = csv_fields(summary[1 + i]);
    REQUIRE(f.size() == 5);
    CHECK(f[0] == widths[i]);
    for (double v : f) CHECK(std::isfinite(v));
  }
}

TEST_CASE("random labels emits one histogram per fraction") {
  const fs::path out = fresh_dir("random-labels");
  json doc = base_config(out);  // default fractions: 0, 0.25, 0.5, 0.75, 1
  run_random_labels(config_for(doc, "random_labels"));

  for (const std::string tag : {"f000", "f025", "f050", "f075", "f100"}) {
    CHECK(fs::exists(out / ("histograms/hist_" + tag + ".csv")));
    CHECK(fs::exists(out / ("histograms/hist_" + tag + "_meta.json")));
    CHECK(fs::exists(out / ("traces/trace_" + tag + ".csv")));
  }

  const auto summary = lines_of(read_file(out / "traces/fraction_summary.csv"));
  REQUIRE(summary.size() == 6);
  CHECK(summary[0] == "# columns: fraction,post_q10,post_q50");
  const double fractions[5] = {0.0, 0.25, 0.5, 0.75, 1.0};
  for (int i = 0; i < 5; ++i) {
    const auto f = csv_fields(summary[1 + i]);
    REQUIRE(f.size() == 3);
    CHECK(f[0] == fractions[i]);
    CHECK(std::isfinite(f[1]));
    CHECK(std::isfinite(f[2]));
  }
}

TEST_CASE("fraction-zero cell reproduces the width-sweep cell byte for byte") {
  const fs::path dir_w = fresh_dir("equiv-width");
  json doc_w = base_config(dir_w);
  doc_w["width_sweep"] = {{"widths", json::array({4})}};
  run_width_sweep(config_for(doc_w, "width_sweep"));

  const fs::path dir_f = fresh_dir("equiv-fraction");
  json doc_f = base_config(dir_f);
  doc_f["random_labels"] = {{"fractions", json::array({0.0})}};
  run_random_labels(config_for(doc_f, "random_labels"));

  CHECK(read_file(dir_w / "histograms/post_w4.csv") ==
        read_file(dir_f / "histograms/hist_f000.csv"));
  CHECK(read_file(dir_w / "histograms/post_w4_meta.json") ==
        read_file(dir_f / "histograms/hist_f000_meta.json"));
  CHECK(read_file(dir_w / "traces/trace_w4.csv") == read_file(dir_f / "traces/trace_f000.csv"));
}

TEST_CASE("bound compare columns stay positive and the capacity term shrinks") {
  const fs::path out = fresh_dir("bound-compare");
  json doc = base_config(out);
  doc["distill"]["steps"] = 6;
  doc["distill"]["epochs"] = 4;
  doc["distill"]["lambda_multiplier"] = 1000.0;
  doc["augment"]["m"] = 48;
  run_bound_compare(config_for(doc, "bound_compare"));

  const auto rows = lines_of(read_file(out / "traces/bound_compare.csv"));
  REQUIRE(rows.size() == 8);  // header + baseline + 6 rungs
  CHECK(rows[0] == "# columns: step,phi,rad_compgraph,stable_rank_rad,bound_total");
  std::vector<std::vector<double>> table;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    table.push_back(csv_fields(rows[i]));
    REQUIRE(table.back().size() == 5);
    CHECK(table.back()[1] >= 0.0);
    for (int c = 2; c < 5; ++c) {
      CHECK(std::isfinite(table.back()[c]));
      CHECK(table.back()[c] > 0.0);
    }
  }
  // Heavy late-ladder regularization must show up as shrinking capacity.
  CHECK(table.back()[2] < table.front()[2]);
}

TEST_CASE("reruns of the same config are byte-for-byte identical") {
  const fs::path out = fresh_dir("repro");
  const ExperimentConfig cfg = config_for(base_config(out), "ladder");

  run_ladder(cfg);
  const auto first = snapshot_tree(out);
  REQUIRE(first.count("manifest.json") == 1);
  REQUIRE(first.size() >= 8);

  run_ladder(cfg);
  const auto second = snapshot_tree(out);
  REQUIRE(second.size() == first.size());
  for (const auto& [rel, bytes] : first) {
    REQUIRE(second.count(rel) == 1);
    CHECK_MESSAGE(second.at(rel) == bytes, "file differs across reruns: " << rel);
  }
}

TEST_CASE("parallel cell execution matches the serial run byte for byte") {
  json doc = base_config("");
  doc["width_sweep"] = {{"widths", json::array({2, 3, 4})}};
  doc["distill"]["steps"] = 2;

  const fs::path serial_dir = fresh_dir("par-serial");
  doc["out"] = serial_dir.string();
  doc["parallel"] = 1;
  run_width_sweep(config_for(doc, "width_sweep"));

  const fs::path parallel_dir = fresh_dir("par-threads");
  doc["out"] = parallel_dir.string();
  doc["parallel"] = 3;
  run_width_sweep(config_for(doc, "width_sweep"));

  const json man_serial = json::parse(read_file(serial_dir / "manifest.json"));
  const json man_parallel = json::parse(read_file(parallel_dir / "manifest.json"));
  REQUIRE(man_serial.at("artifacts") == man_parallel.at("artifacts"));
  for (const auto& rel : man_serial.at("artifacts")) {
    const std::string r = rel.get<std::string>();
    CHECK_MESSAGE(read_file(serial_dir / r) == read_file(parallel_dir / r),
                  "artifact differs between serial and parallel runs: " << r);
  }

  // The env cap only limits the pool; results stay identical.
  setenv("DISTILLBOUND_THREADS", "2", 1);
  const fs::path capped_dir = fresh_dir("par-capped");
  doc["out"] = capped_dir.string();
  run_width_sweep(config_for(doc, "width_sweep"));
  unsetenv("DISTILLBOUND_THREADS");
  for (const auto& rel : man_serial.at("artifacts")) {
    const std::string r = rel.get<std::string>();
    CHECK(read_file(serial_dir / r) == read_file(capped_dir / r));
  }
}

TEST_CASE("bounds subcommand reports on a saved model") {
  const fs::path dir = fresh_dir("bounds-cmd");
  json train_doc = base_config(dir / "teacher");
  train_doc["train"]["epochs"] = 1;
  run_train_cmd(config_for(train_doc, "train"));

  json doc = base_config(dir / "report");
  doc["model"] = (dir / "teacher/models/teacher.json").string();
  const ExperimentConfig cfg = config_for(doc, "bounds");
  run_bounds_cmd(cfg);

  const json rep = json::parse(read_file(dir / "report/bounds/report.json"));
  CHECK(rep.at("formula") == "risk_transfer_compgraph");
  CHECK(rep.at("inputs").at("gamma").get<double>() == 0.5);
  CHECK(rep.at("inputs").at("n").get<std::size_t>() == 24);
  const json& terms = rep.at("terms");
  REQUIRE(terms.size() == 6);
  double sum = 0.0;
  for (const auto& [name, value] : terms.items()) {
    CHECK(!name.empty());
    CHECK(std::isfinite(value.get<double>()));
    CHECK(value.get<double>() >= 0.0);
    sum += value.get<double>();
  }
  const double total = rep.at("total").get<double>();
  CHECK(total == doctest::Approx(sum).epsilon(1e-12));
  CHECK(total > 0.0);

  const auto csv = lines_of(read_file(dir / "report/bounds/report.csv"));
  REQUIRE(csv.size() == 2);
  CHECK(csv[0] == report_csv_header());
  CHECK(csv[1].substr(0, csv[1].find(',')) == "risk_transfer_compgraph");

  json missing = base_config(dir / "missing");
  CHECK_THROWS_AS(run_bounds_cmd(config_for(missing, "bounds")), ConfigError);
  missing["model"] = (dir / "nope.json").string();
  CHECK_THROWS_AS(run_bounds_cmd(config_for(missing, "bounds")), ConfigError);
}

TEST_CASE("augment subcommand samples around stored anchors") {
  const fs::path dir = fresh_dir("augment-cmd");
  DenseMatrix anchors(5, 3);
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = 0; j < 3; ++j)
      anchors(i, j) = 0.1 + 0.15 * static_cast<double>(i) + 0.05 * static_cast<double>(j);
  write_dbm(dir / "anchors.dbm", anchors);

  json doc = base_config(dir / "out");
  doc["anchors"] = (dir / "anchors.dbm").string();
  doc["augment_samples"] = 64;
  run_augment_cmd(config_for(doc, "augment"));

  const DenseMatrix samples = read_dbm(dir / "out/augment/samples.dbm");
  CHECK(samples.rows() == 64);
  CHECK(samples.cols() == 3);
  for (std::size_t i = 0; i < samples.rows(); ++i)
    for (std::size_t j = 0; j < samples.cols(); ++j) CHECK(std::isfinite(samples(i, j)));

  const json meta = json::parse(read_file(dir / "out/augment/meta.json"));
  CHECK(meta.at("beta").get<double>() == 0.5);
  CHECK(meta.at("m").get<std::size_t>() == 64);
  CHECK(meta.at("pure_uniform").get<bool>() == false);
  CHECK(meta.at("sigma").get<double>() ==
        doctest::Approx(std::pow(5.0, -1.0 / 5.0)).epsilon(1e-12));
  CHECK(meta.at("uniform_draws").get<std::size_t>() <= 64);

  json missing = base_config(dir / "missing");
  CHECK_THROWS_AS(run_augment_cmd(config_for(missing, "augment")), ConfigError);
}

TEST_CASE("cli maps config, numeric, and clean outcomes to exit codes") {
  const fs::path dir = fresh_dir("cli");

  json good = base_config(dir / "good-out");
  good["sparsify"] = {{"rows_a", 5}, {"rows_b", 6}, {"cols", 8},
                      {"k", 4},      {"draws", 2},  {"trials", 2}};
  write_bytes(dir / "good.json", good.dump(2));
  CHECK(run_cli("sparsify --config " + (dir / "good.json").string()) == 0);
  const auto sparsify_rows = lines_of(read_file(dir / "good-out/traces/sparsify.csv"));
  CHECK(sparsify_rows.size() == 1 + 2 * 3);  // header + trials x constructions
  const json man = json::parse(read_file(dir / "good-out/manifest.json"));
  CHECK(man.at("status") == "ok");
  CHECK(man.at("experiment") == "sparsify");

  // --seed and --out override the document before hashing.
  CHECK(run_cli("sparsify --config " + (dir / "good.json").string() + " --seed 9 --out " +
                (dir / "seeded-out").string()) == 0);
  const json man9 = json::parse(read_file(dir / "seeded-out/manifest.json"));
  CHECK(man9.at("seed").get<std::uint64_t>() == 9);
  CHECK(man9.at("config").at("out").get<std::string>() == (dir / "seeded-out").string());
  CHECK(man9.at("config_hash") != man.at("config_hash"));

  write_bytes(dir / "broken.json", "{not json");
  CHECK(run_cli("ladder --config " + (dir / "broken.json").string()) == 2);

  write_bytes(dir / "nogamma.json", R"({"seed": 1})");
  CHECK(run_cli("ladder --config " + (dir / "nogamma.json").string()) == 2);

  CHECK(run_cli("ladder --config " + (dir / "does-not-exist.json").string()) == 2);
  CHECK(run_cli("--config " + (dir / "good.json").string()) == 2);  // subcommand required
  CHECK(run_cli("--help") == 0);

  // A diverging run is a numeric failure: exit 3 plus a failure manifest.
  // The step size must overflow the logits in one hop; a merely huge step
  // can park a ReLU net in a dead all-zero state that never goes non-finite.
  json diverge = base_config(dir / "diverge-out");
  diverge["train"] = {{"optimizer", "sgd"}, {"learning_rate", 1e300}, {"epochs", 3}};
  write_bytes(dir / "diverge.json", diverge.dump(2));
  CHECK(run_cli("train --config " + (dir / "diverge.json").string()) == 3);
  const json failed = json::parse(read_file(dir / "diverge-out/manifest.json"));
  CHECK(failed.at("status") == "failed");
  CHECK(!failed.at("error").get<std::string>().empty());
}
