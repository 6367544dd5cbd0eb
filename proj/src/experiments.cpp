#include "distillbound/experiments.hpp"

#include <algorithm>
#include <atomic>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>

#include "json.hpp"

#include "distillbound/augment.hpp"
#include "distillbound/bounds.hpp"
#include "distillbound/error.hpp"
#include "distillbound/format.hpp"
#include "distillbound/rng.hpp"
#include "distillbound/softmax.hpp"
#include "distillbound/sparsify.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace distillbound {
namespace {

[[noreturn]] void bad_config(const std::string& msg) { throw ConfigError("config: " + msg); }

const json* find(const json& j, const char* key) {
  auto it = j.find(key);
  return it == j.end() ? nullptr : &*it;
}

double get_number(const json& j, const char* key, double fallback) {
  const json* v = find(j, key);
  if (v == nullptr) return fallback;
  if (!v->is_number()) bad_config(std::string(key) + " must be a number");
  return v->get<double>();
}

std::size_t get_size(const json& j, const char* key, std::size_t fallback) {
  const json* v = find(j, key);
  if (v == nullptr) return fallback;
  if (!v->is_number_integer() || v->get<double>() < 0.0)
    bad_config(std::string(key) + " must be a nonnegative integer");
  return v->get<std::size_t>();
}

std::uint64_t get_u64(const json& j, const char* key, std::uint64_t fallback) {
  const json* v = find(j, key);
  if (v == nullptr) return fallback;
  if (!v->is_number_integer() || v->get<double>() < 0.0)
    bad_config(std::string(key) + " must be a nonnegative integer");
  return v->get<std::uint64_t>();
}

std::string get_string(const json& j, const char* key, const std::string& fallback) {
  const json* v = find(j, key);
  if (v == nullptr) return fallback;
  if (!v->is_string()) bad_config(std::string(key) + " must be a string");
  return v->get<std::string>();
}

Optimizer optimizer_from(const std::string& s) {
  if (s == "sgd") return Optimizer::sgd;
  if (s == "adam") return Optimizer::adam;
  bad_config("unknown optimizer \"" + s + "\" (expected sgd or adam)");
}

std::string optimizer_name(Optimizer o) { return o == Optimizer::sgd ? "sgd" : "adam"; }

ComplexityMode mode_from(const std::string& s) {
  if (s == "norm21") return ComplexityMode::norm21;
  if (s == "norm21_log_spectral") return ComplexityMode::norm21_log_spectral;
  bad_config("unknown complexity mode \"" + s + "\"");
}

std::string mode_name(ComplexityMode m) {
  return m == ComplexityMode::norm21 ? "norm21" : "norm21_log_spectral";
}

RadFMode rad_f_mode_from(const std::string& s) {
  if (s == "zero") return RadFMode::zero;
  if (s == "surrogate") return RadFMode::surrogate;
  if (s == "value") return RadFMode::value;
  bad_config("unknown rad_f mode \"" + s + "\" (expected zero, surrogate or value)");
}

std::string rad_f_mode_name(RadFMode m) {
  switch (m) {
    case RadFMode::zero: return "zero";
    case RadFMode::surrogate: return "surrogate";
    default: return "value";
  }
}

void parse_train_common(const json& j, TrainConfig& tc) {
  tc.optimizer = optimizer_from(get_string(j, "optimizer", optimizer_name(tc.optimizer)));
  tc.learning_rate = get_number(j, "learning_rate", tc.learning_rate);
  tc.lr_decay = get_number(j, "lr_decay", tc.lr_decay);
  tc.batch_size = get_size(j, "batch_size", tc.batch_size);
}

json materialize(const ExperimentConfig& cfg) {
  json doc;
  doc["experiment"] = cfg.experiment;
  doc["seed"] = cfg.seed;
  doc["out"] = cfg.out;
  doc["gamma"] = cfg.gamma;
  doc["parallel"] = cfg.parallel;
  doc["dataset"] = {{"source", cfg.dataset.source},
                    {"n_train", cfg.dataset.n_train},
                    {"n_test", cfg.dataset.n_test},
                    {"d", cfg.dataset.d},
                    {"k", cfg.dataset.k},
                    {"label_permute_fraction", cfg.dataset.label_permute_fraction},
                    {"images", cfg.dataset.images},
                    {"labels", cfg.dataset.labels},
                    {"test_images", cfg.dataset.test_images},
                    {"test_labels", cfg.dataset.test_labels}};
  doc["arch"] = {{"hidden", cfg.hidden}};
  doc["train"] = {{"optimizer", optimizer_name(cfg.train.optimizer)},
                  {"learning_rate", cfg.train.learning_rate},
                  {"lr_decay", cfg.train.lr_decay},
                  {"batch_size", cfg.train.batch_size},
                  {"epochs", cfg.train.epochs}};
  doc["distill"] = {{"steps", cfg.ladder.steps},
                    {"epochs", cfg.ladder.step.epochs},
                    {"mode", mode_name(cfg.ladder.mode)},
                    {"lambda_multiplier", cfg.ladder.lambda_multiplier},
                    {"delta", cfg.ladder.delta},
                    {"c_tilde", cfg.ladder.c_tilde},
                    {"rad_f_mode", rad_f_mode_name(cfg.ladder.rad_f_mode)},
                    {"rad_f_value", cfg.ladder.rad_f_value},
                    {"optimizer", optimizer_name(cfg.ladder.step.optimizer)},
                    {"learning_rate", cfg.ladder.step.learning_rate},
                    {"lr_decay", cfg.ladder.step.lr_decay},
                    {"batch_size", cfg.ladder.step.batch_size}};
  doc["augment"] = {{"alpha", cfg.augment.alpha},
                    {"m", cfg.augment.m},
                    {"ratio_mode", cfg.augment.ratio_mode},
                    {"ratio_value", cfg.augment.ratio_value},
                    {"ratio_constant", cfg.augment.ratio_constant}};
  doc["width_sweep"] = {{"widths", cfg.sweep_widths}};
  doc["random_labels"] = {{"fractions", cfg.fractions}};
  doc["model"] = cfg.model_path;
  doc["anchors"] = cfg.anchors_path;
  doc["augment_samples"] = cfg.augment_samples;
  doc["sparsify"] = {{"rows_a", cfg.sparsify.rows_a}, {"rows_b", cfg.sparsify.rows_b},
                     {"cols", cfg.sparsify.cols},     {"k", cfg.sparsify.k},
                     {"draws", cfg.sparsify.draws},   {"trials", cfg.sparsify.trials}};
  return doc;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for writing: " + path.string());
  out << text;
  out.flush();
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

void write_artifact(const fs::path& out_dir, std::vector<std::string>& artifacts,
                    const std::string& rel, const std::string& text) {
  write_text(out_dir / rel, text);
  artifacts.push_back(rel);
}

void save_model(const fs::path& out_dir, std::vector<std::string>& artifacts,
                const std::string& rel, const DenseChain& chain, const DenseMatrix& x) {
  CanonicalGraph g = graph_from_chain(chain, std::vector<double>(chain.weights.size(), 1e15));
  fit_projection_radii(g, x);
  fs::path path = out_dir / rel;
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  save_graph(g, path);
  artifacts.push_back(rel);
}

void write_manifest(const ExperimentConfig& cfg, const std::string& experiment,
                    const fs::path& out_dir, std::vector<std::string> artifacts,
                    const std::string& status, const std::string& error_msg) {
  std::sort(artifacts.begin(), artifacts.end());
  json man;
  man["status"] = status;
  man["experiment"] = experiment;
  man["seed"] = cfg.seed;
  man["config_hash"] = cfg.config_hash;
  man["config"] = cfg.materialized.empty() ? json::object() : json::parse(cfg.materialized);
  man["modules"] = {{"linalg_core", "1.0.0"}, {"compgraph", "1.0.0"},
                    {"softmax_margins", "1.0.0"}, {"sparsify", "1.0.0"},
                    {"augment", "1.0.0"},     {"bounds", "1.0.0"},
                    {"distill_train", "1.0.0"}, {"harness_cli", "1.0.0"}};
  man["artifacts"] = artifacts;
  if (!error_msg.empty()) man["error"] = error_msg;
  write_text(out_dir / "manifest.json", man.dump(2) + "\n");
}

// Runs the body, then writes a manifest; on failure writes a "failed" manifest
// (best effort) and lets the exception propagate to the exit-code mapping.
template <typename Body>
fs::path run_experiment(const ExperimentConfig& cfg, const std::string& name, Body body) {
  fs::path out_dir(cfg.out);
  std::vector<std::string> artifacts;
  try {
    body(out_dir, artifacts);
  } catch (const std::exception& e) {
    try {
      write_manifest(cfg, name, out_dir, artifacts, "failed", e.what());
    } catch (...) {
    }
    throw;
  }
  write_manifest(cfg, name, out_dir, artifacts, "ok", "");
  return out_dir;
}

std::size_t thread_cap_from_env() {
  const char* v = std::getenv("DISTILLBOUND_THREADS");
  if (v == nullptr || *v == '\0') return 0;
  char* end = nullptr;
  unsigned long long parsed = std::strtoull(v, &end, 10);
  if (end == v || *end != '\0' || parsed == 0) return 0;
  return static_cast<std::size_t>(parsed);
}

// Index-parallel map. Work items must be independent; the first exception
// wins and the rest of the pool drains without starting new items.
template <typename Fn>
void parallel_for(std::size_t count, std::size_t workers, Fn fn) {
  const std::size_t cap = thread_cap_from_env();
  if (cap != 0) workers = std::min(workers, cap);
  workers = std::min(workers, count);
  if (workers <= 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::mutex err_mutex;
  std::exception_ptr first_error;
  auto worker = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= count) return;
      {
        std::lock_guard<std::mutex> lock(err_mutex);
        if (first_error) return;
      }
      try {
        fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(err_mutex);
        if (!first_error) first_error = std::current_exception();
        return;
      }
    }
  };
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

Dataset build_dataset(const ExperimentConfig& cfg, std::uint64_t seed) {
  const DatasetSpec& d = cfg.dataset;
  if (d.source == "synthetic_blobs") return make_blobs(d.n_train, d.n_test, d.d, d.k, seed);
  if (d.source == "synthetic_ring") return make_ring(d.n_train, d.n_test, d.d, seed);
  IdxData train = load_idx(d.images, d.labels);
  IdxData test = load_idx(d.test_images, d.test_labels);
  Dataset ds;
  int max_label = 0;
  for (int y : train.labels) max_label = std::max(max_label, y);
  for (int y : test.labels) max_label = std::max(max_label, y);
  ds.classes = static_cast<std::size_t>(max_label) + 1;
  if (ds.classes < 2) bad_config("dataset: fewer than two classes present");
  ds.x_train = std::move(train.images);
  ds.y_train = std::move(train.labels);
  ds.x_test = std::move(test.images);
  ds.y_test = std::move(test.labels);
  return ds;
}

std::string histogram_csv(const MarginHistogram& h) {
  std::string s = "# columns: bin_left,bin_right,count\n";
  for (std::size_t i = 0; i < h.counts.size(); ++i) {
    s += g17(h.edges[i]);
    s += ',';
    s += g17(h.edges[i + 1]);
    s += ',';
    s += std::to_string(h.counts[i]);
    s += '\n';
  }
  return s;
}

std::string histogram_meta_json(const MarginHistogram& h, double gamma) {
  json j;
  j["normalizer"] = h.normalizer;
  j["q10"] = h.q10;
  j["q50"] = h.q50;
  j["n"] = h.n;
  j["gamma"] = gamma;
  return j.dump(2) + "\n";
}

std::string trace_csv_of(const DistillationTrace& t) {
  std::string s =
      "# columns: step,lambda,phi,complexity,train_error,test_error,softmax_error,"
      "bound_total,margin_q10,initial_loss,final_loss\n";
  auto row = [&s](std::size_t step, double lambda, double phi, double complexity, double tr,
                  double te, double se, double bt, double q, double il, double fl) {
    s += std::to_string(step);
    for (double v : {lambda, phi, complexity, tr, te, se, bt, q, il, fl}) {
      s += ',';
      s += g17(v);
    }
    s += '\n';
  };
  const BaselineRow& b = t.baseline;
  row(0, 0.0, 0.0, b.complexity, b.train_error, b.test_error, b.softmax_err, b.bound.total,
      b.margin_q10, 0.0, 0.0);
  for (std::size_t j = 0; j < t.steps.size(); ++j) {
    const LadderStep& st = t.steps[j];
    row(j + 1, st.lambda, st.phi, st.complexity, st.train_error, st.test_error, st.softmax_err,
        st.bound.total, st.margin_q10, st.initial_loss, st.final_loss);
  }
  return s;
}

std::string fraction_tag(double f) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "f%03d", static_cast<int>(std::lround(f * 100.0)));
  return buf;
}

void write_cell_artifacts(const fs::path& out_dir, std::vector<std::string>& artifacts,
                          const CellResult& cell) {
  write_artifact(out_dir, artifacts, "traces/trace.csv", cell.trace_csv);
  write_artifact(out_dir, artifacts, "histograms/pre.csv", cell.pre_hist_csv);
  write_artifact(out_dir, artifacts, "histograms/pre_meta.json", cell.pre_meta_json);
  write_artifact(out_dir, artifacts, "histograms/post.csv", cell.post_hist_csv);
  write_artifact(out_dir, artifacts, "histograms/post_meta.json", cell.post_meta_json);
  save_model(out_dir, artifacts, "models/teacher.json", cell.f, cell.data.x_train);
  save_model(out_dir, artifacts, "models/student.json",
             cell.trace.steps.at(cell.trace.selected).snapshot, cell.data.x_train);
}

DenseMatrix random_matrix(std::size_t rows, std::size_t cols, std::mt19937_64& eng) {
  DenseMatrix a(rows, cols);
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) a(i, j) = standard_normal(eng);
  return a;
}

double ratio_bound_of(const ExperimentConfig& cfg, std::size_t n, std::size_t d) {
  if (cfg.augment.ratio_mode == "formula")
    return ratio_bound_formula(n, cfg.augment.alpha, d, cfg.augment.ratio_constant);
  return cfg.augment.ratio_value;
}

}  // namespace

std::string fnv1a_hex(std::string_view text) {
  std::uint64_t h = 14695981039346656037ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

ExperimentConfig parse_config(const std::string& json_text) {
  json root;
  try {
    root = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config: invalid JSON: ") + e.what());
  }
  if (!root.is_object()) bad_config("document must be a JSON object");

  ExperimentConfig cfg;
  cfg.experiment = get_string(root, "experiment", cfg.experiment);
  cfg.seed = get_u64(root, "seed", cfg.seed);
  cfg.out = get_string(root, "out", cfg.out);
  cfg.parallel = std::max<std::size_t>(1, get_size(root, "parallel", cfg.parallel));

  const json* g = find(root, "gamma");
  if (g == nullptr) bad_config("\"gamma\" is required");
  if (!g->is_number() || g->get<double>() <= 0.0) bad_config("gamma must be a positive number");
  cfg.gamma = g->get<double>();
  cfg.train.gamma = cfg.gamma;
  cfg.ladder.step.gamma = cfg.gamma;

  if (const json* d = find(root, "dataset")) {
    if (!d->is_object()) bad_config("dataset must be an object");
    cfg.dataset.source = get_string(*d, "source", cfg.dataset.source);
    if (cfg.dataset.source != "synthetic_blobs" && cfg.dataset.source != "synthetic_ring" &&
        cfg.dataset.source != "idx_files")
      bad_config("unknown dataset source \"" + cfg.dataset.source + "\"");
    cfg.dataset.n_train = get_size(*d, "n_train", cfg.dataset.n_train);
    cfg.dataset.n_test = get_size(*d, "n_test", cfg.dataset.n_test);
    cfg.dataset.d = get_size(*d, "d", cfg.dataset.d);
    cfg.dataset.k = get_size(*d, "k", cfg.dataset.k);
    cfg.dataset.label_permute_fraction =
        get_number(*d, "label_permute_fraction", cfg.dataset.label_permute_fraction);
    if (cfg.dataset.label_permute_fraction < 0.0 || cfg.dataset.label_permute_fraction > 1.0)
      bad_config("label_permute_fraction must lie in [0, 1]");
    cfg.dataset.images = get_string(*d, "images", "");
    cfg.dataset.labels = get_string(*d, "labels", "");
    cfg.dataset.test_images = get_string(*d, "test_images", "");
    cfg.dataset.test_labels = get_string(*d, "test_labels", "");
    if (cfg.dataset.source == "idx_files") {
      for (const std::string* p : {&cfg.dataset.images, &cfg.dataset.labels,
                                   &cfg.dataset.test_images, &cfg.dataset.test_labels}) {
        if (p->empty()) bad_config("idx_files source needs images/labels/test_images/test_labels");
        if (!fs::exists(*p)) bad_config("dataset file not found: " + *p);
      }
    }
  }

  if (const json* a = find(root, "arch")) {
    if (!a->is_object()) bad_config("arch must be an object");
    if (const json* h = find(*a, "hidden")) {
      if (!h->is_array() || h->empty()) bad_config("arch.hidden must be a nonempty array");
      cfg.hidden.clear();
      for (const json& v : *h) {
        if (!v.is_number_integer() || v.get<double>() < 1.0)
          bad_config("arch.hidden entries must be positive integers");
        cfg.hidden.push_back(v.get<std::size_t>());
      }
    }
  }

  if (const json* t = find(root, "train")) {
    if (!t->is_object()) bad_config("train must be an object");
    parse_train_common(*t, cfg.train);
    cfg.train.epochs = get_size(*t, "epochs", cfg.train.epochs);
  }

  if (const json* di = find(root, "distill")) {
    if (!di->is_object()) bad_config("distill must be an object");
    cfg.ladder.steps = get_size(*di, "steps", cfg.ladder.steps);
    cfg.ladder.mode = mode_from(get_string(*di, "mode", mode_name(cfg.ladder.mode)));
    cfg.ladder.lambda_multiplier =
        get_number(*di, "lambda_multiplier", cfg.ladder.lambda_multiplier);
    cfg.ladder.delta = get_number(*di, "delta", cfg.ladder.delta);
    cfg.ladder.c_tilde = get_number(*di, "c_tilde", cfg.ladder.c_tilde);
    cfg.ladder.rad_f_mode =
        rad_f_mode_from(get_string(*di, "rad_f_mode", rad_f_mode_name(cfg.ladder.rad_f_mode)));
    cfg.ladder.rad_f_value = get_number(*di, "rad_f_value", cfg.ladder.rad_f_value);
    parse_train_common(*di, cfg.ladder.step);
    cfg.ladder.step.epochs = get_size(*di, "epochs", cfg.ladder.step.epochs);
  }

  if (const json* au = find(root, "augment")) {
    if (!au->is_object()) bad_config("augment must be an object");
    cfg.augment.alpha = get_number(*au, "alpha", cfg.augment.alpha);
    cfg.augment.m = get_size(*au, "m", cfg.augment.m);
    cfg.augment.ratio_mode = get_string(*au, "ratio_mode", cfg.augment.ratio_mode);
    if (cfg.augment.ratio_mode != "fixed" && cfg.augment.ratio_mode != "formula")
      bad_config("augment.ratio_mode must be fixed or formula");
    cfg.augment.ratio_value = get_number(*au, "ratio_value", cfg.augment.ratio_value);
    cfg.augment.ratio_constant = get_number(*au, "ratio_constant", cfg.augment.ratio_constant);
    if (cfg.augment.ratio_value <= 0.0) bad_config("augment.ratio_value must be positive");
  }

  if (const json* ws = find(root, "width_sweep")) {
    if (!ws->is_object()) bad_config("width_sweep must be an object");
    if (const json* w = find(*ws, "widths")) {
      if (!w->is_array() || w->empty()) bad_config("width_sweep.widths must be a nonempty array");
      cfg.sweep_widths.clear();
      for (const json& v : *w) {
        if (!v.is_number_integer() || v.get<double>() < 1.0)
          bad_config("width_sweep.widths entries must be positive integers");
        cfg.sweep_widths.push_back(v.get<std::size_t>());
      }
    }
  }

  if (const json* rl = find(root, "random_labels")) {
    if (!rl->is_object()) bad_config("random_labels must be an object");
    if (const json* f = find(*rl, "fractions")) {
      if (!f->is_array() || f->empty())
        bad_config("random_labels.fractions must be a nonempty array");
      cfg.fractions.clear();
      for (const json& v : *f) {
        if (!v.is_number() || v.get<double>() < 0.0 || v.get<double>() > 1.0)
          bad_config("random_labels.fractions entries must lie in [0, 1]");
        cfg.fractions.push_back(v.get<double>());
      }
    }
  }

  cfg.model_path = get_string(root, "model", "");
  cfg.anchors_path = get_string(root, "anchors", "");
  cfg.augment_samples = get_size(root, "augment_samples", cfg.augment_samples);

  if (const json* sp = find(root, "sparsify")) {
    if (!sp->is_object()) bad_config("sparsify must be an object");
    cfg.sparsify.rows_a = get_size(*sp, "rows_a", cfg.sparsify.rows_a);
    cfg.sparsify.rows_b = get_size(*sp, "rows_b", cfg.sparsify.rows_b);
    cfg.sparsify.cols = get_size(*sp, "cols", cfg.sparsify.cols);
    cfg.sparsify.k = get_size(*sp, "k", cfg.sparsify.k);
    cfg.sparsify.draws = get_size(*sp, "draws", cfg.sparsify.draws);
    cfg.sparsify.trials = get_size(*sp, "trials", cfg.sparsify.trials);
    for (std::size_t v : {cfg.sparsify.rows_a, cfg.sparsify.rows_b, cfg.sparsify.cols,
                          cfg.sparsify.k, cfg.sparsify.draws, cfg.sparsify.trials})
      if (v == 0) bad_config("sparsify settings must be positive integers");
  }

  try {
    cfg.train.validate();
    cfg.ladder.validate();
  } catch (const std::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }

  cfg.materialized = materialize(cfg).dump(2);
  cfg.config_hash = fnv1a_hex(cfg.materialized);
  return cfg;
}

ExperimentConfig load_config(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("config: cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str());
}

std::uint64_t cell_seed(const ExperimentConfig& cfg, std::size_t width, double fraction) {
  const std::uint64_t s = derive_seed(cfg.seed, "cell-width", width);
  return derive_seed(s, "cell-fraction", std::bit_cast<std::uint64_t>(fraction));
}

CellResult run_cell(const ExperimentConfig& cfg, std::size_t width, double fraction,
                    std::uint64_t seed) {
  CellResult out;
  out.data = build_dataset(cfg, derive_seed(seed, "data"));
  const Dataset& ds = out.data;
  out.y_train_used = permute_labels(ds.y_train, fraction, derive_seed(seed, "labels"));
  const std::vector<int>& y_train = out.y_train_used;

  std::vector<std::size_t> dims;
  dims.push_back(ds.x_train.cols());
  for (std::size_t h : cfg.hidden) dims.push_back(width != 0 ? width : h);
  dims.push_back(ds.classes);
  std::vector<GateKind> gates(cfg.hidden.size(), GateKind::relu);
  gates.push_back(GateKind::identity);

  DenseChain init = init_chain(dims, gates, derive_seed(seed, "init"));
  TrainConfig tc = cfg.train;
  tc.gamma = cfg.gamma;
  tc.seed = derive_seed(seed, "train");
  TrainResult teacher = train_initial(init, ds.x_train, y_train, tc);
  out.f = teacher.net;

  const std::size_t m = cfg.augment.m != 0 ? cfg.augment.m : 4 * ds.x_train.rows();
  AugmentationSampler sampler = make_sampler(ds.x_train, cfg.augment.alpha);
  AugmentedSample aug = sample_augmented(sampler, m, derive_seed(seed, "aug"));

  LadderConfig lc = cfg.ladder;
  lc.step.gamma = cfg.gamma;
  lc.step.seed = derive_seed(seed, "ladder");
  lc.ratio_bound = ratio_bound_of(cfg, ds.x_train.rows(), ds.x_train.cols());

  out.trace = distill_ladder(out.f, ds.x_train, y_train, ds.x_test, ds.y_test, aug.points, lc);

  auto hist_for = [&](const DenseChain& net) {
    GraphHyperParams hp = measure_chain_hyperparams(net, ds.x_train);
    const double normalizer = rad_compgraph(hp, ds.x_train.rows());
    return margin_histogram(margins(net.forward(ds.x_train), y_train), normalizer);
  };
  MarginHistogram pre = hist_for(out.f);
  MarginHistogram post = hist_for(out.trace.steps.at(out.trace.selected).snapshot);

  out.pre_q10 = pre.q10;
  out.pre_q50 = pre.q50;
  out.post_q10 = post.q10;
  out.post_q50 = post.q50;
  out.pre_hist_csv = histogram_csv(pre);
  out.post_hist_csv = histogram_csv(post);
  out.pre_meta_json = histogram_meta_json(pre, cfg.gamma);
  out.post_meta_json = histogram_meta_json(post, cfg.gamma);
  out.trace_csv = trace_csv_of(out.trace);
  return out;
}

std::filesystem::path run_ladder(const ExperimentConfig& cfg) {
  return run_experiment(cfg, "ladder", [&](const fs::path& out_dir,
                                           std::vector<std::string>& artifacts) {
    const double fraction = cfg.dataset.label_permute_fraction;
    CellResult cell = run_cell(cfg, 0, fraction, cell_seed(cfg, 0, fraction));

    std::string s =
        "# columns: step,lambda,phi,bound_total,generalization_measure_frob,complexity,"
        "train_error,test_error,softmax_error,margin_q10\n";
    auto row = [&s](std::size_t step, double lambda, double phi, double bt,
                    const DenseChain& net, double c, double tr, double te, double se, double q) {
      s += std::to_string(step);
      for (double v :
           {lambda, phi, bt, generalization_measure_frob(net), c, tr, te, se, q}) {
        s += ',';
        s += g17(v);
      }
      s += '\n';
    };
    const DistillationTrace& t = cell.trace;
    row(0, 0.0, 0.0, t.baseline.bound.total, cell.f, t.baseline.complexity,
        t.baseline.train_error, t.baseline.test_error, t.baseline.softmax_err,
        t.baseline.margin_q10);
    for (std::size_t j = 0; j < t.steps.size(); ++j) {
      const LadderStep& st = t.steps[j];
      row(j + 1, st.lambda, st.phi, st.bound.total, st.snapshot, st.complexity, st.train_error,
          st.test_error, st.softmax_err, st.margin_q10);
    }
    write_artifact(out_dir, artifacts, "traces/ladder.csv", s);
    write_cell_artifacts(out_dir, artifacts, cell);
  });
}

std::filesystem::path run_width_sweep(const ExperimentConfig& cfg) {
  return run_experiment(cfg, "width_sweep", [&](const fs::path& out_dir,
                                                std::vector<std::string>& artifacts) {
    const double fraction = cfg.dataset.label_permute_fraction;
    std::vector<CellResult> cells(cfg.sweep_widths.size());
    parallel_for(cells.size(), cfg.parallel, [&](std::size_t i) {
      const std::size_t w = cfg.sweep_widths[i];
      cells[i] = run_cell(cfg, w, fraction, cell_seed(cfg, w, fraction));
    });
    std::string summary = "# columns: width,pre_q10,pre_q50,post_q10,post_q50\n";
    for (std::size_t i = 0; i < cells.size(); ++i) {
      const CellResult& c = cells[i];
      const std::string w = std::to_string(cfg.sweep_widths[i]);
      write_artifact(out_dir, artifacts, "histograms/pre_w" + w + ".csv", c.pre_hist_csv);
      write_artifact(out_dir, artifacts, "histograms/pre_w" + w + "_meta.json", c.pre_meta_json);
      write_artifact(out_dir, artifacts, "histograms/post_w" + w + ".csv", c.post_hist_csv);
      write_artifact(out_dir, artifacts, "histograms/post_w" + w + "_meta.json", c.post_meta_json);
      write_artifact(out_dir, artifacts, "traces/trace_w" + w + ".csv", c.trace_csv);
      summary += w;
      for (double v : {c.pre_q10, c.pre_q50, c.post_q10, c.post_q50}) {
        summary += ',';
        summary += g17(v);
      }
      summary += '\n';
    }
    write_artifact(out_dir, artifacts, "traces/width_summary.csv", summary);
  });
}

std::filesystem::path run_random_labels(const ExperimentConfig& cfg) {
  return run_experiment(cfg, "random_labels", [&](const fs::path& out_dir,
                                                  std::vector<std::string>& artifacts) {
    // With a uniform hidden stack, pass the width explicitly so a fraction-0
    // cell is the same cell the width sweep runs at that width.
    std::size_t width = cfg.hidden.front();
    for (std::size_t h : cfg.hidden)
      if (h != width) width = 0;
    std::vector<CellResult> cells(cfg.fractions.size());
    parallel_for(cells.size(), cfg.parallel, [&](std::size_t i) {
      cells[i] = run_cell(cfg, width, cfg.fractions[i], cell_seed(cfg, width, cfg.fractions[i]));
    });
    std::string summary = "# columns: fraction,post_q10,post_q50\n";
    for (std::size_t i = 0; i < cells.size(); ++i) {
      const CellResult& c = cells[i];
      const std::string tag = fraction_tag(cfg.fractions[i]);
      write_artifact(out_dir, artifacts, "histograms/hist_" + tag + ".csv", c.post_hist_csv);
      write_artifact(out_dir, artifacts, "histograms/hist_" + tag + "_meta.json",
                     c.post_meta_json);
      write_artifact(out_dir, artifacts, "traces/trace_" + tag + ".csv", c.trace_csv);
      summary += g17(cfg.fractions[i]);
      summary += ',';
      summary += g17(c.post_q10);
      summary += ',';
      summary += g17(c.post_q50);
      summary += '\n';
    }
    write_artifact(out_dir, artifacts, "traces/fraction_summary.csv", summary);
  });
}

std::filesystem::path run_bound_compare(const ExperimentConfig& cfg) {
  return run_experiment(cfg, "bound_compare", [&](const fs::path& out_dir,
                                                  std::vector<std::string>& artifacts) {
    const double fraction = cfg.dataset.label_permute_fraction;
    CellResult cell = run_cell(cfg, 0, fraction, cell_seed(cfg, 0, fraction));
    const DenseMatrix& x = cell.data.x_train;
    const double x_frob = frobenius_norm(x);

    auto stable_of = [&](const DenseChain& net) {
      std::vector<double> spec, frob;
      std::size_t width_max = net.input_dim();
      for (const DenseMatrix& w : net.weights) {
        spec.push_back(spectral_norm(w));
        frob.push_back(frobenius_norm(w));
        width_max = std::max({width_max, w.rows(), w.cols()});
      }
      return stable_rank_rad(spec, frob, x_frob, x.rows(), width_max);
    };
    auto radg_of = [&](const DenseChain& net) {
      return rad_compgraph(measure_chain_hyperparams(net, x), x.rows());
    };

    std::string s = "# columns: step,phi,rad_compgraph,stable_rank_rad,bound_total\n";
    auto row = [&s](std::size_t step, double phi, double radg, double stable, double bt) {
      s += std::to_string(step);
      for (double v : {phi, radg, stable, bt}) {
        s += ',';
        s += g17(v);
      }
      s += '\n';
    };
    const DistillationTrace& t = cell.trace;
    row(0, 0.0, radg_of(cell.f), stable_of(cell.f), t.baseline.bound.total);
    for (std::size_t j = 0; j < t.steps.size(); ++j) {
      const LadderStep& st = t.steps[j];
      row(j + 1, st.phi, radg_of(st.snapshot), stable_of(st.snapshot), st.bound.total);
    }
    write_artifact(out_dir, artifacts, "traces/bound_compare.csv", s);
    write_artifact(out_dir, artifacts, "traces/trace.csv", cell.trace_csv);
  });
}

std::filesystem::path run_train_cmd(const ExperimentConfig& cfg) {
  return run_experiment(cfg, "train", [&](const fs::path& out_dir,
                                          std::vector<std::string>& artifacts) {
    Dataset ds = build_dataset(cfg, derive_seed(cfg.seed, "data"));
    std::vector<int> y = permute_labels(ds.y_train, cfg.dataset.label_permute_fraction,
                                        derive_seed(cfg.seed, "labels"));
    std::vector<std::size_t> dims;
    dims.push_back(ds.x_train.cols());
    for (std::size_t h : cfg.hidden) dims.push_back(h);
    dims.push_back(ds.classes);
    std::vector<GateKind> gates(cfg.hidden.size(), GateKind::relu);
    gates.push_back(GateKind::identity);

    DenseChain init = init_chain(dims, gates, derive_seed(cfg.seed, "init"));
    TrainConfig tc = cfg.train;
    tc.gamma = cfg.gamma;
    tc.seed = derive_seed(cfg.seed, "train");
    TrainResult tr = train_initial(init, ds.x_train, y, tc);

    std::string s = "# columns: train_error,test_error,softmax_error,final_loss\n";
    const double test_err = zero_one_error(tr.net.forward(ds.x_test), ds.y_test);
    const double sm = softmax_error(tr.net.forward(ds.x_train), y, cfg.gamma);
    bool first = true;
    for (double v : {tr.train_error, test_err, sm, tr.final_loss}) {
      if (!first) s += ',';
      s += g17(v);
      first = false;
    }
    s += '\n';
    write_artifact(out_dir, artifacts, "traces/train.csv", s);
    save_model(out_dir, artifacts, "models/teacher.json", tr.net, ds.x_train);
  });
}

std::filesystem::path run_distill_cmd(const ExperimentConfig& cfg) {
  return run_experiment(cfg, "distill", [&](const fs::path& out_dir,
                                            std::vector<std::string>& artifacts) {
    const double fraction = cfg.dataset.label_permute_fraction;
    CellResult cell = run_cell(cfg, 0, fraction, cell_seed(cfg, 0, fraction));
    write_cell_artifacts(out_dir, artifacts, cell);
  });
}

std::filesystem::path run_bounds_cmd(const ExperimentConfig& cfg) {
  return run_experiment(cfg, "bounds", [&](const fs::path& out_dir,
                                           std::vector<std::string>& artifacts) {
    if (cfg.model_path.empty()) bad_config("bounds needs \"model\" (a saved model manifest)");
    if (!fs::exists(cfg.model_path)) bad_config("model file not found: " + cfg.model_path);
    CanonicalGraph g = load_graph(cfg.model_path);
    Dataset ds = build_dataset(cfg, derive_seed(cfg.seed, "data"));

    BoundInputs bi;
    bi.n = ds.x_train.rows();
    bi.m = cfg.augment.m != 0 ? cfg.augment.m : 4 * ds.x_train.rows();
    bi.k = ds.classes;
    bi.gamma = cfg.gamma;
    bi.delta = cfg.ladder.delta;
    bi.ratio_bound = ratio_bound_of(cfg, ds.x_train.rows(), ds.x_train.cols());
    bi.hp = measure_hyperparams(g, ds.x_train);
    bi.rad_f = cfg.ladder.rad_f_mode == RadFMode::value ? cfg.ladder.rad_f_value : 0.0;
    bi.phi = 0.0;
    bi.softmax_err = softmax_error(forward_logits(g, ds.x_train), ds.y_train, cfg.gamma);
    bi.c_tilde = cfg.ladder.c_tilde;

    BoundReport rep = full_bound_compgraph(bi);
    write_artifact(out_dir, artifacts, "bounds/report.json", report_to_json(rep, bi) + "\n");
    write_artifact(out_dir, artifacts, "bounds/report.csv",
                   report_csv_header() + "\n" + report_csv_row(rep) + "\n");
  });
}

std::filesystem::path run_sparsify_cmd(const ExperimentConfig& cfg) {
  return run_experiment(cfg, "sparsify", [&](const fs::path& out_dir,
                                             std::vector<std::string>& artifacts) {
    const SparsifyCliSpec& sp = cfg.sparsify;
    std::string s = "# columns: trial,construction,k,achieved_error,error_bound\n";
    auto add = [&s](std::size_t trial, const char* name, std::size_t k, double err, double bound) {
      s += std::to_string(trial);
      s += ',';
      s += name;
      s += ',';
      s += std::to_string(k);
      s += ',';
      s += g17(err);
      s += ',';
      s += g17(bound);
      s += '\n';
    };
    for (std::size_t t = 0; t < sp.trials; ++t) {
      std::mt19937_64 eng = make_engine(derive_seed(cfg.seed, "sparsify-trial", t));
      DenseMatrix a = random_matrix(sp.rows_a, sp.cols, eng);
      DenseMatrix b = random_matrix(sp.rows_b, sp.cols, eng);
      MaureyResult plain =
          maurey_product(a, b, sp.k, derive_seed(cfg.seed, "plain", t), sp.draws);
      add(t, "maurey", sp.k, plain.achieved_error, plain.error_bound);
      MaureyResult bounded =
          maurey_product_bounded(a, b, sp.k, derive_seed(cfg.seed, "bounded", t), sp.draws);
      add(t, "maurey_bounded", sp.k, bounded.achieved_error, bounded.error_bound);
      DenseMatrix w = random_matrix(sp.rows_a, sp.cols, eng);
      DenseMatrix x = random_matrix(sp.rows_b, sp.cols, eng);
      const double r = norm21_of_transpose(w);
      CoverResult cover = cover21_sample(w, x, r, sp.k, derive_seed(cfg.seed, "cover", t),
                                         sp.draws);
      add(t, "cover21", sp.k, cover.achieved_error, cover.error_bound);
    }
    write_artifact(out_dir, artifacts, "traces/sparsify.csv", s);
  });
}

std::filesystem::path run_augment_cmd(const ExperimentConfig& cfg) {
  return run_experiment(cfg, "augment", [&](const fs::path& out_dir,
                                            std::vector<std::string>& artifacts) {
    if (cfg.anchors_path.empty()) bad_config("augment needs \"anchors\" (a DBM1 matrix file)");
    if (!fs::exists(cfg.anchors_path)) bad_config("anchors file not found: " + cfg.anchors_path);
    DenseMatrix anchors = read_dbm(cfg.anchors_path);
    AugmentationSampler sampler = make_sampler(anchors, cfg.augment.alpha);
    AugmentedSample sample =
        sample_augmented(sampler, cfg.augment_samples, derive_seed(cfg.seed, "aug"));

    const fs::path points_path = out_dir / "augment/samples.dbm";
    fs::create_directories(points_path.parent_path());
    write_dbm(points_path, sample.points);
    artifacts.push_back("augment/samples.dbm");

    std::size_t uniform_draws = 0;
    for (bool u : sample.from_uniform) uniform_draws += u ? 1 : 0;
    json meta;
    meta["alpha"] = sampler.alpha;
    meta["beta"] = sampler.beta;
    meta["sigma"] = sampler.sigma;
    meta["m"] = cfg.augment_samples;
    meta["seed"] = cfg.seed;
    meta["pure_uniform"] = sample.pure_uniform;
    meta["uniform_draws"] = uniform_draws;
    write_artifact(out_dir, artifacts, "augment/meta.json", meta.dump(2) + "\n");
  });
}

}  // namespace distillbound
