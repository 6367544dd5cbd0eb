#include <cstdint>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"

#include "distillbound/error.hpp"
#include "distillbound/experiments.hpp"

namespace {

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw distillbound::ConfigError("config: cannot open " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"distillbound: distillation ladders and the bounds they certify"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path;
  std::uint64_t seed_override = 0;
  std::string out_override;
  std::size_t parallel_override = 0;
  app.add_option("--config", config_path, "JSON configuration file")->required();
  CLI::Option* seed_opt =
      app.add_option("--seed", seed_override, "Override the config seed");
  app.add_option("--out", out_override, "Override the output directory");
  app.add_option("--parallel", parallel_override, "Worker threads for multi-cell experiments");

  app.add_subcommand("train", "Train a teacher network and save it");
  app.add_subcommand("distill", "Run one distillation ladder off a fresh teacher");
  app.add_subcommand("bounds", "Evaluate the risk bound for a saved model");
  app.add_subcommand("sparsify", "Random-matrix sampling constructions, achieved vs bound");
  app.add_subcommand("augment", "Draw augmentation samples around stored anchors");
  app.add_subcommand("ladder", "Full ladder experiment with bound and margin traces");
  app.add_subcommand("width-sweep", "Margin histograms before/after distillation across widths");
  app.add_subcommand("random-labels", "Margin histograms across label-permutation fractions");
  app.add_subcommand("bound-compare", "Layer-norm complexity comparison along a ladder");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;  // help exits clean, anything else is a config problem
  }

  const std::string name = app.get_subcommands().front()->get_name();
  std::string experiment = name;
  for (char& c : experiment)
    if (c == '-') c = '_';

  try {
    nlohmann::json doc = nlohmann::json::parse(slurp(config_path), nullptr, true);
    if (!doc.is_object()) throw distillbound::ConfigError("config: document must be an object");
    doc["experiment"] = experiment;
    if (seed_opt->count() > 0) doc["seed"] = seed_override;
    if (!out_override.empty()) doc["out"] = out_override;
    if (parallel_override != 0) doc["parallel"] = parallel_override;
    distillbound::ExperimentConfig cfg = distillbound::parse_config(doc.dump());

    std::filesystem::path out;
    if (name == "train") {
      out = distillbound::run_train_cmd(cfg);
    } else if (name == "distill") {
      out = distillbound::run_distill_cmd(cfg);
    } else if (name == "bounds") {
      out = distillbound::run_bounds_cmd(cfg);
    } else if (name == "sparsify") {
      out = distillbound::run_sparsify_cmd(cfg);
    } else if (name == "augment") {
      out = distillbound::run_augment_cmd(cfg);
    } else if (name == "ladder") {
      out = distillbound::run_ladder(cfg);
    } else if (name == "width-sweep") {
      out = distillbound::run_width_sweep(cfg);
    } else if (name == "random-labels") {
      out = distillbound::run_random_labels(cfg);
    } else {
      out = distillbound::run_bound_compare(cfg);
    }
    std::cout << "wrote " << out.string() << std::endl;
    return 0;
  } catch (const nlohmann::json::parse_error& e) {
    std::cerr << "error: config: invalid JSON: " << e.what() << std::endl;
    return 2;
  } catch (const distillbound::ConfigError& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return 3;
  }
}
