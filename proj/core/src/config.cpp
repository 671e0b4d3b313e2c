// SPDX-License-Identifier: Apache-2.0
#include "mozolab/config.hpp"

#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace mozolab {

namespace {

using nlohmann::json;

void check_keys(const json& block, const char* name, const std::set<std::string>& allowed) {
  for (auto it = block.begin(); it != block.end(); ++it) {
    if (!allowed.count(it.key())) {
      throw std::invalid_argument(std::string("config: unknown field '") + name + "." +
                                  it.key() + "'");
    }
  }
}

template <typename T>
void maybe(const json& block, const char* key, T& out) {
  if (block.contains(key)) out = block.at(key).get<T>();
}

void parse_model(const json& block, ModelConfig& m) {
  check_keys(block, "model",
             {"num_layers", "vision_width", "language_width", "vision_input", "language_input",
              "embed_dim", "adapter", "rank", "experts", "logit_scale"});
  maybe(block, "num_layers", m.num_layers);
  maybe(block, "vision_width", m.vision_width);
  maybe(block, "language_width", m.language_width);
  maybe(block, "vision_input", m.vision_input);
  maybe(block, "language_input", m.language_input);
  maybe(block, "embed_dim", m.embed_dim);
  if (block.contains("adapter")) m.adapter = parse_adapter(block.at("adapter").get<std::string>());
  maybe(block, "rank", m.rank);
  maybe(block, "experts", m.experts);
  maybe(block, "logit_scale", m.logit_scale);
}

void parse_data(const json& block, DataConfig& d) {
  check_keys(block, "data",
             {"classes", "latent_dim", "vision_dim", "language_dim", "train_per_class",
              "test_per_class", "sigma"});
  maybe(block, "classes", d.classes);
  maybe(block, "latent_dim", d.latent_dim);
  maybe(block, "vision_dim", d.vision_dim);
  maybe(block, "language_dim", d.language_dim);
  maybe(block, "train_per_class", d.train_per_class);
  maybe(block, "test_per_class", d.test_per_class);
  maybe(block, "sigma", d.sigma);
}

void parse_optim(const json& block, ZoConfig& z) {
  check_keys(block, "optim",
             {"epsilon", "epsilon_vision", "epsilon_language", "candidates", "sign_normalize",
              "lambda", "probe", "central_difference", "mozo_naive"});
  maybe(block, "epsilon", z.epsilon);
  maybe(block, "epsilon_vision", z.epsilon_vision);
  maybe(block, "epsilon_language", z.epsilon_language);
  maybe(block, "candidates", z.candidates);
  maybe(block, "sign_normalize", z.sign_normalize);
  maybe(block, "lambda", z.lambda);
  if (block.contains("probe")) {
    const std::string p = block.at("probe").get<std::string>();
    if (p == "gaussian") {
      z.probe = ProbeKind::kGaussian;
    } else if (p == "rademacher") {
      z.probe = ProbeKind::kRademacher;
    } else {
      throw std::invalid_argument("config: unknown probe kind '" + p + "'");
    }
  }
  maybe(block, "central_difference", z.central_difference);
  maybe(block, "mozo_naive", z.mozo_naive);
}

void parse_run(const json& block, RunConfig& cfg) {
  check_keys(block, "run",
             {"branch", "pattern", "strategy", "inc", "epochs", "batch_size", "learning_rate",
              "seed", "dataset_seed", "model_seed", "optimizer_seed", "stream_shuffle_seed"});
  if (block.contains("branch")) cfg.branches = parse_branches(block.at("branch").get<std::string>());
  if (block.contains("pattern")) cfg.pattern = parse_pattern(block.at("pattern").get<std::string>());
  if (block.contains("strategy")) cfg.strategy = parse_strategy(block.at("strategy").get<std::string>());
  maybe(block, "inc", cfg.inc_size);
  maybe(block, "epochs", cfg.epochs);
  maybe(block, "batch_size", cfg.batch_size);
  maybe(block, "learning_rate", cfg.learning_rate);
  maybe(block, "seed", cfg.run_seed);
  if (block.contains("dataset_seed")) cfg.dataset_seed = block.at("dataset_seed").get<std::uint64_t>();
  if (block.contains("model_seed")) cfg.model_seed = block.at("model_seed").get<std::uint64_t>();
  if (block.contains("optimizer_seed")) {
    cfg.optimizer_seed = block.at("optimizer_seed").get<std::uint64_t>();
  }
  if (block.contains("stream_shuffle_seed")) {
    cfg.stream_shuffle_seed = block.at("stream_shuffle_seed").get<std::uint64_t>();
  }
}

}  // namespace

RunConfig run_config_from_json(const std::string& json_text) {
  json root;
  try {
    root = json::parse(json_text);
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("config: invalid JSON: ") + e.what());
  }
  check_keys(root, "config", {"model", "data", "optim", "run"});
  RunConfig cfg;
  try {
    if (root.contains("model")) parse_model(root.at("model"), cfg.model);
    if (root.contains("data")) parse_data(root.at("data"), cfg.data);
    if (root.contains("optim")) parse_optim(root.at("optim"), cfg.zo);
    if (root.contains("run")) parse_run(root.at("run"), cfg);
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("config: bad field value: ") + e.what());
  }
  return cfg;
}

RunConfig run_config_from_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::invalid_argument("config: cannot open " + path);
  std::ostringstream buf;
  buf << is.rdbuf();
  return run_config_from_json(buf.str());
}

std::string run_config_to_json(const RunConfig& cfg) {
  json root;
  root["model"] = {{"num_layers", cfg.model.num_layers},
                   {"vision_width", cfg.model.vision_width},
                   {"language_width", cfg.model.language_width},
                   {"vision_input", cfg.model.vision_input},
                   {"language_input", cfg.model.language_input},
                   {"embed_dim", cfg.model.embed_dim},
                   {"adapter", adapter_name(cfg.model.adapter)},
                   {"rank", cfg.model.rank},
                   {"experts", cfg.model.experts},
                   {"logit_scale", cfg.model.logit_scale}};
  root["data"] = {{"classes", cfg.data.classes},
                  {"latent_dim", cfg.data.latent_dim},
                  {"vision_dim", cfg.data.vision_dim},
                  {"language_dim", cfg.data.language_dim},
                  {"train_per_class", cfg.data.train_per_class},
                  {"test_per_class", cfg.data.test_per_class},
                  {"sigma", cfg.data.sigma}};
  root["optim"] = {{"epsilon", cfg.zo.epsilon},
                   {"epsilon_vision", cfg.zo.epsilon_vision},
                   {"epsilon_language", cfg.zo.epsilon_language},
                   {"candidates", cfg.zo.candidates},
                   {"sign_normalize", cfg.zo.sign_normalize},
                   {"lambda", cfg.zo.lambda},
                   {"probe", cfg.zo.probe == ProbeKind::kGaussian ? "gaussian" : "rademacher"},
                   {"central_difference", cfg.zo.central_difference},
                   {"mozo_naive", cfg.zo.mozo_naive}};
  json run = {{"branch", branches_name(cfg.branches)},
              {"pattern", cfg.pattern.to_string()},
              {"strategy", strategy_name(cfg.strategy)},
              {"inc", cfg.inc_size},
              {"epochs", cfg.epochs},
              {"batch_size", cfg.batch_size},
              {"learning_rate", cfg.learning_rate},
              {"seed", cfg.run_seed},
              {"dataset_seed", cfg.resolved_dataset_seed()},
              {"model_seed", cfg.resolved_model_seed()},
              {"optimizer_seed", cfg.resolved_optimizer_seed()}};
  if (cfg.stream_shuffle_seed) run["stream_shuffle_seed"] = *cfg.stream_shuffle_seed;
  root["run"] = run;
  return root.dump(2);
}

}  // namespace mozolab
