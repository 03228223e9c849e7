#include "freeup/config.hpp"

#include <fstream>
#include <set>
#include <stdexcept>
#include <string>

namespace freeup::config {

using nlohmann::json;

namespace {

void check_keys(const json& j, const std::set<std::string>& allowed, const char* what) {
  if (!j.is_object()) throw std::invalid_argument(std::string(what) + ": expected a JSON object");
  for (const auto& [key, _] : j.items()) {
    if (!allowed.count(key)) throw std::invalid_argument(std::string(what) + ": unknown key '" + key + "'");
  }
}

template <typename T>
void read(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace

json to_json(const model::AEConfig& c) {
  return {{"in_planes", c.in_planes},
          {"widths", c.widths},
          {"latent", c.latent},
          {"attention", c.attention},
          {"attention_reduction", c.attention_reduction},
          {"nonlinearity", std::string(nn::to_string(c.nonlinearity))},
          {"seed", c.seed}};
}

json to_json(const training::TrainConfig& c) {
  return {{"learning_rate", c.learning_rate}, {"batch_size", c.batch_size},
          {"max_epochs", c.max_epochs},       {"lambda_nll", c.lambda_nll},
          {"lambda_pen", c.lambda_pen},       {"lambda_f", c.lambda_f},
          {"P", c.P},                         {"D", c.D},
          {"seed", c.seed},                   {"patience", c.patience},
          {"n_runs", c.n_runs},               {"adam_beta1", c.adam_beta1},
          {"adam_beta2", c.adam_beta2},       {"adam_eps", c.adam_eps},
          {"min_rel_improvement", c.min_rel_improvement}};
}

json to_json(const training::Ablation& a) {
  json j{{"no_low_branch", a.no_low_branch},
         {"no_high_branch", a.no_high_branch},
         {"no_decouple", a.no_decouple},
         {"no_freq_loss", a.no_freq_loss},
         {"static_fusion", nullptr}};
  if (a.static_fusion) j["static_fusion"] = std::string(fusion::to_string(*a.static_fusion));
  return j;
}

model::AEConfig ae_config_from_json(const json& j) {
  check_keys(j, {"in_planes", "widths", "latent", "attention", "attention_reduction", "nonlinearity", "seed"},
             "model config");
  model::AEConfig c;
  read(j, "in_planes", c.in_planes);
  read(j, "widths", c.widths);
  read(j, "latent", c.latent);
  read(j, "attention", c.attention);
  read(j, "attention_reduction", c.attention_reduction);
  read(j, "seed", c.seed);
  if (j.contains("nonlinearity")) c.nonlinearity = nn::parse_nonlinearity(j.at("nonlinearity").get<std::string>());
  c.validate();
  return c;
}

training::TrainConfig train_config_from_json(const json& j) {
  check_keys(j,
             {"learning_rate", "batch_size", "max_epochs", "lambda_nll", "lambda_pen", "lambda_f", "P", "D", "seed",
              "patience", "n_runs", "adam_beta1", "adam_beta2", "adam_eps", "min_rel_improvement"},
             "train config");
  training::TrainConfig c;
  read(j, "learning_rate", c.learning_rate);
  read(j, "batch_size", c.batch_size);
  read(j, "max_epochs", c.max_epochs);
  read(j, "lambda_nll", c.lambda_nll);
  read(j, "lambda_pen", c.lambda_pen);
  read(j, "lambda_f", c.lambda_f);
  read(j, "P", c.P);
  read(j, "D", c.D);
  read(j, "seed", c.seed);
  read(j, "patience", c.patience);
  read(j, "n_runs", c.n_runs);
  read(j, "adam_beta1", c.adam_beta1);
  read(j, "adam_beta2", c.adam_beta2);
  read(j, "adam_eps", c.adam_eps);
  read(j, "min_rel_improvement", c.min_rel_improvement);
  c.validate();
  return c;
}

training::Ablation ablation_from_json(const json& j) {
  check_keys(j, {"no_low_branch", "no_high_branch", "no_decouple", "no_freq_loss", "static_fusion"}, "ablation");
  training::Ablation a;
  read(j, "no_low_branch", a.no_low_branch);
  read(j, "no_high_branch", a.no_high_branch);
  read(j, "no_decouple", a.no_decouple);
  read(j, "no_freq_loss", a.no_freq_loss);
  if (j.contains("static_fusion") && !j.at("static_fusion").is_null()) {
    a.static_fusion = fusion::parse_static_mode(j.at("static_fusion").get<std::string>());
  }
  a.validate();
  return a;
}

json to_json(const RunConfig& c) {
  return {{"train", to_json(c.train)}, {"model", to_json(c.model)}, {"ablation", to_json(c.ablation)}};
}

RunConfig run_config_from_json(const json& j) {
  check_keys(j, {"train", "model", "ablation"}, "run config");
  RunConfig c;
  if (j.contains("train")) c.train = train_config_from_json(j.at("train"));
  if (j.contains("model")) c.model = ae_config_from_json(j.at("model"));
  if (j.contains("ablation")) c.ablation = ablation_from_json(j.at("ablation"));
  return c;
}

RunConfig read_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open config file " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw std::invalid_argument("malformed config file " + path.string() + ": " + e.what());
  }
  try {
    return run_config_from_json(j);
  } catch (const json::exception& e) {
    throw std::invalid_argument("bad value in config file " + path.string() + ": " + e.what());
  }
}

RunConfig desk_preset() {
  RunConfig c;
  c.model.widths = {8, 16, 32};
  c.model.latent = 4;
  c.train.batch_size = 32;
  c.train.max_epochs = 8;
  c.train.n_runs = 1;
  return c;
}

std::uint64_t config_hash(const json& j) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : j.dump()) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace freeup::config
