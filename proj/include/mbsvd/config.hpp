#pragma once

#include <filesystem>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mbsvd/error.hpp"
#include "mbsvd/io.hpp"
#include "mbsvd/model.hpp"
#include "mbsvd/training.hpp"

namespace mbsvd {

/// Everything a training run needs. Serialized as one flat JSON object whose
/// keys mirror the TrainConfig and ModelConfig field names.
struct RunConfig {
  TrainConfig train;
  ModelConfig model;
  std::string data_dir = "data";
  std::string out_dir = "runs";
};

inline std::string_view to_string(ContrastMode m) { return m == ContrastMode::per_layer ? "per_layer" : "final_only"; }

inline ContrastMode parse_contrast_mode(std::string_view s) {
  if (s == "per_layer") return ContrastMode::per_layer;
  if (s == "final_only") return ContrastMode::final_only;
  throw ConfigError("contrast_mode must be per_layer or final_only, got '" + std::string(s) + "'");
}

inline nlohmann::json to_json(const RunConfig& c) {
  const auto& t = c.train;
  const auto& m = c.model;
  return {{"learning_rate", t.learning_rate},
          {"batch_size", t.batch_size},
          {"lambda", t.lambda},
          {"beta", t.beta},
          {"tau", t.tau},
          {"epochs", t.epochs},
          {"patience", t.patience},
          {"seed", t.seed},
          {"infonce_batch_nodes", t.infonce_batch_nodes},
          {"adam_beta1", t.adam_beta1},
          {"adam_beta2", t.adam_beta2},
          {"adam_eps", t.adam_eps},
          {"contrast_mode", std::string(to_string(t.contrast_mode))},
          {"infonce_full_denominator", t.infonce_full_denominator},
          {"use_ranking_loss", t.use_ranking_loss},
          {"use_contrastive_loss", t.use_contrastive_loss},
          {"score_view", std::string(to_string(t.score_view))},
          {"log_elapsed", t.log_elapsed},
          {"embed_dim", m.embed_dim},
          {"num_layers", m.num_layers},
          {"rank", m.rank},
          {"edge_dropout_rate", m.edge_dropout_rate},
          {"oversampling", m.oversampling},
          {"power_iters", m.power_iters},
          {"data_dir", c.data_dir},
          {"out_dir", c.out_dir}};
}

/// Strict parse: every key must be known; missing keys keep their defaults.
inline RunConfig run_config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  const nlohmann::json known = to_json(RunConfig{});
  for (const auto& [key, value] : j.items())
    if (!known.contains(key)) throw ConfigError("unknown config key '" + key + "'");

  RunConfig c;
  auto& t = c.train;
  auto& m = c.model;
  try {
    auto get = [&](const char* key, auto& field) {
      if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
    };
    get("learning_rate", t.learning_rate);
    get("batch_size", t.batch_size);
    get("lambda", t.lambda);
    get("beta", t.beta);
    get("tau", t.tau);
    get("epochs", t.epochs);
    get("patience", t.patience);
    get("seed", t.seed);
    get("infonce_batch_nodes", t.infonce_batch_nodes);
    get("adam_beta1", t.adam_beta1);
    get("adam_beta2", t.adam_beta2);
    get("adam_eps", t.adam_eps);
    if (j.contains("contrast_mode")) t.contrast_mode = parse_contrast_mode(j.at("contrast_mode").get<std::string>());
    get("infonce_full_denominator", t.infonce_full_denominator);
    get("use_ranking_loss", t.use_ranking_loss);
    get("use_contrastive_loss", t.use_contrastive_loss);
    if (j.contains("score_view")) t.score_view = parse_score_view(j.at("score_view").get<std::string>());
    get("log_elapsed", t.log_elapsed);
    get("embed_dim", m.embed_dim);
    get("num_layers", m.num_layers);
    get("rank", m.rank);
    get("edge_dropout_rate", m.edge_dropout_rate);
    get("oversampling", m.oversampling);
    get("power_iters", m.power_iters);
    get("data_dir", c.data_dir);
    get("out_dir", c.out_dir);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config value has wrong type: ") + e.what());
  }
  m.seed = t.seed;
  t.validate();
  m.validate();
  return c;
}

/// Applies "key=value" overrides. Values are read as JSON when they parse,
/// otherwise as plain strings.
inline nlohmann::json apply_overrides(nlohmann::json j, const std::vector<std::string>& overrides) {
  for (const auto& o : overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("override must be key=value, got '" + o + "'");
    const std::string key = o.substr(0, eq), raw = o.substr(eq + 1);
    nlohmann::json v = nlohmann::json::parse(raw, nullptr, false);
    j[key] = v.is_discarded() ? nlohmann::json(raw) : v;
  }
  return j;
}

inline RunConfig load_run_config(const std::filesystem::path& path, const std::vector<std::string>& overrides = {}) {
  nlohmann::json j = nlohmann::json::parse(read_file(path), nullptr, false);
  if (j.is_discarded()) throw ConfigError("config " + path.string() + " is not valid JSON");
  return run_config_from_json(apply_overrides(std::move(j), overrides));
}

// ---------------------------------------------------------------------------
// Checkpoints

inline nlohmann::json checkpoint_to_json(const RunConfig& cfg, const Checkpoint& ck) {
  return {{"format", "mbsvd-checkpoint"},
          {"version", 1},
          {"config", to_json(cfg)},
          {"params", params_to_json(ck.params, cfg.model.seed)},
          {"optimizer",
           {{"step_count", ck.optimizer.step_count},
            {"first_moment", params_to_json(ck.optimizer.first_moment, cfg.model.seed)},
            {"second_moment", params_to_json(ck.optimizer.second_moment, cfg.model.seed)}}},
          {"rng_state", ck.rng_state},
          {"epoch", ck.epoch},
          {"val_recall@10", ck.val_recall10}};
}

inline void save_checkpoint(const std::filesystem::path& path, const RunConfig& cfg, const Checkpoint& ck) {
  atomic_write(path, checkpoint_to_json(cfg, ck).dump());
}

inline std::pair<RunConfig, Checkpoint> load_checkpoint(const std::filesystem::path& path) {
  const std::string text = read_file(path);
  const nlohmann::json j = nlohmann::json::parse(text, nullptr, false);
  if (j.is_discarded() || !j.is_object() || j.value("format", "") != "mbsvd-checkpoint")
    throw StateError("corrupt checkpoint " + path.string());
  try {
    RunConfig cfg = run_config_from_json(j.at("config"));
    Checkpoint ck;
    ck.params = params_from_json(j.at("params"));
    ck.optimizer.step_count = j.at("optimizer").at("step_count").get<std::size_t>();
    ck.optimizer.first_moment = params_from_json(j.at("optimizer").at("first_moment"));
    ck.optimizer.second_moment = params_from_json(j.at("optimizer").at("second_moment"));
    ck.rng_state = j.at("rng_state").get<std::string>();
    ck.epoch = j.at("epoch").get<std::size_t>();
    ck.val_recall10 = j.at("val_recall@10").get<double>();
    return {cfg, ck};
  } catch (const nlohmann::json::exception& e) {
    throw StateError("corrupt checkpoint " + path.string() + ": " + e.what());
  } catch (const ConfigError& e) {
    throw StateError("corrupt checkpoint " + path.string() + ": " + e.what());
  }
}

}  // namespace mbsvd
