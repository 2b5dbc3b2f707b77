#pragma once

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mbsvd/config.hpp"
#include "mbsvd/dataio.hpp"
#include "mbsvd/error.hpp"
#include "mbsvd/eval.hpp"
#include "mbsvd/graph.hpp"
#include "mbsvd/io.hpp"
#include "mbsvd/model.hpp"
#include "mbsvd/training.hpp"

namespace mbsvd::cli {

namespace fs = std::filesystem;

inline constexpr const char* kEngineVersion = "0.1.0";
inline constexpr const char* kOutDirEnv = "MBSVD_OUT_DIR";

/// Runs `body`, mapping library errors to their exit codes.
inline int guarded(std::ostream& err, const std::function<int()>& body) {
  try {
    return body();
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return static_cast<int>(e.code());
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << '\n';
    return static_cast<int>(ExitCode::config_error);
  } catch (const nlohmann::json::exception& e) {
    err << "error: " << e.what() << '\n';
    return static_cast<int>(ExitCode::config_error);
  }
}

inline std::string utc_timestamp() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return os.str();
}

inline std::string aligned_table(const std::vector<std::string>& header, const std::vector<std::vector<std::string>>& rows) {
  std::vector<std::size_t> width(header.size());
  for (std::size_t c = 0; c < header.size(); ++c) width[c] = header[c].size();
  for (const auto& r : rows)
    for (std::size_t c = 0; c < r.size() && c < width.size(); ++c) width[c] = std::max(width[c], r[c].size());
  std::ostringstream os;
  auto line = [&](const std::vector<std::string>& cells) {
    for (std::size_t c = 0; c < cells.size(); ++c) {
      if (c) os << "  ";
      os << std::left << std::setw(static_cast<int>(width[c])) << cells[c];
    }
    os << '\n';
  };
  line(header);
  for (const auto& r : rows) line(r);
  return os.str();
}

inline std::string fmt(double v) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(4) << v;
  return os.str();
}

// ---------------------------------------------------------------------------
// prepare

struct PrepareArgs {
  std::string input;
  std::vector<std::string> behaviors;
  std::string target;
  std::size_t min_interactions = 5;
  std::uint64_t seed = 0;
  std::string out = "data";
};

struct PreparedData {
  InteractionDataset dataset;
  BehaviorGraph graph;
  std::string fingerprint;
};

inline int cmd_prepare(const PrepareArgs& a, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    if (std::find(a.behaviors.begin(), a.behaviors.end(), a.target) == a.behaviors.end())
      throw UnknownBehaviorError(a.target, ExitCode::config_error);
    std::ifstream in(a.input);
    if (!in) throw ParseError("cannot open input " + a.input, 0);
    InteractionDataset ds = parse_interactions(in, a.behaviors);
    ds.target_behavior = ds.behavior_index(a.target);
    const SplitOutcome s = split(ds, {a.min_interactions, 2, a.seed});
    if (s.degenerate()) err << "warning: no user has " << a.min_interactions << " target interactions; all records kept in train\n";

    const fs::path dir(a.out);
    fs::create_directories(dir);
    std::ostringstream records;
    write_split_records(records, s.dataset);
    nlohmann::json manifest = dataset_manifest(s.dataset);
    const std::string fp = fingerprint(records.str() + manifest.dump());
    manifest["fingerprint"] = fp;
    manifest["split_seed"] = a.seed;
    manifest["min_target_interactions"] = a.min_interactions;

    atomic_write(dir / "dataset.tsv", records.str());
    atomic_write(dir / "dataset.json", manifest.dump(2) + "\n");
    atomic_write(dir / "stats.json", dataset_stats(s.dataset).dump(2) + "\n");
    save_graph(build_graph(s.dataset), (dir / "graph.bin").string());

    out << "prepared " << s.dataset.num_users << " users, " << s.dataset.num_items << " items, "
        << s.dataset.num_behaviors << " behaviors; " << s.qualified_users << " users held out; fingerprint " << fp
        << '\n';
    return 0;
  });
}

inline PreparedData load_prepared(const fs::path& dir) {
  for (const char* f : {"dataset.json", "dataset.tsv"})
    if (!fs::exists(dir / f)) throw StateError("missing prepared artifact " + (dir / f).string());
  const nlohmann::json manifest = nlohmann::json::parse(read_file(dir / "dataset.json"), nullptr, false);
  if (manifest.is_discarded()) throw StateError("corrupt dataset manifest in " + dir.string());
  PreparedData p;
  p.dataset = dataset_from_manifest(manifest);
  std::ifstream in(dir / "dataset.tsv");
  p.dataset.records = parse_split_records(in, p.dataset);
  p.fingerprint = manifest.value("fingerprint", "");
  p.graph = fs::exists(dir / "graph.bin") ? load_graph((dir / "graph.bin").string()) : build_graph(p.dataset);
  return p;
}

// ---------------------------------------------------------------------------
// train

inline fs::path effective_out_dir(const RunConfig& cfg) {
  if (const char* env = std::getenv(kOutDirEnv); env && *env) return fs::path(env);
  return fs::path(cfg.out_dir);
}

struct RunSummary {
  TrainResult result;
  std::vector<SvdFactors> factors;
};

/// Trains one configuration and writes manifest, history, step log and the
/// best checkpoint under `run_dir`.
inline RunSummary run_training(const RunConfig& cfg, const InteractionDataset& ds, const BehaviorGraph& g,
                               const std::string& dataset_fingerprint, const fs::path& run_dir) {
  fs::create_directories(run_dir);
  const nlohmann::json manifest = {{"config", to_json(cfg)},
                                   {"dataset_fingerprint", dataset_fingerprint},
                                   {"seed", cfg.train.seed},
                                   {"artifacts",
                                    {{"checkpoint", (run_dir / "checkpoint.json").string()},
                                     {"history", (run_dir / "history.jsonl").string()},
                                     {"steps", (run_dir / "steps.jsonl").string()}}},
                                   {"started_at", utc_timestamp()},
                                   {"engine_version", kEngineVersion}};
  atomic_write(run_dir / "manifest.json", manifest.dump(2) + "\n");

  RunSummary s;
  s.factors = compute_factors(g, cfg.model);
  std::ofstream history(run_dir / "history.jsonl", std::ios::trunc);
  std::ofstream steps(run_dir / "steps.jsonl", std::ios::trunc);
  TrainHooks hooks;
  hooks.on_epoch = [&](const EpochRecord& e) { history << to_json(e).dump() << '\n' << std::flush; };
  hooks.on_step = [&](std::size_t step, const LossReport& r) { steps << loss_log_line(step, r).dump() << '\n'; };
  s.result = train_loop(ds, g, s.factors, cfg.train, cfg.model, hooks);
  save_checkpoint(run_dir / "checkpoint.json", cfg, s.result.best);
  return s;
}

inline int cmd_train(const std::string& config_path, const std::vector<std::string>& overrides, std::ostream& out,
                     std::ostream& err) {
  return guarded(err, [&] {
    const RunConfig cfg = load_run_config(config_path, overrides);
    const PreparedData data = load_prepared(cfg.data_dir);
    const fs::path dir = effective_out_dir(cfg);
    const RunSummary s = run_training(cfg, data.dataset, data.graph, data.fingerprint, dir);
    if (s.result.diverged) {
      err << "error: training diverged (" << s.result.divergence_message << "); best checkpoint from epoch "
          << s.result.best.epoch << " retained\n";
      return static_cast<int>(ExitCode::numerical_error);
    }
    out << "trained " << s.result.history.size() << " epochs; best val recall@10 " << fmt(s.result.best.val_recall10)
        << " at epoch " << s.result.best.epoch << "; checkpoint " << (dir / "checkpoint.json").string() << '\n';
    return 0;
  });
}

// ---------------------------------------------------------------------------
// evaluate

inline Role parse_split_role(const std::string& s) {
  if (s == "valid") return Role::valid;
  if (s == "test") return Role::test;
  throw ConfigError("split must be valid or test, got '" + s + "'");
}

inline RankingMetrics score_params(const PreparedData& data, const std::vector<SvdFactors>& factors,
                                   const ModelParams& params, const ModelConfig& mc, Role role,
                                   const std::vector<std::size_t>& ks, ScoreView view) {
  const ForwardCache c = forward(data.graph, factors, params, mc);
  return evaluate(c, data.graph, truth_for(data.dataset, role), ks, view);
}

struct EvaluateArgs {
  std::string checkpoint;
  std::string split = "test";
  std::vector<std::size_t> k_values = kDefaultKValues;
  std::string score_view = "F";
};

inline int cmd_evaluate(const EvaluateArgs& a, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const Role role = parse_split_role(a.split);
    const ScoreView view = parse_score_view(a.score_view);
    const auto [cfg, ck] = load_checkpoint(a.checkpoint);
    const PreparedData data = load_prepared(cfg.data_dir);
    check_params_match(ck.params, data.graph);
    const auto factors = compute_factors(data.graph, cfg.model);
    const RankingMetrics m = score_params(data, factors, ck.params, cfg.model, role, a.k_values, view);
    nlohmann::json report = metrics_to_json(m, view);
    report["split"] = a.split;
    const fs::path path = fs::path(a.checkpoint).parent_path() / ("metrics_" + a.split + "_" + a.score_view + ".json");
    atomic_write(path, report.dump(2) + "\n");
    std::vector<std::vector<std::string>> rows;
    for (std::size_t k : m.k_values) rows.push_back({std::to_string(k), fmt(m.recall_at.at(k)), fmt(m.ndcg_at.at(k))});
    out << report.dump() << '\n' << aligned_table({"K", "Recall", "NDCG"}, rows);
    return 0;
  });
}

// ---------------------------------------------------------------------------
// ablate / sweep

struct VariantRow {
  std::string label;
  std::string status = "ok";
  std::string error;
  std::size_t best_epoch = 0;
  double val_recall10 = 0.0;
  RankingMetrics test;
  std::vector<EpochRecord> history;
};

inline VariantRow run_variant(const std::string& label, const RunConfig& cfg, const PreparedData& data,
                              const fs::path& run_dir) {
  VariantRow row;
  row.label = label;
  const RunSummary s = run_training(cfg, data.dataset, data.graph, data.fingerprint, run_dir);
  if (s.result.diverged) {
    row.status = "error";
    row.error = s.result.divergence_message;
  }
  row.best_epoch = s.result.best.epoch;
  row.val_recall10 = s.result.best.val_recall10;
  row.history = s.result.history;
  row.test = score_params(data, s.factors, s.result.best.params, cfg.model, Role::test, kDefaultKValues,
                          cfg.train.score_view);
  return row;
}

inline nlohmann::json row_json(const VariantRow& r) {
  nlohmann::json j = {{"variant", r.label}, {"status", r.status}};
  if (r.status != "ok") j["error"] = r.error;
  j["best_epoch"] = r.best_epoch;
  j["val_recall@10"] = r.val_recall10;
  if (!r.test.k_values.empty()) {
    const nlohmann::json m = metrics_to_json(r.test, ScoreView::F);
    j["test_recall_at"] = m["recall_at"];
    j["test_ndcg_at"] = m["ndcg_at"];
  }
  return j;
}

inline std::vector<std::string> row_cells(const VariantRow& r) {
  std::vector<std::string> cells{r.label, r.status, r.status == "ok" || r.best_epoch ? fmt(r.val_recall10) : "-"};
  for (std::size_t k : kDefaultKValues) {
    const bool have = r.test.recall_at.count(k);
    cells.push_back(have ? fmt(r.test.recall_at.at(k)) : "-");
    cells.push_back(have ? fmt(r.test.ndcg_at.at(k)) : "-");
  }
  return cells;
}

inline std::vector<std::string> table_header(const std::string& first) {
  std::vector<std::string> h{first, "status", "val_R@10"};
  for (std::size_t k : kDefaultKValues) {
    h.push_back("R@" + std::to_string(k));
    h.push_back("N@" + std::to_string(k));
  }
  return h;
}

struct AblationReport {
  std::string mode;
  VariantRow base, variant;
};

/// Trains the full model and one ablated variant under identical seeds.
inline AblationReport run_ablation(const RunConfig& cfg, const PreparedData& data, const std::string& mode,
                                   const fs::path& out_dir) {
  RunConfig variant_cfg = cfg;
  PreparedData variant_data = data;
  if (mode == "wo_cl") {
    variant_cfg.train.use_contrastive_loss = false;
  } else if (mode == "wo_sl") {
    variant_cfg.train.use_ranking_loss = false;
  } else if (mode.rfind("drop_behavior:", 0) == 0) {
    const std::string name = mode.substr(14);
    if (data.dataset.num_behaviors <= 1) throw ConfigError("cannot drop a behavior from a single-behavior dataset");
    variant_data.dataset = drop_behavior(data.dataset, name);
    variant_data.graph = build_graph(variant_data.dataset);
  } else {
    throw ConfigError("ablation mode must be wo_cl, wo_sl or drop_behavior:<name>, got '" + mode + "'");
  }
  const fs::path dir = out_dir / ("ablate_" + std::string(mode.substr(0, mode.find(':'))));
  AblationReport r;
  r.mode = mode;
  r.base = run_variant("full", cfg, data, dir / "full");
  r.variant = run_variant(mode, variant_cfg, variant_data, dir / "variant");
  return r;
}

inline int cmd_ablate(const std::string& config_path, const std::string& mode, const std::vector<std::string>& overrides,
                      std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const RunConfig cfg = load_run_config(config_path, overrides);
    const PreparedData data = load_prepared(cfg.data_dir);
    const fs::path dir = effective_out_dir(cfg);
    const AblationReport r = run_ablation(cfg, data, mode, dir);
    const nlohmann::json report = {{"mode", mode}, {"rows", {row_json(r.base), row_json(r.variant)}}};
    const std::string table = aligned_table(table_header("variant"), {row_cells(r.base), row_cells(r.variant)});
    atomic_write(dir / "ablation.json", report.dump(2) + "\n");
    atomic_write(dir / "ablation.txt", table);
    out << table;
    return 0;
  });
}

inline std::vector<double> parse_values(const std::string& csv) {
  std::vector<double> v;
  std::stringstream ss(csv);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    if (tok.empty()) continue;
    try {
      std::size_t used = 0;
      v.push_back(std::stod(tok, &used));
      if (used != tok.size()) throw std::invalid_argument(tok);
    } catch (const std::logic_error&) {
      throw ConfigError("sweep value '" + tok + "' is not a number");
    }
  }
  return v;
}

struct SweepRow {
  double value = 0.0;
  VariantRow run;
};

/// One seeded run per value of `param` (lambda, tau or q); every other
/// setting, seeds included, is held fixed. Failing rows are reported, not fatal.
inline std::vector<SweepRow> run_sweep(const RunConfig& cfg, const PreparedData& data, const std::string& param,
                                       const std::vector<double>& values, const fs::path& out_dir) {
  if (param != "lambda" && param != "tau" && param != "q")
    throw ConfigError("sweep param must be lambda, tau or q, got '" + param + "'");
  if (values.empty()) throw ConfigError("sweep needs at least one value");
  std::vector<SweepRow> rows;
  for (double v : values) {
    RunConfig c = cfg;
    std::ostringstream label;
    label << param << "=" << v;
    SweepRow row{v, {}};
    row.run.label = label.str();
    try {
      if (param == "lambda") c.train.lambda = v;
      if (param == "tau") c.train.tau = v;
      if (param == "q") {
        if (v < 1 || v != std::floor(v)) throw ConfigError("q must be a positive integer");
        c.model.rank = static_cast<std::size_t>(v);
      }
      c.train.validate();
      c.model.validate();
      row.run = run_variant(label.str(), c, data, out_dir / ("sweep_" + param) / label.str());
    } catch (const Error& e) {
      row.run.status = "error";
      row.run.error = e.what();
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

inline int cmd_sweep(const std::string& config_path, const std::string& param, const std::string& values_csv,
                     const std::vector<std::string>& overrides, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const std::vector<double> values = parse_values(values_csv);
    if (values.empty()) throw ConfigError("sweep needs at least one value");
    const RunConfig cfg = load_run_config(config_path, overrides);
    const PreparedData data = load_prepared(cfg.data_dir);
    const fs::path dir = effective_out_dir(cfg);
    const auto rows = run_sweep(cfg, data, param, values, dir);
    nlohmann::json jrows = nlohmann::json::array();
    std::vector<std::vector<std::string>> cells;
    for (const auto& r : rows) {
      nlohmann::json j = row_json(r.run);
      j["value"] = r.value;
      jrows.push_back(j);
      auto c = row_cells(r.run);
      c[0] = r.run.label;
      cells.push_back(c);
    }
    const std::string table = aligned_table(table_header(param), cells);
    atomic_write(dir / ("sweep_" + param + ".json"), nlohmann::json{{"param", param}, {"rows", jrows}}.dump(2) + "\n");
    atomic_write(dir / ("sweep_" + param + ".txt"), table);
    out << table;
    return 0;
  });
}

}  // namespace mbsvd::cli
