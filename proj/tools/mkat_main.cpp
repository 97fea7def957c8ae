// mkat: synthetic cross-modality transfer experiments.
//
// Subcommands: synth, pretrain, train, probe, discrepancy, report.
// Configuration is a flat key=value file; flags override file values and the
// effective configuration is echoed into the output directory.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "mkat/config.hpp"
#include "mkat/discrepancy.hpp"
#include "mkat/evaluation.hpp"
#include "mkat/io.hpp"
#include "mkat/pipeline.hpp"
#include "mkat/record.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace mkat;

namespace {

struct CommonArgs {
  std::string config_path;
  std::vector<std::string> overrides;  // key=value
  std::string out;
  std::string methods;
  std::string seeds;
  std::string mode;
  double lambda = std::numeric_limits<double>::quiet_NaN();
  int inner_steps = -1;
  int64_t trials = -1;
  int64_t seed = -1;
};

void add_common_options(CLI::App* cmd, CommonArgs* args) {
  cmd->add_option("--config", args->config_path, "key=value configuration file");
  cmd->add_option("--set", args->overrides, "extra key=value overrides (repeatable)");
  cmd->add_option("--out", args->out, "output directory");
  cmd->add_option("--seed", args->seed, "base seed override");
  cmd->add_option("--method", args->methods, "comma-separated method list");
  cmd->add_option("--seeds", args->seeds, "comma-separated per-cell seed list");
  cmd->add_option("--lambda", args->lambda, "outer-loss trade-off");
  cmd->add_option("--inner-steps", args->inner_steps, "virtual update steps per meta iteration");
  cmd->add_option("--trials", args->trials, "Monte Carlo trials");
  cmd->add_option("--mode", args->mode, "discrepancy mode: auto|exact|mc|mc-hungarian");
}

ExperimentConfig resolve_config(const CommonArgs& args) {
  ExperimentConfig cfg =
      args.config_path.empty() ? default_config() : load_config_file(args.config_path);
  for (const auto& kv : args.overrides) {
    const size_t eq = kv.find('=');
    if (eq == std::string::npos)
      fail(ErrorKind::invalid_argument, "--set expects key=value, got '" + kv + "'");
    apply_key_value(cfg, kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (!args.out.empty()) cfg.out_dir = args.out;
  if (args.seed >= 0) cfg.data_seed = static_cast<uint64_t>(args.seed);
  if (!args.methods.empty()) apply_key_value(cfg, "methods", args.methods);
  if (!args.seeds.empty()) apply_key_value(cfg, "seeds", args.seeds);
  if (!std::isnan(args.lambda)) cfg.train.lambda = args.lambda;
  if (args.inner_steps > 0) cfg.train.inner_steps = args.inner_steps;
  if (args.trials > 0) cfg.trials = args.trials;
  if (!args.mode.empty()) apply_key_value(cfg, "mode", args.mode);
  cfg.validate();
  return cfg;
}

fs::path require_out_dir(const ExperimentConfig& cfg) {
  if (cfg.out_dir.empty())
    fail(ErrorKind::invalid_argument, "an output directory is required (--out or out= in config)");
  fs::create_directories(cfg.out_dir);
  return fs::path(cfg.out_dir);
}

void echo_config(const ExperimentConfig& cfg, const fs::path& dir) {
  write_text_file((dir / "effective-config.txt").string(), serialize_config(cfg));
}

json checkpoint_to_json(const CheckpointRow& row) {
  return json{{"tag", row.tag},
              {"source_probe_error", row.source_probe_error},
              {"target_test_error", row.target_test_error},
              {"db_index", row.db_index},
              {"discrepancy", row.discrepancy}};
}

void write_json_file(const fs::path& path, const json& j) {
  write_text_file(path.string(), j.dump(2) + "\n");
}

// ---- subcommands ------------------------------------------------------------

int cmd_synth(const CommonArgs& args) {
  ExperimentConfig cfg = resolve_config(args);
  const fs::path dir = require_out_dir(cfg);
  GeneratedData data = generate_data(cfg);
  save_dataset((dir / "source_pretrain.mkt").string(), data.source_pretrain);
  save_dataset((dir / "source_surrogate.mkt").string(), data.source_surrogate);
  save_dataset((dir / "target_train.mkt").string(), data.target_train);
  save_dataset((dir / "target_test.mkt").string(), data.target_test);
  json meta = {
      {"source_pretrain", data.source_pretrain.provenance},
      {"source_surrogate", data.source_surrogate.provenance},
      {"target_train", data.target_train.provenance},
      {"target_test", data.target_test.provenance},
  };
  write_json_file(dir / "datasets.json", meta);
  echo_config(cfg, dir);
  std::cout << "wrote 4 datasets to " << dir.string() << "\n";
  return 0;
}

int cmd_pretrain(const CommonArgs& args, const std::string& data_path) {
  ExperimentConfig cfg = resolve_config(args);
  const fs::path dir = require_out_dir(cfg);
  const std::string source_path =
      data_path.empty() ? (dir / "source_pretrain.mkt").string() : data_path;
  Dataset source = load_dataset(source_path);
  ModelParams model = pretrain_source(cfg.pair, source, cfg.pretrain, cfg.data_seed);
  save_params((dir / "source.ckpt").string(), model);
  echo_config(cfg, dir);
  const Mat logits = forward(model, source.inputs, ForwardMode::full);
  std::cout << "source checkpoint written; train error " << batch_error(logits, source.labels)
            << "\n";
  return 0;
}

struct TrainPaths {
  std::string source_ckpt;
  std::string target_train;
  std::string target_test;
  std::string surrogate;
  std::string data_dir;
};

int cmd_train(const CommonArgs& args, const TrainPaths& paths) {
  ExperimentConfig cfg = resolve_config(args);
  const fs::path dir = require_out_dir(cfg);

  Workspace ws;
  const bool have_files = !paths.data_dir.empty() || !paths.source_ckpt.empty();
  if (have_files) {
    const fs::path data_dir = paths.data_dir.empty() ? dir : fs::path(paths.data_dir);
    const auto pick = [&](const std::string& explicit_path, const char* name) {
      return explicit_path.empty() ? (data_dir / name).string() : explicit_path;
    };
    ws.source_model = load_params(pick(paths.source_ckpt, "source.ckpt"));
    ws.target_train = load_dataset(pick(paths.target_train, "target_train.mkt"));
    ws.target_test = load_dataset(pick(paths.target_test, "target_test.mkt"));
    ws.source_surrogate = load_dataset(pick(paths.surrogate, "source_surrogate.mkt"));
  } else {
    ws = build_workspace(cfg);
  }

  const auto summaries = run_cells(cfg, ws, dir.string());
  const CheckpointRow baseline = pretrained_baseline(cfg, ws);

  json cells = json::array();
  bool all_finite = true;
  for (const auto& s : summaries) {
    all_finite = all_finite && s.finite;
    cells.push_back({{"dir", s.dir},
                     {"method", s.method},
                     {"seed", s.seed},
                     {"lambda", cfg.train.lambda},
                     {"inner_steps", cfg.train.inner_steps},
                     {"outer_variant", outer_variant_name(cfg.train.outer.variant)},
                     {"final_train_loss", s.final_train_loss},
                     {"final_train_error", s.final_train_error},
                     {"finite", s.finite},
                     {"checkpoint", checkpoint_to_json(s.checkpoint)}});
  }
  json summary = {{"pretrained_baseline", checkpoint_to_json(baseline)}, {"cells", cells}};
  write_json_file(dir / "train-summary.json", summary);
  echo_config(cfg, dir);

  for (const auto& s : summaries)
    std::cout << s.dir << ": target_test_error=" << s.checkpoint.target_test_error
              << " source_probe_error=" << s.checkpoint.source_probe_error
              << (s.finite ? "" : "  [FAILED]") << "\n";
  if (!all_finite) {
    std::cerr << "one or more cells ended with non-finite losses\n";
    return 1;
  }
  return 0;
}

int cmd_probe(const CommonArgs& args, const std::string& checkpoint, const std::string& dataset,
              const std::string& embedder_from, const std::string& out_json) {
  ModelParams model = load_params(checkpoint);
  EmbedderParams embedder =
      embedder_from.empty() ? model.embedder : load_params(embedder_from).embedder;
  Dataset data = load_dataset(dataset);
  const Mat features = extract_features(embedder, model.encoder, data.inputs);
  const uint64_t seed = args.seed >= 0 ? static_cast<uint64_t>(args.seed) : 0;
  const ProbeResult probe = linear_probe(features, data.labels, seed);
  std::cout << "probe_error,split_seed,resamples,iters\n"
            << format_double(probe.error) << ',' << probe.split_seed << ',' << probe.resamples
            << ',' << probe.iters << "\n";
  if (!out_json.empty()) {
    write_json_file(out_json, json{{"probe_error", probe.error},
                                   {"split_seed", probe.split_seed},
                                   {"resamples", probe.resamples},
                                   {"iters", probe.iters},
                                   {"grad_norm", probe.grad_norm}});
  }
  return 0;
}

int cmd_discrepancy(const CommonArgs& args, const std::string& checkpoint,
                    const std::string& dataset, const std::string& table_path,
                    const std::string& embedder_from, const std::string& out_json) {
  LogitTable table;
  if (!table_path.empty()) {
    table = load_logit_table(table_path);
  } else {
    ModelParams model = load_params(checkpoint);
    if (!embedder_from.empty()) {
      ModelParams other = load_params(embedder_from);
      model.embedder = other.embedder;
      model.dims.input_dim = other.dims.input_dim;
    }
    table = build_logit_table(model, load_dataset(dataset));
  }

  const uint64_t seed = args.seed >= 0 ? static_cast<uint64_t>(args.seed) : 0;
  const int64_t trials = args.trials > 0 ? args.trials : 100000;
  const std::string mode = args.mode.empty() ? "auto" : args.mode;

  DiscrepancyEstimate est;
  if (mode == "auto") {
    const int64_t space = matching_space_size(table.source_classes(), table.target_classes);
    est = space <= 1000000 ? estimate_exact(table)
                           : estimate_mc(table, seed, McOptions{trials, true});
  } else {
    switch (parse_discrepancy_mode(mode)) {
      case DiscrepancyMode::exact: est = estimate_exact(table); break;
      case DiscrepancyMode::mc: est = estimate_mc(table, seed, McOptions{trials, true}); break;
      case DiscrepancyMode::mc_hungarian:
        est = estimate_mc_hungarian(table, seed, McOptions{trials, true});
        break;
    }
  }

  std::cout << "discrepancy,mode,trials\n"
            << format_double(est.value) << ',' << discrepancy_mode_name(est.mode) << ','
            << est.trials << "\n";
  if (!out_json.empty()) {
    write_json_file(out_json, json{{"discrepancy", est.value},
                                   {"mode", discrepancy_mode_name(est.mode)},
                                   {"trials", est.trials},
                                   {"subset", est.best.subset},
                                   {"permutation", est.best.permutation}});
  }
  return 0;
}

struct Stats {
  double mean{0.0};
  double sd{0.0};
  int n{0};
};

Stats stats_of(const std::vector<double>& values) {
  Stats s;
  s.n = static_cast<int>(values.size());
  if (values.empty()) return s;
  for (double v : values) s.mean += v;
  s.mean /= values.size();
  if (values.size() > 1) {
    double acc = 0.0;
    for (double v : values) acc += (v - s.mean) * (v - s.mean);
    s.sd = std::sqrt(acc / (values.size() - 1));
  }
  return s;
}

int cmd_report(const std::string& run_dir) {
  const fs::path dir(run_dir);
  if (!fs::exists(dir / "train-summary.json"))
    fail(ErrorKind::io_error, "no train-summary.json under " + run_dir +
                                  "; run `mkat train` into this directory first");
  json summary = json::parse(read_text_file((dir / "train-summary.json").string()));

  std::string csv =
      "method,outer_variant,lambda,inner_steps,seed,final_train_loss,final_train_error,"
      "source_probe_error,target_test_error,db_index,discrepancy\n";

  // Group by (method, variant, lambda, inner_steps) for the mean/sd rows.
  std::map<std::string, std::vector<json>> groups;
  for (const auto& cell : summary["cells"]) {
    const std::string key = std::string(cell["method"]) + "," +
                            std::string(cell["outer_variant"]) + "," +
                            format_double(cell["lambda"].get<double>()) + "," +
                            std::to_string(cell["inner_steps"].get<int>());
    groups[key].push_back(cell);
  }

  json report_groups = json::array();
  for (const auto& [key, cells] : groups) {
    std::vector<double> probe, target, db, disc;
    for (const auto& cell : cells) {
      const auto& ck = cell["checkpoint"];
      csv += key + "," + std::to_string(cell["seed"].get<uint64_t>()) + "," +
             format_double(cell["final_train_loss"].get<double>()) + "," +
             format_double(cell["final_train_error"].get<double>()) + "," +
             format_double(ck["source_probe_error"].get<double>()) + "," +
             format_double(ck["target_test_error"].get<double>()) + "," +
             format_double(ck["db_index"].get<double>()) + "," +
             format_double(ck["discrepancy"].get<double>()) + "\n";
      probe.push_back(ck["source_probe_error"].get<double>());
      target.push_back(ck["target_test_error"].get<double>());
      db.push_back(ck["db_index"].get<double>());
      disc.push_back(ck["discrepancy"].get<double>());
    }
    const Stats ps = stats_of(probe), ts = stats_of(target), ds = stats_of(db),
                cs = stats_of(disc);
    csv += key + ",mean_sd," + "," + "," + format_double(ps.mean) + "±" + format_double(ps.sd) +
           "," + format_double(ts.mean) + "±" + format_double(ts.sd) + "," +
           format_double(ds.mean) + "±" + format_double(ds.sd) + "," + format_double(cs.mean) +
           "±" + format_double(cs.sd) + "\n";
    report_groups.push_back({{"group", key},
                             {"n", ps.n},
                             {"source_probe_error_mean", ps.mean},
                             {"source_probe_error_sd", ps.sd},
                             {"target_test_error_mean", ts.mean},
                             {"target_test_error_sd", ts.sd},
                             {"db_index_mean", ds.mean},
                             {"db_index_sd", ds.sd},
                             {"discrepancy_mean", cs.mean},
                             {"discrepancy_sd", cs.sd}});
  }

  write_text_file((dir / "consolidated.csv").string(), csv);
  json out = {{"pretrained_baseline", summary["pretrained_baseline"]},
              {"groups", report_groups}};
  write_json_file(dir / "report.json", out);
  std::cout << "wrote consolidated.csv and report.json under " << run_dir << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"synthetic cross-modality transfer experiments"};
  app.require_subcommand(1);

  CommonArgs synth_args;
  CLI::App* synth = app.add_subcommand("synth", "generate the paired synthetic datasets");
  add_common_options(synth, &synth_args);

  CommonArgs pretrain_args;
  std::string pretrain_data;
  CLI::App* pretrain = app.add_subcommand("pretrain", "train the source checkpoint");
  add_common_options(pretrain, &pretrain_args);
  pretrain->add_option("--data", pretrain_data, "source pretraining dataset (.mkt)");

  CommonArgs train_args;
  TrainPaths train_paths;
  CLI::App* train = app.add_subcommand("train", "run (method x seed) training cells");
  add_common_options(train, &train_args);
  train->add_option("--data-dir", train_paths.data_dir, "directory with datasets + source.ckpt");
  train->add_option("--source-ckpt", train_paths.source_ckpt, "source checkpoint path");
  train->add_option("--target", train_paths.target_train, "target training dataset");
  train->add_option("--target-test", train_paths.target_test, "target held-out dataset");
  train->add_option("--surrogate", train_paths.surrogate, "source surrogate dataset");

  CommonArgs probe_args;
  std::string probe_ckpt, probe_data, probe_embedder, probe_out;
  CLI::App* probe = app.add_subcommand("probe", "linear probe of frozen features");
  add_common_options(probe, &probe_args);
  probe->add_option("--checkpoint", probe_ckpt, "checkpoint providing the encoder")->required();
  probe->add_option("--dataset", probe_data, "dataset to probe on")->required();
  probe->add_option("--embedder-from", probe_embedder, "checkpoint providing the embedder");
  probe->add_option("--out-json", probe_out, "write the probe row as JSON");

  CommonArgs disc_args;
  std::string disc_ckpt, disc_data, disc_table, disc_embedder, disc_out;
  CLI::App* disc = app.add_subcommand("discrepancy", "modality knowledge discrepancy");
  add_common_options(disc, &disc_args);
  disc->add_option("--checkpoint", disc_ckpt, "source model checkpoint");
  disc->add_option("--dataset", disc_data, "target dataset");
  disc->add_option("--table", disc_table, "precomputed logit table (.mkt)");
  disc->add_option("--embedder-from", disc_embedder, "swap in this checkpoint's embedder");
  disc->add_option("--out-json", disc_out, "write the estimate as JSON");

  std::string report_dir;
  CLI::App* report = app.add_subcommand("report", "consolidate a run directory");
  report->add_option("run_dir", report_dir, "directory written by `mkat train`")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (synth->parsed()) return cmd_synth(synth_args);
    if (pretrain->parsed()) return cmd_pretrain(pretrain_args, pretrain_data);
    if (train->parsed()) return cmd_train(train_args, train_paths);
    if (probe->parsed()) return cmd_probe(probe_args, probe_ckpt, probe_data, probe_embedder, probe_out);
    if (disc->parsed()) {
      if (disc_table.empty() && (disc_ckpt.empty() || disc_data.empty()))
        fail(ErrorKind::invalid_argument,
             "discrepancy needs either --table or both --checkpoint and --dataset");
      return cmd_discrepancy(disc_args, disc_ckpt, disc_data, disc_table, disc_embedder, disc_out);
    }
    if (report->parsed()) return cmd_report(report_dir);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
