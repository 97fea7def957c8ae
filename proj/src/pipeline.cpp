#include "mkat/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <limits>
#include <thread>

#include "mkat/discrepancy.hpp"
#include "mkat/io.hpp"
#include "mkat/parallel.hpp"

namespace mkat {

namespace {

// Fresh draw from the source generator: same class structure, new noise.
// Plays the role of the held-out source dataset the paper probes with.
Dataset sample_source(const ModalityPairSpec& spec, const SourceState& state, int n,
                      uint64_t seed) {
  std::vector<int> sizes(static_cast<size_t>(spec.source_classes), n / spec.source_classes);
  for (int c = 0; c < n % spec.source_classes; ++c) ++sizes[static_cast<size_t>(c)];
  Mat latent(n, spec.latent_dim);
  std::vector<int> labels;
  labels.reserve(static_cast<size_t>(n));
  Rng rng(seed, /*stream=*/0xd5);
  int row = 0;
  for (int c = 0; c < spec.source_classes; ++c) {
    for (int s = 0; s < sizes[static_cast<size_t>(c)]; ++s, ++row) {
      for (int j = 0; j < spec.latent_dim; ++j)
        latent.at(row, j) = state.prototypes.at(c, j) + spec.noise * rng.normal();
      labels.push_back(c);
    }
  }
  Dataset data;
  {
    ad::Graph g;
    data.inputs = ad::matmul(g.constant(latent), g.constant(state.raw_map)).to_mat();
  }
  data.labels = std::move(labels);
  data.num_classes = spec.source_classes;
  data.modality = "source";
  data.seed = seed;
  data.provenance = "source-surrogate;seed=" + std::to_string(seed);
  data.validate();
  return data;
}

}  // namespace

GeneratedData generate_data(const ExperimentConfig& cfg) {
  cfg.validate();
  GeneratedData data;
  data.source_pretrain = make_source(cfg.pair, cfg.data_seed, &data.source_state);
  data.source_surrogate =
      sample_source(cfg.pair, data.source_state, cfg.n_surrogate, Rng::mix(cfg.data_seed, 0x51));
  data.target_train = make_target(cfg.pair, data.source_state, Rng::mix(cfg.data_seed, 0x52),
                                  &data.target_state);
  data.target_test = sample_target(cfg.pair, data.target_state, cfg.n_target_test,
                                   Rng::mix(cfg.data_seed, 0x53));
  return data;
}

Workspace build_workspace(const ExperimentConfig& cfg) {
  GeneratedData data = generate_data(cfg);
  Workspace ws;
  ws.source_state = std::move(data.source_state);
  ws.target_state = std::move(data.target_state);
  ws.source_pretrain = std::move(data.source_pretrain);
  ws.source_surrogate = std::move(data.source_surrogate);
  ws.target_train = std::move(data.target_train);
  ws.target_test = std::move(data.target_test);
  ws.source_model = pretrain_source(cfg.pair, ws.source_pretrain, cfg.pretrain, cfg.data_seed);
  return ws;
}

double target_test_error(const ModelParams& params, const Dataset& test) {
  return batch_error(forward(params, test.inputs, ForwardMode::full), test.labels);
}

ProbeResult source_probe(const ExperimentConfig& cfg, const Workspace& ws,
                         const EncoderParams& encoder, uint64_t seed) {
  const Mat features =
      extract_features(ws.source_model.embedder, encoder, ws.source_surrogate.inputs);
  return linear_probe(features, ws.source_surrogate.labels, Rng::mix(seed, 0x9e));
}

CheckpointRow pretrained_baseline(const ExperimentConfig& cfg, const Workspace& ws) {
  CheckpointRow row;
  row.tag = "pretrained-baseline";
  row.source_probe_error = source_probe(cfg, ws, ws.source_model.encoder, cfg.data_seed).error;
  row.target_test_error = std::numeric_limits<double>::quiet_NaN();
  const Mat features = extract_features(ws.source_model.embedder, ws.source_model.encoder,
                                        ws.source_surrogate.inputs);
  const ClusterScore db = davies_bouldin(features, ws.source_surrogate.labels);
  row.db_index = db.index;
  ReportOptions ropt;
  ropt.trials = cfg.trials;
  ropt.seed = cfg.data_seed;
  row.discrepancy = discrepancy_report(ws.source_model, ws.target_train, ropt).value;
  return row;
}

CellOutput run_cell(const ExperimentConfig& cfg, Method method, uint64_t seed,
                    const Workspace& ws) {
  TrainConfig tc = cfg.train;
  tc.seed = seed;
  const Dims dims = target_dims(ws.source_model, ws.target_train);

  const auto finetune_init = [&](bool adapt_from_source) {
    ModelParams init;
    init.dims = dims;
    init.embedder = adapt_from_source
                        ? adapt_embedder(ws.source_model.embedder, dims.input_dim,
                                         Rng::mix(seed, 0xf1))
                        : init_embedder(dims.input_dim, dims.embed_dim, Rng::mix(seed, 0xf1));
    init.encoder = ws.source_model.encoder;
    init.predictor = init_predictor(dims.hidden_dim, dims.classes, Rng::mix(seed, 0xf2));
    return init;
  };

  CellOutput out;
  switch (method) {
    case Method::finetune: {
      TrainResult r = vanilla_finetune(finetune_init(false), ws.target_train, tc);
      out.params = std::move(r.params);
      out.record = std::move(r.record);
      break;
    }
    case Method::finetune_pp: {
      TrainResult r = vanilla_finetune(finetune_init(true), ws.target_train, tc);
      out.params = std::move(r.params);
      out.record = std::move(r.record);
      out.record.method = "finetune-pp";
      break;
    }
    case Method::frozen: {
      TrainResult r = frozen_encoder_finetune(finetune_init(false), ws.target_train, tc);
      out.params = std::move(r.params);
      out.record = std::move(r.record);
      break;
    }
    case Method::emb: {
      TrainResult warm = embedder_warmup(finetune_init(false), ws.target_train, tc);
      TrainResult full = vanilla_finetune(warm.params, ws.target_train, tc);
      out.params = std::move(full.params);
      out.record = std::move(warm.record);
      out.record.method = "emb";
      for (const auto& row : full.record.steps) out.record.steps.push_back(row);
      break;
    }
    case Method::mona:
    case Method::mona_fo: {
      TrainResult r = mona_train(ws.source_model, ws.target_train, ws.source_surrogate, tc,
                                 method == Method::mona_fo);
      out.params = std::move(r.params);
      out.record = std::move(r.record);
      break;
    }
  }
  out.record.seed = seed;

  // Final checkpoint metrics.
  CheckpointRow row;
  row.tag = "final";
  const ProbeResult probe = source_probe(cfg, ws, out.params.encoder, seed);
  row.source_probe_error = probe.error;
  row.target_test_error = target_test_error(out.params, ws.target_test);
  const Mat source_features =
      extract_features(ws.source_model.embedder, out.params.encoder, ws.source_surrogate.inputs);
  row.db_index = davies_bouldin(source_features, ws.source_surrogate.labels).index;

  // Knowledge discrepancy of the learned target embedder: target inputs
  // through (target embedder, source encoder, original source predictor).
  ModelParams composed;
  composed.dims = ws.source_model.dims;
  composed.dims.input_dim = out.params.dims.input_dim;
  composed.embedder = out.params.embedder;
  composed.encoder = ws.source_model.encoder;
  composed.predictor = ws.source_model.predictor;
  ReportOptions ropt;
  ropt.trials = cfg.trials;
  ropt.seed = seed;
  if (cfg.discrepancy_mode != "auto") {
    ropt.auto_mode = false;
    ropt.mode = parse_discrepancy_mode(cfg.discrepancy_mode);
  }
  row.discrepancy = discrepancy_report(composed, ws.target_train, ropt).value;

  out.record.checkpoints.push_back(row);
  return out;
}

std::string cell_dir_name(const ExperimentConfig& cfg, Method method, uint64_t seed) {
  std::string name = method_name(method);
  name += "-";
  name += outer_variant_name(cfg.train.outer.variant);
  name += "-lam" + format_double(cfg.train.lambda);
  name += "-is" + std::to_string(cfg.train.inner_steps);
  name += "-seed" + std::to_string(seed);
  return name;
}

std::vector<CellSummary> run_cells(const ExperimentConfig& cfg, const Workspace& ws,
                                   const std::string& out_dir) {
  namespace fs = std::filesystem;
  struct Cell {
    Method method;
    uint64_t seed;
  };
  std::vector<Cell> cells;
  for (const auto& m : cfg.methods)
    for (uint64_t s : cfg.seeds) cells.push_back({parse_method(m), s});

  std::vector<CellSummary> summaries(cells.size());
  std::atomic<size_t> next{0};
  const int workers =
      std::max(1, std::min<int>(max_worker_threads(), static_cast<int>(cells.size())));

  const auto worker = [&] {
    for (;;) {
      const size_t i = next.fetch_add(1);
      if (i >= cells.size()) break;
      const Cell& cell = cells[i];
      CellSummary s;
      s.dir = cell_dir_name(cfg, cell.method, cell.seed);
      s.method = method_name(cell.method);
      s.seed = cell.seed;
      try {
        CellOutput out = run_cell(cfg, cell.method, cell.seed, ws);
        if (!out.record.steps.empty()) {
          s.final_train_loss = out.record.steps.back().train_loss;
          s.final_train_error = out.record.steps.back().train_error;
        }
        s.checkpoint = out.record.checkpoints.back();
        s.finite = std::isfinite(s.final_train_loss);

        const fs::path dir = fs::path(out_dir) / s.dir;
        fs::create_directories(dir);
        save_params((dir / "checkpoint.mkt").string(), out.params);
        write_runrecord_csv_file((dir / "runrecord.csv").string(), out.record);
      } catch (const Error& e) {
        s.finite = false;
        s.checkpoint.tag = std::string("failed: ") + e.what();
        s.final_train_loss = std::numeric_limits<double>::quiet_NaN();
      }
      summaries[i] = std::move(s);
    }
  };

  if (workers == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(static_cast<size_t>(workers));
    for (int t = 0; t < workers; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  return summaries;
}

}  // namespace mkat
