#pragma once

#include <string>
#include <vector>

#include "mkat/config.hpp"
#include "mkat/dataset.hpp"
#include "mkat/evaluation.hpp"
#include "mkat/model.hpp"
#include "mkat/record.hpp"
#include "mkat/synthdata.hpp"
#include "mkat/training.hpp"

namespace mkat {

// Everything a training cell consumes. Built once per experiment, shared
// read-only across (method, seed) cells.
struct Workspace {
  SourceState source_state;
  TargetState target_state;
  Dataset source_pretrain;
  Dataset source_surrogate;  // fresh draw; outer-loss batches and probes
  Dataset target_train;
  Dataset target_test;
  ModelParams source_model;
};

Workspace build_workspace(const ExperimentConfig& cfg);

// Data-only variant (no pretraining); used by cmd_synth.
struct GeneratedData {
  SourceState source_state;
  TargetState target_state;
  Dataset source_pretrain;
  Dataset source_surrogate;
  Dataset target_train;
  Dataset target_test;
};
GeneratedData generate_data(const ExperimentConfig& cfg);

struct CellOutput {
  ModelParams params;
  RunRecord record;  // step rows plus one final checkpoint row
};

// Runs one (method, seed) training cell end to end and evaluates the final
// checkpoint: source linear-probe error through the source embedder and the
// finetuned encoder, target held-out error, Davies-Bouldin index of the
// source features, and the knowledge discrepancy of the learned embedder.
CellOutput run_cell(const ExperimentConfig& cfg, Method method, uint64_t seed,
                    const Workspace& ws);

// Probe error of the untouched pretrained encoder, the reference line for
// the source-retention comparisons.
CheckpointRow pretrained_baseline(const ExperimentConfig& cfg, const Workspace& ws);

// Source-retention probe for an arbitrary encoder (source embedder features).
ProbeResult source_probe(const ExperimentConfig& cfg, const Workspace& ws,
                         const EncoderParams& encoder, uint64_t seed);

double target_test_error(const ModelParams& params, const Dataset& test);

// Deterministic directory name for one cell, carrying the sweep axes.
std::string cell_dir_name(const ExperimentConfig& cfg, Method method, uint64_t seed);

// Runs all (method, seed) cells, possibly in parallel worker threads (capped
// by MKAT_THREADS), writing per-cell outputs under out_dir. Returns false if
// any cell ended with a non-finite final loss.
struct CellSummary {
  std::string dir;
  std::string method;
  uint64_t seed{0};
  double final_train_loss{0.0};
  double final_train_error{0.0};
  CheckpointRow checkpoint;
  bool finite{true};
};

std::vector<CellSummary> run_cells(const ExperimentConfig& cfg, const Workspace& ws,
                                   const std::string& out_dir);

}  // namespace mkat
