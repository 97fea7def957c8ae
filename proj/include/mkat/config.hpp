#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "mkat/synthdata.hpp"
#include "mkat/training.hpp"

namespace mkat {

// Flat experiment configuration behind the CLI: data generation knobs, the
// training recipe, the evaluation settings and the sweep lists. Parsed from
// key=value text; flags override file values; unknown keys are rejected.
struct ExperimentConfig {
  TrainConfig train;
  ModalityPairSpec pair;
  PretrainConfig pretrain;

  std::vector<std::string> methods{"finetune", "mona"};
  std::vector<uint64_t> seeds{0, 1, 2, 3, 4};
  uint64_t data_seed = 0;

  int n_target_test = 500;
  int n_surrogate = 2000;

  std::string discrepancy_mode = "auto";  // auto | exact | mc | mc-hungarian
  int64_t trials = 100000;

  std::string out_dir;

  void validate() const;
};

ExperimentConfig default_config();

using KeyValues = std::vector<std::pair<std::string, std::string>>;

KeyValues parse_key_values(const std::string& text, const std::string& context);
void apply_key_value(ExperimentConfig& cfg, const std::string& key, const std::string& value);
void apply_key_values(ExperimentConfig& cfg, const KeyValues& kvs);

ExperimentConfig load_config_file(const std::string& path);

// Sorted key=value echo of the effective configuration; byte-stable so reruns
// overwrite it identically.
std::string serialize_config(const ExperimentConfig& cfg);

}  // namespace mkat
