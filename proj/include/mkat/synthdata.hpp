#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "mkat/dataset.hpp"
#include "mkat/mat.hpp"
#include "mkat/model.hpp"

namespace mkat {

enum class TransformKind {
  identity,       // reuse the source latent->raw map (dims must match)
  rotation,       // random isometry into the target raw space
  random_linear,  // dense Gaussian map
  nonlinear_mlp,  // fixed random tanh MLP
};

TransformKind parse_transform(std::string_view name);
const char* transform_name(TransformKind kind);

// Paired-modality generator. delta in [0, 1] is the misalignment knob: a
// target class keeps its source prototype's conditional structure with
// probability 1 - delta, otherwise its samples come from fresh prototypes
// unrelated to any source class (several sub-prototypes per class, so the
// class stays learnable in the target space but scatters across source
// decision regions).
struct ModalityPairSpec {
  int source_classes = 10;   // K_s
  int target_classes = 4;    // K, must be <= K_s
  double delta = 0.0;
  TransformKind transform = TransformKind::rotation;
  double noise = 0.1;        // within-cluster sigma in latent space
  int n_source = 2000;
  int n_target = 1000;
  int latent_dim = 8;
  int source_raw_dim = 32;
  int target_raw_dim = 24;
  int subclusters = 4;       // fresh prototypes per replaced class

  void validate() const;
};

// Latent class prototypes and the fixed latent->raw map of the source
// modality; make_target picks its kept prototypes from here.
struct SourceState {
  Mat prototypes;  // K_s x latent_dim, unit rows
  Mat raw_map;     // latent_dim x source_raw_dim
};

struct TargetState {
  std::vector<int> source_class_of;            // chosen source class per target class
  std::vector<char> replaced;                  // delta coin per target class
  std::vector<std::vector<int>> prototype_of;  // rows into `prototypes` per class
  Mat prototypes;                              // all latent prototypes used
  TransformKind transform{TransformKind::rotation};
  Mat linear_map;   // latent_dim x target_raw_dim (identity/rotation/random_linear)
  Mat mlp_w1, mlp_b1, mlp_w2, mlp_b2;  // nonlinear_mlp only
};

Dataset make_source(const ModalityPairSpec& spec, uint64_t seed, SourceState* state = nullptr);

Dataset make_target(const ModalityPairSpec& spec, const SourceState& source_state, uint64_t seed,
                    TargetState* state = nullptr);

// Fresh draw from an existing target generator (same class conditionals,
// new noise); used for held-out test sets.
Dataset sample_target(const ModalityPairSpec& spec, const TargetState& state, int n,
                      uint64_t seed);

struct PretrainConfig {
  int steps = 600;
  int batch_size = 64;
  double learning_rate = 0.1;
  double momentum = 0.9;
  int embed_dim = 16;
  int hidden_dim = 32;
  int encoder_depth = 2;
  double target_train_error = 0.02;
};

// Trains the full stack on the source dataset; plays the role of the large
// pretrained source checkpoint for every experiment.
ModelParams pretrain_source(const ModalityPairSpec& spec, const Dataset& source,
                            const PretrainConfig& cfg, uint64_t seed);

}  // namespace mkat
