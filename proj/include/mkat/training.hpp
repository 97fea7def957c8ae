#pragma once

#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "mkat/dataset.hpp"
#include "mkat/losses.hpp"
#include "mkat/model.hpp"
#include "mkat/record.hpp"
#include "mkat/rng.hpp"

namespace mkat {

enum class Method { finetune, finetune_pp, frozen, emb, mona, mona_fo };

Method parse_method(std::string_view name);
const char* method_name(Method m);

struct TrainConfig {
  double inner_lr = 0.1;      // virtual-update rate (alpha)
  double meta_lr = 0.05;      // embedder meta rate (beta)
  double finetune_lr = 0.05;  // plain finetuning rate
  double momentum = 0.0;      // optional momentum for plain finetuning
  double lambda = 0.4;        // outer/inner trade-off
  int stage1_iters = 200;
  int stage2_iters = 400;
  int inner_steps = 1;  // virtual gradient steps per meta iteration
  int batch_size = 32;
  int source_batch_size = 32;
  uint64_t seed = 0;
  OuterConfig outer;

  void validate() const;
};

struct TrainResult {
  ModelParams params;
  RunRecord record;
};

// Plain gradient descent on the task loss over all parameter blocks.
TrainResult vanilla_finetune(const ModelParams& init, const Dataset& target,
                             const TrainConfig& cfg);

// Trains only the embedder; encoder and predictor stay bit-identical.
TrainResult embedder_warmup(const ModelParams& init, const Dataset& target, const TrainConfig& cfg);

// Trains embedder and predictor; the encoder stays bit-identical.
TrainResult frozen_encoder_finetune(const ModelParams& init, const Dataset& target,
                                    const TrainConfig& cfg);

// Persistent stage-1 state: the meta-learned embedder initialization and the
// warm-started predictor that trains alongside it in the outer loop. The
// source encoder/embedder weights live in the source model and are never
// touched; virtual updates are built and discarded inside each step.
struct MonaState {
  MetaEmbedder meta_embedder;
  PredictorParams head;
  int step{0};
};

struct MonaStepMetrics {
  double inner_loss{0.0};
  double outer_loss{0.0};
  double outer_prime{0.0};
  double train_error{0.0};
};

// One meta iteration: assemble the target model from (meta embedder, source
// encoder, head), virtually update it on the target batch, evaluate the
// outer loss on source features through the virtually updated encoder, and
// descend the combined objective through the nested expression.
MonaStepMetrics mona_stage1_step(MonaState& state, const Mat& target_x,
                                 std::span<const int> target_y, const Mat& source_x,
                                 std::span<const int> source_y, const ModelParams& source_model,
                                 const TrainConfig& cfg);

// First-order variant: descends
//   L_inner - lambda * alpha * (grad L_outer) . (grad L_inner)
// with the outer gradient detached; no virtual parameter update is built.
MonaStepMetrics mona_fo_step(MonaState& state, const Mat& target_x, std::span<const int> target_y,
                             const Mat& source_x, std::span<const int> source_y,
                             const ModelParams& source_model, const TrainConfig& cfg);

// Stage 1 (meta-train the embedder) followed by stage 2 (full finetuning from
// the learned embedder, the source encoder and a fresh head).
TrainResult mona_train(const ModelParams& source_model, const Dataset& target,
                       const Dataset& source_surrogate, const TrainConfig& cfg,
                       bool first_order = false);

// Objective evaluations used by the derivative oracles: the full nested meta
// objective and its first-order counterpart at an explicit embedder value.
double mona_meta_objective(const MetaEmbedder& embedder, const PredictorParams& head,
                           const Mat& target_x, std::span<const int> target_y, const Mat& source_x,
                           std::span<const int> source_y, const ModelParams& source_model,
                           const TrainConfig& cfg);
double mona_fo_objective(const MetaEmbedder& embedder, const PredictorParams& head,
                         const Mat& target_x, std::span<const int> target_y, const Mat& source_x,
                         std::span<const int> source_y, const ModelParams& source_model,
                         const TrainConfig& cfg);

// Gradient of the corresponding objective with respect to the embedder
// blocks, in blocks() order.
std::vector<Mat> mona_meta_gradient(const MetaEmbedder& embedder, const PredictorParams& head,
                                    const Mat& target_x, std::span<const int> target_y,
                                    const Mat& source_x, std::span<const int> source_y,
                                    const ModelParams& source_model, const TrainConfig& cfg);
std::vector<Mat> mona_fo_gradient(const MetaEmbedder& embedder, const PredictorParams& head,
                                  const Mat& target_x, std::span<const int> target_y,
                                  const Mat& source_x, std::span<const int> source_y,
                                  const ModelParams& source_model, const TrainConfig& cfg);

// Exact post-virtual-update outer loss against its first-order expansion at
// the same point; the acceptance suite sweeps alpha through this.
struct TaylorProbe {
  double exact_outer{0.0};      // L_outer(theta_f - alpha * grad L_inner)
  double outer_at_theta{0.0};   // L_outer(theta_f)
  double expansion{0.0};        // outer_at_theta - alpha * dot
  double gap{0.0};              // |exact_outer - expansion|
};
TaylorProbe taylor_gap_probe(const MetaEmbedder& embedder, const PredictorParams& head,
                             const Mat& target_x, std::span<const int> target_y,
                             const Mat& source_x, std::span<const int> source_y,
                             const ModelParams& source_model, const TrainConfig& cfg);

// Deterministic batch iterators.
class BatchSampler {
 public:
  BatchSampler(int n, int batch_size, uint64_t seed, uint64_t stream);
  std::vector<int> next();

 private:
  void reshuffle();

  int n_;
  int batch_size_;
  size_t cursor_{0};
  std::vector<int> order_;
  Rng rng_;
};

// Draws pairs of same-class samples, classes round-robin in shuffled order,
// so every batch contains same-class pairs for the alignment loss.
class BalancedPairSampler {
 public:
  BalancedPairSampler(std::span<const int> labels, int batch_size, uint64_t seed, uint64_t stream);
  std::vector<int> next();

 private:
  int batch_size_;
  std::vector<std::vector<int>> by_class_;
  std::vector<size_t> cursor_;
  std::vector<int> class_order_;
  size_t class_cursor_{0};
  Rng rng_;
};

// Extracts the target model used in stage 2 and by the finetuning baselines:
// embedder for the target raw width, source encoder weights, fresh head.
Dims target_dims(const ModelParams& source_model, const Dataset& target);

double batch_error(const Mat& logits, std::span<const int> labels);

}  // namespace mkat
