#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "mkat/mat.hpp"
#include "mkat/tensor.hpp"

namespace mkat {

// Embedder -> encoder -> predictor stack. The embedder is a linear projection
// followed by LayerNorm; the encoder is a tanh dense stack of configurable
// depth; the predictor pools (identity at rank 2) and projects to classes.
struct Dims {
  int input_dim{0};
  int embed_dim{0};
  int hidden_dim{0};
  int classes{0};
  int encoder_depth{2};

  bool operator==(const Dims&) const = default;
};

struct EmbedderParams {
  Mat weight;   // input_dim x embed_dim
  Mat bias;     // 1 x embed_dim
  Mat ln_gain;  // 1 x embed_dim
  Mat ln_bias;  // 1 x embed_dim

  bool operator==(const EmbedderParams&) const = default;
};

// The meta-learned embedder initialization shares the embedder layout.
using MetaEmbedder = EmbedderParams;

struct DenseLayer {
  Mat weight;
  Mat bias;

  bool operator==(const DenseLayer&) const = default;
};

struct EncoderParams {
  std::vector<DenseLayer> layers;

  bool operator==(const EncoderParams&) const = default;
};

struct PredictorParams {
  Mat weight;  // hidden_dim x classes
  Mat bias;    // 1 x classes

  bool operator==(const PredictorParams&) const = default;
};

struct ModelParams {
  Dims dims;
  EmbedderParams embedder;
  EncoderParams encoder;
  PredictorParams predictor;

  bool all_finite() const;
  bool operator==(const ModelParams&) const = default;
};

enum class ForwardMode {
  full,                   // logits, n x classes
  embed_only,             // shared-space embeddings, n x embed_dim
  encode_from_embedding,  // features from embeddings, n x hidden_dim
};

// Xavier-uniform weights, zero biases, unit LayerNorm gain. Deterministic per
// seed; same (dims, seed) twice gives bit-identical parameters.
ModelParams init_params(const Dims& dims, uint64_t seed);
EmbedderParams init_embedder(int input_dim, int embed_dim, uint64_t seed);
PredictorParams init_predictor(int hidden_dim, int classes, uint64_t seed);

// Copies a source embedder onto a new input dimension: overlapping weight rows
// are kept, extra rows are freshly initialized, the projection/LayerNorm
// columns carry over unchanged.
EmbedderParams adapt_embedder(const EmbedderParams& source, int new_input_dim, uint64_t seed);

Mat forward(const ModelParams& params, const Mat& batch, ForwardMode mode = ForwardMode::full);

// Graph-bound parameter blocks. Training loops bind blocks individually so a
// forward pass can mix sources (e.g. the pretrained source embedder feeding a
// virtually updated encoder).
struct BoundEmbedder {
  ad::Tensor weight, bias, ln_gain, ln_bias;
};
struct BoundEncoder {
  std::vector<std::pair<ad::Tensor, ad::Tensor>> layers;  // (weight, bias)
};
struct BoundPredictor {
  ad::Tensor weight, bias;
};
struct BoundModel {
  BoundEmbedder embedder;
  BoundEncoder encoder;
  BoundPredictor predictor;
};

BoundEmbedder bind(ad::Graph& g, const EmbedderParams& p);
BoundEncoder bind(ad::Graph& g, const EncoderParams& p);
BoundPredictor bind(ad::Graph& g, const PredictorParams& p);
BoundModel bind(ad::Graph& g, const ModelParams& p);

ad::Tensor apply_embedder(const BoundEmbedder& e, const ad::Tensor& x);
ad::Tensor apply_encoder(const BoundEncoder& f, const ad::Tensor& embedding);
ad::Tensor apply_predictor(const BoundPredictor& h, const ad::Tensor& features);
ad::Tensor apply_full(const BoundModel& m, const ad::Tensor& x);

// Parallel flat views over parameter storage and bound tensors, in matching
// order. Used by the SGD updates: grads[i] pairs with blocks[i].
std::vector<Mat*> blocks(EmbedderParams& p);
std::vector<Mat*> blocks(EncoderParams& p);
std::vector<Mat*> blocks(PredictorParams& p);
std::vector<Mat*> blocks(ModelParams& p);
std::vector<const Mat*> blocks(const ModelParams& p);
std::vector<ad::Tensor> tensors(const BoundEmbedder& e);
std::vector<ad::Tensor> tensors(const BoundEncoder& f);
std::vector<ad::Tensor> tensors(const BoundPredictor& h);
std::vector<ad::Tensor> tensors(const BoundModel& m);

}  // namespace mkat
