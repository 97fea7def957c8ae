#include "mkat/model.hpp"

#include <cmath>

#include "mkat/rng.hpp"

namespace mkat {

namespace {

constexpr double kLayerNormEps = 1e-5;

Mat xavier_uniform(Rng& rng, int fan_in, int fan_out) {
  const double a = std::sqrt(6.0 / (fan_in + fan_out));
  Mat w(fan_in, fan_out);
  for (auto& v : w.data) v = rng.uniform(-a, a);
  return w;
}

void check_dims(const Dims& d) {
  if (d.input_dim < 1 || d.embed_dim < 1 || d.hidden_dim < 1 || d.classes < 1 || d.encoder_depth < 1)
    fail(ErrorKind::invalid_argument, "model dims must be positive");
}

}  // namespace

bool ModelParams::all_finite() const {
  if (!embedder.weight.all_finite() || !embedder.bias.all_finite() ||
      !embedder.ln_gain.all_finite() || !embedder.ln_bias.all_finite())
    return false;
  for (const auto& l : encoder.layers)
    if (!l.weight.all_finite() || !l.bias.all_finite()) return false;
  return predictor.weight.all_finite() && predictor.bias.all_finite();
}

EmbedderParams init_embedder(int input_dim, int embed_dim, uint64_t seed) {
  Rng rng(seed, /*stream=*/0x0e);
  EmbedderParams p;
  p.weight = xavier_uniform(rng, input_dim, embed_dim);
  p.bias = Mat(1, embed_dim);
  p.ln_gain = Mat::full(1, embed_dim, 1.0);
  p.ln_bias = Mat(1, embed_dim);
  return p;
}

PredictorParams init_predictor(int hidden_dim, int classes, uint64_t seed) {
  Rng rng(seed, /*stream=*/0x0f);
  PredictorParams p;
  p.weight = xavier_uniform(rng, hidden_dim, classes);
  p.bias = Mat(1, classes);
  return p;
}

ModelParams init_params(const Dims& dims, uint64_t seed) {
  check_dims(dims);
  ModelParams p;
  p.dims = dims;
  p.embedder = init_embedder(dims.input_dim, dims.embed_dim, seed);
  Rng rng(seed, /*stream=*/0x10);
  int in = dims.embed_dim;
  for (int layer = 0; layer < dims.encoder_depth; ++layer) {
    DenseLayer l;
    l.weight = xavier_uniform(rng, in, dims.hidden_dim);
    l.bias = Mat(1, dims.hidden_dim);
    p.encoder.layers.push_back(std::move(l));
    in = dims.hidden_dim;
  }
  p.predictor = init_predictor(dims.hidden_dim, dims.classes, seed);
  return p;
}

EmbedderParams adapt_embedder(const EmbedderParams& source, int new_input_dim, uint64_t seed) {
  const int embed_dim = source.weight.cols;
  EmbedderParams p = init_embedder(new_input_dim, embed_dim, seed);
  const int shared = std::min(new_input_dim, source.weight.rows);
  for (int i = 0; i < shared; ++i)
    for (int j = 0; j < embed_dim; ++j) p.weight.at(i, j) = source.weight.at(i, j);
  p.bias = source.bias;
  p.ln_gain = source.ln_gain;
  p.ln_bias = source.ln_bias;
  return p;
}

BoundEmbedder bind(ad::Graph& g, const EmbedderParams& p) {
  return BoundEmbedder{g.leaf(p.weight), g.leaf(p.bias), g.leaf(p.ln_gain), g.leaf(p.ln_bias)};
}

BoundEncoder bind(ad::Graph& g, const EncoderParams& p) {
  BoundEncoder e;
  e.layers.reserve(p.layers.size());
  for (const auto& l : p.layers) e.layers.emplace_back(g.leaf(l.weight), g.leaf(l.bias));
  return e;
}

BoundPredictor bind(ad::Graph& g, const PredictorParams& p) {
  return BoundPredictor{g.leaf(p.weight), g.leaf(p.bias)};
}

BoundModel bind(ad::Graph& g, const ModelParams& p) {
  return BoundModel{bind(g, p.embedder), bind(g, p.encoder), bind(g, p.predictor)};
}

ad::Tensor apply_embedder(const BoundEmbedder& e, const ad::Tensor& x) {
  return ad::layernorm_rows(ad::affine(x, e.weight, e.bias), e.ln_gain, e.ln_bias, kLayerNormEps);
}

ad::Tensor apply_encoder(const BoundEncoder& f, const ad::Tensor& embedding) {
  ad::Tensor h = embedding;
  for (const auto& [w, b] : f.layers) h = ad::tanh(ad::affine(h, w, b));
  return h;
}

ad::Tensor apply_predictor(const BoundPredictor& h, const ad::Tensor& features) {
  // Mean pooling over tokens collapses to identity for rank-2 inputs.
  return ad::affine(features, h.weight, h.bias);
}

ad::Tensor apply_full(const BoundModel& m, const ad::Tensor& x) {
  return apply_predictor(m.predictor, apply_encoder(m.encoder, apply_embedder(m.embedder, x)));
}

Mat forward(const ModelParams& params, const Mat& batch, ForwardMode mode) {
  check_dims(params.dims);
  const int expected =
      mode == ForwardMode::encode_from_embedding ? params.dims.embed_dim : params.dims.input_dim;
  if (batch.cols != expected)
    fail(ErrorKind::shape_mismatch, "forward: batch has " + std::to_string(batch.cols) +
                                        " columns, expected " + std::to_string(expected));
  ad::Graph g;
  ad::Tensor x = g.constant(batch);
  switch (mode) {
    case ForwardMode::embed_only:
      return apply_embedder(bind(g, params.embedder), x).to_mat();
    case ForwardMode::encode_from_embedding:
      return apply_encoder(bind(g, params.encoder), x).to_mat();
    case ForwardMode::full: {
      BoundModel m = bind(g, params);
      return apply_full(m, x).to_mat();
    }
  }
  fail(ErrorKind::invalid_argument, "forward: unknown mode");
}

std::vector<Mat*> blocks(EmbedderParams& p) {
  return {&p.weight, &p.bias, &p.ln_gain, &p.ln_bias};
}

std::vector<Mat*> blocks(EncoderParams& p) {
  std::vector<Mat*> out;
  for (auto& l : p.layers) {
    out.push_back(&l.weight);
    out.push_back(&l.bias);
  }
  return out;
}

std::vector<Mat*> blocks(PredictorParams& p) {
  return {&p.weight, &p.bias};
}

std::vector<Mat*> blocks(ModelParams& p) {
  std::vector<Mat*> out = blocks(p.embedder);
  for (Mat* m : blocks(p.encoder)) out.push_back(m);
  for (Mat* m : blocks(p.predictor)) out.push_back(m);
  return out;
}

std::vector<const Mat*> blocks(const ModelParams& p) {
  const auto mutable_view = blocks(const_cast<ModelParams&>(p));
  return std::vector<const Mat*>(mutable_view.begin(), mutable_view.end());
}

std::vector<ad::Tensor> tensors(const BoundEmbedder& e) {
  return {e.weight, e.bias, e.ln_gain, e.ln_bias};
}

std::vector<ad::Tensor> tensors(const BoundEncoder& f) {
  std::vector<ad::Tensor> out;
  for (const auto& [w, b] : f.layers) {
    out.push_back(w);
    out.push_back(b);
  }
  return out;
}

std::vector<ad::Tensor> tensors(const BoundPredictor& h) {
  return {h.weight, h.bias};
}

std::vector<ad::Tensor> tensors(const BoundModel& m) {
  std::vector<ad::Tensor> out = tensors(m.embedder);
  for (const auto& t : tensors(m.encoder)) out.push_back(t);
  for (const auto& t : tensors(m.predictor)) out.push_back(t);
  return out;
}

}  // namespace mkat
