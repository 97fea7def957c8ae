#include "mkat/model.hpp"

#include <cmath>

#include "doctest.h"
#include "mkat/rng.hpp"
#include "testutil.hpp"

using namespace mkat;

namespace {

const Dims kDims{/*input_dim=*/4, /*embed_dim=*/3, /*hidden_dim=*/5, /*classes=*/2,
                 /*encoder_depth=*/2};

}  // namespace

TEST_CASE("init_params determinism and bounds") {
  const ModelParams a = init_params(kDims, 7);
  const ModelParams b = init_params(kDims, 7);
  CHECK(a == b);

  const ModelParams c = init_params(kDims, 8);
  CHECK_FALSE(a.embedder.weight == c.embedder.weight);

  // Xavier bound per tensor.
  const auto check_bound = [](const Mat& w, int fan_in, int fan_out) {
    const double bound = std::sqrt(6.0 / (fan_in + fan_out));
    for (double v : w.data) CHECK(std::abs(v) <= bound);
  };
  check_bound(a.embedder.weight, kDims.input_dim, kDims.embed_dim);
  check_bound(a.encoder.layers[0].weight, kDims.embed_dim, kDims.hidden_dim);
  check_bound(a.encoder.layers[1].weight, kDims.hidden_dim, kDims.hidden_dim);
  check_bound(a.predictor.weight, kDims.hidden_dim, kDims.classes);

  for (double v : a.embedder.bias.data) CHECK(v == 0.0);
  for (double v : a.embedder.ln_gain.data) CHECK(v == 1.0);
  for (double v : a.embedder.ln_bias.data) CHECK(v == 0.0);
  CHECK(a.all_finite());
}

TEST_CASE("forward shape contract on hand-sized dims") {
  Rng rng(3);
  const ModelParams p = init_params(kDims, 5);
  const Mat batch = test::random_mat(rng, 2, 4);
  const Mat logits = forward(p, batch, ForwardMode::full);
  CHECK(logits.rows == 2);
  CHECK(logits.cols == 2);
  const Mat emb = forward(p, batch, ForwardMode::embed_only);
  CHECK(emb.rows == 2);
  CHECK(emb.cols == 3);
  const Mat feat = forward(p, emb, ForwardMode::encode_from_embedding);
  CHECK(feat.rows == 2);
  CHECK(feat.cols == 5);
}

TEST_CASE("zero weights and biases give all-zero logits") {
  ModelParams p = init_params(kDims, 1);
  for (Mat* block : blocks(p)) *block = Mat(block->rows, block->cols);
  // LayerNorm gain zero wipes the embedding; every later layer is linear in
  // its input with zero bias, so logits vanish.
  Mat batch = Mat::full(3, 4, 0.5);
  const Mat logits = forward(p, batch, ForwardMode::full);
  for (double v : logits.data) CHECK(v == 0.0);
}

TEST_CASE("embed-only then encode-from-embedding composes to the feature path") {
  Rng rng(9);
  const ModelParams p = init_params(kDims, 11);
  const Mat batch = test::random_mat(rng, 6, 4);
  const Mat emb = forward(p, batch, ForwardMode::embed_only);
  const Mat feat = forward(p, emb, ForwardMode::encode_from_embedding);

  // Reference: full-path features via the predictor-free composition.
  ad::Graph g;
  const ad::Tensor direct =
      apply_encoder(bind(g, p.encoder), apply_embedder(bind(g, p.embedder), g.constant(batch)));
  CHECK(max_abs_diff(feat, direct.to_mat()) <= 1e-12);
}

TEST_CASE("forward is pure and deterministic") {
  Rng rng(13);
  const ModelParams p = init_params(kDims, 17);
  const ModelParams snapshot = p;
  const Mat batch = test::random_mat(rng, 5, 4);
  const Mat a = forward(p, batch, ForwardMode::full);
  const Mat b = forward(p, batch, ForwardMode::full);
  CHECK(a == b);
  CHECK(p == snapshot);
}

TEST_CASE("meta embedder slot substitutability") {
  Rng rng(19);
  const ModelParams p = init_params(kDims, 23);
  MetaEmbedder phi = p.embedder;  // identical values, separate storage
  ModelParams swapped = p;
  swapped.embedder = phi;
  const Mat batch = test::random_mat(rng, 4, 4);
  CHECK(forward(p, batch, ForwardMode::full) == forward(swapped, batch, ForwardMode::full));
}

TEST_CASE("forward rejects mismatched batch width") {
  const ModelParams p = init_params(kDims, 29);
  CHECK_THROWS_AS(forward(p, Mat::full(2, 5, 1.0), ForwardMode::full), Error);
  CHECK_THROWS_AS(forward(p, Mat::full(2, 4, 1.0), ForwardMode::encode_from_embedding), Error);
}

TEST_CASE("adapt_embedder keeps the overlapping rows and projection") {
  const EmbedderParams src = init_embedder(6, 3, 31);
  const EmbedderParams wide = adapt_embedder(src, 9, 37);
  CHECK(wide.weight.rows == 9);
  for (int i = 0; i < 6; ++i)
    for (int j = 0; j < 3; ++j) CHECK(wide.weight.at(i, j) == src.weight.at(i, j));
  CHECK(wide.bias == src.bias);
  CHECK(wide.ln_gain == src.ln_gain);

  const EmbedderParams narrow = adapt_embedder(src, 4, 37);
  CHECK(narrow.weight.rows == 4);
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 3; ++j) CHECK(narrow.weight.at(i, j) == src.weight.at(i, j));
}
