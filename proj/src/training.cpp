#include "mkat/training.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace mkat {

Method parse_method(std::string_view name) {
  if (name == "finetune") return Method::finetune;
  if (name == "finetune-pp") return Method::finetune_pp;
  if (name == "frozen") return Method::frozen;
  if (name == "emb") return Method::emb;
  if (name == "mona") return Method::mona;
  if (name == "mona-fo") return Method::mona_fo;
  fail(ErrorKind::invalid_argument,
       "unknown method '" + std::string(name) +
           "' (expected finetune, finetune-pp, frozen, emb, mona or mona-fo)");
}

const char* method_name(Method m) {
  switch (m) {
    case Method::finetune: return "finetune";
    case Method::finetune_pp: return "finetune-pp";
    case Method::frozen: return "frozen";
    case Method::emb: return "emb";
    case Method::mona: return "mona";
    case Method::mona_fo: return "mona-fo";
  }
  return "?";
}

void TrainConfig::validate() const {
  if (inner_lr <= 0.0 || meta_lr <= 0.0 || finetune_lr < 0.0)
    fail(ErrorKind::invalid_argument, "TrainConfig: learning rates must be positive");
  if (lambda < 0.0) fail(ErrorKind::invalid_argument, "TrainConfig: lambda must be >= 0");
  if (stage1_iters < 0 || stage2_iters < 0)
    fail(ErrorKind::invalid_argument, "TrainConfig: iteration counts must be >= 0");
  if (inner_steps < 1) fail(ErrorKind::invalid_argument, "TrainConfig: inner_steps must be >= 1");
  if (batch_size < 1 || source_batch_size < 2)
    fail(ErrorKind::invalid_argument, "TrainConfig: batch sizes too small");
  if (momentum < 0.0 || momentum >= 1.0)
    fail(ErrorKind::invalid_argument, "TrainConfig: momentum must be in [0, 1)");
}

// ---- samplers ---------------------------------------------------------------

BatchSampler::BatchSampler(int n, int batch_size, uint64_t seed, uint64_t stream)
    : n_(n), batch_size_(std::min(batch_size, n)), rng_(seed, stream) {
  order_.resize(static_cast<size_t>(n));
  std::iota(order_.begin(), order_.end(), 0);
  reshuffle();
}

void BatchSampler::reshuffle() {
  rng_.shuffle(std::span<int>(order_));
  cursor_ = 0;
}

std::vector<int> BatchSampler::next() {
  std::vector<int> batch;
  batch.reserve(static_cast<size_t>(batch_size_));
  for (int i = 0; i < batch_size_; ++i) {
    if (cursor_ >= order_.size()) reshuffle();
    batch.push_back(order_[cursor_++]);
  }
  return batch;
}

BalancedPairSampler::BalancedPairSampler(std::span<const int> labels, int batch_size,
                                         uint64_t seed, uint64_t stream)
    : batch_size_(batch_size), rng_(seed, stream) {
  int classes = 0;
  for (int y : labels) classes = std::max(classes, y + 1);
  by_class_.resize(static_cast<size_t>(classes));
  for (size_t i = 0; i < labels.size(); ++i)
    by_class_[static_cast<size_t>(labels[i])].push_back(static_cast<int>(i));
  std::erase_if(by_class_, [](const auto& v) { return v.size() < 2; });
  if (by_class_.empty())
    fail(ErrorKind::degenerate_input, "BalancedPairSampler: no class has 2 samples");
  cursor_.assign(by_class_.size(), 0);
  for (auto& members : by_class_) rng_.shuffle(std::span<int>(members));
  class_order_.resize(by_class_.size());
  std::iota(class_order_.begin(), class_order_.end(), 0);
  rng_.shuffle(std::span<int>(class_order_));
}

std::vector<int> BalancedPairSampler::next() {
  std::vector<int> batch;
  batch.reserve(static_cast<size_t>(batch_size_));
  while (static_cast<int>(batch.size()) < batch_size_) {
    if (class_cursor_ >= class_order_.size()) {
      rng_.shuffle(std::span<int>(class_order_));
      class_cursor_ = 0;
    }
    const auto c = static_cast<size_t>(class_order_[class_cursor_++]);
    auto& members = by_class_[c];
    for (int take = 0; take < 2 && static_cast<int>(batch.size()) < batch_size_; ++take) {
      if (cursor_[c] >= members.size()) {
        rng_.shuffle(std::span<int>(members));
        cursor_[c] = 0;
      }
      batch.push_back(members[cursor_[c]++]);
    }
  }
  return batch;
}

// ---- shared helpers ---------------------------------------------------------

namespace {

Mat take_rows(const Mat& m, std::span<const int> rows) {
  Mat out(static_cast<int>(rows.size()), m.cols);
  for (size_t r = 0; r < rows.size(); ++r)
    for (int j = 0; j < m.cols; ++j) out.at(static_cast<int>(r), j) = m.at(rows[r], j);
  return out;
}

std::vector<int> take_labels(std::span<const int> labels, std::span<const int> rows) {
  std::vector<int> out;
  out.reserve(rows.size());
  for (int r : rows) out.push_back(labels[static_cast<size_t>(r)]);
  return out;
}

struct Sgd {
  double lr;
  double momentum;
  std::vector<Mat> velocity;

  void step(const std::vector<Mat*>& params, const std::vector<ad::Tensor>& grads) {
    if (velocity.empty() && momentum != 0.0) {
      velocity.reserve(params.size());
      for (Mat* p : params) velocity.emplace_back(p->rows, p->cols);
    }
    for (size_t i = 0; i < params.size(); ++i) {
      Mat& p = *params[i];
      const auto& g = grads[i].values();
      if (momentum == 0.0) {
        for (size_t j = 0; j < p.data.size(); ++j) p.data[j] -= lr * g[j];
      } else {
        Mat& v = velocity[i];
        for (size_t j = 0; j < p.data.size(); ++j) {
          v.data[j] = momentum * v.data[j] + g[j];
          p.data[j] -= lr * v.data[j];
        }
      }
    }
  }
};

enum class TrainedBlocks { all, embedder_only, embedder_and_predictor };

TrainResult supervised_descent(const ModelParams& init, const Dataset& target,
                               const TrainConfig& cfg, TrainedBlocks which, int steps, int stage,
                               const char* tag) {
  cfg.validate();
  target.validate();
  if (target.raw_dim() != init.dims.input_dim)
    fail(ErrorKind::shape_mismatch, "training: dataset width does not match model input");

  TrainResult result;
  result.params = init;
  result.record.method = tag;
  result.record.seed = cfg.seed;

  BatchSampler sampler(target.size(), cfg.batch_size, cfg.seed, /*stream=*/0x7a0 + stage);
  Sgd sgd{cfg.finetune_lr, cfg.momentum, {}};

  for (int step = 0; step < steps; ++step) {
    const auto rows = sampler.next();
    const Mat batch_x = take_rows(target.inputs, rows);
    const auto batch_y = take_labels(target.labels, rows);
    try {
      ad::Graph g;
      BoundModel model = bind(g, result.params);
      ad::Tensor logits = apply_full(model, g.constant(batch_x));
      LossValue loss = cross_entropy(logits, batch_y);
      if (!std::isfinite(loss.value()))
        fail(ErrorKind::numeric_overflow, "non-finite training loss");

      std::vector<ad::Tensor> wrt;
      std::vector<Mat*> params;
      switch (which) {
        case TrainedBlocks::all:
          wrt = tensors(model);
          params = blocks(result.params);
          break;
        case TrainedBlocks::embedder_only:
          wrt = tensors(model.embedder);
          params = blocks(result.params.embedder);
          break;
        case TrainedBlocks::embedder_and_predictor:
          wrt = tensors(model.embedder);
          for (const auto& t : tensors(model.predictor)) wrt.push_back(t);
          params = blocks(result.params.embedder);
          for (Mat* p : blocks(result.params.predictor)) params.push_back(p);
          break;
      }
      const ad::Gradients grads = ad::grad(loss.total, wrt);
      sgd.step(params, grads.tensors);

      StepRow row;
      row.step = step;
      row.stage = stage;
      row.inner_loss = loss.value();
      row.outer_loss = std::numeric_limits<double>::quiet_NaN();
      row.outer_prime = std::numeric_limits<double>::quiet_NaN();
      row.train_loss = loss.value();
      row.train_error = batch_error(logits.to_mat(), batch_y);
      result.record.steps.push_back(row);
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::numeric_overflow) throw;
      fail(ErrorKind::numeric_overflow,
           std::string(tag) + " aborted at step " + std::to_string(step) + ": " + e.what());
    }
  }
  return result;
}

}  // namespace

double batch_error(const Mat& logits, std::span<const int> labels) {
  int wrong = 0;
  for (int i = 0; i < logits.rows; ++i) {
    int best = 0;
    double best_v = -std::numeric_limits<double>::infinity();
    for (int c = 0; c < logits.cols; ++c) {
      if (logits.at(i, c) > best_v) {
        best_v = logits.at(i, c);
        best = c;
      }
    }
    if (best != labels[static_cast<size_t>(i)]) ++wrong;
  }
  return static_cast<double>(wrong) / static_cast<double>(logits.rows);
}

TrainResult vanilla_finetune(const ModelParams& init, const Dataset& target,
                             const TrainConfig& cfg) {
  return supervised_descent(init, target, cfg, TrainedBlocks::all, cfg.stage2_iters, 2,
                            "finetune");
}

TrainResult embedder_warmup(const ModelParams& init, const Dataset& target,
                            const TrainConfig& cfg) {
  return supervised_descent(init, target, cfg, TrainedBlocks::embedder_only, cfg.stage1_iters, 1,
                            "emb-warmup");
}

TrainResult frozen_encoder_finetune(const ModelParams& init, const Dataset& target,
                                    const TrainConfig& cfg) {
  return supervised_descent(init, target, cfg, TrainedBlocks::embedder_and_predictor,
                            cfg.stage2_iters, 2, "frozen");
}

// ---- bi-level steps ---------------------------------------------------------

namespace {

void check_source_batch(std::span<const int> source_y) {
  int first = source_y.empty() ? -1 : source_y[0];
  for (int y : source_y)
    if (y != first) return;
  fail(ErrorKind::degenerate_input,
       "stage-1 source batch has fewer than 2 classes; the outer loss is undefined");
}

struct AssembledModel {
  BoundEmbedder embedder;
  BoundEncoder encoder;
  BoundPredictor predictor;
};

AssembledModel from_tensors(const std::vector<ad::Tensor>& ts, int encoder_layers) {
  AssembledModel m;
  m.embedder = BoundEmbedder{ts[0], ts[1], ts[2], ts[3]};
  for (int l = 0; l < encoder_layers; ++l)
    m.encoder.layers.emplace_back(ts[4 + 2 * static_cast<size_t>(l)],
                                  ts[5 + 2 * static_cast<size_t>(l)]);
  m.predictor = BoundPredictor{ts[ts.size() - 2], ts[ts.size() - 1]};
  return m;
}

ad::Tensor assembled_forward(const AssembledModel& m, const ad::Tensor& x) {
  return apply_predictor(m.predictor, apply_encoder(m.encoder, apply_embedder(m.embedder, x)));
}

struct MonaCore {
  LossValue inner;
  LossValue outer;
  LossValue objective;           // combined (exact) or first-order objective
  ad::Gradients embedder_grads;  // wrt the meta embedder blocks
  ad::Gradients head_grads;      // wrt the stage-1 head blocks
  double train_error{0.0};
};

MonaCore mona_core(ad::Graph& g, const MetaEmbedder& embedder, const PredictorParams& head,
                   const Mat& target_x, std::span<const int> target_y, const Mat& source_x,
                   std::span<const int> source_y, const ModelParams& source_model,
                   const TrainConfig& cfg, bool first_order) {
  cfg.validate();
  check_source_batch(source_y);

  BoundEmbedder be = bind(g, embedder);
  BoundEncoder bf = bind(g, source_model.encoder);
  BoundPredictor bh = bind(g, head);

  ad::Tensor xt = g.constant(target_x);
  AssembledModel assembled{be, bf, bh};
  ad::Tensor logits = assembled_forward(assembled, xt);
  LossValue inner = cross_entropy(logits, target_y);

  const int encoder_layers = static_cast<int>(source_model.encoder.layers.size());
  std::vector<ad::Tensor> theta = tensors(be);
  for (const auto& t : tensors(bf)) theta.push_back(t);
  for (const auto& t : tensors(bh)) theta.push_back(t);

  LossValue outer;
  LossValue objective;
  if (!first_order) {
    // Virtual update of the whole target model; the persistent weights are
    // never touched, these tensors exist only inside this graph.
    std::vector<ad::Tensor> virtual_theta = theta;
    LossValue step_loss = inner;
    for (int s = 0; s < cfg.inner_steps; ++s) {
      if (s > 0) {
        AssembledModel vm = from_tensors(virtual_theta, encoder_layers);
        step_loss = cross_entropy(assembled_forward(vm, xt), target_y);
      }
      const ad::Gradients gs = ad::grad(step_loss.total, virtual_theta);
      for (size_t i = 0; i < virtual_theta.size(); ++i)
        virtual_theta[i] = ad::sub(virtual_theta[i], ad::scale(gs.tensors[i], cfg.inner_lr));
    }

    // Source features through the pretrained source embedder and the
    // virtually updated encoder.
    AssembledModel vm = from_tensors(virtual_theta, encoder_layers);
    BoundEmbedder source_emb = bind(g, source_model.embedder);
    ad::Tensor fs = apply_encoder(vm.encoder, apply_embedder(source_emb, g.constant(source_x)));
    outer = outer_variant_loss(cfg.outer, ad::l2_normalize_rows(fs), source_y);
    objective = combined_outer(outer, inner, cfg.lambda);
  } else {
    std::vector<ad::Tensor> encoder_tensors = tensors(bf);
    const ad::Gradients inner_enc = ad::grad(inner.total, encoder_tensors);

    BoundEmbedder source_emb = bind(g, source_model.embedder);
    ad::Tensor fs = apply_encoder(bf, apply_embedder(source_emb, g.constant(source_x)));
    outer = outer_variant_loss(cfg.outer, ad::l2_normalize_rows(fs), source_y);
    const ad::Gradients outer_enc = ad::grad(outer.total, encoder_tensors);

    // Detached outer gradient: the alignment direction is a constant of the
    // optimization problem in the embedder.
    ad::Tensor dot_acc;
    for (size_t i = 0; i < encoder_tensors.size(); ++i) {
      ad::Tensor v = g.constant(outer_enc.tensors[i].to_mat());
      ad::Tensor d = ad::dot(v, inner_enc.tensors[i]);
      dot_acc = dot_acc.valid() ? ad::add(dot_acc, d) : d;
    }
    ad::Tensor total = ad::add(inner.total, ad::scale(dot_acc, -cfg.lambda * cfg.inner_lr));
    objective = LossValue{
        total,
        {{"inner", inner.value()}, {"alignment_dot", -cfg.lambda * cfg.inner_lr * dot_acc.scalar()}}};
  }

  MonaCore core;
  core.train_error = batch_error(logits.to_mat(), target_y);
  core.inner = std::move(inner);
  core.outer = std::move(outer);
  core.objective = std::move(objective);
  core.embedder_grads = ad::grad(core.objective.total, tensors(be));
  core.head_grads = ad::grad(core.objective.total, tensors(bh));
  return core;
}

MonaStepMetrics mona_step_impl(MonaState& state, const Mat& target_x,
                               std::span<const int> target_y, const Mat& source_x,
                               std::span<const int> source_y, const ModelParams& source_model,
                               const TrainConfig& cfg, bool first_order) {
  ad::Graph g;
  MonaCore core;
  try {
    core = mona_core(g, state.meta_embedder, state.head, target_x, target_y, source_x, source_y,
                     source_model, cfg, first_order);
  } catch (const Error& e) {
    if (e.kind() != ErrorKind::numeric_overflow) throw;
    fail(ErrorKind::numeric_overflow, "stage-1 aborted at step " + std::to_string(state.step) +
                                          ": " + e.what());
  }

  Sgd sgd{cfg.meta_lr, 0.0, {}};
  sgd.step(blocks(state.meta_embedder), core.embedder_grads.tensors);
  sgd.step(blocks(state.head), core.head_grads.tensors);
  ++state.step;

  MonaStepMetrics metrics;
  metrics.inner_loss = core.inner.value();
  metrics.outer_loss = core.outer.value();
  metrics.outer_prime = core.objective.value();
  metrics.train_error = core.train_error;
  return metrics;
}

}  // namespace

MonaStepMetrics mona_stage1_step(MonaState& state, const Mat& target_x,
                                 std::span<const int> target_y, const Mat& source_x,
                                 std::span<const int> source_y, const ModelParams& source_model,
                                 const TrainConfig& cfg) {
  return mona_step_impl(state, target_x, target_y, source_x, source_y, source_model, cfg, false);
}

MonaStepMetrics mona_fo_step(MonaState& state, const Mat& target_x, std::span<const int> target_y,
                             const Mat& source_x, std::span<const int> source_y,
                             const ModelParams& source_model, const TrainConfig& cfg) {
  return mona_step_impl(state, target_x, target_y, source_x, source_y, source_model, cfg, true);
}

Dims target_dims(const ModelParams& source_model, const Dataset& target) {
  Dims d = source_model.dims;
  d.input_dim = target.raw_dim();
  d.classes = target.num_classes;
  return d;
}

TrainResult mona_train(const ModelParams& source_model, const Dataset& target,
                       const Dataset& source_surrogate, const TrainConfig& cfg, bool first_order) {
  cfg.validate();
  target.validate();
  source_surrogate.validate();

  const Dims dims = target_dims(source_model, target);

  MonaState state;
  state.meta_embedder =
      init_embedder(dims.input_dim, dims.embed_dim, Rng::mix(cfg.seed, /*stream=*/0xe0));
  state.head = init_predictor(dims.hidden_dim, dims.classes, Rng::mix(cfg.seed, /*stream=*/0xe1));

  TrainResult result;
  result.record.method = first_order ? "mona-fo" : "mona";
  result.record.seed = cfg.seed;
  result.record.notes.push_back(
      "stage-1 head is persistent and meta-updated alongside the embedder");

  BatchSampler target_sampler(target.size(), cfg.batch_size, cfg.seed, /*stream=*/0xb1);
  BalancedPairSampler source_sampler(source_surrogate.labels, cfg.source_batch_size, cfg.seed,
                                     /*stream=*/0xb2);

  for (int step = 0; step < cfg.stage1_iters; ++step) {
    const auto trows = target_sampler.next();
    const auto srows = source_sampler.next();
    const Mat tx = take_rows(target.inputs, trows);
    const auto ty = take_labels(target.labels, trows);
    const Mat sx = take_rows(source_surrogate.inputs, srows);
    const auto sy = take_labels(source_surrogate.labels, srows);
    const MonaStepMetrics m = first_order
                                  ? mona_fo_step(state, tx, ty, sx, sy, source_model, cfg)
                                  : mona_stage1_step(state, tx, ty, sx, sy, source_model, cfg);
    StepRow row;
    row.step = step;
    row.stage = 1;
    row.inner_loss = m.inner_loss;
    row.outer_loss = m.outer_loss;
    row.outer_prime = m.outer_prime;
    row.train_loss = m.inner_loss;
    row.train_error = m.train_error;
    result.record.steps.push_back(row);
  }

  // Stage 2: full finetuning from the learned embedder, the pretrained source
  // encoder, and a re-initialized head.
  ModelParams start;
  start.dims = dims;
  start.embedder = state.meta_embedder;
  start.encoder = source_model.encoder;
  start.predictor = init_predictor(dims.hidden_dim, dims.classes, Rng::mix(cfg.seed, 0xe2));

  TrainResult stage2 = vanilla_finetune(start, target, cfg);
  result.params = std::move(stage2.params);
  for (const auto& row : stage2.record.steps) result.record.steps.push_back(row);
  return result;
}

// ---- oracle hooks -----------------------------------------------------------

double mona_meta_objective(const MetaEmbedder& embedder, const PredictorParams& head,
                           const Mat& target_x, std::span<const int> target_y, const Mat& source_x,
                           std::span<const int> source_y, const ModelParams& source_model,
                           const TrainConfig& cfg) {
  ad::Graph g;
  return mona_core(g, embedder, head, target_x, target_y, source_x, source_y, source_model, cfg,
                   false)
      .objective.value();
}

double mona_fo_objective(const MetaEmbedder& embedder, const PredictorParams& head,
                         const Mat& target_x, std::span<const int> target_y, const Mat& source_x,
                         std::span<const int> source_y, const ModelParams& source_model,
                         const TrainConfig& cfg) {
  ad::Graph g;
  return mona_core(g, embedder, head, target_x, target_y, source_x, source_y, source_model, cfg,
                   true)
      .objective.value();
}

namespace {

std::vector<Mat> gradient_mats(const ad::Gradients& grads) {
  std::vector<Mat> out;
  out.reserve(grads.size());
  for (const auto& t : grads.tensors) out.push_back(t.to_mat());
  return out;
}

}  // namespace

std::vector<Mat> mona_meta_gradient(const MetaEmbedder& embedder, const PredictorParams& head,
                                    const Mat& target_x, std::span<const int> target_y,
                                    const Mat& source_x, std::span<const int> source_y,
                                    const ModelParams& source_model, const TrainConfig& cfg) {
  ad::Graph g;
  return gradient_mats(mona_core(g, embedder, head, target_x, target_y, source_x, source_y,
                                 source_model, cfg, false)
                           .embedder_grads);
}

std::vector<Mat> mona_fo_gradient(const MetaEmbedder& embedder, const PredictorParams& head,
                                  const Mat& target_x, std::span<const int> target_y,
                                  const Mat& source_x, std::span<const int> source_y,
                                  const ModelParams& source_model, const TrainConfig& cfg) {
  ad::Graph g;
  return gradient_mats(mona_core(g, embedder, head, target_x, target_y, source_x, source_y,
                                 source_model, cfg, true)
                           .embedder_grads);
}

TaylorProbe taylor_gap_probe(const MetaEmbedder& embedder, const PredictorParams& head,
                             const Mat& target_x, std::span<const int> target_y,
                             const Mat& source_x, std::span<const int> source_y,
                             const ModelParams& source_model, const TrainConfig& cfg) {
  ad::Graph g;
  check_source_batch(source_y);

  BoundEmbedder be = bind(g, embedder);
  BoundEncoder bf = bind(g, source_model.encoder);
  BoundPredictor bh = bind(g, head);
  BoundEmbedder source_emb = bind(g, source_model.embedder);
  ad::Tensor xt = g.constant(target_x);
  ad::Tensor xs = g.constant(source_x);

  AssembledModel assembled{be, bf, bh};
  LossValue inner = cross_entropy(assembled_forward(assembled, xt), target_y);

  std::vector<ad::Tensor> encoder_tensors = tensors(bf);
  const ad::Gradients inner_enc = ad::grad(inner.total, encoder_tensors);

  // Outer loss at theta_f.
  ad::Tensor fs0 = apply_encoder(bf, apply_embedder(source_emb, xs));
  LossValue outer0 = outer_variant_loss(cfg.outer, ad::l2_normalize_rows(fs0), source_y);
  const ad::Gradients outer_enc = ad::grad(outer0.total, encoder_tensors);

  // Outer loss at theta_f - alpha * grad inner (virtual update of the encoder
  // alone; the embedder and head do not enter the outer features).
  BoundEncoder virtual_encoder;
  for (size_t l = 0; l < bf.layers.size(); ++l) {
    virtual_encoder.layers.emplace_back(
        ad::sub(bf.layers[l].first, ad::scale(inner_enc.tensors[2 * l], cfg.inner_lr)),
        ad::sub(bf.layers[l].second, ad::scale(inner_enc.tensors[2 * l + 1], cfg.inner_lr)));
  }
  ad::Tensor fs1 = apply_encoder(virtual_encoder, apply_embedder(source_emb, xs));
  LossValue outer1 = outer_variant_loss(cfg.outer, ad::l2_normalize_rows(fs1), source_y);

  double dot_value = 0.0;
  for (size_t i = 0; i < encoder_tensors.size(); ++i) {
    const auto& a = outer_enc.tensors[i].values();
    const auto& b = inner_enc.tensors[i].values();
    for (size_t j = 0; j < a.size(); ++j) dot_value += a[j] * b[j];
  }

  TaylorProbe probe;
  probe.exact_outer = outer1.value();
  probe.outer_at_theta = outer0.value();
  probe.expansion = outer0.value() - cfg.inner_lr * dot_value;
  probe.gap = std::abs(probe.exact_outer - probe.expansion);
  return probe;
}

}  // namespace mkat
