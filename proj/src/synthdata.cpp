#include "mkat/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "mkat/rng.hpp"
#include "mkat/training.hpp"

namespace mkat {

void Dataset::validate() const {
  if (inputs.rows < 1) fail(ErrorKind::invalid_argument, "Dataset: empty");
  if (static_cast<size_t>(inputs.rows) != labels.size())
    fail(ErrorKind::shape_mismatch, "Dataset: label count does not match rows");
  if (num_classes < 1) fail(ErrorKind::invalid_argument, "Dataset: class count must be positive");
  std::vector<int> counts(static_cast<size_t>(num_classes), 0);
  for (int y : labels) {
    if (y < 0 || y >= num_classes)
      fail(ErrorKind::invalid_argument, "Dataset: label " + std::to_string(y) + " out of range");
    ++counts[static_cast<size_t>(y)];
  }
  for (int c = 0; c < num_classes; ++c)
    if (counts[static_cast<size_t>(c)] < 2)
      fail(ErrorKind::degenerate_input,
           "Dataset: class " + std::to_string(c) + " has fewer than 2 samples");
  if (!inputs.all_finite()) fail(ErrorKind::numeric_overflow, "Dataset: non-finite inputs");
}

TransformKind parse_transform(std::string_view name) {
  if (name == "identity") return TransformKind::identity;
  if (name == "rotation") return TransformKind::rotation;
  if (name == "random-linear") return TransformKind::random_linear;
  if (name == "nonlinear-mlp") return TransformKind::nonlinear_mlp;
  fail(ErrorKind::invalid_argument,
       "unknown transform '" + std::string(name) +
           "' (expected identity, rotation, random-linear or nonlinear-mlp)");
}

const char* transform_name(TransformKind kind) {
  switch (kind) {
    case TransformKind::identity: return "identity";
    case TransformKind::rotation: return "rotation";
    case TransformKind::random_linear: return "random-linear";
    case TransformKind::nonlinear_mlp: return "nonlinear-mlp";
  }
  return "?";
}

void ModalityPairSpec::validate() const {
  if (source_classes < 2 || target_classes < 2)
    fail(ErrorKind::invalid_argument, "ModalityPairSpec: need at least 2 classes per modality");
  if (target_classes > source_classes)
    fail(ErrorKind::assumption_violation,
         "ModalityPairSpec: target classes (" + std::to_string(target_classes) +
             ") exceed source classes (" + std::to_string(source_classes) +
             "); the source label space must be at least as large");
  if (delta < 0.0 || delta > 1.0)
    fail(ErrorKind::invalid_argument, "ModalityPairSpec: delta must be in [0, 1]");
  if (noise < 0.0) fail(ErrorKind::invalid_argument, "ModalityPairSpec: noise must be >= 0");
  if (latent_dim < 1 || source_raw_dim < 1 || target_raw_dim < 1)
    fail(ErrorKind::invalid_argument, "ModalityPairSpec: dimensions must be positive");
  if (n_source < 2 * source_classes || n_target < 2 * target_classes)
    fail(ErrorKind::invalid_argument,
         "ModalityPairSpec: need at least 2 samples per class in both modalities");
  if (subclusters < 1)
    fail(ErrorKind::invalid_argument, "ModalityPairSpec: subclusters must be >= 1");
  if (transform == TransformKind::identity && target_raw_dim != source_raw_dim)
    fail(ErrorKind::invalid_argument,
         "ModalityPairSpec: identity transform requires matching raw dimensions");
  if (transform == TransformKind::rotation && target_raw_dim < latent_dim)
    fail(ErrorKind::invalid_argument,
         "ModalityPairSpec: rotation transform requires target_raw_dim >= latent_dim");
}

namespace {

Mat unit_rows(Rng& rng, int rows, int cols) {
  Mat m(rows, cols);
  for (int i = 0; i < rows; ++i) {
    double norm2 = 0.0;
    for (int j = 0; j < cols; ++j) {
      m.at(i, j) = rng.normal();
      norm2 += m.at(i, j) * m.at(i, j);
    }
    const double inv = 1.0 / std::sqrt(norm2);
    for (int j = 0; j < cols; ++j) m.at(i, j) *= inv;
  }
  return m;
}

Mat gaussian_map(Rng& rng, int rows, int cols) {
  Mat m(rows, cols);
  const double scl = 1.0 / std::sqrt(static_cast<double>(rows));
  for (auto& v : m.data) v = scl * rng.normal();
  return m;
}

// Orthonormal rows via Gram-Schmidt on a Gaussian matrix: an isometry from
// the latent space into the target raw space.
Mat isometry(Rng& rng, int rows, int cols) {
  Mat m(rows, cols);
  for (int i = 0; i < rows; ++i) {
    for (;;) {
      for (int j = 0; j < cols; ++j) m.at(i, j) = rng.normal();
      for (int p = 0; p < i; ++p) {
        double proj = 0.0;
        for (int j = 0; j < cols; ++j) proj += m.at(i, j) * m.at(p, j);
        for (int j = 0; j < cols; ++j) m.at(i, j) -= proj * m.at(p, j);
      }
      double norm2 = 0.0;
      for (int j = 0; j < cols; ++j) norm2 += m.at(i, j) * m.at(i, j);
      if (norm2 > 1e-12) {
        const double inv = 1.0 / std::sqrt(norm2);
        for (int j = 0; j < cols; ++j) m.at(i, j) *= inv;
        break;
      }
    }
  }
  return m;
}

std::vector<int> balanced_class_sizes(int n, int classes) {
  std::vector<int> sizes(static_cast<size_t>(classes), n / classes);
  for (int c = 0; c < n % classes; ++c) ++sizes[static_cast<size_t>(c)];
  return sizes;
}

Mat apply_target_transform(const TargetState& state, const Mat& latent) {
  switch (state.transform) {
    case TransformKind::identity:
    case TransformKind::rotation:
    case TransformKind::random_linear: {
      ad::Graph g;
      return ad::matmul(g.constant(latent), g.constant(state.linear_map)).to_mat();
    }
    case TransformKind::nonlinear_mlp: {
      ad::Graph g;
      ad::Tensor z = g.constant(latent);
      ad::Tensor h = ad::tanh(ad::affine(z, g.constant(state.mlp_w1), g.constant(state.mlp_b1)));
      return ad::affine(h, g.constant(state.mlp_w2), g.constant(state.mlp_b2)).to_mat();
    }
  }
  fail(ErrorKind::invalid_argument, "apply_target_transform: unknown kind");
}

void shuffle_dataset(Dataset& data, Rng& rng) {
  const auto order = rng.permutation(data.inputs.rows);
  Mat inputs(data.inputs.rows, data.inputs.cols);
  std::vector<int> labels(data.labels.size());
  for (int i = 0; i < data.inputs.rows; ++i) {
    for (int j = 0; j < data.inputs.cols; ++j)
      inputs.at(i, j) = data.inputs.at(order[static_cast<size_t>(i)], j);
    labels[static_cast<size_t>(i)] = data.labels[static_cast<size_t>(order[static_cast<size_t>(i)])];
  }
  data.inputs = std::move(inputs);
  data.labels = std::move(labels);
}

Dataset draw_target_samples(const ModalityPairSpec& spec, const TargetState& state, int n,
                            uint64_t seed, uint64_t noise_stream, uint64_t shuffle_stream) {
  const auto sizes = balanced_class_sizes(n, spec.target_classes);
  Mat latent(n, spec.latent_dim);
  std::vector<int> labels;
  labels.reserve(static_cast<size_t>(n));
  Rng rng(seed, noise_stream);
  int row = 0;
  for (int c = 0; c < spec.target_classes; ++c) {
    const auto& protos = state.prototype_of[static_cast<size_t>(c)];
    for (int s = 0; s < sizes[static_cast<size_t>(c)]; ++s, ++row) {
      const int p = protos.size() == 1
                        ? protos[0]
                        : protos[static_cast<size_t>(rng.index(static_cast<int>(protos.size())))];
      for (int j = 0; j < spec.latent_dim; ++j)
        latent.at(row, j) = state.prototypes.at(p, j) + spec.noise * rng.normal();
      labels.push_back(c);
    }
  }

  Dataset data;
  data.inputs = apply_target_transform(state, latent);
  data.labels = std::move(labels);
  data.num_classes = spec.target_classes;
  data.modality = "target";
  data.seed = seed;
  Rng shuffle_rng(seed, shuffle_stream);
  shuffle_dataset(data, shuffle_rng);
  return data;
}

}  // namespace

Dataset make_source(const ModalityPairSpec& spec, uint64_t seed, SourceState* state) {
  spec.validate();
  Rng proto_rng(seed, /*stream=*/0xa1);
  SourceState local;
  local.prototypes = unit_rows(proto_rng, spec.source_classes, spec.latent_dim);
  Rng map_rng(seed, /*stream=*/0xa2);
  local.raw_map = gaussian_map(map_rng, spec.latent_dim, spec.source_raw_dim);

  const auto sizes = balanced_class_sizes(spec.n_source, spec.source_classes);
  Mat latent(spec.n_source, spec.latent_dim);
  std::vector<int> labels;
  labels.reserve(static_cast<size_t>(spec.n_source));
  Rng noise_rng(seed, /*stream=*/0xa3);
  int row = 0;
  for (int c = 0; c < spec.source_classes; ++c) {
    for (int s = 0; s < sizes[static_cast<size_t>(c)]; ++s, ++row) {
      for (int j = 0; j < spec.latent_dim; ++j)
        latent.at(row, j) = local.prototypes.at(c, j) + spec.noise * noise_rng.normal();
      labels.push_back(c);
    }
  }

  Dataset data;
  {
    ad::Graph g;
    data.inputs = ad::matmul(g.constant(latent), g.constant(local.raw_map)).to_mat();
  }
  data.labels = std::move(labels);
  data.num_classes = spec.source_classes;
  data.modality = "source";
  data.seed = seed;
  std::ostringstream prov;
  prov << "source;classes=" << spec.source_classes << ";sigma=" << spec.noise
       << ";latent=" << spec.latent_dim << ";raw=" << spec.source_raw_dim << ";seed=" << seed;
  data.provenance = prov.str();
  Rng shuffle_rng(seed, /*stream=*/0xa4);
  shuffle_dataset(data, shuffle_rng);
  data.validate();
  if (state) *state = std::move(local);
  return data;
}

Dataset make_target(const ModalityPairSpec& spec, const SourceState& source_state, uint64_t seed,
                    TargetState* state) {
  spec.validate();
  if (source_state.prototypes.rows != spec.source_classes ||
      source_state.prototypes.cols != spec.latent_dim)
    fail(ErrorKind::shape_mismatch, "make_target: source state does not match the spec");

  TargetState local;
  local.transform = spec.transform;

  Rng pick_rng(seed, /*stream=*/0xb1);
  local.source_class_of = pick_rng.sample_without_replacement(spec.source_classes,
                                                              spec.target_classes);

  Rng coin_rng(seed, /*stream=*/0xb2);
  local.replaced.resize(static_cast<size_t>(spec.target_classes));
  for (int c = 0; c < spec.target_classes; ++c)
    local.replaced[static_cast<size_t>(c)] = coin_rng.uniform() < spec.delta ? 1 : 0;

  // Prototype rows: kept classes reference their source prototype; replaced
  // classes get fresh unrelated sub-prototypes. A single tight fresh cluster
  // would usually land inside one source decision region and stay matchable,
  // so replaced classes scatter over several.
  Rng fresh_rng(seed, /*stream=*/0xb3);
  std::vector<std::vector<double>> proto_rows;
  local.prototype_of.resize(static_cast<size_t>(spec.target_classes));
  for (int c = 0; c < spec.target_classes; ++c) {
    if (!local.replaced[static_cast<size_t>(c)]) {
      std::vector<double> row(static_cast<size_t>(spec.latent_dim));
      for (int j = 0; j < spec.latent_dim; ++j)
        row[static_cast<size_t>(j)] =
            source_state.prototypes.at(local.source_class_of[static_cast<size_t>(c)], j);
      local.prototype_of[static_cast<size_t>(c)].push_back(static_cast<int>(proto_rows.size()));
      proto_rows.push_back(std::move(row));
    } else {
      for (int s = 0; s < spec.subclusters; ++s) {
        Mat fresh = unit_rows(fresh_rng, 1, spec.latent_dim);
        local.prototype_of[static_cast<size_t>(c)].push_back(static_cast<int>(proto_rows.size()));
        proto_rows.push_back(fresh.data);
      }
    }
  }
  local.prototypes = Mat(static_cast<int>(proto_rows.size()), spec.latent_dim);
  for (size_t r = 0; r < proto_rows.size(); ++r)
    for (int j = 0; j < spec.latent_dim; ++j)
      local.prototypes.at(static_cast<int>(r), j) = proto_rows[r][static_cast<size_t>(j)];

  Rng transform_rng(seed, /*stream=*/0xb4);
  switch (spec.transform) {
    case TransformKind::identity:
      local.linear_map = source_state.raw_map;
      break;
    case TransformKind::rotation:
      local.linear_map = isometry(transform_rng, spec.latent_dim, spec.target_raw_dim);
      break;
    case TransformKind::random_linear:
      local.linear_map = gaussian_map(transform_rng, spec.latent_dim, spec.target_raw_dim);
      break;
    case TransformKind::nonlinear_mlp: {
      const int hidden = 2 * spec.latent_dim;
      local.mlp_w1 = gaussian_map(transform_rng, spec.latent_dim, hidden);
      local.mlp_b1 = Mat(1, hidden);
      for (auto& v : local.mlp_b1.data) v = 0.1 * transform_rng.normal();
      local.mlp_w2 = gaussian_map(transform_rng, hidden, spec.target_raw_dim);
      local.mlp_b2 = Mat(1, spec.target_raw_dim);
      break;
    }
  }

  Dataset data = draw_target_samples(spec, local, spec.n_target, seed, /*noise_stream=*/0xb5,
                                     /*shuffle_stream=*/0xb6);
  std::ostringstream prov;
  prov << "target;classes=" << spec.target_classes << ";delta=" << spec.delta
       << ";transform=" << transform_name(spec.transform) << ";sigma=" << spec.noise
       << ";subclusters=" << spec.subclusters << ";raw=" << spec.target_raw_dim
       << ";seed=" << seed;
  data.provenance = prov.str();
  data.validate();
  if (state) *state = std::move(local);
  return data;
}

Dataset sample_target(const ModalityPairSpec& spec, const TargetState& state, int n,
                      uint64_t seed) {
  if (n < 2 * spec.target_classes)
    fail(ErrorKind::invalid_argument, "sample_target: need at least 2 samples per class");
  Dataset data = draw_target_samples(spec, state, n, seed, /*noise_stream=*/0xc5,
                                     /*shuffle_stream=*/0xc6);
  data.provenance = "target-resample;seed=" + std::to_string(seed);
  data.validate();
  return data;
}

ModelParams pretrain_source(const ModalityPairSpec& spec, const Dataset& source,
                            const PretrainConfig& cfg, uint64_t seed) {
  source.validate();
  Dims dims;
  dims.input_dim = source.raw_dim();
  dims.embed_dim = cfg.embed_dim;
  dims.hidden_dim = cfg.hidden_dim;
  dims.classes = source.num_classes;
  dims.encoder_depth = cfg.encoder_depth;

  ModelParams params = init_params(dims, seed);

  TrainConfig tc;
  tc.finetune_lr = cfg.learning_rate;
  tc.momentum = cfg.momentum;
  tc.stage2_iters = cfg.steps;
  tc.batch_size = cfg.batch_size;
  tc.seed = seed;

  // Extra rounds until the train-error bar is met; a checkpoint that cannot
  // reach it is a configuration error worth surfacing.
  constexpr int kMaxRounds = 10;
  for (int round = 0; round < kMaxRounds; ++round) {
    params = vanilla_finetune(params, source, tc).params;
    const Mat logits = forward(params, source.inputs, ForwardMode::full);
    if (batch_error(logits, source.labels) <= cfg.target_train_error) return params;
    tc.seed = Rng::mix(tc.seed, 0xd0 + static_cast<uint64_t>(round));
  }
  fail(ErrorKind::degenerate_input,
       "pretrain_source: train error did not reach " + std::to_string(cfg.target_train_error) +
           " after " + std::to_string(kMaxRounds) + " rounds");
}

}  // namespace mkat
