#include "mkat/losses.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

namespace mkat {

using ad::Graph;
using ad::IndexList;
using ad::Tensor;

double LossValue::component(std::string_view name) const {
  for (const auto& [n, v] : components)
    if (n == name) return v;
  fail(ErrorKind::invalid_argument, "LossValue: no component named " + std::string(name));
}

double LossValue::components_sum() const {
  double s = 0.0;
  for (const auto& [n, v] : components) s += v;
  return s;
}

namespace {

Graph& graph_of(const Tensor& t, const char* who) {
  if (!t.valid()) fail(ErrorKind::invalid_argument, std::string(who) + ": unbound tensor");
  return *t.graph();
}

void check_labels(std::span<const int> labels, int n, int classes, const char* who) {
  if (static_cast<int>(labels.size()) != n)
    fail(ErrorKind::shape_mismatch,
         std::string(who) + ": " + std::to_string(labels.size()) + " labels for " +
             std::to_string(n) + " rows");
  for (int y : labels)
    if (y < 0 || (classes > 0 && y >= classes))
      fail(ErrorKind::invalid_argument, std::string(who) + ": label " + std::to_string(y) +
                                            " out of range [0, " + std::to_string(classes) + ")");
}

}  // namespace

LossValue cross_entropy(const ad::Tensor& logits, std::span<const int> labels) {
  graph_of(logits, "cross_entropy");
  const int n = logits.rows();
  const int k = logits.cols();
  check_labels(labels, n, k, "cross_entropy");

  Tensor lse = ad::logsumexp_rows(logits);  // n x 1
  auto true_entries = std::make_shared<IndexList>();
  auto lse_entries = std::make_shared<IndexList>();
  true_entries->reserve(labels.size());
  lse_entries->reserve(labels.size());
  for (int i = 0; i < n; ++i) {
    true_entries->emplace_back(i, labels[i]);
    lse_entries->emplace_back(i, 0);
  }
  Tensor per_sample = ad::sub(ad::gather(lse, lse_entries), ad::gather(logits, true_entries));
  Tensor total = ad::scale(ad::sum_all(per_sample), 1.0 / n);
  return LossValue{total, {{"cross_entropy", total.scalar()}}};
}

LossValue alignment_loss(const ad::Tensor& features, std::span<const int> labels) {
  graph_of(features, "alignment_loss");
  const int n = features.rows();
  check_labels(labels, n, 0, "alignment_loss");
  if (n < 2) fail(ErrorKind::invalid_argument, "alignment_loss: need at least 2 rows");

  auto pairs = std::make_shared<IndexList>();
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j)
      if (labels[i] == labels[j]) pairs->emplace_back(i, j);
  if (pairs->empty())
    fail(ErrorKind::degenerate_input, "alignment_loss: no same-class pair in batch");

  Tensor dists = ad::gather(ad::pairwise_sq_dist(features), pairs);
  Tensor total = ad::scale(ad::sum_all(dists), 1.0 / static_cast<double>(pairs->size()));
  return LossValue{total, {{"alignment", total.scalar()}}};
}

LossValue uniformity_loss(const ad::Tensor& features) {
  Graph& g = graph_of(features, "uniformity_loss");
  const int n = features.rows();
  if (n < 2) fail(ErrorKind::invalid_argument, "uniformity_loss: need at least 2 rows");

  auto pairs = std::make_shared<IndexList>();
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) pairs->emplace_back(i, j);

  Tensor dists = ad::gather(ad::pairwise_sq_dist(features), pairs);
  // log mean exp(-2 d) == logsumexp(-2 d) - log(pair count).
  Tensor lse = ad::logsumexp_all(ad::scale(dists, -2.0));
  Tensor total = ad::sub(lse, g.scalar_const(std::log(static_cast<double>(pairs->size()))));
  return LossValue{total, {{"uniformity", total.scalar()}}};
}

LossValue outer_loss(const ad::Tensor& features, std::span<const int> labels,
                     const OuterLossOptions& options) {
  LossValue align = alignment_loss(features, labels);
  LossValue uniform = uniformity_loss(features);
  Tensor a = align.total;
  Tensor u = uniform.total;
  if (options.literal_signs) {
    a = ad::scale(a, -1.0);
    u = ad::scale(u, -1.0);
  }
  Tensor total = ad::add(a, u);
  return LossValue{total, {{"alignment", a.scalar()}, {"uniformity", u.scalar()}}};
}

LossValue combined_outer(const LossValue& outer, const LossValue& inner, double lambda) {
  if (lambda < 0.0) fail(ErrorKind::invalid_argument, "combined_outer: lambda must be >= 0");
  Tensor weighted = ad::scale(outer.total, lambda);
  Tensor total = ad::add(weighted, inner.total);
  return LossValue{total, {{"outer_weighted", weighted.scalar()}, {"inner", inner.value()}}};
}

LossValue supcon_loss(const ad::Tensor& features, std::span<const int> labels, double temperature) {
  graph_of(features, "supcon_loss");
  const int n = features.rows();
  check_labels(labels, n, 0, "supcon_loss");
  if (n < 2) fail(ErrorKind::invalid_argument, "supcon_loss: need at least 2 rows");
  if (temperature <= 0.0) fail(ErrorKind::invalid_argument, "supcon_loss: temperature must be > 0");

  Tensor sims = ad::scale(ad::matmul(features, ad::transpose(features)), 1.0 / temperature);

  Tensor acc;
  int anchors = 0;
  for (int i = 0; i < n; ++i) {
    auto positives = std::make_shared<IndexList>();
    auto others = std::make_shared<IndexList>();
    for (int a = 0; a < n; ++a) {
      if (a == i) continue;
      others->emplace_back(i, a);
      if (labels[a] == labels[i]) positives->emplace_back(i, a);
    }
    if (positives->empty()) continue;
    Tensor mean_pos = ad::scale(ad::sum_all(ad::gather(sims, positives)),
                                1.0 / static_cast<double>(positives->size()));
    Tensor lse = ad::logsumexp_all(ad::gather(sims, others));
    Tensor term = ad::sub(lse, mean_pos);
    acc = acc.valid() ? ad::add(acc, term) : term;
    ++anchors;
  }
  if (anchors == 0)
    fail(ErrorKind::degenerate_input, "supcon_loss: no anchor has a positive pair");
  Tensor total = ad::scale(acc, 1.0 / anchors);
  return LossValue{total, {{"supcon", total.scalar()}}};
}

LossValue davies_bouldin_objective(const ad::Tensor& features, std::span<const int> labels) {
  Graph& g = graph_of(features, "davies_bouldin_objective");
  const int n = features.rows();
  const int d = features.cols();
  check_labels(labels, n, 0, "davies_bouldin_objective");

  int classes = 0;
  for (int y : labels) classes = std::max(classes, y + 1);
  std::vector<std::vector<int>> members(static_cast<size_t>(classes));
  for (int i = 0; i < n; ++i) members[static_cast<size_t>(labels[i])].push_back(i);
  std::vector<std::vector<int>> present;
  for (auto& m : members)
    if (!m.empty()) present.push_back(std::move(m));
  const int k = static_cast<int>(present.size());
  if (k < 2)
    fail(ErrorKind::degenerate_input, "davies_bouldin_objective: need at least 2 classes");

  constexpr double kEps = 1e-12;  // keeps sqrt gradients finite at zero scatter

  std::vector<Tensor> centroids;   // each 1 x d
  std::vector<Tensor> scatters;    // each 1 x 1
  for (const auto& m : present) {
    Mat sel(1, n);
    for (int idx : m) sel.at(0, idx) = 1.0 / static_cast<double>(m.size());
    Tensor centroid = ad::matmul(g.constant(sel), features);
    Mat pick(static_cast<int>(m.size()), n);
    for (size_t r = 0; r < m.size(); ++r) pick.at(static_cast<int>(r), m[r]) = 1.0;
    Tensor rows = ad::matmul(g.constant(pick), features);
    Tensor diff = ad::sub(rows, ad::bcast_rows(centroid, static_cast<int>(m.size())));
    Tensor dist = ad::sqrt(ad::add(ad::row_sum(ad::mul(diff, diff)),
                                   g.constant_fill(static_cast<int>(m.size()), 1, kEps)));
    centroids.push_back(centroid);
    scatters.push_back(ad::mean_all(dist));
  }

  // R[i][j] = (s_i + s_j) / ||c_i - c_j||; the index picks the worst j by
  // value, which is exactly the subgradient branch of the max.
  Tensor acc;
  for (int i = 0; i < k; ++i) {
    Tensor best;
    double best_value = -1.0;
    for (int j = 0; j < k; ++j) {
      if (j == i) continue;
      Tensor cd = ad::sub(centroids[static_cast<size_t>(i)], centroids[static_cast<size_t>(j)]);
      Tensor dist = ad::sqrt(ad::add(ad::sum_all(ad::mul(cd, cd)), g.scalar_const(kEps)));
      Tensor ratio = ad::div(ad::add(scatters[static_cast<size_t>(i)], scatters[static_cast<size_t>(j)]), dist);
      const double v = ratio.scalar();
      if (v > best_value) {
        best_value = v;
        best = ratio;
      }
    }
    acc = acc.valid() ? ad::add(acc, best) : best;
  }
  Tensor total = ad::scale(acc, 1.0 / k);
  return LossValue{total, {{"davies_bouldin", total.scalar()}}};
}

OuterVariant parse_outer_variant(std::string_view name) {
  if (name == "au") return OuterVariant::alignment_uniformity;
  if (name == "supcon") return OuterVariant::supcon;
  if (name == "db") return OuterVariant::davies_bouldin;
  fail(ErrorKind::invalid_argument, "unknown outer loss variant '" + std::string(name) +
                                        "' (expected au, supcon or db)");
}

const char* outer_variant_name(OuterVariant v) {
  switch (v) {
    case OuterVariant::alignment_uniformity: return "au";
    case OuterVariant::supcon: return "supcon";
    case OuterVariant::davies_bouldin: return "db";
  }
  return "?";
}

LossValue outer_variant_loss(const OuterConfig& cfg, const ad::Tensor& features,
                             std::span<const int> labels) {
  switch (cfg.variant) {
    case OuterVariant::alignment_uniformity:
      return outer_loss(features, labels, OuterLossOptions{cfg.literal_signs});
    case OuterVariant::supcon:
      return supcon_loss(features, labels, cfg.supcon_temperature);
    case OuterVariant::davies_bouldin:
      return davies_bouldin_objective(features, labels);
  }
  fail(ErrorKind::invalid_argument, "outer_variant_loss: unknown variant");
}

}  // namespace mkat
