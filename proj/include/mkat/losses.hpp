#pragma once

#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "mkat/tensor.hpp"

namespace mkat {

// A differentiable scalar plus its named breakdown. Invariant: the total
// equals the sum of the components (within 1e-10).
struct LossValue {
  ad::Tensor total;
  std::vector<std::pair<std::string, double>> components;

  double value() const { return total.scalar(); }
  double component(std::string_view name) const;
  double components_sum() const;
};

// Mean negative log-softmax of the true class.
LossValue cross_entropy(const ad::Tensor& logits, std::span<const int> labels);

// Mean squared distance over unordered same-class pairs i<j. Positive,
// minimized; zero iff all same-class features coincide.
LossValue alignment_loss(const ad::Tensor& features, std::span<const int> labels);

// log of the mean over unordered pairs i<j of exp(-2 ||f_i - f_j||^2).
// In [-8, 0] for unit-norm rows; minimized.
LossValue uniformity_loss(const ad::Tensor& features);

struct OuterLossOptions {
  // The published form of the objective carries minus signs on both terms;
  // minimizing that form scatters same-class features and collapses the rest,
  // contradicting its own description, so the positive (canonical) form is
  // the default. The literal form stays available for audits.
  bool literal_signs = false;
};

// Alignment + uniformity on l2-normalized features.
LossValue outer_loss(const ad::Tensor& features, std::span<const int> labels,
                     const OuterLossOptions& options = {});

// lambda * outer + inner.
LossValue combined_outer(const LossValue& outer, const LossValue& inner, double lambda);

// Supervised contrastive loss, drop-in replacement for outer_loss.
LossValue supcon_loss(const ad::Tensor& features, std::span<const int> labels,
                      double temperature = 0.1);

// Differentiable Davies-Bouldin index, drop-in replacement for outer_loss.
LossValue davies_bouldin_objective(const ad::Tensor& features, std::span<const int> labels);

enum class OuterVariant { alignment_uniformity, supcon, davies_bouldin };

OuterVariant parse_outer_variant(std::string_view name);
const char* outer_variant_name(OuterVariant v);

struct OuterConfig {
  OuterVariant variant = OuterVariant::alignment_uniformity;
  bool literal_signs = false;
  double supcon_temperature = 0.1;
};

LossValue outer_variant_loss(const OuterConfig& cfg, const ad::Tensor& features,
                             std::span<const int> labels);

}  // namespace mkat
