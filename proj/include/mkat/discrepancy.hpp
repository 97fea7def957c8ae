#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

#include "mkat/dataset.hpp"
#include "mkat/mat.hpp"
#include "mkat/model.hpp"

namespace mkat {

// Source-model logits evaluated on target samples, plus the target labels.
// Assumes the source label space is at least as large as the target one.
struct LogitTable {
  Mat logits;               // n x source_classes
  std::vector<int> labels;  // target labels in [0, target_classes)
  int target_classes{0};

  int samples() const { return logits.rows; }
  int source_classes() const { return logits.cols; }
  void validate() const;
};

// A subset B of source classes (kept sorted; slot j is the j-th smallest
// member) paired with a permutation over target labels.
struct LabelMatching {
  std::vector<int> subset;
  std::vector<int> permutation;
};

enum class DiscrepancyMode { mc, mc_hungarian, exact };

DiscrepancyMode parse_discrepancy_mode(std::string_view name);
const char* discrepancy_mode_name(DiscrepancyMode mode);

struct DiscrepancyEstimate {
  double value{1.0};  // in [0, 1]
  LabelMatching best;
  int64_t trials{0};  // random trials, or matchings enumerated in exact mode
  DiscrepancyMode mode{DiscrepancyMode::mc};
};

// Mean indicator mismatch for one matching: per sample, the source prediction
// is the argmax over the subset (ties to the smallest class index), mapped to
// its slot; it mismatches when the slot differs from the permuted label.
double trial_mismatch(const LogitTable& table, const LabelMatching& matching);

struct McOptions {
  int64_t trials = 100000;
  bool parallel = true;  // sharded trials reduce identically to the serial path
};

// Random-search minimum over (subset, permutation) pairs; deterministic per
// seed no matter how trials are sharded (counter-based per-trial generators).
DiscrepancyEstimate estimate_mc(const LogitTable& table, uint64_t seed, const McOptions& = {});
DiscrepancyEstimate estimate_mc_serial(const LogitTable& table, uint64_t seed,
                                       const McOptions& = {});

// Random subsets with the permutation solved exactly per trial (assignment on
// the confusion counts). Dominates plain sampling trial-for-trial; optional.
DiscrepancyEstimate estimate_mc_hungarian(const LogitTable& table, uint64_t seed,
                                          const McOptions& = {});

struct ExactOptions {
  int64_t guardrail = 1000000;  // refuse larger C(|Ys|, K) * K! enumerations
  bool parallel = true;
};

// Global minimum by full enumeration of subsets and permutations.
DiscrepancyEstimate estimate_exact(const LogitTable& table, const ExactOptions& = {});

int64_t matching_space_size(int source_classes, int target_classes);

// Solves the assignment problem: permutation maximizing the sum of
// counts[slot][pi(label)] pairings, i.e. minimizing mismatches.
std::vector<int> best_permutation(const std::vector<std::vector<int64_t>>& slot_by_label);

struct ReportOptions {
  bool auto_mode = true;  // exact when the matching space fits the guardrail
  DiscrepancyMode mode = DiscrepancyMode::mc;
  int64_t trials = 100000;
  uint64_t seed = 0;
  int64_t guardrail = 1000000;
};

// Runs target inputs through the complete source model (original predictor),
// builds the logit table and dispatches. Inputs whose width differs from the
// model are zero-padded or truncated deterministically.
DiscrepancyEstimate discrepancy_report(const ModelParams& source_model, const Dataset& target,
                                       const ReportOptions& = {});

LogitTable build_logit_table(const ModelParams& source_model, const Dataset& target);

}  // namespace mkat
