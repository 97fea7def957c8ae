#include "mkat/discrepancy.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "mkat/dataset.hpp"
#include "mkat/parallel.hpp"
#include "mkat/rng.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace mkat {

void LogitTable::validate() const {
  if (logits.rows < 1 || logits.cols < 1)
    fail(ErrorKind::invalid_argument, "LogitTable: empty logits");
  if (static_cast<size_t>(logits.rows) != labels.size())
    fail(ErrorKind::shape_mismatch, "LogitTable: label count does not match rows");
  if (target_classes < 1)
    fail(ErrorKind::invalid_argument, "LogitTable: target class count must be positive");
  if (target_classes > logits.cols)
    fail(ErrorKind::assumption_violation,
         "LogitTable: target classes (" + std::to_string(target_classes) +
             ") exceed source classes (" + std::to_string(logits.cols) +
             "); the source label space must be at least as large");
  for (int y : labels)
    if (y < 0 || y >= target_classes)
      fail(ErrorKind::invalid_argument, "LogitTable: label out of range");
}

DiscrepancyMode parse_discrepancy_mode(std::string_view name) {
  if (name == "mc") return DiscrepancyMode::mc;
  if (name == "mc-hungarian") return DiscrepancyMode::mc_hungarian;
  if (name == "exact") return DiscrepancyMode::exact;
  fail(ErrorKind::invalid_argument,
       "unknown discrepancy mode '" + std::string(name) + "' (expected exact, mc or mc-hungarian)");
}

const char* discrepancy_mode_name(DiscrepancyMode mode) {
  switch (mode) {
    case DiscrepancyMode::mc: return "mc";
    case DiscrepancyMode::mc_hungarian: return "mc-hungarian";
    case DiscrepancyMode::exact: return "exact";
  }
  return "?";
}

namespace {

void validate_matching(const LogitTable& table, const LabelMatching& m) {
  const int k = table.target_classes;
  if (static_cast<int>(m.subset.size()) != k || static_cast<int>(m.permutation.size()) != k)
    fail(ErrorKind::invalid_argument, "LabelMatching: sizes do not match target class count");
  std::vector<char> seen_b(static_cast<size_t>(table.source_classes()), 0);
  for (int b : m.subset) {
    if (b < 0 || b >= table.source_classes() || seen_b[static_cast<size_t>(b)])
      fail(ErrorKind::invalid_argument, "LabelMatching: subset is not K distinct source classes");
    seen_b[static_cast<size_t>(b)] = 1;
  }
  std::vector<char> seen_p(static_cast<size_t>(k), 0);
  for (int p : m.permutation) {
    if (p < 0 || p >= k || seen_p[static_cast<size_t>(p)])
      fail(ErrorKind::invalid_argument, "LabelMatching: permutation is not a bijection");
    seen_p[static_cast<size_t>(p)] = 1;
  }
}

// Slot of the argmax within the sorted subset, ties to the smallest class id.
int argmax_slot(const Mat& logits, int row, const std::vector<int>& subset_sorted) {
  int best_slot = 0;
  double best = -std::numeric_limits<double>::infinity();
  for (size_t s = 0; s < subset_sorted.size(); ++s) {
    const double v = logits.at(row, subset_sorted[s]);
    if (v > best) {  // strict: earlier (smaller) class wins ties
      best = v;
      best_slot = static_cast<int>(s);
    }
  }
  return best_slot;
}

// counts[slot][label] over all samples for a given sorted subset.
std::vector<std::vector<int64_t>> confusion_counts(const LogitTable& table,
                                                   const std::vector<int>& subset_sorted) {
  const int k = table.target_classes;
  std::vector<std::vector<int64_t>> counts(static_cast<size_t>(k),
                                           std::vector<int64_t>(static_cast<size_t>(k), 0));
  for (int i = 0; i < table.samples(); ++i) {
    const int slot = argmax_slot(table.logits, i, subset_sorted);
    ++counts[static_cast<size_t>(slot)][static_cast<size_t>(table.labels[static_cast<size_t>(i)])];
  }
  return counts;
}

double mismatch_from_counts(const std::vector<std::vector<int64_t>>& counts,
                            const std::vector<int>& permutation, int64_t n) {
  int64_t matched = 0;
  for (size_t label = 0; label < permutation.size(); ++label)
    matched += counts[static_cast<size_t>(permutation[label])][label];
  return 1.0 - static_cast<double>(matched) / static_cast<double>(n);
}

struct TrialResult {
  double value{2.0};
  int64_t trial{-1};
  LabelMatching matching;

  bool better_than(const TrialResult& other) const {
    if (value != other.value) return value < other.value;
    return trial < other.trial;  // deterministic tie-break: earliest trial
  }
};

TrialResult run_trial(const LogitTable& table, uint64_t seed, int64_t trial, bool hungarian) {
  Rng rng(seed, static_cast<uint64_t>(trial));
  const int k = table.target_classes;
  LabelMatching m;
  m.subset = rng.sample_without_replacement(table.source_classes(), k);
  std::sort(m.subset.begin(), m.subset.end());
  const auto counts = confusion_counts(table, m.subset);
  if (hungarian) {
    m.permutation = best_permutation(counts);
  } else {
    m.permutation = rng.permutation(k);
  }
  TrialResult r;
  r.value = mismatch_from_counts(counts, m.permutation, table.samples());
  r.trial = trial;
  r.matching = std::move(m);
  return r;
}

DiscrepancyEstimate mc_impl(const LogitTable& table, uint64_t seed, const McOptions& options,
                            bool hungarian, bool parallel) {
  table.validate();
  if (options.trials < 1) fail(ErrorKind::invalid_argument, "estimate_mc: trials must be >= 1");

  TrialResult best;
  if (parallel) {
#ifdef _OPENMP
#pragma omp parallel num_threads(max_worker_threads())
    {
      TrialResult local;
#pragma omp for schedule(static)
      for (int64_t t = 0; t < options.trials; ++t) {
        TrialResult r = run_trial(table, seed, t, hungarian);
        if (r.better_than(local)) local = std::move(r);
      }
#pragma omp critical
      {
        if (local.better_than(best)) best = std::move(local);
      }
    }
#else
    parallel = false;
#endif
  }
  if (!parallel) {
    for (int64_t t = 0; t < options.trials; ++t) {
      TrialResult r = run_trial(table, seed, t, hungarian);
      if (r.better_than(best)) best = std::move(r);
    }
  }

  DiscrepancyEstimate out;
  out.value = best.value;
  out.best = std::move(best.matching);
  out.trials = options.trials;
  out.mode = hungarian ? DiscrepancyMode::mc_hungarian : DiscrepancyMode::mc;
  return out;
}

}  // namespace

double trial_mismatch(const LogitTable& table, const LabelMatching& matching) {
  table.validate();
  validate_matching(table, matching);
  std::vector<int> subset_sorted = matching.subset;
  std::sort(subset_sorted.begin(), subset_sorted.end());
  int64_t mismatched = 0;
  for (int i = 0; i < table.samples(); ++i) {
    const int slot = argmax_slot(table.logits, i, subset_sorted);
    const int wanted = matching.permutation[static_cast<size_t>(table.labels[static_cast<size_t>(i)])];
    if (slot != wanted) ++mismatched;
  }
  return static_cast<double>(mismatched) / static_cast<double>(table.samples());
}

DiscrepancyEstimate estimate_mc(const LogitTable& table, uint64_t seed, const McOptions& options) {
  return mc_impl(table, seed, options, /*hungarian=*/false, options.parallel);
}

DiscrepancyEstimate estimate_mc_serial(const LogitTable& table, uint64_t seed,
                                       const McOptions& options) {
  return mc_impl(table, seed, options, /*hungarian=*/false, /*parallel=*/false);
}

DiscrepancyEstimate estimate_mc_hungarian(const LogitTable& table, uint64_t seed,
                                          const McOptions& options) {
  return mc_impl(table, seed, options, /*hungarian=*/true, options.parallel);
}

int64_t matching_space_size(int source_classes, int target_classes) {
  // C(|Ys|, K) * K!, saturating well above any guardrail.
  constexpr int64_t kCap = std::numeric_limits<int64_t>::max() / 4;
  int64_t comb = 1;
  for (int i = 1; i <= target_classes; ++i) {
    comb = comb * (source_classes - target_classes + i) / i;
    if (comb > kCap) return kCap;
  }
  int64_t total = comb;
  for (int i = 2; i <= target_classes; ++i) {
    total *= i;
    if (total > kCap) return kCap;
  }
  return total;
}

std::vector<int> best_permutation(const std::vector<std::vector<int64_t>>& slot_by_label) {
  // Hungarian algorithm (potentials form) maximizing matched counts.
  const int k = static_cast<int>(slot_by_label.size());
  int64_t mx = 0;
  for (const auto& row : slot_by_label)
    for (int64_t v : row) mx = std::max(mx, v);
  // cost[label][slot]: minimize (mx - count).
  std::vector<std::vector<int64_t>> cost(static_cast<size_t>(k),
                                         std::vector<int64_t>(static_cast<size_t>(k), 0));
  for (int slot = 0; slot < k; ++slot)
    for (int label = 0; label < k; ++label)
      cost[static_cast<size_t>(label)][static_cast<size_t>(slot)] =
          mx - slot_by_label[static_cast<size_t>(slot)][static_cast<size_t>(label)];

  const int64_t kInf = std::numeric_limits<int64_t>::max() / 4;
  std::vector<int64_t> u(static_cast<size_t>(k) + 1, 0), v(static_cast<size_t>(k) + 1, 0);
  std::vector<int> way(static_cast<size_t>(k) + 1, 0), match(static_cast<size_t>(k) + 1, 0);
  for (int i = 1; i <= k; ++i) {
    match[0] = i;
    int j0 = 0;
    std::vector<int64_t> minv(static_cast<size_t>(k) + 1, kInf);
    std::vector<char> used(static_cast<size_t>(k) + 1, 0);
    do {
      used[static_cast<size_t>(j0)] = 1;
      const int i0 = match[static_cast<size_t>(j0)];
      int64_t delta = kInf;
      int j1 = 0;
      for (int j = 1; j <= k; ++j) {
        if (used[static_cast<size_t>(j)]) continue;
        const int64_t cur = cost[static_cast<size_t>(i0 - 1)][static_cast<size_t>(j - 1)] -
                            u[static_cast<size_t>(i0)] - v[static_cast<size_t>(j)];
        if (cur < minv[static_cast<size_t>(j)]) {
          minv[static_cast<size_t>(j)] = cur;
          way[static_cast<size_t>(j)] = j0;
        }
        if (minv[static_cast<size_t>(j)] < delta) {
          delta = minv[static_cast<size_t>(j)];
          j1 = j;
        }
      }
      for (int j = 0; j <= k; ++j) {
        if (used[static_cast<size_t>(j)]) {
          u[static_cast<size_t>(match[static_cast<size_t>(j)])] += delta;
          v[static_cast<size_t>(j)] -= delta;
        } else {
          minv[static_cast<size_t>(j)] -= delta;
        }
      }
      j0 = j1;
    } while (match[static_cast<size_t>(j0)] != 0);
    do {
      const int j1 = way[static_cast<size_t>(j0)];
      match[static_cast<size_t>(j0)] = match[static_cast<size_t>(j1)];
      j0 = j1;
    } while (j0 != 0);
  }

  // match[slot+1] = label+1; permutation maps label -> slot.
  std::vector<int> perm(static_cast<size_t>(k), 0);
  for (int j = 1; j <= k; ++j) perm[static_cast<size_t>(match[static_cast<size_t>(j)] - 1)] = j - 1;
  return perm;
}

DiscrepancyEstimate estimate_exact(const LogitTable& table, const ExactOptions& options) {
  table.validate();
  const int k = table.target_classes;
  const int64_t space = matching_space_size(table.source_classes(), k);
  if (space > options.guardrail)
    fail(ErrorKind::invalid_argument,
         "estimate_exact: matching space has " + std::to_string(space) +
             " elements, above the guardrail of " + std::to_string(options.guardrail) +
             "; use a Monte Carlo mode");

  // All K-subsets in lexicographic order.
  std::vector<std::vector<int>> subsets;
  std::vector<int> cur(static_cast<size_t>(k));
  std::iota(cur.begin(), cur.end(), 0);
  for (;;) {
    subsets.push_back(cur);
    int pos = k - 1;
    while (pos >= 0 && cur[static_cast<size_t>(pos)] == table.source_classes() - k + pos) --pos;
    if (pos < 0) break;
    ++cur[static_cast<size_t>(pos)];
    for (int j = pos + 1; j < k; ++j) cur[static_cast<size_t>(j)] = cur[static_cast<size_t>(j - 1)] + 1;
  }

  struct Best {
    double value{2.0};
    size_t subset_idx{0};
    std::vector<int> permutation;

    bool better_than(const Best& other) const {
      if (value != other.value) return value < other.value;
      if (subset_idx != other.subset_idx) return subset_idx < other.subset_idx;
      return permutation < other.permutation;
    }
  };

  const auto scan_subset = [&](size_t si) {
    Best local;
    const auto counts = confusion_counts(table, subsets[si]);
    std::vector<int> perm(static_cast<size_t>(k));
    std::iota(perm.begin(), perm.end(), 0);
    do {
      const double value = mismatch_from_counts(counts, perm, table.samples());
      if (value < local.value) {
        local.value = value;
        local.subset_idx = si;
        local.permutation = perm;
      }
    } while (std::next_permutation(perm.begin(), perm.end()));
    return local;
  };

  Best best;
  bool parallel = options.parallel;
  if (parallel) {
#ifdef _OPENMP
#pragma omp parallel num_threads(max_worker_threads())
    {
      Best local;
#pragma omp for schedule(static)
      for (int64_t si = 0; si < static_cast<int64_t>(subsets.size()); ++si) {
        Best r = scan_subset(static_cast<size_t>(si));
        if (r.better_than(local)) local = std::move(r);
      }
#pragma omp critical
      {
        if (local.better_than(best)) best = std::move(local);
      }
    }
#else
    parallel = false;
#endif
  }
  if (!parallel) {
    for (size_t si = 0; si < subsets.size(); ++si) {
      Best r = scan_subset(si);
      if (r.better_than(best)) best = std::move(r);
    }
  }

  DiscrepancyEstimate out;
  out.value = best.value;
  out.best.subset = subsets[best.subset_idx];
  out.best.permutation = best.permutation;
  out.trials = space;
  out.mode = DiscrepancyMode::exact;
  return out;
}

LogitTable build_logit_table(const ModelParams& source_model, const Dataset& target) {
  const int want = source_model.dims.input_dim;
  Mat inputs = target.inputs;
  if (inputs.cols != want) {
    // Deterministic width adapter: truncate or zero-pad on the right.
    Mat adapted(inputs.rows, want);
    const int shared = std::min(inputs.cols, want);
    for (int i = 0; i < inputs.rows; ++i)
      for (int j = 0; j < shared; ++j) adapted.at(i, j) = inputs.at(i, j);
    inputs = std::move(adapted);
  }
  LogitTable table;
  table.logits = forward(source_model, inputs, ForwardMode::full);
  table.labels = target.labels;
  table.target_classes = target.num_classes;
  table.validate();
  return table;
}

DiscrepancyEstimate discrepancy_report(const ModelParams& source_model, const Dataset& target,
                                       const ReportOptions& options) {
  const LogitTable table = build_logit_table(source_model, target);
  DiscrepancyMode mode = options.mode;
  if (options.auto_mode) {
    const int64_t space = matching_space_size(table.source_classes(), table.target_classes);
    mode = space <= options.guardrail ? DiscrepancyMode::exact : DiscrepancyMode::mc;
  }
  switch (mode) {
    case DiscrepancyMode::exact:
      return estimate_exact(table, ExactOptions{options.guardrail, true});
    case DiscrepancyMode::mc:
      return estimate_mc(table, options.seed, McOptions{options.trials, true});
    case DiscrepancyMode::mc_hungarian:
      return estimate_mc_hungarian(table, options.seed, McOptions{options.trials, true});
  }
  fail(ErrorKind::invalid_argument, "discrepancy_report: unknown mode");
}

}  // namespace mkat
