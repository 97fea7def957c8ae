#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "mkat/mat.hpp"
#include "mkat/model.hpp"

namespace mkat {

struct ProbeOptions {
  int max_iters = 5000;
  double grad_tol = 1e-6;
  double train_fraction = 0.8;
  int max_resamples = 16;
  // Chunked OpenMP gradient kernel; the serial path is the reference
  // implementation the tests and the benchmark compare against.
  bool parallel = true;
};

struct ProbeResult {
  double error{1.0};          // held-out error rate
  Mat weights;                // (d+1) x k, last row is the bias
  uint64_t split_seed{0};
  int resamples{0};           // degenerate splits skipped before this one
  int iters{0};
  double grad_norm{0.0};
};

// Multinomial logistic regression on frozen features, trained by full-batch
// gradient descent to convergence (grad norm < tol or iteration cap) on a
// deterministic 80/20 split. Splits missing a class are resampled with the
// next seed and counted in `resamples`.
ProbeResult linear_probe(const Mat& features, std::span<const int> labels, uint64_t split_seed,
                         const ProbeOptions& options = {});

struct ClusterScore {
  double index{0.0};
  bool degenerate{false};  // coinciding class centroids; index reported as inf
  Mat centroids;           // k x d for the classes present, in label order
  std::vector<double> scatters;
};

// Standard Davies-Bouldin index: mean over classes of the worst
// (s_i + s_j) / ||c_i - c_j||, s = mean distance to the class centroid.
ClusterScore davies_bouldin(const Mat& features, std::span<const int> labels);

// Features through an arbitrary (embedder, encoder) pairing, enabling
// source-embedder / target-encoder mixes.
Mat extract_features(const EmbedderParams& embedder, const EncoderParams& encoder,
                     const Mat& inputs);

}  // namespace mkat
