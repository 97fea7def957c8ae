#include "mkat/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <limits>
#include <thread>

#include "mkat/parallel.hpp"
#include "mkat/rng.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace mkat {

int max_worker_threads() {
  static const int cached = [] {
    if (const char* env = std::getenv("MKAT_THREADS")) {
      const int v = std::atoi(env);
      if (v > 0) return v;
    }
    const unsigned hw = std::thread::hardware_concurrency();
    return hw > 0 ? static_cast<int>(hw) : 1;
  }();
  return cached;
}

namespace {

// Fixed chunk grid so the reduction order is independent of the thread count:
// chunk partials are computed in parallel but always summed in chunk order.
constexpr int kGradChunks = 64;

struct ProbePass {
  double loss{0.0};
  Mat grad_w;  // d x k
  Mat grad_b;  // 1 x k
};

void pass_rows(const Mat& x, std::span<const int> labels, std::span<const int> rows,
               const Mat& w, const Mat& b, size_t begin, size_t end, double* loss, Mat* gw,
               Mat* gb) {
  const int d = x.cols;
  const int k = w.cols;
  std::vector<double> scores(static_cast<size_t>(k));
  for (size_t r = begin; r < end; ++r) {
    const int row = rows[r];
    const double* xr = x.data.data() + static_cast<size_t>(row) * d;
    for (int c = 0; c < k; ++c) scores[static_cast<size_t>(c)] = b.data[static_cast<size_t>(c)];
    for (int j = 0; j < d; ++j) {
      const double xj = xr[j];
      if (xj == 0.0) continue;
      const double* wrow = w.data.data() + static_cast<size_t>(j) * k;
      for (int c = 0; c < k; ++c) scores[static_cast<size_t>(c)] += xj * wrow[c];
    }
    double mx = scores[0];
    for (int c = 1; c < k; ++c) mx = std::max(mx, scores[static_cast<size_t>(c)]);
    double denom = 0.0;
    for (int c = 0; c < k; ++c) {
      scores[static_cast<size_t>(c)] = std::exp(scores[static_cast<size_t>(c)] - mx);
      denom += scores[static_cast<size_t>(c)];
    }
    const int y = labels[static_cast<size_t>(row)];
    *loss += -std::log(scores[static_cast<size_t>(y)] / denom);
    for (int c = 0; c < k; ++c) {
      const double residual = scores[static_cast<size_t>(c)] / denom - (c == y ? 1.0 : 0.0);
      gb->data[static_cast<size_t>(c)] += residual;
      if (residual == 0.0) continue;
      for (int j = 0; j < d; ++j) gw->data[static_cast<size_t>(j) * k + c] += xr[j] * residual;
    }
  }
}

ProbePass probe_pass(const Mat& x, std::span<const int> labels, std::span<const int> rows,
                     const Mat& w, const Mat& b, bool parallel) {
  const int d = x.cols;
  const int k = w.cols;
  const size_t m = rows.size();
  ProbePass out;
  out.grad_w = Mat(d, k);
  out.grad_b = Mat(1, k);

  if (!parallel) {
    // Reference path: one straight pass over the rows.
    pass_rows(x, labels, rows, w, b, 0, m, &out.loss, &out.grad_w, &out.grad_b);
  } else {
    const int chunks = static_cast<int>(std::min<size_t>(kGradChunks, m));
    std::vector<double> losses(static_cast<size_t>(chunks), 0.0);
    std::vector<Mat> gws(static_cast<size_t>(chunks), Mat(d, k));
    std::vector<Mat> gbs(static_cast<size_t>(chunks), Mat(1, k));
#ifdef _OPENMP
#pragma omp parallel for schedule(static) num_threads(max_worker_threads())
#endif
    for (int c = 0; c < chunks; ++c) {
      const size_t begin = m * static_cast<size_t>(c) / chunks;
      const size_t end = m * static_cast<size_t>(c + 1) / chunks;
      pass_rows(x, labels, rows, w, b, begin, end, &losses[static_cast<size_t>(c)],
                &gws[static_cast<size_t>(c)], &gbs[static_cast<size_t>(c)]);
    }
    for (int c = 0; c < chunks; ++c) {
      out.loss += losses[static_cast<size_t>(c)];
      for (size_t i = 0; i < out.grad_w.data.size(); ++i)
        out.grad_w.data[i] += gws[static_cast<size_t>(c)].data[i];
      for (size_t i = 0; i < out.grad_b.data.size(); ++i)
        out.grad_b.data[i] += gbs[static_cast<size_t>(c)].data[i];
    }
  }

  const double inv = 1.0 / static_cast<double>(m);
  out.loss *= inv;
  for (auto& v : out.grad_w.data) v *= inv;
  for (auto& v : out.grad_b.data) v *= inv;
  return out;
}

double grad_norm(const ProbePass& p) {
  double s = 0.0;
  for (double v : p.grad_w.data) s += v * v;
  for (double v : p.grad_b.data) s += v * v;
  return std::sqrt(s);
}

int predict_row(const Mat& x, int row, const Mat& w, const Mat& b) {
  const int d = x.cols;
  const int k = w.cols;
  int best = 0;
  double best_score = -std::numeric_limits<double>::infinity();
  for (int c = 0; c < k; ++c) {
    double s = b.data[static_cast<size_t>(c)];
    for (int j = 0; j < d; ++j)
      s += x.data[static_cast<size_t>(row) * d + j] * w.data[static_cast<size_t>(j) * k + c];
    if (s > best_score) {  // ties resolve to the lowest class index
      best_score = s;
      best = c;
    }
  }
  return best;
}

}  // namespace

ProbeResult linear_probe(const Mat& features, std::span<const int> labels, uint64_t split_seed,
                         const ProbeOptions& options) {
  const int n = features.rows;
  const int d = features.cols;
  if (static_cast<size_t>(n) != labels.size())
    fail(ErrorKind::shape_mismatch, "linear_probe: label count does not match rows");
  if (n < 5) fail(ErrorKind::invalid_argument, "linear_probe: need at least 5 samples");

  int classes = 0;
  for (int y : labels) {
    if (y < 0) fail(ErrorKind::invalid_argument, "linear_probe: negative label");
    classes = std::max(classes, y + 1);
  }
  std::vector<char> class_present(static_cast<size_t>(classes), 0);
  for (int y : labels) class_present[static_cast<size_t>(y)] = 1;

  const int train_n = std::clamp(static_cast<int>(std::lround(options.train_fraction * n)), 1, n - 1);

  // Deterministic split; resample with the next seed if the train side is
  // missing any class that appears in the data.
  uint64_t seed = split_seed;
  int resamples = 0;
  std::vector<int> order;
  for (;;) {
    Rng rng(seed, /*stream=*/0x51);
    order = rng.permutation(n);
    std::vector<char> seen(static_cast<size_t>(classes), 0);
    for (int i = 0; i < train_n; ++i) seen[static_cast<size_t>(labels[order[static_cast<size_t>(i)]])] = 1;
    bool ok = true;
    for (int c = 0; c < classes; ++c)
      if (class_present[static_cast<size_t>(c)] && !seen[static_cast<size_t>(c)]) ok = false;
    int distinct = 0;
    for (char s : seen) distinct += s;
    if (ok && distinct >= 2) break;
    ++resamples;
    ++seed;
    if (resamples > options.max_resamples)
      fail(ErrorKind::degenerate_input,
           "linear_probe: could not draw a split covering every class");
  }

  std::span<const int> train_rows(order.data(), static_cast<size_t>(train_n));
  std::span<const int> test_rows(order.data() + train_n, static_cast<size_t>(n - train_n));

  Mat w(d, classes);
  Mat b(1, classes);

  ProbePass pass = probe_pass(features, labels, train_rows, w, b, options.parallel);
  double lr = 1.0;
  int iters = 0;
  while (grad_norm(pass) >= options.grad_tol && iters < options.max_iters) {
    const double g2 = grad_norm(pass) * grad_norm(pass);
    // Backtracking step: accept when the Armijo bound holds, otherwise halve.
    bool stepped = false;
    while (lr > 1e-18) {
      Mat w_try = w;
      Mat b_try = b;
      for (size_t i = 0; i < w.data.size(); ++i) w_try.data[i] -= lr * pass.grad_w.data[i];
      for (size_t i = 0; i < b.data.size(); ++i) b_try.data[i] -= lr * pass.grad_b.data[i];
      ProbePass next = probe_pass(features, labels, train_rows, w_try, b_try, options.parallel);
      if (next.loss <= pass.loss - 0.5 * lr * g2) {
        w = std::move(w_try);
        b = std::move(b_try);
        pass = std::move(next);
        lr = std::min(lr * 2.0, 1e8);
        stepped = true;
        break;
      }
      lr *= 0.5;
    }
    ++iters;
    if (!stepped) break;
  }

  int wrong = 0;
  for (int row : test_rows)
    if (predict_row(features, row, w, b) != labels[static_cast<size_t>(row)]) ++wrong;

  ProbeResult out;
  out.error = static_cast<double>(wrong) / static_cast<double>(test_rows.size());
  out.weights = Mat(d + 1, classes);
  for (int j = 0; j < d; ++j)
    for (int c = 0; c < classes; ++c) out.weights.at(j, c) = w.at(j, c);
  for (int c = 0; c < classes; ++c) out.weights.at(d, c) = b.at(0, c);
  out.split_seed = seed;
  out.resamples = resamples;
  out.iters = iters;
  out.grad_norm = grad_norm(pass);
  return out;
}

ClusterScore davies_bouldin(const Mat& features, std::span<const int> labels) {
  const int n = features.rows;
  const int d = features.cols;
  if (static_cast<size_t>(n) != labels.size())
    fail(ErrorKind::shape_mismatch, "davies_bouldin: label count does not match rows");

  int classes = 0;
  for (int y : labels) classes = std::max(classes, y + 1);
  std::vector<std::vector<int>> members(static_cast<size_t>(classes));
  for (int i = 0; i < n; ++i) members[static_cast<size_t>(labels[i])].push_back(i);
  std::vector<std::vector<int>> present;
  for (auto& m : members)
    if (!m.empty()) present.push_back(std::move(m));
  const int k = static_cast<int>(present.size());
  if (k < 2) fail(ErrorKind::degenerate_input, "davies_bouldin: need at least 2 classes");

  ClusterScore score;
  score.centroids = Mat(k, d);
  score.scatters.assign(static_cast<size_t>(k), 0.0);
  for (int c = 0; c < k; ++c) {
    const auto& m = present[static_cast<size_t>(c)];
    for (int row : m)
      for (int j = 0; j < d; ++j) score.centroids.at(c, j) += features.at(row, j);
    for (int j = 0; j < d; ++j) score.centroids.at(c, j) /= static_cast<double>(m.size());
    double s = 0.0;
    for (int row : m) {
      double dist2 = 0.0;
      for (int j = 0; j < d; ++j) {
        const double diff = features.at(row, j) - score.centroids.at(c, j);
        dist2 += diff * diff;
      }
      s += std::sqrt(dist2);
    }
    score.scatters[static_cast<size_t>(c)] = s / static_cast<double>(m.size());
  }

  double acc = 0.0;
  for (int i = 0; i < k; ++i) {
    double worst = 0.0;
    for (int j = 0; j < k; ++j) {
      if (j == i) continue;
      double dist2 = 0.0;
      for (int col = 0; col < d; ++col) {
        const double diff = score.centroids.at(i, col) - score.centroids.at(j, col);
        dist2 += diff * diff;
      }
      if (dist2 == 0.0) {
        score.degenerate = true;
        score.index = std::numeric_limits<double>::infinity();
        return score;
      }
      worst = std::max(worst, (score.scatters[static_cast<size_t>(i)] +
                               score.scatters[static_cast<size_t>(j)]) /
                                  std::sqrt(dist2));
    }
    acc += worst;
  }
  score.index = acc / static_cast<double>(k);
  return score;
}

Mat extract_features(const EmbedderParams& embedder, const EncoderParams& encoder,
                     const Mat& inputs) {
  if (inputs.cols != embedder.weight.rows)
    fail(ErrorKind::shape_mismatch, "extract_features: inputs have " + std::to_string(inputs.cols) +
                                        " columns, embedder expects " +
                                        std::to_string(embedder.weight.rows));
  if (encoder.layers.empty() || embedder.weight.cols != encoder.layers.front().weight.rows)
    fail(ErrorKind::shape_mismatch, "extract_features: embedder/encoder dimensions do not chain");
  ad::Graph g;
  ad::Tensor x = g.constant(inputs);
  ad::Tensor emb = apply_embedder(bind(g, embedder), x);
  return apply_encoder(bind(g, encoder), emb).to_mat();
}

}  // namespace mkat
