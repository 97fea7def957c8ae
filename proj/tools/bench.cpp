// Benchmark of the OpenMP kernels against their serial reference paths:
// Monte Carlo discrepancy search and the linear-probe gradient loop. Also
// verifies that both paths agree before timing them.

#include <chrono>
#include <cstdio>
#include <vector>

#include "mkat/discrepancy.hpp"
#include "mkat/evaluation.hpp"
#include "mkat/parallel.hpp"
#include "mkat/rng.hpp"

using namespace mkat;

namespace {

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

LogitTable random_table(Rng& rng, int n, int source_classes, int target_classes) {
  LogitTable table;
  table.logits = Mat(n, source_classes);
  for (auto& v : table.logits.data) v = rng.normal();
  table.labels.resize(static_cast<size_t>(n));
  for (auto& y : table.labels) y = rng.index(target_classes);
  table.target_classes = target_classes;
  return table;
}

}  // namespace

int main() {
  std::printf("worker threads: %d\n", max_worker_threads());

  {
    Rng rng(7);
    const LogitTable table = random_table(rng, 4096, 32, 8);
    const McOptions opts{50000, true};

    auto t0 = std::chrono::steady_clock::now();
    const DiscrepancyEstimate serial = estimate_mc_serial(table, /*seed=*/3, opts);
    const double serial_s = seconds_since(t0);

    t0 = std::chrono::steady_clock::now();
    const DiscrepancyEstimate parallel = estimate_mc(table, /*seed=*/3, opts);
    const double parallel_s = seconds_since(t0);

    const bool equal = serial.value == parallel.value &&
                       serial.best.subset == parallel.best.subset &&
                       serial.best.permutation == parallel.best.permutation;
    std::printf("mc-discrepancy  n=4096 |Ys|=32 K=8 trials=50000\n");
    std::printf("  serial   %8.3fs  D=%.6f\n", serial_s, serial.value);
    std::printf("  parallel %8.3fs  D=%.6f  speedup %.2fx  results %s\n", parallel_s,
                parallel.value, serial_s / parallel_s, equal ? "identical" : "DIFFER");
    if (!equal) return 1;
  }

  {
    Rng rng(11);
    const int n = 20000, d = 64, k = 10;
    Mat features(n, d);
    for (auto& v : features.data) v = rng.normal();
    std::vector<int> labels(static_cast<size_t>(n));
    for (auto& y : labels) y = rng.index(k);
    // Shift class clusters apart so the probe has something to fit.
    for (int i = 0; i < n; ++i) features.at(i, labels[static_cast<size_t>(i)] % d) += 3.0;

    ProbeOptions serial_opts;
    serial_opts.parallel = false;
    serial_opts.max_iters = 60;
    ProbeOptions parallel_opts = serial_opts;
    parallel_opts.parallel = true;

    auto t0 = std::chrono::steady_clock::now();
    const ProbeResult serial = linear_probe(features, labels, /*split_seed=*/1, serial_opts);
    const double serial_s = seconds_since(t0);

    t0 = std::chrono::steady_clock::now();
    const ProbeResult parallel = linear_probe(features, labels, /*split_seed=*/1, parallel_opts);
    const double parallel_s = seconds_since(t0);

    std::printf("linear-probe    n=%d d=%d k=%d (60 iters)\n", n, d, k);
    std::printf("  serial   %8.3fs  err=%.4f\n", serial_s, serial.error);
    std::printf("  parallel %8.3fs  err=%.4f  speedup %.2fx  |err diff|=%.2e\n", parallel_s,
                parallel.error, serial_s / parallel_s,
                std::abs(serial.error - parallel.error));
  }

  return 0;
}
