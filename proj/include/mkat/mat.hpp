#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "mkat/error.hpp"

namespace mkat {

// Dense row-major rank-2 value type. Plain storage; the autodiff module has
// its own graph-bound tensor handle and converts to/from Mat at the edges.
struct Mat {
  int rows{0};
  int cols{0};
  std::vector<double> data;

  Mat() = default;
  Mat(int r, int c) : rows(r), cols(c), data(static_cast<size_t>(r) * static_cast<size_t>(c), 0.0) {}
  Mat(int r, int c, std::vector<double> d) : rows(r), cols(c), data(std::move(d)) {
    if (data.size() != static_cast<size_t>(r) * static_cast<size_t>(c))
      fail(ErrorKind::shape_mismatch, "Mat: data length does not match " + std::to_string(r) + "x" + std::to_string(c));
  }

  static Mat full(int r, int c, double v) {
    Mat m(r, c);
    for (auto& x : m.data) x = v;
    return m;
  }

  double& at(int r, int c) { return data[static_cast<size_t>(r) * cols + c]; }
  double at(int r, int c) const { return data[static_cast<size_t>(r) * cols + c]; }

  int count() const { return rows * cols; }
  bool empty() const { return rows == 0 || cols == 0; }

  bool all_finite() const {
    for (double v : data)
      if (!std::isfinite(v)) return false;
    return true;
  }

  friend bool operator==(const Mat&, const Mat&) = default;
};

inline double max_abs_diff(const Mat& a, const Mat& b) {
  if (a.rows != b.rows || a.cols != b.cols)
    fail(ErrorKind::shape_mismatch, "max_abs_diff: shapes differ");
  double m = 0.0;
  for (size_t i = 0; i < a.data.size(); ++i) m = std::max(m, std::abs(a.data[i] - b.data[i]));
  return m;
}

}  // namespace mkat
