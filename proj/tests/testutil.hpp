#pragma once

#include <cmath>
#include <functional>
#include <span>
#include <vector>

#include "mkat/mat.hpp"
#include "mkat/rng.hpp"

namespace mkat::test {

// Central finite differences, the independent oracle for every gradient in
// the suite. f re-evaluates the full objective from a flat parameter vector.
inline std::vector<double> central_diff(const std::function<double(std::span<const double>)>& f,
                                        std::span<const double> x, double h = 1e-5) {
  std::vector<double> g(x.size());
  std::vector<double> probe(x.begin(), x.end());
  for (size_t i = 0; i < x.size(); ++i) {
    const double saved = probe[i];
    probe[i] = saved + h;
    const double fp = f(probe);
    probe[i] = saved - h;
    const double fm = f(probe);
    probe[i] = saved;
    g[i] = (fp - fm) / (2.0 * h);
  }
  return g;
}

inline double rel_err(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-6});
}

inline double max_rel_err(std::span<const double> a, std::span<const double> b) {
  double m = 0.0;
  for (size_t i = 0; i < a.size(); ++i) m = std::max(m, rel_err(a[i], b[i]));
  return m;
}

inline Mat random_mat(Rng& rng, int rows, int cols, double scl = 1.0) {
  Mat m(rows, cols);
  for (auto& v : m.data) v = scl * rng.normal();
  return m;
}

inline Mat random_unit_rows(Rng& rng, int rows, int cols) {
  Mat m = random_mat(rng, rows, cols);
  for (int i = 0; i < rows; ++i) {
    double s = 0.0;
    for (int j = 0; j < cols; ++j) s += m.at(i, j) * m.at(i, j);
    const double inv = 1.0 / std::sqrt(s);
    for (int j = 0; j < cols; ++j) m.at(i, j) *= inv;
  }
  return m;
}

}  // namespace mkat::test
