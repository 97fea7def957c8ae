#include "mkat/tensor.hpp"

#include <cmath>
#include <memory>
#include <vector>

#include "doctest.h"
#include "mkat/rng.hpp"
#include "testutil.hpp"

using namespace mkat;
using namespace mkat::ad;
using mkat::test::central_diff;
using mkat::test::max_rel_err;
using mkat::test::random_mat;

namespace {

// Scalar probe used by the per-primitive gradient checks: a fixed random
// weighting of the op output, so the loss exercises every output entry.
Tensor weighted(Graph& g, const Tensor& y, Rng& rng) {
  Mat w(y.rows(), y.cols());
  for (auto& v : w.data) v = rng.uniform(-1.0, 1.0);
  return sum_all(mul(y, g.constant(w)));
}

}  // namespace

TEST_CASE("forward values: hand fixtures") {
  Graph g;
  SUBCASE("l2-normalize 3-4-5 row") {
    Tensor x = g.leaf(Mat(1, 2, {3.0, 4.0}));
    Tensor y = l2_normalize_rows(x);
    CHECK(y.value_at(0, 0) == doctest::Approx(0.6).epsilon(1e-12));
    CHECK(y.value_at(0, 1) == doctest::Approx(0.8).epsilon(1e-12));
  }
  SUBCASE("pairwise squared distance of orthonormal pair") {
    Tensor x = g.leaf(Mat(2, 2, {1.0, 0.0, 0.0, 1.0}));
    Tensor d = pairwise_sq_dist(x);
    CHECK(d.value_at(0, 0) == 0.0);
    CHECK(d.value_at(1, 1) == 0.0);
    CHECK(d.value_at(0, 1) == doctest::Approx(2.0).epsilon(1e-12));
    CHECK(d.value_at(1, 0) == doctest::Approx(2.0).epsilon(1e-12));
  }
  SUBCASE("layernorm row [1,3], unit gain, zero bias") {
    Tensor x = g.leaf(Mat(1, 2, {1.0, 3.0}));
    Tensor gain = g.constant(Mat::full(1, 2, 1.0));
    Tensor bias = g.constant(Mat::full(1, 2, 0.0));
    Tensor y = layernorm_rows(x, gain, bias, 1e-5);
    CHECK(std::abs(y.value_at(0, 0) - (-1.0)) < 1e-4);
    CHECK(std::abs(y.value_at(0, 1) - 1.0) < 1e-4);
  }
  SUBCASE("softmax of uniform row") {
    Tensor x = g.leaf(Mat(1, 4, {2.0, 2.0, 2.0, 2.0}));
    Tensor s = softmax_rows(x);
    for (int j = 0; j < 4; ++j) CHECK(s.value_at(0, j) == doctest::Approx(0.25).epsilon(1e-14));
  }
  SUBCASE("logsumexp is shift-stable") {
    Tensor x = g.leaf(Mat(1, 2, {1000.0, 1000.0}));
    CHECK(logsumexp_all(x).scalar() == doctest::Approx(1000.0 + std::log(2.0)).epsilon(1e-12));
  }
}

TEST_CASE("simple gradients") {
  SUBCASE("d/dx sum(x*x) at 3 is 6") {
    Graph g;
    Tensor x = g.leaf(Mat(1, 1, {3.0}));
    Tensor loss = sum_all(mul(x, x));
    Tensor dx = grad1(loss, x);
    CHECK(dx.scalar() == doctest::Approx(6.0).epsilon(1e-14));
  }
  SUBCASE("mean(relu(Wx)) matches central differences on a 4x4 case") {
    Rng rng(7);
    Mat w0 = random_mat(rng, 4, 4);
    Mat x0 = random_mat(rng, 4, 1);
    const auto eval = [&](std::span<const double> wflat) {
      Graph g;
      Tensor w = g.leaf(4, 4, wflat);
      Tensor x = g.constant(x0);
      return mean_all(relu(matmul(w, x))).scalar();
    };
    Graph g;
    Tensor w = g.leaf(w0);
    Tensor x = g.constant(x0);
    Tensor loss = mean_all(relu(matmul(w, x)));
    Tensor dw = grad1(loss, w);
    const auto fd = central_diff(eval, w0.data, 1e-5);
    CHECK(max_rel_err(dw.values(), fd) <= 1e-5);
  }
}

TEST_CASE("per-primitive gradients match central differences at random points") {
  // 10 random points per primitive; first-order tolerance 1e-5.
  struct Case {
    const char* name;
    int rows, cols;
    // Builds op output from a leaf; inputs kept away from kinks/poles.
    std::function<Tensor(Graph&, const Tensor&)> build;
    std::function<double(double)> squash;  // maps raw normal to valid input
  };
  auto ident = [](double v) { return v; };
  auto positive = [](double v) { return 0.5 + std::abs(v); };
  auto away_from_zero = [](double v) { return v >= 0.0 ? 0.1 + v : -0.1 + v; };

  std::vector<Case> cases = {
      {"add", 3, 4,
       [](Graph& g, const Tensor& x) { return add(x, g.constant(Mat::full(3, 4, 0.7))); }, ident},
      {"sub", 3, 4,
       [](Graph& g, const Tensor& x) { return sub(g.constant(Mat::full(3, 4, 0.3)), x); }, ident},
      {"mul", 3, 4,
       [](Graph& g, const Tensor& x) { return mul(x, x); }, ident},
      {"div", 2, 3,
       [](Graph& g, const Tensor& x) { return div(g.constant(Mat::full(2, 3, 1.5)), x); }, positive},
      {"scale", 3, 3, [](Graph&, const Tensor& x) { return scale(x, -2.5); }, ident},
      {"matmul-left", 3, 4,
       [](Graph& g, const Tensor& x) {
         Rng r(11);
         return matmul(x, g.constant(mkat::test::random_mat(r, 4, 2)));
       },
       ident},
      {"matmul-right", 4, 2,
       [](Graph& g, const Tensor& x) {
         Rng r(12);
         return matmul(g.constant(mkat::test::random_mat(r, 3, 4)), x);
       },
       ident},
      {"transpose", 2, 5, [](Graph&, const Tensor& x) { return transpose(x); }, ident},
      {"relu", 3, 4, [](Graph&, const Tensor& x) { return relu(x); }, away_from_zero},
      {"tanh", 3, 4, [](Graph&, const Tensor& x) { return ad::tanh(x); }, ident},
      {"exp", 3, 4, [](Graph&, const Tensor& x) { return ad::exp(x); }, ident},
      {"log", 3, 4, [](Graph&, const Tensor& x) { return ad::log(x); }, positive},
      {"sqrt", 3, 4, [](Graph&, const Tensor& x) { return ad::sqrt(x); }, positive},
      {"row-sum", 3, 4, [](Graph&, const Tensor& x) { return row_sum(x); }, ident},
      {"col-sum", 3, 4, [](Graph&, const Tensor& x) { return col_sum(x); }, ident},
      {"sum", 3, 4, [](Graph&, const Tensor& x) { return sum_all(x); }, ident},
      {"bcast-cols", 3, 1, [](Graph&, const Tensor& x) { return bcast_cols(x, 5); }, ident},
      {"bcast-rows", 1, 4, [](Graph&, const Tensor& x) { return bcast_rows(x, 5); }, ident},
      {"bcast-all", 1, 1, [](Graph&, const Tensor& x) { return bcast_all(x, 3, 2); }, ident},
      {"row-softmax", 3, 4, [](Graph&, const Tensor& x) { return softmax_rows(x); }, ident},
      {"logsumexp-rows", 3, 4, [](Graph&, const Tensor& x) { return logsumexp_rows(x); }, ident},
      {"logsumexp", 3, 4, [](Graph&, const Tensor& x) { return logsumexp_all(x); }, ident},
      {"gather", 3, 4,
       [](Graph&, const Tensor& x) {
         auto idx = std::make_shared<IndexList>(IndexList{{0, 1}, {2, 3}, {1, 1}, {0, 1}});
         return gather(x, idx);
       },
       ident},
      {"scatter", 4, 1,
       [](Graph&, const Tensor& x) {
         auto idx = std::make_shared<IndexList>(IndexList{{0, 0}, {1, 2}, {0, 0}, {2, 1}});
         return scatter_into(x, idx, 3, 3);
       },
       ident},
      {"l2-normalize-rows", 3, 4,
       [](Graph&, const Tensor& x) { return l2_normalize_rows(x); }, away_from_zero},
      {"pairwise-squared-distance", 4, 3,
       [](Graph&, const Tensor& x) { return pairwise_sq_dist(x); }, ident},
      {"layernorm-rows", 3, 4,
       [](Graph& g, const Tensor& x) {
         Rng r(13);
         Mat gain = mkat::test::random_mat(r, 1, 4, 0.5);
         for (auto& v : gain.data) v += 1.0;
         return layernorm_rows(x, g.constant(gain), g.constant(mkat::test::random_mat(r, 1, 4, 0.1)));
       },
       ident},
  };

  for (const auto& c : cases) {
    CAPTURE(c.name);
    Rng rng(Rng::mix(99, static_cast<uint64_t>(c.rows * 131 + c.cols)));
    for (int trial = 0; trial < 10; ++trial) {
      Mat x0(c.rows, c.cols);
      for (auto& v : x0.data) v = c.squash(rng.normal());
      Rng wrng(Rng::mix(4242, static_cast<uint64_t>(trial)));
      Mat wmat;
      const auto eval = [&](std::span<const double> flat) {
        Graph g;
        Tensor x = g.leaf(c.rows, c.cols, flat);
        Tensor y = c.build(g, x);
        return sum_all(mul(y, g.constant(wmat))).scalar();
      };
      {
        Graph g;
        Tensor x = g.leaf(x0);
        Tensor y = c.build(g, x);
        wmat = Mat(y.rows(), y.cols());
        for (auto& v : wmat.data) v = wrng.uniform(-1.0, 1.0);
        Tensor loss = sum_all(mul(y, g.constant(wmat)));
        Tensor dx = grad1(loss, x);
        const auto fd = central_diff(eval, x0.data, 1e-5);
        const double err = max_rel_err(dx.values(), fd);
        CAPTURE(trial);
        CHECK(err <= 1e-5);
      }
    }
  }
}

TEST_CASE("nested (second-order) gradients") {
  SUBCASE("grad of sum(x^3) then grad again is exact") {
    Graph g;
    Mat x0(2, 2, {0.5, -1.25, 2.0, 0.75});
    Tensor x = g.leaf(x0);
    Tensor f = sum_all(mul(mul(x, x), x));
    Tensor df = grad1(f, x);  // 3 x^2
    for (int i = 0; i < 4; ++i)
      CHECK(df.values()[i] == doctest::Approx(3.0 * x0.data[i] * x0.data[i]).epsilon(1e-13));
    Mat w0(2, 2, {1.0, 2.0, -1.0, 0.5});
    Tensor probe = sum_all(mul(df, g.constant(w0)));
    Tensor d2 = grad1(probe, x);  // 6 x .* w
    for (int i = 0; i < 4; ++i)
      CHECK(d2.values()[i] == doctest::Approx(6.0 * x0.data[i] * w0.data[i]).epsilon(1e-13));
  }

  SUBCASE("gradient through a one-step descent update matches finite differences") {
    // L(theta - alpha * dl/dtheta) differentiated w.r.t. theta.
    Rng rng(21);
    const double alpha = 0.1;
    Mat theta0 = random_mat(rng, 3, 3, 0.7);
    Mat a0 = random_mat(rng, 3, 3, 0.5);
    Mat b0 = random_mat(rng, 3, 3, 0.5);
    const auto nested = [&](std::span<const double> flat) {
      Graph g;
      Tensor theta = g.leaf(3, 3, flat);
      Tensor inner = sum_all(mul(ad::tanh(theta), g.constant(a0)));
      Tensor gtheta = grad1(inner, theta);
      Tensor updated = sub(theta, scale(gtheta, alpha));
      Tensor outer = sum_all(mul(mul(updated, updated), g.constant(b0)));
      return outer.scalar();
    };
    Graph g;
    Tensor theta = g.leaf(theta0);
    Tensor inner = sum_all(mul(ad::tanh(theta), g.constant(a0)));
    Tensor gtheta = grad1(inner, theta);
    Tensor updated = sub(theta, scale(gtheta, alpha));
    Tensor outer = sum_all(mul(mul(updated, updated), g.constant(b0)));
    Tensor dtheta = grad1(outer, theta);
    const auto fd = central_diff(nested, theta0.data, 1e-5);
    CHECK(max_rel_err(dtheta.values(), fd) <= 1e-3);
  }

  SUBCASE("nested checks across primitives at random points") {
    // ||grad f||^2 differentiated again, f mixing tanh/exp/matmul/logsumexp.
    Rng rng(33);
    for (int trial = 0; trial < 10; ++trial) {
      Mat x0 = random_mat(rng, 2, 3, 0.6);
      Rng r2(Rng::mix(5, static_cast<uint64_t>(trial)));
      Mat m0 = random_mat(r2, 3, 2, 0.8);
      const auto eval = [&](std::span<const double> flat) {
        Graph g;
        Tensor x = g.leaf(2, 3, flat);
        Tensor f = logsumexp_all(matmul(ad::tanh(x), g.constant(m0)));
        Tensor df = grad1(f, x);
        return sum_all(mul(df, df)).scalar();
      };
      Graph g;
      Tensor x = g.leaf(x0);
      Tensor f = logsumexp_all(matmul(ad::tanh(x), g.constant(m0)));
      Tensor df = grad1(f, x);
      Tensor probe = sum_all(mul(df, df));
      Tensor d2 = grad1(probe, x);
      const auto fd = central_diff(eval, x0.data, 1e-5);
      CAPTURE(trial);
      CHECK(max_rel_err(d2.values(), fd) <= 1e-3);
    }
  }
}

TEST_CASE("backward linearity: grad of sum of losses equals sum of grads") {
  Rng rng(55);
  Mat x0 = random_mat(rng, 3, 3);
  Mat a0 = random_mat(rng, 3, 3);
  Graph g;
  Tensor x = g.leaf(x0);
  Tensor a = g.constant(a0);
  Tensor l1 = sum_all(mul(x, a));
  Tensor l2 = logsumexp_all(x);
  Tensor combined = add(l1, l2);
  Tensor dc = grad1(combined, x);
  Tensor d1 = grad1(l1, x);
  Tensor d2 = grad1(l2, x);
  for (int i = 0; i < 9; ++i)
    CHECK(std::abs(dc.values()[i] - (d1.values()[i] + d2.values()[i])) <= 1e-12);
}

TEST_CASE("l2-normalize output rows have unit norm") {
  Rng rng(77);
  Mat x0 = random_mat(rng, 6, 5);
  // Include a row with norm exactly 1e-6.
  for (int j = 0; j < 5; ++j) x0.at(5, j) = 0.0;
  x0.at(5, 0) = 1e-6;
  Graph g;
  Tensor y = l2_normalize_rows(g.leaf(x0));
  for (int i = 0; i < 6; ++i) {
    double s = 0.0;
    for (int j = 0; j < 5; ++j) s += y.value_at(i, j) * y.value_at(i, j);
    CHECK(std::abs(std::sqrt(s) - 1.0) <= 1e-9);
  }
}

TEST_CASE("replaying the same graph reproduces bit-identical outputs") {
  const auto run = [] {
    Rng rng(404);
    Graph g;
    Tensor x = g.leaf(random_mat(rng, 4, 4));
    Tensor y = softmax_rows(matmul(ad::tanh(x), x));
    Tensor loss = logsumexp_all(y);
    Tensor dx = grad1(loss, x);
    std::vector<double> out = y.values();
    out.insert(out.end(), dx.values().begin(), dx.values().end());
    out.push_back(loss.scalar());
    return out;
  };
  const auto a = run();
  const auto b = run();
  REQUIRE(a.size() == b.size());
  for (size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
}

TEST_CASE("error handling") {
  Graph g;
  SUBCASE("shape mismatch names the op and both shapes") {
    Tensor a = g.leaf(Mat::full(2, 3, 1.0));
    Tensor b = g.leaf(Mat::full(3, 3, 1.0));
    try {
      add(a, b);
      FAIL("expected shape error");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::shape_mismatch);
      const std::string msg = e.what();
      CHECK(msg.find("add") != std::string::npos);
      CHECK(msg.find("2x3") != std::string::npos);
      CHECK(msg.find("3x3") != std::string::npos);
    }
  }
  SUBCASE("matmul conformance") {
    Tensor a = g.leaf(Mat::full(2, 3, 1.0));
    Tensor b = g.leaf(Mat::full(2, 3, 1.0));
    CHECK_THROWS_AS(matmul(a, b), Error);
  }
  SUBCASE("non-finite output raises numeric overflow") {
    Tensor a = g.leaf(Mat::full(1, 1, 1000.0));
    try {
      ad::exp(a);
      FAIL("expected overflow");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::numeric_overflow);
    }
  }
  SUBCASE("grad requires scalar loss") {
    Tensor a = g.leaf(Mat::full(2, 2, 1.0));
    CHECK_THROWS_AS(grad1(a, a), Error);
  }
  SUBCASE("unreachable leaf yields zero gradient with warning flag") {
    Tensor a = g.leaf(Mat::full(1, 1, 2.0));
    Tensor b = g.leaf(Mat::full(2, 2, 3.0));
    Tensor loss = sum_all(mul(a, a));
    const Tensor wrt[2] = {a, b};
    auto gs = grad(loss, std::span<const Tensor>(wrt, 2));
    CHECK(gs.reached[0] == 1);
    CHECK(gs.reached[1] == 0);
    for (double v : gs.tensors[1].values()) CHECK(v == 0.0);
    CHECK_FALSE(gs.all_reached());
  }
}
