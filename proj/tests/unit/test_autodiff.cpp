#include <gtest/gtest.h>

#include <cmath>

#include "../support/suite.hpp"

using namespace fewrel;
using fewrel::testing::random_tensor;

namespace {

std::vector<double> grad_of(const Tensor& x, const std::function<Tensor(Tape&, const Tensor&)>& f) {
  Tape tape;
  Tensor w = tape.watch(x);
  tape.backward(f(tape, w));
  return tape.grad(w);
}

}  // namespace

TEST(Tensor, RejectsInconsistentShape) {
  EXPECT_THROW(Tensor(Shape{2, 2}, {1.0, 2.0, 3.0}), ShapeError);
  EXPECT_NO_THROW(Tensor::matrix(2, 3, std::vector<double>(6, 0.0)));
}

TEST(Tensor, NonFiniteValuesRaiseAtOpBoundary) {
  Tape tape;
  Tensor big = tape.watch(Tensor::vector({1e308, 1e308}));
  EXPECT_THROW(ad::add(tape, big, big), NonFiniteError);
}

TEST(Matmul, IdentityAndDotProduct) {
  Tape t;
  const Tensor m = Tensor::matrix(2, 2, {1, 2, 3, 4});
  EXPECT_EQ(ad::matmul(t, Tensor::matrix(2, 2, {1, 0, 0, 1}), m).data, m.data);
  EXPECT_EQ(ad::matmul(t, Tensor::matrix(1, 2, {1, 2}), Tensor::matrix(2, 1, {3, 4})).data,
            std::vector<double>{11});
  EXPECT_THROW(ad::matmul(t, Tensor::matrix(2, 3, std::vector<double>(6)), m), ShapeError);
}

TEST(Conv1d, ZeroInputGivesZeroOutput) {
  Tape t;
  RngStream rng(1);
  const Tensor out = ad::conv1d(t, Tensor::zeros({5, 3}), random_tensor({4, 9}, rng), Tensor::zeros({4}), 3);
  for (double v : out.data) EXPECT_EQ(v, 0.0);
}

TEST(Conv1d, WindowOneIdentityKernelCopiesInput) {
  Tape t;
  RngStream rng(2);
  const Tensor x = random_tensor({4, 3}, rng);
  const Tensor k = Tensor::matrix(3, 3, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  EXPECT_EQ(ad::conv1d(t, x, k, Tensor::zeros({3}), 1).data, x.data);
}

TEST(Conv1d, MatchesNaiveTripleLoop) {
  const std::size_t L = 7, d = 3, w = 3, F = 5;
  RngStream rng(3);
  const Tensor x = random_tensor({L, d}, rng), k = random_tensor({F, w * d}, rng), b = random_tensor({F}, rng);
  Tape t;
  const Tensor out = ad::conv1d(t, x, k, b, w);
  const long half = static_cast<long>(w / 2);
  double max_diff = 0.0;
  for (std::size_t i = 0; i < L; ++i)
    for (std::size_t f = 0; f < F; ++f) {
      double acc = b.data[f];
      for (std::size_t o = 0; o < w; ++o) {
        const long src = static_cast<long>(i) + static_cast<long>(o) - half;
        if (src < 0 || src >= static_cast<long>(L)) continue;
        for (std::size_t c = 0; c < d; ++c)
          acc += k.data[f * w * d + o * d + c] * x.data[static_cast<std::size_t>(src) * d + c];
      }
      max_diff = std::max(max_diff, std::abs(acc - out.at(i, f)));
    }
  EXPECT_LT(max_diff, 1e-12);
}

TEST(Conv1d, RejectsEvenOrOversizedWindow) {
  Tape t;
  EXPECT_THROW(ad::conv1d(t, Tensor::zeros({3, 2}), Tensor::zeros({1, 4}), Tensor::zeros({1}), 2), ShapeError);
  EXPECT_THROW(ad::conv1d(t, Tensor::zeros({2, 1}), Tensor::zeros({1, 7}), Tensor::zeros({1}), 7), ShapeError);
}

TEST(MaxOverTime, RoutesGradientToMaxRow) {
  const Tensor x = Tensor::matrix(3, 1, {1, 5, 3});
  Tape t;
  EXPECT_EQ(ad::max_over_time(t, x).data, std::vector<double>{5});
  EXPECT_EQ(grad_of(x, [](Tape& tp, const Tensor& v) { return ad::sum(tp, ad::max_over_time(tp, v)); }),
            (std::vector<double>{0, 1, 0}));
  const Tensor row = Tensor::matrix(1, 3, {4, -1, 2});
  EXPECT_EQ(ad::max_over_time(t, row).data, row.data);
}

TEST(MaxOverTime, MatchesColumnScan) {
  RngStream rng(4);
  const Tensor x = random_tensor({6, 4}, rng);
  Tape t;
  const Tensor m = ad::max_over_time(t, x);
  for (std::size_t f = 0; f < 4; ++f) {
    double best = x.at(0, f);
    for (std::size_t i = 1; i < 6; ++i) best = std::max(best, x.at(i, f));
    EXPECT_EQ(m.data[f], best);
  }
  EXPECT_THROW(ad::max_over_time(t, Tensor::zeros({0, 3})), ShapeError);
}

TEST(EmbeddingLookup, GatherAndScatterCounts) {
  RngStream rng(5);
  const Tensor table = random_tensor({7, 2}, rng);
  Tape t;
  const std::vector<int> twice{0, 0};
  const Tensor rows = ad::embedding_lookup(t, table, twice);
  EXPECT_EQ(rows.at(0, 0), table.at(0, 0));
  EXPECT_EQ(rows.at(1, 1), table.at(0, 1));

  const std::vector<int> ids{2, 2, 5};
  const auto g = grad_of(table, [&](Tape& tp, const Tensor& v) { return ad::sum(tp, ad::embedding_lookup(tp, v, ids)); });
  for (std::size_t r = 0; r < 7; ++r)
    for (std::size_t c = 0; c < 2; ++c) EXPECT_EQ(g[r * 2 + c], r == 2 ? 2.0 : r == 5 ? 1.0 : 0.0);

  const std::vector<int> bad{7};
  EXPECT_THROW(ad::embedding_lookup(t, table, bad), std::out_of_range);
}

TEST(Elementwise, ReluValuesAndMask) {
  const Tensor x = Tensor::vector({-1, 0, 2});
  Tape t;
  EXPECT_EQ(ad::relu(t, x).data, (std::vector<double>{0, 0, 2}));
  EXPECT_EQ(grad_of(x, [](Tape& tp, const Tensor& v) { return ad::sum(tp, ad::relu(tp, v)); }),
            (std::vector<double>{0, 0, 1}));
}

TEST(Elementwise, TanhAtZero) {
  const Tensor x = Tensor::vector({0.0});
  Tape t;
  EXPECT_EQ(ad::tanh(t, x).data[0], 0.0);
  EXPECT_EQ(grad_of(x, [](Tape& tp, const Tensor& v) { return ad::sum(tp, ad::tanh(tp, v)); })[0], 1.0);
}

TEST(Elementwise, ShapeMismatchIsAnError) {
  Tape t;
  EXPECT_THROW(ad::add(t, Tensor::zeros({2}), Tensor::zeros({3})), ShapeError);
  EXPECT_THROW(ad::mul(t, Tensor::zeros({2, 1}), Tensor::zeros({1, 2})), ShapeError);
}

TEST(MeanAxis, ValuesAndGradient) {
  Tape t;
  EXPECT_EQ(ad::mean_axis(t, Tensor::vector({1, 2, 3}), 0).item(), 2.0);
  const Tensor single = Tensor::matrix(1, 3, {4, 5, 6});
  EXPECT_EQ(ad::mean_axis(t, single, 0).data, (std::vector<double>{4, 5, 6}));
  const auto g = grad_of(Tensor::vector({1, 2, 3, 4}),
                         [](Tape& tp, const Tensor& v) { return ad::mean_axis(tp, v, 0); });
  EXPECT_EQ(g, std::vector<double>(4, 0.25));
  EXPECT_THROW(ad::mean_axis(t, single, 2), ShapeError);
}

TEST(MinAxis, ValueArgminAndTieRule) {
  Tape t;
  const auto one = ad::min_axis(t, Tensor::vector({7}), 0);
  EXPECT_EQ(one.values.item(), 7.0);

  const Tensor x = Tensor::vector({3, 1, 2});
  const auto r = ad::min_axis(t, x, 0);
  EXPECT_EQ(r.values.item(), 1.0);
  EXPECT_EQ(r.argmin.front(), 1u);
  EXPECT_EQ(grad_of(x, [](Tape& tp, const Tensor& v) { return ad::min_axis(tp, v, 0).values; }),
            (std::vector<double>{0, 1, 0}));

  const Tensor tie = Tensor::vector({1, 1});
  EXPECT_EQ(ad::min_axis(t, tie, 0).argmin.front(), 0u);
  EXPECT_EQ(grad_of(tie, [](Tape& tp, const Tensor& v) { return ad::min_axis(tp, v, 0).values; }),
            (std::vector<double>{1, 0}));
  EXPECT_THROW(ad::min_axis(t, x, 1), ShapeError);
}

TEST(MinAxis, MatchesNaiveScan) {
  RngStream rng(6);
  const Tensor x = random_tensor({5, 7}, rng);
  Tape t;
  const auto r = ad::min_axis(t, x, 0);
  for (std::size_t c = 0; c < 7; ++c) {
    std::size_t arg = 0;
    for (std::size_t i = 1; i < 5; ++i)
      if (x.at(i, c) < x.at(arg, c)) arg = i;
    EXPECT_EQ(r.argmin[c], arg);
    EXPECT_EQ(r.values.data[c], x.at(arg, c));
  }
}

TEST(SoftmaxCrossEntropy, UniformSaturatedAndTail) {
  Tape t;
  EXPECT_NEAR(ad::softmax_cross_entropy(t, Tensor::vector(std::vector<double>(6, 0.3)), 4).item(), std::log(6.0),
              1e-15);
  EXPECT_LT(ad::softmax_cross_entropy(t, Tensor::vector({0, 1e6, 0}), 1).item(), 1e-12);
  // ln(1 + e^-25) evaluated in long double.
  const long double expected = std::log1p(std::exp(-25.0L));
  const double got = ad::softmax_cross_entropy(t, Tensor::vector({0, -25}), 0).item();
  EXPECT_NEAR(got, static_cast<double>(expected), 1e-25);
  EXPECT_THROW(ad::softmax_cross_entropy(t, Tensor::vector({0, 1}), 2), std::out_of_range);
}

TEST(GradReverse, IdentityForwardNegatedBackward) {
  const Tensor x = Tensor::vector({2, -3});
  Tape t;
  EXPECT_EQ(ad::grad_reverse(t, x, 1.0).data, x.data);
  const Tensor up = Tensor::vector({2, -3});
  auto upstream = [&](double lambda) {
    return grad_of(x, [&](Tape& tp, const Tensor& v) { return ad::sum(tp, ad::mul(tp, ad::grad_reverse(tp, v, lambda), up)); });
  };
  EXPECT_EQ(upstream(1.0), (std::vector<double>{-2, 3}));
  EXPECT_EQ(upstream(0.0), (std::vector<double>{0, 0}));
  EXPECT_EQ(upstream(0.5), (std::vector<double>{-1, 1.5}));
}

TEST(Backward, IdentityChainUnreachableAndRepeatable) {
  Tape t;
  Tensor x = t.watch(Tensor::scalar(3.0));
  Tensor p = t.watch(Tensor::scalar(-1.0));
  Tensor y = ad::scale(t, x, 1.0);
  t.backward(y);
  EXPECT_EQ(t.grad(x), std::vector<double>{1.0});
  EXPECT_EQ(t.grad(p), std::vector<double>{0.0});
  const auto first = t.grad(x);
  t.backward(y);
  EXPECT_EQ(t.grad(x), first);
  EXPECT_THROW(t.backward(t.watch(Tensor::vector({1, 2}))), ShapeError);
}

TEST(Backward, InputsPrecedeNodes) {
  RngStream rng(7);
  Tape t;
  Tensor a = t.watch(random_tensor({2, 3}, rng));
  Tensor b = t.watch(random_tensor({3, 2}, rng));
  ad::sum(t, ad::tanh(t, ad::matmul(t, a, b)));
  for (NodeId n = 0; n < t.size(); ++n)
    for (NodeId in : t.inputs(n)) EXPECT_LT(in, n);
}

TEST(Optimizer, ZeroRateSgdAndAdamReference) {
  ParamSet p;
  p.add("w", Tensor::vector({1.0, -2.0}));
  ParamSet g;
  g.add("w", Tensor::vector({2.0, 0.5}));

  OptimizerConfig zero;
  zero.algorithm = OptimizerAlgorithm::adam;
  zero.learning_rate = 0.0;
  OptimizerState s0{zero, 0, {}, {}};
  ParamSet q = p.snapshot();
  optimizer_step(s0, q, g);
  EXPECT_EQ(q, p);

  OptimizerConfig sgd;
  sgd.algorithm = OptimizerAlgorithm::sgd;
  sgd.learning_rate = 0.1;
  OptimizerState s1{sgd, 0, {}, {}};
  q = p.snapshot();
  optimizer_step(s1, q, g);
  EXPECT_DOUBLE_EQ(q["w"].data[0], 0.8);

  OptimizerConfig adam;
  adam.algorithm = OptimizerAlgorithm::adam;
  adam.learning_rate = 1e-3;
  OptimizerState s2{adam, 0, {}, {}};
  q = p.snapshot();
  optimizer_step(s2, q, g);
  for (std::size_t i = 0; i < 2; ++i) {
    const double gi = g["w"].data[i];
    const double m = (1 - 0.9) * gi, v = (1 - 0.999) * gi * gi;
    const double mhat = m / (1 - 0.9), vhat = v / (1 - 0.999);
    EXPECT_NEAR(q["w"].data[i], p["w"].data[i] - 1e-3 * mhat / (std::sqrt(vhat) + 1e-8), 1e-12);
  }
}

TEST(Optimizer, MomentumTwoSteps) {
  ParamSet p;
  p.add("w", Tensor::vector({1.0}));
  ParamSet g;
  g.add("w", Tensor::vector({1.0}));
  OptimizerConfig c;
  c.algorithm = OptimizerAlgorithm::sgd_momentum;
  c.learning_rate = 0.1;
  c.momentum = 0.9;
  OptimizerState s{c, 0, {}, {}};
  optimizer_step(s, p, g);
  optimizer_step(s, p, g);
  EXPECT_NEAR(p["w"].data[0], 1.0 - 0.1 * 1.0 - 0.1 * 1.9, 1e-15);
}

TEST(Optimizer, RejectsBadGradients) {
  ParamSet p;
  p.add("w", Tensor::vector({1.0, 2.0}));
  OptimizerState s{{}, 0, {}, {}};
  ParamSet wrong;
  wrong.add("w", Tensor::vector({1.0}));
  EXPECT_THROW(optimizer_step(s, p, wrong), ShapeError);
  ParamSet nan;
  nan.add("w", Tensor(Shape{2}, {std::nan(""), 0.0}));
  EXPECT_THROW(optimizer_step(s, p, nan), NonFiniteError);
}

TEST(GradCheck, LinearFunctionIsExact) {
  ParamSet p;
  RngStream rng(8);
  p.add("x", random_tensor({5}, rng));
  const Tensor w = random_tensor({5}, rng);
  const auto rep = finite_diff_check([&](Tape& t, const ParamSet& ps) { return ad::sum(t, ad::mul(t, ps["x"], w)); }, p);
  EXPECT_EQ(rep.checked, 5u);
  for (const auto& c : rep.coords) EXPECT_NEAR(c.analytic, c.numeric, 1e-10);
}

TEST(GradCheck, MinTieIsFlaggedAndSkipped) {
  ParamSet p;
  p.add("x", Tensor::vector({1.0, 1.0, 4.0}));
  const auto rep = finite_diff_check([](Tape& t, const ParamSet& ps) { return ad::min_axis(t, ps["x"], 0).values; }, p);
  EXPECT_EQ(rep.skipped, 2u);
  EXPECT_EQ(rep.checked, 1u);
  EXPECT_TRUE(rep.coords[0].skipped);
  EXPECT_TRUE(rep.coords[1].skipped);
}

TEST(GradCheck, PairLossAtUniqueArgmin) {
  ParamSet p;
  // Relation 1 holds the unique minimum of the "different" column.
  p.add("b", Tensor(Shape{2, 2, 2}, {0.8, 0.2, 0.6, 0.4, -1.0, 1.0, 0.0, 0.0}));
  const auto rep = finite_diff_check(
      [](Tape& t, const ParamSet& ps) { return ad::softmax_cross_entropy(t, pair_scores(t, ps["b"]).scores, 2); }, p);
  EXPECT_EQ(rep.skipped, 0u);
  EXPECT_TRUE(rep.passed(1e-4)) << rep.max_rel_error;
}

class GradientSuite : public ::testing::TestWithParam<std::size_t> {};

TEST_P(GradientSuite, CentralDifferencesAgree) {
  const auto cases = fewrel::testing::gradient_cases();
  const auto summary = fewrel::testing::run_gradient_case(cases[GetParam()], 10, 77);
  EXPECT_GT(summary.checked, 0u) << summary.name;
  EXPECT_LT(summary.max_rel_error, 1e-4) << summary.name;
}

INSTANTIATE_TEST_SUITE_P(AllOps, GradientSuite,
                         ::testing::Range<std::size_t>(0, fewrel::testing::gradient_cases().size()),
                         [](const auto& info) { return fewrel::testing::gradient_cases()[info.param].name; });

TEST(ParamSet, OrderedNamesAndDuplicates) {
  ParamSet p;
  p.add("b", Tensor::vector({1}));
  p.add("a", Tensor::vector({2, 3}));
  EXPECT_EQ(p.names(), (std::vector<std::string>{"b", "a"}));
  EXPECT_EQ(p.parameter_count(), 3u);
  EXPECT_THROW(p.add("a", Tensor::vector({0})), std::invalid_argument);
  EXPECT_THROW(p["missing"], std::out_of_range);
}
