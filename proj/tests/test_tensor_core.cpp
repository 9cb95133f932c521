#include <gtest/gtest.h>

#include "test_util.hpp"

using namespace rx;
using rxtest::oracle;
using rxtest::random_tensor;

namespace {

constexpr double kGradTol = 1e-4;

// Fixed random linear functional reducing any tensor to a scalar.
Var<double> weighted_sum(Var<double> v, std::uint64_t seed = 99) {
  auto& g = *v.graph;
  Var<double> f = v.shape().size() == 2 ? v : flatten(v);
  const std::int64_t d = f.shape()[1];
  auto w = g.constant(random_tensor<double>({1, d}, seed, -1, 1));
  auto b = g.constant(Tensor<double>({1}));
  const std::vector<int> zero(static_cast<std::size_t>(f.shape()[0]), 0);
  return pick_logit(dense(f, w, b), std::span<const int>(zero));
}

Tensor<double> unit_input(Shape s, std::uint64_t seed) { return random_tensor<double>(std::move(s), seed, 0.1, 0.9); }

void expect_gradcheck(const ScalarFn& f, const Tensor<double>& x, double tol = kGradTol) {
  const auto r = finite_difference_check(f, x, 1e-3);
  EXPECT_GT(r.checked, 0);
  EXPECT_LE(r.max_rel_error, tol) << "checked " << r.checked << ", skipped " << r.skipped_kinks;
}

void expect_near_vec(std::span<const double> got, const std::vector<double>& want, double tol) {
  ASSERT_EQ(got.size(), want.size());
  for (std::size_t i = 0; i < want.size(); ++i) EXPECT_NEAR(got[i], want[i], tol) << "at " << i;
}

template <typename T>
Tensor<T> run_unary(const Tensor<T>& x, const std::function<Var<T>(Var<T>)>& op) {
  Graph<T> g;
  return op(g.constant(x)).value();
}

}  // namespace

// --- forward examples ------------------------------------------------------

TEST(Ops, ReluExample) {
  auto y = run_unary<float>(Tensor<float>({3}, {-1, 0, 2}), [](Var<float> v) { return relu(v); });
  EXPECT_EQ(y.storage(), (std::vector<float>{0, 0, 2}));
}

TEST(Ops, DenseIdentity) {
  Graph<float> g;
  auto x = g.constant(Tensor<float>({1, 2}, {3, 5}));
  auto w = g.constant(Tensor<float>({2, 2}, {1, 0, 0, 1}));
  auto b = g.constant(Tensor<float>({2}));
  EXPECT_EQ(dense(x, w, b).value().storage(), (std::vector<float>{3, 5}));
}

TEST(Ops, PointwiseConvScales) {
  Graph<float> g;
  const auto xt = random_tensor<float>({2, 1, 4, 5}, 1);
  auto y = conv2d(g.constant(xt), g.constant(Tensor<float>({1, 1, 1, 1}, {2})), g.constant(Tensor<float>({1})));
  ASSERT_EQ(y.shape(), xt.shape());
  for (std::int64_t i = 0; i < xt.size(); ++i) EXPECT_EQ(y.value()[i], 2 * xt[i]);
}

TEST(Ops, ConvMatchesOracle) {
  const auto x = rxtest::wave({1, 2, 5, 5}, 0.91, 0.05, 0.4, 0.5);
  const auto w = rxtest::wave({3, 2, 3, 3}, 0.37, 0.1, 0.3);
  const auto b = rxtest::wave({3}, 0.37, 0.2, 0.1);
  for (auto [key, stride, pad] : {std::tuple{"conv_s1_p1", 1, 1}, std::tuple{"conv_s2_p0", 2, 0}}) {
    Graph<double> g;
    auto y = conv2d(g.constant(x), g.constant(w), g.constant(b), stride, pad);
    expect_near_vec(y.value().values(), rxtest::oracle_vec(oracle()[key]), 1e-12);
  }
}

TEST(Ops, SoftmaxCrossEntropyMatchesOracle) {
  const auto& o = oracle()["softmax_xent"];
  Graph<double> g;
  auto z = g.input(Tensor<double>({2, 4}, rxtest::oracle_vec(o["logits"])));
  const auto labels = o["labels"].get<std::vector<int>>();
  auto loss = softmax_cross_entropy(z, std::span<const int>(labels));
  EXPECT_NEAR(loss.value()[0], o["loss"].get<double>(), 1e-12);
  expect_near_vec(g.backward(loss).at(z).values(), rxtest::oracle_vec(o["grad"]), 1e-12);
}

TEST(Ops, SoftmaxCrossEntropyGradientAtEqualLogits) {
  Graph<double> g;
  auto z = g.input(Tensor<double>({1, 4}, 0.7));
  const int t = 2;
  auto loss = softmax_cross_entropy(z, std::span<const int>(&t, 1));
  EXPECT_NEAR(loss.value()[0], std::log(4.0), 1e-12);
  const auto gz = g.backward(loss).at(z);
  for (int j = 0; j < 4; ++j) EXPECT_NEAR(gz[j], 0.25 - (j == t ? 1.0 : 0.0), 1e-12);
}

TEST(Ops, L2DistanceZeroAtCoincidence) {
  Graph<double> g;
  const auto c = random_tensor<double>({2, 5}, 4);
  auto x = g.input(c);
  auto d = l2_distance(x, g.constant(c));
  EXPECT_EQ(d.value()[0], 0.0);
  const auto gx = g.backward(d).at(x);
  for (double v : gx.values()) EXPECT_EQ(v, 0.0);
}

TEST(Ops, PickLogitSumsSelected) {
  Graph<double> g;
  auto z = g.input(Tensor<double>({2, 3}, {1, 2, 3, 4, 5, 6}));
  const std::vector<int> idx{2, 0};
  auto y = pick_logit(z, std::span<const int>(idx));
  EXPECT_EQ(y.value()[0], 7.0);
  EXPECT_EQ(g.backward(y).at(z).storage(), (std::vector<double>{0, 0, 1, 1, 0, 0}));
}

TEST(Ops, PoolingForward) {
  const Tensor<double> x({1, 1, 2, 4}, {1, 5, 2, 2, 3, 0, 2, 8});
  EXPECT_EQ(run_unary<double>(x, [](Var<double> v) { return maxpool2d(v, 2); }).storage(),
            (std::vector<double>{5, 8}));
  EXPECT_EQ(run_unary<double>(x, [](Var<double> v) { return avgpool2d(v, 2); }).storage(),
            (std::vector<double>{2.25, 3.5}));
}

TEST(Ops, MaxpoolTieGoesToFirstIndex) {
  Graph<double> g;
  auto x = g.input(Tensor<double>({1, 1, 2, 2}, 1.0));
  auto y = maxpool2d(x, 2);
  const auto gx = g.backward(weighted_sum(y)).at(x);
  EXPECT_NE(gx[0], 0.0);
  EXPECT_EQ(gx[1], 0.0);
  EXPECT_EQ(gx[2], 0.0);
  EXPECT_EQ(gx[3], 0.0);
}

TEST(Ops, ReluSubgradientAtZeroIsZero) {
  Graph<double> g;
  auto x = g.input(Tensor<double>({1, 3}, {0, 1, -1}));
  const auto gx = g.backward(weighted_sum(relu(x))).at(x);
  EXPECT_EQ(gx[0], 0.0);
  EXPECT_NE(gx[1], 0.0);
  EXPECT_EQ(gx[2], 0.0);
}

// --- errors ----------------------------------------------------------------

TEST(Ops, ShapeMismatchNamesOpAndShapes) {
  Graph<float> g;
  auto x = g.constant(Tensor<float>({1, 3}));
  auto w = g.constant(Tensor<float>({2, 4}));
  auto b = g.constant(Tensor<float>({2}));
  try {
    dense(x, w, b);
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    const std::string m = e.what();
    EXPECT_NE(m.find("dense"), std::string::npos) << m;
    EXPECT_NE(m.find("[1,3]"), std::string::npos) << m;
    EXPECT_NE(m.find("[2,4]"), std::string::npos) << m;
  }
  EXPECT_THROW(add(g.constant(Tensor<float>({2})), g.constant(Tensor<float>({3}))), ShapeError);
  EXPECT_THROW(conv2d(g.constant(Tensor<float>({1, 2, 4, 4})), g.constant(Tensor<float>({1, 3, 3, 3})),
                      g.constant(Tensor<float>({1}))),
               ShapeError);
  EXPECT_THROW(maxpool2d(g.constant(Tensor<float>({1, 1, 1, 1})), 2), ShapeError);
  const int bad = 5;
  EXPECT_THROW(softmax_cross_entropy(g.constant(Tensor<float>({1, 3})), std::span<const int>(&bad, 1)), ShapeError);
  EXPECT_THROW(bilinear_resize(g.constant(Tensor<float>({1, 1, 2, 2})), 0, 3), ShapeError);
}

TEST(Ops, NonScalarSeedRejected) {
  Graph<double> g;
  auto x = g.input(Tensor<double>({2}, {1, 2}));
  EXPECT_THROW(g.backward(relu(x)), Error);
}

TEST(TensorType, ValueCountMustMatchShape) {
  EXPECT_THROW(Tensor<float>({2, 3}, std::vector<float>(5)), ShapeError);
  EXPECT_THROW(Tensor<float>(Shape{-1}), ShapeError);
  EXPECT_EQ(Tensor<float>({2, 3}).size(), 6);
}

TEST(TensorType, ForwardStaysFiniteOnFiniteInputs) {
  Graph<float> g;
  auto x = g.constant(random_tensor<float>({2, 3, 8, 8}, 5, -50, 50));
  auto y = conv2d(x, g.constant(random_tensor<float>({4, 3, 3, 3}, 6)), g.constant(Tensor<float>({4})), 1, 1);
  auto z = flatten(avgpool2d(relu(y), 2));
  EXPECT_TRUE(z.value().all_finite());
  const std::vector<int> lab{0, 1};
  auto logits = dense(z, g.constant(random_tensor<float>({3, 64}, 7, -5, 5)), g.constant(Tensor<float>({3})));
  EXPECT_TRUE(softmax_cross_entropy(logits, std::span<const int>(lab)).value().all_finite());
}

// --- graph structure -------------------------------------------------------

TEST(GraphStructure, InputsPrecedeEveryRecord) {
  Graph<double> g;
  auto x = g.input(unit_input({1, 2, 6, 6}, 1));
  auto y = weighted_sum(maxpool2d(relu(conv2d(x, g.constant(random_tensor<double>({3, 2, 3, 3}, 2)),
                                              g.constant(Tensor<double>({3})), 1, 1)),
                                  2));
  for (std::size_t id = 0; id < g.size(); ++id)
    for (int in : g.inputs(static_cast<int>(id))) EXPECT_LT(in, static_cast<int>(id));
  // Every node on a path from x to y receives a gradient buffer of its own shape.
  const auto grads = g.backward(y);
  for (std::size_t id = 0; id < g.size(); ++id) {
    if (!g.requires_grad(static_cast<int>(id))) continue;
    ASSERT_TRUE(grads.has(static_cast<int>(id))) << op_name(g.kind(static_cast<int>(id)));
    EXPECT_EQ(grads.at(static_cast<int>(id)).shape(), g.value(static_cast<int>(id)).shape());
  }
}

TEST(GraphStructure, NonRecordingGraphKeepsNoGradients) {
  Graph<double> g(false);
  auto x = g.input(Tensor<double>({1, 2}, {1, 2}));
  auto y = weighted_sum(x);
  EXPECT_FALSE(y.requires_grad());
  EXPECT_FALSE(g.backward(y).has(x));
}

// --- finite differences ----------------------------------------------------

TEST(GradCheck, QuadraticExample) {
  // sum(x^2) as the dot product of x with itself.
  const ScalarFn f = [](Graph<double>& g, Var<double> x) {
    const int zero = 0;
    return pick_logit(dense(x, x, g.constant(Tensor<double>({1}))), std::span<const int>(&zero, 1));
  };
  const Tensor<double> x({1, 2}, {1, 2});
  Graph<double> g;
  auto xv = g.input(x);
  const auto grad = g.backward(f(g, xv)).at(xv);
  EXPECT_NEAR(grad[0], 2.0, 1e-12);
  EXPECT_NEAR(grad[1], 4.0, 1e-12);
  EXPECT_LE(finite_difference_check(f, x, 1e-3).max_rel_error, 1e-6);
}

TEST(GradCheck, Conv2dInputWeightBias) {
  for (auto [stride, pad] : {std::pair{1, 1}, std::pair{2, 0}, std::pair{2, 2}}) {
    const auto w = unit_input({3, 2, 3, 3}, 10);
    const auto b = unit_input({3}, 11);
    const auto x = unit_input({2, 2, 5, 5}, 12);
    expect_gradcheck([&, s = stride, p = pad](Graph<double>& g, Var<double> v) {
      return weighted_sum(conv2d(v, g.constant(w), g.constant(b), s, p));
    }, x);
    expect_gradcheck([&, s = stride, p = pad](Graph<double>& g, Var<double> v) {
      return weighted_sum(conv2d(g.constant(x), v, g.constant(b), s, p));
    }, w);
    expect_gradcheck([&, s = stride, p = pad](Graph<double>& g, Var<double> v) {
      return weighted_sum(conv2d(g.constant(x), g.constant(w), v, s, p));
    }, b);
  }
}

TEST(GradCheck, Dense) {
  const auto x = unit_input({3, 7}, 20);
  const auto w = unit_input({4, 7}, 21);
  const auto b = unit_input({4}, 22);
  expect_gradcheck([&](Graph<double>& g, Var<double> v) { return weighted_sum(dense(v, g.constant(w), g.constant(b))); }, x);
  expect_gradcheck([&](Graph<double>& g, Var<double> v) { return weighted_sum(dense(g.constant(x), v, g.constant(b))); }, w);
  expect_gradcheck([&](Graph<double>& g, Var<double> v) { return weighted_sum(dense(g.constant(x), g.constant(w), v)); }, b);
}

TEST(GradCheck, ReluAndPools) {
  const auto x = unit_input({2, 3, 6, 6}, 30);
  // Shift so relu sees both signs.
  const ScalarFn relu_f = [](Graph<double>& g, Var<double> v) {
    return weighted_sum(relu(add(v, g.constant(Tensor<double>(v.shape(), -0.5)))));
  };
  expect_gradcheck(relu_f, x);
  expect_gradcheck([](Graph<double>&, Var<double> v) { return weighted_sum(maxpool2d(v, 2)); }, x);
  expect_gradcheck([](Graph<double>&, Var<double> v) { return weighted_sum(maxpool2d(v, 3, 2)); }, x);
  expect_gradcheck([](Graph<double>&, Var<double> v) { return weighted_sum(avgpool2d(v, 2)); }, x);
  expect_gradcheck([](Graph<double>&, Var<double> v) { return weighted_sum(avgpool2d(v, 4)); }, x);
}

TEST(GradCheck, FlattenAddScale) {
  const auto x = unit_input({2, 3, 2, 2}, 40);
  const auto c = unit_input({2, 3, 2, 2}, 41);
  expect_gradcheck([](Graph<double>&, Var<double> v) { return weighted_sum(flatten(v)); }, x);
  expect_gradcheck([&](Graph<double>& g, Var<double> v) { return weighted_sum(add(v, g.constant(c))); }, x);
  expect_gradcheck([](Graph<double>&, Var<double> v) { return weighted_sum(add(v, v)); }, x);
  expect_gradcheck([](Graph<double>&, Var<double> v) { return weighted_sum(scale(v, -2.5)); }, x);
}

TEST(GradCheck, L2DistanceBothArguments) {
  const auto a = unit_input({3, 6}, 50);
  const auto c = unit_input({3, 6}, 51);
  expect_gradcheck([&](Graph<double>& g, Var<double> v) { return l2_distance(v, g.constant(c)); }, a);
  expect_gradcheck([&](Graph<double>& g, Var<double> v) { return l2_distance(g.constant(a), v); }, c);
}

TEST(GradCheck, SoftmaxCrossEntropyAndPickLogit) {
  const auto z = unit_input({4, 5}, 60);
  const std::vector<int> lab{0, 4, 2, 2};
  expect_gradcheck([&](Graph<double>&, Var<double> v) { return softmax_cross_entropy(v, std::span<const int>(lab)); }, z);
  expect_gradcheck([&](Graph<double>&, Var<double> v) { return pick_logit(v, std::span<const int>(lab)); }, z);
  // Wider logit range than [0.1, 0.9].
  expect_gradcheck([&](Graph<double>&, Var<double> v) { return softmax_cross_entropy(scale(v, 6.0), std::span<const int>(lab)); },
                   z);
}

TEST(GradCheck, BilinearResizeAndPlace) {
  const auto x = unit_input({1, 2, 5, 6}, 70);
  for (auto [h, w] : {std::pair{8, 9}, std::pair{3, 4}, std::pair{5, 6}, std::pair{7, 2}})
    expect_gradcheck([h = h, w = w](Graph<double>&, Var<double> v) { return weighted_sum(bilinear_resize(v, h, w)); }, x);
  for (bool flip : {false, true}) {
    expect_gradcheck([flip](Graph<double>&, Var<double> v) { return weighted_sum(place(v, 7, 8, 1, 2, flip)); }, x);
    expect_gradcheck([flip](Graph<double>&, Var<double> v) { return weighted_sum(place(v, 4, 4, -1, -1, flip)); }, x);
  }
}

namespace {

// Random small CNN in double precision built straight from ops.
ScalarFn random_cnn(int variant) {
  return [variant](Graph<double>& g, Var<double> x) {
    const std::uint64_t s = 1000 + static_cast<std::uint64_t>(variant) * 17;
    auto p = [&](Shape sh, std::uint64_t k) { return g.constant(random_tensor<double>(std::move(sh), s + k, -0.6, 0.6)); };
    const std::vector<int> lab{1, 3};
    if (variant == 0) {
      auto h = maxpool2d(relu(conv2d(x, p({4, 2, 3, 3}, 1), p({4}, 2), 1, 1)), 2);
      h = relu(conv2d(h, p({5, 4, 3, 3}, 3), p({5}, 4), 1, 1));
      auto z = dense(flatten(h), p({4, 45}, 5), p({4}, 6));
      return softmax_cross_entropy(z, std::span<const int>(lab));
    }
    if (variant == 1) {
      auto h = avgpool2d(relu(conv2d(x, p({3, 2, 3, 3}, 1), p({3}, 2), 2, 1)), 3);
      auto f = relu(dense(flatten(h), p({6, 3}, 3), p({6}, 4)));
      auto z = dense(f, p({4, 6}, 5), p({4}, 6));
      return pick_logit(z, std::span<const int>(lab));
    }
    auto r = bilinear_resize(x, 7, 7);
    auto h = relu(conv2d(r, p({4, 2, 5, 5}, 1), p({4}, 2), 1, 2));
    h = maxpool2d(add(h, scale(h, 0.5)), 3, 2);
    auto rep = flatten(h);
    auto target = p({2, 36}, 3);
    return add(l2_distance(rep, target), scale(softmax_cross_entropy(dense(rep, p({4, 36}, 4), p({4}, 5)),
                                                                     std::span<const int>(lab)),
                                            0.3));
  };
}

}  // namespace

TEST(GradCheck, ComposedRandomNetworks) {
  for (int v = 0; v < 3; ++v) {
    SCOPED_TRACE(v);
    expect_gradcheck(random_cnn(v), unit_input({2, 2, 6, 6}, 80 + v));
  }
}

TEST(GradCheck, BackwardIsLinear) {
  const auto x = unit_input({2, 2, 6, 6}, 90);
  const double a = 0.75, b = -1.5;
  auto grad_of = [&](const ScalarFn& fn) {
    Graph<double> g;
    auto v = g.input(x);
    return g.backward(fn(g, v)).at(v);
  };
  const auto f = random_cnn(0), h = random_cnn(2);
  const auto ga = grad_of(f), gb = grad_of(h);
  const auto gc = grad_of([&](Graph<double>& g, Var<double> v) { return add(scale(f(g, v), a), scale(h(g, v), b)); });
  for (std::int64_t i = 0; i < x.size(); ++i) EXPECT_NEAR(gc[i], a * ga[i] + b * gb[i], 1e-5);
}

// --- Gaussian kernel and smoothing ----------------------------------------

TEST(Gaussian, SingleTap) {
  EXPECT_EQ(gaussian_kernel(1, 0.3).weights, std::vector<double>{1.0});
}

TEST(Gaussian, FlatLimit) {
  for (double w : gaussian_kernel(3, 1e6).weights) EXPECT_NEAR(w, 1.0 / 9, 1e-4);
}

TEST(Gaussian, MatchesOracle) {
  const auto k = gaussian_kernel(5, 1.0);
  const auto want = rxtest::oracle_vec(oracle()["gaussian_5_1"]);
  expect_near_vec(k.weights, want, 1e-15);
  EXPECT_NEAR(k.at(2, 2), 0.16210282163712664, 1e-15);
}

TEST(Gaussian, NormalizedAndSymmetric) {
  for (int size = 1; size <= 9; size += 2)
    for (double sigma : {0.5, 1.0, 2.0}) {
      const auto k = gaussian_kernel(size, sigma);
      double total = 0;
      for (double w : k.weights) total += w;
      EXPECT_NEAR(total, 1.0, 1e-6);
      for (int i = 0; i < size; ++i)
        for (int j = 0; j < size; ++j) {
          EXPECT_EQ(k.at(i, j), k.at(size - 1 - i, j));
          EXPECT_EQ(k.at(i, j), k.at(i, size - 1 - j));
          EXPECT_EQ(k.at(i, j), k.at(j, i));
        }
    }
}

TEST(Gaussian, RejectsBadParameters) {
  EXPECT_THROW(gaussian_kernel(4, 1.0), ValidationError);
  EXPECT_THROW(gaussian_kernel(0, 1.0), ValidationError);
  EXPECT_THROW(gaussian_kernel(3, 0.0), ValidationError);
}

TEST(Smoothing, ImpulseStampsKernel) {
  const auto k = gaussian_kernel(5, 1.0);
  Tensor<double> g({1, 9, 9});
  g[4 * 9 + 4] = 1;
  const auto s = smooth_gradient(g, k);
  for (int i = 0; i < 9; ++i)
    for (int j = 0; j < 9; ++j) {
      const bool inside = std::abs(i - 4) <= 2 && std::abs(j - 4) <= 2;
      EXPECT_DOUBLE_EQ(s[i * 9 + j], inside ? k.at(i - 2, j - 2) : 0.0);
    }
}

TEST(Smoothing, SingleTapIsIdentity) {
  const auto g = random_tensor<float>({2, 3, 5, 4}, 3);
  EXPECT_EQ(smooth_gradient(g, gaussian_kernel(1, 1.0)), g);
}

TEST(Smoothing, MatchesOracleField) {
  const auto field = rxtest::wave({1, 7, 7}, 0.7, 0.3, 1.0);
  const auto s = smooth_gradient(field, gaussian_kernel(5, 1.0));
  expect_near_vec(s.values(), rxtest::oracle_vec(oracle()["smooth_field_7x7"]["output"]), 1e-12);
}

TEST(Smoothing, MatchesNestedLoopConvolution) {
  const auto field = random_tensor<double>({2, 7, 7}, 8);
  const auto k = gaussian_kernel(3, 0.8);
  const auto s = smooth_gradient(field, k);
  for (int c = 0; c < 2; ++c)
    for (int i = 0; i < 7; ++i)
      for (int j = 0; j < 7; ++j) {
        double acc = 0;
        for (int a = 0; a < 3; ++a)
          for (int b = 0; b < 3; ++b) {
            const int y = i + a - 1, x = j + b - 1;
            if (y >= 0 && y < 7 && x >= 0 && x < 7) acc += k.at(a, b) * field[(c * 7 + y) * 7 + x];
          }
        EXPECT_NEAR(s[(c * 7 + i) * 7 + j], acc, 1e-12);
      }
}

TEST(Smoothing, ConstantFieldAttenuatesAtEdges) {
  const auto k = gaussian_kernel(5, 1.0);
  const double c = 0.8;
  const auto s = smooth_gradient(Tensor<double>({1, 1, 8, 8}, c), k);
  EXPECT_EQ(s.shape(), (Shape{1, 1, 8, 8}));
  for (int i = 0; i < 8; ++i)
    for (int j = 0; j < 8; ++j) {
      double mass = 0;
      for (int a = 0; a < 5; ++a)
        for (int b = 0; b < 5; ++b) {
          const int y = i + a - 2, x = j + b - 2;
          if (y >= 0 && y < 8 && x >= 0 && x < 8) mass += k.at(a, b);
        }
      EXPECT_NEAR(s[i * 8 + j], c * mass, 1e-12);
    }
  EXPECT_NEAR(s[3 * 8 + 3], c, 1e-12);
  EXPECT_LT(s[0], c);
}

// --- bilinear resize -------------------------------------------------------

namespace {

Tensor<double> resize(const Tensor<double>& x, std::int64_t h, std::int64_t w) {
  Graph<double> g(false);
  return bilinear_resize(g.constant(x), h, w).value();
}

// Scalar bilinear formula, align-corners=false, edge-clamped.
double bilinear_at(const Tensor<double>& x, std::int64_t i, std::int64_t j, std::int64_t oh, std::int64_t ow) {
  const std::int64_t h = x.dim(2), w = x.dim(3);
  auto src = [](std::int64_t o, std::int64_t in, std::int64_t out) {
    return std::max(0.0, (static_cast<double>(o) + 0.5) * static_cast<double>(in) / static_cast<double>(out) - 0.5);
  };
  const double sy = src(i, h, oh), sx = src(j, w, ow);
  const auto y0 = std::min<std::int64_t>(static_cast<std::int64_t>(sy), h - 1);
  const auto x0 = std::min<std::int64_t>(static_cast<std::int64_t>(sx), w - 1);
  const auto y1 = std::min(y0 + 1, h - 1), x1 = std::min(x0 + 1, w - 1);
  const double fy = sy - static_cast<double>(y0), fx = sx - static_cast<double>(x0);
  auto v = [&](std::int64_t a, std::int64_t b) { return x.at(0, 0, a, b); };
  return (1 - fy) * ((1 - fx) * v(y0, x0) + fx * v(y0, x1)) + fy * ((1 - fx) * v(y1, x0) + fx * v(y1, x1));
}

}  // namespace

TEST(Bilinear, IdenticalDimsBitIdentical) {
  const auto x = random_tensor<float>({2, 3, 5, 7}, 9);
  Graph<float> g;
  EXPECT_EQ(bilinear_resize(g.constant(x), 5, 7).value(), x);
}

TEST(Bilinear, ConstantStaysConstant) {
  const Tensor<double> x({1, 2, 3, 5}, 0.375);
  for (auto [h, w] : {std::pair{1, 1}, std::pair{7, 2}, std::pair{13, 11}}) {
    const auto y = resize(x, h, w);
    for (double v : y.values()) EXPECT_NEAR(v, 0.375, 1e-15);
  }
}

TEST(Bilinear, TwoByTwoToTwoByFour) {
  const Tensor<double> x({1, 1, 2, 2}, {0, 1, 0, 1});
  const auto y = resize(x, 2, 4);
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 4; ++j) EXPECT_DOUBLE_EQ(y[i * 4 + j], bilinear_at(x, i, j, 2, 4));
  EXPECT_EQ(y.storage(), (std::vector<double>{0, 0.25, 0.75, 1, 0, 0.25, 0.75, 1}));
  expect_near_vec(resize(Tensor<double>({1, 1, 2, 2}, {1, 2, 3, 4}), 2, 4).values(),
                  rxtest::oracle_vec(oracle()["bilinear_2x2_to_2x4"]), 1e-12);
}

TEST(Bilinear, MatchesOracles) {
  const auto x33 = rxtest::wave({1, 1, 3, 3}, 1.3, 0.2, 1.0);
  expect_near_vec(resize(x33, 5, 5).values(), rxtest::oracle_vec(oracle()["bilinear_3x3_to_5x5"]), 1e-12);
  expect_near_vec(resize(x33, 2, 2).values(), rxtest::oracle_vec(oracle()["bilinear_3x3_to_2x2"]), 1e-12);
  for (int i = 0; i < 5; ++i)
    for (int j = 0; j < 5; ++j) EXPECT_NEAR(resize(x33, 5, 5)[i * 5 + j], bilinear_at(x33, i, j, 5, 5), 1e-12);

  const auto& o = oracle()["bilinear_2x4x5_to_6x3"];
  Graph<double> g;
  auto x = g.input(rxtest::wave({1, 2, 4, 5}, 0.9, 0.1, 1.0));
  auto y = bilinear_resize(x, 6, 3);
  expect_near_vec(y.value().values(), rxtest::oracle_vec(o["output"]), 1e-12);
  auto wsum = g.constant(rxtest::wave({1, 2 * 6 * 3}, 0.5, 0.7, 1.0));
  const int zero = 0;
  auto loss = pick_logit(dense(flatten(y), wsum, g.constant(Tensor<double>({1}))), std::span<const int>(&zero, 1));
  expect_near_vec(g.backward(loss).at(x).values(), rxtest::oracle_vec(o["grad_weighted_sum"]), 1e-12);
}

TEST(Bilinear, StaysWithinInputRange) {
  for (std::uint64_t s = 0; s < 20; ++s) {
    const auto x = random_tensor<double>({1, 2, 4 + static_cast<std::int64_t>(s % 5), 6}, s, -3, 2);
    const auto [lo, hi] = std::minmax_element(x.storage().begin(), x.storage().end());
    const auto y = resize(x, 3 + static_cast<std::int64_t>(s), 11);
    for (double v : y.values()) {
      EXPECT_GE(v, *lo - 1e-12);
      EXPECT_LE(v, *hi + 1e-12);
    }
  }
}

TEST(Bilinear, RoundTripOnSmoothImages) {
  const std::int64_t n = 32;
  Tensor<double> x({1, 3, n, n});
  for (int c = 0; c < 3; ++c)
    for (std::int64_t i = 0; i < n; ++i)
      for (std::int64_t j = 0; j < n; ++j)
        x.at(0, c, i, j) = 0.5 + 0.4 * std::sin(0.15 * static_cast<double>(i) + c) * std::cos(0.1 * static_cast<double>(j));
  for (std::int64_t m : {24, 28, 36, 42}) {
    const auto back = resize(resize(x, m, m), n, n);
    double err = 0;
    for (std::int64_t i = 0; i < x.size(); ++i) err = std::max(err, std::abs(back[i] - x[i]));
    EXPECT_LE(err, 0.05) << m;
  }
}

TEST(Determinism, RepeatedForwardBackwardBitIdentical) {
  const auto x = unit_input({2, 2, 6, 6}, 95);
  auto run = [&] {
    Graph<double> g;
    auto v = g.input(x);
    auto y = random_cnn(2)(g, v);
    return std::pair{y.value(), g.backward(y).at(v)};
  };
  const auto a = run(), b = run();
  EXPECT_EQ(a.first, b.first);
  EXPECT_EQ(a.second, b.second);
}
