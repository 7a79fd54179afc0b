#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <limits>

#include "oracles.hpp"
#include "support.hpp"

using namespace skmae;
using testing_support::grad_vec;
using testing_support::random_tensor;
using testing_support::to_vec;
using TD = Tensor<double>;

namespace {

constexpr double kStep = 1e-6;
constexpr double kTol = 1e-4;
constexpr int kInstances = 10;

// Weighted sum so every output coordinate has a distinct sensitivity.
TD weighted_sum(const TD& y, std::uint64_t seed) {
    Rng rng(seed);
    return sum(mul(y, random_tensor(y.shape(), rng)));
}

double check_unary(const std::function<TD(const TD&)>& op, const Shape& shape, std::uint64_t seed, double lo = -1.0,
                   double hi = 1.0) {
    Rng rng(seed);
    TD x = random_tensor(shape, rng, lo, hi);
    return finite_difference_check<double>([&](const TD& v) { return weighted_sum(op(v), seed + 1000); }, x, kStep);
}

}  // namespace

TEST(Primitives, MatmulIdentityReturnsOperand) {
    Rng rng(1);
    TD a = random_tensor({3, 3}, rng);
    TD eye = TD::from_data({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
    EXPECT_EQ(to_vec(matmul(eye, a)), to_vec(a));
}

TEST(Primitives, ReluDefinition) {
    EXPECT_EQ(to_vec(relu(TD::from_data({3}, {-1, 0, 2}))), (std::vector<double>{0, 0, 2}));
}

TEST(Primitives, L2NormOfThreeFour) { EXPECT_DOUBLE_EQ(l2norm(TD::from_data({2}, {3, 4})).item(), 5.0); }

TEST(Primitives, ElementwiseValues) {
    TD a = TD::from_data({2}, {1, 4});
    TD b = TD::from_data({2}, {2, 8});
    EXPECT_EQ(to_vec(add(a, b)), (std::vector<double>{3, 12}));
    EXPECT_EQ(to_vec(sub(a, b)), (std::vector<double>{-1, -4}));
    EXPECT_EQ(to_vec(mul(a, b)), (std::vector<double>{2, 32}));
    EXPECT_EQ(to_vec(div(a, b)), (std::vector<double>{0.5, 0.5}));
    EXPECT_EQ(to_vec(pow_scalar(a, 0.5)), (std::vector<double>{1, 2}));
    EXPECT_DOUBLE_EQ(log(TD::from_data({1}, {std::exp(2.0)})).item(), 2.0);
}

TEST(Primitives, ReductionsOverChosenAxes) {
    TD x = TD::from_data({2, 3}, {1, 2, 3, 4, 5, 6});
    EXPECT_EQ(to_vec(sum(x, 0)), (std::vector<double>{5, 7, 9}));
    EXPECT_EQ(to_vec(sum(x, 1)), (std::vector<double>{6, 15}));
    EXPECT_EQ(sum(x, 1, true).shape(), (Shape{2, 1}));
    EXPECT_EQ(to_vec(mean(x, -1)), (std::vector<double>{2, 5}));
    EXPECT_DOUBLE_EQ(mean(x).item(), 3.5);
}

TEST(Primitives, ConcatGatherScatter) {
    TD a = TD::from_data({2, 1}, {1, 2});
    TD b = TD::from_data({2, 2}, {3, 4, 5, 6});
    EXPECT_EQ(to_vec(concat<double>({a, b}, 1)), (std::vector<double>{1, 3, 4, 2, 5, 6}));
    EXPECT_EQ(to_vec(index_select(b, 0, {1, 0, 1})), (std::vector<double>{5, 6, 3, 4, 5, 6}));
    TD put = index_put(b, 0, {1}, TD::from_data({1, 2}, {9, 9}));
    EXPECT_EQ(to_vec(put), (std::vector<double>{3, 4, 9, 9}));
}

TEST(Primitives, SoftmaxRowsSumToOne) {
    Rng rng(3);
    TD p = softmax(random_tensor({4, 5}, rng, -5, 5));
    for (std::size_t r = 0; r < 4; ++r) {
        double s = 0;
        for (std::size_t c = 0; c < 5; ++c) s += p.data()[r * 5 + c];
        EXPECT_NEAR(s, 1.0, 1e-12);
    }
}

TEST(Primitives, PreluUsesSlopeForNegatives) {
    TD y = prelu(TD::from_data({3}, {-2, 0.5, 3}), TD::from_data({1}, {0.25}));
    EXPECT_EQ(to_vec(y), (std::vector<double>{-0.5, 0.5, 3}));
}

TEST(Broadcasting, TrailingAxisAlignment) {
    TD x = TD::from_data({2, 3}, {1, 2, 3, 4, 5, 6});
    TD row = TD::from_data({3}, {10, 20, 30});
    EXPECT_EQ(to_vec(add(x, row)), (std::vector<double>{11, 22, 33, 14, 25, 36}));
    TD col = TD::from_data({2, 1}, {100, 200});
    EXPECT_EQ(to_vec(add(x, col)), (std::vector<double>{101, 102, 103, 204, 205, 206}));
}

TEST(Broadcasting, MismatchNamesBothShapes) {
    TD a = TD::zeros({2, 3});
    TD b = TD::zeros({2});
    try {
        add(a, b);
        FAIL() << "expected ShapeError";
    } catch (const ShapeError& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("[2, 3]"), std::string::npos) << msg;
        EXPECT_NE(msg.find("[2]"), std::string::npos) << msg;
    }
    EXPECT_THROW(matmul(TD::zeros({2, 3}), TD::zeros({2, 3})), ShapeError);
    EXPECT_THROW(reshape(TD::zeros({2, 3}), {4}), ShapeError);
}

TEST(Finiteness, NonFiniteResultsAreRejected) {
    EXPECT_THROW(log(TD::from_data({1}, {0.0})), NumericError);
    EXPECT_THROW(div(TD::from_data({1}, {1.0}), TD::from_data({1}, {0.0})), NumericError);
    EXPECT_THROW(TD::from_data({1}, {std::numeric_limits<double>::quiet_NaN()}), NumericError);
    EXPECT_THROW(pow_scalar(TD::from_data({1}, {-1.0}), 0.5), NumericError);
}

TEST(Backward, SumOfSquares) {
    TD w = TD::from_data({2}, {1, 2}, true);
    sum(mul(w, w)).backward();
    EXPECT_EQ(grad_vec(w), (std::vector<double>{2, 4}));
}

TEST(Backward, LinearMapGivesConstant) {
    TD w = TD::from_data({3}, {1, -2, 5}, true);
    TD c = TD::from_data({3}, {0.5, 7, -3});
    sum(mul(w, c)).backward();
    EXPECT_EQ(grad_vec(w), to_vec(c));
}

TEST(Backward, NonScalarLossRejected) {
    TD w = TD::from_data({2}, {1, 2}, true);
    EXPECT_THROW(mul(w, w).backward(), ShapeError);
}

TEST(Backward, GradientsAccumulateUntilZeroed) {
    Rng rng(5);
    TD w = random_tensor({4, 3}, rng, -1, 1, true);
    TD x = random_tensor({2, 4}, rng);
    auto loss = [&] { return sum(pow_scalar(matmul(x, w), 2.0)); };
    loss().backward();
    const auto once = grad_vec(w);
    loss().backward();
    const auto twice = grad_vec(w);
    for (std::size_t i = 0; i < once.size(); ++i) EXPECT_DOUBLE_EQ(twice[i], 2.0 * once[i]);
    w.zero_grad();
    EXPECT_FALSE(w.has_grad());
    loss().backward();
    EXPECT_EQ(grad_vec(w), once);
}

TEST(Backward, SharedSubexpressionVisitedOnce) {
    TD w = TD::from_data({1}, {3}, true);
    TD y = mul(w, w);     // 9
    TD z = add(y, y);     // 18, y used twice
    sum(mul(z, y)).backward();  // 2 w^4 -> 8 w^3 = 216
    EXPECT_DOUBLE_EQ(w.grad()[0], 216.0);
}

TEST(Backward, NoGradGuardRecordsNothing) {
    TD w = TD::from_data({2}, {1, 2}, true);
    NoGradGuard guard;
    TD y = sum(mul(w, w));
    EXPECT_FALSE(y.requires_grad());
}

TEST(FiniteDifference, SumOfSquaresClosedForm) {
    TD x = TD::from_data({3}, {1, 2, 3});
    const double err = finite_difference_check<double>([](const TD& v) { return sum(mul(v, v)); }, x, kStep);
    EXPECT_LT(err, 1e-8);
}

TEST(FiniteDifference, ConstantFunctionHasZeroError) {
    TD x = TD::from_data({3}, {1, 2, 3});
    const double err = finite_difference_check<double>([](const TD&) { return TD::scalar(4.0); }, x, kStep);
    EXPECT_EQ(err, 0.0);
}

TEST(FiniteDifference, NonFiniteValueRaises) {
    TD x = TD::from_data({1}, {0.0});
    // log(x^2) is -inf at the base point.
    EXPECT_THROW(finite_difference_check<double>([](const TD& v) { return sum(log(mul(v, v))); }, x, kStep),
                 NumericError);
}

TEST(FiniteDifference, GinLayerThenSum) {
    Rng rng(11);
    const auto layout = build_coco17_layout();
    const Adjacency a = raw_adjacency(layout);
    GinLayer<double> layer({Backbone::GIN, 8, 8, Activation::PReLU, 1}, rng);
    TD h = random_tensor({17, 8}, rng);
    const double err = finite_difference_check<double>([&](const TD& v) { return sum(gin_forward(layer, v, a)); }, h, kStep);
    EXPECT_LT(err, kTol);
}

// Every primitive, ten random instances each.
class PrimitiveGradient : public ::testing::TestWithParam<int> {};

TEST_P(PrimitiveGradient, ElementwiseAndShapeOps) {
    const std::uint64_t s = 100 + static_cast<std::uint64_t>(GetParam());
    Rng rng(s);
    TD other = random_tensor({3, 4}, rng, 0.5, 2.0);
    TD row = random_tensor({4}, rng);
    EXPECT_LT(check_unary([&](const TD& x) { return add(x, other); }, {3, 4}, s), kTol);
    EXPECT_LT(check_unary([&](const TD& x) { return sub(other, x); }, {3, 4}, s), kTol);
    EXPECT_LT(check_unary([&](const TD& x) { return mul(x, other); }, {3, 4}, s), kTol);
    EXPECT_LT(check_unary([&](const TD& x) { return div(other, x); }, {3, 4}, s, 0.5, 2.0), kTol);
    EXPECT_LT(check_unary([&](const TD& x) { return div(x, other); }, {3, 4}, s), kTol);
    EXPECT_LT(check_unary([&](const TD& x) { return add(x, row); }, {3, 4}, s), kTol);
    EXPECT_LT(check_unary([&](const TD& x) { return mul(other, x); }, {4}, s), kTol);  // broadcast operand
    EXPECT_LT(check_unary([&](const TD& x) { return mul(other, x); }, {3, 1}, s), kTol);
    EXPECT_LT(check_unary([](const TD& x) { return pow_scalar(x, 2.0); }, {3, 4}, s), kTol);
    EXPECT_LT(check_unary([](const TD& x) { return pow_scalar(x, 2.5); }, {3, 4}, s, 0.2, 2.0), kTol);
    EXPECT_LT(check_unary([](const TD& x) { return log(x); }, {3, 4}, s, 0.2, 3.0), kTol);
    EXPECT_LT(check_unary([](const TD& x) { return relu(x); }, {3, 4}, s), kTol);
    EXPECT_LT(check_unary([](const TD& x) { return leaky_relu(x, 0.2); }, {3, 4}, s), kTol);
    EXPECT_LT(check_unary([](const TD& x) { return prelu(x, TD::from_data({1}, {0.3})); }, {3, 4}, s), kTol);
    EXPECT_LT(check_unary([](const TD& x) { return reshape(x, {4, 3}); }, {3, 4}, s), kTol);
    EXPECT_LT(check_unary([](const TD& x) { return broadcast_to(x, {2, 3, 4}); }, {3, 4}, s), kTol);
    EXPECT_LT(check_unary([](const TD& x) { return sum(x, 0); }, {3, 4}, s), kTol);
    EXPECT_LT(check_unary([](const TD& x) { return mean(x, 1, true); }, {3, 4}, s), kTol);
    EXPECT_LT(check_unary([](const TD& x) { return sum(x); }, {3, 4}, s), kTol);
    EXPECT_LT(check_unary([&](const TD& x) { return concat<double>({x, other, x}, 0); }, {3, 4}, s), kTol);
    EXPECT_LT(check_unary([&](const TD& x) { return concat<double>({other, x}, 1); }, {3, 2}, s), kTol);
    EXPECT_LT(check_unary([](const TD& x) { return index_select(x, 0, {2, 0, 2}); }, {3, 4}, s), kTol);
    EXPECT_LT(check_unary([](const TD& x) { return index_select(x, 1, {3, 1}); }, {3, 4}, s), kTol);
    EXPECT_LT(check_unary([&](const TD& x) { return index_put(other, 0, {1}, x); }, {1, 4}, s), kTol);
    EXPECT_LT(check_unary([&](const TD& x) { return index_put(x, 1, {0, 2}, index_select(other, 1, {0, 1})); }, {3, 4}, s),
              kTol);
    EXPECT_LT(check_unary([](const TD& x) { return l2norm(x); }, {3, 4}, s), kTol);
}

TEST_P(PrimitiveGradient, MatmulAndSoftmaxFamily) {
    const std::uint64_t s = 200 + static_cast<std::uint64_t>(GetParam());
    Rng rng(s);
    TD b = random_tensor({4, 5}, rng);
    TD batched = random_tensor({2, 4, 5}, rng);
    TD left = random_tensor({2, 3}, rng);
    EXPECT_LT(check_unary([&](const TD& x) { return matmul(x, b); }, {3, 4}, s), kTol);
    EXPECT_LT(check_unary([&](const TD& x) { return matmul(left, x); }, {3, 4}, s), kTol);
    EXPECT_LT(check_unary([&](const TD& x) { return matmul(x, batched); }, {3, 4}, s), kTol);  // shared left
    EXPECT_LT(check_unary([&](const TD& x) { return matmul(x, b); }, {2, 3, 4}, s), kTol);     // shared right
    EXPECT_LT(check_unary([&](const TD& x) { return matmul(x, batched); }, {2, 3, 4}, s), kTol);
    EXPECT_LT(check_unary([](const TD& x) { return softmax(x); }, {3, 4}, s, -3, 3), kTol);
    EXPECT_LT(check_unary([](const TD& x) { return log_softmax(x); }, {3, 4}, s, -3, 3), kTol);
    auto mask = std::make_shared<const std::vector<std::uint8_t>>(std::vector<std::uint8_t>{1, 0, 1, 1, 1, 1, 0, 1, 0});
    EXPECT_LT(check_unary([&](const TD& x) { return masked_softmax(x, mask); }, {2, 3, 3}, s, -3, 3), kTol);
}

TEST_P(PrimitiveGradient, PreluSlope) {
    Rng rng(300 + static_cast<std::uint64_t>(GetParam()));
    TD x = random_tensor({3, 4}, rng);
    TD slope = TD::from_data({1}, {0.25}, true);
    const double err = finite_difference_check<double>([&] { return weighted_sum(prelu(x, slope), 7); }, slope, kStep);
    EXPECT_LT(err, kTol);
}

INSTANTIATE_TEST_SUITE_P(TenInstances, PrimitiveGradient, ::testing::Range(0, kInstances));

TEST(MaskedSoftmax, ExcludedEntriesAreExactlyZero) {
    auto mask = std::make_shared<const std::vector<std::uint8_t>>(std::vector<std::uint8_t>{1, 0, 1, 1});
    TD p = masked_softmax(TD::from_data({2, 2}, {0.3, 5.0, 1.0, 1.0}), mask);
    EXPECT_EQ(p.data()[1], 0.0);
    EXPECT_DOUBLE_EQ(p.data()[0], 1.0);
    EXPECT_DOUBLE_EQ(p.data()[2], 0.5);
}

TEST(Determinism, IdenticalInputsGiveBitIdenticalValuesAndGradients) {
    auto run = [] {
        Rng rng(42);
        GinLayer<float> layer({Backbone::GIN, 8, 8, Activation::PReLU, 1}, rng);
        Tensor<float> h = random_tensor<float>({4, 17, 8}, rng);
        const auto g = GraphContext<float>::from_layout(build_coco17_layout());
        Tensor<float> y = layer.forward(h, g);
        sum(mul(y, y)).backward();
        return std::make_pair(to_vec(y), grad_vec(layer.lin1.weight));
    };
    const auto a = run();
    const auto b = run();
    EXPECT_EQ(a.first, b.first);
    EXPECT_EQ(a.second, b.second);
}

TEST(Precision, FloatAndDoubleAgree) {
    Rng r1(9), r2(9);
    Tensor<float> xf = random_tensor<float>({5, 6}, r1);
    TD xd = random_tensor<double>({5, 6}, r2);
    const auto yf = to_vec(softmax(xf));
    const auto yd = to_vec(softmax(xd));
    for (std::size_t i = 0; i < yf.size(); ++i) EXPECT_NEAR(yf[i], yd[i], 1e-6);
}

TEST(Rng, DerivedStreamsAreReproducibleAndDistinct) {
    Rng a = Rng::derive(1, 2, 3), b = Rng::derive(1, 2, 3), c = Rng::derive(1, 2, 4);
    const auto va = a.next_u64();
    EXPECT_EQ(va, b.next_u64());
    EXPECT_NE(va, c.next_u64());
    Rng u(0);
    for (int i = 0; i < 1000; ++i) {
        const auto k = u.below(7);
        EXPECT_LT(k, 7u);
        const double x = u.uniform();
        EXPECT_GE(x, 0.0);
        EXPECT_LT(x, 1.0);
    }
}
