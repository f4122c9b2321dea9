#include <gtest/gtest.h>

#include <cmath>

#include "survival/agent.hpp"
#include "survival/nn.hpp"

using namespace survival;
using namespace survival::nn;

namespace {

Tensor<double> random_tensor(Shape shape, Rng& rng, double scale = 1.0)
{
    Tensor<double> t(std::move(shape));
    for (auto& v : t.values()) v = (2.0 * rng.uniform() - 1.0) * scale;
    return t;
}

template <class T>
void set_all(const NamedParams<T>& params, T value)
{
    for (const auto& [name, p] : params) {
        auto v = p;
        v.mutable_value().fill(value);
    }
}

} // namespace

TEST(Cnn, ShapesFollowValidConvolutionArithmetic)
{
    Rng rng(1);
    auto cnn = CnnParams<float>::init(rng);
    auto images = constant(Tensor<float>({2, 1, 28, 28}, 0.5f));
    auto trace = cnn_forward_trace(cnn, images);
    // floor((n - k) / s) + 1 : 28 -> 8 -> 3 -> 1
    EXPECT_EQ(trace.conv1.shape(), (Shape{2, 16, 8, 8}));
    EXPECT_EQ(trace.conv2.shape(), (Shape{2, 32, 3, 3}));
    EXPECT_EQ(trace.conv3.shape(), (Shape{2, 32, 1, 1}));
    EXPECT_EQ(trace.feature.shape(), (Shape{2, 4}));
}

TEST(Cnn, RejectsAnythingButTwentyEightSquare)
{
    Rng rng(1);
    auto cnn = CnnParams<float>::init(rng);
    EXPECT_THROW(cnn_forward(cnn, constant(Tensor<float>({1, 1, 27, 28}))), ShapeError);
    EXPECT_THROW(cnn_forward(cnn, constant(Tensor<float>({1, 2, 28, 28}))), ShapeError);
    EXPECT_THROW(cnn_forward(cnn, constant(Tensor<float>({28, 28}))), ShapeError);
}

TEST(Cnn, ZeroImageWithZeroBiasesGivesZeroFeature)
{
    Rng rng(3);
    auto cnn = CnnParams<float>::init(rng);
    NamedParams<float> params;
    cnn.collect(params, "");
    for (const auto& [name, p] : params)
        if (name.ends_with("bias")) {
            auto v = p;
            v.mutable_value().fill(0.0f);
        }
    const auto& f = cnn_forward(cnn, constant(Tensor<float>({1, 1, 28, 28}, 0.0f))).value();
    for (float v : f.values()) EXPECT_EQ(v, 0.0f);
}

TEST(Rnn, OutputsStayInsideOpenUnitInterval)
{
    Rng rng(5);
    auto rnn = RnnParams<float>::init(rng);
    for (int trial = 0; trial < 50; ++trial) {
        Tensor<float> est({1, 2}), feat({1, 4});
        for (auto& v : est.values()) v = static_cast<float>(rng.uniform());
        for (auto& v : feat.values()) v = static_cast<float>(20.0 * (rng.uniform() - 0.5));
        auto a = action_from_index(static_cast<int>(rng.below(3)));
        const auto& out = rnn_step(rnn, constant(est), constant(feat), constant(one_hot_batch<float>({a}))).value();
        for (float v : out.values()) {
            EXPECT_GT(v, 0.0f);
            EXPECT_LT(v, 1.0f);
        }
    }
}

TEST(Rnn, ZeroParametersGiveOneHalf)
{
    Rng rng(5);
    auto rnn = RnnParams<float>::init(rng);
    NamedParams<float> params;
    rnn.collect(params, "");
    set_all(params, 0.0f);
    const auto& out = rnn_step(rnn, constant(Tensor<float>({1, 2}, 0.3f)), constant(Tensor<float>({1, 4}, 1.0f)),
                               constant(one_hot_batch<float>({Action::Eat})))
                          .value();
    EXPECT_EQ(out[0], 0.5f);
    EXPECT_EQ(out[1], 0.5f);
}

TEST(Rnn, ActionOneHotConvention)
{
    EXPECT_EQ(one_hot<float>(Action::Stay), (std::array<float, 3>{1, 0, 0}));
    EXPECT_EQ(one_hot<float>(Action::Run), (std::array<float, 3>{0, 1, 0}));
    EXPECT_EQ(one_hot<float>(Action::Eat), (std::array<float, 3>{0, 0, 1}));
    for (Action a : kAllActions) {
        const auto v = one_hot<float>(a);
        const auto idx = static_cast<int>(std::max_element(v.begin(), v.end()) - v.begin());
        EXPECT_EQ(action_from_index(idx), a);
    }
}

TEST(Mlp, InputWidthDependsOnVariant)
{
    Rng rng(2);
    auto b2 = Network<float>::init(AgentVariant::B2, rng);
    auto b1 = Network<float>::init(AgentVariant::B1, rng);
    auto m1 = Network<float>::init(AgentVariant::M1, rng);
    EXPECT_EQ(b2.mlp.input_dim(), 4u);
    EXPECT_EQ(b1.mlp.input_dim(), 6u);
    EXPECT_EQ(m1.mlp.input_dim(), 6u);
}

TEST(Mlp, ArityMismatchThrows)
{
    Rng rng(2);
    auto b2 = MlpParams<float>::init(4, rng);
    auto b1 = MlpParams<float>::init(6, rng);
    auto f = constant(Tensor<float>({1, 4}, 1.0f));
    auto h = constant(Tensor<float>({1, 2}, 0.5f));
    EXPECT_THROW(mlp_forward(b2, f, std::optional{h}), ShapeError);
    EXPECT_THROW(mlp_forward(b1, f, std::optional<Var<float>>{}), ShapeError);
    EXPECT_NO_THROW(mlp_forward(b1, f, std::optional{h}));
}

TEST(Mlp, ZeroParametersGiveZeroQ)
{
    Rng rng(2);
    auto mlp = MlpParams<float>::init(6, rng);
    NamedParams<float> params;
    mlp.collect(params, "");
    set_all(params, 0.0f);
    const auto& q = mlp_forward(mlp, constant(Tensor<float>({1, 4}, 3.0f)), std::optional{constant(Tensor<float>({1, 2}, 0.5f))}).value();
    EXPECT_EQ(q.shape(), (Shape{1, 3}));
    for (float v : q.values()) EXPECT_EQ(v, 0.0f);
}

TEST(Activations, RangesAndLeakySlope)
{
    auto x = constant(Tensor<double>({5}, {-2.0, -0.5, 0.0, 0.5, 2.0}));
    const auto& r = relu(x).value();
    const auto& l = leaky_relu(x, 0.01).value();
    const auto& s = sigmoid(constant(Tensor<double>({3}, {-800.0, 0.0, 800.0}))).value();
    for (double v : r.values()) EXPECT_GE(v, 0.0);
    EXPECT_DOUBLE_EQ(l[0], -0.02);
    EXPECT_DOUBLE_EQ(l[1], -0.005);
    EXPECT_DOUBLE_EQ(l[3], 0.5);
    EXPECT_DOUBLE_EQ(l[4], 2.0);
    EXPECT_GE(s[0], 0.0);
    EXPECT_DOUBLE_EQ(s[1], 0.5);
    EXPECT_LE(s[2], 1.0);
    EXPECT_FALSE(std::isnan(s[0]) || std::isnan(s[2]));
}

TEST(Backward, SumOfParametersHasUnitGradient)
{
    auto a = parameter(Tensor<double>({2, 3}, 0.7));
    auto b = parameter(Tensor<double>({4}, -1.0));
    auto loss = add(sum(a), sum(b));
    backward(loss);
    for (double g : a.grad().values()) EXPECT_EQ(g, 1.0);
    for (double g : b.grad().values()) EXPECT_EQ(g, 1.0);
}

TEST(Backward, WithoutForwardGraphThrows)
{
    Var<double> undefined;
    EXPECT_THROW(backward(undefined), std::logic_error);
    auto leaf = parameter(Tensor<double>({1}, 2.0));
    EXPECT_THROW(backward(leaf), std::logic_error);
    auto loss = sum(leaf);
    backward(loss);
    EXPECT_THROW(backward(loss), std::logic_error); // graph released
    auto c = constant(Tensor<double>({1}, 2.0));
    EXPECT_THROW(backward(sum(c)), std::logic_error);
}

TEST(Backward, NoGradGuardRecordsNothing)
{
    auto p = parameter(Tensor<double>({2}, 1.0));
    Var<double> s;
    {
        NoGradGuard guard;
        s = sum(p);
    }
    EXPECT_FALSE(s.requires_grad());
    EXPECT_THROW(backward(s), std::logic_error);
}

TEST(Backward, DetachedTargetBranchReceivesNoGradient)
{
    Rng rng(9);
    auto online = Network<double>::init(AgentVariant::B1, rng);
    auto target = online.clone(false);
    auto images = constant(random_tensor({3, 1, 28, 28}, rng));
    auto hidden = constant(random_tensor({3, 2}, rng));
    auto q_online = mlp_forward(online.mlp, cnn_forward(online.cnn, images), std::optional{hidden});
    auto q_target = mlp_forward(target.mlp, cnn_forward(target.cnn, images), std::optional{hidden});
    auto loss = add(sum(q_online), sum(detach(q_target)));
    backward(loss);
    for (const auto& [name, p] : target.parameters()) {
        EXPECT_FALSE(p.requires_grad()) << name;
        EXPECT_FALSE(p.has_grad()) << name;
    }
    bool any = false;
    for (const auto& [name, p] : online.parameters())
        if (p.has_grad())
            for (double g : p.grad().values()) any = any || g != 0.0;
    EXPECT_TRUE(any);
}

// Finite-difference oracle: central differences with h = 1e-4 in double.

TEST(GradCheck, LinearLayer)
{
    Rng rng(11);
    auto layer = make_linear<double>(5, 3, Init::HeUniform, rng);
    auto x = parameter(random_tensor({4, 5}, rng));
    NamedParams<double> params{{"w", layer.weight}, {"b", layer.bias}, {"x", x}};
    auto coeff = random_tensor({4, 3}, rng);
    auto r = check_gradients(params, [&] {
        auto y = apply(layer, x);
        return sum(pick(y, {0, 1, 2, 0}));
    });
    EXPECT_LE(r.max_relative_error, 1e-4) << r.worst_parameter;
}

TEST(GradCheck, ConvolutionWithStride)
{
    Rng rng(12);
    auto conv = make_conv<double>(2, 3, 3, 2, Init::HeUniform, rng);
    auto x = parameter(random_tensor({2, 2, 7, 7}, rng));
    auto w = constant(random_tensor({2, 27}, rng));
    NamedParams<double> params{{"w", conv.weight}, {"b", conv.bias}, {"x", x}};
    auto r = check_gradients(params, [&] {
        auto y = flatten(apply(conv, x)); // [2, 3*3*3]
        return sum(linear(y, w, constant(Tensor<double>({2}, 0.0))));
    });
    EXPECT_LE(r.max_relative_error, 1e-4) << r.worst_parameter << " a=" << r.worst_analytic << " n=" << r.worst_numeric;
}

TEST(GradCheck, Activations)
{
    Rng rng(13);
    auto x = parameter(random_tensor({3, 4}, rng, 2.0));
    NamedParams<double> params{{"x", x}};
    auto r = check_gradients(params, [&] {
        return add(add(sum(sigmoid(x)), sum(leaky_relu(x, 0.01))), sum(relu(x)));
    });
    EXPECT_LE(r.max_relative_error, 1e-4);
}

TEST(GradCheck, FiveStepUnrolledRecurrence)
{
    Rng rng(14);
    auto rnn = RnnParams<double>::init(rng);
    auto features = constant(random_tensor({5, 4}, rng));
    NamedParams<double> params;
    rnn.collect(params, "rnn.");
    const std::vector<Action> actions{Action::Stay, Action::Run, Action::Eat, Action::Run, Action::Stay};
    auto weights = constant(random_tensor({1, 2}, rng));
    auto r = check_gradients(params, [&] {
        auto h = constant(Tensor<double>({1, 2}, {0.2, 0.4}));
        for (std::size_t k = 0; k < 5; ++k)
            h = rnn_step(rnn, h, select_rows(features, {k}), constant(one_hot_batch<double>({actions[k]})));
        return sum(pick(h, {1}));
    });
    EXPECT_LE(r.max_relative_error, 1e-4) << r.worst_parameter;
}

TEST(GradCheck, ThreeStepChainThroughCnnAndRnn)
{
    Rng rng(15);
    auto net = Network<double>::init(AgentVariant::M1, rng);
    auto images = constant(random_tensor({4, 1, 28, 28}, rng, 1.0));
    const auto params = net.parameters();
    Rng sampler(16);
    auto r = check_gradients(
        params,
        [&] {
            auto f = cnn_forward(net.cnn, images);
            auto h = constant(Tensor<double>({1, 2}, {0.35, 0.1}));
            const Action acts[3] = {Action::Eat, Action::Run, Action::Stay};
            for (std::size_t k = 0; k < 3; ++k)
                h = rnn_step(*net.rnn, h, select_rows(f, {k}), constant(one_hot_batch<double>({acts[k]})));
            auto q = mlp_forward(net.mlp, select_rows(f, {3}), std::optional{h});
            return sum(pick(q, {2}));
        },
        1e-4, 6, &sampler);
    EXPECT_LE(r.max_relative_error, 1e-4) << r.worst_parameter << " a=" << r.worst_analytic << " n=" << r.worst_numeric;
}

TEST(Adam, ZeroGradientLeavesParametersUnchanged)
{
    auto p = parameter(Tensor<float>({3}, {1.0f, -2.0f, 0.5f}));
    NamedParams<float> params{{"p", p}};
    Adam<float> adam(params, {});
    p.mutable_grad().fill(0.0f);
    const auto before = p.value();
    adam.step(params);
    EXPECT_EQ(p.value(), before);
}

TEST(Adam, FirstStepMovesByLearningRate)
{
    // Bias-corrected first step: m_hat = g, v_hat = g^2 -> delta = lr * g / (|g| + eps).
    auto p = parameter(Tensor<double>({2}, {0.0, 0.0}));
    NamedParams<double> params{{"p", p}};
    Adam<double> adam(params, {});
    p.mutable_grad()[0] = 0.37;
    p.mutable_grad()[1] = -5.0;
    adam.step(params);
    EXPECT_NEAR(p.value()[0], -3e-4 * 0.37 / (0.37 + 1e-8), 1e-15);
    EXPECT_NEAR(p.value()[1], 3e-4 * 5.0 / (5.0 + 1e-8), 1e-15);
}

TEST(Adam, IdenticalRunsAreBitwiseIdentical)
{
    auto run = [] {
        Rng rng(21);
        auto net = Network<float>::init(AgentVariant::M1, rng);
        auto params = net.parameters();
        Adam<float> adam(params, {});
        Rng data(22);
        for (int step = 0; step < 3; ++step) {
            Tensor<float> img({2, 1, 28, 28});
            for (auto& v : img.values()) v = static_cast<float>(data.uniform());
            auto q = mlp_forward(net.mlp, cnn_forward(net.cnn, constant(img)),
                                 std::optional{constant(Tensor<float>({2, 2}, 0.25f))});
            zero_grad(params);
            backward(half_mean_squared_error(pick(q, {0, 2}), {1.0f, 2.0f}));
            adam.step(params);
        }
        std::vector<float> flat;
        for (const auto& [n, p] : params) flat.insert(flat.end(), p.value().values().begin(), p.value().values().end());
        return flat;
    };
    EXPECT_EQ(run(), run());
}

TEST(Polyak, Endpoints)
{
    auto t = parameter(Tensor<float>({2}, 0.0f));
    auto o = parameter(Tensor<float>({2}, 1.0f));
    NamedParams<float> target{{"w", t}}, online{{"w", o}};
    polyak_update(target, online, 0.0);
    EXPECT_EQ(t.value()[0], 0.0f);
    polyak_update(target, online, 0.005);
    EXPECT_FLOAT_EQ(t.value()[0], 0.005f);
    polyak_update(target, online, 1.0);
    EXPECT_EQ(t.value(), o.value());
}

TEST(Polyak, TreeMismatchThrows)
{
    NamedParams<float> a{{"w", parameter(Tensor<float>({2}))}};
    NamedParams<float> b{{"v", parameter(Tensor<float>({2}))}};
    NamedParams<float> c{{"w", parameter(Tensor<float>({3}))}};
    EXPECT_THROW(polyak_update(a, b, 0.5), std::invalid_argument);
    EXPECT_THROW(polyak_update(a, c, 0.5), std::invalid_argument);
    EXPECT_THROW(polyak_update(a, NamedParams<float>{}, 0.5), std::invalid_argument);
}

TEST(Tensor, DataLengthMustMatchShape)
{
    EXPECT_THROW(Tensor<float>({2, 2}, std::vector<float>{1, 2, 3}), ShapeError);
    Tensor<float> t({2, 3});
    EXPECT_EQ(t.size(), 6u);
    EXPECT_THROW(t.reshaped({4}), ShapeError);
}

TEST(Tensor, StorageIsCacheLineAligned)
{
    for (std::size_t n : {1u, 3u, 17u, 1000u}) {
        Tensor<float> a({n});
        Tensor<double> b({n});
        EXPECT_EQ(reinterpret_cast<std::uintptr_t>(a.data()) % 64, 0u);
        EXPECT_EQ(reinterpret_cast<std::uintptr_t>(b.data()) % 64, 0u);
        EXPECT_EQ(reinterpret_cast<std::uintptr_t>(a.cast<double>().data()) % 64, 0u);
    }
}
