#ifndef SURVIVAL_NN_LAYERS_HPP
#define SURVIVAL_NN_LAYERS_HPP

#include <array>
#include <cmath>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "survival/env.hpp"
#include "survival/nn/autograd.hpp"
#include "survival/rng.hpp"

namespace survival::nn {

inline constexpr std::size_t kFeatureDim = 4;
inline constexpr std::size_t kHiddenDim = 2;
inline constexpr std::size_t kActionDim = 3;
inline constexpr std::size_t kUnits = 64;
inline constexpr double kLeakySlope = 0.01;

template <class T>
using NamedParams = std::vector<std::pair<std::string, Var<T>>>;

template <class T>
struct LinearLayer {
    Var<T> weight; // [out, in]
    Var<T> bias;   // [out]
    std::size_t in() const { return weight.dim(1); }
    std::size_t out() const { return weight.dim(0); }
};

template <class T>
struct ConvLayer {
    Var<T> weight; // [K, C, k, k]
    Var<T> bias;   // [K]
    std::size_t stride = 1;
};

enum class Init { HeUniform, XavierUniform, Zero };

namespace detail {

template <class T>
Tensor<T> init_tensor(Shape shape, std::size_t fan_in, std::size_t fan_out, Init init, Rng& rng)
{
    Tensor<T> t(std::move(shape));
    double bound = 0.0;
    switch (init) {
    case Init::HeUniform: bound = std::sqrt(6.0 / static_cast<double>(fan_in)); break;
    case Init::XavierUniform: bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out)); break;
    case Init::Zero: return t;
    }
    for (auto& v : t.values()) v = static_cast<T>((2.0 * rng.uniform() - 1.0) * bound);
    return t;
}

} // namespace detail

template <class T>
LinearLayer<T> make_linear(std::size_t in, std::size_t out, Init init, Rng& rng)
{
    return {parameter(detail::init_tensor<T>({out, in}, in, out, init, rng)), parameter(Tensor<T>({out}, T{0}))};
}

template <class T>
ConvLayer<T> make_conv(std::size_t in_channels, std::size_t filters, std::size_t kernel, std::size_t stride,
                       Init init, Rng& rng)
{
    const std::size_t fan_in = in_channels * kernel * kernel;
    const std::size_t fan_out = filters * kernel * kernel;
    return {parameter(detail::init_tensor<T>({filters, in_channels, kernel, kernel}, fan_in, fan_out, init, rng)),
            parameter(Tensor<T>({filters}, T{0})), stride};
}

template <class T>
Var<T> apply(const LinearLayer<T>& l, const Var<T>& x)
{
    return linear(x, l.weight, l.bias);
}

template <class T>
Var<T> apply(const ConvLayer<T>& l, const Var<T>& x)
{
    return conv2d(x, l.weight, l.bias, l.stride);
}

/// Image encoder: three valid convolutions (k 6/4/3, channels 16/32/32,
/// strides 3/2/1) with ReLU, then a LeakyReLU linear map to 4 features.
template <class T>
struct CnnParams {
    ConvLayer<T> conv1, conv2, conv3;
    LinearLayer<T> fc;

    static CnnParams init(Rng& rng)
    {
        return {make_conv<T>(1, 16, 6, 3, Init::HeUniform, rng), make_conv<T>(16, 32, 4, 2, Init::HeUniform, rng),
                make_conv<T>(32, 32, 3, 1, Init::HeUniform, rng),
                make_linear<T>(32, kFeatureDim, Init::HeUniform, rng)};
    }

    void collect(NamedParams<T>& out, const std::string& prefix) const
    {
        out.push_back({prefix + "conv1.weight", conv1.weight});
        out.push_back({prefix + "conv1.bias", conv1.bias});
        out.push_back({prefix + "conv2.weight", conv2.weight});
        out.push_back({prefix + "conv2.bias", conv2.bias});
        out.push_back({prefix + "conv3.weight", conv3.weight});
        out.push_back({prefix + "conv3.bias", conv3.bias});
        out.push_back({prefix + "fc.weight", fc.weight});
        out.push_back({prefix + "fc.bias", fc.bias});
    }
};

/// Intermediate activations of one CNN forward, kept for shape checks.
template <class T>
struct CnnTrace {
    Var<T> conv1, conv2, conv3, feature;
};

/// images: [N, 1, 28, 28] -> features [N, 4]
template <class T>
CnnTrace<T> cnn_forward_trace(const CnnParams<T>& p, const Var<T>& images)
{
    detail::require(images.value().rank() == 4 && images.dim(1) == 1 && images.dim(2) == 28 && images.dim(3) == 28,
                    "cnn_forward: expected [N,1,28,28] images, got " + shape_string(images.shape()));
    CnnTrace<T> t;
    t.conv1 = relu(apply(p.conv1, images));
    t.conv2 = relu(apply(p.conv2, t.conv1));
    t.conv3 = relu(apply(p.conv3, t.conv2));
    t.feature = leaky_relu(apply(p.fc, flatten(t.conv3)), static_cast<T>(kLeakySlope));
    return t;
}

template <class T>
Var<T> cnn_forward(const CnnParams<T>& p, const Var<T>& images)
{
    return cnn_forward_trace(p, images).feature;
}

/// Hidden-level estimator: [estimate(2), feature(4), action one-hot(3)] ->
/// 64 -> 64 -> 2, ReLU hidden and Sigmoid output.
template <class T>
struct RnnParams {
    LinearLayer<T> hidden1, hidden2, out;

    static RnnParams init(Rng& rng)
    {
        return {make_linear<T>(kHiddenDim + kFeatureDim + kActionDim, kUnits, Init::HeUniform, rng),
                make_linear<T>(kUnits, kUnits, Init::HeUniform, rng),
                make_linear<T>(kUnits, kHiddenDim, Init::XavierUniform, rng)};
    }

    void collect(NamedParams<T>& out_params, const std::string& prefix) const
    {
        out_params.push_back({prefix + "hidden1.weight", hidden1.weight});
        out_params.push_back({prefix + "hidden1.bias", hidden1.bias});
        out_params.push_back({prefix + "hidden2.weight", hidden2.weight});
        out_params.push_back({prefix + "hidden2.bias", hidden2.bias});
        out_params.push_back({prefix + "out.weight", out.weight});
        out_params.push_back({prefix + "out.bias", out.bias});
    }
};

/// Stay -> (1,0,0), Run -> (0,1,0), Eat -> (0,0,1).
template <class T>
std::array<T, kActionDim> one_hot(Action a)
{
    std::array<T, kActionDim> v{};
    v[static_cast<std::size_t>(index_of(a))] = T{1};
    return v;
}

template <class T>
Tensor<T> one_hot_batch(const std::vector<Action>& actions)
{
    Tensor<T> t({actions.size(), kActionDim}, T{0});
    for (std::size_t i = 0; i < actions.size(); ++i) t.at(i, static_cast<std::size_t>(index_of(actions[i]))) = T{1};
    return t;
}

/// One recurrent step: prev_estimate [N,2], prev_feature [N,4], prev_action [N,3] -> [N,2].
template <class T>
Var<T> rnn_step(const RnnParams<T>& p, const Var<T>& prev_estimate, const Var<T>& prev_feature,
                const Var<T>& prev_action)
{
    auto x = concat<T>({prev_estimate, prev_feature, prev_action});
    auto h1 = relu(apply(p.hidden1, x));
    auto h2 = relu(apply(p.hidden2, h1));
    return sigmoid(apply(p.out, h2));
}

/// Q-head: [feature(4) (+ hidden(2))] -> 64 ReLU -> 3.
template <class T>
struct MlpParams {
    LinearLayer<T> hidden, out;

    static MlpParams init(std::size_t input_dim, Rng& rng)
    {
        return {make_linear<T>(input_dim, kUnits, Init::HeUniform, rng),
                make_linear<T>(kUnits, kActionDim, Init::HeUniform, rng)};
    }

    std::size_t input_dim() const { return hidden.in(); }

    void collect(NamedParams<T>& out_params, const std::string& prefix) const
    {
        out_params.push_back({prefix + "hidden.weight", hidden.weight});
        out_params.push_back({prefix + "hidden.bias", hidden.bias});
        out_params.push_back({prefix + "out.weight", out.weight});
        out_params.push_back({prefix + "out.bias", out.bias});
    }
};

/// feature [N,4], hidden [N,2] or nothing -> Q [N,3]. The optional input must
/// match how the head was built.
template <class T>
Var<T> mlp_forward(const MlpParams<T>& p, const Var<T>& feature, const std::optional<Var<T>>& hidden)
{
    const std::size_t expected = p.input_dim();
    const std::size_t given = kFeatureDim + (hidden ? kHiddenDim : 0);
    if (given != expected)
        throw ShapeError("mlp_forward: head expects input width " + std::to_string(expected) + " but got " +
                         std::to_string(given) + (hidden ? " (hidden supplied)" : " (no hidden)"));
    auto x = hidden ? concat<T>({feature, *hidden}) : feature;
    return apply(p.out, relu(apply(p.hidden, x)));
}

} // namespace survival::nn

#endif
