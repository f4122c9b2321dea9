#ifndef SURVIVAL_AGENT_HPP
#define SURVIVAL_AGENT_HPP

#include <array>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "survival/dataset.hpp"
#include "survival/env.hpp"
#include "survival/nn/layers.hpp"
#include "survival/rng.hpp"

namespace survival {

/// M1 estimates hidden levels with the RNN (true levels only at t = 1),
/// B1 reads the true levels every step, B2 sees images only.
enum class AgentVariant : std::uint8_t { M1, B1, B2 };

constexpr std::string_view to_string(AgentVariant v) noexcept
{
    switch (v) {
    case AgentVariant::M1: return "M1";
    case AgentVariant::B1: return "B1";
    case AgentVariant::B2: return "B2";
    }
    return "?";
}

inline AgentVariant parse_variant(std::string_view s)
{
    if (s == "M1") return AgentVariant::M1;
    if (s == "B1") return AgentVariant::B1;
    if (s == "B2") return AgentVariant::B2;
    throw std::invalid_argument("unknown agent variant '" + std::string(s) + "' (expected M1, B1 or B2)");
}

constexpr bool uses_hidden_input(AgentVariant v) noexcept { return v != AgentVariant::B2; }
constexpr bool has_rnn(AgentVariant v) noexcept { return v == AgentVariant::M1; }

template <class T>
struct Network {
    AgentVariant variant = AgentVariant::M1;
    nn::CnnParams<T> cnn;
    std::optional<nn::RnnParams<T>> rnn;
    nn::MlpParams<T> mlp;

    static Network init(AgentVariant variant, Rng& rng)
    {
        Network net;
        net.variant = variant;
        net.cnn = nn::CnnParams<T>::init(rng);
        if (has_rnn(variant)) net.rnn = nn::RnnParams<T>::init(rng);
        net.mlp = nn::MlpParams<T>::init(nn::kFeatureDim + (uses_hidden_input(variant) ? nn::kHiddenDim : 0), rng);
        return net;
    }

    nn::NamedParams<T> parameters() const
    {
        nn::NamedParams<T> out;
        cnn.collect(out, "cnn.");
        if (rnn) rnn->collect(out, "rnn.");
        mlp.collect(out, "mlp.");
        return out;
    }

    /// Deep copy. A non-trainable clone holds constants, so no gradient can
    /// reach it (used for the target network).
    Network clone(bool trainable) const
    {
        auto copy_var = [trainable](const nn::Var<T>& v) {
            return trainable ? nn::parameter(v.value()) : nn::constant(v.value());
        };
        auto copy_linear = [&](const nn::LinearLayer<T>& l) {
            return nn::LinearLayer<T>{copy_var(l.weight), copy_var(l.bias)};
        };
        auto copy_conv = [&](const nn::ConvLayer<T>& l) {
            return nn::ConvLayer<T>{copy_var(l.weight), copy_var(l.bias), l.stride};
        };
        Network out;
        out.variant = variant;
        out.cnn = {copy_conv(cnn.conv1), copy_conv(cnn.conv2), copy_conv(cnn.conv3), copy_linear(cnn.fc)};
        if (rnn) out.rnn = nn::RnnParams<T>{copy_linear(rnn->hidden1), copy_linear(rnn->hidden2), copy_linear(rnn->out)};
        out.mlp = {copy_linear(mlp.hidden), copy_linear(mlp.out)};
        return out;
    }
};

template <class T>
nn::Tensor<T> image_batch(const ImageStore& store, std::span<const ImageId> ids)
{
    nn::Tensor<T> t({ids.size(), 1, kImageSide, kImageSide});
    for (std::size_t i = 0; i < ids.size(); ++i) {
        auto px = store.image(ids[i]);
        std::copy(px.begin(), px.end(), t.data() + i * kImagePixels);
    }
    return t;
}

template <class T>
nn::Tensor<T> hidden_batch(std::span<const HiddenVars> hidden)
{
    nn::Tensor<T> t({hidden.size(), nn::kHiddenDim});
    for (std::size_t i = 0; i < hidden.size(); ++i) {
        t.at(i, 0) = static_cast<T>(hidden[i].hunger());
        t.at(i, 1) = static_cast<T>(hidden[i].sickness());
    }
    return t;
}

using Estimate = std::array<float, 2>;
using QValues = std::array<float, 3>;

/// Batch-of-one recurrent step; the same code path serves collection and
/// replay so stored estimates can be reproduced bit for bit.
inline Estimate advance_estimate(const nn::RnnParams<float>& rnn, const Estimate& prev,
                                 const std::array<float, 4>& prev_feature, Action prev_action)
{
    nn::NoGradGuard guard;
    auto est = nn::constant(nn::Tensor<float>({1, 2}, {prev[0], prev[1]}));
    auto feat = nn::constant(nn::Tensor<float>({1, 4}, std::vector<float>(prev_feature.begin(), prev_feature.end())));
    const auto oh = nn::one_hot<float>(prev_action);
    auto act = nn::constant(nn::Tensor<float>({1, 3}, std::vector<float>(oh.begin(), oh.end())));
    const auto& out = nn::rnn_step(rnn, est, feat, act).value();
    return {out[0], out[1]};
}

inline std::array<float, 4> image_feature(const nn::CnnParams<float>& cnn, const ImageStore& store, ImageId id)
{
    nn::NoGradGuard guard;
    const ImageId ids[1] = {id};
    const auto& f = nn::cnn_forward(cnn, nn::constant(image_batch<float>(store, ids))).value();
    return {f[0], f[1], f[2], f[3]};
}

/// Per-episode inference state for one agent over a read-only network.
class Agent {
public:
    Agent(const Network<float>& net, const ImageStore& store) : net_(&net), store_(&store) {}

    AgentVariant variant() const noexcept { return net_->variant; }

    void begin_episode(const Observation& first)
    {
        if (!first.initial_hidden) throw std::logic_error("first observation must carry the initial hidden levels");
        h1_ = *first.initial_hidden;
        started_ = true;
        time_ = 0;
        pending_ = false;
        has_prev_ = false;
        estimate_.reset();
    }

    /// Q-values for the current image. `true_hidden` is privileged input and
    /// only accepted for B1; M1 and B2 must never receive it.
    QValues q_values(ImageId image, std::optional<HiddenVars> true_hidden = std::nullopt)
    {
        if (!started_) throw std::logic_error("q_values called before begin_episode()");
        if (pending_) throw std::logic_error("q_values called twice without commit()");
        const AgentVariant v = net_->variant;
        if (true_hidden && v != AgentVariant::B1)
            throw std::logic_error("true hidden levels may only be fed to the B1 agent");
        if (v == AgentVariant::B1 && !true_hidden) throw std::logic_error("B1 requires the true hidden levels");

        const auto feature = image_feature(net_->cnn, *store_, image);
        std::optional<Estimate> hidden_input;
        if (v == AgentVariant::M1) {
            if (time_ == 0) {
                estimate_ = Estimate{static_cast<float>(h1_.hunger()), static_cast<float>(h1_.sickness())};
            } else {
                if (!has_prev_ || !estimate_) throw std::logic_error("M1 step without previous feature and action");
                estimate_ = advance_estimate(*net_->rnn, *estimate_, prev_feature_, prev_action_);
            }
            hidden_input = estimate_;
        } else if (v == AgentVariant::B1) {
            hidden_input = Estimate{static_cast<float>(true_hidden->hunger()), static_cast<float>(true_hidden->sickness())};
        }

        current_feature_ = feature;
        pending_ = true;
        return head(feature, hidden_input);
    }

    void commit(Action a)
    {
        if (!pending_) throw std::logic_error("commit() without q_values()");
        prev_feature_ = current_feature_;
        prev_action_ = a;
        has_prev_ = true;
        pending_ = false;
        ++time_;
    }

    const std::optional<Estimate>& estimate() const noexcept { return estimate_; }
    const std::array<float, 4>& last_feature() const noexcept { return current_feature_; }

private:
    QValues head(const std::array<float, 4>& feature, const std::optional<Estimate>& hidden) const
    {
        nn::NoGradGuard guard;
        auto f = nn::constant(nn::Tensor<float>({1, 4}, std::vector<float>(feature.begin(), feature.end())));
        std::optional<nn::Var<float>> h;
        if (hidden) h = nn::constant(nn::Tensor<float>({1, 2}, {(*hidden)[0], (*hidden)[1]}));
        const auto& q = nn::mlp_forward(net_->mlp, f, h).value();
        return {q[0], q[1], q[2]};
    }

    const Network<float>* net_;
    const ImageStore* store_;
    HiddenVars h1_;
    std::int64_t time_ = 0;
    bool started_ = false;
    bool pending_ = false;
    bool has_prev_ = false;
    std::optional<Estimate> estimate_;
    std::array<float, 4> prev_feature_{};
    std::array<float, 4> current_feature_{};
    Action prev_action_ = Action::Stay;
};

/// Greedy action with lowest-index tie-break.
inline Action greedy_action(const QValues& q)
{
    std::size_t best = 0;
    for (std::size_t i = 1; i < q.size(); ++i)
        if (q[i] > q[best]) best = i;
    return static_cast<Action>(best);
}

inline Action select_action(const QValues& q, double epsilon, Rng& rng)
{
    if (epsilon < 0.0 || epsilon > 1.0) throw std::invalid_argument("epsilon must lie in [0, 1]");
    if (epsilon > 0.0 && rng.uniform() < epsilon) return static_cast<Action>(rng.below(kNumActions));
    return greedy_action(q);
}

struct EpisodeStep {
    std::int64_t t = 1;
    ObjectClass object = ObjectClass::None;
    ImageId image = 0;
    int digit = 0;
    Action action = Action::Stay;
    double reward = 0.0;
    HiddenVars h_true;
    std::optional<Estimate> h_est;
    QValues q{};
};

struct Episode {
    std::vector<EpisodeStep> steps;
    bool terminated = false;
    DeathCause cause = DeathCause::None;

    std::size_t length() const noexcept { return steps.size(); }
    double total_return() const noexcept
    {
        double r = 0.0;
        for (const auto& s : steps) r += s.reward;
        return r;
    }
};

struct ImageSource {
    const ImagePool* pool = nullptr;
    Permutation perm;
};

/// One episode from an already reset environment. The rollout rng drives image
/// choice and exploration; the environment keeps its own stream.
inline Episode rollout(const Network<float>& net, Environment& env, const ImageSource& images, double epsilon,
                       Rng& rng, std::size_t max_steps)
{
    const ImageStore& store = images.pool->store();
    Agent agent(net, store);
    Episode ep;
    agent.begin_episode(env.observe());
    for (std::size_t n = 0; n < max_steps; ++n) {
        const Observation obs = env.observe();
        const ImageId image = sample_image(*images.pool, images.perm, obs.object, rng);
        const HiddenVars truth = env.state().hidden;
        std::optional<HiddenVars> privileged;
        if (net.variant == AgentVariant::B1) privileged = truth;

        EpisodeStep step;
        step.t = obs.time;
        step.object = obs.object;
        step.image = image;
        step.digit = store.label(image);
        step.h_true = truth;
        step.q = agent.q_values(image, privileged);
        step.h_est = agent.estimate();
        step.action = select_action(step.q, epsilon, rng);
        agent.commit(step.action);

        const StepResult r = env.step(step.action);
        step.reward = r.reward;
        ep.steps.push_back(step);
        if (r.terminated) {
            ep.terminated = true;
            ep.cause = r.cause;
            break;
        }
    }
    return ep;
}

/// Fixed-action baseline (e.g. always Stay) with identical episode bookkeeping.
inline Episode scripted_rollout(Action action, Environment& env, const ImageSource& images, Rng& rng,
                                std::size_t max_steps)
{
    Episode ep;
    for (std::size_t n = 0; n < max_steps; ++n) {
        const Observation obs = env.observe();
        EpisodeStep step;
        step.t = obs.time;
        step.object = obs.object;
        step.image = sample_image(*images.pool, images.perm, obs.object, rng);
        step.digit = images.pool->store().label(step.image);
        step.h_true = env.state().hidden;
        step.action = action;
        const StepResult r = env.step(action);
        step.reward = r.reward;
        ep.steps.push_back(step);
        if (r.terminated) {
            ep.terminated = true;
            ep.cause = r.cause;
            break;
        }
    }
    return ep;
}

/// Recomputes M1's estimates for a logged episode with the given weights:
/// the fold of the recurrent step over (h1, features, actions).
inline std::vector<Estimate> replay_estimates(const Network<float>& net, const ImageStore& store,
                                              const Episode& ep)
{
    if (!net.rnn) throw std::logic_error("replay_estimates requires an M1 network");
    std::vector<Estimate> out;
    if (ep.steps.empty()) return out;
    const HiddenVars h1 = ep.steps.front().h_true;
    Estimate est{static_cast<float>(h1.hunger()), static_cast<float>(h1.sickness())};
    out.push_back(est);
    for (std::size_t i = 1; i < ep.steps.size(); ++i) {
        const auto feature = image_feature(net.cnn, store, ep.steps[i - 1].image);
        est = advance_estimate(*net.rnn, est, feature, ep.steps[i - 1].action);
        out.push_back(est);
    }
    return out;
}

} // namespace survival

#endif
