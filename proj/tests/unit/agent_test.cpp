#include <gtest/gtest.h>

#include "fixtures.hpp"
#include "survival/agent.hpp"

using namespace survival;

namespace {

QValues direct_q(const Network<float>& net, ImageId image, const ImageStore& store, std::optional<Estimate> h)
{
    nn::NoGradGuard guard;
    const ImageId ids[1] = {image};
    auto f = nn::cnn_forward(net.cnn, nn::constant(image_batch<float>(store, ids)));
    std::optional<nn::Var<float>> hin;
    if (h) hin = nn::constant(nn::Tensor<float>({1, 2}, {(*h)[0], (*h)[1]}));
    const auto q = nn::mlp_forward(net.mlp, f, hin).value();
    return {q[0], q[1], q[2]};
}

Observation first_obs(double hunger, double sickness)
{
    Observation o;
    o.initial_hidden = HiddenVars::from_values(hunger, sickness);
    return o;
}

} // namespace

TEST(Agent, M1FirstStepFeedsObservedLevelsWithoutRnn)
{
    auto store = fixtures::synthetic_store();
    Rng rng(1);
    auto net = Network<float>::init(AgentVariant::M1, rng);
    // Zero the RNN: had it run at t = 1 the estimate would be exactly (0.5, 0.5).
    nn::NamedParams<float> rnn_params;
    net.rnn->collect(rnn_params, "");
    for (auto& [name, p] : rnn_params) p.mutable_value().fill(0.0f);
    Agent agent(net, *store);
    agent.begin_episode(first_obs(0.35, 0.1));
    const auto q = agent.q_values(5);
    ASSERT_TRUE(agent.estimate().has_value());
    EXPECT_EQ(*agent.estimate(), (Estimate{0.35f, 0.1f}));
    EXPECT_EQ(q, direct_q(net, 5, *store, Estimate{0.35f, 0.1f}));
}

TEST(Agent, M1LaterStepsAdvanceTheEstimate)
{
    auto store = fixtures::synthetic_store();
    Rng rng(2);
    auto net = Network<float>::init(AgentVariant::M1, rng);
    Agent agent(net, *store);
    agent.begin_episode(first_obs(0.2, 0.4));
    agent.q_values(3);
    agent.commit(Action::Eat);
    agent.q_values(7);
    const Estimate expected = advance_estimate(*net.rnn, {0.2f, 0.4f}, image_feature(net.cnn, *store, 3), Action::Eat);
    EXPECT_EQ(*agent.estimate(), expected);
    EXPECT_GT((*agent.estimate())[0], 0.0f);
    EXPECT_LT((*agent.estimate())[0], 1.0f);
}

TEST(Agent, B2IgnoresHiddenLevels)
{
    auto store = fixtures::synthetic_store();
    Rng rng(3);
    auto net = Network<float>::init(AgentVariant::B2, rng);
    Agent a(net, *store), b(net, *store);
    a.begin_episode(first_obs(0.0, 0.0));
    b.begin_episode(first_obs(0.5, 0.45));
    EXPECT_EQ(a.q_values(11), b.q_values(11));
    EXPECT_FALSE(a.estimate().has_value());
}

TEST(Agent, TrueLevelsOnlyReachB1)
{
    auto store = fixtures::synthetic_store();
    Rng rng(4);
    const auto h = HiddenVars::from_values(0.3, 0.3);
    for (AgentVariant v : {AgentVariant::M1, AgentVariant::B2}) {
        auto net = Network<float>::init(v, rng);
        Agent agent(net, *store);
        agent.begin_episode(first_obs(0.1, 0.1));
        EXPECT_THROW(agent.q_values(0, h), std::logic_error) << to_string(v);
    }
    auto b1 = Network<float>::init(AgentVariant::B1, rng);
    Agent agent(b1, *store);
    agent.begin_episode(first_obs(0.1, 0.1));
    EXPECT_THROW(agent.q_values(0), std::logic_error);
}

TEST(Agent, B1MatchesM1WhenEstimateEqualsTruth)
{
    auto store = fixtures::synthetic_store();
    Rng rng(5);
    auto m1 = Network<float>::init(AgentVariant::M1, rng);
    auto b1 = Network<float>::init(AgentVariant::B1, rng);
    b1.cnn = m1.clone(true).cnn;
    b1.mlp = m1.clone(true).mlp;
    Agent am(m1, *store), ab(b1, *store);
    am.begin_episode(first_obs(0.45, 0.25));
    ab.begin_episode(first_obs(0.45, 0.25));
    EXPECT_EQ(am.q_values(9), ab.q_values(9, HiddenVars::from_values(0.45, 0.25)));
}

TEST(Agent, UsageErrors)
{
    auto store = fixtures::synthetic_store();
    Rng rng(6);
    auto net = Network<float>::init(AgentVariant::M1, rng);
    Agent agent(net, *store);
    EXPECT_THROW(agent.q_values(0), std::logic_error);
    Observation later;
    later.time = 4;
    EXPECT_THROW(agent.begin_episode(later), std::logic_error);
    agent.begin_episode(first_obs(0.1, 0.1));
    agent.q_values(0);
    EXPECT_THROW(agent.q_values(1), std::logic_error);
    agent.commit(Action::Run);
    EXPECT_THROW(agent.commit(Action::Run), std::logic_error);
}

TEST(SelectAction, GreedyAndTies)
{
    Rng rng(7);
    EXPECT_EQ(select_action({1, 3, 2}, 0.0, rng), Action::Run);
    EXPECT_EQ(select_action({2, 2, 1}, 0.0, rng), Action::Stay);
    EXPECT_EQ(select_action({0, 1, 1}, 0.0, rng), Action::Run);
    EXPECT_THROW(select_action({0, 0, 0}, 1.5, rng), std::invalid_argument);
    EXPECT_THROW(select_action({0, 0, 0}, -0.1, rng), std::invalid_argument);
}

TEST(SelectAction, UniformUnderFullExploration)
{
    Rng rng(8);
    std::array<int, 3> counts{};
    for (int i = 0; i < 30000; ++i) ++counts[static_cast<std::size_t>(index_of(select_action({5, 0, 0}, 1.0, rng)))];
    for (int c : counts) {
        EXPECT_GE(c / 30000.0, 0.31);
        EXPECT_LE(c / 30000.0, 0.36);
    }
}

TEST(SelectAction, ArgmaxInvariantToShift)
{
    Rng rng(9);
    for (int i = 0; i < 1000; ++i) {
        QValues q{static_cast<float>(rng.uniform()), static_cast<float>(rng.uniform()), static_cast<float>(rng.uniform())};
        const float c = static_cast<float>(rng.uniform() * 8 - 4);
        QValues shifted{q[0] + c, q[1] + c, q[2] + c};
        // Rounding can merge near-ties; only compare clearly separated cases.
        const auto sorted = [](QValues v) { std::sort(v.begin(), v.end()); return v; }(q);
        if (sorted[2] - sorted[1] < 1e-5f) continue;
        EXPECT_EQ(greedy_action(q), greedy_action(shifted));
    }
}

TEST(Rollout, ReturnEqualsLengthAndCutoff)
{
    auto pool = fixtures::synthetic_pool();
    Rng init(10);
    auto net = Network<float>::init(AgentVariant::M1, init);
    const ImageSource images{&pool, permutation(1)};
    Environment env;
    Rng rng(11);
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        env.reset(seed);
        const Episode ep = rollout(net, env, images, 0.3, rng, 400);
        EXPECT_EQ(ep.total_return(), static_cast<double>(ep.length()));
        EXPECT_TRUE(ep.terminated || ep.length() == 400);
        for (const auto& s : ep.steps) {
            const auto pair = permutation(1).digits_for(s.object);
            EXPECT_TRUE(s.digit == pair[0] || s.digit == pair[1]);
        }
    }
    env.reset(1);
    EXPECT_EQ(rollout(net, env, images, 0.0, rng, 1).length(), 1u);
}

TEST(Rollout, FixedSeedsReproduceEpisode)
{
    auto pool = fixtures::synthetic_pool();
    Rng init(12);
    auto net = Network<float>::init(AgentVariant::M1, init);
    const ImageSource images{&pool, permutation(2)};
    auto once = [&] {
        Environment env;
        env.reset(99);
        Rng rng(100);
        return rollout(net, env, images, 0.2, rng, 400);
    };
    const Episode a = once(), b = once();
    ASSERT_EQ(a.length(), b.length());
    for (std::size_t i = 0; i < a.length(); ++i) {
        EXPECT_EQ(a.steps[i].image, b.steps[i].image);
        EXPECT_EQ(a.steps[i].action, b.steps[i].action);
        EXPECT_EQ(a.steps[i].h_est, b.steps[i].h_est);
        EXPECT_EQ(a.steps[i].q, b.steps[i].q);
    }
}

TEST(Rollout, LoggedEstimatesAreTheRecurrentFold)
{
    auto pool = fixtures::synthetic_pool();
    Rng init(13);
    auto net = Network<float>::init(AgentVariant::M1, init);
    const ImageSource images{&pool, permutation(1)};
    Environment env;
    Rng rng(14);
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        env.reset(seed);
        const Episode ep = rollout(net, env, images, 0.5, rng, 400);
        const auto replay = replay_estimates(net, pool.store(), ep);
        ASSERT_EQ(replay.size(), ep.length());
        for (std::size_t i = 0; i < ep.length(); ++i) EXPECT_EQ(replay[i], *ep.steps[i].h_est) << i;
    }
}

TEST(Rollout, ScriptedStayBaseline)
{
    auto pool = fixtures::synthetic_pool();
    const ImageSource images{&pool, permutation(1)};
    Environment env;
    Rng rng(15);
    double total = 0.0;
    for (std::uint64_t seed = 0; seed < 2000; ++seed) {
        env.reset(seed);
        const Episode ep = scripted_rollout(Action::Stay, env, images, rng, 400);
        for (const auto& s : ep.steps) EXPECT_EQ(s.action, Action::Stay);
        total += ep.total_return();
    }
    // Value iteration for the always-Stay chain gives an expected lifespan of about 4.9 steps.
    EXPECT_NEAR(total / 2000.0, 4.92, 0.3);
}
