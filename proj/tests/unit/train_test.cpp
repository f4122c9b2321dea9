#include <gtest/gtest.h>

#include <cmath>

#include "fixtures.hpp"
#include "survival/train.hpp"

using namespace survival;

namespace {

Episode fake_episode(std::size_t length, bool terminated, const ImagePool& pool, std::uint64_t seed = 1)
{
    Rng rng(seed);
    Episode ep;
    ep.terminated = terminated;
    for (std::size_t i = 0; i < length; ++i) {
        EpisodeStep s;
        s.t = static_cast<std::int64_t>(i + 1);
        s.object = object_from_index(static_cast<int>(rng.below(4)));
        s.image = sample_image(pool, permutation(1), s.object, rng);
        s.action = action_from_index(static_cast<int>(rng.below(3)));
        s.reward = 1.0;
        s.h_true = HiddenVars::from_steps(static_cast<int>(rng.below(21)), static_cast<int>(rng.below(21)));
        s.h_est = Estimate{static_cast<float>(rng.uniform()), static_cast<float>(rng.uniform())};
        ep.steps.push_back(s);
    }
    return ep;
}

std::array<float, 3> q_of(const Network<float>& net, const ImageStore& store, ImageId image,
                          std::optional<HiddenVars> h)
{
    nn::NoGradGuard guard;
    const ImageId ids[1] = {image};
    std::optional<nn::Var<float>> hin;
    if (h) hin = nn::constant(hidden_batch<float>(std::span<const HiddenVars>(&*h, 1)));
    const auto q = nn::mlp_forward(net.mlp, nn::cnn_forward(net.cnn, nn::constant(image_batch<float>(store, ids))), hin)
                       .value();
    return {q[0], q[1], q[2]};
}

void set_constant_q(Network<float>& net, float value)
{
    net.mlp.out.weight.mutable_value().fill(0.0f);
    net.mlp.out.bias.mutable_value().fill(value);
}

} // namespace

TEST(RingBuffer, EvictsOldestFirst)
{
    RingBuffer<int> ring(3);
    for (int i = 0; i < 3; ++i) EXPECT_FALSE(ring.push(i).second.has_value());
    auto [slot, evicted] = ring.push(3);
    ASSERT_TRUE(evicted.has_value());
    EXPECT_EQ(*evicted, 0);
    EXPECT_EQ(ring.size(), 3u);
    EXPECT_EQ(*ring.push(4).second, 1);
    EXPECT_EQ(ring.size(), 3u);
    EXPECT_THROW(RingBuffer<int>(0), std::invalid_argument);
}

TEST(SplitEpisode, ChunkLengths)
{
    auto pool = fixtures::synthetic_pool();
    auto lengths = [&](std::size_t n, std::size_t L) {
        std::vector<std::size_t> out;
        for (const auto& s : split_episode(fake_episode(n, true, pool), L)) out.push_back(s.length());
        return out;
    };
    EXPECT_EQ(lengths(150, 60), (std::vector<std::size_t>{60, 60, 30}));
    EXPECT_EQ(lengths(40, 60), (std::vector<std::size_t>{40}));
    EXPECT_EQ(lengths(120, 60), (std::vector<std::size_t>{60, 60}));
    EXPECT_THROW(split_episode(Episode{}, 60), std::invalid_argument);
}

TEST(SplitEpisode, SeedsAreTrueFirstLevelsThenStoredEstimates)
{
    auto pool = fixtures::synthetic_pool();
    const Episode ep = fake_episode(130, false, pool);
    const auto subs = split_episode(ep, 60);
    ASSERT_EQ(subs.size(), 3u);
    const auto h1 = ep.steps[0].h_true;
    EXPECT_EQ(subs[0].seed(), (Estimate{static_cast<float>(h1.hunger()), static_cast<float>(h1.sickness())}));
    EXPECT_EQ(subs[1].seed(), *ep.steps[60].h_est);
    EXPECT_EQ(subs[2].seed(), *ep.steps[120].h_est);
    EXPECT_TRUE(subs[0].starts_episode);
    EXPECT_FALSE(subs[1].starts_episode);
    EXPECT_FALSE(subs[2].ends_terminal); // cut off, not terminal
}

TEST(SplitEpisode, TrainablePositions)
{
    auto pool = fixtures::synthetic_pool();
    const auto open = split_episode(fake_episode(5, false, pool), 60)[0];
    const auto closed = split_episode(fake_episode(5, true, pool), 60)[0];
    for (std::size_t t = 0; t < 4; ++t) {
        EXPECT_TRUE(open.trainable(t));
        EXPECT_TRUE(closed.trainable(t));
    }
    EXPECT_FALSE(open.trainable(4));
    EXPECT_TRUE(closed.trainable(4));
}

TEST(Transitions, TerminalAndTruncatedEpisodes)
{
    auto pool = fixtures::synthetic_pool();
    const auto done = episode_transitions(fake_episode(6, true, pool));
    ASSERT_EQ(done.size(), 6u);
    EXPECT_TRUE(done.back().terminal);
    for (std::size_t i = 0; i + 1 < done.size(); ++i) EXPECT_FALSE(done[i].terminal);
    EXPECT_EQ(episode_transitions(fake_episode(6, false, pool)).size(), 5u);
}

TEST(SubEpisodeBuffer, FifoAndLengthBuckets)
{
    auto pool = fixtures::synthetic_pool();
    SubEpisodeBuffer buf(4);
    for (std::size_t len : {3, 5, 3, 7, 5, 5}) buf.push(split_episode(fake_episode(len, true, pool), 60)[0]);
    EXPECT_EQ(buf.size(), 4u);
    EXPECT_EQ(buf.bucket_size(3), 1u); // the first 3 was evicted
    EXPECT_EQ(buf.bucket_size(5), 2u);
    EXPECT_EQ(buf.bucket_size(7), 1u);
    Rng rng(1);
    for (int i = 0; i < 50; ++i) {
        const auto batch = buf.sample_same_length(8, rng);
        for (const auto* s : batch) EXPECT_EQ(s->length(), batch.front()->length());
    }
    for (const auto& [sub, start] : buf.sample_windows(20, 5, rng)) EXPECT_LE(start + 5, sub->length());
}

TEST(Windows, StartCount)
{
    EXPECT_EQ(window_starts(60, 8), 53u);
    EXPECT_EQ(window_starts(60, 60), 1u);
    EXPECT_EQ(window_starts(5, 8), 0u);
}

TEST(DqnLoss, TerminalTransitionWithMatchingQHasZeroResidual)
{
    auto store = fixtures::synthetic_store();
    Rng rng(2);
    auto net = Network<float>::init(AgentVariant::B1, rng);
    set_constant_q(net, 1.0f);
    Transition tr{3, 3, HiddenVars::from_steps(2, 2), HiddenVars::from_steps(2, 2), Action::Eat, 1.0f, true};
    EXPECT_EQ(dqn_loss(net, net, *store, {&tr}, 0.99).value()[0], 0.0f);
}

TEST(DqnLoss, ZeroDiscountTargetsTheReward)
{
    auto store = fixtures::synthetic_store();
    Rng rng(3);
    auto net = Network<float>::init(AgentVariant::B2, rng);
    set_constant_q(net, 0.25f);
    Transition tr{3, 40, {}, {}, Action::Run, 1.0f, false};
    EXPECT_FLOAT_EQ(dqn_loss(net, net, *store, {&tr}, 0.0).value()[0], 0.5f * 0.75f * 0.75f);
}

TEST(DqnLoss, MatchesHandComputation)
{
    auto store = fixtures::synthetic_store();
    Rng rng(4);
    auto online = Network<float>::init(AgentVariant::B1, rng);
    auto target = Network<float>::init(AgentVariant::B1, rng);
    const Transition a{5, 17, HiddenVars::from_steps(3, 8), HiddenVars::from_steps(4, 7), Action::Stay, 1.0f, false};
    const Transition b{29, 29, HiddenVars::from_steps(10, 1), HiddenVars::from_steps(10, 1), Action::Eat, 1.0f, true};
    const double gamma = 0.9;

    const auto qa = q_of(online, *store, a.image, a.hidden);
    const auto qb = q_of(online, *store, b.image, b.hidden);
    const auto qa_next = q_of(target, *store, a.next_image, a.next_hidden);
    const double ya = 1.0 + gamma * std::max({qa_next[0], qa_next[1], qa_next[2]});
    const double yb = 1.0;
    const double ra = ya - qa[0], rb = yb - qb[2];
    const double expected = 0.5 * (ra * ra + rb * rb) / 2.0;

    EXPECT_NEAR(dqn_loss(online, target, *store, {&a, &b}, gamma).value()[0], expected, 1e-6);
}

TEST(DqnUpdate, TargetFollowsByPolyakOnly)
{
    auto store = fixtures::synthetic_store();
    Rng rng(5);
    Learner learner(Network<float>::init(AgentVariant::B2, rng), 0.99, 0.0, {});
    const auto before = learner.target.mlp.out.weight.value();
    const Transition tr{5, 17, {}, {}, Action::Stay, 1.0f, false};
    dqn_update(learner, *store, {&tr});
    EXPECT_EQ(learner.target.mlp.out.weight.value(), before);
    EXPECT_NE(learner.online.mlp.out.weight.value(), before);
}

TEST(SequentialUpdate, UpdateCountPerPass)
{
    auto pool = fixtures::synthetic_pool();
    Rng rng(6);
    Learner learner(Network<float>::init(AgentVariant::M1, rng), 0.99, 0.005, {});
    const auto open = split_episode(fake_episode(2, false, pool), 60)[0];
    EXPECT_EQ(sequential_update(learner, pool.store(), {&open, &open}).size(), 1u);
    const auto closed = split_episode(fake_episode(2, true, pool), 60)[0];
    EXPECT_EQ(sequential_update(learner, pool.store(), {&closed}).size(), 2u);
    const auto longer = split_episode(fake_episode(7, false, pool), 60)[0];
    EXPECT_EQ(sequential_update(learner, pool.store(), {&longer}).size(), 6u);
    EXPECT_THROW(sequential_update(learner, pool.store(), {&open, &longer}), std::invalid_argument);
}

TEST(SequentialUpdate, StoredEstimateOnlySeedsFirstPosition)
{
    auto pool = fixtures::synthetic_pool();
    Rng rng(7);
    const auto net = Network<float>::init(AgentVariant::M1, rng);
    const auto target = net.clone(false);
    auto sub = split_episode(fake_episode(6, false, pool), 60)[0];
    auto loss_at = [&](const SubEpisode& s, std::size_t pos) {
        nn::NoGradGuard guard;
        return windowed_bellman_loss(net, target, pool.store(), {{&s, 0, pos, true}}, 0.99).loss.value()[0];
    };
    const float base = loss_at(sub, 3);
    auto changed_later = sub;
    changed_later.steps[2].estimate = {0.99f, 0.01f};
    EXPECT_EQ(loss_at(changed_later, 3), base);
    auto changed_seed = sub;
    changed_seed.steps[0].estimate = {0.99f, 0.01f};
    EXPECT_NE(loss_at(changed_seed, 3), base);
}

TEST(SequentialUpdate, TargetBranchGetsNoGradient)
{
    auto pool = fixtures::synthetic_pool();
    Rng rng(8);
    Learner learner(Network<float>::init(AgentVariant::M1, rng), 0.99, 0.005, {});
    const auto sub = split_episode(fake_episode(5, true, pool), 60)[0];
    auto result = windowed_bellman_loss(learner.online, learner.target, pool.store(), {{&sub, 0, 2, true}}, 0.99);
    nn::zero_grad(learner.online_params);
    nn::backward(result.loss);
    for (const auto& [name, p] : learner.target_params) EXPECT_FALSE(p.has_grad()) << name;
}

TEST(SequentialUpdate, LossAtLaterPositionTrainsEstimatorAndCnn)
{
    auto pool = fixtures::synthetic_pool();
    Rng rng(18);
    Learner learner(Network<float>::init(AgentVariant::M1, rng), 0.99, 0.005, {});
    const auto sub = split_episode(fake_episode(6, false, pool), 60)[0];
    auto result = windowed_bellman_loss(learner.online, learner.target, pool.store(), {{&sub, 0, 3, true}}, 0.99);
    nn::zero_grad(learner.online_params);
    nn::backward(result.loss);
    for (const auto& [name, p] : learner.online_params) {
        if (name.rfind("rnn.", 0) != 0 && name.rfind("cnn.", 0) != 0) continue;
        ASSERT_TRUE(p.has_grad()) << name;
        double norm = 0.0;
        for (float g : p.grad().values()) norm += std::abs(g);
        EXPECT_GT(norm, 0.0) << name;
    }
}

TEST(RandomUpdate, WindowPlacement)
{
    auto pool = fixtures::synthetic_pool();
    const auto open = split_episode(fake_episode(10, false, pool), 60)[0];
    const auto closed = split_episode(fake_episode(10, true, pool), 60)[0];
    auto t = window_targets({{&open, 2}, {&open, 0}, {&closed, 2}, {&closed, 0}}, 8);
    EXPECT_EQ(t[0].pos, 6u); // last window step has no successor inside the slice
    EXPECT_EQ(t[1].pos, 6u);
    EXPECT_EQ(t[2].pos, 7u); // terminal step is trainable
    EXPECT_EQ(t[3].pos, 6u);
    EXPECT_THROW(window_targets({{&open, 3}}, 8), std::out_of_range);
    EXPECT_THROW(window_targets({{&open, 0}}, 1), std::invalid_argument);
}

TEST(RandomUpdate, HeadWindowMatchesSequentialStep)
{
    auto pool = fixtures::synthetic_pool();
    Rng rng(9);
    const auto net = Network<float>::init(AgentVariant::M1, rng);
    const auto target = net.clone(false);
    const auto sub = split_episode(fake_episode(12, false, pool), 12)[0];
    nn::NoGradGuard guard;
    const auto windows = window_targets({{&sub, 0}}, 12);
    const float random_loss = windowed_bellman_loss(net, target, pool.store(), windows, 0.99).loss.value()[0];
    const float seq_loss = windowed_bellman_loss(net, target, pool.store(), {{&sub, 0, 10, true}}, 0.99).loss.value()[0];
    EXPECT_EQ(random_loss, seq_loss);
}

TEST(RandomUpdate, MidWindowUsesStoredEstimateAtItsStart)
{
    auto pool = fixtures::synthetic_pool();
    Rng rng(10);
    const auto net = Network<float>::init(AgentVariant::M1, rng);
    const auto target = net.clone(false);
    auto sub = split_episode(fake_episode(12, false, pool), 12)[0];
    nn::NoGradGuard guard;
    auto loss = [&](const SubEpisode& s) {
        return windowed_bellman_loss(net, target, pool.store(), window_targets({{&s, 3}}, 6), 0.99).loss.value()[0];
    };
    const float base = loss(sub);
    auto changed = sub;
    changed.steps[3].estimate = {0.0f, 1.0f};
    EXPECT_NE(loss(changed), base);
    changed = sub;
    changed.steps[0].estimate = {0.0f, 1.0f};
    EXPECT_EQ(loss(changed), base);
}

TEST(SequentialUpdate, StoredSeedsReplayBitExact)
{
    auto pool = fixtures::synthetic_pool();
    Rng init(11);
    const auto net = Network<float>::init(AgentVariant::M1, init);
    const ImageSource images{&pool, permutation(1)};
    Environment env;
    Rng rng(12);
    int checked = 0;
    for (std::uint64_t seed = 0; seed < 40; ++seed) {
        env.reset(seed);
        const Episode ep = rollout(net, env, images, 0.6, rng, 400);
        const auto replay = replay_estimates(net, pool.store(), ep);
        const auto subs = split_episode(ep, 4);
        for (std::size_t i = 1; i < subs.size(); ++i, ++checked) EXPECT_EQ(subs[i].seed(), replay[i * 4]);
    }
    EXPECT_GT(checked, 0);
}

TEST(SequentialUpdate, LossFallsOnFrozenBuffer)
{
    auto pool = fixtures::synthetic_pool();
    Rng rng(13);
    Learner learner(Network<float>::init(AgentVariant::M1, rng), 0.99, 0.005, nn::AdamConfig{1e-3});
    learner.gamma = 0.0;
    std::vector<SubEpisode> subs;
    for (std::uint64_t s = 0; s < 3; ++s) subs.push_back(split_episode(fake_episode(4, true, pool, s + 20), 60)[0]);
    const std::vector<const SubEpisode*> batch{&subs[0], &subs[1], &subs[2]};
    const auto first = sequential_update(learner, pool.store(), {batch[0]});
    double last = 0.0;
    for (int i = 0; i < 300; ++i)
        for (const auto* s : batch) last = sequential_update(learner, pool.store(), {s}).back();
    EXPECT_LT(last, first.back());
}

TEST(TrainerConfig, EpsilonSchedule)
{
    TrainerConfig c;
    c.total_updates = 1000;
    EXPECT_DOUBLE_EQ(c.epsilon_at(0), 1.0);
    EXPECT_NEAR(c.epsilon_at(50), 0.525, 1e-12);
    EXPECT_DOUBLE_EQ(c.epsilon_at(100), 0.05);
    EXPECT_DOUBLE_EQ(c.epsilon_at(900), 0.05);
    c.gamma = 0.0;
    EXPECT_THROW(c.validate(), std::invalid_argument);
    c.gamma = 0.99;
    c.total_updates = 0;
    EXPECT_THROW(c.validate(), std::invalid_argument);
}

namespace {

TrainerConfig tiny(AgentVariant v)
{
    TrainerConfig c;
    c.variant = v;
    c.total_updates = 1000;
    c.eval_every = 500;
    c.eval_episodes = 2;
    c.batch_size = 4;
    c.seq_len = 6;
    c.episodes_per_iteration = 2;
    c.batches_per_iteration = 10;
    c.max_steps = 40;
    return c;
}

} // namespace

TEST(Trainer, MetricCadence)
{
    auto pool = fixtures::synthetic_pool();
    Trainer trainer(tiny(AgentVariant::B2), pool, permutation(1), 3);
    trainer.run();
    ASSERT_EQ(trainer.metrics().size(), 2u);
    EXPECT_EQ(trainer.metrics()[0].update_count, 500u);
    EXPECT_EQ(trainer.metrics()[1].update_count, 1000u);
    EXPECT_EQ(trainer.updates(), 1000u);
}

TEST(Trainer, BufferSizeCappedAtCapacity)
{
    auto pool = fixtures::synthetic_pool();
    auto cfg = tiny(AgentVariant::B1);
    cfg.buffer_capacity = 50;
    Trainer trainer(cfg, pool, permutation(1), 4);
    trainer.run();
    EXPECT_EQ(trainer.transitions().size(), 50u);
    auto m1 = tiny(AgentVariant::M1);
    m1.buffer_capacity = 7;
    m1.total_updates = 200;
    m1.eval_every = 100;
    Trainer rec(m1, pool, permutation(1), 4);
    rec.run();
    EXPECT_EQ(rec.subepisodes().size(), 7u);
}

TEST(Trainer, SeededRunsRepeatExactly)
{
    auto pool = fixtures::synthetic_pool();
    for (AgentVariant v : {AgentVariant::B1, AgentVariant::M1}) {
        auto cfg = tiny(v);
        cfg.total_updates = 600;
        cfg.eval_every = 200;
        Trainer a(cfg, pool, permutation(1), 9), b(cfg, pool, permutation(1), 9);
        a.run();
        b.run();
        ASSERT_EQ(a.metrics().size(), b.metrics().size());
        for (std::size_t i = 0; i < a.metrics().size(); ++i) {
            EXPECT_EQ(a.metrics()[i].avg_return, b.metrics()[i].avg_return);
            EXPECT_EQ(a.metrics()[i].loss_mean, b.metrics()[i].loss_mean);
        }
    }
}

TEST(Evaluate, GreedyEvaluationIsRepeatable)
{
    auto pool = fixtures::synthetic_pool();
    Rng rng(14);
    const auto net = Network<float>::init(AgentVariant::B2, rng);
    const ImageSource images{&pool, permutation(1)};
    const auto a = evaluate(net, images, 10, 5, 400);
    const auto b = evaluate(net, images, 10, 5, 400);
    EXPECT_EQ(a.mean, b.mean);
    EXPECT_EQ(a.stddev, b.stddev);
}
