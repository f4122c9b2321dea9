#include <gtest/gtest.h>

#include <array>
#include <cmath>
#include <set>

#include "survival/env.hpp"

using namespace survival;
using O = ObjectClass;
using A = Action;

namespace {

// Literal transcription of the published object table, a and b substituted here.
ObjectRow published_row(O o, A act)
{
    const double a = 0.65, b = 0.35;
    auto r = [&](double n, double p, double k) { return ObjectRow{n, p, k * a, k * b}; };
    switch (o) {
    case O::None: return act == A::Run ? r(0.3, 0.25, 0.45) : r(0.3, 0.35, 0.35);
    case O::Predator: return act == A::Run ? r(0.55, 0.1, 0.35) : r(0.45, 0.2, 0.35);
    case O::Prey:
    case O::RottenFood: return act == A::Stay ? r(0.25, 0.35, 0.4) : r(0.45, 0.35, 0.2);
    }
    return {};
}

HiddenVars hv(double h, double s) { return HiddenVars::from_values(h, s); }

} // namespace

TEST(ObjectTable, MatchesPublishedRows)
{
    for (O o : kAllObjects)
        for (A a : kAllActions) {
            const auto row = object_transition_row(o, a);
            const auto want = published_row(o, a);
            for (std::size_t k = 0; k < 4; ++k) EXPECT_NEAR(row[k], want[k], 1e-15);
        }
    const auto pr = object_transition_row(O::Predator, A::Run);
    EXPECT_NEAR(pr[0], 0.55, 1e-12);
    EXPECT_NEAR(pr[1], 0.1, 1e-12);
    EXPECT_NEAR(pr[2], 0.2275, 1e-12);
    EXPECT_NEAR(pr[3], 0.1225, 1e-12);
    const auto ns = object_transition_row(O::None, A::Stay);
    EXPECT_NEAR(ns[0], 0.3, 1e-12);
    EXPECT_NEAR(ns[1], 0.35, 1e-12);
    EXPECT_NEAR(ns[2], 0.2275, 1e-12);
    EXPECT_NEAR(ns[3], 0.1225, 1e-12);
}

TEST(ObjectTable, EveryRowSumsToOne)
{
    for (O o : kAllObjects)
        for (A a : kAllActions) {
            const auto row = object_transition_row(o, a);
            EXPECT_NEAR(row[0] + row[1] + row[2] + row[3], 1.0, 1e-12) << to_string(o) << "/" << to_string(a);
        }
}

TEST(ObjectTable, EmpiricalFrequenciesMatchTable)
{
    Rng rng(2024);
    constexpr int kDraws = 100000;
    for (O o : kAllObjects)
        for (A a : kAllActions) {
            std::array<int, 4> counts{};
            const auto row = object_transition_row(o, a);
            for (int i = 0; i < kDraws; ++i) ++counts[static_cast<std::size_t>(index_of(sample_object(row, rng)))];
            for (std::size_t k = 0; k < 4; ++k) EXPECT_NEAR(counts[k] / double(kDraws), row[k], 0.01);
        }
}

TEST(HiddenTransition, PublishedExamples)
{
    EXPECT_EQ(hidden_transition(hv(0.30, 0.20), O::RottenFood, A::Eat), hv(0.00, 0.45));
    EXPECT_EQ(hidden_transition(hv(0.95, 0.00), O::None, A::Stay), hv(1.00, 0.00));
    EXPECT_EQ(hidden_transition(hv(0.10, 0.50), O::Prey, A::Run), hv(0.25, 0.60));
    EXPECT_EQ(hidden_transition(hv(0.70, 0.10), O::Predator, A::Eat), hv(0.00, 0.15));
    EXPECT_EQ(hidden_transition(hv(0.70, 0.10), O::None, A::Eat), hv(0.75, 0.15));
    EXPECT_EQ(hidden_transition(hv(0.90, 0.95), O::None, A::Run), hv(1.00, 1.00));
}

TEST(HiddenTransition, StaysOnGridUnderRandomActions)
{
    Rng rng(7);
    for (int episode = 0; episode < 200; ++episode) {
        EnvState s = reset(rng());
        for (int t = 0; t < 100 && !s.terminated; ++t) {
            step(s, action_from_index(static_cast<int>(rng.below(3))));
            const double h = s.hidden.hunger(), k = s.hidden.sickness();
            EXPECT_NO_THROW(HiddenVars::from_values(h, k));
            EXPECT_GE(h, 0.0);
            EXPECT_LE(h, 1.0);
            EXPECT_GE(k, 0.0);
            EXPECT_LE(k, 1.0);
        }
    }
}

TEST(HiddenVars, OffGridValuesAreRejected)
{
    EXPECT_THROW(HiddenVars::from_values(0.33, 0.1), std::invalid_argument);
    EXPECT_THROW(HiddenVars::from_values(0.1, 1.05), std::invalid_argument);
    EXPECT_THROW(level_hazard(0.72), std::invalid_argument);
    Rng rng(1);
    EXPECT_THROW(terminal_check(O::Prey, A::Stay, 0.5, 0.51, rng), std::invalid_argument);
}

TEST(Terminal, LevelHazardThresholds)
{
    for (int k = 0; k <= 14; ++k) EXPECT_EQ(level_hazard(k * 0.05), 0.0) << k;
    EXPECT_EQ(level_hazard(0.75), 0.05);
    EXPECT_EQ(level_hazard(0.80), 0.1);
    EXPECT_EQ(level_hazard(0.85), 0.2);
    EXPECT_EQ(level_hazard(0.90), 0.4);
    EXPECT_EQ(level_hazard(0.95), 0.7);
    EXPECT_EQ(level_hazard(1.00), 1.0);
}

TEST(Terminal, PredatorHazardRates)
{
    constexpr int kTrials = 100000;
    auto rate = [](A a) {
        Rng rng(99);
        int dead = 0;
        for (int i = 0; i < kTrials; ++i) dead += terminal_check(O::Predator, a, hv(0.0, 0.0), rng).terminated;
        return dead / double(kTrials);
    };
    EXPECT_NEAR(rate(A::Stay), 0.6, 0.01);
    EXPECT_NEAR(rate(A::Eat), 0.7, 0.01);
    EXPECT_EQ(rate(A::Run), 0.0);
}

TEST(Terminal, FullHungerIsCertainDeath)
{
    Rng rng(3);
    for (O o : kAllObjects)
        for (A a : kAllActions)
            for (int i = 0; i < 100; ++i) {
                const auto out = terminal_check(o, a, hv(1.0, 0.0), rng);
                EXPECT_TRUE(out.terminated);
                if (o != O::Predator || a == A::Run) EXPECT_EQ(out.cause, DeathCause::Hunger);
            }
}

TEST(Terminal, SafeLevelsNeverTerminateWithoutPredator)
{
    Rng rng(4);
    for (int i = 0; i < 10000; ++i) {
        const auto out = terminal_check(O::Prey, A::Stay, hv(0.5, 0.5), rng);
        EXPECT_FALSE(out.terminated);
        EXPECT_EQ(out.cause, DeathCause::None);
    }
}

TEST(Terminal, CausePriority)
{
    Rng rng(5);
    bool saw_predator_with_full_hunger = false;
    for (int i = 0; i < 200; ++i) {
        const auto out = terminal_check(O::Predator, A::Stay, hv(1.0, 1.0), rng);
        EXPECT_TRUE(out.terminated);
        EXPECT_NE(out.cause, DeathCause::Sickness);
        saw_predator_with_full_hunger |= out.cause == DeathCause::Predator;
    }
    EXPECT_TRUE(saw_predator_with_full_hunger);
    for (int i = 0; i < 50; ++i) EXPECT_EQ(terminal_check(O::None, A::Stay, hv(0.0, 1.0), rng).cause, DeathCause::Sickness);
}

TEST(Reset, InitialDistribution)
{
    std::array<int, 4> objects{};
    constexpr int kResets = 44000;
    for (int i = 0; i < kResets; ++i) {
        const EnvState s = reset(derive_seed(17, static_cast<std::uint64_t>(i)));
        ++objects[static_cast<std::size_t>(index_of(s.object))];
        EXPECT_LE(s.hidden.hunger_steps(), 10);
        EXPECT_LE(s.hidden.sickness_steps(), 10);
        EXPECT_EQ(s.time, 1);
    }
    for (int c : objects) {
        EXPECT_GE(c / double(kResets), 0.24);
        EXPECT_LE(c / double(kResets), 0.26);
    }
}

TEST(Reset, SameSeedSameState)
{
    EXPECT_EQ(reset(123), reset(123));
    EXPECT_NE(reset(123).rng, reset(124).rng);
}

TEST(Step, RottenFoodEatCannotTerminate)
{
    for (std::uint64_t seed = 0; seed < 500; ++seed) {
        EnvState s = reset(seed);
        s.object = O::RottenFood;
        s.hidden = hv(0.3, 0.2);
        const StepResult r = step(s, A::Eat);
        EXPECT_EQ(r.hidden, hv(0.0, 0.45));
        EXPECT_FALSE(r.terminated);
        EXPECT_EQ(r.reward, 1.0);
    }
}

TEST(Step, RewardAndTimeAdvance)
{
    EnvState s = reset(8);
    std::int64_t t = s.time;
    while (!s.terminated) {
        const StepResult r = step(s, A::Stay);
        EXPECT_EQ(r.reward, 1.0);
        EXPECT_EQ(r.terminated, r.cause != DeathCause::None);
        EXPECT_EQ(s.time, ++t);
    }
    EXPECT_THROW(step(s, A::Stay), std::logic_error);
}

TEST(Step, DeterministicTrajectory)
{
    auto run = [] {
        EnvState s = reset(55);
        std::vector<int> trace;
        const A plan[] = {A::Stay, A::Eat, A::Run};
        for (int i = 0; i < 60 && !s.terminated; ++i) {
            const StepResult r = step(s, plan[i % 3]);
            trace.push_back(index_of(r.object) * 1000 + r.hidden.hunger_steps() * 30 + r.hidden.sickness_steps());
        }
        return trace;
    };
    EXPECT_EQ(run(), run());
}

TEST(Step, AlwaysRunEndsWithinBound)
{
    // Hunger climbs 0.15 per Run step, so from 0 it saturates after ceil(1/0.15) steps.
    const int bound = static_cast<int>(std::ceil(1.0 / 0.15)) + 1;
    for (std::uint64_t seed = 0; seed < 200; ++seed) {
        EnvState s = reset(seed);
        s.hidden = hv(0.0, 0.0);
        int n = 0;
        while (!s.terminated) {
            step(s, A::Run);
            ++n;
        }
        EXPECT_LE(n, bound);
    }
}

TEST(Observe, HiddenOnlyAtFirstStep)
{
    Environment env;
    env.reset(77);
    auto first = env.observe();
    ASSERT_TRUE(first.initial_hidden.has_value());
    EXPECT_EQ(*first.initial_hidden, env.state().hidden);
    for (int i = 0; i < 4 && !env.state().terminated; ++i) env.step(A::Run);
    if (!env.state().terminated) {
        EXPECT_FALSE(env.observe().initial_hidden.has_value());
        EXPECT_EQ(env.observe().time, 5);
    }
}

TEST(Tables, TamperedCopyDiffers)
{
    auto t = reference_tables();
    EXPECT_EQ(t, default_tables());
    t.predator_hazard[index_of(A::Stay)] = 0.5;
    EXPECT_NE(t, default_tables());
}
