#ifndef SURVIVAL_HARNESS_CONFORMANCE_HPP
#define SURVIVAL_HARNESS_CONFORMANCE_HPP

#include <array>
#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

#include "json.hpp"
#include "survival/env.hpp"

namespace survival::harness {

using json = nlohmann::json;

struct CheckResult {
    std::string name;
    bool passed = false;
    std::string detail;
};

// ------------------------------------------------------------ table JSON

inline json tables_to_json(const TransitionTables& t)
{
    json rows = json::object(), effects = json::object(), hazard = json::object();
    auto delta = [](HiddenDelta d) { return json{{"reset", d.reset}, {"steps", d.steps}}; };
    for (ObjectClass o : kAllObjects) {
        const std::string on(to_string(o));
        for (Action a : kAllActions) {
            const std::string an(to_string(a));
            rows[on][an] = t.object_rows[index_of(o)][index_of(a)];
            const auto& e = t.hidden_effects[index_of(o)][index_of(a)];
            effects[on][an] = {{"hunger", delta(e.hunger)}, {"sickness", delta(e.sickness)}};
        }
    }
    for (Action a : kAllActions) hazard[std::string(to_string(a))] = t.predator_hazard[index_of(a)];
    return json{{"prey_share", t.prey_share},
                {"rotten_share", t.rotten_share},
                {"object_order", {"none", "predator", "prey", "rotten_food"}},
                {"object_rows", rows},
                {"hidden_effects", effects},
                {"predator_hazard", hazard},
                {"level_hazard", t.level_hazard},
                {"init_max_steps", t.init_max_steps}};
}

inline TransitionTables tables_from_json(const json& j)
{
    TransitionTables t;
    try {
        t.prey_share = j.at("prey_share").get<double>();
        t.rotten_share = j.at("rotten_share").get<double>();
        for (ObjectClass o : kAllObjects) {
            const std::string on(to_string(o));
            for (Action a : kAllActions) {
                const std::string an(to_string(a));
                t.object_rows[index_of(o)][index_of(a)] = j.at("object_rows").at(on).at(an).get<ObjectRow>();
                const json& e = j.at("hidden_effects").at(on).at(an);
                auto delta = [](const json& d) { return HiddenDelta{d.at("reset").get<bool>(), d.at("steps").get<int>()}; };
                t.hidden_effects[index_of(o)][index_of(a)] = {delta(e.at("hunger")), delta(e.at("sickness"))};
            }
        }
        for (Action a : kAllActions)
            t.predator_hazard[index_of(a)] = j.at("predator_hazard").at(std::string(to_string(a))).get<double>();
        t.level_hazard = j.at("level_hazard").get<std::array<double, kGridSteps + 1>>();
        t.init_max_steps = j.at("init_max_steps").get<int>();
    } catch (const json::exception& e) {
        throw std::invalid_argument(std::string("bad transition table JSON: ") + e.what());
    }
    return t;
}

// ------------------------------------------------------------ published values

namespace published {

// Object transition probabilities over (none, predator, prey, rotten food),
// written out numerically with a = 0.65, b = 0.35.
inline constexpr double kRows[kNumObjects][kNumActions][kNumObjects] = {
    // none: stay, run, eat
    {{0.30, 0.35, 0.2275, 0.1225}, {0.30, 0.25, 0.2925, 0.1575}, {0.30, 0.35, 0.2275, 0.1225}},
    // predator
    {{0.45, 0.20, 0.2275, 0.1225}, {0.55, 0.10, 0.2275, 0.1225}, {0.45, 0.20, 0.2275, 0.1225}},
    // prey
    {{0.25, 0.35, 0.26, 0.14}, {0.45, 0.35, 0.13, 0.07}, {0.45, 0.35, 0.13, 0.07}},
    // rotten food
    {{0.25, 0.35, 0.26, 0.14}, {0.45, 0.35, 0.13, 0.07}, {0.45, 0.35, 0.13, 0.07}},
};

// {hunger reset, hunger delta, sickness reset, sickness delta} in grid steps.
inline constexpr int kEffects[kNumObjects][kNumActions][4] = {
    {{0, 1, 0, -1}, {0, 3, 0, 2}, {0, 1, 0, 1}},
    {{0, 1, 0, -1}, {0, 3, 0, 2}, {1, 0, 0, 1}},
    {{0, 1, 0, -1}, {0, 3, 0, 2}, {1, 0, 0, 1}},
    {{0, 1, 0, -1}, {0, 3, 0, 2}, {1, 0, 0, 5}},
};

inline constexpr double kPredatorHazard[kNumActions] = {0.6, 0.0, 0.7}; // stay, run, eat

inline constexpr double kLevelHazard[kGridSteps + 1] = {0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0,
                                                        0.05, 0.1, 0.2, 0.4, 0.7, 1.0};

} // namespace published

namespace detail {

inline std::string fmt(const char* f, double a, double b = 0, double c = 0)
{
    char buf[160];
    std::snprintf(buf, sizeof buf, f, a, b, c);
    return buf;
}

inline std::string cell_name(ObjectClass o, Action a)
{
    return std::string(to_string(o)) + "/" + std::string(to_string(a));
}

inline EnvState state_with(ObjectClass o, int hunger_steps, int sickness_steps, Rng& rng)
{
    EnvState s;
    s.object = o;
    s.hidden = HiddenVars::from_steps(hunger_steps, sickness_steps);
    s.rng = rng.split();
    return s;
}

} // namespace detail

/// Environment conformance against the published dynamics. Analytic checks
/// read `tables` directly; Monte-Carlo checks drive `step()` with it.
inline std::vector<CheckResult> env_conformance(const TransitionTables& tables, std::uint64_t seed = 2024,
                                                std::size_t samples = 100'000)
{
    std::vector<CheckResult> out;
    Rng rng(seed);

    {
        CheckResult c{"object rows sum to 1", true, "12 rows"};
        for (ObjectClass o : kAllObjects)
            for (Action a : kAllActions) {
                double sum = 0.0;
                for (double p : tables.object_rows[index_of(o)][index_of(a)]) sum += p;
                if (std::abs(sum - 1.0) > 1e-12) {
                    c.passed = false;
                    c.detail = detail::cell_name(o, a) + detail::fmt(" sums to %.12f", sum);
                }
            }
        out.push_back(c);
    }
    {
        CheckResult c{"object rows match published table", true, "exact to 1e-12"};
        for (ObjectClass o : kAllObjects)
            for (Action a : kAllActions)
                for (int k = 0; k < kNumObjects; ++k) {
                    const double got = tables.object_rows[index_of(o)][index_of(a)][static_cast<std::size_t>(k)];
                    const double want = published::kRows[index_of(o)][index_of(a)][k];
                    if (std::abs(got - want) > 1e-12) {
                        c.passed = false;
                        c.detail = detail::cell_name(o, a) + "->" + std::string(to_string(object_from_index(k))) +
                                   detail::fmt(": %.6f, expected %.6f", got, want);
                    }
                }
        out.push_back(c);
    }
    {
        CheckResult c{"hidden-variable effects match published table", true, "all 12 cells"};
        for (ObjectClass o : kAllObjects)
            for (Action a : kAllActions) {
                const auto& e = tables.hidden_effects[index_of(o)][index_of(a)];
                const auto& w = published::kEffects[index_of(o)][index_of(a)];
                const bool ok = e.hunger.reset == (w[0] != 0) && (e.hunger.reset || e.hunger.steps == w[1]) &&
                                e.sickness.reset == (w[2] != 0) && (e.sickness.reset || e.sickness.steps == w[3]);
                if (!ok) {
                    c.passed = false;
                    c.detail = detail::cell_name(o, a) + " differs";
                }
            }
        out.push_back(c);
    }
    {
        CheckResult c{"hazards match published values", true, "predator and level hazards"};
        for (Action a : kAllActions)
            if (tables.predator_hazard[index_of(a)] != published::kPredatorHazard[index_of(a)]) {
                c.passed = false;
                c.detail = "predator hazard for " + std::string(to_string(a));
            }
        for (int s = 0; s <= kGridSteps; ++s)
            if (tables.level_hazard[static_cast<std::size_t>(s)] != published::kLevelHazard[s]) {
                c.passed = false;
                c.detail = detail::fmt("level hazard at %.2f", s * kGridSpacing);
            }
        if (tables.init_max_steps != 10) {
            c.passed = false;
            c.detail = "initial levels are not uniform over 0..0.5";
        }
        out.push_back(c);
    }
    {
        CheckResult c{"Monte-Carlo next-object frequencies within 0.01", true, ""};
        double worst = 0.0;
        for (ObjectClass o : kAllObjects)
            for (Action a : kAllActions) {
                std::array<std::size_t, kNumObjects> counts{};
                EnvState s = detail::state_with(o, 0, 0, rng);
                for (std::size_t i = 0; i < samples; ++i) {
                    s.object = o;
                    s.hidden = HiddenVars::from_steps(0, 0);
                    s.terminated = false;
                    step(s, a, tables);
                    ++counts[static_cast<std::size_t>(index_of(s.object))];
                }
                for (int k = 0; k < kNumObjects; ++k) {
                    const double freq = static_cast<double>(counts[static_cast<std::size_t>(k)]) / static_cast<double>(samples);
                    const double err = std::abs(freq - published::kRows[index_of(o)][index_of(a)][k]);
                    if (err > worst) worst = err;
                    if (err > 0.01) {
                        c.passed = false;
                        c.detail = detail::cell_name(o, a) + "->" + std::string(to_string(object_from_index(k))) +
                                   detail::fmt(": %.4f vs %.4f", freq, published::kRows[index_of(o)][index_of(a)][k]);
                    }
                }
            }
        if (c.passed) c.detail = detail::fmt("max deviation %.4f", worst);
        out.push_back(c);
    }
    {
        CheckResult c{"predator/stay termination rate 0.6 +- 0.01", true, ""};
        std::size_t deaths = 0;
        EnvState s = detail::state_with(ObjectClass::Predator, 0, 0, rng);
        for (std::size_t i = 0; i < samples; ++i) {
            s.object = ObjectClass::Predator;
            s.hidden = HiddenVars::from_steps(0, 0);
            s.terminated = false;
            if (step(s, Action::Stay, tables).terminated) ++deaths;
        }
        const double rate = static_cast<double>(deaths) / static_cast<double>(samples);
        c.passed = std::abs(rate - 0.6) <= 0.01;
        c.detail = detail::fmt("rate %.4f", rate);
        out.push_back(c);
    }
    {
        CheckResult c{"hunger or sickness 1.0 is certain death", true, ""};
        std::size_t survived = 0;
        const std::size_t n = samples / 10;
        for (Action a : kAllActions) {
            for (std::size_t i = 0; i < n; ++i) {
                // Run adds to both levels, so starting at the top stays at 1.0.
                EnvState hs = detail::state_with(ObjectClass::None, kGridSteps, 0, rng);
                EnvState ss = detail::state_with(ObjectClass::None, 0, kGridSteps, rng);
                if (a != Action::Eat && !step(hs, a, tables).terminated) ++survived;
                if (a == Action::Run && !step(ss, a, tables).terminated) ++survived;
            }
        }
        c.passed = survived == 0;
        c.detail = std::to_string(survived) + " survivals";
        out.push_back(c);
    }
    return out;
}

inline bool all_passed(const std::vector<CheckResult>& checks)
{
    for (const auto& c : checks)
        if (!c.passed) return false;
    return true;
}

} // namespace survival::harness

#endif
