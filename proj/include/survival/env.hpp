#ifndef SURVIVAL_ENV_HPP
#define SURVIVAL_ENV_HPP

#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string_view>
#include <utility>

#include "survival/rng.hpp"

namespace survival {

enum class ObjectClass : std::uint8_t { None = 0, Predator = 1, Prey = 2, RottenFood = 3 };
enum class Action : std::uint8_t { Stay = 0, Run = 1, Eat = 2 };
enum class DeathCause : std::uint8_t { None = 0, Predator = 1, Hunger = 2, Sickness = 3 };

inline constexpr int kNumObjects = 4;
inline constexpr int kNumActions = 3;

inline constexpr std::array<ObjectClass, kNumObjects> kAllObjects{
    ObjectClass::None, ObjectClass::Predator, ObjectClass::Prey, ObjectClass::RottenFood};
inline constexpr std::array<Action, kNumActions> kAllActions{Action::Stay, Action::Run, Action::Eat};

constexpr int index_of(ObjectClass o) noexcept { return static_cast<int>(o); }
constexpr int index_of(Action a) noexcept { return static_cast<int>(a); }

inline ObjectClass object_from_index(int i)
{
    if (i < 0 || i >= kNumObjects) throw std::out_of_range("object class index out of range");
    return static_cast<ObjectClass>(i);
}

inline Action action_from_index(int i)
{
    if (i < 0 || i >= kNumActions) throw std::out_of_range("action index out of range");
    return static_cast<Action>(i);
}

constexpr std::string_view to_string(ObjectClass o) noexcept
{
    switch (o) {
    case ObjectClass::None: return "none";
    case ObjectClass::Predator: return "predator";
    case ObjectClass::Prey: return "prey";
    case ObjectClass::RottenFood: return "rotten_food";
    }
    return "?";
}

constexpr std::string_view to_string(Action a) noexcept
{
    switch (a) {
    case Action::Stay: return "stay";
    case Action::Run: return "run";
    case Action::Eat: return "eat";
    }
    return "?";
}

constexpr std::string_view to_string(DeathCause c) noexcept
{
    switch (c) {
    case DeathCause::None: return "none";
    case DeathCause::Predator: return "predator";
    case DeathCause::Hunger: return "hunger";
    case DeathCause::Sickness: return "sickness";
    }
    return "?";
}

/// Hidden levels live on a 0.05 grid, so they are stored as integer steps in [0, 20].
inline constexpr int kGridSteps = 20;
inline constexpr double kGridSpacing = 0.05;

class HiddenVars {
public:
    constexpr HiddenVars() noexcept = default;

    static constexpr HiddenVars from_steps(int hunger_steps, int sickness_steps)
    {
        if (hunger_steps < 0 || hunger_steps > kGridSteps || sickness_steps < 0 ||
            sickness_steps > kGridSteps)
            throw std::out_of_range("hidden level outside [0, 1]");
        HiddenVars h;
        h.hunger_ = static_cast<std::int8_t>(hunger_steps);
        h.sickness_ = static_cast<std::int8_t>(sickness_steps);
        return h;
    }

    /// Throws std::invalid_argument unless both values sit on the 0.05 grid in [0, 1].
    static HiddenVars from_values(double hunger, double sickness)
    {
        return from_steps(level_to_steps(hunger), level_to_steps(sickness));
    }

    static int level_to_steps(double level)
    {
        const double scaled = level / kGridSpacing;
        const double rounded = std::round(scaled);
        if (!(std::abs(scaled - rounded) <= 1e-6) || rounded < 0 || rounded > kGridSteps)
            throw std::invalid_argument("hidden level is off the 0.05 grid or outside [0, 1]");
        return static_cast<int>(rounded);
    }

    constexpr int hunger_steps() const noexcept { return hunger_; }
    constexpr int sickness_steps() const noexcept { return sickness_; }
    constexpr double hunger() const noexcept { return hunger_ * kGridSpacing; }
    constexpr double sickness() const noexcept { return sickness_ * kGridSpacing; }

    friend constexpr bool operator==(HiddenVars, HiddenVars) noexcept = default;

private:
    std::int8_t hunger_ = 0;
    std::int8_t sickness_ = 0;
};

using ObjectRow = std::array<double, kNumObjects>;

/// Change applied to one hidden variable; `reset` sets it to zero.
struct HiddenDelta {
    bool reset = false;
    int steps = 0;
    friend constexpr bool operator==(HiddenDelta, HiddenDelta) noexcept = default;
};

struct HiddenEffect {
    HiddenDelta hunger;
    HiddenDelta sickness;
    friend constexpr bool operator==(HiddenEffect, HiddenEffect) noexcept = default;
};

/// All dynamics constants of the environment. `reference_tables()` holds the
/// published values; the struct is a value so conformance checks can be run
/// against modified copies.
struct TransitionTables {
    double prey_share = 0.65;   // a
    double rotten_share = 0.35; // b
    std::array<std::array<ObjectRow, kNumActions>, kNumObjects> object_rows{};
    std::array<std::array<HiddenEffect, kNumActions>, kNumObjects> hidden_effects{};
    std::array<double, kNumActions> predator_hazard{};
    /// Hazard indexed by grid step 0..20 (shared by hunger and sickness).
    std::array<double, kGridSteps + 1> level_hazard{};
    int init_max_steps = 10; // initial levels uniform over {0, 0.05, ..., 0.50}

    friend bool operator==(const TransitionTables&, const TransitionTables&) = default;
};

inline TransitionTables reference_tables()
{
    TransitionTables t;
    const double a = t.prey_share;
    const double b = t.rotten_share;
    auto row = [&](double none, double predator, double rest) {
        return ObjectRow{none, predator, rest * a, rest * b};
    };
    using O = ObjectClass;
    using A = Action;
    auto set = [&](O o, A act, ObjectRow r) { t.object_rows[index_of(o)][index_of(act)] = r; };

    set(O::None, A::Stay, row(0.3, 0.35, 0.35));
    set(O::None, A::Eat, row(0.3, 0.35, 0.35));
    set(O::None, A::Run, row(0.3, 0.25, 0.45));
    set(O::Predator, A::Stay, row(0.45, 0.2, 0.35));
    set(O::Predator, A::Eat, row(0.45, 0.2, 0.35));
    set(O::Predator, A::Run, row(0.55, 0.1, 0.35));
    for (O o : {O::Prey, O::RottenFood}) {
        set(o, A::Stay, row(0.25, 0.35, 0.4));
        set(o, A::Eat, row(0.45, 0.35, 0.2));
        set(o, A::Run, row(0.45, 0.35, 0.2));
    }

    constexpr HiddenDelta reset{true, 0};
    for (O o : kAllObjects) {
        t.hidden_effects[index_of(o)][index_of(A::Stay)] = {{false, 1}, {false, -1}};
        t.hidden_effects[index_of(o)][index_of(A::Run)] = {{false, 3}, {false, 2}};
    }
    t.hidden_effects[index_of(O::None)][index_of(A::Eat)] = {{false, 1}, {false, 1}};
    t.hidden_effects[index_of(O::Predator)][index_of(A::Eat)] = {reset, {false, 1}};
    t.hidden_effects[index_of(O::Prey)][index_of(A::Eat)] = {reset, {false, 1}};
    t.hidden_effects[index_of(O::RottenFood)][index_of(A::Eat)] = {reset, {false, 5}};

    t.predator_hazard[index_of(A::Stay)] = 0.6;
    t.predator_hazard[index_of(A::Eat)] = 0.7;
    t.predator_hazard[index_of(A::Run)] = 0.0;

    t.level_hazard.fill(0.0);
    t.level_hazard[15] = 0.05;
    t.level_hazard[16] = 0.1;
    t.level_hazard[17] = 0.2;
    t.level_hazard[18] = 0.4;
    t.level_hazard[19] = 0.7;
    t.level_hazard[20] = 1.0;
    return t;
}

inline const TransitionTables& default_tables()
{
    static const TransitionTables tables = reference_tables();
    return tables;
}

inline ObjectRow object_transition_row(ObjectClass object, Action action,
                                       const TransitionTables& tables = default_tables())
{
    return tables.object_rows[index_of(object)][index_of(action)];
}

inline HiddenVars hidden_transition(HiddenVars hidden, ObjectClass object, Action action,
                                    const TransitionTables& tables = default_tables())
{
    const HiddenEffect& e = tables.hidden_effects[index_of(object)][index_of(action)];
    auto apply = [](int current, HiddenDelta d) {
        const int next = d.reset ? 0 : current + d.steps;
        return next < 0 ? 0 : (next > kGridSteps ? kGridSteps : next);
    };
    return HiddenVars::from_steps(apply(hidden.hunger_steps(), e.hunger),
                                  apply(hidden.sickness_steps(), e.sickness));
}

/// Hazard for a hunger or sickness level. Throws std::invalid_argument off the grid.
inline double level_hazard(double level, const TransitionTables& tables = default_tables())
{
    return tables.level_hazard[static_cast<std::size_t>(HiddenVars::level_to_steps(level))];
}

struct TerminalOutcome {
    bool terminated = false;
    DeathCause cause = DeathCause::None;
};

/// Three independent Bernoulli draws (predator, hunger, sickness), always
/// consumed in that order so the rng stream does not depend on the outcome.
inline TerminalOutcome terminal_check(ObjectClass object, Action action, HiddenVars next_hidden,
                                      Rng& rng, const TransitionTables& tables = default_tables())
{
    const double p_predator =
        object == ObjectClass::Predator ? tables.predator_hazard[index_of(action)] : 0.0;
    const double p_hunger = tables.level_hazard[static_cast<std::size_t>(next_hidden.hunger_steps())];
    const double p_sickness =
        tables.level_hazard[static_cast<std::size_t>(next_hidden.sickness_steps())];

    const bool by_predator = rng.bernoulli(p_predator);
    const bool by_hunger = rng.bernoulli(p_hunger);
    const bool by_sickness = rng.bernoulli(p_sickness);

    if (by_predator) return {true, DeathCause::Predator};
    if (by_hunger) return {true, DeathCause::Hunger};
    if (by_sickness) return {true, DeathCause::Sickness};
    return {};
}

/// Overload taking raw levels; rejects values that are not on the 0.05 grid.
inline TerminalOutcome terminal_check(ObjectClass object, Action action, double next_hunger,
                                      double next_sickness, Rng& rng,
                                      const TransitionTables& tables = default_tables())
{
    return terminal_check(object, action, HiddenVars::from_values(next_hunger, next_sickness), rng,
                          tables);
}

inline ObjectClass sample_object(const ObjectRow& row, Rng& rng)
{
    const double u = rng.uniform();
    double cumulative = 0.0;
    for (int i = 0; i < kNumObjects - 1; ++i) {
        cumulative += row[static_cast<std::size_t>(i)];
        if (u < cumulative) return static_cast<ObjectClass>(i);
    }
    return static_cast<ObjectClass>(kNumObjects - 1);
}

struct EnvState {
    ObjectClass object = ObjectClass::None;
    HiddenVars hidden;
    std::int64_t time = 1;
    bool terminated = false;
    Rng rng;

    friend bool operator==(const EnvState&, const EnvState&) = default;
};

struct StepResult {
    ObjectClass object = ObjectClass::None;
    HiddenVars hidden;
    double reward = 1.0;
    bool terminated = false;
    DeathCause cause = DeathCause::None;
};

/// What the agent is allowed to see: the object (rendered as an image by the
/// dataset module) and, on the first step only, the hidden levels.
struct Observation {
    ObjectClass object = ObjectClass::None;
    std::optional<HiddenVars> initial_hidden;
    std::int64_t time = 1;
};

inline EnvState reset(std::uint64_t seed, const TransitionTables& tables = default_tables())
{
    EnvState s;
    s.rng = Rng(seed);
    s.object = static_cast<ObjectClass>(s.rng.below(kNumObjects));
    const auto levels = static_cast<std::uint64_t>(tables.init_max_steps + 1);
    const int hunger = static_cast<int>(s.rng.below(levels));
    const int sickness = static_cast<int>(s.rng.below(levels));
    s.hidden = HiddenVars::from_steps(hunger, sickness);
    s.time = 1;
    s.terminated = false;
    return s;
}

/// Order: hidden update, terminal check against the object just faced, then
/// the next object draw (performed even when the step is terminal).
inline StepResult step(EnvState& state, Action action, const TransitionTables& tables = default_tables())
{
    if (state.terminated) throw std::logic_error("step() called on a terminated episode");
    const HiddenVars next_hidden = hidden_transition(state.hidden, state.object, action, tables);
    const TerminalOutcome outcome = terminal_check(state.object, action, next_hidden, state.rng, tables);
    const ObjectClass next_object =
        sample_object(tables.object_rows[index_of(state.object)][index_of(action)], state.rng);

    state.object = next_object;
    state.hidden = next_hidden;
    state.time += 1;
    state.terminated = outcome.terminated;
    return StepResult{next_object, next_hidden, 1.0, outcome.terminated, outcome.cause};
}

inline Observation observe(const EnvState& state)
{
    Observation obs;
    obs.object = state.object;
    obs.time = state.time;
    if (state.time == 1) obs.initial_hidden = state.hidden;
    return obs;
}

/// Owning wrapper around EnvState for a single episode stream.
class Environment {
public:
    explicit Environment(TransitionTables tables = reference_tables()) : tables_(std::move(tables)) {}

    const EnvState& reset(std::uint64_t seed)
    {
        state_ = survival::reset(seed, tables_);
        return state_;
    }
    StepResult step(Action action) { return survival::step(state_, action, tables_); }
    Observation observe() const { return survival::observe(state_); }

    const EnvState& state() const noexcept { return state_; }
    const TransitionTables& tables() const noexcept { return tables_; }

private:
    TransitionTables tables_;
    EnvState state_;
};

} // namespace survival

#endif
