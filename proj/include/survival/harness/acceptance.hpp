#ifndef SURVIVAL_HARNESS_ACCEPTANCE_HPP
#define SURVIVAL_HARNESS_ACCEPTANCE_HPP

#include <algorithm>
#include <chrono>
#include <cstring>
#include <iomanip>
#include <cmath>
#include <functional>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "survival/harness/commands.hpp"
#include "survival/harness/conformance.hpp"
#include "survival/nn/gradcheck.hpp"

namespace survival::harness {

enum class Profile { Desk, Full };

inline Profile parse_profile(std::string_view s)
{
    if (s == "desk") return Profile::Desk;
    if (s == "full") return Profile::Full;
    throw std::invalid_argument("profile must be 'desk' or 'full', got '" + std::string(s) + "'");
}

struct AcceptanceOptions {
    Profile profile = Profile::Desk;
    fs::path artifacts = "artifacts";
    std::optional<fs::path> data_dir;
    TransitionTables tables = reference_tables();
    std::set<int> criteria{1, 2, 3, 4, 5, 6, 7, 8};
    bool verbose = false;
};

struct CriterionResult {
    int id = 0;
    std::string name;
    bool passed = false;
    std::string detail;
    double seconds = 0.0;
};

inline std::string format_line(const CriterionResult& r)
{
    std::ostringstream ss;
    ss << (r.passed ? "PASS" : "FAIL") << "  criterion " << r.id << "  " << r.name << "  | " << r.detail << "  ["
       << std::fixed << std::setprecision(1) << r.seconds << "s]";
    return ss.str();
}

// Tolerances, pinned.
namespace tol {
inline constexpr double kConformanceSeconds = 60;
inline constexpr double kGradRelError = 1e-4;
inline constexpr double kGradStep = 1e-4;
inline constexpr int kGradParameterizations = 100;
inline constexpr double kGradSeconds = 120;
inline constexpr double kOrderingMargin = 0.5; // B1 >= 1.5 * B2
inline constexpr double kProbeB1 = 85.0; // percent
inline constexpr double kProbeM1 = 80.0;
inline constexpr double kProbeGap = 5.0; // B2 <= M1 - 5 points
inline constexpr double kCorrHunger = 0.85;
inline constexpr double kCorrSickness = 0.80;
inline constexpr double kResidual = 1e-3;
inline constexpr std::size_t kResidualUpdates = 5000;
inline constexpr double kFidelitySeconds = 60;
inline constexpr double kSicknessTv = 0.1;
inline constexpr double kProbeSeconds = 300;       // per checkpoint
inline constexpr double kCorrelationSeconds = 120; // per checkpoint
inline constexpr double kDependencySeconds = 120;  // per checkpoint
inline constexpr std::size_t kEvalRollouts = 200;
} // namespace tol

namespace detail {

inline std::string f3(double v)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3f", v);
    return buf;
}

inline std::string sci(double v)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2e", v);
    return buf;
}

template <class Fn>
CriterionResult timed(int id, std::string name, Fn&& fn)
{
    CriterionResult r;
    r.id = id;
    r.name = std::move(name);
    const auto t0 = std::chrono::steady_clock::now();
    try {
        fn(r);
    } catch (const std::exception& e) {
        r.passed = false;
        r.detail = std::string("error: ") + e.what();
    }
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return r;
}

/// Noise images with a per-digit brightness offset; no dataset needed.
inline std::shared_ptr<const ImageStore> synthetic_store(std::size_t per_digit, std::uint64_t seed)
{
    Rng rng(seed);
    IdxImages images;
    images.rows = kImageSide;
    images.cols = kImageSide;
    std::vector<std::uint8_t> labels;
    for (int digit = 0; digit < 10; ++digit)
        for (std::size_t i = 0; i < per_digit; ++i) {
            for (int p = 0; p < kImagePixels; ++p) images.pixels.push_back(static_cast<float>(0.5 * rng.uniform() + 0.05 * digit));
            labels.push_back(static_cast<std::uint8_t>(digit));
        }
    images.count = labels.size();
    auto store = std::make_shared<ImageStore>();
    store->append(images, labels, Split::Train);
    return store;
}

} // namespace detail

// ------------------------------------------------------------------ criterion 1

inline CriterionResult criterion_env(const TransitionTables& tables)
{
    return detail::timed(1, "environment conformance", [&](CriterionResult& r) {
        const auto checks = env_conformance(tables);
        std::string failed;
        for (const auto& c : checks)
            if (!c.passed) failed += (failed.empty() ? "" : "; ") + c.name + " (" + c.detail + ")";
        r.passed = failed.empty();
        r.detail = r.passed ? std::to_string(checks.size()) + " checks passed" : failed;
    });
}

// ------------------------------------------------------------------ criterion 2

struct KinkAwareCheck {
    double max_relative_error = 0.0;
    std::string worst_parameter;
    std::size_t checked = 0;
    std::size_t straddling = 0; // entries whose +-h probe crossed a ReLU kink
};

/// Finite differences over every layer type and a 3-step recurrent chain:
/// images -> CNN -> RNN (3 steps) -> MLP head, for one random draw.
///
/// Central differences are only valid where the loss is smooth on
/// [theta - h, theta + h]. The sign of every rectifier input is recorded at
/// both probe points; entries where any sign flips are counted separately
/// instead of being compared against the analytic gradient.
inline KinkAwareCheck gradcheck_parameterization(std::uint64_t seed, std::size_t per_tensor = 4)
{
    using namespace nn;
    Rng rng(seed);
    auto net = Network<double>::init(AgentVariant::M1, rng);
    Tensor<double> img({4, 1, kImageSide, kImageSide});
    for (std::size_t i = 0; i < img.size(); ++i) img.data()[i] = rng.uniform();
    auto images = constant(img);
    const double h0 = rng.uniform(), h1 = rng.uniform();
    Action acts[3];
    for (auto& a : acts) a = action_from_index(static_cast<int>(rng.below(3)));
    const std::size_t out_index = rng.below(3);
    Rng sampler = rng.split();

    std::vector<char> signs;
    auto record = [&](const Var<double>& pre) {
        for (double v : pre.value().values()) signs.push_back(v > 0.0 ? 1 : (v < 0.0 ? -1 : 0));
        return pre;
    };
    const double slope = kLeakySlope;
    auto loss_fn = [&] {
        signs.clear();
        auto c1 = relu(record(apply(net.cnn.conv1, images)));
        auto c2 = relu(record(apply(net.cnn.conv2, c1)));
        auto c3 = relu(record(apply(net.cnn.conv3, c2)));
        auto f = leaky_relu(record(apply(net.cnn.fc, flatten(c3))), slope);
        auto h = constant(Tensor<double>({1, 2}, {h0, h1}));
        const auto& r = *net.rnn;
        for (std::size_t k = 0; k < 3; ++k) {
            auto x = concat<double>({h, select_rows(f, {k}), constant(one_hot_batch<double>({acts[k]}))});
            auto a1 = relu(record(apply(r.hidden1, x)));
            auto a2 = relu(record(apply(r.hidden2, a1)));
            h = sigmoid(apply(r.out, a2));
        }
        auto x = concat<double>({select_rows(f, {3}), h});
        auto q = apply(net.mlp.out, relu(record(apply(net.mlp.hidden, x))));
        return sum(pick(q, {out_index}));
    };

    const auto params = net.parameters();
    zero_grad(params);
    backward(loss_fn());

    KinkAwareCheck out;
    for (const auto& [name, param] : params) {
        auto p = param;
        std::vector<double> analytic(p.value().size(), 0.0);
        if (p.has_grad()) std::copy(p.grad().values().begin(), p.grad().values().end(), analytic.begin());
        std::vector<std::size_t> idx(p.value().size());
        for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
        for (std::size_t i = 0; i < per_tensor && i + 1 < idx.size(); ++i) std::swap(idx[i], idx[i + sampler.below(idx.size() - i)]);
        idx.resize(std::min(per_tensor, idx.size()));
        for (std::size_t k : idx) {
            double& slot = p.mutable_value()[k];
            const double saved = slot;
            slot = saved + tol::kGradStep;
            const double plus = loss_fn().value()[0];
            const auto signs_plus = signs;
            slot = saved - tol::kGradStep;
            const double minus = loss_fn().value()[0];
            slot = saved;
            if (signs != signs_plus) {
                ++out.straddling;
                continue;
            }
            const double numeric = (plus - minus) / (2 * tol::kGradStep);
            const double err = relative_error(analytic[k], numeric);
            ++out.checked;
            if (err > out.max_relative_error) {
                out.max_relative_error = err;
                out.worst_parameter = name;
            }
        }
    }
    return out;
}

inline CriterionResult criterion_gradients()
{
    return detail::timed(2, "gradient correctness", [&](CriterionResult& r) {
        const auto t0 = std::chrono::steady_clock::now();
        double worst = 0.0;
        std::string where;
        std::size_t checked = 0, straddling = 0;
        for (int i = 0; i < tol::kGradParameterizations; ++i) {
            const auto g = gradcheck_parameterization(derive_seed(0x475244, static_cast<std::uint64_t>(i)));
            checked += g.checked;
            straddling += g.straddling;
            if (g.max_relative_error > worst) {
                worst = g.max_relative_error;
                where = g.worst_parameter + " (draw " + std::to_string(i) + ")";
            }
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        // Most entries must be smooth, or the check says little.
        const bool enough = checked >= 9 * straddling;
        r.passed = worst <= tol::kGradRelError && secs < tol::kGradSeconds && enough && checked > 0;
        r.detail = "max rel error " + detail::sci(worst) + " (need <= " + detail::sci(tol::kGradRelError) + ") over " +
                   std::to_string(tol::kGradParameterizations) + " draws, " + std::to_string(checked) +
                   " entries compared, " + std::to_string(straddling) + " skipped at a rectifier kink; worst at " + where;
    });
}

// ------------------------------------------------------------------ criterion 6

/// Largest |Q(s, a) - r| over trainable positions, with each position's
/// estimate unrolled from the stored seed exactly as the update does.
inline double gamma0_residual(const Network<float>& net, const ImageStore& store, const std::vector<SubEpisode>& subs)
{
    double worst = 0.0;
    for (const auto& sub : subs) {
        Estimate est = sub.seed();
        for (std::size_t k = 0; k < sub.length(); ++k) {
            const auto& s = sub.steps[k];
            const auto feature = image_feature(net.cnn, store, s.image);
            if (sub.trainable(k)) {
                nn::NoGradGuard guard;
                auto f = nn::constant(nn::Tensor<float>({1, 4}, std::vector<float>(feature.begin(), feature.end())));
                auto h = nn::constant(nn::Tensor<float>({1, 2}, {est[0], est[1]}));
                const auto q = nn::mlp_forward(net.mlp, f, std::optional{h}).value();
                worst = std::max(worst, std::abs(static_cast<double>(q[static_cast<std::size_t>(index_of(s.action))]) - s.reward));
            }
            est = advance_estimate(*net.rnn, est, feature, s.action);
        }
    }
    return worst;
}

inline CriterionResult criterion_sequential_fidelity()
{
    return detail::timed(6, "sequential-update fidelity", [&](CriterionResult& r) {
        const auto t0 = std::chrono::steady_clock::now();
        auto store = detail::synthetic_store(20, 61);
        const ImagePool pool(store, 61, 20);
        const ImageSource images{&pool, permutation(1)};

        // Part 1: stored seeds equal a collection-time replay, bit for bit.
        Rng init(62);
        const auto collector = Network<float>::init(AgentVariant::M1, init);
        Environment env;
        Rng rng(63);
        std::size_t seeds_checked = 0, mismatches = 0;
        for (std::uint64_t s = 0; s < 50; ++s) {
            env.reset(s);
            const Episode ep = rollout(collector, env, images, 0.5, rng, 400);
            const auto replay = replay_estimates(collector, pool.store(), ep);
            const auto subs = split_episode(ep, 5);
            for (std::size_t i = 0; i < subs.size(); ++i, ++seeds_checked) {
                const Estimate expected = i == 0 ? Estimate{static_cast<float>(ep.steps[0].h_true.hunger()),
                                                            static_cast<float>(ep.steps[0].h_true.sickness())}
                                                 : replay[i * 5];
                if (std::memcmp(subs[i].seed().data(), expected.data(), sizeof(Estimate)) != 0) ++mismatches;
            }
        }

        // Part 2: frozen three-sub-episode buffer, gamma = 0.
        std::vector<SubEpisode> buffer;
        for (std::uint64_t s = 100; buffer.size() < 3; ++s) {
            env.reset(s);
            const Episode ep = rollout(collector, env, images, 1.0, rng, 6);
            if (ep.length() < 3) continue;
            buffer.push_back(split_episode(ep, 60).front());
        }
        Learner learner(collector.clone(true), 0.0, 0.005, nn::AdamConfig{3e-4});
        std::size_t updates = 0;
        double residual = gamma0_residual(learner.online, *store, buffer);
        const double initial = residual;
        while (residual >= tol::kResidual && updates < tol::kResidualUpdates) {
            for (const auto& sub : buffer) {
                updates += sequential_update(learner, *store, {&sub}).size();
            }
            residual = gamma0_residual(learner.online, *store, buffer);
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        r.passed = mismatches == 0 && seeds_checked > 0 && residual < tol::kResidual && updates <= tol::kResidualUpdates &&
                   secs < tol::kFidelitySeconds;
        r.detail = "residual " + detail::sci(initial) + " -> " + detail::sci(residual) + " after " +
                   std::to_string(updates) + " updates (need < " + detail::sci(tol::kResidual) + " within " +
                   std::to_string(tol::kResidualUpdates) + "); seeds " + std::to_string(seeds_checked - mismatches) +
                   "/" + std::to_string(seeds_checked) + " bit-exact";
    });
}

// ------------------------------------------------------------------ criterion 8

inline CriterionResult criterion_determinism(const AcceptanceOptions& opts, const MnistPaths& mnist)
{
    return detail::timed(8, "determinism", [&](CriterionResult& r) {
        std::vector<std::string> notes;
        bool ok = true;
        for (AgentVariant v : {AgentVariant::M1, AgentVariant::B1}) {
            ExperimentConfig cfg;
            cfg.variant = v;
            cfg.seeds = {7};
            cfg.mnist = mnist;
            cfg.trainer.variant = v;
            cfg.trainer.total_updates = 1500;
            cfg.trainer.eval_every = 500;
            cfg.trainer.eval_episodes = 5;
            std::string first;
            for (const char* rep : {"a", "b"}) {
                cfg.output_dir = opts.artifacts / "determinism" / rep;
                fs::remove_all(RunPaths::under(cfg.output_dir, v, cfg.permutation, 7).dir);
                std::ostringstream sink;
                const auto manifests = cmd_train(cfg, {std::nullopt, true}, sink);
                const std::string bytes = read_file(manifests.front().metrics.front());
                if (first.empty()) first = bytes;
                else if (bytes != first) ok = false;
            }
            const auto rows = std::count(first.begin(), first.end(), '\n') - 1;
            notes.push_back(std::string(to_string(v)) + ": " + std::to_string(rows) + " rows " +
                            (ok ? "identical" : "DIFFER"));
        }
        r.passed = ok;
        for (const auto& n : notes) r.detail += (r.detail.empty() ? "" : "; ") + n;
    });
}

// ------------------------------------------------------------------ trained criteria (3, 4, 5, 7)

struct ProfileSpec {
    std::size_t updates;
    std::vector<std::uint64_t> seeds;
};

inline ProfileSpec profile_spec(Profile p)
{
    return p == Profile::Desk ? ProfileSpec{150'000, {1, 2}} : ProfileSpec{1'200'000, {1, 2, 3, 4, 5}};
}

inline ExperimentConfig profile_config(Profile p, AgentVariant v, const fs::path& artifacts, const MnistPaths& mnist)
{
    const ProfileSpec spec = profile_spec(p);
    ExperimentConfig cfg;
    cfg.variant = v;
    cfg.permutation = 1;
    cfg.seeds = spec.seeds;
    cfg.mnist = mnist;
    cfg.trainer.variant = v;
    cfg.trainer.total_updates = spec.updates;
    cfg.output_dir = artifacts / (p == Profile::Desk ? "desk" : "full") / (std::string(to_string(v)) + "-" + config_hash(cfg));
    return cfg;
}

/// Final checkpoint of a completed run with a matching config hash, if any.
inline std::optional<fs::path> cached_checkpoint(const ExperimentConfig& cfg, std::uint64_t seed)
{
    const RunPaths paths = RunPaths::under(cfg.output_dir, cfg.variant, cfg.permutation, seed);
    if (!fs::exists(paths.manifest) || !fs::exists(paths.final_checkpoint)) return std::nullopt;
    try {
        const RunManifest m = read_manifest(paths.manifest);
        if (m.status == "complete" && m.config_hash == config_hash(cfg)) return paths.final_checkpoint;
    } catch (const std::exception&) {
    }
    return std::nullopt;
}

struct SeedOutcome {
    std::uint64_t seed = 0;
    double eval_mean = 0.0;
    FullProbeReport probe;
};

struct VariantOutcome {
    AgentVariant variant;
    std::vector<SeedOutcome> seeds;

    double mean_return() const
    {
        double s = 0;
        for (const auto& o : seeds) s += o.eval_mean;
        return seeds.empty() ? 0.0 : s / static_cast<double>(seeds.size());
    }
    double mean_probe() const
    {
        double s = 0;
        for (const auto& o : seeds) s += o.probe.linear.test_accuracy;
        return seeds.empty() ? 0.0 : s / static_cast<double>(seeds.size());
    }
};

/// Trains (or reuses) every seed of a variant, then evaluates and probes it.
inline VariantOutcome run_variant(const AcceptanceOptions& opts, AgentVariant v, const MnistPaths& mnist, std::ostream& log)
{
    const ExperimentConfig cfg = profile_config(opts.profile, v, opts.artifacts, mnist);
    auto store = mnist_store(mnist);
    VariantOutcome out{v, {}};
    for (std::uint64_t seed : cfg.seeds) {
        auto ckpt = cached_checkpoint(cfg, seed);
        if (!ckpt) {
            log << "training " << run_name(v, cfg.permutation, seed) << " (" << cfg.trainer.total_updates << " updates)"
                << std::endl;
            train_one(cfg, seed, store, log, !opts.verbose);
            ckpt = cached_checkpoint(cfg, seed);
            if (!ckpt) throw std::runtime_error("training finished without a checkpoint");
        } else {
            log << "reusing " << ckpt->string() << std::endl;
        }
        EvalOptions eo;
        eo.rollouts = tol::kEvalRollouts;
        const auto eval = cmd_eval(*ckpt, eo, log);
        ProbeOptions po;
        po.rollouts = tol::kEvalRollouts;
        auto probe = cmd_probe(*ckpt, po, log);
        out.seeds.push_back({seed, eval.mean, std::move(probe)});
    }
    return out;
}

/// Fails `r` when the slowest checkpoint exceeds `budget`; records that time.
template <class Seconds>
void apply_probe_budget(CriterionResult& r, const std::map<AgentVariant, VariantOutcome>& runs,
                        std::initializer_list<AgentVariant> variants, double budget, Seconds seconds)
{
    double worst = 0.0;
    for (AgentVariant v : variants)
        for (const auto& o : runs.at(v).seeds) worst = std::max(worst, seconds(o.probe));
    r.seconds = worst;
    if (worst >= budget) {
        r.passed = false;
        r.detail += "; slowest checkpoint " + detail::f3(worst) + "s exceeds " + detail::f3(budget) + "s";
    }
}

inline bool b2_bucket_invariant(const DependencyTable& t, std::string& why)
{
    for (ObjectClass o : kAllObjects) {
        const DependencyCell* ref = nullptr;
        for (const auto& c : t.cells) {
            if (c.object != o || !c.distribution) continue;
            if (!ref) {
                ref = &c;
                continue;
            }
            if (std::memcmp(ref->distribution->data(), c.distribution->data(), sizeof(double) * kNumActions) != 0) {
                why = std::string(to_string(o)) + " hunger-" + std::string(to_string(c.hunger)) + "/sickness-" +
                      std::string(to_string(c.sickness)) + " differs";
                return false;
            }
        }
    }
    return true;
}

inline std::vector<CriterionResult> trained_criteria(const AcceptanceOptions& opts, const MnistPaths& mnist, std::ostream& log)
{
    std::vector<CriterionResult> results;
    const bool need = opts.criteria.contains(3) || opts.criteria.contains(4) || opts.criteria.contains(5) ||
                      opts.criteria.contains(7);
    if (!need) return results;

    std::map<AgentVariant, VariantOutcome> runs;
    std::string failure;
    const auto t0 = std::chrono::steady_clock::now();
    try {
        for (AgentVariant v : {AgentVariant::B1, AgentVariant::B2, AgentVariant::M1}) runs.emplace(v, run_variant(opts, v, mnist, log));
    } catch (const std::exception& e) {
        failure = e.what();
    }
    const double train_secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    auto fail_all = [&](int id, const char* name) {
        results.push_back({id, name, false, "error: " + failure, train_secs});
    };

    auto per_seed = [&](AgentVariant v, auto fn) {
        std::string s;
        for (const auto& o : runs.at(v).seeds) s += (s.empty() ? "" : ",") + fn(o);
        return "[" + s + "]";
    };

    if (opts.criteria.contains(3)) {
        if (!failure.empty()) fail_all(3, "agent ordering");
        else {
            const double b1 = runs.at(AgentVariant::B1).mean_return(), b2 = runs.at(AgentVariant::B2).mean_return(),
                         m1 = runs.at(AgentVariant::M1).mean_return();
            const double mid = 0.5 * (b1 + b2);
            CriterionResult r{3, "agent ordering", b1 >= (1 + tol::kOrderingMargin) * b2 && m1 >= mid, "", train_secs};
            auto ret = [](const SeedOutcome& o) { return detail::f3(o.eval_mean); };
            r.detail = "B1 " + detail::f3(b1) + per_seed(AgentVariant::B1, ret) + ", B2 " + detail::f3(b2) +
                       per_seed(AgentVariant::B2, ret) + ", M1 " + detail::f3(m1) + per_seed(AgentVariant::M1, ret) +
                       "; need B1 >= 1.5*B2 = " + detail::f3(1.5 * b2) + " and M1 >= midpoint " + detail::f3(mid);
            results.push_back(r);
        }
    }
    if (opts.criteria.contains(4)) {
        if (!failure.empty()) fail_all(4, "emergent classification");
        else {
            const double b1 = runs.at(AgentVariant::B1).mean_probe(), b2 = runs.at(AgentVariant::B2).mean_probe(),
                         m1 = runs.at(AgentVariant::M1).mean_probe();
            CriterionResult r{4, "emergent classification",
                              b1 >= tol::kProbeB1 && m1 >= tol::kProbeM1 && b2 <= m1 - tol::kProbeGap, "", 0.0};
            auto acc = [](const SeedOutcome& o) { return detail::f3(o.probe.linear.test_accuracy); };
            r.detail = "test accuracy B1 " + detail::f3(b1) + "%" + per_seed(AgentVariant::B1, acc) + ", M1 " +
                       detail::f3(m1) + "%" + per_seed(AgentVariant::M1, acc) + ", B2 " + detail::f3(b2) +
                       "%" + per_seed(AgentVariant::B2, acc) + "; need B1 >= 85, M1 >= 80, B2 <= M1 - 5";
            apply_probe_budget(r, runs, {AgentVariant::B1, AgentVariant::M1, AgentVariant::B2}, tol::kProbeSeconds,
                               [](const FullProbeReport& p) { return p.classification_seconds; });
            results.push_back(r);
        }
    }
    if (opts.criteria.contains(5)) {
        if (!failure.empty()) fail_all(5, "hidden-variable estimation");
        else {
            double hs = 0, ss = 0;
            bool defined = true;
            const auto& m1 = runs.at(AgentVariant::M1).seeds;
            for (const auto& o : m1) {
                const auto& c = o.probe.correlation;
                if (!c.pooled_hunger || !c.pooled_sickness) defined = false;
                hs += c.pooled_hunger.value_or(0.0);
                ss += c.pooled_sickness.value_or(0.0);
            }
            hs /= static_cast<double>(m1.size());
            ss /= static_cast<double>(m1.size());
            CriterionResult r{5, "hidden-variable estimation",
                              defined && hs >= tol::kCorrHunger && ss >= tol::kCorrSickness, "", 0.0};
            auto ch = [](const SeedOutcome& o) { return detail::f3(o.probe.correlation.pooled_hunger.value_or(NAN)); };
            auto cs = [](const SeedOutcome& o) { return detail::f3(o.probe.correlation.pooled_sickness.value_or(NAN)); };
            r.detail = "M1 pooled Pearson hunger " + detail::f3(hs) + per_seed(AgentVariant::M1, ch) + ", sickness " +
                       detail::f3(ss) + per_seed(AgentVariant::M1, cs) + "; need >= 0.85 / 0.80";
            apply_probe_budget(r, runs, {AgentVariant::M1}, tol::kCorrelationSeconds,
                               [](const FullProbeReport& p) { return p.correlation_seconds; });
            results.push_back(r);
        }
    }
    if (opts.criteria.contains(7)) {
        if (!failure.empty()) fail_all(7, "vision-action decoupling");
        else {
            bool b2_ok = true;
            std::string why;
            for (const auto& o : runs.at(AgentVariant::B2).seeds)
                if (!b2_bucket_invariant(o.probe.dependency, why)) b2_ok = false;
            double tv = 0.0;
            bool defined = true;
            const auto& m1 = runs.at(AgentVariant::M1).seeds;
            for (const auto& o : m1) {
                if (!o.probe.sickness_shift) defined = false;
                tv += o.probe.sickness_shift.value_or(0.0);
            }
            tv /= static_cast<double>(m1.size());
            CriterionResult r{7, "vision-action decoupling", b2_ok && defined && tv >= tol::kSicknessTv, "", 0.0};
            auto t = [](const SeedOutcome& o) { return detail::f3(o.probe.sickness_shift.value_or(NAN)); };
            r.detail = std::string("B2 buckets ") + (b2_ok ? "bitwise identical" : "differ (" + why + ")") +
                       "; M1 max sickness TV " + detail::f3(tv) + per_seed(AgentVariant::M1, t) + ", need >= 0.1";
            apply_probe_budget(r, runs, {AgentVariant::B2, AgentVariant::M1}, tol::kDependencySeconds,
                               [](const FullProbeReport& p) { return p.dependency_seconds; });
            results.push_back(r);
        }
    }
    return results;
}

// ------------------------------------------------------------------ driver

inline std::vector<CriterionResult> run_acceptance(const AcceptanceOptions& opts, std::ostream& log)
{
    std::vector<CriterionResult> results;
    auto report = [&](CriterionResult r) {
        log << format_line(r) << std::endl;
        results.push_back(std::move(r));
    };
    if (opts.criteria.contains(1)) {
        auto r = criterion_env(opts.tables);
        if (r.seconds >= tol::kConformanceSeconds) {
            r.passed = false;
            r.detail += " (over time budget)";
        }
        report(r);
    }
    if (opts.criteria.contains(2)) report(criterion_gradients());
    if (opts.criteria.contains(6)) report(criterion_sequential_fidelity());

    fs::path dir = opts.data_dir.value_or(data_dir_from_env());
    const MnistPaths mnist = MnistPaths::in_directory(dir.empty() ? fs::path("data/mnist") : dir);
    if (opts.criteria.contains(8)) report(criterion_determinism(opts, mnist));
    for (auto& r : trained_criteria(opts, mnist, log)) report(r);

    std::sort(results.begin(), results.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
    return results;
}

inline bool all_passed(const std::vector<CriterionResult>& results)
{
    for (const auto& r : results)
        if (!r.passed) return false;
    return !results.empty();
}

} // namespace survival::harness

#endif
