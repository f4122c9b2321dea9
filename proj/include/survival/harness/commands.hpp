#ifndef SURVIVAL_HARNESS_COMMANDS_HPP
#define SURVIVAL_HARNESS_COMMANDS_HPP

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "survival/agent.hpp"
#include "survival/dataset.hpp"
#include "survival/harness/artifacts.hpp"
#include "survival/harness/config.hpp"
#include "survival/harness/svg.hpp"
#include "survival/probes.hpp"
#include "survival/train.hpp"

namespace survival::harness {

/// Loads the four MNIST files once per process.
inline std::shared_ptr<const ImageStore> mnist_store(const MnistPaths& paths)
{
    static std::map<std::string, std::shared_ptr<const ImageStore>> cache;
    const std::string key = paths.train_images.string() + "|" + paths.test_images.string();
    if (auto it = cache.find(key); it != cache.end()) return it->second;
    require_dataset(paths);
    auto store = load_mnist(paths);
    cache.emplace(key, store);
    return store;
}

inline std::string run_name(AgentVariant v, int perm, std::uint64_t seed)
{
    return std::string(to_string(v)) + "-perm" + std::to_string(perm) + "-seed" + std::to_string(seed);
}

struct RunPaths {
    fs::path dir;
    fs::path manifest;
    fs::path metrics;
    fs::path checkpoints;
    fs::path final_checkpoint;

    static RunPaths under(const fs::path& output_dir, AgentVariant v, int perm, std::uint64_t seed)
    {
        RunPaths p;
        p.dir = output_dir / run_name(v, perm, seed);
        p.manifest = p.dir / "manifest.json";
        p.metrics = p.dir / "metrics.csv";
        p.checkpoints = p.dir / "checkpoints";
        p.final_checkpoint = p.checkpoints / "final.ckpt";
        return p;
    }
};

// ------------------------------------------------------------------ return curves

/// Return curves of several metrics files on one plot.
inline std::string return_curve_svg(const std::vector<std::pair<std::string, fs::path>>& runs)
{
    std::vector<svg::Series> series;
    for (const auto& [label, path] : runs) {
        svg::Series s{label, {}, {}};
        for (const auto& row : read_metrics(path)) {
            s.x.push_back(static_cast<double>(row.update_count));
            s.y.push_back(row.avg_return);
        }
        series.push_back(std::move(s));
    }
    return svg::line_plot("Average return during training", "gradient updates", "average return", series);
}

// ------------------------------------------------------------------ train

struct TrainOptions {
    std::optional<std::uint64_t> only_seed;
    bool quiet = false;
};

/// One full training run for `seed`. The manifest is written when the run
/// starts and rewritten when it completes.
inline RunManifest train_one(const ExperimentConfig& cfg, std::uint64_t seed, const std::shared_ptr<const ImageStore>& store,
                             std::ostream& log, bool quiet = false)
{
    const RunPaths paths = RunPaths::under(cfg.output_dir, cfg.variant, cfg.permutation, seed);
    fs::create_directories(paths.checkpoints);

    RunManifest m;
    m.run_id = new_run_id();
    m.config_hash = config_hash(cfg);
    m.seed = seed;
    m.variant = std::string(to_string(cfg.variant));
    m.permutation = cfg.permutation;
    m.started_at = utc_timestamp();
    m.metrics = {paths.metrics.string()};
    m.artifacts = {(paths.dir / "config.json").string()};
    write_atomic(paths.dir / "config.json", to_json(cfg).dump(2) + "\n");
    m.write(paths.manifest);

    const ImagePool pool(store, seed, cfg.pool_per_digit);
    Trainer trainer(cfg.trainer, pool, permutation(cfg.permutation), seed);
    MetricsWriter metrics(paths.metrics, cfg.variant, cfg.permutation, seed);

    CheckpointMeta meta;
    meta.variant = cfg.variant;
    meta.seed = seed;
    meta.permutation = cfg.permutation;
    meta.config = to_json(cfg);
    meta.config_hash = m.config_hash;

    trainer.on_metric([&](const MetricRow& r) {
        metrics.write(r);
        if (!quiet)
            log << run_name(cfg.variant, cfg.permutation, seed) << " updates=" << r.update_count
                << " return=" << format_double(r.avg_return) << " eps=" << format_double(r.epsilon)
                << " loss=" << format_double(r.loss_mean) << std::endl;
    });
    trainer.on_checkpoint([&](const Network<float>& net, std::size_t updates) {
        meta.updates = updates;
        const fs::path p = paths.checkpoints / ("step_" + std::to_string(updates) + ".ckpt");
        save_checkpoint(p, meta, net);
        m.checkpoints.push_back(p.string());
    });
    trainer.run();

    meta.updates = trainer.updates();
    save_checkpoint(paths.final_checkpoint, meta, trainer.network());
    m.checkpoints.push_back(paths.final_checkpoint.string());
    write_atomic(paths.dir / "returns.svg", return_curve_svg({{run_name(cfg.variant, cfg.permutation, seed), paths.metrics}}));
    m.artifacts.push_back((paths.dir / "returns.svg").string());
    m.finished_at = utc_timestamp();
    m.status = "complete";
    m.write(paths.manifest);
    return m;
}

inline std::vector<RunManifest> cmd_train(const ExperimentConfig& cfg, const TrainOptions& opts = {},
                                          std::ostream& log = std::cout)
{
    std::vector<std::uint64_t> seeds = cfg.seeds;
    if (opts.only_seed) seeds = {*opts.only_seed};
    // Fail fast: nothing is written until the dataset has loaded.
    auto store = mnist_store(cfg.mnist);
    std::vector<RunManifest> out;
    for (std::uint64_t seed : seeds) out.push_back(train_one(cfg, seed, store, log, opts.quiet));
    return out;
}

// ------------------------------------------------------------------ checkpoint context

/// Everything needed to run a checkpoint: its network, the config it was
/// trained with and the same image pool.
struct LoadedRun {
    Checkpoint checkpoint;
    ExperimentConfig config;
    std::shared_ptr<const ImageStore> store;
    std::unique_ptr<ImagePool> pool;
};

inline LoadedRun load_run(const fs::path& ckpt, const std::optional<fs::path>& data_dir = std::nullopt)
{
    LoadedRun r;
    r.checkpoint = load_checkpoint(ckpt);
    try {
        r.config = config_from_json(r.checkpoint.meta.config);
    } catch (const ConfigError& e) {
        throw CheckpointError(ckpt.string() + ": embedded config invalid: " + e.what());
    }
    if (r.config.variant != r.checkpoint.meta.variant)
        throw CheckpointError(ckpt.string() + ": architecture mismatch between header and embedded config");
    std::optional<fs::path> dir = data_dir;
    if (!dir && !data_dir_from_env().empty() && !fs::exists(r.config.mnist.train_images)) dir = data_dir_from_env();
    if (dir) r.config.mnist = MnistPaths::in_directory(*dir);
    r.store = mnist_store(r.config.mnist);
    r.pool = std::make_unique<ImagePool>(r.store, r.checkpoint.meta.seed, r.config.pool_per_digit);
    return r;
}

// ------------------------------------------------------------------ eval

struct EvalOptions {
    std::size_t rollouts = 200;
    std::optional<std::uint64_t> seed;
    std::optional<fs::path> output_dir; // default: <checkpoint dir>/../eval
    std::optional<fs::path> data_dir;
    bool write_logs = true;
};

struct EvalReport {
    std::string checkpoint;
    std::string variant;
    std::size_t rollouts = 0;
    double mean = 0.0;
    double stddev = 0.0;
    double stay_mean = 0.0; // scripted always-Stay on the same environment seeds
    double stay_stddev = 0.0;
    std::vector<Episode> episodes;
    fs::path output_dir;

    json to_json() const
    {
        return json{{"checkpoint", checkpoint},
                    {"variant", variant},
                    {"rollouts", rollouts},
                    {"mean_return", mean},
                    {"stddev_return", stddev},
                    {"always_stay_mean", stay_mean},
                    {"always_stay_stddev", stay_stddev}};
    }
};

inline std::uint64_t eval_seed(const LoadedRun& run, const std::optional<std::uint64_t>& seed)
{
    return seed ? *seed : derive_seed(run.checkpoint.meta.seed, 0x5445535445564C); // "TESTEVL"
}

/// Always-Stay baseline over the same environment seeds `evaluate` uses.
inline EvalSummary scripted_stay(const ImageSource& images, std::size_t count, std::uint64_t seed, std::size_t max_steps)
{
    EvalSummary out;
    Environment env;
    Rng rng(derive_seed(seed, 0x4556414C));
    double sum = 0.0, sq = 0.0;
    for (std::size_t i = 0; i < count; ++i) {
        env.reset(derive_seed(seed, 0x454E56, i));
        const double r = scripted_rollout(Action::Stay, env, images, rng, max_steps).total_return();
        sum += r;
        sq += r * r;
    }
    if (count) {
        out.mean = sum / static_cast<double>(count);
        out.stddev = std::sqrt(std::max(0.0, sq / static_cast<double>(count) - out.mean * out.mean));
    }
    return out;
}

inline EvalReport evaluate_run(const LoadedRun& run, const EvalOptions& opts, const fs::path& ckpt_path)
{
    const ImageSource images{run.pool.get(), permutation(run.config.permutation)};
    const std::uint64_t seed = eval_seed(run, opts.seed);
    auto summary = evaluate(run.checkpoint.network, images, opts.rollouts, seed, run.config.trainer.max_steps, 0.0, true);
    const auto stay = scripted_stay(images, opts.rollouts, seed, run.config.trainer.max_steps);
    EvalReport r;
    r.checkpoint = ckpt_path.string();
    r.variant = std::string(to_string(run.checkpoint.meta.variant));
    r.rollouts = opts.rollouts;
    r.mean = summary.mean;
    r.stddev = summary.stddev;
    r.stay_mean = stay.mean;
    r.stay_stddev = stay.stddev;
    r.episodes = std::move(summary.episodes);
    return r;
}

inline fs::path default_artifact_dir(const fs::path& ckpt, const std::string& what)
{
    // <run>/checkpoints/x.ckpt -> <run>/<what>-x
    const fs::path parent = ckpt.parent_path();
    const fs::path run = parent.filename() == "checkpoints" ? parent.parent_path() : parent;
    return run / (what + "-" + ckpt.stem().string());
}

/// Manifest for outputs derived from a checkpoint.
inline RunManifest derived_manifest(const LoadedRun& run, const fs::path& dir, const fs::path& ckpt,
                                    std::vector<std::string> artifacts)
{
    RunManifest m;
    m.run_id = new_run_id();
    m.config_hash = run.checkpoint.meta.config_hash;
    m.seed = run.checkpoint.meta.seed;
    m.variant = std::string(to_string(run.checkpoint.meta.variant));
    m.permutation = run.config.permutation;
    m.started_at = utc_timestamp();
    m.checkpoints = {ckpt.string()};
    m.artifacts = std::move(artifacts);
    m.status = "running";
    m.write(dir / "manifest.json");
    return m;
}

inline EvalReport cmd_eval(const fs::path& ckpt, const EvalOptions& opts = {}, std::ostream& log = std::cout)
{
    const LoadedRun run = load_run(ckpt, opts.data_dir);
    const fs::path dir = opts.output_dir ? *opts.output_dir : default_artifact_dir(ckpt, "eval");
    fs::create_directories(dir);
    RunManifest m = derived_manifest(run, dir, ckpt, {});

    EvalReport r = evaluate_run(run, opts, ckpt);
    r.output_dir = dir;
    if (opts.write_logs) {
        for (std::size_t i = 0; i < r.episodes.size(); ++i) {
            char name[32];
            std::snprintf(name, sizeof name, "episode_%04zu.jsonl", i);
            const fs::path p = dir / "episodes" / name;
            write_episode_log(p, r.episodes[i]);
            m.artifacts.push_back(p.string());
        }
    }
    write_atomic(dir / "eval.json", r.to_json().dump(2) + "\n");
    m.artifacts.push_back((dir / "eval.json").string());
    m.finished_at = utc_timestamp();
    m.status = "complete";
    m.write(dir / "manifest.json");

    log << r.variant << " greedy return over " << r.rollouts << " rollouts: " << format_double(r.mean) << " +- "
        << format_double(r.stddev) << " (always-Stay " << format_double(r.stay_mean) << " +- "
        << format_double(r.stay_stddev) << ")\n";
    return r;
}

// ------------------------------------------------------------------ probe

struct ProbeOptions {
    std::optional<int> permutation; // default: the checkpoint's permutation
    std::size_t rollouts = 200;
    std::optional<std::uint64_t> seed;
    std::optional<fs::path> output_dir;
    std::optional<fs::path> data_dir;
    SvmConfig svm;
    std::size_t test_per_digit = 4000;
    std::size_t pca_plot_points = 4000;
};

struct FullProbeReport {
    ProbeReport linear;
    PcaResult pca;
    std::vector<FeatureRecord> test_features;
    CorrelationReport correlation; // empty unless the network estimates levels
    bool has_correlation = false;
    DependencyTable dependency;
    std::optional<double> sickness_shift;
    std::vector<Episode> episodes;
    fs::path output_dir;
    // Wall-clock seconds; the greedy rollouts count towards both rollout-based probes.
    double classification_seconds = 0.0;
    double correlation_seconds = 0.0;
    double dependency_seconds = 0.0;
};

inline json probe_json(const FullProbeReport& r, const std::string& variant)
{
    auto opt = [](const std::optional<double>& v) { return v ? json(*v) : json(nullptr); };
    json conf = json::array();
    for (const auto& row : r.linear.test_confusion) conf.push_back(row);
    json dep = json::array();
    for (const auto& c : r.dependency.cells) {
        json cell{{"object", to_string(c.object)}, {"hunger", to_string(c.hunger)}, {"sickness", to_string(c.sickness)},
                  {"steps", c.steps}, {"pairs", c.pairs}, {"counts", c.counts}};
        cell["distribution"] = c.distribution ? json(*c.distribution) : json(nullptr);
        cell["empirical"] = c.empirical ? json(*c.empirical) : json(nullptr);
        dep.push_back(cell);
    }
    json ratios = json::array();
    for (Eigen::Index i = 0; i < r.pca.explained_variance.size(); ++i) ratios.push_back(r.pca.variance_ratio(i));
    json j{{"checkpoint", r.linear.checkpoint},
           {"variant", variant},
           {"permutation", r.linear.permutation},
           {"linear_probe", {{"train_accuracy", r.linear.train_accuracy}, {"test_accuracy", r.linear.test_accuracy}, {"test_confusion", conf}}},
           {"pca", {{"explained_variance_ratio", ratios}}},
           {"action_dependency", dep},
           {"max_sickness_tv", opt(r.sickness_shift)},
           {"rollouts", r.episodes.size()},
           {"seconds",
            {{"classification", r.classification_seconds},
             {"correlation", r.correlation_seconds},
             {"dependency", r.dependency_seconds}}}};
    if (r.has_correlation) {
        const auto& c = r.correlation;
        j["hidden_correlation"] = {{"pooled_hunger", opt(c.pooled_hunger)},
                                   {"pooled_sickness", opt(c.pooled_sickness)},
                                   {"episode_mean_hunger", opt(c.episode_mean_hunger)},
                                   {"episode_mean_sickness", opt(c.episode_mean_sickness)},
                                   {"episodes", c.episodes},
                                   {"steps", c.steps},
                                   {"warnings", c.warnings}};
    } else {
        j["hidden_correlation"] = nullptr;
    }
    return j;
}

/// All probes on one checkpoint without touching the filesystem.
inline FullProbeReport probe_run(const LoadedRun& run, const ProbeOptions& opts, const fs::path& ckpt_path)
{
    using clock = std::chrono::steady_clock;
    auto since = [](clock::time_point t) { return std::chrono::duration<double>(clock::now() - t).count(); };
    FullProbeReport r;
    auto t0 = clock::now();
    const int perm_id = opts.permutation.value_or(run.config.permutation);
    const Permutation perm = permutation(perm_id);
    const auto& net = run.checkpoint.network;
    const ImageStore& store = *run.store;

    const ProbeSplit split = probe_split(*run.pool, perm, run.checkpoint.meta.seed, opts.test_per_digit);
    const auto train = extract_features(net.cnn, store, split.train);
    r.test_features = extract_features(net.cnn, store, split.test);
    const auto probe = fit_linear_probe(train, opts.svm);
    r.linear.checkpoint = ckpt_path.string();
    r.linear.permutation = perm_id;
    r.linear.train_accuracy = probe_accuracy(probe, train);
    r.linear.test_accuracy = probe_accuracy(probe, r.test_features);
    r.linear.test_confusion = confusion(probe, r.test_features);
    r.pca = pca_project(r.test_features, 3);
    r.classification_seconds = since(t0);

    t0 = clock::now();
    const ImageSource images{run.pool.get(), perm};
    r.episodes = evaluate(net, images, opts.rollouts, eval_seed(run, opts.seed), run.config.trainer.max_steps, 0.0, true)
                     .episodes;
    const double rollout_seconds = since(t0);
    t0 = clock::now();
    if (net.variant == AgentVariant::M1) {
        r.correlation = hidden_correlation(r.episodes);
        r.has_correlation = true;
    }
    r.correlation_seconds = rollout_seconds + since(t0);
    t0 = clock::now();
    DependencyConfig dcfg;
    dcfg.seed = run.checkpoint.meta.seed;
    r.dependency = action_dependency(net, store, r.episodes, dcfg);
    r.sickness_shift = max_sickness_shift(r.dependency);
    r.dependency_seconds = rollout_seconds + since(t0);
    return r;
}

inline std::vector<std::string> write_probe_artifacts(const FullProbeReport& r, const std::string& variant,
                                                      const fs::path& dir, std::size_t plot_points)
{
    std::vector<std::string> files;
    auto emit = [&](const std::string& name, const std::string& text) {
        write_atomic(dir / name, text);
        files.push_back((dir / name).string());
    };
    auto fmt = [](double v) { return format_double(v); };
    auto fmt_opt = [&](const std::optional<std::array<double, kNumActions>>& d, std::size_t a) {
        return d ? fmt((*d)[a]) : std::string();
    };

    emit("report.json", probe_json(r, variant).dump(2) + "\n");

    {
        std::ostringstream csv;
        csv << "object,digit,pc1,pc2,pc3\n";
        for (std::size_t i = 0; i < r.test_features.size(); ++i)
            csv << to_string(r.test_features[i].object) << ',' << r.test_features[i].digit << ','
                << fmt(r.pca.projected(static_cast<Eigen::Index>(i), 0)) << ','
                << fmt(r.pca.projected(static_cast<Eigen::Index>(i), 1)) << ','
                << fmt(r.pca.projected(static_cast<Eigen::Index>(i), 2)) << '\n';
        emit("pca.csv", csv.str());

        std::vector<svg::Series> groups(kNumObjects);
        for (ObjectClass o : kAllObjects) groups[static_cast<std::size_t>(index_of(o))].label = std::string(to_string(o));
        const std::size_t stride = std::max<std::size_t>(1, r.test_features.size() / std::max<std::size_t>(1, plot_points));
        for (std::size_t i = 0; i < r.test_features.size(); i += stride) {
            auto& g = groups[static_cast<std::size_t>(index_of(r.test_features[i].object))];
            g.x.push_back(r.pca.projected(static_cast<Eigen::Index>(i), 0));
            g.y.push_back(r.pca.projected(static_cast<Eigen::Index>(i), 1));
        }
        emit("pca.svg", svg::scatter_plot(variant + " CNN features (held-out images)", "PC1", "PC2", groups));
    }
    {
        std::ostringstream csv;
        csv << "episode,t,hunger_true,sickness_true,hunger_est,sickness_est\n";
        for (std::size_t e = 0; e < r.episodes.size(); ++e)
            for (const auto& s : r.episodes[e].steps) {
                csv << e << ',' << s.t << ',' << fmt(s.h_true.hunger()) << ',' << fmt(s.h_true.sickness()) << ',';
                if (s.h_est) csv << fmt((*s.h_est)[0]) << ',' << fmt((*s.h_est)[1]);
                else csv << ',';
                csv << '\n';
            }
        emit("correlation.csv", csv.str());

        // Longest greedy episode, truth against estimate.
        std::vector<svg::Series> series;
        if (!r.episodes.empty()) {
            const auto& ep = *std::max_element(r.episodes.begin(), r.episodes.end(),
                                               [](const Episode& a, const Episode& b) { return a.length() < b.length(); });
            svg::Series ht{"hunger (true)", {}, {}}, he{"hunger (estimate)", {}, {}}, st{"sickness (true)", {}, {}},
                se{"sickness (estimate)", {}, {}};
            for (const auto& s : ep.steps) {
                const double t = static_cast<double>(s.t);
                ht.x.push_back(t);
                ht.y.push_back(s.h_true.hunger());
                st.x.push_back(t);
                st.y.push_back(s.h_true.sickness());
                if (s.h_est) {
                    he.x.push_back(t);
                    he.y.push_back((*s.h_est)[0]);
                    se.x.push_back(t);
                    se.y.push_back((*s.h_est)[1]);
                }
            }
            series = {ht, he, st, se};
        }
        emit("correlation.svg", svg::line_plot(variant + " hidden levels over an episode", "time step", "level", series));
    }
    {
        std::ostringstream csv;
        csv << "object,hunger,sickness,steps,pairs,p_stay,p_run,p_eat,empirical_stay,empirical_run,empirical_eat\n";
        for (const auto& c : r.dependency.cells) {
            csv << to_string(c.object) << ',' << to_string(c.hunger) << ',' << to_string(c.sickness) << ',' << c.steps
                << ',' << c.pairs;
            for (std::size_t a = 0; a < kNumActions; ++a) csv << ',' << fmt_opt(c.distribution, a);
            for (std::size_t a = 0; a < kNumActions; ++a) csv << ',' << fmt_opt(c.empirical, a);
            csv << '\n';
        }
        emit("dependency.csv", csv.str());

        std::vector<std::string> cats;
        std::vector<std::vector<double>> values;
        for (ObjectClass o : kAllObjects)
            for (Level s : {Level::Low, Level::High}) {
                const auto& cell = r.dependency.at(o, Level::Any, s);
                cats.push_back(std::string(to_string(o)) + "/sick-" + std::string(to_string(s)));
                std::vector<double> v(kNumActions, 0.0);
                if (cell.distribution)
                    for (std::size_t a = 0; a < kNumActions; ++a) v[a] = (*cell.distribution)[a];
                values.push_back(v);
            }
        emit("dependency.svg", svg::bar_chart(variant + " greedy action by object and sickness", "P(action)", cats,
                                              {"stay", "run", "eat"}, values));
    }
    {
        std::ostringstream csv;
        csv << "true_class,predicted_none,predicted_predator,predicted_prey,predicted_rotten_food\n";
        for (ObjectClass o : kAllObjects) {
            csv << to_string(o);
            for (auto n : r.linear.test_confusion[static_cast<std::size_t>(index_of(o))]) csv << ',' << n;
            csv << '\n';
        }
        emit("confusion.csv", csv.str());
    }
    return files;
}

inline FullProbeReport cmd_probe(const fs::path& ckpt, const ProbeOptions& opts = {}, std::ostream& log = std::cout)
{
    const LoadedRun run = load_run(ckpt, opts.data_dir);
    if (opts.permutation && *opts.permutation != run.config.permutation)
        log << "warning: probing with permutation " << *opts.permutation << ", checkpoint was trained on "
            << run.config.permutation << "\n";
    const fs::path dir = opts.output_dir ? *opts.output_dir : default_artifact_dir(ckpt, "probe");
    fs::create_directories(dir);
    RunManifest m = derived_manifest(run, dir, ckpt, {});
    FullProbeReport r = probe_run(run, opts, ckpt);
    r.output_dir = dir;
    const std::string variant(to_string(run.checkpoint.meta.variant));
    m.artifacts = write_probe_artifacts(r, variant, dir, opts.pca_plot_points);
    m.finished_at = utc_timestamp();
    m.status = "complete";
    m.write(dir / "manifest.json");

    log << variant << " linear probe: train " << format_double(r.linear.train_accuracy) << "%, test "
        << format_double(r.linear.test_accuracy) << "%\n";
    if (r.has_correlation) {
        auto show = [](const std::optional<double>& v) { return v ? format_double(*v) : std::string("n/a"); };
        log << variant << " estimate correlation: hunger " << show(r.correlation.pooled_hunger) << ", sickness "
            << show(r.correlation.pooled_sickness) << "\n";
    }
    if (r.sickness_shift) log << variant << " max sickness TV shift: " << format_double(*r.sickness_shift) << "\n";
    log << "artifacts written to " << dir.string() << "\n";
    return r;
}

} // namespace survival::harness

#endif
