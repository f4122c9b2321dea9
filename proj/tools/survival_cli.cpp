// survival: train, evaluate and probe agents in the survival environment.

#include <cstdio>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "survival/harness/acceptance.hpp"

namespace h = survival::harness;

namespace {

std::set<int> parse_criteria(const std::string& list)
{
    std::set<int> out;
    std::stringstream ss(list);
    std::string item;
    while (std::getline(ss, item, ',')) {
        const int id = std::stoi(item);
        if (id < 1 || id > 8) throw std::invalid_argument("criterion ids are 1..8");
        out.insert(id);
    }
    return out;
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Survival-environment agents: training, evaluation, probes and acceptance runs"};
    app.require_subcommand(1);
    app.set_version_flag("--version", std::string(h::kVersion));

    // train
    auto* train = app.add_subcommand("train", "Train one run per configured seed");
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> updates;
    std::optional<std::string> output, data_dir, variant;
    std::optional<int> perm;
    std::vector<std::string> overrides;
    bool quiet = false;
    train->add_option("--config", config_path, "Experiment config (JSON)")->required()->check(CLI::ExistingFile);
    train->add_option("--seed", seed, "Run only this seed");
    train->add_option("--updates", updates, "Override trainer.total_updates");
    train->add_option("--variant", variant, "Override variant (M1, B1, B2)");
    train->add_option("--perm", perm, "Override permutation id");
    train->add_option("--output", output, "Override output_dir");
    train->add_option("--data-dir", data_dir, "MNIST directory (overrides config and SURVIVAL_DATA_DIR)");
    train->add_option("--set", overrides, "Override any key, e.g. --set trainer.lr=1e-3");
    train->add_flag("--quiet", quiet, "No per-metric progress lines");

    // eval
    auto* eval = app.add_subcommand("eval", "Greedy evaluation of a checkpoint");
    std::string ckpt;
    h::EvalOptions eopts;
    std::optional<std::string> eval_out, eval_data;
    bool no_logs = false;
    eval->add_option("--ckpt", ckpt, "Checkpoint file")->required()->check(CLI::ExistingFile);
    eval->add_option("--rollouts", eopts.rollouts, "Number of greedy rollouts")->capture_default_str();
    eval->add_option("--seed", eopts.seed, "Evaluation seed (default derives from the run seed)");
    eval->add_option("--out", eval_out, "Output directory");
    eval->add_option("--data-dir", eval_data, "MNIST directory");
    eval->add_flag("--no-logs", no_logs, "Skip per-episode JSONL logs");

    // probe
    auto* probe = app.add_subcommand("probe", "Linear probe, PCA, estimate correlation and action dependency");
    h::ProbeOptions popts;
    std::optional<std::string> probe_out, probe_data;
    probe->add_option("--ckpt", ckpt, "Checkpoint file")->required()->check(CLI::ExistingFile);
    probe->add_option("--perm", popts.permutation, "Permutation id (default: the checkpoint's)")->check(CLI::Range(1, 4));
    probe->add_option("--rollouts", popts.rollouts, "Greedy rollouts for correlation and dependency")->capture_default_str();
    probe->add_option("--seed", popts.seed, "Rollout seed");
    probe->add_option("--out", probe_out, "Output directory");
    probe->add_option("--data-dir", probe_data, "MNIST directory");

    // reproduce
    auto* repro = app.add_subcommand("reproduce", "Run the acceptance criteria and print pass/fail per criterion");
    std::string profile = "desk", artifacts = "artifacts", criteria;
    std::optional<std::string> tables_path, repro_data;
    bool verbose = false;
    repro->add_option("--profile", profile, "desk or full")->check(CLI::IsMember({"desk", "full"}))->capture_default_str();
    repro->add_option("--tables", tables_path, "Transition tables JSON (as written by env dump-tables)")->check(CLI::ExistingFile);
    repro->add_option("--artifacts", artifacts, "Cache and artifact directory")->capture_default_str();
    repro->add_option("--criteria", criteria, "Comma-separated subset, e.g. 1,2,6");
    repro->add_option("--data-dir", repro_data, "MNIST directory");
    repro->add_flag("--verbose", verbose, "Show training progress");

    // env dump-tables
    auto* env = app.add_subcommand("env", "Environment utilities");
    env->require_subcommand(1);
    auto* dump = env->add_subcommand("dump-tables", "Print the transition tables as JSON");
    std::optional<std::string> dump_out;
    dump->add_option("--out", dump_out, "Write to a file instead of stdout");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*train) {
            if (updates) overrides.push_back("trainer.total_updates=" + std::to_string(*updates));
            if (variant) overrides.push_back("variant=\"" + *variant + "\"");
            if (perm) overrides.push_back("permutation=" + std::to_string(*perm));
            if (output) overrides.push_back("output_dir=" + h::json(*output).dump());
            if (data_dir) {
                overrides.push_back("data_dir=" + h::json(*data_dir).dump());
                // Explicit directory beats any per-file paths in the config.
                const auto p = survival::MnistPaths::in_directory(*data_dir);
                overrides.push_back("mnist.train_images=" + h::json(p.train_images.string()).dump());
                overrides.push_back("mnist.train_labels=" + h::json(p.train_labels.string()).dump());
                overrides.push_back("mnist.test_images=" + h::json(p.test_images.string()).dump());
                overrides.push_back("mnist.test_labels=" + h::json(p.test_labels.string()).dump());
            }
            const auto cfg = h::load_config(config_path, overrides);
            h::TrainOptions topts;
            topts.only_seed = seed;
            topts.quiet = quiet;
            for (const auto& m : h::cmd_train(cfg, topts))
                std::cout << "run " << m.run_id << " seed " << m.seed << " complete; config " << m.config_hash
                          << "; metrics " << m.metrics.front() << "\n";
            return 0;
        }
        if (*eval) {
            if (eval_out) eopts.output_dir = *eval_out;
            if (eval_data) eopts.data_dir = *eval_data;
            eopts.write_logs = !no_logs;
            const auto r = h::cmd_eval(ckpt, eopts);
            std::cout << "wrote " << r.output_dir.string() << "\n";
            return 0;
        }
        if (*probe) {
            if (probe_out) popts.output_dir = *probe_out;
            if (probe_data) popts.data_dir = *probe_data;
            h::cmd_probe(ckpt, popts);
            return 0;
        }
        if (*repro) {
            h::AcceptanceOptions aopts;
            aopts.profile = h::parse_profile(profile);
            aopts.artifacts = artifacts;
            aopts.verbose = verbose;
            if (repro_data) aopts.data_dir = *repro_data;
            if (!criteria.empty()) aopts.criteria = parse_criteria(criteria);
            if (tables_path) aopts.tables = h::tables_from_json(h::json::parse(h::read_file(*tables_path)));
            const auto results = h::run_acceptance(aopts, std::cout);
            std::cout << "\nsummary (" << profile << ")\n";
            for (const auto& r : results) std::cout << h::format_line(r) << "\n";
            const bool ok = h::all_passed(results);
            std::cout << (ok ? "all criteria passed" : "some criteria FAILED") << "\n";
            return ok ? 0 : 1;
        }
        if (*dump) {
            const std::string text = h::tables_to_json(survival::reference_tables()).dump(2) + "\n";
            if (dump_out) h::write_atomic(*dump_out, text);
            else std::cout << text;
            return 0;
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
