#ifndef SURVIVAL_HARNESS_CONFIG_HPP
#define SURVIVAL_HARNESS_CONFIG_HPP

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "survival/dataset.hpp"
#include "survival/train.hpp"

namespace survival::harness {

using json = nlohmann::json;

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline std::string_view to_string(UpdateMethod m) noexcept
{
    return m == UpdateMethod::Sequential ? "sequential" : "random";
}

inline UpdateMethod parse_update_method(std::string_view s)
{
    if (s == "sequential") return UpdateMethod::Sequential;
    if (s == "random") return UpdateMethod::Random;
    throw ConfigError("trainer.update_method: expected 'sequential' or 'random', got '" + std::string(s) + "'");
}

struct ExperimentConfig {
    AgentVariant variant = AgentVariant::M1;
    int permutation = 1;
    std::vector<std::uint64_t> seeds{1};
    TrainerConfig trainer;
    MnistPaths mnist;
    std::filesystem::path output_dir = "runs";
    std::size_t pool_per_digit = ImagePool::kDefaultPerDigit;

    friend bool operator==(const ExperimentConfig& a, const ExperimentConfig& b);
};

/// Dataset directory from SURVIVAL_DATA_DIR, or empty.
inline std::filesystem::path data_dir_from_env()
{
    const char* dir = std::getenv("SURVIVAL_DATA_DIR");
    return dir && *dir ? std::filesystem::path(dir) : std::filesystem::path{};
}

inline json trainer_to_json(const TrainerConfig& t)
{
    return json{
        {"total_updates", t.total_updates},
        {"batch_size", t.effective_batch()},
        {"buffer_capacity", t.effective_capacity()},
        {"seq_len", t.seq_len},
        {"gamma", t.gamma},
        {"epsilon_start", t.epsilon_start},
        {"epsilon_end", t.epsilon_end},
        {"epsilon_decay_fraction", t.epsilon_decay_fraction},
        {"tau", t.tau},
        {"lr", t.lr},
        {"episodes_per_iteration", t.episodes_per_iteration},
        {"batches_per_iteration", t.batches_per_iteration},
        {"max_steps", t.max_steps},
        {"eval_every", t.eval_every},
        {"eval_episodes", t.eval_episodes},
        {"min_buffer", t.effective_min_buffer()},
        {"update_method", to_string(t.update_method)},
        {"random_window", t.random_window},
        {"checkpoint_every", t.checkpoint_every},
    };
}

inline json to_json(const ExperimentConfig& c)
{
    return json{
        {"variant", to_string(c.variant)},
        {"permutation", c.permutation},
        {"seeds", c.seeds},
        {"output_dir", c.output_dir.string()},
        {"pool_per_digit", c.pool_per_digit},
        {"mnist",
         {{"train_images", c.mnist.train_images.string()},
          {"train_labels", c.mnist.train_labels.string()},
          {"test_images", c.mnist.test_images.string()},
          {"test_labels", c.mnist.test_labels.string()}}},
        {"trainer", trainer_to_json(c.trainer)},
    };
}

inline bool operator==(const ExperimentConfig& a, const ExperimentConfig& b) { return to_json(a) == to_json(b); }

namespace detail {

inline void reject_unknown(const json& obj, const std::set<std::string>& allowed, const std::string& where)
{
    if (!obj.is_object()) throw ConfigError(where.empty() ? "config must be a JSON object" : where + ": expected an object");
    for (const auto& [key, value] : obj.items())
        if (!allowed.contains(key)) throw ConfigError("unknown key '" + (where.empty() ? key : where + "." + key) + "'");
}

template <class T>
T get(const json& obj, const std::string& key, const std::string& path, T fallback)
{
    auto it = obj.find(key);
    if (it == obj.end()) return fallback;
    try {
        return it->get<T>();
    } catch (const json::exception&) {
        throw ConfigError(path + ": wrong type (" + std::string(it->type_name()) + ")");
    }
}

inline std::size_t get_count(const json& obj, const std::string& key, const std::string& path, std::size_t fallback)
{
    auto it = obj.find(key);
    if (it == obj.end()) return fallback;
    if (!it->is_number_integer() || it->get<long long>() < 0)
        throw ConfigError(path + ": expected a non-negative integer");
    return it->get<std::size_t>();
}

} // namespace detail

inline TrainerConfig trainer_from_json(const json& j, AgentVariant variant)
{
    using detail::get;
    using detail::get_count;
    detail::reject_unknown(j,
                           {"total_updates", "batch_size", "buffer_capacity", "seq_len", "gamma", "epsilon_start",
                            "epsilon_end", "epsilon_decay_fraction", "tau", "lr", "episodes_per_iteration",
                            "batches_per_iteration", "max_steps", "eval_every", "eval_episodes", "min_buffer",
                            "update_method", "random_window", "checkpoint_every"},
                           "trainer");
    TrainerConfig t;
    t.variant = variant;
    t.total_updates = get_count(j, "total_updates", "trainer.total_updates", t.total_updates);
    t.batch_size = get_count(j, "batch_size", "trainer.batch_size", 0);
    t.buffer_capacity = get_count(j, "buffer_capacity", "trainer.buffer_capacity", 0);
    t.seq_len = get_count(j, "seq_len", "trainer.seq_len", t.seq_len);
    t.gamma = get<double>(j, "gamma", "trainer.gamma", t.gamma);
    t.epsilon_start = get<double>(j, "epsilon_start", "trainer.epsilon_start", t.epsilon_start);
    t.epsilon_end = get<double>(j, "epsilon_end", "trainer.epsilon_end", t.epsilon_end);
    t.epsilon_decay_fraction = get<double>(j, "epsilon_decay_fraction", "trainer.epsilon_decay_fraction", t.epsilon_decay_fraction);
    t.tau = get<double>(j, "tau", "trainer.tau", t.tau);
    t.lr = get<double>(j, "lr", "trainer.lr", t.lr);
    t.episodes_per_iteration = get_count(j, "episodes_per_iteration", "trainer.episodes_per_iteration", t.episodes_per_iteration);
    t.batches_per_iteration = get_count(j, "batches_per_iteration", "trainer.batches_per_iteration", t.batches_per_iteration);
    t.max_steps = get_count(j, "max_steps", "trainer.max_steps", t.max_steps);
    t.eval_every = get_count(j, "eval_every", "trainer.eval_every", t.eval_every);
    t.eval_episodes = get_count(j, "eval_episodes", "trainer.eval_episodes", t.eval_episodes);
    t.min_buffer = get_count(j, "min_buffer", "trainer.min_buffer", 0);
    t.update_method = parse_update_method(get<std::string>(j, "update_method", "trainer.update_method", "sequential"));
    t.random_window = get_count(j, "random_window", "trainer.random_window", t.random_window);
    t.checkpoint_every = get_count(j, "checkpoint_every", "trainer.checkpoint_every", t.checkpoint_every);
    try {
        t.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
    return t;
}

/// Builds a config from JSON. Missing MNIST paths fall back to
/// `data_dir` (if given) and then to SURVIVAL_DATA_DIR.
inline ExperimentConfig config_from_json(const json& j)
{
    using detail::get;
    detail::reject_unknown(j, {"variant", "permutation", "seeds", "output_dir", "pool_per_digit", "data_dir", "mnist", "trainer"}, "");
    ExperimentConfig c;
    try {
        c.variant = parse_variant(get<std::string>(j, "variant", "variant", "M1"));
    } catch (const std::invalid_argument& e) {
        throw ConfigError(std::string("variant: ") + e.what());
    }
    c.permutation = get<int>(j, "permutation", "permutation", 1);
    if (c.permutation < 1 || c.permutation > 4) throw ConfigError("permutation: must be 1..4");
    c.seeds = get<std::vector<std::uint64_t>>(j, "seeds", "seeds", c.seeds);
    if (c.seeds.empty()) throw ConfigError("seeds: at least one seed is required");
    c.output_dir = get<std::string>(j, "output_dir", "output_dir", c.output_dir.string());
    c.pool_per_digit = detail::get_count(j, "pool_per_digit", "pool_per_digit", c.pool_per_digit);
    if (c.pool_per_digit == 0) throw ConfigError("pool_per_digit: must be positive");

    std::filesystem::path dir = get<std::string>(j, "data_dir", "data_dir", "");
    if (dir.empty()) dir = data_dir_from_env();
    if (!dir.empty()) c.mnist = MnistPaths::in_directory(dir);
    if (auto it = j.find("mnist"); it != j.end()) {
        detail::reject_unknown(*it, {"train_images", "train_labels", "test_images", "test_labels"}, "mnist");
        auto path = [&](const char* key, std::filesystem::path& out) {
            if (it->contains(key)) out = get<std::string>(*it, key, std::string("mnist.") + key, "");
        };
        path("train_images", c.mnist.train_images);
        path("train_labels", c.mnist.train_labels);
        path("test_images", c.mnist.test_images);
        path("test_labels", c.mnist.test_labels);
    }
    c.trainer = trainer_from_json(j.value("trainer", json::object()), c.variant);
    return c;
}

/// Parses a config file; syntax errors carry line and column.
inline json read_config_json(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path.string());
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        // nlohmann reports "line L, column C" in the message.
        throw ConfigError(path.string() + ": " + e.what());
    }
}

/// Applies a `dotted.key=value` override. The value is read as JSON when it
/// parses (numbers, booleans) and as a plain string otherwise.
inline void apply_override(json& j, const std::string& assignment)
{
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "' is not key=value");
    const std::string key = assignment.substr(0, eq);
    const std::string text = assignment.substr(eq + 1);
    json value = json::parse(text, nullptr, false);
    if (value.is_discarded()) value = text;
    json* node = &j;
    std::size_t start = 0;
    for (;;) {
        const auto dot = key.find('.', start);
        const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
        if (dot == std::string::npos) {
            (*node)[part] = value;
            break;
        }
        node = &(*node)[part];
        if (!node->is_object()) *node = json::object();
        start = dot + 1;
    }
}

inline ExperimentConfig load_config(const std::filesystem::path& path, const std::vector<std::string>& overrides = {})
{
    json j = read_config_json(path);
    try {
        for (const auto& o : overrides) apply_override(j, o);
        return config_from_json(j);
    } catch (const ConfigError& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
}

/// FNV-1a over the canonical (sorted-key) serialization. Output location and
/// dataset paths are left out: they do not change what a run computes.
inline std::string config_hash(const ExperimentConfig& c)
{
    json j = to_json(c);
    j.erase("output_dir");
    j.erase("mnist");
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char ch : j.dump()) {
        h ^= ch;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

/// Fails fast when any dataset file is missing.
inline void require_dataset(const MnistPaths& p)
{
    for (const auto* f : {&p.train_images, &p.train_labels, &p.test_images, &p.test_labels}) {
        if (f->empty())
            throw ConfigError("dataset path not configured (set mnist.* or data_dir, or SURVIVAL_DATA_DIR)");
        if (!std::filesystem::exists(*f)) throw ConfigError("dataset file not found: " + f->string());
    }
}

} // namespace survival::harness

#endif
