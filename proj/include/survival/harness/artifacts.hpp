#ifndef SURVIVAL_HARNESS_ARTIFACTS_HPP
#define SURVIVAL_HARNESS_ARTIFACTS_HPP

#include <bit>
#include <chrono>
#include <cstdint>
#include <cstring>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "survival/agent.hpp"
#include "survival/harness/config.hpp"
#include "survival/train.hpp"

#ifndef SURVIVAL_VERSION
#define SURVIVAL_VERSION "0.1.0"
#endif

namespace survival::harness {

namespace fs = std::filesystem;

inline constexpr std::string_view kVersion = SURVIVAL_VERSION;

class CheckpointError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Writes `content` next to `path` and renames it into place.
inline void write_atomic(const fs::path& path, const std::string& content)
{
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    fs::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("cannot write " + tmp.string());
        out.write(content.data(), static_cast<std::streamsize>(content.size()));
        if (!out) throw std::runtime_error("write failed: " + tmp.string());
    }
    fs::rename(tmp, path);
}

inline std::string read_file(const fs::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline std::string utc_timestamp()
{
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    std::tm tm{};
    gmtime_r(&t, &tm);
    std::ostringstream ss;
    ss << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
    return ss.str();
}

inline std::string new_run_id()
{
    std::random_device rd;
    std::ostringstream ss;
    ss << std::hex << std::setfill('0') << std::setw(8) << rd() << std::setw(8) << rd();
    return ss.str();
}

// ---------------------------------------------------------------- checkpoints

inline constexpr char kCheckpointMagic[8] = {'S', 'V', 'C', 'K', 'P', 'T', '0', '1'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointMeta {
    AgentVariant variant = AgentVariant::M1;
    std::uint64_t seed = 0;
    int permutation = 1;
    std::size_t updates = 0;
    json config = json::object(); // serialized ExperimentConfig
    std::string config_hash;
};

struct Checkpoint {
    CheckpointMeta meta;
    Network<float> network;
};

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v)
{
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline void put_u64(std::string& out, std::uint64_t v)
{
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline std::uint64_t get_le(const std::string& in, std::size_t& pos, int bytes)
{
    if (pos + static_cast<std::size_t>(bytes) > in.size()) throw CheckpointError("checkpoint truncated");
    std::uint64_t v = 0;
    for (int i = 0; i < bytes; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
    pos += static_cast<std::size_t>(bytes);
    return v;
}

} // namespace detail

/// Layout: 8-byte magic, u32 version, u64 header length, JSON header, then
/// each tensor listed in the header as little-endian float32.
inline std::string encode_checkpoint(const CheckpointMeta& meta, const Network<float>& net)
{
    json tensors = json::array();
    const auto params = net.parameters();
    for (const auto& [name, p] : params) tensors.push_back({{"name", name}, {"shape", p.value().shape()}});
    const json header{{"variant", to_string(meta.variant)},   {"seed", meta.seed},
                      {"permutation", meta.permutation},      {"updates", meta.updates},
                      {"config", meta.config},                {"config_hash", meta.config_hash},
                      {"version", std::string(kVersion)},     {"tensors", tensors}};
    const std::string text = header.dump();

    std::string out(kCheckpointMagic, sizeof kCheckpointMagic);
    detail::put_u32(out, kCheckpointVersion);
    detail::put_u64(out, text.size());
    out += text;
    for (const auto& [name, p] : params) {
        const auto& t = p.value();
        for (std::size_t i = 0; i < t.size(); ++i) detail::put_u32(out, std::bit_cast<std::uint32_t>(t.data()[i]));
    }
    return out;
}

inline void save_checkpoint(const fs::path& path, const CheckpointMeta& meta, const Network<float>& net)
{
    write_atomic(path, encode_checkpoint(meta, net));
}

inline Checkpoint decode_checkpoint(const std::string& bytes, const std::string& name = "<checkpoint>")
{
    if (bytes.size() < sizeof kCheckpointMagic || std::memcmp(bytes.data(), kCheckpointMagic, sizeof kCheckpointMagic) != 0)
        throw CheckpointError(name + ": not a checkpoint (bad magic)");
    std::size_t pos = sizeof kCheckpointMagic;
    const auto version = detail::get_le(bytes, pos, 4);
    if (version != kCheckpointVersion)
        throw CheckpointError(name + ": unsupported checkpoint version " + std::to_string(version));
    const auto len = detail::get_le(bytes, pos, 8);
    if (pos + len > bytes.size()) throw CheckpointError(name + ": checkpoint truncated");
    json header;
    try {
        header = json::parse(bytes.substr(pos, len));
    } catch (const json::exception& e) {
        throw CheckpointError(name + ": bad header: " + e.what());
    }
    pos += len;

    Checkpoint ck;
    try {
        ck.meta.variant = parse_variant(header.at("variant").get<std::string>());
        ck.meta.seed = header.at("seed").get<std::uint64_t>();
        ck.meta.permutation = header.at("permutation").get<int>();
        ck.meta.updates = header.at("updates").get<std::size_t>();
        ck.meta.config = header.at("config");
        ck.meta.config_hash = header.at("config_hash").get<std::string>();
    } catch (const std::exception& e) {
        throw CheckpointError(name + ": bad header: " + e.what());
    }

    // Fresh network of the recorded variant; every stored tensor must match it.
    Rng dummy(0);
    ck.network = Network<float>::init(ck.meta.variant, dummy);
    auto params = ck.network.parameters();
    const json& tensors = header.at("tensors");
    if (tensors.size() != params.size())
        throw CheckpointError(name + ": architecture mismatch: " + std::to_string(tensors.size()) +
                              " tensors stored, " + std::to_string(params.size()) + " expected for " +
                              std::string(to_string(ck.meta.variant)));
    for (std::size_t k = 0; k < params.size(); ++k) {
        auto& [pname, p] = params[k];
        const auto stored_name = tensors[k].at("name").get<std::string>();
        const auto stored_shape = tensors[k].at("shape").get<nn::Shape>();
        if (stored_name != pname || stored_shape != p.value().shape())
            throw CheckpointError(name + ": architecture mismatch at tensor " + stored_name + " (expected " + pname +
                                  ")");
        auto& t = p.mutable_value();
        for (std::size_t i = 0; i < t.size(); ++i)
            t.data()[i] = std::bit_cast<float>(static_cast<std::uint32_t>(detail::get_le(bytes, pos, 4)));
    }
    if (pos != bytes.size()) throw CheckpointError(name + ": trailing bytes after tensor data");
    return ck;
}

inline Checkpoint load_checkpoint(const fs::path& path)
{
    return decode_checkpoint(read_file(path), path.string());
}

/// Loads into an existing network, which must have the same architecture.
inline void load_into(const Checkpoint& ck, Network<float>& net)
{
    if (ck.meta.variant != net.variant)
        throw CheckpointError("architecture mismatch: checkpoint is " + std::string(to_string(ck.meta.variant)) +
                              ", network is " + std::string(to_string(net.variant)));
    auto src = ck.network.parameters();
    auto dst = net.parameters();
    for (std::size_t k = 0; k < dst.size(); ++k) dst[k].second.mutable_value() = src[k].second.value();
}

// ---------------------------------------------------------------- metrics CSV

inline constexpr std::string_view kMetricsHeader =
    "update_count,iteration,avg_return,epsilon,loss_mean,variant,permutation,seed";

inline std::string format_double(double v)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return buf;
}

inline std::string metric_line(const MetricRow& r, AgentVariant v, int perm, std::uint64_t seed)
{
    std::ostringstream ss;
    ss << r.update_count << ',' << r.iteration << ',' << format_double(r.avg_return) << ','
       << format_double(r.epsilon) << ',' << format_double(r.loss_mean) << ',' << to_string(v) << ',' << perm << ','
       << seed;
    return ss.str();
}

/// Appends rows as they arrive so a crashed run still leaves its curve.
class MetricsWriter {
public:
    MetricsWriter(const fs::path& path, AgentVariant variant, int perm, std::uint64_t seed)
        : out_(path, std::ios::trunc), variant_(variant), perm_(perm), seed_(seed)
    {
        if (!out_) throw std::runtime_error("cannot write " + path.string());
        out_ << kMetricsHeader << '\n' << std::flush;
    }

    void write(const MetricRow& r) { out_ << metric_line(r, variant_, perm_, seed_) << '\n' << std::flush; }

private:
    std::ofstream out_;
    AgentVariant variant_;
    int perm_;
    std::uint64_t seed_;
};

inline std::vector<MetricRow> read_metrics(const fs::path& path)
{
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    std::string line;
    std::getline(in, line);
    if (line != kMetricsHeader) throw std::runtime_error(path.string() + ": unexpected metrics header");
    std::vector<MetricRow> rows;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream ss(line);
        std::string cell;
        std::vector<std::string> cells;
        while (std::getline(ss, cell, ',')) cells.push_back(cell);
        if (cells.size() != 8) throw std::runtime_error(path.string() + ": malformed row: " + line);
        MetricRow r;
        r.update_count = std::stoull(cells[0]);
        r.iteration = std::stoull(cells[1]);
        r.avg_return = std::stod(cells[2]);
        r.epsilon = std::stod(cells[3]);
        r.loss_mean = std::stod(cells[4]);
        rows.push_back(r);
    }
    return rows;
}

// ---------------------------------------------------------------- episode logs

inline json step_json(const EpisodeStep& s)
{
    json j{{"t", s.t},
           {"object_class", to_string(s.object)},
           {"digit", s.digit},
           {"action", to_string(s.action)},
           {"reward", s.reward},
           {"h_true", {s.h_true.hunger(), s.h_true.sickness()}},
           {"q_values", {s.q[0], s.q[1], s.q[2]}}};
    j["h_est"] = s.h_est ? json{(*s.h_est)[0], (*s.h_est)[1]} : json(nullptr);
    return j;
}

/// One JSON object per step, one file per episode.
inline void write_episode_log(const fs::path& path, const Episode& ep)
{
    std::string text;
    for (const auto& s : ep.steps) {
        text += step_json(s).dump();
        text += '\n';
    }
    write_atomic(path, text);
}

// ---------------------------------------------------------------- manifest

struct RunManifest {
    std::string run_id;
    std::string config_hash;
    std::string version{kVersion};
    std::uint64_t seed = 0;
    std::string variant;
    int permutation = 1;
    std::string started_at;
    std::string finished_at; // empty while running
    std::string status = "running";
    std::vector<std::string> checkpoints;
    std::vector<std::string> metrics;
    std::vector<std::string> artifacts;

    json to_json() const
    {
        return json{{"run_id", run_id},         {"config_hash", config_hash}, {"version", version},
                    {"seed", seed},             {"variant", variant},         {"permutation", permutation},
                    {"started_at", started_at}, {"finished_at", finished_at}, {"status", status},
                    {"checkpoints", checkpoints}, {"metrics", metrics},       {"artifacts", artifacts}};
    }

    static RunManifest from_json(const json& j)
    {
        RunManifest m;
        m.run_id = j.at("run_id").get<std::string>();
        m.config_hash = j.at("config_hash").get<std::string>();
        m.version = j.at("version").get<std::string>();
        m.seed = j.at("seed").get<std::uint64_t>();
        m.variant = j.at("variant").get<std::string>();
        m.permutation = j.at("permutation").get<int>();
        m.started_at = j.at("started_at").get<std::string>();
        m.finished_at = j.at("finished_at").get<std::string>();
        m.status = j.at("status").get<std::string>();
        m.checkpoints = j.at("checkpoints").get<std::vector<std::string>>();
        m.metrics = j.at("metrics").get<std::vector<std::string>>();
        m.artifacts = j.value("artifacts", std::vector<std::string>{});
        return m;
    }

    void write(const fs::path& path) const { write_atomic(path, to_json().dump(2) + "\n"); }
};

inline RunManifest read_manifest(const fs::path& path)
{
    return RunManifest::from_json(json::parse(read_file(path)));
}

} // namespace survival::harness

#endif
