#ifndef SURVIVAL_TRAIN_HPP
#define SURVIVAL_TRAIN_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "survival/agent.hpp"
#include "survival/nn/optim.hpp"

namespace survival {

// ---------------------------------------------------------------------------
// Replay storage
// ---------------------------------------------------------------------------

/// Fixed-capacity FIFO ring. Once full, each push evicts the oldest entry.
template <class Item>
class RingBuffer {
public:
    explicit RingBuffer(std::size_t capacity) : capacity_(capacity)
    {
        if (capacity == 0) throw std::invalid_argument("replay capacity must be positive");
        items_.reserve(std::min<std::size_t>(capacity, 1 << 16));
    }

    /// Returns the slot written and, if an entry was evicted, its old value.
    std::pair<std::size_t, std::optional<Item>> push(Item item)
    {
        if (items_.size() < capacity_) {
            items_.push_back(std::move(item));
            return {items_.size() - 1, std::nullopt};
        }
        const std::size_t slot = head_;
        std::optional<Item> evicted = std::move(items_[slot]);
        items_[slot] = std::move(item);
        head_ = (head_ + 1) % capacity_;
        return {slot, std::move(evicted)};
    }

    std::size_t size() const noexcept { return items_.size(); }
    std::size_t capacity() const noexcept { return capacity_; }
    bool empty() const noexcept { return items_.empty(); }
    const Item& slot(std::size_t i) const { return items_.at(i); }

    /// i-th oldest entry.
    const Item& oldest(std::size_t i) const
    {
        if (i >= items_.size()) throw std::out_of_range("RingBuffer::oldest");
        return items_[(items_.size() < capacity_ ? i : (head_ + i) % capacity_)];
    }

private:
    std::size_t capacity_;
    std::size_t head_ = 0;
    std::vector<Item> items_;
};

struct Transition {
    ImageId image = 0;
    ImageId next_image = 0;
    HiddenVars hidden;
    HiddenVars next_hidden;
    Action action = Action::Stay;
    float reward = 0.0f;
    bool terminal = false;
};

/// Every step with a usable target: steps followed by another step, plus the
/// terminal step. A step cut off by the step limit has no successor and is dropped.
inline std::vector<Transition> episode_transitions(const Episode& ep)
{
    std::vector<Transition> out;
    for (std::size_t i = 0; i < ep.steps.size(); ++i) {
        const auto& s = ep.steps[i];
        const bool last = i + 1 == ep.steps.size();
        if (last && !ep.terminated) break;
        Transition tr;
        tr.image = s.image;
        tr.hidden = s.h_true;
        tr.action = s.action;
        tr.reward = static_cast<float>(s.reward);
        tr.terminal = last;
        if (!last) {
            tr.next_image = ep.steps[i + 1].image;
            tr.next_hidden = ep.steps[i + 1].h_true;
        } else {
            tr.next_image = s.image;
            tr.next_hidden = s.h_true;
        }
        out.push_back(tr);
    }
    return out;
}

struct SubStep {
    ImageId image = 0;
    Action action = Action::Stay;
    float reward = 0.0f;
    Estimate estimate{}; // collection-time estimate (true h1 at the first step of an episode)
};

/// Contiguous slice of an episode. Only `steps.front().estimate` seeds the
/// recurrent unroll in sequential updates.
struct SubEpisode {
    std::vector<SubStep> steps;
    bool starts_episode = false;
    bool ends_terminal = false;

    std::size_t length() const noexcept { return steps.size(); }
    const Estimate& seed() const { return steps.front().estimate; }

    /// A position is trainable when its successor is inside the slice or it is
    /// the terminal step of the episode.
    bool trainable(std::size_t pos) const noexcept
    {
        return pos + 1 < steps.size() || (pos + 1 == steps.size() && ends_terminal);
    }
};

inline std::vector<SubEpisode> split_episode(const Episode& ep, std::size_t seq_len)
{
    if (seq_len == 0) throw std::invalid_argument("sub-episode length must be positive");
    if (ep.steps.empty()) throw std::invalid_argument("cannot split an empty episode");
    std::vector<SubEpisode> out;
    for (std::size_t begin = 0; begin < ep.steps.size(); begin += seq_len) {
        const std::size_t end = std::min(begin + seq_len, ep.steps.size());
        SubEpisode sub;
        sub.starts_episode = begin == 0;
        sub.ends_terminal = end == ep.steps.size() && ep.terminated;
        for (std::size_t i = begin; i < end; ++i) {
            const auto& s = ep.steps[i];
            SubStep ss;
            ss.image = s.image;
            ss.action = s.action;
            ss.reward = static_cast<float>(s.reward);
            if (i == 0)
                ss.estimate = {static_cast<float>(s.h_true.hunger()), static_cast<float>(s.h_true.sickness())};
            else if (s.h_est)
                ss.estimate = *s.h_est;
            else
                throw std::invalid_argument("episode step lacks a collection-time estimate");
            sub.steps.push_back(ss);
        }
        out.push_back(std::move(sub));
    }
    return out;
}

/// Sub-episode replay with per-length buckets so a batch can be drawn from a
/// single length.
class SubEpisodeBuffer {
public:
    explicit SubEpisodeBuffer(std::size_t capacity) : ring_(capacity) {}

    void push(SubEpisode sub)
    {
        const std::size_t len = sub.length();
        auto [slot, evicted] = ring_.push(std::move(sub));
        if (evicted) remove_from_bucket(evicted->length(), slot);
        auto& bucket = buckets_[len];
        position_[slot] = bucket.size();
        bucket.push_back(slot);
    }

    std::size_t size() const noexcept { return ring_.size(); }
    std::size_t capacity() const noexcept { return ring_.capacity(); }
    const SubEpisode& slot(std::size_t i) const { return ring_.slot(i); }
    const RingBuffer<SubEpisode>& ring() const noexcept { return ring_; }
    std::size_t bucket_size(std::size_t len) const
    {
        auto it = buckets_.find(len);
        return it == buckets_.end() ? 0 : it->second.size();
    }

    /// Picks a length with probability proportional to its share of stored
    /// sub-episodes, then `batch` members of that length with replacement.
    std::vector<const SubEpisode*> sample_same_length(std::size_t batch, Rng& rng) const
    {
        if (ring_.empty()) throw std::logic_error("sampling from an empty sub-episode buffer");
        const std::size_t anchor = static_cast<std::size_t>(rng.below(ring_.size()));
        const auto& bucket = buckets_.at(ring_.slot(anchor).length());
        std::vector<const SubEpisode*> out;
        out.reserve(batch);
        for (std::size_t i = 0; i < batch; ++i)
            out.push_back(&ring_.slot(bucket[static_cast<std::size_t>(rng.below(bucket.size()))]));
        return out;
    }

    /// Uniform (sub-episode, start) windows of length `window`, with replacement.
    std::vector<std::pair<const SubEpisode*, std::size_t>> sample_windows(std::size_t batch, std::size_t window,
                                                                          Rng& rng) const
    {
        std::vector<std::size_t> eligible;
        for (const auto& [len, slots] : buckets_)
            if (len >= window) eligible.insert(eligible.end(), slots.begin(), slots.end());
        if (eligible.empty()) throw std::logic_error("no stored sub-episode is long enough for the window");
        std::vector<std::pair<const SubEpisode*, std::size_t>> out;
        for (std::size_t i = 0; i < batch; ++i) {
            const SubEpisode& sub = ring_.slot(eligible[static_cast<std::size_t>(rng.below(eligible.size()))]);
            out.push_back({&sub, static_cast<std::size_t>(rng.below(sub.length() - window + 1))});
        }
        return out;
    }

private:
    void remove_from_bucket(std::size_t len, std::size_t slot)
    {
        auto& bucket = buckets_.at(len);
        const std::size_t pos = position_.at(slot);
        const std::size_t moved = bucket.back();
        bucket[pos] = moved;
        position_[moved] = pos;
        bucket.pop_back();
        position_.erase(slot);
        if (bucket.empty()) buckets_.erase(len);
    }

    RingBuffer<SubEpisode> ring_;
    std::map<std::size_t, std::vector<std::size_t>> buckets_;
    std::map<std::size_t, std::size_t> position_;
};

/// Number of start offsets for a window of `window` steps inside `length` steps.
constexpr std::size_t window_starts(std::size_t length, std::size_t window) noexcept
{
    return length >= window ? length - window + 1 : 0;
}

// ---------------------------------------------------------------------------
// Losses and update rules
// ---------------------------------------------------------------------------

/// A Bellman target at `start + pos` of a stored sub-episode, with the
/// recurrent estimate unrolled from the stored estimate at `start`.
struct WindowTarget {
    const SubEpisode* sub = nullptr;
    std::size_t start = 0;
    std::size_t pos = 0;
    bool active = true;
};

struct LossResult {
    nn::Var<float> loss;
    std::size_t active = 0;
};

namespace detail {

inline const SubStep& clamped_step(const WindowTarget& w, std::size_t k)
{
    const std::size_t idx = std::min(w.start + k, w.sub->length() - 1);
    return w.sub->steps[idx];
}

/// Online CNN features for positions 0..last of every window, row k*B + b,
/// and the unrolled estimates H_0..H_last stacked the same way.
struct Unrolled {
    nn::Var<float> features;
    nn::Var<float> estimates;
};

inline Unrolled unroll(const Network<float>& net, const ImageStore& store, const std::vector<WindowTarget>& windows,
                       std::size_t last)
{
    const std::size_t b = windows.size();
    std::vector<ImageId> ids;
    ids.reserve((last + 1) * b);
    for (std::size_t k = 0; k <= last; ++k)
        for (const auto& w : windows) ids.push_back(clamped_step(w, k).image);
    auto features = nn::cnn_forward(net.cnn, nn::constant(image_batch<float>(store, ids)));

    nn::Tensor<float> seeds({b, 2});
    for (std::size_t i = 0; i < b; ++i) {
        const Estimate& e = clamped_step(windows[i], 0).estimate;
        seeds.at(i, 0) = e[0];
        seeds.at(i, 1) = e[1];
    }
    std::vector<nn::Var<float>> estimates{nn::constant(std::move(seeds))};
    for (std::size_t k = 1; k <= last; ++k) {
        std::vector<std::size_t> rows(b);
        std::vector<Action> actions(b);
        for (std::size_t i = 0; i < b; ++i) {
            rows[i] = (k - 1) * b + i;
            actions[i] = clamped_step(windows[i], k - 1).action;
        }
        estimates.push_back(nn::rnn_step(*net.rnn, estimates.back(), nn::select_rows(features, rows),
                                         nn::constant(nn::one_hot_batch<float>(actions))));
    }
    return {features, nn::concat_rows(estimates)};
}

} // namespace detail

/// Half mean squared Bellman residual over the active windows.
///
/// Q(v_t, H_t, a_t) uses the online weights with H unrolled from the stored
/// seed; the bootstrap max_a Q' uses the target weights (no gradient) with
/// their own unroll from the same seed. Terminal steps drop the bootstrap.
inline LossResult windowed_bellman_loss(const Network<float>& online, const Network<float>& target,
                                        const ImageStore& store, const std::vector<WindowTarget>& windows,
                                        double gamma)
{
    if (!online.rnn || !target.rnn) throw std::logic_error("recurrent update requires M1 networks");
    if (windows.empty()) throw std::invalid_argument("empty batch");
    const std::size_t b = windows.size();

    std::size_t last = 0, target_last = 0, active = 0;
    std::vector<char> bootstrap(b, 0);
    for (std::size_t i = 0; i < b; ++i) {
        const auto& w = windows[i];
        if (w.start + w.pos >= w.sub->length()) throw std::out_of_range("window exceeds sub-episode bounds");
        last = std::max(last, w.pos);
        if (!w.active) continue;
        ++active;
        if (!w.sub->trainable(w.start + w.pos)) throw std::invalid_argument("window position has no Bellman target");
        if (w.start + w.pos + 1 < w.sub->length()) {
            bootstrap[i] = 1;
            target_last = std::max(target_last, w.pos + 1);
        }
    }
    if (active == 0) throw std::invalid_argument("no active window in batch");

    std::vector<float> y(b, 0.0f), weight(b, 0.0f);
    {
        nn::NoGradGuard guard;
        std::vector<float> bootstrap_value(b, 0.0f);
        if (gamma != 0.0 && std::any_of(bootstrap.begin(), bootstrap.end(), [](char c) { return c != 0; })) {
            const auto tu = detail::unroll(target, store, windows, target_last);
            std::vector<std::size_t> rows(b);
            for (std::size_t i = 0; i < b; ++i)
                rows[i] = std::min(windows[i].pos + 1, target_last) * b + i;
            const auto q_next = nn::mlp_forward(target.mlp, nn::select_rows(tu.features, rows),
                                                std::optional{nn::select_rows(tu.estimates, rows)});
            for (std::size_t i = 0; i < b; ++i) {
                const auto& q = q_next.value();
                bootstrap_value[i] = std::max({q.at(i, 0), q.at(i, 1), q.at(i, 2)});
            }
        }
        for (std::size_t i = 0; i < b; ++i) {
            if (!windows[i].active) continue;
            const SubStep& s = windows[i].sub->steps[windows[i].start + windows[i].pos];
            y[i] = s.reward + (bootstrap[i] ? static_cast<float>(gamma) * bootstrap_value[i] : 0.0f);
            weight[i] = 1.0f / static_cast<float>(active);
        }
    }

    const auto ou = detail::unroll(online, store, windows, last);
    std::vector<std::size_t> rows(b), actions(b);
    for (std::size_t i = 0; i < b; ++i) {
        rows[i] = windows[i].pos * b + i;
        actions[i] = static_cast<std::size_t>(index_of(windows[i].sub->steps[windows[i].start + windows[i].pos].action));
    }
    const auto q = nn::mlp_forward(online.mlp, nn::select_rows(ou.features, rows),
                                   std::optional{nn::select_rows(ou.estimates, rows)});
    return {nn::weighted_half_squared_error(nn::pick(q, actions), std::move(y), std::move(weight)), active};
}

/// Half mean squared Bellman residual for single transitions (B1 and B2).
inline nn::Var<float> dqn_loss(const Network<float>& online, const Network<float>& target, const ImageStore& store,
                               const std::vector<const Transition*>& batch, double gamma)
{
    if (batch.empty()) throw std::invalid_argument("empty batch");
    const std::size_t n = batch.size();
    const bool hidden = uses_hidden_input(online.variant);
    if (online.variant == AgentVariant::M1) throw std::logic_error("dqn_loss is for the feed-forward agents");

    std::vector<ImageId> ids(n), next_ids(n);
    std::vector<HiddenVars> h(n), next_h(n);
    std::vector<std::size_t> actions(n);
    for (std::size_t i = 0; i < n; ++i) {
        ids[i] = batch[i]->image;
        next_ids[i] = batch[i]->next_image;
        h[i] = batch[i]->hidden;
        next_h[i] = batch[i]->next_hidden;
        actions[i] = static_cast<std::size_t>(index_of(batch[i]->action));
    }

    std::vector<float> y(n);
    {
        nn::NoGradGuard guard;
        std::optional<nn::Var<float>> hin;
        if (hidden) hin = nn::constant(hidden_batch<float>(next_h));
        const auto qn = nn::mlp_forward(target.mlp, nn::cnn_forward(target.cnn, nn::constant(image_batch<float>(store, next_ids))), hin);
        for (std::size_t i = 0; i < n; ++i) {
            const auto& q = qn.value();
            const float best = std::max({q.at(i, 0), q.at(i, 1), q.at(i, 2)});
            y[i] = batch[i]->reward + (batch[i]->terminal ? 0.0f : static_cast<float>(gamma) * best);
        }
    }
    std::optional<nn::Var<float>> hin;
    if (hidden) hin = nn::constant(hidden_batch<float>(h));
    const auto q = nn::mlp_forward(online.mlp, nn::cnn_forward(online.cnn, nn::constant(image_batch<float>(store, ids))), hin);
    return nn::half_mean_squared_error(nn::pick(q, actions), std::move(y));
}

/// Online network, its target copy and the optimizer: everything one gradient
/// update touches.
struct Learner {
    Network<float> online;
    Network<float> target;
    nn::NamedParams<float> online_params;
    nn::NamedParams<float> target_params;
    nn::Adam<float> adam;
    double gamma = 0.99;
    double tau = 0.005;

    Learner(Network<float> net, double gamma_, double tau_, nn::AdamConfig adam_config)
        : online(std::move(net)), target(online.clone(false)), online_params(online.parameters()),
          target_params(target.parameters()), adam(online_params, adam_config), gamma(gamma_), tau(tau_)
    {
    }

    Learner(const Learner&) = delete;
    Learner& operator=(const Learner&) = delete;

    /// Backward, Adam step, then the Polyak refresh of the target.
    double apply(const nn::Var<float>& loss)
    {
        nn::zero_grad(online_params);
        nn::backward(loss);
        adam.step(online_params);
        nn::polyak_update(target_params, online_params, tau);
        return static_cast<double>(loss.value()[0]);
    }
};

inline double dqn_update(Learner& learner, const ImageStore& store, const std::vector<const Transition*>& batch)
{
    return learner.apply(dqn_loss(learner.online, learner.target, store, batch, learner.gamma));
}

/// One pass over a batch of equal-length sub-episodes: for each position in
/// order, unroll the estimate from the stored seed through the current online
/// weights and take one BPTT gradient step on that position's Bellman loss.
/// `after_update(loss)` runs after every gradient step and may return false to
/// stop the pass early.
inline std::vector<double> sequential_update(Learner& learner, const ImageStore& store,
                                             const std::vector<const SubEpisode*>& batch,
                                             const std::function<bool(double)>& after_update = {})
{
    if (batch.empty()) throw std::invalid_argument("empty batch");
    const std::size_t len = batch.front()->length();
    for (const auto* s : batch)
        if (s->length() != len) throw std::invalid_argument("sequential_update needs equal-length sub-episodes");

    std::vector<double> losses;
    for (std::size_t t = 0; t < len; ++t) {
        std::vector<WindowTarget> windows;
        bool any = false;
        for (const auto* s : batch) {
            const bool active = s->trainable(t);
            any = any || active;
            windows.push_back({s, 0, t, active});
        }
        if (!any) continue;
        auto result = windowed_bellman_loss(learner.online, learner.target, store, windows, learner.gamma);
        const double loss = learner.apply(result.loss);
        losses.push_back(loss);
        if (after_update && !after_update(loss)) break;
    }
    return losses;
}

/// Windows of `window` steps; a single Bellman update at the last step of each
/// window that has a target (the final step if it ends the episode, otherwise
/// the one before it so the successor is inside the window).
inline std::vector<WindowTarget> window_targets(const std::vector<std::pair<const SubEpisode*, std::size_t>>& picks,
                                                std::size_t window)
{
    if (window < 2) throw std::invalid_argument("random-update window must be at least 2 steps");
    std::vector<WindowTarget> out;
    for (const auto& [sub, start] : picks) {
        if (start + window > sub->length()) throw std::out_of_range("window exceeds episode bounds");
        const std::size_t end = start + window - 1;
        const std::size_t pos = (end + 1 == sub->length() && sub->ends_terminal) ? window - 1 : window - 2;
        out.push_back({sub, start, pos, true});
    }
    return out;
}

inline double random_update(Learner& learner, const ImageStore& store,
                            const std::vector<std::pair<const SubEpisode*, std::size_t>>& picks, std::size_t window)
{
    auto result = windowed_bellman_loss(learner.online, learner.target, store, window_targets(picks, window),
                                        learner.gamma);
    return learner.apply(result.loss);
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

enum class UpdateMethod : std::uint8_t { Sequential, Random };

struct TrainerConfig {
    AgentVariant variant = AgentVariant::M1;
    std::size_t total_updates = 1'200'000;
    std::size_t batch_size = 0;      // 0: 32 sub-episodes (M1) or 64 transitions (B1/B2)
    std::size_t buffer_capacity = 0; // 0: 1e5 sub-episodes (M1) or 1e6 transitions (B1/B2)
    std::size_t seq_len = 60;
    double gamma = 0.99;
    double epsilon_start = 1.0;
    double epsilon_end = 0.05;
    double epsilon_decay_fraction = 0.1;
    double tau = 0.005;
    double lr = 3e-4;
    std::size_t episodes_per_iteration = 10;
    std::size_t batches_per_iteration = 50;
    std::size_t max_steps = 400;
    std::size_t eval_every = 500;
    std::size_t eval_episodes = 20;
    std::size_t min_buffer = 0; // 0: one batch worth of entries
    UpdateMethod update_method = UpdateMethod::Sequential;
    std::size_t random_window = 8;
    std::size_t checkpoint_every = 0;

    std::size_t effective_batch() const noexcept
    {
        return batch_size ? batch_size : (variant == AgentVariant::M1 ? 32 : 64);
    }
    std::size_t effective_capacity() const noexcept
    {
        return buffer_capacity ? buffer_capacity : (variant == AgentVariant::M1 ? 100'000 : 1'000'000);
    }
    std::size_t effective_min_buffer() const noexcept { return min_buffer ? min_buffer : effective_batch(); }

    void validate() const
    {
        if (total_updates == 0) throw std::invalid_argument("trainer.total_updates must be positive");
        if (!(gamma > 0.0 && gamma <= 1.0)) throw std::invalid_argument("trainer.gamma must lie in (0, 1]");
        if (seq_len == 0) throw std::invalid_argument("trainer.seq_len must be positive");
        if (eval_every == 0) throw std::invalid_argument("trainer.eval_every must be positive");
        if (!(tau >= 0.0 && tau <= 1.0)) throw std::invalid_argument("trainer.tau must lie in [0, 1]");
        if (epsilon_start < 0 || epsilon_start > 1 || epsilon_end < 0 || epsilon_end > 1)
            throw std::invalid_argument("trainer.epsilon values must lie in [0, 1]");
        if (episodes_per_iteration == 0 || batches_per_iteration == 0)
            throw std::invalid_argument("trainer iteration sizes must be positive");
        if (max_steps == 0) throw std::invalid_argument("trainer.max_steps must be positive");
        if (update_method == UpdateMethod::Random && random_window < 2)
            throw std::invalid_argument("trainer.random_window must be at least 2");
    }

    /// Linear decay over the first `epsilon_decay_fraction` of updates, then flat.
    double epsilon_at(std::size_t updates) const noexcept
    {
        const double span = epsilon_decay_fraction * static_cast<double>(total_updates);
        if (span <= 0.0) return epsilon_end;
        const double frac = static_cast<double>(updates) / span;
        if (frac >= 1.0) return epsilon_end;
        return epsilon_start + (epsilon_end - epsilon_start) * frac;
    }
};

struct MetricRow {
    std::size_t update_count = 0;
    std::size_t iteration = 0;
    double avg_return = 0.0;
    double epsilon = 0.0;
    double loss_mean = 0.0;
};

struct EvalSummary {
    double mean = 0.0;
    double stddev = 0.0;
    std::vector<Episode> episodes;
};

/// Greedy (or epsilon) evaluation over `count` fresh episodes. Environment
/// seeds derive from `seed` so repeated calls are reproducible.
inline EvalSummary evaluate(const Network<float>& net, const ImageSource& images, std::size_t count, std::uint64_t seed,
                            std::size_t max_steps, double epsilon = 0.0, bool keep_episodes = false,
                            const TransitionTables& tables = default_tables())
{
    EvalSummary out;
    Environment env(tables);
    Rng rng(derive_seed(seed, 0x4556414C)); // "EVAL"
    double sum = 0.0, sq = 0.0;
    for (std::size_t i = 0; i < count; ++i) {
        env.reset(derive_seed(seed, 0x454E56, i));
        Episode ep = rollout(net, env, images, epsilon, rng, max_steps);
        const double r = ep.total_return();
        sum += r;
        sq += r * r;
        if (keep_episodes) out.episodes.push_back(std::move(ep));
    }
    if (count > 0) {
        out.mean = sum / static_cast<double>(count);
        out.stddev = std::sqrt(std::max(0.0, sq / static_cast<double>(count) - out.mean * out.mean));
    }
    return out;
}

/// Collection/update interleave: `episodes_per_iteration` epsilon-greedy
/// episodes, then `batches_per_iteration` batches, until `total_updates`
/// gradient updates have been made. A metric row is emitted every
/// `eval_every` updates.
class Trainer {
public:
    using MetricSink = std::function<void(const MetricRow&)>;
    using CheckpointSink = std::function<void(const Network<float>&, std::size_t)>;

    Trainer(TrainerConfig config, const ImagePool& pool, Permutation perm, std::uint64_t seed)
        : config_((config.validate(), config)), pool_(&pool), images_{&pool, perm}, seed_(seed),
          rng_(derive_seed(seed, 0x545241494E)), // "TRAIN"
          learner_(init_network(config.variant, seed), config.gamma, config.tau, nn::AdamConfig{config.lr}),
          transitions_(config.variant == AgentVariant::M1 ? 1 : config.effective_capacity()),
          subepisodes_(config.variant == AgentVariant::M1 ? config.effective_capacity() : 1)
    {
    }

    static Network<float> init_network(AgentVariant v, std::uint64_t seed)
    {
        Rng init(derive_seed(seed, 0x494E4954)); // "INIT"
        return Network<float>::init(v, init);
    }

    void on_metric(MetricSink sink) { metric_sink_ = std::move(sink); }
    void on_checkpoint(CheckpointSink sink) { checkpoint_sink_ = std::move(sink); }

    const TrainerConfig& config() const noexcept { return config_; }
    Learner& learner() noexcept { return learner_; }
    const Network<float>& network() const noexcept { return learner_.online; }
    std::size_t updates() const noexcept { return updates_; }
    std::size_t episodes_collected() const noexcept { return episodes_; }
    const RingBuffer<Transition>& transitions() const noexcept { return transitions_; }
    const SubEpisodeBuffer& subepisodes() const noexcept { return subepisodes_; }
    const std::vector<MetricRow>& metrics() const noexcept { return rows_; }

    void run()
    {
        while (updates_ < config_.total_updates) {
            collect(config_.episodes_per_iteration);
            if (stored() < config_.effective_min_buffer()) continue;
            for (std::size_t b = 0; b < config_.batches_per_iteration && updates_ < config_.total_updates; ++b)
                update_batch();
        }
    }

    /// Collect and store `n` episodes with the current exploration rate.
    void collect(std::size_t n)
    {
        Environment env;
        const double eps = config_.epsilon_at(updates_);
        for (std::size_t i = 0; i < n; ++i) {
            env.reset(derive_seed(seed_, 0x434F4C4C, episodes_++)); // "COLL"
            Episode ep = rollout(learner_.online, env, images_, eps, rng_, config_.max_steps);
            store_episode(ep);
        }
    }

    void store_episode(const Episode& ep)
    {
        if (config_.variant == AgentVariant::M1) {
            for (auto& sub : split_episode(ep, config_.seq_len)) subepisodes_.push(std::move(sub));
        } else {
            for (auto& tr : episode_transitions(ep)) transitions_.push(tr);
        }
    }

    std::size_t stored() const noexcept
    {
        return config_.variant == AgentVariant::M1 ? subepisodes_.size() : transitions_.size();
    }

    void update_batch()
    {
        const std::size_t batch = config_.effective_batch();
        const ImageStore& store = pool_->store();
        if (config_.variant != AgentVariant::M1) {
            std::vector<const Transition*> picks(batch);
            for (auto& p : picks) p = &transitions_.slot(static_cast<std::size_t>(rng_.below(transitions_.size())));
            after_update(dqn_update(learner_, store, picks));
        } else if (config_.update_method == UpdateMethod::Sequential) {
            sequential_update(learner_, store, subepisodes_.sample_same_length(batch, rng_),
                              [this](double loss) { return after_update(loss); });
        } else {
            after_update(random_update(learner_, store, subepisodes_.sample_windows(batch, config_.random_window, rng_),
                                       config_.random_window));
        }
    }

private:
    bool after_update(double loss)
    {
        ++updates_;
        loss_sum_ += loss;
        ++loss_count_;
        if (updates_ % config_.eval_every == 0) emit_metric();
        if (config_.checkpoint_every && updates_ % config_.checkpoint_every == 0 && checkpoint_sink_)
            checkpoint_sink_(learner_.online, updates_);
        return updates_ < config_.total_updates;
    }

    void emit_metric()
    {
        MetricRow row;
        row.update_count = updates_;
        row.iteration = updates_ / config_.eval_every;
        row.epsilon = config_.epsilon_at(updates_);
        row.loss_mean = loss_count_ ? loss_sum_ / static_cast<double>(loss_count_) : 0.0;
        row.avg_return = evaluate(learner_.online, images_, config_.eval_episodes,
                                  derive_seed(seed_, 0x4D4554524943, row.iteration), config_.max_steps) // "METRIC"
                             .mean;
        loss_sum_ = 0.0;
        loss_count_ = 0;
        rows_.push_back(row);
        if (metric_sink_) metric_sink_(row);
    }

    TrainerConfig config_;
    const ImagePool* pool_;
    ImageSource images_;
    std::uint64_t seed_;
    Rng rng_;
    Learner learner_;
    RingBuffer<Transition> transitions_;
    SubEpisodeBuffer subepisodes_;
    std::size_t updates_ = 0;
    std::size_t episodes_ = 0;
    double loss_sum_ = 0.0;
    std::size_t loss_count_ = 0;
    std::vector<MetricRow> rows_;
    MetricSink metric_sink_;
    CheckpointSink checkpoint_sink_;
};

} // namespace survival

#endif
