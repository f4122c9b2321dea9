#ifndef SURVIVAL_PROBES_HPP
#define SURVIVAL_PROBES_HPP

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "survival/agent.hpp"
#include "survival/dataset.hpp"
#include "survival/nn/layers.hpp"
#include "survival/rng.hpp"

namespace survival {

// ---------------------------------------------------------------------------
// Linear probe

struct FeatureRecord {
    std::array<float, nn::kFeatureDim> feature{};
    ObjectClass object = ObjectClass::None;
    int digit = 0;
    Split split = Split::Train;
};

/// Frozen-CNN features for labeled images, computed in batches.
inline std::vector<FeatureRecord> extract_features(const nn::CnnParams<float>& cnn, const ImageStore& store,
                                                   std::span<const LabeledImage> images, std::size_t batch = 512)
{
    nn::NoGradGuard guard;
    std::vector<FeatureRecord> out;
    out.reserve(images.size());
    std::vector<ImageId> ids;
    for (std::size_t start = 0; start < images.size(); start += batch) {
        const std::size_t end = std::min(images.size(), start + batch);
        ids.clear();
        for (std::size_t i = start; i < end; ++i) ids.push_back(images[i].id);
        const auto f = nn::cnn_forward(cnn, nn::constant(image_batch<float>(store, ids))).value();
        for (std::size_t i = start; i < end; ++i) {
            FeatureRecord r;
            for (std::size_t k = 0; k < nn::kFeatureDim; ++k) r.feature[k] = f.at(i - start, k);
            r.object = images[i].object;
            r.digit = images[i].digit;
            r.split = store.split(images[i].id);
            out.push_back(r);
        }
    }
    return out;
}

inline Eigen::MatrixXd feature_matrix(std::span<const FeatureRecord> records)
{
    Eigen::MatrixXd x(static_cast<Eigen::Index>(records.size()), static_cast<Eigen::Index>(nn::kFeatureDim));
    for (std::size_t i = 0; i < records.size(); ++i)
        for (std::size_t k = 0; k < nn::kFeatureDim; ++k)
            x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = records[i].feature[k];
    return x;
}

inline std::vector<int> class_labels(std::span<const FeatureRecord> records)
{
    std::vector<int> y;
    y.reserve(records.size());
    for (const auto& r : records) y.push_back(index_of(r.object));
    return y;
}

struct SvmConfig {
    double lambda = 1e-4;
    int epochs = 50;
    double learning_rate = 0.1;
    std::uint64_t seed = 0;
};

/// One-vs-rest linear SVM on whitened inputs. Whitening uses the eigenbasis of
/// the training covariance with near-null directions dropped, so duplicated or
/// linearly mixed features fit the same classifier.
class LinearProbe {
public:
    int num_classes() const noexcept { return static_cast<int>(bias_.size()); }
    const Eigen::MatrixXd& weights() const noexcept { return weights_; }
    const Eigen::VectorXd& bias() const noexcept { return bias_; }

    Eigen::MatrixXd scores(const Eigen::MatrixXd& x) const
    {
        if (x.cols() != mean_.size())
            throw std::invalid_argument("probe expects " + std::to_string(mean_.size()) + " features, got " +
                                        std::to_string(x.cols()));
        return (whiten(x) * weights_.transpose()).rowwise() + bias_.transpose();
    }

    std::vector<int> predict(const Eigen::MatrixXd& x) const
    {
        const Eigen::MatrixXd s = scores(x);
        std::vector<int> out(static_cast<std::size_t>(s.rows()));
        for (Eigen::Index i = 0; i < s.rows(); ++i) {
            Eigen::Index best = 0;
            for (Eigen::Index k = 1; k < s.cols(); ++k)
                if (s(i, k) > s(i, best)) best = k;
            out[static_cast<std::size_t>(i)] = static_cast<int>(best);
        }
        return out;
    }

    Eigen::MatrixXd whiten(const Eigen::MatrixXd& x) const { return (x.rowwise() - mean_.transpose()) * projection_; }

    friend LinearProbe fit_linear_probe(const Eigen::MatrixXd& x, std::span<const int> labels, int num_classes,
                                        const SvmConfig& config);

private:
    Eigen::VectorXd mean_;
    Eigen::MatrixXd projection_; // d x r
    Eigen::MatrixXd weights_;    // classes x r
    Eigen::VectorXd bias_;
};

/// Subgradient descent on the L2-regularised hinge loss, one sample at a time
/// with step size lr / epoch. The regulariser is applied as a proximal shrink
/// so arbitrarily large lambda stays stable.
inline LinearProbe fit_linear_probe(const Eigen::MatrixXd& x, std::span<const int> labels, int num_classes,
                                    const SvmConfig& config = {})
{
    const auto n = x.rows();
    if (n == 0 || static_cast<std::size_t>(n) != labels.size())
        throw std::invalid_argument("probe: feature rows and labels must be non-empty and equal in count");
    if (num_classes < 2) throw std::invalid_argument("probe: need at least two classes");
    std::vector<std::size_t> per_class(static_cast<std::size_t>(num_classes), 0);
    for (int y : labels) {
        if (y < 0 || y >= num_classes) throw std::invalid_argument("probe: label out of range");
        ++per_class[static_cast<std::size_t>(y)];
    }
    for (int k = 0; k < num_classes; ++k)
        if (per_class[static_cast<std::size_t>(k)] == 0)
            throw std::invalid_argument("probe: class " + std::to_string(k) + " has no training records");

    LinearProbe probe;
    probe.mean_ = x.colwise().mean().transpose();
    const Eigen::MatrixXd centered = x.rowwise() - probe.mean_.transpose();
    const Eigen::MatrixXd cov = centered.transpose() * centered / static_cast<double>(std::max<Eigen::Index>(1, n - 1));
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
    const Eigen::VectorXd vals = eig.eigenvalues();
    const double top = vals.size() ? vals.maxCoeff() : 0.0;
    std::vector<Eigen::Index> keep;
    for (Eigen::Index i = vals.size() - 1; i >= 0; --i)
        if (vals(i) > 1e-9 * top && vals(i) > 0.0) keep.push_back(i);
    probe.projection_.resize(x.cols(), static_cast<Eigen::Index>(keep.size()));
    for (std::size_t j = 0; j < keep.size(); ++j)
        probe.projection_.col(static_cast<Eigen::Index>(j)) = eig.eigenvectors().col(keep[j]) / std::sqrt(vals(keep[j]));

    const Eigen::MatrixXd z = centered * probe.projection_;
    const Eigen::Index r = z.cols();
    probe.weights_ = Eigen::MatrixXd::Zero(num_classes, r);
    probe.bias_ = Eigen::VectorXd::Zero(num_classes);

    std::vector<std::size_t> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(derive_seed(config.seed, 0x53564D)); // "SVM"
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
        const double eta = config.learning_rate / static_cast<double>(epoch + 1);
        const double shrink = 1.0 / (1.0 + eta * config.lambda);
        for (std::size_t idx : order) {
            const auto row = z.row(static_cast<Eigen::Index>(idx));
            for (int k = 0; k < num_classes; ++k) {
                const double y = labels[idx] == k ? 1.0 : -1.0;
                auto w = probe.weights_.row(k);
                const double margin = y * (w.dot(row) + probe.bias_(k));
                if (margin < 1.0) {
                    w += eta * y * row;
                    probe.bias_(k) += eta * y;
                }
                w *= shrink;
            }
        }
    }
    return probe;
}

inline LinearProbe fit_linear_probe(std::span<const FeatureRecord> train, const SvmConfig& config = {})
{
    const auto y = class_labels(train);
    return fit_linear_probe(feature_matrix(train), y, kNumObjects, config);
}

/// Percentage of argmax-correct predictions.
inline double probe_accuracy(const LinearProbe& probe, const Eigen::MatrixXd& x, std::span<const int> labels)
{
    if (labels.empty()) return 0.0;
    const auto pred = probe.predict(x);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == labels[i];
    return 100.0 * static_cast<double>(correct) / static_cast<double>(labels.size());
}

inline double probe_accuracy(const LinearProbe& probe, std::span<const FeatureRecord> records)
{
    const auto y = class_labels(records);
    return probe_accuracy(probe, feature_matrix(records), y);
}

using ConfusionMatrix = std::array<std::array<std::size_t, kNumObjects>, kNumObjects>; // [true][predicted]

inline ConfusionMatrix confusion(const LinearProbe& probe, std::span<const FeatureRecord> records)
{
    ConfusionMatrix m{};
    const auto pred = probe.predict(feature_matrix(records));
    for (std::size_t i = 0; i < records.size(); ++i)
        ++m[static_cast<std::size_t>(index_of(records[i].object))][static_cast<std::size_t>(pred[i])];
    return m;
}

struct ProbeReport {
    std::string checkpoint;
    int permutation = 1;
    double train_accuracy = 0.0;
    double test_accuracy = 0.0;
    ConfusionMatrix test_confusion{};
};

inline ProbeReport run_linear_probe(const nn::CnnParams<float>& cnn, const ImageStore& store, const ProbeSplit& split,
                                    int permutation_id, const SvmConfig& config = {})
{
    const auto train = extract_features(cnn, store, split.train);
    const auto test = extract_features(cnn, store, split.test);
    const auto probe = fit_linear_probe(train, config);
    ProbeReport r;
    r.permutation = permutation_id;
    r.train_accuracy = probe_accuracy(probe, train);
    r.test_accuracy = probe_accuracy(probe, test);
    r.test_confusion = confusion(probe, test);
    return r;
}

// ---------------------------------------------------------------------------
// PCA

struct PcaResult {
    Eigen::VectorXd mean;
    Eigen::MatrixXd components;         // d x d, columns sorted by variance
    Eigen::VectorXd explained_variance; // all d, non-increasing
    Eigen::MatrixXd projected;          // n x k

    double variance_ratio(Eigen::Index i) const
    {
        const double total = explained_variance.sum();
        return total > 0.0 ? explained_variance(i) / total : 0.0;
    }
};

/// Mean-centred projection onto the top `k` right singular vectors.
inline PcaResult pca_project(const Eigen::MatrixXd& x, Eigen::Index k = 3)
{
    if (x.rows() < x.cols() || x.rows() < 2) throw std::invalid_argument("pca: need at least as many rows as columns");
    if (k < 1 || k > x.cols()) throw std::invalid_argument("pca: component count out of range");
    PcaResult r;
    r.mean = x.colwise().mean().transpose();
    const Eigen::MatrixXd centered = x.rowwise() - r.mean.transpose();
    if (centered.squaredNorm() == 0.0) throw std::invalid_argument("pca: input has zero variance");
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(centered, Eigen::ComputeThinV);
    r.components = svd.matrixV();
    r.explained_variance = svd.singularValues().array().square() / static_cast<double>(x.rows() - 1);
    r.projected = centered * r.components.leftCols(k);
    return r;
}

inline PcaResult pca_project(std::span<const FeatureRecord> records, Eigen::Index k = 3)
{
    return pca_project(feature_matrix(records), k);
}

// ---------------------------------------------------------------------------
// Hidden-variable correlation

/// Pearson coefficient, or nullopt when either series is constant.
inline std::optional<double> pearson(std::span<const double> x, std::span<const double> y)
{
    if (x.size() != y.size()) throw std::invalid_argument("pearson: series lengths differ");
    if (x.size() < 2) return std::nullopt;
    const double n = static_cast<double>(x.size());
    const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
    const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double dx = x[i] - mx, dy = y[i] - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if (sxx == 0.0 || syy == 0.0) return std::nullopt;
    return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

struct CorrelationReport {
    std::optional<double> pooled_hunger;
    std::optional<double> pooled_sickness;
    std::optional<double> episode_mean_hunger;
    std::optional<double> episode_mean_sickness;
    std::size_t episodes = 0;
    std::size_t steps = 0;
    std::size_t excluded_hunger = 0; // episodes with a constant series
    std::size_t excluded_sickness = 0;
    std::vector<std::string> warnings;
};

/// Correlation between logged estimates and ground truth. Pooled over all
/// steps of all episodes (headline) and averaged per episode.
inline CorrelationReport hidden_correlation(std::span<const Episode> episodes)
{
    CorrelationReport r;
    std::array<std::vector<double>, 2> est, truth;
    std::array<double, 2> per_sum{};
    std::array<std::size_t, 2> per_n{};
    for (const auto& ep : episodes) {
        std::array<std::vector<double>, 2> e, t;
        for (const auto& s : ep.steps) {
            if (!s.h_est) throw std::invalid_argument("hidden_correlation: episode step without an estimate");
            e[0].push_back((*s.h_est)[0]);
            e[1].push_back((*s.h_est)[1]);
            t[0].push_back(s.h_true.hunger());
            t[1].push_back(s.h_true.sickness());
        }
        for (std::size_t v = 0; v < 2; ++v) {
            if (auto c = pearson(e[v], t[v])) {
                per_sum[v] += *c;
                ++per_n[v];
            } else {
                ++(v == 0 ? r.excluded_hunger : r.excluded_sickness);
            }
            est[v].insert(est[v].end(), e[v].begin(), e[v].end());
            truth[v].insert(truth[v].end(), t[v].begin(), t[v].end());
        }
        ++r.episodes;
        r.steps += ep.steps.size();
    }
    r.pooled_hunger = pearson(est[0], truth[0]);
    r.pooled_sickness = pearson(est[1], truth[1]);
    if (per_n[0]) r.episode_mean_hunger = per_sum[0] / static_cast<double>(per_n[0]);
    if (per_n[1]) r.episode_mean_sickness = per_sum[1] / static_cast<double>(per_n[1]);
    if (!r.pooled_hunger) r.warnings.push_back("pooled hunger series is constant; correlation undefined");
    if (!r.pooled_sickness) r.warnings.push_back("pooled sickness series is constant; correlation undefined");
    if (r.excluded_hunger)
        r.warnings.push_back(std::to_string(r.excluded_hunger) + " episode(s) excluded from per-episode hunger mean");
    if (r.excluded_sickness)
        r.warnings.push_back(std::to_string(r.excluded_sickness) + " episode(s) excluded from per-episode sickness mean");
    return r;
}

// ---------------------------------------------------------------------------
// Vision-action dependency

enum class Level : std::uint8_t { Low, High, Any };

constexpr std::string_view to_string(Level l) noexcept
{
    switch (l) {
    case Level::Low: return "low";
    case Level::High: return "high";
    case Level::Any: return "any";
    }
    return "?";
}

struct BucketThresholds {
    double hunger_low = 0.4;  // low if below
    double hunger_high = 0.8; // high if above
    double sickness_low = 0.65;
    double sickness_high = 0.7;
};

/// Whether a level falls in the bucket; mid-range values belong to neither
/// Low nor High.
inline bool in_bucket(double value, Level level, double low_below, double high_above)
{
    switch (level) {
    case Level::Low: return value < low_below;
    case Level::High: return value > high_above;
    case Level::Any: return true;
    }
    return false;
}

inline constexpr std::array<Level, 3> kAllLevels{Level::Low, Level::High, Level::Any};

struct DependencyCell {
    ObjectClass object = ObjectClass::None;
    Level hunger = Level::Any;
    Level sickness = Level::Any;
    std::size_t steps = 0;                            // episode steps in the bucket
    std::array<std::size_t, kNumActions> counts{};   // greedy actions actually logged
    std::optional<std::array<double, kNumActions>> empirical;
    std::size_t pairs = 0; // image x hidden-input evaluations
    std::optional<std::array<double, kNumActions>> distribution;
};

struct DependencyConfig {
    BucketThresholds thresholds;
    std::size_t max_images = 200;
    std::size_t max_hidden = 200;
    std::uint64_t seed = 0;
};

struct DependencyTable {
    std::vector<DependencyCell> cells;

    const DependencyCell& at(ObjectClass o, Level hunger, Level sickness) const
    {
        for (const auto& c : cells)
            if (c.object == o && c.hunger == hunger && c.sickness == sickness) return c;
        throw std::out_of_range("dependency cell not found");
    }
};

namespace detail {

template <class Item>
std::vector<Item> subsample(std::vector<Item> items, std::size_t limit, Rng& rng)
{
    if (items.size() <= limit) return items;
    for (std::size_t i = 0; i < limit; ++i) std::swap(items[i], items[i + rng.below(items.size() - i)]);
    items.resize(limit);
    return items;
}

} // namespace detail

/// P(action | object, bucket) for a greedy policy. Two estimates per cell:
/// `empirical` counts the logged actions; `distribution` evaluates the policy
/// on every pairing of the object's logged images with the hidden inputs
/// logged inside the bucket, so image sampling cannot masquerade as a
/// hidden-variable effect. Buckets are defined on the true levels.
inline DependencyTable action_dependency(const Network<float>& net, const ImageStore& store,
                                         std::span<const Episode> episodes, const DependencyConfig& config = {})
{
    const auto& th = config.thresholds;
    Rng rng(derive_seed(config.seed, 0x444550)); // "DEP"
    std::array<std::vector<ImageId>, kNumObjects> images;
    for (const auto& ep : episodes)
        for (const auto& s : ep.steps) images[static_cast<std::size_t>(index_of(s.object))].push_back(s.image);

    DependencyTable table;
    nn::NoGradGuard guard;
    for (ObjectClass o : kAllObjects) {
        auto imgs = detail::subsample(images[static_cast<std::size_t>(index_of(o))], config.max_images, rng);
        nn::Tensor<float> features({0, nn::kFeatureDim});
        if (!imgs.empty()) features = nn::cnn_forward(net.cnn, nn::constant(image_batch<float>(store, imgs))).value();

        for (Level hl : kAllLevels)
            for (Level sl : kAllLevels) {
                DependencyCell cell;
                cell.object = o;
                cell.hunger = hl;
                cell.sickness = sl;
                std::vector<Estimate> hidden_inputs;
                for (const auto& ep : episodes)
                    for (const auto& s : ep.steps) {
                        if (s.object != o) continue;
                        if (!in_bucket(s.h_true.hunger(), hl, th.hunger_low, th.hunger_high)) continue;
                        if (!in_bucket(s.h_true.sickness(), sl, th.sickness_low, th.sickness_high)) continue;
                        ++cell.steps;
                        ++cell.counts[static_cast<std::size_t>(index_of(s.action))];
                        if (net.variant == AgentVariant::M1 && s.h_est)
                            hidden_inputs.push_back(*s.h_est);
                        else
                            hidden_inputs.push_back(
                                {static_cast<float>(s.h_true.hunger()), static_cast<float>(s.h_true.sickness())});
                    }
                if (cell.steps > 0) {
                    std::array<double, kNumActions> p{};
                    for (std::size_t a = 0; a < kNumActions; ++a)
                        p[a] = static_cast<double>(cell.counts[a]) / static_cast<double>(cell.steps);
                    cell.empirical = p;
                }
                hidden_inputs = detail::subsample(std::move(hidden_inputs), config.max_hidden, rng);
                if (!hidden_inputs.empty() && !imgs.empty()) {
                    std::array<std::size_t, kNumActions> hits{};
                    const std::size_t m = hidden_inputs.size();
                    nn::Tensor<float> h({m, nn::kHiddenDim});
                    for (std::size_t j = 0; j < m; ++j) {
                        h.at(j, 0) = hidden_inputs[j][0];
                        h.at(j, 1) = hidden_inputs[j][1];
                    }
                    for (std::size_t i = 0; i < imgs.size(); ++i) {
                        if (!uses_hidden_input(net.variant)) {
                            const auto q = nn::mlp_forward(net.mlp, nn::select_rows(nn::constant(features), {i}),
                                                           std::optional<nn::Var<float>>{})
                                               .value();
                            hits[static_cast<std::size_t>(index_of(greedy_action({q[0], q[1], q[2]})))] += m;
                            continue;
                        }
                        nn::Tensor<float> f({m, nn::kFeatureDim});
                        for (std::size_t j = 0; j < m; ++j)
                            for (std::size_t k = 0; k < nn::kFeatureDim; ++k) f.at(j, k) = features.at(i, k);
                        const auto q = nn::mlp_forward(net.mlp, nn::constant(f), std::optional{nn::constant(h)}).value();
                        for (std::size_t j = 0; j < m; ++j)
                            ++hits[static_cast<std::size_t>(
                                index_of(greedy_action({q.at(j, 0), q.at(j, 1), q.at(j, 2)})))];
                    }
                    cell.pairs = imgs.size() * m;
                    std::array<double, kNumActions> p{};
                    for (std::size_t a = 0; a < kNumActions; ++a)
                        p[a] = static_cast<double>(hits[a]) / static_cast<double>(cell.pairs);
                    cell.distribution = p;
                }
                table.cells.push_back(cell);
            }
    }
    return table;
}

inline double total_variation(const std::array<double, kNumActions>& p, const std::array<double, kNumActions>& q)
{
    double d = 0.0;
    for (std::size_t a = 0; a < kNumActions; ++a) d += std::abs(p[a] - q[a]);
    return 0.5 * d;
}

/// Largest total-variation distance between the high- and low-sickness
/// distributions (hunger unrestricted) over object classes with both cells populated.
inline std::optional<double> max_sickness_shift(const DependencyTable& table)
{
    std::optional<double> best;
    for (ObjectClass o : kAllObjects) {
        const auto& hi = table.at(o, Level::Any, Level::High);
        const auto& lo = table.at(o, Level::Any, Level::Low);
        if (!hi.distribution || !lo.distribution) continue;
        const double d = total_variation(*hi.distribution, *lo.distribution);
        if (!best || d > *best) best = d;
    }
    return best;
}

} // namespace survival

#endif
