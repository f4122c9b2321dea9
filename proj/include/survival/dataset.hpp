#ifndef SURVIVAL_DATASET_HPP
#define SURVIVAL_DATASET_HPP

#include <algorithm>
#include <array>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "survival/env.hpp"
#include "survival/rng.hpp"

namespace survival {

inline constexpr int kImageSide = 28;
inline constexpr int kImagePixels = kImageSide * kImageSide;
inline constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;

class IdxError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

namespace detail {

inline std::uint32_t read_be32(std::istream& in, const std::string& what)
{
    unsigned char b[4];
    if (!in.read(reinterpret_cast<char*>(b), 4)) throw IdxError("truncated header in " + what);
    return (std::uint32_t{b[0]} << 24) | (std::uint32_t{b[1]} << 16) | (std::uint32_t{b[2]} << 8) |
           std::uint32_t{b[3]};
}

inline std::string hex32(std::uint32_t v)
{
    char buf[16];
    std::snprintf(buf, sizeof buf, "0x%08X", v);
    return buf;
}

inline std::ifstream open_binary(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IdxError("cannot open IDX file: " + path.string());
    return in;
}

} // namespace detail

/// Raw IDX image file: `count` images of rows x cols, pixels scaled by 1/255.
struct IdxImages {
    std::size_t count = 0;
    int rows = 0;
    int cols = 0;
    std::vector<float> pixels;
};

inline IdxImages read_idx_images(std::istream& in, const std::string& name = "<stream>")
{
    const std::uint32_t magic = detail::read_be32(in, name);
    if (magic != kIdxImagesMagic)
        throw IdxError(name + ": bad image magic " + detail::hex32(magic) + " (expected 0x00000803)");
    IdxImages out;
    out.count = detail::read_be32(in, name);
    out.rows = static_cast<int>(detail::read_be32(in, name));
    out.cols = static_cast<int>(detail::read_be32(in, name));
    const std::size_t total = out.count * static_cast<std::size_t>(out.rows) * out.cols;
    std::vector<unsigned char> bytes(total);
    if (total > 0 && !in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(total)))
        throw IdxError(name + ": truncated image payload");
    out.pixels.resize(total);
    std::transform(bytes.begin(), bytes.end(), out.pixels.begin(),
                   [](unsigned char b) { return static_cast<float>(b) / 255.0f; });
    return out;
}

inline std::vector<std::uint8_t> read_idx_labels(std::istream& in, const std::string& name = "<stream>")
{
    const std::uint32_t magic = detail::read_be32(in, name);
    if (magic != kIdxLabelsMagic)
        throw IdxError(name + ": bad label magic " + detail::hex32(magic) + " (expected 0x00000801)");
    const std::uint32_t count = detail::read_be32(in, name);
    std::vector<std::uint8_t> labels(count);
    if (count > 0 && !in.read(reinterpret_cast<char*>(labels.data()), count))
        throw IdxError(name + ": truncated label payload");
    return labels;
}

enum class Split : std::uint8_t { Train, Test };

using ImageId = std::uint32_t;

/// Labeled 28x28 images in one contiguous buffer. Immutable once built.
class ImageStore {
public:
    ImageStore() = default;

    void append(const IdxImages& images, const std::vector<std::uint8_t>& labels, Split split)
    {
        if (images.count != labels.size())
            throw IdxError("image/label count mismatch: " + std::to_string(images.count) + " vs " +
                           std::to_string(labels.size()));
        if (images.rows != kImageSide || images.cols != kImageSide)
            throw IdxError("expected 28x28 images");
        for (auto l : labels)
            if (l > 9) throw IdxError("label outside 0..9");
        pixels_.insert(pixels_.end(), images.pixels.begin(), images.pixels.end());
        labels_.insert(labels_.end(), labels.begin(), labels.end());
        splits_.insert(splits_.end(), labels.size(), split);
    }

    std::size_t size() const noexcept { return labels_.size(); }
    std::span<const float> image(ImageId id) const
    {
        return {pixels_.data() + static_cast<std::size_t>(id) * kImagePixels, kImagePixels};
    }
    int label(ImageId id) const { return labels_.at(id); }
    Split split(ImageId id) const { return splits_.at(id); }

    std::vector<ImageId> ids_with(int digit, Split split) const
    {
        std::vector<ImageId> ids;
        for (std::size_t i = 0; i < labels_.size(); ++i)
            if (labels_[i] == digit && splits_[i] == split) ids.push_back(static_cast<ImageId>(i));
        return ids;
    }

private:
    std::vector<float> pixels_;
    std::vector<std::uint8_t> labels_;
    std::vector<Split> splits_;
};

struct MnistPaths {
    std::filesystem::path train_images;
    std::filesystem::path train_labels;
    std::filesystem::path test_images;
    std::filesystem::path test_labels;

    static MnistPaths in_directory(const std::filesystem::path& dir)
    {
        return {dir / "train-images-idx3-ubyte", dir / "train-labels-idx1-ubyte",
                dir / "t10k-images-idx3-ubyte", dir / "t10k-labels-idx1-ubyte"};
    }
};

inline void load_idx_pair(ImageStore& store, const std::filesystem::path& images,
                          const std::filesystem::path& labels, Split split)
{
    auto img_in = detail::open_binary(images);
    auto lbl_in = detail::open_binary(labels);
    store.append(read_idx_images(img_in, images.string()), read_idx_labels(lbl_in, labels.string()),
                 split);
}

inline std::shared_ptr<const ImageStore> load_mnist(const MnistPaths& paths)
{
    auto store = std::make_shared<ImageStore>();
    load_idx_pair(*store, paths.train_images, paths.train_labels, Split::Train);
    load_idx_pair(*store, paths.test_images, paths.test_labels, Split::Test);
    return store;
}

/// Two digits per object class.
struct Permutation {
    int id = 1;
    std::array<std::array<int, 2>, kNumObjects> digits{};

    const std::array<int, 2>& digits_for(ObjectClass o) const { return digits[index_of(o)]; }

    /// Object class a digit stands for, or nullopt when the digit is unused.
    std::optional<ObjectClass> class_of(int digit) const
    {
        for (ObjectClass o : kAllObjects)
            for (int d : digits_for(o))
                if (d == digit) return o;
        return std::nullopt;
    }

    std::vector<int> used_digits() const
    {
        std::vector<int> out;
        for (const auto& pair : digits) out.insert(out.end(), pair.begin(), pair.end());
        return out;
    }
};

inline Permutation permutation(int id)
{
    // Rows ordered none, predator, prey, rotten food.
    switch (id) {
    case 1: return {1, {{{0, 1}, {6, 7}, {2, 3}, {4, 5}}}};
    case 2: return {2, {{{7, 8}, {5, 3}, {6, 1}, {9, 2}}}};
    case 3: return {3, {{{2, 5}, {6, 4}, {9, 7}, {8, 3}}}};
    case 4: return {4, {{{0, 6}, {8, 1}, {3, 7}, {2, 4}}}};
    default: throw std::invalid_argument("permutation id must be 1..4, got " + std::to_string(id));
    }
}

/// The images the agent sees during reinforcement learning: a fixed random
/// subset of the training split per digit.
class ImagePool {
public:
    static constexpr std::size_t kDefaultPerDigit = 1000;

    ImagePool(std::shared_ptr<const ImageStore> store, std::uint64_t seed,
              std::size_t per_digit = kDefaultPerDigit)
        : store_(std::move(store))
    {
        if (!store_) throw std::invalid_argument("ImagePool needs an image store");
        Rng rng(derive_seed(seed, 0x504F4F4C)); // "POOL"
        for (int digit = 0; digit < 10; ++digit) {
            auto ids = store_->ids_with(digit, Split::Train);
            if (ids.size() < per_digit)
                throw std::runtime_error("not enough training images for digit " + std::to_string(digit));
            partial_shuffle(ids, per_digit, rng);
            ids.resize(per_digit);
            std::sort(ids.begin(), ids.end());
            by_digit_[static_cast<std::size_t>(digit)] = std::move(ids);
        }
    }

    const ImageStore& store() const noexcept { return *store_; }
    const std::shared_ptr<const ImageStore>& store_ptr() const noexcept { return store_; }
    const std::vector<ImageId>& digit(int d) const { return by_digit_.at(static_cast<std::size_t>(d)); }

    bool contains(ImageId id) const
    {
        const auto& v = digit(store_->label(id));
        return std::binary_search(v.begin(), v.end(), id);
    }

    static void partial_shuffle(std::vector<ImageId>& ids, std::size_t k, Rng& rng)
    {
        for (std::size_t i = 0; i < k && i + 1 < ids.size(); ++i) {
            const std::size_t j = i + static_cast<std::size_t>(rng.below(ids.size() - i));
            std::swap(ids[i], ids[j]);
        }
    }

private:
    std::shared_ptr<const ImageStore> store_;
    std::array<std::vector<ImageId>, 10> by_digit_;
};

/// Uniform digit among the class's pair, then a uniform image of that digit.
inline ImageId sample_image(const ImagePool& pool, const Permutation& perm, ObjectClass object, Rng& rng)
{
    const auto& pair = perm.digits_for(object);
    const int digit = pair[static_cast<std::size_t>(rng.below(2))];
    const auto& ids = pool.digit(digit);
    return ids[static_cast<std::size_t>(rng.below(ids.size()))];
}

struct LabeledImage {
    ImageId id = 0;
    int digit = 0;
    ObjectClass object = ObjectClass::None;
};

struct ProbeSplit {
    std::vector<LabeledImage> train;
    std::vector<LabeledImage> test;
};

/// Probe train: every RL-pool image of the permutation's eight digits.
/// Probe test: `test_per_digit` images per digit never shown during RL, taken
/// from the MNIST test split first and topped up with unused training images.
inline ProbeSplit probe_split(const ImagePool& pool, const Permutation& perm, std::uint64_t seed,
                              std::size_t test_per_digit = 4000)
{
    ProbeSplit split;
    Rng rng(derive_seed(seed, 0x50524F42)); // "PROB"
    for (ObjectClass o : kAllObjects) {
        for (int digit : perm.digits_for(o)) {
            for (ImageId id : pool.digit(digit)) split.train.push_back({id, digit, o});

            std::vector<ImageId> held_out = pool.store().ids_with(digit, Split::Test);
            if (held_out.size() > test_per_digit) {
                ImagePool::partial_shuffle(held_out, test_per_digit, rng);
                held_out.resize(test_per_digit);
            } else {
                std::vector<ImageId> unused;
                for (ImageId id : pool.store().ids_with(digit, Split::Train))
                    if (!pool.contains(id)) unused.push_back(id);
                const std::size_t need = test_per_digit - held_out.size();
                if (unused.size() < need)
                    throw std::runtime_error("insufficient held-out images for digit " +
                                             std::to_string(digit));
                ImagePool::partial_shuffle(unused, need, rng);
                held_out.insert(held_out.end(), unused.begin(), unused.begin() + static_cast<std::ptrdiff_t>(need));
            }
            std::sort(held_out.begin(), held_out.end());
            for (ImageId id : held_out) split.test.push_back({id, digit, o});
        }
    }
    return split;
}

} // namespace survival

#endif
