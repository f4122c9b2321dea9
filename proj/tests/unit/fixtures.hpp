#ifndef SURVIVAL_TEST_FIXTURES_HPP
#define SURVIVAL_TEST_FIXTURES_HPP

#include <memory>

#include "survival/dataset.hpp"

namespace survival::fixtures {

/// Small random image store: `per_digit` noise images for every digit,
/// each digit with its own brightness so classes are separable.
inline std::shared_ptr<const ImageStore> synthetic_store(std::size_t per_digit = 12, std::uint64_t seed = 1)
{
    Rng rng(seed);
    IdxImages images;
    images.rows = kImageSide;
    images.cols = kImageSide;
    std::vector<std::uint8_t> labels;
    for (int digit = 0; digit < 10; ++digit)
        for (std::size_t i = 0; i < per_digit; ++i) {
            for (int p = 0; p < kImagePixels; ++p)
                images.pixels.push_back(static_cast<float>(0.5 * rng.uniform() + 0.05 * digit));
            labels.push_back(static_cast<std::uint8_t>(digit));
        }
    images.count = labels.size();
    auto store = std::make_shared<ImageStore>();
    store->append(images, labels, Split::Train);
    return store;
}

inline ImagePool synthetic_pool(std::size_t per_digit = 12, std::uint64_t seed = 1)
{
    return ImagePool(synthetic_store(per_digit, seed), seed, per_digit);
}

} // namespace survival::fixtures

#endif
