#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "cgt/tensor.hpp"

namespace cgt {

inline constexpr std::size_t kFeatureRows = 12;
inline constexpr std::size_t kFeatureDim = 1024;
inline constexpr std::size_t kResampledLength = 96;

/// Temporal visual features of one case: 12 rows of 1024 values.
struct VisualFeatures {
    std::string case_id;
    Tensor features;  // [12 x 1024], no grad

    void validate() const;
};

/// Indices of a fixed-length (96) view of an N-image sequence. Longer
/// sequences are randomly down-sampled keeping order; shorter ones are
/// repeated whole and truncated.
std::vector<std::size_t> resample_indices(std::size_t n_images, std::mt19937_64& rng);

template <typename T>
std::vector<T> resample_sequence(std::span<const T> images, std::mt19937_64& rng) {
    std::vector<T> out;
    out.reserve(kResampledLength);
    for (auto i : resample_indices(images.size(), rng)) out.push_back(images[i]);
    return out;
}

/// Feature file: "FFAF", version byte, u32 rows, u32 cols, then row-major
/// little-endian float32 values.
inline constexpr char kFeatureMagic[4] = {'F', 'F', 'A', 'F'};
inline constexpr std::uint8_t kFeatureVersion = 1;

VisualFeatures read_feature_file(const std::filesystem::path& path, std::string case_id = {});
void write_feature_file(const std::filesystem::path& path, const VisualFeatures& f);

/// Standard-normal features from a seed.
VisualFeatures synthetic_features(std::uint64_t seed, std::string case_id = {});

}  // namespace cgt
