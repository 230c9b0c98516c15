#include "cgt/features.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <numeric>

#include "cgt/params.hpp"

namespace cgt {

void VisualFeatures::validate() const {
    if (!features.defined() || features.rank() != 2 || features.dim(0) != kFeatureRows ||
        features.dim(1) != kFeatureDim) {
        throw DimensionError("visual features must be 12x1024" +
                             (features.defined() ? ", got " + shape_str(features.shape()) : std::string()));
    }
    if (!features.all_finite()) throw ContractError("visual features of '" + case_id + "' contain non-finite values");
}

std::vector<std::size_t> resample_indices(std::size_t n_images, std::mt19937_64& rng) {
    if (n_images == 0) throw std::invalid_argument("resample_indices: a case needs at least one image");
    std::vector<std::size_t> all(n_images);
    std::iota(all.begin(), all.end(), 0);
    if (n_images == kResampledLength) return all;
    std::vector<std::size_t> out;
    out.reserve(kResampledLength);
    if (n_images > kResampledLength) {
        // std::sample over a forward range keeps the relative order.
        std::sample(all.begin(), all.end(), std::back_inserter(out), kResampledLength, rng);
        return out;
    }
    while (out.size() < kResampledLength) out.push_back(all[out.size() % n_images]);
    return out;
}

VisualFeatures read_feature_file(const std::filesystem::path& path, std::string case_id) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open feature file " + path.string(), 0);
    std::uint64_t offset = 0;
    auto read = [&](void* dst, std::size_t n, const char* what) {
        in.read(static_cast<char*>(dst), static_cast<std::streamsize>(n));
        if (in.gcount() != static_cast<std::streamsize>(n)) {
            throw FormatError(path.string() + ": truncated while reading " + what, offset + static_cast<std::uint64_t>(in.gcount()));
        }
        offset += n;
    };
    char magic[4];
    read(magic, 4, "magic");
    if (std::memcmp(magic, kFeatureMagic, 4) != 0) throw FormatError(path.string() + ": bad magic", 0);
    std::uint8_t version = 0;
    read(&version, 1, "version");
    if (version != kFeatureVersion) throw FormatError(path.string() + ": unsupported version", 4);
    std::uint32_t rows = 0, cols = 0;
    read(&rows, 4, "rows");
    read(&cols, 4, "cols");
    if (rows != kFeatureRows) throw FormatError(path.string() + ": expected 12 rows, got " + std::to_string(rows), 5);
    if (cols != kFeatureDim) throw FormatError(path.string() + ": expected 1024 cols, got " + std::to_string(cols), 9);
    std::vector<float> raw(kFeatureRows * kFeatureDim);
    read(raw.data(), raw.size() * sizeof(float), "values");
    if (in.peek() != std::char_traits<char>::eof()) throw FormatError(path.string() + ": trailing bytes", offset);
    std::vector<double> values(raw.begin(), raw.end());
    VisualFeatures f{case_id.empty() ? path.stem().string() : std::move(case_id),
                     Tensor::from({kFeatureRows, kFeatureDim}, std::move(values))};
    f.validate();
    return f;
}

void write_feature_file(const std::filesystem::path& path, const VisualFeatures& f) {
    static_assert(std::endian::native == std::endian::little, "feature I/O assumes a little-endian host");
    f.validate();
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write feature file " + path.string());
    out.write(kFeatureMagic, 4);
    const std::uint8_t version = kFeatureVersion;
    const std::uint32_t rows = kFeatureRows, cols = kFeatureDim;
    out.write(reinterpret_cast<const char*>(&version), 1);
    out.write(reinterpret_cast<const char*>(&rows), 4);
    out.write(reinterpret_cast<const char*>(&cols), 4);
    std::vector<float> raw(f.features.data().begin(), f.features.data().end());
    out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size() * sizeof(float)));
    if (!out) throw std::runtime_error("write failed for " + path.string());
}

VisualFeatures synthetic_features(std::uint64_t seed, std::string case_id) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<double> values(kFeatureRows * kFeatureDim);
    for (auto& v : values) v = normal(rng);
    return {std::move(case_id), Tensor::from({kFeatureRows, kFeatureDim}, std::move(values))};
}

}  // namespace cgt
