#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "trilite/box.hpp"
#include "trilite/tensor.hpp"

namespace trilite {

// One image's frozen-backbone output plus annotations.
struct FeatureSample {
    Tensor patch_features; // D x h x w
    Tensor class_token;    // D_token
    std::size_t label = 0;
    std::vector<Box> bbox_gt;                         // image pixels
    std::optional<std::vector<std::uint8_t>> mask_gt; // H x W, 0/1

    friend bool operator==(const FeatureSample&, const FeatureSample&) = default;
};

inline constexpr std::uint32_t kDatasetVersion = 1;
inline constexpr std::size_t kHeaderBytes = 128;
inline constexpr std::size_t kBlockAlign = 64;

struct DatasetHeader {
    std::uint32_t version = kDatasetVersion;
    std::size_t feature_dim = 0; // D
    std::size_t token_dim = 0;   // D_token
    std::size_t grid_w = 0;
    std::size_t grid_h = 0;
    std::size_t classes = 0;
    std::size_t image_h = 0;
    std::size_t image_w = 0;
    std::size_t patch_size = 14;
    bool has_bbox = false;
    bool has_mask = false;
    std::uint64_t sample_count = 0;
    std::string metadata; // free-form, e.g. exporter preprocessing

    friend bool operator==(const DatasetHeader&, const DatasetHeader&) = default;
};

struct Dataset {
    DatasetHeader header;
    std::vector<FeatureSample> samples;

    std::size_t size() const noexcept { return samples.size(); }
};

// Throws DataError if `sample` does not fit `header`.
void validate_sample(const DatasetHeader& header, const FeatureSample& sample);

// header.sample_count is taken from `samples`. Values are stored as 32-bit
// floats, so only float-representable tensors round-trip bit-exactly.
void write_dataset(const std::filesystem::path& path, const DatasetHeader& header,
                   std::span<const FeatureSample> samples);
inline void write_dataset(const std::filesystem::path& path, const Dataset& dataset) {
    write_dataset(path, dataset.header, dataset.samples);
}

// Random-access reader. The header and index are validated on open; samples
// are decoded on demand. sample() may be called from several threads.
class DatasetReader {
public:
    explicit DatasetReader(const std::filesystem::path& path);

    const DatasetHeader& header() const noexcept { return header_; }
    std::size_t size() const noexcept { return offsets_.size(); }
    FeatureSample sample(std::size_t index) const;

private:
    std::filesystem::path path_;
    DatasetHeader header_;
    std::vector<std::uint64_t> offsets_;
    std::uint64_t index_offset_ = 0;
    mutable std::ifstream stream_;
    mutable std::mutex mutex_;
};

Dataset read_dataset(const std::filesystem::path& path);

// Rounds every tensor value to the nearest 32-bit float, so the in-memory
// dataset equals what a write/read cycle produces.
void round_to_storage_precision(FeatureSample& sample);

} // namespace trilite
