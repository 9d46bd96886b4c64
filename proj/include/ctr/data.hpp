#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ctr/tensor.hpp"

namespace ctr {

/// Row-major N x D inputs in [0, 1] with labels in [0, C).
struct Dataset {
    std::vector<double> inputs;
    std::vector<int> labels;
    std::size_t dim = 0;
    std::size_t classes = 0;
    std::string split;

    std::size_t size() const { return labels.size(); }
    bool empty() const { return labels.empty(); }
    /// Throws ParameterError on out-of-range values or labels.
    void validate() const;

    Tensor inputs_for(std::span<const std::size_t> rows) const;
    std::vector<int> labels_for(std::span<const std::size_t> rows) const;
    Tensor all_inputs() const;
    /// First `n` examples (or all of them).
    Dataset head(std::size_t n) const;
    /// Contiguous slice [begin, begin + count).
    Dataset slice(std::size_t begin, std::size_t count) const;
};

/// Reads an IDX image file (magic 0x00000803) and label file (0x00000801).
/// Pixels are divided by 255. `limit` truncates to the first examples.
Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels,
                 std::optional<std::size_t> limit = std::nullopt, std::size_t classes = 10);

/// Writes IDX files; pixels are stored as round(255 * x). `height * width` must equal dim.
void write_idx(const Dataset& data, const std::filesystem::path& images, const std::filesystem::path& labels,
               std::size_t height, std::size_t width);

/// C Gaussian clusters around fixed centers (independent of the seed), clipped to [0, 1].
/// Examples are grouped by class.
Dataset synth_blobs(std::uint64_t seed, std::size_t n_per_class, std::size_t classes, std::size_t dim,
                    double spread);

/// The fixed center of class `c` used by synth_blobs.
std::vector<double> blob_center(std::size_t c, std::size_t classes, std::size_t dim);

} // namespace ctr
