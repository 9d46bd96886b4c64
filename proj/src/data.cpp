#include "ctr/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numbers>
#include <random>

#include "ctr/errors.hpp"
#include "ctr/rng.hpp"

namespace ctr {

namespace {

constexpr std::uint32_t kImageMagic = 0x00000803;
constexpr std::uint32_t kLabelMagic = 0x00000801;

std::vector<unsigned char> read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t read_be32(const std::vector<unsigned char>& buf, std::size_t offset, const std::string& what) {
    if (buf.size() < offset + 4) throw FormatError(what + ": truncated header", buf.size());
    return (std::uint32_t{buf[offset]} << 24) | (std::uint32_t{buf[offset + 1]} << 16) |
           (std::uint32_t{buf[offset + 2]} << 8) | std::uint32_t{buf[offset + 3]};
}

void put_be32(std::ofstream& out, std::uint32_t v) {
    const char bytes[4] = {static_cast<char>(v >> 24), static_cast<char>(v >> 16), static_cast<char>(v >> 8),
                           static_cast<char>(v)};
    out.write(bytes, 4);
}

} // namespace

void Dataset::validate() const {
    if (classes < 2) throw ParameterError("dataset: need at least 2 classes");
    if (inputs.size() != labels.size() * dim) throw DimensionError("dataset: inputs do not match N x D");
    for (double v : inputs)
        if (!(v >= 0.0 && v <= 1.0)) throw ParameterError("dataset: input outside [0, 1]");
    for (int y : labels)
        if (y < 0 || static_cast<std::size_t>(y) >= classes) throw ParameterError("dataset: label out of range");
}

Tensor Dataset::inputs_for(std::span<const std::size_t> rows) const {
    std::vector<double> v(rows.size() * dim);
    for (std::size_t i = 0; i < rows.size(); ++i)
        std::copy_n(inputs.begin() + static_cast<long>(rows[i] * dim), dim, v.begin() + static_cast<long>(i * dim));
    return Tensor::matrix(rows.size(), dim, std::move(v));
}

std::vector<int> Dataset::labels_for(std::span<const std::size_t> rows) const {
    std::vector<int> out(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) out[i] = labels[rows[i]];
    return out;
}

Tensor Dataset::all_inputs() const { return Tensor::matrix(size(), dim, inputs); }

Dataset Dataset::head(std::size_t n) const { return slice(0, std::min(n, size())); }

Dataset Dataset::slice(std::size_t begin, std::size_t count) const {
    if (begin + count > size()) throw DimensionError("dataset: slice out of range");
    Dataset out;
    out.dim = dim;
    out.classes = classes;
    out.split = split;
    out.labels.assign(labels.begin() + static_cast<long>(begin), labels.begin() + static_cast<long>(begin + count));
    out.inputs.assign(inputs.begin() + static_cast<long>(begin * dim),
                      inputs.begin() + static_cast<long>((begin + count) * dim));
    return out;
}

Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels,
                 std::optional<std::size_t> limit, std::size_t classes) {
    const auto img = read_file(images);
    const auto lab = read_file(labels);

    if (read_be32(img, 0, "images") != kImageMagic) throw FormatError("images: bad magic number", 0);
    if (read_be32(lab, 0, "labels") != kLabelMagic) throw FormatError("labels: bad magic number", 0);
    const std::size_t n_img = read_be32(img, 4, "images");
    const std::size_t rows = read_be32(img, 8, "images");
    const std::size_t cols = read_be32(img, 12, "images");
    const std::size_t n_lab = read_be32(lab, 4, "labels");
    if (n_img != n_lab) {
        throw FormatError("image count " + std::to_string(n_img) + " != label count " + std::to_string(n_lab), 4);
    }
    const std::size_t dim = rows * cols;
    if (img.size() < 16 + n_img * dim) throw FormatError("images: truncated pixel data", img.size());
    if (lab.size() < 8 + n_lab) throw FormatError("labels: truncated label data", lab.size());

    const std::size_t n = limit ? std::min(*limit, n_img) : n_img;
    Dataset out;
    out.dim = dim;
    out.classes = classes;
    out.labels.resize(n);
    out.inputs.resize(n * dim);
    for (std::size_t i = 0; i < n; ++i) {
        const unsigned y = lab[8 + i];
        if (y >= classes) throw FormatError("labels: value " + std::to_string(y) + " out of range", 8 + i);
        out.labels[i] = static_cast<int>(y);
    }
    for (std::size_t i = 0; i < n * dim; ++i) out.inputs[i] = static_cast<double>(img[16 + i]) / 255.0;
    return out;
}

void write_idx(const Dataset& data, const std::filesystem::path& images, const std::filesystem::path& labels,
               std::size_t height, std::size_t width) {
    if (height * width != data.dim) throw DimensionError("write_idx: height * width != dim");
    std::ofstream img(images, std::ios::binary);
    std::ofstream lab(labels, std::ios::binary);
    if (!img || !lab) throw std::runtime_error("write_idx: cannot open output files");
    put_be32(img, kImageMagic);
    put_be32(img, static_cast<std::uint32_t>(data.size()));
    put_be32(img, static_cast<std::uint32_t>(height));
    put_be32(img, static_cast<std::uint32_t>(width));
    for (double v : data.inputs) img.put(static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0))));
    put_be32(lab, kLabelMagic);
    put_be32(lab, static_cast<std::uint32_t>(data.size()));
    for (int y : data.labels) lab.put(static_cast<char>(static_cast<unsigned char>(y)));
    if (!img || !lab) throw std::runtime_error("write_idx: write failed");
}

std::vector<double> blob_center(std::size_t c, std::size_t classes, std::size_t dim) {
    // First two coordinates place the centers on a circle; the rest come from a
    // fixed generator so every dimension carries some class signal.
    std::vector<double> center(dim);
    const double angle = 2.0 * std::numbers::pi * static_cast<double>(c) / static_cast<double>(classes);
    center[0] = 0.5 + 0.35 * std::cos(angle);
    center[1] = 0.5 + 0.35 * std::sin(angle);
    Rng fixed(0x5eedULL + c);
    std::uniform_real_distribution<double> u(0.2, 0.8);
    for (std::size_t d = 2; d < dim; ++d) center[d] = u(fixed);
    return center;
}

Dataset synth_blobs(std::uint64_t seed, std::size_t n_per_class, std::size_t classes, std::size_t dim,
                    double spread) {
    if (classes < 3) throw ParameterError("synth_blobs: need at least 3 classes");
    if (dim < 2) throw ParameterError("synth_blobs: dim must be >= 2");
    if (!(spread >= 0.0)) throw ParameterError("synth_blobs: spread must be >= 0");
    Rng rng = make_rng(seed, Stream::Data);
    std::normal_distribution<double> noise(0.0, 1.0);
    Dataset out;
    out.dim = dim;
    out.classes = classes;
    out.split = "synthetic";
    out.inputs.reserve(classes * n_per_class * dim);
    for (std::size_t c = 0; c < classes; ++c) {
        const auto center = blob_center(c, classes, dim);
        for (std::size_t i = 0; i < n_per_class; ++i) {
            for (std::size_t d = 0; d < dim; ++d) {
                const double v = spread > 0.0 ? center[d] + spread * noise(rng) : center[d];
                out.inputs.push_back(std::clamp(v, 0.0, 1.0));
            }
            out.labels.push_back(static_cast<int>(c));
        }
    }
    return out;
}

} // namespace ctr
