#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <numeric>
#include <string>
#include <vector>

#include "align_lab/linalg.hpp"
#include "align_lab/network.hpp"
#include "align_lab/rng.hpp"

namespace align_lab {

inline constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;
inline constexpr Eigen::Index kMnistSide = 28;
inline constexpr Eigen::Index kMnistPixels = kMnistSide * kMnistSide;
inline constexpr int kMnistClasses = 10;

struct MnistData {
    Matrix images;            // 784 × N, pixels / 255
    std::vector<int> labels;  // N entries in 0..9
};

namespace detail {

inline std::vector<unsigned char> read_file(const std::filesystem::path& p) {
    std::error_code ec;
    if (!std::filesystem::is_regular_file(p, ec)) throw DataMissingError("MNIST file not found: " + p.string());
    std::ifstream in(p, std::ios::binary);
    if (!in) throw IoError("cannot open " + p.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline std::uint32_t read_be32(const std::vector<unsigned char>& b, std::size_t off, const std::filesystem::path& p) {
    if (b.size() < off + 4) throw FormatError(p.string() + ": truncated header");
    return (std::uint32_t{b[off]} << 24) | (std::uint32_t{b[off + 1]} << 16) | (std::uint32_t{b[off + 2]} << 8) |
           std::uint32_t{b[off + 3]};
}

inline void put_be32(std::vector<unsigned char>& b, std::uint32_t v) {
    for (int s = 24; s >= 0; s -= 8) b.push_back(static_cast<unsigned char>((v >> s) & 0xFF));
}

} // namespace detail

/// Reads an IDX image file (magic 0x803) and label file (magic 0x801).
inline MnistData load_mnist(const std::filesystem::path& images_path, const std::filesystem::path& labels_path) {
    const auto img = detail::read_file(images_path);
    const auto lab = detail::read_file(labels_path);

    const std::uint32_t im_magic = detail::read_be32(img, 0, images_path);
    if (im_magic != kIdxImagesMagic) {
        throw FormatError(images_path.string() + ": bad magic " + std::to_string(im_magic) + " (expected 2051)");
    }
    const std::uint32_t count = detail::read_be32(img, 4, images_path);
    const std::uint32_t rows = detail::read_be32(img, 8, images_path);
    const std::uint32_t cols = detail::read_be32(img, 12, images_path);
    if (rows != kMnistSide || cols != kMnistSide) {
        throw FormatError(images_path.string() + ": images are " + std::to_string(rows) + "x" + std::to_string(cols) +
                          ", expected 28x28");
    }
    const std::size_t need = 16 + std::size_t{count} * kMnistPixels;
    if (img.size() < need) {
        throw FormatError(images_path.string() + ": truncated, " + std::to_string(img.size()) + " bytes for " +
                          std::to_string(count) + " images");
    }

    const std::uint32_t lb_magic = detail::read_be32(lab, 0, labels_path);
    if (lb_magic != kIdxLabelsMagic) {
        throw FormatError(labels_path.string() + ": bad magic " + std::to_string(lb_magic) + " (expected 2049)");
    }
    const std::uint32_t lcount = detail::read_be32(lab, 4, labels_path);
    if (lcount != count) {
        throw FormatError("label count " + std::to_string(lcount) + " does not match image count " +
                          std::to_string(count));
    }
    if (lab.size() < 8 + std::size_t{count}) throw FormatError(labels_path.string() + ": truncated");

    MnistData out;
    out.images.resize(kMnistPixels, count);
    for (std::uint32_t j = 0; j < count; ++j) {
        const std::size_t base = 16 + std::size_t{j} * kMnistPixels;
        for (Eigen::Index i = 0; i < kMnistPixels; ++i) {
            out.images(i, j) = static_cast<double>(img[base + static_cast<std::size_t>(i)]) / 255.0;
        }
    }
    out.labels.resize(count);
    for (std::uint32_t j = 0; j < count; ++j) {
        const int l = lab[8 + j];
        if (l >= kMnistClasses) throw FormatError(labels_path.string() + ": label " + std::to_string(l) + " out of range");
        out.labels[j] = l;
    }
    return out;
}

/// Writes images (784 × N, values in [0, 1], rounded to bytes) and labels as IDX files.
inline void save_mnist(const MnistData& data, const std::filesystem::path& images_path,
                       const std::filesystem::path& labels_path) {
    require_shape(data.images.rows() == kMnistPixels, "save_mnist: images must have 784 rows");
    require_shape(static_cast<std::size_t>(data.images.cols()) == data.labels.size(), "save_mnist: count mismatch");
    const auto n = static_cast<std::uint32_t>(data.labels.size());
    std::vector<unsigned char> img;
    detail::put_be32(img, kIdxImagesMagic);
    detail::put_be32(img, n);
    detail::put_be32(img, kMnistSide);
    detail::put_be32(img, kMnistSide);
    for (std::uint32_t j = 0; j < n; ++j)
        for (Eigen::Index i = 0; i < kMnistPixels; ++i)
            img.push_back(static_cast<unsigned char>(std::lround(std::clamp(data.images(i, j), 0.0, 1.0) * 255.0)));
    std::vector<unsigned char> lab;
    detail::put_be32(lab, kIdxLabelsMagic);
    detail::put_be32(lab, n);
    for (int l : data.labels) lab.push_back(static_cast<unsigned char>(l));
    for (const auto& [path, bytes] : {std::pair{images_path, &img}, std::pair{labels_path, &lab}}) {
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        out.write(reinterpret_cast<const char*>(bytes->data()), static_cast<std::streamsize>(bytes->size()));
        if (!out) throw IoError("cannot write " + path.string());
    }
}

/// Conventional file names inside an MNIST directory (training split first).
inline std::pair<std::filesystem::path, std::filesystem::path> find_mnist_files(const std::filesystem::path& dir) {
    const std::pair<const char*, const char*> names[] = {
        {"train-images-idx3-ubyte", "train-labels-idx1-ubyte"},
        {"train-images.idx3-ubyte", "train-labels.idx1-ubyte"},
        {"t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"},
        {"t10k-images.idx3-ubyte", "t10k-labels.idx1-ubyte"},
    };
    for (const auto& [im, lb] : names) {
        if (std::filesystem::exists(dir / im) && std::filesystem::exists(dir / lb)) return {dir / im, dir / lb};
    }
    throw DataMissingError("no MNIST IDX files (train-images-idx3-ubyte, train-labels-idx1-ubyte) in " + dir.string());
}

inline Matrix one_hot(const std::vector<int>& labels, int classes = kMnistClasses) {
    Matrix y = Matrix::Zero(classes, static_cast<Eigen::Index>(labels.size()));
    for (std::size_t j = 0; j < labels.size(); ++j) y(labels[j], static_cast<Eigen::Index>(j)) = 1.0;
    return y;
}

namespace detail {

/// Least squares map with a bias column fit to the one-hot targets; true if
/// every example's strict argmax equals its label.
inline bool ls_separates(const Matrix& x, const std::vector<int>& labels) {
    const Eigen::Index n = x.cols();
    Matrix a(x.rows() + 1, n);
    a.topRows(x.rows()) = x;
    a.row(x.rows()).setOnes();
    const Matrix y = one_hot(labels);
    // Minimum-norm solution W = Y·pinv(AᵀA)·Aᵀ, so predictions are Y·pinv(G)·G.
    const Matrix g = a.transpose() * a;
    const Matrix pred = y * psd_pinv(g, 1e-10) * g;
    for (Eigen::Index j = 0; j < n; ++j) {
        const int l = labels[static_cast<std::size_t>(j)];
        for (Eigen::Index c = 0; c < y.rows(); ++c) {
            if (c != l && !(pred(l, j) > pred(c, j) + 1e-9)) return false;
        }
    }
    return true;
}

} // namespace detail

struct SubsetResult {
    Dataset data;                     // x: 784 × achieved, y: one-hot 10 × achieved
    std::vector<std::size_t> indices;
    std::vector<int> labels;
    std::size_t requested = 0;
    bool complete() const { return indices.size() == requested; }
};

/// Greedy seeded selection: visit examples in a seeded random order and keep
/// each one whose addition leaves the selection separable by a least-squares
/// linear map with bias. Stops at `count` or when candidates run out.
inline SubsetResult select_separable_subset(const Matrix& images, const std::vector<int>& labels, std::size_t count,
                                            std::uint64_t seed) {
    require_shape(static_cast<std::size_t>(images.cols()) == labels.size(), "select_separable_subset: count mismatch");
    if (count < 1 || count > labels.size()) {
        throw PreconditionError("select_separable_subset: count must be in [1, " + std::to_string(labels.size()) + "]");
    }
    std::vector<std::size_t> order(labels.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(seed);
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);

    SubsetResult res;
    res.requested = count;
    for (std::size_t idx : order) {
        if (res.indices.size() == count) break;
        std::vector<std::size_t> trial = res.indices;
        trial.push_back(idx);
        Matrix x(images.rows(), static_cast<Eigen::Index>(trial.size()));
        std::vector<int> tl;
        for (std::size_t j = 0; j < trial.size(); ++j) {
            x.col(static_cast<Eigen::Index>(j)) = images.col(static_cast<Eigen::Index>(trial[j]));
            tl.push_back(labels[trial[j]]);
        }
        if (detail::ls_separates(x, tl)) {
            res.indices = std::move(trial);
            res.labels = std::move(tl);
        }
    }
    Matrix x(images.rows(), static_cast<Eigen::Index>(res.indices.size()));
    for (std::size_t j = 0; j < res.indices.size(); ++j)
        x.col(static_cast<Eigen::Index>(j)) = images.col(static_cast<Eigen::Index>(res.indices[j]));
    res.data = Dataset(std::move(x), one_hot(res.labels));
    return res;
}

} // namespace align_lab
