#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <numeric>
#include <numbers>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "activegan/error.hpp"
#include "activegan/rng.hpp"
#include "activegan/tensor.hpp"

namespace activegan {

// Per-feature affine map x' = (x - mean) / scale.
struct Standardization {
    std::vector<double> mean;
    std::vector<double> scale;

    static Standardization fit(const Tensor& features) {
        const std::size_t n = features.rows(), d = features.cols();
        if (n == 0) throw ContractError("cannot standardize an empty feature matrix");
        Standardization s{std::vector<double>(d, 0.0), std::vector<double>(d, 0.0)};
        for (std::size_t r = 0; r < n; ++r) {
            for (std::size_t c = 0; c < d; ++c) s.mean[c] += features.at(r, c);
        }
        for (double& m : s.mean) m /= static_cast<double>(n);
        for (std::size_t r = 0; r < n; ++r) {
            for (std::size_t c = 0; c < d; ++c) {
                const double dv = features.at(r, c) - s.mean[c];
                s.scale[c] += dv * dv;
            }
        }
        for (double& v : s.scale) {
            v = std::sqrt(v / static_cast<double>(n));
            if (!(v > 1e-12)) v = 1.0;  // constant feature
        }
        return s;
    }

    Tensor apply(const Tensor& x) const {
        check(x);
        Tensor out = x;
        for (std::size_t r = 0; r < out.rows(); ++r) {
            for (std::size_t c = 0; c < out.cols(); ++c) out.at(r, c) = (out.at(r, c) - mean[c]) / scale[c];
        }
        return out;
    }

    Tensor invert(const Tensor& x) const {
        check(x);
        Tensor out = x;
        for (std::size_t r = 0; r < out.rows(); ++r) {
            for (std::size_t c = 0; c < out.cols(); ++c) out.at(r, c) = out.at(r, c) * scale[c] + mean[c];
        }
        return out;
    }

private:
    void check(const Tensor& x) const {
        if (x.rank() != 2 || x.cols() != mean.size()) {
            throw ShapeError("standardization fitted on " + std::to_string(mean.size()) + " features, got " +
                             shape_string(x.shape()));
        }
    }
};

// Feature rows with integer class labels in [0, num_classes).
struct LabeledDataset {
    Tensor features{Shape{0, 0}};
    std::vector<std::size_t> labels;
    std::size_t num_classes = 0;
    std::optional<Standardization> standardization;

    std::size_t size() const noexcept { return labels.size(); }
    std::size_t dim() const noexcept { return features.rank() == 2 ? features.cols() : 0; }
    bool empty() const noexcept { return labels.empty(); }

    void validate() const {
        if (features.rank() != 2 || features.rows() != labels.size()) {
            throw ShapeError("dataset has " + std::to_string(labels.size()) + " labels for features " +
                             shape_string(features.shape()));
        }
        for (std::size_t y : labels) {
            if (y >= num_classes) {
                throw ContractError("label " + std::to_string(y) + " outside [0, " + std::to_string(num_classes) + ")");
            }
        }
        if (!features.all_finite()) throw NumericError("dataset contains non-finite features");
    }

    std::vector<std::size_t> class_counts() const {
        std::vector<std::size_t> counts(num_classes, 0);
        for (std::size_t y : labels) ++counts.at(y);
        return counts;
    }

    LabeledDataset subset(std::span<const std::size_t> rows) const {
        LabeledDataset out;
        out.num_classes = num_classes;
        out.standardization = standardization;
        out.features = Tensor(Shape{rows.size(), dim()});
        out.labels.reserve(rows.size());
        for (std::size_t i = 0; i < rows.size(); ++i) {
            const auto src = features.row(rows[i]);
            std::copy(src.begin(), src.end(), out.features.row(i).begin());
            out.labels.push_back(labels[rows[i]]);
        }
        return out;
    }

    // Rows of a followed by rows of b.
    static LabeledDataset concat(const LabeledDataset& a, const LabeledDataset& b) {
        if (a.empty()) return b.empty() ? a : with_classes(b, std::max(a.num_classes, b.num_classes));
        if (b.empty()) return a;
        if (a.dim() != b.dim()) {
            throw ShapeError("cannot concatenate datasets with " + std::to_string(a.dim()) + " and " +
                             std::to_string(b.dim()) + " features");
        }
        LabeledDataset out;
        out.num_classes = std::max(a.num_classes, b.num_classes);
        out.standardization = a.standardization;
        std::vector<double> v(a.features.values().begin(), a.features.values().end());
        v.insert(v.end(), b.features.values().begin(), b.features.values().end());
        out.features = Tensor(Shape{a.size() + b.size(), a.dim()}, std::move(v));
        out.labels = a.labels;
        out.labels.insert(out.labels.end(), b.labels.begin(), b.labels.end());
        return out;
    }

private:
    static LabeledDataset with_classes(LabeledDataset d, std::size_t k) {
        d.num_classes = k;
        return d;
    }
};

// Fits a standardization on the dataset and returns the standardized copy.
inline LabeledDataset standardize(const LabeledDataset& data) {
    LabeledDataset out = data;
    auto s = Standardization::fit(data.features);
    out.features = s.apply(data.features);
    out.standardization = std::move(s);
    return out;
}

// Applies an already fitted standardization (e.g. the training split's).
inline LabeledDataset standardize_with(const LabeledDataset& data, const Standardization& s) {
    LabeledDataset out = data;
    out.features = s.apply(data.features);
    out.standardization = s;
    return out;
}

// ---- synthetic data ------------------------------------------------------

enum class SyntheticFamily { gaussian_mixture, moons, rings };

inline std::string to_string(SyntheticFamily f) {
    switch (f) {
        case SyntheticFamily::gaussian_mixture: return "gaussian-mixture";
        case SyntheticFamily::moons: return "moons";
        case SyntheticFamily::rings: return "rings";
    }
    return "?";
}

inline SyntheticFamily parse_family(const std::string& s) {
    if (s == "gaussian-mixture") return SyntheticFamily::gaussian_mixture;
    if (s == "moons") return SyntheticFamily::moons;
    if (s == "rings") return SyntheticFamily::rings;
    throw ValidationError("unknown synthetic family '" + s + "' (expected gaussian-mixture, moons or rings)");
}

struct SyntheticSpec {
    SyntheticFamily family = SyntheticFamily::gaussian_mixture;
    std::size_t num_classes = 3;
    std::size_t per_class = 100;
    double noise = 0.5;
    std::uint64_t seed = 0;

    void validate() const {
        if (num_classes < 2) throw ContractError("synthetic data needs at least 2 classes");
        if (per_class == 0) throw ContractError("synthetic per-class count must be positive");
        if (!(noise >= 0.0) || !std::isfinite(noise)) throw ContractError("synthetic noise must be finite and >= 0");
        if (family == SyntheticFamily::moons && num_classes != 2) throw ContractError("moons has exactly 2 classes");
    }
};

// Class-major 2D samples. The mixture places class means on a regular K-gon
// of circumradius 2; rings use radius k+1 for class k; moons are the two
// interleaved half circles. Isotropic Gaussian noise of the given scale is
// added to every point.
inline LabeledDataset make_synthetic(const SyntheticSpec& spec) {
    spec.validate();
    SeededRng rng(spec.seed);
    const std::size_t n = spec.num_classes * spec.per_class;
    LabeledDataset out;
    out.num_classes = spec.num_classes;
    out.features = Tensor(Shape{n, 2});
    out.labels.reserve(n);
    const double two_pi = 2.0 * std::numbers::pi;
    std::size_t row = 0;
    for (std::size_t k = 0; k < spec.num_classes; ++k) {
        for (std::size_t i = 0; i < spec.per_class; ++i, ++row) {
            double x = 0.0, y = 0.0;
            switch (spec.family) {
                case SyntheticFamily::gaussian_mixture: {
                    const double angle = two_pi * static_cast<double>(k) / static_cast<double>(spec.num_classes);
                    x = 2.0 * std::cos(angle);
                    y = 2.0 * std::sin(angle);
                    break;
                }
                case SyntheticFamily::rings: {
                    const double angle = rng.uniform(0.0, two_pi);
                    const double radius = static_cast<double>(k + 1);
                    x = radius * std::cos(angle);
                    y = radius * std::sin(angle);
                    break;
                }
                case SyntheticFamily::moons: {
                    const double t = rng.uniform(0.0, std::numbers::pi);
                    if (k == 0) {
                        x = std::cos(t);
                        y = std::sin(t);
                    } else {
                        x = 1.0 - std::cos(t);
                        y = 0.5 - std::sin(t);
                    }
                    break;
                }
            }
            if (spec.noise > 0.0) {
                x += spec.noise * rng.normal();
                y += spec.noise * rng.normal();
            }
            out.features.at(row, 0) = x;
            out.features.at(row, 1) = y;
            out.labels.push_back(k);
        }
    }
    return out;
}

// ---- IDX files -----------------------------------------------------------

inline constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;

namespace detail {

inline std::vector<unsigned char> read_all(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open " + path);
    return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

inline std::uint32_t be_u32(const std::vector<unsigned char>& b, std::size_t at, const std::string& file) {
    if (b.size() < at + 4) throw LengthError(file + ": header truncated", b.size());
    return (std::uint32_t{b[at]} << 24) | (std::uint32_t{b[at + 1]} << 16) | (std::uint32_t{b[at + 2]} << 8) |
           std::uint32_t{b[at + 3]};
}

}  // namespace detail

// Parses IDX bytes already in memory. Pixels are scaled to [0, 1] by /255;
// the class count is the largest label plus one.
inline LabeledDataset parse_idx(const std::vector<unsigned char>& images, const std::vector<unsigned char>& labels) {
    const std::uint32_t img_magic = detail::be_u32(images, 0, "images");
    if (img_magic != kIdxImagesMagic) throw FormatError("images: bad magic number " + std::to_string(img_magic), 0);
    const std::uint32_t lbl_magic = detail::be_u32(labels, 0, "labels");
    if (lbl_magic != kIdxLabelsMagic) throw FormatError("labels: bad magic number " + std::to_string(lbl_magic), 0);

    const std::size_t n_images = detail::be_u32(images, 4, "images");
    const std::size_t rows = detail::be_u32(images, 8, "images");
    const std::size_t cols = detail::be_u32(images, 12, "images");
    const std::size_t n_labels = detail::be_u32(labels, 4, "labels");
    const std::size_t pixels = rows * cols;
    if (pixels == 0) throw FormatError("images: zero-sized image", 8);

    if (images.size() - 16 < n_images * pixels) {
        throw LengthError("images: expected " + std::to_string(n_images * pixels) + " pixel bytes, file has " +
                              std::to_string(images.size() - 16),
                          images.size());
    }
    if (labels.size() - 8 < n_labels) {
        throw LengthError("labels: expected " + std::to_string(n_labels) + " label bytes, file has " +
                              std::to_string(labels.size() - 8),
                          labels.size());
    }
    if (n_images != n_labels) {
        throw ConsistencyError("IDX count mismatch: " + std::to_string(n_images) + " images vs " +
                               std::to_string(n_labels) + " labels");
    }
    if (n_images == 0) throw ConsistencyError("IDX files contain no samples");

    LabeledDataset out;
    out.features = Tensor(Shape{n_images, pixels});
    for (std::size_t i = 0; i < n_images * pixels; ++i) out.features[i] = images[16 + i] / 255.0;
    out.labels.resize(n_images);
    std::size_t max_label = 0;
    for (std::size_t i = 0; i < n_images; ++i) {
        out.labels[i] = labels[8 + i];
        max_label = std::max(max_label, out.labels[i]);
    }
    out.num_classes = std::max<std::size_t>(max_label + 1, 2);
    return out;
}

inline LabeledDataset load_idx(const std::string& images_path, const std::string& labels_path) {
    return parse_idx(detail::read_all(images_path), detail::read_all(labels_path));
}

// ---- splits --------------------------------------------------------------

struct SplitResult {
    LabeledDataset train;
    LabeledDataset validation;
    LabeledDataset test;
    bool stratified = true;
    std::string warning;
};

namespace detail {

// Largest-remainder apportionment of n items over the fractions; ties go to
// the earlier part.
inline std::array<std::size_t, 3> apportion(std::size_t n, const std::array<double, 3>& f) {
    std::array<std::size_t, 3> counts{};
    std::array<double, 3> rem{};
    std::size_t used = 0;
    for (std::size_t i = 0; i < 3; ++i) {
        const double exact = static_cast<double>(n) * f[i];
        counts[i] = static_cast<std::size_t>(std::floor(exact + 1e-9));
        rem[i] = exact - static_cast<double>(counts[i]);
        used += counts[i];
    }
    while (used < n) {
        std::size_t best = 0;
        for (std::size_t i = 1; i < 3; ++i) {
            if (rem[i] > rem[best]) best = i;
        }
        ++counts[best];
        rem[best] = -1.0;
        ++used;
    }
    while (used > n) {
        std::size_t worst = 2;
        while (counts[worst] == 0) --worst;
        --counts[worst];
        --used;
    }
    return counts;
}

}  // namespace detail

// Disjoint, exhaustive train/validation/test split, stratified by class.
// Falls back to an unstratified split (with a warning) when some class has
// fewer samples than there are non-empty parts.
inline SplitResult split(const LabeledDataset& data, const std::array<double, 3>& fractions, std::uint64_t seed) {
    double total = 0.0;
    std::size_t parts = 0;
    for (double f : fractions) {
        if (!(f >= 0.0)) throw ContractError("split fractions must be non-negative");
        total += f;
        if (f > 0.0) ++parts;
    }
    if (std::abs(total - 1.0) > 1e-9) throw ContractError("split fractions must sum to 1");

    SeededRng rng(seed);
    std::array<std::vector<std::size_t>, 3> rows;
    SplitResult result;
    const auto counts = data.class_counts();
    const bool can_stratify = std::all_of(counts.begin(), counts.end(), [&](std::size_t c) { return c == 0 || c >= parts; });

    auto distribute = [&](std::vector<std::size_t> idx) {
        rng.shuffle(idx);
        const auto n = detail::apportion(idx.size(), fractions);
        std::size_t at = 0;
        for (std::size_t p = 0; p < 3; ++p) {
            for (std::size_t i = 0; i < n[p]; ++i) rows[p].push_back(idx[at++]);
        }
    };

    if (can_stratify) {
        std::vector<std::vector<std::size_t>> by_class(data.num_classes);
        for (std::size_t i = 0; i < data.size(); ++i) by_class[data.labels[i]].push_back(i);
        for (auto& idx : by_class) distribute(std::move(idx));
    } else {
        result.stratified = false;
        result.warning = "some class has fewer samples than split parts; split is not stratified";
        std::vector<std::size_t> idx(data.size());
        std::iota(idx.begin(), idx.end(), 0);
        distribute(std::move(idx));
    }
    for (auto& r : rows) std::sort(r.begin(), r.end());
    result.train = data.subset(rows[0]);
    result.validation = data.subset(rows[1]);
    result.test = data.subset(rows[2]);
    return result;
}

// ---- CSV -----------------------------------------------------------------

inline std::string format_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

// Header f0..f{d-1},label then one row per sample.
inline void write_dataset_csv(std::ostream& os, const LabeledDataset& data) {
    for (std::size_t c = 0; c < data.dim(); ++c) os << 'f' << c << ',';
    os << "label\n";
    for (std::size_t r = 0; r < data.size(); ++r) {
        for (double v : data.features.row(r)) os << format_double(v) << ',';
        os << data.labels[r] << '\n';
    }
}

}  // namespace activegan
