#pragma once

// Test-side oracles: central finite differences, naive reference
// implementations and small fixture builders. Nothing here calls the code
// under test to produce an expected value.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "activegan/activegan.hpp"

namespace testing_support {

using namespace activegan;

// Loss as a function of freshly bound parameter leaves.
using LossBuilder = std::function<Var(Tape&, const std::vector<Var>&)>;

struct GradCheck {
    double max_rel_error = 0.0;
    std::size_t checked = 0;
};

inline double relative_error(double a, double n, double floor) {
    return std::abs(a - n) / std::max({std::abs(a), std::abs(n), floor});
}

// Compares backward() against central differences for every scalar of
// every tensor in `params`. `floor` keeps near-zero partials from turning
// rounding noise into huge relative errors.
inline GradCheck check_gradients(std::vector<Tensor*> params, const LossBuilder& build, double h = 1e-4,
                                 double floor = 1e-6) {
    auto evaluate = [&](bool with_grad, std::vector<Tensor>* grads) {
        Tape tape;
        std::vector<Var> leaves;
        for (Tensor* p : params) leaves.push_back(tape.leaf(*p, with_grad));
        Var loss = build(tape, leaves);
        if (with_grad) {
            tape.backward(loss);
            for (const Var& v : leaves) grads->push_back(tape.grad(v));
        }
        return loss.value().item();
    };
    std::vector<Tensor> analytic;
    evaluate(true, &analytic);
    GradCheck out;
    for (std::size_t p = 0; p < params.size(); ++p) {
        Tensor& t = *params[p];
        for (std::size_t i = 0; i < t.size(); ++i) {
            const double orig = t[i];
            t[i] = orig + h;
            const double up = evaluate(false, nullptr);
            t[i] = orig - h;
            const double down = evaluate(false, nullptr);
            t[i] = orig;
            const double numeric = (up - down) / (2.0 * h);
            out.max_rel_error = std::max(out.max_rel_error, relative_error(analytic[p][i], numeric, floor));
            ++out.checked;
        }
    }
    return out;
}

inline Tensor random_tensor(Shape shape, SeededRng& rng, double lo = -1.0, double hi = 1.0) {
    Tensor t(std::move(shape));
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
    return t;
}

inline Tensor latents(std::size_t b, std::size_t dz, SeededRng& rng) {
    Tensor z(Shape{b, dz});
    for (std::size_t i = 0; i < z.size(); ++i) z[i] = rng.normal();
    return z;
}

inline std::vector<double> random_distribution(std::size_t k, SeededRng& rng) {
    std::vector<double> p(k);
    double total = 0.0;
    for (double& v : p) {
        v = -std::log(1.0 - rng.uniform());  // exponential draws give a uniform point on the simplex
        total += v;
    }
    for (double& v : p) v /= total;
    return p;
}

// Naive references.

inline double ref_margin(std::vector<double> p) {
    std::sort(p.begin(), p.end(), std::greater<>());
    return p[0] - p[1];
}

inline double ref_entropy(const std::vector<double>& p) {
    double h = 0.0;
    for (double v : p) {
        if (v > 0.0) h += v * std::log(1.0 / v);
    }
    return h;
}

inline double ref_gaussian_log_density(const std::vector<double>& mu, const std::vector<double>& log_std,
                                       const std::vector<double>& z) {
    double total = 0.0;
    for (std::size_t k = 0; k < mu.size(); ++k) {
        const double sd = std::exp(log_std[k]);
        const double pdf = std::exp(-0.5 * std::pow((z[k] - mu[k]) / sd, 2)) / (sd * std::sqrt(2.0 * std::numbers::pi));
        total += std::log(pdf);
    }
    return total;
}

// Confusion-matrix macro F.
inline std::vector<double> ref_per_class_f(const std::vector<std::size_t>& pred, const std::vector<std::size_t>& truth,
                                           std::size_t k) {
    std::vector<std::vector<double>> cm(k, std::vector<double>(k, 0.0));
    for (std::size_t i = 0; i < pred.size(); ++i) cm[truth[i]][pred[i]] += 1.0;
    std::vector<double> f(k);
    for (std::size_t c = 0; c < k; ++c) {
        double tp = cm[c][c], col = 0.0, row = 0.0;
        for (std::size_t j = 0; j < k; ++j) {
            col += cm[j][c];
            row += cm[c][j];
        }
        if (col == 0.0 && row == 0.0) {
            f[c] = 1.0;
        } else if (col == 0.0 || tp == 0.0) {
            f[c] = 0.0;
        } else {
            const double precision = tp / col, recall = tp / row;
            f[c] = 2.0 * precision * recall / (precision + recall);
        }
    }
    return f;
}

inline double ref_macro_f(const std::vector<std::size_t>& pred, const std::vector<std::size_t>& truth, std::size_t k) {
    const auto f = ref_per_class_f(pred, truth, k);
    double s = 0.0;
    for (double v : f) s += v;
    return s / static_cast<double>(k);
}

inline std::vector<std::vector<double>> ref_matmul(const Tensor& a, const Tensor& b) {
    std::vector<std::vector<double>> out(a.rows(), std::vector<double>(b.cols(), 0.0));
    for (std::size_t i = 0; i < a.rows(); ++i) {
        for (std::size_t j = 0; j < b.cols(); ++j) {
            for (std::size_t k = 0; k < a.cols(); ++k) out[i][j] += a.at(i, k) * b.at(k, j);
        }
    }
    return out;
}

// IDX fixtures, big-endian headers.

inline void put_be32(std::vector<unsigned char>& b, std::uint32_t v) {
    for (int i = 3; i >= 0; --i) b.push_back(static_cast<unsigned char>(v >> (8 * i)));
}

inline std::vector<unsigned char> idx_images(std::uint32_t n, std::uint32_t rows, std::uint32_t cols,
                                             const std::vector<unsigned char>& pixels, std::uint32_t magic = 0x803) {
    std::vector<unsigned char> b;
    put_be32(b, magic);
    put_be32(b, n);
    put_be32(b, rows);
    put_be32(b, cols);
    b.insert(b.end(), pixels.begin(), pixels.end());
    return b;
}

inline std::vector<unsigned char> idx_labels(const std::vector<unsigned char>& labels, std::uint32_t magic = 0x801,
                                             std::optional<std::uint32_t> count = std::nullopt) {
    std::vector<unsigned char> b;
    put_be32(b, magic);
    put_be32(b, count ? *count : static_cast<std::uint32_t>(labels.size()));
    b.insert(b.end(), labels.begin(), labels.end());
    return b;
}

// Four 28x28 images: image i has pixel (r, c) = (i * 60 + r + c) % 256,
// with pixel 0 of image 0 forced to 0 and pixel 1 to 255.
inline std::vector<unsigned char> four_image_pixels() {
    std::vector<unsigned char> px(4 * 784);
    for (std::size_t i = 0; i < 4; ++i) {
        for (std::size_t r = 0; r < 28; ++r) {
            for (std::size_t c = 0; c < 28; ++c) px[i * 784 + r * 28 + c] = static_cast<unsigned char>((i * 60 + r + c) % 256);
        }
    }
    px[0] = 0;
    px[1] = 255;
    return px;
}

inline std::filesystem::path temp_dir(const std::string& name) {
    auto p = std::filesystem::temp_directory_path() / ("activegan_test_" + name);
    std::filesystem::remove_all(p);
    std::filesystem::create_directories(p);
    return p;
}

inline void write_bytes(const std::filesystem::path& p, const std::vector<unsigned char>& b) {
    std::ofstream f(p, std::ios::binary);
    f.write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
}

inline std::string read_text(const std::filesystem::path& p) {
    std::ifstream f(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

// Freshly initialized nets have zero biases, which with near-zero inputs
// parks leaky-ReLU pre-activations next to the kink where central
// differences are not derivatives. Gradient-check instances use random
// biases instead.
inline void randomize_biases(ParameterSet& p, SeededRng& rng, double scale = 0.5) {
    for (std::size_t i = 0; i < p.names.size(); ++i) {
        if (p.names[i].ends_with(".bias")) {
            for (std::size_t k = 0; k < p.tensors[i].size(); ++k) p.tensors[i][k] = rng.uniform(-scale, scale);
        }
    }
}

// Smallest |pre-activation| over the discriminator's leaky-ReLU trunk for
// the rows of x, by a naive forward pass. Central differences straddling a
// kink measure a blend of the two slopes, so gradient-check instances keep
// this comfortably above the step size.
inline double min_kink_distance(const Discriminator& disc, const Tensor& x) {
    const auto& p = disc.params();
    const double slope = disc.network().spec().leaky_slope;
    double closest = INFINITY;
    std::vector<std::vector<double>> h(x.rows());
    for (std::size_t i = 0; i < x.rows(); ++i) h[i].assign(x.row(i).begin(), x.row(i).end());
    for (std::size_t l = 0; l < disc.network().spec().hidden.size(); ++l) {
        const Tensor& w = p.tensors[2 * l];
        const Tensor& b = p.tensors[2 * l + 1];
        for (auto& row : h) {
            std::vector<double> next(w.cols());
            for (std::size_t j = 0; j < w.cols(); ++j) {
                double s = b[j];
                for (std::size_t k = 0; k < row.size(); ++k) s += row[k] * w.at(k, j);
                closest = std::min(closest, std::abs(s));
                next[j] = s > 0.0 ? s : slope * s;
            }
            row = std::move(next);
        }
    }
    return closest;
}

// Small networks (<= 1000 parameters) for gradient checks.
inline ModelDims small_dims() {
    ModelDims d;
    d.latent_dim = 3;
    d.num_classes = 3;
    d.sample_dim = 2;
    d.hidden_width = 12;
    d.hidden_layers = 2;
    return d;
}

// Toy training config small enough for unit tests.
inline TrainConfig tiny_train_config(std::size_t iterations = 40) {
    TrainConfig c;
    c.iterations = iterations;
    c.warmup = iterations / 4;
    c.batch_size = 16;
    c.buffer_capacity = 64;
    c.hidden_width = 12;
    c.latent_dim = 3;
    c.final_samples = 50;
    c.checkpoint_interval = 0;
    c.classifier_grid.regularizations = {0.001, 0.01};
    c.classifier_grid.base.epochs = 50;
    return c;
}

inline LabeledDataset toy_data(std::uint64_t seed = 1, std::size_t per_class = 20, double noise = 0.5) {
    SyntheticSpec s;
    s.per_class = per_class;
    s.noise = noise;
    s.seed = seed;
    return standardize(make_synthetic(s));
}

}  // namespace testing_support
