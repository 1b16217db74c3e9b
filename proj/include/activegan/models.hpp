#pragma once

// Fully connected networks used by the GAN: a label-conditioned generator, a
// discriminator with a real/fake head and a class head, and a diagonal
// Gaussian policy that maps a generated sample back to a density over the
// latent space.

#include <cmath>
#include <cstddef>
#include <numbers>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "activegan/autodiff.hpp"
#include "activegan/error.hpp"
#include "activegan/rng.hpp"
#include "activegan/tensor.hpp"

namespace activegan {

// Named tensors owned by one model, in a fixed order.
struct ParameterSet {
    std::vector<std::string> names;
    std::vector<Tensor> tensors;

    void add(std::string name, Tensor t) {
        names.push_back(std::move(name));
        tensors.push_back(std::move(t));
    }

    std::size_t scalar_count() const {
        std::size_t n = 0;
        for (const auto& t : tensors) n += t.size();
        return n;
    }

    std::vector<Tensor*> pointers() {
        std::vector<Tensor*> out;
        out.reserve(tensors.size());
        for (auto& t : tensors) out.push_back(&t);
        return out;
    }

    // Places every tensor on the tape as a leaf, in order.
    std::vector<Var> bind(Tape& tape, bool requires_grad = true) const {
        std::vector<Var> vars;
        vars.reserve(tensors.size());
        for (std::size_t i = 0; i < tensors.size(); ++i) vars.push_back(tape.leaf(tensors[i], requires_grad, names[i]));
        return vars;
    }

    static std::vector<Tensor> gradients(const Tape& tape, std::span<const Var> bound) {
        std::vector<Tensor> g;
        g.reserve(bound.size());
        for (const Var& v : bound) g.push_back(tape.grad(v));
        return g;
    }
};

enum class Activation { identity, tanh, relu, leaky_relu };

struct HeadSpec {
    std::string name;
    std::size_t width = 0;
};

struct NetworkSpec {
    std::size_t input_dim = 0;
    std::vector<std::size_t> hidden;
    std::vector<Activation> activations;  // one per hidden layer
    double leaky_slope = 0.2;
    std::vector<HeadSpec> heads;

    void validate() const {
        if (input_dim == 0) throw ContractError("network input dimension must be positive");
        if (hidden.empty()) throw ContractError("network needs at least one hidden layer");
        if (activations.size() != hidden.size()) {
            throw ContractError("network has " + std::to_string(hidden.size()) + " hidden layers but " +
                                std::to_string(activations.size()) + " activations");
        }
        for (std::size_t w : hidden) {
            if (w == 0) throw ContractError("hidden layer width must be positive");
        }
        if (heads.empty()) throw ContractError("network needs at least one output head");
        for (const auto& h : heads) {
            if (h.width == 0) throw ContractError("head '" + h.name + "' has zero width");
        }
    }

    static NetworkSpec mlp(std::size_t input, std::size_t width, std::size_t layers, Activation act,
                           std::vector<HeadSpec> heads) {
        NetworkSpec s;
        s.input_dim = input;
        s.hidden.assign(layers, width);
        s.activations.assign(layers, act);
        s.heads = std::move(heads);
        return s;
    }
};

// Trunk of hidden layers followed by independent linear heads. Parameter
// order: l0.weight, l0.bias, l1.weight, ..., then <head>.weight, <head>.bias
// for each head. Weights are [fan_in x fan_out].
class Network {
public:
    Network() = default;

    Network(NetworkSpec spec, SeededRng& rng) : spec_(std::move(spec)) {
        spec_.validate();
        std::size_t fan_in = spec_.input_dim;
        for (std::size_t i = 0; i < spec_.hidden.size(); ++i) {
            add_linear("l" + std::to_string(i), fan_in, spec_.hidden[i], rng);
            fan_in = spec_.hidden[i];
        }
        for (const auto& h : spec_.heads) add_linear(h.name, fan_in, h.width, rng);
    }

    const NetworkSpec& spec() const noexcept { return spec_; }
    ParameterSet& params() noexcept { return params_; }
    const ParameterSet& params() const noexcept { return params_; }

    // Outputs, one per head, in spec order.
    std::vector<Var> forward(std::span<const Var> bound, Var input) const {
        if (bound.size() != params_.tensors.size()) {
            throw ContractError("network expects " + std::to_string(params_.tensors.size()) + " bound tensors, got " +
                                std::to_string(bound.size()));
        }
        const Tensor& x = input.value();
        if (x.rank() != 2 || x.cols() != spec_.input_dim) {
            throw ShapeError("network input must be [B x " + std::to_string(spec_.input_dim) + "], got " +
                             shape_string(x.shape()));
        }
        Var h = input;
        std::size_t p = 0;
        for (std::size_t i = 0; i < spec_.hidden.size(); ++i, p += 2) {
            h = add(matmul(h, bound[p]), bound[p + 1]);
            h = activate(h, spec_.activations[i]);
        }
        std::vector<Var> out;
        out.reserve(spec_.heads.size());
        for (std::size_t k = 0; k < spec_.heads.size(); ++k, p += 2) out.push_back(add(matmul(h, bound[p]), bound[p + 1]));
        return out;
    }

    // Sets one head's weights and bias to zero.
    void zero_head(std::size_t head) {
        const std::size_t base = 2 * spec_.hidden.size() + 2 * head;
        params_.tensors.at(base).fill(0.0);
        params_.tensors.at(base + 1).fill(0.0);
    }

private:
    Var activate(Var h, Activation a) const {
        switch (a) {
            case Activation::identity: return h;
            case Activation::tanh: return tanh(h);
            case Activation::relu: return relu(h);
            case Activation::leaky_relu: return leaky_relu(h, spec_.leaky_slope);
        }
        return h;
    }

    void add_linear(const std::string& name, std::size_t in, std::size_t out, SeededRng& rng) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(in));
        Tensor w(Shape{in, out});
        for (double& v : w.values()) v = rng.uniform(-bound, bound);
        params_.add(name + ".weight", std::move(w));
        params_.add(name + ".bias", Tensor(Shape{out}, 0.0));
    }

    NetworkSpec spec_;
    ParameterSet params_;
};

struct ModelDims {
    std::size_t latent_dim = 4;
    std::size_t num_classes = 3;
    std::size_t sample_dim = 2;
    std::size_t hidden_width = 64;
    std::size_t hidden_layers = 2;
};

// [B x K] one-hot rows.
inline Tensor one_hot(std::span<const std::size_t> labels, std::size_t num_classes) {
    Tensor t(Shape{labels.size(), num_classes}, 0.0);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] >= num_classes) {
            throw ContractError("class index " + std::to_string(labels[i]) + " outside [0, " +
                                std::to_string(num_classes) + ")");
        }
        t.at(i, labels[i]) = 1.0;
    }
    return t;
}

// x = G(z, y): the latent concatenated with the one-hot label feeds a tanh MLP
// with a linear output of the sample dimension.
class Generator {
public:
    Generator() = default;

    Generator(const ModelDims& dims, SeededRng& rng)
        : latent_dim_(dims.latent_dim),
          num_classes_(dims.num_classes),
          net_(NetworkSpec::mlp(dims.latent_dim + dims.num_classes, dims.hidden_width, dims.hidden_layers,
                                Activation::tanh, {{"out", dims.sample_dim}}),
               rng) {}

    std::size_t latent_dim() const noexcept { return latent_dim_; }
    std::size_t num_classes() const noexcept { return num_classes_; }
    std::size_t sample_dim() const noexcept { return net_.spec().heads[0].width; }
    Network& network() noexcept { return net_; }
    const Network& network() const noexcept { return net_; }
    ParameterSet& params() noexcept { return net_.params(); }
    const ParameterSet& params() const noexcept { return net_.params(); }

    Var forward(std::span<const Var> bound, Var z, std::span<const std::size_t> labels) const {
        const Tensor& zv = z.value();
        if (zv.rank() != 2 || zv.cols() != latent_dim_ || zv.rows() != labels.size()) {
            throw ShapeError("generator latent must be [" + std::to_string(labels.size()) + " x " +
                             std::to_string(latent_dim_) + "], got " + shape_string(zv.shape()));
        }
        Tape& tape = *z.tape();
        Var y = tape.constant(one_hot(labels, num_classes_));
        return net_.forward(bound, concat_cols(z, y))[0];
    }

    // Batched forward pass without gradient tracking. z is [B x d_z].
    Tensor generate(const Tensor& z, std::span<const std::size_t> labels) const {
        Tape tape;
        const auto bound = params().bind(tape, false);
        return forward(bound, tape.constant(z), labels).value();
    }

    // Single sample; z is [d_z].
    Tensor generate(std::span<const double> z, std::size_t label) const {
        if (z.size() != latent_dim_) throw ShapeError("latent has " + std::to_string(z.size()) + " values, expected " + std::to_string(latent_dim_));
        Tensor zt(Shape{1, latent_dim_}, std::vector<double>(z.begin(), z.end()));
        const std::size_t lbl[1] = {label};
        return generate(zt, lbl).reshaped(Shape{sample_dim()});
    }

private:
    std::size_t latent_dim_ = 0;
    std::size_t num_classes_ = 0;
    Network net_;
};

struct DiscriminatorOutput {
    Var source_logit;  // [B x 1]
    Var p_real;        // [B x 1], sigmoid of the logit
    Var class_probs;   // [B x K], softmax rows
};

// Shared leaky-ReLU trunk with a one-logit source head and a K-logit class head.
class Discriminator {
public:
    Discriminator() = default;

    Discriminator(const ModelDims& dims, SeededRng& rng)
        : net_(
              [&] {
                  auto s = NetworkSpec::mlp(dims.sample_dim, dims.hidden_width, dims.hidden_layers,
                                            Activation::leaky_relu, {{"source", 1}, {"class", dims.num_classes}});
                  s.leaky_slope = 0.2;
                  return s;
              }(),
              rng) {}

    std::size_t num_classes() const noexcept { return net_.spec().heads[1].width; }
    std::size_t sample_dim() const noexcept { return net_.spec().input_dim; }
    Network& network() noexcept { return net_; }
    const Network& network() const noexcept { return net_; }
    ParameterSet& params() noexcept { return net_.params(); }
    const ParameterSet& params() const noexcept { return net_.params(); }

    DiscriminatorOutput forward(std::span<const Var> bound, Var x) const {
        auto heads = net_.forward(bound, x);
        return {heads[0], sigmoid(heads[0]), softmax(heads[1])};
    }

    struct Result {
        double p_real;
        std::vector<double> class_probs;
    };

    Result discriminate(std::span<const double> x) const {
        Tensor xt(Shape{1, x.size()}, std::vector<double>(x.begin(), x.end()));
        if (!xt.all_finite()) throw NumericError("discriminator input is not finite");
        Tape tape;
        const auto bound = params().bind(tape, false);
        const auto out = forward(bound, tape.constant(std::move(xt)));
        const auto probs = out.class_probs.value().values();
        return {out.p_real.value()[0], std::vector<double>(probs.begin(), probs.end())};
    }

private:
    Network net_;
};

inline constexpr double kLogStdMin = -5.0;
inline constexpr double kLogStdMax = 2.0;

// Elementwise log N(z | mu, diag(exp(log_std))^2), summed over each row:
//   sum_k [ -log_std_k - 0.5 log(2 pi) - (z_k - mu_k)^2 / (2 exp(2 log_std_k)) ]
// All operands [B x d]; the result is [B].
inline Var gaussian_log_likelihood(Var mu, Var log_std, Var z) {
    if (mu.shape() != log_std.shape() || mu.shape() != z.shape() || mu.value().rank() != 2) {
        throw ShapeError("gaussian log-likelihood operands disagree: mu " + shape_string(mu.shape()) + ", log_std " +
                         shape_string(log_std.shape()) + ", z " + shape_string(z.shape()));
    }
    const double half_log_2pi = 0.5 * std::log(2.0 * std::numbers::pi);
    Var diff = sub(z, mu);
    Var inv_var = exp(scale(log_std, -2.0));
    Var quad = scale(mul(square(diff), inv_var), 0.5);
    Var per_dim = add_scalar(neg(add(log_std, quad)), -half_log_2pi);
    return row_sum(per_dim);
}

// Same density on plain values, for a single sample.
inline double gaussian_log_density(std::span<const double> mu, std::span<const double> log_std,
                                   std::span<const double> z) {
    if (mu.size() != log_std.size() || mu.size() != z.size()) throw ShapeError("gaussian density dimension mismatch");
    const double half_log_2pi = 0.5 * std::log(2.0 * std::numbers::pi);
    double total = 0.0;
    for (std::size_t k = 0; k < mu.size(); ++k) {
        const double d = z[k] - mu[k];
        total += -log_std[k] - half_log_2pi - d * d / (2.0 * std::exp(2.0 * log_std[k]));
    }
    return total;
}

struct PolicyOutput {
    Var mean;     // [B x d_z]
    Var log_std;  // [B x d_z], clamped to [kLogStdMin, kLogStdMax]
};

// Maps a sample to a diagonal Gaussian over the latent space. The log-scale
// head is clamped; exp(log_std) is the per-dimension standard deviation.
class GaussianPolicy {
public:
    GaussianPolicy() = default;

    GaussianPolicy(const ModelDims& dims, SeededRng& rng)
        : net_(NetworkSpec::mlp(dims.sample_dim, dims.hidden_width, dims.hidden_layers, Activation::tanh,
                                {{"mean", dims.latent_dim}, {"log_std", dims.latent_dim}}),
               rng) {}

    std::size_t latent_dim() const noexcept { return net_.spec().heads[0].width; }
    std::size_t sample_dim() const noexcept { return net_.spec().input_dim; }
    Network& network() noexcept { return net_; }
    const Network& network() const noexcept { return net_; }
    ParameterSet& params() noexcept { return net_.params(); }
    const ParameterSet& params() const noexcept { return net_.params(); }

    PolicyOutput forward(std::span<const Var> bound, Var x) const {
        auto heads = net_.forward(bound, x);
        return {heads[0], clamp(heads[1], kLogStdMin, kLogStdMax)};
    }

    // Log-likelihood of each latent row of z under the policy evaluated at
    // the matching sample row of x. Differentiable in both the policy
    // parameters and x.
    Var log_likelihood(std::span<const Var> bound, Var x, Var z) const {
        const auto out = forward(bound, x);
        if (z.shape() != out.mean.shape()) {
            throw ShapeError("policy latent must be " + shape_string(out.mean.shape()) + ", got " +
                             shape_string(z.shape()));
        }
        return gaussian_log_likelihood(out.mean, out.log_std, z);
    }

private:
    Network net_;
};

}  // namespace activegan
