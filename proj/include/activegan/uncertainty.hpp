#pragma once

// Uncertainty of a generated sample under the frozen classifier, the reward
// derived from it, and the reward-weighted log-likelihood whose gradient is
// the score-function (REINFORCE) estimator for the generator and policy.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "activegan/autodiff.hpp"
#include "activegan/error.hpp"
#include "activegan/models.hpp"
#include "activegan/tensor.hpp"

namespace activegan {

struct RewardConfig {
    double epsilon = 0.2;     // margin truncation threshold
    double alpha = 0.5;       // weight of the margin reward against the entropy reward
    double truncated = 0.0;   // margin reward when u_m > epsilon
    double lambda = 0.1;      // weight of the uncertainty loss in the generator objective

    void validate() const {
        std::string bad;
        if (!(epsilon >= 0.0 && epsilon <= 1.0)) bad += " epsilon must lie in [0,1];";
        if (!(alpha >= 0.0 && alpha <= 1.0)) bad += " alpha must lie in [0,1];";
        if (!(lambda >= 0.0) || !std::isfinite(lambda)) bad += " lambda must be finite and >= 0;";
        if (!(truncated >= 0.0) || !std::isfinite(truncated)) bad += " truncated reward must be finite and >= 0;";
        if (!bad.empty()) throw ContractError("invalid reward config:" + bad);
    }
};

struct GeneratedSample {
    std::vector<double> z;
    std::size_t y = 0;
    std::vector<double> x;
    double u_m = 0.0;
    double u_le = 0.0;
    double r = 0.0;
    double log_lik = 0.0;
};

namespace detail {

inline void check_distribution(std::span<const double> p) {
    double total = 0.0;
    for (double v : p) {
        if (!(v >= 0.0) || v > 1.0 + 1e-12) throw ContractError("probability outside [0,1]: " + std::to_string(v));
        total += v;
    }
    if (std::abs(total - 1.0) > 1e-9) throw ContractError("probabilities sum to " + std::to_string(total) + ", not 1");
}

}  // namespace detail

// u_m = P(top class) - P(runner-up class).
inline double smallest_margin(std::span<const double> probs) {
    if (probs.size() < 2) throw ContractError("smallest margin needs at least 2 classes");
    detail::check_distribution(probs);
    double first = -1.0, second = -1.0;
    for (double v : probs) {
        if (v > first) {
            second = first;
            first = v;
        } else if (v > second) {
            second = v;
        }
    }
    return std::clamp(first - second, 0.0, 1.0);
}

// u_le = -sum p ln p, with 0 ln 0 = 0.
inline double label_entropy(std::span<const double> probs) {
    if (probs.empty()) throw ContractError("label entropy of an empty distribution");
    detail::check_distribution(probs);
    double h = 0.0;
    for (double v : probs) {
        if (v > 0.0) h -= v * std::log(v);
    }
    return std::clamp(h, 0.0, std::log(static_cast<double>(probs.size())));
}

// exp(-u_m) when u_m <= epsilon, otherwise the truncation constant.
inline double margin_reward(double u_m, const RewardConfig& cfg) {
    if (!(u_m >= 0.0 && u_m <= 1.0)) throw ContractError("margin " + std::to_string(u_m) + " outside [0,1]");
    return u_m <= cfg.epsilon ? std::exp(-u_m) : cfg.truncated;
}

inline double entropy_reward(double u_le) {
    if (!(u_le >= 0.0)) throw ContractError("entropy " + std::to_string(u_le) + " is negative");
    return std::exp(u_le);
}

inline double combined_reward(double r_m, double r_le, const RewardConfig& cfg) {
    if (!(r_m >= 0.0) || !(r_le >= 0.0)) throw ContractError("rewards must be non-negative");
    return cfg.alpha * r_m + (1.0 - cfg.alpha) * r_le;
}

struct Uncertainty {
    double u_m = 0.0;
    double u_le = 0.0;
    double r_m = 0.0;
    double r_le = 0.0;
    double r = 0.0;
};

inline Uncertainty score_posterior(std::span<const double> probs, const RewardConfig& cfg) {
    Uncertainty u;
    u.u_m = smallest_margin(probs);
    u.u_le = label_entropy(probs);
    u.r_m = margin_reward(u.u_m, cfg);
    u.r_le = entropy_reward(u.u_le);
    u.r = combined_reward(u.r_m, u.r_le, cfg);
    return u;
}

// (1/B) sum_i r_i log P_i. Rewards enter as constants, so the gradient is the
// batch average of r_i times the gradient of log P_i.
inline Var uncertainty_loss(Var log_likelihood, std::span<const double> rewards) {
    const Tensor& ll = log_likelihood.value();
    if (rewards.empty()) throw ContractError("uncertainty loss of an empty batch");
    if (ll.rank() != 1 || ll.size() != rewards.size()) {
        throw ShapeError("uncertainty loss: " + std::to_string(rewards.size()) + " rewards for log-likelihoods " +
                         shape_string(ll.shape()));
    }
    Var r = log_likelihood.tape()->constant(Tensor::vector(std::vector<double>(rewards.begin(), rewards.end())));
    return mean(mul(r, log_likelihood));
}

// Samples and latents as tape values: the policy log-likelihood is taken at
// each latent given its sample, so gradients reach both the policy
// parameters and (through the sample) whatever produced it.
inline Var uncertainty_loss(const GaussianPolicy& policy, std::span<const Var> policy_params, Var samples, Var latents,
                            std::span<const double> rewards) {
    if (rewards.empty()) throw ContractError("uncertainty loss of an empty batch");
    return uncertainty_loss(policy.log_likelihood(policy_params, samples, latents), rewards);
}

// Stored samples: x and z are constants, so only the policy receives gradient.
inline Var uncertainty_loss(const GaussianPolicy& policy, std::span<const Var> policy_params,
                            std::span<const GeneratedSample> batch) {
    if (batch.empty()) throw ContractError("uncertainty loss of an empty batch");
    Tape& tape = *policy_params.front().tape();
    const std::size_t dx = batch.front().x.size(), dz = batch.front().z.size();
    Tensor x(Shape{batch.size(), dx}), z(Shape{batch.size(), dz});
    std::vector<double> r(batch.size());
    for (std::size_t i = 0; i < batch.size(); ++i) {
        if (batch[i].x.size() != dx || batch[i].z.size() != dz) throw ShapeError("ragged generated-sample batch");
        std::copy(batch[i].x.begin(), batch[i].x.end(), x.row(i).begin());
        std::copy(batch[i].z.begin(), batch[i].z.end(), z.row(i).begin());
        r[i] = batch[i].r;
    }
    return uncertainty_loss(policy, policy_params, tape.constant(std::move(x)), tape.constant(std::move(z)), r);
}

}  // namespace activegan
