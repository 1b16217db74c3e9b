#pragma once

// AC-GAN losses, the ActiveGAN generator objective and the training loop.
//
// Loop, per iteration:
//   1. draw a real batch, latents z ~ N(0, I) and uniform class labels;
//   2. generator step: ascend  L_G = E[log P(real|x^)] + E[log P(y|x^)]
//      (+ lambda * L_unc after warmup in ActiveGAN mode), jointly with the
//      policy network;
//   3. discriminator step every `discriminator_ratio` generator steps:
//      ascend E[log P(real|x)] + E[log P(fake|x^)] + E[log P(y|x)] + E[log P(y|x^)];
//   4. push the fresh samples into the FIFO buffer.
// The classifier that scores uncertainty is fitted (with grid search) once
// before the loop and frozen.

#include <cmath>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "activegan/adam.hpp"
#include "activegan/autodiff.hpp"
#include "activegan/classifier.hpp"
#include "activegan/data.hpp"
#include "activegan/error.hpp"
#include "activegan/models.hpp"
#include "activegan/rng.hpp"
#include "activegan/serialize.hpp"
#include "activegan/uncertainty.hpp"

namespace activegan {

inline constexpr double kProbabilityFloor = 1e-12;

enum class GanMode { activegan, acgan };

inline std::string to_string(GanMode m) { return m == GanMode::activegan ? "activegan" : "acgan"; }

struct TrainConfig {
    GanMode mode = GanMode::activegan;
    std::size_t iterations = 2000;
    std::size_t batch_size = 64;
    std::size_t warmup = 500;
    std::size_t buffer_capacity = 4096;
    std::size_t discriminator_ratio = 1;
    double lr_generator = 0.001;
    double lr_discriminator = 0.001;
    double lr_policy = 0.001;
    RewardConfig reward;
    std::uint64_t seed = 0;
    std::size_t latent_dim = 4;
    std::size_t hidden_width = 64;
    std::size_t hidden_layers = 2;
    bool use_buffer = true;
    std::size_t final_samples = 1000;
    std::size_t checkpoint_interval = 500;
    std::string checkpoint_path;  // empty: no checkpoints
    GridSearchSpec classifier_grid;

    void validate() const {
        std::string bad;
        if (iterations == 0) bad += " iterations must be positive;";
        if (!(warmup < iterations)) bad += " warmup must be smaller than iterations;";
        if (batch_size == 0) bad += " batch_size must be positive;";
        if (buffer_capacity < batch_size) bad += " buffer_capacity must be >= batch_size;";
        if (discriminator_ratio < 1) bad += " discriminator_ratio must be >= 1;";
        if (!(lr_generator > 0.0) || !(lr_discriminator > 0.0) || !(lr_policy > 0.0)) bad += " learning rates must be positive;";
        if (latent_dim == 0 || hidden_width == 0 || hidden_layers == 0) bad += " network sizes must be positive;";
        try {
            reward.validate();
        } catch (const ContractError& e) {
            bad += std::string(" ") + e.what() + ";";
        }
        if (!bad.empty()) throw ContractError("invalid training config:" + bad);
    }
};

// FIFO of generated samples; the oldest entry is evicted first.
class SampleBuffer {
public:
    explicit SampleBuffer(std::size_t capacity = 4096) : capacity_(capacity) {
        if (capacity_ == 0) throw ContractError("sample buffer capacity must be positive");
    }

    void push(GeneratedSample s) {
        if (items_.size() == capacity_) items_.pop_front();
        items_.push_back(std::move(s));
    }

    std::size_t size() const noexcept { return items_.size(); }
    std::size_t capacity() const noexcept { return capacity_; }
    bool empty() const noexcept { return items_.empty(); }
    const GeneratedSample& operator[](std::size_t i) const { return items_.at(i); }
    const std::deque<GeneratedSample>& items() const noexcept { return items_; }

    // n draws with replacement.
    std::vector<GeneratedSample> sample(std::size_t n, SeededRng& rng) const {
        if (items_.empty()) throw ContractError("sampling from an empty buffer");
        std::vector<GeneratedSample> out;
        out.reserve(n);
        for (std::size_t i = 0; i < n; ++i) out.push_back(items_[rng.index(items_.size())]);
        return out;
    }

private:
    std::size_t capacity_;
    std::deque<GeneratedSample> items_;
};

struct TraceRow {
    std::size_t iteration = 0;
    double loss_d = 0.0;
    double loss_g_acgan = 0.0;
    double loss_unc = 0.0;
    double mean_reward = 0.0;
    double mean_u_m = 0.0;
    double mean_u_le = 0.0;
    std::size_t buffer_len = 0;
};

inline constexpr const char* kTraceCsvHeader = "iteration,L_D,L_G_acgan,L_unc,mean_reward,mean_u_m,mean_u_le,buffer_len";

inline std::string trace_csv_row(const TraceRow& r) {
    return std::to_string(r.iteration) + ',' + format_double(r.loss_d) + ',' + format_double(r.loss_g_acgan) + ',' +
           format_double(r.loss_unc) + ',' + format_double(r.mean_reward) + ',' + format_double(r.mean_u_m) + ',' +
           format_double(r.mean_u_le) + ',' + std::to_string(r.buffer_len);
}

struct RunArtifacts {
    TrainConfig config;
    ModelDims dims;
    Generator generator;
    Discriminator discriminator;
    GaussianPolicy policy;
    ProbClassifier classifier;
    GridSearchResult classifier_search;
    std::vector<TraceRow> trace;
    std::vector<GeneratedSample> samples;
    std::size_t generator_updates = 0;
    std::size_t discriminator_updates = 0;
    std::size_t policy_updates = 0;
    std::size_t final_buffer_len = 0;
};

// ---- losses --------------------------------------------------------------

// Discriminator objective from its output probabilities. p_real_* are
// [B x 1] source probabilities P(real|.), class_* are [B x K] posteriors.
// Every probability is floored at kProbabilityFloor before the log.
inline Var acgan_discriminator_objective(Var p_real_on_real, Var p_real_on_fake, Var class_on_real,
                                         std::span<const std::size_t> real_labels, Var class_on_fake,
                                         std::span<const std::size_t> fake_labels) {
    if (real_labels.empty() || fake_labels.empty()) throw ContractError("discriminator loss of an empty batch");
    Var real_term = mean(clamp_log(p_real_on_real, kProbabilityFloor));
    Var fake_term = mean(clamp_log(add_scalar(neg(p_real_on_fake), 1.0), kProbabilityFloor));
    Var class_real = mean(clamp_log(gather_cols(class_on_real, {real_labels.begin(), real_labels.end()}), kProbabilityFloor));
    Var class_fake = mean(clamp_log(gather_cols(class_on_fake, {fake_labels.begin(), fake_labels.end()}), kProbabilityFloor));
    return add(add(real_term, fake_term), add(class_real, class_fake));
}

// Generator objective E[log P(real|x^)] + E[log P(y|x^)].
inline Var acgan_generator_objective(Var p_real_on_fake, Var class_on_fake, std::span<const std::size_t> fake_labels) {
    if (fake_labels.empty()) throw ContractError("generator loss of an empty batch");
    Var source = mean(clamp_log(p_real_on_fake, kProbabilityFloor));
    Var cls = mean(clamp_log(gather_cols(class_on_fake, {fake_labels.begin(), fake_labels.end()}), kProbabilityFloor));
    return add(source, cls);
}

inline Var discriminator_loss(const Discriminator& disc, std::span<const Var> disc_params, Var real,
                              std::span<const std::size_t> real_labels, Var fake, std::span<const std::size_t> fake_labels) {
    const auto r = disc.forward(disc_params, real);
    const auto f = disc.forward(disc_params, fake);
    return acgan_discriminator_objective(r.p_real, f.p_real, r.class_probs, real_labels, f.class_probs, fake_labels);
}

inline Var generator_acgan_loss(const Discriminator& disc, std::span<const Var> disc_params, Var fake,
                                std::span<const std::size_t> fake_labels) {
    const auto f = disc.forward(disc_params, fake);
    return acgan_generator_objective(f.p_real, f.class_probs, fake_labels);
}

struct ActiveGanObjective {
    Var total;        // L_acgan + lambda * L_unc
    Var acgan;        // L_acgan
    Var uncertainty;  // L_unc
};

// L_acgan + lambda * L_unc, where L_unc is the reward-weighted mean policy
// log-likelihood of (fresh samples, their latents) plus any extra stored
// samples. Rewards are constants.
inline ActiveGanObjective activegan_generator_loss(const Discriminator& disc, std::span<const Var> disc_params,
                                                   const GaussianPolicy& policy, std::span<const Var> policy_params,
                                                   Var fake, Var latents, std::span<const std::size_t> fake_labels,
                                                   std::span<const double> rewards, const RewardConfig& cfg,
                                                   std::span<const GeneratedSample> replay = {}) {
    Var acgan = generator_acgan_loss(disc, disc_params, fake, fake_labels);
    Var unc = uncertainty_loss(policy, policy_params, fake, latents, rewards);
    if (!replay.empty()) {
        const double nf = static_cast<double>(rewards.size());
        const double nr = static_cast<double>(replay.size());
        Var replay_loss = uncertainty_loss(policy, policy_params, replay);
        unc = add(scale(unc, nf / (nf + nr)), scale(replay_loss, nr / (nf + nr)));
    }
    return {add(acgan, scale(unc, cfg.lambda)), acgan, unc};
}

// ---- sample generation ---------------------------------------------------

// Generates and scores samples. With `fixed_class` every sample carries that
// label; otherwise labels are uniform. log_lik is filled from the policy.
inline std::vector<GeneratedSample> generate_samples(const Generator& gen, const ProbClassifier& clf,
                                                     const GaussianPolicy& policy, std::size_t count,
                                                     const RewardConfig& cfg, SeededRng& rng,
                                                     std::optional<std::size_t> fixed_class = std::nullopt) {
    std::vector<GeneratedSample> out;
    if (count == 0) return out;
    if (fixed_class && *fixed_class >= gen.num_classes()) {
        throw ContractError("class " + std::to_string(*fixed_class) + " outside [0, " + std::to_string(gen.num_classes()) + ")");
    }
    const std::size_t dz = gen.latent_dim();
    Tensor z(Shape{count, dz});
    std::vector<std::size_t> labels(count);
    for (std::size_t i = 0; i < count; ++i) {
        for (std::size_t k = 0; k < dz; ++k) z.at(i, k) = rng.normal();
        labels[i] = fixed_class ? *fixed_class : rng.index(gen.num_classes());
    }
    const Tensor x = gen.generate(z, labels);
    const Tensor probs = clf.predict_proba(x);
    Tape tape;
    const auto bound = policy.params().bind(tape, false);
    const Tensor ll = policy.log_likelihood(bound, tape.constant(x), tape.constant(z)).value();
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        const auto u = score_posterior(probs.row(i), cfg);
        out.push_back({{z.row(i).begin(), z.row(i).end()}, labels[i], {x.row(i).begin(), x.row(i).end()},
                       u.u_m, u.u_le, u.r, ll[i]});
    }
    return out;
}

// AC-GAN+F: keeps the samples whose smallest margin is at most the
// threshold, in their original order.
inline std::vector<GeneratedSample> margin_filter(std::span<const GeneratedSample> samples, double threshold) {
    if (!(threshold >= 0.0 && threshold <= 1.0)) throw ContractError("margin threshold must lie in [0,1]");
    std::vector<GeneratedSample> out;
    for (const auto& s : samples) {
        if (s.u_m <= threshold) out.push_back(s);
    }
    return out;
}

// Same filter over raw posteriors; returns the kept indices.
inline std::vector<std::size_t> margin_filter_indices(const Tensor& posteriors, double threshold) {
    if (!(threshold >= 0.0 && threshold <= 1.0)) throw ContractError("margin threshold must lie in [0,1]");
    std::vector<std::size_t> kept;
    for (std::size_t i = 0; i < posteriors.rows(); ++i) {
        if (smallest_margin(posteriors.row(i)) <= threshold) kept.push_back(i);
    }
    return kept;
}

inline LabeledDataset samples_to_dataset(std::span<const GeneratedSample> samples, std::size_t num_classes,
                                         std::size_t dim) {
    LabeledDataset d;
    d.num_classes = num_classes;
    d.features = Tensor(Shape{samples.size(), dim});
    for (std::size_t i = 0; i < samples.size(); ++i) {
        if (samples[i].x.size() != dim) throw ShapeError("generated sample dimension mismatch");
        std::copy(samples[i].x.begin(), samples[i].x.end(), d.features.row(i).begin());
        d.labels.push_back(samples[i].y);
    }
    return d;
}

// ---- checkpoints ---------------------------------------------------------

inline NamedTensors checkpoint_tensors(const ModelDims& dims, const Generator& gen, const Discriminator& disc,
                                       const GaussianPolicy& policy, const ProbClassifier& clf) {
    NamedTensors out;
    out.emplace_back("meta.dims", Tensor::vector({static_cast<double>(dims.latent_dim), static_cast<double>(dims.num_classes),
                                                  static_cast<double>(dims.sample_dim), static_cast<double>(dims.hidden_width),
                                                  static_cast<double>(dims.hidden_layers)}));
    out.emplace_back("meta.classifier_mode", Tensor::scalar(clf.mode() == CalibrationMode::platt ? 1.0 : 0.0));
    append_params(out, "generator.", gen.params());
    append_params(out, "discriminator.", disc.params());
    append_params(out, "policy.", policy.params());
    append_params(out, "classifier.", clf.parameters());
    return out;
}

struct LoadedModels {
    ModelDims dims;
    Generator generator;
    Discriminator discriminator;
    GaussianPolicy policy;
    ProbClassifier classifier;
};

inline LoadedModels models_from_checkpoint(const NamedTensors& in) {
    const Tensor& meta = find_tensor(in, "meta.dims");
    if (meta.size() != 5) throw FormatError("meta.dims must hold 5 values");
    for (double v : meta.values()) {
        if (!(v >= 1.0) || v != std::floor(v) || v > 1e7) throw FormatError("meta.dims holds an invalid size");
    }
    LoadedModels m;
    m.dims = {static_cast<std::size_t>(meta[0]), static_cast<std::size_t>(meta[1]), static_cast<std::size_t>(meta[2]),
              static_cast<std::size_t>(meta[3]), static_cast<std::size_t>(meta[4])};
    SeededRng rng(0);
    m.generator = Generator(m.dims, rng);
    m.discriminator = Discriminator(m.dims, rng);
    m.policy = GaussianPolicy(m.dims, rng);
    restore_params(in, "generator.", m.generator.params());
    restore_params(in, "discriminator.", m.discriminator.params());
    restore_params(in, "policy.", m.policy.params());
    ClassifierHyperparams hp;
    hp.mode = find_tensor(in, "meta.classifier_mode").item() != 0.0 ? CalibrationMode::platt : CalibrationMode::softmax;
    ParameterSet cp;
    const std::string prefix = "classifier.";
    for (const auto& [name, t] : in) {
        if (name.rfind(prefix, 0) == 0) cp.add(name.substr(prefix.size()), t);
    }
    m.classifier = classifier_from_parameters(cp, hp);
    if (m.classifier.dim() != m.dims.sample_dim || m.classifier.num_classes() != m.dims.num_classes) {
        throw FormatError("classifier shape disagrees with meta.dims");
    }
    return m;
}

// ---- training loop -------------------------------------------------------

using TraceObserver = std::function<void(const TraceRow&)>;

namespace detail {

inline double mean_of(std::span<const double> v) {
    double s = 0.0;
    for (double x : v) s += x;
    return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

}  // namespace detail

// Trains the classifier (grid search then refit), then runs the GAN loop.
// `data` should already be standardized. Throws DivergenceError when a loss
// or gradient becomes non-finite; the checkpoint file, if configured, holds
// the last good parameters.
inline RunArtifacts train_activegan(const LabeledDataset& data, const TrainConfig& cfg, const TraceObserver& observer = {}) {
    cfg.validate();
    data.validate();
    if (data.empty()) throw ContractError("training data is empty");

    RunArtifacts run;
    run.config = cfg;
    run.dims = ModelDims{cfg.latent_dim, data.num_classes, data.dim(), cfg.hidden_width, cfg.hidden_layers};

    SeededRng root(cfg.seed);
    SeededRng classifier_rng = root.fork();
    SeededRng gen_init = root.fork();
    SeededRng disc_init = root.fork();
    SeededRng policy_init = root.fork();
    SeededRng noise = root.fork();
    SeededRng replay_rng = root.fork();
    SeededRng final_rng = root.fork();

    run.classifier_search = grid_search(data, cfg.classifier_grid, classifier_rng);
    run.classifier = train_classifier(data, run.classifier_search.best, classifier_rng);

    run.generator = Generator(run.dims, gen_init);
    run.discriminator = Discriminator(run.dims, disc_init);
    run.policy = GaussianPolicy(run.dims, policy_init);
    const Generator& gen = run.generator;
    const Discriminator& disc = run.discriminator;
    const GaussianPolicy& policy = run.policy;

    AdamState adam_g({cfg.lr_generator, 0.9, 0.999, 1e-8});
    AdamState adam_d({cfg.lr_discriminator, 0.9, 0.999, 1e-8});
    AdamState adam_p({cfg.lr_policy, 0.9, 0.999, 1e-8});
    SampleBuffer buffer(cfg.buffer_capacity);

    const std::size_t batch = cfg.batch_size;
    const std::size_t k = data.num_classes;
    const std::size_t dz = cfg.latent_dim;
    auto gen_ptrs = run.generator.params().pointers();
    auto disc_ptrs = run.discriminator.params().pointers();
    auto policy_ptrs = run.policy.params().pointers();

    auto save_checkpoint = [&] {
        if (cfg.checkpoint_path.empty()) return;
        write_container(cfg.checkpoint_path, checkpoint_tensors(run.dims, gen, disc, policy, run.classifier));
    };

    run.trace.reserve(cfg.iterations);
    for (std::size_t it = 0; it < cfg.iterations; ++it) {
        try {
            // Batch draws.
            std::vector<std::size_t> real_rows(batch), real_labels(batch), fake_labels(batch);
            for (std::size_t i = 0; i < batch; ++i) real_rows[i] = noise.index(data.size());
            Tensor real(Shape{batch, data.dim()});
            for (std::size_t i = 0; i < batch; ++i) {
                const auto src = data.features.row(real_rows[i]);
                std::copy(src.begin(), src.end(), real.row(i).begin());
                real_labels[i] = data.labels[real_rows[i]];
            }
            Tensor z(Shape{batch, dz});
            for (double& v : z.values()) v = noise.normal();
            for (auto& y : fake_labels) y = noise.index(k);

            TraceRow row;
            row.iteration = it;

            // Generator (and policy) step.
            Tape tg;
            const auto gb = gen.params().bind(tg, true);
            const auto db_frozen = disc.params().bind(tg, false);
            Var zv = tg.constant(z);
            Var fake = gen.forward(gb, zv, fake_labels);
            const Tensor fake_values = fake.value();

            const Tensor posteriors = run.classifier.predict_proba(fake_values);
            std::vector<double> rewards(batch), margins(batch), entropies(batch);
            for (std::size_t i = 0; i < batch; ++i) {
                const auto u = score_posterior(posteriors.row(i), cfg.reward);
                rewards[i] = u.r;
                margins[i] = u.u_m;
                entropies[i] = u.u_le;
            }

            const bool active = cfg.mode == GanMode::activegan && it >= cfg.warmup;
            std::vector<double> fresh_ll(batch, 0.0);
            if (active) {
                const auto pb = policy.params().bind(tg, true);
                std::vector<GeneratedSample> replay;
                if (cfg.use_buffer && !buffer.empty()) replay = buffer.sample(batch, replay_rng);
                const auto obj = activegan_generator_loss(disc, db_frozen, policy, pb, fake, zv, fake_labels, rewards,
                                                          cfg.reward, replay);
                row.loss_g_acgan = obj.acgan.value().item();
                row.loss_unc = obj.uncertainty.value().item();
                tg.backward(neg(obj.total));
                const auto g_grads = ParameterSet::gradients(tg, gb);
                const auto p_grads = ParameterSet::gradients(tg, pb);
                adam_step(adam_g, gen_ptrs, g_grads);
                adam_step(adam_p, policy_ptrs, p_grads);
                ++run.policy_updates;
                Tape tl;
                const auto pl = policy.params().bind(tl, false);
                const Tensor ll = policy.log_likelihood(pl, tl.constant(fake_values), tl.constant(z)).value();
                for (std::size_t i = 0; i < batch; ++i) fresh_ll[i] = ll[i];
            } else {
                Var obj = generator_acgan_loss(disc, db_frozen, fake, fake_labels);
                row.loss_g_acgan = obj.value().item();
                tg.backward(neg(obj));
                adam_step(adam_g, gen_ptrs, ParameterSet::gradients(tg, gb));
            }
            ++run.generator_updates;

            // Discriminator step on the same real batch and the detached fakes.
            Tape td;
            const bool update_d = (it + 1) % cfg.discriminator_ratio == 0;
            const auto db = disc.params().bind(td, update_d);
            Var ld = discriminator_loss(disc, db, td.constant(real), real_labels, td.constant(fake_values), fake_labels);
            row.loss_d = ld.value().item();
            if (update_d) {
                td.backward(neg(ld));
                adam_step(adam_d, disc_ptrs, ParameterSet::gradients(td, db));
                ++run.discriminator_updates;
            }

            for (std::size_t i = 0; i < batch; ++i) {
                buffer.push({{z.row(i).begin(), z.row(i).end()}, fake_labels[i],
                             {fake_values.row(i).begin(), fake_values.row(i).end()}, margins[i], entropies[i], rewards[i],
                             fresh_ll[i]});
            }

            row.mean_reward = detail::mean_of(rewards);
            row.mean_u_m = detail::mean_of(margins);
            row.mean_u_le = detail::mean_of(entropies);
            row.buffer_len = buffer.size();
            if (!std::isfinite(row.loss_d) || !std::isfinite(row.loss_g_acgan) || !std::isfinite(row.loss_unc)) {
                throw NumericError("non-finite loss");
            }
            run.trace.push_back(row);
            if (observer) observer(row);
        } catch (const NumericError& e) {
            throw DivergenceError("training diverged at iteration " + std::to_string(it) + ": " + e.what() +
                                      (cfg.checkpoint_path.empty() ? std::string{}
                                                                   : "; last good checkpoint: " + cfg.checkpoint_path),
                                  it);
        }
        if (cfg.checkpoint_interval > 0 && (it + 1) % cfg.checkpoint_interval == 0) save_checkpoint();
    }
    run.final_buffer_len = buffer.size();
    run.samples = generate_samples(gen, run.classifier, policy, cfg.final_samples, cfg.reward, final_rng);
    return run;
}

}  // namespace activegan
