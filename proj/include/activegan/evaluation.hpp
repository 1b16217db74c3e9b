#pragma once

// Augmentation protocol: fit the classifier on the real training set, refit
// it on real + generated samples with the same hyperparameters and seed, and
// compare macro F on an untouched test set. Also margin statistics of a
// generated set, hyperparameter sweeps and the 2D scatter export.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <mutex>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "activegan/classifier.hpp"
#include "activegan/data.hpp"
#include "activegan/error.hpp"
#include "activegan/metrics.hpp"
#include "activegan/training.hpp"
#include "activegan/uncertainty.hpp"

namespace activegan {

inline constexpr std::size_t kMarginHistogramBins = 20;

struct MarginStats {
    std::size_t count = 0;
    double mean = 0.0;
    double median = 0.0;
    double frac_below_eps = 0.0;
    std::vector<std::size_t> histogram = std::vector<std::size_t>(kMarginHistogramBins, 0);
};

// Statistics of smallest margins; the histogram has 20 equal bins on [0,1]
// with 1.0 falling in the last bin.
inline MarginStats margin_stats(std::span<const double> margins, double epsilon) {
    if (margins.empty()) throw ContractError("margin statistics of an empty set");
    MarginStats s;
    s.count = margins.size();
    std::vector<double> sorted(margins.begin(), margins.end());
    std::sort(sorted.begin(), sorted.end());
    double total = 0.0;
    std::size_t below = 0;
    for (double u : margins) {
        if (!(u >= 0.0 && u <= 1.0)) throw ContractError("margin outside [0,1]");
        total += u;
        if (u <= epsilon) ++below;
        const auto bin = std::min<std::size_t>(static_cast<std::size_t>(u * kMarginHistogramBins), kMarginHistogramBins - 1);
        ++s.histogram[bin];
    }
    s.mean = total / static_cast<double>(s.count);
    const std::size_t n = sorted.size();
    s.median = n % 2 ? sorted[n / 2] : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
    s.frac_below_eps = static_cast<double>(below) / static_cast<double>(n);
    return s;
}

// Margins recomputed from the classifier for every sample feature row.
inline MarginStats margin_stats(const Tensor& samples, const ProbClassifier& clf, double epsilon) {
    if (samples.rows() == 0) throw ContractError("margin statistics of an empty set");
    const Tensor p = clf.predict_proba(samples);
    std::vector<double> u(p.rows());
    for (std::size_t i = 0; i < p.rows(); ++i) u[i] = smallest_margin(p.row(i));
    return margin_stats(u, epsilon);
}

struct EvalReport {
    double baseline_f = 0.0;
    double augmented_f = 0.0;
    std::vector<double> baseline_per_class;
    std::vector<double> augmented_per_class;
    std::vector<double> per_class_delta;
    std::optional<MarginStats> margins;  // absent when nothing was generated
    std::size_t n_real = 0;
    std::size_t n_generated = 0;
    std::size_t n_test = 0;
    std::uint64_t seed = 0;
    nlohmann::json config = nlohmann::json::object();
};

inline nlohmann::json to_json(const EvalReport& r) {
    nlohmann::json j;
    j["baseline_f"] = r.baseline_f;
    j["augmented_f"] = r.augmented_f;
    j["per_class_delta"] = r.per_class_delta;
    j["baseline_per_class"] = r.baseline_per_class;
    j["augmented_per_class"] = r.augmented_per_class;
    if (r.margins) {
        j["mean_margin"] = r.margins->mean;
        j["median_margin"] = r.margins->median;
        j["frac_below_eps"] = r.margins->frac_below_eps;
        j["margin_histogram"] = r.margins->histogram;
    } else {
        j["mean_margin"] = nullptr;
        j["median_margin"] = nullptr;
        j["frac_below_eps"] = nullptr;
    }
    j["n_real"] = r.n_real;
    j["n_generated"] = r.n_generated;
    j["n_test"] = r.n_test;
    j["seed"] = r.seed;
    j["config"] = r.config;
    return j;
}

// Trains on real and on real + generated with identical hyperparameters and
// seed. Margins of the generated set are taken under the baseline classifier.
inline EvalReport evaluate_augmentation(const LabeledDataset& real_train, const LabeledDataset& generated,
                                        const LabeledDataset& test, const ClassifierHyperparams& hp,
                                        std::uint64_t seed, double epsilon = 0.2) {
    if (!generated.empty() && generated.dim() != real_train.dim()) {
        throw ShapeError("generated samples have " + std::to_string(generated.dim()) + " features, real data " +
                         std::to_string(real_train.dim()));
    }
    if (test.dim() != real_train.dim()) throw ShapeError("test set feature dimension differs from training set");
    if (test.empty()) throw ContractError("empty test set");
    for (std::size_t y : generated.labels) {
        if (y >= real_train.num_classes) throw ContractError("generated label out of range");
    }
    const std::size_t k = real_train.num_classes;

    SeededRng base_rng(seed);
    const ProbClassifier base = train_classifier(real_train, hp, base_rng);
    const FScore base_f = f_score(base.predict(test.features), test.labels, k);

    EvalReport r;
    r.baseline_f = base_f.macro;
    r.baseline_per_class = base_f.per_class;
    r.n_real = real_train.size();
    r.n_generated = generated.size();
    r.n_test = test.size();
    r.seed = seed;

    if (generated.empty()) {
        r.augmented_f = r.baseline_f;
        r.augmented_per_class = r.baseline_per_class;
    } else {
        LabeledDataset g = generated;
        g.num_classes = k;
        SeededRng aug_rng(seed);
        const ProbClassifier aug = train_classifier(LabeledDataset::concat(real_train, g), hp, aug_rng);
        const FScore aug_f = f_score(aug.predict(test.features), test.labels, k);
        r.augmented_f = aug_f.macro;
        r.augmented_per_class = aug_f.per_class;
        r.margins = margin_stats(generated.features, base, epsilon);
    }
    r.per_class_delta.resize(k);
    for (std::size_t c = 0; c < k; ++c) r.per_class_delta[c] = r.augmented_per_class[c] - r.baseline_per_class[c];
    return r;
}

// ---- method comparison ---------------------------------------------------

// Data and settings shared by every run of a comparison or sweep. `train`
// and `test` are expected to be standardized with the training statistics.
struct ExperimentSetup {
    LabeledDataset train;
    LabeledDataset test;
    TrainConfig train_config;
    std::size_t generated_count = 500;
    double filter_threshold = 0.2;   // AC-GAN+F margin filter
    std::size_t filter_pool_factor = 20;  // AC-GAN+F draws up to this many candidates per kept sample
};

struct MethodResult {
    std::string method;
    EvalReport report;
};

struct Comparison {
    double baseline_f = 0.0;
    std::vector<MethodResult> methods;
};

// Runs one GAN and evaluates its first `generated_count` samples.
inline EvalReport run_and_evaluate(const ExperimentSetup& setup, const TrainConfig& cfg, RunArtifacts* keep = nullptr) {
    TrainConfig c = cfg;
    c.final_samples = setup.generated_count;
    RunArtifacts run = train_activegan(setup.train, c);
    const auto g = samples_to_dataset(run.samples, setup.train.num_classes, setup.train.dim());
    EvalReport r = evaluate_augmentation(setup.train, g, setup.test, run.classifier_search.best, c.seed, c.reward.epsilon);
    if (keep) *keep = std::move(run);
    return r;
}

// Baseline, AC-GAN, AC-GAN+F and ActiveGAN under one seed. With
// baseline_only, only the baseline classifier is trained.
inline Comparison compare_methods(const ExperimentSetup& setup, bool baseline_only = false) {
    Comparison out;
    const TrainConfig& cfg = setup.train_config;
    if (baseline_only) {
        SeededRng rng(cfg.seed);
        const auto search = grid_search(setup.train, cfg.classifier_grid, rng);
        const auto r = evaluate_augmentation(setup.train, LabeledDataset{}, setup.test, search.best, cfg.seed,
                                             cfg.reward.epsilon);
        out.baseline_f = r.baseline_f;
        return out;
    }

    TrainConfig acgan_cfg = cfg;
    acgan_cfg.mode = GanMode::acgan;
    RunArtifacts acgan_run;
    EvalReport acgan = run_and_evaluate(setup, acgan_cfg, &acgan_run);
    out.baseline_f = acgan.baseline_f;
    out.methods.push_back({"acgan", acgan});

    // AC-GAN+F: draw candidates from the trained AC-GAN and keep those under
    // the margin threshold, up to generated_count.
    SeededRng pool_rng(SeededRng::splitmix(cfg.seed ^ 0xF117E4ULL));
    const auto pool = generate_samples(acgan_run.generator, acgan_run.classifier, acgan_run.policy,
                                       setup.generated_count * setup.filter_pool_factor, cfg.reward, pool_rng);
    auto kept = margin_filter(pool, setup.filter_threshold);
    if (kept.size() > setup.generated_count) kept.resize(setup.generated_count);
    const auto filtered = samples_to_dataset(kept, setup.train.num_classes, setup.train.dim());
    out.methods.push_back({"acgan_filtered", evaluate_augmentation(setup.train, filtered, setup.test,
                                                            acgan_run.classifier_search.best, cfg.seed,
                                                            cfg.reward.epsilon)});

    TrainConfig active_cfg = cfg;
    active_cfg.mode = GanMode::activegan;
    out.methods.push_back({"activegan", run_and_evaluate(setup, active_cfg)});
    return out;
}

inline nlohmann::json to_json(const Comparison& c) {
    nlohmann::json j;
    j["baseline_f"] = c.baseline_f;
    for (const auto& m : c.methods) {
        j[m.method + "_f"] = m.report.augmented_f;
        j["methods"][m.method] = to_json(m.report);
    }
    return j;
}

// ---- sweeps --------------------------------------------------------------

enum class SweepAxis { epsilon, alpha, lambda };

inline std::string to_string(SweepAxis a) {
    switch (a) {
        case SweepAxis::epsilon: return "epsilon";
        case SweepAxis::alpha: return "alpha";
        case SweepAxis::lambda: return "lambda";
    }
    return "?";
}

inline SweepAxis parse_axis(const std::string& s) {
    if (s == "epsilon" || s == "eps") return SweepAxis::epsilon;
    if (s == "alpha") return SweepAxis::alpha;
    if (s == "lambda") return SweepAxis::lambda;
    throw ValidationError("unknown sweep axis '" + s + "' (expected epsilon, alpha or lambda)");
}

struct SweepRow {
    SweepAxis axis = SweepAxis::epsilon;
    double value = 0.0;
    std::optional<EvalReport> report;
    std::size_t truncated = 0;     // generated samples whose margin reward was truncated
    double min_margin_reward = 0.0;  // smallest untruncated margin reward among generated samples
    std::string error;
};

inline constexpr const char* kSweepCsvHeader =
    "axis,value,baseline_f,augmented_f,delta_f,mean_margin,frac_below_eps,truncated,min_margin_reward,error";

inline std::string sweep_csv_row(const SweepRow& r) {
    std::string s = to_string(r.axis) + ',' + format_double(r.value) + ',';
    if (r.report) {
        const auto& e = *r.report;
        s += format_double(e.baseline_f) + ',' + format_double(e.augmented_f) + ',' +
             format_double(e.augmented_f - e.baseline_f) + ',' + (e.margins ? format_double(e.margins->mean) : "") +
             ',' + (e.margins ? format_double(e.margins->frac_below_eps) : "") + ',' + std::to_string(r.truncated) + ',' +
             format_double(r.min_margin_reward) + ',';
    } else {
        s += ",,,,,,,";
    }
    std::string err = r.error;
    std::replace(err.begin(), err.end(), ',', ';');
    std::replace(err.begin(), err.end(), '\n', ' ');
    return s + err;
}

inline TrainConfig with_axis_value(TrainConfig cfg, SweepAxis axis, double value) {
    switch (axis) {
        case SweepAxis::epsilon: cfg.reward.epsilon = value; break;
        case SweepAxis::alpha: cfg.reward.alpha = value; break;
        case SweepAxis::lambda: cfg.reward.lambda = value; break;
    }
    return cfg;
}

// One row: train + evaluate with the axis set to `value`. Errors are
// recorded on the row.
inline SweepRow sweep_row(const ExperimentSetup& setup, SweepAxis axis, double value) {
    SweepRow row;
    row.axis = axis;
    row.value = value;
    try {
        const TrainConfig cfg = with_axis_value(setup.train_config, axis, value);
        cfg.validate();
        RunArtifacts run;
        row.report = run_and_evaluate(setup, cfg, &run);
        row.min_margin_reward = 1.0;
        for (const auto& s : run.samples) {
            if (s.u_m > cfg.reward.epsilon) {
                ++row.truncated;
            } else {
                row.min_margin_reward = std::min(row.min_margin_reward, margin_reward(s.u_m, cfg.reward));
            }
        }
    } catch (const Error& e) {
        row.report.reset();
        row.error = e.what();
    }
    return row;
}

// Rows come back in the order of `values`; at most `jobs` rows train at once.
inline std::vector<SweepRow> sweep(const ExperimentSetup& setup, SweepAxis axis, std::span<const double> values,
                                   std::size_t jobs = 1) {
    std::vector<SweepRow> rows(values.size());
    jobs = std::max<std::size_t>(1, std::min(jobs, values.size()));
    if (jobs == 1) {
        for (std::size_t i = 0; i < values.size(); ++i) rows[i] = sweep_row(setup, axis, values[i]);
        return rows;
    }
    std::size_t next = 0;
    std::mutex m;
    std::vector<std::thread> workers;
    for (std::size_t w = 0; w < jobs; ++w) {
        workers.emplace_back([&] {
            for (;;) {
                std::size_t i;
                {
                    std::lock_guard lock(m);
                    if (next >= values.size()) return;
                    i = next++;
                }
                rows[i] = sweep_row(setup, axis, values[i]);
            }
        });
    }
    for (auto& t : workers) t.join();
    return rows;
}

// ---- scatter export ------------------------------------------------------

// Projection to two coordinates: identity for 2D data, otherwise the top two
// principal components of the fitted data.
class Projection2D {
public:
    explicit Projection2D(const Tensor& fit_on) : dim_(fit_on.cols()) {
        if (dim_ <= 2) return;
        const std::size_t n = fit_on.rows();
        Eigen::MatrixXd x(n, dim_);
        for (std::size_t r = 0; r < n; ++r) {
            for (std::size_t c = 0; c < dim_; ++c) x(r, c) = fit_on.at(r, c);
        }
        mean_ = x.colwise().mean();
        const Eigen::MatrixXd centered = x.rowwise() - mean_.transpose();
        const Eigen::MatrixXd cov = centered.transpose() * centered / std::max<double>(1.0, static_cast<double>(n) - 1.0);
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
        // Eigenvalues ascend; the last two columns are the leading components.
        basis_ = eig.eigenvectors().rightCols(2).rowwise().reverse();
    }

    std::pair<double, double> operator()(std::span<const double> x) const {
        if (x.size() != dim_) throw ShapeError("projection fitted on " + std::to_string(dim_) + " features");
        if (dim_ == 1) return {x[0], 0.0};
        if (dim_ == 2) return {x[0], x[1]};
        Eigen::VectorXd v(dim_);
        for (std::size_t i = 0; i < dim_; ++i) v(i) = x[i] - mean_(i);
        const Eigen::Vector2d p = basis_.transpose() * v;
        return {p(0), p(1)};
    }

private:
    std::size_t dim_;
    Eigen::VectorXd mean_;
    Eigen::MatrixXd basis_;
};

// CSV with columns x,y,label,source where source is train, generated or
// hard-test. Hard test samples are those whose margin under the classifier
// is at most epsilon.
inline void write_scatter_csv(std::ostream& os, const LabeledDataset& train, std::span<const GeneratedSample> generated,
                              const LabeledDataset& test, const ProbClassifier& clf, double epsilon) {
    const Projection2D proj(train.features);
    os << "x,y,label,source\n";
    auto emit = [&](std::span<const double> v, std::size_t label, const char* source) {
        const auto [a, b] = proj(v);
        os << format_double(a) << ',' << format_double(b) << ',' << label << ',' << source << '\n';
    };
    for (std::size_t i = 0; i < train.size(); ++i) emit(train.features.row(i), train.labels[i], "train");
    for (const auto& s : generated) emit(s.x, s.y, "generated");
    if (!test.empty()) {
        const Tensor p = clf.predict_proba(test.features);
        for (std::size_t i = 0; i < test.size(); ++i) {
            if (smallest_margin(p.row(i)) <= epsilon) emit(test.features.row(i), test.labels[i], "hard-test");
        }
    }
}

}  // namespace activegan
