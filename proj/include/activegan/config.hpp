#pragma once

// Run configuration as a JSON tree. Parsing collects every problem before
// failing so a single ValidationError lists all violated fields; to_json()
// writes every field, defaults included, so the echo is a complete config.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "activegan/classifier.hpp"
#include "activegan/data.hpp"
#include "activegan/error.hpp"
#include "activegan/evaluation.hpp"
#include "activegan/training.hpp"

namespace activegan {

enum class DatasetSource { synthetic, idx };

struct DatasetConfig {
    DatasetSource source = DatasetSource::synthetic;
    SyntheticSpec synthetic;           // synthetic.per_class points per class for training
    std::size_t test_per_class = 500;  // synthetic: independent test draw; 0 falls back to the split
    std::string images;
    std::string labels;
    std::string test_images;  // idx: optional separate test files
    std::string test_labels;
    std::array<double, 3> split{0.8, 0.0, 0.2};
    std::size_t max_samples = 0;  // idx: keep only the first N rows (0 = all)
};

enum class CompareMode { baseline, activegan, four_way };

inline std::string to_string(CompareMode m) {
    switch (m) {
        case CompareMode::baseline: return "baseline";
        case CompareMode::activegan: return "activegan";
        case CompareMode::four_way: return "four-way";
    }
    return "?";
}

struct EvaluationConfig {
    CompareMode compare = CompareMode::four_way;
    std::size_t generated_count = 500;
    double filter_threshold = 0.2;
    std::size_t filter_pool_factor = 20;
};

struct SweepConfig {
    SweepAxis axis = SweepAxis::epsilon;
    std::vector<double> values{0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 1.0};
};

struct RunConfig {
    std::uint64_t seed = 0;
    std::string output_dir = "out";
    DatasetConfig dataset;
    TrainConfig train;
    EvaluationConfig evaluation;
    SweepConfig sweep;
};

namespace detail {

// Reads optional fields from one JSON object, recording problems instead of
// throwing, and flags keys it does not know.
class FieldReader {
public:
    FieldReader(const nlohmann::json& obj, std::string path, std::vector<std::string>& errors)
        : obj_(obj), path_(std::move(path)), errors_(errors) {
        if (!obj_.is_object()) errors_.push_back(path_ + ": expected an object");
    }

    ~FieldReader() {
        if (!obj_.is_object()) return;
        for (auto it = obj_.begin(); it != obj_.end(); ++it) {
            if (std::find(seen_.begin(), seen_.end(), it.key()) == seen_.end()) {
                errors_.push_back(path_ + "." + it.key() + ": unknown field");
            }
        }
    }

    template <typename T>
    void get(const std::string& key, T& out, std::function<std::string(const T&)> check = {}) {
        seen_.push_back(key);
        if (!obj_.is_object() || !obj_.contains(key)) return;
        try {
            T v = obj_.at(key).get<T>();
            if (check) {
                if (auto msg = check(v); !msg.empty()) {
                    errors_.push_back(path_ + "." + key + ": " + msg);
                    return;
                }
            }
            out = std::move(v);
        } catch (const nlohmann::json::exception&) {
            errors_.push_back(path_ + "." + key + ": wrong type");
        }
    }

    const nlohmann::json* child(const std::string& key) {
        seen_.push_back(key);
        if (!obj_.is_object() || !obj_.contains(key)) return nullptr;
        return &obj_.at(key);
    }

    const std::string& path() const { return path_; }

private:
    const nlohmann::json& obj_;
    std::string path_;
    std::vector<std::string>& errors_;
    std::vector<std::string> seen_;
};

inline std::function<std::string(const double&)> in_unit() {
    return [](const double& v) { return (v >= 0.0 && v <= 1.0) ? std::string{} : "must lie in [0,1]"; };
}
inline std::function<std::string(const double&)> positive() {
    return [](const double& v) { return v > 0.0 ? std::string{} : "must be > 0"; };
}
inline std::function<std::string(const double&)> non_negative() {
    return [](const double& v) { return v >= 0.0 ? std::string{} : "must be >= 0"; };
}
inline std::function<std::string(const std::size_t&)> at_least(std::size_t n) {
    return [n](const std::size_t& v) { return v >= n ? std::string{} : "must be >= " + std::to_string(n); };
}

}  // namespace detail

// Parses and validates a config tree. Missing fields keep their defaults.
inline RunConfig parse_run_config(const nlohmann::json& j) {
    using detail::FieldReader;
    std::vector<std::string> errors;
    RunConfig c;
    {
        FieldReader root(j, "config", errors);
        root.get("seed", c.seed);
        root.get<std::string>("output_dir", c.output_dir,
                              [](const std::string& s) { return s.empty() ? "must not be empty" : std::string{}; });

        if (const auto* d = root.child("dataset")) {
            FieldReader r(*d, "config.dataset", errors);
            std::string source = "synthetic";
            r.get<std::string>("source", source, [](const std::string& s) {
                return (s == "synthetic" || s == "idx") ? std::string{} : "must be synthetic or idx";
            });
            c.dataset.source = source == "idx" ? DatasetSource::idx : DatasetSource::synthetic;
            std::string family = to_string(c.dataset.synthetic.family);
            r.get<std::string>("family", family, [](const std::string& s) {
                try {
                    parse_family(s);
                    return std::string{};
                } catch (const ValidationError& e) {
                    return std::string(e.what());
                }
            });
            c.dataset.synthetic.family = parse_family(family == "" ? "gaussian-mixture" : family);
            r.get("num_classes", c.dataset.synthetic.num_classes, detail::at_least(2));
            r.get("per_class", c.dataset.synthetic.per_class, detail::at_least(1));
            r.get("noise", c.dataset.synthetic.noise, detail::non_negative());
            r.get("seed", c.dataset.synthetic.seed);
            r.get("test_per_class", c.dataset.test_per_class);
            r.get("images", c.dataset.images);
            r.get("labels", c.dataset.labels);
            r.get("test_images", c.dataset.test_images);
            r.get("test_labels", c.dataset.test_labels);
            r.get<std::array<double, 3>>("split", c.dataset.split, [](const std::array<double, 3>& f) {
                double t = 0.0;
                for (double v : f) {
                    if (!(v >= 0.0)) return std::string("fractions must be >= 0");
                    t += v;
                }
                return std::abs(t - 1.0) <= 1e-9 ? std::string{} : "fractions must sum to 1";
            });
            r.get("max_samples", c.dataset.max_samples);
            if (c.dataset.synthetic.family == SyntheticFamily::moons && c.dataset.synthetic.num_classes != 2 &&
                c.dataset.source == DatasetSource::synthetic) {
                errors.push_back("config.dataset.num_classes: moons needs exactly 2 classes");
            }
        }

        if (const auto* t = root.child("train")) {
            FieldReader r(*t, "config.train", errors);
            std::string mode = to_string(c.train.mode);
            r.get<std::string>("mode", mode, [](const std::string& s) {
                return (s == "activegan" || s == "acgan") ? std::string{} : "must be activegan or acgan";
            });
            c.train.mode = mode == "acgan" ? GanMode::acgan : GanMode::activegan;
            r.get("iterations", c.train.iterations, detail::at_least(1));
            r.get("batch_size", c.train.batch_size, detail::at_least(1));
            r.get("warmup", c.train.warmup);
            r.get("buffer_capacity", c.train.buffer_capacity, detail::at_least(1));
            r.get("discriminator_ratio", c.train.discriminator_ratio, detail::at_least(1));
            r.get("lr_generator", c.train.lr_generator, detail::positive());
            r.get("lr_discriminator", c.train.lr_discriminator, detail::positive());
            r.get("lr_policy", c.train.lr_policy, detail::positive());
            r.get("latent_dim", c.train.latent_dim, detail::at_least(1));
            r.get("hidden_width", c.train.hidden_width, detail::at_least(1));
            r.get("hidden_layers", c.train.hidden_layers, detail::at_least(1));
            r.get("use_buffer", c.train.use_buffer);
            r.get("final_samples", c.train.final_samples);
            r.get("checkpoint_interval", c.train.checkpoint_interval);
        }

        if (const auto* rw = root.child("reward")) {
            FieldReader r(*rw, "config.reward", errors);
            r.get("epsilon", c.train.reward.epsilon, detail::in_unit());
            r.get("alpha", c.train.reward.alpha, detail::in_unit());
            r.get("truncated", c.train.reward.truncated, detail::non_negative());
            r.get("lambda", c.train.reward.lambda, detail::non_negative());
        }

        if (const auto* cl = root.child("classifier")) {
            FieldReader r(*cl, "config.classifier", errors);
            auto& g = c.train.classifier_grid;
            auto non_empty_positive = [](const std::vector<double>& v) {
                if (v.empty()) return std::string("needs at least one candidate");
                for (double x : v) {
                    if (!(x >= 0.0)) return std::string("candidates must be >= 0");
                }
                return std::string{};
            };
            r.get<std::vector<double>>("regularizations", g.regularizations, non_empty_positive);
            r.get<std::vector<double>>("learning_rates", g.learning_rates, [](const std::vector<double>& v) {
                if (v.empty()) return std::string("needs at least one candidate");
                for (double x : v) {
                    if (!(x > 0.0)) return std::string("candidates must be > 0");
                }
                return std::string{};
            });
            r.get("folds", g.folds, detail::at_least(2));
            r.get("epochs", g.base.epochs, detail::at_least(1));
            std::string mode = to_string(g.base.mode);
            r.get<std::string>("mode", mode, [](const std::string& s) {
                return (s == "softmax" || s == "platt") ? std::string{} : "must be softmax or platt";
            });
            g.base.mode = parse_calibration(mode == "platt" ? "platt" : "softmax");
        }

        if (const auto* ev = root.child("evaluation")) {
            FieldReader r(*ev, "config.evaluation", errors);
            std::string compare = to_string(c.evaluation.compare);
            r.get<std::string>("compare", compare, [](const std::string& s) {
                return (s == "baseline" || s == "activegan" || s == "four-way") ? std::string{}
                                                                                : "must be baseline, activegan or four-way";
            });
            c.evaluation.compare = compare == "baseline"    ? CompareMode::baseline
                                   : compare == "activegan" ? CompareMode::activegan
                                                            : CompareMode::four_way;
            r.get("generated_count", c.evaluation.generated_count);
            r.get("filter_threshold", c.evaluation.filter_threshold, detail::in_unit());
            r.get("filter_pool_factor", c.evaluation.filter_pool_factor, detail::at_least(1));
        }

        if (const auto* sw = root.child("sweep")) {
            FieldReader r(*sw, "config.sweep", errors);
            std::string axis = to_string(c.sweep.axis);
            r.get<std::string>("axis", axis, [](const std::string& s) {
                return (s == "epsilon" || s == "eps" || s == "alpha" || s == "lambda") ? std::string{}
                                                                                       : "must be epsilon, alpha or lambda";
            });
            c.sweep.axis = parse_axis(axis == "alpha" || axis == "lambda" || axis == "eps" ? axis : "epsilon");
            r.get<std::vector<double>>("values", c.sweep.values, [](const std::vector<double>& v) {
                return v.empty() ? std::string("needs at least one value") : std::string{};
            });
        }
    }

    // Cross-field rules.
    if (c.dataset.source == DatasetSource::idx) {
        if (c.dataset.images.empty()) errors.push_back("config.dataset.images: required for idx datasets");
        if (c.dataset.labels.empty()) errors.push_back("config.dataset.labels: required for idx datasets");
        for (const auto* p : {&c.dataset.images, &c.dataset.labels, &c.dataset.test_images, &c.dataset.test_labels}) {
            if (!p->empty() && !std::filesystem::exists(*p)) errors.push_back("config.dataset: file not found: " + *p);
        }
        if (c.dataset.test_images.empty() != c.dataset.test_labels.empty()) {
            errors.push_back("config.dataset: test_images and test_labels must be given together");
        }
    }
    if (!(c.train.warmup < c.train.iterations)) errors.push_back("config.train.warmup: must be smaller than iterations");
    if (c.train.buffer_capacity < c.train.batch_size) {
        errors.push_back("config.train.buffer_capacity: must be >= batch_size");
    }
    if (!errors.empty()) {
        std::string msg = "invalid config (" + std::to_string(errors.size()) + " problem" + (errors.size() > 1 ? "s" : "") + "):";
        for (const auto& e : errors) msg += "\n  " + e;
        throw ValidationError(msg);
    }
    c.train.seed = c.seed;
    return c;
}

inline RunConfig load_run_config(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ValidationError("config file not found: " + path);
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(f);
    } catch (const nlohmann::json::parse_error& e) {
        throw ValidationError("config " + path + " is not valid JSON: " + e.what());
    }
    return parse_run_config(j);
}

inline nlohmann::json to_json(const RunConfig& c) {
    nlohmann::json j;
    j["seed"] = c.seed;
    j["output_dir"] = c.output_dir;
    auto& d = j["dataset"];
    d["source"] = c.dataset.source == DatasetSource::idx ? "idx" : "synthetic";
    d["family"] = to_string(c.dataset.synthetic.family);
    d["num_classes"] = c.dataset.synthetic.num_classes;
    d["per_class"] = c.dataset.synthetic.per_class;
    d["noise"] = c.dataset.synthetic.noise;
    d["seed"] = c.dataset.synthetic.seed;
    d["test_per_class"] = c.dataset.test_per_class;
    d["images"] = c.dataset.images;
    d["labels"] = c.dataset.labels;
    d["test_images"] = c.dataset.test_images;
    d["test_labels"] = c.dataset.test_labels;
    d["split"] = c.dataset.split;
    d["max_samples"] = c.dataset.max_samples;
    auto& t = j["train"];
    t["mode"] = to_string(c.train.mode);
    t["iterations"] = c.train.iterations;
    t["batch_size"] = c.train.batch_size;
    t["warmup"] = c.train.warmup;
    t["buffer_capacity"] = c.train.buffer_capacity;
    t["discriminator_ratio"] = c.train.discriminator_ratio;
    t["lr_generator"] = c.train.lr_generator;
    t["lr_discriminator"] = c.train.lr_discriminator;
    t["lr_policy"] = c.train.lr_policy;
    t["latent_dim"] = c.train.latent_dim;
    t["hidden_width"] = c.train.hidden_width;
    t["hidden_layers"] = c.train.hidden_layers;
    t["use_buffer"] = c.train.use_buffer;
    t["final_samples"] = c.train.final_samples;
    t["checkpoint_interval"] = c.train.checkpoint_interval;
    auto& r = j["reward"];
    r["epsilon"] = c.train.reward.epsilon;
    r["alpha"] = c.train.reward.alpha;
    r["truncated"] = c.train.reward.truncated;
    r["lambda"] = c.train.reward.lambda;
    auto& cl = j["classifier"];
    cl["regularizations"] = c.train.classifier_grid.regularizations;
    cl["learning_rates"] = c.train.classifier_grid.learning_rates;
    cl["folds"] = c.train.classifier_grid.folds;
    cl["epochs"] = c.train.classifier_grid.base.epochs;
    cl["mode"] = to_string(c.train.classifier_grid.base.mode);
    auto& e = j["evaluation"];
    e["compare"] = to_string(c.evaluation.compare);
    e["generated_count"] = c.evaluation.generated_count;
    e["filter_threshold"] = c.evaluation.filter_threshold;
    e["filter_pool_factor"] = c.evaluation.filter_pool_factor;
    auto& s = j["sweep"];
    s["axis"] = to_string(c.sweep.axis);
    s["values"] = c.sweep.values;
    return j;
}

}  // namespace activegan
