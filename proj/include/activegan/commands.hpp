#pragma once

// The four CLI commands as library functions. Each writes into an output
// directory through OutputDir, which records every file it creates and ends
// the run with manifest.json listing them.

#include <cstdint>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "activegan/config.hpp"
#include "activegan/data.hpp"
#include "activegan/error.hpp"
#include "activegan/evaluation.hpp"
#include "activegan/serialize.hpp"
#include "activegan/training.hpp"

namespace activegan {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitValidation = 2;
inline constexpr int kExitDivergence = 3;
inline constexpr int kExitIo = 4;

// Exit status for an exception escaping a command.
inline int exit_code_for(const std::exception& e) {
    if (dynamic_cast<const ValidationError*>(&e) || dynamic_cast<const ContractError*>(&e)) return kExitValidation;
    if (dynamic_cast<const DivergenceError*>(&e) || dynamic_cast<const NumericError*>(&e)) return kExitDivergence;
    if (dynamic_cast<const IoError*>(&e) || dynamic_cast<const FormatError*>(&e)) return kExitIo;
    return kExitFailure;
}

class OutputDir {
public:
    OutputDir(std::filesystem::path root, std::string command) : root_(std::move(root)), command_(std::move(command)) {
        std::error_code ec;
        std::filesystem::create_directories(root_, ec);
        if (ec || !std::filesystem::is_directory(root_)) {
            throw IoError("cannot create output directory " + root_.string() + ": " + ec.message());
        }
    }

    const std::filesystem::path& root() const { return root_; }

    std::filesystem::path declare(const std::string& name) {
        if (std::find(files_.begin(), files_.end(), name) == files_.end()) files_.push_back(name);
        return root_ / name;
    }

    std::ofstream open(const std::string& name) {
        std::ofstream f(declare(name), std::ios::binary | std::ios::trunc);
        if (!f) throw IoError("cannot write " + (root_ / name).string());
        return f;
    }

    void write_text(const std::string& name, const std::string& text) {
        auto f = open(name);
        f << text;
        if (!f) throw IoError("failed writing " + (root_ / name).string());
    }

    void write_manifest(const std::string& status) {
        nlohmann::json j;
        j["command"] = command_;
        j["status"] = status;
        std::vector<std::string> present;
        for (const auto& f : files_) {
            if (std::filesystem::exists(root_ / f)) present.push_back(f);
        }
        present.push_back("manifest.json");
        j["files"] = present;
        std::ofstream f(root_ / "manifest.json", std::ios::binary | std::ios::trunc);
        if (!f) throw IoError("cannot write manifest in " + root_.string());
        f << j.dump(2) << '\n';
    }

private:
    std::filesystem::path root_;
    std::string command_;
    std::vector<std::string> files_;
};

// Training and test sets, standardized with the training statistics.
struct PreparedData {
    LabeledDataset train;
    LabeledDataset test;
};

inline PreparedData prepare_data(const RunConfig& cfg) {
    const DatasetConfig& d = cfg.dataset;
    LabeledDataset train, test;
    if (d.source == DatasetSource::synthetic) {
        train = make_synthetic(d.synthetic);
        if (d.test_per_class > 0) {
            SyntheticSpec ts = d.synthetic;
            ts.per_class = d.test_per_class;
            ts.seed = SeededRng::splitmix(d.synthetic.seed + 1);
            test = make_synthetic(ts);
        }
    } else {
        train = load_idx(d.images, d.labels);
        if (d.max_samples > 0 && d.max_samples < train.size()) {
            std::vector<std::size_t> rows(d.max_samples);
            std::iota(rows.begin(), rows.end(), std::size_t{0});
            train = train.subset(rows);
        }
        if (!d.test_images.empty()) {
            test = load_idx(d.test_images, d.test_labels);
            const std::size_t k = std::max(train.num_classes, test.num_classes);
            train.num_classes = test.num_classes = k;
        }
    }
    if (test.empty()) {
        const SplitResult s = split(train, d.split, d.synthetic.seed);
        if (s.test.empty()) throw ValidationError("config.dataset.split: leaves an empty test set");
        train = s.train;
        test = s.test;
    }
    if (train.empty()) throw ValidationError("config.dataset: empty training set");
    PreparedData out;
    out.train = standardize(train);
    out.test = standardize_with(test, *out.train.standardization);
    out.test.num_classes = out.train.num_classes;
    return out;
}

inline ExperimentSetup make_setup(const RunConfig& cfg, const PreparedData& data) {
    ExperimentSetup s;
    s.train = data.train;
    s.test = data.test;
    s.train_config = cfg.train;
    s.generated_count = cfg.evaluation.generated_count;
    s.filter_threshold = cfg.evaluation.filter_threshold;
    s.filter_pool_factor = cfg.evaluation.filter_pool_factor;
    return s;
}

// Header f0..f{d-1},label,u_m,u_le,r. Features are mapped back to the
// original data coordinates when a standardization is given.
inline void write_samples_csv(std::ostream& os, std::span<const GeneratedSample> samples, std::size_t dim,
                              const std::optional<Standardization>& standardization) {
    for (std::size_t c = 0; c < dim; ++c) os << 'f' << c << ',';
    os << "label,u_m,u_le,r\n";
    for (const auto& s : samples) {
        for (std::size_t c = 0; c < dim; ++c) {
            const double v = standardization ? s.x[c] * standardization->scale[c] + standardization->mean[c] : s.x[c];
            os << format_double(v) << ',';
        }
        os << s.y << ',' << format_double(s.u_m) << ',' << format_double(s.u_le) << ',' << format_double(s.r) << '\n';
    }
}

inline void append_model_metadata(NamedTensors& out, const RewardConfig& reward, const Standardization& s) {
    out.emplace_back("meta.reward", Tensor::vector({reward.epsilon, reward.alpha, reward.truncated, reward.lambda}));
    out.emplace_back("data.mean", Tensor::vector(s.mean));
    out.emplace_back("data.scale", Tensor::vector(s.scale));
}

inline const Tensor* find_optional(const NamedTensors& in, const std::string& name) {
    for (const auto& [n, t] : in) {
        if (n == name) return &t;
    }
    return nullptr;
}

inline RunConfig with_overrides(RunConfig cfg, std::optional<std::uint64_t> seed, std::optional<std::string> out) {
    if (seed) {
        cfg.seed = *seed;
        cfg.train.seed = *seed;
    }
    if (out) cfg.output_dir = *out;
    return cfg;
}

// ---- train ---------------------------------------------------------------

// Files: resolved_config.json, trace.csv, checkpoint.agan (when
// checkpoint_interval > 0), model.agan, samples.csv, scatter.csv,
// manifest.json. On divergence the partial files and the manifest are kept
// and the error is rethrown.
inline RunArtifacts cmd_train(const RunConfig& cfg_in) {
    RunConfig cfg = cfg_in;
    const PreparedData data = prepare_data(cfg);
    OutputDir out(cfg.output_dir, "train");
    out.write_text("resolved_config.json", to_json(cfg).dump(2) + "\n");

    TrainConfig tc = cfg.train;
    tc.seed = cfg.seed;
    if (tc.checkpoint_interval > 0) tc.checkpoint_path = out.declare("checkpoint.agan").string();

    auto trace = out.open("trace.csv");
    trace << kTraceCsvHeader << '\n';
    RunArtifacts run;
    try {
        run = train_activegan(data.train, tc, [&](const TraceRow& r) { trace << trace_csv_row(r) << '\n' << std::flush; });
    } catch (const Error&) {
        trace.close();
        out.write_manifest("diverged");
        throw;
    }
    trace.close();

    NamedTensors model = checkpoint_tensors(run.dims, run.generator, run.discriminator, run.policy, run.classifier);
    append_model_metadata(model, tc.reward, *data.train.standardization);
    write_container(out.declare("model.agan").string(), model);
    {
        auto f = out.open("samples.csv");
        write_samples_csv(f, run.samples, data.train.dim(), data.train.standardization);
    }
    {
        auto f = out.open("scatter.csv");
        write_scatter_csv(f, data.train, run.samples, data.test, run.classifier, tc.reward.epsilon);
    }
    out.write_manifest("ok");
    return run;
}

// ---- generate ------------------------------------------------------------

struct GenerateOptions {
    std::string checkpoint;
    std::size_t count = 0;
    std::optional<std::size_t> label;
    std::uint64_t seed = 0;
    std::string output_dir = "out";
};

// Writes samples.csv and manifest.json. Rewards use the reward settings
// stored with the model, or the defaults for a bare training checkpoint.
inline std::vector<GeneratedSample> cmd_generate(const GenerateOptions& opt) {
    const NamedTensors tensors = read_container(opt.checkpoint);
    const LoadedModels m = models_from_checkpoint(tensors);
    RewardConfig reward;
    if (const Tensor* t = find_optional(tensors, "meta.reward")) {
        if (t->size() != 4) throw FormatError("meta.reward must hold 4 values");
        reward = {(*t)[0], (*t)[1], (*t)[2], (*t)[3]};
        try {
            reward.validate();
        } catch (const ContractError& e) {
            throw FormatError(std::string("meta.reward: ") + e.what());
        }
    }
    std::optional<Standardization> standardization;
    const Tensor* mean = find_optional(tensors, "data.mean");
    const Tensor* scale = find_optional(tensors, "data.scale");
    if (mean && scale) {
        if (mean->size() != m.dims.sample_dim || scale->size() != m.dims.sample_dim) {
            throw FormatError("data standardization disagrees with meta.dims");
        }
        standardization = Standardization{{mean->values().begin(), mean->values().end()},
                                          {scale->values().begin(), scale->values().end()}};
    }
    if (opt.label && *opt.label >= m.dims.num_classes) {
        throw ValidationError("--class " + std::to_string(*opt.label) + " outside [0, " +
                              std::to_string(m.dims.num_classes) + ")");
    }
    SeededRng rng(opt.seed);
    const auto samples = generate_samples(m.generator, m.classifier, m.policy, opt.count, reward, rng, opt.label);
    OutputDir out(opt.output_dir, "generate");
    {
        auto f = out.open("samples.csv");
        write_samples_csv(f, samples, m.dims.sample_dim, standardization);
    }
    out.write_manifest("ok");
    return samples;
}

// ---- evaluate ------------------------------------------------------------

// Writes report.json and manifest.json. Baseline mode reports baseline_f
// only; activegan mode one EvalReport; four-way the full comparison.
inline nlohmann::json cmd_evaluate(const RunConfig& cfg) {
    const PreparedData data = prepare_data(cfg);
    const ExperimentSetup setup = make_setup(cfg, data);
    nlohmann::json report;
    switch (cfg.evaluation.compare) {
        case CompareMode::baseline:
            report["baseline_f"] = compare_methods(setup, true).baseline_f;
            break;
        case CompareMode::activegan: {
            TrainConfig tc = cfg.train;
            tc.mode = GanMode::activegan;
            EvalReport r = run_and_evaluate(setup, tc);
            r.config = to_json(cfg);
            report = to_json(r);
            break;
        }
        case CompareMode::four_way:
            report = to_json(compare_methods(setup));
            report["seed"] = cfg.seed;
            report["config"] = to_json(cfg);
            break;
    }
    OutputDir out(cfg.output_dir, "evaluate");
    out.write_text("report.json", report.dump(2) + "\n");
    out.write_manifest("ok");
    return report;
}

// ---- sweep ---------------------------------------------------------------

// Writes sweep.csv (one row per value, in order) and manifest.json.
inline std::vector<SweepRow> cmd_sweep(const RunConfig& cfg, std::size_t jobs = 1) {
    const PreparedData data = prepare_data(cfg);
    const ExperimentSetup setup = make_setup(cfg, data);
    const auto rows = sweep(setup, cfg.sweep.axis, cfg.sweep.values, jobs);
    OutputDir out(cfg.output_dir, "sweep");
    {
        auto f = out.open("sweep.csv");
        f << kSweepCsvHeader << '\n';
        for (const auto& r : rows) f << sweep_csv_row(r) << '\n';
    }
    out.write_manifest("ok");
    return rows;
}

}  // namespace activegan
