#include <cstdint>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "activegan/commands.hpp"

namespace ag = activegan;

int main(int argc, char** argv) {
    CLI::App app{"ActiveGAN: uncertainty-driven conditional GAN training and evaluation"};
    app.require_subcommand(1);

    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out_dir;
    std::size_t jobs = 1;

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", config_path, "run config (JSON)")->required()->check(CLI::ExistingFile);
        sub->add_option("--seed", seed, "override the config seed");
        sub->add_option("--out", out_dir, "override the output directory");
    };

    auto* train = app.add_subcommand("train", "train a GAN and write trace, models and samples");
    add_common(train);
    auto* evaluate = app.add_subcommand("evaluate", "baseline, single-method or four-way augmentation report");
    add_common(evaluate);
    auto* sweep = app.add_subcommand("sweep", "train and evaluate once per value of one reward parameter");
    add_common(sweep);
    sweep->add_option("--jobs", jobs, "rows trained in parallel")->check(CLI::PositiveNumber);

    ag::GenerateOptions gen;
    std::optional<std::size_t> label;
    std::uint64_t gen_seed = 0;
    auto* generate = app.add_subcommand("generate", "sample from a trained model");
    generate->add_option("--checkpoint", gen.checkpoint, "model.agan or checkpoint.agan")->required();
    generate->add_option("--count", gen.count, "number of samples")->required();
    generate->add_option("--class", label, "fix the label of every sample");
    generate->add_option("--seed", gen_seed, "sampling seed");
    generate->add_option("--out", gen.output_dir, "output directory");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? ag::kExitOk : ag::kExitValidation;
    }

    try {
        if (generate->parsed()) {
            gen.label = label;
            gen.seed = gen_seed;
            const auto samples = ag::cmd_generate(gen);
            std::cout << "wrote " << samples.size() << " samples to " << gen.output_dir << "/samples.csv\n";
            return ag::kExitOk;
        }
        const ag::RunConfig cfg = ag::with_overrides(ag::load_run_config(config_path), seed, out_dir);
        if (train->parsed()) {
            const auto run = ag::cmd_train(cfg);
            std::cout << "trained " << run.trace.size() << " iterations; outputs in " << cfg.output_dir << "\n";
        } else if (evaluate->parsed()) {
            std::cout << ag::cmd_evaluate(cfg).dump(2) << "\n";
        } else if (sweep->parsed()) {
            const auto rows = ag::cmd_sweep(cfg, jobs);
            std::cout << ag::kSweepCsvHeader << "\n";
            for (const auto& r : rows) std::cout << ag::sweep_csv_row(r) << "\n";
        }
        return ag::kExitOk;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return ag::exit_code_for(e);
    }
}
