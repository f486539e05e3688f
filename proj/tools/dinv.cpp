// dinv: generate training data, tune, and run closed-loop experiments.

#include "dinv/cli.hpp"

#include <CLI11.hpp>

#include <iostream>

int main(int argc, char** argv) {
    using namespace dinv::cli;

    CLI::App app{"Direct inverse control experiments"};
    app.require_subcommand(1);

    std::string config_path;
    RunOptions opt;
    std::string mode;
    std::uint64_t seed = 0;

    auto common = [&](CLI::App* sub) {
        sub->add_option("--config", config_path, "experiment config (JSON)")->required()->check(CLI::ExistingFile);
        sub->add_option("--out", opt.out_dir, "output directory");
        sub->add_option("--seed", seed, "override the config seed");
    };

    CLI::App* gen = app.add_subcommand("generate", "roll out the excitation policy and write training data");
    common(gen);
    gen->add_option("--data", opt.data_path, "training CSV to write");

    CLI::App* tune = app.add_subcommand("tune", "seed estimators, select sigma and x_bar, validate");
    common(tune);
    tune->add_option("--data", opt.data_path, "training CSV");
    tune->add_option("--tuning", opt.tuning_path, "tuning JSON to write");

    CLI::App* run = app.add_subcommand("run", "train on the data and run the closed loop");
    common(run);
    run->add_option("--data", opt.data_path, "training CSV");
    run->add_option("--tuning", opt.tuning_path, "tuning JSON");
    run->add_option("--mode", mode, "static or adaptive")->check(CLI::IsMember({"static", "adaptive"}));
    run->add_flag("--force", opt.force, "run even if the tuning failed validation");
    run->add_flag("--timing", opt.timing, "record per-step wallclock (traces stop being reproducible)");

    CLI::App* sweep = app.add_subcommand("sweep", "generate, tune and run every cell of sweep.parameters");
    common(sweep);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : kUsage;
    }

    try {
        ExperimentConfig cfg = load_config(config_path);
        if (!mode.empty()) opt.mode = dinv::parse_mode(mode);
        for (CLI::App* sub : {gen, tune, run, sweep})
            if (sub->parsed() && sub->count("--seed")) opt.seed = seed;
        apply_overrides(cfg, opt);

        if (gen->parsed()) return cmd_generate(cfg, std::cerr);
        if (tune->parsed()) return cmd_tune(cfg, std::cerr);
        if (run->parsed()) return cmd_run(cfg, opt.force, opt.timing, std::cerr);
        return cmd_sweep(cfg, std::cerr);
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kUsage;
    } catch (const dinv::EmptySlabError& e) {
        std::cerr << "stability violation: " << e.what() << "\n";
        return kViolation;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kViolation;
    }
}
