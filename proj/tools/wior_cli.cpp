// Command-line front end.
//
//   wior run <config>         run all (sampler, seed) trials, write CSVs + summary
//   wior fit-errors <config>  gradient-error fits at the initial state
//   wior validate <config>    parse and check a config, print the plan
//
// Exit codes: 0 ok, 1 config error, 2 divergence, 3 I/O error.

#include <cstdio>
#include <exception>
#include <string>

#include <CLI11.hpp>

#include "wior/harness.hpp"

namespace {

struct CommonArgs {
    std::string config_path;
    std::string out_dir;
    std::size_t jobs = 1;
    std::uint64_t seed_offset = 0;
};

wior::ExperimentConfig load_config(const CommonArgs& args) {
    wior::ExperimentConfig cfg = wior::parse_config_file(args.config_path);
    if (!args.out_dir.empty()) cfg.out_dir = args.out_dir;
    return cfg;
}

int cmd_run(const CommonArgs& args) {
    const wior::ExperimentConfig cfg = load_config(args);
    const wior::ExperimentOutcome outcome =
        wior::run_experiment(cfg, args.jobs, args.seed_offset);
    for (const wior::SamplerSummary& s : outcome.summary.per_sampler) {
        std::printf("%-18s median_epochs_to_tol=%-8g median_final_grad=%-12g trials=%zu/%zu\n",
                    wior::to_string(s.sampler).c_str(), s.median_epochs_to_tol,
                    s.median_final_grad_norm, s.completed_trials,
                    s.completed_trials + s.incomplete_trials);
    }
    std::printf("summary: %s\n", outcome.summary_path.c_str());
    return outcome.any_divergence ? 2 : 0;
}

int cmd_fit_errors(const CommonArgs& args) {
    const wior::ExperimentConfig cfg = load_config(args);
    const wior::FitOutcome fits = wior::fit_sampler_errors(cfg, args.seed_offset);
    for (const auto& [sampler, per_seed] : fits.per_sampler) {
        std::vector<double> alphas;
        for (const auto& f : per_seed) alphas.push_back(f.alpha_hat);
        std::printf("%-18s alpha_hat_median=%g (%zu seeds)\n",
                    wior::to_string(sampler).c_str(), wior::median(alphas), per_seed.size());
    }
    std::printf("fits: %s\n", fits.json_path.c_str());
    return 0;
}

int cmd_validate(const CommonArgs& args) {
    const wior::ExperimentConfig cfg = load_config(args);
    std::printf("config ok: problem=%s algorithm=%s samplers=%zu seeds=%zu -> %zu trials\n",
                cfg.problem.name.c_str(), cfg.algorithm.c_str(), cfg.samplers.size(),
                cfg.trial_seeds.size(), cfg.samplers.size() * cfg.trial_seeds.size());
    std::printf("output dir: %s\n", cfg.out_dir.c_str());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"without-replacement bilevel/minimax/compositional solver bench"};
    app.require_subcommand(1);

    CommonArgs args;
    auto add_common = [&](CLI::App* sub, bool with_jobs) {
        sub->add_option("config", args.config_path, "experiment config file")->required();
        sub->add_option("--out-dir", args.out_dir, "override the output directory");
        sub->add_option("--seed-offset", args.seed_offset, "offset added to every trial seed");
        if (with_jobs) sub->add_option("--jobs", args.jobs, "concurrent trials");
    };
    CLI::App* run = app.add_subcommand("run", "run the experiment");
    add_common(run, true);
    CLI::App* fit = app.add_subcommand("fit-errors", "fit averaged gradient errors");
    add_common(fit, false);
    CLI::App* validate = app.add_subcommand("validate", "parse and check a config");
    add_common(validate, false);

    CLI11_PARSE(app, argc, argv);

    try {
        if (run->parsed()) return cmd_run(args);
        if (fit->parsed()) return cmd_fit_errors(args);
        return cmd_validate(args);
    } catch (const wior::ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 1;
    } catch (const wior::IoError& e) {
        std::fprintf(stderr, "io error: %s\n", e.what());
        return 3;
    } catch (const wior::DivergenceError& e) {
        std::fprintf(stderr, "divergence: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
}
