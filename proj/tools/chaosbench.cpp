#include <CLI11.hpp>

#include <cstdio>
#include <exception>
#include <fstream>
#include <string>
#include <vector>

#include "chaosbench/orchestrator.hpp"

namespace {

struct CliOptions {
    std::string config;
    std::string out;
    std::int64_t seed = -1;  // -1 = keep the config's seed
};

chaosbench::ExperimentConfig resolve_config(const CliOptions& opt) {
    if (opt.config.empty()) throw chaosbench::ConfigError("--config is required");
    chaosbench::ExperimentConfig cfg = chaosbench::load_experiment_config(opt.config);
    if (!opt.out.empty()) cfg.out = opt.out;
    if (opt.seed >= 0) cfg.seed = static_cast<std::uint64_t>(opt.seed);
    cfg.validate();
    return cfg;
}

void print_outcomes(const std::vector<chaosbench::StageOutcome>& outcomes) {
    for (const auto& oc : outcomes) {
        if (oc.skipped)
            std::printf("[skip] %s (up to date)\n", oc.stage.c_str());
        else
            std::printf("[done] %s (%.1f ms)\n", oc.stage.c_str(), oc.wall_ms);
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"chaosbench: chaotic-system surrogate benchmark pipeline"};
    app.require_subcommand(1);

    CliOptions opt;
    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", opt.config, "experiment config (JSON)");
        sub->add_option("--out", opt.out, "output directory (overrides config)");
        sub->add_option("--seed", opt.seed, "base seed (overrides config)");
    };

    // Single-stage subcommands plus the full pipeline; `report` can also run
    // directly from an output directory without a config.
    std::vector<std::pair<std::string, std::string>> stages{
        {"generate", "simulate and persist the dataset"},
        {"train-ae", "train the autoencoder and encode latents (PDE benchmarks)"},
        {"train", "train the configured temporal models"},
        {"evaluate", "closed-loop rollout metrics"},
        {"diagnose", "Jacobian, bias, FTLE, and attractor diagnostics"},
        {"ablate", "ablation summary over the evaluated variants"},
        {"report", "aggregate tables from persisted per-trajectory CSVs"}};
    for (auto& [name, desc] : stages) add_common(app.add_subcommand(name, desc));
    add_common(app.add_subcommand("pipeline", "run all stages for the configured benchmark"));

    CLI11_PARSE(app, argc, argv);
    const std::string sub = app.get_subcommands().front()->get_name();

    try {
        if (sub == "report" && opt.config.empty()) {
            if (opt.out.empty())
                throw chaosbench::ConfigError("report: pass --config or --out");
            const chaosbench::RunPaths paths{std::filesystem::path(opt.out)};
            nlohmann::json report = chaosbench::build_report(paths.root);
            chaosbench::detail::write_json(paths.report_json(), report);
            const std::string txt = chaosbench::render_report_text(report);
            chaosbench::detail::write_text(paths.report_txt(), txt);
            std::fputs(txt.c_str(), stdout);
            return 0;
        }

        chaosbench::ExperimentConfig cfg = resolve_config(opt);
        std::vector<std::string> run;
        if (sub == "pipeline") {
            run = chaosbench::default_stages(cfg);
        } else if (sub == "ablate") {
            run = {"generate", "train-ae", "train", "evaluate", "ablate"};
        } else {
            run = {sub};
        }
        print_outcomes(chaosbench::run_pipeline(cfg, run));
        if (sub == "report" || sub == "pipeline") {
            const chaosbench::RunPaths paths{std::filesystem::path(cfg.out)};
            std::ifstream txt(paths.report_txt());
            std::string line;
            while (std::getline(txt, line)) std::printf("%s\n", line.c_str());
        }
        return 0;
    } catch (const chaosbench::ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const chaosbench::IoError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const chaosbench::NumericalError& e) {
        std::fprintf(stderr, "numerical failure: %s\n", e.what());
        return 3;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
}
