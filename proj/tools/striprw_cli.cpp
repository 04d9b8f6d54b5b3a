/// @file striprw_cli.cpp
/// @brief Command-line driver: runs configured analysis stages and
/// experiments, writes artifacts, and maps results to POSIX exit codes
/// (0 pass, 1 criteria failure, 2 configuration error, 3 numerical error).

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "striprw/runconfig.hpp"

namespace {

// ===== subcommand -> stage selection =====

/// Stages a subcommand may run, in dependency order. The actual filter is the
/// intersection with what the config declares, so a config without e.g. a
/// rates stage still works under `analyze`.
std::vector<std::string> stages_for(const std::string& cmd) {
    if (cmd == "validate") return {"validate"};
    if (cmd == "analyze") return {"validate", "hierarchy", "potential", "harmonic", "rates"};
    if (cmd == "green") return {"validate", "green"};
    if (cmd == "experiment") return {"validate", "experiments"};
    return {};  // "all": empty filter = every configured stage
}

int run_subcommand(const std::string& cmd, const std::string& config_path,
                   const std::string& out_dir, long long seed, bool quiet) {
    std::ifstream f(config_path, std::ios::binary);
    if (!f) {
        std::fprintf(stderr, "error: cannot read config file %s\n", config_path.c_str());
        return 2;
    }
    std::ostringstream ss;
    ss << f.rdbuf();
    const std::string config_text = ss.str();

    std::string normalized;
    try {
        normalized = striprw::validate_run_config(config_text);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    }

    striprw::RunOverrides ov;
    ov.output_dir = out_dir;
    ov.seed = seed;
    if (!quiet) ov.log = &std::cerr;
    if (cmd != "all") {
        const nlohmann::json cfg = nlohmann::json::parse(normalized);
        for (const auto& s : stages_for(cmd)) {
            if (cfg.at("stages").contains(s)) ov.stages.push_back(s);
        }
        if (ov.stages.empty()) {
            std::fprintf(stderr, "config error: subcommand \"%s\" selects no configured stage\n",
                         cmd.c_str());
            return 2;
        }
    }

    const striprw::RunOutcome out = striprw::run_config(config_text, ov);
    for (const auto& a : out.artifacts) std::printf("artifact %s\n", a.c_str());
    std::printf("%s (exit %d)\n", out.message.c_str(), out.exit_code);
    return out.exit_code;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Analysis and simulation driver for diffusive random walks on a strip"};
    app.require_subcommand(1);

    std::string config_path;
    std::string out_dir;
    long long seed = -1;
    bool quiet = false;

    // Shared flags; CLI11 fallthrough lets them appear before the subcommand.
    app.add_option("--config", config_path, "Path to the JSON run configuration")
        ->required()
        ->check(CLI::ExistingFile);
    app.add_option("--out", out_dir, "Output directory (overrides the config)");
    app.add_option("--seed", seed, "Master seed (overrides the config)")
        ->check(CLI::NonNegativeNumber);
    app.add_flag("--quiet", quiet, "Suppress per-stage progress on stderr");
    app.fallthrough();

    app.add_subcommand("validate", "Build the environment and check uniform ellipticity");
    app.add_subcommand("analyze",
                       "Hierarchy, potential, harmonic objects, and rate exponents");
    app.add_subcommand("green", "Exact Green function vs parabola asymptotics");
    app.add_subcommand("experiment", "Monte Carlo limit-theorem experiments");
    app.add_subcommand("all", "Every stage declared in the config");

    app.set_version_flag("--version", striprw::library_version());

    CLI11_PARSE(app, argc, argv);

    const std::string cmd = app.get_subcommands().front()->get_name();
    try {
        return run_subcommand(cmd, config_path, out_dir, seed, quiet);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "fatal: %s\n", e.what());
        return 3;
    }
}
