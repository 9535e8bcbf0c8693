#include <cstdio>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "align_lab/align_lab.hpp"

namespace {

using namespace align_lab;

// Exit codes: 0 success, 1 failed check or runtime error, 2 bad usage or
// config, 3 missing input data.
constexpr int kExitFailure = 1;
constexpr int kExitUsage = 2;
constexpr int kExitDataMissing = 3;

struct RunArgs {
    std::string experiment;
    std::uint64_t seed = 0;
    std::size_t steps = 0;
    double lr = 0.0;
    double loss_stop = 0.0;
    std::size_t record_every = 0;
    std::string data_dir;
    std::string out;
    std::string config;
};

ExperimentSpec build_spec(const RunArgs& a, const CLI::App& run) {
    ExperimentSpec spec;
    if (!a.config.empty()) {
        std::ifstream in(a.config);
        if (!in) throw IoError("cannot open config " + a.config);
        nlohmann::json j;
        try {
            in >> j;
        } catch (const nlohmann::json::exception& e) {
            throw FormatError(a.config + ": " + e.what());
        }
        spec = spec_from_json(j);
    }
    if (run.count("--experiment")) spec.name = a.experiment;
    if (run.count("--seed")) spec.seed = a.seed;
    if (run.count("--steps")) spec.steps = a.steps;
    if (run.count("--lr")) spec.lr = a.lr;
    if (run.count("--loss-stop")) spec.loss_stop = a.loss_stop;
    if (run.count("--record-every")) spec.record_every = a.record_every;
    if (run.count("--data-dir")) spec.data_path = a.data_dir;
    if (run.count("--out")) spec.out_dir = a.out;
    if (spec.name.empty()) throw PreconditionError("no experiment given (--experiment or \"name\" in the config)");
    if (spec.out_dir.empty()) throw PreconditionError("no output directory given (--out or \"out_dir\" in the config)");
    return spec;
}

int do_run(const RunArgs& a, const CLI::App& app) {
    const ExperimentSpec spec = build_spec(a, app);
    const RunReport rep = run(spec);
    std::printf("%s seed=%llu steps=%zu final_loss=%s converged=%s\n", spec.name.c_str(),
                static_cast<unsigned long long>(spec.seed), rep.trace.steps_run,
                format_double(rep.trace.final_loss).c_str(), rep.trace.converged ? "true" : "false");
    for (const auto& f : rep.files) std::printf("  wrote %s\n", f.string().c_str());
    if (!rep.trace.converged) {
        std::fprintf(stderr, "note: loss_stop not reached within the step cap; the trace is partial (converged=false)\n");
    }
    return 0;
}

int do_check(const std::string& which) {
    int failed = 0;
    for (const auto* c : select_checks(which)) {
        const CheckResult r = run_check(*c);
        std::printf("%s %-4s %s: %s [%.2fs]\n", r.passed ? "PASS" : "FAIL", r.id.c_str(), r.title.c_str(),
                    r.detail.c_str(), r.seconds);
        std::fflush(stdout);
        if (!r.passed) ++failed;
    }
    return failed == 0 ? 0 : kExitFailure;
}

int do_list() {
    for (const auto& e : registry()) {
        std::printf("%-15s steps=%-7zu %s\n", e.name.c_str(), e.default_steps, e.description.c_str());
    }
    std::printf("\nchecks (align-lab check <id|module|all>):\n");
    for (const auto& c : check_registry()) std::printf("  %-4s %-10s %s\n", c.id.c_str(), c.module.c_str(), c.title.c_str());
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Gradient-descent alignment experiments for deep linear networks"};
    app.require_subcommand(1);

    RunArgs ra;
    auto* run_cmd = app.add_subcommand("run", "run a registry experiment and write CSV, SVG and run.json");
    run_cmd->add_option("--experiment,-e", ra.experiment, "experiment name (see list)");
    run_cmd->add_option("--seed", ra.seed, "RNG seed (default 42)");
    run_cmd->add_option("--steps", ra.steps, "maximum number of GD steps")->check(CLI::PositiveNumber);
    run_cmd->add_option("--lr", ra.lr, "learning rate (default 1e-2)")->check(CLI::PositiveNumber);
    run_cmd->add_option("--loss-stop", ra.loss_stop, "stop once loss <= this (default 1e-4)")->check(CLI::NonNegativeNumber);
    run_cmd->add_option("--record-every", ra.record_every, "trace row interval")->check(CLI::PositiveNumber);
    run_cmd->add_option("--data-dir", ra.data_dir, "directory with MNIST IDX files (default $ALIGN_LAB_DATA_DIR)");
    run_cmd->add_option("--out,-o", ra.out, "output directory");
    run_cmd->add_option("--config,-c", ra.config, "JSON file with ExperimentSpec fields; flags override it")
        ->check(CLI::ExistingFile);

    std::string which = "all";
    auto* check_cmd = app.add_subcommand("check", "run acceptance checks");
    check_cmd->add_option("name", which, "all, a module name, or a check id such as c4");

    auto* list_cmd = app.add_subcommand("list", "list experiments and checks");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : kExitUsage;
    }

    try {
        if (run_cmd->parsed()) return do_run(ra, *run_cmd);
        if (check_cmd->parsed()) return do_check(which);
        if (list_cmd->parsed()) return do_list();
    } catch (const DataMissingError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitDataMissing;
    } catch (const PreconditionError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitUsage;
    } catch (const FormatError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitUsage;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitFailure;
    }
    return kExitUsage;
}
