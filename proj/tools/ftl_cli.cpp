#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "ftl/cli_io.hpp"

namespace {

struct Overrides {
    std::string config;
    std::string out;
    std::optional<std::size_t> n;
    std::optional<double> t_final;
    std::optional<int> threads;
};

void add_common(CLI::App* cmd, Overrides& o) {
    cmd->add_option("--config", o.config, "Run configuration (JSON) or a manifest.json")
        ->required()
        ->check(CLI::ExistingFile);
    cmd->add_option("--out", o.out, "Output directory (overrides output.directory)");
    cmd->add_option("--n", o.n, "Particle count override")->check(CLI::Range(2, 100000000));
    cmd->add_option("--t-final", o.t_final, "Final time override")
        ->check(CLI::PositiveNumber);
    cmd->add_option("--threads", o.threads, "Worker threads for the kernel sums")
        ->check(CLI::Range(1, 1024));
}

ftl::RunConfig resolve(const Overrides& o) {
    ftl::RunConfig cfg = ftl::load_config(o.config);
    if (o.n) cfg.particles = *o.n;
    if (o.t_final) cfg.t_final = *o.t_final;
    if (o.threads) cfg.integrator.threads = *o.threads;
    if (!o.out.empty()) cfg.output_directory = o.out;
    // re-validate overridden values through the schema
    return ftl::parse_config(ftl::to_json(cfg));
}

void print_issues(const ftl::ConfigError& e) {
    std::cerr << "configuration errors:\n";
    for (const auto& issue : e.issues()) {
        std::cerr << "  " << (issue.path.empty() ? "/" : issue.path) << ": " << issue.message
                  << "\n";
    }
}

int do_run(const Overrides& o, bool seed, const std::string& mode) {
    ftl::RunConfig cfg = resolve(o);
    if (!mode.empty()) cfg.mode = mode;
    cfg = ftl::parse_config(ftl::to_json(cfg));
    if (seed) {
        const auto check = ftl::seed_check(cfg);
        std::cout << "seed check: " << check.detail << "\n";
        return check.identical ? 0 : 1;
    }
    const ftl::RunResult res = ftl::simulate(cfg);
    const int status = ftl::write_outputs(cfg, res, cfg.output_directory);
    std::cout << ftl::report_text(cfg, res);
    std::cout << "outputs written to " << cfg.output_directory << "\n";
    return status;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Follow-the-Leader particle simulator for 1D aggregation-diffusion equations"};
    app.require_subcommand(1);

    Overrides run_opts;
    bool seed = false;
    auto* run = app.add_subcommand("run", "Simulate one configuration and write its outputs");
    add_common(run, run_opts);
    run->add_flag("--seed-check", seed,
                  "Run twice and with two workers; exit 0 iff outputs are bitwise identical");

    Overrides conv_opts;
    std::vector<std::size_t> n_list;
    auto* converge = app.add_subcommand("converge", "Self-convergence study across particle counts");
    add_common(converge, conv_opts);
    converge->add_option("--n-list", n_list, "Increasing particle counts (overrides study.n_list)")
        ->delimiter(',');

    Overrides val_opts;
    auto* validate = app.add_subcommand("validate", "Admissibility report of the model only");
    add_common(validate, val_opts);

    std::string metrics_dir;
    auto* metrics = app.add_subcommand(
        "metrics", "Recompute diagnostics from a run directory (manifest.json + trajectory.csv)");
    metrics->add_option("--dir", metrics_dir, "Run directory")
        ->required()
        ->check(CLI::ExistingDirectory);

    CLI11_PARSE(app, argc, argv);

    try {
        if (*run) return do_run(run_opts, seed, "");
        if (*converge) {
            ftl::RunConfig cfg = resolve(conv_opts);
            if (!n_list.empty()) cfg.n_list = n_list;
            cfg.mode = "converge";
            cfg = ftl::parse_config(ftl::to_json(cfg));
            const ftl::RunResult res = ftl::simulate(cfg);
            const int status = ftl::write_outputs(cfg, res, cfg.output_directory);
            if (res.convergence) ftl::write_convergence_csv(std::cout, *res.convergence);
            if (!res.completed) std::cerr << "FAILED: " << res.error << "\n";
            return res.completed ? status : 1;
        }
        if (*validate) {
            const ftl::RunConfig cfg = resolve(val_opts);
            const ftl::Problem problem = ftl::build_problem(cfg);
            const auto report = ftl::validate(problem.spec, problem.datum);
            if (report.admissible()) {
                std::cout << "admissible\n";
                return 0;
            }
            for (const auto& v : report.violations) {
                std::cout << "[" << v.law << "] " << v.message << " (at "
                          << ftl::format_double(v.at) << ")\n";
            }
            return 1;
        }
        if (*metrics) {
            ftl::RunConfig cfg;
            const auto rep = ftl::recompute_metrics(metrics_dir, &cfg);
            ftl::write_report_csv(std::cout, rep);
            return rep.pass() ? 0 : 1;
        }
    } catch (const ftl::ConfigError& e) {
        print_issues(e);
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
