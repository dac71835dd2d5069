#include "ocil/cli.hpp"

#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "ocil/error.hpp"
#include "ocil/protocol.hpp"
#include "ocil/report.hpp"
#include "ocil/synthgen.hpp"

namespace ocil {

namespace {

enum class Exit { ok = 0, config = 1, data = 2, runtime = 3 };

const char* category(Exit e) {
    switch (e) {
        case Exit::config: return "config";
        case Exit::data: return "data";
        default: return "runtime";
    }
}

Exit exit_for(ErrorCode c) {
    if (is_data_error(c)) return Exit::data;
    if (c == ErrorCode::Config) return Exit::config;
    return Exit::runtime;
}

std::string one_line(std::string s) {
    for (char& ch : s)
        if (ch == '\n' || ch == '\r') ch = ' ';
    return s;
}

int report_error(std::ostream& err, Exit e, std::string_view code, const std::string& message) {
    err << "opencil: error: " << category(e) << ": " << code << ": " << one_line(message) << '\n';
    return static_cast<int>(e);
}

SynthSpec load_synth_spec(const std::string& path) {
    std::ifstream in(path);
    require(in.good(), ErrorCode::FileNotFound, "cannot open synth spec '" + path + "'");
    try {
        nlohmann::json j;
        in >> j;
        SynthSpec s = j.get<SynthSpec>();
        s.validate();
        return s;
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorCode::Config, "synth spec '" + path + "': " + e.what());
    }
}

}  // namespace

int cli_main(int argc, char** argv) { return cli_main(argc, argv, std::cout, std::cerr); }

int cli_main(int argc, char** argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Open-world class-incremental OOD benchmark", "opencil"};
    app.require_subcommand(1);

    std::string config_path, out_dir, spec_path, in_path, format = "md", report_out;
    std::optional<std::uint64_t> seed_override;
    std::optional<unsigned> threads;

    auto* run = app.add_subcommand("run", "Run a benchmark from a JSON config");
    run->add_option("--config", config_path, "Run config (JSON)")->required();
    run->add_option("--seed-override", seed_override, "Replace the configured seeds with this one");
    run->add_option("--out", out_dir, "Output directory (default: the config's output_dir)");
    run->add_option("--threads", threads, "Parallel seed workers; falls back to OPENCIL_THREADS");

    auto* gen = app.add_subcommand("gen-synth", "Generate the synthetic benchmark");
    gen->add_option("--spec", spec_path, "Synth spec (JSON)")->required();
    gen->add_option("--out", out_dir, "Output directory")->required();

    auto* rep = app.add_subcommand("report", "Render a stored report");
    rep->add_option("--in", in_path, "report.json")->required();
    rep->add_option("--format", format, "md, csv or json")->check(CLI::IsMember({"md", "csv", "json"}));
    rep->add_option("--out", report_out, "Write to this file instead of stdout");

    auto* val = app.add_subcommand("validate-config", "Check a run config");
    val->add_option("--config", config_path, "Run config (JSON)")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        out << app.help();
        return 0;
    } catch (const CLI::CallForAllHelp& e) {
        out << app.help("", CLI::AppFormatMode::All);
        return 0;
    } catch (const CLI::ParseError& e) {
        return report_error(err, Exit::config, "Usage", e.what());
    }

    try {
        if (run->parsed()) {
            RunConfig cfg = load_run_config(config_path);
            if (seed_override) cfg.seeds = {*seed_override};
            if (!out_dir.empty()) cfg.output_dir = out_dir;
            const std::filesystem::path dir = cfg.output_dir;
            try {
                cfg.data = resolve_data(cfg);
            } catch (const Error& e) {
                return report_error(err, Exit::data, to_string(e.code()), e.what());
            }
            RunOptions opts;
            opts.threads = resolve_threads(threads);
            const BenchmarkReport report = run_benchmark(cfg, opts);
            emit_report(report, dir);
            out << "wrote " << (dir / "report.json").string() << '\n';
            if (!report.failures.empty()) {
                const auto& f = report.failures.front();
                return report_error(err, Exit::runtime, f.code,
                                    std::to_string(report.failures.size()) + " seed(s) failed; first: seed " +
                                        std::to_string(f.seed) + " step " + std::to_string(f.step) + ": " +
                                        f.message);
            }
        } else if (gen->parsed()) {
            const SynthSpec spec = load_synth_spec(spec_path);
            const auto manifest = write_synth(generate(spec), out_dir);
            out << "wrote " << manifest.string() << '\n';
        } else if (rep->parsed()) {
            const BenchmarkReport report = load_report(in_path);
            const std::string text = render_report(report, parse_report_format(format));
            if (report_out.empty()) {
                out << text;
            } else {
                std::ofstream f(report_out, std::ios::binary | std::ios::trunc);
                require(f.good(), ErrorCode::Io, "cannot write '" + report_out + "'");
                f << text;
            }
        } else if (val->parsed()) {
            const RunConfig cfg = load_run_config(config_path);
            out << "ok: " << to_string(cfg.cil.method) << " + " << to_string(cfg.ood) << ", "
                << cfg.seeds.size() << " seed(s)\n";
        }
    } catch (const Error& e) {
        return report_error(err, exit_for(e.code()), to_string(e.code()), e.what());
    } catch (const std::filesystem::filesystem_error& e) {
        return report_error(err, Exit::data, "Io", e.what());
    } catch (const std::exception& e) {
        return report_error(err, Exit::runtime, "Runtime", e.what());
    }
    return 0;
}

}  // namespace ocil
