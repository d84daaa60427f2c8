#include "ctok/cli.hpp"

#include <CLI11.hpp>
#include <boost/algorithm/string.hpp>

#include <algorithm>
#include <cctype>
#include <filesystem>
#include <optional>

#include "ctok/benchmark.hpp"
#include "ctok/config.hpp"
#include "ctok/errors.hpp"

#ifndef CTOK_DATA_DIR
#define CTOK_DATA_DIR "data"
#endif

namespace ctok {

namespace fs = std::filesystem;

namespace {

struct CommonArgs {
    std::string config_path;
    std::string out_dir = "out";
    std::optional<std::uint64_t> seed;
    std::vector<std::string> overrides;
};

RunConfig read_config(const CommonArgs& a) {
    return a.config_path.empty() ? default_config(a.overrides) : load_config(a.config_path, a.overrides);
}

std::string slug(const std::string& s) {
    std::string out;
    for (unsigned char c : s) out += std::isalnum(c) ? static_cast<char>(std::tolower(c)) : '_';
    return out;
}

BenchmarkSpec resolve_benchmark(const RunConfig& cfg) {
    auto spec = cfg.benchmark_spec();
    if (!cfg.benchmark.classes && cfg.benchmark.classes_file.empty()) {
        spec.classes = load_class_list(fs::path(CTOK_DATA_DIR) / "fsc147_classes.txt");
    }
    return spec;
}

int cmd_optimize(const CommonArgs& a, const std::string& cls, int n, bool images, std::ostream& out) {
    auto cfg = read_config(a);
    if (a.seed) cfg.optimizer.seed = *a.seed;
    const PromptSpec spec{cls, n};
    if (auto e = validate(spec)) throw InvalidInput(*e);

    const auto pipeline = BackendRegistry::instance().make_pipeline(cfg);
    const auto ocfg = cfg.optimizer_config(pipeline);
    if (auto e = validate(ocfg)) throw InvalidInput(*e);

    const fs::path run_dir =
        fs::path(a.out_dir) / "runs" / (slug(cls) + "-N" + std::to_string(n) + "-seed" + std::to_string(ocfg.seed));
    fs::remove_all(run_dir);
    fs::create_directories(run_dir / "images");

    IterationObserver observer;
    if (images) {
        observer = [&](const IterationRecord& rec, const ImageTensor& img) { write_ppm(img, run_dir / rec.image_ref); };
    }
    const auto res = optimize(pipeline, spec, ocfg, observer);
    write_trace(res.trace, run_dir / "trace.jsonl");
    save_token(res.token, run_dir / "token");

    out << "final counting error: " << res.token.final_counting_error << '\n'
        << "iterations: " << res.token.iterations_used << '\n'
        << "status: " << to_string(res.status) << '\n'
        << "run directory: " << run_dir.string() << '\n';
    if (!res.diagnostic.empty()) out << "diagnostic: " << res.diagnostic << '\n';
    return res.status == OptimizationStatus::Converged ? kExitOk : kExitNotConverged;
}

int cmd_generate(const CommonArgs& a, const std::string& token_path, const std::string& cls, int n, std::ostream& out,
                 std::ostream& err) {
    auto cfg = read_config(a);
    const PromptSpec spec{cls, n};
    if (auto e = validate(spec)) throw InvalidInput(*e);
    if (!fs::exists(token_path)) {
        err << "error: token file not found: " << token_path << '\n';
        return kExitToken;
    }
    TokenRecord token;
    try {
        token = load_token(token_path);
    } catch (const Error& ex) {
        err << "error: " << token_path << ": " << ex.what() << '\n';
        return kExitToken;
    }
    const auto pipeline = BackendRegistry::instance().make_pipeline(cfg);
    const std::uint64_t seed = a.seed.value_or(cfg.optimizer.seed);
    ImageTensor image;
    try {
        image = reuse_token(pipeline, token, spec, seed);
    } catch (const IncompatibleToken& ex) {
        err << "error: " << token_path << ": " << ex.what() << '\n';
        return kExitToken;
    }
    const fs::path dir = fs::path(a.out_dir) / "generated";
    fs::create_directories(dir);
    const fs::path file = dir / (slug(cls) + "-N" + std::to_string(n) + "-seed" + std::to_string(seed) + ".ppm");
    write_ppm(image, file);
    const auto count = detection_count(pipeline.detector->detect(image, cls, cfg.detector.conf_threshold));
    out << "detector count: " << count << '\n' << "image: " << file.string() << '\n';
    return kExitOk;
}

int cmd_evaluate(const CommonArgs& a, bool baseline, std::ostream& out) {
    auto cfg = read_config(a);
    if (a.seed) cfg.benchmark.seed = *a.seed;
    const auto spec = resolve_benchmark(cfg);
    const auto cells = build_benchmark(spec);

    const auto pipeline = BackendRegistry::instance().make_pipeline(cfg);
    const auto ocfg = cfg.optimizer_config(pipeline);
    if (auto e = validate(ocfg)) throw InvalidInput(*e);

    RunOptions opts{baseline ? RunMode::Baseline : RunMode::Optimize, cfg.benchmark.workers,
                    cfg.metrics.clip_s_weight};
    const auto results = run_benchmark(pipeline, cells, ocfg, opts);
    const auto report = evaluate_run(results);

    const fs::path dir(a.out_dir);
    fs::create_directories(dir);
    write_report_json(report, dir / "report.json");
    write_per_class_csv(results, dir / "per_class.csv");
    write_mae_vs_n_svg(results, dir / "mae_vs_n.svg");

    if (cells.size() == 3675) out << "note: full grid of 3675 cells evaluated; no cell is dropped\n";
    out << "samples: " << report.n_samples << '\n'
        << "MAE: " << report.overall.mae << '\n'
        << "RMSE: " << report.overall.rmse << '\n'
        << "CLIP-S: " << 100.0 * report.clip_s_mean << '\n';
    return kExitOk;
}

int cmd_ablate(const CommonArgs& a, const std::string& param_name, const std::string& grid_text, std::ostream& out) {
    const auto param = parse_ablation_param(param_name);
    std::vector<double> grid;
    std::vector<std::string> parts;
    boost::split(parts, grid_text, boost::is_any_of(","));
    for (auto& p : parts) {
        boost::trim(p);
        if (p.empty()) continue;
        std::size_t used = 0;
        double v = 0.0;
        try {
            v = std::stod(p, &used);
        } catch (const std::exception&) {
        }
        if (used == 0 || used != p.size()) throw InvalidInput("invalid grid value '" + p + "'");
        grid.push_back(v);
    }
    if (grid.empty()) throw InvalidInput("ablation grid is empty");

    auto cfg = read_config(a);
    if (a.seed) cfg.benchmark.seed = *a.seed;
    const auto cells = build_benchmark(resolve_benchmark(cfg));
    const auto pipeline = BackendRegistry::instance().make_pipeline(cfg);
    const auto ocfg = cfg.optimizer_config(pipeline);
    if (auto e = validate(ocfg)) throw InvalidInput(*e);

    RunOptions opts{RunMode::Optimize, cfg.benchmark.workers, cfg.metrics.clip_s_weight};
    const auto rows = ablation_sweep(pipeline, param, grid, cells, ocfg, opts);

    const fs::path dir(a.out_dir);
    fs::create_directories(dir);
    const std::string stem = std::string("ablation_") + to_string(param);
    write_ablation_csv(param, rows, dir / (stem + ".csv"));
    write_ablation_svg(param, rows, dir / (stem + ".svg"));

    out << to_string(param) << "\tMAE\tRMSE\tCLIP-S\n";
    for (const auto& r : rows) {
        out << r.label << '\t' << r.report.overall.mae << '\t' << r.report.overall.rmse << '\t'
            << 100.0 * r.report.clip_s_mean << '\n';
    }
    return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Counting-token optimization and benchmark tool", "ctok"};
    app.require_subcommand(1);
    app.fallthrough();

    CommonArgs common;
    std::uint64_t seed = 0;
    app.add_option("--config", common.config_path, "INI config file")->check(CLI::ExistingFile);
    app.add_option("--out", common.out_dir, "Output directory")->capture_default_str();
    auto* seed_opt = app.add_option("--seed", seed, "Seed override");
    app.add_option("--set", common.overrides, "Config override section.key=value (repeatable)");

    std::string cls, token_path, param, grid;
    int n = 0;
    bool no_images = false, baseline = false;

    auto* opt = app.add_subcommand("optimize", "Optimize a counting token for one class and count");
    opt->add_option("--class", cls, "Class name")->required();
    opt->add_option("--count", n, "Target count N")->required();
    opt->add_flag("--no-images", no_images, "Skip per-iteration image files");

    auto* gen = app.add_subcommand("generate", "Generate one image with a saved token");
    gen->add_option("--token", token_path, "Token file")->required();
    gen->add_option("--class", cls, "Class name")->required();
    gen->add_option("--count", n, "Target count N")->required();

    auto* ev = app.add_subcommand("evaluate", "Run the benchmark and write report.json and per_class.csv");
    ev->add_flag("--baseline", baseline, "Measure prompts without a counting token");

    auto* ab = app.add_subcommand("ablate", "Sweep one parameter over the benchmark");
    ab->add_option("--param", param, "lambda, learning_rate or conf_threshold")->required();
    ab->add_option("--grid", grid, "Comma-separated values")->required();

    std::vector<std::string> argv(args.rbegin(), args.rend());
    try {
        app.parse(argv);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kExitOk;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return kExitOk;
    } catch (const CLI::ParseError& ex) {
        err << "error: " << ex.what() << '\n';
        return kExitUsage;
    }
    if (seed_opt->count() > 0) common.seed = seed;

    try {
        if (opt->parsed()) return cmd_optimize(common, cls, n, !no_images, out);
        if (gen->parsed()) return cmd_generate(common, token_path, cls, n, out, err);
        if (ev->parsed()) return cmd_evaluate(common, baseline, out);
        if (ab->parsed()) return cmd_ablate(common, param, grid, out);
    } catch (const ConfigError& ex) {
        err << "config error: " << ex.what() << '\n';
        return kExitUsage;
    } catch (const InvalidInput& ex) {
        err << "error: " << ex.what() << '\n';
        return kExitUsage;
    } catch (const IncompatibleToken& ex) {
        err << "error: " << ex.what() << '\n';
        return kExitToken;
    } catch (const std::exception& ex) {
        err << "error: " << ex.what() << '\n';
        return kExitUsage;
    }
    return kExitUsage;
}

}  // namespace ctok
