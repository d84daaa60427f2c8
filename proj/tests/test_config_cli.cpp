#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <unistd.h>

#include "ctok/cli.hpp"
#include "ctok/config.hpp"
#include "ctok/errors.hpp"

using namespace ctok;
namespace fs = std::filesystem;

namespace {

struct Run {
    int code;
    std::string out, err;
};

Run cli(std::vector<std::string> args) {
    std::ostringstream out, err;
    const int code = run_cli(args, out, err);
    return {code, out.str(), err.str()};
}

fs::path temp_dir(const std::string& name) {
    const auto dir = fs::temp_directory_path() / ("ctok_cli_" + name + "_" + std::to_string(::getpid()));
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

std::string read_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const fs::path& p, const std::string& s) {
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    out << s;
}

std::size_t line_count(const fs::path& p) {
    const auto s = read_file(p);
    return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n'));
}

const std::vector<std::string> kSmallBench = {
    "--set", "benchmark.classes=apples,zebras,crows", "--set", "benchmark.counts=5,10",
    "--set", "optimizer.max_iterations=30"};

std::vector<std::string> concat(std::vector<std::string> a, const std::vector<std::string>& b) {
    a.insert(a.end(), b.begin(), b.end());
    return a;
}

}  // namespace

// ---------------------------------------------------------------------------
// Config
// ---------------------------------------------------------------------------

TEST_CASE("defaults") {
    const auto cfg = default_config();
    CHECK(cfg.generator.backend == "synthetic");
    CHECK(cfg.counting.scale_mode == ScaleMode::Dynamic);
    CHECK(cfg.optimizer.learning_rate == 0.05);
    CHECK(cfg.semantic.lambda == 5.0);
    CHECK(cfg.detector.conf_threshold == 0.3);
    CHECK_FALSE(cfg.benchmark.classes);
    const auto pipeline = BackendRegistry::instance().make_pipeline(cfg);
    CHECK(cfg.optimizer_config(pipeline).static_scale == pipeline.potential->natural_scale());
}

TEST_CASE("config file values") {
    const auto cfg = parse_config(
        "[counting]\nscale_mode = static\nstatic_scale = 60\nloss_norm = l2\n"
        "[optimizer]\nlearning_rate = 0.1\nmax_iterations = 12\nascent = true\n"
        "[semantic]\nlambda = 0\n"
        "[benchmark]\nclasses = apples, sea shells\ncounts = 1-3\ntemplate = {N} {c}\n");
    CHECK(cfg.counting.scale_mode == ScaleMode::Static);
    CHECK(cfg.counting.static_scale == 60.0);
    CHECK(cfg.counting.loss_norm == LossNorm::L2);
    CHECK(cfg.optimizer.learning_rate == 0.1);
    CHECK(cfg.optimizer.max_iterations == 12);
    CHECK(cfg.optimizer.ascent);
    CHECK(cfg.semantic.lambda == 0.0);
    const auto spec = cfg.benchmark_spec();
    CHECK(spec.classes == std::vector<std::string>{"apples", "sea shells"});
    CHECK(spec.counts == std::vector<int>{1, 2, 3});
    CHECK(spec.prompt_template == "{N} {c}");
    const auto ocfg = cfg.optimizer_config(BackendRegistry::instance().make_pipeline(cfg));
    CHECK(ocfg.static_scale == 60.0);
    CHECK(ocfg.lambda_semantic == 0.0);
}

TEST_CASE("overrides apply after the file") {
    const auto cfg = parse_config("[optimizer]\nlearning_rate = 0.1\n", {"optimizer.learning_rate=0.2", "semantic.lambda=1"});
    CHECK(cfg.optimizer.learning_rate == 0.2);
    CHECK(cfg.semantic.lambda == 1.0);
}

TEST_CASE("config errors name the line") {
    try {
        parse_config("[optimizer]\nlearning_rate = fast\n", {}, "run.ini");
        FAIL("expected ConfigError");
    } catch (const ConfigError& ex) {
        const std::string msg = ex.what();
        CHECK(msg.find("run.ini:2") != std::string::npos);
        CHECK(msg.find("optimizer.learning_rate") != std::string::npos);
    }
    try {
        parse_config("[optimizer]\n\nwarmup = 3\n", {}, "run.ini");
        FAIL("expected ConfigError");
    } catch (const ConfigError& ex) {
        CHECK(std::string(ex.what()).find("run.ini:3") != std::string::npos);
    }
}

TEST_CASE("override errors name the override") {
    try {
        parse_config("", {"optimizer.max_iterations=0"});
        FAIL("expected ConfigError");
    } catch (const ConfigError& ex) {
        CHECK(std::string(ex.what()).find("--set optimizer.max_iterations") != std::string::npos);
    }
    CHECK_THROWS_AS(parse_config("", {"no_equals_sign"}), ConfigError);
    CHECK_THROWS_AS(parse_config("", {"nosection.key=1"}), ConfigError);
}

TEST_CASE("invalid values are rejected") {
    CHECK_THROWS_AS(parse_config("[counting]\nscale_mode = adaptive\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("[counting]\nstatic_scale = -1\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("[detector]\nconf_threshold = 1.5\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("[semantic]\nlambda = -2\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("[benchmark]\ncounts = 9-2\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("[weather]\nrain = 1\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("[optimizer\nx=1\n"), ConfigError);
}

TEST_CASE("backend options pass through and unknown backends are named") {
    const auto cfg = parse_config("[generator]\noption.guidance_scale = 7.5\n");
    CHECK(cfg.generator.options.at("guidance_scale") == "7.5");
    CHECK_THROWS_AS(BackendRegistry::instance().make_pipeline(cfg), ConfigError);

    const auto adapter = parse_config("[generator]\nbackend = adapter:sdxl-turbo\n");
    try {
        BackendRegistry::instance().make_pipeline(adapter);
        FAIL("expected ConfigError");
    } catch (const ConfigError& ex) {
        const std::string msg = ex.what();
        CHECK(msg.find("adapter:sdxl-turbo") != std::string::npos);
        CHECK(msg.find("synthetic") != std::string::npos);
    }
}

TEST_CASE("classes_file resolves against the config directory") {
    const auto dir = temp_dir("classes_file");
    write_file(dir / "mine.txt", "beads\nkeys\n");
    write_file(dir / "run.ini", "[benchmark]\nclasses_file = mine.txt\n");
    CHECK(load_config(dir / "run.ini").benchmark_spec().classes == std::vector<std::string>{"beads", "keys"});
    CHECK_THROWS_AS(load_config(dir / "nope.ini"), ConfigError);
    fs::remove_all(dir);
}

// ---------------------------------------------------------------------------
// CLI
// ---------------------------------------------------------------------------

TEST_CASE("optimize writes trace, images and token") {
    const auto dir = temp_dir("optimize");
    const auto r = cli({"--out", dir.string(), "--seed", "3", "optimize", "--class", "blobs", "--count", "5"});
    CHECK(r.code == kExitOk);
    const auto run = dir / "runs" / "blobs-N5-seed3";
    REQUIRE(fs::exists(run / "token"));
    CHECK(fs::exists(run / "trace.jsonl"));
    const auto token = load_token(run / "token");
    CHECK(line_count(run / "trace.jsonl") == static_cast<std::size_t>(token.iterations_used));
    CHECK(fs::exists(run / "images" / "iter_0.ppm"));
    CHECK(r.out.find("status: converged") != std::string::npos);
    CHECK(r.out.find(run.string()) != std::string::npos);
    fs::remove_all(dir);
}

TEST_CASE("optimize reports non-convergence with exit code 2") {
    const auto dir = temp_dir("noconv");
    const auto r = cli({"--out", dir.string(), "--set", "optimizer.max_iterations=1", "--set", "optimizer.stop_threshold=0",
                        "--set", "counting.scale_mode=static", "optimize", "--class", "blobs", "--count", "20",
                        "--no-images"});
    CHECK(r.code == kExitNotConverged);
    CHECK(fs::exists(dir / "runs" / "blobs-N20-seed0" / "token"));
    CHECK_FALSE(fs::exists(dir / "runs" / "blobs-N20-seed0" / "images" / "iter_0.ppm"));
    fs::remove_all(dir);
}

TEST_CASE("bad input exits 1 without creating a run") {
    const auto dir = temp_dir("badinput");
    write_file(dir / "bad.ini", "[optimizer]\nlearning_rate = fast\n");
    auto r = cli({"--out", (dir / "out").string(), "--config", (dir / "bad.ini").string(), "optimize", "--class",
                  "blobs", "--count", "5"});
    CHECK(r.code == kExitUsage);
    CHECK(r.err.find("bad.ini:2") != std::string::npos);
    CHECK_FALSE(fs::exists(dir / "out"));

    r = cli({"--out", (dir / "out").string(), "optimize", "--class", "blobs", "--count", "0"});
    CHECK(r.code == kExitUsage);
    CHECK_FALSE(fs::exists(dir / "out"));

    r = cli({"--out", (dir / "out").string(), "--set", "optimizer.warmup=3", "optimize", "--class", "a", "--count", "2"});
    CHECK(r.code == kExitUsage);

    r = cli({"--out", (dir / "out").string(), "--set", "generator.backend=adapter:sdxl", "optimize", "--class", "a",
             "--count", "2"});
    CHECK(r.code == kExitUsage);
    CHECK(r.err.find("not registered") != std::string::npos);

    CHECK(cli({"optimize", "--class", "a"}).code == kExitUsage);
    CHECK(cli({"frobnicate"}).code == kExitUsage);
    CHECK(cli({}).code == kExitUsage);
    fs::remove_all(dir);
}

TEST_CASE("generate with a saved token") {
    const auto dir = temp_dir("generate");
    REQUIRE(cli({"--out", dir.string(), "optimize", "--class", "apples", "--count", "6", "--no-images"}).code ==
            kExitOk);
    const auto token = (dir / "runs" / "apples-N6-seed0" / "token").string();

    auto r = cli({"--out", dir.string(), "--seed", "4", "generate", "--token", token, "--class", "oranges", "--count", "6"});
    CHECK(r.code == kExitOk);
    CHECK(r.out.find("detector count: ") != std::string::npos);
    const auto image = dir / "generated" / "oranges-N6-seed4.ppm";
    REQUIRE(fs::exists(image));
    const auto first = read_file(image);
    CHECK(cli({"--out", dir.string(), "--seed", "4", "generate", "--token", token, "--class", "oranges", "--count", "6"})
              .code == kExitOk);
    CHECK(read_file(image) == first);
    fs::remove_all(dir);
}

TEST_CASE("generate reports token problems with exit code 3") {
    const auto dir = temp_dir("badtoken");
    auto r = cli({"--out", dir.string(), "generate", "--token", (dir / "missing").string(), "--class", "a", "--count", "2"});
    CHECK(r.code == kExitToken);
    CHECK(r.err.find((dir / "missing").string()) != std::string::npos);

    write_file(dir / "garbage", "CTOK\x01\x00\x00\x00 not really a token");
    r = cli({"--out", dir.string(), "generate", "--token", (dir / "garbage").string(), "--class", "a", "--count", "2"});
    CHECK(r.code == kExitToken);

    TokenRecord small;
    small.embedding = TokenEmbedding(8);
    small.class_name = "apples";
    small.target_count = 3;
    save_token(small, dir / "small");
    r = cli({"--out", dir.string(), "generate", "--token", (dir / "small").string(), "--class", "a", "--count", "2"});
    CHECK(r.code == kExitToken);
    CHECK(r.err.find("dimension") != std::string::npos);
    fs::remove_all(dir);
}

TEST_CASE("evaluate writes a deterministic report") {
    const auto dir = temp_dir("evaluate");
    const auto a = dir / "a", b = dir / "b";
    auto r = cli(concat({"--out", a.string()}, concat(kSmallBench, {"evaluate"})));
    CHECK(r.code == kExitOk);
    CHECK(cli(concat({"--out", b.string()}, concat(kSmallBench, {"evaluate"}))).code == kExitOk);
    REQUIRE(fs::exists(a / "report.json"));
    CHECK(read_file(a / "report.json") == read_file(b / "report.json"));
    const auto j = nlohmann::json::parse(read_file(a / "report.json"));
    CHECK(j.at("rmse").get<double>() >= j.at("mae").get<double>());
    CHECK(j.at("n_samples").get<int>() == 6);
    CHECK(line_count(a / "per_class.csv") == 7);
    CHECK(fs::exists(a / "mae_vs_n.svg"));
    CHECK(r.out.find("CLIP-S") != std::string::npos);

    const auto base = cli(concat({"--out", (dir / "base").string()}, concat(kSmallBench, {"evaluate", "--baseline"})));
    CHECK(base.code == kExitOk);
    const auto jb = nlohmann::json::parse(read_file(dir / "base" / "report.json"));
    CHECK(j.at("mae").get<double>() < jb.at("mae").get<double>());
    fs::remove_all(dir);
}

TEST_CASE("evaluate with an empty class list fails") {
    const auto dir = temp_dir("emptyclasses");
    const auto r = cli({"--out", dir.string(), "--set", "benchmark.classes=", "evaluate"});
    CHECK(r.code == kExitUsage);
    CHECK_FALSE(fs::exists(dir / "report.json"));
    fs::remove_all(dir);
}

TEST_CASE("ablate over lambda") {
    const auto dir = temp_dir("ablate");
    auto r = cli(concat({"--out", dir.string()}, concat(kSmallBench, {"ablate", "--param", "lambda", "--grid", "0,1,5,10"})));
    CHECK(r.code == kExitOk);
    REQUIRE(fs::exists(dir / "ablation_lambda.csv"));
    CHECK(line_count(dir / "ablation_lambda.csv") == 6);  // header, four values, baseline
    CHECK(fs::exists(dir / "ablation_lambda.svg"));

    // A single-value grid reproduces evaluate at that setting.
    const auto one = dir / "one";
    CHECK(cli(concat({"--out", one.string()}, concat(kSmallBench, {"ablate", "--param", "lambda", "--grid", "5"}))).code ==
          kExitOk);
    CHECK(cli(concat({"--out", one.string()}, concat(kSmallBench, {"evaluate"}))).code == kExitOk);
    std::ifstream csv(one / "ablation_lambda.csv");
    std::string header, row;
    std::getline(csv, header);
    std::getline(csv, row);
    const double csv_mae = std::stod(row.substr(row.find(',') + 1));
    const auto j = nlohmann::json::parse(read_file(one / "report.json"));
    CHECK(csv_mae == doctest::Approx(j.at("mae").get<double>()).epsilon(1e-5));

    r = cli(concat({"--out", dir.string()}, concat(kSmallBench, {"ablate", "--param", "optimizer", "--grid", "1"})));
    CHECK(r.code == kExitUsage);
    CHECK(r.err.find("lambda") != std::string::npos);
    CHECK(cli({"--out", dir.string(), "ablate", "--param", "lambda", "--grid", "a,b"}).code == kExitUsage);
    fs::remove_all(dir);
}

TEST_CASE("commands write nothing outside the output directory") {
    const auto dir = temp_dir("sandbox");
    const auto cwd = fs::current_path();
    fs::current_path(dir);
    const auto r = cli({"--out", "out", "optimize", "--class", "blobs", "--count", "4", "--no-images"});
    fs::current_path(cwd);
    CHECK(r.code == kExitOk);
    std::vector<std::string> entries;
    for (const auto& e : fs::directory_iterator(dir)) entries.push_back(e.path().filename().string());
    CHECK(entries == std::vector<std::string>{"out"});
    fs::remove_all(dir);
}

TEST_CASE("help exits 0") {
    const auto r = cli({"--help"});
    CHECK(r.code == kExitOk);
    CHECK(r.out.find("optimize") != std::string::npos);
}
