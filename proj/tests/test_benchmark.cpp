#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include <unistd.h>

#include "ctok/benchmark.hpp"
#include "ctok/errors.hpp"
#include "ctok/rng.hpp"

using namespace ctok;
namespace fs = std::filesystem;

namespace {

const Pipeline& synthetic() {
    static const Pipeline p = Pipeline::synthetic();
    return p;
}

CellResult result(const std::string& cls, int n, double measured, std::uint64_t seed = 0) {
    CellResult r;
    r.spec = {cls, n};
    r.seed = seed;
    r.measured = measured;
    r.measured_potential = measured + 0.5;
    r.clip_s = 2.0;
    r.cosine = 0.8;
    return r;
}

std::string read_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

fs::path temp_dir(const std::string& name) {
    const auto dir = fs::temp_directory_path() / ("ctok_bench_" + name + "_" + std::to_string(::getpid()));
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

BenchmarkSpec small_spec() {
    BenchmarkSpec s;
    s.classes = {"apples", "zebras", "crows"};
    s.counts = {5, 10};
    return s;
}

OptimizerConfig fast_config() {
    OptimizerConfig cfg;
    cfg.max_iterations = 40;
    return cfg;
}

}  // namespace

TEST_CASE("full class list times 25 counts gives 3675 cells") {
    const auto classes = load_class_list(fs::path(CTOK_DATA_DIR) / "fsc147_classes.txt");
    CHECK(classes.size() == 147);
    BenchmarkSpec spec;
    spec.classes = classes;
    spec.counts = parse_counts("1-25");
    const auto cells = build_benchmark(spec);
    CHECK(cells.size() == 3675);
    CHECK(cells.front().spec.text() == "A photo of 1 " + classes.front());
    CHECK(cells.back().spec.target_count == 25);
}

TEST_CASE("benchmark cell examples") {
    BenchmarkSpec spec;
    spec.classes = {"apples", "oranges", "crows"};
    spec.counts = {10};
    const auto cells = build_benchmark(spec);
    REQUIRE(cells.size() == 3);
    CHECK(cells[0].spec.text() == "A photo of 10 apples");
    CHECK(cells[2].spec.class_name == "crows");
}

TEST_CASE("cells are class-major with consecutive seeds") {
    BenchmarkSpec spec;
    spec.classes = {"a", "b"};
    spec.counts = {3, 7};
    spec.samples_per_cell = 2;
    spec.base_seed = 100;
    const auto cells = build_benchmark(spec);
    REQUIRE(cells.size() == 8);
    for (std::size_t i = 0; i < cells.size(); ++i) CHECK(cells[i].seed == 100 + i);
    CHECK(cells[0].spec.class_name == "a");
    CHECK(cells[3].spec.target_count == 7);
    CHECK(cells[4].spec.class_name == "b");
    CHECK(build_benchmark(spec) == cells);
}

TEST_CASE("cell count is the product of class and count list sizes") {
    Sampler s(1);
    for (int trial = 0; trial < 50; ++trial) {
        BenchmarkSpec spec;
        const int nc = 1 + static_cast<int>(s.next() % 6), nn = 1 + static_cast<int>(s.next() % 9);
        for (int i = 0; i < nc; ++i) spec.classes.push_back("c" + std::to_string(i));
        for (int i = 0; i < nn; ++i) spec.counts.push_back(1 + i);
        spec.samples_per_cell = 1 + static_cast<int>(s.next() % 4);
        CHECK(build_benchmark(spec).size() == static_cast<std::size_t>(nc * nn * spec.samples_per_cell));
    }
}

TEST_CASE("empty specs are rejected") {
    BenchmarkSpec spec;
    spec.counts = {1};
    CHECK_THROWS_AS(build_benchmark(spec), InvalidInput);
    spec.classes = {"a"};
    spec.counts.clear();
    CHECK_THROWS_AS(build_benchmark(spec), InvalidInput);
    spec.counts = {0};
    CHECK_THROWS_AS(build_benchmark(spec), InvalidInput);
}

TEST_CASE("count list parsing") {
    CHECK(parse_counts("1-3") == std::vector<int>{1, 2, 3});
    CHECK(parse_counts("5, 10,15") == std::vector<int>{5, 10, 15});
    CHECK(parse_counts("1-2,9") == std::vector<int>{1, 2, 9});
    CHECK(parse_counts("1-25").size() == 25);
    CHECK_THROWS_AS(parse_counts("5-1"), InvalidInput);
    CHECK_THROWS_AS(parse_counts("ten"), InvalidInput);
}

TEST_CASE("metric examples") {
    const std::vector<double> pred{12, 8}, target{10, 10};
    CHECK(mae(pred, target) == 2.0);
    const std::vector<double> p2{3, 4}, t2{0, 0};
    CHECK(rmse(p2, t2) == std::sqrt(12.5));
    const std::vector<double> exact{4, 5, 6};
    CHECK(mae(exact, exact) == 0.0);
    CHECK(rmse(exact, exact) == 0.0);
}

TEST_CASE("metrics reject mismatched or empty inputs") {
    const std::vector<double> a{1, 2}, b{1};
    CHECK_THROWS_AS(mae(a, b), InvalidInput);
    CHECK_THROWS_AS(rmse(a, b), InvalidInput);
    const std::vector<double> none;
    CHECK_THROWS_AS(mae(none, none), InvalidInput);
}

TEST_CASE("rmse is at least mae and equal for constant error") {
    Sampler s(2);
    for (int trial = 0; trial < 1000; ++trial) {
        const int n = 1 + static_cast<int>(s.next() % 30);
        std::vector<double> p(n), t(n);
        for (int i = 0; i < n; ++i) {
            p[i] = s.uniform(0, 30);
            t[i] = s.uniform(0, 30);
        }
        CHECK(rmse(p, t) >= mae(p, t) * (1.0 - 1e-12));
    }
    const std::vector<double> p{3, 8, 13}, t{1, 6, 11};
    CHECK(rmse(p, t) == doctest::Approx(mae(p, t)));
}

TEST_CASE("bucket boundaries") {
    CHECK(bucket_of(1) == Bucket::Low);
    CHECK(bucket_of(5) == Bucket::Low);
    CHECK(bucket_of(6) == Bucket::Medium);
    CHECK(bucket_of(15) == Bucket::Medium);
    CHECK(bucket_of(16) == Bucket::Large);
    CHECK(bucket_of(25) == Bucket::Large);
    CHECK(std::string(to_string(Bucket::Medium)) == "medium");
}

TEST_CASE("exact results give a zero report") {
    std::vector<CellResult> rs;
    for (int n : {1, 5, 10, 20}) rs.push_back(result("apples", n, n));
    const auto rep = evaluate_run(rs);
    CHECK(rep.overall.mae == 0.0);
    CHECK(rep.overall.rmse == 0.0);
    for (const auto& [k, s] : rep.per_bucket) CHECK(s.mae == 0.0);
    CHECK(rep.n_samples == 4);
    CHECK(rep.clip_s_mean == doctest::Approx(2.0));
    REQUIRE(rep.overall_potential);
    CHECK(rep.overall_potential->mae == doctest::Approx(0.5));
}

TEST_CASE("per-bucket errors") {
    std::vector<CellResult> rs{result("a", 3, 4), result("a", 10, 12), result("b", 20, 23)};
    const auto rep = evaluate_run(rs);
    CHECK(rep.per_bucket.at("low").mae == 1.0);
    CHECK(rep.per_bucket.at("medium").mae == 2.0);
    CHECK(rep.per_bucket.at("large").mae == 3.0);
    CHECK(rep.per_class.at("a").mae == 1.5);
    CHECK(rep.per_class.at("b").n == 1);
    CHECK(rep.overall.mae == 2.0);
    CHECK_FALSE(validate(rep));
}

TEST_CASE("report is independent of result order") {
    Sampler s(3);
    std::vector<CellResult> rs;
    for (int i = 0; i < 60; ++i) {
        auto r = result("c" + std::to_string(i % 7), 1 + static_cast<int>(s.next() % 25), std::floor(s.uniform(0, 30)), i);
        r.clip_s = s.uniform(0, 2.5);
        r.cosine = s.uniform(-1, 1);
        rs.push_back(r);
    }
    const auto base = evaluate_run(rs);
    std::mt19937_64 rng(4);
    for (int trial = 0; trial < 20; ++trial) {
        std::shuffle(rs.begin(), rs.end(), rng);
        const auto rep = evaluate_run(rs);
        CHECK(rep.overall.mae == base.overall.mae);
        CHECK(rep.overall.rmse == base.overall.rmse);
        CHECK(rep.clip_s_mean == base.clip_s_mean);
        for (const auto& [k, v] : base.per_bucket) CHECK(rep.per_bucket.at(k).rmse == v.rmse);
        for (const auto& [k, v] : base.per_class) CHECK(rep.per_class.at(k).mae == v.mae);
    }
    CHECK_FALSE(validate(base));
}

TEST_CASE("failed runs are counted") {
    auto r = result("a", 3, 3);
    r.status = OptimizationStatus::Failed;
    CHECK(evaluate_run({r, result("a", 4, 4)}).failed_runs == 1);
    CHECK_THROWS_AS(evaluate_run({}), InvalidInput);
}

TEST_CASE("report validation") {
    BenchmarkReport rep;
    rep.overall = {2.0, 1.0, 3};
    CHECK(validate(rep));
}

TEST_CASE("optimized cells beat the baseline") {
    const auto cells = build_benchmark(small_spec());
    const auto opt = run_benchmark(synthetic(), cells, fast_config(), {RunMode::Optimize, 2});
    const auto base = run_benchmark(synthetic(), cells, fast_config(), {RunMode::Baseline, 2});
    const auto ro = evaluate_run(opt), rb = evaluate_run(base);
    CHECK(ro.overall.mae < rb.overall.mae);
    for (const auto& r : opt) {
        CHECK(r.oracle.has_value());
        CHECK(r.iterations >= 1);
        CHECK(r.clip_s >= 0.0);
        CHECK(r.clip_s <= kDefaultClipSWeight);
    }
    for (const auto& r : base) CHECK(r.iterations == 0);
}

TEST_CASE("worker count does not change results") {
    const auto cells = build_benchmark(small_spec());
    const auto one = run_benchmark(synthetic(), cells, fast_config(), {RunMode::Optimize, 1});
    const auto four = run_benchmark(synthetic(), cells, fast_config(), {RunMode::Optimize, 4});
    REQUIRE(one.size() == four.size());
    for (std::size_t i = 0; i < one.size(); ++i) {
        CHECK(one[i].measured == four[i].measured);
        CHECK(one[i].cosine == four[i].cosine);
        CHECK(one[i].iterations == four[i].iterations);
    }
}

TEST_CASE("reused tokens: same group beats other groups, both beat no token") {
    const std::vector<std::vector<std::string>> groups{
        {"apples", "strawberries", "tomatoes", "oranges"}, {"crows", "pigeons", "seagulls"}, {"zebras", "horses", "cows"}};
    std::vector<std::uint64_t> seeds;
    for (std::uint64_t s = 0; s < 10; ++s) seeds.push_back(s);
    OptimizerConfig cfg;
    cfg.max_iterations = 100;
    const auto res = reuse_eval(synthetic(), groups, 10, cfg, seeds, CountSource::Detector, 4);
    CHECK(res.in_domain_per_seed.size() == 10);
    CHECK(res.in_domain_mae <= res.out_domain_mae);
    CHECK(res.out_domain_mae <= res.baseline_mae);
    CHECK(res.excluded == 0);
}

TEST_CASE("reuse evaluation argument checks") {
    OptimizerConfig cfg;
    CHECK_THROWS_AS(reuse_eval(synthetic(), {{"a", "b"}}, 5, cfg, {0}), InvalidInput);
    CHECK_THROWS_AS(reuse_eval(synthetic(), {{"a", "b"}, {"c"}}, 5, cfg, {0}), InvalidInput);
    CHECK_THROWS_AS(reuse_eval(synthetic(), {{"a", "b"}, {"c", "d"}}, 5, cfg, {}), InvalidInput);
    CHECK_THROWS_AS(reuse_eval(synthetic(), {{"a", "b"}, {"c", "d"}}, 0, cfg, {0}), InvalidInput);
}

TEST_CASE("single-value ablation row equals a direct evaluation") {
    const auto cells = build_benchmark(small_spec());
    auto cfg = fast_config();
    const auto rows = ablation_sweep(synthetic(), AblationParam::Lambda, {2.0}, cells, cfg);
    REQUIRE(rows.size() == 2);
    CHECK(rows[0].label == "2");
    CHECK(rows[1].label == "baseline");
    cfg.lambda_semantic = 2.0;
    const auto direct = evaluate_run(run_benchmark(synthetic(), cells, cfg));
    CHECK(rows[0].report.overall.mae == direct.overall.mae);
    CHECK(rows[0].report.overall.rmse == direct.overall.rmse);
    CHECK(rows[0].report.clip_s_mean == direct.clip_s_mean);
}

TEST_CASE("semantic weight does not lower the semantic score") {
    BenchmarkSpec spec;
    spec.classes = {"apples", "zebras", "crows", "oranges"};
    spec.counts = {5, 10, 15};
    const auto cells = build_benchmark(spec);
    const auto rows = ablation_sweep(synthetic(), AblationParam::Lambda, {0.0, 5.0}, cells, fast_config(), {RunMode::Optimize, 4});
    REQUIRE(rows.size() == 3);
    CHECK(rows[0].cosine_mean <= rows[1].cosine_mean);
    CHECK(rows[0].report.clip_s_mean <= rows[1].report.clip_s_mean);
}

TEST_CASE("ablation argument checks") {
    const auto cells = build_benchmark(small_spec());
    CHECK_THROWS_AS(ablation_sweep(synthetic(), AblationParam::Lambda, {}, cells, fast_config()), InvalidInput);
    CHECK_THROWS_AS(ablation_sweep(synthetic(), AblationParam::LearningRate, {-1.0}, cells, fast_config()), InvalidInput);
    CHECK(parse_ablation_param("conf_threshold") == AblationParam::ConfThreshold);
    try {
        parse_ablation_param("optimizer");
        FAIL("expected InvalidInput");
    } catch (const InvalidInput& ex) {
        CHECK(std::string(ex.what()).find("lambda") != std::string::npos);
    }
}

TEST_CASE("output files") {
    const auto dir = temp_dir("outputs");
    const auto cells = build_benchmark(small_spec());
    const auto results = run_benchmark(synthetic(), cells, fast_config(), {RunMode::Optimize, 2});
    const auto rep = evaluate_run(results);
    write_report_json(rep, dir / "a.json");
    write_report_json(evaluate_run(results), dir / "b.json");
    CHECK(read_file(dir / "a.json") == read_file(dir / "b.json"));
    const auto j = nlohmann::json::parse(read_file(dir / "a.json"));
    CHECK(j.at("rmse").get<double>() >= j.at("mae").get<double>());
    CHECK(j.at("n_samples").get<int>() == 6);
    CHECK(j.at("count_columns").contains("potential_map"));
    CHECK(j.at("per_bucket").contains("low"));

    write_per_class_csv(results, dir / "per_class.csv");
    std::ifstream csv(dir / "per_class.csv");
    std::string line;
    std::getline(csv, line);
    CHECK(line == "class,N,measured,error");
    int rows = 0;
    while (std::getline(csv, line)) ++rows;
    CHECK(rows == 6);

    write_mae_vs_n_svg(results, dir / "mae.svg");
    CHECK(read_file(dir / "mae.svg").rfind("<svg", 0) == 0);

    const auto arows = ablation_sweep(synthetic(), AblationParam::ConfThreshold, {0.3, 0.7}, cells, fast_config());
    write_ablation_csv(AblationParam::ConfThreshold, arows, dir / "abl.csv");
    const auto abl = read_file(dir / "abl.csv");
    CHECK(abl.rfind("conf_threshold,mae,rmse,clip_s_mean,cosine_mean,failed_runs\n", 0) == 0);
    CHECK(std::count(abl.begin(), abl.end(), '\n') == 4);
    write_ablation_svg(AblationParam::ConfThreshold, arows, dir / "abl.svg");
    CHECK(fs::file_size(dir / "abl.svg") > 100);
    fs::remove_all(dir);
}

TEST_CASE("class list loader skips comments and blanks") {
    const auto dir = temp_dir("classes");
    std::ofstream(dir / "c.txt") << "# header\napples\n\n  sea shells  \n#x\n";
    CHECK(load_class_list(dir / "c.txt") == std::vector<std::string>{"apples", "sea shells"});
    CHECK_THROWS_AS(load_class_list(dir / "missing.txt"), InvalidInput);
    fs::remove_all(dir);
}
