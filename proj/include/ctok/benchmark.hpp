#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ctok/optimizer.hpp"

namespace ctok {

struct BenchmarkSpec {
    std::vector<std::string> classes;
    std::vector<int> counts;
    int samples_per_cell = 1;
    std::uint64_t base_seed = 0;
    std::string prompt_template = kDefaultPromptTemplate;
};

std::optional<std::string> validate(const BenchmarkSpec& spec);

struct BenchmarkCell {
    PromptSpec spec;
    std::uint64_t seed = 0;

    bool operator==(const BenchmarkCell&) const = default;
};

// Class-major, then count, then sample. Cell i uses seed base_seed + i.
std::vector<BenchmarkCell> build_benchmark(const BenchmarkSpec& spec);

// Parses "1-25", "5,10,15" or a mix such as "1-3,10".
std::vector<int> parse_counts(const std::string& text);

// One class name per line; blank lines and '#' comments skipped.
std::vector<std::string> load_class_list(const std::filesystem::path& path);

double mae(std::span<const double> pred, std::span<const double> target);
double rmse(std::span<const double> pred, std::span<const double> target);

enum class Bucket { Low, Medium, Large };

// low: N <= 5, medium: 5 < N <= 15, large: N > 15
Bucket bucket_of(int n);
const char* to_string(Bucket b);

struct CellResult {
    PromptSpec spec;
    std::uint64_t seed = 0;
    double measured = 0.0;  // detector count
    std::optional<double> measured_potential;  // static-scale potential count
    std::optional<int> oracle;  // exact count, synthetic generator only
    double clip_s = 0.0;
    double cosine = 0.0;
    int iterations = 0;
    OptimizationStatus status = OptimizationStatus::Converged;
};

struct ErrorStats {
    double mae = 0.0;
    double rmse = 0.0;
    int n = 0;
};

struct BenchmarkReport {
    ErrorStats overall;  // detector column
    std::optional<ErrorStats> overall_potential;  // potential-map column
    double clip_s_mean = 0.0;  // raw units, in [0, w]
    std::map<std::string, ErrorStats> per_bucket;
    std::map<std::string, ErrorStats> per_class;
    int n_samples = 0;
    int failed_runs = 0;
};

std::optional<std::string> validate(const BenchmarkReport& report);

// Independent of input order.
BenchmarkReport evaluate_run(std::vector<CellResult> results);

enum class RunMode { Optimize, Baseline };

struct RunOptions {
    RunMode mode = RunMode::Optimize;
    int workers = 1;
    double clip_s_weight = kDefaultClipSWeight;
};

// Runs one cell: optimize (cfg.seed = cell seed) and measure the best token,
// or measure the prompt alone in baseline mode.
CellResult run_cell(const Pipeline& pipeline, const BenchmarkCell& cell, const OptimizerConfig& cfg,
                    const RunOptions& opts = {});

// Results are in cell order regardless of worker count.
std::vector<CellResult> run_benchmark(const Pipeline& pipeline, const std::vector<BenchmarkCell>& cells,
                                      const OptimizerConfig& cfg, const RunOptions& opts = {});

enum class CountSource { Detector, Oracle };

struct ReuseResult {
    double in_domain_mae = 0.0;
    double out_domain_mae = 0.0;
    double baseline_mae = 0.0;
    int excluded = 0;  // tokens whose optimization failed
    std::vector<double> in_domain_per_seed;
    std::vector<double> out_domain_per_seed;
    std::vector<double> baseline_per_seed;
};

// One token per class and seed at count n, each applied to every other class.
ReuseResult reuse_eval(const Pipeline& pipeline, const std::vector<std::vector<std::string>>& groups, int n,
                       const OptimizerConfig& cfg, const std::vector<std::uint64_t>& seeds,
                       CountSource source = CountSource::Detector, int workers = 1);

enum class AblationParam { Lambda, LearningRate, ConfThreshold };

const char* to_string(AblationParam p);
// Throws InvalidInput listing the supported names.
AblationParam parse_ablation_param(const std::string& s);

struct AblationRow {
    std::string label;  // the grid value, or "baseline"
    std::optional<double> value;
    BenchmarkReport report;
    double cosine_mean = 0.0;
};

std::vector<AblationRow> ablation_sweep(const Pipeline& pipeline, AblationParam param, const std::vector<double>& grid,
                                        const std::vector<BenchmarkCell>& cells, const OptimizerConfig& cfg,
                                        const RunOptions& opts = {});

void write_report_json(const BenchmarkReport& report, const std::filesystem::path& path);
void write_per_class_csv(const std::vector<CellResult>& results, const std::filesystem::path& path);
void write_ablation_csv(AblationParam param, const std::vector<AblationRow>& rows, const std::filesystem::path& path);

// Static SVG line charts.
void write_mae_vs_n_svg(const std::vector<CellResult>& results, const std::filesystem::path& path);
void write_ablation_svg(AblationParam param, const std::vector<AblationRow>& rows, const std::filesystem::path& path);

}  // namespace ctok
