#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "ctok/benchmark.hpp"
#include "ctok/optimizer.hpp"

namespace ctok {

using BackendOptions = std::map<std::string, std::string>;

// Settings for a command, read from an INI file:
//
//   [generator]  backend, scene_seed, option.<name>
//   [counting]   scale_mode, static_scale, loss_norm
//   [detector]   backend, conf_threshold, option.<name>
//   [semantic]   backend, lambda, option.<name>
//   [optimizer]  learning_rate, max_iterations, stop_threshold, seed, grad_guard, ascent
//   [metrics]    clip_s_weight
//   [benchmark]  classes, classes_file, counts, samples_per_cell, workers, seed, template
//
// option.* keys are handed to the backend factory unchanged.
struct RunConfig {
    struct Generator {
        std::string backend = "synthetic";
        std::uint64_t scene_seed = 0;
        BackendOptions options;
    } generator;
    struct Counting {
        ScaleMode scale_mode = ScaleMode::Dynamic;
        std::optional<double> static_scale;  // unset: the potential model's natural scale
        LossNorm loss_norm = LossNorm::L1;
    } counting;
    struct Detector {
        std::string backend = "synthetic";
        double conf_threshold = kDefaultConfThreshold;
        BackendOptions options;
    } detector;
    struct Semantic {
        std::string backend = "synthetic";
        double lambda = 5.0;
        BackendOptions options;
    } semantic;
    struct Optimizer {
        double learning_rate = 0.05;
        int max_iterations = 50;
        double stop_threshold = 0.5;
        std::uint64_t seed = 0;
        double grad_guard = 1e-8;
        bool ascent = false;
    } optimizer;
    struct Metrics {
        double clip_s_weight = kDefaultClipSWeight;
    } metrics;
    struct Benchmark {
        std::optional<std::vector<std::string>> classes;  // takes precedence over classes_file
        std::string classes_file;  // relative paths resolve against the config file
        std::string counts = "1-25";
        int samples_per_cell = 1;
        int workers = 1;
        std::uint64_t seed = 0;
        std::string prompt_template = kDefaultPromptTemplate;
    } benchmark;

    // Optimizer settings with the static scale resolved against the pipeline.
    OptimizerConfig optimizer_config(const Pipeline& pipeline) const;
    BenchmarkSpec benchmark_spec() const;
};

// Parses INI text. Overrides have the form "section.key=value" and are applied
// after the file. Throws ConfigError with the offending line where one exists.
RunConfig parse_config(const std::string& text, const std::vector<std::string>& overrides = {},
                       const std::string& source = "<config>", const std::filesystem::path& base_dir = {});

RunConfig load_config(const std::filesystem::path& path, const std::vector<std::string>& overrides = {});

// Defaults plus overrides, no file.
RunConfig default_config(const std::vector<std::string>& overrides = {});

// Named backend factories. "synthetic" is registered for every kind; real
// model adapters register under "adapter:<name>".
class BackendRegistry {
public:
    using GeneratorFactory = std::function<std::shared_ptr<const Generator>(const RunConfig&)>;
    using PotentialFactory = std::function<std::shared_ptr<const PotentialModel>(const RunConfig&)>;
    using DetectorFactory = std::function<std::shared_ptr<const Detector>(const RunConfig&)>;
    using SemanticFactory = std::function<std::shared_ptr<const SemanticScorer>(const RunConfig&)>;

    static BackendRegistry& instance();

    void register_generator(const std::string& name, GeneratorFactory f);
    // A generator backend's companion potential model (same name).
    void register_potential(const std::string& name, PotentialFactory f);
    void register_detector(const std::string& name, DetectorFactory f);
    void register_semantic(const std::string& name, SemanticFactory f);

    std::vector<std::string> generator_names() const;

    // Throws ConfigError for unregistered names.
    Pipeline make_pipeline(const RunConfig& cfg) const;

private:
    BackendRegistry();

    std::map<std::string, GeneratorFactory> generators_;
    std::map<std::string, PotentialFactory> potentials_;
    std::map<std::string, DetectorFactory> detectors_;
    std::map<std::string, SemanticFactory> semantics_;
};

}  // namespace ctok
