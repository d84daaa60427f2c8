#include "ctok/config.hpp"

#include <boost/algorithm/string.hpp>
#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <fstream>
#include <set>
#include <sstream>

#include "ctok/errors.hpp"

namespace ctok {

namespace pt = boost::property_tree;

namespace {

// 1-based line of `key` inside `[section]`, or 0 when absent.
int find_line(const std::string& text, const std::string& section, const std::string& key) {
    std::istringstream in(text);
    std::string line, current;
    int n = 0;
    while (std::getline(in, line)) {
        ++n;
        boost::trim(line);
        if (line.empty() || line[0] == ';' || line[0] == '#') continue;
        if (line.front() == '[' && line.back() == ']') {
            current = boost::trim_copy(line.substr(1, line.size() - 2));
            continue;
        }
        const auto eq = line.find('=');
        if (current == section && eq != std::string::npos && boost::trim_copy(line.substr(0, eq)) == key) return n;
    }
    return 0;
}

pt::ptree& child(pt::ptree& tree, const std::string& name) {
    auto it = tree.find(name);
    if (it != tree.not_found()) return tree.to_iterator(it)->second;
    return tree.push_back({name, pt::ptree()})->second;
}

class Parser {
public:
    Parser(const std::string& text, std::string source) : text_(text), source_(std::move(source)) {}

    void set_origin(const std::string& section, const std::string& key, std::string origin) {
        origins_[section + "." + key] = std::move(origin);
    }

    std::string where(const std::string& section, const std::string& key) const {
        auto it = origins_.find(section + "." + key);
        if (it != origins_.end()) return it->second;
        const int line = find_line(text_, section, key);
        return line > 0 ? source_ + ":" + std::to_string(line) : source_;
    }

    [[noreturn]] void fail(const std::string& section, const std::string& key, const std::string& msg) const {
        throw ConfigError(where(section, key) + ": " + section + "." + key + ": " + msg);
    }

    double real(const std::string& s, const std::string& k, const std::string& v) const {
        try {
            std::size_t used = 0;
            const double d = std::stod(v, &used);
            if (used == v.size()) return d;
        } catch (const std::exception&) {
        }
        fail(s, k, "expected a number, got '" + v + "'");
    }

    int integer(const std::string& s, const std::string& k, const std::string& v) const {
        try {
            std::size_t used = 0;
            const int i = std::stoi(v, &used);
            if (used == v.size()) return i;
        } catch (const std::exception&) {
        }
        fail(s, k, "expected an integer, got '" + v + "'");
    }

    std::uint64_t unsigned64(const std::string& s, const std::string& k, const std::string& v) const {
        if (!v.empty() && v[0] != '-') {
            try {
                std::size_t used = 0;
                const auto u = std::stoull(v, &used);
                if (used == v.size()) return u;
            } catch (const std::exception&) {
            }
        }
        fail(s, k, "expected a nonnegative integer, got '" + v + "'");
    }

    bool boolean(const std::string& s, const std::string& k, const std::string& v) const {
        const auto l = boost::to_lower_copy(v);
        if (l == "true" || l == "1" || l == "yes" || l == "on") return true;
        if (l == "false" || l == "0" || l == "no" || l == "off") return false;
        fail(s, k, "expected true or false, got '" + v + "'");
    }

private:
    const std::string& text_;
    std::string source_;
    std::map<std::string, std::string> origins_;
};

std::vector<std::string> split_list(const std::string& v) {
    std::vector<std::string> parts, out;
    boost::split(parts, v, boost::is_any_of(","));
    for (auto& p : parts) {
        boost::trim(p);
        if (!p.empty()) out.push_back(p);
    }
    return out;
}

void apply(RunConfig& cfg, const Parser& p, const std::string& s, const std::string& k, const std::string& v,
           const std::filesystem::path& base_dir) {
    auto bad_key = [&] { p.fail(s, k, "unknown key"); };
    auto option = [&](BackendOptions& opts) {
        if (boost::starts_with(k, "option.") && k.size() > 7) {
            opts[k.substr(7)] = v;
            return true;
        }
        return false;
    };
    auto positive = [&](double d) {
        if (!(d > 0.0)) p.fail(s, k, "must be positive");
        return d;
    };
    auto nonneg = [&](double d) {
        if (!(d >= 0.0)) p.fail(s, k, "must be nonnegative");
        return d;
    };

    if (s == "generator") {
        if (k == "backend") cfg.generator.backend = v;
        else if (k == "scene_seed") cfg.generator.scene_seed = p.unsigned64(s, k, v);
        else if (!option(cfg.generator.options)) bad_key();
    } else if (s == "counting") {
        try {
            if (k == "scale_mode") cfg.counting.scale_mode = parse_scale_mode(v);
            else if (k == "static_scale") cfg.counting.static_scale = positive(p.real(s, k, v));
            else if (k == "loss_norm") cfg.counting.loss_norm = parse_loss_norm(v);
            else bad_key();
        } catch (const InvalidInput& ex) {
            p.fail(s, k, ex.what());
        }
    } else if (s == "detector") {
        if (k == "backend") cfg.detector.backend = v;
        else if (k == "conf_threshold") {
            const double t = p.real(s, k, v);
            if (!(t >= 0.0 && t <= 1.0)) p.fail(s, k, "must lie in [0,1]");
            cfg.detector.conf_threshold = t;
        } else if (!option(cfg.detector.options)) bad_key();
    } else if (s == "semantic") {
        if (k == "backend") cfg.semantic.backend = v;
        else if (k == "lambda") cfg.semantic.lambda = nonneg(p.real(s, k, v));
        else if (!option(cfg.semantic.options)) bad_key();
    } else if (s == "optimizer") {
        if (k == "learning_rate") cfg.optimizer.learning_rate = positive(p.real(s, k, v));
        else if (k == "max_iterations") {
            cfg.optimizer.max_iterations = p.integer(s, k, v);
            if (cfg.optimizer.max_iterations < 1) p.fail(s, k, "must be >= 1");
        } else if (k == "stop_threshold") cfg.optimizer.stop_threshold = nonneg(p.real(s, k, v));
        else if (k == "seed") cfg.optimizer.seed = p.unsigned64(s, k, v);
        else if (k == "grad_guard") cfg.optimizer.grad_guard = positive(p.real(s, k, v));
        else if (k == "ascent") cfg.optimizer.ascent = p.boolean(s, k, v);
        else bad_key();
    } else if (s == "metrics") {
        if (k == "clip_s_weight") cfg.metrics.clip_s_weight = nonneg(p.real(s, k, v));
        else bad_key();
    } else if (s == "benchmark") {
        if (k == "classes") cfg.benchmark.classes = split_list(v);
        else if (k == "classes_file") {
            std::filesystem::path f(v);
            cfg.benchmark.classes_file = (f.is_relative() && !base_dir.empty() ? base_dir / f : f).string();
        } else if (k == "counts") {
            try {
                if (parse_counts(v).empty()) p.fail(s, k, "count list is empty");
            } catch (const InvalidInput& ex) {
                p.fail(s, k, ex.what());
            }
            cfg.benchmark.counts = v;
        } else if (k == "samples_per_cell") {
            cfg.benchmark.samples_per_cell = p.integer(s, k, v);
            if (cfg.benchmark.samples_per_cell < 1) p.fail(s, k, "must be >= 1");
        } else if (k == "workers") {
            cfg.benchmark.workers = p.integer(s, k, v);
            if (cfg.benchmark.workers < 1) p.fail(s, k, "must be >= 1");
        } else if (k == "seed") cfg.benchmark.seed = p.unsigned64(s, k, v);
        else if (k == "template") cfg.benchmark.prompt_template = v;
        else bad_key();
    } else {
        throw ConfigError(p.where(s, k) + ": unknown section [" + s + "]");
    }
}

}  // namespace

RunConfig parse_config(const std::string& text, const std::vector<std::string>& overrides, const std::string& source,
                       const std::filesystem::path& base_dir) {
    pt::ptree tree;
    std::istringstream in(text);
    try {
        pt::ini_parser::read_ini(in, tree);
    } catch (const pt::ini_parser_error& ex) {
        throw ConfigError(source + ":" + std::to_string(ex.line()) + ": " + ex.message());
    }

    Parser parser(text, source);
    for (const auto& o : overrides) {
        const auto eq = o.find('=');
        const auto dot = o.find('.');
        if (eq == std::string::npos || dot == std::string::npos || dot > eq || dot == 0 || dot + 1 == eq) {
            throw ConfigError("invalid override '" + o + "' (expected section.key=value)");
        }
        const auto section = boost::trim_copy(o.substr(0, dot));
        const auto key = boost::trim_copy(o.substr(dot + 1, eq - dot - 1));
        auto& sec = child(tree, section);
        child(sec, key).data() = boost::trim_copy(o.substr(eq + 1));
        parser.set_origin(section, key, "--set " + section + "." + key);
    }

    RunConfig cfg;
    for (const auto& [section, body] : tree) {
        if (body.empty()) {
            throw ConfigError(parser.where("", section) + ": key '" + section + "' is outside any section");
        }
        for (const auto& [key, value] : body) {
            apply(cfg, parser, section, key, value.data(), base_dir);
        }
    }
    return cfg;
}

RunConfig load_config(const std::filesystem::path& path, const std::vector<std::string>& overrides) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str(), overrides, path.string(), path.parent_path());
}

RunConfig default_config(const std::vector<std::string>& overrides) {
    return parse_config("", overrides);
}

OptimizerConfig RunConfig::optimizer_config(const Pipeline& pipeline) const {
    OptimizerConfig c;
    c.learning_rate = optimizer.learning_rate;
    c.lambda_semantic = semantic.lambda;
    c.scale_mode = counting.scale_mode;
    c.static_scale = counting.static_scale.value_or(pipeline.potential->natural_scale());
    c.loss_norm = counting.loss_norm;
    c.stop_threshold = optimizer.stop_threshold;
    c.max_iterations = optimizer.max_iterations;
    c.seed = optimizer.seed;
    c.grad_guard = optimizer.grad_guard;
    c.ascent = optimizer.ascent;
    c.conf_threshold = detector.conf_threshold;
    return c;
}

BenchmarkSpec RunConfig::benchmark_spec() const {
    BenchmarkSpec spec;
    if (benchmark.classes) {
        spec.classes = *benchmark.classes;
    } else if (!benchmark.classes_file.empty()) {
        spec.classes = load_class_list(benchmark.classes_file);
    }
    spec.counts = parse_counts(benchmark.counts);
    spec.samples_per_cell = benchmark.samples_per_cell;
    spec.base_seed = benchmark.seed;
    spec.prompt_template = benchmark.prompt_template;
    return spec;
}

// ---------------------------------------------------------------------------
// Registry
// ---------------------------------------------------------------------------

namespace {

SyntheticParams synthetic_params(const RunConfig& cfg, const BackendOptions& options, const std::string& kind) {
    if (!options.empty()) {
        throw ConfigError("the synthetic " + kind + " takes no options (got option." + options.begin()->first + ")");
    }
    SyntheticParams p;
    p.scene_seed = cfg.generator.scene_seed;
    return p;
}

template <typename Map>
std::string names_of(const Map& m) {
    std::string out;
    for (const auto& [k, v] : m) out += (out.empty() ? "" : ", ") + k;
    return out;
}

template <typename Map>
const typename Map::mapped_type& lookup(const Map& m, const std::string& name, const std::string& kind) {
    auto it = m.find(name);
    if (it == m.end()) {
        throw ConfigError(kind + " backend '" + name + "' is not registered (available: " + names_of(m) + ")");
    }
    return it->second;
}

}  // namespace

BackendRegistry::BackendRegistry() {
    register_generator("synthetic", [](const RunConfig& c) {
        return std::make_shared<const SyntheticGenerator>(synthetic_params(c, c.generator.options, "generator"));
    });
    register_potential("synthetic", [](const RunConfig& c) {
        SyntheticParams p;
        p.scene_seed = c.generator.scene_seed;
        return std::make_shared<const SyntheticPotentialModel>(p);
    });
    register_detector("synthetic", [](const RunConfig& c) {
        return std::make_shared<const SyntheticDetector>(synthetic_params(c, c.detector.options, "detector"));
    });
    register_semantic("synthetic", [](const RunConfig& c) {
        return std::make_shared<const SyntheticSemanticScorer>(
            SyntheticVocabulary(synthetic_params(c, c.semantic.options, "semantic scorer")));
    });
}

BackendRegistry& BackendRegistry::instance() {
    static BackendRegistry registry;
    return registry;
}

void BackendRegistry::register_generator(const std::string& name, GeneratorFactory f) {
    generators_[name] = std::move(f);
}

void BackendRegistry::register_potential(const std::string& name, PotentialFactory f) {
    potentials_[name] = std::move(f);
}

void BackendRegistry::register_detector(const std::string& name, DetectorFactory f) {
    detectors_[name] = std::move(f);
}

void BackendRegistry::register_semantic(const std::string& name, SemanticFactory f) {
    semantics_[name] = std::move(f);
}

std::vector<std::string> BackendRegistry::generator_names() const {
    std::vector<std::string> out;
    for (const auto& [k, v] : generators_) out.push_back(k);
    return out;
}

Pipeline BackendRegistry::make_pipeline(const RunConfig& cfg) const {
    Pipeline p;
    p.generator = lookup(generators_, cfg.generator.backend, "generator")(cfg);
    p.potential = lookup(potentials_, cfg.generator.backend, "potential-map")(cfg);
    p.detector = lookup(detectors_, cfg.detector.backend, "detector")(cfg);
    p.semantic = lookup(semantics_, cfg.semantic.backend, "semantic")(cfg);
    return p;
}

}  // namespace ctok
