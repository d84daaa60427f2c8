#include "ctok/benchmark.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>
#include <tuple>

#include <boost/algorithm/string.hpp>

#include "ctok/errors.hpp"

namespace ctok {

std::optional<std::string> validate(const BenchmarkSpec& spec) {
    if (spec.classes.empty()) return "class list must be non-empty";
    if (spec.counts.empty()) return "count list must be non-empty";
    if (spec.samples_per_cell < 1) return "samples_per_cell must be >= 1";
    for (const auto& c : spec.classes) {
        if (c.empty()) return "class names must be non-empty";
    }
    for (int n : spec.counts) {
        if (n < 1) return "counts must be >= 1";
    }
    return std::nullopt;
}

std::vector<BenchmarkCell> build_benchmark(const BenchmarkSpec& spec) {
    if (auto err = validate(spec)) throw InvalidInput("invalid benchmark spec: " + *err);
    std::vector<BenchmarkCell> cells;
    cells.reserve(spec.classes.size() * spec.counts.size() * spec.samples_per_cell);
    for (const auto& c : spec.classes) {
        for (int n : spec.counts) {
            for (int s = 0; s < spec.samples_per_cell; ++s) {
                cells.push_back({PromptSpec{c, n, spec.prompt_template}, spec.base_seed + cells.size()});
            }
        }
    }
    return cells;
}

std::vector<int> parse_counts(const std::string& text) {
    std::vector<int> out;
    std::vector<std::string> parts;
    boost::split(parts, text, boost::is_any_of(","));
    auto to_int = [&](std::string s) {
        boost::trim(s);
        try {
            std::size_t used = 0;
            const int v = std::stoi(s, &used);
            if (used != s.size()) throw std::invalid_argument(s);
            return v;
        } catch (const std::exception&) {
            throw InvalidInput("invalid count list '" + text + "'");
        }
    };
    for (auto& p : parts) {
        boost::trim(p);
        if (p.empty()) continue;
        const auto dash = p.find('-', 1);
        if (dash == std::string::npos) {
            out.push_back(to_int(p));
        } else {
            const int lo = to_int(p.substr(0, dash)), hi = to_int(p.substr(dash + 1));
            if (hi < lo) throw InvalidInput("invalid count range '" + p + "'");
            for (int n = lo; n <= hi; ++n) out.push_back(n);
        }
    }
    return out;
}

std::vector<std::string> load_class_list(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw InvalidInput("cannot read class list " + path.string());
    std::vector<std::string> out;
    std::string line;
    while (std::getline(in, line)) {
        boost::trim(line);
        if (line.empty() || line.front() == '#') continue;
        out.push_back(line);
    }
    return out;
}

namespace {

void check_lengths(std::span<const double> pred, std::span<const double> target) {
    if (pred.size() != target.size()) {
        throw InvalidInput("prediction and target lengths differ (" + std::to_string(pred.size()) + " vs " +
                           std::to_string(target.size()) + ")");
    }
    if (pred.empty()) throw InvalidInput("error metrics need at least one sample");
}

}  // namespace

double mae(std::span<const double> pred, std::span<const double> target) {
    check_lengths(pred, target);
    double s = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) s += std::abs(pred[i] - target[i]);
    return s / pred.size();
}

double rmse(std::span<const double> pred, std::span<const double> target) {
    check_lengths(pred, target);
    double s = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) s += (pred[i] - target[i]) * (pred[i] - target[i]);
    return std::sqrt(s / pred.size());
}

Bucket bucket_of(int n) {
    if (n <= 5) return Bucket::Low;
    if (n <= 15) return Bucket::Medium;
    return Bucket::Large;
}

const char* to_string(Bucket b) {
    switch (b) {
        case Bucket::Low: return "low";
        case Bucket::Medium: return "medium";
        case Bucket::Large: return "large";
    }
    return "low";
}

std::optional<std::string> validate(const BenchmarkReport& report) {
    auto check = [](const ErrorStats& s, const std::string& where) -> std::optional<std::string> {
        if (!(s.mae >= 0.0) || !(s.rmse >= 0.0)) return where + ": errors must be nonnegative";
        if (s.rmse < s.mae * (1.0 - 1e-12)) return where + ": rmse must be >= mae";
        return std::nullopt;
    };
    if (auto e = check(report.overall, "overall")) return e;
    if (report.overall_potential) {
        if (auto e = check(*report.overall_potential, "potential column")) return e;
    }
    for (const auto& [k, s] : report.per_bucket) {
        if (auto e = check(s, "bucket " + k)) return e;
    }
    for (const auto& [k, s] : report.per_class) {
        if (auto e = check(s, "class " + k)) return e;
    }
    if (!(report.clip_s_mean >= 0.0)) return "clip_s_mean must be nonnegative";
    return std::nullopt;
}

namespace {

struct Accumulator {
    std::vector<double> pred, target;

    void add(double p, double t) {
        pred.push_back(p);
        target.push_back(t);
    }

    ErrorStats stats() const { return {mae(pred, target), rmse(pred, target), static_cast<int>(pred.size())}; }
};

}  // namespace

BenchmarkReport evaluate_run(std::vector<CellResult> results) {
    if (results.empty()) throw InvalidInput("evaluate_run needs at least one result");
    // Canonical order makes the floating-point reduction order-independent.
    auto key = [](const CellResult& r) {
        return std::make_tuple(r.spec.class_name, r.spec.target_count, r.seed, r.measured,
                               r.measured_potential.value_or(-1.0), r.clip_s, r.cosine);
    };
    std::sort(results.begin(), results.end(), [&](const CellResult& a, const CellResult& b) { return key(a) < key(b); });

    Accumulator all, potential;
    std::map<std::string, Accumulator> buckets, classes;
    double clip = 0.0;
    bool have_potential = true;
    BenchmarkReport rep;
    for (const auto& r : results) {
        const double t = r.spec.target_count;
        all.add(r.measured, t);
        buckets[to_string(bucket_of(r.spec.target_count))].add(r.measured, t);
        classes[r.spec.class_name].add(r.measured, t);
        if (r.measured_potential) {
            potential.add(*r.measured_potential, t);
        } else {
            have_potential = false;
        }
        clip += r.clip_s;
        if (r.status == OptimizationStatus::Failed) ++rep.failed_runs;
    }
    rep.overall = all.stats();
    if (have_potential) rep.overall_potential = potential.stats();
    for (const auto& [k, acc] : buckets) rep.per_bucket[k] = acc.stats();
    for (const auto& [k, acc] : classes) rep.per_class[k] = acc.stats();
    rep.clip_s_mean = clip / results.size();
    rep.n_samples = static_cast<int>(results.size());
    return rep;
}

namespace {

// Runs fn(i) for i in [0, n) on up to `workers` threads; rethrows the first
// exception after all threads finish.
template <typename Fn>
void parallel_for(std::size_t n, int workers, Fn&& fn) {
    const std::size_t threads = std::clamp<std::size_t>(static_cast<std::size_t>(std::max(1, workers)), 1, std::max<std::size_t>(n, 1));
    if (threads == 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex mu;
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) {
        pool.emplace_back([&] {
            for (std::size_t i = next++; i < n; i = next++) {
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard lock(mu);
                    if (!failure) failure = std::current_exception();
                }
            }
        });
    }
    for (auto& th : pool) th.join();
    if (failure) std::rethrow_exception(failure);
}

std::optional<int> oracle_of(const Pipeline& pipeline, const PromptEmbeddingSequence& seq, std::uint64_t seed) {
    const auto* synth = dynamic_cast<const SyntheticGenerator*>(pipeline.generator.get());
    if (!synth) return std::nullopt;
    return oracle_count(synth->synthetic_scene(seq, seed));
}

}  // namespace

CellResult run_cell(const Pipeline& pipeline, const BenchmarkCell& cell, const OptimizerConfig& cfg,
                    const RunOptions& opts) {
    const auto& gen = *pipeline.generator;
    CellResult res;
    res.spec = cell.spec;
    res.seed = cell.seed;

    auto seq = gen.encode_prompt(cell.spec);
    if (opts.mode == RunMode::Optimize) {
        OptimizerConfig run_cfg = cfg;
        run_cfg.seed = cell.seed;
        const auto opt = optimize(pipeline, cell.spec, run_cfg);
        res.iterations = static_cast<int>(opt.trace.size());
        res.status = opt.status;
        seq = append_count_token(seq, opt.token.embedding);
    }
    const auto image = gen.generate(seq, cell.seed).image;
    res.measured = static_cast<double>(
        detection_count(pipeline.detector->detect(image, cell.spec.class_name, cfg.conf_threshold)));
    const auto phi = pipeline.potential->potential_map(image, cell.spec.class_name);
    res.measured_potential = aggregate_static(phi, static_scale(cfg.static_scale)).value;
    res.oracle = oracle_of(pipeline, seq, cell.seed);
    const auto score = semantic_score(*pipeline.semantic, image, cell.spec.text());
    res.cosine = score.cosine;
    res.clip_s = clip_s(score, opts.clip_s_weight);
    return res;
}

std::vector<CellResult> run_benchmark(const Pipeline& pipeline, const std::vector<BenchmarkCell>& cells,
                                      const OptimizerConfig& cfg, const RunOptions& opts) {
    std::vector<CellResult> out(cells.size());
    parallel_for(cells.size(), opts.workers, [&](std::size_t i) { out[i] = run_cell(pipeline, cells[i], cfg, opts); });
    return out;
}

ReuseResult reuse_eval(const Pipeline& pipeline, const std::vector<std::vector<std::string>>& groups, int n,
                       const OptimizerConfig& cfg, const std::vector<std::uint64_t>& seeds, CountSource source,
                       int workers) {
    if (groups.size() < 2) throw InvalidInput("reuse evaluation needs at least two groups");
    for (const auto& g : groups) {
        if (g.size() < 2) throw InvalidInput("every reuse group needs at least two classes");
    }
    if (seeds.empty()) throw InvalidInput("reuse evaluation needs at least one seed");
    if (n < 1) throw InvalidInput("target count must be >= 1");

    std::vector<std::string> classes;
    std::vector<std::size_t> group_of;
    for (std::size_t g = 0; g < groups.size(); ++g) {
        for (const auto& c : groups[g]) {
            classes.push_back(c);
            group_of.push_back(g);
        }
    }
    const auto& gen = *pipeline.generator;
    if (source == CountSource::Oracle && !dynamic_cast<const SyntheticGenerator*>(&gen)) {
        throw InvalidInput("oracle counts need the synthetic generator");
    }

    auto measure = [&](const PromptEmbeddingSequence& seq, const std::string& cls, std::uint64_t seed) {
        if (source == CountSource::Oracle) return static_cast<double>(*oracle_of(pipeline, seq, seed));
        const auto image = gen.generate(seq, seed).image;
        return static_cast<double>(detection_count(pipeline.detector->detect(image, cls, cfg.conf_threshold)));
    };

    const std::size_t nc = classes.size();
    std::vector<std::optional<TokenEmbedding>> tokens(seeds.size() * nc);
    parallel_for(tokens.size(), workers, [&](std::size_t i) {
        OptimizerConfig run_cfg = cfg;
        run_cfg.seed = seeds[i / nc];
        const auto res = optimize(pipeline, PromptSpec{classes[i % nc], n}, run_cfg);
        if (res.status != OptimizationStatus::Failed) tokens[i] = res.token.embedding;
    });

    ReuseResult out;
    for (const auto& t : tokens) out.excluded += t ? 0 : 1;
    for (std::size_t si = 0; si < seeds.size(); ++si) {
        const auto seed = seeds[si];
        std::vector<double> in_err, out_err, base_err;
        for (std::size_t target = 0; target < nc; ++target) {
            const auto prompt = gen.encode_prompt(PromptSpec{classes[target], n});
            base_err.push_back(std::abs(measure(prompt, classes[target], seed) - n));
            for (std::size_t donor = 0; donor < nc; ++donor) {
                if (donor == target || !tokens[si * nc + donor]) continue;
                const double err =
                    std::abs(measure(append_count_token(prompt, *tokens[si * nc + donor]), classes[target], seed) - n);
                (group_of[donor] == group_of[target] ? in_err : out_err).push_back(err);
            }
        }
        auto mean = [](const std::vector<double>& v) {
            double s = 0.0;
            for (double x : v) s += x;
            return v.empty() ? 0.0 : s / v.size();
        };
        out.in_domain_per_seed.push_back(mean(in_err));
        out.out_domain_per_seed.push_back(mean(out_err));
        out.baseline_per_seed.push_back(mean(base_err));
    }
    auto avg = [](const std::vector<double>& v) {
        double s = 0.0;
        for (double x : v) s += x;
        return s / v.size();
    };
    out.in_domain_mae = avg(out.in_domain_per_seed);
    out.out_domain_mae = avg(out.out_domain_per_seed);
    out.baseline_mae = avg(out.baseline_per_seed);
    return out;
}

const char* to_string(AblationParam p) {
    switch (p) {
        case AblationParam::Lambda: return "lambda";
        case AblationParam::LearningRate: return "learning_rate";
        case AblationParam::ConfThreshold: return "conf_threshold";
    }
    return "lambda";
}

AblationParam parse_ablation_param(const std::string& s) {
    if (s == "lambda") return AblationParam::Lambda;
    if (s == "learning_rate") return AblationParam::LearningRate;
    if (s == "conf_threshold") return AblationParam::ConfThreshold;
    throw InvalidInput("unknown ablation parameter '" + s + "' (supported: lambda, learning_rate, conf_threshold)");
}

namespace {

double mean_cosine(const std::vector<CellResult>& results) {
    double s = 0.0;
    for (const auto& r : results) s += r.cosine;
    return s / results.size();
}

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6g", v);
    return buf;
}

}  // namespace

std::vector<AblationRow> ablation_sweep(const Pipeline& pipeline, AblationParam param, const std::vector<double>& grid,
                                        const std::vector<BenchmarkCell>& cells, const OptimizerConfig& cfg,
                                        const RunOptions& opts) {
    if (grid.empty()) throw InvalidInput("ablation grid must be non-empty");
    if (cells.empty()) throw InvalidInput("ablation needs at least one benchmark cell");
    std::vector<AblationRow> rows;
    for (double v : grid) {
        OptimizerConfig c = cfg;
        switch (param) {
            case AblationParam::Lambda: c.lambda_semantic = v; break;
            case AblationParam::LearningRate: c.learning_rate = v; break;
            case AblationParam::ConfThreshold: c.conf_threshold = v; break;
        }
        if (auto err = validate(c)) throw InvalidInput(std::string(to_string(param)) + "=" + fmt(v) + ": " + *err);
        RunOptions o = opts;
        o.mode = RunMode::Optimize;
        const auto results = run_benchmark(pipeline, cells, c, o);
        rows.push_back({fmt(v), v, evaluate_run(results), mean_cosine(results)});
    }
    RunOptions o = opts;
    o.mode = RunMode::Baseline;
    const auto base = run_benchmark(pipeline, cells, cfg, o);
    rows.push_back({"baseline", std::nullopt, evaluate_run(base), mean_cosine(base)});
    return rows;
}

// ---------------------------------------------------------------------------
// Output files
// ---------------------------------------------------------------------------

namespace {

nlohmann::json stats_json(const ErrorStats& s) {
    return {{"mae", s.mae}, {"rmse", s.rmse}, {"n", s.n}};
}

std::ofstream open_out(const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw InvalidInput("cannot write " + path.string());
    return out;
}

struct Series {
    std::string name;
    std::string color;
    std::vector<std::pair<double, double>> points;
};

// One panel per series, stacked vertically, each with its own y range.
void write_svg(const std::filesystem::path& path, const std::string& title, const std::string& x_label,
               const std::vector<Series>& series) {
    const double width = 640, panel = 220, left = 70, right = 20, top = 40, gap = 50;
    const double height = top + series.size() * (panel + gap);
    std::ostringstream svg;
    svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
        << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
    svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    svg << "<text x=\"" << width / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" << title << "</text>\n";
    for (std::size_t k = 0; k < series.size(); ++k) {
        const auto& s = series[k];
        const double y0 = top + k * (panel + gap);
        double xmin = 0, xmax = 1, ymin = 0, ymax = 1;
        if (!s.points.empty()) {
            xmin = xmax = s.points.front().first;
            ymax = s.points.front().second;
            for (const auto& [x, y] : s.points) {
                xmin = std::min(xmin, x);
                xmax = std::max(xmax, x);
                ymax = std::max(ymax, y);
            }
        }
        if (xmax == xmin) xmax = xmin + 1;
        if (ymax <= ymin) ymax = ymin + 1;
        const double pw = width - left - right;
        auto px = [&](double x) { return left + (x - xmin) / (xmax - xmin) * pw; };
        auto py = [&](double y) { return y0 + panel - (y - ymin) / (ymax - ymin) * panel; };
        svg << "<line x1=\"" << left << "\" y1=\"" << y0 + panel << "\" x2=\"" << left + pw << "\" y2=\"" << y0 + panel
            << "\" stroke=\"black\"/>\n";
        svg << "<line x1=\"" << left << "\" y1=\"" << y0 << "\" x2=\"" << left << "\" y2=\"" << y0 + panel
            << "\" stroke=\"black\"/>\n";
        svg << "<text x=\"" << left - 6 << "\" y=\"" << y0 + 4 << "\" text-anchor=\"end\">" << fmt(ymax) << "</text>\n";
        svg << "<text x=\"" << left - 6 << "\" y=\"" << y0 + panel + 4 << "\" text-anchor=\"end\">" << fmt(ymin)
            << "</text>\n";
        svg << "<text x=\"" << left << "\" y=\"" << y0 + panel + 16 << "\" text-anchor=\"middle\">" << fmt(xmin)
            << "</text>\n";
        svg << "<text x=\"" << left + pw << "\" y=\"" << y0 + panel + 16 << "\" text-anchor=\"middle\">" << fmt(xmax)
            << "</text>\n";
        svg << "<text x=\"" << left + pw / 2 << "\" y=\"" << y0 + panel + 32 << "\" text-anchor=\"middle\">" << x_label
            << "</text>\n";
        svg << "<text x=\"" << left + 8 << "\" y=\"" << y0 + 12 << "\" fill=\"" << s.color << "\">" << s.name
            << "</text>\n";
        svg << "<polyline fill=\"none\" stroke=\"" << s.color << "\" stroke-width=\"2\" points=\"";
        for (const auto& [x, y] : s.points) svg << fmt(px(x)) << ',' << fmt(py(y)) << ' ';
        svg << "\"/>\n";
        for (const auto& [x, y] : s.points) {
            svg << "<circle cx=\"" << fmt(px(x)) << "\" cy=\"" << fmt(py(y)) << "\" r=\"3\" fill=\"" << s.color
                << "\"/>\n";
        }
    }
    svg << "</svg>\n";
    auto out = open_out(path);
    out << svg.str();
}

}  // namespace

void write_report_json(const BenchmarkReport& report, const std::filesystem::path& path) {
    nlohmann::json j;
    j["n_samples"] = report.n_samples;
    j["failed_runs"] = report.failed_runs;
    j["mae"] = report.overall.mae;
    j["rmse"] = report.overall.rmse;
    j["count_columns"]["detector"] = stats_json(report.overall);
    if (report.overall_potential) j["count_columns"]["potential_map"] = stats_json(*report.overall_potential);
    j["clip_s_mean"] = report.clip_s_mean;
    j["clip_s_mean_percent"] = 100.0 * report.clip_s_mean;
    for (const auto& [k, s] : report.per_bucket) j["per_bucket"][k] = stats_json(s);
    for (const auto& [k, s] : report.per_class) j["per_class"][k] = stats_json(s);
    auto out = open_out(path);
    out << j.dump(2) << '\n';
}

void write_per_class_csv(const std::vector<CellResult>& results, const std::filesystem::path& path) {
    auto out = open_out(path);
    out << "class,N,measured,error\n";
    for (const auto& r : results) {
        std::string cls = r.spec.class_name;
        if (cls.find_first_of(",\"") != std::string::npos) {
            boost::replace_all(cls, "\"", "\"\"");
            cls = "\"" + cls + "\"";
        }
        out << cls << ',' << r.spec.target_count << ',' << fmt(r.measured) << ','
            << fmt(std::abs(r.measured - r.spec.target_count)) << '\n';
    }
}

void write_ablation_csv(AblationParam param, const std::vector<AblationRow>& rows, const std::filesystem::path& path) {
    auto out = open_out(path);
    out << to_string(param) << ",mae,rmse,clip_s_mean,cosine_mean,failed_runs\n";
    for (const auto& r : rows) {
        out << r.label << ',' << fmt(r.report.overall.mae) << ',' << fmt(r.report.overall.rmse) << ','
            << fmt(r.report.clip_s_mean) << ',' << fmt(r.cosine_mean) << ',' << r.report.failed_runs << '\n';
    }
}

void write_mae_vs_n_svg(const std::vector<CellResult>& results, const std::filesystem::path& path) {
    std::map<int, Accumulator> by_n;
    for (const auto& r : results) by_n[r.spec.target_count].add(r.measured, r.spec.target_count);
    Series s{"MAE (detector count)", "#1f77b4", {}};
    for (const auto& [n, acc] : by_n) s.points.emplace_back(n, acc.stats().mae);
    write_svg(path, "Count error by requested N", "N", {s});
}

void write_ablation_svg(AblationParam param, const std::vector<AblationRow>& rows, const std::filesystem::path& path) {
    Series m{"MAE", "#1f77b4", {}}, c{"CLIP-S", "#d62728", {}};
    for (const auto& r : rows) {
        if (!r.value) continue;
        m.points.emplace_back(*r.value, r.report.overall.mae);
        c.points.emplace_back(*r.value, r.report.clip_s_mean);
    }
    write_svg(path, std::string("Ablation over ") + to_string(param), to_string(param), {m, c});
}

}  // namespace ctok
