#include "ctok/optimizer.hpp"

#include <zlib.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>

#include "ctok/errors.hpp"
#include "ctok/rng.hpp"

namespace ctok {

std::optional<std::string> validate(const OptimizerConfig& cfg) {
    if (!(cfg.learning_rate > 0.0) || !std::isfinite(cfg.learning_rate)) return "learning_rate must be positive";
    if (!(cfg.lambda_semantic >= 0.0) || !std::isfinite(cfg.lambda_semantic)) return "lambda must be nonnegative";
    if (!(cfg.static_scale > 0.0) || !std::isfinite(cfg.static_scale)) return "static_scale must be positive";
    if (!(cfg.stop_threshold >= 0.0)) return "stop_threshold must be nonnegative";
    if (cfg.max_iterations < 1) return "max_iterations must be >= 1";
    if (!(cfg.grad_guard > 0.0)) return "grad_guard must be positive";
    if (!(cfg.conf_threshold >= 0.0 && cfg.conf_threshold <= 1.0)) return "conf_threshold must lie in [0,1]";
    return std::nullopt;
}

void to_json(nlohmann::json& j, const OptimizerConfig& cfg) {
    j = nlohmann::json{
        {"learning_rate", cfg.learning_rate},
        {"lambda_semantic", cfg.lambda_semantic},
        {"scale_mode", to_string(cfg.scale_mode)},
        {"static_scale", cfg.static_scale},
        {"loss_norm", to_string(cfg.loss_norm)},
        {"stop_threshold", cfg.stop_threshold},
        {"max_iterations", cfg.max_iterations},
        {"seed", cfg.seed},
        {"grad_guard", cfg.grad_guard},
        {"ascent", cfg.ascent},
        {"conf_threshold", cfg.conf_threshold},
    };
}

void from_json(const nlohmann::json& j, OptimizerConfig& cfg) {
    cfg.learning_rate = j.at("learning_rate").get<double>();
    cfg.lambda_semantic = j.at("lambda_semantic").get<double>();
    cfg.scale_mode = parse_scale_mode(j.at("scale_mode").get<std::string>());
    cfg.static_scale = j.at("static_scale").get<double>();
    cfg.loss_norm = parse_loss_norm(j.at("loss_norm").get<std::string>());
    // JSON has no infinity; an unbounded threshold is written as null.
    cfg.stop_threshold = j.at("stop_threshold").is_null() ? std::numeric_limits<double>::infinity()
                                                          : j.at("stop_threshold").get<double>();
    cfg.max_iterations = j.at("max_iterations").get<int>();
    cfg.seed = j.at("seed").get<std::uint64_t>();
    cfg.grad_guard = j.at("grad_guard").get<double>();
    cfg.ascent = j.at("ascent").get<bool>();
    cfg.conf_threshold = j.at("conf_threshold").get<double>();
}

Pipeline Pipeline::synthetic(const SyntheticParams& params) {
    auto gen = std::make_shared<SyntheticGenerator>(params);
    Pipeline p;
    p.generator = gen;
    p.potential = std::make_shared<SyntheticPotentialModel>(params);
    p.detector = std::make_shared<SyntheticDetector>(params);
    p.semantic = std::make_shared<SyntheticSemanticScorer>(gen->vocabulary());
    return p;
}

namespace {

nlohmann::json count_json(const CountEstimate& c) {
    return {{"value", c.value},
            {"scale_used", c.scale_used},
            {"mode", to_string(c.mode)},
            {"differentiable", c.differentiable},
            {"potential_sum", c.potential_sum}};
}

}  // namespace

void to_json(nlohmann::json& j, const IterationRecord& rec) {
    j = nlohmann::json{
        {"index", rec.index},
        {"count", count_json(rec.count_estimate)},
        {"detector_count", rec.detector_count},
        {"loss",
         {{"counting", rec.loss.counting},
          {"semantic", rec.loss.semantic},
          {"lambda", rec.loss.lambda_semantic},
          {"total", rec.loss.total}}},
        {"scale", {{"value", rec.scale.value}, {"mode", to_string(rec.scale.mode)}}},
        {"static_fallback", rec.static_fallback},
        {"semantic_cosine", rec.semantic_cosine},
        {"counting_error", rec.counting_error},
        {"embedding_norm", rec.embedding_norm},
        {"embedding", rec.embedding},
        {"image", rec.image_ref},
    };
}

std::optional<std::string> validate_trace(const std::vector<IterationRecord>& trace) {
    for (std::size_t k = 0; k < trace.size(); ++k) {
        const auto& r = trace[k];
        const std::string at = "iteration " + std::to_string(k) + ": ";
        if (r.index != static_cast<int>(k)) return at + "indices must increase from 0 without gaps";
        if (auto err = validate(r.count_estimate)) return at + *err;
        if (auto err = validate(r.loss)) return at + *err;
        if (auto err = validate(r.scale)) return at + *err;
        if (r.scale.value != r.count_estimate.scale_used) return at + "record scale differs from the count's scale";
        if (r.detector_count < 0) return at + "detector count must be nonnegative";
        if (r.scale.mode == ScaleMode::Dynamic) {
            const double tol = 1e-6 * std::max(1.0, static_cast<double>(r.detector_count));
            if (std::abs(r.count_estimate.value - r.detector_count) > tol) {
                return at + "stale dynamic scale: count does not match the detector count";
            }
        }
        if (r.embedding.empty()) return at + "embedding snapshot missing";
        double n = 0.0;
        for (double v : r.embedding) n += v * v;
        if (std::abs(std::sqrt(n) - r.embedding_norm) > 1e-9 * std::max(1.0, r.embedding_norm)) {
            return at + "embedding norm does not match the snapshot";
        }
    }
    return std::nullopt;
}

std::optional<std::string> validate(const TokenRecord& token) {
    if (auto err = validate(token.embedding)) return err;
    if (token.class_name.empty()) return "class name must be non-empty";
    if (token.target_count < 1) return "target count must be >= 1";
    if (!(token.final_counting_error >= 0.0)) return "final counting error must be nonnegative";
    if (token.iterations_used < 0 || token.iterations_used > token.config_snapshot.max_iterations) {
        return "iterations_used must lie in [0, max_iterations]";
    }
    return std::nullopt;
}

ImageEvaluation evaluate_image(const Pipeline& pipeline, const ImageTensor& image, const PromptSpec& spec,
                               const OptimizerConfig& cfg, const std::optional<ScaleFactor>& frozen_scale) {
    ImageEvaluation ev;
    const auto phi = pipeline.potential->potential_map(image, spec.class_name);
    const auto dets = pipeline.detector->detect(image, spec.class_name, cfg.conf_threshold);
    ev.detector_count = static_cast<int>(detection_count(dets));
    const double sum = phi.sum();
    ev.degenerate = !(sum > kDenominatorGuard);

    if (frozen_scale) {
        ev.scale = *frozen_scale;
        ev.count = {ev.scale.value * sum, ev.scale.value, ev.scale.mode, true, sum};
    } else if (cfg.scale_mode == ScaleMode::Dynamic && !ev.degenerate && ev.detector_count > 0) {
        ev.scale = dynamic_scale(phi, ev.detector_count);
        ev.count = aggregate_dynamic(phi, ev.scale);
    } else {
        // With no detections the dynamic scale is 0 and would zero the count
        // gradient, so that case takes the static scale too.
        ev.static_fallback = cfg.scale_mode == ScaleMode::Dynamic;
        ev.scale = static_scale(cfg.static_scale);
        ev.count = aggregate_static(phi, ev.scale);
    }

    const double counting = counting_loss(ev.count, spec.target_count, cfg.loss_norm);
    ev.semantic = semantic_score(*pipeline.semantic, image, class_prompt(spec.class_name));
    ev.loss = LossBreakdown::compose(counting, semantic_penalty(ev.semantic), cfg.lambda_semantic);

    const double dcount = counting_loss_derivative(ev.count, spec.target_count, cfg.loss_norm);
    if (dcount != 0.0 && ev.scale.value != 0.0) {
        PotentialMap up(phi.height(), phi.width(), dcount * ev.scale.value);
        ev.image_grad = pipeline.potential->backward(image, spec.class_name, up);
    } else {
        ev.image_grad = ImageTensor(image.height(), image.width(), image.channels());
    }
    if (cfg.lambda_semantic != 0.0 && pipeline.semantic->differentiable()) {
        const auto dcos = pipeline.semantic->gradient(image, class_prompt(spec.class_name));
        auto g = ev.image_grad.data();
        const auto d = dcos.data();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] -= cfg.lambda_semantic * d[i];
    }
    return ev;
}

LossBreakdown total_loss(const Pipeline& pipeline, const ImageTensor& image, const PromptSpec& spec,
                         const OptimizerConfig& cfg) {
    return evaluate_image(pipeline, image, spec, cfg).loss;
}

TokenLoss token_loss_and_grad(const Pipeline& pipeline, const PromptEmbeddingSequence& prompt, const TokenEmbedding& e,
                              const PromptSpec& spec, const OptimizerConfig& cfg,
                              const std::optional<ScaleFactor>& frozen_scale) {
    const auto& gen = *pipeline.generator;
    if (!gen.differentiable()) {
        throw GenerationError("generator '" + gen.name() + "' does not pass gradients to the counting token");
    }
    const auto seq = append_count_token(prompt, e);
    auto result = gen.generate(seq, cfg.seed);
    TokenLoss out{evaluate_image(pipeline, result.image, spec, cfg, frozen_scale), std::move(result.image), {}};
    auto grads = gen.backward(seq, cfg.seed, out.evaluation.image_grad);
    out.grad = std::move(grads.back());
    return out;
}

TokenEmbedding update_token(const TokenEmbedding& e, const TokenEmbedding& grad, double loss_value,
                            const OptimizerConfig& cfg) {
    if (grad.dim() != e.dim()) throw InvalidInput("gradient and embedding dimensions differ");
    if (!std::isfinite(loss_value)) throw NonFiniteGradient("loss value is not finite");
    for (double g : grad.values()) {
        if (!std::isfinite(g)) throw NonFiniteGradient("gradient has non-finite entries");
    }
    const double step = cfg.learning_rate / (loss_value * loss_value + cfg.grad_guard);
    const double sign = cfg.ascent ? 1.0 : -1.0;
    TokenEmbedding out = e;
    for (std::size_t i = 0; i < out.dim(); ++i) out[i] += sign * step * grad[i];
    return out;
}

TokenEmbedding initial_token(const Generator& generator, std::uint64_t seed) {
    Sampler s(mix_seed(seed, fnv1a64("ctok/token-init")));
    TokenEmbedding e(generator.embedding_dim());
    for (std::size_t i = 0; i < e.dim(); ++i) e[i] = generator.embedding_scale() * s.normal();
    return e;
}

const char* to_string(OptimizationStatus status) {
    switch (status) {
        case OptimizationStatus::Converged: return "converged";
        case OptimizationStatus::MaxIterations: return "max_iterations";
        case OptimizationStatus::Failed: return "failed";
    }
    return "failed";
}

OptimizationResult optimize(const Pipeline& pipeline, const PromptSpec& spec, const OptimizerConfig& cfg,
                            const IterationObserver& observer) {
    if (auto err = validate(spec)) throw InvalidInput(*err);
    if (auto err = validate(cfg)) throw InvalidInput(*err);
    const auto& gen = *pipeline.generator;
    if (!gen.differentiable()) {
        throw GenerationError("generator '" + gen.name() + "' does not pass gradients to the counting token");
    }

    const auto prompt = gen.encode_prompt(spec);
    TokenEmbedding e = initial_token(gen, cfg.seed);

    OptimizationResult res;
    res.status = OptimizationStatus::MaxIterations;
    bool all_degenerate = true;
    for (int k = 0; k < cfg.max_iterations; ++k) {
        auto tl = token_loss_and_grad(pipeline, prompt, e, spec, cfg);
        const auto& ev = tl.evaluation;

        IterationRecord rec;
        rec.index = k;
        rec.count_estimate = ev.count;
        rec.detector_count = ev.detector_count;
        rec.loss = ev.loss;
        rec.scale = ev.scale;
        rec.static_fallback = ev.static_fallback;
        rec.semantic_cosine = ev.semantic.cosine;
        rec.counting_error = std::abs(ev.count.value - spec.target_count);
        rec.embedding_norm = e.norm();
        rec.embedding.assign(e.values().begin(), e.values().end());
        rec.image_ref = "images/iter_" + std::to_string(k) + ".ppm";
        if (observer) observer(rec, tl.image);

        all_degenerate = all_degenerate && ev.degenerate;
        if (res.best_index < 0 || rec.counting_error < res.trace[res.best_index].counting_error) res.best_index = k;
        res.trace.push_back(std::move(rec));

        if (ev.loss.counting <= cfg.stop_threshold) {
            res.status = OptimizationStatus::Converged;
            break;
        }
        if (k + 1 == cfg.max_iterations) break;
        try {
            e = update_token(e, tl.grad, ev.loss.total, cfg);
        } catch (const NonFiniteGradient& ex) {
            res.status = OptimizationStatus::Failed;
            res.diagnostic = std::string("iteration ") + std::to_string(k) + ": " + ex.what();
            break;
        }
    }
    if (all_degenerate && res.status != OptimizationStatus::Converged) {
        res.status = OptimizationStatus::Failed;
        res.diagnostic = "every iteration produced a degenerate potential map";
    }

    const auto& best = res.trace[res.best_index];
    res.token.embedding = TokenEmbedding(best.embedding);
    res.token.class_name = spec.class_name;
    res.token.target_count = spec.target_count;
    res.token.final_counting_error = best.counting_error;
    res.token.iterations_used = static_cast<int>(res.trace.size());
    res.token.config_snapshot = cfg;
    return res;
}

ImageTensor reuse_token(const Pipeline& pipeline, const TokenRecord& token, const PromptSpec& spec,
                        std::uint64_t seed) {
    const auto& gen = *pipeline.generator;
    if (token.embedding.dim() != gen.embedding_dim()) {
        throw IncompatibleToken("token has dimension " + std::to_string(token.embedding.dim()) + ", generator '" +
                                gen.name() + "' expects " + std::to_string(gen.embedding_dim()));
    }
    if (auto err = validate(spec)) throw InvalidInput(*err);
    const auto seq = append_count_token(gen.encode_prompt(spec), token.embedding);
    return gen.generate(seq, seed).image;
}

// ---------------------------------------------------------------------------
// Token file
// ---------------------------------------------------------------------------

namespace {

static_assert(std::endian::native == std::endian::little, "token files are written in native little-endian order");

constexpr char kMagic[4] = {'C', 'T', 'O', 'K'};

template <typename T>
void put(std::string& buf, T v) {
    char raw[sizeof(T)];
    std::memcpy(raw, &v, sizeof(T));
    buf.append(raw, sizeof(T));
}

void put_string(std::string& buf, const std::string& s) {
    put<std::uint32_t>(buf, static_cast<std::uint32_t>(s.size()));
    buf += s;
}

class Reader {
public:
    explicit Reader(const std::string& data) : data_(data) {}

    template <typename T>
    T get() {
        need(sizeof(T));
        T v;
        std::memcpy(&v, data_.data() + pos_, sizeof(T));
        pos_ += sizeof(T);
        return v;
    }

    std::string get_string() {
        const auto n = get<std::uint32_t>();
        need(n);
        std::string s = data_.substr(pos_, n);
        pos_ += n;
        return s;
    }

    std::size_t pos() const { return pos_; }

private:
    void need(std::size_t n) const {
        if (data_.size() - pos_ < n) throw ChecksumError("token file is truncated");
    }

    const std::string& data_;
    std::size_t pos_ = 0;
};

std::uint32_t checksum(const char* data, std::size_t n) {
    return static_cast<std::uint32_t>(crc32(0L, reinterpret_cast<const Bytef*>(data), static_cast<uInt>(n)));
}

}  // namespace

void save_token(const TokenRecord& token, const std::filesystem::path& path) {
    if (auto err = validate(token)) throw InvalidInput("refusing to save invalid token: " + *err);
    std::string buf(kMagic, 4);
    put<std::uint32_t>(buf, token.format_version);
    put<std::uint32_t>(buf, static_cast<std::uint32_t>(token.embedding.dim()));
    put<std::uint32_t>(buf, static_cast<std::uint32_t>(token.target_count));
    put<std::uint32_t>(buf, static_cast<std::uint32_t>(token.iterations_used));
    put<double>(buf, token.final_counting_error);
    put_string(buf, token.class_name);
    put_string(buf, nlohmann::json(token.config_snapshot).dump());
    for (double v : token.embedding.values()) put<double>(buf, v);
    put<std::uint32_t>(buf, checksum(buf.data(), buf.size()));

    // Write-then-rename so concurrent readers never see a partial file.
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw InvalidInput("cannot write token file " + tmp.string());
        out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
        if (!out) throw InvalidInput("failed writing token file " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

TokenRecord load_token(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InvalidInput("cannot open token file " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    const std::string data = ss.str();

    if (data.size() < 8) throw ChecksumError("token file is truncated");
    if (std::memcmp(data.data(), kMagic, 4) != 0) throw UnsupportedFormat(path.string() + " is not a token file");
    std::uint32_t version;
    std::memcpy(&version, data.data() + 4, 4);
    if (version != kTokenFormatVersion) {
        throw UnsupportedFormat("token format version " + std::to_string(version) + " is not supported (expected " +
                                std::to_string(kTokenFormatVersion) + ")");
    }
    if (data.size() < 12) throw ChecksumError("token file is truncated");
    std::uint32_t stored;
    std::memcpy(&stored, data.data() + data.size() - 4, 4);
    if (checksum(data.data(), data.size() - 4) != stored) throw ChecksumError("token file checksum mismatch");

    const std::string body = data.substr(0, data.size() - 4);
    Reader r(body);
    r.get<std::uint32_t>();  // magic
    TokenRecord t;
    t.format_version = r.get<std::uint32_t>();
    const auto d = r.get<std::uint32_t>();
    t.target_count = static_cast<int>(r.get<std::uint32_t>());
    t.iterations_used = static_cast<int>(r.get<std::uint32_t>());
    t.final_counting_error = r.get<double>();
    t.class_name = r.get_string();
    try {
        t.config_snapshot = nlohmann::json::parse(r.get_string()).get<OptimizerConfig>();
    } catch (const nlohmann::json::exception& ex) {
        throw ChecksumError(std::string("token config snapshot is unreadable: ") + ex.what());
    }
    std::vector<double> values(d);
    for (auto& v : values) v = r.get<double>();
    if (r.pos() != body.size()) throw ChecksumError("token file has trailing bytes");
    t.embedding = TokenEmbedding(std::move(values));
    return t;
}

void write_trace(const std::vector<IterationRecord>& trace, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw InvalidInput("cannot write trace " + path.string());
    for (const auto& rec : trace) out << nlohmann::json(rec).dump() << '\n';
}

void write_ppm(const ImageTensor& image, const std::filesystem::path& path) {
    if (image.channels() != 3) throw InvalidInput("PPM output needs a 3-channel image");
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw InvalidInput("cannot write image " + path.string());
    out << "P6\n" << image.width() << ' ' << image.height() << "\n255\n";
    std::string bytes(image.size(), '\0');
    const auto px = image.data();
    for (std::size_t i = 0; i < px.size(); ++i) {
        bytes[i] = static_cast<char>(static_cast<unsigned char>(std::lround(std::clamp(px[i], 0.0, 1.0) * 255.0)));
    }
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace ctok
