#include "ctok/synthetic.hpp"

#include <algorithm>
#include <boost/math/distributions/normal.hpp>
#include <cctype>
#include <cmath>
#include <numeric>
#include <set>

#include "ctok/errors.hpp"
#include "ctok/rng.hpp"

namespace ctok {
namespace {

double logistic(double x) {
    return 1.0 / (1.0 + std::exp(-x));
}

std::vector<double> normal_vector(std::uint64_t seed, int n) {
    Sampler s(seed);
    std::vector<double> v(n);
    for (auto& x : v) x = s.normal();
    return v;
}

std::array<double, 3> normal3(std::uint64_t seed) {
    Sampler s(seed);
    return {s.normal(), s.normal(), s.normal()};
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
    return std::inner_product(a.begin(), a.end(), b.begin(), 0.0);
}

}  // namespace

// ---------------------------------------------------------------------------
// Vocabulary
// ---------------------------------------------------------------------------

SyntheticVocabulary::SyntheticVocabulary(SyntheticParams params, std::map<std::string, std::string> taxonomy)
    : params_(params), taxonomy_(std::move(taxonomy)) {
    const int d = params_.embedding_dim;
    if (d < 5) throw InvalidInput("synthetic embedding dimension must be at least 5");

    // Orthonormal frame: one count direction plus a three-dimensional hue subspace.
    std::array<std::vector<double>, 4> frame;
    for (int k = 0; k < 4; ++k) {
        frame[k] = normal_vector(mix_seed(fnv1a64("ctok/structure"), k), d);
        for (int j = 0; j < k; ++j) {
            const double p = dot(frame[k], frame[j]);
            for (int i = 0; i < d; ++i) frame[k][i] -= p * frame[j][i];
        }
        const double n = std::sqrt(dot(frame[k], frame[k]));
        for (auto& x : frame[k]) x /= n;
    }
    count_dir_ = frame[0];
    hue_basis_ = {frame[1], frame[2], frame[3]};
}

std::map<std::string, std::string> SyntheticVocabulary::default_taxonomy() {
    return {
        {"apples", "fruits"},   {"strawberries", "fruits"}, {"tomatoes", "fruits"}, {"oranges", "fruits"},
        {"crows", "birds"},     {"pigeons", "birds"},       {"seagulls", "birds"},
        {"zebras", "mammals"},  {"horses", "mammals"},      {"cows", "mammals"},
    };
}

std::vector<std::string> SyntheticVocabulary::tokenize(const std::string& text) {
    std::vector<std::string> words;
    std::string cur;
    auto flush = [&] {
        auto keep = [](unsigned char c) { return std::isalnum(c) || c == '&' || c == '\''; };
        std::size_t b = 0, e = cur.size();
        while (b < e && !keep(static_cast<unsigned char>(cur[b]))) ++b;
        while (e > b && !keep(static_cast<unsigned char>(cur[e - 1]))) --e;
        if (e > b) words.push_back(cur.substr(b, e - b));
        cur.clear();
    };
    for (char ch : text) {
        if (std::isspace(static_cast<unsigned char>(ch))) {
            flush();
        } else {
            cur += static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
        }
    }
    flush();
    return words;
}

bool SyntheticVocabulary::is_stop_word(const std::string& word) {
    static const std::set<std::string> stop = {"a",  "an", "the",  "photo", "of", "and",     "in",
                                               "on", "at", "with", "by",    "to", "picture", "image"};
    return stop.count(word) > 0;
}

bool SyntheticVocabulary::is_number(const std::string& word) {
    return !word.empty() && word.size() <= 9 &&
           std::all_of(word.begin(), word.end(), [](unsigned char c) { return std::isdigit(c); });
}

std::string SyntheticVocabulary::group_of(const std::string& word) const {
    auto it = taxonomy_.find(word);
    return it == taxonomy_.end() ? word : it->second;
}

void SyntheticVocabulary::project_out_structure(std::vector<double>& v) const {
    auto remove = [&](const std::vector<double>& dir) {
        const double p = dot(v, dir);
        for (std::size_t i = 0; i < v.size(); ++i) v[i] -= p * dir[i];
    };
    remove(count_dir_);
    for (const auto& h : hue_basis_) remove(h);
}

double SyntheticVocabulary::number_shift(int n) const {
    const double m = params_.slots;
    double target = params_.number_overshoot_slope * n + params_.number_overshoot_offset;
    target = std::clamp(target, 0.5, m - 2.0);
    const boost::math::normal_distribution<double> standard;
    return params_.nominal_logit_spread * boost::math::quantile(standard, target / m);
}

std::array<double, 3> SyntheticVocabulary::palette_logits(const std::string& word) const {
    if (is_stop_word(word) || is_number(word)) return {0.0, 0.0, 0.0};
    const double sd = params_.palette_std;
    auto own = normal3(fnv1a64("palette:" + word));
    auto it = taxonomy_.find(word);
    if (it == taxonomy_.end()) return {sd * own[0], sd * own[1], sd * own[2]};
    auto grp = normal3(fnv1a64("palette-group:" + it->second));
    const double mix = params_.palette_class_mix;
    return {sd * (grp[0] + mix * own[0]), sd * (grp[1] + mix * own[1]), sd * (grp[2] + mix * own[2])};
}

std::array<double, 3> SyntheticVocabulary::text_hue_logits(const std::string& text) const {
    std::array<double, 3> y{};
    for (const auto& w : tokenize(text)) {
        const auto p = palette_logits(w);
        for (int c = 0; c < 3; ++c) y[c] += p[c];
    }
    return y;
}

TokenEmbedding SyntheticVocabulary::embed(const std::string& word) const {
    const int d = params_.embedding_dim;
    const double s = params_.embedding_scale;
    std::vector<double> n = normal_vector(fnv1a64("word:" + word), d);

    if (is_number(word)) {
        project_out_structure(n);
        const double along = number_shift(std::stoi(word)) / params_.count_gain;
        for (int i = 0; i < d; ++i) n[i] = s * n[i] + along * count_dir_[i];
        return TokenEmbedding(std::move(n));
    }
    if (is_stop_word(word)) {
        project_out_structure(n);
        for (auto& x : n) x *= s;
        return TokenEmbedding(std::move(n));
    }

    const std::string group = group_of(word);
    if (group != word) {
        const auto g = normal_vector(fnv1a64("group:" + group), d);
        const double rho = params_.group_mix;
        const double norm = std::sqrt(1.0 + rho * rho);
        for (int i = 0; i < d; ++i) n[i] = (g[i] + rho * n[i]) / norm;
    }
    project_out_structure(n);
    const auto pal = palette_logits(word);
    for (int i = 0; i < d; ++i) {
        n[i] *= params_.class_amplitude * s;
        for (int c = 0; c < 3; ++c) n[i] += pal[c] * hue_basis_[c][i];
    }
    return TokenEmbedding(std::move(n));
}

std::array<double, 3> hue_to_color(const std::array<double, 3>& logits, double luminance) {
    std::array<double, 3> h;
    for (int c = 0; c < 3; ++c) h[c] = logistic(logits[c]);
    const double m = (h[0] + h[1] + h[2]) / 3.0;
    return {luminance * h[0] / m, luminance * h[1] / m, luminance * h[2] / m};
}

// ---------------------------------------------------------------------------
// Scene
// ---------------------------------------------------------------------------

std::optional<std::string> validate(const SyntheticSceneParams& params, int height, int width) {
    if (params.slot_activations.size() != params.slot_centers.size()) {
        return "activation and center counts differ";
    }
    for (double a : params.slot_activations) {
        if (!(a > 0.0 && a < 1.0)) return "slot activations must lie in (0,1)";
    }
    for (const auto& [r, c] : params.slot_centers) {
        if (r < 0.0 || r >= height || c < 0.0 || c >= width) return "slot centers must lie inside the image";
    }
    if (!(params.slot_radius > 0.0)) return "slot radius must be positive";
    return std::nullopt;
}

int oracle_count(const SyntheticSceneParams& params) {
    return static_cast<int>(std::count_if(params.slot_activations.begin(), params.slot_activations.end(),
                                          [](double a) { return a > 0.5; }));
}

// ---------------------------------------------------------------------------
// Generator
// ---------------------------------------------------------------------------

SyntheticGenerator::SyntheticGenerator(SyntheticParams params)
    : SyntheticGenerator(params, SyntheticVocabulary::default_taxonomy()) {}

SyntheticGenerator::SyntheticGenerator(SyntheticParams params, std::map<std::string, std::string> taxonomy)
    : params_(params), vocab_(params, std::move(taxonomy)) {
    const int d = params_.embedding_dim;
    const int len = params_.context_length + 1;
    const int m = params_.slots;
    if (params_.context_length < 1 || m < 1 || params_.height < 8 || params_.width < 8 ||
        !(params_.blob_radius > 0.0)) {
        throw InvalidInput("invalid synthetic backend parameters");
    }
    flat_dim_ = static_cast<std::size_t>(len) * d;

    Sampler rng(mix_seed(params_.scene_seed, fnv1a64("ctok/scene")));
    const auto& u = vocab_.count_direction();
    const auto& hue = vocab_.hue_basis();

    weights_.assign(static_cast<std::size_t>(m) * flat_dim_, 0.0);
    std::vector<double> g(d);
    for (int j = 0; j < m; ++j) {
        for (int p = 0; p < len; ++p) {
            for (auto& x : g) x = rng.normal();
            const bool token = (p == params_.context_length);
            // Prompt words only reach the slots through their non-structural
            // part; the count token additionally gets a direct random path.
            if (!token) vocab_.project_out_structure(g);
            const double w = token ? params_.token_weight : params_.prompt_weight;
            double* row = &weights_[j * flat_dim_ + static_cast<std::size_t>(p) * d];
            for (int i = 0; i < d; ++i) row[i] = w * g[i] + params_.count_gain * u[i];
        }
    }

    hue_weights_.assign(3 * flat_dim_, 0.0);
    for (int c = 0; c < 3; ++c) {
        for (int p = 0; p < len; ++p) {
            const double gain = (p == params_.context_length) ? params_.token_hue_gain : 1.0;
            for (int i = 0; i < d; ++i) hue_weights_[c * flat_dim_ + static_cast<std::size_t>(p) * d + i] = gain * hue[c][i];
        }
    }

    bias_.resize(m);
    for (auto& b : bias_) b = params_.bias_mean + params_.bias_std * rng.normal();

    // Jittered grid: smallest grid with at least m cells, surplus cells dropped.
    const int cols = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(m) * params_.width / params_.height)));
    const int rows = (m + cols - 1) / cols;
    std::vector<int> cells(rows * cols);
    std::iota(cells.begin(), cells.end(), 0);
    while (static_cast<int>(cells.size()) > m) {
        cells.erase(cells.begin() + static_cast<long>(rng.next() % cells.size()));
    }
    const double ch = static_cast<double>(params_.height) / rows;
    const double cw = static_cast<double>(params_.width) / cols;
    for (int cell : cells) {
        const int r = cell / cols, c = cell % cols;
        const double cr = (r + 0.5) * ch + rng.uniform(-0.2, 0.2) * ch;
        const double cc = (c + 0.5) * cw + rng.uniform(-0.2, 0.2) * cw;
        centers_.emplace_back(cr, cc);
    }

    const double sigma = params_.blob_sigma();
    const double cutoff = 4.0 * sigma;
    for (const auto& [cr, cc] : centers_) {
        Blob b;
        b.row0 = std::max(0, static_cast<int>(std::floor(cr - cutoff)));
        b.col0 = std::max(0, static_cast<int>(std::floor(cc - cutoff)));
        const int r1 = std::min(params_.height - 1, static_cast<int>(std::ceil(cr + cutoff)));
        const int c1 = std::min(params_.width - 1, static_cast<int>(std::ceil(cc + cutoff)));
        b.rows = r1 - b.row0 + 1;
        b.cols = c1 - b.col0 + 1;
        b.weights.resize(static_cast<std::size_t>(b.rows) * b.cols);
        for (int y = 0; y < b.rows; ++y) {
            for (int x = 0; x < b.cols; ++x) {
                const double dy = b.row0 + y - cr, dx = b.col0 + x - cc;
                const double d2 = dy * dy + dx * dx;
                b.weights[y * b.cols + x] = d2 > cutoff * cutoff ? 0.0 : std::exp(-d2 / (2.0 * sigma * sigma));
            }
        }
        blobs_.push_back(std::move(b));
    }
}

PromptEmbeddingSequence SyntheticGenerator::encode_prompt(const PromptSpec& spec) const {
    if (auto err = validate(spec)) throw InvalidInput(*err);
    PromptEmbeddingSequence seq;
    seq.text = spec.text();
    auto words = SyntheticVocabulary::tokenize(seq.text);
    if (static_cast<int>(words.size()) > params_.context_length) words.resize(params_.context_length);
    for (const auto& w : words) seq.tokens.push_back(vocab_.embed(w));
    while (static_cast<int>(seq.tokens.size()) < params_.context_length) {
        seq.tokens.emplace_back(static_cast<std::size_t>(params_.embedding_dim));
    }
    return seq;
}

std::vector<double> SyntheticGenerator::flatten(const PromptEmbeddingSequence& seq) const {
    if (seq.tokens.empty()) throw GenerationError("synthetic backend: empty embedding sequence");
    if (seq.length() > static_cast<std::size_t>(params_.context_length + 1)) {
        throw GenerationError("synthetic backend: sequence of length " + std::to_string(seq.length()) +
                              " exceeds the context (" + std::to_string(params_.context_length + 1) + ")");
    }
    std::vector<double> x(flat_dim_, 0.0);
    const std::size_t d = embedding_dim();
    for (std::size_t p = 0; p < seq.length(); ++p) {
        const auto& t = seq.tokens[p];
        if (t.dim() != d) {
            throw InvalidEmbedding("synthetic backend expects dimension " + std::to_string(d) + ", got " +
                                   std::to_string(t.dim()));
        }
        for (std::size_t i = 0; i < d; ++i) {
            if (!std::isfinite(t[i])) throw InvalidEmbedding("embedding entries must be finite");
            x[p * d + i] = t[i];
        }
    }
    return x;
}

std::vector<double> SyntheticGenerator::seed_noise(std::uint64_t seed) const {
    Sampler s(mix_seed(params_.scene_seed ^ 0x5EEDULL, seed));
    std::vector<double> n(params_.slots);
    for (auto& v : n) v = params_.seed_noise * s.normal();
    return n;
}

std::array<double, 3> SyntheticGenerator::hue_logits(const std::vector<double>& x) const {
    std::array<double, 3> y{};
    for (int c = 0; c < 3; ++c) {
        y[c] = std::inner_product(x.begin(), x.end(), hue_weights_.begin() + c * flat_dim_, 0.0);
    }
    return y;
}

std::vector<double> SyntheticGenerator::slot_logits(const PromptEmbeddingSequence& seq, std::uint64_t seed) const {
    const auto x = flatten(seq);
    auto z = seed_noise(seed);
    for (int j = 0; j < params_.slots; ++j) {
        z[j] += bias_[j] + std::inner_product(x.begin(), x.end(), weights_.begin() + j * flat_dim_, 0.0);
    }
    return z;
}

std::vector<double> SyntheticGenerator::token_weights(int slot) const {
    const std::size_t d = embedding_dim();
    const auto begin = weights_.begin() + slot * flat_dim_ + params_.context_length * d;
    return {begin, begin + static_cast<long>(d)};
}

SyntheticSceneParams SyntheticGenerator::synthetic_scene(const PromptEmbeddingSequence& seq, std::uint64_t seed) const {
    SyntheticSceneParams scene;
    const auto z = slot_logits(seq, seed);
    scene.slot_activations.resize(z.size());
    std::transform(z.begin(), z.end(), scene.slot_activations.begin(), logistic);
    scene.slot_centers = centers_;
    scene.slot_radius = params_.blob_radius;
    scene.color = hue_to_color(hue_logits(flatten(seq)), params_.luminance);
    return scene;
}

std::vector<double> SyntheticGenerator::intensity(const std::vector<double>& activations) const {
    std::vector<double> total(static_cast<std::size_t>(params_.height) * params_.width, 0.0);
    for (std::size_t j = 0; j < blobs_.size(); ++j) {
        const Blob& b = blobs_[j];
        const double a = activations[j];
        for (int y = 0; y < b.rows; ++y) {
            double* out = &total[static_cast<std::size_t>(b.row0 + y) * params_.width + b.col0];
            const double* w = &b.weights[static_cast<std::size_t>(y) * b.cols];
            for (int x = 0; x < b.cols; ++x) out[x] += a * w[x];
        }
    }
    return total;
}

ImageTensor SyntheticGenerator::render(const SyntheticSceneParams& scene) const {
    if (scene.slot_activations.size() != blobs_.size()) {
        throw GenerationError("scene has " + std::to_string(scene.slot_activations.size()) + " slots, backend has " +
                              std::to_string(blobs_.size()));
    }
    const auto total = intensity(scene.slot_activations);
    ImageTensor img(params_.height, params_.width, kChannels);
    auto px = img.data();
    for (std::size_t p = 0; p < total.size(); ++p) {
        for (int c = 0; c < kChannels; ++c) px[p * kChannels + c] = std::min(1.0, total[p] * scene.color[c]);
    }
    return img;
}

GenerationResult SyntheticGenerator::generate(const PromptEmbeddingSequence& seq, std::uint64_t seed) const {
    return {render(synthetic_scene(seq, seed)), true};
}

std::vector<TokenEmbedding> SyntheticGenerator::backward(const PromptEmbeddingSequence& seq, std::uint64_t seed,
                                                         const ImageTensor& upstream) const {
    if (upstream.height() != params_.height || upstream.width() != params_.width || upstream.channels() != kChannels) {
        throw InvalidInput("upstream gradient has the wrong shape");
    }
    const auto x = flatten(seq);
    const auto scene = synthetic_scene(seq, seed);
    const auto& a = scene.slot_activations;
    const auto& color = scene.color;
    const auto total = intensity(a);
    const auto up = upstream.data();

    // Pixel = min(1, I * color_c); the clamp passes no gradient.
    std::vector<double> d_intensity(total.size(), 0.0);
    std::array<double, 3> d_color{};
    for (std::size_t p = 0; p < total.size(); ++p) {
        for (int c = 0; c < kChannels; ++c) {
            if (total[p] * color[c] < 1.0) {
                const double g = up[p * kChannels + c];
                d_intensity[p] += g * color[c];
                d_color[c] += g * total[p];
            }
        }
    }

    std::vector<double> dz(blobs_.size(), 0.0);
    for (std::size_t j = 0; j < blobs_.size(); ++j) {
        const Blob& b = blobs_[j];
        double acc = 0.0;
        for (int y = 0; y < b.rows; ++y) {
            const double* di = &d_intensity[static_cast<std::size_t>(b.row0 + y) * params_.width + b.col0];
            const double* w = &b.weights[static_cast<std::size_t>(y) * b.cols];
            for (int xx = 0; xx < b.cols; ++xx) acc += w[xx] * di[xx];
        }
        dz[j] = acc * a[j] * (1.0 - a[j]);
    }

    // color = L * h / mean(h), h = logistic(y)
    const auto y = hue_logits(x);
    std::array<double, 3> h;
    for (int c = 0; c < 3; ++c) h[c] = logistic(y[c]);
    const double mean_h = (h[0] + h[1] + h[2]) / 3.0;
    const double dc_dot_h = d_color[0] * h[0] + d_color[1] * h[1] + d_color[2] * h[2];
    std::array<double, 3> dy;
    for (int c = 0; c < 3; ++c) {
        const double dh = params_.luminance * (d_color[c] / mean_h - dc_dot_h / (3.0 * mean_h * mean_h));
        dy[c] = dh * h[c] * (1.0 - h[c]);
    }

    std::vector<double> dx(flat_dim_, 0.0);
    for (std::size_t j = 0; j < dz.size(); ++j) {
        if (dz[j] == 0.0) continue;
        const double* row = &weights_[j * flat_dim_];
        for (std::size_t k = 0; k < flat_dim_; ++k) dx[k] += dz[j] * row[k];
    }
    for (int c = 0; c < 3; ++c) {
        const double* row = &hue_weights_[c * flat_dim_];
        for (std::size_t k = 0; k < flat_dim_; ++k) dx[k] += dy[c] * row[k];
    }

    const std::size_t d = embedding_dim();
    std::vector<TokenEmbedding> grads;
    grads.reserve(seq.length());
    for (std::size_t p = 0; p < seq.length(); ++p) {
        grads.emplace_back(std::vector<double>(dx.begin() + static_cast<long>(p * d),
                                               dx.begin() + static_cast<long>((p + 1) * d)));
    }
    return grads;
}

}  // namespace ctok
