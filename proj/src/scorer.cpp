#include "dpe/scorer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <limits>
#include <numbers>
#include <random>
#include <sstream>

#include "dpe/hash.hpp"

namespace dpe {

double log_sum_exp(std::span<const double> values) {
    double hi = -std::numeric_limits<double>::infinity();
    for (double v : values) hi = std::max(hi, v);
    if (!std::isfinite(hi)) return hi;
    double sum = 0.0;
    for (double v : values) sum += std::exp(v - hi);
    return hi + std::log(sum);
}

// ---------------------------------------------------------------------------

std::uint32_t feature_index(std::string_view name, const FeatureConfig& cfg) {
    auto h = mix64(fnv1a(name, fnv1a_u64(cfg.hash_seed)));
    return static_cast<std::uint32_t>(h & (cfg.hash_size() - 1));
}

FeatureVector canonicalize(std::vector<Feature> features) {
    std::sort(features.begin(), features.end(), [](const auto& a, const auto& b) { return a.index < b.index; });
    FeatureVector out;
    out.reserve(features.size());
    for (const auto& f : features) {
        if (!out.empty() && out.back().index == f.index) {
            out.back().value += f.value;
        } else {
            out.push_back(f);
        }
    }
    return out;
}

FeatureVector source_features(const std::vector<std::string>& source_tokens, const FeatureConfig& cfg) {
    if (!cfg.use_source) return {};
    std::vector<Feature> raw;
    raw.reserve(source_tokens.size());
    for (const auto& tok : source_tokens) raw.push_back({feature_index("src:" + tok, cfg), 1.0});
    return canonicalize(std::move(raw));
}

FeatureVector prefix_features(CharView target_prefix, const FeatureConfig& cfg) {
    std::vector<Feature> raw;
    raw.push_back({feature_index("bias", cfg), 1.0});
    auto window = target_prefix.substr(target_prefix.size() - std::min(target_prefix.size(), cfg.context_window));
    for (std::size_t n = 1; n <= cfg.max_order && n <= window.size(); ++n) {
        auto name = "suf" + std::to_string(n) + ":" + utf8_encode(window.substr(window.size() - n));
        raw.push_back({feature_index(name, cfg), 1.0});
        for (std::size_t i = 0; i + n <= window.size(); ++i) {
            auto gram = "ng" + std::to_string(n) + ":" + utf8_encode(window.substr(i, n));
            raw.push_back({feature_index(gram, cfg), 1.0});
        }
    }
    return canonicalize(std::move(raw));
}

ScorerContext make_context(const FeatureVector& prefix, const FeatureVector& source) {
    std::vector<Feature> all;
    all.reserve(prefix.size() + source.size());
    all.insert(all.end(), prefix.begin(), prefix.end());
    all.insert(all.end(), source.begin(), source.end());
    return {canonicalize(std::move(all))};
}

ScorerContext featurize_context(CharView target_prefix, const std::vector<std::string>& source_tokens,
                                const FeatureConfig& cfg) {
    return make_context(prefix_features(target_prefix, cfg), source_features(source_tokens, cfg));
}

// ---------------------------------------------------------------------------

ScorerParams ScorerParams::zeros(std::size_t vocab_size, std::size_t dim) {
    ScorerParams p;
    p.vocab_size = vocab_size;
    p.dim = dim;
    p.embeddings.assign(vocab_size * dim, 0.0);
    return p;
}

std::vector<double>& ScorerParams::weights(std::uint32_t i) {
    auto it = feature_weights.find(i);
    if (it == feature_weights.end()) it = feature_weights.emplace(i, std::vector<double>(dim, 0.0)).first;
    return it->second;
}

const std::vector<double>* ScorerParams::find_weights(std::uint32_t i) const {
    auto it = feature_weights.find(i);
    return it == feature_weights.end() ? nullptr : &it->second;
}

void ScorerParams::add_scaled(const ScorerParams& other, double scale) {
    if (other.empty()) return;
    if (other.dim != dim || other.vocab_size != vocab_size) {
        throw Error(ErrorCode::config, "parameter shapes differ");
    }
    for (std::size_t i = 0; i < embeddings.size(); ++i) embeddings[i] += scale * other.embeddings[i];
    // Sorted traversal keeps row creation order, and hence the result, independent of hashing.
    std::vector<std::uint32_t> keys;
    keys.reserve(other.feature_weights.size());
    for (const auto& [k, _] : other.feature_weights) keys.push_back(k);
    std::sort(keys.begin(), keys.end());
    for (auto k : keys) {
        const auto& src = other.feature_weights.at(k);
        auto& dst = weights(k);
        for (std::size_t c = 0; c < dim; ++c) dst[c] += scale * src[c];
    }
}

void ScorerParams::scale(double factor) {
    for (auto& v : embeddings) v *= factor;
    for (auto& [_, row] : feature_weights) {
        for (auto& v : row) v *= factor;
    }
}

double ScorerParams::squared_norm() const {
    double s = 0.0;
    for (double v : embeddings) s += v * v;
    std::vector<std::uint32_t> keys;
    for (const auto& [k, _] : feature_weights) keys.push_back(k);
    std::sort(keys.begin(), keys.end());
    for (auto k : keys) {
        for (double v : feature_weights.at(k)) s += v * v;
    }
    return s;
}

bool ScorerParams::all_finite() const {
    auto finite = [](double v) { return std::isfinite(v); };
    if (!std::all_of(embeddings.begin(), embeddings.end(), finite)) return false;
    for (const auto& [_, row] : feature_weights) {
        if (!std::all_of(row.begin(), row.end(), finite)) return false;
    }
    return true;
}

bool ScorerParams::same_values(const ScorerParams& other) const {
    if (vocab_size != other.vocab_size || dim != other.dim || embeddings != other.embeddings) return false;
    auto covered = [](const ScorerParams& a, const ScorerParams& b) {
        for (const auto& [k, row] : a.feature_weights) {
            const auto* theirs = b.find_weights(k);
            if (theirs) {
                if (*theirs != row) return false;
            } else if (std::any_of(row.begin(), row.end(), [](double v) { return v != 0.0; })) {
                return false;
            }
        }
        return true;
    };
    return covered(*this, other) && covered(other, *this);
}

// ---------------------------------------------------------------------------

std::string_view to_string(ScorerMode mode) noexcept {
    return mode == ScorerMode::conditional ? "conditional" : "lm";
}

ScorerMode parse_scorer_mode(std::string_view text) {
    if (text == "conditional") return ScorerMode::conditional;
    if (text == "lm" || text == "unconditional" || text == "unconditional-lm") return ScorerMode::language_model;
    throw Error(ErrorCode::config, "unknown scorer mode '" + std::string(text) + "'");
}

LogitsRow Scorer::row(const ScorerContext& ctx) const {
    LogitsRow out(vocab_size());
    log_probs(ctx, out);
    return out;
}

double Scorer::log_prob(const ScorerContext& ctx, SubwordId w) const {
    return row(ctx).at(w);
}

const FeatureConfig& Scorer::feature_config() const {
    static const FeatureConfig defaults{};
    return defaults;
}

void Scorer::accumulate_gradient(const ScorerContext&, std::span<const WeightedTarget>, ScorerParams&) const {}

void UniformScorer::log_probs(const ScorerContext&, std::span<double> out) const {
    std::fill(out.begin(), out.end(), -std::log(static_cast<double>(vocab_size_)));
}

double UniformScorer::log_prob(const ScorerContext&, SubwordId) const {
    return -std::log(static_cast<double>(vocab_size_));
}

UnigramScorer::UnigramScorer(std::vector<double> counts, double smoothing) : log_probs_(counts.size()) {
    if (smoothing < 0.0) throw Error(ErrorCode::config, "negative smoothing");
    double total = 0.0;
    for (double c : counts) {
        if (c < 0.0) throw Error(ErrorCode::config, "negative count");
        total += c + smoothing;
    }
    if (total <= 0.0) throw Error(ErrorCode::config, "unigram scorer needs positive mass");
    for (std::size_t i = 0; i < counts.size(); ++i) log_probs_[i] = std::log((counts[i] + smoothing) / total);
}

void UnigramScorer::log_probs(const ScorerContext&, std::span<double> out) const {
    std::copy(log_probs_.begin(), log_probs_.end(), out.begin());
}

double UnigramScorer::log_prob(const ScorerContext&, SubwordId w) const {
    return log_probs_.at(w);
}

// ---------------------------------------------------------------------------

LogLinearScorer::LogLinearScorer(ScorerParams params, FeatureConfig features)
    : params_(std::move(params)), features_(features) {
    if (params_.dim == 0) throw Error(ErrorCode::config, "embedding width must be at least 1");
    if (params_.embeddings.size() != params_.vocab_size * params_.dim) {
        throw Error(ErrorCode::config, "embedding matrix has the wrong size");
    }
}

LogLinearScorer LogLinearScorer::initialize(std::size_t vocab_size, std::size_t dim, const FeatureConfig& features,
                                            std::uint64_t seed, double init_scale) {
    auto params = ScorerParams::zeros(vocab_size, dim);
    std::mt19937_64 rng(seed);
    // Box-Muller on raw 53-bit draws, so values do not depend on the
    // standard library's distribution implementation.
    auto unit = [&] { return (static_cast<double>(rng() >> 11) + 0.5) * 0x1.0p-53; };
    for (std::size_t i = 0; i < params.embeddings.size(); ++i) {
        double u1 = unit();
        double u2 = unit();
        params.embeddings[i] = init_scale * std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }
    return LogLinearScorer(std::move(params), features);
}

std::vector<double> LogLinearScorer::context_vector(const ScorerContext& ctx) const {
    std::vector<double> f(params_.dim, 0.0);
    for (const auto& feat : ctx.features) {
        const auto* w = params_.find_weights(feat.index);
        if (!w) continue;
        for (std::size_t c = 0; c < params_.dim; ++c) f[c] += feat.value * (*w)[c];
    }
    return f;
}

void LogLinearScorer::log_probs(const ScorerContext& ctx, std::span<double> out) const {
    auto f = context_vector(ctx);
    const std::size_t d = params_.dim;
    double hi = -std::numeric_limits<double>::infinity();
    for (std::size_t w = 0; w < params_.vocab_size; ++w) {
        const double* e = params_.embeddings.data() + w * d;
        double logit = 0.0;
        for (std::size_t c = 0; c < d; ++c) logit += f[c] * e[c];
        out[w] = logit;
        hi = std::max(hi, logit);
    }
    double sum = 0.0;
    for (std::size_t w = 0; w < params_.vocab_size; ++w) sum += std::exp(out[w] - hi);
    double norm = hi + std::log(sum);
    for (std::size_t w = 0; w < params_.vocab_size; ++w) out[w] -= norm;
}

ScorerParams LogLinearScorer::zero_gradient() const {
    return ScorerParams::zeros(params_.vocab_size, params_.dim);
}

void LogLinearScorer::accumulate_gradient(const ScorerContext& ctx, std::span<const WeightedTarget> targets,
                                          ScorerParams& grad) const {
    if (targets.empty()) return;
    if (grad.empty()) grad = zero_gradient();
    const std::size_t d = params_.dim;
    const std::size_t n = params_.vocab_size;

    auto f = context_vector(ctx);
    LogitsRow lp(n);
    log_probs(ctx, lp);

    // Target weights c_w and their total mass M; d/dlogit_u = c_u - M p_u.
    std::vector<double> coeff(n, 0.0);
    double mass = 0.0;
    for (const auto& t : targets) {
        coeff.at(t.id) += t.weight;
        mass += t.weight;
    }
    for (std::size_t u = 0; u < n; ++u) coeff[u] -= mass * std::exp(lp[u]);

    // d/de_u = coeff_u * f;  d/df = sum_u coeff_u e_u;  d/dW_i = value_i * d/df.
    std::vector<double> df(d, 0.0);
    for (std::size_t u = 0; u < n; ++u) {
        double cu = coeff[u];
        if (cu == 0.0) continue;
        const double* e = params_.embeddings.data() + u * d;
        double* ge = grad.embeddings.data() + u * d;
        for (std::size_t c = 0; c < d; ++c) {
            ge[c] += cu * f[c];
            df[c] += cu * e[c];
        }
    }
    for (const auto& feat : ctx.features) {
        auto& gw = grad.weights(feat.index);
        for (std::size_t c = 0; c < d; ++c) gw[c] += feat.value * df[c];
    }
}

ScorerParams LogLinearScorer::log_prob_grad(const ScorerContext& ctx, SubwordId w) const {
    auto grad = zero_gradient();
    WeightedTarget t{w, 1.0};
    accumulate_gradient(ctx, std::span<const WeightedTarget>(&t, 1), grad);
    return grad;
}

// ---------------------------------------------------------------------------

std::size_t CachingScorer::KeyHash::operator()(const FeatureVector& f) const noexcept {
    std::uint64_t h = fnv_offset;
    for (const auto& feat : f) {
        h = fnv1a_u64(feat.index, h);
        std::uint64_t bits = 0;
        static_assert(sizeof bits == sizeof feat.value);
        std::memcpy(&bits, &feat.value, sizeof bits);
        h = fnv1a_u64(bits, h);
    }
    return static_cast<std::size_t>(h);
}

void CachingScorer::log_probs(const ScorerContext& ctx, std::span<double> out) const {
    auto it = cache_.find(ctx.features);
    if (it == cache_.end()) {
        ++misses_;
        it = cache_.emplace(ctx.features, inner_.row(ctx)).first;
    } else {
        ++hits_;
    }
    std::copy(it->second.begin(), it->second.end(), out.begin());
}

// ---------------------------------------------------------------------------

namespace {

std::string hex(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%a", v);
    return buf;
}

double parse_hex(const std::string& token, const std::filesystem::path& path) {
    char* end = nullptr;
    double v = std::strtod(token.c_str(), &end);
    if (end == token.c_str() || *end != '\0') {
        throw Error(ErrorCode::format, path.string() + ": bad number '" + token + "'");
    }
    return v;
}

template <typename T>
T expect_field(std::istream& in, const std::string& name, const std::filesystem::path& path) {
    std::string key;
    T value{};
    if (!(in >> key) || key != name || !(in >> value)) {
        throw Error(ErrorCode::format, path.string() + ": expected field '" + name + "'");
    }
    return value;
}

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(ErrorCode::io, "cannot write checkpoint " + path.string());
    const auto& p = ckpt.params;
    out << checkpoint_magic << '\n';
    out << "mode " << to_string(ckpt.mode) << '\n';
    out << "vocab_size " << p.vocab_size << '\n';
    out << "dim " << p.dim << '\n';
    out << "hash_bits " << ckpt.features.hash_bits << '\n';
    out << "hash_seed " << ckpt.features.hash_seed << '\n';
    out << "context_window " << ckpt.features.context_window << '\n';
    out << "max_order " << ckpt.features.max_order << '\n';
    out << "use_source " << (ckpt.features.use_source ? 1 : 0) << '\n';
    out << "vocab_fingerprint " << ckpt.vocab_fingerprint << '\n';
    out << "seed " << ckpt.seed << '\n';
    out << "embeddings\n";
    for (std::size_t w = 0; w < p.vocab_size; ++w) {
        for (std::size_t c = 0; c < p.dim; ++c) out << (c ? " " : "") << hex(p.embeddings[w * p.dim + c]);
        out << '\n';
    }
    std::vector<std::uint32_t> keys;
    for (const auto& [k, _] : p.feature_weights) keys.push_back(k);
    std::sort(keys.begin(), keys.end());
    out << "weights " << keys.size() << '\n';
    for (auto k : keys) {
        out << k;
        for (double v : p.feature_weights.at(k)) out << ' ' << hex(v);
        out << '\n';
    }
    out << "end\n";
    if (!out) throw Error(ErrorCode::io, "write failed: " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::io, "cannot open checkpoint " + path.string());
    std::string magic;
    std::getline(in, magic);
    if (magic != checkpoint_magic) {
        throw Error(ErrorCode::format, path.string() + ": not a '" + std::string(checkpoint_magic) + "' checkpoint");
    }
    Checkpoint ckpt;
    ckpt.mode = parse_scorer_mode(expect_field<std::string>(in, "mode", path));
    auto vocab_size = expect_field<std::size_t>(in, "vocab_size", path);
    auto dim = expect_field<std::size_t>(in, "dim", path);
    ckpt.features.hash_bits = expect_field<std::uint32_t>(in, "hash_bits", path);
    ckpt.features.hash_seed = expect_field<std::uint64_t>(in, "hash_seed", path);
    ckpt.features.context_window = expect_field<std::size_t>(in, "context_window", path);
    ckpt.features.max_order = expect_field<std::size_t>(in, "max_order", path);
    ckpt.features.use_source = expect_field<int>(in, "use_source", path) != 0;
    ckpt.vocab_fingerprint = expect_field<std::uint64_t>(in, "vocab_fingerprint", path);
    ckpt.seed = expect_field<std::uint64_t>(in, "seed", path);
    if (ckpt.features.hash_bits == 0 || ckpt.features.hash_bits > 30) {
        throw Error(ErrorCode::format, path.string() + ": hash_bits out of range");
    }

    ckpt.params = ScorerParams::zeros(vocab_size, dim);
    std::string token;
    if (!(in >> token) || token != "embeddings") throw Error(ErrorCode::format, path.string() + ": missing embeddings");
    for (auto& v : ckpt.params.embeddings) {
        if (!(in >> token)) throw Error(ErrorCode::format, path.string() + ": truncated embeddings");
        v = parse_hex(token, path);
    }
    auto rows = expect_field<std::size_t>(in, "weights", path);
    for (std::size_t r = 0; r < rows; ++r) {
        std::uint32_t k = 0;
        if (!(in >> k) || k >= ckpt.features.hash_size()) {
            throw Error(ErrorCode::format, path.string() + ": bad weight row");
        }
        auto& row = ckpt.params.weights(k);
        for (auto& v : row) {
            if (!(in >> token)) throw Error(ErrorCode::format, path.string() + ": truncated weights");
            v = parse_hex(token, path);
        }
    }
    if (!(in >> token) || token != "end") throw Error(ErrorCode::format, path.string() + ": missing end marker");
    return ckpt;
}

}  // namespace dpe
