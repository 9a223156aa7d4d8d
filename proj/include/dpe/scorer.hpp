#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "dpe/core.hpp"

namespace dpe {

// ---------------------------------------------------------------------------
// Context featurization

struct FeatureConfig {
    std::size_t context_window = 8;  // characters of the prefix that are visible
    std::size_t max_order = 4;       // character n-gram orders 1..max_order
    std::uint32_t hash_bits = 18;
    std::uint64_t hash_seed = 0x64706531u;
    bool use_source = true;          // false: unconditional (language model) mode

    std::uint32_t hash_size() const noexcept { return 1u << hash_bits; }

    friend bool operator==(const FeatureConfig&, const FeatureConfig&) = default;
};

struct Feature {
    std::uint32_t index;
    double value;

    friend bool operator==(const Feature&, const Feature&) = default;
};

/// Sorted, duplicate-free sparse vector.
using FeatureVector = std::vector<Feature>;

/// Conditioning context for one prediction. Depends only on the characters
/// of the target prefix and on the source tokens, never on how the prefix
/// was segmented.
struct ScorerContext {
    FeatureVector features;

    friend bool operator==(const ScorerContext&, const ScorerContext&) = default;
};

/// Hash bucket of a named feature.
std::uint32_t feature_index(std::string_view name, const FeatureConfig& cfg);

/// Sums values of equal indices and sorts by index.
FeatureVector canonicalize(std::vector<Feature> features);

/// Bag of source subwords, "src:<token>" each with value 1 per occurrence.
/// Empty when cfg.use_source is false.
FeatureVector source_features(const std::vector<std::string>& source_tokens, const FeatureConfig& cfg);

/// Target-side features of a prefix: a bias, suffix n-grams "suf<n>:<chars>"
/// ending at the prefix end, and the bag "ng<n>:<chars>" of all n-grams inside
/// the last context_window characters.
FeatureVector prefix_features(CharView target_prefix, const FeatureConfig& cfg);

ScorerContext make_context(const FeatureVector& prefix, const FeatureVector& source);

ScorerContext featurize_context(CharView target_prefix, const std::vector<std::string>& source_tokens,
                                const FeatureConfig& cfg);

// ---------------------------------------------------------------------------
// Parameters

/// Output embeddings e (|V| x d, row-major) and hashed feature weights W
/// (one d-vector per touched bucket). The context vector is
/// f = sum_i value_i * W[index_i] and logit(w) = f . e(w).
struct ScorerParams {
    std::size_t vocab_size = 0;
    std::size_t dim = 0;
    std::vector<double> embeddings;
    std::unordered_map<std::uint32_t, std::vector<double>> feature_weights;

    static ScorerParams zeros(std::size_t vocab_size, std::size_t dim);

    std::span<double> embedding(SubwordId w) { return {embeddings.data() + w * dim, dim}; }
    std::span<const double> embedding(SubwordId w) const { return {embeddings.data() + w * dim, dim}; }

    /// Row for bucket i, created as zeros on first use.
    std::vector<double>& weights(std::uint32_t i);
    const std::vector<double>* find_weights(std::uint32_t i) const;

    bool empty() const noexcept { return dim == 0; }
    void add_scaled(const ScorerParams& other, double scale);
    void scale(double factor);
    double squared_norm() const;
    bool all_finite() const;

    /// Exact (bitwise) equality, treating missing W rows as zeros.
    bool same_values(const ScorerParams& other) const;
};

// ---------------------------------------------------------------------------
// Scorer contract

/// Row of log p(w | context) over the full vocabulary.
using LogitsRow = std::vector<double>;

struct WeightedTarget {
    SubwordId id;
    double weight;
};

enum class ScorerMode { conditional, language_model };

std::string_view to_string(ScorerMode mode) noexcept;
ScorerMode parse_scorer_mode(std::string_view text);

class Scorer {
public:
    virtual ~Scorer() = default;

    virtual std::size_t vocab_size() const = 0;

    /// Fills `out` (size vocab_size()) with normalized log-probabilities.
    virtual void log_probs(const ScorerContext& ctx, std::span<double> out) const = 0;

    LogitsRow row(const ScorerContext& ctx) const;
    virtual double log_prob(const ScorerContext& ctx, SubwordId w) const;

    /// Featurization the scorer expects its contexts to be built with.
    virtual const FeatureConfig& feature_config() const;

    virtual bool has_parameters() const { return false; }

    /// Adds sum_t weight_t * grad log p(id_t | ctx) into `grad`.
    /// Parameterless scorers leave `grad` untouched.
    virtual void accumulate_gradient(const ScorerContext& ctx, std::span<const WeightedTarget> targets,
                                     ScorerParams& grad) const;

    /// Zero-valued gradient buffer shaped like this scorer's parameters.
    virtual ScorerParams zero_gradient() const { return {}; }
};

class UniformScorer final : public Scorer {
public:
    explicit UniformScorer(std::size_t vocab_size) : vocab_size_(vocab_size) {}

    std::size_t vocab_size() const override { return vocab_size_; }
    void log_probs(const ScorerContext& ctx, std::span<double> out) const override;
    double log_prob(const ScorerContext& ctx, SubwordId w) const override;

private:
    std::size_t vocab_size_;
};

/// Context-free relative frequencies with add-k smoothing.
class UnigramScorer final : public Scorer {
public:
    UnigramScorer(std::vector<double> counts, double smoothing = 0.0);

    std::size_t vocab_size() const override { return log_probs_.size(); }
    void log_probs(const ScorerContext& ctx, std::span<double> out) const override;
    double log_prob(const ScorerContext& ctx, SubwordId w) const override;

private:
    std::vector<double> log_probs_;
};

/// Softmax over f(context) . e(w), the trainable scorer.
class LogLinearScorer final : public Scorer {
public:
    LogLinearScorer(ScorerParams params, FeatureConfig features);

    /// W = 0 and e drawn i.i.d. from N(0, init_scale^2) with a seeded
    /// generator. The resulting model is exactly uniform.
    static LogLinearScorer initialize(std::size_t vocab_size, std::size_t dim, const FeatureConfig& features,
                                      std::uint64_t seed, double init_scale = 0.1);

    std::size_t vocab_size() const override { return params_.vocab_size; }
    void log_probs(const ScorerContext& ctx, std::span<double> out) const override;
    const FeatureConfig& feature_config() const override { return features_; }

    bool has_parameters() const override { return true; }
    void accumulate_gradient(const ScorerContext& ctx, std::span<const WeightedTarget> targets,
                             ScorerParams& grad) const override;
    ScorerParams zero_gradient() const override;

    /// Gradient of log p(w | ctx) alone.
    ScorerParams log_prob_grad(const ScorerContext& ctx, SubwordId w) const;

    const ScorerParams& params() const noexcept { return params_; }
    ScorerParams& mutable_params() noexcept { return params_; }

private:
    std::vector<double> context_vector(const ScorerContext& ctx) const;

    ScorerParams params_;
    FeatureConfig features_;
};

/// Memoizes rows by context. Not thread-safe; give each worker its own.
class CachingScorer final : public Scorer {
public:
    explicit CachingScorer(const Scorer& inner) : inner_(inner) {}

    std::size_t vocab_size() const override { return inner_.vocab_size(); }
    void log_probs(const ScorerContext& ctx, std::span<double> out) const override;
    const FeatureConfig& feature_config() const override { return inner_.feature_config(); }
    bool has_parameters() const override { return inner_.has_parameters(); }
    void accumulate_gradient(const ScorerContext& ctx, std::span<const WeightedTarget> targets,
                             ScorerParams& grad) const override {
        inner_.accumulate_gradient(ctx, targets, grad);
    }
    ScorerParams zero_gradient() const override { return inner_.zero_gradient(); }

    std::size_t hits() const noexcept { return hits_; }
    std::size_t misses() const noexcept { return misses_; }
    void clear() { cache_.clear(); }

private:
    struct KeyHash {
        std::size_t operator()(const FeatureVector& f) const noexcept;
    };
    struct KeyEq {
        bool operator()(const FeatureVector& a, const FeatureVector& b) const noexcept { return a == b; }
    };

    const Scorer& inner_;
    mutable std::unordered_map<FeatureVector, LogitsRow, KeyHash, KeyEq> cache_;
    mutable std::size_t hits_ = 0;
    mutable std::size_t misses_ = 0;
};

// ---------------------------------------------------------------------------
// Checkpoints

struct Checkpoint {
    ScorerMode mode = ScorerMode::conditional;
    FeatureConfig features;
    std::uint64_t vocab_fingerprint = 0;
    std::uint64_t seed = 0;
    ScorerParams params;
};

inline constexpr std::string_view checkpoint_magic = "dpe-scorer 1";

/// Text format with hexadecimal floats, so values round-trip bit-exactly.
/// W rows are written in increasing bucket order.
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

double log_sum_exp(std::span<const double> values);

}  // namespace dpe
