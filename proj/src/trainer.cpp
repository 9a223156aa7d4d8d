#include "dpe/trainer.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <random>

#include "dpe/dp.hpp"
#include "dpe/hash.hpp"
#include "dpe/parallel.hpp"

namespace dpe {

void TrainConfig::validate() const {
    if (learning_rate <= 0.0 || !std::isfinite(learning_rate)) throw Error(ErrorCode::config, "learning rate must be positive");
    if (batch_size == 0) throw Error(ErrorCode::config, "batch size must be positive");
    if (grad_accumulation == 0) throw Error(ErrorCode::config, "gradient accumulation must be at least 1");
    if (dim == 0) throw Error(ErrorCode::config, "embedding width must be at least 1");
    if (!(dropout_p >= 0.0 && dropout_p <= 1.0)) throw Error(ErrorCode::config, "dropout probability must lie in [0,1]");
    if (clip_norm < 0.0) throw Error(ErrorCode::config, "clip norm must be non-negative");
    if (features.hash_bits == 0 || features.hash_bits > 30) throw Error(ErrorCode::config, "hash bits must lie in 1..30");
}

std::vector<std::string> source_tokens(CharView source, const BpeModel& source_bpe,
                                       const std::optional<DropoutConfig>& dropout) {
    std::vector<std::string> tokens;
    for (auto& word : segment_line_bpe(source, source_bpe.merges, source_bpe.vocab, dropout)) {
        for (auto& piece : word) tokens.push_back(std::move(piece));
    }
    return tokens;
}

namespace {

struct SentenceResult {
    double log_marginal = 0.0;
    std::size_t chars = 0;
    ScorerParams gradient;
};

[[noreturn]] void rethrow_with_line(const Error& e, std::size_t index) {
    throw Error(e.code(), "line " + std::to_string(index + 1) + ": " + e.what());
}

}  // namespace

TrainResult train(const std::vector<SentencePair>& corpus, const Vocabulary& target_vocab,
                  const BpeModel& source_bpe, const TrainConfig& cfg, std::ostream* log) {
    cfg.validate();
    if (corpus.empty()) throw Error(ErrorCode::config, "training corpus is empty");

    FeatureConfig features = cfg.features;
    features.use_source = cfg.mode == ScorerMode::conditional;
    auto scorer = LogLinearScorer::initialize(target_vocab.size(), cfg.dim, features, cfg.seed, cfg.init_scale);

    const auto start = std::chrono::steady_clock::now();
    TrainReport report;
    const std::size_t per_update = cfg.batch_size * cfg.grad_accumulation;

    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        const auto epoch_start = std::chrono::steady_clock::now();
        std::vector<std::size_t> order(corpus.size());
        std::iota(order.begin(), order.end(), 0);
        std::mt19937_64 shuffle_rng(derive_seed(cfg.seed, epoch, 0x5348));
        for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[shuffle_rng() % i]);

        double epoch_nll = 0.0;
        std::size_t epoch_chars = 0;
        for (std::size_t begin = 0; begin < order.size(); begin += per_update) {
            std::size_t end = std::min(order.size(), begin + per_update);
            auto results = parallel_map(end - begin, cfg.workers, [&](std::size_t i) {
                std::size_t index = order[begin + i];
                const auto& pair = corpus[index];
                try {
                    std::vector<std::string> src;
                    if (features.use_source) {
                        src = source_tokens(pair.source, source_bpe,
                                            DropoutConfig{cfg.dropout_p, derive_seed(cfg.seed, epoch, index)});
                    }
                    auto g = sentence_marginal_gradient(pair.target, target_vocab, scorer, src);
                    return SentenceResult{g.log_marginal, count_chars(pair.target), std::move(g.gradient)};
                } catch (const Error& e) {
                    rethrow_with_line(e, index);
                }
            });

            auto step = scorer.zero_gradient();
            std::size_t chars = 0;
            for (std::size_t i = 0; i < results.size(); ++i) {
                const auto& r = results[i];
                if (!std::isfinite(r.log_marginal)) {
                    throw Error(ErrorCode::non_finite_loss, "line " + std::to_string(order[begin + i] + 1) +
                                                                ": log marginal " + std::to_string(r.log_marginal) +
                                                                " in epoch " + std::to_string(epoch));
                }
                step.add_scaled(r.gradient, 1.0);
                chars += r.chars;
                epoch_nll -= r.log_marginal;
            }
            epoch_chars += chars;
            if (chars == 0) continue;
            step.scale(1.0 / static_cast<double>(chars));
            double norm = std::sqrt(step.squared_norm());
            if (!std::isfinite(norm)) {
                throw Error(ErrorCode::non_finite_loss, "gradient norm is not finite in epoch " + std::to_string(epoch));
            }
            double factor = cfg.learning_rate;
            if (cfg.clip_norm > 0.0 && norm > cfg.clip_norm) factor *= cfg.clip_norm / norm;
            scorer.mutable_params().add_scaled(step, factor);
        }
        if (!scorer.params().all_finite()) {
            throw Error(ErrorCode::non_finite_loss, "parameters diverged in epoch " + std::to_string(epoch));
        }

        double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - epoch_start).count();
        EpochRecord rec{epoch, epoch_chars ? epoch_nll / static_cast<double>(epoch_chars) : 0.0, cfg.learning_rate,
                        seconds};
        report.epochs.push_back(rec);
        if (log) {
            char buf[160];
            std::snprintf(buf, sizeof buf, "epoch=%zu nats_per_char=%.6f lr=%g wall_s=%.3f", rec.epoch,
                          rec.nats_per_char, rec.learning_rate, rec.wall_seconds);
            *log << buf << '\n';
        }
    }
    report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

    Checkpoint ckpt;
    ckpt.mode = cfg.mode;
    ckpt.features = features;
    ckpt.vocab_fingerprint = target_vocab.fingerprint();
    ckpt.seed = cfg.seed;
    ckpt.params = scorer.params();
    return {std::move(ckpt), std::move(report)};
}

double evaluate_nats_per_char(const std::vector<SentencePair>& corpus, const Vocabulary& target_vocab,
                              const BpeModel& source_bpe, const Scorer& scorer, std::size_t workers) {
    auto results = parallel_map(corpus.size(), workers, [&](std::size_t i) {
        const auto& pair = corpus[i];
        try {
            std::vector<std::string> src;
            if (scorer.feature_config().use_source) src = source_tokens(pair.source, source_bpe);
            return std::pair<double, std::size_t>{-sentence_log_marginal(pair.target, target_vocab, scorer, src),
                                                  count_chars(pair.target)};
        } catch (const Error& e) {
            rethrow_with_line(e, i);
        }
    });
    double nll = 0.0;
    std::size_t chars = 0;
    for (const auto& [n, c] : results) {
        nll += n;
        chars += c;
    }
    return chars ? nll / static_cast<double>(chars) : 0.0;
}

}  // namespace dpe
