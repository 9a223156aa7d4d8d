// End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
// exits non-zero if any fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <unistd.h>

#include "dpe/analysis.hpp"
#include "dpe/dp.hpp"
#include "dpe/lattice.hpp"
#include "dpe/pipeline.hpp"
#include "dpe/trainer.hpp"
#include "oracle.hpp"
#include "synthetic.hpp"

using namespace dpe;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t) {
    return std::chrono::duration<double>(Clock::now() - t).count();
}

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

std::unique_ptr<Scorer> random_scorer(std::mt19937_64& rng, std::size_t vocab_size, int kind) {
    switch (kind) {
        case 0:
            return std::make_unique<UniformScorer>(vocab_size);
        case 1: {
            std::vector<double> counts(vocab_size);
            for (auto& c : counts) c = 1.0 + static_cast<double>(rng() % 20);
            return std::make_unique<UnigramScorer>(counts);
        }
        default:
            return std::make_unique<LogLinearScorer>(oracle::random_loglinear(rng, vocab_size, 1 + rng() % 6));
    }
}

// ---------------------------------------------------------------------------
// 1 and 2: marginal and Viterbi against brute force

std::pair<Outcome, Outcome> oracle_equivalence() {
    const auto start = Clock::now();
    std::mt19937_64 rng(20200705);
    const std::size_t trials = 1200;
    std::size_t marginal_ok = 0, viterbi_ok = 0, unsegmentable = 0;
    double worst = 0.0;
    const CharSequence alphabets[] = {U"ab", U"abc", U"abcd"};
    for (std::size_t t = 0; t < trials; ++t) {
        const auto& alphabet = alphabets[rng() % 3];
        auto vocab = oracle::random_vocab(rng, alphabet, rng() % 12, 2 + rng() % 4);
        // Occasionally drop a character so some strings are unsegmentable.
        if (rng() % 10 == 0) {
            auto entries = vocab.entries();
            entries.erase(entries.begin());
            if (!entries.empty()) vocab = Vocabulary(entries);
        }
        auto y = oracle::random_string(rng, 1 + rng() % 12, alphabet);
        auto scorer = random_scorer(rng, vocab.size(), static_cast<int>(rng() % 3));

        auto segs = enumerate_segmentations(y, vocab);
        if (segs.empty()) {
            ++unsegmentable;
            bool threw = false;
            try {
                log_marginal(y, vocab, *scorer);
            } catch (const Error& e) {
                threw = e.code() == ErrorCode::unsegmentable;
            }
            marginal_ok += threw;
            viterbi_ok += threw;
            continue;
        }
        std::vector<double> scores;
        for (const auto& z : segs) scores.push_back(oracle::joint_log_prob(y, z, vocab, *scorer));
        double brute = oracle::log_sum_exp(scores);
        double err = std::abs(log_marginal(y, vocab, *scorer) - brute);
        worst = std::max(worst, err);
        marginal_ok += err <= 1e-9;

        auto best = oracle::argmax(y, vocab, *scorer);
        auto got = viterbi_segment(y, vocab, *scorer);
        viterbi_ok += got.segmentation == best.z;
    }
    double elapsed = seconds_since(start);
    Outcome marginal{marginal_ok == trials && elapsed < 60.0,
                     fmt("%zu/%zu triples within 1e-9 (max abs err %.2e, %zu unsegmentable), %.1f s", marginal_ok,
                         trials, worst, unsegmentable, elapsed)};
    Outcome viterbi{viterbi_ok == trials, fmt("%zu/%zu exact argmax matches", viterbi_ok, trials)};
    return {marginal, viterbi};
}

// ---------------------------------------------------------------------------
// 3: worked example

Outcome cat_example() {
    Vocabulary v({U"c", U"a", U"t", U"at", U"ca"});
    auto segs = enumerate_segmentations(U"cat", v);
    std::vector<Segmentation> expected{{{0, 1, 2, 3}}, {{0, 1, 3}}, {{0, 2, 3}}};
    bool enum_ok = segs == expected;
    bool rejects = !validate_segmentation(U"cat", Segmentation{{0, 3}}, v);
    double lm = log_marginal(U"cat", v, UniformScorer(5));
    double target = std::log(2.0 * std::pow(5.0, -2) + std::pow(5.0, -3));
    double err = std::abs(lm - target);
    return {enum_ok && rejects && err <= 1e-12,
            fmt("segmentations %s, (0,3) rejected %s, |log p - log(0.088)| = %.1e", enum_ok ? "match" : "differ",
                rejects ? "yes" : "no", err)};
}

// ---------------------------------------------------------------------------
// 4: gradient

double relative_fd_error(LogLinearScorer& s, const ScorerParams& grad, const std::function<double()>& f,
                         std::mt19937_64& rng, double step = 1e-5) {
    auto& p = s.mutable_params();
    double diff2 = 0, fd2 = 0, an2 = 0;
    auto probe = [&](double& slot, double analytic) {
        double saved = slot;
        slot = saved + step;
        double up = f();
        slot = saved - step;
        double down = f();
        slot = saved;
        double fd = (up - down) / (2 * step);
        diff2 += (fd - analytic) * (fd - analytic);
        fd2 += fd * fd;
        an2 += analytic * analytic;
    };
    for (std::size_t i = 0; i < p.embeddings.size(); ++i) probe(p.embeddings[i], grad.embeddings[i]);
    for (const auto& [k, row] : grad.feature_weights) {
        auto& target = p.weights(k);
        for (std::size_t c = 0; c < p.dim; ++c) probe(target[c], row[c]);
    }
    // A few rows the gradient does not mention must have zero derivative.
    for (int r = 0; r < 4; ++r) {
        auto k = static_cast<std::uint32_t>(rng() % s.feature_config().hash_size());
        if (grad.find_weights(k)) continue;
        probe(p.weights(k)[rng() % p.dim], 0.0);
    }
    double scale = std::max(std::sqrt(fd2), std::sqrt(an2));
    return scale == 0 ? 0 : std::sqrt(diff2) / scale;
}

Outcome gradient_check() {
    std::mt19937_64 rng(4);
    double worst = 0.0;
    std::size_t ok = 0;
    const std::size_t configs = 100;
    for (std::size_t c = 0; c < configs; ++c) {
        std::size_t dim = 1 + rng() % 8;
        auto vocab = oracle::random_vocab(rng, U"abc", rng() % 30, 2 + rng() % 3);
        auto scorer = oracle::random_loglinear(rng, vocab.size(), dim, 0.5);
        auto y = oracle::random_string(rng, 1 + rng() % 10, U"abc");
        auto cond = make_conditioning(oracle::random_string(rng, rng() % 4, U"abc "), {"s" + std::to_string(rng() % 5)},
                                      scorer.feature_config());
        auto g = marginal_gradient(y, vocab, scorer, cond);
        double err = relative_fd_error(
            scorer, g.gradient, [&] { return log_marginal(y, vocab, scorer, cond); }, rng);
        worst = std::max(worst, err);
        ok += err <= 1e-4;
    }
    return {ok == configs, fmt("%zu/%zu configurations within 1e-4 (max relative error %.2e)", ok, configs, worst)};
}

// ---------------------------------------------------------------------------
// 5: BPE and BPE-dropout

Outcome bpe_check() {
    std::mt19937_64 rng(55);
    std::vector<std::string> words;
    const CharSequence alphabet = U"abcdefghé";
    for (std::size_t i = 0; i < 10000; ++i) {
        // Skewed lengths and letters give BPE something to merge.
        std::size_t len = 1 + (rng() % 4) + (rng() % 4) * (rng() % 3);
        CharSequence w;
        for (std::size_t k = 0; k < len; ++k) w.push_back(alphabet[std::min(rng() % 9, rng() % 9)]);
        words.push_back(utf8_encode(w));
    }
    auto model = train_bpe(count_words(words), 300);

    std::size_t identical = 0, per_char = 0;
    for (std::size_t i = 0; i < words.size(); ++i) {
        auto w = utf8_decode(words[i]);
        auto greedy = encode_bpe(w, model.merges, model.vocab);
        auto zero = encode_bpe_dropout(w, model.merges, model.vocab, DropoutConfig{0.0, i});
        identical += to_string(greedy) == to_string(zero);
        auto one = encode_bpe_dropout(w, model.merges, model.vocab, DropoutConfig{1.0, i});
        per_char += one.num_segments() == w.size();
    }

    DropoutStats stats;
    const double p = 0.05;
    for (std::uint64_t seed = 0; seed < 10000; ++seed) {
        encode_bpe_dropout(utf8_decode(words[seed]), model.merges, model.vocab, DropoutConfig{p, seed + 1}, &stats);
    }
    double n = static_cast<double>(stats.opportunities);
    double rate = static_cast<double>(stats.dropped) / n;
    double sigma = std::sqrt(p * (1 - p) / n);
    bool in_band = std::abs(rate - p) <= 3 * sigma;
    return {identical == words.size() && per_char == words.size() && in_band,
            fmt("p=0 identical %zu/%zu, p=1 per-character %zu/%zu, drop rate %.5f over %.0f opportunities "
                "(|rate-p| = %.2f sigma)",
                identical, words.size(), per_char, words.size(), rate, n, std::abs(rate - p) / sigma)};
}

// ---------------------------------------------------------------------------
// 6: joiner round trip

Outcome round_trip() {
    std::mt19937_64 rng(66);
    const CharSequence alphabet = U"abcdeßø@#";
    const char* spaces[] = {" ", "  ", "\t", " \t "};
    std::vector<std::string> raw;
    for (std::size_t i = 0; i < 3000; ++i) {
        std::string line = rng() % 5 == 0 ? " " : "";
        std::size_t words = 1 + rng() % 8;
        for (std::size_t k = 0; k < words; ++k) {
            if (k) line += spaces[rng() % 4];
            CharSequence w = oracle::random_string(rng, 1 + rng() % 7, alphabet);
            while (!w.empty() && (w.back() == U'@' || w.back() == U'#')) w.pop_back();  // no word ends in a joiner
            if (w.empty()) w = U"a";
            line += utf8_encode(w);
        }
        if (rng() % 5 == 0) line += "  ";
        raw.push_back(line);
    }
    std::vector<std::string> normalized_lines;
    for (const auto& l : raw) normalized_lines.push_back(normalize_whitespace(l));
    auto model = train_bpe(count_words(normalized_lines), 80);

    std::size_t checked = 0, ok = 0;
    for (std::string joiner : {"@@", "##", "\xef\xbf\xad"}) {
        for (std::size_t i = 0; i < raw.size(); ++i) {
            auto line = utf8_decode(normalized_lines[i]);
            std::vector<std::vector<SegmentedWord>> variants{
                segment_line_bpe(line, model.merges, model.vocab),
                segment_line_bpe(line, model.merges, model.vocab, DropoutConfig{0.3, i}),
                segment_line_bpe(line, model.merges, model.vocab, DropoutConfig{1.0, i}),
            };
            for (const auto& v : variants) {
                ++checked;
                ok += strip_joiners(join_segmented(v, joiner), joiner) == normalized_lines[i];
            }
        }
    }
    return {ok == checked, fmt("%zu/%zu segmented lines strip back to the normalized input (3 joiners, 3 encoders)",
                               ok, checked)};
}

// ---------------------------------------------------------------------------
// 7: training signal

Outcome training_signal() {
    auto corpus = synthetic::morphology_corpus(7, 70);
    std::vector<synthetic::Example> train_examples(corpus.train.begin(), corpus.train.begin() + 200);
    auto train = synthetic::pairs(train_examples);
    auto heldout = synthetic::pairs(corpus.heldout);

    // Joint BPE: source tokens become whole words, target keeps some merges.
    std::vector<std::string> lines;
    for (const auto& p : train) {
        lines.push_back(utf8_encode(p.source));
        lines.push_back(utf8_encode(p.target));
    }
    auto bpe = train_bpe(count_words(lines), 260);

    TrainConfig cfg;
    cfg.epochs = 5;
    cfg.learning_rate = 0.5;
    cfg.grad_accumulation = 1;
    cfg.dim = 16;
    cfg.seed = 11;
    cfg.dropout_p = 0.0;

    auto before = LogLinearScorer::initialize(bpe.vocab.size(), cfg.dim, cfg.features, cfg.seed, cfg.init_scale);
    double uniform = evaluate_nats_per_char(heldout, bpe.vocab, bpe, UniformScorer(bpe.vocab.size()));
    double initial = evaluate_nats_per_char(heldout, bpe.vocab, bpe, before);

    auto conditional = dpe::train(train, bpe.vocab, bpe, cfg);
    double cond_loss = evaluate_nats_per_char(heldout, bpe.vocab, bpe, conditional.scorer());
    cfg.mode = ScorerMode::language_model;
    auto lm = dpe::train(train, bpe.vocab, bpe, cfg);
    double lm_loss = evaluate_nats_per_char(heldout, bpe.vocab, bpe, lm.scorer());

    bool pass = std::abs(initial - uniform) < 1e-12 && cond_loss < uniform && cond_loss < lm_loss;
    return {pass, fmt("held-out nats/char: uniform %.4f, conditional %.4f, unconditional LM %.4f (%zu train, %zu "
                      "held-out sentences, 5 epochs)",
                      uniform, cond_loss, lm_loss, train.size(), heldout.size())};
}

// ---------------------------------------------------------------------------
// 8: DPE boundaries versus skewed BPE

Outcome morphology_boundaries() {
    auto corpus = synthetic::morphology_corpus(8, 60);
    auto train = synthetic::pairs(corpus.train);

    BpeModel target_bpe = train_bpe(synthetic::skewed_target_counts(corpus.train, 2), 160);
    BpeModel source_bpe = train_bpe(synthetic::source_counts(corpus.train), 400);

    TrainConfig cfg;
    cfg.epochs = 20;
    cfg.learning_rate = 0.5;
    cfg.grad_accumulation = 1;
    cfg.dim = 16;
    cfg.seed = 12;
    cfg.dropout_p = 0.0;
    auto result = dpe::train(train, target_bpe.vocab, source_bpe, cfg);
    auto scorer = result.scorer();

    std::size_t dpe_at_boundary = 0, bpe_disagrees = 0, bpe_crosses = 0;
    std::ostringstream samples;
    for (std::size_t i = 0; i < corpus.heldout.size(); ++i) {
        const auto& e = corpus.heldout[i];
        auto src = source_tokens(e.pair.source, source_bpe);
        auto dz = sentence_viterbi(e.pair.target, target_bpe.vocab, scorer, src)[0];
        auto bz = encode_bpe(e.pair.target, target_bpe.merges, target_bpe.vocab);
        auto has_cut = [&](const Segmentation& z) {
            return std::find(z.boundaries.begin(), z.boundaries.end(), e.boundary()) != z.boundaries.end();
        };
        dpe_at_boundary += has_cut(dz);
        bpe_disagrees += dz != bz;
        bpe_crosses += !has_cut(bz);
        if (i < 4) {
            auto show = [&](const Segmentation& z) {
                std::string s;
                for (const auto& piece : z.spans(e.pair.target)) s += (s.empty() ? "" : "|") + utf8_encode(piece);
                return s;
            };
            samples << ' ' << show(dz) << "/" << show(bz);
        }
    }
    double n = static_cast<double>(corpus.heldout.size());
    double dpe_rate = dpe_at_boundary / n, disagree = bpe_disagrees / n;
    return {dpe_rate >= 0.9 && disagree >= 0.3,
            fmt("DPE cuts at the stem boundary on %.1f%% of %zu held-out forms; BPE disagrees with DPE on %.1f%% "
                "and misses the boundary on %.1f%%; e.g. DPE/BPE:%s",
                100 * dpe_rate, corpus.heldout.size(), 100 * disagree, 100 * bpe_crosses / n, samples.str().c_str())};
}

// ---------------------------------------------------------------------------
// 9: linear runtime

Outcome linear_runtime() {
    std::mt19937_64 rng(9);
    auto vocab = oracle::random_vocab(rng, U"ab", 30, 6);  // m = 6
    auto inner = oracle::random_loglinear(rng, vocab.size(), 8);
    CachingScorer scorer(inner);
    std::vector<double> xs, ys;
    // Warm the cache so every length sees the same per-position cost.
    log_marginal(oracle::random_string(rng, 3200, U"ab"), vocab, scorer);
    for (std::size_t T = 100; T <= 3200; T *= 2) {
        auto y = oracle::random_string(rng, T, U"ab");
        std::vector<double> runs;
        for (int r = 0; r < 7; ++r) {
            auto t0 = Clock::now();
            volatile double v = log_marginal(y, vocab, scorer);
            (void)v;
            runs.push_back(seconds_since(t0));
        }
        std::sort(runs.begin(), runs.end());
        xs.push_back(static_cast<double>(T));
        ys.push_back(runs[runs.size() / 2]);
    }
    double mx = std::accumulate(xs.begin(), xs.end(), 0.0) / xs.size();
    double my = std::accumulate(ys.begin(), ys.end(), 0.0) / ys.size();
    double sxy = 0, sxx = 0, syy = 0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        sxy += (xs[i] - mx) * (ys[i] - my);
        sxx += (xs[i] - mx) * (xs[i] - mx);
        syy += (ys[i] - my) * (ys[i] - my);
    }
    double r2 = sxy * sxy / (sxx * syy);
    return {r2 >= 0.98, fmt("R^2 = %.4f for T in 100..3200 (median time %.3f ms at T=100, %.3f ms at T=3200)", r2,
                            ys.front() * 1e3, ys.back() * 1e3)};
}

// ---------------------------------------------------------------------------
// 10: determinism

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

std::map<std::string, std::string> run_pipeline(const fs::path& dir, std::size_t workers) {
    fs::remove_all(dir);
    fs::create_directories(dir);
    auto corpus = synthetic::morphology_corpus(10, 30);
    std::vector<std::string> src, tgt;
    for (const auto& e : corpus.train) {
        src.push_back(utf8_encode(e.pair.source) + " " + utf8_encode(e.pair.source));
        tgt.push_back(utf8_encode(e.pair.target) + " the " + utf8_encode(e.pair.target));
    }
    write_lines(dir / "corpus.src", src);
    write_lines(dir / "corpus.tgt", tgt);

    PipelineConfig cfg;
    cfg.source = dir / "corpus.src";
    cfg.target = dir / "corpus.tgt";
    cfg.vocab = dir / "vocab.txt";
    cfg.merges = dir / "merges.txt";
    cfg.checkpoint = dir / "scorer.ckpt";
    cfg.vocab_size = 120;
    cfg.seed = 99;
    cfg.dropout_p = 0.1;
    cfg.workers = workers;
    cfg.train.epochs = 2;
    cfg.train.dim = 8;
    cfg.train.features.hash_bits = 12;
    run_train_bpe(cfg);
    run_stage_train_scorer(cfg);

    cfg.output_dir = dir / "segmented";
    cfg.passes = 2;
    run_stage_segment(cfg);

    auto fixed = cfg;
    fixed.output_dir = dir / "fixed";
    fixed.target_mode = TargetMode::dpe_fixed;
    fixed.source_mode = SourceMode::bpe;
    fixed.passes = 1;
    run_stage_segment(fixed);

    cfg.segmented_dir = cfg.output_dir;
    cfg.output_dir = dir / "final";
    cfg.variants = 2;
    run_stage_emit_training_set(cfg);

    auto report = compare_segmenters(segmented_file(fixed.output_dir, 0, "tgt"),
                                     segmented_file(cfg.segmented_dir, 0, "tgt"), cfg.target);
    std::ofstream(dir / "report.tsv") << [&] {
        std::ostringstream s;
        write_report_tsv(report, s);
        return s.str();
    }();
    std::ofstream(dir / "bands.csv") << [&] {
        std::ostringstream s;
        write_band_csv(report, s);
        return s.str();
    }();

    std::map<std::string, std::string> files;
    for (const auto& entry : fs::recursive_directory_iterator(dir)) {
        // Training logs carry wall-clock time.
        if (!entry.is_regular_file() || entry.path().extension() == ".log") continue;
        files[fs::relative(entry.path(), dir).string()] = slurp(entry.path());
    }
    fs::remove_all(dir);
    return files;
}

Outcome determinism() {
    auto base = fs::temp_directory_path() / ("dpe_acceptance_" + std::to_string(::getpid()));
    auto a = run_pipeline(base / "a", 1);
    auto b = run_pipeline(base / "b", 1);
    auto c = run_pipeline(base / "c", 3);
    fs::remove_all(base);
    std::size_t differing = 0;
    std::string first;
    for (const auto& [name, bytes] : a) {
        bool same = b.count(name) && b.at(name) == bytes && c.count(name) && c.at(name) == bytes;
        if (!same && first.empty()) first = name;
        differing += !same;
    }
    bool pass = differing == 0 && a.size() == b.size() && a.size() == c.size() && a.count("scorer.ckpt") &&
                a.count("final/manifest.json") && a.count("report.tsv");
    return {pass, fmt("%zu files (checkpoint, segmented corpora, manifests, reports) compared across 3 runs "
                      "(1, 1 and 3 workers, training log excluded): %zu differ%s%s",
                      a.size(), differing, first.empty() ? "" : ", first: ", first.c_str())};
}

}  // namespace

int main(int argc, char** argv) {
    std::set<int> only;
    for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));
    auto wanted = [&](int n) { return only.empty() || only.count(n); };

    const char* names[] = {"",
                           "oracle equivalence, marginal",
                           "oracle equivalence, Viterbi",
                           "worked example",
                           "gradient exactness",
                           "BPE and BPE-dropout",
                           "joiner round trip",
                           "training signal",
                           "DPE morpheme boundaries",
                           "linear runtime",
                           "determinism"};
    int failures = 0;
    auto report = [&](int n, const Outcome& o) {
        std::printf("criterion %2d %-30s %s  %s\n", n, names[n], o.pass ? "PASS" : "FAIL", o.detail.c_str());
        std::fflush(stdout);
        failures += !o.pass;
    };
    auto guarded = [&](int n, const std::function<Outcome()>& f) {
        if (!wanted(n)) return;
        Outcome o;
        try {
            o = f();
        } catch (const std::exception& e) {
            o = {false, std::string("threw: ") + e.what()};
        }
        report(n, o);
    };

    if (wanted(1) || wanted(2)) {
        try {
            auto [marginal, viterbi] = oracle_equivalence();
            if (wanted(1)) report(1, marginal);
            if (wanted(2)) report(2, viterbi);
        } catch (const std::exception& e) {
            report(1, {false, std::string("threw: ") + e.what()});
        }
    }
    guarded(3, cat_example);
    guarded(4, gradient_check);
    guarded(5, bpe_check);
    guarded(6, round_trip);
    guarded(7, training_signal);
    guarded(8, morphology_boundaries);
    guarded(9, linear_runtime);
    guarded(10, determinism);
    return failures == 0 ? 0 : 1;
}
