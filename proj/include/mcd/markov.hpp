#pragma once

// Synthetic data with known statistics: an order-n Markov chain over a
// small alphabet, its exact entropy rate, and exact sequence likelihoods.
// Generated text replaces a real corpus; the exact likelihood replaces an
// external scorer, which makes generative perplexity an oracle quantity.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "mcd/masking.hpp"
#include "mcd/rng.hpp"

namespace mcd {

/// a-z plus space; token ids 0..25 letters, 26 space. The mask token is
/// appended by the model side as id alphabet (= K-1).
inline constexpr int kDefaultAlphabet = 27;

inline char decode_char(int id) {
    if (id >= 0 && id < 26) return char('a' + id);
    if (id == 26) return ' ';
    throw std::invalid_argument("decode_char: id out of alphabet");
}

inline int encode_char(char c) {
    if (c >= 'a' && c <= 'z') return c - 'a';
    if (c == ' ') return 26;
    throw std::invalid_argument(std::string("encode_char: unsupported character '") + c + "'");
}

inline std::string decode(const TokenSequence& seq) {
    std::string s;
    s.reserve(seq.size());
    for (auto id : seq.ids) s.push_back(decode_char(id));
    return s;
}

inline TokenSequence encode(const std::string& line, int vocab) {
    TokenSequence seq;
    seq.vocab = vocab;
    seq.ids.reserve(line.size());
    for (char c : line) seq.ids.push_back(encode_char(c));
    return seq;
}

class MarkovSource {
public:
    /// Dirichlet(1) rows, floored at 1e-4 then renormalized, deterministic
    /// per seed. order in {1,2,3}.
    MarkovSource(std::uint64_t seed, int order, int alphabet)
        : order_(order), alphabet_(alphabet), seed_(seed) {
        if (order < 1 || order > 3) throw std::invalid_argument("MarkovSource: order in {1,2,3}");
        if (alphabet < 2) throw std::invalid_argument("MarkovSource: alphabet >= 2");
        n_states_ = 1;
        for (int i = 0; i < order; ++i) n_states_ *= alphabet;
        rows_.assign(std::size_t(n_states_) * alphabet, 0.0);
        const RngStream rng(seed, Stream::source_build);
        for (std::int64_t s = 0; s < n_states_; ++s) {
            double* row = &rows_[std::size_t(s) * alphabet];
            double sum = 0.0;
            for (int c = 0; c < alphabet; ++c) {
                // Dirichlet(1,...,1) via normalized exponentials
                row[c] = -std::log(rng.uniform_open(std::uint64_t(s), std::uint64_t(c)));
                sum += row[c];
            }
            double sum2 = 0.0;
            for (int c = 0; c < alphabet; ++c) {
                row[c] = std::max(row[c] / sum, 1e-4);
                sum2 += row[c];
            }
            for (int c = 0; c < alphabet; ++c) row[c] /= sum2;
        }
        compute_stationary();
    }

    int order() const { return order_; }
    int alphabet() const { return alphabet_; }
    int vocab_extended() const { return alphabet_ + 1; }
    std::uint64_t seed() const { return seed_; }

    double transition(std::int64_t state, int next) const {
        return rows_[std::size_t(state) * alphabet_ + next];
    }

    /// Exact entropy rate in nats: H = -sum_s pi(s) sum_c T(s,c) ln T(s,c).
    double entropy_rate() const { return entropy_rate_; }

    /// Stationary marginal over single tokens.
    const std::vector<double>& unigram() const { return unigram_; }

    /// Exact per-token mean log-probability of a sequence under the chain,
    /// order-truncated at the start via stationary marginals.
    double log_prob(const TokenSequence& seq) const {
        if (seq.size() == 0) throw std::invalid_argument("log_prob: empty sequence");
        double lp = 0.0;
        for (std::size_t i = 0; i < seq.size(); ++i) {
            const int c = seq.ids[i];
            if (c < 0 || c >= alphabet_) {
                throw std::invalid_argument("log_prob: token outside source alphabet");
            }
            lp += std::log(conditional(seq, i));
        }
        return lp;
    }

    /// P(x_i | x_{<i}) with the history truncated to min(i, order) tokens.
    double conditional(const TokenSequence& seq, std::size_t i) const {
        const int c = seq.ids[i];
        const int ctx = static_cast<int>(std::min<std::size_t>(i, std::size_t(order_)));
        if (ctx == order_) {
            std::int64_t state = 0;
            for (int j = 0; j < order_; ++j) {
                state = state * alphabet_ + seq.ids[i - order_ + j];
            }
            return transition(state, c);
        }
        // marginalize the stationary state distribution over the unseen prefix
        // P(x_i | last ctx tokens) = pi(ctx-gram . c) / pi(ctx-gram)
        double num = 0.0, den = 0.0;
        std::int64_t suffix = 0, suffix_c = 0;
        std::int64_t mod = 1;
        for (int j = 0; j < ctx; ++j) {
            suffix = suffix * alphabet_ + seq.ids[i - ctx + j];
        }
        suffix_c = suffix * alphabet_ + c;
        for (int j = 0; j < ctx + 1; ++j) mod *= alphabet_;
        const std::int64_t lead = n_states_ / (mod / alphabet_);
        for (std::int64_t pre = 0; pre < lead; ++pre) {
            den += stationary_[std::size_t(pre * (mod / alphabet_) + suffix)];
        }
        // pi over (ctx+1)-grams: pi(state) * T when ctx+1 > order never
        // happens here because ctx < order
        const std::int64_t lead_c = n_states_ * alphabet_ / mod;
        for (std::int64_t pre = 0; pre < lead_c; ++pre) {
            const std::int64_t gram = pre * mod + suffix_c;
            // split gram into (state, next)
            const std::int64_t state = gram / alphabet_;
            const int next = int(gram % alphabet_);
            num += stationary_[std::size_t(state)] * transition(state, next);
        }
        return num / den;
    }

    /// One sequence of `length` tokens started from the stationary law.
    TokenSequence sample_sequence(int length, const RngStream& rng, std::uint64_t item) const {
        TokenSequence seq;
        seq.vocab = vocab_extended();
        seq.ids.reserve(length);
        // warm start: draw the initial state from the stationary distribution
        std::int64_t state = sample_state(rng.uniform_open(item, 0, 1));
        for (int i = 0; i < length; ++i) {
            const double u = rng.uniform_open(item, std::uint64_t(i), 2);
            const double* row = &rows_[std::size_t(state) * alphabet_];
            int c = alphabet_ - 1;
            double acc = 0.0;
            for (int j = 0; j < alphabet_; ++j) {
                acc += row[j];
                if (u < acc) {
                    c = j;
                    break;
                }
            }
            seq.ids.push_back(c);
            state = (state * alphabet_ + c) % n_states_;
        }
        return seq;
    }

    const std::vector<double>& stationary() const { return stationary_; }

private:
    void compute_stationary() {
        stationary_.assign(std::size_t(n_states_), 1.0 / double(n_states_));
        std::vector<double> next(std::size_t(n_states_), 0.0);
        for (int it = 0; it < 20000; ++it) {
            std::fill(next.begin(), next.end(), 0.0);
            for (std::int64_t s = 0; s < n_states_; ++s) {
                const double ps = stationary_[std::size_t(s)];
                const double* row = &rows_[std::size_t(s) * alphabet_];
                const std::int64_t base = (s % (n_states_ / alphabet_)) * alphabet_;
                for (int c = 0; c < alphabet_; ++c) {
                    next[std::size_t(base + c)] += ps * row[c];
                }
            }
            double diff = 0.0, sum = 0.0;
            for (std::int64_t s = 0; s < n_states_; ++s) {
                diff += std::abs(next[std::size_t(s)] - stationary_[std::size_t(s)]);
                sum += next[std::size_t(s)];
            }
            for (auto& v : next) v /= sum;
            stationary_.swap(next);
            if (diff < 1e-15) break;
        }
        entropy_rate_ = 0.0;
        for (std::int64_t s = 0; s < n_states_; ++s) {
            const double* row = &rows_[std::size_t(s) * alphabet_];
            double h = 0.0;
            for (int c = 0; c < alphabet_; ++c) h -= row[c] * std::log(row[c]);
            entropy_rate_ += stationary_[std::size_t(s)] * h;
        }
        unigram_.assign(alphabet_, 0.0);
        for (std::int64_t s = 0; s < n_states_; ++s) {
            unigram_[std::size_t(s % alphabet_)] += stationary_[std::size_t(s)];
        }
    }

    std::int64_t sample_state(double u) const {
        double acc = 0.0;
        for (std::int64_t s = 0; s < n_states_; ++s) {
            acc += stationary_[std::size_t(s)];
            if (u < acc) return s;
        }
        return n_states_ - 1;
    }

    int order_;
    int alphabet_;
    std::uint64_t seed_;
    std::int64_t n_states_ = 0;
    std::vector<double> rows_;
    std::vector<double> stationary_;
    std::vector<double> unigram_;
    double entropy_rate_ = 0.0;
};

inline MarkovSource make_source(std::uint64_t seed, int order = 2,
                                int alphabet = kDefaultAlphabet) {
    return MarkovSource(seed, order, alphabet);
}

/// exp(-mean per-token log probability) under the source. Rejects mask
/// tokens: generated output must be fully unmasked before scoring.
inline double oracle_ppl(const std::vector<TokenSequence>& samples,
                         const MarkovSource& source) {
    if (samples.empty()) throw std::invalid_argument("oracle_ppl: no samples");
    double lp = 0.0;
    std::int64_t tokens = 0;
    for (const auto& s : samples) {
        for (auto id : s.ids) {
            if (id >= source.alphabet()) {
                throw std::invalid_argument("oracle_ppl: mask token in sample");
            }
        }
        lp += source.log_prob(s);
        tokens += std::int64_t(s.size());
    }
    return std::exp(-lp / double(tokens));
}

/// Total variation distance between the samples' unigram frequencies and
/// the source's stationary unigram.
inline double unigram_tv(const std::vector<TokenSequence>& samples,
                         const MarkovSource& source) {
    std::vector<double> freq(source.alphabet(), 0.0);
    double n = 0.0;
    for (const auto& s : samples) {
        for (auto id : s.ids) {
            if (id < source.alphabet()) freq[std::size_t(id)] += 1.0;
            n += 1.0;
        }
    }
    double tv = 0.0;
    for (int c = 0; c < source.alphabet(); ++c) {
        tv += std::abs(freq[std::size_t(c)] / n - source.unigram()[std::size_t(c)]);
    }
    return 0.5 * tv;
}

/// Writes `n_tokens / length` sequences, one per line.
inline void write_corpus(const MarkovSource& source, std::int64_t n_tokens, int length,
                         const RngStream& rng, std::uint64_t item_offset,
                         const std::string& path) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw std::runtime_error("write_corpus: cannot open " + path);
    const std::int64_t lines = n_tokens / length;
    for (std::int64_t ln = 0; ln < lines; ++ln) {
        os << decode(source.sample_sequence(length, rng, item_offset + std::uint64_t(ln)))
           << '\n';
    }
    if (!os) throw std::runtime_error("write_corpus: write failed " + path);
}

inline std::vector<TokenSequence> read_corpus(const std::string& path, int vocab) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("read_corpus: cannot open " + path);
    std::vector<TokenSequence> out;
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        out.push_back(encode(line, vocab));
    }
    if (out.empty()) throw std::runtime_error("read_corpus: empty corpus " + path);
    return out;
}

} // namespace mcd
