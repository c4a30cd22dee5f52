#include "kdadapt/decoder.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <thread>

#include "kdadapt/error.hpp"

namespace kdadapt {

void BeamConfig::validate() const {
    if (beam_size < 1)
        fail(ErrorCategory::validation, "beam_size must be at least 1");
    if (!(max_len_factor > 0.0))
        fail(ErrorCategory::validation, "max_len_factor must be positive");
    if (!(max_len_constant >= 0.0))
        fail(ErrorCategory::validation, "max_len_constant must be non-negative");
    if (!(length_penalty_alpha >= 0.0))
        fail(ErrorCategory::validation, "length_penalty_alpha must be non-negative");
}

std::size_t BeamConfig::max_length(std::size_t source_length) const {
    const double n = std::floor(max_len_factor * static_cast<double>(source_length) + max_len_constant);
    return std::max<std::size_t>(1, static_cast<std::size_t>(n));
}

std::vector<TokenId> Hypothesis::output() const {
    std::vector<TokenId> out = tokens;
    if (finished_by_eos())
        out.pop_back();
    return out;
}

double normalized_score(double log_prob, std::size_t length, double alpha) {
    if (alpha == 0.0)
        return log_prob;
    return log_prob / std::pow(static_cast<double>(length), alpha);
}

namespace {

struct Candidate {
    double log_prob;
    TokenId token;
    std::size_t parent;
};

bool candidate_before(const Candidate &a, const Candidate &b) {
    if (a.log_prob != b.log_prob)
        return a.log_prob > b.log_prob;
    if (a.token != b.token)
        return a.token < b.token;
    return a.parent < b.parent;
}

} // namespace

Hypothesis beam_decode(const nn::TransformerModel &model, std::span<const TokenId> source, const BeamConfig &config) {
    config.validate();
    if (source.empty())
        fail(ErrorCategory::validation, "beam_decode: empty source");
    const std::size_t max_len = config.max_length(source.size());
    const double alpha = config.length_penalty_alpha;
    const auto vocab = static_cast<TokenId>(model.vocab_size());
    const int layers = model.arch().decoder_layers();

    const nn::EncoderMemory memory = model.encode(source);

    std::vector<std::vector<TokenId>> live_tokens(1);
    std::vector<double> live_lp(1, 0.0);
    std::vector<nn::DecoderCache> caches(1, nn::DecoderCache(layers));
    std::vector<Hypothesis> finished;
    std::size_t best = 0;

    auto finish = [&](std::vector<TokenId> tokens, double lp) {
        Hypothesis h{std::move(tokens), lp, 0.0};
        h.score = normalized_score(lp, h.tokens.size(), alpha);
        finished.push_back(std::move(h));
        if (finished.back().score > finished[best].score)
            best = finished.size() - 1;
    };

    std::vector<Candidate> candidates;
    std::vector<TokenId> inputs;
    for (std::size_t step = 0; !live_tokens.empty(); ++step) {
        const std::size_t k = config.beam_size - finished.size();
        if (k == 0)
            break;
        if (!finished.empty()) {
            const double best_live = *std::max_element(live_lp.begin(), live_lp.end());
            if (finished[best].score >= normalized_score(best_live, max_len, alpha))
                break;
        }

        inputs.clear();
        for (const auto &t : live_tokens)
            inputs.push_back(t.empty() ? SpecialTokens::bos : t.back());
        const nn::Matrix logp = model.decode_step(memory, caches, inputs);

        candidates.clear();
        for (std::size_t i = 0; i < live_tokens.size(); ++i) {
            const auto r = static_cast<Eigen::Index>(i);
            for (TokenId tok = 0; tok < vocab; ++tok) {
                if (tok == SpecialTokens::bos || tok == SpecialTokens::pad)
                    continue;
                if (tok == SpecialTokens::eos && step == 0)
                    continue;
                candidates.push_back({live_lp[i] + logp(r, tok), tok, i});
            }
        }
        const std::size_t take = std::min(k, candidates.size());
        std::partial_sort(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(take), candidates.end(),
                          candidate_before);

        std::vector<std::vector<TokenId>> next_tokens;
        std::vector<double> next_lp;
        std::vector<nn::DecoderCache> next_caches;
        for (std::size_t c = 0; c < take; ++c) {
            const Candidate &cand = candidates[c];
            std::vector<TokenId> tokens = live_tokens[cand.parent];
            tokens.push_back(cand.token);
            if (cand.token == SpecialTokens::eos || tokens.size() >= max_len) {
                finish(std::move(tokens), cand.log_prob);
                continue;
            }
            next_tokens.push_back(std::move(tokens));
            next_lp.push_back(cand.log_prob);
            next_caches.push_back(caches[cand.parent]);
        }
        live_tokens = std::move(next_tokens);
        live_lp = std::move(next_lp);
        caches = std::move(next_caches);
    }
    return finished[best];
}

bool is_bpe_encoded(const BpeModel &bpe, const ParallelCorpus &corpus) {
    bool any_marker = false;
    auto known = [&](const std::string &tok) {
        if (tok.ends_with(kEndOfWord))
            any_marker = true;
        if (bpe.contains(tok))
            return true;
        return tok == kUnkSurface || tok == std::string(kUnkSurface) + std::string(kEndOfWord);
    };
    for (const auto &pair : corpus.pairs()) {
        for (const auto &tok : pair.source)
            if (!known(tok))
                return false;
        for (const auto &tok : pair.target)
            if (!known(tok))
                return false;
    }
    return any_marker || corpus.empty();
}

void require_bpe_encoded(const BpeModel &bpe, const ParallelCorpus &corpus) {
    if (!is_bpe_encoded(bpe, corpus))
        fail(ErrorCategory::protocol, "corpus " + corpus.name() + " is not encoded with the shared BPE model");
}

void require_vocab_match(const nn::TransformerModel &model, const BpeModel &bpe) {
    if (model.vocab_size() != bpe.model_vocab_size())
        fail(ErrorCategory::protocol, "model vocabulary size " + std::to_string(model.vocab_size()) +
                                          " does not match BPE vocabulary size " +
                                          std::to_string(bpe.model_vocab_size()));
}

ParallelCorpus decode_corpus(const nn::TransformerModel &model, const BpeModel &bpe, const ParallelCorpus &corpus,
                             const BeamConfig &config, std::size_t threads, std::string name) {
    config.validate();
    require_vocab_match(model, bpe);
    require_bpe_encoded(bpe, corpus);
    const std::size_t n = corpus.size();
    std::vector<Sentence> outputs(n);
    auto work = [&](std::size_t begin, std::size_t end) {
        for (std::size_t i = begin; i < end; ++i) {
            const auto ids = bpe.encode(corpus[i].source);
            outputs[i] = bpe.decode(beam_decode(model, ids, config).output());
        }
    };
    threads = std::max<std::size_t>(1, std::min(threads, n));
    if (threads == 1) {
        work(0, n);
    } else {
        std::vector<std::exception_ptr> errors(threads);
        {
            std::vector<std::jthread> pool;
            const std::size_t chunk = (n + threads - 1) / threads;
            for (std::size_t t = 0; t < threads; ++t) {
                const std::size_t begin = t * chunk;
                const std::size_t end = std::min(n, begin + chunk);
                if (begin < end)
                    pool.emplace_back([&, t, begin, end] {
                        try {
                            work(begin, end);
                        } catch (...) {
                            errors[t] = std::current_exception();
                        }
                    });
            }
        }
        for (auto &e : errors)
            if (e)
                std::rethrow_exception(e);
    }
    std::vector<SentencePair> pairs;
    pairs.reserve(n);
    for (std::size_t i = 0; i < n; ++i)
        pairs.push_back({corpus[i].source, std::move(outputs[i])});
    return ParallelCorpus(name.empty() ? corpus.name() + ".decoded" : std::move(name), corpus.role(),
                          std::move(pairs));
}

} // namespace kdadapt
