#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "kdadapt/corpus.hpp"
#include "kdadapt/tokenizer.hpp"
#include "kdadapt/transformer.hpp"

namespace kdadapt {

inline constexpr std::size_t kDefaultBeamSize = 10;

struct BeamConfig {
    std::size_t beam_size = kDefaultBeamSize;
    double max_len_factor = 2.0;
    double max_len_constant = 10.0;
    double length_penalty_alpha = 1.0;

    void validate() const;
    // Output tokens allowed before the end-of-sentence token, at least 1.
    std::size_t max_length(std::size_t source_length) const;

    friend bool operator==(const BeamConfig &, const BeamConfig &) = default;
};

struct Hypothesis {
    std::vector<TokenId> tokens; // without bos; ends with eos unless cut at max length
    double log_prob = 0.0;
    double score = 0.0;

    bool finished_by_eos() const { return !tokens.empty() && tokens.back() == SpecialTokens::eos; }
    // Tokens with the trailing eos removed.
    std::vector<TokenId> output() const;
};

double normalized_score(double log_prob, std::size_t length, double alpha);

Hypothesis beam_decode(const nn::TransformerModel &model, std::span<const TokenId> source, const BeamConfig &config);

// Decodes every source sentence of a BPE-encoded corpus. Output pairs are
// (original source, decoded subwords) in corpus order; `threads` shards the
// work by sentence index.
ParallelCorpus decode_corpus(const nn::TransformerModel &model, const BpeModel &bpe, const ParallelCorpus &corpus,
                             const BeamConfig &config, std::size_t threads = 1, std::string name = {});

// Every token of the corpus is a subword of the model or the unknown form,
// and the corpus carries end-of-word markers.
bool is_bpe_encoded(const BpeModel &bpe, const ParallelCorpus &corpus);
void require_bpe_encoded(const BpeModel &bpe, const ParallelCorpus &corpus);
void require_vocab_match(const nn::TransformerModel &model, const BpeModel &bpe);

} // namespace kdadapt
