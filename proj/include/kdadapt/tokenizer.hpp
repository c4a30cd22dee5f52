#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "kdadapt/corpus.hpp"

namespace kdadapt {

using TokenId = std::int32_t;

// Reserved ids at the head of every vocabulary.
struct SpecialTokens {
    static constexpr TokenId bos = 0;
    static constexpr TokenId eos = 1;
    static constexpr TokenId pad = 2;
    static constexpr TokenId unk = 3;
    static constexpr TokenId count = 4;
};

inline constexpr std::string_view kEndOfWord = "</w>";
inline constexpr std::string_view kUnkSurface = "<unk>";
inline constexpr int kBpeFormatVersion = 1;
inline constexpr std::size_t kDeskMerges = 200;
inline constexpr std::size_t kFullScaleMerges = 30000;

using Merge = std::pair<std::string, std::string>;

// Ordered merge list over an end-of-word-marked character alphabet. Immutable.
class BpeModel {
  public:
    BpeModel(std::vector<std::string> characters, std::vector<Merge> merges);

    const std::vector<std::string> &characters() const { return characters_; }
    const std::vector<Merge> &merges() const { return merges_; }
    // Subword inventory in id order, without the special tokens.
    const std::vector<std::string> &vocab() const { return vocab_; }
    // Vocabulary size seen by a model: specials plus subwords.
    std::size_t model_vocab_size() const { return vocab_.size() + SpecialTokens::count; }

    bool contains(std::string_view subword) const;
    TokenId token_id(std::string_view subword) const;
    std::string token(TokenId id) const;

    // Segments one whitespace token into subwords.
    std::vector<std::string> segment(std::string_view word) const;

    std::vector<TokenId> encode(const Sentence &subwords) const;
    Sentence decode(const std::vector<TokenId> &ids) const;

    std::string serialize() const;
    static BpeModel parse(const std::string &text);
    std::string fingerprint() const;

    friend bool operator==(const BpeModel &a, const BpeModel &b) {
        return a.characters_ == b.characters_ && a.merges_ == b.merges_;
    }

  private:
    std::vector<std::string> characters_;
    std::vector<Merge> merges_;
    std::vector<std::string> vocab_;
    std::unordered_map<std::string, TokenId> ids_;
    std::unordered_map<std::string, std::size_t> merge_rank_;
};

// Splits a UTF-8 string into code points. Invalid lead bytes are single units.
std::vector<std::string> utf8_characters(std::string_view text);

BpeModel learn_bpe(const ParallelCorpus &corpus, std::size_t num_merges);
ParallelCorpus apply_bpe(const BpeModel &model, const ParallelCorpus &corpus);
Sentence apply_bpe(const BpeModel &model, const Sentence &sentence);
ParallelCorpus detokenize(const ParallelCorpus &corpus);
Sentence detokenize(const Sentence &subwords);

void save_bpe(const BpeModel &model, const std::string &path);
BpeModel load_bpe(const std::string &path);

} // namespace kdadapt
