#pragma once

#include <algorithm>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace kdadapt {

using Sentence = std::vector<std::string>;

struct SentencePair {
    Sentence source;
    Sentence target;

    friend bool operator==(const SentencePair &, const SentencePair &) = default;
};

enum class CorpusRole { train, dev };

std::string role_name(CorpusRole role);

// Aligned sentence pairs. The role is fixed at construction; a corpus
// produced by distillation also remembers the teacher that wrote its targets.
class ParallelCorpus {
  public:
    ParallelCorpus(std::string name, CorpusRole role, std::vector<SentencePair> pairs,
                   std::string distilled_by = {});

    const std::string &name() const { return name_; }
    CorpusRole role() const { return role_; }
    const std::vector<SentencePair> &pairs() const { return pairs_; }
    std::size_t size() const { return pairs_.size(); }
    bool empty() const { return pairs_.empty(); }
    const SentencePair &operator[](std::size_t i) const { return pairs_[i]; }

    // Teacher checkpoint id when the targets are teacher decodes, empty otherwise.
    const std::string &distilled_by() const { return distilled_by_; }
    bool is_distilled() const { return !distilled_by_.empty(); }

    // SHA-256 over the pair contents (not the name or role).
    std::string fingerprint() const;
    // "<name>@<first 12 hex digits of fingerprint>".
    std::string id() const;

    std::vector<Sentence> sources() const;
    std::vector<Sentence> targets() const;

  private:
    std::string name_;
    CorpusRole role_;
    std::vector<SentencePair> pairs_;
    std::string distilled_by_;
};

void validate_pair(const SentencePair &pair, std::size_t index);

enum class ReorderRule { none, swap_adjacent, reverse_window };

std::string reorder_name(ReorderRule rule);
ReorderRule parse_reorder(const std::string &text);

// Parameters of one synthetic translation domain. Domains built with the same
// vocab_size share a base lexicon; domain_lexicon_fraction of the source
// vocabulary is remapped by a seed-specific lexicon.
struct DomainSpec {
    std::uint64_t seed = 1;
    std::size_t vocab_size = 200;
    double domain_lexicon_fraction = 0.0;
    ReorderRule reorder_rule = ReorderRule::none;
    std::size_t min_length = 3;
    std::size_t max_length = 8;
    std::size_t size = 2000;
    std::string name = "synthetic";

    void validate() const;
};

// Width of the windows reversed by ReorderRule::reverse_window.
inline constexpr std::size_t kReverseWindow = 3;

// Word-level translation table of one domain.
class Lexicon {
  public:
    explicit Lexicon(const DomainSpec &spec);

    std::size_t vocab_size() const { return source_words_.size(); }
    const std::string &source_word(std::size_t i) const { return source_words_[i]; }
    const std::string &target_word(std::size_t i) const { return target_words_[i]; }
    // Target-word index for source-word index i under this domain.
    std::size_t translate_index(std::size_t i) const { return mapping_[i]; }
    // Target-word index under the shared base lexicon.
    std::size_t base_index(std::size_t i) const { return base_[i]; }
    bool remapped(std::size_t i) const { return mapping_[i] != base_[i]; }

    // Translates a sentence of source-word indices and applies the reorder rule.
    Sentence translate(const std::vector<std::size_t> &source_indices) const;

  private:
    std::vector<std::string> source_words_;
    std::vector<std::string> target_words_;
    std::vector<std::size_t> base_;
    std::vector<std::size_t> mapping_;
    ReorderRule rule_;
};

template <class T> std::vector<T> apply_reorder(std::vector<T> tokens, ReorderRule rule) {
    switch (rule) {
    case ReorderRule::none:
        break;
    case ReorderRule::swap_adjacent:
        for (std::size_t i = 0; i + 1 < tokens.size(); i += 2)
            std::swap(tokens[i], tokens[i + 1]);
        break;
    case ReorderRule::reverse_window:
        for (std::size_t i = 0; i < tokens.size(); i += kReverseWindow) {
            std::size_t end = std::min(tokens.size(), i + kReverseWindow);
            std::reverse(tokens.begin() + static_cast<std::ptrdiff_t>(i),
                         tokens.begin() + static_cast<std::ptrdiff_t>(end));
        }
        break;
    }
    return tokens;
}

ParallelCorpus generate_domain(const DomainSpec &spec);

ParallelCorpus load_corpus(const std::string &source_path, const std::string &target_path,
                           std::string name = {}, CorpusRole role = CorpusRole::train);
// Loads <prefix>.src / <prefix>.tgt.
ParallelCorpus load_corpus_prefix(const std::string &prefix, CorpusRole role = CorpusRole::train);

void save_corpus(const ParallelCorpus &corpus, const std::string &source_path,
                 const std::string &target_path);
void save_corpus_prefix(const ParallelCorpus &corpus, const std::string &prefix);

// Carves the last n_dev pairs off as the development set.
std::pair<ParallelCorpus, ParallelCorpus> split_dev(const ParallelCorpus &corpus, std::size_t n_dev);

std::string join_tokens(const Sentence &tokens);
Sentence split_tokens(const std::string &line);

} // namespace kdadapt
