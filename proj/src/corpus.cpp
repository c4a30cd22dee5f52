#include "kdadapt/corpus.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include "kdadapt/error.hpp"
#include "kdadapt/hash.hpp"
#include "kdadapt/random.hpp"

namespace kdadapt {

namespace {

constexpr std::uint64_t kBaseLexiconSeed = 0x6c657869636f6eULL;
constexpr std::string_view kSourceLetters = "abcdefghij";
constexpr std::string_view kTargetLetters = "klmnopqrst";

bool is_space(char c) { return c == ' ' || c == '\t' || c == '\r' || c == '\n' || c == '\v' || c == '\f'; }

// Surface form of word i: the first 10^2 words are two letters long, the next
// 10^3 three letters, and so on. Within a length class the index is scrambled
// by a multiplier coprime with the class size.
std::string surface_word(std::size_t i, std::string_view letters) {
    const std::size_t radix = letters.size();
    std::size_t length = 2;
    std::size_t class_size = radix * radix;
    while (i >= class_size) {
        i -= class_size;
        ++length;
        class_size *= radix;
    }
    std::size_t code = static_cast<std::size_t>((static_cast<unsigned __int128>(i) * 7919u) % class_size);
    std::string word(length, ' ');
    for (std::size_t k = 0; k < length; ++k) {
        word[length - 1 - k] = letters[code % radix];
        code /= radix;
    }
    return word;
}

} // namespace

std::string role_name(CorpusRole role) { return role == CorpusRole::train ? "train" : "dev"; }

void validate_pair(const SentencePair &pair, std::size_t index) {
    auto check_side = [&](const Sentence &side, const char *which) {
        if (side.empty())
            fail(ErrorCategory::validation,
                 "pair " + std::to_string(index + 1) + ": empty " + which + " sentence");
        for (const auto &token : side) {
            if (token.empty())
                fail(ErrorCategory::validation,
                     "pair " + std::to_string(index + 1) + ": empty token in " + which);
            for (char c : token)
                if (is_space(c))
                    fail(ErrorCategory::validation, "pair " + std::to_string(index + 1) +
                                                        ": whitespace inside " + which + " token");
        }
    };
    check_side(pair.source, "source");
    check_side(pair.target, "target");
}

ParallelCorpus::ParallelCorpus(std::string name, CorpusRole role, std::vector<SentencePair> pairs,
                               std::string distilled_by)
    : name_(std::move(name)), role_(role), pairs_(std::move(pairs)),
      distilled_by_(std::move(distilled_by)) {
    for (std::size_t i = 0; i < pairs_.size(); ++i)
        validate_pair(pairs_[i], i);
}

std::string ParallelCorpus::fingerprint() const {
    ContentHash hash;
    hash.field(static_cast<std::uint64_t>(pairs_.size()));
    for (const auto &pair : pairs_) {
        hash.field(join_tokens(pair.source));
        hash.field(join_tokens(pair.target));
    }
    return hash.hex();
}

std::string ParallelCorpus::id() const { return name_ + "@" + fingerprint().substr(0, 12); }

std::vector<Sentence> ParallelCorpus::sources() const {
    std::vector<Sentence> out;
    out.reserve(pairs_.size());
    for (const auto &p : pairs_)
        out.push_back(p.source);
    return out;
}

std::vector<Sentence> ParallelCorpus::targets() const {
    std::vector<Sentence> out;
    out.reserve(pairs_.size());
    for (const auto &p : pairs_)
        out.push_back(p.target);
    return out;
}

std::string reorder_name(ReorderRule rule) {
    switch (rule) {
    case ReorderRule::none:
        return "none";
    case ReorderRule::swap_adjacent:
        return "swap-adjacent";
    case ReorderRule::reverse_window:
        return "reverse-window";
    }
    return "none";
}

ReorderRule parse_reorder(const std::string &text) {
    if (text == "none")
        return ReorderRule::none;
    if (text == "swap-adjacent")
        return ReorderRule::swap_adjacent;
    if (text == "reverse-window")
        return ReorderRule::reverse_window;
    fail(ErrorCategory::validation, "reorder_rule: unknown rule '" + text + "'");
}

void DomainSpec::validate() const {
    if (!(domain_lexicon_fraction >= 0.0 && domain_lexicon_fraction <= 1.0))
        fail(ErrorCategory::validation, "domain_lexicon_fraction: must lie in [0, 1]");
    if (vocab_size < 2)
        fail(ErrorCategory::validation, "vocab_size: must be at least 2");
    if (min_length < 1)
        fail(ErrorCategory::validation, "length_range: min must be at least 1");
    if (max_length < min_length)
        fail(ErrorCategory::validation, "length_range: max must be >= min");
    if (size < 1)
        fail(ErrorCategory::validation, "size: must be at least 1");
}

Lexicon::Lexicon(const DomainSpec &spec) : rule_(spec.reorder_rule) {
    spec.validate();
    const std::size_t v = spec.vocab_size;
    source_words_.reserve(v);
    target_words_.reserve(v);
    for (std::size_t i = 0; i < v; ++i) {
        source_words_.push_back(surface_word(i, kSourceLetters));
        target_words_.push_back(surface_word(i, kTargetLetters));
    }

    base_.resize(v);
    std::iota(base_.begin(), base_.end(), std::size_t{0});
    Rng base_rng(mix_seed(kBaseLexiconSeed, v));
    base_rng.shuffle(std::span<std::size_t>(base_));

    mapping_ = base_;
    const auto remap_count =
        static_cast<std::size_t>(std::llround(spec.domain_lexicon_fraction * static_cast<double>(v)));
    if (remap_count == 0)
        return;
    std::vector<std::size_t> order(v);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng domain_rng(mix_seed(spec.seed, 2));
    domain_rng.shuffle(std::span<std::size_t>(order));
    if (remap_count == 1) {
        const std::size_t i = order[0];
        mapping_[i] = base_[(i + 1) % v];
        return;
    }
    // Rotating targets within the chosen subset keeps the map a bijection and
    // moves every chosen word.
    for (std::size_t k = 0; k < remap_count; ++k)
        mapping_[order[k]] = base_[order[(k + 1) % remap_count]];
}

Sentence Lexicon::translate(const std::vector<std::size_t> &source_indices) const {
    Sentence out;
    out.reserve(source_indices.size());
    for (auto i : source_indices)
        out.push_back(target_words_[mapping_[i]]);
    return apply_reorder(std::move(out), rule_);
}

ParallelCorpus generate_domain(const DomainSpec &spec) {
    spec.validate();
    Lexicon lexicon(spec);
    Rng rng(mix_seed(spec.seed, 1));
    std::vector<SentencePair> pairs;
    pairs.reserve(spec.size);
    const std::size_t span = spec.max_length - spec.min_length + 1;
    for (std::size_t n = 0; n < spec.size; ++n) {
        const std::size_t length = spec.min_length + rng.below(span);
        std::vector<std::size_t> indices(length);
        for (auto &i : indices)
            i = rng.below(spec.vocab_size);
        SentencePair pair;
        pair.source.reserve(length);
        for (auto i : indices)
            pair.source.push_back(lexicon.source_word(i));
        pair.target = lexicon.translate(indices);
        pairs.push_back(std::move(pair));
    }
    return ParallelCorpus(spec.name, CorpusRole::train, std::move(pairs));
}

std::string join_tokens(const Sentence &tokens) {
    std::string out;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        if (i)
            out.push_back(' ');
        out += tokens[i];
    }
    return out;
}

Sentence split_tokens(const std::string &line) {
    Sentence out;
    std::size_t i = 0;
    while (i < line.size()) {
        while (i < line.size() && is_space(line[i]))
            ++i;
        std::size_t j = i;
        while (j < line.size() && !is_space(line[j]))
            ++j;
        if (j > i)
            out.emplace_back(line.substr(i, j - i));
        i = j;
    }
    return out;
}

namespace {

std::vector<std::string> read_lines(const std::string &path) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        fail(ErrorCategory::io, "cannot open " + path);
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line))
        lines.push_back(line);
    return lines;
}

} // namespace

ParallelCorpus load_corpus(const std::string &source_path, const std::string &target_path,
                           std::string name, CorpusRole role) {
    const auto src = read_lines(source_path);
    const auto tgt = read_lines(target_path);
    if (src.size() != tgt.size())
        fail(ErrorCategory::alignment, "line count mismatch: " + source_path + " has " +
                                           std::to_string(src.size()) + " lines, " + target_path +
                                           " has " + std::to_string(tgt.size()));
    std::vector<SentencePair> pairs;
    pairs.reserve(src.size());
    for (std::size_t i = 0; i < src.size(); ++i) {
        SentencePair pair{split_tokens(src[i]), split_tokens(tgt[i])};
        if (pair.source.empty() || pair.target.empty())
            fail(ErrorCategory::validation,
                 "empty line " + std::to_string(i + 1) + " in " +
                     (pair.source.empty() ? source_path : target_path));
        pairs.push_back(std::move(pair));
    }
    if (name.empty())
        name = std::filesystem::path(source_path).stem().string();
    return ParallelCorpus(std::move(name), role, std::move(pairs));
}

ParallelCorpus load_corpus_prefix(const std::string &prefix, CorpusRole role) {
    return load_corpus(prefix + ".src", prefix + ".tgt",
                       std::filesystem::path(prefix).filename().string(), role);
}

void save_corpus(const ParallelCorpus &corpus, const std::string &source_path,
                 const std::string &target_path) {
    if (corpus.empty())
        fail(ErrorCategory::validation, "cannot save an empty corpus");
    std::ofstream src(source_path, std::ios::binary | std::ios::trunc);
    if (!src)
        fail(ErrorCategory::io, "cannot write " + source_path);
    std::ofstream tgt(target_path, std::ios::binary | std::ios::trunc);
    if (!tgt)
        fail(ErrorCategory::io, "cannot write " + target_path);
    for (const auto &pair : corpus.pairs()) {
        src << join_tokens(pair.source) << '\n';
        tgt << join_tokens(pair.target) << '\n';
    }
    src.flush();
    tgt.flush();
    if (!src || !tgt)
        fail(ErrorCategory::io, "write failed for " + source_path);
}

void save_corpus_prefix(const ParallelCorpus &corpus, const std::string &prefix) {
    save_corpus(corpus, prefix + ".src", prefix + ".tgt");
}

std::pair<ParallelCorpus, ParallelCorpus> split_dev(const ParallelCorpus &corpus, std::size_t n_dev) {
    if (n_dev == 0 || n_dev >= corpus.size())
        fail(ErrorCategory::validation, "n_dev must satisfy 0 < n_dev < " + std::to_string(corpus.size()) +
                                            ", got " + std::to_string(n_dev));
    const auto cut = static_cast<std::ptrdiff_t>(corpus.size() - n_dev);
    std::vector<SentencePair> train(corpus.pairs().begin(), corpus.pairs().begin() + cut);
    std::vector<SentencePair> dev(corpus.pairs().begin() + cut, corpus.pairs().end());
    return {ParallelCorpus(corpus.name() + ".train", CorpusRole::train, std::move(train),
                           corpus.distilled_by()),
            ParallelCorpus(corpus.name() + ".dev", CorpusRole::dev, std::move(dev),
                           corpus.distilled_by())};
}

} // namespace kdadapt
