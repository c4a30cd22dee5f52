#include "kdadapt/tokenizer.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "kdadapt/error.hpp"
#include "kdadapt/hash.hpp"

namespace kdadapt {

namespace {

constexpr std::string_view kHeaderTag = "#kdadapt-bpe";
constexpr char kMergeKeySep = '\x1f';
const std::string kSpecialSurface[SpecialTokens::count] = {"<s>", "</s>", "<pad>", "<unk>"};

std::string merge_key(std::string_view left, std::string_view right) {
    std::string key(left);
    key.push_back(kMergeKeySep);
    key += right;
    return key;
}

bool ends_with_marker(std::string_view s) {
    return s.size() >= kEndOfWord.size() && s.substr(s.size() - kEndOfWord.size()) == kEndOfWord;
}

std::vector<std::string> initial_symbols(std::string_view word) {
    auto symbols = utf8_characters(word);
    if (!symbols.empty())
        symbols.back() += kEndOfWord;
    return symbols;
}

// Merges every left-to-right non-overlapping occurrence of (left, right).
void merge_in_place(std::vector<std::string> &symbols, const std::string &left, const std::string &right) {
    std::vector<std::string> out;
    out.reserve(symbols.size());
    for (std::size_t i = 0; i < symbols.size(); ++i) {
        if (i + 1 < symbols.size() && symbols[i] == left && symbols[i + 1] == right) {
            out.push_back(left + right);
            ++i;
        } else {
            out.push_back(std::move(symbols[i]));
        }
    }
    symbols = std::move(out);
}

} // namespace

std::vector<std::string> utf8_characters(std::string_view text) {
    std::vector<std::string> out;
    std::size_t i = 0;
    while (i < text.size()) {
        const auto lead = static_cast<unsigned char>(text[i]);
        std::size_t len = 1;
        if (lead >= 0xF0)
            len = 4;
        else if (lead >= 0xE0)
            len = 3;
        else if (lead >= 0xC0)
            len = 2;
        len = std::min(len, text.size() - i);
        out.emplace_back(text.substr(i, len));
        i += len;
    }
    return out;
}

BpeModel::BpeModel(std::vector<std::string> characters, std::vector<Merge> merges)
    : characters_(std::move(characters)), merges_(std::move(merges)) {
    std::sort(characters_.begin(), characters_.end());
    characters_.erase(std::unique(characters_.begin(), characters_.end()), characters_.end());

    auto add = [&](const std::string &subword) {
        if (ids_.count(subword))
            return;
        ids_.emplace(subword, static_cast<TokenId>(vocab_.size()) + SpecialTokens::count);
        vocab_.push_back(subword);
    };
    std::vector<std::string> alphabet;
    for (const auto &c : characters_) {
        alphabet.push_back(c);
        alphabet.push_back(c + std::string(kEndOfWord));
    }
    std::sort(alphabet.begin(), alphabet.end());
    for (const auto &symbol : alphabet)
        add(symbol);
    for (std::size_t rank = 0; rank < merges_.size(); ++rank) {
        const auto &[left, right] = merges_[rank];
        if (!merge_rank_.emplace(merge_key(left, right), rank).second)
            fail(ErrorCategory::validation, "duplicate merge '" + left + " " + right + "'");
        add(left + right);
    }
}

bool BpeModel::contains(std::string_view subword) const { return ids_.count(std::string(subword)) > 0; }

TokenId BpeModel::token_id(std::string_view subword) const {
    auto it = ids_.find(std::string(subword));
    return it == ids_.end() ? SpecialTokens::unk : it->second;
}

std::string BpeModel::token(TokenId id) const {
    if (id >= 0 && id < SpecialTokens::count)
        return kSpecialSurface[id];
    const auto index = static_cast<std::size_t>(id - SpecialTokens::count);
    if (id < 0 || index >= vocab_.size())
        fail(ErrorCategory::validation, "token id " + std::to_string(id) + " out of range");
    return vocab_[index];
}

std::vector<std::string> BpeModel::segment(std::string_view word) const {
    auto symbols = initial_symbols(word);
    while (symbols.size() > 1) {
        std::size_t best_rank = merges_.size();
        for (std::size_t i = 0; i + 1 < symbols.size(); ++i) {
            auto it = merge_rank_.find(merge_key(symbols[i], symbols[i + 1]));
            if (it != merge_rank_.end() && it->second < best_rank)
                best_rank = it->second;
        }
        if (best_rank == merges_.size())
            break;
        merge_in_place(symbols, merges_[best_rank].first, merges_[best_rank].second);
    }
    for (auto &symbol : symbols) {
        if (!contains(symbol))
            symbol = ends_with_marker(symbol) ? std::string(kUnkSurface) + std::string(kEndOfWord)
                                              : std::string(kUnkSurface);
    }
    return symbols;
}

std::vector<TokenId> BpeModel::encode(const Sentence &subwords) const {
    std::vector<TokenId> ids;
    ids.reserve(subwords.size());
    for (const auto &s : subwords)
        ids.push_back(token_id(s));
    return ids;
}

Sentence BpeModel::decode(const std::vector<TokenId> &ids) const {
    Sentence out;
    out.reserve(ids.size());
    for (auto id : ids) {
        if (id == SpecialTokens::bos || id == SpecialTokens::pad)
            continue;
        if (id == SpecialTokens::eos)
            break;
        out.push_back(token(id));
    }
    return out;
}

std::string BpeModel::serialize() const {
    std::ostringstream out;
    out << kHeaderTag << " v" << kBpeFormatVersion << " alphabet";
    for (const auto &c : characters_)
        out << ' ' << c;
    out << '\n';
    for (const auto &[left, right] : merges_)
        out << left << ' ' << right << '\n';
    return out.str();
}

BpeModel BpeModel::parse(const std::string &text) {
    std::istringstream in(text);
    std::string header;
    if (!std::getline(in, header))
        fail(ErrorCategory::validation, "merge file: missing version header");
    auto fields = split_tokens(header);
    const std::string expected_version = "v" + std::to_string(kBpeFormatVersion);
    if (fields.size() < 3 || fields[0] != kHeaderTag || fields[1] != expected_version || fields[2] != "alphabet")
        fail(ErrorCategory::validation, "merge file: unsupported header '" + header + "'");
    std::vector<std::string> characters(fields.begin() + 3, fields.end());
    std::vector<Merge> merges;
    std::string line;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        auto parts = split_tokens(line);
        if (parts.empty())
            continue;
        if (parts.size() != 2)
            fail(ErrorCategory::validation, "merge file line " + std::to_string(line_no) + ": expected 'left right'");
        merges.emplace_back(parts[0], parts[1]);
    }
    return BpeModel(std::move(characters), std::move(merges));
}

std::string BpeModel::fingerprint() const { return sha256_hex(serialize()); }

BpeModel learn_bpe(const ParallelCorpus &corpus, std::size_t num_merges) {
    if (corpus.role() != CorpusRole::train)
        fail(ErrorCategory::protocol,
             "BPE must be learned on general-domain training data, got " + role_name(corpus.role()) + " corpus '" +
                 corpus.name() + "'");

    std::map<std::string, long long> word_counts;
    for (const auto &pair : corpus.pairs()) {
        for (const auto &w : pair.source)
            ++word_counts[w];
        for (const auto &w : pair.target)
            ++word_counts[w];
    }

    std::set<std::string> characters;
    struct Word {
        std::vector<std::string> symbols;
        long long count;
    };
    std::vector<Word> words;
    words.reserve(word_counts.size());
    for (const auto &[w, count] : word_counts) {
        for (auto &c : utf8_characters(w))
            characters.insert(c);
        words.push_back({initial_symbols(w), count});
    }

    std::vector<Merge> merges;
    std::set<std::string> produced;
    while (merges.size() < num_merges) {
        // std::map iterates pairs in lexicographic order, so the first pair
        // reaching the maximum count wins ties.
        std::map<Merge, long long> pair_counts;
        for (const auto &word : words)
            for (std::size_t i = 0; i + 1 < word.symbols.size(); ++i)
                pair_counts[{word.symbols[i], word.symbols[i + 1]}] += word.count;
        if (pair_counts.empty())
            break;
        auto best = pair_counts.begin();
        for (auto it = pair_counts.begin(); it != pair_counts.end(); ++it)
            if (it->second > best->second)
                best = it;
        const Merge merge = best->first;
        merges.push_back(merge);
        for (auto &word : words)
            merge_in_place(word.symbols, merge.first, merge.second);
    }
    return BpeModel(std::vector<std::string>(characters.begin(), characters.end()), std::move(merges));
}

Sentence apply_bpe(const BpeModel &model, const Sentence &sentence) {
    Sentence out;
    for (const auto &word : sentence)
        for (auto &s : model.segment(word))
            out.push_back(std::move(s));
    return out;
}

ParallelCorpus apply_bpe(const BpeModel &model, const ParallelCorpus &corpus) {
    std::unordered_map<std::string, std::vector<std::string>> cache;
    auto encode = [&](const Sentence &sentence) {
        Sentence out;
        for (const auto &word : sentence) {
            auto it = cache.find(word);
            if (it == cache.end())
                it = cache.emplace(word, model.segment(word)).first;
            out.insert(out.end(), it->second.begin(), it->second.end());
        }
        return out;
    };
    std::vector<SentencePair> pairs;
    pairs.reserve(corpus.size());
    for (const auto &pair : corpus.pairs())
        pairs.push_back({encode(pair.source), encode(pair.target)});
    return ParallelCorpus(corpus.name(), corpus.role(), std::move(pairs), corpus.distilled_by());
}

Sentence detokenize(const Sentence &subwords) {
    Sentence out;
    std::string current;
    for (const auto &s : subwords) {
        if (ends_with_marker(s)) {
            current.append(s, 0, s.size() - kEndOfWord.size());
            if (!current.empty())
                out.push_back(std::move(current));
            current.clear();
        } else {
            current += s;
        }
    }
    if (!current.empty())
        out.push_back(std::move(current));
    return out;
}

ParallelCorpus detokenize(const ParallelCorpus &corpus) {
    std::vector<SentencePair> pairs;
    pairs.reserve(corpus.size());
    for (const auto &pair : corpus.pairs())
        pairs.push_back({detokenize(pair.source), detokenize(pair.target)});
    return ParallelCorpus(corpus.name(), corpus.role(), std::move(pairs), corpus.distilled_by());
}

void save_bpe(const BpeModel &model, const std::string &path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out)
        fail(ErrorCategory::io, "cannot write " + path);
    out << model.serialize();
    if (!out)
        fail(ErrorCategory::io, "write failed for " + path);
}

BpeModel load_bpe(const std::string &path) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        fail(ErrorCategory::io, "cannot open " + path);
    std::stringstream buffer;
    buffer << in.rdbuf();
    return BpeModel::parse(buffer.str());
}

} // namespace kdadapt
