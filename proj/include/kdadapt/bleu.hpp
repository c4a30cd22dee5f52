#pragma once

#include <array>
#include <string>
#include <vector>

#include "kdadapt/corpus.hpp"

namespace kdadapt {

inline constexpr int kBleuOrder = 4;

// Sufficient statistics for corpus BLEU. Statistics of disjoint corpora add.
struct BleuStats {
    std::array<long long, kBleuOrder> matches{};
    std::array<long long, kBleuOrder> totals{};
    long long hyp_length = 0;
    long long ref_length = 0;

    void add(const Sentence &hypothesis, const Sentence &reference);
    BleuStats &operator+=(const BleuStats &other);
    friend bool operator==(const BleuStats &, const BleuStats &) = default;
};

struct BleuReport {
    double bleu = 0.0; // 0..100
    std::array<double, kBleuOrder> precisions{};
    double brevity_penalty = 1.0;
    long long hyp_length = 0;
    long long ref_length = 0;
    BleuStats stats;

    double ratio() const {
        return ref_length == 0 ? 0.0 : static_cast<double>(hyp_length) / static_cast<double>(ref_length);
    }
    // multi-bleu style summary line.
    std::string summary() const;
    std::string to_json() const;
};

BleuReport bleu_from_stats(const BleuStats &stats);

// Case-sensitive corpus BLEU with one reference per sentence.
BleuReport corpus_bleu(const std::vector<Sentence> &hypotheses, const std::vector<Sentence> &references);
BleuReport corpus_bleu(const ParallelCorpus &hypotheses, const ParallelCorpus &references);

} // namespace kdadapt
