#include "kdadapt/bleu.hpp"

#include <cmath>
#include <cstdio>
#include <string_view>
#include <unordered_map>

#include "json.hpp"

#include "kdadapt/error.hpp"

namespace kdadapt {

namespace {

using NgramCounts = std::unordered_map<std::string, long long>;

NgramCounts count_ngrams(const Sentence &tokens, std::size_t n) {
    NgramCounts counts;
    if (tokens.size() < n)
        return counts;
    for (std::size_t i = 0; i + n <= tokens.size(); ++i) {
        std::string key;
        for (std::size_t k = 0; k < n; ++k) {
            key += tokens[i + k];
            key.push_back('\x1f');
        }
        ++counts[key];
    }
    return counts;
}

} // namespace

void BleuStats::add(const Sentence &hypothesis, const Sentence &reference) {
    hyp_length += static_cast<long long>(hypothesis.size());
    ref_length += static_cast<long long>(reference.size());
    for (std::size_t n = 1; n <= kBleuOrder; ++n) {
        if (hypothesis.size() < n)
            continue;
        totals[n - 1] += static_cast<long long>(hypothesis.size() - n + 1);
        const auto ref_counts = count_ngrams(reference, n);
        for (const auto &[ngram, count] : count_ngrams(hypothesis, n)) {
            auto it = ref_counts.find(ngram);
            if (it != ref_counts.end())
                matches[n - 1] += std::min(count, it->second);
        }
    }
}

BleuStats &BleuStats::operator+=(const BleuStats &other) {
    for (int n = 0; n < kBleuOrder; ++n) {
        matches[n] += other.matches[n];
        totals[n] += other.totals[n];
    }
    hyp_length += other.hyp_length;
    ref_length += other.ref_length;
    return *this;
}

BleuReport bleu_from_stats(const BleuStats &stats) {
    BleuReport report;
    report.stats = stats;
    report.hyp_length = stats.hyp_length;
    report.ref_length = stats.ref_length;
    bool any_zero = false;
    double log_sum = 0.0;
    for (int n = 0; n < kBleuOrder; ++n) {
        report.precisions[n] = stats.totals[n] == 0
                                   ? 0.0
                                   : static_cast<double>(stats.matches[n]) / static_cast<double>(stats.totals[n]);
        if (report.precisions[n] == 0.0)
            any_zero = true;
        else
            log_sum += std::log(report.precisions[n]);
    }
    if (stats.hyp_length == 0)
        report.brevity_penalty = 0.0;
    else if (stats.hyp_length < stats.ref_length)
        report.brevity_penalty =
            std::exp(1.0 - static_cast<double>(stats.ref_length) / static_cast<double>(stats.hyp_length));
    else
        report.brevity_penalty = 1.0;
    report.bleu = any_zero ? 0.0 : 100.0 * report.brevity_penalty * std::exp(log_sum / kBleuOrder);
    return report;
}

BleuReport corpus_bleu(const std::vector<Sentence> &hypotheses, const std::vector<Sentence> &references) {
    if (hypotheses.size() != references.size())
        fail(ErrorCategory::alignment, "hypothesis count " + std::to_string(hypotheses.size()) +
                                           " != reference count " + std::to_string(references.size()));
    BleuStats stats;
    for (std::size_t i = 0; i < hypotheses.size(); ++i)
        stats.add(hypotheses[i], references[i]);
    return bleu_from_stats(stats);
}

BleuReport corpus_bleu(const ParallelCorpus &hypotheses, const ParallelCorpus &references) {
    return corpus_bleu(hypotheses.targets(), references.targets());
}

std::string BleuReport::summary() const {
    char buffer[256];
    std::snprintf(buffer, sizeof buffer,
                  "BLEU = %.2f, %.1f/%.1f/%.1f/%.1f (BP=%.3f, ratio=%.3f, hyp_len=%lld, ref_len=%lld)", bleu,
                  100 * precisions[0], 100 * precisions[1], 100 * precisions[2], 100 * precisions[3],
                  brevity_penalty, ratio(), hyp_length, ref_length);
    return buffer;
}

std::string BleuReport::to_json() const {
    nlohmann::json j;
    j["bleu"] = bleu;
    j["precisions"] = precisions;
    j["brevity_penalty"] = brevity_penalty;
    j["ratio"] = ratio();
    j["hyp_length"] = hyp_length;
    j["ref_length"] = ref_length;
    j["matches"] = stats.matches;
    j["totals"] = stats.totals;
    return j.dump();
}

} // namespace kdadapt
