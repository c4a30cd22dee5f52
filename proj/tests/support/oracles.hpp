#pragma once

// Independent reference implementations shared by the unit tests and the
// acceptance runner. Nothing in here calls the code it is used to check,
// except for the model forward pass, which the beam oracle needs to score
// sequences.

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "kdadapt/autodiff.hpp"
#include "kdadapt/corpus.hpp"
#include "kdadapt/pipeline.hpp"
#include "kdadapt/transformer.hpp"

namespace kdadapt::testing {

struct SuiteResult {
    std::size_t cases = 0;
    std::size_t passed = 0;
    double worst = 0.0;
    std::string detail;

    bool ok() const { return cases > 0 && passed == cases; }
    void record(bool pass, double error, const std::string &label);
};

// Corpus BLEU by direct n-gram enumeration over vectors of strings.
double oracle_bleu(const std::vector<Sentence> &hypotheses, const std::vector<Sentence> &references);

// Random token corpora over a small alphabet, so that n-gram matches happen.
std::vector<Sentence> random_sentences(Rng &rng, std::size_t count, std::size_t alphabet, std::size_t max_len);

SuiteResult bleu_oracle_suite(std::size_t corpora, std::uint64_t seed);

using GraphBuilder = std::function<nn::Var(nn::Tape &, const std::vector<nn::Var> &)>;

// Largest per-input relative error ||analytic - numeric|| / max(norms, floor)
// of the gradient of a scalar graph, using central differences. The floor
// treats gradients below it as zero: key biases, for one, get exactly zero
// gradient under softmax, and central differences leave ~1e-12 of noise.
double gradient_error(std::vector<nn::Tensor> &inputs, const GraphBuilder &build, double step = 1e-4);

// Same check for the full model loss over a sample of entries per parameter.
double model_gradient_error(nn::TransformerModel &model, const std::vector<nn::TrainingExample> &batch,
                            double label_smoothing, std::size_t samples_per_tensor, Rng &rng, double step = 1e-4);

inline constexpr double kGradTolerance = 1e-3;
inline constexpr double kGradFloor = 1e-7;

// Every primitive on `seeds` random shapes plus the Tiny-scaled model loss on
// `seeds` random batches.
SuiteResult gradient_suite(std::size_t seeds);

struct Sequence {
    std::vector<TokenId> tokens; // ends with eos unless cut at max_len
    double log_prob = 0.0;
};

// Best sequence by total log-probability over every hypothesis the decoder
// may produce: non-empty, eos only last, at most max_len tokens.
Sequence exhaustive_argmax(const nn::TransformerModel &model, std::span<const TokenId> source, std::size_t max_len);

SuiteResult beam_exactness_suite(std::size_t models, std::uint64_t seed);

// Trains a Tiny teacher on `pairs` synthetic pairs, distills them and
// recomputes every target with a separate beam_decode call per sentence.
SuiteResult distillation_fidelity_suite(std::size_t pairs, std::uint64_t seed);

// Small synthetic general/in-domain data for pipeline tests.
PlanData tiny_plan_data(std::size_t general_pairs, std::size_t in_domain_pairs, std::size_t dev_pairs,
                        std::uint64_t seed = 7);

// A plan with minimal budgets so whole graphs run in seconds.
ExperimentPlan tiny_plan(int config_id, const PlanData &data, std::vector<std::uint64_t> seeds = {1});

// Configuration matrix: init source and in-domain teacher source per config.
struct MatrixRow {
    int config_id;
    const char *init;
    const char *teacher;
};
const std::vector<MatrixRow> &config_matrix();

SuiteResult matrix_suite();

SuiteResult stopping_suite();

} // namespace kdadapt::testing
