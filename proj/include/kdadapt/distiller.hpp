#pragma once

#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <tuple>

#include "kdadapt/corpus.hpp"
#include "kdadapt/decoder.hpp"
#include "kdadapt/trainer.hpp"

namespace kdadapt {

// A corpus whose targets were written by a teacher. The source side is the
// original corpus' source side, byte for byte.
struct DistilledCorpus {
    ParallelCorpus corpus;
    std::string teacher_id;
    BeamConfig beam;
    std::string original_id;

    // Sidecar text: teacher, beam settings and the source corpus id.
    std::string sidecar() const;
};

DistilledCorpus distill(const ModelCheckpoint &teacher, const BpeModel &bpe, const ParallelCorpus &train_corpus,
                        const BeamConfig &beam, std::size_t threads = 1);

// Trains a fresh model (or continues `init`) on distilled data. The dev
// corpus must carry original references.
TrainReport train_student_distilled(const nn::ArchConfig &arch, std::uint64_t model_seed,
                                    const DistilledCorpus &distilled, const ParallelCorpus &dev_corpus,
                                    const BpeModel &bpe, const TrainConfig &config);
TrainReport train_student_distilled(const ModelCheckpoint &init, const DistilledCorpus &distilled,
                                    const ParallelCorpus &dev_corpus, const BpeModel &bpe, const TrainConfig &config);

struct ContinuedResult {
    TrainReport continued;             // the phase on original data
    bool improved = false;             // a post-phase checkpoint beat the pre-phase best
    double pre_phase_bleu = 0.0;
    std::optional<ModelCheckpoint> selected;

    double selected_bleu() const { return selected->dev_bleu(); }
};

inline constexpr std::size_t kContinuePatience = 10;

// Resumes from the student's best checkpoint on the un-distilled corpus.
// The selected checkpoint is the best across both phases, earliest on ties.
ContinuedResult continue_on_original(const TrainReport &student_report, const DistilledCorpus &distilled,
                                     const ParallelCorpus &original_corpus, const ParallelCorpus &dev_corpus,
                                     const BpeModel &bpe, TrainConfig config);

// In-process memo of distillation results keyed by (teacher, corpus, beam).
class DistillationCache {
  public:
    const DistilledCorpus &get(const ModelCheckpoint &teacher, const BpeModel &bpe, const ParallelCorpus &corpus,
                               const BeamConfig &beam, std::size_t threads = 1);
    std::size_t size() const;
    std::size_t misses() const { return misses_; }

  private:
    using Key = std::tuple<std::string, std::string, std::size_t, double, double, double>;
    mutable std::mutex mutex_;
    std::map<Key, DistilledCorpus> entries_;
    std::size_t misses_ = 0;
};

} // namespace kdadapt
