#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "kdadapt/bleu.hpp"
#include "kdadapt/corpus.hpp"
#include "kdadapt/decoder.hpp"
#include "kdadapt/tokenizer.hpp"
#include "kdadapt/transformer.hpp"

namespace kdadapt {

inline constexpr int kCheckpointFormatVersion = 1;
inline constexpr const char *kRandomInit = "random";
inline constexpr const char *kNoTeacher = "none";

// Linear warmup to `peak`, then inverse square-root decay.
struct LearningRateSchedule {
    double peak = 1e-3;
    std::size_t warmup_updates = 400;

    double rate(std::size_t update) const;
};

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.98;
    double epsilon = 1e-9;
    double weight_decay = 0.0; // decoupled
};

struct AdamState {
    std::size_t step = 0;
    std::vector<nn::Matrix> first;
    std::vector<nn::Matrix> second;
};

// One bias-corrected Adam update at step t (1-based) using each parameter's
// grad buffer. A non-finite gradient aborts before anything is modified.
void optimizer_step(std::vector<nn::NamedTensor> &params, AdamState &state, const AdamConfig &adam,
                    const LearningRateSchedule &schedule, std::size_t t);

enum class StopReason { max_updates, max_epochs, early_stop };
std::string stop_reason_name(StopReason reason);
StopReason parse_stop_reason(const std::string &text);

struct StoppingLimits {
    std::size_t max_updates = 5000;
    std::size_t max_epochs = 100;
    std::size_t patience = 10;
};

// Tracks dev scores and reports the first satisfied stopping criterion,
// checked in the order max_updates, max_epochs, early_stop.
class StoppingRule {
  public:
    explicit StoppingRule(StoppingLimits limits);

    // Records a checkpoint score; true when it is a new best (strictly higher).
    bool observe(double score);
    std::optional<StopReason> check(std::size_t updates, std::size_t epochs) const;

    std::size_t checkpoints() const { return checkpoints_; }
    std::size_t best_index() const { return best_index_; }
    double best_score() const { return best_score_; }
    std::size_t since_best() const { return checkpoints_ == 0 ? 0 : checkpoints_ - 1 - best_index_; }

  private:
    StoppingLimits limits_;
    std::size_t checkpoints_ = 0;
    std::size_t best_index_ = 0;
    double best_score_ = 0.0;
};

struct ScheduleEvent {
    std::size_t updates = 0;
    std::size_t epochs = 0; // completed epochs at evaluation time
    double score = 0.0;
};

struct ScheduleOutcome {
    StopReason reason = StopReason::max_updates;
    std::vector<ScheduleEvent> checkpoints;
    std::size_t updates = 0;
    std::size_t epochs = 0;
    std::size_t best_index = 0;
};

// The training loop skeleton. `update(epoch, i)` performs update i of the
// given epoch; `evaluate(updates, epochs)` returns a dev score. A checkpoint
// falls every `interval` updates, plus one at the stop when the last update
// was not covered.
ScheduleOutcome run_schedule(const StoppingLimits &limits, std::size_t interval, std::size_t updates_per_epoch,
                             const std::function<void(std::size_t, std::size_t)> &update,
                             const std::function<double(std::size_t, std::size_t)> &evaluate);

struct TrainConfig {
    StoppingLimits limits;
    std::size_t checkpoint_interval = 200;
    std::size_t batch_tokens = 1000;
    LearningRateSchedule schedule;
    AdamConfig adam;
    double label_smoothing = 0.1;
    std::uint64_t seed = 1;
    BeamConfig dev_beam;
    std::size_t eval_threads = 1;

    void validate() const;
    // Every field that influences the result, as one line. eval_threads is
    // left out since decoding shards reassemble identically.
    std::string describe() const;
};

struct Provenance {
    std::string initialized_from = kRandomInit;
    std::string trained_on;
    std::string distilled_by = kNoTeacher;
    // One entry per training phase, oldest first; the first starts at "random".
    std::vector<std::string> lineage;
};

class ModelCheckpoint {
  public:
    ModelCheckpoint(nn::TransformerModel model, std::string vocab_id, std::size_t updates, std::size_t epochs,
                    double dev_bleu, Provenance provenance);

    const nn::TransformerModel &model() const { return model_; }
    const nn::ArchConfig &arch() const { return model_.arch(); }
    const std::string &vocab_id() const { return vocab_id_; }
    std::size_t updates() const { return updates_; }
    std::size_t epochs() const { return epochs_; }
    double dev_bleu() const { return dev_bleu_; }
    const Provenance &provenance() const { return provenance_; }
    // "ckpt-" plus 16 hex digits of the serialized content hash.
    const std::string &id() const { return id_; }

    std::string serialize() const;
    static ModelCheckpoint parse(const std::string &bytes);
    void save(const std::string &path) const;
    static ModelCheckpoint load(const std::string &path);

  private:
    nn::TransformerModel model_;
    std::string vocab_id_;
    std::size_t updates_;
    std::size_t epochs_;
    double dev_bleu_;
    Provenance provenance_;
    std::string id_;
};

// Copy of a model with every weight rounded to float32.
nn::TransformerModel rounded_copy(const nn::TransformerModel &model);

struct CheckpointRecord {
    std::size_t index = 0;
    std::size_t updates = 0;
    std::size_t epochs = 0;
    double dev_bleu = 0.0;
    double train_loss = 0.0; // mean training objective since the previous checkpoint
};

struct TrainReport {
    std::vector<CheckpointRecord> history;
    StopReason stop_reason = StopReason::max_updates;
    std::size_t best_index = 0;
    std::size_t updates = 0;
    std::size_t epochs = 0;
    double seconds = 0.0;
    std::optional<ModelCheckpoint> best;

    double best_dev_bleu() const { return history.at(best_index).dev_bleu; }
    const ModelCheckpoint &best_checkpoint() const;
    // One "checkpoint <n> updates <u> dev_bleu <b>" line per evaluation,
    // then stop_reason and best lines.
    std::string log() const;
    // Full-precision form of everything except the checkpoint weights.
    std::string serialize() const;
    static TrainReport parse(const std::string &text);
};

// BLEU of the model's beam decodes on a BPE-encoded dev corpus, computed on
// detokenized text against the corpus references.
BleuReport evaluate_bleu(const nn::TransformerModel &model, const BpeModel &bpe, const ParallelCorpus &dev,
                         const BeamConfig &beam, std::size_t threads = 1);

std::vector<nn::TrainingExample> to_examples(const BpeModel &bpe, const ParallelCorpus &corpus);

// Length-sorted token-count batches over a shuffled order.
std::vector<std::vector<std::size_t>> make_batches(const std::vector<nn::TrainingExample> &examples,
                                                   std::size_t batch_tokens, std::uint64_t seed);

std::string lineage_entry(const std::string &kind, const std::string &corpus_id, const std::string &teacher);

TrainReport train(nn::TransformerModel model, const ParallelCorpus &train_corpus, const ParallelCorpus &dev_corpus,
                  const BpeModel &bpe, const TrainConfig &config);

// Continued training from a parent checkpoint with fresh optimizer state.
TrainReport adapt(const ModelCheckpoint &parent, const nn::ArchConfig &arch, const ParallelCorpus &train_corpus,
                  const ParallelCorpus &dev_corpus, const BpeModel &bpe, const TrainConfig &config);

} // namespace kdadapt
