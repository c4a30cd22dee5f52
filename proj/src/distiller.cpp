#include "kdadapt/distiller.hpp"

#include <cstdio>

#include "kdadapt/error.hpp"

namespace kdadapt {

std::string DistilledCorpus::sidecar() const {
    char buf[256];
    std::snprintf(buf, sizeof buf, "beam_size %zu\nmax_len_factor %.17g\nmax_len_constant %.17g\nalpha %.17g\n",
                  beam.beam_size, beam.max_len_factor, beam.max_len_constant, beam.length_penalty_alpha);
    return "kdadapt-distilled v1\nteacher " + teacher_id + "\n" + buf + "source_corpus " + original_id +
           "\nsource_hash " + corpus.fingerprint() + "\n";
}

DistilledCorpus distill(const ModelCheckpoint &teacher, const BpeModel &bpe, const ParallelCorpus &train_corpus,
                        const BeamConfig &beam, std::size_t threads) {
    if (train_corpus.is_distilled())
        fail(ErrorCategory::protocol, "corpus " + train_corpus.name() + " is already distilled by " +
                                          train_corpus.distilled_by());
    if (teacher.vocab_id() != bpe.fingerprint())
        fail(ErrorCategory::protocol, "teacher " + teacher.id() + " was trained with a different BPE model");
    ParallelCorpus decoded = decode_corpus(teacher.model(), bpe, train_corpus, beam, threads);
    std::vector<SentencePair> pairs = decoded.pairs();
    ParallelCorpus out(train_corpus.name() + ".distilled", train_corpus.role(), std::move(pairs), teacher.id());
    return DistilledCorpus{std::move(out), teacher.id(), beam, train_corpus.id()};
}

TrainReport train_student_distilled(const nn::ArchConfig &arch, std::uint64_t model_seed,
                                    const DistilledCorpus &distilled, const ParallelCorpus &dev_corpus,
                                    const BpeModel &bpe, const TrainConfig &config) {
    if (dev_corpus.is_distilled())
        fail(ErrorCategory::protocol, "student dev corpus must hold original references");
    return train(nn::build_model(arch, bpe.model_vocab_size(), model_seed), distilled.corpus, dev_corpus, bpe,
                 config);
}

TrainReport train_student_distilled(const ModelCheckpoint &init, const DistilledCorpus &distilled,
                                    const ParallelCorpus &dev_corpus, const BpeModel &bpe, const TrainConfig &config) {
    if (dev_corpus.is_distilled())
        fail(ErrorCategory::protocol, "student dev corpus must hold original references");
    return adapt(init, init.arch(), distilled.corpus, dev_corpus, bpe, config);
}

ContinuedResult continue_on_original(const TrainReport &student_report, const DistilledCorpus &distilled,
                                     const ParallelCorpus &original_corpus, const ParallelCorpus &dev_corpus,
                                     const BpeModel &bpe, TrainConfig config) {
    if (distilled.original_id != original_corpus.id())
        fail(ErrorCategory::protocol, "distilled corpus was derived from " + distilled.original_id + ", not " +
                                          original_corpus.id());
    if (original_corpus.is_distilled())
        fail(ErrorCategory::protocol, "continued training needs the original, un-distilled corpus");
    const ModelCheckpoint &student = student_report.best_checkpoint();
    if (student.provenance().trained_on != distilled.corpus.id())
        fail(ErrorCategory::protocol, "student " + student.id() + " was not trained on " + distilled.corpus.id());
    config.limits.patience = kContinuePatience;
    ContinuedResult result;
    result.pre_phase_bleu = student.dev_bleu();
    result.continued = adapt(student, student.arch(), original_corpus, dev_corpus, bpe, config);
    result.improved = result.continued.best_checkpoint().dev_bleu() > result.pre_phase_bleu;
    result.selected = result.improved ? result.continued.best_checkpoint() : student;
    return result;
}

const DistilledCorpus &DistillationCache::get(const ModelCheckpoint &teacher, const BpeModel &bpe,
                                              const ParallelCorpus &corpus, const BeamConfig &beam,
                                              std::size_t threads) {
    Key key{teacher.id(), corpus.id(), beam.beam_size, beam.max_len_factor, beam.max_len_constant,
            beam.length_penalty_alpha};
    {
        std::lock_guard lock(mutex_);
        auto it = entries_.find(key);
        if (it != entries_.end())
            return it->second;
    }
    DistilledCorpus result = distill(teacher, bpe, corpus, beam, threads);
    std::lock_guard lock(mutex_);
    auto [it, inserted] = entries_.emplace(key, std::move(result));
    if (inserted)
        ++misses_;
    return it->second;
}

std::size_t DistillationCache::size() const {
    std::lock_guard lock(mutex_);
    return entries_.size();
}

} // namespace kdadapt
