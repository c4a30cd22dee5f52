#include "kdadapt/trainer.hpp"

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include "kdadapt/error.hpp"
#include "kdadapt/hash.hpp"
#include "kdadapt/random.hpp"

namespace kdadapt {

double LearningRateSchedule::rate(std::size_t update) const {
    if (update == 0)
        return 0.0;
    const double t = static_cast<double>(update);
    const double w = static_cast<double>(std::max<std::size_t>(1, warmup_updates));
    return peak * std::min(t / w, std::sqrt(w / t));
}

void optimizer_step(std::vector<nn::NamedTensor> &params, AdamState &state, const AdamConfig &adam,
                    const LearningRateSchedule &schedule, std::size_t t) {
    if (t == 0)
        fail(ErrorCategory::validation, "optimizer step numbers start at 1");
    for (const auto &p : params)
        if (!p.tensor.grad.allFinite())
            fail(ErrorCategory::numeric, "non-finite gradient in parameter " + p.name + " at update " +
                                             std::to_string(t));
    if (state.first.size() != params.size()) {
        state.first.clear();
        state.second.clear();
        for (const auto &p : params) {
            state.first.push_back(nn::Matrix::Zero(p.tensor.value.rows(), p.tensor.value.cols()));
            state.second.push_back(nn::Matrix::Zero(p.tensor.value.rows(), p.tensor.value.cols()));
        }
    }
    const double lr = schedule.rate(t);
    const double c1 = 1.0 - std::pow(adam.beta1, static_cast<double>(t));
    const double c2 = 1.0 - std::pow(adam.beta2, static_cast<double>(t));
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto &value = params[i].tensor.value;
        const auto &g = params[i].tensor.grad;
        auto &m = state.first[i];
        auto &v = state.second[i];
        m = adam.beta1 * m + (1.0 - adam.beta1) * g;
        v = adam.beta2 * v + (1.0 - adam.beta2) * g.cwiseProduct(g);
        auto step = (m.array() / c1) / ((v.array() / c2).sqrt() + adam.epsilon);
        if (adam.weight_decay != 0.0)
            value.array() -= lr * (step + adam.weight_decay * value.array());
        else
            value.array() -= lr * step;
    }
    state.step = t;
}

std::string stop_reason_name(StopReason reason) {
    switch (reason) {
    case StopReason::max_updates:
        return "max_updates";
    case StopReason::max_epochs:
        return "max_epochs";
    case StopReason::early_stop:
        return "early_stop";
    }
    return "unknown";
}

StopReason parse_stop_reason(const std::string &text) {
    if (text == "max_updates")
        return StopReason::max_updates;
    if (text == "max_epochs")
        return StopReason::max_epochs;
    if (text == "early_stop")
        return StopReason::early_stop;
    fail(ErrorCategory::validation, "unknown stop reason '" + text + "'");
}

StoppingRule::StoppingRule(StoppingLimits limits) : limits_(limits) {
    if (limits_.patience < 1)
        fail(ErrorCategory::validation, "patience must be at least 1");
}

bool StoppingRule::observe(double score) {
    const bool improved = checkpoints_ == 0 || score > best_score_;
    if (improved) {
        best_index_ = checkpoints_;
        best_score_ = score;
    }
    ++checkpoints_;
    return improved;
}

std::optional<StopReason> StoppingRule::check(std::size_t updates, std::size_t epochs) const {
    if (updates >= limits_.max_updates)
        return StopReason::max_updates;
    if (epochs >= limits_.max_epochs)
        return StopReason::max_epochs;
    if (checkpoints_ > 0 && since_best() >= limits_.patience)
        return StopReason::early_stop;
    return std::nullopt;
}

ScheduleOutcome run_schedule(const StoppingLimits &limits, std::size_t interval, std::size_t updates_per_epoch,
                             const std::function<void(std::size_t, std::size_t)> &update,
                             const std::function<double(std::size_t, std::size_t)> &evaluate) {
    if (interval < 1)
        fail(ErrorCategory::validation, "checkpoint interval must be at least 1");
    if (updates_per_epoch < 1)
        fail(ErrorCategory::validation, "an epoch needs at least one update");
    ScheduleOutcome out;
    StoppingRule rule(limits);
    bool covered = true;
    auto checkpoint = [&] {
        const double score = evaluate(out.updates, out.epochs);
        rule.observe(score);
        out.checkpoints.push_back({out.updates, out.epochs, score});
        covered = true;
    };

    auto stop = rule.check(0, 0);
    while (!stop) {
        for (std::size_t i = 0; i < updates_per_epoch; ++i) {
            update(out.epochs, i);
            ++out.updates;
            covered = false;
            if (out.updates % interval == 0)
                checkpoint();
            stop = rule.check(out.updates, out.epochs);
            if (stop)
                break;
        }
        if (!stop) {
            ++out.epochs;
            stop = rule.check(out.updates, out.epochs);
        }
    }
    if (!covered || out.checkpoints.empty())
        checkpoint();
    out.reason = *stop;
    out.best_index = rule.best_index();
    return out;
}

void TrainConfig::validate() const {
    if (limits.patience < 1)
        fail(ErrorCategory::validation, "patience must be at least 1");
    if (checkpoint_interval < 1)
        fail(ErrorCategory::validation, "checkpoint_interval must be at least 1");
    if (batch_tokens < 1)
        fail(ErrorCategory::validation, "batch_tokens must be at least 1");
    if (!(schedule.peak > 0.0))
        fail(ErrorCategory::validation, "learning rate peak must be positive");
    if (schedule.warmup_updates < 1)
        fail(ErrorCategory::validation, "warmup_updates must be at least 1");
    if (!(label_smoothing >= 0.0 && label_smoothing < 1.0))
        fail(ErrorCategory::validation, "label_smoothing must be in [0, 1)");
    dev_beam.validate();
}

std::string TrainConfig::describe() const {
    char buf[512];
    std::snprintf(buf, sizeof buf,
                  "max_updates=%zu max_epochs=%zu patience=%zu interval=%zu batch_tokens=%zu lr=%.17g warmup=%zu "
                  "beta1=%.17g beta2=%.17g eps=%.17g wd=%.17g ls=%.17g seed=%llu beam=%zu len=%.17gx+%.17g alpha=%.17g",
                  limits.max_updates, limits.max_epochs, limits.patience, checkpoint_interval, batch_tokens,
                  schedule.peak, schedule.warmup_updates, adam.beta1, adam.beta2, adam.epsilon, adam.weight_decay,
                  label_smoothing, static_cast<unsigned long long>(seed), dev_beam.beam_size, dev_beam.max_len_factor,
                  dev_beam.max_len_constant, dev_beam.length_penalty_alpha);
    return buf;
}

nn::TransformerModel rounded_copy(const nn::TransformerModel &model) {
    nn::TransformerModel copy = model;
    for (auto &p : copy.parameters()) {
        p.tensor.value = p.tensor.value.unaryExpr([](double v) { return static_cast<double>(static_cast<float>(v)); });
        p.tensor.grad.setZero();
    }
    return copy;
}

namespace {

constexpr const char *kCheckpointMagic = "kdadapt-checkpoint";

std::string format_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

void append_f32(std::string &out, double v) {
    const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(v));
    for (int b = 0; b < 4; ++b)
        out.push_back(static_cast<char>((bits >> (8 * b)) & 0xffu));
}

double read_f32(const std::string &bytes, std::size_t pos) {
    std::uint32_t bits = 0;
    for (int b = 0; b < 4; ++b)
        bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[pos + static_cast<std::size_t>(b)]))
                << (8 * b);
    return static_cast<double>(std::bit_cast<float>(bits));
}

class HeaderReader {
  public:
    explicit HeaderReader(const std::string &bytes) : bytes_(bytes) {}

    std::string line() {
        const auto end = bytes_.find('\n', pos_);
        if (end == std::string::npos)
            fail(ErrorCategory::validation, "truncated checkpoint header");
        std::string out = bytes_.substr(pos_, end - pos_);
        pos_ = end + 1;
        return out;
    }

    std::string field(const std::string &key) {
        const std::string l = line();
        if (l.rfind(key + " ", 0) != 0)
            fail(ErrorCategory::validation, "checkpoint: expected field '" + key + "', found '" + l + "'");
        return l.substr(key.size() + 1);
    }

    std::size_t count(const std::string &key) { return std::stoull(field(key)); }
    std::size_t pos() const { return pos_; }
    void skip(std::size_t n) { pos_ += n; }

  private:
    const std::string &bytes_;
    std::size_t pos_ = 0;
};

} // namespace

ModelCheckpoint::ModelCheckpoint(nn::TransformerModel model, std::string vocab_id, std::size_t updates,
                                 std::size_t epochs, double dev_bleu, Provenance provenance)
    : model_(rounded_copy(model)), vocab_id_(std::move(vocab_id)), updates_(updates), epochs_(epochs),
      dev_bleu_(dev_bleu), provenance_(std::move(provenance)) {
    if (provenance_.lineage.empty() || provenance_.lineage.front() != kRandomInit)
        fail(ErrorCategory::validation, "checkpoint lineage must start at 'random'");
    id_ = "ckpt-" + sha256_hex(serialize()).substr(0, 16);
}

std::string ModelCheckpoint::serialize() const {
    const auto &arch = model_.arch();
    std::ostringstream head;
    head << kCheckpointMagic << " v" << kCheckpointFormatVersion << '\n';
    head << "size_class " << nn::size_class_name(arch.size_class) << '\n';
    head << "total_layers " << arch.total_layers << '\n';
    head << "ff_dim " << arch.ff_dim << '\n';
    head << "hidden_dim " << arch.hidden_dim << '\n';
    head << "num_heads " << arch.num_heads << '\n';
    head << "dropout " << format_double(arch.dropout) << '\n';
    head << "scale_factor " << arch.scale_factor << '\n';
    head << "vocab_size " << model_.vocab_size() << '\n';
    head << "vocab_id " << vocab_id_ << '\n';
    head << "seed " << model_.seed() << '\n';
    head << "updates " << updates_ << '\n';
    head << "epochs " << epochs_ << '\n';
    head << "dev_bleu " << format_double(dev_bleu_) << '\n';
    head << "initialized_from " << provenance_.initialized_from << '\n';
    head << "trained_on " << provenance_.trained_on << '\n';
    head << "distilled_by " << provenance_.distilled_by << '\n';
    head << "lineage " << provenance_.lineage.size() << '\n';
    for (const auto &entry : provenance_.lineage)
        head << "step " << entry << '\n';
    head << "params " << model_.parameters().size() << '\n';
    std::string out = head.str();
    for (const auto &p : model_.parameters()) {
        const auto &v = p.tensor.value;
        out += "param " + p.name + " " + std::to_string(v.rows()) + " " + std::to_string(v.cols()) + "\n";
        for (Eigen::Index i = 0; i < v.size(); ++i)
            append_f32(out, v.data()[i]);
    }
    return out;
}

ModelCheckpoint ModelCheckpoint::parse(const std::string &bytes) {
    HeaderReader in(bytes);
    const std::string magic = in.line();
    const std::string expected = std::string(kCheckpointMagic) + " v" + std::to_string(kCheckpointFormatVersion);
    if (magic != expected)
        fail(ErrorCategory::validation, "not a checkpoint or unsupported version: '" + magic + "'");
    nn::ArchConfig arch;
    arch.size_class = nn::parse_size_class(in.field("size_class"));
    arch.total_layers = static_cast<int>(in.count("total_layers"));
    arch.ff_dim = static_cast<int>(in.count("ff_dim"));
    arch.hidden_dim = static_cast<int>(in.count("hidden_dim"));
    arch.num_heads = static_cast<int>(in.count("num_heads"));
    arch.dropout = std::stod(in.field("dropout"));
    arch.scale_factor = static_cast<int>(in.count("scale_factor"));
    const std::size_t vocab_size = in.count("vocab_size");
    std::string vocab_id = in.field("vocab_id");
    const std::uint64_t seed = std::stoull(in.field("seed"));
    const std::size_t updates = in.count("updates");
    const std::size_t epochs = in.count("epochs");
    const double dev_bleu = std::stod(in.field("dev_bleu"));
    Provenance prov;
    prov.initialized_from = in.field("initialized_from");
    prov.trained_on = in.field("trained_on");
    prov.distilled_by = in.field("distilled_by");
    const std::size_t steps = in.count("lineage");
    for (std::size_t i = 0; i < steps; ++i)
        prov.lineage.push_back(in.field("step"));
    const std::size_t nparams = in.count("params");

    nn::TransformerModel model = nn::build_model(arch, vocab_size, seed);
    auto &params = model.parameters();
    if (nparams != params.size())
        fail(ErrorCategory::validation, "checkpoint has " + std::to_string(nparams) + " parameters, architecture expects " +
                                            std::to_string(params.size()));
    for (auto &p : params) {
        std::istringstream l(in.field("param"));
        std::string name;
        Eigen::Index rows = 0, cols = 0;
        l >> name >> rows >> cols;
        if (name != p.name || rows != p.tensor.value.rows() || cols != p.tensor.value.cols())
            fail(ErrorCategory::validation, "checkpoint parameter " + name + " does not match " + p.name);
        const auto n = static_cast<std::size_t>(rows * cols);
        if (in.pos() + 4 * n > bytes.size())
            fail(ErrorCategory::validation, "truncated checkpoint data for " + name);
        for (std::size_t i = 0; i < n; ++i)
            p.tensor.value.data()[i] = read_f32(bytes, in.pos() + 4 * i);
        in.skip(4 * n);
    }
    if (in.pos() != bytes.size())
        fail(ErrorCategory::validation, "trailing bytes after checkpoint data");
    return ModelCheckpoint(std::move(model), std::move(vocab_id), updates, epochs, dev_bleu, std::move(prov));
}

void ModelCheckpoint::save(const std::string &path) const {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out)
        fail(ErrorCategory::io, "cannot write checkpoint " + path);
    const std::string bytes = serialize();
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out)
        fail(ErrorCategory::io, "failed writing checkpoint " + path);
}

ModelCheckpoint ModelCheckpoint::load(const std::string &path) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        fail(ErrorCategory::io, "cannot read checkpoint " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse(ss.str());
}

const ModelCheckpoint &TrainReport::best_checkpoint() const {
    if (!best)
        fail(ErrorCategory::protocol, "train report has no checkpoint");
    return *best;
}

std::string TrainReport::log() const {
    std::string out;
    char buf[160];
    for (const auto &r : history) {
        std::snprintf(buf, sizeof buf, "checkpoint %zu updates %zu dev_bleu %.4f\n", r.index, r.updates, r.dev_bleu);
        out += buf;
    }
    out += "stop_reason " + stop_reason_name(stop_reason) + "\n";
    std::snprintf(buf, sizeof buf, "best_checkpoint %zu\n", best_index);
    out += buf;
    if (best)
        out += "best_id " + best->id() + "\n";
    return out;
}

std::string TrainReport::serialize() const {
    std::string out = "kdadapt-train-report v1\n";
    for (const auto &r : history)
        out += "checkpoint " + std::to_string(r.index) + " updates " + std::to_string(r.updates) + " epochs " +
               std::to_string(r.epochs) + " dev_bleu " + format_double(r.dev_bleu) + " train_loss " +
               format_double(r.train_loss) + "\n";
    out += "stop_reason " + stop_reason_name(stop_reason) + "\n";
    out += "best_checkpoint " + std::to_string(best_index) + "\n";
    out += "updates " + std::to_string(updates) + "\n";
    out += "epochs " + std::to_string(epochs) + "\n";
    out += "seconds " + format_double(seconds) + "\n";
    out += "best_id " + (best ? best->id() : std::string("-")) + "\n";
    return out;
}

TrainReport TrainReport::parse(const std::string &text) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line) || line != "kdadapt-train-report v1")
        fail(ErrorCategory::validation, "not a train report: '" + line + "'");
    TrainReport report;
    while (std::getline(in, line)) {
        std::istringstream l(line);
        std::string key;
        l >> key;
        if (key == "checkpoint") {
            CheckpointRecord r;
            std::string k1, k2, k3, k4;
            l >> r.index >> k1 >> r.updates >> k2 >> r.epochs >> k3 >> r.dev_bleu >> k4 >> r.train_loss;
            if (!l || k1 != "updates" || k2 != "epochs" || k3 != "dev_bleu" || k4 != "train_loss")
                fail(ErrorCategory::validation, "malformed checkpoint line: " + line);
            report.history.push_back(r);
        } else if (key == "stop_reason") {
            std::string v;
            l >> v;
            report.stop_reason = parse_stop_reason(v);
        } else if (key == "best_checkpoint") {
            l >> report.best_index;
        } else if (key == "updates") {
            l >> report.updates;
        } else if (key == "epochs") {
            l >> report.epochs;
        } else if (key == "seconds") {
            l >> report.seconds;
        } else if (key == "best_id") {
            continue;
        } else {
            fail(ErrorCategory::validation, "unknown train report line: " + line);
        }
    }
    if (report.history.empty() || report.best_index >= report.history.size())
        fail(ErrorCategory::validation, "train report without a valid best checkpoint");
    return report;
}

BleuReport evaluate_bleu(const nn::TransformerModel &model, const BpeModel &bpe, const ParallelCorpus &dev,
                         const BeamConfig &beam, std::size_t threads) {
    const ParallelCorpus decoded = decode_corpus(model, bpe, dev, beam, threads);
    std::vector<Sentence> hyps;
    std::vector<Sentence> refs;
    hyps.reserve(dev.size());
    refs.reserve(dev.size());
    for (std::size_t i = 0; i < dev.size(); ++i) {
        hyps.push_back(detokenize(decoded[i].target));
        refs.push_back(detokenize(dev[i].target));
    }
    return corpus_bleu(hyps, refs);
}

std::vector<nn::TrainingExample> to_examples(const BpeModel &bpe, const ParallelCorpus &corpus) {
    std::vector<nn::TrainingExample> out;
    out.reserve(corpus.size());
    for (const auto &pair : corpus.pairs())
        out.push_back({bpe.encode(pair.source), bpe.encode(pair.target)});
    return out;
}

std::vector<std::vector<std::size_t>> make_batches(const std::vector<nn::TrainingExample> &examples,
                                                   std::size_t batch_tokens, std::uint64_t seed) {
    auto cost = [&](std::size_t i) { return std::max(examples[i].source.size(), examples[i].target.size() + 1); };
    std::vector<std::size_t> order(examples.size());
    std::iota(order.begin(), order.end(), 0);
    Rng rng(seed);
    rng.shuffle(std::span<std::size_t>(order));
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return cost(a) < cost(b); });
    std::vector<std::vector<std::size_t>> batches;
    std::vector<std::size_t> current;
    std::size_t tokens = 0;
    for (auto i : order) {
        if (!current.empty() && tokens + cost(i) > batch_tokens) {
            batches.push_back(std::move(current));
            current.clear();
            tokens = 0;
        }
        current.push_back(i);
        tokens += cost(i);
    }
    if (!current.empty())
        batches.push_back(std::move(current));
    rng.shuffle(std::span<std::vector<std::size_t>>(batches));
    return batches;
}

std::string lineage_entry(const std::string &kind, const std::string &corpus_id, const std::string &teacher) {
    return kind + " data=" + corpus_id + " teacher=" + teacher;
}

namespace {

TrainReport run_training(nn::TransformerModel model, const ParallelCorpus &train_corpus,
                         const ParallelCorpus &dev_corpus, const BpeModel &bpe, const TrainConfig &config,
                         Provenance provenance) {
    config.validate();
    require_vocab_match(model, bpe);
    if (train_corpus.empty())
        fail(ErrorCategory::validation, "training corpus is empty");
    if (dev_corpus.empty())
        fail(ErrorCategory::validation, "dev corpus is empty");
    if (dev_corpus.is_distilled())
        fail(ErrorCategory::protocol, "dev corpus " + dev_corpus.name() + " holds teacher outputs; references must be original");
    require_bpe_encoded(bpe, train_corpus);
    require_bpe_encoded(bpe, dev_corpus);

    const auto start = std::chrono::steady_clock::now();
    const auto examples = to_examples(bpe, train_corpus);
    auto epoch_seed = [&](std::size_t epoch) { return mix_seed(config.seed, 0x10000 + epoch); };
    std::vector<std::vector<std::size_t>> batches = make_batches(examples, config.batch_tokens, epoch_seed(0));
    const std::size_t per_epoch = batches.size();

    AdamState adam;
    std::size_t step = 0;
    double loss_sum = 0.0;
    std::size_t loss_count = 0;
    std::vector<nn::TrainingExample> batch;

    TrainReport report;
    std::optional<nn::TransformerModel> best_model;
    double best_bleu = 0.0;

    auto update = [&](std::size_t epoch, std::size_t i) {
        if (i == 0 && epoch > 0)
            batches = make_batches(examples, config.batch_tokens, epoch_seed(epoch));
        batch.clear();
        for (auto idx : batches[i])
            batch.push_back(examples[idx]);
        ++step;
        nn::LossOptions opts{config.label_smoothing, true, mix_seed(config.seed, 0x20000000 + step)};
        const auto loss = nn::loss_and_gradients(model, batch, opts);
        optimizer_step(model.parameters(), adam, config.adam, config.schedule, step);
        loss_sum += loss.loss;
        ++loss_count;
    };
    auto evaluate = [&](std::size_t updates, std::size_t epochs) {
        nn::TransformerModel snapshot = rounded_copy(model);
        const double bleu = evaluate_bleu(snapshot, bpe, dev_corpus, config.dev_beam, config.eval_threads).bleu;
        CheckpointRecord rec;
        rec.index = report.history.size();
        rec.updates = updates;
        rec.epochs = epochs;
        rec.dev_bleu = bleu;
        rec.train_loss = loss_count ? loss_sum / static_cast<double>(loss_count) : 0.0;
        loss_sum = 0.0;
        loss_count = 0;
        if (!best_model || bleu > best_bleu) {
            best_model = std::move(snapshot);
            best_bleu = bleu;
            report.best_index = rec.index;
        }
        report.history.push_back(rec);
        return bleu;
    };

    const ScheduleOutcome outcome =
        run_schedule(config.limits, config.checkpoint_interval, per_epoch, update, evaluate);
    report.stop_reason = outcome.reason;
    report.updates = outcome.updates;
    report.epochs = outcome.epochs;
    const auto &best_rec = report.history[report.best_index];
    report.best.emplace(std::move(*best_model), bpe.fingerprint(), best_rec.updates, best_rec.epochs,
                        best_rec.dev_bleu, std::move(provenance));
    report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return report;
}

} // namespace

TrainReport train(nn::TransformerModel model, const ParallelCorpus &train_corpus, const ParallelCorpus &dev_corpus,
                  const BpeModel &bpe, const TrainConfig &config) {
    Provenance prov;
    prov.initialized_from = kRandomInit;
    prov.trained_on = train_corpus.id();
    prov.distilled_by = train_corpus.is_distilled() ? train_corpus.distilled_by() : kNoTeacher;
    prov.lineage = {kRandomInit, lineage_entry("train", prov.trained_on, prov.distilled_by)};
    return run_training(std::move(model), train_corpus, dev_corpus, bpe, config, std::move(prov));
}

TrainReport adapt(const ModelCheckpoint &parent, const nn::ArchConfig &arch, const ParallelCorpus &train_corpus,
                  const ParallelCorpus &dev_corpus, const BpeModel &bpe, const TrainConfig &config) {
    if (!(parent.arch() == arch))
        fail(ErrorCategory::protocol, "parent architecture " + parent.arch().describe() + " does not match " +
                                          arch.describe());
    if (parent.vocab_id() != bpe.fingerprint())
        fail(ErrorCategory::protocol, "parent checkpoint was trained with a different BPE model");
    Provenance prov;
    prov.initialized_from = parent.id();
    prov.trained_on = train_corpus.id();
    prov.distilled_by = train_corpus.is_distilled() ? train_corpus.distilled_by() : kNoTeacher;
    prov.lineage = parent.provenance().lineage;
    prov.lineage.push_back(lineage_entry("adapt", prov.trained_on, prov.distilled_by) + " from=" + parent.id());
    return run_training(parent.model(), train_corpus, dev_corpus, bpe, config, std::move(prov));
}

} // namespace kdadapt
