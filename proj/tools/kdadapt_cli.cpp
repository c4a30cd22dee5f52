#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "kdadapt/allocator.hpp"
#include "kdadapt/bleu.hpp"
#include "kdadapt/corpus.hpp"
#include "kdadapt/decoder.hpp"
#include "kdadapt/distiller.hpp"
#include "kdadapt/error.hpp"
#include "kdadapt/pipeline.hpp"
#include "kdadapt/tokenizer.hpp"
#include "kdadapt/trainer.hpp"

#ifndef KDADAPT_VERSION
#define KDADAPT_VERSION "0.0.0"
#endif

namespace fs = std::filesystem;
using namespace kdadapt;

namespace {

struct GlobalConfig {
    std::string artifact_dir;
    std::string log_level = "info";
    bool full_scale = false;
    std::string seeds = "1";
    std::size_t threads = 1;
};

struct TrainFlags {
    std::optional<std::size_t> max_updates; // unset: scale default
    std::size_t max_epochs = 100;
    std::size_t patience = 10;
    std::size_t interval = 200;
    std::size_t batch_tokens = 1000;
    double lr = 1e-3;
    std::size_t warmup = 400;
    double label_smoothing = 0.1;
    std::size_t dev_beam = kDefaultBeamSize;

    void add(CLI::App &cmd) {
        cmd.add_option("--max-updates", max_updates, "update limit (default 5000 at desk scale, 300000 at full scale)");
        cmd.add_option("--max-epochs", max_epochs, "epoch limit")->capture_default_str();
        cmd.add_option("--patience", patience, "checkpoints without improvement before stopping")->capture_default_str();
        cmd.add_option("--interval", interval, "updates between checkpoints")->capture_default_str();
        cmd.add_option("--batch-tokens", batch_tokens, "tokens per batch")->capture_default_str();
        cmd.add_option("--lr", lr, "peak learning rate")->capture_default_str();
        cmd.add_option("--warmup", warmup, "warmup updates")->capture_default_str();
        cmd.add_option("--label-smoothing", label_smoothing)->capture_default_str();
        cmd.add_option("--dev-beam", dev_beam, "beam size for dev BLEU")->capture_default_str();
    }

    TrainConfig build(const GlobalConfig &g, std::uint64_t seed) const {
        TrainConfig c;
        c.limits.max_updates = max_updates.value_or(g.full_scale ? 300000 : 5000);
        c.limits.max_epochs = max_epochs;
        c.limits.patience = patience;
        c.checkpoint_interval = interval;
        c.batch_tokens = batch_tokens;
        c.schedule.peak = lr;
        c.schedule.warmup_updates = warmup;
        c.label_smoothing = label_smoothing;
        c.seed = seed;
        c.dev_beam.beam_size = dev_beam;
        c.eval_threads = g.threads;
        c.validate();
        return c;
    }
};

int scale_of(const GlobalConfig &g, int explicit_scale) {
    if (explicit_scale > 0)
        return explicit_scale;
    return g.full_scale ? 1 : nn::kDeskScaleFactor;
}

std::string read_text(const std::string &path) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        fail(ErrorCategory::io, "cannot read " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text(const std::string &path, const std::string &text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out)
        fail(ErrorCategory::io, "cannot write " + path);
    out << text;
    if (!out)
        fail(ErrorCategory::io, "failed writing " + path);
}

std::vector<std::string> read_lines(const std::string &path) {
    std::istringstream in(read_text(path));
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line))
        lines.push_back(line);
    return lines;
}

// Loads a corpus prefix; a distillation sidecar next to it marks the corpus
// as teacher-written.
ParallelCorpus load_with_sidecar(const std::string &prefix, CorpusRole role) {
    ParallelCorpus corpus = load_corpus_prefix(prefix, role);
    const std::string meta = prefix + ".meta";
    if (!fs::exists(meta))
        return corpus;
    std::istringstream in(read_text(meta));
    std::string line, teacher, hash;
    std::getline(in, line);
    if (line != "kdadapt-distilled v1")
        fail(ErrorCategory::validation, meta + " is not a distillation sidecar");
    while (std::getline(in, line)) {
        if (line.starts_with("teacher "))
            teacher = line.substr(8);
        else if (line.starts_with("source_hash "))
            hash = line.substr(12);
    }
    if (hash != corpus.fingerprint())
        fail(ErrorCategory::protocol, prefix + " does not match the content recorded in its sidecar");
    return ParallelCorpus(corpus.name(), role, corpus.pairs(), teacher);
}

std::vector<std::uint64_t> parse_seeds(const std::string &text) {
    std::vector<std::uint64_t> seeds;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        try {
            std::size_t used = 0;
            seeds.push_back(std::stoull(item, &used));
            if (used != item.size())
                throw std::invalid_argument(item);
        } catch (const std::logic_error &) {
            fail(ErrorCategory::validation, "bad seed '" + item + "'");
        }
    }
    if (seeds.empty())
        fail(ErrorCategory::validation, "no seeds given");
    return seeds;
}

int parse_config_number(const std::string &text) {
    try {
        std::size_t used = 0;
        const int k = std::stoi(text, &used);
        if (used == text.size())
            return k;
    } catch (const std::logic_error &) {
    }
    fail(ErrorCategory::validation, "bad configuration number '" + text + "'");
}

// "1..9", "1,4,7" or a mix such as "1..3,9".
std::vector<int> parse_configs(const std::string &text) {
    std::vector<int> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        const auto dots = item.find("..");
        if (dots == std::string::npos) {
            out.push_back(parse_config_number(item));
            continue;
        }
        const int lo = parse_config_number(item.substr(0, dots));
        const int hi = parse_config_number(item.substr(dots + 2));
        if (hi < lo)
            fail(ErrorCategory::validation, "empty configuration range '" + item + "'");
        for (int k = lo; k <= hi; ++k)
            out.push_back(k);
    }
    if (out.empty())
        fail(ErrorCategory::validation, "no configurations given");
    for (int k : out)
        if (k < 1 || k > 9)
            fail(ErrorCategory::validation, "config_id " + std::to_string(k) + " is outside 1..9");
    return out;
}

struct PlanFlags {
    std::string gd;
    std::string id;
    std::string bpe;
    std::string student_size = "Tiny";
    std::string teacher_size = "Large";
    int student_scale = 0;
    int teacher_scale = 0;
    std::size_t dev_size = 500;
    std::size_t merges = 0;
    std::size_t concurrency = 0;
    std::size_t distill_beam = kDefaultBeamSize;
    std::string manifest;
    bool continue_general = false;
    bool no_continue_in_domain = false;
    TrainFlags teacher;
    TrainFlags student;

    void add(CLI::App &cmd) {
        cmd.add_option("--gd", gd, "general-domain corpus prefix (.src/.tgt)")->required();
        cmd.add_option("--id", id, "in-domain corpus prefix (.src/.tgt)")->required();
        cmd.add_option("--bpe", bpe, "merge file learned on the general-domain train split");
        cmd.add_option("--student-size", student_size, "Large, Medium, Small or Tiny")->capture_default_str();
        cmd.add_option("--teacher-size", teacher_size)->capture_default_str();
        cmd.add_option("--student-scale", student_scale, "divisor for student dimensions");
        cmd.add_option("--teacher-scale", teacher_scale, "divisor for teacher dimensions");
        cmd.add_option("--dev-size", dev_size, "pairs carved off the end of each corpus as dev")->capture_default_str();
        cmd.add_option("--merges", merges, "BPE merges when no --bpe is given");
        cmd.add_option("--concurrency", concurrency, "parallel jobs (default: cores / 2)");
        cmd.add_option("--distill-beam", distill_beam)->capture_default_str();
        cmd.add_option("--manifest", manifest, "manifest output path");
        cmd.add_flag("--continue-general", continue_general, "refine general-domain students on original data");
        cmd.add_flag("--no-continue-in-domain", no_continue_in_domain,
                     "skip refining in-domain students on original data");
        cmd.add_option("--teacher-max-updates", teacher.max_updates);
        cmd.add_option("--teacher-lr", teacher.lr);
        cmd.add_option("--student-max-updates", student.max_updates);
        cmd.add_option("--student-lr", student.lr);
        cmd.add_option("--interval", teacher.interval, "updates between checkpoints")->capture_default_str();
        cmd.add_option("--patience", teacher.patience)->capture_default_str();
        cmd.add_option("--warmup", teacher.warmup)->capture_default_str();
        cmd.add_option("--batch-tokens", teacher.batch_tokens)->capture_default_str();
    }

    std::vector<ExperimentPlan> plans(const GlobalConfig &g, const std::vector<int> &configs,
                                      const PlanData &data) const {
        const auto seeds = parse_seeds(g.seeds);
        TrainFlags s = student;
        s.interval = teacher.interval;
        s.patience = teacher.patience;
        s.warmup = teacher.warmup;
        s.batch_tokens = teacher.batch_tokens;
        std::vector<ExperimentPlan> out;
        for (int k : configs) {
            ExperimentPlan p = make_plan(k, data);
            p.student_size = nn::parse_size_class(student_size);
            p.teacher_size = nn::parse_size_class(teacher_size);
            p.student_scale = scale_of(g, student_scale);
            p.teacher_scale = scale_of(g, teacher_scale);
            p.seeds = seeds;
            p.teacher_config = teacher.build(g, 1);
            p.student_config = s.build(g, 1);
            p.distill_beam.beam_size = distill_beam;
            p.continue_general_students = continue_general;
            p.continue_in_domain_students = !no_continue_in_domain;
            if (data.bpe)
                p.bpe_merges = data.bpe->merges().size();
            else
                p.bpe_merges = merges ? merges : (g.full_scale ? kFullScaleMerges : kDeskMerges);
            p.validate();
            out.push_back(std::move(p));
        }
        return out;
    }

    PlanData data() const {
        auto [gtr, gdv] = split_dev(load_corpus_prefix(gd), dev_size);
        auto [itr, idv] = split_dev(load_corpus_prefix(id), dev_size);
        PlanData d{std::move(gtr), std::move(gdv), std::move(itr), std::move(idv), std::nullopt};
        if (!bpe.empty())
            d.bpe = load_bpe(bpe);
        return d;
    }
};

void setup_logging(const GlobalConfig &g) {
    auto logger = spdlog::stderr_color_mt("kdadapt");
    spdlog::set_default_logger(logger);
    const auto level = spdlog::level::from_str(g.log_level);
    if (level == spdlog::level::off && g.log_level != "off")
        fail(ErrorCategory::usage, "unknown log level '" + g.log_level + "'");
    spdlog::set_level(level);
}

int run_and_report(const GlobalConfig &g, const PlanFlags &flags, const std::vector<int> &configs) {
    setup_logging(g);
    const PlanData data = flags.data();
    const auto plans = flags.plans(g, configs, data);
    RunOptions options;
    options.artifact_dir = g.artifact_dir;
    options.concurrency = flags.concurrency;
    options.log = [](const std::string &m) { spdlog::info("{}", m); };
    const RunManifest manifest = run_plans(plans, data, options);
    std::string path = flags.manifest;
    if (path.empty() && !g.artifact_dir.empty())
        path = (fs::path(g.artifact_dir) / "manifest.txt").string();
    if (!path.empty()) {
        write_text(path, manifest.serialize());
        spdlog::info("manifest written to {}", path);
    }
    std::cout << manifest.report();
    if (!manifest.ok()) {
        std::string failed;
        for (const auto &j : manifest.jobs)
            if (j.status == JobStatus::failed)
                failed += (failed.empty() ? "" : ",") + j.name;
        std::cerr << "error job: failed jobs " << failed << "\n";
        return 1;
    }
    return 0;
}

std::string version_text() {
    return std::string("kdadapt ") + KDADAPT_VERSION + "\ncheckpoint format v" +
           std::to_string(kCheckpointFormatVersion) + "\nmerge file format v" + std::to_string(kBpeFormatVersion) +
           "\nmanifest format v" + std::to_string(kManifestFormatVersion);
}

} // namespace

int main(int argc, char **argv) {
    configure_allocator();
    CLI::App app{"Sequence-level distillation and domain adaptation for small translation models"};
    app.require_subcommand(1);
    app.set_version_flag("--version", version_text());

    GlobalConfig g;
    g.artifact_dir = artifact_dir_from_env();
    app.add_option("--artifacts", g.artifact_dir, std::string("artifact cache directory (default $") +
                                                      kArtifactDirEnv + ")");
    app.add_option("--log-level", g.log_level, "trace, debug, info, warn, error or off")->capture_default_str();
    app.add_flag("--full-scale", g.full_scale, "unscaled architectures and full-size limits");
    app.add_option("--seeds", g.seeds, "comma-separated seeds")->capture_default_str();
    app.add_option("--threads", g.threads, "decoding threads inside one job")->capture_default_str();

    int exit_code = 0;

    // gen-corpus
    DomainSpec spec;
    std::string reorder = "none";
    std::string corpus_out;
    auto *gen = app.add_subcommand("gen-corpus", "generate a synthetic parallel corpus");
    gen->add_option("--seed", spec.seed, "domain seed")->required();
    gen->add_option("--size", spec.size, "sentence pairs")->required();
    gen->add_option("--domain-fraction", spec.domain_lexicon_fraction, "share of remapped source words")
        ->capture_default_str();
    gen->add_option("--reorder", reorder, "none, swap_adjacent or reverse_window")->capture_default_str();
    gen->add_option("--vocab-size", spec.vocab_size)->capture_default_str();
    gen->add_option("--min-length", spec.min_length)->capture_default_str();
    gen->add_option("--max-length", spec.max_length)->capture_default_str();
    gen->add_option("--name", spec.name)->capture_default_str();
    gen->add_option("--out", corpus_out, "output prefix")->required();
    gen->callback([&] {
        spec.reorder_rule = parse_reorder(reorder);
        spec.validate();
        const ParallelCorpus corpus = generate_domain(spec);
        save_corpus_prefix(corpus, corpus_out);
        std::cout << "corpus " << corpus.id() << " pairs " << corpus.size() << "\n";
    });

    // learn-bpe
    std::string bpe_in, bpe_out;
    std::size_t merges = 0;
    auto *lbpe = app.add_subcommand("learn-bpe", "learn BPE merges on a corpus");
    lbpe->add_option("--in", bpe_in, "corpus prefix")->required();
    lbpe->add_option("--merges", merges, "number of merges (default 200, 30000 with --full-scale)");
    lbpe->add_option("--out", bpe_out, "merge file")->required();
    lbpe->callback([&] {
        const std::size_t n = merges ? merges : (g.full_scale ? kFullScaleMerges : kDeskMerges);
        const BpeModel model = learn_bpe(load_corpus_prefix(bpe_in), n);
        save_bpe(model, bpe_out);
        std::cout << "bpe " << model.fingerprint().substr(0, 16) << " merges " << model.merges().size()
                  << " vocab " << model.model_vocab_size() << "\n";
    });

    // apply-bpe
    std::string apply_model, apply_in, apply_out;
    auto *abpe = app.add_subcommand("apply-bpe", "segment a corpus with learned merges");
    abpe->add_option("--model", apply_model, "merge file")->required();
    abpe->add_option("--in", apply_in, "corpus prefix")->required();
    abpe->add_option("--out", apply_out, "output prefix")->required();
    abpe->callback([&] {
        const ParallelCorpus encoded = apply_bpe(load_bpe(apply_model), load_corpus_prefix(apply_in));
        save_corpus_prefix(encoded, apply_out);
        std::cout << "corpus " << encoded.id() << " pairs " << encoded.size() << "\n";
    });

    // train
    std::string arch_size, train_prefix, dev_prefix, train_bpe, train_out, train_init, report_out;
    int train_scale = 0;
    std::uint64_t train_seed = 1;
    TrainFlags train_flags;
    auto *tr = app.add_subcommand("train", "train a model, or continue one with --init");
    tr->add_option("--arch", arch_size, "Large, Medium, Small or Tiny")->required();
    tr->add_option("--scale", train_scale, "divisor for model dimensions (default 4, 1 with --full-scale)");
    tr->add_option("--train", train_prefix, "BPE-encoded train prefix")->required();
    tr->add_option("--dev", dev_prefix, "BPE-encoded dev prefix")->required();
    tr->add_option("--bpe", train_bpe, "merge file")->required();
    tr->add_option("--out", train_out, "checkpoint path")->required();
    tr->add_option("--init", train_init, "parent checkpoint for continued training");
    tr->add_option("--seed", train_seed, "model and data-order seed")->capture_default_str();
    tr->add_option("--report", report_out, "train report path (default <out>.report)");
    train_flags.add(*tr);
    tr->callback([&] {
        const BpeModel bpe = load_bpe(train_bpe);
        const ParallelCorpus train_corpus = load_with_sidecar(train_prefix, CorpusRole::train);
        const ParallelCorpus dev_corpus = load_with_sidecar(dev_prefix, CorpusRole::dev);
        const TrainConfig config = train_flags.build(g, train_seed);
        const nn::ArchConfig arch = nn::ArchConfig::preset(nn::parse_size_class(arch_size), scale_of(g, train_scale));
        TrainReport report = train_init.empty()
                                 ? train(nn::build_model(arch, bpe.model_vocab_size(), train_seed), train_corpus,
                                         dev_corpus, bpe, config)
                                 : adapt(ModelCheckpoint::load(train_init), arch, train_corpus, dev_corpus, bpe, config);
        report.best_checkpoint().save(train_out);
        write_text(report_out.empty() ? train_out + ".report" : report_out, report.serialize());
        std::cout << report.log();
    });

    // decode
    std::string dec_ckpt, dec_bpe, dec_in, dec_out;
    BeamConfig dec_beam;
    bool dec_detok = false;
    auto *dec = app.add_subcommand("decode", "beam-decode BPE-encoded source sentences");
    dec->add_option("--ckpt", dec_ckpt, "checkpoint")->required();
    dec->add_option("--bpe", dec_bpe, "merge file the checkpoint was trained with")->required();
    dec->add_option("--in", dec_in, "BPE-encoded source file")->required();
    dec->add_option("--beam", dec_beam.beam_size)->capture_default_str();
    dec->add_option("--alpha", dec_beam.length_penalty_alpha, "length penalty exponent")->capture_default_str();
    dec->add_option("--out", dec_out, "output file")->required();
    dec->add_flag("--detokenize", dec_detok, "write words instead of subwords");
    dec->callback([&] {
        dec_beam.validate();
        const ModelCheckpoint ckpt = ModelCheckpoint::load(dec_ckpt);
        const BpeModel bpe = load_bpe(dec_bpe);
        if (ckpt.vocab_id() != bpe.fingerprint())
            fail(ErrorCategory::protocol, "checkpoint " + ckpt.id() + " was trained with a different BPE model");
        require_vocab_match(ckpt.model(), bpe);
        std::string out;
        for (const auto &line : read_lines(dec_in)) {
            const Sentence source = split_tokens(line);
            for (const auto &tok : source)
                if (!bpe.contains(tok) && tok != kUnkSurface && tok != std::string(kUnkSurface) + std::string(kEndOfWord))
                    fail(ErrorCategory::protocol, "input token '" + tok + "' is not a subword of the BPE model");
            const Sentence hyp = bpe.decode(beam_decode(ckpt.model(), bpe.encode(source), dec_beam).output());
            out += join_tokens(dec_detok ? detokenize(hyp) : hyp) + "\n";
        }
        write_text(dec_out, out);
    });

    // distill
    std::string dist_teacher, dist_bpe, dist_in, dist_out;
    BeamConfig dist_beam;
    auto *dist = app.add_subcommand("distill", "replace corpus targets with teacher beam decodes");
    dist->add_option("--teacher", dist_teacher, "teacher checkpoint")->required();
    dist->add_option("--bpe", dist_bpe, "merge file")->required();
    dist->add_option("--in", dist_in, "BPE-encoded corpus prefix")->required();
    dist->add_option("--beam", dist_beam.beam_size)->capture_default_str();
    dist->add_option("--out", dist_out, "output prefix")->required();
    dist->callback([&] {
        const ModelCheckpoint teacher = ModelCheckpoint::load(dist_teacher);
        const BpeModel bpe = load_bpe(dist_bpe);
        const DistilledCorpus d = distill(teacher, bpe, load_with_sidecar(dist_in, CorpusRole::train), dist_beam,
                                          g.threads);
        save_corpus_prefix(d.corpus, dist_out);
        write_text(dist_out + ".meta", d.sidecar());
        std::cout << "corpus " << d.corpus.id() << " teacher " << d.teacher_id << "\n";
    });

    // score
    std::string score_hyp, score_ref;
    bool score_json = false;
    auto *sc = app.add_subcommand("score", "corpus BLEU of a hypothesis file");
    sc->add_option("--hyp", score_hyp, "hypothesis file")->required();
    sc->add_option("--ref", score_ref, "reference file")->required();
    sc->add_flag("--json", score_json, "print JSON");
    sc->callback([&] {
        const auto hyp_lines = read_lines(score_hyp);
        const auto ref_lines = read_lines(score_ref);
        if (hyp_lines.size() != ref_lines.size())
            fail(ErrorCategory::alignment, "hypothesis file has " + std::to_string(hyp_lines.size()) +
                                               " lines, reference file " + std::to_string(ref_lines.size()));
        std::vector<Sentence> hyps, refs;
        for (const auto &l : hyp_lines)
            hyps.push_back(split_tokens(l));
        for (const auto &l : ref_lines)
            refs.push_back(split_tokens(l));
        const BleuReport r = corpus_bleu(hyps, refs);
        std::cout << (score_json ? r.to_json() : r.summary()) << "\n";
    });

    // run-config
    PlanFlags rc_flags;
    std::string rc_config;
    auto *rc = app.add_subcommand("run-config", "run one configuration of the 3x3 matrix");
    rc->add_option("--config", rc_config, "configuration number 1..9")->required();
    rc_flags.add(*rc);
    rc->callback([&] {
        const int k = parse_config_number(rc_config);
        if (k < 1 || k > 9)
            fail(ErrorCategory::validation, "config_id " + std::to_string(k) + " is outside 1..9");
        exit_code = run_and_report(g, rc_flags, {k});
    });

    // run-all
    PlanFlags ra_flags;
    std::string ra_configs = "1..9";
    auto *ra = app.add_subcommand("run-all", "run several configurations sharing one artifact graph");
    ra->add_option("--configs", ra_configs, "list or range, e.g. 1..9 or 1,4,7")->capture_default_str();
    ra_flags.add(*ra);
    ra->callback([&] { exit_code = run_and_report(g, ra_flags, parse_configs(ra_configs)); });

    // report
    std::string rep_manifest, rep_corr;
    auto *rep = app.add_subcommand("report", "summarize a run manifest");
    rep->add_option("--manifest", rep_manifest, "manifest file")->required();
    rep->add_option("--correlation", rep_corr, "write general vs in-domain BLEU data to this file");
    rep->callback([&] {
        const RunManifest m = RunManifest::parse(read_text(rep_manifest));
        std::cout << m.report();
        const CorrelationReport corr = gd_vs_id_correlation(m);
        if (!rep_corr.empty())
            write_text(rep_corr, corr.data_file());
        else if (!corr.points.empty())
            std::cout << corr.data_file();
    });

    // Everything after this point reports failures as one line:
    // "error <category>: <message>".
    try {
        app.parse(argc, argv);
    } catch (const CLI::Success &e) {
        return app.exit(e);
    } catch (const CLI::ParseError &e) {
        if (e.get_exit_code() == 0)
            return app.exit(e);
        std::string msg = e.what();
        std::replace(msg.begin(), msg.end(), '\n', ' ');
        std::cerr << "error usage: " << msg << "\n";
        return 2;
    } catch (const Error &e) {
        std::string msg = e.what();
        std::replace(msg.begin(), msg.end(), '\n', ' ');
        std::cerr << "error " << category_name(e.category()) << ": " << msg << "\n";
        return e.category() == ErrorCategory::validation || e.category() == ErrorCategory::usage ? 2 : 1;
    } catch (const std::exception &e) {
        std::cerr << "error internal: " << e.what() << "\n";
        return 1;
    }
    return exit_code;
}
