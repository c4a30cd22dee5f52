#include "kdadapt/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <condition_variable>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <memory>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include "kdadapt/error.hpp"
#include "kdadapt/hash.hpp"
#include "kdadapt/random.hpp"

namespace fs = std::filesystem;

namespace kdadapt {

namespace {

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string fmt2(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return buf;
}

std::uint64_t role_salt(const std::string &role) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : role) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

std::string seed_suffix(std::uint64_t seed) { return "@" + std::to_string(seed); }

std::string config_prefix(int config_id) { return "c" + std::to_string(config_id) + "."; }

int init_axis(int config_id) { return (config_id - 1) / 3; }
int data_axis(int config_id) { return (config_id - 1) % 3; }

} // namespace

void ExperimentPlan::validate() const {
    if (config_id < 1 || config_id > 9)
        fail(ErrorCategory::validation, "config_id " + std::to_string(config_id) + " is outside 1..9");
    if (seeds.empty())
        fail(ErrorCategory::validation, "a plan needs at least one seed");
    std::set<std::uint64_t> unique(seeds.begin(), seeds.end());
    if (unique.size() != seeds.size())
        fail(ErrorCategory::validation, "plan seeds must be distinct");
    student_arch().validate();
    teacher_arch().validate();
    teacher_config.validate();
    student_config.validate();
    distill_beam.validate();
}

ExperimentPlan make_plan(int config_id, const PlanData &data) {
    ExperimentPlan plan;
    plan.config_id = config_id;
    plan.general_corpus = data.general_train.id();
    plan.in_domain_corpus = data.in_domain_train.id();
    return plan;
}

std::string job_kind_name(JobKind kind) {
    switch (kind) {
    case JobKind::learn_bpe:
        return "learn_bpe";
    case JobKind::train:
        return "train";
    case JobKind::adapt:
        return "adapt";
    case JobKind::distill:
        return "distill";
    case JobKind::continue_on_original:
        return "continue_on_original";
    case JobKind::score:
        return "score";
    }
    return "unknown";
}

namespace {

JobKind parse_job_kind(const std::string &text) {
    for (auto k : {JobKind::learn_bpe, JobKind::train, JobKind::adapt, JobKind::distill,
                   JobKind::continue_on_original, JobKind::score})
        if (job_kind_name(k) == text)
            return k;
    fail(ErrorCategory::validation, "unknown job kind '" + text + "'");
}

bool is_training(JobKind kind) {
    return kind == JobKind::train || kind == JobKind::adapt || kind == JobKind::continue_on_original;
}

} // namespace

std::string job_status_name(JobStatus status) {
    switch (status) {
    case JobStatus::done:
        return "done";
    case JobStatus::cached:
        return "cached";
    case JobStatus::failed:
        return "failed";
    case JobStatus::skipped:
        return "skipped";
    }
    return "unknown";
}

namespace {

JobStatus parse_job_status(const std::string &text) {
    for (auto s : {JobStatus::done, JobStatus::cached, JobStatus::failed, JobStatus::skipped})
        if (job_status_name(s) == text)
            return s;
    fail(ErrorCategory::validation, "unknown job status '" + text + "'");
}

} // namespace

void JobGraph::add(Job job) {
    auto it = index_.find(job.name);
    if (it != index_.end()) {
        if (!(jobs_[it->second] == job))
            fail(ErrorCategory::protocol, "conflicting definitions of job " + job.name);
        return;
    }
    for (const auto &dep : job.deps)
        if (!index_.contains(dep))
            fail(ErrorCategory::validation, "job " + job.name + " depends on unknown job " + dep);
    index_.emplace(job.name, jobs_.size());
    jobs_.push_back(std::move(job));
}

const Job &JobGraph::job(const std::string &name) const {
    auto it = index_.find(name);
    if (it == index_.end())
        fail(ErrorCategory::validation, "no job named " + name);
    return jobs_[it->second];
}

bool JobGraph::contains(const std::string &name) const { return index_.contains(name); }

std::vector<std::string> JobGraph::topological_order() const {
    std::map<std::string, int> state;
    std::vector<std::string> order;
    std::function<void(const std::string &)> visit = [&](const std::string &name) {
        int &s = state[name];
        if (s == 2)
            return;
        if (s == 1)
            fail(ErrorCategory::validation, "job graph has a cycle through " + name);
        s = 1;
        for (const auto &dep : job(name).deps)
            visit(dep);
        state[name] = 2;
        order.push_back(name);
    };
    for (const auto &j : jobs_)
        visit(j.name);
    return order;
}

void JobGraph::validate() const {
    topological_order();
    for (const auto &j : jobs_) {
        if ((j.kind == JobKind::train || j.kind == JobKind::adapt) && j.init.empty())
            fail(ErrorCategory::validation, "job " + j.name + " does not name its init source");
        if (j.kind == JobKind::adapt && j.init == kRandomInit)
            fail(ErrorCategory::validation, "adapt job " + j.name + " needs a parent");
        if (j.kind == JobKind::distill && !contains(j.teacher))
            fail(ErrorCategory::validation, "distill job " + j.name + " does not name its teacher");
    }
}

const Job &JobGraph::final_student(int config_id, std::uint64_t seed) const {
    return job(config_prefix(config_id) + "student" + seed_suffix(seed));
}

const Job &JobGraph::selected_model(int config_id, std::uint64_t seed) const {
    const std::string cont = config_prefix(config_id) + "continue" + seed_suffix(seed);
    return contains(cont) ? job(cont) : final_student(config_id, seed);
}

std::size_t JobGraph::count(JobKind kind) const {
    return static_cast<std::size_t>(
        std::count_if(jobs_.begin(), jobs_.end(), [&](const Job &j) { return j.kind == kind; }));
}

std::string init_source_role(const JobGraph &graph, const Job &student) {
    if (student.init == kRandomInit)
        return kRandomInit;
    const Job &init = graph.job(student.init);
    // A refined general-domain student still counts as the general-domain student.
    if (init.kind == JobKind::continue_on_original)
        return graph.job(init.init).role;
    return init.role;
}

std::string teacher_source_role(const JobGraph &graph, const Job &student) {
    if (!graph.contains(student.data))
        return kNoTeacher;
    const Job &data = graph.job(student.data);
    if (data.kind != JobKind::distill)
        return kNoTeacher;
    return graph.job(data.teacher).role;
}

JobGraph expand_plans(const std::vector<ExperimentPlan> &plans) {
    JobGraph graph;
    if (plans.empty())
        return graph;
    for (const auto &plan : plans) {
        plan.validate();
        if (plan.general_corpus != plans.front().general_corpus ||
            plan.in_domain_corpus != plans.front().in_domain_corpus || plan.seeds != plans.front().seeds ||
            plan.bpe_merges != plans.front().bpe_merges)
            fail(ErrorCategory::protocol, "plans in one graph must share corpora, seeds and BPE settings");
    }
    graph.add(Job{kBpeRole, JobKind::learn_bpe, kBpeRole, 0, 0, false, kRandomInit, kGeneralData, kNoTeacher, "", "", {}});

    for (const auto &plan : plans) {
        const int k = plan.config_id;
        const int init = init_axis(k);
        const int data = data_axis(k);
        for (auto seed : plan.seeds) {
            const std::string sfx = seed_suffix(seed);
            auto named = [&](const char *role) { return std::string(role) + sfx; };
            auto train_job = [&](const char *role, bool teacher, const char *data_tag, const char *dev) {
                return Job{named(role), JobKind::train, role, 0, seed, teacher, kRandomInit, data_tag,
                           kNoTeacher,  dev,            "",   {kBpeRole}};
            };
            if (init == 2 || data == 2)
                graph.add(train_job(kGeneralTeacher, true, kGeneralData, kGeneralData));
            if (init == 1)
                graph.add(train_job(kGeneralBaseline, false, kGeneralData, kGeneralData));
            std::string general_student;
            if (init == 2) {
                graph.add(Job{named(kGeneralDistill), JobKind::distill, kGeneralDistill, 0, seed, false, kRandomInit,
                              kGeneralData, named(kGeneralTeacher), "", "", {kBpeRole, named(kGeneralTeacher)}});
                graph.add(Job{named(kGeneralStudent), JobKind::train, kGeneralStudent, 0, seed, false, kRandomInit,
                              named(kGeneralDistill), kNoTeacher, kGeneralData, "", {kBpeRole, named(kGeneralDistill)}});
                general_student = named(kGeneralStudent);
                if (plan.continue_general_students) {
                    graph.add(Job{named(kGeneralStudentContinue), JobKind::continue_on_original,
                                  kGeneralStudentContinue, 0, seed, false, named(kGeneralStudent), kGeneralData,
                                  named(kGeneralDistill), kGeneralData, "",
                                  {kBpeRole, named(kGeneralStudent), named(kGeneralDistill)}});
                    general_student = named(kGeneralStudentContinue);
                }
            }
            std::string id_distill;
            if (data == 1) {
                graph.add(train_job(kInDomainTeacher, true, kInDomainData, kInDomainData));
                graph.add(Job{named(kInDomainDistillBaseline), JobKind::distill, kInDomainDistillBaseline, 0, seed,
                              false, kRandomInit, kInDomainData, named(kInDomainTeacher), "", "",
                              {kBpeRole, named(kInDomainTeacher)}});
                id_distill = named(kInDomainDistillBaseline);
            } else if (data == 2) {
                graph.add(Job{named(kAdaptedTeacher), JobKind::adapt, kAdaptedTeacher, 0, seed, true,
                              named(kGeneralTeacher), kInDomainData, kNoTeacher, kInDomainData, "",
                              {kBpeRole, named(kGeneralTeacher)}});
                graph.add(Job{named(kInDomainDistillAdapted), JobKind::distill, kInDomainDistillAdapted, 0, seed,
                              false, kRandomInit, kInDomainData, named(kAdaptedTeacher), "", "",
                              {kBpeRole, named(kAdaptedTeacher)}});
                id_distill = named(kInDomainDistillAdapted);
            }

            const std::string prefix = config_prefix(k);
            Job student;
            student.name = prefix + "student" + sfx;
            student.role = prefix + "student";
            student.config_id = k;
            student.seed = seed;
            student.teacher = kNoTeacher;
            student.dev = kInDomainData;
            student.deps = {kBpeRole};
            student.init = init == 0 ? std::string(kRandomInit) : init == 1 ? named(kGeneralBaseline) : general_student;
            student.kind = init == 0 ? JobKind::train : JobKind::adapt;
            if (init != 0)
                student.deps.push_back(student.init);
            student.data = id_distill.empty() ? std::string(kInDomainData) : id_distill;
            if (!id_distill.empty())
                student.deps.push_back(id_distill);
            graph.add(student);

            std::string scored = student.name;
            if (!id_distill.empty() && plan.continue_in_domain_students) {
                Job cont{prefix + "continue" + sfx, JobKind::continue_on_original, prefix + "continue", k, seed,
                         false, student.name, kInDomainData, id_distill, kInDomainData, "",
                         {kBpeRole, student.name, id_distill}};
                graph.add(cont);
                scored = cont.name;
            }
            graph.add(Job{prefix + "score" + sfx, JobKind::score, prefix + "score", k, seed, false, kRandomInit,
                          kInDomainData, kNoTeacher, kInDomainData, scored, {kBpeRole, scored}});
        }
    }
    graph.validate();
    return graph;
}

JobGraph expand_plan(const ExperimentPlan &plan) { return expand_plans({plan}); }

// ---------------------------------------------------------------------------
// Execution

namespace {

struct EncodedData {
    BpeModel bpe;
    ParallelCorpus general_train;
    ParallelCorpus general_dev;
    ParallelCorpus in_domain_train;
    ParallelCorpus in_domain_dev;

    const ParallelCorpus &raw(const std::string &tag) const {
        if (tag == kGeneralData)
            return general_train;
        if (tag == kInDomainData)
            return in_domain_train;
        fail(ErrorCategory::validation, "unknown corpus tag " + tag);
    }
    const ParallelCorpus &dev(const std::string &tag) const {
        if (tag == kGeneralData)
            return general_dev;
        if (tag == kInDomainData)
            return in_domain_dev;
        fail(ErrorCategory::validation, "unknown dev tag " + tag);
    }
};

struct Artifact {
    std::string key;
    std::shared_ptr<const EncodedData> encoded;
    std::optional<TrainReport> report;
    std::optional<ModelCheckpoint> selected; // final checkpoint of a training-type job
    bool improved = false;
    std::optional<DistilledCorpus> distilled;
    std::optional<BleuReport> bleu;
    double seconds = 0.0;
    bool cached = false;
};

std::string read_file(const fs::path &path) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        fail(ErrorCategory::io, "cannot read " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const fs::path &path, const std::string &bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out)
        fail(ErrorCategory::io, "cannot write " + path.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out)
        fail(ErrorCategory::io, "failed writing " + path.string());
}

std::string stats_line(const BleuStats &s) {
    std::string out;
    for (int n = 0; n < kBleuOrder; ++n)
        out += std::to_string(s.matches[static_cast<std::size_t>(n)]) + " " +
               std::to_string(s.totals[static_cast<std::size_t>(n)]) + " ";
    return out + std::to_string(s.hyp_length) + " " + std::to_string(s.ref_length);
}

BleuStats parse_stats(const std::string &line) {
    std::istringstream in(line);
    BleuStats s;
    for (int n = 0; n < kBleuOrder; ++n)
        in >> s.matches[static_cast<std::size_t>(n)] >> s.totals[static_cast<std::size_t>(n)];
    in >> s.hyp_length >> s.ref_length;
    if (!in)
        fail(ErrorCategory::validation, "malformed BLEU statistics: " + line);
    return s;
}

class Runner {
  public:
    Runner(const JobGraph &graph, const std::vector<ExperimentPlan> &plans, const PlanData &data,
           const RunOptions &options)
        : graph_(graph), plan_(plans.front()), data_(data), options_(options) {
        if (!options_.artifact_dir.empty()) {
            fs::create_directories(options_.artifact_dir);
            const fs::path probe = fs::path(options_.artifact_dir) / ".write-probe";
            write_file(probe, "ok");
            fs::remove(probe);
        }
    }

    RunManifest run();

  private:
    void log(const std::string &message) {
        if (options_.log) {
            std::lock_guard lock(log_mutex_);
            options_.log(message);
        }
    }

    nn::ArchConfig arch_of(const Job &job) const { return job.teacher_arch ? plan_.teacher_arch() : plan_.student_arch(); }

    TrainConfig config_of(const Job &job) const {
        TrainConfig cfg = job.teacher_arch ? plan_.teacher_config : plan_.student_config;
        cfg.seed = mix_seed(job.seed, role_salt(job.role) + 1);
        return cfg;
    }

    std::uint64_t model_seed(const Job &job) const { return mix_seed(job.seed, role_salt(job.role)); }

    const Artifact &artifact(const std::string &name) const {
        std::lock_guard lock(mutex_);
        return *artifacts_.at(name);
    }

    std::string job_key(const Job &job) const;
    std::unique_ptr<Artifact> execute(const Job &job, const std::string &key);
    std::unique_ptr<Artifact> load(const Job &job, const std::string &key, const fs::path &dir);
    void store(const Job &job, const Artifact &a, const fs::path &dir);
    std::shared_ptr<const EncodedData> encoded() const { return artifact(kBpeRole).encoded; }
    const ParallelCorpus &data_corpus(const Job &job) const {
        if (job.data == kGeneralData || job.data == kInDomainData)
            return encoded()->raw(job.data);
        return artifact(job.data).distilled->corpus;
    }

    const JobGraph &graph_;
    const ExperimentPlan &plan_;
    const PlanData &data_;
    RunOptions options_;
    mutable std::mutex mutex_;
    std::mutex log_mutex_;
    std::map<std::string, std::unique_ptr<Artifact>> artifacts_;
};

std::string Runner::job_key(const Job &job) const {
    ContentHash h;
    h.field("kdadapt-job v1").field(job_kind_name(job.kind));
    switch (job.kind) {
    case JobKind::learn_bpe:
        h.field(data_.general_train.fingerprint()).field(static_cast<std::uint64_t>(plan_.bpe_merges));
        h.field(data_.general_dev.fingerprint()).field(data_.in_domain_train.fingerprint());
        h.field(data_.in_domain_dev.fingerprint());
        break;
    case JobKind::train:
    case JobKind::adapt:
    case JobKind::continue_on_original:
        h.field(artifact(kBpeRole).key);
        h.field(arch_of(job).describe()).field(config_of(job).describe()).field(model_seed(job));
        h.field(job.init == kRandomInit ? std::string(kRandomInit) : artifact(job.init).key);
        h.field(job.data == kGeneralData || job.data == kInDomainData ? job.data : artifact(job.data).key);
        if (job.kind == JobKind::continue_on_original)
            h.field(artifact(job.teacher).key);
        h.field(job.dev);
        break;
    case JobKind::distill:
        h.field(artifact(kBpeRole).key).field(artifact(job.teacher).key).field(job.data);
        h.field(static_cast<std::uint64_t>(plan_.distill_beam.beam_size)).field(plan_.distill_beam.max_len_factor);
        h.field(plan_.distill_beam.max_len_constant).field(plan_.distill_beam.length_penalty_alpha);
        break;
    case JobKind::score: {
        const auto &beam = plan_.student_config.dev_beam;
        h.field(artifact(kBpeRole).key).field(artifact(job.model).key).field(job.dev);
        h.field(static_cast<std::uint64_t>(beam.beam_size)).field(beam.max_len_factor);
        h.field(beam.max_len_constant).field(beam.length_penalty_alpha);
        break;
    }
    }
    return h.hex();
}

std::unique_ptr<Artifact> Runner::execute(const Job &job, const std::string &key) {
    auto a = std::make_unique<Artifact>();
    a->key = key;
    const auto start = std::chrono::steady_clock::now();
    switch (job.kind) {
    case JobKind::learn_bpe: {
        BpeModel bpe = learn_bpe(data_.general_train, plan_.bpe_merges);
        if (data_.bpe && !(*data_.bpe == bpe))
            fail(ErrorCategory::protocol, "supplied BPE model was not learned on " + data_.general_train.id() +
                                              " with " + std::to_string(plan_.bpe_merges) + " merges");
        a->encoded = std::make_shared<EncodedData>(EncodedData{
            bpe, apply_bpe(bpe, data_.general_train), apply_bpe(bpe, data_.general_dev),
            apply_bpe(bpe, data_.in_domain_train), apply_bpe(bpe, data_.in_domain_dev)});
        break;
    }
    case JobKind::train: {
        const auto enc = encoded();
        const auto arch = arch_of(job);
        a->report = train(nn::build_model(arch, enc->bpe.model_vocab_size(), model_seed(job)), data_corpus(job),
                          enc->dev(job.dev), enc->bpe, config_of(job));
        a->selected = a->report->best_checkpoint();
        break;
    }
    case JobKind::adapt: {
        const auto enc = encoded();
        const Artifact &parent = artifact(job.init);
        a->report = adapt(*parent.selected, arch_of(job), data_corpus(job), enc->dev(job.dev), enc->bpe,
                          config_of(job));
        a->selected = a->report->best_checkpoint();
        break;
    }
    case JobKind::continue_on_original: {
        const auto enc = encoded();
        const Artifact &student = artifact(job.init);
        const Artifact &distilled = artifact(job.teacher);
        ContinuedResult r = continue_on_original(*student.report, *distilled.distilled, enc->raw(job.data),
                                                 enc->dev(job.dev), enc->bpe, config_of(job));
        a->improved = r.improved;
        a->selected = std::move(r.selected);
        a->report = std::move(r.continued);
        break;
    }
    case JobKind::distill: {
        const auto enc = encoded();
        const Artifact &teacher = artifact(job.teacher);
        a->distilled = distill(*teacher.selected, enc->bpe, enc->raw(job.data), plan_.distill_beam,
                               plan_.teacher_config.eval_threads);
        break;
    }
    case JobKind::score: {
        const auto enc = encoded();
        const Artifact &model = artifact(job.model);
        a->bleu = evaluate_bleu(model.selected->model(), enc->bpe, enc->dev(job.dev), plan_.student_config.dev_beam,
                                plan_.student_config.eval_threads);
        break;
    }
    }
    a->seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return a;
}

void Runner::store(const Job &job, const Artifact &a, const fs::path &dir) {
    const fs::path tmp = dir.string() + ".tmp-" + std::to_string(std::hash<std::thread::id>{}(std::this_thread::get_id()));
    fs::remove_all(tmp);
    fs::create_directories(tmp);
    std::string meta = "kdadapt-artifact v1\nkey " + a.key + "\nkind " + job_kind_name(job.kind) + "\nseconds " +
                       fmt(a.seconds) + "\n";
    switch (job.kind) {
    case JobKind::learn_bpe:
        save_bpe(a.encoded->bpe, (tmp / "bpe.merges").string());
        break;
    case JobKind::train:
    case JobKind::adapt:
    case JobKind::continue_on_original:
        write_file(tmp / "report.txt", a.report->serialize());
        a.report->best_checkpoint().save((tmp / "best.ckpt").string());
        meta += "improved " + std::string(a.improved ? "1" : "0") + "\n";
        meta += "selected " + a.selected->id() + "\n";
        break;
    case JobKind::distill:
        save_corpus_prefix(a.distilled->corpus, (tmp / "distilled").string());
        write_file(tmp / "distilled.meta", a.distilled->sidecar());
        meta += "name " + a.distilled->corpus.name() + "\n";
        break;
    case JobKind::score:
        meta += "stats " + stats_line(a.bleu->stats) + "\n";
        write_file(tmp / "bleu.json", a.bleu->to_json() + "\n");
        write_file(tmp / "bleu.txt", a.bleu->summary() + "\n");
        break;
    }
    write_file(tmp / "artifact.meta", meta);
    fs::remove_all(dir);
    fs::rename(tmp, dir);
}

std::unique_ptr<Artifact> Runner::load(const Job &job, const std::string &key, const fs::path &dir) {
    std::map<std::string, std::string> meta;
    {
        std::istringstream in(read_file(dir / "artifact.meta"));
        std::string line;
        std::getline(in, line);
        if (line != "kdadapt-artifact v1")
            fail(ErrorCategory::validation, "bad artifact header in " + dir.string());
        while (std::getline(in, line)) {
            const auto sp = line.find(' ');
            meta[line.substr(0, sp)] = sp == std::string::npos ? "" : line.substr(sp + 1);
        }
    }
    if (meta["key"] != key)
        fail(ErrorCategory::protocol, "cache entry " + dir.string() + " records a different content hash");
    auto a = std::make_unique<Artifact>();
    a->key = key;
    a->cached = true;
    a->seconds = std::stod(meta["seconds"]);
    switch (job.kind) {
    case JobKind::learn_bpe: {
        BpeModel bpe = load_bpe((dir / "bpe.merges").string());
        a->encoded = std::make_shared<EncodedData>(EncodedData{
            bpe, apply_bpe(bpe, data_.general_train), apply_bpe(bpe, data_.general_dev),
            apply_bpe(bpe, data_.in_domain_train), apply_bpe(bpe, data_.in_domain_dev)});
        break;
    }
    case JobKind::train:
    case JobKind::adapt:
    case JobKind::continue_on_original: {
        a->report = TrainReport::parse(read_file(dir / "report.txt"));
        a->report->best = ModelCheckpoint::load((dir / "best.ckpt").string());
        a->improved = meta["improved"] == "1";
        if (job.kind == JobKind::continue_on_original && !a->improved)
            a->selected = *artifact(job.init).selected;
        else
            a->selected = a->report->best;
        if (a->selected->id() != meta["selected"])
            fail(ErrorCategory::protocol, "cached checkpoint in " + dir.string() + " does not match its record");
        break;
    }
    case JobKind::distill: {
        ParallelCorpus loaded = load_corpus_prefix((dir / "distilled").string());
        const auto enc = encoded();
        const Artifact &teacher = artifact(job.teacher);
        ParallelCorpus corpus(meta["name"], CorpusRole::train, loaded.pairs(), teacher.selected->id());
        a->distilled = DistilledCorpus{std::move(corpus), teacher.selected->id(), plan_.distill_beam,
                                       enc->raw(job.data).id()};
        if (a->distilled->sidecar() != read_file(dir / "distilled.meta"))
            fail(ErrorCategory::protocol, "cached distilled corpus in " + dir.string() + " does not match its record");
        break;
    }
    case JobKind::score:
        a->bleu = bleu_from_stats(parse_stats(meta["stats"]));
        break;
    }
    return a;
}

RunManifest Runner::run() {
    const auto start = std::chrono::steady_clock::now();
    const auto order = graph_.topological_order();
    const std::size_t limit = options_.concurrency ? options_.concurrency : default_concurrency();

    std::map<std::string, JobRecord> records;
    std::map<std::string, int> state; // 0 pending, 1 running, 2 ok, 3 failed or skipped
    for (const auto &name : order)
        state[name] = 0;

    std::condition_variable cv;
    std::size_t running = 0;
    double training_seconds = 0.0;
    std::vector<std::jthread> workers;

    auto work = [&](const Job &job) {
        JobRecord rec;
        rec.name = job.name;
        rec.kind = job.kind;
        rec.init = job.init;
        rec.teacher = job.kind == JobKind::distill ? job.teacher : job.data;
        std::unique_ptr<Artifact> a;
        try {
            const std::string key = job_key(job);
            rec.key = key;
            const fs::path dir = options_.artifact_dir.empty()
                                     ? fs::path()
                                     : fs::path(options_.artifact_dir) / (job.role + "-" + key.substr(0, 24));
            if (!dir.empty() && fs::exists(dir / "artifact.meta")) {
                a = load(job, key, dir);
                log("cached " + job.name);
            } else {
                log("start " + job.name);
                a = execute(job, key);
                if (!dir.empty())
                    store(job, *a, dir);
                log("finish " + job.name + " in " + fmt2(a->seconds) + "s");
            }
            rec.status = a->cached ? JobStatus::cached : JobStatus::done;
            rec.seconds = a->seconds;
            if (a->selected) {
                rec.checkpoint_id = a->selected->id();
                rec.dev_bleu = a->selected->dev_bleu();
                rec.lineage = a->selected->provenance().lineage;
            } else {
                rec.checkpoint_id = "-";
            }
            if (a->bleu)
                rec.dev_bleu = a->bleu->bleu;
        } catch (const std::exception &e) {
            rec.status = JobStatus::failed;
            rec.checkpoint_id = "-";
            const auto *err = dynamic_cast<const Error *>(&e);
            rec.error = (err ? std::string(category_name(err->category())) : std::string("internal")) + ": " + e.what();
            log("failed " + job.name + ": " + rec.error);
        }
        std::lock_guard lock(mutex_);
        if (a) {
            if (!a->cached && is_training(job.kind))
                training_seconds += a->seconds;
            artifacts_[job.name] = std::move(a);
        }
        state[job.name] = rec.status == JobStatus::failed ? 3 : 2;
        records[job.name] = std::move(rec);
        --running;
        cv.notify_all();
    };

    {
        std::unique_lock lock(mutex_);
        while (true) {
            bool progressed = false;
            for (const auto &name : order) {
                if (state[name] != 0)
                    continue;
                const Job &job = graph_.job(name);
                bool ready = true;
                bool blocked = false;
                for (const auto &dep : job.deps) {
                    if (state[dep] == 3)
                        blocked = true;
                    if (state[dep] != 2)
                        ready = false;
                }
                if (blocked) {
                    JobRecord rec;
                    rec.name = name;
                    rec.kind = job.kind;
                    rec.status = JobStatus::skipped;
                    rec.checkpoint_id = "-";
                    rec.init = job.init;
                    rec.teacher = job.kind == JobKind::distill ? job.teacher : job.data;
                    records[name] = rec;
                    state[name] = 3;
                    progressed = true;
                    continue;
                }
                if (ready && running < limit) {
                    state[name] = 1;
                    ++running;
                    workers.emplace_back(work, std::cref(job));
                    progressed = true;
                }
            }
            const bool pending = std::any_of(state.begin(), state.end(), [](const auto &kv) { return kv.second < 2; });
            if (!pending)
                break;
            if (!progressed)
                cv.wait(lock);
        }
    }
    workers.clear();

    RunManifest m;
    std::set<int> configs;
    for (const auto &j : graph_.jobs())
        if (j.config_id)
            configs.insert(j.config_id);
    m.configs.assign(configs.begin(), configs.end());
    m.seeds = plan_.seeds;
    m.general_corpus = plan_.general_corpus;
    m.in_domain_corpus = plan_.in_domain_corpus;
    m.student = plan_.student_arch().describe();
    m.teacher = plan_.teacher_arch().describe();
    if (artifacts_.contains(kBpeRole))
        m.bpe_id = artifacts_.at(kBpeRole)->encoded->bpe.fingerprint();
    for (const auto &name : order)
        m.jobs.push_back(records.at(name));
    for (int k : m.configs) {
        for (auto seed : m.seeds) {
            const Job &score = graph_.job(config_prefix(k) + "score" + seed_suffix(seed));
            if (records.at(score.name).status == JobStatus::failed || records.at(score.name).status == JobStatus::skipped)
                continue;
            ConfigResult r;
            r.config_id = k;
            r.seed = seed;
            r.dev_bleu = artifacts_.at(score.name)->bleu->bleu;
            const auto &selected = *artifacts_.at(score.model)->selected;
            std::string lineage;
            for (const auto &entry : selected.provenance().lineage)
                lineage += (lineage.empty() ? "" : " | ") + entry;
            r.lineage = lineage;
            const Job &student = graph_.final_student(k, seed);
            if (student.init != kRandomInit) {
                r.init_general_bleu = artifacts_.at(student.init)->selected->dev_bleu();
                r.distilled_init = init_axis(k) == 2;
            }
            m.results.push_back(std::move(r));
        }
    }
    m.training_seconds = training_seconds;
    m.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return m;
}

} // namespace

std::size_t default_concurrency() {
    const unsigned cores = std::thread::hardware_concurrency();
    return std::max<std::size_t>(1, cores / 2);
}

std::string artifact_dir_from_env() {
    const char *v = std::getenv(kArtifactDirEnv);
    return v ? std::string(v) : std::string();
}

RunManifest run_plans(const std::vector<ExperimentPlan> &plans, const PlanData &data, const RunOptions &options) {
    if (plans.empty())
        fail(ErrorCategory::validation, "no plans to run");
    for (const auto &plan : plans) {
        if (plan.general_corpus != data.general_train.id() || plan.in_domain_corpus != data.in_domain_train.id())
            fail(ErrorCategory::protocol, "plan corpora do not match the supplied data");
        if (!(plan.student_arch() == plans.front().student_arch()) ||
            !(plan.teacher_arch() == plans.front().teacher_arch()) ||
            plan.teacher_config.describe() != plans.front().teacher_config.describe() ||
            plan.student_config.describe() != plans.front().student_config.describe() ||
            !(plan.distill_beam == plans.front().distill_beam))
            fail(ErrorCategory::protocol, "plans run together must share architectures and training settings");
    }
    if (data.general_dev.is_distilled() || data.in_domain_dev.is_distilled())
        fail(ErrorCategory::protocol, "dev corpora must hold original references");
    const JobGraph graph = expand_plans(plans);
    Runner runner(graph, plans, data, options);
    return runner.run();
}

RunManifest run_plan(const ExperimentPlan &plan, const PlanData &data, const RunOptions &options) {
    return run_plans({plan}, data, options);
}

// ---------------------------------------------------------------------------
// Manifest

const JobRecord &RunManifest::job(const std::string &name) const {
    for (const auto &j : jobs)
        if (j.name == name)
            return j;
    fail(ErrorCategory::validation, "manifest has no job " + name);
}

bool RunManifest::ok() const {
    return std::all_of(jobs.begin(), jobs.end(), [](const JobRecord &j) {
        return j.status == JobStatus::done || j.status == JobStatus::cached;
    });
}

std::size_t RunManifest::executed_training_jobs() const {
    return static_cast<std::size_t>(std::count_if(jobs.begin(), jobs.end(), [](const JobRecord &j) {
        return is_training(j.kind) && j.status == JobStatus::done;
    }));
}

namespace {

std::string join_ints(const auto &values) {
    std::string out;
    for (const auto &v : values)
        out += (out.empty() ? "" : ",") + std::to_string(v);
    return out;
}

std::string opt_double(const std::optional<double> &v) { return v ? fmt(*v) : std::string("-"); }

} // namespace

std::string RunManifest::report() const {
    std::string out = "kdadapt-report v" + std::to_string(kManifestFormatVersion) + "\n";
    out += "configs " + join_ints(configs) + "\n";
    out += "seeds " + join_ints(seeds) + "\n";
    out += "general_corpus " + general_corpus + "\n";
    out += "in_domain_corpus " + in_domain_corpus + "\n";
    out += "student " + student + "\n";
    out += "teacher " + teacher + "\n";
    out += "bpe " + bpe_id + "\n";
    for (const auto &j : jobs) {
        const bool ok = j.status == JobStatus::done || j.status == JobStatus::cached;
        out += "job " + j.name + " kind " + job_kind_name(j.kind) + " key " + j.key + " checkpoint " +
               j.checkpoint_id + " dev_bleu " + opt_double(j.dev_bleu) + (ok ? "" : " status " + job_status_name(j.status)) +
               "\n";
    }
    for (const auto &r : results)
        out += "result config " + std::to_string(r.config_id) + " seed " + std::to_string(r.seed) + " dev_bleu " +
               fmt(r.dev_bleu) + " lineage " + r.lineage + "\n";
    if (!results.empty())
        out += compare_manifest(*this).text();
    return out;
}

std::string RunManifest::serialize() const {
    std::string out = "kdadapt-manifest v" + std::to_string(kManifestFormatVersion) + "\n";
    out += "configs " + join_ints(configs) + "\n";
    out += "seeds " + join_ints(seeds) + "\n";
    out += "general_corpus " + general_corpus + "\n";
    out += "in_domain_corpus " + in_domain_corpus + "\n";
    out += "student " + student + "\n";
    out += "teacher " + teacher + "\n";
    out += "bpe " + bpe_id + "\n";
    out += "assumption in-domain baseline and adapted teachers share one TrainConfig\n";
    for (const auto &j : jobs) {
        out += "job " + j.name + " kind " + job_kind_name(j.kind) + " status " + job_status_name(j.status) + " key " +
               (j.key.empty() ? "-" : j.key) + " checkpoint " + j.checkpoint_id + " dev_bleu " + opt_double(j.dev_bleu) +
               " seconds " + fmt(j.seconds) + " init " + j.init + " input " + (j.teacher.empty() ? "-" : j.teacher) +
               "\n";
        for (const auto &entry : j.lineage)
            out += "lineage " + j.name + " " + entry + "\n";
        if (!j.error.empty())
            out += "error " + j.name + " " + j.error + "\n";
    }
    for (const auto &r : results)
        out += "result config " + std::to_string(r.config_id) + " seed " + std::to_string(r.seed) + " dev_bleu " +
               fmt(r.dev_bleu) + " init_general_bleu " + opt_double(r.init_general_bleu) + " distilled_init " +
               (r.distilled_init ? "1" : "0") + " lineage " + r.lineage + "\n";
    out += "training_seconds " + fmt(training_seconds) + "\n";
    out += "wall_seconds " + fmt(wall_seconds) + "\n";
    return out;
}

RunManifest RunManifest::parse(const std::string &text) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line) || line != "kdadapt-manifest v" + std::to_string(kManifestFormatVersion))
        fail(ErrorCategory::validation, "not a run manifest or unsupported version: '" + line + "'");
    RunManifest m;
    auto rest = [](std::istringstream &l) {
        std::string r;
        std::getline(l >> std::ws, r);
        return r;
    };
    auto split_list = [](const std::string &s) {
        std::vector<std::string> out;
        std::stringstream ss(s);
        std::string item;
        while (std::getline(ss, item, ','))
            if (!item.empty())
                out.push_back(item);
        return out;
    };
    auto parse_opt = [](const std::string &s) -> std::optional<double> {
        if (s == "-")
            return std::nullopt;
        return std::stod(s);
    };
    while (std::getline(in, line)) {
        std::istringstream l(line);
        std::string key;
        l >> key;
        if (key == "configs") {
            for (const auto &v : split_list(rest(l)))
                m.configs.push_back(std::stoi(v));
        } else if (key == "seeds") {
            for (const auto &v : split_list(rest(l)))
                m.seeds.push_back(std::stoull(v));
        } else if (key == "general_corpus") {
            m.general_corpus = rest(l);
        } else if (key == "in_domain_corpus") {
            m.in_domain_corpus = rest(l);
        } else if (key == "student") {
            m.student = rest(l);
        } else if (key == "teacher") {
            m.teacher = rest(l);
        } else if (key == "bpe") {
            m.bpe_id = rest(l);
        } else if (key == "assumption") {
            continue;
        } else if (key == "job") {
            JobRecord j;
            std::string k, kind, s, status, kk, jkey, c, ckpt, d, bleu, sec, seconds, i, init, t, input;
            l >> j.name >> k >> kind >> s >> status >> kk >> jkey >> c >> ckpt >> d >> bleu >> sec >> seconds >> i >>
                init >> t >> input;
            if (!l || k != "kind" || s != "status" || kk != "key" || c != "checkpoint" || d != "dev_bleu" ||
                sec != "seconds" || i != "init" || t != "input")
                fail(ErrorCategory::validation, "malformed manifest job line: " + line);
            j.kind = parse_job_kind(kind);
            j.status = parse_job_status(status);
            j.key = jkey == "-" ? "" : jkey;
            j.checkpoint_id = ckpt;
            j.dev_bleu = parse_opt(bleu);
            j.seconds = std::stod(seconds);
            j.init = init;
            j.teacher = input == "-" ? "" : input;
            m.jobs.push_back(std::move(j));
        } else if (key == "lineage" || key == "error") {
            std::string name;
            l >> name;
            if (m.jobs.empty() || m.jobs.back().name != name)
                fail(ErrorCategory::validation, "manifest " + key + " line out of place: " + line);
            if (key == "lineage")
                m.jobs.back().lineage.push_back(rest(l));
            else
                m.jobs.back().error = rest(l);
        } else if (key == "result") {
            ConfigResult r;
            std::string c, s, d, bleu, ig, igv, di, div, li;
            l >> c >> r.config_id >> s >> r.seed >> d >> bleu >> ig >> igv >> di >> div >> li;
            if (!l || c != "config" || s != "seed" || d != "dev_bleu" || ig != "init_general_bleu" ||
                di != "distilled_init" || li != "lineage")
                fail(ErrorCategory::validation, "malformed manifest result line: " + line);
            r.dev_bleu = std::stod(bleu);
            r.init_general_bleu = parse_opt(igv);
            r.distilled_init = div == "1";
            r.lineage = rest(l);
            m.results.push_back(std::move(r));
        } else if (key == "training_seconds") {
            l >> m.training_seconds;
        } else if (key == "wall_seconds") {
            l >> m.wall_seconds;
        } else if (!key.empty()) {
            fail(ErrorCategory::validation, "unknown manifest line: " + line);
        }
    }
    return m;
}

// ---------------------------------------------------------------------------
// Reports

double median(std::vector<double> values) {
    if (values.empty())
        fail(ErrorCategory::validation, "median of an empty list");
    std::sort(values.begin(), values.end());
    const std::size_t n = values.size();
    return n % 2 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

namespace {

ComparisonReport build_comparison(std::string domain, std::string size, const std::vector<int> &configs,
                                  const std::vector<ConfigResult> &results, double window) {
    ComparisonReport report;
    report.domain = std::move(domain);
    report.size = std::move(size);
    for (int k : configs) {
        ComparisonRow row;
        row.config_id = k;
        for (const auto &r : results) {
            if (r.config_id != k)
                continue;
            row.scores.push_back(r.dev_bleu);
            if (row.lineage.empty())
                row.lineage = r.lineage;
        }
        if (row.scores.empty())
            continue;
        row.median = median(row.scores);
        report.rows.push_back(std::move(row));
    }
    if (report.rows.empty())
        return report;
    double best = report.rows.front().median;
    for (const auto &row : report.rows)
        best = std::max(best, row.median);
    for (auto &row : report.rows)
        row.best = best - row.median <= window + 1e-9;
    return report;
}

} // namespace

std::string ComparisonReport::text() const {
    std::string out = "comparison domain " + domain + " size " + size + "\n";
    for (const auto &row : rows) {
        out += "config " + std::to_string(row.config_id) + " median " + fmt2(row.median) + " seeds";
        for (double s : row.scores)
            out += " " + fmt2(s);
        out += row.best ? " best" : "";
        out += "\n";
    }
    return out;
}

ComparisonReport compare_configs(const std::vector<ExperimentPlan> &plans, const std::vector<ConfigResult> &results,
                                 double window) {
    if (plans.empty())
        fail(ErrorCategory::validation, "no plans to compare");
    std::vector<int> configs;
    for (const auto &plan : plans) {
        if (plan.general_corpus != plans.front().general_corpus ||
            plan.in_domain_corpus != plans.front().in_domain_corpus || plan.seeds != plans.front().seeds)
            fail(ErrorCategory::protocol, "compared plans must share corpora and seeds");
        if (plan.student_size != plans.front().student_size)
            fail(ErrorCategory::protocol, "compared plans must share the student size");
        if (std::find(configs.begin(), configs.end(), plan.config_id) == configs.end())
            configs.push_back(plan.config_id);
    }
    std::sort(configs.begin(), configs.end());
    return build_comparison(plans.front().in_domain_corpus, nn::size_class_name(plans.front().student_size), configs,
                            results, window);
}

ComparisonReport compare_manifest(const RunManifest &manifest, double window) {
    return build_comparison(manifest.in_domain_corpus, manifest.student, manifest.configs, manifest.results, window);
}

LinearFit least_squares(const std::vector<CorrelationPoint> &points) {
    LinearFit fit;
    fit.points = points.size();
    if (points.size() < 3)
        return fit;
    const double n = static_cast<double>(points.size());
    double mx = 0.0, my = 0.0;
    for (const auto &p : points) {
        mx += p.general_bleu;
        my += p.in_domain_bleu;
    }
    mx /= n;
    my /= n;
    double sxx = 0.0, sxy = 0.0, syy = 0.0;
    for (const auto &p : points) {
        const double dx = p.general_bleu - mx;
        const double dy = p.in_domain_bleu - my;
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    if (sxx <= 1e-12 * std::max(1.0, mx * mx))
        return fit;
    fit.defined = true;
    fit.slope = sxy / sxx;
    fit.intercept = my - fit.slope * mx;
    double ss_res = 0.0;
    for (const auto &p : points) {
        const double e = p.in_domain_bleu - (fit.intercept + fit.slope * p.general_bleu);
        ss_res += e * e;
    }
    fit.r_squared = syy > 0.0 ? 1.0 - ss_res / syy : 1.0;
    return fit;
}

CorrelationReport gd_vs_id_correlation(const std::vector<CorrelationPoint> &points) {
    CorrelationReport report;
    report.points = points;
    report.all = least_squares(points);
    std::vector<CorrelationPoint> distilled, baseline;
    for (const auto &p : points)
        (p.distilled ? distilled : baseline).push_back(p);
    report.distilled = least_squares(distilled);
    report.baseline = least_squares(baseline);
    return report;
}

CorrelationReport gd_vs_id_correlation(const RunManifest &manifest) {
    std::vector<CorrelationPoint> points;
    for (const auto &r : manifest.results)
        if (r.init_general_bleu)
            points.push_back({"config" + std::to_string(r.config_id) + "@" + std::to_string(r.seed),
                              *r.init_general_bleu, r.dev_bleu, r.distilled_init});
    return gd_vs_id_correlation(points);
}

std::string CorrelationReport::data_file() const {
    auto describe = [](const char *group, const LinearFit &f) {
        std::string s = std::string("# fit ") + group + " points " + std::to_string(f.points);
        if (!f.defined)
            return s + " undefined\n";
        return s + " slope " + fmt(f.slope) + " intercept " + fmt(f.intercept) + " r2 " + fmt(f.r_squared) + "\n";
    };
    std::string out = "# kdadapt-correlation v1\n";
    out += describe("all", all);
    out += describe("distilled", distilled);
    out += describe("baseline", baseline);
    out += "label\tgeneral_bleu\tin_domain_bleu\tgroup\n";
    for (const auto &p : points)
        out += p.label + "\t" + fmt(p.general_bleu) + "\t" + fmt(p.in_domain_bleu) + "\t" +
               (p.distilled ? "distilled" : "baseline") + "\n";
    return out;
}

int select_recipe(double general_baseline_bleu, double general_student_bleu) {
    return general_student_bleu > general_baseline_bleu ? 9 : 6;
}

JobGraph expand_recipe(ExperimentPlan plan, double general_baseline_bleu, double general_student_bleu) {
    plan.config_id = select_recipe(general_baseline_bleu, general_student_bleu);
    return expand_plan(plan);
}

RecipeOutcome run_recipe(ExperimentPlan plan, const PlanData &data, const RunOptions &options,
                         const GeneralStage &stage) {
    const GeneralStageScores scores = stage(plan);
    RecipeOutcome out;
    out.general_baseline_bleu = scores.baseline;
    out.general_student_bleu = scores.student;
    out.config_id = select_recipe(scores.baseline, scores.student);
    plan.config_id = out.config_id;
    out.manifest = run_plan(plan, data, options);
    return out;
}

RecipeOutcome run_recipe(ExperimentPlan plan, const PlanData &data, const RunOptions &options) {
    // Step one needs both general-domain students; configurations 4 and 7
    // contain them, so their jobs run first.
    auto general_stage = [&](const ExperimentPlan &p) {
        ExperimentPlan with_baseline = p;
        with_baseline.config_id = 4;
        ExperimentPlan with_student = p;
        with_student.config_id = 7;
        const RunManifest stage = run_plans({with_baseline, with_student}, data, options);
        std::vector<double> baseline, student;
        for (auto seed : p.seeds) {
            const auto &b = stage.job(std::string(kGeneralBaseline) + seed_suffix(seed));
            const std::string refined = std::string(kGeneralStudentContinue) + seed_suffix(seed);
            const bool has_refined = std::any_of(stage.jobs.begin(), stage.jobs.end(),
                                                 [&](const JobRecord &j) { return j.name == refined; });
            const auto &s = stage.job(has_refined ? refined : std::string(kGeneralStudent) + seed_suffix(seed));
            if (!b.dev_bleu || !s.dev_bleu)
                fail(ErrorCategory::protocol, "general-domain stage did not complete");
            baseline.push_back(*b.dev_bleu);
            student.push_back(*s.dev_bleu);
        }
        return GeneralStageScores{median(baseline), median(student)};
    };
    return run_recipe(std::move(plan), data, options, general_stage);
}

} // namespace kdadapt
