#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "kdadapt/corpus.hpp"
#include "kdadapt/distiller.hpp"
#include "kdadapt/trainer.hpp"
#include "kdadapt/transformer.hpp"

namespace kdadapt {

inline constexpr int kManifestFormatVersion = 1;
inline constexpr const char *kArtifactDirEnv = "KDADAPT_ARTIFACTS";
inline constexpr double kTieWindow = 0.1;

// Raw (un-encoded) corpora shared by every plan of a sweep.
struct PlanData {
    ParallelCorpus general_train;
    ParallelCorpus general_dev;
    ParallelCorpus in_domain_train;
    ParallelCorpus in_domain_dev;
    // Merges supplied by the caller. They must equal what learning on the
    // general-domain train split produces.
    std::optional<BpeModel> bpe;
};

struct ExperimentPlan {
    int config_id = 1;
    nn::SizeClass student_size = nn::SizeClass::Tiny;
    int student_scale = nn::kDeskScaleFactor;
    nn::SizeClass teacher_size = nn::SizeClass::Large;
    int teacher_scale = nn::kDeskScaleFactor;
    std::string general_corpus;   // id of the general-domain train split
    std::string in_domain_corpus; // id of the in-domain train split
    std::size_t bpe_merges = kDeskMerges;
    std::vector<std::uint64_t> seeds{1};
    TrainConfig teacher_config;
    TrainConfig student_config;
    BeamConfig distill_beam;
    // Open question in the recipe: refine students on original data after
    // distillation. Off for general-domain students, on for in-domain ones.
    bool continue_general_students = false;
    bool continue_in_domain_students = true;

    void validate() const;
    nn::ArchConfig student_arch() const { return nn::ArchConfig::preset(student_size, student_scale); }
    nn::ArchConfig teacher_arch() const { return nn::ArchConfig::preset(teacher_size, teacher_scale); }
};

ExperimentPlan make_plan(int config_id, const PlanData &data);

enum class JobKind { learn_bpe, train, adapt, distill, continue_on_original, score };
std::string job_kind_name(JobKind kind);

// Roles of jobs in the configuration matrix.
inline constexpr const char *kBpeRole = "bpe";
inline constexpr const char *kGeneralTeacher = "gd_teacher";
inline constexpr const char *kInDomainTeacher = "id_teacher";
inline constexpr const char *kAdaptedTeacher = "adapted_teacher";
inline constexpr const char *kGeneralBaseline = "gd_baseline";
inline constexpr const char *kGeneralDistill = "gd_distill";
inline constexpr const char *kGeneralStudent = "gd_student";
inline constexpr const char *kGeneralStudentContinue = "gd_student.continue";
inline constexpr const char *kInDomainDistillBaseline = "id_distill.baseline";
inline constexpr const char *kInDomainDistillAdapted = "id_distill.adapted";
inline constexpr const char *kGeneralData = "gd";
inline constexpr const char *kInDomainData = "id";

struct Job {
    std::string name;
    JobKind kind = JobKind::train;
    std::string role;
    int config_id = 0;       // 0 for jobs shared between configurations
    std::uint64_t seed = 0;
    bool teacher_arch = false;
    std::string init = kRandomInit; // train/adapt: job whose checkpoint initializes the model
    std::string data;        // "gd", "id" or the distill job supplying the corpus
    std::string teacher;     // distill: teacher job; otherwise "none"
    std::string dev;         // "gd" or "id"
    std::string model;       // score: the job whose final checkpoint is scored
    std::vector<std::string> deps;

    friend bool operator==(const Job &, const Job &) = default;
};

class JobGraph {
  public:
    void add(Job job);
    const std::vector<Job> &jobs() const { return jobs_; }
    const Job &job(const std::string &name) const;
    bool contains(const std::string &name) const;
    // Jobs ordered so that dependencies come first; throws on a cycle.
    std::vector<std::string> topological_order() const;
    void validate() const;
    // The final in-domain student of a configuration and seed.
    const Job &final_student(int config_id, std::uint64_t seed) const;
    // The job whose checkpoint a configuration reports (continued or not).
    const Job &selected_model(int config_id, std::uint64_t seed) const;
    std::size_t count(JobKind kind) const;

    friend bool operator==(const JobGraph &a, const JobGraph &b) { return a.jobs_ == b.jobs_; }

  private:
    std::vector<Job> jobs_;
    std::map<std::string, std::size_t> index_;
};

// Role of the job a student is initialized from ("random" when none), and the
// role of the teacher that wrote its in-domain data ("none" when raw).
std::string init_source_role(const JobGraph &graph, const Job &student);
std::string teacher_source_role(const JobGraph &graph, const Job &student);

JobGraph expand_plan(const ExperimentPlan &plan);
// Union of several plans; shared jobs must agree exactly.
JobGraph expand_plans(const std::vector<ExperimentPlan> &plans);

enum class JobStatus { done, cached, failed, skipped };
std::string job_status_name(JobStatus status);

struct JobRecord {
    std::string name;
    JobKind kind = JobKind::train;
    JobStatus status = JobStatus::skipped;
    std::string key;
    std::string checkpoint_id; // "-" when the job has no checkpoint
    std::optional<double> dev_bleu;
    double seconds = 0.0;
    std::string init;
    std::string teacher;
    std::vector<std::string> lineage;
    std::string error;
};

struct ConfigResult {
    int config_id = 0;
    std::uint64_t seed = 0;
    double dev_bleu = 0.0;       // in-domain dev, selected checkpoint
    std::string lineage;         // provenance chain of the selected checkpoint
    std::optional<double> init_general_bleu; // general-domain dev BLEU of the init model (configs 4-9)
    bool distilled_init = false; // initialized from the general-domain student
};

struct RunManifest {
    std::vector<int> configs;
    std::vector<std::uint64_t> seeds;
    std::string general_corpus;
    std::string in_domain_corpus;
    std::string student;
    std::string teacher;
    std::string bpe_id;
    std::vector<JobRecord> jobs;
    std::vector<ConfigResult> results;
    double training_seconds = 0.0; // work actually performed in this run
    double wall_seconds = 0.0;

    const JobRecord &job(const std::string &name) const;
    bool ok() const;
    std::size_t executed_training_jobs() const;
    // Deterministic summary: identical for identical plans and seeds.
    std::string report() const;
    std::string serialize() const;
    static RunManifest parse(const std::string &text);
};

struct RunOptions {
    std::string artifact_dir;  // empty: no on-disk cache
    std::size_t concurrency = 0; // 0: default of max(1, cores / 2)
    std::function<void(const std::string &)> log;
};

std::size_t default_concurrency();
// Artifact directory from the environment, or empty.
std::string artifact_dir_from_env();

RunManifest run_plan(const ExperimentPlan &plan, const PlanData &data, const RunOptions &options = {});
RunManifest run_plans(const std::vector<ExperimentPlan> &plans, const PlanData &data,
                      const RunOptions &options = {});

// Per-configuration median dev BLEU with the best configuration and every
// configuration within `window` of it marked.
struct ComparisonRow {
    int config_id = 0;
    std::vector<double> scores; // one per seed
    double median = 0.0;
    bool best = false;
    std::string lineage;
};

struct ComparisonReport {
    std::string domain;
    std::string size;
    std::vector<ComparisonRow> rows;
    std::string text() const;
};

double median(std::vector<double> values);

ComparisonReport compare_configs(const std::vector<ExperimentPlan> &plans, const std::vector<ConfigResult> &results,
                                 double window = kTieWindow);
ComparisonReport compare_manifest(const RunManifest &manifest, double window = kTieWindow);

struct CorrelationPoint {
    std::string label;
    double general_bleu = 0.0;
    double in_domain_bleu = 0.0;
    bool distilled = false;
};

struct LinearFit {
    std::size_t points = 0;
    bool defined = false;
    double slope = 0.0;
    double intercept = 0.0;
    double r_squared = 0.0;
};

LinearFit least_squares(const std::vector<CorrelationPoint> &points);

struct CorrelationReport {
    std::vector<CorrelationPoint> points;
    LinearFit all;
    LinearFit distilled;
    LinearFit baseline;
    // Tab-separated data file with a fit summary in '#' comment lines.
    std::string data_file() const;
};

CorrelationReport gd_vs_id_correlation(const std::vector<CorrelationPoint> &points);
CorrelationReport gd_vs_id_correlation(const RunManifest &manifest);

// Step-one outcome of the distill/adapt/distill recipe: configuration 9 when
// the general-domain student beats the general-domain baseline on general
// dev BLEU, configuration 6 otherwise.
int select_recipe(double general_baseline_bleu, double general_student_bleu);
JobGraph expand_recipe(ExperimentPlan plan, double general_baseline_bleu, double general_student_bleu);

struct RecipeOutcome {
    double general_baseline_bleu = 0.0; // median over seeds, general dev
    double general_student_bleu = 0.0;
    int config_id = 0;
    RunManifest manifest;
};

// Median general-domain dev BLEU of the GD baseline and the GD student.
struct GeneralStageScores {
    double baseline = 0.0;
    double student = 0.0;
};
using GeneralStage = std::function<GeneralStageScores(const ExperimentPlan &)>;

// Runs the general-domain stage, picks the configuration and runs it.
RecipeOutcome run_recipe(ExperimentPlan plan, const PlanData &data, const RunOptions &options = {});
// Same, with the general-domain stage supplied by the caller.
RecipeOutcome run_recipe(ExperimentPlan plan, const PlanData &data, const RunOptions &options,
                         const GeneralStage &stage);

} // namespace kdadapt
