// Acceptance runner: one PASS/FAIL line per criterion.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <set>
#include <string>

#include <CLI11.hpp>

#include "kdadapt/allocator.hpp"
#include "kdadapt/pipeline.hpp"
#include "oracles.hpp"

using namespace kdadapt;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

using Clock = std::chrono::steady_clock;

double since(Clock::time_point t) { return std::chrono::duration<double>(Clock::now() - t).count(); }

std::string num(double v, int digits = 2) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", digits, v);
    return buf;
}

std::string suite_detail(const testing::SuiteResult &r) {
    std::string s = std::to_string(r.passed) + "/" + std::to_string(r.cases) + " cases";
    if (!r.detail.empty())
        s += " [" + r.detail + "]";
    return s;
}

Outcome timed_suite(const std::function<testing::SuiteResult()> &run, double limit_seconds,
                    const std::string &extra = {}) {
    const auto start = Clock::now();
    const auto r = run();
    const double secs = since(start);
    Outcome o;
    o.pass = r.ok() && secs < limit_seconds;
    o.detail = suite_detail(r) + extra + ", " + num(secs, 1) + " s (limit " + num(limit_seconds, 0) + " s)";
    if (r.worst > 0.0)
        o.detail += ", worst error " + std::to_string(r.worst);
    return o;
}

// ---------------------------------------------------------------------------
// Trend sweep shared by criteria 7 to 9.

struct Sweep {
    std::vector<RunManifest> per_seed;
    double seconds = 0.0;
    std::string error;

    std::vector<double> job_bleu(const std::string &role) const {
        std::vector<double> out;
        for (std::size_t i = 0; i < per_seed.size(); ++i)
            for (const auto &j : per_seed[i].jobs)
                if (j.name.rfind(role + "@", 0) == 0 && j.dev_bleu)
                    out.push_back(*j.dev_bleu);
        return out;
    }
    std::vector<double> config_bleu(int k) const {
        std::vector<double> out;
        for (const auto &m : per_seed)
            for (const auto &r : m.results)
                if (r.config_id == k)
                    out.push_back(r.dev_bleu);
        return out;
    }
};

std::string list(const std::vector<double> &v) {
    std::string s;
    for (double x : v)
        s += (s.empty() ? "" : " ") + num(x);
    return "[" + s + "]";
}

Sweep run_sweep(const std::vector<std::uint64_t> &seeds, const std::string &artifacts) {
    Sweep sweep;
    const auto start = Clock::now();
    DomainSpec gd;
    gd.seed = 101;
    gd.size = 50000 + 500;
    gd.name = "gd";
    DomainSpec id;
    id.seed = 202;
    id.size = 2000 + 500;
    id.domain_lexicon_fraction = 0.3;
    id.name = "id";
    auto [gtr, gdv] = split_dev(generate_domain(gd), 500);
    auto [itr, idv] = split_dev(generate_domain(id), 500);
    const PlanData data{gtr, gdv, itr, idv, std::nullopt};

    RunOptions options;
    options.artifact_dir = artifacts;
    options.concurrency = 1;
    options.log = [](const std::string &m) { std::fprintf(stderr, "  %s\n", m.c_str()); };
    for (auto seed : seeds) {
        std::vector<ExperimentPlan> plans;
        for (int k : {1, 2, 4, 7, 9}) {
            ExperimentPlan p = make_plan(k, data);
            p.seeds = {seed};
            p.teacher_scale = 16;
            p.student_scale = 8;
            for (TrainConfig *c : {&p.teacher_config, &p.student_config}) {
                c->schedule.peak = 3e-3;
                c->limits.max_updates = 2000;
            }
            plans.push_back(p);
        }
        RunManifest m = run_plans(plans, data, options);
        if (!m.ok())
            sweep.error += "seed " + std::to_string(seed) + " had failed jobs; ";
        sweep.per_seed.push_back(std::move(m));
    }
    sweep.seconds = since(start);
    return sweep;
}

// ---------------------------------------------------------------------------
// Criterion 10

Outcome determinism() {
    const PlanData data = testing::tiny_plan_data(150, 80, 30, 17);
    const ExperimentPlan plan = testing::tiny_plan(9, data, {1, 2});
    const fs::path root = fs::temp_directory_path() / "kdadapt-acceptance-determinism";
    fs::remove_all(root);
    RunOptions a, b;
    a.artifact_dir = (root / "a").string();
    b.artifact_dir = (root / "b").string();
    const RunManifest first = run_plan(plan, data, a);
    const RunManifest rerun = run_plan(plan, data, a);
    const RunManifest fresh = run_plan(plan, data, b);

    bool histories = first.jobs.size() == fresh.jobs.size();
    for (std::size_t i = 0; histories && i < first.jobs.size(); ++i) {
        const auto &x = first.jobs[i], &y = fresh.jobs[i];
        histories = x.name == y.name && x.checkpoint_id == y.checkpoint_id && x.dev_bleu.has_value() == y.dev_bleu.has_value() &&
                    (!x.dev_bleu || std::abs(*x.dev_bleu - *y.dev_bleu) <= 1e-9);
    }
    // Full per-checkpoint histories of an independent pair of training runs.
    const BpeModel bpe = learn_bpe(data.general_train, 20);
    const ParallelCorpus tr = apply_bpe(bpe, data.general_train), dv = apply_bpe(bpe, data.general_dev);
    TrainConfig cfg = plan.student_config;
    cfg.limits.max_updates = 12;
    auto run = [&] {
        return train(nn::build_model(plan.student_arch(), bpe.model_vocab_size(), 3), tr, dv, bpe, cfg);
    };
    const TrainReport h1 = run(), h2 = run();
    bool full = h1.history.size() == h2.history.size() && h1.history.size() > 1;
    for (std::size_t i = 0; full && i < h1.history.size(); ++i)
        full = std::abs(h1.history[i].dev_bleu - h2.history[i].dev_bleu) <= 1e-9 &&
               h1.history[i].updates == h2.history[i].updates;

    Outcome o;
    const bool cache = first.ok() && rerun.executed_training_jobs() == 0 && rerun.report() == first.report();
    const bool same = fresh.report() == first.report();
    o.pass = cache && same && histories && full;
    o.detail = "rerun trained " + std::to_string(rerun.executed_training_jobs()) + " jobs (first run " +
               std::to_string(first.executed_training_jobs()) + "), rerun report " +
               (rerun.report() == first.report() ? "identical" : "differs") + ", fresh run report " +
               (same ? "identical" : "differs") + ", histories " + (histories && full ? "match" : "differ");
    fs::remove_all(root);
    return o;
}

// ---------------------------------------------------------------------------
// Criterion 11

Outcome recipe() {
    const PlanData data = testing::tiny_plan_data(100, 60, 20, 23);
    const ExperimentPlan plan = testing::tiny_plan(1, data);
    auto stub = [](double baseline, double student) {
        return [=](const ExperimentPlan &) { return GeneralStageScores{baseline, student}; };
    };
    RunOptions options;
    const RecipeOutcome student_wins = run_recipe(plan, data, options, stub(14.0, 15.5));
    const RecipeOutcome baseline_wins = run_recipe(plan, data, options, stub(15.5, 14.0));
    const RecipeOutcome tie = run_recipe(plan, data, options, stub(15.0, 15.0));
    Outcome o;
    o.pass = student_wins.config_id == 9 && student_wins.manifest.configs == std::vector<int>{9} &&
             student_wins.manifest.ok() && baseline_wins.config_id == 6 &&
             baseline_wins.manifest.configs == std::vector<int>{6} && baseline_wins.manifest.ok() && tie.config_id == 6;
    o.detail = "student > baseline -> config " + std::to_string(student_wins.config_id) +
               ", baseline > student -> config " + std::to_string(baseline_wins.config_id) + ", tie -> config " +
               std::to_string(tie.config_id);
    return o;
}

} // namespace

int main(int argc, char **argv) {
    configure_allocator();
    CLI::App app{"acceptance criteria"};
    std::string artifacts = (fs::current_path() / "acceptance-artifacts").string();
    std::string seeds_text = "1,2,3";
    std::vector<int> only;
    app.add_option("--artifacts", artifacts, "artifact cache for the trend sweep")->capture_default_str();
    app.add_option("--seeds", seeds_text, "seeds of the trend sweep")->capture_default_str();
    app.add_option("--only", only, "criteria to run (default all)")->delimiter(',');
    CLI11_PARSE(app, argc, argv);

    std::vector<std::uint64_t> seeds;
    for (const auto &s : CLI::detail::split(seeds_text, ','))
        seeds.push_back(std::stoull(s));
    const std::set<int> selected(only.begin(), only.end());
    auto wanted = [&](int c) { return selected.empty() || selected.count(c) > 0; };

    int failures = 0;
    auto report = [&](int id, const char *title, const Outcome &o) {
        std::printf("criterion %d %s: %s -- %s\n", id, o.pass ? "PASS" : "FAIL", title, o.detail.c_str());
        std::fflush(stdout);
        failures += o.pass ? 0 : 1;
    };
    auto guarded = [](const std::function<Outcome()> &f) {
        try {
            return f();
        } catch (const std::exception &e) {
            return Outcome{false, std::string("exception: ") + e.what()};
        }
    };

    if (wanted(1))
        report(1, "gradient checks", guarded([] { return timed_suite([] { return testing::gradient_suite(20); }, 60); }));
    if (wanted(2))
        report(2, "BLEU oracle", guarded([] { return timed_suite([] { return testing::bleu_oracle_suite(200, 2024); }, 10); }));
    if (wanted(3))
        report(3, "beam exactness",
               guarded([] { return timed_suite([] { return testing::beam_exactness_suite(50, 99); }, 60); }));
    if (wanted(4))
        report(4, "distillation fidelity",
               guarded([] { return timed_suite([] { return testing::distillation_fidelity_suite(500, 5); }, 120); }));
    if (wanted(5))
        report(5, "configuration matrix", guarded([] {
                   const auto r = testing::matrix_suite();
                   return Outcome{r.ok() && r.passed == 9, suite_detail(r)};
               }));
    if (wanted(6))
        report(6, "stopping rule", guarded([] {
                   const auto r = testing::stopping_suite();
                   return Outcome{r.ok(), suite_detail(r)};
               }));

    if (wanted(7) || wanted(8) || wanted(9)) {
        Sweep sweep;
        try {
            sweep = run_sweep(seeds, artifacts);
        } catch (const std::exception &e) {
            sweep.error = e.what();
        }
        const std::string timing = ", sweep " + num(sweep.seconds / 60.0, 1) + " min";
        auto trend = [&](const std::function<Outcome()> &f) {
            if (!sweep.error.empty())
                return Outcome{false, "sweep failed: " + sweep.error};
            return guarded(f);
        };
        if (wanted(7))
            report(7, "adapted teacher beats in-domain teacher", trend([&] {
                       const auto adapted = sweep.job_bleu(kAdaptedTeacher);
                       const auto scratch = sweep.job_bleu(kInDomainTeacher);
                       const double margin = median(adapted) - median(scratch);
                       return Outcome{margin > 0.0 && sweep.seconds < 7200.0,
                                      "adapted " + list(adapted) + " vs scratch " + list(scratch) + ", median margin " +
                                          num(margin) + timing};
                   }));
        if (wanted(8))
            report(8, "general-domain init beats random init", trend([&] {
                       const double c1 = median(sweep.config_bleu(1));
                       const double c4 = median(sweep.config_bleu(4));
                       const double c7 = median(sweep.config_bleu(7));
                       return Outcome{c4 - c1 >= 2.0 && c7 - c1 >= 2.0,
                                      "config 1 " + list(sweep.config_bleu(1)) + ", config 4 " +
                                          list(sweep.config_bleu(4)) + ", config 7 " + list(sweep.config_bleu(7)) +
                                          ", median margins " + num(c4 - c1) + " / " + num(c7 - c1)};
                   }));
        if (wanted(9))
            report(9, "second distillation does not hurt", trend([&] {
                       const double c7 = median(sweep.config_bleu(7));
                       const double c9 = median(sweep.config_bleu(9));
                       return Outcome{c9 >= c7, "config 7 " + list(sweep.config_bleu(7)) + ", config 9 " +
                                                    list(sweep.config_bleu(9)) + ", median difference " +
                                                    num(c9 - c7)};
                   }));
    }
    if (wanted(10))
        report(10, "determinism and cache soundness", guarded(determinism));
    if (wanted(11))
        report(11, "recipe selection", guarded(recipe));

    std::printf("%s: %d failing\n", failures == 0 ? "ALL PASS" : "NOT ALL PASS", failures);
    return failures == 0 ? 0 : 1;
}
