#include <doctest.h>

#include <filesystem>

#include "kdadapt/error.hpp"
#include "kdadapt/pipeline.hpp"
#include "oracles.hpp"

using namespace kdadapt;
namespace fs = std::filesystem;

namespace {

const PlanData &data() {
    static const PlanData d = testing::tiny_plan_data(120, 60, 20);
    return d;
}

fs::path fresh_dir(const std::string &name) {
    const fs::path dir = fs::temp_directory_path() / "kdadapt-unit-pipeline" / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

RunOptions options_in(const fs::path &dir) {
    RunOptions o;
    o.artifact_dir = dir.string();
    o.concurrency = 2;
    return o;
}

} // namespace

TEST_SUITE("pipeline") {

TEST_CASE("every configuration expands to the matrix of init and teacher sources") {
    const auto r = testing::matrix_suite();
    INFO(r.detail);
    CHECK(r.passed == 9);
}

TEST_CASE("configuration 9 job counts") {
    const ExperimentPlan plan = testing::tiny_plan(9, data());
    const JobGraph g = expand_plan(plan);
    CHECK(g.count(JobKind::train) + g.count(JobKind::adapt) == 4);
    CHECK(g.count(JobKind::distill) == 2);
    CHECK(g.count(JobKind::learn_bpe) == 1);
    CHECK(g.count(JobKind::continue_on_original) == 1);
    CHECK(g.count(JobKind::score) == 1);
    const auto order = g.topological_order();
    for (const auto &job : g.jobs())
        for (const auto &dep : job.deps)
            CHECK(std::find(order.begin(), order.end(), dep) < std::find(order.begin(), order.end(), job.name));
    CHECK(g.selected_model(9, 1).name == "c9.continue@1");
}

TEST_CASE("configurations 1 to 9 share their common jobs") {
    std::vector<ExperimentPlan> plans;
    for (int k = 1; k <= 9; ++k)
        plans.push_back(testing::tiny_plan(k, data(), {1, 2}));
    const JobGraph g = expand_plans(plans);
    // Per seed: 4 teachers/baselines, 1 GD student, 9 final students, 2 adapted-or-id distills + 1 GD distill.
    CHECK(g.count(JobKind::train) + g.count(JobKind::adapt) == 2 * (4 + 1 + 9));
    CHECK(g.count(JobKind::distill) == 2 * 3);
    CHECK(g.count(JobKind::score) == 2 * 9);
}

TEST_CASE("plans are validated") {
    ExperimentPlan p = testing::tiny_plan(1, data());
    p.config_id = 10;
    CHECK_THROWS_AS(expand_plan(p), Error);
    p = testing::tiny_plan(1, data());
    p.seeds = {1, 1};
    CHECK_THROWS_AS(expand_plan(p), Error);
    p = testing::tiny_plan(1, data());
    p.seeds = {};
    CHECK_THROWS_AS(expand_plan(p), Error);
}

TEST_CASE("medians, comparison marks and correlation edges") {
    CHECK(median({3.0, 1.0, 2.0}) == 2.0);
    CHECK(median({4.0, 1.0, 2.0, 3.0}) == 2.5);
    CHECK_THROWS_AS(median({}), Error);

    std::vector<ExperimentPlan> plans{testing::tiny_plan(1, data(), {1, 2}), testing::tiny_plan(4, data(), {1, 2}),
                                      testing::tiny_plan(7, data(), {1, 2})};
    std::vector<ConfigResult> results{{1, 1, 10.0, "", {}, false}, {1, 2, 12.0, "", {}, false},
                                      {4, 1, 20.0, "", {}, false}, {4, 2, 20.0, "", {}, false},
                                      {7, 1, 19.95, "", {}, false}, {7, 2, 19.95, "", {}, false}};
    const ComparisonReport c = compare_configs(plans, results);
    REQUIRE(c.rows.size() == 3);
    CHECK(c.rows[0].median == 11.0);
    CHECK_FALSE(c.rows[0].best);
    CHECK(c.rows[1].best);
    CHECK(c.rows[2].best);
    CHECK(c.text().find("config 4 median 20.00") != std::string::npos);

    CHECK_FALSE(least_squares({{"a", 1, 2, false}, {"b", 2, 3, false}}).defined);
    CHECK_FALSE(least_squares({{"a", 1, 2, false}, {"b", 1, 3, false}, {"c", 1, 4, false}}).defined);
    const LinearFit f = least_squares({{"a", 1, 3, false}, {"b", 2, 5, false}, {"c", 3, 7, false}});
    CHECK(f.defined);
    CHECK(f.slope == doctest::Approx(2.0));
    CHECK(f.intercept == doctest::Approx(1.0));
    CHECK(f.r_squared == doctest::Approx(1.0));
    const auto rep = gd_vs_id_correlation({{"a", 1, 3, true}, {"b", 2, 5, false}});
    CHECK(rep.data_file().find("undefined") != std::string::npos);
}

TEST_CASE("a rerun is served from the cache with an identical report") {
    const auto dir = fresh_dir("rerun");
    const ExperimentPlan plan = testing::tiny_plan(5, data());
    const RunManifest first = run_plan(plan, data(), options_in(dir));
    REQUIRE(first.ok());
    CHECK(first.executed_training_jobs() == 4);
    const RunManifest second = run_plan(plan, data(), options_in(dir));
    CHECK(second.ok());
    CHECK(second.executed_training_jobs() == 0);
    CHECK(second.report() == first.report());
    for (const auto &j : second.jobs)
        CHECK(j.status == JobStatus::cached);

    const RunManifest back = RunManifest::parse(first.serialize());
    CHECK(back.report() == first.report());
    CHECK(back.serialize() == first.serialize());
}

TEST_CASE("fresh runs reproduce dev BLEU histories") {
    const ExperimentPlan plan = testing::tiny_plan(2, data());
    const RunManifest a = run_plan(plan, data(), options_in(fresh_dir("fresh-a")));
    const RunManifest b = run_plan(plan, data(), options_in(fresh_dir("fresh-b")));
    REQUIRE(a.jobs.size() == b.jobs.size());
    for (std::size_t i = 0; i < a.jobs.size(); ++i) {
        CHECK(a.jobs[i].checkpoint_id == b.jobs[i].checkpoint_id);
        CHECK(a.jobs[i].dev_bleu.has_value() == b.jobs[i].dev_bleu.has_value());
        if (a.jobs[i].dev_bleu)
            CHECK(std::abs(*a.jobs[i].dev_bleu - *b.jobs[i].dev_bleu) <= 1e-9);
    }
    CHECK(a.report() == b.report());
}

TEST_CASE("configuration 6 reuses the jobs configuration 9 already ran") {
    const auto dir = fresh_dir("reuse");
    const RunManifest nine = run_plan(testing::tiny_plan(9, data()), data(), options_in(dir));
    REQUIRE(nine.ok());
    const RunManifest six = run_plan(testing::tiny_plan(6, data()), data(), options_in(dir));
    REQUIRE(six.ok());
    CHECK(six.job("gd_teacher@1").status == JobStatus::cached);
    CHECK(six.job("adapted_teacher@1").status == JobStatus::cached);
    CHECK(six.job("id_distill.adapted@1").status == JobStatus::cached);
    CHECK(six.job("gd_baseline@1").status == JobStatus::done);
    // gd_baseline, c6.student and c6.continue
    CHECK(six.executed_training_jobs() == 3);
    REQUIRE(six.results.size() == 1);
    CHECK(six.results[0].lineage.find("adapt") != std::string::npos);
}

TEST_CASE("a failing job skips its dependents and the run reports it") {
    PlanData bad = data();
    bad.bpe = learn_bpe(bad.general_train, 3);
    const RunManifest m = run_plan(testing::tiny_plan(4, bad), bad, RunOptions{});
    CHECK_FALSE(m.ok());
    CHECK(m.job("bpe").status == JobStatus::failed);
    CHECK(m.job("bpe").error.find("protocol") != std::string::npos);
    CHECK(m.job("c4.student@1").status == JobStatus::skipped);
    CHECK(m.results.empty());
    CHECK(m.report().find("status failed") != std::string::npos);
}

TEST_CASE("the recipe picks configuration 9 only when the general student wins") {
    CHECK(select_recipe(20.0, 21.0) == 9);
    CHECK(select_recipe(21.0, 20.0) == 6);
    CHECK(select_recipe(20.0, 20.0) == 6);
    const ExperimentPlan plan = testing::tiny_plan(1, data());
    CHECK(expand_recipe(plan, 1.0, 2.0).contains("c9.student@1"));
    CHECK(expand_recipe(plan, 2.0, 1.0).contains("c6.student@1"));

    const auto dir = fresh_dir("recipe");
    auto stub = [](double b, double s) {
        return [=](const ExperimentPlan &) { return GeneralStageScores{b, s}; };
    };
    const RecipeOutcome win = run_recipe(plan, data(), options_in(dir), stub(10.0, 12.0));
    CHECK(win.config_id == 9);
    CHECK(win.manifest.configs == std::vector<int>{9});
    const RecipeOutcome lose = run_recipe(plan, data(), options_in(dir), stub(12.0, 10.0));
    CHECK(lose.config_id == 6);
    CHECK(lose.manifest.configs == std::vector<int>{6});
}

}
