#include "doctest.h"

#include <cmath>

#include "envsim.hpp"
#include "helpers.hpp"
#include "metrics.hpp"

using namespace tdcal;

namespace {

std::vector<ScoredRollout> two_rollout_even_split() {
    return {{"a", {0.5, 0.5}, 1}, {"a", {0.5, 0.5}, 0}};
}

} // namespace

TEST_CASE("sequential brier") {
    SUBCASE("perfect scores give zero") {
        std::vector<ScoredRollout> scored = {{"a", {1.0, 1.0}, 1}, {"a", {0.0}, 0}};
        for (double q : {0.0, 0.5, 1.0}) CHECK(sequential_brier(scored, q) == 0.0);
    }
    SUBCASE("coin-flip predictor on balanced data scores a quarter") {
        CHECK(sequential_brier(two_rollout_even_split(), 1.0) == doctest::Approx(0.25));
    }
    SUBCASE("permutation invariance") {
        Rng rng(3);
        std::vector<ScoredRollout> scored;
        for (int i = 0; i < 9; ++i) {
            std::vector<double> s(4 + rng.uniform_int(3));
            for (double& v : s) v = rng.uniform01();
            scored.push_back({"t", s, static_cast<int>(rng.uniform_int(2))});
        }
        std::vector<ScoredRollout> shuffled = scored;
        rng.shuffle(shuffled);
        for (double q : {0.0, 0.3, 0.8})
            CHECK(sequential_brier(scored, q) == doctest::Approx(sequential_brier(shuffled, q)));
    }
}

TEST_CASE("brier decomposition") {
    SUBCASE("exact mode reproduces the total exactly") {
        Rng rng(5);
        for (int trial = 0; trial < 20; ++trial) {
            std::size_t n = 20 + rng.uniform_int(100);
            std::vector<double> scores(n);
            std::vector<int> labels(n);
            for (std::size_t i = 0; i < n; ++i) {
                // duplicated score values exercise real grouping
                scores[i] = std::round(rng.uniform01() * 8.0) / 8.0;
                labels[i] = rng.uniform01() < 0.4 ? 1 : 0;
            }
            BrierDecomposition d = brier_decomposition_exact(scores, labels);
            CHECK(std::abs(d.calibration + d.refinement - d.total) < 1e-12);
        }
    }
    SUBCASE("perfectly calibrated bins have zero calibration term") {
        std::vector<double> scores = {0.25, 0.25, 0.25, 0.25};
        std::vector<int> labels = {1, 0, 0, 0};
        BrierDecomposition d = brier_decomposition(scores, labels, 2);
        CHECK(d.calibration == doctest::Approx(0.0));
        CHECK(d.refinement == doctest::Approx(0.25 * 0.75));
    }
    SUBCASE("certain correct predictions vanish entirely") {
        std::vector<double> scores = {1.0, 1.0};
        std::vector<int> labels = {1, 1};
        BrierDecomposition d = brier_decomposition(scores, labels, 10);
        CHECK(d.calibration == 0.0);
        CHECK(d.refinement == 0.0);
        CHECK(d.total == 0.0);
    }
    SUBCASE("empty input errors") {
        CHECK_THROWS_AS(brier_decomposition({}, {}, 10), Error);
    }
}

TEST_CASE("expected calibration error") {
    SUBCASE("exact predictions") {
        std::vector<double> scores = {1.0, 0.0, 1.0};
        std::vector<int> labels = {1, 0, 1};
        CHECK(ece(scores, labels) == doctest::Approx(0.0));
    }
    SUBCASE("single-bin constant gap") {
        std::vector<double> scores(10, 0.7);
        std::vector<int> labels(10, 1);
        CHECK(ece(scores, labels) == doctest::Approx(0.3));
    }
    SUBCASE("empirical-mean constant predictor is perfectly calibrated") {
        std::vector<int> labels = {1, 1, 0, 1, 0, 0, 0, 1, 1, 1};
        double mean = 0.6;
        std::vector<double> scores(labels.size(), mean);
        for (int bins : {1, 5, 10, 17}) CHECK(ece(scores, labels, bins) == doctest::Approx(0.0));
    }
}

TEST_CASE("roc auc") {
    SUBCASE("perfect and inverted rankings") {
        CHECK(roc_auc(std::vector<double>{0.9, 0.1}, std::vector<int>{0, 1}) == 1.0);
        CHECK(roc_auc(std::vector<double>{0.1, 0.9}, std::vector<int>{0, 1}) == 0.0);
    }
    SUBCASE("all ties sit at one half") {
        CHECK(roc_auc(std::vector<double>{0.4, 0.4, 0.4}, std::vector<int>{0, 1, 0}) == 0.5);
    }
    SUBCASE("hand-counted pairs") {
        CHECK(roc_auc(std::vector<double>{0.8, 0.6, 0.4}, std::vector<int>{0, 1, 0}) == 0.5);
    }
    SUBCASE("invariant to strictly monotone transforms") {
        Rng rng(7);
        std::vector<double> scores(40);
        std::vector<int> labels(40);
        for (std::size_t i = 0; i < scores.size(); ++i) {
            scores[i] = rng.uniform01();
            labels[i] = rng.uniform01() < 0.5 ? 1 : 0;
        }
        labels[0] = 0;
        labels[1] = 1;
        std::vector<double> warped = scores;
        for (double& v : warped) v = std::exp(3.0 * v) - 0.5;
        CHECK(roc_auc(scores, labels) == doctest::Approx(roc_auc(warped, labels)));
    }
    SUBCASE("flipping labels complements the area") {
        Rng rng(11);
        std::vector<double> scores(25);
        std::vector<int> labels(25), flipped(25);
        for (std::size_t i = 0; i < scores.size(); ++i) {
            scores[i] = std::round(rng.uniform01() * 4.0) / 4.0; // force ties
            labels[i] = rng.uniform01() < 0.5 ? 1 : 0;
            flipped[i] = 1 - labels[i];
        }
        labels[0] = 0;
        labels[1] = 1;
        flipped[0] = 1;
        flipped[1] = 0;
        CHECK(roc_auc(scores, labels) + roc_auc(scores, flipped) == doctest::Approx(1.0));
    }
    SUBCASE("single-class input errors") {
        CHECK_THROWS_AS(roc_auc(std::vector<double>{0.5, 0.6}, std::vector<int>{1, 1}), Error);
    }
}

TEST_CASE("fixed-cutoff scores") {
    SUBCASE("uniform lengths reduce to the plain maximum") {
        std::vector<ScoredRollout> scored = {{"a", {0.9, 0.2, 0.6}, 1}, {"a", {0.5, 0.1, 0.8}, 0}};
        std::vector<CutoffScore> cut = fixed_cutoff_scores(scored);
        CHECK(cut[0].failure_score == doctest::Approx(1.0 - 0.2));
        CHECK(cut[1].failure_score == doctest::Approx(1.0 - 0.1));
    }
    SUBCASE("longer rollouts are cut at the task minimum") {
        std::vector<ScoredRollout> scored = {{"a", {0.9, 0.8, 0.7}, 1},
                                             {"a", {0.9, 0.9, 0.9, 0.9, 0.0}, 0}};
        std::vector<CutoffScore> cut = fixed_cutoff_scores(scored);
        // only the first 3 steps of the second rollout count
        CHECK(cut[1].failure_score == doctest::Approx(0.1));
    }
    SUBCASE("monotone failure scores peak at the cutoff") {
        std::vector<ScoredRollout> scored = {{"a", {0.9, 0.7, 0.5}, 1}, {"a", {0.8, 0.6, 0.4}, 0}};
        std::vector<CutoffScore> cut = fixed_cutoff_scores(scored);
        CHECK(cut[0].failure_score == doctest::Approx(0.5));
        CHECK(cut[1].failure_score == doctest::Approx(0.6));
    }
    SUBCASE("tasks cut independently") {
        std::vector<ScoredRollout> scored = {{"a", {0.9, 0.1}, 1}, {"b", {0.3}, 0}};
        std::vector<CutoffScore> cut = fixed_cutoff_scores(scored);
        CHECK(cut[0].failure_score == doctest::Approx(0.9));
        CHECK(cut[1].failure_score == doctest::Approx(0.7));
    }
}

TEST_CASE("spearman rank correlation") {
    std::vector<double> xs = {1, 2, 3};
    CHECK(spearman(xs, xs) == doctest::Approx(1.0));
    std::vector<double> neg = {3, 2, 1};
    CHECK(spearman(xs, neg) == doctest::Approx(-1.0));
    std::vector<double> ys = {2, 1, 3};
    CHECK(spearman(xs, ys) == doctest::Approx(0.5));
    std::vector<double> constant = {1, 1, 1};
    CHECK_THROWS_AS(spearman(xs, constant), Error);
    CHECK_THROWS_AS(spearman(xs, std::vector<double>{1.0}), Error);
}

TEST_CASE("scoring adapters") {
    Env env = build_example1();
    Dataset d = simulate(env, 10, {1.0, false}, 3);

    SUBCASE("static adapter recovers chosen probabilities on one dof") {
        std::vector<ScoredRollout> scored = score_with_static(StaticMethod::max_prob, d);
        for (std::size_t i = 0; i < d.size(); ++i)
            for (int t = 0; t < d.rollouts[i].length(); ++t)
                CHECK(scored[i].scores[t] ==
                      doctest::Approx(d.rollouts[i].steps[t].chosen_probs[0]));
    }
    SUBCASE("constant adapter fills every step") {
        std::vector<ScoredRollout> scored = score_constant(0.3, d);
        for (const ScoredRollout& s : scored)
            for (double v : s.scores) CHECK(v == 0.3);
    }
    SUBCASE("example1 final-step brier: coin-flip static vs exact oracle") {
        // the policy's own action probability at s1 is 0.5 while every
        // rollout succeeds; the exact posterior scores 0 instead
        std::vector<ScoredRollout> static_scored = score_with_static(StaticMethod::max_prob, d);
        CHECK(sequential_brier(static_scored, 1.0) == doctest::Approx(0.25));
        OracleTables tables = exact_q(env, 1.0);
        std::vector<ScoredRollout> oracle_scored;
        for (const Rollout& r : d.rollouts)
            oracle_scored.push_back({r.task_id, oracle_scores(tables, r), r.label});
        CHECK(sequential_brier(oracle_scored, 1.0) == doctest::Approx(0.0));
    }
    SUBCASE("mean success rate") {
        CHECK(mean_success_rate(d) == 1.0);
    }
}

TEST_CASE("method report bundles the per-split numbers") {
    std::vector<ScoredRollout> scored = {{"a", {0.8, 0.9}, 1},
                                         {"a", {0.4, 0.2}, 0},
                                         {"b", {0.7, 0.6, 0.9}, 1},
                                         {"b", {0.5, 0.3, 0.1}, 0}};
    std::vector<double> quantiles = {0.0, 1.0};
    MetricReport r = evaluate_method(scored, quantiles, 10, 0.5);
    CHECK(r.brier_by_quantile.at(0.0) == doctest::Approx(sequential_brier(scored, 0.0)));
    CHECK(r.brier_by_quantile.at(1.0) == doctest::Approx(sequential_brier(scored, 1.0)));
    CHECK(r.baseline_brier == doctest::Approx(0.25)); // balanced labels, p = 0.5
    CHECK(r.roc_auc == doctest::Approx(roc_auc(fixed_cutoff_scores(scored))));
    CHECK(r.calibration >= 0.0);
    CHECK(r.refinement >= 0.0);
    CHECK(r.ece >= 0.0);
    CHECK(r.ece <= 1.0);

    SUBCASE("single-class split leaves the auc undefined") {
        std::vector<ScoredRollout> ones = {{"a", {0.8}, 1}, {"a", {0.7}, 1}};
        MetricReport single = evaluate_method(ones, quantiles, 10, 1.0);
        CHECK(std::isnan(single.roc_auc));
        CHECK(single.baseline_brier == doctest::Approx(0.0));
    }
}
