// End-to-end acceptance runs. Each case prints one PASS/FAIL line; the
// doctest assertions carry the same conditions so ctest fails when a line
// fails.

#include "doctest.h"

#include <sys/wait.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>

#include "calibrate.hpp"
#include "commands.hpp"
#include "conformal.hpp"
#include "envsim.hpp"
#include "gradcheck.hpp"
#include "helpers.hpp"
#include "metrics.hpp"
#include "search.hpp"

using namespace tdcal;

namespace {

bool report(int criterion, const std::string& name, bool ok) {
    std::printf("[criterion %d] %s - %s\n", criterion, ok ? "PASS" : "FAIL", name.c_str());
    std::fflush(stdout);
    return ok;
}

double elapsed_s(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::unique_ptr<Predictor> train_recurrent(const Dataset& data, const Dataset* val, LossKind loss,
                                           int input_dim, std::uint64_t init_seed,
                                           std::uint64_t train_seed, int epochs, double lr,
                                           double weight_decay, bool class_weighting) {
    auto f = make_predictor(PredictorKind::recurrent,
                            {.input_dim = input_dim, .hidden = 16, .window = 1}, init_seed);
    TrainConfig tc;
    tc.loss = loss;
    tc.lr = lr;
    tc.epochs = epochs;
    tc.batch_rollouts = 64;
    tc.weight_decay = weight_decay;
    tc.target_update_period = 10;
    tc.lr_step_size = epochs / 2;
    tc.lr_gamma = 0.8;
    tc.seed = train_seed;
    tc.class_weighting = class_weighting;
    train(data, *f, tc, val);
    return f;
}

std::vector<ScoredRollout> oracle_scored(const OracleTables& tables, const Dataset& d) {
    std::vector<ScoredRollout> out;
    for (const Rollout& r : d.rollouts)
        out.push_back({r.task_id, oracle_scores(tables, r), r.label});
    return out;
}

// shared between criteria 6 and 8
struct CellStats {
    double brier_sum = 0.0;
    double auc_sum = 0.0;
    int n = 0;
};
std::optional<std::map<std::pair<std::string, std::string>, CellStats>> g_cells;

double brier_at_cutoff(const std::vector<ScoredRollout>& scored) {
    std::map<std::string, int> cutoff;
    for (const ScoredRollout& s : scored) {
        auto [it, fresh] = cutoff.emplace(s.task_id, s.horizon());
        if (!fresh) it->second = std::min(it->second, s.horizon());
    }
    double sum = 0.0;
    for (const ScoredRollout& s : scored) {
        double d = s.scores[cutoff.at(s.task_id) - 1] - s.label;
        sum += d * d;
    }
    return sum / static_cast<double>(scored.size());
}

std::string read_file(const std::string& path) {
    std::ifstream in(path);
    REQUIRE(in);
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

} // namespace

TEST_CASE("criterion 1: exact posterior minimizes the sequential Brier score") {
    struct Setup {
        std::string name;
        Env env;
    };
    std::vector<Setup> setups;
    setups.push_back({"example1", build_example1()});
    for (std::uint64_t env_seed : {101ULL, 202ULL, 303ULL}) {
        GridworldConfig g;
        g.width = 5;
        g.height = 5;
        g.n_tasks = 1;
        g.slip_prob = 0.0;
        g.horizon = 7;
        g.seed = env_seed;
        g.epsilon = 0.25;
        g.policy_flaw_prob = 0.25;
        setups.push_back({"grid" + std::to_string(env_seed), build_gridworld(g)[0]});
    }

    bool minimal_everywhere = true;
    bool td0_close = true;
    bool in_time = true;
    for (Setup& s : setups) {
        auto t0 = std::chrono::steady_clock::now();
        const std::uint64_t base = std::hash<std::string>{}(s.name) & 0xFFFF;
        OracleTables oracle = exact_q(s.env, 1.0);
        Dataset train_d = simulate(s.env, 300, {1.0, false}, base + 1);
        Dataset val_d = simulate(s.env, 120, {1.0, false}, base + 2);
        Dataset eval_d = simulate(s.env, 800, {1.0, false}, base + 3);

        const bool weighted = mean_success_rate(train_d) < 1.0; // example1 is single-class
        const int dim = s.env.pomdp.n_obs;
        auto td0 = train_recurrent(train_d, &val_d, LossKind::td0, dim, base + 9, base + 5, 150,
                                    0.03, 0.0, weighted);
        auto bce = train_recurrent(train_d, &val_d, LossKind::bce, dim, base + 9, base + 5, 150,
                                   0.03, 0.0, weighted);

        std::map<std::string, std::vector<ScoredRollout>> methods;
        methods["oracle"] = oracle_scored(oracle, eval_d);
        methods["td0"] = score_with_predictor(*td0, eval_d);
        methods["bce"] = score_with_predictor(*bce, eval_d);
        methods["constant"] = score_constant(mean_success_rate(train_d), eval_d);
        for (StaticMethod m : {StaticMethod::max_prob, StaticMethod::avg_prob,
                               StaticMethod::running_avg_prob, StaticMethod::avg_entropy,
                               StaticMethod::running_avg_entropy})
            methods[static_method_name(m)] = score_with_static(m, eval_d);

        for (double q : default_quantile_grid()) {
            double oracle_brier = sequential_brier(methods.at("oracle"), q);
            for (const auto& [name, scored] : methods) {
                double brier = sequential_brier(scored, q);
                INFO(s.name, " q=", q, " method=", name, " brier=", brier,
                     " oracle=", oracle_brier);
                bool ok = oracle_brier <= brier + 1e-12;
                CHECK(ok);
                minimal_everywhere = minimal_everywhere && ok;
            }
        }

        double dev = 0.0;
        std::size_t n = 0;
        const auto& td0_scored = methods.at("td0");
        for (std::size_t i = 0; i < eval_d.size(); ++i) {
            std::vector<double> star = oracle_scores(oracle, eval_d.rollouts[i]);
            for (std::size_t t = 0; t < star.size(); ++t) {
                dev += std::abs(td0_scored[i].scores[t] - star[t]);
                ++n;
            }
        }
        dev /= static_cast<double>(n);
        INFO(s.name, " mean |f - f*| = ", dev);
        CHECK(dev < 0.1);
        td0_close = td0_close && dev < 0.1;

        double secs = elapsed_s(t0);
        CHECK(secs < 300.0);
        in_time = in_time && secs < 300.0;
        std::printf("  [c1] %s: mean|f-f*|=%.4f, %.1fs\n", s.name.c_str(), dev, secs);
    }
    report(1, "exact posterior attains the minimal Brier at every quantile; trained TD0 tracks it",
           minimal_everywhere && td0_close && in_time);
}

TEST_CASE("criterion 2: action probabilities alone stay uninformative on the two-step example") {
    Env env = build_example1();
    Dataset data = simulate(env, 100, {1.0, false}, 21);

    std::vector<ScoredRollout> static_scored = score_with_static(StaticMethod::max_prob, data);
    double static_brier = sequential_brier(static_scored, 1.0);
    CHECK(static_brier == doctest::Approx(0.25).epsilon(1e-9));

    auto f = make_predictor(PredictorKind::feedforward,
                            {.input_dim = env.pomdp.n_obs, .hidden = 8, .window = 1}, 12);
    TrainConfig tc;
    tc.loss = LossKind::td0;
    tc.lr = 0.05;
    tc.epochs = 500;
    tc.batch_rollouts = 100;
    tc.weight_decay = 0.0;
    tc.seed = 4;
    train(data, *f, tc);
    double td0_brier = sequential_brier(score_with_predictor(*f, data), 1.0);
    CHECK(td0_brier < 0.01);

    report(2, "two-step example: coin-flip static Brier 0.25 vs trained TD0 < 0.01 (got " +
                  std::to_string(td0_brier) + ")",
           std::abs(static_brier - 0.25) < 1e-9 && td0_brier < 0.01);
}

TEST_CASE("criterion 3: gradients match central finite differences") {
    double worst = 0.0;
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
        Rng rng(seed * 13);
        Rollout r = testing::make_rollout(rng, "t", 4, 3, static_cast<int>(seed % 2));
        for (PredictorKind kind : {PredictorKind::feedforward, PredictorKind::recurrent}) {
            auto f = make_predictor(kind, {.input_dim = 3, .hidden = 5, .window = 2}, seed);
            auto target = make_predictor(kind, {.input_dim = 3, .hidden = 5, .window = 2},
                                         seed + 1000);
            // displace the zero-initialized biases so no rectifier sits
            // exactly on its kink, where central differences are undefined
            for (double& v : f->theta) v += rng.uniform(0.05, 0.15);
            for (LossKind lk : {LossKind::td0, LossKind::td_lambda, LossKind::bce,
                                LossKind::mse_mc, LossKind::cumulative}) {
                TrainConfig cfg;
                cfg.loss = lk;
                cfg.lambda = 0.6;
                f->accumulate_mode = lk == LossKind::cumulative;
                ClassWeights w{1.1, 0.9};
                auto loss = [&](const Predictor& p) {
                    return rollout_loss(cfg, p, *target, r, w);
                };
                auto grad = [&](const Predictor& p, std::span<double> g) {
                    rollout_loss(cfg, p, *target, r, w, g);
                };
                worst = std::max(worst, testing::gradcheck(*f, loss, grad));
            }
        }
    }
    CHECK(worst < 1e-4);
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.3g", worst);
    report(3, std::string("max relative gradient error ") + buf + " < 1e-4 over 20 seeds",
           worst < 1e-4);
}

TEST_CASE("criterion 4: exact-mode decomposition identity") {
    Rng rng(99);
    double worst = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
        std::size_t n = 10 + rng.uniform_int(200);
        std::vector<double> scores(n);
        std::vector<int> labels(n);
        for (std::size_t i = 0; i < n; ++i) {
            // mixture of repeated and unique score values
            scores[i] = rng.uniform01() < 0.5 ? std::round(rng.uniform01() * 10.0) / 10.0
                                              : rng.uniform01();
            labels[i] = rng.uniform01() < 0.4 ? 1 : 0;
        }
        BrierDecomposition d = brier_decomposition_exact(scores, labels);
        worst = std::max(worst, std::abs(d.calibration + d.refinement - d.total));
    }
    CHECK(worst < 1e-12);
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.3g", worst);
    report(4, std::string("calibration + refinement = total to ") + buf + " on 100 random sets",
           worst < 1e-12);
}

TEST_CASE("criterion 5: conformal coverage and monitor false-positive rate") {
    auto t0 = std::chrono::steady_clock::now();
    GridworldConfig g;
    g.width = 5;
    g.height = 5;
    g.n_tasks = 1;
    g.slip_prob = 0.1;
    g.horizon = 12;
    g.seed = 515;
    g.epsilon = 0.25;
    g.policy_flaw_prob = 0.25;
    Env env = build_gridworld(g)[0];

    Dataset train_d = simulate(env, 200, {1.0, false}, 31);
    auto f = train_recurrent(train_d, nullptr, LossKind::td0, env.pomdp.n_obs, 7, 8, 80, 0.03,
                             0.0, true);

    // fresh exchangeable rollouts; keep only successes
    Dataset pool = simulate(env, 1800, {1.0, false}, 38);
    std::vector<std::vector<double>> success_scores;
    for (const Rollout& r : pool.rollouts) {
        if (r.label != 1) continue;
        std::vector<double> scores = f->forward_all(r);
        for (double& v : scores) v = 1.0 - v;
        success_scores.push_back(std::move(scores));
    }
    REQUIRE(success_scores.size() >= 700);
    std::vector<std::vector<double>> cal(success_scores.begin(), success_scores.begin() + 200);
    std::vector<std::vector<double>> heldout(success_scores.begin() + 200,
                                             success_scores.begin() + 700);

    bool all_ok = true;
    for (double alpha : {0.05, 0.1, 0.2}) {
        ConformalBand band = fit_band(cal, alpha, 77);
        double margin = 3.0 * std::sqrt(alpha * (1.0 - alpha) / 500.0);
        double coverage = coverage_eval(band, heldout);
        std::size_t flagged = 0;
        for (const auto& seq : heldout)
            if (early_stop_step(band, seq)) ++flagged;
        double fpr = static_cast<double>(flagged) / static_cast<double>(heldout.size());
        INFO("alpha=", alpha, " coverage=", coverage, " fpr=", fpr, " margin=", margin);
        CHECK(coverage >= 1.0 - alpha - margin);
        CHECK(fpr <= alpha + margin);
        all_ok = all_ok && coverage >= 1.0 - alpha - margin && fpr <= alpha + margin;
        std::printf("  [c5] alpha=%.2f coverage=%.3f fpr=%.3f (margin %.3f)\n", alpha, coverage,
                    fpr, margin);
    }
    double secs = elapsed_s(t0);
    CHECK(secs < 60.0);
    report(5, "coverage >= 1-alpha-3se and monitor FPR <= alpha+3se on 500 held-out successes",
           all_ok && secs < 60.0);
}

TEST_CASE("criterion 6: TD0 beats BCE on unseen tasks across 21 task splits") {
    GridworldConfig g;
    g.width = 5;
    g.height = 5;
    g.n_tasks = 10;
    g.slip_prob = 0.1;
    g.horizon = 12;
    g.seed = 71;
    g.epsilon = 0.25;
    g.policy_flaw_prob = 0.35;
    g.aliased = true;
    g.shared_goal = true; // controller variants of one objective
    std::vector<Env> envs = build_gridworld(g);

    Dataset all;
    for (std::size_t i = 0; i < envs.size(); ++i) {
        Dataset d = simulate(envs[i], 50, {1.0, false}, 1000 + i);
        for (Rollout& r : d.rollouts) all.add(std::move(r));
    }

    g_cells.emplace();
    auto add_cell = [&](const std::string& method, const std::string& split,
                        const std::vector<ScoredRollout>& scored) {
        try {
            double auc = roc_auc(fixed_cutoff_scores(scored));
            CellStats& c = (*g_cells)[{method, split}];
            c.brier_sum += brier_at_cutoff(scored);
            c.auc_sum += auc;
            c.n += 1;
        } catch (const Error&) {
            // single-class split for this seed; cell skipped
        }
    };

    int wins = 0;
    for (int seed = 1; seed <= 21; ++seed) {
        TaskSplit split = split_by_task(all, {static_cast<std::uint64_t>(seed), 2, 0.6});
        std::map<std::string, std::unique_ptr<Predictor>> models;
        // fixed budget, identical architecture and optimizer settings; only
        // the loss differs
        models["td0"] = train_recurrent(split.train, nullptr, LossKind::td0,
                                         envs[0].pomdp.n_obs, 900 + seed, 70 + seed, 150, 0.03,
                                         0.01, true);
        models["bce"] = train_recurrent(split.train, nullptr, LossKind::bce, envs[0].pomdp.n_obs,
                                        900 + seed, 70 + seed, 150, 0.03, 0.01, true);

        double unseen_brier[2];
        int li = 0;
        for (const char* name : {"td0", "bce"}) {
            std::vector<ScoredRollout> seen = score_with_predictor(*models[name], split.val_seen);
            std::vector<ScoredRollout> unseen =
                score_with_predictor(*models[name], split.val_unseen);
            add_cell(name, "seen", seen);
            add_cell(name, "unseen", unseen);
            unseen_brier[li++] = sequential_brier(unseen, 0.8);
        }
        for (StaticMethod m : {StaticMethod::max_prob, StaticMethod::avg_prob,
                               StaticMethod::running_avg_prob, StaticMethod::avg_entropy,
                               StaticMethod::running_avg_entropy}) {
            add_cell(static_method_name(m), "seen", score_with_static(m, split.val_seen));
            add_cell(static_method_name(m), "unseen", score_with_static(m, split.val_unseen));
        }

        bool win = unseen_brier[0] <= unseen_brier[1];
        wins += win;
        std::printf("  [c6] split seed %2d: td0 %.4f bce %.4f -> %s\n", seed, unseen_brier[0],
                    unseen_brier[1], win ? "td0" : "bce");
    }
    CHECK(wins >= 14);
    report(6, "TD0 unseen Brier@0.8 <= BCE in " + std::to_string(wins) + "/21 splits (need 14)",
           wins >= 14);
}

TEST_CASE("criterion 7: guided search lifts the success rate and the gate saves compute") {
    GridworldConfig g;
    g.width = 5;
    g.height = 5;
    g.n_tasks = 1;
    g.slip_prob = 0.0;
    g.horizon = 8;
    g.seed = 404;
    g.epsilon = 0.3;
    g.policy_flaw_prob = 0.3;
    Env env = build_gridworld(g)[0];
    OracleTables tables = exact_q(env, 1.0);
    SuccessScorer oracle = oracle_scorer(tables);

    std::vector<SearchConfig> grid;
    for (double thr : {-1.0, 0.35, 1.0}) {
        SearchConfig c;
        c.samples = 10;
        c.temperature = 1.5;
        c.threshold = thr;
        grid.push_back(c);
    }
    std::vector<SearchExperimentRow> rows =
        run_search_experiment(std::span(&env, 1), oracle, grid, 500, 1.0, 99);
    REQUIRE(rows.size() == 4);

    double pb = rows[0].success_rate;
    double ps = rows[1].success_rate;
    double se = std::sqrt(std::max(pb * (1.0 - pb), ps * (1.0 - ps)) / 500.0);
    CHECK(ps - pb >= 3.0 * se);

    bool strictly_decreasing = rows[1].mean_searched_steps > rows[2].mean_searched_steps &&
                               rows[2].mean_searched_steps > rows[3].mean_searched_steps;
    CHECK(strictly_decreasing);
    CHECK(rows[3].mean_searched_steps == 0.0);

    char buf[128];
    std::snprintf(buf, sizeof buf,
                  "success %.3f -> %.3f (3se %.3f); searched steps %.2f > %.2f > %.2f", pb, ps,
                  3.0 * se, rows[1].mean_searched_steps, rows[2].mean_searched_steps,
                  rows[3].mean_searched_steps);
    report(7, std::string("oracle-guided search: ") + buf,
           ps - pb >= 3.0 * se && strictly_decreasing);
}

TEST_CASE("criterion 8: Brier and ROC-AUC anticorrelate across method/split cells") {
    REQUIRE_MESSAGE(g_cells.has_value(), "criterion 6 must run first");
    std::vector<double> briers, aucs;
    for (const auto& [key, cell] : *g_cells) {
        if (cell.n == 0) continue;
        briers.push_back(cell.brier_sum / cell.n);
        aucs.push_back(cell.auc_sum / cell.n);
        std::printf("  [c8] %s/%s brier %.4f auc %.4f (n=%d)\n", key.first.c_str(),
                    key.second.c_str(), briers.back(), aucs.back(), cell.n);
    }
    REQUIRE(briers.size() >= 8);
    double rho = spearman(briers, aucs);
    CHECK(rho < 0.0);
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.3f", rho);
    report(8, std::string("Spearman(brier, auc) = ") + buf + " over " +
                  std::to_string(briers.size()) + " cells",
           rho < 0.0);
}

TEST_CASE("criterion 9: repeated CLI runs are byte-identical") {
    namespace fs = std::filesystem;
    std::string dir = testing::scratch_dir("acceptance_cli");
    std::string cfg_path = dir + "/run.cfg";
    std::ofstream(cfg_path) << "seed = 11\n"
                               "out_dir = " +
                                   dir +
                                   "\n"
                                   "env.kind = gridworld\n"
                                   "env.width = 4\n"
                                   "env.height = 4\n"
                                   "env.tasks = 4\n"
                                   "env.horizon = 7\n"
                                   "env.epsilon = 0.3\n"
                                   "env.flaw = 0.25\n"
                                   "env.rollouts_per_task = 25\n"
                                   "split.unseen_tasks = 1\n"
                                   "train.kind = feedforward\n"
                                   "train.hidden = 8\n"
                                   "train.epochs = 25\n"
                                   "train.lr = 0.05\n"
                                   "train.batch = 32\n"
                                   "band.alpha = 0.2\n"
                                   "band.alpha_grid = 0.1,0.3\n"
                                   "search.samples = 4\n"
                                   "search.episodes = 25\n"
                                   "search.thresholds = -1,1\n";

    const std::string cli = TDCAL_CLI_PATH;
    auto run_all = [&] {
        for (const char* cmd : {"gen", "train", "eval", "band", "stop-sim", "search", "export"}) {
            int rc = std::system((cli + " " + cmd + " --config " + cfg_path).c_str());
            REQUIRE(WEXITSTATUS(rc) == 0);
        }
    };
    run_all();
    std::map<std::string, std::string> first;
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (entry.path().filename() == "run.cfg") continue;
        first[entry.path().filename().string()] = read_file(entry.path().string());
    }
    REQUIRE(first.size() >= 14);
    run_all();
    bool identical = true;
    for (const auto& [name, body] : first) {
        std::string again = read_file(dir + "/" + name);
        INFO("file: ", name);
        CHECK(again == body);
        identical = identical && again == body;
    }
    report(9, "all " + std::to_string(first.size()) + " outputs byte-identical across reruns",
           identical);
}
