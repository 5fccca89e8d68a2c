#include "commands.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>

#include "calibrate.hpp"
#include "conformal.hpp"
#include "csv.hpp"
#include "envsim.hpp"
#include "metrics.hpp"
#include "rng.hpp"
#include "search.hpp"

namespace tdcal {

namespace fs = std::filesystem;

namespace {

std::uint64_t subseed(std::uint64_t seed, std::uint64_t salt) {
    return Rng::stream(seed, salt).next_u64();
}

std::string out_dir(const Config& cfg) {
    std::string dir = cfg.require_str("out_dir");
    if (!fs::is_directory(dir))
        throw config_error("output directory '" + dir + "' does not exist");
    return dir;
}

std::string resolve(const Config& cfg, const std::string& name) {
    fs::path p(name);
    if (p.is_absolute()) return name;
    return (fs::path(out_dir(cfg)) / p).string();
}

std::string meta_line(const Config& cfg) {
    return "config_hash=" + cfg.hash() + " seed=" + std::to_string(cfg.require_seed());
}

Dataset load_data(const Config& cfg, const std::string& key, const std::string& fallback) {
    return load_rollouts(resolve(cfg, cfg.get_str(key, fallback)));
}

bool data_present(const Config& cfg, const std::string& key, const std::string& fallback) {
    return fs::exists(resolve(cfg, cfg.get_str(key, fallback)));
}

} // namespace

std::vector<Env> envs_from_config(const Config& cfg) {
    std::string kind = cfg.require_str("env.kind");
    if (kind == "example1") {
        std::vector<Env> envs;
        envs.push_back(build_example1());
        return envs;
    }
    if (kind == "gridworld") {
        GridworldConfig g;
        g.width = static_cast<int>(cfg.get_int("env.width", g.width));
        g.height = static_cast<int>(cfg.get_int("env.height", g.height));
        g.n_tasks = static_cast<int>(cfg.get_int("env.tasks", g.n_tasks));
        g.slip_prob = cfg.get_double("env.slip", g.slip_prob);
        g.horizon = static_cast<int>(cfg.get_int("env.horizon", g.horizon));
        g.seed = subseed(cfg.require_seed(), 0xE17);
        g.epsilon = cfg.get_double("env.epsilon", g.epsilon);
        g.policy_flaw_prob = cfg.get_double("env.flaw", g.policy_flaw_prob);
        g.aliased = cfg.get_bool("env.aliased", g.aliased);
        g.random_start = cfg.get_bool("env.random_start", g.random_start);
        return build_gridworld(g);
    }
    throw config_error("unknown env.kind '" + kind + "'");
}

PredictorDims predictor_dims_from(const Config& cfg, int input_dim) {
    PredictorDims d;
    d.input_dim = input_dim;
    d.hidden = static_cast<int>(cfg.get_int("train.hidden", 32));
    d.window = static_cast<int>(cfg.get_int("train.window", 1));
    d.proj = static_cast<int>(cfg.get_int("train.proj", 0));
    return d;
}

TrainConfig train_config_from(const Config& cfg) {
    TrainConfig t;
    t.loss = loss_kind_from_name(cfg.get_str("train.loss", "td0"));
    t.lambda = cfg.get_double("train.lambda", t.lambda);
    t.lr = cfg.get_double("train.lr", t.lr);
    t.lr_step_size = static_cast<int>(cfg.get_int("train.lr_step", t.lr_step_size));
    t.lr_gamma = cfg.get_double("train.lr_gamma", t.lr_gamma);
    t.weight_decay = cfg.get_double("train.weight_decay", t.weight_decay);
    t.l2_reg = cfg.get_double("train.l2_reg", t.l2_reg);
    t.target_update_period = static_cast<int>(cfg.get_int("train.target_period", t.target_update_period));
    t.epochs = static_cast<int>(cfg.get_int("train.epochs", t.epochs));
    t.batch_rollouts = static_cast<int>(cfg.get_int("train.batch", t.batch_rollouts));
    t.seed = subseed(cfg.require_seed(), 0x7124);
    t.class_weighting = cfg.get_bool("train.class_weighting", false);
    return t;
}

std::vector<std::vector<double>> failure_sequences(const Predictor& f, const Dataset& d,
                                                   bool successes_only) {
    std::vector<std::vector<double>> out;
    for (const Rollout& r : d.rollouts) {
        if (successes_only && r.label != 1) continue;
        std::vector<double> scores = f.forward_all(r);
        for (double& s : scores) s = f.accumulate_mode ? 1.0 - uncertainty_to_success(s) : 1.0 - s;
        out.push_back(std::move(scores));
    }
    return out;
}

void cmd_gen(const Config& cfg) {
    const std::uint64_t seed = cfg.require_seed();
    const std::string dir = out_dir(cfg);
    std::vector<Env> envs = envs_from_config(cfg);

    SimulateOptions opt;
    opt.threshold = cfg.get_double("env.threshold", 1.0);
    opt.stop_when_labeled = cfg.get_bool("env.stop_at_success", false);
    const int n = static_cast<int>(cfg.get_int("env.rollouts_per_task", 50));

    Dataset all;
    for (std::size_t i = 0; i < envs.size(); ++i) {
        Dataset d = simulate(envs[i], n, opt, subseed(seed, 0x5111 + i));
        for (Rollout& r : d.rollouts) all.add(std::move(r));
    }
    save_rollouts(all, resolve(cfg, "rollouts.jsonl"));

    SplitSpec spec;
    spec.seed = seed;
    spec.unseen_task_count = static_cast<int>(cfg.get_int("split.unseen_tasks", 0));
    spec.train_fraction = cfg.get_double("split.train_fraction", 0.6);
    TaskSplit split = split_by_task(all, spec);

    save_rollouts(split.train, resolve(cfg, "train.jsonl"));
    if (!split.val_seen.rollouts.empty())
        save_rollouts(split.val_seen, resolve(cfg, "val_seen.jsonl"));
    if (!split.val_unseen.rollouts.empty())
        save_rollouts(split.val_unseen, resolve(cfg, "val_unseen.jsonl"));

    CsvWriter manifest(resolve(cfg, "split_manifest.csv"), meta_line(cfg));
    manifest.row({"task", "split", "train_rollouts", "val_rollouts"});
    auto count = [](const Dataset& d, const std::string& task) {
        std::size_t c = 0;
        for (const Rollout& r : d.rollouts) c += r.task_id == task;
        return c;
    };
    for (const std::string& task : all.task_ids) {
        bool unseen = split.val_unseen.task_ids.count(task) != 0;
        manifest.row({task, unseen ? "unseen" : "seen",
                      std::to_string(unseen ? 0 : count(split.train, task)),
                      std::to_string(unseen ? count(split.val_unseen, task)
                                            : count(split.val_seen, task))});
    }
    manifest.close();
}

void cmd_train(const Config& cfg) {
    const std::string dir = out_dir(cfg);
    Dataset train_data = load_data(cfg, "data.train", "train.jsonl");

    Dataset val_data;
    const Dataset* val = nullptr;
    if (data_present(cfg, "data.val", "val_seen.jsonl")) {
        val_data = load_data(cfg, "data.val", "val_seen.jsonl");
        val = &val_data;
    }

    const int input_dim = static_cast<int>(train_data.rollouts.front().steps.front().features.size());
    std::string kind_name = cfg.get_str("train.kind", "recurrent");
    PredictorKind kind;
    if (kind_name == "recurrent")
        kind = PredictorKind::recurrent;
    else if (kind_name == "feedforward")
        kind = PredictorKind::feedforward;
    else
        throw config_error("unknown train.kind '" + kind_name + "'");

    std::unique_ptr<Predictor> f =
        make_predictor(kind, predictor_dims_from(cfg, input_dim), subseed(cfg.require_seed(), 0x141));
    f->accumulate_mode = cfg.get_bool("train.accumulate", false);

    TrainConfig tc = train_config_from(cfg);
    if (tc.loss == LossKind::cumulative && !f->accumulate_mode)
        throw config_error("train.loss = cumulative requires train.accumulate = true");
    TrainLog log = train(train_data, *f, tc, val);

    save_predictor(*f, resolve(cfg, cfg.get_str("train.predictor_out", "predictor.json")));
    CsvWriter csv(resolve(cfg, "training_log.csv"), meta_line(cfg));
    csv.row({"epoch", "train_loss", "val_brier", "lr"});
    for (const EpochLog& e : log.epochs)
        csv.row({std::to_string(e.epoch), csv_num(e.train_loss), csv_num(e.val_brier),
                 csv_num(e.lr)});
    csv.close();
}

namespace {

struct EvalCell {
    std::string method;
    std::string split;
    std::vector<ScoredRollout> scored;
};

void write_eval_rows(CsvWriter& csv, const EvalCell& cell, std::span<const double> quantiles,
                     int bins) {
    double auc = std::numeric_limits<double>::quiet_NaN();
    try {
        auc = roc_auc(fixed_cutoff_scores(cell.scored));
    } catch (const Error&) {
        // single-class split; ranking undefined
    }
    auto emit = [&](const std::string& qlabel, const std::vector<double>& scores,
                    const std::vector<int>& labels) {
        double brier = 0.0;
        for (std::size_t i = 0; i < scores.size(); ++i) {
            double d = scores[i] - labels[i];
            brier += d * d;
        }
        brier /= static_cast<double>(scores.size());
        BrierDecomposition dec = brier_decomposition(scores, labels, bins);
        double e = ece(scores, labels, bins);
        csv.row({cell.method, cell.split, qlabel, csv_num(brier), csv_num(dec.calibration),
                 csv_num(dec.refinement), csv_num(e), csv_num(auc)});
    };

    for (double q : quantiles) {
        std::vector<double> scores;
        std::vector<int> labels;
        for (const ScoredRollout& s : cell.scored) {
            scores.push_back(s.scores[time_quantile_index(s.horizon(), q) - 1]);
            labels.push_back(s.label);
        }
        emit(csv_num(q), scores, labels);
    }
    // per-task minimum-length cutoff, the length-leakage-free time point
    std::map<std::string, int> cutoff;
    for (const ScoredRollout& s : cell.scored) {
        auto [it, fresh] = cutoff.emplace(s.task_id, s.horizon());
        if (!fresh) it->second = std::min(it->second, s.horizon());
    }
    std::vector<double> scores;
    std::vector<int> labels;
    for (const ScoredRollout& s : cell.scored) {
        scores.push_back(s.scores[cutoff.at(s.task_id) - 1]);
        labels.push_back(s.label);
    }
    emit("cutoff", scores, labels);
}

} // namespace

void cmd_eval(const Config& cfg) {
    const std::string dir = out_dir(cfg);
    std::vector<std::string> methods = cfg.get_str_list(
        "eval.methods", {"learned", "max_prob", "avg_prob", "running_avg_prob", "avg_entropy",
                         "running_avg_entropy", "constant"});
    if (methods.empty()) throw config_error("eval.methods is empty");
    std::vector<double> quantiles =
        cfg.get_double_list("eval.quantiles", {0.0, 0.2, 0.4, 0.6, 0.8});
    const int bins = static_cast<int>(cfg.get_int("eval.bins", 10));

    std::vector<std::pair<std::string, Dataset>> splits;
    if (data_present(cfg, "data.val_seen", "val_seen.jsonl"))
        splits.emplace_back("seen", load_data(cfg, "data.val_seen", "val_seen.jsonl"));
    if (data_present(cfg, "data.val_unseen", "val_unseen.jsonl"))
        splits.emplace_back("unseen", load_data(cfg, "data.val_unseen", "val_unseen.jsonl"));
    if (splits.empty()) throw data_error("cmd_eval: no evaluation split files found");

    std::unique_ptr<Predictor> learned;
    if (std::find(methods.begin(), methods.end(), "learned") != methods.end())
        learned = load_predictor(resolve(cfg, cfg.get_str("eval.predictor", "predictor.json")));

    double constant_p = 0.0;
    if (std::find(methods.begin(), methods.end(), "constant") != methods.end())
        constant_p = mean_success_rate(load_data(cfg, "data.train", "train.jsonl"));

    std::map<std::string, OracleTables> oracles;
    if (std::find(methods.begin(), methods.end(), "oracle") != methods.end()) {
        double threshold = cfg.get_double("env.threshold", 1.0);
        std::size_t budget =
            static_cast<std::size_t>(cfg.get_int("env.oracle_budget", 1000000));
        for (Env& env : envs_from_config(cfg))
            oracles.emplace(env.pomdp.name, exact_q(env, threshold, budget));
    }

    CsvWriter csv(resolve(cfg, "metrics.csv"), meta_line(cfg) + " bins=" + std::to_string(bins));
    csv.row({"method", "split", "quantile", "brier", "calibration", "refinement", "ece", "auc"});
    for (const std::string& method : methods) {
        for (const auto& [split_name, data] : splits) {
            EvalCell cell;
            cell.method = method;
            cell.split = split_name;
            if (method == "learned") {
                cell.scored = score_with_predictor(*learned, data);
            } else if (method == "constant") {
                cell.scored = score_constant(constant_p, data);
            } else if (method == "oracle") {
                for (const Rollout& r : data.rollouts) {
                    auto it = oracles.find(r.task_id);
                    if (it == oracles.end())
                        throw data_error("no oracle for task '" + r.task_id + "'");
                    cell.scored.push_back({r.task_id, oracle_scores(it->second, r), r.label});
                }
            } else {
                cell.scored = score_with_static(static_method_from_name(method), data);
            }
            write_eval_rows(csv, cell, quantiles, bins);
        }
    }
    csv.close();
}

void cmd_band(const Config& cfg) {
    const std::string dir = out_dir(cfg);
    const double alpha = cfg.get_double("band.alpha", 0.1);
    if (!(alpha > 0.0 && alpha < 1.0)) throw config_error("band.alpha must lie in (0,1)");

    std::unique_ptr<Predictor> f =
        load_predictor(resolve(cfg, cfg.get_str("band.predictor", "predictor.json")));
    Dataset cal = load_data(cfg, "band.dataset", "val_seen.jsonl");
    std::vector<std::vector<double>> cal_scores = failure_sequences(*f, cal, true);
    if (cal_scores.size() < 4)
        throw data_error("cmd_band: need at least 4 successful calibration rollouts, got " +
                         std::to_string(cal_scores.size()));

    const std::uint64_t split_seed = subseed(cfg.require_seed(), 0xCAB);
    ConformalBand band = fit_band(cal_scores, alpha, split_seed);
    save_band(band, resolve(cfg, "band.csv"), meta_line(cfg));

    if (!data_present(cfg, "band.heldout", "val_unseen.jsonl")) return;
    Dataset heldout = load_data(cfg, "band.heldout", "val_unseen.jsonl");

    std::vector<std::vector<double>> heldout_success = failure_sequences(*f, heldout, true);
    if (!heldout_success.empty()) {
        CsvWriter csv(resolve(cfg, "coverage.csv"), meta_line(cfg));
        csv.row({"alpha", "coverage", "n_success"});
        csv.row({csv_num(alpha), csv_num(coverage_eval(band, heldout_success)),
                 std::to_string(heldout_success.size())});
        csv.close();
    }

    if (cfg.has("band.alpha_grid")) {
        std::vector<double> grid = cfg.get_double_list("band.alpha_grid", {});
        std::vector<std::vector<double>> test_scores = failure_sequences(*f, heldout, false);
        std::vector<int> labels;
        for (const Rollout& r : heldout.rollouts) labels.push_back(r.label);
        std::vector<TprFprPoint> sweep =
            tpr_fpr_sweep(cal_scores, test_scores, labels, grid, split_seed);
        CsvWriter csv(resolve(cfg, "alpha_sweep.csv"), meta_line(cfg));
        csv.row({"alpha", "tpr", "fpr"});
        for (const TprFprPoint& p : sweep)
            csv.row({csv_num(p.alpha), csv_num(p.tpr), csv_num(p.fpr)});
        csv.close();
    }
}

void cmd_stopsim(const Config& cfg) {
    const std::string dir = out_dir(cfg);
    ConformalBand band = load_band(resolve(cfg, cfg.get_str("band.file", "band.csv")));
    std::unique_ptr<Predictor> f =
        load_predictor(resolve(cfg, cfg.get_str("band.predictor", "predictor.json")));
    Dataset test = load_data(cfg, "data.test", "val_unseen.jsonl");

    CsvWriter decisions(resolve(cfg, "stop_decisions.csv"), meta_line(cfg));
    decisions.row({"rollout", "task", "label", "flagged", "stop_step"});
    std::size_t n_fail = 0, n_succ = 0, flagged_fail = 0, flagged_succ = 0;
    for (std::size_t i = 0; i < test.rollouts.size(); ++i) {
        const Rollout& r = test.rollouts[i];
        std::vector<double> scores = f->forward_all(r);
        for (double& s : scores)
            s = f->accumulate_mode ? 1.0 - uncertainty_to_success(s) : 1.0 - s;
        std::optional<int> stop = early_stop_step(band, scores);
        (r.label == 0 ? n_fail : n_succ) += 1;
        if (stop) (r.label == 0 ? flagged_fail : flagged_succ) += 1;
        decisions.row({std::to_string(i), r.task_id, std::to_string(r.label),
                       stop ? "1" : "0", stop ? std::to_string(*stop) : ""});
    }
    decisions.close();

    CsvWriter summary(resolve(cfg, "stop_summary.csv"), meta_line(cfg));
    summary.row({"alpha", "n_fail", "n_success", "tpr", "fpr", "coverage"});
    double tpr = n_fail ? static_cast<double>(flagged_fail) / n_fail
                        : std::numeric_limits<double>::quiet_NaN();
    double fpr = n_succ ? static_cast<double>(flagged_succ) / n_succ
                        : std::numeric_limits<double>::quiet_NaN();
    summary.row({csv_num(band.alpha), std::to_string(n_fail), std::to_string(n_succ),
                 csv_num(tpr), csv_num(fpr), csv_num(1.0 - fpr)});
    summary.close();
}

void cmd_search(const Config& cfg) {
    const std::string dir = out_dir(cfg);
    const std::uint64_t seed = cfg.require_seed();
    const double threshold = cfg.get_double("env.threshold", 1.0);
    std::vector<Env> envs = envs_from_config(cfg);

    std::vector<SearchConfig> grid;
    for (double m : cfg.get_double_list("search.samples", {10}))
        for (double tau : cfg.get_double_list("search.temperatures", {1.5}))
            for (double thr : cfg.get_double_list("search.thresholds", {-1.0})) {
                SearchConfig sc;
                sc.samples = static_cast<int>(m);
                sc.temperature = tau;
                sc.threshold = thr;
                grid.push_back(sc);
            }
    const int episodes = static_cast<int>(cfg.get_int("search.episodes", 200));

    std::unique_ptr<Predictor> learned;
    std::string scorer_kind = cfg.get_str("search.scorer", "oracle");
    if (scorer_kind == "predictor")
        learned = load_predictor(resolve(cfg, cfg.get_str("search.predictor", "predictor.json")));
    else if (scorer_kind != "oracle")
        throw config_error("unknown search.scorer '" + scorer_kind + "'");

    CsvWriter csv(resolve(cfg, "search_results.csv"), meta_line(cfg));
    csv.row({"task", "mode", "samples", "temperature", "threshold", "success_rate", "mean_len",
             "search_steps", "episodes"});
    for (std::size_t e = 0; e < envs.size(); ++e) {
        OracleTables tables;
        SuccessScorer scorer;
        if (scorer_kind == "oracle") {
            tables = exact_q(envs[e], threshold,
                             static_cast<std::size_t>(cfg.get_int("env.oracle_budget", 1000000)));
            scorer = oracle_scorer(tables);
        } else {
            scorer = predictor_scorer(*learned, envs[e].pomdp.n_obs);
        }
        std::vector<SearchExperimentRow> rows = run_search_experiment(
            std::span(&envs[e], 1), scorer, grid, episodes, threshold, subseed(seed, 0x5EA + e));
        for (const SearchExperimentRow& r : rows)
            csv.row({r.task, r.mode, std::to_string(r.samples), csv_num(r.temperature),
                     csv_num(r.threshold), csv_num(r.success_rate), csv_num(r.mean_length),
                     csv_num(r.mean_searched_steps), std::to_string(r.episodes)});
    }
    csv.close();
}

namespace {

struct MetricsRow {
    std::string method;
    std::string split;
    std::string quantile;
    double brier = 0.0;
    double auc = 0.0;
};

std::vector<MetricsRow> read_metrics_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw io_error("cannot open '" + path + "' for reading");
    std::vector<MetricsRow> rows;
    std::string line;
    bool header_seen = false;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        std::vector<std::string> cells;
        std::stringstream ss(line);
        std::string tok;
        while (std::getline(ss, tok, ',')) cells.push_back(tok);
        if (!header_seen) {
            if (cells.size() < 8 || cells[0] != "method")
                throw data_error(path + ": unexpected metrics header");
            header_seen = true;
            continue;
        }
        if (cells.size() < 8) throw data_error(path + ": short metrics row");
        MetricsRow r;
        r.method = cells[0];
        r.split = cells[1];
        r.quantile = cells[2];
        r.brier = std::strtod(cells[3].c_str(), nullptr);
        r.auc = std::strtod(cells[7].c_str(), nullptr);
        rows.push_back(std::move(r));
    }
    if (rows.empty()) throw data_error(path + ": no metric rows");
    return rows;
}

} // namespace

void cmd_export(const Config& cfg) {
    const std::string dir = out_dir(cfg);
    std::vector<std::string> inputs = cfg.get_str_list("export.inputs", {"metrics.csv"});

    std::vector<MetricsRow> rows;
    for (const std::string& input : inputs) {
        std::vector<MetricsRow> part = read_metrics_csv(resolve(cfg, input));
        rows.insert(rows.end(), part.begin(), part.end());
    }

    struct Acc {
        double sum = 0.0, sumsq = 0.0;
        int n = 0;
        void add(double v) {
            sum += v;
            sumsq += v * v;
            ++n;
        }
        double mean() const { return sum / n; }
        double se() const {
            if (n < 2) return 0.0;
            double var = (sumsq - sum * sum / n) / (n - 1);
            return std::sqrt(std::max(var, 0.0) / n);
        }
    };

    std::map<std::tuple<std::string, std::string, std::string>, Acc> by_quantile;
    std::map<std::pair<std::string, std::string>, std::pair<Acc, Acc>> by_cell; // brier, auc
    for (const MetricsRow& r : rows) {
        by_quantile[{r.method, r.split, r.quantile}].add(r.brier);
        if (r.quantile == "cutoff" && std::isfinite(r.auc)) {
            auto& cell = by_cell[{r.method, r.split}];
            cell.first.add(r.brier);
            cell.second.add(r.auc);
        }
    }

    CsvWriter quant(resolve(cfg, "plot_brier_by_quantile.csv"), meta_line(cfg));
    quant.row({"method", "split", "quantile", "brier_mean", "brier_se", "n"});
    for (const auto& [key, acc] : by_quantile)
        quant.row({std::get<0>(key), std::get<1>(key), std::get<2>(key), csv_num(acc.mean()),
                   csv_num(acc.se()), std::to_string(acc.n)});
    quant.close();

    std::vector<double> briers, aucs;
    for (const auto& [key, cell] : by_cell) {
        briers.push_back(cell.first.mean());
        aucs.push_back(cell.second.mean());
    }
    std::string spearman_note;
    if (briers.size() >= 2) {
        try {
            spearman_note = " spearman_brier_auc=" + csv_num(spearman(briers, aucs));
        } catch (const Error&) {
            spearman_note = " spearman_brier_auc=nan";
        }
    }
    CsvWriter cells(resolve(cfg, "plot_brier_vs_auc.csv"), meta_line(cfg) + spearman_note);
    cells.row({"method", "split", "brier_cutoff_mean", "auc_mean", "n"});
    for (const auto& [key, cell] : by_cell)
        cells.row({key.first, key.second, csv_num(cell.first.mean()),
                   csv_num(cell.second.mean()), std::to_string(cell.first.n)});
    cells.close();
}

void run_command(const std::string& command, const Config& cfg) {
    if (command == "gen") return cmd_gen(cfg);
    if (command == "train") return cmd_train(cfg);
    if (command == "eval") return cmd_eval(cfg);
    if (command == "band") return cmd_band(cfg);
    if (command == "stop-sim") return cmd_stopsim(cfg);
    if (command == "search") return cmd_search(cfg);
    if (command == "export") return cmd_export(cfg);
    throw config_error("unknown command '" + command + "'");
}

} // namespace tdcal
