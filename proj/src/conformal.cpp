#include "conformal.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>

#include "rng.hpp"

namespace tdcal {

namespace {

constexpr double kModulationFloor = 1e-8;

// kth order statistic with k = ceil((n+1)(1-alpha)), clamped to n
double finite_sample_quantile(std::vector<double> values, double alpha) {
    const std::size_t n = values.size();
    std::size_t k = static_cast<std::size_t>(
        std::ceil((static_cast<double>(n) + 1.0) * (1.0 - alpha)));
    k = std::clamp<std::size_t>(k, 1, n);
    std::sort(values.begin(), values.end());
    return values[k - 1];
}

std::vector<std::vector<double>> pad_to_horizon(const std::vector<std::vector<double>>& seqs) {
    std::size_t horizon = 0;
    for (const auto& s : seqs) {
        if (s.empty()) throw invalid_argument_error("fit_band: empty score sequence");
        horizon = std::max(horizon, s.size());
    }
    std::vector<std::vector<double>> out = seqs;
    for (auto& s : out) s.resize(horizon, s.back());
    return out;
}

} // namespace

double ConformalBand::threshold_at(int t) const {
    if (t < 1) throw invalid_argument_error("band: step index must be >= 1");
    if (delta.empty()) throw invalid_argument_error("band: not fitted");
    return delta[std::min<std::size_t>(static_cast<std::size_t>(t), delta.size()) - 1];
}

ConformalBand fit_band_presplit(const std::vector<std::vector<double>>& cal_a_in,
                                const std::vector<std::vector<double>>& cal_b_in, double alpha) {
    if (!(alpha > 0.0 && alpha < 1.0))
        throw config_error("fit_band: alpha must lie in (0,1)");
    if (cal_a_in.size() < 2 || cal_b_in.size() < 2)
        throw data_error("fit_band: each calibration half needs at least 2 sequences");

    std::vector<std::vector<double>> all = cal_a_in;
    all.insert(all.end(), cal_b_in.begin(), cal_b_in.end());
    all = pad_to_horizon(all);
    const std::size_t n1 = cal_a_in.size();
    const std::size_t horizon = all[0].size();
    std::vector<std::vector<double>> cal_a(all.begin(), all.begin() + n1);
    std::vector<std::vector<double>> cal_b(all.begin() + n1, all.end());
    const std::size_t n2 = cal_b.size();

    ConformalBand band;
    band.alpha = alpha;
    band.n_cal_a = static_cast<int>(n1);
    band.n_cal_b = static_cast<int>(n2);

    band.mu.assign(horizon, 0.0);
    for (const auto& s : cal_a)
        for (std::size_t t = 0; t < horizon; ++t) band.mu[t] += s[t];
    for (double& m : band.mu) m /= static_cast<double>(n1);

    // trim the most deviant modulation sequences unless the quantile rule
    // keeps everything
    std::vector<double> max_dev(n1, 0.0);
    for (std::size_t k = 0; k < n1; ++k)
        for (std::size_t t = 0; t < horizon; ++t)
            max_dev[k] = std::max(max_dev[k], std::abs(cal_a[k][t] - band.mu[t]));
    bool keep_all = (static_cast<double>(n1) + 1.0) * (1.0 - alpha) > static_cast<double>(n1);
    double gamma = keep_all ? std::numeric_limits<double>::infinity()
                            : finite_sample_quantile(max_dev, alpha);

    band.modulation.assign(horizon, kModulationFloor);
    for (std::size_t k = 0; k < n1; ++k) {
        if (!keep_all && max_dev[k] > gamma) continue;
        for (std::size_t t = 0; t < horizon; ++t)
            band.modulation[t] =
                std::max(band.modulation[t], std::abs(cal_a[k][t] - band.mu[t]));
    }

    // upper deviations of the held-out half, in modulation units
    std::vector<double> dev(n2);
    for (std::size_t j = 0; j < n2; ++j) {
        double worst = -std::numeric_limits<double>::infinity();
        for (std::size_t t = 0; t < horizon; ++t)
            worst = std::max(worst, (cal_b[j][t] - band.mu[t]) / band.modulation[t]);
        dev[j] = worst;
    }
    band.scale = finite_sample_quantile(dev, alpha);

    band.delta.assign(horizon, 0.0);
    for (std::size_t t = 0; t < horizon; ++t)
        band.delta[t] = band.mu[t] + band.scale * band.modulation[t];
    return band;
}

ConformalBand fit_band(const std::vector<std::vector<double>>& failure_scores, double alpha,
                       std::uint64_t split_seed) {
    if (failure_scores.size() < 4)
        throw data_error("fit_band: need at least 4 calibration sequences, got " +
                         std::to_string(failure_scores.size()));
    std::vector<std::size_t> order(failure_scores.size());
    std::iota(order.begin(), order.end(), 0);
    Rng rng(split_seed);
    rng.shuffle(order);
    const std::size_t n1 = (order.size() + 1) / 2;
    std::vector<std::vector<double>> cal_a, cal_b;
    for (std::size_t i = 0; i < order.size(); ++i)
        (i < n1 ? cal_a : cal_b).push_back(failure_scores[order[i]]);
    ConformalBand band = fit_band_presplit(cal_a, cal_b, alpha);
    band.split_seed = split_seed;
    return band;
}

std::optional<int> early_stop_step(const ConformalBand& band,
                                   std::span<const double> failure_scores) {
    StopMonitor monitor(band);
    for (double s : failure_scores)
        if (auto hit = monitor.observe(s)) return hit;
    return std::nullopt;
}

double coverage_eval(const ConformalBand& band,
                     const std::vector<std::vector<double>>& failure_scores) {
    if (failure_scores.empty()) throw invalid_argument_error("coverage_eval: no sequences");
    std::size_t covered = 0;
    for (const auto& seq : failure_scores)
        if (!early_stop_step(band, seq)) ++covered;
    return static_cast<double>(covered) / static_cast<double>(failure_scores.size());
}

std::vector<TprFprPoint> tpr_fpr_sweep(const std::vector<std::vector<double>>& cal_success_scores,
                                       const std::vector<std::vector<double>>& test_scores,
                                       std::span<const int> test_labels,
                                       std::span<const double> alpha_grid,
                                       std::uint64_t split_seed) {
    if (test_scores.size() != test_labels.size())
        throw invalid_argument_error("tpr_fpr_sweep: test size mismatch");
    std::size_t n_fail = 0, n_succ = 0;
    for (int y : test_labels) (y == 0 ? n_fail : n_succ) += 1;
    if (n_fail == 0 || n_succ == 0)
        throw data_error("tpr_fpr_sweep: test set needs both labels");

    std::vector<TprFprPoint> out;
    for (double alpha : alpha_grid) {
        ConformalBand band = fit_band(cal_success_scores, alpha, split_seed);
        std::size_t flagged_fail = 0, flagged_succ = 0;
        for (std::size_t i = 0; i < test_scores.size(); ++i) {
            bool flagged = early_stop_step(band, test_scores[i]).has_value();
            if (flagged) (test_labels[i] == 0 ? flagged_fail : flagged_succ) += 1;
        }
        out.push_back({alpha, static_cast<double>(flagged_fail) / static_cast<double>(n_fail),
                       static_cast<double>(flagged_succ) / static_cast<double>(n_succ)});
    }
    return out;
}

void save_band(const ConformalBand& band, const std::string& path, const std::string& meta) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw io_error("cannot open '" + path + "' for writing");
    char buf[160];
    std::snprintf(buf, sizeof buf, "# alpha=%.17g h=%.17g n1=%d n2=%d seed=%llu", band.alpha,
                  band.scale, band.n_cal_a, band.n_cal_b,
                  static_cast<unsigned long long>(band.split_seed));
    out << buf;
    if (!meta.empty()) out << ' ' << meta;
    out << "\nt,mu,s,delta\n";
    for (int t = 1; t <= band.horizon(); ++t) {
        std::snprintf(buf, sizeof buf, "%d,%.17g,%.17g,%.17g\n", t, band.mu[t - 1],
                      band.modulation[t - 1], band.delta[t - 1]);
        out << buf;
    }
    if (!out) throw io_error("write failed for '" + path + "'");
}

ConformalBand load_band(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw io_error("cannot open '" + path + "' for reading");
    ConformalBand band;
    std::string line;
    if (!std::getline(in, line) || line.rfind("# alpha=", 0) != 0)
        throw data_error(path + ": missing band metadata line");
    {
        unsigned long long seed = 0;
        if (std::sscanf(line.c_str(), "# alpha=%lg h=%lg n1=%d n2=%d seed=%llu", &band.alpha,
                        &band.scale, &band.n_cal_a, &band.n_cal_b, &seed) != 5)
            throw data_error(path + ": malformed band metadata line");
        band.split_seed = seed;
    }
    if (!std::getline(in, line) || line != "t,mu,s,delta")
        throw data_error(path + ": missing band header row");
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        int t = 0;
        double mu = 0.0, s = 0.0, delta = 0.0;
        if (std::sscanf(line.c_str(), "%d,%lg,%lg,%lg", &t, &mu, &s, &delta) != 4)
            throw data_error(path + ": malformed band row '" + line + "'");
        band.mu.push_back(mu);
        band.modulation.push_back(s);
        band.delta.push_back(delta);
    }
    if (band.delta.empty()) throw data_error(path + ": band has no rows");
    return band;
}

} // namespace tdcal
