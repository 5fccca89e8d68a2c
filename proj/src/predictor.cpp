#include "predictor.hpp"

#include <cmath>
#include <fstream>

#include "json.hpp"

#include "rng.hpp"

namespace tdcal {

using nlohmann::json;

namespace {

constexpr int kFileVersion = 1;

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// y = W x + b, W row-major (rows x cols)
void affine(std::span<const double> w, std::span<const double> b, std::span<const double> x,
            std::span<double> y) {
    const std::size_t rows = y.size(), cols = x.size();
    for (std::size_t i = 0; i < rows; ++i) {
        double acc = b[i];
        const double* row = w.data() + i * cols;
        for (std::size_t j = 0; j < cols; ++j) acc += row[j] * x[j];
        y[i] = acc;
    }
}

// grads of y = W x + b given dy; accumulates dW, db (when non-empty, for
// pre-activations fed by two affines) and optionally dx
void affine_backward(std::span<const double> w, std::span<const double> x,
                     std::span<const double> dy, std::span<double> dw, std::span<double> db,
                     double* dx, std::size_t cols) {
    const std::size_t rows = dy.size();
    for (std::size_t i = 0; i < rows; ++i) {
        double g = dy[i];
        if (!db.empty()) db[i] += g;
        double* dwrow = dw.data() + i * cols;
        const double* wrow = w.data() + i * cols;
        for (std::size_t j = 0; j < cols; ++j) {
            dwrow[j] += g * x[j];
            if (dx) dx[j] += g * wrow[j];
        }
    }
}

void glorot_fill(std::span<double> w, int fan_in, int fan_out, Rng& rng) {
    double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    for (double& v : w) v = rng.uniform(-bound, bound);
}

} // namespace

const char* predictor_kind_name(PredictorKind k) {
    return k == PredictorKind::feedforward ? "feedforward" : "recurrent";
}

double Predictor::forward(const Rollout& r, int t) const {
    if (t < 1 || t > r.length())
        throw invalid_argument_error("forward: step index out of range");
    return forward_all(r)[static_cast<std::size_t>(t) - 1];
}

std::vector<double> Predictor::per_step_dscore(std::span<const double> dscore) const {
    std::vector<double> d(dscore.begin(), dscore.end());
    if (accumulate_mode) {
        // score_t = sum_{j<=t} out_j, so d(out_j) = sum_{t>=j} dscore_t
        for (std::size_t j = d.size(); j-- > 1;) d[j - 1] += d[j];
    }
    return d;
}

// ---------------------------------------------------------------------------
// Feedforward: window of step features -> hidden -> hidden -> 1, relu inside,
// logistic output. The window is zero-padded on the left at episode start.

class FeedforwardPredictor final : public Predictor {
    template <typename Vec>
    auto views(Vec& v) const {
        auto* p = v.data();
        std::span w1(p, static_cast<std::size_t>(h_) * in_);
        p += w1.size();
        std::span b1(p, static_cast<std::size_t>(h_));
        p += h_;
        std::span w2(p, static_cast<std::size_t>(h_) * h_);
        p += w2.size();
        std::span b2(p, static_cast<std::size_t>(h_));
        p += h_;
        std::span w3(p, static_cast<std::size_t>(h_));
        p += h_;
        std::span b3(p, std::size_t(1));
        return std::tuple(w1, b1, w2, b2, w3, b3);
    }

public:
    FeedforwardPredictor(const PredictorDims& dims) : dims_(dims) {
        if (dims.input_dim < 1 || dims.hidden < 1 || dims.window < 1)
            throw invalid_argument_error("feedforward: dims must be positive");
        in_ = dims.input_dim * dims.window;
        h_ = dims.hidden;
        theta.assign(param_count_for(in_, h_), 0.0);
    }

    static std::size_t param_count_for(int in, int h) {
        return static_cast<std::size_t>(h) * in + h + static_cast<std::size_t>(h) * h + h + h + 1;
    }

    PredictorKind kind() const override { return PredictorKind::feedforward; }
    const PredictorDims& dims() const override { return dims_; }

    std::unique_ptr<Predictor> clone() const override {
        auto p = std::make_unique<FeedforwardPredictor>(dims_);
        p->theta = theta;
        p->accumulate_mode = accumulate_mode;
        return p;
    }

    void init(std::uint64_t seed) {
        Rng rng(seed);
        auto [w1, b1, w2, b2, w3, b3] = views(theta);
        glorot_fill(w1, in_, h_, rng);
        glorot_fill(w2, h_, h_, rng);
        glorot_fill(w3, h_, 1, rng);
        (void)b1;
        (void)b2;
        (void)b3;
    }

    std::vector<double> forward_all(const Rollout& r) const override {
        check_input(r);
        std::vector<double> out(r.steps.size());
        std::vector<double> x(in_), z1(h_), z2(h_);
        double acc = 0.0;
        for (int t = 1; t <= r.length(); ++t) {
            gather_window(r, t, x);
            double o = step_forward(x, z1, z2);
            acc += o;
            out[t - 1] = accumulate_mode ? acc : o;
        }
        return out;
    }

    void add_gradient(const Rollout& r, std::span<const double> dscore,
                      std::span<double> grad) const override {
        check_input(r);
        if (dscore.size() != r.steps.size() || grad.size() != theta.size())
            throw invalid_argument_error("add_gradient: size mismatch");
        std::vector<double> d = per_step_dscore(dscore);
        auto [w1, b1, w2, b2, w3, b3] = views(const_cast<std::vector<double>&>(theta));
        auto [dw1, db1, dw2, db2, dw3, db3] = views(grad);

        std::vector<double> x(in_), a1(h_), z1(h_), a2(h_), z2(h_);
        std::vector<double> dz2(h_), da2(h_), dz1(h_), da1(h_);
        for (int t = 1; t <= r.length(); ++t) {
            if (d[t - 1] == 0.0) continue;
            gather_window(r, t, x);
            affine(w1, b1, x, a1);
            for (int i = 0; i < h_; ++i) z1[i] = a1[i] > 0.0 ? a1[i] : 0.0;
            affine(w2, b2, z1, a2);
            for (int i = 0; i < h_; ++i) z2[i] = a2[i] > 0.0 ? a2[i] : 0.0;
            double pre = b3[0];
            for (int i = 0; i < h_; ++i) pre += w3[i] * z2[i];
            double out = sigmoid(pre);

            double dpre = d[t - 1] * out * (1.0 - out);
            db3[0] += dpre;
            for (int i = 0; i < h_; ++i) {
                dw3[i] += dpre * z2[i];
                dz2[i] = dpre * w3[i];
                da2[i] = a2[i] > 0.0 ? dz2[i] : 0.0;
            }
            std::fill(dz1.begin(), dz1.end(), 0.0);
            affine_backward(w2, z1, da2, dw2, db2, dz1.data(), static_cast<std::size_t>(h_));
            for (int i = 0; i < h_; ++i) da1[i] = a1[i] > 0.0 ? dz1[i] : 0.0;
            affine_backward(w1, x, da1, dw1, db1, nullptr, static_cast<std::size_t>(in_));
        }
    }

private:
    void check_input(const Rollout& r) const {
        for (const StepRecord& s : r.steps)
            if (static_cast<int>(s.features.size()) != dims_.input_dim)
                throw data_error("feature dimension mismatch: predictor expects " +
                                 std::to_string(dims_.input_dim) + ", got " +
                                 std::to_string(s.features.size()));
    }

    void gather_window(const Rollout& r, int t, std::vector<double>& x) const {
        const int d = dims_.input_dim;
        for (int j = 0; j < dims_.window; ++j) {
            int src = t - dims_.window + 1 + j; // oldest first
            if (src < 1) {
                std::fill_n(x.begin() + static_cast<std::size_t>(j) * d, d, 0.0);
            } else {
                const auto& f = r.steps[src - 1].features;
                std::copy(f.begin(), f.end(), x.begin() + static_cast<std::size_t>(j) * d);
            }
        }
    }

    double step_forward(const std::vector<double>& x, std::vector<double>& z1,
                        std::vector<double>& z2) const {
        auto [w1, b1, w2, b2, w3, b3] = views(const_cast<std::vector<double>&>(theta));
        affine(w1, b1, x, z1);
        for (double& v : z1) v = v > 0.0 ? v : 0.0;
        affine(w2, b2, z1, z2);
        for (double& v : z2) v = v > 0.0 ? v : 0.0;
        double pre = b3[0];
        for (int i = 0; i < h_; ++i) pre += w3[i] * z2[i];
        return sigmoid(pre);
    }

    PredictorDims dims_;
    int in_ = 0;
    int h_ = 0;
};

// ---------------------------------------------------------------------------
// Recurrent: linear projection, one GRU cell, linear head, logistic output.
// The hidden state starts at zero for every rollout.

class RecurrentPredictor final : public Predictor {
public:
    RecurrentPredictor(const PredictorDims& dims) : dims_(dims) {
        if (dims_.proj <= 0) dims_.proj = dims_.hidden;
        if (dims_.input_dim < 1 || dims_.hidden < 1 || dims_.proj < 1)
            throw invalid_argument_error("recurrent: dims must be positive");
        d_ = dims_.input_dim;
        p_ = dims_.proj;
        h_ = dims_.hidden;
        theta.assign(param_count_for(d_, p_, h_), 0.0);
    }

    static std::size_t param_count_for(int d, int p, int h) {
        std::size_t gates = 3 * (static_cast<std::size_t>(h) * p + static_cast<std::size_t>(h) * h +
                                 static_cast<std::size_t>(h));
        return static_cast<std::size_t>(p) * d + p + gates + h + 1;
    }

    PredictorKind kind() const override { return PredictorKind::recurrent; }
    const PredictorDims& dims() const override { return dims_; }

    std::unique_ptr<Predictor> clone() const override {
        auto p = std::make_unique<RecurrentPredictor>(dims_);
        p->theta = theta;
        p->accumulate_mode = accumulate_mode;
        return p;
    }

    void init(std::uint64_t seed) {
        Rng rng(seed);
        Views v = views(theta);
        glorot_fill(v.wp, d_, p_, rng);
        glorot_fill(v.wz, p_, h_, rng);
        glorot_fill(v.uz, h_, h_, rng);
        glorot_fill(v.wr, p_, h_, rng);
        glorot_fill(v.ur, h_, h_, rng);
        glorot_fill(v.wn, p_, h_, rng);
        glorot_fill(v.un, h_, h_, rng);
        glorot_fill(v.wh, h_, 1, rng);
    }

    std::vector<double> forward_all(const Rollout& r) const override {
        Trace tr;
        run_forward(r, tr);
        if (!accumulate_mode) return tr.out;
        std::vector<double> acc(tr.out.size());
        double sum = 0.0;
        for (std::size_t i = 0; i < tr.out.size(); ++i) {
            sum += tr.out[i];
            acc[i] = sum;
        }
        return acc;
    }

    void add_gradient(const Rollout& r, std::span<const double> dscore,
                      std::span<double> grad) const override {
        if (dscore.size() != r.steps.size() || grad.size() != theta.size())
            throw invalid_argument_error("add_gradient: size mismatch");
        std::vector<double> d = per_step_dscore(dscore);
        Trace tr;
        run_forward(r, tr);

        Views w = views(const_cast<std::vector<double>&>(theta));
        Views g = views(grad);
        const int T = r.length();

        std::vector<double> dh(h_, 0.0);
        std::vector<double> dhprev(h_), dz(h_), dn(h_), drr(h_), daz(h_), dar(h_), dan(h_),
            drh(h_), du(p_);
        for (int t = T; t >= 1; --t) {
            const Step& st = tr.steps[t - 1];
            const std::vector<double>& hprev = t > 1 ? tr.steps[t - 2].h : tr.h0;
            double out = tr.out[t - 1];
            double dpre = d[t - 1] * out * (1.0 - out);
            g.bh[0] += dpre;
            for (int i = 0; i < h_; ++i) {
                g.wh[i] += dpre * st.h[i];
                dh[i] += dpre * w.wh[i];
            }
            std::fill(dhprev.begin(), dhprev.end(), 0.0);
            for (int i = 0; i < h_; ++i) {
                dz[i] = dh[i] * (hprev[i] - st.n[i]);
                dn[i] = dh[i] * (1.0 - st.z[i]);
                dhprev[i] += dh[i] * st.z[i];
                dan[i] = dn[i] * (1.0 - st.n[i] * st.n[i]);
                daz[i] = dz[i] * st.z[i] * (1.0 - st.z[i]);
            }
            // n gate consumed rr .* hprev; biases accumulate on the W-side
            // calls only, each pre-activation is fed by two affines
            std::fill(drh.begin(), drh.end(), 0.0);
            std::fill(du.begin(), du.end(), 0.0);
            affine_backward(w.un, st.rh, dan, g.un, {}, drh.data(), static_cast<std::size_t>(h_));
            for (int i = 0; i < h_; ++i) {
                drr[i] = drh[i] * hprev[i];
                dhprev[i] += drh[i] * st.rr[i];
                dar[i] = drr[i] * st.rr[i] * (1.0 - st.rr[i]);
            }
            affine_backward(w.uz, hprev, daz, g.uz, {}, dhprev.data(), static_cast<std::size_t>(h_));
            affine_backward(w.ur, hprev, dar, g.ur, {}, dhprev.data(), static_cast<std::size_t>(h_));
            affine_backward(w.wz, st.u, daz, g.wz, g.bz, du.data(), static_cast<std::size_t>(p_));
            affine_backward(w.wr, st.u, dar, g.wr, g.br, du.data(), static_cast<std::size_t>(p_));
            affine_backward(w.wn, st.u, dan, g.wn, g.bn, du.data(), static_cast<std::size_t>(p_));
            affine_backward(w.wp, r.steps[t - 1].features, du, g.wp, g.bp, nullptr,
                            static_cast<std::size_t>(d_));
            dh = dhprev;
        }
    }

private:
    struct Views {
        std::span<double> wp, bp, wz, uz, bz, wr, ur, br, wn, un, bn, wh, bh;
    };

    template <typename Vec>
    Views views(Vec& v) const {
        auto* p = const_cast<double*>(v.data());
        auto take = [&p](std::size_t n) {
            std::span<double> s(p, n);
            p += n;
            return s;
        };
        Views out;
        out.wp = take(static_cast<std::size_t>(p_) * d_);
        out.bp = take(p_);
        out.wz = take(static_cast<std::size_t>(h_) * p_);
        out.uz = take(static_cast<std::size_t>(h_) * h_);
        out.bz = take(h_);
        out.wr = take(static_cast<std::size_t>(h_) * p_);
        out.ur = take(static_cast<std::size_t>(h_) * h_);
        out.br = take(h_);
        out.wn = take(static_cast<std::size_t>(h_) * p_);
        out.un = take(static_cast<std::size_t>(h_) * h_);
        out.bn = take(h_);
        out.wh = take(h_);
        out.bh = take(1);
        return out;
    }

    struct Step {
        std::vector<double> u, z, rr, n, rh, h;
    };
    struct Trace {
        std::vector<Step> steps;
        std::vector<double> h0;
        std::vector<double> out;
    };

    void run_forward(const Rollout& r, Trace& tr) const {
        for (const StepRecord& s : r.steps)
            if (static_cast<int>(s.features.size()) != d_)
                throw data_error("feature dimension mismatch: predictor expects " +
                                 std::to_string(d_) + ", got " + std::to_string(s.features.size()));
        Views w = views(const_cast<std::vector<double>&>(theta));
        tr.h0.assign(h_, 0.0);
        tr.steps.resize(r.steps.size());
        tr.out.resize(r.steps.size());
        const std::vector<double>* hprev = &tr.h0;
        std::vector<double> az(h_), ar(h_), an(h_);
        for (int t = 1; t <= r.length(); ++t) {
            Step& st = tr.steps[t - 1];
            st.u.assign(p_, 0.0);
            affine(w.wp, w.bp, r.steps[t - 1].features, st.u);
            az.assign(h_, 0.0);
            ar.assign(h_, 0.0);
            an.assign(h_, 0.0);
            affine(w.wz, w.bz, st.u, az);
            affine(w.wr, w.br, st.u, ar);
            for (int i = 0; i < h_; ++i) {
                double zi = 0.0, ri = 0.0;
                const double* uzrow = w.uz.data() + static_cast<std::size_t>(i) * h_;
                const double* urrow = w.ur.data() + static_cast<std::size_t>(i) * h_;
                for (int j = 0; j < h_; ++j) {
                    zi += uzrow[j] * (*hprev)[j];
                    ri += urrow[j] * (*hprev)[j];
                }
                az[i] += zi;
                ar[i] += ri;
            }
            st.z.resize(h_);
            st.rr.resize(h_);
            for (int i = 0; i < h_; ++i) {
                st.z[i] = sigmoid(az[i]);
                st.rr[i] = sigmoid(ar[i]);
            }
            st.rh.resize(h_);
            for (int i = 0; i < h_; ++i) st.rh[i] = st.rr[i] * (*hprev)[i];
            affine(w.wn, w.bn, st.u, an);
            for (int i = 0; i < h_; ++i) {
                double ni = 0.0;
                const double* unrow = w.un.data() + static_cast<std::size_t>(i) * h_;
                for (int j = 0; j < h_; ++j) ni += unrow[j] * st.rh[j];
                an[i] += ni;
            }
            st.n.resize(h_);
            st.h.resize(h_);
            for (int i = 0; i < h_; ++i) {
                st.n[i] = std::tanh(an[i]);
                st.h[i] = (1.0 - st.z[i]) * st.n[i] + st.z[i] * (*hprev)[i];
            }
            double pre = w.bh[0];
            for (int i = 0; i < h_; ++i) pre += w.wh[i] * st.h[i];
            tr.out[t - 1] = sigmoid(pre);
            hprev = &st.h;
        }
    }

    PredictorDims dims_;
    int d_ = 0, p_ = 0, h_ = 0;
};

std::unique_ptr<Predictor> make_predictor(PredictorKind kind, const PredictorDims& dims,
                                          std::uint64_t seed) {
    if (kind == PredictorKind::feedforward) {
        auto p = std::make_unique<FeedforwardPredictor>(dims);
        p->init(seed);
        return p;
    }
    auto p = std::make_unique<RecurrentPredictor>(dims);
    p->init(seed);
    return p;
}

void save_predictor(const Predictor& p, const std::string& path) {
    json j;
    j["v"] = kFileVersion;
    j["kind"] = predictor_kind_name(p.kind());
    const PredictorDims& d = p.dims();
    j["input_dim"] = d.input_dim;
    j["hidden"] = d.hidden;
    j["window"] = d.window;
    j["proj"] = d.proj;
    j["accumulate"] = p.accumulate_mode;
    j["params"] = p.theta;
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw io_error("cannot open '" + path + "' for writing");
    out << j.dump() << '\n';
    if (!out) throw io_error("write failed for '" + path + "'");
}

std::unique_ptr<Predictor> load_predictor(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw io_error("cannot open '" + path + "' for reading");
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw data_error(path + ": parse error: " + e.what());
    }
    int v = j.value("v", -1);
    if (v != kFileVersion)
        throw data_error(path + ": unsupported predictor file version " + std::to_string(v));
    std::string kind = j.at("kind").get<std::string>();
    PredictorDims dims;
    dims.input_dim = j.at("input_dim").get<int>();
    dims.hidden = j.at("hidden").get<int>();
    dims.window = j.at("window").get<int>();
    dims.proj = j.at("proj").get<int>();
    std::unique_ptr<Predictor> p;
    if (kind == "feedforward")
        p = std::make_unique<FeedforwardPredictor>(dims);
    else if (kind == "recurrent")
        p = std::make_unique<RecurrentPredictor>(dims);
    else
        throw data_error(path + ": unknown predictor kind '" + kind + "'");
    auto params = j.at("params").get<std::vector<double>>();
    if (params.size() != p->theta.size())
        throw data_error(path + ": parameter count mismatch");
    p->theta = std::move(params);
    p->accumulate_mode = j.value("accumulate", false);
    return p;
}

void adamw_step(OptimizerState& st, std::span<double> params, std::span<const double> grad) {
    if (params.size() != grad.size())
        throw invalid_argument_error("adamw_step: shape mismatch");
    if (st.m.empty()) {
        st.m.assign(params.size(), 0.0);
        st.v.assign(params.size(), 0.0);
    }
    if (st.m.size() != params.size())
        throw invalid_argument_error("adamw_step: state shape mismatch");
    ++st.step;
    const double bc1 = 1.0 - std::pow(st.beta1, static_cast<double>(st.step));
    const double bc2 = 1.0 - std::pow(st.beta2, static_cast<double>(st.step));
    for (std::size_t i = 0; i < params.size(); ++i) {
        params[i] *= 1.0 - st.lr * st.weight_decay;
        st.m[i] = st.beta1 * st.m[i] + (1.0 - st.beta1) * grad[i];
        st.v[i] = st.beta2 * st.v[i] + (1.0 - st.beta2) * grad[i] * grad[i];
        double mhat = st.m[i] / bc1;
        double vhat = st.v[i] / bc2;
        params[i] -= st.lr * mhat / (std::sqrt(vhat) + st.eps);
    }
}

double LrSchedule::rate(int epoch) const {
    if (base <= 0.0) throw config_error("lr schedule: base rate must be positive");
    if (!(gamma > 0.0 && gamma <= 1.0)) throw config_error("lr schedule: gamma must lie in (0,1]");
    if (step_size < 1) throw config_error("lr schedule: step size must be >= 1");
    int decays = (epoch - 1) / step_size;
    return base * std::pow(gamma, static_cast<double>(decays));
}

} // namespace tdcal
