#include "exfilscope/model.hpp"

#include <algorithm>
#include <cmath>

#include "exfilscope/rng.hpp"

namespace exfilscope {

namespace {

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

// z[0..rows) += W[rows x cols] * x[0..cols)
void gemv_acc(const double* w, std::size_t rows, std::size_t cols, const double* x,
              double* z) {
    for (std::size_t r = 0; r < rows; ++r) {
        const double* wr = w + r * cols;
        double acc = 0.0;
        for (std::size_t c = 0; c < cols; ++c) acc += wr[c] * x[c];
        z[r] += acc;
    }
}

// out[0..cols) += W^T[cols x rows] * dz[0..rows)
void gemv_t_acc(const double* w, std::size_t rows, std::size_t cols, const double* dz,
                double* out) {
    for (std::size_t r = 0; r < rows; ++r) {
        const double* wr = w + r * cols;
        double d = dz[r];
        for (std::size_t c = 0; c < cols; ++c) out[c] += wr[c] * d;
    }
}

// dW[rows x cols] += dz ⊗ x
void outer_acc(const double* dz, std::size_t rows, const double* x, std::size_t cols,
               double* dw) {
    for (std::size_t r = 0; r < rows; ++r) {
        double d = dz[r];
        double* dwr = dw + r * cols;
        for (std::size_t c = 0; c < cols; ++c) dwr[c] += d * x[c];
    }
}

// per-sample activations kept for backprop
struct LstmCache {
    // all T x H (gates post-activation), c and tanh(c) and h
    std::vector<double> gi, gf, gg, go, c, tanh_c, h;
    void resize(std::size_t t, std::size_t h_dim) {
        gi.assign(t * h_dim, 0.0);
        gf.assign(t * h_dim, 0.0);
        gg.assign(t * h_dim, 0.0);
        go.assign(t * h_dim, 0.0);
        c.assign(t * h_dim, 0.0);
        tanh_c.assign(t * h_dim, 0.0);
        h.assign(t * h_dim, 0.0);
    }
};

struct ForwardCache {
    std::vector<double> conv_pre;  // T' x F (pre-ReLU)
    std::vector<double> conv_out;  // T' x F
    LstmCache l1, l2;
    std::vector<double> probs;
};

}  // namespace

ParamLayout::ParamLayout(const ModelConfig& c) {
    const std::size_t f = c.conv_filters, k = c.conv_kernel, in = c.features;
    const std::size_t h1 = c.lstm1_hidden, h2 = c.lstm2_hidden, cls = c.classes;
    std::size_t off = 0;
    auto take = [&off](std::size_t n) {
        std::size_t at = off;
        off += n;
        return at;
    };
    conv_w = take(f * k * in);
    conv_b = take(f);
    l1_wx = take(4 * h1 * f);
    l1_wh = take(4 * h1 * h1);
    l1_b = take(4 * h1);
    l2_wx = take(4 * h2 * h1);
    l2_wh = take(4 * h2 * h2);
    l2_b = take(4 * h2);
    fc_w = take(cls * h2);
    fc_b = take(cls);
    total = off;
}

Model::Model(const ModelConfig& config) : config_(config), layout_(config) {
    if (config.time_steps <= 0 || config.features <= 0 || config.conv_filters <= 0 ||
        config.conv_kernel <= 0 || config.lstm1_hidden <= 0 || config.lstm2_hidden <= 0)
        throw ShapeMismatch("model dimensions must be positive");
    if (config.classes < 2) throw ShapeMismatch("need at least 2 classes");
    if (config.conv_kernel > config.time_steps)
        throw ShapeMismatch("conv kernel wider than the input");
    params_.assign(layout_.total, 0.0);
}

void Model::init_params(std::uint64_t seed) {
    Rng rng(derive_seed(seed, 0x90de1));
    auto fill = [&](std::size_t off, std::size_t n, std::size_t fan_in) {
        double s = std::sqrt(1.0 / double(fan_in));
        for (std::size_t i = 0; i < n; ++i) params_[off + i] = rng.uniform(-s, s);
    };
    const auto& c = config_;
    const std::size_t h1 = c.lstm1_hidden, h2 = c.lstm2_hidden;
    fill(layout_.conv_w, std::size_t(c.conv_filters) * c.conv_kernel * c.features,
         std::size_t(c.conv_kernel) * c.features);
    // conv_b stays 0
    fill(layout_.l1_wx, 4 * h1 * c.conv_filters, c.conv_filters);
    fill(layout_.l1_wh, 4 * h1 * h1, h1);
    fill(layout_.l2_wx, 4 * h2 * h1, h1);
    fill(layout_.l2_wh, 4 * h2 * h2, h2);
    fill(layout_.fc_w, std::size_t(c.classes) * h2, h2);
    // forget gate bias 1 keeps early memory open
    for (std::size_t i = 0; i < h1; ++i) params_[layout_.l1_b + h1 + i] = 1.0;
    for (std::size_t i = 0; i < h2; ++i) params_[layout_.l2_b + h2 + i] = 1.0;
}

namespace {

void run_forward(const ModelConfig& cfg, const ParamLayout& lay,
                 const std::vector<double>& p, std::span<const double> x,
                 ForwardCache& cache) {
    const std::size_t t_in = cfg.time_steps, c_in = cfg.features;
    const std::size_t f = cfg.conv_filters, k = cfg.conv_kernel;
    const std::size_t t_conv = cfg.conv_steps();
    const std::size_t h1 = cfg.lstm1_hidden, h2 = cfg.lstm2_hidden;

    if (x.size() != t_in * c_in)
        throw ShapeMismatch("input has " + std::to_string(x.size()) +
                            " values, expected " + std::to_string(t_in * c_in));

    cache.conv_pre.assign(t_conv * f, 0.0);
    cache.conv_out.assign(t_conv * f, 0.0);
    const double* conv_w = p.data() + lay.conv_w;
    const double* conv_b = p.data() + lay.conv_b;
    for (std::size_t t = 0; t < t_conv; ++t) {
        for (std::size_t fi = 0; fi < f; ++fi) {
            const double* w = conv_w + fi * k * c_in;
            double acc = conv_b[fi];
            for (std::size_t kk = 0; kk < k; ++kk) {
                const double* xr = x.data() + (t + kk) * c_in;
                const double* wr = w + kk * c_in;
                for (std::size_t ci = 0; ci < c_in; ++ci) acc += wr[ci] * xr[ci];
            }
            cache.conv_pre[t * f + fi] = acc;
            cache.conv_out[t * f + fi] = acc > 0.0 ? acc : 0.0;
        }
    }

    auto run_lstm = [&](LstmCache& lc, const double* in, std::size_t in_dim,
                        std::size_t h_dim, std::size_t wx_off, std::size_t wh_off,
                        std::size_t b_off) {
        lc.resize(t_conv, h_dim);
        std::vector<double> z(4 * h_dim);
        std::vector<double> h_prev(h_dim, 0.0), c_prev(h_dim, 0.0);
        const double* wx = p.data() + wx_off;
        const double* wh = p.data() + wh_off;
        const double* b = p.data() + b_off;
        for (std::size_t t = 0; t < t_conv; ++t) {
            std::copy(b, b + 4 * h_dim, z.begin());
            gemv_acc(wx, 4 * h_dim, in_dim, in + t * in_dim, z.data());
            gemv_acc(wh, 4 * h_dim, h_dim, h_prev.data(), z.data());
            double* gi = lc.gi.data() + t * h_dim;
            double* gf = lc.gf.data() + t * h_dim;
            double* gg = lc.gg.data() + t * h_dim;
            double* go = lc.go.data() + t * h_dim;
            double* ct = lc.c.data() + t * h_dim;
            double* tc = lc.tanh_c.data() + t * h_dim;
            double* ht = lc.h.data() + t * h_dim;
            for (std::size_t u = 0; u < h_dim; ++u) {
                gi[u] = sigmoid(z[u]);
                gf[u] = sigmoid(z[h_dim + u]);
                gg[u] = std::tanh(z[2 * h_dim + u]);
                go[u] = sigmoid(z[3 * h_dim + u]);
                ct[u] = gf[u] * c_prev[u] + gi[u] * gg[u];
                tc[u] = std::tanh(ct[u]);
                ht[u] = go[u] * tc[u];
            }
            std::copy(ct, ct + h_dim, c_prev.begin());
            std::copy(ht, ht + h_dim, h_prev.begin());
        }
    };

    run_lstm(cache.l1, cache.conv_out.data(), f, h1, lay.l1_wx, lay.l1_wh, lay.l1_b);
    run_lstm(cache.l2, cache.l1.h.data(), h1, h2, lay.l2_wx, lay.l2_wh, lay.l2_b);

    // dense + softmax on the last hidden state
    const double* fc_w = p.data() + lay.fc_w;
    const double* fc_b = p.data() + lay.fc_b;
    const double* h_last = cache.l2.h.data() + (t_conv - 1) * h2;
    const std::size_t cls = cfg.classes;
    cache.probs.assign(cls, 0.0);
    double max_logit = -1e300;
    std::vector<double> logits(cls);
    for (std::size_t c = 0; c < cls; ++c) {
        double acc = fc_b[c];
        const double* wr = fc_w + c * h2;
        for (std::size_t u = 0; u < h2; ++u) acc += wr[u] * h_last[u];
        logits[c] = acc;
        max_logit = std::max(max_logit, acc);
    }
    double denom = 0.0;
    for (std::size_t c = 0; c < cls; ++c) {
        cache.probs[c] = std::exp(logits[c] - max_logit);
        denom += cache.probs[c];
    }
    for (std::size_t c = 0; c < cls; ++c) cache.probs[c] /= denom;
}

// backprop of one LSTM layer; returns gradient wrt the layer input sequence
void lstm_backward(const ModelConfig& cfg, const std::vector<double>& p,
                   const LstmCache& lc, const double* in, std::size_t in_dim,
                   std::size_t h_dim, std::size_t wx_off, std::size_t wh_off,
                   std::size_t b_off, const std::vector<double>& dh_out,
                   std::span<double> grad, std::vector<double>& d_in) {
    const std::size_t t_conv = cfg.conv_steps();
    const double* wx = p.data() + wx_off;
    const double* wh = p.data() + wh_off;
    double* d_wx = grad.data() + wx_off;
    double* d_wh = grad.data() + wh_off;
    double* d_b = grad.data() + b_off;

    d_in.assign(t_conv * in_dim, 0.0);
    std::vector<double> dh_next(h_dim, 0.0), dc_next(h_dim, 0.0);
    std::vector<double> dz(4 * h_dim);
    for (std::size_t t = t_conv; t-- > 0;) {
        const double* gi = lc.gi.data() + t * h_dim;
        const double* gf = lc.gf.data() + t * h_dim;
        const double* gg = lc.gg.data() + t * h_dim;
        const double* go = lc.go.data() + t * h_dim;
        const double* tc = lc.tanh_c.data() + t * h_dim;
        const double* c_prev = t > 0 ? lc.c.data() + (t - 1) * h_dim : nullptr;
        for (std::size_t u = 0; u < h_dim; ++u) {
            double dh = dh_out[t * h_dim + u] + dh_next[u];
            double do_ = dh * tc[u];
            double dc = dh * go[u] * (1.0 - tc[u] * tc[u]) + dc_next[u];
            double cp = c_prev ? c_prev[u] : 0.0;
            double di = dc * gg[u];
            double dg = dc * gi[u];
            double df = dc * cp;
            dc_next[u] = dc * gf[u];
            dz[u] = di * gi[u] * (1.0 - gi[u]);
            dz[h_dim + u] = df * gf[u] * (1.0 - gf[u]);
            dz[2 * h_dim + u] = dg * (1.0 - gg[u] * gg[u]);
            dz[3 * h_dim + u] = do_ * go[u] * (1.0 - go[u]);
        }
        const double* x_t = in + t * in_dim;
        const double* h_prev = t > 0 ? lc.h.data() + (t - 1) * h_dim : nullptr;
        outer_acc(dz.data(), 4 * h_dim, x_t, in_dim, d_wx);
        if (h_prev) outer_acc(dz.data(), 4 * h_dim, h_prev, h_dim, d_wh);
        for (std::size_t r = 0; r < 4 * h_dim; ++r) d_b[r] += dz[r];
        std::fill(dh_next.begin(), dh_next.end(), 0.0);
        gemv_t_acc(wh, 4 * h_dim, h_dim, dz.data(), dh_next.data());
        gemv_t_acc(wx, 4 * h_dim, in_dim, dz.data(), d_in.data() + t * in_dim);
    }
}

}  // namespace

std::vector<double> Model::forward(std::span<const double> input) const {
    ForwardCache cache;
    run_forward(config_, layout_, params_, input, cache);
    return cache.probs;
}

double Model::loss_only(std::span<const double> input, int label) const {
    ForwardCache cache;
    run_forward(config_, layout_, params_, input, cache);
    double p = std::max(cache.probs[label], 1e-300);
    return -std::log(p);
}

double Model::loss_and_grad(std::span<const double> input, int label,
                            std::span<double> grad) const {
    if (label < 0 || label >= config_.classes)
        throw ShapeMismatch("label out of range");
    if (grad.size() != layout_.total) throw ShapeMismatch("gradient buffer size");

    ForwardCache cache;
    run_forward(config_, layout_, params_, input, cache);
    const std::size_t t_conv = config_.conv_steps();
    const std::size_t f = config_.conv_filters, k = config_.conv_kernel;
    const std::size_t c_in = config_.features;
    const std::size_t h1 = config_.lstm1_hidden, h2 = config_.lstm2_hidden;
    const std::size_t cls = config_.classes;

    // softmax + cross entropy
    std::vector<double> dlogits(cache.probs);
    dlogits[label] -= 1.0;

    const double* h_last = cache.l2.h.data() + (t_conv - 1) * h2;
    double* d_fc_w = grad.data() + layout_.fc_w;
    double* d_fc_b = grad.data() + layout_.fc_b;
    std::vector<double> dh2(t_conv * h2, 0.0);
    const double* fc_w = params_.data() + layout_.fc_w;
    for (std::size_t c = 0; c < cls; ++c) {
        d_fc_b[c] += dlogits[c];
        double* dwr = d_fc_w + c * h2;
        const double* wr = fc_w + c * h2;
        double d = dlogits[c];
        double* dh_last = dh2.data() + (t_conv - 1) * h2;
        for (std::size_t u = 0; u < h2; ++u) {
            dwr[u] += d * h_last[u];
            dh_last[u] += d * wr[u];
        }
    }

    std::vector<double> dh1;
    lstm_backward(config_, params_, cache.l2, cache.l1.h.data(), h1, h2, layout_.l2_wx,
                  layout_.l2_wh, layout_.l2_b, dh2, grad, dh1);
    std::vector<double> d_conv_out;
    lstm_backward(config_, params_, cache.l1, cache.conv_out.data(), f, h1,
                  layout_.l1_wx, layout_.l1_wh, layout_.l1_b, dh1, grad, d_conv_out);

    // conv backward (input gradient not needed)
    double* d_conv_w = grad.data() + layout_.conv_w;
    double* d_conv_b = grad.data() + layout_.conv_b;
    for (std::size_t t = 0; t < t_conv; ++t) {
        for (std::size_t fi = 0; fi < f; ++fi) {
            if (cache.conv_pre[t * f + fi] <= 0.0) continue;
            double dz = d_conv_out[t * f + fi];
            if (dz == 0.0) continue;
            double* dw = d_conv_w + fi * k * c_in;
            for (std::size_t kk = 0; kk < k; ++kk) {
                const double* xr = input.data() + (t + kk) * c_in;
                double* dwr = dw + kk * c_in;
                for (std::size_t ci = 0; ci < c_in; ++ci) dwr[ci] += dz * xr[ci];
            }
            d_conv_b[fi] += dz;
        }
    }

    double p = std::max(cache.probs[label], 1e-300);
    return -std::log(p);
}

int Model::predict_one(std::span<const double> input) const {
    std::vector<double> probs = forward(input);
    int best = 0;
    for (int c = 1; c < config_.classes; ++c)
        if (probs[c] > probs[best]) best = c;  // ties keep the lowest index
    return best;
}

double grad_check(Model& model, std::span<const double> input, int label,
                  double epsilon, int n_params, std::uint64_t seed) {
    if (epsilon <= 0.0) throw std::invalid_argument("grad_check: epsilon must be > 0");

    std::vector<double> analytic(model.layout().total, 0.0);
    model.loss_and_grad(input, label, analytic);
    for (double g : analytic)
        if (!std::isfinite(g)) throw NonFiniteGradient("analytic gradient not finite");

    Rng rng(derive_seed(seed, 0x9c));
    const std::size_t total = model.layout().total;
    std::vector<std::size_t> picks;
    if (std::size_t(n_params) >= total) {
        picks.resize(total);
        for (std::size_t i = 0; i < total; ++i) picks[i] = i;
    } else {
        // sample distinct indices
        std::vector<std::size_t> all(total);
        for (std::size_t i = 0; i < total; ++i) all[i] = i;
        rng.shuffle(all);
        picks.assign(all.begin(), all.begin() + n_params);
    }

    double max_rel = 0.0;
    std::vector<double>& p = model.params();
    for (std::size_t idx : picks) {
        double saved = p[idx];
        p[idx] = saved + epsilon;
        double up = model.loss_only(input, label);
        p[idx] = saved - epsilon;
        double down = model.loss_only(input, label);
        p[idx] = saved;
        double numeric = (up - down) / (2.0 * epsilon);
        if (!std::isfinite(numeric)) throw NonFiniteGradient("numeric gradient not finite");
        double denom = std::max({std::fabs(analytic[idx]), std::fabs(numeric), 1e-8});
        max_rel = std::max(max_rel, std::fabs(analytic[idx] - numeric) / denom);
    }
    return max_rel;
}

}  // namespace exfilscope
