#include "cfl/nn.hpp"

#include "cfl/errors.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace cfl::nn {

namespace {

struct LayerView {
    std::size_t in;
    std::size_t out;
    std::size_t weight_offset;
    std::size_t bias_offset;
};

struct Layout {
    std::array<LayerView, 3> layers;
};

Layout make_layout(const MlpConfig& cfg) {
    const std::array<std::size_t, 4> dims{cfg.input_dim, cfg.hidden_dims[0], cfg.hidden_dims[1], cfg.num_classes};
    Layout layout{};
    std::size_t offset = 0;
    for (std::size_t l = 0; l < 3; ++l) {
        LayerView& v = layout.layers[l];
        v.in = dims[l];
        v.out = dims[l + 1];
        v.weight_offset = offset;
        offset += v.in * v.out;
        v.bias_offset = offset;
        offset += v.out;
    }
    return layout;
}

void check_inputs(const ParamVector& params, const MlpConfig& cfg, const Batch& batch) {
    cfg.validate();
    if (params.size() != cfg.param_count())
        throw StructuralError("parameter count " + std::to_string(params.size()) + " does not match model (expected " +
                              std::to_string(cfg.param_count()) + ")");
    if (batch.size() == 0) throw StructuralError("batch size must be >= 1");
    if (batch.features.cols != cfg.input_dim)
        throw StructuralError("batch feature width " + std::to_string(batch.features.cols) +
                              " does not match input_dim " + std::to_string(cfg.input_dim));
    if (batch.features.rows != batch.size())
        throw StructuralError("batch has " + std::to_string(batch.features.rows) + " feature rows but " +
                              std::to_string(batch.size()) + " labels");
    for (int y : batch.labels)
        if (y < 0 || static_cast<std::size_t>(y) >= cfg.num_classes)
            throw StructuralError("label " + std::to_string(y) + " outside [0, num_classes=" +
                                  std::to_string(cfg.num_classes) + ")");
}

// out = W x + b for one layer.
void dense(const double* p, const LayerView& l, const double* x, double* out) {
    const double* w = p + l.weight_offset;
    const double* b = p + l.bias_offset;
    for (std::size_t o = 0; o < l.out; ++o) {
        const double* wr = w + o * l.in;
        double s = b[o];
        for (std::size_t i = 0; i < l.in; ++i) s += wr[i] * x[i];
        out[o] = s;
    }
}

void relu_inplace(std::vector<double>& v) {
    for (double& x : v) x = x > 0.0 ? x : 0.0;
}

struct Activations {
    std::vector<double> h1, h2, logits;
};

void forward_sample(const double* p, const Layout& layout, const double* x, Activations& a) {
    dense(p, layout.layers[0], x, a.h1.data());
    relu_inplace(a.h1);
    dense(p, layout.layers[1], a.h1.data(), a.h2.data());
    relu_inplace(a.h2);
    dense(p, layout.layers[2], a.h2.data(), a.logits.data());
}

// Stable log-sum-exp; fills probs with the softmax as a side effect.
double log_softmax_norm(const std::vector<double>& logits, std::vector<double>& probs) {
    const double mx = *std::max_element(logits.begin(), logits.end());
    double sum = 0.0;
    for (std::size_t c = 0; c < logits.size(); ++c) {
        probs[c] = std::exp(logits[c] - mx);
        sum += probs[c];
    }
    for (double& q : probs) q /= sum;
    return mx + std::log(sum);
}

// Backprop of delta_out through a dense layer: accumulates weight and bias
// gradients, and writes the input-side delta when delta_in is non-null.
void dense_backward(const double* p, const LayerView& l, const double* x, const double* delta_out, double* g,
                    double* delta_in) {
    const double* w = p + l.weight_offset;
    double* gw = g + l.weight_offset;
    double* gb = g + l.bias_offset;
    if (delta_in) std::fill(delta_in, delta_in + l.in, 0.0);
    for (std::size_t o = 0; o < l.out; ++o) {
        const double d = delta_out[o];
        gb[o] += d;
        if (d == 0.0) continue;
        double* gwr = gw + o * l.in;
        const double* wr = w + o * l.in;
        for (std::size_t i = 0; i < l.in; ++i) gwr[i] += d * x[i];
        if (delta_in)
            for (std::size_t i = 0; i < l.in; ++i) delta_in[i] += d * wr[i];
    }
}

} // namespace

std::size_t MlpConfig::param_count() const {
    const auto& h = hidden_dims;
    return (input_dim * h[0] + h[0]) + (h[0] * h[1] + h[1]) + (h[1] * num_classes + num_classes);
}

void MlpConfig::validate() const {
    if (input_dim < 1) throw StructuralError("input_dim must be >= 1");
    if (hidden_dims[0] < 1) throw StructuralError("hidden_dims[0] must be >= 1");
    if (hidden_dims[1] < 1) throw StructuralError("hidden_dims[1] must be >= 1");
    if (num_classes < 1) throw StructuralError("num_classes must be >= 1");
}

Mlp::Mlp(MlpConfig cfg) : cfg_(cfg) { cfg_.validate(); }

LossAndGradient Mlp::loss_and_gradient(const ParamVector& params, const Batch& batch) const {
    check_inputs(params, cfg_, batch);
    const Layout layout = make_layout(cfg_);
    const double* p = params.values.data();

    LossAndGradient out;
    out.gradient.values.assign(params.size(), 0.0);
    double* g = out.gradient.values.data();

    Activations a{std::vector<double>(cfg_.hidden_dims[0]), std::vector<double>(cfg_.hidden_dims[1]),
                  std::vector<double>(cfg_.num_classes)};
    std::vector<double> probs(cfg_.num_classes);
    std::vector<double> d2(cfg_.hidden_dims[1]);
    std::vector<double> d1(cfg_.hidden_dims[0]);

    for (std::size_t s = 0; s < batch.size(); ++s) {
        const double* x = batch.features.row(s).data();
        forward_sample(p, layout, x, a);
        const auto y = static_cast<std::size_t>(batch.labels[s]);
        out.loss += log_softmax_norm(a.logits, probs) - a.logits[y];

        // d loss / d logits = softmax - onehot
        probs[y] -= 1.0;
        dense_backward(p, layout.layers[2], a.h2.data(), probs.data(), g, d2.data());
        for (std::size_t i = 0; i < d2.size(); ++i)
            if (a.h2[i] <= 0.0) d2[i] = 0.0;
        dense_backward(p, layout.layers[1], a.h1.data(), d2.data(), g, d1.data());
        for (std::size_t i = 0; i < d1.size(); ++i)
            if (a.h1[i] <= 0.0) d1[i] = 0.0;
        dense_backward(p, layout.layers[0], x, d1.data(), g, nullptr);
    }

    if (!std::isfinite(out.loss)) throw NumericError("batch loss is not finite");
    if (!all_finite(out.gradient.values)) throw NumericError("batch gradient has non-finite entries");
    return out;
}

std::vector<int> Mlp::predict(const ParamVector& params, const Matrix& features) const {
    if (params.size() != cfg_.param_count())
        throw StructuralError("parameter count " + std::to_string(params.size()) + " does not match model (expected " +
                              std::to_string(cfg_.param_count()) + ")");
    if (features.cols != cfg_.input_dim)
        throw StructuralError("feature width " + std::to_string(features.cols) + " does not match input_dim " +
                              std::to_string(cfg_.input_dim));
    const Layout layout = make_layout(cfg_);
    Activations a{std::vector<double>(cfg_.hidden_dims[0]), std::vector<double>(cfg_.hidden_dims[1]),
                  std::vector<double>(cfg_.num_classes)};
    std::vector<int> out(features.rows);
    for (std::size_t s = 0; s < features.rows; ++s) {
        forward_sample(params.values.data(), layout, features.row(s).data(), a);
        // first maximum wins ties
        out[s] = static_cast<int>(std::max_element(a.logits.begin(), a.logits.end()) - a.logits.begin());
    }
    return out;
}

ParamVector Mlp::init(std::mt19937_64& rng) const {
    const Layout layout = make_layout(cfg_);
    ParamVector p;
    p.values.reserve(param_count());
    for (const LayerView& l : layout.layers) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(l.in));
        std::uniform_real_distribution<double> dist(-bound, bound);
        for (std::size_t i = 0; i < l.in * l.out + l.out; ++i) p.values.push_back(dist(rng));
    }
    return p;
}

Matrix forward(const ParamVector& params, const MlpConfig& cfg, const Batch& batch) {
    check_inputs(params, cfg, batch);
    const Layout layout = make_layout(cfg);
    Activations a{std::vector<double>(cfg.hidden_dims[0]), std::vector<double>(cfg.hidden_dims[1]),
                  std::vector<double>(cfg.num_classes)};
    std::vector<double> probs(cfg.num_classes);
    Matrix out(batch.size(), cfg.num_classes);
    for (std::size_t s = 0; s < batch.size(); ++s) {
        forward_sample(params.values.data(), layout, batch.features.row(s).data(), a);
        log_softmax_norm(a.logits, probs);
        std::copy(probs.begin(), probs.end(), out.row(s).begin());
    }
    return out;
}

double batch_loss(const ParamVector& params, const MlpConfig& cfg, const Batch& batch) {
    return Mlp(cfg).loss_and_gradient(params, batch).loss;
}

GradientVector batch_gradient(const ParamVector& params, const MlpConfig& cfg, const Batch& batch) {
    return Mlp(cfg).loss_and_gradient(params, batch).gradient;
}

ParamVector sgd_step(const ParamVector& params, const GradientVector& grad, double lr) {
    if (params.size() != grad.size())
        throw StructuralError("sgd_step: parameter length " + std::to_string(params.size()) +
                              " != gradient length " + std::to_string(grad.size()));
    if (!(lr > 0.0) || !std::isfinite(lr)) throw StructuralError("sgd_step: learning rate must be positive and finite");
    ParamVector out{params.values};
    for (std::size_t i = 0; i < out.values.size(); ++i) out.values[i] -= lr * grad.values[i];
    return out;
}

} // namespace cfl::nn
