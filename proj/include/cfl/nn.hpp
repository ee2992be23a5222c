#pragma once

#include "cfl/tensor.hpp"

#include <array>
#include <cstddef>
#include <random>
#include <vector>

namespace cfl::nn {

// A mini-batch: one feature row per sample, labels in [0, num_classes).
struct Batch {
    Matrix features;
    std::vector<int> labels;

    std::size_t size() const noexcept { return labels.size(); }
};

struct LossAndGradient {
    double loss = 0.0;
    GradientVector gradient;
};

// The federation engine only needs a differentiable loss, a predictor and an
// initializer. The MLP is the production model; tests plug in tiny models.
class Model {
public:
    virtual ~Model() = default;

    virtual std::size_t param_count() const = 0;
    virtual std::size_t input_dim() const = 0;

    // Summed loss over the batch together with its exact gradient.
    virtual LossAndGradient loss_and_gradient(const ParamVector& params, const Batch& batch) const = 0;

    virtual std::vector<int> predict(const ParamVector& params, const Matrix& features) const = 0;

    virtual ParamVector init(std::mt19937_64& rng) const = 0;
};

struct MlpConfig {
    std::size_t input_dim = 1;
    std::array<std::size_t, 2> hidden_dims{1, 1};
    std::size_t num_classes = 2;

    // Weights + biases of the three dense layers.
    std::size_t param_count() const;
    void validate() const;
};

// Three dense layers, ReLU after the first two, softmax cross-entropy head.
//
// Parameter layout (frozen): layer-major, and within each layer the weight
// matrix [out x in] row-major followed by the bias [out]:
//   W1 [h1 x in] | b1 [h1] | W2 [h2 x h1] | b2 [h2] | W3 [C x h2] | b3 [C]
class Mlp final : public Model {
public:
    explicit Mlp(MlpConfig cfg);

    const MlpConfig& config() const noexcept { return cfg_; }

    std::size_t param_count() const override { return cfg_.param_count(); }
    std::size_t input_dim() const override { return cfg_.input_dim; }

    LossAndGradient loss_and_gradient(const ParamVector& params, const Batch& batch) const override;
    std::vector<int> predict(const ParamVector& params, const Matrix& features) const override;

    // Weights and biases uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)].
    ParamVector init(std::mt19937_64& rng) const override;

private:
    MlpConfig cfg_;
};

// Row-wise softmax of the network output, [B x num_classes].
Matrix forward(const ParamVector& params, const MlpConfig& cfg, const Batch& batch);

// Sum of per-sample cross-entropy over the batch.
double batch_loss(const ParamVector& params, const MlpConfig& cfg, const Batch& batch);

GradientVector batch_gradient(const ParamVector& params, const MlpConfig& cfg, const Batch& batch);

// params - lr * grad, elementwise.
ParamVector sgd_step(const ParamVector& params, const GradientVector& grad, double lr);

} // namespace cfl::nn
