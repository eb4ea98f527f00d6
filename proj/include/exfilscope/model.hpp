#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace exfilscope {

struct ModelError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct ShapeMismatch : ModelError {
    explicit ShapeMismatch(const std::string& what) : ModelError(what) {}
};
struct NonFiniteGradient : ModelError {
    explicit NonFiniteGradient(const std::string& what) : ModelError(what) {}
};

struct ModelConfig {
    int time_steps = 300;
    int features = 123;
    int conv_filters = 32;
    int conv_kernel = 5;  // stride fixed at 1, no padding
    int lstm1_hidden = 64;
    int lstm2_hidden = 64;
    int classes = 13;
    std::uint64_t seed = 1;

    int conv_steps() const { return time_steps - conv_kernel + 1; }
    bool operator==(const ModelConfig&) const = default;
};

// Offsets of each layer's weights inside the flat parameter vector, in
// canonical order: conv w/b, lstm1 wx/wh/b, lstm2 wx/wh/b, dense w/b.
// LSTM gate rows are blocked [input; forget; cell; output].
struct ParamLayout {
    explicit ParamLayout(const ModelConfig& c);

    std::size_t conv_w, conv_b;
    std::size_t l1_wx, l1_wh, l1_b;
    std::size_t l2_wx, l2_wh, l2_b;
    std::size_t fc_w, fc_b;
    std::size_t total;
};

// 1D convolution (ReLU) -> LSTM -> LSTM -> dense softmax over a
// time_steps x features matrix. Parameters are a flat vector of doubles so
// SGD, checkpointing and finite differences all share one index space.
class Model {
public:
    explicit Model(const ModelConfig& config);

    const ModelConfig& config() const { return config_; }
    const ParamLayout& layout() const { return layout_; }
    std::vector<double>& params() { return params_; }
    const std::vector<double>& params() const { return params_; }

    // seeded uniform init scaled by fan-in; forget gate biases start at 1
    void init_params(std::uint64_t seed);

    // class probabilities for one normalized sample (row-major T x F)
    std::vector<double> forward(std::span<const double> input) const;

    // cross-entropy loss of one sample; adds d(loss)/d(params) into grad
    double loss_and_grad(std::span<const double> input, int label,
                         std::span<double> grad) const;

    double loss_only(std::span<const double> input, int label) const;

    int predict_one(std::span<const double> input) const;

private:
    ModelConfig config_;
    ParamLayout layout_;
    std::vector<double> params_;
};

// Compares analytic gradients against central finite differences on
// n_samples randomly chosen parameters; returns the max relative error
// |ga - gn| / max(|ga|, |gn|, 1e-8).
double grad_check(Model& model, std::span<const double> input, int label,
                  double epsilon = 1e-5, int n_params = 200,
                  std::uint64_t seed = 7);

}  // namespace exfilscope
