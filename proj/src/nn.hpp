#ifndef WSSL_NN_HPP
#define WSSL_NN_HPP

#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "matrix.hpp"
#include "rng.hpp"

namespace wssl {

enum class LayerKind { Dense, ReLU, Sigmoid, Softmax };

struct LayerSpec {
    LayerKind kind;
    std::size_t in_dim = 0;   // Dense only
    std::size_t out_dim = 0;  // Dense only

    static LayerSpec dense(std::size_t in, std::size_t out) { return {LayerKind::Dense, in, out}; }
    static LayerSpec relu() { return {LayerKind::ReLU}; }
    static LayerSpec sigmoid() { return {LayerKind::Sigmoid}; }
    static LayerSpec softmax() { return {LayerKind::Softmax}; }
};

const char* layer_kind_name(LayerKind kind);

// Checks Dense dims chain (activations preserve width). Returns the model's
// output width given `input_dim`, throwing on any mismatch.
std::size_t validate_specs(const std::vector<LayerSpec>& specs, std::size_t input_dim);

// Ordered named tensors. Order is deterministic (layer index order), which
// averaging and serialization rely on.
struct ParamSet {
    std::vector<std::pair<std::string, Matrix>> entries;

    std::size_t count() const { return entries.size(); }
    Matrix& tensor(std::size_t i) { return entries[i].second; }
    const Matrix& tensor(std::size_t i) const { return entries[i].second; }
    const std::string& name(std::size_t i) const { return entries[i].first; }

    // Throws unless `other` has the same names and shapes in the same order.
    void ensure_aligned(const ParamSet& other, const std::string& what) const;
};

double max_abs_diff(const ParamSet& a, const ParamSet& b);

// Weight/bias tensors for each Dense layer, uniform in +-sqrt(6/(in+out)).
ParamSet init_params(const std::vector<LayerSpec>& specs, Rng& rng);
ParamSet zeros_like(const ParamSet& params);

// Cached layer-boundary values from a forward pass: values[0] is the input,
// values[k+1] the output of layer k.
struct ForwardTrace {
    std::vector<Matrix> values;
    std::size_t batch = 0;

    std::size_t layer_count() const { return values.empty() ? 0 : values.size() - 1; }
    const Matrix& output() const { return values.back(); }
};

enum class LossKind { BinaryCrossEntropy, CrossEntropy };

const char* loss_kind_name(LossKind kind);

// out = input * weight + bias, bias broadcast over rows.
Matrix dense_forward(const Matrix& input, const Matrix& weight, const Matrix& bias);

// Elementwise ReLU/sigmoid; Softmax row-wise with max subtraction.
Matrix activation_forward(LayerKind kind, const Matrix& input);

ForwardTrace model_forward(const std::vector<LayerSpec>& specs, const ParamSet& params,
                           const Matrix& input);

struct LossResult {
    double loss = 0.0;
    Matrix grad;  // d(loss)/d(pred), or d(loss)/d(pre-activation) if fused
};

// Mean-over-batch loss. Predictions are clamped to [1e-12, 1-1e-12] before
// the logs. `grad` is taken w.r.t. the predictions.
LossResult loss_eval(LossKind kind, const Matrix& pred, const Matrix& target);

// Same loss value, but `grad` is taken at the matching head's pre-activation
// ((pred - target) / batch). Pair with backward(..., GradAnchor::FinalPreactivation).
LossResult loss_eval_fused(LossKind kind, const Matrix& pred, const Matrix& target);

enum class GradAnchor {
    Output,              // grad_output is d(loss)/d(model output)
    FinalPreactivation,  // d(loss)/d(input of the final activation layer)
};

struct BackwardResult {
    ParamSet param_grads;
    Matrix grad_input;  // gradient at the model input (the cut-layer gradient)
};

// Exact reverse-mode gradients through the traced forward pass.
BackwardResult model_backward(const std::vector<LayerSpec>& specs, const ParamSet& params,
                              const ForwardTrace& trace, const Matrix& grad_output,
                              GradAnchor anchor = GradAnchor::Output);

// p <- p - lr * g for every tensor.
void sgd_step(ParamSet& params, const ParamSet& grads, double lr);

// Class-index labels (n x 1) to the target layout the loss expects:
// n x 1 {0,1} for BCE, n x class_count one-hot for CE.
Matrix loss_targets(const Matrix& labels, std::size_t class_count, LossKind kind);

// Fraction of rows classified correctly: threshold 0.5 for a 1-column
// sigmoid head, row argmax otherwise. `labels` are class indices.
double accuracy(const Matrix& pred, const Matrix& labels);

} // namespace wssl

#endif
