#include "nn.hpp"

#include <algorithm>
#include <cmath>

#include "error.hpp"

namespace wssl {

namespace {

constexpr double kProbClamp = 1e-12;

double clamp_prob(double p) {
    return std::min(std::max(p, kProbClamp), 1.0 - kProbClamp);
}

} // namespace

const char* layer_kind_name(LayerKind kind) {
    switch (kind) {
        case LayerKind::Dense: return "Dense";
        case LayerKind::ReLU: return "ReLU";
        case LayerKind::Sigmoid: return "Sigmoid";
        case LayerKind::Softmax: return "Softmax";
    }
    return "?";
}

const char* loss_kind_name(LossKind kind) {
    return kind == LossKind::BinaryCrossEntropy ? "binary_cross_entropy" : "cross_entropy";
}

std::size_t validate_specs(const std::vector<LayerSpec>& specs, std::size_t input_dim) {
    std::size_t width = input_dim;
    for (std::size_t k = 0; k < specs.size(); ++k) {
        const LayerSpec& s = specs[k];
        if (s.kind == LayerKind::Dense) {
            if (s.in_dim == 0 || s.out_dim == 0)
                fail_invalid("layer " + std::to_string(k) + ": Dense dims must be positive");
            if (s.in_dim != width)
                fail_invalid("layer " + std::to_string(k) + ": Dense expects width " +
                             std::to_string(s.in_dim) + " but gets " + std::to_string(width));
            width = s.out_dim;
        }
        // Activations preserve width.
    }
    return width;
}

void ParamSet::ensure_aligned(const ParamSet& other, const std::string& what) const {
    if (entries.size() != other.entries.size())
        fail_invalid(what + ": parameter sets have " + std::to_string(entries.size()) +
                     " vs " + std::to_string(other.entries.size()) + " tensors");
    for (std::size_t i = 0; i < entries.size(); ++i) {
        if (entries[i].first != other.entries[i].first)
            fail_invalid(what + ": tensor " + std::to_string(i) + " named '" + entries[i].first +
                         "' vs '" + other.entries[i].first + "'");
        if (!entries[i].second.same_shape(other.entries[i].second))
            fail_invalid(what + ": tensor '" + entries[i].first + "' shaped " +
                         entries[i].second.shape_str() + " vs " + other.entries[i].second.shape_str());
    }
}

double max_abs_diff(const ParamSet& a, const ParamSet& b) {
    a.ensure_aligned(b, "max_abs_diff");
    double m = 0.0;
    for (std::size_t i = 0; i < a.count(); ++i)
        m = std::max(m, max_abs_diff(a.tensor(i), b.tensor(i)));
    return m;
}

ParamSet init_params(const std::vector<LayerSpec>& specs, Rng& rng) {
    ParamSet out;
    for (std::size_t k = 0; k < specs.size(); ++k) {
        const LayerSpec& s = specs[k];
        if (s.kind != LayerKind::Dense) continue;
        double bound = std::sqrt(6.0 / static_cast<double>(s.in_dim + s.out_dim));
        Matrix weight(s.in_dim, s.out_dim);
        for (double& v : weight.values()) v = rng.uniform(-bound, bound);
        Matrix bias(1, s.out_dim);  // zero
        std::string base = "L" + std::to_string(k);
        out.entries.emplace_back(base + ".weight", std::move(weight));
        out.entries.emplace_back(base + ".bias", std::move(bias));
    }
    return out;
}

ParamSet zeros_like(const ParamSet& params) {
    ParamSet out;
    out.entries.reserve(params.count());
    for (const auto& [name, tensor] : params.entries)
        out.entries.emplace_back(name, Matrix(tensor.rows(), tensor.cols()));
    return out;
}

Matrix dense_forward(const Matrix& input, const Matrix& weight, const Matrix& bias) {
    if (input.cols() != weight.rows())
        fail_invalid("dense_forward: input " + input.shape_str() + " incompatible with weight " +
                     weight.shape_str());
    if (bias.rows() != 1 || bias.cols() != weight.cols())
        fail_invalid("dense_forward: bias " + bias.shape_str() + " must be 1x" +
                     std::to_string(weight.cols()));
    Matrix out = input.matmul(weight);
    for (std::size_t r = 0; r < out.rows(); ++r)
        for (std::size_t c = 0; c < out.cols(); ++c)
            out.at(r, c) += bias.at(0, c);
    return out;
}

Matrix activation_forward(LayerKind kind, const Matrix& input) {
    input.ensure_finite("activation input");
    Matrix out = input;
    switch (kind) {
        case LayerKind::ReLU:
            for (double& v : out.values()) v = v > 0.0 ? v : 0.0;
            break;
        case LayerKind::Sigmoid:
            for (double& v : out.values()) v = 1.0 / (1.0 + std::exp(-v));
            break;
        case LayerKind::Softmax:
            for (std::size_t r = 0; r < out.rows(); ++r) {
                double mx = out.at(r, 0);
                for (std::size_t c = 1; c < out.cols(); ++c) mx = std::max(mx, out.at(r, c));
                double sum = 0.0;
                for (std::size_t c = 0; c < out.cols(); ++c) {
                    double e = std::exp(out.at(r, c) - mx);
                    out.at(r, c) = e;
                    sum += e;
                }
                for (std::size_t c = 0; c < out.cols(); ++c) out.at(r, c) /= sum;
            }
            break;
        case LayerKind::Dense:
            fail_invalid("activation_forward: Dense is not an activation");
    }
    return out;
}

ForwardTrace model_forward(const std::vector<LayerSpec>& specs, const ParamSet& params,
                           const Matrix& input) {
    validate_specs(specs, input.cols());
    ForwardTrace trace;
    trace.batch = input.rows();
    trace.values.reserve(specs.size() + 1);
    trace.values.push_back(input);

    std::size_t param_idx = 0;
    for (std::size_t k = 0; k < specs.size(); ++k) {
        const Matrix& x = trace.values.back();
        const LayerSpec& s = specs[k];
        if (s.kind == LayerKind::Dense) {
            if (param_idx + 1 >= params.count())
                fail_invalid("model_forward: parameter set too small for layer " + std::to_string(k));
            trace.values.push_back(
                dense_forward(x, params.tensor(param_idx), params.tensor(param_idx + 1)));
            param_idx += 2;
        } else {
            trace.values.push_back(activation_forward(s.kind, x));
        }
    }
    if (param_idx != params.count())
        fail_invalid("model_forward: parameter set has " + std::to_string(params.count()) +
                     " tensors, specs consume " + std::to_string(param_idx));
    return trace;
}

namespace {

LossResult loss_eval_impl(LossKind kind, const Matrix& pred, const Matrix& target, bool fused) {
    if (!pred.same_shape(target))
        fail_invalid("loss_eval: pred " + pred.shape_str() + " vs target " + target.shape_str());
    if (pred.rows() == 0)
        fail_invalid("loss_eval: empty batch");
    if (kind == LossKind::BinaryCrossEntropy && pred.cols() != 1)
        fail_invalid("loss_eval: binary cross-entropy expects 1 output column, got " +
                     std::to_string(pred.cols()));
    if (kind == LossKind::CrossEntropy && pred.cols() < 2)
        fail_invalid("loss_eval: cross-entropy expects >= 2 output columns");

    double batch = static_cast<double>(pred.rows());
    double loss = 0.0;
    LossResult res;
    res.grad = Matrix(pred.rows(), pred.cols());

    if (kind == LossKind::BinaryCrossEntropy) {
        for (std::size_t r = 0; r < pred.rows(); ++r) {
            double p = clamp_prob(pred.at(r, 0));
            double y = target.at(r, 0);
            loss += -(y * std::log(p) + (1.0 - y) * std::log(1.0 - p));
            res.grad.at(r, 0) = fused ? (pred.at(r, 0) - y) / batch
                                      : (p - y) / (p * (1.0 - p)) / batch;
        }
    } else {
        for (std::size_t r = 0; r < pred.rows(); ++r) {
            for (std::size_t c = 0; c < pred.cols(); ++c) {
                double p = clamp_prob(pred.at(r, c));
                double y = target.at(r, c);
                if (y != 0.0) loss += -y * std::log(p);
                res.grad.at(r, c) = fused ? (pred.at(r, c) - y) / batch
                                          : -y / p / batch;
            }
        }
    }
    res.loss = loss / batch;
    return res;
}

} // namespace

LossResult loss_eval(LossKind kind, const Matrix& pred, const Matrix& target) {
    return loss_eval_impl(kind, pred, target, false);
}

LossResult loss_eval_fused(LossKind kind, const Matrix& pred, const Matrix& target) {
    return loss_eval_impl(kind, pred, target, true);
}

namespace {

// d(loss)/d(input) of one activation layer given its traced input/output.
Matrix activation_backward(LayerKind kind, const Matrix& input, const Matrix& output,
                           const Matrix& grad_out) {
    Matrix grad_in(grad_out.rows(), grad_out.cols());
    switch (kind) {
        case LayerKind::ReLU:
            for (std::size_t i = 0; i < grad_in.size(); ++i)
                grad_in.values()[i] = input.values()[i] > 0.0 ? grad_out.values()[i] : 0.0;
            break;
        case LayerKind::Sigmoid:
            for (std::size_t i = 0; i < grad_in.size(); ++i) {
                double s = output.values()[i];
                grad_in.values()[i] = grad_out.values()[i] * s * (1.0 - s);
            }
            break;
        case LayerKind::Softmax:
            // Row-wise Jacobian: g_in = s .* (g_out - <g_out, s>).
            for (std::size_t r = 0; r < grad_out.rows(); ++r) {
                double dot = 0.0;
                for (std::size_t c = 0; c < grad_out.cols(); ++c)
                    dot += grad_out.at(r, c) * output.at(r, c);
                for (std::size_t c = 0; c < grad_out.cols(); ++c)
                    grad_in.at(r, c) = output.at(r, c) * (grad_out.at(r, c) - dot);
            }
            break;
        case LayerKind::Dense:
            fail_invalid("activation_backward: Dense is not an activation");
    }
    return grad_in;
}

} // namespace

BackwardResult model_backward(const std::vector<LayerSpec>& specs, const ParamSet& params,
                              const ForwardTrace& trace, const Matrix& grad_output,
                              GradAnchor anchor) {
    if (trace.layer_count() != specs.size())
        fail_invalid("model_backward: trace has " + std::to_string(trace.layer_count()) +
                     " layers, specs " + std::to_string(specs.size()));
    if (anchor == GradAnchor::Output && !grad_output.same_shape(trace.output()))
        fail_invalid("model_backward: grad_output " + grad_output.shape_str() +
                     " does not match traced output " + trace.output().shape_str());

    std::size_t start_layer = specs.size();
    if (anchor == GradAnchor::FinalPreactivation) {
        if (specs.empty() || (specs.back().kind != LayerKind::Sigmoid &&
                              specs.back().kind != LayerKind::Softmax))
            fail_invalid("model_backward: fused anchor requires a Sigmoid or Softmax final layer");
        start_layer = specs.size() - 1;  // skip the head activation
        if (!grad_output.same_shape(trace.values[start_layer]))
            fail_invalid("model_backward: fused grad shape " + grad_output.shape_str() +
                         " does not match head pre-activation");
    }

    BackwardResult res;
    res.param_grads = zeros_like(params);
    Matrix grad = grad_output;

    // Tensor index just past the last Dense layer's pair within [0, start_layer).
    std::size_t param_idx = 0;
    for (std::size_t k = 0; k < start_layer; ++k)
        if (specs[k].kind == LayerKind::Dense) param_idx += 2;

    for (std::size_t k = start_layer; k-- > 0;) {
        const LayerSpec& s = specs[k];
        const Matrix& layer_in = trace.values[k];
        const Matrix& layer_out = trace.values[k + 1];
        if (s.kind == LayerKind::Dense) {
            param_idx -= 2;
            const Matrix& weight = params.tensor(param_idx);
            // grad_weight = in^T * grad; grad_bias = column sums of grad.
            res.param_grads.tensor(param_idx) = layer_in.transposed().matmul(grad);
            Matrix& gbias = res.param_grads.tensor(param_idx + 1);
            for (std::size_t r = 0; r < grad.rows(); ++r)
                for (std::size_t c = 0; c < grad.cols(); ++c)
                    gbias.at(0, c) += grad.at(r, c);
            grad = grad.matmul(weight.transposed());
        } else {
            grad = activation_backward(s.kind, layer_in, layer_out, grad);
        }
    }
    res.grad_input = std::move(grad);
    return res;
}

void sgd_step(ParamSet& params, const ParamSet& grads, double lr) {
    params.ensure_aligned(grads, "sgd_step");
    if (!(lr >= 0.0))
        fail_invalid("sgd_step: learning rate must be non-negative");
    for (std::size_t i = 0; i < params.count(); ++i) {
        Matrix& p = params.tensor(i);
        const Matrix& g = grads.tensor(i);
        for (std::size_t j = 0; j < p.size(); ++j)
            p.values()[j] -= lr * g.values()[j];
    }
}

Matrix loss_targets(const Matrix& labels, std::size_t class_count, LossKind kind) {
    if (labels.cols() != 1)
        fail_invalid("loss_targets: labels must be n x 1 class indices");
    if (kind == LossKind::BinaryCrossEntropy) {
        if (class_count > 2)
            fail_invalid("loss_targets: binary cross-entropy with " + std::to_string(class_count) +
                         " classes");
        return labels;
    }
    Matrix out(labels.rows(), class_count);
    for (std::size_t r = 0; r < labels.rows(); ++r) {
        auto cls = static_cast<std::size_t>(labels.at(r, 0));
        if (cls >= class_count)
            fail_invalid("loss_targets: label " + std::to_string(cls) + " out of range");
        out.at(r, cls) = 1.0;
    }
    return out;
}

double accuracy(const Matrix& pred, const Matrix& labels) {
    if (pred.rows() != labels.rows() || labels.cols() != 1)
        fail_invalid("accuracy: pred " + pred.shape_str() + " vs labels " + labels.shape_str());
    if (pred.rows() == 0) return 0.0;
    std::size_t correct = 0;
    for (std::size_t r = 0; r < pred.rows(); ++r) {
        std::size_t predicted;
        if (pred.cols() == 1) {
            predicted = pred.at(r, 0) >= 0.5 ? 1 : 0;
        } else {
            predicted = 0;
            for (std::size_t c = 1; c < pred.cols(); ++c)
                if (pred.at(r, c) > pred.at(r, predicted)) predicted = c;
        }
        if (predicted == static_cast<std::size_t>(labels.at(r, 0))) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(pred.rows());
}

} // namespace wssl
