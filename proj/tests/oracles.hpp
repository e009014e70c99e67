#ifndef WSSL_TEST_ORACLES_HPP
#define WSSL_TEST_ORACLES_HPP

// Independent numerical oracles used by the unit and acceptance tests.
// The central-difference gradient checker evaluates the loss through the
// public forward/loss entry points only, so it cannot share a bug with
// the analytic backward pass it is checking.

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "matrix.hpp"
#include "nn.hpp"
#include "rng.hpp"

namespace wssl::testing {

inline bool close(double a, double b, double rel, double abs) {
    double diff = std::fabs(a - b);
    if (diff <= abs) return true;
    return diff <= rel * std::max(std::fabs(a), std::fabs(b));
}

inline double forward_loss(const std::vector<LayerSpec>& specs, const ParamSet& params,
                           const Matrix& x, const Matrix& targets, LossKind loss) {
    ForwardTrace trace = model_forward(specs, params, x);
    return loss_eval(loss, trace.output(), targets).loss;
}

// Central differences over every parameter entry: (f(p+h) - f(p-h)) / 2h.
inline ParamSet numeric_param_grads(const std::vector<LayerSpec>& specs, ParamSet params,
                                    const Matrix& x, const Matrix& targets, LossKind loss,
                                    double h = 1e-5) {
    ParamSet grads = zeros_like(params);
    for (std::size_t t = 0; t < params.count(); ++t) {
        auto vals = params.tensor(t).values();
        auto out = grads.tensor(t).values();
        for (std::size_t j = 0; j < vals.size(); ++j) {
            double saved = vals[j];
            vals[j] = saved + h;
            double up = forward_loss(specs, params, x, targets, loss);
            vals[j] = saved - h;
            double down = forward_loss(specs, params, x, targets, loss);
            vals[j] = saved;
            out[j] = (up - down) / (2.0 * h);
        }
    }
    return grads;
}

// Central differences over every input entry.
inline Matrix numeric_input_grads(const std::vector<LayerSpec>& specs, const ParamSet& params,
                                  Matrix x, const Matrix& targets, LossKind loss,
                                  double h = 1e-5) {
    Matrix grads(x.rows(), x.cols());
    auto vals = x.values();
    auto out = grads.values();
    for (std::size_t j = 0; j < vals.size(); ++j) {
        double saved = vals[j];
        vals[j] = saved + h;
        double up = forward_loss(specs, params, x, targets, loss);
        vals[j] = saved - h;
        double down = forward_loss(specs, params, x, targets, loss);
        vals[j] = saved;
        out[j] = (up - down) / (2.0 * h);
    }
    return grads;
}

struct RandomModel {
    std::vector<LayerSpec> specs;
    ParamSet params;
    LossKind loss = LossKind::BinaryCrossEntropy;
    std::size_t class_count = 2;
    Matrix x;        // batch inputs
    Matrix targets;  // already in the loss's target layout
};

// Random MLP in the checker's envelope: up to 4 Dense layers, widths <= 16,
// batch <= 8, ReLU or Sigmoid between layers, sigmoid+BCE or softmax+CE head.
inline RandomModel random_model(Rng& rng) {
    RandomModel m;
    std::size_t dense_layers = 1 + rng.below(4);
    std::size_t batch = 1 + rng.below(8);
    std::size_t in_dim = 1 + rng.below(16);

    bool bce = rng.below(2) == 0;
    m.loss = bce ? LossKind::BinaryCrossEntropy : LossKind::CrossEntropy;
    m.class_count = bce ? 2 : 2 + rng.below(4);
    std::size_t out_dim = bce ? 1 : m.class_count;

    std::size_t cur = in_dim;
    for (std::size_t i = 0; i < dense_layers; ++i) {
        bool last = i + 1 == dense_layers;
        std::size_t next = last ? out_dim : 1 + rng.below(16);
        m.specs.push_back(LayerSpec::dense(cur, next));
        if (!last) m.specs.push_back(rng.below(2) == 0 ? LayerSpec::relu() : LayerSpec::sigmoid());
        cur = next;
    }
    m.specs.push_back(bce ? LayerSpec::sigmoid() : LayerSpec::softmax());

    m.params = init_params(m.specs, rng);
    // Zero-initialized biases park whole rows of preactivations exactly on
    // the ReLU kink whenever an earlier layer zeroes a row; the analytic
    // derivative convention at z == 0 and a central difference then disagree
    // by construction. Jitter the biases so the checker probes generic,
    // differentiable points (and exercises bias gradients at nonzero values).
    for (std::size_t t = 0; t < m.params.count(); ++t)
        if (m.params.name(t).ends_with(".bias"))
            for (double& v : m.params.tensor(t).values()) v = rng.uniform(-0.5, 0.5);
    m.x = Matrix(batch, in_dim);
    for (double& v : m.x.values()) v = rng.uniform(-2.0, 2.0);

    Matrix labels(batch, 1);
    for (std::size_t r = 0; r < batch; ++r)
        labels.at(r, 0) = static_cast<double>(rng.below(m.class_count));
    m.targets = loss_targets(labels, m.class_count, m.loss);
    return m;
}

} // namespace wssl::testing

#endif
