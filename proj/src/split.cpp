#include "split.hpp"

#include "error.hpp"

namespace wssl {

ActivationBatch client_forward(ClientNode& client, const Matrix& x, const Matrix& y,
                               std::uint32_t batch_id) {
    x.ensure_finite("client input batch");
    if (x.rows() != y.rows())
        fail_invalid("client_forward: feature rows " + std::to_string(x.rows()) +
                     " vs label rows " + std::to_string(y.rows()));
    ForwardTrace trace = model_forward(client.specs, client.params, x);

    ActivationBatch ab;
    ab.client_id = client.client_id;
    ab.batch_id = batch_id;
    ab.activations = trace.output();
    ab.labels = y;
    client.pending_traces[batch_id] = std::move(trace);
    return ab;
}

GradientBatch server_train_step(ServerNode& server, const ActivationBatch& ab) {
    ab.activations.ensure_finite("activation batch");
    ForwardTrace trace = model_forward(server.specs, server.params, ab.activations);
    Matrix targets = loss_targets(ab.labels, server.class_count, server.loss_kind);
    LossResult lr = loss_eval_fused(server.loss_kind, trace.output(), targets);
    BackwardResult back = model_backward(server.specs, server.params, trace, lr.grad,
                                         GradAnchor::FinalPreactivation);
    sgd_step(server.params, back.param_grads, server.lr);

    GradientBatch gb;
    gb.client_id = ab.client_id;
    gb.batch_id = ab.batch_id;
    gb.cut_grad = std::move(back.grad_input);
    gb.loss = lr.loss;
    return gb;
}

void client_apply_gradient(ClientNode& client, const GradientBatch& gb) {
    auto it = client.pending_traces.find(gb.batch_id);
    if (it == client.pending_traces.end())
        fail_protocol("client " + std::to_string(client.client_id) +
                      ": no retained trace for batch " + std::to_string(gb.batch_id) +
                      " (unknown or already consumed)");
    if (!gb.cut_grad.same_shape(it->second.output()))
        fail_invalid("client_apply_gradient: cut gradient " + gb.cut_grad.shape_str() +
                     " does not match activations " + it->second.output().shape_str());
    BackwardResult back = model_backward(client.specs, client.params, it->second, gb.cut_grad);
    client.pending_traces.erase(it);  // single-use
    sgd_step(client.params, back.param_grads, client.lr);
}

ComposedModel compose(const std::vector<LayerSpec>& client_specs, const ParamSet& client_params,
                      const std::vector<LayerSpec>& server_specs, const ParamSet& server_params) {
    ComposedModel m;
    m.specs = client_specs;
    m.specs.insert(m.specs.end(), server_specs.begin(), server_specs.end());
    m.client_layer_count = client_specs.size();
    m.client_tensor_count = client_params.count();

    m.params = client_params;
    // Server tensor names are re-derived from their position in the composed
    // spec list so the result looks like one model.
    for (std::size_t i = 0; i < server_params.count(); ++i) {
        const std::string& name = server_params.name(i);
        auto dot = name.find('.');
        std::string renamed = name;
        if (name.size() > 1 && name[0] == 'L' && dot != std::string::npos) {
            std::size_t layer = std::stoul(name.substr(1, dot - 1));
            renamed = "L" + std::to_string(layer + client_specs.size()) + name.substr(dot);
        }
        m.params.entries.emplace_back(renamed, server_params.tensor(i));
    }

    // Eagerly catch a cut-width mismatch when both halves pin it.
    std::size_t client_out = 0;
    for (auto it = client_specs.rbegin(); it != client_specs.rend(); ++it)
        if (it->kind == LayerKind::Dense) { client_out = it->out_dim; break; }
    std::size_t server_in = 0;
    for (const auto& s : server_specs)
        if (s.kind == LayerKind::Dense) { server_in = s.in_dim; break; }
    if (client_out != 0 && server_in != 0 && client_out != server_in)
        fail_invalid("compose: client cut width " + std::to_string(client_out) +
                     " does not match server input width " + std::to_string(server_in));
    return m;
}

ComposedModel compose(const ClientNode& client, const ServerNode& server) {
    return compose(client.specs, client.params, server.specs, server.params);
}

ParamSet global_average(const std::vector<ParamSet>& params_list,
                        const std::vector<double>& weights) {
    if (params_list.empty())
        fail_invalid("global_average: empty parameter list");
    if (params_list.size() != weights.size())
        fail_invalid("global_average: " + std::to_string(params_list.size()) + " parameter sets vs " +
                     std::to_string(weights.size()) + " weights");
    double total = 0.0;
    for (double w : weights) {
        if (w < 0.0)
            fail_invalid("global_average: negative weight");
        total += w;
    }
    if (total <= 0.0)
        fail_invalid("global_average: weights sum to zero");

    ParamSet out = zeros_like(params_list[0]);
    for (std::size_t i = 0; i < params_list.size(); ++i) {
        params_list[0].ensure_aligned(params_list[i], "global_average");
        double w = weights[i] / total;
        for (std::size_t t = 0; t < out.count(); ++t) {
            const Matrix& src = params_list[i].tensor(t);
            Matrix& dst = out.tensor(t);
            for (std::size_t j = 0; j < dst.size(); ++j)
                dst.values()[j] += w * src.values()[j];
        }
    }
    return out;
}

void broadcast_global(const ParamSet& theta_global, std::vector<ClientNode>& clients) {
    for (ClientNode& c : clients) {
        c.params.ensure_aligned(theta_global, "broadcast_global (client " +
                                                  std::to_string(c.client_id) + ")");
        c.params = theta_global;
    }
}

} // namespace wssl
