#ifndef WSSL_SPLIT_HPP
#define WSSL_SPLIT_HPP

#include <cstdint>
#include <map>
#include <vector>

#include "data.hpp"
#include "nn.hpp"

namespace wssl {

// Client-side model half plus its local partition. Forward traces are
// retained per batch_id until the matching gradient arrives.
struct ClientNode {
    std::int32_t client_id = 0;
    std::vector<LayerSpec> specs;
    ParamSet params;
    Dataset local_data;
    double lr = 0.0;

    std::map<std::uint32_t, ForwardTrace> pending_traces;
};

struct ServerNode {
    std::vector<LayerSpec> specs;
    ParamSet params;
    LossKind loss_kind = LossKind::BinaryCrossEntropy;
    double lr = 0.0;
    std::size_t class_count = 2;
};

// The payloads crossing the cut layer. Both are plain value types: mutating
// an emitted batch cannot reach the peer's internal state.
struct ActivationBatch {
    std::int32_t client_id = 0;
    std::uint32_t batch_id = 0;
    Matrix activations;  // detached
    Matrix labels;       // class indices, n x 1
};

struct GradientBatch {
    std::int32_t client_id = 0;
    std::uint32_t batch_id = 0;
    Matrix cut_grad;  // shape of the matching activations
    double loss = 0.0;
};

// Forward through the client half; the trace stays on the client, the
// emitted activations are a detached copy.
ActivationBatch client_forward(ClientNode& client, const Matrix& x, const Matrix& y,
                               std::uint32_t batch_id);

// Loss, cut-layer gradient, and one SGD step on the server parameters. The
// cut gradient comes from the same forward pass, before the update.
GradientBatch server_train_step(ServerNode& server, const ActivationBatch& ab);

// Backward from the cut gradient through the retained trace, one SGD step
// on the client parameters, trace released. Unknown or replayed batch_id is
// a protocol violation.
void client_apply_gradient(ClientNode& client, const GradientBatch& gb);

struct ComposedModel {
    std::vector<LayerSpec> specs;
    ParamSet params;
    std::size_t client_layer_count = 0;   // cut position within specs
    std::size_t client_tensor_count = 0;  // cut position within params
};

// Client half then server half as one monolithic model;
// forward(composed) == server(client(x)).
ComposedModel compose(const std::vector<LayerSpec>& client_specs, const ParamSet& client_params,
                      const std::vector<LayerSpec>& server_specs, const ParamSet& server_params);
ComposedModel compose(const ClientNode& client, const ServerNode& server);

// Weighted sum with weights renormalized over the provided list.
ParamSet global_average(const std::vector<ParamSet>& params_list,
                        const std::vector<double>& weights);

void broadcast_global(const ParamSet& theta_global, std::vector<ClientNode>& clients);

} // namespace wssl

#endif
