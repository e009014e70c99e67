#include "selection.hpp"

#include <algorithm>
#include <cmath>

#include "error.hpp"

namespace wssl {

namespace {

constexpr double kLossEpsilon = 1e-8;
constexpr double kAccuracyEpsilon = 1e-3;

ForwardTrace composed_validation_forward(const ClientNode& client, const ServerNode& server,
                                         const Dataset& validation) {
    if (validation.rows() == 0)
        fail_invalid("importance: validation set is empty");
    ComposedModel m = compose(client, server);
    return model_forward(m.specs, m.params, validation.features);
}

} // namespace

double importance_inverse_loss(const ClientNode& client, const ServerNode& server,
                               const Dataset& validation) {
    ForwardTrace trace = composed_validation_forward(client, server, validation);
    Matrix targets = loss_targets(validation.labels, server.class_count, server.loss_kind);
    double val_loss = loss_eval(server.loss_kind, trace.output(), targets).loss;
    return 1.0 / (val_loss + kLossEpsilon);
}

double importance_accuracy(const ClientNode& client, const ServerNode& server,
                           const Dataset& validation) {
    ForwardTrace trace = composed_validation_forward(client, server, validation);
    return accuracy(trace.output(), validation.labels) + kAccuracyEpsilon;
}

std::vector<double> normalize_weights(const std::vector<double>& betas) {
    if (betas.empty())
        fail_invalid("normalize_weights: empty weight list");
    double sum = 0.0;
    for (double b : betas) {
        if (b < 0.0)
            fail_invalid("normalize_weights: negative importance weight");
        sum += b;
    }
    if (sum <= 0.0)
        fail_invalid("normalize_weights: all importance weights are zero");
    std::vector<double> gammas(betas.size());
    for (std::size_t i = 0; i < betas.size(); ++i) gammas[i] = betas[i] / sum;
    return gammas;
}

std::size_t select_count(std::size_t alpha, const std::vector<double>& gammas,
                         std::optional<std::size_t> override_count, bool* clamped) {
    if (alpha == 0)
        fail_invalid("select_count: alpha must be >= 1");
    if (clamped) *clamped = false;
    if (override_count) {
        std::size_t k = *override_count;
        if (k < 1 || k > alpha) {
            if (clamped) *clamped = true;
            k = std::clamp<std::size_t>(k, 1, alpha);
        }
        return k;
    }
    double mean = 0.0;
    for (double g : gammas) mean += g;
    mean /= static_cast<double>(gammas.size());
    auto k = static_cast<long long>(std::llround(static_cast<double>(alpha) * mean));
    k = std::max<long long>(k, 1);
    return std::min<std::size_t>(static_cast<std::size_t>(k), alpha);
}

std::vector<std::int32_t> weighted_sample_without_replacement(
    const std::vector<std::int32_t>& ids, const std::vector<double>& gammas, std::size_t k,
    Rng& rng) {
    if (ids.size() != gammas.size())
        fail_invalid("weighted_sample: " + std::to_string(ids.size()) + " ids vs " +
                     std::to_string(gammas.size()) + " weights");
    if (k > ids.size())
        fail_invalid("weighted_sample: k=" + std::to_string(k) + " exceeds population " +
                     std::to_string(ids.size()));

    std::vector<std::int32_t> pool = ids;
    std::vector<double> w = gammas;
    std::vector<std::int32_t> picked;
    picked.reserve(k);
    while (picked.size() < k) {
        double total = 0.0;
        for (double v : w) total += v;
        std::size_t chosen;
        if (total > 0.0) {
            double u = rng.uniform() * total;
            double acc = 0.0;
            chosen = w.size() - 1;  // guard against accumulated rounding
            for (std::size_t i = 0; i < w.size(); ++i) {
                acc += w[i];
                if (u < acc) { chosen = i; break; }
            }
        } else {
            // All remaining weights zero: uniform over the remainder.
            chosen = static_cast<std::size_t>(rng.below(pool.size()));
        }
        picked.push_back(pool[chosen]);
        pool.erase(pool.begin() + static_cast<std::ptrdiff_t>(chosen));
        w.erase(w.begin() + static_cast<std::ptrdiff_t>(chosen));
    }
    return picked;
}

SelectionOutcome select_round(std::size_t round_index, std::size_t alpha,
                              const std::vector<ClientNode>& clients, const ServerNode& server,
                              const Dataset& validation,
                              std::optional<std::size_t> override_count,
                              const ImportanceFn& importance, Rng& rng) {
    if (alpha == 0 || clients.size() != alpha)
        fail_invalid("select_round: expected " + std::to_string(alpha) + " clients, have " +
                     std::to_string(clients.size()));

    SelectionOutcome out;
    out.round_index = round_index;
    out.records.reserve(alpha);

    if (round_index == 0) {
        // Epoch-0 rule: every client participates, weights uniform.
        out.k = alpha;
        for (std::size_t i = 0; i < alpha; ++i) {
            out.selected_ids.push_back(clients[i].client_id);
            out.records.push_back({clients[i].client_id, 1.0, 1.0 / static_cast<double>(alpha)});
        }
        return out;
    }

    std::vector<double> betas;
    betas.reserve(alpha);
    for (const ClientNode& c : clients)
        betas.push_back(importance(c, server, validation));
    std::vector<double> gammas = normalize_weights(betas);

    std::vector<std::int32_t> ids;
    ids.reserve(alpha);
    for (std::size_t i = 0; i < alpha; ++i) {
        ids.push_back(clients[i].client_id);
        out.records.push_back({clients[i].client_id, betas[i], gammas[i]});
    }

    out.k = select_count(alpha, gammas, override_count, &out.override_clamped);
    out.selected_ids = weighted_sample_without_replacement(ids, gammas, out.k, rng);
    return out;
}

} // namespace wssl
