#ifndef WSSL_SELECTION_HPP
#define WSSL_SELECTION_HPP

#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include "split.hpp"

namespace wssl {

struct ImportanceRecord {
    std::int32_t client_id = 0;
    double beta = 0.0;   // raw importance
    double gamma = 0.0;  // normalized weight, sums to 1 across a round
};

struct SelectionOutcome {
    std::size_t round_index = 0;
    std::vector<std::int32_t> selected_ids;  // in sampled order, no duplicates
    std::size_t k = 0;
    std::vector<ImportanceRecord> records;   // one per client, id order
    bool override_clamped = false;
};

// Raw importance of one client's current half: inverse composed-model
// validation loss, 1 / (L_val + 1e-8).
double importance_inverse_loss(const ClientNode& client, const ServerNode& server,
                               const Dataset& validation);

// Alternative strategy: composed-model validation accuracy + 1e-3.
double importance_accuracy(const ClientNode& client, const ServerNode& server,
                           const Dataset& validation);

using ImportanceFn = std::function<double(const ClientNode&, const ServerNode&, const Dataset&)>;

// gammas sum to 1, order preserved. Requires at least one positive beta.
std::vector<double> normalize_weights(const std::vector<double>& betas);

// Literal count rule: max(round(alpha * mean(gammas)), 1). Once gammas are
// normalized their mean is 1/alpha, so without an override this is always 1;
// the override reproduces multi-client rounds. An out-of-range override is
// clamped to [1, alpha] and flagged.
std::size_t select_count(std::size_t alpha, const std::vector<double>& gammas,
                         std::optional<std::size_t> override_count, bool* clamped = nullptr);

// k distinct ids by successive renormalized draws; the first draw's marginal
// distribution is exactly `gammas`. A zero-weight remainder falls back to
// uniform draws so k ids always come back.
std::vector<std::int32_t> weighted_sample_without_replacement(
    const std::vector<std::int32_t>& ids, const std::vector<double>& gammas, std::size_t k,
    Rng& rng);

// One full selection round: round 0 takes every client with uniform weights
// recorded; later rounds compute importance, normalize, size, and sample.
SelectionOutcome select_round(std::size_t round_index, std::size_t alpha,
                              const std::vector<ClientNode>& clients, const ServerNode& server,
                              const Dataset& validation,
                              std::optional<std::size_t> override_count,
                              const ImportanceFn& importance, Rng& rng);

} // namespace wssl

#endif
