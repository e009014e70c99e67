#ifndef WSSL_EXPERIMENT_HPP
#define WSSL_EXPERIMENT_HPP

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "data.hpp"
#include "selection.hpp"
#include "split.hpp"

namespace wssl {

enum class ImportanceKind { InverseLoss, Accuracy };
enum class TransportKind { InProc, Tcp };

struct TransportConfig {
    TransportKind kind = TransportKind::InProc;
    std::uint16_t port = 0;  // tcp only; 0 picks a free port
};

// "inproc" or "tcp:<port>".
TransportConfig parse_transport(const std::string& text);
std::string transport_to_string(const TransportConfig& t);

ImportanceKind parse_importance(const std::string& text);
const char* importance_to_string(ImportanceKind kind);

struct DataConfig {
    enum class Kind { Csv, Synth } kind = Kind::Synth;
    // csv
    std::string path;
    std::string label_column = "label";
    // synth
    std::size_t rows = 2000;
    std::size_t dim = 20;
    std::size_t classes = 2;
    double separation = 6.0;
};

struct ExperimentConfig {
    DataConfig data;
    std::size_t n_clients = 4;
    std::size_t rounds = 20;
    std::size_t batch_size = 128;
    double client_lr = 0.05;
    double server_lr = 0.05;
    std::optional<std::size_t> clients_per_round;  // overrides the literal count rule
    bool broadcast_global = true;
    ImportanceKind importance = ImportanceKind::InverseLoss;
    TransportConfig transport;
    std::uint64_t seed = 0;
    double train_fraction = 0.8;
    std::string output_path;      // metrics CSV; empty writes nothing
    bool timing_in_csv = false;   // real per-round ms in the CSV breaks byte-identity
    bool threaded_clients = false;
};

// Strict JSON schema (unknown keys rejected); all fields optional with the
// defaults above. Throws config errors with the offending key in the message.
ExperimentConfig config_from_json(const std::string& text);
ExperimentConfig config_from_file(const std::string& path);
void validate_config(const ExperimentConfig& cfg);

// Default architecture: two Dense+ReLU client layers down to a width-8 cut,
// a three-Dense server stack, sigmoid head for two classes, softmax above.
std::vector<LayerSpec> default_client_specs(std::size_t input_dim);
std::vector<LayerSpec> default_server_specs(std::size_t class_count);
LossKind head_loss(std::size_t class_count);

// Shared by the split run and the centralized baseline so both see the exact
// same rows: load or synthesize, stratified train/test split, scale with
// train statistics, partition the train side, hash each partition.
struct PreparedData {
    Dataset train;
    Dataset test;
    std::vector<Dataset> parts;
    std::vector<PartitionDigest> digests;
    ScalerParams scaler;
};

PreparedData prepare_data(const ExperimentConfig& cfg);

struct RoundReport {
    std::size_t round = 0;
    std::vector<std::int32_t> selected;  // sampled order; empty for centralized
    std::vector<double> gammas;          // client-id order
    double train_loss = 0.0;             // mean over the round's batches
    double val_accuracy = 0.0;           // composed global model on held-out data
    double wall_ms = 0.0;
};

struct RunResult {
    std::vector<RoundReport> rounds;
    std::vector<ParamSet> client_params;  // final per-client halves
    ParamSet server_params;
    std::vector<PartitionDigest> digests;

    double final_val_accuracy() const {
        return rounds.empty() ? 0.0 : rounds.back().val_accuracy;
    }
};

// Full split-learning loop over the configured transport. Metrics are
// written to cfg.output_path at completion; on failure the rounds finished
// so far are flushed before the error propagates.
RunResult run_wssl(const ExperimentConfig& cfg);

// Composed (unsplit) model trained by plain SGD on the pooled training set,
// front tensors stepped with client_lr and back tensors with server_lr.
RunResult run_centralized(const ExperimentConfig& cfg);

// One SGD step of the composed model on one batch; returns the batch loss.
// The exact monolithic counterpart of one split batch step.
double composed_train_step(ComposedModel& model, const Matrix& x, const Matrix& labels,
                           LossKind loss, std::size_t class_count, double client_lr,
                           double server_lr);

// Inverse of compose(): client-half and server-half parameter sets with
// their layer-local names restored.
std::pair<ParamSet, ParamSet> split_composed(const ComposedModel& model);

// Header `round,selected,gammas,train_loss,val_accuracy,wall_ms`; lists
// semicolon-joined; floats printed to 6 significant digits. wall_ms is
// written as 0 unless `timing` (byte-identical reruns need stable bytes).
std::string metrics_csv(const std::vector<RoundReport>& reports, bool timing);
void emit_metrics(const std::vector<RoundReport>& reports, const std::string& path, bool timing);

// JSON digest manifest: {"digests":[{"client":id,"rows":n,"sha256":hex},...]}
void write_digest_manifest(const std::vector<PartitionDigest>& digests, const std::string& path);
std::vector<PartitionDigest> read_digest_manifest(const std::string& path);

// Recomputes the configured partitions and compares against the manifest.
// Returns the client ids whose digests do not match (empty means verified).
std::vector<std::int32_t> verify_digest_manifest(const ExperimentConfig& cfg,
                                                 const std::string& manifest_path);

} // namespace wssl

#endif
