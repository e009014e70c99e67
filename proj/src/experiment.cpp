#include "experiment.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <mutex>
#include <sstream>
#include <thread>

#include "json.hpp"

#include "error.hpp"
#include "transport.hpp"

namespace wssl {

using json = nlohmann::json;

namespace {

constexpr std::uint32_t kFetchGlobal = 0xFFFFFFFFu;
constexpr std::uint32_t kFetchServer = 0xFFFFFFFEu;
constexpr std::chrono::milliseconds kRecvTimeout(30000);

std::string fmt_g6(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.6g", v);
    return buf;
}

} // namespace

// ------------------------------------------------------------------ config

TransportConfig parse_transport(const std::string& text) {
    if (text == "inproc") return {TransportKind::InProc, 0};
    if (text.rfind("tcp:", 0) == 0) {
        const std::string num = text.substr(4);
        if (num.empty()) fail_config("transport: missing port in '" + text + "'");
        char* end = nullptr;
        const unsigned long port = std::strtoul(num.c_str(), &end, 10);
        if (*end != '\0' || port > 65535)
            fail_config("transport: bad port in '" + text + "'");
        return {TransportKind::Tcp, static_cast<std::uint16_t>(port)};
    }
    fail_config("transport must be 'inproc' or 'tcp:<port>', got '" + text + "'");
}

std::string transport_to_string(const TransportConfig& t) {
    if (t.kind == TransportKind::InProc) return "inproc";
    return "tcp:" + std::to_string(t.port);
}

ImportanceKind parse_importance(const std::string& text) {
    if (text == "inverse_loss") return ImportanceKind::InverseLoss;
    if (text == "accuracy") return ImportanceKind::Accuracy;
    fail_config("importance must be 'inverse_loss' or 'accuracy', got '" + text + "'");
}

const char* importance_to_string(ImportanceKind kind) {
    return kind == ImportanceKind::InverseLoss ? "inverse_loss" : "accuracy";
}

namespace {

std::int64_t get_integer(const json& v, const std::string& key) {
    if (!v.is_number_integer())
        fail_config("config key '" + key + "' must be an integer");
    return v.get<std::int64_t>();
}

std::size_t get_count(const json& v, const std::string& key, std::int64_t min_value) {
    const std::int64_t n = get_integer(v, key);
    if (n < min_value)
        fail_config("config key '" + key + "' must be >= " + std::to_string(min_value));
    return static_cast<std::size_t>(n);
}

double get_real(const json& v, const std::string& key) {
    if (!v.is_number())
        fail_config("config key '" + key + "' must be a number");
    return v.get<double>();
}

bool get_bool(const json& v, const std::string& key) {
    if (!v.is_boolean())
        fail_config("config key '" + key + "' must be a boolean");
    return v.get<bool>();
}

std::string get_string(const json& v, const std::string& key) {
    if (!v.is_string())
        fail_config("config key '" + key + "' must be a string");
    return v.get<std::string>();
}

void reject_unknown(const json& obj, std::initializer_list<const char*> allowed,
                    const std::string& where) {
    for (const auto& item : obj.items()) {
        bool known = false;
        for (const char* k : allowed)
            if (item.key() == k) {
                known = true;
                break;
            }
        if (!known) fail_config("unknown config key '" + item.key() + "' in " + where);
    }
}

DataConfig parse_data_config(const json& j) {
    if (!j.is_object()) fail_config("config key 'dataset' must be an object");
    DataConfig data;
    if (!j.contains("kind")) fail_config("dataset: missing 'kind' (\"csv\" or \"synth\")");
    const std::string kind = get_string(j.at("kind"), "dataset.kind");
    if (kind == "csv") {
        reject_unknown(j, {"kind", "path", "label_column"}, "dataset (csv)");
        data.kind = DataConfig::Kind::Csv;
        if (!j.contains("path")) fail_config("dataset: csv source needs 'path'");
        data.path = get_string(j.at("path"), "dataset.path");
        if (j.contains("label_column"))
            data.label_column = get_string(j.at("label_column"), "dataset.label_column");
    } else if (kind == "synth") {
        reject_unknown(j, {"kind", "rows", "dim", "classes", "separation"}, "dataset (synth)");
        data.kind = DataConfig::Kind::Synth;
        if (j.contains("rows")) data.rows = get_count(j.at("rows"), "dataset.rows", 1);
        if (j.contains("dim")) data.dim = get_count(j.at("dim"), "dataset.dim", 1);
        if (j.contains("classes")) data.classes = get_count(j.at("classes"), "dataset.classes", 2);
        if (j.contains("separation"))
            data.separation = get_real(j.at("separation"), "dataset.separation");
    } else {
        fail_config("dataset.kind must be 'csv' or 'synth', got '" + kind + "'");
    }
    return data;
}

} // namespace

ExperimentConfig config_from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        fail_config(std::string("config parse: ") + e.what());
    }
    if (!j.is_object()) fail_config("config root must be a JSON object");
    reject_unknown(j,
                   {"dataset", "clients", "rounds", "batch_size", "client_lr", "server_lr",
                    "clients_per_round", "broadcast_global", "importance", "transport", "seed",
                    "train_fraction", "output", "timing_in_csv", "threaded_clients"},
                   "the top-level config");

    ExperimentConfig cfg;
    if (j.contains("dataset")) cfg.data = parse_data_config(j.at("dataset"));
    if (j.contains("clients")) cfg.n_clients = get_count(j.at("clients"), "clients", 1);
    if (j.contains("rounds")) cfg.rounds = get_count(j.at("rounds"), "rounds", 1);
    if (j.contains("batch_size")) cfg.batch_size = get_count(j.at("batch_size"), "batch_size", 1);
    if (j.contains("client_lr")) cfg.client_lr = get_real(j.at("client_lr"), "client_lr");
    if (j.contains("server_lr")) cfg.server_lr = get_real(j.at("server_lr"), "server_lr");
    if (j.contains("clients_per_round"))
        cfg.clients_per_round = get_count(j.at("clients_per_round"), "clients_per_round", 1);
    if (j.contains("broadcast_global"))
        cfg.broadcast_global = get_bool(j.at("broadcast_global"), "broadcast_global");
    if (j.contains("importance"))
        cfg.importance = parse_importance(get_string(j.at("importance"), "importance"));
    if (j.contains("transport"))
        cfg.transport = parse_transport(get_string(j.at("transport"), "transport"));
    if (j.contains("seed")) {
        const json& v = j.at("seed");
        if (!v.is_number_integer() || (v.is_number_integer() && !v.is_number_unsigned() &&
                                       v.get<std::int64_t>() < 0))
            fail_config("config key 'seed' must be a non-negative integer");
        cfg.seed = v.get<std::uint64_t>();
    }
    if (j.contains("train_fraction"))
        cfg.train_fraction = get_real(j.at("train_fraction"), "train_fraction");
    if (j.contains("output")) cfg.output_path = get_string(j.at("output"), "output");
    if (j.contains("timing_in_csv"))
        cfg.timing_in_csv = get_bool(j.at("timing_in_csv"), "timing_in_csv");
    if (j.contains("threaded_clients"))
        cfg.threaded_clients = get_bool(j.at("threaded_clients"), "threaded_clients");

    validate_config(cfg);
    return cfg;
}

ExperimentConfig config_from_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail_config("cannot open config file: " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return config_from_json(buf.str());
}

void validate_config(const ExperimentConfig& cfg) {
    if (cfg.n_clients < 1) fail_config("clients must be >= 1");
    if (cfg.rounds < 1) fail_config("rounds must be >= 1");
    if (cfg.batch_size < 1) fail_config("batch_size must be >= 1");
    if (!(cfg.client_lr > 0.0)) fail_config("client_lr must be positive");
    if (!(cfg.server_lr > 0.0)) fail_config("server_lr must be positive");
    if (!(cfg.train_fraction > 0.0) || !(cfg.train_fraction < 1.0))
        fail_config("train_fraction must be strictly between 0 and 1");
    if (cfg.clients_per_round && *cfg.clients_per_round < 1)
        fail_config("clients_per_round must be >= 1");
    if (cfg.data.kind == DataConfig::Kind::Csv) {
        if (cfg.data.path.empty()) fail_config("dataset: csv source needs a non-empty path");
    } else {
        if (cfg.data.classes < 2) fail_config("dataset: need at least 2 classes");
        if (cfg.data.dim < 1) fail_config("dataset: need dim >= 1");
        if (cfg.data.rows < cfg.data.classes) fail_config("dataset: need rows >= classes");
        if (!(cfg.data.separation > 0.0)) fail_config("dataset: separation must be positive");
    }
}

// ------------------------------------------------------------------- model

std::vector<LayerSpec> default_client_specs(std::size_t input_dim) {
    return {LayerSpec::dense(input_dim, 16), LayerSpec::relu(), LayerSpec::dense(16, 8),
            LayerSpec::relu()};
}

std::vector<LayerSpec> default_server_specs(std::size_t class_count) {
    if (class_count < 2) fail_config("need at least 2 classes, got " + std::to_string(class_count));
    std::vector<LayerSpec> specs = {LayerSpec::dense(8, 8), LayerSpec::relu(),
                                    LayerSpec::dense(8, 4), LayerSpec::relu()};
    if (class_count == 2) {
        specs.push_back(LayerSpec::dense(4, 1));
        specs.push_back(LayerSpec::sigmoid());
    } else {
        specs.push_back(LayerSpec::dense(4, class_count));
        specs.push_back(LayerSpec::softmax());
    }
    return specs;
}

LossKind head_loss(std::size_t class_count) {
    if (class_count < 2) fail_config("need at least 2 classes, got " + std::to_string(class_count));
    return class_count == 2 ? LossKind::BinaryCrossEntropy : LossKind::CrossEntropy;
}

// -------------------------------------------------------------------- data

PreparedData prepare_data(const ExperimentConfig& cfg) {
    Dataset full = cfg.data.kind == DataConfig::Kind::Csv
                       ? load_csv(cfg.data.path, cfg.data.label_column)
                       : synth_blobs(cfg.data.rows, cfg.data.dim, cfg.data.classes,
                                     cfg.data.separation, cfg.seed);
    if (full.class_count < 2)
        fail_config("dataset has " + std::to_string(full.class_count) +
                    " classes; need at least 2");

    auto [train_raw, test_raw] = train_test_split(full, cfg.train_fraction, cfg.seed);
    PreparedData out;
    out.scaler = standard_scale_fit(train_raw);
    out.train = standard_scale_apply(out.scaler, train_raw);
    out.test = standard_scale_apply(out.scaler, test_raw);
    out.parts = stratified_partition(out.train, cfg.n_clients, cfg.seed);
    out.digests.reserve(out.parts.size());
    for (std::size_t i = 0; i < out.parts.size(); ++i)
        out.digests.push_back(hash_partition(out.parts[i], static_cast<std::int32_t>(i)));
    return out;
}

// ----------------------------------------------------------------- metrics

std::string metrics_csv(const std::vector<RoundReport>& reports, bool timing) {
    std::string out = "round,selected,gammas,train_loss,val_accuracy,wall_ms\n";
    for (const RoundReport& r : reports) {
        out += std::to_string(r.round);
        out += ',';
        for (std::size_t i = 0; i < r.selected.size(); ++i) {
            if (i > 0) out += ';';
            out += std::to_string(r.selected[i]);
        }
        out += ',';
        for (std::size_t i = 0; i < r.gammas.size(); ++i) {
            if (i > 0) out += ';';
            out += fmt_g6(r.gammas[i]);
        }
        out += ',';
        out += fmt_g6(r.train_loss);
        out += ',';
        out += fmt_g6(r.val_accuracy);
        out += ',';
        out += fmt_g6(timing ? r.wall_ms : 0.0);
        out += '\n';
    }
    return out;
}

void emit_metrics(const std::vector<RoundReport>& reports, const std::string& path, bool timing) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) fail_io("cannot open metrics file for writing: " + path);
    out << metrics_csv(reports, timing);
    out.flush();
    if (!out) fail_io("failed writing metrics file: " + path);
}

// ----------------------------------------------------------------- digests

void write_digest_manifest(const std::vector<PartitionDigest>& digests, const std::string& path) {
    json arr = json::array();
    for (const PartitionDigest& d : digests) {
        arr.push_back({{"client", d.client_id},
                       {"rows", d.row_count},
                       {"sha256", digest_hex(d.digest)}});
    }
    json root = {{"digests", arr}};
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) fail_io("cannot open digest manifest for writing: " + path);
    out << root.dump(2) << '\n';
    out.flush();
    if (!out) fail_io("failed writing digest manifest: " + path);
}

std::vector<PartitionDigest> read_digest_manifest(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail_io("cannot open digest manifest: " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    json root;
    try {
        root = json::parse(buf.str());
    } catch (const json::exception& e) {
        fail_io("digest manifest parse: " + std::string(e.what()));
    }
    if (!root.is_object() || !root.contains("digests") || !root.at("digests").is_array())
        fail_io("digest manifest must be an object with a 'digests' array");
    std::vector<PartitionDigest> out;
    for (const json& e : root.at("digests")) {
        if (!e.is_object() || !e.contains("client") || !e.contains("rows") ||
            !e.contains("sha256"))
            fail_io("digest manifest entries need 'client', 'rows', and 'sha256'");
        PartitionDigest d;
        d.client_id = e.at("client").get<std::int32_t>();
        d.row_count = e.at("rows").get<std::uint64_t>();
        d.digest = digest_from_hex(e.at("sha256").get<std::string>());
        out.push_back(d);
    }
    return out;
}

std::vector<std::int32_t> verify_digest_manifest(const ExperimentConfig& cfg,
                                                 const std::string& manifest_path) {
    const std::vector<PartitionDigest> recorded = read_digest_manifest(manifest_path);
    const PreparedData data = prepare_data(cfg);

    std::vector<std::int32_t> failing;
    for (const PartitionDigest& want : recorded) {
        const auto idx = static_cast<std::size_t>(want.client_id);
        if (want.client_id < 0 || idx >= data.parts.size()) {
            failing.push_back(want.client_id);
            continue;
        }
        if (want.row_count != data.digests[idx].row_count ||
            !verify_partition(data.parts[idx], want))
            failing.push_back(want.client_id);
    }
    // Partitions the manifest never covered count as failures too.
    for (const PartitionDigest& have : data.digests) {
        const bool covered = std::any_of(recorded.begin(), recorded.end(),
                                         [&](const PartitionDigest& w) {
                                             return w.client_id == have.client_id;
                                         });
        if (!covered) failing.push_back(have.client_id);
    }
    std::sort(failing.begin(), failing.end());
    failing.erase(std::unique(failing.begin(), failing.end()), failing.end());
    return failing;
}

// ------------------------------------------------------------- centralized

double composed_train_step(ComposedModel& model, const Matrix& x, const Matrix& labels,
                           LossKind loss, std::size_t class_count, double client_lr,
                           double server_lr) {
    const ForwardTrace trace = model_forward(model.specs, model.params, x);
    const Matrix targets = loss_targets(labels, class_count, loss);
    const LossResult lr = loss_eval_fused(loss, trace.output(), targets);
    const BackwardResult back = model_backward(model.specs, model.params, trace, lr.grad,
                                               GradAnchor::FinalPreactivation);
    // Same update arithmetic as sgd_step, with the learning rate switching
    // at the cut so the front half steps like a client and the back half
    // like the server.
    for (std::size_t i = 0; i < model.params.count(); ++i) {
        const double step = i < model.client_tensor_count ? client_lr : server_lr;
        Matrix& p = model.params.tensor(i);
        const Matrix& g = back.param_grads.tensor(i);
        for (std::size_t j = 0; j < p.size(); ++j)
            p.values()[j] -= step * g.values()[j];
    }
    return lr.loss;
}

std::pair<ParamSet, ParamSet> split_composed(const ComposedModel& model) {
    ParamSet client;
    ParamSet server;
    for (std::size_t i = 0; i < model.params.count(); ++i) {
        if (i < model.client_tensor_count) {
            client.entries.push_back(model.params.entries[i]);
            continue;
        }
        // Composed names index layers globally; the server half's own
        // numbering starts at zero again.
        const std::string& name = model.params.name(i);
        const std::size_t dot = name.find('.');
        if (name.size() < 2 || name[0] != 'L' || dot == std::string::npos)
            fail_invalid("split_composed: unexpected tensor name '" + name + "'");
        const std::size_t layer = std::stoul(name.substr(1, dot - 1));
        const std::string local =
            "L" + std::to_string(layer - model.client_layer_count) + name.substr(dot);
        server.entries.emplace_back(local, model.params.tensor(i));
    }
    return {std::move(client), std::move(server)};
}

RunResult run_centralized(const ExperimentConfig& cfg) {
    validate_config(cfg);
    const PreparedData data = prepare_data(cfg);
    const std::size_t classes = data.train.class_count;
    const std::vector<LayerSpec> client_specs = default_client_specs(data.train.dim());
    const std::vector<LayerSpec> server_specs = default_server_specs(classes);
    const LossKind loss = head_loss(classes);

    Rng init_rng(derive_seed(cfg.seed, "init"));
    const ParamSet theta = init_params(client_specs, init_rng);
    const ParamSet omega = init_params(server_specs, init_rng);
    ComposedModel model = compose(client_specs, theta, server_specs, omega);

    RunResult result;
    result.digests = data.digests;
    for (std::size_t r = 0; r < cfg.rounds; ++r) {
        const auto t0 = std::chrono::steady_clock::now();
        Rng brng(derive_seed(cfg.seed, "batches", r));
        const auto batches = batch_iter(data.train, cfg.batch_size, true, brng);
        double loss_sum = 0.0;
        for (const auto& [x, y] : batches)
            loss_sum += composed_train_step(model, x, y, loss, classes, cfg.client_lr,
                                            cfg.server_lr);
        const ForwardTrace eval = model_forward(model.specs, model.params, data.test.features);
        RoundReport report;
        report.round = r;
        report.train_loss = loss_sum / static_cast<double>(batches.size());
        report.val_accuracy = accuracy(eval.output(), data.test.labels);
        report.wall_ms = std::chrono::duration<double, std::milli>(
                             std::chrono::steady_clock::now() - t0)
                             .count();
        result.rounds.push_back(std::move(report));
    }
    auto [final_client, final_server] = split_composed(model);
    result.client_params.push_back(std::move(final_client));
    result.server_params = std::move(final_server);
    if (!cfg.output_path.empty())
        emit_metrics(result.rounds, cfg.output_path, cfg.timing_in_csv);
    return result;
}

// ------------------------------------------------------- split run (wssl)

namespace {

struct ServerShared {
    std::atomic<bool> stop{false};
    std::atomic<bool> done{false};
    std::exception_ptr error;  // readable once done is set
};

struct ServerContext {
    ExperimentConfig cfg;
    std::vector<LayerSpec> client_specs;
    ServerNode server;
    Dataset validation;
    std::vector<ParamSet> mirrors;            // last-known client params
    std::vector<PartitionDigest> digests;     // as reported by clients
    ParamSet theta_global;
    SelectionOutcome current;
    bool have_selection = false;
};

ImportanceFn importance_fn(ImportanceKind kind) {
    if (kind == ImportanceKind::InverseLoss) return ImportanceFn(importance_inverse_loss);
    return ImportanceFn(importance_accuracy);
}

Message handle_round_start(ServerContext& sc, const ControlMsg& msg) {
    const std::size_t alpha = sc.cfg.n_clients;
    std::vector<ClientNode> nodes(alpha);
    for (std::size_t i = 0; i < alpha; ++i) {
        nodes[i].client_id = static_cast<std::int32_t>(i);
        nodes[i].specs = sc.client_specs;
        nodes[i].params = sc.mirrors[i];
    }
    Rng rng(derive_seed(sc.cfg.seed, "selection", msg.round));
    sc.current = select_round(msg.round, alpha, nodes, sc.server, sc.validation,
                              sc.cfg.clients_per_round, importance_fn(sc.cfg.importance), rng);
    sc.have_selection = true;

    ImportanceReportMsg report;
    report.round = msg.round;
    report.entries.reserve(sc.current.records.size());
    for (const ImportanceRecord& rec : sc.current.records)
        report.entries.push_back({static_cast<std::uint32_t>(rec.client_id), rec.beta, rec.gamma});
    report.selected_ids.reserve(sc.current.selected_ids.size());
    for (std::int32_t id : sc.current.selected_ids)
        report.selected_ids.push_back(static_cast<std::uint32_t>(id));
    return report;
}

Message handle_round_end(ServerContext& sc, const ControlMsg& msg) {
    if (!sc.have_selection || sc.current.round_index != msg.round)
        fail_protocol("round-end for round " + std::to_string(msg.round) +
                      " without a matching round-start");
    std::vector<bool> selected(sc.cfg.n_clients, false);
    for (std::int32_t id : sc.current.selected_ids) selected[static_cast<std::size_t>(id)] = true;

    std::vector<ParamSet> halves;
    std::vector<double> weights;
    for (const ImportanceRecord& rec : sc.current.records) {
        const auto idx = static_cast<std::size_t>(rec.client_id);
        if (!selected[idx]) continue;
        halves.push_back(sc.mirrors[idx]);
        weights.push_back(rec.gamma);
    }
    sc.theta_global = global_average(halves, weights);
    if (sc.cfg.broadcast_global)
        for (ParamSet& m : sc.mirrors) m = sc.theta_global;

    const ComposedModel eval_model = compose(sc.client_specs, sc.theta_global, sc.server.specs,
                                             sc.server.params);
    const ForwardTrace eval =
        model_forward(eval_model.specs, eval_model.params, sc.validation.features);
    const double val_acc = accuracy(eval.output(), sc.validation.labels);
    sc.have_selection = false;

    ControlMsg reply = msg;
    reply.value = val_acc;
    return reply;
}

// One request in, one reply out. `running` drops on shutdown.
Message handle_message(ServerContext& sc, Message msg, bool& running) {
    if (auto* act = std::get_if<ActivationMsg>(&msg)) {
        ActivationBatch ab;
        ab.client_id = static_cast<std::int32_t>(act->client_id);
        ab.batch_id = act->batch_id;
        ab.activations = std::move(act->activations);
        ab.labels = std::move(act->labels);
        GradientBatch gb = server_train_step(sc.server, ab);
        GradientMsg reply;
        reply.client_id = act->client_id;
        reply.batch_id = act->batch_id;
        reply.cut_grad = std::move(gb.cut_grad);
        reply.loss = gb.loss;
        return reply;
    }
    if (auto* pm = std::get_if<ParamsMsg>(&msg)) {
        if (pm->client_id == kFetchGlobal) return ParamsMsg{kFetchGlobal, sc.theta_global};
        if (pm->client_id == kFetchServer) return ParamsMsg{kFetchServer, sc.server.params};
        if (pm->client_id >= sc.cfg.n_clients)
            fail_protocol("params upload from unknown client " + std::to_string(pm->client_id));
        pm->params.ensure_aligned(sc.mirrors[pm->client_id], "params upload");
        sc.mirrors[pm->client_id] = std::move(pm->params);
        return ControlMsg{ControlKind::Join, pm->client_id, 0, 0.0};
    }
    if (auto* dg = std::get_if<DigestMsg>(&msg)) {
        if (dg->client_id >= sc.cfg.n_clients)
            fail_protocol("digest from unknown client " + std::to_string(dg->client_id));
        PartitionDigest d;
        d.client_id = static_cast<std::int32_t>(dg->client_id);
        d.digest = dg->digest;
        d.row_count = dg->row_count;
        sc.digests[dg->client_id] = d;
        return *dg;
    }
    if (auto* ctl = std::get_if<ControlMsg>(&msg)) {
        switch (ctl->kind) {
            case ControlKind::Join: return *ctl;
            case ControlKind::RoundStart: return handle_round_start(sc, *ctl);
            case ControlKind::RoundEnd: return handle_round_end(sc, *ctl);
            case ControlKind::Shutdown: running = false; return *ctl;
        }
    }
    fail_protocol(std::string("server cannot handle a ") +
                  message_type_name(message_type(msg)) + " message");
}

void server_scan_loop(ServerContext& sc, std::vector<std::unique_ptr<Channel>>& channels,
                      ServerShared& shared) {
    bool running = true;
    while (running && !shared.stop.load(std::memory_order_relaxed)) {
        bool any = false;
        for (std::size_t i = 0; i < channels.size() && running; ++i) {
            if (!channels[i]) continue;
            Message msg;
            if (!channels[i]->try_recv(msg)) continue;
            any = true;
            Message reply = handle_message(sc, std::move(msg), running);
            channels[i]->send(reply);
        }
        if (!any) std::this_thread::sleep_for(std::chrono::microseconds(50));
    }
}

void server_main_inproc(ServerContext sc, std::vector<std::unique_ptr<Channel>> channels,
                        ServerShared* shared) {
    try {
        server_scan_loop(sc, channels, *shared);
    } catch (...) {
        shared->error = std::current_exception();
    }
    shared->done.store(true, std::memory_order_release);
}

void server_main_tcp(ServerContext sc, std::unique_ptr<TcpListener> listener, ServerShared* shared) {
    try {
        std::vector<std::unique_ptr<Channel>> channels(sc.cfg.n_clients);
        for (std::size_t n = 0; n < sc.cfg.n_clients; ++n) {
            std::unique_ptr<Channel> ch = listener->accept(kRecvTimeout);
            Message first = ch->recv(kRecvTimeout);
            const auto* ctl = std::get_if<ControlMsg>(&first);
            if (!ctl || ctl->kind != ControlKind::Join)
                fail_protocol("expected a join as the first message on a new connection");
            const std::uint32_t id = ctl->client_id;
            if (id >= channels.size() || channels[id])
                fail_protocol("join with bad or duplicate client id " + std::to_string(id));
            channels[id] = std::move(ch);
            channels[id]->send(first);
        }
        server_scan_loop(sc, channels, *shared);
    } catch (...) {
        shared->error = std::current_exception();
    }
    shared->done.store(true, std::memory_order_release);
}

// Lock-step request helper: sends, then waits in short slices so a dead
// server surfaces as its own error instead of a timeout.
Message request(Channel& ch, const Message& msg, const ServerShared& shared) {
    ch.send(msg);
    const auto deadline = std::chrono::steady_clock::now() + kRecvTimeout;
    for (;;) {
        try {
            return ch.recv(std::chrono::milliseconds(100));
        } catch (const Error& e) {
            // A dead server shows up here as a reset or closed channel; the
            // exception it died with is the one worth reporting.
            if (shared.done.load(std::memory_order_acquire)) {
                if (shared.error) std::rethrow_exception(shared.error);
                fail_protocol("server stopped without replying");
            }
            if (e.code() != ErrorCode::timeout) throw;
            if (std::chrono::steady_clock::now() >= deadline) throw;
        }
    }
}

template <typename T>
T expect(Message msg, const char* what) {
    if (auto* p = std::get_if<T>(&msg)) return std::move(*p);
    fail_protocol(std::string("expected a ") + what + " reply, got " +
                  message_type_name(message_type(msg)));
}

} // namespace

RunResult run_wssl(const ExperimentConfig& cfg_in) {
    validate_config(cfg_in);
    ExperimentConfig cfg = cfg_in;
    if (cfg.clients_per_round && *cfg.clients_per_round > cfg.n_clients) {
        std::cerr << "warning: clients_per_round " << *cfg.clients_per_round
                  << " exceeds clients " << cfg.n_clients << "; clamped\n";
        cfg.clients_per_round = cfg.n_clients;
    }

    const PreparedData data = prepare_data(cfg);
    const std::size_t alpha = cfg.n_clients;
    const std::size_t classes = data.train.class_count;
    const std::vector<LayerSpec> client_specs = default_client_specs(data.train.dim());
    const std::vector<LayerSpec> server_specs = default_server_specs(classes);

    Rng init_rng(derive_seed(cfg.seed, "init"));
    const ParamSet theta0 = init_params(client_specs, init_rng);
    const ParamSet omega0 = init_params(server_specs, init_rng);

    std::vector<ClientNode> clients(alpha);
    for (std::size_t i = 0; i < alpha; ++i) {
        clients[i].client_id = static_cast<std::int32_t>(i);
        clients[i].specs = client_specs;
        clients[i].params = theta0;
        clients[i].local_data = data.parts[i];
        clients[i].lr = cfg.client_lr;
    }

    ServerContext sc;
    sc.cfg = cfg;
    sc.client_specs = client_specs;
    sc.server.specs = server_specs;
    sc.server.params = omega0;
    sc.server.loss_kind = head_loss(classes);
    sc.server.lr = cfg.server_lr;
    sc.server.class_count = classes;
    sc.validation = data.test;
    sc.mirrors.assign(alpha, theta0);
    sc.digests.resize(alpha);
    sc.theta_global = theta0;

    ServerShared shared;
    std::vector<std::unique_ptr<Channel>> ends(alpha);
    std::thread server_thread;
    if (cfg.transport.kind == TransportKind::InProc) {
        std::vector<std::unique_ptr<Channel>> server_ends(alpha);
        for (std::size_t i = 0; i < alpha; ++i) {
            auto [client_end, server_end] = make_inproc_pair();
            ends[i] = std::move(client_end);
            server_ends[i] = std::move(server_end);
        }
        server_thread =
            std::thread(server_main_inproc, std::move(sc), std::move(server_ends), &shared);
    } else {
        auto listener = std::make_unique<TcpListener>(cfg.transport.port);
        const std::uint16_t port = listener->port();
        server_thread = std::thread(server_main_tcp, std::move(sc), std::move(listener), &shared);
        for (std::size_t i = 0; i < alpha; ++i)
            ends[i] = tcp_connect("127.0.0.1", port, kRecvTimeout);
    }

    RunResult result;
    result.digests = data.digests;
    try {
        // All clients join first: the TCP server registers connections one at
        // a time and only starts scanning registered channels once every
        // client has joined, so digests must not be sent before the last join.
        for (std::size_t i = 0; i < alpha; ++i) {
            const auto id = static_cast<std::uint32_t>(i);
            expect<ControlMsg>(request(*ends[i], ControlMsg{ControlKind::Join, id, 0, 0.0}, shared),
                               "join");
        }
        // Integrity digests and initial parameter upload, in id order.
        for (std::size_t i = 0; i < alpha; ++i) {
            const auto id = static_cast<std::uint32_t>(i);
            DigestMsg dm{id, data.digests[i].row_count, data.digests[i].digest};
            expect<DigestMsg>(request(*ends[i], dm, shared), "digest");
            expect<ControlMsg>(request(*ends[i], ParamsMsg{id, clients[i].params}, shared),
                               "params ack");
        }

        for (std::size_t r = 0; r < cfg.rounds; ++r) {
            const auto t0 = std::chrono::steady_clock::now();
            const auto round = static_cast<std::uint32_t>(r);

            auto report = expect<ImportanceReportMsg>(
                request(*ends[0], ControlMsg{ControlKind::RoundStart, 0, round, 0.0}, shared),
                "importance report");

            std::vector<std::int32_t> ids;
            ids.reserve(report.selected_ids.size());
            for (std::uint32_t id : report.selected_ids) ids.push_back(static_cast<std::int32_t>(id));
            std::vector<std::int32_t> schedule = ids;  // batch order is id order
            std::sort(schedule.begin(), schedule.end());

            std::vector<std::vector<std::pair<Matrix, Matrix>>> batches;
            batches.reserve(schedule.size());
            std::size_t max_batches = 0;
            for (std::int32_t id : schedule) {
                Rng brng(derive_seed(cfg.seed, "batches",
                                     static_cast<std::uint64_t>(r) * alpha +
                                         static_cast<std::uint64_t>(id)));
                batches.push_back(
                    batch_iter(clients[static_cast<std::size_t>(id)].local_data, cfg.batch_size,
                               true, brng));
                max_batches = std::max(max_batches, batches.back().size());
            }

            double loss_sum = 0.0;
            std::size_t batch_count = 0;
            auto run_batch = [&](std::size_t j, std::size_t b) {
                const auto id = static_cast<std::size_t>(schedule[j]);
                const auto& [x, y] = batches[j][b];
                ActivationBatch ab =
                    client_forward(clients[id], x, y, static_cast<std::uint32_t>(b));
                ActivationMsg am{static_cast<std::uint32_t>(ab.client_id), ab.batch_id,
                                 std::move(ab.activations), std::move(ab.labels)};
                auto gm = expect<GradientMsg>(request(*ends[id], am, shared), "gradient");
                GradientBatch gb{static_cast<std::int32_t>(gm.client_id), gm.batch_id,
                                 std::move(gm.cut_grad), gm.loss};
                client_apply_gradient(clients[id], gb);
                return gm.loss;
            };

            if (!cfg.threaded_clients) {
                // Interleave one batch per selected client before the next
                // batch index: 0/0, 1/0, ..., 0/1, 1/1, ...
                for (std::size_t b = 0; b < max_batches; ++b)
                    for (std::size_t j = 0; j < schedule.size(); ++j) {
                        if (b >= batches[j].size()) continue;
                        loss_sum += run_batch(j, b);
                        ++batch_count;
                    }
            } else {
                std::vector<double> sums(schedule.size(), 0.0);
                std::vector<std::thread> workers;
                std::mutex err_mutex;
                std::exception_ptr first_error;
                for (std::size_t j = 0; j < schedule.size(); ++j) {
                    workers.emplace_back([&, j] {
                        try {
                            for (std::size_t b = 0; b < batches[j].size(); ++b)
                                sums[j] += run_batch(j, b);
                        } catch (...) {
                            std::lock_guard lk(err_mutex);
                            if (!first_error) first_error = std::current_exception();
                        }
                    });
                }
                for (std::thread& w : workers) w.join();
                if (first_error) std::rethrow_exception(first_error);
                for (std::size_t j = 0; j < schedule.size(); ++j) {
                    loss_sum += sums[j];
                    batch_count += batches[j].size();
                }
            }

            for (std::int32_t id : schedule) {
                const auto idx = static_cast<std::size_t>(id);
                expect<ControlMsg>(
                    request(*ends[idx],
                            ParamsMsg{static_cast<std::uint32_t>(id), clients[idx].params},
                            shared),
                    "params ack");
            }

            const auto end_ack = expect<ControlMsg>(
                request(*ends[0], ControlMsg{ControlKind::RoundEnd, 0, round, 0.0}, shared),
                "round-end ack");

            if (cfg.broadcast_global) {
                for (std::size_t i = 0; i < alpha; ++i) {
                    auto pm = expect<ParamsMsg>(
                        request(*ends[i], ParamsMsg{kFetchGlobal, {}}, shared), "global params");
                    pm.params.ensure_aligned(clients[i].params, "global broadcast");
                    clients[i].params = std::move(pm.params);
                }
            }

            RoundReport rr;
            rr.round = r;
            rr.selected = ids;
            rr.gammas.reserve(report.entries.size());
            for (const auto& e : report.entries) rr.gammas.push_back(e.gamma);
            rr.train_loss = batch_count > 0 ? loss_sum / static_cast<double>(batch_count) : 0.0;
            rr.val_accuracy = end_ack.value;
            rr.wall_ms = std::chrono::duration<double, std::milli>(
                             std::chrono::steady_clock::now() - t0)
                             .count();
            result.rounds.push_back(std::move(rr));
        }

        auto sp = expect<ParamsMsg>(request(*ends[0], ParamsMsg{kFetchServer, {}}, shared),
                                    "server params");
        result.server_params = std::move(sp.params);
        expect<ControlMsg>(request(*ends[0], ControlMsg{ControlKind::Shutdown, 0, 0, 0.0}, shared),
                           "shutdown ack");
        server_thread.join();
    } catch (...) {
        shared.stop.store(true, std::memory_order_relaxed);
        if (server_thread.joinable()) server_thread.join();
        if (!cfg.output_path.empty()) {
            try {
                emit_metrics(result.rounds, cfg.output_path, cfg.timing_in_csv);
            } catch (...) {
                // the original failure is the one worth reporting
            }
        }
        throw;
    }

    for (ClientNode& c : clients) result.client_params.push_back(std::move(c.params));
    if (!cfg.output_path.empty())
        emit_metrics(result.rounds, cfg.output_path, cfg.timing_in_csv);
    return result;
}

} // namespace wssl
