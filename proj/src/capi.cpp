#include "wssl.h"

#include <algorithm>
#include <cstring>
#include <string>

#include "error.hpp"
#include "experiment.hpp"

struct wssl_config {
    wssl::ExperimentConfig cfg;
};

struct wssl_run {
    wssl::RunResult result;
    bool timing = false;
};

namespace {

thread_local std::string g_last_error;

int set_error(int code, const std::string& msg) {
    g_last_error = msg;
    return code;
}

// Exceptions never cross the C boundary; Error codes map one-to-one onto
// the WSSL_ERR_* values.
template <typename Fn>
int guarded(Fn&& fn) {
    try {
        fn();
        return WSSL_OK;
    } catch (const wssl::Error& e) {
        return set_error(static_cast<int>(e.code()), e.what());
    } catch (const std::exception& e) {
        return set_error(WSSL_ERR_INTERNAL, e.what());
    } catch (...) {
        return set_error(WSSL_ERR_INTERNAL, "unknown failure");
    }
}

int require(bool ok, const char* msg) {
    return ok ? WSSL_OK : set_error(WSSL_ERR_INVALID, msg);
}

int copy_out(const std::vector<std::int32_t>& src, int32_t* buf, size_t cap, size_t* count) {
    if (count) *count = src.size();
    const size_t n = std::min(cap, src.size());
    for (size_t i = 0; i < n; ++i) buf[i] = src[i];
    return WSSL_OK;
}

} // namespace

extern "C" {

const char* wssl_version(void) { return "0.1.0"; }

const char* wssl_last_error(void) { return g_last_error.c_str(); }

wssl_config* wssl_config_default(void) { return new wssl_config{}; }

wssl_config* wssl_config_from_json(const char* text) {
    if (!text) {
        set_error(WSSL_ERR_INVALID, "wssl_config_from_json: text is NULL");
        return nullptr;
    }
    wssl_config* out = nullptr;
    const int rc = guarded([&] { out = new wssl_config{wssl::config_from_json(text)}; });
    return rc == WSSL_OK ? out : nullptr;
}

wssl_config* wssl_config_from_file(const char* path) {
    if (!path) {
        set_error(WSSL_ERR_INVALID, "wssl_config_from_file: path is NULL");
        return nullptr;
    }
    wssl_config* out = nullptr;
    const int rc = guarded([&] { out = new wssl_config{wssl::config_from_file(path)}; });
    return rc == WSSL_OK ? out : nullptr;
}

void wssl_config_free(wssl_config* cfg) { delete cfg; }

int wssl_config_set_int(wssl_config* cfg, const char* key, long long value) {
    if (int rc = require(cfg && key, "wssl_config_set_int: NULL argument")) return rc;
    return guarded([&] {
        const std::string k = key;
        auto count_value = [&](const char* what) {
            if (value < 0) wssl::fail_config(std::string(what) + " must be non-negative");
            return static_cast<std::size_t>(value);
        };
        if (k == "clients")
            cfg->cfg.n_clients = count_value("clients");
        else if (k == "rounds")
            cfg->cfg.rounds = count_value("rounds");
        else if (k == "batch_size")
            cfg->cfg.batch_size = count_value("batch_size");
        else if (k == "seed")
            cfg->cfg.seed = static_cast<std::uint64_t>(count_value("seed"));
        else if (k == "clients_per_round")
            cfg->cfg.clients_per_round = count_value("clients_per_round");
        else if (k == "broadcast_global")
            cfg->cfg.broadcast_global = value != 0;
        else if (k == "timing_in_csv")
            cfg->cfg.timing_in_csv = value != 0;
        else if (k == "threaded_clients")
            cfg->cfg.threaded_clients = value != 0;
        else if (k == "dataset.rows")
            cfg->cfg.data.rows = count_value("dataset.rows");
        else if (k == "dataset.dim")
            cfg->cfg.data.dim = count_value("dataset.dim");
        else if (k == "dataset.classes")
            cfg->cfg.data.classes = count_value("dataset.classes");
        else
            wssl::fail_config("unknown integer config key '" + k + "'");
    });
}

int wssl_config_set_real(wssl_config* cfg, const char* key, double value) {
    if (int rc = require(cfg && key, "wssl_config_set_real: NULL argument")) return rc;
    return guarded([&] {
        const std::string k = key;
        if (k == "client_lr")
            cfg->cfg.client_lr = value;
        else if (k == "server_lr")
            cfg->cfg.server_lr = value;
        else if (k == "train_fraction")
            cfg->cfg.train_fraction = value;
        else if (k == "dataset.separation")
            cfg->cfg.data.separation = value;
        else
            wssl::fail_config("unknown real config key '" + k + "'");
    });
}

int wssl_config_set_string(wssl_config* cfg, const char* key, const char* value) {
    if (int rc = require(cfg && key && value, "wssl_config_set_string: NULL argument")) return rc;
    return guarded([&] {
        const std::string k = key;
        const std::string v = value;
        if (k == "transport")
            cfg->cfg.transport = wssl::parse_transport(v);
        else if (k == "importance")
            cfg->cfg.importance = wssl::parse_importance(v);
        else if (k == "output")
            cfg->cfg.output_path = v;
        else if (k == "dataset.kind") {
            if (v == "csv")
                cfg->cfg.data.kind = wssl::DataConfig::Kind::Csv;
            else if (v == "synth")
                cfg->cfg.data.kind = wssl::DataConfig::Kind::Synth;
            else
                wssl::fail_config("dataset.kind must be 'csv' or 'synth', got '" + v + "'");
        } else if (k == "dataset.path")
            cfg->cfg.data.path = v;
        else if (k == "dataset.label_column")
            cfg->cfg.data.label_column = v;
        else
            wssl::fail_config("unknown string config key '" + k + "'");
    });
}

int wssl_run_split(const wssl_config* cfg, wssl_run** out) {
    if (int rc = require(cfg && out, "wssl_run_split: NULL argument")) return rc;
    *out = nullptr;
    return guarded([&] {
        auto run = new wssl_run{wssl::run_wssl(cfg->cfg), cfg->cfg.timing_in_csv};
        *out = run;
    });
}

int wssl_run_centralized(const wssl_config* cfg, wssl_run** out) {
    if (int rc = require(cfg && out, "wssl_run_centralized: NULL argument")) return rc;
    *out = nullptr;
    return guarded([&] {
        auto run = new wssl_run{wssl::run_centralized(cfg->cfg), cfg->cfg.timing_in_csv};
        *out = run;
    });
}

void wssl_run_free(wssl_run* run) { delete run; }

size_t wssl_run_round_count(const wssl_run* run) { return run ? run->result.rounds.size() : 0; }

int wssl_run_round_metrics(const wssl_run* run, size_t round, double* train_loss,
                           double* val_accuracy, double* wall_ms) {
    if (int rc = require(run != nullptr, "wssl_run_round_metrics: NULL run")) return rc;
    if (int rc = require(round < run->result.rounds.size(),
                         "wssl_run_round_metrics: round out of range"))
        return rc;
    const wssl::RoundReport& r = run->result.rounds[round];
    if (train_loss) *train_loss = r.train_loss;
    if (val_accuracy) *val_accuracy = r.val_accuracy;
    if (wall_ms) *wall_ms = r.wall_ms;
    return WSSL_OK;
}

int wssl_run_round_selected(const wssl_run* run, size_t round, int32_t* buf, size_t cap,
                            size_t* count) {
    if (int rc = require(run != nullptr, "wssl_run_round_selected: NULL run")) return rc;
    if (int rc = require(round < run->result.rounds.size(),
                         "wssl_run_round_selected: round out of range"))
        return rc;
    if (int rc = require(cap == 0 || buf != nullptr, "wssl_run_round_selected: NULL buffer"))
        return rc;
    return copy_out(run->result.rounds[round].selected, buf, cap, count);
}

int wssl_run_round_gammas(const wssl_run* run, size_t round, double* buf, size_t cap,
                          size_t* count) {
    if (int rc = require(run != nullptr, "wssl_run_round_gammas: NULL run")) return rc;
    if (int rc = require(round < run->result.rounds.size(),
                         "wssl_run_round_gammas: round out of range"))
        return rc;
    if (int rc = require(cap == 0 || buf != nullptr, "wssl_run_round_gammas: NULL buffer"))
        return rc;
    const std::vector<double>& gammas = run->result.rounds[round].gammas;
    if (count) *count = gammas.size();
    const size_t n = std::min(cap, gammas.size());
    for (size_t i = 0; i < n; ++i) buf[i] = gammas[i];
    return WSSL_OK;
}

int wssl_run_write_csv(const wssl_run* run, const char* path) {
    if (int rc = require(run && path, "wssl_run_write_csv: NULL argument")) return rc;
    return guarded([&] { wssl::emit_metrics(run->result.rounds, path, run->timing); });
}

int wssl_digests_write(const wssl_config* cfg, const char* path) {
    if (int rc = require(cfg && path, "wssl_digests_write: NULL argument")) return rc;
    return guarded([&] {
        wssl::validate_config(cfg->cfg);
        const wssl::PreparedData data = wssl::prepare_data(cfg->cfg);
        wssl::write_digest_manifest(data.digests, path);
    });
}

int wssl_digests_verify(const wssl_config* cfg, const char* path, int32_t* failing_buf,
                        size_t cap, size_t* failing_count) {
    if (int rc = require(cfg && path && failing_count, "wssl_digests_verify: NULL argument"))
        return rc;
    if (int rc = require(cap == 0 || failing_buf != nullptr, "wssl_digests_verify: NULL buffer"))
        return rc;
    return guarded([&] {
        wssl::validate_config(cfg->cfg);
        const std::vector<std::int32_t> failing = wssl::verify_digest_manifest(cfg->cfg, path);
        copy_out(failing, failing_buf, cap, failing_count);
    });
}

} // extern "C"
