#include <cstdio>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "wssl.h"

namespace {

struct CommonOpts {
    std::string config_path;
    long long clients = 0;
    long long rounds = 0;
    long long seed = 0;
    long long clients_per_round = 0;
    std::string transport;
    std::string out;

    CLI::Option* clients_opt = nullptr;
    CLI::Option* rounds_opt = nullptr;
    CLI::Option* seed_opt = nullptr;
    CLI::Option* cpr_opt = nullptr;
};

void add_common_options(CLI::App* cmd, CommonOpts& o) {
    cmd->add_option("--config", o.config_path, "JSON config file (defaults apply without it)");
    o.clients_opt = cmd->add_option("--clients", o.clients, "number of clients");
    o.rounds_opt = cmd->add_option("--rounds", o.rounds, "communication rounds");
    o.seed_opt = cmd->add_option("--seed", o.seed, "RNG seed");
    o.cpr_opt = cmd->add_option("--clients-per-round", o.clients_per_round,
                                "clients trained per round (overrides the count rule)");
    cmd->add_option("--transport", o.transport, "inproc or tcp:<port>");
    cmd->add_option("--out", o.out, "metrics CSV path");
}

int exit_code_for(int status) { return status == WSSL_ERR_CONFIG ? 1 : 2; }

int print_error(int status) {
    std::fprintf(stderr, "error: %s\n", wssl_last_error());
    return exit_code_for(status);
}

// nullptr + nonzero *exit_code on failure.
wssl_config* build_config(const CommonOpts& o, int* exit_code) {
    wssl_config* cfg = o.config_path.empty() ? wssl_config_default()
                                             : wssl_config_from_file(o.config_path.c_str());
    if (!cfg) {
        std::fprintf(stderr, "error: %s\n", wssl_last_error());
        *exit_code = 1;
        return nullptr;
    }
    int rc = WSSL_OK;
    if (rc == WSSL_OK && o.clients_opt->count() > 0)
        rc = wssl_config_set_int(cfg, "clients", o.clients);
    if (rc == WSSL_OK && o.rounds_opt->count() > 0)
        rc = wssl_config_set_int(cfg, "rounds", o.rounds);
    if (rc == WSSL_OK && o.seed_opt->count() > 0) rc = wssl_config_set_int(cfg, "seed", o.seed);
    if (rc == WSSL_OK && o.cpr_opt->count() > 0)
        rc = wssl_config_set_int(cfg, "clients_per_round", o.clients_per_round);
    if (rc == WSSL_OK && !o.transport.empty())
        rc = wssl_config_set_string(cfg, "transport", o.transport.c_str());
    if (rc == WSSL_OK && !o.out.empty()) rc = wssl_config_set_string(cfg, "output", o.out.c_str());
    if (rc != WSSL_OK) {
        *exit_code = print_error(rc);
        wssl_config_free(cfg);
        return nullptr;
    }
    *exit_code = 0;
    return cfg;
}

std::vector<int32_t> round_selected(const wssl_run* run, size_t round) {
    size_t count = 0;
    wssl_run_round_selected(run, round, nullptr, 0, &count);
    std::vector<int32_t> ids(count);
    if (count > 0) wssl_run_round_selected(run, round, ids.data(), ids.size(), &count);
    return ids;
}

void print_rounds(const wssl_run* run) {
    const size_t rounds = wssl_run_round_count(run);
    for (size_t r = 0; r < rounds; ++r) {
        double train_loss = 0.0;
        double val_acc = 0.0;
        double wall_ms = 0.0;
        wssl_run_round_metrics(run, r, &train_loss, &val_acc, &wall_ms);
        const std::vector<int32_t> ids = round_selected(run, r);
        std::string sel;
        for (size_t i = 0; i < ids.size(); ++i) {
            if (i > 0) sel += ';';
            sel += std::to_string(ids[i]);
        }
        if (sel.empty())
            std::printf("round %zu: train_loss=%.6g val_acc=%.6g (%.0f ms)\n", r, train_loss,
                        val_acc, wall_ms);
        else
            std::printf("round %zu: selected=%s train_loss=%.6g val_acc=%.6g (%.0f ms)\n", r,
                        sel.c_str(), train_loss, val_acc, wall_ms);
    }
}

double final_accuracy(const wssl_run* run) {
    const size_t rounds = wssl_run_round_count(run);
    double acc = 0.0;
    if (rounds > 0) wssl_run_round_metrics(run, rounds - 1, nullptr, &acc, nullptr);
    return acc;
}

int cmd_train(const CommonOpts& o, bool centralized) {
    int code = 0;
    wssl_config* cfg = build_config(o, &code);
    if (!cfg) return code;
    wssl_run* run = nullptr;
    const int rc = centralized ? wssl_run_centralized(cfg, &run) : wssl_run_split(cfg, &run);
    wssl_config_free(cfg);
    if (rc != WSSL_OK) return print_error(rc);
    print_rounds(run);
    std::printf("final validation accuracy: %.6g\n", final_accuracy(run));
    wssl_run_free(run);
    return 0;
}

int cmd_compare(const CommonOpts& o) {
    int code = 0;
    wssl_config* cfg = build_config(o, &code);
    if (!cfg) return code;

    wssl_run* split_run = nullptr;
    int rc = wssl_run_split(cfg, &split_run);
    if (rc != WSSL_OK) {
        wssl_config_free(cfg);
        return print_error(rc);
    }
    // The baseline must not clobber the split run's metrics file.
    wssl_config_set_string(cfg, "output", "");
    wssl_run* central_run = nullptr;
    rc = wssl_run_centralized(cfg, &central_run);
    wssl_config_free(cfg);
    if (rc != WSSL_OK) {
        wssl_run_free(split_run);
        return print_error(rc);
    }

    const double split_acc = final_accuracy(split_run);
    const double central_acc = final_accuracy(central_run);
    std::printf("wssl final accuracy:        %.6g\n", split_acc);
    std::printf("centralized final accuracy: %.6g\n", central_acc);
    std::printf("delta (centralized - wssl): %.6g\n", central_acc - split_acc);
    wssl_run_free(split_run);
    wssl_run_free(central_run);
    return 0;
}

int cmd_verify_digests(const CommonOpts& o, const std::string& digest_path, bool write) {
    int code = 0;
    wssl_config* cfg = build_config(o, &code);
    if (!cfg) return code;

    if (write) {
        const int rc = wssl_digests_write(cfg, digest_path.c_str());
        wssl_config_free(cfg);
        if (rc != WSSL_OK) return print_error(rc);
        std::printf("digest manifest written to %s\n", digest_path.c_str());
        return 0;
    }

    std::vector<int32_t> failing(65536);
    size_t failing_count = 0;
    const int rc =
        wssl_digests_verify(cfg, digest_path.c_str(), failing.data(), failing.size(),
                            &failing_count);
    wssl_config_free(cfg);
    if (rc != WSSL_OK) return print_error(rc);
    if (failing_count == 0) {
        std::printf("digest manifest verified\n");
        return 0;
    }
    std::string ids;
    for (size_t i = 0; i < failing_count && i < failing.size(); ++i) {
        if (i > 0) ids += ", ";
        ids += std::to_string(failing[i]);
    }
    std::fprintf(stderr, "digest mismatch for client ids: %s\n", ids.c_str());
    return 2;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Weighted sampled split-learning trainer"};
    app.require_subcommand(1);

    CommonOpts wssl_opts;
    CLI::App* wssl_cmd = app.add_subcommand("wssl", "run split training across clients");
    add_common_options(wssl_cmd, wssl_opts);

    CommonOpts central_opts;
    CLI::App* central_cmd =
        app.add_subcommand("centralized", "train the unsplit model on pooled data");
    add_common_options(central_cmd, central_opts);

    CommonOpts compare_opts;
    CLI::App* compare_cmd =
        app.add_subcommand("compare", "run both and report the accuracy gap");
    add_common_options(compare_cmd, compare_opts);

    CommonOpts verify_opts;
    std::string digest_path = "digests.json";
    bool write_manifest = false;
    CLI::App* verify_cmd =
        app.add_subcommand("verify-digests", "check client partitions against a digest manifest");
    add_common_options(verify_cmd, verify_opts);
    verify_cmd->add_option("--manifest", digest_path, "digest manifest path (default digests.json)");
    verify_cmd->add_flag("--write", write_manifest, "write the manifest instead of checking it");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    }

    if (app.got_subcommand(wssl_cmd)) return cmd_train(wssl_opts, false);
    if (app.got_subcommand(central_cmd)) return cmd_train(central_opts, true);
    if (app.got_subcommand(compare_cmd)) return cmd_compare(compare_opts);
    if (app.got_subcommand(verify_cmd))
        return cmd_verify_digests(verify_opts, digest_path, write_manifest);
    return 1;
}
