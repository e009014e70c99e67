#include "data.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include <openssl/sha.h>

#include "error.hpp"

namespace wssl {

namespace {

// One CSV record; handles quoted fields and embedded commas.
std::vector<std::string> split_csv_line(const std::string& line, std::size_t line_no) {
    std::vector<std::string> fields;
    std::string cur;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        char c = line[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < line.size() && line[i + 1] == '"') {
                    cur += '"';
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                cur += c;
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            fields.push_back(cur);
            cur.clear();
        } else {
            cur += c;
        }
    }
    if (quoted)
        fail_io("csv: unterminated quote on line " + std::to_string(line_no));
    fields.push_back(cur);
    return fields;
}

double parse_cell(const std::string& cell, std::size_t line_no, std::size_t col) {
    const char* begin = cell.c_str();
    char* end = nullptr;
    double v = std::strtod(begin, &end);
    while (end && *end == ' ') ++end;
    if (end == begin || (end && *end != '\0'))
        fail_io("csv: non-numeric cell '" + cell + "' at row " + std::to_string(line_no) +
                ", column " + std::to_string(col + 1));
    return v;
}

Dataset take_rows(const Dataset& ds, const std::vector<std::size_t>& idx) {
    Dataset out;
    out.class_count = ds.class_count;
    out.feature_names = ds.feature_names;
    out.features = Matrix(idx.size(), ds.dim());
    out.labels = Matrix(idx.size(), 1);
    for (std::size_t r = 0; r < idx.size(); ++r) {
        for (std::size_t c = 0; c < ds.dim(); ++c)
            out.features.at(r, c) = ds.features.at(idx[r], c);
        out.labels.at(r, 0) = ds.labels.at(idx[r], 0);
    }
    return out;
}

// Row indices grouped by class, in dataset order.
std::vector<std::vector<std::size_t>> rows_by_class(const Dataset& ds) {
    std::vector<std::vector<std::size_t>> groups(ds.class_count);
    for (std::size_t r = 0; r < ds.rows(); ++r) {
        auto cls = static_cast<std::size_t>(ds.labels.at(r, 0));
        if (cls >= ds.class_count)
            fail_invalid("dataset label " + std::to_string(cls) + " out of range");
        groups[cls].push_back(r);
    }
    return groups;
}

void append_u64_le(std::vector<std::uint8_t>& buf, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) buf.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
}

void append_f64_le(std::vector<std::uint8_t>& buf, double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, sizeof(bits));
    append_u64_le(buf, bits);
}

} // namespace

Dataset load_csv(const std::string& path, const std::string& label_column) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        fail_io("cannot open csv file: " + path);

    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        lines.push_back(line);
    }
    while (!lines.empty() && lines.back().empty()) lines.pop_back();
    if (lines.empty())
        fail_io("csv file has no header row: " + path);

    std::vector<std::string> header = split_csv_line(lines[0], 1);
    std::size_t label_idx = header.size();
    for (std::size_t i = 0; i < header.size(); ++i)
        if (header[i] == label_column) label_idx = i;
    if (label_idx == header.size()) {
        // Fall back to a numeric column index.
        char* end = nullptr;
        long idx = std::strtol(label_column.c_str(), &end, 10);
        if (end != label_column.c_str() && *end == '\0' && idx >= 0 &&
            static_cast<std::size_t>(idx) < header.size())
            label_idx = static_cast<std::size_t>(idx);
        else
            fail_io("csv: label column '" + label_column + "' not found in header of " + path);
    }

    std::size_t n = lines.size() - 1;
    if (n == 0)
        fail_io("csv file has no data rows: " + path);
    std::size_t d = header.size() - 1;

    Dataset ds;
    ds.features = Matrix(n, d);
    ds.labels = Matrix(n, 1);
    for (std::size_t i = 0; i < header.size(); ++i)
        if (i != label_idx) ds.feature_names.push_back(header[i]);

    std::map<std::string, std::size_t> label_ids;  // first-appearance order via counter
    for (std::size_t r = 0; r < n; ++r) {
        std::vector<std::string> cells = split_csv_line(lines[r + 1], r + 2);
        if (cells.size() != header.size())
            fail_io("csv: row " + std::to_string(r + 2) + " has " + std::to_string(cells.size()) +
                    " cells, header has " + std::to_string(header.size()));
        std::size_t fc = 0;
        for (std::size_t c = 0; c < cells.size(); ++c) {
            if (c == label_idx) {
                auto it = label_ids.find(cells[c]);
                if (it == label_ids.end())
                    it = label_ids.emplace(cells[c], label_ids.size()).first;
                ds.labels.at(r, 0) = static_cast<double>(it->second);
            } else {
                ds.features.at(r, fc++) = parse_cell(cells[c], r + 2, c);
            }
        }
    }
    ds.class_count = label_ids.size();
    return ds;
}

ScalerParams standard_scale_fit(const Dataset& train) {
    if (train.rows() == 0)
        fail_invalid("standard_scale_fit: empty dataset");
    std::size_t d = train.dim();
    double n = static_cast<double>(train.rows());
    ScalerParams p;
    p.mean.assign(d, 0.0);
    p.stddev.assign(d, 0.0);
    for (std::size_t r = 0; r < train.rows(); ++r)
        for (std::size_t c = 0; c < d; ++c) p.mean[c] += train.features.at(r, c);
    for (std::size_t c = 0; c < d; ++c) p.mean[c] /= n;
    for (std::size_t r = 0; r < train.rows(); ++r)
        for (std::size_t c = 0; c < d; ++c) {
            double dv = train.features.at(r, c) - p.mean[c];
            p.stddev[c] += dv * dv;
        }
    for (std::size_t c = 0; c < d; ++c)
        p.stddev[c] = std::max(std::sqrt(p.stddev[c] / n), 1e-12);
    return p;
}

Dataset standard_scale_apply(const ScalerParams& params, const Dataset& ds) {
    if (params.mean.size() != ds.dim())
        fail_invalid("standard_scale_apply: scaler fit on " + std::to_string(params.mean.size()) +
                     " columns, dataset has " + std::to_string(ds.dim()));
    Dataset out = ds;
    for (std::size_t r = 0; r < out.rows(); ++r)
        for (std::size_t c = 0; c < out.dim(); ++c)
            out.features.at(r, c) = (out.features.at(r, c) - params.mean[c]) / params.stddev[c];
    return out;
}

std::pair<Dataset, Dataset> train_test_split(const Dataset& ds, double train_fraction,
                                             std::uint64_t seed) {
    if (!(train_fraction > 0.0 && train_fraction < 1.0))
        fail_invalid("train_test_split: fraction must be in (0, 1)");
    Rng rng(derive_seed(seed, "train_test_split"));
    std::vector<std::size_t> train_idx, test_idx;
    for (auto& group : rows_by_class(ds)) {
        if (group.size() < 2)
            fail_invalid("train_test_split: a class has fewer than 2 samples");
        rng.shuffle(group);
        auto want = static_cast<std::size_t>(
            std::llround(train_fraction * static_cast<double>(group.size())));
        // Both sides keep at least one sample of every class.
        want = std::clamp<std::size_t>(want, 1, group.size() - 1);
        train_idx.insert(train_idx.end(), group.begin(), group.begin() + want);
        test_idx.insert(test_idx.end(), group.begin() + want, group.end());
    }
    std::sort(train_idx.begin(), train_idx.end());
    std::sort(test_idx.begin(), test_idx.end());
    return {take_rows(ds, train_idx), take_rows(ds, test_idx)};
}

std::vector<Dataset> stratified_partition(const Dataset& ds, std::size_t n_clients,
                                          std::uint64_t seed) {
    if (n_clients == 0)
        fail_invalid("stratified_partition: need at least one client");
    if (n_clients == 1)
        return {ds};
    Rng rng(derive_seed(seed, "stratified_partition"));
    std::vector<std::vector<std::size_t>> per_client(n_clients);
    // Deal each class round-robin, carrying the cursor across classes so
    // client row counts stay balanced overall.
    std::size_t cursor = 0;
    for (auto& group : rows_by_class(ds)) {
        if (group.size() < n_clients)
            fail_invalid("stratified_partition: a class has " + std::to_string(group.size()) +
                         " samples, fewer than " + std::to_string(n_clients) + " clients");
        rng.shuffle(group);
        for (std::size_t i = 0; i < group.size(); ++i) {
            per_client[cursor].push_back(group[i]);
            cursor = (cursor + 1) % n_clients;
        }
    }
    std::vector<Dataset> out;
    out.reserve(n_clients);
    for (auto& idx : per_client) {
        std::sort(idx.begin(), idx.end());
        out.push_back(take_rows(ds, idx));
    }
    return out;
}

Dataset synth_blobs(std::size_t n, std::size_t d, std::size_t classes, double separation,
                    std::uint64_t seed) {
    if (classes == 0 || n < classes)
        fail_invalid("synth_blobs: need n >= classes >= 1");
    if (d == 0)
        fail_invalid("synth_blobs: need d >= 1");
    if (!(separation > 0.0))
        fail_invalid("synth_blobs: separation must be positive");

    Rng rng(derive_seed(seed, "synth_blobs"));
    double box = separation * static_cast<double>(std::max<std::size_t>(classes, 2));
    std::vector<std::vector<double>> centers;
    std::size_t attempts = 0;
    const std::size_t max_attempts = 200 * classes;
    while (centers.size() < classes) {
        if (++attempts > max_attempts)
            fail_invalid("synth_blobs: could not place well-separated centers; lower the separation");
        std::vector<double> c(d);
        for (double& v : c) v = rng.uniform(0.0, box);
        bool ok = true;
        for (const auto& prev : centers) {
            double dist2 = 0.0;
            for (std::size_t j = 0; j < d; ++j) dist2 += (c[j] - prev[j]) * (c[j] - prev[j]);
            if (dist2 < separation * separation) { ok = false; break; }
        }
        if (ok) centers.push_back(std::move(c));
    }

    Dataset ds;
    ds.features = Matrix(n, d);
    ds.labels = Matrix(n, 1);
    ds.class_count = classes;
    for (std::size_t r = 0; r < n; ++r) {
        std::size_t cls = r % classes;  // balanced
        for (std::size_t c = 0; c < d; ++c)
            ds.features.at(r, c) = centers[cls][c] + rng.normal();
        ds.labels.at(r, 0) = static_cast<double>(cls);
    }
    // Shuffle rows so class order carries no signal.
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    rng.shuffle(idx);
    return take_rows(ds, idx);
}

std::vector<std::pair<Matrix, Matrix>> batch_iter(const Dataset& ds, std::size_t batch_size,
                                                  bool shuffle, Rng& rng) {
    if (batch_size == 0)
        fail_invalid("batch_iter: batch_size must be >= 1");
    std::vector<std::size_t> idx(ds.rows());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    if (shuffle) rng.shuffle(idx);

    std::vector<std::pair<Matrix, Matrix>> out;
    for (std::size_t start = 0; start < idx.size(); start += batch_size) {
        std::size_t count = std::min(batch_size, idx.size() - start);
        Matrix x(count, ds.dim());
        Matrix y(count, 1);
        for (std::size_t r = 0; r < count; ++r) {
            for (std::size_t c = 0; c < ds.dim(); ++c)
                x.at(r, c) = ds.features.at(idx[start + r], c);
            y.at(r, 0) = ds.labels.at(idx[start + r], 0);
        }
        out.emplace_back(std::move(x), std::move(y));
    }
    return out;
}

PartitionDigest hash_partition(const Dataset& partition, std::int32_t client_id) {
    std::vector<std::uint8_t> buf;
    buf.reserve(16 + 8 * (partition.features.size() + partition.labels.size()));
    append_u64_le(buf, partition.rows());
    append_u64_le(buf, partition.dim());
    for (double v : partition.features.values()) append_f64_le(buf, v);
    for (double v : partition.labels.values()) append_f64_le(buf, v);

    PartitionDigest out;
    out.client_id = client_id;
    out.row_count = partition.rows();
    SHA256(buf.data(), buf.size(), out.digest.data());
    return out;
}

bool verify_partition(const Dataset& partition, const PartitionDigest& digest) {
    PartitionDigest fresh = hash_partition(partition, digest.client_id);
    return fresh.digest == digest.digest && fresh.row_count == digest.row_count;
}

std::string digest_hex(const std::array<std::uint8_t, 32>& digest) {
    static const char* hexd = "0123456789abcdef";
    std::string out;
    out.reserve(64);
    for (std::uint8_t b : digest) {
        out += hexd[b >> 4];
        out += hexd[b & 0xf];
    }
    return out;
}

std::array<std::uint8_t, 32> digest_from_hex(const std::string& hex) {
    if (hex.size() != 64)
        fail_invalid("digest hex string must have 64 characters");
    auto nib = [](char c) -> std::uint8_t {
        if (c >= '0' && c <= '9') return static_cast<std::uint8_t>(c - '0');
        if (c >= 'a' && c <= 'f') return static_cast<std::uint8_t>(c - 'a' + 10);
        if (c >= 'A' && c <= 'F') return static_cast<std::uint8_t>(c - 'A' + 10);
        fail_invalid("digest hex string has a non-hex character");
    };
    std::array<std::uint8_t, 32> out{};
    for (std::size_t i = 0; i < 32; ++i)
        out[i] = static_cast<std::uint8_t>((nib(hex[2 * i]) << 4) | nib(hex[2 * i + 1]));
    return out;
}

} // namespace wssl
