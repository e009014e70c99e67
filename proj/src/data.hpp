#ifndef WSSL_DATA_HPP
#define WSSL_DATA_HPP

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "matrix.hpp"
#include "rng.hpp"

namespace wssl {

// Labeled numeric dataset. Labels are class indices stored as an n x 1 matrix.
struct Dataset {
    Matrix features;
    Matrix labels;
    std::size_t class_count = 0;
    std::vector<std::string> feature_names;

    std::size_t rows() const { return features.rows(); }
    std::size_t dim() const { return features.cols(); }
};

// RFC-4180-style CSV with a required header row; all non-label cells numeric.
// `label_column` is a header name, or a 0-based column index if no header
// matches and the string parses as an integer. Label values may be text and
// are mapped to contiguous class indices in first-appearance order.
Dataset load_csv(const std::string& path, const std::string& label_column);

struct ScalerParams {
    std::vector<double> mean;
    std::vector<double> stddev;  // population, floored at 1e-12
};

ScalerParams standard_scale_fit(const Dataset& train);
Dataset standard_scale_apply(const ScalerParams& params, const Dataset& ds);

// Stratified by class; seed-deterministic; disjoint and exhaustive.
std::pair<Dataset, Dataset> train_test_split(const Dataset& ds, double train_fraction,
                                             std::uint64_t seed);

// One partition per client, class proportions within one sample of global.
// n_clients == 1 returns the dataset unchanged.
std::vector<Dataset> stratified_partition(const Dataset& ds, std::size_t n_clients,
                                          std::uint64_t seed);

// Gaussian clusters (unit variance) at seeded centers pairwise >= separation
// apart; balanced labels; rows shuffled.
Dataset synth_blobs(std::size_t n, std::size_t d, std::size_t classes, double separation,
                    std::uint64_t seed);

// All rows exactly once; final partial batch included; shuffle uses `rng`.
std::vector<std::pair<Matrix, Matrix>> batch_iter(const Dataset& ds, std::size_t batch_size,
                                                  bool shuffle, Rng& rng);

struct PartitionDigest {
    std::int32_t client_id = 0;
    std::array<std::uint8_t, 32> digest{};
    std::uint64_t row_count = 0;
};

// SHA-256 over the canonical byte serialization: row_count and col_count as
// u64 little-endian, then features row-major, then labels, each value as
// 64-bit little-endian IEEE-754.
PartitionDigest hash_partition(const Dataset& partition, std::int32_t client_id = 0);
bool verify_partition(const Dataset& partition, const PartitionDigest& digest);

std::string digest_hex(const std::array<std::uint8_t, 32>& digest);
std::array<std::uint8_t, 32> digest_from_hex(const std::string& hex);

} // namespace wssl

#endif
