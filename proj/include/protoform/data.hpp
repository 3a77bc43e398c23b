#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "protoform/model.hpp"

namespace protoform {

// Precomputed-embedding dataset. Features are stored as float32 to match the
// PROTOEMB1 on-disk format bit for bit; the model works in float64 and
// converts on access.
struct EmbeddingRecord {
    std::vector<float> features;  // cell-major: [(y*w + x)*d_in + c]
    std::uint32_t label = 0;
};

struct EmbeddingDataset {
    std::uint32_t num_classes = 0;
    std::uint32_t zeta_w = 1, zeta_h = 1;
    std::uint32_t d_in = 0;
    std::string split;  // "train" / "test" / free-form
    std::vector<EmbeddingRecord> records;

    std::size_t size() const { return records.size(); }
};

enum class SyntheticKind { EuclideanBlobs, HypersphericalVmf };

struct SyntheticSpec {
    SyntheticKind kind = SyntheticKind::EuclideanBlobs;
    std::uint32_t num_classes = 2;
    std::uint32_t per_class = 100;
    std::uint32_t d_in = 16;
    std::uint32_t zeta_w = 1, zeta_h = 1;
    double center_spread = 4.0;  // blobs: distance of class centers from origin
    double noise = 0.5;          // blobs: isotropic noise std
    double kappa_gen = 20.0;     // hypersphere: directional concentration
    double norm_min = 1.0, norm_max = 1.0;
    std::uint64_t seed = 0;
};

struct DatasetSplits {
    EmbeddingDataset train;
    EmbeddingDataset test;
};

// Deterministic synthetic data. Blobs: isotropic Gaussian clusters around
// orthogonal class centers. Hypersphere: class signal lives purely in the
// direction, record norms drawn uniformly from [norm_min, norm_max]
// independently of the class. 80/20 class-stratified split.
DatasetSplits generate(const SyntheticSpec& spec);

void save_embeddings(const EmbeddingDataset& dataset, const std::string& path);
EmbeddingDataset load_embeddings(const std::string& path);

// Deterministic stratified 80/20 split of a single dataset.
DatasetSplits split_dataset(const EmbeddingDataset& dataset, std::uint64_t seed);

FeatureGrid to_feature_grid(const EmbeddingDataset& dataset, std::size_t index);
std::vector<FeatureGrid> to_feature_grids(const EmbeddingDataset& dataset);
std::vector<int> dataset_labels(const EmbeddingDataset& dataset);

// Per-split per-class record counts, e.g. for the stats CSV.
void write_stats_csv(const DatasetSplits& splits, const std::string& path);

}  // namespace protoform
