#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "protoform/data.hpp"
#include "protoform/model.hpp"

namespace protoform {

struct AdamWConfig {
    double lr = 1e-4;
    double weight_decay = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct AdamWState {
    Vec m, v;
    std::uint64_t step = 0;
};

// One AdamW element update: first/second moment with bias correction plus
// decoupled decay (applied only when `decay` is set).
void adamw_update_element(double& param, double grad, double& m, double& v, std::uint64_t step,
                          const AdamWConfig& cfg, bool decay);

// Applies one optimizer step over the layout views. Views inside
// [skip_begin, skip_end) offsets are left untouched (used for freezing).
void adamw_step(const ParamLayout& layout, std::span<const double> grads, AdamWState& state,
                const AdamWConfig& cfg, std::size_t skip_begin = 0, std::size_t skip_end = 0,
                bool skip_prototypes = false);

struct TrainConfig {
    Formulation formulation = Formulation::Euclidean;
    double lr = 1e-4;
    double weight_decay = 1e-4;
    std::size_t batch_size = 48;
    std::size_t epochs = 30;
    std::uint64_t seed = 0;
    LossWeights weights;
    std::size_t per_class = 10;  // Q
    std::size_t dim = 128;       // D
    std::size_t d_hidden = 0;    // 0 -> auto
    std::size_t mixture_components = 3;
    double l2_eps = kDefaultL2Eps;
    bool freeze_neck = false;
    bool freeze_prototypes = false;
};

struct EpochRow {
    std::size_t epoch = 0;
    double ce = 0.0, clst = 0.0, sep = 0.0, total = 0.0;
    double test_acc = 0.0;
};

struct RunReport {
    std::vector<EpochRow> rows;
    double wall_seconds = 0.0;
    std::uint64_t params_checksum = 0;
    double final_test_acc = 0.0;
};

struct TrainResult {
    RunReport report;
    ModelParams model;
};

// Shuffled minibatch AdamW on the multi-objective loss. Fully reproducible
// from cfg.seed: identical configs give bitwise-identical reports (wall time
// excluded; it is not part of the CSV surface). Throws NumericalError with
// the epoch index if the loss diverges.
TrainResult train(const EmbeddingDataset& train_split, const EmbeddingDataset& test_split,
                  const TrainConfig& cfg);

double evaluate_top1(const ModelParams& params, const std::vector<FeatureGrid>& features,
                     const std::vector<int>& labels);
double evaluate_top1(const ModelParams& params, const EmbeddingDataset& dataset);

std::string report_csv(const RunReport& report);
void write_report_csv(const RunReport& report, const std::string& path);

// FNV-1a over the flat little-endian parameter bytes.
std::uint64_t params_checksum(const ModelParams& params);

}  // namespace protoform
