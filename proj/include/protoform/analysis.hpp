#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "protoform/data.hpp"
#include "protoform/model.hpp"
#include "protoform/train.hpp"

namespace protoform {

// ---------------------------------------------------------------------------
// Nearest training patches (the "this looks like that" evidence)

struct PatchHit {
    std::size_t record = 0;
    std::size_t cell_x = 0, cell_y = 0;
    double similarity = 0.0;
};

// k highest-similarity latent cells across the dataset for one prototype,
// descending; ties broken by (record, cell) order. Saturates at the total
// cell count. rho = 1 banks only.
std::vector<PatchHit> nearest_patches(const ModelParams& params, const EmbeddingDataset& dataset,
                                      std::size_t proto_index, std::size_t k);

// ---------------------------------------------------------------------------
// Hypersphere activation grids (3-D lat/lon lattice)

struct SphereGrid {
    std::size_t n_lat = 0, n_lon = 0;
    std::vector<double> lat_deg, lon_deg;
    Vec values;  // [lat][lon] row-major

    double value(std::size_t i_lat, std::size_t i_lon) const {
        return values[i_lat * n_lon + i_lon];
    }
};

// Evaluates a direction-only prototype (cosine, hyperpg, vmf, fb, mixture)
// on the unit sphere. Other formulations raise ConfigError naming the
// supported tags. D must be 3.
SphereGrid sphere_activation_grid(const Prototype& p, std::size_t n_lat = 181,
                                  std::size_t n_lon = 360);

void write_sphere_csv(const SphereGrid& grid, const std::string& path);

// ---------------------------------------------------------------------------
// Learned (mu, sigma) scatter for HyperPG banks

struct MuSigmaPoint {
    std::size_t proto_id = 0;
    double mu = 0.0, sigma = 0.0;
};

std::vector<MuSigmaPoint> param_scatter(const ModelParams& params);
void write_scatter_csv(const std::vector<MuSigmaPoint>& points, const std::string& path);

// ---------------------------------------------------------------------------
// Ablation sweeps (prototypes per class / dimensions)

enum class SweepAxis { PrototypesPerClass, Dimensions };

struct SweepRow {
    std::string formulation;
    std::size_t axis_value = 0;
    std::uint64_t seed = 0;
    double test_acc = 0.0;  // NaN for diverged runs
};

struct SweepAggregate {
    std::string formulation;
    std::size_t axis_value = 0;
    double mean_acc = 0.0, std_acc = 0.0;
};

struct SweepResult {
    SweepAxis axis;
    std::vector<SweepRow> rows;
    std::vector<SweepAggregate> aggregates;
};

// One train() per (axis value, seed); diverged runs are recorded as NaN and
// the sweep continues. Runs may execute in parallel (up to max_threads);
// aggregation order is fixed.
SweepResult run_sweep(SweepAxis axis, const std::vector<std::size_t>& values,
                      const TrainConfig& base, const DatasetSplits& data,
                      const std::vector<std::uint64_t>& seeds, std::size_t max_threads = 1);

void write_sweep_csv(const SweepResult& result, const std::string& rows_path,
                     const std::string& summary_path);

}  // namespace protoform
