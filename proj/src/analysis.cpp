#include "protoform/analysis.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <thread>

#include "protoform/errors.hpp"

namespace protoform {

std::vector<PatchHit> nearest_patches(const ModelParams& params, const EmbeddingDataset& dataset,
                                      std::size_t proto_index, std::size_t k) {
    if (dataset.records.empty()) throw ConfigError("nearest_patches: empty dataset");
    if (k == 0) throw ContractViolation("nearest_patches: k must be >= 1");
    if (proto_index >= params.bank.num_prototypes()) {
        throw ContractViolation("nearest_patches: prototype index out of range");
    }
    if (params.bank.rho() != 1) {
        throw ConfigError("nearest_patches: spatial (rho > 1) banks are not supported");
    }
    const Prototype& proto = params.bank.cell(proto_index, 0);
    std::vector<PatchHit> hits;
    for (std::size_t r = 0; r < dataset.size(); ++r) {
        const FeatureGrid features = to_feature_grid(dataset, r);
        const LatentMap latent = neck_forward(features, params.neck);
        for (std::size_t s = 0; s < latent.cells(); ++s) {
            PatchHit hit;
            hit.record = r;
            hit.cell_x = s % latent.width;
            hit.cell_y = s / latent.width;
            hit.similarity = similarity(proto, latent.cell(s));
            hits.push_back(hit);
        }
    }
    // descending similarity; ties by (record, cell) order
    std::stable_sort(hits.begin(), hits.end(), [](const PatchHit& a, const PatchHit& b) {
        return a.similarity > b.similarity;
    });
    if (hits.size() > k) hits.resize(k);
    return hits;
}

SphereGrid sphere_activation_grid(const Prototype& p, std::size_t n_lat, std::size_t n_lon) {
    const bool supported = std::holds_alternative<CosineProto>(p) ||
                           std::holds_alternative<HyperPGProto>(p) ||
                           std::holds_alternative<VmfProto>(p) ||
                           std::holds_alternative<FisherBinghamProto>(p) ||
                           std::holds_alternative<MixtureHyperPGProto>(p);
    if (!supported) {
        throw ConfigError(
            "sphere_activation_grid: formulation not defined on the sphere; supported: "
            "cosine, hyperpg, hyperpg-cauchy, hyperpg-trunc-gauss, hyperpg-trunc-cauchy, "
            "vmf, fb, mixture");
    }
    if (prototype_dim(p) != 3) {
        throw ConfigError("sphere_activation_grid: lattice rendering needs D = 3");
    }
    if (n_lat < 2 || n_lon < 1) throw ContractViolation("sphere_activation_grid: bad resolution");

    SphereGrid grid;
    grid.n_lat = n_lat;
    grid.n_lon = n_lon;
    grid.lat_deg.resize(n_lat);
    grid.lon_deg.resize(n_lon);
    grid.values.resize(n_lat * n_lon);
    for (std::size_t i = 0; i < n_lat; ++i) {
        grid.lat_deg[i] = -90.0 + 180.0 * static_cast<double>(i) / static_cast<double>(n_lat - 1);
    }
    for (std::size_t j = 0; j < n_lon; ++j) {
        grid.lon_deg[j] = 360.0 * static_cast<double>(j) / static_cast<double>(n_lon);
    }
    constexpr double deg = std::numbers::pi / 180.0;
    for (std::size_t i = 0; i < n_lat; ++i) {
        const double phi = grid.lat_deg[i] * deg;
        for (std::size_t j = 0; j < n_lon; ++j) {
            const double lam = grid.lon_deg[j] * deg;
            const Vec v = {std::cos(phi) * std::cos(lam), std::cos(phi) * std::sin(lam),
                           std::sin(phi)};
            grid.values[i * n_lon + j] = similarity(p, v);
        }
    }
    return grid;
}

void write_sphere_csv(const SphereGrid& grid, const std::string& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw ConfigError("cannot open " + path);
    out << "lon,lat,value\n";
    char line[128];
    for (std::size_t i = 0; i < grid.n_lat; ++i) {
        for (std::size_t j = 0; j < grid.n_lon; ++j) {
            std::snprintf(line, sizeof(line), "%.6g,%.6g,%.10g\n", grid.lon_deg[j],
                          grid.lat_deg[i], grid.value(i, j));
            out << line;
        }
    }
}

std::vector<MuSigmaPoint> param_scatter(const ModelParams& params) {
    if (params.bank.formulation != Formulation::HyperPG &&
        params.bank.formulation != Formulation::HyperPGCauchy &&
        params.bank.formulation != Formulation::HyperPGTruncCauchy) {
        throw ConfigError("param_scatter: requires a HyperPG bank");
    }
    std::vector<MuSigmaPoint> points;
    for (std::size_t k = 0; k < params.bank.num_prototypes(); ++k) {
        const auto& proto = std::get<HyperPGProto>(params.bank.cell(k, 0));
        points.push_back({k, proto.mu, hyperpg_sigma(proto.raw_sigma)});
    }
    return points;
}

void write_scatter_csv(const std::vector<MuSigmaPoint>& points, const std::string& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw ConfigError("cannot open " + path);
    out << "proto_id,mu,sigma\n";
    char line[128];
    for (const auto& p : points) {
        std::snprintf(line, sizeof(line), "%zu,%.10g,%.10g\n", p.proto_id, p.mu, p.sigma);
        out << line;
    }
}

SweepResult run_sweep(SweepAxis axis, const std::vector<std::size_t>& values,
                      const TrainConfig& base, const DatasetSplits& data,
                      const std::vector<std::uint64_t>& seeds, std::size_t max_threads) {
    if (values.empty() || seeds.empty()) throw ConfigError("run_sweep: empty values or seeds");
    SweepResult result;
    result.axis = axis;
    result.rows.resize(values.size() * seeds.size());

    std::vector<std::pair<std::size_t, std::uint64_t>> jobs;
    for (std::size_t v = 0; v < values.size(); ++v) {
        for (std::size_t s = 0; s < seeds.size(); ++s) jobs.emplace_back(v, seeds[s]);
    }

    auto run_job = [&](std::size_t job) {
        const auto [v, seed] = jobs[job];
        TrainConfig cfg = base;
        cfg.seed = seed;
        if (axis == SweepAxis::PrototypesPerClass) {
            cfg.per_class = values[v];
        } else {
            cfg.dim = values[v];
        }
        SweepRow row;
        row.formulation = formulation_tag(base.formulation);
        row.axis_value = values[v];
        row.seed = seed;
        try {
            row.test_acc = train(data.train, data.test, cfg).report.final_test_acc;
        } catch (const NumericalError&) {
            row.test_acc = std::numeric_limits<double>::quiet_NaN();
        }
        result.rows[job] = std::move(row);
    };

    const std::size_t threads = std::max<std::size_t>(1, std::min(max_threads, jobs.size()));
    if (threads <= 1) {
        for (std::size_t j = 0; j < jobs.size(); ++j) run_job(j);
    } else {
        std::vector<std::thread> pool;
        std::atomic<std::size_t> next{0};
        for (std::size_t t = 0; t < threads; ++t) {
            pool.emplace_back([&] {
                for (std::size_t j = next.fetch_add(1); j < jobs.size(); j = next.fetch_add(1)) {
                    run_job(j);
                }
            });
        }
        for (auto& th : pool) th.join();
    }

    for (std::size_t v = 0; v < values.size(); ++v) {
        double sum = 0.0, sum2 = 0.0;
        for (std::size_t s = 0; s < seeds.size(); ++s) {
            const double acc = result.rows[v * seeds.size() + s].test_acc;
            sum += acc;
            sum2 += acc * acc;
        }
        const double n = static_cast<double>(seeds.size());
        const double mean = sum / n;
        const double var = std::max(0.0, sum2 / n - mean * mean);
        result.aggregates.push_back(
            {formulation_tag(base.formulation), values[v], mean, std::sqrt(var)});
    }
    return result;
}

void write_sweep_csv(const SweepResult& result, const std::string& rows_path,
                     const std::string& summary_path) {
    {
        std::ofstream out(rows_path, std::ios::trunc);
        if (!out) throw ConfigError("cannot open " + rows_path);
        out << "formulation,axis_value,seed,test_acc\n";
        char line[192];
        for (const auto& row : result.rows) {
            std::snprintf(line, sizeof(line), "%s,%zu,%llu,%.10g\n", row.formulation.c_str(),
                          row.axis_value, static_cast<unsigned long long>(row.seed), row.test_acc);
            out << line;
        }
    }
    {
        std::ofstream out(summary_path, std::ios::trunc);
        if (!out) throw ConfigError("cannot open " + summary_path);
        out << "formulation,axis_value,mean_acc,std_acc\n";
        char line[192];
        for (const auto& agg : result.aggregates) {
            std::snprintf(line, sizeof(line), "%s,%zu,%.10g,%.10g\n", agg.formulation.c_str(),
                          agg.axis_value, agg.mean_acc, agg.std_acc);
            out << line;
        }
    }
}

}  // namespace protoform
