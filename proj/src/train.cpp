#include "protoform/train.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <numeric>

#include "protoform/errors.hpp"

namespace protoform {

void adamw_update_element(double& param, double grad, double& m, double& v, std::uint64_t step,
                          const AdamWConfig& cfg, bool decay) {
    m = cfg.beta1 * m + (1.0 - cfg.beta1) * grad;
    v = cfg.beta2 * v + (1.0 - cfg.beta2) * grad * grad;
    const double m_hat = m / (1.0 - std::pow(cfg.beta1, static_cast<double>(step)));
    const double v_hat = v / (1.0 - std::pow(cfg.beta2, static_cast<double>(step)));
    if (decay) param *= 1.0 - cfg.lr * cfg.weight_decay;
    param -= cfg.lr * m_hat / (std::sqrt(v_hat) + cfg.eps);
}

void adamw_step(const ParamLayout& layout, std::span<const double> grads, AdamWState& state,
                const AdamWConfig& cfg, std::size_t skip_begin, std::size_t skip_end,
                bool skip_prototypes) {
    if (grads.size() != layout.total) throw ContractViolation("adamw_step: gradient size mismatch");
    if (state.m.empty()) {
        state.m.assign(layout.total, 0.0);
        state.v.assign(layout.total, 0.0);
    }
    if (state.m.size() != layout.total) throw ContractViolation("adamw_step: state size mismatch");
    ++state.step;
    for (const auto& view : layout.views) {
        if (view.offset >= skip_begin && view.offset < skip_end) continue;
        if (skip_prototypes && view.path.rfind("bank[", 0) == 0) continue;
        for (std::size_t i = 0; i < view.size; ++i) {
            const std::size_t f = view.offset + i;
            adamw_update_element(view.data[i], grads[f], state.m[f], state.v[f], state.step, cfg,
                                 view.decay);
        }
    }
}

double evaluate_top1(const ModelParams& params, const std::vector<FeatureGrid>& features,
                     const std::vector<int>& labels) {
    if (features.empty() || features.size() != labels.size()) {
        throw ContractViolation("evaluate_top1: empty or mismatched dataset");
    }
    std::size_t correct = 0;
    for (std::size_t i = 0; i < features.size(); ++i) {
        const auto cache = model_forward(params, features[i]);
        std::size_t best = 0;
        for (std::size_t c = 1; c < cache.logits.size(); ++c) {
            if (cache.logits[c] > cache.logits[best]) best = c;  // ties keep lowest index
        }
        if (static_cast<int>(best) == labels[i]) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(features.size());
}

double evaluate_top1(const ModelParams& params, const EmbeddingDataset& dataset) {
    return evaluate_top1(params, to_feature_grids(dataset), dataset_labels(dataset));
}

std::uint64_t params_checksum(const ModelParams& params) {
    const Vec flat = flatten_params(params);
    std::uint64_t h = 14695981039346656037ULL;
    for (double value : flat) {
        std::uint64_t bits = 0;
        std::memcpy(&bits, &value, sizeof(bits));
        for (int b = 0; b < 8; ++b) {
            h ^= (bits >> (8 * b)) & 0xffULL;
            h *= 1099511628211ULL;
        }
    }
    return h;
}

TrainResult train(const EmbeddingDataset& train_split, const EmbeddingDataset& test_split,
                  const TrainConfig& cfg) {
    if (train_split.num_classes < 2) throw ConfigError("train: need >= 2 classes");
    if (train_split.records.empty() || test_split.records.empty()) {
        throw ConfigError("train: empty split");
    }
    if (cfg.batch_size == 0 || !(cfg.lr > 0.0)) throw ConfigError("train: bad batch size or lr");

    const auto t0 = std::chrono::steady_clock::now();

    ModelSpec spec;
    spec.formulation = cfg.formulation;
    spec.family = formulation_family(cfg.formulation);
    // "frozen neck" experiments fix the latent map to a random isometric
    // projection of the inputs; nothing upstream of the prototypes trains
    spec.neck_mode = cfg.freeze_neck ? NeckMode::Projection : NeckMode::Mlp;
    spec.num_classes = train_split.num_classes;
    spec.per_class = cfg.per_class;
    spec.dim = cfg.dim;
    spec.d_in = train_split.d_in;
    spec.d_hidden = cfg.d_hidden;
    spec.zeta_w = train_split.zeta_w;
    spec.zeta_h = train_split.zeta_h;
    spec.mixture_components = cfg.mixture_components;
    spec.l2_eps = cfg.l2_eps;

    Rng init_rng = Rng::derive(cfg.seed, 0x696e6974ULL);
    TrainResult result;
    result.model = init_model(spec, init_rng);
    auto layout = build_param_layout(result.model);

    const auto train_features = to_feature_grids(train_split);
    const auto train_labels = dataset_labels(train_split);
    const auto test_features = to_feature_grids(test_split);
    const auto test_labels = dataset_labels(test_split);
    const std::size_t n = train_features.size();

    AdamWConfig opt;
    opt.lr = cfg.lr;
    opt.weight_decay = cfg.weight_decay;
    AdamWState state;

    auto add_row = [&](std::size_t epoch, const BatchLosses& losses) {
        EpochRow row;
        row.epoch = epoch;
        row.ce = losses.ce;
        row.clst = losses.clst;
        row.sep = losses.sep;
        row.total = losses.total;
        row.test_acc = evaluate_top1(result.model, test_features, test_labels);
        result.report.rows.push_back(row);
    };

    // epoch 0: initial evaluation, no updates
    add_row(0, batch_losses(result.model, train_features, train_labels, cfg.weights));

    std::vector<std::size_t> order(n);
    Vec grads(layout.total);
    const std::size_t skip_begin = cfg.freeze_neck ? layout.neck_begin : 0;
    const std::size_t skip_end = cfg.freeze_neck ? layout.neck_end : 0;

    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        Rng shuffle_rng = Rng::derive(cfg.seed, 0x65706f6368ULL + epoch);
        std::iota(order.begin(), order.end(), 0);
        shuffle_rng.shuffle(order);

        BatchLosses epoch_losses;
        std::vector<FeatureGrid> batch_features;
        std::vector<int> batch_labels;
        for (std::size_t start = 0; start < n; start += cfg.batch_size) {
            const std::size_t stop = std::min(n, start + cfg.batch_size);
            batch_features.clear();
            batch_labels.clear();
            for (std::size_t i = start; i < stop; ++i) {
                batch_features.push_back(train_features[order[i]]);
                batch_labels.push_back(train_labels[order[i]]);
            }
            std::fill(grads.begin(), grads.end(), 0.0);
            BatchLosses losses;
            try {
                losses = model_backward(result.model, layout, batch_features, batch_labels,
                                        cfg.weights, grads, cfg.freeze_neck);
            } catch (const DegenerateDistribution& e) {
                throw NumericalError(std::string("train: ") + e.what() + " at epoch " +
                                     std::to_string(epoch));
            }
            if (!std::isfinite(losses.total)) {
                throw NumericalError("train: loss diverged at epoch " + std::to_string(epoch));
            }
            adamw_step(layout, grads, state, opt, skip_begin, skip_end, cfg.freeze_prototypes);
            project_constraints(result.model);

            const double w = static_cast<double>(stop - start) / static_cast<double>(n);
            epoch_losses.ce += w * losses.ce;
            epoch_losses.clst += w * losses.clst;
            epoch_losses.sep += w * losses.sep;
            epoch_losses.total += w * losses.total;
        }
        add_row(epoch, epoch_losses);
    }

    result.report.final_test_acc = result.report.rows.back().test_acc;
    result.report.params_checksum = params_checksum(result.model);
    result.report.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return result;
}

std::string report_csv(const RunReport& report) {
    std::string out = "epoch,ce,clst,sep,total,test_acc\n";
    char line[256];
    for (const auto& row : report.rows) {
        std::snprintf(line, sizeof(line), "%zu,%.10g,%.10g,%.10g,%.10g,%.10g\n", row.epoch, row.ce,
                      row.clst, row.sep, row.total, row.test_acc);
        out += line;
    }
    return out;
}

void write_report_csv(const RunReport& report, const std::string& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw ConfigError("cannot open " + path);
    out << report_csv(report);
}

}  // namespace protoform
