#include "protoform/model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>

#include "protoform/errors.hpp"

namespace protoform {

namespace {

constexpr char kCheckpointMagic[10] = {'P', 'R', 'O', 'T', 'O', 'F', 'O', 'R', 'M', '1'};

std::size_t variant_index_for(Formulation f) {
    switch (f) {
        case Formulation::Euclidean: return 0;
        case Formulation::Cosine: return 1;
        case Formulation::ScaledDot: return 2;
        case Formulation::Gaussian: return 3;
        case Formulation::HyperPG:
        case Formulation::HyperPGCauchy:
        case Formulation::HyperPGTruncCauchy: return 4;
        case Formulation::Vmf: return 5;
        case Formulation::FisherBingham: return 6;
        case Formulation::Mixture: return 7;
    }
    throw ContractViolation("unknown formulation");
}

void validate_bank(const PrototypeBank& bank, std::size_t latent_depth) {
    if (bank.num_prototypes() == 0) throw ConfigError("prototype bank is empty");
    if (bank.dim != latent_depth) {
        throw ContractViolation("prototype_layer_forward: bank dim " + std::to_string(bank.dim) +
                                " vs latent depth " + std::to_string(latent_depth));
    }
    if (bank.cells.size() != bank.num_prototypes() * bank.rho()) {
        throw ConfigError("prototype bank: cell count does not match C*Q*rho");
    }
    const std::size_t want = variant_index_for(bank.formulation);
    for (const auto& c : bank.cells) {
        if (c.index() != want) {
            throw ConfigError("prototype bank: formulation mismatch within bank");
        }
    }
    if (bank.rho() > 1 && bank.formulation != Formulation::Euclidean &&
        bank.formulation != Formulation::Cosine) {
        throw ConfigError("spatial prototypes (rho > 1) are supported for euclidean/cosine only");
    }
}

struct NeckCache {
    LatentMap latent;
    Vec hidden;
};

NeckCache neck_forward_cached(const FeatureGrid& f, const NeckParams& p) {
    if (f.depth != p.d_in) {
        throw ContractViolation("neck_forward: feature depth " + std::to_string(f.depth) +
                                " vs d_in " + std::to_string(p.d_in));
    }
    for (double v : f.values) {
        if (!std::isfinite(v)) throw ContractViolation("neck_forward: non-finite feature");
    }
    NeckCache out;
    out.latent.width = f.width;
    out.latent.height = f.height;
    out.latent.depth = p.d_out;
    out.latent.values.resize(f.cells() * p.d_out);
    if (p.mode == NeckMode::Projection) {
        for (std::size_t s = 0; s < f.cells(); ++s) {
            const auto x = f.cell(s);
            double* z = out.latent.values.data() + s * p.d_out;
            for (std::size_t o = 0; o < p.d_out; ++o) {
                double acc = 0.0;
                for (std::size_t i = 0; i < p.d_in; ++i) acc += p.w1[i * p.d_out + o] * x[i];
                z[o] = acc;
            }
        }
        return out;
    }
    out.hidden.resize(f.cells() * p.d_hidden);
    for (std::size_t s = 0; s < f.cells(); ++s) {
        const auto x = f.cell(s);
        double* h = out.hidden.data() + s * p.d_hidden;
        for (std::size_t j = 0; j < p.d_hidden; ++j) {
            double acc = p.b1[j];
            for (std::size_t i = 0; i < p.d_in; ++i) acc += p.w1[i * p.d_hidden + j] * x[i];
            h[j] = acc > 0.0 ? acc : 0.0;
        }
        double* z = out.latent.values.data() + s * p.d_out;
        for (std::size_t o = 0; o < p.d_out; ++o) {
            double acc = p.b2[o];
            for (std::size_t j = 0; j < p.d_hidden; ++j) acc += p.w2[j * p.d_out + o] * h[j];
            z[o] = sigmoid(acc);
        }
    }
    return out;
}

}  // namespace

LatentMap neck_forward(const FeatureGrid& features, const NeckParams& p) {
    return neck_forward_cached(features, p).latent;
}

PrototypeLayerOut prototype_layer_forward(const LatentMap& z, const PrototypeBank& bank) {
    validate_bank(bank, z.depth);
    if (z.width < bank.rho_w || z.height < bank.rho_h) {
        throw ConfigError("prototype patch larger than the latent grid");
    }
    PrototypeLayerOut out;
    out.pos_w = z.width - bank.rho_w + 1;
    out.pos_h = z.height - bank.rho_h + 1;
    const std::size_t P = bank.num_prototypes();
    const std::size_t positions = out.positions();
    out.maps.resize(P * positions);
    out.pooled.resize(P);
    out.argmax.resize(P);
    for (std::size_t k = 0; k < P; ++k) {
        double best = -std::numeric_limits<double>::infinity();
        std::size_t best_pos = 0;
        for (std::size_t py = 0; py < out.pos_h; ++py) {
            for (std::size_t px = 0; px < out.pos_w; ++px) {
                double acc = 0.0;
                for (std::size_t dy = 0; dy < bank.rho_h; ++dy) {
                    for (std::size_t dx = 0; dx < bank.rho_w; ++dx) {
                        const std::size_t s = (py + dy) * z.width + (px + dx);
                        const std::size_t r = dy * bank.rho_w + dx;
                        acc += similarity(bank.cell(k, r), z.cell(s));
                    }
                }
                const std::size_t q = py * out.pos_w + px;
                out.maps[k * positions + q] = acc;
                if (acc > best) {
                    best = acc;
                    best_pos = q;
                }
            }
        }
        out.pooled[k] = best;
        out.argmax[k] = best_pos;
    }
    return out;
}

Vec head_forward(std::span<const double> pooled, std::span<const double> head_w,
                 std::span<const double> head_b, std::size_t num_classes) {
    const std::size_t P = pooled.size();
    if (head_w.size() != num_classes * P || head_b.size() != num_classes) {
        throw ContractViolation("head_forward: width mismatch");
    }
    Vec logits(num_classes);
    for (std::size_t c = 0; c < num_classes; ++c) {
        double acc = head_b[c];
        for (std::size_t p = 0; p < P; ++p) acc += head_w[c * P + p] * pooled[p];
        logits[c] = acc;
    }
    return logits;
}

SampleCache model_forward(const ModelParams& params, const FeatureGrid& features) {
    SampleCache cache;
    auto neck = neck_forward_cached(features, params.neck);
    cache.latent = std::move(neck.latent);
    cache.hidden = std::move(neck.hidden);
    cache.protos = prototype_layer_forward(cache.latent, params.bank);
    cache.logits = head_forward(cache.protos.pooled, params.head_w, params.head_b,
                                params.bank.num_classes);
    return cache;
}

// ---------------------------------------------------------------------------
// Parameter layout

namespace {

void add_view(ParamLayout& layout, std::string path, double* data, std::size_t size, bool decay) {
    layout.views.push_back({std::move(path), data, size, layout.total, decay});
    layout.total += size;
}

void add_prototype_views(ParamLayout& layout, const std::string& base, Prototype& proto) {
    std::visit(
        [&](auto& p) {
            using T = std::decay_t<decltype(p)>;
            if constexpr (std::is_same_v<T, EuclideanProto> || std::is_same_v<T, CosineProto> ||
                          std::is_same_v<T, ScaledDotProto>) {
                add_view(layout, base + ".point", p.point.data(), p.point.size(), true);
            } else if constexpr (std::is_same_v<T, GaussianProto>) {
                add_view(layout, base + ".mean", p.mean.data(), p.mean.size(), true);
                add_view(layout, base + ".log_var", p.log_var.data(), p.log_var.size(), false);
            } else if constexpr (std::is_same_v<T, HyperPGProto>) {
                add_view(layout, base + ".anchor", p.anchor.data(), p.anchor.size(), true);
                add_view(layout, base + ".mu", &p.mu, 1, false);
                add_view(layout, base + ".raw_sigma", &p.raw_sigma, 1, false);
            } else if constexpr (std::is_same_v<T, VmfProto>) {
                add_view(layout, base + ".anchor", p.anchor.data(), p.anchor.size(), true);
                add_view(layout, base + ".log_kappa", &p.log_kappa, 1, false);
            } else if constexpr (std::is_same_v<T, FisherBinghamProto>) {
                add_view(layout, base + ".axes", p.axes.data(), p.axes.size(), true);
                add_view(layout, base + ".log_kappa", &p.log_kappa, 1, false);
                add_view(layout, base + ".beta", p.beta.data(), p.beta.size(), false);
            } else {
                for (std::size_t i = 0; i < p.components.size(); ++i) {
                    auto& c = p.components[i];
                    const std::string cb = base + ".comp[" + std::to_string(i) + "]";
                    add_view(layout, cb + ".anchor", c.anchor.data(), c.anchor.size(), true);
                    add_view(layout, cb + ".mu", &c.mu, 1, false);
                    add_view(layout, cb + ".raw_sigma", &c.raw_sigma, 1, false);
                }
                add_view(layout, base + ".logits_pi", p.logits_pi.data(), p.logits_pi.size(),
                         false);
            }
        },
        proto);
}

}  // namespace

std::vector<ParamView> prototype_views(Prototype& p) {
    ParamLayout scratch;
    add_prototype_views(scratch, "proto", p);
    return std::move(scratch.views);
}

ParamLayout build_param_layout(ModelParams& params) {
    ParamLayout layout;
    layout.neck_begin = 0;
    add_view(layout, "neck.w1", params.neck.w1.data(), params.neck.w1.size(), true);
    add_view(layout, "neck.b1", params.neck.b1.data(), params.neck.b1.size(), false);
    add_view(layout, "neck.w2", params.neck.w2.data(), params.neck.w2.size(), true);
    add_view(layout, "neck.b2", params.neck.b2.data(), params.neck.b2.size(), false);
    layout.neck_end = layout.total;

    const std::size_t rho = params.bank.rho();
    layout.cell_offset.resize(params.bank.cells.size());
    for (std::size_t k = 0; k < params.bank.num_prototypes(); ++k) {
        for (std::size_t r = 0; r < rho; ++r) {
            const std::size_t idx = k * rho + r;
            layout.cell_offset[idx] = layout.total;
            std::string base = "bank[" + std::to_string(k) + "]";
            if (rho > 1) base += ".cell[" + std::to_string(r) + "]";
            add_prototype_views(layout, base, params.bank.cells[idx]);
        }
    }

    layout.head_w = layout.total;
    add_view(layout, "head.w", params.head_w.data(), params.head_w.size(), true);
    layout.head_b = layout.total;
    add_view(layout, "head.b", params.head_b.data(), params.head_b.size(), false);
    return layout;
}

Vec flatten_params(const ModelParams& params) {
    auto layout = build_param_layout(const_cast<ModelParams&>(params));
    Vec flat(layout.total);
    for (const auto& v : layout.views) {
        std::copy(v.data, v.data + v.size, flat.begin() + static_cast<std::ptrdiff_t>(v.offset));
    }
    return flat;
}

void unflatten_params(std::span<const double> flat, ModelParams& params) {
    auto layout = build_param_layout(params);
    if (flat.size() != layout.total) {
        throw ContractViolation("unflatten_params: size mismatch");
    }
    for (const auto& v : layout.views) {
        std::copy(flat.begin() + static_cast<std::ptrdiff_t>(v.offset),
                  flat.begin() + static_cast<std::ptrdiff_t>(v.offset + v.size), v.data);
    }
}

std::string param_path_at(const ParamLayout& layout, std::size_t flat_index) {
    for (const auto& v : layout.views) {
        if (flat_index >= v.offset && flat_index < v.offset + v.size) {
            return v.size > 1 ? v.path + "[" + std::to_string(flat_index - v.offset) + "]"
                              : v.path;
        }
    }
    return "<unknown>";
}

// ---------------------------------------------------------------------------
// Backward

namespace {

// Backprop through the neck for one cell. d_latent is d loss / d z for the
// cell; gradients accumulate into the flat buffer at the neck offsets.
void neck_cell_backward(const NeckParams& p, std::span<const double> x,
                        std::span<const double> h, std::span<const double> z,
                        std::span<const double> d_z, const ParamLayout& layout,
                        std::span<double> g) {
    // view order: w1, b1, w2, b2
    double* gw1 = g.data() + layout.views[0].offset;
    double* gb1 = g.data() + layout.views[1].offset;
    double* gw2 = g.data() + layout.views[2].offset;
    double* gb2 = g.data() + layout.views[3].offset;

    if (p.mode == NeckMode::Projection) {
        for (std::size_t o = 0; o < p.d_out; ++o) {
            for (std::size_t i = 0; i < p.d_in; ++i) gw1[i * p.d_out + o] += x[i] * d_z[o];
        }
        return;
    }

    Vec dz_pre(p.d_out);
    for (std::size_t o = 0; o < p.d_out; ++o) dz_pre[o] = d_z[o] * z[o] * (1.0 - z[o]);

    Vec dh(p.d_hidden, 0.0);
    for (std::size_t j = 0; j < p.d_hidden; ++j) {
        double acc = 0.0;
        for (std::size_t o = 0; o < p.d_out; ++o) {
            acc += p.w2[j * p.d_out + o] * dz_pre[o];
            gw2[j * p.d_out + o] += h[j] * dz_pre[o];
        }
        dh[j] = acc;
    }
    for (std::size_t o = 0; o < p.d_out; ++o) gb2[o] += dz_pre[o];

    for (std::size_t j = 0; j < p.d_hidden; ++j) {
        if (h[j] <= 0.0) continue;  // relu gate
        gb1[j] += dh[j];
        for (std::size_t i = 0; i < p.d_in; ++i) gw1[i * p.d_hidden + j] += x[i] * dh[j];
    }
}

}  // namespace

BatchLosses model_backward(const ModelParams& params, const ParamLayout& layout,
                           std::span<const FeatureGrid> features, std::span<const int> labels,
                           const LossWeights& weights, std::span<double> flat_grads,
                           bool skip_neck) {
    const std::size_t N = features.size();
    if (N == 0 || labels.size() != N) throw ContractViolation("model_backward: empty batch");
    if (flat_grads.size() != layout.total) {
        throw ContractViolation("model_backward: gradient buffer size mismatch");
    }
    const std::size_t P = params.bank.num_prototypes();
    const std::size_t C = params.bank.num_classes;
    const std::size_t rho = params.bank.rho();

    std::vector<SampleCache> caches(N);
    BatchSimilarities batch;
    batch.num_samples = N;
    batch.num_prototypes = P;
    batch.scores.resize(N * P);
    batch.labels.assign(labels.begin(), labels.end());
    batch.proto_class.resize(P);
    for (std::size_t k = 0; k < P; ++k) batch.proto_class[k] = params.bank.class_of(k);

    BatchLosses losses;
    for (std::size_t i = 0; i < N; ++i) {
        caches[i] = model_forward(params, features[i]);
        std::copy(caches[i].protos.pooled.begin(), caches[i].protos.pooled.end(),
                  batch.scores.begin() + static_cast<std::ptrdiff_t>(i * P));
        losses.ce += cross_entropy(caches[i].logits, labels[i]);
    }
    losses.ce /= static_cast<double>(N);
    losses.clst = cluster_loss(batch);
    losses.sep = separation_loss(batch);
    losses.total = total_loss(losses.ce, losses.clst, losses.sep, weights);

    // d loss / d pooled scores, all three objectives combined
    Vec d_scores(N * P, 0.0);
    cluster_loss_backward(batch, weights.lambda_clst, d_scores);
    separation_loss_backward(batch, weights.lambda_sep, d_scores);

    double* g_head_w = flat_grads.data() + layout.head_w;
    double* g_head_b = flat_grads.data() + layout.head_b;
    const double inv_n = 1.0 / static_cast<double>(N);

    for (std::size_t i = 0; i < N; ++i) {
        const auto& cache = caches[i];
        Vec d_logits(C, 0.0);
        cross_entropy_backward(cache.logits, labels[i], inv_n, d_logits);
        for (std::size_t c = 0; c < C; ++c) {
            g_head_b[c] += d_logits[c];
            for (std::size_t p = 0; p < P; ++p) {
                g_head_w[c * P + p] += d_logits[c] * cache.protos.pooled[p];
            }
        }
        for (std::size_t p = 0; p < P; ++p) {
            double acc = d_scores[i * P + p];
            for (std::size_t c = 0; c < C; ++c) acc += params.head_w[c * P + p] * d_logits[c];
            d_scores[i * P + p] = acc;
        }

        // prototype layer + latent gradient
        Vec d_latent(cache.latent.values.size(), 0.0);
        for (std::size_t k = 0; k < P; ++k) {
            const double up = d_scores[i * P + k];
            if (up == 0.0) continue;
            const std::size_t q = cache.protos.argmax[k];
            const std::size_t px = q % cache.protos.pos_w;
            const std::size_t py = q / cache.protos.pos_w;
            for (std::size_t dy = 0; dy < params.bank.rho_h; ++dy) {
                for (std::size_t dx = 0; dx < params.bank.rho_w; ++dx) {
                    const std::size_t s = (py + dy) * cache.latent.width + (px + dx);
                    const std::size_t r = dy * params.bank.rho_w + dx;
                    const auto sg = similarity_gradient(params.bank.cell(k, r), cache.latent.cell(s));
                    double* gp = flat_grads.data() + layout.cell_offset[k * rho + r];
                    for (std::size_t t = 0; t < sg.grad_params.size(); ++t) {
                        gp[t] += up * sg.grad_params[t];
                    }
                    double* dz = d_latent.data() + s * cache.latent.depth;
                    for (std::size_t t = 0; t < sg.grad_z.size(); ++t) dz[t] += up * sg.grad_z[t];
                }
            }
        }

        if (!skip_neck) {
            for (std::size_t s = 0; s < cache.latent.cells(); ++s) {
                const std::size_t d = cache.latent.depth;
                std::span<const double> dz(d_latent.data() + s * d, d);
                bool any = false;
                for (double v : dz) {
                    if (v != 0.0) {
                        any = true;
                        break;
                    }
                }
                if (!any) continue;
                neck_cell_backward(params.neck, features[i].cell(s),
                                   {cache.hidden.data() + s * params.neck.d_hidden,
                                    params.neck.d_hidden},
                                   cache.latent.cell(s), dz, layout, flat_grads);
            }
        }
    }

    for (std::size_t idx = 0; idx < flat_grads.size(); ++idx) {
        if (!std::isfinite(flat_grads[idx])) {
            throw NumericalError("non-finite gradient", param_path_at(layout, idx));
        }
    }
    return losses;
}

BatchLosses batch_losses(const ModelParams& params, std::span<const FeatureGrid> features,
                         std::span<const int> labels, const LossWeights& weights) {
    const std::size_t N = features.size();
    if (N == 0 || labels.size() != N) throw ContractViolation("batch_losses: empty batch");
    const std::size_t P = params.bank.num_prototypes();
    BatchSimilarities batch;
    batch.num_samples = N;
    batch.num_prototypes = P;
    batch.scores.resize(N * P);
    batch.labels.assign(labels.begin(), labels.end());
    batch.proto_class.resize(P);
    for (std::size_t k = 0; k < P; ++k) batch.proto_class[k] = params.bank.class_of(k);

    BatchLosses out;
    for (std::size_t i = 0; i < N; ++i) {
        auto cache = model_forward(params, features[i]);
        std::copy(cache.protos.pooled.begin(), cache.protos.pooled.end(),
                  batch.scores.begin() + static_cast<std::ptrdiff_t>(i * P));
        out.ce += cross_entropy(cache.logits, labels[i]);
    }
    out.ce /= static_cast<double>(N);
    out.clst = cluster_loss(batch);
    out.sep = separation_loss(batch);
    out.total = total_loss(out.ce, out.clst, out.sep, weights);
    return out;
}

// ---------------------------------------------------------------------------
// Construction

namespace {

Vec random_orthonormal_axes(std::size_t dim, Rng& rng) {
    Vec axes(dim * dim);
    for (std::size_t j = 0; j < dim; ++j) {
        Vec v = rng.normal_vec(dim);
        // Gram-Schmidt against earlier rows
        for (std::size_t a = 0; a < j; ++a) {
            double proj = 0.0;
            for (std::size_t i = 0; i < dim; ++i) proj += axes[a * dim + i] * v[i];
            for (std::size_t i = 0; i < dim; ++i) v[i] -= proj * axes[a * dim + i];
        }
        double n2 = 0.0;
        for (double x : v) n2 += x * x;
        if (n2 < 1e-20) {
            // pathological draw; fall back to a basis vector and redo
            v.assign(dim, 0.0);
            v[j] = 1.0;
            for (std::size_t a = 0; a < j; ++a) {
                double proj = 0.0;
                for (std::size_t i = 0; i < dim; ++i) proj += axes[a * dim + i] * v[i];
                for (std::size_t i = 0; i < dim; ++i) v[i] -= proj * axes[a * dim + i];
            }
            n2 = 0.0;
            for (double x : v) n2 += x * x;
        }
        const double inv = 1.0 / std::sqrt(n2);
        for (std::size_t i = 0; i < dim; ++i) axes[j * dim + i] = v[i] * inv;
    }
    return axes;
}

double raw_sigma_for(double sigma) { return std::log(std::expm1(sigma - kSigmaFloor)); }

Prototype make_prototype(const ModelSpec& spec, Rng& rng) {
    const std::size_t d = spec.dim;
    switch (spec.formulation) {
        case Formulation::Euclidean: {
            EuclideanProto p;
            p.point.resize(d);
            for (auto& x : p.point) x = rng.uniform();
            p.eps = spec.l2_eps;
            return p;
        }
        case Formulation::Cosine: {
            return CosineProto{rng.unit_vector(d)};
        }
        case Formulation::ScaledDot: {
            ScaledDotProto p;
            p.point.resize(d);
            for (auto& x : p.point) x = rng.uniform();
            return p;
        }
        case Formulation::Gaussian: {
            GaussianProto p;
            p.mean.resize(d);
            for (auto& x : p.mean) x = rng.uniform();
            p.log_var.assign(d, std::log(0.25));
            return p;
        }
        case Formulation::HyperPG:
        case Formulation::HyperPGCauchy:
        case Formulation::HyperPGTruncCauchy: {
            HyperPGProto p;
            p.anchor = rng.unit_vector(d);
            p.mu = 0.5;
            p.raw_sigma = raw_sigma_for(0.3);
            p.family = spec.family;
            return p;
        }
        case Formulation::Vmf: {
            VmfProto p;
            p.anchor = rng.unit_vector(d);
            p.log_kappa = std::log(10.0);
            return p;
        }
        case Formulation::FisherBingham: {
            FisherBinghamProto p;
            p.dim = d;
            p.axes = random_orthonormal_axes(d, rng);
            p.log_kappa = std::log(10.0);
            p.beta.assign(d - 1, 1.0 / static_cast<double>(d - 1));
            return p;
        }
        case Formulation::Mixture: {
            MixtureHyperPGProto p;
            p.components.resize(spec.mixture_components);
            for (auto& c : p.components) {
                c.anchor = rng.unit_vector(d);
                c.mu = 0.5;
                c.raw_sigma = raw_sigma_for(0.3);
                c.family = spec.family;
            }
            p.logits_pi.assign(spec.mixture_components, 0.0);
            return p;
        }
    }
    throw ContractViolation("unknown formulation");
}

}  // namespace

ModelParams init_model(const ModelSpec& spec, Rng& rng) {
    if (spec.num_classes < 2) throw ConfigError("init_model: need >= 2 classes");
    if (spec.per_class == 0 || spec.dim == 0 || spec.d_in == 0) {
        throw ConfigError("init_model: zero-sized dimension");
    }
    if (spec.formulation == Formulation::FisherBingham && spec.dim < 2) {
        throw ConfigError("init_model: Fisher-Bingham needs D >= 2");
    }
    if (spec.formulation == Formulation::Mixture && spec.mixture_components == 0) {
        throw ConfigError("init_model: mixture needs >= 1 component");
    }
    ModelParams m;
    m.zeta_w = spec.zeta_w;
    m.zeta_h = spec.zeta_h;

    auto& neck = m.neck;
    neck.mode = spec.neck_mode;
    neck.d_in = spec.d_in;
    neck.d_out = spec.dim;
    if (neck.mode == NeckMode::Projection) {
        neck.d_hidden = 0;
        neck.w1.resize(neck.d_in * neck.d_out);
        if (neck.d_in <= neck.d_out) {
            // orthonormal rows: the projection is an isometry on the input
            // subspace, preserving angles and norms exactly
            for (std::size_t r = 0; r < neck.d_in; ++r) {
                Vec v = rng.normal_vec(neck.d_out);
                for (std::size_t a = 0; a < r; ++a) {
                    double proj = 0.0;
                    for (std::size_t i = 0; i < neck.d_out; ++i) {
                        proj += neck.w1[a * neck.d_out + i] * v[i];
                    }
                    for (std::size_t i = 0; i < neck.d_out; ++i) {
                        v[i] -= proj * neck.w1[a * neck.d_out + i];
                    }
                }
                double n2 = 0.0;
                for (double x : v) n2 += x * x;
                const double inv = 1.0 / std::sqrt(n2);
                for (std::size_t i = 0; i < neck.d_out; ++i) {
                    neck.w1[r * neck.d_out + i] = v[i] * inv;
                }
            }
        } else {
            const double scale = 1.0 / std::sqrt(static_cast<double>(neck.d_in));
            for (auto& x : neck.w1) x = rng.normal() * scale;
        }
    } else {
        neck.d_hidden =
            spec.d_hidden > 0 ? spec.d_hidden : std::max<std::size_t>(1, spec.d_in / 2);
        const double lim1 = std::sqrt(6.0 / static_cast<double>(neck.d_in));
        const double lim2 = std::sqrt(6.0 / static_cast<double>(neck.d_hidden));
        neck.w1.resize(neck.d_in * neck.d_hidden);
        for (auto& x : neck.w1) x = rng.uniform(-lim1, lim1);
        neck.b1.assign(neck.d_hidden, 0.0);
        neck.w2.resize(neck.d_hidden * neck.d_out);
        for (auto& x : neck.w2) x = rng.uniform(-lim2, lim2);
        neck.b2.assign(neck.d_out, 0.0);
    }

    auto& bank = m.bank;
    bank.formulation = spec.formulation;
    bank.family = spec.family;
    bank.num_classes = spec.num_classes;
    bank.per_class = spec.per_class;
    bank.dim = spec.dim;
    bank.rho_w = spec.rho_w;
    bank.rho_h = spec.rho_h;
    bank.cells.reserve(bank.num_prototypes() * bank.rho());
    for (std::size_t k = 0; k < bank.num_prototypes() * bank.rho(); ++k) {
        bank.cells.push_back(make_prototype(spec, rng));
        validate_prototype(bank.cells.back());
    }

    const std::size_t P = bank.num_prototypes();
    m.head_w.resize(spec.num_classes * P);
    for (std::size_t c = 0; c < spec.num_classes; ++c) {
        for (std::size_t p = 0; p < P; ++p) {
            m.head_w[c * P + p] = bank.class_of(p) == static_cast<int>(c) ? 1.0 : -0.5;
        }
    }
    m.head_b.assign(spec.num_classes, 0.0);
    return m;
}

void project_constraints(ModelParams& params) {
    for (auto& cell : params.bank.cells) {
        auto* fb = std::get_if<FisherBinghamProto>(&cell);
        if (fb == nullptr) continue;
        const std::size_t d = fb->dim;
        // Gram-Schmidt, fixed row order
        for (std::size_t j = 0; j < d; ++j) {
            for (std::size_t a = 0; a < j; ++a) {
                double proj = 0.0;
                for (std::size_t i = 0; i < d; ++i) {
                    proj += fb->axes[a * d + i] * fb->axes[j * d + i];
                }
                for (std::size_t i = 0; i < d; ++i) {
                    fb->axes[j * d + i] -= proj * fb->axes[a * d + i];
                }
            }
            double n2 = 0.0;
            for (std::size_t i = 0; i < d; ++i) n2 += fb->axes[j * d + i] * fb->axes[j * d + i];
            if (n2 < 1e-20) {
                for (std::size_t i = 0; i < d; ++i) fb->axes[j * d + i] = i == j ? 1.0 : 0.0;
                n2 = 1.0;
                for (std::size_t a = 0; a < j; ++a) {
                    double proj = 0.0;
                    for (std::size_t i = 0; i < d; ++i) {
                        proj += fb->axes[a * d + i] * fb->axes[j * d + i];
                    }
                    for (std::size_t i = 0; i < d; ++i) {
                        fb->axes[j * d + i] -= proj * fb->axes[a * d + i];
                    }
                }
                n2 = 0.0;
                for (std::size_t i = 0; i < d; ++i) {
                    n2 += fb->axes[j * d + i] * fb->axes[j * d + i];
                }
            }
            const double inv = 1.0 / std::sqrt(n2);
            for (std::size_t i = 0; i < d; ++i) fb->axes[j * d + i] *= inv;
        }
        // beta: rescale to sum 1, then clip to 2|beta_j| < kappa
        double sum = 0.0;
        for (double b : fb->beta) sum += b;
        if (std::abs(sum) < 1e-9) {
            fb->beta.assign(d - 1, 1.0 / static_cast<double>(d - 1));
        } else {
            for (auto& b : fb->beta) b /= sum;
        }
        const double limit = 0.5 * std::exp(fb->log_kappa) * (1.0 - 1e-9);
        for (auto& b : fb->beta) b = std::clamp(b, -limit, limit);
    }
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

void put_bytes(std::string& buf, const void* data, std::size_t n) {
    buf.append(static_cast<const char*>(data), n);
}

template <typename T>
void put_le(std::string& buf, T value) {
    static_assert(std::is_trivially_copyable_v<T>);
    unsigned char bytes[sizeof(T)];
    std::memcpy(bytes, &value, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) {
        std::reverse(bytes, bytes + sizeof(T));
    }
    put_bytes(buf, bytes, sizeof(T));
}

class Reader {
public:
    Reader(std::string data, std::string what) : data_(std::move(data)), what_(std::move(what)) {}

    void expect_magic(const char* magic, std::size_t n) {
        if (data_.size() < pos_ + n || std::memcmp(data_.data() + pos_, magic, n) != 0) {
            throw FormatError(what_ + ": bad magic", pos_);
        }
        pos_ += n;
    }

    template <typename T>
    T get_le() {
        if (data_.size() < pos_ + sizeof(T)) {
            throw FormatError(what_ + ": truncated file", pos_);
        }
        unsigned char bytes[sizeof(T)];
        std::memcpy(bytes, data_.data() + pos_, sizeof(T));
        if constexpr (std::endian::native == std::endian::big) {
            std::reverse(bytes, bytes + sizeof(T));
        }
        T value;
        std::memcpy(&value, bytes, sizeof(T));
        pos_ += sizeof(T);
        return value;
    }

    std::size_t pos() const { return pos_; }
    void expect_eof() {
        if (pos_ != data_.size()) throw FormatError(what_ + ": trailing bytes", pos_);
    }

private:
    std::string data_;
    std::string what_;
    std::size_t pos_ = 0;
};

std::string read_file(const std::string& path, const std::string& what) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError(what + ": cannot open " + path, 0);
    std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return data;
}

void write_file(const std::string& path, const std::string& data) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw ConfigError("cannot open " + path + " for writing");
    out.write(data.data(), static_cast<std::streamsize>(data.size()));
    if (!out) throw ConfigError("write failed for " + path);
}

}  // namespace

void save_checkpoint(const ModelParams& params, const std::string& path) {
    std::string buf;
    put_bytes(buf, kCheckpointMagic, sizeof(kCheckpointMagic));
    put_le<std::uint32_t>(buf, static_cast<std::uint32_t>(params.bank.formulation));
    put_le<std::uint32_t>(buf, static_cast<std::uint32_t>(params.bank.family));
    put_le<std::uint32_t>(buf, static_cast<std::uint32_t>(params.neck.mode));
    put_le<std::uint32_t>(buf, static_cast<std::uint32_t>(params.bank.num_classes));
    put_le<std::uint32_t>(buf, static_cast<std::uint32_t>(params.bank.per_class));
    put_le<std::uint32_t>(buf, static_cast<std::uint32_t>(params.bank.dim));
    put_le<std::uint32_t>(buf, static_cast<std::uint32_t>(params.neck.d_in));
    put_le<std::uint32_t>(buf, static_cast<std::uint32_t>(params.neck.d_hidden));
    put_le<std::uint32_t>(buf, static_cast<std::uint32_t>(params.zeta_w));
    put_le<std::uint32_t>(buf, static_cast<std::uint32_t>(params.zeta_h));
    put_le<std::uint32_t>(buf, static_cast<std::uint32_t>(params.bank.rho_w));
    put_le<std::uint32_t>(buf, static_cast<std::uint32_t>(params.bank.rho_h));
    std::uint32_t k = 1;
    if (params.bank.formulation == Formulation::Mixture && !params.bank.cells.empty()) {
        k = static_cast<std::uint32_t>(
            std::get<MixtureHyperPGProto>(params.bank.cells.front()).components.size());
    }
    put_le<std::uint32_t>(buf, k);
    double l2_eps = kDefaultL2Eps;
    if (params.bank.formulation == Formulation::Euclidean && !params.bank.cells.empty()) {
        l2_eps = std::get<EuclideanProto>(params.bank.cells.front()).eps;
    }
    put_le<double>(buf, l2_eps);

    const Vec flat = flatten_params(params);
    put_le<std::uint64_t>(buf, static_cast<std::uint64_t>(flat.size()));
    for (double v : flat) put_le<double>(buf, v);
    write_file(path, buf);
}

ModelParams load_checkpoint(const std::string& path) {
    Reader r(read_file(path, "checkpoint"), "checkpoint");
    r.expect_magic(kCheckpointMagic, sizeof(kCheckpointMagic));
    const auto formulation = r.get_le<std::uint32_t>();
    const auto family = r.get_le<std::uint32_t>();
    ModelSpec spec;
    if (formulation > static_cast<std::uint32_t>(Formulation::Mixture)) {
        throw FormatError("checkpoint: unknown formulation tag", r.pos() - 8);
    }
    if (family > static_cast<std::uint32_t>(PdfFamily::TruncCauchy)) {
        throw FormatError("checkpoint: unknown pdf family", r.pos() - 4);
    }
    spec.formulation = static_cast<Formulation>(formulation);
    spec.family = static_cast<PdfFamily>(family);
    const auto neck_mode = r.get_le<std::uint32_t>();
    if (neck_mode > static_cast<std::uint32_t>(NeckMode::Projection)) {
        throw FormatError("checkpoint: unknown neck mode", r.pos() - 4);
    }
    spec.neck_mode = static_cast<NeckMode>(neck_mode);
    spec.num_classes = r.get_le<std::uint32_t>();
    spec.per_class = r.get_le<std::uint32_t>();
    spec.dim = r.get_le<std::uint32_t>();
    spec.d_in = r.get_le<std::uint32_t>();
    spec.d_hidden = r.get_le<std::uint32_t>();
    spec.zeta_w = r.get_le<std::uint32_t>();
    spec.zeta_h = r.get_le<std::uint32_t>();
    spec.rho_w = r.get_le<std::uint32_t>();
    spec.rho_h = r.get_le<std::uint32_t>();
    spec.mixture_components = r.get_le<std::uint32_t>();
    spec.l2_eps = r.get_le<double>();

    // Build the skeleton with a throwaway stream; every value is overwritten.
    Rng scratch(0);
    ModelParams params = init_model(spec, scratch);
    auto layout = build_param_layout(params);
    const auto count = r.get_le<std::uint64_t>();
    if (count != layout.total) {
        throw FormatError("checkpoint: parameter count " + std::to_string(count) +
                              " does not match shape (" + std::to_string(layout.total) + ")",
                          r.pos() - 8);
    }
    Vec flat(count);
    for (auto& v : flat) v = r.get_le<double>();
    r.expect_eof();
    unflatten_params(flat, params);
    return params;
}

}  // namespace protoform
