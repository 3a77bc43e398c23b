#include "protoform/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "protoform/errors.hpp"
#include "protoform/model.hpp"
#include "protoform/rng.hpp"

namespace protoform {

namespace {

constexpr double kFdStep = 1e-5;

double rel_err(double analytic, double numeric) {
    return std::abs(analytic - numeric) /
           std::max({1.0, std::abs(analytic), std::abs(numeric)});
}

Vec scaled_unit(Rng& rng, std::size_t dim) {
    Vec v = rng.unit_vector(dim);
    const double scale = rng.uniform(0.5, 2.0);
    for (auto& x : v) x *= scale;
    return v;
}

HyperPGProto random_hyperpg(Rng& rng, std::size_t dim, PdfFamily family) {
    HyperPGProto p;
    p.anchor = scaled_unit(rng, dim);
    p.mu = rng.uniform(-1.2, 1.2);
    p.raw_sigma = rng.uniform(-2.0, 1.0);
    p.family = family;
    return p;
}

}  // namespace

Prototype random_prototype(Formulation f, std::size_t dim, std::uint64_t seed) {
    Rng rng(seed);
    switch (f) {
        case Formulation::Euclidean: {
            EuclideanProto p;
            p.point = rng.normal_vec(dim);
            p.eps = kDefaultL2Eps;
            return p;
        }
        case Formulation::Cosine:
            return CosineProto{scaled_unit(rng, dim)};
        case Formulation::ScaledDot:
            return ScaledDotProto{rng.normal_vec(dim)};
        case Formulation::Gaussian: {
            GaussianProto p;
            p.mean = rng.normal_vec(dim);
            p.log_var.resize(dim);
            for (auto& lv : p.log_var) lv = rng.uniform(-2.0, 1.0);
            return p;
        }
        case Formulation::HyperPG:
            return random_hyperpg(rng, dim, PdfFamily::TruncGaussian);
        case Formulation::HyperPGCauchy:
            return random_hyperpg(rng, dim, PdfFamily::Cauchy);
        case Formulation::HyperPGTruncCauchy:
            return random_hyperpg(rng, dim, PdfFamily::TruncCauchy);
        case Formulation::Vmf: {
            VmfProto p;
            p.anchor = scaled_unit(rng, dim);
            p.log_kappa = rng.uniform(-1.0, 2.0);
            return p;
        }
        case Formulation::FisherBingham: {
            FisherBinghamProto p;
            p.dim = dim;
            // orthonormal frame via Gram-Schmidt on normal draws
            p.axes.assign(dim * dim, 0.0);
            for (std::size_t j = 0; j < dim; ++j) {
                Vec v = rng.normal_vec(dim);
                for (std::size_t a = 0; a < j; ++a) {
                    double proj = 0.0;
                    for (std::size_t i = 0; i < dim; ++i) proj += p.axes[a * dim + i] * v[i];
                    for (std::size_t i = 0; i < dim; ++i) v[i] -= proj * p.axes[a * dim + i];
                }
                double n2 = 0.0;
                for (double x : v) n2 += x * x;
                const double inv = 1.0 / std::sqrt(n2);
                for (std::size_t i = 0; i < dim; ++i) p.axes[j * dim + i] = v[i] * inv;
            }
            p.log_kappa = rng.uniform(0.0, 2.0);
            p.beta.resize(dim - 1);
            double sum = 0.0;
            for (auto& b : p.beta) {
                b = 1.0 + 0.5 * rng.uniform(-1.0, 1.0);
                sum += b;
            }
            for (auto& b : p.beta) b /= sum;
            return p;
        }
        case Formulation::Mixture: {
            MixtureHyperPGProto p;
            const std::size_t k = 3;
            for (std::size_t i = 0; i < k; ++i) {
                p.components.push_back(random_hyperpg(rng, dim, PdfFamily::TruncGaussian));
            }
            p.logits_pi = rng.normal_vec(k);
            return p;
        }
    }
    throw ContractViolation("random_prototype: unknown formulation");
}

GradCheckRow gradcheck_formulation(Formulation f, std::size_t dim, std::size_t points,
                                   std::uint64_t seed) {
    GradCheckRow row;
    row.name = formulation_tag(f);
    row.points = points;
    Rng z_rng = Rng::derive(seed, 0x7a7a7aULL);
    for (std::size_t pt = 0; pt < points; ++pt) {
        Prototype proto = random_prototype(f, dim, seed + 1000003ULL * pt);
        Vec z = z_rng.normal_vec(dim);
        double n2 = 0.0;
        for (double x : z) n2 += x * x;
        if (n2 < 1e-6) {
            z[0] += 1.0;  // keep away from the zero-norm domain edge
        }

        const SimilarityGrad analytic = similarity_gradient(proto, z);

        for (std::size_t i = 0; i < z.size(); ++i) {
            const double saved = z[i];
            z[i] = saved + kFdStep;
            const double hi = similarity(proto, z);
            z[i] = saved - kFdStep;
            const double lo = similarity(proto, z);
            z[i] = saved;
            row.max_rel_err =
                std::max(row.max_rel_err, rel_err(analytic.grad_z[i], (hi - lo) / (2 * kFdStep)));
        }

        auto views = prototype_views(proto);
        std::size_t flat = 0;
        for (const auto& view : views) {
            for (std::size_t i = 0; i < view.size; ++i, ++flat) {
                const double saved = view.data[i];
                view.data[i] = saved + kFdStep;
                const double hi = similarity(proto, z);
                view.data[i] = saved - kFdStep;
                const double lo = similarity(proto, z);
                view.data[i] = saved;
                row.max_rel_err = std::max(
                    row.max_rel_err, rel_err(analytic.grad_params[flat], (hi - lo) / (2 * kFdStep)));
            }
        }
    }
    return row;
}

std::vector<GradCheckRow> gradcheck_all(std::size_t points, std::uint64_t seed, std::size_t dim) {
    std::vector<GradCheckRow> rows;
    for (const auto& tag : formulation_tags()) {
        const auto f = parse_formulation(tag);
        auto row = gradcheck_formulation(*f, dim, points, seed ^ std::hash<std::string>{}(tag));
        row.name = tag;
        rows.push_back(std::move(row));
    }
    return rows;
}

}  // namespace protoform
