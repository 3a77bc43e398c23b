#include "protoform/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "protoform/errors.hpp"

namespace protoform {

namespace {

constexpr double kInvSqrt2Pi = 0.3989422804014327;  // 1/sqrt(2*pi)
constexpr double kPi = std::numbers::pi;

void check_dims(std::size_t a, std::size_t b, const char* what) {
    if (a != b) {
        throw ContractViolation(std::string(what) + ": dimension mismatch (" +
                                std::to_string(a) + " vs " + std::to_string(b) + ")");
    }
    if (a == 0) throw ContractViolation(std::string(what) + ": zero-dimensional input");
}

double dot(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

double norm(std::span<const double> a) { return std::sqrt(dot(a, a)); }

// Standardized density g(u) and derivative g'(u) of the untruncated family.
struct StdPdf {
    double g;
    double dg;
};

StdPdf std_pdf(PdfFamily family, double u) {
    switch (family) {
        case PdfFamily::Gaussian:
        case PdfFamily::TruncGaussian: {
            const double g = kInvSqrt2Pi * std::exp(-0.5 * u * u);
            return {g, -u * g};
        }
        case PdfFamily::Cauchy:
        case PdfFamily::TruncCauchy: {
            const double q = 1.0 + u * u;
            const double g = 1.0 / (kPi * q);
            return {g, -2.0 * u / (kPi * q * q)};
        }
    }
    throw ContractViolation("pdf_eval: unknown family");
}

double std_cdf(PdfFamily family, double u) {
    switch (family) {
        case PdfFamily::Gaussian:
        case PdfFamily::TruncGaussian:
            return 0.5 * (1.0 + std::erf(u / std::numbers::sqrt2));
        case PdfFamily::Cauchy:
        case PdfFamily::TruncCauchy:
            return 0.5 + std::atan(u) / kPi;
    }
    throw ContractViolation("pdf_eval: unknown family");
}

bool is_truncated(PdfFamily family) {
    return family == PdfFamily::TruncGaussian || family == PdfFamily::TruncCauchy;
}

void check_scale(double scale) {
    if (!(scale > 0.0) || !std::isfinite(scale)) {
        throw DomainError("pdf_eval: scale must be positive and finite, got " +
                          std::to_string(scale));
    }
}

// Phi(ub) - Phi(ua) for ua <= ub. The complementary form keeps far-tail
// masses down to the underflow limit; the plain erf difference saturates to
// zero beyond ~6 sigma.
double normal_interval_mass(double ua, double ub) {
    if (ua >= 0.0) {
        return 0.5 * (std::erfc(ua / std::numbers::sqrt2) - std::erfc(ub / std::numbers::sqrt2));
    }
    if (ub <= 0.0) {
        return 0.5 * (std::erfc(-ub / std::numbers::sqrt2) - std::erfc(-ua / std::numbers::sqrt2));
    }
    return 0.5 * (std::erf(ub / std::numbers::sqrt2) - std::erf(ua / std::numbers::sqrt2));
}

// Truncation mass of the family on [-1, 1]; throws if numerically zero.
double trunc_mass(PdfFamily family, double loc, double scale) {
    const double ub = (kTruncHi - loc) / scale;
    const double ua = (kTruncLo - loc) / scale;
    double mass = 0.0;
    if (family == PdfFamily::TruncGaussian) {
        mass = normal_interval_mass(ua, ub);
    } else {
        mass = std_cdf(family, ub) - std_cdf(family, ua);
    }
    if (!(mass >= kMinTruncMass)) {
        throw DegenerateDistribution("truncated distribution has no mass in [-1, 1] (loc=" +
                                     std::to_string(loc) + ", scale=" + std::to_string(scale) +
                                     ")");
    }
    return mass;
}

struct CosineGrad {
    double value;
    Vec d_z;
    Vec d_p;
};

CosineGrad cosine_grad(std::span<const double> z, std::span<const double> p) {
    check_dims(z.size(), p.size(), "cosine_similarity");
    const double nz = norm(z);
    const double np = norm(p);
    if (nz <= 0.0 || np <= 0.0) {
        throw DomainError("cosine_similarity: zero-norm input");
    }
    const double c = dot(z, p) / (nz * np);
    CosineGrad g;
    g.value = c;
    g.d_z.resize(z.size());
    g.d_p.resize(z.size());
    for (std::size_t i = 0; i < z.size(); ++i) {
        g.d_z[i] = p[i] / (nz * np) - c * z[i] / (nz * nz);
        g.d_p[i] = z[i] / (nz * np) - c * p[i] / (np * np);
    }
    return g;
}

bool all_finite(std::span<const double> v) {
    return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

}  // namespace

// ---------------------------------------------------------------------------
// Scalar helpers

double softplus(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

double sigmoid(double x) {
    if (x >= 0.0) {
        const double e = std::exp(-x);
        return 1.0 / (1.0 + e);
    }
    const double e = std::exp(x);
    return e / (1.0 + e);
}

double hyperpg_sigma(double raw_sigma) { return softplus(raw_sigma) + kSigmaFloor; }

double gaussian_cdf(double x, double mu, double sigma) {
    check_scale(sigma);
    return 0.5 * (1.0 + std::erf((x - mu) / (sigma * std::numbers::sqrt2)));
}

double pdf_eval(PdfFamily family, double x, double loc, double scale) {
    check_scale(scale);
    if (is_truncated(family)) {
        if (x < kTruncLo || x > kTruncHi) return 0.0;
        const double mass = trunc_mass(family, loc, scale);
        const double u = (x - loc) / scale;
        return std_pdf(family, u).g / (scale * mass);
    }
    const double u = (x - loc) / scale;
    return std_pdf(family, u).g / scale;
}

PdfGrad pdf_eval_grad(PdfFamily family, double x, double loc, double scale) {
    check_scale(scale);
    PdfGrad out;
    if (is_truncated(family) && (x < kTruncLo || x > kTruncHi)) {
        return out;  // zero density and gradient outside the support
    }
    const double u = (x - loc) / scale;
    const auto [g, dg] = std_pdf(family, u);
    const double f = g / scale;
    const double df_dx = dg / (scale * scale);
    const double df_dloc = -df_dx;
    const double df_dscale = -(g + u * dg) / (scale * scale);

    if (!is_truncated(family)) {
        out.value = f;
        out.d_x = df_dx;
        out.d_loc = df_dloc;
        out.d_scale = df_dscale;
        return out;
    }

    const double mass = trunc_mass(family, loc, scale);
    const double ub = (kTruncHi - loc) / scale;
    const double ua = (kTruncLo - loc) / scale;
    // ratios of boundary densities to the mass stay finite in the far tail
    // where mass^2 would underflow
    const double rb = std_pdf(family, ub).g / scale / mass;
    const double ra = std_pdf(family, ua).g / scale / mass;

    out.value = f / mass;
    out.d_x = df_dx / mass;
    out.d_loc = df_dloc / mass + out.value * (rb - ra);
    out.d_scale = df_dscale / mass + out.value * (ub * rb - ua * ra);
    return out;
}

// ---------------------------------------------------------------------------
// Similarities

double l2_similarity(std::span<const double> z, std::span<const double> p, double eps) {
    check_dims(z.size(), p.size(), "l2_similarity");
    if (!(eps > 0.0)) throw DomainError("l2_similarity: eps must be positive");
    double d2 = 0.0;
    for (std::size_t i = 0; i < z.size(); ++i) {
        const double d = z[i] - p[i];
        d2 += d * d;
    }
    return std::log((d2 + 1.0) / (d2 + eps));
}

double cosine_similarity(std::span<const double> z, std::span<const double> p) {
    check_dims(z.size(), p.size(), "cosine_similarity");
    const double nz = norm(z);
    const double np = norm(p);
    if (nz <= 0.0 || np <= 0.0) throw DomainError("cosine_similarity: zero-norm input");
    return dot(z, p) / (nz * np);
}

double scaled_dot_similarity(std::span<const double> z, std::span<const double> p) {
    check_dims(z.size(), p.size(), "scaled_dot_similarity");
    return dot(z, p) / std::sqrt(static_cast<double>(z.size()));
}

double gaussian_log_similarity(std::span<const double> z, const GaussianProto& p) {
    check_dims(z.size(), p.mean.size(), "gaussian_log_similarity");
    check_dims(p.mean.size(), p.log_var.size(), "gaussian_log_similarity");
    double s = 0.0;
    for (std::size_t i = 0; i < z.size(); ++i) {
        const double lv = p.log_var[i];
        const double d = z[i] - p.mean[i];
        s += std::log(2.0 * kPi) + lv + d * d * std::exp(-lv);
    }
    return -0.5 * s;
}

double hyperpg_similarity(std::span<const double> z, const HyperPGProto& p) {
    const double c = cosine_similarity(z, p.anchor);
    return pdf_eval(p.family, c, p.mu, hyperpg_sigma(p.raw_sigma));
}

double vmf_log_similarity(std::span<const double> z, const VmfProto& p) {
    const double c = cosine_similarity(z, p.anchor);
    return std::exp(p.log_kappa) * c;
}

// Cheap evaluation-time guard: axis norms and the per-beta bound. The full
// orthonormality check runs at construction; re-checking all pairs here
// would cost O(D^3) per evaluation. The tolerance leaves room for
// finite-difference probes and for the post-clip beta state the optimizer
// projection can produce.
static void check_fb_evaluable(const FisherBinghamProto& p) {
    const std::size_t d = p.dim;
    if (d < 2 || p.axes.size() != d * d || p.beta.size() + 1 != d) {
        throw ContractViolation("fb_log_similarity: inconsistent axes/beta sizes");
    }
    for (std::size_t j = 0; j < d; ++j) {
        double n2 = 0.0;
        for (std::size_t i = 0; i < d; ++i) n2 += p.axes[j * d + i] * p.axes[j * d + i];
        if (std::abs(n2 - 1.0) > 1e-3) {
            throw DomainError("fb_log_similarity: invalid prototype (axis " + std::to_string(j) +
                              " is not unit length)");
        }
    }
    const double kappa = std::exp(p.log_kappa);
    for (double b : p.beta) {
        if (2.0 * std::abs(b) > kappa) {
            throw DomainError("fb_log_similarity: invalid prototype (2|beta_j| < kappa violated)");
        }
    }
}

double fb_log_similarity(std::span<const double> z, const FisherBinghamProto& p) {
    const std::size_t d = p.dim;
    check_dims(z.size(), d, "fb_log_similarity");
    check_fb_evaluable(p);
    const double nz = norm(z);
    if (nz <= 0.0) throw DomainError("fb_log_similarity: zero-norm input");
    const double kappa = std::exp(p.log_kappa);
    double s = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
        double proj = 0.0;
        for (std::size_t i = 0; i < d; ++i) proj += p.axes[j * d + i] * z[i] / nz;
        if (j == 0) {
            s += kappa * proj;
        } else {
            s += p.beta[j - 1] * proj * proj;
        }
    }
    return s;
}

double mixture_similarity(std::span<const double> z, const MixtureHyperPGProto& p) {
    const std::size_t k = p.components.size();
    if (k == 0 || p.logits_pi.size() != k) {
        throw ContractViolation("mixture_similarity: need >= 1 component with matching logits");
    }
    // softmax over logits
    double mx = p.logits_pi[0];
    for (double l : p.logits_pi) mx = std::max(mx, l);
    double zsum = 0.0;
    for (double l : p.logits_pi) zsum += std::exp(l - mx);
    double s = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
        const double pi = std::exp(p.logits_pi[i] - mx) / zsum;
        s += pi * hyperpg_similarity(z, p.components[i]);
    }
    return s;
}

double similarity(const Prototype& p, std::span<const double> z) {
    return std::visit(
        [&](const auto& proto) -> double {
            using T = std::decay_t<decltype(proto)>;
            if constexpr (std::is_same_v<T, EuclideanProto>) {
                return l2_similarity(z, proto.point, proto.eps);
            } else if constexpr (std::is_same_v<T, CosineProto>) {
                return cosine_similarity(z, proto.point);
            } else if constexpr (std::is_same_v<T, ScaledDotProto>) {
                return scaled_dot_similarity(z, proto.point);
            } else if constexpr (std::is_same_v<T, GaussianProto>) {
                return gaussian_log_similarity(z, proto);
            } else if constexpr (std::is_same_v<T, HyperPGProto>) {
                return hyperpg_similarity(z, proto);
            } else if constexpr (std::is_same_v<T, VmfProto>) {
                return vmf_log_similarity(z, proto);
            } else if constexpr (std::is_same_v<T, FisherBinghamProto>) {
                return fb_log_similarity(z, proto);
            } else {
                return mixture_similarity(z, proto);
            }
        },
        p);
}

// ---------------------------------------------------------------------------
// Gradients

namespace {

SimilarityGrad grad_euclidean(const EuclideanProto& p, std::span<const double> z) {
    check_dims(z.size(), p.point.size(), "l2_similarity");
    if (!(p.eps > 0.0)) throw DomainError("l2_similarity: eps must be positive");
    double d2 = 0.0;
    for (std::size_t i = 0; i < z.size(); ++i) {
        const double d = z[i] - p.point[i];
        d2 += d * d;
    }
    SimilarityGrad g;
    g.value = std::log((d2 + 1.0) / (d2 + p.eps));
    const double ds = 1.0 / (d2 + 1.0) - 1.0 / (d2 + p.eps);
    g.grad_z.resize(z.size());
    g.grad_params.resize(z.size());
    for (std::size_t i = 0; i < z.size(); ++i) {
        const double d = z[i] - p.point[i];
        g.grad_z[i] = ds * 2.0 * d;
        g.grad_params[i] = -ds * 2.0 * d;
    }
    return g;
}

SimilarityGrad grad_cosine(const CosineProto& p, std::span<const double> z) {
    auto cg = cosine_grad(z, p.point);
    SimilarityGrad g;
    g.value = cg.value;
    g.grad_z = std::move(cg.d_z);
    g.grad_params = std::move(cg.d_p);
    return g;
}

SimilarityGrad grad_sdot(const ScaledDotProto& p, std::span<const double> z) {
    check_dims(z.size(), p.point.size(), "scaled_dot_similarity");
    const double inv = 1.0 / std::sqrt(static_cast<double>(z.size()));
    SimilarityGrad g;
    g.value = dot(z, p.point) * inv;
    g.grad_z.resize(z.size());
    g.grad_params.resize(z.size());
    for (std::size_t i = 0; i < z.size(); ++i) {
        g.grad_z[i] = p.point[i] * inv;
        g.grad_params[i] = z[i] * inv;
    }
    return g;
}

SimilarityGrad grad_gaussian(const GaussianProto& p, std::span<const double> z) {
    const std::size_t d = z.size();
    SimilarityGrad g;
    g.value = gaussian_log_similarity(z, p);
    g.grad_z.resize(d);
    g.grad_params.resize(2 * d);
    for (std::size_t i = 0; i < d; ++i) {
        const double inv_var = std::exp(-p.log_var[i]);
        const double diff = z[i] - p.mean[i];
        g.grad_z[i] = -diff * inv_var;
        g.grad_params[i] = diff * inv_var;                            // d/d mean
        g.grad_params[d + i] = -0.5 * (1.0 - diff * diff * inv_var);  // d/d log_var
    }
    return g;
}

SimilarityGrad grad_hyperpg(const HyperPGProto& p, std::span<const double> z) {
    auto cg = cosine_grad(z, p.anchor);
    const double sigma = hyperpg_sigma(p.raw_sigma);
    const PdfGrad pg = pdf_eval_grad(p.family, cg.value, p.mu, sigma);
    const std::size_t d = z.size();
    SimilarityGrad g;
    g.value = pg.value;
    g.grad_z.resize(d);
    g.grad_params.resize(d + 2);
    for (std::size_t i = 0; i < d; ++i) {
        g.grad_z[i] = pg.d_x * cg.d_z[i];
        g.grad_params[i] = pg.d_x * cg.d_p[i];
    }
    g.grad_params[d] = pg.d_loc;
    g.grad_params[d + 1] = pg.d_scale * sigmoid(p.raw_sigma);
    return g;
}

SimilarityGrad grad_vmf(const VmfProto& p, std::span<const double> z) {
    auto cg = cosine_grad(z, p.anchor);
    const double kappa = std::exp(p.log_kappa);
    const std::size_t d = z.size();
    SimilarityGrad g;
    g.value = kappa * cg.value;
    g.grad_z.resize(d);
    g.grad_params.resize(d + 1);
    for (std::size_t i = 0; i < d; ++i) {
        g.grad_z[i] = kappa * cg.d_z[i];
        g.grad_params[i] = kappa * cg.d_p[i];
    }
    g.grad_params[d] = kappa * cg.value;  // d/d log_kappa
    return g;
}

SimilarityGrad grad_fb(const FisherBinghamProto& p, std::span<const double> z) {
    const std::size_t d = p.dim;
    check_dims(z.size(), d, "fb_log_similarity");
    check_fb_evaluable(p);
    const double nz = norm(z);
    if (nz <= 0.0) throw DomainError("fb_log_similarity: zero-norm input");
    const double kappa = std::exp(p.log_kappa);

    Vec v(d);
    for (std::size_t i = 0; i < d; ++i) v[i] = z[i] / nz;

    Vec proj(d, 0.0);
    for (std::size_t j = 0; j < d; ++j) {
        for (std::size_t i = 0; i < d; ++i) proj[j] += p.axes[j * d + i] * v[i];
    }

    SimilarityGrad g;
    g.value = kappa * proj[0];
    for (std::size_t j = 1; j < d; ++j) g.value += p.beta[j - 1] * proj[j] * proj[j];

    // ds/dv, then pull back through v = z/|z|.
    Vec ds_dv(d, 0.0);
    for (std::size_t i = 0; i < d; ++i) ds_dv[i] = kappa * p.axes[i];
    for (std::size_t j = 1; j < d; ++j) {
        const double w = 2.0 * p.beta[j - 1] * proj[j];
        for (std::size_t i = 0; i < d; ++i) ds_dv[i] += w * p.axes[j * d + i];
    }
    const double vdot = dot(std::span<const double>(v), std::span<const double>(ds_dv));
    g.grad_z.resize(d);
    for (std::size_t i = 0; i < d; ++i) g.grad_z[i] = (ds_dv[i] - v[i] * vdot) / nz;

    g.grad_params.resize(d * d + 1 + (d - 1));
    for (std::size_t i = 0; i < d; ++i) g.grad_params[i] = kappa * v[i];  // axis 0
    for (std::size_t j = 1; j < d; ++j) {
        const double w = 2.0 * p.beta[j - 1] * proj[j];
        for (std::size_t i = 0; i < d; ++i) g.grad_params[j * d + i] = w * v[i];
    }
    g.grad_params[d * d] = kappa * proj[0];  // d/d log_kappa
    for (std::size_t j = 1; j < d; ++j) g.grad_params[d * d + 1 + (j - 1)] = proj[j] * proj[j];
    return g;
}

SimilarityGrad grad_mixture(const MixtureHyperPGProto& p, std::span<const double> z) {
    const std::size_t k = p.components.size();
    if (k == 0 || p.logits_pi.size() != k) {
        throw ContractViolation("mixture_similarity: need >= 1 component with matching logits");
    }
    const std::size_t d = z.size();
    double mx = p.logits_pi[0];
    for (double l : p.logits_pi) mx = std::max(mx, l);
    double zsum = 0.0;
    for (double l : p.logits_pi) zsum += std::exp(l - mx);
    Vec pi(k);
    for (std::size_t i = 0; i < k; ++i) pi[i] = std::exp(p.logits_pi[i] - mx) / zsum;

    SimilarityGrad g;
    g.grad_z.assign(d, 0.0);
    g.grad_params.assign(k * (d + 2) + k, 0.0);
    Vec comp_values(k);
    for (std::size_t i = 0; i < k; ++i) {
        SimilarityGrad cg = grad_hyperpg(p.components[i], z);
        comp_values[i] = cg.value;
        g.value += pi[i] * cg.value;
        for (std::size_t j = 0; j < d; ++j) g.grad_z[j] += pi[i] * cg.grad_z[j];
        const std::size_t base = i * (d + 2);
        for (std::size_t j = 0; j < d + 2; ++j) g.grad_params[base + j] = pi[i] * cg.grad_params[j];
    }
    // d s / d logit_j = pi_j (h_j - s)
    const std::size_t logit_base = k * (d + 2);
    for (std::size_t i = 0; i < k; ++i) {
        g.grad_params[logit_base + i] = pi[i] * (comp_values[i] - g.value);
    }
    return g;
}

}  // namespace

SimilarityGrad similarity_gradient(const Prototype& p, std::span<const double> z) {
    return std::visit(
        [&](const auto& proto) -> SimilarityGrad {
            using T = std::decay_t<decltype(proto)>;
            if constexpr (std::is_same_v<T, EuclideanProto>) {
                return grad_euclidean(proto, z);
            } else if constexpr (std::is_same_v<T, CosineProto>) {
                return grad_cosine(proto, z);
            } else if constexpr (std::is_same_v<T, ScaledDotProto>) {
                return grad_sdot(proto, z);
            } else if constexpr (std::is_same_v<T, GaussianProto>) {
                return grad_gaussian(proto, z);
            } else if constexpr (std::is_same_v<T, HyperPGProto>) {
                return grad_hyperpg(proto, z);
            } else if constexpr (std::is_same_v<T, VmfProto>) {
                return grad_vmf(proto, z);
            } else if constexpr (std::is_same_v<T, FisherBinghamProto>) {
                return grad_fb(proto, z);
            } else {
                return grad_mixture(proto, z);
            }
        },
        p);
}

// ---------------------------------------------------------------------------
// Introspection & validation

std::size_t prototype_dim(const Prototype& p) {
    return std::visit(
        [](const auto& proto) -> std::size_t {
            using T = std::decay_t<decltype(proto)>;
            if constexpr (std::is_same_v<T, EuclideanProto> || std::is_same_v<T, CosineProto> ||
                          std::is_same_v<T, ScaledDotProto>) {
                return proto.point.size();
            } else if constexpr (std::is_same_v<T, GaussianProto>) {
                return proto.mean.size();
            } else if constexpr (std::is_same_v<T, HyperPGProto> || std::is_same_v<T, VmfProto>) {
                return proto.anchor.size();
            } else if constexpr (std::is_same_v<T, FisherBinghamProto>) {
                return proto.dim;
            } else {
                return proto.components.empty() ? 0 : proto.components.front().anchor.size();
            }
        },
        p);
}

std::size_t prototype_param_count(const Prototype& p) {
    const std::size_t d = prototype_dim(p);
    return std::visit(
        [d](const auto& proto) -> std::size_t {
            using T = std::decay_t<decltype(proto)>;
            if constexpr (std::is_same_v<T, EuclideanProto> || std::is_same_v<T, CosineProto> ||
                          std::is_same_v<T, ScaledDotProto>) {
                return d;
            } else if constexpr (std::is_same_v<T, GaussianProto>) {
                return 2 * d;
            } else if constexpr (std::is_same_v<T, HyperPGProto>) {
                return d + 2;
            } else if constexpr (std::is_same_v<T, VmfProto>) {
                return d + 1;
            } else if constexpr (std::is_same_v<T, FisherBinghamProto>) {
                return d * d + 1 + (d - 1);
            } else {
                return proto.components.size() * (d + 2) + proto.components.size();
            }
        },
        p);
}

void validate_prototype(const Prototype& p) {
    std::visit(
        [](const auto& proto) {
            using T = std::decay_t<decltype(proto)>;
            if constexpr (std::is_same_v<T, EuclideanProto> || std::is_same_v<T, CosineProto> ||
                          std::is_same_v<T, ScaledDotProto>) {
                if (proto.point.empty() || !all_finite(proto.point)) {
                    throw ContractViolation("prototype: point must be nonempty and finite");
                }
                if constexpr (std::is_same_v<T, CosineProto>) {
                    if (norm(proto.point) <= 0.0) throw DomainError("cosine prototype: zero norm");
                }
            } else if constexpr (std::is_same_v<T, GaussianProto>) {
                if (proto.mean.size() != proto.log_var.size() || proto.mean.empty()) {
                    throw ContractViolation("gaussian prototype: mean/log_var size mismatch");
                }
                if (!all_finite(proto.mean) || !all_finite(proto.log_var)) {
                    throw ContractViolation("gaussian prototype: non-finite parameters");
                }
            } else if constexpr (std::is_same_v<T, HyperPGProto>) {
                if (proto.anchor.empty() || !all_finite(proto.anchor)) {
                    throw ContractViolation("hyperpg prototype: bad anchor");
                }
                if (norm(proto.anchor) <= 0.0) throw DomainError("hyperpg prototype: zero anchor");
                if (!std::isfinite(proto.mu) || !std::isfinite(proto.raw_sigma)) {
                    throw ContractViolation("hyperpg prototype: non-finite scalars");
                }
            } else if constexpr (std::is_same_v<T, VmfProto>) {
                if (proto.anchor.empty() || !all_finite(proto.anchor)) {
                    throw ContractViolation("vmf prototype: bad anchor");
                }
                if (norm(proto.anchor) <= 0.0) throw DomainError("vmf prototype: zero anchor");
                if (!std::isfinite(proto.log_kappa)) {
                    throw ContractViolation("vmf prototype: non-finite log_kappa");
                }
            } else if constexpr (std::is_same_v<T, FisherBinghamProto>) {
                const std::size_t d = proto.dim;
                if (d < 2 || proto.axes.size() != d * d || proto.beta.size() != d - 1) {
                    throw ContractViolation("fb prototype: inconsistent sizes (need D >= 2)");
                }
                if (!all_finite(proto.axes) || !all_finite(proto.beta) ||
                    !std::isfinite(proto.log_kappa)) {
                    throw ContractViolation("fb prototype: non-finite parameters");
                }
                // orthonormal frame within a loose numeric budget
                for (std::size_t a = 0; a < d; ++a) {
                    for (std::size_t b = a; b < d; ++b) {
                        double s = 0.0;
                        for (std::size_t i = 0; i < d; ++i) {
                            s += proto.axes[a * d + i] * proto.axes[b * d + i];
                        }
                        const double want = a == b ? 1.0 : 0.0;
                        if (std::abs(s - want) > 1e-8) {
                            throw DomainError("fb prototype: axes are not orthonormal");
                        }
                    }
                }
                double bsum = 0.0;
                const double kappa = std::exp(proto.log_kappa);
                for (double b : proto.beta) {
                    bsum += b;
                    if (!(2.0 * std::abs(b) < kappa)) {
                        throw DomainError("fb prototype: 2|beta_j| < kappa violated");
                    }
                }
                if (std::abs(bsum - 1.0) > 1e-8) {
                    throw DomainError("fb prototype: beta must sum to 1");
                }
            } else {
                if (proto.components.empty() ||
                    proto.logits_pi.size() != proto.components.size()) {
                    throw ContractViolation("mixture prototype: components/logits mismatch");
                }
                const std::size_t d = proto.components.front().anchor.size();
                for (const auto& c : proto.components) {
                    if (c.anchor.size() != d) {
                        throw ContractViolation("mixture prototype: component dim mismatch");
                    }
                    validate_prototype(Prototype(c));
                }
                if (!all_finite(proto.logits_pi)) {
                    throw ContractViolation("mixture prototype: non-finite logits");
                }
            }
        },
        p);
}

// ---------------------------------------------------------------------------
// Formulation tags

namespace {
const std::vector<std::pair<std::string, Formulation>> kTagTable = {
    {"euclidean", Formulation::Euclidean},
    {"cosine", Formulation::Cosine},
    {"sdot", Formulation::ScaledDot},
    {"gaussian", Formulation::Gaussian},
    {"hyperpg", Formulation::HyperPG},
    {"hyperpg-cauchy", Formulation::HyperPGCauchy},
    {"hyperpg-trunc-gauss", Formulation::HyperPG},
    {"hyperpg-trunc-cauchy", Formulation::HyperPGTruncCauchy},
    {"vmf", Formulation::Vmf},
    {"fb", Formulation::FisherBingham},
    {"mixture", Formulation::Mixture},
};
}  // namespace

std::optional<Formulation> parse_formulation(const std::string& tag) {
    for (const auto& [name, f] : kTagTable) {
        if (name == tag) return f;
    }
    return std::nullopt;
}

std::string formulation_tag(Formulation f) {
    for (const auto& [name, tag] : kTagTable) {
        if (tag == f) return name;  // first entry wins: "hyperpg" is canonical
    }
    return "unknown";
}

const std::vector<std::string>& formulation_tags() {
    static const std::vector<std::string> tags = [] {
        std::vector<std::string> t;
        for (const auto& [name, f] : kTagTable) t.push_back(name);
        return t;
    }();
    return tags;
}

PdfFamily formulation_family(Formulation f) {
    switch (f) {
        case Formulation::HyperPGCauchy:
            return PdfFamily::Cauchy;
        case Formulation::HyperPGTruncCauchy:
            return PdfFamily::TruncCauchy;
        default:
            return PdfFamily::TruncGaussian;
    }
}

}  // namespace protoform
