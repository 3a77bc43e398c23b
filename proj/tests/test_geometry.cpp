#include <doctest.h>

#include <cmath>
#include <numbers>

#include "protoform/errors.hpp"
#include "protoform/gradcheck.hpp"
#include "protoform/geometry.hpp"
#include "protoform/rng.hpp"
#include "quadrature.hpp"

using namespace protoform;

namespace {

double dot(const Vec& a, const Vec& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

}  // namespace

TEST_CASE("l2 similarity worked values") {
    const Vec z = {0.3, -0.7, 1.1};
    CHECK(l2_similarity(z, z, 1e-4) == doctest::Approx(std::log(1e4)).epsilon(1e-10));

    // squared distance exactly 1
    const Vec p = {0.3, -0.7, 0.1};
    CHECK(l2_similarity(z, p, 1e-4) == doctest::Approx(std::log(2.0 / 1.0001)).epsilon(1e-12));

    // large distances approach log(1) = 0 from above
    const Vec far = {1e8, 0.0, 0.0};
    const double v = l2_similarity(z, far, 1e-4);
    CHECK(v > 0.0);
    CHECK(v < 1e-10);
}

TEST_CASE("l2 similarity is strictly decreasing in squared distance") {
    const Vec z = {0.0, 0.0};
    double prev = l2_similarity(z, Vec{0.0, 0.0}, 1e-4);
    for (double d = 0.25; d < 4.0; d += 0.25) {
        const double cur = l2_similarity(z, Vec{d, 0.0}, 1e-4);
        CHECK(cur < prev);
        prev = cur;
    }
}

TEST_CASE("l2 similarity preconditions") {
    CHECK_THROWS_AS(l2_similarity(Vec{1.0}, Vec{1.0, 2.0}, 1e-4), ContractViolation);
    CHECK_THROWS_AS(l2_similarity(Vec{1.0}, Vec{1.0}, 0.0), DomainError);
}

TEST_CASE("cosine similarity endpoints and invariances") {
    const Vec z = {0.4, -1.2, 0.3};
    CHECK(cosine_similarity(z, z) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(cosine_similarity(Vec{1.0, 0.0}, Vec{0.0, 2.5}) == doctest::Approx(0.0));
    Vec neg = z;
    for (auto& x : neg) x = -x;
    CHECK(cosine_similarity(z, neg) == doctest::Approx(-1.0).epsilon(1e-12));

    Rng rng(11);
    for (int trial = 0; trial < 20; ++trial) {
        const Vec a = rng.normal_vec(5);
        const Vec b = rng.normal_vec(5);
        const double c = std::exp(rng.uniform(-3.0, 3.0));
        Vec scaled = a;
        for (auto& x : scaled) x *= c;
        CHECK(cosine_similarity(scaled, b) ==
              doctest::Approx(cosine_similarity(a, b)).epsilon(1e-12));
        CHECK(cosine_similarity(a, b) >= -1.0 - 1e-12);
        CHECK(cosine_similarity(a, b) <= 1.0 + 1e-12);
    }

    CHECK_THROWS_AS(cosine_similarity(Vec{0.0, 0.0}, Vec{1.0, 0.0}), DomainError);
}

TEST_CASE("scaled dot similarity") {
    const Vec ones = {1.0, 1.0, 1.0, 1.0};
    CHECK(scaled_dot_similarity(ones, ones) == doctest::Approx(2.0).epsilon(1e-14));
    CHECK(scaled_dot_similarity(Vec{0.0, 0.0}, Vec{3.0, 4.0}) == doctest::Approx(0.0));

    const Vec z = {0.5, -1.0, 2.0, 0.25};
    Vec scaled = z;
    for (auto& x : scaled) x *= 3.5;
    CHECK(scaled_dot_similarity(scaled, ones) ==
          doctest::Approx(3.5 * scaled_dot_similarity(z, ones)).epsilon(1e-12));
    CHECK_THROWS_AS(scaled_dot_similarity(Vec{1.0}, Vec{1.0, 2.0}), ContractViolation);
}

TEST_CASE("gaussian log similarity worked values") {
    GaussianProto p1{{0.0}, {0.0}};
    CHECK(gaussian_log_similarity(Vec{0.0}, p1) ==
          doctest::Approx(-0.5 * std::log(2.0 * std::numbers::pi)).epsilon(1e-12));

    GaussianProto p2{{0.7, -0.2}, {0.0, 0.0}};
    CHECK(gaussian_log_similarity(Vec{0.7, -0.2}, p2) ==
          doctest::Approx(-std::log(2.0 * std::numbers::pi)).epsilon(1e-12));

    // one sigma away in one coordinate drops the value by exactly 0.5
    GaussianProto p3{{0.0, 0.0}, {std::log(0.09), std::log(4.0)}};
    const double peak = gaussian_log_similarity(Vec{0.0, 0.0}, p3);
    const double off = gaussian_log_similarity(Vec{0.3, 0.0}, p3);
    CHECK(peak - off == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("gaussian cdf against the quadrature oracle") {
    CHECK(gaussian_cdf(0.7, 0.7, 2.0) == doctest::Approx(0.5).epsilon(1e-14));

    const auto normal_pdf = [](double mu, double sigma) {
        return [mu, sigma](double x) {
            const double u = (x - mu) / sigma;
            return std::exp(-0.5 * u * u) / (sigma * std::sqrt(2.0 * std::numbers::pi));
        };
    };
    // Phi(1) for the standard normal
    const double oracle = testsupport::integrate(normal_pdf(0.0, 1.0), -9.0, 1.0);
    CHECK(oracle == doctest::Approx(0.841345).epsilon(1e-6));
    CHECK(gaussian_cdf(1.0, 0.0, 1.0) == doctest::Approx(oracle).epsilon(1e-11));

    // a non-standard location/scale point
    const double oracle2 = testsupport::integrate(normal_pdf(0.4, 0.25), 0.4 - 9 * 0.25, 0.9);
    CHECK(gaussian_cdf(0.9, 0.4, 0.25) == doctest::Approx(oracle2).epsilon(1e-11));

    CHECK(gaussian_cdf(-40.0, 0.0, 1.0) < 1e-300);
    CHECK_THROWS_AS(gaussian_cdf(0.0, 0.0, 0.0), DomainError);
    CHECK_THROWS_AS(gaussian_cdf(0.0, 0.0, -1.0), DomainError);
}

TEST_CASE("pdf_eval worked values") {
    // Cauchy peak 1/(pi*gamma)
    CHECK(pdf_eval(PdfFamily::Cauchy, 0.3, 0.3, 0.2) ==
          doctest::Approx(1.0 / (0.2 * std::numbers::pi)).epsilon(1e-12));

    // truncated Gaussian at the center: numerator and denominator from the
    // quadrature oracle (0.39894.../0.68269... = 0.58436...)
    const auto standard_normal = [](double x) {
        return std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
    };
    const double num = standard_normal(0.0);
    const double den = testsupport::integrate(standard_normal, -1.0, 1.0);
    CHECK(num / den == doctest::Approx(0.5843685672568167).epsilon(1e-10));
    CHECK(pdf_eval(PdfFamily::TruncGaussian, 0.0, 0.0, 1.0) ==
          doctest::Approx(num / den).epsilon(1e-10));

    // delta limit: shrinking sigma concentrates mass at the location
    double prev = 0.0;
    for (double sigma : {0.5, 0.1, 0.02, 0.004}) {
        const double v = pdf_eval(PdfFamily::TruncGaussian, 0.25, 0.25, sigma);
        CHECK(v > prev);
        prev = v;
    }
    CHECK(prev > 90.0);

    // outside the truncation bounds the density is zero
    CHECK(pdf_eval(PdfFamily::TruncGaussian, 1.5, 0.0, 1.0) == 0.0);
    CHECK(pdf_eval(PdfFamily::TruncCauchy, -1.5, 0.0, 1.0) == 0.0);

    CHECK_THROWS_AS(pdf_eval(PdfFamily::TruncGaussian, 0.0, 40.0, 0.01), DegenerateDistribution);
    CHECK_THROWS_AS(pdf_eval(PdfFamily::Gaussian, 0.0, 0.0, -0.5), DomainError);
}

TEST_CASE("truncated families integrate to one on the spec grid") {
    for (const auto family : {PdfFamily::TruncGaussian, PdfFamily::TruncCauchy}) {
        for (const double loc : {-1.0, 0.0, 0.5, 1.0}) {
            for (const double scale : {0.05, 0.2, 1.0}) {
                const double integral = testsupport::integrate(
                    [&](double x) { return pdf_eval(family, x, loc, scale); }, -1.0, 1.0, 512);
                CHECK(std::abs(integral - 1.0) < 1e-6);
            }
        }
    }
}

TEST_CASE("pdf_eval_grad matches finite differences for every family") {
    Rng rng(99);
    const double h = 1e-6;
    for (const auto family : {PdfFamily::Gaussian, PdfFamily::Cauchy, PdfFamily::TruncGaussian,
                              PdfFamily::TruncCauchy}) {
        for (int trial = 0; trial < 50; ++trial) {
            const double x = rng.uniform(-0.999, 0.999);
            const double loc = rng.uniform(-1.5, 1.5);
            const double scale = std::exp(rng.uniform(-2.0, 0.5));
            const auto g = pdf_eval_grad(family, x, loc, scale);
            CHECK(g.value == doctest::Approx(pdf_eval(family, x, loc, scale)).epsilon(1e-12));
            const double dx = (pdf_eval(family, x + h, loc, scale) -
                               pdf_eval(family, x - h, loc, scale)) /
                              (2 * h);
            const double dloc = (pdf_eval(family, x, loc + h, scale) -
                                 pdf_eval(family, x, loc - h, scale)) /
                                (2 * h);
            const double dscale = (pdf_eval(family, x, loc, scale + h) -
                                   pdf_eval(family, x, loc, scale - h)) /
                                  (2 * h);
            const double tol = 1e-4;
            CHECK(std::abs(g.d_x - dx) <= tol * std::max({1.0, std::abs(g.d_x), std::abs(dx)}));
            CHECK(std::abs(g.d_loc - dloc) <=
                  tol * std::max({1.0, std::abs(g.d_loc), std::abs(dloc)}));
            CHECK(std::abs(g.d_scale - dscale) <=
                  tol * std::max({1.0, std::abs(g.d_scale), std::abs(dscale)}));
        }
    }
}

TEST_CASE("hyperpg similarity composes cosine with the density") {
    HyperPGProto p;
    p.anchor = {0.0, 0.0, 2.0};  // stored anchors need not be normalized
    p.mu = 1.0;
    p.raw_sigma = std::log(std::expm1(0.1 - kSigmaFloor));
    p.family = PdfFamily::TruncGaussian;
    const double sigma = hyperpg_sigma(p.raw_sigma);
    CHECK(sigma == doctest::Approx(0.1).epsilon(1e-12));

    CHECK(hyperpg_similarity(Vec{0.0, 0.0, 0.7}, p) ==
          doctest::Approx(pdf_eval(PdfFamily::TruncGaussian, 1.0, 1.0, sigma)).epsilon(1e-12));

    // scale invariance in z
    const Vec z = {0.3, -0.5, 0.9};
    Vec scaled = z;
    for (auto& v : scaled) v *= 17.0;
    CHECK(hyperpg_similarity(z, p) ==
          doctest::Approx(hyperpg_similarity(scaled, p)).epsilon(1e-12));

    // equal cosine to the anchor gives equal similarity
    const Vec z1 = {0.6, 0.0, 0.8};
    const Vec z2 = {0.0, -0.6, 0.8};
    CHECK(hyperpg_similarity(z1, p) == doctest::Approx(hyperpg_similarity(z2, p)).epsilon(1e-12));
}

TEST_CASE("hyperpg mu=1 decreases with angle, mu=0 peaks on the ring") {
    HyperPGProto cap;
    cap.anchor = {0.0, 0.0, 1.0};
    cap.mu = 1.0;
    cap.raw_sigma = std::log(std::expm1(0.1 - kSigmaFloor));
    cap.family = PdfFamily::TruncGaussian;
    double prev = hyperpg_similarity(Vec{0.0, 0.0, 1.0}, cap);
    for (double theta = 0.1; theta < std::numbers::pi; theta += 0.1) {
        const double cur = hyperpg_similarity(Vec{std::sin(theta), 0.0, std::cos(theta)}, cap);
        CHECK(cur < prev);
        prev = cur;
    }

    HyperPGProto ring = cap;
    ring.mu = 0.0;
    Rng rng(5);
    double best = -1.0;
    double best_cos = 1.0;
    for (int trial = 0; trial < 500; ++trial) {
        const Vec z = rng.unit_vector(3);
        const double v = hyperpg_similarity(z, ring);
        if (v > best) {
            best = v;
            best_cos = cosine_similarity(z, ring.anchor);
        }
    }
    CHECK(std::abs(best_cos) < 0.05);
}

TEST_CASE("vmf log similarity and the unnormalized-Gaussian equivalence") {
    VmfProto p;
    p.anchor = {0.0, 1.0, 0.0};
    p.log_kappa = std::log(3.0);
    CHECK(vmf_log_similarity(Vec{0.0, 5.0, 0.0}, p) == doctest::Approx(3.0).epsilon(1e-12));
    CHECK(vmf_log_similarity(Vec{1.0, 0.0, 0.0}, p) == doctest::Approx(0.0));

    // invariant under positive scaling of z
    const Vec z = {0.2, 0.9, -0.4};
    Vec big = z;
    for (auto& x : big) x *= 31.0;
    CHECK(vmf_log_similarity(big, p) == doctest::Approx(vmf_log_similarity(z, p)).epsilon(1e-12));

    // exp(s_vmf) / exp(kappa (cos - 1)) is the constant exp(kappa)
    Rng rng(21);
    const double kappa = 3.0;
    for (int trial = 0; trial < 100; ++trial) {
        const Vec v = rng.unit_vector(6);
        VmfProto q;
        q.anchor = rng.unit_vector(6);
        q.log_kappa = std::log(kappa);
        const double c = cosine_similarity(v, q.anchor);
        const double ratio = std::exp(vmf_log_similarity(v, q)) / std::exp(kappa * (c - 1.0));
        CHECK(std::abs(ratio - std::exp(kappa)) / std::exp(kappa) < 1e-12);
    }
}

TEST_CASE("vmf identity: unnormalized Gaussian restricted to the sphere") {
    Rng rng(31);
    for (const double kappa : {0.5, 5.0, 50.0}) {
        for (int trial = 0; trial < 100; ++trial) {
            const Vec v = rng.unit_vector(8);
            const Vec a = rng.unit_vector(8);
            double d2 = 0.0;
            for (std::size_t i = 0; i < 8; ++i) d2 += (v[i] - a[i]) * (v[i] - a[i]);
            const double lhs = std::exp(-kappa * d2 / 2.0);
            const double rhs = std::exp(-kappa) * std::exp(kappa * dot(v, a));
            CHECK(std::abs(lhs - rhs) / std::max(lhs, rhs) < 1e-12);
        }
    }
}

TEST_CASE("fisher-bingham worked values") {
    FisherBinghamProto p;
    p.dim = 3;
    p.axes = {1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0};
    p.log_kappa = std::log(2.0);
    p.beta = {0.7, 0.3};
    validate_prototype(Prototype{p});

    // v along the concentration axis: quadratic terms vanish
    CHECK(fb_log_similarity(Vec{2.0, 0.0, 0.0}, p) == doctest::Approx(2.0).epsilon(1e-12));

    // D = 3 hand evaluation: kappa*v1 + 0.7*v2^2 + 0.3*v3^2
    const double inv_sqrt2 = 1.0 / std::numbers::sqrt2;
    CHECK(fb_log_similarity(Vec{inv_sqrt2, inv_sqrt2, 0.0}, p) ==
          doctest::Approx(2.0 * inv_sqrt2 + 0.35).epsilon(1e-12));

    // equal betas, v orthogonal to axis 1: Parseval bounds the quadratic sum
    FisherBinghamProto eq = p;
    eq.beta = {0.5, 0.5};
    const Vec v = {0.0, 0.6, 0.8};
    const double value = fb_log_similarity(v, eq);
    CHECK(value <= 0.5 + 1e-12);
    CHECK(value == doctest::Approx(0.5).epsilon(1e-12));  // complete frame
}

TEST_CASE("fisher-bingham constraint validation") {
    FisherBinghamProto p;
    p.dim = 3;
    p.axes = {1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0};
    p.log_kappa = std::log(2.0);
    p.beta = {0.7, 0.3};
    validate_prototype(Prototype{p});

    auto bad_axes = p;
    bad_axes.axes[3] = 0.5;  // breaks orthogonality
    CHECK_THROWS_AS(validate_prototype(Prototype{bad_axes}), DomainError);

    auto bad_sum = p;
    bad_sum.beta = {0.7, 0.7};
    CHECK_THROWS_AS(validate_prototype(Prototype{bad_sum}), DomainError);

    auto bad_clip = p;
    bad_clip.log_kappa = std::log(1.2);  // 2*0.7 >= 1.2
    CHECK_THROWS_AS(validate_prototype(Prototype{bad_clip}), DomainError);
}

TEST_CASE("mixture similarity") {
    HyperPGProto comp;
    comp.anchor = {1.0, 0.0, 0.0};
    comp.mu = 0.5;
    comp.raw_sigma = 0.2;
    comp.family = PdfFamily::TruncGaussian;

    const Vec z = {0.5, 0.5, 0.1};

    MixtureHyperPGProto single;
    single.components = {comp};
    single.logits_pi = {1.7};
    CHECK(mixture_similarity(z, single) ==
          doctest::Approx(hyperpg_similarity(z, comp)).epsilon(1e-12));

    MixtureHyperPGProto twins;
    twins.components = {comp, comp};
    twins.logits_pi = {2.0, -1.0};
    CHECK(mixture_similarity(z, twins) ==
          doctest::Approx(hyperpg_similarity(z, comp)).epsilon(1e-12));

    HyperPGProto other = comp;
    other.anchor = {0.0, 1.0, 0.0};
    other.mu = 0.1;
    MixtureHyperPGProto pair;
    pair.components = {comp, other};
    pair.logits_pi = {0.3, 0.3};  // softmax -> (0.5, 0.5)
    const double a = hyperpg_similarity(z, comp);
    const double b = hyperpg_similarity(z, other);
    CHECK(mixture_similarity(z, pair) == doctest::Approx(0.5 * (a + b)).epsilon(1e-12));

    // permutation of components with their weights
    MixtureHyperPGProto swapped;
    swapped.components = {other, comp};
    swapped.logits_pi = {1.0, -0.4};
    MixtureHyperPGProto original;
    original.components = {comp, other};
    original.logits_pi = {-0.4, 1.0};
    CHECK(mixture_similarity(z, swapped) ==
          doctest::Approx(mixture_similarity(z, original)).epsilon(1e-12));
}

TEST_CASE("gradient structure at symmetric points") {
    // cosine: gradient of a 0-homogeneous function is orthogonal to z
    CosineProto cp{{0.4, -0.3, 0.8}};
    const Vec z = {0.4, -0.3, 0.8};
    const auto cg = similarity_gradient(Prototype{cp}, z);
    CHECK(std::abs(dot(cg.grad_z, z)) < 1e-12);

    // l2 at z = p: stationary peak
    EuclideanProto ep{{0.4, -0.3, 0.8}, 1e-4};
    const auto eg = similarity_gradient(Prototype{ep}, z);
    for (double g : eg.grad_z) CHECK(std::abs(g) < 1e-12);
}

TEST_CASE("analytic gradients match central differences per formulation") {
    for (const auto& tag : formulation_tags()) {
        const auto row = gradcheck_formulation(*parse_formulation(tag), 6, 25, 12345);
        INFO(tag);
        CHECK(row.max_rel_err < 1e-4);
    }
}

TEST_CASE("formulation tags round trip") {
    CHECK(formulation_tags().size() == 11);
    CHECK(*parse_formulation("hyperpg") == Formulation::HyperPG);
    CHECK(*parse_formulation("hyperpg-trunc-gauss") == Formulation::HyperPG);
    CHECK(formulation_tag(Formulation::HyperPG) == "hyperpg");
    CHECK(!parse_formulation("euclid").has_value());
    CHECK(formulation_family(Formulation::HyperPGCauchy) == PdfFamily::Cauchy);
    CHECK(formulation_family(Formulation::HyperPGTruncCauchy) == PdfFamily::TruncCauchy);
}

TEST_CASE("hyperpg sigma floor prevents collapse to a delta") {
    CHECK(hyperpg_sigma(-100.0) == doctest::Approx(kSigmaFloor).epsilon(1e-9));
    CHECK(hyperpg_sigma(0.0) == doctest::Approx(std::log(2.0) + kSigmaFloor).epsilon(1e-12));
}
