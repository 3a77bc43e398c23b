#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

namespace protoform {

using Vec = std::vector<double>;

// 1-D density family placed over cosine-similarity values. Truncated
// families are renormalized to the cosine range [-1, 1].
enum class PdfFamily { Gaussian, Cauchy, TruncGaussian, TruncCauchy };

constexpr double kTruncLo = -1.0;
constexpr double kTruncHi = 1.0;

// sigma = softplus(raw_sigma) + kSigmaFloor keeps the learned spread strictly
// positive and away from a delta collapse.
constexpr double kSigmaFloor = 1e-3;

// Smallest truncation mass we accept before declaring the distribution
// degenerate.
constexpr double kMinTruncMass = 1e-300;

constexpr double kDefaultL2Eps = 1e-4;

// ---------------------------------------------------------------------------
// Prototype parameter bundles, one per formulation.

struct EuclideanProto {
    Vec point;
    double eps = kDefaultL2Eps;
};

struct CosineProto {
    Vec point;
};

struct ScaledDotProto {
    Vec point;
};

struct GaussianProto {
    Vec mean;
    Vec log_var;
};

struct HyperPGProto {
    Vec anchor;
    double mu = 0.0;
    double raw_sigma = 0.0;
    PdfFamily family = PdfFamily::TruncGaussian;
};

struct VmfProto {
    Vec anchor;
    double log_kappa = 0.0;
};

struct FisherBinghamProto {
    // axes[j*dim + i] is component i of axis j; axis 0 is the concentration
    // direction, axes 1..D-1 carry the ellipticity terms.
    Vec axes;
    std::size_t dim = 0;
    double log_kappa = 0.0;
    Vec beta;  // D-1 entries, sum to 1, 2|beta_j| < kappa
};

struct MixtureHyperPGProto {
    std::vector<HyperPGProto> components;
    Vec logits_pi;
};

using Prototype = std::variant<EuclideanProto, CosineProto, ScaledDotProto, GaussianProto,
                               HyperPGProto, VmfProto, FisherBinghamProto, MixtureHyperPGProto>;

std::size_t prototype_dim(const Prototype& p);

// Number of learnable scalars in the prototype, in declared parameter order:
//   Euclidean/Cosine/ScaledDot : point[D]
//   Gaussian                   : mean[D], log_var[D]
//   HyperPG                    : anchor[D], mu, raw_sigma
//   VMF                        : anchor[D], log_kappa
//   FisherBingham              : axes[D*D], log_kappa, beta[D-1]
//   Mixture                    : K x (anchor[D], mu, raw_sigma), logits_pi[K]
std::size_t prototype_param_count(const Prototype& p);

// Validates the construction invariants (norms, positivity, FB orthonormal
// frame and beta constraints, ...). Throws DomainError / ContractViolation.
void validate_prototype(const Prototype& p);

// ---------------------------------------------------------------------------
// Scalar helpers.

double softplus(double x);
double sigmoid(double x);
double hyperpg_sigma(double raw_sigma);

// Phi((x - mu) / sigma), the Gaussian CDF via erf. sigma must be positive.
double gaussian_cdf(double x, double mu, double sigma);

// Density of the chosen family at x with location `loc` and scale `scale`.
// Truncated families are normalized over [-1, 1] and are zero outside it.
double pdf_eval(PdfFamily family, double x, double loc, double scale);

struct PdfGrad {
    double value = 0.0;
    double d_x = 0.0;
    double d_loc = 0.0;
    double d_scale = 0.0;
};
PdfGrad pdf_eval_grad(PdfFamily family, double x, double loc, double scale);

// ---------------------------------------------------------------------------
// Similarity measures (forward values).

double l2_similarity(std::span<const double> z, std::span<const double> p, double eps);
double cosine_similarity(std::span<const double> z, std::span<const double> p);
double scaled_dot_similarity(std::span<const double> z, std::span<const double> p);
double gaussian_log_similarity(std::span<const double> z, const GaussianProto& p);
double hyperpg_similarity(std::span<const double> z, const HyperPGProto& p);
double vmf_log_similarity(std::span<const double> z, const VmfProto& p);
double fb_log_similarity(std::span<const double> z, const FisherBinghamProto& p);
double mixture_similarity(std::span<const double> z, const MixtureHyperPGProto& p);

// Dispatch over the variant.
double similarity(const Prototype& p, std::span<const double> z);

// ---------------------------------------------------------------------------
// Analytic gradients.

struct SimilarityGrad {
    double value = 0.0;
    Vec grad_z;       // d value / d z
    Vec grad_params;  // d value / d learnable params, declared order
};

SimilarityGrad similarity_gradient(const Prototype& p, std::span<const double> z);

// ---------------------------------------------------------------------------
// Formulation tags as used by the CLI, checkpoints and sweeps.

enum class Formulation {
    Euclidean,
    Cosine,
    ScaledDot,
    Gaussian,
    HyperPG,            // canonical: truncated Gaussian over cosines
    HyperPGCauchy,      // Cauchy family
    HyperPGTruncCauchy, // truncated Cauchy family
    Vmf,
    FisherBingham,
    Mixture,
};

// "euclidean", "cosine", "sdot", "gaussian", "hyperpg", "hyperpg-cauchy",
// "hyperpg-trunc-gauss", "hyperpg-trunc-cauchy", "vmf", "fb", "mixture".
// "hyperpg-trunc-gauss" is an explicit alias of "hyperpg".
std::optional<Formulation> parse_formulation(const std::string& tag);
std::string formulation_tag(Formulation f);
const std::vector<std::string>& formulation_tags();

// Family driven by the formulation; meaningful for HyperPG* and Mixture.
PdfFamily formulation_family(Formulation f);

}  // namespace protoform
