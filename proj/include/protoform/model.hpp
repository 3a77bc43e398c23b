#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "protoform/geometry.hpp"
#include "protoform/losses.hpp"
#include "protoform/rng.hpp"

namespace protoform {

// ---------------------------------------------------------------------------
// Parameter containers

// Mlp: two per-cell affine maps, relu(W1^T x + b1) then sigmoid(W2^T h + b2).
// Projection: a single linear map z = W1^T x (d_hidden = 0, b1/w2/b2 empty),
// used for frozen-random-projection experiments where the latent must keep
// the input's direction/norm structure intact.
enum class NeckMode { Mlp, Projection };

// w1 is [d_in][d_hidden] row-major, w2 is [d_hidden][d_out] row-major.
// In projection mode w1 is [d_in][d_out].
struct NeckParams {
    NeckMode mode = NeckMode::Mlp;
    std::size_t d_in = 0, d_hidden = 0, d_out = 0;
    Vec w1, b1, w2, b2;
};

// Class-exclusive bank: prototype k belongs to class k / per_class. For
// spatial prototypes (rho > 1, Euclidean/Cosine only) each prototype owns
// rho_w*rho_h cell prototypes stored contiguously.
struct PrototypeBank {
    Formulation formulation = Formulation::Euclidean;
    PdfFamily family = PdfFamily::TruncGaussian;
    std::size_t num_classes = 0, per_class = 0, dim = 0;
    std::size_t rho_w = 1, rho_h = 1;
    std::vector<Prototype> cells;

    std::size_t num_prototypes() const { return num_classes * per_class; }
    std::size_t rho() const { return rho_w * rho_h; }
    int class_of(std::size_t proto) const { return static_cast<int>(proto / per_class); }
    const Prototype& cell(std::size_t proto, std::size_t r) const { return cells[proto * rho() + r]; }
    Prototype& cell(std::size_t proto, std::size_t r) { return cells[proto * rho() + r]; }
};

struct ModelParams {
    NeckParams neck;
    PrototypeBank bank;
    Vec head_w;  // [C][C*Q] row-major
    Vec head_b;  // [C]
    std::size_t zeta_w = 1, zeta_h = 1;
};

// ---------------------------------------------------------------------------
// Activations

struct FeatureGrid {
    std::size_t width = 1, height = 1, depth = 0;
    Vec values;  // cell-major: values[(y*width + x)*depth + c]

    std::span<const double> cell(std::size_t s) const {
        return {values.data() + s * depth, depth};
    }
    std::size_t cells() const { return width * height; }
};

struct LatentMap {
    std::size_t width = 1, height = 1, depth = 0;
    Vec values;  // same layout as FeatureGrid

    std::span<const double> cell(std::size_t s) const {
        return {values.data() + s * depth, depth};
    }
    std::size_t cells() const { return width * height; }
};

// Per-prototype similarity maps over patch positions plus the max pool.
struct PrototypeLayerOut {
    std::size_t pos_w = 1, pos_h = 1;  // valid patch positions
    Vec maps;                          // [P][pos_w*pos_h] row-major
    Vec pooled;                        // [P]
    std::vector<std::size_t> argmax;   // [P], first max position

    std::size_t positions() const { return pos_w * pos_h; }
};

struct SampleCache {
    LatentMap latent;
    Vec hidden;  // relu outputs, [cells][d_hidden]
    PrototypeLayerOut protos;
    Vec logits;
};

// ---------------------------------------------------------------------------
// Spec operations

LatentMap neck_forward(const FeatureGrid& features, const NeckParams& p);
PrototypeLayerOut prototype_layer_forward(const LatentMap& z, const PrototypeBank& bank);
Vec head_forward(std::span<const double> pooled, std::span<const double> head_w,
                 std::span<const double> head_b, std::size_t num_classes);

SampleCache model_forward(const ModelParams& params, const FeatureGrid& features);

// ---------------------------------------------------------------------------
// Flat parameter layout (optimizer / checkpoint / finite differences)

struct ParamView {
    std::string path;
    double* data = nullptr;
    std::size_t size = 0;
    std::size_t offset = 0;  // into the flat vector
    bool decay = false;      // decoupled weight decay applies
};

struct ParamLayout {
    std::vector<ParamView> views;
    std::size_t total = 0;
    std::size_t neck_begin = 0, neck_end = 0;  // flat range of neck params
    std::vector<std::size_t> cell_offset;      // flat offset per bank cell
    std::size_t head_w = 0, head_b = 0;
};

// Views point into `params`; rebuilding is required after moving it.
ParamLayout build_param_layout(ModelParams& params);

// Views over a standalone prototype's learnable parameters, declared order.
std::vector<ParamView> prototype_views(Prototype& p);

Vec flatten_params(const ModelParams& params);
void unflatten_params(std::span<const double> flat, ModelParams& params);

// Locates the view path covering a flat index, e.g. for NaN diagnostics.
std::string param_path_at(const ParamLayout& layout, std::size_t flat_index);

// ---------------------------------------------------------------------------
// Backward

struct BatchLosses {
    double ce = 0.0, clst = 0.0, sep = 0.0, total = 0.0;
};

// Reverse pass over one minibatch; accumulates d total_loss / d params into
// `flat_grads` (sized layout.total, caller-zeroed) and returns the loss
// components. Max pooling and loss maxima route gradient to the first
// maximal index. Throws NumericalError (with parameter path) on NaN.
BatchLosses model_backward(const ModelParams& params, const ParamLayout& layout,
                           std::span<const FeatureGrid> features, std::span<const int> labels,
                           const LossWeights& weights, std::span<double> flat_grads,
                           bool skip_neck = false);

// Forward-only loss components for reporting.
BatchLosses batch_losses(const ModelParams& params, std::span<const FeatureGrid> features,
                         std::span<const int> labels, const LossWeights& weights);

// ---------------------------------------------------------------------------
// Construction

struct ModelSpec {
    Formulation formulation = Formulation::Euclidean;
    PdfFamily family = PdfFamily::TruncGaussian;  // derived from formulation by default
    NeckMode neck_mode = NeckMode::Mlp;
    std::size_t num_classes = 2;
    std::size_t per_class = 10;   // Q
    std::size_t dim = 128;        // D
    std::size_t d_in = 32;
    std::size_t d_hidden = 0;     // 0 -> d_in / 2 (min 1)
    std::size_t zeta_w = 1, zeta_h = 1;
    std::size_t rho_w = 1, rho_h = 1;
    std::size_t mixture_components = 3;  // K
    double l2_eps = kDefaultL2Eps;
};

ModelParams init_model(const ModelSpec& spec, Rng& rng);

// Re-project constrained parameters after an optimizer step: FB axes are
// re-orthonormalized (Gram-Schmidt, fixed order) and beta is rescaled to
// sum 1 then clipped to 2|beta_j| < kappa.
void project_constraints(ModelParams& params);

// ---------------------------------------------------------------------------
// Checkpoints ("PROTOFORM1", little-endian; see README for the exact layout)

void save_checkpoint(const ModelParams& params, const std::string& path);
ModelParams load_checkpoint(const std::string& path);

}  // namespace protoform
