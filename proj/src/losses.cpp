#include "protoform/losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "protoform/errors.hpp"

namespace protoform {

namespace {

void check_batch(const BatchSimilarities& b) {
    if (b.num_samples == 0 || b.num_prototypes == 0) {
        throw ContractViolation("loss: empty batch or prototype set");
    }
    if (b.scores.size() != b.num_samples * b.num_prototypes ||
        b.labels.size() != b.num_samples || b.proto_class.size() != b.num_prototypes) {
        throw ContractViolation("loss: inconsistent BatchSimilarities sizes");
    }
}

// Index of the best prototype for sample i restricted to prototypes whose
// class membership matches `same_class`. Returns num_prototypes if the
// restricted set is empty. First maximal index wins on ties.
std::size_t best_proto(const BatchSimilarities& b, std::size_t i, bool same_class) {
    const int label = b.labels[i];
    std::size_t best = b.num_prototypes;
    double best_val = -std::numeric_limits<double>::infinity();
    for (std::size_t p = 0; p < b.num_prototypes; ++p) {
        if ((b.proto_class[p] == label) != same_class) continue;
        const double v = b.score(i, p);
        if (best == b.num_prototypes || v > best_val) {
            best = p;
            best_val = v;
        }
    }
    return best;
}

}  // namespace

double cluster_loss(const BatchSimilarities& batch) {
    check_batch(batch);
    double acc = 0.0;
    for (std::size_t i = 0; i < batch.num_samples; ++i) {
        const std::size_t p = best_proto(batch, i, /*same_class=*/true);
        if (p == batch.num_prototypes) {
            throw ConfigError("cluster_loss: class " + std::to_string(batch.labels[i]) +
                              " has no prototypes");
        }
        acc += batch.score(i, p);
    }
    return -acc / static_cast<double>(batch.num_samples);
}

double separation_loss(const BatchSimilarities& batch) {
    check_batch(batch);
    double acc = 0.0;
    for (std::size_t i = 0; i < batch.num_samples; ++i) {
        const std::size_t p = best_proto(batch, i, /*same_class=*/false);
        if (p == batch.num_prototypes) {
            throw ConfigError("separation_loss: no prototype outside class " +
                              std::to_string(batch.labels[i]) + " (single-class bank?)");
        }
        acc += batch.score(i, p);
    }
    return acc / static_cast<double>(batch.num_samples);
}

double cross_entropy(std::span<const double> logits, int label) {
    if (logits.size() < 2) throw ContractViolation("cross_entropy: need >= 2 classes");
    if (label < 0 || static_cast<std::size_t>(label) >= logits.size()) {
        throw ContractViolation("cross_entropy: label out of range");
    }
    const double mx = *std::max_element(logits.begin(), logits.end());
    double sum = 0.0;
    for (double l : logits) sum += std::exp(l - mx);
    return std::log(sum) - (logits[static_cast<std::size_t>(label)] - mx);
}

double total_loss(double ce, double clst, double sep, const LossWeights& w) {
    if (!(w.lambda_clst >= 0.0) || !(w.lambda_sep >= 0.0)) {
        throw ContractViolation("total_loss: weights must be non-negative");
    }
    return ce + w.lambda_clst * clst + w.lambda_sep * sep;
}

void cluster_loss_backward(const BatchSimilarities& batch, double weight,
                           std::span<double> d_scores) {
    check_batch(batch);
    const double scale = -weight / static_cast<double>(batch.num_samples);
    for (std::size_t i = 0; i < batch.num_samples; ++i) {
        const std::size_t p = best_proto(batch, i, /*same_class=*/true);
        if (p == batch.num_prototypes) {
            throw ConfigError("cluster_loss: class has no prototypes");
        }
        d_scores[i * batch.num_prototypes + p] += scale;
    }
}

void separation_loss_backward(const BatchSimilarities& batch, double weight,
                              std::span<double> d_scores) {
    check_batch(batch);
    const double scale = weight / static_cast<double>(batch.num_samples);
    for (std::size_t i = 0; i < batch.num_samples; ++i) {
        const std::size_t p = best_proto(batch, i, /*same_class=*/false);
        if (p == batch.num_prototypes) {
            throw ConfigError("separation_loss: single-class bank");
        }
        d_scores[i * batch.num_prototypes + p] += scale;
    }
}

void cross_entropy_backward(std::span<const double> logits, int label, double weight,
                            std::span<double> d_logits) {
    const double mx = *std::max_element(logits.begin(), logits.end());
    double sum = 0.0;
    for (double l : logits) sum += std::exp(l - mx);
    for (std::size_t c = 0; c < logits.size(); ++c) {
        double g = std::exp(logits[c] - mx) / sum;
        if (static_cast<int>(c) == label) g -= 1.0;
        d_logits[c] += weight * g;
    }
}

}  // namespace protoform
