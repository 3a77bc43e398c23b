#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace protoform {

struct LossWeights {
    double lambda_clst = 0.8;
    double lambda_sep = 0.08;
};

// Max-pooled similarity scores for one minibatch together with the
// class-exclusive prototype assignment. scores is N x P row-major.
struct BatchSimilarities {
    std::size_t num_samples = 0;
    std::size_t num_prototypes = 0;
    std::vector<double> scores;
    std::vector<int> labels;       // per sample
    std::vector<int> proto_class;  // per prototype

    double score(std::size_t sample, std::size_t proto) const {
        return scores[sample * num_prototypes + proto];
    }
};

// -(1/N) sum_i max over same-class prototypes of the pooled similarity.
double cluster_loss(const BatchSimilarities& batch);

// +(1/N) sum_i max over other-class prototypes of the pooled similarity.
double separation_loss(const BatchSimilarities& batch);

// Stabilized -log softmax(logits)[label].
double cross_entropy(std::span<const double> logits, int label);

double total_loss(double ce, double clst, double sep, const LossWeights& w);

// ---------------------------------------------------------------------------
// Backward helpers for the training path. Gradients are accumulated into
// d_scores (N x P, same layout as BatchSimilarities::scores), scaled by
// `weight`. Ties at the max route to the first maximal prototype index.

void cluster_loss_backward(const BatchSimilarities& batch, double weight,
                           std::span<double> d_scores);
void separation_loss_backward(const BatchSimilarities& batch, double weight,
                              std::span<double> d_scores);

// softmax(logits) - onehot(label), scaled by `weight`, accumulated into d_logits.
void cross_entropy_backward(std::span<const double> logits, int label, double weight,
                            std::span<double> d_logits);

}  // namespace protoform
