#pragma once

#include <vector>

#include "kdsm/grouping.hpp"
#include "kdsm/heatmap.hpp"
#include "kdsm/tensor.hpp"

namespace kdsm {

/// Row-stochastic K x O matrix, the softmax of the similarity logits.
struct PredictedMatrix {
    Tensor p;
};

PredictedMatrix predict_P(const Tensor& logits);

/// -sum_ij D_ij log P_ij with P clamped below at 1e-12.
double match_loss(const PredictedMatrix& p, const DomainMatrix& d);

/// Per-row selected index of a K x O one-hot or score matrix (argmax, ties
/// to the lower index). Throws when a valid row has no positive selection.
std::vector<int> row_selection(const Tensor& m, int K_valid);

/// Output channel i < K_valid copies input channel selection[i]; remaining
/// channels are zero. Channel count is preserved.
HeatmapStack reorder_heatmaps(const HeatmapStack& h_raw, const Tensor& m,
                              int K_valid);

/// alpha * match_loss + beta * MSE over all channels of h vs g.
double total_loss(const HeatmapStack& h_reordered, const HeatmapStack& gt,
                  const PredictedMatrix& p, const DomainMatrix& d,
                  double alpha, double beta);

/// Group index per keypoint, -1 for unassigned slots.
struct Assignment {
    std::vector<int> l;
};

/// One-to-one greedy assignment over all (score, k, o) triples, highest
/// score first; keypoints left over when scores or channels run out keep -1.
Assignment greedy_assign(const PredictedMatrix& p);

/// Independent per-row argmax (duplicates permitted), ties to lower index.
Assignment max_value_assign(const PredictedMatrix& p);

/// Eq. (8) assembled on the tape for training.
struct LossNodes {
    NodeId total;
    NodeId match;
    NodeId mse;
    NodeId p; // softmaxed distribution matrix
};

LossNodes total_loss_graph(Graph& g, NodeId h_raw, NodeId logits,
                           const DomainMatrix& dm, const HeatmapStack& gt,
                           double alpha, double beta);

} // namespace kdsm
