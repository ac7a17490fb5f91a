#pragma once

#include <vector>

#include "kdsm/tensor.hpp"

namespace kdsm::ops {

// Elementwise / linear algebra ---------------------------------------------

NodeId add(Graph& g, NodeId a, NodeId b);
NodeId sub(Graph& g, NodeId a, NodeId b);
NodeId hadamard(Graph& g, NodeId a, NodeId b);
NodeId scale(Graph& g, NodeId a, double s);
NodeId matmul(Graph& g, NodeId a, NodeId b);
NodeId transpose(Graph& g, NodeId x);
NodeId reshape(Graph& g, NodeId x, std::vector<int> shape);
NodeId slice_cols(Graph& g, NodeId x, int c0, int c1);
NodeId concat_cols(Graph& g, const std::vector<NodeId>& xs);
NodeId relu(Graph& g, NodeId x);
NodeId softmax_rows(Graph& g, NodeId x);
NodeId layernorm_rows(Graph& g, NodeId x, NodeId gamma, NodeId beta);

/// y = x·W + b with x:[m×in], W:[in×out], b:[out].
NodeId linear(Graph& g, NodeId x, NodeId w, NodeId b);

// Spatial -------------------------------------------------------------------

/// Cross-correlation of x:[Cin×H×W] with w:[Cout×Cin×kh×kw].
NodeId conv2d(Graph& g, NodeId x, NodeId w, int stride, int padding);

/// Transposed convolution, the adjoint of conv2d with the same geometry.
/// x:[Cin×H×W], w:[Cin×Cout×kh×kw],
/// Hout = (H-1)*stride - 2*padding + kh + output_padding.
NodeId deconv2d(Graph& g, NodeId x, NodeId w, int stride, int padding,
                int output_padding);

/// Adds b[c] to every pixel of channel c. x:[C×H×W], b:[C].
NodeId bias_channels(Graph& g, NodeId x, NodeId b);

/// Output channel i < sel.size() copies input channel sel[i]; the remaining
/// n_out - sel.size() channels are zero.
NodeId gather_channels(Graph& g, NodeId x, const std::vector<int>& sel,
                       int n_out);

// Regularization / reductions ------------------------------------------------

/// Inverted dropout driven by the graph's dropout stream; identity when the
/// graph is in evaluation mode or p == 0.
NodeId dropout(Graph& g, NodeId x, double p);

NodeId sum_all(Graph& g, NodeId x);

/// Mean squared error over all elements (scalar node).
NodeId mse(Graph& g, NodeId a, NodeId b);

/// -sum_ij d_ij * log(max(p_ij, 1e-12)) for row-stochastic p and one-hot
/// rows of d (scalar node). d receives no gradient.
NodeId nll_rows(Graph& g, NodeId p, NodeId d);

// Attention -------------------------------------------------------------------

struct AttentionParams {
    NodeId wq, bq, wk, bk, wv, bv, wo, bo; // all [d×d] / [d]
    NodeId ln_g, ln_b;                     // pre-norm on the query stream
};

struct FfnParams {
    NodeId w1, b1, w2, b2; // [d×dff], [dff], [dff×d], [d]
    NodeId ln_g, ln_b;
};

struct AttentionLayerParams {
    AttentionParams attn;
    FfnParams ffn;
};

/// Pre-norm multi-head attention sub-block with residual:
/// q + Wo·MHA(LN(q), k, v). When k or v aliases q they see the normalized
/// query stream, so self-attention is mha_block(g, x, x, x, ...).
NodeId mha_block(Graph& g, NodeId q, NodeId k, NodeId v,
                 const AttentionParams& p, int heads, double dropout_p);

/// Pre-norm feed-forward sub-block with residual:
/// x + drop(W2·drop(relu(W1·LN(x)+b1))+b2).
NodeId ffn_block(Graph& g, NodeId x, const FfnParams& p, double dropout_p);

/// One transformer layer: attention sub-block followed by FFN sub-block.
NodeId attention_layer(Graph& g, NodeId q, NodeId k, NodeId v,
                       const AttentionLayerParams& p, int heads,
                       double dropout_p);

} // namespace kdsm::ops
