#include "kdsm/matching.hpp"

#include <algorithm>
#include <cmath>

#include "kdsm/ops.hpp"

namespace kdsm {

namespace {
constexpr double kLogClamp = 1e-12;
}

PredictedMatrix predict_P(const Tensor& logits) {
    if (logits.rank() != 2)
        throw ShapeError("predict_P: logits must be K x O");
    if (!logits.all_finite())
        throw NumericError("predict_P: non-finite logits");
    const int K = logits.shape[0], O = logits.shape[1];
    PredictedMatrix out;
    out.p = Tensor::zeros({K, O});
    ConstMatMap x = logits.mat2d();
    MatMap y = out.p.mat2d();
    for (int i = 0; i < K; ++i) {
        const double mx = x.row(i).maxCoeff();
        y.row(i) = (x.row(i).array() - mx).exp();
        y.row(i) /= y.row(i).sum();
    }
    return out;
}

double match_loss(const PredictedMatrix& p, const DomainMatrix& d) {
    if (!p.p.same_shape(d.d))
        throw ShapeError("match_loss: shape mismatch " + shape_str(p.p.shape) +
                         " vs " + shape_str(d.d.shape));
    double loss = 0.0;
    for (std::int64_t i = 0; i < p.p.numel(); ++i)
        if (d.d.data[i] != 0.0)
            loss -= d.d.data[i] * std::log(std::max(p.p.data[i], kLogClamp));
    return loss;
}

std::vector<int> row_selection(const Tensor& m, int K_valid) {
    if (m.rank() != 2) throw ShapeError("row_selection: matrix must be K x O");
    if (K_valid > m.shape[0])
        throw ShapeError("row_selection: K_valid exceeds row count");
    const int O = m.shape[1];
    std::vector<int> sel;
    for (int i = 0; i < K_valid; ++i) {
        int best = 0;
        double bv = m.at(i, 0);
        for (int j = 1; j < O; ++j)
            if (m.at(i, j) > bv) {
                bv = m.at(i, j);
                best = j;
            }
        if (bv <= 0.0)
            throw ConfigError("row_selection: row " + std::to_string(i) +
                              " has no positive selection");
        sel.push_back(best);
    }
    return sel;
}

HeatmapStack reorder_heatmaps(const HeatmapStack& h_raw, const Tensor& m,
                              int K_valid) {
    const int O = h_raw.channels.shape[0];
    const int hei = h_raw.channels.shape[1];
    const int wid = h_raw.channels.shape[2];
    if (m.shape[1] != O)
        throw ShapeError("reorder_heatmaps: matrix columns " +
                         std::to_string(m.shape[1]) + " != channels " +
                         std::to_string(O));
    const std::vector<int> sel = row_selection(m, K_valid);
    HeatmapStack out;
    out.channels = Tensor::zeros({O, hei, wid});
    out.valid = K_valid;
    const std::int64_t plane = static_cast<std::int64_t>(hei) * wid;
    for (int i = 0; i < K_valid; ++i)
        out.channels.data.segment(i * plane, plane) =
            h_raw.channels.data.segment(sel[static_cast<std::size_t>(i)] * plane, plane);
    return out;
}

double total_loss(const HeatmapStack& h_reordered, const HeatmapStack& gt,
                  const PredictedMatrix& p, const DomainMatrix& d,
                  double alpha, double beta) {
    if (!h_reordered.channels.same_shape(gt.channels))
        throw ShapeError("total_loss: heatmap shape mismatch " +
                         shape_str(h_reordered.channels.shape) + " vs " +
                         shape_str(gt.channels.shape));
    const double n = static_cast<double>(gt.channels.numel());
    const double mse =
        (h_reordered.channels.data - gt.channels.data).squaredNorm() / n;
    return alpha * match_loss(p, d) + beta * mse;
}

Assignment greedy_assign(const PredictedMatrix& p) {
    const int K = p.p.shape[0], O = p.p.shape[1];
    struct Entry {
        double score;
        int k, o;
    };
    std::vector<Entry> q;
    q.reserve(static_cast<std::size_t>(K) * O);
    for (int k = 0; k < K; ++k)
        for (int o = 0; o < O; ++o) q.push_back({p.p.at(k, o), k, o});
    std::sort(q.begin(), q.end(), [](const Entry& a, const Entry& b) {
        if (a.score != b.score) return a.score > b.score;
        if (a.k != b.k) return a.k < b.k;
        return a.o < b.o;
    });
    Assignment a;
    a.l.assign(static_cast<std::size_t>(K), -1);
    std::vector<char> k_used(static_cast<std::size_t>(K), 0);
    std::vector<char> o_used(static_cast<std::size_t>(O), 0);
    int assigned = 0;
    for (const Entry& e : q) {
        if (assigned == K) break;
        if (k_used[static_cast<std::size_t>(e.k)] || o_used[static_cast<std::size_t>(e.o)])
            continue;
        a.l[static_cast<std::size_t>(e.k)] = e.o;
        k_used[static_cast<std::size_t>(e.k)] = 1;
        o_used[static_cast<std::size_t>(e.o)] = 1;
        ++assigned;
    }
    return a;
}

Assignment max_value_assign(const PredictedMatrix& p) {
    const int K = p.p.shape[0], O = p.p.shape[1];
    Assignment a;
    a.l.reserve(static_cast<std::size_t>(K));
    for (int k = 0; k < K; ++k) {
        int best = 0;
        double bv = p.p.at(k, 0);
        for (int o = 1; o < O; ++o)
            if (p.p.at(k, o) > bv) {
                bv = p.p.at(k, o);
                best = o;
            }
        a.l.push_back(best);
    }
    return a;
}

LossNodes total_loss_graph(Graph& g, NodeId h_raw, NodeId logits,
                           const DomainMatrix& dm, const HeatmapStack& gt,
                           double alpha, double beta) {
    LossNodes nodes;
    nodes.p = ops::softmax_rows(g, logits);
    nodes.match = ops::nll_rows(g, nodes.p, g.constant(dm.d));
    const int O = g.value(h_raw).shape[0];
    NodeId reordered = ops::gather_channels(g, h_raw, dm.selection, O);
    nodes.mse = ops::mse(g, reordered, g.constant(gt.channels));
    nodes.total = ops::add(g, ops::scale(g, nodes.match, alpha),
                           ops::scale(g, nodes.mse, beta));
    return nodes;
}

} // namespace kdsm
