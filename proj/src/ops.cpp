#include "kdsm/ops.hpp"

#include <cmath>
#include <memory>

#include "kdsm/rng.hpp"

namespace kdsm::ops {

namespace {

void check_2d(const Tensor& t, const char* who) {
    if (t.rank() != 2)
        throw ShapeError(std::string(who) + ": expected rank-2 tensor, got " +
                         shape_str(t.shape));
}

void accumulate(Graph& g, NodeId id, const Eigen::VectorXd& delta) {
    if (g.needs_grad(id)) g.grad(id) += delta;
}

// im2col for cross-correlation: cols is (C*kh*kw) x (Ho*Wo), row-major.
void im2col(const double* x, int C, int H, int W, int kh, int kw, int stride,
            int pad, int Ho, int Wo, double* cols) {
    const int ncols = Ho * Wo;
    for (int c = 0; c < C; ++c) {
        for (int u = 0; u < kh; ++u) {
            for (int v = 0; v < kw; ++v) {
                double* row = cols + (static_cast<std::int64_t>(c) * kh * kw +
                                      u * kw + v) * ncols;
                for (int io = 0; io < Ho; ++io) {
                    const int ii = io * stride - pad + u;
                    if (ii < 0 || ii >= H) {
                        for (int jo = 0; jo < Wo; ++jo) row[io * Wo + jo] = 0.0;
                        continue;
                    }
                    const double* xrow = x + (static_cast<std::int64_t>(c) * H + ii) * W;
                    for (int jo = 0; jo < Wo; ++jo) {
                        const int jj = jo * stride - pad + v;
                        row[io * Wo + jo] = (jj >= 0 && jj < W) ? xrow[jj] : 0.0;
                    }
                }
            }
        }
    }
}

// Adjoint of im2col: scatter-add cols back into x.
void col2im(const double* cols, int C, int H, int W, int kh, int kw,
            int stride, int pad, int Ho, int Wo, double* x) {
    const int ncols = Ho * Wo;
    for (int c = 0; c < C; ++c) {
        for (int u = 0; u < kh; ++u) {
            for (int v = 0; v < kw; ++v) {
                const double* row = cols + (static_cast<std::int64_t>(c) * kh * kw +
                                            u * kw + v) * ncols;
                for (int io = 0; io < Ho; ++io) {
                    const int ii = io * stride - pad + u;
                    if (ii < 0 || ii >= H) continue;
                    double* xrow = x + (static_cast<std::int64_t>(c) * H + ii) * W;
                    for (int jo = 0; jo < Wo; ++jo) {
                        const int jj = jo * stride - pad + v;
                        if (jj >= 0 && jj < W) xrow[jj] += row[io * Wo + jo];
                    }
                }
            }
        }
    }
}

} // namespace

NodeId add(Graph& g, NodeId a, NodeId b) {
    const Tensor& ta = g.value(a);
    const Tensor& tb = g.value(b);
    if (!ta.same_shape(tb))
        throw ShapeError("add: shape mismatch " + shape_str(ta.shape) + " vs " +
                         shape_str(tb.shape));
    Tensor out(ta.shape, ta.data + tb.data);
    return g.emit("add", {a, b}, std::move(out), [a, b](Graph& gg, NodeId self) {
        accumulate(gg, a, gg.grad(self));
        accumulate(gg, b, gg.grad(self));
    });
}

NodeId sub(Graph& g, NodeId a, NodeId b) {
    const Tensor& ta = g.value(a);
    const Tensor& tb = g.value(b);
    if (!ta.same_shape(tb))
        throw ShapeError("sub: shape mismatch " + shape_str(ta.shape) + " vs " +
                         shape_str(tb.shape));
    Tensor out(ta.shape, ta.data - tb.data);
    return g.emit("sub", {a, b}, std::move(out), [a, b](Graph& gg, NodeId self) {
        accumulate(gg, a, gg.grad(self));
        if (gg.needs_grad(b)) gg.grad(b) -= gg.grad(self);
    });
}

NodeId hadamard(Graph& g, NodeId a, NodeId b) {
    const Tensor& ta = g.value(a);
    const Tensor& tb = g.value(b);
    if (!ta.same_shape(tb))
        throw ShapeError("hadamard: shape mismatch " + shape_str(ta.shape) +
                         " vs " + shape_str(tb.shape));
    Tensor out(ta.shape, ta.data.cwiseProduct(tb.data));
    return g.emit("hadamard", {a, b}, std::move(out),
                  [a, b](Graph& gg, NodeId self) {
                      const Eigen::VectorXd& go = gg.grad(self);
                      if (gg.needs_grad(a))
                          gg.grad(a) += go.cwiseProduct(gg.value(b).data);
                      if (gg.needs_grad(b))
                          gg.grad(b) += go.cwiseProduct(gg.value(a).data);
                  });
}

NodeId scale(Graph& g, NodeId a, double s) {
    const Tensor& ta = g.value(a);
    Tensor out(ta.shape, ta.data * s);
    return g.emit("scale", {a}, std::move(out), [a, s](Graph& gg, NodeId self) {
        if (gg.needs_grad(a)) gg.grad(a) += s * gg.grad(self);
    });
}

NodeId matmul(Graph& g, NodeId a, NodeId b) {
    const Tensor& ta = g.value(a);
    const Tensor& tb = g.value(b);
    check_2d(ta, "matmul lhs");
    check_2d(tb, "matmul rhs");
    if (ta.shape[1] != tb.shape[0])
        throw ShapeError("matmul: inner extents differ, " + shape_str(ta.shape) +
                         " x " + shape_str(tb.shape));
    const int m = ta.shape[0], k = ta.shape[1], n = tb.shape[1];
    Tensor out = Tensor::zeros({m, n});
    out.mat(m, n).noalias() = ta.mat(m, k) * tb.mat(k, n);
    return g.emit("matmul", {a, b}, std::move(out),
                  [a, b, m, k, n](Graph& gg, NodeId self) {
                      ConstMatMap go(gg.grad(self).data(), m, n);
                      if (gg.needs_grad(a)) {
                          MatMap ga(gg.grad(a).data(), m, k);
                          ga.noalias() += go * gg.value(b).mat(k, n).transpose();
                      }
                      if (gg.needs_grad(b)) {
                          MatMap gb(gg.grad(b).data(), k, n);
                          gb.noalias() += gg.value(a).mat(m, k).transpose() * go;
                      }
                  });
}

NodeId transpose(Graph& g, NodeId x) {
    const Tensor& tx = g.value(x);
    check_2d(tx, "transpose");
    const int m = tx.shape[0], n = tx.shape[1];
    Tensor out = Tensor::zeros({n, m});
    out.mat(n, m) = tx.mat(m, n).transpose();
    return g.emit("transpose", {x}, std::move(out),
                  [x, m, n](Graph& gg, NodeId self) {
                      if (!gg.needs_grad(x)) return;
                      ConstMatMap go(gg.grad(self).data(), n, m);
                      MatMap gx(gg.grad(x).data(), m, n);
                      gx += go.transpose();
                  });
}

NodeId reshape(Graph& g, NodeId x, std::vector<int> shape) {
    const Tensor& tx = g.value(x);
    if (shape_numel(shape) != tx.numel())
        throw ShapeError("reshape: element count mismatch, " +
                         shape_str(tx.shape) + " -> " + shape_str(shape));
    Tensor out(std::move(shape), tx.data);
    return g.emit("reshape", {x}, std::move(out), [x](Graph& gg, NodeId self) {
        accumulate(gg, x, gg.grad(self));
    });
}

NodeId slice_cols(Graph& g, NodeId x, int c0, int c1) {
    const Tensor& tx = g.value(x);
    check_2d(tx, "slice_cols");
    const int m = tx.shape[0], n = tx.shape[1];
    if (c0 < 0 || c1 > n || c0 >= c1)
        throw ShapeError("slice_cols: bad range [" + std::to_string(c0) + "," +
                         std::to_string(c1) + ") for " + shape_str(tx.shape));
    const int w = c1 - c0;
    Tensor out = Tensor::zeros({m, w});
    out.mat(m, w) = tx.mat(m, n).middleCols(c0, w);
    return g.emit("slice_cols", {x}, std::move(out),
                  [x, m, n, c0, w](Graph& gg, NodeId self) {
                      if (!gg.needs_grad(x)) return;
                      ConstMatMap go(gg.grad(self).data(), m, w);
                      MatMap gx(gg.grad(x).data(), m, n);
                      gx.middleCols(c0, w) += go;
                  });
}

NodeId concat_cols(Graph& g, const std::vector<NodeId>& xs) {
    if (xs.empty()) throw ShapeError("concat_cols: empty input list");
    const int m = g.value(xs[0]).shape[0];
    int n = 0;
    for (NodeId id : xs) {
        const Tensor& t = g.value(id);
        check_2d(t, "concat_cols");
        if (t.shape[0] != m)
            throw ShapeError("concat_cols: row mismatch " + shape_str(t.shape));
        n += t.shape[1];
    }
    Tensor out = Tensor::zeros({m, n});
    MatMap om = out.mat(m, n);
    std::vector<int> offsets;
    int c = 0;
    for (NodeId id : xs) {
        const Tensor& t = g.value(id);
        offsets.push_back(c);
        om.middleCols(c, t.shape[1]) = t.mat2d();
        c += t.shape[1];
    }
    std::vector<NodeId> inputs(xs.begin(), xs.end());
    return g.emit("concat_cols", inputs, std::move(out),
                  [xs, offsets, m, n](Graph& gg, NodeId self) {
                      ConstMatMap go(gg.grad(self).data(), m, n);
                      for (std::size_t i = 0; i < xs.size(); ++i) {
                          if (!gg.needs_grad(xs[i])) continue;
                          const int w = gg.value(xs[i]).shape[1];
                          MatMap gx(gg.grad(xs[i]).data(), m, w);
                          gx += go.middleCols(offsets[i], w);
                      }
                  });
}

NodeId relu(Graph& g, NodeId x) {
    const Tensor& tx = g.value(x);
    Tensor out(tx.shape, tx.data.cwiseMax(0.0));
    return g.emit("relu", {x}, std::move(out), [x](Graph& gg, NodeId self) {
        if (!gg.needs_grad(x)) return;
        const Eigen::VectorXd& v = gg.value(x).data;
        const Eigen::VectorXd& go = gg.grad(self);
        Eigen::VectorXd& gx = gg.grad(x);
        for (std::int64_t i = 0; i < v.size(); ++i)
            if (v[i] > 0.0) gx[i] += go[i];
    });
}

NodeId softmax_rows(Graph& g, NodeId x) {
    const Tensor& tx = g.value(x);
    check_2d(tx, "softmax_rows");
    const int m = tx.shape[0], n = tx.shape[1];
    Tensor out = Tensor::zeros({m, n});
    ConstMatMap xm = tx.mat(m, n);
    MatMap ym = out.mat(m, n);
    for (int i = 0; i < m; ++i) {
        const double mx = xm.row(i).maxCoeff();
        ym.row(i) = (xm.row(i).array() - mx).exp();
        ym.row(i) /= ym.row(i).sum();
    }
    return g.emit("softmax_rows", {x}, std::move(out),
                  [x, m, n](Graph& gg, NodeId self) {
                      if (!gg.needs_grad(x)) return;
                      ConstMatMap y(gg.value(self).data.data(), m, n);
                      ConstMatMap go(gg.grad(self).data(), m, n);
                      MatMap gx(gg.grad(x).data(), m, n);
                      for (int i = 0; i < m; ++i) {
                          const double dot = go.row(i).dot(y.row(i));
                          gx.row(i).array() +=
                              y.row(i).array() * (go.row(i).array() - dot);
                      }
                  });
}

NodeId layernorm_rows(Graph& g, NodeId x, NodeId gamma, NodeId beta) {
    constexpr double kEps = 1e-5;
    const Tensor& tx = g.value(x);
    check_2d(tx, "layernorm_rows");
    const int m = tx.shape[0], n = tx.shape[1];
    if (g.value(gamma).numel() != n || g.value(beta).numel() != n)
        throw ShapeError("layernorm_rows: gamma/beta width mismatch");
    ConstMatMap xm = tx.mat(m, n);
    auto xhat = std::make_shared<Mat>(m, n);
    auto inv = std::make_shared<Eigen::VectorXd>(m);
    Tensor out = Tensor::zeros({m, n});
    MatMap ym = out.mat(m, n);
    const Eigen::VectorXd& gv = g.value(gamma).data;
    const Eigen::VectorXd& bv = g.value(beta).data;
    for (int i = 0; i < m; ++i) {
        const double mu = xm.row(i).mean();
        const double var = (xm.row(i).array() - mu).square().mean();
        const double iv = 1.0 / std::sqrt(var + kEps);
        (*inv)[i] = iv;
        xhat->row(i) = (xm.row(i).array() - mu) * iv;
        ym.row(i) = xhat->row(i).cwiseProduct(gv.transpose()) + bv.transpose();
    }
    return g.emit(
        "layernorm_rows", {x, gamma, beta}, std::move(out),
        [x, gamma, beta, xhat, inv, m, n](Graph& gg, NodeId self) {
            ConstMatMap go(gg.grad(self).data(), m, n);
            const Eigen::VectorXd& gv = gg.value(gamma).data;
            if (gg.needs_grad(gamma)) {
                Eigen::VectorXd& ggm = gg.grad(gamma);
                for (int i = 0; i < m; ++i)
                    ggm += go.row(i).cwiseProduct(xhat->row(i)).transpose();
            }
            if (gg.needs_grad(beta)) {
                Eigen::VectorXd& gb = gg.grad(beta);
                for (int i = 0; i < m; ++i) gb += go.row(i).transpose();
            }
            if (gg.needs_grad(x)) {
                MatMap gx(gg.grad(x).data(), m, n);
                for (int i = 0; i < m; ++i) {
                    Eigen::RowVectorXd dxhat =
                        go.row(i).cwiseProduct(gv.transpose());
                    const double mean_dxhat = dxhat.mean();
                    const double mean_dxhat_xhat =
                        dxhat.cwiseProduct(xhat->row(i)).mean();
                    gx.row(i).array() +=
                        (*inv)[i] * (dxhat.array() - mean_dxhat -
                                     xhat->row(i).array() * mean_dxhat_xhat);
                }
            }
        });
}

NodeId linear(Graph& g, NodeId x, NodeId w, NodeId b) {
    const Tensor& tx = g.value(x);
    const Tensor& tw = g.value(w);
    const Tensor& tb = g.value(b);
    check_2d(tx, "linear input");
    check_2d(tw, "linear weight");
    if (tx.shape[1] != tw.shape[0])
        throw ShapeError("linear: width mismatch " + shape_str(tx.shape) +
                         " x " + shape_str(tw.shape));
    const int m = tx.shape[0], in = tw.shape[0], out_w = tw.shape[1];
    if (tb.numel() != out_w)
        throw ShapeError("linear: bias width mismatch");
    Tensor out = Tensor::zeros({m, out_w});
    out.mat(m, out_w).noalias() = tx.mat(m, in) * tw.mat(in, out_w);
    out.mat(m, out_w).rowwise() += tb.data.transpose();
    return g.emit("linear", {x, w, b}, std::move(out),
                  [x, w, b, m, in, out_w](Graph& gg, NodeId self) {
                      ConstMatMap go(gg.grad(self).data(), m, out_w);
                      if (gg.needs_grad(x)) {
                          MatMap gx(gg.grad(x).data(), m, in);
                          gx.noalias() += go * gg.value(w).mat(in, out_w).transpose();
                      }
                      if (gg.needs_grad(w)) {
                          MatMap gw(gg.grad(w).data(), in, out_w);
                          gw.noalias() += gg.value(x).mat(m, in).transpose() * go;
                      }
                      if (gg.needs_grad(b))
                          gg.grad(b) += go.colwise().sum().transpose();
                  });
}

NodeId conv2d(Graph& g, NodeId x, NodeId w, int stride, int padding) {
    const Tensor& tx = g.value(x);
    const Tensor& tw = g.value(w);
    if (tx.rank() != 3)
        throw ShapeError("conv2d: input must be CxHxW, got " + shape_str(tx.shape));
    if (tw.rank() != 4)
        throw ShapeError("conv2d: weight must be rank 4, got " + shape_str(tw.shape));
    const int Ci = tx.shape[0], H = tx.shape[1], W = tx.shape[2];
    const int Co = tw.shape[0], kh = tw.shape[2], kw = tw.shape[3];
    if (tw.shape[1] != Ci)
        throw ShapeError("conv2d: channel mismatch, input " + shape_str(tx.shape) +
                         " vs weight " + shape_str(tw.shape));
    if (stride < 1 || padding < 0)
        throw ConfigError("conv2d: stride must be >= 1 and padding >= 0");
    if (kh > H + 2 * padding || kw > W + 2 * padding)
        throw ConfigError("conv2d: kernel does not fit padded input");
    const int Ho = (H + 2 * padding - kh) / stride + 1;
    const int Wo = (W + 2 * padding - kw) / stride + 1;
    if (Ho <= 0 || Wo <= 0)
        throw ConfigError("conv2d: non-positive output extent");

    const int krows = Ci * kh * kw;
    auto cols = std::make_shared<Eigen::VectorXd>(
        static_cast<std::int64_t>(krows) * Ho * Wo);
    im2col(tx.data.data(), Ci, H, W, kh, kw, stride, padding, Ho, Wo,
           cols->data());

    Tensor out = Tensor::zeros({Co, Ho, Wo});
    MatMap(out.data.data(), Co, Ho * Wo).noalias() =
        tw.mat(Co, krows) * ConstMatMap(cols->data(), krows, Ho * Wo);

    return g.emit(
        "conv2d", {x, w}, std::move(out),
        [x, w, cols, Ci, H, W, Co, kh, kw, stride, padding, Ho,
         Wo](Graph& gg, NodeId self) {
            const int krows2 = Ci * kh * kw;
            ConstMatMap go(gg.grad(self).data(), Co, Ho * Wo);
            if (gg.needs_grad(w)) {
                MatMap gw(gg.grad(w).data(), Co, krows2);
                gw.noalias() +=
                    go * ConstMatMap(cols->data(), krows2, Ho * Wo).transpose();
            }
            if (gg.needs_grad(x)) {
                Eigen::VectorXd dcols(static_cast<std::int64_t>(krows2) * Ho * Wo);
                MatMap(dcols.data(), krows2, Ho * Wo).noalias() =
                    gg.value(w).mat(Co, krows2).transpose() * go;
                col2im(dcols.data(), Ci, H, W, kh, kw, stride, padding, Ho, Wo,
                       gg.grad(x).data());
            }
        });
}

NodeId deconv2d(Graph& g, NodeId x, NodeId w, int stride, int padding,
                int output_padding) {
    const Tensor& tx = g.value(x);
    const Tensor& tw = g.value(w);
    if (tx.rank() != 3)
        throw ShapeError("deconv2d: input must be CxHxW, got " + shape_str(tx.shape));
    if (tw.rank() != 4)
        throw ShapeError("deconv2d: weight must be rank 4, got " + shape_str(tw.shape));
    const int Cx = tx.shape[0], H = tx.shape[1], W = tx.shape[2];
    const int Cy = tw.shape[1], kh = tw.shape[2], kw = tw.shape[3];
    if (tw.shape[0] != Cx)
        throw ShapeError("deconv2d: channel mismatch, input " + shape_str(tx.shape) +
                         " vs weight " + shape_str(tw.shape));
    if (stride < 1 || padding < 0 || output_padding < 0 ||
        output_padding >= stride)
        throw ConfigError("deconv2d: invalid stride/padding geometry");
    const int Ho = (H - 1) * stride - 2 * padding + kh + output_padding;
    const int Wo = (W - 1) * stride - 2 * padding + kw + output_padding;
    if (Ho <= 0 || Wo <= 0)
        throw ConfigError("deconv2d: non-positive output extent");

    const int krows = Cy * kh * kw;
    Eigen::VectorXd cols(static_cast<std::int64_t>(krows) * H * W);
    MatMap(cols.data(), krows, H * W).noalias() =
        tw.mat(Cx, krows).transpose() * tx.mat(Cx, H * W);
    Tensor out = Tensor::zeros({Cy, Ho, Wo});
    // Output plays the role of a conv input whose conv output extent is HxW.
    col2im(cols.data(), Cy, Ho, Wo, kh, kw, stride, padding, H, W,
           out.data.data());

    return g.emit(
        "deconv2d", {x, w}, std::move(out),
        [x, w, Cx, H, W, Cy, kh, kw, stride, padding, Ho, Wo](Graph& gg,
                                                              NodeId self) {
            const int krows2 = Cy * kh * kw;
            Eigen::VectorXd dcols(static_cast<std::int64_t>(krows2) * H * W);
            im2col(gg.grad(self).data(), Cy, Ho, Wo, kh, kw, stride, padding, H,
                   W, dcols.data());
            ConstMatMap dc(dcols.data(), krows2, H * W);
            if (gg.needs_grad(x)) {
                MatMap gx(gg.grad(x).data(), Cx, H * W);
                gx.noalias() += gg.value(w).mat(Cx, krows2) * dc;
            }
            if (gg.needs_grad(w)) {
                MatMap gw(gg.grad(w).data(), Cx, krows2);
                gw.noalias() += gg.value(x).mat(Cx, H * W) * dc.transpose();
            }
        });
}

NodeId bias_channels(Graph& g, NodeId x, NodeId b) {
    const Tensor& tx = g.value(x);
    const Tensor& tb = g.value(b);
    if (tx.rank() != 3)
        throw ShapeError("bias_channels: input must be CxHxW");
    const int C = tx.shape[0], HW = tx.shape[1] * tx.shape[2];
    if (tb.numel() != C)
        throw ShapeError("bias_channels: bias length mismatch");
    Tensor out = tx;
    out.requires_grad = false;
    MatMap om(out.data.data(), C, HW);
    om.colwise() += tb.data;
    return g.emit("bias_channels", {x, b}, std::move(out),
                  [x, b, C, HW](Graph& gg, NodeId self) {
                      ConstMatMap go(gg.grad(self).data(), C, HW);
                      accumulate(gg, x, gg.grad(self));
                      if (gg.needs_grad(b)) gg.grad(b) += go.rowwise().sum();
                  });
}

NodeId gather_channels(Graph& g, NodeId x, const std::vector<int>& sel,
                       int n_out) {
    const Tensor& tx = g.value(x);
    if (tx.rank() != 3)
        throw ShapeError("gather_channels: input must be CxHxW");
    const int C = tx.shape[0], h = tx.shape[1], w = tx.shape[2];
    if (n_out < static_cast<int>(sel.size()))
        throw ShapeError("gather_channels: n_out smaller than selection");
    for (int s : sel)
        if (s < 0 || s >= C)
            throw ShapeError("gather_channels: channel index " +
                             std::to_string(s) + " out of range");
    const std::int64_t plane = static_cast<std::int64_t>(h) * w;
    Tensor out = Tensor::zeros({n_out, h, w});
    for (std::size_t i = 0; i < sel.size(); ++i)
        out.data.segment(static_cast<std::int64_t>(i) * plane, plane) =
            tx.data.segment(static_cast<std::int64_t>(sel[i]) * plane, plane);
    return g.emit("gather_channels", {x}, std::move(out),
                  [x, sel, plane](Graph& gg, NodeId self) {
                      if (!gg.needs_grad(x)) return;
                      const Eigen::VectorXd& go = gg.grad(self);
                      Eigen::VectorXd& gx = gg.grad(x);
                      for (std::size_t i = 0; i < sel.size(); ++i)
                          gx.segment(static_cast<std::int64_t>(sel[i]) * plane,
                                     plane) +=
                              go.segment(static_cast<std::int64_t>(i) * plane,
                                         plane);
                  });
}

NodeId dropout(Graph& g, NodeId x, double p) {
    if (!g.training() || p <= 0.0) return x;
    if (p >= 1.0) throw ConfigError("dropout: rate must be < 1");
    const Tensor& tx = g.value(x);
    SplitMix64 rng(g.next_dropout_seed());
    auto mask = std::make_shared<Eigen::VectorXd>(tx.numel());
    const double keep_scale = 1.0 / (1.0 - p);
    for (std::int64_t i = 0; i < tx.numel(); ++i)
        (*mask)[i] = rng.uniform() >= p ? keep_scale : 0.0;
    Tensor out(tx.shape, tx.data.cwiseProduct(*mask));
    return g.emit("dropout", {x}, std::move(out),
                  [x, mask](Graph& gg, NodeId self) {
                      if (gg.needs_grad(x))
                          gg.grad(x) += gg.grad(self).cwiseProduct(*mask);
                  });
}

NodeId sum_all(Graph& g, NodeId x) {
    const Tensor& tx = g.value(x);
    Tensor out = Tensor::scalar(tx.data.sum());
    return g.emit("sum_all", {x}, std::move(out), [x](Graph& gg, NodeId self) {
        if (gg.needs_grad(x)) gg.grad(x).array() += gg.grad(self)[0];
    });
}

NodeId mse(Graph& g, NodeId a, NodeId b) {
    const Tensor& ta = g.value(a);
    const Tensor& tb = g.value(b);
    if (!ta.same_shape(tb))
        throw ShapeError("mse: shape mismatch " + shape_str(ta.shape) + " vs " +
                         shape_str(tb.shape));
    const double n = static_cast<double>(ta.numel());
    Tensor out = Tensor::scalar((ta.data - tb.data).squaredNorm() / n);
    return g.emit("mse", {a, b}, std::move(out),
                  [a, b, n](Graph& gg, NodeId self) {
                      const double go = gg.grad(self)[0];
                      Eigen::VectorXd diff =
                          (2.0 * go / n) *
                          (gg.value(a).data - gg.value(b).data);
                      if (gg.needs_grad(a)) gg.grad(a) += diff;
                      if (gg.needs_grad(b)) gg.grad(b) -= diff;
                  });
}

NodeId nll_rows(Graph& g, NodeId p, NodeId d) {
    constexpr double kClamp = 1e-12;
    const Tensor& tp = g.value(p);
    const Tensor& td = g.value(d);
    if (!tp.same_shape(td))
        throw ShapeError("nll_rows: shape mismatch " + shape_str(tp.shape) +
                         " vs " + shape_str(td.shape));
    double loss = 0.0;
    for (std::int64_t i = 0; i < tp.numel(); ++i)
        if (td.data[i] != 0.0)
            loss -= td.data[i] * std::log(std::max(tp.data[i], kClamp));
    return g.emit("nll_rows", {p, d}, Tensor::scalar(loss),
                  [p, d](Graph& gg, NodeId self) {
                      if (!gg.needs_grad(p)) return;
                      const double go = gg.grad(self)[0];
                      const Eigen::VectorXd& pv = gg.value(p).data;
                      const Eigen::VectorXd& dv = gg.value(d).data;
                      Eigen::VectorXd& gp = gg.grad(p);
                      for (std::int64_t i = 0; i < pv.size(); ++i)
                          if (dv[i] != 0.0 && pv[i] > kClamp)
                              gp[i] -= go * dv[i] / pv[i];
                  });
}

NodeId mha_block(Graph& g, NodeId q, NodeId k, NodeId v,
                 const AttentionParams& p, int heads, double dropout_p) {
    const int d = g.value(q).shape[1];
    if (heads <= 0 || d % heads != 0)
        throw ConfigError("attention: embedding width " + std::to_string(d) +
                          " not divisible by " + std::to_string(heads) +
                          " heads");
    const int dh = d / heads;
    NodeId qn = layernorm_rows(g, q, p.ln_g, p.ln_b);
    NodeId kn = (k == q) ? qn : k;
    NodeId vn = (v == q) ? qn : ((v == k) ? kn : v);
    NodeId Q = linear(g, qn, p.wq, p.bq);
    NodeId K = linear(g, kn, p.wk, p.bk);
    NodeId V = linear(g, vn, p.wv, p.bv);
    std::vector<NodeId> head_outs;
    const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));
    for (int h = 0; h < heads; ++h) {
        NodeId Qh = slice_cols(g, Q, h * dh, (h + 1) * dh);
        NodeId Kh = slice_cols(g, K, h * dh, (h + 1) * dh);
        NodeId Vh = slice_cols(g, V, h * dh, (h + 1) * dh);
        NodeId scores = scale(g, matmul(g, Qh, transpose(g, Kh)), inv_sqrt_dh);
        NodeId attn = dropout(g, softmax_rows(g, scores), dropout_p);
        head_outs.push_back(matmul(g, attn, Vh));
    }
    NodeId merged = concat_cols(g, head_outs);
    NodeId out = linear(g, merged, p.wo, p.bo);
    return add(g, q, out);
}

NodeId ffn_block(Graph& g, NodeId x, const FfnParams& p, double dropout_p) {
    NodeId xn = layernorm_rows(g, x, p.ln_g, p.ln_b);
    NodeId h = dropout(g, relu(g, linear(g, xn, p.w1, p.b1)), dropout_p);
    NodeId y = dropout(g, linear(g, h, p.w2, p.b2), dropout_p);
    return add(g, x, y);
}

NodeId attention_layer(Graph& g, NodeId q, NodeId k, NodeId v,
                       const AttentionLayerParams& p, int heads,
                       double dropout_p) {
    NodeId a = mha_block(g, q, k, v, p.attn, heads, dropout_p);
    return ffn_block(g, a, p.ffn, dropout_p);
}

} // namespace kdsm::ops
