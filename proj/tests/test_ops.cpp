#include <doctest.h>

#include <kdsm/ops.hpp>
#include <kdsm/rng.hpp>
#include <kdsm/tensor.hpp>

#include "gradcheck.hpp"

using namespace kdsm;
using gradcheck::random_tensor;

namespace {

// Independent sliding-window cross-correlation, no shared code with conv2d.
Tensor conv_oracle(const Tensor& x, const Tensor& w, int stride, int pad) {
    const int Ci = x.shape[0], H = x.shape[1], W = x.shape[2];
    const int Co = w.shape[0], kh = w.shape[2], kw = w.shape[3];
    const int Ho = (H + 2 * pad - kh) / stride + 1;
    const int Wo = (W + 2 * pad - kw) / stride + 1;
    Tensor y = Tensor::zeros({Co, Ho, Wo});
    for (int o = 0; o < Co; ++o)
        for (int i = 0; i < Ho; ++i)
            for (int j = 0; j < Wo; ++j) {
                double acc = 0.0;
                for (int c = 0; c < Ci; ++c)
                    for (int u = 0; u < kh; ++u)
                        for (int v = 0; v < kw; ++v) {
                            const int ii = i * stride - pad + u;
                            const int jj = j * stride - pad + v;
                            if (ii >= 0 && ii < H && jj >= 0 && jj < W)
                                acc += x.at(c, ii, jj) * w.data[((o * Ci + c) * kh + u) * kw + v];
                        }
                y.at(o, i, j) = acc;
            }
    return y;
}

// Independent scatter oracle for the transposed convolution.
Tensor deconv_oracle(const Tensor& x, const Tensor& w, int stride, int pad,
                     int opad) {
    const int Cx = x.shape[0], H = x.shape[1], W = x.shape[2];
    const int Cy = w.shape[1], kh = w.shape[2], kw = w.shape[3];
    const int Ho = (H - 1) * stride - 2 * pad + kh + opad;
    const int Wo = (W - 1) * stride - 2 * pad + kw + opad;
    Tensor y = Tensor::zeros({Cy, Ho, Wo});
    for (int cx = 0; cx < Cx; ++cx)
        for (int i = 0; i < H; ++i)
            for (int j = 0; j < W; ++j)
                for (int cy = 0; cy < Cy; ++cy)
                    for (int u = 0; u < kh; ++u)
                        for (int v = 0; v < kw; ++v) {
                            const int ii = i * stride - pad + u;
                            const int jj = j * stride - pad + v;
                            if (ii >= 0 && ii < Ho && jj >= 0 && jj < Wo)
                                y.at(cy, ii, jj) +=
                                    x.at(cx, i, j) *
                                    w.data[((cx * Cy + cy) * kh + u) * kw + v];
                        }
    return y;
}

double eval_scalar(NodeId (*op)(Graph&, NodeId, NodeId), const Tensor& a,
                   const Tensor& b) {
    Graph g;
    return g.value(op(g, g.constant(a), g.constant(b))).data[0];
}

ops::AttentionLayerParams make_layer_params(Graph& g, int d, int dff,
                                            SplitMix64& rng, double s = 0.3) {
    auto mk = [&](std::vector<int> shape) {
        Tensor t = random_tensor(std::move(shape), rng, -s, s);
        t.requires_grad = true;
        return g.input(std::move(t));
    };
    ops::AttentionLayerParams p;
    p.attn = {mk({d, d}), mk({d}), mk({d, d}), mk({d}), mk({d, d}), mk({d}),
              mk({d, d}), mk({d}), mk({d}),    mk({d})};
    p.ffn = {mk({d, dff}), mk({dff}), mk({dff, d}), mk({d}), mk({d}), mk({d})};
    return p;
}

} // namespace

TEST_CASE("matmul worked examples") {
    Graph g;
    NodeId eye = g.constant(Tensor::from({2, 2}, {1, 0, 0, 1}));
    NodeId b = g.constant(Tensor::from({2, 2}, {5, 6, 7, 8}));
    NodeId r = ops::matmul(g, eye, b);
    CHECK(g.value(r).data == g.value(b).data);

    NodeId a = g.constant(Tensor::from({2, 2}, {1, 2, 3, 4}));
    NodeId r2 = ops::matmul(g, a, b);
    CHECK(g.value(r2).at(0, 0) == doctest::Approx(19).epsilon(1e-15));
    CHECK(g.value(r2).at(0, 1) == doctest::Approx(22).epsilon(1e-15));
    CHECK(g.value(r2).at(1, 0) == doctest::Approx(43).epsilon(1e-15));
    CHECK(g.value(r2).at(1, 1) == doctest::Approx(50).epsilon(1e-15));

    NodeId z = g.constant(Tensor::zeros({3, 2}));
    NodeId r3 = ops::matmul(g, z, b);
    CHECK(g.value(r3).data.cwiseAbs().maxCoeff() == 0.0);

    NodeId bad = g.constant(Tensor::zeros({3, 3}));
    CHECK_THROWS_AS(ops::matmul(g, a, bad), ShapeError);
    CHECK_THROWS_WITH_AS(ops::matmul(g, a, bad),
                         doctest::Contains("[2x2]"), ShapeError);
}

TEST_CASE("softmax rows") {
    Graph g;
    NodeId c = g.constant(Tensor::full({1, 4}, 3.25));
    const Tensor& u = g.value(ops::softmax_rows(g, c));
    for (int j = 0; j < 4; ++j) CHECK(u.at(0, j) == doctest::Approx(0.25).epsilon(1e-14));

    NodeId x = g.constant(Tensor::from({1, 2}, {0.0, std::log(3.0)}));
    const Tensor& y = g.value(ops::softmax_rows(g, x));
    CHECK(y.at(0, 0) == doctest::Approx(0.25).epsilon(1e-12));
    CHECK(y.at(0, 1) == doctest::Approx(0.75).epsilon(1e-12));

    SplitMix64 rng(11);
    for (int it = 0; it < 20; ++it) {
        Tensor t = random_tensor({3, 5}, rng, -30, 30);
        Graph gg;
        const Tensor& s = gg.value(ops::softmax_rows(gg, gg.constant(t)));
        for (int i = 0; i < 3; ++i) {
            double sum = 0;
            for (int j = 0; j < 5; ++j) sum += s.at(i, j);
            CHECK(std::abs(sum - 1.0) <= 1e-12);
        }
        // shift invariance
        Tensor shifted = t;
        for (int j = 0; j < 5; ++j) shifted.at(1, j) += 17.5;
        Graph g2;
        const Tensor& s2 = g2.value(ops::softmax_rows(g2, g2.constant(shifted)));
        for (int j = 0; j < 5; ++j)
            CHECK(s2.at(1, j) == doctest::Approx(s.at(1, j)).epsilon(1e-11));
        // permutation equivariance under column permutation
        Tensor perm = Tensor::zeros({3, 5});
        const int p[5] = {3, 0, 4, 1, 2};
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 5; ++j) perm.at(i, j) = t.at(i, p[j]);
        Graph g3;
        const Tensor& s3 = g3.value(ops::softmax_rows(g3, g3.constant(perm)));
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 5; ++j)
                CHECK(s3.at(i, j) == doctest::Approx(s.at(i, p[j])).epsilon(1e-12));
    }
}

TEST_CASE("conv2d identity, impulse, and sliding-window oracle") {
    {
        Graph g;
        SplitMix64 rng(5);
        Tensor x = random_tensor({1, 4, 4}, rng);
        Tensor w = Tensor::from({1, 1, 1, 1}, {1.0});
        NodeId y = ops::conv2d(g, g.constant(x), g.constant(w), 1, 0);
        CHECK((g.value(y).data - x.data).cwiseAbs().maxCoeff() == 0.0);
    }
    {
        Graph g;
        Tensor x = Tensor::zeros({1, 5, 5});
        x.at(0, 2, 2) = 1.0;
        SplitMix64 rng(6);
        Tensor w = random_tensor({1, 1, 3, 3}, rng);
        NodeId y = ops::conv2d(g, g.constant(x), g.constant(w), 1, 1);
        // delta response: under cross-correlation the kernel lands flipped,
        // centered at the impulse
        for (int u = 0; u < 3; ++u)
            for (int v = 0; v < 3; ++v)
                CHECK(g.value(y).at(0, 1 + u, 1 + v) ==
                      doctest::Approx(w.data[(2 - u) * 3 + (2 - v)]).epsilon(1e-15));
    }
    SplitMix64 rng(7);
    for (int it = 0; it < 20; ++it) {
        Tensor x = random_tensor({2, 6, 5}, rng);
        Tensor w = random_tensor({3, 2, 2, 2}, rng);
        const int stride = 1 + static_cast<int>(rng.below(2));
        const int pad = static_cast<int>(rng.below(2));
        Graph g;
        NodeId y = ops::conv2d(g, g.constant(x), g.constant(w), stride, pad);
        Tensor ref = conv_oracle(x, w, stride, pad);
        REQUIRE(g.value(y).shape == ref.shape);
        CHECK((g.value(y).data - ref.data).cwiseAbs().maxCoeff() < 1e-12);
    }
    {
        // spec case: random 1x4x4, 1x1x2x2 kernel, stride 2
        Tensor x = random_tensor({1, 4, 4}, rng);
        Tensor w = random_tensor({1, 1, 2, 2}, rng);
        Graph g;
        NodeId y = ops::conv2d(g, g.constant(x), g.constant(w), 2, 0);
        Tensor ref = conv_oracle(x, w, 2, 0);
        CHECK((g.value(y).data - ref.data).cwiseAbs().maxCoeff() < 1e-12);
    }
    {
        Graph g;
        Tensor x = Tensor::zeros({1, 2, 2});
        Tensor w = Tensor::zeros({1, 1, 5, 5});
        CHECK_THROWS_AS(ops::conv2d(g, g.constant(x), g.constant(w), 1, 0),
                        ConfigError);
    }
}

TEST_CASE("deconv2d impulse, zero, oracle, adjoint identity") {
    SplitMix64 rng(9);
    {
        Graph g;
        Tensor x = Tensor::zeros({1, 3, 3});
        x.at(0, 1, 1) = 1.0;
        Tensor w = random_tensor({1, 1, 4, 4}, rng);
        NodeId y = ops::deconv2d(g, g.constant(x), g.constant(w), 2, 1, 0);
        // kernel stamped at stride-spaced location: y[1*2-1+u, ...]
        Tensor ref = deconv_oracle(x, w, 2, 1, 0);
        CHECK((g.value(y).data - ref.data).cwiseAbs().maxCoeff() < 1e-12);
        CHECK(g.value(y).shape == std::vector<int>{1, 6, 6});
        for (int u = 0; u < 4; ++u)
            for (int v = 0; v < 4; ++v)
                CHECK(g.value(y).at(0, 1 + u, 1 + v) ==
                      doctest::Approx(w.data[u * 4 + v]).epsilon(1e-15));
    }
    {
        Graph g;
        NodeId y = ops::deconv2d(g, g.constant(Tensor::zeros({2, 3, 3})),
                                 g.constant(random_tensor({2, 3, 4, 4}, rng)), 2,
                                 1, 0);
        CHECK(g.value(y).data.cwiseAbs().maxCoeff() == 0.0);
    }
    for (int it = 0; it < 20; ++it) {
        Tensor x = random_tensor({2, 3, 4}, rng);
        Tensor w = random_tensor({2, 3, 4, 4}, rng);
        Graph g;
        NodeId y = ops::deconv2d(g, g.constant(x), g.constant(w), 2, 1, 0);
        Tensor ref = deconv_oracle(x, w, 2, 1, 0);
        REQUIRE(g.value(y).shape == ref.shape);
        CHECK((g.value(y).data - ref.data).cwiseAbs().maxCoeff() < 1e-12);
    }
    // adjoint: <deconv(x;W), y> == <x, conv(y;W)> with tied weights
    for (int it = 0; it < 20; ++it) {
        Tensor x = random_tensor({3, 3, 3}, rng);
        Tensor w = random_tensor({3, 2, 4, 4}, rng);
        Graph g;
        NodeId dx = ops::deconv2d(g, g.constant(x), g.constant(w), 2, 1, 0);
        Tensor y = random_tensor(g.value(dx).shape, rng);
        const double lhs = g.value(dx).data.dot(y.data);
        Graph g2;
        NodeId cy = ops::conv2d(g2, g2.constant(y), g2.constant(w), 2, 1);
        const double rhs = x.data.dot(g2.value(cy).data);
        CHECK(std::abs(lhs - rhs) < 1e-9);
    }
}

TEST_CASE("backward basics") {
    {
        Graph g;
        Tensor x = Tensor::from({2, 2}, {1, -2, 3, 4});
        x.requires_grad = true;
        NodeId xi = g.input(x);
        NodeId loss = ops::sum_all(g, xi);
        g.backward(loss);
        CHECK(g.grad(xi).minCoeff() == 1.0);
        CHECK(g.grad(xi).maxCoeff() == 1.0);
    }
    {
        Graph g;
        Tensor x = Tensor::from({1, 4}, {1, 2, -3, 0.5});
        x.requires_grad = true;
        NodeId xi = g.input(x);
        NodeId loss = ops::mse(g, xi, g.constant(Tensor::zeros({1, 4})));
        g.backward(loss);
        for (int i = 0; i < 4; ++i)
            CHECK(g.grad(xi)[i] == doctest::Approx(2.0 * x.data[i] / 4.0).epsilon(1e-14));
    }
    {
        Graph g;
        CHECK_THROWS_AS(g.backward(g.constant(Tensor::zeros({2, 2}))),
                        ConfigError);
    }
}

TEST_CASE("gradient checks per op, 20 seeded instances each") {
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
        SplitMix64 rng(seed * 1000003ULL);
        gradcheck::CheckOptions opt;
        opt.sample_seed = seed;

        // add/sub/hadamard/scale chained
        {
            auto a = random_tensor({3, 4}, rng);
            auto b = random_tensor({3, 4}, rng);
            double e = gradcheck::max_rel_error(
                {a, b},
                [](Graph& g, const std::vector<NodeId>& p) {
                    NodeId s = ops::add(g, p[0], p[1]);
                    NodeId d = ops::sub(g, s, p[1]);
                    NodeId h = ops::hadamard(g, d, p[1]);
                    return ops::sum_all(g, ops::scale(g, h, 0.7));
                },
                opt);
            CHECK(e < 1e-4);
        }
        // matmul + transpose + reshape + slice + concat
        {
            auto a = random_tensor({3, 4}, rng);
            auto b = random_tensor({4, 5}, rng);
            double e = gradcheck::max_rel_error(
                {a, b},
                [](Graph& g, const std::vector<NodeId>& p) {
                    NodeId m = ops::matmul(g, p[0], p[1]); // 3x5
                    NodeId t = ops::transpose(g, m);       // 5x3
                    NodeId s1 = ops::slice_cols(g, t, 0, 2);
                    NodeId s2 = ops::slice_cols(g, t, 1, 3);
                    NodeId c = ops::concat_cols(g, {s1, s2}); // 5x4
                    NodeId r = ops::reshape(g, c, {4, 5});
                    return ops::mse(g, r, ops::scale(g, p[1], 0.0));
                },
                opt);
            CHECK(e < 1e-4);
        }
        // relu + softmax + layernorm + linear
        {
            auto x = random_tensor({4, 6}, rng);
            auto w = random_tensor({6, 6}, rng);
            auto bias = random_tensor({6}, rng);
            auto gam = random_tensor({6}, rng, 0.5, 1.5);
            auto bet = random_tensor({6}, rng, -0.5, 0.5);
            double e = gradcheck::max_rel_error(
                {x, w, bias, gam, bet},
                [](Graph& g, const std::vector<NodeId>& p) {
                    NodeId l = ops::linear(g, p[0], p[1], p[2]);
                    NodeId n = ops::layernorm_rows(g, l, p[3], p[4]);
                    NodeId r = ops::relu(g, n);
                    NodeId s = ops::softmax_rows(g, r);
                    return ops::sum_all(g, ops::hadamard(g, s, s));
                },
                opt);
            CHECK(e < 1e-4);
        }
        // conv2d + bias_channels
        {
            auto x = random_tensor({2, 5, 5}, rng);
            auto w = random_tensor({3, 2, 3, 3}, rng);
            auto b = random_tensor({3}, rng);
            double e = gradcheck::max_rel_error(
                {x, w, b},
                [](Graph& g, const std::vector<NodeId>& p) {
                    NodeId c = ops::conv2d(g, p[0], p[1], 2, 1);
                    NodeId y = ops::relu(g, ops::bias_channels(g, c, p[2]));
                    return ops::sum_all(g, ops::hadamard(g, y, y));
                },
                opt);
            CHECK(e < 1e-4);
        }
        // deconv2d
        {
            auto x = random_tensor({2, 3, 3}, rng);
            auto w = random_tensor({2, 2, 4, 4}, rng);
            double e = gradcheck::max_rel_error(
                {x, w},
                [](Graph& g, const std::vector<NodeId>& p) {
                    NodeId d = ops::deconv2d(g, p[0], p[1], 2, 1, 0);
                    return ops::sum_all(g, ops::hadamard(g, d, d));
                },
                opt);
            CHECK(e < 1e-4);
        }
        // gather_channels
        {
            auto x = random_tensor({4, 3, 3}, rng);
            double e = gradcheck::max_rel_error(
                {x},
                [](Graph& g, const std::vector<NodeId>& p) {
                    NodeId y = ops::gather_channels(g, p[0], {2, 0}, 4);
                    return ops::sum_all(g, ops::hadamard(g, y, y));
                },
                opt);
            CHECK(e < 1e-4);
        }
        // nll over softmax rows
        {
            auto logits = random_tensor({3, 4}, rng);
            Tensor d = Tensor::zeros({3, 4});
            d.at(0, 2) = 1;
            d.at(1, 0) = 1;
            double e = gradcheck::max_rel_error(
                {logits},
                [d](Graph& g, const std::vector<NodeId>& p) {
                    NodeId pm = ops::softmax_rows(g, p[0]);
                    return ops::nll_rows(g, pm, g.constant(d));
                },
                opt);
            CHECK(e < 1e-4);
        }
        // dropout in training mode with fixed mask seed
        {
            auto x = random_tensor({4, 4}, rng);
            gradcheck::CheckOptions topt = opt;
            topt.training_mode = true;
            topt.dropout_seed = seed;
            double e = gradcheck::max_rel_error(
                {x},
                [](Graph& g, const std::vector<NodeId>& p) {
                    NodeId y = ops::dropout(g, p[0], 0.3);
                    return ops::sum_all(g, ops::hadamard(g, y, y));
                },
                topt);
            CHECK(e < 1e-4);
        }
        // full attention layer (self), evaluation mode
        {
            SplitMix64 prng(seed * 77ULL + 3);
            auto x = random_tensor({3, 8}, prng, -0.8, 0.8);
            Graph probe; // build params once to collect tensors in order
            std::vector<Tensor> params;
            params.push_back(x);
            {
                SplitMix64 r2(seed * 77ULL + 4);
                auto mk = [&](std::vector<int> s) {
                    params.push_back(random_tensor(std::move(s), r2, -0.4, 0.4));
                };
                mk({8, 8}); mk({8}); mk({8, 8}); mk({8}); mk({8, 8}); mk({8});
                mk({8, 8}); mk({8}); mk({8}); mk({8});
                mk({8, 12}); mk({12}); mk({12, 8}); mk({8}); mk({8}); mk({8});
            }
            double e = gradcheck::max_rel_error(
                params,
                [](Graph& g, const std::vector<NodeId>& p) {
                    ops::AttentionLayerParams lp;
                    lp.attn = {p[1], p[2], p[3], p[4], p[5], p[6],
                               p[7], p[8], p[9], p[10]};
                    lp.ffn = {p[11], p[12], p[13], p[14], p[15], p[16]};
                    NodeId y = ops::attention_layer(g, p[0], p[0], p[0], lp, 4,
                                                    0.0);
                    return ops::sum_all(g, ops::hadamard(g, y, y));
                },
                opt);
            CHECK(e < 1e-4);
        }
    }
}

TEST_CASE("attention degenerate cases") {
    // zero Q/K projections -> uniform attention -> attended value equals
    // the column mean of projected V
    Graph g;
    SplitMix64 rng(21);
    const int L = 5, d = 8;
    Tensor x = random_tensor({L, d}, rng);
    auto zeros = [&](std::vector<int> s) { return g.constant(Tensor::zeros(std::move(s))); };
    auto ident = [&](int n) {
        Tensor t = Tensor::zeros({n, n});
        for (int i = 0; i < n; ++i) t.at(i, i) = 1.0;
        return g.constant(t);
    };
    ops::AttentionParams p;
    p.wq = zeros({d, d});
    p.bq = zeros({d});
    p.wk = zeros({d, d});
    p.bk = zeros({d});
    p.wv = ident(d);
    p.bv = zeros({d});
    p.wo = ident(d);
    p.bo = zeros({d});
    p.ln_g = g.constant(Tensor::full({d}, 1.0));
    p.ln_b = zeros({d});
    NodeId xi = g.constant(x);
    NodeId y = ops::mha_block(g, xi, xi, xi, p, 2, 0.0);
    // expected: x + mean over rows of layernormed x
    Graph g2;
    NodeId ln = ops::layernorm_rows(g2, g2.constant(x),
                                    g2.constant(Tensor::full({d}, 1.0)),
                                    g2.constant(Tensor::zeros({d})));
    Eigen::RowVectorXd mean = g2.value(ln).mat2d().colwise().mean();
    for (int i = 0; i < L; ++i)
        for (int j = 0; j < d; ++j)
            CHECK(g.value(y).at(i, j) ==
                  doctest::Approx(x.at(i, j) + mean[j]).epsilon(1e-12));

    // all params zero (incl. LN gain) -> pure residual passthrough
    Graph g3;
    ops::AttentionLayerParams lp;
    auto z3 = [&](std::vector<int> s) { return g3.constant(Tensor::zeros(std::move(s))); };
    lp.attn = {z3({d, d}), z3({d}), z3({d, d}), z3({d}), z3({d, d}),
               z3({d}),    z3({d, d}), z3({d}), z3({d}), z3({d})};
    lp.ffn = {z3({d, 16}), z3({16}), z3({16, d}), z3({d}), z3({d}), z3({d})};
    NodeId xi3 = g3.constant(x);
    NodeId y3 = ops::attention_layer(g3, xi3, xi3, xi3, lp, 4, 0.0);
    CHECK((g3.value(y3).data - x.data).cwiseAbs().maxCoeff() == 0.0);

    Graph g4;
    NodeId xi4 = g4.constant(Tensor::zeros({2, 6}));
    ops::AttentionParams p4;
    p4.wq = g4.constant(Tensor::zeros({6, 6}));
    CHECK_THROWS_AS(ops::mha_block(g4, xi4, xi4, xi4, p4, 4, 0.0), ConfigError);
}

TEST_CASE("forward is bit-deterministic") {
    SplitMix64 rng(33);
    Tensor x = random_tensor({2, 6, 6}, rng);
    Tensor w = random_tensor({3, 2, 3, 3}, rng);
    auto run = [&]() {
        Graph g;
        g.set_mode(true, 42);
        NodeId y = ops::conv2d(g, g.constant(x), g.constant(w), 1, 1);
        NodeId dm = ops::dropout(g, ops::reshape(g, y, {3, 36}), 0.5);
        return g.value(ops::softmax_rows(g, dm)).data;
    };
    Eigen::VectorXd a = run(), b = run();
    CHECK((a - b).cwiseAbs().maxCoeff() == 0.0);
}
