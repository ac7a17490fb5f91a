#pragma once

#include <functional>
#include <vector>

#include <kdsm/rng.hpp>
#include <kdsm/tensor.hpp>

namespace gradcheck {

using BuildFn = std::function<kdsm::NodeId(kdsm::Graph&,
                                           const std::vector<kdsm::NodeId>&)>;

inline kdsm::Tensor random_tensor(std::vector<int> shape, kdsm::SplitMix64& rng,
                                  double lo = -1.0, double hi = 1.0) {
    kdsm::Tensor t = kdsm::Tensor::zeros(std::move(shape));
    for (std::int64_t i = 0; i < t.numel(); ++i) t.data[i] = rng.uniform(lo, hi);
    return t;
}

struct CheckOptions {
    double step = 1e-5;
    // < 0 checks every coordinate; otherwise samples this many per tensor.
    int coords_per_tensor = -1;
    std::uint64_t sample_seed = 0;
    bool training_mode = false; // fixed dropout seed so masks are stable
    std::uint64_t dropout_seed = 0;
};

/// Central-finite-difference gradient check. Returns the worst relative
/// error over all checked coordinates, where the error is
/// |analytic - fd| / max(|analytic|, |fd|, 1e-4).
inline double max_rel_error(const std::vector<kdsm::Tensor>& params,
                            const BuildFn& build,
                            const CheckOptions& opt = {}) {
    auto run = [&](const std::vector<kdsm::Tensor>& ps,
                   std::vector<Eigen::VectorXd>* grads) -> double {
        kdsm::Graph g;
        g.set_mode(opt.training_mode, opt.dropout_seed);
        std::vector<kdsm::NodeId> ids;
        for (const auto& p : ps) {
            kdsm::Tensor t = p;
            t.requires_grad = true;
            ids.push_back(g.input(std::move(t)));
        }
        kdsm::NodeId loss = build(g, ids);
        const double val = g.value(loss).data[0];
        if (grads) {
            g.backward(loss);
            for (std::size_t i = 0; i < ids.size(); ++i) {
                grads->push_back(
                    g.has_grad(ids[i])
                        ? g.grad(ids[i])
                        : Eigen::VectorXd::Zero(ps[i].numel()).eval());
            }
        }
        return val;
    };

    std::vector<Eigen::VectorXd> analytic;
    run(params, &analytic);

    kdsm::SplitMix64 pick(opt.sample_seed + 0x5eedULL);
    double worst = 0.0;
    std::vector<kdsm::Tensor> work = params;
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        const std::int64_t n = params[pi].numel();
        std::vector<std::int64_t> coords;
        if (opt.coords_per_tensor < 0 || opt.coords_per_tensor >= n) {
            for (std::int64_t c = 0; c < n; ++c) coords.push_back(c);
        } else {
            for (int c = 0; c < opt.coords_per_tensor; ++c)
                coords.push_back(static_cast<std::int64_t>(
                    pick.below(static_cast<std::uint64_t>(n))));
        }
        for (std::int64_t c : coords) {
            const double orig = work[pi].data[c];
            const double an = analytic[pi][c];
            double best = std::numeric_limits<double>::infinity();
            // retry at other steps when the estimate lands on a ReLU kink
            // (smaller h) or is rounding-noise limited (larger h); a
            // genuinely wrong gradient fails at every step
            for (const double h :
                 {opt.step, opt.step / 10.0, opt.step * 10.0, opt.step / 100.0}) {
                work[pi].data[c] = orig + h;
                const double fp = run(work, nullptr);
                work[pi].data[c] = orig - h;
                const double fm = run(work, nullptr);
                work[pi].data[c] = orig;
                const double fd = (fp - fm) / (2.0 * h);
                const double err = std::abs(an - fd);
                const double denom = std::max({std::abs(an), std::abs(fd), 1e-4});
                best = std::min(best, err / denom);
                if (best < 1e-5) break;
            }
            worst = std::max(worst, best);
        }
    }
    return worst;
}

} // namespace gradcheck
