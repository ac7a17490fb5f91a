#include "kdsm/grouping.hpp"

#include <algorithm>
#include <limits>
#include <set>

#include "kdsm/rng.hpp"

namespace kdsm {

int Grouping::group_of(const SpeciesCategory& key) const {
    auto it = assignment.find(key);
    if (it == assignment.end())
        throw LookupError("grouping has no entry for (" + key.first + ", " +
                          key.second + ")");
    return it->second;
}

std::vector<int> hungarian_assign(const Mat& cost) {
    const int n = static_cast<int>(cost.rows());
    const int m = static_cast<int>(cost.cols());
    if (n == 0) return {};
    if (n > m)
        throw ConfigError("hungarian_assign: more rows than columns (" +
                          std::to_string(n) + " > " + std::to_string(m) + ")");
    constexpr double kInf = std::numeric_limits<double>::infinity();
    std::vector<double> u(static_cast<std::size_t>(n) + 1, 0.0);
    std::vector<double> v(static_cast<std::size_t>(m) + 1, 0.0);
    std::vector<int> p(static_cast<std::size_t>(m) + 1, 0);
    std::vector<int> way(static_cast<std::size_t>(m) + 1, 0);
    for (int i = 1; i <= n; ++i) {
        p[0] = i;
        int j0 = 0;
        std::vector<double> minv(static_cast<std::size_t>(m) + 1, kInf);
        std::vector<char> used(static_cast<std::size_t>(m) + 1, 0);
        do {
            used[static_cast<std::size_t>(j0)] = 1;
            const int i0 = p[static_cast<std::size_t>(j0)];
            int j1 = -1;
            double delta = kInf;
            for (int j = 1; j <= m; ++j) {
                if (used[static_cast<std::size_t>(j)]) continue;
                const double cur = cost(i0 - 1, j - 1) - u[static_cast<std::size_t>(i0)] -
                                   v[static_cast<std::size_t>(j)];
                if (cur < minv[static_cast<std::size_t>(j)]) {
                    minv[static_cast<std::size_t>(j)] = cur;
                    way[static_cast<std::size_t>(j)] = j0;
                }
                if (minv[static_cast<std::size_t>(j)] < delta) {
                    delta = minv[static_cast<std::size_t>(j)];
                    j1 = j;
                }
            }
            for (int j = 0; j <= m; ++j) {
                if (used[static_cast<std::size_t>(j)]) {
                    u[static_cast<std::size_t>(p[static_cast<std::size_t>(j)])] += delta;
                    v[static_cast<std::size_t>(j)] -= delta;
                } else {
                    minv[static_cast<std::size_t>(j)] -= delta;
                }
            }
            j0 = j1;
        } while (p[static_cast<std::size_t>(j0)] != 0);
        do {
            const int j1 = way[static_cast<std::size_t>(j0)];
            p[static_cast<std::size_t>(j0)] = p[static_cast<std::size_t>(j1)];
            j0 = j1;
        } while (j0);
    }
    std::vector<int> row_to_col(static_cast<std::size_t>(n), -1);
    for (int j = 1; j <= m; ++j)
        if (p[static_cast<std::size_t>(j)] != 0)
            row_to_col[static_cast<std::size_t>(p[static_cast<std::size_t>(j)]) - 1] = j - 1;
    return row_to_col;
}

namespace {

struct SpeciesBlock {
    std::string name;
    std::vector<int> point_ids;
};

double sq_dist(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
    return (a - b).squaredNorm();
}

} // namespace

Grouping constrained_kmeans(const std::vector<LabeledEmbedding>& embeddings,
                            int n_groups, std::uint64_t seed, int max_iter,
                            std::vector<double>* objective_trace) {
    const int n = static_cast<int>(embeddings.size());
    if (n == 0) throw ConfigError("constrained_kmeans: no embeddings");
    if (n_groups <= 0) throw ConfigError("constrained_kmeans: O must be positive");
    const auto dim = embeddings[0].second.size();
    for (const auto& e : embeddings)
        if (e.second.size() != dim)
            throw ConfigError("constrained_kmeans: embedding widths differ");

    // Species blocks in first-appearance order; detect duplicates and
    // infeasible species.
    std::vector<SpeciesBlock> blocks;
    std::map<std::string, std::size_t> block_of;
    std::set<SpeciesCategory> seen;
    for (int i = 0; i < n; ++i) {
        const auto& key = embeddings[static_cast<std::size_t>(i)].first;
        if (!seen.insert(key).second)
            throw ConfigError("constrained_kmeans: duplicate pair (" +
                              key.first + ", " + key.second + ")");
        auto it = block_of.find(key.first);
        if (it == block_of.end()) {
            block_of.emplace(key.first, blocks.size());
            blocks.push_back({key.first, {i}});
        } else {
            blocks[it->second].point_ids.push_back(i);
        }
    }
    for (const auto& b : blocks)
        if (static_cast<int>(b.point_ids.size()) > n_groups)
            throw ConfigError("constrained_kmeans: species \"" + b.name +
                              "\" has " + std::to_string(b.point_ids.size()) +
                              " categories but only O=" +
                              std::to_string(n_groups) + " groups");

    // k-means++ seeding.
    SplitMix64 rng(mix_seed(seed, 0x6b6d6570ULL));
    Mat centroids(n_groups, dim);
    std::vector<double> d2(static_cast<std::size_t>(n),
                           std::numeric_limits<double>::infinity());
    {
        const int first = static_cast<int>(rng.below(static_cast<std::uint64_t>(n)));
        centroids.row(0) = embeddings[static_cast<std::size_t>(first)].second.transpose();
        for (int c = 1; c < n_groups; ++c) {
            double total = 0.0;
            for (int i = 0; i < n; ++i) {
                const double d = sq_dist(embeddings[static_cast<std::size_t>(i)].second,
                                         centroids.row(c - 1).transpose());
                d2[static_cast<std::size_t>(i)] = std::min(d2[static_cast<std::size_t>(i)], d);
                total += d2[static_cast<std::size_t>(i)];
            }
            int pick = 0;
            if (total <= 0.0) {
                pick = static_cast<int>(rng.below(static_cast<std::uint64_t>(n)));
            } else {
                double r = rng.uniform() * total;
                for (int i = 0; i < n; ++i) {
                    r -= d2[static_cast<std::size_t>(i)];
                    if (r <= 0.0) {
                        pick = i;
                        break;
                    }
                    pick = i;
                }
            }
            centroids.row(c) = embeddings[static_cast<std::size_t>(pick)].second.transpose();
        }
    }

    std::vector<int> assign(static_cast<std::size_t>(n), -1);
    std::vector<int> prev_assign;
    for (int iter = 0; iter < max_iter; ++iter) {
        // Assignment step: exact one-to-one assignment inside each species.
        for (const auto& b : blocks) {
            const int c = static_cast<int>(b.point_ids.size());
            if (c == 1) {
                const auto& x = embeddings[static_cast<std::size_t>(b.point_ids[0])].second;
                int best = 0;
                double bd = sq_dist(x, centroids.row(0).transpose());
                for (int j = 1; j < n_groups; ++j) {
                    const double d = sq_dist(x, centroids.row(j).transpose());
                    if (d < bd) {
                        bd = d;
                        best = j;
                    }
                }
                assign[static_cast<std::size_t>(b.point_ids[0])] = best;
                continue;
            }
            Mat cost(c, n_groups);
            for (int r = 0; r < c; ++r)
                for (int j = 0; j < n_groups; ++j)
                    cost(r, j) = sq_dist(
                        embeddings[static_cast<std::size_t>(b.point_ids[static_cast<std::size_t>(r)])].second,
                        centroids.row(j).transpose());
            std::vector<int> cols = hungarian_assign(cost);
            for (int r = 0; r < c; ++r)
                assign[static_cast<std::size_t>(b.point_ids[static_cast<std::size_t>(r)])] =
                    cols[static_cast<std::size_t>(r)];
        }

        if (objective_trace) {
            double obj = 0.0;
            for (int i = 0; i < n; ++i)
                obj += sq_dist(embeddings[static_cast<std::size_t>(i)].second,
                               centroids.row(assign[static_cast<std::size_t>(i)]).transpose());
            objective_trace->push_back(obj);
        }
        if (assign == prev_assign) break;
        prev_assign = assign;

        // Update step: member means; re-seed empty clusters.
        Mat sums = Mat::Zero(n_groups, dim);
        std::vector<int> counts(static_cast<std::size_t>(n_groups), 0);
        for (int i = 0; i < n; ++i) {
            sums.row(assign[static_cast<std::size_t>(i)]) +=
                embeddings[static_cast<std::size_t>(i)].second.transpose();
            counts[static_cast<std::size_t>(assign[static_cast<std::size_t>(i)])]++;
        }
        std::vector<char> reseeded(static_cast<std::size_t>(n), 0);
        for (int j = 0; j < n_groups; ++j) {
            if (counts[static_cast<std::size_t>(j)] > 0) {
                centroids.row(j) = sums.row(j) / counts[static_cast<std::size_t>(j)];
            }
        }
        for (int j = 0; j < n_groups; ++j) {
            if (counts[static_cast<std::size_t>(j)] > 0) continue;
            int far = -1;
            double fd = -1.0;
            for (int i = 0; i < n; ++i) {
                if (reseeded[static_cast<std::size_t>(i)]) continue;
                const double d = sq_dist(embeddings[static_cast<std::size_t>(i)].second,
                                         centroids.row(assign[static_cast<std::size_t>(i)]).transpose());
                if (d > fd) {
                    fd = d;
                    far = i;
                }
            }
            if (far >= 0) {
                centroids.row(j) = embeddings[static_cast<std::size_t>(far)].second.transpose();
                reseeded[static_cast<std::size_t>(far)] = 1;
            }
        }
    }

    Grouping g;
    g.centroids = std::move(centroids);
    for (int i = 0; i < n; ++i)
        g.assignment[embeddings[static_cast<std::size_t>(i)].first] =
            assign[static_cast<std::size_t>(i)];
    return g;
}

DomainMatrix build_domain_matrix(const std::vector<SpeciesCategory>& prompts,
                                 const Grouping& grouping, int K) {
    if (static_cast<int>(prompts.size()) > K)
        throw CapacityError("build_domain_matrix: " +
                            std::to_string(prompts.size()) +
                            " prompts exceed K=" + std::to_string(K));
    const int O = grouping.n_groups();
    DomainMatrix dm;
    dm.K_valid = static_cast<int>(prompts.size());
    dm.d = Tensor::zeros({K, O});
    std::set<int> used;
    for (int i = 0; i < dm.K_valid; ++i) {
        const int o = grouping.group_of(prompts[static_cast<std::size_t>(i)]);
        if (o < 0 || o >= O)
            throw ConfigError("build_domain_matrix: group index out of range");
        if (!used.insert(o).second)
            throw ConfigError(
                "build_domain_matrix: duplicate group within one sample, "
                "grouping invariant violated");
        dm.d.at(i, o) = 1.0;
        dm.selection.push_back(o);
    }
    return dm;
}

} // namespace kdsm
