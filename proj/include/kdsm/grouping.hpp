#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "kdsm/tensor.hpp"

namespace kdsm {

using SpeciesCategory = std::pair<std::string, std::string>;
using LabeledEmbedding = std::pair<SpeciesCategory, Eigen::VectorXd>;

/// Result of the offline clustering stage: O centroids plus the
/// (species, category) -> group map. Within one species all categories
/// map to pairwise-distinct groups.
struct Grouping {
    Mat centroids; // O x C0
    std::map<SpeciesCategory, int> assignment;

    int n_groups() const { return static_cast<int>(centroids.rows()); }
    bool contains(const SpeciesCategory& key) const {
        return assignment.count(key) != 0;
    }
    int group_of(const SpeciesCategory& key) const;
};

/// Exact min-cost rectangular assignment (Hungarian method with
/// potentials). cost is n x m with n <= m; returns the matched column per
/// row.
std::vector<int> hungarian_assign(const Mat& cost);

/// Lloyd iterations with k-means++ seeding where the assignment step
/// solves, per species, a min-cost one-to-one assignment of its categories
/// to distinct clusters. Species with a single category use the nearest
/// centroid. Empty clusters are re-seeded to the point farthest from its
/// assigned centroid. `objective_trace`, when given, receives the
/// after-assignment objective of every iteration.
Grouping constrained_kmeans(const std::vector<LabeledEmbedding>& embeddings,
                            int n_groups, std::uint64_t seed,
                            int max_iter = 100,
                            std::vector<double>* objective_trace = nullptr);

/// Binary K x O matrix with one-hot valid rows marking each prompt's group.
struct DomainMatrix {
    Tensor d; // [K x O]
    int K_valid = 0;
    std::vector<int> selection; // group index per valid row
};

DomainMatrix build_domain_matrix(const std::vector<SpeciesCategory>& prompts,
                                 const Grouping& grouping, int K);

} // namespace kdsm
