#pragma once

#include <optional>
#include <string>
#include <vector>

#include "kdsm/heatmap.hpp"

namespace kdsm {

/// Fraction of visible keypoints with ||pred - gt|| / L <= threshold where
/// L is the longest side of the ground-truth box (inclusive boundary).
/// Invalid predictions count as misses. std::nullopt when the sample has no
/// visible keypoints (skip, not 0).
std::optional<double> pck(const std::vector<DecodedKeypoint>& pred,
                          const KeypointSet& gt, double threshold);

/// Mean over visible keypoints of ||pred - gt|| / L, reported x100.
/// Invalid predictions contribute normalized error 1. std::nullopt when no
/// keypoint is visible.
std::optional<double> nme(const std::vector<DecodedKeypoint>& pred,
                          const KeypointSet& gt);

/// Pools keypoint-level outcomes across the samples of one fold.
class FoldAccumulator {
public:
    void add(const std::vector<DecodedKeypoint>& pred, const KeypointSet& gt);
    bool empty() const { return total_ == 0; }
    double pck(double threshold) const;
    double nme() const;
    long keypoints() const { return total_; }
    long skipped_samples() const { return skipped_; }

private:
    std::vector<double> normalized_errors_;
    long total_ = 0;
    long skipped_ = 0;
};

struct FoldScore {
    int fold = 0;
    double pck02 = 0;
    double pck005 = 0;
    double nme = 0;
    long keypoints = 0;
};

struct MetricReport {
    std::vector<FoldScore> folds;
    double pck02_mean = 0;
    double pck005_mean = 0;
    double nme_mean = 0;
    long keypoints_total = 0;
};

/// Unweighted mean across folds; per-fold values retained.
MetricReport aggregate(const std::vector<FoldScore>& folds);

std::string report_to_json(const MetricReport& r);
MetricReport report_from_json(const std::string& text);
std::string format_report(const MetricReport& r);

} // namespace kdsm
