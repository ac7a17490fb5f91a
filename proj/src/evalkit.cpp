#include "kdsm/evalkit.hpp"

#include <cmath>
#include <sstream>

#include <json.hpp>

using json = nlohmann::json;

namespace kdsm {

namespace {

void check_pair(const std::vector<DecodedKeypoint>& pred,
                const KeypointSet& gt) {
    if (pred.size() != gt.coords.size())
        throw ConfigError("metrics: prediction/ground-truth count mismatch");
    gt.validate();
}

// Normalized error per visible keypoint; invalid predictions map to 1.
std::vector<double> normalized_errors(const std::vector<DecodedKeypoint>& pred,
                                      const KeypointSet& gt) {
    check_pair(pred, gt);
    const double L = gt.bbox.longest_side();
    std::vector<double> errs;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        if (!gt.visible[i]) continue;
        if (!pred[i].valid) {
            errs.push_back(1.0);
            continue;
        }
        const double dx = pred[i].x - gt.coords[i].x;
        const double dy = pred[i].y - gt.coords[i].y;
        errs.push_back(std::sqrt(dx * dx + dy * dy) / L);
    }
    return errs;
}

} // namespace

std::optional<double> pck(const std::vector<DecodedKeypoint>& pred,
                          const KeypointSet& gt, double threshold) {
    const std::vector<double> errs = normalized_errors(pred, gt);
    if (errs.empty()) return std::nullopt;
    long hits = 0;
    for (double e : errs) hits += e <= threshold;
    return static_cast<double>(hits) / static_cast<double>(errs.size());
}

std::optional<double> nme(const std::vector<DecodedKeypoint>& pred,
                          const KeypointSet& gt) {
    const std::vector<double> errs = normalized_errors(pred, gt);
    if (errs.empty()) return std::nullopt;
    double sum = 0;
    for (double e : errs) sum += e;
    return 100.0 * sum / static_cast<double>(errs.size());
}

void FoldAccumulator::add(const std::vector<DecodedKeypoint>& pred,
                          const KeypointSet& gt) {
    const std::vector<double> errs = normalized_errors(pred, gt);
    if (errs.empty()) {
        ++skipped_;
        return;
    }
    normalized_errors_.insert(normalized_errors_.end(), errs.begin(), errs.end());
    total_ += static_cast<long>(errs.size());
}

double FoldAccumulator::pck(double threshold) const {
    if (total_ == 0) throw ConfigError("fold accumulator: no keypoints scored");
    long hits = 0;
    for (double e : normalized_errors_) hits += e <= threshold;
    return static_cast<double>(hits) / static_cast<double>(total_);
}

double FoldAccumulator::nme() const {
    if (total_ == 0) throw ConfigError("fold accumulator: no keypoints scored");
    double sum = 0;
    for (double e : normalized_errors_) sum += e;
    return 100.0 * sum / static_cast<double>(total_);
}

MetricReport aggregate(const std::vector<FoldScore>& folds) {
    if (folds.empty()) throw ConfigError("aggregate: no fold reports");
    MetricReport r;
    r.folds = folds;
    for (const FoldScore& f : folds) {
        r.pck02_mean += f.pck02;
        r.pck005_mean += f.pck005;
        r.nme_mean += f.nme;
        r.keypoints_total += f.keypoints;
    }
    const double n = static_cast<double>(folds.size());
    r.pck02_mean /= n;
    r.pck005_mean /= n;
    r.nme_mean /= n;
    return r;
}

std::string report_to_json(const MetricReport& r) {
    json j;
    j["folds"] = json::array();
    for (const FoldScore& f : r.folds)
        j["folds"].push_back({{"fold", f.fold},
                              {"pck02", f.pck02},
                              {"pck005", f.pck005},
                              {"nme", f.nme},
                              {"keypoints", f.keypoints}});
    j["pck02_mean"] = r.pck02_mean;
    j["pck005_mean"] = r.pck005_mean;
    j["nme_mean"] = r.nme_mean;
    j["keypoints_total"] = r.keypoints_total;
    return j.dump(2) + "\n";
}

MetricReport report_from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw ParseError(std::string("metric report: ") + e.what());
    }
    std::vector<FoldScore> folds;
    for (const auto& fj : j.at("folds"))
        folds.push_back({fj.at("fold").get<int>(), fj.at("pck02").get<double>(),
                         fj.at("pck005").get<double>(), fj.at("nme").get<double>(),
                         fj.at("keypoints").get<long>()});
    return aggregate(folds);
}

std::string format_report(const MetricReport& r) {
    std::ostringstream os;
    char line[128];
    os << "fold    PCK@0.2   PCK@0.05        NME  keypoints\n";
    for (const FoldScore& f : r.folds) {
        std::snprintf(line, sizeof(line), "%4d %10.4f %10.4f %10.4f %10ld\n",
                      f.fold, f.pck02, f.pck005, f.nme, f.keypoints);
        os << line;
    }
    std::snprintf(line, sizeof(line), "mean %10.4f %10.4f %10.4f %10ld\n",
                  r.pck02_mean, r.pck005_mean, r.nme_mean, r.keypoints_total);
    os << line;
    return os.str();
}

} // namespace kdsm
