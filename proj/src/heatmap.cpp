#include "kdsm/heatmap.hpp"

#include <cmath>

namespace kdsm {

void KeypointSet::validate() const {
    if (coords.size() != visible.size())
        throw ConfigError("keypoint set: coords/visible length mismatch");
    for (const Point& p : coords)
        if (!std::isfinite(p.x) || !std::isfinite(p.y))
            throw ConfigError("keypoint set: non-finite coordinate");
    if (!(bbox.x0 < bbox.x1) || !(bbox.y0 < bbox.y1))
        throw ConfigError("keypoint set: degenerate bounding box");
}

HeatmapStack encode_gaussian(KeypointSet& kps, int n_channels, int hei,
                             int wid, double sigma, int image_size) {
    if (sigma <= 0) throw ConfigError("encode_gaussian: sigma must be positive");
    if (hei <= 0 || wid <= 0 || image_size <= 0)
        throw ConfigError("encode_gaussian: non-positive geometry");
    const int n_kp = static_cast<int>(kps.coords.size());
    if (n_kp > n_channels)
        throw ConfigError("encode_gaussian: more keypoints than channels");

    HeatmapStack out;
    out.channels = Tensor::zeros({n_channels, hei, wid});
    out.valid = n_kp;

    const double scale = static_cast<double>(hei) / image_size;
    const int r = static_cast<int>(std::lround(3.0 * sigma));
    const double denom = 2.0 * sigma * sigma;

    for (int k = 0; k < n_kp; ++k) {
        if (!kps.visible[static_cast<std::size_t>(k)]) continue;
        const int cx = static_cast<int>(std::floor(kps.coords[static_cast<std::size_t>(k)].x * scale));
        const int cy = static_cast<int>(std::floor(kps.coords[static_cast<std::size_t>(k)].y * scale));
        if (cx + r < 0 || cx - r > wid - 1 || cy + r < 0 || cy - r > hei - 1) {
            kps.visible[static_cast<std::size_t>(k)] = 0;
            continue;
        }
        const int y0 = std::max(0, cy - r), y1 = std::min(hei - 1, cy + r);
        const int x0 = std::max(0, cx - r), x1 = std::min(wid - 1, cx + r);
        for (int py = y0; py <= y1; ++py)
            for (int px = x0; px <= x1; ++px) {
                const double dx = px - cx, dy = py - cy;
                out.channels.at(k, py, px) =
                    std::exp(-(dx * dx + dy * dy) / denom);
            }
    }
    return out;
}

std::vector<DecodedKeypoint> decode_argmax(const HeatmapStack& h) {
    const int n = h.channels.shape[0];
    const int hei = h.channels.shape[1];
    const int wid = h.channels.shape[2];
    std::vector<DecodedKeypoint> out(static_cast<std::size_t>(n));
    for (int c = 0; c < n; ++c) {
        double best = h.channels.at(c, 0, 0);
        int bi = 0, bj = 0;
        for (int i = 0; i < hei; ++i)
            for (int j = 0; j < wid; ++j) {
                const double v = h.channels.at(c, i, j);
                if (v > best) {
                    best = v;
                    bi = i;
                    bj = j;
                }
            }
        DecodedKeypoint& d = out[static_cast<std::size_t>(c)];
        d.x = bj;
        d.y = bi;
        d.score = best;
        d.valid = best > 0.0;
    }
    return out;
}

} // namespace kdsm
