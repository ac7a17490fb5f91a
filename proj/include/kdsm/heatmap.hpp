#pragma once

#include <vector>

#include "kdsm/tensor.hpp"

namespace kdsm {

struct BBox {
    double x0 = 0, y0 = 0, x1 = 0, y1 = 0;
    double longest_side() const {
        const double w = x1 - x0, h = y1 - y0;
        return w > h ? w : h;
    }
};

struct Point {
    double x = 0, y = 0;
};

struct KeypointSet {
    std::vector<Point> coords; // image-pixel coordinates
    std::vector<std::uint8_t> visible;
    BBox bbox;

    void validate() const;
};

struct HeatmapStack {
    Tensor channels; // [N x hei x wid]
    int valid = 0;   // meaningful leading channels
};

/// Peak-1 Gaussian heatmaps, truncated to a square window of half-width
/// round(3*sigma) around the floor-rounded grid keypoint. Invisible
/// keypoints and channels >= valid are all-zero. A keypoint whose whole
/// window falls outside the grid gets a zero channel and its visibility
/// flag cleared in `kps`.
HeatmapStack encode_gaussian(KeypointSet& kps, int n_channels, int hei,
                             int wid, double sigma, int image_size);

struct DecodedKeypoint {
    double x = 0, y = 0;
    double score = 0;
    bool valid = false;
};

/// Per channel: location and value of the maximum, first in row-major
/// order on ties; valid=false when the maximum is <= 0.
std::vector<DecodedKeypoint> decode_argmax(const HeatmapStack& h);

} // namespace kdsm
