#pragma once

#include <map>
#include <string>
#include <vector>

#include "kdsm/heatmap.hpp"
#include "kdsm/tensor.hpp"
#include "kdsm/text.hpp"

namespace kdsm {

/// One name of the shared category vocabulary: canonical anchor in the unit
/// square plus the visual pattern id every species renders it with.
struct VocabEntry {
    std::string name;
    Point anchor;
    int pattern;
};

/// The 12-name shared vocabulary. Category names recur across species so
/// cross-species grouping and zero-shot transfer are meaningful.
const std::vector<VocabEntry>& vocabulary();

/// 5x5 stamp for a pattern id, values in [0,1] with the exact peak 1.0 at
/// the center pixel.
Mat pattern_stamp(int pattern_id);
constexpr int kStampRadius = 2;

struct SpeciesTemplate {
    std::string name;
    std::vector<std::string> categories;  // ordered, unique
    std::vector<Point> base_layout;       // unit-square anchor per category
    std::vector<int> render_style;        // pattern id per category
};

using World = std::vector<SpeciesTemplate>;

World gen_world(int n_species, int cats_per_species, std::uint64_t seed);

struct Sample {
    Tensor image; // [1 x S x S], values in [0,1]
    KeypointSet kps;
    std::string species;
    std::vector<PromptSpec> prompts;
};

/// Deterministic rendering: a random similarity transform (scale 0.8-1.2,
/// rotation +-30 deg, translation keeping the layout in frame) of the
/// species layout, each visible category's pattern stamped at its
/// transformed anchor over a noisy background. ~10% of keypoints are
/// invisible (not stamped).
Sample render_sample(const SpeciesTemplate& tmpl, std::uint64_t instance_seed,
                     int image_size);

/// Train-time augmentation: joint scale (-15%..15%) and rotation
/// (-15..15 deg) of image and keypoints; keypoints leaving the frame are
/// marked invisible.
Sample augment(const Sample& s, std::uint64_t seed);

struct AugmentDraw {
    double scale = 1.0;
    double theta = 0.0; // radians
};
AugmentDraw augment_draw(std::uint64_t seed);
Sample apply_augment(const Sample& s, const AugmentDraw& draw);

struct SplitPlan {
    char setting = 'A';
    int fold = 1;
    // Setting B membership
    std::vector<std::string> train_species;
    std::vector<std::string> test_species;
    // Setting A membership: per-species disjoint category sets
    std::map<std::string, std::vector<std::string>> train_categories;
    std::map<std::string, std::vector<std::string>> test_categories;
};

std::vector<SplitPlan> make_splits(const World& world, char setting,
                                   int n_folds, std::uint64_t seed);

// 8-bit binary PGM image I/O.
void write_pgm(const Tensor& image, const std::string& path);
Tensor read_pgm(const std::string& path);

/// On-disk dataset layout: world.json, samples/NNNN.pgm + NNNN.json,
/// splits/setting{A,B}_fold{1..n}.json.
void write_dataset(const std::string& dir, const World& world, int n_samples,
                   int image_size, std::uint64_t seed, int n_folds = 5);

struct Dataset {
    World world;
    int image_size = 0;
    std::uint64_t seed = 0;
    std::vector<Sample> samples;

    const SpeciesTemplate& species(const std::string& name) const;
};

Dataset load_dataset(const std::string& dir);
SplitPlan load_split(const std::string& dir, char setting, int fold);

} // namespace kdsm
