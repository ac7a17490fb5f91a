#include "kdsm/synthworld.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>

#include <json.hpp>

#include "kdsm/rng.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace kdsm {

namespace {

constexpr double kLayoutSpan = 0.72; // layout extent as a fraction of S
constexpr double kFrameMargin = 3.0;
constexpr double kInvisibleRate = 0.10;
constexpr double kNoiseLevel = 0.10;
constexpr double kMinAnchorSep = 0.24;

// 5x5 stamps, '.'=0, '+'=0.45, '#'=0.8; the center is forced to 1.0.
const char* kPatterns[12][5] = {
    {".###.", "#...#", "#....", "#...#", ".###."}, // ring
    {".###.", "#####", "#####", "#####", ".###."}, // disc
    {"..#..", "..#..", "##.##", "..#..", "..#.."}, // plus
    {"#...#", ".#.#.", ".....", ".#.#.", "#...#"}, // x
    {".....", "+++++", "##.##", "+++++", "....."}, // horizontal bar
    {".+#+.", ".+#+.", ".+.+.", ".+#+.", ".+#+."}, // vertical bar
    {"####.", "#+...", "#....", "#....", "....."}, // top-left corner
    {".....", "....#", "....#", "...+#", ".####"}, // bottom-right corner
    {"#.#.#", ".#.#.", "#...#", ".#.#.", "#.#.#"}, // checker
    {"#####", "..#..", ".....", "..+..", "..+.."}, // tee
    {"#....", ".#...", ".....", "...#.", "....#"}, // diagonal
    {"....#", "...#.", ".....", ".#...", "#...."}, // anti-diagonal
};

const std::vector<std::string>& animal_names() {
    static const std::vector<std::string> names = {
        "fox",    "wolf",  "deer",   "lynx",   "otter",  "boar",
        "hare",   "crane", "heron",  "ibex",   "marmot", "badger",
        "stoat",  "tapir", "serval", "civet",  "quokka", "fennec",
        "jackal", "bison", "moose",  "beaver", "gibbon", "pika"};
    return names;
}

double pattern_value(char c) {
    switch (c) {
        case '#': return 0.8;
        case '+': return 0.45;
        default: return 0.0;
    }
}

struct Transform {
    double sr, cr; // scale * sin/cos of rotation
    double tx, ty;
    Point apply(const Point& a, const Point& centroid, double span_px) const {
        const double x = (a.x - centroid.x) * span_px;
        const double y = (a.y - centroid.y) * span_px;
        return {cr * x - sr * y + tx, sr * x + cr * y + ty};
    }
};

Point layout_centroid(const std::vector<Point>& pts) {
    Point c{0, 0};
    for (const Point& p : pts) {
        c.x += p.x;
        c.y += p.y;
    }
    c.x /= static_cast<double>(pts.size());
    c.y /= static_cast<double>(pts.size());
    return c;
}

BBox dilated_bbox(const std::vector<Point>& pts) {
    BBox b{pts[0].x, pts[0].y, pts[0].x, pts[0].y};
    for (const Point& p : pts) {
        b.x0 = std::min(b.x0, p.x);
        b.y0 = std::min(b.y0, p.y);
        b.x1 = std::max(b.x1, p.x);
        b.y1 = std::max(b.y1, p.y);
    }
    const double dx = std::max(1.0, b.x1 - b.x0) * 0.05;
    const double dy = std::max(1.0, b.y1 - b.y0) * 0.05;
    b.x0 -= dx;
    b.x1 += dx;
    b.y0 -= dy;
    b.y1 += dy;
    if (b.x1 - b.x0 < 1.0) b.x1 = b.x0 + 1.0;
    if (b.y1 - b.y0 < 1.0) b.y1 = b.y0 + 1.0;
    return b;
}

void stamp_pattern(Tensor& image, int pattern, int cx, int cy) {
    const Mat st = pattern_stamp(pattern);
    const int S = image.shape[1];
    for (int dy = -kStampRadius; dy <= kStampRadius; ++dy)
        for (int dx = -kStampRadius; dx <= kStampRadius; ++dx) {
            const int px = cx + dx, py = cy + dy;
            if (px < 0 || px >= S || py < 0 || py >= S) continue;
            double& v = image.at(0, py, px);
            v = std::max(v, st(dy + kStampRadius, dx + kStampRadius));
        }
}

} // namespace

const std::vector<VocabEntry>& vocabulary() {
    static const std::vector<VocabEntry> vocab = {
        {"left eye", {0.14, 0.10}, 0},   {"forehead", {0.50, 0.10}, 2},
        {"right eye", {0.86, 0.10}, 1},  {"left ear", {0.14, 0.37}, 4},
        {"nose", {0.50, 0.37}, 3},       {"right ear", {0.86, 0.37}, 5},
        {"throat", {0.14, 0.64}, 7},     {"chin", {0.50, 0.64}, 6},
        {"spine mid", {0.86, 0.64}, 8},  {"left paw", {0.14, 0.91}, 10},
        {"tail base", {0.50, 0.91}, 9},  {"right paw", {0.86, 0.91}, 11},
    };
    return vocab;
}

Mat pattern_stamp(int pattern_id) {
    if (pattern_id < 0 || pattern_id >= 12)
        throw ConfigError("pattern_stamp: unknown pattern id " +
                          std::to_string(pattern_id));
    Mat m(5, 5);
    for (int r = 0; r < 5; ++r)
        for (int c = 0; c < 5; ++c) {
            // radial cone keeps the center the local maximum even after
            // bilinear warps; the shape lives in the skirt
            const double rr = std::hypot(r - kStampRadius, c - kStampRadius);
            const double cone = std::max(0.0, 1.0 - 0.38 * rr);
            const double shape =
                0.45 * pattern_value(kPatterns[pattern_id][r][c]);
            m(r, c) = std::max(cone, shape);
        }
    m(kStampRadius, kStampRadius) = 1.0;
    return m;
}

World gen_world(int n_species, int cats_per_species, std::uint64_t seed) {
    const auto& vocab = vocabulary();
    if (cats_per_species < 2)
        throw ConfigError("gen_world: species need at least 2 categories");
    if (cats_per_species > static_cast<int>(vocab.size()))
        throw ConfigError("gen_world: vocabulary has only " +
                          std::to_string(vocab.size()) +
                          " names, cannot draw " +
                          std::to_string(cats_per_species));
    if (n_species < 1 || n_species > static_cast<int>(animal_names().size()))
        throw ConfigError("gen_world: species count out of range");

    World world;
    for (int s = 0; s < n_species; ++s) {
        SplitMix64 rng(mix_seed(seed, 0x776f726cULL, static_cast<std::uint64_t>(s)));
        SpeciesTemplate tmpl;
        tmpl.name = animal_names()[static_cast<std::size_t>(s)] + " body";

        std::vector<int> idx(vocab.size());
        std::iota(idx.begin(), idx.end(), 0);
        for (std::size_t i = idx.size() - 1; i > 0; --i)
            std::swap(idx[i], idx[rng.below(i + 1)]);
        idx.resize(static_cast<std::size_t>(cats_per_species));
        std::sort(idx.begin(), idx.end()); // canonical category order

        // jitter the canonical anchors; retry until the chosen anchors stay
        // separated enough for unambiguous stamps
        std::vector<Point> layout;
        for (int attempt = 0; attempt < 100; ++attempt) {
            layout.clear();
            for (int vi : idx) {
                Point a = vocab[static_cast<std::size_t>(vi)].anchor;
                a.x = std::clamp(a.x + rng.uniform(-0.02, 0.02), 0.05, 0.95);
                a.y = std::clamp(a.y + rng.uniform(-0.02, 0.02), 0.05, 0.95);
                layout.push_back(a);
            }
            double min_sep = 10.0;
            for (std::size_t i = 0; i < layout.size(); ++i)
                for (std::size_t j = i + 1; j < layout.size(); ++j)
                    min_sep = std::min(min_sep,
                                       std::hypot(layout[i].x - layout[j].x,
                                                  layout[i].y - layout[j].y));
            if (min_sep >= kMinAnchorSep) break;
        }

        for (std::size_t i = 0; i < idx.size(); ++i) {
            const VocabEntry& v = vocab[static_cast<std::size_t>(idx[i])];
            tmpl.categories.push_back(v.name);
            tmpl.base_layout.push_back(layout[i]);
            tmpl.render_style.push_back(v.pattern);
        }
        world.push_back(std::move(tmpl));
    }
    return world;
}

Sample render_sample(const SpeciesTemplate& tmpl, std::uint64_t instance_seed,
                     int image_size) {
    if (image_size < 32)
        throw ConfigError("render_sample: image size must be >= 32");
    const int S = image_size;
    SplitMix64 rng(mix_seed(instance_seed, fnv1a64(tmpl.name)));

    double scale = rng.uniform(0.8, 1.2);
    const double theta = rng.uniform(-M_PI / 6.0, M_PI / 6.0);
    const double span_px = kLayoutSpan * S;
    const Point centroid = layout_centroid(tmpl.base_layout);

    Transform t{scale * std::sin(theta), scale * std::cos(theta), 0.0, 0.0};
    // Bounding box of the rotated, centroid-centered layout; shrink the
    // scale if the draw cannot fit, then draw a feasible translation.
    auto bounds = [&](const Transform& tr) {
        BBox b{1e9, 1e9, -1e9, -1e9};
        for (const Point& a : tmpl.base_layout) {
            const Point p = tr.apply(a, centroid, span_px);
            b.x0 = std::min(b.x0, p.x);
            b.y0 = std::min(b.y0, p.y);
            b.x1 = std::max(b.x1, p.x);
            b.y1 = std::max(b.y1, p.y);
        }
        return b;
    };
    BBox b = bounds(t);
    const double limit = S - 1 - 2 * kFrameMargin;
    const double span = std::max(b.x1 - b.x0, b.y1 - b.y0);
    if (span > limit) {
        const double shrink = limit / span;
        scale *= shrink;
        t.sr *= shrink;
        t.cr *= shrink;
        b = bounds(t);
    }
    const double tx_lo = kFrameMargin - b.x0, tx_hi = S - 1 - kFrameMargin - b.x1;
    const double ty_lo = kFrameMargin - b.y0, ty_hi = S - 1 - kFrameMargin - b.y1;
    t.tx = rng.uniform(tx_lo, std::max(tx_lo, tx_hi));
    t.ty = rng.uniform(ty_lo, std::max(ty_lo, ty_hi));

    Sample s;
    s.species = tmpl.name;
    s.image = Tensor::zeros({1, S, S});
    for (int i = 0; i < S * S; ++i)
        s.image.data[i] = rng.uniform(0.0, kNoiseLevel);

    const std::size_t n = tmpl.categories.size();
    for (std::size_t i = 0; i < n; ++i) {
        const Point raw = t.apply(tmpl.base_layout[i], centroid, span_px);
        // ground truth is the pixel the pattern is actually stamped on
        const Point p{static_cast<double>(std::lround(raw.x)),
                      static_cast<double>(std::lround(raw.y))};
        const bool visible = rng.uniform() >= kInvisibleRate;
        s.kps.coords.push_back(p);
        s.kps.visible.push_back(visible ? 1 : 0);
        if (visible)
            stamp_pattern(s.image, tmpl.render_style[i],
                          static_cast<int>(p.x), static_cast<int>(p.y));
        s.prompts.push_back(build_prompt(tmpl.name, tmpl.categories[i]));
    }
    s.kps.bbox = dilated_bbox(s.kps.coords);
    return s;
}

AugmentDraw augment_draw(std::uint64_t seed) {
    SplitMix64 rng(mix_seed(seed, 0x61756721ULL));
    AugmentDraw d;
    d.scale = 1.0 + rng.uniform(-0.15, 0.15);
    d.theta = rng.uniform(-M_PI / 12.0, M_PI / 12.0);
    return d;
}

Sample augment(const Sample& in, std::uint64_t seed) {
    return apply_augment(in, augment_draw(seed));
}

Sample apply_augment(const Sample& in, const AugmentDraw& draw) {
    const double scale = draw.scale;
    const double theta = draw.theta;
    const int S = in.image.shape[1];
    const double c = (S - 1) / 2.0;
    const double cs = std::cos(theta), sn = std::sin(theta);

    Sample out;
    out.species = in.species;
    out.prompts = in.prompts;
    out.image = Tensor::zeros({1, S, S});

    // inverse-warp with bilinear sampling
    const double inv = 1.0 / scale;
    for (int y = 0; y < S; ++y)
        for (int x = 0; x < S; ++x) {
            const double dx = x - c, dy = y - c;
            const double sx = c + inv * (cs * dx + sn * dy);
            const double sy = c + inv * (-sn * dx + cs * dy);
            if (sx < 0 || sy < 0 || sx > S - 1 || sy > S - 1) continue;
            const int x0 = static_cast<int>(std::floor(sx));
            const int y0 = static_cast<int>(std::floor(sy));
            const int x1 = std::min(x0 + 1, S - 1);
            const int y1 = std::min(y0 + 1, S - 1);
            const double fx = sx - x0, fy = sy - y0;
            out.image.at(0, y, x) =
                (1 - fy) * ((1 - fx) * in.image.at(0, y0, x0) +
                            fx * in.image.at(0, y0, x1)) +
                fy * ((1 - fx) * in.image.at(0, y1, x0) +
                      fx * in.image.at(0, y1, x1));
        }

    for (std::size_t i = 0; i < in.kps.coords.size(); ++i) {
        const Point& p = in.kps.coords[i];
        const double dx = p.x - c, dy = p.y - c;
        Point q{c + scale * (cs * dx - sn * dy), c + scale * (sn * dx + cs * dy)};
        bool vis = in.kps.visible[i] != 0;
        if (q.x < 0 || q.y < 0 || q.x > S - 1 || q.y > S - 1) vis = false;
        out.kps.coords.push_back(q);
        out.kps.visible.push_back(vis ? 1 : 0);
    }
    out.kps.bbox = dilated_bbox(out.kps.coords);
    return out;
}

std::vector<SplitPlan> make_splits(const World& world, char setting,
                                   int n_folds, std::uint64_t seed) {
    if (world.empty()) throw ConfigError("make_splits: empty world");
    if (n_folds < 1) throw ConfigError("make_splits: need >= 1 fold");
    std::vector<SplitPlan> plans;

    if (setting == 'A') {
        for (const auto& t : world)
            if (t.categories.size() < 2)
                throw ConfigError("make_splits: species " + t.name +
                                  " has too few categories for setting A");
        for (int f = 1; f <= n_folds; ++f) {
            SplitPlan p;
            p.setting = 'A';
            p.fold = f;
            for (const auto& t : world) {
                SplitMix64 rng(mix_seed(seed, fnv1a64(t.name),
                                        static_cast<std::uint64_t>(f)));
                std::vector<std::string> cats = t.categories;
                for (std::size_t i = cats.size() - 1; i > 0; --i)
                    std::swap(cats[i], cats[rng.below(i + 1)]);
                const int n_test = std::max(
                    1, static_cast<int>(std::lround(0.3 * static_cast<double>(cats.size()))));
                p.test_categories[t.name] =
                    std::vector<std::string>(cats.begin(), cats.begin() + n_test);
                p.train_categories[t.name] =
                    std::vector<std::string>(cats.begin() + n_test, cats.end());
            }
            plans.push_back(std::move(p));
        }
        return plans;
    }

    if (setting == 'B') {
        const int n = static_cast<int>(world.size());
        if (n < 5)
            throw ConfigError("make_splits: setting B needs >= 5 species");
        const int n_test = std::max(
            1, static_cast<int>(std::ceil(0.15 * static_cast<double>(n))));
        std::vector<int> perm(static_cast<std::size_t>(n));
        std::iota(perm.begin(), perm.end(), 0);
        SplitMix64 rng(mix_seed(seed, 0x73657442ULL));
        for (std::size_t i = perm.size() - 1; i > 0; --i)
            std::swap(perm[i], perm[rng.below(i + 1)]);
        for (int f = 1; f <= n_folds; ++f) {
            SplitPlan p;
            p.setting = 'B';
            p.fold = f;
            std::vector<char> is_test(static_cast<std::size_t>(n), 0);
            for (int j = 0; j < n_test; ++j)
                is_test[static_cast<std::size_t>(
                    perm[static_cast<std::size_t>(((f - 1) * n_test + j) % n)])] = 1;
            for (int i = 0; i < n; ++i) {
                if (is_test[static_cast<std::size_t>(i)])
                    p.test_species.push_back(world[static_cast<std::size_t>(i)].name);
                else
                    p.train_species.push_back(world[static_cast<std::size_t>(i)].name);
            }
            plans.push_back(std::move(p));
        }
        return plans;
    }

    throw ConfigError("make_splits: setting must be 'A' or 'B'");
}

void write_pgm(const Tensor& image, const std::string& path) {
    if (image.rank() != 3 || image.shape[0] != 1)
        throw ConfigError("write_pgm: image must be 1xHxW");
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw DataError("write_pgm: cannot write " + path);
    const int h = image.shape[1], w = image.shape[2];
    os << "P5\n" << w << " " << h << "\n255\n";
    for (std::int64_t i = 0; i < image.numel(); ++i) {
        const double v = std::clamp(image.data[i], 0.0, 1.0);
        const unsigned char b = static_cast<unsigned char>(std::lround(v * 255.0));
        os.write(reinterpret_cast<const char*>(&b), 1);
    }
    if (!os) throw DataError("write_pgm: write failed for " + path);
}

Tensor read_pgm(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("read_pgm: cannot open " + path);
    std::string magic;
    is >> magic;
    if (magic != "P5") throw ParseError("read_pgm: not a binary PGM: " + path);
    auto next_int = [&is, &path]() {
        // skip whitespace and '#' comments
        while (true) {
            const int c = is.peek();
            if (c == '#') {
                std::string line;
                std::getline(is, line);
            } else if (std::isspace(c)) {
                is.get();
            } else {
                break;
            }
        }
        long v;
        if (!(is >> v)) throw ParseError("read_pgm: bad header in " + path);
        return v;
    };
    const long w = next_int(), h = next_int(), maxval = next_int();
    if (w <= 0 || h <= 0 || maxval <= 0 || maxval > 255)
        throw ParseError("read_pgm: unsupported geometry in " + path);
    is.get(); // single whitespace after maxval
    Tensor img = Tensor::zeros({1, static_cast<int>(h), static_cast<int>(w)});
    std::vector<unsigned char> buf(static_cast<std::size_t>(w * h));
    is.read(reinterpret_cast<char*>(buf.data()),
            static_cast<std::streamsize>(buf.size()));
    if (static_cast<std::size_t>(is.gcount()) != buf.size())
        throw ParseError("read_pgm: truncated pixel data in " + path);
    for (std::size_t i = 0; i < buf.size(); ++i)
        img.data[static_cast<std::int64_t>(i)] =
            static_cast<double>(buf[i]) / static_cast<double>(maxval);
    return img;
}

namespace {

json world_to_json(const World& world, int image_size, std::uint64_t seed) {
    json j;
    j["image_size"] = image_size;
    j["seed"] = seed;
    j["species"] = json::array();
    for (const auto& t : world) {
        json s;
        s["name"] = t.name;
        s["categories"] = t.categories;
        json layout = json::array();
        for (const Point& p : t.base_layout) layout.push_back({p.x, p.y});
        s["layout"] = layout;
        s["styles"] = t.render_style;
        j["species"].push_back(std::move(s));
    }
    return j;
}

json split_to_json(const SplitPlan& p) {
    json j;
    j["setting"] = std::string(1, p.setting);
    j["fold"] = p.fold;
    if (p.setting == 'B') {
        j["train_species"] = p.train_species;
        j["test_species"] = p.test_species;
    } else {
        j["train_categories"] = p.train_categories;
        j["test_categories"] = p.test_categories;
    }
    return j;
}

SplitPlan split_from_json(const json& j) {
    SplitPlan p;
    const std::string s = j.at("setting").get<std::string>();
    if (s != "A" && s != "B") throw ParseError("split: bad setting " + s);
    p.setting = s[0];
    p.fold = j.at("fold").get<int>();
    if (p.setting == 'B') {
        p.train_species = j.at("train_species").get<std::vector<std::string>>();
        p.test_species = j.at("test_species").get<std::vector<std::string>>();
    } else {
        p.train_categories =
            j.at("train_categories")
                .get<std::map<std::string, std::vector<std::string>>>();
        p.test_categories =
            j.at("test_categories")
                .get<std::map<std::string, std::vector<std::string>>>();
    }
    return p;
}

std::string sample_id(int i) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%04d", i);
    return buf;
}

} // namespace

void write_dataset(const std::string& dir, const World& world, int n_samples,
                   int image_size, std::uint64_t seed, int n_folds) {
    if (n_samples <= 0) throw ConfigError("write_dataset: need > 0 samples");
    fs::create_directories(fs::path(dir) / "samples");
    fs::create_directories(fs::path(dir) / "splits");

    {
        std::ofstream os(fs::path(dir) / "world.json");
        os << world_to_json(world, image_size, seed).dump(2) << "\n";
    }

    for (int i = 0; i < n_samples; ++i) {
        const SpeciesTemplate& tmpl =
            world[static_cast<std::size_t>(i) % world.size()];
        Sample s = render_sample(tmpl, mix_seed(seed, 0x73616d70ULL,
                                                static_cast<std::uint64_t>(i)),
                                 image_size);
        const std::string id = sample_id(i);
        write_pgm(s.image, (fs::path(dir) / "samples" / (id + ".pgm")).string());
        json meta;
        meta["species"] = s.species;
        json kps = json::array();
        for (std::size_t k = 0; k < s.kps.coords.size(); ++k)
            kps.push_back({{"category", s.prompts[k].keypoint_category},
                           {"x", s.kps.coords[k].x},
                           {"y", s.kps.coords[k].y},
                           {"visible", s.kps.visible[k] != 0}});
        meta["keypoints"] = std::move(kps);
        meta["bbox"] = {s.kps.bbox.x0, s.kps.bbox.y0, s.kps.bbox.x1, s.kps.bbox.y1};
        std::ofstream os(fs::path(dir) / "samples" / (id + ".json"));
        os << meta.dump(2) << "\n";
    }

    for (char setting : {'A', 'B'}) {
        if (setting == 'B' && world.size() < 5) continue;
        auto plans = make_splits(world, setting, n_folds, seed);
        for (const auto& p : plans) {
            std::ofstream os(fs::path(dir) / "splits" /
                             (std::string("setting") + p.setting + "_fold" +
                              std::to_string(p.fold) + ".json"));
            os << split_to_json(p).dump(2) << "\n";
        }
    }
}

const SpeciesTemplate& Dataset::species(const std::string& name) const {
    for (const auto& t : world)
        if (t.name == name) return t;
    throw LookupError("dataset: unknown species " + name);
}

Dataset load_dataset(const std::string& dir) {
    Dataset d;
    std::ifstream ws(fs::path(dir) / "world.json");
    if (!ws) throw DataError("load_dataset: missing world.json in " + dir);
    json wj;
    try {
        ws >> wj;
    } catch (const json::exception& e) {
        throw ParseError(std::string("load_dataset: world.json: ") + e.what());
    }
    d.image_size = wj.at("image_size").get<int>();
    d.seed = wj.at("seed").get<std::uint64_t>();
    for (const auto& sj : wj.at("species")) {
        SpeciesTemplate t;
        t.name = sj.at("name").get<std::string>();
        t.categories = sj.at("categories").get<std::vector<std::string>>();
        for (const auto& pj : sj.at("layout"))
            t.base_layout.push_back({pj.at(0).get<double>(), pj.at(1).get<double>()});
        t.render_style = sj.at("styles").get<std::vector<int>>();
        d.world.push_back(std::move(t));
    }

    for (int i = 0;; ++i) {
        const fs::path img = fs::path(dir) / "samples" / (sample_id(i) + ".pgm");
        const fs::path meta = fs::path(dir) / "samples" / (sample_id(i) + ".json");
        if (!fs::exists(img)) break;
        Sample s;
        s.image = read_pgm(img.string());
        std::ifstream ms(meta);
        if (!ms) throw DataError("load_dataset: missing " + meta.string());
        json mj;
        try {
            ms >> mj;
        } catch (const json::exception& e) {
            throw ParseError("load_dataset: " + meta.string() + ": " + e.what());
        }
        s.species = mj.at("species").get<std::string>();
        for (const auto& kj : mj.at("keypoints")) {
            s.kps.coords.push_back(
                {kj.at("x").get<double>(), kj.at("y").get<double>()});
            s.kps.visible.push_back(kj.at("visible").get<bool>() ? 1 : 0);
            s.prompts.push_back(
                build_prompt(s.species, kj.at("category").get<std::string>()));
        }
        const auto& bj = mj.at("bbox");
        s.kps.bbox = {bj.at(0).get<double>(), bj.at(1).get<double>(),
                      bj.at(2).get<double>(), bj.at(3).get<double>()};
        d.samples.push_back(std::move(s));
    }
    if (d.samples.empty())
        throw DataError("load_dataset: no samples found in " + dir);
    return d;
}

SplitPlan load_split(const std::string& dir, char setting, int fold) {
    const fs::path p = fs::path(dir) / "splits" /
                       (std::string("setting") + setting + "_fold" +
                        std::to_string(fold) + ".json");
    std::ifstream is(p);
    if (!is) throw DataError("load_split: missing " + p.string());
    json j;
    try {
        is >> j;
    } catch (const json::exception& e) {
        throw ParseError("load_split: " + p.string() + ": " + e.what());
    }
    return split_from_json(j);
}

} // namespace kdsm
