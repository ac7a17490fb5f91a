#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <set>

#include <kdsm/evalkit.hpp>
#include <kdsm/rng.hpp>
#include <kdsm/synthworld.hpp>

using namespace kdsm;

namespace {

// Per-pixel scan: brightest pixel within a window around the anchor.
Point window_argmax(const Tensor& img, const Point& anchor, int radius) {
    const int S = img.shape[1];
    const int cx = static_cast<int>(std::lround(anchor.x));
    const int cy = static_cast<int>(std::lround(anchor.y));
    double best = -1;
    Point at{0, 0};
    for (int y = std::max(0, cy - radius); y <= std::min(S - 1, cy + radius); ++y)
        for (int x = std::max(0, cx - radius); x <= std::min(S - 1, cx + radius); ++x)
            if (img.at(0, y, x) > best) {
                best = img.at(0, y, x);
                at = {static_cast<double>(x), static_cast<double>(y)};
            }
    return at;
}

// Non-learned matched filter: slide the 5x5 stamp, minimize SSD.
Point template_match(const Tensor& img, const Mat& stamp) {
    const int S = img.shape[1];
    double best = 1e18;
    Point at{0, 0};
    for (int cy = kStampRadius; cy < S - kStampRadius; ++cy)
        for (int cx = kStampRadius; cx < S - kStampRadius; ++cx) {
            double ssd = 0;
            for (int dy = -kStampRadius; dy <= kStampRadius; ++dy)
                for (int dx = -kStampRadius; dx <= kStampRadius; ++dx) {
                    const double d = img.at(0, cy + dy, cx + dx) -
                                     stamp(dy + kStampRadius, dx + kStampRadius);
                    ssd += d * d;
                }
            if (ssd < best) {
                best = ssd;
                at = {static_cast<double>(cx), static_cast<double>(cy)};
            }
        }
    return at;
}

// Same matcher restricted to a window around an expected position.
Point local_template_match(const Tensor& img, const Mat& stamp,
                           const Point& near, int radius) {
    const int S = img.shape[1];
    const int cx0 = static_cast<int>(std::lround(near.x));
    const int cy0 = static_cast<int>(std::lround(near.y));
    double best = 1e18;
    Point at{0, 0};
    for (int cy = std::max(kStampRadius, cy0 - radius);
         cy <= std::min(S - 1 - kStampRadius, cy0 + radius); ++cy)
        for (int cx = std::max(kStampRadius, cx0 - radius);
             cx <= std::min(S - 1 - kStampRadius, cx0 + radius); ++cx) {
            double ssd = 0;
            for (int dy = -kStampRadius; dy <= kStampRadius; ++dy)
                for (int dx = -kStampRadius; dx <= kStampRadius; ++dx) {
                    const double d = img.at(0, cy + dy, cx + dx) -
                                     stamp(dy + kStampRadius, dx + kStampRadius);
                    ssd += d * d;
                }
            if (ssd < best) {
                best = ssd;
                at = {static_cast<double>(cx), static_cast<double>(cy)};
            }
        }
    return at;
}

} // namespace

TEST_CASE("world generation is deterministic and shares patterns by name") {
    World a = gen_world(8, 6, 7);
    World b = gen_world(8, 6, 7);
    REQUIRE(a.size() == 8);
    for (std::size_t s = 0; s < a.size(); ++s) {
        CHECK(a[s].name == b[s].name);
        CHECK(a[s].categories == b[s].categories);
        CHECK(a[s].render_style == b[s].render_style);
        CHECK(a[s].categories.size() == 6);
        for (std::size_t i = 0; i < a[s].base_layout.size(); ++i) {
            CHECK(a[s].base_layout[i].x == b[s].base_layout[i].x);
            CHECK(a[s].base_layout[i].y == b[s].base_layout[i].y);
        }
    }
    // same category name -> same pattern id across species
    std::map<std::string, int> style;
    for (const auto& t : a)
        for (std::size_t i = 0; i < t.categories.size(); ++i) {
            auto it = style.find(t.categories[i]);
            if (it == style.end())
                style[t.categories[i]] = t.render_style[i];
            else
                CHECK(it->second == t.render_style[i]);
        }
    CHECK_THROWS_AS(gen_world(8, 13, 0), ConfigError);
    CHECK_THROWS_AS(gen_world(8, 1, 0), ConfigError);
}

TEST_CASE("synthetic vocabulary embeddings are injective") {
    const auto& vocab = vocabulary();
    std::vector<Eigen::VectorXd> embs;
    for (const auto& v : vocab) embs.push_back(synthetic_encode(v.name, 64, 0));
    embs.push_back(synthetic_encode(placeholder_prompt(), 64, 0));
    for (std::size_t i = 0; i < embs.size(); ++i)
        for (std::size_t j = i + 1; j < embs.size(); ++j)
            CHECK((embs[i] - embs[j]).norm() > 1e-6);
}

TEST_CASE("rendering is deterministic and keeps anchors in frame") {
    World w = gen_world(8, 6, 11);
    for (int i = 0; i < 8; ++i) {
        Sample a = render_sample(w[static_cast<std::size_t>(i)], 1000 + i, 32);
        Sample b = render_sample(w[static_cast<std::size_t>(i)], 1000 + i, 32);
        CHECK((a.image.data - b.image.data).cwiseAbs().maxCoeff() == 0.0);
        REQUIRE(a.kps.coords.size() == 6);
        for (const Point& p : a.kps.coords) {
            CHECK(p.x >= 0);
            CHECK(p.y >= 0);
            CHECK(p.x <= 31);
            CHECK(p.y <= 31);
        }
        for (std::size_t k = 0; k < a.kps.coords.size(); ++k) {
            CHECK(a.kps.bbox.x0 <= a.kps.coords[k].x);
            CHECK(a.kps.bbox.x1 >= a.kps.coords[k].x);
            CHECK(a.kps.bbox.y0 <= a.kps.coords[k].y);
            CHECK(a.kps.bbox.y1 >= a.kps.coords[k].y);
        }
    }
    CHECK_THROWS_AS(render_sample(w[0], 0, 16), ConfigError);
}

TEST_CASE("stamped pattern argmax lies within 1 px of the ground truth") {
    World w = gen_world(8, 6, 13);
    int checked = 0;
    for (int i = 0; i < 40; ++i) {
        const auto& tmpl = w[static_cast<std::size_t>(i % 8)];
        Sample s = render_sample(tmpl, 5000 + i, 32);
        for (std::size_t k = 0; k < s.kps.coords.size(); ++k) {
            if (!s.kps.visible[k]) continue;
            const Point am = window_argmax(s.image, s.kps.coords[k], 3);
            CHECK(std::hypot(am.x - s.kps.coords[k].x, am.y - s.kps.coords[k].y) <= 1.0);
            ++checked;
        }
    }
    CHECK(checked > 150);
}

TEST_CASE("augmentation bounds, identity, and keypoint consistency") {
    // draws stay inside the stated ranges
    for (std::uint64_t seed = 0; seed < 200; ++seed) {
        AugmentDraw d = augment_draw(seed);
        CHECK(d.scale >= 0.85);
        CHECK(d.scale <= 1.15);
        CHECK(std::abs(d.theta) <= M_PI / 12.0 + 1e-12);
    }

    World w = gen_world(4, 6, 17);
    Sample s = render_sample(w[0], 99, 32);

    // zero-jitter draw reproduces the sample exactly
    Sample ident = apply_augment(s, {1.0, 0.0});
    CHECK((ident.image.data - s.image.data).cwiseAbs().maxCoeff() == 0.0);
    for (std::size_t k = 0; k < s.kps.coords.size(); ++k) {
        CHECK(ident.kps.coords[k].x == doctest::Approx(s.kps.coords[k].x).epsilon(1e-12));
        CHECK(ident.kps.coords[k].y == doctest::Approx(s.kps.coords[k].y).epsilon(1e-12));
        CHECK(ident.kps.visible[k] == s.kps.visible[k]);
    }

    // after augmentation, re-detecting the stamped pattern lands within
    // 1 px of the transformed ground truth
    int checked = 0;
    for (std::uint64_t seed = 1; seed <= 30; ++seed) {
        Sample a = augment(s, seed);
        CHECK((a.image.data - augment(s, seed).image.data).cwiseAbs().maxCoeff() == 0.0);
        for (std::size_t k = 0; k < a.kps.coords.size(); ++k) {
            if (!a.kps.visible[k]) continue;
            const Point& p = a.kps.coords[k];
            if (p.x < 5 || p.y < 5 || p.x > 26 || p.y > 26) continue;
            const Point m = local_template_match(
                a.image, pattern_stamp(w[0].render_style[k]), p, 2);
            CHECK(std::hypot(m.x - p.x, m.y - p.y) <= 1.0);
            ++checked;
        }
    }
    CHECK(checked > 50);
}

TEST_CASE("splits: disjointness, rotation coverage, errors") {
    World w = gen_world(8, 6, 19);

    auto plansA = make_splits(w, 'A', 5, 3);
    REQUIRE(plansA.size() == 5);
    for (const auto& p : plansA) {
        CHECK(p.setting == 'A');
        for (const auto& t : w) {
            const auto& tr = p.train_categories.at(t.name);
            const auto& te = p.test_categories.at(t.name);
            CHECK(!tr.empty());
            CHECK(!te.empty());
            CHECK(tr.size() + te.size() == t.categories.size());
            std::set<std::string> inter;
            for (const auto& c : tr)
                if (std::find(te.begin(), te.end(), c) != te.end()) inter.insert(c);
            CHECK(inter.empty());
        }
    }

    auto plansB = make_splits(w, 'B', 5, 3);
    REQUIRE(plansB.size() == 5);
    std::set<std::string> covered;
    for (const auto& p : plansB) {
        CHECK(p.test_species.size() == 2); // ceil(0.15 * 8)
        CHECK(p.train_species.size() == 6);
        for (const auto& ts : p.test_species) {
            covered.insert(ts);
            CHECK(std::find(p.train_species.begin(), p.train_species.end(), ts) ==
                  p.train_species.end());
        }
    }
    CHECK(covered.size() == 8); // every species novel in at least one fold

    World tiny = gen_world(3, 4, 2);
    CHECK_THROWS_AS(make_splits(tiny, 'B', 5, 0), ConfigError);
    CHECK_THROWS_AS(make_splits(w, 'C', 5, 0), ConfigError);
}

TEST_CASE("pgm round trip") {
    World w = gen_world(2, 4, 23);
    Sample s = render_sample(w[0], 7, 32);
    write_pgm(s.image, "rt.pgm");
    Tensor r = read_pgm("rt.pgm");
    REQUIRE(r.shape == s.image.shape);
    CHECK((r.data - s.image.data).cwiseAbs().maxCoeff() <= 0.5 / 255.0 + 1e-12);
    // quantization is idempotent: a second trip is lossless
    write_pgm(r, "rt2.pgm");
    Tensor r2 = read_pgm("rt2.pgm");
    CHECK((r2.data - r.data).cwiseAbs().maxCoeff() == 0.0);
    std::remove("rt.pgm");
    std::remove("rt2.pgm");
    CHECK_THROWS_AS(read_pgm("missing_file.pgm"), DataError);
}

TEST_CASE("dataset write/load round trip") {
    namespace fs = std::filesystem;
    const std::string dir = "ds_test";
    World w = gen_world(5, 4, 29);
    write_dataset(dir, w, 10, 32, 29, 2);
    Dataset d = load_dataset(dir);
    CHECK(d.image_size == 32);
    CHECK(d.world.size() == 5);
    REQUIRE(d.samples.size() == 10);
    // loaded sample equals the in-memory render up to PGM quantization
    Sample ref = render_sample(w[0], mix_seed(29, 0x73616d70ULL, 0), 32);
    CHECK((d.samples[0].image.data - ref.image.data).cwiseAbs().maxCoeff() <=
          0.5 / 255.0 + 1e-12);
    CHECK(d.samples[0].species == ref.species);
    REQUIRE(d.samples[0].kps.coords.size() == ref.kps.coords.size());
    for (std::size_t k = 0; k < ref.kps.coords.size(); ++k) {
        CHECK(d.samples[0].kps.coords[k].x == ref.kps.coords[k].x);
        CHECK(d.samples[0].kps.coords[k].y == ref.kps.coords[k].y);
    }
    SplitPlan p = load_split(dir, 'B', 1);
    CHECK(p.setting == 'B');
    CHECK(p.test_species.size() == 1); // ceil(0.15*5)
    SplitPlan pa = load_split(dir, 'A', 2);
    CHECK(pa.fold == 2);
    fs::remove_all(dir);
}

TEST_CASE("learnability floor: template matcher reaches PCK@0.2 >= 0.95") {
    World w = gen_world(8, 6, 31);
    FoldAccumulator acc;
    for (int i = 0; i < 48; ++i) {
        const auto& tmpl = w[static_cast<std::size_t>(i % 8)];
        Sample s = render_sample(tmpl, 40000 + i, 32);
        std::vector<DecodedKeypoint> preds;
        for (std::size_t k = 0; k < s.kps.coords.size(); ++k) {
            DecodedKeypoint d;
            if (s.kps.visible[k]) {
                const Point m =
                    template_match(s.image, pattern_stamp(tmpl.render_style[k]));
                d.x = m.x;
                d.y = m.y;
                d.score = 1.0;
                d.valid = true;
            }
            preds.push_back(d);
        }
        acc.add(preds, s.kps);
    }
    CHECK(acc.keypoints() > 200);
    CHECK(acc.pck(0.2) >= 0.95);
}
