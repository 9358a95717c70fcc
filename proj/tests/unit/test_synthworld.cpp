#include <cmath>
#include <map>
#include <set>

#include <gtest/gtest.h>

#include "driftlab/gradcore/error.hpp"
#include "driftlab/synthworld/world.hpp"
#include "support.hpp"

using namespace dlab;

namespace {

/// Test-side sRGB -> xy conversion (IEC 61966-2-1 with D65 primaries).
std::pair<double, double> oracle_xy(double r, double g, double b) {
    auto lin = [](double v) { return v <= 0.04045 ? v / 12.92 : std::pow((v + 0.055) / 1.055, 2.4); };
    const double R = lin(r), G = lin(g), B = lin(b);
    const double X = 0.4124 * R + 0.3576 * G + 0.1805 * B;
    const double Y = 0.2126 * R + 0.7152 * G + 0.0722 * B;
    const double Z = 0.0193 * R + 0.1192 * G + 0.9505 * B;
    return {X / (X + Y + Z), Y / (X + Y + Z)};
}

WorldConfig small_world() {
    WorldConfig c;
    c.train_per_class = 6;
    c.test_per_class = 3;
    return c;
}

}  // namespace

TEST(Render, ZeroJitterIgnoresSeed) {
    ClassSpec spec;
    spec.shape = ShapeKind::triangle;
    spec.hue = 120;
    spec.jitter = {0, 0, 0, 0.5, 0.5};
    spec.fixed_background = Hsv{30, 0.1, 0.5};
    const Tensor a = render_class_image(spec, 1);
    for (std::uint64_t seed : {2u, 99u, 123456u}) EXPECT_EQ(a, render_class_image(spec, seed));
}

TEST(Render, DeterministicRangeCoverageAndJitter) {
    const auto classes = make_base_classes(WorldConfig{});
    ASSERT_EQ(classes.size(), 12u);
    for (const auto& spec : classes) {
        for (std::uint64_t seed = 0; seed < 25; ++seed) {
            const Tensor img = render_class_image(spec, seed);
            ASSERT_EQ(img.shape(), (Shape{16, 16, 3}));
            EXPECT_EQ(img, render_class_image(spec, seed));
            for (double v : img.data()) {
                ASSERT_GE(v, 0.0);
                ASSERT_LE(v, 1.0);
            }
            const double cover = shape_coverage(spec, seed);
            EXPECT_GE(cover, 0.10) << spec.name << " seed " << seed;
            EXPECT_LE(cover, 0.60) << spec.name << " seed " << seed;
        }
        EXPECT_NE(render_class_image(spec, 3), render_class_image(spec, 4)) << spec.name;
    }
}

TEST(Render, RedCircleForegroundSitsNearTheRedPrimary) {
    ClassSpec spec;
    spec.shape = ShapeKind::circle;
    spec.hue = 0;
    const Tensor img = render_class_image(spec, 7);
    // Mode over 0.02-wide xy cells, restricted to saturated pixels.
    std::map<std::pair<int, int>, int> cells;
    std::map<std::pair<int, int>, std::pair<double, double>> centre;
    for (std::size_t p = 0; p < 256; ++p) {
        const double r = img[3 * p], g = img[3 * p + 1], b = img[3 * p + 2];
        const double mx = std::max({r, g, b}), mn = std::min({r, g, b});
        if (mx <= 0 || (mx - mn) / mx < 0.5) continue;
        const auto [x, y] = oracle_xy(r, g, b);
        const std::pair<int, int> key{static_cast<int>(x / 0.02), static_cast<int>(y / 0.02)};
        ++cells[key];
        centre[key] = {x, y};
    }
    ASSERT_FALSE(cells.empty());
    auto best = cells.begin();
    for (auto it = cells.begin(); it != cells.end(); ++it)
        if (it->second > best->second) best = it;
    const auto [x, y] = centre[best->first];
    EXPECT_LT(std::hypot(x - 0.64, y - 0.33), 0.05);
}

TEST(Render, SpecValidation) {
    ClassSpec ok;
    EXPECT_NO_THROW(ok.validate());
    ClassSpec bad_hue = ok;
    bad_hue.hue = 360.0;
    EXPECT_THROW(bad_hue.validate(), ConfigError);
    ClassSpec negative = ok;
    negative.jitter.scale = -0.1;
    EXPECT_THROW(negative.validate(), ConfigError);
    ClassSpec too_big = ok;
    too_big.radius = 9.0;
    EXPECT_THROW(too_big.validate(), ConfigError);
}

TEST(World, DefaultConfigSizes) {
    const ConceptWorld w = build_world(WorldConfig{});
    EXPECT_EQ(w.classes.size(), 12u);
    EXPECT_EQ(w.train.size(), 12u * 500);
    EXPECT_EQ(w.test.size(), 12u * 40);
    ASSERT_EQ(w.concepts.size(), 4u);
    for (const auto& c : w.concepts) {
        EXPECT_EQ(w.shots.at(c.concept_id).size(), 5u);
        EXPECT_EQ(c.shot_count, 5);
        EXPECT_GE(c.rare_token, 12);
        for (const auto& shot : w.shots.at(c.concept_id)) EXPECT_EQ(shot.label, c.rare_token);
    }
}

TEST(World, TrainTestDisjointAndBalanced) {
    const ConceptWorld w = build_world(small_world());
    std::set<std::pair<int, std::uint64_t>> train;
    for (const auto& ex : w.train) train.insert({ex.label, ex.seed});
    std::map<int, int> counts;
    for (const auto& ex : w.test) {
        EXPECT_FALSE(train.contains({ex.label, ex.seed}));
        ++counts[ex.label];
    }
    ASSERT_EQ(counts.size(), 12u);
    for (const auto& [label, n] : counts) EXPECT_EQ(n, 3) << label;
    std::set<int> rare;
    for (const auto& c : w.concepts) {
        EXPECT_TRUE(rare.insert(c.rare_token).second);
        EXPECT_GE(c.rare_token, static_cast<int>(w.classes.size()));
    }
}

TEST(World, BitReproducible) {
    const ConceptWorld a = build_world(small_world()), b = build_world(small_world());
    EXPECT_EQ(a.manifest(), b.manifest());
    ASSERT_EQ(a.train.size(), b.train.size());
    for (std::size_t i = 0; i < a.train.size(); ++i) EXPECT_EQ(a.train[i].image, b.train[i].image);
    for (const auto& [id, shots] : a.shots)
        for (std::size_t i = 0; i < shots.size(); ++i) EXPECT_EQ(shots[i].image, b.shots.at(id)[i].image);
}

TEST(World, ConfigErrors) {
    WorldConfig overlap = small_world();
    overlap.test_seed_base = 3;
    EXPECT_THROW(build_world(overlap), ConfigError);
    WorldConfig few = small_world();
    few.hues = {0.0};
    EXPECT_THROW(build_world(few), ConfigError);
    WorldConfig shots = small_world();
    shots.shot_count = 6;
    EXPECT_THROW(build_world(shots), ConfigError);
    shots.shot_count = 2;
    EXPECT_THROW(build_world(shots), ConfigError);
}

TEST(Neighbors, RankOneIsSuperclassAndListIsSortedBySimilarity) {
    const ConceptWorld w = build_world(small_world());
    for (const auto& c : w.concepts) {
        const auto& list = w.neighbors.at(c.concept_id);
        ASSERT_GE(list.size(), 3u);
        EXPECT_EQ(list.front(), c.superclass);
        EXPECT_EQ(superclass_neighbors(w, c.concept_id, 1), std::vector<int>{c.superclass});
        for (std::size_t i = 1; i < list.size(); ++i)
            EXPECT_GE(recipe_similarity(c.recipe, w.classes[static_cast<std::size_t>(list[i - 1])]),
                      recipe_similarity(c.recipe, w.classes[static_cast<std::size_t>(list[i])]));
        EXPECT_THROW(superclass_neighbors(w, c.concept_id, list.size() + 1), ConfigError);
    }
    EXPECT_THROW(superclass_neighbors(w, 999, 1), TokenError);
}

TEST(Neighbors, YellowStarPrefersNearbyHuesAndPointyShapes) {
    const ConceptWorld w = build_world(small_world());
    const ConceptSpec& star = w.concept_by_id(0);
    ASSERT_EQ(star.name, "yellow_star");
    // Hue 60 is 60 degrees from both red and green and 180 from blue.
    for (int id : superclass_neighbors(w, 0, 3)) {
        const auto& cls = w.classes[static_cast<std::size_t>(id)];
        EXPECT_NE(cls.hue, 240.0) << cls.name;
        EXPECT_TRUE(cls.shape == ShapeKind::cross || cls.shape == ShapeKind::triangle) << cls.name;
    }
    ClassSpec cross;
    cross.shape = ShapeKind::cross;
    cross.hue = 0;
    EXPECT_NEAR(recipe_similarity(star.recipe, cross), 0.6 + 0.5 * (1 + 0.5), 1e-12);
}
