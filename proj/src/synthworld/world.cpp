#include "driftlab/synthworld/world.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "driftlab/gradcore/error.hpp"

namespace dlab {

std::vector<ConceptRecipe> WorldConfig::default_concepts() {
    return {{"yellow_star", ShapeKind::star, 60.0},
            {"yellow_circle", ShapeKind::circle, 60.0},
            {"cyan_triangle", ShapeKind::triangle, 180.0},
            {"magenta_square", ShapeKind::square, 300.0}};
}

nlohmann::json ConceptSpec::to_json() const {
    return {{"concept_id", concept_id}, {"name", name},          {"recipe", recipe.to_json()},
            {"shot_count", shot_count}, {"rare_token", rare_token}, {"superclass", superclass}};
}

nlohmann::json WorldConfig::to_json() const {
    nlohmann::json j;
    for (auto s : shapes) j["shapes"].push_back(to_string(s));
    j["hues"] = hues;
    j["train_per_class"] = train_per_class;
    j["test_per_class"] = test_per_class;
    j["train_seed_base"] = train_seed_base;
    j["test_seed_base"] = test_seed_base;
    j["concept_seed_base"] = concept_seed_base;
    j["concepts"] = nlohmann::json::array();
    for (const auto& c : concepts) j["concepts"].push_back({{"name", c.name}, {"shape", to_string(c.shape)}, {"hue", c.hue}});
    j["shot_count"] = shot_count;
    j["rare_token_base"] = rare_token_base;
    j["rare_token_count"] = rare_token_count;
    j["shot_background"] = {shot_background.hue, shot_background.saturation, shot_background.value};
    j["image_size"] = image_size;
    return j;
}

WorldConfig WorldConfig::from_json(const nlohmann::json& j) {
    WorldConfig c;
    c.shapes.clear();
    for (const auto& s : j.at("shapes")) c.shapes.push_back(parse_shape(s.get<std::string>()));
    c.hues = j.at("hues").get<std::vector<double>>();
    c.train_per_class = j.at("train_per_class");
    c.test_per_class = j.at("test_per_class");
    c.train_seed_base = j.at("train_seed_base");
    c.test_seed_base = j.at("test_seed_base");
    c.concept_seed_base = j.at("concept_seed_base");
    c.concepts.clear();
    for (const auto& r : j.at("concepts"))
        c.concepts.push_back({r.at("name"), parse_shape(r.at("shape").get<std::string>()), r.at("hue")});
    c.shot_count = j.at("shot_count");
    c.rare_token_base = j.at("rare_token_base");
    c.rare_token_count = j.at("rare_token_count");
    const auto bg = j.at("shot_background");
    c.shot_background = {bg.at(0), bg.at(1), bg.at(2)};
    c.image_size = j.at("image_size");
    return c;
}

const ConceptSpec& ConceptWorld::concept_by_id(int concept_id) const {
    for (const auto& c : concepts)
        if (c.concept_id == concept_id) return c;
    throw TokenError("unknown concept id " + std::to_string(concept_id));
}

nlohmann::json ConceptWorld::manifest() const {
    nlohmann::json j;
    j["config"] = config.to_json();
    for (const auto& c : classes) j["classes"].push_back(c.to_json());
    j["concepts"] = nlohmann::json::array();
    for (const auto& c : concepts) j["concepts"].push_back(c.to_json());
    j["seeds"] = {
        {"train", {config.train_seed_base, config.train_seed_base + config.train_per_class}},
        {"test", {config.test_seed_base, config.test_seed_base + config.test_per_class}},
        {"concept", {config.concept_seed_base, config.concept_seed_base + static_cast<std::uint64_t>(config.shot_count)}}};
    for (const auto& [id, list] : neighbors) j["neighbors"][std::to_string(id)] = list;
    return j;
}

double shape_affinity(ShapeKind a, ShapeKind b) noexcept {
    if (a == b) return 1.0;
    auto key = [](ShapeKind x, ShapeKind y) {
        const int i = static_cast<int>(x), j = static_cast<int>(y);
        return std::pair<int, int>(std::min(i, j), std::max(i, j));
    };
    static const std::map<std::pair<int, int>, double> table = {
        {key(ShapeKind::circle, ShapeKind::square), 0.5},   {key(ShapeKind::circle, ShapeKind::triangle), 0.3},
        {key(ShapeKind::circle, ShapeKind::cross), 0.2},    {key(ShapeKind::circle, ShapeKind::star), 0.3},
        {key(ShapeKind::square, ShapeKind::triangle), 0.4}, {key(ShapeKind::square, ShapeKind::cross), 0.4},
        {key(ShapeKind::square, ShapeKind::star), 0.2},     {key(ShapeKind::triangle, ShapeKind::cross), 0.3},
        {key(ShapeKind::triangle, ShapeKind::star), 0.5},   {key(ShapeKind::cross, ShapeKind::star), 0.6}};
    return table.at(key(a, b));
}

double recipe_similarity(const ClassSpec& concept_recipe, const ClassSpec& base) {
    const double dh = (concept_recipe.hue - base.hue) * std::numbers::pi / 180.0;
    return shape_affinity(concept_recipe.shape, base.shape) + 0.5 * (1.0 + std::cos(dh));
}

std::vector<ClassSpec> make_base_classes(const WorldConfig& cfg) {
    std::vector<ClassSpec> out;
    for (std::size_t h = 0; h < cfg.hues.size(); ++h)
        for (std::size_t s = 0; s < cfg.shapes.size(); ++s) {
            ClassSpec spec;
            spec.class_id = static_cast<int>(out.size());
            spec.shape = cfg.shapes[s];
            spec.hue = cfg.hues[h];
            spec.size = cfg.image_size;
            spec.name = std::string(to_string(spec.shape)) + "_h" + std::to_string(static_cast<int>(std::lround(spec.hue)));
            out.push_back(spec);
        }
    return out;
}

namespace {

bool ranges_overlap(std::uint64_t a, std::uint64_t alen, std::uint64_t b, std::uint64_t blen) {
    return a < b + blen && b < a + alen;
}

ClassSpec concept_recipe(const WorldConfig& cfg, const ConceptRecipe& r, int id) {
    ClassSpec spec;
    spec.class_id = id;
    spec.name = r.name;
    spec.shape = r.shape;
    spec.hue = r.hue;
    spec.size = cfg.image_size;
    if (r.shape == ShapeKind::star) {
        spec.radius = 5.5;
        spec.jitter.position = 1.5;
    }
    spec.fixed_background = cfg.shot_background;
    return spec;
}

}  // namespace

ConceptWorld build_world(const WorldConfig& cfg) {
    if (cfg.class_count() < 8) throw ConfigError("world needs at least 8 base classes");
    if (cfg.train_per_class == 0 || cfg.test_per_class == 0) throw ConfigError("per-class counts must be positive");
    if (cfg.shot_count < 3 || cfg.shot_count > 5) throw ConfigError("shot_count must be in [3, 5]");
    const auto shots = static_cast<std::uint64_t>(cfg.shot_count);
    if (ranges_overlap(cfg.train_seed_base, cfg.train_per_class, cfg.test_seed_base, cfg.test_per_class) ||
        ranges_overlap(cfg.train_seed_base, cfg.train_per_class, cfg.concept_seed_base, shots) ||
        ranges_overlap(cfg.test_seed_base, cfg.test_per_class, cfg.concept_seed_base, shots))
        throw ConfigError("train, test and concept seed ranges overlap");
    if (cfg.concepts.size() > cfg.rare_token_count) throw ConfigError("more concepts than reserve tokens");
    if (cfg.rare_token_base < static_cast<int>(cfg.class_count()))
        throw ConfigError("reserve tokens collide with base-class tokens");

    ConceptWorld w;
    w.config = cfg;
    w.classes = make_base_classes(cfg);
    for (const auto& c : w.classes) {
        c.validate();
        for (std::size_t i = 0; i < cfg.train_per_class; ++i) {
            const auto seed = cfg.train_seed_base + i;
            w.train.push_back({render_class_image(c, seed), c.class_id, seed});
        }
        for (std::size_t i = 0; i < cfg.test_per_class; ++i) {
            const auto seed = cfg.test_seed_base + i;
            w.test.push_back({render_class_image(c, seed), c.class_id, seed});
        }
    }
    for (std::size_t i = 0; i < cfg.concepts.size(); ++i) {
        ConceptSpec spec;
        spec.concept_id = static_cast<int>(i);
        spec.name = cfg.concepts[i].name;
        // Concept recipes get ids past every base class so render streams never collide.
        spec.recipe = concept_recipe(cfg, cfg.concepts[i], 1000 + static_cast<int>(i));
        spec.recipe.validate();
        spec.shot_count = cfg.shot_count;
        spec.rare_token = cfg.rare_token_base + static_cast<int>(i);

        std::vector<int> order(w.classes.size());
        for (std::size_t k = 0; k < order.size(); ++k) order[k] = static_cast<int>(k);
        std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
            return recipe_similarity(spec.recipe, w.classes[a]) > recipe_similarity(spec.recipe, w.classes[b]);
        });
        spec.superclass = order.front();
        w.neighbors[spec.concept_id] = order;

        auto& shots_out = w.shots[spec.concept_id];
        for (int s = 0; s < cfg.shot_count; ++s) {
            const auto seed = cfg.concept_seed_base + static_cast<std::uint64_t>(s);
            shots_out.push_back({render_class_image(spec.recipe, seed), spec.rare_token, seed});
        }
        w.concepts.push_back(std::move(spec));
    }
    return w;
}

std::vector<int> superclass_neighbors(const ConceptWorld& world, int concept_id, std::size_t k) {
    auto it = world.neighbors.find(concept_id);
    if (it == world.neighbors.end()) throw TokenError("unknown concept id " + std::to_string(concept_id));
    if (k > it->second.size())
        throw ConfigError("k=" + std::to_string(k) + " exceeds neighbor list of " + std::to_string(it->second.size()));
    return {it->second.begin(), it->second.begin() + static_cast<std::ptrdiff_t>(k)};
}

}  // namespace dlab
