#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "driftlab/diffusion/image_io.hpp"
#include "driftlab/synthworld/render.hpp"

namespace dlab {

/// A few-shot concept: a rendering recipe outside the base grid, bound to
/// a reserve token.
struct ConceptSpec {
    int concept_id = 0;
    std::string name;
    ClassSpec recipe;
    int shot_count = 5;
    int rare_token = 0;
    /// Rank-1 entry of the concept's neighbor list.
    int superclass = 0;

    nlohmann::json to_json() const;
};

struct ConceptRecipe {
    std::string name;
    ShapeKind shape = ShapeKind::star;
    double hue = 60.0;
};

/// Concept id -> base class ids, most similar first.
using NeighborMap = std::map<int, std::vector<int>>;

struct WorldConfig {
    std::vector<ShapeKind> shapes = {ShapeKind::circle, ShapeKind::square, ShapeKind::triangle, ShapeKind::cross};
    std::vector<double> hues = {0.0, 120.0, 240.0};
    std::size_t train_per_class = 500;
    std::size_t test_per_class = 40;
    std::uint64_t train_seed_base = 0;
    std::uint64_t test_seed_base = 1'000'000;
    std::uint64_t concept_seed_base = 2'000'000;
    std::vector<ConceptRecipe> concepts = default_concepts();
    int shot_count = 5;
    /// First reserve token; concept i gets rare_token_base + i.
    int rare_token_base = 12;
    std::size_t rare_token_count = 16;
    /// Fixed, distinctly colored background of concept shots.
    Hsv shot_background = {200.0, 0.55, 0.7};
    std::size_t image_size = 16;

    static std::vector<ConceptRecipe> default_concepts();
    std::size_t class_count() const noexcept { return shapes.size() * hues.size(); }
    nlohmann::json to_json() const;
    static WorldConfig from_json(const nlohmann::json& j);
};

struct ConceptWorld {
    WorldConfig config;
    std::vector<ClassSpec> classes;
    std::vector<ConceptSpec> concepts;
    std::vector<LabeledImage> train;
    std::vector<LabeledImage> test;
    /// Concept id -> shot images (label = rare token).
    std::map<int, std::vector<LabeledImage>> shots;
    NeighborMap neighbors;

    const ConceptSpec& concept_by_id(int concept_id) const;
    /// Manifest: class specs, concept specs, seed ranges, neighbor map.
    nlohmann::json manifest() const;
};

/// Similarity of a concept recipe to a base class: shape affinity plus hue
/// closeness (1 + cos(dh)) / 2, each in [0, 1].
double recipe_similarity(const ClassSpec& concept_recipe, const ClassSpec& base);
double shape_affinity(ShapeKind a, ShapeKind b) noexcept;

/// Base class specs in class-id order: id = hue_index * shapes + shape_index.
std::vector<ClassSpec> make_base_classes(const WorldConfig& cfg);

/// Throws ConfigError for fewer than 8 classes, overlapping seed ranges or
/// shot counts outside [3, 5].
ConceptWorld build_world(const WorldConfig& cfg);

/// Top-k of the neighbor list; TokenError for unknown concepts and
/// ConfigError when k exceeds the list.
std::vector<int> superclass_neighbors(const ConceptWorld& world, int concept_id, std::size_t k);

}  // namespace dlab
