#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

#include "driftlab/gradcore/tensor.hpp"

namespace dlab {

enum class ShapeKind { circle, square, triangle, cross, star };
std::string_view to_string(ShapeKind s) noexcept;
ShapeKind parse_shape(std::string_view s);

/// HSV color with hue in degrees.
struct Hsv {
    double hue = 0.0;
    double saturation = 0.0;
    double value = 0.0;
};
std::array<double, 3> hsv_to_rgb(const Hsv& c) noexcept;

struct Jitter {
    double position = 2.0;  ///< +- pixels
    double scale = 0.15;    ///< +- fraction of the radius
    double hue = 10.0;      ///< +- degrees
    double bg_value_lo = 0.35;
    double bg_value_hi = 0.75;
};

/// Rendering recipe for one class of the toy world.
struct ClassSpec {
    int class_id = 0;
    std::string name;
    ShapeKind shape = ShapeKind::circle;
    double hue = 0.0;
    double saturation = 0.9;
    double value = 0.9;
    double radius = 5.0;
    Jitter jitter;
    /// Low-saturation background of random hue unless fixed.
    double bg_saturation = 0.12;
    std::optional<Hsv> fixed_background;
    std::size_t size = 16;

    /// Throws ConfigError for hues outside [0,360), negative jitter or
    /// shapes that could leave the canvas.
    void validate() const;
    nlohmann::json to_json() const;
};

/// Deterministic in (spec, seed); returns [size, size, 3] in [0, 1].
Tensor render_class_image(const ClassSpec& spec, std::uint64_t seed);

/// Fraction of pixels whose shape coverage is at least one half.
double shape_coverage(const ClassSpec& spec, std::uint64_t seed);

}  // namespace dlab
