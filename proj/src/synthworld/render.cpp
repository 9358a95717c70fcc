#include "driftlab/synthworld/render.hpp"

#include <cmath>
#include <numbers>
#include <vector>

#include "driftlab/gradcore/error.hpp"
#include "driftlab/gradcore/rng.hpp"

namespace dlab {

std::string_view to_string(ShapeKind s) noexcept {
    switch (s) {
        case ShapeKind::circle: return "circle";
        case ShapeKind::square: return "square";
        case ShapeKind::triangle: return "triangle";
        case ShapeKind::cross: return "cross";
        case ShapeKind::star: return "star";
    }
    return "circle";
}

ShapeKind parse_shape(std::string_view s) {
    for (auto k : {ShapeKind::circle, ShapeKind::square, ShapeKind::triangle, ShapeKind::cross, ShapeKind::star})
        if (to_string(k) == s) return k;
    throw ConfigError("unknown shape: " + std::string(s));
}

std::array<double, 3> hsv_to_rgb(const Hsv& c) noexcept {
    double h = std::fmod(c.hue, 360.0);
    if (h < 0) h += 360.0;
    const double chroma = c.value * c.saturation;
    const double hp = h / 60.0;
    const double x = chroma * (1.0 - std::abs(std::fmod(hp, 2.0) - 1.0));
    std::array<double, 3> rgb{};
    switch (static_cast<int>(hp)) {
        case 0: rgb = {chroma, x, 0}; break;
        case 1: rgb = {x, chroma, 0}; break;
        case 2: rgb = {0, chroma, x}; break;
        case 3: rgb = {0, x, chroma}; break;
        case 4: rgb = {x, 0, chroma}; break;
        default: rgb = {chroma, 0, x}; break;
    }
    const double m = c.value - chroma;
    for (auto& v : rgb) v += m;
    return rgb;
}

void ClassSpec::validate() const {
    if (!(hue >= 0.0 && hue < 360.0)) throw ConfigError("class hue must be in [0, 360)");
    if (jitter.position < 0 || jitter.scale < 0 || jitter.hue < 0 || jitter.bg_value_lo < 0 ||
        jitter.bg_value_hi < jitter.bg_value_lo || jitter.bg_value_hi > 1.0)
        throw ConfigError("jitter ranges must be non-negative and ordered");
    if (jitter.scale >= 1.0) throw ConfigError("scale jitter must be below 1");
    const double half = static_cast<double>(size) / 2.0;
    if (radius * (1.0 + jitter.scale) + jitter.position > half)
        throw ConfigError("class '" + name + "' could leave the canvas");
}

nlohmann::json ClassSpec::to_json() const {
    nlohmann::json j = {{"class_id", class_id},
                        {"name", name},
                        {"shape", to_string(shape)},
                        {"hue", hue},
                        {"saturation", saturation},
                        {"value", value},
                        {"radius", radius},
                        {"jitter",
                         {{"position", jitter.position},
                          {"scale", jitter.scale},
                          {"hue", jitter.hue},
                          {"bg_value", {jitter.bg_value_lo, jitter.bg_value_hi}}}},
                        {"bg_saturation", bg_saturation},
                        {"size", size}};
    if (fixed_background)
        j["fixed_background"] = {fixed_background->hue, fixed_background->saturation, fixed_background->value};
    return j;
}

namespace {

struct Placement {
    double cx, cy, r;
    Hsv fg, bg;
};

Placement place(const ClassSpec& spec, std::uint64_t seed) {
    RngStream rng(seed, streams::render + (static_cast<std::uint64_t>(spec.class_id) << 8));
    const double half = static_cast<double>(spec.size) / 2.0;
    Placement p;
    p.cx = half + rng.uniform(-spec.jitter.position, spec.jitter.position);
    p.cy = half + rng.uniform(-spec.jitter.position, spec.jitter.position);
    p.r = spec.radius * (1.0 + rng.uniform(-spec.jitter.scale, spec.jitter.scale));
    p.fg = {spec.hue + rng.uniform(-spec.jitter.hue, spec.jitter.hue), spec.saturation, spec.value};
    const double bg_hue = rng.uniform(0.0, 360.0);
    const double bg_value = rng.uniform(spec.jitter.bg_value_lo, spec.jitter.bg_value_hi);
    p.bg = spec.fixed_background ? *spec.fixed_background : Hsv{bg_hue, spec.bg_saturation, bg_value};
    return p;
}

bool inside_polygon(double x, double y, const std::vector<std::pair<double, double>>& poly) {
    bool in = false;
    for (std::size_t i = 0, j = poly.size() - 1; i < poly.size(); j = i++) {
        const auto [xi, yi] = poly[i];
        const auto [xj, yj] = poly[j];
        if ((yi > y) != (yj > y) && x < (xj - xi) * (y - yi) / (yj - yi) + xi) in = !in;
    }
    return in;
}

std::vector<std::pair<double, double>> star_polygon() {
    std::vector<std::pair<double, double>> pts;
    for (int i = 0; i < 10; ++i) {
        const double a = -std::numbers::pi / 2 + i * std::numbers::pi / 5;
        const double rr = i % 2 == 0 ? 1.0 : 0.5;
        pts.emplace_back(rr * std::cos(a), rr * std::sin(a));
    }
    return pts;
}

/// Point test in shape-local units (radius 1).
bool inside(ShapeKind shape, double u, double v) {
    switch (shape) {
        case ShapeKind::circle: return u * u + v * v <= 1.0;
        case ShapeKind::square: return std::abs(u) <= 0.85 && std::abs(v) <= 0.85;
        case ShapeKind::triangle: {
            static const std::vector<std::pair<double, double>> tri = {{0.0, -1.0}, {-0.95, 0.75}, {0.95, 0.75}};
            return inside_polygon(u, v, tri);
        }
        case ShapeKind::cross:
            return (std::abs(u) <= 0.35 && std::abs(v) <= 1.0) || (std::abs(v) <= 0.35 && std::abs(u) <= 1.0);
        case ShapeKind::star: {
            static const auto star = star_polygon();
            return inside_polygon(u, v, star);
        }
    }
    return false;
}

constexpr int kSuper = 4;

std::vector<double> coverage_map(const ClassSpec& spec, const Placement& p) {
    const std::size_t n = spec.size;
    std::vector<double> cov(n * n, 0.0);
    for (std::size_t y = 0; y < n; ++y)
        for (std::size_t x = 0; x < n; ++x) {
            int hits = 0;
            for (int sy = 0; sy < kSuper; ++sy)
                for (int sx = 0; sx < kSuper; ++sx) {
                    const double px = x + (sx + 0.5) / kSuper, py = y + (sy + 0.5) / kSuper;
                    hits += inside(spec.shape, (px - p.cx) / p.r, (py - p.cy) / p.r) ? 1 : 0;
                }
            cov[y * n + x] = static_cast<double>(hits) / (kSuper * kSuper);
        }
    return cov;
}

}  // namespace

Tensor render_class_image(const ClassSpec& spec, std::uint64_t seed) {
    spec.validate();
    const Placement p = place(spec, seed);
    const auto cov = coverage_map(spec, p);
    const auto fg = hsv_to_rgb(p.fg);
    const auto bg = hsv_to_rgb(p.bg);
    const std::size_t n = spec.size;
    Tensor img({n, n, 3});
    for (std::size_t i = 0; i < n * n; ++i)
        for (std::size_t c = 0; c < 3; ++c) img[i * 3 + c] = cov[i] * fg[c] + (1.0 - cov[i]) * bg[c];
    return img;
}

double shape_coverage(const ClassSpec& spec, std::uint64_t seed) {
    spec.validate();
    const auto cov = coverage_map(spec, place(spec, seed));
    std::size_t covered = 0;
    for (double c : cov) covered += c >= 0.5 ? 1 : 0;
    return static_cast<double>(covered) / static_cast<double>(cov.size());
}

}  // namespace dlab
