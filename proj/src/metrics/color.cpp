#include "driftlab/metrics/color.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "driftlab/gradcore/error.hpp"

namespace dlab {

double srgb_to_linear(double v) noexcept {
    return v <= 0.04045 ? v / 12.92 : std::pow((v + 0.055) / 1.055, 2.4);
}

XyPoints rgb_to_xy(const Tensor& image) {
    if (image.size() % 3 != 0) throw ConfigError("rgb_to_xy expects 3 channels per pixel");
    XyPoints out;
    const std::size_t n = image.size() / 3;
    out.points.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double r = srgb_to_linear(image[3 * i]);
        const double g = srgb_to_linear(image[3 * i + 1]);
        const double b = srgb_to_linear(image[3 * i + 2]);
        const double X = 0.4124564 * r + 0.3575761 * g + 0.1804375 * b;
        const double Y = 0.2126729 * r + 0.7151522 * g + 0.0721750 * b;
        const double Z = 0.0193339 * r + 0.1191920 * g + 0.9503041 * b;
        const double sum = X + Y + Z;
        if (sum < kBlackThreshold) {
            ++out.dropped;
            continue;
        }
        out.points.push_back({X / sum, Y / sum});
    }
    return out;
}

Chromaticity HistogramGrid::center(std::size_t bin) const noexcept {
    const std::size_t ix = bin % bins_x, iy = bin / bins_x;
    const double wx = (x_max - x_min) / static_cast<double>(bins_x);
    const double wy = (y_max - y_min) / static_cast<double>(bins_y);
    return {x_min + (static_cast<double>(ix) + 0.5) * wx, y_min + (static_cast<double>(iy) + 0.5) * wy};
}

ChromaticityHistogram::ChromaticityHistogram(HistogramGrid grid, std::vector<double> masses)
    : grid_(grid), mass_(std::move(masses)) {
    if (grid_.bins() == 0 || mass_.size() != grid_.bins()) throw ConfigError("histogram mass count does not match grid");
    double total = 0.0;
    for (double m : mass_) {
        if (!(m >= 0.0)) throw ConfigError("histogram masses must be non-negative");
        total += m;
    }
    if (!(total > 0.0)) throw DegenerateInputError("histogram has no mass");
    for (auto& m : mass_) m /= total;
    for (std::size_t b = 0; b < grid_.bins(); ++b) centers_.push_back(grid_.center(b));
}

std::string ChromaticityHistogram::to_csv() const {
    std::ostringstream os;
    os.precision(17);
    for (std::size_t iy = 0; iy < grid_.bins_y; ++iy) {
        for (std::size_t ix = 0; ix < grid_.bins_x; ++ix) os << (ix ? "," : "") << mass_[iy * grid_.bins_x + ix];
        os << '\n';
    }
    return os.str();
}

ChromaticityHistogram chroma_histogram(std::span<const Tensor> images, const HistogramGrid& grid) {
    if (images.empty()) throw ConfigError("chroma_histogram needs at least one image");
    if (grid.bins() == 0 || !(grid.x_max > grid.x_min) || !(grid.y_max > grid.y_min))
        throw ConfigError("invalid histogram grid");
    std::vector<std::size_t> counts(grid.bins(), 0);
    std::size_t kept = 0, dropped = 0, clamped = 0;
    for (const auto& img : images) {
        const auto pts = rgb_to_xy(img);
        dropped += pts.dropped;
        for (const auto& p : pts.points) {
            const double fx = (p.x - grid.x_min) / (grid.x_max - grid.x_min) * static_cast<double>(grid.bins_x);
            const double fy = (p.y - grid.y_min) / (grid.y_max - grid.y_min) * static_cast<double>(grid.bins_y);
            auto ix = static_cast<std::ptrdiff_t>(std::floor(fx));
            auto iy = static_cast<std::ptrdiff_t>(std::floor(fy));
            const auto cx = std::clamp<std::ptrdiff_t>(ix, 0, static_cast<std::ptrdiff_t>(grid.bins_x) - 1);
            const auto cy = std::clamp<std::ptrdiff_t>(iy, 0, static_cast<std::ptrdiff_t>(grid.bins_y) - 1);
            if (cx != ix || cy != iy) ++clamped;
            ++counts[static_cast<std::size_t>(cy) * grid.bins_x + static_cast<std::size_t>(cx)];
            ++kept;
        }
    }
    if (kept == 0) throw DegenerateInputError("every pixel is black; chromaticity undefined");
    ChromaticityHistogram h;
    h.grid_ = grid;
    h.mass_.resize(grid.bins());
    for (std::size_t b = 0; b < grid.bins(); ++b)
        h.mass_[b] = static_cast<double>(counts[b]) / static_cast<double>(kept);
    for (std::size_t b = 0; b < grid.bins(); ++b) h.centers_.push_back(grid.center(b));
    h.dropped_ = dropped;
    h.clamped_ = clamped;
    return h;
}

}  // namespace dlab
