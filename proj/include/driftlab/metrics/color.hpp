#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "driftlab/gradcore/tensor.hpp"

namespace dlab {

struct Chromaticity {
    double x = 0.0;
    double y = 0.0;
};

struct XyPoints {
    std::vector<Chromaticity> points;
    /// Pixels with X + Y + Z below kBlackThreshold (chromaticity undefined).
    std::size_t dropped = 0;
};

inline constexpr double kBlackThreshold = 1e-6;

double srgb_to_linear(double v) noexcept;

/// sRGB -> linear RGB -> XYZ (D65) -> (X, Y) / (X + Y + Z) for every pixel
/// of an [H, W, 3] image.
XyPoints rgb_to_xy(const Tensor& image);

struct HistogramGrid {
    std::size_t bins_x = 32;
    std::size_t bins_y = 32;
    double x_min = 0.0;
    double x_max = 0.8;
    double y_min = 0.0;
    double y_max = 0.8;

    std::size_t bins() const noexcept { return bins_x * bins_y; }
    double bin_width() const noexcept { return (x_max - x_min) / static_cast<double>(bins_x); }
    Chromaticity center(std::size_t bin) const noexcept;
    friend bool operator==(const HistogramGrid&, const HistogramGrid&) = default;
};

/// Normalised 2-D density over the CIE xy plane.
class ChromaticityHistogram {
public:
    ChromaticityHistogram() = default;
    /// Wraps raw masses; they are normalised to sum to one.
    ChromaticityHistogram(HistogramGrid grid, std::vector<double> masses);

    const HistogramGrid& grid() const noexcept { return grid_; }
    std::span<const double> masses() const noexcept { return mass_; }
    const std::vector<Chromaticity>& centers() const noexcept { return centers_; }
    std::size_t dropped() const noexcept { return dropped_; }
    std::size_t clamped() const noexcept { return clamped_; }

    /// bins_y rows of bins_x comma-separated masses, y ascending.
    std::string to_csv() const;

    friend ChromaticityHistogram chroma_histogram(std::span<const Tensor> images, const HistogramGrid& grid);

private:
    HistogramGrid grid_;
    std::vector<double> mass_;
    std::vector<Chromaticity> centers_;
    std::size_t dropped_ = 0;
    std::size_t clamped_ = 0;
};

/// Pools every pixel of every image. Points outside the grid rectangle are
/// clamped to the edge bins and counted. DegenerateInputError when no pixel
/// survives the black threshold.
ChromaticityHistogram chroma_histogram(std::span<const Tensor> images, const HistogramGrid& grid = {});

}  // namespace dlab
