#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "driftlab/gradcore/tensor.hpp"

namespace dlab {

/// Images are [H, W, 3] tensors of sRGB values in [0, 1].
struct LabeledImage {
    Tensor image;
    int label = 0;
    std::uint64_t seed = 0;
};

/// Maps [0,1] pixels to the model's [-1,1] range as a flat [1, D] row.
Tensor to_model_space(const Tensor& image);
/// Inverse of to_model_space, clamped to [0,1], reshaped to [H, W, C].
Tensor from_model_space(std::span<const double> row, std::size_t height, std::size_t width, std::size_t channels);

/// 8-bit sRGB PNG.
void write_png(const std::filesystem::path& path, const Tensor& image);
Tensor read_png(const std::filesystem::path& path);

/// Tiles images into a grid (row-major, `columns` per row) with a 1 px gap.
Tensor contact_sheet(std::span<const Tensor> images, std::size_t columns);

}  // namespace dlab
