#include "driftlab/diffusion/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>

#include "driftlab/gradcore/error.hpp"

namespace dlab {

Tensor to_model_space(const Tensor& image) {
    Tensor out({1, image.size()});
    for (std::size_t i = 0; i < image.size(); ++i) out[i] = 2.0 * image[i] - 1.0;
    return out;
}

Tensor from_model_space(std::span<const double> row, std::size_t height, std::size_t width, std::size_t channels) {
    Tensor out({height, width, channels});
    if (row.size() != out.size()) throw ConfigError("from_model_space: size mismatch");
    for (std::size_t i = 0; i < row.size(); ++i) out[i] = std::clamp(0.5 * (row[i] + 1.0), 0.0, 1.0);
    return out;
}

namespace {

struct FileCloser {
    void operator()(FILE* f) const {
        if (f) std::fclose(f);
    }
};

}  // namespace

void write_png(const std::filesystem::path& path, const Tensor& image) {
    if (image.rank() != 3 || image.dim(2) != 3) throw ConfigError("write_png expects [H, W, 3]");
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    const auto h = image.dim(0), w = image.dim(1);
    std::unique_ptr<FILE, FileCloser> fp(std::fopen(path.c_str(), "wb"));
    if (!fp) throw ConfigError("cannot write " + path.string());
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png_create_info_struct(png);
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw ConfigError("libpng failed writing " + path.string());
    }
    png_init_io(png, fp.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), 8, PNG_COLOR_TYPE_RGB,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_set_sRGB(png, info, PNG_sRGB_INTENT_PERCEPTUAL);
    png_write_info(png, info);
    std::vector<png_byte> row(w * 3);
    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t i = 0; i < w * 3; ++i)
            row[i] = static_cast<png_byte>(std::lround(std::clamp(image[y * w * 3 + i], 0.0, 1.0) * 255.0));
        png_write_row(png, row.data());
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

Tensor read_png(const std::filesystem::path& path) {
    std::unique_ptr<FILE, FileCloser> fp(std::fopen(path.c_str(), "rb"));
    if (!fp) throw ConfigError("cannot open " + path.string());
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png_create_info_struct(png);
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw ConfigError("libpng failed reading " + path.string());
    }
    png_init_io(png, fp.get());
    png_read_info(png, info);
    png_set_strip_16(png);
    png_set_strip_alpha(png);
    png_set_palette_to_rgb(png);
    png_set_gray_to_rgb(png);
    png_read_update_info(png, info);
    const auto w = png_get_image_width(png, info), h = png_get_image_height(png, info);
    Tensor out({h, w, 3});
    std::vector<png_byte> row(png_get_rowbytes(png, info));
    for (std::size_t y = 0; y < h; ++y) {
        png_read_row(png, row.data(), nullptr);
        for (std::size_t i = 0; i < w * 3; ++i) out[y * w * 3 + i] = row[i] / 255.0;
    }
    png_destroy_read_struct(&png, &info, nullptr);
    return out;
}

Tensor contact_sheet(std::span<const Tensor> images, std::size_t columns) {
    if (images.empty() || columns == 0) throw ConfigError("contact_sheet needs images and columns > 0");
    const auto h = images[0].dim(0), w = images[0].dim(1);
    const std::size_t rows = (images.size() + columns - 1) / columns;
    const std::size_t cols = std::min(columns, images.size());
    const std::size_t H = rows * (h + 1) - 1, W = cols * (w + 1) - 1;
    Tensor sheet({H, W, 3}, 1.0);
    for (std::size_t i = 0; i < images.size(); ++i) {
        const std::size_t oy = (i / columns) * (h + 1), ox = (i % columns) * (w + 1);
        for (std::size_t y = 0; y < h; ++y)
            for (std::size_t x = 0; x < w; ++x)
                for (std::size_t c = 0; c < 3; ++c)
                    sheet[((oy + y) * W + ox + x) * 3 + c] = images[i][(y * w + x) * 3 + c];
    }
    return sheet;
}

}  // namespace dlab
