#pragma once

#include <algorithm>
#include <csetjmp>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include <png.h>

#include "retfiner/common.hpp"

namespace retfiner {

// 8-bit grayscale image held as floats in [0,1], row-major.
struct GrayImage {
    Index height{0};
    Index width{0};
    std::vector<float> pixels;  // height * width

    float& at(Index r, Index c) { return pixels[static_cast<size_t>(r * width + c)]; }
    float at(Index r, Index c) const { return pixels[static_cast<size_t>(r * width + c)]; }
};

// 8-bit RGB image (overlays), row-major, values in [0,1].
struct RgbImage {
    Index height{0};
    Index width{0};
    std::vector<float> pixels;  // height * width * 3
};

namespace detail {

struct PngReadCloser {
    png_structp png{nullptr};
    png_infop info{nullptr};
    std::FILE* file{nullptr};
    ~PngReadCloser() {
        if (png) {
            png_destroy_read_struct(&png, info ? &info : nullptr, nullptr);
        }
        if (file) {
            std::fclose(file);
        }
    }
};

struct PngWriteCloser {
    png_structp png{nullptr};
    png_infop info{nullptr};
    std::FILE* file{nullptr};
    ~PngWriteCloser() {
        if (png) {
            png_destroy_write_struct(&png, info ? &info : nullptr);
        }
        if (file) {
            std::fclose(file);
        }
    }
};

inline uint8_t to_byte(float v) {
    if (v <= 0.0f) {
        return 0;
    }
    if (v >= 1.0f) {
        return 255;
    }
    return static_cast<uint8_t>(v * 255.0f + 0.5f);
}

}  // namespace detail

// Reads any PNG as grayscale (RGB/RGBA/palette converted, 16-bit reduced).
inline GrayImage read_png_gray(const std::filesystem::path& path) {
    detail::PngReadCloser ctx;
    ctx.file = std::fopen(path.string().c_str(), "rb");
    if (!ctx.file) {
        throw InputError("cannot open image " + path.string());
    }
    unsigned char sig[8];
    if (std::fread(sig, 1, 8, ctx.file) != 8 || png_sig_cmp(sig, 0, 8) != 0) {
        throw InputError(path.string() + " is not a PNG file");
    }
    ctx.png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!ctx.png) {
        throw InputError("libpng: failed to allocate read struct");
    }
    ctx.info = png_create_info_struct(ctx.png);
    if (!ctx.info) {
        throw InputError("libpng: failed to allocate info struct");
    }
    if (setjmp(png_jmpbuf(ctx.png))) {
        throw InputError("libpng: failed to decode " + path.string());
    }
    png_init_io(ctx.png, ctx.file);
    png_set_sig_bytes(ctx.png, 8);
    png_read_info(ctx.png, ctx.info);

    const png_byte color = png_get_color_type(ctx.png, ctx.info);
    const png_byte depth = png_get_bit_depth(ctx.png, ctx.info);
    if (color == PNG_COLOR_TYPE_PALETTE) {
        png_set_palette_to_rgb(ctx.png);
    }
    if (color == PNG_COLOR_TYPE_GRAY && depth < 8) {
        png_set_expand_gray_1_2_4_to_8(ctx.png);
    }
    if (png_get_valid(ctx.png, ctx.info, PNG_INFO_tRNS)) {
        png_set_tRNS_to_alpha(ctx.png);
    }
    if (depth == 16) {
        png_set_strip_16(ctx.png);
    }
    if (color & PNG_COLOR_MASK_ALPHA || png_get_valid(ctx.png, ctx.info, PNG_INFO_tRNS)) {
        png_set_strip_alpha(ctx.png);
    }
    if (color == PNG_COLOR_TYPE_PALETTE || (color & PNG_COLOR_MASK_COLOR)) {
        png_set_rgb_to_gray_fixed(ctx.png, 1, -1, -1);
    }
    png_read_update_info(ctx.png, ctx.info);

    GrayImage img;
    img.height = static_cast<Index>(png_get_image_height(ctx.png, ctx.info));
    img.width = static_cast<Index>(png_get_image_width(ctx.png, ctx.info));
    if (img.height <= 0 || img.width <= 0) {
        throw InputError(path.string() + " has empty dimensions");
    }
    img.pixels.resize(static_cast<size_t>(img.height * img.width));
    std::vector<uint8_t> row(static_cast<size_t>(img.width));
    for (Index r = 0; r < img.height; ++r) {
        png_read_row(ctx.png, row.data(), nullptr);
        for (Index c = 0; c < img.width; ++c) {
            img.at(r, c) = static_cast<float>(row[static_cast<size_t>(c)]) / 255.0f;
        }
    }
    png_read_end(ctx.png, nullptr);
    return img;
}

inline void write_png_gray(const std::filesystem::path& path, const GrayImage& img) {
    if (img.height <= 0 || img.width <= 0 ||
        img.pixels.size() != static_cast<size_t>(img.height * img.width)) {
        throw InputError("write_png_gray: malformed image buffer");
    }
    detail::PngWriteCloser ctx;
    ctx.file = std::fopen(path.string().c_str(), "wb");
    if (!ctx.file) {
        throw InputError("cannot write image " + path.string());
    }
    ctx.png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!ctx.png) {
        throw InputError("libpng: failed to allocate write struct");
    }
    ctx.info = png_create_info_struct(ctx.png);
    if (!ctx.info) {
        throw InputError("libpng: failed to allocate info struct");
    }
    if (setjmp(png_jmpbuf(ctx.png))) {
        throw InputError("libpng: failed to encode " + path.string());
    }
    png_init_io(ctx.png, ctx.file);
    png_set_IHDR(ctx.png, ctx.info, static_cast<png_uint_32>(img.width),
                 static_cast<png_uint_32>(img.height), 8, PNG_COLOR_TYPE_GRAY,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(ctx.png, ctx.info);
    std::vector<uint8_t> row(static_cast<size_t>(img.width));
    for (Index r = 0; r < img.height; ++r) {
        for (Index c = 0; c < img.width; ++c) {
            row[static_cast<size_t>(c)] = detail::to_byte(img.at(r, c));
        }
        png_write_row(ctx.png, row.data());
    }
    png_write_end(ctx.png, nullptr);
}

inline void write_png_rgb(const std::filesystem::path& path, const RgbImage& img) {
    if (img.height <= 0 || img.width <= 0 ||
        img.pixels.size() != static_cast<size_t>(img.height * img.width * 3)) {
        throw InputError("write_png_rgb: malformed image buffer");
    }
    detail::PngWriteCloser ctx;
    ctx.file = std::fopen(path.string().c_str(), "wb");
    if (!ctx.file) {
        throw InputError("cannot write image " + path.string());
    }
    ctx.png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!ctx.png) {
        throw InputError("libpng: failed to allocate write struct");
    }
    ctx.info = png_create_info_struct(ctx.png);
    if (!ctx.info) {
        throw InputError("libpng: failed to allocate info struct");
    }
    if (setjmp(png_jmpbuf(ctx.png))) {
        throw InputError("libpng: failed to encode " + path.string());
    }
    png_init_io(ctx.png, ctx.file);
    png_set_IHDR(ctx.png, ctx.info, static_cast<png_uint_32>(img.width),
                 static_cast<png_uint_32>(img.height), 8, PNG_COLOR_TYPE_RGB,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(ctx.png, ctx.info);
    std::vector<uint8_t> row(static_cast<size_t>(img.width) * 3);
    for (Index r = 0; r < img.height; ++r) {
        for (Index c = 0; c < img.width * 3; ++c) {
            row[static_cast<size_t>(c)] =
                detail::to_byte(img.pixels[static_cast<size_t>(r * img.width * 3 + c)]);
        }
        png_write_row(ctx.png, row.data());
    }
    png_write_end(ctx.png, nullptr);
}

// Converts to the model's input raster: center-crop to square then resize to
// `size` by nearest neighbor (exact for same-size inputs).
inline Mat<float> to_model_raster(const GrayImage& img, Index size) {
    const Index side = std::min(img.height, img.width);
    const Index r0 = (img.height - side) / 2;
    const Index c0 = (img.width - side) / 2;
    Mat<float> out(size, size);
    for (Index r = 0; r < size; ++r) {
        for (Index c = 0; c < size; ++c) {
            const Index sr = r0 + std::min(side - 1, (r * side) / size);
            const Index sc = c0 + std::min(side - 1, (c * side) / size);
            out(r, c) = img.at(sr, sc);
        }
    }
    return out;
}

}  // namespace retfiner
