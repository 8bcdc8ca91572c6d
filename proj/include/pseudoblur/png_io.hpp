#pragma once

#include <cstdio>
#include <stdexcept>
#include <string>
#include <vector>

#include <png.h>

#include "pseudoblur/image.hpp"

namespace pseudoblur {

struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// 8-bit PNG -> unit-range image (v/255). Grayscale stays 1 channel, RGB(A)
// loads as 3 (alpha dropped).
inline Image read_png(const std::string& path) {
    FILE* fp = std::fopen(path.c_str(), "rb");
    if (!fp) throw IoError("cannot open " + path);
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        if (png) png_destroy_read_struct(&png, &info, nullptr);
        std::fclose(fp);
        throw IoError("libpng init failed");
    }
    std::vector<png_bytep> rows;
    std::vector<png_byte> buf;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        std::fclose(fp);
        throw IoError("failed to decode " + path);
    }
    png_init_io(png, fp);
    png_read_info(png, info);

    png_uint_32 w = png_get_image_width(png, info);
    png_uint_32 h = png_get_image_height(png, info);
    png_byte color = png_get_color_type(png, info);
    png_byte depth = png_get_bit_depth(png, info);

    if (depth == 16) png_set_strip_16(png);
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
    if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
    png_read_update_info(png, info);

    const int channels = png_get_channels(png, info);
    if (channels != 1 && channels != 3) {
        png_destroy_read_struct(&png, &info, nullptr);
        std::fclose(fp);
        throw IoError("unsupported channel count in " + path);
    }

    buf.resize(static_cast<std::size_t>(h) * w * channels);
    rows.resize(h);
    for (png_uint_32 y = 0; y < h; ++y) rows[y] = buf.data() + static_cast<std::size_t>(y) * w * channels;
    png_read_image(png, rows.data());
    png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);

    Image out(channels, static_cast<int>(h), static_cast<int>(w), Range::Unit);
    for (int y = 0; y < static_cast<int>(h); ++y)
        for (int x = 0; x < static_cast<int>(w); ++x)
            for (int c = 0; c < channels; ++c)
                out.at(c, y, x) =
                    buf[(static_cast<std::size_t>(y) * w + x) * channels + c] / 255.0f;
    return out;
}

// Unit-range image -> 8-bit PNG (round(v*255)). Signed images convert first.
inline void write_png(const std::string& path, const Image& img) {
    Image unit = img.to_unit();
    FILE* fp = std::fopen(path.c_str(), "wb");
    if (!fp) throw IoError("cannot write " + path);
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        if (png) png_destroy_write_struct(&png, &info);
        std::fclose(fp);
        throw IoError("libpng init failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        std::fclose(fp);
        throw IoError("failed to encode " + path);
    }
    png_init_io(png, fp);
    const int channels = unit.channels();
    png_set_IHDR(png, info, unit.width(), unit.height(), 8,
                 channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);

    std::vector<png_byte> row(static_cast<std::size_t>(unit.width()) * channels);
    for (int y = 0; y < unit.height(); ++y) {
        for (int x = 0; x < unit.width(); ++x)
            for (int c = 0; c < channels; ++c) {
                float v = unit.at(c, y, x);
                int q = static_cast<int>(std::lround(v * 255.0f));
                row[static_cast<std::size_t>(x) * channels + c] =
                    static_cast<png_byte>(std::clamp(q, 0, 255));
            }
        png_write_row(png, row.data());
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
}

} // namespace pseudoblur
