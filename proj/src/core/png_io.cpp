#include "flashsplit/core/png_io.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <memory>

#include <png.h>

#include "flashsplit/core/error.hpp"

namespace flashsplit {

namespace {

struct FileCloser {
    void operator()(FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<FILE, FileCloser>;

uint16_t quantize16(double v) {
    v = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
    return static_cast<uint16_t>(std::lround(v * 65535.0));
}

} // namespace

void write_png16(const std::string& path, const Tensor& img) {
    require(img.n == 1 && (img.c == 1 || img.c == 3), ErrorKind::contract,
            "write_png16: expects [1,{1|3},H,W]");
    const std::string tmp = path + ".tmp";
    FilePtr fp(std::fopen(tmp.c_str(), "wb"));
    require(fp != nullptr, ErrorKind::io, "cannot open for writing: " + path);

    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    require(png != nullptr, ErrorKind::io, "png_create_write_struct failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_write_struct(&png, nullptr);
        raise(ErrorKind::io, "png_create_info_struct failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        raise(ErrorKind::io, "libpng failure writing " + path);
    }
    png_init_io(png, fp.get());
    png_set_compression_level(png, 6);
    png_set_filter(png, 0, PNG_ALL_FILTERS);
    png_set_IHDR(png, info, static_cast<png_uint_32>(img.w), static_cast<png_uint_32>(img.h), 16,
                 img.c == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);

    std::vector<uint8_t> row(static_cast<size_t>(img.w) * img.c * 2);
    for (int y = 0; y < img.h; ++y) {
        size_t o = 0;
        for (int x = 0; x < img.w; ++x)
            for (int c = 0; c < img.c; ++c) {
                const uint16_t q = quantize16(img.at(0, c, y, x));
                row[o++] = static_cast<uint8_t>(q >> 8);
                row[o++] = static_cast<uint8_t>(q & 0xff);
            }
        png_write_row(png, row.data());
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    fp.reset();
    std::filesystem::rename(tmp, path);
}

Tensor read_png16(const std::string& path) {
    FilePtr fp(std::fopen(path.c_str(), "rb"));
    require(fp != nullptr, ErrorKind::load, "cannot open PNG: " + path);

    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    require(png != nullptr, ErrorKind::io, "png_create_read_struct failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_read_struct(&png, nullptr, nullptr);
        raise(ErrorKind::io, "png_create_info_struct failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        raise(ErrorKind::load, "libpng failure reading " + path);
    }
    png_init_io(png, fp.get());
    png_read_info(png, info);

    const int width = static_cast<int>(png_get_image_width(png, info));
    const int height = static_cast<int>(png_get_image_height(png, info));
    const int depth = png_get_bit_depth(png, info);
    const int color = png_get_color_type(png, info);
    if (depth != 16 || (color != PNG_COLOR_TYPE_GRAY && color != PNG_COLOR_TYPE_RGB)) {
        png_destroy_read_struct(&png, &info, nullptr);
        raise(ErrorKind::load, "unsupported PNG format (want 16-bit gray/rgb): " + path);
    }
    const int channels = color == PNG_COLOR_TYPE_GRAY ? 1 : 3;

    Tensor img(1, channels, height, width);
    std::vector<uint8_t> row(static_cast<size_t>(width) * channels * 2);
    for (int y = 0; y < height; ++y) {
        png_read_row(png, row.data(), nullptr);
        size_t o = 0;
        for (int x = 0; x < width; ++x)
            for (int c = 0; c < channels; ++c) {
                const uint16_t q = static_cast<uint16_t>((row[o] << 8) | row[o + 1]);
                o += 2;
                img.at(0, c, y, x) = static_cast<double>(q) / 65535.0;
            }
    }
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return img;
}

void write_png8(const std::string& path, const std::vector<uint8_t>& rgb, int width, int height) {
    require(rgb.size() == static_cast<size_t>(width) * height * 3, ErrorKind::contract,
            "write_png8: buffer size mismatch");
    const std::string tmp = path + ".tmp";
    FilePtr fp(std::fopen(tmp.c_str(), "wb"));
    require(fp != nullptr, ErrorKind::io, "cannot open for writing: " + path);

    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    require(png != nullptr, ErrorKind::io, "png_create_write_struct failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_write_struct(&png, nullptr);
        raise(ErrorKind::io, "png_create_info_struct failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        raise(ErrorKind::io, "libpng failure writing " + path);
    }
    png_init_io(png, fp.get());
    png_set_compression_level(png, 6);
    png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), 8,
                 PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (int y = 0; y < height; ++y)
        png_write_row(png, const_cast<png_bytep>(&rgb[static_cast<size_t>(y) * width * 3]));
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    fp.reset();
    std::filesystem::rename(tmp, path);
}

} // namespace flashsplit
