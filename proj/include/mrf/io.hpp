// File I/O: grayscale PNG images and raw displacement-field files.
//
// Field files are raw little-endian 32-bit floats, row-major, channel-last,
// with a plain-text sidecar (same basename + ".meta") holding
// "height width channels" on one line.
#pragma once

#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <png.h>

#include "tensor.hpp"

namespace mrf {

// Raised for unreadable / malformed data files; the CLI maps it to exit 3.
class data_error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

namespace detail {
struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;
}  // namespace detail

// Loads an 8- or 16-bit PNG as a single-channel image in [0,1]. Color
// inputs are converted to BT.601 luminance.
inline Tensor load_png(const std::string& path) {
    detail::FilePtr fp(std::fopen(path.c_str(), "rb"));
    if (!fp) throw data_error("cannot open image: " + path);

    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw data_error("libpng init failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw data_error("malformed PNG: " + path);
    }
    png_init_io(png, fp.get());
    png_read_info(png, info);

    const png_uint_32 w = png_get_image_width(png, info);
    const png_uint_32 h = png_get_image_height(png, info);
    int bit_depth = png_get_bit_depth(png, info);
    int color_type = png_get_color_type(png, info);

    if (color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color_type == PNG_COLOR_TYPE_GRAY && bit_depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
    png_set_strip_alpha(png);
    if (bit_depth == 16) png_set_swap(png);  // stream is big-endian
    png_read_update_info(png, info);

    color_type = png_get_color_type(png, info);
    bit_depth = png_get_bit_depth(png, info);
    const int nch = (color_type & PNG_COLOR_MASK_COLOR) ? 3 : 1;
    const size_t rowbytes = png_get_rowbytes(png, info);
    std::vector<unsigned char> buf(rowbytes * h);
    std::vector<png_bytep> rows(h);
    for (png_uint_32 y = 0; y < h; ++y) rows[y] = buf.data() + y * rowbytes;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);

    Tensor img(static_cast<int>(h), static_cast<int>(w), 1);
    const double norm = bit_depth == 16 ? 1.0 / 65535.0 : 1.0 / 255.0;
    for (png_uint_32 y = 0; y < h; ++y) {
        for (png_uint_32 x = 0; x < w; ++x) {
            double val;
            if (bit_depth == 16) {
                const auto* p = reinterpret_cast<const unsigned short*>(rows[y]) + x * nch;
                val = nch == 3 ? 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2] : p[0];
            } else {
                const unsigned char* p = rows[y] + static_cast<size_t>(x) * nch;
                val = nch == 3 ? 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2] : p[0];
            }
            img.at(static_cast<int>(y), static_cast<int>(x), 0) = val * norm;
        }
    }
    return img;
}

// Writes a 1-channel tensor as 8-bit grayscale (values clamped to [0,1]) or
// a 3-channel tensor as 8-bit RGB.
inline void save_png(const std::string& path, const Tensor& img) {
    const Shape s = img.shape();
    check(s.c == 1 || s.c == 3, "save_png: expected 1 or 3 channels, got " + to_string(s));
    detail::FilePtr fp(std::fopen(path.c_str(), "wb"));
    if (!fp) throw data_error("cannot write image: " + path);

    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_write_struct(&png, &info);
        throw data_error("libpng init failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw data_error("PNG write failed: " + path);
    }
    png_init_io(png, fp.get());
    png_set_IHDR(png, info, s.w, s.h, 8,
                 s.c == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);

    std::vector<unsigned char> row(static_cast<size_t>(s.w) * s.c);
    for (int y = 0; y < s.h; ++y) {
        for (int x = 0; x < s.w; ++x)
            for (int ch = 0; ch < s.c; ++ch) {
                const double v = std::clamp(img.at(y, x, ch), 0.0, 1.0);
                row[static_cast<size_t>(x) * s.c + ch] =
                    static_cast<unsigned char>(std::lround(v * 255.0));
            }
        png_write_row(png, row.data());
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

inline void save_field(const std::string& path, const Tensor& field) {
    const Shape s = field.shape();
    {
        std::ofstream meta(path + ".meta");
        if (!meta) throw data_error("cannot write sidecar: " + path + ".meta");
        meta << s.h << " " << s.w << " " << s.c << "\n";
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw data_error("cannot write field: " + path);
    std::vector<float> buf(field.value().begin(), field.value().end());
    out.write(reinterpret_cast<const char*>(buf.data()),
              static_cast<std::streamsize>(buf.size() * sizeof(float)));
    if (!out) throw data_error("short write: " + path);
}

inline Tensor load_field(const std::string& path) {
    int h = 0, w = 0, c = 0;
    {
        std::ifstream meta(path + ".meta");
        if (!meta) throw data_error("missing sidecar: " + path + ".meta");
        meta >> h >> w >> c;
        if (!meta || h <= 0 || w <= 0 || c <= 0)
            throw data_error("malformed sidecar: " + path + ".meta");
    }
    std::ifstream in(path, std::ios::binary);
    if (!in) throw data_error("cannot open field: " + path);
    std::vector<float> buf(static_cast<size_t>(h) * w * c);
    in.read(reinterpret_cast<char*>(buf.data()),
            static_cast<std::streamsize>(buf.size() * sizeof(float)));
    if (in.gcount() != static_cast<std::streamsize>(buf.size() * sizeof(float)))
        throw data_error("truncated field file: " + path);
    Tensor t(h, w, c);
    for (size_t i = 0; i < buf.size(); ++i) t.value()[i] = buf[i];
    for (double v : t.value())
        if (!std::isfinite(v)) throw data_error("non-finite value in field: " + path);
    return t;
}

}  // namespace mrf
