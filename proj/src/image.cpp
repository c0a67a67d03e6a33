#include "segsr/image.hpp"

#include <png.h>

#include <cmath>
#include <cstdio>
#include <memory>

namespace segsr {

namespace {

struct FileCloser {
    void operator()(FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<FILE, FileCloser>;

} // namespace

ImageU8 read_png(const std::string& path) {
    FilePtr fp(std::fopen(path.c_str(), "rb"));
    check(fp != nullptr, "read_png: cannot open '" + path + "'");

    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    check(png != nullptr, "read_png: libpng init failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_read_struct(&png, nullptr, nullptr);
        fail("read_png: libpng info init failed");
    }

    // constructed before setjmp so unwinding after a libpng longjmp frees them
    ImageU8 img;
    std::vector<png_bytep> rows;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        fail("read_png: '" + path + "' is not a valid PNG");
    }
    png_init_io(png, fp.get());
    png_read_info(png, info);

    png_uint_32 w, h;
    int bit_depth, color_type;
    png_get_IHDR(png, info, &w, &h, &bit_depth, &color_type, nullptr, nullptr, nullptr);

    if (color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color_type == PNG_COLOR_TYPE_GRAY && bit_depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
    if (bit_depth == 16) png_set_strip_16(png);
    if (color_type == PNG_COLOR_TYPE_GRAY || color_type == PNG_COLOR_TYPE_GRAY_ALPHA)
        png_set_gray_to_rgb(png);
    png_set_strip_alpha(png);
    png_read_update_info(png, info);

    img.width = static_cast<int>(w);
    img.height = static_cast<int>(h);
    img.rgb.resize(static_cast<size_t>(w) * h * 3);
    rows.resize(h);
    for (png_uint_32 y = 0; y < h; ++y) rows[y] = img.rgb.data() + static_cast<size_t>(y) * w * 3;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return img;
}

void write_png(const std::string& path, const ImageU8& img) {
    check(img.width > 0 && img.height > 0 &&
              img.rgb.size() == static_cast<size_t>(img.width) * img.height * 3,
          "write_png: malformed image buffer");
    FilePtr fp(std::fopen(path.c_str(), "wb"));
    check(fp != nullptr, "write_png: cannot open '" + path + "' for writing");

    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    check(png != nullptr, "write_png: libpng init failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_write_struct(&png, nullptr);
        fail("write_png: libpng info init failed");
    }
    std::vector<png_bytep> rows;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        fail("write_png: failed writing '" + path + "'");
    }
    png_init_io(png, fp.get());
    // pinned settings keep outputs byte-identical across runs
    png_set_compression_level(png, 6);
    png_set_filter(png, 0, PNG_FILTER_NONE);
    png_set_IHDR(png, info, static_cast<png_uint_32>(img.width), static_cast<png_uint_32>(img.height),
                 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    rows.resize(img.height);
    for (int y = 0; y < img.height; ++y)
        rows[y] = const_cast<png_bytep>(img.rgb.data() + static_cast<size_t>(y) * img.width * 3);
    png_write_image(png, rows.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

Tensor image_to_tensor(const ImageU8& img) {
    const int h = img.height, w = img.width;
    std::vector<double> v(static_cast<size_t>(3) * h * w);
    const int64_t hw = static_cast<int64_t>(h) * w;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int ch = 0; ch < 3; ++ch)
                v[ch * hw + static_cast<int64_t>(y) * w + x] =
                    img.rgb[(static_cast<size_t>(y) * w + x) * 3 + ch] / 255.0;
    return Tensor::from_data({3, h, w}, std::move(v));
}

ImageU8 tensor_to_image(const Tensor& t) {
    check(t.rank() == 3 && t.dim(0) == 3, "tensor_to_image: [3,H,W] expected");
    const int h = t.dim(1), w = t.dim(2);
    const int64_t hw = static_cast<int64_t>(h) * w;
    ImageU8 img;
    img.width = w;
    img.height = h;
    img.rgb.resize(static_cast<size_t>(3) * hw);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int ch = 0; ch < 3; ++ch) {
                double v = t.data()[ch * hw + static_cast<int64_t>(y) * w + x];
                v = std::min(std::max(v, 0.0), 1.0);
                img.rgb[(static_cast<size_t>(y) * w + x) * 3 + ch] =
                    static_cast<uint8_t>(std::lround(v * 255.0));
            }
    return img;
}

Tensor dihedral(const Tensor& chw, int op) {
    check(chw.rank() == 3, "dihedral: [C,H,W] expected");
    check(op >= 0 && op < 8, "dihedral: op must be in [0,8)");
    const int c = chw.dim(0), h = chw.dim(1), w = chw.dim(2);
    const int rot = op % 4;
    const bool flip = op >= 4;
    if (rot % 2 == 1 && h != w)
        fail("dihedral: 90-degree rotation requires a square patch, got " + std::to_string(h) + "x" +
             std::to_string(w));

    std::vector<double> out(chw.numel());
    const int64_t hw = static_cast<int64_t>(h) * w;
    for (int ch = 0; ch < c; ++ch)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                int sx = flip ? w - 1 - x : x;
                int sy = y;
                // inverse rotation maps output coords back into the source
                int ry = sy, rx = sx;
                switch (rot) {
                    case 1: ry = sx; rx = h - 1 - sy; break;          // 90 ccw output
                    case 2: ry = h - 1 - sy; rx = w - 1 - sx; break;  // 180
                    case 3: ry = w - 1 - sx; rx = sy; break;          // 270
                    default: break;
                }
                out[ch * hw + static_cast<int64_t>(y) * w + x] =
                    chw.data()[ch * hw + static_cast<int64_t>(ry) * w + rx];
            }
    return Tensor::from_data(chw.shape(), std::move(out));
}

} // namespace segsr
