#include "fm3d/image.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include <boost/beast/core/detail/base64.hpp>
#include <png.h>

#include "fm3d/errors.hpp"

namespace fm3d {

ImageGrid::ImageGrid(int size) : size_(size), px_(static_cast<std::size_t>(size) * size * 3, 0) {
    if (size <= 0) throw ShapeError("ImageGrid: size must be positive");
}

std::uint8_t quantize(double v) noexcept {
    if (!(v > 0.0)) return 0; // also maps NaN to 0
    if (v >= 1.0) return 255;
    return static_cast<std::uint8_t>(std::lround(v * 255.0));
}

void ImageGrid::set(int y, int x, int c, double v) { px_[index(y, x, c)] = quantize(v); }

namespace {

struct PngReadState {
    std::string_view data;
    std::size_t pos = 0;
};

void png_read_fn(png_structp png, png_bytep out, png_size_t n) {
    auto* st = static_cast<PngReadState*>(png_get_io_ptr(png));
    if (st->pos + n > st->data.size()) png_error(png, "truncated PNG");
    std::memcpy(out, st->data.data() + st->pos, n);
    st->pos += n;
}

void png_write_fn(png_structp png, png_bytep in, png_size_t n) {
    auto* out = static_cast<std::string*>(png_get_io_ptr(png));
    out->append(reinterpret_cast<const char*>(in), n);
}

void png_flush_fn(png_structp) {}

[[noreturn]] void png_error_fn(png_structp, png_const_charp msg) { throw IoError(std::string("PNG: ") + msg); }
void png_warning_fn(png_structp, png_const_charp) {}

} // namespace

std::string encode_png(const ImageGrid& img) {
    if (img.empty()) throw ShapeError("encode_png: empty image");
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, png_error_fn, png_warning_fn);
    png_infop info = png_create_info_struct(png);
    std::string out;
    try {
        png_set_write_fn(png, &out, png_write_fn, png_flush_fn);
        png_set_IHDR(png, info, img.width(), img.height(), 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
                     PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
        png_write_info(png, info);
        const auto& px = img.levels();
        for (int y = 0; y < img.height(); ++y)
            png_write_row(png, const_cast<png_bytep>(px.data() + static_cast<std::size_t>(y) * img.width() * 3));
        png_write_end(png, nullptr);
    } catch (...) {
        png_destroy_write_struct(&png, &info);
        throw;
    }
    png_destroy_write_struct(&png, &info);
    return out;
}

std::pair<int, int> png_dimensions(std::string_view bytes) {
    static constexpr unsigned char kSig[8] = {0x89, 'P', 'N', 'G', 0x0D, 0x0A, 0x1A, 0x0A};
    if (bytes.size() < 24 || std::memcmp(bytes.data(), kSig, 8) != 0) throw IoError("not a PNG payload");
    auto be32 = [&](std::size_t off) {
        const auto* b = reinterpret_cast<const unsigned char*>(bytes.data() + off);
        return (int(b[0]) << 24) | (int(b[1]) << 16) | (int(b[2]) << 8) | int(b[3]);
    };
    return {be32(16), be32(20)};
}

ImageGrid decode_png(std::string_view bytes) {
    const auto [w, h] = png_dimensions(bytes);
    if (w != h) throw ShapeError("decode_png: image must be square, got " + std::to_string(w) + "x" + std::to_string(h));
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, png_error_fn, png_warning_fn);
    png_infop info = png_create_info_struct(png);
    PngReadState st{bytes, 0};
    ImageGrid img;
    try {
        png_set_read_fn(png, &st, png_read_fn);
        png_read_info(png, info);
        png_set_expand(png);
        png_set_strip_16(png);
        png_set_strip_alpha(png);
        png_set_gray_to_rgb(png);
        png_read_update_info(png, info);
        if (png_get_channels(png, info) != 3) throw IoError("decode_png: unsupported channel layout");
        img = ImageGrid(w);
        auto& px = img.levels();
        for (int y = 0; y < h; ++y) png_read_row(png, px.data() + static_cast<std::size_t>(y) * w * 3, nullptr);
    } catch (...) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw;
    }
    png_destroy_read_struct(&png, &info, nullptr);
    return img;
}

void write_png(const std::filesystem::path& path, const ImageGrid& img) {
    const std::string bytes = encode_png(img);
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot write " + path.string());
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw IoError("write failed: " + path.string());
}

ImageGrid read_png(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot read " + path.string());
    std::ostringstream ss;
    ss << f.rdbuf();
    return decode_png(ss.str());
}

std::string base64_encode(std::string_view bytes) {
    namespace b64 = boost::beast::detail::base64;
    std::string out(b64::encoded_size(bytes.size()), '\0');
    out.resize(b64::encode(out.data(), bytes.data(), bytes.size()));
    return out;
}

std::string base64_decode(std::string_view text) {
    namespace b64 = boost::beast::detail::base64;
    if (text.size() % 4 != 0) throw IoError("malformed base64 payload");
    // The decoder stops at padding; strip it and require the rest to be consumed.
    std::size_t body = text.size();
    for (int i = 0; i < 2 && body > 0 && text[body - 1] == '='; ++i) --body;
    std::string out(b64::decoded_size(text.size()), '\0');
    const auto [written, read] = b64::decode(out.data(), text.data(), body);
    if (read != body) throw IoError("malformed base64 payload");
    out.resize(written);
    return out;
}

} // namespace fm3d
