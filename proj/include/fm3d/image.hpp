#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace fm3d {

// Square RGB image stored as 8-bit levels (HWC). Values are exposed as
// level / 255 in [0, 1]; every bit-exactness claim in the project refers to
// this quantized form, which is also what the PNG files hold.
class ImageGrid {
public:
    ImageGrid() = default;
    explicit ImageGrid(int size);

    int size() const noexcept { return size_; }
    int height() const noexcept { return size_; }
    int width() const noexcept { return size_; }
    static constexpr int channels() noexcept { return 3; }
    bool empty() const noexcept { return size_ == 0; }

    std::uint8_t level(int y, int x, int c) const { return px_[index(y, x, c)]; }
    void set_level(int y, int x, int c, std::uint8_t v) { px_[index(y, x, c)] = v; }
    float at(int y, int x, int c) const { return level(y, x, c) / 255.0f; }
    // Rounds to the nearest level after clamping to [0, 1].
    void set(int y, int x, int c, double v);

    const std::vector<std::uint8_t>& levels() const noexcept { return px_; }
    std::vector<std::uint8_t>& levels() noexcept { return px_; }

    friend bool operator==(const ImageGrid&, const ImageGrid&) = default;

private:
    std::size_t index(int y, int x, int c) const {
        return (static_cast<std::size_t>(y) * size_ + x) * 3 + c;
    }

    int size_ = 0;
    std::vector<std::uint8_t> px_;
};

std::uint8_t quantize(double v) noexcept;

// Binary mask, row-major, 1 where any channel of the image is non-zero.
using Mask = std::vector<std::uint8_t>;

std::string encode_png(const ImageGrid& img);
// Throws ShapeError for non-square images, IoError for undecodable data.
ImageGrid decode_png(std::string_view bytes);
void write_png(const std::filesystem::path& path, const ImageGrid& img);
ImageGrid read_png(const std::filesystem::path& path);

std::string base64_encode(std::string_view bytes);
// Throws IoError on malformed input.
std::string base64_decode(std::string_view text);

// Dimensions of a PNG payload without decoding pixels; throws IoError.
std::pair<int, int> png_dimensions(std::string_view bytes);

} // namespace fm3d
