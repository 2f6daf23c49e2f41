#pragma once

// Image files.
//
//   pgm8 / pgm16  binary PGM (P5), samples big-endian when maxval > 255,
//                 mapped linearly to [0, 1] as value / maxval. Binary PPM (P6)
//                 is accepted on read and converted with Rec. 601 luma
//                 weights (0.299, 0.587, 0.114).
//   f32raw        magic "DSPKIMG1", u32 rows, u32 cols, then rows*cols
//                 binary32 values, all little-endian, row-major.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>

#include "despeckle/binary_io.hpp"
#include "despeckle/image.hpp"

namespace despeckle {

enum class ImageFormat { pgm8, pgm16, f32raw };

inline constexpr std::string_view kImageMagic = "DSPKIMG1";

inline ImageFormat parse_image_format(const std::string& s) {
  if (s == "pgm8") return ImageFormat::pgm8;
  if (s == "pgm16") return ImageFormat::pgm16;
  if (s == "f32raw") return ImageFormat::f32raw;
  throw ConfigError("unknown image format '" + s + "' (expected pgm8, pgm16 or f32raw)");
}

/// pgm8 for .pgm/.pnm, f32raw otherwise.
inline ImageFormat format_from_extension(const std::filesystem::path& path) {
  auto ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return (ext == ".pgm" || ext == ".pnm") ? ImageFormat::pgm8 : ImageFormat::f32raw;
}

namespace detail {

class PnmHeaderParser {
 public:
  explicit PnmHeaderParser(const std::vector<std::uint8_t>& b) : b_(b) {}

  std::size_t pos() const noexcept { return pos_; }

  std::uint32_t number(const char* what) {
    skip_space_and_comments();
    const std::size_t start = pos_;
    std::uint64_t v = 0;
    while (pos_ < b_.size() && std::isdigit(b_[pos_])) {
      v = v * 10 + (b_[pos_] - '0');
      if (v > 0xFFFFFFFFu) throw FormatError(std::string("PNM: ") + what + " out of range", start);
      ++pos_;
    }
    if (pos_ == start) throw FormatError(std::string("PNM: expected ") + what, pos_);
    return static_cast<std::uint32_t>(v);
  }

  void single_whitespace() {
    if (pos_ >= b_.size() || !std::isspace(b_[pos_]))
      throw FormatError("PNM: expected whitespace before raster", pos_);
    ++pos_;
  }

 private:
  void skip_space_and_comments() {
    while (pos_ < b_.size()) {
      if (std::isspace(b_[pos_])) {
        ++pos_;
      } else if (b_[pos_] == '#') {
        while (pos_ < b_.size() && b_[pos_] != '\n') ++pos_;
      } else {
        break;
      }
    }
  }
  const std::vector<std::uint8_t>& b_;
  std::size_t pos_ = 2;
};

inline Image2D decode_pnm(const std::vector<std::uint8_t>& b) {
  if (b.size() < 2 || b[0] != 'P' || (b[1] != '5' && b[1] != '6'))
    throw FormatError("not a binary PGM/PPM (P5/P6) file", 0);
  const bool color = b[1] == '6';
  PnmHeaderParser p(b);
  const std::uint32_t cols = p.number("width");
  const std::uint32_t rows = p.number("height");
  const std::size_t maxval_at = p.pos();
  const std::uint32_t maxval = p.number("maxval");
  if (cols == 0 || rows == 0) throw FormatError("PNM: zero width or height", maxval_at);
  if (maxval == 0 || maxval > 65535) throw FormatError("PNM: maxval must be in [1, 65535]", maxval_at);
  p.single_whitespace();
  const std::size_t start = p.pos();
  const std::size_t bps = maxval > 255 ? 2 : 1;
  const std::size_t channels = color ? 3 : 1;
  const std::size_t need = static_cast<std::size_t>(rows) * cols * channels * bps;
  if (b.size() - start < need) throw FormatError("PNM: truncated raster", b.size());

  auto sample = [&](std::size_t k) -> double {
    const std::size_t at = start + k * bps;
    const std::uint32_t v = bps == 2 ? (static_cast<std::uint32_t>(b[at]) << 8) | b[at + 1] : b[at];
    return static_cast<double>(v) / static_cast<double>(maxval);
  };
  Image2D img(rows, cols);
  for (std::size_t i = 0; i < img.size(); ++i) {
    img[i] = color ? 0.299 * sample(3 * i) + 0.587 * sample(3 * i + 1) + 0.114 * sample(3 * i + 2)
                   : sample(i);
  }
  return img;
}

}  // namespace detail

inline std::vector<std::uint8_t> encode_image(const Image2D& img, ImageFormat fmt) {
  io::ByteWriter w;
  if (fmt == ImageFormat::f32raw) {
    w.bytes(kImageMagic);
    w.u32(static_cast<std::uint32_t>(img.rows()));
    w.u32(static_cast<std::uint32_t>(img.cols()));
    for (double v : img.data()) w.f32(static_cast<float>(v));
    return w.buffer();
  }
  const std::uint32_t maxval = fmt == ImageFormat::pgm8 ? 255 : 65535;
  w.bytes("P5\n" + std::to_string(img.cols()) + " " + std::to_string(img.rows()) + "\n" +
          std::to_string(maxval) + "\n");
  for (double v : img.data()) {
    const double c = std::isfinite(v) ? std::clamp(v, 0.0, 1.0) : 0.0;
    const auto q = static_cast<std::uint32_t>(std::lround(c * maxval));
    if (maxval > 255) w.u8(static_cast<std::uint8_t>(q >> 8));
    w.u8(static_cast<std::uint8_t>(q & 0xFF));
  }
  return w.buffer();
}

/// Detects the format from the leading bytes.
inline Image2D decode_image(const std::vector<std::uint8_t>& bytes) {
  io::ByteReader r(bytes, "DSPKIMG1");
  if (r.peek_magic(kImageMagic)) {
    r.expect_magic(kImageMagic);
    const std::uint32_t rows = r.u32(), cols = r.u32();
    if (rows == 0 || cols == 0) r.fail("zero rows or cols");
    if (r.remaining() / 4 / cols < rows) r.fail("truncated raster");
    Image2D img(rows, cols);
    for (double& v : img.data()) v = r.f32();
    if (!r.at_end()) r.fail("trailing bytes after raster");
    return img;
  }
  return detail::decode_pnm(bytes);
}

inline Image2D read_image(const std::filesystem::path& path) { return decode_image(io::read_file(path)); }

inline void write_image(const Image2D& img, const std::filesystem::path& path, ImageFormat fmt) {
  io::write_file_atomic(path, encode_image(img, fmt));
}

inline void write_image(const Image2D& img, const std::filesystem::path& path) {
  write_image(img, path, format_from_extension(path));
}

}  // namespace despeckle
