// SPDX-License-Identifier: Apache-2.0
//
// 8-bit RGB raster with PNG and PPM (P6) file support. PNG covers
// non-interlaced 8-bit grayscale/RGB/RGBA inputs; everything is written
// back as RGB.
#pragma once

#include <zlib.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "mfir/core.hpp"

namespace mfir {

struct Image {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> rgb;  // row-major, 3 bytes per pixel

  Image() = default;
  Image(int w, int h, std::uint8_t fill = 255)
      : width(w), height(h), rgb(static_cast<std::size_t>(w) * h * 3, fill) {}

  std::uint8_t& at(int y, int x, int c) {
    return rgb[(static_cast<std::size_t>(y) * width + x) * 3 + c];
  }
  std::uint8_t at(int y, int x, int c) const {
    return rgb[(static_cast<std::size_t>(y) * width + x) * 3 + c];
  }
  bool same_pixels(const Image& o) const {
    return width == o.width && height == o.height && rgb == o.rgb;
  }
};

inline std::uint64_t pixel_hash(const Image& img) {
  std::uint64_t h = fnv1a64(&img.width, sizeof(img.width));
  h = fnv1a64(&img.height, sizeof(img.height), h);
  return fnv1a64(img.rgb.data(), img.rgb.size(), h);
}

namespace png_detail {

inline void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  out.push_back(static_cast<std::uint8_t>(v >> 24));
  out.push_back(static_cast<std::uint8_t>(v >> 16));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
  out.push_back(static_cast<std::uint8_t>(v));
}

inline std::uint32_t get_u32(const std::uint8_t* p) {
  return (static_cast<std::uint32_t>(p[0]) << 24) |
         (static_cast<std::uint32_t>(p[1]) << 16) |
         (static_cast<std::uint32_t>(p[2]) << 8) | p[3];
}

inline void write_chunk(std::vector<std::uint8_t>& out, const char type[5],
                        const std::vector<std::uint8_t>& data) {
  put_u32(out, static_cast<std::uint32_t>(data.size()));
  std::size_t crc_start = out.size();
  out.insert(out.end(), type, type + 4);
  out.insert(out.end(), data.begin(), data.end());
  std::uint32_t crc = static_cast<std::uint32_t>(
      ::crc32(0L, out.data() + crc_start, static_cast<uInt>(4 + data.size())));
  put_u32(out, crc);
}

inline int paeth(int a, int b, int c) {
  const int p = a + b - c;
  const int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
  if (pa <= pb && pa <= pc) return a;
  if (pb <= pc) return b;
  return c;
}

}  // namespace png_detail

inline std::vector<std::uint8_t> encode_png(const Image& img) {
  require(img.width > 0 && img.height > 0, "encode_png: empty image");
  const std::size_t stride = static_cast<std::size_t>(img.width) * 3;
  std::vector<std::uint8_t> raw;
  raw.reserve((stride + 1) * img.height);
  for (int y = 0; y < img.height; ++y) {
    raw.push_back(0);  // filter: none
    const std::uint8_t* row = img.rgb.data() + y * stride;
    raw.insert(raw.end(), row, row + stride);
  }

  uLongf bound = ::compressBound(static_cast<uLong>(raw.size()));
  std::vector<std::uint8_t> compressed(bound);
  int rc = ::compress2(compressed.data(), &bound, raw.data(),
                       static_cast<uLong>(raw.size()), 6);
  require(rc == Z_OK, "encode_png: deflate failed (", rc, ")");
  compressed.resize(bound);

  std::vector<std::uint8_t> out;
  static const std::uint8_t sig[8] = {137, 80, 78, 71, 13, 10, 26, 10};
  out.insert(out.end(), sig, sig + 8);

  std::vector<std::uint8_t> ihdr;
  png_detail::put_u32(ihdr, static_cast<std::uint32_t>(img.width));
  png_detail::put_u32(ihdr, static_cast<std::uint32_t>(img.height));
  ihdr.push_back(8);  // bit depth
  ihdr.push_back(2);  // color type: truecolor
  ihdr.push_back(0);  // compression
  ihdr.push_back(0);  // filter
  ihdr.push_back(0);  // interlace
  png_detail::write_chunk(out, "IHDR", ihdr);
  png_detail::write_chunk(out, "IDAT", compressed);
  png_detail::write_chunk(out, "IEND", {});
  return out;
}

inline Image decode_png(const std::vector<std::uint8_t>& bytes,
                        const std::string& origin = "<memory>") {
  static const std::uint8_t sig[8] = {137, 80, 78, 71, 13, 10, 26, 10};
  require(bytes.size() > 8 && std::memcmp(bytes.data(), sig, 8) == 0,
          origin, ": not a PNG file");

  int width = 0, height = 0, channels = 0;
  std::vector<std::uint8_t> idat;
  bool saw_ihdr = false;
  std::size_t pos = 8;
  while (pos + 8 <= bytes.size()) {
    std::uint32_t len = png_detail::get_u32(bytes.data() + pos);
    require(pos + 12 + len <= bytes.size(), origin, ": truncated PNG chunk");
    std::string type(reinterpret_cast<const char*>(bytes.data() + pos + 4), 4);
    const std::uint8_t* data = bytes.data() + pos + 8;
    if (type == "IHDR") {
      require(len == 13, origin, ": bad IHDR length");
      width = static_cast<int>(png_detail::get_u32(data));
      height = static_cast<int>(png_detail::get_u32(data + 4));
      int depth = data[8], color = data[9], interlace = data[12];
      require(depth == 8, origin, ": unsupported PNG bit depth ", depth);
      require(interlace == 0, origin, ": interlaced PNG not supported");
      switch (color) {
        case 0: channels = 1; break;
        case 2: channels = 3; break;
        case 4: channels = 2; break;
        case 6: channels = 4; break;
        default: fail(origin, ": unsupported PNG color type ", color);
      }
      saw_ihdr = true;
    } else if (type == "IDAT") {
      idat.insert(idat.end(), data, data + len);
    } else if (type == "IEND") {
      break;
    }
    pos += 12 + len;
  }
  require(saw_ihdr && !idat.empty(), origin, ": missing PNG image data");
  require(width > 0 && height > 0, origin, ": bad PNG dimensions");

  const std::size_t stride = static_cast<std::size_t>(width) * channels;
  std::vector<std::uint8_t> raw((stride + 1) * height);
  uLongf raw_len = static_cast<uLongf>(raw.size());
  int rc = ::uncompress(raw.data(), &raw_len, idat.data(),
                        static_cast<uLong>(idat.size()));
  require(rc == Z_OK && raw_len == raw.size(), origin,
          ": corrupt PNG pixel data");

  // Undo per-row filters in place (bpp = channels at 8-bit depth).
  std::vector<std::uint8_t> pix(stride * height);
  const int bpp = channels;
  for (int y = 0; y < height; ++y) {
    const std::uint8_t filter = raw[y * (stride + 1)];
    const std::uint8_t* src = raw.data() + y * (stride + 1) + 1;
    std::uint8_t* dst = pix.data() + y * stride;
    const std::uint8_t* up = y > 0 ? pix.data() + (y - 1) * stride : nullptr;
    for (std::size_t i = 0; i < stride; ++i) {
      const int a = i >= static_cast<std::size_t>(bpp) ? dst[i - bpp] : 0;
      const int b = up ? up[i] : 0;
      const int c = (up && i >= static_cast<std::size_t>(bpp)) ? up[i - bpp] : 0;
      int v = src[i];
      switch (filter) {
        case 0: break;
        case 1: v += a; break;
        case 2: v += b; break;
        case 3: v += (a + b) / 2; break;
        case 4: v += png_detail::paeth(a, b, c); break;
        default: fail(origin, ": unknown PNG filter ", int(filter));
      }
      dst[i] = static_cast<std::uint8_t>(v & 0xff);
    }
  }

  Image img(width, height);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      const std::uint8_t* p = pix.data() + y * stride + x * channels;
      std::uint8_t r, g, b;
      switch (channels) {
        case 1: r = g = b = p[0]; break;
        case 2: {
          // gray + alpha over white
          const int a = p[1];
          r = g = b = static_cast<std::uint8_t>((p[0] * a + 255 * (255 - a)) / 255);
          break;
        }
        case 3: r = p[0]; g = p[1]; b = p[2]; break;
        default: {
          const int a = p[3];
          r = static_cast<std::uint8_t>((p[0] * a + 255 * (255 - a)) / 255);
          g = static_cast<std::uint8_t>((p[1] * a + 255 * (255 - a)) / 255);
          b = static_cast<std::uint8_t>((p[2] * a + 255 * (255 - a)) / 255);
          break;
        }
      }
      img.at(y, x, 0) = r;
      img.at(y, x, 1) = g;
      img.at(y, x, 2) = b;
    }
  }
  return img;
}

inline std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), "cannot open file: ", path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return bytes;
}

inline void write_file_bytes(const std::filesystem::path& path,
                             const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary);
  require(out.good(), "cannot open file for writing: ", path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  require(out.good(), "short write: ", path.string());
}

inline Image decode_ppm(const std::vector<std::uint8_t>& bytes,
                        const std::string& origin) {
  require(bytes.size() > 2 && bytes[0] == 'P' && bytes[1] == '6', origin,
          ": not a P6 PPM file");
  std::size_t pos = 2;
  auto next_int = [&]() {
    while (pos < bytes.size() &&
           (std::isspace(bytes[pos]) || bytes[pos] == '#')) {
      if (bytes[pos] == '#')
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      else
        ++pos;
    }
    int v = 0;
    bool any = false;
    while (pos < bytes.size() && std::isdigit(bytes[pos])) {
      v = v * 10 + (bytes[pos] - '0');
      ++pos;
      any = true;
    }
    require(any, origin, ": malformed PPM header");
    return v;
  };
  const int w = next_int(), h = next_int(), maxval = next_int();
  require(maxval == 255, origin, ": only maxval 255 PPM supported");
  ++pos;  // single whitespace after maxval
  const std::size_t need = static_cast<std::size_t>(w) * h * 3;
  require(bytes.size() >= pos + need, origin, ": truncated PPM pixel data");
  Image img(w, h);
  std::memcpy(img.rgb.data(), bytes.data() + pos, need);
  return img;
}

// Reads a PNG or PPM image file; the format is detected from the content.
inline Image read_image(const std::filesystem::path& path) {
  auto bytes = read_file_bytes(path);
  require(bytes.size() >= 2, path.string(), ": empty image file");
  if (bytes[0] == 'P' && bytes[1] == '6') return decode_ppm(bytes, path.string());
  if (bytes[0] == 137 && bytes[1] == 'P') return decode_png(bytes, path.string());
  fail(path.string(), ": unsupported image format (PNG and P6 PPM supported)");
}

inline void write_png(const std::filesystem::path& path, const Image& img) {
  write_file_bytes(path, encode_png(img));
}

// Bilinear resize. Returns the input unchanged when sizes already match.
inline Image resize_image(const Image& src, int width, int height) {
  require(width > 0 && height > 0, "resize_image: bad target size");
  if (src.width == width && src.height == height) return src;
  Image out(width, height);
  const double sx = static_cast<double>(src.width) / width;
  const double sy = static_cast<double>(src.height) / height;
  for (int y = 0; y < height; ++y) {
    const double fy = (y + 0.5) * sy - 0.5;
    const int y0 = std::clamp(static_cast<int>(std::floor(fy)), 0,
                              src.height - 1);
    const int y1 = std::min(y0 + 1, src.height - 1);
    const double wy = std::clamp(fy - y0, 0.0, 1.0);
    for (int x = 0; x < width; ++x) {
      const double fx = (x + 0.5) * sx - 0.5;
      const int x0 = std::clamp(static_cast<int>(std::floor(fx)), 0,
                                src.width - 1);
      const int x1 = std::min(x0 + 1, src.width - 1);
      const double wx = std::clamp(fx - x0, 0.0, 1.0);
      for (int c = 0; c < 3; ++c) {
        const double top = (1.0 - wx) * src.at(y0, x0, c) + wx * src.at(y0, x1, c);
        const double bot = (1.0 - wx) * src.at(y1, x0, c) + wx * src.at(y1, x1, c);
        out.at(y, x, c) =
            static_cast<std::uint8_t>(std::lround((1.0 - wy) * top + wy * bot));
      }
    }
  }
  return out;
}

}  // namespace mfir
