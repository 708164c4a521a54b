#include "msafeb/image.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <string>

#include "msafeb/errors.hpp"

namespace msafeb {

namespace {

// Next whitespace-delimited header token, skipping '#' comments.
std::string header_token(std::istream& in) {
  std::string tok;
  int ch;
  while ((ch = in.get()) != EOF) {
    if (ch == '#') {
      while ((ch = in.get()) != EOF && ch != '\n') {
      }
      continue;
    }
    if (std::isspace(ch)) {
      if (!tok.empty()) return tok;
      continue;
    }
    tok.push_back(static_cast<char>(ch));
  }
  return tok;
}

std::size_t header_number(std::istream& in, const std::filesystem::path& path, const char* field) {
  const std::string tok = header_token(in);
  if (tok.empty() || !std::all_of(tok.begin(), tok.end(), [](char c) { return std::isdigit(c); })) {
    throw FormatError(path.string() + ": bad PPM " + field + " '" + tok + "'");
  }
  return std::stoul(tok);
}

}  // namespace

Image read_ppm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  const std::string magic = header_token(in);
  if (magic != "P6") throw FormatError(path.string() + ": bad magic '" + magic + "', expected P6");
  const std::size_t w = header_number(in, path, "width");
  const std::size_t h = header_number(in, path, "height");
  const std::size_t maxval = header_number(in, path, "maxval");
  if (w == 0 || h == 0) throw FormatError(path.string() + ": zero image extent");
  if (maxval != 255) throw FormatError(path.string() + ": unsupported maxval " + std::to_string(maxval));
  // header_token consumed the single whitespace byte after maxval.
  Image img(w, h);
  in.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
  if (static_cast<std::size_t>(in.gcount()) != img.pixels.size()) {
    throw FormatError(path.string() + ": truncated pixel data");
  }
  return img;
}

void write_ppm(const std::filesystem::path& path, const Image& image) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot open " + path.string() + " for writing");
  out << "P6\n" << image.width << " " << image.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(image.pixels.data()),
            static_cast<std::streamsize>(image.pixels.size()));
  if (!out) throw FormatError("write failed: " + path.string());
}

Image resize_bilinear(const Image& src, std::size_t width, std::size_t height) {
  Image dst(width, height);
  const double sx = double(src.width) / double(width);
  const double sy = double(src.height) / double(height);
  for (std::size_t y = 0; y < height; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, double(src.height - 1));
    const auto y0 = static_cast<std::size_t>(fy);
    const std::size_t y1 = std::min(y0 + 1, src.height - 1);
    const double ty = fy - double(y0);
    for (std::size_t x = 0; x < width; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, double(src.width - 1));
      const auto x0 = static_cast<std::size_t>(fx);
      const std::size_t x1 = std::min(x0 + 1, src.width - 1);
      const double tx = fx - double(x0);
      for (std::size_t c = 0; c < 3; ++c) {
        const double top = src.at(x0, y0, c) * (1.0 - tx) + src.at(x1, y0, c) * tx;
        const double bot = src.at(x0, y1, c) * (1.0 - tx) + src.at(x1, y1, c) * tx;
        const double v = top * (1.0 - ty) + bot * ty;
        dst.at(x, y, c) = static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
      }
    }
  }
  return dst;
}

Image crop(const Image& src, std::size_t x0, std::size_t y0, std::size_t width,
           std::size_t height) {
  if (x0 + width > src.width || y0 + height > src.height || width == 0 || height == 0) {
    throw UsageError("crop: window outside image");
  }
  Image dst(width, height);
  for (std::size_t y = 0; y < height; ++y) {
    std::copy_n(src.pixels.begin() + ((y0 + y) * src.width + x0) * 3, width * 3,
                dst.pixels.begin() + y * width * 3);
  }
  return dst;
}

Image flip_horizontal(const Image& src) {
  Image dst(src.width, src.height);
  for (std::size_t y = 0; y < src.height; ++y)
    for (std::size_t x = 0; x < src.width; ++x)
      for (std::size_t c = 0; c < 3; ++c) dst.at(src.width - 1 - x, y, c) = src.at(x, y, c);
  return dst;
}

std::vector<float> to_gray(const Image& src) {
  std::vector<float> g(src.width * src.height);
  for (std::size_t i = 0; i < g.size(); ++i) {
    g[i] = 0.299f * src.pixels[3 * i] + 0.587f * src.pixels[3 * i + 1] +
           0.114f * src.pixels[3 * i + 2];
  }
  return g;
}

}  // namespace msafeb
