#pragma once

#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "ldif/errors.hpp"
#include "ldif/numerics/tensor.hpp"

namespace ldif {

namespace fs = std::filesystem;

// Writes to a sibling temporary file and renames it over `path`, so readers
// never observe a partially written file.
inline void write_file_atomic(const fs::path& path, std::string_view bytes) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp." + std::to_string(::getpid());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot open " + tmp.string() + " for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) throw Error("write failed: " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) {
    fs::remove(tmp);
    throw Error("cannot rename " + tmp.string() + " to " + path.string() + ": " + ec.message());
  }
}

inline std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// 17 significant digits: enough to round-trip any double.
inline std::string format_double(double v) {
  std::ostringstream os;
  os << std::setprecision(std::numeric_limits<double>::max_digits10) << v;
  return os.str();
}

// [-1, 1] -> [0, 255], rounding half away from zero, clamped.
inline std::uint8_t to_pixel(double v) {
  const double p = std::round((v + 1.0) * 127.5);
  return static_cast<std::uint8_t>(std::clamp(p, 0.0, 255.0));
}

// Binary PGM (1 channel) or PPM (3 channels) of images [N, C, H, W] tiled
// row-major into a grid `cols` images wide.
template <class T>
std::string encode_image_grid(const Tensor<T>& images, std::size_t cols) {
  if (images.rank() != 4) throw ShapeError("image grid expects [N, C, H, W], got " + shape_str(images.shape()));
  const std::size_t n = images.dim(0), c = images.dim(1), h = images.dim(2), w = images.dim(3);
  if (c != 1 && c != 3) throw ShapeError("image grid supports 1 or 3 channels, got " + std::to_string(c));
  if (cols == 0) throw ConfigError("image grid needs at least one column");
  cols = std::min(cols, n);
  const std::size_t rows = (n + cols - 1) / cols;
  const std::size_t W = cols * w, H = rows * h;
  std::string out = (c == 1 ? "P5\n" : "P6\n") + std::to_string(W) + " " + std::to_string(H) + "\n255\n";
  const std::size_t header = out.size();
  out.resize(header + W * H * c, '\0');
  auto* px = reinterpret_cast<unsigned char*>(out.data() + header);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t oy = (i / cols) * h, ox = (i % cols) * w;
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        for (std::size_t ch = 0; ch < c; ++ch) {
          const double v = static_cast<double>(images[((i * c + ch) * h + y) * w + x]);
          px[((oy + y) * W + ox + x) * c + ch] = to_pixel(v);
        }
      }
    }
  }
  return out;
}

template <class T>
void write_image_grid(const fs::path& path, const Tensor<T>& images, std::size_t cols) {
  write_file_atomic(path, encode_image_grid(images, cols));
}

// Grayscale PGM of a matrix with values in [-1, 1].
inline std::string encode_heatmap(const std::vector<std::vector<double>>& m) {
  const std::size_t h = m.size(), w = h ? m[0].size() : 0;
  std::string out = "P5\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
  for (const auto& row : m) {
    for (double v : row) out.push_back(static_cast<char>(to_pixel(v)));
  }
  return out;
}

}  // namespace ldif
