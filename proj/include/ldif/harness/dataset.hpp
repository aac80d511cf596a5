#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "ldif/diffusion/objective.hpp"
#include "ldif/errors.hpp"
#include "ldif/harness/io.hpp"
#include "ldif/numerics/rng.hpp"

namespace ldif {

// Endless stream of training batches with pixels in [-1, 1].
template <class T>
class DataSource {
 public:
  virtual ~DataSource() = default;
  virtual Shape image_shape() const = 0;       // [C, H, W]
  virtual std::size_t num_classes() const = 0;  // 0 for unlabeled data
  virtual TrainBatch<T> batch(SeededRng& rng, std::size_t n) const = 0;
  virtual std::string describe() const = 0;
};

// ---------------------------------------------------------------------------
// IDX files

struct IdxImages {
  std::size_t count = 0, rows = 0, cols = 0;
  std::vector<std::uint8_t> pixels;
};

namespace detail {

inline std::uint32_t read_be32(const std::string& bytes, std::size_t offset, const std::string& what) {
  if (bytes.size() < offset + 4) throw DataError(what + ": truncated header");
  std::uint32_t v = 0;
  for (std::size_t i = 0; i < 4; ++i) v = (v << 8) | static_cast<unsigned char>(bytes[offset + i]);
  return v;
}

}  // namespace detail

inline IdxImages parse_idx_images(const std::string& bytes, const std::string& what = "idx images") {
  const std::uint32_t magic = detail::read_be32(bytes, 0, what);
  if (magic != 0x00000803u) throw DataError(what + ": bad magic, expected 0x00000803 (u8 images)");
  IdxImages im;
  im.count = detail::read_be32(bytes, 4, what);
  im.rows = detail::read_be32(bytes, 8, what);
  im.cols = detail::read_be32(bytes, 12, what);
  if (im.count == 0 || im.rows == 0 || im.cols == 0) throw DataError(what + ": zero extent in header");
  const std::size_t n = im.count * im.rows * im.cols;
  if (bytes.size() < 16 + n) throw DataError(what + ": truncated, header promises " + std::to_string(n) + " pixels");
  im.pixels.assign(bytes.begin() + 16, bytes.begin() + 16 + static_cast<std::ptrdiff_t>(n));
  return im;
}

inline std::vector<std::uint8_t> parse_idx_labels(const std::string& bytes, const std::string& what = "idx labels") {
  const std::uint32_t magic = detail::read_be32(bytes, 0, what);
  if (magic != 0x00000801u) throw DataError(what + ": bad magic, expected 0x00000801 (u8 labels)");
  const std::size_t n = detail::read_be32(bytes, 4, what);
  if (bytes.size() < 8 + n) throw DataError(what + ": truncated, header promises " + std::to_string(n) + " labels");
  return std::vector<std::uint8_t>(bytes.begin() + 8, bytes.begin() + 8 + static_cast<std::ptrdiff_t>(n));
}

// u8 -> [-1, 1]: 0 -> -1, 255 -> +1.
template <class T>
T normalize_pixel(std::uint8_t p) {
  return static_cast<T>(static_cast<double>(p) / 127.5 - 1.0);
}

template <class T>
class IdxSource final : public DataSource<T> {
 public:
  static constexpr std::size_t kClasses = 10;

  IdxSource(const fs::path& images, const fs::path& labels) : path_(images.string()) {
    im_ = parse_idx_images(read_file(images), images.string());
    if (!labels.empty()) {
      labels_ = parse_idx_labels(read_file(labels), labels.string());
      if (labels_.size() != im_.count) {
        throw DataError("idx: " + std::to_string(im_.count) + " images but " + std::to_string(labels_.size()) +
                        " labels");
      }
      for (auto l : labels_) {
        if (l >= kClasses) throw DataError("idx: label " + std::to_string(l) + " outside 0..9");
      }
    }
  }

  std::size_t size() const { return im_.count; }
  Shape image_shape() const override { return {1, im_.rows, im_.cols}; }
  std::size_t num_classes() const override { return labels_.empty() ? 0 : kClasses; }
  std::string describe() const override { return "idx:" + path_ + " (" + std::to_string(im_.count) + " images)"; }

  TrainBatch<T> batch(SeededRng& rng, std::size_t n) const override {
    const std::size_t per = im_.rows * im_.cols;
    TrainBatch<T> b;
    b.x0 = Tensor<T>({n, 1, im_.rows, im_.cols});
    if (!labels_.empty()) b.class_vec = Tensor<T>({n, kClasses});
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t k = rng.uniform_int(0, im_.count - 1);
      for (std::size_t j = 0; j < per; ++j) b.x0[i * per + j] = normalize_pixel<T>(im_.pixels[k * per + j]);
      if (!labels_.empty()) b.class_vec.at(i, labels_[k]) = T{1};
    }
    return b;
  }

 private:
  std::string path_;
  IdxImages im_;
  std::vector<std::uint8_t> labels_;
};

// ---------------------------------------------------------------------------
// Procedural glyphs: ten shape kinds (the class label) drawn at +1 on a -1
// background, with random size and a few pixels of positional jitter.

inline bool glyph_covers(std::size_t kind, double dx, double dy, double s) {
  const double ax = std::abs(dx), ay = std::abs(dy), r = std::hypot(dx, dy);
  const double w = std::max(1.5, s / 3.0);
  switch (kind) {
    case 0: return ax <= s && ay <= s;                                       // filled square
    case 1: return ax <= s && ay <= s && (ax > s - w || ay > s - w);         // hollow square
    case 2: return r <= s;                                                   // disk
    case 3: return r <= s && r > s - w;                                      // ring
    case 4: return ax <= s && ay <= s / 3.0;                                 // horizontal bar
    case 5: return ay <= s && ax <= s / 3.0;                                 // vertical bar
    case 6: return (ax <= s && ay <= w / 2.0) || (ay <= s && ax <= w / 2.0);  // plus
    case 7: return ax <= s && ay <= s && std::abs(ax - ay) <= w / 2.0;       // cross
    case 8: return dy >= -s && dy <= s && ax <= (dy + s) / 2.0;              // triangle
    default: return ax + ay <= s;                                            // diamond
  }
}

template <class T>
void render_glyph(std::size_t kind, double cx, double cy, double s, std::size_t res, T* out) {
  for (std::size_t y = 0; y < res; ++y) {
    for (std::size_t x = 0; x < res; ++x) {
      const double dx = static_cast<double>(x) + 0.5 - cx, dy = static_cast<double>(y) + 0.5 - cy;
      out[y * res + x] = glyph_covers(kind, dx, dy, s) ? T{1} : T{-1};
    }
  }
}

template <class T>
class ShapesSource final : public DataSource<T> {
 public:
  static constexpr std::size_t kClasses = 10;

  explicit ShapesSource(std::size_t resolution = 28) : res_(resolution) {
    if (res_ < 8) throw ConfigError("synthetic:shapes needs a resolution of at least 8");
  }

  Shape image_shape() const override { return {1, res_, res_}; }
  std::size_t num_classes() const override { return kClasses; }
  std::string describe() const override { return "synthetic:shapes (" + std::to_string(res_) + "x" + std::to_string(res_) + ")"; }

  TrainBatch<T> batch(SeededRng& rng, std::size_t n) const override {
    const double R = static_cast<double>(res_), u = R / 28.0;
    TrainBatch<T> b;
    b.x0 = Tensor<T>({n, 1, res_, res_});
    b.class_vec = Tensor<T>({n, kClasses});
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t kind = rng.uniform_int(0, kClasses - 1);
      const double cx = R / 2.0 + u * (rng.uniform() * 4.0 - 2.0);
      const double cy = R / 2.0 + u * (rng.uniform() * 4.0 - 2.0);
      const double s = R * (0.22 + 0.1 * rng.uniform());
      render_glyph(kind, cx, cy, s, res_, b.x0.ptr() + i * res_ * res_);
      b.class_vec.at(i, kind) = T{1};
    }
    return b;
  }

 private:
  std::size_t res_;
};

// ---------------------------------------------------------------------------
// Gaussian mixture with equal weights: component j has mean mu_j in every
// coordinate (mu evenly spaced over [-0.5, 0.5], 0 for a single component)
// and per-coordinate standard deviation `std`.

template <class T>
class GaussMixSource final : public DataSource<T> {
 public:
  GaussMixSource(std::size_t components, double std, Shape shape)
      : k_(components), std_(std), shape_(std::move(shape)) {
    if (k_ == 0) throw ConfigError("gauss_mix needs at least one component");
    if (!(std_ >= 0.0)) throw ConfigError("gauss_mix std must be non-negative");
    for (std::size_t j = 0; j < k_; ++j) {
      means_.push_back(k_ == 1 ? 0.0 : -0.5 + static_cast<double>(j) / static_cast<double>(k_ - 1));
    }
  }

  const std::vector<double>& means() const { return means_; }
  double stddev() const { return std_; }
  Shape image_shape() const override { return shape_; }
  std::size_t num_classes() const override { return k_; }
  std::string describe() const override {
    return "synthetic:gauss_mix (k=" + std::to_string(k_) + ", std=" + format_double(std_) + ")";
  }

  TrainBatch<T> batch(SeededRng& rng, std::size_t n) const override {
    Shape s{n};
    s.insert(s.end(), shape_.begin(), shape_.end());
    TrainBatch<T> b;
    b.x0 = Tensor<T>(s);
    b.class_vec = Tensor<T>({n, k_});
    const std::size_t per = shape_size(shape_);
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t j = rng.uniform_int(0, k_ - 1);
      for (std::size_t c = 0; c < per; ++c) b.x0[i * per + c] = static_cast<T>(means_[j] + std_ * rng.normal());
      b.class_vec.at(i, j) = T{1};
    }
    return b;
  }

 private:
  std::size_t k_;
  double std_;
  Shape shape_;
  std::vector<double> means_;
};

// Dataset spec:
//   synthetic:shapes
//   synthetic:gauss_mix[:k=<components>,std=<s>,dim=<d>]   (dim absent: image-shaped)
//   idx:<images path>[,<labels path>]
template <class T>
std::unique_ptr<DataSource<T>> open_dataset(const std::string& spec, std::size_t resolution = 28) {
  if (spec == "synthetic:shapes") return std::make_unique<ShapesSource<T>>(resolution);
  const std::string gm = "synthetic:gauss_mix";
  if (spec.rfind(gm, 0) == 0 && (spec.size() == gm.size() || spec[gm.size()] == ':')) {
    std::size_t k = 2, dim = 0;
    double std = 0.3;
    if (spec.size() > gm.size()) {
      std::stringstream ss(spec.substr(gm.size() + 1));
      std::string item;
      while (std::getline(ss, item, ',')) {
        const auto eq = item.find('=');
        if (eq == std::string::npos) throw ConfigError("gauss_mix option '" + item + "' is not key=value");
        const std::string key = item.substr(0, eq), val = item.substr(eq + 1);
        try {
          if (key == "k") {
            k = std::stoul(val);
          } else if (key == "std") {
            std = std::stod(val);
          } else if (key == "dim") {
            dim = std::stoul(val);
          } else {
            throw ConfigError("unknown gauss_mix option '" + key + "'");
          }
        } catch (const std::logic_error&) {
          throw ConfigError("gauss_mix option '" + item + "' has a bad value");
        }
      }
    }
    Shape shape = dim ? Shape{1, 1, dim} : Shape{1, resolution, resolution};
    return std::make_unique<GaussMixSource<T>>(k, std, shape);
  }
  if (spec.rfind("idx:", 0) == 0) {
    const std::string rest = spec.substr(4);
    const auto comma = rest.find(',');
    const fs::path images = rest.substr(0, comma);
    const fs::path labels = comma == std::string::npos ? fs::path() : fs::path(rest.substr(comma + 1));
    if (!fs::exists(images)) throw DataError("dataset not found: " + images.string());
    if (!labels.empty() && !fs::exists(labels)) throw DataError("labels not found: " + labels.string());
    return std::make_unique<IdxSource<T>>(images, labels);
  }
  throw ConfigError("unknown dataset spec '" + spec + "' (synthetic:shapes | synthetic:gauss_mix | idx:<path>)");
}

}  // namespace ldif
