#pragma once

// Procedural probing datasets: base grating/blob classes, RandBit channel
// concatenation, glyph overlay by channel addition, k-bit entropy images,
// the view augmentation pipeline and the two-view batch sampler.

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <numbers>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "clab/rng.hpp"
#include "clab/tensor.hpp"

namespace clab {

class DatasetError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Wrong magic number or malformed header in an IDX or dataset blob.
class FormatError : public DatasetError {
 public:
  using DatasetError::DatasetError;
};

class TruncatedFileError : public DatasetError {
 public:
  using DatasetError::DatasetError;
};

class CountMismatchError : public DatasetError {
 public:
  using DatasetError::DatasetError;
};

/// H x W x C image, row-major with channels innermost, values in [0, 1].
struct Image {
  std::size_t height = 0, width = 0, channels = 0;
  std::vector<double> pixels;

  Image() = default;
  Image(std::size_t h, std::size_t w, std::size_t c, double fill = 0.0)
      : height(h), width(w), channels(c), pixels(h * w * c, fill) {}

  double& at(std::size_t y, std::size_t x, std::size_t c) { return pixels[(y * width + x) * channels + c]; }
  double at(std::size_t y, std::size_t x, std::size_t c) const { return pixels[(y * width + x) * channels + c]; }

  friend bool operator==(const Image&, const Image&) = default;
};

enum class LabelField { Base, Glyph, Bit };

inline const char* to_string(LabelField f) {
  switch (f) {
    case LabelField::Base:
      return "base";
    case LabelField::Glyph:
      return "glyph";
    case LabelField::Bit:
      return "bit";
  }
  return "?";
}

/// Images sharing one shape plus per-image labels. Bit channels, when present,
/// are the trailing `bit_channels` channels.
struct LabeledDataset {
  std::vector<Image> images;
  std::vector<int> base_label;
  std::optional<std::vector<int>> glyph_label;
  std::optional<std::vector<std::uint32_t>> bit_label;
  std::size_t bit_channels = 0;

  std::size_t size() const { return images.size(); }
  std::size_t height() const { return images.empty() ? 0 : images[0].height; }
  std::size_t width() const { return images.empty() ? 0 : images[0].width; }
  std::size_t channels() const { return images.empty() ? 0 : images[0].channels; }

  bool has(LabelField f) const {
    switch (f) {
      case LabelField::Base:
        return !base_label.empty();
      case LabelField::Glyph:
        return glyph_label.has_value();
      case LabelField::Bit:
        return bit_label.has_value();
    }
    return false;
  }

  /// Labels of one field as ints; throws DatasetError if the field is absent.
  std::vector<int> labels(LabelField f) const {
    if (!has(f)) throw DatasetError(std::string("dataset has no '") + to_string(f) + "' labels");
    switch (f) {
      case LabelField::Base:
        return base_label;
      case LabelField::Glyph:
        return *glyph_label;
      case LabelField::Bit:
        return {bit_label->begin(), bit_label->end()};
    }
    return {};
  }

  friend bool operator==(const LabeledDataset&, const LabeledDataset&) = default;
};

/// Number of distinct label values (max + 1).
inline int num_classes(const std::vector<int>& labels) {
  return labels.empty() ? 0 : *std::max_element(labels.begin(), labels.end()) + 1;
}

// ---------------------------------------------------------------------------
// Base dataset

/// Procedural 3-channel images. The class fixes grating orientation (confined
/// to [0, pi/2] so horizontal flips do not alias classes), grating frequency and
/// the hue of a Gaussian blob; phase, contrast, blob position and pixel noise
/// vary per image.
inline LabeledDataset make_base_dataset(int num_classes, int per_class, std::size_t hw, Rng& rng) {
  if (num_classes < 2) throw DatasetError("make_base_dataset: need at least 2 classes");
  if (per_class < 1) throw DatasetError("make_base_dataset: per_class must be positive");
  if (hw < 8) throw DatasetError("make_base_dataset: image size must be at least 8, got " + std::to_string(hw));
  LabeledDataset ds;
  const double side = static_cast<double>(hw);
  for (int c = 0; c < num_classes; ++c) {
    const double theta = 0.5 * std::numbers::pi * c / (num_classes - 1);
    const double freq = 1.5 + (c % 3);
    const double hue = static_cast<double>(c) / num_classes;
    std::array<double, 3> color{};
    for (int ch = 0; ch < 3; ++ch) {
      color[ch] = 0.5 + 0.5 * std::cos(2.0 * std::numbers::pi * (hue - ch / 3.0));
    }
    for (int k = 0; k < per_class; ++k) {
      Image img(hw, hw, 3);
      const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
      const double contrast = rng.uniform(0.18, 0.3);
      const double bx = rng.uniform(0.2, 0.8) * side, by = rng.uniform(0.2, 0.8) * side;
      const double sigma = 0.15 * side;
      for (std::size_t y = 0; y < hw; ++y)
        for (std::size_t x = 0; x < hw; ++x) {
          const double u = (x * std::cos(theta) + y * std::sin(theta)) / side;
          const double grating = contrast * std::sin(2.0 * std::numbers::pi * freq * u + phase);
          const double dx = x - bx, dy = y - by;
          const double blob = 0.35 * std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
          for (int ch = 0; ch < 3; ++ch) {
            const double v = 0.4 + grating + blob * color[ch] + 0.04 * rng.normal();
            img.at(y, x, ch) = std::clamp(v, 0.0, 1.0);
          }
        }
      ds.images.push_back(std::move(img));
      ds.base_label.push_back(c);
    }
  }
  return ds;
}

// ---------------------------------------------------------------------------
// RandBit channel concatenation and entropy datasets

inline constexpr int kMaxBits = 24;

/// Appends k spatially constant binary channels encoding a uniform integer in [0, 2^k).
inline LabeledDataset inject_rand_bits(const LabeledDataset& ds, int k, Rng& rng) {
  if (k < 0 || k > kMaxBits) throw DatasetError("inject_rand_bits: k must be in [0, 24], got " + std::to_string(k));
  if (k == 0) return ds;
  if (ds.bit_channels != 0) throw DatasetError("inject_rand_bits: dataset already carries bit channels");
  LabeledDataset out = ds;
  out.bit_channels = static_cast<std::size_t>(k);
  out.bit_label.emplace();
  for (auto& img : out.images) {
    const auto u = static_cast<std::uint32_t>(rng.below(std::uint64_t{1} << k));
    Image grown(img.height, img.width, img.channels + k);
    for (std::size_t p = 0; p < img.height * img.width; ++p) {
      std::copy_n(img.pixels.begin() + p * img.channels, img.channels, grown.pixels.begin() + p * grown.channels);
      for (int t = 0; t < k; ++t) grown.pixels[p * grown.channels + img.channels + t] = (u >> t) & 1u;
    }
    img = std::move(grown);
    out.bit_label->push_back(u);
  }
  return out;
}

/// hw x hw x k images whose channel t is constant and equal to bit t of a uniform u.
inline LabeledDataset make_entropy_dataset(int k, std::size_t size, std::size_t hw, Rng& rng) {
  if (k < 1 || k > kMaxBits) throw DatasetError("make_entropy_dataset: k must be in [1, 24], got " + std::to_string(k));
  if (size == 0 || hw == 0) throw DatasetError("make_entropy_dataset: size and hw must be positive");
  LabeledDataset ds;
  ds.bit_channels = static_cast<std::size_t>(k);
  ds.bit_label.emplace();
  for (std::size_t i = 0; i < size; ++i) {
    const auto u = static_cast<std::uint32_t>(rng.below(std::uint64_t{1} << k));
    Image img(hw, hw, k);
    for (std::size_t p = 0; p < hw * hw; ++p)
      for (int t = 0; t < k; ++t) img.pixels[p * k + t] = (u >> t) & 1u;
    ds.images.push_back(std::move(img));
    ds.base_label.push_back(0);
    ds.bit_label->push_back(u);
  }
  return ds;
}

/// Expected number of distinct values among `draws` uniform draws from 2^k values.
inline double expected_distinct(int k, std::size_t draws) {
  const double m = std::ldexp(1.0, k);
  return m * (1.0 - std::pow(1.0 - 1.0 / m, static_cast<double>(draws)));
}

/// Shannon entropy (bits) of the empirical label distribution.
inline double empirical_entropy_bits(const std::vector<int>& labels) {
  std::vector<int> sorted = labels;
  std::sort(sorted.begin(), sorted.end());
  double h = 0.0;
  const double n = static_cast<double>(sorted.size());
  for (std::size_t i = 0; i < sorted.size();) {
    std::size_t j = i;
    while (j < sorted.size() && sorted[j] == sorted[i]) ++j;
    const double p = (j - i) / n;
    h -= p * std::log2(p);
    i = j;
  }
  return h;
}

// ---------------------------------------------------------------------------
// Glyph overlay

struct Glyph {
  std::size_t size = 0;
  std::vector<std::uint8_t> bits;  // size x size, row-major
  int label = 0;
};

namespace detail {

// 5x5 digit-like templates, one string per row.
inline const std::array<std::array<const char*, 5>, 10> kDigitTemplates = {{
    {"01110", "10001", "10001", "10001", "01110"},
    {"00100", "01100", "00100", "00100", "01110"},
    {"11110", "00001", "01110", "10000", "11111"},
    {"11110", "00001", "00110", "00001", "11110"},
    {"10010", "10010", "11111", "00010", "00010"},
    {"11111", "10000", "11110", "00001", "11110"},
    {"01110", "10000", "11110", "10001", "01110"},
    {"11111", "00010", "00100", "01000", "01000"},
    {"01110", "10001", "01110", "10001", "01110"},
    {"01110", "10001", "01111", "00001", "01110"},
}};

}  // namespace detail

/// Digit-like 5x5 glyph bank: `per_digit` noisy instances of each of 10
/// templates (each pixel flipped with probability `flip`). Instance order
/// interleaves digits so any prefix is class-balanced.
inline std::vector<Glyph> make_glyph_bank(int per_digit, Rng& rng, double flip = 0.12) {
  std::vector<Glyph> bank;
  for (int i = 0; i < per_digit; ++i)
    for (int d = 0; d < 10; ++d) {
      Glyph g{5, std::vector<std::uint8_t>(25), d};
      for (std::size_t y = 0; y < 5; ++y)
        for (std::size_t x = 0; x < 5; ++x) {
          std::uint8_t on = detail::kDigitTemplates[d][y][x] == '1';
          if (i > 0 && rng.bernoulli(flip)) on ^= 1u;
          g.bits[y * 5 + x] = on;
        }
      bank.push_back(std::move(g));
    }
  return bank;
}

/// Top-left corner of the glyph placed at the center of cell (row, col) of a 3x3 grid.
inline std::pair<std::size_t, std::size_t> glyph_origin(std::size_t h, std::size_t w, std::size_t glyph, int row,
                                                        int col) {
  const std::size_t cy = (2 * row + 1) * h / 6, cx = (2 * col + 1) * w / 6;
  return {cy - glyph / 2, cx - glyph / 2};
}

/// Adds one glyph (selected among the first `num_unique` bank entries) to the
/// base channels of every image at the 9 centers of a 3x3 grid, then clips.
/// glyph_label is the glyph's digit class.
inline LabeledDataset overlay_glyphs(const LabeledDataset& ds, int num_unique, const std::vector<Glyph>& bank, Rng& rng,
                                     double intensity = 1.0) {
  if (num_unique < 1) throw DatasetError("overlay_glyphs: num_unique must be >= 1");
  if (static_cast<std::size_t>(num_unique) > bank.size()) {
    throw DatasetError("overlay_glyphs: glyph bank holds only " + std::to_string(bank.size()) + " glyphs");
  }
  LabeledDataset out = ds;
  if (out.images.empty()) return out;
  const std::size_t h = out.height(), w = out.width();
  const std::size_t cell = std::min(h, w) / 3;
  for (int i = 0; i < num_unique; ++i) {
    if (bank[i].size > cell) {
      throw DatasetError("overlay_glyphs: glyph of size " + std::to_string(bank[i].size) +
                         " does not fit a grid cell of " + std::to_string(cell));
    }
  }
  const std::size_t base_channels = out.channels() - out.bit_channels;
  out.glyph_label.emplace();
  for (auto& img : out.images) {
    const Glyph& g = bank[rng.below(static_cast<std::uint64_t>(num_unique))];
    for (int row = 0; row < 3; ++row)
      for (int col = 0; col < 3; ++col) {
        const auto [oy, ox] = glyph_origin(h, w, g.size, row, col);
        for (std::size_t y = 0; y < g.size; ++y)
          for (std::size_t x = 0; x < g.size; ++x) {
            if (!g.bits[y * g.size + x]) continue;
            for (std::size_t c = 0; c < base_channels; ++c) {
              double& v = img.at(oy + y, ox + x, c);
              v = std::min(1.0, v + intensity);
            }
          }
      }
    out.glyph_label->push_back(g.label);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Augmentation

/// View augmentation: random square crop resized back bilinearly, horizontal
/// flip, per-channel affine jitter. Trailing bit channels are never augmented.
struct AugmentSpec {
  double crop_min = 0.3;
  double crop_max = 1.0;
  double flip_prob = 0.5;
  double jitter_scale = 0.4;  // multiplicative factor drawn from [1 - s, 1 + s]
  double jitter_shift = 0.2;  // additive offset drawn from [-s, s]

  static AugmentSpec identity() { return {1.0, 1.0, 0.0, 0.0, 0.0}; }

  void validate() const {
    if (!(crop_min > 0.0 && crop_min <= crop_max && crop_max <= 1.0)) {
      throw DatasetError("AugmentSpec: crop range must satisfy 0 < min <= max <= 1");
    }
    if (flip_prob < 0.0 || flip_prob > 1.0) throw DatasetError("AugmentSpec: flip probability outside [0, 1]");
    if (jitter_scale < 0.0 || jitter_shift < 0.0) throw DatasetError("AugmentSpec: negative jitter strength");
  }
};

inline Image augment(const Image& img, const AugmentSpec& spec, std::size_t bit_channels, Rng& rng) {
  const std::size_t h = img.height, w = img.width, c = img.channels;
  const std::size_t base = c - bit_channels;
  Image out = img;

  const double area = rng.uniform(spec.crop_min, spec.crop_max);
  const double side = std::sqrt(area);
  const double ch = side * h, cw = side * w;
  const double y0 = rng.uniform(0.0, h - ch), x0 = rng.uniform(0.0, w - cw);
  const bool flip = rng.bernoulli(spec.flip_prob);
  std::vector<double> gain(base), shift(base);
  for (std::size_t k = 0; k < base; ++k) {
    gain[k] = 1.0 + rng.uniform(-spec.jitter_scale, spec.jitter_scale);
    shift[k] = rng.uniform(-spec.jitter_shift, spec.jitter_shift);
  }
  const bool identity_crop = area == 1.0;

  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      const std::size_t xs = flip ? w - 1 - x : x;
      for (std::size_t k = 0; k < base; ++k) {
        double v;
        if (identity_crop) {
          v = img.at(y, xs, k);
        } else {
          // pixel-center sampling inside the crop window
          const double sy = std::clamp(y0 + (y + 0.5) * ch / h - 0.5, 0.0, h - 1.0);
          const double sx = std::clamp(x0 + (xs + 0.5) * cw / w - 0.5, 0.0, w - 1.0);
          const auto iy = static_cast<std::size_t>(sy), ix = static_cast<std::size_t>(sx);
          const std::size_t iy1 = std::min(iy + 1, h - 1), ix1 = std::min(ix + 1, w - 1);
          const double fy = sy - iy, fx = sx - ix;
          v = (1 - fy) * ((1 - fx) * img.at(iy, ix, k) + fx * img.at(iy, ix1, k)) +
              fy * ((1 - fx) * img.at(iy1, ix, k) + fx * img.at(iy1, ix1, k));
        }
        out.at(y, x, k) = std::clamp(gain[k] * v + shift[k], 0.0, 1.0);
      }
    }
  return out;
}

/// 2n interleaved augmented views (rows 2m, 2m+1 from source indices[m]) as a
/// 2n x H x W x C tensor.
struct TwoViewBatch {
  Tensor views;
  std::vector<std::size_t> indices;
};

/// Draws n distinct indices from [0, size) by partial Fisher-Yates.
inline std::vector<std::size_t> sample_without_replacement(std::size_t size, std::size_t n, Rng& rng) {
  std::vector<std::size_t> idx(size);
  for (std::size_t i = 0; i < size; ++i) idx[i] = i;
  for (std::size_t i = 0; i < n; ++i) std::swap(idx[i], idx[i + rng.below(size - i)]);
  idx.resize(n);
  return idx;
}

/// Copies images into an N x H x W x C tensor.
inline Tensor stack_images(const LabeledDataset& ds, const std::vector<std::size_t>& indices) {
  const std::size_t px = ds.height() * ds.width() * ds.channels();
  Tensor out({indices.size(), ds.height(), ds.width(), ds.channels()});
  for (std::size_t i = 0; i < indices.size(); ++i) {
    std::copy(ds.images[indices[i]].pixels.begin(), ds.images[indices[i]].pixels.end(), out.values().begin() + i * px);
  }
  return out;
}

inline TwoViewBatch two_view_batch(const LabeledDataset& ds, std::size_t n, const AugmentSpec& spec, Rng& rng) {
  if (n == 0 || n > ds.size()) {
    throw DatasetError("two_view_batch: cannot draw " + std::to_string(n) + " images from " +
                       std::to_string(ds.size()));
  }
  spec.validate();
  TwoViewBatch b;
  b.indices = sample_without_replacement(ds.size(), n, rng);
  const std::size_t px = ds.height() * ds.width() * ds.channels();
  b.views = Tensor({2 * n, ds.height(), ds.width(), ds.channels()});
  for (std::size_t m = 0; m < n; ++m) {
    for (std::size_t v = 0; v < 2; ++v) {
      Image view = augment(ds.images[b.indices[m]], spec, ds.bit_channels, rng);
      std::copy(view.pixels.begin(), view.pixels.end(), b.views.values().begin() + (2 * m + v) * px);
    }
  }
  return b;
}

// ---------------------------------------------------------------------------
// IDX ingestion

namespace detail {

inline std::vector<unsigned char> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DatasetError("cannot open " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline std::uint32_t read_be32(const std::vector<unsigned char>& buf, std::size_t off, const std::string& path) {
  if (off + 4 > buf.size()) throw TruncatedFileError(path + ": truncated IDX header");
  return (std::uint32_t{buf[off]} << 24) | (std::uint32_t{buf[off + 1]} << 16) | (std::uint32_t{buf[off + 2]} << 8) |
         std::uint32_t{buf[off + 3]};
}

inline void write_be32(std::ofstream& out, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v >> 24), static_cast<unsigned char>(v >> 16),
                              static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

}  // namespace detail

inline constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;

/// Loads an IDX image file (uint8, N x rows x cols) and its label file as a
/// single-channel dataset scaled to [0, 1].
inline LabeledDataset load_idx_dataset(const std::string& images_path, const std::string& labels_path) {
  const auto ib = detail::read_file(images_path);
  const auto lb = detail::read_file(labels_path);
  if (detail::read_be32(ib, 0, images_path) != kIdxImagesMagic) throw FormatError(images_path + ": bad IDX image magic");
  if (detail::read_be32(lb, 0, labels_path) != kIdxLabelsMagic) throw FormatError(labels_path + ": bad IDX label magic");
  const std::size_t n = detail::read_be32(ib, 4, images_path);
  const std::size_t rows = detail::read_be32(ib, 8, images_path);
  const std::size_t cols = detail::read_be32(ib, 12, images_path);
  const std::size_t nl = detail::read_be32(lb, 4, labels_path);
  if (n != nl) {
    throw CountMismatchError("IDX count mismatch: " + std::to_string(n) + " images vs " + std::to_string(nl) + " labels");
  }
  if (rows == 0 || cols == 0) throw FormatError(images_path + ": zero image dimension");
  if (ib.size() < 16 + n * rows * cols) throw TruncatedFileError(images_path + ": truncated pixel data");
  if (lb.size() < 8 + n) throw TruncatedFileError(labels_path + ": truncated label data");
  LabeledDataset ds;
  for (std::size_t i = 0; i < n; ++i) {
    Image img(rows, cols, 1);
    for (std::size_t p = 0; p < rows * cols; ++p) img.pixels[p] = ib[16 + i * rows * cols + p] / 255.0;
    ds.images.push_back(std::move(img));
    ds.base_label.push_back(lb[8 + i]);
  }
  return ds;
}

/// Writes a single-channel dataset as an IDX image/label pair (pixels quantized to uint8).
inline void write_idx_dataset(const LabeledDataset& ds, const std::string& images_path,
                              const std::string& labels_path) {
  if (ds.channels() != 1) throw DatasetError("write_idx_dataset: only single-channel datasets");
  std::ofstream im(images_path, std::ios::binary), lb(labels_path, std::ios::binary);
  if (!im || !lb) throw DatasetError("write_idx_dataset: cannot open output");
  detail::write_be32(im, kIdxImagesMagic);
  detail::write_be32(im, static_cast<std::uint32_t>(ds.size()));
  detail::write_be32(im, static_cast<std::uint32_t>(ds.height()));
  detail::write_be32(im, static_cast<std::uint32_t>(ds.width()));
  for (const auto& img : ds.images)
    for (double v : img.pixels) im.put(static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0))));
  detail::write_be32(lb, kIdxLabelsMagic);
  detail::write_be32(lb, static_cast<std::uint32_t>(ds.size()));
  for (int l : ds.base_label) lb.put(static_cast<char>(l));
}

// ---------------------------------------------------------------------------
// Binary blob: magic, u32 version, u64 header length, JSON header, f64 LE payload.

inline constexpr char kDatasetMagic[8] = {'C', 'L', 'A', 'B', 'D', 'S', 'E', 'T'};
inline constexpr std::uint32_t kDatasetVersion = 1;

namespace detail {

template <typename T>
void put_le(std::string& out, T v) {
  static_assert(std::is_trivially_copyable_v<T>);
  char b[sizeof(T)];
  std::memcpy(b, &v, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(T));
  out.append(b, sizeof(T));
}

template <typename T>
T get_le(const std::string& in, std::size_t& off, const char* what) {
  if (off + sizeof(T) > in.size()) throw TruncatedFileError(std::string("truncated ") + what);
  char b[sizeof(T)];
  std::memcpy(b, in.data() + off, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(T));
  off += sizeof(T);
  T v;
  std::memcpy(&v, b, sizeof(T));
  return v;
}

}  // namespace detail

inline std::string serialize_dataset(const LabeledDataset& ds) {
  nlohmann::json header = {
      {"version", kDatasetVersion},
      {"count", ds.size()},
      {"height", ds.height()},
      {"width", ds.width()},
      {"channels", ds.channels()},
      {"bit_channels", ds.bit_channels},
      {"base_label", ds.base_label},
      {"glyph_label", ds.glyph_label ? nlohmann::json(*ds.glyph_label) : nlohmann::json(nullptr)},
      {"bit_label", ds.bit_label ? nlohmann::json(*ds.bit_label) : nlohmann::json(nullptr)},
  };
  const std::string text = header.dump();
  std::string out(kDatasetMagic, 8);
  detail::put_le<std::uint32_t>(out, kDatasetVersion);
  detail::put_le<std::uint64_t>(out, text.size());
  out += text;
  for (const auto& img : ds.images)
    for (double v : img.pixels) detail::put_le<double>(out, v);
  return out;
}

inline LabeledDataset deserialize_dataset(const std::string& blob) {
  if (blob.size() < 8 || std::memcmp(blob.data(), kDatasetMagic, 8) != 0) throw FormatError("dataset blob: bad magic");
  std::size_t off = 8;
  const auto version = detail::get_le<std::uint32_t>(blob, off, "dataset version");
  if (version != kDatasetVersion) throw FormatError("dataset blob: unsupported version " + std::to_string(version));
  const auto len = detail::get_le<std::uint64_t>(blob, off, "dataset header length");
  if (off + len > blob.size()) throw TruncatedFileError("dataset blob: truncated header");
  nlohmann::json h;
  try {
    h = nlohmann::json::parse(blob.substr(off, len));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("dataset blob: bad header: ") + e.what());
  }
  off += len;
  LabeledDataset ds;
  const auto n = h.at("count").get<std::size_t>();
  const auto hh = h.at("height").get<std::size_t>(), ww = h.at("width").get<std::size_t>();
  const auto cc = h.at("channels").get<std::size_t>();
  ds.bit_channels = h.at("bit_channels").get<std::size_t>();
  ds.base_label = h.at("base_label").get<std::vector<int>>();
  if (!h.at("glyph_label").is_null()) ds.glyph_label = h.at("glyph_label").get<std::vector<int>>();
  if (!h.at("bit_label").is_null()) ds.bit_label = h.at("bit_label").get<std::vector<std::uint32_t>>();
  if (ds.base_label.size() != n) throw CountMismatchError("dataset blob: label count mismatch");
  for (std::size_t i = 0; i < n; ++i) {
    Image img(hh, ww, cc);
    for (auto& v : img.pixels) v = detail::get_le<double>(blob, off, "dataset payload");
    ds.images.push_back(std::move(img));
  }
  return ds;
}

}  // namespace clab
