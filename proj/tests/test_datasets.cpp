#include <gtest/gtest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>

#include "clab/datasets.hpp"
#include "clab/models.hpp"

using namespace clab;

namespace {

LabeledDataset small_base(std::uint64_t seed, int classes = 4, int per_class = 5) {
  Rng rng(seed);
  return make_base_dataset(classes, per_class, 16, rng);
}

bool pixels_in_unit_interval(const LabeledDataset& ds) {
  for (const auto& img : ds.images)
    for (double v : img.pixels)
      if (!(v >= 0.0 && v <= 1.0)) return false;
  return true;
}

std::filesystem::path temp_path(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("clab_test_" + name);
}

void write_bytes(const std::filesystem::path& p, const std::vector<unsigned char>& bytes) {
  std::ofstream out(p, std::ios::binary);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace

TEST(BaseDataset, ShapeAndBalancedLabels) {
  Rng rng(1);
  const auto ds = make_base_dataset(10, 100, 16, rng);
  ASSERT_EQ(ds.size(), 1000u);
  EXPECT_EQ(ds.height(), 16u);
  EXPECT_EQ(ds.width(), 16u);
  EXPECT_EQ(ds.channels(), 3u);
  std::vector<int> counts(10, 0);
  for (int l : ds.base_label) ++counts.at(l);
  for (int c : counts) EXPECT_EQ(c, 100);
  EXPECT_TRUE(pixels_in_unit_interval(ds));
}

TEST(BaseDataset, SameSeedIsBitIdentical) {
  EXPECT_EQ(small_base(7), small_base(7));
  EXPECT_NE(small_base(7), small_base(8));
}

TEST(BaseDataset, RejectsBadArguments) {
  Rng rng(1);
  EXPECT_THROW(make_base_dataset(1, 10, 16, rng), DatasetError);
  EXPECT_THROW(make_base_dataset(3, 10, 7, rng), DatasetError);
  EXPECT_THROW(make_base_dataset(3, 0, 16, rng), DatasetError);
}

// Regression baseline: a linear probe on raw pixels, 1000 training images and
// 500 held-out images, scores 0.678 (chance is 0.1).
TEST(BaseDataset, RawPixelProbeBeatsChance) {
  Rng train_rng(11), eval_rng(12), probe_rng(13);
  const auto train = make_base_dataset(10, 100, 16, train_rng);
  const auto eval = make_base_dataset(10, 50, 16, eval_rng);
  auto flat = [](const LabeledDataset& ds) {
    std::vector<std::size_t> idx(ds.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    return stack_images(ds, idx).reshaped({ds.size(), ds.height() * ds.width() * ds.channels()});
  };
  const auto probe = linear_probe(flat(train), train.base_label, 10, 300, 1.0, probe_rng);
  const double acc = probe.classifier.accuracy(flat(eval), eval.base_label);
  EXPECT_GT(acc, 0.2);
  EXPECT_NEAR(acc, 0.678, 0.02);
}

TEST(RandBits, ZeroBitsIsIdentity) {
  const auto ds = small_base(2);
  Rng rng(3);
  EXPECT_EQ(inject_rand_bits(ds, 0, rng), ds);
}

TEST(RandBits, AppendsConstantBinaryChannels) {
  const auto ds = small_base(2);
  Rng rng(3);
  const auto out = inject_rand_bits(ds, 4, rng);
  ASSERT_EQ(out.channels(), 7u);
  EXPECT_EQ(out.bit_channels, 4u);
  ASSERT_TRUE(out.bit_label.has_value());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const auto& img = out.images[i];
    const std::uint32_t u = (*out.bit_label)[i];
    EXPECT_LT(u, 16u);
    for (std::size_t y = 0; y < img.height; ++y)
      for (std::size_t x = 0; x < img.width; ++x) {
        for (std::size_t c = 0; c < 3; ++c) EXPECT_EQ(img.at(y, x, c), ds.images[i].at(y, x, c));
        for (int t = 0; t < 4; ++t) EXPECT_EQ(img.at(y, x, 3 + t), static_cast<double>((u >> t) & 1u));
      }
  }
}

TEST(RandBits, RejectsOutOfRange) {
  const auto ds = small_base(2);
  Rng rng(3);
  EXPECT_THROW(inject_rand_bits(ds, -1, rng), DatasetError);
  EXPECT_THROW(inject_rand_bits(ds, 25, rng), DatasetError);
  const auto once = inject_rand_bits(ds, 2, rng);
  EXPECT_THROW(inject_rand_bits(once, 2, rng), DatasetError);
}

TEST(RandBits, DistinctCountMatchesBirthdayOracle) {
  // Average over several draws; the standard error of the mean distinct count
  // is well under 1% of the expectation at these sizes.
  for (int k : {4, 8, 12}) {
    const std::size_t n = 1000;
    double mean_distinct = 0.0;
    const int trials = 20;
    for (int t = 0; t < trials; ++t) {
      Rng rng(derive_seed(99, k, t));
      const auto ds = make_entropy_dataset(k, n, 1, rng);
      std::set<std::uint32_t> distinct(ds.bit_label->begin(), ds.bit_label->end());
      mean_distinct += static_cast<double>(distinct.size()) / trials;
    }
    const double expect = expected_distinct(k, n);
    EXPECT_NEAR(mean_distinct / expect, 1.0, 0.02) << "k=" << k;
    EXPECT_LT(expect, std::min(std::ldexp(1.0, k), static_cast<double>(n)) + 1e-9);
  }
}

TEST(RandBits, RealizedEntropyBelowNominalBits) {
  Rng rng(5);
  const auto ds = inject_rand_bits(make_base_dataset(4, 250, 8, rng), 12, rng);
  const std::vector<int> labels(ds.bit_label->begin(), ds.bit_label->end());
  const double h = empirical_entropy_bits(labels);
  EXPECT_LT(h, 12.0);
  EXPECT_LE(h, std::log2(static_cast<double>(ds.size())) + 1e-12);
}

TEST(EntropyDataset, AtMostTwoToTheKDistinctImages) {
  Rng rng(4);
  const auto ds = make_entropy_dataset(3, 100, 8, rng);
  std::set<std::vector<double>> distinct;
  for (const auto& img : ds.images) distinct.insert(img.pixels);
  EXPECT_LE(distinct.size(), 8u);
  EXPECT_EQ(ds.channels(), 3u);
  EXPECT_EQ(ds.bit_channels, 3u);
}

TEST(EntropyDataset, ChannelsAreSpatiallyConstant) {
  Rng rng(4);
  const auto ds = make_entropy_dataset(5, 30, 8, rng);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto& img = ds.images[i];
    for (std::size_t c = 0; c < 5; ++c) {
      const double v0 = img.at(0, 0, c);
      EXPECT_EQ(v0, static_cast<double>(((*ds.bit_label)[i] >> c) & 1u));
      for (std::size_t y = 0; y < 8; ++y)
        for (std::size_t x = 0; x < 8; ++x) EXPECT_EQ(img.at(y, x, c), v0);
    }
  }
}

TEST(EntropyDataset, EntropyMatchesOracleWithinSamplingTolerance) {
  // For uniform draws, E[H] is close to log2(E[distinct]) when most values
  // are singletons or pairs; 5% tolerance covers both the gap and sampling noise.
  Rng rng(8);
  const int k = 10;
  const std::size_t n = 2000;
  const auto ds = make_entropy_dataset(k, n, 1, rng);
  const std::vector<int> labels(ds.bit_label->begin(), ds.bit_label->end());
  const double h = empirical_entropy_bits(labels);
  EXPECT_LT(h, k);
  EXPECT_NEAR(h, std::log2(expected_distinct(k, n)), 0.05 * k);
}

TEST(EntropyDataset, RejectsOutOfRange) {
  Rng rng(1);
  EXPECT_THROW(make_entropy_dataset(0, 10, 8, rng), DatasetError);
  EXPECT_THROW(make_entropy_dataset(25, 10, 8, rng), DatasetError);
}

TEST(Glyphs, SingleUniqueGlyphGivesIdenticalLabels) {
  const auto ds = small_base(6);
  Rng rng(1);
  const auto bank = make_glyph_bank(3, rng);
  const auto out = overlay_glyphs(ds, 1, bank, rng);
  ASSERT_TRUE(out.glyph_label.has_value());
  for (int l : *out.glyph_label) EXPECT_EQ(l, (*out.glyph_label)[0]);
}

TEST(Glyphs, PixelsOutsideFootprintsUnchanged) {
  const auto ds = small_base(6);
  Rng rng(2);
  const auto bank = make_glyph_bank(3, rng);
  const auto out = overlay_glyphs(ds, 30, bank, rng, 0.5);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    std::vector<bool> covered(16 * 16, false);
    for (int row = 0; row < 3; ++row)
      for (int col = 0; col < 3; ++col) {
        const auto [oy, ox] = glyph_origin(16, 16, 5, row, col);
        for (std::size_t y = 0; y < 5; ++y)
          for (std::size_t x = 0; x < 5; ++x) covered[(oy + y) * 16 + ox + x] = true;
      }
    for (std::size_t p = 0; p < covered.size(); ++p) {
      if (covered[p]) continue;
      for (std::size_t c = 0; c < 3; ++c) EXPECT_EQ(out.images[i].pixels[p * 3 + c], ds.images[i].pixels[p * 3 + c]);
    }
  }
  EXPECT_TRUE(pixels_in_unit_interval(out));
}

TEST(Glyphs, ZeroImageShowsExactPatternAtNineCenters) {
  LabeledDataset ds;
  ds.images.push_back(Image(18, 18, 2));
  ds.base_label.push_back(0);
  Rng rng(3);
  const auto bank = make_glyph_bank(1, rng);
  const auto out = overlay_glyphs(ds, 10, bank, rng, 1.0);
  const Glyph& g = bank[(*out.glyph_label)[0]];
  ASSERT_EQ(g.label, (*out.glyph_label)[0]);
  std::size_t lit = 0;
  for (int row = 0; row < 3; ++row)
    for (int col = 0; col < 3; ++col) {
      const auto [oy, ox] = glyph_origin(18, 18, 5, row, col);
      for (std::size_t y = 0; y < 5; ++y)
        for (std::size_t x = 0; x < 5; ++x)
          for (std::size_t c = 0; c < 2; ++c) {
            EXPECT_EQ(out.images[0].at(oy + y, ox + x, c), static_cast<double>(g.bits[y * 5 + x]));
            lit += g.bits[y * 5 + x];
          }
    }
  double total = 0.0;
  for (double v : out.images[0].pixels) total += v;
  EXPECT_EQ(total, static_cast<double>(lit));
}

TEST(Glyphs, BitChannelsAreNotTouched) {
  Rng rng(9);
  const auto ds = inject_rand_bits(small_base(6), 3, rng);
  const auto bank = make_glyph_bank(2, rng);
  const auto out = overlay_glyphs(ds, 20, bank, rng, 1.0);
  for (std::size_t i = 0; i < ds.size(); ++i)
    for (std::size_t p = 0; p < 256; ++p)
      for (std::size_t c = 3; c < 6; ++c) EXPECT_EQ(out.images[i].pixels[p * 6 + c], ds.images[i].pixels[p * 6 + c]);
}

TEST(Glyphs, RejectsBadArguments) {
  const auto ds = small_base(6);
  Rng rng(1);
  const auto bank = make_glyph_bank(1, rng);
  EXPECT_THROW(overlay_glyphs(ds, 0, bank, rng), DatasetError);
  EXPECT_THROW(overlay_glyphs(ds, 11, bank, rng), DatasetError);
  LabeledDataset tiny;
  tiny.images.push_back(Image(12, 12, 1));
  tiny.base_label.push_back(0);
  EXPECT_THROW(overlay_glyphs(tiny, 1, bank, rng), DatasetError);
}

TEST(Augment, IdentitySpecIsIdentity) {
  const auto ds = small_base(3);
  Rng rng(4);
  for (const auto& img : ds.images) EXPECT_EQ(augment(img, AugmentSpec::identity(), 0, rng), img);
}

TEST(Augment, BitChannelsPassThroughExactly) {
  Rng rng(5);
  const auto ds = inject_rand_bits(small_base(3), 6, rng);
  for (const auto& img : ds.images) {
    const Image out = augment(img, AugmentSpec{}, 6, rng);
    for (std::size_t p = 0; p < 256; ++p)
      for (std::size_t c = 3; c < 9; ++c) EXPECT_EQ(out.pixels[p * 9 + c], img.pixels[p * 9 + c]);
  }
}

TEST(Augment, DifferentStreamsDiffer) {
  const auto ds = small_base(3);
  Rng a(1), b(2);
  EXPECT_NE(augment(ds.images[0], AugmentSpec{}, 0, a).pixels, augment(ds.images[0], AugmentSpec{}, 0, b).pixels);
}

TEST(Augment, OutputStaysInUnitInterval) {
  AugmentSpec strong;
  strong.jitter_scale = 1.0;
  strong.jitter_shift = 0.8;
  Rng rng(6);
  const auto ds = small_base(3);
  for (int rep = 0; rep < 5; ++rep)
    for (const auto& img : ds.images)
      for (double v : augment(img, strong, 0, rng).pixels) ASSERT_TRUE(v >= 0.0 && v <= 1.0);
}

TEST(Augment, ValidatesSpec) {
  EXPECT_THROW((AugmentSpec{0.0, 1.0, 0.5, 0.1, 0.1}.validate()), DatasetError);
  EXPECT_THROW((AugmentSpec{0.5, 1.2, 0.5, 0.1, 0.1}.validate()), DatasetError);
  EXPECT_THROW((AugmentSpec{0.5, 1.0, 1.5, 0.1, 0.1}.validate()), DatasetError);
  EXPECT_THROW((AugmentSpec{0.5, 1.0, 0.5, -0.1, 0.1}.validate()), DatasetError);
  EXPECT_NO_THROW(AugmentSpec{}.validate());
}

TEST(TwoViewBatch, PairsShareBitChannelsAndLabelsAlign) {
  Rng rng(7);
  const auto ds = inject_rand_bits(small_base(4), 5, rng);
  const auto b = two_view_batch(ds, 8, AugmentSpec{}, rng);
  ASSERT_EQ(b.views.shape(), (Shape{16, 16, 16, 8}));
  std::set<std::size_t> distinct(b.indices.begin(), b.indices.end());
  EXPECT_EQ(distinct.size(), 8u);
  const std::size_t px = 16 * 16 * 8;
  for (std::size_t m = 0; m < 8; ++m) {
    const auto& src = ds.images[b.indices[m]];
    for (std::size_t p = 0; p < 256; ++p)
      for (std::size_t c = 3; c < 8; ++c) {
        EXPECT_EQ(b.views[2 * m * px + p * 8 + c], b.views[(2 * m + 1) * px + p * 8 + c]);
        EXPECT_EQ(b.views[2 * m * px + p * 8 + c], src.pixels[p * 8 + c]);
      }
  }
  for (double v : b.views.values()) ASSERT_TRUE(v >= 0.0 && v <= 1.0);
}

TEST(TwoViewBatch, IdentitySpecGivesIdenticalPairs) {
  Rng rng(8);
  const auto ds = small_base(4);
  const auto b = two_view_batch(ds, 5, AugmentSpec::identity(), rng);
  const std::size_t px = 16 * 16 * 3;
  for (std::size_t m = 0; m < 5; ++m)
    for (std::size_t i = 0; i < px; ++i) {
      EXPECT_EQ(b.views[2 * m * px + i], b.views[(2 * m + 1) * px + i]);
      EXPECT_EQ(b.views[2 * m * px + i], ds.images[b.indices[m]].pixels[i]);
    }
}

TEST(TwoViewBatch, RejectsOversizedBatch) {
  Rng rng(8);
  const auto ds = small_base(4);
  EXPECT_THROW(two_view_batch(ds, ds.size() + 1, AugmentSpec{}, rng), DatasetError);
  EXPECT_THROW(two_view_batch(ds, 0, AugmentSpec{}, rng), DatasetError);
}

TEST(Idx, RoundTripsPixelExact) {
  LabeledDataset ds;
  for (int i = 0; i < 4; ++i) {
    Image img(3, 2, 1);
    for (std::size_t p = 0; p < 6; ++p) img.pixels[p] = ((i * 37 + p * 11) % 256) / 255.0;
    ds.images.push_back(img);
    ds.base_label.push_back(i % 3);
  }
  const auto ip = temp_path("rt_images.idx"), lp = temp_path("rt_labels.idx");
  write_idx_dataset(ds, ip.string(), lp.string());
  const auto back = load_idx_dataset(ip.string(), lp.string());
  EXPECT_EQ(back, ds);
  EXPECT_EQ(back.channels(), 1u);
  std::filesystem::remove(ip);
  std::filesystem::remove(lp);
}

TEST(Idx, MnistShapedInputIsSingleChannelUnitRange) {
  std::vector<unsigned char> im{0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 28, 0, 0, 0, 28};
  for (int i = 0; i < 2 * 28 * 28; ++i) im.push_back(static_cast<unsigned char>(i % 256));
  std::vector<unsigned char> lb{0, 0, 8, 1, 0, 0, 0, 2, 7, 3};
  const auto ip = temp_path("m_images.idx"), lp = temp_path("m_labels.idx");
  write_bytes(ip, im);
  write_bytes(lp, lb);
  const auto ds = load_idx_dataset(ip.string(), lp.string());
  EXPECT_EQ(ds.size(), 2u);
  EXPECT_EQ(ds.height(), 28u);
  EXPECT_EQ(ds.channels(), 1u);
  EXPECT_EQ(ds.base_label, (std::vector<int>{7, 3}));
  EXPECT_TRUE(pixels_in_unit_interval(ds));
  std::filesystem::remove(ip);
  std::filesystem::remove(lp);
}

TEST(Idx, DistinctErrors) {
  const auto ip = temp_path("e_images.idx"), lp = temp_path("e_labels.idx");
  const std::vector<unsigned char> good_im{0, 0, 8, 3, 0, 0, 0, 1, 0, 0, 0, 2, 0, 0, 0, 2, 1, 2, 3, 4};
  const std::vector<unsigned char> good_lb{0, 0, 8, 1, 0, 0, 0, 1, 5};

  write_bytes(ip, good_im);
  write_bytes(lp, {0, 0, 8, 3, 0, 0, 0, 1, 5});
  EXPECT_THROW(load_idx_dataset(ip.string(), lp.string()), FormatError);

  write_bytes(ip, {0, 0, 8, 3, 0, 0, 0, 1, 0, 0, 0, 2, 0, 0, 0, 2, 1, 2});
  write_bytes(lp, good_lb);
  EXPECT_THROW(load_idx_dataset(ip.string(), lp.string()), TruncatedFileError);

  write_bytes(ip, good_im);
  write_bytes(lp, {0, 0, 8, 1, 0, 0, 0, 2, 5, 6});
  EXPECT_THROW(load_idx_dataset(ip.string(), lp.string()), CountMismatchError);

  write_bytes(lp, good_lb);
  EXPECT_NO_THROW(load_idx_dataset(ip.string(), lp.string()));
  std::filesystem::remove(ip);
  std::filesystem::remove(lp);
}

TEST(DatasetBlob, RoundTripsAllLabelFields) {
  Rng rng(10);
  auto ds = inject_rand_bits(small_base(4), 3, rng);
  ds = overlay_glyphs(ds, 5, make_glyph_bank(1, rng), rng);
  EXPECT_EQ(deserialize_dataset(serialize_dataset(ds)), ds);
}

TEST(DatasetBlob, RejectsCorruption) {
  const std::string blob = serialize_dataset(small_base(4));
  EXPECT_THROW(deserialize_dataset("XXXXXXXX" + blob.substr(8)), FormatError);
  EXPECT_THROW(deserialize_dataset(blob.substr(0, blob.size() - 5)), TruncatedFileError);
}
