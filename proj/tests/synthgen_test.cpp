#include "mvx/synthgen.hpp"

#include <cmath>
#include <set>

#include <gtest/gtest.h>

#include "mvx/dataset_io.hpp"
#include "support.hpp"

namespace {

using mvx::GeneratedData;
using mvx::SyntheticSpec;
using mvx::testing::TempDir;

SyntheticSpec small_spec(std::uint64_t seed = 1) {
  SyntheticSpec spec;
  spec.schema = mvx::default_five_view_schema(32, 32);
  spec.n_samples = 12;
  spec.seed = seed;
  return spec;
}

double group_mean(const mvx::Dataset& ds, int group) {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& s : ds.samples)
    for (int v : ds.schema.subgroups[static_cast<std::size_t>(group)]) {
      const auto& img = s.views[static_cast<std::size_t>(v)];
      for (double p : img.pix) sum += p;
      n += img.pix.size();
    }
  return sum / static_cast<double>(n);
}

TEST(SpecValidation, FieldErrorsAreNamed) {
  auto bad = small_spec();
  bad.style_gap = 1.5;
  try {
    bad.validate();
    FAIL() << "expected an exception";
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find("style_gap"), std::string::npos);
  }

  bad = small_spec();
  bad.defect_intensity = 0.0;
  EXPECT_THROW(bad.validate(), std::invalid_argument);
  bad = small_spec();
  bad.class_balance = 1.2;
  EXPECT_THROW(bad.validate(), std::invalid_argument);
  bad = small_spec();
  bad.n_samples = 0;
  EXPECT_THROW(bad.validate(), std::invalid_argument);
  bad = small_spec();
  bad.texture_noise_sigma = -0.1;
  EXPECT_THROW(bad.validate(), std::invalid_argument);

  bad = small_spec();
  bad.schema.subgroups = {{0, 1}, {2, 3}, {4}};
  EXPECT_THROW(bad.validate(), std::invalid_argument);
  bad = small_spec();
  bad.schema.channels = 3;
  EXPECT_THROW(bad.validate(), std::invalid_argument);
}

TEST(Generate, DeterministicPerSeed) {
  const auto a = mvx::generate(small_spec(7));
  const auto b = mvx::generate(small_spec(7));
  const auto c = mvx::generate(small_spec(8));
  EXPECT_EQ(mvx::dataset_fingerprint(a.dataset), mvx::dataset_fingerprint(b.dataset));
  EXPECT_NE(mvx::dataset_fingerprint(a.dataset), mvx::dataset_fingerprint(c.dataset));

  ASSERT_EQ(a.masks.size(), b.masks.size());
  for (const auto& [id, views] : a.masks) {
    const auto& other = b.masks.at(id);
    ASSERT_EQ(views.size(), other.size());
    for (const auto& [v, mask] : views) EXPECT_EQ(mask.pix, other.at(v).pix);
  }
}

TEST(Generate, ClassBalanceIsExact) {
  auto spec = small_spec();
  spec.n_samples = 40;
  spec.class_balance = 0.5;
  auto data = mvx::generate(spec);
  auto counts = data.dataset.class_counts();
  EXPECT_EQ(counts[0], 20);  // Normal
  EXPECT_EQ(counts[1], 20);  // Defective

  spec.class_balance = 0.25;
  data = mvx::generate(spec);
  counts = data.dataset.class_counts();
  EXPECT_EQ(counts[1], 10);

  spec.class_balance = 0.0;
  data = mvx::generate(spec);
  EXPECT_EQ(data.dataset.class_counts()[1], 0);
  EXPECT_TRUE(data.masks.empty());
}

TEST(Generate, MasksMatchLabelsOneDefectPerSample) {
  auto spec = small_spec(3);
  spec.n_samples = 30;
  const auto data = mvx::generate(spec);
  const int defective = data.dataset.schema.class_index("Defective");

  for (const auto& s : data.dataset.samples) {
    const auto it = data.masks.find(s.sample_id);
    if (s.label == defective) {
      ASSERT_NE(it, data.masks.end()) << s.sample_id;
      EXPECT_EQ(it->second.size(), 1u) << "exactly one defective view per sample";
      const int v = it->second.begin()->first;
      EXPECT_GE(v, 0);
      EXPECT_LT(v, data.dataset.schema.num_views);
    } else {
      EXPECT_EQ(it, data.masks.end()) << s.sample_id;
    }
  }
}

TEST(Generate, MaskAreaStaysInBandAndBinary) {
  auto spec = small_spec(5);
  spec.n_samples = 30;
  const auto data = mvx::generate(spec);
  ASSERT_FALSE(data.masks.empty());
  const double hw = 32.0 * 32.0;
  for (const auto& [id, views] : data.masks)
    for (const auto& [v, mask] : views) {
      double area = 0.0;
      for (double p : mask.pix) {
        EXPECT_TRUE(p == 0.0 || p == 1.0);
        area += p;
      }
      const double frac = area / hw;
      EXPECT_GE(frac, 0.02) << id << " view " << v;
      EXPECT_LE(frac, 0.15) << id << " view " << v;
    }
}

TEST(Generate, BothDefectFamiliesAppear) {
  // Stains land in group 0, fissures in group 1; across enough samples both
  // families must show up, so either cue alone cannot explain every defect.
  auto spec = small_spec(11);
  spec.n_samples = 40;
  const auto data = mvx::generate(spec);
  int group0 = 0, group1 = 0;
  for (const auto& [id, views] : data.masks)
    for (const auto& [v, mask] : views)
      (data.dataset.schema.group_of_view(v) == 0 ? group0 : group1)++;
  EXPECT_GT(group0, 0);
  EXPECT_GT(group1, 0);
}

TEST(Generate, StyleGapSeparatesTheGroups) {
  auto spec = small_spec(13);
  spec.n_samples = 10;
  spec.class_balance = 0.0;  // texture only
  spec.style_gap = 1.0;
  const auto wide = mvx::generate(spec);
  const double diff_wide =
      std::abs(group_mean(wide.dataset, 0) - group_mean(wide.dataset, 1));
  EXPECT_GT(diff_wide, 0.1);

  spec.style_gap = 0.0;
  const auto closed = mvx::generate(spec);
  const double diff_closed =
      std::abs(group_mean(closed.dataset, 0) - group_mean(closed.dataset, 1));
  EXPECT_LT(diff_closed, 0.03);
  EXPECT_LT(diff_closed, diff_wide);
}

TEST(Sweep, SubstitutesOnlyTheGap) {
  const auto base = small_spec(17);
  const auto specs = mvx::difficulty_sweep(base, {0.0, 0.5, 1.0});
  ASSERT_EQ(specs.size(), 3u);
  EXPECT_DOUBLE_EQ(specs[0].style_gap, 0.0);
  EXPECT_DOUBLE_EQ(specs[1].style_gap, 0.5);
  EXPECT_DOUBLE_EQ(specs[2].style_gap, 1.0);
  for (const auto& s : specs) {
    EXPECT_EQ(s.n_samples, base.n_samples);
    EXPECT_EQ(s.seed, base.seed);
    EXPECT_DOUBLE_EQ(s.defect_intensity, base.defect_intensity);
  }
  EXPECT_THROW(mvx::difficulty_sweep(base, {}), std::invalid_argument);
  EXPECT_THROW(mvx::difficulty_sweep(base, {2.0}), std::invalid_argument);
}

TEST(GenerateIo, WriteLoadRoundTrip) {
  TempDir tmp;
  auto spec = small_spec(19);
  spec.n_samples = 8;
  const auto data = mvx::generate(spec);
  mvx::write_generated(tmp.str(), data);

  const auto loaded = mvx::load_dataset(tmp.str(), spec.schema);
  ASSERT_EQ(loaded.samples.size(), data.dataset.samples.size());
  for (std::size_t i = 0; i < loaded.samples.size(); ++i) {
    EXPECT_EQ(loaded.samples[i].sample_id, data.dataset.samples[i].sample_id);
    EXPECT_EQ(loaded.samples[i].label, data.dataset.samples[i].label);
    // 8-bit quantization is the only loss on the way through the files
    for (std::size_t v = 0; v < loaded.samples[i].views.size(); ++v) {
      const auto& lv = loaded.samples[i].views[v];
      const auto& ov = data.dataset.samples[i].views[v];
      double worst = 0.0;
      for (std::size_t p = 0; p < lv.pix.size(); ++p)
        worst = std::max(worst, std::abs(lv.pix[p] - ov.pix[p]));
      EXPECT_LE(worst, 0.5 / 255.0 + 1e-9);
    }
  }

  const auto masks = mvx::load_masks(tmp.str(), spec.schema);
  ASSERT_EQ(masks.size(), data.masks.size());
  for (const auto& [id, views] : data.masks) {
    const auto& got = masks.at(id);
    ASSERT_EQ(got.size(), views.size());
    for (const auto& [v, mask] : views) EXPECT_EQ(got.at(v).pix, mask.pix);
  }

  // loading again gives the same bytes; masks do not leak into the samples
  const auto reload = mvx::load_dataset(tmp.str(), spec.schema);
  EXPECT_EQ(mvx::dataset_fingerprint(loaded), mvx::dataset_fingerprint(reload));
  EXPECT_EQ(mvx::load_masks(tmp.sub("nowhere"), spec.schema).size(), 0u);
}

TEST(Generate, PixelsStayInRangeWithHeavyNoise) {
  auto spec = small_spec(23);
  spec.texture_noise_sigma = 0.3;
  const auto data = mvx::generate(spec);
  EXPECT_NO_THROW(data.dataset.validate());
}

}  // namespace
