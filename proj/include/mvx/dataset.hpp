#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "mvx/image.hpp"
#include "mvx/rng.hpp"
#include "mvx/schema.hpp"

namespace mvx {

// One labeled bundle of per-view images.
struct Sample {
  std::string sample_id;
  std::vector<Image> views;
  int label = 0;
};

enum class SplitTag { train, test, unsplit };

inline const char* to_string(SplitTag t) {
  switch (t) {
    case SplitTag::train: return "train";
    case SplitTag::test: return "test";
    default: return "unsplit";
  }
}

struct Dataset {
  MultiViewSchema schema;
  std::vector<Sample> samples;
  SplitTag split_tag = SplitTag::unsplit;

  std::size_t size() const { return samples.size(); }

  const Sample& by_id(const std::string& id) const {
    for (const auto& s : samples)
      if (s.sample_id == id) return s;
    throw std::runtime_error("sample id not found: " + id);
  }

  // Checks every sample against the schema: view count, geometry, pixel
  // range, label range, and sample_id uniqueness.
  void validate() const {
    schema.validate();
    std::set<std::string> ids;
    for (const auto& s : samples) {
      if (!ids.insert(s.sample_id).second)
        throw std::runtime_error("duplicate sample_id: " + s.sample_id);
      if (static_cast<int>(s.views.size()) != schema.num_views)
        throw std::runtime_error("sample " + s.sample_id + " has " +
                                 std::to_string(s.views.size()) + " views, schema wants " +
                                 std::to_string(schema.num_views));
      if (s.label < 0 || s.label >= schema.num_classes())
        throw std::runtime_error("sample " + s.sample_id + " label out of range");
      for (int v = 0; v < schema.num_views; ++v) {
        const Image& img = s.views[static_cast<std::size_t>(v)];
        if (img.height != schema.height || img.width != schema.width ||
            img.channels != schema.channels)
          throw std::runtime_error("sample " + s.sample_id + " view " +
                                   std::to_string(v) + " has wrong geometry");
        for (double p : img.pix)
          if (!(p >= 0.0 && p <= 1.0))
            throw std::runtime_error("sample " + s.sample_id + " view " +
                                     std::to_string(v) + " has pixel outside [0,1]");
      }
    }
  }

  std::vector<int> class_counts() const {
    std::vector<int> counts(static_cast<std::size_t>(schema.num_classes()), 0);
    for (const auto& s : samples) counts[static_cast<std::size_t>(s.label)]++;
    return counts;
  }
};

// FNV-1a over pixels, labels and ids; equal datasets hash equal, used by the
// determinism tests.
inline std::uint64_t dataset_fingerprint(const Dataset& ds) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix_bytes = [&h](const void* p, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 0x100000001b3ULL;
    }
  };
  for (const auto& s : ds.samples) {
    mix_bytes(s.sample_id.data(), s.sample_id.size());
    mix_bytes(&s.label, sizeof(s.label));
    for (const auto& img : s.views)
      mix_bytes(img.pix.data(), img.pix.size() * sizeof(double));
  }
  return h;
}

// Stratified split: each class is shuffled with a class-specific stream of
// `seed` and divided so that the per-class train counts follow the largest
// remainder rule, clamped to leave at least one sample of each class on each
// side. Same seed, same split.
inline std::pair<Dataset, Dataset> split_dataset(const Dataset& ds, double train_fraction,
                                                 std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0))
    throw std::invalid_argument("split_dataset: train_fraction must be in (0,1)");
  if (ds.samples.size() < 2)
    throw std::invalid_argument("split_dataset: need at least 2 samples");

  const int num_classes = ds.schema.num_classes();
  std::vector<std::vector<std::size_t>> per_class(static_cast<std::size_t>(num_classes));
  for (std::size_t i = 0; i < ds.samples.size(); ++i)
    per_class[static_cast<std::size_t>(ds.samples[i].label)].push_back(i);
  for (int c = 0; c < num_classes; ++c)
    if (!per_class[static_cast<std::size_t>(c)].empty() &&
        per_class[static_cast<std::size_t>(c)].size() < 2)
      throw std::runtime_error("split_dataset: class '" + ds.schema.class_names[static_cast<std::size_t>(c)] +
                               "' has fewer than 2 samples, cannot stratify");

  // Largest-remainder allocation of train slots across classes.
  std::vector<int> take(static_cast<std::size_t>(num_classes), 0);
  std::vector<std::pair<double, int>> remainders;
  int total_take = 0;
  for (int c = 0; c < num_classes; ++c) {
    const auto n = static_cast<double>(per_class[static_cast<std::size_t>(c)].size());
    if (n == 0) continue;
    const double exact = train_fraction * n;
    take[static_cast<std::size_t>(c)] = static_cast<int>(exact);
    total_take += take[static_cast<std::size_t>(c)];
    remainders.push_back({exact - take[static_cast<std::size_t>(c)], c});
  }
  int target = static_cast<int>(train_fraction * static_cast<double>(ds.samples.size()) + 0.5);
  std::sort(remainders.begin(), remainders.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  });
  for (const auto& [rem, c] : remainders) {
    if (total_take >= target) break;
    take[static_cast<std::size_t>(c)]++;
    total_take++;
  }
  for (int c = 0; c < num_classes; ++c) {
    const int n = static_cast<int>(per_class[static_cast<std::size_t>(c)].size());
    if (n == 0) continue;
    take[static_cast<std::size_t>(c)] = std::clamp(take[static_cast<std::size_t>(c)], 1, n - 1);
  }

  Dataset train{ds.schema, {}, SplitTag::train};
  Dataset test{ds.schema, {}, SplitTag::test};
  for (int c = 0; c < num_classes; ++c) {
    auto idx = per_class[static_cast<std::size_t>(c)];
    if (idx.empty()) continue;
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(c)));
    rng.shuffle(idx);
    for (std::size_t i = 0; i < idx.size(); ++i) {
      auto& dst = (static_cast<int>(i) < take[static_cast<std::size_t>(c)]) ? train : test;
      dst.samples.push_back(ds.samples[idx[i]]);
    }
  }
  // Keep the deterministic lexicographic order on both sides.
  auto by_id = [](const Sample& a, const Sample& b) { return a.sample_id < b.sample_id; };
  std::sort(train.samples.begin(), train.samples.end(), by_id);
  std::sort(test.samples.begin(), test.samples.end(), by_id);
  return {std::move(train), std::move(test)};
}

}  // namespace mvx
