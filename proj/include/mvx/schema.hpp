#pragma once

#include <algorithm>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace mvx {

// Declares how a multi-view problem is laid out: how many views a sample
// carries, how views cluster into visually-similar sub-groups, the image
// geometry, and the label set.
struct MultiViewSchema {
  int num_views = 0;
  std::vector<std::vector<int>> subgroups;  // ordered partition of view indices
  int height = 0;
  int width = 0;
  int channels = 1;
  std::vector<std::string> class_names;

  int num_groups() const { return static_cast<int>(subgroups.size()); }
  int num_classes() const { return static_cast<int>(class_names.size()); }

  int group_of_view(int view) const {
    for (int g = 0; g < num_groups(); ++g)
      for (int v : subgroups[g])
        if (v == view) return g;
    throw std::out_of_range("view index " + std::to_string(view) +
                            " not covered by any subgroup");
  }

  int class_index(const std::string& name) const {
    const auto it = std::find(class_names.begin(), class_names.end(), name);
    if (it == class_names.end())
      throw std::runtime_error("unknown class name: " + name);
    return static_cast<int>(it - class_names.begin());
  }

  // Throws on any structural violation: subgroups must partition
  // {0..num_views-1} with no empty group, channels must be 1 or 3, and at
  // least two classes are required.
  void validate() const {
    if (num_views < 1) throw std::invalid_argument("schema: num_views must be >= 1");
    if (height < 1 || width < 1)
      throw std::invalid_argument("schema: image geometry must be positive");
    if (channels != 1 && channels != 3)
      throw std::invalid_argument("schema: channels must be 1 or 3");
    if (class_names.size() < 2)
      throw std::invalid_argument("schema: need at least 2 classes");
    if (subgroups.empty()) throw std::invalid_argument("schema: no subgroups");

    std::vector<int> flat;
    for (const auto& g : subgroups) {
      if (g.empty()) throw std::invalid_argument("schema: empty subgroup");
      flat.insert(flat.end(), g.begin(), g.end());
    }
    std::sort(flat.begin(), flat.end());
    std::vector<int> expect(static_cast<std::size_t>(num_views));
    std::iota(expect.begin(), expect.end(), 0);
    if (flat != expect)
      throw std::invalid_argument(
          "schema: subgroups must partition view indices 0..num_views-1 exactly");
  }

  bool operator==(const MultiViewSchema&) const = default;
};

// The default layout for the synthetic demos: five views, the
// {top, bottom} pair as group 0 and the three profile views as group 1.
inline MultiViewSchema default_five_view_schema(int height = 64, int width = 64) {
  MultiViewSchema s;
  s.num_views = 5;
  s.subgroups = {{0, 1}, {2, 3, 4}};
  s.height = height;
  s.width = width;
  s.channels = 1;
  s.class_names = {"Normal", "Defective"};
  return s;
}

}  // namespace mvx
