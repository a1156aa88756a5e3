#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "mvx/dataset.hpp"
#include "mvx/png_io.hpp"
#include "mvx/schema.hpp"

namespace mvx {

struct LoadOptions {
  // Per-channel standardization to zero mean / unit variance over the whole
  // dataset. Off by default; plain [0,1] scaling is the convention. Note that
  // standardized pixels leave the [0,1] range, so Dataset::validate() no
  // longer applies afterwards.
  bool standardize = false;
};

namespace detail {

// labels.csv: header `sample_id,label`, one row per sample.
inline std::map<std::string, std::string> read_labels_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("missing labels file: " + path.string());
  std::map<std::string, std::string> out;
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos)
      throw std::runtime_error("malformed labels row: " + line);
    const std::string key = line.substr(0, comma);
    const std::string value = line.substr(comma + 1);
    if (first) {
      first = false;
      if (key == "sample_id") continue;  // header
    }
    out[key] = value;
  }
  return out;
}

}  // namespace detail

// Loads `<root>/<sample_id>/view_<k>.png` plus `<root>/labels.csv`. Images are
// decoded, converted to the schema's channel count, resized to the schema
// geometry and scaled to [0,1]. Sample order is lexicographic by sample_id.
inline Dataset load_dataset(const std::filesystem::path& root, const MultiViewSchema& schema,
                            const LoadOptions& opts = {}) {
  namespace fs = std::filesystem;
  schema.validate();
  if (!fs::is_directory(root))
    throw std::runtime_error("dataset root is not a directory: " + root.string());

  const auto labels = detail::read_labels_csv(root / "labels.csv");

  std::vector<std::string> ids;
  for (const auto& entry : fs::directory_iterator(root))
    if (entry.is_directory()) ids.push_back(entry.path().filename().string());
  std::sort(ids.begin(), ids.end());

  Dataset ds{schema, {}, SplitTag::unsplit};
  for (const auto& id : ids) {
    if (id == "masks") continue;  // ground-truth masks live beside the samples
    const auto it = labels.find(id);
    if (it == labels.end())
      throw std::runtime_error("sample " + id + " has no row in labels.csv");
    Sample s;
    s.sample_id = id;
    s.label = schema.class_index(it->second);
    for (int v = 0; v < schema.num_views; ++v) {
      const fs::path file = root / id / ("view_" + std::to_string(v) + ".png");
      if (!fs::exists(file))
        throw std::runtime_error("sample " + id + " missing view " + std::to_string(v));
      Image img = read_png(file.string());
      if (schema.channels == 1)
        img = to_grayscale(img);
      else
        img = to_rgb(img);
      img = resize_bilinear(img, schema.height, schema.width);
      s.views.push_back(std::move(img));
    }
    ds.samples.push_back(std::move(s));
  }
  for (const auto& [id, unused] : labels)
    if (std::find(ids.begin(), ids.end(), id) == ids.end())
      throw std::runtime_error("labels.csv names sample " + id + " but no such directory exists");

  ds.validate();

  if (opts.standardize) {
    for (int c = 0; c < schema.channels; ++c) {
      double sum = 0.0, sumsq = 0.0;
      std::size_t n = 0;
      for (const auto& s : ds.samples)
        for (const auto& img : s.views)
          for (int y = 0; y < img.height; ++y)
            for (int x = 0; x < img.width; ++x) {
              const double p = img.at(y, x, c);
              sum += p;
              sumsq += p * p;
              ++n;
            }
      const double mean = sum / static_cast<double>(n);
      const double var = std::max(sumsq / static_cast<double>(n) - mean * mean, 1e-12);
      const double inv_std = 1.0 / std::sqrt(var);
      for (auto& s : ds.samples)
        for (auto& img : s.views)
          for (int y = 0; y < img.height; ++y)
            for (int x = 0; x < img.width; ++x)
              img.at(y, x, c) = (img.at(y, x, c) - mean) * inv_std;
    }
  }
  return ds;
}

// Writes the directory layout load_dataset expects. Does not touch anything
// outside `root`.
inline void write_dataset(const std::filesystem::path& root, const Dataset& ds) {
  namespace fs = std::filesystem;
  fs::create_directories(root);
  std::ofstream labels(root / "labels.csv");
  if (!labels) throw std::runtime_error("cannot write " + (root / "labels.csv").string());
  labels << "sample_id,label\n";
  for (const auto& s : ds.samples) {
    labels << s.sample_id << ',' << ds.schema.class_names[static_cast<std::size_t>(s.label)]
           << '\n';
    const fs::path dir = root / s.sample_id;
    fs::create_directories(dir);
    for (int v = 0; v < ds.schema.num_views; ++v)
      write_png((dir / ("view_" + std::to_string(v) + ".png")).string(),
                s.views[static_cast<std::size_t>(v)]);
  }
}

}  // namespace mvx
