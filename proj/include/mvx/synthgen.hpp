#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "mvx/dataset.hpp"
#include "mvx/dataset_io.hpp"
#include "mvx/image.hpp"
#include "mvx/png_io.hpp"
#include "mvx/rng.hpp"
#include "mvx/schema.hpp"

namespace mvx {

// Generator recipe. The two sub-groups render in two parametric styles: a
// smooth bright disk on dark ground versus a striped relief with thin dark
// valleys. style_gap pulls the groups apart along the blend between the two
// styles; at 0 both groups share the midpoint blend, at 1 they sit at the
// extremes. Defective samples get exactly one planted defect: a dark blob in
// a group-0 view or a bright crack in a group-1 view, with its binary mask.
//
// Each style also carries an intrinsic look-alike of the OTHER group's defect
// family: the striped relief is pocked with dark round pores (stain-shaped),
// and the smooth style shows a bright specular glint streak (fissure-shaped).
// Because the look-alikes live inside the style layers, their visibility
// scales with the blend exactly like the rest of the style. At gap 1 a model
// that pools one shared feature bank across all views sees stain-like pores
// on every normal relief view and fissure-like glints on every normal smooth
// view, so only style-conditional features separate the classes; per-group
// extractors keep trivially clean signals. At gap 0 the groups are identical
// and neither wiring has an edge.
struct SyntheticSpec {
  MultiViewSchema schema = default_five_view_schema();
  int n_samples = 40;
  double defect_intensity = 0.8;    // contrast of planted defects, (0, 1]
  double texture_noise_sigma = 0.02;
  double style_gap = 1.0;
  double class_balance = 0.5;       // fraction of defective samples
  std::uint64_t seed = 0;

  void validate() const {
    schema.validate();
    if (schema.num_groups() != 2)
      throw std::invalid_argument("synthetic spec: schema must have exactly 2 sub-groups");
    if (schema.channels != 1)
      throw std::invalid_argument("synthetic spec: generator renders grayscale views only");
    if (n_samples < 1) throw std::invalid_argument("synthetic spec: n_samples must be positive");
    if (!(defect_intensity > 0.0 && defect_intensity <= 1.0))
      throw std::invalid_argument("synthetic spec: defect_intensity must be within (0, 1]");
    if (texture_noise_sigma < 0.0)
      throw std::invalid_argument("synthetic spec: texture_noise_sigma must be non-negative");
    if (!(style_gap >= 0.0 && style_gap <= 1.0))
      throw std::invalid_argument("synthetic spec: style_gap must be within [0, 1]");
    if (!(class_balance >= 0.0 && class_balance <= 1.0))
      throw std::invalid_argument("synthetic spec: class_balance must be within [0, 1]");
  }
};

struct GeneratedData {
  Dataset dataset;
  // sample_id -> view index -> binary mask (only affected views appear)
  std::map<std::string, std::map<int, Image>> masks;
};

namespace synth_detail {

inline double smoothstep(double e0, double e1, double x) {
  const double t = std::min(1.0, std::max(0.0, (x - e0) / (e1 - e0)));
  return t * t * (3.0 - 2.0 * t);
}

// True when (y, x) lies inside a bowed thin streak: |along| within length,
// |across − parabolic offset| within width. Shared by the planted cracks and
// the glint look-alikes so the two populations match geometrically.
inline bool streak_covers(double y, double x, double y0, double x0, double angle,
                          double length, double width, double bend) {
  const double dirY = std::sin(angle), dirX = std::cos(angle);
  const double ry = y - y0, rx = x - x0;
  const double along = ry * dirY + rx * dirX;
  if (std::abs(along) > length / 2.0) return false;
  const double s = along / (length / 2.0);
  const double offset = bend * (1.0 - s * s);  // gentle parabolic bow
  const double across = -ry * dirX + rx * dirY - offset;
  return std::abs(across) <= width / 2.0;
}

// Per-sample style draw; views jitter around these.
struct StyleParams {
  double disk_cy, disk_cx, disk_r;
  double stripe_period, stripe_angle, stripe_phase;
  // Style-intrinsic look-alikes (see the note on SyntheticSpec).
  struct Pore {
    double cy, cx, r, ay, ax;
  };
  std::array<Pore, 2> pores;  // dark rounds inside the striped relief
  double glint_y0, glint_x0, glint_angle, glint_len, glint_width, glint_bend;
};

inline StyleParams draw_style(Rng& rng, int height, int width) {
  StyleParams p;
  p.disk_cy = rng.uniform(0.42, 0.58) * height;
  p.disk_cx = rng.uniform(0.42, 0.58) * width;
  p.disk_r = rng.uniform(0.30, 0.38) * std::min(height, width);
  p.stripe_period = rng.uniform(8.0, 12.0);
  p.stripe_angle = rng.uniform(-0.14, 0.14);  // radians off horizontal
  p.stripe_phase = rng.uniform(0.0, 1.0);
  const double scale = height / 64.0;
  for (auto& pore : p.pores) {
    pore.cy = rng.uniform(0.22, 0.78) * height;
    pore.cx = rng.uniform(0.22, 0.78) * width;
    pore.r = rng.uniform(6.5, 8.5) * scale;  // same size family as the stains
    pore.ay = rng.uniform(0.9, 1.1);
    pore.ax = rng.uniform(0.9, 1.1);
  }
  p.glint_y0 = rng.uniform(0.3, 0.7) * height;
  p.glint_x0 = rng.uniform(0.3, 0.7) * width;
  p.glint_angle = rng.uniform(1.05, 2.09);  // same steep family as the fissures
  p.glint_len = rng.uniform(34.0, 48.0) * scale;
  p.glint_width = rng.uniform(2.6, 3.4);
  p.glint_bend = rng.uniform(-4.0, 4.0);
  return p;
}

inline double disk_value(const StyleParams& p, double y, double x) {
  const double dy = y - p.disk_cy, dx = x - p.disk_cx;
  const double d = std::sqrt(dy * dy + dx * dx);
  // bright disk 0.75 on ground 0.25, 3-pixel soft edge
  const double base = 0.25 + 0.5 * smoothstep(p.disk_r + 1.5, p.disk_r - 1.5, d);
  if (streak_covers(y, x, p.glint_y0, p.glint_x0, p.glint_angle, p.glint_len,
                    p.glint_width, p.glint_bend))
    return 0.2 * base + 0.8 * 0.98;  // specular glint, rendered like a fissure
  return base;
}

inline double stripe_value(const StyleParams& p, double y, double x) {
  const double coord = (y * std::cos(p.stripe_angle) - x * std::sin(p.stripe_angle)) /
                           p.stripe_period +
                       p.stripe_phase;
  const double u = coord - std::floor(coord);
  const double dist = std::abs(u - 0.5);  // phase distance to the valley line
  // thin dark valleys (floor 0.15) between wide bright bands (0.75)
  const double bump = 1.0 - smoothstep(0.08, 0.16, dist);
  const double base = 0.75 - 0.6 * bump;
  for (const auto& pore : p.pores) {
    const double ny = (y - pore.cy) / (pore.r * pore.ay);
    const double nx = (x - pore.cx) / (pore.r * pore.ax);
    if (ny * ny + nx * nx <= 1.0) return base * 0.15;  // dark pore, rendered like a stain
  }
  return base;
}

struct DefectPlan {
  bool blob = false;  // else crack
  int view = -1;
  // blob geometry
  double cy, cx, r, ay, ax;
  // crack geometry
  double x0, y0, angle, length, width, bend;
};

inline DefectPlan draw_defect(Rng& rng, const MultiViewSchema& schema) {
  DefectPlan d;
  d.blob = rng.bernoulli(0.5);
  const auto& group = schema.subgroups[d.blob ? 0 : 1];
  d.view = group[static_cast<std::size_t>(
      rng.uniform_int(0, static_cast<int>(group.size()) - 1))];
  const double H = schema.height, W = schema.width;
  if (d.blob) {
    d.cy = rng.uniform(0.32, 0.68) * H;
    d.cx = rng.uniform(0.32, 0.68) * W;
    d.r = rng.uniform(6.5, 10.0) * (H / 64.0);
    d.ay = rng.uniform(0.9, 1.1);
    d.ax = rng.uniform(0.9, 1.1);
  } else {
    d.y0 = rng.uniform(0.3, 0.7) * H;
    d.x0 = rng.uniform(0.3, 0.7) * W;
    // steep angles so cracks cut across the near-horizontal stripes
    d.angle = rng.uniform(1.05, 2.09);  // 60..120 degrees
    d.length = rng.uniform(34.0, 48.0) * (H / 64.0);
    d.width = rng.uniform(2.6, 3.4);
    d.bend = rng.uniform(-4.0, 4.0);
  }
  return d;
}

// Renders the defect into img (in place) and returns its binary mask.
// The geometry is rescaled a few times if the discretized mask leaves the
// [2%, 15%] area band.
inline Image plant_defect(Image& img, DefectPlan d, double intensity) {
  const int H = img.height, W = img.width;
  const double lo = 0.02 * H * W, hi = 0.15 * H * W;
  Image mask(H, W, 1);

  for (int attempt = 0; attempt < 8; ++attempt) {
    std::fill(mask.pix.begin(), mask.pix.end(), 0.0);
    int area = 0;
    if (d.blob) {
      for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
          const double ny = (y - d.cy) / (d.r * d.ay);
          const double nx = (x - d.cx) / (d.r * d.ax);
          if (ny * ny + nx * nx <= 1.0) {
            mask.at(y, x, 0) = 1.0;
            ++area;
          }
        }
    } else {
      for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x)
          if (streak_covers(y, x, d.y0, d.x0, d.angle, d.length, d.width, d.bend)) {
            mask.at(y, x, 0) = 1.0;
            ++area;
          }
    }
    if (area >= lo && area <= hi) break;
    const double target = (lo + hi) / 2.0;
    const double scale = std::sqrt(target / std::max(1.0, static_cast<double>(area)));
    if (d.blob)
      d.r *= std::min(1.6, std::max(0.6, scale));
    else {
      d.length *= std::min(1.5, std::max(0.7, scale));
      d.width *= std::min(1.3, std::max(0.8, scale));
    }
    if (attempt == 7) throw std::runtime_error("defect area outside the target band");
  }

  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      if (mask.at(y, x, 0) < 0.5) continue;
      double& px = img.at(y, x, 0);
      if (d.blob)
        px *= 1.0 - intensity;      // darkening stain
      else
        px = (1.0 - intensity) * px + intensity * 0.98;  // bright fissure
    }
  return mask;
}

}  // namespace synth_detail

inline GeneratedData generate(const SyntheticSpec& spec) {
  spec.validate();
  const auto& schema = spec.schema;
  const int n = spec.n_samples;
  const int n_defective = static_cast<int>(std::lround(spec.class_balance * n));
  const int defective_class = schema.class_index("Defective");
  const int normal_class = schema.class_index("Normal");
  const double t_a = 0.5 - spec.style_gap / 2.0;
  const double t_b = 0.5 + spec.style_gap / 2.0;

  GeneratedData out;
  out.dataset.schema = schema;
  out.dataset.split_tag = SplitTag::unsplit;
  out.dataset.samples.reserve(static_cast<std::size_t>(n));

  for (int i = 0; i < n; ++i) {
    char idbuf[16];
    std::snprintf(idbuf, sizeof(idbuf), "s%04d", i);
    Sample s;
    s.sample_id = idbuf;
    const bool defective = i < n_defective;
    s.label = defective ? defective_class : normal_class;

    const std::uint64_t sample_seed = derive_seed(spec.seed, 1000 + static_cast<std::uint64_t>(i));
    Rng srng(sample_seed);
    const auto style = synth_detail::draw_style(srng, schema.height, schema.width);
    synth_detail::DefectPlan plan;
    if (defective) plan = synth_detail::draw_defect(srng, schema);

    s.views.reserve(static_cast<std::size_t>(schema.num_views));
    for (int v = 0; v < schema.num_views; ++v) {
      Rng vrng(derive_seed(sample_seed, 50 + static_cast<std::uint64_t>(v)));
      auto sp = style;
      sp.disk_cy += vrng.uniform(-1.5, 1.5);
      sp.disk_cx += vrng.uniform(-1.5, 1.5);
      sp.stripe_phase += vrng.uniform(-0.05, 0.05);
      for (auto& pore : sp.pores) {
        pore.cy += vrng.uniform(-1.5, 1.5);
        pore.cx += vrng.uniform(-1.5, 1.5);
      }
      sp.glint_y0 += vrng.uniform(-1.5, 1.5);
      sp.glint_x0 += vrng.uniform(-1.5, 1.5);

      const double t = schema.group_of_view(v) == 0 ? t_a : t_b;
      Image img(schema.height, schema.width, 1);
      for (int y = 0; y < schema.height; ++y)
        for (int x = 0; x < schema.width; ++x)
          img.at(y, x, 0) = (1.0 - t) * synth_detail::disk_value(sp, y, x) +
                            t * synth_detail::stripe_value(sp, y, x);

      if (defective && v == plan.view)
        out.masks[s.sample_id][v] = synth_detail::plant_defect(img, plan, spec.defect_intensity);

      if (spec.texture_noise_sigma > 0.0)
        for (double& px : img.pix) px += spec.texture_noise_sigma * vrng.normal();
      img.clamp01();
      s.views.push_back(std::move(img));
    }
    out.dataset.samples.push_back(std::move(s));
  }
  out.dataset.validate();
  return out;
}

// One spec per gap, sharing everything else with the base.
inline std::vector<SyntheticSpec> difficulty_sweep(const SyntheticSpec& base,
                                                   const std::vector<double>& style_gaps) {
  if (style_gaps.empty()) throw std::invalid_argument("difficulty sweep: no gaps given");
  std::vector<SyntheticSpec> specs;
  specs.reserve(style_gaps.size());
  for (double g : style_gaps) {
    SyntheticSpec s = base;
    s.style_gap = g;
    s.validate();
    specs.push_back(s);
  }
  return specs;
}

// Writes the standard dataset layout plus masks/<sample_id>/view_<k>.png for
// every affected view.
inline void write_generated(const std::string& root, const GeneratedData& data) {
  write_dataset(root, data.dataset);
  namespace fs = std::filesystem;
  for (const auto& [sample_id, views] : data.masks) {
    const fs::path dir = fs::path(root) / "masks" / sample_id;
    fs::create_directories(dir);
    for (const auto& [v, mask] : views)
      write_png((dir / ("view_" + std::to_string(v) + ".png")).string(), mask);
  }
}

// Reads whatever ground-truth masks exist under <root>/masks.
inline std::map<std::string, std::map<int, Image>> load_masks(const std::string& root,
                                                              const MultiViewSchema& schema) {
  namespace fs = std::filesystem;
  std::map<std::string, std::map<int, Image>> masks;
  const fs::path base = fs::path(root) / "masks";
  if (!fs::exists(base)) return masks;
  for (const auto& entry : fs::directory_iterator(base)) {
    if (!entry.is_directory()) continue;
    const std::string id = entry.path().filename().string();
    for (int v = 0; v < schema.num_views; ++v) {
      const fs::path p = entry.path() / ("view_" + std::to_string(v) + ".png");
      if (!fs::exists(p)) continue;
      Image m = to_grayscale(read_png(p.string()));
      for (double& px : m.pix) px = px > 0.5 ? 1.0 : 0.0;
      masks[id][v] = std::move(m);
    }
  }
  return masks;
}

}  // namespace mvx
