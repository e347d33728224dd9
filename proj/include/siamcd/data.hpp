#pragma once

// Data model for multi-temporal sites: building footprints, rasterized
// labels, change-label derivation, cloud exclusions, split assignment and a
// procedural synthetic-growth generator for desk-scale runs.

#include <algorithm>
#include <array>
#include <cstdio>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "siamcd/tensor.hpp"

namespace siamcd {

// ----------------------------------------------------------------------------
// Types
// ----------------------------------------------------------------------------

enum class Split { Train, Val, Test, Unlabeled };

inline const char* split_name(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
    case Split::Unlabeled: return "unlabeled";
  }
  return "?";
}

inline Split parse_split(const std::string& s) {
  if (s == "train") return Split::Train;
  if (s == "val") return Split::Val;
  if (s == "test") return Split::Test;
  if (s == "unlabeled") return Split::Unlabeled;
  throw DataError("unknown split '" + s + "'");
}

using Point = std::array<double, 2>;  // (x, y) in pixel coordinates
using Ring = std::vector<Point>;

// One building outline: an exterior ring plus optional interior rings
// (holes). Rings are open (no repeated closing vertex).
struct BuildingPolygon {
  std::string id;
  std::vector<Ring> rings;
};

struct BuildingFootprintSet {
  std::vector<BuildingPolygon> polygons;
};

struct TimestampKey {
  int year = 0;
  int month = 0;
  auto operator<=>(const TimestampKey&) const = default;

  std::string str() const {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%04d_%02d", year, month);
    return buf;
  }
};

struct SiteTimestamp {
  TimestampKey key;
  Tensor image;  // (1,C,H,W), values in [0,1]; may be empty until loaded
  std::optional<BuildingFootprintSet> footprints;
  std::optional<Raster> label;  // rasterized building mask
  bool cloud_excluded = false;
  // Relative paths recorded by the manifest (empty for in-memory sites).
  std::string image_path;
  std::string footprint_path;
  std::string label_cache_path;
};

struct SiteTimeSeries {
  std::string site_id;
  Split split = Split::Train;
  int channels = 0, height = 0, width = 0;
  std::vector<SiteTimestamp> timestamps;  // strictly increasing keys

  bool labeled() const { return split != Split::Unlabeled; }

  std::vector<int> usable_timestamps() const {
    std::vector<int> idx;
    for (int i = 0; i < static_cast<int>(timestamps.size()); ++i) {
      if (!timestamps[i].cloud_excluded) idx.push_back(i);
    }
    return idx;
  }

  void validate() const {
    for (std::size_t i = 1; i < timestamps.size(); ++i) {
      if (!(timestamps[i - 1].key < timestamps[i].key)) {
        throw DataError("site " + site_id + ": timestamps not strictly increasing");
      }
    }
    for (const auto& ts : timestamps) {
      if (!ts.image.empty() && (ts.image.h() != height || ts.image.w() != width ||
                                ts.image.c() != channels)) {
        throw DataError("site " + site_id + ": image dims differ at " + ts.key.str());
      }
      if (labeled() && !ts.cloud_excluded && !ts.label && !ts.footprints) {
        throw DataError("site " + site_id + ": labeled site lacks footprints at " + ts.key.str());
      }
      if (!labeled() && (ts.footprints || ts.label)) {
        throw DataError("site " + site_id + ": unlabeled site carries labels");
      }
    }
  }
};

// ----------------------------------------------------------------------------
// Rasterization (pixel-center, even-odd rule)
// ----------------------------------------------------------------------------

namespace detail {

// x-coordinates where ring edges cross the horizontal line y = yc, using the
// half-open rule (an edge counts iff exactly one endpoint lies at or below
// yc), so vertices are never double-counted.
inline void ring_crossings(const Ring& ring, double yc, std::vector<double>& out) {
  const std::size_t n = ring.size();
  for (std::size_t i = 0; i < n; ++i) {
    const Point& a = ring[i];
    const Point& b = ring[(i + 1) % n];
    if ((a[1] <= yc) != (b[1] <= yc)) {
      out.push_back(a[0] + (yc - a[1]) / (b[1] - a[1]) * (b[0] - a[0]));
    }
  }
}

}  // namespace detail

// Pixel = 1 iff its center lies inside any polygon under the even-odd rule.
inline Raster rasterize_footprints(const BuildingFootprintSet& footprints, int height, int width) {
  if (height <= 0 || width <= 0) throw ShapeError("rasterize_footprints: non-positive dims");
  for (const auto& poly : footprints.polygons) {
    for (const auto& ring : poly.rings) {
      if (ring.size() < 3) {
        throw DataError("degenerate polygon '" + poly.id + "' (ring with " +
                        std::to_string(ring.size()) + " vertices)");
      }
    }
  }
  Raster out(height, width);
  std::vector<double> xs;
  for (int y = 0; y < height; ++y) {
    const double yc = y + 0.5;
    for (const auto& poly : footprints.polygons) {
      xs.clear();
      for (const auto& ring : poly.rings) detail::ring_crossings(ring, yc, xs);
      if (xs.empty()) continue;
      std::sort(xs.begin(), xs.end());
      for (int x = 0; x < width; ++x) {
        const double xc = x + 0.5;
        // Inside iff an odd number of crossings lies strictly to the right.
        const auto it = std::upper_bound(xs.begin(), xs.end(), xc);
        if ((xs.end() - it) % 2 == 1) out.at(y, x) = 1.0f;
      }
    }
  }
  return out;
}

// Change = y_t1 XOR y_t2 by default; the construction-only mode keeps just
// the 0 -> 1 transitions (y_t2 and not y_t1).
inline Raster derive_change_label(const Raster& y_t1, const Raster& y_t2,
                                  bool construction_only = false) {
  require_same_shape(y_t1, y_t2, "derive_change_label");
  Raster out(y_t1.h, y_t1.w);
  for (std::size_t i = 0; i < out.size(); ++i) {
    const bool a = y_t1.v[i] >= 0.5f;
    const bool b = y_t2.v[i] >= 0.5f;
    out.v[i] = (construction_only ? (b && !a) : (a != b)) ? 1.0f : 0.0f;
  }
  return out;
}

// ----------------------------------------------------------------------------
// Cloud exclusions
// ----------------------------------------------------------------------------

struct CloudExclusion {
  std::string site_id;
  int year = 0;
  int month = 0;
};

// Flags matching timestamps; unknown references produce warnings, not errors.
inline std::vector<std::string> apply_cloud_exclusions(
    SiteTimeSeries& series, std::span<const CloudExclusion> exclusions) {
  std::vector<std::string> warnings;
  for (const auto& ex : exclusions) {
    if (ex.site_id != series.site_id) continue;
    bool found = false;
    for (auto& ts : series.timestamps) {
      if (ts.key.year == ex.year && ts.key.month == ex.month) {
        ts.cloud_excluded = true;
        found = true;
      }
    }
    if (!found) {
      warnings.push_back("cloud exclusion for unknown timestamp " + series.site_id + " " +
                         TimestampKey{ex.year, ex.month}.str());
    }
  }
  return warnings;
}

// ----------------------------------------------------------------------------
// Split assignment
// ----------------------------------------------------------------------------

struct SplitCounts {
  int n_train = 0;
  int n_val = 0;
  int n_test = 0;
};

inline std::map<std::string, Split> assign_splits(std::vector<std::string> labeled_ids,
                                                  const std::vector<std::string>& unlabeled_ids,
                                                  const SplitCounts& counts, std::uint64_t seed) {
  if (counts.n_train < 0 || counts.n_val < 0 || counts.n_test < 0 ||
      counts.n_train + counts.n_val + counts.n_test != static_cast<int>(labeled_ids.size())) {
    throw ConfigError("split counts " + std::to_string(counts.n_train) + "/" +
                      std::to_string(counts.n_val) + "/" + std::to_string(counts.n_test) +
                      " do not partition " + std::to_string(labeled_ids.size()) +
                      " labeled sites");
  }
  // Sorting first makes the assignment independent of caller ordering.
  std::sort(labeled_ids.begin(), labeled_ids.end());
  Rng rng(mix_seed(seed, 0x5b17));
  rng.shuffle(labeled_ids);
  std::map<std::string, Split> out;
  for (int i = 0; i < static_cast<int>(labeled_ids.size()); ++i) {
    out[labeled_ids[i]] = i < counts.n_train                  ? Split::Train
                          : i < counts.n_train + counts.n_val ? Split::Val
                                                              : Split::Test;
  }
  for (const auto& id : unlabeled_ids) out[id] = Split::Unlabeled;
  return out;
}

// ----------------------------------------------------------------------------
// Synthetic growth generator
// ----------------------------------------------------------------------------

struct SyntheticConfig {
  int height = 128;
  int width = 128;
  int channels = 3;
  int n_timestamps = 5;
  int initial_buildings = 6;
  double growth_rate = 3.0;  // expected new buildings per later timestamp
  int building_min = 5;
  int building_max = 12;
  double noise_level = 0.02;  // stddev of per-pixel intensity noise
  bool labeled = true;
  std::string site_id = "synthetic";
  int start_year = 2018;
  int start_month = 1;
};

namespace detail {

struct SynthBuilding {
  int x0, y0, w, h;
  int appears_at;  // timestamp index; persists afterwards
};

// Background / building intensities per channel (8-bit midpoint sits between).
inline constexpr std::array<float, 4> kBackgroundLevel = {0.24f, 0.28f, 0.22f, 0.25f};
inline constexpr std::array<float, 4> kBuildingLevel = {0.76f, 0.72f, 0.78f, 0.75f};

}  // namespace detail

// Procedural urban growth: axis-aligned rectangular buildings appear at
// random timestamps and persist, so per-pixel building presence is monotone
// non-decreasing over time. Images quantize to the 8-bit grid so in-memory
// values round-trip bit-exactly through the PNG cache.
inline SiteTimeSeries generate_synthetic_site(std::uint64_t seed, const SyntheticConfig& cfg) {
  if (cfg.height <= 0 || cfg.width <= 0) throw ConfigError("synthetic site dims must be positive");
  if (cfg.n_timestamps < 2) throw ConfigError("synthetic site needs at least 2 timestamps");
  if (cfg.channels < 1 || cfg.channels > 4) throw ConfigError("synthetic channels must be 1..4");
  if (cfg.building_min < 1 || cfg.building_max < cfg.building_min ||
      cfg.building_max >= std::min(cfg.height, cfg.width)) {
    throw ConfigError("synthetic building size range invalid for site dims");
  }

  Rng rng(mix_seed(seed, 0x51fe));
  std::vector<detail::SynthBuilding> buildings;
  auto add_building = [&](int appears_at) {
    detail::SynthBuilding b;
    b.w = cfg.building_min +
          static_cast<int>(rng.uniform_int(cfg.building_max - cfg.building_min + 1));
    b.h = cfg.building_min +
          static_cast<int>(rng.uniform_int(cfg.building_max - cfg.building_min + 1));
    b.x0 = static_cast<int>(rng.uniform_int(cfg.width - b.w));
    b.y0 = static_cast<int>(rng.uniform_int(cfg.height - b.h));
    b.appears_at = appears_at;
    buildings.push_back(b);
  };
  for (int i = 0; i < cfg.initial_buildings; ++i) add_building(0);
  for (int t = 1; t < cfg.n_timestamps; ++t) {
    int count = static_cast<int>(cfg.growth_rate);
    if (rng.uniform() < cfg.growth_rate - count) ++count;
    for (int i = 0; i < count; ++i) add_building(t);
  }

  SiteTimeSeries site;
  site.site_id = cfg.site_id;
  site.split = cfg.labeled ? Split::Train : Split::Unlabeled;
  site.channels = cfg.channels;
  site.height = cfg.height;
  site.width = cfg.width;

  TimestampKey key{cfg.start_year, cfg.start_month};
  for (int t = 0; t < cfg.n_timestamps; ++t) {
    SiteTimestamp ts;
    ts.key = key;
    key.month += 1;
    if (key.month > 12) {
      key.month = 1;
      key.year += 1;
    }

    Raster mask(cfg.height, cfg.width);
    BuildingFootprintSet fps;
    int bid = 0;
    for (const auto& b : buildings) {
      ++bid;
      if (b.appears_at > t) continue;
      for (int y = b.y0; y < b.y0 + b.h; ++y) {
        for (int x = b.x0; x < b.x0 + b.w; ++x) mask.at(y, x) = 1.0f;
      }
      BuildingPolygon poly;
      poly.id = "b" + std::to_string(bid);
      poly.rings.push_back(Ring{{double(b.x0), double(b.y0)},
                                {double(b.x0 + b.w), double(b.y0)},
                                {double(b.x0 + b.w), double(b.y0 + b.h)},
                                {double(b.x0), double(b.y0 + b.h)}});
      fps.polygons.push_back(std::move(poly));
    }

    Tensor img(1, cfg.channels, cfg.height, cfg.width);
    for (int ch = 0; ch < cfg.channels; ++ch) {
      for (int y = 0; y < cfg.height; ++y) {
        for (int x = 0; x < cfg.width; ++x) {
          const bool built = mask.at(y, x) >= 0.5f;
          float v = built ? detail::kBuildingLevel[ch] : detail::kBackgroundLevel[ch];
          if (cfg.noise_level > 0.0) {
            v += static_cast<float>(rng.normal() * cfg.noise_level);
          }
          v = std::min(1.0f, std::max(0.0f, v));
          // Snap to the 8-bit grid the PNG cache will impose anyway.
          img.at(0, ch, y, x) = static_cast<float>(std::lround(v * 255.0f)) / 255.0f;
        }
      }
    }

    ts.image = std::move(img);
    if (cfg.labeled) {
      ts.footprints = std::move(fps);
      ts.label = std::move(mask);
    }
    site.timestamps.push_back(std::move(ts));
  }
  site.validate();
  return site;
}

}  // namespace siamcd
