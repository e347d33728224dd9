#pragma once

// On-disk dataset layout: one JSON manifest per site pointing at imagery,
// GeoJSON footprints and cached label masks, plus a dataset index listing all
// sites. Footprint coordinates are pixel-space by default; geo-space
// collections are mapped through the affine transform in the manifest.

#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "siamcd/data.hpp"
#include "siamcd/image_io.hpp"

namespace siamcd {

namespace fs = std::filesystem;
using json = nlohmann::json;

// Affine map from geo to pixel coordinates:
//   px = a*X + b*Y + c,  py = d*X + e*Y + f
struct GeoTransform {
  double a = 1, b = 0, c = 0, d = 0, e = 1, f = 0;

  Point apply(const Point& p) const {
    return {a * p[0] + b * p[1] + c, d * p[0] + e * p[1] + f};
  }
};

inline json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::parse_error& e) {
    throw ParseError("malformed JSON in " + path.string() + ": " + e.what());
  }
  return j;
}

inline void write_json_file(const fs::path& path, const json& j) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << j.dump(2) << "\n";
}

// ----------------------------------------------------------------------------
// GeoJSON footprints
// ----------------------------------------------------------------------------

inline json footprints_to_geojson(const BuildingFootprintSet& fps) {
  json features = json::array();
  for (const auto& poly : fps.polygons) {
    json rings = json::array();
    for (const auto& ring : poly.rings) {
      json coords = json::array();
      for (const auto& p : ring) coords.push_back({p[0], p[1]});
      if (!ring.empty()) coords.push_back({ring[0][0], ring[0][1]});  // close the ring
      rings.push_back(coords);
    }
    features.push_back({{"type", "Feature"},
                        {"properties", {{"id", poly.id}}},
                        {"geometry", {{"type", "Polygon"}, {"coordinates", rings}}}});
  }
  return {{"type", "FeatureCollection"}, {"features", features}};
}

inline BuildingFootprintSet footprints_from_geojson(const json& j,
                                                    const GeoTransform* geo_to_pixel = nullptr) {
  BuildingFootprintSet out;
  if (!j.contains("features")) throw ParseError("footprint file is not a FeatureCollection");
  auto parse_ring = [&](const json& coords) {
    Ring ring;
    for (const auto& pt : coords) {
      Point p{pt.at(0).get<double>(), pt.at(1).get<double>()};
      if (geo_to_pixel) p = geo_to_pixel->apply(p);
      ring.push_back(p);
    }
    // GeoJSON rings repeat the first vertex; store rings open.
    if (ring.size() >= 2 && ring.front() == ring.back()) ring.pop_back();
    return ring;
  };
  int auto_id = 0;
  for (const auto& feat : j.at("features")) {
    const json& geom = feat.at("geometry");
    const std::string type = geom.at("type").get<std::string>();
    std::string id = "f" + std::to_string(auto_id++);
    if (feat.contains("properties") && feat["properties"].is_object()) {
      const auto& props = feat["properties"];
      if (props.contains("id")) {
        id = props["id"].is_string() ? props["id"].get<std::string>() : props["id"].dump();
      }
    }
    auto add_polygon = [&](const json& rings, const std::string& pid) {
      BuildingPolygon poly;
      poly.id = pid;
      for (const auto& ring : rings) poly.rings.push_back(parse_ring(ring));
      out.polygons.push_back(std::move(poly));
    };
    if (type == "Polygon") {
      add_polygon(geom.at("coordinates"), id);
    } else if (type == "MultiPolygon") {
      int part = 0;
      for (const auto& rings : geom.at("coordinates")) {
        add_polygon(rings, id + "." + std::to_string(part++));
      }
    } else {
      throw ParseError("unsupported geometry type '" + type + "' in footprints");
    }
  }
  return out;
}

// ----------------------------------------------------------------------------
// Site manifests
// ----------------------------------------------------------------------------

// Writes imagery, footprints, label caches and the manifest for one site
// under dir/<site_id>/. Returns the manifest path.
inline fs::path write_site(const fs::path& root, const SiteTimeSeries& site) {
  const fs::path dir = root / site.site_id;
  json ts_list = json::array();
  for (const auto& ts : site.timestamps) {
    const std::string stamp = ts.key.str();
    const std::string image_rel = "images/" + stamp + ".png";
    write_image_u8(dir / image_rel, ts.image);
    json entry = {{"year", ts.key.year},
                  {"month", ts.key.month},
                  {"image", image_rel},
                  {"cloud_excluded", ts.cloud_excluded}};
    if (ts.footprints) {
      const std::string fp_rel = "labels/" + stamp + ".geojson";
      write_json_file(dir / fp_rel, footprints_to_geojson(*ts.footprints));
      entry["footprints"] = fp_rel;
    }
    if (ts.label) {
      const std::string cache_rel = "label_cache/" + stamp + ".png";
      write_mask_png(dir / cache_rel, *ts.label);
      entry["label_cache"] = cache_rel;
    }
    ts_list.push_back(entry);
  }
  json manifest = {{"site_id", site.site_id},
                   {"split", split_name(site.split)},
                   {"channels", site.channels},
                   {"height", site.height},
                   {"width", site.width},
                   {"coordinate_space", "pixel"},
                   {"timestamps", ts_list}};
  const fs::path mpath = dir / "manifest.json";
  write_json_file(mpath, manifest);
  return mpath;
}

// Loads a site from its manifest. Labels come from the cache when present,
// else from rasterizing the footprints.
inline SiteTimeSeries load_site(const fs::path& manifest_path, bool load_images = true) {
  const json m = read_json_file(manifest_path);
  const fs::path dir = manifest_path.parent_path();
  SiteTimeSeries site;
  site.site_id = m.at("site_id").get<std::string>();
  site.split = parse_split(m.at("split").get<std::string>());
  site.channels = m.at("channels").get<int>();
  site.height = m.at("height").get<int>();
  site.width = m.at("width").get<int>();

  std::optional<GeoTransform> geo;
  if (m.value("coordinate_space", std::string("pixel")) == "geo") {
    const auto& t = m.at("transform");
    geo = GeoTransform{t.at(0).get<double>(), t.at(1).get<double>(), t.at(2).get<double>(),
                       t.at(3).get<double>(), t.at(4).get<double>(), t.at(5).get<double>()};
  }

  for (const auto& entry : m.at("timestamps")) {
    SiteTimestamp ts;
    ts.key = {entry.at("year").get<int>(), entry.at("month").get<int>()};
    ts.cloud_excluded = entry.value("cloud_excluded", false);
    ts.image_path = entry.at("image").get<std::string>();
    if (load_images) {
      ts.image = read_image(dir / ts.image_path, site.channels);
      if (ts.image.h() != site.height || ts.image.w() != site.width ||
          ts.image.c() != site.channels) {
        throw DataError("site " + site.site_id + ": image " + ts.image_path +
                        " does not match manifest dims");
      }
    }
    if (entry.contains("footprints") && !entry["footprints"].is_null()) {
      ts.footprint_path = entry["footprints"].get<std::string>();
      ts.footprints = footprints_from_geojson(read_json_file(dir / ts.footprint_path),
                                              geo ? &*geo : nullptr);
    }
    if (entry.contains("label_cache") && !entry["label_cache"].is_null()) {
      ts.label_cache_path = entry["label_cache"].get<std::string>();
      if (load_images) ts.label = read_mask_png(dir / ts.label_cache_path);
    } else if (ts.footprints && load_images) {
      ts.label = rasterize_footprints(*ts.footprints, site.height, site.width);
    }
    site.timestamps.push_back(std::move(ts));
  }
  site.validate();
  return site;
}

// ----------------------------------------------------------------------------
// Dataset index
// ----------------------------------------------------------------------------

struct DatasetIndexEntry {
  std::string site_id;
  std::string manifest;  // relative to the dataset root
  Split split = Split::Train;
};

inline void write_dataset_index(const fs::path& root, const std::vector<DatasetIndexEntry>& sites,
                                const json& provenance) {
  json list = json::array();
  for (const auto& s : sites) {
    list.push_back(
        {{"site_id", s.site_id}, {"manifest", s.manifest}, {"split", split_name(s.split)}});
  }
  write_json_file(root / "dataset.json", {{"sites", list}, {"provenance", provenance}});
}

inline std::vector<DatasetIndexEntry> read_dataset_index(const fs::path& root) {
  const json j = read_json_file(root / "dataset.json");
  std::vector<DatasetIndexEntry> out;
  for (const auto& s : j.at("sites")) {
    out.push_back({s.at("site_id").get<std::string>(), s.at("manifest").get<std::string>(),
                   parse_split(s.at("split").get<std::string>())});
  }
  return out;
}

// Loads every site of a dataset directory, optionally filtered by split.
inline std::vector<SiteTimeSeries> load_dataset(const fs::path& root,
                                                std::optional<Split> only = std::nullopt,
                                                bool load_images = true) {
  std::vector<SiteTimeSeries> sites;
  for (const auto& entry : read_dataset_index(root)) {
    if (only && entry.split != *only) continue;
    sites.push_back(load_site(root / entry.manifest, load_images));
    if (sites.back().split != entry.split) {
      throw DataError("site " + entry.site_id + ": split disagrees between index and manifest");
    }
  }
  return sites;
}

}  // namespace siamcd
