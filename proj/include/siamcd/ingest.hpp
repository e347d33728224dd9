#pragma once

// Format-level SpaceNet7 ingestion: scans the train/ (labeled) and test/
// (unlabeled) directory layout, parses monthly mosaic filenames, rasterizes
// footprint GeoJSONs into a label cache and emits per-site manifests plus a
// dataset index. Imagery stays in place; manifests reference it by absolute
// path. Footprints default to pixel coordinates; geo-coordinate label files
// need a per-site affine transform supplied via a transforms JSON.

#include <filesystem>
#include <map>
#include <optional>
#include <regex>
#include <string>
#include <vector>

#include "siamcd/manifest.hpp"

namespace siamcd {

struct PrepareConfig {
  std::filesystem::path root;  // SpaceNet7-style directory
  std::filesystem::path out;
  SplitCounts split_counts{-1, -1, -1};  // -1: derive proportionally
  std::uint64_t seed = 0;
  int channels = 3;
  std::vector<CloudExclusion> exclusions;
  std::map<std::string, GeoTransform> transforms;  // site id -> geo->pixel
};

namespace detail {

inline std::optional<TimestampKey> parse_monthly_stamp(const std::string& filename) {
  static const std::regex re("global_monthly_(\\d{4})_(\\d{2})");
  std::smatch m;
  if (std::regex_search(filename, m, re)) {
    return TimestampKey{std::stoi(m[1].str()), std::stoi(m[2].str())};
  }
  return std::nullopt;
}

inline bool is_image_file(const std::filesystem::path& p) {
  const std::string ext = p.extension().string();
  return ext == ".tif" || ext == ".tiff" || ext == ".png";
}

}  // namespace detail

inline SplitCounts default_split_counts(int n_labeled) {
  if (n_labeled < 3) return {n_labeled, 0, 0};
  SplitCounts c;
  c.n_val = std::max(1, n_labeled / 8);
  c.n_test = std::max(1, n_labeled / 4);
  c.n_train = n_labeled - c.n_val - c.n_test;
  return c;
}

// Scans one site directory (images/ plus labels/ for labeled sites) without
// decoding pixels; label rasters are cached later by prepare_dataset.
inline SiteTimeSeries scan_site_layout(const std::filesystem::path& site_dir, bool labeled,
                                       const GeoTransform* geo) {
  namespace fs = std::filesystem;
  SiteTimeSeries site;
  site.site_id = site_dir.filename().string();
  site.split = labeled ? Split::Train : Split::Unlabeled;

  const fs::path images = site_dir / "images";
  if (!fs::is_directory(images)) {
    throw DataError("site " + site.site_id + ": missing images/ directory");
  }
  std::map<TimestampKey, SiteTimestamp> by_stamp;
  for (const auto& entry : fs::directory_iterator(images)) {
    if (!entry.is_regular_file() || !detail::is_image_file(entry.path())) continue;
    auto stamp = detail::parse_monthly_stamp(entry.path().filename().string());
    if (!stamp) continue;
    SiteTimestamp ts;
    ts.key = *stamp;
    ts.image_path = fs::absolute(entry.path()).string();
    by_stamp[*stamp] = std::move(ts);
  }
  if (by_stamp.empty()) {
    throw DataError("site " + site.site_id + ": no monthly mosaics found under images/");
  }

  if (labeled) {
    const fs::path labels = site_dir / "labels";
    std::map<TimestampKey, fs::path> label_files;
    if (fs::is_directory(labels)) {
      for (const auto& entry : fs::directory_iterator(labels)) {
        if (!entry.is_regular_file() || entry.path().extension() != ".geojson") continue;
        if (auto stamp = detail::parse_monthly_stamp(entry.path().filename().string())) {
          label_files[*stamp] = fs::absolute(entry.path());
        }
      }
    }
    std::string missing;
    for (auto& [stamp, ts] : by_stamp) {
      auto it = label_files.find(stamp);
      if (it == label_files.end()) {
        missing += (missing.empty() ? "" : ", ") + stamp.str();
        continue;
      }
      ts.footprint_path = it->second.string();
      ts.footprints = footprints_from_geojson(read_json_file(it->second), geo);
    }
    if (!missing.empty()) {
      throw DataError("site " + site.site_id + ": labeled site lacks footprints for timestamps " +
                      missing);
    }
  }
  for (auto& [stamp, ts] : by_stamp) site.timestamps.push_back(std::move(ts));
  return site;
}

// Full prepare pass: scan train/ and test/, assign splits, apply cloud
// exclusions, rasterize label caches, write manifests + dataset index.
inline std::vector<DatasetIndexEntry> prepare_dataset(const PrepareConfig& cfg) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(cfg.root)) {
    throw DataError("SpaceNet7 root not found: " + cfg.root.string());
  }
  auto list_sites = [](const fs::path& dir) {
    std::vector<fs::path> out;
    if (fs::is_directory(dir)) {
      for (const auto& e : fs::directory_iterator(dir)) {
        if (e.is_directory()) out.push_back(e.path());
      }
    }
    std::sort(out.begin(), out.end());
    return out;
  };
  const auto labeled_dirs = list_sites(cfg.root / "train");
  const auto unlabeled_dirs = list_sites(cfg.root / "test");
  if (labeled_dirs.empty() && unlabeled_dirs.empty()) {
    throw DataError("no sites found under " + cfg.root.string() + " (expected train/ and test/)");
  }

  std::vector<SiteTimeSeries> sites;
  std::vector<std::string> labeled_ids, unlabeled_ids;
  for (const auto& dir : labeled_dirs) {
    const std::string id = dir.filename().string();
    const GeoTransform* geo = nullptr;
    if (auto it = cfg.transforms.find(id); it != cfg.transforms.end()) geo = &it->second;
    sites.push_back(scan_site_layout(dir, /*labeled=*/true, geo));
    labeled_ids.push_back(id);
  }
  for (const auto& dir : unlabeled_dirs) {
    sites.push_back(scan_site_layout(dir, /*labeled=*/false, nullptr));
    unlabeled_ids.push_back(dir.filename().string());
  }

  const SplitCounts counts = cfg.split_counts.n_train >= 0
                                 ? cfg.split_counts
                                 : default_split_counts(static_cast<int>(labeled_ids.size()));
  const auto split_map = assign_splits(labeled_ids, unlabeled_ids, counts, cfg.seed);

  std::vector<DatasetIndexEntry> index;
  for (auto& site : sites) {
    site.split = split_map.at(site.site_id);
    apply_cloud_exclusions(site, cfg.exclusions);

    // Probe dims from the first image, cache rasterized labels.
    Tensor probe = read_image(site.timestamps.front().image_path, cfg.channels);
    site.channels = probe.c();
    site.height = probe.h();
    site.width = probe.w();

    const fs::path site_dir = cfg.out / site.site_id;
    json ts_list = json::array();
    for (auto& ts : site.timestamps) {
      json entry = {{"year", ts.key.year},
                    {"month", ts.key.month},
                    {"image", ts.image_path},
                    {"cloud_excluded", ts.cloud_excluded}};
      if (ts.footprints) {
        entry["footprints"] = ts.footprint_path;
        Raster label = rasterize_footprints(*ts.footprints, site.height, site.width);
        const std::string cache_rel = "label_cache/" + ts.key.str() + ".png";
        write_mask_png(site_dir / cache_rel, label);
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
    if (auto it = cfg.transforms.find(site.site_id); it != cfg.transforms.end()) {
      const GeoTransform& t = it->second;
      manifest["coordinate_space"] = "geo";
      manifest["transform"] = {t.a, t.b, t.c, t.d, t.e, t.f};
    }
    write_json_file(site_dir / "manifest.json", manifest);
    index.push_back({site.site_id, site.site_id + "/manifest.json", site.split});
  }

  write_dataset_index(cfg.out, index,
                      {{"source_root", fs::absolute(cfg.root).string()},
                       {"seed", cfg.seed},
                       {"split_counts", {counts.n_train, counts.n_val, counts.n_test}}});
  return index;
}

}  // namespace siamcd
