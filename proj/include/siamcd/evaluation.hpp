#pragma once

// Pixel-level evaluation: confusion counts, precision/recall/F1, qualitative
// TP/TN/FP/FN maps, tiled whole-site model evaluation, and the cross-model
// comparison table.

#include <cstdint>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "siamcd/backbone.hpp"
#include "siamcd/data.hpp"

namespace siamcd {

struct ConfusionCounts {
  std::int64_t tp = 0, fp = 0, fn = 0, tn = 0;

  std::int64_t total() const { return tp + fp + fn + tn; }

  ConfusionCounts& operator+=(const ConfusionCounts& o) {
    tp += o.tp;
    fp += o.fp;
    fn += o.fn;
    tn += o.tn;
    return *this;
  }
  friend ConfusionCounts operator+(ConfusionCounts a, const ConfusionCounts& b) { return a += b; }
};

struct Metrics {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

struct MetricsRow {
  std::string model;
  std::string split;
  ConfusionCounts counts;
  Metrics metrics;
  double threshold = 0.5;
};

// ----------------------------------------------------------------------------
// Counting and metrics
// ----------------------------------------------------------------------------

inline ConfusionCounts accumulate_confusion(const Raster& pred, const Raster& label,
                                            double threshold) {
  require_same_shape(pred, label, "accumulate_confusion");
  if (!(threshold > 0.0 && threshold < 1.0)) {
    throw ConfigError("binarization threshold must lie in (0,1)");
  }
  ConfusionCounts c;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const bool hit = pred.v[i] >= threshold;
    const bool pos = label.v[i] >= 0.5f;
    if (hit && pos) ++c.tp;
    else if (hit && !pos) ++c.fp;
    else if (!hit && pos) ++c.fn;
    else ++c.tn;
  }
  return c;
}

// P = TP/(TP+FP), R = TP/(TP+FN), F1 = 2PR/(P+R); zero denominators yield 0
// so reports stay total.
inline Metrics precision_recall_f1(const ConfusionCounts& c) {
  Metrics m;
  m.precision = c.tp + c.fp > 0 ? static_cast<double>(c.tp) / (c.tp + c.fp) : 0.0;
  m.recall = c.tp + c.fn > 0 ? static_cast<double>(c.tp) / (c.tp + c.fn) : 0.0;
  m.f1 = m.precision + m.recall > 0.0
             ? 2.0 * m.precision * m.recall / (m.precision + m.recall)
             : 0.0;
  return m;
}

// ----------------------------------------------------------------------------
// Qualitative maps: TP white, TN black, FP green, FN purple
// ----------------------------------------------------------------------------

struct RgbImage {
  int h = 0, w = 0;
  std::vector<std::uint8_t> rgb;  // packed, 3 bytes per pixel

  RgbImage() = default;
  RgbImage(int height, int width)
      : h(height), w(width), rgb(static_cast<std::size_t>(height) * width * 3, 0) {}

  void set(int y, int x, std::uint8_t r, std::uint8_t g, std::uint8_t b) {
    const std::size_t i = (static_cast<std::size_t>(y) * w + x) * 3;
    rgb[i] = r;
    rgb[i + 1] = g;
    rgb[i + 2] = b;
  }
};

inline RgbImage render_qualitative_map(const Raster& pred, const Raster& label, double threshold) {
  require_same_shape(pred, label, "render_qualitative_map");
  if (!(threshold > 0.0 && threshold < 1.0)) {
    throw ConfigError("binarization threshold must lie in (0,1)");
  }
  RgbImage img(pred.h, pred.w);
  for (int y = 0; y < pred.h; ++y) {
    for (int x = 0; x < pred.w; ++x) {
      const bool hit = pred.at(y, x) >= threshold;
      const bool pos = label.at(y, x) >= 0.5f;
      if (hit && pos) img.set(y, x, 255, 255, 255);
      else if (hit && !pos) img.set(y, x, 0, 255, 0);
      else if (!hit && pos) img.set(y, x, 128, 0, 128);
      // TN stays black
    }
  }
  return img;
}

// ----------------------------------------------------------------------------
// Whole-site evaluation
// ----------------------------------------------------------------------------

enum class EvalPairs { FirstLast, AllPairs };

struct EvalOptions {
  double threshold = 0.5;
  EvalPairs pairs = EvalPairs::FirstLast;
  bool construction_only_change = false;
  int max_tile = 256;
  int batch_tiles = 8;
};

// Full-site change prediction assembled from network-divisible tiles.
inline Raster predict_change_map(Network& net, const SiteTimeSeries& site, int t1, int t2,
                                 const EvalOptions& opt = {}) {
  const int div = net.config().spatial_divisor();
  const int h = site.height, w = site.width;
  if (h < div || w < div) {
    throw ShapeError("site " + site.site_id + " smaller than the network divisor " +
                     std::to_string(div));
  }
  const int tile_h = std::min({h, opt.max_tile}) / div * div;
  const int tile_w = std::min({w, opt.max_tile}) / div * div;
  std::vector<std::pair<int, int>> origins;
  for (int y = 0;; y += tile_h) {
    if (y + tile_h > h) y = h - tile_h;
    for (int x = 0;; x += tile_w) {
      if (x + tile_w > w) x = w - tile_w;
      origins.emplace_back(y, x);
      if (x == w - tile_w) break;
    }
    if (y == h - tile_h) break;
  }
  const Tensor& img1 = site.timestamps[t1].image;
  const Tensor& img2 = site.timestamps[t2].image;
  Raster canvas(h, w);
  for (std::size_t start = 0; start < origins.size();
       start += static_cast<std::size_t>(opt.batch_tiles)) {
    const int nb = static_cast<int>(
        std::min<std::size_t>(opt.batch_tiles, origins.size() - start));
    Tensor a(nb, site.channels, tile_h, tile_w), b(nb, site.channels, tile_h, tile_w);
    for (int i = 0; i < nb; ++i) {
      const auto [oy, ox] = origins[start + i];
      for (int c = 0; c < site.channels; ++c) {
        for (int y = 0; y < tile_h; ++y) {
          const float* s1 = img1.plane_ptr(0, c) + static_cast<std::size_t>(oy + y) * w + ox;
          const float* s2 = img2.plane_ptr(0, c) + static_cast<std::size_t>(oy + y) * w + ox;
          std::copy(s1, s1 + tile_w, a.plane_ptr(i, c) + static_cast<std::size_t>(y) * tile_w);
          std::copy(s2, s2 + tile_w, b.plane_ptr(i, c) + static_cast<std::size_t>(y) * tile_w);
        }
      }
    }
    BatchOutputs out = net.forward(a, b, /*training=*/false);
    for (int i = 0; i < nb; ++i) {
      const auto [oy, ox] = origins[start + i];
      for (int y = 0; y < tile_h; ++y) {
        const float* src = out.p_c.plane_ptr(i, 0) + static_cast<std::size_t>(y) * tile_w;
        std::copy(src, src + tile_w,
                  canvas.v.data() + static_cast<std::size_t>(oy + y) * w + ox);
      }
    }
  }
  return canvas;
}

// Evaluation pairs for a site under the configured pairing rule.
inline std::vector<std::pair<int, int>> evaluation_pairs(const SiteTimeSeries& site,
                                                         EvalPairs rule) {
  const std::vector<int> usable = site.usable_timestamps();
  if (usable.size() < 2) {
    throw DataError("site " + site.site_id + " has fewer than 2 usable timestamps");
  }
  std::vector<std::pair<int, int>> pairs;
  if (rule == EvalPairs::FirstLast) {
    pairs.emplace_back(usable.front(), usable.back());
  } else {
    for (std::size_t i = 0; i < usable.size(); ++i) {
      for (std::size_t j = i + 1; j < usable.size(); ++j) {
        pairs.emplace_back(usable[i], usable[j]);
      }
    }
  }
  return pairs;
}

struct SitePairResult {
  std::string site_id;
  TimestampKey t1, t2;
  Raster prediction;
  Raster change_label;
  ConfusionCounts counts;
};

// Evaluates a change predictor over labeled sites: counts are merged
// globally (micro aggregation) and metrics computed once at the end.
// `predict(site, t1, t2)` must return an H x W change-probability raster.
template <typename Predictor>
std::pair<ConfusionCounts, MetricsRow> evaluate_with_predictor(
    Predictor&& predict, const std::vector<SiteTimeSeries>& sites, const std::string& model_name,
    const std::string& split_name_str, const EvalOptions& opt = {},
    std::vector<SitePairResult>* per_pair = nullptr) {
  ConfusionCounts total;
  for (const auto& site : sites) {
    if (!site.labeled()) {
      throw ContractError("evaluate_model requires labeled sites; '" + site.site_id +
                          "' is unlabeled");
    }
    for (const auto& [t1, t2] : evaluation_pairs(site, opt.pairs)) {
      Raster pred = predict(site, t1, t2);
      Raster label = derive_change_label(*site.timestamps[t1].label, *site.timestamps[t2].label,
                                         opt.construction_only_change);
      ConfusionCounts c = accumulate_confusion(pred, label, opt.threshold);
      total += c;
      if (per_pair) {
        per_pair->push_back({site.site_id, site.timestamps[t1].key, site.timestamps[t2].key,
                             std::move(pred), std::move(label), c});
      }
    }
  }
  MetricsRow row;
  row.model = model_name;
  row.split = split_name_str;
  row.counts = total;
  row.metrics = precision_recall_f1(total);
  row.threshold = opt.threshold;
  return {total, row};
}

inline std::pair<ConfusionCounts, MetricsRow> evaluate_model(
    Network& net, const std::vector<SiteTimeSeries>& sites, const std::string& model_name,
    const std::string& split_name_str, const EvalOptions& opt = {},
    std::vector<SitePairResult>* per_pair = nullptr) {
  return evaluate_with_predictor(
      [&](const SiteTimeSeries& site, int t1, int t2) {
        return predict_change_map(net, site, t1, t2, opt);
      },
      sites, model_name, split_name_str, opt, per_pair);
}

// ----------------------------------------------------------------------------
// Comparison table
// ----------------------------------------------------------------------------

struct ComparisonEntry {
  std::string model;
  double f1 = 0.0, precision = 0.0, recall = 0.0;
  bool f1_best = false, precision_best = false, recall_best = false;
};

inline std::vector<ComparisonEntry> mark_best_per_column(
    const std::vector<std::pair<std::string, Metrics>>& rows) {
  if (rows.empty()) throw ContractError("compare_models: no rows");
  std::vector<ComparisonEntry> out;
  double best_f1 = 0.0, best_p = 0.0, best_r = 0.0;
  for (const auto& [name, m] : rows) {
    best_f1 = std::max(best_f1, m.f1);
    best_p = std::max(best_p, m.precision);
    best_r = std::max(best_r, m.recall);
  }
  for (const auto& [name, m] : rows) {
    ComparisonEntry e;
    e.model = name;
    e.f1 = m.f1;
    e.precision = m.precision;
    e.recall = m.recall;
    e.f1_best = m.f1 == best_f1;
    e.precision_best = m.precision == best_p;
    e.recall_best = m.recall == best_r;
    out.push_back(e);
  }
  return out;
}

// Plain-text rendering; the best value per column carries a '*' marker.
inline std::string comparison_table_text(const std::vector<ComparisonEntry>& entries) {
  std::size_t name_w = 5;  // "Model"
  for (const auto& e : entries) name_w = std::max(name_w, e.model.size());
  std::ostringstream os;
  os << std::left << std::setw(static_cast<int>(name_w)) << "Model" << " |     F1 | Precision | Recall\n";
  os << std::string(name_w, '-') << "-+--------+-----------+-------\n";
  os << std::fixed << std::setprecision(3);
  auto cell = [](double v, bool best, int width) {
    std::ostringstream c;
    c << (best ? "*" : " ") << std::fixed << std::setprecision(3) << v;
    std::string s = c.str();
    return std::string(width > static_cast<int>(s.size()) ? width - s.size() : 0, ' ') + s;
  };
  for (const auto& e : entries) {
    os << std::left << std::setw(static_cast<int>(name_w)) << e.model << " |"
       << cell(e.f1, e.f1_best, 7) << " |" << cell(e.precision, e.precision_best, 10) << " |"
       << cell(e.recall, e.recall_best, 7) << "\n";
  }
  return os.str();
}

inline std::string comparison_table_csv(const std::vector<ComparisonEntry>& entries) {
  std::ostringstream os;
  os << "model,f1,precision,recall,f1_best,precision_best,recall_best\n";
  os << std::fixed << std::setprecision(3);
  for (const auto& e : entries) {
    os << e.model << "," << e.f1 << "," << e.precision << "," << e.recall << ","
       << (e.f1_best ? 1 : 0) << "," << (e.precision_best ? 1 : 0) << ","
       << (e.recall_best ? 1 : 0) << "\n";
  }
  return os.str();
}

inline std::string metrics_csv_header() {
  return "model,split,tp,fp,fn,tn,precision,recall,f1,threshold";
}

inline std::string metrics_csv_row(const MetricsRow& r) {
  std::ostringstream os;
  os << r.model << "," << r.split << "," << r.counts.tp << "," << r.counts.fp << ","
     << r.counts.fn << "," << r.counts.tn << "," << std::setprecision(17) << r.metrics.precision
     << "," << r.metrics.recall << "," << r.metrics.f1 << "," << r.threshold;
  return os.str();
}

}  // namespace siamcd
