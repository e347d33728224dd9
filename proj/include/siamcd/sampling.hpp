#pragma once

// Training-sample protocol: pick two timestamps per draw, propose candidate
// crops, weight them by change-pixel fraction (plus a base probability) to
// oversample change, and apply flip/rotate augmentation. Epoch plans are
// precomputed, deterministic per seed, and globally shuffled.

#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "siamcd/data.hpp"
#include "siamcd/losses.hpp"

namespace siamcd {

struct SamplerConfig {
  int patch_size = 256;
  int candidates_per_draw = 20;
  double base_probability = 0.02;
  int samples_per_site = 100;
  bool oversample = true;
  bool augment = true;
  bool construction_only_change = false;
  std::uint64_t seed = 0;

  void validate() const {
    if (patch_size < 1) throw ConfigError("patch_size must be >= 1");
    if (candidates_per_draw < 1) throw ConfigError("candidates_per_draw must be >= 1");
    if (!(base_probability > 0.0)) throw ConfigError("base_probability must be > 0");
    if (samples_per_site < 1) throw ConfigError("samples_per_site must be >= 1");
  }
};

struct Patch {
  std::string site_id;
  TimestampKey t1, t2;
  int row = 0, col = 0;
  int size = 0;
};

// One flip/rotate transform: horizontal flip, then vertical flip, then k
// counter-clockwise quarter turns.
struct AugmentOp {
  bool hflip = false;
  bool vflip = false;
  int k = 0;

  int code() const { return (k << 2) | (static_cast<int>(vflip) << 1) | static_cast<int>(hflip); }
  static AugmentOp from_code(int code) {
    return {(code & 1) != 0, (code & 2) != 0, (code >> 2) & 3};
  }
  bool identity() const { return !hflip && !vflip && k == 0; }
};

struct PlanEntry {
  Patch patch;
  int site_index = 0;  // position in the site list the plan was drawn over
  int t1_index = 0, t2_index = 0;
  bool labeled = false;
  AugmentOp transform;
};

// ----------------------------------------------------------------------------
// Primitive draws
// ----------------------------------------------------------------------------

// Two distinct non-excluded timestamps, uniform over unordered pairs,
// returned in chronological order.
inline std::pair<int, int> select_timestamp_pair(const SiteTimeSeries& series, Rng& rng) {
  const std::vector<int> usable = series.usable_timestamps();
  if (usable.size() < 2) {
    throw SamplingError("site " + series.site_id + " has " + std::to_string(usable.size()) +
                        " usable timestamps (need >= 2)");
  }
  const int n = static_cast<int>(usable.size());
  const int i = static_cast<int>(rng.uniform_int(n));
  int j = static_cast<int>(rng.uniform_int(n - 1));
  if (j >= i) ++j;
  const int a = usable[std::min(i, j)];
  const int b = usable[std::max(i, j)];
  return {a, b};
}

// n crop origins uniform over valid positions, with replacement.
inline std::vector<std::pair<int, int>> propose_patches(const Raster& change_label, int n,
                                                        int size, Rng& rng) {
  if (size > change_label.h || size > change_label.w) {
    throw SamplingError("patch size " + std::to_string(size) + " exceeds raster dims " +
                        std::to_string(change_label.h) + "x" + std::to_string(change_label.w));
  }
  const int rows = change_label.h - size + 1;
  const int cols = change_label.w - size + 1;
  std::vector<std::pair<int, int>> origins;
  origins.reserve(n);
  for (int i = 0; i < n; ++i) {
    origins.emplace_back(static_cast<int>(rng.uniform_int(rows)),
                         static_cast<int>(rng.uniform_int(cols)));
  }
  return origins;
}

// Weight = change fraction + base probability, normalized to sum 1.
inline std::vector<double> patch_weights(const Raster& change_label,
                                         const std::vector<std::pair<int, int>>& origins, int size,
                                         double base_probability) {
  if (origins.empty()) throw SamplingError("patch_weights: no candidate origins");
  std::vector<double> w(origins.size());
  const double denom_px = static_cast<double>(size) * size;
  for (std::size_t i = 0; i < origins.size(); ++i) {
    const auto [r, c] = origins[i];
    double count = 0.0;
    for (int y = r; y < r + size; ++y) {
      for (int x = c; x < c + size; ++x) count += change_label.at(y, x) >= 0.5f ? 1.0 : 0.0;
    }
    w[i] = count / denom_px + base_probability;
  }
  double sum = 0.0;
  for (double v : w) sum += v;
  for (double& v : w) v /= sum;
  return w;
}

// Categorical draw over a normalized weight vector.
inline int draw_patch(const std::vector<double>& weights, Rng& rng) {
  if (weights.empty()) throw ContractError("draw_patch: empty weight vector");
  double sum = 0.0;
  for (double v : weights) sum += v;
  if (std::abs(sum - 1.0) > 1e-9) {
    throw ContractError("draw_patch: weights sum to " + std::to_string(sum) + ", expected 1");
  }
  const double u = rng.uniform();
  double acc = 0.0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    acc += weights[i];
    if (u < acc) return static_cast<int>(i);
  }
  return static_cast<int>(weights.size()) - 1;
}

// ----------------------------------------------------------------------------
// Augmentation
// ----------------------------------------------------------------------------

inline AugmentOp sample_augment(Rng& rng) {
  AugmentOp op;
  op.hflip = rng.uniform_int(2) == 1;
  op.vflip = rng.uniform_int(2) == 1;
  op.k = static_cast<int>(rng.uniform_int(4));
  return op;
}

namespace detail {

inline void transform_plane(const float* src, float* dst, int h, int w, const AugmentOp& op) {
  // dst is square h x w for odd k (caller enforces), same dims otherwise.
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      int sy = y, sx = x;
      // Invert the rotation: dst(y,x) = rot_k(src)(y,x).
      switch (op.k) {
        case 1: sy = x; sx = w - 1 - y; break;          // 90 deg CCW
        case 2: sy = h - 1 - y; sx = w - 1 - x; break;  // 180 deg
        case 3: sy = h - 1 - x; sx = y; break;          // 270 deg CCW
        default: break;
      }
      if (op.vflip) sy = h - 1 - sy;
      if (op.hflip) sx = w - 1 - sx;
      dst[y * w + x] = src[sy * w + sx];
    }
  }
}

}  // namespace detail

inline Raster apply_augment(const Raster& r, const AugmentOp& op) {
  if (op.k % 2 == 1 && r.h != r.w) {
    throw ShapeError("quarter-turn rotation requires square crops, got " + std::to_string(r.h) +
                     "x" + std::to_string(r.w));
  }
  Raster out(r.h, r.w);
  detail::transform_plane(r.v.data(), out.v.data(), r.h, r.w, op);
  return out;
}

inline Tensor apply_augment(const Tensor& t, const AugmentOp& op) {
  if (op.k % 2 == 1 && t.h() != t.w()) {
    throw ShapeError("quarter-turn rotation requires square crops, got " + t.shape_str());
  }
  Tensor out(t.n(), t.c(), t.h(), t.w());
  for (int n = 0; n < t.n(); ++n) {
    for (int c = 0; c < t.c(); ++c) {
      detail::transform_plane(t.plane_ptr(n, c), out.plane_ptr(n, c), t.h(), t.w(), op);
    }
  }
  return out;
}

// Samples one transform and applies it to both images and all labels.
inline std::pair<std::pair<Tensor, Tensor>, std::optional<LabelSet>> augment(
    const Tensor& image_t1, const Tensor& image_t2, const std::optional<LabelSet>& labels,
    Rng& rng) {
  const AugmentOp op = sample_augment(rng);
  std::optional<LabelSet> out_labels;
  if (labels) {
    out_labels = LabelSet{apply_augment(labels->y_s_t1, op), apply_augment(labels->y_s_t2, op),
                          apply_augment(labels->y_c, op)};
  }
  return {{apply_augment(image_t1, op), apply_augment(image_t2, op)}, std::move(out_labels)};
}

// ----------------------------------------------------------------------------
// Epoch planning and materialization
// ----------------------------------------------------------------------------

inline Tensor crop_image(const Tensor& img, int row, int col, int size) {
  Tensor out(1, img.c(), size, size);
  for (int c = 0; c < img.c(); ++c) {
    for (int y = 0; y < size; ++y) {
      const float* src = img.plane_ptr(0, c) + static_cast<std::size_t>(row + y) * img.w() + col;
      float* dst = out.plane_ptr(0, c) + static_cast<std::size_t>(y) * size;
      std::copy(src, src + size, dst);
    }
  }
  return out;
}

inline Raster crop_raster(const Raster& r, int row, int col, int size) {
  Raster out(size, size);
  for (int y = 0; y < size; ++y) {
    const float* src = r.v.data() + static_cast<std::size_t>(row + y) * r.w + col;
    std::copy(src, src + size, out.v.data() + static_cast<std::size_t>(y) * size);
  }
  return out;
}

// samples_per_site patches from every site (labeled and unlabeled alike),
// deterministic per epoch seed, globally shuffled. Candidate crops of labeled
// sites are weighted by change fraction; unlabeled sites draw uniformly.
inline std::vector<PlanEntry> epoch_plan(const std::vector<SiteTimeSeries>& sites,
                                         const SamplerConfig& cfg, std::uint64_t epoch_seed) {
  cfg.validate();
  std::vector<PlanEntry> plan;
  plan.reserve(sites.size() * static_cast<std::size_t>(cfg.samples_per_site));
  for (int s = 0; s < static_cast<int>(sites.size()); ++s) {
    const SiteTimeSeries& site = sites[s];
    if (site.height < cfg.patch_size || site.width < cfg.patch_size) {
      throw SamplingError("site " + site.site_id + " (" + std::to_string(site.height) + "x" +
                          std::to_string(site.width) + ") is smaller than patch size " +
                          std::to_string(cfg.patch_size));
    }
    if (site.usable_timestamps().size() < 2) {
      throw SamplingError("site " + site.site_id + " has fewer than 2 usable timestamps");
    }
    if (site.labeled()) {
      for (const auto& ts : site.timestamps) {
        if (!ts.cloud_excluded && !ts.label) {
          throw SamplingError("site " + site.site_id + " lacks a label raster at " +
                              ts.key.str());
        }
      }
    }
    Rng rng(mix_seed(epoch_seed, mix_seed(0x517e, str_hash64(site.site_id))));
    for (int i = 0; i < cfg.samples_per_site; ++i) {
      PlanEntry e;
      e.site_index = s;
      e.labeled = site.labeled();
      auto [t1, t2] = select_timestamp_pair(site, rng);
      e.t1_index = t1;
      e.t2_index = t2;
      e.patch.site_id = site.site_id;
      e.patch.t1 = site.timestamps[t1].key;
      e.patch.t2 = site.timestamps[t2].key;
      e.patch.size = cfg.patch_size;

      Raster probe(site.height, site.width);  // zero raster when not weighting
      const bool weighted = site.labeled() && cfg.oversample;
      if (weighted) {
        probe = derive_change_label(*site.timestamps[t1].label, *site.timestamps[t2].label,
                                    cfg.construction_only_change);
      }
      auto origins = propose_patches(probe, cfg.candidates_per_draw, cfg.patch_size, rng);
      auto weights = patch_weights(probe, origins, cfg.patch_size, cfg.base_probability);
      const int pick = draw_patch(weights, rng);
      e.patch.row = origins[pick].first;
      e.patch.col = origins[pick].second;
      e.transform = cfg.augment ? sample_augment(rng) : AugmentOp{};
      plan.push_back(std::move(e));
    }
  }
  Rng shuffle_rng(mix_seed(epoch_seed, 0x0de7));
  shuffle_rng.shuffle(plan);
  return plan;
}

struct MaterializedSample {
  Tensor image_t1;  // (1,C,s,s)
  Tensor image_t2;
  std::optional<LabelSet> labels;
};

// Crops and augments one plan entry. Pure function of (sites, entry).
inline MaterializedSample materialize(const std::vector<SiteTimeSeries>& sites,
                                      const PlanEntry& e, bool construction_only_change = false) {
  const SiteTimeSeries& site = sites[e.site_index];
  const auto& ts1 = site.timestamps[e.t1_index];
  const auto& ts2 = site.timestamps[e.t2_index];
  MaterializedSample out;
  out.image_t1 = apply_augment(crop_image(ts1.image, e.patch.row, e.patch.col, e.patch.size),
                               e.transform);
  out.image_t2 = apply_augment(crop_image(ts2.image, e.patch.row, e.patch.col, e.patch.size),
                               e.transform);
  if (e.labeled) {
    LabelSet l;
    l.y_s_t1 = apply_augment(crop_raster(*ts1.label, e.patch.row, e.patch.col, e.patch.size),
                             e.transform);
    l.y_s_t2 = apply_augment(crop_raster(*ts2.label, e.patch.row, e.patch.col, e.patch.size),
                             e.transform);
    l.y_c = derive_change_label(l.y_s_t1, l.y_s_t2, construction_only_change);
    out.labels = std::move(l);
  }
  return out;
}

// Reproducibility dump: one row per plan entry.
inline std::string plan_to_csv(const std::vector<PlanEntry>& plan) {
  std::ostringstream os;
  os << "site,t1,t2,row,col,labeled,transform\n";
  for (const auto& e : plan) {
    os << e.patch.site_id << "," << e.patch.t1.str() << "," << e.patch.t2.str() << ","
       << e.patch.row << "," << e.patch.col << "," << (e.labeled ? 1 : 0) << ","
       << e.transform.code() << "\n";
  }
  return os.str();
}

}  // namespace siamcd
