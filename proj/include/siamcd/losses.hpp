#pragma once

// Power Jaccard base loss and the semi-supervised sample loss composition.
//
// The base loss over a prediction p and target y is
//
//   L = 1 - (sum p*y + eps) / (sum p^q + sum y^q - sum p*y + eps),  q in (1,2]
//
// Labeled samples pay two supervised terms (semantics + change); unlabeled
// samples pay phi times a consistency term between the two change outputs.
// All accumulation runs in double precision.

#include <cmath>
#include <optional>
#include <span>
#include <vector>

#include "siamcd/backbone.hpp"

namespace siamcd {

enum class ConsistencyMode {
  // Consistency between the two change predictions, L(p_c, p_cs). Usable on
  // unlabeled samples; gradients flow into both arguments.
  PredictionPair,
  // Consistency written against the change label, L(p_c, y_c) + L(p_cs, y_c).
  // Requires labels, so it cannot drive unlabeled training; kept selectable
  // for side-by-side analysis.
  LabeledStyle,
};

struct LossConfig {
  double power_q = 2.0;
  double smoothing_eps = 1e-6;
  double phi = 1.0;
  ConsistencyMode consistency_mode = ConsistencyMode::PredictionPair;

  void validate() const {
    if (!(power_q > 1.0 && power_q <= 2.0)) {
      throw ConfigError("power_q must lie in (1, 2], got " + std::to_string(power_q));
    }
    if (!(smoothing_eps >= 0.0)) throw ConfigError("smoothing_eps must be >= 0");
    if (!std::isfinite(phi) || phi < 0.0) throw ConfigError("phi must be finite and >= 0");
  }
};

// Ground truth for one labeled sample: building masks at both timestamps and
// the derived change mask. All binary, all the same shape.
struct LabelSet {
  Raster y_s_t1;
  Raster y_s_t2;
  Raster y_c;
};

struct LossBreakdown {
  double semantics = 0.0;
  double change = 0.0;
  double consistency = 0.0;
  double total = 0.0;
};

struct SampleLoss {
  double value = 0.0;
  LossBreakdown breakdown;
};

// Gradients of a (scaled) sample loss w.r.t. the probability outputs.
struct OutputGradRasters {
  std::optional<Raster> d_p_s_t1;
  std::optional<Raster> d_p_s_t2;
  std::optional<Raster> d_p_cs;
  Raster d_p_c;
};

// ----------------------------------------------------------------------------
// Scalar kernels (templated so gradient tests can run in pure double)
// ----------------------------------------------------------------------------

template <typename T>
double power_jaccard_value(std::span<const T> p, std::span<const T> y, double q, double eps) {
  if (p.empty()) throw ContractError("power_jaccard: empty raster");
  if (p.size() != y.size()) throw ShapeError("power_jaccard: size mismatch");
  double sum_pq = 0.0, sum_yq = 0.0, sum_py = 0.0;
  if (q == 2.0) {
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double pi = p[i], yi = y[i];
      sum_pq += pi * pi;
      sum_yq += yi * yi;
      sum_py += pi * yi;
    }
  } else {
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double pi = p[i], yi = y[i];
      sum_pq += std::pow(pi, q);
      sum_yq += std::pow(yi, q);
      sum_py += pi * yi;
    }
  }
  const double num = sum_py + eps;
  const double den = sum_pq + sum_yq - sum_py + eps;
  if (den == 0.0) return 0.0;  // only when eps == 0 and both rasters are all-zero
  return 1.0 - num / den;
}

// Analytic gradient. dp/dy may be null when a side is a constant target.
//   dL/dp_j = (N*(q*p_j^(q-1) - y_j) - y_j*D) / D^2,  N = sum p*y + eps,
//   dL/dy_j symmetric;                                D = denominator above.
template <typename T>
double power_jaccard_grad(std::span<const T> p, std::span<const T> y, double q, double eps,
                          double* dp, double* dy) {
  if (p.empty()) throw ContractError("power_jaccard: empty raster");
  if (p.size() != y.size()) throw ShapeError("power_jaccard: size mismatch");
  double sum_pq = 0.0, sum_yq = 0.0, sum_py = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double pi = p[i], yi = y[i];
    sum_pq += q == 2.0 ? pi * pi : std::pow(pi, q);
    sum_yq += q == 2.0 ? yi * yi : std::pow(yi, q);
    sum_py += pi * yi;
  }
  const double num = sum_py + eps;
  const double den = sum_pq + sum_yq - sum_py + eps;
  if (den == 0.0) {
    if (dp) std::fill(dp, dp + p.size(), 0.0);
    if (dy) std::fill(dy, dy + p.size(), 0.0);
    return 0.0;
  }
  const double den2 = den * den;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double pi = p[i], yi = y[i];
    if (dp) {
      const double dden = q * (q == 2.0 ? pi : std::pow(pi, q - 1.0)) - yi;
      dp[i] = (num * dden - yi * den) / den2;
    }
    if (dy) {
      const double dden = q * (q == 2.0 ? yi : std::pow(yi, q - 1.0)) - pi;
      dy[i] = (num * dden - pi * den) / den2;
    }
  }
  return 1.0 - num / den;
}

// ----------------------------------------------------------------------------
// Raster-level API
// ----------------------------------------------------------------------------

inline double power_jaccard(const Raster& p, const Raster& y, const LossConfig& cfg) {
  require_same_shape(p, y, "power_jaccard");
  return power_jaccard_value<float>(p.v, y.v, cfg.power_q, cfg.smoothing_eps);
}

namespace detail {

// Adds scale * dL/dp (and optionally dL/dy) into float gradient rasters.
inline double pj_accumulate_grad(const Raster& p, const Raster& y, const LossConfig& cfg,
                                 double scale, Raster* gp, Raster* gy) {
  require_same_shape(p, y, "power_jaccard");
  static thread_local std::vector<double> dp, dy;
  dp.resize(p.size());
  double* dyp = nullptr;
  if (gy) {
    dy.resize(p.size());
    dyp = dy.data();
  }
  const double value = power_jaccard_grad<float>(p.v, y.v, cfg.power_q, cfg.smoothing_eps,
                                                 dp.data(), dyp);
  if (gp) {
    for (std::size_t i = 0; i < p.size(); ++i) gp->v[i] += static_cast<float>(scale * dp[i]);
  }
  if (gy) {
    for (std::size_t i = 0; i < p.size(); ++i) gy->v[i] += static_cast<float>(scale * dy[i]);
  }
  return value;
}

}  // namespace detail

// L_s: supervised semantics term, one Power Jaccard per timestamp.
inline double semantics_loss(const DualTaskOutputs& out, const LabelSet& labels,
                             const LossConfig& cfg) {
  if (!out.p_s_t1 || !out.p_s_t2) {
    throw ContractError("semantics_loss requires the dual-task semantic outputs");
  }
  return power_jaccard(*out.p_s_t1, labels.y_s_t1, cfg) +
         power_jaccard(*out.p_s_t2, labels.y_s_t2, cfg);
}

// L_c: supervised change term. Both change outputs are scored against y_c;
// variants without the fused head pay only the difference-decoder term.
inline double change_loss(const DualTaskOutputs& out, const LabelSet& labels,
                          const LossConfig& cfg) {
  if (out.p_c.empty()) throw ContractError("change_loss requires p_c");
  double loss = power_jaccard(out.p_c, labels.y_c, cfg);
  if (out.p_cs) loss += power_jaccard(*out.p_cs, labels.y_c, cfg);
  return loss;
}

// L_cons: agreement between the two change predictions (default mode). No
// gradient blocking; both outputs are pulled toward each other.
inline double consistency_loss(const DualTaskOutputs& out, const LossConfig& cfg,
                               const LabelSet* labels = nullptr) {
  if (!out.p_cs) {
    throw ContractError("consistency_loss requires the fused change output p_cs (SSL variant)");
  }
  if (cfg.consistency_mode == ConsistencyMode::LabeledStyle) {
    if (!labels) {
      throw ContractError("labeled_style consistency needs a change label and cannot be "
                          "evaluated on unlabeled samples");
    }
    return power_jaccard(out.p_c, labels->y_c, cfg) + power_jaccard(*out.p_cs, labels->y_c, cfg);
  }
  return power_jaccard(out.p_c, *out.p_cs, cfg);
}

// L_sample: the per-sample case split. Labeled samples pay the supervised
// terms; unlabeled samples pay phi * consistency. Exactly one side of the
// breakdown is ever nonzero.
inline SampleLoss sample_loss(const DualTaskOutputs& out, const LabelSet* labels,
                              const LossConfig& cfg) {
  SampleLoss r;
  if (labels) {
    if (out.p_s_t1 && out.p_s_t2) r.breakdown.semantics = semantics_loss(out, *labels, cfg);
    r.breakdown.change = change_loss(out, *labels, cfg);
    r.value = r.breakdown.semantics + r.breakdown.change;
  } else {
    if (!out.p_cs) {
      throw ContractError("unlabeled sample requires the SSL variant (no p_cs output present)");
    }
    r.breakdown.consistency = consistency_loss(out, cfg);
    r.value = cfg.phi * r.breakdown.consistency;
  }
  r.breakdown.total = r.value;
  return r;
}

// sample_loss plus gradients w.r.t. every touched probability output, scaled
// by `scale` (the trainer passes 1/batch_size).
inline SampleLoss sample_loss_with_grad(const DualTaskOutputs& out, const LabelSet* labels,
                                        const LossConfig& cfg, OutputGradRasters& grads,
                                        double scale = 1.0) {
  grads.d_p_c = Raster(out.p_c.h, out.p_c.w);
  if (out.p_s_t1) grads.d_p_s_t1 = Raster(out.p_s_t1->h, out.p_s_t1->w);
  if (out.p_s_t2) grads.d_p_s_t2 = Raster(out.p_s_t2->h, out.p_s_t2->w);
  if (out.p_cs) grads.d_p_cs = Raster(out.p_cs->h, out.p_cs->w);

  SampleLoss r;
  if (labels) {
    if (out.p_s_t1 && out.p_s_t2) {
      r.breakdown.semantics =
          detail::pj_accumulate_grad(*out.p_s_t1, labels->y_s_t1, cfg, scale, &*grads.d_p_s_t1,
                                     nullptr) +
          detail::pj_accumulate_grad(*out.p_s_t2, labels->y_s_t2, cfg, scale, &*grads.d_p_s_t2,
                                     nullptr);
    }
    r.breakdown.change =
        detail::pj_accumulate_grad(out.p_c, labels->y_c, cfg, scale, &grads.d_p_c, nullptr);
    if (out.p_cs) {
      r.breakdown.change +=
          detail::pj_accumulate_grad(*out.p_cs, labels->y_c, cfg, scale, &*grads.d_p_cs, nullptr);
    }
    r.value = r.breakdown.semantics + r.breakdown.change;
  } else {
    if (!out.p_cs) {
      throw ContractError("unlabeled sample requires the SSL variant (no p_cs output present)");
    }
    if (cfg.consistency_mode == ConsistencyMode::LabeledStyle) {
      throw ContractError("labeled_style consistency cannot train on unlabeled samples");
    }
    r.breakdown.consistency = detail::pj_accumulate_grad(out.p_c, *out.p_cs, cfg, scale * cfg.phi,
                                                         &grads.d_p_c, &*grads.d_p_cs);
    r.value = cfg.phi * r.breakdown.consistency;
  }
  r.breakdown.total = r.value;
  return r;
}

// Mean sample loss over a mixed labeled/unlabeled batch.
inline double batch_loss(
    std::span<const std::pair<const DualTaskOutputs*, const LabelSet*>> samples,
    const LossConfig& cfg, LossBreakdown* breakdown = nullptr) {
  if (samples.empty()) throw ContractError("batch_loss: empty batch");
  LossBreakdown acc;
  for (const auto& [out, labels] : samples) {
    SampleLoss s = sample_loss(*out, labels, cfg);
    acc.semantics += s.breakdown.semantics;
    acc.change += s.breakdown.change;
    acc.consistency += s.breakdown.consistency;
    acc.total += s.value;
  }
  const double inv = 1.0 / static_cast<double>(samples.size());
  acc.semantics *= inv;
  acc.change *= inv;
  acc.consistency *= inv;
  acc.total *= inv;
  if (breakdown) *breakdown = acc;
  return acc.total;
}

}  // namespace siamcd
