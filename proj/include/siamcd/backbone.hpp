#pragma once

// The configurable encoder-decoder network family:
//
//   EarlyFusionUNet      — images concatenated on the channel axis, one
//                          U-Net stream, change output only.
//   SiamDiff             — shared encoder on both images, skip features fused
//                          by elementwise |f_t1 - f_t2| into a change decoder.
//   SiamDiffDualTask     — adds a shared semantic decoder segmenting
//                          buildings in each image.
//   SiamDiffDualTaskSSL  — adds a 1x1 convolution over the two semantic
//                          logits, producing a second change output.
//
// Channel width doubles per level (base * 2^(k-1)); downsampling is 2x2 max
// pooling, upsampling 2x2 transpose convolution, and every conv block is
// (3x3 conv -> batchnorm -> ReLU) twice.

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "siamcd/nn.hpp"

namespace siamcd {

enum class Variant {
  EarlyFusionUNet,
  SiamDiff,
  SiamDiffDualTask,
  SiamDiffDualTaskSSL,
};

inline const char* variant_id(Variant v) {
  switch (v) {
    case Variant::EarlyFusionUNet: return "ef_unet";
    case Variant::SiamDiff: return "siam_diff";
    case Variant::SiamDiffDualTask: return "siam_diff_dual_task";
    case Variant::SiamDiffDualTaskSSL: return "siam_diff_dual_task_ssl";
  }
  return "?";
}

inline const char* variant_display_name(Variant v) {
  switch (v) {
    case Variant::EarlyFusionUNet: return "EF U-Net";
    case Variant::SiamDiff: return "Siam-Diff";
    case Variant::SiamDiffDualTask: return "Siam-Diff + Dual-Task";
    case Variant::SiamDiffDualTaskSSL: return "Siam-Diff + Dual-Task + SSL";
  }
  return "?";
}

inline Variant parse_variant(const std::string& s) {
  if (s == "ef_unet" || s == "ef") return Variant::EarlyFusionUNet;
  if (s == "siam_diff" || s == "siamdiff") return Variant::SiamDiff;
  if (s == "siam_diff_dual_task" || s == "dualtask") return Variant::SiamDiffDualTask;
  if (s == "siam_diff_dual_task_ssl" || s == "ssl") return Variant::SiamDiffDualTaskSSL;
  throw ConfigError("unknown variant '" + s +
                    "' (expected ef_unet|siam_diff|siam_diff_dual_task|siam_diff_dual_task_ssl)");
}

inline bool variant_has_semantic_heads(Variant v) {
  return v == Variant::SiamDiffDualTask || v == Variant::SiamDiffDualTaskSSL;
}

inline bool variant_has_fused_change(Variant v) { return v == Variant::SiamDiffDualTaskSSL; }

inline bool variant_is_siamese(Variant v) { return v != Variant::EarlyFusionUNet; }

struct NetworkConfig {
  Variant variant = Variant::SiamDiffDualTaskSSL;
  int input_channels = 3;
  int base_channels = 16;
  int depth = 5;
  std::uint64_t seed = 0;
  // The Siam-Diff origin fuses skips with absolute differences; a signed
  // difference is kept as an option but breaks temporal-swap symmetry.
  bool absolute_diff = true;

  void validate() const {
    if (depth < 2) throw ConfigError("network depth must be >= 2, got " + std::to_string(depth));
    if (base_channels < 1) throw ConfigError("base_channels must be >= 1");
    if (input_channels < 1) throw ConfigError("input_channels must be >= 1");
  }

  // Channel width at encoder level k (1-based).
  int width(int level) const { return base_channels << (level - 1); }

  int spatial_divisor() const { return 1 << (depth - 1); }
};

// Features f_1..f_depth; f_k has width(k) channels at 1/2^(k-1) resolution.
struct FeatureStack {
  std::vector<Tensor> f;

  int depth() const { return static_cast<int>(f.size()); }
};

// Per-sample network outputs as probability rasters. Presence follows the
// variant: EF/Siam-Diff emit only p_c; Dual-Task adds the two semantic
// outputs; the SSL variant also emits the semantics-derived change p_cs.
struct DualTaskOutputs {
  std::optional<Raster> p_s_t1;
  std::optional<Raster> p_s_t2;
  std::optional<Raster> p_cs;
  Raster p_c;
};

// Batched counterpart used by the trainer (each tensor is N x 1 x H x W).
struct BatchOutputs {
  Tensor p_c;
  std::optional<Tensor> p_s_t1;
  std::optional<Tensor> p_s_t2;
  std::optional<Tensor> p_cs;

  DualTaskOutputs sample(int n) const {
    DualTaskOutputs o;
    o.p_c = plane_to_raster(p_c, n, 0);
    if (p_s_t1) o.p_s_t1 = plane_to_raster(*p_s_t1, n, 0);
    if (p_s_t2) o.p_s_t2 = plane_to_raster(*p_s_t2, n, 0);
    if (p_cs) o.p_cs = plane_to_raster(*p_cs, n, 0);
    return o;
  }
};

// Gradients of a scalar loss w.r.t. the probability outputs.
struct HeadGrads {
  Tensor d_p_c;
  std::optional<Tensor> d_p_s_t1;
  std::optional<Tensor> d_p_s_t2;
  std::optional<Tensor> d_p_cs;
};

namespace detail {

struct ConvBlock {
  nn::Conv2d conv1;
  nn::BatchNorm bn1;
  nn::Conv2d conv2;
  nn::BatchNorm bn2;

  struct Cache {
    nn::Conv2d::Cache c1, c2;
    nn::BatchNorm::Cache b1, b2;
    nn::ReluCache r1, r2;
  };

  void build(const std::string& name, int c_in, int c_out, Rng& rng) {
    conv1.build(name + ".conv1", c_in, c_out, 3, rng);
    bn1.build(name + ".bn1", c_out);
    conv2.build(name + ".conv2", c_out, c_out, 3, rng);
    bn2.build(name + ".bn2", c_out);
  }

  Tensor forward(const Tensor& x, bool training, Cache* cache) {
    Tensor t = conv1.forward(x, cache ? &cache->c1 : nullptr);
    t = bn1.forward(t, training, cache ? &cache->b1 : nullptr);
    t = nn::relu_forward(t, cache ? &cache->r1 : nullptr);
    t = conv2.forward(t, cache ? &cache->c2 : nullptr);
    t = bn2.forward(t, training, cache ? &cache->b2 : nullptr);
    return nn::relu_forward(t, cache ? &cache->r2 : nullptr);
  }

  Tensor backward(const Tensor& dy, const Cache& cache) {
    Tensor d = nn::relu_backward(dy, cache.r2);
    d = bn2.backward(d, cache.b2);
    d = conv2.backward(d, cache.c2);
    d = nn::relu_backward(d, cache.r1);
    d = bn1.backward(d, cache.b1);
    return conv1.backward(d, cache.c1);
  }

  void collect(std::vector<nn::Param*>& out) {
    out.push_back(&conv1.w);
    out.push_back(&conv1.b);
    out.push_back(&bn1.gamma);
    out.push_back(&bn1.beta);
    out.push_back(&conv2.w);
    out.push_back(&conv2.b);
    out.push_back(&bn2.gamma);
    out.push_back(&bn2.beta);
  }
};

struct Encoder {
  std::vector<ConvBlock> levels;

  struct Cache {
    std::vector<ConvBlock::Cache> blocks;
    std::vector<nn::PoolCache> pools;
  };

  void build(const std::string& name, const NetworkConfig& cfg, int in_channels, Rng& rng) {
    levels.resize(cfg.depth);
    for (int k = 1; k <= cfg.depth; ++k) {
      const int c_in = k == 1 ? in_channels : cfg.width(k - 1);
      levels[k - 1].build(name + ".l" + std::to_string(k), c_in, cfg.width(k), rng);
    }
  }

  FeatureStack forward(const Tensor& x, bool training, Cache* cache) {
    const int depth = static_cast<int>(levels.size());
    if (cache) {
      cache->blocks.resize(depth);
      cache->pools.resize(depth - 1);
    }
    FeatureStack fs;
    fs.f.reserve(depth);
    Tensor cur = x;
    for (int k = 0; k < depth; ++k) {
      Tensor f = levels[k].forward(cur, training, cache ? &cache->blocks[k] : nullptr);
      if (k + 1 < depth) {
        cur = nn::maxpool2_forward(f, cache ? &cache->pools[k] : nullptr);
      }
      fs.f.push_back(std::move(f));
    }
    return fs;
  }

  // dfeat[k] is the gradient flowing into f_(k+1) from all consumers.
  Tensor backward(std::vector<Tensor>& dfeat, const Cache& cache) {
    const int depth = static_cast<int>(levels.size());
    Tensor dcur;
    for (int k = depth - 1; k >= 0; --k) {
      Tensor dx = levels[k].backward(dfeat[k], cache.blocks[k]);
      if (k > 0) {
        Tensor dpool = nn::maxpool2_backward(dx, cache.pools[k - 1]);
        for (std::size_t i = 0; i < dpool.size(); ++i) dfeat[k - 1][i] += dpool[i];
      } else {
        dcur = std::move(dx);
      }
    }
    return dcur;
  }

  void collect(std::vector<nn::Param*>& out) {
    for (auto& l : levels) l.collect(out);
  }
};

struct Decoder {
  std::vector<nn::ConvTranspose2x2> ups;  // deepest first
  std::vector<ConvBlock> blocks;
  nn::Conv2d head;

  struct Cache {
    std::vector<nn::ConvTranspose2x2::Cache> ups;
    std::vector<ConvBlock::Cache> blocks;
    nn::Conv2d::Cache head;
    std::vector<int> split_channels;
  };

  void build(const std::string& name, const NetworkConfig& cfg, Rng& rng) {
    const int steps = cfg.depth - 1;
    ups.resize(steps);
    blocks.resize(steps);
    for (int j = 0; j < steps; ++j) {
      const int level = cfg.depth - 1 - j;  // target level, depth-1 .. 1
      ups[j].build(name + ".l" + std::to_string(level) + ".up", cfg.width(level + 1),
                   cfg.width(level), rng);
      blocks[j].build(name + ".l" + std::to_string(level), 2 * cfg.width(level), cfg.width(level),
                      rng);
    }
    head.build(name + ".head", cfg.width(1), 1, 1, rng);
  }

  // skips[k] feeds level k+1; skips.back() is the bottleneck input.
  Tensor forward(const std::vector<Tensor>& skips, bool training, Cache* cache) {
    const int steps = static_cast<int>(ups.size());
    if (static_cast<int>(skips.size()) != steps + 1) {
      throw ShapeError("decoder: expected " + std::to_string(steps + 1) + " skip levels, got " +
                       std::to_string(skips.size()));
    }
    if (cache) {
      cache->ups.resize(steps);
      cache->blocks.resize(steps);
      cache->split_channels.resize(steps);
    }
    Tensor x = skips.back();
    for (int j = 0; j < steps; ++j) {
      Tensor up = ups[j].forward(x, cache ? &cache->ups[j] : nullptr);
      const Tensor& skip = skips[steps - 1 - j];
      if (cache) cache->split_channels[j] = up.c();
      Tensor cat = nn::concat_channels(up, skip);
      x = blocks[j].forward(cat, training, cache ? &cache->blocks[j] : nullptr);
    }
    return head.forward(x, cache ? &cache->head : nullptr);
  }

  std::vector<Tensor> backward(const Tensor& dlogit, const Cache& cache) {
    const int steps = static_cast<int>(ups.size());
    std::vector<Tensor> dskips(steps + 1);
    Tensor dx = head.backward(dlogit, cache.head);
    for (int j = steps - 1; j >= 0; --j) {
      Tensor dcat = blocks[j].backward(dx, cache.blocks[j]);
      Tensor dup;
      nn::split_channels_grad(dcat, cache.split_channels[j], dup, dskips[steps - 1 - j]);
      dx = ups[j].backward(dup, cache.ups[j]);
    }
    dskips[steps] = std::move(dx);
    return dskips;
  }

  void collect(std::vector<nn::Param*>& out) {
    for (std::size_t j = 0; j < ups.size(); ++j) {
      out.push_back(&ups[j].w);
      out.push_back(&ups[j].b);
      blocks[j].collect(out);
    }
    out.push_back(&head.w);
    out.push_back(&head.b);
  }
};

}  // namespace detail

// Activation trace of one forward pass; owned by the caller so a shared
// network can be unwound for several in-flight batches.
struct NetTrace {
  bool training = false;
  detail::Encoder::Cache enc_a, enc_b;
  FeatureStack fa, fb;
  std::vector<nn::DiffCache> diffs;
  detail::Decoder::Cache change_dec, sem_dec_a, sem_dec_b;
  nn::Conv2d::Cache fuse;
  Tensor p_c, p_s_t1, p_s_t2, p_cs;  // stored sigmoid outputs
};

class Network {
 public:
  Network() = default;

  static Network build(const NetworkConfig& cfg) {
    cfg.validate();
    Network net;
    net.cfg_ = cfg;
    Rng rng(cfg.seed, /*stream=*/0x5cd);
    const int enc_in =
        cfg.variant == Variant::EarlyFusionUNet ? 2 * cfg.input_channels : cfg.input_channels;
    net.encoder_.build("encoder", cfg, enc_in, rng);
    net.change_decoder_.build("change_decoder", cfg, rng);
    if (variant_has_semantic_heads(cfg.variant)) {
      net.sem_decoder_.emplace();
      net.sem_decoder_->build("semantic_decoder", cfg, rng);
    }
    if (variant_has_fused_change(cfg.variant)) {
      net.fuse_.emplace();
      net.fuse_->build("fuse", 2, 1, 1, rng);
    }
    return net;
  }

  const NetworkConfig& config() const { return cfg_; }

  // --------------------------------------------------------------------
  // Spec-level primitives (run in inference mode)
  // --------------------------------------------------------------------

  FeatureStack encode(const Tensor& image) {
    check_spatial(image);
    return encoder_.forward(image, /*training=*/false, nullptr);
  }

  // Returns (logits, probabilities); the logits feed fuse_semantic_change.
  std::pair<Tensor, Tensor> decode_semantics(const FeatureStack& features) {
    if (!sem_decoder_) {
      throw ContractError(std::string("variant ") + variant_id(cfg_.variant) +
                          " has no semantic decoder");
    }
    check_stack(features);
    Tensor logits = sem_decoder_->forward(features.f, false, nullptr);
    return {logits, nn::sigmoid_forward(logits)};
  }

  Tensor decode_difference(const FeatureStack& features_t1, const FeatureStack& features_t2) {
    if (!variant_is_siamese(cfg_.variant)) {
      throw ContractError("EarlyFusionUNet has no difference decoder");
    }
    check_stack(features_t1);
    check_stack(features_t2);
    std::vector<Tensor> skips;
    skips.reserve(features_t1.f.size());
    for (std::size_t k = 0; k < features_t1.f.size(); ++k) {
      skips.push_back(
          nn::diff_forward(features_t1.f[k], features_t2.f[k], cfg_.absolute_diff, nullptr));
    }
    return nn::sigmoid_forward(change_decoder_.forward(skips, false, nullptr));
  }

  Tensor fuse_semantic_change(const Tensor& logit_s_t1, const Tensor& logit_s_t2) {
    if (!fuse_) {
      throw ContractError(std::string("variant ") + variant_id(cfg_.variant) +
                          " has no fused change head");
    }
    if (!logit_s_t1.same_shape(logit_s_t2) || logit_s_t1.c() != 1) {
      throw ShapeError("fuse_semantic_change expects two N x 1 x H x W logit rasters");
    }
    Tensor cat = nn::concat_channels(logit_s_t1, logit_s_t2);
    return nn::sigmoid_forward(fuse_->forward(cat, nullptr));
  }

  // --------------------------------------------------------------------
  // Full forward / backward
  // --------------------------------------------------------------------

  BatchOutputs forward(const Tensor& image_t1, const Tensor& image_t2, bool training = false) {
    NetTrace trace;
    return forward_trace(image_t1, image_t2, training, trace);
  }

  BatchOutputs forward_trace(const Tensor& image_t1, const Tensor& image_t2, bool training,
                             NetTrace& trace) {
    if (!image_t1.same_shape(image_t2)) {
      throw ShapeError("bi-temporal pair shape mismatch: " + image_t1.shape_str() + " vs " +
                       image_t2.shape_str());
    }
    check_spatial(image_t1, cfg_.input_channels);
    trace = NetTrace{};
    trace.training = training;
    BatchOutputs out;
    const bool cacheable = training;

    if (cfg_.variant == Variant::EarlyFusionUNet) {
      Tensor cat = nn::concat_channels(image_t1, image_t2);
      trace.fa = encoder_.forward(cat, training, cacheable ? &trace.enc_a : nullptr);
      Tensor logit_c =
          change_decoder_.forward(trace.fa.f, training, cacheable ? &trace.change_dec : nullptr);
      trace.p_c = nn::sigmoid_forward(logit_c);
      out.p_c = trace.p_c;
      return out;
    }

    trace.fa = encoder_.forward(image_t1, training, cacheable ? &trace.enc_a : nullptr);
    trace.fb = encoder_.forward(image_t2, training, cacheable ? &trace.enc_b : nullptr);

    trace.diffs.resize(trace.fa.f.size());
    std::vector<Tensor> skips;
    skips.reserve(trace.fa.f.size());
    for (std::size_t k = 0; k < trace.fa.f.size(); ++k) {
      skips.push_back(nn::diff_forward(trace.fa.f[k], trace.fb.f[k], cfg_.absolute_diff,
                                       cacheable ? &trace.diffs[k] : nullptr));
    }
    Tensor logit_c =
        change_decoder_.forward(skips, training, cacheable ? &trace.change_dec : nullptr);
    trace.p_c = nn::sigmoid_forward(logit_c);
    out.p_c = trace.p_c;

    if (sem_decoder_) {
      Tensor logit_sa =
          sem_decoder_->forward(trace.fa.f, training, cacheable ? &trace.sem_dec_a : nullptr);
      Tensor logit_sb =
          sem_decoder_->forward(trace.fb.f, training, cacheable ? &trace.sem_dec_b : nullptr);
      trace.p_s_t1 = nn::sigmoid_forward(logit_sa);
      trace.p_s_t2 = nn::sigmoid_forward(logit_sb);
      out.p_s_t1 = trace.p_s_t1;
      out.p_s_t2 = trace.p_s_t2;
      if (fuse_) {
        Tensor cat = nn::concat_channels(logit_sa, logit_sb);
        Tensor logit_cs = fuse_->forward(cat, cacheable ? &trace.fuse : nullptr);
        trace.p_cs = nn::sigmoid_forward(logit_cs);
        out.p_cs = trace.p_cs;
      }
    }
    return out;
  }

  // Accumulates parameter gradients for d(loss)/d(probability outputs).
  void backward(const NetTrace& trace, const HeadGrads& grads) {
    if (!trace.training) throw ContractError("backward requires a training-mode trace");
    Tensor dz_c = nn::sigmoid_backward(grads.d_p_c, trace.p_c);
    std::vector<Tensor> dskips = change_decoder_.backward(dz_c, trace.change_dec);

    if (cfg_.variant == Variant::EarlyFusionUNet) {
      encoder_.backward(dskips, trace.enc_a);
      return;
    }

    const int depth = trace.fa.depth();
    std::vector<Tensor> dfa(depth), dfb(depth);
    for (int k = 0; k < depth; ++k) {
      dfa[k] = Tensor(trace.fa.f[k].n(), trace.fa.f[k].c(), trace.fa.f[k].h(), trace.fa.f[k].w());
      dfb[k] = Tensor(dfa[k].n(), dfa[k].c(), dfa[k].h(), dfa[k].w());
      nn::diff_backward(dskips[k], cfg_.absolute_diff, trace.diffs[k], dfa[k], dfb[k]);
    }

    if (sem_decoder_) {
      Tensor dz_sa = grads.d_p_s_t1 ? nn::sigmoid_backward(*grads.d_p_s_t1, trace.p_s_t1)
                                    : Tensor(trace.p_s_t1.n(), 1, trace.p_s_t1.h(), trace.p_s_t1.w());
      Tensor dz_sb = grads.d_p_s_t2 ? nn::sigmoid_backward(*grads.d_p_s_t2, trace.p_s_t2)
                                    : Tensor(trace.p_s_t2.n(), 1, trace.p_s_t2.h(), trace.p_s_t2.w());
      if (fuse_ && grads.d_p_cs) {
        // p_cs consumes the pre-sigmoid semantic logits, so its gradient
        // joins the per-branch logit gradients before the decoder unwinds.
        Tensor dz_cs = nn::sigmoid_backward(*grads.d_p_cs, trace.p_cs);
        Tensor dcat = fuse_->backward(dz_cs, trace.fuse);
        Tensor da, db;
        nn::split_channels_grad(dcat, 1, da, db);
        for (std::size_t i = 0; i < dz_sa.size(); ++i) dz_sa[i] += da[i];
        for (std::size_t i = 0; i < dz_sb.size(); ++i) dz_sb[i] += db[i];
      }
      std::vector<Tensor> dsa = sem_decoder_->backward(dz_sa, trace.sem_dec_a);
      std::vector<Tensor> dsb = sem_decoder_->backward(dz_sb, trace.sem_dec_b);
      for (int k = 0; k < depth; ++k) {
        for (std::size_t i = 0; i < dfa[k].size(); ++i) dfa[k][i] += dsa[k][i];
        for (std::size_t i = 0; i < dfb[k].size(); ++i) dfb[k][i] += dsb[k][i];
      }
    }

    encoder_.backward(dfa, trace.enc_a);
    encoder_.backward(dfb, trace.enc_b);
  }

  // --------------------------------------------------------------------
  // Parameter access
  // --------------------------------------------------------------------

  std::vector<nn::Param*> params() {
    std::vector<nn::Param*> out;
    encoder_.collect(out);
    change_decoder_.collect(out);
    if (sem_decoder_) sem_decoder_->collect(out);
    if (fuse_) {
      out.push_back(&fuse_->w);
      out.push_back(&fuse_->b);
    }
    return out;
  }

  // Batchnorm running statistics; saved with checkpoints but never optimized.
  std::vector<std::pair<std::string, Tensor*>> buffers() {
    std::vector<std::pair<std::string, Tensor*>> out;
    auto add_block = [&out](detail::ConvBlock& b) {
      out.emplace_back(b.bn1.gamma.name.substr(0, b.bn1.gamma.name.size() - 6) + ".running_mean",
                       &b.bn1.running_mean);
      out.emplace_back(b.bn1.gamma.name.substr(0, b.bn1.gamma.name.size() - 6) + ".running_var",
                       &b.bn1.running_var);
      out.emplace_back(b.bn2.gamma.name.substr(0, b.bn2.gamma.name.size() - 6) + ".running_mean",
                       &b.bn2.running_mean);
      out.emplace_back(b.bn2.gamma.name.substr(0, b.bn2.gamma.name.size() - 6) + ".running_var",
                       &b.bn2.running_var);
    };
    for (auto& l : encoder_.levels) add_block(l);
    for (auto& bl : change_decoder_.blocks) add_block(bl);
    if (sem_decoder_)
      for (auto& bl : sem_decoder_->blocks) add_block(bl);
    return out;
  }

  void zero_grad() {
    for (auto* p : params()) p->zero_grad();
  }

  std::size_t num_params() {
    std::size_t n = 0;
    for (auto* p : params()) n += p->value.size();
    return n;
  }

 private:
  void check_spatial(const Tensor& x, int expect_channels = -1) const {
    const int div = cfg_.spatial_divisor();
    if (x.h() % div != 0 || x.w() % div != 0) {
      throw ShapeError("input spatial dims " + std::to_string(x.h()) + "x" + std::to_string(x.w()) +
                       " must be divisible by " + std::to_string(div) + " (depth " +
                       std::to_string(cfg_.depth) + ")");
    }
    if (expect_channels > 0 && x.c() != expect_channels) {
      throw ShapeError("expected " + std::to_string(expect_channels) + " input channels, got " +
                       std::to_string(x.c()));
    }
  }

  void check_stack(const FeatureStack& fs) const {
    if (fs.depth() != cfg_.depth) {
      throw ShapeError("feature stack depth " + std::to_string(fs.depth()) +
                       " does not match network depth " + std::to_string(cfg_.depth));
    }
    for (int k = 0; k < fs.depth(); ++k) {
      if (fs.f[k].c() != cfg_.width(k + 1)) {
        throw ShapeError("feature stack level " + std::to_string(k + 1) + " has " +
                         std::to_string(fs.f[k].c()) + " channels, expected " +
                         std::to_string(cfg_.width(k + 1)));
      }
    }
  }

  NetworkConfig cfg_;
  detail::Encoder encoder_;
  detail::Decoder change_decoder_;
  std::optional<detail::Decoder> sem_decoder_;
  std::optional<nn::Conv2d> fuse_;
};

}  // namespace siamcd
