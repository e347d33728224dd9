#pragma once

// Semi-supervised training loop: per epoch a fresh sample plan is drawn,
// batched sequentially (batches mix labeled and unlabeled samples), the mean
// sample loss is backpropagated and one AdamW step taken per batch. Loss
// terms are logged per step, validation F1 per epoch, and checkpoints carry
// everything needed to resume bit-exactly at epoch granularity.

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <string>
#include <vector>

#include "siamcd/checkpoint.hpp"
#include "siamcd/evaluation.hpp"
#include "siamcd/manifest.hpp"
#include "siamcd/optimizer.hpp"
#include "siamcd/sampling.hpp"

namespace siamcd {

struct TrainConfig {
  int epochs = 100;
  int batch_size = 8;
  AdamWConfig optimizer;  // learning_rate 1e-4, weight_decay 0.01
  std::uint64_t seed = 0;
  NetworkConfig network;
  LossConfig loss;  // loss.phi is the consistency weight
  SamplerConfig sampler;
  int checkpoint_every = 10;
  std::optional<int> early_stop_patience;  // epochs without val-F1 improvement
  double eval_threshold = 0.5;
  EvalPairs eval_pairs = EvalPairs::FirstLast;
  std::string device = "cpu";

  void validate() const {
    if (epochs < 1) throw ConfigError("epochs must be >= 1");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (!(optimizer.learning_rate > 0.0)) throw ConfigError("learning_rate must be > 0");
    if (checkpoint_every < 1) throw ConfigError("checkpoint_every must be >= 1");
    if (device != "cpu") {
      throw ConfigError("device '" + device + "' unavailable: this build runs on cpu only");
    }
    network.validate();
    loss.validate();
    sampler.validate();
  }
};

inline nlohmann::json train_config_to_json(const TrainConfig& c) {
  return {{"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"learning_rate", c.optimizer.learning_rate},
          {"beta1", c.optimizer.beta1},
          {"beta2", c.optimizer.beta2},
          {"adam_eps", c.optimizer.eps},
          {"weight_decay", c.optimizer.weight_decay},
          {"seed", c.seed},
          {"network", network_config_to_json(c.network)},
          {"loss",
           {{"power_q", c.loss.power_q},
            {"smoothing_eps", c.loss.smoothing_eps},
            {"phi", c.loss.phi},
            {"consistency_mode",
             c.loss.consistency_mode == ConsistencyMode::PredictionPair ? "prediction_pair"
                                                                        : "labeled_style"}}},
          {"sampler",
           {{"patch_size", c.sampler.patch_size},
            {"candidates_per_draw", c.sampler.candidates_per_draw},
            {"base_probability", c.sampler.base_probability},
            {"samples_per_site", c.sampler.samples_per_site},
            {"oversample", c.sampler.oversample},
            {"augment", c.sampler.augment},
            {"construction_only_change", c.sampler.construction_only_change}}},
          {"checkpoint_every", c.checkpoint_every},
          {"early_stop_patience", c.early_stop_patience ? nlohmann::json(*c.early_stop_patience)
                                                        : nlohmann::json(nullptr)},
          {"eval_threshold", c.eval_threshold},
          {"eval_pairs", c.eval_pairs == EvalPairs::FirstLast ? "first_last" : "all_pairs"},
          {"device", c.device}};
}

inline TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.epochs = j.at("epochs").get<int>();
  c.batch_size = j.at("batch_size").get<int>();
  c.optimizer.learning_rate = j.at("learning_rate").get<double>();
  c.optimizer.beta1 = j.value("beta1", 0.9);
  c.optimizer.beta2 = j.value("beta2", 0.999);
  c.optimizer.eps = j.value("adam_eps", 1e-8);
  c.optimizer.weight_decay = j.at("weight_decay").get<double>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.network = network_config_from_json(j.at("network"));
  const auto& l = j.at("loss");
  c.loss.power_q = l.at("power_q").get<double>();
  c.loss.smoothing_eps = l.at("smoothing_eps").get<double>();
  c.loss.phi = l.at("phi").get<double>();
  c.loss.consistency_mode = l.at("consistency_mode").get<std::string>() == "labeled_style"
                                ? ConsistencyMode::LabeledStyle
                                : ConsistencyMode::PredictionPair;
  const auto& s = j.at("sampler");
  c.sampler.patch_size = s.at("patch_size").get<int>();
  c.sampler.candidates_per_draw = s.at("candidates_per_draw").get<int>();
  c.sampler.base_probability = s.at("base_probability").get<double>();
  c.sampler.samples_per_site = s.at("samples_per_site").get<int>();
  c.sampler.oversample = s.at("oversample").get<bool>();
  c.sampler.augment = s.at("augment").get<bool>();
  c.sampler.construction_only_change = s.value("construction_only_change", false);
  c.sampler.seed = c.seed;
  c.checkpoint_every = j.at("checkpoint_every").get<int>();
  if (j.contains("early_stop_patience") && !j["early_stop_patience"].is_null()) {
    c.early_stop_patience = j["early_stop_patience"].get<int>();
  }
  c.eval_threshold = j.at("eval_threshold").get<double>();
  c.eval_pairs = j.value("eval_pairs", std::string("first_last")) == "all_pairs"
                     ? EvalPairs::AllPairs
                     : EvalPairs::FirstLast;
  c.device = j.value("device", std::string("cpu"));
  return c;
}

struct LossHistoryRow {
  int epoch = 0;
  std::int64_t step = 0;
  double l_s = 0.0, l_c = 0.0, l_cons = 0.0, total = 0.0;
};

struct ValHistoryRow {
  int epoch = 0;
  double precision = 0.0, recall = 0.0, f1 = 0.0;
};

struct TrainState {
  int epochs_done = 0;
  std::int64_t global_step = 0;
  double best_val_f1 = -1.0;
  int best_epoch = -1;
  std::vector<LossHistoryRow> history;
  std::vector<ValHistoryRow> val_history;
};

inline std::string losses_csv_header() { return "epoch,step,L_s,L_c,L_cons,total"; }

inline std::string loss_row_csv(const LossHistoryRow& r) {
  std::ostringstream os;
  os << r.epoch << "," << r.step << "," << std::setprecision(17) << r.l_s << "," << r.l_c << ","
     << r.l_cons << "," << r.total;
  return os.str();
}

class Trainer {
 public:
  explicit Trainer(const TrainConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
    net_ = Network::build(cfg_.network);
    opt_ = AdamW(net_.params(), cfg_.optimizer);
  }

  // Resumes from a train-state checkpoint: parameters, optimizer moments and
  // counters are restored bit-exactly; the next epoch continues the seed
  // hierarchy of the original run.
  static Trainer restore(const std::filesystem::path& path) {
    ckpt::Container c = ckpt::read_container(path);
    if (c.kind != "train_state") {
      throw IoError("checkpoint '" + path.string() + "' is a " + c.kind +
                    " checkpoint, not a train state");
    }
    Trainer t(train_config_from_json(c.meta.at("train_config")));
    ckpt::restore_network_blobs(t.net_, c);
    auto params = t.opt_.params();
    for (std::size_t i = 0; i < params.size(); ++i) {
      const auto& bm = c.require("adam.m." + params[i]->name);
      const auto& bv = c.require("adam.v." + params[i]->name);
      if (bm.bytes.size() != params[i]->value.size() * sizeof(float) ||
          bv.bytes.size() != bm.bytes.size()) {
        throw IoError("optimizer moment size mismatch for " + params[i]->name);
      }
      std::memcpy(t.opt_.moments_m()[i].data(), bm.bytes.data(), bm.bytes.size());
      std::memcpy(t.opt_.moments_v()[i].data(), bv.bytes.data(), bv.bytes.size());
    }
    const auto& tr = c.meta.at("train");
    t.st_.epochs_done = tr.at("epochs_done").get<int>();
    t.st_.global_step = tr.at("global_step").get<std::int64_t>();
    t.st_.best_val_f1 = tr.at("best_val_f1").get<double>();
    t.st_.best_epoch = tr.at("best_epoch").get<int>();
    t.opt_.set_step_count(tr.at("adam_steps").get<std::int64_t>());
    if (c.blobs.count("history")) {
      const auto& hb = c.require("history");
      const std::size_t rows = hb.bytes.size() / (6 * sizeof(double));
      const double* d = reinterpret_cast<const double*>(hb.bytes.data());
      for (std::size_t r = 0; r < rows; ++r) {
        t.st_.history.push_back({static_cast<int>(d[r * 6]), static_cast<std::int64_t>(d[r * 6 + 1]),
                                 d[r * 6 + 2], d[r * 6 + 3], d[r * 6 + 4], d[r * 6 + 5]});
      }
    }
    if (c.blobs.count("val_history")) {
      const auto& vb = c.require("val_history");
      const std::size_t rows = vb.bytes.size() / (4 * sizeof(double));
      const double* d = reinterpret_cast<const double*>(vb.bytes.data());
      for (std::size_t r = 0; r < rows; ++r) {
        t.st_.val_history.push_back(
            {static_cast<int>(d[r * 4]), d[r * 4 + 1], d[r * 4 + 2], d[r * 4 + 3]});
      }
    }
    return t;
  }

  void save_state(const std::filesystem::path& path) {
    std::vector<ckpt::BlobSpec> blobs;
    ckpt::append_network_blobs(net_, blobs);
    auto params = opt_.params();
    for (std::size_t i = 0; i < params.size(); ++i) {
      blobs.push_back({"adam.m." + params[i]->name, "f32",
                       {static_cast<std::int64_t>(opt_.moments_m()[i].size())},
                       opt_.moments_m()[i].data(), opt_.moments_m()[i].size() * sizeof(float)});
      blobs.push_back({"adam.v." + params[i]->name, "f32",
                       {static_cast<std::int64_t>(opt_.moments_v()[i].size())},
                       opt_.moments_v()[i].data(), opt_.moments_v()[i].size() * sizeof(float)});
    }
    std::vector<double> hflat;
    hflat.reserve(st_.history.size() * 6);
    for (const auto& r : st_.history) {
      hflat.insert(hflat.end(), {static_cast<double>(r.epoch), static_cast<double>(r.step), r.l_s,
                                 r.l_c, r.l_cons, r.total});
    }
    blobs.push_back({"history", "f64", {static_cast<std::int64_t>(st_.history.size()), 6},
                     hflat.data(), hflat.size() * sizeof(double)});
    std::vector<double> vflat;
    for (const auto& r : st_.val_history) {
      vflat.insert(vflat.end(), {static_cast<double>(r.epoch), r.precision, r.recall, r.f1});
    }
    blobs.push_back({"val_history", "f64", {static_cast<std::int64_t>(st_.val_history.size()), 4},
                     vflat.data(), vflat.size() * sizeof(double)});
    nlohmann::json meta = {{"network", network_config_to_json(cfg_.network)},
                           {"train_config", train_config_to_json(cfg_)},
                           {"train",
                            {{"epochs_done", st_.epochs_done},
                             {"global_step", st_.global_step},
                             {"best_val_f1", st_.best_val_f1},
                             {"best_epoch", st_.best_epoch},
                             {"adam_steps", opt_.step_count()}}}};
    ckpt::write_container(path, "train_state", meta, blobs);
  }

  // Trains the remaining epochs. Labeled/unlabeled/val sites must already be
  // loaded; unlabeled data requires the SSL variant.
  TrainState train(const std::vector<SiteTimeSeries>& labeled,
                   const std::vector<SiteTimeSeries>& unlabeled,
                   const std::vector<SiteTimeSeries>& val,
                   const std::filesystem::path* run_dir = nullptr) {
    if (!unlabeled.empty() && cfg_.network.variant != Variant::SiamDiffDualTaskSSL) {
      throw ConfigError("unlabeled sites require the siam_diff_dual_task_ssl variant, got " +
                        std::string(variant_id(cfg_.network.variant)));
    }
    if (!unlabeled.empty() && cfg_.loss.consistency_mode == ConsistencyMode::LabeledStyle) {
      throw ConfigError("labeled_style consistency cannot train on unlabeled data");
    }
    if (labeled.empty() && unlabeled.empty()) throw ConfigError("no training sites");

    std::vector<SiteTimeSeries> sites = labeled;
    sites.insert(sites.end(), unlabeled.begin(), unlabeled.end());

    std::ofstream losses_csv, metrics_csv;
    if (run_dir) {
      std::filesystem::create_directories(*run_dir / "checkpoints");
      // Fresh runs truncate; resumed runs append, but still get a header
      // when the target file does not exist yet (resume into a new dir).
      const bool fresh = st_.epochs_done == 0;
      auto open_csv = [&](std::ofstream& out, const std::filesystem::path& p,
                          const std::string& header) {
        const bool add_header =
            fresh || !std::filesystem::exists(p) || std::filesystem::file_size(p) == 0;
        out.open(p, fresh ? std::ios::trunc : std::ios::app);
        if (add_header) out << header << "\n";
      };
      open_csv(losses_csv, *run_dir / "losses.csv", losses_csv_header());
      open_csv(metrics_csv, *run_dir / "metrics.csv", "epoch,precision,recall,f1");
    }

    int since_best = 0;
    for (int epoch = st_.epochs_done; epoch < cfg_.epochs; ++epoch) {
      run_epoch(epoch, sites, run_dir, run_dir ? &losses_csv : nullptr);
      st_.epochs_done = epoch + 1;

      if (!val.empty()) {
        EvalOptions eopt;
        eopt.threshold = cfg_.eval_threshold;
        eopt.pairs = cfg_.eval_pairs;
        eopt.construction_only_change = cfg_.sampler.construction_only_change;
        auto [counts, row] =
            evaluate_model(net_, val, variant_id(cfg_.network.variant), "val", eopt);
        st_.val_history.push_back(
            {epoch, row.metrics.precision, row.metrics.recall, row.metrics.f1});
        if (metrics_csv.is_open()) {
          metrics_csv << epoch << "," << std::setprecision(17) << row.metrics.precision << ","
                      << row.metrics.recall << "," << row.metrics.f1 << "\n";
          metrics_csv.flush();
        }
        if (row.metrics.f1 > st_.best_val_f1) {
          st_.best_val_f1 = row.metrics.f1;
          st_.best_epoch = epoch;
          since_best = 0;
          if (run_dir) save_state(*run_dir / "best.ckpt");
        } else {
          ++since_best;
        }
      }

      const bool last = epoch + 1 == cfg_.epochs;
      if (run_dir && ((epoch + 1) % cfg_.checkpoint_every == 0 || last)) {
        char name[32];
        std::snprintf(name, sizeof(name), "epoch_%03d.ckpt", epoch + 1);
        save_state(*run_dir / "checkpoints" / name);
      }
      if (cfg_.early_stop_patience && since_best >= *cfg_.early_stop_patience) break;
    }
    if (run_dir) {
      save_state(*run_dir / "final.ckpt");
      if (st_.best_epoch < 0) {
        // No validation ran; the final weights double as the best weights.
        save_state(*run_dir / "best.ckpt");
      }
    }
    return st_;
  }

  Network& network() { return net_; }
  const TrainConfig& config() const { return cfg_; }
  const TrainState& state() const { return st_; }

 private:
  void run_epoch(int epoch, const std::vector<SiteTimeSeries>& sites,
                 const std::filesystem::path* run_dir, std::ofstream* losses_csv) {
    SamplerConfig scfg = cfg_.sampler;
    scfg.patch_size = cfg_.sampler.patch_size;
    const std::uint64_t epoch_seed = mix_seed(mix_seed(cfg_.seed, 0xE90C), epoch);
    std::vector<PlanEntry> plan = epoch_plan(sites, scfg, epoch_seed);

    for (std::size_t start = 0; start < plan.size();
         start += static_cast<std::size_t>(cfg_.batch_size)) {
      const int nb =
          static_cast<int>(std::min<std::size_t>(cfg_.batch_size, plan.size() - start));
      std::vector<MaterializedSample> samples(nb);
      for (int i = 0; i < nb; ++i) {
        samples[i] = materialize(sites, plan[start + i], scfg.construction_only_change);
      }
      const int s = scfg.patch_size;
      Tensor x1(nb, net_.config().input_channels, s, s), x2(nb, net_.config().input_channels, s, s);
      for (int i = 0; i < nb; ++i) {
        std::copy(samples[i].image_t1.data(), samples[i].image_t1.data() + x1.sample_size(),
                  x1.sample_ptr(i));
        std::copy(samples[i].image_t2.data(), samples[i].image_t2.data() + x2.sample_size(),
                  x2.sample_ptr(i));
      }

      NetTrace trace;
      BatchOutputs out = net_.forward_trace(x1, x2, /*training=*/true, trace);

      HeadGrads hg;
      hg.d_p_c = Tensor(nb, 1, s, s);
      if (out.p_s_t1) hg.d_p_s_t1 = Tensor(nb, 1, s, s);
      if (out.p_s_t2) hg.d_p_s_t2 = Tensor(nb, 1, s, s);
      if (out.p_cs) hg.d_p_cs = Tensor(nb, 1, s, s);
      LossBreakdown acc;
      const double inv = 1.0 / nb;
      for (int i = 0; i < nb; ++i) {
        DualTaskOutputs so = out.sample(i);
        OutputGradRasters g;
        SampleLoss sl = sample_loss_with_grad(
            so, samples[i].labels ? &*samples[i].labels : nullptr, cfg_.loss, g, inv);
        acc.semantics += inv * sl.breakdown.semantics;
        acc.change += inv * sl.breakdown.change;
        acc.consistency += inv * sl.breakdown.consistency;
        acc.total += inv * sl.value;
        std::copy(g.d_p_c.v.begin(), g.d_p_c.v.end(), hg.d_p_c.plane_ptr(i, 0));
        if (g.d_p_s_t1 && hg.d_p_s_t1) {
          std::copy(g.d_p_s_t1->v.begin(), g.d_p_s_t1->v.end(), hg.d_p_s_t1->plane_ptr(i, 0));
        }
        if (g.d_p_s_t2 && hg.d_p_s_t2) {
          std::copy(g.d_p_s_t2->v.begin(), g.d_p_s_t2->v.end(), hg.d_p_s_t2->plane_ptr(i, 0));
        }
        if (g.d_p_cs && hg.d_p_cs) {
          std::copy(g.d_p_cs->v.begin(), g.d_p_cs->v.end(), hg.d_p_cs->plane_ptr(i, 0));
        }
      }

      if (!std::isfinite(acc.total)) {
        if (run_dir) {
          nlohmann::json desc = nlohmann::json::array();
          for (int i = 0; i < nb; ++i) {
            const auto& e = plan[start + i];
            desc.push_back({{"site", e.patch.site_id},
                            {"t1", e.patch.t1.str()},
                            {"t2", e.patch.t2.str()},
                            {"row", e.patch.row},
                            {"col", e.patch.col},
                            {"labeled", e.labeled},
                            {"transform", e.transform.code()}});
          }
          write_json_file(*run_dir / "diagnostic.json",
                          {{"epoch", epoch}, {"step", st_.global_step}, {"batch", desc}});
        }
        throw NumericError("non-finite loss at epoch " + std::to_string(epoch) + " step " +
                           std::to_string(st_.global_step) +
                           (run_dir ? " (batch descriptor in diagnostic.json)" : ""));
      }

      net_.zero_grad();
      net_.backward(trace, hg);
      opt_.step();

      LossHistoryRow row{epoch, st_.global_step, acc.semantics, acc.change, acc.consistency,
                         acc.total};
      st_.history.push_back(row);
      if (losses_csv) {
        *losses_csv << loss_row_csv(row) << "\n";
        losses_csv->flush();
      }
      ++st_.global_step;
    }
  }

  TrainConfig cfg_;
  Network net_;
  AdamW opt_;
  TrainState st_;
};

// ----------------------------------------------------------------------------
// Benchmark protocol: all four variants, identical data, splits and seeds
// ----------------------------------------------------------------------------

struct BenchmarkRun {
  Variant variant;
  std::filesystem::path run_dir;
  TrainState state;
};

// EF U-Net and Siam-Diff train supervised on the change loss alone,
// Dual-Task adds the semantics loss, and only the SSL variant sees unlabeled
// sites. Everything else (architecture blocks, optimizer, sampler, seeds) is
// shared.
inline std::vector<BenchmarkRun> train_benchmarks(const TrainConfig& base,
                                                  const std::vector<SiteTimeSeries>& labeled,
                                                  const std::vector<SiteTimeSeries>& unlabeled,
                                                  const std::vector<SiteTimeSeries>& val,
                                                  const std::filesystem::path& run_root) {
  std::vector<BenchmarkRun> runs;
  for (Variant v : {Variant::EarlyFusionUNet, Variant::SiamDiff, Variant::SiamDiffDualTask,
                    Variant::SiamDiffDualTaskSSL}) {
    TrainConfig cfg = base;
    cfg.network.variant = v;
    const std::filesystem::path dir = run_root / variant_id(v);
    Trainer trainer(cfg);
    const bool ssl = v == Variant::SiamDiffDualTaskSSL;
    TrainState st = trainer.train(labeled, ssl ? unlabeled : std::vector<SiteTimeSeries>{}, val,
                                  &dir);
    runs.push_back({v, dir, std::move(st)});
  }
  return runs;
}

}  // namespace siamcd
