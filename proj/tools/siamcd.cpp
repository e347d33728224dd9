// siamcd: synthesize datasets, ingest SpaceNet7-style layouts, train the
// four network variants, evaluate, predict and emit comparison reports.
//
// Exit codes: 0 success, 2 configuration error, 3 data validation error,
// 4 runtime/numerical failure.

#include <cstdlib>
#include <iostream>

#include <CLI11.hpp>

#include "siamcd/ingest.hpp"
#include "siamcd/plot.hpp"
#include "siamcd/trainer.hpp"
#include "siamcd/version.hpp"

namespace fs = std::filesystem;
using namespace siamcd;

namespace {

// ----------------------------------------------------------------------------
// Shared helpers
// ----------------------------------------------------------------------------

void require_empty_or_force(const fs::path& out, bool force) {
  if (force || !fs::exists(out)) return;
  if (fs::is_directory(out) && fs::directory_iterator(out) == fs::directory_iterator()) return;
  throw ConfigError("output '" + out.string() + "' exists and is not empty (use --force)");
}

std::vector<int> parse_counts(const std::string& spec) {
  std::vector<int> out;
  std::stringstream ss(spec);
  std::string tok;
  while (std::getline(ss, tok, ',')) out.push_back(std::stoi(tok));
  if (out.size() != 3) throw ConfigError("--split expects three comma-separated counts");
  return out;
}

struct LoadedData {
  std::vector<SiteTimeSeries> train, val, test, unlabeled;
};

LoadedData load_split_data(const fs::path& data_root, bool with_unlabeled, bool with_train = true) {
  LoadedData d;
  for (auto& site : load_dataset(data_root)) {
    switch (site.split) {
      case Split::Train:
        if (with_train) d.train.push_back(std::move(site));
        break;
      case Split::Val: d.val.push_back(std::move(site)); break;
      case Split::Test: d.test.push_back(std::move(site)); break;
      case Split::Unlabeled:
        if (with_unlabeled) d.unlabeled.push_back(std::move(site));
        break;
    }
  }
  return d;
}

std::string display_name_for(const std::string& model_id) {
  try {
    return variant_display_name(parse_variant(model_id));
  } catch (const ConfigError&) {
    return model_id;
  }
}

void write_text_file(const fs::path& path, const std::string& text) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
}

// ----------------------------------------------------------------------------
// synth
// ----------------------------------------------------------------------------

struct SynthOptions {
  fs::path out;
  std::uint64_t seed = 0;
  int n_labeled = 8;
  int n_unlabeled = 8;
  int dims = 128;
  int channels = 3;
  int timestamps = 5;
  int initial_buildings = 6;
  double growth_rate = 3.0;
  int building_min = 5;
  int building_max = 12;
  double noise = 0.02;
  std::string split_spec;
  bool force = false;
};

int cmd_synth(const SynthOptions& o) {
  require_empty_or_force(o.out, o.force);
  if (o.n_labeled < 0 || o.n_unlabeled < 0) throw ConfigError("site counts must be >= 0");
  if (o.n_labeled + o.n_unlabeled == 0) throw ConfigError("nothing to generate");

  std::vector<std::string> labeled_ids, unlabeled_ids;
  char buf[32];
  for (int i = 0; i < o.n_labeled; ++i) {
    std::snprintf(buf, sizeof(buf), "site_l%03d", i);
    labeled_ids.push_back(buf);
  }
  for (int i = 0; i < o.n_unlabeled; ++i) {
    std::snprintf(buf, sizeof(buf), "site_u%03d", i);
    unlabeled_ids.push_back(buf);
  }
  SplitCounts counts = default_split_counts(o.n_labeled);
  if (!o.split_spec.empty()) {
    auto c = parse_counts(o.split_spec);
    counts = {c[0], c[1], c[2]};
  }
  const auto split_map = assign_splits(labeled_ids, unlabeled_ids, counts, o.seed);

  std::vector<DatasetIndexEntry> index;
  auto emit = [&](const std::string& id, bool labeled, int ordinal) {
    SyntheticConfig scfg;
    scfg.height = scfg.width = o.dims;
    scfg.channels = o.channels;
    scfg.n_timestamps = o.timestamps;
    scfg.initial_buildings = o.initial_buildings;
    scfg.growth_rate = o.growth_rate;
    scfg.building_min = o.building_min;
    scfg.building_max = o.building_max;
    scfg.noise_level = o.noise;
    scfg.labeled = labeled;
    scfg.site_id = id;
    SiteTimeSeries site =
        generate_synthetic_site(mix_seed(o.seed, (labeled ? 0x1000 : 0x2000) + ordinal), scfg);
    site.split = split_map.at(id);
    write_site(o.out, site);
    index.push_back({id, id + "/manifest.json", site.split});
  };
  for (int i = 0; i < o.n_labeled; ++i) emit(labeled_ids[i], true, i);
  for (int i = 0; i < o.n_unlabeled; ++i) emit(unlabeled_ids[i], false, i);

  write_dataset_index(o.out, index,
                      {{"tool", kToolName},
                       {"version", kToolVersion},
                       {"generator", "synthetic_growth"},
                       {"seed", o.seed},
                       {"dims", o.dims},
                       {"channels", o.channels},
                       {"timestamps", o.timestamps},
                       {"initial_buildings", o.initial_buildings},
                       {"growth_rate", o.growth_rate},
                       {"building_min", o.building_min},
                       {"building_max", o.building_max},
                       {"noise", o.noise},
                       {"labeled", o.n_labeled},
                       {"unlabeled", o.n_unlabeled},
                       {"split_counts", {counts.n_train, counts.n_val, counts.n_test}}});
  std::cout << "synth: wrote " << (o.n_labeled + o.n_unlabeled) << " sites to " << o.out.string()
            << "\n";
  return 0;
}

// ----------------------------------------------------------------------------
// prepare
// ----------------------------------------------------------------------------

struct PrepareOptions {
  fs::path root, out;
  std::uint64_t seed = 0;
  std::string split_spec;
  int channels = 3;
  fs::path exclusions_file;
  fs::path transforms_file;
  bool force = false;
};

int cmd_prepare(const PrepareOptions& o) {
  require_empty_or_force(o.out, o.force);
  PrepareConfig cfg;
  cfg.root = o.root;
  cfg.out = o.out;
  cfg.seed = o.seed;
  cfg.channels = o.channels;
  if (!o.split_spec.empty()) {
    auto c = parse_counts(o.split_spec);
    cfg.split_counts = {c[0], c[1], c[2]};
  }
  if (!o.exclusions_file.empty()) {
    for (const auto& e : read_json_file(o.exclusions_file)) {
      cfg.exclusions.push_back({e.at("site").get<std::string>(), e.at("year").get<int>(),
                                e.at("month").get<int>()});
    }
  }
  if (!o.transforms_file.empty()) {
    const json j = read_json_file(o.transforms_file);
    for (auto it = j.begin(); it != j.end(); ++it) {
      const auto& t = it.value();
      cfg.transforms[it.key()] =
          GeoTransform{t.at(0).get<double>(), t.at(1).get<double>(), t.at(2).get<double>(),
                       t.at(3).get<double>(), t.at(4).get<double>(), t.at(5).get<double>()};
    }
  }
  auto index = prepare_dataset(cfg);
  std::cout << "prepare: wrote " << index.size() << " manifests to " << o.out.string() << "\n";
  return 0;
}

// ----------------------------------------------------------------------------
// train
// ----------------------------------------------------------------------------

void write_run_manifest(const fs::path& run_dir, const TrainConfig& cfg, const fs::path& data,
                        const std::string& command) {
  write_json_file(run_dir / "config.json", {{"tool", kToolName},
                                            {"version", kToolVersion},
                                            {"command", command},
                                            {"data_root", fs::absolute(data).string()},
                                            {"out", fs::absolute(run_dir).string()},
                                            {"train_config", train_config_to_json(cfg)}});
}

void eval_run(const fs::path& run_dir, const LoadedData& data, const std::string& split,
              const std::string& weights, double threshold, EvalPairs pairs, bool maps,
              const fs::path& out_dir);

int cmd_train(TrainConfig cfg, const fs::path& data_root, const fs::path& out, bool all_variants,
              const fs::path& resume, bool dump_plan, bool with_eval) {
  LoadedData data = load_split_data(data_root, /*with_unlabeled=*/true);
  if (data.train.empty() && data.unlabeled.empty()) {
    throw DataError("dataset at " + data_root.string() + " has no train or unlabeled sites");
  }
  if (!data.train.empty()) {
    cfg.network.input_channels = data.train.front().channels;
  } else if (!data.unlabeled.empty()) {
    cfg.network.input_channels = data.unlabeled.front().channels;
  }
  if (cfg.network.variant != Variant::SiamDiffDualTaskSSL && !all_variants) {
    // Supervised benchmarks never see unlabeled sites.
    data.unlabeled.clear();
  } else if (data.unlabeled.empty() && resume.empty()) {
    throw ConfigError("the siam_diff_dual_task_ssl variant needs unlabeled sites, but dataset " +
                      data_root.string() + " has none (train a supervised variant instead)");
  }

  if (all_variants) {
    fs::create_directories(out);
    write_run_manifest(out, cfg, data_root, "train --variant all");
    auto runs = train_benchmarks(cfg, data.train, data.unlabeled, data.val, out);
    std::vector<std::pair<std::string, Metrics>> rows;
    for (const auto& run : runs) {
      write_run_manifest(run.run_dir, [&] {
        TrainConfig c = cfg;
        c.network.variant = run.variant;
        return c;
      }(), data_root, "train");
      plot_loss_curves(run.run_dir / "losses.csv", run.run_dir / "loss_curves.png");
      eval_run(run.run_dir, data, "test", "best", cfg.eval_threshold, cfg.eval_pairs,
               /*maps=*/true, run.run_dir / "eval_test");
      // Pull the row back for the comparison table.
      const json m = read_json_file(run.run_dir / "eval_test" / "metrics.json");
      Metrics mm;
      mm.precision = m.at("precision").get<double>();
      mm.recall = m.at("recall").get<double>();
      mm.f1 = m.at("f1").get<double>();
      rows.push_back({variant_display_name(run.variant), mm});
    }
    auto entries = mark_best_per_column(rows);
    write_text_file(out / "comparison.txt", comparison_table_text(entries));
    write_text_file(out / "comparison.csv", comparison_table_csv(entries));
    std::cout << comparison_table_text(entries);
    return 0;
  }

  fs::create_directories(out);
  if (dump_plan) {
    std::vector<SiteTimeSeries> sites = data.train;
    sites.insert(sites.end(), data.unlabeled.begin(), data.unlabeled.end());
    const std::uint64_t epoch_seed = mix_seed(mix_seed(cfg.seed, 0xE90C), 0);
    write_text_file(out / "epoch_000_plan.csv", plan_to_csv(epoch_plan(sites, cfg.sampler,
                                                                       epoch_seed)));
  }

  if (!resume.empty()) {
    Trainer trainer = Trainer::restore(resume);
    write_run_manifest(out, trainer.config(), data_root, "train --resume");
    TrainState st = trainer.train(data.train, data.unlabeled, data.val, &out);
    std::cout << "train: resumed to epoch " << st.epochs_done << ", " << st.global_step
              << " steps, best val F1 " << st.best_val_f1 << "\n";
  } else {
    write_run_manifest(out, cfg, data_root, "train");
    Trainer trainer(cfg);
    TrainState st = trainer.train(data.train, data.unlabeled, data.val, &out);
    std::cout << "train: " << st.epochs_done << " epochs, " << st.global_step
              << " steps, best val F1 " << st.best_val_f1 << "\n";
  }
  if (with_eval) {
    eval_run(out, data, "test", "best", cfg.eval_threshold, cfg.eval_pairs, true,
             out / "eval_test");
  }
  return 0;
}

// ----------------------------------------------------------------------------
// eval / predict
// ----------------------------------------------------------------------------

Network load_run_network(const fs::path& run_dir, const std::string& weights) {
  const fs::path path = run_dir / (weights + ".ckpt");
  if (!fs::exists(path)) {
    throw DataError("missing checkpoint: " + path.string() +
                    (weights == "best" ? " (run had no validation split? try --weights final)"
                                       : ""));
  }
  return load_model_checkpoint(path);
}

void eval_run(const fs::path& run_dir, const LoadedData& data, const std::string& split,
              const std::string& weights, double threshold, EvalPairs pairs, bool maps,
              const fs::path& out_dir) {
  const std::vector<SiteTimeSeries>& sites = split == "val"    ? data.val
                                             : split == "test" ? data.test
                                                               : data.train;
  if (split != "val" && split != "test" && split != "train") {
    throw ConfigError("--split must be train, val or test");
  }
  if (sites.empty()) throw DataError("no sites in split '" + split + "'");

  Network net = load_run_network(run_dir, weights);
  EvalOptions opt;
  opt.threshold = threshold;
  opt.pairs = pairs;
  std::vector<SitePairResult> per_pair;
  auto [counts, row] =
      evaluate_model(net, sites, variant_id(net.config().variant), split, opt, &per_pair);

  fs::create_directories(out_dir);
  write_text_file(out_dir / "metrics.csv",
                  metrics_csv_header() + "\n" + metrics_csv_row(row) + "\n");
  write_json_file(out_dir / "metrics.json", {{"model", row.model},
                                             {"split", row.split},
                                             {"tp", row.counts.tp},
                                             {"fp", row.counts.fp},
                                             {"fn", row.counts.fn},
                                             {"tn", row.counts.tn},
                                             {"precision", row.metrics.precision},
                                             {"recall", row.metrics.recall},
                                             {"f1", row.metrics.f1},
                                             {"threshold", row.threshold}});
  if (maps) {
    for (const auto& p : per_pair) {
      RgbImage img = render_qualitative_map(p.prediction, p.change_label, threshold);
      write_rgb_png(out_dir / (p.site_id + "_" + p.t1.str() + "_" + p.t2.str() + ".png"), img.rgb,
                    img.h, img.w);
    }
  }
  std::cout << "eval[" << split << "] " << display_name_for(row.model) << ": F1 "
            << std::fixed << std::setprecision(3) << row.metrics.f1 << " P "
            << row.metrics.precision << " R " << row.metrics.recall << "\n";
}

int cmd_predict(const fs::path& run_dir, const fs::path& data_root, const std::string& split,
                const std::string& site_filter, const std::string& weights, double threshold,
                EvalPairs pairs, const fs::path& out_dir) {
  Network net = load_run_network(run_dir, weights);
  EvalOptions opt;
  opt.threshold = threshold;
  opt.pairs = pairs;
  int written = 0;
  for (const auto& site : load_dataset(data_root)) {
    if (!site_filter.empty() && site.site_id != site_filter) continue;
    if (site_filter.empty() && split != "all" && site.split != parse_split(split)) continue;
    for (const auto& [t1, t2] : evaluation_pairs(site, pairs)) {
      Raster prob = predict_change_map(net, site, t1, t2, opt);
      const std::string stem =
          site.site_id + "_" + site.timestamps[t1].key.str() + "_" + site.timestamps[t2].key.str();
      write_probability_png(out_dir / (stem + "_prob.png"), prob);
      Raster mask(prob.h, prob.w);
      for (std::size_t i = 0; i < prob.size(); ++i) {
        mask.v[i] = prob.v[i] >= threshold ? 1.0f : 0.0f;
      }
      write_mask_png(out_dir / (stem + "_mask.png"), mask);
      ++written;
    }
  }
  if (written == 0) throw DataError("predict: no matching sites/pairs");
  std::cout << "predict: wrote " << written << " pair predictions to " << out_dir.string() << "\n";
  return 0;
}

// ----------------------------------------------------------------------------
// compare / plot-losses
// ----------------------------------------------------------------------------

int cmd_compare(const std::vector<fs::path>& runs, const fs::path& csv_in, const fs::path& out) {
  std::vector<std::pair<std::string, Metrics>> rows;
  if (!csv_in.empty()) {
    std::ifstream in(csv_in);
    if (!in) throw IoError("cannot open " + csv_in.string());
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (line.empty() || lineno == 1) continue;  // header
      std::stringstream ss(line);
      std::string name, f1, p, r;
      if (!std::getline(ss, name, ',') || !std::getline(ss, f1, ',') ||
          !std::getline(ss, p, ',') || !std::getline(ss, r, ',')) {
        throw ParseError(csv_in.string() + " line " + std::to_string(lineno) +
                         ": expected model,f1,precision,recall");
      }
      Metrics m;
      m.f1 = std::stod(f1);
      m.precision = std::stod(p);
      m.recall = std::stod(r);
      rows.push_back({name, m});
    }
  }
  for (const auto& run : runs) {
    fs::path mpath = run / "eval_test" / "metrics.json";
    if (!fs::exists(mpath)) {
      throw DataError("run " + run.string() + " has no eval_test/metrics.json (run eval first)");
    }
    const json m = read_json_file(mpath);
    Metrics mm;
    mm.precision = m.at("precision").get<double>();
    mm.recall = m.at("recall").get<double>();
    mm.f1 = m.at("f1").get<double>();
    rows.push_back({display_name_for(m.at("model").get<std::string>()), mm});
  }
  if (rows.empty()) throw ConfigError("compare: provide --csv and/or --run inputs");
  auto entries = mark_best_per_column(rows);
  fs::create_directories(out);
  write_text_file(out / "comparison.txt", comparison_table_text(entries));
  write_text_file(out / "comparison.csv", comparison_table_csv(entries));
  std::cout << comparison_table_text(entries);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"siamcd: dual-task Siamese change detection toolkit"};
  app.set_version_flag("--version", std::string(kToolVersion));
  app.require_subcommand(1);

  int workers = 0;
  std::string device = "cpu";
  app.add_option("--workers", workers, "cap on worker threads (0 = hardware default)");
  app.add_option("--device", device, "compute device (cpu)");

  // synth
  SynthOptions so;
  auto* synth = app.add_subcommand("synth", "generate a synthetic growth dataset");
  synth->add_option("--out", so.out, "output dataset directory")->required();
  synth->add_option("--seed", so.seed, "dataset seed");
  synth->add_option("--labeled", so.n_labeled, "number of labeled sites");
  synth->add_option("--unlabeled", so.n_unlabeled, "number of unlabeled sites");
  synth->add_option("--dims", so.dims, "site height/width in pixels");
  synth->add_option("--channels", so.channels, "image channels");
  synth->add_option("--timestamps", so.timestamps, "timestamps per site");
  synth->add_option("--initial-buildings", so.initial_buildings, "buildings at t0");
  synth->add_option("--growth", so.growth_rate, "expected new buildings per timestamp");
  synth->add_option("--building-min", so.building_min, "min building side");
  synth->add_option("--building-max", so.building_max, "max building side");
  synth->add_option("--noise", so.noise, "per-pixel intensity noise stddev");
  synth->add_option("--split", so.split_spec, "labeled split counts train,val,test");
  synth->add_flag("--force", so.force, "overwrite a non-empty output directory");

  // prepare
  PrepareOptions po;
  auto* prepare = app.add_subcommand("prepare", "ingest a SpaceNet7-style directory");
  prepare->add_option("--root", po.root, "dataset root with train/ and test/")->required();
  prepare->add_option("--out", po.out, "output manifest directory")->required();
  prepare->add_option("--seed", po.seed, "split assignment seed");
  prepare->add_option("--split", po.split_spec, "labeled split counts train,val,test");
  prepare->add_option("--channels", po.channels, "channels to keep per image");
  prepare->add_option("--exclusions", po.exclusions_file, "cloud exclusion list (JSON)");
  prepare->add_option("--transforms", po.transforms_file, "per-site geo->pixel affine (JSON)");
  prepare->add_flag("--force", po.force, "overwrite a non-empty output directory");

  // train
  auto* train = app.add_subcommand("train", "train one variant (or all four benchmarks)");
  fs::path train_data, train_out, train_config_file, resume_ckpt;
  std::string variant_str = "ssl";
  bool dump_plan = false, with_eval = false;
  int epochs = -1, batch = -1, depth = -1, base = -1, patch = -1, samples = -1, candidates = -1,
      ckpt_every = -1;
  double lr = -1, wd = -1, phi = -1, q = -1, base_prob = -1, threshold = -1, noise_eps = -1;
  std::uint64_t train_seed = 0;
  bool no_augment = false, no_oversample = false, signed_diff = false;
  std::string pairs_str, consistency_mode;
  int early_stop = -1;
  train->add_option("--data", train_data, "dataset directory (from synth/prepare)")->required();
  train->add_option("--out", train_out, "run directory")->required();
  train->add_option("--config", train_config_file, "JSON config (layered under CLI flags)");
  train->add_option("--variant", variant_str,
                    "ef_unet|siam_diff|siam_diff_dual_task|siam_diff_dual_task_ssl|all");
  train->add_option("--epochs", epochs, "training epochs");
  train->add_option("--batch", batch, "batch size");
  train->add_option("--lr", lr, "AdamW learning rate");
  train->add_option("--weight-decay", wd, "AdamW weight decay");
  train->add_option("--phi", phi, "consistency weight");
  train->add_option("--power-q", q, "Power Jaccard exponent");
  train->add_option("--smoothing-eps", noise_eps, "Power Jaccard smoothing epsilon");
  train->add_option("--consistency-mode", consistency_mode, "prediction_pair|labeled_style");
  train->add_option("--seed", train_seed, "run seed");
  train->add_option("--depth", depth, "encoder depth");
  train->add_option("--base", base, "base channel width");
  train->add_option("--patch", patch, "training patch size");
  train->add_option("--candidates", candidates, "candidate crops per draw");
  train->add_option("--samples-per-site", samples, "samples per site per epoch");
  train->add_option("--base-probability", base_prob, "base crop probability");
  train->add_flag("--no-augment", no_augment, "disable flip/rotate augmentation");
  train->add_flag("--no-oversample", no_oversample, "disable change-weighted crop selection");
  train->add_flag("--signed-diff", signed_diff, "use signed (not absolute) skip differences");
  train->add_option("--checkpoint-every", ckpt_every, "epochs between checkpoints");
  train->add_option("--early-stop", early_stop, "patience on validation F1");
  train->add_option("--threshold", threshold, "validation/eval binarization threshold");
  train->add_option("--pairs", pairs_str, "evaluation pairing: first_last|all_pairs");
  train->add_option("--resume", resume_ckpt, "resume from a train-state checkpoint");
  train->add_flag("--dump-plan", dump_plan, "dump the epoch-0 sample plan as CSV");
  train->add_flag("--eval", with_eval, "evaluate on the test split after training");

  // eval
  auto* eval = app.add_subcommand("eval", "evaluate a run on a labeled split");
  fs::path eval_run_dir, eval_data, eval_out;
  std::string eval_split = "test", eval_weights = "best", eval_pairs_str = "first_last";
  double eval_threshold = 0.5;
  bool eval_maps = false;
  eval->add_option("--run", eval_run_dir, "run directory")->required();
  eval->add_option("--data", eval_data, "dataset directory")->required();
  eval->add_option("--split", eval_split, "train|val|test");
  eval->add_option("--weights", eval_weights, "best|final");
  eval->add_option("--threshold", eval_threshold, "binarization threshold");
  eval->add_option("--pairs", eval_pairs_str, "first_last|all_pairs");
  eval->add_option("--out", eval_out, "output directory (default RUN/eval_SPLIT)");
  eval->add_flag("--maps", eval_maps, "write TP/TN/FP/FN qualitative maps");

  // predict
  auto* predict = app.add_subcommand("predict", "write change probability rasters and masks");
  fs::path pred_run, pred_data, pred_out;
  std::string pred_split = "test", pred_site, pred_weights = "best",
              pred_pairs_str = "first_last";
  double pred_threshold = 0.5;
  predict->add_option("--run", pred_run, "run directory")->required();
  predict->add_option("--data", pred_data, "dataset directory")->required();
  predict->add_option("--split", pred_split, "train|val|test|unlabeled|all");
  predict->add_option("--site", pred_site, "restrict to one site id");
  predict->add_option("--weights", pred_weights, "best|final");
  predict->add_option("--threshold", pred_threshold, "mask binarization threshold");
  predict->add_option("--pairs", pred_pairs_str, "first_last|all_pairs");
  predict->add_option("--out", pred_out, "output directory (default RUN/predictions)");

  // compare
  auto* compare = app.add_subcommand("compare", "render a best-marked comparison table");
  std::vector<fs::path> compare_runs;
  fs::path compare_csv, compare_out;
  compare->add_option("--run", compare_runs, "run directories with eval_test results");
  compare->add_option("--csv", compare_csv, "CSV rows: model,f1,precision,recall");
  compare->add_option("--out", compare_out, "output directory")->required();

  // plot-losses
  auto* plot = app.add_subcommand("plot-losses", "plot per-epoch loss-term curves");
  fs::path plot_run, plot_csv, plot_out;
  plot->add_option("--run", plot_run, "run directory (uses RUN/losses.csv)");
  plot->add_option("--csv", plot_csv, "explicit losses.csv path");
  plot->add_option("--out", plot_out, "output PNG (default RUN/loss_curves.png)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (const char* env_device = std::getenv("SIAMCD_DEVICE");
        env_device && device == "cpu") {
      device = env_device;
    }
    if (device != "cpu") {
      throw ConfigError("device '" + device + "' unavailable: this build runs on cpu only");
    }
    if (workers < 0) throw ConfigError("--workers must be >= 0");
    set_max_workers(workers);

    if (*synth) return cmd_synth(so);
    if (*prepare) return cmd_prepare(po);

    if (*train) {
      json cfg_json = train_config_to_json(TrainConfig{});
      if (!train_config_file.empty()) cfg_json.merge_patch(read_json_file(train_config_file));
      TrainConfig cfg = train_config_from_json(cfg_json);
      const bool all_variants = variant_str == "all";
      if (!all_variants && train->count("--variant")) {
        cfg.network.variant = parse_variant(variant_str);
      } else if (all_variants) {
        cfg.network.variant = Variant::SiamDiffDualTaskSSL;
      }
      if (epochs > 0) cfg.epochs = epochs;
      if (batch > 0) cfg.batch_size = batch;
      if (lr > 0) cfg.optimizer.learning_rate = lr;
      if (wd >= 0) cfg.optimizer.weight_decay = wd;
      if (phi >= 0) cfg.loss.phi = phi;
      if (q > 0) cfg.loss.power_q = q;
      if (noise_eps >= 0) cfg.loss.smoothing_eps = noise_eps;
      if (!consistency_mode.empty()) {
        if (consistency_mode != "prediction_pair" && consistency_mode != "labeled_style") {
          throw ConfigError("--consistency-mode must be prediction_pair or labeled_style");
        }
        cfg.loss.consistency_mode = consistency_mode == "labeled_style"
                                        ? ConsistencyMode::LabeledStyle
                                        : ConsistencyMode::PredictionPair;
      }
      if (train->count("--seed")) {
        cfg.seed = train_seed;
        cfg.network.seed = train_seed;
        cfg.sampler.seed = train_seed;
      }
      if (depth > 0) cfg.network.depth = depth;
      if (base > 0) cfg.network.base_channels = base;
      if (signed_diff) cfg.network.absolute_diff = false;
      if (patch > 0) cfg.sampler.patch_size = patch;
      if (candidates > 0) cfg.sampler.candidates_per_draw = candidates;
      if (samples > 0) cfg.sampler.samples_per_site = samples;
      if (base_prob > 0) cfg.sampler.base_probability = base_prob;
      if (no_augment) cfg.sampler.augment = false;
      if (no_oversample) cfg.sampler.oversample = false;
      if (ckpt_every > 0) cfg.checkpoint_every = ckpt_every;
      if (early_stop > 0) cfg.early_stop_patience = early_stop;
      if (threshold > 0) cfg.eval_threshold = threshold;
      if (!pairs_str.empty()) {
        cfg.eval_pairs = pairs_str == "all_pairs" ? EvalPairs::AllPairs : EvalPairs::FirstLast;
      }
      cfg.device = device;
      cfg.validate();
      return cmd_train(cfg, train_data, train_out, all_variants, resume_ckpt, dump_plan,
                       with_eval);
    }

    if (*eval) {
      LoadedData data = load_split_data(eval_data, false);
      if (eval_out.empty()) eval_out = eval_run_dir / ("eval_" + eval_split);
      eval_run(eval_run_dir, data, eval_split, eval_weights, eval_threshold,
               eval_pairs_str == "all_pairs" ? EvalPairs::AllPairs : EvalPairs::FirstLast,
               eval_maps, eval_out);
      return 0;
    }

    if (*predict) {
      if (pred_out.empty()) pred_out = pred_run / "predictions";
      return cmd_predict(pred_run, pred_data, pred_split, pred_site, pred_weights, pred_threshold,
                         pred_pairs_str == "all_pairs" ? EvalPairs::AllPairs
                                                       : EvalPairs::FirstLast,
                         pred_out);
    }

    if (*compare) return cmd_compare(compare_runs, compare_csv, compare_out);

    if (*plot) {
      if (plot_csv.empty()) {
        if (plot_run.empty()) throw ConfigError("plot-losses needs --run or --csv");
        plot_csv = plot_run / "losses.csv";
      }
      if (plot_out.empty()) {
        plot_out = (plot_run.empty() ? plot_csv.parent_path() : plot_run) / "loss_curves.png";
      }
      plot_loss_curves(plot_csv, plot_out);
      std::cout << "plot-losses: wrote " << plot_out.string() << "\n";
      return 0;
    }
  } catch (const ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return 2;
  } catch (const ContractError& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return 2;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const ShapeError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const ParseError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const SamplingError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const VersionError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const IoError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  }
  return 0;
}
