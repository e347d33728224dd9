// Drives the siamcd binary end to end through std::system. Exercises the
// synth -> train -> eval -> predict -> compare -> plot pipeline and the
// documented exit codes.

#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "siamcd/manifest.hpp"
#include "siamcd/plot.hpp"

using namespace siamcd;
namespace fs = std::filesystem;

namespace {

const char* kCli = SIAMCD_CLI_PATH;

int run_cli(const std::string& args) {
  const std::string cmd = std::string(kCli) + " " + args + " >/dev/null 2>&1";
  const int rc = std::system(cmd.c_str());
  return WEXITSTATUS(rc);
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(in)), {});
}

fs::path temp_dir(const std::string& tag) {
  fs::path dir = fs::temp_directory_path() / ("siamcd_cli_" + tag);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

}  // namespace

TEST(Cli, SynthIsIdempotentPerSeed) {
  fs::path dir = temp_dir("synth");
  const std::string common =
      " --labeled 3 --unlabeled 1 --dims 32 --timestamps 3 --building-max 8 --seed 5";
  ASSERT_EQ(run_cli("synth --out " + (dir / "a").string() + common), 0);
  ASSERT_EQ(run_cli("synth --out " + (dir / "b").string() + common), 0);
  EXPECT_EQ(slurp(dir / "a/dataset.json"), slurp(dir / "b/dataset.json"));
  EXPECT_EQ(slurp(dir / "a/site_l000/manifest.json"), slurp(dir / "b/site_l000/manifest.json"));
  EXPECT_EQ(slurp(dir / "a/site_l000/images/2018_01.png"),
            slurp(dir / "b/site_l000/images/2018_01.png"));

  // Refuses to clobber without --force.
  EXPECT_EQ(run_cli("synth --out " + (dir / "a").string() + common), 2);
  EXPECT_EQ(run_cli("synth --out " + (dir / "a").string() + common + " --force"), 0);

  // Unlabeled-only datasets are allowed; bad dims are not.
  EXPECT_EQ(run_cli("synth --out " + (dir / "u").string() +
                    " --labeled 0 --unlabeled 2 --dims 32 --building-max 8"),
            0);
  EXPECT_EQ(run_cli("synth --out " + (dir / "z").string() + " --labeled 1 --dims 0"), 2);
  fs::remove_all(dir);
}

TEST(Cli, TrainEvalPredictComparePlot) {
  fs::path dir = temp_dir("pipeline");
  const fs::path data = dir / "data";
  ASSERT_EQ(run_cli("synth --out " + data.string() +
                    " --labeled 4 --unlabeled 2 --dims 32 --timestamps 3 --building-max 8 "
                    "--split 2,1,1 --seed 3"),
            0);

  const fs::path run = dir / "run";
  ASSERT_EQ(run_cli("train --data " + data.string() + " --out " + run.string() +
                    " --variant ssl --epochs 2 --batch 2 --depth 2 --base 2 --patch 16 "
                    "--samples-per-site 4 --candidates 4 --seed 7 --checkpoint-every 1 "
                    "--dump-plan"),
            0);
  EXPECT_TRUE(fs::exists(run / "config.json"));
  EXPECT_TRUE(fs::exists(run / "losses.csv"));
  EXPECT_TRUE(fs::exists(run / "metrics.csv"));
  EXPECT_TRUE(fs::exists(run / "best.ckpt"));
  EXPECT_TRUE(fs::exists(run / "final.ckpt"));
  EXPECT_TRUE(fs::exists(run / "checkpoints/epoch_001.ckpt"));
  EXPECT_TRUE(fs::exists(run / "epoch_000_plan.csv"));

  // The run manifest is fully resolved: every defaulted knob is present.
  const json manifest = read_json_file(run / "config.json");
  EXPECT_EQ(manifest.at("train_config").at("epochs").get<int>(), 2);
  EXPECT_TRUE(manifest.at("train_config").contains("weight_decay"));
  EXPECT_TRUE(manifest.at("train_config").at("sampler").contains("base_probability"));

  ASSERT_EQ(run_cli("eval --run " + run.string() + " --data " + data.string() +
                    " --split test --maps"),
            0);
  EXPECT_TRUE(fs::exists(run / "eval_test/metrics.csv"));
  EXPECT_TRUE(fs::exists(run / "eval_test/metrics.json"));
  bool found_map = false;
  for (const auto& e : fs::directory_iterator(run / "eval_test")) {
    found_map = found_map || e.path().extension() == ".png";
  }
  EXPECT_TRUE(found_map);

  ASSERT_EQ(run_cli("predict --run " + run.string() + " --data " + data.string() +
                    " --split test"),
            0);
  bool prob = false, mask = false;
  for (const auto& e : fs::directory_iterator(run / "predictions")) {
    const std::string name = e.path().filename().string();
    prob = prob || name.find("_prob.png") != std::string::npos;
    mask = mask || name.find("_mask.png") != std::string::npos;
  }
  EXPECT_TRUE(prob);
  EXPECT_TRUE(mask);

  ASSERT_EQ(run_cli("compare --run " + run.string() + " --out " + (dir / "cmp").string()), 0);
  const std::string table = slurp(dir / "cmp/comparison.txt");
  EXPECT_NE(table.find("Model"), std::string::npos);
  EXPECT_NE(table.find("Siam-Diff + Dual-Task + SSL"), std::string::npos);

  ASSERT_EQ(run_cli("plot-losses --run " + run.string()), 0);
  EXPECT_TRUE(fs::exists(run / "loss_curves.png"));
  fs::remove_all(dir);
}

TEST(Cli, ExitCodesForBadInputs) {
  fs::path dir = temp_dir("codes");
  // Missing dataset -> data error (3).
  EXPECT_EQ(run_cli("train --data " + (dir / "nope").string() + " --out " + (dir / "r").string()),
            3);
  // SSL variant requested with labeled_style consistency + unlabeled data -> config error (2).
  const fs::path data = dir / "data";
  ASSERT_EQ(run_cli("synth --out " + data.string() +
                    " --labeled 3 --unlabeled 1 --dims 32 --timestamps 3 --building-max 8 "
                    "--split 1,1,1"),
            0);
  EXPECT_EQ(run_cli("train --data " + data.string() + " --out " + (dir / "r2").string() +
                    " --variant ssl --consistency-mode labeled_style --epochs 1 --depth 2 "
                    "--base 2 --patch 16 --samples-per-site 2"),
            2);
  // Unknown device -> config error.
  EXPECT_EQ(run_cli("--device tpu synth --out " + (dir / "x").string() + " --labeled 1"), 2);
  // SSL training without any unlabeled sites -> clear config error.
  const fs::path sup_only = dir / "sup_only";
  ASSERT_EQ(run_cli("synth --out " + sup_only.string() +
                    " --labeled 3 --unlabeled 0 --dims 32 --timestamps 3 --building-max 8 "
                    "--split 1,1,1"),
            0);
  EXPECT_EQ(run_cli("train --data " + sup_only.string() + " --out " + (dir / "r4").string() +
                    " --variant ssl --epochs 1 --depth 2 --base 2 --patch 16 "
                    "--samples-per-site 2"),
            2);
  EXPECT_EQ(run_cli("train --data " + sup_only.string() + " --out " + (dir / "r5").string() +
                    " --variant dualtask --epochs 1 --depth 2 --base 2 --patch 16 "
                    "--samples-per-site 2 --candidates 2"),
            0);
  // Missing checkpoint for eval -> data error.
  EXPECT_EQ(run_cli("eval --run " + (dir / "r3").string() + " --data " + data.string()), 3);
  // Malformed losses.csv -> data error with parse failure.
  fs::create_directories(dir / "badrun");
  std::ofstream(dir / "badrun/losses.csv") << "epoch,step,L_s,L_c,L_cons,total\n1,2,oops\n";
  EXPECT_EQ(run_cli("plot-losses --run " + (dir / "badrun").string()), 3);
  fs::remove_all(dir);
}

namespace {

// Sorted (path, size, mtime) signature of a directory tree.
std::string tree_signature(const fs::path& root) {
  std::vector<std::string> lines;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (!e.is_regular_file()) continue;
    lines.push_back(e.path().lexically_relative(root).string() + ":" +
                    std::to_string(e.file_size()) + ":" +
                    std::to_string(e.last_write_time().time_since_epoch().count()));
  }
  std::sort(lines.begin(), lines.end());
  std::string out;
  for (const auto& l : lines) out += l + "\n";
  return out;
}

}  // namespace

TEST(Cli, CommandsNeverMutateInputDatasets) {
  fs::path dir = temp_dir("readonly");
  const fs::path data = dir / "data";
  ASSERT_EQ(run_cli("synth --out " + data.string() +
                    " --labeled 3 --unlabeled 1 --dims 32 --timestamps 3 --building-max 8 "
                    "--split 1,1,1 --seed 2"),
            0);
  const std::string before = tree_signature(data);
  ASSERT_EQ(run_cli("train --data " + data.string() + " --out " + (dir / "run").string() +
                    " --variant ssl --epochs 1 --batch 2 --depth 2 --base 2 --patch 16 "
                    "--samples-per-site 2 --candidates 2 --seed 2"),
            0);
  ASSERT_EQ(run_cli("eval --run " + (dir / "run").string() + " --data " + data.string() +
                    " --split test"),
            0);
  ASSERT_EQ(run_cli("predict --run " + (dir / "run").string() + " --data " + data.string() +
                    " --split test"),
            0);
  EXPECT_EQ(tree_signature(data), before);
  fs::remove_all(dir);
}

TEST(Cli, TrainIsByteReproduciblePerSeed) {
  fs::path dir = temp_dir("repro");
  const fs::path data = dir / "data";
  ASSERT_EQ(run_cli("synth --out " + data.string() +
                    " --labeled 3 --unlabeled 1 --dims 32 --timestamps 3 --building-max 8 "
                    "--split 1,1,1 --seed 2"),
            0);
  const std::string args = " --data " + data.string() +
                           " --variant ssl --epochs 2 --batch 2 --depth 2 --base 2 --patch 16 "
                           "--samples-per-site 4 --candidates 2 --seed 11 --dump-plan";
  ASSERT_EQ(run_cli("train --out " + (dir / "r1").string() + args), 0);
  ASSERT_EQ(run_cli("train --out " + (dir / "r2").string() + args), 0);
  EXPECT_EQ(slurp(dir / "r1/losses.csv"), slurp(dir / "r2/losses.csv"));
  EXPECT_EQ(slurp(dir / "r1/metrics.csv"), slurp(dir / "r2/metrics.csv"));
  EXPECT_EQ(slurp(dir / "r1/epoch_000_plan.csv"), slurp(dir / "r2/epoch_000_plan.csv"));
  fs::remove_all(dir);
}

TEST(Cli, DeviceEnvironmentOverride) {
  fs::path dir = temp_dir("device");
  const std::string cmd = std::string("SIAMCD_DEVICE=tpu ") + kCli + " synth --out " +
                          (dir / "d").string() + " --labeled 1 --dims 32 >/dev/null 2>&1";
  EXPECT_EQ(WEXITSTATUS(std::system(cmd.c_str())), 2);
  fs::remove_all(dir);
}

TEST(Cli, PrepareSpacenetLayout) {
  fs::path dir = temp_dir("prepare");
  // Mock SpaceNet7-style layout: two labeled sites, one unlabeled.
  auto make_site = [&](const fs::path& root, const std::string& id, bool labeled) {
    SyntheticConfig cfg;
    cfg.height = cfg.width = 32;
    cfg.building_max = 8;
    cfg.n_timestamps = 3;
    cfg.site_id = id;
    SiteTimeSeries s = generate_synthetic_site(str_hash64(id), cfg);
    for (const auto& ts : s.timestamps) {
      const std::string stamp = "global_monthly_" + ts.key.str() + "_mosaic_" + id;
      write_image_u8(root / id / "images" / (stamp + ".tif"), ts.image);
      if (labeled) {
        write_json_file(root / id / "labels" / (stamp + "_Buildings.geojson"),
                        footprints_to_geojson(*ts.footprints));
      }
    }
  };
  make_site(dir / "sn7/train", "aoi_a", true);
  make_site(dir / "sn7/train", "aoi_b", true);
  make_site(dir / "sn7/train", "aoi_c", true);
  make_site(dir / "sn7/test", "aoi_x", false);

  // Cloud exclusion file.
  write_json_file(dir / "exclusions.json",
                  json::array({{{"site", "aoi_a"}, {"year", 2018}, {"month", 2}}}));

  ASSERT_EQ(run_cli("prepare --root " + (dir / "sn7").string() + " --out " +
                    (dir / "out").string() + " --split 1,1,1 --seed 4 --exclusions " +
                    (dir / "exclusions.json").string()),
            0);
  auto sites = load_dataset(dir / "out");
  ASSERT_EQ(sites.size(), 4u);
  int unlabeled = 0, excluded = 0;
  for (const auto& s : sites) {
    if (s.split == Split::Unlabeled) ++unlabeled;
    for (const auto& ts : s.timestamps) {
      excluded += ts.cloud_excluded ? 1 : 0;
      if (s.labeled() && !ts.cloud_excluded) {
        EXPECT_TRUE(ts.label.has_value()) << s.site_id;  // label cache materialized
      }
    }
  }
  EXPECT_EQ(unlabeled, 1);
  EXPECT_EQ(excluded, 1);

  // Rerun is deterministic.
  ASSERT_EQ(run_cli("prepare --root " + (dir / "sn7").string() + " --out " +
                    (dir / "out2").string() + " --split 1,1,1 --seed 4 --exclusions " +
                    (dir / "exclusions.json").string()),
            0);
  EXPECT_EQ(slurp(dir / "out/dataset.json"), slurp(dir / "out2/dataset.json"));
  EXPECT_EQ(slurp(dir / "out/aoi_a/manifest.json"), slurp(dir / "out2/aoi_a/manifest.json"));

  // A labeled site with a missing footprint file fails validation, naming
  // the timestamp.
  fs::remove(dir / "sn7/train/aoi_b/labels/global_monthly_2018_02_mosaic_aoi_b_Buildings.geojson");
  EXPECT_EQ(run_cli("prepare --root " + (dir / "sn7").string() + " --out " +
                    (dir / "out3").string() + " --split 1,1,1"),
            3);
  // Empty root -> data error.
  EXPECT_EQ(run_cli("prepare --root " + (dir / "empty").string() + " --out " +
                    (dir / "out4").string()),
            3);
  fs::remove_all(dir);
}

TEST(Cli, ResumeContinuesARunIntoANewDirectory) {
  fs::path dir = temp_dir("resume");
  const fs::path data = dir / "data";
  ASSERT_EQ(run_cli("synth --out " + data.string() +
                    " --labeled 3 --unlabeled 1 --dims 32 --timestamps 3 --building-max 8 "
                    "--split 1,1,1 --seed 6"),
            0);
  const std::string base = " --data " + data.string() +
                           " --variant ssl --batch 2 --depth 2 --base 2 --patch 16 "
                           "--samples-per-site 4 --candidates 2 --seed 6 --checkpoint-every 1";
  ASSERT_EQ(run_cli("train --out " + (dir / "full").string() + base + " --epochs 2"), 0);
  ASSERT_EQ(run_cli("train --out " + (dir / "part").string() + base + " --epochs 1"), 0);
  // The epoch-1 checkpoint of the 2-epoch schedule does not exist in the
  // short run; resume instead from the full run's mid checkpoint into a new
  // directory and compare the continued history with the straight run.
  ASSERT_EQ(run_cli("train --out " + (dir / "cont").string() + " --data " + data.string() +
                    " --resume " + (dir / "full/checkpoints/epoch_001.ckpt").string()),
            0);
  const std::string full_csv = slurp(dir / "full/losses.csv");
  const std::string cont_csv = slurp(dir / "cont/losses.csv");
  // The resumed file holds the header plus the second epoch's rows; every
  // row it has must appear verbatim in the uninterrupted run's log.
  std::stringstream ss(cont_csv);
  std::string line;
  std::getline(ss, line);
  EXPECT_EQ(line, "epoch,step,L_s,L_c,L_cons,total");
  int rows = 0;
  while (std::getline(ss, line)) {
    if (line.empty()) continue;
    EXPECT_NE(full_csv.find(line), std::string::npos) << line;
    ++rows;
  }
  EXPECT_GT(rows, 0);
  fs::remove_all(dir);
}

TEST(Cli, TrainAllVariantsEmitsBenchmarkReport) {
  fs::path dir = temp_dir("bench");
  const fs::path data = dir / "data";
  ASSERT_EQ(run_cli("synth --out " + data.string() +
                    " --labeled 4 --unlabeled 1 --dims 32 --timestamps 3 --building-max 8 "
                    "--split 2,1,1 --seed 9"),
            0);
  ASSERT_EQ(run_cli("train --data " + data.string() + " --out " + (dir / "bench").string() +
                    " --variant all --epochs 1 --batch 2 --depth 2 --base 2 --patch 16 "
                    "--samples-per-site 2 --candidates 2 --seed 9"),
            0);
  for (const char* v : {"ef_unet", "siam_diff", "siam_diff_dual_task", "siam_diff_dual_task_ssl"}) {
    EXPECT_TRUE(fs::exists(dir / "bench" / v / "final.ckpt")) << v;
    EXPECT_TRUE(fs::exists(dir / "bench" / v / "losses.csv")) << v;
    EXPECT_TRUE(fs::exists(dir / "bench" / v / "loss_curves.png")) << v;
    EXPECT_TRUE(fs::exists(dir / "bench" / v / "eval_test/metrics.json")) << v;
  }
  const std::string table = slurp(dir / "bench/comparison.txt");
  EXPECT_NE(table.find("EF U-Net"), std::string::npos);
  EXPECT_NE(table.find("Siam-Diff + Dual-Task + SSL"), std::string::npos);
  // Four data rows + header + separator.
  EXPECT_EQ(std::count(table.begin(), table.end(), '\n'), 6);
  fs::remove_all(dir);
}
