#include <gtest/gtest.h>

#include <map>

#include "siamcd/evaluation.hpp"

using namespace siamcd;

namespace {

Raster random_probs(int h, int w, Rng& rng) {
  Raster r(h, w);
  for (auto& v : r.v) v = rng.uniform_float();
  return r;
}

Raster random_mask(int h, int w, Rng& rng) {
  Raster r(h, w);
  for (auto& v : r.v) v = rng.uniform() < 0.5 ? 0.0f : 1.0f;
  return r;
}

// Brute-force pixel-loop tally, independent of the implementation.
ConfusionCounts brute_counts(const Raster& pred, const Raster& label, double thr) {
  ConfusionCounts c;
  for (int y = 0; y < pred.h; ++y) {
    for (int x = 0; x < pred.w; ++x) {
      const bool hit = pred.at(y, x) >= thr;
      const bool pos = label.at(y, x) >= 0.5f;
      c.tp += hit && pos;
      c.fp += hit && !pos;
      c.fn += !hit && pos;
      c.tn += !hit && !pos;
    }
  }
  return c;
}

}  // namespace

TEST(Confusion, PerfectAndDegenerateCases) {
  Rng rng(1);
  Raster label = random_mask(8, 8, rng);
  ConfusionCounts c = accumulate_confusion(label, label, 0.5);
  EXPECT_EQ(c.fp, 0);
  EXPECT_EQ(c.fn, 0);
  EXPECT_EQ(c.total(), 64);

  Raster pred(4, 4);
  pred.fill(0.6f);
  Raster zeros(4, 4);
  ConfusionCounts all_fp = accumulate_confusion(pred, zeros, 0.5);
  EXPECT_EQ(all_fp.fp, 16);
  EXPECT_EQ(all_fp.tp + all_fp.fn + all_fp.tn, 0);

  EXPECT_THROW(accumulate_confusion(pred, zeros, 0.0), ConfigError);
  Raster other(4, 5);
  EXPECT_THROW(accumulate_confusion(pred, other, 0.5), ShapeError);
}

TEST(Confusion, MatchesBruteForceOracle) {
  Rng rng(2);
  for (int it = 0; it < 100; ++it) {
    Raster pred = random_probs(16, 16, rng);
    Raster label = random_mask(16, 16, rng);
    const double thr = 0.1 + 0.8 * rng.uniform();
    ConfusionCounts a = accumulate_confusion(pred, label, thr);
    ConfusionCounts b = brute_counts(pred, label, thr);
    ASSERT_EQ(a.tp, b.tp);
    ASSERT_EQ(a.fp, b.fp);
    ASSERT_EQ(a.fn, b.fn);
    ASSERT_EQ(a.tn, b.tn);
    ASSERT_EQ(a.total(), 256);
  }
}

TEST(Confusion, MergeIsAssociativeAndCommutative) {
  ConfusionCounts a{3, 1, 4, 8}, b{2, 7, 1, 5}, c{9, 0, 2, 6};
  ConfusionCounts ab_c = (a + b) + c;
  ConfusionCounts a_bc = a + (b + c);
  EXPECT_EQ(ab_c.tp, a_bc.tp);
  EXPECT_EQ(ab_c.fp, a_bc.fp);
  EXPECT_EQ(ab_c.fn, a_bc.fn);
  EXPECT_EQ(ab_c.tn, a_bc.tn);
  ConfusionCounts ba = b + a, ab = a + b;
  EXPECT_EQ(ab.tp, ba.tp);
  EXPECT_EQ(ab.total(), ba.total());
}

TEST(MetricsCalc, HandValuesAndDegenerates) {
  Metrics m = precision_recall_f1({2, 1, 1, 0});
  EXPECT_NEAR(m.precision, 2.0 / 3.0, 1e-15);
  EXPECT_NEAR(m.recall, 2.0 / 3.0, 1e-15);
  EXPECT_NEAR(m.f1, 2.0 / 3.0, 1e-15);

  Metrics zero = precision_recall_f1({0, 0, 0, 10});
  EXPECT_EQ(zero.precision, 0.0);
  EXPECT_EQ(zero.recall, 0.0);
  EXPECT_EQ(zero.f1, 0.0);

  Metrics perfect = precision_recall_f1({5, 0, 0, 3});
  EXPECT_EQ(perfect.precision, 1.0);
  EXPECT_EQ(perfect.recall, 1.0);
  EXPECT_EQ(perfect.f1, 1.0);
}

TEST(MetricsCalc, HarmonicMeanBelowArithmetic) {
  Rng rng(3);
  for (int it = 0; it < 200; ++it) {
    ConfusionCounts c{static_cast<std::int64_t>(rng.uniform_int(100)),
                      static_cast<std::int64_t>(rng.uniform_int(100)),
                      static_cast<std::int64_t>(rng.uniform_int(100)),
                      static_cast<std::int64_t>(rng.uniform_int(100))};
    Metrics m = precision_recall_f1(c);
    EXPECT_LE(m.f1, (m.precision + m.recall) / 2.0 + 1e-12);
    EXPECT_GE(m.f1, 0.0);
    EXPECT_LE(m.f1, 1.0);
  }
}

TEST(QualitativeMap, ColorsMatchConfusionCategories) {
  Rng rng(4);
  Raster pred = random_probs(16, 16, rng);
  Raster label = random_mask(16, 16, rng);
  RgbImage img = render_qualitative_map(pred, label, 0.5);
  ConfusionCounts counts = accumulate_confusion(pred, label, 0.5);

  std::map<std::array<std::uint8_t, 3>, std::int64_t> hist;
  for (int y = 0; y < img.h; ++y) {
    for (int x = 0; x < img.w; ++x) {
      const std::size_t i = (static_cast<std::size_t>(y) * img.w + x) * 3;
      ++hist[{img.rgb[i], img.rgb[i + 1], img.rgb[i + 2]}];
    }
  }
  EXPECT_EQ((hist[{255, 255, 255}]), counts.tp);
  EXPECT_EQ((hist[{0, 0, 0}]), counts.tn);
  EXPECT_EQ((hist[{0, 255, 0}]), counts.fp);
  EXPECT_EQ((hist[{128, 0, 128}]), counts.fn);
}

TEST(QualitativeMap, PureCases) {
  Raster ones(4, 4), zeros(4, 4);
  ones.fill(1.0f);
  RgbImage all_green = render_qualitative_map(ones, zeros, 0.5);
  for (std::size_t i = 0; i < all_green.rgb.size(); i += 3) {
    EXPECT_EQ(all_green.rgb[i], 0);
    EXPECT_EQ(all_green.rgb[i + 1], 255);
    EXPECT_EQ(all_green.rgb[i + 2], 0);
  }
  RgbImage bw = render_qualitative_map(ones, ones, 0.5);
  for (std::size_t i = 0; i < bw.rgb.size(); i += 3) EXPECT_EQ(bw.rgb[i], 255);
}

namespace {

std::vector<SiteTimeSeries> eval_sites() {
  std::vector<SiteTimeSeries> sites;
  for (int i = 0; i < 2; ++i) {
    SyntheticConfig cfg;
    cfg.height = cfg.width = 48;
    cfg.building_max = 8;
    cfg.noise_level = 0.0;
    cfg.site_id = "e" + std::to_string(i);
    sites.push_back(generate_synthetic_site(200 + i, cfg));
    sites.back().split = Split::Test;
  }
  return sites;
}

}  // namespace

TEST(EvaluateModel, PerfectOracleReachesF1One) {
  auto sites = eval_sites();
  auto oracle = [](const SiteTimeSeries& site, int t1, int t2) {
    return derive_change_label(*site.timestamps[t1].label, *site.timestamps[t2].label);
  };
  auto [counts, row] = evaluate_with_predictor(oracle, sites, "oracle", "test");
  EXPECT_EQ(row.metrics.f1, 1.0);
  EXPECT_EQ(counts.fp, 0);
  EXPECT_EQ(counts.fn, 0);
}

TEST(EvaluateModel, ConstantZeroPredictorScoresZero) {
  auto sites = eval_sites();
  auto zero = [](const SiteTimeSeries& site, int, int) {
    return Raster(site.height, site.width);
  };
  auto [counts, row] = evaluate_with_predictor(zero, sites, "zero", "test");
  EXPECT_GT(counts.fn, 0);  // the split contains change
  EXPECT_EQ(row.metrics.precision, 0.0);
  EXPECT_EQ(row.metrics.recall, 0.0);
  EXPECT_EQ(row.metrics.f1, 0.0);
}

TEST(EvaluateModel, MergedCountsEqualPerSiteSums) {
  auto sites = eval_sites();
  auto oracle = [](const SiteTimeSeries& site, int t1, int t2) {
    Raster r = derive_change_label(*site.timestamps[t1].label, *site.timestamps[t2].label);
    r.at(0, 0) = 1.0f - r.at(0, 0);  // inject one error per pair
    return r;
  };
  std::vector<SitePairResult> pairs;
  auto [total, row] = evaluate_with_predictor(oracle, sites, "m", "test", {}, &pairs);
  ConfusionCounts sum;
  for (const auto& p : pairs) sum += p.counts;
  EXPECT_EQ(total.tp, sum.tp);
  EXPECT_EQ(total.fp, sum.fp);
  EXPECT_EQ(total.fn, sum.fn);
  EXPECT_EQ(total.tn, sum.tn);
  EXPECT_EQ(pairs.size(), 2u);  // first-last pair per site
}

TEST(EvaluateModel, AllPairsModeEnumeratesOrderedPairs) {
  auto sites = eval_sites();
  EvalOptions opt;
  opt.pairs = EvalPairs::AllPairs;
  auto oracle = [](const SiteTimeSeries& site, int t1, int t2) {
    return derive_change_label(*site.timestamps[t1].label, *site.timestamps[t2].label);
  };
  std::vector<SitePairResult> pairs;
  evaluate_with_predictor(oracle, sites, "m", "test", opt, &pairs);
  EXPECT_EQ(pairs.size(), 2u * 10u);  // C(5,2) per site
}

TEST(EvaluateModel, UnlabeledSplitIsContractError) {
  SyntheticConfig cfg;
  cfg.height = cfg.width = 32;
  cfg.building_max = 8;
  cfg.labeled = false;
  cfg.site_id = "u";
  std::vector<SiteTimeSeries> sites = {generate_synthetic_site(300, cfg)};
  auto zero = [](const SiteTimeSeries& site, int, int) {
    return Raster(site.height, site.width);
  };
  EXPECT_THROW(evaluate_with_predictor(zero, sites, "m", "unlabeled"), ContractError);
}

TEST(PredictChangeMap, TiledEqualsWholeWhenSiteFitsOneTile) {
  SyntheticConfig scfg;
  scfg.height = scfg.width = 32;
  scfg.building_max = 8;
  scfg.site_id = "t";
  SiteTimeSeries site = generate_synthetic_site(400, scfg);

  NetworkConfig ncfg;
  ncfg.variant = Variant::SiamDiffDualTaskSSL;
  ncfg.depth = 3;
  ncfg.base_channels = 4;
  ncfg.input_channels = 3;
  ncfg.seed = 9;
  Network net = Network::build(ncfg);

  Raster tiled = predict_change_map(net, site, 0, 4);
  BatchOutputs direct = net.forward(site.timestamps[0].image, site.timestamps[4].image);
  ASSERT_EQ(tiled.h, 32);
  for (int y = 0; y < 32; ++y) {
    for (int x = 0; x < 32; ++x) {
      ASSERT_EQ(tiled.at(y, x), direct.p_c.at(0, 0, y, x));
    }
  }
}

TEST(PredictChangeMap, CoversNonDivisibleSitesWithClampedTiles) {
  SyntheticConfig scfg;
  scfg.height = 40;  // not a multiple of the 16-px tile grid below
  scfg.width = 56;
  scfg.building_max = 8;
  scfg.site_id = "t2";
  SiteTimeSeries site = generate_synthetic_site(401, scfg);

  NetworkConfig ncfg;
  ncfg.variant = Variant::SiamDiff;
  ncfg.depth = 3;
  ncfg.base_channels = 4;
  ncfg.seed = 10;
  Network net = Network::build(ncfg);
  EvalOptions opt;
  opt.max_tile = 16;
  Raster pred = predict_change_map(net, site, 0, 3, opt);
  EXPECT_EQ(pred.h, 40);
  EXPECT_EQ(pred.w, 56);
  for (float v : pred.v) {
    EXPECT_GE(v, 0.0f);
    EXPECT_LE(v, 1.0f);
  }
}

namespace {

Metrics mk(double p, double r, double f1) {
  Metrics m;
  m.precision = p;
  m.recall = r;
  m.f1 = f1;
  return m;
}

}  // namespace

TEST(Comparison, SingleRowBestEverywhereAndTies) {
  auto one = mark_best_per_column({{"only", mk(0.6, 0.7, 0.5)}});
  ASSERT_EQ(one.size(), 1u);
  EXPECT_TRUE(one[0].f1_best && one[0].precision_best && one[0].recall_best);

  auto tied = mark_best_per_column({{"a", mk(0.6, 0.7, 0.5)}, {"b", mk(0.5, 0.7, 0.5)}});
  EXPECT_TRUE(tied[0].precision_best);
  EXPECT_TRUE(tied[0].recall_best && tied[1].recall_best);  // tie marks both
  EXPECT_TRUE(tied[0].f1_best && tied[1].f1_best);
  EXPECT_FALSE(tied[1].precision_best);

  EXPECT_THROW(mark_best_per_column({}), ContractError);
}

TEST(Comparison, CsvRendering) {
  auto rows = mark_best_per_column({{"a", mk(0.4, 0.7, 0.5)}, {"b", mk(0.3, 0.2, 0.6)}});
  const std::string csv = comparison_table_csv(rows);
  EXPECT_NE(csv.find("model,f1,precision,recall,f1_best,precision_best,recall_best"),
            std::string::npos);
  EXPECT_NE(csv.find("b,0.600,0.300,0.200,1,0,0"), std::string::npos);
  EXPECT_NE(csv.find("a,0.500,0.400,0.700,0,1,1"), std::string::npos);
}
