#pragma once

// Loss-curve rendering: per-epoch means of the change, semantics and
// consistency terms drawn as polylines into a PNG.

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <opencv2/imgproc.hpp>

#include "siamcd/image_io.hpp"
#include "siamcd/trainer.hpp"

namespace siamcd {

inline std::vector<LossHistoryRow> parse_loss_history(const std::filesystem::path& csv_path) {
  std::ifstream in(csv_path);
  if (!in) throw IoError("cannot open loss history: " + csv_path.string());
  std::vector<LossHistoryRow> rows;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    if (lineno == 1) {
      if (line != losses_csv_header()) {
        throw ParseError(csv_path.string() + " line 1: unexpected header '" + line + "'");
      }
      continue;
    }
    std::istringstream ls(line);
    LossHistoryRow r;
    char c1, c2, c3, c4, c5;
    if (!(ls >> r.epoch >> c1 >> r.step >> c2 >> r.l_s >> c3 >> r.l_c >> c4 >> r.l_cons >> c5 >>
          r.total) ||
        c1 != ',' || c2 != ',' || c3 != ',' || c4 != ',' || c5 != ',') {
      throw ParseError(csv_path.string() + " line " + std::to_string(lineno) +
                       ": malformed loss row '" + line + "'");
    }
    rows.push_back(r);
  }
  if (rows.empty()) throw ParseError(csv_path.string() + ": no loss rows");
  return rows;
}

struct LossCurves {
  std::vector<int> epochs;
  std::vector<double> semantics, change, consistency;
};

inline LossCurves epoch_mean_curves(const std::vector<LossHistoryRow>& rows) {
  LossCurves out;
  int cur = rows.front().epoch;
  double s = 0, c = 0, k = 0;
  int n = 0;
  auto flush = [&]() {
    out.epochs.push_back(cur);
    out.semantics.push_back(s / n);
    out.change.push_back(c / n);
    out.consistency.push_back(k / n);
  };
  for (const auto& r : rows) {
    if (r.epoch != cur) {
      flush();
      cur = r.epoch;
      s = c = k = 0;
      n = 0;
    }
    s += r.l_s;
    c += r.l_c;
    k += r.l_cons;
    ++n;
  }
  flush();
  return out;
}

// One curve per loss term over epochs.
inline void plot_loss_curves(const std::filesystem::path& losses_csv,
                             const std::filesystem::path& out_png) {
  const LossCurves curves = epoch_mean_curves(parse_loss_history(losses_csv));
  const int W = 760, H = 440;
  const int ml = 64, mr = 16, mt = 20, mb = 44;
  cv::Mat img(H, W, CV_8UC3, cv::Scalar(255, 255, 255));

  double ymax = 1e-9;
  for (double v : curves.semantics) ymax = std::max(ymax, v);
  for (double v : curves.change) ymax = std::max(ymax, v);
  for (double v : curves.consistency) ymax = std::max(ymax, v);
  ymax *= 1.08;
  const int n = static_cast<int>(curves.epochs.size());

  auto px = [&](int i) {
    return n > 1 ? ml + static_cast<int>((W - ml - mr) * (static_cast<double>(i) / (n - 1)))
                 : (ml + W - mr) / 2;
  };
  auto py = [&](double v) { return H - mb - static_cast<int>((H - mt - mb) * (v / ymax)); };

  const cv::Scalar axis(90, 90, 90);
  cv::line(img, {ml, mt}, {ml, H - mb}, axis, 1);
  cv::line(img, {ml, H - mb}, {W - mr, H - mb}, axis, 1);
  for (int t = 0; t <= 4; ++t) {
    const double v = ymax * t / 4.0;
    const int y = py(v);
    cv::line(img, {ml - 4, y}, {ml, y}, axis, 1);
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%.2f", v);
    cv::putText(img, buf, {4, y + 4}, cv::FONT_HERSHEY_SIMPLEX, 0.38, axis, 1, cv::LINE_AA);
  }
  const int xticks = std::min(8, n);
  for (int t = 0; t < xticks; ++t) {
    const int i = n > 1 ? t * (n - 1) / std::max(1, xticks - 1) : 0;
    const int x = px(i);
    cv::line(img, {x, H - mb}, {x, H - mb + 4}, axis, 1);
    cv::putText(img, std::to_string(curves.epochs[i]), {x - 8, H - mb + 20},
                cv::FONT_HERSHEY_SIMPLEX, 0.38, axis, 1, cv::LINE_AA);
  }
  cv::putText(img, "epoch", {(W - ml) / 2, H - 8}, cv::FONT_HERSHEY_SIMPLEX, 0.42, axis, 1,
              cv::LINE_AA);

  struct Series {
    const std::vector<double>* v;
    cv::Scalar color;  // BGR
    const char* label;
  };
  const Series series[3] = {{&curves.change, {180, 60, 30}, "change"},
                            {&curves.semantics, {40, 140, 230}, "semantics"},
                            {&curves.consistency, {60, 160, 60}, "consistency"}};
  for (const auto& s : series) {
    for (int i = 1; i < n; ++i) {
      cv::line(img, {px(i - 1), py((*s.v)[i - 1])}, {px(i), py((*s.v)[i])}, s.color, 2,
               cv::LINE_AA);
    }
    if (n == 1) cv::circle(img, {px(0), py((*s.v)[0])}, 3, s.color, cv::FILLED);
  }
  int ly = mt + 14;
  for (const auto& s : series) {
    cv::line(img, {W - mr - 150, ly - 4}, {W - mr - 120, ly - 4}, s.color, 2);
    cv::putText(img, s.label, {W - mr - 112, ly}, cv::FONT_HERSHEY_SIMPLEX, 0.42,
                cv::Scalar(40, 40, 40), 1, cv::LINE_AA);
    ly += 18;
  }

  std::filesystem::create_directories(out_png.parent_path());
  if (!cv::imwrite(out_png.string(), img)) {
    throw IoError("cannot write plot: " + out_png.string());
  }
}

}  // namespace siamcd
