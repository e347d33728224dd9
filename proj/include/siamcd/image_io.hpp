#pragma once

// Image codecs (PNG for synthetic data and caches, TIFF for ingested
// imagery), backed by OpenCV. Multi-channel rasters are held in RGB order
// and scaled to [0,1].

#include <filesystem>
#include <string>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "siamcd/tensor.hpp"

namespace siamcd {

// Reads an 8-bit image into a (1,C,H,W) tensor with values in [0,1].
// force_channels > 0 keeps only the first `force_channels` bands (after
// BGR(A) -> RGB(A) reordering), e.g. 3 to drop an alpha/UDM band.
inline Tensor read_image(const std::filesystem::path& path, int force_channels = 0) {
  cv::Mat m = cv::imread(path.string(), cv::IMREAD_UNCHANGED);
  if (m.empty()) throw IoError("cannot read image: " + path.string());
  if (m.depth() != CV_8U) {
    throw DataError("unsupported image depth in " + path.string() + " (expected 8-bit)");
  }
  int c = m.channels();
  // OpenCV stores color as BGR(A); flip to RGB(A).
  if (c == 3) cv::cvtColor(m, m, cv::COLOR_BGR2RGB);
  if (c == 4) cv::cvtColor(m, m, cv::COLOR_BGRA2RGBA);
  const int out_c = force_channels > 0 ? std::min(force_channels, c) : c;
  Tensor t(1, out_c, m.rows, m.cols);
  for (int y = 0; y < m.rows; ++y) {
    const std::uint8_t* row = m.ptr<std::uint8_t>(y);
    for (int x = 0; x < m.cols; ++x) {
      for (int ch = 0; ch < out_c; ++ch) {
        t.at(0, ch, y, x) = static_cast<float>(row[x * c + ch]) / 255.0f;
      }
    }
  }
  return t;
}

// Writes a (1,C,H,W) tensor with values in [0,1] as an 8-bit image.
inline void write_image_u8(const std::filesystem::path& path, const Tensor& t) {
  if (t.n() != 1) throw ShapeError("write_image_u8 expects a single-sample tensor");
  const int c = t.c();
  if (c != 1 && c != 3 && c != 4) {
    throw DataError("write_image_u8 supports 1, 3 or 4 channels, got " + std::to_string(c));
  }
  cv::Mat m(t.h(), t.w(), CV_8UC(c));
  for (int y = 0; y < t.h(); ++y) {
    std::uint8_t* row = m.ptr<std::uint8_t>(y);
    for (int x = 0; x < t.w(); ++x) {
      for (int ch = 0; ch < c; ++ch) {
        const float v = std::min(1.0f, std::max(0.0f, t.at(0, ch, y, x)));
        row[x * c + ch] = static_cast<std::uint8_t>(std::lround(v * 255.0f));
      }
    }
  }
  if (c == 3) cv::cvtColor(m, m, cv::COLOR_RGB2BGR);
  if (c == 4) cv::cvtColor(m, m, cv::COLOR_RGBA2BGRA);
  std::filesystem::create_directories(path.parent_path());
  if (!cv::imwrite(path.string(), m)) throw IoError("cannot write image: " + path.string());
}

// Binary masks cached as single-band PNG, 0/255 <-> 0/1.
inline Raster read_mask_png(const std::filesystem::path& path) {
  cv::Mat m = cv::imread(path.string(), cv::IMREAD_GRAYSCALE);
  if (m.empty()) throw IoError("cannot read mask: " + path.string());
  Raster r(m.rows, m.cols);
  for (int y = 0; y < m.rows; ++y) {
    const std::uint8_t* row = m.ptr<std::uint8_t>(y);
    for (int x = 0; x < m.cols; ++x) r.at(y, x) = row[x] >= 128 ? 1.0f : 0.0f;
  }
  return r;
}

inline void write_mask_png(const std::filesystem::path& path, const Raster& r) {
  cv::Mat m(r.h, r.w, CV_8UC1);
  for (int y = 0; y < r.h; ++y) {
    std::uint8_t* row = m.ptr<std::uint8_t>(y);
    for (int x = 0; x < r.w; ++x) row[x] = r.at(y, x) >= 0.5f ? 255 : 0;
  }
  std::filesystem::create_directories(path.parent_path());
  if (!cv::imwrite(path.string(), m)) throw IoError("cannot write mask: " + path.string());
}

// Probability rasters quantized to 8-bit grayscale.
inline void write_probability_png(const std::filesystem::path& path, const Raster& r) {
  cv::Mat m(r.h, r.w, CV_8UC1);
  for (int y = 0; y < r.h; ++y) {
    std::uint8_t* row = m.ptr<std::uint8_t>(y);
    for (int x = 0; x < r.w; ++x) {
      const float v = std::min(1.0f, std::max(0.0f, r.at(y, x)));
      row[x] = static_cast<std::uint8_t>(std::lround(v * 255.0f));
    }
  }
  std::filesystem::create_directories(path.parent_path());
  if (!cv::imwrite(path.string(), m)) throw IoError("cannot write raster: " + path.string());
}

// Packed RGB byte images (qualitative maps, plots).
inline void write_rgb_png(const std::filesystem::path& path, const std::vector<std::uint8_t>& rgb,
                          int h, int w) {
  if (rgb.size() != static_cast<std::size_t>(h) * w * 3) {
    throw ShapeError("write_rgb_png: buffer size does not match dims");
  }
  cv::Mat m(h, w, CV_8UC3);
  for (int y = 0; y < h; ++y) {
    std::uint8_t* row = m.ptr<std::uint8_t>(y);
    for (int x = 0; x < w; ++x) {
      const std::size_t i = (static_cast<std::size_t>(y) * w + x) * 3;
      row[x * 3 + 0] = rgb[i + 2];  // BGR on disk
      row[x * 3 + 1] = rgb[i + 1];
      row[x * 3 + 2] = rgb[i + 0];
    }
  }
  std::filesystem::create_directories(path.parent_path());
  if (!cv::imwrite(path.string(), m)) throw IoError("cannot write image: " + path.string());
}

}  // namespace siamcd
