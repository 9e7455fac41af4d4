#pragma once

#include <string>
#include <vector>

#include "fpemb/common.hpp"

namespace fpemb {

// Grayscale raster with identity labels. Pixels are row-major doubles in
// [0,1]; disk exchange format is 8-bit PGM (P5).
struct FingerprintImage {
  int width = 0;
  int height = 0;
  std::vector<double> pixels;
  int finger_id = 0;
  int impression_id = 0;
  std::string source_tag;
  std::string image_id;
  std::string path;  // origin file when loaded from disk, empty otherwise

  FingerprintImage() = default;
  FingerprintImage(int h, int w, double fill = 0.0)
      : width(w), height(h),
        pixels(static_cast<std::size_t>(h) * w, fill) {}

  double& at(int r, int c) {
    return pixels[static_cast<std::size_t>(r) * width + c];
  }
  double at(int r, int c) const {
    return pixels[static_cast<std::size_t>(r) * width + c];
  }
  std::size_t size() const { return pixels.size(); }
};

FingerprintImage read_pgm(const std::string& path);
void write_pgm(const FingerprintImage& image, const std::string& path);

}  // namespace fpemb
