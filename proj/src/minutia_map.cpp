#include "fpemb/minutia_map.hpp"

#include <algorithm>
#include <cmath>

#include "fpemb/common.hpp"

namespace fpemb {
namespace {

double wrap_angle_diff(double a) {
  // Wraps into (-pi, pi].
  a = std::fmod(a, 2.0 * M_PI);
  if (a > M_PI) a -= 2.0 * M_PI;
  if (a <= -M_PI) a += 2.0 * M_PI;
  return a;
}

// Align-corners bilinear resize of a 2-D tensor; mirrors the tape op so the
// plain and differentiable attention paths agree exactly.
Tensor resize2d(const Tensor& in, int oh, int ow) {
  const int h = in.dim(0), w = in.dim(1);
  Tensor out({oh, ow});
  const double sr = oh > 1 ? static_cast<double>(h - 1) / (oh - 1) : 0.0;
  const double sc = ow > 1 ? static_cast<double>(w - 1) / (ow - 1) : 0.0;
  for (int i = 0; i < oh; ++i) {
    const double fr = i * sr;
    const int r0 = std::min(static_cast<int>(std::floor(fr)), h - 1);
    const int r1 = std::min(r0 + 1, h - 1);
    const double ar = fr - r0;
    for (int j = 0; j < ow; ++j) {
      const double fc = j * sc;
      const int c0 = std::min(static_cast<int>(std::floor(fc)), w - 1);
      const int c1 = std::min(c0 + 1, w - 1);
      const double ac = fc - c0;
      out.at(i, j) = (1 - ar) * ((1 - ac) * in.at(r0, c0) + ac * in.at(r0, c1)) +
                     ar * ((1 - ac) * in.at(r1, c0) + ac * in.at(r1, c1));
    }
  }
  return out;
}

}  // namespace

MinutiaMap build_minutia_map(const MinutiaSet& minutiae, int image_side,
                             int map_side, int channels, double sigma_s,
                             double sigma_a) {
  FPEMB_CHECK(image_side >= 1 && map_side >= 1 && channels >= 1,
              ErrorKind::kParameter, "map dimensions must be positive");
  FPEMB_CHECK(image_side % map_side == 0, ErrorKind::kParameter,
              "map side must divide image side");
  FPEMB_CHECK(sigma_s > 0.0 && sigma_a > 0.0, ErrorKind::kParameter,
              "map kernel widths must be positive");

  MinutiaMap map;
  map.image_side = image_side;
  map.scale = static_cast<double>(map_side) / image_side;
  map.values = Tensor({channels, map_side, map_side});

  Eigen::ArrayXd row(map_side), col(map_side), ang(channels);
  Matrix outer(map_side, map_side);
  for (const Minutia& m : minutiae.items) {
    FPEMB_CHECK(m.x >= 0.0 && m.x < image_side && m.y >= 0.0 &&
                    m.y < image_side,
                ErrorKind::kRange,
                "minutia (" + std::to_string(m.x) + "," + std::to_string(m.y) +
                    ") lies outside the image");
    const double mx = m.x * map.scale, my = m.y * map.scale;
    for (int i = 0; i < map_side; ++i) {
      const double dy = i - my, dx = i - mx;
      row[i] = std::exp(-dy * dy / (2.0 * sigma_s * sigma_s));
      col[i] = std::exp(-dx * dx / (2.0 * sigma_s * sigma_s));
    }
    for (int k = 0; k < channels; ++k) {
      const double d = wrap_angle_diff(m.theta - 2.0 * M_PI * k / channels);
      ang[k] = std::exp(-d * d / (2.0 * sigma_a * sigma_a));
    }
    outer = row.matrix() * col.matrix().transpose();
    for (int k = 0; k < channels; ++k)
      map.values.mat(channels, map_side * map_side).row(k) +=
          ang[k] * Eigen::Map<Eigen::RowVectorXd>(outer.data(),
                                                  map_side * map_side);
  }
  return map;
}

Tensor attention_mask_from_map(const Tensor& map_values, int target_h,
                               int target_w) {
  FPEMB_CHECK(map_values.ndim() == 3, ErrorKind::kContract,
              "minutia map must be (channels, h, w)");
  FPEMB_CHECK(target_h >= 1 && target_w >= 1, ErrorKind::kParameter,
              "mask target shape must be positive");
  const int ch = map_values.dim(0), h = map_values.dim(1), w = map_values.dim(2);

  Tensor collapsed({h, w});
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j) {
      double best = map_values.at(0, i, j);
      for (int k = 1; k < ch; ++k) best = std::max(best, map_values.at(k, i, j));
      collapsed.at(i, j) = best;
    }

  Tensor mask = resize2d(collapsed, target_h, target_w);
  for (std::int64_t i = 0; i < mask.size(); ++i)
    mask[i] = std::max(mask[i], 0.0);
  const double total = mask.array().sum();
  if (total <= 1e-300) {
    mask.array().setConstant(1.0 / (static_cast<double>(target_h) * target_w));
  } else {
    mask.array() /= total;
  }
  return mask;
}

std::vector<Minutia> peaks_from_map(const MinutiaMap& map, double threshold) {
  const int ch = map.values.dim(0), side = map.values.dim(1);
  std::vector<Minutia> peaks;
  for (int i = 0; i < side; ++i)
    for (int j = 0; j < side; ++j) {
      double v = map.values.at(0, i, j);
      int best_k = 0;
      for (int k = 1; k < ch; ++k)
        if (map.values.at(k, i, j) > v) {
          v = map.values.at(k, i, j);
          best_k = k;
        }
      if (v < threshold) continue;
      bool is_peak = true;
      for (int di = -1; di <= 1 && is_peak; ++di)
        for (int dj = -1; dj <= 1 && is_peak; ++dj) {
          if (di == 0 && dj == 0) continue;
          const int ni = i + di, nj = j + dj;
          if (ni < 0 || ni >= side || nj < 0 || nj >= side) continue;
          double nv = map.values.at(0, ni, nj);
          for (int k = 1; k < ch; ++k) nv = std::max(nv, map.values.at(k, ni, nj));
          if (nv > v) is_peak = false;
        }
      if (!is_peak) continue;
      Minutia m;
      m.x = j / map.scale;
      m.y = i / map.scale;
      m.theta = normalize_angle(2.0 * M_PI * best_k / ch);
      m.kind = MinutiaKind::kUnknown;
      peaks.push_back(m);
    }
  return peaks;
}

}  // namespace fpemb
