#include "fpemb/preprocess.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>

#include "fpemb/common.hpp"

namespace fpemb {
namespace {

double bilinear_sample(const FingerprintImage& img, double sr, double sc) {
  const int r0 = std::clamp(static_cast<int>(std::floor(sr)), 0, img.height - 1);
  const int c0 = std::clamp(static_cast<int>(std::floor(sc)), 0, img.width - 1);
  const int r1 = std::min(r0 + 1, img.height - 1);
  const int c1 = std::min(c0 + 1, img.width - 1);
  const double fr = std::clamp(sr - r0, 0.0, 1.0);
  const double fc = std::clamp(sc - c0, 0.0, 1.0);
  const double top = img.pixels[r0 * img.width + c0] * (1 - fc) +
                     img.pixels[r0 * img.width + c1] * fc;
  const double bot = img.pixels[r1 * img.width + c0] * (1 - fc) +
                     img.pixels[r1 * img.width + c1] * fc;
  return top * (1 - fr) + bot * fr;
}

double border_mean(const FingerprintImage& img) {
  double sum = 0.0;
  int count = 0;
  for (int c = 0; c < img.width; ++c) {
    sum += img.pixels[c] + img.pixels[(img.height - 1) * img.width + c];
    count += 2;
  }
  for (int r = 1; r + 1 < img.height; ++r) {
    sum += img.pixels[r * img.width] + img.pixels[r * img.width + img.width - 1];
    count += 2;
  }
  return count > 0 ? sum / count : 0.0;
}

int band_size(double fraction, int side) {
  const double exact = fraction * side;
  const int rounded = static_cast<int>(std::lround(exact));
  FPEMB_CHECK(std::abs(exact - rounded) < 1e-9 && rounded >= 2 &&
                  rounded % 2 == 0 && rounded <= side,
              ErrorKind::kParameter,
              "band fraction must give an even crop size, got " +
                  std::to_string(exact) + " for side " + std::to_string(side));
  return rounded;
}

}  // namespace

std::string enhance_method_name(EnhanceMethod method) {
  switch (method) {
    case EnhanceMethod::kNone: return "none";
    case EnhanceMethod::kLocalNormalize: return "local_normalize";
    case EnhanceMethod::kExternal: return "external";
  }
  return "none";
}

EnhanceMethod enhance_method_from_name(const std::string& name) {
  if (name == "none") return EnhanceMethod::kNone;
  if (name == "local_normalize") return EnhanceMethod::kLocalNormalize;
  if (name == "external") return EnhanceMethod::kExternal;
  fail(ErrorKind::kConfig, "unknown enhancement method '" + name + "'");
}

FingerprintImage enhance(const FingerprintImage& image, EnhanceMethod method,
                         int block) {
  if (method == EnhanceMethod::kNone) return image;
  if (method == EnhanceMethod::kExternal) {
    FPEMB_CHECK(!image.path.empty(), ErrorKind::kInput,
                "external enhancement needs a source path for image " +
                    image.image_id);
    std::filesystem::path p(image.path);
    const std::string ext = p.extension().string();
    p.replace_extension();
    p += ".enh" + ext;
    FPEMB_CHECK(std::filesystem::exists(p), ErrorKind::kInput,
                "pre-enhanced sibling not found: " + p.string());
    FingerprintImage out = read_pgm(p.string());
    out.finger_id = image.finger_id;
    out.impression_id = image.impression_id;
    out.source_tag = image.source_tag;
    out.image_id = image.image_id;
    out.path = image.path;
    return out;
  }
  FPEMB_CHECK(block >= 1, ErrorKind::kParameter,
              "enhancement block size must be at least 1");
  FingerprintImage out = image;
  for (int r0 = 0; r0 < image.height; r0 += block) {
    const int rows = std::min(block, image.height - r0);
    for (int c0 = 0; c0 < image.width; c0 += block) {
      const int cols = std::min(block, image.width - c0);
      double sum = 0.0, sq = 0.0;
      for (int r = r0; r < r0 + rows; ++r)
        for (int c = c0; c < c0 + cols; ++c) {
          const double v = image.pixels[r * image.width + c];
          sum += v;
          sq += v * v;
        }
      const double n = static_cast<double>(rows) * cols;
      const double mean = sum / n;
      const double var = std::max(sq / n - mean * mean, 0.0);
      const double std_dev = std::sqrt(var);
      for (int r = r0; r < r0 + rows; ++r)
        for (int c = c0; c < c0 + cols; ++c) {
          double v = 0.5;
          if (std_dev > 1e-12) {
            const double z = (image.pixels[r * image.width + c] - mean) / std_dev;
            v = std::clamp(0.5 + 0.5 * z, 0.0, 1.0);
          }
          out.pixels[r * image.width + c] = v;
        }
    }
  }
  return out;
}

FingerprintImage resize_input(const FingerprintImage& image, int side) {
  FPEMB_CHECK(side >= 32, ErrorKind::kParameter,
              "target side must be at least 32");
  if (image.height == side && image.width == side) return image;

  const FingerprintImage* src = &image;
  FingerprintImage padded(1, 1);
  if (image.height != image.width) {
    const int sq = std::max(image.height, image.width);
    padded = FingerprintImage(sq, sq, border_mean(image));
    const int top = (sq - image.height) / 2;
    const int left = (sq - image.width) / 2;
    for (int r = 0; r < image.height; ++r)
      for (int c = 0; c < image.width; ++c)
        padded.pixels[(r + top) * sq + (c + left)] =
            image.pixels[r * image.width + c];
    src = &padded;
  }

  FingerprintImage out(side, side);
  const double sr_step =
      side > 1 ? static_cast<double>(src->height - 1) / (side - 1) : 0.0;
  const double sc_step =
      side > 1 ? static_cast<double>(src->width - 1) / (side - 1) : 0.0;
  for (int r = 0; r < side; ++r)
    for (int c = 0; c < side; ++c)
      out.pixels[r * side + c] =
          std::clamp(bilinear_sample(*src, r * sr_step, c * sc_step), 0.0, 1.0);
  out.finger_id = image.finger_id;
  out.impression_id = image.impression_id;
  out.source_tag = image.source_tag;
  out.image_id = image.image_id;
  out.path = image.path;
  return out;
}

MinutiaSet transform_minutiae_for_resize(const MinutiaSet& minutiae,
                                         int orig_height, int orig_width,
                                         int side) {
  FPEMB_CHECK(orig_height > 1 && orig_width > 1, ErrorKind::kParameter,
              "source image must be larger than one pixel");
  FPEMB_CHECK(side >= 32, ErrorKind::kParameter,
              "target side must be at least 32");
  const int sq = std::max(orig_height, orig_width);
  const double top = (sq - orig_height) / 2;
  const double left = (sq - orig_width) / 2;
  const double scale = static_cast<double>(side - 1) / (sq - 1);
  MinutiaSet out;
  out.image_ref = minutiae.image_ref;
  out.items.reserve(minutiae.items.size());
  for (const Minutia& m : minutiae.items) {
    Minutia t = m;
    t.x = (m.x + left) * scale;
    t.y = (m.y + top) * scale;
    out.items.push_back(t);
  }
  return out;
}

Tensor image_to_tensor(const FingerprintImage& image) {
  Tensor t({image.height, image.width});
  for (size_t i = 0; i < image.pixels.size(); ++i) t[i] = image.pixels[i];
  return t;
}

Tensor normalize_zero_mean(const FingerprintImage& image) {
  Tensor t = image_to_tensor(image);
  t.array() -= t.array().mean();
  return t;
}

SpectrumPatch to_spectrum(const Tensor& zero_mean, double band_fraction,
                          bool elliptical_mask) {
  FPEMB_CHECK(zero_mean.ndim() == 2, ErrorKind::kContract,
              "spectrum input must be a 2-D array");
  const int h = zero_mean.dim(0), w = zero_mean.dim(1);
  FPEMB_CHECK(std::abs(zero_mean.array().mean()) < 1e-4, ErrorKind::kContract,
              "spectrum input must be zero-mean");
  FPEMB_CHECK(band_fraction > 0.0 && band_fraction <= 1.0,
              ErrorKind::kParameter, "band fraction must be in (0,1]");
  const int bh = band_size(band_fraction, h);
  const int bw = band_size(band_fraction, w);

  // Selected-frequency DFT: crop row i holds frequency ((i - bh/2) mod h).
  Matrix cr(bh, h), sr(bh, h), cc(w, bw), sc(w, bw);
  for (int i = 0; i < bh; ++i) {
    const int u = ((i - bh / 2) % h + h) % h;
    for (int r = 0; r < h; ++r) {
      const double a = 2.0 * M_PI * u * r / h;
      cr(i, r) = std::cos(a);
      sr(i, r) = std::sin(a);
    }
  }
  for (int j = 0; j < bw; ++j) {
    const int v = ((j - bw / 2) % w + w) % w;
    for (int c = 0; c < w; ++c) {
      const double a = 2.0 * M_PI * v * c / w;
      cc(c, j) = std::cos(a);
      sc(c, j) = std::sin(a);
    }
  }
  ConstMatrixMap x = zero_mean.mat(h, w);
  SpectrumPatch patch;
  patch.real = Tensor({bh, bw});
  patch.imag = Tensor({bh, bw});
  patch.real.mat(bh, bw) = cr * x * cc - sr * x * sc;
  patch.imag.mat(bh, bw) = -(cr * x * sc + sr * x * cc);

  if (elliptical_mask) {
    const double ar = bh / 2.0, ac = bw / 2.0;
    for (int i = 0; i < bh; ++i)
      for (int j = 0; j < bw; ++j) {
        const double dr = (i - bh / 2) / ar, dc = (j - bw / 2) / ac;
        if (dr * dr + dc * dc > 1.0 + 1e-12) {
          patch.real[i * bw + j] = 0.0;
          patch.imag[i * bw + j] = 0.0;
        }
      }
  }
  return patch;
}

}  // namespace fpemb
