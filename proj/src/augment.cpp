#include "fpemb/augment.hpp"

#include <algorithm>
#include <cmath>

#include "fpemb/common.hpp"

namespace fpemb {
namespace {

double clamp01(double v) { return std::clamp(v, 0.0, 1.0); }

double sample_clamped(const FingerprintImage& img, double r, double c) {
  const int r0 = std::clamp(static_cast<int>(std::floor(r)), 0, img.height - 1);
  const int c0 = std::clamp(static_cast<int>(std::floor(c)), 0, img.width - 1);
  const int r1 = std::min(r0 + 1, img.height - 1);
  const int c1 = std::min(c0 + 1, img.width - 1);
  const double fr = std::clamp(r - r0, 0.0, 1.0);
  const double fc = std::clamp(c - c0, 0.0, 1.0);
  const double top = img.pixels[r0 * img.width + c0] * (1 - fc) +
                     img.pixels[r0 * img.width + c1] * fc;
  const double bot = img.pixels[r1 * img.width + c0] * (1 - fc) +
                     img.pixels[r1 * img.width + c1] * fc;
  return top * (1 - fr) + bot * fr;
}

}  // namespace

void validate_augment_config(const AugmentConfig& c) {
  auto prob = [](double p) { return p >= 0.0 && p <= 1.0; };
  FPEMB_CHECK(prob(c.p_contrast) && prob(c.p_noise) && prob(c.p_deform) &&
                  prob(c.p_morph),
              ErrorKind::kParameter,
              "augmentation probabilities must lie in [0,1]");
  FPEMB_CHECK(c.gamma_min > 0.0 && c.gamma_min <= c.gamma_max &&
                  c.gain_min > 0.0 && c.gain_min <= c.gain_max,
              ErrorKind::kParameter, "contrast ranges must be ordered and positive");
  FPEMB_CHECK(c.noise_sigma_min >= 0.0 && c.noise_sigma_min <= c.noise_sigma_max,
              ErrorKind::kParameter, "noise sigma range must be ordered");
  FPEMB_CHECK(c.morph_area_min > 0.0 && c.morph_area_min <= c.morph_area_max &&
                  c.morph_area_max <= 1.0,
              ErrorKind::kParameter, "morphology area fractions must be ordered");
  FPEMB_CHECK(c.deform_inner > 0.0 && c.deform_inner < c.deform_outer,
              ErrorKind::kParameter,
              "deformation needs 0 < inner radius < outer radius");
  FPEMB_CHECK(c.deform_max_shift >= 0.0 && c.deform_max_rotate >= 0.0,
              ErrorKind::kParameter, "deformation motion bounds must be nonnegative");
}

double deformation_weight(const DeformationField& field, double x, double y) {
  const double d = std::hypot(x - field.cx, y - field.cy);
  if (d <= field.inner) return 0.0;
  if (d >= field.outer) return 1.0;
  return 0.5 * (1.0 - std::cos(M_PI * (d - field.inner) /
                               (field.outer - field.inner)));
}

void deformation_at(const DeformationField& field, double x, double y,
                    double* dx, double* dy) {
  const double w = deformation_weight(field, x, y);
  if (w == 0.0) {
    *dx = 0.0;
    *dy = 0.0;
    return;
  }
  const double px = x - field.cx, py = y - field.cy;
  const double ct = std::cos(field.dtheta), st = std::sin(field.dtheta);
  *dx = w * (ct * px - st * py - px + field.tx);
  *dy = w * (st * px + ct * py - py + field.ty);
}

FingerprintImage random_contrast(const FingerprintImage& image, Rng& rng,
                                 const AugmentConfig& config) {
  const double gamma = rng.uniform(config.gamma_min, config.gamma_max);
  const double gain = rng.uniform(config.gain_min, config.gain_max);
  FingerprintImage out = image;
  for (double& v : out.pixels) v = clamp01(gain * std::pow(v, gamma));
  return out;
}

FingerprintImage random_noise(const FingerprintImage& image, Rng& rng,
                              const AugmentConfig& config) {
  const double sigma =
      rng.uniform(config.noise_sigma_min, config.noise_sigma_max);
  FingerprintImage out = image;
  for (double& v : out.pixels) v = clamp01(v + sigma * rng.normal());
  return out;
}

FingerprintImage random_morphology(const FingerprintImage& image, Rng& rng,
                                   const AugmentConfig& config) {
  const double total = static_cast<double>(image.height) * image.width;
  const int lo = std::max<int>(1, static_cast<int>(
                                      std::ceil(config.morph_area_min * total)));
  const int hi = std::max(
      lo, static_cast<int>(std::floor(config.morph_area_max * total)));
  int area = static_cast<int>(std::lround(
      rng.uniform(config.morph_area_min, config.morph_area_max) * total));
  area = std::clamp(area, lo, hi);
  const double aspect = rng.uniform(0.5, 2.0);  // patch height / width

  int ph = std::clamp(static_cast<int>(std::lround(std::sqrt(area * aspect))),
                      1, image.height);
  int pw = std::clamp(
      static_cast<int>(std::lround(static_cast<double>(area) / ph)), 1,
      image.width);
  // Rounding can leave the patch outside the mandated area band; nudge the
  // larger or smaller side until it fits.
  for (int guard = 0; guard < 64 && ph * pw > hi; ++guard) {
    if (ph >= pw && ph > 1)
      --ph;
    else if (pw > 1)
      --pw;
    else
      break;
  }
  for (int guard = 0; guard < 64 && ph * pw < lo; ++guard) {
    if ((ph <= pw && ph < image.height) || pw >= image.width)
      ++ph;
    else if (pw < image.width)
      ++pw;
    else
      break;
  }

  const int top = rng.uniform_int(0, image.height - ph);
  const int left = rng.uniform_int(0, image.width - pw);
  const bool dilate = rng.bernoulli(0.5);

  FingerprintImage out = image;
  for (int r = top; r < top + ph; ++r)
    for (int c = left; c < left + pw; ++c) {
      double best = image.pixels[r * image.width + c];
      for (int dr = -1; dr <= 1; ++dr)
        for (int dc = -1; dc <= 1; ++dc) {
          const int nr = r + dr, nc = c + dc;
          if (nr < 0 || nr >= image.height || nc < 0 || nc >= image.width)
            continue;
          const double v = image.pixels[nr * image.width + nc];
          best = dilate ? std::max(best, v) : std::min(best, v);
        }
      out.pixels[r * image.width + c] = best;
    }
  return out;
}

DeformationField make_deformation_field(int height, int width, Rng& rng,
                                        const AugmentConfig& config) {
  validate_augment_config(config);
  DeformationField field;
  field.cx = (width - 1) * 0.5;
  field.cy = (height - 1) * 0.5;
  field.inner = config.deform_inner;
  field.outer = config.deform_outer;
  FPEMB_CHECK(field.outer <= std::min(field.cx, field.cy) + 0.5,
              ErrorKind::kParameter,
              "deformation outer radius does not fit inside the image");
  field.dtheta = rng.uniform(-config.deform_max_rotate, config.deform_max_rotate);
  field.tx = rng.uniform(-config.deform_max_shift, config.deform_max_shift);
  field.ty = rng.uniform(-config.deform_max_shift, config.deform_max_shift);
  field.dx = Tensor({height, width});
  field.dy = Tensor({height, width});
  for (int r = 0; r < height; ++r)
    for (int c = 0; c < width; ++c) {
      double dx, dy;
      deformation_at(field, c, r, &dx, &dy);
      field.dx.at(r, c) = dx;
      field.dy.at(r, c) = dy;
    }
  return field;
}

std::pair<FingerprintImage, MinutiaSet> apply_deformation(
    const FingerprintImage& image, const MinutiaSet& minutiae,
    const DeformationField& field) {
  FPEMB_CHECK(field.dx.ndim() == 2 && field.dx.dim(0) == image.height &&
                  field.dx.dim(1) == image.width,
              ErrorKind::kContract, "deformation field shape mismatch");
  FingerprintImage out = image;
  for (int r = 0; r < image.height; ++r)
    for (int c = 0; c < image.width; ++c)
      out.pixels[r * image.width + c] = sample_clamped(
          image, r - field.dy.at(r, c), c - field.dx.at(r, c));

  MinutiaSet moved;
  moved.image_ref = minutiae.image_ref;
  for (const Minutia& m : minutiae.items) {
    // The warp reads out(p) = in(p - field(p)), so the source point m lands
    // at the fixed point p = m + field(p); iterate from p = m.
    double px = m.x, py = m.y;
    for (int it = 0; it < 60; ++it) {
      double dx, dy;
      deformation_at(field, px, py, &dx, &dy);
      const double nx = m.x + dx, ny = m.y + dy;
      const double step = std::hypot(nx - px, ny - py);
      px = nx;
      py = ny;
      if (step < 1e-10) break;
    }
    if (px < 0.0 || px >= image.width || py < 0.0 || py >= image.height)
      continue;
    Minutia out_m = m;
    out_m.x = px;
    out_m.y = py;
    out_m.theta = normalize_angle(
        m.theta + deformation_weight(field, m.x, m.y) * field.dtheta);
    moved.items.push_back(out_m);
  }
  return {std::move(out), std::move(moved)};
}

std::pair<FingerprintImage, MinutiaSet> augment_pipeline(
    const FingerprintImage& image, const MinutiaSet& minutiae,
    const AugmentConfig& config, Rng& rng) {
  validate_augment_config(config);
  FingerprintImage img = image;
  MinutiaSet mins = minutiae;
  if (rng.bernoulli(config.p_contrast)) img = random_contrast(img, rng, config);
  if (rng.bernoulli(config.p_noise)) img = random_noise(img, rng, config);
  if (rng.bernoulli(config.p_deform)) {
    const DeformationField field =
        make_deformation_field(img.height, img.width, rng, config);
    auto warped = apply_deformation(img, mins, field);
    img = std::move(warped.first);
    mins = std::move(warped.second);
  }
  if (rng.bernoulli(config.p_morph)) img = random_morphology(img, rng, config);
  return {std::move(img), std::move(mins)};
}

}  // namespace fpemb
