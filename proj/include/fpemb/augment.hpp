#pragma once

#include <utility>

#include "fpemb/image.hpp"
#include "fpemb/minutiae.hpp"
#include "fpemb/rng.hpp"
#include "fpemb/tensor.hpp"

namespace fpemb {

struct AugmentConfig {
  double p_contrast = 0.8;
  double p_noise = 0.8;
  double p_deform = 0.5;
  double p_morph = 0.5;
  double gamma_min = 0.75, gamma_max = 1.5;
  double gain_min = 0.8, gain_max = 1.2;
  double noise_sigma_min = 0.0, noise_sigma_max = 0.08;
  double morph_area_min = 0.0002, morph_area_max = 0.002;  // of image area
  double deform_inner = 48.0, deform_outer = 118.0;        // pixels
  double deform_max_shift = 8.0;    // pixels, per axis
  double deform_max_rotate = 0.15;  // radians
};

void validate_augment_config(const AugmentConfig& config);

// Three-region skin-stretch model: zero displacement inside deform_inner, a
// rigid motion (rotation dtheta about the center plus (tx, ty)) beyond
// deform_outer, blended by a raised-cosine radial profile between the two.
struct DeformationField {
  Tensor dx, dy;  // (h, w) displacement evaluated at output pixels
  double cx = 0.0, cy = 0.0;
  double inner = 0.0, outer = 0.0;
  double dtheta = 0.0, tx = 0.0, ty = 0.0;
};

double deformation_weight(const DeformationField& field, double x, double y);
void deformation_at(const DeformationField& field, double x, double y,
                    double* dx, double* dy);

FingerprintImage random_contrast(const FingerprintImage& image, Rng& rng,
                                 const AugmentConfig& config);

FingerprintImage random_noise(const FingerprintImage& image, Rng& rng,
                              const AugmentConfig& config);

FingerprintImage random_morphology(const FingerprintImage& image, Rng& rng,
                                   const AugmentConfig& config);

DeformationField make_deformation_field(int height, int width, Rng& rng,
                                        const AugmentConfig& config);

// Warps the image by inverse mapping and carries each minutia to the exact
// output position of its source pixel; minutiae leaving the frame are
// dropped and their angles pick up the local rotation of the field.
std::pair<FingerprintImage, MinutiaSet> apply_deformation(
    const FingerprintImage& image, const MinutiaSet& minutiae,
    const DeformationField& field);

// Fixed order contrast, noise, deformation, morphology; each stage gated by
// its probability. Only deformation touches the minutiae.
std::pair<FingerprintImage, MinutiaSet> augment_pipeline(
    const FingerprintImage& image, const MinutiaSet& minutiae,
    const AugmentConfig& config, Rng& rng);

}  // namespace fpemb
