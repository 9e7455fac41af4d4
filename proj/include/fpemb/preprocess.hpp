#pragma once

#include <string>

#include "fpemb/image.hpp"
#include "fpemb/minutiae.hpp"
#include "fpemb/tensor.hpp"

namespace fpemb {

enum class EnhanceMethod { kNone, kLocalNormalize, kExternal };

std::string enhance_method_name(EnhanceMethod method);
EnhanceMethod enhance_method_from_name(const std::string& name);

// Centered low-frequency crop of the image DFT; DC sits at
// (band_h/2, band_w/2). real and imag always share one shape.
struct SpectrumPatch {
  Tensor real;
  Tensor imag;
};

// kNone returns the input unchanged. kLocalNormalize standardizes each
// non-overlapping block to zero mean and unit variance, remapped into [0,1]
// around 0.5. kExternal loads the pre-enhanced sibling <stem>.enh.<ext>.
FingerprintImage enhance(const FingerprintImage& image, EnhanceMethod method,
                         int block = 16);

// Pads non-square inputs to a centered square with the border-mean intensity,
// then resamples bilinearly (align-corners) to side x side.
FingerprintImage resize_input(const FingerprintImage& image, int side);

// Maps minutia coordinates through the same pad-then-resample geometry so
// annotations stay aligned with resize_input output. Angles are unchanged
// because the scaling is uniform.
MinutiaSet transform_minutiae_for_resize(const MinutiaSet& minutiae,
                                         int orig_height, int orig_width,
                                         int side);

Tensor image_to_tensor(const FingerprintImage& image);

Tensor normalize_zero_mean(const FingerprintImage& image);

// zero_mean must have |mean| < 1e-4; band_fraction * each image side must be
// an even integer. elliptical_mask zeroes bins outside the inscribed ellipse.
SpectrumPatch to_spectrum(const Tensor& zero_mean, double band_fraction,
                          bool elliptical_mask = false);

}  // namespace fpemb
