#pragma once

#include <vector>

#include "fpemb/minutiae.hpp"
#include "fpemb/tensor.hpp"

namespace fpemb {

// Spatial-angular encoding of a minutia set: one spatial Gaussian per minutia
// times a wrapped angular Gaussian against each channel's reference angle
// 2*pi*k/channels. All values are nonnegative and bounded by the minutia
// count; an empty set gives an all-zeros map.
struct MinutiaMap {
  Tensor values;  // (channels, map_side, map_side)
  double scale = 0.5;  // map cells per image pixel
  int image_side = 0;
};

MinutiaMap build_minutia_map(const MinutiaSet& minutiae, int image_side,
                             int map_side = 128, int channels = 6,
                             double sigma_s = 4.0,
                             double sigma_a = M_PI / 6.0);

// Collapses channels by per-cell max, resizes bilinearly to the target shape,
// clamps negatives, and normalizes to sum 1. An all-zeros map yields the
// uniform mask.
Tensor attention_mask_from_map(const Tensor& map_values, int target_h,
                               int target_w);

// Diagnostic peak picking: local maxima of the channel-max map at or above
// the threshold, reported back in image coordinates with the best channel's
// reference angle. Not part of the matching path.
std::vector<Minutia> peaks_from_map(const MinutiaMap& map,
                                    double threshold = 0.5);

}  // namespace fpemb
