#pragma once

#include <cstdint>
#include <utility>

#include "fpemb/image.hpp"
#include "fpemb/minutiae.hpp"

namespace fpemb {

// Parameters for the synthetic ridge-pattern generator. A "finger" is a
// smooth phase field (oriented sinusoid + gentle warps + optional core
// singularity) with amplitude notches at planted minutia sites; impressions
// of the same finger differ by a rigid pose, ridge-phase offset, and gain.
struct SynthSpec {
  int side = 256;
  double freq_min = 0.08;  // cycles per pixel
  double freq_max = 0.12;
  int minutia_count = 8;
  int warp_terms = 3;
  double warp_amp = 4.0;     // radians of phase bend per term
  bool allow_core = true;
  double notch_sigma = 2.5;  // px, amplitude dip radius at each minutia

  double jitter_rotation = 0.35;     // radians, per impression
  double jitter_translation = 10.0;  // px
  double jitter_phase = 6.283185307179586;
  double contrast_jitter = 0.25;     // gain drawn from [1-contrast_jitter, 1]
};

void validate_synth_spec(const SynthSpec& spec);

// Identity derives from finger_seed, pose from impression_seed. Deterministic
// for fixed (seeds, spec).
std::pair<FingerprintImage, MinutiaSet> generate_synthetic_fingerprint(
    std::uint64_t finger_seed, std::uint64_t impression_seed,
    const SynthSpec& spec);

// Single-seed form: identity and pose both tied to one seed.
std::pair<FingerprintImage, MinutiaSet> generate_synthetic_fingerprint(
    std::uint64_t seed, const SynthSpec& spec);

// Minutiae of the impression without rendering the raster (same values the
// full generator returns).
MinutiaSet generate_synthetic_minutiae(std::uint64_t finger_seed,
                                       std::uint64_t impression_seed,
                                       const SynthSpec& spec);

}  // namespace fpemb
