#include "fpemb/synthetic.hpp"

#include <cmath>
#include <vector>

#include "fpemb/rng.hpp"

namespace fpemb {
namespace {

struct WarpTerm {
  double amp, ax, ay, phase;  // amp*sin(2*pi*(ax*x + ay*y)/side + phase)
};

struct PatternMinutia {
  double x, y;  // pattern coordinates
  MinutiaKind kind;
};

struct FingerPattern {
  double freq, alpha;
  std::vector<WarpTerm> warps;
  int charge;          // core singularity winding: -1, 0, +1
  double vx, vy;       // singularity position
  std::vector<PatternMinutia> minutiae;
};

struct Pose {
  double delta;    // rigid rotation
  double tx, ty;   // translation in pattern space
  double phase;    // ridge-phase offset
  double gain;     // amplitude gain <= 1
};

FingerPattern derive_finger(std::uint64_t finger_seed, const SynthSpec& spec) {
  Rng rng(finger_seed);
  FingerPattern p;
  p.freq = rng.uniform(spec.freq_min, spec.freq_max);
  p.alpha = rng.uniform(0.0, M_PI);
  p.warps.reserve(spec.warp_terms);
  for (int k = 0; k < spec.warp_terms; ++k) {
    WarpTerm w;
    w.amp = rng.uniform(0.5, 1.0) * spec.warp_amp;
    const double cycles = rng.uniform(0.5, 1.5);
    const double dir = rng.uniform(0.0, 2.0 * M_PI);
    w.ax = cycles * std::cos(dir);
    w.ay = cycles * std::sin(dir);
    w.phase = rng.uniform(0.0, 2.0 * M_PI);
    p.warps.push_back(w);
  }
  const double c = (spec.side - 1) * 0.5;
  p.charge = spec.allow_core ? rng.uniform_int(-1, 1) : 0;
  p.vx = c + rng.uniform(-spec.side / 6.0, spec.side / 6.0);
  p.vy = c + rng.uniform(-spec.side / 6.0, spec.side / 6.0);
  const double place_radius = 0.35 * spec.side;
  const double min_sep = 12.0;
  for (int t = 0; t < spec.minutia_count; ++t) {
    PatternMinutia m{0.0, 0.0, MinutiaKind::kEnding};
    bool placed = false;
    for (int attempt = 0; attempt < 1000 && !placed; ++attempt) {
      const double x = c + rng.uniform(-place_radius, place_radius);
      const double y = c + rng.uniform(-place_radius, place_radius);
      const double dx = x - c, dy = y - c;
      if (dx * dx + dy * dy > place_radius * place_radius) continue;
      bool clear = true;
      for (const auto& prev : p.minutiae) {
        const double px = x - prev.x, py = y - prev.y;
        if (px * px + py * py < min_sep * min_sep) {
          clear = false;
          break;
        }
      }
      if (!clear) continue;
      m.x = x;
      m.y = y;
      placed = true;
    }
    if (!placed) {  // dense request, accept overlap rather than loop forever
      m.x = c + rng.uniform(-place_radius, place_radius);
      m.y = c + rng.uniform(-place_radius, place_radius);
    }
    m.kind = rng.bernoulli(0.5) ? MinutiaKind::kEnding
                                : MinutiaKind::kBifurcation;
    p.minutiae.push_back(m);
  }
  return p;
}

Pose derive_pose(std::uint64_t impression_seed, const SynthSpec& spec) {
  Rng rng(impression_seed);
  Pose pose;
  pose.delta = rng.uniform(-spec.jitter_rotation, spec.jitter_rotation);
  pose.tx = rng.uniform(-spec.jitter_translation, spec.jitter_translation);
  pose.ty = rng.uniform(-spec.jitter_translation, spec.jitter_translation);
  pose.phase = rng.uniform(0.0, spec.jitter_phase);
  pose.gain = rng.uniform(1.0 - spec.contrast_jitter, 1.0);
  return pose;
}

double phase_at(const FingerPattern& p, const SynthSpec& spec, double x,
                double y) {
  double phi = 2.0 * M_PI * p.freq *
               (x * std::cos(p.alpha) + y * std::sin(p.alpha));
  for (const WarpTerm& w : p.warps)
    phi += w.amp *
           std::sin(2.0 * M_PI * (w.ax * x + w.ay * y) / spec.side + w.phase);
  if (p.charge != 0) phi += p.charge * std::atan2(y - p.vy, x - p.vx);
  return phi;
}

// Analytic phase gradient; ridge tangent is perpendicular to it.
void phase_gradient(const FingerPattern& p, const SynthSpec& spec, double x,
                    double y, double* gx, double* gy) {
  *gx = 2.0 * M_PI * p.freq * std::cos(p.alpha);
  *gy = 2.0 * M_PI * p.freq * std::sin(p.alpha);
  for (const WarpTerm& w : p.warps) {
    const double arg = 2.0 * M_PI * (w.ax * x + w.ay * y) / spec.side + w.phase;
    const double d = w.amp * std::cos(arg) * 2.0 * M_PI / spec.side;
    *gx += d * w.ax;
    *gy += d * w.ay;
  }
  if (p.charge != 0) {
    const double dx = x - p.vx, dy = y - p.vy;
    const double r2 = std::max(dx * dx + dy * dy, 1e-6);
    *gx += p.charge * (-dy / r2);
    *gy += p.charge * (dx / r2);
  }
}

MinutiaSet impression_minutiae(const FingerPattern& p, const Pose& pose,
                               const SynthSpec& spec) {
  MinutiaSet set;
  const double c = (spec.side - 1) * 0.5;
  const double cd = std::cos(pose.delta), sd = std::sin(pose.delta);
  for (const PatternMinutia& m : p.minutiae) {
    double gx, gy;
    phase_gradient(p, spec, m.x, m.y, &gx, &gy);
    const double theta_pattern = std::atan2(gy, gx) + M_PI / 2.0;
    // Image point q satisfies pattern(x(q)) = m, i.e. q = c + R(-delta)(m-c-t).
    const double mx = m.x - c - pose.tx, my = m.y - c - pose.ty;
    const double ix = c + cd * mx + sd * my;
    const double iy = c - sd * mx + cd * my;
    if (ix < 0.0 || ix >= spec.side || iy < 0.0 || iy >= spec.side) continue;
    Minutia out;
    out.x = ix;
    out.y = iy;
    out.theta = normalize_angle(theta_pattern - pose.delta);
    out.kind = m.kind;
    set.items.push_back(out);
  }
  return set;
}

}  // namespace

void validate_synth_spec(const SynthSpec& spec) {
  FPEMB_CHECK(spec.side > 0, ErrorKind::kParameter,
              "synthesis size must be positive");
  FPEMB_CHECK(spec.freq_min > 0.0 && spec.freq_max >= spec.freq_min,
              ErrorKind::kParameter, "synthesis frequency band must be positive");
  FPEMB_CHECK(spec.minutia_count >= 0, ErrorKind::kParameter,
              "minutia count must be nonnegative");
  FPEMB_CHECK(spec.warp_terms >= 0 && spec.notch_sigma > 0.0,
              ErrorKind::kParameter, "bad synthesis warp/notch parameters");
}

std::pair<FingerprintImage, MinutiaSet> generate_synthetic_fingerprint(
    std::uint64_t finger_seed, std::uint64_t impression_seed,
    const SynthSpec& spec) {
  validate_synth_spec(spec);
  const FingerPattern pattern = derive_finger(finger_seed, spec);
  const Pose pose = derive_pose(impression_seed, spec);
  const int side = spec.side;
  const double c = (side - 1) * 0.5;
  const double cd = std::cos(pose.delta), sd = std::sin(pose.delta);
  const double sigma2 = 2.0 * spec.notch_sigma * spec.notch_sigma;
  const double cutoff2 = 16.0 * spec.notch_sigma * spec.notch_sigma;
  FingerprintImage img(side, side);
  for (int r = 0; r < side; ++r) {
    for (int col = 0; col < side; ++col) {
      const double px = col - c, py = r - c;
      const double qx = c + cd * px - sd * py + pose.tx;
      const double qy = c + sd * px + cd * py + pose.ty;
      double amp = 1.0;
      for (const PatternMinutia& m : pattern.minutiae) {
        const double dx = qx - m.x, dy = qy - m.y;
        const double d2 = dx * dx + dy * dy;
        if (d2 < cutoff2) amp *= 1.0 - 0.95 * std::exp(-d2 / sigma2);
      }
      const double phi = phase_at(pattern, spec, qx, qy) + pose.phase;
      img.at(r, col) = 0.5 + 0.5 * pose.gain * amp * std::cos(phi);
    }
  }
  return {std::move(img), impression_minutiae(pattern, pose, spec)};
}

std::pair<FingerprintImage, MinutiaSet> generate_synthetic_fingerprint(
    std::uint64_t seed, const SynthSpec& spec) {
  return generate_synthetic_fingerprint(seed, Rng::mix(seed, 1), spec);
}

MinutiaSet generate_synthetic_minutiae(std::uint64_t finger_seed,
                                       std::uint64_t impression_seed,
                                       const SynthSpec& spec) {
  validate_synth_spec(spec);
  const FingerPattern pattern = derive_finger(finger_seed, spec);
  const Pose pose = derive_pose(impression_seed, spec);
  return impression_minutiae(pattern, pose, spec);
}

}  // namespace fpemb
