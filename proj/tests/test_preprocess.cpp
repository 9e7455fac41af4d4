#include <cmath>
#include <filesystem>
#include <functional>

#include "doctest.h"
#include "fpemb/common.hpp"
#include "fpemb/image.hpp"
#include "fpemb/ops.hpp"
#include "fpemb/preprocess.hpp"
#include "fpemb/rng.hpp"
#include "fpemb/synthetic.hpp"
#include "test_util.hpp"

namespace fs = std::filesystem;
using namespace fpemb;

namespace {

FingerprintImage random_image(int h, int w, std::uint64_t seed) {
  FingerprintImage img(h, w);
  Rng rng(seed);
  for (auto& p : img.pixels) p = rng.uniform();
  return img;
}

ErrorKind kind_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("expected an error");
  return ErrorKind::kContract;
}

}  // namespace

TEST_CASE("enhance none is the identity") {
  FingerprintImage img = random_image(48, 40, 1);
  FingerprintImage out = enhance(img, EnhanceMethod::kNone);
  CHECK(out.pixels == img.pixels);
}

TEST_CASE("local normalization maps constant blocks to mid-gray") {
  FingerprintImage img(32, 32, 0.83);
  FingerprintImage out = enhance(img, EnhanceMethod::kLocalNormalize, 16);
  for (double p : out.pixels) CHECK(p == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("local normalization stretches a checkerboard to full range") {
  FingerprintImage img(32, 32);
  for (int r = 0; r < 32; ++r)
    for (int c = 0; c < 32; ++c) img.at(r, c) = ((r + c) % 2 == 0) ? 0.4 : 0.6;
  FingerprintImage out = enhance(img, EnhanceMethod::kLocalNormalize, 16);
  double lo = 1.0, hi = 0.0;
  for (double p : out.pixels) {
    lo = std::min(lo, p);
    hi = std::max(hi, p);
  }
  // z-scores are exactly +-1, remapped to 0.5 +- 0.5 and clamped.
  CHECK(lo == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(hi == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("external enhancement loads the .enh sibling") {
  fs::path dir = fs::temp_directory_path() / "fpemb_test_enh";
  fs::remove_all(dir);
  fs::create_directories(dir);
  FingerprintImage img = random_image(40, 40, 2);
  write_pgm(img, (dir / "1_1.pgm").string());
  FingerprintImage enh(40, 40, 0.25);
  write_pgm(enh, (dir / "1_1.enh.pgm").string());

  FingerprintImage loaded = read_pgm((dir / "1_1.pgm").string());
  FingerprintImage out = enhance(loaded, EnhanceMethod::kExternal);
  for (double p : out.pixels)
    CHECK(p == doctest::Approx(std::round(0.25 * 255) / 255.0));
  CHECK(out.image_id == loaded.image_id);

  FingerprintImage pathless = img;
  pathless.path.clear();
  CHECK(kind_of([&] { enhance(pathless, EnhanceMethod::kExternal); }) ==
        ErrorKind::kInput);
}

TEST_CASE("enhance method names round-trip") {
  for (auto m : {EnhanceMethod::kNone, EnhanceMethod::kLocalNormalize,
                 EnhanceMethod::kExternal})
    CHECK(enhance_method_from_name(enhance_method_name(m)) == m);
  CHECK_THROWS_AS(enhance_method_from_name("sharpen"), Error);
}

TEST_CASE("resize to the same size is an exact identity") {
  FingerprintImage img = random_image(64, 64, 3);
  FingerprintImage out = resize_input(img, 64);
  CHECK(out.pixels == img.pixels);
}

TEST_CASE("square resize maps corners exactly (align-corners)") {
  FingerprintImage img = random_image(40, 40, 4);
  FingerprintImage out = resize_input(img, 64);
  REQUIRE(out.width == 64);
  CHECK(out.at(0, 0) == doctest::Approx(img.at(0, 0)).epsilon(1e-12));
  CHECK(out.at(0, 63) == doctest::Approx(img.at(0, 39)).epsilon(1e-12));
  CHECK(out.at(63, 0) == doctest::Approx(img.at(39, 0)).epsilon(1e-12));
  CHECK(out.at(63, 63) == doctest::Approx(img.at(39, 39)).epsilon(1e-12));
}

TEST_CASE("constant images stay constant through pad and resize") {
  FingerprintImage img(34, 40, 0.3);
  FingerprintImage out = resize_input(img, 64);
  for (double p : out.pixels) CHECK(p == doctest::Approx(0.3).epsilon(1e-9));
}

TEST_CASE("downscale of a big image keeps range and determinism") {
  FingerprintImage img = random_image(300, 300, 5);
  FingerprintImage a = resize_input(img, 256);
  FingerprintImage b = resize_input(img, 256);
  CHECK(a.pixels == b.pixels);
  for (double p : a.pixels) {
    CHECK(p >= 0.0);
    CHECK(p <= 1.0);
  }
  CHECK(kind_of([&] { resize_input(img, 16); }) == ErrorKind::kParameter);
}

TEST_CASE("minutia coordinates follow the pad-and-resize geometry") {
  MinutiaSet set;
  set.items.push_back({10.0, 20.0, 1.0, MinutiaKind::kEnding});
  // 34x40 image pads to a 40x40 square with top offset 3, then scales by
  // 63/39.
  MinutiaSet out = transform_minutiae_for_resize(set, 34, 40, 64);
  REQUIRE(out.items.size() == 1);
  CHECK(out.items[0].x == doctest::Approx(10.0 * 63.0 / 39.0).epsilon(1e-12));
  CHECK(out.items[0].y ==
        doctest::Approx((20.0 + 3.0) * 63.0 / 39.0).epsilon(1e-12));
  CHECK(out.items[0].theta == 1.0);

  // Square identity-size transform changes nothing.
  MinutiaSet same = transform_minutiae_for_resize(set, 64, 64, 64);
  CHECK(same.items[0].x == 10.0);
  CHECK(same.items[0].y == 20.0);

  // Points within the pixel-center range [0, w-1] x [0, h-1] land inside
  // the target range; the map is affine with align-corners endpoints.
  Rng rng(6);
  MinutiaSet many;
  for (int i = 0; i < 50; ++i)
    many.items.push_back({rng.uniform(0.0, 39.0), rng.uniform(0.0, 33.0),
                          0.0, MinutiaKind::kUnknown});
  MinutiaSet mapped = transform_minutiae_for_resize(many, 34, 40, 64);
  for (const Minutia& m : mapped.items) {
    CHECK(m.x >= 0.0);
    CHECK(m.x <= 63.0 + 1e-9);
    CHECK(m.y >= 0.0);
    CHECK(m.y <= 63.0 + 1e-9);
  }
}

TEST_CASE("zero-mean normalization really has zero mean") {
  FingerprintImage img = random_image(64, 64, 7);
  Tensor t = normalize_zero_mean(img);
  CHECK(std::abs(t.array().mean()) < 1e-12);
}

TEST_CASE("spectrum rejects non-zero-mean input and bad fractions") {
  FingerprintImage img(64, 64, 0.5);
  Tensor raw = image_to_tensor(img);
  CHECK(kind_of([&] { to_spectrum(raw, 0.5); }) == ErrorKind::kContract);

  Tensor zm = normalize_zero_mean(random_image(64, 64, 8));
  CHECK(kind_of([&] { to_spectrum(zm, 0.0); }) == ErrorKind::kParameter);
  CHECK(kind_of([&] { to_spectrum(zm, 1.5); }) == ErrorKind::kParameter);
  CHECK(kind_of([&] { to_spectrum(zm, 0.3); }) == ErrorKind::kParameter);
  // 63/64 would give an odd band.
  CHECK(kind_of([&] { to_spectrum(zm, 63.0 / 64.0); }) ==
        ErrorKind::kParameter);
}

TEST_CASE("fifty percent crop of a 256-square input is 128x128 twice") {
  Tensor zm = normalize_zero_mean(random_image(256, 256, 9));
  SpectrumPatch patch = to_spectrum(zm, 0.5);
  REQUIRE(patch.real.ndim() == 2);
  CHECK(patch.real.dim(0) == 128);
  CHECK(patch.real.dim(1) == 128);
  CHECK(patch.imag.dim(0) == 128);
  CHECK(patch.imag.dim(1) == 128);
}

TEST_CASE("DC bin vanishes on zero-mean input") {
  Tensor zm = normalize_zero_mean(random_image(128, 128, 10));
  SpectrumPatch patch = to_spectrum(zm, 0.5);
  const int bh = patch.real.dim(0), bw = patch.real.dim(1);
  const double dc = std::hypot(patch.real.at(bh / 2, bw / 2),
                               patch.imag.at(bh / 2, bw / 2));
  CHECK(dc < 1e-4 * 128.0 * 128.0);
  CHECK(dc < 1e-7);  // much tighter in practice: it is an exact zero sum
}

TEST_CASE("a pure cosine concentrates at its frequency bins") {
  const int n = 64;
  const int u0 = 5;
  const double amp = 0.4;
  Tensor x({n, n});
  for (int r = 0; r < n; ++r)
    for (int c = 0; c < n; ++c)
      x.at(r, c) = amp * std::cos(2.0 * M_PI * u0 * c / n);
  SpectrumPatch patch = to_spectrum(x, 0.5);
  const int bh = patch.real.dim(0), bw = patch.real.dim(1);
  // Positive and negative frequency bins carry amp*N^2/2 each, real-valued.
  CHECK(patch.real.at(bh / 2, bw / 2 + u0) ==
        doctest::Approx(amp * n * n / 2.0).epsilon(1e-9));
  CHECK(patch.real.at(bh / 2, bw / 2 - u0) ==
        doctest::Approx(amp * n * n / 2.0).epsilon(1e-9));
  CHECK(std::abs(patch.imag.at(bh / 2, bw / 2 + u0)) < 1e-6);
  // Everything else is numerically zero.
  double off_peak = 0.0;
  for (int i = 0; i < bh; ++i)
    for (int j = 0; j < bw; ++j) {
      if (i == bh / 2 && (j == bw / 2 + u0 || j == bw / 2 - u0)) continue;
      off_peak = std::max(off_peak, std::hypot(patch.real.at(i, j),
                                               patch.imag.at(i, j)));
    }
  CHECK(off_peak < 1e-6);
}

TEST_CASE("spectrum is linear") {
  Tensor a = normalize_zero_mean(random_image(64, 64, 11));
  Tensor b = normalize_zero_mean(random_image(64, 64, 12));
  Tensor sum({64, 64});
  sum.array() = a.array() + b.array();
  SpectrumPatch pa = to_spectrum(a, 0.5);
  SpectrumPatch pb = to_spectrum(b, 0.5);
  SpectrumPatch ps = to_spectrum(sum, 0.5);
  for (Eigen::Index i = 0; i < ps.real.size(); ++i) {
    CHECK(std::abs(ps.real[i] - (pa.real[i] + pb.real[i])) < 1e-6);
    CHECK(std::abs(ps.imag[i] - (pa.imag[i] + pb.imag[i])) < 1e-6);
  }
}

TEST_CASE("spectrum obeys conjugate symmetry") {
  Tensor zm = normalize_zero_mean(random_image(64, 64, 13));
  SpectrumPatch p = to_spectrum(zm, 0.5);
  const int bh = p.real.dim(0), bw = p.real.dim(1);
  for (int i = 1; i < bh; ++i)
    for (int j = 1; j < bw; ++j) {
      CHECK(p.real.at(i, j) ==
            doctest::Approx(p.real.at(bh - i, bw - j)).epsilon(1e-9));
      CHECK(p.imag.at(i, j) ==
            doctest::Approx(-p.imag.at(bh - i, bw - j)).epsilon(1e-9));
    }
}

TEST_CASE("ridge energy concentrates inside the half band") {
  SynthSpec spec;
  spec.side = 128;
  spec.freq_min = 0.08;
  spec.freq_max = 0.12;
  for (std::uint64_t seed : {21, 22, 23}) {
    auto [img, _] = generate_synthetic_fingerprint(seed, seed + 100, spec);
    Tensor zm = normalize_zero_mean(img);
    SpectrumPatch p = to_spectrum(zm, 0.5);
    double band_energy = 0.0;
    for (Eigen::Index i = 0; i < p.real.size(); ++i)
      band_energy += p.real[i] * p.real[i] + p.imag[i] * p.imag[i];
    // Parseval: total spectral energy = H*W * spatial energy.
    const double total = 128.0 * 128.0 * (zm.array() * zm.array()).sum();
    CHECK(band_energy >= 0.95 * total);
  }
}

TEST_CASE("synthetic ridge frequency shows up at the expected radius") {
  SynthSpec spec;
  spec.side = 256;
  spec.freq_min = 0.100;
  spec.freq_max = 0.101;
  spec.warp_amp = 1.0;  // gentle warps keep the spectral ring tight
  auto [img, _] = generate_synthetic_fingerprint(31, 131, spec);
  Tensor zm = normalize_zero_mean(img);
  SpectrumPatch p = to_spectrum(zm, 0.5);
  const int bh = p.real.dim(0), bw = p.real.dim(1);
  double best = -1.0;
  int bi = 0, bj = 0;
  for (int i = 0; i < bh; ++i)
    for (int j = 0; j < bw; ++j) {
      const double mag = std::hypot(p.real.at(i, j), p.imag.at(i, j));
      if (mag > best) {
        best = mag;
        bi = i;
        bj = j;
      }
    }
  const double radius = std::hypot(bi - bh / 2, bj - bw / 2);
  // 0.1 cycles/px at side 256 puts the carrier near radius 25.6.
  CHECK(radius > 19.0);
  CHECK(radius < 33.0);
}

TEST_CASE("elliptical mask zeroes the corners only") {
  Tensor zm = normalize_zero_mean(random_image(64, 64, 14));
  SpectrumPatch full = to_spectrum(zm, 0.5, false);
  SpectrumPatch masked = to_spectrum(zm, 0.5, true);
  const int bh = full.real.dim(0), bw = full.real.dim(1);
  CHECK(masked.real.at(0, 0) == 0.0);
  CHECK(masked.imag.at(0, 0) == 0.0);
  CHECK(masked.real.at(bh - 1, bw - 1) == 0.0);
  // The center row/column inside the ellipse is untouched.
  CHECK(masked.real.at(bh / 2, bw / 2 + 3) ==
        doctest::Approx(full.real.at(bh / 2, bw / 2 + 3)));
  int zeroed = 0;
  for (int i = 0; i < bh; ++i)
    for (int j = 0; j < bw; ++j)
      if (masked.real.at(i, j) == 0.0 && masked.imag.at(i, j) == 0.0 &&
          (full.real.at(i, j) != 0.0 || full.imag.at(i, j) != 0.0))
        ++zeroed;
  // Roughly 1 - pi/4 of the patch lies outside the inscribed ellipse.
  CHECK(zeroed > static_cast<int>(0.15 * bh * bw));
  CHECK(zeroed < static_cast<int>(0.30 * bh * bw));
}

TEST_CASE("tape spectrum op agrees with the preprocessing spectrum") {
  FingerprintImage img = random_image(64, 64, 15);
  Tensor zm = normalize_zero_mean(img);
  SpectrumPatch p = to_spectrum(zm, 0.5);

  Tensor batch({1, 1, 64, 64});
  for (Eigen::Index i = 0; i < zm.size(); ++i) batch[i] = zm[i];
  Var x = ops::constant(std::move(batch));
  Var s = ops::spectrum_patch(x, 32, 32);
  const Tensor& sv = s.value();
  REQUIRE(sv.ndim() == 4);
  CHECK(sv.dim(1) == 2);
  for (int i = 0; i < 32; ++i)
    for (int j = 0; j < 32; ++j) {
      CHECK(sv.at(0, 0, i, j) == doctest::Approx(p.real.at(i, j)).epsilon(1e-9));
      CHECK(sv.at(0, 1, i, j) == doctest::Approx(p.imag.at(i, j)).epsilon(1e-9));
    }
}
