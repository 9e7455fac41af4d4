#include <cmath>
#include <functional>

#include "doctest.h"
#include "fpemb/common.hpp"
#include "fpemb/minutia_map.hpp"
#include "fpemb/ops.hpp"
#include "fpemb/rng.hpp"
#include "test_util.hpp"

using namespace fpemb;

namespace {

// Independent scalar evaluation of the map formula, kept deliberately naive.
double map_value_oracle(const MinutiaSet& set, int image_side, int map_side,
                        int channels, int k, int i, int j,
                        double sigma_s = 4.0, double sigma_a = M_PI / 6.0) {
  const double scale = static_cast<double>(map_side) / image_side;
  double sum = 0.0;
  for (const Minutia& m : set.items) {
    const double dx = j - m.x * scale;
    const double dy = i - m.y * scale;
    double da = m.theta - 2.0 * M_PI * k / channels;
    while (da > M_PI) da -= 2.0 * M_PI;
    while (da <= -M_PI) da += 2.0 * M_PI;
    sum += std::exp(-(dx * dx + dy * dy) / (2.0 * sigma_s * sigma_s)) *
           std::exp(-(da * da) / (2.0 * sigma_a * sigma_a));
  }
  return sum;
}

MinutiaSet one(double x, double y, double theta) {
  MinutiaSet set;
  set.items.push_back({x, y, theta, MinutiaKind::kEnding});
  return set;
}

}  // namespace

TEST_CASE("empty minutia set gives the zero map") {
  MinutiaMap map = build_minutia_map(MinutiaSet{}, 256, 128, 6);
  REQUIRE(map.values.ndim() == 3);
  CHECK(map.values.dim(0) == 6);
  CHECK(map.values.dim(1) == 128);
  CHECK(map.values.dim(2) == 128);
  CHECK(map.scale == 0.5);
  for (Eigen::Index i = 0; i < map.values.size(); ++i)
    CHECK(map.values[i] == 0.0);
}

TEST_CASE("centered minutia matches the closed-form Gaussian product") {
  const MinutiaSet set = one(100.0, 60.0, 0.7);
  MinutiaMap map = build_minutia_map(set, 256, 128, 6);
  // The peak cell is at scaled coordinates (x*0.5, y*0.5) = (50, 30).
  for (int k = 0; k < 6; ++k) {
    const double expect = map_value_oracle(set, 256, 128, 6, k, 30, 50);
    CHECK(map.values.at(k, 30, 50) == doctest::Approx(expect).epsilon(1e-6));
  }
  // Off-peak cells too, including the spatial decay one cell away.
  CHECK(map.values.at(0, 30, 51) ==
        doctest::Approx(map_value_oracle(set, 256, 128, 6, 0, 30, 51))
            .epsilon(1e-6));
  CHECK(map.values.at(3, 41, 47) ==
        doctest::Approx(map_value_oracle(set, 256, 128, 6, 3, 41, 47))
            .epsilon(1e-6));
  // The exact-cell spatial factor is 1, so the peak value is the angular
  // factor alone.
  const double da = 0.7 - 2.0 * M_PI * 1.0 / 6.0;
  CHECK(map.values.at(1, 30, 50) ==
        doctest::Approx(std::exp(-da * da / (2.0 * std::pow(M_PI / 6.0, 2))))
            .epsilon(1e-9));
}

TEST_CASE("fractional positions keep the full closed form") {
  const MinutiaSet set = one(101.3, 59.1, 4.2);
  MinutiaMap map = build_minutia_map(set, 256, 128, 6);
  for (int k = 0; k < 6; ++k)
    for (int i = 28; i <= 32; ++i)
      for (int j = 48; j <= 54; ++j)
        CHECK(map.values.at(k, i, j) ==
              doctest::Approx(map_value_oracle(set, 256, 128, 6, k, i, j))
                  .epsilon(1e-6));
}

TEST_CASE("map is additive over minutiae") {
  MinutiaSet a = one(40.0, 50.0, 1.0);
  MinutiaSet b = one(180.0, 200.0, 3.5);
  MinutiaSet both = a;
  both.items.push_back(b.items[0]);
  MinutiaMap ma = build_minutia_map(a, 256);
  MinutiaMap mb = build_minutia_map(b, 256);
  MinutiaMap mboth = build_minutia_map(both, 256);
  for (Eigen::Index i = 0; i < mboth.values.size(); ++i)
    CHECK(mboth.values[i] ==
          doctest::Approx(ma.values[i] + mb.values[i]).epsilon(1e-12));

  // A duplicated minutia doubles its contribution.
  MinutiaSet twice = a;
  twice.items.push_back(a.items[0]);
  MinutiaMap mtwice = build_minutia_map(twice, 256);
  for (Eigen::Index i = 0; i < mtwice.values.size(); ++i)
    CHECK(mtwice.values[i] == doctest::Approx(2.0 * ma.values[i]));
}

TEST_CASE("translation equivariance within one map cell") {
  Rng rng(99);
  for (int trial = 0; trial < 20; ++trial) {
    const double x = rng.uniform(60.0, 180.0);
    const double y = rng.uniform(60.0, 180.0);
    const double theta = rng.uniform(0.0, 2.0 * M_PI);
    const double sx = rng.uniform(-30.0, 30.0);
    const double sy = rng.uniform(-30.0, 30.0);
    MinutiaMap before = build_minutia_map(one(x, y, theta), 256);
    MinutiaMap after = build_minutia_map(one(x + sx, y + sy, theta), 256);

    auto argmax = [](const Tensor& v) {
      int bi = 0, bj = 0;
      double best = -1.0;
      for (int i = 0; i < v.dim(1); ++i)
        for (int j = 0; j < v.dim(2); ++j) {
          double m = 0.0;
          for (int k = 0; k < v.dim(0); ++k)
            m = std::max(m, v.at(k, i, j));
          if (m > best) {
            best = m;
            bi = i;
            bj = j;
          }
        }
      return std::pair<int, int>{bi, bj};
    };
    auto [bi, bj] = argmax(before.values);
    auto [ai, aj] = argmax(after.values);
    CHECK(std::abs(ai - (bi + sy * 0.5)) <= 1.0);
    CHECK(std::abs(aj - (bj + sx * 0.5)) <= 1.0);
  }
}

TEST_CASE("angular channels order by wrapped distance") {
  MinutiaMap map = build_minutia_map(one(128.0, 128.0, 0.0), 256);
  const double v0 = map.values.at(0, 64, 64);
  const double v1 = map.values.at(1, 64, 64);
  const double v2 = map.values.at(2, 64, 64);
  const double v3 = map.values.at(3, 64, 64);
  const double v5 = map.values.at(5, 64, 64);
  CHECK(v0 > v1);
  CHECK(v1 > v2);
  CHECK(v2 > v3);
  CHECK(v1 == doctest::Approx(v5).epsilon(1e-12));  // wrap symmetry
}

TEST_CASE("values decay monotonically away from an isolated peak") {
  MinutiaMap map = build_minutia_map(one(128.0, 128.0, 0.0), 256);
  for (int j = 64; j < 80; ++j)
    CHECK(map.values.at(0, 64, j) > map.values.at(0, 64, j + 1));
}

TEST_CASE("out-of-image minutiae and bad geometry are rejected") {
  CHECK_THROWS_AS(build_minutia_map(one(-1.0, 10.0, 0.0), 256), Error);
  CHECK_THROWS_AS(build_minutia_map(one(10.0, 300.0, 0.0), 256), Error);
  try {
    build_minutia_map(one(10.0, 10.0, 0.0), 100, 128);
    FAIL("expected geometry error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kParameter);
  }
}

TEST_CASE("attention mask sums to one and ignores map scaling") {
  MinutiaSet set;
  set.items.push_back({40.0, 50.0, 1.0, MinutiaKind::kEnding});
  set.items.push_back({200.0, 90.0, 2.0, MinutiaKind::kBifurcation});
  MinutiaMap map = build_minutia_map(set, 256);
  Tensor mask = attention_mask_from_map(map.values, 16, 16);
  REQUIRE(mask.ndim() == 2);
  CHECK(mask.dim(0) == 16);
  CHECK(mask.array().sum() == doctest::Approx(1.0).epsilon(1e-12));
  for (Eigen::Index i = 0; i < mask.size(); ++i) CHECK(mask[i] >= 0.0);

  Tensor doubled = map.values;
  doubled.array() *= 7.5;
  Tensor mask2 = attention_mask_from_map(doubled, 16, 16);
  for (Eigen::Index i = 0; i < mask.size(); ++i)
    CHECK(mask2[i] == doctest::Approx(mask[i]).epsilon(1e-12));
}

TEST_CASE("all-zero maps give the uniform mask") {
  Tensor zeros({6, 32, 32});
  Tensor mask = attention_mask_from_map(zeros, 8, 8);
  for (Eigen::Index i = 0; i < mask.size(); ++i)
    CHECK(mask[i] == doctest::Approx(1.0 / 64.0).epsilon(1e-12));
}

TEST_CASE("attention mask mirrors the differentiable op chain") {
  Rng rng(7);
  Tensor map = test::random_tensor({6, 40, 40}, rng, 0.0, 2.0);
  Tensor mask = attention_mask_from_map(map, 16, 16);

  Tensor batch({1, 6, 40, 40});
  for (Eigen::Index i = 0; i < map.size(); ++i) batch[i] = map[i];
  Var x = ops::constant(std::move(batch));
  Var tape_mask = ops::sum_normalize_mask(
      ops::relu(ops::resize_bilinear(ops::channel_max(x), 16, 16)));
  for (int i = 0; i < 16; ++i)
    for (int j = 0; j < 16; ++j)
      CHECK(mask.at(i, j) ==
            doctest::Approx(tape_mask.value().at(0, 0, i, j)).epsilon(1e-12));
}

TEST_CASE("peak picking recovers isolated minutiae") {
  MinutiaSet set;
  set.items.push_back({60.0, 60.0, 0.1, MinutiaKind::kEnding});
  set.items.push_back({180.0, 72.0, 2.0, MinutiaKind::kEnding});
  set.items.push_back({120.0, 200.0, 4.5, MinutiaKind::kEnding});
  MinutiaMap map = build_minutia_map(set, 256);
  std::vector<Minutia> peaks = peaks_from_map(map, 0.5);
  REQUIRE(peaks.size() == 3);
  for (const Minutia& truth : set.items) {
    double best = 1e9;
    double best_dtheta = 1e9;
    for (const Minutia& p : peaks) {
      const double d = std::hypot(p.x - truth.x, p.y - truth.y);
      if (d < best) {
        best = d;
        double da = std::abs(p.theta - truth.theta);
        best_dtheta = std::min(da, 2.0 * M_PI - da);
      }
    }
    CHECK(best <= 2.0);  // map cells are 2 px, peak sits on the grid
    CHECK(best_dtheta <= M_PI / 6.0 + 1e-9);  // channel quantization
  }
}
