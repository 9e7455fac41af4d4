#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>

#include "doctest.h"
#include "fpemb/common.hpp"
#include "fpemb/dataset.hpp"
#include "fpemb/image.hpp"
#include "fpemb/minutiae.hpp"
#include "fpemb/rng.hpp"
#include "fpemb/synthetic.hpp"
#include "test_util.hpp"

namespace fs = std::filesystem;
using namespace fpemb;

namespace {

fs::path fresh_dir(const std::string& name) {
  fs::path dir = fs::temp_directory_path() / ("fpemb_test_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

void touch_pgm(const fs::path& path, int side = 40) {
  FingerprintImage img(side, side, 0.5);
  img.at(0, 0) = 1.0;
  write_pgm(img, path.string());
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

TEST_CASE("pgm round trip preserves 8-bit quantized pixels") {
  fs::path dir = fresh_dir("pgm");
  FingerprintImage img(13, 17);
  Rng rng(5);
  for (auto& p : img.pixels)
    p = static_cast<double>(rng.uniform_int(0, 255)) / 255.0;
  const std::string path = (dir / "img.pgm").string();
  write_pgm(img, path);
  FingerprintImage back = read_pgm(path);
  REQUIRE(back.width == 17);
  REQUIRE(back.height == 13);
  for (std::size_t i = 0; i < img.pixels.size(); ++i)
    CHECK(back.pixels[i] == doctest::Approx(img.pixels[i]).epsilon(1e-12));
}

TEST_CASE("pgm writer clamps and quantizes") {
  fs::path dir = fresh_dir("pgmq");
  FingerprintImage img(1, 3);
  img.pixels = {-0.2, 0.5, 1.7};
  const std::string path = (dir / "q.pgm").string();
  write_pgm(img, path);
  FingerprintImage back = read_pgm(path);
  CHECK(back.pixels[0] == 0.0);
  CHECK(back.pixels[1] == doctest::Approx(std::round(0.5 * 255) / 255.0));
  CHECK(back.pixels[2] == 1.0);
}

TEST_CASE("pgm reader rejects wrong magic and missing file") {
  fs::path dir = fresh_dir("pgmbad");
  std::ofstream((dir / "bad.pgm")) << "P6\n2 2\n255\nabcd";
  CHECK(kind_of([&] { read_pgm((dir / "bad.pgm").string()); }) ==
        ErrorKind::kFormat);
  CHECK(kind_of([&] { read_pgm((dir / "absent.pgm").string()); }) ==
        ErrorKind::kInput);
}

TEST_CASE("minutiae text parsing") {
  MinutiaSet set = parse_minutiae_text(
      "# header comment\n"
      "10.5 20.25 1.5 ending\n"
      "3 4 -1.5708 bifurcation\n"
      "\n"
      "7 8 0 unknown\n",
      "ref");
  REQUIRE(set.items.size() == 3);
  CHECK(set.image_ref == "ref");
  CHECK(set.items[0].x == 10.5);
  CHECK(set.items[0].y == 20.25);
  CHECK(set.items[0].theta == 1.5);
  CHECK(set.items[0].kind == MinutiaKind::kEnding);
  // Negative angles wrap into [0, 2*pi).
  CHECK(set.items[1].theta ==
        doctest::Approx(2.0 * M_PI - 1.5708).epsilon(1e-12));
  CHECK(set.items[1].kind == MinutiaKind::kBifurcation);
  CHECK(set.items[2].kind == MinutiaKind::kUnknown);
}

TEST_CASE("minutiae parse errors carry the line number") {
  try {
    parse_minutiae_text("1 2 3 ending\nnot numbers here\n", "ref");
    FAIL("expected parse failure");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kFormat);
    CHECK(std::string(e.what()).find("line 2") != std::string::npos);
  }
  CHECK(kind_of([] { parse_minutiae_text("1 2\n", "r"); }) ==
        ErrorKind::kFormat);
  CHECK(kind_of([] { parse_minutiae_text("1 2 3 spiral\n", "r"); }) ==
        ErrorKind::kFormat);
}

TEST_CASE("minutiae write then parse is an identity") {
  fs::path dir = fresh_dir("min");
  MinutiaSet set;
  set.image_ref = "x";
  set.items.push_back({12.125, 30.5, 1.25, MinutiaKind::kEnding});
  set.items.push_back({1.0, 2.0, 6.0, MinutiaKind::kBifurcation});
  const std::string path = (dir / "a.min").string();
  write_minutiae_file(set, path);
  MinutiaSet back = parse_minutiae_file(path);
  REQUIRE(back.items.size() == 2);
  for (std::size_t i = 0; i < 2; ++i) {
    CHECK(back.items[i].x == doctest::Approx(set.items[i].x).epsilon(1e-12));
    CHECK(back.items[i].y == doctest::Approx(set.items[i].y).epsilon(1e-12));
    CHECK(back.items[i].theta ==
          doctest::Approx(set.items[i].theta).epsilon(1e-12));
    CHECK(back.items[i].kind == set.items[i].kind);
  }
}

TEST_CASE("normalize_angle wraps into [0, 2*pi)") {
  CHECK(normalize_angle(0.0) == 0.0);
  CHECK(normalize_angle(2.0 * M_PI) == doctest::Approx(0.0));
  CHECK(normalize_angle(-0.5) == doctest::Approx(2.0 * M_PI - 0.5));
  CHECK(normalize_angle(7.0) == doctest::Approx(7.0 - 2.0 * M_PI));
  for (double a : {-100.0, -3.0, 0.1, 9.99, 1000.0}) {
    const double w = normalize_angle(a);
    CHECK(w >= 0.0);
    CHECK(w < 2.0 * M_PI);
    CHECK(std::abs(std::sin(w) - std::sin(a)) < 1e-9);
    CHECK(std::abs(std::cos(w) - std::cos(a)) < 1e-9);
  }
}

TEST_CASE("synthetic generation is deterministic in its seeds") {
  SynthSpec spec;
  spec.side = 96;
  auto [img1, min1] = generate_synthetic_fingerprint(11, 22, spec);
  auto [img2, min2] = generate_synthetic_fingerprint(11, 22, spec);
  CHECK(img1.pixels == img2.pixels);
  REQUIRE(min1.items.size() == min2.items.size());
  for (std::size_t i = 0; i < min1.items.size(); ++i) {
    CHECK(min1.items[i].x == min2.items[i].x);
    CHECK(min1.items[i].theta == min2.items[i].theta);
  }
  auto [img3, _] = generate_synthetic_fingerprint(11, 23, spec);
  CHECK(img1.pixels != img3.pixels);  // same finger, new pose
  auto [img4, _2] = generate_synthetic_fingerprint(12, 22, spec);
  CHECK(img1.pixels != img4.pixels);  // new finger
}

TEST_CASE("synthetic images are valid rasters with ridge contrast") {
  SynthSpec spec;
  spec.side = 128;
  auto [img, minutiae] = generate_synthetic_fingerprint(3, 7, spec);
  REQUIRE(img.width == 128);
  REQUIRE(img.height == 128);
  double lo = 1e9, hi = -1e9, sum = 0.0, sum2 = 0.0;
  for (double p : img.pixels) {
    lo = std::min(lo, p);
    hi = std::max(hi, p);
    sum += p;
    sum2 += p * p;
  }
  const double n = static_cast<double>(img.pixels.size());
  const double mean = sum / n;
  const double stddev = std::sqrt(sum2 / n - mean * mean);
  CHECK(lo >= 0.0);
  CHECK(hi <= 1.0);
  CHECK(mean == doctest::Approx(0.5).epsilon(0.15));
  CHECK(stddev > 0.1);  // ridges, not a flat field
  CHECK(!minutiae.items.empty());
}

TEST_CASE("synthetic minutiae count matches the configured count") {
  SynthSpec spec;
  spec.side = 128;
  spec.minutia_count = 6;
  spec.jitter_rotation = 0.0;
  spec.jitter_translation = 0.0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    MinutiaSet set = generate_synthetic_minutiae(seed, Rng::mix(seed, 1), spec);
    CHECK(set.items.size() == 6);
    for (const Minutia& m : set.items) {
      CHECK(m.x >= 0.0);
      CHECK(m.x < 128.0);
      CHECK(m.y >= 0.0);
      CHECK(m.y < 128.0);
      CHECK(m.theta >= 0.0);
      CHECK(m.theta < 2.0 * M_PI);
    }
  }
}

TEST_CASE("synthetic minutiae separation holds in the pattern frame") {
  SynthSpec spec;
  spec.side = 200;
  spec.minutia_count = 10;
  spec.jitter_rotation = 0.0;
  spec.jitter_translation = 0.0;
  MinutiaSet set = generate_synthetic_minutiae(42, 4242, spec);
  REQUIRE(set.items.size() == 10);
  for (std::size_t i = 0; i < set.items.size(); ++i)
    for (std::size_t j = i + 1; j < set.items.size(); ++j) {
      const double dx = set.items[i].x - set.items[j].x;
      const double dy = set.items[i].y - set.items[j].y;
      CHECK(std::sqrt(dx * dx + dy * dy) >= 12.0 - 1e-9);
    }
}

TEST_CASE("generator minutiae agree with the rendered raster") {
  // At each reported minutia the amplitude notch suppresses ridge contrast:
  // the local intensity range around the minutia stays closer to mid-gray
  // than the global ridge swing.
  SynthSpec spec;
  spec.side = 160;
  spec.minutia_count = 5;
  spec.jitter_rotation = 0.0;
  spec.jitter_translation = 0.0;
  spec.contrast_jitter = 0.0;
  auto [img, minutiae] = generate_synthetic_fingerprint(9, 91, spec);
  for (const Minutia& m : minutiae.items) {
    const int cx = static_cast<int>(std::lround(m.x));
    const int cy = static_cast<int>(std::lround(m.y));
    if (cx < 1 || cy < 1 || cx > 158 || cy > 158) continue;
    double local = 0.0;
    for (int dy = -1; dy <= 1; ++dy)
      for (int dx = -1; dx <= 1; ++dx)
        local = std::max(local, std::abs(img.at(cy + dy, cx + dx) - 0.5));
    CHECK(local < 0.45);  // full ridge swing is 0.5
  }
}

TEST_CASE("flat layout indexes stems and classes") {
  fs::path dir = fresh_dir("flat");
  touch_pgm(dir / "a_1.pgm");
  touch_pgm(dir / "a_2.pgm");
  touch_pgm(dir / "b_1.pgm");
  std::ofstream(dir / "b_1.min") << "1 2 0.5 ending\n";
  std::ofstream(dir / "notes.txt") << "ignored\n";
  touch_pgm(dir / "weird.pgm");          // no underscore: skipped
  touch_pgm(dir / "has.dot_1.pgm");      // dotted stem: skipped

  DatasetIndex index = load_dataset(dir.string(), DatasetLayout::kFlat);
  REQUIRE(index.records.size() == 3);
  CHECK(index.class_count == 2);
  CHECK(index.records[0].label == "a");
  CHECK(index.records[0].finger_id == 0);
  CHECK(index.records[0].impression_id == 1);
  CHECK(index.records[1].impression_id == 2);
  CHECK(index.records[2].label == "b");
  CHECK(index.records[2].finger_id == 1);
  CHECK(!index.records[2].minutiae_path.empty());
  CHECK(index.records[0].minutiae_path.empty());
  const std::string tag = index.records[0].source_tag;
  CHECK(index.records[0].image_id == tag + "/a_1");
}

TEST_CASE("numeric labels sort numerically, not lexicographically") {
  fs::path dir = fresh_dir("numeric");
  touch_pgm(dir / "10_1.pgm");
  touch_pgm(dir / "2_1.pgm");
  DatasetIndex index = load_dataset(dir.string(), DatasetLayout::kFvc);
  REQUIRE(index.records.size() == 2);
  CHECK(index.records[0].label == "2");
  CHECK(index.records[0].finger_id == 0);
  CHECK(index.records[1].label == "10");
  CHECK(index.records[1].finger_id == 1);
}

TEST_CASE("duplicate finger/impression pairs are rejected") {
  fs::path dir = fresh_dir("dup");
  touch_pgm(dir / "3_7.pgm");
  touch_pgm(dir / "3_07.pgm");  // same finger 3, same impression 7
  CHECK(kind_of([&] { load_dataset(dir.string(), DatasetLayout::kFlat); }) ==
        ErrorKind::kFormat);
}

TEST_CASE("empty directory raises the empty-dataset error") {
  fs::path dir = fresh_dir("empty");
  std::ofstream(dir / "readme.md") << "nothing here\n";
  CHECK(kind_of([&] { load_dataset(dir.string(), DatasetLayout::kFlat); }) ==
        ErrorKind::kEmptyDataset);
  CHECK(kind_of([&] {
          load_dataset((dir / "missing").string(), DatasetLayout::kFlat);
        }) == ErrorKind::kInput);
}

TEST_CASE("molf layout shares the label space across databases") {
  fs::path dir = fresh_dir("molf");
  fs::create_directories(dir / "DB1");
  fs::create_directories(dir / "DB2");
  touch_pgm(dir / "DB1" / "1_1.pgm");
  touch_pgm(dir / "DB1" / "2_1.pgm");
  touch_pgm(dir / "DB2" / "1_1.pgm");
  touch_pgm(dir / "DB2" / "2_2.pgm");
  DatasetIndex index = load_dataset(dir.string(), DatasetLayout::kMolf);
  REQUIRE(index.records.size() == 4);
  CHECK(index.class_count == 2);  // fingers 1 and 2 shared across DBs
  std::set<std::string> tags;
  for (const auto& rec : index.records) tags.insert(rec.source_tag);
  CHECK(tags == std::set<std::string>{"DB1", "DB2"});
  // Same finger+impression in different DBs is fine.
  CHECK(index.records[0].finger_id == index.records[1].finger_id);
}

TEST_CASE("synthetic index wires seeds and ids") {
  SynthSpec spec;
  spec.side = 64;
  DatasetIndex index = make_synthetic_index(3, 2, 77, spec);
  REQUIRE(index.records.size() == 6);
  CHECK(index.class_count == 3);
  CHECK(index.records[0].image_id == "synthetic/f1_i1");
  CHECK(index.records[5].image_id == "synthetic/f3_i2");
  CHECK(index.records[0].finger_seed == Rng::mix(77, 1));
  CHECK(index.records[0].impression_seed ==
        Rng::mix(Rng::mix(77, 1), 1));
  // Impressions of one finger share the finger seed, not the impression seed.
  CHECK(index.records[0].finger_seed == index.records[1].finger_seed);
  CHECK(index.records[0].impression_seed != index.records[1].impression_seed);

  FingerprintImage img = load_record_image(index, index.records[0]);
  CHECK(img.width == 64);
  CHECK(img.image_id == "synthetic/f1_i1");
  CHECK(record_has_minutiae(index, index.records[0]));
  MinutiaSet set = load_record_minutiae(index, index.records[0]);
  CHECK(set.image_ref == "synthetic/f1_i1");
}

TEST_CASE("train/val split holds out the last impressions per finger") {
  SynthSpec spec;
  spec.side = 64;
  DatasetIndex index = make_synthetic_index(4, 5, 3, spec);
  auto [train, val] = split_train_val(index, 2);
  CHECK(train.records.size() == 12);
  CHECK(val.records.size() == 8);
  CHECK(train.class_count == 4);
  CHECK(val.class_count == 4);
  for (const auto& rec : train.records) CHECK(rec.impression_id <= 3);
  for (const auto& rec : val.records) CHECK(rec.impression_id >= 4);

  auto [all_train, empty_val] = split_train_val(index, 0);
  CHECK(all_train.records.size() == 20);
  CHECK(empty_val.records.empty());
}

TEST_CASE("split failure names the finger with too few impressions") {
  fs::path dir = fresh_dir("split");
  touch_pgm(dir / "9_1.pgm");
  touch_pgm(dir / "9_2.pgm");
  touch_pgm(dir / "4_1.pgm");
  DatasetIndex index = load_dataset(dir.string(), DatasetLayout::kFlat);
  try {
    split_train_val(index, 1);
    FAIL("expected split error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kSplit);
    CHECK(std::string(e.what()).find("finger 4") != std::string::npos);
  }
}

TEST_CASE("images below 32 pixels per side are rejected at load") {
  fs::path dir = fresh_dir("tiny");
  touch_pgm(dir / "1_1.pgm", 16);
  DatasetIndex index = load_dataset(dir.string(), DatasetLayout::kFlat);
  CHECK(kind_of([&] { load_record_image(index, index.records[0]); }) ==
        ErrorKind::kData);
}

TEST_CASE("loading minutiae without a sidecar is an input error") {
  fs::path dir = fresh_dir("nomin");
  touch_pgm(dir / "1_1.pgm");
  DatasetIndex index = load_dataset(dir.string(), DatasetLayout::kFlat);
  CHECK(!record_has_minutiae(index, index.records[0]));
  CHECK(kind_of([&] { load_record_minutiae(index, index.records[0]); }) ==
        ErrorKind::kInput);
}
