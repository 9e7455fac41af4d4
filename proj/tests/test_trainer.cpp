#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "fpemb/common.hpp"
#include "fpemb/dataset.hpp"
#include "fpemb/image.hpp"
#include "fpemb/trainer.hpp"
#include "json.hpp"

using namespace fpemb;
namespace fs = std::filesystem;

namespace {

template <typename Fn>
ErrorKind kind_of(Fn&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("expected an error");
  return ErrorKind::kContract;
}

ModelConfig tiny_model() {
  ModelConfig c;
  c.input_side = 64;
  c.map_side = 32;
  c.map_channels = 4;
  c.cl = 16;
  c.k = 8;
  c.c_prime = 4;
  c.band_fraction = 0.5;
  c.norm_groups = 4;
  c.stem_channels = 4;
  c.trunk_widths = {4, 6};
  c.texture_widths = {8, 16};
  c.minutia_widths = {6, 8};
  c.freq_stem_channels = 4;
  c.freq_widths = {4, 6, 8};
  c.decoder_widths = {6, 4};
  return c;
}

TrainConfig tiny_train(const std::string& dir) {
  TrainConfig t;
  t.batch_size = 4;
  t.epochs = 2;
  t.seed = 3;
  t.checkpoint_dir = dir;
  return t;
}

// Deformation radii small enough for 64-pixel images.
AugmentConfig tiny_augment() {
  AugmentConfig a;
  a.deform_inner = 10.0;
  a.deform_outer = 28.0;
  a.deform_max_shift = 3.0;
  return a;
}

SynthSpec tiny_spec() {
  SynthSpec s;
  s.side = 64;
  s.minutia_count = 5;
  s.jitter_translation = 4.0;
  return s;
}

fs::path fresh_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path);
  REQUIRE(in.good());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("train config validation") {
  TrainConfig t;
  CHECK_NOTHROW(validate_train_config(t));
  t.lr_features = 0.0;
  CHECK(kind_of([&] { validate_train_config(t); }) == ErrorKind::kConfig);
  t = TrainConfig{};
  t.batch_size = 1;
  CHECK(kind_of([&] { validate_train_config(t); }) == ErrorKind::kConfig);
  t = TrainConfig{};
  t.epochs = 0;
  CHECK(kind_of([&] { validate_train_config(t); }) == ErrorKind::kConfig);
  t = TrainConfig{};
  t.checkpoint_dir.clear();
  CHECK(kind_of([&] { validate_train_config(t); }) == ErrorKind::kConfig);
  t = TrainConfig{};
  t.enhance = "sharpen";
  CHECK(kind_of([&] { validate_train_config(t); }) == ErrorKind::kConfig);
  t = TrainConfig{};
  t.rho = 0.0;
  CHECK(kind_of([&] { validate_train_config(t); }) == ErrorKind::kConfig);
}

TEST_CASE("pipeline builds one head per active branch") {
  const fs::path dir = fresh_dir("fpemb_pipe_heads");
  Pipeline full(tiny_model(), tiny_train(dir.string()), tiny_augment());
  REQUIRE(full.heads().size() == 3);
  CHECK(full.heads()[0].branch == "texture");
  CHECK(full.heads()[1].branch == "minutia");
  CHECK(full.heads()[2].branch == "frequency");
  for (const BranchHead& h : full.heads()) {
    CHECK(h.cosine);
    CHECK(h.ada.weights.value().dim(0) == 4);
    CHECK(h.ada.weights.value().dim(1) == 8);
  }
  // Flag on the train config wins over the model config copy.
  TrainConfig no_freq = tiny_train(dir.string());
  no_freq.use_frequency = false;
  Pipeline two(tiny_model(), no_freq, tiny_augment());
  CHECK(two.heads().size() == 2);
  CHECK(!two.model_config().use_frequency);

  TrainConfig plain = tiny_train(dir.string());
  plain.use_adacos = false;
  Pipeline linear_heads(tiny_model(), plain, tiny_augment());
  for (const BranchHead& h : linear_heads.heads()) {
    CHECK(!h.cosine);
    // (k, class_count), the layout ops::linear consumes directly.
    CHECK(h.weight.value().dim(0) == 8);
    CHECK(h.weight.value().dim(1) == 4);
    CHECK(h.bias.value().dim(0) == 4);
  }

  // Head parameters ride behind the network parameters.
  std::vector<ParamInfo> params = full.parameters();
  REQUIRE(params.size() >= 3);
  CHECK(params[params.size() - 3].name == "head.texture.weights");
  CHECK(params[params.size() - 2].name == "head.minutia.weights");
  CHECK(params[params.size() - 1].name == "head.frequency.weights");
  fs::remove_all(dir);
}

TEST_CASE("training fails fast on class overflow and missing annotations") {
  const fs::path dir = fresh_dir("fpemb_train_guards");
  DatasetIndex many = make_synthetic_index(6, 1, 8, tiny_spec());
  DatasetIndex empty_val;
  Pipeline p(tiny_model(), tiny_train(dir.string()), tiny_augment());
  CHECK(kind_of([&] { p.train(many, empty_val); }) == ErrorKind::kConfig);

  DatasetIndex none;
  CHECK(kind_of([&] { p.train(none, empty_val); }) ==
        ErrorKind::kEmptyDataset);

  // A disk-backed record without a minutiae sidecar cannot be trained on.
  const fs::path data = fresh_dir("fpemb_train_nomin");
  FingerprintImage img(64, 64, 0.5);
  write_pgm(img, (data / "1_1.pgm").string());
  write_pgm(img, (data / "1_2.pgm").string());
  DatasetIndex flat = load_dataset(data.string(), DatasetLayout::kFlat);
  CHECK(kind_of([&] { p.train(flat, empty_val); }) == ErrorKind::kData);
  fs::remove_all(dir);
  fs::remove_all(data);
}

TEST_CASE("short training run produces logs, metrics and checkpoints") {
  const fs::path dir = fresh_dir("fpemb_train_short");
  DatasetIndex all = make_synthetic_index(3, 3, 8, tiny_spec());
  auto [train_idx, val_idx] = split_train_val(all, 1);
  REQUIRE(train_idx.records.size() == 6);
  REQUIRE(val_idx.records.size() == 3);

  TrainConfig tc = tiny_train(dir.string());
  tc.epochs = 3;
  Pipeline pipe(tiny_model(), tc, tiny_augment());
  TrainResult result = pipe.train(train_idx, val_idx);

  CHECK(result.steps == 3 * 2);  // ceil(6/4) = 2 batches per epoch
  REQUIRE(result.history.size() == 3);
  for (int e = 0; e < 3; ++e) {
    CHECK(result.history[e].epoch == e + 1);
    CHECK(result.history[e].has_val);
    CHECK(result.history[e].val.sample_count == 3);
  }
  // The map term dominates the initial loss and falls quickly.
  CHECK(result.history.back().train_l_all <
        result.history.front().train_l_all);

  CHECK(fs::exists(result.last_checkpoint));
  CHECK(fs::exists(result.best_checkpoint));
  CHECK(result.best_epoch >= 1);
  CHECK(result.best_epoch <= 3);

  // One JSON line per step with the documented fields.
  std::istringstream log(slurp(dir / "train_log.jsonl"));
  std::string line;
  int lines = 0;
  while (std::getline(log, line)) {
    const nlohmann::json j = nlohmann::json::parse(line);
    ++lines;
    CHECK(j["step"] == lines);
    for (const char* key : {"epoch", "l_t", "l_m", "l_f", "l_map", "l_all",
                            "scale_texture", "b_avg_minutia",
                            "theta_med_frequency"})
      CHECK(j.contains(key));
    CHECK(std::isfinite(j["l_all"].get<double>()));
  }
  CHECK(lines == 6);

  const std::string metrics = slurp(dir / "metrics.csv");
  CHECK(metrics.rfind("epoch,train_l_all,val_l_t,val_l_m,val_l_f,val_l_map,"
                      "val_l_all,val_acc_texture,val_acc_minutia,"
                      "val_acc_frequency\n",
                      0) == 0);
  CHECK(std::count(metrics.begin(), metrics.end(), '\n') == 4);

  // Embeddings from the trained pipeline are unit norm at 3*k dimensions.
  FingerprintEmbedding emb = pipe.embed_record(val_idx, val_idx.records[0]);
  REQUIRE(emb.values.size() == 24);
  double norm = 0.0;
  for (double v : emb.values) norm += v * v;
  CHECK(std::sqrt(norm) == doctest::Approx(1.0).epsilon(1e-9));
  fs::remove_all(dir);
}

TEST_CASE("checkpoint round trip restores bit-identical behavior") {
  const fs::path dir = fresh_dir("fpemb_train_roundtrip");
  DatasetIndex all = make_synthetic_index(3, 3, 11, tiny_spec());
  auto [train_idx, val_idx] = split_train_val(all, 1);

  Pipeline pipe(tiny_model(), tiny_train(dir.string()), tiny_augment());
  TrainResult result = pipe.train(train_idx, val_idx);

  std::unique_ptr<RmsProp> optimizer;
  std::unique_ptr<Pipeline> back = Pipeline::load(result.last_checkpoint,
                                                  &optimizer);
  REQUIRE(back != nullptr);
  REQUIRE(optimizer != nullptr);

  CHECK(back->train_config().seed == pipe.train_config().seed);
  CHECK(back->model_config().k == 8);
  CHECK(back->augment_config().deform_outer == 28.0);

  // Every record embeds to exactly the same bytes.
  for (const DatasetRecord& rec : all.records) {
    FingerprintEmbedding a = pipe.embed_record(all, rec);
    FingerprintEmbedding b = back->embed_record(all, rec);
    REQUIRE(a.values.size() == b.values.size());
    for (std::size_t i = 0; i < a.values.size(); ++i)
      CHECK(a.values[i] == b.values[i]);
    CHECK(a.pre_norm == b.pre_norm);
  }

  // Validation metrics agree bitwise as well.
  ValidationMetrics va = pipe.validate(val_idx);
  ValidationMetrics vb = back->validate(val_idx);
  CHECK(va.l_all == vb.l_all);
  CHECK(va.l_map == vb.l_map);
  CHECK(va.acc_texture == vb.acc_texture);

  // Cosine-head state survives the trip exactly.
  for (std::size_t i = 0; i < pipe.heads().size(); ++i) {
    CHECK(pipe.heads()[i].ada.scale == back->heads()[i].ada.scale);
    CHECK(pipe.heads()[i].ada.update_count ==
          back->heads()[i].ada.update_count);
  }

  // Optimizer state is restored tensor by tensor.
  RmsProp fresh(pipe.parameters(), RmsPropConfig{});
  REQUIRE(optimizer->square_avg().size() == fresh.square_avg().size());
  bool any_nonzero = false;
  for (const Tensor& sq : optimizer->square_avg())
    for (std::int64_t j = 0; j < sq.size(); ++j)
      if (sq[j] != 0.0) any_nonzero = true;
  CHECK(any_nonzero);

  // A checkpoint saved without the optimizer reports none on load.
  const std::string bare = (dir / "bare.fpck").string();
  pipe.save(bare);
  std::unique_ptr<RmsProp> missing;
  Pipeline::load(bare, &missing);
  CHECK(missing == nullptr);
  fs::remove_all(dir);
}

TEST_CASE("equal seeds reproduce training byte for byte") {
  const fs::path dir_a = fresh_dir("fpemb_train_det_a");
  const fs::path dir_b = fresh_dir("fpemb_train_det_b");
  DatasetIndex all = make_synthetic_index(3, 2, 21, tiny_spec());
  DatasetIndex empty_val;

  TrainConfig ta = tiny_train(dir_a.string());
  TrainConfig tb = tiny_train(dir_b.string());
  Pipeline a(tiny_model(), ta, tiny_augment());
  Pipeline b(tiny_model(), tb, tiny_augment());
  TrainResult ra = a.train(all, empty_val);
  TrainResult rb = b.train(all, empty_val);

  CHECK(ra.steps == rb.steps);
  CHECK(slurp(dir_a / "train_log.jsonl") == slurp(dir_b / "train_log.jsonl"));
  // The metrics files differ only in no field at all; compare fully.
  CHECK(slurp(dir_a / "metrics.csv") == slurp(dir_b / "metrics.csv"));

  // With no validation split, best falls back to last.
  CHECK(ra.best_checkpoint == ra.last_checkpoint);
  CHECK(ra.best_epoch == 2);

  FingerprintEmbedding ea = a.embed_record(all, all.records[0]);
  FingerprintEmbedding eb = b.embed_record(all, all.records[0]);
  for (std::size_t i = 0; i < ea.values.size(); ++i)
    CHECK(ea.values[i] == eb.values[i]);

  // A different seed changes the trajectory.
  const fs::path dir_c = fresh_dir("fpemb_train_det_c");
  TrainConfig tc = tiny_train(dir_c.string());
  tc.seed = 4;
  Pipeline c(tiny_model(), tc, tiny_augment());
  c.train(all, empty_val);
  CHECK(slurp(dir_a / "train_log.jsonl") != slurp(dir_c / "train_log.jsonl"));

  fs::remove_all(dir_a);
  fs::remove_all(dir_b);
  fs::remove_all(dir_c);
}

TEST_CASE("plain softmax heads train without cosine-head state") {
  const fs::path dir = fresh_dir("fpemb_train_plain");
  DatasetIndex all = make_synthetic_index(2, 2, 31, tiny_spec());
  DatasetIndex empty_val;

  TrainConfig tc = tiny_train(dir.string());
  tc.use_adacos = false;
  tc.use_augment = false;
  tc.epochs = 1;
  Pipeline pipe(tiny_model(), tc, tiny_augment());
  TrainResult result = pipe.train(all, empty_val);
  CHECK(result.steps == 1);

  std::istringstream log(slurp(dir / "train_log.jsonl"));
  std::string line;
  REQUIRE(std::getline(log, line));
  const nlohmann::json j = nlohmann::json::parse(line);
  CHECK(!j.contains("scale_texture"));
  CHECK(j.contains("l_all"));

  // Round trip works for plain heads too.
  std::unique_ptr<Pipeline> back = Pipeline::load(result.last_checkpoint);
  FingerprintEmbedding ea = pipe.embed_record(all, all.records[1]);
  FingerprintEmbedding eb = back->embed_record(all, all.records[1]);
  for (std::size_t i = 0; i < ea.values.size(); ++i)
    CHECK(ea.values[i] == eb.values[i]);
  fs::remove_all(dir);
}

TEST_CASE("validation metrics weight batches by their size") {
  const fs::path dir = fresh_dir("fpemb_train_valweight");
  // 5 records with batch size 4 gives batches of 4 and 1; a size-weighted
  // mean equals the mean over all samples regardless of batching.
  DatasetIndex all = make_synthetic_index(1, 5, 41, tiny_spec());

  TrainConfig tc = tiny_train(dir.string());
  tc.batch_size = 4;
  Pipeline pipe(tiny_model(), tc, tiny_augment());
  ValidationMetrics batched = pipe.validate(all);

  TrainConfig tc_one = tiny_train(dir.string());
  tc_one.batch_size = 5;
  Pipeline pipe_one(tiny_model(), tc_one, tiny_augment());
  ValidationMetrics whole = pipe_one.validate(all);

  CHECK(batched.sample_count == 5);
  CHECK(batched.l_map == doctest::Approx(whole.l_map).epsilon(1e-9));
  // Classification losses use per-sample NLL means, so they also agree.
  CHECK(batched.l_t == doctest::Approx(whole.l_t).epsilon(1e-9));
  fs::remove_all(dir);
}
