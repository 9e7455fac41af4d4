#include "fpemb/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>

#include "json.hpp"

#include "fpemb/archive.hpp"
#include "fpemb/common.hpp"
#include "fpemb/config.hpp"
#include "fpemb/minutia_map.hpp"
#include "fpemb/ops.hpp"
#include "fpemb/preprocess.hpp"

namespace fpemb {

namespace {

std::vector<double> tensor_row(const Tensor& t, int row) {
  std::vector<double> out(static_cast<std::size_t>(t.dim(1)));
  for (int c = 0; c < t.dim(1); ++c) out[c] = t.at(row, c);
  return out;
}

int argmax_row(const Tensor& t, int row) {
  int best = 0;
  for (int c = 1; c < t.dim(1); ++c)
    if (t.at(row, c) > t.at(row, best)) best = c;
  return best;
}

void shuffle_indices(std::vector<int>& order, Rng& rng) {
  for (int i = static_cast<int>(order.size()) - 1; i > 0; --i)
    std::swap(order[i], order[static_cast<int>(rng.uniform_int(0, i))]);
}

std::string join_path(const std::string& dir, const std::string& name) {
  return (std::filesystem::path(dir) / name).string();
}

std::string format_g9(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

}  // namespace

void validate_train_config(const TrainConfig& config) {
  FPEMB_CHECK(config.lr_features > 0.0 && config.lr_stn > 0.0,
              ErrorKind::kConfig, "learning rates must be positive");
  FPEMB_CHECK(config.weight_decay >= 0.0, ErrorKind::kConfig,
              "weight_decay must be non-negative");
  FPEMB_CHECK(config.lambda_map >= 0.0, ErrorKind::kConfig,
              "lambda_map must be non-negative");
  FPEMB_CHECK(config.rho > 0.0, ErrorKind::kConfig, "rho must be positive");
  FPEMB_CHECK(config.batch_size >= 2, ErrorKind::kConfig,
              "batch_size must be at least 2");
  FPEMB_CHECK(config.epochs >= 1, ErrorKind::kConfig,
              "epochs must be at least 1");
  FPEMB_CHECK(!config.checkpoint_dir.empty(), ErrorKind::kConfig,
              "checkpoint_dir must not be empty");
  enhance_method_from_name(config.enhance);
}

Pipeline::Pipeline(const ModelConfig& model_config,
                   const TrainConfig& train_config,
                   const AugmentConfig& augment_config)
    : model_config_(model_config),
      train_config_(train_config),
      augment_config_(augment_config) {
  validate_train_config(train_config_);
  validate_augment_config(augment_config_);
  model_config_.use_frequency = train_config_.use_frequency;
  model_config_.use_mam = train_config_.use_mam;
  validate_model_config(model_config_);
  model_ = std::make_unique<Model>(model_config_,
                                   Rng::mix(train_config_.seed, 7));

  std::vector<std::string> branches{"texture", "minutia"};
  if (model_config_.use_frequency) branches.push_back("frequency");
  for (std::size_t i = 0; i < branches.size(); ++i) {
    BranchHead head;
    head.branch = branches[i];
    head.cosine = train_config_.use_adacos;
    const std::uint64_t seed = Rng::mix(train_config_.seed, 101 + i);
    if (head.cosine) {
      head.ada = make_adacos_head(branches[i], model_config_.c_prime,
                                  model_config_.k, seed);
    } else {
      Rng rng(seed);
      Tensor w({model_config_.k, model_config_.c_prime});
      const double std_dev = std::sqrt(1.0 / model_config_.k);
      for (Eigen::Index j = 0; j < w.size(); ++j) w[j] = rng.normal() * std_dev;
      head.weight = ops::parameter(std::move(w));
      head.bias = ops::parameter(Tensor({model_config_.c_prime}));
    }
    heads_.push_back(std::move(head));
  }
}

std::vector<ParamInfo> Pipeline::parameters() const {
  std::vector<ParamInfo> params = model_->params();
  for (const BranchHead& head : heads_) {
    if (head.cosine) {
      params.push_back({"head." + head.branch + ".weights",
                        head.ada.weights, false});
    } else {
      params.push_back({"head." + head.branch + ".weight", head.weight,
                        false});
      params.push_back({"head." + head.branch + ".bias", head.bias, false});
    }
  }
  return params;
}

Var Pipeline::head_log_probs(BranchHead& head, Var features,
                             const std::vector<int>& labels, bool train_mode) {
  if (head.cosine)
    return adacos_log_probs(head.ada, features, labels, train_mode);
  return ops::log_softmax_rows(ops::linear(features, head.weight, head.bias));
}

Pipeline::Sample Pipeline::prepare_sample(const FingerprintImage& image,
                                          const MinutiaSet& minutiae,
                                          int label, Rng* augment_rng) {
  FingerprintImage img = image;
  MinutiaSet mins = minutiae;
  if (augment_rng != nullptr) {
    auto augmented = augment_pipeline(img, mins, augment_config_,
                                      *augment_rng);
    img = std::move(augmented.first);
    mins = std::move(augmented.second);
  }
  const int orig_h = img.height, orig_w = img.width;
  img = enhance(img, enhance_method_from_name(train_config_.enhance));
  img = resize_input(img, model_config_.input_side);
  mins = transform_minutiae_for_resize(mins, orig_h, orig_w,
                                       model_config_.input_side);
  MinutiaMap map =
      build_minutia_map(mins, model_config_.input_side, model_config_.map_side,
                        model_config_.map_channels);
  Sample s;
  s.input = Tensor({1, model_config_.input_side, model_config_.input_side});
  for (Eigen::Index j = 0; j < s.input.size(); ++j)
    s.input[j] = img.pixels[static_cast<std::size_t>(j)];
  s.gt_map = std::move(map.values);
  s.label = label;
  return s;
}

TrainResult Pipeline::train(const DatasetIndex& train_index,
                            const DatasetIndex& val_index) {
  FPEMB_CHECK(!train_index.records.empty(), ErrorKind::kEmptyDataset,
              "training set is empty");
  FPEMB_CHECK(train_index.class_count <= model_config_.c_prime,
              ErrorKind::kConfig,
              "c_prime is smaller than the number of training classes");

  const int n = static_cast<int>(train_index.records.size());
  std::vector<FingerprintImage> images;
  std::vector<MinutiaSet> minutiae;
  images.reserve(n);
  minutiae.reserve(n);
  for (const DatasetRecord& rec : train_index.records) {
    FPEMB_CHECK(record_has_minutiae(train_index, rec), ErrorKind::kData,
                "training record lacks minutia annotations: " + rec.image_id);
    images.push_back(load_record_image(train_index, rec));
    minutiae.push_back(load_record_minutiae(train_index, rec));
  }
  std::vector<FingerprintImage> val_images;
  std::vector<MinutiaSet> val_minutiae;
  for (const DatasetRecord& rec : val_index.records) {
    FPEMB_CHECK(record_has_minutiae(val_index, rec), ErrorKind::kData,
                "validation record lacks minutia annotations: " + rec.image_id);
    val_images.push_back(load_record_image(val_index, rec));
    val_minutiae.push_back(load_record_minutiae(val_index, rec));
  }

  const std::string& dir = train_config_.checkpoint_dir;
  std::filesystem::create_directories(dir);
  std::ofstream log(join_path(dir, "train_log.jsonl"));
  FPEMB_CHECK(log.good(), ErrorKind::kInput,
              "cannot write training log in " + dir);
  std::ofstream metrics(join_path(dir, "metrics.csv"));
  FPEMB_CHECK(metrics.good(), ErrorKind::kInput,
              "cannot write metrics file in " + dir);
  metrics << "epoch,train_l_all,val_l_t,val_l_m,val_l_f,val_l_map,val_l_all,"
             "val_acc_texture,val_acc_minutia,val_acc_frequency\n";

  RmsPropConfig oc;
  oc.lr_features = train_config_.lr_features;
  oc.lr_stn = train_config_.lr_stn;
  oc.weight_decay = train_config_.weight_decay;
  RmsProp opt(parameters(), oc);

  TrainResult result;
  double best_val = std::numeric_limits<double>::infinity();
  std::vector<int> order(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;

  const int side = model_config_.input_side;
  const int ms = model_config_.map_side;
  const int mc = model_config_.map_channels;

  for (int epoch = 1; epoch <= train_config_.epochs; ++epoch) {
    Rng shuffle_rng(Rng::mix(train_config_.seed, 5000 + epoch));
    shuffle_indices(order, shuffle_rng);
    double epoch_sum = 0.0;
    int epoch_batches = 0;

    for (int start = 0; start < n; start += train_config_.batch_size) {
      const int nb = std::min(train_config_.batch_size, n - start);
      Tensor batch({nb, 1, side, side});
      Tensor gt({nb, mc, ms, ms});
      std::vector<int> labels(static_cast<std::size_t>(nb));
      for (int slot = 0; slot < nb; ++slot) {
        const int idx = order[static_cast<std::size_t>(start + slot)];
        Rng sample_rng(Rng::mix(Rng::mix(train_config_.seed, epoch),
                                static_cast<std::uint64_t>(start + slot)));
        Sample s = prepare_sample(
            images[static_cast<std::size_t>(idx)],
            minutiae[static_cast<std::size_t>(idx)],
            train_index.records[static_cast<std::size_t>(idx)].finger_id,
            train_config_.use_augment ? &sample_rng : nullptr);
        std::copy(s.input.data(), s.input.data() + s.input.size(),
                  batch.data() + static_cast<Eigen::Index>(slot) *
                                     s.input.size());
        std::copy(s.gt_map.data(), s.gt_map.data() + s.gt_map.size(),
                  gt.data() + static_cast<Eigen::Index>(slot) *
                                  s.gt_map.size());
        labels[static_cast<std::size_t>(slot)] = s.label;
      }

      ++result.steps;
      ModelOutputs outs = model_->forward(
          batch, true, model_config_.mask_from_ground_truth ? &gt : nullptr);
      Var l_t = ops::nll_from_log_probs(
          head_log_probs(heads_[0], outs.t_tex, labels, true), labels);
      Var l_m = ops::nll_from_log_probs(
          head_log_probs(heads_[1], outs.t_min, labels, true), labels);
      Var l_sum = ops::add(l_t, l_m);
      double lf_value = 0.0;
      if (model_config_.use_frequency) {
        Var l_f = ops::nll_from_log_probs(
            head_log_probs(heads_[2], outs.t_freq, labels, true), labels);
        lf_value = l_f.scalar();
        l_sum = ops::add(l_sum, l_f);
      }
      Var l_map = minutia_map_loss_batch(outs.h_e, gt, train_config_.rho);
      Var l_all =
          ops::add(l_sum, ops::scale(l_map, train_config_.lambda_map));

      const double lall_value = l_all.scalar();
      FPEMB_CHECK(std::isfinite(lall_value), ErrorKind::kNumerical,
                  "non-finite total loss at step " +
                      std::to_string(result.steps));
      opt.zero_grad();
      backward(l_all);
      opt.step();
      for (BranchHead& head : heads_)
        if (head.cosine) renormalize_adacos_rows(head.ada);

      nlohmann::json line;
      line["step"] = result.steps;
      line["epoch"] = epoch;
      line["l_t"] = l_t.scalar();
      line["l_m"] = l_m.scalar();
      line["l_f"] = lf_value;
      line["l_map"] = l_map.scalar();
      line["l_all"] = lall_value;
      for (const BranchHead& head : heads_) {
        if (!head.cosine) continue;
        line["scale_" + head.branch] = head.ada.scale;
        line["b_avg_" + head.branch] = head.ada.last_b_avg;
        line["theta_med_" + head.branch] = head.ada.last_theta_med;
      }
      log << line.dump() << "\n";

      epoch_sum += lall_value;
      ++epoch_batches;
    }

    EpochRecord record;
    record.epoch = epoch;
    record.train_l_all = epoch_sum / std::max(1, epoch_batches);
    metrics << epoch << "," << format_g9(record.train_l_all);
    if (!val_index.records.empty()) {
      record.has_val = true;
      record.val = validate_cached(val_index, val_images, val_minutiae);
      metrics << "," << format_g9(record.val.l_t) << ","
              << format_g9(record.val.l_m) << "," << format_g9(record.val.l_f)
              << "," << format_g9(record.val.l_map) << ","
              << format_g9(record.val.l_all) << ","
              << format_g9(record.val.acc_texture) << ","
              << format_g9(record.val.acc_minutia) << ","
              << format_g9(record.val.acc_frequency) << "\n";
      if (record.val.l_all < best_val) {
        best_val = record.val.l_all;
        result.best_epoch = epoch;
        result.best_checkpoint = join_path(dir, "best.fpck");
        save(result.best_checkpoint, &opt);
      }
    } else {
      metrics << ",,,,,,,,\n";
    }
    result.history.push_back(record);
  }

  result.last_checkpoint = join_path(dir, "last.fpck");
  save(result.last_checkpoint, &opt);
  if (result.best_checkpoint.empty()) {
    result.best_epoch = train_config_.epochs;
    result.best_checkpoint = result.last_checkpoint;
  }
  return result;
}

ValidationMetrics Pipeline::validate_cached(
    const DatasetIndex& val_index, const std::vector<FingerprintImage>& images,
    const std::vector<MinutiaSet>& minutiae) {
  FPEMB_CHECK(!val_index.records.empty(), ErrorKind::kEmptyDataset,
              "validation set is empty");
  const int n = static_cast<int>(val_index.records.size());
  const int side = model_config_.input_side;
  const int ms = model_config_.map_side;
  const int mc = model_config_.map_channels;

  ValidationMetrics vm;
  double sum_t = 0.0, sum_m = 0.0, sum_f = 0.0, sum_map = 0.0;
  int correct_t = 0, correct_m = 0, correct_f = 0;

  for (int start = 0; start < n; start += train_config_.batch_size) {
    const int nb = std::min(train_config_.batch_size, n - start);
    Tensor batch({nb, 1, side, side});
    Tensor gt({nb, mc, ms, ms});
    std::vector<int> labels(static_cast<std::size_t>(nb));
    for (int slot = 0; slot < nb; ++slot) {
      const int idx = start + slot;
      Sample s = prepare_sample(
          images[static_cast<std::size_t>(idx)],
          minutiae[static_cast<std::size_t>(idx)],
          val_index.records[static_cast<std::size_t>(idx)].finger_id, nullptr);
      std::copy(s.input.data(), s.input.data() + s.input.size(),
                batch.data() + static_cast<Eigen::Index>(slot) *
                                   s.input.size());
      std::copy(s.gt_map.data(), s.gt_map.data() + s.gt_map.size(),
                gt.data() + static_cast<Eigen::Index>(slot) * s.gt_map.size());
      labels[static_cast<std::size_t>(slot)] = s.label;
    }

    ModelOutputs outs = model_->forward(batch, false);
    Var lp_t = head_log_probs(heads_[0], outs.t_tex, labels, false);
    Var lp_m = head_log_probs(heads_[1], outs.t_min, labels, false);
    sum_t += ops::nll_from_log_probs(lp_t, labels).scalar() * nb;
    sum_m += ops::nll_from_log_probs(lp_m, labels).scalar() * nb;
    sum_map +=
        minutia_map_loss_batch(outs.h_e, gt, train_config_.rho).scalar() * nb;
    for (int slot = 0; slot < nb; ++slot) {
      if (argmax_row(lp_t.value(), slot) == labels[(std::size_t)slot])
        ++correct_t;
      if (argmax_row(lp_m.value(), slot) == labels[(std::size_t)slot])
        ++correct_m;
    }
    if (model_config_.use_frequency) {
      Var lp_f = head_log_probs(heads_[2], outs.t_freq, labels, false);
      sum_f += ops::nll_from_log_probs(lp_f, labels).scalar() * nb;
      for (int slot = 0; slot < nb; ++slot)
        if (argmax_row(lp_f.value(), slot) == labels[(std::size_t)slot])
          ++correct_f;
    }
  }

  vm.sample_count = n;
  vm.l_t = sum_t / n;
  vm.l_m = sum_m / n;
  vm.l_f = sum_f / n;
  vm.l_map = sum_map / n;
  LossBreakdown all =
      total_loss(vm.l_t, vm.l_m, vm.l_f, vm.l_map, train_config_.lambda_map);
  vm.l_all = all.l_all;
  vm.acc_texture = static_cast<double>(correct_t) / n;
  vm.acc_minutia = static_cast<double>(correct_m) / n;
  vm.acc_frequency =
      model_config_.use_frequency ? static_cast<double>(correct_f) / n : 0.0;
  return vm;
}

ValidationMetrics Pipeline::validate(const DatasetIndex& val_index) {
  std::vector<FingerprintImage> images;
  std::vector<MinutiaSet> minutiae;
  for (const DatasetRecord& rec : val_index.records) {
    FPEMB_CHECK(record_has_minutiae(val_index, rec), ErrorKind::kData,
                "validation record lacks minutia annotations: " + rec.image_id);
    images.push_back(load_record_image(val_index, rec));
    minutiae.push_back(load_record_minutiae(val_index, rec));
  }
  return validate_cached(val_index, images, minutiae);
}

FingerprintEmbedding Pipeline::embed_record(const DatasetIndex& index,
                                            const DatasetRecord& record) {
  FingerprintImage img = load_record_image(index, record);
  img = enhance(img, enhance_method_from_name(train_config_.enhance));
  img = resize_input(img, model_config_.input_side);
  const int side = model_config_.input_side;
  Tensor batch({1, 1, side, side});
  for (Eigen::Index j = 0; j < batch.size(); ++j)
    batch[j] = img.pixels[static_cast<std::size_t>(j)];
  ModelOutputs outs = model_->forward(batch, false);
  std::vector<double> freq;
  if (model_config_.use_frequency) freq = tensor_row(outs.t_freq.value(), 0);
  return assemble_embedding(tensor_row(outs.t_tex.value(), 0),
                            tensor_row(outs.t_min.value(), 0), freq);
}

void Pipeline::save(const std::string& path, const RmsProp* optimizer) const {
  Archive archive;
  archive.put_text("kind", "fpemb-pipeline");
  archive.put_text("model_config", model_config_to_json(model_config_).dump());
  archive.put_text("train_config", train_config_to_json(train_config_).dump());
  archive.put_text("augment_config",
                   augment_config_to_json(augment_config_).dump());
  const std::vector<ParamInfo> params = parameters();
  for (const ParamInfo& p : params)
    archive.put_array("param/" + p.name, p.var.value());
  for (const BranchHead& head : heads_) {
    if (!head.cosine) continue;
    Tensor stats({5});
    stats[0] = head.ada.scale;
    stats[1] = static_cast<double>(head.ada.update_count);
    stats[2] = head.ada.last_b_avg;
    stats[3] = head.ada.last_theta_med;
    stats[4] = head.ada.dynamic ? 1.0 : 0.0;
    archive.put_array("adacos/" + head.branch, std::move(stats));
  }
  if (optimizer != nullptr) {
    FPEMB_CHECK(optimizer->params().size() == params.size(),
                ErrorKind::kContract,
                "optimizer state does not match pipeline parameters");
    for (std::size_t i = 0; i < params.size(); ++i)
      archive.put_array("rms/" + params[i].name,
                        optimizer->square_avg()[i]);
  }
  archive.save(path);
}

std::unique_ptr<Pipeline> Pipeline::load(const std::string& path,
                                         std::unique_ptr<RmsProp>* optimizer) {
  Archive archive = Archive::load(path);
  FPEMB_CHECK(archive.has("kind") && archive.text("kind") == "fpemb-pipeline",
              ErrorKind::kFormat, "not a pipeline checkpoint: " + path);
  const ModelConfig mc =
      model_config_from_json(nlohmann::json::parse(archive.text("model_config")));
  const TrainConfig tc =
      train_config_from_json(nlohmann::json::parse(archive.text("train_config")));
  const AugmentConfig ac = augment_config_from_json(
      nlohmann::json::parse(archive.text("augment_config")));
  auto pipeline = std::make_unique<Pipeline>(mc, tc, ac);

  for (ParamInfo& p : pipeline->parameters()) {
    const std::string name = "param/" + p.name;
    FPEMB_CHECK(archive.has(name), ErrorKind::kFormat,
                "checkpoint missing " + name);
    const Tensor& stored = archive.array(name);
    FPEMB_CHECK(stored.same_shape(p.var.value()), ErrorKind::kFormat,
                "checkpoint shape mismatch for " + name);
    p.var.value() = stored;
  }
  for (BranchHead& head : pipeline->heads_) {
    if (!head.cosine) continue;
    const std::string name = "adacos/" + head.branch;
    FPEMB_CHECK(archive.has(name), ErrorKind::kFormat,
                "checkpoint missing " + name);
    const Tensor& stats = archive.array(name);
    FPEMB_CHECK(stats.size() == 5, ErrorKind::kFormat,
                "bad cosine-head state for " + name);
    head.ada.scale = stats[0];
    head.ada.update_count = static_cast<std::int64_t>(stats[1]);
    head.ada.last_b_avg = stats[2];
    head.ada.last_theta_med = stats[3];
    head.ada.dynamic = stats[4] != 0.0;
  }
  if (optimizer != nullptr) {
    RmsPropConfig oc;
    oc.lr_features = tc.lr_features;
    oc.lr_stn = tc.lr_stn;
    oc.weight_decay = tc.weight_decay;
    auto opt = std::make_unique<RmsProp>(pipeline->parameters(), oc);
    bool any = false;
    const std::vector<ParamInfo>& params = opt->params();
    for (std::size_t i = 0; i < params.size(); ++i) {
      const std::string name = "rms/" + params[i].name;
      if (!archive.has(name)) continue;
      const Tensor& stored = archive.array(name);
      FPEMB_CHECK(stored.same_shape(opt->square_avg()[i]), ErrorKind::kFormat,
                  "checkpoint shape mismatch for " + name);
      opt->square_avg()[i] = stored;
      any = true;
    }
    *optimizer = any ? std::move(opt) : nullptr;
  }
  return pipeline;
}

}  // namespace fpemb
