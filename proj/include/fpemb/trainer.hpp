#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "fpemb/augment.hpp"
#include "fpemb/dataset.hpp"
#include "fpemb/losses.hpp"
#include "fpemb/model.hpp"
#include "fpemb/optimizer.hpp"

namespace fpemb {

struct TrainConfig {
  double lr_features = 1e-3;
  double lr_stn = 5e-4;
  double weight_decay = 1e-5;
  double lambda_map = 10.0;
  double rho = 100.0;
  int batch_size = 32;
  int epochs = 100;
  std::uint64_t seed = 1;
  bool use_frequency = true;
  bool use_adacos = true;
  bool use_augment = true;
  bool use_mam = true;
  std::string enhance = "none";
  std::string checkpoint_dir = "checkpoints";
};

void validate_train_config(const TrainConfig& config);

// One classification head per embedding branch: a cosine head with adaptive
// scale, or a plain affine softmax head when use_adacos is off.
struct BranchHead {
  std::string branch;
  bool cosine = true;
  AdaCosHead ada;
  Var weight;  // plain head, (k, class_count)
  Var bias;    // plain head, (class_count)
};

struct ValidationMetrics {
  double l_t = 0.0, l_m = 0.0, l_f = 0.0, l_map = 0.0, l_all = 0.0;
  double acc_texture = 0.0, acc_minutia = 0.0, acc_frequency = 0.0;
  int sample_count = 0;
};

struct EpochRecord {
  int epoch = 0;  // 1-based
  double train_l_all = 0.0;
  bool has_val = false;
  ValidationMetrics val;
};

struct TrainResult {
  std::vector<EpochRecord> history;
  int best_epoch = 0;  // epoch of the retained best checkpoint
  std::string best_checkpoint;
  std::string last_checkpoint;
  std::int64_t steps = 0;
};

// Network plus classification heads plus the preprocessing settings they were
// trained with. The train/use_* flags override the matching model flags at
// construction so one switchboard drives both.
class Pipeline {
 public:
  Pipeline(const ModelConfig& model_config, const TrainConfig& train_config,
           const AugmentConfig& augment_config);

  Model& model() { return *model_; }
  const Model& model() const { return *model_; }
  const ModelConfig& model_config() const { return model_config_; }
  const TrainConfig& train_config() const { return train_config_; }
  const AugmentConfig& augment_config() const { return augment_config_; }
  std::vector<BranchHead>& heads() { return heads_; }

  // Network parameters followed by head parameters.
  std::vector<ParamInfo> parameters() const;

  // Log probabilities of one branch head for a feature batch on the tape.
  Var head_log_probs(BranchHead& head, Var features,
                     const std::vector<int>& labels, bool train_mode);

  TrainResult train(const DatasetIndex& train_index,
                    const DatasetIndex& val_index);

  ValidationMetrics validate(const DatasetIndex& val_index);

  // Preprocesses one record (enhance, resize) and embeds it in inference
  // mode.
  FingerprintEmbedding embed_record(const DatasetIndex& index,
                                    const DatasetRecord& record);

  // Checkpoint archive: configs as JSON text, every parameter as an f64
  // array, cosine-head statistics, and optimizer state when given.
  void save(const std::string& path, const RmsProp* optimizer = nullptr) const;
  static std::unique_ptr<Pipeline> load(const std::string& path,
                                        std::unique_ptr<RmsProp>* optimizer =
                                            nullptr);

 private:
  struct Sample {
    Tensor input;   // (1,S,S)
    Tensor gt_map;  // (map_channels, map_side, map_side)
    int label = 0;
  };

  Sample prepare_sample(const FingerprintImage& image,
                        const MinutiaSet& minutiae, int label,
                        Rng* augment_rng);
  ValidationMetrics validate_cached(const DatasetIndex& val_index,
                                    const std::vector<FingerprintImage>& images,
                                    const std::vector<MinutiaSet>& minutiae);

  ModelConfig model_config_;
  TrainConfig train_config_;
  AugmentConfig augment_config_;
  std::unique_ptr<Model> model_;
  std::vector<BranchHead> heads_;
};

}  // namespace fpemb
