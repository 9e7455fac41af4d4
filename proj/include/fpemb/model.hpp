#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "fpemb/graph.hpp"
#include "fpemb/ops.hpp"
#include "fpemb/rng.hpp"

namespace fpemb {

// Widths are per residual stage. texture_widths.back() must equal cl and
// map_side must equal input_side/2; both are checked at construction.
struct ModelConfig {
  int input_side = 256;
  int map_side = 128;
  int map_channels = 6;
  int cl = 1024;       // texture feature-map channels
  int k = 512;         // branch embedding dimension
  int c_prime = 1000;  // training class count (MAM projection + heads)
  double band_fraction = 0.5;
  bool use_mam = true;
  bool use_frequency = true;
  bool mask_from_ground_truth = false;
  double rotation_bound = M_PI;
  int norm_groups = 8;
  int stem_channels = 32;
  std::vector<int> trunk_widths{64, 128};
  std::vector<int> texture_widths{256, 1024};
  std::vector<int> minutia_widths{256, 512};
  int freq_stem_channels = 16;
  std::vector<int> freq_widths{32, 64, 128};
  std::vector<int> decoder_widths{128, 64};
};

void validate_model_config(const ModelConfig& config);

struct ParamInfo {
  std::string name;
  Var var;
  bool stn_group = false;
};

struct ModelOutputs {
  Var theta;      // (N,1) regressed rotation, within +-rotation_bound
  Var aligned;    // (N,1,S,S)
  Var x_l;        // (N,cl,H_L,W_L) final texture feature map
  Var attention;  // (N,1,H_L,W_L), defined only when use_mam
  Var t_tex;      // (N,K)
  Var t_min;      // (N,K)
  Var t_freq;     // (N,K), defined only when use_frequency
  Var h_e;        // (N,map_channels,map_side,map_side) estimated minutia map
};

// Pooling heads, exposed for algebra tests. The MAM head projects the
// feature map to c_prime channels, applies a per-channel spatial softmax,
// pools with the attention mask, and maps the pooled vector to K.
Var texture_head_gap(Var x_l, Var w_fc, Var b_fc);
Var texture_head_mam(Var x_l, Var mask, Var w_proj, Var w_proj_b, Var w_fc,
                     Var b_fc);

class Model {
 public:
  Model(const ModelConfig& config, std::uint64_t init_seed);

  const ModelConfig& config() const { return config_; }
  std::vector<ParamInfo>& params() { return params_; }
  const std::vector<ParamInfo>& params() const { return params_; }

  // batch: (N,1,S,S) pixels in [0,1]. gt_maps is required when
  // mask_from_ground_truth is set and train_mode is true; inference always
  // uses the estimated map for attention.
  ModelOutputs forward(const Tensor& batch, bool train_mode,
                       const Tensor* gt_maps = nullptr);

  int feature_side() const { return config_.input_side / 16; }

 private:
  struct ConvLayer {
    Var w, b;
    int stride = 1, pad = 1;
  };
  struct NormLayer {
    Var gamma, beta;
    int groups = 1;
  };
  struct LinearLayer {
    Var w, b;
  };
  struct ResBlock {
    ConvLayer c1, c2;
    NormLayer n1, n2;
    bool has_skip = false;
    ConvLayer sc;  // 1x1 projection when shape changes
    NormLayer sn;
  };
  struct UpBlock {
    ConvLayer t1;  // transposed 3x3, stride 2
    NormLayer n1;
    ConvLayer c2;  // 3x3, stride 1
    NormLayer n2;
    ConvLayer st;  // transposed 1x1 skip, stride 2
    NormLayer sn;
  };

  Var make_param(const std::string& name, Tensor value, bool stn_group);
  ConvLayer make_conv(const std::string& name, int cin, int cout, int kernel,
                      int stride, int pad, bool stn_group, double bias_init = 0.0);
  ConvLayer make_tconv(const std::string& name, int cin, int cout, int kernel,
                       int stride, int pad);
  NormLayer make_norm(const std::string& name, int channels, bool stn_group);
  LinearLayer make_linear(const std::string& name, int cin, int cout,
                          bool stn_group, bool zero_init = false);
  ResBlock make_res(const std::string& name, int cin, int cout, int stride);
  UpBlock make_up(const std::string& name, int cin, int cout);

  Var apply_conv(const ConvLayer& l, Var x) const;
  Var apply_norm(const NormLayer& n, Var x) const;
  Var apply_res(const ResBlock& b, Var x) const;
  Var apply_up(const UpBlock& b, Var x) const;

  ModelConfig config_;
  std::vector<ParamInfo> params_;
  Rng init_rng_;

  // STN localization network.
  ConvLayer stn_conv_[3];
  NormLayer stn_norm_[3];
  LinearLayer stn_fc_;

  ConvLayer stem_conv_;
  NormLayer stem_norm_;
  ResBlock trunk_[2];
  ResBlock texture_[2];
  ResBlock minutia_[2];
  LinearLayer minutia_fc_;
  UpBlock decoder_[2];
  ConvLayer map_conv_;
  ConvLayer proj_;  // MAM 1x1 projection cl -> c_prime
  LinearLayer texture_fc_;
  ConvLayer freq_stem_conv_;
  NormLayer freq_stem_norm_;
  ResBlock freq_[3];
  LinearLayer freq_fc_;
};

// Unit-norm concatenation (texture, minutia, frequency) of per-branch
// normalized features; pre_norm stores the norm before the final
// renormalization. A zero-norm branch raises a numerical error naming it.
struct FingerprintEmbedding {
  std::vector<double> values;
  double pre_norm = 0.0;
};

FingerprintEmbedding assemble_embedding(const std::vector<double>& t_tex,
                                        const std::vector<double>& t_min,
                                        const std::vector<double>& t_freq);

}  // namespace fpemb
