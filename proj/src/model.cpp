#include "fpemb/model.hpp"

#include <algorithm>
#include <cmath>

#include "fpemb/common.hpp"

namespace fpemb {
namespace {

int norm_group_count(int channels, int wanted) {
  int g = std::min(wanted, channels);
  while (g > 1 && channels % g != 0) --g;
  return g;
}

int spectrum_band(const ModelConfig& c) {
  const double exact = c.band_fraction * c.input_side;
  return static_cast<int>(std::lround(exact));
}

}  // namespace

void validate_model_config(const ModelConfig& c) {
  FPEMB_CHECK(c.input_side >= 32 && c.input_side % 16 == 0, ErrorKind::kConfig,
              "input side must be a multiple of 16 and at least 32");
  FPEMB_CHECK(c.map_side * 2 == c.input_side, ErrorKind::kConfig,
              "map side must be half the input side");
  FPEMB_CHECK(c.map_channels >= 1, ErrorKind::kConfig,
              "map channel count must be positive");
  FPEMB_CHECK(c.trunk_widths.size() == 2 && c.texture_widths.size() == 2 &&
                  c.minutia_widths.size() == 2 && c.freq_widths.size() == 3 &&
                  c.decoder_widths.size() == 2,
              ErrorKind::kConfig,
              "stage width lists must have sizes 2/2/2/3/2");
  auto positive = [](const std::vector<int>& v) {
    return std::all_of(v.begin(), v.end(), [](int w) { return w >= 1; });
  };
  FPEMB_CHECK(c.stem_channels >= 1 && c.freq_stem_channels >= 1 &&
                  positive(c.trunk_widths) && positive(c.texture_widths) &&
                  positive(c.minutia_widths) && positive(c.freq_widths) &&
                  positive(c.decoder_widths),
              ErrorKind::kConfig, "all widths must be at least 1");
  FPEMB_CHECK(c.texture_widths.back() == c.cl, ErrorKind::kConfig,
              "last texture width must equal cl");
  FPEMB_CHECK(c.k >= 1 && c.k <= c.cl, ErrorKind::kConfig,
              "feature dimension k must satisfy 1 <= k <= cl");
  FPEMB_CHECK(!c.use_mam || c.c_prime >= 2, ErrorKind::kConfig,
              "attention pooling needs at least 2 classes");
  FPEMB_CHECK(c.rotation_bound > 0.0 && c.rotation_bound <= M_PI + 1e-12,
              ErrorKind::kConfig, "rotation bound must lie in (0, pi]");
  FPEMB_CHECK(c.norm_groups >= 1, ErrorKind::kConfig,
              "norm group count must be positive");
  if (c.use_frequency) {
    const double exact = c.band_fraction * c.input_side;
    const int band = static_cast<int>(std::lround(exact));
    FPEMB_CHECK(c.band_fraction > 0.0 && c.band_fraction <= 1.0 &&
                    std::abs(exact - band) < 1e-9 && band % 16 == 0,
                ErrorKind::kConfig,
                "band_fraction * input_side must be a multiple of 16");
  }
}

Var texture_head_gap(Var x_l, Var w_fc, Var b_fc) {
  return ops::linear(ops::gap(x_l), w_fc, b_fc);
}

Var texture_head_mam(Var x_l, Var mask, Var w_proj, Var w_proj_b, Var w_fc,
                     Var b_fc) {
  Var logits = ops::conv2d(x_l, w_proj, w_proj_b, 1, 0);
  Var y = ops::softmax_spatial(logits);
  Var pooled = ops::weighted_pool(y, mask);
  return ops::linear(pooled, w_fc, b_fc);
}

Var Model::make_param(const std::string& name, Tensor value, bool stn_group) {
  Var v = ops::parameter(std::move(value));
  params_.push_back({name, v, stn_group});
  return v;
}

Model::ConvLayer Model::make_conv(const std::string& name, int cin, int cout,
                                  int kernel, int stride, int pad,
                                  bool stn_group, double bias_init) {
  ConvLayer l;
  l.stride = stride;
  l.pad = pad;
  Tensor w({cout, cin, kernel, kernel});
  const double std_dev = std::sqrt(2.0 / (cin * kernel * kernel));
  for (std::int64_t i = 0; i < w.size(); ++i)
    w[i] = init_rng_.normal() * std_dev;
  l.w = make_param(name + ".w", std::move(w), stn_group);
  l.b = make_param(name + ".b", Tensor({cout}, bias_init), stn_group);
  return l;
}

Model::ConvLayer Model::make_tconv(const std::string& name, int cin, int cout,
                                   int kernel, int stride, int pad) {
  ConvLayer l;
  l.stride = stride;
  l.pad = pad;
  Tensor w({cin, cout, kernel, kernel});
  const double std_dev = std::sqrt(2.0 / (cin * kernel * kernel));
  for (std::int64_t i = 0; i < w.size(); ++i)
    w[i] = init_rng_.normal() * std_dev;
  l.w = make_param(name + ".w", std::move(w), false);
  l.b = make_param(name + ".b", Tensor({cout}), false);
  return l;
}

Model::NormLayer Model::make_norm(const std::string& name, int channels,
                                  bool stn_group) {
  NormLayer n;
  n.groups = norm_group_count(channels, config_.norm_groups);
  n.gamma = make_param(name + ".g", Tensor({channels}, 1.0), stn_group);
  n.beta = make_param(name + ".b", Tensor({channels}), stn_group);
  return n;
}

Model::LinearLayer Model::make_linear(const std::string& name, int cin,
                                      int cout, bool stn_group,
                                      bool zero_init) {
  LinearLayer l;
  Tensor w({cin, cout});
  if (!zero_init) {
    const double std_dev = std::sqrt(2.0 / cin);
    for (std::int64_t i = 0; i < w.size(); ++i)
      w[i] = init_rng_.normal() * std_dev;
  }
  l.w = make_param(name + ".w", std::move(w), stn_group);
  l.b = make_param(name + ".b", Tensor({cout}), stn_group);
  return l;
}

Model::ResBlock Model::make_res(const std::string& name, int cin, int cout,
                                int stride) {
  ResBlock b;
  b.c1 = make_conv(name + ".c1", cin, cout, 3, stride, 1, false);
  b.n1 = make_norm(name + ".n1", cout, false);
  b.c2 = make_conv(name + ".c2", cout, cout, 3, 1, 1, false);
  b.n2 = make_norm(name + ".n2", cout, false);
  b.has_skip = stride != 1 || cin != cout;
  if (b.has_skip) {
    b.sc = make_conv(name + ".sc", cin, cout, 1, stride, 0, false);
    b.sn = make_norm(name + ".sn", cout, false);
  }
  return b;
}

Model::UpBlock Model::make_up(const std::string& name, int cin, int cout) {
  UpBlock b;
  b.t1 = make_tconv(name + ".t1", cin, cout, 3, 2, 1);
  b.n1 = make_norm(name + ".n1", cout, false);
  b.c2 = make_conv(name + ".c2", cout, cout, 3, 1, 1, false);
  b.n2 = make_norm(name + ".n2", cout, false);
  b.st = make_tconv(name + ".st", cin, cout, 1, 2, 0);
  b.sn = make_norm(name + ".sn", cout, false);
  return b;
}

Var Model::apply_conv(const ConvLayer& l, Var x) const {
  return ops::conv2d(x, l.w, l.b, l.stride, l.pad);
}

Var Model::apply_norm(const NormLayer& n, Var x) const {
  return ops::group_norm(x, n.gamma, n.beta, n.groups);
}

Var Model::apply_res(const ResBlock& b, Var x) const {
  Var y = ops::relu(apply_norm(b.n1, apply_conv(b.c1, x)));
  y = apply_norm(b.n2, apply_conv(b.c2, y));
  Var skip = b.has_skip ? apply_norm(b.sn, apply_conv(b.sc, x)) : x;
  return ops::relu(ops::add(y, skip));
}

Var Model::apply_up(const UpBlock& b, Var x) const {
  Var y = ops::relu(
      apply_norm(b.n1, ops::conv_transpose2d(x, b.t1.w, b.t1.b, 2, 1, 1)));
  y = apply_norm(b.n2, apply_conv(b.c2, y));
  Var skip =
      apply_norm(b.sn, ops::conv_transpose2d(x, b.st.w, b.st.b, 2, 0, 1));
  return ops::relu(ops::add(y, skip));
}

Model::Model(const ModelConfig& config, std::uint64_t init_seed)
    : config_(config), init_rng_(init_seed) {
  validate_model_config(config_);
  const auto& c = config_;

  const int stn_widths[3] = {8, 16, 32};
  int prev = 1;
  for (int i = 0; i < 3; ++i) {
    const std::string name = "stn.conv" + std::to_string(i);
    stn_conv_[i] = make_conv(name, prev, stn_widths[i], 3, 2, 1, true);
    stn_norm_[i] = make_norm("stn.norm" + std::to_string(i), stn_widths[i], true);
    prev = stn_widths[i];
  }
  stn_fc_ = make_linear("stn.fc", 32, 1, true, /*zero_init=*/true);

  stem_conv_ = make_conv("stem.conv", 1, c.stem_channels, 3, 2, 1, false);
  stem_norm_ = make_norm("stem.norm", c.stem_channels, false);
  trunk_[0] = make_res("trunk0", c.stem_channels, c.trunk_widths[0], 2);
  trunk_[1] = make_res("trunk1", c.trunk_widths[0], c.trunk_widths[1], 2);

  texture_[0] = make_res("tex0", c.trunk_widths[1], c.texture_widths[0], 2);
  texture_[1] = make_res("tex1", c.texture_widths[0], c.texture_widths[1], 1);

  minutia_[0] = make_res("min0", c.trunk_widths[1], c.minutia_widths[0], 1);
  minutia_[1] = make_res("min1", c.minutia_widths[0], c.minutia_widths[1], 2);
  minutia_fc_ = make_linear("min_fc", c.minutia_widths[1], c.k, false);

  decoder_[0] = make_up("dec0", c.minutia_widths[0], c.decoder_widths[0]);
  decoder_[1] = make_up("dec1", c.decoder_widths[0], c.decoder_widths[1]);
  // Bias -2 starts the softplus output near zero, matching the mostly-empty
  // target maps.
  map_conv_ = make_conv("map.conv", c.decoder_widths[1], c.map_channels, 1, 1,
                        0, false, -2.0);

  if (c.use_mam) {
    proj_ = make_conv("mam.proj", c.cl, c.c_prime, 1, 1, 0, false);
    texture_fc_ = make_linear("tex_fc", c.c_prime, c.k, false);
  } else {
    texture_fc_ = make_linear("tex_fc", c.cl, c.k, false);
  }

  if (c.use_frequency) {
    freq_stem_conv_ =
        make_conv("freq.stem.conv", 2, c.freq_stem_channels, 3, 2, 1, false);
    freq_stem_norm_ = make_norm("freq.stem.norm", c.freq_stem_channels, false);
    freq_[0] = make_res("freq0", c.freq_stem_channels, c.freq_widths[0], 2);
    freq_[1] = make_res("freq1", c.freq_widths[0], c.freq_widths[1], 2);
    freq_[2] = make_res("freq2", c.freq_widths[1], c.freq_widths[2], 2);
    freq_fc_ = make_linear("freq_fc", c.freq_widths[2], c.k, false);
  }
}

ModelOutputs Model::forward(const Tensor& batch, bool train_mode,
                            const Tensor* gt_maps) {
  const auto& c = config_;
  FPEMB_CHECK(batch.ndim() == 4 && batch.dim(1) == 1 &&
                  batch.dim(2) == c.input_side && batch.dim(3) == c.input_side,
              ErrorKind::kContract,
              "model input must be (N,1," + std::to_string(c.input_side) +
                  "," + std::to_string(c.input_side) + "), got " +
                  batch.shape_str());
  ModelOutputs out;
  Var x = ops::constant(batch);

  // Rotation alignment: locate, squash into the bound, resample.
  Var loc = x;
  for (int i = 0; i < 3; ++i)
    loc = ops::relu(apply_norm(stn_norm_[i], apply_conv(stn_conv_[i], loc)));
  Var theta_raw = ops::linear(ops::gap(loc), stn_fc_.w, stn_fc_.b);
  out.theta = ops::scale(ops::tanh_act(theta_raw), c.rotation_bound);
  out.aligned = ops::rotate_bilinear(x, out.theta);

  // Shared trunk.
  Var t = ops::relu(apply_norm(stem_norm_, apply_conv(stem_conv_, out.aligned)));
  t = apply_res(trunk_[0], t);
  t = apply_res(trunk_[1], t);

  // Texture branch.
  Var xl = apply_res(texture_[0], t);
  out.x_l = apply_res(texture_[1], xl);

  // Minutia branch with map decoder tap.
  Var m1 = apply_res(minutia_[0], t);
  Var m2 = apply_res(minutia_[1], m1);
  out.t_min = ops::linear(ops::gap(m2), minutia_fc_.w, minutia_fc_.b);

  Var d = apply_up(decoder_[0], m1);
  d = apply_up(decoder_[1], d);
  out.h_e = ops::softplus(apply_conv(map_conv_, d));

  // Texture pooling.
  if (c.use_mam) {
    Var mask_src = out.h_e;
    if (c.mask_from_ground_truth && train_mode) {
      FPEMB_CHECK(gt_maps != nullptr, ErrorKind::kContract,
                  "ground-truth attention requires target maps in training");
      FPEMB_CHECK(gt_maps->ndim() == 4 && gt_maps->dim(0) == batch.dim(0) &&
                      gt_maps->dim(1) == c.map_channels &&
                      gt_maps->dim(2) == c.map_side &&
                      gt_maps->dim(3) == c.map_side,
                  ErrorKind::kContract, "ground-truth map shape mismatch");
      mask_src = ops::constant(*gt_maps);
    }
    const int hl = feature_side();
    Var resized = ops::resize_bilinear(ops::channel_max(mask_src), hl, hl);
    out.attention = ops::sum_normalize_mask(ops::relu(resized));
    out.t_tex = texture_head_mam(out.x_l, out.attention, proj_.w, proj_.b,
                                 texture_fc_.w, texture_fc_.b);
  } else {
    out.t_tex = texture_head_gap(out.x_l, texture_fc_.w, texture_fc_.b);
  }

  // Frequency branch on the aligned image's centered spectrum crop.
  if (c.use_frequency) {
    const int band = spectrum_band(c);
    Var zm = ops::subtract_spatial_mean(out.aligned);
    Var sp = ops::spectrum_patch(zm, band, band);
    Var f = ops::relu(
        apply_norm(freq_stem_norm_, apply_conv(freq_stem_conv_, sp)));
    for (int i = 0; i < 3; ++i) f = apply_res(freq_[i], f);
    out.t_freq = ops::linear(ops::gap(f), freq_fc_.w, freq_fc_.b);
  }
  return out;
}

FingerprintEmbedding assemble_embedding(const std::vector<double>& t_tex,
                                        const std::vector<double>& t_min,
                                        const std::vector<double>& t_freq) {
  FPEMB_CHECK(!t_tex.empty() && !t_min.empty(), ErrorKind::kContract,
              "texture and minutia features are required");
  FingerprintEmbedding emb;
  emb.values.reserve(t_tex.size() + t_min.size() + t_freq.size());
  auto append_normalized = [&emb](const std::vector<double>& v,
                                  const char* branch) {
    double norm = 0.0;
    for (double x : v) norm += x * x;
    norm = std::sqrt(norm);
    FPEMB_CHECK(norm > 1e-30, ErrorKind::kNumerical,
                std::string("zero-norm ") + branch + " feature");
    for (double x : v) emb.values.push_back(x / norm);
  };
  append_normalized(t_tex, "texture");
  append_normalized(t_min, "minutia");
  if (!t_freq.empty()) append_normalized(t_freq, "frequency");
  double norm = 0.0;
  for (double x : emb.values) norm += x * x;
  emb.pre_norm = std::sqrt(norm);
  for (double& x : emb.values) x /= emb.pre_norm;
  return emb;
}

}  // namespace fpemb
