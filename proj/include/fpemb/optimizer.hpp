#pragma once

#include <vector>

#include "fpemb/model.hpp"

namespace fpemb {

// RMSProp with coupled L2 weight decay and two learning-rate groups: STN
// parameters use lr_stn, everything else lr_features.
struct RmsPropConfig {
  double lr_features = 1e-3;
  double lr_stn = 5e-4;
  double weight_decay = 1e-5;
  double decay = 0.99;
  double epsilon = 1e-8;
};

class RmsProp {
 public:
  RmsProp(std::vector<ParamInfo> params, RmsPropConfig config);

  void zero_grad();
  void step();

  const std::vector<ParamInfo>& params() const { return params_; }
  const RmsPropConfig& config() const { return config_; }
  std::vector<Tensor>& square_avg() { return square_avg_; }
  const std::vector<Tensor>& square_avg() const { return square_avg_; }

 private:
  std::vector<ParamInfo> params_;
  std::vector<Tensor> square_avg_;
  RmsPropConfig config_;
};

}  // namespace fpemb
