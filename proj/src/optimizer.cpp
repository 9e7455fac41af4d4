#include "fpemb/optimizer.hpp"

#include <cmath>

#include "fpemb/common.hpp"

namespace fpemb {

RmsProp::RmsProp(std::vector<ParamInfo> params, RmsPropConfig config)
    : params_(std::move(params)), config_(config) {
  FPEMB_CHECK(config_.lr_features > 0.0 && config_.lr_stn > 0.0,
              ErrorKind::kConfig, "learning rates must be positive");
  FPEMB_CHECK(config_.weight_decay >= 0.0 && config_.decay > 0.0 &&
                  config_.decay < 1.0 && config_.epsilon > 0.0,
              ErrorKind::kConfig, "bad optimizer constants");
  square_avg_.reserve(params_.size());
  for (const ParamInfo& p : params_)
    square_avg_.emplace_back(p.var.value().shape());
}

void RmsProp::zero_grad() {
  for (ParamInfo& p : params_) p.var.clear_grad();
}

void RmsProp::step() {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    ParamInfo& p = params_[i];
    Tensor& value = p.var.value();
    Tensor& sq = square_avg_[i];
    const double lr = p.stn_group ? config_.lr_stn : config_.lr_features;
    const bool has_grad = p.var.has_grad();
    for (std::int64_t j = 0; j < value.size(); ++j) {
      double g = has_grad ? p.var.grad()[j] : 0.0;
      g += config_.weight_decay * value[j];
      sq[j] = config_.decay * sq[j] + (1.0 - config_.decay) * g * g;
      value[j] -= lr * g / (std::sqrt(sq[j]) + config_.epsilon);
    }
  }
}

}  // namespace fpemb
