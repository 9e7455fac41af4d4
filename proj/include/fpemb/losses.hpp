#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fpemb/graph.hpp"
#include "fpemb/tensor.hpp"

namespace fpemb {

// Cosine classification head with a dynamically adapted softmax scale. The
// class-weight rows are trainable and kept unit-norm by renormalizing after
// every optimizer step; the forward pass also normalizes them in-graph so
// logits are exact cosines times the scale.
struct AdaCosHead {
  std::string name;
  Var weights;  // (c_prime, k), unit rows
  double scale = 0.0;
  std::int64_t update_count = 0;
  double last_b_avg = 0.0;
  double last_theta_med = 0.0;
  bool dynamic = true;
};

AdaCosHead make_adacos_head(const std::string& name, int c_prime, int k,
                            std::uint64_t seed, bool dynamic = true);

double adacos_initial_scale(int c_prime);

// Re-estimates the scale from detached batch statistics:
//   B_avg = mean_i sum_{k != y_i} exp(scale_prev * cos_{i,k})
//   theta_med = median of arccos(cos_{i,y_i})
//   scale = log(B_avg) / cos(min(pi/4, theta_med))
void adacos_update_scale(AdaCosHead& head, const Tensor& cosines,
                         const std::vector<int>& labels);

// Tape version used in training: log softmax of scale * cosines. In train
// mode a dynamic head updates its scale from this batch before scoring.
Var adacos_log_probs(AdaCosHead& head, Var features,
                     const std::vector<int>& labels, bool train_mode);

// Plain version: returns the probability rows and applies the same state
// transition. Eval mode leaves the head untouched.
Tensor adacos_probabilities(AdaCosHead& head, const Tensor& features,
                            const std::vector<int>& labels, bool train_mode);

void renormalize_adacos_rows(AdaCosHead& head);

// Map regression: rho * sum of squared differences for one map pair, and the
// batch mean of per-sample sums on the tape.
double minutia_map_loss(const Tensor& h_g, const Tensor& h_e,
                        double rho = 100.0);
Var minutia_map_loss_batch(Var h_e, const Tensor& h_g, double rho = 100.0);

// Mean negative log-likelihood over probability rows (each summing to 1
// within 1e-5); probabilities below 1e-12 are clamped and counted.
double cross_entropy_loss(const Tensor& probabilities,
                          const std::vector<int>& labels,
                          std::int64_t* clamp_warnings = nullptr);

struct LossBreakdown {
  double l_t = 0.0, l_m = 0.0, l_f = 0.0, l_map = 0.0;
  double lambda_map = 10.0;
  double l_all = 0.0;
};

LossBreakdown total_loss(double l_t, double l_m, double l_f, double l_map,
                         double lambda_map = 10.0);

}  // namespace fpemb
