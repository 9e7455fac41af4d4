#include "fpemb/losses.hpp"

#include <algorithm>
#include <cmath>

#include "fpemb/common.hpp"
#include "fpemb/ops.hpp"
#include "fpemb/rng.hpp"

namespace fpemb {
namespace {

void check_labels(const std::vector<int>& labels, int rows, int classes) {
  FPEMB_CHECK(static_cast<int>(labels.size()) == rows, ErrorKind::kContract,
              "label count does not match batch size");
  for (int y : labels)
    FPEMB_CHECK(y >= 0 && y < classes, ErrorKind::kContract,
                "label " + std::to_string(y) + " outside class range");
}

Tensor normalize_rows_plain(const Tensor& m) {
  Tensor out = m;
  const int rows = m.dim(0), cols = m.dim(1);
  for (int i = 0; i < rows; ++i) {
    double norm = 0.0;
    for (int j = 0; j < cols; ++j) norm += m.at(i, j) * m.at(i, j);
    norm = std::sqrt(norm);
    FPEMB_CHECK(norm > 1e-30, ErrorKind::kNumerical,
                "zero-norm feature row " + std::to_string(i));
    for (int j = 0; j < cols; ++j) out.at(i, j) = m.at(i, j) / norm;
  }
  return out;
}

}  // namespace

double adacos_initial_scale(int c_prime) {
  return std::sqrt(2.0) * std::log(static_cast<double>(c_prime - 1));
}

AdaCosHead make_adacos_head(const std::string& name, int c_prime, int k,
                            std::uint64_t seed, bool dynamic) {
  FPEMB_CHECK(c_prime >= 2 && k >= 1, ErrorKind::kConfig,
              "classification head needs c_prime >= 2 and k >= 1");
  AdaCosHead head;
  head.name = name;
  head.dynamic = dynamic;
  head.scale = adacos_initial_scale(c_prime);
  Rng rng(seed);
  Tensor w({c_prime, k});
  for (std::int64_t i = 0; i < w.size(); ++i) w[i] = rng.normal();
  for (int r = 0; r < c_prime; ++r) {
    double norm = 0.0;
    for (int j = 0; j < k; ++j) norm += w.at(r, j) * w.at(r, j);
    norm = std::sqrt(std::max(norm, 1e-30));
    for (int j = 0; j < k; ++j) w.at(r, j) /= norm;
  }
  head.weights = ops::parameter(std::move(w));
  return head;
}

void adacos_update_scale(AdaCosHead& head, const Tensor& cosines,
                         const std::vector<int>& labels) {
  const int n = cosines.dim(0), classes = cosines.dim(1);
  check_labels(labels, n, classes);
  double b_sum = 0.0;
  std::vector<double> target_angles(n);
  for (int i = 0; i < n; ++i) {
    double row = 0.0;
    for (int k = 0; k < classes; ++k) {
      if (k == labels[i]) continue;
      row += std::exp(head.scale * cosines.at(i, k));
    }
    b_sum += row;
    target_angles[i] =
        std::acos(std::clamp(cosines.at(i, labels[i]), -1.0, 1.0));
  }
  const double b_avg = b_sum / n;
  std::sort(target_angles.begin(), target_angles.end());
  const double theta_med =
      n % 2 == 1 ? target_angles[n / 2]
                 : 0.5 * (target_angles[n / 2 - 1] + target_angles[n / 2]);
  head.last_b_avg = b_avg;
  head.last_theta_med = theta_med;
  head.scale = std::log(b_avg) / std::cos(std::min(M_PI / 4.0, theta_med));
  FPEMB_CHECK(std::isfinite(head.scale) && head.scale > 0.0,
              ErrorKind::kNumerical, "adaptive scale left the valid range");
  ++head.update_count;
}

Var adacos_log_probs(AdaCosHead& head, Var features,
                     const std::vector<int>& labels, bool train_mode) {
  Var f = ops::l2_normalize_rows(features);
  Var w = ops::l2_normalize_rows(head.weights);
  Var cosines = ops::matmul_nt(f, w);
  if (train_mode && head.dynamic)
    adacos_update_scale(head, cosines.value(), labels);
  return ops::log_softmax_rows(ops::scale(cosines, head.scale));
}

Tensor adacos_probabilities(AdaCosHead& head, const Tensor& features,
                            const std::vector<int>& labels, bool train_mode) {
  FPEMB_CHECK(features.ndim() == 2, ErrorKind::kContract,
              "features must be (N,K)");
  const Tensor f = normalize_rows_plain(features);
  const Tensor w = normalize_rows_plain(head.weights.value());
  const int n = f.dim(0), k = f.dim(1), classes = w.dim(0);
  FPEMB_CHECK(k == w.dim(1), ErrorKind::kContract,
              "feature dimension does not match class weights");
  Tensor cosines({n, classes});
  cosines.mat(n, classes) = f.mat(n, k) * w.mat(classes, k).transpose();
  if (train_mode && head.dynamic) adacos_update_scale(head, cosines, labels);
  Tensor probs({n, classes});
  for (int i = 0; i < n; ++i) {
    double mx = -1e300;
    for (int c = 0; c < classes; ++c)
      mx = std::max(mx, head.scale * cosines.at(i, c));
    double denom = 0.0;
    for (int c = 0; c < classes; ++c) {
      probs.at(i, c) = std::exp(head.scale * cosines.at(i, c) - mx);
      denom += probs.at(i, c);
    }
    for (int c = 0; c < classes; ++c) probs.at(i, c) /= denom;
  }
  return probs;
}

void renormalize_adacos_rows(AdaCosHead& head) {
  Tensor& w = head.weights.value();
  const int rows = w.dim(0), cols = w.dim(1);
  for (int r = 0; r < rows; ++r) {
    double norm = 0.0;
    for (int j = 0; j < cols; ++j) norm += w.at(r, j) * w.at(r, j);
    norm = std::sqrt(norm);
    if (norm <= 1e-30) continue;
    for (int j = 0; j < cols; ++j) w.at(r, j) /= norm;
  }
}

double minutia_map_loss(const Tensor& h_g, const Tensor& h_e, double rho) {
  FPEMB_CHECK(h_g.same_shape(h_e), ErrorKind::kContract,
              "minutia map shapes differ: " + h_g.shape_str() + " vs " +
                  h_e.shape_str());
  double sum = 0.0;
  for (std::int64_t i = 0; i < h_g.size(); ++i) {
    const double d = h_g[i] - h_e[i];
    sum += d * d;
  }
  return rho * sum;
}

Var minutia_map_loss_batch(Var h_e, const Tensor& h_g, double rho) {
  FPEMB_CHECK(h_e.value().same_shape(h_g), ErrorKind::kContract,
              "minutia map shapes differ: " + h_e.value().shape_str() +
                  " vs " + h_g.shape_str());
  const int n = h_g.dim(0);
  Var diff = ops::sub(h_e, ops::constant(h_g));
  return ops::scale(ops::sum_all(ops::mul(diff, diff)), rho / n);
}

double cross_entropy_loss(const Tensor& probabilities,
                          const std::vector<int>& labels,
                          std::int64_t* clamp_warnings) {
  FPEMB_CHECK(probabilities.ndim() == 2, ErrorKind::kContract,
              "probabilities must be (N,C)");
  const int n = probabilities.dim(0), classes = probabilities.dim(1);
  check_labels(labels, n, classes);
  double loss = 0.0;
  for (int i = 0; i < n; ++i) {
    double row_sum = 0.0;
    for (int c = 0; c < classes; ++c) row_sum += probabilities.at(i, c);
    FPEMB_CHECK(std::abs(row_sum - 1.0) <= 1e-5, ErrorKind::kContract,
                "probability row " + std::to_string(i) + " sums to " +
                    std::to_string(row_sum));
    double p = probabilities.at(i, labels[i]);
    if (p < 1e-12) {
      p = 1e-12;
      if (clamp_warnings) ++*clamp_warnings;
    }
    loss -= std::log(p);
  }
  return loss / n;
}

LossBreakdown total_loss(double l_t, double l_m, double l_f, double l_map,
                         double lambda_map) {
  FPEMB_CHECK(l_t >= 0.0 && l_m >= 0.0 && l_f >= 0.0 && l_map >= 0.0,
              ErrorKind::kContract, "loss parts must be nonnegative");
  LossBreakdown b;
  b.l_t = l_t;
  b.l_m = l_m;
  b.l_f = l_f;
  b.l_map = l_map;
  b.lambda_map = lambda_map;
  b.l_all = l_t + l_m + l_f + lambda_map * l_map;
  return b;
}

}  // namespace fpemb
