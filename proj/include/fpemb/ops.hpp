#pragma once

#include <vector>

#include "fpemb/graph.hpp"

namespace fpemb::ops {

// Leaves.
Var constant(Tensor v);
Var parameter(Tensor v);

// Elementwise / arithmetic.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double s);
Var relu(Var x);
Var tanh_act(Var x);
Var softplus(Var x);

// Reductions.
Var sum_all(Var x);       // -> shape {1}
Var mean_all(Var x);      // -> shape {1}

// Dense algebra. x:(N,Cin) W:(Cin,Cout) b:(Cout) or undefined.
Var matmul(Var a, Var b);     // (M,K)x(K,N)
Var matmul_nt(Var a, Var b);  // (M,K)x(N,K)^T -> (M,N)
Var linear(Var x, Var w, Var b);

// Convolutions on (N,C,H,W). Weights: conv (Cout,Cin,kh,kw);
// transposed conv (Cin,Cout,kh,kw), output side = stride*side for
// k=3, stride=2, pad=1, out_pad=1.
Var conv2d(Var x, Var w, Var b, int stride, int pad);
Var conv_transpose2d(Var x, Var w, Var b, int stride, int pad, int out_pad);

// Normalization / pooling.
Var group_norm(Var x, Var gamma, Var beta, int groups, double eps = 1e-5);
Var gap(Var x);              // (N,C,H,W) -> (N,C) spatial mean
Var softmax_spatial(Var x);  // softmax over H*W, per (n,c)
Var softmax_rows(Var x);     // (N,K) softmax over K
Var log_softmax_rows(Var x);
Var l2_normalize_rows(Var x);  // zero rows -> numerical error at call site

// Shape plumbing.
Var concat_features(const std::vector<Var>& parts);  // (N,Ki) -> (N,sum Ki)

// Geometry. Rotation convention: output(p) = input(c + R(theta) (p - c)),
// points as (x, y) = (col, row), bilinear sampling, out-of-bounds reads 0.
// Differentiable in image and theta (theta shape (N)).
Var rotate_bilinear(Var img, Var theta);
// Align-corners bilinear resize of (N,C,H,W) to (oh, ow).
Var resize_bilinear(Var x, int oh, int ow);

// Attention-mask helpers.
Var channel_max(Var x);         // (N,C,H,W) -> (N,1,H,W)
Var sum_normalize_mask(Var x);  // per sample: x/sum(x); all-zero -> uniform
Var weighted_pool(Var y, Var a);  // ((N,C,H,W),(N,1,H,W)) -> (N,C)

// Frequency-domain input. subtract_spatial_mean removes the per-sample mean
// of an (N,1,H,W) stack; spectrum_patch computes the centered DFT of each
// (square) slice and returns the (bh,bw) low-frequency crop as two channels
// (real, imag), DC at (bh/2, bw/2). Linear, exact adjoint in backward.
Var subtract_spatial_mean(Var x);
Var spectrum_patch(Var x, int band_h, int band_w);

// Classification loss head: mean over rows of -log_probs[i, labels[i]].
Var nll_from_log_probs(Var log_probs, const std::vector<int>& labels);

}  // namespace fpemb::ops
