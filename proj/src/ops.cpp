#include "fpemb/ops.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <memory>
#include <tuple>
#include <utility>

#include "fpemb/common.hpp"

namespace fpemb::ops {
namespace {

Var make_node(Tensor value, std::vector<std::shared_ptr<Node>> parents,
              std::function<void(Node&)> bw) {
  bool rg = false;
  for (const auto& p : parents)
    if (p && p->requires_grad) rg = true;
  Var out(std::move(value), rg);
  if (rg) {
    out.node()->parents = std::move(parents);
    out.node()->backward_fn = std::move(bw);
  }
  return out;
}

bool wants(const Node& self, std::size_t i) {
  return self.parents[i]->requires_grad;
}

void give(Node& self, std::size_t i, Tensor&& g) {
  if (self.parents[i]->requires_grad) self.parents[i]->accumulate(std::move(g));
}

void check_same_shape(const Var& a, const Var& b, const char* op) {
  FPEMB_CHECK(a.value().same_shape(b.value()), ErrorKind::kContract,
              std::string(op) + ": shape mismatch " + a.value().shape_str() +
                  " vs " + b.value().shape_str());
}

MatrixMap slice_mat(Tensor& t, std::int64_t offset, int rows, int cols) {
  return MatrixMap(t.data() + offset, rows, cols);
}
ConstMatrixMap slice_mat(const Tensor& t, std::int64_t offset, int rows,
                         int cols) {
  return ConstMatrixMap(t.data() + offset, rows, cols);
}

void im2col(const double* x, int ci, int h, int w, int kh, int kw, int stride,
            int pad, int ho, int wo, Matrix& cols) {
  for (int c = 0; c < ci; ++c) {
    for (int i = 0; i < kh; ++i) {
      for (int j = 0; j < kw; ++j) {
        const int row = (c * kh + i) * kw + j;
        const double* plane = x + static_cast<std::int64_t>(c) * h * w;
        double* dst = cols.data() + static_cast<std::int64_t>(row) * ho * wo;
        for (int oh = 0; oh < ho; ++oh) {
          const int ih = oh * stride - pad + i;
          if (ih < 0 || ih >= h) {
            for (int ow = 0; ow < wo; ++ow) dst[oh * wo + ow] = 0.0;
            continue;
          }
          for (int ow = 0; ow < wo; ++ow) {
            const int iw = ow * stride - pad + j;
            dst[oh * wo + ow] =
                (iw >= 0 && iw < w) ? plane[ih * w + iw] : 0.0;
          }
        }
      }
    }
  }
}

void col2im(const Matrix& cols, int ci, int h, int w, int kh, int kw,
            int stride, int pad, int ho, int wo, double* gx) {
  for (int c = 0; c < ci; ++c) {
    for (int i = 0; i < kh; ++i) {
      for (int j = 0; j < kw; ++j) {
        const int row = (c * kh + i) * kw + j;
        double* plane = gx + static_cast<std::int64_t>(c) * h * w;
        const double* src =
            cols.data() + static_cast<std::int64_t>(row) * ho * wo;
        for (int oh = 0; oh < ho; ++oh) {
          const int ih = oh * stride - pad + i;
          if (ih < 0 || ih >= h) continue;
          for (int ow = 0; ow < wo; ++ow) {
            const int iw = ow * stride - pad + j;
            if (iw >= 0 && iw < w) plane[ih * w + iw] += src[oh * wo + ow];
          }
        }
      }
    }
  }
}

// Cosine/sine row and column selections of the size-S DFT matrix, for the
// band of output frequencies kept by spectrum_patch.
struct DftBasis {
  Matrix cr, sr;  // (bh, S)
  Matrix cc, sc;  // (S, bw)
};

const DftBasis& dft_basis(int s, int bh, int bw) {
  static std::map<std::tuple<int, int, int>, std::unique_ptr<DftBasis>> cache;
  auto key = std::make_tuple(s, bh, bw);
  auto it = cache.find(key);
  if (it != cache.end()) return *it->second;
  auto basis = std::make_unique<DftBasis>();
  basis->cr.resize(bh, s);
  basis->sr.resize(bh, s);
  basis->cc.resize(s, bw);
  basis->sc.resize(s, bw);
  const double tau = 2.0 * M_PI;
  for (int i = 0; i < bh; ++i) {
    const int u = ((i - bh / 2) % s + s) % s;
    for (int m = 0; m < s; ++m) {
      const double ang = tau * u * m / s;
      basis->cr(i, m) = std::cos(ang);
      basis->sr(i, m) = std::sin(ang);
    }
  }
  for (int j = 0; j < bw; ++j) {
    const int v = ((j - bw / 2) % s + s) % s;
    for (int n = 0; n < s; ++n) {
      const double ang = tau * v * n / s;
      basis->cc(n, j) = std::cos(ang);
      basis->sc(n, j) = std::sin(ang);
    }
  }
  const DftBasis& ref = *basis;
  cache.emplace(key, std::move(basis));
  return ref;
}

}  // namespace

Var constant(Tensor v) { return Var(std::move(v), false); }
Var parameter(Tensor v) { return Var(std::move(v), true); }

Var add(Var a, Var b) {
  check_same_shape(a, b, "add");
  Tensor out(a.value().shape());
  out.array() = a.value().array() + b.value().array();
  return make_node(std::move(out), {a.node(), b.node()}, [](Node& self) {
    give(self, 0, Tensor(self.grad));
    give(self, 1, Tensor(self.grad));
  });
}

Var sub(Var a, Var b) {
  check_same_shape(a, b, "sub");
  Tensor out(a.value().shape());
  out.array() = a.value().array() - b.value().array();
  return make_node(std::move(out), {a.node(), b.node()}, [](Node& self) {
    give(self, 0, Tensor(self.grad));
    if (wants(self, 1)) {
      Tensor g(self.grad.shape());
      g.array() = -self.grad.array();
      give(self, 1, std::move(g));
    }
  });
}

Var mul(Var a, Var b) {
  check_same_shape(a, b, "mul");
  Tensor out(a.value().shape());
  out.array() = a.value().array() * b.value().array();
  return make_node(std::move(out), {a.node(), b.node()}, [](Node& self) {
    if (wants(self, 0)) {
      Tensor g(self.grad.shape());
      g.array() = self.grad.array() * self.parents[1]->value.array();
      give(self, 0, std::move(g));
    }
    if (wants(self, 1)) {
      Tensor g(self.grad.shape());
      g.array() = self.grad.array() * self.parents[0]->value.array();
      give(self, 1, std::move(g));
    }
  });
}

Var scale(Var a, double s) {
  Tensor out(a.value().shape());
  out.array() = a.value().array() * s;
  return make_node(std::move(out), {a.node()}, [s](Node& self) {
    Tensor g(self.grad.shape());
    g.array() = self.grad.array() * s;
    give(self, 0, std::move(g));
  });
}

Var relu(Var x) {
  Tensor out(x.value().shape());
  out.array() = x.value().array().max(0.0);
  return make_node(std::move(out), {x.node()}, [](Node& self) {
    Tensor g(self.grad.shape());
    g.array() =
        (self.parents[0]->value.array() > 0.0).select(self.grad.array(), 0.0);
    give(self, 0, std::move(g));
  });
}

Var tanh_act(Var x) {
  Tensor out(x.value().shape());
  out.array() = x.value().array().tanh();
  return make_node(std::move(out), {x.node()}, [](Node& self) {
    Tensor g(self.grad.shape());
    g.array() = self.grad.array() * (1.0 - self.value.array().square());
    give(self, 0, std::move(g));
  });
}

Var softplus(Var x) {
  Tensor out(x.value().shape());
  const auto& xv = x.value();
  for (std::int64_t i = 0; i < xv.size(); ++i) {
    const double v = xv[i];
    if (v > 30.0)
      out[i] = v;
    else if (v < -30.0)
      out[i] = std::exp(v);
    else
      out[i] = std::log1p(std::exp(v));
  }
  return make_node(std::move(out), {x.node()}, [](Node& self) {
    const Tensor& xv = self.parents[0]->value;
    Tensor g(self.grad.shape());
    for (std::int64_t i = 0; i < xv.size(); ++i)
      g[i] = self.grad[i] / (1.0 + std::exp(-xv[i]));
    give(self, 0, std::move(g));
  });
}

Var sum_all(Var x) {
  Tensor out = Tensor::scalar(x.value().array().sum());
  return make_node(std::move(out), {x.node()}, [](Node& self) {
    give(self, 0, Tensor(self.parents[0]->value.shape(), self.grad[0]));
  });
}

Var mean_all(Var x) {
  FPEMB_CHECK(x.value().size() > 0, ErrorKind::kContract, "mean of empty tensor");
  Tensor out = Tensor::scalar(x.value().array().mean());
  return make_node(std::move(out), {x.node()}, [](Node& self) {
    const double n = static_cast<double>(self.parents[0]->value.size());
    give(self, 0, Tensor(self.parents[0]->value.shape(), self.grad[0] / n));
  });
}

Var matmul(Var a, Var b) {
  FPEMB_CHECK(a.value().ndim() == 2 && b.value().ndim() == 2 &&
                  a.value().dim(1) == b.value().dim(0),
              ErrorKind::kContract, "matmul: incompatible shapes");
  const int m = a.value().dim(0), k = a.value().dim(1), n = b.value().dim(1);
  Tensor out({m, n});
  out.mat(m, n).noalias() = a.value().mat(m, k) * b.value().mat(k, n);
  return make_node(std::move(out), {a.node(), b.node()}, [m, k, n](Node& self) {
    ConstMatrixMap g = std::as_const(self.grad).mat(m, n);
    if (wants(self, 0)) {
      Tensor ga({m, k});
      ga.mat(m, k).noalias() = g * self.parents[1]->value.mat(k, n).transpose();
      give(self, 0, std::move(ga));
    }
    if (wants(self, 1)) {
      Tensor gb({k, n});
      gb.mat(k, n).noalias() = self.parents[0]->value.mat(m, k).transpose() * g;
      give(self, 1, std::move(gb));
    }
  });
}

Var matmul_nt(Var a, Var b) {
  FPEMB_CHECK(a.value().ndim() == 2 && b.value().ndim() == 2 &&
                  a.value().dim(1) == b.value().dim(1),
              ErrorKind::kContract, "matmul_nt: incompatible shapes");
  const int m = a.value().dim(0), k = a.value().dim(1), n = b.value().dim(0);
  Tensor out({m, n});
  out.mat(m, n).noalias() =
      a.value().mat(m, k) * b.value().mat(n, k).transpose();
  return make_node(std::move(out), {a.node(), b.node()}, [m, k, n](Node& self) {
    ConstMatrixMap g = std::as_const(self.grad).mat(m, n);
    if (wants(self, 0)) {
      Tensor ga({m, k});
      ga.mat(m, k).noalias() = g * self.parents[1]->value.mat(n, k);
      give(self, 0, std::move(ga));
    }
    if (wants(self, 1)) {
      Tensor gb({n, k});
      gb.mat(n, k).noalias() = g.transpose() * self.parents[0]->value.mat(m, k);
      give(self, 1, std::move(gb));
    }
  });
}

Var linear(Var x, Var w, Var b) {
  FPEMB_CHECK(x.value().ndim() == 2 && w.value().ndim() == 2 &&
                  x.value().dim(1) == w.value().dim(0),
              ErrorKind::kContract, "linear: incompatible shapes");
  const int n = x.value().dim(0), ci = x.value().dim(1), co = w.value().dim(1);
  const bool has_bias = b.defined();
  if (has_bias)
    FPEMB_CHECK(b.value().ndim() == 1 && b.value().dim(0) == co,
                ErrorKind::kContract, "linear: bias shape mismatch");
  Tensor out({n, co});
  out.mat(n, co).noalias() = x.value().mat(n, ci) * w.value().mat(ci, co);
  if (has_bias) {
    MatrixMap om = out.mat(n, co);
    for (int r = 0; r < n; ++r)
      for (int c = 0; c < co; ++c) om(r, c) += b.value()[c];
  }
  std::vector<std::shared_ptr<Node>> parents = {x.node(), w.node()};
  if (has_bias) parents.push_back(b.node());
  return make_node(std::move(out), std::move(parents),
                   [n, ci, co, has_bias](Node& self) {
                     ConstMatrixMap g = std::as_const(self.grad).mat(n, co);
                     if (wants(self, 0)) {
                       Tensor gx({n, ci});
                       gx.mat(n, ci).noalias() =
                           g * self.parents[1]->value.mat(ci, co).transpose();
                       give(self, 0, std::move(gx));
                     }
                     if (wants(self, 1)) {
                       Tensor gw({ci, co});
                       gw.mat(ci, co).noalias() =
                           self.parents[0]->value.mat(n, ci).transpose() * g;
                       give(self, 1, std::move(gw));
                     }
                     if (has_bias && wants(self, 2)) {
                       Tensor gb({co});
                       for (int c = 0; c < co; ++c) gb[c] = g.col(c).sum();
                       give(self, 2, std::move(gb));
                     }
                   });
}

Var conv2d(Var x, Var w, Var b, int stride, int pad) {
  const Tensor& xv = x.value();
  const Tensor& wv = w.value();
  FPEMB_CHECK(xv.ndim() == 4 && wv.ndim() == 4 && xv.dim(1) == wv.dim(1),
              ErrorKind::kContract, "conv2d: incompatible shapes");
  FPEMB_CHECK(stride >= 1 && pad >= 0, ErrorKind::kContract,
              "conv2d: bad stride/pad");
  const int n = xv.dim(0), ci = xv.dim(1), h = xv.dim(2), wd = xv.dim(3);
  const int co = wv.dim(0), kh = wv.dim(2), kw = wv.dim(3);
  const int ho = (h + 2 * pad - kh) / stride + 1;
  const int wo = (wd + 2 * pad - kw) / stride + 1;
  FPEMB_CHECK(ho > 0 && wo > 0, ErrorKind::kContract, "conv2d: empty output");
  const bool has_bias = b.defined();
  if (has_bias)
    FPEMB_CHECK(b.value().ndim() == 1 && b.value().dim(0) == co,
                ErrorKind::kContract, "conv2d: bias shape mismatch");
  const int ckk = ci * kh * kw;
  const std::int64_t in_plane = static_cast<std::int64_t>(ci) * h * wd;
  const std::int64_t out_plane = static_cast<std::int64_t>(co) * ho * wo;

  Tensor out({n, co, ho, wo});
  Matrix cols(ckk, ho * wo);
  ConstMatrixMap wmat = wv.mat(co, ckk);
  for (int s = 0; s < n; ++s) {
    im2col(xv.data() + s * in_plane, ci, h, wd, kh, kw, stride, pad, ho, wo,
           cols);
    MatrixMap om = slice_mat(out, s * out_plane, co, ho * wo);
    om.noalias() = wmat * cols;
    if (has_bias)
      for (int c = 0; c < co; ++c) om.row(c).array() += b.value()[c];
  }

  std::vector<std::shared_ptr<Node>> parents = {x.node(), w.node()};
  if (has_bias) parents.push_back(b.node());
  auto bw = [=](Node& self) {
    const Tensor& xval = self.parents[0]->value;
    const Tensor& wval = self.parents[1]->value;
    const bool need_x = wants(self, 0);
    const bool need_w = wants(self, 1);
    const bool need_b = has_bias && wants(self, 2);
    Tensor gx, gw, gb;
    if (need_x) gx = Tensor(xval.shape());
    if (need_w) gw = Tensor(wval.shape());
    if (need_b) gb = Tensor({co});
    Matrix cols2(ckk, ho * wo);
    Matrix gcols(ckk, ho * wo);
    ConstMatrixMap wmat2 = wval.mat(co, ckk);
    for (int s = 0; s < n; ++s) {
      ConstMatrixMap g =
          slice_mat(std::as_const(self.grad), s * out_plane, co, ho * wo);
      if (need_w) {
        im2col(xval.data() + s * in_plane, ci, h, wd, kh, kw, stride, pad, ho,
               wo, cols2);
        gw.mat(co, ckk).noalias() += g * cols2.transpose();
      }
      if (need_b)
        for (int c = 0; c < co; ++c) gb[c] += g.row(c).sum();
      if (need_x) {
        gcols.noalias() = wmat2.transpose() * g;
        col2im(gcols, ci, h, wd, kh, kw, stride, pad, ho, wo,
               gx.data() + s * in_plane);
      }
    }
    if (need_x) give(self, 0, std::move(gx));
    if (need_w) give(self, 1, std::move(gw));
    if (need_b) give(self, 2, std::move(gb));
  };
  return make_node(std::move(out), std::move(parents), std::move(bw));
}

Var conv_transpose2d(Var x, Var w, Var b, int stride, int pad, int out_pad) {
  const Tensor& xv = x.value();
  const Tensor& wv = w.value();
  FPEMB_CHECK(xv.ndim() == 4 && wv.ndim() == 4 && xv.dim(1) == wv.dim(0),
              ErrorKind::kContract, "conv_transpose2d: incompatible shapes");
  FPEMB_CHECK(stride >= 1 && pad >= 0 && out_pad >= 0 && out_pad < stride,
              ErrorKind::kContract, "conv_transpose2d: bad stride/pad");
  const int n = xv.dim(0), ci = xv.dim(1), h = xv.dim(2), wd = xv.dim(3);
  const int co = wv.dim(1), kh = wv.dim(2), kw = wv.dim(3);
  const int ho = (h - 1) * stride - 2 * pad + kh + out_pad;
  const int wo = (wd - 1) * stride - 2 * pad + kw + out_pad;
  FPEMB_CHECK(ho > 0 && wo > 0, ErrorKind::kContract,
              "conv_transpose2d: empty output");
  const bool has_bias = b.defined();
  if (has_bias)
    FPEMB_CHECK(b.value().ndim() == 1 && b.value().dim(0) == co,
                ErrorKind::kContract, "conv_transpose2d: bias shape mismatch");
  const int ckk = co * kh * kw;
  const std::int64_t in_plane = static_cast<std::int64_t>(ci) * h * wd;
  const std::int64_t out_plane = static_cast<std::int64_t>(co) * ho * wo;

  Tensor out({n, co, ho, wo});
  Matrix cols(ckk, h * wd);
  ConstMatrixMap wmat = wv.mat(ci, ckk);
  for (int s = 0; s < n; ++s) {
    ConstMatrixMap xs = slice_mat(xv, s * in_plane, ci, h * wd);
    cols.noalias() = wmat.transpose() * xs;
    double* op = out.data() + s * out_plane;
    for (int row = 0; row < ckk; ++row) {
      const int c = row / (kh * kw);
      const int i = (row % (kh * kw)) / kw;
      const int j = row % kw;
      const double* src = cols.data() + static_cast<std::int64_t>(row) * h * wd;
      double* plane = op + static_cast<std::int64_t>(c) * ho * wo;
      for (int r = 0; r < h; ++r) {
        const int oh = r * stride - pad + i;
        if (oh < 0 || oh >= ho) continue;
        for (int cc = 0; cc < wd; ++cc) {
          const int ow = cc * stride - pad + j;
          if (ow >= 0 && ow < wo) plane[oh * wo + ow] += src[r * wd + cc];
        }
      }
    }
    if (has_bias)
      for (int c = 0; c < co; ++c) {
        double* plane = op + static_cast<std::int64_t>(c) * ho * wo;
        for (int p = 0; p < ho * wo; ++p) plane[p] += b.value()[c];
      }
  }

  std::vector<std::shared_ptr<Node>> parents = {x.node(), w.node()};
  if (has_bias) parents.push_back(b.node());
  auto bw = [=](Node& self) {
    const Tensor& xval = self.parents[0]->value;
    const Tensor& wval = self.parents[1]->value;
    const bool need_x = wants(self, 0);
    const bool need_w = wants(self, 1);
    const bool need_b = has_bias && wants(self, 2);
    Tensor gx, gw, gb;
    if (need_x) gx = Tensor(xval.shape());
    if (need_w) gw = Tensor(wval.shape());
    if (need_b) gb = Tensor({co});
    Matrix gcols(ckk, h * wd);
    ConstMatrixMap wmat2 = wval.mat(ci, ckk);
    for (int s = 0; s < n; ++s) {
      const double* gp = self.grad.data() + s * out_plane;
      for (int row = 0; row < ckk; ++row) {
        const int c = row / (kh * kw);
        const int i = (row % (kh * kw)) / kw;
        const int j = row % kw;
        const double* plane = gp + static_cast<std::int64_t>(c) * ho * wo;
        double* dst = gcols.data() + static_cast<std::int64_t>(row) * h * wd;
        for (int r = 0; r < h; ++r) {
          const int oh = r * stride - pad + i;
          for (int cc = 0; cc < wd; ++cc) {
            const int ow = cc * stride - pad + j;
            dst[r * wd + cc] = (oh >= 0 && oh < ho && ow >= 0 && ow < wo)
                                   ? plane[oh * wo + ow]
                                   : 0.0;
          }
        }
      }
      if (need_x) {
        MatrixMap gxs = slice_mat(gx, s * in_plane, ci, h * wd);
        gxs.noalias() += wmat2 * gcols;
      }
      if (need_w) {
        ConstMatrixMap xs = slice_mat(xval, s * in_plane, ci, h * wd);
        gw.mat(ci, ckk).noalias() += xs * gcols.transpose();
      }
      if (need_b)
        for (int c = 0; c < co; ++c) {
          const double* plane = gp + static_cast<std::int64_t>(c) * ho * wo;
          double acc = 0.0;
          for (int p = 0; p < ho * wo; ++p) acc += plane[p];
          gb[c] += acc;
        }
    }
    if (need_x) give(self, 0, std::move(gx));
    if (need_w) give(self, 1, std::move(gw));
    if (need_b) give(self, 2, std::move(gb));
  };
  return make_node(std::move(out), std::move(parents), std::move(bw));
}

Var group_norm(Var x, Var gamma, Var beta, int groups, double eps) {
  const Tensor& xv = x.value();
  FPEMB_CHECK(xv.ndim() == 4, ErrorKind::kContract, "group_norm: need NCHW");
  const int n = xv.dim(0), c = xv.dim(1), h = xv.dim(2), w = xv.dim(3);
  FPEMB_CHECK(groups >= 1 && c % groups == 0, ErrorKind::kContract,
              "group_norm: groups must divide channels");
  FPEMB_CHECK(gamma.value().size() == c && beta.value().size() == c,
              ErrorKind::kContract, "group_norm: affine shape mismatch");
  const int cg = c / groups;
  const std::int64_t hw = static_cast<std::int64_t>(h) * w;
  const std::int64_t block = cg * hw;

  auto xhat = std::make_shared<Tensor>(xv.shape());
  auto inv = std::make_shared<std::vector<double>>(
      static_cast<std::size_t>(n) * groups);
  Tensor out(xv.shape());
  for (int s = 0; s < n; ++s) {
    for (int g = 0; g < groups; ++g) {
      const std::int64_t off = (static_cast<std::int64_t>(s) * c + g * cg) * hw;
      const double* xp = xv.data() + off;
      double m = 0.0;
      for (std::int64_t i = 0; i < block; ++i) m += xp[i];
      m /= static_cast<double>(block);
      double v = 0.0;
      for (std::int64_t i = 0; i < block; ++i) {
        const double d = xp[i] - m;
        v += d * d;
      }
      v /= static_cast<double>(block);
      const double is = 1.0 / std::sqrt(v + eps);
      (*inv)[static_cast<std::size_t>(s) * groups + g] = is;
      double* xh = xhat->data() + off;
      double* op = out.data() + off;
      for (int cc = 0; cc < cg; ++cc) {
        const double ga = gamma.value()[g * cg + cc];
        const double be = beta.value()[g * cg + cc];
        for (std::int64_t i = 0; i < hw; ++i) {
          const double z = (xp[cc * hw + i] - m) * is;
          xh[cc * hw + i] = z;
          op[cc * hw + i] = ga * z + be;
        }
      }
    }
  }

  auto bw = [n, c, h, w, groups, cg, hw, block, xhat, inv](Node& self) {
    const bool need_x = wants(self, 0);
    const bool need_g = wants(self, 1);
    const bool need_b = wants(self, 2);
    const Tensor& gamma_v = self.parents[1]->value;
    Tensor gx, gg, gb;
    if (need_x) gx = Tensor(self.parents[0]->value.shape());
    if (need_g) gg = Tensor({c});
    if (need_b) gb = Tensor({c});
    for (int s = 0; s < n; ++s) {
      for (int g = 0; g < groups; ++g) {
        const std::int64_t off =
            (static_cast<std::int64_t>(s) * c + g * cg) * hw;
        const double* gr = self.grad.data() + off;
        const double* xh = xhat->data() + off;
        const double is = (*inv)[static_cast<std::size_t>(s) * groups + g];
        if (need_g || need_b) {
          for (int cc = 0; cc < cg; ++cc) {
            double sg = 0.0, sb = 0.0;
            for (std::int64_t i = 0; i < hw; ++i) {
              sg += gr[cc * hw + i] * xh[cc * hw + i];
              sb += gr[cc * hw + i];
            }
            if (need_g) gg[g * cg + cc] += sg;
            if (need_b) gb[g * cg + cc] += sb;
          }
        }
        if (need_x) {
          double s1 = 0.0, s2 = 0.0;
          for (int cc = 0; cc < cg; ++cc) {
            const double ga = gamma_v[g * cg + cc];
            for (std::int64_t i = 0; i < hw; ++i) {
              const double gh = gr[cc * hw + i] * ga;
              s1 += gh;
              s2 += gh * xh[cc * hw + i];
            }
          }
          s1 /= static_cast<double>(block);
          s2 /= static_cast<double>(block);
          double* gxp = gx.data() + off;
          for (int cc = 0; cc < cg; ++cc) {
            const double ga = gamma_v[g * cg + cc];
            for (std::int64_t i = 0; i < hw; ++i) {
              const double gh = gr[cc * hw + i] * ga;
              gxp[cc * hw + i] = is * (gh - s1 - xh[cc * hw + i] * s2);
            }
          }
        }
      }
    }
    if (need_x) give(self, 0, std::move(gx));
    if (need_g) give(self, 1, std::move(gg));
    if (need_b) give(self, 2, std::move(gb));
  };
  return make_node(std::move(out), {x.node(), gamma.node(), beta.node()},
                   std::move(bw));
}

Var gap(Var x) {
  const Tensor& xv = x.value();
  FPEMB_CHECK(xv.ndim() == 4, ErrorKind::kContract, "gap: need NCHW");
  const int n = xv.dim(0), c = xv.dim(1);
  const std::int64_t hw = static_cast<std::int64_t>(xv.dim(2)) * xv.dim(3);
  Tensor out({n, c});
  for (int s = 0; s < n; ++s)
    for (int cc = 0; cc < c; ++cc) {
      const double* p = xv.data() + (static_cast<std::int64_t>(s) * c + cc) * hw;
      double acc = 0.0;
      for (std::int64_t i = 0; i < hw; ++i) acc += p[i];
      out.at(s, cc) = acc / static_cast<double>(hw);
    }
  return make_node(std::move(out), {x.node()}, [n, c, hw](Node& self) {
    Tensor gx(self.parents[0]->value.shape());
    for (int s = 0; s < n; ++s)
      for (int cc = 0; cc < c; ++cc) {
        const double g = self.grad.at(s, cc) / static_cast<double>(hw);
        double* p = gx.data() + (static_cast<std::int64_t>(s) * c + cc) * hw;
        for (std::int64_t i = 0; i < hw; ++i) p[i] = g;
      }
    give(self, 0, std::move(gx));
  });
}

namespace {

// Shared softmax-over-contiguous-rows kernel; rows of length len, count many.
void softmax_rows_impl(const double* x, double* y, std::int64_t count,
                       std::int64_t len) {
  for (std::int64_t r = 0; r < count; ++r) {
    const double* xr = x + r * len;
    double* yr = y + r * len;
    double mx = xr[0];
    for (std::int64_t i = 1; i < len; ++i) mx = std::max(mx, xr[i]);
    double sum = 0.0;
    for (std::int64_t i = 0; i < len; ++i) {
      yr[i] = std::exp(xr[i] - mx);
      sum += yr[i];
    }
    for (std::int64_t i = 0; i < len; ++i) yr[i] /= sum;
  }
}

void softmax_backward_impl(const double* y, const double* g, double* gx,
                           std::int64_t count, std::int64_t len) {
  for (std::int64_t r = 0; r < count; ++r) {
    const double* yr = y + r * len;
    const double* gr = g + r * len;
    double* gxr = gx + r * len;
    double dot = 0.0;
    for (std::int64_t i = 0; i < len; ++i) dot += gr[i] * yr[i];
    for (std::int64_t i = 0; i < len; ++i) gxr[i] = yr[i] * (gr[i] - dot);
  }
}

}  // namespace

Var softmax_spatial(Var x) {
  const Tensor& xv = x.value();
  FPEMB_CHECK(xv.ndim() == 4, ErrorKind::kContract, "softmax_spatial: need NCHW");
  const std::int64_t count = static_cast<std::int64_t>(xv.dim(0)) * xv.dim(1);
  const std::int64_t len = static_cast<std::int64_t>(xv.dim(2)) * xv.dim(3);
  Tensor out(xv.shape());
  softmax_rows_impl(xv.data(), out.data(), count, len);
  return make_node(std::move(out), {x.node()}, [count, len](Node& self) {
    Tensor gx(self.value.shape());
    softmax_backward_impl(self.value.data(), self.grad.data(), gx.data(), count,
                          len);
    give(self, 0, std::move(gx));
  });
}

Var softmax_rows(Var x) {
  const Tensor& xv = x.value();
  FPEMB_CHECK(xv.ndim() == 2, ErrorKind::kContract, "softmax_rows: need 2-D");
  const std::int64_t count = xv.dim(0), len = xv.dim(1);
  Tensor out(xv.shape());
  softmax_rows_impl(xv.data(), out.data(), count, len);
  return make_node(std::move(out), {x.node()}, [count, len](Node& self) {
    Tensor gx(self.value.shape());
    softmax_backward_impl(self.value.data(), self.grad.data(), gx.data(), count,
                          len);
    give(self, 0, std::move(gx));
  });
}

Var log_softmax_rows(Var x) {
  const Tensor& xv = x.value();
  FPEMB_CHECK(xv.ndim() == 2, ErrorKind::kContract, "log_softmax: need 2-D");
  const std::int64_t count = xv.dim(0), len = xv.dim(1);
  Tensor out(xv.shape());
  for (std::int64_t r = 0; r < count; ++r) {
    const double* xr = xv.data() + r * len;
    double* yr = out.data() + r * len;
    double mx = xr[0];
    for (std::int64_t i = 1; i < len; ++i) mx = std::max(mx, xr[i]);
    double sum = 0.0;
    for (std::int64_t i = 0; i < len; ++i) sum += std::exp(xr[i] - mx);
    const double lse = mx + std::log(sum);
    for (std::int64_t i = 0; i < len; ++i) yr[i] = xr[i] - lse;
  }
  return make_node(std::move(out), {x.node()}, [count, len](Node& self) {
    Tensor gx(self.value.shape());
    for (std::int64_t r = 0; r < count; ++r) {
      const double* yr = self.value.data() + r * len;
      const double* gr = self.grad.data() + r * len;
      double* gxr = gx.data() + r * len;
      double gsum = 0.0;
      for (std::int64_t i = 0; i < len; ++i) gsum += gr[i];
      for (std::int64_t i = 0; i < len; ++i)
        gxr[i] = gr[i] - std::exp(yr[i]) * gsum;
    }
    give(self, 0, std::move(gx));
  });
}

Var l2_normalize_rows(Var x) {
  const Tensor& xv = x.value();
  FPEMB_CHECK(xv.ndim() == 2, ErrorKind::kContract, "l2_normalize: need 2-D");
  const std::int64_t count = xv.dim(0), len = xv.dim(1);
  Tensor out(xv.shape());
  for (std::int64_t r = 0; r < count; ++r) {
    const double* xr = xv.data() + r * len;
    double sq = 0.0;
    for (std::int64_t i = 0; i < len; ++i) sq += xr[i] * xr[i];
    const double norm = std::sqrt(sq);
    FPEMB_CHECK(norm > 1e-30, ErrorKind::kNumerical,
                "l2_normalize: zero-norm row " + std::to_string(r));
    double* yr = out.data() + r * len;
    for (std::int64_t i = 0; i < len; ++i) yr[i] = xr[i] / norm;
  }
  return make_node(std::move(out), {x.node()}, [count, len](Node& self) {
    const Tensor& xval = self.parents[0]->value;
    Tensor gx(xval.shape());
    for (std::int64_t r = 0; r < count; ++r) {
      const double* xr = xval.data() + r * len;
      const double* gr = self.grad.data() + r * len;
      double* gxr = gx.data() + r * len;
      double sq = 0.0, dot = 0.0;
      for (std::int64_t i = 0; i < len; ++i) {
        sq += xr[i] * xr[i];
        dot += gr[i] * xr[i];
      }
      const double norm = std::sqrt(sq);
      const double inv3 = dot / (norm * norm * norm);
      for (std::int64_t i = 0; i < len; ++i)
        gxr[i] = gr[i] / norm - xr[i] * inv3;
    }
    give(self, 0, std::move(gx));
  });
}

Var concat_features(const std::vector<Var>& parts) {
  FPEMB_CHECK(!parts.empty(), ErrorKind::kContract, "concat: no inputs");
  const int n = parts[0].value().dim(0);
  int total = 0;
  std::vector<int> widths;
  for (const auto& p : parts) {
    FPEMB_CHECK(p.value().ndim() == 2 && p.value().dim(0) == n,
                ErrorKind::kContract, "concat: row-count mismatch");
    widths.push_back(p.value().dim(1));
    total += p.value().dim(1);
  }
  Tensor out({n, total});
  int off = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const Tensor& pv = parts[k].value();
    for (int r = 0; r < n; ++r)
      for (int c = 0; c < widths[k]; ++c) out.at(r, off + c) = pv.at(r, c);
    off += widths[k];
  }
  std::vector<std::shared_ptr<Node>> parents;
  for (const auto& p : parts) parents.push_back(p.node());
  return make_node(std::move(out), std::move(parents),
                   [n, widths](Node& self) {
                     int off = 0;
                     for (std::size_t k = 0; k < widths.size(); ++k) {
                       if (wants(self, k)) {
                         Tensor g({n, widths[k]});
                         for (int r = 0; r < n; ++r)
                           for (int c = 0; c < widths[k]; ++c)
                             g.at(r, c) = self.grad.at(r, off + c);
                         give(self, k, std::move(g));
                       }
                       off += widths[k];
                     }
                   });
}

Var rotate_bilinear(Var img, Var theta) {
  const Tensor& xv = img.value();
  const Tensor& tv = theta.value();
  FPEMB_CHECK(xv.ndim() == 4, ErrorKind::kContract, "rotate: need NCHW");
  FPEMB_CHECK(tv.size() == xv.dim(0), ErrorKind::kContract,
              "rotate: theta count must match batch");
  const int n = xv.dim(0), c = xv.dim(1), h = xv.dim(2), w = xv.dim(3);
  const std::int64_t hw = static_cast<std::int64_t>(h) * w;
  const double cx = (w - 1) * 0.5, cy = (h - 1) * 0.5;
  Tensor out(xv.shape());
  for (int s = 0; s < n; ++s) {
    const double ct = std::cos(tv[s]), st = std::sin(tv[s]);
    const double* ip = xv.data() + static_cast<std::int64_t>(s) * c * hw;
    double* op = out.data() + static_cast<std::int64_t>(s) * c * hw;
    for (int r = 0; r < h; ++r) {
      const double dy = r - cy;
      for (int cl = 0; cl < w; ++cl) {
        const double dx = cl - cx;
        const double sx = cx + ct * dx - st * dy;
        const double sy = cy + st * dx + ct * dy;
        const int u0 = static_cast<int>(std::floor(sx));
        const int v0 = static_cast<int>(std::floor(sy));
        const double fu = sx - u0, fv = sy - v0;
        const double w00 = (1 - fu) * (1 - fv), w01 = fu * (1 - fv);
        const double w10 = (1 - fu) * fv, w11 = fu * fv;
        const bool in00 = u0 >= 0 && u0 < w && v0 >= 0 && v0 < h;
        const bool in01 = u0 + 1 >= 0 && u0 + 1 < w && v0 >= 0 && v0 < h;
        const bool in10 = u0 >= 0 && u0 < w && v0 + 1 >= 0 && v0 + 1 < h;
        const bool in11 = u0 + 1 >= 0 && u0 + 1 < w && v0 + 1 >= 0 && v0 + 1 < h;
        for (int ch = 0; ch < c; ++ch) {
          const double* plane = ip + ch * hw;
          double acc = 0.0;
          if (in00) acc += w00 * plane[v0 * w + u0];
          if (in01) acc += w01 * plane[v0 * w + u0 + 1];
          if (in10) acc += w10 * plane[(v0 + 1) * w + u0];
          if (in11) acc += w11 * plane[(v0 + 1) * w + u0 + 1];
          op[ch * hw + r * w + cl] = acc;
        }
      }
    }
  }
  auto bw = [n, c, h, w, hw, cx, cy](Node& self) {
    const Tensor& xval = self.parents[0]->value;
    const Tensor& tval = self.parents[1]->value;
    const bool need_img = wants(self, 0);
    const bool need_th = wants(self, 1);
    Tensor gimg, gth;
    if (need_img) gimg = Tensor(xval.shape());
    if (need_th) gth = Tensor(tval.shape());
    for (int s = 0; s < n; ++s) {
      const double ct = std::cos(tval[s]), st = std::sin(tval[s]);
      const double* ip = xval.data() + static_cast<std::int64_t>(s) * c * hw;
      const double* gp = self.grad.data() + static_cast<std::int64_t>(s) * c * hw;
      double* gip =
          need_img ? gimg.data() + static_cast<std::int64_t>(s) * c * hw
                   : nullptr;
      double gacc = 0.0;
      for (int r = 0; r < h; ++r) {
        const double dy = r - cy;
        for (int cl = 0; cl < w; ++cl) {
          const double dx = cl - cx;
          const double sx = cx + ct * dx - st * dy;
          const double sy = cy + st * dx + ct * dy;
          const double dsx = -st * dx - ct * dy;
          const double dsy = ct * dx - st * dy;
          const int u0 = static_cast<int>(std::floor(sx));
          const int v0 = static_cast<int>(std::floor(sy));
          const double fu = sx - u0, fv = sy - v0;
          const bool cu0 = u0 >= 0 && u0 < w, cu1 = u0 + 1 >= 0 && u0 + 1 < w;
          const bool cv0 = v0 >= 0 && v0 < h, cv1 = v0 + 1 >= 0 && v0 + 1 < h;
          for (int ch = 0; ch < c; ++ch) {
            const double g = gp[ch * hw + r * w + cl];
            if (g == 0.0) continue;
            const double* plane = ip + ch * hw;
            const double i00 = (cu0 && cv0) ? plane[v0 * w + u0] : 0.0;
            const double i01 = (cu1 && cv0) ? plane[v0 * w + u0 + 1] : 0.0;
            const double i10 = (cu0 && cv1) ? plane[(v0 + 1) * w + u0] : 0.0;
            const double i11 = (cu1 && cv1) ? plane[(v0 + 1) * w + u0 + 1] : 0.0;
            if (need_img) {
              double* gplane = gip + ch * hw;
              if (cu0 && cv0) gplane[v0 * w + u0] += g * (1 - fu) * (1 - fv);
              if (cu1 && cv0) gplane[v0 * w + u0 + 1] += g * fu * (1 - fv);
              if (cu0 && cv1) gplane[(v0 + 1) * w + u0] += g * (1 - fu) * fv;
              if (cu1 && cv1) gplane[(v0 + 1) * w + u0 + 1] += g * fu * fv;
            }
            if (need_th) {
              const double dval_dsx = (1 - fv) * (i01 - i00) + fv * (i11 - i10);
              const double dval_dsy = (1 - fu) * (i10 - i00) + fu * (i11 - i01);
              gacc += g * (dval_dsx * dsx + dval_dsy * dsy);
            }
          }
        }
      }
      if (need_th) gth[s] = gacc;
    }
    if (need_img) give(self, 0, std::move(gimg));
    if (need_th) give(self, 1, std::move(gth));
  };
  return make_node(std::move(out), {img.node(), theta.node()}, std::move(bw));
}

Var resize_bilinear(Var x, int oh, int ow) {
  const Tensor& xv = x.value();
  FPEMB_CHECK(xv.ndim() == 4, ErrorKind::kContract, "resize: need NCHW");
  FPEMB_CHECK(oh >= 1 && ow >= 1, ErrorKind::kContract, "resize: bad size");
  const int n = xv.dim(0), c = xv.dim(1), h = xv.dim(2), w = xv.dim(3);
  const double sh = oh > 1 ? static_cast<double>(h - 1) / (oh - 1) : 0.0;
  const double sw = ow > 1 ? static_cast<double>(w - 1) / (ow - 1) : 0.0;
  const std::int64_t ihw = static_cast<std::int64_t>(h) * w;
  const std::int64_t ohw = static_cast<std::int64_t>(oh) * ow;
  Tensor out({n, c, oh, ow});
  for (int r = 0; r < oh; ++r) {
    const double src_r = std::min(r * sh, static_cast<double>(h - 1));
    const int v0 = std::min(static_cast<int>(src_r), h - 1);
    const int v1 = std::min(v0 + 1, h - 1);
    const double fv = src_r - v0;
    for (int cl = 0; cl < ow; ++cl) {
      const double src_c = std::min(cl * sw, static_cast<double>(w - 1));
      const int u0 = std::min(static_cast<int>(src_c), w - 1);
      const int u1 = std::min(u0 + 1, w - 1);
      const double fu = src_c - u0;
      for (int s = 0; s < n; ++s)
        for (int ch = 0; ch < c; ++ch) {
          const double* plane =
              xv.data() + (static_cast<std::int64_t>(s) * c + ch) * ihw;
          out.data()[(static_cast<std::int64_t>(s) * c + ch) * ohw + r * ow +
                     cl] = (1 - fu) * (1 - fv) * plane[v0 * w + u0] +
                           fu * (1 - fv) * plane[v0 * w + u1] +
                           (1 - fu) * fv * plane[v1 * w + u0] +
                           fu * fv * plane[v1 * w + u1];
        }
    }
  }
  return make_node(
      std::move(out), {x.node()}, [n, c, h, w, oh, ow, sh, sw, ihw, ohw](Node& self) {
        Tensor gx(self.parents[0]->value.shape());
        for (int r = 0; r < oh; ++r) {
          const double src_r = std::min(r * sh, static_cast<double>(h - 1));
          const int v0 = std::min(static_cast<int>(src_r), h - 1);
          const int v1 = std::min(v0 + 1, h - 1);
          const double fv = src_r - v0;
          for (int cl = 0; cl < ow; ++cl) {
            const double src_c = std::min(cl * sw, static_cast<double>(w - 1));
            const int u0 = std::min(static_cast<int>(src_c), w - 1);
            const int u1 = std::min(u0 + 1, w - 1);
            const double fu = src_c - u0;
            for (int s = 0; s < n; ++s)
              for (int ch = 0; ch < c; ++ch) {
                const double g =
                    self.grad.data()[(static_cast<std::int64_t>(s) * c + ch) *
                                         ohw +
                                     r * ow + cl];
                if (g == 0.0) continue;
                double* plane =
                    gx.data() + (static_cast<std::int64_t>(s) * c + ch) * ihw;
                plane[v0 * w + u0] += g * (1 - fu) * (1 - fv);
                plane[v0 * w + u1] += g * fu * (1 - fv);
                plane[v1 * w + u0] += g * (1 - fu) * fv;
                plane[v1 * w + u1] += g * fu * fv;
              }
          }
        }
        give(self, 0, std::move(gx));
      });
}

Var channel_max(Var x) {
  const Tensor& xv = x.value();
  FPEMB_CHECK(xv.ndim() == 4, ErrorKind::kContract, "channel_max: need NCHW");
  const int n = xv.dim(0), c = xv.dim(1), h = xv.dim(2), w = xv.dim(3);
  const std::int64_t hw = static_cast<std::int64_t>(h) * w;
  auto argmax = std::make_shared<std::vector<int>>(
      static_cast<std::size_t>(n) * hw);
  Tensor out({n, 1, h, w});
  for (int s = 0; s < n; ++s) {
    const double* ip = xv.data() + static_cast<std::int64_t>(s) * c * hw;
    double* op = out.data() + static_cast<std::int64_t>(s) * hw;
    for (std::int64_t i = 0; i < hw; ++i) {
      int best = 0;
      double bv = ip[i];
      for (int ch = 1; ch < c; ++ch) {
        const double v = ip[ch * hw + i];
        if (v > bv) {
          bv = v;
          best = ch;
        }
      }
      op[i] = bv;
      (*argmax)[static_cast<std::size_t>(s) * hw + i] = best;
    }
  }
  return make_node(std::move(out), {x.node()}, [n, c, hw, argmax](Node& self) {
    Tensor gx(self.parents[0]->value.shape());
    for (int s = 0; s < n; ++s) {
      const double* gp = self.grad.data() + static_cast<std::int64_t>(s) * hw;
      double* gxp = gx.data() + static_cast<std::int64_t>(s) * c * hw;
      for (std::int64_t i = 0; i < hw; ++i)
        gxp[(*argmax)[static_cast<std::size_t>(s) * hw + i] * hw + i] += gp[i];
    }
    give(self, 0, std::move(gx));
  });
}

Var sum_normalize_mask(Var x) {
  const Tensor& xv = x.value();
  FPEMB_CHECK(xv.ndim() == 4 && xv.dim(1) == 1, ErrorKind::kContract,
              "sum_normalize_mask: need (N,1,H,W)");
  const int n = xv.dim(0);
  const std::int64_t hw = static_cast<std::int64_t>(xv.dim(2)) * xv.dim(3);
  auto sums = std::make_shared<std::vector<double>>(n);
  Tensor out(xv.shape());
  for (int s = 0; s < n; ++s) {
    const double* ip = xv.data() + s * hw;
    double* op = out.data() + s * hw;
    double sum = 0.0;
    for (std::int64_t i = 0; i < hw; ++i) sum += ip[i];
    (*sums)[s] = sum;
    if (sum <= 1e-300) {
      const double u = 1.0 / static_cast<double>(hw);
      for (std::int64_t i = 0; i < hw; ++i) op[i] = u;
    } else {
      for (std::int64_t i = 0; i < hw; ++i) op[i] = ip[i] / sum;
    }
  }
  return make_node(std::move(out), {x.node()}, [n, hw, sums](Node& self) {
    Tensor gx(self.parents[0]->value.shape());
    for (int s = 0; s < n; ++s) {
      const double sum = (*sums)[s];
      if (sum <= 1e-300) continue;  // uniform fallback is locally constant
      const double* gr = self.grad.data() + s * hw;
      const double* yr = self.value.data() + s * hw;
      double* gxr = gx.data() + s * hw;
      double dot = 0.0;
      for (std::int64_t i = 0; i < hw; ++i) dot += gr[i] * yr[i];
      for (std::int64_t i = 0; i < hw; ++i) gxr[i] = (gr[i] - dot) / sum;
    }
    give(self, 0, std::move(gx));
  });
}

Var weighted_pool(Var y, Var a) {
  const Tensor& yv = y.value();
  const Tensor& av = a.value();
  FPEMB_CHECK(yv.ndim() == 4 && av.ndim() == 4 && av.dim(1) == 1 &&
                  yv.dim(0) == av.dim(0) && yv.dim(2) == av.dim(2) &&
                  yv.dim(3) == av.dim(3),
              ErrorKind::kContract, "weighted_pool: shape mismatch");
  const int n = yv.dim(0), c = yv.dim(1);
  const std::int64_t hw = static_cast<std::int64_t>(yv.dim(2)) * yv.dim(3);
  Tensor out({n, c});
  for (int s = 0; s < n; ++s) {
    const double* ap = av.data() + s * hw;
    for (int ch = 0; ch < c; ++ch) {
      const double* yp = yv.data() + (static_cast<std::int64_t>(s) * c + ch) * hw;
      double acc = 0.0;
      for (std::int64_t i = 0; i < hw; ++i) acc += yp[i] * ap[i];
      out.at(s, ch) = acc;
    }
  }
  return make_node(std::move(out), {y.node(), a.node()}, [n, c, hw](Node& self) {
    const Tensor& yval = self.parents[0]->value;
    const Tensor& aval = self.parents[1]->value;
    const bool need_y = wants(self, 0);
    const bool need_a = wants(self, 1);
    Tensor gy, ga;
    if (need_y) gy = Tensor(yval.shape());
    if (need_a) ga = Tensor(aval.shape());
    for (int s = 0; s < n; ++s) {
      const double* ap = aval.data() + s * hw;
      double* gap_ = need_a ? ga.data() + s * hw : nullptr;
      for (int ch = 0; ch < c; ++ch) {
        const double g = self.grad.at(s, ch);
        const double* yp =
            yval.data() + (static_cast<std::int64_t>(s) * c + ch) * hw;
        if (need_y) {
          double* gyp = gy.data() + (static_cast<std::int64_t>(s) * c + ch) * hw;
          for (std::int64_t i = 0; i < hw; ++i) gyp[i] = g * ap[i];
        }
        if (need_a)
          for (std::int64_t i = 0; i < hw; ++i) gap_[i] += g * yp[i];
      }
    }
    if (need_y) give(self, 0, std::move(gy));
    if (need_a) give(self, 1, std::move(ga));
  });
}

Var subtract_spatial_mean(Var x) {
  const Tensor& xv = x.value();
  FPEMB_CHECK(xv.ndim() == 4, ErrorKind::kContract,
              "subtract_spatial_mean: need NCHW");
  const std::int64_t count = static_cast<std::int64_t>(xv.dim(0)) * xv.dim(1);
  const std::int64_t hw = static_cast<std::int64_t>(xv.dim(2)) * xv.dim(3);
  Tensor out(xv.shape());
  for (std::int64_t r = 0; r < count; ++r) {
    const double* ip = xv.data() + r * hw;
    double* op = out.data() + r * hw;
    double m = 0.0;
    for (std::int64_t i = 0; i < hw; ++i) m += ip[i];
    m /= static_cast<double>(hw);
    for (std::int64_t i = 0; i < hw; ++i) op[i] = ip[i] - m;
  }
  return make_node(std::move(out), {x.node()}, [count, hw](Node& self) {
    Tensor gx(self.parents[0]->value.shape());
    for (std::int64_t r = 0; r < count; ++r) {
      const double* gr = self.grad.data() + r * hw;
      double* gxr = gx.data() + r * hw;
      double m = 0.0;
      for (std::int64_t i = 0; i < hw; ++i) m += gr[i];
      m /= static_cast<double>(hw);
      for (std::int64_t i = 0; i < hw; ++i) gxr[i] = gr[i] - m;
    }
    give(self, 0, std::move(gx));
  });
}

Var spectrum_patch(Var x, int band_h, int band_w) {
  const Tensor& xv = x.value();
  FPEMB_CHECK(xv.ndim() == 4 && xv.dim(1) == 1 && xv.dim(2) == xv.dim(3),
              ErrorKind::kContract, "spectrum_patch: need (N,1,S,S)");
  const int n = xv.dim(0), side = xv.dim(2);
  FPEMB_CHECK(band_h >= 1 && band_h <= side && band_w >= 1 && band_w <= side,
              ErrorKind::kContract, "spectrum_patch: band exceeds image");
  const DftBasis& basis = dft_basis(side, band_h, band_w);
  const std::int64_t ss = static_cast<std::int64_t>(side) * side;
  const std::int64_t bb = static_cast<std::int64_t>(band_h) * band_w;
  Tensor out({n, 2, band_h, band_w});
  Matrix t1(band_h, side), t2(band_h, side);
  for (int s = 0; s < n; ++s) {
    ConstMatrixMap img = slice_mat(xv, s * ss, side, side);
    t1.noalias() = basis.cr * img;
    t2.noalias() = basis.sr * img;
    MatrixMap re = slice_mat(out, s * 2 * bb, band_h, band_w);
    MatrixMap im = slice_mat(out, s * 2 * bb + bb, band_h, band_w);
    re.noalias() = t1 * basis.cc - t2 * basis.sc;
    im.noalias() = -(t1 * basis.sc + t2 * basis.cc);
  }
  return make_node(
      std::move(out), {x.node()},
      [n, side, band_h, band_w, ss, bb](Node& self) {
        const DftBasis& basis = dft_basis(side, band_h, band_w);
        Tensor gx(self.parents[0]->value.shape());
        Matrix a(band_h, side), b(band_h, side);
        for (int s = 0; s < n; ++s) {
          ConstMatrixMap gre =
              slice_mat(std::as_const(self.grad), s * 2 * bb, band_h, band_w);
          ConstMatrixMap gim = slice_mat(std::as_const(self.grad),
                                          s * 2 * bb + bb, band_h, band_w);
          a.noalias() = gre * basis.cc.transpose() - gim * basis.sc.transpose();
          b.noalias() = gre * basis.sc.transpose() + gim * basis.cc.transpose();
          MatrixMap gxs = slice_mat(gx, s * ss, side, side);
          gxs.noalias() = basis.cr.transpose() * a - basis.sr.transpose() * b;
        }
        give(self, 0, std::move(gx));
      });
}

Var nll_from_log_probs(Var log_probs, const std::vector<int>& labels) {
  const Tensor& lp = log_probs.value();
  FPEMB_CHECK(lp.ndim() == 2, ErrorKind::kContract, "nll: need 2-D log-probs");
  const int n = lp.dim(0), k = lp.dim(1);
  FPEMB_CHECK(static_cast<int>(labels.size()) == n, ErrorKind::kContract,
              "nll: label count mismatch");
  double loss = 0.0;
  for (int r = 0; r < n; ++r) {
    FPEMB_CHECK(labels[r] >= 0 && labels[r] < k, ErrorKind::kContract,
                "nll: label out of range");
    loss -= lp.at(r, labels[r]);
  }
  loss /= static_cast<double>(n);
  return make_node(Tensor::scalar(loss), {log_probs.node()},
                   [n, k, labels](Node& self) {
                     Tensor g({n, k});
                     const double gv = self.grad[0] / static_cast<double>(n);
                     for (int r = 0; r < n; ++r) g.at(r, labels[r]) = -gv;
                     give(self, 0, std::move(g));
                   });
}

}  // namespace fpemb::ops
