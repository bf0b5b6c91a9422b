#include "reason/nn/ops.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <stdexcept>

namespace reason::nn {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapR = Eigen::Map<RowMat>;
using CMapR = Eigen::Map<const RowMat>;
using detail::Node;

void require_same(const Tensor &a, const Tensor &b, const char *op) {
  if (a.shape() != b.shape())
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                                shape_str(b.shape()));
}

void require_ndim(const Tensor &a, int n, const char *op) {
  if (a.ndim() != n)
    throw std::invalid_argument(std::string(op) + ": expected " + std::to_string(n) + "-D input, got " +
                                shape_str(a.shape()));
}

// Grad buffer of a parent, or nullptr when it does not need one.
double *pgrad(Node *p) { return p && p->requires_grad ? p->grad.data() : nullptr; }

Node *raw(const Tensor &t) { return t.defined() ? t.node() : nullptr; }

thread_local BranchTrace *active_trace = nullptr;

} // namespace

BranchTrace::BranchTrace() : prev_(active_trace) { active_trace = this; }
BranchTrace::~BranchTrace() { active_trace = prev_; }

Tensor add(const Tensor &a, const Tensor &b) {
  require_same(a, b, "add");
  std::vector<double> v(a.numel());
  for (std::size_t i = 0; i < v.size(); ++i)
    v[i] = a[i] + b[i];
  Node *pa = raw(a), *pb = raw(b);
  return Tensor::make_result(a.shape(), std::move(v), {a, b}, [pa, pb](Node &n) {
    for (Node *p : {pa, pb})
      if (double *g = pgrad(p))
        for (std::size_t i = 0; i < n.grad.size(); ++i)
          g[i] += n.grad[i];
  });
}

Tensor sub(const Tensor &a, const Tensor &b) {
  require_same(a, b, "sub");
  std::vector<double> v(a.numel());
  for (std::size_t i = 0; i < v.size(); ++i)
    v[i] = a[i] - b[i];
  Node *pa = raw(a), *pb = raw(b);
  return Tensor::make_result(a.shape(), std::move(v), {a, b}, [pa, pb](Node &n) {
    if (double *g = pgrad(pa))
      for (std::size_t i = 0; i < n.grad.size(); ++i)
        g[i] += n.grad[i];
    if (double *g = pgrad(pb))
      for (std::size_t i = 0; i < n.grad.size(); ++i)
        g[i] -= n.grad[i];
  });
}

Tensor mul(const Tensor &a, const Tensor &b) {
  require_same(a, b, "mul");
  std::vector<double> v(a.numel());
  for (std::size_t i = 0; i < v.size(); ++i)
    v[i] = a[i] * b[i];
  Node *pa = raw(a), *pb = raw(b);
  return Tensor::make_result(a.shape(), std::move(v), {a, b}, [pa, pb](Node &n) {
    if (double *g = pgrad(pa))
      for (std::size_t i = 0; i < n.grad.size(); ++i)
        g[i] += n.grad[i] * pb->value[i];
    if (double *g = pgrad(pb))
      for (std::size_t i = 0; i < n.grad.size(); ++i)
        g[i] += n.grad[i] * pa->value[i];
  });
}

Tensor scale(const Tensor &a, double s) {
  std::vector<double> v(a.numel());
  for (std::size_t i = 0; i < v.size(); ++i)
    v[i] = a[i] * s;
  Node *pa = raw(a);
  return Tensor::make_result(a.shape(), std::move(v), {a}, [pa, s](Node &n) {
    if (double *g = pgrad(pa))
      for (std::size_t i = 0; i < n.grad.size(); ++i)
        g[i] += n.grad[i] * s;
  });
}

Tensor add_scalar(const Tensor &a, double s) {
  std::vector<double> v(a.numel());
  for (std::size_t i = 0; i < v.size(); ++i)
    v[i] = a[i] + s;
  Node *pa = raw(a);
  return Tensor::make_result(a.shape(), std::move(v), {a}, [pa](Node &n) {
    if (double *g = pgrad(pa))
      for (std::size_t i = 0; i < n.grad.size(); ++i)
        g[i] += n.grad[i];
  });
}

Tensor scale_by(const Tensor &a, const Tensor &s) {
  if (s.numel() != 1)
    throw std::invalid_argument("scale_by: scale must have one element");
  const double k = s[0];
  std::vector<double> v(a.numel());
  for (std::size_t i = 0; i < v.size(); ++i)
    v[i] = a[i] * k;
  Node *pa = raw(a), *ps = raw(s);
  return Tensor::make_result(a.shape(), std::move(v), {a, s}, [pa, ps, k](Node &n) {
    if (double *g = pgrad(pa))
      for (std::size_t i = 0; i < n.grad.size(); ++i)
        g[i] += n.grad[i] * k;
    if (double *g = pgrad(ps)) {
      double acc = 0.0;
      for (std::size_t i = 0; i < n.grad.size(); ++i)
        acc += n.grad[i] * pa->value[i];
      g[0] += acc;
    }
  });
}

Tensor relu(const Tensor &a) {
  std::vector<double> v(a.numel());
  for (std::size_t i = 0; i < v.size(); ++i)
    v[i] = a[i] > 0.0 ? a[i] : 0.0;
  if (active_trace) {
    std::uint64_t word = 0;
    for (std::size_t i = 0; i < v.size(); ++i) {
      word = (word << 1) | (a[i] > 0.0);
      if (i % 64 == 63 || i + 1 == v.size())
        active_trace->record(word), word = 0;
    }
  }
  Node *pa = raw(a);
  return Tensor::make_result(a.shape(), std::move(v), {a}, [pa](Node &n) {
    if (double *g = pgrad(pa))
      for (std::size_t i = 0; i < n.grad.size(); ++i)
        if (pa->value[i] > 0.0)
          g[i] += n.grad[i];
  });
}

Tensor sigmoid(const Tensor &a) {
  std::vector<double> v(a.numel());
  for (std::size_t i = 0; i < v.size(); ++i)
    v[i] = 1.0 / (1.0 + std::exp(-a[i]));
  Node *pa = raw(a);
  return Tensor::make_result(a.shape(), std::move(v), {a}, [pa](Node &n) {
    if (double *g = pgrad(pa))
      for (std::size_t i = 0; i < n.grad.size(); ++i)
        g[i] += n.grad[i] * n.value[i] * (1.0 - n.value[i]);
  });
}

Tensor sum_all(const Tensor &a) {
  double s = 0.0;
  for (double x : a.data())
    s += x;
  Node *pa = raw(a);
  return Tensor::make_result({1}, {s}, {a}, [pa](Node &n) {
    if (double *g = pgrad(pa))
      for (std::size_t i = 0; i < pa->value.size(); ++i)
        g[i] += n.grad[0];
  });
}

Tensor conv2d(const Tensor &x, const Tensor &w, const Tensor &b, int stride, int pad) {
  require_ndim(x, 4, "conv2d");
  require_ndim(w, 4, "conv2d");
  const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int O = w.dim(0), k = w.dim(2);
  if (w.dim(1) != C || w.dim(3) != k)
    throw std::invalid_argument("conv2d: weight " + shape_str(w.shape()) + " incompatible with input " +
                                shape_str(x.shape()));
  if (b.defined() && (b.ndim() != 1 || b.dim(0) != O))
    throw std::invalid_argument("conv2d: bias shape " + shape_str(b.shape()));
  const int Ho = (H + 2 * pad - k) / stride + 1;
  const int Wo = (W + 2 * pad - k) / stride + 1;
  if (Ho <= 0 || Wo <= 0)
    throw std::invalid_argument("conv2d: input too small for kernel");
  const int K = C * k * k;
  const int HWo = Ho * Wo;
  const long P = static_cast<long>(N) * HWo;

  auto cols = std::make_shared<std::vector<double>>(static_cast<std::size_t>(K) * P);
  const double *xv = x.data().data();
  for (int c = 0; c < C; ++c)
    for (int ky = 0; ky < k; ++ky)
      for (int kx = 0; kx < k; ++kx) {
        double *row = cols->data() + static_cast<std::size_t>((c * k + ky) * k + kx) * P;
        for (int n = 0; n < N; ++n) {
          const double *xc = xv + (static_cast<std::size_t>(n) * C + c) * H * W;
          double *dst = row + static_cast<std::size_t>(n) * HWo;
          for (int oy = 0; oy < Ho; ++oy) {
            const int iy = oy * stride - pad + ky;
            for (int ox = 0; ox < Wo; ++ox) {
              const int ix = ox * stride - pad + kx;
              dst[oy * Wo + ox] = (iy >= 0 && iy < H && ix >= 0 && ix < W) ? xc[iy * W + ix] : 0.0;
            }
          }
        }
      }

  RowMat out_mat(O, P);
  out_mat.noalias() = CMapR(w.data().data(), O, K) * CMapR(cols->data(), K, P);
  std::vector<double> out(static_cast<std::size_t>(N) * O * HWo);
  for (int n = 0; n < N; ++n)
    for (int o = 0; o < O; ++o) {
      const double bias = b.defined() ? b[o] : 0.0;
      const double *src = out_mat.data() + static_cast<std::size_t>(o) * P + static_cast<std::size_t>(n) * HWo;
      double *dst = out.data() + (static_cast<std::size_t>(n) * O + o) * HWo;
      for (int i = 0; i < HWo; ++i)
        dst[i] = src[i] + bias;
    }

  Node *px = raw(x), *pw = raw(w), *pb = raw(b);
  if (!grad_enabled())
    cols.reset();
  return Tensor::make_result(
      {N, O, Ho, Wo}, std::move(out), {x, w, b}, [=](Node &n) {
        RowMat G(O, P);
        for (int s = 0; s < N; ++s)
          for (int o = 0; o < O; ++o) {
            const double *src = n.grad.data() + (static_cast<std::size_t>(s) * O + o) * HWo;
            std::copy(src, src + HWo, G.data() + static_cast<std::size_t>(o) * P + static_cast<std::size_t>(s) * HWo);
          }
        if (double *gb = pgrad(pb))
          for (int o = 0; o < O; ++o)
            gb[o] += G.row(o).sum();
        if (double *gw = pgrad(pw))
          MapR(gw, O, K).noalias() += G * CMapR(cols->data(), K, P).transpose();
        if (double *gx = pgrad(px)) {
          RowMat dcols(K, P);
          dcols.noalias() = CMapR(pw->value.data(), O, K).transpose() * G;
          for (int c = 0; c < C; ++c)
            for (int ky = 0; ky < k; ++ky)
              for (int kx = 0; kx < k; ++kx) {
                const double *row = dcols.data() + static_cast<std::size_t>((c * k + ky) * k + kx) * P;
                for (int s = 0; s < N; ++s) {
                  double *gxc = gx + (static_cast<std::size_t>(s) * C + c) * H * W;
                  const double *src = row + static_cast<std::size_t>(s) * HWo;
                  for (int oy = 0; oy < Ho; ++oy) {
                    const int iy = oy * stride - pad + ky;
                    if (iy < 0 || iy >= H)
                      continue;
                    for (int ox = 0; ox < Wo; ++ox) {
                      const int ix = ox * stride - pad + kx;
                      if (ix >= 0 && ix < W)
                        gxc[iy * W + ix] += src[oy * Wo + ox];
                    }
                  }
                }
              }
        }
      });
}

Tensor conv_transpose2x2(const Tensor &x, const Tensor &w, const Tensor &b) {
  require_ndim(x, 4, "conv_transpose2x2");
  const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (w.ndim() != 4 || w.dim(0) != C || w.dim(2) != 2 || w.dim(3) != 2)
    throw std::invalid_argument("conv_transpose2x2: weight " + shape_str(w.shape()));
  const int O = w.dim(1);
  const int HW = H * W;
  const long P = static_cast<long>(N) * HW;
  const int O4 = O * 4;

  RowMat X(C, P);
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      const double *src = x.data().data() + (static_cast<std::size_t>(n) * C + c) * HW;
      std::copy(src, src + HW, X.data() + static_cast<std::size_t>(c) * P + static_cast<std::size_t>(n) * HW);
    }
  RowMat Y(O4, P);
  Y.noalias() = CMapR(w.data().data(), C, O4).transpose() * X;
  const int H2 = 2 * H, W2 = 2 * W;
  std::vector<double> out(static_cast<std::size_t>(N) * O * H2 * W2);
  for (int n = 0; n < N; ++n)
    for (int o = 0; o < O; ++o) {
      const double bias = b.defined() ? b[o] : 0.0;
      double *dst = out.data() + (static_cast<std::size_t>(n) * O + o) * H2 * W2;
      for (int a = 0; a < 2; ++a)
        for (int bb = 0; bb < 2; ++bb) {
          const double *src = Y.data() + static_cast<std::size_t>(o * 4 + a * 2 + bb) * P + static_cast<std::size_t>(n) * HW;
          for (int i = 0; i < H; ++i)
            for (int j = 0; j < W; ++j)
              dst[(2 * i + a) * W2 + 2 * j + bb] = src[i * W + j] + bias;
        }
    }

  Node *px = raw(x), *pw = raw(w), *pb = raw(b);
  auto Xs = std::make_shared<RowMat>(grad_enabled() ? std::move(X) : RowMat());
  return Tensor::make_result({N, O, H2, W2}, std::move(out), {x, w, b}, [=](Node &n) {
    RowMat dY(O4, P);
    for (int s = 0; s < N; ++s)
      for (int o = 0; o < O; ++o) {
        const double *g = n.grad.data() + (static_cast<std::size_t>(s) * O + o) * H2 * W2;
        for (int a = 0; a < 2; ++a)
          for (int bb = 0; bb < 2; ++bb) {
            double *dst = dY.data() + static_cast<std::size_t>(o * 4 + a * 2 + bb) * P + static_cast<std::size_t>(s) * HW;
            for (int i = 0; i < H; ++i)
              for (int j = 0; j < W; ++j)
                dst[i * W + j] = g[(2 * i + a) * W2 + 2 * j + bb];
          }
      }
    if (double *gb = pgrad(pb))
      for (int o = 0; o < O; ++o)
        for (int q = 0; q < 4; ++q)
          gb[o] += dY.row(o * 4 + q).sum();
    if (double *gw = pgrad(pw))
      MapR(gw, C, O4).noalias() += (*Xs) * dY.transpose();
    if (double *gx = pgrad(px)) {
      RowMat dX(C, P);
      dX.noalias() = CMapR(pw->value.data(), C, O4) * dY;
      for (int s = 0; s < N; ++s)
        for (int c = 0; c < C; ++c) {
          double *dst = gx + (static_cast<std::size_t>(s) * C + c) * HW;
          const double *src = dX.data() + static_cast<std::size_t>(c) * P + static_cast<std::size_t>(s) * HW;
          for (int i = 0; i < HW; ++i)
            dst[i] += src[i];
        }
    }
  });
}

Tensor max_pool2(const Tensor &x) {
  require_ndim(x, 4, "max_pool2");
  const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (H % 2 || W % 2)
    throw std::invalid_argument("max_pool2: odd spatial size " + shape_str(x.shape()));
  const int Ho = H / 2, Wo = W / 2;
  std::vector<double> out(static_cast<std::size_t>(N) * C * Ho * Wo);
  auto arg = std::make_shared<std::vector<std::size_t>>(out.size());
  const double *xv = x.data().data();
  std::size_t o = 0;
  for (int nc = 0; nc < N * C; ++nc) {
    const std::size_t base = static_cast<std::size_t>(nc) * H * W;
    for (int i = 0; i < Ho; ++i)
      for (int j = 0; j < Wo; ++j, ++o) {
        std::size_t best = base + (2 * i) * W + 2 * j;
        for (int a = 0; a < 2; ++a)
          for (int b = 0; b < 2; ++b) {
            const std::size_t idx = base + (2 * i + a) * W + 2 * j + b;
            if (xv[idx] > xv[best])
              best = idx;
          }
        (*arg)[o] = best;
        out[o] = xv[best];
        if (active_trace)
          active_trace->record(best);
      }
  }
  Node *px = raw(x);
  return Tensor::make_result({N, C, Ho, Wo}, std::move(out), {x}, [px, arg](Node &n) {
    if (double *g = pgrad(px))
      for (std::size_t i = 0; i < n.grad.size(); ++i)
        g[(*arg)[i]] += n.grad[i];
  });
}

Tensor avg_pool2(const Tensor &x) {
  require_ndim(x, 4, "avg_pool2");
  const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (H % 2 || W % 2)
    throw std::invalid_argument("avg_pool2: odd spatial size " + shape_str(x.shape()));
  const int Ho = H / 2, Wo = W / 2;
  std::vector<double> out(static_cast<std::size_t>(N) * C * Ho * Wo);
  const double *xv = x.data().data();
  std::size_t o = 0;
  for (int nc = 0; nc < N * C; ++nc) {
    const double *b = xv + static_cast<std::size_t>(nc) * H * W;
    for (int i = 0; i < Ho; ++i)
      for (int j = 0; j < Wo; ++j, ++o)
        out[o] = 0.25 * (b[2 * i * W + 2 * j] + b[2 * i * W + 2 * j + 1] + b[(2 * i + 1) * W + 2 * j] +
                         b[(2 * i + 1) * W + 2 * j + 1]);
  }
  Node *px = raw(x);
  return Tensor::make_result({N, C, Ho, Wo}, std::move(out), {x}, [px, N, C, H, W, Ho, Wo](Node &n) {
    double *g = pgrad(px);
    if (!g)
      return;
    std::size_t o = 0;
    for (int nc = 0; nc < N * C; ++nc) {
      double *b = g + static_cast<std::size_t>(nc) * H * W;
      for (int i = 0; i < Ho; ++i)
        for (int j = 0; j < Wo; ++j, ++o) {
          const double q = 0.25 * n.grad[o];
          b[2 * i * W + 2 * j] += q;
          b[2 * i * W + 2 * j + 1] += q;
          b[(2 * i + 1) * W + 2 * j] += q;
          b[(2 * i + 1) * W + 2 * j + 1] += q;
        }
    }
  });
}

Tensor global_avg_pool(const Tensor &x) {
  require_ndim(x, 4, "global_avg_pool");
  const int N = x.dim(0), C = x.dim(1);
  const int HW = x.dim(2) * x.dim(3);
  std::vector<double> out(static_cast<std::size_t>(N) * C);
  for (std::size_t nc = 0; nc < out.size(); ++nc) {
    double s = 0.0;
    const double *b = x.data().data() + nc * HW;
    for (int i = 0; i < HW; ++i)
      s += b[i];
    out[nc] = s / HW;
  }
  Node *px = raw(x);
  return Tensor::make_result({N, C}, std::move(out), {x}, [px, HW](Node &n) {
    if (double *g = pgrad(px))
      for (std::size_t nc = 0; nc < n.grad.size(); ++nc) {
        const double q = n.grad[nc] / HW;
        for (int i = 0; i < HW; ++i)
          g[nc * HW + i] += q;
      }
  });
}

Tensor concat_channels(const std::vector<Tensor> &xs) {
  if (xs.empty())
    throw std::invalid_argument("concat_channels: no inputs");
  const int N = xs[0].dim(0), H = xs[0].dim(2), W = xs[0].dim(3);
  int C = 0;
  for (const auto &t : xs) {
    require_ndim(t, 4, "concat_channels");
    if (t.dim(0) != N || t.dim(2) != H || t.dim(3) != W)
      throw std::invalid_argument("concat_channels: incompatible " + shape_str(t.shape()));
    C += t.dim(1);
  }
  const std::size_t HW = static_cast<std::size_t>(H) * W;
  std::vector<double> out(static_cast<std::size_t>(N) * C * HW);
  std::vector<Node *> ps;
  std::vector<int> offs;
  int off = 0;
  for (const auto &t : xs) {
    const int Ci = t.dim(1);
    for (int n = 0; n < N; ++n)
      std::copy_n(t.data().data() + static_cast<std::size_t>(n) * Ci * HW, Ci * HW,
                  out.data() + (static_cast<std::size_t>(n) * C + off) * HW);
    ps.push_back(raw(t));
    offs.push_back(off);
    off += Ci;
  }
  return Tensor::make_result({N, C, H, W}, std::move(out), xs, [ps, offs, N, C, HW](Node &n) {
    for (std::size_t i = 0; i < ps.size(); ++i) {
      double *g = pgrad(ps[i]);
      if (!g)
        continue;
      const int Ci = ps[i]->shape[1];
      for (int s = 0; s < N; ++s) {
        const double *src = n.grad.data() + (static_cast<std::size_t>(s) * C + offs[i]) * HW;
        double *dst = g + static_cast<std::size_t>(s) * Ci * HW;
        for (std::size_t j = 0; j < Ci * HW; ++j)
          dst[j] += src[j];
      }
    }
  });
}

Tensor concat_cols(const std::vector<Tensor> &xs) {
  if (xs.empty())
    throw std::invalid_argument("concat_cols: no inputs");
  const int N = xs[0].dim(0);
  int D = 0;
  for (const auto &t : xs) {
    require_ndim(t, 2, "concat_cols");
    if (t.dim(0) != N)
      throw std::invalid_argument("concat_cols: row count mismatch");
    D += t.dim(1);
  }
  std::vector<double> out(static_cast<std::size_t>(N) * D);
  std::vector<Node *> ps;
  std::vector<int> offs;
  int off = 0;
  for (const auto &t : xs) {
    const int Di = t.dim(1);
    for (int n = 0; n < N; ++n)
      std::copy_n(t.data().data() + static_cast<std::size_t>(n) * Di, Di, out.data() + static_cast<std::size_t>(n) * D + off);
    ps.push_back(raw(t));
    offs.push_back(off);
    off += Di;
  }
  return Tensor::make_result({N, D}, std::move(out), xs, [ps, offs, N, D](Node &n) {
    for (std::size_t i = 0; i < ps.size(); ++i) {
      double *g = pgrad(ps[i]);
      if (!g)
        continue;
      const int Di = ps[i]->shape[1];
      for (int s = 0; s < N; ++s)
        for (int j = 0; j < Di; ++j)
          g[static_cast<std::size_t>(s) * Di + j] += n.grad[static_cast<std::size_t>(s) * D + offs[i] + j];
    }
  });
}

Tensor group_norm(const Tensor &x, const Tensor &gamma, const Tensor &beta, int groups, double eps) {
  require_ndim(x, 4, "group_norm");
  const int N = x.dim(0), C = x.dim(1);
  const int HW = x.dim(2) * x.dim(3);
  if (groups <= 0 || C % groups)
    throw std::invalid_argument("group_norm: " + std::to_string(C) + " channels not divisible into " +
                                std::to_string(groups) + " groups");
  const int cpg = C / groups;
  const std::size_t M = static_cast<std::size_t>(cpg) * HW;
  auto xhat = std::make_shared<std::vector<double>>(x.numel());
  auto inv_std = std::make_shared<std::vector<double>>(static_cast<std::size_t>(N) * groups);
  std::vector<double> out(x.numel());
  const double *xv = x.data().data();
  for (int n = 0; n < N; ++n)
    for (int g = 0; g < groups; ++g) {
      const std::size_t base = (static_cast<std::size_t>(n) * C + g * cpg) * HW;
      double mean = 0.0;
      for (std::size_t i = 0; i < M; ++i)
        mean += xv[base + i];
      mean /= M;
      double var = 0.0;
      for (std::size_t i = 0; i < M; ++i) {
        const double d = xv[base + i] - mean;
        var += d * d;
      }
      var /= M;
      const double is = 1.0 / std::sqrt(var + eps);
      (*inv_std)[n * groups + g] = is;
      for (int cc = 0; cc < cpg; ++cc) {
        const int c = g * cpg + cc;
        for (int i = 0; i < HW; ++i) {
          const std::size_t idx = base + static_cast<std::size_t>(cc) * HW + i;
          const double h = (xv[idx] - mean) * is;
          (*xhat)[idx] = h;
          out[idx] = gamma[c] * h + beta[c];
        }
      }
    }
  Node *px = raw(x), *pg = raw(gamma), *pb = raw(beta);
  return Tensor::make_result(x.shape(), std::move(out), {x, gamma, beta}, [=](Node &n) {
    double *ggam = pgrad(pg);
    double *gbet = pgrad(pb);
    double *gx = pgrad(px);
    for (int s = 0; s < N; ++s)
      for (int g = 0; g < groups; ++g) {
        const std::size_t base = (static_cast<std::size_t>(s) * C + g * cpg) * HW;
        double sum_dh = 0.0, sum_dh_h = 0.0;
        for (int cc = 0; cc < cpg; ++cc) {
          const int c = g * cpg + cc;
          const double gm = pg->value[c];
          for (int i = 0; i < HW; ++i) {
            const std::size_t idx = base + static_cast<std::size_t>(cc) * HW + i;
            const double dy = n.grad[idx];
            if (ggam)
              ggam[c] += dy * (*xhat)[idx];
            if (gbet)
              gbet[c] += dy;
            const double dh = dy * gm;
            sum_dh += dh;
            sum_dh_h += dh * (*xhat)[idx];
          }
        }
        if (!gx)
          continue;
        const double is = (*inv_std)[s * groups + g];
        const double m_dh = sum_dh / M, m_dhh = sum_dh_h / M;
        for (int cc = 0; cc < cpg; ++cc) {
          const double gm = pg->value[g * cpg + cc];
          for (int i = 0; i < HW; ++i) {
            const std::size_t idx = base + static_cast<std::size_t>(cc) * HW + i;
            gx[idx] += is * (n.grad[idx] * gm - m_dh - (*xhat)[idx] * m_dhh);
          }
        }
      }
  });
}

Tensor linear(const Tensor &x, const Tensor &w, const Tensor &b) {
  require_ndim(x, 2, "linear");
  require_ndim(w, 2, "linear");
  const int N = x.dim(0), D = x.dim(1), M = w.dim(0);
  if (w.dim(1) != D)
    throw std::invalid_argument("linear: weight " + shape_str(w.shape()) + " vs input " + shape_str(x.shape()));
  RowMat Y(N, M);
  Y.noalias() = CMapR(x.data().data(), N, D) * CMapR(w.data().data(), M, D).transpose();
  if (b.defined())
    for (int n = 0; n < N; ++n)
      for (int m = 0; m < M; ++m)
        Y(n, m) += b[m];
  std::vector<double> out(Y.data(), Y.data() + Y.size());
  Node *px = raw(x), *pw = raw(w), *pb = raw(b);
  return Tensor::make_result({N, M}, std::move(out), {x, w, b}, [=](Node &n) {
    CMapR G(n.grad.data(), N, M);
    if (double *gx = pgrad(px))
      MapR(gx, N, D).noalias() += G * CMapR(pw->value.data(), M, D);
    if (double *gw = pgrad(pw))
      MapR(gw, M, D).noalias() += G.transpose() * CMapR(px->value.data(), N, D);
    if (double *gb = pgrad(pb))
      for (int m = 0; m < M; ++m)
        gb[m] += G.col(m).sum();
  });
}

Tensor softmax_lastdim(const Tensor &x) {
  const int K = x.shape().back();
  const std::size_t rows = x.numel() / K;
  std::vector<double> out(x.numel());
  for (std::size_t r = 0; r < rows; ++r) {
    const double *src = x.data().data() + r * K;
    double *dst = out.data() + r * K;
    const double mx = *std::max_element(src, src + K);
    double s = 0.0;
    for (int k = 0; k < K; ++k)
      s += (dst[k] = std::exp(src[k] - mx));
    for (int k = 0; k < K; ++k)
      dst[k] /= s;
  }
  Node *px = raw(x);
  return Tensor::make_result(x.shape(), std::move(out), {x}, [px, K, rows](Node &n) {
    double *g = pgrad(px);
    if (!g)
      return;
    for (std::size_t r = 0; r < rows; ++r) {
      const double *y = n.value.data() + r * K;
      const double *dy = n.grad.data() + r * K;
      double dot = 0.0;
      for (int k = 0; k < K; ++k)
        dot += dy[k] * y[k];
      for (int k = 0; k < K; ++k)
        g[r * K + k] += y[k] * (dy[k] - dot);
    }
  });
}

Tensor reshape(const Tensor &x, Shape shape) {
  if (numel(shape) != x.numel())
    throw std::invalid_argument("reshape: " + shape_str(x.shape()) + " -> " + shape_str(shape));
  std::vector<double> v(x.data().begin(), x.data().end());
  Node *px = raw(x);
  return Tensor::make_result(std::move(shape), std::move(v), {x}, [px](Node &n) {
    if (double *g = pgrad(px))
      for (std::size_t i = 0; i < n.grad.size(); ++i)
        g[i] += n.grad[i];
  });
}

Tensor to_tokens(const Tensor &x) {
  require_ndim(x, 4, "to_tokens");
  const int N = x.dim(0), C = x.dim(1), T = x.dim(2) * x.dim(3);
  std::vector<double> out(x.numel());
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c)
      for (int t = 0; t < T; ++t)
        out[(static_cast<std::size_t>(n) * T + t) * C + c] = x[(static_cast<std::size_t>(n) * C + c) * T + t];
  Node *px = raw(x);
  return Tensor::make_result({N, T, C}, std::move(out), {x}, [px, N, C, T](Node &n) {
    if (double *g = pgrad(px))
      for (int s = 0; s < N; ++s)
        for (int c = 0; c < C; ++c)
          for (int t = 0; t < T; ++t)
            g[(static_cast<std::size_t>(s) * C + c) * T + t] += n.grad[(static_cast<std::size_t>(s) * T + t) * C + c];
  });
}

Tensor mean_tokens(const Tensor &x) {
  require_ndim(x, 3, "mean_tokens");
  const int N = x.dim(0), T = x.dim(1), C = x.dim(2);
  std::vector<double> out(static_cast<std::size_t>(N) * C, 0.0);
  for (int n = 0; n < N; ++n)
    for (int t = 0; t < T; ++t)
      for (int c = 0; c < C; ++c)
        out[static_cast<std::size_t>(n) * C + c] += x[(static_cast<std::size_t>(n) * T + t) * C + c] / T;
  Node *px = raw(x);
  return Tensor::make_result({N, C}, std::move(out), {x}, [px, N, T, C](Node &n) {
    if (double *g = pgrad(px))
      for (int s = 0; s < N; ++s)
        for (int t = 0; t < T; ++t)
          for (int c = 0; c < C; ++c)
            g[(static_cast<std::size_t>(s) * T + t) * C + c] += n.grad[static_cast<std::size_t>(s) * C + c] / T;
  });
}

Tensor bmm(const Tensor &a, const Tensor &b, bool transpose_b) {
  require_ndim(a, 3, "bmm");
  require_ndim(b, 3, "bmm");
  const int N = a.dim(0), P = a.dim(1), Q = a.dim(2);
  const int R = transpose_b ? b.dim(1) : b.dim(2);
  if (b.dim(0) != N || (transpose_b ? b.dim(2) : b.dim(1)) != Q)
    throw std::invalid_argument("bmm: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  const int Br = transpose_b ? R : Q, Bc = transpose_b ? Q : R;
  std::vector<double> out(static_cast<std::size_t>(N) * P * R);
  for (int n = 0; n < N; ++n) {
    CMapR A(a.data().data() + static_cast<std::size_t>(n) * P * Q, P, Q);
    CMapR B(b.data().data() + static_cast<std::size_t>(n) * Br * Bc, Br, Bc);
    MapR Cm(out.data() + static_cast<std::size_t>(n) * P * R, P, R);
    if (transpose_b)
      Cm.noalias() = A * B.transpose();
    else
      Cm.noalias() = A * B;
  }
  Node *pa = raw(a), *pb = raw(b);
  return Tensor::make_result({N, P, R}, std::move(out), {a, b}, [=](Node &n) {
    double *ga = pgrad(pa);
    double *gb = pgrad(pb);
    for (int s = 0; s < N; ++s) {
      CMapR G(n.grad.data() + static_cast<std::size_t>(s) * P * R, P, R);
      CMapR A(pa->value.data() + static_cast<std::size_t>(s) * P * Q, P, Q);
      CMapR B(pb->value.data() + static_cast<std::size_t>(s) * Br * Bc, Br, Bc);
      if (ga) {
        MapR GA(ga + static_cast<std::size_t>(s) * P * Q, P, Q);
        if (transpose_b)
          GA.noalias() += G * B;
        else
          GA.noalias() += G * B.transpose();
      }
      if (gb) {
        MapR GB(gb + static_cast<std::size_t>(s) * Br * Bc, Br, Bc);
        if (transpose_b)
          GB.noalias() += G.transpose() * A;
        else
          GB.noalias() += A.transpose() * G;
      }
    }
  });
}

} // namespace reason::nn
