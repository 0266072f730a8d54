#include "sci/nnet/layers.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>

namespace sci::nn {

namespace {

template <class Real>
using RowMat = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class Real>
using ConstMap = Eigen::Map<const RowMat<Real>>;
template <class Real>
using MutMap = Eigen::Map<RowMat<Real>>;

using Idx = Eigen::Index;

template <class Real>
void add_inplace(Tensor<Real>& a, const Tensor<Real>& b) {
  Real* pa = a.ptr();
  const Real* pb = b.ptr();
  for (std::size_t i = 0; i < a.size(); ++i) pa[i] += pb[i];
}

template <class Real>
Tensor<Real> add(const Tensor<Real>& a, const Tensor<Real>& b) {
  Tensor<Real> out = a;
  add_inplace(out, b);
  return out;
}

}  // namespace

template <class Real>
void check_finite(const Tensor<Real>& t, const std::string& layer) {
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (!std::isfinite(t[i])) {
      throw NumericError("non-finite activation in layer " + layer + " at flat index " + std::to_string(i));
    }
  }
}

template <class Real>
void gemm_nn(const Real* a, const Real* b, Real* out, std::size_t m, std::size_t k, std::size_t n, bool accumulate) {
  ConstMap<Real> A(a, Idx(m), Idx(k));
  ConstMap<Real> B(b, Idx(k), Idx(n));
  MutMap<Real> C(out, Idx(m), Idx(n));
  if (accumulate) {
    C.noalias() += A * B;
  } else {
    C.noalias() = A * B;
  }
}

template <class Real>
void gemm_nt_acc(const Real* a, const Real* b, Real* out, std::size_t m, std::size_t n, std::size_t k) {
  ConstMap<Real> A(a, Idx(m), Idx(n));
  ConstMap<Real> B(b, Idx(k), Idx(n));
  MutMap<Real> C(out, Idx(m), Idx(k));
  C.noalias() += A * B.transpose();
}

template <class Real>
void gemm_tn(const Real* a, const Real* b, Real* out, std::size_t m, std::size_t k, std::size_t n) {
  ConstMap<Real> A(a, Idx(m), Idx(k));
  ConstMap<Real> B(b, Idx(m), Idx(n));
  MutMap<Real> C(out, Idx(k), Idx(n));
  C.noalias() = A.transpose() * B;
}

// ---------------------------------------------------------------- Linear

template <class Real>
Tensor<Real> Linear<Real>::forward(const ParamRefs<Real>& p, const Tensor<Real>& x) {
  const std::size_t n = x.size() / in_;
  x_ = x;
  Tensor<Real> out({out_, n});
  gemm_nn(p.value(w_).ptr(), x.ptr(), out.ptr(), out_, in_, n, false);
  const auto& bias = p.value(b_);
  for (std::size_t o = 0; o < out_; ++o) {
    Real* row = out.ptr() + o * n;
    const Real bo = bias[o];
    for (std::size_t j = 0; j < n; ++j) row[j] += bo;
  }
  return out;
}

template <class Real>
Tensor<Real> Linear<Real>::backward(const ParamRefs<Real>& p, const Tensor<Real>& dout, bool need_input_grad) {
  const std::size_t n = dout.size() / out_;
  if (p.train(w_)) gemm_nt_acc(dout.ptr(), x_.ptr(), p.grad(w_).ptr(), out_, n, in_);
  if (p.train(b_)) {
    auto& db = p.grad(b_);
    for (std::size_t o = 0; o < out_; ++o) {
      const Real* row = dout.ptr() + o * n;
      Real s = 0;
      for (std::size_t j = 0; j < n; ++j) s += row[j];
      db[o] += s;
    }
  }
  if (!need_input_grad) return {};
  Tensor<Real> din({in_, n});
  gemm_tn(p.value(w_).ptr(), dout.ptr(), din.ptr(), out_, in_, n);
  return din;
}

// ------------------------------------------------------------------ Conv

template <class Real>
void Conv<Real>::im2col(const Tensor<Real>& x, const Geometry& g) {
  const std::size_t P = g.positions(), H = g.h, W = g.w, T = g.t;
  const std::size_t rows = in_ * kt_ * 9;
  if (cols_.shape() != Shape{rows, P}) cols_ = Tensor<Real>({rows, P});
  const auto half_t = static_cast<std::ptrdiff_t>(kt_ / 2);
  for (std::size_t ci = 0; ci < in_; ++ci) {
    const Real* src_c = x.ptr() + ci * P;
    for (std::size_t dt = 0; dt < kt_; ++dt) {
      for (std::size_t dy = 0; dy < 3; ++dy) {
        for (std::size_t dx = 0; dx < 3; ++dx) {
          const std::size_t r = ((ci * kt_ + dt) * 3 + dy) * 3 + dx;
          Real* dst_r = cols_.ptr() + r * P;
          const auto ox = static_cast<std::ptrdiff_t>(dx) - 1;
          for (std::size_t t = 0; t < T; ++t) {
            const auto tt = static_cast<std::ptrdiff_t>(t) + static_cast<std::ptrdiff_t>(dt) - half_t;
            for (std::size_t y = 0; y < H; ++y) {
              Real* dst = dst_r + (t * H + y) * W;
              const auto yy = static_cast<std::ptrdiff_t>(y) + static_cast<std::ptrdiff_t>(dy) - 1;
              if (tt < 0 || tt >= static_cast<std::ptrdiff_t>(T) || yy < 0 || yy >= static_cast<std::ptrdiff_t>(H)) {
                std::fill_n(dst, W, Real(0));
                continue;
              }
              const Real* src = src_c + (static_cast<std::size_t>(tt) * H + static_cast<std::size_t>(yy)) * W;
              if (ox < 0) {
                dst[0] = 0;
                std::copy_n(src, W - 1, dst + 1);
              } else if (ox > 0) {
                std::copy_n(src + 1, W - 1, dst);
                dst[W - 1] = 0;
              } else {
                std::copy_n(src, W, dst);
              }
            }
          }
        }
      }
    }
  }
}

template <class Real>
Tensor<Real> Conv<Real>::col2im(const Tensor<Real>& cols, const Geometry& g) const {
  const std::size_t P = g.positions(), H = g.h, W = g.w, T = g.t;
  Tensor<Real> x({in_, P});
  const auto half_t = static_cast<std::ptrdiff_t>(kt_ / 2);
  for (std::size_t ci = 0; ci < in_; ++ci) {
    Real* dst_c = x.ptr() + ci * P;
    for (std::size_t dt = 0; dt < kt_; ++dt) {
      for (std::size_t dy = 0; dy < 3; ++dy) {
        for (std::size_t dx = 0; dx < 3; ++dx) {
          const std::size_t r = ((ci * kt_ + dt) * 3 + dy) * 3 + dx;
          const Real* src_r = cols.ptr() + r * P;
          const auto ox = static_cast<std::ptrdiff_t>(dx) - 1;
          for (std::size_t t = 0; t < T; ++t) {
            const auto tt = static_cast<std::ptrdiff_t>(t) + static_cast<std::ptrdiff_t>(dt) - half_t;
            if (tt < 0 || tt >= static_cast<std::ptrdiff_t>(T)) continue;
            for (std::size_t y = 0; y < H; ++y) {
              const auto yy = static_cast<std::ptrdiff_t>(y) + static_cast<std::ptrdiff_t>(dy) - 1;
              if (yy < 0 || yy >= static_cast<std::ptrdiff_t>(H)) continue;
              const Real* src = src_r + (t * H + y) * W;
              Real* dst = dst_c + (static_cast<std::size_t>(tt) * H + static_cast<std::size_t>(yy)) * W;
              if (ox < 0) {
                for (std::size_t i = 1; i < W; ++i) dst[i - 1] += src[i];
              } else if (ox > 0) {
                for (std::size_t i = 0; i + 1 < W; ++i) dst[i + 1] += src[i];
              } else {
                for (std::size_t i = 0; i < W; ++i) dst[i] += src[i];
              }
            }
          }
        }
      }
    }
  }
  return x;
}

template <class Real>
Tensor<Real> Conv<Real>::forward(const ParamRefs<Real>& p, const Tensor<Real>& x, const Geometry& g) {
  const std::size_t P = g.positions();
  im2col(x, g);
  Tensor<Real> out({out_, P});
  gemm_nn(p.value(w_).ptr(), cols_.ptr(), out.ptr(), out_, in_ * kt_ * 9, P, false);
  const auto& bias = p.value(b_);
  for (std::size_t o = 0; o < out_; ++o) {
    Real* row = out.ptr() + o * P;
    for (std::size_t j = 0; j < P; ++j) row[j] += bias[o];
  }
  return out;
}

template <class Real>
Tensor<Real> Conv<Real>::backward(const ParamRefs<Real>& p, const Tensor<Real>& dout, const Geometry& g,
                                  bool need_input_grad) {
  const std::size_t P = g.positions(), R = in_ * kt_ * 9;
  if (p.train(w_)) gemm_nt_acc(dout.ptr(), cols_.ptr(), p.grad(w_).ptr(), out_, P, R);
  if (p.train(b_)) {
    auto& db = p.grad(b_);
    for (std::size_t o = 0; o < out_; ++o) {
      const Real* row = dout.ptr() + o * P;
      Real s = 0;
      for (std::size_t j = 0; j < P; ++j) s += row[j];
      db[o] += s;
    }
  }
  if (!need_input_grad) return {};
  Tensor<Real> dcols({R, P});
  gemm_tn(p.value(w_).ptr(), dout.ptr(), dcols.ptr(), out_, R, P);
  return col2im(dcols, g);
}

// ------------------------------------------------------------- LayerNorm

template <class Real>
Tensor<Real> LayerNorm<Real>::forward(const ParamRefs<Real>& p, const Tensor<Real>& x) {
  const std::size_t n = x.size() / c_;
  std::vector<Real> mean(n, Real(0)), var(n, Real(0));
  const Real inv_c = Real(1) / static_cast<Real>(c_);
  for (std::size_t c = 0; c < c_; ++c) {
    const Real* row = x.ptr() + c * n;
    for (std::size_t j = 0; j < n; ++j) mean[j] += row[j];
  }
  for (auto& m : mean) m *= inv_c;
  for (std::size_t c = 0; c < c_; ++c) {
    const Real* row = x.ptr() + c * n;
    for (std::size_t j = 0; j < n; ++j) {
      const Real d = row[j] - mean[j];
      var[j] += d * d;
    }
  }
  rstd_.resize(n);
  for (std::size_t j = 0; j < n; ++j) rstd_[j] = Real(1) / std::sqrt(var[j] * inv_c + static_cast<Real>(kEps));
  xhat_ = Tensor<Real>(x.shape());
  Tensor<Real> out(x.shape());
  const auto& gamma = p.value(g_);
  const auto& beta = p.value(b_);
  for (std::size_t c = 0; c < c_; ++c) {
    const Real* row = x.ptr() + c * n;
    Real* xh = xhat_.ptr() + c * n;
    Real* o = out.ptr() + c * n;
    for (std::size_t j = 0; j < n; ++j) {
      xh[j] = (row[j] - mean[j]) * rstd_[j];
      o[j] = gamma[c] * xh[j] + beta[c];
    }
  }
  return out;
}

template <class Real>
Tensor<Real> LayerNorm<Real>::backward(const ParamRefs<Real>& p, const Tensor<Real>& dout, bool need_input_grad) {
  const std::size_t n = dout.size() / c_;
  if (p.train(g_) || p.train(b_)) {
    auto& dg = p.grad(g_);
    auto& db = p.grad(b_);
    for (std::size_t c = 0; c < c_; ++c) {
      const Real* dy = dout.ptr() + c * n;
      const Real* xh = xhat_.ptr() + c * n;
      Real sg = 0, sb = 0;
      for (std::size_t j = 0; j < n; ++j) {
        sg += dy[j] * xh[j];
        sb += dy[j];
      }
      if (p.train(g_)) dg[c] += sg;
      if (p.train(b_)) db[c] += sb;
    }
  }
  if (!need_input_grad) return {};
  const auto& gamma = p.value(g_);
  const Real inv_c = Real(1) / static_cast<Real>(c_);
  std::vector<Real> m1(n, Real(0)), m2(n, Real(0));
  for (std::size_t c = 0; c < c_; ++c) {
    const Real* dy = dout.ptr() + c * n;
    const Real* xh = xhat_.ptr() + c * n;
    for (std::size_t j = 0; j < n; ++j) {
      const Real d = dy[j] * gamma[c];
      m1[j] += d;
      m2[j] += d * xh[j];
    }
  }
  Tensor<Real> dx(dout.shape());
  for (std::size_t c = 0; c < c_; ++c) {
    const Real* dy = dout.ptr() + c * n;
    const Real* xh = xhat_.ptr() + c * n;
    Real* o = dx.ptr() + c * n;
    for (std::size_t j = 0; j < n; ++j) {
      o[j] = rstd_[j] * (dy[j] * gamma[c] - m1[j] * inv_c - xh[j] * m2[j] * inv_c);
    }
  }
  return dx;
}

// ------------------------------------------------------------------ Gelu

template <class Real>
Tensor<Real> Gelu<Real>::forward(const Tensor<Real>& x) {
  x_ = x;
  Tensor<Real> out(x.shape());
  const Real k = Real(1) / std::sqrt(Real(2));
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = Real(0.5) * x[i] * (Real(1) + std::erf(x[i] * k));
  return out;
}

template <class Real>
Tensor<Real> Gelu<Real>::backward(const Tensor<Real>& dout) {
  Tensor<Real> dx(dout.shape());
  const Real k = Real(1) / std::sqrt(Real(2));
  const Real inv_sqrt_2pi = Real(1) / std::sqrt(Real(2) * Real(M_PI));
  for (std::size_t i = 0; i < dout.size(); ++i) {
    const Real x = x_[i];
    const Real cdf = Real(0.5) * (Real(1) + std::erf(x * k));
    const Real pdf = inv_sqrt_2pi * std::exp(Real(-0.5) * x * x);
    dx[i] = dout[i] * (cdf + x * pdf);
  }
  return dx;
}

// ----------------------------------------------------- TemporalAttention

template <class Real>
Tensor<Real> TemporalAttention<Real>::forward(const ParamRefs<Real>& p, const Tensor<Real>& x, const Geometry& g) {
  const std::size_t T = g.t, S = g.spatial(), P = g.positions();
  const std::size_t dh = c_ / heads_;
  const Real scale = Real(1) / std::sqrt(static_cast<Real>(dh));
  q_out_ = q_.forward(p, x);
  k_out_ = k_.forward(p, x);
  v_out_ = v_.forward(p, x);
  attn_ = Tensor<Real>({heads_, T, T, S});
  std::vector<Real> mx(S), sum(S);
  for (std::size_t h = 0; h < heads_; ++h) {
    for (std::size_t t1 = 0; t1 < T; ++t1) {
      Real* rows = attn_.ptr() + (h * T + t1) * T * S;
      for (std::size_t t2 = 0; t2 < T; ++t2) {
        Real* row = rows + t2 * S;
        for (std::size_t d = 0; d < dh; ++d) {
          const std::size_t c = h * dh + d;
          const Real* qr = q_out_.ptr() + c * P + t1 * S;
          const Real* kr = k_out_.ptr() + c * P + t2 * S;
          for (std::size_t s = 0; s < S; ++s) row[s] += qr[s] * kr[s];
        }
        for (std::size_t s = 0; s < S; ++s) row[s] *= scale;
      }
      std::copy_n(rows, S, mx.begin());
      for (std::size_t t2 = 1; t2 < T; ++t2) {
        const Real* row = rows + t2 * S;
        for (std::size_t s = 0; s < S; ++s) mx[s] = std::max(mx[s], row[s]);
      }
      std::fill(sum.begin(), sum.end(), Real(0));
      for (std::size_t t2 = 0; t2 < T; ++t2) {
        Real* row = rows + t2 * S;
        for (std::size_t s = 0; s < S; ++s) {
          row[s] = std::exp(row[s] - mx[s]);
          sum[s] += row[s];
        }
      }
      for (std::size_t t2 = 0; t2 < T; ++t2) {
        Real* row = rows + t2 * S;
        for (std::size_t s = 0; s < S; ++s) row[s] /= sum[s];
      }
    }
  }
  Tensor<Real> a({c_, P});
  for (std::size_t h = 0; h < heads_; ++h) {
    for (std::size_t d = 0; d < dh; ++d) {
      const std::size_t c = h * dh + d;
      for (std::size_t t1 = 0; t1 < T; ++t1) {
        Real* ar = a.ptr() + c * P + t1 * S;
        for (std::size_t t2 = 0; t2 < T; ++t2) {
          const Real* w = attn_.ptr() + ((h * T + t1) * T + t2) * S;
          const Real* vr = v_out_.ptr() + c * P + t2 * S;
          for (std::size_t s = 0; s < S; ++s) ar[s] += w[s] * vr[s];
        }
      }
    }
  }
  return o_.forward(p, a);
}

template <class Real>
Tensor<Real> TemporalAttention<Real>::backward(const ParamRefs<Real>& p, const Tensor<Real>& dout, const Geometry& g,
                                               bool need_input_grad) {
  const std::size_t T = g.t, S = g.spatial(), P = g.positions();
  const std::size_t dh = c_ / heads_;
  const Real scale = Real(1) / std::sqrt(static_cast<Real>(dh));
  const Tensor<Real> da = o_.backward(p, dout, true);
  Tensor<Real> dq({c_, P}), dk({c_, P}), dv({c_, P});
  Tensor<Real> dscore({T, T, S});
  std::vector<Real> dot(S);
  for (std::size_t h = 0; h < heads_; ++h) {
    dscore.fill(Real(0));
    for (std::size_t d = 0; d < dh; ++d) {
      const std::size_t c = h * dh + d;
      for (std::size_t t1 = 0; t1 < T; ++t1) {
        const Real* dar = da.ptr() + c * P + t1 * S;
        for (std::size_t t2 = 0; t2 < T; ++t2) {
          const Real* w = attn_.ptr() + ((h * T + t1) * T + t2) * S;
          const Real* vr = v_out_.ptr() + c * P + t2 * S;
          Real* dvr = dv.ptr() + c * P + t2 * S;
          Real* dsr = dscore.ptr() + (t1 * T + t2) * S;
          for (std::size_t s = 0; s < S; ++s) {
            dvr[s] += w[s] * dar[s];
            dsr[s] += dar[s] * vr[s];
          }
        }
      }
    }
    // Softmax Jacobian: dscore = A * (dA - sum_t2 A dA).
    for (std::size_t t1 = 0; t1 < T; ++t1) {
      std::fill(dot.begin(), dot.end(), Real(0));
      for (std::size_t t2 = 0; t2 < T; ++t2) {
        const Real* w = attn_.ptr() + ((h * T + t1) * T + t2) * S;
        const Real* dsr = dscore.ptr() + (t1 * T + t2) * S;
        for (std::size_t s = 0; s < S; ++s) dot[s] += w[s] * dsr[s];
      }
      for (std::size_t t2 = 0; t2 < T; ++t2) {
        const Real* w = attn_.ptr() + ((h * T + t1) * T + t2) * S;
        Real* dsr = dscore.ptr() + (t1 * T + t2) * S;
        for (std::size_t s = 0; s < S; ++s) dsr[s] = w[s] * (dsr[s] - dot[s]) * scale;
      }
    }
    for (std::size_t d = 0; d < dh; ++d) {
      const std::size_t c = h * dh + d;
      for (std::size_t t1 = 0; t1 < T; ++t1) {
        const Real* qr = q_out_.ptr() + c * P + t1 * S;
        Real* dqr = dq.ptr() + c * P + t1 * S;
        for (std::size_t t2 = 0; t2 < T; ++t2) {
          const Real* dsr = dscore.ptr() + (t1 * T + t2) * S;
          const Real* kr = k_out_.ptr() + c * P + t2 * S;
          Real* dkr = dk.ptr() + c * P + t2 * S;
          for (std::size_t s = 0; s < S; ++s) {
            dqr[s] += dsr[s] * kr[s];
            dkr[s] += dsr[s] * qr[s];
          }
        }
      }
    }
  }
  Tensor<Real> dx = q_.backward(p, dq, need_input_grad);
  Tensor<Real> dxk = k_.backward(p, dk, need_input_grad);
  Tensor<Real> dxv = v_.backward(p, dv, need_input_grad);
  if (!need_input_grad) return {};
  add_inplace(dx, dxk);
  add_inplace(dx, dxv);
  return dx;
}

// ----------------------------------------------------------------- Block

template <class Real>
Block<Real>::Block(std::string name, const Indices& idx, std::size_t channels, std::size_t heads, std::size_t hidden)
    : name_(std::move(name)),
      idx_(idx),
      ln1_(idx.norm1_g, idx.norm1_b, channels),
      ln2_(idx.norm2_g, idx.norm2_b, channels),
      ln3_(idx.norm3_g, idx.norm3_b, channels),
      conv_(idx.conv_w, idx.conv_b, channels, channels, 1),
      attn_(Linear<Real>(idx.q_w, idx.q_b, channels, channels), Linear<Real>(idx.k_w, idx.k_b, channels, channels),
            Linear<Real>(idx.v_w, idx.v_b, channels, channels), Linear<Real>(idx.o_w, idx.o_b, channels, channels),
            channels, heads),
      fc1_(idx.fc1_w, idx.fc1_b, channels, hidden),
      fc2_(idx.fc2_w, idx.fc2_b, hidden, channels) {}

template <class Real>
std::vector<std::size_t> Block<Real>::param_indices() const {
  const auto& i = idx_;
  return {i.norm1_g, i.norm1_b, i.conv_w, i.conv_b, i.norm2_g, i.norm2_b, i.q_w,   i.q_b,   i.k_w,   i.k_b,
          i.v_w,     i.v_b,     i.o_w,    i.o_b,    i.norm3_g, i.norm3_b, i.fc1_w, i.fc1_b, i.fc2_w, i.fc2_b};
}

template <class Real>
Tensor<Real> Block<Real>::forward(const ParamRefs<Real>& p, const Tensor<Real>& x, const Geometry& g) {
  Tensor<Real> x1 = add(x, conv_.forward(p, ln1_.forward(p, x), g));
  check_finite(x1, name_ + ".conv");
  Tensor<Real> x2 = add(x1, attn_.forward(p, ln2_.forward(p, x1), g));
  check_finite(x2, name_ + ".attn");
  Tensor<Real> x3 = add(x2, fc2_.forward(p, gelu_.forward(fc1_.forward(p, ln3_.forward(p, x2)))));
  check_finite(x3, name_ + ".mlp");
  return x3;
}

template <class Real>
Tensor<Real> Block<Real>::backward(const ParamRefs<Real>& p, const Tensor<Real>& dout, const Geometry& g,
                                   bool need_input_grad) {
  Tensor<Real> d2 = dout;
  add_inplace(d2, ln3_.backward(p, fc1_.backward(p, gelu_.backward(fc2_.backward(p, dout, true)), true), true));
  Tensor<Real> d1 = d2;
  add_inplace(d1, ln2_.backward(p, attn_.backward(p, d2, g, true), true));
  // ln1 parameters need the conv input gradient even when the block input does not.
  const bool ln1_needs = p.train(idx_.norm1_g) || p.train(idx_.norm1_b);
  Tensor<Real> dconv = conv_.backward(p, d1, g, need_input_grad || ln1_needs);
  if (!need_input_grad) {
    if (ln1_needs) ln1_.backward(p, dconv, false);
    return {};
  }
  add_inplace(d1, ln1_.backward(p, dconv, true));
  return d1;
}

#define SCI_INSTANTIATE(Real)                                                                                \
  template void check_finite<Real>(const Tensor<Real>&, const std::string&);                                 \
  template void gemm_nn<Real>(const Real*, const Real*, Real*, std::size_t, std::size_t, std::size_t, bool); \
  template void gemm_nt_acc<Real>(const Real*, const Real*, Real*, std::size_t, std::size_t, std::size_t);   \
  template void gemm_tn<Real>(const Real*, const Real*, Real*, std::size_t, std::size_t, std::size_t);       \
  template class Linear<Real>;                                                                               \
  template class Conv<Real>;                                                                                 \
  template class LayerNorm<Real>;                                                                            \
  template class Gelu<Real>;                                                                                 \
  template class TemporalAttention<Real>;                                                                    \
  template class Block<Real>;

SCI_INSTANTIATE(float)
SCI_INSTANTIATE(double)

#undef SCI_INSTANTIATE

}  // namespace sci::nn
