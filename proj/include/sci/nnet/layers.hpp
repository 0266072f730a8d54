#pragma once

// Building blocks of the space-time autoencoder. Every layer keeps the
// activations it needs from its last forward call and turns an upstream
// gradient into parameter gradients (accumulated) and an input gradient.
//
// Activations are (channels, positions) matrices; a position enumerates
// (t, y, x) row-major, so channel c of frame t is a contiguous H*W run.

#include <cstddef>
#include <string>
#include <vector>

#include "sci/nnet/param_set.hpp"
#include "sci/tensor.hpp"

namespace sci::nn {

struct Geometry {
  std::size_t t = 1, h = 1, w = 1;
  std::size_t spatial() const { return h * w; }
  std::size_t positions() const { return t * h * w; }
};

template <class Real>
struct ParamRefs {
  ParamSetT<Real>* values = nullptr;
  ParamSetT<Real>* grads = nullptr;
  const std::vector<char>* trainable = nullptr;

  const Tensor<Real>& value(std::size_t i) const { return (*values)[i]; }
  Tensor<Real>& grad(std::size_t i) const { return (*grads)[i]; }
  bool train(std::size_t i) const { return (*trainable)[i] != 0; }
};

// Throws NumericError naming `layer` if any element is NaN or infinite.
template <class Real>
void check_finite(const Tensor<Real>& t, const std::string& layer);

// out(M,N) = A(M,K) * B(K,N), optionally accumulating.
template <class Real>
void gemm_nn(const Real* a, const Real* b, Real* out, std::size_t m, std::size_t k, std::size_t n, bool accumulate);
// out(M,K) += A(M,N) * B(K,N)^T
template <class Real>
void gemm_nt_acc(const Real* a, const Real* b, Real* out, std::size_t m, std::size_t n, std::size_t k);
// out(K,N) = A(M,K)^T * B(M,N)
template <class Real>
void gemm_tn(const Real* a, const Real* b, Real* out, std::size_t m, std::size_t k, std::size_t n);

// Per-position affine channel map: out = W x + b, W is (out, in).
template <class Real>
class Linear {
 public:
  Linear() = default;
  Linear(std::size_t weight, std::size_t bias, std::size_t in, std::size_t out)
      : w_(weight), b_(bias), in_(in), out_(out) {}

  Tensor<Real> forward(const ParamRefs<Real>& p, const Tensor<Real>& x);
  Tensor<Real> backward(const ParamRefs<Real>& p, const Tensor<Real>& dout, bool need_input_grad);

 private:
  std::size_t w_ = 0, b_ = 0, in_ = 0, out_ = 0;
  Tensor<Real> x_;
};

// Zero-padded convolution with a (kt x 3 x 3) kernel over (t, y, x); kt = 1
// is a per-frame 2-D convolution. Weight flattens to (out, in * kt * 9).
template <class Real>
class Conv {
 public:
  Conv() = default;
  Conv(std::size_t weight, std::size_t bias, std::size_t in, std::size_t out, std::size_t kt)
      : w_(weight), b_(bias), in_(in), out_(out), kt_(kt) {}

  Tensor<Real> forward(const ParamRefs<Real>& p, const Tensor<Real>& x, const Geometry& g);
  Tensor<Real> backward(const ParamRefs<Real>& p, const Tensor<Real>& dout, const Geometry& g, bool need_input_grad);

 private:
  void im2col(const Tensor<Real>& x, const Geometry& g);
  Tensor<Real> col2im(const Tensor<Real>& cols, const Geometry& g) const;

  std::size_t w_ = 0, b_ = 0, in_ = 0, out_ = 0, kt_ = 1;
  Tensor<Real> cols_;
};

// Layer normalization across channels at each position, learned scale/shift.
template <class Real>
class LayerNorm {
 public:
  static constexpr double kEps = 1e-5;
  LayerNorm() = default;
  LayerNorm(std::size_t gamma, std::size_t beta, std::size_t channels) : g_(gamma), b_(beta), c_(channels) {}

  Tensor<Real> forward(const ParamRefs<Real>& p, const Tensor<Real>& x);
  Tensor<Real> backward(const ParamRefs<Real>& p, const Tensor<Real>& dout, bool need_input_grad);

 private:
  std::size_t g_ = 0, b_ = 0, c_ = 0;
  Tensor<Real> xhat_;
  std::vector<Real> rstd_;
};

// Gaussian error linear unit, exact (erf) form.
template <class Real>
class Gelu {
 public:
  Tensor<Real> forward(const Tensor<Real>& x);
  Tensor<Real> backward(const Tensor<Real>& dout);

 private:
  Tensor<Real> x_;
};

// Multi-head self-attention over the T frames, run independently at every
// spatial location.
template <class Real>
class TemporalAttention {
 public:
  TemporalAttention() = default;
  TemporalAttention(Linear<Real> q, Linear<Real> k, Linear<Real> v, Linear<Real> out, std::size_t channels,
                    std::size_t heads)
      : q_(q), k_(k), v_(v), o_(out), c_(channels), heads_(heads) {}

  Tensor<Real> forward(const ParamRefs<Real>& p, const Tensor<Real>& x, const Geometry& g);
  Tensor<Real> backward(const ParamRefs<Real>& p, const Tensor<Real>& dout, const Geometry& g, bool need_input_grad);

  // Post-softmax weights from the last forward, (heads, T, T, H*W).
  const Tensor<Real>& weights() const { return attn_; }

 private:
  Linear<Real> q_, k_, v_, o_;
  std::size_t c_ = 0, heads_ = 1;
  Tensor<Real> q_out_, k_out_, v_out_, attn_;
};

// prenorm -> per-frame 3x3 conv -> residual; prenorm -> temporal attention
// -> residual; prenorm -> channel MLP -> residual.
template <class Real>
class Block {
 public:
  struct Indices {
    std::size_t norm1_g, norm1_b, conv_w, conv_b;
    std::size_t norm2_g, norm2_b, q_w, q_b, k_w, k_b, v_w, v_b, o_w, o_b;
    std::size_t norm3_g, norm3_b, fc1_w, fc1_b, fc2_w, fc2_b;
  };

  Block() = default;
  Block(std::string name, const Indices& idx, std::size_t channels, std::size_t heads, std::size_t hidden);

  Tensor<Real> forward(const ParamRefs<Real>& p, const Tensor<Real>& x, const Geometry& g);
  Tensor<Real> backward(const ParamRefs<Real>& p, const Tensor<Real>& dout, const Geometry& g, bool need_input_grad);

  const std::string& name() const { return name_; }
  const TemporalAttention<Real>& attention() const { return attn_; }
  // Parameter indices owned by this block.
  std::vector<std::size_t> param_indices() const;

 private:
  std::string name_;
  Indices idx_{};
  LayerNorm<Real> ln1_, ln2_, ln3_;
  Conv<Real> conv_;
  TemporalAttention<Real> attn_;
  Linear<Real> fc1_, fc2_;
  Gelu<Real> gelu_;
};

}  // namespace sci::nn
