#ifndef BACON_NN_OPS_HPP
#define BACON_NN_OPS_HPP

// Fused network ops (convolution, pooling, normalization, linear,
// cross-entropy) with hand-derived backward passes. Direct loops; the
// desk-scale configs keep these small enough for CPU.

#include <cmath>
#include <vector>

#include "bacon/tensor.hpp"

namespace bacon {

// 2-D convolution, stride 1, zero padding `pad`.
// input B x Ci x H x W, weight Co x Ci x K x K, bias Co (may be undefined).
inline Tensor conv2d(const Tensor& input, const Tensor& weight,
                     const Tensor& bias, std::size_t pad) {
  if (input.shape().size() != 4 || weight.shape().size() != 4)
    throw ShapeMismatch("conv2d expects rank-4 input and weight");
  const std::size_t B = input.dim(0), Ci = input.dim(1), H = input.dim(2),
                    W = input.dim(3);
  const std::size_t Co = weight.dim(0), K = weight.dim(2);
  if (weight.dim(1) != Ci || weight.dim(3) != K)
    throw ShapeMismatch("conv2d weight " + shape_str(weight.shape()) +
                        " vs input " + shape_str(input.shape()));
  const std::size_t OH = H + 2 * pad - K + 1, OW = W + 2 * pad - K + 1;

  std::vector<real> out(B * Co * OH * OW, real(0));
  const auto& in = input.data();
  const auto& w = weight.data();
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t co = 0; co < Co; ++co) {
      const real bv = bias.defined() ? bias.data()[co] : real(0);
      for (std::size_t oh = 0; oh < OH; ++oh)
        for (std::size_t ow = 0; ow < OW; ++ow) {
          real acc = bv;
          for (std::size_t ci = 0; ci < Ci; ++ci)
            for (std::size_t kh = 0; kh < K; ++kh) {
              const std::ptrdiff_t ih = std::ptrdiff_t(oh + kh) - std::ptrdiff_t(pad);
              if (ih < 0 || ih >= std::ptrdiff_t(H)) continue;
              for (std::size_t kw = 0; kw < K; ++kw) {
                const std::ptrdiff_t iw = std::ptrdiff_t(ow + kw) - std::ptrdiff_t(pad);
                if (iw < 0 || iw >= std::ptrdiff_t(W)) continue;
                acc += in[((b * Ci + ci) * H + ih) * W + iw] *
                       w[((co * Ci + ci) * K + kh) * K + kw];
              }
            }
          out[((b * Co + co) * OH + oh) * OW + ow] = acc;
        }
    }

  auto in_n = input.node();
  auto w_n = weight.node();
  auto b_n = bias.defined() ? bias.node() : nullptr;
  std::vector<Tensor> parents = {input, weight};
  if (bias.defined()) parents.push_back(bias);
  return make_op(
      {B, Co, OH, OW}, std::move(out), std::move(parents),
      [in_n, w_n, b_n, B, Ci, H, W, Co, K, OH, OW, pad](TensorNode* o) {
        const bool gi = in_n->requires_grad, gw = w_n->requires_grad;
        const bool gb = b_n && b_n->requires_grad;
        if (gi) in_n->ensure_grad();
        if (gw) w_n->ensure_grad();
        if (gb) b_n->ensure_grad();
        for (std::size_t b = 0; b < B; ++b)
          for (std::size_t co = 0; co < Co; ++co)
            for (std::size_t oh = 0; oh < OH; ++oh)
              for (std::size_t ow = 0; ow < OW; ++ow) {
                const real g = o->grad[((b * Co + co) * OH + oh) * OW + ow];
                if (g == real(0)) continue;
                if (gb) b_n->grad[co] += g;
                for (std::size_t ci = 0; ci < Ci; ++ci)
                  for (std::size_t kh = 0; kh < K; ++kh) {
                    const std::ptrdiff_t ih =
                        std::ptrdiff_t(oh + kh) - std::ptrdiff_t(pad);
                    if (ih < 0 || ih >= std::ptrdiff_t(H)) continue;
                    for (std::size_t kw = 0; kw < K; ++kw) {
                      const std::ptrdiff_t iw =
                          std::ptrdiff_t(ow + kw) - std::ptrdiff_t(pad);
                      if (iw < 0 || iw >= std::ptrdiff_t(W)) continue;
                      const std::size_t ii = ((b * Ci + ci) * H + ih) * W + iw;
                      const std::size_t wi = ((co * Ci + ci) * K + kh) * K + kw;
                      if (gi) in_n->grad[ii] += g * w_n->value[wi];
                      if (gw) w_n->grad[wi] += g * in_n->value[ii];
                    }
                  }
              }
      });
}

// Average pooling, fixed divisor kernel*kernel (padded cells count).
inline Tensor avg_pool2d(const Tensor& input, std::size_t kernel,
                         std::size_t stride, std::size_t pad) {
  if (input.shape().size() != 4) throw ShapeMismatch("avg_pool2d expects rank 4");
  const std::size_t B = input.dim(0), C = input.dim(1), H = input.dim(2),
                    W = input.dim(3);
  const std::size_t OH = (H + 2 * pad - kernel) / stride + 1;
  const std::size_t OW = (W + 2 * pad - kernel) / stride + 1;
  const real inv = real(1) / real(kernel * kernel);

  std::vector<real> out(B * C * OH * OW, real(0));
  const auto& in = input.data();
  for (std::size_t bc = 0; bc < B * C; ++bc)
    for (std::size_t oh = 0; oh < OH; ++oh)
      for (std::size_t ow = 0; ow < OW; ++ow) {
        real acc = 0;
        for (std::size_t kh = 0; kh < kernel; ++kh) {
          const std::ptrdiff_t ih =
              std::ptrdiff_t(oh * stride + kh) - std::ptrdiff_t(pad);
          if (ih < 0 || ih >= std::ptrdiff_t(H)) continue;
          for (std::size_t kw = 0; kw < kernel; ++kw) {
            const std::ptrdiff_t iw =
                std::ptrdiff_t(ow * stride + kw) - std::ptrdiff_t(pad);
            if (iw < 0 || iw >= std::ptrdiff_t(W)) continue;
            acc += in[(bc * H + ih) * W + iw];
          }
        }
        out[(bc * OH + oh) * OW + ow] = acc * inv;
      }

  auto in_n = input.node();
  return make_op({B, C, OH, OW}, std::move(out), {input},
                 [in_n, B, C, H, W, OH, OW, kernel, stride, pad, inv](TensorNode* o) {
                   in_n->ensure_grad();
                   for (std::size_t bc = 0; bc < B * C; ++bc)
                     for (std::size_t oh = 0; oh < OH; ++oh)
                       for (std::size_t ow = 0; ow < OW; ++ow) {
                         const real g = o->grad[(bc * OH + oh) * OW + ow] * inv;
                         if (g == real(0)) continue;
                         for (std::size_t kh = 0; kh < kernel; ++kh) {
                           const std::ptrdiff_t ih =
                               std::ptrdiff_t(oh * stride + kh) - std::ptrdiff_t(pad);
                           if (ih < 0 || ih >= std::ptrdiff_t(H)) continue;
                           for (std::size_t kw = 0; kw < kernel; ++kw) {
                             const std::ptrdiff_t iw =
                                 std::ptrdiff_t(ow * stride + kw) - std::ptrdiff_t(pad);
                             if (iw < 0 || iw >= std::ptrdiff_t(W)) continue;
                             in_n->grad[(bc * H + ih) * W + iw] += g;
                           }
                         }
                       }
                 });
}

// Per-sample, per-channel normalization over spatial dims; no affine.
inline Tensor instance_norm2d(const Tensor& input, real eps = real(1e-5)) {
  if (input.shape().size() != 4)
    throw ShapeMismatch("instance_norm2d expects rank 4");
  const std::size_t B = input.dim(0), C = input.dim(1),
                    S = input.dim(2) * input.dim(3);
  std::vector<real> out(input.size());
  auto inv_std = std::make_shared<std::vector<real>>(B * C);
  const auto& in = input.data();
  for (std::size_t bc = 0; bc < B * C; ++bc) {
    real mu = 0;
    for (std::size_t i = 0; i < S; ++i) mu += in[bc * S + i];
    mu /= real(S);
    real var = 0;
    for (std::size_t i = 0; i < S; ++i) {
      const real d = in[bc * S + i] - mu;
      var += d * d;
    }
    var /= real(S);
    const real is = real(1) / std::sqrt(var + eps);
    (*inv_std)[bc] = is;
    for (std::size_t i = 0; i < S; ++i) out[bc * S + i] = (in[bc * S + i] - mu) * is;
  }
  auto in_n = input.node();
  auto out_copy = std::make_shared<std::vector<real>>(out);
  return make_op(input.shape(), std::move(out), {input},
                 [in_n, inv_std, out_copy, B, C, S](TensorNode* o) {
                   in_n->ensure_grad();
                   for (std::size_t bc = 0; bc < B * C; ++bc) {
                     real gsum = 0, gysum = 0;
                     for (std::size_t i = 0; i < S; ++i) {
                       gsum += o->grad[bc * S + i];
                       gysum += o->grad[bc * S + i] * (*out_copy)[bc * S + i];
                     }
                     const real gmean = gsum / real(S);
                     const real gymean = gysum / real(S);
                     const real is = (*inv_std)[bc];
                     for (std::size_t i = 0; i < S; ++i)
                       in_n->grad[bc * S + i] +=
                           is * (o->grad[bc * S + i] - gmean -
                                 (*out_copy)[bc * S + i] * gymean);
                   }
                 });
}

// x[B x K] * W[K x M] + b[M] broadcast over rows.
inline Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  Tensor y = matmul(x, w);
  if (!b.defined()) return y;
  const std::size_t B = y.dim(0), M = y.dim(1);
  if (b.size() != M) throw ShapeMismatch("linear bias length");
  std::vector<real> out = y.data();
  for (std::size_t i = 0; i < B; ++i)
    for (std::size_t j = 0; j < M; ++j) out[i * M + j] += b.data()[j];
  auto y_n = y.node();
  auto b_n = b.node();
  return make_op({B, M}, std::move(out), {y, b}, [y_n, b_n, B, M](TensorNode* o) {
    if (y_n->requires_grad) {
      y_n->ensure_grad();
      for (std::size_t i = 0; i < o->grad.size(); ++i) y_n->grad[i] += o->grad[i];
    }
    if (b_n->requires_grad) {
      b_n->ensure_grad();
      for (std::size_t i = 0; i < B; ++i)
        for (std::size_t j = 0; j < M; ++j) b_n->grad[j] += o->grad[i * M + j];
    }
  });
}

// Mean softmax cross-entropy over the batch.
inline Tensor cross_entropy(const Tensor& logits,
                            const std::vector<std::size_t>& labels) {
  if (logits.shape().size() != 2) throw ShapeMismatch("cross_entropy rank");
  const std::size_t B = logits.dim(0), C = logits.dim(1);
  if (labels.size() != B) throw ShapeMismatch("cross_entropy label count");
  for (auto y : labels)
    if (y >= C) throw LabelOutOfRange("label " + std::to_string(y));

  auto softmax = std::make_shared<std::vector<real>>(B * C);
  const auto& lv = logits.data();
  real loss = 0;
  for (std::size_t i = 0; i < B; ++i) {
    real mx = lv[i * C];
    for (std::size_t j = 1; j < C; ++j) mx = std::max(mx, lv[i * C + j]);
    real z = 0;
    for (std::size_t j = 0; j < C; ++j) z += std::exp(lv[i * C + j] - mx);
    const real lse = mx + std::log(z);
    loss += lse - lv[i * C + labels[i]];
    for (std::size_t j = 0; j < C; ++j)
      (*softmax)[i * C + j] = std::exp(lv[i * C + j] - lse);
  }
  loss /= real(B);

  auto l_n = logits.node();
  return make_op({1}, {loss}, {logits},
                 [l_n, softmax, labels, B, C](TensorNode* o) {
                   l_n->ensure_grad();
                   const real g = o->grad[0] / real(B);
                   for (std::size_t i = 0; i < B; ++i)
                     for (std::size_t j = 0; j < C; ++j)
                       l_n->grad[i * C + j] +=
                           g * ((*softmax)[i * C + j] -
                                (j == labels[i] ? real(1) : real(0)));
                 });
}

inline Tensor flatten_rows(const Tensor& a) {
  const std::size_t B = a.dim(0);
  return reshape(a, {B, a.size() / B});
}

}  // namespace bacon

#endif
