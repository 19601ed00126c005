#ifndef BACON_LOSSES_HPP
#define BACON_LOSSES_HPP

// The three BACON loss terms and the lambda-weighted total objective.
// All reductions are means over embedding dimensions and batch pairings,
// so lambda keeps its meaning regardless of N and batch size. Each term
// is a fused tape op: synthetic embeddings carry gradients, class stats
// and anchors are constants of the current step.

#include <algorithm>
#include <cmath>
#include <vector>

#include "bacon/tensor.hpp"

namespace bacon {

enum class SigmaPolicy { per_class_scalar, per_dimension };

struct LossConfig {
  real lambda = real(0.8);
  bool enable_lh = true;
  bool enable_tv = true;
  bool enable_clip = true;
  SigmaPolicy sigma_policy = SigmaPolicy::per_class_scalar;
  real sigma_floor = real(1e-6);
  bool pairwise = false;  // compare against every anchor instead of the mean

  void validate() const {
    if (lambda < 0 || lambda > 1) throw DomainError("lambda outside [0,1]");
    if (sigma_floor <= 0) throw DomainError("sigma_floor must be positive");
  }
};

struct ClassStats {
  std::size_t class_id = 0;
  std::vector<real> mean;   // length N
  std::vector<real> sigma;  // length 1 (scalar policy) or N
  std::size_t count = 0;

  real sigma_at(std::size_t d) const {
    return sigma.size() == 1 ? sigma[0] : sigma[d];
  }
};

// Columnwise mean and population std (divisor k), floored.
inline ClassStats estimate_class_stats(const Tensor& real_embeddings,
                                       const LossConfig& cfg,
                                       std::size_t class_id = 0) {
  cfg.validate();
  if (real_embeddings.shape().size() != 2 || real_embeddings.dim(0) == 0)
    throw EmptyBatch("estimate_class_stats needs a k x N batch, k >= 1");
  const std::size_t k = real_embeddings.dim(0), N = real_embeddings.dim(1);
  const auto& z = real_embeddings.data();

  ClassStats s;
  s.class_id = class_id;
  s.count = k;
  s.mean.assign(N, real(0));
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t d = 0; d < N; ++d) s.mean[d] += z[i * N + d];
  for (auto& m : s.mean) m /= real(k);

  std::vector<real> std_dev(N, real(0));
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t d = 0; d < N; ++d) {
      const real r = z[i * N + d] - s.mean[d];
      std_dev[d] += r * r;
    }
  for (auto& v : std_dev) v = std::sqrt(v / real(k));

  if (cfg.sigma_policy == SigmaPolicy::per_class_scalar) {
    real acc = 0;
    for (real v : std_dev) acc += v;
    s.sigma = {std::max(acc / real(N), cfg.sigma_floor)};
  } else {
    for (auto& v : std_dev) v = std::max(v, cfg.sigma_floor);
    s.sigma = std::move(std_dev);
  }
  return s;
}

namespace detail {

inline void check_loss_shapes(const Tensor& z_syn, std::size_t N,
                              const char* what) {
  if (z_syn.shape().size() != 2 || z_syn.dim(0) == 0)
    throw ShapeMismatch(std::string(what) + " needs a nonempty M x N tensor");
  if (z_syn.dim(1) != N)
    throw ShapeMismatch(std::string(what) + ": embedding dim " +
                        std::to_string(z_syn.dim(1)) + " vs " +
                        std::to_string(N));
}

}  // namespace detail

// Gaussian log-likelihood of synthetic embeddings against anchors:
// mean over pairings and dimensions of -1/2 log(2 pi sigma) - r^2/(2 sigma^2).
// Larger is better. Default compares against the anchor mean; pairwise
// mode against every anchor row.
inline Tensor loss_lh(const Tensor& z_syn, const ClassStats& stats,
                      const Tensor& anchors = Tensor(), bool pairwise = false) {
  detail::check_loss_shapes(z_syn, stats.mean.size(), "loss_lh");
  const std::size_t M = z_syn.dim(0), N = z_syn.dim(1);
  const auto& zs = z_syn.data();

  std::vector<const real*> targets;
  if (pairwise) {
    if (!anchors.defined() || anchors.shape().size() != 2 ||
        anchors.dim(1) != N)
      throw ShapeMismatch("loss_lh pairwise needs k x N anchors");
    for (std::size_t i = 0; i < anchors.dim(0); ++i)
      targets.push_back(anchors.data().data() + i * N);
  } else {
    targets.push_back(stats.mean.data());
  }
  const std::size_t P = targets.size();

  real acc = 0;
  for (std::size_t m = 0; m < M; ++m)
    for (const real* t : targets)
      for (std::size_t d = 0; d < N; ++d) {
        const real sg = stats.sigma_at(d);
        const real r = zs[m * N + d] - t[d];
        acc += -real(0.5) * std::log(2 * real(M_PI) * sg) -
               r * r / (2 * sg * sg);
      }
  const real inv = real(1) / real(M * P * N);
  acc *= inv;

  auto zn = z_syn.node();
  auto tcopy = std::make_shared<std::vector<std::vector<real>>>();
  for (const real* t : targets) tcopy->emplace_back(t, t + N);
  auto sigma = std::make_shared<std::vector<real>>(stats.sigma);
  return make_op({1}, {acc}, {z_syn}, [zn, tcopy, sigma, M, N, inv](TensorNode* o) {
    zn->ensure_grad();
    const real g = o->grad[0] * inv;
    for (std::size_t m = 0; m < M; ++m)
      for (const auto& t : *tcopy)
        for (std::size_t d = 0; d < N; ++d) {
          const real sg = sigma->size() == 1 ? (*sigma)[0] : (*sigma)[d];
          zn->grad[m * N + d] -= g * (zn->value[m * N + d] - t[d]) / (sg * sg);
        }
  });
}

// Distribution-wise total variation: mean over all (synthetic, anchor)
// pairings and dimensions of half the absolute residual.
inline Tensor loss_tv(const Tensor& z_syn, const Tensor& anchors) {
  if (!anchors.defined() || anchors.shape().size() != 2)
    throw ShapeMismatch("loss_tv needs k x N anchors");
  detail::check_loss_shapes(z_syn, anchors.dim(1), "loss_tv");
  const std::size_t M = z_syn.dim(0), N = z_syn.dim(1), K = anchors.dim(0);
  const auto& zs = z_syn.data();
  const auto& av = anchors.data();

  // per-pair sums reduced in sorted order, so tv(a,b) == tv(b,a) bitwise
  std::vector<real> pair_sums;
  pair_sums.reserve(M * K);
  for (std::size_t m = 0; m < M; ++m)
    for (std::size_t i = 0; i < K; ++i) {
      real p = 0;
      for (std::size_t d = 0; d < N; ++d)
        p += real(0.5) * std::fabs(zs[m * N + d] - av[i * N + d]);
      pair_sums.push_back(p);
    }
  std::sort(pair_sums.begin(), pair_sums.end());
  real acc = 0;
  for (real p : pair_sums) acc += p;
  const real inv = real(1) / real(M * K * N);
  acc *= inv;

  auto zn = z_syn.node();
  auto an = anchors.node();
  return make_op({1}, {acc}, {z_syn, anchors},
                 [zn, an, M, N, K, inv](TensorNode* o) {
                   const real g = o->grad[0] * inv * real(0.5);
                   const bool gz = zn->requires_grad, ga = an->requires_grad;
                   if (gz) zn->ensure_grad();
                   if (ga) an->ensure_grad();
                   for (std::size_t m = 0; m < M; ++m)
                     for (std::size_t i = 0; i < K; ++i)
                       for (std::size_t d = 0; d < N; ++d) {
                         const real r = zn->value[m * N + d] - an->value[i * N + d];
                         const real s = r > 0 ? real(1) : (r < 0 ? real(-1) : real(0));
                         if (gz) zn->grad[m * N + d] += g * s;
                         if (ga) an->grad[i * N + d] -= g * s;
                       }
                 });
}

// Out-of-bound penalty on normalized residuals u = (z* - z_x)/sigma:
// mean of (u - clip01(u))^2; zero iff every u lies in [0,1].
inline Tensor loss_clip(const Tensor& z_syn, const ClassStats& stats,
                        const Tensor& anchors = Tensor(),
                        bool pairwise = false) {
  detail::check_loss_shapes(z_syn, stats.mean.size(), "loss_clip");
  const std::size_t M = z_syn.dim(0), N = z_syn.dim(1);
  const auto& zs = z_syn.data();

  std::vector<const real*> targets;
  if (pairwise) {
    if (!anchors.defined() || anchors.shape().size() != 2 ||
        anchors.dim(1) != N)
      throw ShapeMismatch("loss_clip pairwise needs k x N anchors");
    for (std::size_t i = 0; i < anchors.dim(0); ++i)
      targets.push_back(anchors.data().data() + i * N);
  } else {
    targets.push_back(stats.mean.data());
  }
  const std::size_t P = targets.size();

  auto excess = [](real u) {
    const real c = std::min(std::max(u, real(0)), real(1));
    return u - c;
  };

  real acc = 0;
  for (std::size_t m = 0; m < M; ++m)
    for (const real* t : targets)
      for (std::size_t d = 0; d < N; ++d) {
        const real u = (zs[m * N + d] - t[d]) / stats.sigma_at(d);
        const real e = excess(u);
        acc += e * e;
      }
  const real inv = real(1) / real(M * P * N);
  acc *= inv;

  auto zn = z_syn.node();
  auto tcopy = std::make_shared<std::vector<std::vector<real>>>();
  for (const real* t : targets) tcopy->emplace_back(t, t + N);
  auto sigma = std::make_shared<std::vector<real>>(stats.sigma);
  return make_op({1}, {acc}, {z_syn},
                 [zn, tcopy, sigma, M, N, inv, excess](TensorNode* o) {
                   zn->ensure_grad();
                   const real g = o->grad[0] * inv;
                   for (std::size_t m = 0; m < M; ++m)
                     for (const auto& t : *tcopy)
                       for (std::size_t d = 0; d < N; ++d) {
                         const real sg =
                             sigma->size() == 1 ? (*sigma)[0] : (*sigma)[d];
                         const real u = (zn->value[m * N + d] - t[d]) / sg;
                         zn->grad[m * N + d] += g * 2 * excess(u) / sg;
                       }
                 });
}

struct LossBreakdown {
  Tensor total;  // scalar objective J, to be minimized
  real lh = 0, tv = 0, clip = 0;
};

// J = -L_LH + lambda L_TV + (1 - lambda) L_CLIP, with term toggles.
inline LossBreakdown loss_total(const Tensor& z_syn, const ClassStats& stats,
                                const Tensor& anchors, const LossConfig& cfg) {
  cfg.validate();
  if (!cfg.enable_lh && !cfg.enable_tv && !cfg.enable_clip)
    throw AllTermsDisabled("every loss term is disabled");

  LossBreakdown out;
  Tensor total;
  auto accumulate = [&](const Tensor& t) {
    total = total.defined() ? total + t : t;
  };
  if (cfg.enable_lh) {
    Tensor lh = loss_lh(z_syn, stats, anchors, cfg.pairwise);
    out.lh = lh.item();
    accumulate(neg(lh));
  }
  if (cfg.enable_tv) {
    Tensor tv = loss_tv(z_syn, anchors);
    out.tv = tv.item();
    if (cfg.lambda != 0) accumulate(Tensor::scalar(cfg.lambda) * tv);
  }
  if (cfg.enable_clip) {
    Tensor cl = loss_clip(z_syn, stats, anchors, cfg.pairwise);
    out.clip = cl.item();
    if (cfg.lambda != 1) accumulate(Tensor::scalar(1 - cfg.lambda) * cl);
  }
  if (!total.defined()) total = Tensor::scalar(0);
  out.total = total;
  return out;
}

// DM baseline: squared Euclidean distance between per-class mean embeddings.
inline Tensor loss_dm(const Tensor& z_syn_mean, const Tensor& z_real_mean) {
  if (z_syn_mean.size() != z_real_mean.size())
    throw ShapeMismatch("loss_dm dimension mismatch");
  return sum(square(z_syn_mean - z_real_mean));
}

}  // namespace bacon

#endif
