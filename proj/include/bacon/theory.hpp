#ifndef BACON_THEORY_HPP
#define BACON_THEORY_HPP

// Monte-Carlo machinery for the risk decomposition: the epsilon-ball
// indicator, two independent estimators of the expected risk (direct
// expectation vs the 1 - ball-integral decomposition), the Jensen step,
// and the argmax surrogate comparison. Estimation is chunked with one
// RNG stream per chunk, reduced in fixed order.

#include <cmath>
#include <string>
#include <variant>
#include <vector>

#include "bacon/rng.hpp"
#include "bacon/tensor.hpp"

namespace bacon {

// z_x ~ N(mu1, sigma1^2 I), z_syn ~ N(mu2, sigma2^2 I), independent.
struct GaussianSpec {
  real mu1 = 0, sigma1 = 1, mu2 = 0, sigma2 = 1;
  std::size_t dim = 1;
};

// Uniform mixture of paired atoms (z_x, z_syn).
struct PointMassSpec {
  std::vector<std::pair<std::vector<real>, std::vector<real>>> pairs;
};

// Class-conditional empirical joint: pick a class, then draw real and
// synthetic embeddings independently within it.
struct EmpiricalSpec {
  std::size_t classes = 0;
  std::vector<std::vector<real>> real_embeddings, syn_embeddings;
  std::vector<std::size_t> real_classes, syn_classes;
};

using DistributionSpec = std::variant<GaussianSpec, PointMassSpec, EmpiricalSpec>;

struct RiskConfig {
  real epsilon = 1;
  std::size_t mc_samples = 10000;
  std::uint64_t seed = 0;
  DistributionSpec spec;

  void validate() const {
    if (epsilon <= 0) throw BadDistributionSpec("epsilon must be positive");
    if (mc_samples < 100) throw BadDistributionSpec("mc_samples must be >= 100");
  }
};

struct RiskEstimate {
  real value = 0;
  real stderr_ = 0;
  std::size_t samples = 0;
  std::string method;  // "direct" or "theorem1"
  real epsilon = 0;
  std::uint64_t seed = 0;
};

// 1 if the Euclidean distance is >= epsilon (boundary counts as risk).
inline int indicator_loss(const std::vector<real>& z_x,
                          const std::vector<real>& z_syn, real epsilon) {
  if (z_x.size() != z_syn.size()) throw DimMismatch("indicator dimension");
  if (epsilon <= 0) throw DomainError("epsilon must be positive");
  real d2 = 0;
  for (std::size_t i = 0; i < z_x.size(); ++i) {
    const real r = z_x[i] - z_syn[i];
    d2 += r * r;
  }
  return std::sqrt(d2) >= epsilon ? 1 : 0;
}

namespace detail {

struct JointSample {
  std::vector<real> z_x, z_syn;
};

inline JointSample draw_joint(const DistributionSpec& spec,
                              std::mt19937_64& eng) {
  JointSample s;
  if (const auto* g = std::get_if<GaussianSpec>(&spec)) {
    s.z_x.resize(g->dim);
    s.z_syn.resize(g->dim);
    for (auto& v : s.z_x) v = gaussian(eng, g->mu1, g->sigma1);
    for (auto& v : s.z_syn) v = gaussian(eng, g->mu2, g->sigma2);
  } else if (const auto* p = std::get_if<PointMassSpec>(&spec)) {
    if (p->pairs.empty()) throw BadDistributionSpec("no point masses");
    const auto& pr = p->pairs[uniform_index(eng, p->pairs.size())];
    s.z_x = pr.first;
    s.z_syn = pr.second;
  } else {
    const auto& e = std::get<EmpiricalSpec>(spec);
    if (e.classes == 0 || e.real_embeddings.empty() || e.syn_embeddings.empty())
      throw BadDistributionSpec("empty empirical spec");
    const std::size_t cls = uniform_index(eng, e.classes);
    std::vector<std::size_t> ri, si;
    for (std::size_t i = 0; i < e.real_classes.size(); ++i)
      if (e.real_classes[i] == cls) ri.push_back(i);
    for (std::size_t i = 0; i < e.syn_classes.size(); ++i)
      if (e.syn_classes[i] == cls) si.push_back(i);
    if (ri.empty() || si.empty())
      throw ConditionalUnavailable("class " + std::to_string(cls) +
                                   " missing on one side");
    s.z_x = e.real_embeddings[ri[uniform_index(eng, ri.size())]];
    s.z_syn = e.syn_embeddings[si[uniform_index(eng, si.size())]];
  }
  if (s.z_x.size() != s.z_syn.size())
    throw BadDistributionSpec("embedding dimensions differ across sides");
  return s;
}

// Draws z_syn from its marginal, then z_x from the conditional given it.
inline JointSample draw_conditional(const DistributionSpec& spec,
                                    std::mt19937_64& eng) {
  if (std::holds_alternative<GaussianSpec>(spec)) {
    return draw_joint(spec, eng);  // independent sides: conditional = marginal
  }
  if (const auto* p = std::get_if<PointMassSpec>(&spec)) {
    if (p->pairs.empty()) throw BadDistributionSpec("no point masses");
    const auto& anchor = p->pairs[uniform_index(eng, p->pairs.size())];
    std::vector<std::size_t> group;
    for (std::size_t i = 0; i < p->pairs.size(); ++i)
      if (p->pairs[i].second == anchor.second) group.push_back(i);
    JointSample s;
    s.z_syn = anchor.second;
    s.z_x = p->pairs[group[uniform_index(eng, group.size())]].first;
    return s;
  }
  return draw_joint(spec, eng);  // empirical: product within class
}

inline real euclidean(const std::vector<real>& a, const std::vector<real>& b) {
  real d2 = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const real r = a[i] - b[i];
    d2 += r * r;
  }
  return std::sqrt(d2);
}

inline RiskEstimate finish(std::size_t hits, const RiskConfig& cfg,
                           const char* method) {
  RiskEstimate est;
  est.samples = cfg.mc_samples;
  est.value = real(hits) / real(cfg.mc_samples);
  est.stderr_ = std::sqrt(est.value * (1 - est.value) / real(cfg.mc_samples));
  est.method = method;
  est.epsilon = cfg.epsilon;
  est.seed = cfg.seed;
  return est;
}

}  // namespace detail

inline constexpr std::size_t kRiskChunk = 4096;

// Plain expectation of the indicator over joint draws.
inline RiskEstimate estimate_risk_direct(const RiskConfig& cfg) {
  cfg.validate();
  std::size_t remaining = cfg.mc_samples, chunk_id = 0, hits = 0;
  while (remaining > 0) {
    const std::size_t n = std::min(remaining, kRiskChunk);
    auto eng = make_engine(derive_seed(cfg.seed, "direct", chunk_id));
    for (std::size_t i = 0; i < n; ++i) {
      const detail::JointSample s = detail::draw_joint(cfg.spec, eng);
      hits += std::size_t(indicator_loss(s.z_x, s.z_syn, cfg.epsilon));
    }
    remaining -= n;
    ++chunk_id;
  }
  return detail::finish(hits, cfg, "direct");
}

// Decomposition route: R = 1 - E[ball integral]. The inner integral is
// estimated by conditional draws counted inside the ball (distance <=
// epsilon, boundary inside per the ball definition).
inline RiskEstimate estimate_risk_theorem1(const RiskConfig& cfg) {
  cfg.validate();
  std::size_t remaining = cfg.mc_samples, chunk_id = 0, inside = 0;
  while (remaining > 0) {
    const std::size_t n = std::min(remaining, kRiskChunk);
    auto eng = make_engine(derive_seed(cfg.seed, "theorem1", chunk_id));
    for (std::size_t i = 0; i < n; ++i) {
      const detail::JointSample s = detail::draw_conditional(cfg.spec, eng);
      inside += std::size_t(detail::euclidean(s.z_x, s.z_syn) <= cfg.epsilon);
    }
    remaining -= n;
    ++chunk_id;
  }
  return detail::finish(cfg.mc_samples - inside, cfg, "theorem1");
}

// Jensen step: log of the mean vs mean of the logs.
inline std::pair<real, real> jensen_gap(const std::vector<real>& p_values) {
  if (p_values.empty()) throw NonPositiveValue("empty vector");
  real acc = 0, log_acc = 0;
  for (real p : p_values) {
    if (p <= 0) throw NonPositiveValue("jensen_gap needs positive values");
    acc += p;
    log_acc += std::log(p);
  }
  const real n = real(p_values.size());
  return {std::log(acc / n), log_acc / n};
}

struct ArgmaxCheck {
  std::size_t best_exact = 0;
  std::size_t best_surrogate = 0;
  bool coincide = false;
};

// Compares the exact Gaussian-mixture mean likelihood against the
// log-surrogate on a candidate grid.
inline ArgmaxCheck argmax_surrogate_check(const Tensor& anchors, real sigma,
                                          const std::vector<std::vector<real>>& grid) {
  if (grid.empty()) throw EmptyGrid("candidate grid is empty");
  if (sigma <= 0) throw DomainError("sigma must be positive");
  const std::size_t k = anchors.dim(0), N = anchors.dim(1);
  const auto& a = anchors.data();

  auto scores = [&](const std::vector<real>& z) {
    if (z.size() != N) throw DimMismatch("grid candidate dimension");
    const real log_norm = -real(0.5) * real(N) * std::log(2 * real(M_PI) * sigma * sigma);
    real exact = 0, surrogate = 0;
    for (std::size_t i = 0; i < k; ++i) {
      real d2 = 0;
      for (std::size_t d = 0; d < N; ++d) {
        const real r = z[d] - a[i * N + d];
        d2 += r * r;
      }
      const real log_pdf = log_norm - d2 / (2 * sigma * sigma);
      exact += std::exp(log_pdf) / real(k);
      surrogate += log_pdf / real(k);
    }
    return std::pair<real, real>{exact, surrogate};
  };

  ArgmaxCheck out;
  real best_e = -1, best_s = 0;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    auto [e, s] = scores(grid[i]);
    if (i == 0 || e > best_e) {
      best_e = e;
      out.best_exact = i;
    }
    if (i == 0 || s > best_s) {
      best_s = s;
      out.best_surrogate = i;
    }
  }
  out.coincide = out.best_exact == out.best_surrogate;
  return out;
}

}  // namespace bacon

#endif
