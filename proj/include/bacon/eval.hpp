#ifndef BACON_EVAL_HPP
#define BACON_EVAL_HPP

// Downstream evaluation: train fresh classifiers on a synthetic set and
// report mean/std top-1 accuracy on the real test split over seeds, plus
// the Random and Herding coreset baselines and the ablation grid runner.

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "bacon/distill.hpp"
#include "bacon/featurenet.hpp"

namespace bacon {

struct EvalConfig {
  std::size_t seeds = 5;
  std::size_t epochs = 100;
  std::size_t batch_size = 256;
  FeatureNetConfig classifier;
  SgdConfig optimizer;  // lr 0.01, momentum 0.9, weight decay 5e-4
  std::uint64_t base_seed = 0;

  void validate() const {
    if (seeds < 1 || epochs < 1 || batch_size < 1)
      throw DomainError("invalid eval config");
  }
};

struct EvalReport {
  std::vector<real> per_seed;
  real mean = 0, stddev = 0;
  double wall_seconds = 0;

  void aggregate() {
    mean = 0;
    for (real a : per_seed) mean += a;
    mean /= real(per_seed.size());
    real var = 0;
    for (real a : per_seed) var += (a - mean) * (a - mean);
    stddev = per_seed.size() > 1 ? std::sqrt(var / real(per_seed.size() - 1)) : 0;
  }
};

namespace detail {

inline real top1_accuracy(FeatureNet& net, const Dataset& test,
                          std::size_t batch_size) {
  Tape tape;
  tape.active = false;
  const std::size_t isz = test.image_size();
  std::size_t correct = 0;
  for (std::size_t off = 0; off < test.count(); off += batch_size) {
    const std::size_t n = std::min(batch_size, test.count() - off);
    Shape shape = test.images.shape();
    shape[0] = n;
    Tensor batch = Tensor::from(
        shape, std::vector<real>(test.images.data().begin() + off * isz,
                                 test.images.data().begin() + (off + n) * isz));
    Tensor logits = net.forward(batch, Head::logits);
    const std::size_t C = logits.dim(1);
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t best = 0;
      for (std::size_t j = 1; j < C; ++j)
        if (logits.data()[i * C + j] > logits.data()[i * C + best]) best = j;
      correct += std::size_t(best == test.labels[off + i]);
    }
  }
  return real(correct) / real(test.count());
}

}  // namespace detail

// Trains one fresh classifier per seed on the synthetic set and measures
// top-1 accuracy on the real test split.
inline EvalReport evaluate(const SyntheticSet& set, const Dataset& test,
                           const EvalConfig& cfg) {
  cfg.validate();
  if (set.images.dim(1) != test.channels() || set.images.dim(2) != test.height() ||
      set.images.dim(3) != test.width() || set.classes != test.classes)
    throw ShapeMismatch("synthetic set and test split disagree");

  FeatureNetConfig net_cfg = cfg.classifier;
  net_cfg.in_ch = test.channels();
  net_cfg.in_h = test.height();
  net_cfg.in_w = test.width();
  net_cfg.classes = test.classes;

  const std::size_t n = set.count();
  const std::size_t isz = set.images.size() / n;

  EvalReport report;
  for (std::size_t s = 0; s < cfg.seeds; ++s) {
    const std::uint64_t seed = derive_seed(cfg.base_seed, "eval-seed", s);
    FeatureNet net(net_cfg);
    net.reinit(seed);
    OptimizerState opt(cfg.optimizer);
    auto eng = make_engine(derive_seed(seed, "eval-shuffle"));
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
      std::shuffle(order.begin(), order.end(), eng);
      for (std::size_t off = 0; off < n; off += cfg.batch_size) {
        const std::size_t b = std::min(cfg.batch_size, n - off);
        std::vector<real> px(b * isz);
        std::vector<std::size_t> labels(b);
        for (std::size_t i = 0; i < b; ++i) {
          std::copy_n(set.images.data().begin() + order[off + i] * isz, isz,
                      px.begin() + i * isz);
          labels[i] = set.labels[order[off + i]];
        }
        Shape shape = set.images.shape();
        shape[0] = b;
        net.train_step(Tensor::from(shape, std::move(px)), labels, opt);
      }
    }
    report.per_seed.push_back(detail::top1_accuracy(net, test, cfg.batch_size));
  }
  report.aggregate();
  return report;
}

// Random coreset baseline: shares init_synthetic, distinct provenance.
inline SyntheticSet coreset_random(const Dataset& real_data, std::size_t ipc,
                                   std::uint64_t seed) {
  SyntheticSet s = init_synthetic(real_data, ipc, seed);
  s.source = real_data.name + "/random-coreset";
  return s;
}

// Greedy herding in embedding space: repeatedly pick the example whose
// inclusion brings the running selected-mean closest to the class mean.
// Ties break toward the smallest original index.
inline SyntheticSet coreset_herding(const Dataset& real_data, std::size_t ipc,
                                    const FeatureNet& net) {
  const std::size_t isz = real_data.image_size();
  SyntheticSet s;
  s.ipc = ipc;
  s.classes = real_data.classes;
  s.source = real_data.name + "/herding";
  s.labels.resize(real_data.classes * ipc);
  std::vector<real> px(real_data.classes * ipc * isz);

  Tape tape;
  tape.active = false;
  for (std::size_t c = 0; c < real_data.classes; ++c) {
    const auto& idx = real_data.class_indices[c];
    if (idx.size() < ipc)
      throw InsufficientClassExamples("class " + std::to_string(c));

    // embed the whole class once
    Shape shape = real_data.images.shape();
    shape[0] = idx.size();
    std::vector<real> cls_px(idx.size() * isz);
    for (std::size_t i = 0; i < idx.size(); ++i)
      std::copy_n(real_data.images.data().begin() + idx[i] * isz, isz,
                  cls_px.begin() + i * isz);
    Tensor emb = net.forward(Tensor::from(shape, std::move(cls_px)),
                             Head::embedding);
    const std::size_t N = emb.dim(1);
    std::vector<real> class_mean(N, 0);
    for (std::size_t i = 0; i < idx.size(); ++i)
      for (std::size_t d = 0; d < N; ++d)
        class_mean[d] += emb.data()[i * N + d] / real(idx.size());

    std::vector<bool> taken(idx.size(), false);
    std::vector<real> selected_sum(N, 0);
    for (std::size_t pick = 0; pick < ipc; ++pick) {
      std::size_t best = idx.size();
      real best_d2 = std::numeric_limits<real>::infinity();
      for (std::size_t i = 0; i < idx.size(); ++i) {
        if (taken[i]) continue;
        real d2 = 0;
        for (std::size_t d = 0; d < N; ++d) {
          const real m = (selected_sum[d] + emb.data()[i * N + d]) / real(pick + 1);
          const real r = m - class_mean[d];
          d2 += r * r;
        }
        if (d2 < best_d2) {  // strict: ties keep the smaller index
          best_d2 = d2;
          best = i;
        }
      }
      taken[best] = true;
      for (std::size_t d = 0; d < N; ++d) selected_sum[d] += emb.data()[best * N + d];
      const std::size_t row = c * ipc + pick;
      s.labels[row] = c;
      std::copy_n(real_data.images.data().begin() + idx[best] * isz, isz,
                  px.begin() + row * isz);
    }
  }
  Shape shape = real_data.images.shape();
  shape[0] = s.labels.size();
  s.images = Tensor::param(std::move(shape), std::move(px));
  return s;
}

// ---- ablation grid --------------------------------------------------------

struct AblationCell {
  std::string id;
  LossConfig loss;
};

struct AblationResult {
  AblationCell cell;
  EvalReport report;
  bool failed = false;
  std::string error;
};

// The 7 nonempty {LH, TV, CLIP} toggle combinations.
inline std::vector<AblationCell> loss_term_grid(const LossConfig& base) {
  std::vector<AblationCell> cells;
  for (int mask = 1; mask < 8; ++mask) {
    AblationCell cell;
    cell.loss = base;
    cell.loss.enable_lh = mask & 1;
    cell.loss.enable_tv = mask & 2;
    cell.loss.enable_clip = mask & 4;
    cell.id = std::string(cell.loss.enable_lh ? "LH" : "") +
              (cell.loss.enable_tv ? "+TV" : "") +
              (cell.loss.enable_clip ? "+CLIP" : "");
    if (!cell.id.empty() && cell.id[0] == '+') cell.id.erase(0, 1);
    cells.push_back(std::move(cell));
  }
  return cells;
}

inline std::vector<AblationCell> lambda_grid(const LossConfig& base,
                                             const std::vector<real>& values) {
  std::vector<AblationCell> cells;
  for (real v : values) {
    AblationCell cell;
    cell.loss = base;
    cell.loss.lambda = v;
    cell.id = "lambda=" + std::to_string(v);
    cells.push_back(std::move(cell));
  }
  return cells;
}

// Distill + evaluate per cell; per-cell failures are recorded, not fatal.
inline std::vector<AblationResult> ablation_grid(
    const Dataset& train, const Dataset& test,
    const std::vector<AblationCell>& cells, const DistillConfig& base,
    const EvalConfig& eval_cfg) {
  if (cells.empty()) throw EmptyGrid("no ablation cells");
  std::vector<AblationResult> results;
  for (const auto& cell : cells) {
    AblationResult res;
    res.cell = cell;
    try {
      DistillConfig cfg = base;
      cfg.loss = cell.loss;
      auto [syn, history] = run_distillation(train, cfg);
      res.report = evaluate(syn, test, eval_cfg);
    } catch (const std::exception& e) {
      res.failed = true;
      res.error = e.what();
    }
    results.push_back(std::move(res));
  }
  return results;
}

}  // namespace bacon

#endif
