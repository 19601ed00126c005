#ifndef BACON_DISTILL_HPP
#define BACON_DISTILL_HPP

// The distillation loop: initialize synthetic pixels from real samples,
// then per class sample anchors, estimate stats, minimize the total
// objective with momentum SGD on the pixels. Every random draw is keyed
// by (seed, purpose, step, class), so snapshot-resume is bit-exact.

#include <cmath>
#include <fstream>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "bacon/binio.hpp"
#include "bacon/data.hpp"
#include "bacon/featurenet.hpp"
#include "bacon/losses.hpp"
#include "bacon/rng.hpp"

namespace bacon {

struct SyntheticSet {
  Tensor images;  // (C * ipc) x ch x H x W, grad-tracked leaf
  std::vector<std::size_t> labels;  // block layout, class c at [c*ipc, (c+1)*ipc)
  std::size_t ipc = 1;
  std::size_t classes = 0;
  std::uint64_t init_seed = 0;
  std::string source;

  std::size_t count() const { return labels.size(); }
};

struct DistillConfig {
  std::size_t ipc = 1;
  std::size_t outer_steps = 2000;
  std::size_t anchors_per_class = 256;
  real image_lr = real(0.2);
  real image_momentum = real(0.5);
  std::size_t model_refresh_interval = 10;
  std::size_t net_train_steps = 0;
  LossConfig loss;
  FeatureNetConfig net;
  std::uint64_t seed = 0;
  std::size_t snapshot_every = 0;  // 0 disables snapshots
  std::string snapshot_dir;
  bool joint_update = false;       // update all classes from one gradient pass
  real anchor_epsilon = 0;         // >0: reject anchors farther than this
  bool use_dm_loss = false;        // DM baseline objective instead of BACON

  void validate() const {
    // image_lr 0 is allowed as a diagnostic no-op step
    if (ipc < 1 || anchors_per_class < 1 || outer_steps < 1 || image_lr < 0)
      throw DomainError("invalid distill config");
    loss.validate();
  }
};

struct StepReport {
  std::size_t step = 0;
  real total = 0, lh = 0, tv = 0, clip = 0;
  real grad_norm = 0;
};

// Copies ipc distinct real images per class as the initial synthetic set.
inline SyntheticSet init_synthetic(const Dataset& real_data, std::size_t ipc,
                                   std::uint64_t seed) {
  SyntheticSet s;
  s.ipc = ipc;
  s.classes = real_data.classes;
  s.init_seed = seed;
  s.source = real_data.name;
  const std::size_t isz = real_data.image_size();
  std::vector<real> px(real_data.classes * ipc * isz);
  s.labels.resize(real_data.classes * ipc);
  for (std::size_t c = 0; c < real_data.classes; ++c) {
    const auto& idx = real_data.class_indices[c];
    if (idx.size() < ipc)
      throw InsufficientClassExamples("class " + std::to_string(c) + " has " +
                                      std::to_string(idx.size()) +
                                      " examples, need " + std::to_string(ipc));
    // partial Fisher-Yates: first ipc entries of a seeded shuffle
    std::vector<std::size_t> pool = idx;
    auto eng = make_engine(derive_seed(seed, "init-synthetic", c));
    for (std::size_t i = 0; i < ipc; ++i) {
      std::uniform_int_distribution<std::size_t> d(i, pool.size() - 1);
      std::swap(pool[i], pool[d(eng)]);
      const std::size_t row = c * ipc + i;
      s.labels[row] = c;
      std::copy_n(real_data.images.data().begin() + pool[i] * isz, isz,
                  px.begin() + row * isz);
    }
  }
  Shape shape = real_data.images.shape();
  shape[0] = s.labels.size();
  s.images = Tensor::param(std::move(shape), std::move(px));
  return s;
}

struct AnchorBatch {
  Tensor images;      // k x ch x H x W
  Tensor embeddings;  // k x N, constant (no tape)
};

// Uniform draw (with replacement) of k real images of one class, embedded.
// With anchor_epsilon > 0, draws whose embedding is farther than epsilon
// from the synthetic block's mean embedding are rejected (bounded retries).
inline AnchorBatch sample_anchors(const Dataset& real_data, std::size_t cls,
                                  std::size_t k, const FeatureNet& net,
                                  std::uint64_t seed,
                                  const std::vector<real>* center = nullptr,
                                  real epsilon = 0) {
  if (cls >= real_data.classes) throw UnknownClass("class " + std::to_string(cls));
  const auto& idx = real_data.class_indices[cls];
  if (idx.empty()) throw UnknownClass("class " + std::to_string(cls) + " empty");
  const std::size_t isz = real_data.image_size();
  auto eng = make_engine(derive_seed(seed, "anchors", cls));

  Shape shape = real_data.images.shape();
  shape[0] = k;
  std::vector<real> px(k * isz);
  AnchorBatch out;
  {
    Tape tape;
    tape.active = false;  // anchor embeddings are constants of the step
    std::vector<real> emb;
    std::size_t n_dim = 0;
    for (std::size_t i = 0; i < k; ++i) {
      for (std::size_t attempt = 0;; ++attempt) {
        const std::size_t pick = idx[uniform_index(eng, idx.size())];
        std::copy_n(real_data.images.data().begin() + pick * isz, isz,
                    px.begin() + i * isz);
        Shape one = shape;
        one[0] = 1;
        Tensor img = Tensor::from(
            one, std::vector<real>(px.begin() + i * isz,
                                   px.begin() + (i + 1) * isz));
        Tensor z = net.forward(img, Head::embedding);
        n_dim = z.size();
        if (epsilon > 0 && center && attempt < 16) {
          real d2 = 0;
          for (std::size_t d = 0; d < n_dim; ++d) {
            const real r = z.data()[d] - (*center)[d];
            d2 += r * r;
          }
          if (std::sqrt(d2) > epsilon) continue;
        }
        emb.insert(emb.end(), z.data().begin(), z.data().end());
        break;
      }
    }
    out.embeddings = Tensor::from({k, n_dim}, std::move(emb));
  }
  out.images = Tensor::from(std::move(shape), std::move(px));
  return out;
}

namespace detail {

inline void clamp_pixels(SyntheticSet& syn, real lo, real hi) {
  for (auto& v : syn.images.data()) v = std::min(std::max(v, lo), hi);
}

// Momentum-SGD on a row range of the synthetic pixel tensor.
inline void update_rows(SyntheticSet& syn, std::vector<real>& momentum,
                        std::size_t row_begin, std::size_t row_end,
                        real lr, real mu) {
  const std::size_t isz = syn.images.size() / syn.count();
  auto& px = syn.images.data();
  const auto& g = syn.images.grad();
  for (std::size_t i = row_begin * isz; i < row_end * isz; ++i) {
    momentum[i] = mu * momentum[i] + g[i];
    px[i] -= lr * momentum[i];
  }
}

}  // namespace detail

// One outer step over all classes. `momentum` must have one slot per pixel.
inline StepReport distill_step(SyntheticSet& syn, const Dataset& real_data,
                               FeatureNet& net, const DistillConfig& cfg,
                               std::vector<real>& momentum,
                               std::size_t step_index) {
  cfg.validate();
  if (momentum.size() != syn.images.size())
    momentum.assign(syn.images.size(), real(0));
  net.set_trainable(false);

  StepReport rep;
  rep.step = step_index;
  const std::uint64_t step_seed = derive_seed(cfg.seed, "step", step_index);
  real gnorm2 = 0;

  syn.images.zero_grad();
  for (std::size_t c = 0; c < syn.classes; ++c) {
    std::vector<real> center;
    if (cfg.anchor_epsilon > 0) {
      Tape probe;
      probe.active = false;
      Tensor blk = slice_rows(syn.images, c * syn.ipc, (c + 1) * syn.ipc);
      Tensor z = net.forward(blk, Head::embedding);
      center.assign(z.dim(1), real(0));
      for (std::size_t m = 0; m < z.dim(0); ++m)
        for (std::size_t d = 0; d < z.dim(1); ++d)
          center[d] += z.data()[m * z.dim(1) + d] / real(z.dim(0));
    }
    AnchorBatch anchors =
        sample_anchors(real_data, c, cfg.anchors_per_class, net, step_seed,
                       center.empty() ? nullptr : &center, cfg.anchor_epsilon);
    ClassStats stats = estimate_class_stats(anchors.embeddings, cfg.loss, c);

    Tape tape;
    Tensor blk = slice_rows(syn.images, c * syn.ipc, (c + 1) * syn.ipc);
    Tensor z_syn = net.forward(blk, Head::embedding);
    if (cfg.use_dm_loss) {
      Tensor syn_mean = mean(z_syn, {0});
      Tensor real_mean = Tensor::from({stats.mean.size()}, stats.mean);
      Tensor dm = loss_dm(syn_mean, real_mean);
      rep.total += dm.item();
      tape.backward(dm);
    } else {
      LossBreakdown b = loss_total(z_syn, stats, anchors.embeddings, cfg.loss);
      rep.total += b.total.item();
      rep.lh += b.lh;
      rep.tv += b.tv;
      rep.clip += b.clip;
      tape.backward(b.total);
    }

    if (!cfg.joint_update) {
      const std::size_t isz = syn.images.size() / syn.count();
      for (std::size_t i = c * syn.ipc * isz; i < (c + 1) * syn.ipc * isz; ++i)
        gnorm2 += syn.images.grad()[i] * syn.images.grad()[i];
      detail::update_rows(syn, momentum, c * syn.ipc, (c + 1) * syn.ipc,
                          cfg.image_lr, cfg.image_momentum);
      // zero only this block; other classes' grads are still pending
      const std::size_t isz2 = syn.images.size() / syn.count();
      std::fill(syn.images.grad().begin() + c * syn.ipc * isz2,
                syn.images.grad().begin() + (c + 1) * syn.ipc * isz2, real(0));
    }
  }
  if (cfg.joint_update) {
    for (real g : syn.images.grad()) gnorm2 += g * g;
    detail::update_rows(syn, momentum, 0, syn.count(), cfg.image_lr,
                        cfg.image_momentum);
    syn.images.zero_grad();
  }
  detail::clamp_pixels(syn, real_data.value_low, real_data.value_high);

  const real denom = real(syn.classes);
  rep.total /= denom;
  rep.lh /= denom;
  rep.tv /= denom;
  rep.clip /= denom;
  rep.grad_norm = std::sqrt(gnorm2);
  return rep;
}

// ---- BSYN persistence ----------------------------------------------------

inline void save_synthetic(const SyntheticSet& s, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write " + path);
  os.write("BSYN", 4);
  write_le<std::uint32_t>(os, 1);  // version
  write_le<std::uint32_t>(os, std::uint32_t(s.classes));
  write_le<std::uint32_t>(os, std::uint32_t(s.ipc));
  write_le<std::uint32_t>(os, std::uint32_t(s.images.dim(1)));
  write_le<std::uint32_t>(os, std::uint32_t(s.images.dim(2)));
  write_le<std::uint32_t>(os, std::uint32_t(s.images.dim(3)));
  write_le<std::uint32_t>(os, 0);  // dtype tag: fp64
  for (auto y : s.labels) write_le<std::uint16_t>(os, std::uint16_t(y));
  write_f64_array(os, s.images.data());
}

inline SyntheticSet load_synthetic(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path);
  char magic[4];
  read_bytes(is, magic, 4);
  if (std::string(magic, 4) != "BSYN") throw BadMagic("not a BSYN file");
  if (read_le<std::uint32_t>(is) != 1) throw VersionUnsupported("BSYN version");
  SyntheticSet s;
  s.classes = read_le<std::uint32_t>(is);
  s.ipc = read_le<std::uint32_t>(is);
  const std::size_t ch = read_le<std::uint32_t>(is);
  const std::size_t h = read_le<std::uint32_t>(is);
  const std::size_t w = read_le<std::uint32_t>(is);
  if (read_le<std::uint32_t>(is) != 0) throw VersionUnsupported("BSYN dtype");
  const std::size_t n = s.classes * s.ipc;
  s.labels.resize(n);
  for (auto& y : s.labels) y = read_le<std::uint16_t>(is);
  s.images = Tensor::param({n, ch, h, w}, read_f64_array(is, n * ch * h * w));
  return s;
}

// ---- snapshots -------------------------------------------------------------

struct Snapshot {
  SyntheticSet syn;
  std::vector<real> momentum;
  std::size_t next_step = 0;
};

inline void save_snapshot(const std::string& prefix, const SyntheticSet& syn,
                          const std::vector<real>& momentum,
                          std::size_t next_step) {
  save_synthetic(syn, prefix + ".bsyn");
  std::ofstream os(prefix + ".state", std::ios::binary);
  if (!os) throw IoError("cannot write " + prefix + ".state");
  os.write("BSST", 4);
  write_le<std::uint64_t>(os, next_step);
  write_le<std::uint64_t>(os, momentum.size());
  write_f64_array(os, momentum);
}

inline Snapshot load_snapshot(const std::string& prefix) {
  Snapshot snap;
  snap.syn = load_synthetic(prefix + ".bsyn");
  std::ifstream is(prefix + ".state", std::ios::binary);
  if (!is) throw IoError("cannot open " + prefix + ".state");
  char magic[4];
  read_bytes(is, magic, 4);
  if (std::string(magic, 4) != "BSST") throw BadMagic("not a snapshot state file");
  snap.next_step = std::size_t(read_le<std::uint64_t>(is));
  const auto n = read_le<std::uint64_t>(is);
  snap.momentum = read_f64_array(is, std::size_t(n));
  return snap;
}

// ---- full loop -------------------------------------------------------------

// Runs the outer loop with periodic network refresh. Deterministic under
// (config, seed); resuming from a snapshot reproduces the uninterrupted run.
inline std::pair<SyntheticSet, std::vector<StepReport>> run_distillation(
    const Dataset& real_data, const DistillConfig& cfg,
    const Snapshot* resume = nullptr,
    const std::function<void(const StepReport&)>& on_step = nullptr) {
  cfg.validate();
  SyntheticSet syn = resume ? resume->syn
                            : init_synthetic(real_data, cfg.ipc,
                                             derive_seed(cfg.seed, "init"));
  std::vector<real> momentum =
      resume ? resume->momentum : std::vector<real>(syn.images.size(), real(0));
  const std::size_t start = resume ? resume->next_step : 0;

  FeatureNetConfig net_cfg = cfg.net;
  net_cfg.in_ch = real_data.channels();
  net_cfg.in_h = real_data.height();
  net_cfg.in_w = real_data.width();
  net_cfg.classes = real_data.classes;
  FeatureNet net(net_cfg);

  auto refresh_net = [&](std::size_t step) {
    net.reinit(derive_seed(cfg.seed, "net-refresh", step));
    if (cfg.net_train_steps > 0) {
      OptimizerState opt{SgdConfig{}};
      auto eng = make_engine(derive_seed(cfg.seed, "net-warmup", step));
      const std::size_t bsz =
          std::min<std::size_t>(cfg.anchors_per_class, real_data.count());
      const std::size_t isz = real_data.image_size();
      for (std::size_t t = 0; t < cfg.net_train_steps; ++t) {
        std::vector<real> px(bsz * isz);
        std::vector<std::size_t> labels(bsz);
        for (std::size_t i = 0; i < bsz; ++i) {
          const std::size_t pick = uniform_index(eng, real_data.count());
          std::copy_n(real_data.images.data().begin() + pick * isz, isz,
                      px.begin() + i * isz);
          labels[i] = real_data.labels[pick];
        }
        Shape shape = real_data.images.shape();
        shape[0] = bsz;
        net.train_step(Tensor::from(shape, std::move(px)), labels, opt);
      }
    }
  };

  std::vector<StepReport> history;
  history.reserve(cfg.outer_steps - start);
  for (std::size_t step = start; step < cfg.outer_steps; ++step) {
    if (cfg.model_refresh_interval > 0 && step % cfg.model_refresh_interval == 0)
      refresh_net(step);
    else if (step == start && resume && cfg.model_refresh_interval > 0)
      refresh_net(step - step % cfg.model_refresh_interval);
    StepReport rep = distill_step(syn, real_data, net, cfg, momentum, step);
    history.push_back(rep);
    if (on_step) on_step(rep);
    if (cfg.snapshot_every > 0 && !cfg.snapshot_dir.empty() &&
        (step + 1) % cfg.snapshot_every == 0)
      save_snapshot(cfg.snapshot_dir + "/step_" + std::to_string(step + 1), syn,
                    momentum, step + 1);
  }
  return {std::move(syn), std::move(history)};
}

}  // namespace bacon

#endif
