#ifndef BACON_FEATURENET_HPP
#define BACON_FEATURENET_HPP

// Embedding network: a small ConvNet (conv blocks with instance norm,
// ReLU, stride-2 average pooling) or an MLP for fast synthetic-data
// tests. The embedding head returns pre-classifier features; the logits
// head appends the linear classifier.

#include <cmath>
#include <fstream>
#include <string>
#include <vector>

#include "bacon/binio.hpp"
#include "bacon/nn_ops.hpp"
#include "bacon/rng.hpp"
#include "bacon/tensor.hpp"

namespace bacon {

enum class Arch { convnet, mlp };
enum class Norm { instance, none };
enum class Head { embedding, logits };

struct FeatureNetConfig {
  Arch arch = Arch::convnet;
  std::size_t conv_blocks = 3;
  std::size_t channels = 128;
  std::size_t kernel = 3;
  Norm norm = Norm::instance;
  std::vector<std::size_t> mlp_hidden = {128, 128};
  std::size_t in_h = 28, in_w = 28, in_ch = 1;
  std::size_t classes = 10;
  std::uint64_t seed = 0;

  std::size_t pooled_side(std::size_t side) const {
    // avg pool kernel 3 stride 2 pad 1, applied once per block
    for (std::size_t i = 0; i < conv_blocks; ++i) side = (side + 2 - 3) / 2 + 1;
    return side;
  }
  std::size_t embedding_dim() const {
    if (arch == Arch::mlp) return mlp_hidden.empty() ? in_h * in_w * in_ch
                                                     : mlp_hidden.back();
    return channels * pooled_side(in_h) * pooled_side(in_w);
  }
};

struct SgdConfig {
  real lr = real(0.01);
  real momentum = real(0.9);
  real weight_decay = real(0.0005);
};

// Momentum buffers mirroring a parameter list.
class OptimizerState {
 public:
  OptimizerState() = default;
  explicit OptimizerState(SgdConfig cfg) : cfg_(cfg) {}

  const SgdConfig& config() const { return cfg_; }

  void step(std::vector<Tensor>& params) {
    if (buffers_.size() != params.size()) {
      buffers_.clear();
      for (auto& p : params) buffers_.emplace_back(p.size(), real(0));
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto& p = params[i].data();
      const auto& g = params[i].grad();
      auto& v = buffers_[i];
      for (std::size_t j = 0; j < p.size(); ++j) {
        const real grad = (g.empty() ? real(0) : g[j]) + cfg_.weight_decay * p[j];
        v[j] = cfg_.momentum * v[j] + grad;
        p[j] -= cfg_.lr * v[j];
      }
    }
  }

  std::vector<std::vector<real>>& buffers() { return buffers_; }
  const std::vector<std::vector<real>>& buffers() const { return buffers_; }

 private:
  SgdConfig cfg_;
  std::vector<std::vector<real>> buffers_;
};

class FeatureNet {
 public:
  explicit FeatureNet(FeatureNetConfig cfg) : cfg_(cfg) { reinit(cfg.seed); }

  const FeatureNetConfig& config() const { return cfg_; }

  // Kaiming fan-in init for weights, zero biases. Deterministic by seed.
  void reinit(std::uint64_t seed) {
    cfg_.seed = seed;
    params_.clear();
    names_.clear();
    auto eng = make_engine(derive_seed(seed, "featurenet-init"));
    if (cfg_.arch == Arch::convnet) {
      std::size_t ci = cfg_.in_ch;
      for (std::size_t b = 0; b < cfg_.conv_blocks; ++b) {
        const std::size_t co = cfg_.channels, k = cfg_.kernel;
        add_weight("conv" + std::to_string(b) + ".w", {co, ci, k, k},
                   ci * k * k, eng);
        add_zeros("conv" + std::to_string(b) + ".b", {co});
        ci = co;
      }
      add_weight("fc.w", {cfg_.embedding_dim(), cfg_.classes},
                 cfg_.embedding_dim(), eng);
      add_zeros("fc.b", {cfg_.classes});
    } else {
      std::size_t prev = cfg_.in_h * cfg_.in_w * cfg_.in_ch;
      for (std::size_t i = 0; i < cfg_.mlp_hidden.size(); ++i) {
        const std::size_t h = cfg_.mlp_hidden[i];
        add_weight("dense" + std::to_string(i) + ".w", {prev, h}, prev, eng);
        add_zeros("dense" + std::to_string(i) + ".b", {h});
        prev = h;
      }
      add_weight("fc.w", {prev, cfg_.classes}, prev, eng);
      add_zeros("fc.b", {cfg_.classes});
    }
    set_trainable(trainable_);
  }

  // Toggle parameter-gradient tracking; the distillation loop only needs
  // gradients with respect to pixels.
  void set_trainable(bool on) {
    trainable_ = on;
    for (auto& p : params_) p.node()->requires_grad = on;
  }

  Tensor forward(const Tensor& batch, Head head) const {
    check_batch(batch);
    Tensor z = embed(batch);
    if (head == Head::embedding) return z;
    return linear(z, param("fc.w"), param("fc.b"));
  }

  // One SGD step on cross-entropy of the logits head; returns pre-step loss.
  real train_step(const Tensor& batch, const std::vector<std::size_t>& labels,
                  OptimizerState& opt) {
    for (auto y : labels)
      if (y >= cfg_.classes) throw LabelOutOfRange("label " + std::to_string(y));
    Tape tape;
    const bool was = trainable_;
    set_trainable(true);
    Tensor loss = cross_entropy(forward(batch, Head::logits), labels);
    for (auto& p : params_) p.zero_grad();
    tape.backward(loss);
    opt.step(params_);
    set_trainable(was);
    return loss.item();
  }

  std::vector<Tensor>& params() { return params_; }
  const std::vector<Tensor>& params() const { return params_; }
  const std::vector<std::string>& param_names() const { return names_; }

  void save(const std::string& path) const {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot write " + path);
    os.write("BCNN", 4);
    write_le<std::uint32_t>(os, 1);
    write_le<std::uint32_t>(os, std::uint32_t(params_.size()));
    for (std::size_t i = 0; i < params_.size(); ++i) {
      write_string(os, names_[i]);
      const auto& sh = params_[i].shape();
      write_le<std::uint32_t>(os, std::uint32_t(sh.size()));
      for (auto d : sh) write_le<std::uint32_t>(os, std::uint32_t(d));
      write_f64_array(os, params_[i].data());
    }
  }

  void load(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open " + path);
    char magic[4];
    read_bytes(is, magic, 4);
    if (std::string(magic, 4) != "BCNN") throw BadMagic("not a BCNN file");
    if (read_le<std::uint32_t>(is) != 1) throw VersionUnsupported("BCNN version");
    const auto count = read_le<std::uint32_t>(is);
    if (count != params_.size())
      throw ShapeMismatch("checkpoint tensor count mismatch");
    for (std::size_t i = 0; i < count; ++i) {
      const std::string name = read_string(is);
      if (name != names_[i]) throw ShapeMismatch("checkpoint name " + name);
      const auto rank = read_le<std::uint32_t>(is);
      Shape sh(rank);
      for (auto& d : sh) d = read_le<std::uint32_t>(is);
      if (sh != params_[i].shape()) throw ShapeMismatch("checkpoint shape " + name);
      params_[i].data() = read_f64_array(is, numel(sh));
    }
  }

 private:
  void check_batch(const Tensor& batch) const {
    if (batch.shape().size() != 4 || batch.dim(1) != cfg_.in_ch ||
        batch.dim(2) != cfg_.in_h || batch.dim(3) != cfg_.in_w)
      throw ShapeMismatch("batch " + shape_str(batch.shape()) + " vs config");
  }

  Tensor embed(const Tensor& batch) const {
    if (cfg_.arch == Arch::convnet) {
      Tensor h = batch;
      for (std::size_t b = 0; b < cfg_.conv_blocks; ++b) {
        h = conv2d(h, param("conv" + std::to_string(b) + ".w"),
                   param("conv" + std::to_string(b) + ".b"), cfg_.kernel / 2);
        if (cfg_.norm == Norm::instance) h = instance_norm2d(h);
        h = relu(h);
        h = avg_pool2d(h, 3, 2, 1);
      }
      return flatten_rows(h);
    }
    Tensor h = flatten_rows(batch);
    for (std::size_t i = 0; i < cfg_.mlp_hidden.size(); ++i)
      h = relu(linear(h, param("dense" + std::to_string(i) + ".w"),
                      param("dense" + std::to_string(i) + ".b")));
    return h;
  }

  const Tensor& param(const std::string& name) const {
    for (std::size_t i = 0; i < names_.size(); ++i)
      if (names_[i] == name) return params_[i];
    throw Error("no parameter " + name);
  }

  void add_weight(std::string name, Shape shape, std::size_t fan_in,
                  std::mt19937_64& eng) {
    const real std_dev = std::sqrt(real(2) / real(fan_in));
    std::vector<real> w(numel(shape));
    for (auto& x : w) x = gaussian(eng, 0, std_dev);
    params_.push_back(Tensor::param(std::move(shape), std::move(w)));
    names_.push_back(std::move(name));
  }
  void add_zeros(std::string name, Shape shape) {
    const std::size_t n = numel(shape);
    params_.push_back(Tensor::param(std::move(shape), std::vector<real>(n, 0)));
    names_.push_back(std::move(name));
  }

  FeatureNetConfig cfg_;
  std::vector<Tensor> params_;
  std::vector<std::string> names_;
  bool trainable_ = true;
};

}  // namespace bacon

#endif
