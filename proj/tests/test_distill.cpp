#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <map>

#include "bacon/distill.hpp"

using namespace bacon;

namespace {

FeatureNetConfig identity_net(std::size_t classes, std::size_t h = 2,
                              std::size_t w = 2) {
  // MLP with no hidden layers: the embedding is the flattened image,
  // which makes the geometry of the objective checkable by hand.
  FeatureNetConfig cfg;
  cfg.arch = Arch::mlp;
  cfg.mlp_hidden = {};
  cfg.in_ch = 1;
  cfg.in_h = h;
  cfg.in_w = w;
  cfg.classes = classes;
  cfg.seed = 1;
  return cfg;
}

DistillConfig blob_config(std::size_t classes, std::size_t h = 2,
                          std::size_t w = 2) {
  DistillConfig cfg;
  cfg.ipc = 1;
  cfg.outer_steps = 20;
  cfg.anchors_per_class = 32;
  cfg.net = identity_net(classes, h, w);
  cfg.seed = 7;
  return cfg;
}

// Single-class dataset whose images are all the same point.
Dataset constant_dataset(std::size_t n, const std::vector<real>& image) {
  Dataset ds;
  ds.name = "const";
  ds.split = "train";
  ds.classes = 1;
  std::vector<real> px;
  for (std::size_t i = 0; i < n; ++i)
    px.insert(px.end(), image.begin(), image.end());
  ds.images = Tensor::from({n, 1, 2, 2}, std::move(px));
  ds.labels.assign(n, 0);
  ds.channel_mean = {0};
  ds.channel_std = {1};
  ds.value_low = -10;
  ds.value_high = 10;
  ds.build_index();
  return ds;
}

}  // namespace

TEST_CASE("init_synthetic: layout, determinism, distinctness") {
  auto [train, test] = make_blobs(10, 6, {1, 4, 4}, 2.0, 3);

  SyntheticSet a = init_synthetic(train, 1, 55);
  CHECK(a.count() == 10);
  CHECK(a.labels == std::vector<std::size_t>{0, 1, 2, 3, 4, 5, 6, 7, 8, 9});
  SyntheticSet b = init_synthetic(train, 1, 55);
  CHECK(a.images.data() == b.images.data());

  // each row must be an exact copy of a real image of the right class,
  // and rows within a class distinct, over 100 seeds
  const std::size_t isz = train.image_size();
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    SyntheticSet s = init_synthetic(train, 3, seed);
    for (std::size_t c = 0; c < 10; ++c) {
      std::vector<std::vector<real>> rows;
      for (std::size_t i = 0; i < 3; ++i) {
        const std::size_t row = c * 3 + i;
        std::vector<real> px(s.images.data().begin() + row * isz,
                             s.images.data().begin() + (row + 1) * isz);
        bool found = false;
        for (auto idx : train.class_indices[c]) {
          std::vector<real> ref(train.images.data().begin() + idx * isz,
                                train.images.data().begin() + (idx + 1) * isz);
          if (ref == px) {
            found = true;
            break;
          }
        }
        REQUIRE(found);
        for (const auto& prev : rows) REQUIRE(prev != px);
        rows.push_back(std::move(px));
      }
    }
  }

  CHECK_THROWS_AS(init_synthetic(train, 7, 0), InsufficientClassExamples);
}

TEST_CASE("sample_anchors: shapes, determinism, uniformity") {
  auto [train, test] = make_blobs(3, 8, {1, 2, 2}, 2.0, 9);
  FeatureNet net(identity_net(3));

  AnchorBatch one = sample_anchors(train, 1, 1, net, 4);
  CHECK(one.images.shape() == Shape{1, 1, 2, 2});
  CHECK(one.embeddings.shape() == Shape{1, 4});
  // identity net: embedding equals flattened image
  CHECK(one.embeddings.data() == one.images.data());

  AnchorBatch r1 = sample_anchors(train, 0, 16, net, 42);
  AnchorBatch r2 = sample_anchors(train, 0, 16, net, 42);
  CHECK(r1.images.data() == r2.images.data());

  CHECK_THROWS_AS(sample_anchors(train, 5, 1, net, 0), UnknownClass);

  // empirical frequency over 10^5 draws: uniform over the 8 class members
  // within 3 sigma binomial bounds per member
  const std::size_t k = 100000, m = train.class_indices[0].size();
  AnchorBatch big = sample_anchors(train, 0, k, net, 2718);
  const std::size_t isz = train.image_size();
  std::map<std::vector<real>, std::size_t> counts;
  for (std::size_t i = 0; i < k; ++i)
    counts[std::vector<real>(big.images.data().begin() + i * isz,
                             big.images.data().begin() + (i + 1) * isz)]++;
  REQUIRE(counts.size() == m);
  const real expect = real(k) / real(m);
  const real sigma = std::sqrt(real(k) * (1.0 / m) * (1.0 - 1.0 / m));
  for (const auto& [img, cnt] : counts)
    CHECK(std::fabs(real(cnt) - expect) < 3 * sigma);
}

TEST_CASE("distill_step: alpha 0 leaves pixels unchanged but reports J") {
  auto [train, test] = make_blobs(3, 16, {1, 2, 2}, 2.0, 1);
  DistillConfig cfg = blob_config(3);
  cfg.image_lr = 0;
  FeatureNet net(cfg.net);
  SyntheticSet syn = init_synthetic(train, 1, 1);
  auto before = syn.images.data();
  std::vector<real> momentum;
  StepReport rep = distill_step(syn, train, net, cfg, momentum, 0);
  CHECK(syn.images.data() == before);
  CHECK(std::isfinite(rep.total));
  CHECK(rep.tv > 0);
}

TEST_CASE("distill_step: stationary point of the LH term") {
  // every real image is the same point, so the anchor mean equals the
  // synthetic image and the Gaussian log-likelihood gradient vanishes
  Dataset ds = constant_dataset(8, {0.5, -1.0, 2.0, 0.25});
  DistillConfig cfg;
  cfg.ipc = 1;
  cfg.anchors_per_class = 8;
  cfg.net = identity_net(1);
  cfg.loss.enable_tv = false;
  cfg.loss.enable_clip = false;
  FeatureNet net(cfg.net);
  SyntheticSet syn = init_synthetic(ds, 1, 0);
  std::vector<real> momentum;
  StepReport rep = distill_step(syn, ds, net, cfg, momentum, 0);
  CHECK(rep.grad_norm == Catch::Approx(0).margin(1e-12));
  CHECK(syn.images.data() == std::vector<real>{0.5, -1.0, 2.0, 0.25});
}

TEST_CASE("distill_step: momentum 0 update is plain gradient descent") {
  auto [train, test] = make_blobs(3, 16, {1, 2, 2}, 2.0, 2);
  DistillConfig cfg = blob_config(3);
  cfg.image_momentum = 0;
  cfg.image_lr = 1e-3;  // small enough that the clamp never engages
  FeatureNet net(cfg.net);

  SyntheticSet s0 = init_synthetic(train, 1, 3);
  const auto px0 = s0.images.data();

  SyntheticSet s1 = init_synthetic(train, 1, 3);
  std::vector<real> m1;
  distill_step(s1, train, net, cfg, m1, 5);

  DistillConfig half = cfg;
  half.image_lr = cfg.image_lr / 2;
  SyntheticSet s2 = init_synthetic(train, 1, 3);
  std::vector<real> m2;
  distill_step(s2, train, net, half, m2, 5);

  // the update is -lr * g: halving lr halves the displacement exactly
  for (std::size_t i = 0; i < px0.size(); ++i)
    CHECK(s1.images.data()[i] - px0[i] ==
          Catch::Approx(2 * (s2.images.data()[i] - px0[i])).margin(1e-15));
}

TEST_CASE("objective descends on blobs") {
  auto [train, test] = make_blobs(3, 64, {1, 2, 2}, 3.0, 11);
  DistillConfig cfg = blob_config(3);
  cfg.outer_steps = 200;
  cfg.anchors_per_class = 64;
  auto [syn, history] = run_distillation(train, cfg);
  REQUIRE(history.size() == 200);

  // J descends during burn-in, then sits at the anchor-resampling noise
  // floor without drifting back up
  real burned = 0;
  for (std::size_t i = 20; i < 200; ++i) burned = std::max(burned, history[i].total);
  CHECK(history[0].total > burned + 0.5);
  // after burn-in the trajectory almost never rises beyond noise scale
  std::size_t increases = 0;
  for (std::size_t i = 21; i < 200; ++i)
    increases += history[i].total > history[i - 1].total + 0.1;
  CHECK(real(increases) / 179 <= 0.05);
}

TEST_CASE("run_distillation: determinism and single-step equivalence") {
  auto [train, test] = make_blobs(3, 16, {1, 2, 2}, 2.0, 4);
  DistillConfig cfg = blob_config(3);
  cfg.outer_steps = 5;

  auto [a, ha] = run_distillation(train, cfg);
  auto [b, hb] = run_distillation(train, cfg);
  CHECK(a.images.data() == b.images.data());
  for (std::size_t i = 0; i < ha.size(); ++i)
    CHECK(ha[i].total == hb[i].total);

  // outer_steps = 1 is exactly init + one distill_step
  DistillConfig one = cfg;
  one.outer_steps = 1;
  auto [c, hc] = run_distillation(train, one);
  SyntheticSet manual = init_synthetic(train, 1, derive_seed(cfg.seed, "init"));
  FeatureNetConfig ncfg = cfg.net;
  FeatureNet net(ncfg);
  net.reinit(derive_seed(cfg.seed, "net-refresh", 0));
  std::vector<real> momentum;
  distill_step(manual, train, net, one, momentum, 0);
  CHECK(c.images.data() == manual.images.data());
}

TEST_CASE("label immutability and pixel clamp") {
  auto [train, test] = make_blobs(3, 16, {1, 2, 2}, 2.0, 6);
  DistillConfig cfg = blob_config(3);
  cfg.outer_steps = 30;
  cfg.image_lr = 2.0;  // aggressive on purpose, to exercise the clamp
  auto [syn, history] = run_distillation(train, cfg);
  CHECK(syn.labels == std::vector<std::size_t>{0, 1, 2});
  for (real v : syn.images.data()) {
    CHECK(v >= train.value_low);
    CHECK(v <= train.value_high);
  }
}

TEST_CASE("final embeddings move toward class means") {
  auto [train, test] = make_blobs(10, 32, {1, 4, 4}, 2.0, 13);
  DistillConfig cfg = blob_config(10, 4, 4);
  cfg.outer_steps = 100;
  cfg.anchors_per_class = 32;
  SyntheticSet init = init_synthetic(train, 1, derive_seed(cfg.seed, "init"));
  auto [fin, history] = run_distillation(train, cfg);

  // identity embedding: compare pixel distance to the class pixel mean
  const std::size_t isz = train.image_size();
  std::size_t improved = 0;
  for (std::size_t c = 0; c < 10; ++c) {
    std::vector<real> mu(isz, 0);
    for (auto idx : train.class_indices[c])
      for (std::size_t d = 0; d < isz; ++d)
        mu[d] += train.images.data()[idx * isz + d] /
                 real(train.class_indices[c].size());
    auto dist = [&](const Tensor& t) {
      real d2 = 0;
      for (std::size_t d = 0; d < isz; ++d) {
        const real r = t.data()[c * isz + d] - mu[d];
        d2 += r * r;
      }
      return std::sqrt(d2);
    };
    improved += dist(fin.images) < dist(init.images);
  }
  CHECK(improved >= 9);
}

TEST_CASE("snapshot and resume reproduce the uninterrupted run bit-exactly") {
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / "bacon_snap_test";
  fs::create_directories(dir);

  auto [train, test] = make_blobs(3, 16, {1, 2, 2}, 2.0, 8);
  DistillConfig cfg = blob_config(3);
  cfg.outer_steps = 25;
  cfg.model_refresh_interval = 10;
  cfg.snapshot_every = 5;
  cfg.snapshot_dir = dir.string();

  auto [full, hist] = run_distillation(train, cfg);

  // resume mid refresh window (step 15, last refresh was at 10)
  Snapshot snap = load_snapshot((dir / "step_15").string());
  CHECK(snap.next_step == 15);
  DistillConfig rest = cfg;
  rest.snapshot_every = 0;
  auto [resumed, rh] = run_distillation(train, rest, &snap);
  CHECK(resumed.images.data() == full.images.data());
  REQUIRE(rh.size() == 10);
  for (std::size_t i = 0; i < 10; ++i) CHECK(rh[i].total == hist[15 + i].total);

  // snapshot round-trip is bit-exact
  Snapshot s10 = load_snapshot((dir / "step_10").string());
  save_snapshot((dir / "echo").string(), s10.syn, s10.momentum, s10.next_step);
  Snapshot echo = load_snapshot((dir / "echo").string());
  CHECK(echo.syn.images.data() == s10.syn.images.data());
  CHECK(echo.momentum == s10.momentum);
  CHECK(echo.next_step == s10.next_step);

  fs::remove_all(dir);
}
