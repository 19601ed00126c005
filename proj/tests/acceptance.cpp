// Acceptance suite: one line per criterion, PASS/FAIL (criterion 8 may
// SKIP when the MNIST data root or the slow-run opt-in is absent).
// Exit code 0 iff no criterion fails.

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <vector>

#include "bacon/binio.hpp"
#include "bacon/data.hpp"
#include "bacon/distill.hpp"
#include "bacon/eval.hpp"
#include "bacon/theory.hpp"
#include "oracles.hpp"

using namespace bacon;
namespace fs = std::filesystem;

namespace {

int g_failures = 0;

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
      .count();
}

void report(int criterion, const char* name, bool pass, const std::string& detail,
            double secs) {
  std::printf("%s criterion %2d: %-38s %s (%.1fs)\n", pass ? "PASS" : "FAIL",
              criterion, name, detail.c_str(), secs);
  if (!pass) ++g_failures;
}

FeatureNetConfig identity_net(std::size_t classes, std::size_t side) {
  FeatureNetConfig cfg;
  cfg.arch = Arch::mlp;
  cfg.mlp_hidden = {};
  cfg.in_ch = 1;
  cfg.in_h = side;
  cfg.in_w = side;
  cfg.classes = classes;
  cfg.seed = 1;
  return cfg;
}

// ---- 1. gradient suite ------------------------------------------------------

void criterion1() {
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 eng(11);
  double worst = 0;
  std::size_t instances = 0;

  // loss objectives on random instances
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t M = 1 + eng() % 3, K = 2 + eng() % 4, N = 1 + eng() % 5;
    Tensor a = oracles::random_tensor({K, N}, eng, -2, 2, false);
    LossConfig lc;
    lc.pairwise = trial % 4 == 0;
    lc.sigma_policy = trial % 2 ? SigmaPolicy::per_dimension
                                : SigmaPolicy::per_class_scalar;
    auto stats = estimate_class_stats(a, lc);
    Tensor z = oracles::random_tensor({M, N}, eng, -2, 2, true);
    worst = std::max(worst, oracles::gradient_check({z}, [&] {
      return loss_total(z, stats, a, lc).total;
    }));
    ++instances;
  }

  // clip-kink straddles: residuals parked just inside/outside u=0 and u=1
  {
    ClassStats s;
    s.mean = {0};
    s.sigma = {1};
    s.count = 1;
    for (real u0 : {-0.4, -1e-3, 1e-3, 0.9995, 1.0005, 1.8}) {
      Tensor z = Tensor::param({1, 1}, {u0});
      worst = std::max(worst, oracles::gradient_check(
                                  {z}, [&] { return loss_clip(z, s); }, 1e-6));
      ++instances;
    }
  }

  // full per-step pixel gradient through the feature network
  for (int trial = 0; trial < 3; ++trial) {
    FeatureNetConfig nc;
    nc.conv_blocks = 2;
    nc.channels = 2;
    nc.in_h = 8;
    nc.in_w = 8;
    nc.in_ch = 1;
    nc.classes = 3;
    nc.seed = 100 + std::uint64_t(trial);
    FeatureNet net(nc);
    net.set_trainable(false);
    Tensor anchors_px = oracles::random_tensor({4, 1, 8, 8}, eng, -1, 1, false);
    Tensor anchors_z;
    {
      Tape probe;
      probe.active = false;
      anchors_z = net.forward(anchors_px, Head::embedding);
    }
    LossConfig lc;
    auto stats = estimate_class_stats(anchors_z, lc);
    Tensor px = oracles::random_tensor({2, 1, 8, 8}, eng, -1, 1, true);
    worst = std::max(worst, oracles::gradient_check({px}, [&] {
      Tensor z = net.forward(px, Head::embedding);
      return loss_total(z, stats, anchors_z, lc).total;
    }));
    ++instances;
  }

  const double secs = seconds_since(t0);
  char buf[128];
  std::snprintf(buf, sizeof(buf), "worst rel err %.2e over %zu instances", worst,
                instances);
  report(1, "finite-difference gradient suite",
         worst < 1e-4 && secs < 120, buf, secs);
}

// ---- 2. Theorem 1 equivalence -----------------------------------------------

void criterion2() {
  const auto t0 = std::chrono::steady_clock::now();
  const std::vector<GaussianSpec> specs = {
      {0, 1, 0, 1, 1},  {0, 1, 0, 1, 2},  {0, 1, 0, 1, 3},  {0, 1, 0, 1, 4},
      {1, 1, -1, 1, 2}, {0, 2, 0, 0.5, 2}, {0.5, 0.3, 0.2, 0.4, 3},
  };
  std::size_t agree = 0, total = 0;
  for (std::size_t si = 0; si < specs.size(); ++si)
    for (real eps : {0.5, 1.0, 2.0}) {
      RiskConfig rc;
      rc.epsilon = eps;
      rc.mc_samples = 40000;
      rc.seed = 2000 + si * 10 + std::uint64_t(eps * 2);
      rc.spec = specs[si];
      auto a = estimate_risk_direct(rc);
      auto b = estimate_risk_theorem1(rc);
      const real tol =
          3 * std::sqrt(a.stderr_ * a.stderr_ + b.stderr_ * b.stderr_);
      agree += std::fabs(a.value - b.value) <= tol + 1e-9;
      ++total;
    }

  // point-mass degenerate specs agree exactly
  bool exact = true;
  {
    PointMassSpec close, far, mixed;
    close.pairs = {{{1, 2}, {1, 2}}};
    far.pairs = {{{0, 0}, {9, 0}}};
    mixed.pairs = {{{0}, {0}}, {{0.1}, {0.1}}};
    for (const auto& spec : {close, far, mixed}) {
      RiskConfig rc;
      rc.epsilon = 0.5;
      rc.mc_samples = 2000;
      rc.seed = 7;
      rc.spec = spec;
      exact = exact &&
              estimate_risk_direct(rc).value == estimate_risk_theorem1(rc).value;
      ++total;
      agree += 1;  // counted via `exact` below
    }
  }

  const double secs = seconds_since(t0);
  char buf[128];
  std::snprintf(buf, sizeof(buf), "%zu/%zu specs agree, point-mass exact=%d",
                agree, total, int(exact));
  report(2, "theorem-1 risk equivalence",
         agree == total && exact && total >= 20 && secs < 60, buf, secs);
}

// ---- 3. Jensen property -------------------------------------------------------

void criterion3() {
  const auto t0 = std::chrono::steady_clock::now();
  auto eng = make_engine(33);
  std::uniform_real_distribution<real> len(1, 8), val(0.001, 20);
  std::size_t violations = 0;
  for (int i = 0; i < 10000; ++i) {
    std::vector<real> v(std::size_t(len(eng)));
    for (auto& x : v) x = val(eng);
    auto [lhs, rhs] = jensen_gap(v);
    violations += lhs < rhs - 1e-12;
  }
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%zu violations over 10000 vectors",
                violations);
  report(3, "Jensen inequality", violations == 0, buf, seconds_since(t0));
}

// ---- 4. risk monotonicity ------------------------------------------------------

void criterion4() {
  const auto t0 = std::chrono::steady_clock::now();
  bool mono = true;
  RiskEstimate prev;
  std::string values;
  const std::vector<real> grid = {0.25, 0.5, 1, 2, 4};
  for (std::size_t i = 0; i < grid.size(); ++i) {
    RiskConfig rc;
    rc.epsilon = grid[i];
    rc.mc_samples = 40000;
    rc.seed = 44 + i;
    rc.spec = GaussianSpec{0, 1, 0, 1, 2};
    auto e = estimate_risk_direct(rc);
    if (i > 0) {
      const real tol =
          3 * std::sqrt(e.stderr_ * e.stderr_ + prev.stderr_ * prev.stderr_);
      mono = mono && e.value <= prev.value + tol;
    }
    char v[32];
    std::snprintf(v, sizeof(v), "%s%.3f", i ? " " : "", double(e.value));
    values += v;
    prev = e;
  }
  report(4, "risk monotonicity in epsilon", mono, "R = [" + values + "]",
         seconds_since(t0));
}

// ---- 5. loss-oracle equivalence -------------------------------------------------

void criterion5() {
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 eng(55);
  real worst = 0;
  for (int trial = 0; trial < 50; ++trial) {
    // k >= 2 keeps sigma off its floor; floored sigma inflates LH to ~1e12
    // where a 1e-12 absolute tolerance is below fp resolution
    const std::size_t M = 1 + eng() % 4, K = 2 + eng() % 5, N = 1 + eng() % 6;
    Tensor z = oracles::random_tensor({M, N}, eng, -3, 3, false);
    Tensor a = oracles::random_tensor({K, N}, eng, -3, 3, false);
    LossConfig lc;
    lc.sigma_policy = trial % 2 ? SigmaPolicy::per_dimension
                                : SigmaPolicy::per_class_scalar;
    auto stats = estimate_class_stats(a, lc);
    auto loop_s =
        oracles::loop_stats(oracles::rows_of(a), trial % 2 == 0, lc.sigma_floor);
    auto zr = oracles::rows_of(z);
    worst = std::max(worst, std::fabs(loss_lh(z, stats).item() -
                                      oracles::loop_lh(zr, loop_s)));
    worst = std::max(worst, std::fabs(loss_tv(z, a).item() -
                                      oracles::loop_tv(zr, oracles::rows_of(a))));
    worst = std::max(worst, std::fabs(loss_clip(z, stats).item() -
                                      oracles::loop_clip(zr, loop_s)));
  }
  char buf[64];
  std::snprintf(buf, sizeof(buf), "worst abs diff %.2e over 50x3 instances",
                double(worst));
  report(5, "scalar-loop loss oracle equivalence", worst < 1e-12, buf,
         seconds_since(t0));
}

// ---- 6. lambda endpoints and affinity --------------------------------------------

void criterion6() {
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 eng(66);
  bool ok = true;
  for (int trial = 0; trial < 20; ++trial) {
    Tensor z = oracles::random_tensor({2, 4}, eng, -3, 3, false);
    Tensor a = oracles::random_tensor({5, 4}, eng, -3, 3, false);
    LossConfig lc;
    auto stats = estimate_class_stats(a, lc);
    auto J = [&](real lambda) {
      LossConfig c = lc;
      c.lambda = lambda;
      return loss_total(z, stats, a, c);
    };
    auto b0 = J(0), b1 = J(1);
    ok = ok && b1.total.item() == -b1.lh + b1.tv;
    ok = ok && b0.total.item() == -b0.lh + b0.clip;
    // affinity: J(l2) - J(l1) == (l2 - l1)(tv - clip) to fp rounding
    const real j3 = J(0.3).total.item(), j7 = J(0.7).total.item();
    ok = ok && std::fabs((j7 - j3) - real(0.4) * (b0.tv - b0.clip)) < 1e-12;
  }
  report(6, "lambda endpoints and affinity", ok, "20 random instances",
         seconds_since(t0));
}

// ---- 7. blob trend reproduction ---------------------------------------------------

void criterion7() {
  const auto t0 = std::chrono::steady_clock::now();
  auto [train, test] = make_blobs(10, 64, {1, 4, 4}, 1.5, 1);
  FeatureNetConfig nc = identity_net(10, 4);
  EvalConfig ec;
  ec.seeds = 5;
  ec.epochs = 60;
  ec.batch_size = 64;
  ec.classifier = nc;
  ec.optimizer = SgdConfig{0.1, 0.9, 0};
  ec.base_seed = 99;

  auto bacon_run = [&](std::size_t ipc) {
    DistillConfig dc;
    dc.ipc = ipc;
    dc.outer_steps = 50;
    dc.anchors_per_class = 64;
    dc.image_lr = 0.1;
    dc.net = nc;
    dc.seed = 2;
    auto [syn, history] = run_distillation(train, dc);
    return evaluate(syn, test, ec).mean;
  };
  auto random_run = [&](std::size_t ipc) {
    return evaluate(coreset_random(train, ipc, 2), test, ec).mean;
  };

  const real b1 = bacon_run(1), b10 = bacon_run(10);
  const real r1 = random_run(1), r10 = random_run(10);
  const bool pass = (b1 >= r1 + 0.05) && (b10 >= b1) && (r10 >= r1);
  const double secs = seconds_since(t0);
  char buf[160];
  std::snprintf(buf, sizeof(buf),
                "bacon ipc1=%.3f ipc10=%.3f random ipc1=%.3f ipc10=%.3f",
                double(b1), double(b10), double(r1), double(r10));
  report(7, "blob trend: BACON > random, IPC-10 >= IPC-1",
         pass && secs < 600, buf, secs);
}

// ---- 8. MNIST trend (slow, opt-in) -------------------------------------------------

void criterion8() {
  const auto t0 = std::chrono::steady_clock::now();
  const char* root = std::getenv("BACON_DATA_ROOT");
  const char* slow = std::getenv("BACON_RUN_SLOW");
  auto find = [&](const std::string& name) -> std::string {
    if (!root) return "";
    for (const std::string& p :
         {std::string(root) + "/mnist/" + name, std::string(root) + "/" + name})
      for (const std::string& q : {p, p + ".gz"})
        if (fs::exists(q)) return q;
    return "";
  };
  const std::string ti = find("train-images-idx3-ubyte");
  const std::string tl = find("train-labels-idx1-ubyte");
  const std::string vi = find("t10k-images-idx3-ubyte");
  const std::string vl = find("t10k-labels-idx1-ubyte");
  if (!slow || ti.empty() || tl.empty() || vi.empty() || vl.empty()) {
    std::printf(
        "SKIP criterion  8: MNIST trend (opt-in)                 "
        "set BACON_RUN_SLOW=1 and BACON_DATA_ROOT to run (0.0s)\n");
    return;
  }

  Dataset train = load_idx(ti, tl);
  Dataset test = load_idx(vi, vl, &train);

  FeatureNetConfig nc;  // desk-preset network
  nc.channels = 32;
  nc.in_h = 28;
  nc.in_w = 28;
  nc.in_ch = 1;
  nc.classes = 10;
  nc.seed = 1;
  EvalConfig ec;
  ec.seeds = 3;
  ec.epochs = 100;
  ec.batch_size = 256;
  ec.classifier = nc;
  ec.base_seed = 5;

  auto bacon_run = [&](bool clip_only) {
    DistillConfig dc;
    dc.ipc = 10;
    dc.outer_steps = 2000;
    dc.anchors_per_class = 64;
    dc.net = nc;
    dc.seed = 5;
    if (clip_only) {
      dc.loss.enable_lh = false;
      dc.loss.enable_tv = false;
    }
    auto [syn, history] = run_distillation(train, dc);
    return evaluate(syn, test, ec).mean;
  };
  const real full = bacon_run(false);
  const real clip_only = bacon_run(true);
  const real rnd = evaluate(coreset_random(train, 10, 5), test, ec).mean;

  const bool pass = (full >= rnd + 0.02) && (full >= clip_only + 0.02);
  char buf[128];
  std::snprintf(buf, sizeof(buf), "bacon=%.3f clip-only=%.3f random=%.3f",
                double(full), double(clip_only), double(rnd));
  report(8, "MNIST trend (opt-in)", pass, buf, seconds_since(t0));
}

// ---- 9. determinism ------------------------------------------------------------------

void criterion9() {
  const auto t0 = std::chrono::steady_clock::now();
  const fs::path dir = fs::temp_directory_path() / "bacon_acc9";
  fs::create_directories(dir);
  auto [train, test] = make_blobs(5, 32, {1, 4, 4}, 2.0, 9);
  DistillConfig dc;
  dc.ipc = 2;
  dc.outer_steps = 30;
  dc.anchors_per_class = 32;
  dc.net = identity_net(5, 4);
  dc.seed = 12;

  std::vector<std::uint64_t> digests;
  for (int run = 0; run < 2; ++run) {
    auto [syn, history] = run_distillation(train, dc);
    const fs::path p = dir / ("run" + std::to_string(run) + ".bsyn");
    save_synthetic(syn, p.string());
    digests.push_back(file_digest(p.string()));
  }
  fs::remove_all(dir);
  char buf[64];
  std::snprintf(buf, sizeof(buf), "digest %#llx",
                (unsigned long long)digests[0]);
  report(9, "bit-identical rerun digests", digests[0] == digests[1], buf,
         seconds_since(t0));
}

// ---- 10. format round-trips -------------------------------------------------------------

void criterion10() {
  const auto t0 = std::chrono::steady_clock::now();
  const fs::path dir = fs::temp_directory_path() / "bacon_acc10";
  fs::create_directories(dir);
  bool ok = true;

  // IDX golden fixture: two 2x2 images, known bytes
  {
    const std::vector<unsigned char> pixels = {0, 64, 128, 255, 10, 20, 30, 40};
    std::vector<unsigned char> img = {0, 0, 8, 3, 0, 0, 0, 2,
                                      0, 0, 0, 2, 0, 0, 0, 2};
    img.insert(img.end(), pixels.begin(), pixels.end());
    const std::vector<unsigned char> lab = {0, 0, 8, 1, 0, 0, 0, 2, 7, 1};
    auto dump = [&](const fs::path& p, const std::vector<unsigned char>& b) {
      std::ofstream os(p, std::ios::binary);
      os.write(reinterpret_cast<const char*>(b.data()),
               std::streamsize(b.size()));
    };
    dump(dir / "img.idx", img);
    dump(dir / "lab.idx", lab);
    Dataset ds = load_idx((dir / "img.idx").string(), (dir / "lab.idx").string());
    ok = ok && ds.count() == 2 && ds.labels == std::vector<std::size_t>{7, 1};
    auto raw = ds.denormalize(ds.images.data());
    for (std::size_t i = 0; i < raw.size(); ++i)
      ok = ok && std::fabs(raw[i] - real(pixels[i]) / 255) < 1e-12;
  }

  // BSYN round-trip bit-exact
  auto [train, test] = make_blobs(5, 16, {1, 4, 4}, 2.0, 10);
  {
    SyntheticSet s = init_synthetic(train, 2, 3);
    save_synthetic(s, (dir / "set.bsyn").string());
    SyntheticSet r = load_synthetic((dir / "set.bsyn").string());
    ok = ok && r.images.data() == s.images.data() && r.labels == s.labels;
  }

  // snapshot-resume bit-exact
  {
    DistillConfig dc;
    dc.ipc = 1;
    dc.outer_steps = 25;
    dc.anchors_per_class = 16;
    dc.net = identity_net(5, 4);
    dc.seed = 13;
    dc.snapshot_every = 5;
    dc.snapshot_dir = dir.string();
    auto [full, hist] = run_distillation(train, dc);
    Snapshot snap = load_snapshot((dir / "step_15").string());
    DistillConfig rest = dc;
    rest.snapshot_every = 0;
    auto [resumed, rh] = run_distillation(train, rest, &snap);
    ok = ok && resumed.images.data() == full.images.data();
  }

  fs::remove_all(dir);
  report(10, "format round-trips", ok, "IDX golden, BSYN, snapshot-resume",
         seconds_since(t0));
}

}  // namespace

int main() {
  criterion1();
  criterion2();
  criterion3();
  criterion4();
  criterion5();
  criterion6();
  criterion7();
  criterion8();
  criterion9();
  criterion10();
  if (g_failures) {
    std::printf("acceptance: %d criterion(s) FAILED\n", g_failures);
    return 1;
  }
  std::printf("acceptance: all criteria passed (criterion 8 may be skipped)\n");
  return 0;
}
