// bacon: dataset-distillation driver.
// Subcommands: distill | eval | verify | ablate.
// Config resolution: flags > config file > preset > defaults; the resolved
// tree is echoed into a run manifest before any compute starts.

#include <atomic>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <mutex>
#include <sstream>
#include <thread>

#include "CLI11.hpp"
#include "json.hpp"

#include "bacon/binio.hpp"
#include "bacon/data.hpp"
#include "bacon/distill.hpp"
#include "bacon/eval.hpp"
#include "bacon/theory.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace bacon;

namespace {

constexpr const char* kVersion = "1.0.0";

// ---- small utilities -------------------------------------------------------

void write_atomic(const fs::path& path, const std::string& content) {
  fs::create_directories(path.parent_path().empty() ? "." : path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary);
    if (!os) throw IoError("cannot write " + tmp.string());
    os << content;
  }
  fs::rename(tmp, path);
}

std::string timestamp() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
  return buf;
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, sep))
    if (!item.empty()) out.push_back(item);
  return out;
}

std::string hex_digest(std::uint64_t d) {
  char buf[19];
  std::snprintf(buf, sizeof(buf), "0x%016llx", (unsigned long long)d);
  return buf;
}

// ---- resolved configuration -------------------------------------------------

class Config {
 public:
  Config() {
    for (const auto& [k, v] : defaults()) {
      values_[k] = v;
      sources_[k] = "default";
    }
  }

  void set(const std::string& key, const std::string& value,
           const std::string& source) {
    if (!defaults().count(key))
      throw Error("unknown config key '" + key + "'");
    values_[key] = value;
    sources_[key] = source;
  }

  void apply_preset(const std::string& name) {
    static const std::map<std::string, std::map<std::string, std::string>>
        presets = {
            {"desk",
             {{"outer_steps", "2000"},
              {"channels", "32"},
              {"anchors_per_class", "64"},
              {"eval_epochs", "100"}}},
            {"paper",
             {{"outer_steps", "20000"},
              {"channels", "128"},
              {"anchors_per_class", "256"},
              {"eval_epochs", "1000"},
              {"eval_seeds", "5"},
              {"image_lr", "0.2"},
              {"image_momentum", "0.5"}}},
        };
    auto it = presets.find(name);
    if (it == presets.end()) throw Error("unknown preset '" + name + "'");
    preset_ = name;
    for (const auto& [k, v] : it->second) set(k, v, "preset:" + name);
  }

  // key = value lines, '#' comments; a rerun can also point --config at a
  // previous manifest.json
  void apply_file(const std::string& path) {
    if (path.size() > 5 && path.substr(path.size() - 5) == ".json") {
      std::ifstream is(path);
      if (!is) throw IoError("cannot open " + path);
      json m = json::parse(is);
      if (!m.contains("config")) throw Error(path + " has no config object");
      for (auto& [k, v] : m["config"].items())
        set(k, v.get<std::string>(), "file");
      return;
    }
    std::ifstream is(path);
    if (!is) throw IoError("cannot open " + path);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
      ++lineno;
      const auto hash = line.find('#');
      if (hash != std::string::npos) line.erase(hash);
      const auto eq = line.find('=');
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      if (eq == std::string::npos)
        throw Error(path + ":" + std::to_string(lineno) + ": expected key = value");
      auto trim = [](std::string s) {
        const auto a = s.find_first_not_of(" \t\r");
        const auto b = s.find_last_not_of(" \t\r");
        return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
      };
      const std::string key = trim(line.substr(0, eq));
      const std::string val = trim(line.substr(eq + 1));
      if (key == "preset") {
        apply_preset(val);
        continue;
      }
      set(key, val, "file");
    }
  }

  const std::string& str(const std::string& key) const {
    return values_.at(key);
  }
  long long i64(const std::string& key) const { return std::stoll(str(key)); }
  std::size_t u64(const std::string& key) const {
    return std::size_t(std::stoull(str(key)));
  }
  double f64(const std::string& key) const { return std::stod(str(key)); }
  bool flag(const std::string& key) const {
    const std::string& v = str(key);
    return v == "1" || v == "true" || v == "yes" || v == "on";
  }

  std::uint64_t digest() const {
    std::string blob;
    for (const auto& [k, v] : values_) blob += k + "=" + v + "\n";
    return fnv1a(blob.data(), blob.size());
  }

  json to_json() const {
    json cfg = json::object(), src = json::object();
    for (const auto& [k, v] : values_) {
      cfg[k] = v;
      src[k] = sources_.at(k);
    }
    return json{{"preset", preset_}, {"config", cfg}, {"sources", src}};
  }

  DistillConfig distill_config() const {
    DistillConfig dc;
    dc.ipc = u64("ipc");
    dc.outer_steps = u64("outer_steps");
    dc.anchors_per_class = u64("anchors_per_class");
    dc.image_lr = real(f64("image_lr"));
    dc.image_momentum = real(f64("image_momentum"));
    dc.model_refresh_interval = u64("model_refresh_interval");
    dc.net_train_steps = u64("net_train_steps");
    dc.seed = u64("seed");
    dc.snapshot_every = u64("snapshot_every");
    dc.joint_update = flag("joint_update");
    dc.anchor_epsilon = real(f64("anchor_epsilon"));
    dc.use_dm_loss = flag("use_dm_loss");
    dc.loss = loss_config();
    dc.net = net_config();
    return dc;
  }

  LossConfig loss_config() const {
    LossConfig lc;
    lc.lambda = real(f64("lambda"));
    lc.enable_lh = flag("enable_lh");
    lc.enable_tv = flag("enable_tv");
    lc.enable_clip = flag("enable_clip");
    lc.sigma_floor = real(f64("sigma_floor"));
    lc.pairwise = flag("pairwise");
    const std::string& pol = str("sigma_policy");
    if (pol == "per_class_scalar")
      lc.sigma_policy = SigmaPolicy::per_class_scalar;
    else if (pol == "per_dimension")
      lc.sigma_policy = SigmaPolicy::per_dimension;
    else
      throw Error("sigma_policy must be per_class_scalar or per_dimension");
    return lc;
  }

  FeatureNetConfig net_config() const {
    FeatureNetConfig nc;
    const std::string& arch = str("arch");
    if (arch == "convnet")
      nc.arch = Arch::convnet;
    else if (arch == "mlp")
      nc.arch = Arch::mlp;
    else
      throw Error("arch must be convnet or mlp");
    nc.conv_blocks = u64("conv_blocks");
    nc.channels = u64("channels");
    nc.kernel = u64("kernel");
    nc.norm = str("norm") == "none" ? Norm::none : Norm::instance;
    nc.mlp_hidden.clear();
    for (const auto& h : split(str("mlp_hidden"), ','))
      nc.mlp_hidden.push_back(std::size_t(std::stoull(h)));
    nc.seed = u64("seed");
    return nc;
  }

  EvalConfig eval_config() const {
    EvalConfig ec;
    ec.seeds = u64("eval_seeds");
    ec.epochs = u64("eval_epochs");
    ec.batch_size = u64("eval_batch");
    ec.classifier = net_config();
    ec.optimizer = SgdConfig{real(f64("eval_lr")), real(f64("eval_momentum")),
                             real(f64("eval_weight_decay"))};
    ec.base_seed = u64("seed");
    return ec;
  }

 private:
  static const std::map<std::string, std::string>& defaults() {
    static const std::map<std::string, std::string> d = {
        {"dataset", "blobs"},
        {"data_root", ""},
        {"ipc", "1"},
        {"outer_steps", "2000"},
        {"anchors_per_class", "64"},
        {"image_lr", "0.2"},
        {"image_momentum", "0.5"},
        {"model_refresh_interval", "10"},
        {"net_train_steps", "0"},
        {"lambda", "0.8"},
        {"enable_lh", "1"},
        {"enable_tv", "1"},
        {"enable_clip", "1"},
        {"sigma_policy", "per_class_scalar"},
        {"sigma_floor", "1e-6"},
        {"pairwise", "0"},
        {"arch", "convnet"},
        {"conv_blocks", "3"},
        {"channels", "32"},
        {"kernel", "3"},
        {"norm", "instance"},
        {"mlp_hidden", "128,128"},
        {"seed", "0"},
        {"snapshot_every", "0"},
        {"joint_update", "0"},
        {"anchor_epsilon", "0"},
        {"use_dm_loss", "0"},
        {"eval_seeds", "5"},
        {"eval_epochs", "100"},
        {"eval_batch", "256"},
        {"eval_lr", "0.01"},
        {"eval_momentum", "0.9"},
        {"eval_weight_decay", "0.0005"},
        {"blob_classes", "10"},
        {"blob_per_class", "64"},
        {"blob_side", "4"},
        {"blob_separation", "2.0"},
    };
    return d;
  }

  std::string preset_ = "none";
  std::map<std::string, std::string> values_;
  std::map<std::string, std::string> sources_;
};

// Binds CLI flags to config keys; only flags actually passed override.
class FlagBinder {
 public:
  FlagBinder(CLI::App* cmd, Config* cfg) : cmd_(cmd), cfg_(cfg) {}

  void bind(const std::string& flag, const std::string& key,
            const std::string& desc) {
    auto holder = std::make_shared<std::string>();
    cmd_->add_option(flag, *holder, desc);
    bound_.push_back({flag, key, holder});
  }

  void apply() {
    for (const auto& [flag, key, holder] : bound_)
      if (cmd_->count(flag)) cfg_->set(key, *holder, "flag");
  }

 private:
  CLI::App* cmd_;
  Config* cfg_;
  std::vector<std::tuple<std::string, std::string, std::shared_ptr<std::string>>>
      bound_;
};

// ---- dataset plumbing --------------------------------------------------------

std::string data_root(const Config& cfg) {
  if (!cfg.str("data_root").empty()) return cfg.str("data_root");
  if (const char* env = std::getenv("BACON_DATA_ROOT")) return env;
  return ".";
}

std::string find_file(const std::vector<std::string>& candidates) {
  for (const auto& c : candidates)
    if (fs::exists(c)) return c;
  throw IoError("none of the candidate data files exist (first tried: " +
                candidates.front() + ")");
}

struct LoadedData {
  Dataset train, test;
  json digests = json::object();
};

LoadedData load_data(const Config& cfg) {
  const std::string name = cfg.str("dataset");
  LoadedData out;
  if (name == "blobs") {
    const std::size_t side = cfg.u64("blob_side");
    auto [train, test] =
        make_blobs(cfg.u64("blob_classes"), cfg.u64("blob_per_class"),
                   {1, side, side}, real(cfg.f64("blob_separation")),
                   cfg.u64("seed"));
    out.train = std::move(train);
    out.test = std::move(test);
    out.digests["blobs"] =
        json{{"classes", cfg.u64("blob_classes")},
             {"per_class", cfg.u64("blob_per_class")},
             {"side", side},
             {"separation", cfg.f64("blob_separation")},
             {"seed", cfg.u64("seed")}};
    return out;
  }
  const std::string root = data_root(cfg);
  auto idx_pair = [&](const std::string& sub, const std::string& img,
                      const std::string& lab) {
    const std::string ip = find_file({root + "/" + sub + "/" + img,
                                      root + "/" + sub + "/" + img + ".gz",
                                      root + "/" + img, root + "/" + img + ".gz"});
    const std::string lp = find_file({root + "/" + sub + "/" + lab,
                                      root + "/" + sub + "/" + lab + ".gz",
                                      root + "/" + lab, root + "/" + lab + ".gz"});
    out.digests[ip] = hex_digest(file_digest(ip));
    out.digests[lp] = hex_digest(file_digest(lp));
    return std::pair<std::string, std::string>{ip, lp};
  };
  if (name == "mnist" || name == "fashion") {
    auto [ti, tl] = idx_pair(name, "train-images-idx3-ubyte",
                             "train-labels-idx1-ubyte");
    out.train = load_idx(ti, tl);
    out.train.name = name;
    auto [vi, vl] =
        idx_pair(name, "t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte");
    out.test = load_idx(vi, vl, &out.train);
    out.test.name = name;
    return out;
  }
  if (name == "cifar10") {
    std::vector<std::string> batches;
    for (int i = 1; i <= 5; ++i) {
      const std::string p = find_file(
          {root + "/cifar10/data_batch_" + std::to_string(i) + ".bin",
           root + "/data_batch_" + std::to_string(i) + ".bin"});
      out.digests[p] = hex_digest(file_digest(p));
      batches.push_back(p);
    }
    out.train = load_cifar10(batches);
    const std::string tp =
        find_file({root + "/cifar10/test_batch.bin", root + "/test_batch.bin"});
    out.digests[tp] = hex_digest(file_digest(tp));
    out.test = load_cifar10({tp}, &out.train);
    return out;
  }
  throw Error("unknown dataset '" + name + "' (blobs|mnist|fashion|cifar10)");
}

json manifest_json(const std::string& command, const Config& cfg,
                   const json& digests, const std::string& out_dir) {
  json m = cfg.to_json();
  m["command"] = command;
  m["version"] = kVersion;
  m["seed"] = cfg.u64("seed");
  m["config_digest"] = hex_digest(cfg.digest());
  m["dataset_digests"] = digests;
  m["output_dir"] = out_dir;
  m["timestamp"] = timestamp();
  return m;
}

// ---- subcommands --------------------------------------------------------------

int cmd_distill(const Config& cfg, const std::string& out_dir) {
  LoadedData data = load_data(cfg);
  fs::create_directories(out_dir);
  write_atomic(fs::path(out_dir) / "manifest.json",
               manifest_json("distill", cfg, data.digests, out_dir).dump(2));

  DistillConfig dc = cfg.distill_config();
  if (dc.snapshot_every > 0 && dc.snapshot_dir.empty())
    dc.snapshot_dir = out_dir;

  // streamed so a partial history survives interruption
  std::ofstream hist(fs::path(out_dir) / "history.csv");
  hist << "step,J,lh,tv,clip,grad_norm\n";
  auto [syn, history] =
      run_distillation(data.train, dc, nullptr, [&](const StepReport& r) {
        hist << r.step << ',' << r.total << ',' << r.lh << ',' << r.tv << ','
             << r.clip << ',' << r.grad_norm << '\n';
        hist.flush();
      });
  hist.close();

  const fs::path bsyn = fs::path(out_dir) / "synthetic.bsyn";
  save_synthetic(syn, bsyn.string() + ".tmp");
  fs::rename(bsyn.string() + ".tmp", bsyn);

  const std::string digest = hex_digest(file_digest(bsyn.string()));
  json sidecar = manifest_json("distill", cfg, data.digests, out_dir);
  sidecar["bsyn_digest"] = digest;
  sidecar["final_step"] = history.empty() ? 0 : history.back().step + 1;
  sidecar["final_J"] = history.empty() ? 0.0 : double(history.back().total);
  write_atomic(fs::path(out_dir) / "synthetic.json", sidecar.dump(2));

  std::cout << "wrote " << bsyn.string() << " (" << syn.count() << " images)\n"
            << "bsyn_digest=" << digest << "\n";
  return 0;
}

json report_json(const EvalReport& rep) {
  json j;
  j["per_seed"] = rep.per_seed;
  j["mean"] = double(rep.mean);
  j["std"] = double(rep.stddev);
  j["seeds"] = rep.per_seed.size();
  return j;
}

int cmd_eval(const Config& cfg, const std::string& out_dir,
             const std::string& synthetic_path, const std::string& baseline_path,
             bool baseline_random) {
  LoadedData data = load_data(cfg);
  fs::create_directories(out_dir);
  json manifest = manifest_json("eval", cfg, data.digests, out_dir);
  manifest["synthetic"] = synthetic_path;
  write_atomic(fs::path(out_dir) / "manifest.json", manifest.dump(2));

  SyntheticSet set = load_synthetic(synthetic_path);
  EvalConfig ec = cfg.eval_config();
  EvalReport rep = evaluate(set, data.test, ec);

  json out;
  out["synthetic"] = report_json(rep);
  std::cout << "synthetic: mean=" << rep.mean << " std=" << rep.stddev << "\n";

  if (!baseline_path.empty() || baseline_random) {
    SyntheticSet base = baseline_path.empty()
                            ? coreset_random(data.train, set.ipc, ec.base_seed)
                            : load_synthetic(baseline_path);
    EvalReport brep = evaluate(base, data.test, ec);
    out["baseline"] = report_json(brep);
    json delta;
    delta["mean"] = double(rep.mean - brep.mean);
    std::vector<double> paired;
    for (std::size_t i = 0;
         i < std::min(rep.per_seed.size(), brep.per_seed.size()); ++i)
      paired.push_back(double(rep.per_seed[i] - brep.per_seed[i]));
    delta["per_seed"] = paired;
    out["delta"] = delta;
    std::cout << "baseline:  mean=" << brep.mean << " std=" << brep.stddev
              << "\ndelta:     mean=" << rep.mean - brep.mean << "\n";
  }
  write_atomic(fs::path(out_dir) / "report.json", out.dump(2));
  return 0;
}

int cmd_verify(const std::string& epsilon_csv, std::size_t mc,
               std::uint64_t seed, const std::string& out_path) {
  std::vector<real> eps_grid;
  for (const auto& e : split(epsilon_csv, ',')) eps_grid.push_back(std::stod(e));
  if (eps_grid.empty()) throw Error("empty epsilon grid");

  json evidence = json::array();
  bool all_pass = true;
  auto record = [&](const RiskEstimate& e) {
    evidence.push_back(json{{"method", e.method},
                            {"epsilon", double(e.epsilon)},
                            {"value", double(e.value)},
                            {"stderr", double(e.stderr_)},
                            {"n", e.samples},
                            {"seed", e.seed}});
  };
  auto check = [&](const std::string& name, bool pass, const json& detail) {
    evidence.push_back(json{{"check", name}, {"pass", pass}, {"detail", detail}});
    std::cout << (pass ? "PASS " : "FAIL ") << name << "\n";
    all_pass = all_pass && pass;
  };

  // Theorem 1 agreement across a Gaussian spec family
  const std::vector<GaussianSpec> specs = {
      {0, 1, 0, 1, 1}, {0, 1, 0, 1, 2}, {0, 1, 0, 1, 4}, {1, 2, -1, 0.5, 2},
      {0, 0.5, 0.5, 0.5, 3},
  };
  std::size_t agreements = 0, comparisons = 0;
  for (std::size_t si = 0; si < specs.size(); ++si)
    for (real eps : eps_grid) {
      RiskConfig rc;
      rc.epsilon = eps;
      rc.mc_samples = mc;
      rc.seed = derive_seed(seed, "verify", si, std::uint64_t(eps * 1000));
      rc.spec = specs[si];
      auto a = estimate_risk_direct(rc);
      auto b = estimate_risk_theorem1(rc);
      record(a);
      record(b);
      const real tol =
          3 * std::sqrt(a.stderr_ * a.stderr_ + b.stderr_ * b.stderr_);
      ++comparisons;
      agreements += std::fabs(a.value - b.value) <= tol + 1e-9;
    }
  check("theorem1-agreement", agreements == comparisons,
        json{{"agreements", agreements}, {"comparisons", comparisons}});

  // point-mass degenerate exactness
  {
    PointMassSpec close, far;
    close.pairs = {{{0, 0}, {0, 0}}};
    far.pairs = {{{0, 0}, {10, 0}}};
    RiskConfig rc;
    rc.epsilon = 1;
    rc.mc_samples = std::max<std::size_t>(mc, 100);
    rc.seed = seed;
    rc.spec = close;
    auto c1 = estimate_risk_direct(rc), c2 = estimate_risk_theorem1(rc);
    rc.spec = far;
    auto f1 = estimate_risk_direct(rc), f2 = estimate_risk_theorem1(rc);
    record(c1), record(c2), record(f1), record(f2);
    check("point-mass-exact",
          c1.value == 0 && c2.value == 0 && f1.value == 1 && f2.value == 1,
          json{{"close", double(c1.value)}, {"far", double(f1.value)}});
  }

  // monotonicity in epsilon on the unit Gaussian (sorted grid)
  {
    std::vector<real> sorted = eps_grid;
    std::sort(sorted.begin(), sorted.end());
    bool mono = true;
    json rows = json::array();
    RiskEstimate prev;
    for (std::size_t i = 0; i < sorted.size(); ++i) {
      RiskConfig rc;
      rc.epsilon = sorted[i];
      rc.mc_samples = mc;
      rc.seed = derive_seed(seed, "verify-mono", i);
      rc.spec = GaussianSpec{0, 1, 0, 1, 2};
      auto e = estimate_risk_direct(rc);
      record(e);
      rows.push_back(json{{"epsilon", double(sorted[i])}, {"R", double(e.value)}});
      if (i > 0) {
        const real tol =
            3 * std::sqrt(e.stderr_ * e.stderr_ + prev.stderr_ * prev.stderr_);
        mono = mono && e.value <= prev.value + tol;
      }
      prev = e;
    }
    check("risk-monotonicity", mono, rows);
  }

  // Jensen inequality on 10^4 random positive vectors
  {
    auto eng = make_engine(derive_seed(seed, "verify-jensen"));
    std::uniform_real_distribution<real> len(1, 8), val(0.01, 10);
    std::size_t violations = 0;
    for (int i = 0; i < 10000; ++i) {
      std::vector<real> v(std::size_t(len(eng)));
      for (auto& x : v) x = val(eng);
      auto [lhs, rhs] = jensen_gap(v);
      violations += lhs < rhs - 1e-12;
    }
    check("jensen-inequality", violations == 0, json{{"violations", violations}});
  }

  write_atomic(out_path, evidence.dump(2));
  std::cout << (all_pass ? "verify: all checks passed\n"
                         : "verify: FAILURES above\n");
  return all_pass ? 0 : 1;
}

std::vector<real> parse_values(const std::string& spec) {
  // "a:b:step" inclusive range, or comma list
  if (spec.find(':') != std::string::npos) {
    auto parts = split(spec, ':');
    if (parts.size() != 3) throw Error("range must be start:end:step");
    const real a = std::stod(parts[0]), b = std::stod(parts[1]),
               s = std::stod(parts[2]);
    if (s <= 0) throw Error("range step must be positive");
    std::vector<real> out;
    for (real v = a; v <= b + 1e-12; v += s) out.push_back(v);
    return out;
  }
  std::vector<real> out;
  for (const auto& v : split(spec, ',')) out.push_back(std::stod(v));
  return out;
}

int cmd_ablate(const Config& cfg, const std::string& out_dir,
               const std::string& grid, const std::string& values,
               std::size_t jobs) {
  LoadedData data = load_data(cfg);
  fs::create_directories(out_dir);
  json manifest = manifest_json("ablate", cfg, data.digests, out_dir);
  manifest["grid"] = grid;
  write_atomic(fs::path(out_dir) / "manifest.json", manifest.dump(2));

  std::vector<AblationCell> cells;
  if (grid == "loss-terms")
    cells = loss_term_grid(cfg.loss_config());
  else if (grid == "lambda")
    cells = lambda_grid(cfg.loss_config(), parse_values(values));
  else
    throw Error("grid must be loss-terms or lambda");

  // manifest cache: completed cells are keyed by (cell id, config digest)
  const fs::path cache_path = fs::path(out_dir) / "cells.json";
  json cache = json::object();
  if (fs::exists(cache_path)) {
    std::ifstream is(cache_path);
    cache = json::parse(is);
  }
  const std::string cfg_dig = hex_digest(cfg.digest());

  DistillConfig base = cfg.distill_config();
  EvalConfig ec = cfg.eval_config();

  std::vector<AblationResult> results(cells.size());
  std::mutex mtx;
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= cells.size()) return;
      const std::string key = cells[i].id + "@" + cfg_dig;
      {
        std::lock_guard<std::mutex> lock(mtx);
        if (cache.contains(key)) {
          results[i].cell = cells[i];
          results[i].report.per_seed =
              cache[key]["per_seed"].get<std::vector<real>>();
          results[i].report.aggregate();
          continue;
        }
      }
      AblationResult res;
      res.cell = cells[i];
      try {
        DistillConfig dc = base;
        dc.loss = cells[i].loss;
        auto [syn, history] = run_distillation(data.train, dc);
        res.report = evaluate(syn, data.test, ec);
      } catch (const std::exception& e) {
        res.failed = true;
        res.error = e.what();
      }
      std::lock_guard<std::mutex> lock(mtx);
      if (!res.failed) cache[key] = json{{"per_seed", res.report.per_seed}};
      write_atomic(cache_path, cache.dump(2));
      results[i] = std::move(res);
    }
  };
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < std::max<std::size_t>(jobs, 1); ++t)
    pool.emplace_back(worker);
  for (auto& t : pool) t.join();

  std::ostringstream csv, dat;
  csv << "id,lambda,lh,tv,clip,mean,std,seeds\n";
  dat << "# lambda mean std\n";
  for (const auto& r : results) {
    if (r.failed) {
      csv << r.cell.id << ",,,,,FAILED: " << r.error << ",,\n";
      continue;
    }
    csv << r.cell.id << ',' << r.cell.loss.lambda << ','
        << r.cell.loss.enable_lh << ',' << r.cell.loss.enable_tv << ','
        << r.cell.loss.enable_clip << ',' << r.report.mean << ','
        << r.report.stddev << ',' << r.report.per_seed.size() << '\n';
    if (grid == "lambda")
      dat << r.cell.loss.lambda << ' ' << r.report.mean << ' '
          << r.report.stddev << '\n';
  }
  write_atomic(fs::path(out_dir) / "ablate.csv", csv.str());
  if (grid == "lambda")
    write_atomic(fs::path(out_dir) / "lambda.dat", dat.str());
  std::cout << "wrote " << (fs::path(out_dir) / "ablate.csv").string() << " ("
            << results.size() << " rows)\n";
  return 0;
}

void bind_common(FlagBinder& b) {
  b.bind("--dataset", "dataset", "blobs|mnist|fashion|cifar10");
  b.bind("--data-root", "data_root", "dataset directory (or BACON_DATA_ROOT)");
  b.bind("--seed", "seed", "master seed");
  b.bind("--ipc", "ipc", "images per class");
  b.bind("--steps", "outer_steps", "outer optimization steps");
  b.bind("--anchors", "anchors_per_class", "real anchors sampled per class");
  b.bind("--lr", "image_lr", "pixel learning rate");
  b.bind("--momentum", "image_momentum", "pixel momentum");
  b.bind("--refresh", "model_refresh_interval", "net refresh interval");
  b.bind("--net-train-steps", "net_train_steps", "warmup steps after refresh");
  b.bind("--lambda", "lambda", "TV/CLIP mixing weight");
  b.bind("--lh", "enable_lh", "enable the likelihood term (0|1)");
  b.bind("--tv", "enable_tv", "enable the TV term (0|1)");
  b.bind("--clip", "enable_clip", "enable the CLIP term (0|1)");
  b.bind("--sigma-policy", "sigma_policy", "per_class_scalar|per_dimension");
  b.bind("--pairwise", "pairwise", "pairwise anchor comparison (0|1)");
  b.bind("--arch", "arch", "convnet|mlp");
  b.bind("--channels", "channels", "conv channels");
  b.bind("--conv-blocks", "conv_blocks", "conv blocks");
  b.bind("--mlp-hidden", "mlp_hidden", "comma list of MLP widths");
  b.bind("--snapshot-every", "snapshot_every", "snapshot interval (0 off)");
  b.bind("--dm", "use_dm_loss", "DM baseline objective (0|1)");
  b.bind("--eval-seeds", "eval_seeds", "evaluation seeds");
  b.bind("--eval-epochs", "eval_epochs", "evaluation epochs");
  b.bind("--eval-batch", "eval_batch", "evaluation batch size");
  b.bind("--blob-classes", "blob_classes", "blob class count");
  b.bind("--blob-per-class", "blob_per_class", "blob examples per class");
  b.bind("--blob-side", "blob_side", "blob image side");
  b.bind("--blob-separation", "blob_separation", "blob class separation");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"BACON dataset distillation"};
  app.require_subcommand(1);

  Config cfg;
  std::string preset, config_file;
  std::string out_dir = "run";
  std::string synthetic_path, baseline_path;
  bool baseline_random = false;
  std::string epsilon_csv = "0.25,0.5,1,2,4";
  std::size_t mc_samples = 20000;
  std::uint64_t verify_seed = 0;
  std::string verify_out = "verify.json";
  std::string grid = "loss-terms", grid_values = "0:1:0.1";
  std::size_t jobs = 1;

  auto add_resolution = [&](CLI::App* sub) {
    sub->add_option("--preset", preset, "desk|paper");
    sub->add_option("--config", config_file,
                    "key=value config file or a previous manifest.json");
    sub->add_option("--out", out_dir, "output directory");
  };

  CLI::App* distill = app.add_subcommand("distill", "distill a synthetic set");
  add_resolution(distill);
  FlagBinder distill_flags(distill, &cfg);
  bind_common(distill_flags);

  CLI::App* eval_cmd = app.add_subcommand("eval", "evaluate a synthetic set");
  add_resolution(eval_cmd);
  eval_cmd->add_option("--synthetic", synthetic_path, "BSYN file")->required();
  eval_cmd->add_option("--baseline", baseline_path, "baseline BSYN file");
  eval_cmd->add_flag("--baseline-random", baseline_random,
                     "compare against a random coreset of the same IPC");
  FlagBinder eval_flags(eval_cmd, &cfg);
  bind_common(eval_flags);
  eval_flags.bind("--seeds", "eval_seeds", "evaluation seeds (alias)");

  CLI::App* verify = app.add_subcommand("verify", "verify the risk theory");
  verify->add_option("--epsilon", epsilon_csv, "comma list of epsilons");
  verify->add_option("--mc", mc_samples, "Monte-Carlo samples per estimate");
  verify->add_option("--seed", verify_seed, "seed");
  verify->add_option("--out", verify_out, "evidence JSON path");

  CLI::App* ablate = app.add_subcommand("ablate", "run an ablation grid");
  add_resolution(ablate);
  ablate->add_option("--grid", grid, "loss-terms|lambda");
  ablate->add_option("--values", grid_values, "lambda values (a:b:step or list)");
  ablate->add_option("--jobs", jobs, "concurrent cells");
  FlagBinder ablate_flags(ablate, &cfg);
  bind_common(ablate_flags);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    // precedence: defaults, then preset, then file, then flags
    if (!preset.empty()) cfg.apply_preset(preset);
    if (!config_file.empty()) cfg.apply_file(config_file);
    distill_flags.apply();
    eval_flags.apply();
    ablate_flags.apply();

    if (distill->parsed()) return cmd_distill(cfg, out_dir);
    if (eval_cmd->parsed())
      return cmd_eval(cfg, out_dir, synthetic_path, baseline_path,
                      baseline_random);
    if (verify->parsed())
      return cmd_verify(epsilon_csv, mc_samples, verify_seed, verify_out);
    if (ablate->parsed()) return cmd_ablate(cfg, out_dir, grid, grid_values, jobs);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 2;
}
