// Acceptance suite: one PASS/FAIL line per criterion. Criteria 8 and 9
// train real models; their run directories are cached under --bench-dir so a
// rerun with unchanged code and config only re-reads the reports.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <cblas.h>

#include "CLI11.hpp"
#include "support.hpp"
#include "xtalk/cli.hpp"
#include "xtalk/gradsuite.hpp"
#include "xtalk/losses.hpp"
#include "xtalk/metrics.hpp"
#include "xtalk/runner.hpp"

using namespace xtalk;
using xtalk::testing::Gen;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass;
  std::string detail;
};

std::string fmt(const char* f, double a) {
  char buf[96];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// ---------------------------------------------------------------------------

Outcome gradient_suite() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto reports = run_gradcheck_suite();
  const double secs = seconds_since(t0);
  bool ok = true;
  double worst = 0.0, worst_model = 0.0;
  std::string failed;
  for (const auto& r : reports) {
    ok = ok && r.passed;
    if (!r.passed) failed += " " + r.name;
    if (r.name.rfind("model/", 0) == 0) worst_model = std::max(worst_model, r.max_rel_error);
    else worst = std::max(worst, r.max_rel_error);
  }
  const bool fast = secs < 120.0;
  std::string d = std::to_string(reports.size()) + " checks, max rel err " + fmt("%.2e", worst) + " components, " +
                  fmt("%.2e", worst_model) + " full model, " + fmt("%.0f s", secs);
  if (!failed.empty()) d += "; failed:" + failed;
  if (!fast) d += "; over the 2 min budget";
  return {ok && fast, d};
}

Outcome shape_ladder() {
  Gen gen(1);
  const Shape want[] = {{0, 32, 40, 24}, {0, 64, 20, 12}, {0, 128, 1, 1}};
  for (std::size_t b : {std::size_t{1}, std::size_t{16}}) {
    ParamStore<float> st;
    FeatureExtractor<float> fe(st, "fe", ModelSpec{}, 1);
    initialize_params(st, 0);
    auto h = gen.tensor<float>({b, 1, 80, 48});
    for (std::size_t stage = 1; stage <= 3; ++stage) {
      h = fe.forward_stage(stage, h, kTrain);
      Shape w = want[stage - 1];
      w.n = b;
      if (h.shape() != w) return {false, "B=" + std::to_string(b) + " stage " + std::to_string(stage) + " gave " +
                                             h.shape().str()};
    }
  }
  return {true, "(B,1,80,48) -> (B,32,40,24) -> (B,64,20,12) -> (B,128,1,1) for B in {1,16}"};
}

Outcome fln_statistics() {
  Gen gen(3);
  const double eps = NormSpec{}.epsilon;
  double worst_mean = 0.0, worst_var = 0.0, worst_shift = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t c = 1 + gen.index(8);
    const Shape s{1 + gen.index(4), c, 80, 48};
    ParamStore<float> st;
    NormSpec spec;
    spec.kind = NormKind::FLN;
    Norm<float> norm(st, "n", spec, Shape{1, c, 80, 48});
    initialize_params(st, static_cast<std::uint64_t>(trial));
    // dB-scale inputs: offsets of tens of dB, column spreads well above sqrt(eps).
    const auto x = gen.tensor<float>(s, std::exp(gen.uniform(std::log(0.5), std::log(30.0))), gen.normal(-40.0, 30.0));
    norm.forward(x, kTrain);
    const auto xhat = norm.normalized();
    for (std::size_t b = 0; b < s.n; ++b)
      for (std::size_t ch = 0; ch < s.c; ++ch)
        for (std::size_t t = 0; t < s.w; ++t) {
          double m = 0.0, mx = 0.0;
          for (std::size_t f = 0; f < s.h; ++f) m += xhat.at(b, ch, f, t), mx += x.at(b, ch, f, t);
          m /= s.h;
          mx /= s.h;
          double v = 0.0, vx = 0.0;
          for (std::size_t f = 0; f < s.h; ++f) {
            v += (xhat.at(b, ch, f, t) - m) * (xhat.at(b, ch, f, t) - m);
            vx += (x.at(b, ch, f, t) - mx) * (x.at(b, ch, f, t) - mx);
          }
          v /= s.h;
          vx /= s.h;
          worst_mean = std::max(worst_mean, std::abs(m));
          worst_var = std::max(worst_var, std::abs(v - vx / (vx + eps)));
        }
    auto moved = x;
    const std::size_t b = gen.index(s.n), ch = gen.index(s.c), t = gen.index(s.w);
    const double shift = gen.normal(0.0, 20.0), alpha = std::exp(gen.uniform(-1.0, 1.0));
    for (std::size_t f = 0; f < s.h; ++f) moved.at(b, ch, f, t) = static_cast<float>(alpha * moved.at(b, ch, f, t) + shift);
    norm.forward(moved, kTrain);
    for (std::size_t i = 0; i < xhat.size(); ++i)
      worst_shift = std::max(worst_shift, std::abs(double(norm.normalized()[i]) - xhat[i]));
  }
  const bool ok = worst_mean < 1e-6 && worst_var < 1e-3 && worst_shift < 1e-3;
  return {ok, "max |mean| " + fmt("%.2e", worst_mean) + ", max variance gap " + fmt("%.2e", worst_var) +
                  ", max perturbation change " + fmt("%.2e", worst_shift)};
}

Outcome reduction_identity() {
  Gen gen(4);
  ModelSpec ct_spec, stl_spec;
  ct_spec.variant = Variant::CROSSTALK;
  stl_spec.variant = Variant::MOC_STL;
  Model<float> ct(ct_spec, 5), stl(stl_spec, 5);
  for (auto& [name, p] : ct.params().entries())
    if (name.find("/ctl") != std::string::npos) p.value.fill(0.0f);
  stl.params().assign_from(ct.params());
  std::size_t mismatches = 0;
  for (int batch = 0; batch < 100; ++batch) {
    const auto x = gen.tensor<float>({1 + gen.index(3), 1, 80, 48}, 20.0, -40.0);
    const Pass pass = batch % 2 ? kTrainNoDropout : kEval;
    const auto a = ct.forward(x, pass), b = stl.forward(x, pass);
    for (std::size_t h = 0; h < a.probs.size(); ++h)
      if (!(a.probs[h] == b.probs[h]) || !(a.penultimate[h] == b.penultimate[h])) ++mismatches;
  }
  return {mismatches == 0, std::to_string(mismatches) + " differing head outputs over 100 batches"};
}

Outcome loss_oracles() {
  std::vector<std::string> bad;
  const Tensor<double> uniform(Shape{8, 36, 1, 1}, 1.0 / 36.0);
  std::vector<int> t(8);
  for (int i = 0; i < 8; ++i) t[i] = (i * 5) % 36;
  if (std::abs(cce(uniform, std::span<const int>(t)) - std::log(36.0)) > 1e-6) bad.push_back("cce");
  Tensor<double> onehot(Shape{6, 36, 1, 1});
  for (std::size_t r = 0; r < 6; ++r) onehot.at(r, r * 6) = 1.0;
  if (std::abs(entropy_mean(onehot)) > 1e-9) bad.push_back("entropy");

  Gen gen(5);
  const KernelBank bank;
  double worst_self = 0.0, worst_sym = 0.0, lowest = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t d = 1 + gen.index(64);
    const auto x = gen.tensor<double>({2 + gen.index(15), d, 1, 1}, gen.uniform(0.1, 5.0));
    const auto y = gen.tensor<double>({2 + gen.index(15), d, 1, 1}, gen.uniform(0.1, 5.0), gen.normal());
    worst_self = std::max(worst_self, std::abs(mkmmd2(x, x, bank)));
    const double xy = mkmmd2(x, y, bank);
    worst_sym = std::max(worst_sym, std::abs(xy - mkmmd2(y, x, bank)));
    lowest = std::min(lowest, xy);
  }
  if (worst_self > 1e-9) bad.push_back("self");
  if (worst_sym > 1e-9) bad.push_back("symmetry");
  if (lowest < -1e-9) bad.push_back("nonnegativity");

  const auto s = gen.tensor<double>({16, 64, 1, 1});
  std::vector<double> seq;
  for (double delta : {0.5, 1.0, 2.0}) {
    auto shifted = s;
    for (auto& v : shifted.values()) v += delta;
    seq.push_back(mkmmd2(s, shifted, bank));
  }
  if (!(seq[0] < seq[1] && seq[1] < seq[2])) bad.push_back("monotone");
  std::string d = "self " + fmt("%.1e", worst_self) + ", asymmetry " + fmt("%.1e", worst_sym) + ", shifts " +
                  fmt("%.4f", seq[0]) + " < " + fmt("%.4f", seq[1]) + " < " + fmt("%.4f", seq[2]) + ", one-hot entropy " + fmt("%.1e", entropy_mean(onehot));
  for (const auto& b : bad) d += "; failed " + b;
  return {bad.empty(), d};
}

Outcome metric_oracle() {
  std::size_t cases = 0, bad = 0;
  for (int k = 1; k <= 3; ++k)
    for (int n = 1; n <= 5; ++n) {
      const int combos = static_cast<int>(std::pow(k, 2 * n));
      for (int code = 0; code < combos; ++code) {
        std::vector<int> p(n), l(n);
        int c = code;
        for (int i = 0; i < n; ++i) p[i] = c % k, c /= k;
        for (int i = 0; i < n; ++i) l[i] = c % k, c /= k;
        if (std::abs(macro_f1(p, l, k) - xtalk::testing::macro_f1_reference(p, l, k)) > 1e-12) ++bad;
        ++cases;
      }
    }
  std::size_t trip = 0;
  for (int j = 0; j < kJointClasses; ++j) trip += joint_class(decode_joint(j)) == j;
  return {bad == 0 && trip == 36,
          std::to_string(cases) + " exhaustive cases, " + std::to_string(bad) + " mismatches; " +
              std::to_string(trip) + "/36 joint round trips"};
}

// Per-layer count straight from the architecture tables with FLN.
std::size_t layer_oracle(Variant v) {
  auto conv = [](std::size_t in, std::size_t out, std::size_t k) { return out * (in * k * k + 1); };
  const std::size_t extractor = 2 * 80 + conv(1, 32, 3) + 2 * 80 + conv(32, 64, 3) + 2 * 40 + conv(64, 128, 3) + 2 * 20;
  auto head = [](std::size_t k) { return (128 * 64 + 64) + (64 * k + k); };
  const std::size_t moc = head(2) + head(2) + head(3) + head(3);
  switch (v) {
    case Variant::MCC: return extractor + head(36);
    case Variant::SHARED_TRUNK: return extractor + moc;
    case Variant::MOC_STL: return 4 * extractor + moc;
    case Variant::CROSSTALK: return 4 * extractor + moc + 4 * (conv(3 * 32, 32, 1) + conv(3 * 64, 64, 1));
  }
  return 0;
}

Outcome parameter_ordering() {
  std::map<Variant, std::size_t> n;
  std::string d;
  bool ok = true;
  for (auto v : {Variant::MCC, Variant::SHARED_TRUNK, Variant::MOC_STL, Variant::CROSSTALK}) {
    ModelSpec s;
    s.variant = v;
    n[v] = param_count(s);
    Model<float> m(s, 0);
    std::size_t stored = 0;
    for (const auto& [name, p] : m.params().entries())
      if (p.trainable) stored += p.value.size();
    ok = ok && n[v] == layer_oracle(v) && stored == n[v];
    d += (d.empty() ? "" : " < ") + to_string(v) + " " + std::to_string(n[v]);
  }
  ok = ok && n[Variant::MCC] < n[Variant::SHARED_TRUNK] && n[Variant::SHARED_TRUNK] < n[Variant::MOC_STL] &&
       n[Variant::MOC_STL] < n[Variant::CROSSTALK];
  return {ok, d + (ok ? "; matches layer oracle" : "; mismatch")};
}

// ---------------------------------------------------------------------------
// Trend benchmark

ExperimentConfig trend_config(ClassFilter filter) {
  ExperimentConfig cfg;
  cfg.dataset.class_filter = filter;
  cfg.scenarios = {{"A", "C"}};
  cfg.train.epochs_pretrain = 25;
  cfg.train.epochs_finetune = 25;
  cfg.train.seeds = {0, 1, 2};
  cfg.bench.variants = {Variant::MCC, Variant::CROSSTALK};
  cfg.bench.norms = filter == ClassFilter::all36 ? std::vector<NormKind>{NormKind::FLN, NormKind::LN}
                                                 : std::vector<NormKind>{NormKind::FLN};
  cfg.validate();
  return cfg;
}

struct TrendResult {
  std::map<std::string, double> mean;  // "VARIANT/NORM" -> seed-mean joint F1
  double seconds = 0.0;
  std::size_t runs = 0;
};

TrendResult run_trend(ClassFilter filter, const fs::path& dir) {
  const auto cfg = trend_config(filter);
  const auto reports = run_bench(cfg, dir, BenchOptions{}, stderr_logger());
  TrendResult r;
  for (const auto& c : seed_means(reports)) r.mean[c.variant + "/" + c.norm] = c.joint_f1;
  for (const auto& rep : reports) r.seconds += rep.wall_clock_s;
  r.runs = reports.size();
  return r;
}

struct TrendCache {
  fs::path dir;
  std::optional<TrendResult> compound;
};

Outcome compound_trend(TrendCache& cache) {
  cache.compound = run_trend(ClassFilter::all36, cache.dir);
  const auto& m = cache.compound->mean;
  const double ct = m.at("CROSSTALK/FLN"), mcc = m.at("MCC/FLN"), ln = m.at("CROSSTALK/LN");
  const bool a = ct >= mcc + 0.02, b = ct >= ln + 0.05, c = ct >= 0.80, t = cache.compound->seconds <= 1800.0;
  std::string d = "CROSSTALK/FLN " + fmt("%.3f", ct) + ", MCC " + fmt("%.3f", mcc) + ", CROSSTALK/LN " + fmt("%.3f", ln) +
                  "; (a) " + (a ? "ok" : "no") + " (b) " + (b ? "ok" : "no") + " (c) " + (c ? "ok" : "no") +
                  "; training time " + fmt("%.0f s", cache.compound->seconds) + " over " +
                  std::to_string(cache.compound->runs) + " runs " + (t ? "(within 30 min)" : "(over 30 min)");
  return {a && b && c && t, d};
}

Outcome single_fault_contrast(TrendCache& cache) {
  if (!cache.compound) cache.compound = run_trend(ClassFilter::all36, cache.dir);
  const auto single = run_trend(ClassFilter::normal_plus_single7, cache.dir);
  const double gap8 = cache.compound->mean.at("CROSSTALK/FLN") - cache.compound->mean.at("MCC/FLN");
  const double gap9 = single.mean.at("CROSSTALK/FLN") - single.mean.at("MCC/FLN");
  std::string d = "single-fault gap " + fmt("%+.3f", gap9) + " vs compound gap " + fmt("%+.3f", gap8);
  if (gap8 < 0.02) return {true, d + "; report only, compound gap below 0.02"};
  return {gap9 < gap8, d};
}

// ---------------------------------------------------------------------------

Outcome determinism(const fs::path& scratch) {
  fs::remove_all(scratch);
  fs::create_directories(scratch);
  const auto cfg = scratch / "config.json";
  write_file_bytes(cfg, R"({
  "dataset": {"segments_per_class": 10, "class_filter": "normal_plus_single7"},
  "model": {"variant": "CROSSTALK"},
  "train": {"epochs_pretrain": 1, "epochs_finetune": 1, "seeds": [4]},
  "scenarios": [["B", "A"]]
})");
  std::size_t files = 0, differ = 0;
  for (const char* out : {"one", "two"}) {
    for (const char* cmd : {"gen", "train"}) {
      const std::string o = (scratch / out).string(), c = cfg.string();
      const char* argv[] = {"moc-xtalk", cmd, "--config", c.c_str(), "--out", o.c_str()};
      std::ostringstream so, se;
      if (run_cli(6, argv, so, se) != 0) return {false, std::string(cmd) + " failed: " + se.str()};
    }
  }
  for (const auto& e : fs::recursive_directory_iterator(scratch / "one")) {
    if (!e.is_regular_file()) continue;
    const auto rel = fs::relative(e.path(), scratch / "one");
    // The report carries wall-clock time; everything else must match byte for byte.
    if (rel.filename() == "report.json") continue;
    ++files;
    if (!fs::exists(scratch / "two" / rel) || read_file_bytes(e.path()) != read_file_bytes(scratch / "two" / rel))
      ++differ;
  }
  const bool has_ckpt = fs::exists(scratch / "one/runs/B_to_A__normal_plus_single7__CROSSTALK__FLN__seed4/checkpoint.bin");
  fs::remove_all(scratch);
  return {differ == 0 && has_ckpt && files > 0,
          std::to_string(files) + " dataset and run files compared, " + std::to_string(differ) + " differ"};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria"};
  std::string bench_dir = (fs::temp_directory_path() / "xtalk_acceptance_bench").string();
  std::vector<int> only;
  app.add_option("--bench-dir", bench_dir, "Cache directory for the trend benchmark runs");
  app.add_option("--only", only, "Run only these criteria")->delimiter(',');
  CLI11_PARSE(app, argc, argv);
  openblas_set_num_threads(1);

  TrendCache cache{bench_dir, std::nullopt};
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"gradient suite", gradient_suite},
      {"shape ladder", shape_ladder},
      {"FLN statistics", fln_statistics},
      {"reduction identity", reduction_identity},
      {"loss oracles", loss_oracles},
      {"metric oracle", metric_oracle},
      {"parameter ordering", parameter_ordering},
      {"compound trend A->C", [&] { return compound_trend(cache); }},
      {"single-fault contrast", [&] { return single_fault_contrast(cache); }},
      {"determinism", [&] { return determinism(fs::temp_directory_path() / "xtalk_acceptance_determinism"); }},
  };
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!only.empty() && std::find(only.begin(), only.end(), id) == only.end()) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    failures += !o.pass;
    std::printf("[%s] %2d %s: %s\n", o.pass ? "PASS" : "FAIL", id, criteria[i].first.c_str(), o.detail.c_str());
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
