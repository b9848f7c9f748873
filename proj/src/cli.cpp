#include "xtalk/cli.hpp"

#include <cblas.h>

#include <cstdlib>
#include <fstream>
#include <optional>
#include <ostream>
#include <sstream>

#include "CLI11.hpp"
#include "xtalk/errors.hpp"
#include "xtalk/gradsuite.hpp"
#include "xtalk/runner.hpp"

namespace xtalk {

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

namespace {

struct Common {
  std::string config_path;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::size_t jobs = 1;
};

struct Loaded {
  ExperimentConfig cfg;
  fs::path out;
};

// --out, then the config's own output_dir when the file sets one, then
// MOC_XTALK_OUT, then the built-in default.
Loaded load(const Common& c) {
  Loaded l;
  bool file_sets_out = false;
  if (!c.config_path.empty()) {
    if (!fs::exists(c.config_path)) throw IoError("config file not found: " + c.config_path);
    const std::string text = read_file_bytes(c.config_path);
    l.cfg = parse_experiment_config(text);
    try {
      file_sets_out = json::parse(text).contains("output_dir");
    } catch (const json::exception&) {
    }
  }
  if (!c.out.empty()) {
    l.out = c.out;
  } else if (file_sets_out) {
    l.out = l.cfg.output_dir;
  } else if (const char* env = std::getenv("MOC_XTALK_OUT"); env && *env) {
    l.out = env;
  } else {
    l.out = l.cfg.output_dir;
  }
  return l;
}

std::string error_json(const std::string& kind, const std::string& message, const std::string& field = {}) {
  ordered_json j = {{"error", kind}, {"message", message}};
  if (!field.empty()) j["field"] = field;
  return j.dump();
}

Scenario parse_scenario(const std::string& s) {
  for (const std::string sep : {"->", ":", ","}) {
    const auto p = s.find(sep);
    if (p != std::string::npos) return {s.substr(0, p), s.substr(p + sep.size())};
  }
  throw ConfigError("expected SOURCE->TARGET, got '" + s + "'", "--scenario");
}

ordered_json inspect_path(const fs::path& p) {
  if (fs::is_directory(p) && fs::exists(p / "manifest.json")) {
    const auto d = read_domain_manifest(p);
    std::map<int, std::size_t> hist;
    std::map<std::string, std::size_t> roles;
    for (std::size_t i = 0; i < d.dataset.size(); ++i) {
      ++hist[d.dataset.records[i].label.joint()];
      ++roles[to_string(d.roles[i])];
    }
    ordered_json h = ordered_json::object();
    for (auto& [k, v] : hist) h[std::to_string(k)] = v;
    return {{"kind", "domain"},
            {"path", p.string()},
            {"name", d.name},
            {"profile", to_json(d.dataset.profile)},
            {"class_filter", to_string(d.dataset.filter)},
            {"segments", d.dataset.size()},
            {"classes", d.dataset.classes.size()},
            {"class_histogram", h},
            {"roles", roles},
            {"bytes", fs::file_size(p / "segments.f32")}};
  }
  if (fs::is_directory(p) && fs::exists(p / "report.json")) {
    const auto r = run_report_from_json(read_file_bytes(p / "report.json"));
    ordered_json j = json::parse(to_json_string(r));
    j.erase("pretrain");
    j.erase("finetune");
    j["kind"] = "run";
    j["path"] = p.string();
    j["pretrain_selected_epoch"] = r.pretrain.selected_epoch;
    j["finetune_selected_epoch"] = r.finetune.selected_epoch;
    return j;
  }
  if (fs::is_regular_file(p)) {
    const auto info = read_checkpoint_info(p);
    std::size_t scalars = 0;
    ordered_json tensors = ordered_json::array();
    for (const auto& t : info.tensors) {
      scalars += t.shape.size();
      tensors.push_back({{"name", t.name}, {"shape", {t.shape.n, t.shape.c, t.shape.h, t.shape.w}}});
    }
    return {{"kind", "checkpoint"},
            {"path", p.string()},
            {"spec", json::parse(info.spec_json)},
            {"tensor_count", info.tensors.size()},
            {"stored_scalars", scalars},
            {"tensors", tensors}};
  }
  throw IoError("nothing to inspect at " + p.string());
}

int cmd_gen(const Common& c, std::ostream&, const Logger& log) {
  auto l = load(c);
  if (c.seed) l.cfg.dataset.seed = *c.seed;
  generate_domains(l.cfg, l.out, log);
  return 0;
}

int cmd_train(const Common& c, const std::string& scenario, const std::string& variant, const std::string& norm,
              const Logger& log) {
  auto l = load(c);
  BenchCell cell;
  if (!scenario.empty()) {
    cell.scenario = parse_scenario(scenario);
  } else {
    if (l.cfg.scenarios.empty()) throw ConfigError("no scenario configured", "scenarios");
    cell.scenario = l.cfg.scenarios.front();
  }
  l.cfg.scenarios = {cell.scenario};
  cell.spec = l.cfg.model;
  if (!variant.empty()) {
    try {
      cell.spec.variant = variant_from_string(variant);
    } catch (const ConfigError&) {
      throw ConfigError("unrecognized value '" + variant + "'", "--variant");
    }
  }
  if (!norm.empty()) {
    try {
      cell.spec.norm.kind = norm_kind_from_string(norm);
    } catch (const ConfigError&) {
      throw ConfigError("unrecognized value '" + norm + "'", "--norm");
    }
  }
  cell.seed = c.seed ? *c.seed : l.cfg.train.seeds.front();
  cell.class_filter = l.cfg.dataset.class_filter;
  l.cfg.validate();
  openblas_set_num_threads(1);
  const auto src = load_domain(l.cfg, cell.scenario.source, cell.class_filter, l.out, log);
  const auto tgt = load_domain(l.cfg, cell.scenario.target, cell.class_filter, l.out, log);
  run_cell(l.cfg, cell, src, tgt, l.out, log);
  log("run directory: " + run_dir(l.out, cell).string());
  return 0;
}

int cmd_bench(const Common& c, bool fresh, const Logger& log) {
  auto l = load(c);
  if (c.seed) l.cfg.train.seeds = {*c.seed};
  BenchOptions opts;
  opts.jobs = c.jobs;
  opts.resume = !fresh;
  run_bench(l.cfg, l.out, opts, log);
  return 0;
}

int cmd_gradcheck(const Common& c, std::size_t coords, bool skip_model, const Logger& log) {
  GradSuiteOptions o;
  if (c.seed) o.seed = *c.seed;
  o.full_model_coords = coords;
  o.include_full_model = !skip_model;
  const auto reports = run_gradcheck_suite(o);
  bool ok = true;
  ordered_json all = ordered_json::array();
  for (const auto& r : reports) {
    char buf[200];
    std::snprintf(buf, sizeof buf, "%-24s %s  max rel err %.3e (tol %.0e, %zu coords, worst %s)", r.name.c_str(),
                  r.passed ? "PASS" : "FAIL", r.max_rel_error, r.tolerance, r.checked, r.worst.c_str());
    log(buf);
    ok = ok && r.passed;
    all.push_back({{"name", r.name},
                   {"passed", r.passed},
                   {"finite", r.finite},
                   {"max_rel_error", r.max_rel_error},
                   {"tolerance", r.tolerance},
                   {"checked", r.checked},
                   {"worst", r.worst}});
  }
  if (!c.out.empty() || !c.config_path.empty() || std::getenv("MOC_XTALK_OUT")) {
    const auto l = load(c);
    std::error_code ec;
    fs::create_directories(l.out, ec);
    write_file_bytes(l.out / "gradcheck.json", all.dump(2) + "\n");
  }
  return ok ? 0 : 1;
}

int cmd_inspect(const Common& c, const std::vector<std::string>& paths, std::ostream& out) {
  std::vector<fs::path> targets(paths.begin(), paths.end());
  if (targets.empty()) {
    const auto l = load(c);
    for (const char* sub : {"data", "runs"}) {
      if (!fs::is_directory(l.out / sub)) continue;
      std::vector<fs::path> found;
      for (const auto& e : fs::directory_iterator(l.out / sub))
        if (e.is_directory()) found.push_back(e.path());
      std::sort(found.begin(), found.end());
      targets.insert(targets.end(), found.begin(), found.end());
    }
    if (targets.empty()) throw IoError("no datasets or runs under " + l.out.string());
  }
  for (const auto& p : targets) {
    if (!fs::exists(p)) throw IoError("not found: " + p.string());
    out << inspect_path(p).dump() << "\n";
  }
  return 0;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Compound-fault classifier workbench", "moc-xtalk"};
  app.require_subcommand(0, 1);
  bool print_default = false;
  app.add_flag("--print-default-config", print_default, "Print the built-in default config and exit");

  Common common;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", common.config_path, "Experiment config (JSON)");
    sub->add_option("--out", common.out, "Output directory (default: $MOC_XTALK_OUT or the config's output_dir)");
    sub->add_option("--seed", common.seed, "Seed override");
    sub->add_option("--jobs", common.jobs, "Parallel benchmark cells")->check(CLI::PositiveNumber);
  };
  auto* gen = app.add_subcommand("gen", "Synthesize every configured domain to disk");
  auto* train = app.add_subcommand("train", "Pretrain and finetune one scenario x variant x seed");
  auto* bench = app.add_subcommand("bench", "Run the benchmark matrix and emit report tables");
  auto* grad = app.add_subcommand("gradcheck", "Finite-difference gradient suite");
  auto* inspect = app.add_subcommand("inspect", "Summarize datasets, run directories or checkpoints");
  for (auto* s : {gen, train, bench, grad, inspect}) add_common(s);
  std::string scenario, variant, norm;
  train->add_option("--scenario", scenario, "SOURCE->TARGET (default: first configured scenario)");
  train->add_option("--variant", variant, "MCC | MOC_STL | SHARED_TRUNK | CROSSTALK");
  train->add_option("--norm", norm, "FLN | TLN | BN | IN | LN");
  bool fresh = false;
  bench->add_flag("--fresh", fresh, "Recompute cells even when a valid run directory exists");
  std::size_t coords = GradSuiteOptions{}.full_model_coords;
  bool skip_model = false;
  grad->add_option("--coords", coords, "Sampled coordinates per tensor in the full-model check");
  grad->add_flag("--skip-model", skip_model, "Skip the full-model check");
  std::vector<std::string> paths;
  inspect->add_option("paths", paths, "Domain directories, run directories or checkpoint files");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << error_json("usage", e.what()) << "\n";
    return 2;
  }

  const Logger log = stderr_logger();
  try {
    if (print_default) {
      out << default_config_text();
      return 0;
    }
    if (gen->parsed()) return cmd_gen(common, out, log);
    if (train->parsed()) return cmd_train(common, scenario, variant, norm, log);
    if (bench->parsed()) return cmd_bench(common, fresh, log);
    if (grad->parsed()) return cmd_gradcheck(common, coords, skip_model, log);
    if (inspect->parsed()) return cmd_inspect(common, paths, out);
    out << app.help();
    return 0;
  } catch (const ConfigError& e) {
    err << error_json("config", e.what(), e.field()) << "\n";
    return 2;
  } catch (const IoError& e) {
    err << error_json("io", e.what()) << "\n";
    return 3;
  } catch (const fs::filesystem_error& e) {
    err << error_json("io", e.what()) << "\n";
    return 3;
  } catch (const std::exception& e) {
    err << error_json("internal", e.what()) << "\n";
    return 1;
  }
}

}  // namespace xtalk
