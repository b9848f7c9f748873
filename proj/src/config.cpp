#include "xtalk/config.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <set>
#include <sstream>

#include "xtalk/errors.hpp"

namespace xtalk {

using nlohmann::json;
using nlohmann::ordered_json;

namespace {

std::string join(const std::string& path, const std::string& key) { return path.empty() ? key : path + "." + key; }

// Typed field access that remembers which keys were consumed.
class Fields {
 public:
  Fields(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError("expected an object", path_);
  }

  bool has(const std::string& key) const { return j_.contains(key); }
  const json& raw(const std::string& key) {
    seen_.insert(key);
    return j_.at(key);
  }
  std::string path(const std::string& key) const { return join(path_, key); }

  template <typename T>
  void get(const std::string& key, T& out) {
    if (!j_.contains(key)) return;
    seen_.insert(key);
    out = convert<T>(j_.at(key), path(key));
  }

  template <typename T>
  static T convert(const json& v, const std::string& where) {
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) throw ConfigError("expected a boolean", where);
      return v.get<bool>();
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!v.is_string()) throw ConfigError("expected a string", where);
      return v.get<std::string>();
    } else if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_unsigned()) throw ConfigError("expected a non-negative integer", where);
      return v.get<T>();
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!v.is_number()) throw ConfigError("expected a number", where);
      return v.get<T>();
    } else {
      if (!v.is_array()) throw ConfigError("expected an array", where);
      T out;
      for (std::size_t i = 0; i < v.size(); ++i)
        out.push_back(convert<typename T::value_type>(v[i], where + "[" + std::to_string(i) + "]"));
      return out;
    }
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!seen_.count(it.key())) throw ConfigError("unknown field", path(it.key()));
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

template <typename E, typename Parse>
void get_enum(Fields& f, const std::string& key, E& out, Parse parse) {
  std::string s;
  f.get(key, s);
  if (!f.has(key)) return;
  try {
    out = parse(s);
  } catch (const ConfigError& e) {
    throw ConfigError("unrecognized value '" + s + "'", f.path(key));
  }
}

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace

BearingGeometry geometry_from_json(const json& j, const std::string& path) {
  BearingGeometry g;
  Fields f(j, path);
  f.get("ball_diameter_mm", g.ball_diameter_mm);
  f.get("pitch_diameter_mm", g.pitch_diameter_mm);
  f.get("contact_angle_deg", g.contact_angle_deg);
  std::size_t n = static_cast<std::size_t>(g.n_balls);
  f.get("n_balls", n);
  g.n_balls = static_cast<int>(n);
  f.finish();
  try {
    g.validate();
  } catch (const std::exception& e) {
    throw ConfigError(e.what(), path);
  }
  return g;
}

ordered_json to_json(const BearingGeometry& g) {
  return {{"ball_diameter_mm", g.ball_diameter_mm},
          {"pitch_diameter_mm", g.pitch_diameter_mm},
          {"contact_angle_deg", g.contact_angle_deg},
          {"n_balls", g.n_balls}};
}

const SubsetProfile& DatasetConfig::domain(const std::string& name) const {
  for (const auto& d : domains)
    if (d.name == name) return d;
  throw ConfigError("undefined domain '" + name + "'", "dataset.domains");
}

std::uint64_t DatasetConfig::domain_seed(const std::string& name) const { return derive_seed(seed, fnv1a(name)); }

void ExperimentConfig::validate() const {
  if (dataset.segments_per_class < 1)
    throw ConfigError("must be at least 1", "dataset.segments_per_class");
  std::set<std::string> names;
  for (std::size_t i = 0; i < dataset.domains.size(); ++i) {
    const auto& d = dataset.domains[i];
    const std::string where = "dataset.domains[" + std::to_string(i) + "]";
    if (d.name.empty()) throw ConfigError("domain needs a name", where + ".name");
    if (!std::all_of(d.name.begin(), d.name.end(),
                     [](char ch) { return std::isalnum(static_cast<unsigned char>(ch)) || ch == '_' || ch == '-'; }))
      throw ConfigError("domain names may use only letters, digits, '_' and '-'", where + ".name");
    if (!names.insert(d.name).second) throw ConfigError("duplicate domain '" + d.name + "'", where + ".name");
    try {
      d.validate();
    } catch (const ConfigError& e) {
      throw ConfigError(e.what(), where);
    } catch (const std::exception& e) {
      throw ConfigError(e.what(), where);
    }
  }
  for (std::size_t i = 0; i < scenarios.size(); ++i) {
    const auto& s = scenarios[i];
    const std::string where = "scenarios[" + std::to_string(i) + "]";
    if (!names.count(s.source)) throw ConfigError("undefined domain '" + s.source + "'", where);
    if (!names.count(s.target)) throw ConfigError("undefined domain '" + s.target + "'", where);
    if (s.source == s.target) throw ConfigError("source and target must differ", where);
  }
  if (model.tsl_hidden < 1) throw ConfigError("must be at least 1", "model.tsl_hidden");
  if (!(model.dropout >= 0.0 && model.dropout < 1.0)) throw ConfigError("must be in [0, 1)", "model.dropout");
  if (model.conv_kernel % 2 != 1) throw ConfigError("must be odd", "model.conv_kernel");
  if (model.ctl_kernel % 2 != 1) throw ConfigError("must be odd", "model.ctl_kernel");
  if (!(model.norm.epsilon > 0.0)) throw ConfigError("must be positive", "model.norm.epsilon");
  if (!(model.norm.momentum > 0.0 && model.norm.momentum <= 1.0))
    throw ConfigError("must be in (0, 1]", "model.norm.momentum");
  try {
    train.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(e.what(), e.field().empty() ? "train" : e.field());
  }
  if (bench.variants.empty() && bench.norms.empty()) throw ConfigError("empty benchmark matrix", "bench");
  if (output_dir.empty()) throw ConfigError("must be non-empty", "output_dir");
}

ordered_json to_json(const SubsetProfile& p) {
  return {{"name", p.name},
          {"pattern", to_string(p.pattern)},
          {"base_rpm", p.base_rpm},
          {"modulation_period_s", p.modulation_period_s},
          {"modulation_depth", p.modulation_depth},
          {"constant_levels", p.constant_levels},
          {"domain_gain", p.domain_gain},
          {"noise_sigma", p.noise_sigma},
          {"gain_jitter", p.gain_jitter},
          {"gear_ratio", p.gear_ratio}};
}

ordered_json to_json(const ModelSpec& s) {
  return {{"variant", to_string(s.variant)},
          {"norm", {{"kind", to_string(s.norm.kind)}, {"epsilon", s.norm.epsilon}, {"momentum", s.norm.momentum}}},
          {"tsl_hidden", s.tsl_hidden},
          {"dropout", s.dropout},
          {"conv_kernel", s.conv_kernel},
          {"ctl_kernel", s.ctl_kernel}};
}

ordered_json to_json(const TrainConfig& t) {
  return {{"epochs_pretrain", t.epochs_pretrain},
          {"epochs_finetune", t.epochs_finetune},
          {"batch_size", t.batch_size},
          {"adam", {{"lr", t.adam.lr}, {"beta1", t.adam.beta1}, {"beta2", t.adam.beta2}, {"eps", t.adam.eps}}},
          {"labeled_fraction", t.labeled_fraction},
          {"seeds", t.seeds},
          {"weights", {{"mmd", t.weights.mmd}, {"em", t.weights.em}}},
          {"kernel_multipliers", t.bank.multipliers},
          {"source_cce_in_finetune", t.source_cce_in_finetune},
          {"eval_batch", t.eval_batch}};
}

ordered_json to_json(const ExperimentConfig& c) {
  ordered_json domains = ordered_json::array();
  for (const auto& d : c.dataset.domains) domains.push_back(to_json(d));
  ordered_json scen = ordered_json::array();
  for (const auto& s : c.scenarios) scen.push_back({s.source, s.target});
  ordered_json variants = ordered_json::array(), norms = ordered_json::array();
  for (auto v : c.bench.variants) variants.push_back(to_string(v));
  for (auto n : c.bench.norms) norms.push_back(to_string(n));
  return {{"dataset",
           {{"segments_per_class", c.dataset.segments_per_class},
            {"class_filter", to_string(c.dataset.class_filter)},
            {"seed", c.dataset.seed},
            {"geometry", to_json(c.dataset.geometry)},
            {"domains", domains}}},
          {"model", to_json(c.model)},
          {"train", to_json(c.train)},
          {"scenarios", scen},
          {"bench",
           {{"variants", variants}, {"norms", norms}, {"normalization_variant", to_string(c.bench.normalization_variant)}}},
          {"output_dir", c.output_dir}};
}

SubsetProfile subset_profile_from_json(const json& j, const std::string& path) {
  Fields f(j, path);
  SubsetProfile p;
  // A preset name seeds the defaults; explicit fields override it.
  if (f.has("preset")) {
    const std::string preset = Fields::convert<std::string>(f.raw("preset"), f.path("preset"));
    try {
      p = subset_by_name(preset);
    } catch (const ConfigError&) {
      throw ConfigError("unknown preset '" + preset + "'", f.path("preset"));
    }
  }
  f.get("name", p.name);
  get_enum(f, "pattern", p.pattern, rpm_pattern_from_string);
  f.get("base_rpm", p.base_rpm);
  f.get("modulation_period_s", p.modulation_period_s);
  f.get("modulation_depth", p.modulation_depth);
  f.get("constant_levels", p.constant_levels);
  f.get("domain_gain", p.domain_gain);
  f.get("noise_sigma", p.noise_sigma);
  f.get("gain_jitter", p.gain_jitter);
  f.get("gear_ratio", p.gear_ratio);
  f.finish();
  return p;
}

ModelSpec model_spec_from_json(const json& j, const std::string& path) {
  Fields f(j, path);
  ModelSpec s;
  get_enum(f, "variant", s.variant, variant_from_string);
  if (f.has("norm")) {
    const json& n = f.raw("norm");
    const std::string npath = f.path("norm");
    if (n.is_string()) {
      try {
        s.norm.kind = norm_kind_from_string(n.get<std::string>());
      } catch (const ConfigError&) {
        throw ConfigError("unrecognized value '" + n.get<std::string>() + "'", npath);
      }
    } else {
      Fields nf(n, npath);
      get_enum(nf, "kind", s.norm.kind, norm_kind_from_string);
      nf.get("epsilon", s.norm.epsilon);
      nf.get("momentum", s.norm.momentum);
      nf.finish();
    }
  }
  f.get("tsl_hidden", s.tsl_hidden);
  f.get("dropout", s.dropout);
  f.get("conv_kernel", s.conv_kernel);
  f.get("ctl_kernel", s.ctl_kernel);
  f.finish();
  return s;
}

TrainConfig train_config_from_json(const json& j, const std::string& path) {
  Fields f(j, path);
  TrainConfig t;
  f.get("epochs_pretrain", t.epochs_pretrain);
  f.get("epochs_finetune", t.epochs_finetune);
  f.get("batch_size", t.batch_size);
  if (f.has("adam")) {
    Fields a(f.raw("adam"), f.path("adam"));
    a.get("lr", t.adam.lr);
    a.get("beta1", t.adam.beta1);
    a.get("beta2", t.adam.beta2);
    a.get("eps", t.adam.eps);
    a.finish();
  }
  f.get("labeled_fraction", t.labeled_fraction);
  f.get("seeds", t.seeds);
  if (f.has("weights")) {
    Fields w(f.raw("weights"), f.path("weights"));
    w.get("mmd", t.weights.mmd);
    w.get("em", t.weights.em);
    w.finish();
  }
  f.get("kernel_multipliers", t.bank.multipliers);
  f.get("source_cce_in_finetune", t.source_cce_in_finetune);
  f.get("eval_batch", t.eval_batch);
  f.finish();
  // Field-level checks so errors point at the right path.
  if (t.weights.mmd < 0.0) throw ConfigError("weight must be >= 0", f.path("weights") + ".mmd");
  if (t.weights.em < 0.0) throw ConfigError("weight must be >= 0", f.path("weights") + ".em");
  try {
    t.bank.validate();
  } catch (const std::exception& e) {
    throw ConfigError(e.what(), f.path("kernel_multipliers"));
  }
  return t;
}

ExperimentConfig experiment_config_from_json(const json& j) {
  Fields f(j, "");
  ExperimentConfig c;
  if (f.has("dataset")) {
    Fields d(f.raw("dataset"), "dataset");
    d.get("segments_per_class", c.dataset.segments_per_class);
    get_enum(d, "class_filter", c.dataset.class_filter, class_filter_from_string);
    d.get("seed", c.dataset.seed);
    if (d.has("geometry")) c.dataset.geometry = geometry_from_json(d.raw("geometry"), "dataset.geometry");
    if (d.has("domains")) {
      const json& arr = d.raw("domains");
      if (!arr.is_array()) throw ConfigError("expected an array", "dataset.domains");
      c.dataset.domains.clear();
      for (std::size_t i = 0; i < arr.size(); ++i)
        c.dataset.domains.push_back(subset_profile_from_json(arr[i], "dataset.domains[" + std::to_string(i) + "]"));
    }
    d.finish();
  }
  if (f.has("model")) c.model = model_spec_from_json(f.raw("model"), "model");
  if (f.has("train")) c.train = train_config_from_json(f.raw("train"), "train");
  if (f.has("scenarios")) {
    const json& arr = f.raw("scenarios");
    if (!arr.is_array()) throw ConfigError("expected an array", "scenarios");
    c.scenarios.clear();
    for (std::size_t i = 0; i < arr.size(); ++i) {
      const std::string where = "scenarios[" + std::to_string(i) + "]";
      const auto pair = Fields::convert<std::vector<std::string>>(arr[i], where);
      if (pair.size() != 2) throw ConfigError("expected [source, target]", where);
      c.scenarios.push_back({pair[0], pair[1]});
    }
  }
  if (f.has("bench")) {
    Fields b(f.raw("bench"), "bench");
    if (b.has("variants")) {
      const auto v = Fields::convert<std::vector<std::string>>(b.raw("variants"), "bench.variants");
      c.bench.variants.clear();
      for (std::size_t i = 0; i < v.size(); ++i) {
        try {
          c.bench.variants.push_back(variant_from_string(v[i]));
        } catch (const ConfigError&) {
          throw ConfigError("unrecognized value '" + v[i] + "'", "bench.variants[" + std::to_string(i) + "]");
        }
      }
    }
    if (b.has("norms")) {
      const auto v = Fields::convert<std::vector<std::string>>(b.raw("norms"), "bench.norms");
      c.bench.norms.clear();
      for (std::size_t i = 0; i < v.size(); ++i) {
        try {
          c.bench.norms.push_back(norm_kind_from_string(v[i]));
        } catch (const ConfigError&) {
          throw ConfigError("unrecognized value '" + v[i] + "'", "bench.norms[" + std::to_string(i) + "]");
        }
      }
    }
    get_enum(b, "normalization_variant", c.bench.normalization_variant, variant_from_string);
    b.finish();
  }
  f.get("output_dir", c.output_dir);
  f.finish();
  return c;
}

ExperimentConfig parse_experiment_config(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("invalid JSON: ") + e.what());
  }
  auto c = experiment_config_from_json(j);
  c.validate();
  return c;
}

ExperimentConfig load_experiment_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open config " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_experiment_config(ss.str());
}

std::string default_config_text() { return to_json(ExperimentConfig{}).dump(2) + "\n"; }

std::vector<BenchCell> bench_cells(const ExperimentConfig& cfg) {
  std::vector<BenchCell> cells;
  auto add = [&](const Scenario& s, Variant v, NormKind n, std::uint64_t seed) {
    ModelSpec spec = cfg.model;
    spec.variant = v;
    spec.norm.kind = n;
    for (const auto& c : cells)
      if (c.scenario.label() == s.label() && c.spec.variant == v && c.spec.norm.kind == n && c.seed == seed) return;
    cells.push_back({s, spec, seed, cfg.dataset.class_filter});
  };
  for (const auto& s : cfg.scenarios)
    for (auto seed : cfg.train.seeds) {
      for (auto v : cfg.bench.variants) add(s, v, cfg.model.norm.kind, seed);
      for (auto n : cfg.bench.norms) add(s, cfg.bench.normalization_variant, n, seed);
    }
  return cells;
}

}  // namespace xtalk
