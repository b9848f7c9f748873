#pragma once

// Experiment configuration: one JSON document covering dataset, model,
// training, scenarios, and benchmark matrix. Parsing is strict; every
// ConfigError carries the JSON path of the offending field.

#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "xtalk/models.hpp"
#include "xtalk/siggen.hpp"
#include "xtalk/trainer.hpp"

namespace xtalk {

struct DatasetConfig {
  std::size_t segments_per_class = 30;
  ClassFilter class_filter = ClassFilter::all36;
  std::uint64_t seed = 7;
  BearingGeometry geometry;
  std::vector<SubsetProfile> domains{subset_a(), subset_b(), subset_c()};

  const SubsetProfile& domain(const std::string& name) const;
  /// Generation seed of a named domain, derived from `seed` and the name.
  std::uint64_t domain_seed(const std::string& name) const;
};

struct Scenario {
  std::string source, target;
  std::string label() const { return source + "->" + target; }
};

/// Cells of the benchmark matrix: every variant with the model's norm, plus
/// `normalization_variant` with every listed norm.
struct BenchConfig {
  std::vector<Variant> variants{Variant::MCC, Variant::MOC_STL, Variant::SHARED_TRUNK, Variant::CROSSTALK};
  std::vector<NormKind> norms{NormKind::FLN, NormKind::TLN, NormKind::BN, NormKind::IN, NormKind::LN};
  Variant normalization_variant = Variant::CROSSTALK;
};

struct ExperimentConfig {
  DatasetConfig dataset;
  ModelSpec model;
  TrainConfig train;
  std::vector<Scenario> scenarios{{"A", "B"}, {"A", "C"}, {"B", "A"}, {"B", "C"}, {"C", "A"}, {"C", "B"}};
  BenchConfig bench;
  std::string output_dir = "moc_xtalk_out";

  void validate() const;
};

nlohmann::ordered_json to_json(const BearingGeometry& g);
nlohmann::ordered_json to_json(const SubsetProfile& p);
nlohmann::ordered_json to_json(const ModelSpec& s);
nlohmann::ordered_json to_json(const TrainConfig& t);
nlohmann::ordered_json to_json(const ExperimentConfig& c);

/// Missing fields take their defaults; unknown fields are rejected. `path`
/// prefixes field names in error messages.
BearingGeometry geometry_from_json(const nlohmann::json& j, const std::string& path);
SubsetProfile subset_profile_from_json(const nlohmann::json& j, const std::string& path);
ModelSpec model_spec_from_json(const nlohmann::json& j, const std::string& path = "model");
TrainConfig train_config_from_json(const nlohmann::json& j, const std::string& path = "train");
ExperimentConfig experiment_config_from_json(const nlohmann::json& j);

/// Parses and validates; syntax errors are ConfigErrors with field "".
ExperimentConfig parse_experiment_config(const std::string& text);
ExperimentConfig load_experiment_config(const std::string& path);
std::string default_config_text();

/// (source, target) plus the matrix cells for one class filter.
struct BenchCell {
  Scenario scenario;
  ModelSpec spec;
  std::uint64_t seed = 0;
  ClassFilter class_filter = ClassFilter::all36;
};
std::vector<BenchCell> bench_cells(const ExperimentConfig& cfg);

}  // namespace xtalk
