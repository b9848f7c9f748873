#pragma once

// On-disk formats.
//
// Checkpoint: "XTALKCK1", uint64 LE header length, JSON header
//   {"dtype":"float32","spec":{...},"tensors":[{"name","shape","offset"}]},
//   then the raw float32 LE payload in header order (buffers included).
// Domain directory: manifest.json + segments.f32 (concatenated float32 LE
//   records of kSegmentSamples each).
// Spectrogram cache: spectrograms.json + spectrograms.f32 in the same
//   directory, valid while its key matches the manifest.

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "xtalk/models.hpp"
#include "xtalk/siggen.hpp"
#include "xtalk/trainer.hpp"

namespace xtalk {

void save_checkpoint(const std::filesystem::path& path, const Model<float>& model);
/// Loads values into `model`; the stored spec, names and shapes must match.
void load_checkpoint(const std::filesystem::path& path, Model<float>& model);

struct CheckpointInfo {
  std::string spec_json;
  struct Entry {
    std::string name;
    Shape shape;
  };
  std::vector<Entry> tensors;
  std::size_t payload_bytes = 0;
};
CheckpointInfo read_checkpoint_info(const std::filesystem::path& path);

/// Role of every segment under the domain's label mask.
enum class SegmentRole { labeled, val, unlabeled, test };
std::string to_string(SegmentRole r);

struct DomainFiles {
  std::string name;
  DomainDataset dataset;  // records carry the labeled flag
  std::vector<SegmentRole> roles;
  double labeled_fraction = 0.1;

  TargetSplits splits() const;
};

/// Plans the domain and its label mask (seeded by the domain seed).
DomainFiles plan_domain(const std::string& name, const DomainDataset& ds, double labeled_fraction);

/// Writes manifest.json and segments.f32, rendering one segment at a time.
void write_domain(const std::filesystem::path& dir, const DomainFiles& domain);
/// Parses manifest.json; IoError if missing or malformed.
DomainFiles read_domain_manifest(const std::filesystem::path& dir);
std::string manifest_text(const DomainFiles& domain);
/// Samples of segment i read from segments.f32.
std::vector<float> read_segment(const std::filesystem::path& dir, std::size_t i);

void write_spectrogram_cache(const std::filesystem::path& dir, const Tensor<float>& inputs, const std::string& key);
std::optional<Tensor<float>> read_spectrogram_cache(const std::filesystem::path& dir, const std::string& key);

/// Whole-file byte comparison helper for determinism checks.
std::string read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, const std::string& bytes);

}  // namespace xtalk
