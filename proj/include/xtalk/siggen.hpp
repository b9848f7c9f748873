#pragma once

// Synthetic compound-fault vibration generator.
//
// A segment is four seconds of housing acceleration sampled at 25.6 kHz. Each
// of the four fault types (inner race, outer race, misalignment, unbalance)
// contributes a deterministic signature whose amplitude grows with severity;
// the operating condition (rpm pattern, gain, noise) comes from a
// SubsetProfile.

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace xtalk {

inline constexpr int kNumTasks = 4;
inline constexpr std::array<int, kNumTasks> kTaskClasses{2, 2, 3, 3};
inline constexpr int kJointClasses = 36;
inline constexpr std::array<const char*, kNumTasks> kTaskNames{"irf", "orf", "mis", "unb"};

inline constexpr double kSampleRateHz = 25600.0;
inline constexpr std::size_t kSegmentSamples = 102400;  // 4 s

/// Severity state of every fault. Joint index is mixed radix (2,2,3,3).
struct CompoundLabel {
  int irf = 0;
  int orf = 0;
  int mis = 0;
  int unb = 0;

  int joint() const;
  static CompoundLabel from_joint(int joint);
  static CompoundLabel from_tasks(const std::array<int, kNumTasks>& digits);

  int task(int i) const;
  std::array<int, kNumTasks> digits() const { return {irf, orf, mis, unb}; }
  bool valid() const;
  bool is_normal() const { return irf == 0 && orf == 0 && mis == 0 && unb == 0; }

  friend bool operator==(const CompoundLabel&, const CompoundLabel&) = default;
};

struct BearingGeometry {
  double ball_diameter_mm = 7.90;
  double pitch_diameter_mm = 38.5;
  double contact_angle_deg = 0.0;
  int n_balls = 9;

  void validate() const;
};

struct CharacteristicFrequencies {
  double bpfo_hz = 0.0;
  double bpfi_hz = 0.0;
};

/// Ball-pass frequencies of the outer and inner race. Throws DomainError for
/// shaft_hz <= 0.
CharacteristicFrequencies characteristic_frequencies(const BearingGeometry& geom, double shaft_hz);

enum class RpmPattern { sinusoidal, triangular, constant };

struct SubsetProfile {
  std::string name = "A";
  RpmPattern pattern = RpmPattern::sinusoidal;
  double base_rpm = 3000.0;
  double modulation_period_s = 10.0;
  double modulation_depth = 0.10;
  std::vector<double> constant_levels;
  double domain_gain = 1.0;
  double noise_sigma = 0.3;
  // Per-segment multiplicative gain jitter, uniform in [1 - j, 1 + j].
  double gain_jitter = 0.0;
  // Motor-to-measured-shaft ratio; 1 means base_rpm is the shaft speed.
  double gear_ratio = 1.0;

  void validate() const;
};

/// Sinusoidal 3000 rpm, 10 s period, random torque rendered as gain jitter.
SubsetProfile subset_a();
/// Triangular 4000 rpm, 5 s period, no load.
SubsetProfile subset_b();
/// Constant levels 1800..3000 rpm in 300 rpm steps.
SubsetProfile subset_c();
/// Profile preset by name ("A", "B", "C"); throws ConfigError otherwise.
SubsetProfile subset_by_name(const std::string& name);

/// Unit triangle wave with period 1, range [-1, 1], in phase with sin(2*pi*u).
double triangle_wave(double u);

/// Instantaneous rpm at time t. `level_index` selects the constant level and
/// is ignored by the modulated patterns.
double rpm_profile(const SubsetProfile& profile, double t, std::size_t level_index = 0);

struct WaveSegment {
  std::vector<float> samples;
  double fs_hz = kSampleRateHz;
  CompoundLabel label;
  std::string subset;
  bool labeled = true;
};

/// Severity index -> signature amplitude.
double fault_amplitude(int task, int severity);

/// Render one segment. Pure in (label, profile, geometry, seed, level_index).
WaveSegment synthesize_segment(const CompoundLabel& label, const SubsetProfile& profile,
                               const BearingGeometry& geom, std::uint64_t seed,
                               std::size_t level_index = 0);

enum class ClassFilter { all36, normal_plus_single7 };

std::vector<CompoundLabel> class_list(ClassFilter filter);

struct SegmentRecord {
  CompoundLabel label;
  std::uint64_t seed = 0;
  std::size_t level_index = 0;
  bool labeled = true;
};

/// Segment plan for one operating condition. Waveforms are rendered on
/// demand through `segment(i)` so large domains never sit in memory.
struct DomainDataset {
  SubsetProfile profile;
  BearingGeometry geometry;
  ClassFilter filter = ClassFilter::all36;
  std::uint64_t seed = 0;
  std::vector<CompoundLabel> classes;
  std::vector<SegmentRecord> records;

  std::size_t size() const { return records.size(); }
  WaveSegment segment(std::size_t i) const;
  std::vector<CompoundLabel> labels() const;
};

/// Per-segment seed: domain seed XOR segment index.
inline std::uint64_t segment_seed(std::uint64_t domain_seed, std::size_t index) {
  return domain_seed ^ static_cast<std::uint64_t>(index);
}

/// Records are grouped by class in class_list order; within a class, constant
/// profiles cycle through their rpm levels so every level gets equal counts.
DomainDataset build_domain(const SubsetProfile& profile, std::size_t segments_per_class,
                           ClassFilter filter, std::uint64_t seed,
                           const BearingGeometry& geom = {});

std::string to_string(RpmPattern p);
RpmPattern rpm_pattern_from_string(const std::string& s);
std::string to_string(ClassFilter f);
ClassFilter class_filter_from_string(const std::string& s);

}  // namespace xtalk
