#include "xtalk/siggen.hpp"

#include <cmath>
#include <numbers>
#include <random>

#include "xtalk/errors.hpp"

namespace xtalk {

namespace {

constexpr int kBearingHarmonics = 5;

// Sum_{h=1..5} sin(h*phi)/h via the Chebyshev recurrence.
double harmonic_train(double phi) {
  const double s1 = std::sin(phi);
  const double c2 = 2.0 * std::cos(phi);
  double prev = 0.0;
  double cur = s1;
  double acc = s1;
  for (int h = 2; h <= kBearingHarmonics; ++h) {
    const double next = c2 * cur - prev;
    prev = cur;
    cur = next;
    acc += cur / h;
  }
  return acc;
}

}  // namespace

int CompoundLabel::joint() const {
  if (!valid()) throw DomainError("compound label digit out of range");
  return irf * 18 + orf * 9 + mis * 3 + unb;
}

CompoundLabel CompoundLabel::from_joint(int joint) {
  if (joint < 0 || joint >= kJointClasses) throw DomainError("joint class out of range");
  CompoundLabel l;
  l.unb = joint % 3;
  l.mis = (joint / 3) % 3;
  l.orf = (joint / 9) % 2;
  l.irf = joint / 18;
  return l;
}

CompoundLabel CompoundLabel::from_tasks(const std::array<int, kNumTasks>& d) {
  CompoundLabel l{d[0], d[1], d[2], d[3]};
  if (!l.valid()) throw DomainError("task index out of range");
  return l;
}

int CompoundLabel::task(int i) const {
  switch (i) {
    case 0: return irf;
    case 1: return orf;
    case 2: return mis;
    case 3: return unb;
    default: throw DomainError("task index must be in [0,4)");
  }
}

bool CompoundLabel::valid() const {
  const auto d = digits();
  for (int i = 0; i < kNumTasks; ++i)
    if (d[i] < 0 || d[i] >= kTaskClasses[i]) return false;
  return true;
}

void BearingGeometry::validate() const {
  if (!(ball_diameter_mm >= 0.0) || !(ball_diameter_mm < pitch_diameter_mm))
    throw ConfigError("ball diameter must be in [0, pitch diameter)", "geometry.ball_diameter_mm");
  if (n_balls < 1) throw ConfigError("need at least one ball", "geometry.n_balls");
  if (!(contact_angle_deg >= 0.0 && contact_angle_deg < 90.0))
    throw ConfigError("contact angle must be in [0, 90)", "geometry.contact_angle_deg");
}

CharacteristicFrequencies characteristic_frequencies(const BearingGeometry& geom, double shaft_hz) {
  if (!(shaft_hz > 0.0)) throw DomainError("shaft frequency must be positive");
  const double phi = geom.contact_angle_deg * std::numbers::pi / 180.0;
  const double ratio = geom.ball_diameter_mm / geom.pitch_diameter_mm * std::cos(phi);
  const double half_n = 0.5 * geom.n_balls * shaft_hz;
  return {half_n * (1.0 - ratio), half_n * (1.0 + ratio)};
}

void SubsetProfile::validate() const {
  if (!(base_rpm > 0.0)) throw ConfigError("base_rpm must be positive", "base_rpm");
  if (pattern != RpmPattern::constant && !(modulation_period_s > 0.0))
    throw ConfigError("modulation period must be positive", "modulation_period_s");
  if (pattern == RpmPattern::constant && constant_levels.empty())
    throw ConfigError("constant pattern needs at least one level", "constant_levels");
  for (double lvl : constant_levels)
    if (!(lvl > 0.0)) throw ConfigError("rpm levels must be positive", "constant_levels");
  if (!(modulation_depth >= 0.0 && modulation_depth < 1.0))
    throw ConfigError("modulation depth must be in [0, 1)", "modulation_depth");
  if (!(noise_sigma >= 0.0)) throw ConfigError("noise_sigma must be nonnegative", "noise_sigma");
  if (!(gain_jitter >= 0.0 && gain_jitter < 1.0))
    throw ConfigError("gain_jitter must be in [0, 1)", "gain_jitter");
  if (!(gear_ratio > 0.0)) throw ConfigError("gear_ratio must be positive", "gear_ratio");
}

SubsetProfile subset_a() {
  SubsetProfile p;
  p.name = "A";
  p.pattern = RpmPattern::sinusoidal;
  p.base_rpm = 3000.0;
  p.modulation_period_s = 10.0;
  p.domain_gain = 1.0;
  p.gain_jitter = 0.2;
  return p;
}

SubsetProfile subset_b() {
  SubsetProfile p;
  p.name = "B";
  p.pattern = RpmPattern::triangular;
  p.base_rpm = 4000.0;
  p.modulation_period_s = 5.0;
  p.domain_gain = 1.5;
  return p;
}

SubsetProfile subset_c() {
  SubsetProfile p;
  p.name = "C";
  p.pattern = RpmPattern::constant;
  p.base_rpm = 3000.0;
  p.modulation_period_s = 0.0;
  p.modulation_depth = 0.0;
  p.constant_levels = {1800.0, 2100.0, 2400.0, 2700.0, 3000.0};
  p.domain_gain = 0.7;
  return p;
}

SubsetProfile subset_by_name(const std::string& name) {
  if (name == "A") return subset_a();
  if (name == "B") return subset_b();
  if (name == "C") return subset_c();
  throw ConfigError("unknown subset preset '" + name + "'", "preset");
}

double triangle_wave(double u) {
  const double f = u - std::floor(u);
  if (f < 0.25) return 4.0 * f;
  if (f < 0.75) return 2.0 - 4.0 * f;
  return 4.0 * f - 4.0;
}

double rpm_profile(const SubsetProfile& p, double t, std::size_t level_index) {
  switch (p.pattern) {
    case RpmPattern::sinusoidal:
      return p.base_rpm *
             (1.0 + p.modulation_depth * std::sin(2.0 * std::numbers::pi * t / p.modulation_period_s));
    case RpmPattern::triangular:
      return p.base_rpm * (1.0 + p.modulation_depth * triangle_wave(t / p.modulation_period_s));
    case RpmPattern::constant:
      if (p.constant_levels.empty()) return p.base_rpm;
      return p.constant_levels[level_index % p.constant_levels.size()];
  }
  return p.base_rpm;
}

double fault_amplitude(int task, int severity) {
  if (task < 0 || task >= kNumTasks) throw DomainError("task index out of range");
  if (severity < 0 || severity >= kTaskClasses[task]) throw DomainError("severity out of range");
  if (kTaskClasses[task] == 2) return severity == 0 ? 0.0 : 1.0;
  static constexpr double three_level[] = {0.0, 0.5, 1.0};
  return three_level[severity];
}

WaveSegment synthesize_segment(const CompoundLabel& label, const SubsetProfile& profile,
                               const BearingGeometry& geom, std::uint64_t seed,
                               std::size_t level_index) {
  if (!label.valid()) throw DomainError("invalid compound label");
  profile.validate();
  geom.validate();

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  constexpr double two_pi = 2.0 * std::numbers::pi;

  // Segments are cut from a continuous record, so each starts at an
  // arbitrary point of the rpm cycle and with arbitrary rotor phase.
  const double t0 = profile.pattern == RpmPattern::constant ? 0.0 : unit(rng) * profile.modulation_period_s;
  const double shaft_phase0 = unit(rng) * two_pi;
  const double bpfi_phase0 = unit(rng) * two_pi;
  const double bpfo_phase0 = unit(rng) * two_pi;
  const double jitter = 1.0 + profile.gain_jitter * (2.0 * unit(rng) - 1.0);
  const double gain = profile.domain_gain * jitter;

  const double a_irf = fault_amplitude(0, label.irf);
  const double a_orf = fault_amplitude(1, label.orf);
  const double a_mis = fault_amplitude(2, label.mis);
  const double a_unb = fault_amplitude(3, label.unb);
  const double orf_sideband = (label.mis > 0 || label.unb > 0) ? 0.3 : 0.0;

  // Characteristic frequencies scale linearly with shaft speed, so their
  // phases are fixed multiples of the shaft phase increment.
  const auto unit_bpf = characteristic_frequencies(geom, 1.0);

  WaveSegment seg;
  seg.label = label;
  seg.subset = profile.name;
  seg.fs_hz = kSampleRateHz;
  seg.samples.resize(kSegmentSamples);

  std::normal_distribution<double> noise(0.0, 1.0);
  double shaft_cycles = 0.0;  // integral of shaft_hz dt
  for (std::size_t n = 0; n < kSegmentSamples; ++n) {
    const double t = t0 + static_cast<double>(n) / kSampleRateHz;
    const double theta = shaft_phase0 + two_pi * shaft_cycles;
    const double th_bpfi = bpfi_phase0 + two_pi * unit_bpf.bpfi_hz * shaft_cycles;
    const double th_bpfo = bpfo_phase0 + two_pi * unit_bpf.bpfo_hz * shaft_cycles;
    const double s1 = std::sin(theta);
    const double c1 = std::cos(theta);
    const double s2 = 2.0 * s1 * c1;

    double v = a_unb * s1 + a_mis * (0.5 * s1 + s2);
    if (a_irf != 0.0) v += a_irf * (1.0 + c1) * harmonic_train(th_bpfi);
    if (a_orf != 0.0) v += a_orf * (1.0 + orf_sideband * c1) * harmonic_train(th_bpfo);
    v *= gain;
    if (profile.noise_sigma > 0.0) v += profile.noise_sigma * noise(rng);
    seg.samples[n] = static_cast<float>(v);

    const double shaft_hz = rpm_profile(profile, t, level_index) / 60.0 / profile.gear_ratio;
    shaft_cycles += shaft_hz / kSampleRateHz;
  }
  return seg;
}

std::vector<CompoundLabel> class_list(ClassFilter filter) {
  std::vector<CompoundLabel> out;
  if (filter == ClassFilter::all36) {
    for (int j = 0; j < kJointClasses; ++j) out.push_back(CompoundLabel::from_joint(j));
    return out;
  }
  out.push_back({});
  for (int task = 0; task < kNumTasks; ++task) {
    for (int sev = 1; sev < kTaskClasses[task]; ++sev) {
      std::array<int, kNumTasks> d{0, 0, 0, 0};
      d[task] = sev;
      out.push_back(CompoundLabel::from_tasks(d));
    }
  }
  return out;
}

WaveSegment DomainDataset::segment(std::size_t i) const {
  const auto& r = records.at(i);
  auto seg = synthesize_segment(r.label, profile, geometry, r.seed, r.level_index);
  seg.labeled = r.labeled;
  return seg;
}

std::vector<CompoundLabel> DomainDataset::labels() const {
  std::vector<CompoundLabel> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back(r.label);
  return out;
}

DomainDataset build_domain(const SubsetProfile& profile, std::size_t segments_per_class,
                           ClassFilter filter, std::uint64_t seed, const BearingGeometry& geom) {
  if (segments_per_class < 1) throw ConfigError("segments_per_class must be >= 1", "segments_per_class");
  profile.validate();
  geom.validate();
  DomainDataset ds;
  ds.profile = profile;
  ds.geometry = geom;
  ds.filter = filter;
  ds.seed = seed;
  ds.classes = class_list(filter);
  const std::size_t levels =
      profile.pattern == RpmPattern::constant ? profile.constant_levels.size() : 1;
  ds.records.reserve(ds.classes.size() * segments_per_class);
  for (const auto& cls : ds.classes) {
    for (std::size_t r = 0; r < segments_per_class; ++r) {
      SegmentRecord rec;
      rec.label = cls;
      rec.seed = segment_seed(seed, ds.records.size());
      rec.level_index = r % levels;
      ds.records.push_back(rec);
    }
  }
  return ds;
}

std::string to_string(RpmPattern p) {
  switch (p) {
    case RpmPattern::sinusoidal: return "sinusoidal";
    case RpmPattern::triangular: return "triangular";
    case RpmPattern::constant: return "constant";
  }
  return "?";
}

RpmPattern rpm_pattern_from_string(const std::string& s) {
  if (s == "sinusoidal") return RpmPattern::sinusoidal;
  if (s == "triangular") return RpmPattern::triangular;
  if (s == "constant") return RpmPattern::constant;
  throw ConfigError("unknown rpm pattern '" + s + "'", "pattern");
}

std::string to_string(ClassFilter f) {
  return f == ClassFilter::all36 ? "all36" : "normal_plus_single7";
}

ClassFilter class_filter_from_string(const std::string& s) {
  if (s == "all36") return ClassFilter::all36;
  if (s == "normal_plus_single7") return ClassFilter::normal_plus_single7;
  throw ConfigError("unknown class filter '" + s + "'", "class_filter");
}

}  // namespace xtalk
