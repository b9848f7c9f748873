#include "xtalk/io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "xtalk/config.hpp"
#include "xtalk/errors.hpp"

namespace xtalk {

using nlohmann::json;
using nlohmann::ordered_json;
namespace fs = std::filesystem;

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

namespace {

constexpr char kCheckpointMagic[8] = {'X', 'T', 'A', 'L', 'K', 'C', 'K', '1'};

json parse_json_file(const fs::path& path) {
  const std::string text = read_file_bytes(path);
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    throw IoError("malformed JSON in " + path.string() + ": " + e.what());
  }
}

ordered_json shape_json(const Shape& s) { return {s.n, s.c, s.h, s.w}; }

Shape shape_from_json(const json& j) {
  const auto v = j.get<std::vector<std::size_t>>();
  if (v.size() != 4) throw IoError("tensor shape must have 4 extents");
  return {v[0], v[1], v[2], v[3]};
}

ordered_json label_json(const CompoundLabel& l) {
  return {{"irf", l.irf}, {"orf", l.orf}, {"mis", l.mis}, {"unb", l.unb}, {"joint", l.joint()}};
}

SegmentRole role_from_string(const std::string& s) {
  if (s == "labeled") return SegmentRole::labeled;
  if (s == "val") return SegmentRole::val;
  if (s == "unlabeled") return SegmentRole::unlabeled;
  if (s == "test") return SegmentRole::test;
  throw IoError("unknown segment role '" + s + "'");
}

}  // namespace

std::string read_file_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file_bytes(const fs::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed: " + path.string());
}

// ---------------------------------------------------------------------------
// Checkpoints

void save_checkpoint(const fs::path& path, const Model<float>& model) {
  ordered_json tensors = ordered_json::array();
  std::size_t offset = 0;
  for (const auto& [name, p] : model.params().entries()) {
    tensors.push_back({{"name", name}, {"shape", shape_json(p.value.shape())}, {"offset", offset}});
    offset += p.value.size() * sizeof(float);
  }
  const ordered_json header = {{"dtype", "float32"}, {"spec", to_json(model.spec())}, {"tensors", tensors}};
  const std::string h = header.dump();
  std::string bytes(kCheckpointMagic, sizeof kCheckpointMagic);
  const std::uint64_t len = h.size();
  bytes.append(reinterpret_cast<const char*>(&len), sizeof len);
  bytes += h;
  for (const auto& [name, p] : model.params().entries())
    bytes.append(reinterpret_cast<const char*>(p.value.data()), p.value.size() * sizeof(float));
  write_file_bytes(path, bytes);
}

namespace {

struct ParsedCheckpoint {
  json header;
  std::string bytes;
  std::size_t payload_start = 0;
};

ParsedCheckpoint parse_checkpoint(const fs::path& path) {
  ParsedCheckpoint out;
  out.bytes = read_file_bytes(path);
  const auto& b = out.bytes;
  if (b.size() < 16 || std::memcmp(b.data(), kCheckpointMagic, 8) != 0)
    throw IoError(path.string() + " is not a checkpoint");
  std::uint64_t len = 0;
  std::memcpy(&len, b.data() + 8, sizeof len);
  if (16 + len > b.size()) throw IoError(path.string() + ": truncated header");
  try {
    out.header = json::parse(b.substr(16, len));
  } catch (const json::exception& e) {
    throw IoError(path.string() + ": malformed header: " + e.what());
  }
  out.payload_start = 16 + len;
  return out;
}

}  // namespace

CheckpointInfo read_checkpoint_info(const fs::path& path) {
  const auto ck = parse_checkpoint(path);
  CheckpointInfo info;
  try {
    info.spec_json = ck.header.at("spec").dump();
    for (const auto& t : ck.header.at("tensors"))
      info.tensors.push_back({t.at("name").get<std::string>(), shape_from_json(t.at("shape"))});
  } catch (const json::exception& e) {
    throw IoError(path.string() + ": " + e.what());
  }
  info.payload_bytes = ck.bytes.size() - ck.payload_start;
  std::size_t expect = 0;
  for (const auto& t : info.tensors) expect += t.shape.size() * sizeof(float);
  if (expect != info.payload_bytes) throw IoError(path.string() + ": payload size does not match header");
  return info;
}

void load_checkpoint(const fs::path& path, Model<float>& model) {
  const auto ck = parse_checkpoint(path);
  try {
    if (ck.header.at("dtype") != "float32") throw IoError(path.string() + ": unsupported dtype");
    const ModelSpec stored = model_spec_from_json(ck.header.at("spec"), "spec");
    if (to_json(stored) != to_json(model.spec()))
      throw IoError(path.string() + ": checkpoint spec differs from the model");
    auto& entries = model.params().entries();
    const auto& list = ck.header.at("tensors");
    if (list.size() != entries.size()) throw IoError(path.string() + ": tensor count mismatch");
    for (const auto& t : list) {
      const std::string name = t.at("name").get<std::string>();
      auto it = entries.find(name);
      if (it == entries.end()) throw IoError(path.string() + ": unknown tensor " + name);
      auto& value = it->second.value;
      if (!(shape_from_json(t.at("shape")) == value.shape()))
        throw IoError(path.string() + ": shape mismatch at " + name);
      const std::size_t off = ck.payload_start + t.at("offset").get<std::size_t>();
      const std::size_t n = value.size() * sizeof(float);
      if (off + n > ck.bytes.size()) throw IoError(path.string() + ": truncated payload");
      std::memcpy(value.data(), ck.bytes.data() + off, n);
    }
  } catch (const json::exception& e) {
    throw IoError(path.string() + ": " + e.what());
  } catch (const ConfigError& e) {
    throw IoError(path.string() + ": bad spec: " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Domain files

std::string to_string(SegmentRole r) {
  switch (r) {
    case SegmentRole::labeled: return "labeled";
    case SegmentRole::val: return "val";
    case SegmentRole::unlabeled: return "unlabeled";
    case SegmentRole::test: return "test";
  }
  return "?";
}

TargetSplits DomainFiles::splits() const {
  TargetSplits s;
  for (std::size_t i = 0; i < roles.size(); ++i) {
    switch (roles[i]) {
      case SegmentRole::labeled: s.labeled.push_back(i); break;
      case SegmentRole::val: s.val.push_back(i); break;
      case SegmentRole::unlabeled: s.unlabeled.push_back(i); break;
      case SegmentRole::test: s.test.push_back(i); break;
    }
  }
  return s;
}

DomainFiles plan_domain(const std::string& name, const DomainDataset& ds, double labeled_fraction) {
  DomainFiles out;
  out.name = name;
  out.dataset = ds;
  out.labeled_fraction = labeled_fraction;
  const auto splits = label_mask_target(ds.labels(), labeled_fraction, ds.seed);
  out.roles.assign(ds.size(), SegmentRole::unlabeled);
  for (auto i : splits.labeled) out.roles[i] = SegmentRole::labeled;
  for (auto i : splits.val) out.roles[i] = SegmentRole::val;
  for (auto i : splits.test) out.roles[i] = SegmentRole::test;
  for (std::size_t i = 0; i < ds.size(); ++i)
    out.dataset.records[i].labeled = out.roles[i] == SegmentRole::labeled || out.roles[i] == SegmentRole::val;
  return out;
}

std::string manifest_text(const DomainFiles& d) {
  const auto& ds = d.dataset;
  ordered_json classes = ordered_json::array();
  for (const auto& c : ds.classes) classes.push_back(c.joint());
  ordered_json segs = ordered_json::array();
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto& r = ds.records[i];
    segs.push_back({{"offset", i * kSegmentSamples * sizeof(float)},
                    {"label", label_json(r.label)},
                    {"labeled", r.labeled},
                    {"role", to_string(d.roles[i])},
                    {"seed", r.seed},
                    {"level_index", r.level_index}});
  }
  const ordered_json m = {{"format", "xtalk-domain-1"},
                          {"name", d.name},
                          {"profile", to_json(ds.profile)},
                          {"geometry", to_json(ds.geometry)},
                          {"class_filter", to_string(ds.filter)},
                          {"seed", ds.seed},
                          {"labeled_fraction", d.labeled_fraction},
                          {"sample_rate_hz", kSampleRateHz},
                          {"samples_per_segment", kSegmentSamples},
                          {"classes", classes},
                          {"segments", segs}};
  return m.dump(1) + "\n";
}

void write_domain(const fs::path& dir, const DomainFiles& d) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  {
    std::ofstream out(dir / "segments.f32", std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + (dir / "segments.f32").string());
    for (std::size_t i = 0; i < d.dataset.size(); ++i) {
      const auto seg = d.dataset.segment(i);
      out.write(reinterpret_cast<const char*>(seg.samples.data()),
                static_cast<std::streamsize>(seg.samples.size() * sizeof(float)));
    }
    if (!out) throw IoError("write failed: " + (dir / "segments.f32").string());
  }
  // Manifest last: its presence marks a complete domain.
  write_file_bytes(dir / "manifest.json", manifest_text(d));
}

DomainFiles read_domain_manifest(const fs::path& dir) {
  const json m = parse_json_file(dir / "manifest.json");
  DomainFiles d;
  try {
    if (m.at("format") != "xtalk-domain-1") throw IoError(dir.string() + ": unknown manifest format");
    d.name = m.at("name").get<std::string>();
    d.labeled_fraction = m.at("labeled_fraction").get<double>();
    auto& ds = d.dataset;
    ds.profile = subset_profile_from_json(m.at("profile"), "profile");
    ds.geometry = geometry_from_json(m.at("geometry"), "geometry");
    ds.filter = class_filter_from_string(m.at("class_filter").get<std::string>());
    ds.seed = m.at("seed").get<std::uint64_t>();
    for (const auto& c : m.at("classes")) ds.classes.push_back(CompoundLabel::from_joint(c.get<int>()));
    const auto& segs = m.at("segments");
    for (std::size_t i = 0; i < segs.size(); ++i) {
      const auto& s = segs[i];
      if (s.at("offset").get<std::size_t>() != i * kSegmentSamples * sizeof(float))
        throw IoError(dir.string() + ": non-contiguous segment offsets");
      SegmentRecord r;
      r.label = CompoundLabel::from_joint(s.at("label").at("joint").get<int>());
      r.labeled = s.at("labeled").get<bool>();
      r.seed = s.at("seed").get<std::uint64_t>();
      r.level_index = s.at("level_index").get<std::size_t>();
      ds.records.push_back(r);
      d.roles.push_back(role_from_string(s.at("role").get<std::string>()));
    }
  } catch (const json::exception& e) {
    throw IoError(dir.string() + "/manifest.json: " + e.what());
  } catch (const ConfigError& e) {
    throw IoError(dir.string() + "/manifest.json: " + e.what());
  } catch (const DomainError& e) {
    throw IoError(dir.string() + "/manifest.json: " + e.what());
  }
  const auto size = fs::file_size(dir / "segments.f32");
  if (size != d.dataset.size() * kSegmentSamples * sizeof(float))
    throw IoError(dir.string() + ": segments.f32 size does not match the manifest");
  return d;
}

std::vector<float> read_segment(const fs::path& dir, std::size_t i) {
  std::ifstream in(dir / "segments.f32", std::ios::binary);
  if (!in) throw IoError("cannot open " + (dir / "segments.f32").string());
  std::vector<float> out(kSegmentSamples);
  in.seekg(static_cast<std::streamoff>(i * kSegmentSamples * sizeof(float)));
  in.read(reinterpret_cast<char*>(out.data()), static_cast<std::streamsize>(kSegmentSamples * sizeof(float)));
  if (!in) throw IoError((dir / "segments.f32").string() + ": segment " + std::to_string(i) + " out of range");
  return out;
}

void write_spectrogram_cache(const fs::path& dir, const Tensor<float>& inputs, const std::string& key) {
  const auto& s = inputs.shape();
  std::string bytes(reinterpret_cast<const char*>(inputs.data()), inputs.size() * sizeof(float));
  write_file_bytes(dir / "spectrograms.f32", bytes);
  const ordered_json meta = {{"format", "xtalk-spectrograms-1"}, {"key", key}, {"shape", shape_json(s)}};
  write_file_bytes(dir / "spectrograms.json", meta.dump(1) + "\n");
}

std::optional<Tensor<float>> read_spectrogram_cache(const fs::path& dir, const std::string& key) {
  if (!fs::exists(dir / "spectrograms.json") || !fs::exists(dir / "spectrograms.f32")) return std::nullopt;
  try {
    const json meta = parse_json_file(dir / "spectrograms.json");
    if (meta.at("key").get<std::string>() != key) return std::nullopt;
    const Shape s = shape_from_json(meta.at("shape"));
    const std::string bytes = read_file_bytes(dir / "spectrograms.f32");
    if (bytes.size() != s.size() * sizeof(float)) return std::nullopt;
    Tensor<float> t(s);
    std::memcpy(t.data(), bytes.data(), bytes.size());
    return t;
  } catch (const std::exception&) {
    return std::nullopt;
  }
}

}  // namespace xtalk
