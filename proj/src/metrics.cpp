#include "xtalk/metrics.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>

#include "json.hpp"
#include "xtalk/errors.hpp"

namespace xtalk {

using nlohmann::json;

int joint_class(const std::array<int, kNumTasks>& digits) {
  for (int i = 0; i < kNumTasks; ++i)
    if (digits[i] < 0 || digits[i] >= kTaskClasses[i])
      throw DomainError(std::string("task ") + kTaskNames[i] + " index " + std::to_string(digits[i]) +
                        " out of range");
  return CompoundLabel::from_tasks(digits).joint();
}

std::array<int, kNumTasks> decode_joint(int joint) {
  if (joint < 0 || joint >= kJointClasses) throw DomainError("joint class " + std::to_string(joint) + " out of range");
  return CompoundLabel::from_joint(joint).digits();
}

double macro_f1(std::span<const int> preds, std::span<const int> labels, int k) {
  if (preds.size() != labels.size()) throw ShapeError("macro_f1: prediction/label length mismatch");
  if (preds.empty()) throw DomainError("macro_f1 of an empty sample");
  if (k < 1) throw DomainError("macro_f1 needs at least one class");
  std::vector<std::size_t> tp(k, 0), fp(k, 0), fn(k, 0);
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const int p = preds[i], l = labels[i];
    if (p < 0 || p >= k || l < 0 || l >= k) throw DomainError("macro_f1: class index out of range");
    if (p == l) {
      ++tp[p];
    } else {
      ++fp[p];
      ++fn[l];
    }
  }
  double sum = 0.0;
  for (int c = 0; c < k; ++c) {
    const std::size_t denom = 2 * tp[c] + fp[c] + fn[c];
    if (denom > 0) sum += 2.0 * static_cast<double>(tp[c]) / static_cast<double>(denom);
  }
  return sum / k;
}

double macro_f1_over(std::span<const int> preds, std::span<const int> labels, std::span<const int> classes, int k) {
  if (preds.size() != labels.size()) throw ShapeError("macro_f1: prediction/label length mismatch");
  if (preds.empty()) throw DomainError("macro_f1 of an empty sample");
  if (classes.empty()) throw DomainError("macro_f1 needs at least one class");
  std::vector<char> member(static_cast<std::size_t>(std::max(k, 0)), 0);
  for (int c : classes) {
    if (c < 0 || c >= k || member[c]) throw DomainError("macro_f1: bad class subset");
    member[c] = 1;
  }
  for (int l : labels)
    if (l < 0 || l >= k || !member[l]) throw DomainError("macro_f1: label outside the class subset");
  std::vector<std::size_t> tp(k, 0), fp(k, 0), fn(k, 0);
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const int p = preds[i], l = labels[i];
    if (p < 0 || p >= k) throw DomainError("macro_f1: class index out of range");
    if (p == l) {
      ++tp[p];
    } else {
      ++fp[p];
      ++fn[l];
    }
  }
  double sum = 0.0;
  for (int c : classes) {
    const std::size_t denom = 2 * tp[c] + fp[c] + fn[c];
    if (denom > 0) sum += 2.0 * static_cast<double>(tp[c]) / static_cast<double>(denom);
  }
  return sum / static_cast<double>(classes.size());
}

std::array<double, kNumTasks> per_fault_f1(std::span<const std::array<int, kNumTasks>> preds,
                                           std::span<const std::array<int, kNumTasks>> labels) {
  if (preds.size() != labels.size()) throw ShapeError("per_fault_f1: length mismatch");
  std::array<double, kNumTasks> out{};
  for (int t = 0; t < kNumTasks; ++t) {
    std::vector<int> p, l;
    p.reserve(preds.size());
    l.reserve(preds.size());
    for (std::size_t i = 0; i < preds.size(); ++i) {
      p.push_back(preds[i][t]);
      l.push_back(labels[i][t]);
    }
    out[t] = macro_f1(p, l, kTaskClasses[t]);
  }
  return out;
}

std::string RunReport::scenario() const { return source + "->" + target; }

std::string RunReport::cell_id() const {
  return source + "_to_" + target + "__" + dataset + "__" + variant + "__" + norm + "__seed" + std::to_string(seed);
}

namespace {

json to_json(const StageTrajectory& s) {
  return {{"heads", s.heads}, {"val_losses", s.losses}, {"selected_epoch", s.selected_epoch}};
}

StageTrajectory stage_from_json(const json& j) {
  StageTrajectory s;
  s.heads = j.at("heads").get<std::vector<std::string>>();
  s.losses = j.at("val_losses").get<std::vector<std::vector<double>>>();
  s.selected_epoch = j.at("selected_epoch").get<std::size_t>();
  return s;
}

json to_json(const RunReport& r) {
  json faults = json::object();
  for (int t = 0; t < kNumTasks; ++t) faults[kTaskNames[t]] = r.fault_f1[t];
  return {{"source", r.source},
          {"target", r.target},
          {"variant", r.variant},
          {"norm", r.norm},
          {"dataset", r.dataset},
          {"seed", r.seed},
          {"joint_f1", r.joint_f1},
          {"fault_f1", faults},
          {"param_count", r.param_count},
          {"pretrain", to_json(r.pretrain)},
          {"finetune", to_json(r.finetune)},
          {"wall_clock_s", r.wall_clock_s}};
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

std::string row_label(const std::string& scenario, const std::string& dataset) {
  return dataset == "all36" ? scenario : scenario + " (" + dataset + ")";
}

void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("write failed: " + path.string());
}

// Rows in first-appearance order, columns in `order` restricted to those present.
std::string pivot_table(const std::vector<CellMean>& cells, const std::vector<std::string>& order, bool by_variant,
                        const std::string& corner) {
  std::vector<std::string> rows;
  std::set<std::string> present;
  std::map<std::pair<std::string, std::string>, double> value;
  for (const auto& c : cells) {
    const auto row = row_label(c.scenario, c.dataset);
    if (std::find(rows.begin(), rows.end(), row) == rows.end()) rows.push_back(row);
    const auto& col = by_variant ? c.variant : c.norm;
    present.insert(col);
    value[{row, col}] = c.joint_f1;
  }
  std::vector<std::string> cols;
  for (const auto& o : order)
    if (present.count(o)) cols.push_back(o);
  std::string out = corner;
  for (const auto& c : cols) out += "," + c;
  out += "\n";
  std::vector<double> sum(cols.size(), 0.0);
  std::vector<std::size_t> n(cols.size(), 0);
  for (const auto& r : rows) {
    out += r;
    for (std::size_t j = 0; j < cols.size(); ++j) {
      out += ",";
      auto it = value.find({r, cols[j]});
      if (it == value.end()) continue;
      out += fmt(it->second);
      sum[j] += it->second;
      ++n[j];
    }
    out += "\n";
  }
  if (!rows.empty()) {
    out += "Average";
    for (std::size_t j = 0; j < cols.size(); ++j) out += "," + (n[j] ? fmt(sum[j] / n[j]) : std::string());
    out += "\n";
  }
  return out;
}

}  // namespace

std::string to_json_string(const RunReport& r) { return to_json(r).dump(2) + "\n"; }

RunReport run_report_from_json(const std::string& text) {
  try {
    const json j = json::parse(text);
    RunReport r;
    r.source = j.at("source").get<std::string>();
    r.target = j.at("target").get<std::string>();
    r.variant = j.at("variant").get<std::string>();
    r.norm = j.at("norm").get<std::string>();
    r.dataset = j.at("dataset").get<std::string>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.joint_f1 = j.at("joint_f1").get<double>();
    for (int t = 0; t < kNumTasks; ++t) r.fault_f1[t] = j.at("fault_f1").at(kTaskNames[t]).get<double>();
    r.param_count = j.at("param_count").get<std::size_t>();
    r.pretrain = stage_from_json(j.at("pretrain"));
    r.finetune = stage_from_json(j.at("finetune"));
    r.wall_clock_s = j.at("wall_clock_s").get<double>();
    return r;
  } catch (const json::exception& e) {
    throw IoError(std::string("malformed run report: ") + e.what());
  }
}

std::vector<CellMean> seed_means(std::span<const RunReport> runs) {
  std::vector<CellMean> cells;
  auto find = [&](const RunReport& r) -> CellMean* {
    for (auto& c : cells)
      if (c.scenario == r.scenario() && c.dataset == r.dataset && c.variant == r.variant && c.norm == r.norm)
        return &c;
    return nullptr;
  };
  for (const auto& r : runs) {
    CellMean* c = find(r);
    if (!c) {
      cells.push_back({r.scenario(), r.dataset, r.variant, r.norm});
      c = &cells.back();
    }
    ++c->seeds;
    c->joint_f1 += r.joint_f1;
    for (int t = 0; t < kNumTasks; ++t) c->fault_f1[t] += r.fault_f1[t];
  }
  for (auto& c : cells) {
    c.joint_f1 /= static_cast<double>(c.seeds);
    for (auto& f : c.fault_f1) f /= static_cast<double>(c.seeds);
  }
  return cells;
}

void emit_report(std::span<const RunReport> runs, const std::filesystem::path& out_dir) {
  if (runs.empty()) throw DomainError("emit_report needs at least one run");
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create " + out_dir.string() + ": " + ec.message());

  const auto cells = seed_means(runs);
  const std::vector<std::string> variants{"MCC", "MOC_STL", "SHARED_TRUNK", "CROSSTALK"};
  const std::vector<std::string> norms{"FLN", "TLN", "BN", "IN", "LN"};

  std::vector<CellMean> arch, norm;
  for (const auto& c : cells) {
    if (c.norm == "FLN") arch.push_back(c);
    if (c.variant == "CROSSTALK") norm.push_back(c);
  }
  write_file(out_dir / "table_architecture.csv", pivot_table(arch, variants, true, "scenario"));
  write_file(out_dir / "table_normalization.csv", pivot_table(norm, norms, false, "scenario"));

  std::string pf = "scenario,dataset,variant,norm,seeds,irf,orf,mis,unb,joint\n";
  for (const auto& c : cells) {
    pf += c.scenario + "," + c.dataset + "," + c.variant + "," + c.norm + "," + std::to_string(c.seeds);
    for (double f : c.fault_f1) pf += "," + fmt(f);
    pf += "," + fmt(c.joint_f1) + "\n";
  }
  write_file(out_dir / "per_fault.csv", pf);

  std::string tr = "scenario,dataset,variant,norm,seed,stage,epoch,task_a,task_b,loss_a,loss_b\n";
  for (const auto& r : runs) {
    for (const auto* stage : {&r.pretrain, &r.finetune}) {
      const char* name = stage == &r.pretrain ? "pretrain" : "finetune";
      const auto& h = stage->heads;
      for (std::size_t e = 0; e < stage->losses.size(); ++e)
        for (std::size_t a = 0; a < h.size(); ++a)
          for (std::size_t b = a + 1; b < h.size(); ++b)
            tr += r.scenario() + "," + r.dataset + "," + r.variant + "," + r.norm + "," + std::to_string(r.seed) +
                  "," + name + "," + std::to_string(e) + "," + h[a] + "," + h[b] + "," + fmt(stage->losses[e][a]) +
                  "," + fmt(stage->losses[e][b]) + "\n";
    }
  }
  write_file(out_dir / "trajectories.csv", tr);

  std::map<std::pair<std::string, std::string>, std::size_t> counts;
  for (const auto& r : runs) counts[{r.variant, r.norm}] = r.param_count;
  std::string pc = "variant,norm,param_count\n";
  for (const auto& v : variants)
    for (const auto& n : norms) {
      auto it = counts.find({v, n});
      if (it != counts.end()) pc += v + "," + n + "," + std::to_string(it->second) + "\n";
    }
  write_file(out_dir / "params.csv", pc);

  json all = json::array();
  for (const auto& r : runs) all.push_back(to_json(r));
  write_file(out_dir / "runs.json", all.dump(2) + "\n");
}

}  // namespace xtalk
