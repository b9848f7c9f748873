#include "xtalk/runner.hpp"

#include <cblas.h>

#include <atomic>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <mutex>
#include <thread>

#include "xtalk/errors.hpp"
#include "xtalk/preprocess.hpp"

namespace xtalk {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

Logger stderr_logger() {
  static std::mutex mu;
  return [](const std::string& msg) {
    std::lock_guard<std::mutex> lock(mu);
    std::cerr << "[moc-xtalk] " << msg << std::endl;
  };
}

Logger null_logger() {
  return [](const std::string&) {};
}

namespace {

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

void make_dirs(const fs::path& p) {
  std::error_code ec;
  fs::create_directories(p, ec);
  if (ec) throw IoError("cannot create " + p.string() + ": " + ec.message());
}

std::string log_csv(const TrainLog& log) {
  std::string out = "epoch,split,task,loss\n";
  char buf[64];
  for (const auto& r : log.rows) {
    std::snprintf(buf, sizeof buf, "%.9g", r.loss);
    out += std::to_string(r.epoch) + "," + r.split + "," + r.task + "," + buf + "\n";
  }
  return out;
}

StageTrajectory trajectory(const TrainLog& log, const ModelSpec& spec) {
  return {head_names(spec), log.val_task_losses, log.selected_epoch};
}

}  // namespace

fs::path domain_dir(const fs::path& out, const std::string& domain, ClassFilter filter) {
  return out / "data" / (domain + "_" + to_string(filter));
}

DomainFiles plan_config_domain(const ExperimentConfig& cfg, const std::string& name, ClassFilter filter) {
  const auto& profile = cfg.dataset.domain(name);
  const auto ds = build_domain(profile, cfg.dataset.segments_per_class, filter, cfg.dataset.domain_seed(name),
                               cfg.dataset.geometry);
  return plan_domain(name, ds, cfg.train.labeled_fraction);
}

namespace {

// Reuses the on-disk domain when its manifest matches the plan.
fs::path ensure_domain(const DomainFiles& plan, const fs::path& dir, const Logger& log) {
  const std::string expect = manifest_text(plan);
  if (fs::exists(dir / "manifest.json") && fs::exists(dir / "segments.f32")) {
    try {
      if (read_file_bytes(dir / "manifest.json") == expect &&
          fs::file_size(dir / "segments.f32") == plan.dataset.size() * kSegmentSamples * sizeof(float))
        return dir;
    } catch (const IoError&) {
    }
  }
  log("generating domain " + plan.name + " (" + std::to_string(plan.dataset.size()) + " segments) -> " +
      dir.string());
  write_domain(dir, plan);
  return dir;
}

}  // namespace

std::vector<fs::path> generate_domains(const ExperimentConfig& cfg, const fs::path& out, const Logger& log) {
  std::vector<fs::path> dirs;
  for (const auto& d : cfg.dataset.domains) {
    const auto plan = plan_config_domain(cfg, d.name, cfg.dataset.class_filter);
    const auto dir = domain_dir(out, d.name, cfg.dataset.class_filter);
    log("writing domain " + d.name + " (" + std::to_string(plan.dataset.size()) + " segments) -> " + dir.string());
    write_domain(dir, plan);
    dirs.push_back(dir);
  }
  return dirs;
}

LoadedDomain load_domain(const ExperimentConfig& cfg, const std::string& name, ClassFilter filter,
                         const fs::path& out, const Logger& log) {
  const auto plan = plan_config_domain(cfg, name, filter);
  const auto dir = ensure_domain(plan, domain_dir(out, name, filter), log);
  const auto files = read_domain_manifest(dir);

  LoadedDomain d;
  d.name = name;
  d.mask = files.splits();
  d.prepared.name = name;
  d.prepared.labels = files.dataset.labels();
  const std::string key = hex64(fnv1a(manifest_text(files))) + "/fft" + std::to_string(kFftSize) + "/hop" +
                          std::to_string(kHopSize) + "/bins" + std::to_string(kFirstBin) + "+" +
                          std::to_string(kFreqBins) + "/frames" + std::to_string(kFrames);
  if (auto cached = read_spectrogram_cache(dir, key)) {
    d.prepared.inputs = std::move(*cached);
    return d;
  }
  log("computing spectrograms for " + name);
  const std::size_t n = files.dataset.size();
  const std::size_t m = kFreqBins * kFrames;
  d.prepared.inputs = Tensor<float>(n, 1, kFreqBins, kFrames);
  std::ifstream in(dir / "segments.f32", std::ios::binary);
  if (!in) throw IoError("cannot open " + (dir / "segments.f32").string());
  std::vector<float> buf(kSegmentSamples);
  for (std::size_t i = 0; i < n; ++i) {
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(float)));
    if (!in) throw IoError((dir / "segments.f32").string() + ": truncated");
    const auto spec = stft_db(std::span<const float>(buf), kSampleRateHz);
    std::copy_n(spec.values.data(), m, d.prepared.inputs.data() + i * m);
  }
  write_spectrogram_cache(dir, d.prepared.inputs, key);
  return d;
}

fs::path run_dir(const fs::path& out, const BenchCell& cell) {
  RunReport id;
  id.source = cell.scenario.source;
  id.target = cell.scenario.target;
  id.dataset = to_string(cell.class_filter);
  id.variant = to_string(cell.spec.variant);
  id.norm = to_string(cell.spec.norm.kind);
  id.seed = cell.seed;
  return out / "runs" / id.cell_id();
}

std::string cell_config_text(const ExperimentConfig& cfg, const BenchCell& cell) {
  ordered_json domains = ordered_json::object();
  for (const auto& name : {cell.scenario.source, cell.scenario.target})
    domains[name] = {{"profile", to_json(cfg.dataset.domain(name))}, {"seed", cfg.dataset.domain_seed(name)}};
  auto train = to_json(cfg.train);
  train.erase("seeds");
  const ordered_json j = {{"source", cell.scenario.source},
                          {"target", cell.scenario.target},
                          {"dataset",
                           {{"segments_per_class", cfg.dataset.segments_per_class},
                            {"class_filter", to_string(cell.class_filter)},
                            {"geometry", to_json(cfg.dataset.geometry)},
                            {"domains", domains}}},
                          {"model", to_json(cell.spec)},
                          {"train", train},
                          {"seed", cell.seed}};
  return j.dump(2) + "\n";
}

bool cell_complete(const fs::path& dir, const std::string& cell_config) {
  try {
    if (!fs::exists(dir / "cell.json") || read_file_bytes(dir / "cell.json") != cell_config) return false;
    run_report_from_json(read_file_bytes(dir / "report.json"));
    read_checkpoint_info(dir / "checkpoint.bin");
    return true;
  } catch (const std::exception&) {
    return false;
  }
}

RunReport run_cell(const ExperimentConfig& cfg, const BenchCell& cell, const LoadedDomain& source,
                   const LoadedDomain& target, const fs::path& out, const Logger& log) {
  const auto t0 = std::chrono::steady_clock::now();
  const fs::path dir = run_dir(out, cell);
  make_dirs(dir);
  std::error_code ec;
  fs::remove(dir / "cell.json", ec);

  Model<float> model(cell.spec, cell.seed);
  const auto src_splits = split_source(source.prepared.labels, cell.seed);
  TargetDomain tgt{target.name, target.prepared.inputs, TargetLabels(target.prepared.labels, target.mask)};

  const std::string tag = run_dir(out, cell).filename().string();
  log(tag + ": pretraining on " + source.name);
  const auto pre = pretrain(model, source.prepared, src_splits, cfg.train, cell.seed);
  log(tag + ": finetuning on " + target.name + " (pretrain selected epoch " + std::to_string(pre.selected_epoch) +
      ")");
  const auto fin = finetune(model, source.prepared, src_splits, tgt, target.mask, cfg.train, cell.seed);

  const auto& test = target.mask.test;
  const auto pred = predict(model, tgt.inputs, test, cfg.train.eval_batch);
  std::vector<int> truth_joint;
  std::vector<std::array<int, kNumTasks>> truth_tasks;
  for (auto i : test) {
    const auto& l = tgt.labels.test_label(i);
    truth_joint.push_back(l.joint());
    truth_tasks.push_back(l.digits());
  }

  RunReport r;
  r.source = cell.scenario.source;
  r.target = cell.scenario.target;
  r.variant = to_string(cell.spec.variant);
  r.norm = to_string(cell.spec.norm.kind);
  r.dataset = to_string(cell.class_filter);
  r.seed = cell.seed;
  // Averaged over the dataset's own classes: 7 for the single-fault subset.
  std::vector<int> classes;
  for (const auto& c : class_list(cell.class_filter)) classes.push_back(c.joint());
  r.joint_f1 = macro_f1_over(pred.joint, truth_joint, classes, kJointClasses);
  r.fault_f1 = per_fault_f1(pred.tasks, truth_tasks);
  r.param_count = model.params().trainable_count();
  r.pretrain = trajectory(pre, cell.spec);
  r.finetune = trajectory(fin, cell.spec);
  r.wall_clock_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  save_checkpoint(dir / "checkpoint.bin", model);
  write_file_bytes(dir / "pretrain_log.csv", log_csv(pre));
  write_file_bytes(dir / "finetune_log.csv", log_csv(fin));
  write_file_bytes(dir / "report.json", to_json_string(r));
  write_file_bytes(dir / "cell.json", cell_config_text(cfg, cell));
  char buf[128];
  std::snprintf(buf, sizeof buf, ": joint macro-F1 %.4f (%.0f s)", r.joint_f1, r.wall_clock_s);
  log(tag + buf);
  return r;
}

std::vector<RunReport> run_bench(const ExperimentConfig& cfg, const fs::path& out, const BenchOptions& opts,
                                 const Logger& log) {
  openblas_set_num_threads(1);
  const auto cells = bench_cells(cfg);
  std::vector<RunReport> reports(cells.size());
  std::vector<std::size_t> todo;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    const auto dir = run_dir(out, cells[i]);
    if (opts.resume && cell_complete(dir, cell_config_text(cfg, cells[i]))) {
      reports[i] = run_report_from_json(read_file_bytes(dir / "report.json"));
      continue;
    }
    todo.push_back(i);
  }
  log(std::to_string(cells.size()) + " cells, " + std::to_string(cells.size() - todo.size()) + " reused, " +
      std::to_string(todo.size()) + " to run");

  std::map<std::string, LoadedDomain> domains;
  for (auto i : todo)
    for (const auto& name : {cells[i].scenario.source, cells[i].scenario.target}) {
      const std::string key = name + "_" + to_string(cells[i].class_filter);
      if (!domains.count(key)) domains.emplace(key, load_domain(cfg, name, cells[i].class_filter, out, log));
    }
  auto domain_of = [&](const std::string& name, ClassFilter f) -> const LoadedDomain& {
    return domains.at(name + "_" + to_string(f));
  };

  std::atomic<std::size_t> next{0};
  std::mutex err_mu;
  std::exception_ptr first_error;
  auto worker = [&] {
    for (;;) {
      const std::size_t k = next.fetch_add(1);
      if (k >= todo.size()) return;
      {
        std::lock_guard<std::mutex> lock(err_mu);
        if (first_error) return;
      }
      const auto& cell = cells[todo[k]];
      try {
        reports[todo[k]] = run_cell(cfg, cell, domain_of(cell.scenario.source, cell.class_filter),
                                    domain_of(cell.scenario.target, cell.class_filter), out, log);
      } catch (...) {
        std::lock_guard<std::mutex> lock(err_mu);
        if (!first_error) first_error = std::current_exception();
      }
    }
  };
  const std::size_t jobs = std::max<std::size_t>(1, std::min(opts.jobs, todo.size()));
  if (jobs <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t j = 0; j < jobs; ++j) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (first_error) std::rethrow_exception(first_error);

  emit_report(reports, out / "report");
  log("report written to " + (out / "report").string());
  return reports;
}

}  // namespace xtalk
