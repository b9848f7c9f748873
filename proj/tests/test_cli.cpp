#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <fstream>
#include <sstream>

#include "support.hpp"
#include "xtalk/cli.hpp"
#include "xtalk/config.hpp"
#include "xtalk/errors.hpp"
#include "xtalk/io.hpp"
#include "xtalk/runner.hpp"

using namespace xtalk;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kTiny = R"({
  "dataset": {"segments_per_class": 10, "class_filter": "normal_plus_single7"},
  "model": {"variant": "MCC"},
  "train": {"epochs_pretrain": 1, "epochs_finetune": 1, "seeds": [0]},
  "scenarios": [["A", "B"]],
  "bench": {"variants": ["MCC", "SHARED_TRUNK"], "norms": ["FLN"]}
})";

struct Result {
  int code;
  std::string out, err;
};

Result cli(std::vector<std::string> args) {
  args.insert(args.begin(), "moc-xtalk");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

fs::path write_config(const fs::path& dir, const std::string& text) {
  const auto p = dir / "config.json";
  std::ofstream(p) << text;
  return p;
}

// Field path carried by a ConfigError raised while parsing `text`.
std::string error_field(const std::string& text) {
  try {
    parse_experiment_config(text);
  } catch (const ConfigError& e) {
    return e.field();
  }
  return "<no error>";
}

}  // namespace

TEST_CASE("default config round-trips through its JSON form") {
  const auto text = default_config_text();
  const auto cfg = parse_experiment_config(text);
  CHECK(to_json(cfg).dump(2) + "\n" == text);
  CHECK(cfg.dataset.segments_per_class == 30);
  CHECK(cfg.scenarios.size() == 6);
  CHECK(cfg.train.seeds == std::vector<std::uint64_t>{0, 1, 2});
  const auto tiny = parse_experiment_config(kTiny);
  CHECK(parse_experiment_config(to_json(tiny).dump()).train.epochs_pretrain == 1);
}

TEST_CASE("config errors name the offending field") {
  CHECK(error_field(R"({"train": {"bogus": 1}})") == "train.bogus");
  CHECK(error_field(R"({"train": {"batch_size": "x"}})") == "train.batch_size");
  CHECK(error_field(R"({"model": {"variant": "MTAN"}})") == "model.variant");
  CHECK(error_field(R"({"model": {"norm": {"kind": "GN"}}})") == "model.norm.kind");
  CHECK(error_field(R"({"dataset": {"segments_per_class": 0}})") == "dataset.segments_per_class");
  CHECK(error_field(R"({"scenarios": [["A", "Z"]]})").rfind("scenarios", 0) == 0);
  CHECK(error_field(R"({"train": {"weights": {"mmd": -1}}})").rfind("train", 0) == 0);
  CHECK(error_field("{not json") == "");
  CHECK(error_field(R"({"top": 1})") == "top");
  CHECK(error_field(kTiny) == "<no error>");
}

TEST_CASE("bench cells cover the architecture and normalization matrix") {
  auto cfg = parse_experiment_config(kTiny);
  // MCC and SHARED_TRUNK at FLN; CROSSTALK at FLN from the normalization row.
  CHECK(bench_cells(cfg).size() == 3);
  cfg.bench = BenchConfig{};
  cfg.train.seeds = {0, 1, 2};
  cfg.scenarios = {{"A", "B"}, {"A", "C"}};
  CHECK(bench_cells(cfg).size() == 2 * 3 * (4 + 4));
}

TEST_CASE("exit codes and error lines") {
  const auto dir = xtalk::testing::scratch_dir("cli_codes");
  CHECK(cli({"--print-default-config"}).code == 0);
  CHECK(cli({"--help"}).code == 0);

  auto r = cli({"gen", "--config", (dir / "missing.json").string()});
  CHECK(r.code == 3);
  CHECK(json::parse(r.err).at("error") == "io");

  r = cli({"gen", "--config", write_config(dir, R"({"train": {"epochs_pretrain": -3}})").string()});
  CHECK(r.code == 2);
  const auto e = json::parse(r.err);
  CHECK(e.at("error") == "config");
  CHECK(e.at("field") == "train.epochs_pretrain");

  CHECK(cli({"frobnicate"}).code == 2);
  CHECK(cli({"gen", "--jobs", "0"}).code == 2);

  const auto cfg = write_config(dir, kTiny).string();
  r = cli({"train", "--config", cfg, "--out", (dir / "o").string(), "--scenario", "A->Q"});
  CHECK(r.code == 2);
  r = cli({"train", "--config", cfg, "--out", (dir / "o").string(), "--variant", "MTAN"});
  CHECK(r.code == 2);
  CHECK(json::parse(r.err).at("field") == "--variant");
  CHECK(cli({"inspect", (dir / "nothing").string()}).code == 3);
}

TEST_CASE("gen is byte-identical across invocations and inspectable") {
  const auto dir = xtalk::testing::scratch_dir("cli_gen");
  const auto cfg = write_config(dir, kTiny).string();
  REQUIRE(cli({"gen", "--config", cfg, "--out", (dir / "a").string()}).code == 0);
  REQUIRE(cli({"gen", "--config", cfg, "--out", (dir / "b").string()}).code == 0);
  for (const char* d : {"A", "B", "C"}) {
    const auto sub = fs::path("data") / (std::string(d) + "_normal_plus_single7");
    for (const char* f : {"manifest.json", "segments.f32"})
      CHECK(read_file_bytes(dir / "a" / sub / f) == read_file_bytes(dir / "b" / sub / f));
  }
  REQUIRE(cli({"gen", "--config", cfg, "--out", (dir / "c").string(), "--seed", "99"}).code == 0);
  CHECK(read_file_bytes(dir / "a/data/A_normal_plus_single7/segments.f32") !=
        read_file_bytes(dir / "c/data/A_normal_plus_single7/segments.f32"));

  const auto manifest = read_domain_manifest(dir / "a/data/A_normal_plus_single7");
  CHECK(manifest.dataset.size() == 70);
  CHECK(read_segment(dir / "a/data/A_normal_plus_single7", 3).size() == kSegmentSamples);
  CHECK_THROWS_AS(read_segment(dir / "a/data/A_normal_plus_single7", 70), IoError);

  const auto r = cli({"inspect", (dir / "a/data/B_normal_plus_single7").string()});
  REQUIRE(r.code == 0);
  const auto j = json::parse(r.out);
  CHECK(j.at("kind") == "domain");
  CHECK(j.at("segments") == 70);
  CHECK(j.at("classes") == 7);
  CHECK(j.at("class_histogram").size() == 7);
}

TEST_CASE("a corrupted domain directory is an I/O error") {
  const auto dir = xtalk::testing::scratch_dir("cli_corrupt");
  const auto cfg = write_config(dir, kTiny).string();
  REQUIRE(cli({"gen", "--config", cfg, "--out", dir.string()}).code == 0);
  const auto d = dir / "data/A_normal_plus_single7";
  fs::resize_file(d / "segments.f32", 1000);
  CHECK_THROWS_AS(read_domain_manifest(d), IoError);
  std::ofstream(d / "manifest.json") << "{";
  CHECK(cli({"inspect", d.string()}).code == 3);
}

TEST_CASE("train writes a reproducible run directory") {
  const auto dir = xtalk::testing::scratch_dir("cli_train");
  const auto cfg = write_config(dir, kTiny).string();
  for (const char* o : {"a", "b"})
    REQUIRE(cli({"train", "--config", cfg, "--out", (dir / o).string()}).code == 0);
  const auto run = fs::path("runs/A_to_B__normal_plus_single7__MCC__FLN__seed0");
  for (const char* f : {"cell.json", "checkpoint.bin", "pretrain_log.csv", "finetune_log.csv"})
    CHECK(read_file_bytes(dir / "a" / run / f) == read_file_bytes(dir / "b" / run / f));

  const auto report = run_report_from_json(read_file_bytes(dir / "a" / run / "report.json"));
  CHECK(report.variant == "MCC");
  CHECK(report.pretrain.losses.size() == 2);
  CHECK(report.finetune.losses.size() == 2);
  CHECK(report.joint_f1 >= 0.0);
  CHECK(report.joint_f1 <= 1.0);

  // Checkpoint round trip and spec mismatch.
  ModelSpec spec;
  spec.variant = Variant::MCC;
  Model<float> m(spec, 123);
  load_checkpoint(dir / "a" / run / "checkpoint.bin", m);
  save_checkpoint(dir / "copy.bin", m);
  CHECK(read_file_bytes(dir / "copy.bin") == read_file_bytes(dir / "a" / run / "checkpoint.bin"));
  Model<float> other(ModelSpec{}, 0);
  CHECK_THROWS_AS(load_checkpoint(dir / "copy.bin", other), IoError);
  write_file_bytes(dir / "bad.bin", "XTALKCK1");
  CHECK_THROWS_AS(load_checkpoint(dir / "bad.bin", m), IoError);

  auto r = cli({"inspect", (dir / "a" / run / "checkpoint.bin").string()});
  REQUIRE(r.code == 0);
  auto j = json::parse(r.out);
  CHECK(j.at("kind") == "checkpoint");
  CHECK(j.at("tensor_count") == m.params().entries().size());
  r = cli({"inspect", (dir / "a" / run).string()});
  REQUIRE(r.code == 0);
  j = json::parse(r.out);
  CHECK(j.at("kind") == "run");
  CHECK(j.at("param_count") == param_count(spec));
}

TEST_CASE("bench reuses finished cells and emits the report") {
  const auto dir = xtalk::testing::scratch_dir("cli_bench");
  const auto cfg = write_config(dir, kTiny).string();
  REQUIRE(cli({"bench", "--config", cfg, "--out", dir.string()}).code == 0);
  for (const char* f : {"table_architecture.csv", "table_normalization.csv", "per_fault.csv", "trajectories.csv",
                        "params.csv", "runs.json"})
    CHECK(fs::exists(dir / "report" / f));
  const auto first = read_file_bytes(dir / "report/runs.json");
  const auto stamp = fs::last_write_time(dir / "runs/A_to_B__normal_plus_single7__MCC__FLN__seed0/report.json");
  REQUIRE(cli({"bench", "--config", cfg, "--out", dir.string()}).code == 0);
  CHECK(fs::last_write_time(dir / "runs/A_to_B__normal_plus_single7__MCC__FLN__seed0/report.json") == stamp);
  CHECK(read_file_bytes(dir / "report/runs.json") == first);

  auto parsed = parse_experiment_config(kTiny);
  const auto cells = bench_cells(parsed);
  const auto text = cell_config_text(parsed, cells.front());
  CHECK(cell_complete(run_dir(dir, cells.front()), text));
  parsed.train.epochs_pretrain = 2;
  CHECK_FALSE(cell_complete(run_dir(dir, cells.front()), cell_config_text(parsed, cells.front())));

  CHECK(cli({"inspect", "--out", dir.string()}).code == 0);
}
