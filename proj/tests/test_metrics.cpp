#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "support.hpp"
#include "xtalk/errors.hpp"
#include "xtalk/metrics.hpp"

using namespace xtalk;
using xtalk::testing::Gen;

namespace {

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::string> lines_of(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

std::vector<std::string> cells_of(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.push_back("");
  return out;
}

RunReport make_run(const std::string& src, const std::string& tgt, const std::string& variant,
                   const std::string& norm, std::uint64_t seed, double f1) {
  RunReport r;
  r.source = src;
  r.target = tgt;
  r.variant = variant;
  r.norm = norm;
  r.seed = seed;
  r.joint_f1 = f1;
  r.fault_f1 = {f1, f1 / 2, f1 / 3, f1 / 4};
  r.param_count = 1000 + variant.size();
  r.pretrain.heads = {"irf", "orf", "mis", "unb"};
  r.pretrain.losses = {{1, 2, 3, 4}, {0.5, 1, 1.5, 2}};
  r.pretrain.selected_epoch = 1;
  r.finetune.heads = r.pretrain.heads;
  r.finetune.losses = {{0.4, 0.3, 0.2, 0.1}};
  r.wall_clock_s = 1.25;
  return r;
}

}  // namespace

TEST_CASE("joint class examples and round trip") {
  CHECK(joint_class({0, 0, 0, 0}) == 0);
  CHECK(joint_class({1, 1, 2, 2}) == 35);
  CHECK(joint_class({1, 0, 0, 0}) == 18);
  for (int j = 0; j < kJointClasses; ++j) {
    const auto d = decode_joint(j);
    CHECK(joint_class(d) == j);
    CHECK(j == d[0] * 18 + d[1] * 9 + d[2] * 3 + d[3]);
  }
  CHECK_THROWS_AS(joint_class({2, 0, 0, 0}), DomainError);
  CHECK_THROWS_AS(joint_class({0, 0, -1, 0}), DomainError);
  CHECK_THROWS_AS(decode_joint(36), DomainError);
}

TEST_CASE("macro F1 examples") {
  const std::vector<int> p{0, 0, 1}, l{0, 1, 1};
  CHECK(macro_f1(p, l, 2) == doctest::Approx(2.0 / 3.0));
  const std::vector<int> same{0, 1, 2, 2};
  CHECK(macro_f1(same, same, 3) == 1.0);
  // Class 3 never appears and contributes zero.
  CHECK(macro_f1(same, same, 4) == doctest::Approx(0.75));
  CHECK_THROWS_AS(macro_f1(std::vector<int>{}, std::vector<int>{}, 2), DomainError);
  CHECK_THROWS_AS(macro_f1(p, std::vector<int>{0, 1}, 2), ShapeError);
  CHECK_THROWS_AS(macro_f1(std::vector<int>{0, 0, 2}, l, 2), DomainError);
}

TEST_CASE("property: macro F1 matches the confusion-matrix oracle exhaustively") {
  std::size_t cases = 0;
  for (int k = 1; k <= 3; ++k)
    for (int n = 1; n <= 5; ++n) {
      const int combos = static_cast<int>(std::pow(k, 2 * n));
      for (int code = 0; code < combos; ++code) {
        std::vector<int> p(n), l(n);
        int c = code;
        for (int i = 0; i < n; ++i) p[i] = c % k, c /= k;
        for (int i = 0; i < n; ++i) l[i] = c % k, c /= k;
        const double got = macro_f1(p, l, k), want = xtalk::testing::macro_f1_reference(p, l, k);
        if (std::abs(got - want) > 1e-12) FAIL("mismatch k=" << k << " n=" << n << " code=" << code);
        ++cases;
      }
    }
  CHECK(cases > 60000);
}

TEST_CASE("macro F1 over a class subset") {
  // Labels use classes {0, 5, 9} of 36; one 5 is mispredicted as 20.
  const std::vector<int> p{0, 5, 20, 9}, l{0, 5, 5, 9}, cls{0, 5, 9};
  // F1: class 0 = 1, class 5 = 2/3, class 9 = 1.
  CHECK(macro_f1_over(p, l, cls, 36) == doctest::Approx((1.0 + 2.0 / 3.0 + 1.0) / 3.0));
  CHECK(macro_f1(p, l, 36) == doctest::Approx((1.0 + 2.0 / 3.0 + 1.0) / 36.0));
  CHECK_THROWS_AS(macro_f1_over(p, std::vector<int>{0, 5, 5, 8}, cls, 36), DomainError);
  CHECK_THROWS_AS(macro_f1_over(p, l, std::vector<int>{0, 0, 5, 9}, 36), DomainError);
  CHECK_THROWS_AS(macro_f1_over(p, l, std::vector<int>{}, 36), DomainError);
}

TEST_CASE("property: macro F1 over the full class list equals plain macro F1") {
  Gen gen(7);
  for (int trial = 0; trial < 50; ++trial) {
    const int k = 1 + gen.integer(0, 35);
    const std::size_t n = 1 + gen.index(60);
    std::vector<int> p(n), l(n), all(k);
    std::iota(all.begin(), all.end(), 0);
    for (std::size_t i = 0; i < n; ++i) p[i] = gen.integer(0, k - 1), l[i] = gen.integer(0, k - 1);
    CHECK(macro_f1_over(p, l, all, k) == doctest::Approx(macro_f1(p, l, k)).epsilon(1e-12));
  }
}

TEST_CASE("property: macro F1 ignores sample order") {
  Gen gen(1);
  for (int trial = 0; trial < 50; ++trial) {
    const int k = 2 + gen.integer(0, 34);
    const std::size_t n = 1 + gen.index(60);
    std::vector<int> p(n), l(n);
    for (std::size_t i = 0; i < n; ++i) p[i] = gen.integer(0, k - 1), l[i] = gen.integer(0, k - 1);
    const double base = macro_f1(p, l, k);
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), gen.engine());
    std::vector<int> p2, l2;
    for (auto i : order) p2.push_back(p[i]), l2.push_back(l[i]);
    CHECK(macro_f1(p2, l2, k) == doctest::Approx(base).epsilon(1e-12));
    CHECK(base >= 0.0);
    CHECK(base <= 1.0);
  }
}

TEST_CASE("per-fault F1") {
  Gen gen(2);
  std::vector<std::array<int, kNumTasks>> labels, preds;
  for (int j = 0; j < 36; ++j) labels.push_back(decode_joint(j));
  // Task 1 exact, everything else scrambled.
  for (const auto& l : labels) preds.push_back({gen.integer(0, 1), l[1], gen.integer(0, 2), gen.integer(0, 2)});
  const auto f = per_fault_f1(preds, labels);
  CHECK(f[1] == 1.0);
  for (double v : f) CHECK((v >= 0.0 && v <= 1.0));

  // MCC route: decode the joint argmax back to digits.
  std::vector<std::array<int, kNumTasks>> mcc_preds;
  for (int j = 0; j < 36; ++j) mcc_preds.push_back(decode_joint(j));
  for (double v : per_fault_f1(mcc_preds, labels)) CHECK(v == 1.0);
  CHECK_THROWS_AS(per_fault_f1(std::span(mcc_preds).first(3), labels), ShapeError);
}

TEST_CASE("uniform random predictions on a balanced binary task score about one half") {
  Gen gen(3);
  const std::size_t n = 10000;
  std::vector<std::array<int, kNumTasks>> preds(n), labels(n);
  for (std::size_t i = 0; i < n; ++i) {
    labels[i] = {static_cast<int>(i % 2), 0, 0, 0};
    preds[i] = {gen.integer(0, 1), 0, 0, 0};
  }
  // Per-class F1 tracks accuracy here; its spread is about 0.5 / sqrt(n).
  const double sigma = 0.5 / std::sqrt(static_cast<double>(n));
  CHECK(std::abs(per_fault_f1(preds, labels)[0] - 0.5) <= 3.0 * sigma);
}

TEST_CASE("run report JSON round trip") {
  const auto r = make_run("A", "C", "CROSSTALK", "FLN", 2, 0.8125);
  const auto back = run_report_from_json(to_json_string(r));
  CHECK(back.source == "A");
  CHECK(back.target == "C");
  CHECK(back.variant == "CROSSTALK");
  CHECK(back.seed == 2);
  CHECK(back.joint_f1 == r.joint_f1);
  CHECK(back.fault_f1 == r.fault_f1);
  CHECK(back.param_count == r.param_count);
  CHECK(back.pretrain.losses == r.pretrain.losses);
  CHECK(back.pretrain.selected_epoch == 1);
  CHECK(back.finetune.heads == r.finetune.heads);
  CHECK(to_json_string(back) == to_json_string(r));
  CHECK(r.scenario() == "A->C");
  CHECK(r.cell_id() != make_run("A", "C", "CROSSTALK", "FLN", 3, 0.8).cell_id());
  CHECK_THROWS_AS(run_report_from_json("{\"source\": 1}"), IoError);
  CHECK_THROWS_AS(run_report_from_json("not json"), IoError);
}

TEST_CASE("seed means are arithmetic means") {
  Gen gen(4);
  std::vector<RunReport> runs;
  std::vector<double> vals;
  for (std::uint64_t s = 0; s < 5; ++s) {
    vals.push_back(gen.uniform(0.0, 1.0));
    runs.push_back(make_run("A", "B", "MCC", "FLN", s, vals.back()));
  }
  runs.push_back(make_run("A", "B", "MCC", "LN", 0, 0.1));
  const auto cells = seed_means(runs);
  REQUIRE(cells.size() == 2);
  double mean = 0.0;
  for (double v : vals) mean += v / 5.0;
  CHECK(cells[0].seeds == 5);
  CHECK(std::abs(cells[0].joint_f1 - mean) <= 1e-9);
  CHECK(std::abs(cells[0].fault_f1[3] - mean / 4) <= 1e-9);
  CHECK(cells[1].joint_f1 == 0.1);
}

TEST_CASE("report tables: six scenarios by four variants by three seeds") {
  const char* domains[] = {"A", "B", "C"};
  const char* variants[] = {"MCC", "MOC_STL", "SHARED_TRUNK", "CROSSTALK"};
  std::vector<RunReport> runs;
  Gen gen(5);
  for (auto s : domains)
    for (auto t : domains) {
      if (std::string(s) == t) continue;
      for (auto v : variants)
        for (std::uint64_t seed = 0; seed < 3; ++seed)
          runs.push_back(make_run(s, t, v, "FLN", seed, gen.uniform(0.2, 0.9)));
    }
  for (std::uint64_t seed = 0; seed < 3; ++seed) runs.push_back(make_run("A", "C", "CROSSTALK", "LN", seed, 0.3));
  const auto dir = xtalk::testing::scratch_dir("metrics_report");
  emit_report(runs, dir);

  const auto arch = lines_of(slurp(dir / "table_architecture.csv"));
  REQUIRE(arch.size() == 8);
  CHECK(arch.front() == "scenario,MCC,MOC_STL,SHARED_TRUNK,CROSSTALK");
  CHECK(cells_of(arch.back()).front() == "Average");
  for (const auto& l : arch) CHECK(cells_of(l).size() == 5);

  // Average row equals the column mean of the printed cells.
  double col = 0.0;
  for (std::size_t r = 1; r <= 6; ++r) col += std::stod(cells_of(arch[r])[4]);
  CHECK(std::stod(cells_of(arch.back())[4]) == doctest::Approx(col / 6).epsilon(1e-5));

  const auto norm = lines_of(slurp(dir / "table_normalization.csv"));
  CHECK(norm.front() == "scenario,FLN,LN");
  CHECK(norm.size() == 8);

  const auto pf = lines_of(slurp(dir / "per_fault.csv"));
  CHECK(pf.size() == 1 + 24 + 1);
  CHECK(pf.front() == "scenario,dataset,variant,norm,seeds,irf,orf,mis,unb,joint");

  // Six task pairs per epoch, three epochs across both stages.
  CHECK(lines_of(slurp(dir / "trajectories.csv")).size() == 1 + runs.size() * 3 * 6);
  CHECK(lines_of(slurp(dir / "params.csv")).size() == 1 + 5);

  const auto bundle = slurp(dir / "runs.json");
  const auto before = slurp(dir / "table_architecture.csv");
  emit_report(runs, dir);
  CHECK(slurp(dir / "table_architecture.csv") == before);
  CHECK(slurp(dir / "runs.json") == bundle);
}

TEST_CASE("single run report") {
  const auto dir = xtalk::testing::scratch_dir("metrics_single");
  const std::vector<RunReport> one{make_run("B", "A", "CROSSTALK", "FLN", 0, 0.625)};
  emit_report(one, dir);
  const auto arch = lines_of(slurp(dir / "table_architecture.csv"));
  REQUIRE(arch.size() == 3);
  CHECK(arch[1] == "B->A,0.625000");
  CHECK(arch[2] == "Average,0.625000");
  CHECK_THROWS_AS(emit_report(std::span<const RunReport>(), dir), DomainError);
}

TEST_CASE("unwritable output is an I/O error") {
  const auto dir = xtalk::testing::scratch_dir("metrics_blocked");
  { std::ofstream(dir / "file") << "x"; }
  const std::vector<RunReport> one{make_run("A", "B", "MCC", "FLN", 0, 0.5)};
  CHECK_THROWS_AS(emit_report(one, dir / "file" / "sub"), IoError);
}
