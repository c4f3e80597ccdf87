#include <stdexcept>

#include "doctest.h"
#include "motorfm/report.hpp"

using namespace motorfm;

namespace {

CellResult ok_cell(const std::string& task, double f, std::uint64_t seed, double acc) {
  CellResult c;
  c.task_id = task;
  c.fraction = f;
  c.seed = seed;
  c.ok = true;
  c.accuracy = acc;
  c.confusion = {{3, 1}, {0, 4}};
  c.train_samples = 6;
  c.epochs_run = 12;
  c.frozen_intact = true;
  return c;
}

EvalReport sample_report() {
  EvalReport r;
  r.suite = "expressivity";
  r.fractions = {0.05, 0.10};
  r.seeds = {1, 2};
  r.config_hash = "abc";
  r.backbone_fingerprint = "00-11";
  ReportRow a{"Task 1", "task1", "healthy vs faulty", {}, {}};
  a.cells = {ok_cell("task1", 0.05, 1, 90.0), ok_cell("task1", 0.05, 2, 100.0), ok_cell("task1", 0.10, 1, 97.5),
             ok_cell("task1", 0.10, 2, 97.5)};
  ReportRow b{"Task 2", "task2", "variable speed", {}, {}};
  CellResult bad;
  bad.task_id = "task2";
  bad.fraction = 0.05;
  bad.seed = 1;
  bad.error = "class 'outer' has no training samples";
  b.cells = {bad, ok_cell("task2", 0.05, 2, 80.0), ok_cell("task2", 0.10, 1, 88.0), ok_cell("task2", 0.10, 2, 92.0)};
  for (auto* row : {&a, &b}) {
    for (double f : r.fractions) {
      std::vector<const CellResult*> g;
      for (const auto& c : row->cells) {
        if (c.fraction == f) g.push_back(&c);
      }
      row->columns.push_back(summarize(f, g));
    }
  }
  r.rows = {a, b};
  return r;
}

}  // namespace

TEST_CASE("table shows mean and std per column and marks failures") {
  const auto text = render_table(sample_report());
  CHECK(text.find("5.00%") != std::string::npos);
  CHECK(text.find("95.00 ± 5.00") != std::string::npos);
  CHECK(text.find("97.50 ± 0.00") != std::string::npos);
  CHECK(text.find("ERR[1]") != std::string::npos);
  CHECK(text.find("[1] task2 @ 5.00%: 1 failed cell(s): class 'outer' has no training samples") != std::string::npos);
  CHECK(text.find("90.00 ± 2.00") != std::string::npos);
}

TEST_CASE("csv round trips and ERR cells stay empty") {
  const auto report = sample_report();
  const auto t = parse_report_csv(render_csv(report));
  REQUIRE(t.header == std::vector<std::string>{"task", "0.05", "0.10"});
  REQUIRE(t.row_names == std::vector<std::string>{"task1", "task2"});
  CHECK(*t.values[0][0] == 95.0);
  CHECK(*t.values[0][1] == 97.5);
  CHECK_FALSE(t.values[1][0].has_value());
  CHECK(*t.values[1][1] == 90.0);
  const auto s = parse_report_csv(render_csv(report, true));
  CHECK(*s.values[0][0] == 5.0);
  CHECK_THROWS_AS(parse_report_csv("name,0.05\nx,1\n"), std::invalid_argument);
  CHECK_THROWS_AS(parse_report_csv("task,0.05\nx,1,2\n"), std::invalid_argument);
}

TEST_CASE("results jsonl round trips and re-renders identically") {
  const auto report = sample_report();
  const auto text = write_results_jsonl(report);
  const auto back = read_results_jsonl(text);
  CHECK(back.suite == report.suite);
  CHECK(back.rows.size() == 2);
  CHECK(back.rows[0].cells[1].confusion == report.rows[0].cells[1].confusion);
  CHECK(back.rows[1].cells[0].error == report.rows[1].cells[0].error);
  CHECK(render_table(back) == render_table(report));
  CHECK(write_results_jsonl(back) == text);

  CHECK_THROWS_WITH_AS(read_results_jsonl("{\"type\":\"cell\"}\n"), doctest::Contains("line 1"), std::invalid_argument);
  CHECK_THROWS_AS(read_results_jsonl(""), std::invalid_argument);
  CHECK_THROWS_AS(read_results_jsonl(text + "{not json\n"), std::invalid_argument);
}
