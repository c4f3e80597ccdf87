#include "motorfm/report.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace motorfm {

namespace {

using nlohmann::json;

std::string fixed2(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string fraction_label(double f) { return fixed2(100.0 * f) + "%"; }

bool column_failed(const FractionSummary& s) { return s.failed_cells > 0 || s.ok_cells == 0; }

std::string pad(const std::string& s, std::size_t width, bool right) {
  if (s.size() >= width) return s;
  const std::string fill(width - s.size(), ' ');
  return right ? fill + s : s + fill;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

}  // namespace

std::string render_table(const EvalReport& report) {
  std::vector<std::vector<std::string>> grid;
  std::vector<std::string> header{"Task"};
  for (double f : report.fractions) header.push_back(fraction_label(f));
  grid.push_back(header);

  std::vector<std::string> footnotes;
  for (const auto& row : report.rows) {
    std::vector<std::string> line{row.group.empty() ? row.label : row.group + " " + row.label};
    for (std::size_t i = 0; i < row.columns.size(); ++i) {
      const auto& c = row.columns[i];
      if (column_failed(c)) {
        footnotes.push_back(std::to_string(footnotes.size() + 1));
        std::string msg;
        for (const auto& cell : row.cells) {
          if (!cell.ok && cell.fraction == c.fraction) {
            msg = cell.error;
            break;
          }
        }
        footnotes.back() = "[" + footnotes.back() + "] " + row.task_id + " @ " + fraction_label(c.fraction) + ": " +
                           std::to_string(c.failed_cells) + " failed cell(s): " + msg;
        line.push_back("ERR[" + std::to_string(footnotes.size()) + "]");
      } else {
        line.push_back(fixed2(c.mean) + " ± " + fixed2(c.stddev));
      }
    }
    grid.push_back(line);
  }

  std::vector<std::size_t> width(header.size(), 0);
  for (const auto& line : grid) {
    for (std::size_t i = 0; i < line.size() && i < width.size(); ++i) {
      // "±" is two bytes but one column
      const auto n = line[i].size() - (line[i].find("±") != std::string::npos ? 1 : 0);
      width[i] = std::max(width[i], n);
    }
  }

  std::ostringstream os;
  os << "Suite: " << report.suite << "  (accuracy %, mean ± std over " << report.seeds.size() << " seed(s))\n";
  if (report.noise_percent > 0.0) {
    os << "Noise: Gaussian, std = " << fixed2(report.noise_percent) << "% of each record's signal std\n";
  }
  os << "Fine-tuned models are restored to their best validation epoch before testing.\n";
  os << "Config " << report.config_hash << ", backbone " << report.backbone_fingerprint << "\n\n";
  for (std::size_t r = 0; r < grid.size(); ++r) {
    for (std::size_t i = 0; i < grid[r].size(); ++i) {
      const auto& s = grid[r][i];
      const auto extra = s.size() - (s.find("±") != std::string::npos ? 1 : 0);
      const auto w = width[i] + (s.size() - extra);
      os << (i == 0 ? "" : "  ") << pad(s, w, i != 0);
    }
    os << "\n";
    if (r == 0) {
      std::size_t total = 0;
      for (auto w : width) total += w + 2;
      os << std::string(total - 2, '-') << "\n";
    }
  }
  if (!footnotes.empty()) {
    os << "\n";
    for (const auto& f : footnotes) os << f << "\n";
  }
  return os.str();
}

std::string render_csv(const EvalReport& report, bool std_dev) {
  std::ostringstream os;
  os << "task";
  for (double f : report.fractions) os << "," << fixed2(f);
  os << "\n";
  for (const auto& row : report.rows) {
    os << csv_field(row.task_id);
    for (const auto& c : row.columns) os << "," << (column_failed(c) ? "ERR" : fixed2(std_dev ? c.stddev : c.mean));
    os << "\n";
  }
  return os.str();
}

CsvTable parse_report_csv(const std::string& text) {
  CsvTable t;
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw std::invalid_argument("csv: empty input");
  t.header = split_csv_line(line);
  if (t.header.empty() || t.header[0] != "task") throw std::invalid_argument("csv: header must start with 'task'");
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto fields = split_csv_line(line);
    if (fields.size() != t.header.size()) {
      throw std::invalid_argument("csv: row '" + fields[0] + "' has " + std::to_string(fields.size()) + " fields, expected " +
                                  std::to_string(t.header.size()));
    }
    t.row_names.push_back(fields[0]);
    std::vector<std::optional<double>> vals;
    for (std::size_t i = 1; i < fields.size(); ++i) {
      if (fields[i] == "ERR") vals.emplace_back();
      else vals.emplace_back(parse_real(fields[i]));
    }
    t.values.push_back(std::move(vals));
  }
  return t;
}

std::string write_results_jsonl(const EvalReport& report) {
  json rows = json::array();
  for (const auto& r : report.rows) rows.push_back({{"task", r.task_id}, {"group", r.group}, {"label", r.label}});
  json head = {{"type", "report"},
               {"suite", report.suite},
               {"fractions", report.fractions},
               {"seeds", report.seeds},
               {"noise_percent", report.noise_percent},
               {"config_hash", report.config_hash},
               {"backbone", report.backbone_fingerprint},
               {"rows", rows}};
  std::string out = head.dump() + "\n";
  for (const auto& r : report.rows) {
    for (const auto& c : r.cells) {
      json cell = {{"type", "cell"},
                   {"task", c.task_id},
                   {"fraction", c.fraction},
                   {"seed", c.seed},
                   {"ok", c.ok}};
      if (c.ok) {
        cell["accuracy"] = c.accuracy;
        cell["confusion"] = c.confusion;
        cell["train_samples"] = c.train_samples;
        cell["epochs_run"] = c.epochs_run;
        cell["frozen_intact"] = c.frozen_intact;
      } else {
        cell["error"] = c.error;
      }
      out += cell.dump() + "\n";
    }
  }
  return out;
}

EvalReport read_results_jsonl(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  EvalReport report;
  bool have_head = false;
  std::size_t line_no = 0;
  try {
    while (std::getline(in, line)) {
      ++line_no;
      if (line.empty()) continue;
      const auto j = json::parse(line);
      const auto type = j.at("type").get<std::string>();
      if (type == "report") {
        if (have_head) throw std::invalid_argument("second report header");
        have_head = true;
        report.suite = j.at("suite").get<std::string>();
        report.fractions = j.at("fractions").get<std::vector<double>>();
        report.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
        report.noise_percent = j.at("noise_percent").get<double>();
        report.config_hash = j.at("config_hash").get<std::string>();
        report.backbone_fingerprint = j.at("backbone").get<std::string>();
        for (const auto& r : j.at("rows")) {
          ReportRow row;
          row.task_id = r.at("task").get<std::string>();
          row.group = r.at("group").get<std::string>();
          row.label = r.at("label").get<std::string>();
          report.rows.push_back(std::move(row));
        }
      } else if (type == "cell") {
        if (!have_head) throw std::invalid_argument("cell before report header");
        CellResult c;
        c.task_id = j.at("task").get<std::string>();
        c.fraction = j.at("fraction").get<double>();
        c.seed = j.at("seed").get<std::uint64_t>();
        c.ok = j.at("ok").get<bool>();
        if (c.ok) {
          c.accuracy = j.at("accuracy").get<double>();
          c.confusion = j.at("confusion").get<ConfusionMatrix>();
          c.train_samples = j.at("train_samples").get<std::size_t>();
          c.epochs_run = j.at("epochs_run").get<std::size_t>();
          c.frozen_intact = j.at("frozen_intact").get<bool>();
        } else {
          c.error = j.at("error").get<std::string>();
        }
        auto it = std::find_if(report.rows.begin(), report.rows.end(),
                               [&](const ReportRow& r) { return r.task_id == c.task_id; });
        if (it == report.rows.end()) throw std::invalid_argument("cell for undeclared task " + c.task_id);
        it->cells.push_back(std::move(c));
      } else {
        throw std::invalid_argument("unknown record type '" + type + "'");
      }
    }
  } catch (const json::exception& e) {
    throw std::invalid_argument("results line " + std::to_string(line_no) + ": " + e.what());
  } catch (const std::invalid_argument& e) {
    throw std::invalid_argument("results line " + std::to_string(line_no) + ": " + e.what());
  }
  if (!have_head) throw std::invalid_argument("results: no report header");
  for (auto& row : report.rows) {
    for (double f : report.fractions) {
      std::vector<const CellResult*> group;
      for (const auto& c : row.cells) {
        if (c.fraction == f) group.push_back(&c);
      }
      row.columns.push_back(summarize(f, group));
    }
  }
  return report;
}

void write_report_files(const EvalReport& report, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  const auto put = [&](const std::string& name, const std::string& content) {
    std::ofstream out(dir / name, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + (dir / name).string());
    out << content;
  };
  put(report.suite + ".txt", render_table(report));
  put(report.suite + ".csv", render_csv(report, false));
  put(report.suite + "_std.csv", render_csv(report, true));
  put(report.suite + ".jsonl", write_results_jsonl(report));
}

}  // namespace motorfm
