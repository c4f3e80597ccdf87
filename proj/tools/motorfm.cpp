#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <random>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "motorfm/evaluate.hpp"
#include "motorfm/experiment.hpp"
#include "motorfm/finetune.hpp"
#include "motorfm/model.hpp"
#include "motorfm/report.hpp"
#include "motorfm/rng.hpp"

namespace fs = std::filesystem;
using namespace motorfm;

namespace {

struct Globals {
  std::string config = "default";
  std::optional<std::uint64_t> seed;
  std::string out = "out";
  std::size_t jobs = 1;
  bool quiet = false;
};

ExperimentConfig load_config(const Globals& g) {
  auto cfg = load_experiment_config(g.config);
  if (g.seed) cfg.seed = *g.seed;
  cfg.validate();
  return cfg;
}

void log(const Globals& g, const std::string& line) {
  if (!g.quiet) std::cerr << line << std::endl;
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::invalid_argument("cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

// Records come from --data when given, else from <out>/data when present,
// else they are generated in memory from the config.
ExperimentData load_data(const ExperimentConfig& cfg, const Globals& g, const std::string& data_dir) {
  fs::path dir = data_dir;
  if (dir.empty() && fs::exists(fs::path(g.out) / "data" / "manifest.csv")) dir = fs::path(g.out) / "data";
  if (dir.empty()) return ExperimentData::generate(cfg);
  log(g, "loading records from " + dir.string());
  return ExperimentData::load(cfg, dir);
}

SuiteTask find_task(const ExperimentConfig& cfg, const std::string& id, double noise) {
  for (const auto& suite : {"expressivity", "scalability"}) {
    for (auto st : suite_tasks(cfg, suite)) {
      if (st.task.id == id) {
        st.task.noise_percent = noise;
        return st;
      }
    }
  }
  std::string known;
  for (const auto& suite : {"expressivity", "scalability"}) {
    for (const auto& st : suite_tasks(cfg, suite)) known += " " + st.task.id;
  }
  throw std::invalid_argument("unknown task '" + id + "'; configured tasks:" + known);
}

ModelState backbone_for(const ExperimentConfig& cfg, const ExperimentData& data, const Globals& g,
                        const std::string& checkpoint) {
  fs::path path = checkpoint;
  if (path.empty()) path = fs::path(g.out) / "backbone.ckpt";
  if (fs::exists(path)) {
    log(g, "using backbone " + path.string());
    return load_checkpoint(path);
  }
  if (!checkpoint.empty()) throw std::invalid_argument("checkpoint " + checkpoint + " does not exist");
  log(g, "no backbone at " + path.string() + ", pretraining one");
  auto outcome = pretrain_backbone(cfg, data, [&](const std::string& s) { log(g, s); });
  save_checkpoint(outcome.model, path);
  return outcome.model;
}

std::string history_csv(const TrainHistory& h) {
  std::ostringstream os;
  os << "epoch,train_loss,train_accuracy,val_loss,val_accuracy\n";
  for (std::size_t e = 0; e < h.train_loss.size(); ++e) {
    os << e + 1 << "," << format_real(h.train_loss[e]) << "," << format_real(h.train_accuracy[e]) << ",";
    os << (e < h.val_loss.size() ? format_real(h.val_loss[e]) : "") << ",";
    os << (e < h.val_accuracy.size() ? format_real(h.val_accuracy[e]) : "") << "\n";
  }
  return os.str();
}

std::string confusion_text(const EvalResult& r, const std::vector<std::string>& names) {
  std::ostringstream os;
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.2f", r.accuracy);
  os << "accuracy " << buf << "% (" << r.correct << "/" << r.total << ")\n";
  os << "confusion (rows true, columns predicted):\n";
  for (std::size_t i = 0; i < r.confusion.size(); ++i) {
    os << "  " << (i < names.size() ? names[i] : std::to_string(i)) << ":";
    for (auto v : r.confusion[i]) os << " " << v;
    os << "\n";
  }
  return os.str();
}

int cmd_generate(const Globals& g) {
  const auto cfg = load_config(g);
  const auto entries = generate_entries(cfg);
  const auto dir = fs::path(g.out) / "data";
  write_dataset(dir, entries);
  write_text(fs::path(g.out) / "config.json", experiment_config_json(cfg));
  std::cout << "wrote " << entries.size() << " records to " << dir.string() << "\n";
  return 0;
}

int cmd_pretrain(const Globals& g, const std::string& data_dir) {
  const auto cfg = load_config(g);
  const auto data = load_data(cfg, g, data_dir);
  const auto started = std::chrono::steady_clock::now();
  auto outcome = pretrain_backbone(cfg, data, [&](const std::string& s) { log(g, s); });
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  const auto path = fs::path(g.out) / "backbone.ckpt";
  fs::create_directories(g.out);
  save_checkpoint(outcome.model, path);
  write_text(fs::path(g.out) / "pretrain_history.csv", history_csv(outcome.history));
  char buf[128];
  std::snprintf(buf, sizeof buf, "backbone test accuracy %.2f%%, %zu epochs, %.1f s", outcome.test_accuracy,
                outcome.history.epochs_run(), secs);
  std::cout << buf << "\nsaved " << path.string() << " (" << outcome.model.fingerprint().str() << ")\n";
  return 0;
}

int cmd_finetune(const Globals& g, const std::string& data_dir, const std::string& checkpoint,
                 const std::string& task_id, double fraction, std::uint64_t cell, double noise) {
  const auto cfg = load_config(g);
  const auto data = load_data(cfg, g, data_dir);
  const auto backbone = backbone_for(cfg, data, g, checkpoint);
  const auto st = find_task(cfg, task_id, noise);
  const auto split = data.task_split(st.task);
  FineTuneConfig ft = cfg.finetune;
  ft.labeled_fraction = fraction;
  ft.target_num_classes = st.task.classes.size();
  ft.train.seed = cell_seed(cell, st.task.id, 0);
  auto [model, history] = finetune(prepare_finetune(backbone, ft), st.task, split, ft);
  if (!frozen_layers_intact(backbone, model, ft.trainable_prefix)) {
    throw std::logic_error("frozen conv layers changed during fine-tuning");
  }
  const auto path = fs::path(g.out) / ("finetuned_" + st.task.id + ".ckpt");
  fs::create_directories(g.out);
  save_checkpoint(model, path);
  write_text(fs::path(g.out) / ("finetune_" + st.task.id + "_history.csv"), history_csv(history));
  std::cout << "task " << st.task.id << ": " << history.epochs_run() << " epochs, saved " << path.string() << "\n";
  std::cout << confusion_text(evaluate(model, split.test), model.label_map);
  return 0;
}

int cmd_evaluate(const Globals& g, const std::string& data_dir, const std::string& checkpoint,
                 const std::string& task_id, double noise) {
  const auto cfg = load_config(g);
  const auto data = load_data(cfg, g, data_dir);
  if (checkpoint.empty()) throw std::invalid_argument("evaluate needs --checkpoint");
  const auto model = load_checkpoint(checkpoint);
  DatasetSplit split;
  if (task_id.empty()) {
    split = data.backbone_split();
  } else {
    split = data.task_split(find_task(cfg, task_id, noise).task);
  }
  if (!model.label_map.empty() && model.label_map != split.label_map) {
    throw std::invalid_argument("checkpoint classes do not match the " +
                                (task_id.empty() ? std::string("backbone") : "task " + task_id) + " classes");
  }
  std::cout << confusion_text(evaluate(model, split.test), split.label_map);
  return 0;
}

int cmd_suite(const Globals& g, const std::string& data_dir, const std::string& checkpoint, const std::string& which) {
  const auto cfg = load_config(g);
  const auto data = load_data(cfg, g, data_dir);
  const auto backbone = backbone_for(cfg, data, g, checkpoint);
  std::vector<std::string> suites;
  if (which == "all") suites = kSuiteNames;
  else suites = {which};
  bool all_intact = true;
  for (const auto& name : suites) {
    const auto started = std::chrono::steady_clock::now();
    const auto report = run_suite(cfg, data, backbone, name, g.jobs, [&](const std::string& s) { log(g, s); });
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    write_report_files(report, g.out);
    std::cout << render_table(report);
    char buf[96];
    std::snprintf(buf, sizeof buf, "%s finished in %.1f s\n\n", name.c_str(), secs);
    std::cout << buf;
    for (const auto& row : report.rows) {
      for (const auto& c : row.cells) all_intact = all_intact && (!c.ok || c.frozen_intact);
    }
  }
  if (!all_intact) {
    std::cerr << "error: a fine-tuning run modified frozen layers\n";
    return 3;
  }
  return 0;
}

int cmd_gradcheck(const Globals& g, double step, double tolerance) {
  Architecture arch;
  arch.conv_layers = 2;
  arch.channels = 8;
  arch.num_classes = 3;
  const std::uint64_t seed = g.seed.value_or(7);
  const auto model = build_model(arch, seed);
  std::mt19937_64 rng(mix_seed(seed, 0x4752414443ULL));
  std::normal_distribution<double> normal(0.0, 1.0);
  WindowedSample sample;
  sample.values.resize(32);
  for (auto& v : sample.values) v = normal(rng);
  sample.label = 1;
  const auto report = finite_difference_check(model, sample, step, tolerance);
  for (const auto& l : report.layers) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "%-8s params %6zu  max rel err %.3e  max abs err %.3e  %s", l.layer.c_str(),
                  l.parameters, l.max_rel_error, l.max_abs_error, l.passed ? "ok" : "FAIL");
    std::cout << buf << "\n";
  }
  std::cout << (report.passed ? "gradcheck passed" : "gradcheck FAILED") << "\n";
  return report.passed ? 0 : 1;
}

int cmd_render(const Globals& g, const std::string& results) {
  const auto report = read_results_jsonl(slurp(results));
  std::cout << render_table(report);
  if (g.out != "-") {
    fs::create_directories(g.out);
    write_text(fs::path(g.out) / (report.suite + ".txt"), render_table(report));
    write_text(fs::path(g.out) / (report.suite + ".csv"), render_csv(report, false));
    write_text(fs::path(g.out) / (report.suite + "_std.csv"), render_csv(report, true));
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"motorfm: pretrain a 1D-CNN fault-diagnosis backbone and fine-tune it on small labeled fractions"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  std::uint64_t seed = 0;
  app.add_option("--config", g.config, "Experiment config JSON, or 'default'");
  auto* seed_opt = app.add_option("--seed", seed, "Override the config's base seed");
  app.add_option("--out", g.out, "Output directory");
  app.add_option("--jobs", g.jobs, "Worker threads for independent fine-tuning cells")->check(CLI::PositiveNumber);
  app.add_flag("-q,--quiet", g.quiet, "No progress output on stderr");

  std::string data_dir, checkpoint, task_id, suite = "all", results;
  double fraction = 0.15, noise = 0.0, step = 1e-4, tolerance = 1e-3;
  std::uint64_t cell = 1;

  auto* generate = app.add_subcommand("generate", "Generate synthetic records into <out>/data");
  auto* pretrain = app.add_subcommand("pretrain", "Pretrain the backbone, write <out>/backbone.ckpt");
  pretrain->add_option("--data", data_dir, "Dataset directory written by 'generate'");
  auto* finetune = app.add_subcommand("finetune", "Fine-tune the backbone on one task and fraction");
  finetune->add_option("--data", data_dir, "Dataset directory written by 'generate'");
  finetune->add_option("--checkpoint", checkpoint, "Backbone checkpoint (default <out>/backbone.ckpt)");
  finetune->add_option("--task", task_id, "Task id from the config")->required();
  finetune->add_option("--fraction", fraction, "Labeled fraction in (0, 1]");
  finetune->add_option("--cell-seed", cell, "Fine-tuning seed");
  finetune->add_option("--noise", noise, "Noise percent injected into the task records");
  auto* evaluate = app.add_subcommand("evaluate", "Accuracy and confusion matrix of a checkpoint on a test split");
  evaluate->add_option("--data", data_dir, "Dataset directory written by 'generate'");
  evaluate->add_option("--checkpoint", checkpoint, "Checkpoint to evaluate")->required();
  evaluate->add_option("--task", task_id, "Task id; omit for the backbone's own test split");
  evaluate->add_option("--noise", noise, "Noise percent injected into the task records");
  auto* suite_cmd = app.add_subcommand("suite", "Run expressivity, scalability and/or generalizability");
  suite_cmd->add_option("suite", suite, "Suite name or 'all'")
      ->check(CLI::IsMember({"all", "expressivity", "scalability", "generalizability"}));
  suite_cmd->add_option("--data", data_dir, "Dataset directory written by 'generate'");
  suite_cmd->add_option("--checkpoint", checkpoint, "Backbone checkpoint (default <out>/backbone.ckpt)");
  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference check on a reduced 2-conv model");
  gradcheck->add_option("--step", step, "Central-difference step");
  gradcheck->add_option("--tolerance", tolerance, "Maximum relative error");
  auto* render = app.add_subcommand("render", "Render tables from a results .jsonl file");
  render->add_option("results", results, "Results file written by 'suite'")->required();

  CLI11_PARSE(app, argc, argv);
  if (seed_opt->count()) g.seed = seed;

  try {
    if (*generate) return cmd_generate(g);
    if (*pretrain) return cmd_pretrain(g, data_dir);
    if (*finetune) return cmd_finetune(g, data_dir, checkpoint, task_id, fraction, cell, noise);
    if (*evaluate) return cmd_evaluate(g, data_dir, checkpoint, task_id, noise);
    if (*suite_cmd) return cmd_suite(g, data_dir, checkpoint, suite);
    if (*gradcheck) return cmd_gradcheck(g, step, tolerance);
    if (*render) return cmd_render(g, results);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
