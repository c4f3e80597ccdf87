#include "motorfm/experiment.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "motorfm/evaluate.hpp"
#include "motorfm/rng.hpp"

namespace motorfm {

namespace {

using nlohmann::json;

// ---------------------------------------------------------------------------
// JSON <-> config

json speed_json(const SpeedProfile& s) {
  if (s.variable()) return {{"speed_ramp", {s.rpm, *s.end_rpm}}};
  return {{"speed_rpm", s.rpm}};
}

SpeedProfile speed_from(const json& j, const std::string& where) {
  if (j.contains("speed_ramp")) {
    const auto r = j.at("speed_ramp").get<std::vector<double>>();
    if (r.size() != 2) throw std::invalid_argument(where + ": speed_ramp needs [start, end]");
    return SpeedProfile::ramp(r[0], r[1]);
  }
  if (j.contains("speed_rpm")) return SpeedProfile::constant(j.at("speed_rpm").get<double>());
  throw std::invalid_argument(where + ": speed_rpm or speed_ramp required");
}

json train_json(const TrainConfig& t) {
  json j = {{"learning_rate", t.adam.learning_rate},
            {"beta1", t.adam.beta1},
            {"beta2", t.adam.beta2},
            {"epsilon", t.adam.epsilon},
            {"batch_size", t.batch_size},
            {"epochs", t.epochs},
            {"patience", t.patience},
            {"max_validation", t.max_validation}};
  if (t.clip_norm) j["clip_norm"] = *t.clip_norm;
  return j;
}

TrainConfig train_from(const json& j, TrainConfig t) {
  t.adam.learning_rate = j.value("learning_rate", t.adam.learning_rate);
  t.adam.beta1 = j.value("beta1", t.adam.beta1);
  t.adam.beta2 = j.value("beta2", t.adam.beta2);
  t.adam.epsilon = j.value("epsilon", t.adam.epsilon);
  t.batch_size = j.value("batch_size", t.batch_size);
  t.epochs = j.value("epochs", t.epochs);
  t.patience = j.value("patience", t.patience);
  t.max_validation = j.value("max_validation", t.max_validation);
  if (j.contains("clip_norm")) t.clip_norm = j.at("clip_norm").get<double>();
  return t;
}

json machine_json(const MachineSpec& m) {
  return {{"sample_rate_hz", m.sample_rate_hz},
          {"n_rolling_elements", m.n_rolling_elements},
          {"resonance_hz", m.resonance_hz},
          {"resonance_decay", m.resonance_decay},
          {"base_noise_std", m.base_noise_std},
          {"duration_s", m.duration_s},
          {"shaft_amplitude", m.shaft_amplitude},
          {"load_gain", m.load_gain},
          {"impulse_gain", m.impulse_gain},
          {"inner_race_modulation", m.inner_race_modulation}};
}

MachineSpec machine_from(const std::string& id, const json& j) {
  MachineSpec m;
  m.machine_id = id;
  m.sample_rate_hz = j.at("sample_rate_hz").get<double>();
  m.n_rolling_elements = j.at("n_rolling_elements").get<std::size_t>();
  m.resonance_hz = j.at("resonance_hz").get<double>();
  m.resonance_decay = j.at("resonance_decay").get<double>();
  m.base_noise_std = j.at("base_noise_std").get<double>();
  m.duration_s = j.at("duration_s").get<double>();
  m.shaft_amplitude = j.value("shaft_amplitude", m.shaft_amplitude);
  m.load_gain = j.value("load_gain", m.load_gain);
  m.impulse_gain = j.value("impulse_gain", m.impulse_gain);
  m.inner_race_modulation = j.value("inner_race_modulation", m.inner_race_modulation);
  return m;
}

json task_json(const SuiteTask& st) {
  json classes = json::array();
  for (const auto& c : st.task.classes) {
    json faults = json::array();
    for (auto f : c.faults) faults.push_back(std::string(to_string(f)));
    classes.push_back({{"name", c.name}, {"faults", faults}});
  }
  return {{"id", st.task.id},
          {"group", st.group},
          {"description", st.task.description},
          {"machine", st.task.machine_id},
          {"cohorts", st.task.cohorts},
          {"classes", classes}};
}

SuiteTask task_from(const json& j) {
  SuiteTask st;
  st.task.id = j.at("id").get<std::string>();
  st.group = j.value("group", std::string{});
  st.task.description = j.value("description", std::string{});
  st.task.machine_id = j.at("machine").get<std::string>();
  st.task.cohorts = j.at("cohorts").get<std::vector<std::string>>();
  for (const auto& c : j.at("classes")) {
    TaskClass tc;
    tc.name = c.at("name").get<std::string>();
    for (const auto& f : c.at("faults")) tc.faults.push_back(parse_fault_class(f.get<std::string>()));
    st.task.classes.push_back(std::move(tc));
  }
  return st;
}

std::string regime_of(const SpeedProfile& s) { return s.variable() ? "variable" : "constant"; }

std::string backbone_label(const SignalRecord& r, BackboneLabels mode) {
  if (mode == BackboneLabels::merged) return std::string(to_string(r.fault_class));
  return regime_of(r.speed) + "/" + std::string(to_string(r.fault_class));
}

}  // namespace

// ---------------------------------------------------------------------------

std::string experiment_config_json(const ExperimentConfig& c) {
  json machines = json::object();
  for (const auto& [id, m] : c.machines) machines[id] = machine_json(m);
  json cohorts = json::array();
  for (const auto& co : c.cohorts) {
    json classes = json::array();
    for (const auto& p : co.classes) {
      json cj = {{"fault", std::string(to_string(p.fault_class))}};
      if (p.fault_class != FaultClass::healthy) cj["severity"] = {p.severity_min, p.severity_max};
      classes.push_back(cj);
    }
    json cj = {{"name", co.name},
               {"machine", co.machine},
               {"loads", co.loads},
               {"records_per_class", co.records_per_class},
               {"classes", classes}};
    cj.update(speed_json(co.speed));
    cohorts.push_back(cj);
  }
  json expressivity = json::array();
  for (const auto& t : c.expressivity) expressivity.push_back(task_json(t));
  json scalability = json::array();
  for (const auto& t : c.scalability) scalability.push_back(task_json(t));

  json j = {
      {"seed", c.seed},
      {"window_len", c.window_len},
      {"hop", c.hop},
      {"split", {{"train", c.split.train}, {"validation", c.split.validation}, {"test", c.split.test}}},
      {"machines", machines},
      {"cohorts", cohorts},
      {"backbone",
       {{"cohorts", c.backbone.cohorts},
        {"labels", c.backbone.labels == BackboneLabels::merged ? "merged" : "by_regime"},
        {"train", train_json(c.backbone.train)}}},
      {"finetune",
       {{"trainable_prefix", c.finetune.trainable_prefix},
        {"head_hidden", c.finetune.head_hidden},
        {"head_warmup_steps", c.finetune.head_warmup_steps},
        {"head_warmup_lr", c.finetune.head_warmup_lr},
        {"train", train_json(c.finetune.train)}}},
      {"fractions", c.fractions},
      {"seeds", c.seeds},
      {"noise_percent", c.noise_percent},
      {"suites", {{"expressivity", expressivity}, {"scalability", scalability}}},
  };
  return j.dump(2) + "\n";
}

ExperimentConfig parse_experiment_config(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("config: invalid JSON: ") + e.what());
  }
  static const std::set<std::string> kKeys{"seed",     "window_len", "hop",       "split",         "machines",
                                           "cohorts",  "backbone",   "finetune",  "fractions",     "seeds",
                                           "noise_percent", "suites"};
  for (const auto& [key, _] : j.items()) {
    if (!kKeys.count(key)) throw std::invalid_argument("config: unknown key '" + key + "'");
  }
  ExperimentConfig c;
  try {
    c.seed = j.value("seed", c.seed);
    c.window_len = j.value("window_len", c.window_len);
    c.hop = j.value("hop", c.hop);
    if (j.contains("split")) {
      const auto& s = j.at("split");
      c.split = {s.at("train").get<double>(), s.at("validation").get<double>(), s.at("test").get<double>()};
    }
    for (const auto& [id, m] : j.at("machines").items()) c.machines[id] = machine_from(id, m);
    for (const auto& co : j.at("cohorts")) {
      CohortSpec cs;
      cs.name = co.at("name").get<std::string>();
      cs.machine = co.at("machine").get<std::string>();
      cs.speed = speed_from(co, "cohort " + cs.name);
      cs.loads = co.value("loads", std::vector<double>{});
      cs.records_per_class = co.at("records_per_class").get<std::size_t>();
      for (const auto& p : co.at("classes")) {
        ClassPlan plan;
        plan.fault_class = parse_fault_class(p.at("fault").get<std::string>());
        if (p.contains("severity")) {
          const auto r = p.at("severity").get<std::vector<double>>();
          if (r.size() != 2) throw std::invalid_argument("cohort " + cs.name + ": severity needs [min, max]");
          plan.severity_min = r[0];
          plan.severity_max = r[1];
        }
        cs.classes.push_back(plan);
      }
      c.cohorts.push_back(std::move(cs));
    }
    const auto& b = j.at("backbone");
    c.backbone.cohorts = b.at("cohorts").get<std::vector<std::string>>();
    const auto labels = b.value("labels", std::string("by_regime"));
    if (labels == "merged") c.backbone.labels = BackboneLabels::merged;
    else if (labels == "by_regime") c.backbone.labels = BackboneLabels::by_regime;
    else throw std::invalid_argument("config: backbone.labels must be by_regime or merged");
    c.backbone.train = train_from(b.value("train", json::object()), c.backbone.train);
    if (j.contains("finetune")) {
      const auto& f = j.at("finetune");
      c.finetune.trainable_prefix = f.value("trainable_prefix", c.finetune.trainable_prefix);
      c.finetune.head_hidden = f.value("head_hidden", c.finetune.head_hidden);
      c.finetune.head_warmup_steps = f.value("head_warmup_steps", c.finetune.head_warmup_steps);
      c.finetune.head_warmup_lr = f.value("head_warmup_lr", c.finetune.head_warmup_lr);
      c.finetune.train = train_from(f.value("train", json::object()), c.finetune.train);
    }
    c.fractions = j.value("fractions", c.fractions);
    c.seeds = j.value("seeds", c.seeds);
    c.noise_percent = j.value("noise_percent", c.noise_percent);
    if (j.contains("suites")) {
      const auto& s = j.at("suites");
      for (const auto& t : s.value("expressivity", json::array())) c.expressivity.push_back(task_from(t));
      for (const auto& t : s.value("scalability", json::array())) c.scalability.push_back(task_from(t));
    }
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("config: ") + e.what());
  }
  c.validate();
  return c;
}

void ExperimentConfig::validate() const {
  if (window_len == 0 || hop == 0) throw std::invalid_argument("config: window_len and hop must be positive");
  if (fractions.empty()) throw std::invalid_argument("config: no fractions");
  for (std::size_t i = 0; i < fractions.size(); ++i) {
    if (!(fractions[i] > 0.0 && fractions[i] <= 1.0)) throw std::invalid_argument("config: fractions must lie in (0, 1]");
    if (i > 0 && !(fractions[i] > fractions[i - 1])) throw std::invalid_argument("config: fractions must be sorted ascending");
  }
  if (seeds.empty()) throw std::invalid_argument("config: no seeds");
  if (!(noise_percent >= 0.0)) throw std::invalid_argument("config: noise_percent must be >= 0");
  std::set<std::string> cohort_names;
  for (const auto& co : cohorts) {
    if (!cohort_names.insert(co.name).second) throw std::invalid_argument("config: duplicate cohort " + co.name);
    const auto m = machines.find(co.machine);
    if (m == machines.end()) throw std::invalid_argument("config: cohort " + co.name + " references unknown machine " + co.machine);
    MachineSpec spec = m->second;
    spec.shaft_speed = co.speed;
    spec.validate();
    if (co.classes.empty()) throw std::invalid_argument("config: cohort " + co.name + " has no classes");
    for (const auto& p : co.classes) FaultSignature{p.fault_class, p.fault_class == FaultClass::healthy ? 0.0 : p.severity_max}.validate();
    if (co.records_per_class < 3) throw std::invalid_argument("config: cohort " + co.name + " needs >= 3 records per class");
  }
  for (const auto& name : backbone.cohorts) {
    if (!cohort_names.count(name)) throw std::invalid_argument("config: backbone references unknown cohort " + name);
  }
  backbone.train.validate();
  finetune.train.validate();
  if (finetune.trainable_prefix > kBackboneConvLayers) throw std::invalid_argument("config: trainable_prefix > 15");
  std::set<std::string> task_ids;
  for (const auto* list : {&expressivity, &scalability}) {
    for (const auto& st : *list) {
      st.task.validate();
      if (!machines.count(st.task.machine_id)) {
        throw std::invalid_argument("config: task " + st.task.id + " references unknown machine " + st.task.machine_id);
      }
      for (const auto& co : st.task.cohorts) {
        if (!cohort_names.count(co)) throw std::invalid_argument("config: task " + st.task.id + " references unknown cohort " + co);
      }
      if (!task_ids.insert(st.task.id).second) throw std::invalid_argument("config: duplicate task id " + st.task.id);
    }
  }
}

std::string ExperimentConfig::hash() const {
  std::ostringstream os;
  os << std::hex << hash_string(experiment_config_json(*this));
  return os.str();
}

ExperimentConfig load_experiment_config(const std::string& path_or_default) {
  if (path_or_default.empty() || path_or_default == "default") return default_experiment_config();
  std::ifstream in(path_or_default, std::ios::binary);
  if (!in) throw std::invalid_argument("config: cannot open " + path_or_default);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_experiment_config(ss.str());
}

std::vector<SuiteTask> suite_tasks(const ExperimentConfig& config, const std::string& suite) {
  if (suite == "expressivity") return config.expressivity;
  if (suite == "scalability") return config.scalability;
  if (suite == "generalizability") {
    auto tasks = config.expressivity;
    for (auto& t : tasks) t.task.noise_percent = config.noise_percent;
    return tasks;
  }
  throw std::invalid_argument("unknown suite '" + suite + "' (expected expressivity, scalability or generalizability)");
}

// ---------------------------------------------------------------------------
// Data

std::vector<DatasetEntry> generate_entries(const ExperimentConfig& config) {
  std::vector<DatasetEntry> entries;
  for (const auto& co : config.cohorts) {
    MachineSpec spec = config.machines.at(co.machine);
    spec.shaft_speed = co.speed;
    auto records = gen_machine_dataset(spec, co.classes, co.records_per_class, mix_seed(config.seed, hash_string(co.name)),
                                       co.loads, co.name + "_");
    for (auto& r : records) entries.push_back({co.name, std::move(r)});
  }
  return entries;
}

ExperimentData::ExperimentData(const ExperimentConfig& config, std::vector<DatasetEntry> entries)
    : config_(&config), entries_(std::move(entries)) {
  std::vector<std::string> strata;
  strata.reserve(entries_.size());
  for (const auto& e : entries_) strata.push_back(e.cohort + "|" + std::string(to_string(e.record.fault_class)));
  tags_ = assign_splits(strata, config.split, mix_seed(config.seed, 0x53504c4954ULL));
}

ExperimentData ExperimentData::generate(const ExperimentConfig& config) {
  return ExperimentData(config, generate_entries(config));
}

ExperimentData ExperimentData::load(const ExperimentConfig& config, const std::filesystem::path& dir) {
  return ExperimentData(config, read_dataset(dir));
}

std::vector<WindowedSample> ExperimentData::windows_of(std::size_t index, int label, double noise_percent) const {
  const auto& rec = entries_[index].record;
  std::vector<WindowedSample> windows;
  if (noise_percent > 0.0) {
    const auto noisy = add_noise(rec, noise_percent, mix_seed(config_->seed, {hash_string(rec.record_id), 0x4e4f495345ULL}));
    windows = segment(noisy, config_->window_len, config_->hop, label);
  } else {
    windows = segment(rec, config_->window_len, config_->hop, label);
  }
  for (auto& w : windows) normalize_in_place(w.values);
  return windows;
}

namespace {

void append(DatasetSplit& split, SplitTag tag, std::vector<WindowedSample>&& windows) {
  auto& dst = tag == SplitTag::train ? split.train : tag == SplitTag::validation ? split.validation : split.test;
  dst.insert(dst.end(), std::make_move_iterator(windows.begin()), std::make_move_iterator(windows.end()));
}

}  // namespace

DatasetSplit ExperimentData::task_split(const TargetTask& task) const {
  task.validate();
  DatasetSplit split;
  split.label_map = task.class_names();
  std::vector<std::size_t> per_class(task.classes.size(), 0);
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    const auto& e = entries_[i];
    if (std::find(task.cohorts.begin(), task.cohorts.end(), e.cohort) == task.cohorts.end()) continue;
    if (e.record.machine_id != task.machine_id) continue;
    const int label = task.label_for(e.record.fault_class);
    if (label < 0) continue;
    ++per_class[static_cast<std::size_t>(label)];
    append(split, tags_[i], windows_of(i, label, task.noise_percent));
  }
  for (std::size_t c = 0; c < per_class.size(); ++c) {
    if (per_class[c] == 0) {
      std::string cohorts;
      for (const auto& co : task.cohorts) cohorts += (cohorts.empty() ? "" : ",") + co;
      throw std::invalid_argument("task " + task.id + ": no records for class '" + task.classes[c].name +
                                  "' in machine " + task.machine_id + ", cohorts {" + cohorts + "}");
    }
  }
  return split;
}

DatasetSplit ExperimentData::backbone_split() const {
  const auto& spec = config_->backbone;
  std::set<std::string> names;
  std::vector<std::size_t> members;
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    if (std::find(spec.cohorts.begin(), spec.cohorts.end(), entries_[i].cohort) == spec.cohorts.end()) continue;
    members.push_back(i);
    names.insert(backbone_label(entries_[i].record, spec.labels));
  }
  if (members.empty()) throw std::invalid_argument("backbone: no records in the configured cohorts");
  // constant before variable, then fault order
  std::vector<std::string> ordered;
  for (const char* regime : {"constant/", "variable/", ""}) {
    for (const auto& [f, _] : std::initializer_list<std::pair<FaultClass, int>>{{FaultClass::healthy, 0},
                                                                                  {FaultClass::inner_race, 0},
                                                                                  {FaultClass::outer_race, 0},
                                                                                  {FaultClass::ball, 0},
                                                                                  {FaultClass::misalignment, 0},
                                                                                  {FaultClass::unbalance, 0}}) {
      const auto name = std::string(regime) + std::string(to_string(f));
      if (names.count(name)) ordered.push_back(name);
    }
  }
  DatasetSplit split;
  split.label_map = ordered;
  for (auto i : members) {
    const auto name = backbone_label(entries_[i].record, spec.labels);
    append(split, tags_[i], windows_of(i, split.label_of(name), 0.0));
  }
  return split;
}

// ---------------------------------------------------------------------------
// Runs

PretrainOutcome pretrain_backbone(const ExperimentConfig& config, const ExperimentData& data, const ProgressFn& progress) {
  const auto split = data.backbone_split();
  ModelState model = build_backbone(split.num_classes(), mix_seed(config.seed, 0x4241434bULL));
  TrainConfig cfg = config.backbone.train;
  cfg.seed = mix_seed(config.seed, 0x50524554ULL);
  if (progress) {
    progress("pretraining backbone: " + std::to_string(split.num_classes()) + " classes, " +
             std::to_string(split.train.size()) + " train / " + std::to_string(split.validation.size()) + " val windows");
  }
  auto [trained, history] = pretrain(std::move(model), split, cfg, [&](const EpochStats& s) {
    if (!progress) return;
    std::ostringstream os;
    os.setf(std::ios::fixed);
    os.precision(4);
    os << "  epoch " << s.epoch + 1 << " loss " << s.train_loss;
    os.precision(2);
    os << " train_acc " << s.train_accuracy << " val_acc " << s.val_accuracy;
    progress(os.str());
  });
  PretrainOutcome out{std::move(trained), std::move(history), 0.0};
  out.test_accuracy = evaluate(out.model, split.test).accuracy;
  return out;
}

EvalReport run_suite(const ExperimentConfig& config, const ExperimentData& data, const ModelState& backbone,
                     const std::string& suite, std::size_t jobs, const ProgressFn& progress) {
  const auto tasks = suite_tasks(config, suite);
  EvalReport report;
  report.suite = suite;
  report.fractions = config.fractions;
  report.seeds = config.seeds;
  report.noise_percent = suite == "generalizability" ? config.noise_percent : 0.0;
  report.config_hash = config.hash();
  report.backbone_fingerprint = backbone.fingerprint().str();
  for (const auto& st : tasks) {
    ReportRow row;
    row.group = st.group;
    row.task_id = st.task.id;
    row.label = st.task.description.empty() ? st.task.id : st.task.description;
    try {
      const auto split = data.task_split(st.task);
      auto result = run_target_task(backbone, st.task, split, config.fractions, config.seeds, config.finetune, jobs);
      row.columns = std::move(result.columns);
      row.cells = std::move(result.cells);
    } catch (const std::exception& e) {
      // the whole row failed before any cell ran
      for (double f : config.fractions) {
        for (auto seed : config.seeds) {
          CellResult c;
          c.task_id = st.task.id;
          c.fraction = f;
          c.seed = seed;
          c.error = e.what();
          row.cells.push_back(c);
        }
        FractionSummary s;
        s.fraction = f;
        s.failed_cells = config.seeds.size();
        row.columns.push_back(s);
      }
    }
    if (progress) {
      std::ostringstream os;
      os.setf(std::ios::fixed);
      os.precision(2);
      os << suite << " " << row.task_id << ":";
      for (const auto& c : row.columns) os << " " << (c.ok_cells ? c.mean : -1.0);
      progress(os.str());
    }
    report.rows.push_back(std::move(row));
  }
  return report;
}

}  // namespace motorfm
