#include "motorfm/experiment.hpp"

namespace motorfm {

namespace {

MachineSpec machine(std::string id, double fs, std::size_t n, double resonance, double decay, double noise,
                    double duration) {
  MachineSpec m;
  m.machine_id = std::move(id);
  m.sample_rate_hz = fs;
  m.n_rolling_elements = n;
  m.resonance_hz = resonance;
  m.resonance_decay = decay;
  m.base_noise_std = noise;
  m.duration_s = duration;
  m.load_gain = 0.05;
  return m;
}

ClassPlan plan(FaultClass f, double lo = 0.0, double hi = 0.0) { return {f, lo, hi}; }

TaskClass cls(std::string name, std::vector<FaultClass> faults) { return {std::move(name), std::move(faults)}; }

SuiteTask task(std::string group, std::string id, std::string description, std::string machine,
               std::vector<std::string> cohorts, std::vector<TaskClass> classes) {
  SuiteTask st;
  st.group = std::move(group);
  st.task.id = std::move(id);
  st.task.description = std::move(description);
  st.task.machine_id = std::move(machine);
  st.task.cohorts = std::move(cohorts);
  st.task.classes = std::move(classes);
  return st;
}

}  // namespace

ExperimentConfig default_experiment_config() {
  using F = FaultClass;
  ExperimentConfig c;
  c.seed = 7;
  c.window_len = 512;
  c.hop = 512;

  c.machines["A"] = machine("A", 25600.0, 20, 4000.0, 5000.0, 0.30, 0.25);
  c.machines["B"] = machine("B", 50000.0, 16, 9000.0, 12000.0, 0.15, 0.25);
  c.machines["C"] = machine("C", 48000.0, 24, 7000.0, 10000.0, 0.08, 0.25);

  // Constant speeds are high enough that consecutive defect strikes fall
  // inside the network's 31-sample receptive field.
  const double lo = 0.8, hi = 1.2;
  c.cohorts.push_back({"A_const", "A", SpeedProfile::constant(12000.0), {0.0, 2.0, 4.0}, 10,
                       {plan(F::healthy), plan(F::inner_race, lo, hi), plan(F::outer_race, lo, hi),
                        plan(F::misalignment, 1.5, 2.5), plan(F::unbalance, 1.5, 2.5)}});
  c.cohorts.push_back({"A_var", "A", SpeedProfile::ramp(680.0, 2460.0), {0.0, 2.0, 4.0}, 10,
                       {plan(F::healthy), plan(F::inner_race, lo, hi), plan(F::outer_race, lo, hi)}});
  c.cohorts.push_back({"A_size", "A", SpeedProfile::constant(12000.0), {0.0, 2.0, 4.0}, 6,
                       {plan(F::inner_race, 0.3, 1.5), plan(F::outer_race, 0.3, 1.5),
                        plan(F::misalignment, 1.0, 3.0), plan(F::unbalance, 1.2, 3.0)}});
  const std::vector<ClassPlan> bearing{plan(F::healthy), plan(F::inner_race, lo, hi), plan(F::outer_race, lo, hi),
                                       plan(F::ball, lo, hi)};
  const int b_rpm[] = {21000, 28000, 35000};
  for (int rpm : b_rpm) {
    c.cohorts.push_back({"B_" + std::to_string(rpm), "B", SpeedProfile::constant(rpm), {}, 4, bearing});
  }
  const double c_rpm[] = {14400.0, 14200.0, 14000.0, 13840.0};
  for (int load = 0; load < 4; ++load) {
    c.cohorts.push_back({"C_" + std::to_string(load) + "hp", "C", SpeedProfile::constant(c_rpm[load]),
                         {static_cast<double>(load)}, 4, bearing});
  }

  c.backbone.cohorts = {"A_const", "A_var"};
  c.backbone.labels = BackboneLabels::by_regime;
  c.backbone.train.epochs = 40;
  c.backbone.train.batch_size = 32;
  c.backbone.train.patience = 10;
  c.backbone.train.adam.learning_rate = 5e-4;
  c.backbone.train.clip_norm = 1.0;

  c.finetune.trainable_prefix = 3;
  c.finetune.head_warmup_steps = 300;
  c.finetune.head_warmup_lr = 1e-2;
  c.finetune.train.epochs = 4;
  c.finetune.train.batch_size = 8;
  c.finetune.train.patience = 0;
  c.finetune.train.adam.learning_rate = 3e-4;
  c.finetune.train.max_validation = 48;

  const auto healthy = cls("healthy", {F::healthy});
  c.expressivity = {
      task("Task 1", "task1", "Fault detection, constant speed", "A", {"A_const"},
           {healthy, cls("faulty", {F::inner_race, F::outer_race, F::misalignment, F::unbalance})}),
      task("Task 2", "task2", "Fault detection, variable speed", "A", {"A_var"},
           {healthy, cls("faulty", {F::inner_race, F::outer_race})}),
      task("Task 3", "task3", "Bearing vs misalignment vs unbalance, constant speed", "A", {"A_const"},
           {cls("bearing", {F::inner_race, F::outer_race}), cls("misalignment", {F::misalignment}),
            cls("unbalance", {F::unbalance})}),
      task("Task 4", "task4", "Inner vs outer race, constant speed", "A", {"A_const"},
           {cls("inner_race", {F::inner_race}), cls("outer_race", {F::outer_race})}),
      task("Task 5", "task5", "Healthy vs bearing vs misalignment vs unbalance, variable fault size", "A",
           {"A_const", "A_size"},
           {healthy, cls("bearing", {F::inner_race, F::outer_race}), cls("misalignment", {F::misalignment}),
            cls("unbalance", {F::unbalance})}),
      task("Task 6", "task6", "Inner vs outer race, variable fault size", "A", {"A_const", "A_size"},
           {cls("inner_race", {F::inner_race}), cls("outer_race", {F::outer_race})}),
  };
  const std::vector<TaskClass> bearing_classes{healthy, cls("inner_race", {F::inner_race}),
                                               cls("outer_race", {F::outer_race}), cls("ball", {F::ball})};
  for (int rpm : b_rpm) {
    const auto id = "B_" + std::to_string(rpm);
    c.scalability.push_back(task("Machine B", id, std::to_string(rpm) + " RPM", "B", {id}, bearing_classes));
  }
  for (int load = 0; load < 4; ++load) {
    const auto id = "C_" + std::to_string(load) + "hp";
    c.scalability.push_back(task("Machine C", id, std::to_string(load) + " HP", "C", {id}, bearing_classes));
  }
  return c;
}

}  // namespace motorfm
