#include <stdexcept>
#include <algorithm>
#include <cmath>
#include <complex>
#include <map>
#include <numbers>
#include <set>

#include "doctest.h"
#include "motorfm/experiment.hpp"
#include "motorfm/synth.hpp"

using namespace motorfm;

namespace {

// Single-bin DFT magnitude, scaled so a unit sinusoid reads 1.
double tone_amplitude(const std::vector<double>& x, double freq, double fs) {
  std::complex<double> acc = 0.0;
  const double w = 2.0 * std::numbers::pi * freq / fs;
  for (std::size_t i = 0; i < x.size(); ++i) acc += x[i] * std::polar(1.0, -w * static_cast<double>(i));
  return 2.0 * std::abs(acc) / static_cast<double>(x.size());
}

std::size_t fft_peak_bin(const std::vector<double>& x, std::size_t max_bin) {
  std::size_t best = 1;
  double best_mag = -1.0;
  for (std::size_t k = 1; k <= max_bin; ++k) {
    const double f = static_cast<double>(k) / static_cast<double>(x.size());
    const double m = tone_amplitude(x, f, 1.0);
    if (m > best_mag) {
      best_mag = m;
      best = k;
    }
  }
  return best;
}

std::vector<double> minus_tone(std::vector<double> x, double freq, double fs) {
  std::complex<double> acc = 0.0;
  const double w = 2.0 * std::numbers::pi * freq / fs;
  for (std::size_t i = 0; i < x.size(); ++i) acc += x[i] * std::polar(1.0, -w * static_cast<double>(i));
  acc *= 2.0 / static_cast<double>(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) x[i] -= (acc * std::polar(1.0, w * static_cast<double>(i))).real();
  return x;
}

// Rule-based classifier for constant-speed records of a known machine:
// envelope lines at the bearing rates first, then the 2x and 1x tone levels.
FaultClass spectral_oracle(const SignalRecord& r, const MachineSpec& m) {
  const double fr = r.speed.rpm / 60.0;
  const double fs = r.sample_rate_hz;
  const auto residual = minus_tone(minus_tone(r.samples, fr, fs), 2.0 * fr, fs);
  std::vector<double> env(residual.size());
  double mean = 0.0;
  for (std::size_t i = 0; i < env.size(); ++i) mean += env[i] = residual[i] * residual[i];
  mean /= static_cast<double>(env.size());
  for (auto& v : env) v -= mean;
  const double n = static_cast<double>(m.n_rolling_elements);
  const double outer = tone_amplitude(env, 0.4 * n * fr, fs) / mean;
  const double inner = tone_amplitude(env, 0.6 * n * fr, fs) / mean;
  if (std::max(outer, inner) > 0.3) return outer > inner ? FaultClass::outer_race : FaultClass::inner_race;
  const double baseline = m.shaft_amplitude * (1.0 + m.load_gain * r.load);
  if (tone_amplitude(r.samples, 2.0 * fr, fs) > 0.25 * baseline) return FaultClass::misalignment;
  if (tone_amplitude(r.samples, fr, fs) > 1.25 * baseline) return FaultClass::unbalance;
  return FaultClass::healthy;
}

MachineSpec quiet_machine() {
  MachineSpec m;
  m.machine_id = "Q";
  m.sample_rate_hz = 25600.0;
  m.shaft_speed = SpeedProfile::constant(1800.0);
  m.n_rolling_elements = 8;
  m.duration_s = 1.0;
  return m;
}

}  // namespace

TEST_CASE("pure unbalance tone peaks at the shaft bin") {
  auto m = quiet_machine();
  m.base_noise_std = 0.0;
  m.shaft_amplitude = 0.0;
  m.sample_rate_hz = 2048.0;
  m.resonance_hz = 500.0;
  m.duration_s = 0.5;
  const auto r = gen_record(m, {FaultClass::unbalance, 1.0}, 4);
  const double N = static_cast<double>(r.samples.size());
  const auto expected = static_cast<std::size_t>(std::llround(30.0 * N / m.sample_rate_hz));
  CHECK(fft_peak_bin(r.samples, r.samples.size() / 2) == expected);
}

TEST_CASE("outer race impulses repeat at fs / 96") {
  auto m = quiet_machine();
  m.shaft_amplitude = 0.0;
  const auto r = gen_record(m, {FaultClass::outer_race, 1.0}, 8);
  CHECK(characteristic_frequency(FaultClass::outer_race, 8, 30.0) == doctest::Approx(96.0));
  const auto& x = r.samples;
  std::size_t best = 0;
  double best_val = -1e300;
  for (std::size_t lag = 100; lag <= 400; ++lag) {
    double acc = 0.0;
    for (std::size_t i = 0; i + lag < x.size(); ++i) acc += x[i] * x[i + lag];
    if (acc > best_val) {
      best_val = acc;
      best = lag;
    }
  }
  CHECK(std::abs(static_cast<double>(best) - 25600.0 / 96.0) <= 2.0);
}

TEST_CASE("ramped inner race impulses tighten as the shaft speeds up") {
  auto m = quiet_machine();
  m.shaft_amplitude = 0.0;
  m.base_noise_std = 0.0;
  m.shaft_speed = SpeedProfile::ramp(680.0, 2460.0);
  m.inner_race_modulation = 0.0;
  const auto x = fault_component(m, {FaultClass::inner_race, 1.0}, 3);
  // strike onsets: the envelope jumps from ~0 to a large value
  std::vector<double> onsets;
  for (std::size_t i = 1; i < x.size(); ++i) {
    if (std::abs(x[i]) > 0.5 && std::abs(x[i - 1]) < 0.5) {
      if (onsets.empty() || static_cast<double>(i) - onsets.back() > 100.0) onsets.push_back(static_cast<double>(i));
    }
  }
  REQUIRE(onsets.size() > 20);
  const double first_gap = onsets[1] - onsets[0];
  const double last_gap = onsets.back() - onsets[onsets.size() - 2];
  CHECK(first_gap > 2.5 * last_gap);
}

TEST_CASE("generation is deterministic per seed") {
  const auto m = quiet_machine();
  const auto a = gen_record(m, {FaultClass::inner_race, 0.8}, 17);
  const auto b = gen_record(m, {FaultClass::inner_race, 0.8}, 17);
  const auto c = gen_record(m, {FaultClass::inner_race, 0.8}, 18);
  CHECK(a.samples == b.samples);
  CHECK(a.samples != c.samples);
}

TEST_CASE("fault energy grows with severity") {
  const auto m = quiet_machine();
  for (auto f : {FaultClass::inner_race, FaultClass::outer_race, FaultClass::ball, FaultClass::misalignment,
                 FaultClass::unbalance}) {
    double prev = 0.0;
    for (double s : {0.1, 0.3, 0.9, 2.0}) {
      double e = 0.0;
      for (double v : fault_component(m, {f, s}, 5)) e += v * v;
      CHECK(e > prev);
      prev = e;
    }
  }
  for (double v : fault_component(m, {FaultClass::healthy, 0.0}, 5)) REQUIRE(v == 0.0);
  CHECK_THROWS_AS(fault_component(m, {FaultClass::healthy, 0.5}, 5), std::invalid_argument);
  CHECK_THROWS_AS(fault_component(m, {FaultClass::ball, 0.0}, 5), std::invalid_argument);
}

TEST_CASE("unrepresentable resonance is rejected") {
  auto m = quiet_machine();
  m.resonance_hz = 13000.0;
  CHECK_THROWS_AS(gen_record(m, {FaultClass::outer_race, 1.0}, 1), std::invalid_argument);
}

TEST_CASE("balanced machine datasets") {
  const std::vector<ClassPlan> plans{
      {FaultClass::healthy, 0.0, 0.0},      {FaultClass::inner_race, 0.5, 1.0}, {FaultClass::outer_race, 0.5, 1.0},
      {FaultClass::ball, 0.5, 1.0},         {FaultClass::misalignment, 0.5, 1.0}, {FaultClass::unbalance, 0.5, 1.0},
      {FaultClass::inner_race, 1.5, 2.0},   {FaultClass::outer_race, 1.5, 1.5}};
  auto m = quiet_machine();
  m.duration_s = 0.05;
  const std::vector<double> loads{0.0, 1.0};
  const auto recs = gen_machine_dataset(m, plans, 10, 99, loads, "m_");
  REQUIRE(recs.size() == 80);
  std::set<std::string> ids;
  std::map<FaultClass, int> per_fault;
  for (std::size_t i = 0; i < recs.size(); ++i) {
    ids.insert(recs[i].record_id);
    per_fault[recs[i].fault_class]++;
    const auto& plan = plans[i / 10];
    CHECK(recs[i].fault_class == plan.fault_class);
    CHECK(recs[i].severity >= plan.severity_min);
    CHECK(recs[i].severity <= plan.severity_max);
    CHECK(recs[i].load == loads[(i % 10) % 2]);
  }
  CHECK(per_fault[FaultClass::inner_race] == 20);
  CHECK(per_fault[FaultClass::healthy] == 10);
  CHECK(ids.size() == 80);
  CHECK(recs[0].record_id == "m_healthy_0_000");
  CHECK(recs[79].record_id == "m_outer_race_7_009");
  CHECK_THROWS_AS(gen_machine_dataset(m, {}, 3, 1), std::invalid_argument);
}

TEST_CASE("the spectral oracle recovers the constant-speed labels of the default corpus") {
  const auto cfg = default_experiment_config();
  std::size_t total = 0, correct = 0;
  for (const auto& e : generate_entries(cfg)) {
    const auto& r = e.record;
    if (r.speed.variable()) continue;
    if (r.fault_class == FaultClass::ball) continue;
    const auto& m = cfg.machines.at(r.machine_id);
    ++total;
    const auto guess = spectral_oracle(r, m);
    if (guess == r.fault_class) ++correct;
    else MESSAGE(r.record_id << " read as " << to_string(guess));
  }
  REQUIRE(total > 100);
  CHECK(static_cast<double>(correct) / static_cast<double>(total) >= 0.99);
}

TEST_CASE("the three machines have distinct dominant frequencies") {
  const auto cfg = default_experiment_config();
  std::map<std::string, std::vector<double>> dominant;
  for (const auto& [id, spec] : cfg.machines) {
    auto m = spec;
    m.shaft_speed = SpeedProfile::constant(1800.0);
    m.duration_s = 0.1;
    for (std::uint64_t s = 0; s < 4; ++s) {
      const auto r = gen_record(m, {FaultClass::outer_race, 1.0}, s);
      double best_f = 0.0, best = -1.0;
      for (double f = 500.0; f < m.sample_rate_hz / 2.0; f += 100.0) {
        const double a = tone_amplitude(r.samples, f, m.sample_rate_hz);
        if (a > best) {
          best = a;
          best_f = f;
        }
      }
      dominant[id].push_back(best_f);
    }
  }
  REQUIRE(dominant.size() == 3);
  for (auto a = dominant.begin(); a != dominant.end(); ++a) {
    for (auto b = std::next(a); b != dominant.end(); ++b) {
      const double lo_a = *std::min_element(a->second.begin(), a->second.end());
      const double hi_a = *std::max_element(a->second.begin(), a->second.end());
      const double lo_b = *std::min_element(b->second.begin(), b->second.end());
      const double hi_b = *std::max_element(b->second.begin(), b->second.end());
      CAPTURE(a->first);
      CAPTURE(b->first);
      CHECK((hi_a < lo_b || hi_b < lo_a));
    }
  }
}

TEST_CASE("datasets round trip through the manifest") {
  auto m = quiet_machine();
  m.duration_s = 0.01;
  const std::vector<ClassPlan> plans{{FaultClass::healthy, 0, 0}, {FaultClass::ball, 0.5, 0.5}};
  std::vector<DatasetEntry> entries;
  for (auto& r : gen_machine_dataset(m, plans, 3, 1, {}, "q_")) entries.push_back({"Q_const", r});
  const auto dir = std::filesystem::temp_directory_path() / "motorfm_dataset_test";
  std::filesystem::remove_all(dir);
  write_dataset(dir, entries);
  const auto back = read_dataset(dir);
  REQUIRE(back.size() == entries.size());
  for (std::size_t i = 0; i < back.size(); ++i) {
    CHECK(back[i].cohort == "Q_const");
    CHECK(back[i].record.samples == entries[i].record.samples);
    CHECK(back[i].record.severity == entries[i].record.severity);
  }
  std::filesystem::remove_all(dir);
}
