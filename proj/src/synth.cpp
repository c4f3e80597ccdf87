#include "motorfm/synth.hpp"

#include <cmath>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>
#include <stdexcept>

#include "motorfm/rng.hpp"

namespace motorfm {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;
// Impulses are truncated once the envelope falls below exp(-8).
constexpr double kImpulseSupport = 8.0;

struct Phases {
  double shaft = 0.0;
  double misalignment = 0.0;
  double impulse = 0.0;  // fractional offset of the first defect strike
};

Phases draw_phases(std::uint64_t seed) {
  std::mt19937_64 rng(mix_seed(seed, 1));
  std::uniform_real_distribution<double> angle(0.0, kTwoPi);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  Phases p;
  p.shaft = angle(rng);
  p.misalignment = angle(rng);
  p.impulse = unit(rng);
  return p;
}

/// Shaft angle in radians at time t.
double shaft_angle(const SpeedProfile& speed, double t, double duration) {
  if (!speed.variable()) return kTwoPi * speed.rpm / 60.0 * t;
  const double r0 = speed.rpm;
  const double r1 = *speed.end_rpm;
  return kTwoPi / 60.0 * (r0 * t + (r1 - r0) * t * t / (2.0 * duration));
}

double bearing_coefficient(FaultClass fault) {
  switch (fault) {
    case FaultClass::outer_race:
      return 0.4;
    case FaultClass::inner_race:
      return 0.6;
    case FaultClass::ball:
      return 0.23;
    default:
      return 0.0;
  }
}

std::size_t sample_count(const MachineSpec& spec) {
  return static_cast<std::size_t>(std::llround(spec.duration_s * spec.sample_rate_hz));
}

std::string speed_text(const SpeedProfile& s) {
  if (s.variable()) return format_real(s.rpm) + "->" + format_real(*s.end_rpm);
  return format_real(s.rpm);
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

}  // namespace

void MachineSpec::validate() const {
  if (!(sample_rate_hz > 0.0)) throw std::invalid_argument("machine " + machine_id + ": sample_rate_hz must be positive");
  if (!(resonance_hz > 0.0 && resonance_hz < sample_rate_hz / 2.0)) {
    throw std::invalid_argument("machine " + machine_id + ": resonance " + format_real(resonance_hz) +
                                " Hz is not representable at " + format_real(sample_rate_hz) + " Hz");
  }
  if (!(resonance_decay > 0.0)) throw std::invalid_argument("machine " + machine_id + ": resonance_decay must be positive");
  if (n_rolling_elements == 0) throw std::invalid_argument("machine " + machine_id + ": needs rolling elements");
  if (!(base_noise_std >= 0.0)) throw std::invalid_argument("machine " + machine_id + ": base_noise_std must be >= 0");
  if (!(duration_s > 0.0)) throw std::invalid_argument("machine " + machine_id + ": duration_s must be positive");
  if (!(shaft_speed.rpm > 0.0) || (shaft_speed.variable() && !(*shaft_speed.end_rpm > 0.0))) {
    throw std::invalid_argument("machine " + machine_id + ": shaft speeds must be positive");
  }
}

void FaultSignature::validate() const {
  if (fault_class == FaultClass::healthy && severity != 0.0) {
    throw std::invalid_argument("healthy signature must have severity 0");
  }
  if (fault_class != FaultClass::healthy && !(severity > 0.0)) {
    throw std::invalid_argument(std::string(to_string(fault_class)) + " signature needs severity > 0");
  }
}

double characteristic_frequency(FaultClass fault, std::size_t n_rolling_elements, double shaft_hz) {
  switch (fault) {
    case FaultClass::healthy:
      return 0.0;
    case FaultClass::unbalance:
      return shaft_hz;
    case FaultClass::misalignment:
      return 2.0 * shaft_hz;
    default:
      return bearing_coefficient(fault) * static_cast<double>(n_rolling_elements) * shaft_hz;
  }
}

std::vector<double> fault_component(const MachineSpec& spec, const FaultSignature& fault, std::uint64_t seed) {
  spec.validate();
  fault.validate();
  const std::size_t n = sample_count(spec);
  std::vector<double> out(n, 0.0);
  if (fault.fault_class == FaultClass::healthy) return out;

  const Phases ph = draw_phases(seed);
  const double fs = spec.sample_rate_hz;
  const double duration = static_cast<double>(n) / fs;

  if (fault.fault_class == FaultClass::unbalance || fault.fault_class == FaultClass::misalignment) {
    const double harmonic = fault.fault_class == FaultClass::unbalance ? 1.0 : 2.0;
    const double phase = fault.fault_class == FaultClass::unbalance ? ph.shaft : ph.misalignment;
    for (std::size_t i = 0; i < n; ++i) {
      const double t = static_cast<double>(i) / fs;
      out[i] = fault.severity * std::sin(harmonic * shaft_angle(spec.shaft_speed, t, duration) + phase);
    }
    return out;
  }

  // Bearing defect: one strike each time the defect phase c * n * theta / 2pi
  // passes an integer, so spacing follows the instantaneous shaft speed.
  const double rate = bearing_coefficient(fault.fault_class) * static_cast<double>(spec.n_rolling_elements);
  const auto strikes = [&](double t) { return rate * shaft_angle(spec.shaft_speed, t, duration) / kTwoPi + ph.impulse; };
  const double amplitude = fault.severity * spec.impulse_gain;
  const double omega = kTwoPi * spec.resonance_hz;
  const auto support = static_cast<std::size_t>(std::ceil(kImpulseSupport / spec.resonance_decay * fs));
  const bool modulated = fault.fault_class == FaultClass::inner_race;
  const double depth = spec.inner_race_modulation;

  double prev = strikes(0.0);
  for (std::size_t i = 1; i < n; ++i) {
    const double t = static_cast<double>(i) / fs;
    const double cur = strikes(t);
    if (std::floor(cur) > std::floor(prev)) {
      // linear interpolation of the crossing time inside (t - 1/fs, t]
      const double frac = (std::floor(cur) - prev) / (cur - prev);
      const double t0 = t - (1.0 - frac) / fs;
      double a = amplitude;
      if (modulated) a *= (1.0 - depth / 2.0) + depth / 2.0 * std::cos(shaft_angle(spec.shaft_speed, t0, duration) + ph.shaft);
      for (std::size_t j = i; j < std::min(n, i + support); ++j) {
        const double tau = static_cast<double>(j) / fs - t0;
        out[j] += a * std::exp(-spec.resonance_decay * tau) * std::sin(omega * tau);
      }
    }
    prev = cur;
  }
  return out;
}

SignalRecord gen_record(const MachineSpec& spec, const FaultSignature& fault, std::uint64_t seed, std::string record_id) {
  std::vector<double> samples = fault_component(spec, fault, seed);
  const Phases ph = draw_phases(seed);
  const double fs = spec.sample_rate_hz;
  const double duration = static_cast<double>(samples.size()) / fs;
  const double shaft = spec.shaft_amplitude * (1.0 + spec.load_gain * spec.load);
  std::mt19937_64 rng(mix_seed(seed, 2));
  std::normal_distribution<double> noise(0.0, 1.0);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const double t = static_cast<double>(i) / fs;
    samples[i] += shaft * std::sin(shaft_angle(spec.shaft_speed, t, duration) + ph.shaft);
    samples[i] += spec.base_noise_std * noise(rng);
  }
  SignalRecord rec;
  rec.samples = std::move(samples);
  rec.sample_rate_hz = fs;
  rec.record_id = std::move(record_id);
  rec.machine_id = spec.machine_id;
  rec.fault_class = fault.fault_class;
  rec.severity = fault.severity;
  rec.speed = spec.shaft_speed;
  rec.load = spec.load;
  return rec;
}

std::vector<SignalRecord> gen_machine_dataset(const MachineSpec& spec, std::span<const ClassPlan> classes,
                                              std::size_t per_class, std::uint64_t seed, std::span<const double> loads,
                                              const std::string& id_prefix) {
  if (classes.empty()) throw std::invalid_argument("gen_machine_dataset: class list is empty");
  spec.validate();
  std::vector<SignalRecord> out;
  out.reserve(classes.size() * per_class);
  for (std::size_t c = 0; c < classes.size(); ++c) {
    const auto& plan = classes[c];
    if (plan.severity_max < plan.severity_min) {
      throw std::invalid_argument("gen_machine_dataset: severity range reversed for " +
                                  std::string(to_string(plan.fault_class)));
    }
    for (std::size_t r = 0; r < per_class; ++r) {
      const std::uint64_t rec_seed = mix_seed(seed, {c, r});
      double severity = 0.0;
      if (plan.fault_class != FaultClass::healthy) {
        std::mt19937_64 rng(mix_seed(rec_seed, 7));
        std::uniform_real_distribution<double> dist(plan.severity_min, plan.severity_max);
        severity = plan.severity_min == plan.severity_max ? plan.severity_min : dist(rng);
      }
      MachineSpec s = spec;
      if (!loads.empty()) s.load = loads[r % loads.size()];
      std::ostringstream id;
      id << id_prefix << to_string(plan.fault_class) << '_' << c << '_';
      id.width(3);
      id.fill('0');
      id << r;
      out.push_back(gen_record(s, FaultSignature{plan.fault_class, severity}, rec_seed, id.str()));
    }
  }
  return out;
}

void write_dataset(const std::filesystem::path& dir, std::span<const DatasetEntry> entries) {
  std::filesystem::create_directories(dir);
  std::ofstream manifest(dir / "manifest.csv", std::ios::binary);
  if (!manifest) throw std::runtime_error("cannot write manifest in " + dir.string());
  manifest << "record_id,cohort,machine_id,fault_class,severity,speed,load,file\n";
  for (const auto& e : entries) {
    const auto& r = e.record;
    if (r.record_id.empty()) throw std::invalid_argument("write_dataset: record without id");
    const auto file = r.record_id + ".csv";
    write_record(dir / file, r);
    manifest << r.record_id << ',' << e.cohort << ',' << r.machine_id << ',' << to_string(r.fault_class) << ','
             << format_real(r.severity) << ',' << speed_text(r.speed) << ',' << format_real(r.load) << ',' << file
             << '\n';
  }
}

std::vector<DatasetEntry> read_dataset(const std::filesystem::path& dir) {
  std::ifstream manifest(dir / "manifest.csv", std::ios::binary);
  if (!manifest) throw std::runtime_error("no manifest.csv in " + dir.string());
  std::string line;
  std::getline(manifest, line);
  if (line != "record_id,cohort,machine_id,fault_class,severity,speed,load,file") {
    throw std::invalid_argument(dir.string() + "/manifest.csv: unexpected header");
  }
  std::vector<DatasetEntry> out;
  while (std::getline(manifest, line)) {
    if (line.empty()) continue;
    const auto cells = split_csv_line(line);
    if (cells.size() != 8) throw std::invalid_argument("manifest row has " + std::to_string(cells.size()) + " cells: " + line);
    DatasetEntry e;
    e.cohort = cells[1];
    e.record = read_record(dir / cells[7]);
    if (e.record.record_id != cells[0] || e.record.machine_id != cells[2] ||
        e.record.fault_class != parse_fault_class(cells[3])) {
      throw std::invalid_argument("manifest row disagrees with sidecar for " + cells[0]);
    }
    out.push_back(std::move(e));
  }
  return out;
}

}  // namespace motorfm
