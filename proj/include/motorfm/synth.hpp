#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "motorfm/signal.hpp"

namespace motorfm {

/// Virtual machine used by the synthetic bench.
struct MachineSpec {
  std::string machine_id;
  double sample_rate_hz = 25600.0;
  SpeedProfile shaft_speed = SpeedProfile::constant(1800.0);
  std::size_t n_rolling_elements = 9;
  double resonance_hz = 3000.0;
  double resonance_decay = 800.0;  // 1/s
  double base_noise_std = 0.05;
  double duration_s = 1.0;
  double load = 0.0;
  /// Amplitude of the healthy 1x shaft component.
  double shaft_amplitude = 1.0;
  /// Relative change of the shaft amplitude per unit load.
  double load_gain = 0.0;
  /// Peak amplitude of a bearing impulse per unit severity.
  double impulse_gain = 2.0;
  /// Depth of the 1x amplitude modulation on inner-race impulses.
  double inner_race_modulation = 0.5;

  void validate() const;
};

struct FaultSignature {
  FaultClass fault_class = FaultClass::healthy;
  double severity = 0.0;

  void validate() const;
};

/// Geometry-free defect rates: outer 0.4 n f_r, inner 0.6 n f_r, ball 0.23 n f_r;
/// unbalance f_r, misalignment 2 f_r, healthy 0.
double characteristic_frequency(FaultClass fault, std::size_t n_rolling_elements, double shaft_hz);

/// Fault-only part of a record: zero for healthy, linear in severity otherwise.
std::vector<double> fault_component(const MachineSpec& spec, const FaultSignature& fault, std::uint64_t seed);

/// Background noise + shaft tone + fault component.
SignalRecord gen_record(const MachineSpec& spec, const FaultSignature& fault, std::uint64_t seed,
                        std::string record_id = {});

struct ClassPlan {
  FaultClass fault_class = FaultClass::healthy;
  double severity_min = 0.0;
  double severity_max = 0.0;
};

/// `per_class` records for each plan entry; record seeds derive from (seed,
/// class index, record index). `loads`, when given, are cycled over records.
std::vector<SignalRecord> gen_machine_dataset(const MachineSpec& spec, std::span<const ClassPlan> classes,
                                              std::size_t per_class, std::uint64_t seed,
                                              std::span<const double> loads = {}, const std::string& id_prefix = {});

/// A record plus the generation group it belongs to.
struct DatasetEntry {
  std::string cohort;
  SignalRecord record;
};

// On disk: `<dir>/<record_id>.csv` + `.meta` per record and `<dir>/manifest.csv`
// with columns record_id,cohort,machine_id,fault_class,severity,speed,load,file.
void write_dataset(const std::filesystem::path& dir, std::span<const DatasetEntry> entries);
std::vector<DatasetEntry> read_dataset(const std::filesystem::path& dir);

}  // namespace motorfm
