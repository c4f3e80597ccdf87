#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace motorfm {

enum class FaultClass { healthy, inner_race, outer_race, ball, misalignment, unbalance };

std::string_view to_string(FaultClass fault);
FaultClass parse_fault_class(std::string_view name);
bool is_bearing_fault(FaultClass fault);

/// Shaft speed: constant when `end_rpm` is empty, otherwise a linear ramp
/// from `rpm` to `*end_rpm` over the record.
struct SpeedProfile {
  double rpm = 0.0;
  std::optional<double> end_rpm;

  bool variable() const { return end_rpm.has_value(); }
  static SpeedProfile constant(double rpm) { return {rpm, std::nullopt}; }
  static SpeedProfile ramp(double start, double end) { return {start, end}; }
  friend bool operator==(const SpeedProfile&, const SpeedProfile&) = default;
};

struct SignalRecord {
  std::vector<double> samples;
  double sample_rate_hz = 0.0;
  std::string record_id;
  std::string machine_id;
  FaultClass fault_class = FaultClass::healthy;
  double severity = 0.0;
  SpeedProfile speed;
  double load = 0.0;

  /// Throws if the rate is not positive, samples are empty, or any value is non-finite.
  void validate() const;
};

struct SampleOrigin {
  std::string machine_id;
  std::string record_id;
  std::size_t offset = 0;
  friend bool operator==(const SampleOrigin&, const SampleOrigin&) = default;
};

struct WindowedSample {
  std::vector<double> values;
  int label = 0;
  SampleOrigin origin;
};

/// Train / validation / test collections plus the class names indexed by label.
struct DatasetSplit {
  std::vector<WindowedSample> train;
  std::vector<WindowedSample> validation;
  std::vector<WindowedSample> test;
  std::vector<std::string> label_map;

  std::size_t num_classes() const { return label_map.size(); }
  int label_of(std::string_view name) const;
};

/// Windows at offsets 0, hop, 2*hop, ...; count = floor((L - window_len) / hop) + 1.
std::vector<WindowedSample> segment(const SignalRecord& record, std::size_t window_len, std::size_t hop, int label);

/// Per-window z-score; windows with (numerically) zero spread map to zeros.
WindowedSample normalize(WindowedSample sample);
void normalize_in_place(std::vector<double>& values);

/// Adds i.i.d. Gaussian noise with std = percent/100 * std(samples).
SignalRecord add_noise(const SignalRecord& record, double percent, std::uint64_t seed);

/// Per class, keeps max(1, round(fraction * count)) training samples.
/// Validation and test are not part of the result and are never modified.
std::vector<WindowedSample> stratified_fraction(const DatasetSplit& split, double fraction, std::uint64_t seed);

/// At most `cap` samples, keeping each class's share and taking evenly spaced
/// members of every class so all source records stay represented.
std::vector<WindowedSample> thin_per_class(std::span<const WindowedSample> samples, std::size_t num_classes,
                                           std::size_t cap);

enum class SplitTag { train, validation, test };

struct SplitRatios {
  double train = 0.6;
  double validation = 0.2;
  double test = 0.2;
};

/// Assigns whole records to splits, stratified by `strata[i]`. Every stratum
/// needs at least three records so each split sees it.
std::vector<SplitTag> assign_splits(const std::vector<std::string>& strata, const SplitRatios& ratios,
                                    std::uint64_t seed);

/// Population mean and standard deviation.
struct Moments {
  double mean = 0.0;
  double stddev = 0.0;
};
Moments moments(const std::vector<double>& values);

// Ingestion format: `<id>.csv` holds "# sample_rate_hz=<real>" followed by one
// amplitude per line; `<id>.meta` holds key=value lines for machine_id,
// fault_class, severity, speed_rpm or speed_ramp, and load.
void write_record(const std::filesystem::path& csv_path, const SignalRecord& record);
SignalRecord read_record(const std::filesystem::path& csv_path);

std::string format_real(double value);
double parse_real(std::string_view text);

}  // namespace motorfm
