#include "motorfm/signal.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>

#include "motorfm/rng.hpp"

namespace motorfm {

namespace {

constexpr std::array<std::pair<FaultClass, std::string_view>, 6> kFaultNames{{
    {FaultClass::healthy, "healthy"},
    {FaultClass::inner_race, "inner_race"},
    {FaultClass::outer_race, "outer_race"},
    {FaultClass::ball, "ball"},
    {FaultClass::misalignment, "misalignment"},
    {FaultClass::unbalance, "unbalance"},
}};

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

}  // namespace

std::string_view to_string(FaultClass fault) {
  for (const auto& [f, name] : kFaultNames) {
    if (f == fault) return name;
  }
  return "unknown";
}

FaultClass parse_fault_class(std::string_view name) {
  for (const auto& [f, n] : kFaultNames) {
    if (n == name) return f;
  }
  throw std::invalid_argument("unknown fault class '" + std::string(name) + "'");
}

bool is_bearing_fault(FaultClass fault) {
  return fault == FaultClass::inner_race || fault == FaultClass::outer_race || fault == FaultClass::ball;
}

void SignalRecord::validate() const {
  if (!(sample_rate_hz > 0.0)) throw std::invalid_argument("record " + record_id + ": sample_rate_hz must be positive");
  if (samples.empty()) throw std::invalid_argument("record " + record_id + ": no samples");
  for (double v : samples) {
    if (!std::isfinite(v)) throw std::invalid_argument("record " + record_id + ": non-finite sample");
  }
}

int DatasetSplit::label_of(std::string_view name) const {
  for (std::size_t i = 0; i < label_map.size(); ++i) {
    if (label_map[i] == name) return static_cast<int>(i);
  }
  throw std::invalid_argument("label '" + std::string(name) + "' not in label map");
}

Moments moments(const std::vector<double>& values) {
  if (values.empty()) return {};
  const double n = static_cast<double>(values.size());
  const double mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  return {mean, std::sqrt(ss / n)};
}

std::vector<WindowedSample> segment(const SignalRecord& record, std::size_t window_len, std::size_t hop, int label) {
  if (window_len == 0 || hop == 0) throw std::invalid_argument("segment: window_len and hop must be positive");
  const auto length = record.samples.size();
  if (window_len > length) {
    throw std::invalid_argument("segment: window_len " + std::to_string(window_len) + " exceeds signal length " +
                                std::to_string(length) + " of record " + record.record_id);
  }
  const std::size_t count = (length - window_len) / hop + 1;
  std::vector<WindowedSample> out;
  out.reserve(count);
  for (std::size_t w = 0; w < count; ++w) {
    const auto start = record.samples.begin() + static_cast<std::ptrdiff_t>(w * hop);
    out.push_back(WindowedSample{std::vector<double>(start, start + static_cast<std::ptrdiff_t>(window_len)), label,
                                 SampleOrigin{record.machine_id, record.record_id, w * hop}});
  }
  return out;
}

void normalize_in_place(std::vector<double>& values) {
  const auto m = moments(values);
  if (!(m.stddev > 1e-12 * std::max(1.0, std::abs(m.mean)))) {
    std::fill(values.begin(), values.end(), 0.0);
    return;
  }
  for (auto& v : values) v = (v - m.mean) / m.stddev;
}

WindowedSample normalize(WindowedSample sample) {
  normalize_in_place(sample.values);
  return sample;
}

SignalRecord add_noise(const SignalRecord& record, double percent, std::uint64_t seed) {
  if (!(percent >= 0.0)) throw std::invalid_argument("add_noise: percent must be non-negative");
  SignalRecord out = record;
  if (percent == 0.0) return out;
  const double sigma = percent / 100.0 * moments(record.samples).stddev;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, sigma);
  for (auto& v : out.samples) v += noise(rng);
  return out;
}

std::vector<WindowedSample> stratified_fraction(const DatasetSplit& split, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction <= 1.0)) {
    throw std::invalid_argument("stratified_fraction: fraction must lie in (0, 1], got " + format_real(fraction));
  }
  std::vector<std::vector<std::size_t>> by_class(split.num_classes());
  for (std::size_t i = 0; i < split.train.size(); ++i) {
    const int label = split.train[i].label;
    if (label < 0 || static_cast<std::size_t>(label) >= by_class.size()) {
      throw std::invalid_argument("stratified_fraction: label " + std::to_string(label) + " outside label map");
    }
    by_class[static_cast<std::size_t>(label)].push_back(i);
  }
  std::vector<char> keep(split.train.size(), 0);
  for (std::size_t c = 0; c < by_class.size(); ++c) {
    auto& idx = by_class[c];
    if (idx.empty()) {
      throw std::invalid_argument("stratified_fraction: class '" + split.label_map[c] + "' has no training samples");
    }
    const auto want = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::llround(fraction * static_cast<double>(idx.size()))));
    std::mt19937_64 rng(mix_seed(seed, c));
    std::shuffle(idx.begin(), idx.end(), rng);
    for (std::size_t k = 0; k < std::min(want, idx.size()); ++k) keep[idx[k]] = 1;
  }
  std::vector<WindowedSample> out;
  for (std::size_t i = 0; i < split.train.size(); ++i) {
    if (keep[i]) out.push_back(split.train[i]);
  }
  return out;
}

std::vector<WindowedSample> thin_per_class(std::span<const WindowedSample> samples, std::size_t num_classes,
                                           std::size_t cap) {
  if (cap == 0 || samples.size() <= cap) return {samples.begin(), samples.end()};
  std::vector<std::vector<std::size_t>> by_class(num_classes);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const int label = samples[i].label;
    if (label < 0 || static_cast<std::size_t>(label) >= num_classes) {
      throw std::invalid_argument("thin_per_class: label " + std::to_string(label) + " outside [0, " +
                                  std::to_string(num_classes) + ")");
    }
    by_class[static_cast<std::size_t>(label)].push_back(i);
  }
  std::vector<char> keep(samples.size(), 0);
  const double share = static_cast<double>(cap) / static_cast<double>(samples.size());
  for (const auto& idx : by_class) {
    if (idx.empty()) continue;
    const auto want = std::max<std::size_t>(1, static_cast<std::size_t>(share * static_cast<double>(idx.size())));
    for (std::size_t k = 0; k < want; ++k) keep[idx[k * idx.size() / want]] = 1;
  }
  std::vector<WindowedSample> out;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (keep[i]) out.push_back(samples[i]);
  }
  return out;
}

std::vector<SplitTag> assign_splits(const std::vector<std::string>& strata, const SplitRatios& ratios,
                                    std::uint64_t seed) {
  if (!(ratios.train > 0 && ratios.validation > 0 && ratios.test > 0)) {
    throw std::invalid_argument("assign_splits: all split ratios must be positive");
  }
  const double total = ratios.train + ratios.validation + ratios.test;
  std::map<std::string, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < strata.size(); ++i) groups[strata[i]].push_back(i);

  std::vector<SplitTag> tags(strata.size(), SplitTag::train);
  for (auto& [name, idx] : groups) {
    const auto n = idx.size();
    if (n < 3) {
      throw std::invalid_argument("assign_splits: stratum '" + name + "' has " + std::to_string(n) +
                                  " records; at least 3 are needed");
    }
    const auto share = [&](double r) {
      return std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(r / total * static_cast<double>(n))));
    };
    const auto n_val = share(ratios.validation);
    const auto n_test = share(ratios.test);
    if (n_val + n_test >= n) {
      throw std::invalid_argument("assign_splits: stratum '" + name + "' too small for the requested ratios");
    }
    std::mt19937_64 rng(mix_seed(seed, hash_string(name)));
    std::shuffle(idx.begin(), idx.end(), rng);
    for (std::size_t k = 0; k < n; ++k) {
      SplitTag tag = SplitTag::train;
      if (k >= n - n_test) tag = SplitTag::test;
      else if (k >= n - n_test - n_val) tag = SplitTag::validation;
      tags[idx[k]] = tag;
    }
  }
  return tags;
}

std::string format_real(double value) {
  std::array<char, 32> buf{};
  const auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), value);
  if (ec != std::errc{}) throw std::runtime_error("format_real: conversion failed");
  return std::string(buf.data(), ptr);
}

double parse_real(std::string_view text) {
  const auto t = trim(text);
  double value = 0.0;
  const auto* first = t.data();
  const auto* last = t.data() + t.size();
  if (!t.empty() && *first == '+') ++first;
  const auto [ptr, ec] = std::from_chars(first, last, value);
  if (ec != std::errc{} || ptr != last) throw std::invalid_argument("not a real number: '" + t + "'");
  return value;
}

void write_record(const std::filesystem::path& csv_path, const SignalRecord& record) {
  record.validate();
  {
    std::ofstream out(csv_path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + csv_path.string());
    out << "# sample_rate_hz=" << format_real(record.sample_rate_hz) << '\n';
    for (double v : record.samples) out << format_real(v) << '\n';
  }
  auto meta_path = csv_path;
  meta_path.replace_extension(".meta");
  std::ofstream meta(meta_path, std::ios::binary);
  if (!meta) throw std::runtime_error("cannot write " + meta_path.string());
  meta << "machine_id=" << record.machine_id << '\n';
  meta << "fault_class=" << to_string(record.fault_class) << '\n';
  meta << "severity=" << format_real(record.severity) << '\n';
  if (record.speed.variable()) {
    meta << "speed_ramp=" << format_real(record.speed.rpm) << ',' << format_real(*record.speed.end_rpm) << '\n';
  } else {
    meta << "speed_rpm=" << format_real(record.speed.rpm) << '\n';
  }
  meta << "load=" << format_real(record.load) << '\n';
}

SignalRecord read_record(const std::filesystem::path& csv_path) {
  SignalRecord rec;
  rec.record_id = csv_path.stem().string();

  std::ifstream in(csv_path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + csv_path.string());
  std::string line;
  if (!std::getline(in, line)) throw std::invalid_argument(csv_path.string() + ": empty file");
  constexpr std::string_view kHeader = "# sample_rate_hz=";
  if (line.rfind(kHeader, 0) != 0) {
    throw std::invalid_argument(csv_path.string() + ": first line must be '# sample_rate_hz=<real>'");
  }
  rec.sample_rate_hz = parse_real(std::string_view(line).substr(kHeader.size()));
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    try {
      rec.samples.push_back(parse_real(line));
    } catch (const std::invalid_argument&) {
      throw std::invalid_argument(csv_path.string() + ":" + std::to_string(line_no) + ": bad amplitude '" + line +
                                  "'");
    }
  }

  auto meta_path = csv_path;
  meta_path.replace_extension(".meta");
  std::ifstream meta(meta_path, std::ios::binary);
  if (!meta) throw std::runtime_error("missing metadata sidecar " + meta_path.string());
  bool have_speed = false;
  bool have_class = false;
  while (std::getline(meta, line)) {
    const auto t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) throw std::invalid_argument(meta_path.string() + ": expected key=value, got '" + t + "'");
    const auto key = trim(std::string_view(t).substr(0, eq));
    const auto val = trim(std::string_view(t).substr(eq + 1));
    if (key == "machine_id") {
      rec.machine_id = val;
    } else if (key == "fault_class") {
      rec.fault_class = parse_fault_class(val);
      have_class = true;
    } else if (key == "severity") {
      rec.severity = parse_real(val);
    } else if (key == "speed_rpm") {
      rec.speed = SpeedProfile::constant(parse_real(val));
      have_speed = true;
    } else if (key == "speed_ramp") {
      const auto comma = val.find(',');
      if (comma == std::string::npos) throw std::invalid_argument(meta_path.string() + ": speed_ramp needs 'start,end'");
      rec.speed = SpeedProfile::ramp(parse_real(std::string_view(val).substr(0, comma)),
                                     parse_real(std::string_view(val).substr(comma + 1)));
      have_speed = true;
    } else if (key == "load") {
      rec.load = parse_real(val);
    } else {
      throw std::invalid_argument(meta_path.string() + ": unknown key '" + key + "'");
    }
  }
  if (!have_class || !have_speed || rec.machine_id.empty()) {
    throw std::invalid_argument(meta_path.string() + ": machine_id, fault_class and a speed key are required");
  }
  rec.validate();
  return rec;
}

}  // namespace motorfm
