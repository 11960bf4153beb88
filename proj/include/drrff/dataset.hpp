#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "drrff/signal_sim.hpp"

namespace drrff {

inline constexpr int kManifestFormatVersion = 1;

struct ManifestRecord {
  int device_id = 0;
  std::string channel_tag;
  std::uint64_t byte_offset = 0;

  bool operator==(const ManifestRecord&) const = default;
};

// Index of a `.iq` file: little-endian float32, interleaved re/im, records back to back.
struct DatasetManifest {
  std::vector<ManifestRecord> records;
  int signal_length = kSignalLength;
  int num_devices = 0;
  std::uint64_t seed = 0;
  int format_version = kManifestFormatVersion;

  std::uint64_t record_bytes() const { return static_cast<std::uint64_t>(signal_length) * 2 * sizeof(float); }
  // Offsets strictly increasing and aligned to record_bytes(); device count consistent.
  void validate() const;

  bool operator==(const DatasetManifest&) const = default;
};

struct Dataset {
  std::string name;
  DatasetManifest manifest;
  std::vector<ComplexSignal> signals;

  std::size_t size() const { return signals.size(); }
  int device_id(std::size_t i) const { return manifest.records[i].device_id; }
  std::vector<int> device_ids() const;
};

// Channel recipe for one split. Each record gets a fresh draw unless
// per_device_static is set, in which case one realization per device (its
// "position") is reused for every record of that device.
struct SplitChannel {
  ChannelKind kind = ChannelKind::kAwgn;
  double snr_db_min = 20.0;
  double snr_db_max = 30.0;
  double rician_k = 0.0;
  int num_taps = 1;
  double pdp_decay = 1.0;
  bool per_device_static = false;
  // Per-record flat gain: phase U(0, 2pi), magnitude U(gain_min, gain_max).
  bool flat_gain_jitter = false;
  double gain_min = 0.9;
  double gain_max = 1.1;
  std::string tag;
};

enum class DeviceGroup { kKnown, kUnknown };

struct SplitConfig {
  std::string name;
  DeviceGroup devices = DeviceGroup::kKnown;
  int per_device = 100;
  SplitChannel channel;
};

struct DatasetConfig {
  int num_devices = 8;          // known (training) devices, ids 0..K-1
  int num_unknown_devices = 5;  // held-out devices, ids K..K+U-1
  double sample_rate = kSampleRate;
  DeviceDistribution distribution;
  // Explicit known-device profiles; drawn from `distribution` when empty.
  std::vector<DeviceProfile> profiles;
  std::vector<SplitConfig> splits;

  static DatasetConfig desk_default();
  const SplitConfig& split(const std::string& name) const;
};

std::vector<DeviceProfile> device_population(const DatasetConfig& cfg, std::uint64_t seed);

// Deterministic in (cfg, split, seed); record r draws from its own stream.
Dataset generate_split(const DatasetConfig& cfg, const SplitConfig& split, std::uint64_t seed);

// Writes <dir>/<name>.iq and <dir>/<name>.manifest.json.
void write_dataset(const Dataset& ds, const std::filesystem::path& dir);
// Accepts a split directory (containing one manifest) or a manifest path.
Dataset read_dataset(const std::filesystem::path& path);

// Generates every split of cfg into <out>/<split>/.
std::vector<Dataset> gen_dataset(const DatasetConfig& cfg, std::uint64_t seed, const std::filesystem::path& out);

// Complex values are [re, im] pairs; explicit profiles are optional.
nlohmann::json dataset_config_to_json(const DatasetConfig& cfg);
// Missing keys keep the defaults of DatasetConfig; a present "splits" array replaces them all.
DatasetConfig dataset_config_from_json(const nlohmann::json& j);

std::string manifest_to_json(const DatasetManifest& m);
DatasetManifest manifest_from_json(const std::string& text);

}  // namespace drrff
