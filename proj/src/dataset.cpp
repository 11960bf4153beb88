#include "drrff/dataset.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <set>

#include "json.hpp"

#include "drrff/error.hpp"

namespace drrff {
namespace {

using json = nlohmann::json;

static_assert(std::endian::native == std::endian::little, "signal files are written in host order");

std::vector<std::complex<double>> position_taps(const SplitChannel& ch, std::uint64_t seed, int device_id) {
  Rng rng(Rng::derive(seed, "position", static_cast<std::uint64_t>(device_id)));
  return draw_fir_taps(ch.num_taps, ch.pdp_decay, ch.rician_k, rng);
}

std::complex<double> position_gain(const SplitChannel& ch, std::uint64_t seed, int device_id) {
  Rng rng(Rng::derive(seed, "position-flat", static_cast<std::uint64_t>(device_id)));
  const double k = ch.rician_k;
  return std::sqrt(k / (k + 1.0)) + std::sqrt(1.0 / (k + 1.0)) * rng.complex_normal(1.0);
}

ComplexSignal realize_record(const ComplexSignal& tx, const SplitChannel& ch, std::uint64_t seed,
                             int device_id, Rng& rng) {
  const double snr = ch.snr_db_min == ch.snr_db_max ? ch.snr_db_min : rng.uniform(ch.snr_db_min, ch.snr_db_max);
  ComplexSignal rx = tx;
  if (ch.per_device_static) {
    switch (ch.kind) {
      case ChannelKind::kAwgn:
        break;
      case ChannelKind::kRicianFlat:
        rx = apply_gain(rx, position_gain(ch, seed, device_id));
        break;
      case ChannelKind::kMultipathFir:
        rx = apply_fir(rx, position_taps(ch, seed, device_id));
        break;
    }
  } else {
    ChannelSpec spec;
    spec.kind = ch.kind;
    spec.snr_db = ChannelSpec::kNoiseless;
    spec.rician_k = ch.rician_k;
    spec.num_taps = ch.num_taps;
    spec.pdp_decay = ch.pdp_decay;
    rx = apply_channel(rx, spec, rng);
  }
  if (ch.flat_gain_jitter) {
    const double mag = rng.uniform(ch.gain_min, ch.gain_max);
    const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
    rx = apply_gain(rx, std::polar(mag, phase));
  }
  rx = add_awgn(rx, snr, rng);
  // Round to the stored precision so in-memory and on-disk datasets agree.
  for (auto& v : rx.samples) v = {static_cast<float>(v.real()), static_cast<float>(v.imag())};
  return rx;
}

std::filesystem::path find_manifest(const std::filesystem::path& path) {
  namespace fs = std::filesystem;
  if (fs::is_regular_file(path)) return path;
  if (!fs::is_directory(path)) throw IoError("no dataset at " + path.string());
  std::vector<fs::path> found;
  for (const auto& entry : fs::directory_iterator(path)) {
    const std::string name = entry.path().filename().string();
    if (name.size() > 14 && name.ends_with(".manifest.json")) found.push_back(entry.path());
  }
  if (found.size() != 1) {
    throw IoError("expected exactly one *.manifest.json in " + path.string() + ", found " +
                  std::to_string(found.size()));
  }
  return found.front();
}

}  // namespace

void DatasetManifest::validate() const {
  if (format_version != kManifestFormatVersion) {
    throw ConfigError("unsupported manifest format_version " + std::to_string(format_version));
  }
  if (signal_length <= 0) throw ConfigError("signal_length must be positive");
  const std::uint64_t rb = record_bytes();
  std::set<int> devices;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    if (r.device_id < 0) throw ConfigError("negative device_id in manifest");
    if (r.byte_offset % rb != 0) throw ConfigError("record offset not aligned to record size");
    if (i > 0 && r.byte_offset <= records[i - 1].byte_offset) {
      throw ConfigError("record offsets must be strictly increasing");
    }
    devices.insert(r.device_id);
  }
  if (static_cast<int>(devices.size()) != num_devices) {
    throw ConfigError("manifest num_devices " + std::to_string(num_devices) + " but records cover " +
                      std::to_string(devices.size()));
  }
}

std::vector<int> Dataset::device_ids() const {
  std::vector<int> ids;
  ids.reserve(manifest.records.size());
  for (const auto& r : manifest.records) ids.push_back(r.device_id);
  return ids;
}

DatasetConfig DatasetConfig::desk_default() {
  DatasetConfig cfg;
  SplitChannel los;  // flat gain jitter plus AWGN at 20-30 dB
  los.flat_gain_jitter = true;
  los.tag = "los";

  SplitChannel fir5;
  fir5.kind = ChannelKind::kMultipathFir;
  fir5.num_taps = 5;
  fir5.pdp_decay = 0.5;
  fir5.tag = "fir5";

  cfg.splits = {
      {"train", DeviceGroup::kKnown, 200, los},
      {"val", DeviceGroup::kKnown, 50, los},
      {"test_known", DeviceGroup::kKnown, 50, los},
      {"test_unknown_multipath", DeviceGroup::kUnknown, 100, fir5},
  };
  return cfg;
}

const SplitConfig& DatasetConfig::split(const std::string& name) const {
  for (const auto& s : splits) {
    if (s.name == name) return s;
  }
  throw ConfigError("no split named '" + name + "'");
}

std::vector<DeviceProfile> device_population(const DatasetConfig& cfg, std::uint64_t seed) {
  if (cfg.num_devices < 1 || cfg.num_unknown_devices < 0) throw ConfigError("invalid device counts");
  std::vector<DeviceProfile> all;
  if (!cfg.profiles.empty()) {
    if (static_cast<int>(cfg.profiles.size()) != cfg.num_devices) {
      throw ConfigError("explicit profiles must list exactly num_devices entries");
    }
    all = cfg.profiles;
  } else {
    for (int id = 0; id < cfg.num_devices; ++id) {
      Rng rng(Rng::derive(seed, "device", static_cast<std::uint64_t>(id)));
      all.push_back(draw_device_profile(id, cfg.distribution, rng));
    }
  }
  for (int u = 0; u < cfg.num_unknown_devices; ++u) {
    const int id = cfg.num_devices + u;
    Rng rng(Rng::derive(seed, "device", static_cast<std::uint64_t>(id)));
    all.push_back(draw_device_profile(id, cfg.distribution, rng));
  }
  std::set<int> ids;
  for (const auto& p : all) {
    p.validate();
    if (!ids.insert(p.device_id).second) throw ConfigError("duplicate device_id " + std::to_string(p.device_id));
  }
  return all;
}

Dataset generate_split(const DatasetConfig& cfg, const SplitConfig& split, std::uint64_t seed) {
  if (split.per_device < 1) throw ConfigError("per_device must be >= 1 in split " + split.name);
  const auto population = device_population(cfg, seed);
  std::vector<DeviceProfile> members;
  for (const auto& p : population) {
    const bool known = &p - population.data() < cfg.num_devices;
    if ((split.devices == DeviceGroup::kKnown) == known) members.push_back(p);
  }
  if (members.empty()) throw ConfigError("split " + split.name + " has no devices");

  const ComplexSignal preamble = gen_preamble(cfg.sample_rate);
  Dataset ds;
  ds.name = split.name;
  ds.manifest.signal_length = static_cast<int>(preamble.size());
  ds.manifest.num_devices = static_cast<int>(members.size());
  ds.manifest.seed = seed;
  const std::uint64_t rb = ds.manifest.record_bytes();
  const std::string tag = split.channel.tag.empty() ? to_string(split.channel.kind) : split.channel.tag;

  std::uint64_t index = 0;
  for (const auto& device : members) {
    const ComplexSignal tx = apply_device(preamble, device);
    for (int r = 0; r < split.per_device; ++r, ++index) {
      Rng rng(Rng::derive(seed, "record:" + split.name, index));
      ds.signals.push_back(realize_record(tx, split.channel, seed, device.device_id, rng));
      ds.manifest.records.push_back({device.device_id, tag, index * rb});
    }
  }
  return ds;
}

namespace {

json complex_to_json(std::complex<double> c) { return json::array({c.real(), c.imag()}); }

std::complex<double> complex_from_json(const json& j) {
  if (!j.is_array() || j.size() != 2) throw ConfigError("complex value must be [re, im]");
  return {j[0].get<double>(), j[1].get<double>()};
}

json channel_to_json(const SplitChannel& c) {
  return json{{"kind", to_string(c.kind)},
              {"snr_db_min", c.snr_db_min},
              {"snr_db_max", c.snr_db_max},
              {"rician_k", c.rician_k},
              {"num_taps", c.num_taps},
              {"pdp_decay", c.pdp_decay},
              {"per_device_static", c.per_device_static},
              {"flat_gain_jitter", c.flat_gain_jitter},
              {"gain_min", c.gain_min},
              {"gain_max", c.gain_max},
              {"tag", c.tag}};
}

SplitChannel channel_from_json(const json& j) {
  SplitChannel c;
  c.kind = parse_channel_kind(j.value("kind", to_string(c.kind)));
  c.snr_db_min = j.value("snr_db_min", c.snr_db_min);
  c.snr_db_max = j.value("snr_db_max", c.snr_db_max);
  c.rician_k = j.value("rician_k", c.rician_k);
  c.num_taps = j.value("num_taps", c.num_taps);
  c.pdp_decay = j.value("pdp_decay", c.pdp_decay);
  c.per_device_static = j.value("per_device_static", c.per_device_static);
  c.flat_gain_jitter = j.value("flat_gain_jitter", c.flat_gain_jitter);
  c.gain_min = j.value("gain_min", c.gain_min);
  c.gain_max = j.value("gain_max", c.gain_max);
  c.tag = j.value("tag", c.tag);
  return c;
}

}  // namespace

json dataset_config_to_json(const DatasetConfig& cfg) {
  const auto& d = cfg.distribution;
  json profiles = json::array();
  for (const auto& p : cfg.profiles) {
    profiles.push_back({{"device_id", p.device_id},
                        {"iq_gain_mismatch", p.iq_gain_mismatch},
                        {"iq_phase_mismatch", p.iq_phase_mismatch},
                        {"cfo", p.cfo},
                        {"dc_offset", complex_to_json(p.dc_offset)},
                        {"pa_a1", complex_to_json(p.pa_a1)},
                        {"pa_a3", complex_to_json(p.pa_a3)}});
  }
  json splits = json::array();
  for (const auto& s : cfg.splits) {
    splits.push_back({{"name", s.name},
                      {"devices", s.devices == DeviceGroup::kKnown ? "known" : "unknown"},
                      {"per_device", s.per_device},
                      {"channel", channel_to_json(s.channel)}});
  }
  return json{{"num_devices", cfg.num_devices},
              {"num_unknown_devices", cfg.num_unknown_devices},
              {"sample_rate", cfg.sample_rate},
              {"distribution",
               {{"iq_gain_std", d.iq_gain_std},
                {"iq_phase_std_deg", d.iq_phase_std_deg},
                {"cfo_max_hz", d.cfo_max_hz},
                {"pa_a3_min", d.pa_a3_min},
                {"pa_a3_max", d.pa_a3_max},
                {"dc_max", d.dc_max}}},
              {"profiles", profiles},
              {"splits", splits}};
}

DatasetConfig dataset_config_from_json(const json& j) {
  DatasetConfig cfg = DatasetConfig::desk_default();
  try {
    cfg.num_devices = j.value("num_devices", cfg.num_devices);
    cfg.num_unknown_devices = j.value("num_unknown_devices", cfg.num_unknown_devices);
    cfg.sample_rate = j.value("sample_rate", cfg.sample_rate);
    if (j.contains("distribution")) {
      const json& d = j.at("distribution");
      auto& o = cfg.distribution;
      o.iq_gain_std = d.value("iq_gain_std", o.iq_gain_std);
      o.iq_phase_std_deg = d.value("iq_phase_std_deg", o.iq_phase_std_deg);
      o.cfo_max_hz = d.value("cfo_max_hz", o.cfo_max_hz);
      o.pa_a3_min = d.value("pa_a3_min", o.pa_a3_min);
      o.pa_a3_max = d.value("pa_a3_max", o.pa_a3_max);
      o.dc_max = d.value("dc_max", o.dc_max);
    }
    if (j.contains("profiles")) {
      cfg.profiles.clear();
      for (const json& p : j.at("profiles")) {
        DeviceProfile d;
        d.device_id = p.value("device_id", static_cast<int>(cfg.profiles.size()));
        d.iq_gain_mismatch = p.value("iq_gain_mismatch", d.iq_gain_mismatch);
        d.iq_phase_mismatch = p.value("iq_phase_mismatch", d.iq_phase_mismatch);
        d.cfo = p.value("cfo", d.cfo);
        if (p.contains("dc_offset")) d.dc_offset = complex_from_json(p.at("dc_offset"));
        if (p.contains("pa_a1")) d.pa_a1 = complex_from_json(p.at("pa_a1"));
        if (p.contains("pa_a3")) d.pa_a3 = complex_from_json(p.at("pa_a3"));
        d.validate();
        cfg.profiles.push_back(d);
      }
    }
    if (j.contains("splits")) {
      cfg.splits.clear();
      for (const json& s : j.at("splits")) {
        SplitConfig sc;
        sc.name = s.at("name").get<std::string>();
        const std::string group = s.value("devices", std::string("known"));
        if (group != "known" && group != "unknown") throw ConfigError("split devices must be 'known' or 'unknown'");
        sc.devices = group == "known" ? DeviceGroup::kKnown : DeviceGroup::kUnknown;
        sc.per_device = s.value("per_device", sc.per_device);
        if (s.contains("channel")) sc.channel = channel_from_json(s.at("channel"));
        cfg.splits.push_back(sc);
      }
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("invalid dataset config: ") + e.what());
  }
  return cfg;
}

std::string manifest_to_json(const DatasetManifest& m) {
  json records = json::array();
  for (const auto& r : m.records) {
    records.push_back({{"device_id", r.device_id}, {"channel_tag", r.channel_tag}, {"byte_offset", r.byte_offset}});
  }
  json j = {{"records", records},
            {"signal_length", m.signal_length},
            {"num_devices", m.num_devices},
            {"seed", m.seed},
            {"format_version", m.format_version}};
  return j.dump(1) + "\n";
}

DatasetManifest manifest_from_json(const std::string& text) {
  DatasetManifest m;
  try {
    const json j = json::parse(text);
    m.signal_length = j.at("signal_length").get<int>();
    m.num_devices = j.at("num_devices").get<int>();
    m.seed = j.at("seed").get<std::uint64_t>();
    m.format_version = j.at("format_version").get<int>();
    for (const auto& r : j.at("records")) {
      m.records.push_back({r.at("device_id").get<int>(), r.at("channel_tag").get<std::string>(),
                           r.at("byte_offset").get<std::uint64_t>()});
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed manifest: ") + e.what());
  }
  m.validate();
  return m;
}

void write_dataset(const Dataset& ds, const std::filesystem::path& dir) {
  ds.manifest.validate();
  std::filesystem::create_directories(dir);
  const auto iq_path = dir / (ds.name + ".iq");
  std::ofstream iq(iq_path, std::ios::binary);
  if (!iq) throw IoError("cannot open " + iq_path.string() + " for writing");
  std::vector<float> buf;
  for (std::size_t i = 0; i < ds.signals.size(); ++i) {
    const auto& s = ds.signals[i];
    if (static_cast<int>(s.size()) != ds.manifest.signal_length) throw ShapeError("signal length mismatch");
    buf.resize(s.size() * 2);
    for (std::size_t k = 0; k < s.size(); ++k) {
      buf[2 * k] = static_cast<float>(s.samples[k].real());
      buf[2 * k + 1] = static_cast<float>(s.samples[k].imag());
    }
    iq.seekp(static_cast<std::streamoff>(ds.manifest.records[i].byte_offset));
    iq.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(float)));
  }
  if (!iq) throw IoError("failed writing " + iq_path.string());

  const auto manifest_path = dir / (ds.name + ".manifest.json");
  std::ofstream mf(manifest_path);
  if (!mf) throw IoError("cannot open " + manifest_path.string() + " for writing");
  mf << manifest_to_json(ds.manifest);
  if (!mf) throw IoError("failed writing " + manifest_path.string());
}

Dataset read_dataset(const std::filesystem::path& path) {
  const auto manifest_path = find_manifest(path);
  std::ifstream mf(manifest_path);
  if (!mf) throw IoError("cannot read " + manifest_path.string());
  const std::string text((std::istreambuf_iterator<char>(mf)), std::istreambuf_iterator<char>());

  Dataset ds;
  std::string fname = manifest_path.filename().string();
  ds.name = fname.substr(0, fname.size() - std::string(".manifest.json").size());
  ds.manifest = manifest_from_json(text);

  const auto iq_path = manifest_path.parent_path() / (ds.name + ".iq");
  std::ifstream iq(iq_path, std::ios::binary);
  if (!iq) throw IoError("cannot read " + iq_path.string());
  const std::uint64_t rb = ds.manifest.record_bytes();
  std::vector<float> buf(static_cast<std::size_t>(ds.manifest.signal_length) * 2);
  for (const auto& r : ds.manifest.records) {
    iq.seekg(static_cast<std::streamoff>(r.byte_offset));
    iq.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(rb));
    if (!iq) throw IoError("truncated signal file " + iq_path.string());
    ComplexSignal s;
    s.samples.resize(static_cast<std::size_t>(ds.manifest.signal_length));
    for (std::size_t k = 0; k < s.samples.size(); ++k) s.samples[k] = {buf[2 * k], buf[2 * k + 1]};
    ds.signals.push_back(std::move(s));
  }
  return ds;
}

std::vector<Dataset> gen_dataset(const DatasetConfig& cfg, std::uint64_t seed, const std::filesystem::path& out) {
  std::vector<Dataset> result;
  for (const auto& split : cfg.splits) {
    Dataset ds = generate_split(cfg, split, seed);
    write_dataset(ds, out / split.name);
    result.push_back(std::move(ds));
  }
  return result;
}

}  // namespace drrff
