#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <memory>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "rffi/channel.hpp"
#include "rffi/impairments.hpp"
#include "rffi/lora_phy.hpp"
#include "rffi/rng.hpp"

namespace rffi {

enum class ChannelTag { clean, static_los, static_nlos, dynamic_los, dynamic_nlos, unknown };

inline std::string to_string(ChannelTag t) {
    switch (t) {
        case ChannelTag::clean: return "clean";
        case ChannelTag::static_los: return "static_los";
        case ChannelTag::static_nlos: return "static_nlos";
        case ChannelTag::dynamic_los: return "dynamic_los";
        case ChannelTag::dynamic_nlos: return "dynamic_nlos";
        case ChannelTag::unknown: return "unknown";
    }
    return "unknown";
}

inline ChannelTag channel_tag_from_string(const std::string& s) {
    if (s == "clean") return ChannelTag::clean;
    if (s == "static_los") return ChannelTag::static_los;
    if (s == "static_nlos") return ChannelTag::static_nlos;
    if (s == "dynamic_los") return ChannelTag::dynamic_los;
    if (s == "dynamic_nlos") return ChannelTag::dynamic_nlos;
    if (s == "unknown") return ChannelTag::unknown;
    throw std::invalid_argument("unknown channel tag: " + s);
}

// Channel/noise condition a corpus is generated under. clean is the identity
// channel at 60 dB; LOS tags draw the RMS delay spread from [5, 100] ns and
// NLOS from [100, 300] ns; dynamic tags draw Doppler from [1, 5] Hz.
struct GenerationCondition {
    ChannelTag tag = ChannelTag::clean;
    double snr_db = 60.0;
};

inline AugmentationRanges condition_ranges(const GenerationCondition& c) {
    AugmentationRanges r;
    r.snr_db = {c.snr_db, c.snr_db};
    switch (c.tag) {
        case ChannelTag::static_los: r.rms_delay_spread_ns = {5.0, 100.0}; r.doppler_hz = {0.0, 0.0}; break;
        case ChannelTag::static_nlos: r.rms_delay_spread_ns = {100.0, 300.0}; r.doppler_hz = {0.0, 0.0}; break;
        case ChannelTag::dynamic_los: r.rms_delay_spread_ns = {5.0, 100.0}; r.doppler_hz = {1.0, 5.0}; break;
        case ChannelTag::dynamic_nlos: r.rms_delay_spread_ns = {100.0, 300.0}; r.doppler_hz = {1.0, 5.0}; break;
        default: throw std::invalid_argument("condition_ranges: tag has no channel ranges");
    }
    return r;
}

struct RecordMeta {
    int device_label = -1;  // -1 in unlabeled manifests
    int receiver_id = 0;
    ChannelTag tag = ChannelTag::unknown;
    double snr_db_nominal = std::numeric_limits<double>::quiet_NaN();
    std::uint64_t offset_floats = 0;  // into the blob
    std::uint64_t len_floats = 0;     // 2 * packet_len
    std::uint32_t crc32 = 0;
};

struct DatasetManifest {
    int version = 1;
    double fs = 1e6;
    std::size_t packet_len = 8192;
    int num_devices = 0;
    int packets_per_pair = 0;
    ChirpParams chirp;
    std::vector<DeviceProfile> devices;
    std::vector<ReceiverProfile> receivers;
    GenerationCondition condition;
    std::uint64_t seed = 0;
    bool labeled = true;
    bool synthetic = true;  // false for ingested raw IQ
    std::string blob_file = "corpus.iq";
    std::vector<RecordMeta> records;
};

// --------------------------------------------------------------------------
// CRC32 (IEEE, reflected) over the raw float bytes of one record
// --------------------------------------------------------------------------

namespace detail {

inline const std::array<std::uint32_t, 256>& crc32_table() {
    static const std::array<std::uint32_t, 256> table = [] {
        std::array<std::uint32_t, 256> t{};
        for (std::uint32_t i = 0; i < 256; ++i) {
            std::uint32_t c = i;
            for (int k = 0; k < 8; ++k) c = (c & 1u) ? 0xEDB88320u ^ (c >> 1) : (c >> 1);
            t[i] = c;
        }
        return t;
    }();
    return table;
}

inline std::uint32_t crc32_bytes(const void* data, std::size_t len) {
    const auto* p = static_cast<const unsigned char*>(data);
    std::uint32_t c = 0xFFFFFFFFu;
    for (std::size_t i = 0; i < len; ++i) c = crc32_table()[(c ^ p[i]) & 0xFFu] ^ (c >> 8);
    return c ^ 0xFFFFFFFFu;
}

}  // namespace detail

// --------------------------------------------------------------------------
// Manifest JSON serialization
// --------------------------------------------------------------------------

namespace detail {

using json = nlohmann::json;

inline json to_json(const ChirpParams& p) {
    return json{{"amplitude", p.amplitude},
                {"bandwidth_hz", p.bandwidth_hz},
                {"symbol_duration_s", p.symbol_duration_s},
                {"sample_rate_hz", p.sample_rate_hz},
                {"preamble_count", p.preamble_count}};
}

inline ChirpParams chirp_from_json(const json& j) {
    ChirpParams p;
    p.amplitude = j.at("amplitude").get<double>();
    p.bandwidth_hz = j.at("bandwidth_hz").get<double>();
    p.symbol_duration_s = j.at("symbol_duration_s").get<double>();
    p.sample_rate_hz = j.at("sample_rate_hz").get<double>();
    p.preamble_count = j.at("preamble_count").get<int>();
    return p;
}

inline json to_json(const DeviceProfile& d) {
    return json{{"device_id", d.device_id},
                {"cfo_hz", d.cfo_hz},
                {"iq_gain_imbalance_db", d.iq_gain_imbalance_db},
                {"iq_phase_imbalance_rad", d.iq_phase_imbalance_rad},
                {"pa_coeffs", d.pa_coeffs},
                {"seed", d.seed}};
}

inline DeviceProfile device_from_json(const json& j) {
    DeviceProfile d;
    d.device_id = j.at("device_id").get<int>();
    d.cfo_hz = j.at("cfo_hz").get<double>();
    d.iq_gain_imbalance_db = j.at("iq_gain_imbalance_db").get<double>();
    d.iq_phase_imbalance_rad = j.at("iq_phase_imbalance_rad").get<double>();
    d.pa_coeffs = j.at("pa_coeffs").get<std::array<double, 4>>();
    d.seed = j.at("seed").get<std::uint64_t>();
    return d;
}

inline json to_json(const ReceiverProfile& r) {
    json taps = json::array();
    for (const auto& g : r.ripple_response) taps.push_back(json::array({g.real(), g.imag()}));
    return json{{"receiver_id", r.receiver_id}, {"ripple_response", taps},  {"rx_cfo_hz", r.rx_cfo_hz},
                {"rx_iq_gain_db", r.rx_iq_gain_db}, {"rx_iq_phase_rad", r.rx_iq_phase_rad}, {"seed", r.seed}};
}

inline ReceiverProfile receiver_from_json(const json& j) {
    ReceiverProfile r;
    r.receiver_id = j.at("receiver_id").get<int>();
    r.ripple_response.clear();
    for (const auto& t : j.at("ripple_response")) r.ripple_response.emplace_back(t.at(0).get<double>(), t.at(1).get<double>());
    r.rx_cfo_hz = j.at("rx_cfo_hz").get<double>();
    r.rx_iq_gain_db = j.at("rx_iq_gain_db").get<double>();
    r.rx_iq_phase_rad = j.at("rx_iq_phase_rad").get<double>();
    r.seed = j.at("seed").get<std::uint64_t>();
    return r;
}

}  // namespace detail

inline void save_manifest(const DatasetManifest& m, const std::string& path) {
    using detail::json;
    json j;
    j["version"] = m.version;
    j["fs"] = m.fs;
    j["packet_len"] = m.packet_len;
    j["num_devices"] = m.num_devices;
    j["packets_per_pair"] = m.packets_per_pair;
    j["chirp"] = detail::to_json(m.chirp);
    j["devices"] = json::array();
    for (const auto& d : m.devices) j["devices"].push_back(detail::to_json(d));
    j["receivers"] = json::array();
    for (const auto& r : m.receivers) j["receivers"].push_back(detail::to_json(r));
    j["condition"] = json{{"tag", to_string(m.condition.tag)}};
    if (std::isfinite(m.condition.snr_db)) j["condition"]["snr_db"] = m.condition.snr_db;
    j["seed"] = m.seed;
    j["labeled"] = m.labeled;
    j["synthetic"] = m.synthetic;
    j["blob_file"] = m.blob_file;
    json recs = json::array();
    for (const auto& r : m.records) {
        json jr{{"receiver", r.receiver_id}, {"tag", to_string(r.tag)},     {"offset", r.offset_floats},
                {"len", r.len_floats},       {"crc32", r.crc32}};
        if (m.labeled) jr["device"] = r.device_label;
        if (std::isfinite(r.snr_db_nominal)) jr["snr_db"] = r.snr_db_nominal;
        recs.push_back(std::move(jr));
    }
    j["records"] = std::move(recs);
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw std::runtime_error("save_manifest: cannot open " + path);
    os << j.dump(1) << '\n';
    if (!os) throw std::runtime_error("save_manifest: write failed: " + path);
}

inline DatasetManifest load_manifest(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("load_manifest: cannot open " + path);
    detail::json j;
    is >> j;
    DatasetManifest m;
    m.version = j.at("version").get<int>();
    if (m.version != 1)
        throw std::runtime_error("load_manifest: unsupported manifest version " + std::to_string(m.version));
    m.fs = j.at("fs").get<double>();
    m.packet_len = j.at("packet_len").get<std::size_t>();
    m.num_devices = j.at("num_devices").get<int>();
    m.packets_per_pair = j.at("packets_per_pair").get<int>();
    m.chirp = detail::chirp_from_json(j.at("chirp"));
    for (const auto& d : j.at("devices")) m.devices.push_back(detail::device_from_json(d));
    for (const auto& r : j.at("receivers")) m.receivers.push_back(detail::receiver_from_json(r));
    m.condition.tag = channel_tag_from_string(j.at("condition").at("tag").get<std::string>());
    m.condition.snr_db = j.at("condition").contains("snr_db")
                             ? j.at("condition").at("snr_db").get<double>()
                             : std::numeric_limits<double>::quiet_NaN();
    m.seed = j.at("seed").get<std::uint64_t>();
    m.labeled = j.at("labeled").get<bool>();
    m.synthetic = j.at("synthetic").get<bool>();
    m.blob_file = j.at("blob_file").get<std::string>();
    for (const auto& jr : j.at("records")) {
        RecordMeta r;
        r.receiver_id = jr.at("receiver").get<int>();
        r.tag = channel_tag_from_string(jr.at("tag").get<std::string>());
        r.offset_floats = jr.at("offset").get<std::uint64_t>();
        r.len_floats = jr.at("len").get<std::uint64_t>();
        r.crc32 = jr.at("crc32").get<std::uint32_t>();
        if (m.labeled) r.device_label = jr.at("device").get<int>();
        if (jr.contains("snr_db")) r.snr_db_nominal = jr.at("snr_db").get<double>();
        m.records.push_back(r);
    }
    return m;
}

// --------------------------------------------------------------------------
// Generation
// --------------------------------------------------------------------------

namespace detail {

inline std::vector<float> packet_to_floats(const ComplexSignal& s) {
    std::vector<float> f(2 * s.samples.size());
    for (std::size_t i = 0; i < s.samples.size(); ++i) {
        f[2 * i] = static_cast<float>(s.samples[i].real());
        f[2 * i + 1] = static_cast<float>(s.samples[i].imag());
    }
    return f;
}

// One record of the synthesis chain; shared by generation and the
// manifest-regeneration determinism check. noinline: one machine-code
// instance, so both callers produce bit-identical floats.
[[gnu::noinline]] inline std::vector<float> synthesize_record(const ComplexSignal& base, const DeviceProfile& dev,
                                            const ReceiverProfile& rx, const GenerationCondition& cond,
                                            std::uint64_t corpus_seed, std::size_t pair_index, int m) {
    const std::uint64_t record_seed = derive_seed(corpus_seed, pair_index, static_cast<std::uint64_t>(m));
    ComplexSignal sig = apply_tx_impairments(base, dev);
    if (cond.tag != ChannelTag::clean) {
        const AugmentationRanges ranges = condition_ranges(cond);
        const bool is_static = (cond.tag == ChannelTag::static_los || cond.tag == ChannelTag::static_nlos);
        // static locations reuse one draw per (device, receiver); dynamic
        // channels are redrawn for every packet
        const std::uint64_t chan_seed =
            is_static ? derive_seed(corpus_seed, 0x57A71Cull, pair_index) : derive_seed(record_seed, 3);
        const ChannelRealization ch = sample_channel(ranges, chan_seed, sig.samples.size(), sig.sample_rate_hz);
        sig = apply_channel(sig, ch);
    }
    sig = apply_rx_impairments(sig, rx);
    sig = add_awgn(sig, cond.snr_db, derive_seed(record_seed, 4));
    return packet_to_floats(sig);
}

}  // namespace detail

// Generates M packets for every (device, receiver) pair through the chain
// synthesize -> TX impairments -> condition channel -> RX impairments -> AWGN
// and writes manifest.json plus a little-endian float32 interleaved-IQ blob.
// Deterministic: the manifest alone regenerates the blob bitwise.
inline DatasetManifest generate_corpus(const std::vector<DeviceProfile>& devices,
                                       const std::vector<ReceiverProfile>& receivers, int packets_per_pair,
                                       const GenerationCondition& condition, const ChirpParams& chirp,
                                       std::uint64_t seed, const std::string& out_dir, bool labeled = true) {
    if (packets_per_pair < 1) throw std::invalid_argument("generate_corpus: packets_per_pair must be >= 1");
    if (devices.empty() || receivers.empty())
        throw std::invalid_argument("generate_corpus: need at least one device and one receiver");
    for (const auto& d : devices) validate(d, chirp.bandwidth_hz);
    for (const auto& r : receivers) validate(r, chirp.bandwidth_hz);

    const ComplexSignal base = synthesize_packet(chirp);

    DatasetManifest m;
    m.fs = chirp.sample_rate_hz;
    m.packet_len = base.samples.size();
    m.num_devices = static_cast<int>(devices.size());
    m.packets_per_pair = packets_per_pair;
    m.chirp = chirp;
    m.devices = devices;
    m.receivers = receivers;
    m.condition = condition;
    m.seed = seed;
    m.labeled = labeled;

    std::filesystem::create_directories(out_dir);
    const std::string blob_path = (std::filesystem::path(out_dir) / m.blob_file).string();
    std::ofstream blob(blob_path, std::ios::binary | std::ios::trunc);
    if (!blob) throw std::runtime_error("generate_corpus: cannot open " + blob_path);

    std::uint64_t offset = 0;
    for (std::size_t di = 0; di < devices.size(); ++di) {
        for (std::size_t ri = 0; ri < receivers.size(); ++ri) {
            const std::size_t pair_index = di * receivers.size() + ri;
            for (int k = 0; k < packets_per_pair; ++k) {
                const std::vector<float> f =
                    detail::synthesize_record(base, devices[di], receivers[ri], condition, seed, pair_index, k);
                blob.write(reinterpret_cast<const char*>(f.data()),
                           static_cast<std::streamsize>(f.size() * sizeof(float)));
                RecordMeta rec;
                rec.device_label = labeled ? devices[di].device_id : -1;
                rec.receiver_id = receivers[ri].receiver_id;
                rec.tag = condition.tag;
                rec.snr_db_nominal = condition.snr_db;
                rec.offset_floats = offset;
                rec.len_floats = f.size();
                rec.crc32 = detail::crc32_bytes(f.data(), f.size() * sizeof(float));
                m.records.push_back(rec);
                offset += f.size();
            }
        }
    }
    if (!blob) throw std::runtime_error("generate_corpus: blob write failed: " + blob_path);
    blob.close();
    save_manifest(m, (std::filesystem::path(out_dir) / "manifest.json").string());
    return m;
}

// Regenerates the blob described by a manifest, byte for byte. Only valid for
// synthetic corpora.
inline std::vector<float> regenerate_blob(const DatasetManifest& m) {
    if (!m.synthetic) throw std::invalid_argument("regenerate_blob: manifest does not describe a synthetic corpus");
    const ComplexSignal base = synthesize_packet(m.chirp);
    std::vector<float> blob;
    for (std::size_t di = 0; di < m.devices.size(); ++di)
        for (std::size_t ri = 0; ri < m.receivers.size(); ++ri) {
            const std::size_t pair_index = di * m.receivers.size() + ri;
            for (int k = 0; k < m.packets_per_pair; ++k) {
                const std::vector<float> f = detail::synthesize_record(base, m.devices[di], m.receivers[ri],
                                                                       m.condition, m.seed, pair_index, k);
                blob.insert(blob.end(), f.begin(), f.end());
            }
        }
    return blob;
}

// Wraps an existing interleaved little-endian float32 IQ capture as a corpus.
inline DatasetManifest ingest_raw_iq(const std::string& iq_path, double fs, std::size_t packet_len,
                                     const std::optional<std::vector<int>>& labels, const std::string& out_dir) {
    std::ifstream is(iq_path, std::ios::binary | std::ios::ate);
    if (!is) throw std::runtime_error("ingest_raw_iq: cannot open " + iq_path);
    const std::uint64_t bytes = static_cast<std::uint64_t>(is.tellg());
    const std::uint64_t packet_bytes = static_cast<std::uint64_t>(packet_len) * 2 * sizeof(float);
    if (bytes % sizeof(float) != 0)
        throw std::runtime_error("ingest_raw_iq: file size " + std::to_string(bytes) +
                                 " bytes is not a whole number of floats");
    if (packet_bytes == 0 || bytes % packet_bytes != 0)
        throw std::runtime_error("ingest_raw_iq: file size " + std::to_string(bytes) +
                                 " bytes is not a multiple of the packet size " + std::to_string(packet_bytes));
    const std::size_t n_packets = static_cast<std::size_t>(bytes / packet_bytes);
    if (labels && labels->size() != n_packets)
        throw std::invalid_argument("ingest_raw_iq: label count does not match packet count");

    is.seekg(0);
    std::vector<float> data(bytes / sizeof(float));
    is.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(bytes));
    if (!is) throw std::runtime_error("ingest_raw_iq: read failed");

    DatasetManifest m;
    m.fs = fs;
    m.packet_len = packet_len;
    m.num_devices = labels ? static_cast<int>(std::set<int>(labels->begin(), labels->end()).size()) : 0;
    m.packets_per_pair = 0;
    m.labeled = labels.has_value();
    m.synthetic = false;
    m.condition.tag = ChannelTag::unknown;
    m.condition.snr_db = std::numeric_limits<double>::quiet_NaN();

    std::filesystem::create_directories(out_dir);
    const std::string blob_path = (std::filesystem::path(out_dir) / m.blob_file).string();
    std::ofstream blob(blob_path, std::ios::binary | std::ios::trunc);
    blob.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(bytes));
    if (!blob) throw std::runtime_error("ingest_raw_iq: blob write failed");

    const std::uint64_t floats_per_packet = static_cast<std::uint64_t>(packet_len) * 2;
    for (std::size_t i = 0; i < n_packets; ++i) {
        RecordMeta rec;
        rec.device_label = labels ? (*labels)[i] : -1;
        rec.receiver_id = 0;
        rec.tag = ChannelTag::unknown;
        rec.offset_floats = i * floats_per_packet;
        rec.len_floats = floats_per_packet;
        rec.crc32 = detail::crc32_bytes(data.data() + rec.offset_floats, floats_per_packet * sizeof(float));
        m.records.push_back(rec);
    }
    save_manifest(m, (std::filesystem::path(out_dir) / "manifest.json").string());
    return m;
}

// --------------------------------------------------------------------------
// Stores
// --------------------------------------------------------------------------

namespace detail {

struct StoreData {
    DatasetManifest manifest;
    std::vector<float> blob;
};

inline std::shared_ptr<StoreData> open_store_data(const std::string& manifest_path) {
    auto data = std::make_shared<StoreData>();
    data->manifest = load_manifest(manifest_path);
    const auto dir = std::filesystem::path(manifest_path).parent_path();
    const std::string blob_path = (dir / data->manifest.blob_file).string();
    std::ifstream is(blob_path, std::ios::binary | std::ios::ate);
    if (!is) throw std::runtime_error("load_store: cannot open blob " + blob_path);
    const std::uint64_t bytes = static_cast<std::uint64_t>(is.tellg());
    if (bytes % sizeof(float) != 0) throw std::runtime_error("load_store: blob is not a whole number of floats");
    is.seekg(0);
    data->blob.resize(bytes / sizeof(float));
    is.read(reinterpret_cast<char*>(data->blob.data()), static_cast<std::streamsize>(bytes));
    if (!is) throw std::runtime_error("load_store: blob read failed");

    for (std::size_t i = 0; i < data->manifest.records.size(); ++i) {
        const auto& r = data->manifest.records[i];
        if (r.len_floats % 2 != 0)
            throw std::runtime_error("load_store: record " + std::to_string(i) +
                                     " does not decode to whole complex samples");
        if (r.offset_floats + r.len_floats > data->blob.size())
            throw std::runtime_error("load_store: record " + std::to_string(i) + " is out of blob range");
        const std::uint32_t crc =
            crc32_bytes(data->blob.data() + r.offset_floats, r.len_floats * sizeof(float));
        if (crc != r.crc32)
            throw std::runtime_error("load_store: checksum mismatch at record " + std::to_string(i));
    }
    return data;
}

}  // namespace detail

// Random-access, label-free packet view. Pretraining consumes this type, so
// label access is impossible through the interface even when the underlying
// manifest is labeled.
class PacketStore {
public:
    static PacketStore open(const std::string& manifest_path) {
        PacketStore s;
        s.data_ = detail::open_store_data(manifest_path);
        return s;
    }

    std::size_t size() const { return data_->manifest.records.size(); }
    std::size_t packet_len() const { return data_->manifest.packet_len; }
    double sample_rate_hz() const { return data_->manifest.fs; }

    ComplexSignal packet(std::size_t i) const {
        const auto& r = record(i);
        ComplexSignal s;
        s.sample_rate_hz = data_->manifest.fs;
        s.samples.resize(r.len_floats / 2);
        const float* f = data_->blob.data() + r.offset_floats;
        for (std::size_t k = 0; k < s.samples.size(); ++k)
            s.samples[k] = {static_cast<double>(f[2 * k]), static_cast<double>(f[2 * k + 1])};
        return s;
    }

    int receiver_id(std::size_t i) const { return record(i).receiver_id; }
    ChannelTag channel_tag(std::size_t i) const { return record(i).tag; }
    double snr_db_nominal(std::size_t i) const { return record(i).snr_db_nominal; }
    const DatasetManifest& manifest() const { return data_->manifest; }

protected:
    const RecordMeta& record(std::size_t i) const {
        if (i >= data_->manifest.records.size()) throw std::out_of_range("PacketStore: record index out of range");
        return data_->manifest.records[i];
    }
    std::shared_ptr<detail::StoreData> data_;
};

class LabeledPacketStore : public PacketStore {
public:
    static LabeledPacketStore open(const std::string& manifest_path) {
        LabeledPacketStore s;
        s.data_ = detail::open_store_data(manifest_path);
        if (!s.data_->manifest.labeled)
            throw std::runtime_error("LabeledPacketStore: manifest " + manifest_path + " is unlabeled");
        return s;
    }

    int label(std::size_t i) const { return record(i).device_label; }

    std::set<int> label_set() const {
        std::set<int> out;
        for (const auto& r : data_->manifest.records) out.insert(r.device_label);
        return out;
    }

    // The same packets with labels stripped at the type level.
    PacketStore unlabeled_view() const { return *this; }
};

}  // namespace rffi
