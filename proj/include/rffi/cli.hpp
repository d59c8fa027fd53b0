#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "rffi/checkpoint.hpp"
#include "rffi/dataset.hpp"
#include "rffi/pipelines.hpp"

namespace rffi::cli {

// Configuration problems exit with code 2, runtime failures with 1.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

namespace detail {

using json = nlohmann::json;

inline void require_keys(const json& j, const std::string& where, const std::set<std::string>& allowed,
                         const std::set<std::string>& required = {}) {
    if (!j.is_object()) throw ConfigError(where + ": expected a JSON object");
    for (const auto& [key, value] : j.items())
        if (!allowed.count(key)) throw ConfigError(where + ": unknown key '" + key + "'");
    for (const auto& key : required)
        if (!j.contains(key)) throw ConfigError(where + ": missing required key '" + key + "'");
}

template <typename T>
T get_or(const json& j, const std::string& key, T fallback) {
    if (!j.contains(key)) return fallback;
    try {
        return j.at(key).get<T>();
    } catch (const json::exception& e) {
        throw ConfigError("config key '" + key + "': " + e.what());
    }
}

inline json load_config(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot open config file: " + path);
    json j;
    try {
        is >> j;
    } catch (const json::exception& e) {
        throw ConfigError("config parse error in " + path + ": " + e.what());
    }
    return j;
}

inline ChirpParams parse_chirp(const json& root) {
    ChirpParams p;
    if (!root.contains("chirp")) return p;
    const json& j = root.at("chirp");
    require_keys(j, "chirp",
                 {"amplitude", "bandwidth_hz", "symbol_duration_s", "sample_rate_hz", "preamble_count"});
    p.amplitude = get_or(j, "amplitude", p.amplitude);
    p.bandwidth_hz = get_or(j, "bandwidth_hz", p.bandwidth_hz);
    p.symbol_duration_s = get_or(j, "symbol_duration_s", p.symbol_duration_s);
    p.sample_rate_hz = get_or(j, "sample_rate_hz", p.sample_rate_hz);
    p.preamble_count = get_or(j, "preamble_count", p.preamble_count);
    try {
        validate(p);
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
    return p;
}

inline RepresentationConfig parse_representation(const json& root) {
    RepresentationConfig rc;
    if (root.contains("stft")) {
        const json& j = root.at("stft");
        require_keys(j, "stft", {"window_len", "hop_len", "window", "crop_band_hz"});
        rc.stft.window_len = get_or<std::size_t>(j, "window_len", rc.stft.window_len);
        rc.stft.hop_len = get_or<std::size_t>(j, "hop_len", rc.stft.hop_len);
        const std::string wk = get_or<std::string>(j, "window", "hann");
        if (wk == "hann")
            rc.stft.window_kind = WindowKind::hann;
        else if (wk == "rectangular")
            rc.stft.window_kind = WindowKind::rectangular;
        else
            throw ConfigError("stft.window must be 'hann' or 'rectangular'");
        if (j.contains("crop_band_hz")) {
            if (j.at("crop_band_hz").is_null())
                rc.stft.crop_band_hz.reset();
            else
                rc.stft.crop_band_hz = j.at("crop_band_hz").get<std::array<double, 2>>();
        }
        try {
            validate(rc.stft);
        } catch (const std::invalid_argument& e) {
            throw ConfigError(e.what());
        }
    }
    if (root.contains("representation")) {
        const json& j = root.at("representation");
        require_keys(j, "representation", {"kind", "normalization"});
        const std::string kind = get_or<std::string>(j, "kind", "spectrogram");
        if (kind == "spectrogram")
            rc.kind = Representation::spectrogram;
        else if (kind == "cis")
            rc.kind = Representation::cis;
        else
            throw ConfigError("representation.kind must be 'spectrogram' or 'cis'");
        const std::string norm = get_or<std::string>(j, "normalization", "global_minmax");
        if (norm == "none")
            rc.normalization = Normalization::none;
        else if (norm == "global_minmax")
            rc.normalization = Normalization::global_minmax;
        else if (norm == "per_sample_zscore")
            rc.normalization = Normalization::per_sample_zscore;
        else
            throw ConfigError("representation.normalization must be none|global_minmax|per_sample_zscore");
    }
    return rc;
}

inline AugmentationRanges parse_augmentation(const json& root) {
    AugmentationRanges r;
    if (!root.contains("augmentation")) return r;
    const json& j = root.at("augmentation");
    require_keys(j, "augmentation", {"rms_delay_spread_ns", "doppler_hz", "snr_db"});
    r.rms_delay_spread_ns = get_or(j, "rms_delay_spread_ns", r.rms_delay_spread_ns);
    r.doppler_hz = get_or(j, "doppler_hz", r.doppler_hz);
    r.snr_db = get_or(j, "snr_db", r.snr_db);
    try {
        validate(r);
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
    return r;
}

// one config file may carry the sections of several commands
const std::set<std::string> kRootKeys{"chirp", "stft", "representation", "augmentation",
                                      "gen",   "pretrain", "finetune",  "eval",     "sweep"};

struct CommonTrainKeys {
    double lr;
    int batch_pairs = 32;
    int max_epochs = 150;
    int plateau_patience = 10;
    int stop_patience = 30;
    double val_fraction = 0.1;
    double width_scale = 1.0;
    double temperature = 0.05;
    std::uint64_t seed = 1;
};

inline CommonTrainKeys parse_common_train(const json& j, double default_lr) {
    CommonTrainKeys c;
    c.lr = get_or(j, "lr", default_lr);
    c.batch_pairs = get_or(j, "batch_pairs", c.batch_pairs);
    c.max_epochs = get_or(j, "max_epochs", c.max_epochs);
    c.plateau_patience = get_or(j, "plateau_patience", c.plateau_patience);
    c.stop_patience = get_or(j, "stop_patience", c.stop_patience);
    c.val_fraction = get_or(j, "val_fraction", c.val_fraction);
    c.width_scale = get_or(j, "width_scale", c.width_scale);
    c.temperature = get_or(j, "temperature", c.temperature);
    c.seed = get_or<std::uint64_t>(j, "seed", c.seed);
    return c;
}

inline std::string require_out(const json& j, const std::optional<std::string>& flag_out) {
    if (flag_out && !flag_out->empty()) return *flag_out;
    const std::string out = get_or<std::string>(j, "out", "");
    if (out.empty()) throw ConfigError("missing output path: set 'out' in the config or pass --out");
    return out;
}

inline std::uint32_t file_crc32(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open " + path);
    std::vector<char> buf((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    return rffi::detail::crc32_bytes(buf.data(), buf.size());
}

// Flags shared by the training-style commands.
struct CliOverrides {
    std::optional<std::string> out;
    std::optional<std::string> init;
    std::optional<std::uint64_t> seed;
    std::optional<double> width_scale;
};

inline void apply_overrides(CommonTrainKeys& c, const CliOverrides& ov) {
    if (ov.seed) c.seed = *ov.seed;
    if (ov.width_scale) c.width_scale = *ov.width_scale;
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

inline int cmd_gen(const json& root, const CliOverrides& ov) {
    require_keys(root, "config", kRootKeys, {"gen"});
    const json& j = root.at("gen");
    require_keys(j, "gen",
                 {"out", "devices", "receivers", "packets_per_pair", "condition", "seed", "labeled"},
                 {"devices", "receivers", "packets_per_pair", "condition"});
    const std::string out = require_out(j, ov.out);
    const ChirpParams chirp = parse_chirp(root);

    const json& jd = j.at("devices");
    require_keys(jd, "gen.devices", {"count", "seed", "spread"}, {"count"});
    const json& jr = j.at("receivers");
    require_keys(jr, "gen.receivers", {"count", "seed", "spread", "use"}, {"count"});
    const json& jc = j.at("condition");
    require_keys(jc, "gen.condition", {"tag", "snr_db"}, {"tag"});

    std::vector<DeviceProfile> devices;
    std::vector<ReceiverProfile> receivers;
    GenerationCondition condition;
    try {
        devices = sample_device_profiles(get_or(jd, "count", 0), get_or<std::uint64_t>(jd, "seed", 7),
                                         get_or(jd, "spread", 1.0), chirp.bandwidth_hz);
        const auto all_rx = sample_receiver_profiles(get_or(jr, "count", 0), get_or<std::uint64_t>(jr, "seed", 11),
                                                     get_or(jr, "spread", 1.0), chirp.bandwidth_hz);
        if (jr.contains("use")) {
            for (const int idx : jr.at("use").get<std::vector<int>>()) {
                if (idx < 0 || idx >= static_cast<int>(all_rx.size()))
                    throw ConfigError("gen.receivers.use index out of range");
                receivers.push_back(all_rx[static_cast<std::size_t>(idx)]);
            }
        } else {
            receivers = all_rx;
        }
        condition.tag = channel_tag_from_string(jc.at("tag").get<std::string>());
        condition.snr_db = get_or(jc, "snr_db", condition.tag == ChannelTag::clean ? 60.0 : 20.0);
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }

    std::uint64_t seed = get_or<std::uint64_t>(j, "seed", 1);
    if (ov.seed) seed = *ov.seed;
    const DatasetManifest m = generate_corpus(devices, receivers, get_or(j, "packets_per_pair", 1), condition,
                                              chirp, seed, out, get_or(j, "labeled", true));
    const std::string blob = (std::filesystem::path(out) / m.blob_file).string();
    std::cout << "wrote " << m.records.size() << " records to " << out << " (blob crc32 " << std::hex
              << file_crc32(blob) << std::dec << ")\n";
    return 0;
}

inline int cmd_pretrain(const json& root, const CliOverrides& ov) {
    require_keys(root, "config", kRootKeys, {"pretrain"});
    const json& j = root.at("pretrain");
    require_keys(j, "pretrain",
                 {"data", "out", "lr", "batch_pairs", "max_epochs", "plateau_patience", "stop_patience",
                  "val_fraction", "width_scale", "temperature", "seed"},
                 {"data"});
    const std::string out = require_out(j, ov.out);
    CommonTrainKeys c = parse_common_train(j, 0.001);
    apply_overrides(c, ov);

    const std::string data_path = j.at("data").get<std::string>();
    if (!std::filesystem::exists(data_path))
        throw std::runtime_error("pretrain: dataset manifest not found: " + data_path);
    const PacketStore store = PacketStore::open(data_path);

    PretrainConfig cfg;
    cfg.lr = c.lr;
    cfg.batch_pairs = c.batch_pairs;
    cfg.ranges = parse_augmentation(root);
    cfg.seed = c.seed;
    cfg.plateau_patience = c.plateau_patience;
    cfg.stop_patience = c.stop_patience;
    cfg.max_epochs = c.max_epochs;
    cfg.val_fraction = c.val_fraction;
    cfg.width_scale = c.width_scale;
    cfg.loss.temperature = c.temperature;
    cfg.loss.batch_pairs = c.batch_pairs;
    cfg.rep = parse_representation(root);

    const TrainResult r = pretrain(store, cfg);
    std::filesystem::create_directories(out);
    save_checkpoint((std::filesystem::path(out) / "extractor.ckpt").string(), r.model, false);
    std::ofstream log_os((std::filesystem::path(out) / "training_log.csv").string(), std::ios::trunc);
    training_log_csv(r.log, log_os);
    std::cout << "pretrained for " << r.log.size() << " epochs; extractor checkpoint in " << out << "\n";
    return 0;
}

inline FinetuneConfig make_finetune_config(const json& root, const json& j, const CommonTrainKeys& c) {
    FinetuneConfig cfg;
    cfg.lr = c.lr;
    cfg.batch_pairs = c.batch_pairs;
    cfg.ranges = parse_augmentation(root);
    cfg.packets_per_device = get_or(j, "packets_per_device", 0);
    cfg.freeze_extractor = get_or(j, "freeze_extractor", false);
    cfg.use_contrastive = get_or(j, "use_contrastive", true);
    cfg.seed = c.seed;
    cfg.plateau_patience = c.plateau_patience;
    cfg.stop_patience = c.stop_patience;
    cfg.max_epochs = c.max_epochs;
    cfg.val_fraction = c.val_fraction;
    cfg.width_scale = c.width_scale;
    cfg.loss.temperature = c.temperature;
    cfg.loss.batch_pairs = c.batch_pairs;
    cfg.rep = parse_representation(root);
    return cfg;
}

inline int cmd_finetune(const json& root, const CliOverrides& ov) {
    require_keys(root, "config", kRootKeys, {"finetune"});
    const json& j = root.at("finetune");
    require_keys(j, "finetune",
                 {"rx1", "rx2", "out", "init", "lr", "batch_pairs", "max_epochs", "plateau_patience",
                  "stop_patience", "val_fraction", "width_scale", "temperature", "seed", "packets_per_device",
                  "use_contrastive", "freeze_extractor"},
                 {"rx1", "rx2"});
    const std::string out = require_out(j, ov.out);
    CommonTrainKeys c = parse_common_train(j, 0.0003);
    apply_overrides(c, ov);

    for (const char* key : {"rx1", "rx2"}) {
        const std::string p = j.at(key).get<std::string>();
        if (!std::filesystem::exists(p)) throw std::runtime_error("finetune: dataset manifest not found: " + p);
    }
    const LabeledPacketStore rx1 = LabeledPacketStore::open(j.at("rx1").get<std::string>());
    const LabeledPacketStore rx2 = LabeledPacketStore::open(j.at("rx2").get<std::string>());

    std::optional<Model<float>> init_model_opt;
    std::string init_path = get_or<std::string>(j, "init", "");
    if (ov.init && !ov.init->empty()) init_path = *ov.init;
    if (!init_path.empty()) {
        if (!std::filesystem::exists(init_path))
            throw std::runtime_error("finetune: init checkpoint not found: " + init_path);
        init_model_opt = load_checkpoint(init_path).model;
    }

    const FinetuneConfig cfg = make_finetune_config(root, j, c);
    const TrainResult r = finetune_siamese(rx1, rx2, init_model_opt ? &*init_model_opt : nullptr, cfg);
    std::filesystem::create_directories(out);
    save_checkpoint((std::filesystem::path(out) / "model.ckpt").string(), r.model, true);
    std::ofstream log_os((std::filesystem::path(out) / "training_log.csv").string(), std::ios::trunc);
    training_log_csv(r.log, log_os);
    std::cout << "fine-tuned for " << r.log.size() << " epochs ("
              << (init_path.empty() ? "w/o pretrain" : "w/ pretrain") << "); model checkpoint in " << out << "\n";
    return 0;
}

inline int cmd_eval(const json& root, const CliOverrides& ov) {
    require_keys(root, "config", kRootKeys, {"eval"});
    const json& j = root.at("eval");
    require_keys(j, "eval", {"model", "data", "out"}, {"model", "data"});
    const std::string out = require_out(j, ov.out);
    const std::string model_path = j.at("model").get<std::string>();
    const std::string data_path = j.at("data").get<std::string>();
    if (!std::filesystem::exists(model_path)) throw std::runtime_error("eval: checkpoint not found: " + model_path);
    if (!std::filesystem::exists(data_path)) throw std::runtime_error("eval: dataset manifest not found: " + data_path);

    const LoadedCheckpoint ckpt = load_checkpoint(model_path);
    if (!ckpt.has_classifier) throw std::runtime_error("eval: checkpoint has no classifier head");
    const LabeledPacketStore test = LabeledPacketStore::open(data_path);
    const RepresentationConfig rep = parse_representation(root);

    const EvalReport report = evaluate(ckpt.model, test, rep);
    std::filesystem::create_directories(out);
    {
        std::ofstream os((std::filesystem::path(out) / "eval_report.csv").string(), std::ios::trunc);
        eval_report_csv(report, os);
    }
    {
        std::ofstream os((std::filesystem::path(out) / "confusion.csv").string(), std::ios::trunc);
        confusion_csv(report, os);
    }
    std::cout << "accuracy " << report.overall_accuracy << " (" << report.correct << "/" << report.total
              << "); reports in " << out << "\n";
    return 0;
}

inline int cmd_sweep(const json& root, const CliOverrides& ov) {
    require_keys(root, "config", kRootKeys, {"sweep"});
    const json& j = root.at("sweep");
    require_keys(j, "sweep",
                 {"rx1", "rx2", "test", "out", "init", "packets", "repetitions", "lr", "batch_pairs",
                  "max_epochs", "plateau_patience", "stop_patience", "val_fraction", "width_scale",
                  "temperature", "seed", "use_contrastive", "freeze_extractor"},
                 {"rx1", "rx2", "test"});
    const std::string out = require_out(j, ov.out);
    CommonTrainKeys c = parse_common_train(j, 0.0003);
    apply_overrides(c, ov);

    for (const char* key : {"rx1", "rx2", "test"}) {
        const std::string p = j.at(key).get<std::string>();
        if (!std::filesystem::exists(p)) throw std::runtime_error("sweep: dataset manifest not found: " + p);
    }
    const LabeledPacketStore rx1 = LabeledPacketStore::open(j.at("rx1").get<std::string>());
    const LabeledPacketStore rx2 = LabeledPacketStore::open(j.at("rx2").get<std::string>());
    const LabeledPacketStore test = LabeledPacketStore::open(j.at("test").get<std::string>());

    std::string init_path = get_or<std::string>(j, "init", "");
    if (ov.init && !ov.init->empty()) init_path = *ov.init;
    std::optional<Model<float>> pretrained;
    if (!init_path.empty()) {
        if (!std::filesystem::exists(init_path))
            throw std::runtime_error("sweep: init checkpoint not found: " + init_path);
        pretrained = load_checkpoint(init_path).model;
    }

    const std::vector<int> packets = get_or(j, "packets", std::vector<int>{20, 50, 100, 200});
    const int repetitions = get_or(j, "repetitions", 4);

    std::filesystem::create_directories(out);
    std::ofstream runs((std::filesystem::path(out) / "sweep_runs.csv").string(), std::ios::trunc);
    runs << "packets_per_device,arm,repetition,accuracy,epochs\n";
    std::ofstream summary((std::filesystem::path(out) / "sweep_summary.csv").string(), std::ios::trunc);
    summary << "packets_per_device,arm,mean_accuracy,min_accuracy,max_accuracy\n";

    for (const int m : packets) {
        for (const int arm : {0, 1}) {  // 0 = w/ pretrain, 1 = w/o pretrain
            if (arm == 0 && !pretrained) continue;
            const std::string arm_name = arm == 0 ? "with_pretrain" : "without_pretrain";
            double sum = 0.0, mn = 1.0, mx = 0.0;
            for (int rep = 0; rep < repetitions; ++rep) {
                json jr = j;
                FinetuneConfig cfg = make_finetune_config(root, jr, c);
                cfg.packets_per_device = m;
                cfg.seed = derive_seed(c.seed, static_cast<std::uint64_t>(rep));
                const TrainResult r =
                    finetune_siamese(rx1, rx2, arm == 0 ? &*pretrained : nullptr, cfg);
                const EvalReport er = evaluate(r.model, test, cfg.rep);
                runs << m << ',' << arm_name << ',' << rep << ',' << er.overall_accuracy << ','
                     << r.log.size() << '\n';
                runs.flush();
                std::cout << "sweep point packets=" << m << " arm=" << arm_name << " rep=" << rep
                          << " accuracy=" << er.overall_accuracy << "\n";
                sum += er.overall_accuracy;
                mn = std::min(mn, er.overall_accuracy);
                mx = std::max(mx, er.overall_accuracy);
            }
            summary << m << ',' << arm_name << ',' << sum / repetitions << ',' << mn << ',' << mx << '\n';
            summary.flush();
        }
    }
    std::cout << "sweep complete; CSVs in " << out << "\n";
    return 0;
}

}  // namespace detail

// Entry point shared by the rffi binary and the CLI tests.
inline int run_cli(int argc, const char* const* argv) {
    CLI::App app{"Simulator-backed LoRa radio-fingerprint identification workbench"};
    app.require_subcommand(1);
    app.footer(
        "Config defaults: bandwidth 125 kHz, sampling rate 1 MHz, 8 preambles, NT-Xent temperature 0.05,\n"
        "batch of 32 pairs (64 views), Adam lr 0.0003 (fine-tune) / 0.001 (pretrain), lr halved after 10\n"
        "stale epochs, stop after 30, augmentation delay spread [5,300] ns, Doppler [0,5] Hz, SNR [10,40] dB\n"
        "(all as published). Artifact-chosen defaults: SF7 symbol (1.024 ms), STFT 128/64 hann with +/-94 kHz\n"
        "crop, global min-max input normalization, width_scale 1.0, validation fraction 0.1.");

    std::string config_path;
    detail::CliOverrides ov;
    std::string out_flag, init_flag;
    std::uint64_t seed_flag = 0;
    double width_flag = 0.0;

    auto add_common = [&](CLI::App* sub, bool with_init, bool with_width) {
        sub->add_option("--config", config_path, "Path to the JSON run configuration")->required();
        sub->add_option("--out", out_flag, "Output directory (overrides the config's 'out')");
        sub->add_option("--seed", seed_flag, "Base seed override (default from config, 1) [artifact]");
        if (with_init)
            sub->add_option("--init", init_flag,
                            "Extractor checkpoint to start from ('w/ pretrain' arm when present)");
        if (with_width)
            sub->add_option("--width-scale", width_flag,
                            "Conv-width scale in (0,1]; 1.0 reproduces the published layer widths");
    };

    CLI::App* gen = app.add_subcommand("gen", "Generate a synthetic multi-device corpus");
    add_common(gen, false, false);
    CLI::App* pre = app.add_subcommand("pretrain", "Contrastive pretraining of the feature extractor (labels unused)");
    add_common(pre, false, true);
    CLI::App* fin = app.add_subcommand("finetune", "Siamese fine-tuning on two receivers' labeled stores");
    add_common(fin, true, true);
    CLI::App* ev = app.add_subcommand("eval", "Evaluate a model checkpoint on a labeled store");
    add_common(ev, false, false);
    CLI::App* sw = app.add_subcommand("sweep", "Packets-per-device sweep, paired w/ and w/o pretrain arms");
    add_common(sw, true, true);

    try {
        app.parse(argc, const_cast<char**>(argv));
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 2;
    }

    try {
        if (!out_flag.empty()) ov.out = out_flag;
        if (!init_flag.empty()) ov.init = init_flag;
        for (const auto* opt : app.get_subcommands()[0]->get_options()) {
            if (opt->get_name() == "--seed" && opt->count()) ov.seed = seed_flag;
            if (opt->get_name() == "--width-scale" && opt->count()) ov.width_scale = width_flag;
        }
        const detail::json root = detail::load_config(config_path);
        if (app.got_subcommand(gen)) return detail::cmd_gen(root, ov);
        if (app.got_subcommand(pre)) return detail::cmd_pretrain(root, ov);
        if (app.got_subcommand(fin)) return detail::cmd_finetune(root, ov);
        if (app.got_subcommand(ev)) return detail::cmd_eval(root, ov);
        if (app.got_subcommand(sw)) return detail::cmd_sweep(root, ov);
        return 2;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}

}  // namespace rffi::cli
