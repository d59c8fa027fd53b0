#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "rffi/channel.hpp"
#include "rffi/dataset.hpp"
#include "rffi/nn.hpp"
#include "rffi/objectives.hpp"
#include "rffi/spectrogram.hpp"

namespace rffi {

// ---------------------------------------------------------------------------
// Signal representation feeding the network
// ---------------------------------------------------------------------------

enum class Representation { spectrogram, cis };

struct RepresentationConfig {
    StftConfig stft;
    Representation kind = Representation::spectrogram;
    Normalization normalization = Normalization::global_minmax;
};

// Grid dimensions the configuration produces for a packet of the given size.
inline std::pair<int, int> representation_dims(const RepresentationConfig& rc, std::size_t packet_len, double fs) {
    validate(rc.stft);
    if (packet_len < rc.stft.window_len)
        throw std::invalid_argument("representation_dims: packet shorter than the STFT window");
    const std::size_t len = rc.stft.window_len;
    int frames = static_cast<int>((packet_len - len) / rc.stft.hop_len + 1);
    int bins = static_cast<int>(len);
    if (rc.stft.crop_band_hz) {
        bins = 0;
        for (std::size_t b = 0; b < len; ++b) {
            const double f = (static_cast<double>(b) - static_cast<double>(len) / 2.0) * fs / static_cast<double>(len);
            if (f >= (*rc.stft.crop_band_hz)[0] && f <= (*rc.stft.crop_band_hz)[1]) ++bins;
        }
        if (bins == 0) throw std::invalid_argument("representation_dims: crop band contains no bins");
    }
    if (rc.kind == Representation::cis) frames -= 1;
    if (frames < 1) throw std::invalid_argument("representation_dims: no time frames");
    return {bins, frames};
}

inline std::vector<float> make_input(const ComplexSignal& sig, const RepresentationConfig& rc) {
    Spectrogram spec = log_spectrogram(sig, rc.stft, Normalization::none);
    if (rc.kind == Representation::cis) spec = cis(spec);
    apply_normalization(spec, rc.normalization);
    std::vector<float> out(spec.values.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<float>(spec.values[i]);
    return out;
}

// ---------------------------------------------------------------------------
// Training configuration and logs
// ---------------------------------------------------------------------------

struct PretrainConfig {
    double lr = 0.001;
    int batch_pairs = 32;
    AugmentationRanges ranges;
    std::uint64_t seed = 1;
    int plateau_patience = 10;
    int stop_patience = 30;
    int max_epochs = 150;
    double val_fraction = 0.1;
    double width_scale = 1.0;
    LossConfig loss;
    RepresentationConfig rep;
};

struct FinetuneConfig {
    double lr = 0.0003;
    int batch_pairs = 32;
    AugmentationRanges ranges;
    int packets_per_device = 0;  // 0 = all available
    bool freeze_extractor = false;
    bool use_contrastive = true;  // false gives the plain (non-Siamese) arm
    std::uint64_t seed = 1;
    int plateau_patience = 10;
    int stop_patience = 30;
    int max_epochs = 150;
    double val_fraction = 0.1;
    double width_scale = 1.0;
    LossConfig loss;
    RepresentationConfig rep;
};

struct EpochLog {
    int epoch = 0;
    double train_loss = 0.0;
    double val_loss = 0.0;
    double lr = 0.0;
};

struct TrainResult {
    Model<float> model;
    std::vector<EpochLog> log;
};

inline void training_log_csv(const std::vector<EpochLog>& log, std::ostream& os) {
    os << "epoch,train_loss,val_loss,lr\n";
    for (const auto& row : log)
        os << row.epoch << ',' << row.train_loss << ',' << row.val_loss << ',' << row.lr << '\n';
}

// Copies extractor tensors between models, validating shapes tensor by
// tensor. The classifier of dst is untouched.
inline void copy_extractor(Model<float>& dst, const Model<float>& src) {
    if (dst.plan.extractor_params != src.plan.extractor_params)
        throw std::invalid_argument("copy_extractor: parameter layouts differ");
    for (std::size_t p = 0; p < dst.plan.extractor_params; ++p) {
        if (dst.params[p].shape != src.params[p].shape)
            throw std::invalid_argument("copy_extractor: tensor shape mismatch at index " + std::to_string(p));
        dst.params[p].values = src.params[p].values;
    }
}

namespace detail {

// Augment + representation for a batch of (store, packet-index, seed) views,
// shard-parallel with per-view seeds so the result is worker-count
// independent.
struct ViewTask {
    const PacketStore* store;
    std::size_t packet_index;
    std::uint64_t seed;
    bool augment_view;
};

inline std::vector<std::vector<float>> realize_views(const std::vector<ViewTask>& tasks,
                                                     const AugmentationRanges& ranges,
                                                     const RepresentationConfig& rep) {
    std::vector<std::vector<float>> out(tasks.size());
    parallel_shards(8, [&](int shard) {
        for (std::size_t i = static_cast<std::size_t>(shard); i < tasks.size(); i += 8) {
            const ComplexSignal packet = tasks[i].store->packet(tasks[i].packet_index);
            const ComplexSignal view =
                tasks[i].augment_view ? augment(packet, ranges, tasks[i].seed) : packet;
            out[i] = make_input(view, rep);
        }
    });
    return out;
}

inline std::vector<std::size_t> seeded_shuffle(std::size_t n, std::uint64_t seed) {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    Rng rng(seed);
    for (std::size_t i = n; i > 1; --i) std::swap(idx[i - 1], idx[rng.uniform_index(i)]);
    return idx;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Stage 1: unsupervised contrastive pretraining
// ---------------------------------------------------------------------------

// Trains the feature extractor on an unlabeled store: every step draws |B|
// packets, augments each twice with independent seeds, and minimizes the
// contrastive loss between the paired views. The classifier head is never
// touched. Deterministic under (config, seed).
inline TrainResult pretrain(const PacketStore& data, const PretrainConfig& cfg) {
    if (data.size() == 0) throw std::invalid_argument("pretrain: dataset is empty");
    validate(cfg.ranges);
    validate(cfg.loss);

    const auto [bins, frames] = representation_dims(cfg.rep, data.packet_len(), data.sample_rate_hz());
    const ArchitectureSpec arch = default_architecture(1, cfg.width_scale, bins, frames);
    Model<float> model = init_model<float>(arch, derive_seed(cfg.seed, 0x1417ull));
    AdamState<float> adam;
    PlateauScheduler sched{cfg.lr, cfg.plateau_patience, cfg.stop_patience};

    // held-out packets for the scheduler signal; falls back to the training
    // packets when the store is too small to split
    auto order = detail::seeded_shuffle(data.size(), derive_seed(cfg.seed, 0x5B117ull));
    const std::size_t val_count = static_cast<std::size_t>(std::floor(cfg.val_fraction * static_cast<double>(data.size())));
    std::vector<std::size_t> val_idx(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(val_count));
    std::vector<std::size_t> train_idx(order.begin() + static_cast<std::ptrdiff_t>(val_count), order.end());
    if (val_idx.empty()) val_idx = train_idx;
    const std::uint64_t view_salt = derive_seed(cfg.seed, 0xDA7Aull);

    TrainResult result{std::move(model), {}};
    double lr = cfg.lr;
    for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
        const auto perm = detail::seeded_shuffle(train_idx.size(), derive_seed(cfg.seed, 0x50ull, static_cast<std::uint64_t>(epoch)));
        double train_loss_sum = 0.0;
        std::size_t steps = 0;
        for (std::size_t start = 0; start < perm.size(); start += static_cast<std::size_t>(cfg.batch_pairs)) {
            const std::size_t count = std::min<std::size_t>(static_cast<std::size_t>(cfg.batch_pairs), perm.size() - start);
            std::vector<detail::ViewTask> tasks;
            tasks.reserve(2 * count);
            for (std::size_t b = 0; b < count; ++b) {
                const std::size_t pkt = train_idx[perm[start + b]];
                for (std::uint64_t v = 0; v < 2; ++v)
                    tasks.push_back({&data, pkt,
                                     derive_seed(view_salt, static_cast<std::uint64_t>(epoch), pkt * 2 + v), true});
            }
            const auto inputs = detail::realize_views(tasks, cfg.ranges, cfg.rep);
            BatchCache<float> cache;
            const auto embeddings = forward_extract(result.model, inputs, cache);
            const auto cl = nt_xent(embeddings, cfg.loss);
            const auto grads =
                backward(result.model, cache, &cl.grads, static_cast<const UpstreamGrads<float>*>(nullptr));
            adam_step(result.model, grads, lr, adam);
            train_loss_sum += cl.loss;
            ++steps;
        }

        // frozen-augmentation validation loss
        double val_loss = 0.0;
        for (std::size_t start = 0; start < val_idx.size(); start += static_cast<std::size_t>(cfg.batch_pairs)) {
            const std::size_t count = std::min<std::size_t>(static_cast<std::size_t>(cfg.batch_pairs), val_idx.size() - start);
            std::vector<detail::ViewTask> tasks;
            for (std::size_t b = 0; b < count; ++b) {
                const std::size_t pkt = val_idx[start + b];
                for (std::uint64_t v = 0; v < 2; ++v)
                    tasks.push_back({&data, pkt, derive_seed(view_salt, 0xFA11ull, pkt * 2 + v), true});
            }
            const auto inputs = detail::realize_views(tasks, cfg.ranges, cfg.rep);
            BatchCache<float> cache;
            const auto embeddings = forward_extract(result.model, inputs, cache);
            val_loss += nt_xent(embeddings, cfg.loss).loss;
        }

        const auto [new_lr, stop] = sched.step(val_loss);
        result.log.push_back({epoch, steps ? train_loss_sum / static_cast<double>(steps) : 0.0, val_loss, lr});
        lr = new_lr;
        if (stop) break;
    }
    return result;
}

// ---------------------------------------------------------------------------
// Stage 2: Siamese fine-tuning on two receivers' stores
// ---------------------------------------------------------------------------

namespace detail {

struct PairSampler {
    // per-label packet indices remaining after subsetting and the val split
    std::vector<std::vector<std::size_t>> rx1_by_label, rx2_by_label;
    std::vector<std::size_t> rx1_train;  // flattened driving list
    std::vector<std::pair<std::size_t, std::size_t>> val_pairs;
    std::vector<int> labels_of_rx1;  // label per rx1 packet index (dense map)
};

inline std::vector<std::vector<std::size_t>> group_by_label(const LabeledPacketStore& store, int num_classes) {
    std::vector<std::vector<std::size_t>> by_label(static_cast<std::size_t>(num_classes));
    for (std::size_t i = 0; i < store.size(); ++i)
        by_label[static_cast<std::size_t>(store.label(i))].push_back(i);
    return by_label;
}

}  // namespace detail

// Joint Siamese training: positive pairs are device-matched packets from the
// two receivers, each augmented once; both views contribute cross-entropy
// terms and the pair is the contrastive positive. When `init` is non-null the
// extractor starts from it (w/ pretrain), otherwise from random init.
inline TrainResult finetune_siamese(const LabeledPacketStore& ds_rx1, const LabeledPacketStore& ds_rx2,
                                    const Model<float>* init, const FinetuneConfig& cfg) {
    validate(cfg.ranges);
    validate(cfg.loss);
    if (ds_rx1.size() == 0 || ds_rx2.size() == 0)
        throw std::invalid_argument("finetune_siamese: empty store");
    const auto labels1 = ds_rx1.label_set();
    const auto labels2 = ds_rx2.label_set();
    if (labels1 != labels2)
        throw std::invalid_argument("finetune_siamese: the two stores cover different device label sets");
    const int num_classes = static_cast<int>(labels1.size());
    for (int k = 0; k < num_classes; ++k)
        if (!labels1.count(k))
            throw std::invalid_argument("finetune_siamese: device labels must be dense in [0, K)");

    const auto [bins, frames] = representation_dims(cfg.rep, ds_rx1.packet_len(), ds_rx1.sample_rate_hz());
    const ArchitectureSpec arch = default_architecture(num_classes, cfg.width_scale, bins, frames);
    Model<float> model = init_model<float>(arch, derive_seed(cfg.seed, 0x1417ull));
    if (init) copy_extractor(model, *init);

    std::vector<bool> trainable(model.params.size(), true);
    if (cfg.freeze_extractor)
        for (std::size_t p = 0; p < model.plan.extractor_params; ++p) trainable[p] = false;

    // subset to packets_per_device per store (seeded, shared across arms),
    // then hold out a stratified validation fraction
    auto by1 = detail::group_by_label(ds_rx1, num_classes);
    auto by2 = detail::group_by_label(ds_rx2, num_classes);
    std::vector<std::vector<std::size_t>> train1(by1.size()), train2(by2.size());
    std::vector<std::pair<std::size_t, std::size_t>> val_pairs;
    Rng partner_rng(derive_seed(cfg.seed, 0xFA12ull));
    for (int lab = 0; lab < num_classes; ++lab) {
        for (int side = 0; side < 2; ++side) {
            auto& pool = side == 0 ? by1[static_cast<std::size_t>(lab)] : by2[static_cast<std::size_t>(lab)];
            if (pool.empty()) throw std::invalid_argument("finetune_siamese: a device has no packets in one store");
            const auto perm = detail::seeded_shuffle(
                pool.size(), derive_seed(cfg.seed, 0x5E7ull, static_cast<std::uint64_t>(lab * 2 + side)));
            std::vector<std::size_t> picked;
            const std::size_t want = cfg.packets_per_device > 0 ? static_cast<std::size_t>(cfg.packets_per_device)
                                                                : pool.size();
            if (want > pool.size())
                throw std::invalid_argument("finetune_siamese: packets_per_device exceeds available packets");
            picked.reserve(want);
            for (std::size_t i = 0; i < want; ++i) picked.push_back(pool[perm[i]]);
            pool = std::move(picked);
        }
        // stratified val split from each device's rx1 packets; partners fixed
        auto& pool1 = by1[static_cast<std::size_t>(lab)];
        auto& pool2 = by2[static_cast<std::size_t>(lab)];
        const std::size_t val_count =
            std::min(pool1.size() - 1, static_cast<std::size_t>(std::ceil(cfg.val_fraction * static_cast<double>(pool1.size()))));
        for (std::size_t i = 0; i < val_count; ++i)
            val_pairs.emplace_back(pool1[pool1.size() - 1 - i], pool2[partner_rng.uniform_index(pool2.size())]);
        train1[static_cast<std::size_t>(lab)].assign(pool1.begin(), pool1.end() - static_cast<std::ptrdiff_t>(val_count));
        train2[static_cast<std::size_t>(lab)] = pool2;
    }

    // driving list: one pass over the smaller side's packets per epoch
    std::vector<std::size_t> drive;  // rx1 packet indices
    for (const auto& v : train1) drive.insert(drive.end(), v.begin(), v.end());
    std::size_t rx2_total = 0;
    for (const auto& v : train2) rx2_total += v.size();
    const std::size_t pairs_per_epoch = std::min(drive.size(), rx2_total);

    AdamState<float> adam;
    PlateauScheduler sched{cfg.lr, cfg.plateau_patience, cfg.stop_patience};
    const std::uint64_t salt1 = derive_seed(cfg.seed, 0xDA7A1ull);
    const std::uint64_t salt2 = derive_seed(cfg.seed, 0xDA7A2ull);

    TrainResult result{std::move(model), {}};
    double lr = cfg.lr;
    for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
        const auto perm = detail::seeded_shuffle(drive.size(), derive_seed(cfg.seed, 0x50ull, static_cast<std::uint64_t>(epoch)));
        Rng epoch_partner_rng(derive_seed(cfg.seed, 0xBEEFull, static_cast<std::uint64_t>(epoch)));
        double train_loss_sum = 0.0;
        std::size_t steps = 0;
        for (std::size_t start = 0; start < pairs_per_epoch; start += static_cast<std::size_t>(cfg.batch_pairs)) {
            const std::size_t count = std::min<std::size_t>(static_cast<std::size_t>(cfg.batch_pairs), pairs_per_epoch - start);
            std::vector<detail::ViewTask> tasks;
            std::vector<int> view_labels;
            tasks.reserve(2 * count);
            for (std::size_t b = 0; b < count; ++b) {
                const std::size_t p1 = drive[perm[start + b]];
                const int lab = ds_rx1.label(p1);
                const auto& pool2 = train2[static_cast<std::size_t>(lab)];
                const std::size_t p2 = pool2[epoch_partner_rng.uniform_index(pool2.size())];
                tasks.push_back({&ds_rx1, p1, derive_seed(salt1, static_cast<std::uint64_t>(epoch), p1), true});
                tasks.push_back({&ds_rx2, p2, derive_seed(salt2, static_cast<std::uint64_t>(epoch), p2), true});
                view_labels.push_back(lab);
                view_labels.push_back(lab);
            }
            const auto inputs = detail::realize_views(tasks, cfg.ranges, cfg.rep);
            BatchCache<float> cache;
            const auto embeddings = forward_extract(result.model, inputs, cache);
            const auto probs = forward_classify(result.model, embeddings, &cache);
            const auto ce = cross_entropy(probs, view_labels);
            double loss = ce.loss;
            std::vector<Tensor<float>> grads;
            if (cfg.use_contrastive) {
                const auto cl = nt_xent(embeddings, cfg.loss);
                loss += cl.loss;
                grads = backward(result.model, cache, &cl.grads, &ce.grad_logits);
            } else {
                grads = backward(result.model, cache, static_cast<const UpstreamGrads<float>*>(nullptr),
                                 &ce.grad_logits);
            }
            adam_step(result.model, grads, lr, adam, &trainable);
            train_loss_sum += loss;
            ++steps;
        }

        // frozen validation pairs and augmentation seeds
        double val_loss = 0.0;
        for (std::size_t start = 0; start < val_pairs.size(); start += static_cast<std::size_t>(cfg.batch_pairs)) {
            const std::size_t count = std::min<std::size_t>(static_cast<std::size_t>(cfg.batch_pairs), val_pairs.size() - start);
            std::vector<detail::ViewTask> tasks;
            std::vector<int> view_labels;
            for (std::size_t b = 0; b < count; ++b) {
                const auto [p1, p2] = val_pairs[start + b];
                tasks.push_back({&ds_rx1, p1, derive_seed(salt1, 0xFA11ull, p1), true});
                tasks.push_back({&ds_rx2, p2, derive_seed(salt2, 0xFA11ull, p2), true});
                view_labels.push_back(ds_rx1.label(p1));
                view_labels.push_back(ds_rx1.label(p1));
            }
            const auto inputs = detail::realize_views(tasks, cfg.ranges, cfg.rep);
            BatchCache<float> cache;
            const auto embeddings = forward_extract(result.model, inputs, cache);
            const auto probs = forward_classify(result.model, embeddings, &cache);
            val_loss += cross_entropy(probs, view_labels).loss;
            if (cfg.use_contrastive) val_loss += nt_xent(embeddings, cfg.loss).loss;
        }

        const auto [new_lr, stop] = sched.step(val_loss);
        result.log.push_back({epoch, steps ? train_loss_sum / static_cast<double>(steps) : 0.0, val_loss, lr});
        lr = new_lr;
        if (stop) break;
    }
    return result;
}

// ---------------------------------------------------------------------------
// Stage 3: inference and evaluation
// ---------------------------------------------------------------------------

struct InferResult {
    int predicted = -1;
    std::vector<float> probs;
};

// Single-branch pass: representation -> extractor -> classifier -> argmax.
// No augmentation at inference time.
inline InferResult infer(const Model<float>& model, const ComplexSignal& signal, const RepresentationConfig& rep) {
    BatchCache<float> cache;
    const auto z = forward_extract(model, {make_input(signal, rep)}, cache);
    const auto probs = forward_classify(model, z);
    InferResult out;
    out.probs = probs[0];
    out.predicted = static_cast<int>(std::max_element(probs[0].begin(), probs[0].end()) - probs[0].begin());
    return out;
}

struct EvalReport {
    double overall_accuracy = 0.0;
    int correct = 0;
    int total = 0;
    std::vector<std::vector<int>> confusion;  // [true][predicted]
    struct Slice {
        int receiver_id = 0;
        ChannelTag tag = ChannelTag::unknown;
        int correct = 0;
        int total = 0;
    };
    std::vector<Slice> slices;
};

inline EvalReport evaluate(const Model<float>& model, const LabeledPacketStore& test, const RepresentationConfig& rep) {
    if (test.size() == 0) throw std::invalid_argument("evaluate: empty store");
    const int k = model.plan.num_classes;
    EvalReport report;
    report.confusion.assign(static_cast<std::size_t>(k), std::vector<int>(static_cast<std::size_t>(k), 0));
    std::map<std::pair<int, ChannelTag>, std::pair<int, int>> slice_map;

    constexpr std::size_t kBatch = 64;
    RepresentationConfig rc = rep;
    for (std::size_t start = 0; start < test.size(); start += kBatch) {
        const std::size_t count = std::min(kBatch, test.size() - start);
        std::vector<detail::ViewTask> tasks;
        for (std::size_t i = 0; i < count; ++i) tasks.push_back({&test, start + i, 0, false});
        AugmentationRanges unused;
        const auto inputs = detail::realize_views(tasks, unused, rc);
        BatchCache<float> cache;
        const auto z = forward_extract(model, inputs, cache);
        const auto probs = forward_classify(model, z);
        for (std::size_t i = 0; i < count; ++i) {
            const std::size_t rec = start + i;
            const int truth = test.label(rec);
            if (truth < 0 || truth >= k)
                throw std::invalid_argument("evaluate: test label " + std::to_string(truth) + " outside [0, K)");
            const int pred =
                static_cast<int>(std::max_element(probs[i].begin(), probs[i].end()) - probs[i].begin());
            report.confusion[static_cast<std::size_t>(truth)][static_cast<std::size_t>(pred)] += 1;
            auto& slice = slice_map[{test.receiver_id(rec), test.channel_tag(rec)}];
            slice.second += 1;
            if (pred == truth) {
                slice.first += 1;
                report.correct += 1;
            }
            report.total += 1;
        }
    }
    report.overall_accuracy = static_cast<double>(report.correct) / static_cast<double>(report.total);
    for (const auto& [key, counts] : slice_map)
        report.slices.push_back({key.first, key.second, counts.first, counts.second});
    return report;
}

inline void eval_report_csv(const EvalReport& r, std::ostream& os) {
    os << "receiver_id,channel_tag,correct,total,accuracy\n";
    os << "all,all," << r.correct << ',' << r.total << ',' << r.overall_accuracy << '\n';
    for (const auto& s : r.slices)
        os << s.receiver_id << ',' << to_string(s.tag) << ',' << s.correct << ',' << s.total << ','
           << (s.total ? static_cast<double>(s.correct) / s.total : 0.0) << '\n';
}

inline void confusion_csv(const EvalReport& r, std::ostream& os) {
    for (std::size_t t = 0; t < r.confusion.size(); ++t) {
        for (std::size_t p = 0; p < r.confusion[t].size(); ++p) {
            if (p) os << ',';
            os << r.confusion[t][p];
        }
        os << '\n';
    }
}

}  // namespace rffi
