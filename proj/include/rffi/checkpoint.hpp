#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "rffi/nn.hpp"

namespace rffi {

// Versioned binary model container: magic, version, architecture spec, then
// the parameter tensors as little-endian 32-bit floats in declaration order.
// Round-trips bitwise. An extractor checkpoint omits the classifier pair.

static_assert(std::endian::native == std::endian::little,
              "checkpoint format is little-endian; big-endian hosts are unsupported");

namespace detail {

constexpr char kCheckpointMagic[8] = {'R', 'F', 'F', 'I', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kCheckpointVersion = 1;

template <typename V>
void write_pod(std::ostream& os, const V& v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(V));
}

template <typename V>
V read_pod(std::istream& is) {
    V v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(V));
    if (!is) throw std::runtime_error("checkpoint: truncated file");
    return v;
}

}  // namespace detail

struct LoadedCheckpoint {
    Model<float> model;
    bool has_classifier = false;
};

template <typename T>
void save_checkpoint(const std::string& path, const Model<T>& m, bool include_classifier) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("checkpoint: cannot open for writing: " + path);
    os.write(detail::kCheckpointMagic, sizeof(detail::kCheckpointMagic));
    detail::write_pod(os, detail::kCheckpointVersion);
    detail::write_pod(os, static_cast<std::uint8_t>(include_classifier ? 1 : 0));

    const ArchitectureSpec& a = m.arch;
    detail::write_pod(os, static_cast<std::uint32_t>(a.input_bins));
    detail::write_pod(os, static_cast<std::uint32_t>(a.input_frames));
    detail::write_pod(os, static_cast<std::uint32_t>(a.num_classes));
    detail::write_pod(os, static_cast<std::uint32_t>(a.dense_sizes[0]));
    detail::write_pod(os, static_cast<std::uint32_t>(a.dense_sizes[1]));
    detail::write_pod(os, a.width_scale);
    detail::write_pod(os, static_cast<std::uint32_t>(a.conv_stages.size()));
    for (const auto& s : a.conv_stages) {
        detail::write_pod(os, static_cast<std::int32_t>(s.kernel_h));
        detail::write_pod(os, static_cast<std::int32_t>(s.kernel_w));
        detail::write_pod(os, static_cast<std::int32_t>(s.channels));
        detail::write_pod(os, static_cast<std::int32_t>(s.stride));
    }
    detail::write_pod(os, static_cast<std::uint32_t>(a.skip_connections.size()));
    for (const auto& s : a.skip_connections) {
        detail::write_pod(os, static_cast<std::int32_t>(s.from));
        detail::write_pod(os, static_cast<std::int32_t>(s.to));
    }

    const std::size_t tensor_count = include_classifier ? m.params.size() : m.plan.extractor_params;
    detail::write_pod(os, static_cast<std::uint32_t>(tensor_count));
    for (std::size_t p = 0; p < tensor_count; ++p) {
        const auto& t = m.params[p];
        detail::write_pod(os, static_cast<std::uint32_t>(t.shape.size()));
        for (const auto d : t.shape) detail::write_pod(os, static_cast<std::uint64_t>(d));
        for (const auto v : t.values) detail::write_pod(os, static_cast<float>(v));
    }
    if (!os) throw std::runtime_error("checkpoint: write failed: " + path);
}

inline LoadedCheckpoint load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("checkpoint: cannot open: " + path);
    char magic[8];
    is.read(magic, sizeof(magic));
    if (!is || std::memcmp(magic, detail::kCheckpointMagic, sizeof(magic)) != 0)
        throw std::runtime_error("checkpoint: bad magic in " + path);
    const auto version = detail::read_pod<std::uint32_t>(is);
    if (version != detail::kCheckpointVersion)
        throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));
    const bool has_classifier = detail::read_pod<std::uint8_t>(is) != 0;

    ArchitectureSpec a;
    a.input_bins = static_cast<int>(detail::read_pod<std::uint32_t>(is));
    a.input_frames = static_cast<int>(detail::read_pod<std::uint32_t>(is));
    a.num_classes = static_cast<int>(detail::read_pod<std::uint32_t>(is));
    a.dense_sizes = {static_cast<int>(detail::read_pod<std::uint32_t>(is)),
                     static_cast<int>(detail::read_pod<std::uint32_t>(is))};
    a.width_scale = detail::read_pod<double>(is);
    const auto n_conv = detail::read_pod<std::uint32_t>(is);
    a.conv_stages.resize(n_conv);
    for (auto& s : a.conv_stages) {
        s.kernel_h = detail::read_pod<std::int32_t>(is);
        s.kernel_w = detail::read_pod<std::int32_t>(is);
        s.channels = detail::read_pod<std::int32_t>(is);
        s.stride = detail::read_pod<std::int32_t>(is);
    }
    const auto n_skip = detail::read_pod<std::uint32_t>(is);
    a.skip_connections.resize(n_skip);
    for (auto& s : a.skip_connections) {
        s.from = detail::read_pod<std::int32_t>(is);
        s.to = detail::read_pod<std::int32_t>(is);
    }

    LoadedCheckpoint out;
    out.has_classifier = has_classifier;
    out.model = init_model<float>(a, 0);
    const auto tensor_count = detail::read_pod<std::uint32_t>(is);
    const std::size_t expected = has_classifier ? out.model.params.size() : out.model.plan.extractor_params;
    if (tensor_count != expected)
        throw std::runtime_error("checkpoint: tensor count does not match architecture");
    for (std::size_t p = 0; p < tensor_count; ++p) {
        auto& t = out.model.params[p];
        const auto ndim = detail::read_pod<std::uint32_t>(is);
        std::vector<std::size_t> shape(ndim);
        for (auto& d : shape) d = static_cast<std::size_t>(detail::read_pod<std::uint64_t>(is));
        if (shape != t.shape) throw std::runtime_error("checkpoint: tensor shape mismatch");
        for (auto& v : t.values) v = detail::read_pod<float>(is);
    }
    if (!has_classifier) {
        // classifier stays at its deterministic init for seed 0; callers
        // overwrite it before use
        for (std::size_t p = out.model.plan.extractor_params; p < out.model.params.size(); ++p)
            for (auto& v : out.model.params[p].values) v = 0.0f;
    }
    return out;
}

}  // namespace rffi
