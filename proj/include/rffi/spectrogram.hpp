#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <cstddef>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <vector>

#include "rffi/fft.hpp"
#include "rffi/lora_phy.hpp"

namespace rffi {

enum class WindowKind { rectangular, hann };
enum class Normalization { none, global_minmax, per_sample_zscore };

// STFT analysis parameters. The defaults target the 8-preamble SF7 packet:
// 128/64 hann frames give a 127-frame grid, and the +/-94 kHz crop keeps the
// 25 bins covering the +/-62.5 kHz sweep plus CFO guard.
struct StftConfig {
    std::size_t window_len = 128;
    std::size_t hop_len = 64;
    WindowKind window_kind = WindowKind::hann;
    std::optional<std::array<double, 2>> crop_band_hz = std::array<double, 2>{-94e3, 94e3};
};

inline void validate(const StftConfig& cfg) {
    if (cfg.hop_len == 0 || cfg.hop_len > cfg.window_len)
        throw std::invalid_argument("StftConfig: hop_len must satisfy 0 < hop_len <= window_len");
    if (cfg.window_len == 0 || (cfg.window_len & (cfg.window_len - 1)) != 0)
        throw std::invalid_argument("StftConfig: window_len must be a power of two");
}

// Complex STFT grid, frequency axis DC-centered (two-sided), row-major
// [bin][frame].
struct ComplexGrid {
    std::size_t bins = 0;
    std::size_t frames = 0;
    std::vector<std::complex<double>> values;
    std::vector<double> freq_axis_hz;
    std::vector<double> time_axis_s;

    std::complex<double>& at(std::size_t b, std::size_t f) { return values[b * frames + f]; }
    const std::complex<double>& at(std::size_t b, std::size_t f) const { return values[b * frames + f]; }
};

// Real log-magnitude grid, row-major [bin][frame].
struct Spectrogram {
    std::size_t bins = 0;
    std::size_t frames = 0;
    std::vector<double> values;
    std::vector<double> freq_axis_hz;
    std::vector<double> time_axis_s;
    Normalization normalization = Normalization::none;

    double& at(std::size_t b, std::size_t f) { return values[b * frames + f]; }
    const double& at(std::size_t b, std::size_t f) const { return values[b * frames + f]; }
};

inline std::vector<double> make_window(WindowKind kind, std::size_t len) {
    std::vector<double> w(len, 1.0);
    if (kind == WindowKind::hann) {
        const double pi = 3.14159265358979323846;
        for (std::size_t n = 0; n < len; ++n)
            w[n] = 0.5 * (1.0 - std::cos(2.0 * pi * static_cast<double>(n) / static_cast<double>(len)));
    }
    return w;
}

// Frame m covers samples [m*hop, m*hop + window_len); windowed DFT per frame,
// bins fftshifted so bin b maps to (b - L/2) * fs / L.
inline ComplexGrid stft(const ComplexSignal& signal, const StftConfig& cfg) {
    validate(cfg);
    const std::size_t n = signal.samples.size();
    if (n < cfg.window_len)
        throw std::invalid_argument("stft: signal shorter than window_len");
    const std::size_t len = cfg.window_len;
    const std::size_t frames = (n - len) / cfg.hop_len + 1;
    const std::vector<double> window = make_window(cfg.window_kind, len);

    ComplexGrid grid;
    grid.bins = len;
    grid.frames = frames;
    grid.values.resize(len * frames);
    grid.freq_axis_hz.resize(len);
    grid.time_axis_s.resize(frames);
    for (std::size_t b = 0; b < len; ++b)
        grid.freq_axis_hz[b] =
            (static_cast<double>(b) - static_cast<double>(len) / 2.0) * signal.sample_rate_hz / static_cast<double>(len);

    std::vector<std::complex<double>> frame(len);
    for (std::size_t m = 0; m < frames; ++m) {
        const std::size_t start = m * cfg.hop_len;
        grid.time_axis_s[m] = (static_cast<double>(start) + static_cast<double>(len) / 2.0) / signal.sample_rate_hz;
        for (std::size_t i = 0; i < len; ++i) frame[i] = signal.samples[start + i] * window[i];
        fft_inplace(frame, false);
        // fftshift: centered bin b holds FFT index (b + len/2) mod len
        for (std::size_t b = 0; b < len; ++b) grid.at(b, m) = frame[(b + len / 2) % len];
    }
    return grid;
}

inline void apply_normalization(Spectrogram& spec, Normalization norm) {
    if (norm == Normalization::none) {
        spec.normalization = Normalization::none;
        return;
    }
    if (spec.values.empty()) throw std::invalid_argument("apply_normalization: empty spectrogram");
    if (norm == Normalization::global_minmax) {
        const auto [mn_it, mx_it] = std::minmax_element(spec.values.begin(), spec.values.end());
        const double mn = *mn_it, mx = *mx_it;
        const double span = (mx > mn) ? (mx - mn) : 1.0;
        for (auto& v : spec.values) v = (v - mn) / span;
    } else {
        double mean = 0.0;
        for (const double v : spec.values) mean += v;
        mean /= static_cast<double>(spec.values.size());
        double var = 0.0;
        for (const double v : spec.values) var += (v - mean) * (v - mean);
        var /= static_cast<double>(spec.values.size());
        const double sd = var > 0.0 ? std::sqrt(var) : 1.0;
        for (auto& v : spec.values) v = (v - mean) / sd;
    }
    spec.normalization = norm;
}

// Natural log of |STFT| with a 1e-12 floor added before the log, optional
// band crop, optional normalization last.
inline Spectrogram log_spectrogram(const ComplexSignal& signal, const StftConfig& cfg,
                                   Normalization norm = Normalization::none) {
    const ComplexGrid grid = stft(signal, cfg);

    std::size_t b_lo = 0, b_hi = grid.bins;
    if (cfg.crop_band_hz) {
        const double lo = (*cfg.crop_band_hz)[0], hi = (*cfg.crop_band_hz)[1];
        while (b_lo < grid.bins && grid.freq_axis_hz[b_lo] < lo) ++b_lo;
        while (b_hi > b_lo && grid.freq_axis_hz[b_hi - 1] > hi) --b_hi;
        if (b_lo >= b_hi) throw std::invalid_argument("log_spectrogram: crop band contains no bins");
    }

    constexpr double kLogFloor = 1e-12;
    Spectrogram spec;
    spec.bins = b_hi - b_lo;
    spec.frames = grid.frames;
    spec.values.resize(spec.bins * spec.frames);
    spec.freq_axis_hz.assign(grid.freq_axis_hz.begin() + static_cast<std::ptrdiff_t>(b_lo),
                             grid.freq_axis_hz.begin() + static_cast<std::ptrdiff_t>(b_hi));
    spec.time_axis_s = grid.time_axis_s;
    for (std::size_t b = 0; b < spec.bins; ++b)
        for (std::size_t f = 0; f < spec.frames; ++f)
            spec.at(b, f) = std::log(std::abs(grid.at(b_lo + b, f)) + kLogFloor);
    apply_normalization(spec, norm);
    return spec;
}

// Channel-independent spectrogram: log-domain difference of adjacent columns
// (the linear-domain quotient), which cancels time-stationary multiplicative
// channel and receiver terms. Input must be unnormalized log magnitudes.
inline Spectrogram cis(const Spectrogram& spec) {
    if (spec.frames < 2) throw std::invalid_argument("cis: spectrogram needs at least 2 time frames");
    if (spec.normalization != Normalization::none)
        throw std::invalid_argument("cis: input must be unnormalized (log-domain) values");
    Spectrogram out;
    out.bins = spec.bins;
    out.frames = spec.frames - 1;
    out.values.resize(out.bins * out.frames);
    out.freq_axis_hz = spec.freq_axis_hz;
    out.time_axis_s.assign(spec.time_axis_s.begin(), spec.time_axis_s.end() - 1);
    for (std::size_t b = 0; b < out.bins; ++b)
        for (std::size_t f = 0; f < out.frames; ++f)
            out.at(b, f) = spec.at(b, f + 1) - spec.at(b, f);
    return out;
}

// CSV grid, frequency rows by time columns.
inline void spectrogram_to_csv(const Spectrogram& spec, std::ostream& os) {
    for (std::size_t b = 0; b < spec.bins; ++b) {
        for (std::size_t f = 0; f < spec.frames; ++f) {
            if (f) os << ',';
            os << spec.at(b, f);
        }
        os << '\n';
    }
}

}  // namespace rffi
