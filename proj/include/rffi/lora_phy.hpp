#pragma once

#include <cmath>
#include <complex>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace rffi {

// Uniformly sampled complex baseband sequence; the carrier type every stage
// of the chain (synthesis, impairments, channel, representation) consumes.
struct ComplexSignal {
    std::vector<std::complex<double>> samples;
    double sample_rate_hz = 0.0;
};

// LoRa preamble chirp parameters. Defaults are SF7 at B = 125 kHz sampled at
// 1 MHz: T = 2^7 / B = 1.024 ms, 1024 samples per symbol, 8 preambles.
struct ChirpParams {
    double amplitude = 1.0;
    double bandwidth_hz = 125e3;
    double symbol_duration_s = 1.024e-3;
    double sample_rate_hz = 1e6;
    int preamble_count = 8;
};

inline std::size_t samples_per_symbol(const ChirpParams& p) {
    return static_cast<std::size_t>(std::llround(p.symbol_duration_s * p.sample_rate_hz));
}

inline void validate(const ChirpParams& p) {
    if (!(p.amplitude > 0.0))
        throw std::invalid_argument("ChirpParams: amplitude must be > 0");
    if (!(p.bandwidth_hz > 0.0))
        throw std::invalid_argument("ChirpParams: bandwidth_hz must be > 0");
    if (!(p.symbol_duration_s > 0.0))
        throw std::invalid_argument("ChirpParams: symbol_duration_s must be > 0");
    if (!(p.sample_rate_hz >= 2.0 * p.bandwidth_hz))
        throw std::invalid_argument("ChirpParams: sample_rate_hz must be >= 2*bandwidth_hz");
    const double n = p.symbol_duration_s * p.sample_rate_hz;
    if (std::abs(n - std::llround(n)) > 1e-6)
        throw std::invalid_argument(
            "ChirpParams: symbol_duration_s * sample_rate_hz must be a whole number of samples");
    if (p.preamble_count < 1)
        throw std::invalid_argument("ChirpParams: preamble_count must be a positive integer");
}

// One baseband preamble symbol. Instantaneous frequency sweeps linearly from
// -B/2 at t=0 to +B/2 at t=T:
//   s(t) = A * exp(j(-pi*B*t + pi*(B/T)*t^2)),  t = n / fs
// The modulus is A for every sample (constant envelope). noinline keeps one
// machine-code instance so synthesis is bit-identical across call sites.
[[gnu::noinline]] inline ComplexSignal synthesize_preamble(const ChirpParams& p) {
    validate(p);
    const std::size_t n = samples_per_symbol(p);
    ComplexSignal out;
    out.sample_rate_hz = p.sample_rate_hz;
    out.samples.resize(n);
    const double pi = 3.14159265358979323846;
    for (std::size_t i = 0; i < n; ++i) {
        const double t = static_cast<double>(i) / p.sample_rate_hz;
        const double phase = -pi * p.bandwidth_hz * t + pi * (p.bandwidth_hz / p.symbol_duration_s) * t * t;
        out.samples[i] = std::polar(p.amplitude, phase);
    }
    return out;
}

// preamble_count identical preamble symbols back to back; the phase restarts
// at every symbol boundary, so the packet is periodic with the symbol length.
inline ComplexSignal synthesize_packet(const ChirpParams& p) {
    ComplexSignal symbol = synthesize_preamble(p);
    const std::size_t n = symbol.samples.size();
    ComplexSignal out;
    out.sample_rate_hz = p.sample_rate_hz;
    out.samples.resize(n * static_cast<std::size_t>(p.preamble_count));
    for (int k = 0; k < p.preamble_count; ++k)
        for (std::size_t i = 0; i < n; ++i)
            out.samples[static_cast<std::size_t>(k) * n + i] = symbol.samples[i];
    return out;
}

}  // namespace rffi
