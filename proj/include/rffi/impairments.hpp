#pragma once

#include <array>
#include <cmath>
#include <complex>
#include <cstdint>
#include <numbers>
#include <stdexcept>
#include <vector>

#include "rffi/lora_phy.hpp"
#include "rffi/rng.hpp"

namespace rffi {

// Transmitter fingerprint of one device: CFO, IQ imbalance, and a memoryless
// odd-order PA nonlinearity
//   y = x * (1 + a3*e^{j p3}*|x|^2 + a5*e^{j p5}*|x|^4).
struct DeviceProfile {
    int device_id = 0;
    double cfo_hz = 0.0;
    double iq_gain_imbalance_db = 0.0;
    double iq_phase_imbalance_rad = 0.0;
    std::array<double, 4> pa_coeffs{0.0, 0.0, 0.0, 0.0};  // a3_amp, a3_phase, a5_amp, a5_phase
    std::uint64_t seed = 0;
};

// Receiver front end: short unit-energy ripple FIR plus the receiver's own
// CFO and IQ imbalance.
struct ReceiverProfile {
    int receiver_id = 0;
    std::vector<std::complex<double>> ripple_response{{1.0, 0.0}};
    double rx_cfo_hz = 0.0;
    double rx_iq_gain_db = 0.0;
    double rx_iq_phase_rad = 0.0;
    std::uint64_t seed = 0;
};

inline void validate(const DeviceProfile& p, double bandwidth_hz = 125e3) {
    if (!(std::abs(p.cfo_hz) < bandwidth_hz / 4.0))
        throw std::invalid_argument("DeviceProfile: |cfo_hz| must be < bandwidth/4");
    if (std::abs(p.iq_gain_imbalance_db) > 1.0)
        throw std::invalid_argument("DeviceProfile: |iq_gain_imbalance_db| must be <= 1.0");
    if (std::abs(p.iq_phase_imbalance_rad) > 0.1)
        throw std::invalid_argument("DeviceProfile: |iq_phase_imbalance_rad| must be <= 0.1");
    if (std::abs(p.pa_coeffs[0]) > 0.1 || std::abs(p.pa_coeffs[2]) > 0.1)
        throw std::invalid_argument("DeviceProfile: |a3_amp| and |a5_amp| must be <= 0.1");
}

inline void validate(const ReceiverProfile& p, double bandwidth_hz = 125e3) {
    if (p.ripple_response.empty() || p.ripple_response.size() > 5)
        throw std::invalid_argument("ReceiverProfile: ripple_response length must be in [1, 5]");
    double energy = 0.0;
    for (const auto& g : p.ripple_response) energy += std::norm(g);
    if (std::abs(energy - 1.0) > 1e-9)
        throw std::invalid_argument("ReceiverProfile: ripple_response must have unit energy");
    if (!(std::abs(p.rx_cfo_hz) < bandwidth_hz / 4.0))
        throw std::invalid_argument("ReceiverProfile: |rx_cfo_hz| must be < bandwidth/4");
    if (std::abs(p.rx_iq_gain_db) > 1.0)
        throw std::invalid_argument("ReceiverProfile: |rx_iq_gain_db| must be <= 1.0");
    if (std::abs(p.rx_iq_phase_rad) > 0.1)
        throw std::invalid_argument("ReceiverProfile: |rx_iq_phase_rad| must be <= 0.1");
}

namespace detail {

// Gain g (linear) applied to the Q branch together with a phase skew of the
// quadrature axis: I' = I, Q' = g*(Q*cos(phi) + I*sin(phi)).
inline std::complex<double> iq_imbalance(std::complex<double> x, double gain_db, double phase_rad) {
    const double g = std::pow(10.0, gain_db / 20.0);
    const double c = std::cos(phase_rad);
    const double s = std::sin(phase_rad);
    return {x.real(), g * (x.imag() * c + x.real() * s)};
}

inline void apply_cfo(std::vector<std::complex<double>>& x, double cfo_hz, double fs) {
    if (cfo_hz == 0.0) return;
    const double w = 2.0 * std::numbers::pi * cfo_hz / fs;
    for (std::size_t n = 0; n < x.size(); ++n)
        x[n] *= std::polar(1.0, w * static_cast<double>(n));
}

}  // namespace detail

// TX chain in fixed order: PA nonlinearity, then IQ imbalance, then CFO.
inline ComplexSignal apply_tx_impairments(const ComplexSignal& signal, const DeviceProfile& profile) {
    if (signal.samples.empty())
        throw std::invalid_argument("apply_tx_impairments: signal must be non-empty");
    const std::complex<double> k3 = std::polar(profile.pa_coeffs[0], profile.pa_coeffs[1]);
    const std::complex<double> k5 = std::polar(profile.pa_coeffs[2], profile.pa_coeffs[3]);
    ComplexSignal out;
    out.sample_rate_hz = signal.sample_rate_hz;
    out.samples.resize(signal.samples.size());
    for (std::size_t n = 0; n < signal.samples.size(); ++n) {
        const std::complex<double> x = signal.samples[n];
        const double p = std::norm(x);
        const std::complex<double> y = x * (1.0 + k3 * p + k5 * p * p);
        out.samples[n] = detail::iq_imbalance(y, profile.iq_gain_imbalance_db, profile.iq_phase_imbalance_rad);
    }
    detail::apply_cfo(out.samples, profile.cfo_hz, signal.sample_rate_hz);
    return out;
}

// RX chain: ripple FIR (same-length output, zero-padded leading edge), then
// RX IQ imbalance, then RX CFO.
inline ComplexSignal apply_rx_impairments(const ComplexSignal& signal, const ReceiverProfile& profile) {
    if (signal.samples.size() <= profile.ripple_response.size())
        throw std::invalid_argument("apply_rx_impairments: signal shorter than ripple FIR");
    const std::size_t n = signal.samples.size();
    const std::size_t taps = profile.ripple_response.size();
    ComplexSignal out;
    out.sample_rate_hz = signal.sample_rate_hz;
    out.samples.assign(n, {0.0, 0.0});
    for (std::size_t i = 0; i < n; ++i) {
        std::complex<double> acc{0.0, 0.0};
        const std::size_t lmax = std::min(taps - 1, i);
        for (std::size_t l = 0; l <= lmax; ++l)
            acc += profile.ripple_response[l] * signal.samples[i - l];
        out.samples[i] = detail::iq_imbalance(acc, profile.rx_iq_gain_db, profile.rx_iq_phase_rad);
    }
    detail::apply_cfo(out.samples, profile.rx_cfo_hz, signal.sample_rate_hz);
    return out;
}

// Deterministic synthetic device population. `spread` in (0, 1] scales every
// impairment magnitude, so the separability of the classification task is a
// single knob. CFOs are kHz-scale at spread = 1.
inline std::vector<DeviceProfile> sample_device_profiles(int count, std::uint64_t seed, double spread,
                                                         double bandwidth_hz = 125e3) {
    if (count < 2)
        throw std::invalid_argument("sample_device_profiles: count must be >= 2");
    if (!(spread > 0.0 && spread <= 1.0))
        throw std::invalid_argument("sample_device_profiles: spread must be in (0, 1]");
    std::vector<DeviceProfile> out;
    out.reserve(static_cast<std::size_t>(count));
    const double pi = std::numbers::pi;
    for (int k = 0; k < count; ++k) {
        Rng rng(derive_seed(seed, 0x5eedDE5Cull, static_cast<std::uint64_t>(k)));
        DeviceProfile p;
        p.device_id = k;
        p.seed = derive_seed(seed, 0x5eedDE5Cull, static_cast<std::uint64_t>(k));
        // Spread the population over +/- 0.64*B/4 so that the invariant
        // |cfo| < B/4 holds with margin for any spread.
        p.cfo_hz = spread * rng.uniform(-0.16 * bandwidth_hz, 0.16 * bandwidth_hz);
        p.iq_gain_imbalance_db = spread * rng.uniform(-0.9, 0.9);
        p.iq_phase_imbalance_rad = spread * rng.uniform(-0.09, 0.09);
        p.pa_coeffs = {spread * rng.uniform(0.01, 0.08), rng.uniform(-pi, pi),
                       spread * rng.uniform(0.005, 0.04), rng.uniform(-pi, pi)};
        validate(p, bandwidth_hz);
        out.push_back(p);
    }
    return out;
}

// Synthetic receiver population; magnitudes sit below typical device spreads
// so receivers perturb rather than dominate the fingerprint.
inline std::vector<ReceiverProfile> sample_receiver_profiles(int count, std::uint64_t seed, double spread,
                                                             double bandwidth_hz = 125e3) {
    if (count < 1)
        throw std::invalid_argument("sample_receiver_profiles: count must be >= 1");
    if (!(spread > 0.0 && spread <= 1.0))
        throw std::invalid_argument("sample_receiver_profiles: spread must be in (0, 1]");
    std::vector<ReceiverProfile> out;
    out.reserve(static_cast<std::size_t>(count));
    const double pi = std::numbers::pi;
    for (int k = 0; k < count; ++k) {
        Rng rng(derive_seed(seed, 0x5eedFECEull, static_cast<std::uint64_t>(k)));
        ReceiverProfile p;
        p.receiver_id = k;
        p.seed = derive_seed(seed, 0x5eedFECEull, static_cast<std::uint64_t>(k));
        p.ripple_response = {{1.0, 0.0},
                             std::polar(spread * rng.uniform(0.05, 0.25), rng.uniform(-pi, pi)),
                             std::polar(spread * rng.uniform(0.02, 0.12), rng.uniform(-pi, pi))};
        double energy = 0.0;
        for (const auto& g : p.ripple_response) energy += std::norm(g);
        for (auto& g : p.ripple_response) g /= std::sqrt(energy);
        p.rx_cfo_hz = spread * rng.uniform(-0.04 * bandwidth_hz, 0.04 * bandwidth_hz);
        p.rx_iq_gain_db = spread * rng.uniform(-0.5, 0.5);
        p.rx_iq_phase_rad = spread * rng.uniform(-0.05, 0.05);
        validate(p, bandwidth_hz);
        out.push_back(p);
    }
    return out;
}

}  // namespace rffi
