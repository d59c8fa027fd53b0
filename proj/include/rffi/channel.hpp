#pragma once

#include <array>
#include <cmath>
#include <complex>
#include <cstdint>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <vector>

#include "rffi/fft.hpp"
#include "rffi/lora_phy.hpp"
#include "rffi/rng.hpp"

namespace rffi {

// Augmentation parameter ranges of the training-time channel sampler.
// Defaults follow the training setup: RMS delay spread in [5, 300] ns,
// Doppler in [0, 5] Hz, SNR in [10, 40] dB.
struct AugmentationRanges {
    std::array<double, 2> rms_delay_spread_ns{5.0, 300.0};
    std::array<double, 2> doppler_hz{0.0, 5.0};
    std::array<double, 2> snr_db{10.0, 40.0};
};

inline void validate(const AugmentationRanges& r) {
    if (!(r.rms_delay_spread_ns[0] > 0.0) || r.rms_delay_spread_ns[0] > r.rms_delay_spread_ns[1])
        throw std::invalid_argument("AugmentationRanges: rms_delay_spread_ns must satisfy 0 < lo <= hi");
    if (r.doppler_hz[0] < 0.0 || r.doppler_hz[0] > r.doppler_hz[1])
        throw std::invalid_argument("AugmentationRanges: doppler_hz must satisfy 0 <= lo <= hi");
    if (r.snr_db[0] > r.snr_db[1])
        throw std::invalid_argument("AugmentationRanges: snr_db must satisfy lo <= hi");
}

// One tap's complex gain over the packet. A single stored value means the tap
// is static. Time-varying taps store the Jakes process sampled on a coarse
// grid (>= 64 points per Doppler period) with linear interpolation between
// grid points; the interpolated series IS the gain process by definition, and
// apply_channel reproduces it exactly.
struct TapGainProcess {
    std::vector<std::complex<double>> coarse{{0.0, 0.0}};
    std::size_t coarse_step = 0;  // samples between coarse points; 0 for static

    bool is_static() const { return coarse.size() == 1; }

    std::complex<double> at(std::size_t n) const {
        if (is_static()) return coarse[0];
        const std::size_t c = n / coarse_step;
        if (c + 1 >= coarse.size()) return coarse.back();
        const double frac = static_cast<double>(n - c * coarse_step) / static_cast<double>(coarse_step);
        return coarse[c] + (coarse[c + 1] - coarse[c]) * frac;
    }
};

// Full description of h(t) and n(t) for one packet: tap delays and gain
// processes, the Doppler rate they were generated with, and the SNR the AWGN
// stage should realize.
struct ChannelRealization {
    std::vector<double> tap_delays_s;
    std::vector<TapGainProcess> tap_gains;
    double doppler_hz = 0.0;
    double snr_db = std::numeric_limits<double>::infinity();
    std::uint64_t seed = 0;
    std::size_t packet_len = 0;
    double sample_rate_hz = 0.0;

    bool is_static() const {
        for (const auto& g : tap_gains)
            if (!g.is_static()) return false;
        return true;
    }
};

// Static channel from explicit taps, for tests and the clean generation path.
inline ChannelRealization make_static_channel(std::vector<double> delays_s,
                                              std::vector<std::complex<double>> gains, double fs) {
    if (delays_s.size() != gains.size() || delays_s.empty())
        throw std::invalid_argument("make_static_channel: delays and gains must be non-empty and equal length");
    ChannelRealization ch;
    ch.tap_delays_s = std::move(delays_s);
    ch.sample_rate_hz = fs;
    ch.tap_gains.resize(gains.size());
    for (std::size_t l = 0; l < gains.size(); ++l) ch.tap_gains[l].coarse = {gains[l]};
    return ch;
}

namespace detail {

constexpr int kTapCount = 16;
constexpr int kJakesScatterers = 32;
constexpr int kCoarsePointsPerDopplerPeriod = 64;

}  // namespace detail

// Draw one TDL realization. Taps sit at l * tau_rms/2 for l = 0..15 with mean
// powers proportional to exp(-tau_l / tau_rms), normalized to unit channel
// energy; the 16-tap discretization realizes an RMS delay spread of
// 0.979 * tau_rms. Gains are Rayleigh (complex Gaussian) when the drawn
// Doppler is zero, otherwise each tap evolves as an independent Clarke
// sum-of-sinusoids process with 32 scatterers.
inline ChannelRealization sample_channel(const AugmentationRanges& ranges, std::uint64_t seed,
                                         std::size_t packet_len, double fs) {
    validate(ranges);
    if (packet_len == 0) throw std::invalid_argument("sample_channel: packet_len must be > 0");
    Rng rng(derive_seed(seed, 0xC4A2ull));

    ChannelRealization ch;
    ch.seed = seed;
    ch.packet_len = packet_len;
    ch.sample_rate_hz = fs;

    const double tau_rms = 1e-9 * rng.uniform(ranges.rms_delay_spread_ns[0], ranges.rms_delay_spread_ns[1]);
    const double fd = rng.uniform(ranges.doppler_hz[0], ranges.doppler_hz[1]);
    ch.snr_db = rng.uniform(ranges.snr_db[0], ranges.snr_db[1]);
    ch.doppler_hz = fd;

    ch.tap_delays_s.resize(detail::kTapCount);
    std::vector<double> power(detail::kTapCount);
    double power_sum = 0.0;
    for (int l = 0; l < detail::kTapCount; ++l) {
        ch.tap_delays_s[static_cast<std::size_t>(l)] = static_cast<double>(l) * tau_rms / 2.0;
        power[static_cast<std::size_t>(l)] = std::exp(-static_cast<double>(l) / 2.0);
        power_sum += power[static_cast<std::size_t>(l)];
    }
    for (auto& p : power) p /= power_sum;

    ch.tap_gains.resize(detail::kTapCount);
    if (fd <= 0.0) {
        for (int l = 0; l < detail::kTapCount; ++l) {
            const double a = std::sqrt(power[static_cast<std::size_t>(l)]);
            ch.tap_gains[static_cast<std::size_t>(l)].coarse = {a * rng.cnormal()};
        }
        return ch;
    }

    const double step_f = fs / (fd * detail::kCoarsePointsPerDopplerPeriod);
    const std::size_t step = std::max<std::size_t>(1, static_cast<std::size_t>(step_f));
    const std::size_t coarse_count = (packet_len - 1) / step + 2;
    for (int l = 0; l < detail::kTapCount; ++l) {
        auto& proc = ch.tap_gains[static_cast<std::size_t>(l)];
        proc.coarse_step = step;
        proc.coarse.resize(coarse_count);
        const double amp = std::sqrt(power[static_cast<std::size_t>(l)] / detail::kJakesScatterers);
        // Clarke model: equal-power scatterers at uniformly rotated arrival
        // angles, independent phases. E[g(t) g*(t+dt)] = J0(2 pi fd dt).
        std::array<double, detail::kJakesScatterers> omega{};
        std::array<double, detail::kJakesScatterers> phi{};
        const double rot = rng.uniform01();
        for (int m = 0; m < detail::kJakesScatterers; ++m) {
            const double alpha =
                2.0 * std::numbers::pi * (static_cast<double>(m) + rot) / detail::kJakesScatterers;
            omega[static_cast<std::size_t>(m)] = 2.0 * std::numbers::pi * fd * std::cos(alpha);
            phi[static_cast<std::size_t>(m)] = rng.uniform(0.0, 2.0 * std::numbers::pi);
        }
        for (std::size_t c = 0; c < coarse_count; ++c) {
            const double t = static_cast<double>(c * step) / fs;
            std::complex<double> acc{0.0, 0.0};
            for (int m = 0; m < detail::kJakesScatterers; ++m)
                acc += std::polar(1.0, omega[static_cast<std::size_t>(m)] * t + phi[static_cast<std::size_t>(m)]);
            proc.coarse[c] = amp * acc;
        }
    }
    return ch;
}

namespace detail {

// Accumulates H[k] += gain * e^{-j 2 pi f_k tau} over the signed-frequency
// bins of an n-point DFT, walking each frequency half with a phasor
// recurrence (no per-bin trig).
inline void accumulate_delayed_tap(std::vector<std::complex<double>>& h, std::complex<double> gain,
                                   double tau, double fs) {
    const std::size_t n = h.size();
    const double wstep = -2.0 * std::numbers::pi * fs * tau / static_cast<double>(n);
    const std::complex<double> r{std::cos(wstep), std::sin(wstep)};
    const std::complex<double> rconj = std::conj(r);
    // four interleaved recurrence chains keep the complex-multiply latency
    // off the critical path
    const std::complex<double> r4 = ((r * r) * (r * r));
    const std::complex<double> rc4 = std::conj(r4);
    std::complex<double> p0 = gain, p1 = gain * r, p2 = p1 * r, p3 = p2 * r;
    std::size_t k = 0;
    for (; k + 4 <= n / 2; k += 4) {  // f = 0 .. fs/2-
        h[k] += p0;
        h[k + 1] += p1;
        h[k + 2] += p2;
        h[k + 3] += p3;
        p0 *= r4;
        p1 *= r4;
        p2 *= r4;
        p3 *= r4;
    }
    if (k < n / 2) h[k] += p0;
    if (k + 1 < n / 2) h[k + 1] += p1;
    if (k + 2 < n / 2) h[k + 2] += p2;

    p0 = gain * rconj;
    p1 = p0 * rconj;
    p2 = p1 * rconj;
    p3 = p2 * rconj;
    std::size_t idx = n - 1;
    std::size_t remaining = n - n / 2;  // f = -1 bin down to -fs/2
    while (remaining >= 4) {
        h[idx] += p0;
        h[idx - 1] += p1;
        h[idx - 2] += p2;
        h[idx - 3] += p3;
        p0 *= rc4;
        p1 *= rc4;
        p2 *= rc4;
        p3 *= rc4;
        idx -= 4;
        remaining -= 4;
    }
    if (remaining >= 1) h[idx] += p0;
    if (remaining >= 2) h[idx - 1] += p1;
    if (remaining >= 3) h[idx - 2] += p2;
}

}  // namespace detail

// y[n] = sum_l h_l[n] * x(n - tau_l*fs). Fractional delays are realized in
// the frequency domain (multiplication by e^{-j 2 pi f tau_l} on the packet
// DFT). Time-varying gains are piecewise linear between coarse nodes, so the
// output decomposes exactly over the triangle basis of those nodes:
//   y[n] = sum_c hat_c(n) * idft(X(f) * H_c(f))[n],
// with H_c(f) = sum_l g_l(t_c) e^{-j 2 pi f tau_l} and one inverse DFT per
// node that overlaps the packet.
inline ComplexSignal apply_channel(const ComplexSignal& signal, const ChannelRealization& ch) {
    if (signal.samples.empty()) throw std::invalid_argument("apply_channel: signal must be non-empty");
    if (ch.sample_rate_hz > 0.0 && signal.sample_rate_hz > 0.0 &&
        std::abs(ch.sample_rate_hz - signal.sample_rate_hz) > 1e-6 * ch.sample_rate_hz)
        throw std::invalid_argument("apply_channel: signal sample rate does not match realization");
    const std::size_t n = signal.samples.size();
    if (!ch.is_static() && ch.packet_len != n)
        throw std::invalid_argument("apply_channel: signal length does not match realization packet_len");

    const double fs = signal.sample_rate_hz;
    const std::size_t taps = ch.tap_delays_s.size();
    std::vector<std::complex<double>> spectrum = signal.samples;
    fft_inplace(spectrum, false);

    ComplexSignal out;
    out.sample_rate_hz = signal.sample_rate_hz;

    std::vector<std::complex<double>> h(n);
    if (ch.is_static()) {
        std::fill(h.begin(), h.end(), std::complex<double>{0.0, 0.0});
        for (std::size_t l = 0; l < taps; ++l)
            detail::accumulate_delayed_tap(h, ch.tap_gains[l].coarse[0], ch.tap_delays_s[l], fs);
        for (std::size_t k = 0; k < n; ++k) h[k] *= spectrum[k];
        fft_inplace(h, true);
        out.samples = std::move(h);
        return out;
    }

    out.samples.assign(n, {0.0, 0.0});
    const std::size_t step = ch.tap_gains[0].coarse_step;
    const std::size_t nodes = std::min(ch.tap_gains[0].coarse.size(), (n - 1) / step + 2);
    std::vector<std::complex<double>> w(n);
    for (std::size_t c = 0; c < nodes; ++c) {
        std::fill(h.begin(), h.end(), std::complex<double>{0.0, 0.0});
        for (std::size_t l = 0; l < taps; ++l)
            detail::accumulate_delayed_tap(h, ch.tap_gains[l].coarse[c], ch.tap_delays_s[l], fs);
        for (std::size_t k = 0; k < n; ++k) w[k] = spectrum[k] * h[k];
        fft_inplace(w, true);
        // triangle weight centered at c*step with half-width step
        const std::size_t lo = c > 0 ? (c - 1) * step : 0;
        const std::size_t hi = std::min(n, (c + 1) * step);
        const double center = static_cast<double>(c * step);
        for (std::size_t i = lo; i < hi; ++i) {
            const double weight = 1.0 - std::abs(static_cast<double>(i) - center) / static_cast<double>(step);
            out.samples[i] += weight * w[i];
        }
    }
    return out;
}

// Adds circularly-symmetric complex Gaussian noise scaled so that the
// realized 10*log10(P_signal / P_noise) equals snr_db exactly, with P_signal
// the empirical mean power of the input. An infinite snr_db is the no-noise
// sentinel.
inline ComplexSignal add_awgn(const ComplexSignal& signal, double snr_db, std::uint64_t seed) {
    if (signal.samples.empty()) throw std::invalid_argument("add_awgn: signal must be non-empty");
    if (std::isinf(snr_db) && snr_db > 0.0) return signal;

    double signal_power = 0.0;
    for (const auto& x : signal.samples) signal_power += std::norm(x);
    signal_power /= static_cast<double>(signal.samples.size());
    if (!std::isfinite(signal_power) || signal_power <= 0.0)
        throw std::invalid_argument("add_awgn: signal power must be finite and positive");

    const double target_noise_power = signal_power * std::pow(10.0, -snr_db / 10.0);
    Rng rng(derive_seed(seed, 0xA36Eull));
    std::vector<std::complex<double>> noise(signal.samples.size());
    double measured = 0.0;
    for (auto& z : noise) {
        z = rng.cnormal();
        measured += std::norm(z);
    }
    measured /= static_cast<double>(noise.size());
    const double scale = std::sqrt(target_noise_power / measured);

    ComplexSignal out;
    out.sample_rate_hz = signal.sample_rate_hz;
    out.samples.resize(signal.samples.size());
    for (std::size_t i = 0; i < noise.size(); ++i) out.samples[i] = signal.samples[i] + scale * noise[i];
    return out;
}

// Full augmentation draw: one channel realization plus AWGN at the drawn SNR.
// Two calls with different seeds on the same signal produce the two views of
// a contrastive positive pair.
inline ComplexSignal augment(const ComplexSignal& signal, const AugmentationRanges& ranges, std::uint64_t seed) {
    const ChannelRealization ch =
        sample_channel(ranges, derive_seed(seed, 1), signal.samples.size(), signal.sample_rate_hz);
    const ComplexSignal faded = apply_channel(signal, ch);
    return add_awgn(faded, ch.snr_db, derive_seed(seed, 2));
}

}  // namespace rffi
