#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <complex>
#include <numbers>
#include <set>

#include "rffi/fft.hpp"
#include "rffi/impairments.hpp"
#include "rffi/lora_phy.hpp"
#include "rffi/spectrogram.hpp"

using namespace rffi;

namespace {

ComplexSignal tone(double f0, double fs, std::size_t n) {
    ComplexSignal s;
    s.sample_rate_hz = fs;
    s.samples.resize(n);
    for (std::size_t i = 0; i < n; ++i)
        s.samples[i] = std::polar(1.0, 2.0 * std::numbers::pi * f0 * static_cast<double>(i) / fs);
    return s;
}

std::size_t dft_peak_bin(const ComplexSignal& s) {
    const auto spec = fft(s.samples);
    std::size_t best = 0;
    for (std::size_t k = 1; k < spec.size(); ++k)
        if (std::norm(spec[k]) > std::norm(spec[best])) best = k;
    return best;
}

double signal_energy(const ComplexSignal& s) {
    double e = 0.0;
    for (const auto& v : s.samples) e += std::norm(v);
    return e;
}

}  // namespace

TEST_CASE("all-zero device profile is the identity transform") {
    const ComplexSignal s = synthesize_preamble(ChirpParams{});
    const ComplexSignal out = apply_tx_impairments(s, DeviceProfile{});
    REQUIRE(out.samples == s.samples);
}

TEST_CASE("pure CFO shifts a tone's DFT peak") {
    const double fs = 1e6;
    const std::size_t n = 1024;
    const double f1 = 40.0 * fs / n;
    const double f0 = 12.0 * fs / n;
    DeviceProfile p;
    p.cfo_hz = f0;
    const ComplexSignal shifted = apply_tx_impairments(tone(f1, fs, n), p);
    CHECK(dft_peak_bin(shifted) == 52);
}

TEST_CASE("cubic PA term scales a constant-modulus input to 1 + a3") {
    DeviceProfile p;
    p.pa_coeffs = {0.05, 0.0, 0.0, 0.0};
    const ComplexSignal out = apply_tx_impairments(synthesize_preamble(ChirpParams{}), p);
    for (const auto& v : out.samples) CHECK(std::abs(v) == Catch::Approx(1.05).margin(1e-12));
}

TEST_CASE("receiver ripple edge cases") {
    const ComplexSignal s = synthesize_preamble(ChirpParams{});

    ReceiverProfile unit;  // single unit tap, zero IQ/CFO
    CHECK(apply_rx_impairments(s, unit).samples == s.samples);

    ReceiverProfile delay;
    delay.ripple_response = {{0.0, 0.0}, {1.0, 0.0}};
    const ComplexSignal d = apply_rx_impairments(s, delay);
    CHECK(d.samples[0] == std::complex<double>(0.0, 0.0));
    for (std::size_t n = 1; n < s.samples.size(); ++n) REQUIRE(d.samples[n] == s.samples[n - 1]);

    ReceiverProfile twotap;
    twotap.ripple_response = {{std::sqrt(0.5), 0.0}, {0.0, std::sqrt(0.5)}};
    const ComplexSignal y = apply_rx_impairments(s, twotap);
    CHECK(signal_energy(y) == Catch::Approx(signal_energy(s)).epsilon(0.01));

    ComplexSignal tiny = s;
    tiny.samples.resize(2);
    CHECK_THROWS_AS(apply_rx_impairments(tiny, twotap), std::invalid_argument);
}

TEST_CASE("profile invariants are enforced at validation") {
    DeviceProfile d;
    d.cfo_hz = 40e3;  // >= B/4 at 125 kHz
    CHECK_THROWS_AS(validate(d), std::invalid_argument);
    d = DeviceProfile{};
    d.iq_gain_imbalance_db = 1.5;
    CHECK_THROWS_AS(validate(d), std::invalid_argument);
    d = DeviceProfile{};
    d.pa_coeffs = {0.2, 0.0, 0.0, 0.0};
    CHECK_THROWS_AS(validate(d), std::invalid_argument);

    ReceiverProfile r;
    r.ripple_response = {{2.0, 0.0}};  // not unit energy
    CHECK_THROWS_AS(validate(r), std::invalid_argument);
    r = ReceiverProfile{};
    r.ripple_response.assign(6, {0.40824829046386307, 0.0});
    CHECK_THROWS_AS(validate(r), std::invalid_argument);
}

TEST_CASE("device profile sampling is deterministic and distinct") {
    const auto a = sample_device_profiles(10, 77, 1.0);
    const auto b = sample_device_profiles(10, 77, 1.0);
    REQUIRE(a.size() == 10);
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].cfo_hz == b[i].cfo_hz);
        CHECK(a[i].pa_coeffs == b[i].pa_coeffs);
        CHECK_NOTHROW(validate(a[i]));
    }
    const auto c = sample_device_profiles(10, 78, 1.0);
    for (std::size_t i = 0; i < a.size(); ++i) {
        const bool differs = a[i].cfo_hz != c[i].cfo_hz || a[i].iq_gain_imbalance_db != c[i].iq_gain_imbalance_db ||
                             a[i].iq_phase_imbalance_rad != c[i].iq_phase_imbalance_rad ||
                             a[i].pa_coeffs != c[i].pa_coeffs;
        CHECK(differs);
    }
    // pairwise distinct within one population
    for (std::size_t i = 0; i < a.size(); ++i)
        for (std::size_t j = i + 1; j < a.size(); ++j) CHECK(a[i].cfo_hz != a[j].cfo_hz);

    CHECK_THROWS_AS(sample_device_profiles(1, 1, 1.0), std::invalid_argument);
    CHECK_THROWS_AS(sample_device_profiles(4, 1, 0.0), std::invalid_argument);
}

TEST_CASE("spread=1 population spans kHz-scale CFO magnitudes") {
    const auto profiles = sample_device_profiles(10, 123, 1.0);
    std::set<long> khz;
    for (const auto& p : profiles) khz.insert(std::lround(std::abs(p.cfo_hz) / 1000.0));
    CHECK(khz.size() >= 3);
}

TEST_CASE("distinct profiles produce measurably distinct spectrograms") {
    const ComplexSignal pkt = synthesize_packet(ChirpParams{});
    const auto profiles = sample_device_profiles(4, 9, 1.0);
    std::vector<Spectrogram> specs;
    for (const auto& p : profiles) specs.push_back(log_spectrogram(apply_tx_impairments(pkt, p), StftConfig{}));
    for (std::size_t i = 0; i < specs.size(); ++i)
        for (std::size_t j = i + 1; j < specs.size(); ++j) {
            double l2 = 0.0;
            for (std::size_t k = 0; k < specs[i].values.size(); ++k) {
                const double d = specs[i].values[k] - specs[j].values[k];
                l2 += d * d;
            }
            CHECK(std::sqrt(l2) > 1e-3);
        }
}

TEST_CASE("receiver profile sampling is deterministic and valid") {
    const auto a = sample_receiver_profiles(3, 5, 1.0);
    const auto b = sample_receiver_profiles(3, 5, 1.0);
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].rx_cfo_hz == b[i].rx_cfo_hz);
        CHECK_NOTHROW(validate(a[i]));
    }
}
