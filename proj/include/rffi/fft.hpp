#pragma once

#include <complex>
#include <cstddef>
#include <numbers>
#include <stdexcept>
#include <vector>

namespace rffi {

namespace detail {

inline bool is_pow2(std::size_t n) { return n != 0 && (n & (n - 1)) == 0; }

// Twiddle table for all levels of an n-point transform, forward sign.
// Level for len holds len/2 factors starting at offset len/2 - 1.
inline const std::vector<std::complex<double>>& fft_twiddles(std::size_t n) {
    thread_local std::vector<std::vector<std::complex<double>>> cache(32);
    std::size_t log2n = 0;
    while ((std::size_t{1} << log2n) < n) ++log2n;
    auto& t = cache[log2n];
    if (t.empty()) {
        t.resize(n);
        for (std::size_t len = 2; len <= n; len <<= 1)
            for (std::size_t k = 0; k < len / 2; ++k) {
                const double ang = -2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(len);
                t[len / 2 - 1 + k] = {std::cos(ang), std::sin(ang)};
            }
    }
    return t;
}

// Iterative radix-2 Cooley-Tukey, in place. n must be a power of two.
inline void fft_radix2(std::complex<double>* a, std::size_t n, bool inverse) {
    // bit-reversal permutation
    for (std::size_t i = 1, j = 0; i < n; ++i) {
        std::size_t bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) std::swap(a[i], a[j]);
    }
    const auto& tw = fft_twiddles(n);
    for (std::size_t len = 2; len <= n; len <<= 1) {
        const std::complex<double>* w = tw.data() + len / 2 - 1;
        for (std::size_t i = 0; i < n; i += len) {
            std::complex<double>* lo = a + i;
            std::complex<double>* hi = a + i + len / 2;
            for (std::size_t k = 0; k < len / 2; ++k) {
                const std::complex<double> wk = inverse ? std::conj(w[k]) : w[k];
                const std::complex<double> u = lo[k];
                const std::complex<double> v = hi[k] * wk;
                lo[k] = u + v;
                hi[k] = u - v;
            }
        }
    }
}

}  // namespace detail

// In-place DFT of arbitrary length. Power-of-two sizes use radix-2 directly;
// other sizes go through Bluestein's chirp-z reformulation. The inverse is
// scaled by 1/n so that ifft(fft(x)) == x.
inline void fft_inplace(std::vector<std::complex<double>>& a, bool inverse = false) {
    const std::size_t n = a.size();
    if (n == 0) throw std::invalid_argument("fft: empty input");
    if (n == 1) return;
    if (detail::is_pow2(n)) {
        detail::fft_radix2(a.data(), n, inverse);
    } else {
        // Bluestein: x_k * w^{k^2/2} convolved with w^{-k^2/2}, w = e^{-2pi i/n}
        const double sign = inverse ? 1.0 : -1.0;
        std::size_t m = 1;
        while (m < 2 * n - 1) m <<= 1;
        std::vector<std::complex<double>> u(m, {0.0, 0.0}), v(m, {0.0, 0.0});
        std::vector<std::complex<double>> w(n);
        for (std::size_t k = 0; k < n; ++k) {
            // k^2 mod 2n keeps the angle argument small
            const std::size_t k2 = (static_cast<std::size_t>(k) * k) % (2 * n);
            const double ang = sign * std::numbers::pi * static_cast<double>(k2) / static_cast<double>(n);
            w[k] = {std::cos(ang), std::sin(ang)};
            u[k] = a[k] * w[k];
            v[k] = std::conj(w[k]);
            if (k != 0) v[m - k] = std::conj(w[k]);
        }
        detail::fft_radix2(u.data(), m, false);
        detail::fft_radix2(v.data(), m, false);
        for (std::size_t k = 0; k < m; ++k) u[k] *= v[k];
        detail::fft_radix2(u.data(), m, true);
        const double inv_m = 1.0 / static_cast<double>(m);
        for (std::size_t k = 0; k < n; ++k) a[k] = u[k] * inv_m * w[k];
    }
    if (inverse) {
        const double inv_n = 1.0 / static_cast<double>(n);
        for (auto& x : a) x *= inv_n;
    }
}

inline std::vector<std::complex<double>> fft(std::vector<std::complex<double>> a) {
    fft_inplace(a, false);
    return a;
}

inline std::vector<std::complex<double>> ifft(std::vector<std::complex<double>> a) {
    fft_inplace(a, true);
    return a;
}

// Signed bin frequency of an n-point DFT at sample rate fs: bins above n/2
// wrap to negative frequencies.
inline double fft_bin_freq(std::size_t k, std::size_t n, double fs) {
    const double kk = static_cast<double>(k);
    const double nn = static_cast<double>(n);
    return (kk < nn / 2.0 ? kk : kk - nn) * fs / nn;
}

}  // namespace rffi
