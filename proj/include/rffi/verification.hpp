#pragma once

#include <cmath>
#include <complex>
#include <cstddef>
#include <functional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "rffi/channel.hpp"
#include "rffi/objectives.hpp"
#include "rffi/spectrogram.hpp"

// Independent oracles used by the test and acceptance suites. These
// deliberately share no code with the production paths they check: the
// NT-Xent oracle is a literal double loop, gradients come from central
// finite differences, and channel statistics use the standard estimators.

namespace rffi {

struct OracleReport {
    std::string name;
    double statistic = 0.0;
    double tolerance = 0.0;
    bool pass = false;
};

inline OracleReport make_report(std::string name, double statistic, double tolerance) {
    OracleReport r;
    r.name = std::move(name);
    r.statistic = statistic;
    r.tolerance = tolerance;
    r.pass = statistic <= tolerance;
    return r;
}

inline void report_csv_header(std::ostream& os) { os << "name,statistic,tolerance,pass\n"; }

inline void report_csv_row(std::ostream& os, const OracleReport& r) {
    os << r.name << ',' << r.statistic << ',' << r.tolerance << ',' << (r.pass ? 1 : 0) << '\n';
}

// Literal evaluation of the per-pair contrastive loss: for every anchor i the
// positive is its interleaved partner, the denominator enumerates all other
// views, and cosine similarity is computed from raw dot products each time.
inline double oracle_nt_xent(const std::vector<std::vector<double>>& views, const LossConfig& cfg) {
    const std::size_t n = views.size();
    if (n < 2 || n % 2 != 0) throw std::invalid_argument("oracle_nt_xent: need interleaved pairs");
    auto cosine = [&](std::size_t a, std::size_t b) {
        double dot = 0.0, na = 0.0, nb = 0.0;
        for (std::size_t d = 0; d < views[a].size(); ++d) {
            dot += views[a][d] * views[b][d];
            na += views[a][d] * views[a][d];
            nb += views[b][d] * views[b][d];
        }
        return dot / (std::sqrt(na) * std::sqrt(nb));
    };
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t j = (i % 2 == 0) ? i + 1 : i - 1;
        const double numer = std::exp(cosine(i, j) / cfg.temperature);
        double denom = 0.0;
        for (std::size_t k = 0; k < n; ++k)
            if (k != i) denom += std::exp(cosine(i, k) / cfg.temperature);
        total += -std::log(numer / denom);
    }
    return total;
}

// Central finite differences, step 1e-5 by default, in double precision.
inline std::vector<double> oracle_grad(const std::function<double(const std::vector<double>&)>& fn,
                                       std::vector<double> params, double step = 1e-5) {
    std::vector<double> grad(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
        const double keep = params[i];
        params[i] = keep + step;
        const double fp = fn(params);
        params[i] = keep - step;
        const double fm = fn(params);
        params[i] = keep;
        grad[i] = (fp - fm) / (2.0 * step);
    }
    return grad;
}

struct ChannelStats {
    double mean_energy = 0.0;
    double rms_delay_spread_s = 0.0;
    double pdp_log_slope = 0.0;  // regression slope of log mean tap power vs delay
};

// Second-central-moment RMS delay spread of the mean PDP, mean channel
// energy, and the log-power regression slope, over >= 1 realization.
inline ChannelStats oracle_channel_stats(const std::vector<ChannelRealization>& realizations) {
    if (realizations.empty()) throw std::invalid_argument("oracle_channel_stats: no realizations");
    const std::size_t taps = realizations[0].tap_delays_s.size();
    std::vector<double> mean_power(taps, 0.0);
    double energy = 0.0;
    for (const auto& ch : realizations) {
        double e = 0.0;
        for (std::size_t l = 0; l < taps; ++l) {
            const double p = std::norm(ch.tap_gains[l].at(0));
            mean_power[l] += p;
            e += p;
        }
        energy += e;
    }
    for (auto& p : mean_power) p /= static_cast<double>(realizations.size());
    energy /= static_cast<double>(realizations.size());

    const auto& delays = realizations[0].tap_delays_s;
    double psum = 0.0, mean_delay = 0.0;
    for (std::size_t l = 0; l < taps; ++l) {
        psum += mean_power[l];
        mean_delay += mean_power[l] * delays[l];
    }
    mean_delay /= psum;
    double second = 0.0;
    for (std::size_t l = 0; l < taps; ++l)
        second += mean_power[l] * (delays[l] - mean_delay) * (delays[l] - mean_delay);

    // least-squares slope of log(mean power) against delay
    double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0;
    for (std::size_t l = 0; l < taps; ++l) {
        const double x = delays[l];
        const double y = std::log(mean_power[l]);
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
    }
    const double nd = static_cast<double>(taps);
    ChannelStats st;
    st.mean_energy = energy;
    st.rms_delay_spread_s = std::sqrt(second / psum);
    st.pdp_log_slope = (nd * sxy - sx * sy) / (nd * sxx - sx * sx);
    return st;
}

// Empirical autocorrelation of one tap's gain process at the given sample
// lags, averaged over realizations and anchor times, normalized by the
// process power. The Jakes theory value is J0(2 pi fd lag/fs).
inline std::vector<double> oracle_tap_autocorr(const std::vector<ChannelRealization>& realizations,
                                               std::size_t tap, const std::vector<std::size_t>& lags) {
    if (realizations.empty()) throw std::invalid_argument("oracle_tap_autocorr: no realizations");
    std::vector<double> corr(lags.size(), 0.0);
    double power = 0.0;
    std::size_t power_count = 0;
    const std::size_t n = realizations[0].packet_len;
    const std::size_t anchor_stride = std::max<std::size_t>(1, n / 64);
    for (const auto& ch : realizations) {
        const auto& g = ch.tap_gains[tap];
        for (std::size_t t = 0; t < n; t += anchor_stride) {
            power += std::norm(g.at(t));
            ++power_count;
        }
        for (std::size_t li = 0; li < lags.size(); ++li) {
            std::complex<double> acc{0.0, 0.0};
            std::size_t count = 0;
            for (std::size_t t = 0; t + lags[li] < n; t += anchor_stride) {
                acc += g.at(t) * std::conj(g.at(t + lags[li]));
                ++count;
            }
            if (count) corr[li] += acc.real() / static_cast<double>(count);
        }
    }
    const double p = power / static_cast<double>(power_count);
    for (auto& c : corr) c /= (p * static_cast<double>(realizations.size()));
    return corr;
}

// Per-frame argmax frequency-bin curve used by the chirp-sweep and
// augmentation-invariance checks.
inline std::vector<std::size_t> oracle_ridge(const Spectrogram& spec) {
    std::vector<std::size_t> ridge(spec.frames);
    for (std::size_t f = 0; f < spec.frames; ++f) {
        std::size_t best = 0;
        double best_v = spec.at(0, f);
        for (std::size_t b = 1; b < spec.bins; ++b)
            if (spec.at(b, f) > best_v) {
                best_v = spec.at(b, f);
                best = b;
            }
        ridge[f] = best;
    }
    return ridge;
}

}  // namespace rffi
