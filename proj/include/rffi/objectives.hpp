#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <stdexcept>
#include <vector>

namespace rffi {

// Contrastive-loss configuration: temperature 0.05, 32 positive pairs per
// batch (64 views).
struct LossConfig {
    double temperature = 0.05;
    int batch_pairs = 32;
};

inline void validate(const LossConfig& cfg) {
    if (!(cfg.temperature > 0.0)) throw std::invalid_argument("LossConfig: temperature must be > 0");
    if (cfg.batch_pairs < 1) throw std::invalid_argument("LossConfig: batch_pairs must be >= 1");
}

template <typename T>
struct NtXentResult {
    double loss = 0.0;
    std::vector<std::vector<T>> grads;  // dL/dz per view
};

// NT-Xent over 2|B| views ordered as interleaved positive pairs (2i, 2i+1).
// Cosine similarity on L2-normalized embeddings, every view serves as the
// anchor once, and the per-anchor softmax runs over the other 2|B|-1 views:
//   l_{i,j} = -log( exp(sim_ij/tau) / sum_{k != i} exp(sim_ik/tau) )
// Loss and gradients are computed in double regardless of T.
template <typename T>
NtXentResult<T> nt_xent(const std::vector<std::vector<T>>& views, const LossConfig& cfg) {
    validate(cfg);
    const std::size_t n = views.size();
    if (n < 2 || n % 2 != 0)
        throw std::invalid_argument("nt_xent: need an even number (>= 2) of views ordered as pairs");
    const std::size_t dim = views[0].size();
    const double tau = cfg.temperature;

    // L2-normalize (normalization is part of the loss, not the network).
    std::vector<double> norms(n);
    std::vector<std::vector<double>> u(n, std::vector<double>(dim));
    for (std::size_t i = 0; i < n; ++i) {
        if (views[i].size() != dim) throw std::invalid_argument("nt_xent: ragged embedding batch");
        double s = 0.0;
        for (std::size_t d = 0; d < dim; ++d) s += static_cast<double>(views[i][d]) * static_cast<double>(views[i][d]);
        norms[i] = std::sqrt(s);
        if (!(norms[i] > 0.0)) throw std::invalid_argument("nt_xent: zero-norm embedding (cosine undefined)");
        for (std::size_t d = 0; d < dim; ++d) u[i][d] = static_cast<double>(views[i][d]) / norms[i];
    }

    // Pairwise scaled similarities.
    std::vector<std::vector<double>> sim(n, std::vector<double>(n, 0.0));
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t k = i + 1; k < n; ++k) {
            double s = 0.0;
            for (std::size_t d = 0; d < dim; ++d) s += u[i][d] * u[k][d];
            sim[i][k] = sim[k][i] = s / tau;
        }

    double loss = 0.0;
    std::vector<std::vector<double>> du(n, std::vector<double>(dim, 0.0));
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t j = i ^ 1;  // the positive partner
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t k = 0; k < n; ++k)
            if (k != i) mx = std::max(mx, sim[i][k]);
        double denom = 0.0;
        for (std::size_t k = 0; k < n; ++k)
            if (k != i) denom += std::exp(sim[i][k] - mx);
        loss += -sim[i][j] + mx + std::log(denom);
        for (std::size_t k = 0; k < n; ++k) {
            if (k == i) continue;
            const double p = std::exp(sim[i][k] - mx) / denom;
            const double w = (p - (k == j ? 1.0 : 0.0)) / tau;
            if (w == 0.0) continue;
            for (std::size_t d = 0; d < dim; ++d) {
                du[i][d] += w * u[k][d];
                du[k][d] += w * u[i][d];
            }
        }
    }

    NtXentResult<T> out;
    out.loss = loss;
    out.grads.assign(n, std::vector<T>(dim));
    for (std::size_t i = 0; i < n; ++i) {
        // through the normalization: dz = (du - u (u . du)) / ||z||
        double dot = 0.0;
        for (std::size_t d = 0; d < dim; ++d) dot += u[i][d] * du[i][d];
        for (std::size_t d = 0; d < dim; ++d)
            out.grads[i][d] = static_cast<T>((du[i][d] - u[i][d] * dot) / norms[i]);
    }
    return out;
}

template <typename T>
struct CrossEntropyResult {
    double loss = 0.0;
    std::vector<std::vector<T>> grad_logits;  // qhat - q per sample
};

// Sum of -log(p[label]) over the batch; gradient at the logits is p - onehot.
template <typename T>
CrossEntropyResult<T> cross_entropy(const std::vector<std::vector<T>>& probs, const std::vector<int>& labels) {
    if (probs.size() != labels.size())
        throw std::invalid_argument("cross_entropy: probs and labels batch sizes differ");
    CrossEntropyResult<T> out;
    out.grad_logits.resize(probs.size());
    for (std::size_t i = 0; i < probs.size(); ++i) {
        const auto& p = probs[i];
        double row_sum = 0.0;
        for (const T v : p) row_sum += static_cast<double>(v);
        if (std::abs(row_sum - 1.0) > 1e-6)
            throw std::invalid_argument("cross_entropy: probabilities do not sum to 1");
        if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= p.size())
            throw std::invalid_argument("cross_entropy: label out of range");
        const double q = std::max(static_cast<double>(p[static_cast<std::size_t>(labels[i])]), 1e-300);
        out.loss += -std::log(q);
        out.grad_logits[i].assign(p.begin(), p.end());
        out.grad_logits[i][static_cast<std::size_t>(labels[i])] -= T(1);
    }
    return out;
}

template <typename T>
struct CombinedLossResult {
    double loss = 0.0;
    double contrastive = 0.0;
    double cross_entropy = 0.0;
    std::vector<std::vector<T>> grad_z;
    std::vector<std::vector<T>> grad_logits;
};

// L = L_cl + L_ce, unweighted; the contrastive term attaches at the
// embeddings, cross-entropy at the logits, and the gradients superpose.
template <typename T>
CombinedLossResult<T> combined_loss(const std::vector<std::vector<T>>& views,
                                    const std::vector<std::vector<T>>& probs, const std::vector<int>& labels,
                                    const LossConfig& cfg) {
    auto cl = nt_xent(views, cfg);
    auto ce = cross_entropy(probs, labels);
    CombinedLossResult<T> out;
    out.contrastive = cl.loss;
    out.cross_entropy = ce.loss;
    out.loss = cl.loss + ce.loss;
    out.grad_z = std::move(cl.grads);
    out.grad_logits = std::move(ce.grad_logits);
    return out;
}

}  // namespace rffi
