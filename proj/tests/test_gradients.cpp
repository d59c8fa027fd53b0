#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "rffi/nn.hpp"
#include "rffi/objectives.hpp"
#include "rffi/rng.hpp"
#include "rffi/verification.hpp"

using namespace rffi;

// Finite-difference verification of the full analytic backward pass on a toy
// instance of the real topology (stem 7x7, four residual blocks with one
// projected skip, pooling, two dense layers, classifier, both losses). Runs
// in double precision.

namespace {

ArchitectureSpec tiny_arch(int num_classes = 3) {
    ArchitectureSpec arch = default_architecture(num_classes, 0.125, 9, 11);
    arch.dense_sizes = {16, 8};
    return arch;
}

std::vector<double> flatten(const Model<double>& m) {
    std::vector<double> out;
    for (const auto& p : m.params) out.insert(out.end(), p.values.begin(), p.values.end());
    return out;
}

void unflatten(Model<double>& m, const std::vector<double>& flat) {
    std::size_t at = 0;
    for (auto& p : m.params) {
        std::copy(flat.begin() + static_cast<std::ptrdiff_t>(at),
                  flat.begin() + static_cast<std::ptrdiff_t>(at + p.size()), p.values.begin());
        at += p.size();
    }
}

struct LossProblem {
    ArchitectureSpec arch;
    std::vector<std::vector<double>> inputs;
    std::vector<int> labels;
    LossConfig loss;
    bool use_contrastive = true;
    bool use_ce = true;

    double eval(Model<double>& model) const {
        BatchCache<double> cache;
        const auto z = forward_extract(model, inputs, cache);
        double total = 0.0;
        if (use_contrastive) total += nt_xent(z, loss).loss;
        if (use_ce) {
            const auto probs = forward_classify(model, z, &cache);
            total += cross_entropy(probs, labels).loss;
        }
        return total;
    }

    std::vector<Tensor<double>> analytic(Model<double>& model) const {
        BatchCache<double> cache;
        const auto z = forward_extract(model, inputs, cache);
        const UpstreamGrads<double>* gz = nullptr;
        const UpstreamGrads<double>* gl = nullptr;
        NtXentResult<double> cl;
        CrossEntropyResult<double> ce;
        if (use_contrastive) {
            cl = nt_xent(z, loss);
            gz = &cl.grads;
        }
        if (use_ce) {
            const auto probs = forward_classify(model, z, &cache);
            ce = cross_entropy(probs, labels);
            gl = &ce.grad_logits;
        }
        return backward(model, cache, gz, gl);
    }
};

LossProblem make_problem(std::uint64_t seed, bool contrastive, bool ce) {
    LossProblem prob;
    prob.arch = tiny_arch();
    prob.use_contrastive = contrastive;
    prob.use_ce = ce;
    Rng rng(seed);
    const std::size_t n = static_cast<std::size_t>(prob.arch.input_bins) * static_cast<std::size_t>(prob.arch.input_frames);
    for (int i = 0; i < 4; ++i) {
        std::vector<double> x(n);
        for (auto& v : x) v = rng.uniform(0.0, 1.0);
        prob.inputs.push_back(std::move(x));
        prob.labels.push_back(static_cast<int>(rng.uniform_index(3)));
    }
    return prob;
}

// relative mismatch with an absolute floor for near-zero coefficients
double grad_mismatch(const std::vector<Tensor<double>>& analytic, const std::vector<double>& fd) {
    double worst = 0.0;
    std::size_t at = 0;
    for (const auto& t : analytic)
        for (const double a : t.values) {
            const double f = fd[at++];
            const double scale = std::max({1e-3, std::abs(a), std::abs(f)});
            worst = std::max(worst, std::abs(a - f) / scale);
        }
    return worst;
}

}  // namespace

TEST_CASE("quadratic sanity check of the finite-difference oracle") {
    auto fn = [](const std::vector<double>& x) {
        double s = 0.0;
        for (const double v : x) s += v * v;
        return s;
    };
    const std::vector<double> x{0.3, -1.2, 2.0};
    const auto g = oracle_grad(fn, x);
    for (std::size_t i = 0; i < x.size(); ++i) CHECK(std::abs(g[i] - 2.0 * x[i]) <= 1e-10);
}

TEST_CASE("combined loss gradients match finite differences end to end", "[slow]") {
    for (const std::uint64_t seed : {11ull, 12ull}) {
        LossProblem prob = make_problem(seed, true, true);
        Model<double> model = init_model<double>(prob.arch, seed * 13 + 1);
        const auto analytic = prob.analytic(model);
        auto fn = [&](const std::vector<double>& flat) {
            Model<double> m2 = model;
            unflatten(m2, flat);
            return prob.eval(m2);
        };
        const auto fd = oracle_grad(fn, flatten(model));
        CHECK(grad_mismatch(analytic, fd) <= 1e-4);
    }
}

TEST_CASE("softmax rows sum to one within 1e-9 in wide precision") {
    LossProblem prob = make_problem(21, false, true);
    Model<double> model = init_model<double>(prob.arch, 22);
    BatchCache<double> cache;
    const auto z = forward_extract(model, prob.inputs, cache);
    const auto probs = forward_classify(model, z, &cache);
    for (const auto& row : probs) {
        double s = 0.0;
        for (const double p : row) {
            CHECK(p > 0.0);
            s += p;
        }
        CHECK(std::abs(s - 1.0) <= 1e-9);
    }
}

TEST_CASE("contrastive-only loss leaves classifier gradients at zero") {
    LossProblem prob = make_problem(5, true, false);
    Model<double> model = init_model<double>(prob.arch, 6);
    const auto grads = prob.analytic(model);
    for (std::size_t p = model.plan.extractor_params; p < grads.size(); ++p)
        for (const double g : grads[p].values) REQUIRE(g == 0.0);
    // ...and some extractor gradient is nonzero
    double extractor_norm = 0.0;
    for (std::size_t p = 0; p < model.plan.extractor_params; ++p)
        for (const double g : grads[p].values) extractor_norm += g * g;
    CHECK(extractor_norm > 0.0);
}

TEST_CASE("zero upstream gradient produces zero parameter gradients") {
    const ArchitectureSpec arch = tiny_arch();
    Model<double> model = init_model<double>(arch, 77);
    Rng rng(3);
    std::vector<std::vector<double>> inputs(2);
    for (auto& x : inputs) {
        x.resize(static_cast<std::size_t>(arch.input_bins) * static_cast<std::size_t>(arch.input_frames));
        for (auto& v : x) v = rng.uniform(0.0, 1.0);
    }
    BatchCache<double> cache;
    forward_extract(model, inputs, cache);
    const auto grads = backward(model, cache, static_cast<const UpstreamGrads<double>*>(nullptr),
                                static_cast<const UpstreamGrads<double>*>(nullptr));
    for (const auto& t : grads)
        for (const double g : t.values) REQUIRE(g == 0.0);
}
