#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "rffi/objectives.hpp"
#include "rffi/rng.hpp"
#include "rffi/verification.hpp"

using namespace rffi;

namespace {

std::vector<std::vector<double>> random_views(int pairs, int dim, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<std::vector<double>> v(static_cast<std::size_t>(2 * pairs), std::vector<double>(static_cast<std::size_t>(dim)));
    for (auto& e : v)
        for (auto& x : e) x = rng.uniform(-1.0, 1.0);
    return v;
}

}  // namespace

TEST_CASE("nt_xent closed form for two orthogonal pairs at tau = 0.05") {
    const std::vector<std::vector<double>> views{{1.0, 0.0}, {1.0, 0.0}, {0.0, 1.0}, {0.0, 1.0}};
    LossConfig cfg;
    cfg.batch_pairs = 2;
    const auto r = nt_xent(views, cfg);
    const double l12 = std::log(1.0 + 2.0 * std::exp(-20.0));
    CHECK(r.loss == Catch::Approx(4.0 * l12).epsilon(1e-3));
    CHECK(r.loss == Catch::Approx(1.649e-8).epsilon(1e-3));
}

TEST_CASE("single identical pair gives exactly zero loss") {
    const std::vector<std::vector<double>> views{{0.3, -0.7, 0.2}, {0.3, -0.7, 0.2}};
    LossConfig cfg;
    cfg.batch_pairs = 1;
    const auto r = nt_xent(views, cfg);
    CHECK(std::abs(r.loss) < 1e-14);
    for (const auto& g : r.grads)
        for (const double v : g) CHECK(std::abs(v) < 1e-14);
}

TEST_CASE("nt_xent is invariant to positive scaling of any embedding") {
    auto views = random_views(4, 8, 5);
    LossConfig cfg;
    const double base = nt_xent(views, cfg).loss;
    for (auto& x : views[3]) x *= 5.0;
    CHECK(nt_xent(views, cfg).loss == Catch::Approx(base).margin(1e-12));
}

TEST_CASE("nt_xent total is invariant under pair permutation") {
    auto views = random_views(4, 8, 17);
    LossConfig cfg;
    const double base = nt_xent(views, cfg).loss;
    // move the last pair to the front
    std::vector<std::vector<double>> permuted{views[6], views[7], views[0], views[1], views[2], views[3], views[4], views[5]};
    CHECK(nt_xent(permuted, cfg).loss == Catch::Approx(base).margin(1e-12));
}

TEST_CASE("nt_xent decreases as a positive pair aligns") {
    LossConfig cfg;
    double prev = 1e300;
    for (const double theta : {1.2, 0.8, 0.4, 0.1}) {
        std::vector<std::vector<double>> views{{1.0, 0.0},
                                               {std::cos(theta), std::sin(theta)},
                                               {0.2, 0.9},
                                               {0.25, 0.85}};
        const double loss = nt_xent(views, cfg).loss;
        CHECK(loss < prev);
        prev = loss;
    }
}

TEST_CASE("nt_xent matches the brute-force oracle to 1e-10") {
    LossConfig cfg;
    for (int trial = 0; trial < 100; ++trial) {
        const int pairs = 2 + trial % 7;  // |B| in [2, 8]
        const auto views = random_views(pairs, 16, 1000 + static_cast<std::uint64_t>(trial));
        const double prod = nt_xent(views, cfg).loss;
        const double oracle = oracle_nt_xent(views, cfg);
        CHECK(std::abs(prod - oracle) <= 1e-10 * std::max(1.0, std::abs(oracle)));
    }
}

TEST_CASE("nt_xent rejects zero-norm embeddings and bad shapes") {
    LossConfig cfg;
    std::vector<std::vector<double>> views{{0.0, 0.0}, {1.0, 0.0}};
    CHECK_THROWS_AS(nt_xent(views, cfg), std::invalid_argument);
    std::vector<std::vector<double>> odd{{1.0, 0.0}};
    CHECK_THROWS_AS(nt_xent(odd, cfg), std::invalid_argument);
    cfg.temperature = 0.0;
    CHECK_THROWS_AS(nt_xent(random_views(2, 4, 1), cfg), std::invalid_argument);
}

TEST_CASE("cross entropy values and gradient") {
    const int k = 10;
    std::vector<std::vector<double>> uniform{std::vector<double>(k, 1.0 / k)};
    const auto u = cross_entropy(uniform, {3});
    CHECK(u.loss == Catch::Approx(std::log(10.0)).epsilon(1e-9));

    std::vector<std::vector<double>> onehot{std::vector<double>(k, 0.0)};
    onehot[0][4] = 1.0;
    CHECK(cross_entropy(onehot, {4}).loss == Catch::Approx(0.0).margin(1e-12));

    const auto g = cross_entropy(uniform, {3});
    for (int j = 0; j < k; ++j)
        CHECK(g.grad_logits[0][static_cast<std::size_t>(j)] ==
              Catch::Approx(1.0 / k - (j == 3 ? 1.0 : 0.0)).margin(1e-12));

    CHECK_THROWS_AS(cross_entropy(uniform, {10}), std::invalid_argument);
    std::vector<std::vector<double>> bad{std::vector<double>(k, 0.2)};
    CHECK_THROWS_AS(cross_entropy(bad, {0}), std::invalid_argument);
}

TEST_CASE("cross entropy softmax gradient matches finite differences") {
    Rng rng(7);
    const int k = 6;
    std::vector<double> logits(k);
    for (auto& v : logits) v = rng.uniform(-2.0, 2.0);
    const int label = 2;
    auto loss_of = [&](const std::vector<double>& lg) {
        double mx = lg[0];
        for (const double v : lg) mx = std::max(mx, v);
        double denom = 0.0;
        for (const double v : lg) denom += std::exp(v - mx);
        std::vector<std::vector<double>> probs{std::vector<double>(static_cast<std::size_t>(k))};
        for (int j = 0; j < k; ++j) probs[0][static_cast<std::size_t>(j)] = std::exp(lg[static_cast<std::size_t>(j)] - mx) / denom;
        return cross_entropy(probs, {label}).loss;
    };
    const auto fd = oracle_grad(loss_of, logits);
    double mx = logits[0];
    for (const double v : logits) mx = std::max(mx, v);
    double denom = 0.0;
    for (const double v : logits) denom += std::exp(v - mx);
    for (int j = 0; j < k; ++j) {
        const double p = std::exp(logits[static_cast<std::size_t>(j)] - mx) / denom;
        const double analytic = p - (j == label ? 1.0 : 0.0);
        CHECK(std::abs(analytic - fd[static_cast<std::size_t>(j)]) <=
              1e-6 * std::max(1.0, std::abs(analytic)));
    }
}

TEST_CASE("combined loss is the exact sum of its parts") {
    LossConfig cfg;
    const auto views = random_views(3, 12, 99);
    Rng rng(100);
    std::vector<std::vector<double>> probs(6, std::vector<double>(4));
    std::vector<int> labels(6);
    for (std::size_t i = 0; i < 6; ++i) {
        double sum = 0.0;
        for (auto& p : probs[i]) {
            p = rng.uniform(0.05, 1.0);
            sum += p;
        }
        for (auto& p : probs[i]) p /= sum;
        labels[i] = static_cast<int>(rng.uniform_index(4));
    }
    const auto combined = combined_loss(views, probs, labels, cfg);
    const double separate = nt_xent(views, cfg).loss + cross_entropy(probs, labels).loss;
    CHECK(std::abs(combined.loss - separate) <= 1e-12 * std::max(1.0, separate));
    CHECK(combined.contrastive + combined.cross_entropy == Catch::Approx(combined.loss).margin(1e-15));

    // identical pairs zero the contrastive term, leaving L == L_ce
    std::vector<std::vector<double>> ident{{0.4, 0.1}, {0.4, 0.1}};
    std::vector<std::vector<double>> p2{{0.7, 0.3}, {0.2, 0.8}};
    const auto c2 = combined_loss(ident, p2, {0, 1}, cfg);
    CHECK(c2.loss == Catch::Approx(cross_entropy(p2, {0, 1}).loss).margin(1e-12));
}

TEST_CASE("nt_xent gradient matches finite differences") {
    LossConfig cfg;
    const int pairs = 3, dim = 5;
    const auto views = random_views(pairs, dim, 314);
    const auto analytic = nt_xent(views, cfg);
    std::vector<double> flat;
    for (const auto& v : views) flat.insert(flat.end(), v.begin(), v.end());
    auto loss_of = [&](const std::vector<double>& x) {
        std::vector<std::vector<double>> vs(static_cast<std::size_t>(2 * pairs), std::vector<double>(dim));
        for (std::size_t i = 0; i < vs.size(); ++i)
            for (int d = 0; d < dim; ++d) vs[i][static_cast<std::size_t>(d)] = x[i * dim + static_cast<std::size_t>(d)];
        return nt_xent(vs, cfg).loss;
    };
    const auto fd = oracle_grad(loss_of, flat);
    for (std::size_t i = 0; i < static_cast<std::size_t>(2 * pairs); ++i)
        for (int d = 0; d < dim; ++d) {
            const double a = analytic.grads[i][static_cast<std::size_t>(d)];
            const double f = fd[i * dim + static_cast<std::size_t>(d)];
            CHECK(std::abs(a - f) <= 1e-4 * std::max({1e-4, std::abs(a), std::abs(f)}));
        }
}
