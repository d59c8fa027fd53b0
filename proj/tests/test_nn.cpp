#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <vector>

#include "rffi/checkpoint.hpp"
#include "rffi/nn.hpp"
#include "rffi/rng.hpp"

using namespace rffi;

namespace {

std::vector<std::vector<float>> random_inputs(const ArchitectureSpec& arch, int n, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<std::vector<float>> x(static_cast<std::size_t>(n));
    for (auto& v : x) {
        v.resize(static_cast<std::size_t>(arch.input_bins) * static_cast<std::size_t>(arch.input_frames));
        for (auto& e : v) e = static_cast<float>(rng.uniform(0.0, 1.0));
    }
    return x;
}

std::string read_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("default architecture shape trace") {
    const ArchitectureSpec arch = default_architecture(10, 1.0, 25, 127);
    const ModelPlan plan = build_plan(arch);
    CHECK(plan.stem.out_ch == 32);
    CHECK(plan.stem.out_h == 13);
    CHECK(plan.stem.out_w == 64);
    REQUIRE(plan.blocks.size() == 4);
    CHECK_FALSE(plan.blocks[0].has_proj);
    CHECK_FALSE(plan.blocks[1].has_proj);
    CHECK(plan.blocks[2].has_proj);  // 32 -> 64 channels with stride 2
    CHECK_FALSE(plan.blocks[3].has_proj);
    CHECK(plan.pool_ch == 64);
    CHECK(plan.pool_h == 7);
    CHECK(plan.pool_w == 32);
    CHECK(plan.dense1_out == 512);
    CHECK(plan.dense2_out == 256);
    CHECK(plan.param_count == 26);
    CHECK(plan.extractor_params == 24);
}

TEST_CASE("width scaling changes conv widths but not the embedding length") {
    const ArchitectureSpec arch = default_architecture(10, 0.25, 16, 16);
    const ModelPlan plan = build_plan(arch);
    CHECK(plan.stem.out_ch == 8);
    CHECK(plan.pool_ch == 16);
    CHECK(plan.dense2_out == 256);
    Model<float> m = init_model<float>(arch, 3);
    BatchCache<float> cache;
    const auto z = forward_extract(m, random_inputs(arch, 1, 5), cache);
    CHECK(z[0].size() == 256);
}

TEST_CASE("forward is deterministic and batch-order independent per sample") {
    const ArchitectureSpec arch = default_architecture(4, 0.125, 9, 11);
    Model<float> m = init_model<float>(arch, 11);
    const auto inputs = random_inputs(arch, 3, 21);
    BatchCache<float> c1, c2;
    const auto z1 = forward_extract(m, inputs, c1);
    const auto z2 = forward_extract(m, inputs, c2);
    REQUIRE(z1 == z2);

    // two identical inputs in one batch give identical embeddings
    BatchCache<float> c3;
    const auto z3 = forward_extract(m, {inputs[0], inputs[0]}, c3);
    REQUIRE(z3[0] == z3[1]);
}

TEST_CASE("init is deterministic under seed") {
    const ArchitectureSpec arch = default_architecture(4, 0.25, 9, 11);
    const Model<float> a = init_model<float>(arch, 7);
    const Model<float> b = init_model<float>(arch, 7);
    for (std::size_t p = 0; p < a.params.size(); ++p) REQUIRE(a.params[p].values == b.params[p].values);
    const Model<float> c = init_model<float>(arch, 8);
    bool any_diff = false;
    for (std::size_t p = 0; p < a.params.size(); ++p) any_diff |= (a.params[p].values != c.params[p].values);
    CHECK(any_diff);
}

TEST_CASE("zero weights leave only the bias path") {
    const ArchitectureSpec arch = default_architecture(4, 0.125, 9, 11);
    Model<float> m = init_model<float>(arch, 1);
    for (auto& p : m.params) std::fill(p.values.begin(), p.values.end(), 0.0f);
    // dense2 bias becomes the embedding for any input
    auto& d2_bias = m.params[m.plan.extractor_params - 1];
    for (std::size_t i = 0; i < d2_bias.values.size(); ++i) d2_bias.values[i] = 0.5f + static_cast<float>(i) * 0.01f;
    BatchCache<float> cache;
    const auto z = forward_extract(m, random_inputs(arch, 2, 2), cache);
    for (const auto& zi : z)
        for (std::size_t i = 0; i < zi.size(); ++i) REQUIRE(zi[i] == d2_bias.values[i]);
}

TEST_CASE("softmax head properties") {
    const ArchitectureSpec arch = default_architecture(10, 0.125, 9, 11);
    Model<float> m = init_model<float>(arch, 5);
    // zero classifier -> uniform probabilities
    for (std::size_t p = m.plan.extractor_params; p < m.params.size(); ++p)
        std::fill(m.params[p].values.begin(), m.params[p].values.end(), 0.0f);
    std::vector<std::vector<float>> z{std::vector<float>(256, 0.3f)};
    auto probs = forward_classify(m, z);
    for (const float v : probs[0]) CHECK(v == Catch::Approx(0.1).margin(1e-9));

    // logits (10, 0, ...) -> argmax class 0 with prob > 0.99
    auto& wc = m.params[m.params.size() - 2];
    std::fill(z[0].begin(), z[0].end(), 0.0f);
    z[0][0] = 1.0f;
    wc.values[0] = 10.0f;  // W[0][0]
    probs = forward_classify(m, z);
    CHECK(probs[0][0] > 0.99f);

    // adding a constant to every logit via the bias leaves probs unchanged
    auto before = forward_classify(m, z);
    auto& bc = m.params[m.params.size() - 1];
    for (auto& v : bc.values) v += 3.25f;
    auto after = forward_classify(m, z);
    double row = 0.0;
    for (std::size_t j = 0; j < after[0].size(); ++j) {
        CHECK(std::abs(after[0][j] - before[0][j]) <= 1e-6);  // float32 logits
        row += after[0][j];
    }
    CHECK(std::abs(row - 1.0) <= 1e-6);  // float32 storage; the 1e-9 bound is checked in double
}

TEST_CASE("input and state errors carry the expected diagnostics") {
    const ArchitectureSpec arch = default_architecture(4, 0.125, 9, 11);
    Model<float> m = init_model<float>(arch, 1);
    BatchCache<float> cache;
    std::vector<std::vector<float>> bad{std::vector<float>(10, 0.0f)};
    CHECK_THROWS_WITH(forward_extract(m, bad, cache), Catch::Matchers::ContainsSubstring("expected 9x11"));
    BatchCache<float> empty;
    CHECK_THROWS_AS(
        backward(m, empty, static_cast<const UpstreamGrads<float>*>(nullptr), static_cast<const UpstreamGrads<float>*>(nullptr)),
        std::logic_error);
    std::vector<std::vector<float>> short_z{std::vector<float>(8, 0.0f)};
    CHECK_THROWS_WITH(forward_classify(m, short_z), Catch::Matchers::ContainsSubstring("expected 256"));
}

TEST_CASE("adam first step and fixed point") {
    Model<double> m;  // bare parameter holder; adam only touches params
    m.params.emplace_back(std::vector<std::size_t>{1});
    m.params[0].values[0] = 1.0;
    std::vector<Tensor<double>> g;
    g.emplace_back(std::vector<std::size_t>{1});
    g[0].values[0] = 1.0;
    AdamState<double> st;
    adam_step(m, g, 3e-4, st);
    const double step1 = m.params[0].values[0] - 1.0;
    CHECK(std::abs(step1 + 3e-4) <= 1e-6);
    adam_step(m, g, 3e-4, st);
    const double step2 = m.params[0].values[0] - 1.0 - step1;
    CHECK(std::abs(step2 - step1) <= 1e-6 * std::abs(step1));

    // zero gradient leaves the parameter unchanged
    Model<double> mz;
    mz.params.emplace_back(std::vector<std::size_t>{1});
    mz.params[0].values[0] = 2.0;
    std::vector<Tensor<double>> gz;
    gz.emplace_back(std::vector<std::size_t>{1});
    AdamState<double> stz;
    adam_step(mz, gz, 3e-4, stz);
    CHECK(mz.params[0].values[0] == 2.0);
}

TEST_CASE("plateau scheduler halving and stopping") {
    PlateauScheduler s{0.001, 10, 30};
    // strictly decreasing: lr fixed, never stops
    double loss = 10.0;
    for (int e = 0; e < 50; ++e) {
        const auto [lr, stop] = s.step(loss);
        CHECK(lr == 0.001);
        CHECK_FALSE(stop);
        loss -= 0.1;
    }
    // flat for exactly 10 epochs halves at epoch 10
    PlateauScheduler h{0.001, 10, 30};
    h.step(1.0);
    double lr_now = 0.0;
    for (int e = 0; e < 10; ++e) lr_now = h.step(1.0).first;
    CHECK(lr_now == Catch::Approx(0.0005));
    // flat for 30 epochs stops
    PlateauScheduler st{0.001, 10, 30};
    st.step(1.0);
    bool stopped = false;
    for (int e = 0; e < 30; ++e) stopped = st.step(1.0).second;
    CHECK(stopped);
}

TEST_CASE("checkpoint round-trips bitwise") {
    namespace fs = std::filesystem;
    const auto dir = fs::temp_directory_path() / "rffi_test_ckpt";
    fs::remove_all(dir);
    fs::create_directories(dir);

    const ArchitectureSpec arch = default_architecture(5, 0.25, 9, 11);
    const Model<float> m = init_model<float>(arch, 77);
    const std::string p1 = (dir / "full.ckpt").string();
    save_checkpoint(p1, m, true);
    const LoadedCheckpoint loaded = load_checkpoint(p1);
    REQUIRE(loaded.has_classifier);
    for (std::size_t p = 0; p < m.params.size(); ++p) REQUIRE(loaded.model.params[p].values == m.params[p].values);
    const std::string p2 = (dir / "full2.ckpt").string();
    save_checkpoint(p2, loaded.model, true);
    REQUIRE(read_file(p1) == read_file(p2));

    // extractor-only: classifier omitted, extractor identical
    const std::string pe = (dir / "extr.ckpt").string();
    save_checkpoint(pe, m, false);
    const LoadedCheckpoint extr = load_checkpoint(pe);
    REQUIRE_FALSE(extr.has_classifier);
    for (std::size_t p = 0; p < m.plan.extractor_params; ++p)
        REQUIRE(extr.model.params[p].values == m.params[p].values);
    CHECK(fs::file_size(pe) < fs::file_size(p1));

    fs::remove_all(dir);
}

TEST_CASE("architecture validation rejects inconsistent specs") {
    ArchitectureSpec arch = default_architecture(10, 1.0, 25, 127);
    arch.skip_connections[1] = {3, 5};
    CHECK_THROWS_AS(build_plan(arch), std::invalid_argument);
    arch = default_architecture(10, 1.0, 25, 127);
    arch.conv_stages.pop_back();
    CHECK_THROWS_AS(build_plan(arch), std::invalid_argument);
    arch = default_architecture(0, 1.0, 25, 127);
    CHECK_THROWS_AS(build_plan(arch), std::invalid_argument);
    arch = default_architecture(10, 1.0, 0, 5);
    CHECK_THROWS_AS(build_plan(arch), std::invalid_argument);
}
