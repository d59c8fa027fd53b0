#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <functional>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "rffi/rng.hpp"
#include "rffi/tensor.hpp"

namespace rffi {

// ---------------------------------------------------------------------------
// Architecture description
// ---------------------------------------------------------------------------

struct ConvStageSpec {
    int kernel_h = 3;
    int kernel_w = 3;
    int channels = 32;
    int stride = 1;
};

// Residual skip: the input of conv_stages[from] is added to the output of
// conv_stages[to] (a 1x1 projection is inserted when shapes differ).
struct SkipSpec {
    int from = 0;
    int to = 0;
};

// ResNet-style extractor plus a single dense classifier. The default encodes
// the reference layout: one 7x7x32 stem, four residual blocks of 3x3 convs
// (32, 32, 64, 64 channels), global average pooling, dense 512 and dense 256
// (the RFF embedding), and a K-way dense classifier. Stride 2 at the stem and
// at the first 64-channel conv. width_scale scales conv channel counts only.
struct ArchitectureSpec {
    int input_bins = 25;
    int input_frames = 127;
    std::vector<ConvStageSpec> conv_stages;
    std::vector<SkipSpec> skip_connections;
    std::vector<int> dense_sizes{512, 256};
    int num_classes = 10;
    double width_scale = 1.0;
};

inline ArchitectureSpec default_architecture(int num_classes, double width_scale = 1.0,
                                             int input_bins = 25, int input_frames = 127) {
    ArchitectureSpec a;
    a.input_bins = input_bins;
    a.input_frames = input_frames;
    a.num_classes = num_classes;
    a.width_scale = width_scale;
    a.conv_stages = {
        {7, 7, 32, 2},                                  // conv1
        {3, 3, 32, 1}, {3, 3, 32, 1},                   // conv2-3
        {3, 3, 32, 1}, {3, 3, 32, 1},                   // conv4-5
        {3, 3, 64, 2}, {3, 3, 64, 1},                   // conv6-7
        {3, 3, 64, 1}, {3, 3, 64, 1},                   // conv8-9
    };
    a.skip_connections = {{1, 2}, {3, 4}, {5, 6}, {7, 8}};
    return a;
}

inline int scaled_channels(const ArchitectureSpec& arch, int channels) {
    return std::max(1, static_cast<int>(std::llround(channels * arch.width_scale)));
}

// ---------------------------------------------------------------------------
// Layer plan (shape algebra resolved once per architecture)
// ---------------------------------------------------------------------------

struct ConvDims {
    int in_ch = 0, in_h = 0, in_w = 0;
    int out_ch = 0, out_h = 0, out_w = 0;
    int kh = 0, kw = 0, stride = 1, pad = 0;
};

struct BlockPlan {
    ConvDims conv_a;  // followed by ReLU
    ConvDims conv_b;  // pre-activation output, added to the skip path
    bool has_proj = false;
    ConvDims proj;  // 1x1 conv on the skip path when shapes differ
};

struct ModelPlan {
    ConvDims stem;
    std::vector<BlockPlan> blocks;
    int pool_ch = 0, pool_h = 0, pool_w = 0;
    int dense1_in = 0, dense1_out = 0, dense2_out = 0;
    int num_classes = 0;
    std::size_t param_count = 0;        // number of parameter tensors
    std::size_t extractor_params = 0;   // tensors before the classifier pair
};

namespace detail {

inline ConvDims make_conv_dims(int in_ch, int in_h, int in_w, const ConvStageSpec& s, int out_ch) {
    ConvDims d;
    d.in_ch = in_ch;
    d.in_h = in_h;
    d.in_w = in_w;
    d.out_ch = out_ch;
    d.kh = s.kernel_h;
    d.kw = s.kernel_w;
    d.stride = s.stride;
    d.pad = (s.kernel_h - 1) / 2;
    if (s.kernel_h != s.kernel_w) throw std::invalid_argument("ArchitectureSpec: kernels must be square");
    d.out_h = (in_h + 2 * d.pad - d.kh) / d.stride + 1;
    d.out_w = (in_w + 2 * d.pad - d.kw) / d.stride + 1;
    if (d.out_h <= 0 || d.out_w <= 0)
        throw std::invalid_argument("ArchitectureSpec: activation map collapsed to zero size");
    return d;
}

}  // namespace detail

inline ModelPlan build_plan(const ArchitectureSpec& arch) {
    if (arch.input_bins < 1 || arch.input_frames < 1)
        throw std::invalid_argument("ArchitectureSpec: input dims must be positive");
    if (arch.conv_stages.empty()) throw std::invalid_argument("ArchitectureSpec: no conv stages");
    if (arch.dense_sizes.size() != 2) throw std::invalid_argument("ArchitectureSpec: expected two dense sizes");
    if (arch.num_classes < 1) throw std::invalid_argument("ArchitectureSpec: num_classes must be >= 1");
    for (const auto& sk : arch.skip_connections)
        if (sk.to != sk.from + 1 || sk.from < 1 || sk.to >= static_cast<int>(arch.conv_stages.size()))
            throw std::invalid_argument("ArchitectureSpec: skips must span consecutive conv pairs after the stem");
    if (arch.skip_connections.size() * 2 + 1 != arch.conv_stages.size())
        throw std::invalid_argument("ArchitectureSpec: conv stages must form a stem plus residual pairs");

    ModelPlan plan;
    plan.stem = detail::make_conv_dims(1, arch.input_bins, arch.input_frames, arch.conv_stages[0],
                                       scaled_channels(arch, arch.conv_stages[0].channels));
    int ch = plan.stem.out_ch, h = plan.stem.out_h, w = plan.stem.out_w;

    for (const auto& sk : arch.skip_connections) {
        const auto& sa = arch.conv_stages[static_cast<std::size_t>(sk.from)];
        const auto& sb = arch.conv_stages[static_cast<std::size_t>(sk.to)];
        BlockPlan blk;
        blk.conv_a = detail::make_conv_dims(ch, h, w, sa, scaled_channels(arch, sa.channels));
        blk.conv_b = detail::make_conv_dims(blk.conv_a.out_ch, blk.conv_a.out_h, blk.conv_a.out_w, sb,
                                            scaled_channels(arch, sb.channels));
        if (blk.conv_b.out_ch != ch || blk.conv_b.out_h != h || blk.conv_b.out_w != w) {
            blk.has_proj = true;
            ConvStageSpec ps{1, 1, 0, sa.stride * sb.stride};
            blk.proj = detail::make_conv_dims(ch, h, w, ps, blk.conv_b.out_ch);
            if (blk.proj.out_h != blk.conv_b.out_h || blk.proj.out_w != blk.conv_b.out_w)
                throw std::invalid_argument("ArchitectureSpec: skip projection cannot match block output dims");
        }
        ch = blk.conv_b.out_ch;
        h = blk.conv_b.out_h;
        w = blk.conv_b.out_w;
        plan.blocks.push_back(blk);
    }

    plan.pool_ch = ch;
    plan.pool_h = h;
    plan.pool_w = w;
    plan.dense1_in = ch;
    plan.dense1_out = arch.dense_sizes[0];
    plan.dense2_out = arch.dense_sizes[1];
    plan.num_classes = arch.num_classes;

    std::size_t count = 2;  // stem w, b
    for (const auto& blk : plan.blocks) count += blk.has_proj ? 6 : 4;
    count += 4;  // dense1 w/b, dense2 w/b
    plan.extractor_params = count;
    plan.param_count = count + 2;  // classifier w/b
    return plan;
}

// ---------------------------------------------------------------------------
// Model
// ---------------------------------------------------------------------------

template <typename T>
struct Model {
    ArchitectureSpec arch;
    ModelPlan plan;
    std::vector<Tensor<T>> params;
};

namespace detail {

template <typename T>
Tensor<T> init_tensor(std::vector<std::size_t> shape, std::size_t fan_in, Rng& rng) {
    Tensor<T> t(std::move(shape));
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in));
    for (auto& v : t.values) v = static_cast<T>(rng.uniform(-limit, limit));
    return t;
}

template <typename T>
void push_conv_params(std::vector<Tensor<T>>& params, const ConvDims& d, Rng& rng) {
    const std::size_t fan_in = static_cast<std::size_t>(d.in_ch) * d.kh * d.kw;
    params.push_back(init_tensor<T>({static_cast<std::size_t>(d.out_ch), static_cast<std::size_t>(d.in_ch),
                                     static_cast<std::size_t>(d.kh), static_cast<std::size_t>(d.kw)},
                                    fan_in, rng));
    params.push_back(Tensor<T>({static_cast<std::size_t>(d.out_ch)}));  // bias zero
}

}  // namespace detail

// Fan-in-scaled uniform init, deterministic under seed; biases zero.
template <typename T>
Model<T> init_model(const ArchitectureSpec& arch, std::uint64_t seed) {
    Model<T> m;
    m.arch = arch;
    m.plan = build_plan(arch);
    Rng rng(derive_seed(seed, 0x1217ull));
    detail::push_conv_params(m.params, m.plan.stem, rng);
    for (const auto& blk : m.plan.blocks) {
        detail::push_conv_params(m.params, blk.conv_a, rng);
        detail::push_conv_params(m.params, blk.conv_b, rng);
        if (blk.has_proj) detail::push_conv_params(m.params, blk.proj, rng);
    }
    m.params.push_back(detail::init_tensor<T>({static_cast<std::size_t>(m.plan.dense1_out),
                                               static_cast<std::size_t>(m.plan.dense1_in)},
                                              static_cast<std::size_t>(m.plan.dense1_in), rng));
    m.params.push_back(Tensor<T>({static_cast<std::size_t>(m.plan.dense1_out)}));
    m.params.push_back(detail::init_tensor<T>({static_cast<std::size_t>(m.plan.dense2_out),
                                               static_cast<std::size_t>(m.plan.dense1_out)},
                                              static_cast<std::size_t>(m.plan.dense1_out), rng));
    m.params.push_back(Tensor<T>({static_cast<std::size_t>(m.plan.dense2_out)}));
    m.params.push_back(detail::init_tensor<T>({static_cast<std::size_t>(m.plan.num_classes),
                                               static_cast<std::size_t>(m.plan.dense2_out)},
                                              static_cast<std::size_t>(m.plan.dense2_out), rng));
    m.params.push_back(Tensor<T>({static_cast<std::size_t>(m.plan.num_classes)}));
    return m;
}

// ---------------------------------------------------------------------------
// Primitive kernels
// ---------------------------------------------------------------------------

namespace detail {

// valid output-column range [lo, hi) for a kernel column offset: the ow with
// 0 <= ow*stride - pad + kj < in_w
inline std::pair<int, int> valid_ow_span(int kj, const ConvDims& d) {
    const int shift = kj - d.pad;
    int lo = 0;
    if (shift < 0) lo = (-shift + d.stride - 1) / d.stride;
    int hi = d.out_w;
    if (shift + (d.out_w - 1) * d.stride >= d.in_w) hi = (d.in_w - 1 - shift) / d.stride + 1;
    if (hi < lo) hi = lo;
    return {lo, hi};
}

// cols is [in_ch*kh*kw] x [out_h*out_w], row-major.
template <typename T>
void im2col(const T* x, const ConvDims& d, T* cols) {
    const int on = d.out_h * d.out_w;
    int row = 0;
    for (int c = 0; c < d.in_ch; ++c) {
        const T* xc = x + static_cast<std::size_t>(c) * d.in_h * d.in_w;
        for (int ki = 0; ki < d.kh; ++ki) {
            for (int kj = 0; kj < d.kw; ++kj, ++row) {
                T* out_row = cols + static_cast<std::size_t>(row) * on;
                const auto [lo, hi] = valid_ow_span(kj, d);
                for (int oh = 0; oh < d.out_h; ++oh) {
                    const int ih = oh * d.stride - d.pad + ki;
                    T* dst = out_row + static_cast<std::size_t>(oh) * d.out_w;
                    if (ih < 0 || ih >= d.in_h) {
                        for (int ow = 0; ow < d.out_w; ++ow) dst[ow] = T(0);
                        continue;
                    }
                    const T* xr = xc + static_cast<std::size_t>(ih) * d.in_w + (kj - d.pad);
                    for (int ow = 0; ow < lo; ++ow) dst[ow] = T(0);
                    if (d.stride == 1) {
                        for (int ow = lo; ow < hi; ++ow) dst[ow] = xr[ow];
                    } else {
                        for (int ow = lo; ow < hi; ++ow) dst[ow] = xr[ow * d.stride];
                    }
                    for (int ow = hi; ow < d.out_w; ++ow) dst[ow] = T(0);
                }
            }
        }
    }
}

template <typename T>
void col2im_add(const T* cols, const ConvDims& d, T* dx) {
    const int on = d.out_h * d.out_w;
    int row = 0;
    for (int c = 0; c < d.in_ch; ++c) {
        T* xc = dx + static_cast<std::size_t>(c) * d.in_h * d.in_w;
        for (int ki = 0; ki < d.kh; ++ki) {
            for (int kj = 0; kj < d.kw; ++kj, ++row) {
                const T* in_row = cols + static_cast<std::size_t>(row) * on;
                const auto [lo, hi] = valid_ow_span(kj, d);
                for (int oh = 0; oh < d.out_h; ++oh) {
                    const int ih = oh * d.stride - d.pad + ki;
                    if (ih < 0 || ih >= d.in_h) continue;
                    const T* src = in_row + static_cast<std::size_t>(oh) * d.out_w;
                    T* xr = xc + static_cast<std::size_t>(ih) * d.in_w + (kj - d.pad);
                    if (d.stride == 1) {
                        for (int ow = lo; ow < hi; ++ow) xr[ow] += src[ow];
                    } else {
                        for (int ow = lo; ow < hi; ++ow) xr[ow * d.stride] += src[ow];
                    }
                }
            }
        }
    }
}

// C[M,N] = A[M,K] * B[K,N] + bias broadcast per row (bias may be null).
template <typename T>
void gemm_bias(const T* a, const T* b, const T* bias, T* c, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        T* ci = c + static_cast<std::size_t>(i) * n;
        const T binit = bias ? bias[i] : T(0);
        for (int j = 0; j < n; ++j) ci[j] = binit;
        const T* ai = a + static_cast<std::size_t>(i) * k;
        int p = 0;
        for (; p + 1 < k; p += 2) {  // two A values per pass over C's row
            const T a0 = ai[p], a1 = ai[p + 1];
            const T* b0 = b + static_cast<std::size_t>(p) * n;
            const T* b1 = b0 + n;
            for (int j = 0; j < n; ++j) ci[j] += a0 * b0[j] + a1 * b1[j];
        }
        for (; p < k; ++p) {
            const T av = ai[p];
            const T* bp = b + static_cast<std::size_t>(p) * n;
            for (int j = 0; j < n; ++j) ci[j] += av * bp[j];
        }
    }
}

// Row dot product over eight independent accumulators so the reduction
// pipelines and vectorizes (explicit reassociation; order is still fixed).
template <typename T>
T dot_rows(const T* x, const T* y, int n) {
    T acc[8] = {T(0), T(0), T(0), T(0), T(0), T(0), T(0), T(0)};
    int j = 0;
    for (; j + 8 <= n; j += 8)
        for (int u = 0; u < 8; ++u) acc[u] += x[j + u] * y[j + u];
    T tail = T(0);
    for (; j < n; ++j) tail += x[j] * y[j];
    return (((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]))) + tail;
}

// dA[M,K] += dC[M,N] * B[K,N]^T
template <typename T>
void gemm_nt_acc(const T* dc, const T* b, T* da, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        const T* dci = dc + static_cast<std::size_t>(i) * n;
        T* dai = da + static_cast<std::size_t>(i) * k;
        for (int p = 0; p < k; ++p) dai[p] += dot_rows(dci, b + static_cast<std::size_t>(p) * n, n);
    }
}

// dB[K,N] = A[M,K]^T * dC[M,N]
template <typename T>
void gemm_tn(const T* a, const T* dc, T* db, int m, int k, int n) {
    std::fill(db, db + static_cast<std::size_t>(k) * n, T(0));
    for (int i = 0; i < m; ++i) {
        const T* ai = a + static_cast<std::size_t>(i) * k;
        const T* dci = dc + static_cast<std::size_t>(i) * n;
        for (int p = 0; p < k; ++p) {
            const T av = ai[p];
            T* dbp = db + static_cast<std::size_t>(p) * n;
            for (int j = 0; j < n; ++j) dbp[j] += av * dci[j];
        }
    }
}

template <typename T>
void conv_forward(const T* x, const Tensor<T>& w, const Tensor<T>& b, const ConvDims& d, T* out,
                  std::vector<T>& cols_buf) {
    const int kk = d.in_ch * d.kh * d.kw;
    const int on = d.out_h * d.out_w;
    cols_buf.resize(static_cast<std::size_t>(kk) * on);
    im2col(x, d, cols_buf.data());
    gemm_bias(w.values.data(), cols_buf.data(), b.values.data(), out, d.out_ch, kk, on);
}

// Accumulates dW/dB, writes dX (if non-null).
template <typename T>
void conv_backward(const T* x, const Tensor<T>& w, const ConvDims& d, const T* dout, T* dw, T* db, T* dx,
                   std::vector<T>& cols_buf, std::vector<T>& dcols_buf) {
    const int kk = d.in_ch * d.kh * d.kw;
    const int on = d.out_h * d.out_w;
    cols_buf.resize(static_cast<std::size_t>(kk) * on);
    im2col(x, d, cols_buf.data());
    for (int oc = 0; oc < d.out_ch; ++oc) {
        const T* drow = dout + static_cast<std::size_t>(oc) * on;
        T s0 = T(0), s1 = T(0), s2 = T(0), s3 = T(0);
        int j = 0;
        for (; j + 3 < on; j += 4) {
            s0 += drow[j];
            s1 += drow[j + 1];
            s2 += drow[j + 2];
            s3 += drow[j + 3];
        }
        for (; j < on; ++j) s0 += drow[j];
        db[oc] += ((s0 + s1) + (s2 + s3));
    }
    gemm_nt_acc(dout, cols_buf.data(), dw, d.out_ch, kk, on);
    if (dx) {
        dcols_buf.resize(static_cast<std::size_t>(kk) * on);
        gemm_tn(w.values.data(), dout, dcols_buf.data(), d.out_ch, kk, on);
        std::fill(dx, dx + static_cast<std::size_t>(d.in_ch) * d.in_h * d.in_w, T(0));
        col2im_add(dcols_buf.data(), d, dx);
    }
}

template <typename T>
void relu_inplace(std::vector<T>& v) {
    for (auto& x : v)
        if (x < T(0)) x = T(0);
}

inline unsigned worker_count() {
    if (const char* env = std::getenv("RFFI_WORKERS")) {
        const long n = std::strtol(env, nullptr, 10);
        if (n >= 1) return static_cast<unsigned>(n);
    }
    const unsigned hw = std::thread::hardware_concurrency();
    return hw ? hw : 1;
}

// Runs fn(shard) for shard = 0..nshards-1 on up to worker_count() threads.
// Work assignment is by shard id, so results cannot depend on thread count.
inline void parallel_shards(int nshards, const std::function<void(int)>& fn) {
    const unsigned workers = std::min<unsigned>(worker_count(), static_cast<unsigned>(nshards));
    if (workers <= 1) {
        for (int s = 0; s < nshards; ++s) fn(s);
        return;
    }
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (unsigned t = 0; t < workers; ++t)
        pool.emplace_back([&, t] {
            for (int s = static_cast<int>(t); s < nshards; s += static_cast<int>(workers)) fn(s);
        });
    for (auto& th : pool) th.join();
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Forward / backward
// ---------------------------------------------------------------------------

template <typename T>
struct SampleCache {
    std::vector<T> input;
    std::vector<T> stem_out;  // post-ReLU
    struct BlockCache {
        std::vector<T> a_out;    // post-ReLU
        std::vector<T> proj_out; // empty when identity skip
        std::vector<T> sum_out;  // post-ReLU block output
    };
    std::vector<BlockCache> blocks;
    std::vector<T> pooled;
    std::vector<T> d1_out;  // post-ReLU
    std::vector<T> z;
    std::vector<T> logits;
    std::vector<T> probs;
    bool extracted = false;
    bool classified = false;
};

template <typename T>
struct BatchCache {
    std::vector<SampleCache<T>> samples;
};

namespace detail {

template <typename T>
void forward_sample(const Model<T>& m, const std::vector<T>& input, SampleCache<T>& sc) {
    const ModelPlan& plan = m.plan;
    std::vector<T> cols;
    sc.input = input;

    sc.stem_out.resize(static_cast<std::size_t>(plan.stem.out_ch) * plan.stem.out_h * plan.stem.out_w);
    conv_forward(sc.input.data(), m.params[0], m.params[1], plan.stem, sc.stem_out.data(), cols);
    relu_inplace(sc.stem_out);

    std::size_t pi = 2;
    const std::vector<T>* x = &sc.stem_out;
    sc.blocks.resize(plan.blocks.size());
    for (std::size_t bi = 0; bi < plan.blocks.size(); ++bi) {
        const BlockPlan& blk = plan.blocks[bi];
        auto& bc = sc.blocks[bi];
        bc.a_out.resize(static_cast<std::size_t>(blk.conv_a.out_ch) * blk.conv_a.out_h * blk.conv_a.out_w);
        conv_forward(x->data(), m.params[pi], m.params[pi + 1], blk.conv_a, bc.a_out.data(), cols);
        relu_inplace(bc.a_out);
        bc.sum_out.resize(static_cast<std::size_t>(blk.conv_b.out_ch) * blk.conv_b.out_h * blk.conv_b.out_w);
        conv_forward(bc.a_out.data(), m.params[pi + 2], m.params[pi + 3], blk.conv_b, bc.sum_out.data(), cols);
        pi += 4;
        if (blk.has_proj) {
            bc.proj_out.resize(bc.sum_out.size());
            conv_forward(x->data(), m.params[pi], m.params[pi + 1], blk.proj, bc.proj_out.data(), cols);
            pi += 2;
            for (std::size_t i = 0; i < bc.sum_out.size(); ++i) bc.sum_out[i] += bc.proj_out[i];
        } else {
            for (std::size_t i = 0; i < bc.sum_out.size(); ++i) bc.sum_out[i] += (*x)[i];
        }
        relu_inplace(bc.sum_out);
        x = &bc.sum_out;
    }

    const int hw = plan.pool_h * plan.pool_w;
    sc.pooled.assign(static_cast<std::size_t>(plan.pool_ch), T(0));
    for (int c = 0; c < plan.pool_ch; ++c) {
        const T* xc = x->data() + static_cast<std::size_t>(c) * hw;
        T acc = T(0);
        for (int i = 0; i < hw; ++i) acc += xc[i];
        sc.pooled[static_cast<std::size_t>(c)] = acc / static_cast<T>(hw);
    }

    const Tensor<T>& w1 = m.params[pi];
    const Tensor<T>& b1 = m.params[pi + 1];
    sc.d1_out.resize(static_cast<std::size_t>(plan.dense1_out));
    gemm_bias(w1.values.data(), sc.pooled.data(), b1.values.data(), sc.d1_out.data(), plan.dense1_out,
              plan.dense1_in, 1);
    relu_inplace(sc.d1_out);

    const Tensor<T>& w2 = m.params[pi + 2];
    const Tensor<T>& b2 = m.params[pi + 3];
    sc.z.resize(static_cast<std::size_t>(plan.dense2_out));
    gemm_bias(w2.values.data(), sc.d1_out.data(), b2.values.data(), sc.z.data(), plan.dense2_out,
              plan.dense1_out, 1);
    sc.extracted = true;
    sc.classified = false;
}

// Accumulates parameter gradients for one sample into `grads` and returns
// nothing; dz/dlogits may be null (treated as zero).
template <typename T>
void backward_sample(const Model<T>& m, const SampleCache<T>& sc, const T* dz_in, const T* dlogits,
                     std::vector<Tensor<T>>& grads) {
    const ModelPlan& plan = m.plan;
    std::vector<T> cols, dcols;

    const std::size_t cls_w = m.params.size() - 2;
    std::vector<T> dz(sc.z.size(), T(0));
    if (dz_in)
        for (std::size_t i = 0; i < dz.size(); ++i) dz[i] = dz_in[i];
    if (dlogits) {
        if (!sc.classified) throw std::logic_error("backward: classifier gradient given without forward_classify");
        const Tensor<T>& wc = m.params[cls_w];
        for (int k = 0; k < plan.num_classes; ++k) {
            const T g = dlogits[k];
            grads[cls_w + 1].values[static_cast<std::size_t>(k)] += g;
            if (g == T(0)) continue;
            for (int i = 0; i < plan.dense2_out; ++i) {
                grads[cls_w].values[static_cast<std::size_t>(k) * plan.dense2_out + i] += g * sc.z[static_cast<std::size_t>(i)];
                dz[static_cast<std::size_t>(i)] += g * wc.values[static_cast<std::size_t>(k) * plan.dense2_out + i];
            }
        }
    }

    const std::size_t d2_w = cls_w - 2;
    const std::size_t d1_w = cls_w - 4;

    // dense2 (linear)
    std::vector<T> dd1(sc.d1_out.size(), T(0));
    {
        const Tensor<T>& w2 = m.params[d2_w];
        for (int o = 0; o < plan.dense2_out; ++o) {
            const T g = dz[static_cast<std::size_t>(o)];
            grads[d2_w + 1].values[static_cast<std::size_t>(o)] += g;
            if (g == T(0)) continue;
            const T* wrow = w2.values.data() + static_cast<std::size_t>(o) * plan.dense1_out;
            T* gw = grads[d2_w].values.data() + static_cast<std::size_t>(o) * plan.dense1_out;
            for (int i = 0; i < plan.dense1_out; ++i) {
                gw[i] += g * sc.d1_out[static_cast<std::size_t>(i)];
                dd1[static_cast<std::size_t>(i)] += g * wrow[i];
            }
        }
    }
    // ReLU on dense1
    for (std::size_t i = 0; i < dd1.size(); ++i)
        if (sc.d1_out[i] <= T(0)) dd1[i] = T(0);

    // dense1
    std::vector<T> dpooled(sc.pooled.size(), T(0));
    {
        const Tensor<T>& w1 = m.params[d1_w];
        for (int o = 0; o < plan.dense1_out; ++o) {
            const T g = dd1[static_cast<std::size_t>(o)];
            grads[d1_w + 1].values[static_cast<std::size_t>(o)] += g;
            if (g == T(0)) continue;
            const T* wrow = w1.values.data() + static_cast<std::size_t>(o) * plan.dense1_in;
            T* gw = grads[d1_w].values.data() + static_cast<std::size_t>(o) * plan.dense1_in;
            for (int i = 0; i < plan.dense1_in; ++i) {
                gw[i] += g * sc.pooled[static_cast<std::size_t>(i)];
                dpooled[static_cast<std::size_t>(i)] += g * wrow[i];
            }
        }
    }

    // average pool
    const int hw = plan.pool_h * plan.pool_w;
    std::vector<T> dx(static_cast<std::size_t>(plan.pool_ch) * hw);
    for (int c = 0; c < plan.pool_ch; ++c) {
        const T g = dpooled[static_cast<std::size_t>(c)] / static_cast<T>(hw);
        T* dxc = dx.data() + static_cast<std::size_t>(c) * hw;
        for (int i = 0; i < hw; ++i) dxc[i] = g;
    }

    // residual blocks, reverse order
    std::size_t pi_end = d1_w;  // first param index beyond the last block
    std::vector<std::size_t> block_pi(plan.blocks.size());
    {
        std::size_t pi = 2;
        for (std::size_t bi = 0; bi < plan.blocks.size(); ++bi) {
            block_pi[bi] = pi;
            pi += plan.blocks[bi].has_proj ? 6 : 4;
        }
        if (pi != pi_end) throw std::logic_error("backward: parameter layout mismatch");
    }

    for (std::size_t bi = plan.blocks.size(); bi-- > 0;) {
        const BlockPlan& blk = plan.blocks[bi];
        const auto& bc = sc.blocks[bi];
        const std::vector<T>& block_in = (bi == 0) ? sc.stem_out : sc.blocks[bi - 1].sum_out;
        const std::size_t pi = block_pi[bi];

        // ReLU after the add
        std::vector<T> dsum = std::move(dx);
        for (std::size_t i = 0; i < dsum.size(); ++i)
            if (bc.sum_out[i] <= T(0)) dsum[i] = T(0);

        // conv_b
        std::vector<T> da(bc.a_out.size());
        conv_backward(bc.a_out.data(), m.params[pi + 2], blk.conv_b, dsum.data(),
                      grads[pi + 2].values.data(), grads[pi + 3].values.data(), da.data(), cols, dcols);
        // ReLU after conv_a
        for (std::size_t i = 0; i < da.size(); ++i)
            if (bc.a_out[i] <= T(0)) da[i] = T(0);
        // conv_a
        std::vector<T> dincoming(block_in.size());
        conv_backward(block_in.data(), m.params[pi], blk.conv_a, da.data(), grads[pi].values.data(),
                      grads[pi + 1].values.data(), dincoming.data(), cols, dcols);
        // skip path
        if (blk.has_proj) {
            std::vector<T> dproj_in(block_in.size());
            conv_backward(block_in.data(), m.params[pi + 4], blk.proj, dsum.data(),
                          grads[pi + 4].values.data(), grads[pi + 5].values.data(), dproj_in.data(), cols, dcols);
            for (std::size_t i = 0; i < dincoming.size(); ++i) dincoming[i] += dproj_in[i];
        } else {
            for (std::size_t i = 0; i < dincoming.size(); ++i) dincoming[i] += dsum[i];
        }
        dx = std::move(dincoming);
    }

    // stem: ReLU then conv (input gradient not needed)
    for (std::size_t i = 0; i < dx.size(); ++i)
        if (sc.stem_out[i] <= T(0)) dx[i] = T(0);
    conv_backward(sc.input.data(), m.params[0], plan.stem, dx.data(), grads[0].values.data(),
                  grads[1].values.data(), static_cast<T*>(nullptr), cols, dcols);
}

}  // namespace detail

template <typename T>
std::vector<Tensor<T>> zero_grads(const Model<T>& m) {
    std::vector<Tensor<T>> g;
    g.reserve(m.params.size());
    for (const auto& p : m.params) g.emplace_back(p.shape);
    return g;
}

// Batch of flattened [bins*frames] inputs -> batch of embeddings z. Caches
// everything backward() needs.
template <typename T>
std::vector<std::vector<T>> forward_extract(const Model<T>& m, const std::vector<std::vector<T>>& inputs,
                                            BatchCache<T>& cache) {
    const std::size_t expected =
        static_cast<std::size_t>(m.arch.input_bins) * static_cast<std::size_t>(m.arch.input_frames);
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        if (inputs[i].size() != expected) {
            std::ostringstream os;
            os << "forward_extract: input " << i << " has " << inputs[i].size() << " values, expected "
               << m.arch.input_bins << "x" << m.arch.input_frames << " = " << expected;
            throw std::invalid_argument(os.str());
        }
    }
    cache.samples.assign(inputs.size(), SampleCache<T>{});
    constexpr int kShards = 8;
    detail::parallel_shards(kShards, [&](int shard) {
        for (std::size_t i = static_cast<std::size_t>(shard); i < inputs.size(); i += kShards)
            detail::forward_sample(m, inputs[i], cache.samples[i]);
    });
    std::vector<std::vector<T>> out(inputs.size());
    for (std::size_t i = 0; i < inputs.size(); ++i) out[i] = cache.samples[i].z;
    return out;
}

// Softmax classifier head on a batch of embeddings. When a cache from
// forward_extract is supplied the logits are recorded for backward().
template <typename T>
std::vector<std::vector<T>> forward_classify(const Model<T>& m, const std::vector<std::vector<T>>& zs,
                                             BatchCache<T>* cache = nullptr) {
    const std::size_t k = static_cast<std::size_t>(m.plan.num_classes);
    const std::size_t d = static_cast<std::size_t>(m.plan.dense2_out);
    const Tensor<T>& w = m.params[m.params.size() - 2];
    const Tensor<T>& b = m.params[m.params.size() - 1];
    std::vector<std::vector<T>> probs(zs.size());
    for (std::size_t i = 0; i < zs.size(); ++i) {
        if (zs[i].size() != d) {
            std::ostringstream os;
            os << "forward_classify: embedding " << i << " has length " << zs[i].size() << ", expected " << d;
            throw std::invalid_argument(os.str());
        }
        std::vector<T> logits(k);
        detail::gemm_bias(w.values.data(), zs[i].data(), b.values.data(), logits.data(), static_cast<int>(k),
                          static_cast<int>(d), 1);
        // numerically stable softmax
        T mx = logits[0];
        for (const T v : logits) mx = std::max(mx, v);
        double denom = 0.0;
        std::vector<double> e(k);
        for (std::size_t j = 0; j < k; ++j) {
            e[j] = std::exp(static_cast<double>(logits[j] - mx));
            denom += e[j];
        }
        probs[i].resize(k);
        for (std::size_t j = 0; j < k; ++j) probs[i][j] = static_cast<T>(e[j] / denom);
        if (cache) {
            if (i >= cache->samples.size() || !cache->samples[i].extracted)
                throw std::logic_error("forward_classify: cache does not match a prior forward_extract");
            cache->samples[i].logits = std::move(logits);
            cache->samples[i].probs = probs[i];
            cache->samples[i].classified = true;
        }
    }
    return probs;
}

// Exact analytic gradients of the cached forward pass. grad_z and grad_logits
// are per-sample upstream gradients; either may be null. Gradients are
// accumulated shard-by-shard in a fixed order, so the result is bitwise
// independent of the worker count.
template <typename T>
using UpstreamGrads = std::vector<std::vector<T>>;

template <typename T>
std::vector<Tensor<T>> backward(const Model<T>& m, const BatchCache<T>& cache,
                                const UpstreamGrads<T>* grad_z, const UpstreamGrads<T>* grad_logits) {
    if (cache.samples.empty()) throw std::logic_error("backward: no cached forward pass");
    for (const auto& sc : cache.samples)
        if (!sc.extracted) throw std::logic_error("backward: cache sample missing forward_extract");
    const std::size_t n = cache.samples.size();
    if (grad_z && grad_z->size() != n) throw std::invalid_argument("backward: grad_z batch size mismatch");
    if (grad_logits && grad_logits->size() != n)
        throw std::invalid_argument("backward: grad_logits batch size mismatch");

    constexpr int kShards = 8;
    std::vector<std::vector<Tensor<T>>> shard_grads(kShards);
    detail::parallel_shards(kShards, [&](int shard) {
        shard_grads[static_cast<std::size_t>(shard)] = zero_grads(m);
        auto& grads = shard_grads[static_cast<std::size_t>(shard)];
        for (std::size_t i = static_cast<std::size_t>(shard); i < n; i += kShards) {
            const T* dz = grad_z ? (*grad_z)[i].data() : nullptr;
            const T* dl = grad_logits ? (*grad_logits)[i].data() : nullptr;
            detail::backward_sample(m, cache.samples[i], dz, dl, grads);
        }
    });
    std::vector<Tensor<T>> total = std::move(shard_grads[0]);
    for (int s = 1; s < kShards; ++s)
        for (std::size_t p = 0; p < total.size(); ++p)
            for (std::size_t i = 0; i < total[p].values.size(); ++i)
                total[p].values[i] += shard_grads[static_cast<std::size_t>(s)][p].values[i];
    return total;
}

// ---------------------------------------------------------------------------
// Adam and the plateau scheduler
// ---------------------------------------------------------------------------

template <typename T>
struct AdamState {
    std::vector<std::vector<double>> m, v;
    std::int64_t step = 0;
};

// Standard Adam, beta1 = 0.9, beta2 = 0.999, eps = 1e-8. Moments are kept in
// double regardless of the parameter type. An optional trainable mask skips
// tensors (used by freeze_extractor).
template <typename T>
void adam_step(Model<T>& model, const std::vector<Tensor<T>>& grads, double lr, AdamState<T>& state,
               const std::vector<bool>* trainable = nullptr) {
    constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kEps = 1e-8;
    if (grads.size() != model.params.size())
        throw std::invalid_argument("adam_step: gradient set does not match parameters");
    if (state.m.empty()) {
        state.m.resize(model.params.size());
        state.v.resize(model.params.size());
        for (std::size_t p = 0; p < model.params.size(); ++p) {
            state.m[p].assign(model.params[p].size(), 0.0);
            state.v[p].assign(model.params[p].size(), 0.0);
        }
    }
    state.step += 1;
    const double bc1 = 1.0 - std::pow(kBeta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(kBeta2, static_cast<double>(state.step));
    for (std::size_t p = 0; p < model.params.size(); ++p) {
        if (trainable && !(*trainable)[p]) continue;
        if (!grads[p].shape_equals(model.params[p]))
            throw std::invalid_argument("adam_step: gradient shape mismatch");
        auto& mp = state.m[p];
        auto& vp = state.v[p];
        auto& pv = model.params[p].values;
        const auto& gv = grads[p].values;
        for (std::size_t i = 0; i < pv.size(); ++i) {
            const double g = static_cast<double>(gv[i]);
            mp[i] = kBeta1 * mp[i] + (1.0 - kBeta1) * g;
            vp[i] = kBeta2 * vp[i] + (1.0 - kBeta2) * g * g;
            const double mhat = mp[i] / bc1;
            const double vhat = vp[i] / bc2;
            pv[i] = static_cast<T>(static_cast<double>(pv[i]) - lr * mhat / (std::sqrt(vhat) + kEps));
        }
    }
}

// Halves the learning rate after `patience` epochs without val-loss
// improvement and requests a stop after `stop_patience` epochs without one.
struct PlateauScheduler {
    double lr;
    int patience = 10;
    int stop_patience = 30;

    double best = std::numeric_limits<double>::infinity();
    int epochs_since_improvement = 0;

    // Returns {current lr, stop flag}; call once per epoch.
    std::pair<double, bool> step(double val_loss) {
        if (val_loss < best) {
            best = val_loss;
            epochs_since_improvement = 0;
            return {lr, false};
        }
        epochs_since_improvement += 1;
        if (epochs_since_improvement % patience == 0) lr *= 0.5;
        return {lr, epochs_since_improvement >= stop_patience};
    }
};

}  // namespace rffi
