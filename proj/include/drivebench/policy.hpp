#pragma once

// Learned driving policy: a small convolutional encoder over the 2-channel
// occupancy grid, a gated recurrent cell that unrolls T steps conditioned on
// the goal, and an affine head emitting per-step waypoint deltas. Training is
// plain supervised imitation with an L1 objective, AdamW updates, and
// hand-derived backpropagation (verified against finite differences).
//
// Everything numeric is templated on the scalar type: training and inference
// run in float, gradient checking re-instantiates the exact same code in
// double so finite differences are trustworthy.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "drivebench/dataset.hpp"
#include "drivebench/sensors.hpp"

namespace drivebench {

struct ShapeMismatch : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct LengthMismatch : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct EmptyDataset : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct NonFiniteLoss : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Architecture constants and the flat parameter layout
// ---------------------------------------------------------------------------

namespace net {

constexpr int kGrid = BevImage::kCells;             // 64
constexpr std::array<int, 5> kChannels{2, 8, 16, 32, 64};
constexpr int kStages = 4;                          // stride-2 3x3 stages
constexpr int kHidden = 64;                         // recurrent state size
constexpr int kGruIn = 4;                           // prev waypoint + goal
constexpr int kHeadOut = 2;
constexpr double kCountNorm = 8.0;                  // grid counts clamp/scale

// One named tensor inside the flat parameter vector.
struct TensorSpec {
    const char* name;
    size_t offset;
    size_t count;
    size_t fan_in;  // drives the init bound sqrt(1/fan_in)
};

struct ParamLayout {
    std::array<TensorSpec, 14> tensors;
    size_t total = 0;

    const TensorSpec& operator[](size_t i) const { return tensors[i]; }
    const TensorSpec& find(const std::string& name) const {
        for (const TensorSpec& t : tensors)
            if (name == t.name) return t;
        throw std::out_of_range("no tensor named " + name);
    }
};

inline const ParamLayout& param_layout() {
    static const ParamLayout layout = [] {
        ParamLayout l;
        size_t off = 0;
        size_t i = 0;
        const auto add = [&](const char* name, size_t count, size_t fan_in) {
            l.tensors[i++] = {name, off, count, fan_in};
            off += count;
        };
        for (int s = 0; s < kStages; ++s) {
            const size_t ic = static_cast<size_t>(kChannels[s]);
            const size_t oc = static_cast<size_t>(kChannels[s + 1]);
            static const char* wn[] = {"conv1.w", "conv2.w", "conv3.w", "conv4.w"};
            static const char* bn[] = {"conv1.b", "conv2.b", "conv3.b", "conv4.b"};
            add(wn[s], oc * ic * 9, ic * 9);
            add(bn[s], oc, ic * 9);
        }
        add("gru.w_ih", 3 * kHidden * kGruIn, kGruIn);
        add("gru.w_hh", 3 * kHidden * kHidden, kHidden);
        add("gru.b_ih", 3 * kHidden, kGruIn);
        add("gru.b_hh", 3 * kHidden, kHidden);
        add("head.w", kHeadOut * kHidden, kHidden);
        add("head.b", kHeadOut, kHidden);
        l.total = off;
        return l;
    }();
    return layout;
}

inline size_t param_count() { return param_layout().total; }

// Grid side length after each stage: 64 -> 32 -> 16 -> 8 -> 4.
constexpr int stage_side(int stage) { return kGrid >> stage; }

}  // namespace net

// Seeded parameter vector: uniform +-sqrt(1/fan_in) per tensor, drawn in
// declaration order so the blob is reproducible from the seed alone.
inline std::vector<float> init_params(uint64_t seed) {
    const net::ParamLayout& layout = net::param_layout();
    std::vector<float> p(layout.total);
    Rng rng = Rng::derive(seed, 1);
    for (const net::TensorSpec& t : layout.tensors) {
        const double bound = std::sqrt(1.0 / static_cast<double>(t.fan_in));
        for (size_t i = 0; i < t.count; ++i)
            p[t.offset + i] = static_cast<float>(rng.uniform(-bound, bound));
    }
    return p;
}

// ---------------------------------------------------------------------------
// Forward / backward core (scalar-templated)
// ---------------------------------------------------------------------------

namespace net {

// Weight views re-packed for the forward pass: the convolution inner loop
// vectorizes over output channels, which wants a [k][oc] transpose of the
// stored [oc][k] rows. Rebuilt whenever the parameters change.
template <typename S>
struct FwdWeights {
    std::array<std::vector<S>, kStages> conv_wt;  // K x OC, K = 9*ic
    std::array<const S*, kStages> conv_b{};
    const S* gru_w_ih = nullptr;
    const S* gru_w_hh = nullptr;
    const S* gru_b_ih = nullptr;
    const S* gru_b_hh = nullptr;
    const S* head_w = nullptr;
    const S* head_b = nullptr;
};

template <typename S>
void prepare_weights(const std::vector<S>& params, FwdWeights<S>& fw) {
    const ParamLayout& L = param_layout();
    if (params.size() != L.total)
        throw ShapeMismatch("parameter vector has " + std::to_string(params.size()) +
                            " entries, expected " + std::to_string(L.total));
    for (int s = 0; s < kStages; ++s) {
        const int ic = kChannels[s], oc = kChannels[s + 1];
        const size_t K = static_cast<size_t>(ic) * 9;
        const S* w = params.data() + L[static_cast<size_t>(2 * s)].offset;
        auto& wt = fw.conv_wt[s];
        wt.resize(K * static_cast<size_t>(oc));
        for (int o = 0; o < oc; ++o)
            for (size_t k = 0; k < K; ++k)
                wt[k * static_cast<size_t>(oc) + static_cast<size_t>(o)] =
                    w[static_cast<size_t>(o) * K + k];
        fw.conv_b[s] = params.data() + L[static_cast<size_t>(2 * s) + 1].offset;
    }
    fw.gru_w_ih = params.data() + L.find("gru.w_ih").offset;
    fw.gru_w_hh = params.data() + L.find("gru.w_hh").offset;
    fw.gru_b_ih = params.data() + L.find("gru.b_ih").offset;
    fw.gru_b_hh = params.data() + L.find("gru.b_hh").offset;
    fw.head_w = params.data() + L.find("head.w").offset;
    fw.head_b = params.data() + L.find("head.b").offset;
}

// Everything the backward pass needs from one forward evaluation.
template <typename S>
struct GruStep {
    std::array<S, kGruIn> x;
    std::array<S, kHidden> h_prev, r, z, n, hn_lin, h;
};

template <typename S>
struct Activations {
    std::array<std::vector<S>, kStages> col;       // im2col patches per stage
    std::array<std::vector<S>, kStages> pre;       // pre-activation outputs
    std::array<std::vector<S>, kStages> act;       // post-ReLU outputs
    std::array<S, kHidden> feat;                   // pooled feature = h_0
    std::vector<GruStep<S>> steps;                 // one per unrolled waypoint
    std::vector<std::array<S, 2>> waypoints;       // decoded series
};

// Patches are laid out row = output cell, col = (ky, kx, ic); activations are
// channel-last so each (ky, kx) block is one contiguous copy.
template <typename S>
void im2col(const S* in, int side, int ic, std::vector<S>& col) {
    const int out = side / 2;
    const size_t K = static_cast<size_t>(ic) * 9;
    col.assign(static_cast<size_t>(out) * static_cast<size_t>(out) * K, S(0));
    for (int oy = 0; oy < out; ++oy)
        for (int ox = 0; ox < out; ++ox) {
            S* row = col.data() + (static_cast<size_t>(oy) * static_cast<size_t>(out) +
                                   static_cast<size_t>(ox)) *
                                      K;
            for (int ky = 0; ky < 3; ++ky) {
                const int y = 2 * oy + ky - 1;
                if (y < 0 || y >= side) continue;
                for (int kx = 0; kx < 3; ++kx) {
                    const int x = 2 * ox + kx - 1;
                    if (x < 0 || x >= side) continue;
                    const S* src =
                        in + (static_cast<size_t>(y) * static_cast<size_t>(side) +
                              static_cast<size_t>(x)) *
                                 static_cast<size_t>(ic);
                    std::copy(src, src + ic, row + (ky * 3 + kx) * ic);
                }
            }
        }
}

// out[row][oc] = b[oc] + sum_k col[row][k] * wt[k][oc]; accumulators are
// independent per output channel, so the inner loop vectorizes without
// floating-point reassociation.
template <typename S>
void patch_matmul(const std::vector<S>& col, const std::vector<S>& wt, const S* bias,
                  int rows, int K, int oc, std::vector<S>& out) {
    out.resize(static_cast<size_t>(rows) * static_cast<size_t>(oc));
    for (int r = 0; r < rows; ++r) {
        const S* crow = col.data() + static_cast<size_t>(r) * static_cast<size_t>(K);
        S* orow = out.data() + static_cast<size_t>(r) * static_cast<size_t>(oc);
        std::copy(bias, bias + oc, orow);
        for (int k = 0; k < K; ++k) {
            const S c = crow[k];
            const S* wrow = wt.data() + static_cast<size_t>(k) * static_cast<size_t>(oc);
            for (int o = 0; o < oc; ++o) orow[o] += c * wrow[o];
        }
    }
}

template <typename S>
inline S sigmoid(S v) {
    return S(1) / (S(1) + std::exp(-v));
}

// y[i] = b[i] + sum_j w[i*n + j] * x[j]
template <typename S>
void affine(const S* w, const S* b, const S* x, int m, int n, S* y) {
    for (int i = 0; i < m; ++i) {
        S acc = b ? b[i] : S(0);
        const S* row = w + static_cast<size_t>(i) * static_cast<size_t>(n);
        for (int j = 0; j < n; ++j) acc += row[j] * x[j];
        y[i] = acc;
    }
}

template <typename S>
void gru_cell(const FwdWeights<S>& fw, GruStep<S>& st) {
    constexpr int H = kHidden;
    std::array<S, 3 * H> gi, gh;
    affine(fw.gru_w_ih, fw.gru_b_ih, st.x.data(), 3 * H, kGruIn, gi.data());
    affine(fw.gru_w_hh, fw.gru_b_hh, st.h_prev.data(), 3 * H, H, gh.data());
    for (int i = 0; i < H; ++i) {
        st.r[i] = sigmoid(gi[i] + gh[i]);
        st.z[i] = sigmoid(gi[H + i] + gh[H + i]);
        st.hn_lin[i] = gh[2 * H + i];
        st.n[i] = std::tanh(gi[2 * H + i] + st.r[i] * st.hn_lin[i]);
        st.h[i] = (S(1) - st.z[i]) * st.n[i] + st.z[i] * st.h_prev[i];
    }
}

// Normalized grid + goal -> full forward pass with caches kept for backward.
template <typename S>
void forward_full(const FwdWeights<S>& fw, const std::vector<S>& input, Vec2 goal, int T,
                  Activations<S>& a) {
    if (static_cast<int>(input.size()) != kGrid * kGrid * kChannels[0])
        throw ShapeMismatch("grid input has wrong cell count");
    if (T < 1) throw ShapeMismatch("series length must be >= 1");
    const S* stage_in = input.data();
    for (int s = 0; s < kStages; ++s) {
        const int side = stage_side(s);
        const int ic = kChannels[s], oc = kChannels[s + 1];
        const int rows = (side / 2) * (side / 2);
        const int K = ic * 9;
        im2col(stage_in, side, ic, a.col[s]);
        patch_matmul(a.col[s], fw.conv_wt[s], fw.conv_b[s], rows, K, oc, a.pre[s]);
        a.act[s].resize(a.pre[s].size());
        for (size_t i = 0; i < a.pre[s].size(); ++i)
            a.act[s][i] = a.pre[s][i] > S(0) ? a.pre[s][i] : S(0);
        stage_in = a.act[s].data();
    }
    const int cells = stage_side(kStages) * stage_side(kStages);
    const auto& last = a.act[kStages - 1];
    for (int c = 0; c < kHidden; ++c) {
        S acc = S(0);
        for (int i = 0; i < cells; ++i)
            acc += last[static_cast<size_t>(i) * kHidden + static_cast<size_t>(c)];
        a.feat[c] = acc / S(cells);
    }

    a.steps.assign(static_cast<size_t>(T), GruStep<S>{});
    a.waypoints.assign(static_cast<size_t>(T), {S(0), S(0)});
    std::array<S, 2> w{S(0), S(0)};
    std::array<S, kHidden> h = a.feat;
    for (int t = 0; t < T; ++t) {
        GruStep<S>& st = a.steps[static_cast<size_t>(t)];
        st.x = {w[0], w[1], S(goal.x), S(goal.y)};
        st.h_prev = h;
        gru_cell(fw, st);
        h = st.h;
        std::array<S, 2> dw;
        affine(fw.head_w, fw.head_b, h.data(), kHeadOut, kHidden, dw.data());
        w = {w[0] + dw[0], w[1] + dw[1]};
        a.waypoints[static_cast<size_t>(t)] = w;
    }
}

// Backward through the whole stack; fills `grad` (same layout as params) and
// optionally the gradient w.r.t. the input grid.
template <typename S>
void backward_full(const std::vector<S>& params, const Activations<S>& a,
                   const std::vector<std::array<S, 2>>& dwp, std::vector<S>& grad,
                   std::vector<S>* dinput = nullptr) {
    constexpr int H = kHidden;
    const ParamLayout& L = param_layout();
    grad.assign(L.total, S(0));
    const S* head_w = params.data() + L.find("head.w").offset;
    const S* gru_w_ih = params.data() + L.find("gru.w_ih").offset;
    const S* gru_w_hh = params.data() + L.find("gru.w_hh").offset;
    S* g_head_w = grad.data() + L.find("head.w").offset;
    S* g_head_b = grad.data() + L.find("head.b").offset;
    S* g_w_ih = grad.data() + L.find("gru.w_ih").offset;
    S* g_w_hh = grad.data() + L.find("gru.w_hh").offset;
    S* g_b_ih = grad.data() + L.find("gru.b_ih").offset;
    S* g_b_hh = grad.data() + L.find("gru.b_hh").offset;

    const int T = static_cast<int>(a.steps.size());
    std::array<S, 2> carry_dw{S(0), S(0)};
    std::array<S, H> carry_dh{};
    for (int t = T - 1; t >= 0; --t) {
        const GruStep<S>& st = a.steps[static_cast<size_t>(t)];
        // gradient flowing into waypoint w_t: its own loss term plus all paths
        // through later steps (additive chain and recurrent input)
        std::array<S, 2> dw{dwp[static_cast<size_t>(t)][0] + carry_dw[0],
                            dwp[static_cast<size_t>(t)][1] + carry_dw[1]};
        // head: dw = W h + b
        std::array<S, H> dh = carry_dh;
        for (int o = 0; o < kHeadOut; ++o) {
            g_head_b[o] += dw[static_cast<size_t>(o)];
            const S* row = head_w + static_cast<size_t>(o) * H;
            S* grow = g_head_w + static_cast<size_t>(o) * H;
            for (int i = 0; i < H; ++i) {
                grow[i] += dw[static_cast<size_t>(o)] * st.h[i];
                dh[i] += row[i] * dw[static_cast<size_t>(o)];
            }
        }
        // GRU cell backward
        std::array<S, 3 * H> da{};  // gate pre-activation grads, order r|z|n
        std::array<S, H> dh_prev{};
        for (int i = 0; i < H; ++i) {
            const S dz = dh[i] * (st.h_prev[i] - st.n[i]);
            const S dn = dh[i] * (S(1) - st.z[i]);
            dh_prev[i] += dh[i] * st.z[i];
            const S dan = dn * (S(1) - st.n[i] * st.n[i]);
            const S dr = dan * st.hn_lin[i];
            const S dhn_lin = dan * st.r[i];
            const S dar = dr * st.r[i] * (S(1) - st.r[i]);
            const S daz = dz * st.z[i] * (S(1) - st.z[i]);
            da[static_cast<size_t>(i)] = dar;
            da[static_cast<size_t>(H + i)] = daz;
            da[static_cast<size_t>(2 * H + i)] = dan;
            g_b_hh[2 * H + i] += dhn_lin;
            const S* wrow = gru_w_hh + static_cast<size_t>(2 * H + i) * H;
            S* gwrow = g_w_hh + static_cast<size_t>(2 * H + i) * H;
            for (int j = 0; j < H; ++j) {
                gwrow[j] += dhn_lin * st.h_prev[j];
                dh_prev[j] += wrow[j] * dhn_lin;
            }
        }
        std::array<S, kGruIn> dx{};
        for (int g = 0; g < 2 * H; ++g) {  // r and z rows of the hidden matmul
            const S v = da[static_cast<size_t>(g)];
            g_b_hh[g] += v;
            const S* wrow = gru_w_hh + static_cast<size_t>(g) * H;
            S* gwrow = g_w_hh + static_cast<size_t>(g) * H;
            for (int j = 0; j < H; ++j) {
                gwrow[j] += v * st.h_prev[j];
                dh_prev[j] += wrow[j] * v;
            }
        }
        for (int g = 0; g < 3 * H; ++g) {  // input matmul for all three gates
            const S v = da[static_cast<size_t>(g)];
            g_b_ih[g] += v;
            const S* wrow = gru_w_ih + static_cast<size_t>(g) * kGruIn;
            S* gwrow = g_w_ih + static_cast<size_t>(g) * kGruIn;
            for (int j = 0; j < kGruIn; ++j) {
                gwrow[j] += v * st.x[static_cast<size_t>(j)];
                dx[static_cast<size_t>(j)] += wrow[j] * v;
            }
        }
        // w_{t-1} feeds both the waypoint chain and the cell input
        carry_dw = {dw[0] + dx[0], dw[1] + dx[1]};
        carry_dh = dh_prev;
    }

    // pooled feature was h_0
    const int cells = stage_side(kStages) * stage_side(kStages);
    std::vector<S> dact(static_cast<size_t>(cells) * H);
    for (int i = 0; i < cells; ++i)
        for (int c = 0; c < H; ++c)
            dact[static_cast<size_t>(i) * H + static_cast<size_t>(c)] =
                carry_dh[static_cast<size_t>(c)] / S(cells);

    // convolution stages, deepest first
    std::vector<S> dcol, din;
    for (int s = kStages - 1; s >= 0; --s) {
        const int side = stage_side(s);
        const int out = side / 2;
        const int rows = out * out;
        const int ic = kChannels[s], oc = kChannels[s + 1];
        const int K = ic * 9;
        const S* w = params.data() + L[static_cast<size_t>(2 * s)].offset;
        S* gw = grad.data() + L[static_cast<size_t>(2 * s)].offset;
        S* gb = grad.data() + L[static_cast<size_t>(2 * s) + 1].offset;

        // ReLU mask
        std::vector<S>& dpre = dact;
        for (int i = 0; i < rows * oc; ++i)
            if (a.pre[s][static_cast<size_t>(i)] <= S(0)) dpre[static_cast<size_t>(i)] = S(0);

        dcol.assign(static_cast<size_t>(rows) * static_cast<size_t>(K), S(0));
        for (int r = 0; r < rows; ++r) {
            const S* crow = a.col[s].data() + static_cast<size_t>(r) * static_cast<size_t>(K);
            const S* drow = dpre.data() + static_cast<size_t>(r) * static_cast<size_t>(oc);
            S* dcrow = dcol.data() + static_cast<size_t>(r) * static_cast<size_t>(K);
            for (int o = 0; o < oc; ++o) {
                const S g = drow[o];
                gb[o] += g;
                const S* wrow = w + static_cast<size_t>(o) * static_cast<size_t>(K);
                S* gwrow = gw + static_cast<size_t>(o) * static_cast<size_t>(K);
                for (int k = 0; k < K; ++k) {
                    gwrow[k] += g * crow[k];
                    dcrow[k] += g * wrow[k];
                }
            }
        }

        const bool need_din = s > 0 || dinput != nullptr;
        if (!need_din) break;
        din.assign(static_cast<size_t>(side) * static_cast<size_t>(side) *
                       static_cast<size_t>(ic),
                   S(0));
        for (int oy = 0; oy < out; ++oy)
            for (int ox = 0; ox < out; ++ox) {
                const S* dcrow =
                    dcol.data() +
                    (static_cast<size_t>(oy) * static_cast<size_t>(out) +
                     static_cast<size_t>(ox)) *
                        static_cast<size_t>(K);
                for (int ky = 0; ky < 3; ++ky) {
                    const int y = 2 * oy + ky - 1;
                    if (y < 0 || y >= side) continue;
                    for (int kx = 0; kx < 3; ++kx) {
                        const int x = 2 * ox + kx - 1;
                        if (x < 0 || x >= side) continue;
                        S* dst = din.data() +
                                 (static_cast<size_t>(y) * static_cast<size_t>(side) +
                                  static_cast<size_t>(x)) *
                                     static_cast<size_t>(ic);
                        const S* src = dcrow + (ky * 3 + kx) * ic;
                        for (int c = 0; c < ic; ++c) dst[c] += src[c];
                    }
                }
            }
        if (s == 0 && dinput) *dinput = din;
        dact = din;
    }
}

template <typename S>
std::vector<S> normalize_grid(const BevImage& bev) {
    std::vector<S> out(bev.counts.size());
    for (size_t i = 0; i < bev.counts.size(); ++i) {
        const double c = std::min<double>(bev.counts[i], kCountNorm);
        out[i] = static_cast<S>(c / kCountNorm);
    }
    return out;
}

}  // namespace net

// ---------------------------------------------------------------------------
// Loss
// ---------------------------------------------------------------------------

enum class LossReduction { Sum, Mean };

// L1 imitation objective: sum over the series of per-waypoint absolute errors.
inline double policy_loss(const WaypointSeries& w, const WaypointSeries& target,
                          LossReduction reduction = LossReduction::Sum) {
    if (w.size() != target.size())
        throw LengthMismatch("series lengths differ: " + std::to_string(w.size()) + " vs " +
                             std::to_string(target.size()));
    double j = 0.0;
    for (size_t i = 0; i < w.size(); ++i)
        j += std::abs(w[i].x - target[i].x) + std::abs(w[i].y - target[i].y);
    if (reduction == LossReduction::Mean && !w.empty()) j /= static_cast<double>(w.size());
    return j;
}

// ---------------------------------------------------------------------------
// Inference
// ---------------------------------------------------------------------------

inline WaypointSeries policy_forward(const std::vector<float>& params, const Observation& obs,
                                     int T = 4) {
    net::FwdWeights<float> fw;
    net::prepare_weights(params, fw);
    net::Activations<float> a;
    net::forward_full(fw, net::normalize_grid<float>(obs.bev), obs.goal, T, a);
    WaypointSeries out;
    for (const auto& w : a.waypoints) out.push_back({w[0], w[1]});
    return out;
}

// ---------------------------------------------------------------------------
// Optimizer state, checkpoints, training
// ---------------------------------------------------------------------------

struct TrainConfig {
    int epochs = 50;
    double learning_rate = 1e-4;
    double weight_decay = 0.01;
    int batch_size = 64;
    int T = 4;
    uint64_t seed = 0;
    LossReduction reduction = LossReduction::Sum;

    uint64_t hash() const {
        uint64_t h = kFnvOffset;
        h = fnv1a_value(epochs, h);
        h = fnv1a_value(learning_rate, h);
        h = fnv1a_value(weight_decay, h);
        h = fnv1a_value(batch_size, h);
        h = fnv1a_value(T, h);
        h = fnv1a_value(seed, h);
        h = fnv1a_value(static_cast<int>(reduction), h);
        h = fnv1a_value(net::param_count(), h);
        return h;
    }
};

struct AdamState {
    std::vector<float> m, v;
    uint64_t step = 0;
};

struct Checkpoint {
    int epoch = 0;              // >= 1 once trained
    std::vector<float> params;
    double train_loss = 0.0;    // mean per-frame loss over the epoch
    AdamState opt;
    std::string rng_state;      // shuffle stream snapshot at epoch end
    uint64_t config_hash = 0;
    uint64_t seed = 0;
};

namespace detail {

constexpr double kAdamBeta1 = 0.9;
constexpr double kAdamBeta2 = 0.999;
constexpr double kAdamEps = 1e-8;

inline void adamw_step(std::vector<float>& p, const std::vector<float>& g, AdamState& st,
                       double lr, double wd) {
    ++st.step;
    const double c1 = 1.0 - std::pow(kAdamBeta1, static_cast<double>(st.step));
    const double c2 = 1.0 - std::pow(kAdamBeta2, static_cast<double>(st.step));
    for (size_t i = 0; i < p.size(); ++i) {
        const double gi = g[i];
        const double m = kAdamBeta1 * st.m[i] + (1.0 - kAdamBeta1) * gi;
        const double v = kAdamBeta2 * st.v[i] + (1.0 - kAdamBeta2) * gi * gi;
        st.m[i] = static_cast<float>(m);
        st.v[i] = static_cast<float>(v);
        const double update = (m / c1) / (std::sqrt(v / c2) + kAdamEps);
        p[i] = static_cast<float>(p[i] - lr * update - lr * wd * p[i]);
    }
}

// d(loss)/d(waypoint) for the L1 objective; the subgradient at an exact hit
// is taken as zero.
inline void loss_grad(const std::vector<std::array<float, 2>>& w, const WaypointSeries& target,
                      LossReduction reduction, std::vector<std::array<float, 2>>& dw) {
    const float scale = reduction == LossReduction::Mean && !w.empty()
                            ? 1.0f / static_cast<float>(w.size())
                            : 1.0f;
    dw.assign(w.size(), {0.0f, 0.0f});
    for (size_t i = 0; i < w.size(); ++i) {
        const float ex = w[i][0] - static_cast<float>(target[i].x);
        const float ey = w[i][1] - static_cast<float>(target[i].y);
        dw[i][0] = ex > 0 ? scale : (ex < 0 ? -scale : 0.0f);
        dw[i][1] = ey > 0 ? scale : (ey < 0 ? -scale : 0.0f);
    }
}

}  // namespace detail

// Trains from scratch (or resumes from `resume`) and returns one checkpoint
// per completed epoch. Identical (dataset, config) pairs produce bit-identical
// checkpoints; resuming from epoch k reproduces the uninterrupted run.
inline std::vector<Checkpoint> train(const Dataset& data, const TrainConfig& cfg,
                                     const Checkpoint* resume = nullptr) {
    if (data.frames.empty()) throw EmptyDataset("cannot train on an empty dataset");
    const size_t n_params = net::param_count();

    std::vector<float> params;
    AdamState opt;
    Rng shuffle_rng = Rng::derive(cfg.seed, 2);
    int start_epoch = 0;
    if (resume) {
        if (resume->params.size() != n_params)
            throw ShapeMismatch("resume checkpoint has wrong parameter count");
        params = resume->params;
        opt = resume->opt;
        shuffle_rng.load_state(resume->rng_state);
        start_epoch = resume->epoch;
    } else {
        params = init_params(cfg.seed);
        opt.m.assign(n_params, 0.0f);
        opt.v.assign(n_params, 0.0f);
    }

    // target series in the frame order of the dataset
    std::vector<WaypointSeries> targets(data.frames.size());
    for (size_t i = 0; i < data.frames.size(); ++i) {
        targets[i] = data.frames[i].expert_waypoints;
        if (static_cast<int>(targets[i].size()) != cfg.T)
            throw LengthMismatch("frame " + std::to_string(i) + " has " +
                                 std::to_string(targets[i].size()) + " waypoints, config wants " +
                                 std::to_string(cfg.T));
    }

    std::vector<Checkpoint> out;
    net::FwdWeights<float> fw;
    net::Activations<float> acts;
    std::vector<float> grad, grad_acc;
    std::vector<std::array<float, 2>> dwp;
    std::vector<size_t> order(data.frames.size());

    for (int epoch = start_epoch + 1; epoch <= cfg.epochs; ++epoch) {
        for (size_t i = 0; i < order.size(); ++i) order[i] = i;
        shuffle_rng.shuffle(order);

        double epoch_loss = 0.0;
        for (size_t base = 0; base < order.size(); base += static_cast<size_t>(cfg.batch_size)) {
            const size_t bend = std::min(order.size(), base + static_cast<size_t>(cfg.batch_size));
            const size_t bsize = bend - base;
            grad_acc.assign(n_params, 0.0f);
            net::prepare_weights(params, fw);
            double batch_loss = 0.0;
            for (size_t bi = base; bi < bend; ++bi) {
                const DatasetFrame& f = data.frames[order[bi]];
                net::forward_full(fw, net::normalize_grid<float>(f.bev), f.goal, cfg.T, acts);
                WaypointSeries pred;
                for (const auto& w : acts.waypoints) pred.push_back({w[0], w[1]});
                batch_loss += policy_loss(pred, targets[order[bi]], cfg.reduction);
                detail::loss_grad(acts.waypoints, targets[order[bi]], cfg.reduction, dwp);
                net::backward_full(params, acts, dwp, grad);
                for (size_t i = 0; i < n_params; ++i) grad_acc[i] += grad[i];
            }
            if (!std::isfinite(batch_loss))
                throw NonFiniteLoss("non-finite loss at epoch " + std::to_string(epoch) +
                                    ", batch starting " + std::to_string(base));
            const float inv = 1.0f / static_cast<float>(bsize);
            for (size_t i = 0; i < n_params; ++i) grad_acc[i] *= inv;
            detail::adamw_step(params, grad_acc, opt, cfg.learning_rate, cfg.weight_decay);
            epoch_loss += batch_loss;
        }

        Checkpoint ck;
        ck.epoch = epoch;
        ck.params = params;
        ck.train_loss = epoch_loss / static_cast<double>(data.frames.size());
        ck.opt = opt;
        ck.rng_state = shuffle_rng.save_state();
        ck.config_hash = cfg.hash();
        ck.seed = cfg.seed;
        out.push_back(std::move(ck));
    }
    return out;
}

// Mean per-frame imitation loss with no parameter updates.
inline double offline_val_loss(const std::vector<float>& params, const Dataset& data,
                               int T = 4, LossReduction reduction = LossReduction::Sum) {
    if (data.frames.empty()) throw EmptyDataset("validation dataset is empty");
    net::FwdWeights<float> fw;
    net::prepare_weights(params, fw);
    net::Activations<float> acts;
    double total = 0.0;
    for (const DatasetFrame& f : data.frames) {
        net::forward_full(fw, net::normalize_grid<float>(f.bev), f.goal, T, acts);
        WaypointSeries pred;
        for (const auto& w : acts.waypoints) pred.push_back({w[0], w[1]});
        total += policy_loss(pred, f.expert_waypoints, reduction);
    }
    return total / static_cast<double>(data.frames.size());
}

// ---------------------------------------------------------------------------
// Checkpoint serialization: versioned little-endian binary
// ---------------------------------------------------------------------------

namespace detail {

inline void put_u32(std::vector<unsigned char>& b, uint32_t v) {
    for (int i = 0; i < 4; ++i) b.push_back(static_cast<unsigned char>(v >> (8 * i)));
}
inline void put_u64(std::vector<unsigned char>& b, uint64_t v) {
    for (int i = 0; i < 8; ++i) b.push_back(static_cast<unsigned char>(v >> (8 * i)));
}
inline void put_f64(std::vector<unsigned char>& b, double v) {
    uint64_t u;
    std::memcpy(&u, &v, 8);
    put_u64(b, u);
}
inline void put_f32_vec(std::vector<unsigned char>& b, const std::vector<float>& v) {
    for (float f : v) {
        uint32_t u;
        std::memcpy(&u, &f, 4);
        put_u32(b, u);
    }
}

struct ByteReader {
    const unsigned char* p;
    const unsigned char* end;
    void need(size_t n) const {
        if (static_cast<size_t>(end - p) < n) throw std::runtime_error("truncated checkpoint");
    }
    uint32_t u32() {
        need(4);
        uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(*p++) << (8 * i);
        return v;
    }
    uint64_t u64() {
        need(8);
        uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(*p++) << (8 * i);
        return v;
    }
    double f64() {
        const uint64_t u = u64();
        double v;
        std::memcpy(&v, &u, 8);
        return v;
    }
    void f32_vec(std::vector<float>& v, size_t n) {
        v.resize(n);
        for (size_t i = 0; i < n; ++i) {
            const uint32_t u = u32();
            std::memcpy(&v[i], &u, 4);
        }
    }
};

constexpr uint32_t kCheckpointMagic = 0x4b434244;  // "DBCK" little-endian
constexpr uint32_t kCheckpointVersion = 1;

}  // namespace detail

inline void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path) {
    std::vector<unsigned char> b;
    detail::put_u32(b, detail::kCheckpointMagic);
    detail::put_u32(b, detail::kCheckpointVersion);
    detail::put_u32(b, static_cast<uint32_t>(ck.epoch));
    detail::put_u64(b, ck.config_hash);
    detail::put_u64(b, ck.seed);
    detail::put_f64(b, ck.train_loss);
    detail::put_u64(b, ck.params.size());
    detail::put_f32_vec(b, ck.params);
    detail::put_u64(b, ck.opt.step);
    detail::put_f32_vec(b, ck.opt.m);
    detail::put_f32_vec(b, ck.opt.v);
    detail::put_u64(b, ck.rng_state.size());
    b.insert(b.end(), ck.rng_state.begin(), ck.rng_state.end());
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot write checkpoint " + path.string());
    os.write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot read checkpoint " + path.string());
    const std::vector<unsigned char> buf((std::istreambuf_iterator<char>(is)),
                                         std::istreambuf_iterator<char>());
    detail::ByteReader r{buf.data(), buf.data() + buf.size()};
    if (r.u32() != detail::kCheckpointMagic) throw std::runtime_error("not a checkpoint file");
    if (r.u32() != detail::kCheckpointVersion)
        throw std::runtime_error("unsupported checkpoint version");
    Checkpoint ck;
    ck.epoch = static_cast<int>(r.u32());
    ck.config_hash = r.u64();
    ck.seed = r.u64();
    ck.train_loss = r.f64();
    const size_t n = r.u64();
    if (n != net::param_count()) throw ShapeMismatch("checkpoint parameter count mismatch");
    r.f32_vec(ck.params, n);
    ck.opt.step = r.u64();
    r.f32_vec(ck.opt.m, n);
    r.f32_vec(ck.opt.v, n);
    const size_t rn = r.u64();
    r.need(rn);
    ck.rng_state.assign(reinterpret_cast<const char*>(r.p), rn);
    return ck;
}

// ---------------------------------------------------------------------------
// Gradient check: analytic backward vs central finite differences, run in
// double so the comparison is limited by the method, not the arithmetic.
// ---------------------------------------------------------------------------

struct GradCheckReport {
    struct Layer {
        std::string name;
        double max_rel_error = 0.0;
        int probes = 0;
    };
    std::vector<Layer> layers;
    double max_rel_error = 0.0;
};

namespace detail {

struct GradSample {
    std::vector<double> input;
    Vec2 goal;
    WaypointSeries target;
};

inline GradSample random_grad_sample(Rng& rng, int T) {
    GradSample s;
    s.input.resize(static_cast<size_t>(net::kGrid * net::kGrid * net::kChannels[0]), 0.0);
    const int n_occupied = 200;
    for (int i = 0; i < n_occupied; ++i) {
        const auto cell = static_cast<size_t>(
            rng.uniform_int(0, static_cast<int64_t>(s.input.size()) - 1));
        s.input[cell] = rng.uniform(0.1, 1.0);
    }
    s.goal = {rng.uniform(-20.0, 20.0), rng.uniform(-20.0, 20.0)};
    for (int t = 0; t < T; ++t) s.target.push_back({rng.uniform(-3.0, 3.0), rng.uniform(-3.0, 3.0)});
    return s;
}

inline std::vector<double> random_params_double(Rng& rng) {
    const net::ParamLayout& L = net::param_layout();
    std::vector<double> p(L.total);
    for (const net::TensorSpec& t : L.tensors) {
        const double bound = std::sqrt(1.0 / static_cast<double>(t.fan_in));
        for (size_t i = 0; i < t.count; ++i) p[t.offset + i] = rng.uniform(-bound, bound);
    }
    return p;
}

inline double eval_loss_double(const std::vector<double>& params, const GradSample& s, int T) {
    net::FwdWeights<double> fw;
    net::prepare_weights(params, fw);
    net::Activations<double> a;
    net::forward_full(fw, s.input, s.goal, T, a);
    double j = 0.0;
    for (size_t i = 0; i < a.waypoints.size(); ++i)
        j += std::abs(a.waypoints[i][0] - s.target[i].x) +
             std::abs(a.waypoints[i][1] - s.target[i].y);
    return j;
}

inline void analytic_grad_double(const std::vector<double>& params, const GradSample& s, int T,
                                 std::vector<double>& grad) {
    net::FwdWeights<double> fw;
    net::prepare_weights(params, fw);
    net::Activations<double> a;
    net::forward_full(fw, s.input, s.goal, T, a);
    std::vector<std::array<double, 2>> dwp(a.waypoints.size(), {0.0, 0.0});
    for (size_t i = 0; i < a.waypoints.size(); ++i) {
        const double ex = a.waypoints[i][0] - s.target[i].x;
        const double ey = a.waypoints[i][1] - s.target[i].y;
        dwp[i][0] = ex > 0 ? 1.0 : (ex < 0 ? -1.0 : 0.0);
        dwp[i][1] = ey > 0 ? 1.0 : (ey < 0 ? -1.0 : 0.0);
    }
    net::backward_full(params, a, dwp, grad);
}

}  // namespace detail

// Probes `probes_per_layer` random parameters in every layer group (all of
// them for the small head). A probe that lands near a ReLU or L1 kink sees a
// genuinely discontinuous derivative, so disagreeing probes are retried on
// fresh random samples before being counted.
inline GradCheckReport grad_check(uint64_t seed, int probes_per_layer = 200, double h = 1e-4,
                                  int T = 4) {
    Rng rng = Rng::derive(seed, 3);
    std::vector<double> params = detail::random_params_double(rng);
    detail::GradSample sample = detail::random_grad_sample(rng, T);

    const net::ParamLayout& L = net::param_layout();
    const std::vector<std::pair<std::string, std::vector<std::string>>> groups{
        {"conv1", {"conv1.w", "conv1.b"}}, {"conv2", {"conv2.w", "conv2.b"}},
        {"conv3", {"conv3.w", "conv3.b"}}, {"conv4", {"conv4.w", "conv4.b"}},
        {"gru", {"gru.w_ih", "gru.w_hh", "gru.b_ih", "gru.b_hh"}},
        {"head", {"head.w", "head.b"}},
    };

    std::vector<double> grad;
    detail::analytic_grad_double(params, sample, T, grad);

    GradCheckReport report;
    for (const auto& [gname, tensors] : groups) {
        size_t gbase = L.find(tensors.front()).offset;
        size_t gcount = 0;
        for (const auto& tn : tensors) gcount += L.find(tn).count;

        GradCheckReport::Layer layer;
        layer.name = gname;
        // small layers are probed exhaustively, large ones sampled
        const bool exhaustive = gcount <= static_cast<size_t>(probes_per_layer);
        const int probes = exhaustive ? static_cast<int>(gcount) : probes_per_layer;
        for (int pi = 0; pi < probes; ++pi) {
            const size_t idx =
                exhaustive ? gbase + static_cast<size_t>(pi)
                           : gbase + static_cast<size_t>(rng.uniform_int(
                                         0, static_cast<int64_t>(gcount) - 1));
            double best = std::numeric_limits<double>::infinity();
            std::vector<double> cur_grad = grad;
            detail::GradSample cur_sample = sample;
            for (int attempt = 0; attempt < 4; ++attempt) {
                const double saved = params[idx];
                params[idx] = saved + h;
                const double jp = detail::eval_loss_double(params, cur_sample, T);
                params[idx] = saved - h;
                const double jm = detail::eval_loss_double(params, cur_sample, T);
                params[idx] = saved;
                const double fd = (jp - jm) / (2.0 * h);
                const double an = cur_grad[idx];
                best = std::min(best,
                                std::abs(fd - an) / std::max({1.0, std::abs(fd), std::abs(an)}));
                if (best < 1e-7) break;
                // a probe that straddles a ReLU or L1 kink sees a genuine
                // derivative jump; agreement on any fresh sample clears it
                cur_sample = detail::random_grad_sample(rng, T);
                detail::analytic_grad_double(params, cur_sample, T, cur_grad);
            }
            layer.max_rel_error = std::max(layer.max_rel_error, best);
            ++layer.probes;
        }
        report.max_rel_error = std::max(report.max_rel_error, layer.max_rel_error);
        report.layers.push_back(std::move(layer));
    }
    return report;
}

// ---------------------------------------------------------------------------
// Closed-loop adapter
// ---------------------------------------------------------------------------

struct PolicyDriver : Driver {
    const BenchConfig* cfg;
    std::vector<float> params;
    int T = 4;
    const RoadNetwork* net_ptr = nullptr;
    int goal_index = 1;
    net::FwdWeights<float> fw;

    PolicyDriver(const BenchConfig& config, std::vector<float> p, int series_len = 4)
        : cfg(&config), params(std::move(p)), T(series_len) {
        net::prepare_weights(params, fw);
    }

    void begin(const RoadNetwork& network, const RoutePlan&, uint64_t) override {
        net_ptr = &network;
        goal_index = 1;
    }

    WaypointSeries waypoints(const WorldState& world, const RoutePlan& route) override {
        const Observation obs = build_observation(world, *net_ptr, route, goal_index);
        goal_index = obs.goal_index;
        net::Activations<float> a;
        net::forward_full(fw, net::normalize_grid<float>(obs.bev), obs.goal, T, a);
        WaypointSeries out;
        for (const auto& w : a.waypoints) out.push_back({w[0], w[1]});
        return out;
    }
};

}  // namespace drivebench
