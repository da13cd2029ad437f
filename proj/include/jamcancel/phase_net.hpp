#pragma once

// Phase-shift / signal-detection CNN.
//
//   input  2 antennas x (2 I/Q rows x M samples)
//   conv 3x3 (pad 1) -> BN -> ReLU        x3, N filters each, keeps 2 x M
//   conv 2x1 (no pad) -> BN -> ReLU        collapses the I/Q axis to 1 x M
//   flatten (N x M) -> fully connected -> 4
//   heads: P_S1, P_S2 linear; I_S1, I_S2 sigmoid
//
// Activations are stored [row][channel][batch][m] so every convolution is a single GEMM over
// a patch matrix. The scalar type is a template parameter: float for
// training and inference, double for gradient verification.

#include <Eigen/Core>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "jamcancel/binio.hpp"
#include "jamcancel/dataset.hpp"
#include "jamcancel/iq_core.hpp"

namespace jamcancel {

struct NetOutput {
    double p_s1 = 0.0, p_s2 = 0.0;  // phase-shift estimates, radians
    double i_s1 = 0.5, i_s2 = 0.5;  // signal-presence confidences in (0, 1)
};

struct PhaseLabel {
    double phi_1 = 0.0, phi_2 = 0.0;
    int ind_1 = 0, ind_2 = 0;

    static PhaseLabel of(const LabeledExample& e) { return {e.phi_1, e.phi_2, e.ind_1, e.ind_2}; }
};

inline constexpr double kProbClamp = 1e-7;

/// Indicator-masked squared phase error.
inline double loss_phase(const NetOutput& out, const PhaseLabel& y) {
    const double d1 = y.phi_1 - out.p_s1;
    const double d2 = y.phi_2 - out.p_s2;
    return (y.ind_1 ? d1 * d1 : 0.0) + (y.ind_2 ? d2 * d2 : 0.0);
}

/// Binary cross-entropy summed over both indicator heads. Probabilities are clamped away from 0 and 1.
inline double loss_signal(const NetOutput& out, const PhaseLabel& y) {
    auto bce = [](int target, double p) {
        p = std::clamp(p, kProbClamp, 1.0 - kProbClamp);
        return target ? -std::log(p) : -std::log(1.0 - p);
    };
    return bce(y.ind_1, out.i_s1) + bce(y.ind_2, out.i_s2);
}

inline double loss_total(const NetOutput& out, const PhaseLabel& y) { return loss_phase(out, y) + loss_signal(out, y); }

struct NetShape {
    std::size_t m = kDefaultBlockLen;
    std::size_t filters = 64;
    bool operator==(const NetShape&) const = default;
};

enum class Mode { Train, Infer };

template <typename T>
struct Param {
    std::string name;
    std::vector<std::size_t> shape;
    std::vector<T> value;
    std::vector<T> grad;
    bool trainable = true;

    std::size_t size() const { return value.size(); }
};

namespace net_detail {

template <typename T>
using MatR = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapR = Eigen::Map<MatR<T>>;
template <typename T>
using CMapR = Eigen::Map<const MatR<T>>;

// Activations are laid out [row][channel][batch][m] with row the two-high I/Q axis. With zero
// padding along that axis, each output row of a 3x3 conv reads both source rows through two of
// the three kernel rows, so one patch matrix [(row, c, kx)][B*M] serves both output rows and a
// single GEMM against stacked weights [(out_row, f)][(row, c, kx)] computes the whole layer.

/// act [2][C][B*M] -> patches [(row, c, kx)][B*M]; kx shifts along m with zeros past each block edge.
template <typename T>
void patches3(const T* in, std::size_t C, std::size_t B, std::size_t M, T* col) {
    const std::size_t L = B * M;
    for (std::size_t rc = 0; rc < 2 * C; ++rc) {
        const T* src = in + rc * L;
        T* d0 = col + (rc * 3 + 0) * L;
        T* d1 = col + (rc * 3 + 1) * L;
        T* d2 = col + (rc * 3 + 2) * L;
        std::copy(src, src + L, d1);
        for (std::size_t b = 0; b < B; ++b) {
            const T* s = src + b * M;
            T* a = d0 + b * M;
            T* c = d2 + b * M;
            a[0] = T(0);
            std::copy(s, s + M - 1, a + 1);  // a[w] = s[w-1]
            std::copy(s + 1, s + M, c);      // c[w] = s[w+1]
            c[M - 1] = T(0);
        }
    }
}

/// Adjoint of patches3 (overwrites `out`).
template <typename T>
void patches3_adjoint(const T* col, std::size_t C, std::size_t B, std::size_t M, T* out) {
    const std::size_t L = B * M;
    for (std::size_t rc = 0; rc < 2 * C; ++rc) {
        const T* d0 = col + (rc * 3 + 0) * L;
        const T* d1 = col + (rc * 3 + 1) * L;
        const T* d2 = col + (rc * 3 + 2) * L;
        T* o = out + rc * L;
        std::copy(d1, d1 + L, o);
        for (std::size_t b = 0; b < B; ++b) {
            T* ob = o + b * M;
            const T* a = d0 + b * M;
            const T* c = d2 + b * M;
            for (std::size_t w = 0; w + 1 < M; ++w) ob[w] += a[w + 1];
            for (std::size_t w = 1; w < M; ++w) ob[w] += c[w - 1];
        }
    }
}

// Kernel row feeding output row h from source row r (both in {0, 1}).
inline std::size_t kernel_row(std::size_t h, std::size_t r) { return r + 1 - h; }

/// conv weight [F][C][3][3] -> stacked [(h, f)][(r, c, kx)].
template <typename T>
void stack3(const T* w, std::size_t F, std::size_t C, T* ws) {
    const std::size_t K = 6 * C;
    for (std::size_t h = 0; h < 2; ++h)
        for (std::size_t f = 0; f < F; ++f)
            for (std::size_t r = 0; r < 2; ++r)
                for (std::size_t c = 0; c < C; ++c)
                    for (std::size_t kx = 0; kx < 3; ++kx)
                        ws[(h * F + f) * K + (r * C + c) * 3 + kx] = w[((f * C + c) * 3 + kernel_row(h, r)) * 3 + kx];
}

/// Adds a stacked gradient back onto the [F][C][3][3] gradient.
template <typename T>
void unstack3_add(const T* gs, std::size_t F, std::size_t C, T* g) {
    const std::size_t K = 6 * C;
    for (std::size_t h = 0; h < 2; ++h)
        for (std::size_t f = 0; f < F; ++f)
            for (std::size_t r = 0; r < 2; ++r)
                for (std::size_t c = 0; c < C; ++c)
                    for (std::size_t kx = 0; kx < 3; ++kx)
                        g[((f * C + c) * 3 + kernel_row(h, r)) * 3 + kx] += gs[(h * F + f) * K + (r * C + c) * 3 + kx];
}

/// 2x1 weight [F][C][2][1] -> [f][(r, c)], which multiplies the [2][C][B*M] activation directly.
template <typename T>
void stack2x1(const T* w, std::size_t F, std::size_t C, T* ws) {
    for (std::size_t f = 0; f < F; ++f)
        for (std::size_t r = 0; r < 2; ++r)
            for (std::size_t c = 0; c < C; ++c) ws[f * 2 * C + r * C + c] = w[(f * C + c) * 2 + r];
}

template <typename T>
void unstack2x1_add(const T* gs, std::size_t F, std::size_t C, T* g) {
    for (std::size_t f = 0; f < F; ++f)
        for (std::size_t r = 0; r < 2; ++r)
            for (std::size_t c = 0; c < C; ++c) g[(f * C + c) * 2 + r] += gs[f * 2 * C + r * C + c];
}

// Reductions over a fixed number of independent lanes: vectorizable, and the summation order
// does not depend on pointer alignment, so results are reproducible across allocations.
inline constexpr std::size_t kLanes = 16;

template <typename Acc, typename F>
Acc lane_reduce(std::size_t n, F term) {
    std::array<Acc, kLanes> acc{};
    std::size_t i = 0;
    for (; i + kLanes <= n; i += kLanes)
        for (std::size_t k = 0; k < kLanes; ++k) acc[k] += term(i + k);
    for (std::size_t k = 0; i < n; ++i, ++k) acc[k] += term(i);
    for (std::size_t w = kLanes / 2; w > 0; w /= 2)
        for (std::size_t k = 0; k < w; ++k) acc[k] += acc[k + w];
    return acc[0];
}

template <typename T>
T dot(const T* a, const T* b, std::size_t n) {
    return lane_reduce<T>(n, [&](std::size_t i) { return a[i] * b[i]; });
}

template <typename T>
T sigmoid(T z) {
    return z >= T(0) ? T(1) / (T(1) + std::exp(-z)) : std::exp(z) / (T(1) + std::exp(z));
}

template <typename T>
T softplus(T x) {
    return std::max(x, T(0)) + std::log1p(std::exp(-std::abs(x)));
}

}  // namespace net_detail

/// Everything backward() needs from a train-mode forward pass.
template <typename T>
struct ForwardCache {
    std::size_t batch = 0;
    std::array<std::vector<T>, 5> act;       // act[0] = input, act[k] = post-ReLU output of block k
    std::array<std::vector<T>, 4> xhat;      // normalized pre-activation of block k+1
    std::array<std::vector<T>, 4> inv_std;   // per channel
    std::vector<std::array<T, 4>> logits;    // fc output per example
};

template <typename T>
class PhaseNet {
public:
    static constexpr T kBnEps = T(1e-5);
    static constexpr T kBnMomentum = T(0.1);

    explicit PhaseNet(NetShape shape = {}) : shape_(shape) {
        if (shape.m < 1 || shape.filters < 1) throw UsageError("PhaseNet: M and filter count must be positive");
        const std::size_t F = shape.filters;
        add("conv1.weight", {F, 2, 3, 3});
        add_bn("bn1");
        add("conv2.weight", {F, F, 3, 3});
        add_bn("bn2");
        add("conv3.weight", {F, F, 3, 3});
        add_bn("bn3");
        add("conv4.weight", {F, F, 2, 1});
        add_bn("bn4");
        add("fc.weight", {4, F * shape.m});
        add("fc.bias", {4});
    }

    const NetShape& shape() const { return shape_; }
    std::vector<Param<T>>& params() { return params_; }
    const std::vector<Param<T>>& params() const { return params_; }

    Param<T>& param(const std::string& name) { return params_[index_.at(name)]; }
    const Param<T>& param(const std::string& name) const { return params_[index_.at(name)]; }

    /// He-normal convolution weights, small normal FC weights, BN gamma 1 / beta 0.
    void initialize(Rng& rng) {
        for (auto& p : params_) {
            const std::string& n = p.name;
            if (n.ends_with(".weight") && n.starts_with("conv")) {
                const double fan_in = static_cast<double>(p.shape[1] * p.shape[2] * p.shape[3]);
                const double sd = std::sqrt(2.0 / fan_in);
                for (auto& v : p.value) v = static_cast<T>(sd * rng.gaussian());
            } else if (n == "fc.weight") {
                const double sd = std::sqrt(1.0 / static_cast<double>(p.shape[1]));
                for (auto& v : p.value) v = static_cast<T>(sd * rng.gaussian());
            } else if (n.ends_with(".gamma") || n.ends_with(".running_var")) {
                std::fill(p.value.begin(), p.value.end(), T(1));
            } else {
                std::fill(p.value.begin(), p.value.end(), T(0));
            }
        }
    }

    void zero_grad() {
        for (auto& p : params_) std::fill(p.grad.begin(), p.grad.end(), T(0));
    }

    /// Raw fc outputs (P_S1, P_S2, logit I_S1, logit I_S2) for a batch of flattened tensors laid
    /// out as in InputTensor (2 x M x 2 per example). Train mode fills `cache` and updates the
    /// BN running statistics unless `update_running` is false.
    std::vector<std::array<T, 4>> forward(std::span<const T> batch_values, std::size_t batch, Mode mode,
                                          ForwardCache<T>* cache = nullptr, bool update_running = true) {
        const std::size_t M = shape_.m, F = shape_.filters;
        if (batch == 0) throw UsageError("PhaseNet::forward: empty batch");
        if (batch_values.size() != batch * 4 * M)
            throw UsageError("PhaseNet::forward: input shape mismatch (expected " + std::to_string(batch) + " x 2 x " +
                             std::to_string(M) + " x 2)");
        ForwardCache<T> local;
        ForwardCache<T>& c = cache ? *cache : local;
        c.batch = batch;
        const std::size_t B = batch;

        // Input [row][m][antenna] per example -> [row][antenna][B][m].
        const std::size_t L = B * M;
        c.act[0].resize(4 * L);
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t row = 0; row < 2; ++row)
                for (std::size_t m = 0; m < M; ++m)
                    for (std::size_t a = 0; a < 2; ++a)
                        c.act[0][(row * 2 + a) * L + b * M + m] = batch_values[b * 4 * M + (row * M + m) * 2 + a];

        std::size_t channels = 2;
        for (int layer = 0; layer < 3; ++layer) {
            scratch_.resize(channels * 6 * L);
            net_detail::patches3(c.act[layer].data(), channels, B, M, scratch_.data());
            stacked_.resize(2 * F * 6 * channels);
            net_detail::stack3(conv_weight(layer), F, channels, stacked_.data());
            std::vector<T> z = std::move(c.act[layer + 1]);  // reuse the cache's buffer; gemm overwrites it
            z.resize(2 * F * L);
            gemm(stacked_.data(), 2 * F, 6 * channels, scratch_.data(), L, z.data());
            batch_norm_relu(layer, z, 2, L, mode, c, update_running);
            c.act[layer + 1] = std::move(z);
            channels = F;
        }
        {
            stacked_.resize(F * 2 * F);
            net_detail::stack2x1(conv_weight(3), F, F, stacked_.data());
            std::vector<T> z = std::move(c.act[4]);
            z.resize(F * L);
            gemm(stacked_.data(), F, 2 * F, c.act[3].data(), L, z.data());
            batch_norm_relu(3, z, 1, L, mode, c, update_running);
            c.act[4] = std::move(z);
        }

        const auto& W = param("fc.weight").value;
        const auto& bias = param("fc.bias").value;
        c.logits.assign(B, {});
        const std::vector<T>& a4 = c.act[4];
        for (std::size_t b = 0; b < B; ++b) {
            std::array<T, 4> o{bias[0], bias[1], bias[2], bias[3]};
            for (std::size_t ch = 0; ch < F; ++ch) {
                const T* x = a4.data() + (ch * B + b) * M;
                for (std::size_t k = 0; k < 4; ++k) o[k] += net_detail::dot(W.data() + k * F * M + ch * M, x, M);
            }
            c.logits[b] = o;
        }
        return c.logits;
    }

    /// Mean total loss over the batch and its gradient w.r.t. the raw outputs.
    static T batch_loss(const std::vector<std::array<T, 4>>& logits, std::span<const PhaseLabel> labels,
                        std::vector<std::array<T, 4>>* dlogits) {
        const std::size_t B = logits.size();
        if (labels.size() != B) throw UsageError("batch_loss: label count mismatch");
        T total = T(0);
        if (dlogits) dlogits->assign(B, {});
        const T inv_b = T(1) / static_cast<T>(B);
        for (std::size_t b = 0; b < B; ++b) {
            const auto& z = logits[b];
            const auto& y = labels[b];
            const T d1 = z[0] - static_cast<T>(y.phi_1);
            const T d2 = z[1] - static_cast<T>(y.phi_2);
            T l = (y.ind_1 ? d1 * d1 : T(0)) + (y.ind_2 ? d2 * d2 : T(0));
            l += y.ind_1 ? net_detail::softplus(-z[2]) : net_detail::softplus(z[2]);
            l += y.ind_2 ? net_detail::softplus(-z[3]) : net_detail::softplus(z[3]);
            total += l;
            if (dlogits) {
                auto& g = (*dlogits)[b];
                g[0] = y.ind_1 ? T(2) * d1 * inv_b : T(0);
                g[1] = y.ind_2 ? T(2) * d2 * inv_b : T(0);
                g[2] = (net_detail::sigmoid(z[2]) - static_cast<T>(y.ind_1)) * inv_b;
                g[3] = (net_detail::sigmoid(z[3]) - static_cast<T>(y.ind_2)) * inv_b;
            }
        }
        return total * inv_b;
    }

    /// Accumulates parameter gradients from a train-mode cache and dL/dlogits.
    void backward(const ForwardCache<T>& c, const std::vector<std::array<T, 4>>& dlogits) {
        const std::size_t M = shape_.m, F = shape_.filters, B = c.batch;
        if (dlogits.size() != B) throw UsageError("PhaseNet::backward: gradient batch mismatch");

        // Fully connected layer.
        auto& Wp = param("fc.weight");
        auto& bp = param("fc.bias");
        std::vector<T> dact(F * B * M, T(0));
        for (std::size_t b = 0; b < B; ++b) {
            for (std::size_t k = 0; k < 4; ++k) bp.grad[k] += dlogits[b][k];
            for (std::size_t ch = 0; ch < F; ++ch) {
                const T* x = c.act[4].data() + (ch * B + b) * M;
                T* dx = dact.data() + (ch * B + b) * M;
                for (std::size_t k = 0; k < 4; ++k) {
                    const T g = dlogits[b][k];
                    if (g == T(0)) continue;
                    T* dw = Wp.grad.data() + k * F * M + ch * M;
                    const T* w = Wp.value.data() + k * F * M + ch * M;
                    for (std::size_t m = 0; m < M; ++m) {
                        dw[m] += g * x[m];
                        dx[m] += g * w[m];
                    }
                }
            }
        }

        const std::size_t L = B * M;
        std::vector<T> dstacked;

        // conv4 (2x1) block: the [2][F][L] activation is its own patch matrix.
        {
            std::vector<T> dz = relu_bn_backward(3, c, dact, 1, L);
            dstacked.assign(F * 2 * F, T(0));
            gemm_nt_accumulate(dz.data(), F, L, c.act[3].data(), 2 * F, dstacked.data());
            net_detail::unstack2x1_add(dstacked.data(), F, F, param(conv_name(3)).grad.data());
            stacked_.resize(F * 2 * F);
            net_detail::stack2x1(conv_weight(3), F, F, stacked_.data());
            dact.resize(2 * F * L);
            gemm_tn(stacked_.data(), F, 2 * F, dz.data(), L, dact.data());
        }

        for (int layer = 2; layer >= 0; --layer) {
            const std::size_t cin = layer == 0 ? 2 : F;
            std::vector<T> dz = relu_bn_backward(layer, c, dact, 2, L);
            scratch_.resize(cin * 6 * L);
            net_detail::patches3(c.act[layer].data(), cin, B, M, scratch_.data());
            dstacked.assign(2 * F * 6 * cin, T(0));
            gemm_nt_accumulate(dz.data(), 2 * F, L, scratch_.data(), 6 * cin, dstacked.data());
            net_detail::unstack3_add(dstacked.data(), F, cin, param(conv_name(layer)).grad.data());
            if (layer == 0) break;
            stacked_.resize(2 * F * 6 * cin);
            net_detail::stack3(conv_weight(layer), F, cin, stacked_.data());
            gemm_tn(stacked_.data(), 2 * F, 6 * cin, dz.data(), L, scratch_.data());
            dact.resize(2 * cin * L);
            net_detail::patches3_adjoint(scratch_.data(), cin, B, M, dact.data());
        }
    }

    /// Inference over a list of tensors, in chunks; BN uses running statistics.
    std::vector<NetOutput> infer(std::span<const InputTensor> tensors, std::size_t chunk = 64) {
        std::vector<NetOutput> out;
        out.reserve(tensors.size());
        std::vector<T> buf;
        for (std::size_t i = 0; i < tensors.size(); i += chunk) {
            const std::size_t n = std::min(chunk, tensors.size() - i);
            buf.resize(n * 4 * shape_.m);
            for (std::size_t j = 0; j < n; ++j) {
                const auto& v = tensors[i + j].values();
                if (v.size() != 4 * shape_.m) throw UsageError("PhaseNet::infer: tensor M does not match the network");
                std::copy(v.begin(), v.end(), buf.begin() + static_cast<std::ptrdiff_t>(j * 4 * shape_.m));
            }
            const auto logits = forward(buf, n, Mode::Infer);
            for (const auto& z : logits) out.push_back(to_output(z));
        }
        return out;
    }

    NetOutput infer_one(const InputTensor& t) { return infer(std::span<const InputTensor>(&t, 1)).front(); }

    static NetOutput to_output(const std::array<T, 4>& z) {
        return {static_cast<double>(z[0]), static_cast<double>(z[1]), static_cast<double>(net_detail::sigmoid(z[2])),
                static_cast<double>(net_detail::sigmoid(z[3]))};
    }

    template <typename U>
    void copy_values_from(const PhaseNet<U>& other) {
        if (!(other.shape() == shape_)) throw UsageError("PhaseNet: shape mismatch in copy");
        for (std::size_t i = 0; i < params_.size(); ++i)
            for (std::size_t j = 0; j < params_[i].value.size(); ++j)
                params_[i].value[j] = static_cast<T>(other.params()[i].value[j]);
    }

private:
    static std::string conv_name(int layer) { return "conv" + std::to_string(layer + 1) + ".weight"; }
    static std::string bn_name(int layer) { return "bn" + std::to_string(layer + 1); }

    const T* conv_weight(int layer) const { return param(conv_name(layer)).value.data(); }

    void add(const std::string& name, std::vector<std::size_t> shape, bool trainable = true) {
        std::size_t n = 1;
        for (auto d : shape) n *= d;
        index_[name] = params_.size();
        params_.push_back(Param<T>{name, std::move(shape), std::vector<T>(n, T(0)), std::vector<T>(n, T(0)), trainable});
    }

    void add_bn(const std::string& prefix) {
        const std::size_t F = shape_.filters;
        add(prefix + ".gamma", {F});
        add(prefix + ".beta", {F});
        add(prefix + ".running_mean", {F}, false);
        add(prefix + ".running_var", {F}, false);
        param(prefix + ".gamma").value.assign(F, T(1));
        param(prefix + ".running_var").value.assign(F, T(1));
    }

    // C[rows x n] = A[rows x k] * B[k x n]
    static void gemm(const T* a, std::size_t rows, std::size_t k, const T* b, std::size_t n, T* c) {
        net_detail::MapR<T>(c, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(n)).noalias() =
            net_detail::CMapR<T>(a, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(k)) *
            net_detail::CMapR<T>(b, static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(n));
    }
    // C[rows x k] += A[rows x n] * B[k x n]^T
    static void gemm_nt_accumulate(const T* a, std::size_t rows, std::size_t n, const T* b, std::size_t k, T* c) {
        net_detail::MapR<T>(c, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(k)).noalias() +=
            net_detail::CMapR<T>(a, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(n)) *
            net_detail::CMapR<T>(b, static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(n)).transpose();
    }
    // C[k x n] = A[rows x k]^T * B[rows x n]
    static void gemm_tn(const T* a, std::size_t rows, std::size_t k, const T* b, std::size_t n, T* c) {
        net_detail::MapR<T>(c, static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(n)).noalias() =
            net_detail::CMapR<T>(a, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(k)).transpose() *
            net_detail::CMapR<T>(b, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(n));
    }

    // z holds S row segments of [F][L]: element (s, ch, i) sits at (s * F + ch) * L + i.
    void batch_norm_relu(int layer, std::vector<T>& z, std::size_t S, std::size_t L, Mode mode, ForwardCache<T>& c,
                         bool update_running) {
        const std::size_t F = shape_.filters;
        const std::string bn = bn_name(layer);
        const auto& gamma = param(bn + ".gamma").value;
        const auto& beta = param(bn + ".beta").value;
        auto& rmean = param(bn + ".running_mean").value;
        auto& rvar = param(bn + ".running_var").value;
        if (mode == Mode::Infer) {
            for (std::size_t ch = 0; ch < F; ++ch) {
                const T scale = gamma[ch] / std::sqrt(rvar[ch] + kBnEps);
                const T shift = beta[ch] - rmean[ch] * scale;
                for (std::size_t s = 0; s < S; ++s) {
                    T* x = z.data() + (s * F + ch) * L;
                    for (std::size_t i = 0; i < L; ++i) x[i] = std::max(x[i] * scale + shift, T(0));
                }
            }
            return;
        }
        const std::size_t N = S * L;
        c.xhat[layer].resize(F * N);
        c.inv_std[layer].resize(F);
        for (std::size_t ch = 0; ch < F; ++ch) {
            double mean = 0.0;
            for (std::size_t s = 0; s < S; ++s) {
                const T* x = z.data() + (s * F + ch) * L;
                mean += net_detail::lane_reduce<double>(L, [&](std::size_t i) { return static_cast<double>(x[i]); });
            }
            mean /= static_cast<double>(N);
            double var = 0.0;
            for (std::size_t s = 0; s < S; ++s) {
                const T* x = z.data() + (s * F + ch) * L;
                var += net_detail::lane_reduce<double>(L, [&](std::size_t i) {
                    const double d = static_cast<double>(x[i]) - mean;
                    return d * d;
                });
            }
            var /= static_cast<double>(N);
            const T inv = static_cast<T>(1.0 / std::sqrt(var + static_cast<double>(kBnEps)));
            c.inv_std[layer][ch] = inv;
            const T m = static_cast<T>(mean);
            for (std::size_t s = 0; s < S; ++s) {
                T* x = z.data() + (s * F + ch) * L;
                T* xh = c.xhat[layer].data() + (s * F + ch) * L;
                for (std::size_t i = 0; i < L; ++i) {
                    xh[i] = (x[i] - m) * inv;
                    x[i] = std::max(gamma[ch] * xh[i] + beta[ch], T(0));
                }
            }
            if (update_running) {
                const double unbiased = N > 1 ? var * static_cast<double>(N) / static_cast<double>(N - 1) : var;
                rmean[ch] = (T(1) - kBnMomentum) * rmean[ch] + kBnMomentum * m;
                rvar[ch] = (T(1) - kBnMomentum) * rvar[ch] + kBnMomentum * static_cast<T>(unbiased);
            }
        }
    }

    /// dL/d(conv output) from dL/d(post-ReLU activation); accumulates gamma/beta gradients.
    std::vector<T> relu_bn_backward(int layer, const ForwardCache<T>& c, const std::vector<T>& dact, std::size_t S, std::size_t L) {
        const std::size_t F = shape_.filters;
        const std::string bn = bn_name(layer);
        const auto& gamma = param(bn + ".gamma").value;
        auto& dgamma = param(bn + ".gamma").grad;
        auto& dbeta = param(bn + ".beta").grad;
        const std::vector<T>& out = c.act[layer + 1];
        std::vector<T> dz(F * S * L);
        const T n = static_cast<T>(S * L);
        for (std::size_t ch = 0; ch < F; ++ch) {
            T sum_dy = T(0), sum_dy_xh = T(0);
            for (std::size_t s = 0; s < S; ++s) {
                const std::size_t off = (s * F + ch) * L;
                const T* xh = c.xhat[layer].data() + off;
                const T* y = out.data() + off;
                const T* g = dact.data() + off;
                T* d = dz.data() + off;
                for (std::size_t i = 0; i < L; ++i) d[i] = y[i] > T(0) ? g[i] : T(0);
                sum_dy += net_detail::lane_reduce<T>(L, [&](std::size_t i) { return d[i]; });
                sum_dy_xh += net_detail::dot(d, xh, L);
            }
            dgamma[ch] += sum_dy_xh;
            dbeta[ch] += sum_dy;
            const T k = gamma[ch] * c.inv_std[layer][ch] / n;
            for (std::size_t s = 0; s < S; ++s) {
                const std::size_t off = (s * F + ch) * L;
                const T* xh = c.xhat[layer].data() + off;
                T* d = dz.data() + off;
                for (std::size_t i = 0; i < L; ++i) d[i] = k * (n * d[i] - sum_dy - xh[i] * sum_dy_xh);
            }
        }
        return dz;
    }

    NetShape shape_;
    std::vector<Param<T>> params_;
    std::map<std::string, std::size_t> index_;
    std::vector<T> scratch_, stacked_;
};

// Weights file (little-endian):
//   "JCNN" | version u16 | M u32 | n_filters u32
//   then named blocks until EOF: name (u16 length + bytes) | ndim u32 | dims u32... | float32 values
// Model parameters come first in the network's fixed order; a checkpoint appends optimizer state.

inline constexpr std::uint16_t kWeightsVersion = 1;

struct NamedBlock {
    std::string name;
    std::vector<std::size_t> shape;
    std::vector<float> values;
};

struct WeightsFile {
    NetShape shape;
    std::vector<NamedBlock> blocks;

    const NamedBlock* find(const std::string& name) const {
        for (const auto& b : blocks)
            if (b.name == name) return &b;
        return nullptr;
    }
};

inline void write_weights_file(const std::string& path, const WeightsFile& f) {
    binio::Writer w;
    w.magic("JCNN");
    w.u16(kWeightsVersion);
    w.u32(static_cast<std::uint32_t>(f.shape.m));
    w.u32(static_cast<std::uint32_t>(f.shape.filters));
    for (const auto& b : f.blocks) {
        w.str(b.name);
        w.u32(static_cast<std::uint32_t>(b.shape.size()));
        std::size_t n = 1;
        for (auto d : b.shape) {
            w.u32(static_cast<std::uint32_t>(d));
            n *= d;
        }
        if (n != b.values.size()) throw UsageError("write_weights_file: block '" + b.name + "' size/shape mismatch");
        for (float v : b.values) w.f32(v);
    }
    w.save(path);
}

inline WeightsFile read_weights_file(const std::string& path) {
    const auto bytes = binio::load_file(path);
    binio::Reader r(bytes, "weights '" + path + "'");
    r.expect_magic("JCNN");
    const auto version = r.u16();
    if (version != kWeightsVersion) throw FormatError("weights '" + path + "': unsupported version " + std::to_string(version));
    WeightsFile f;
    f.shape.m = r.u32();
    f.shape.filters = r.u32();
    if (f.shape.m == 0 || f.shape.filters == 0) throw FormatError("weights '" + path + "': zero M or filter count");
    while (r.remaining() > 0) {
        NamedBlock b;
        b.name = r.str();
        const std::uint32_t ndim = r.u32();
        if (ndim > 8) throw FormatError("weights '" + path + "': block '" + b.name + "' has implausible rank");
        std::size_t n = 1;
        for (std::uint32_t i = 0; i < ndim; ++i) {
            b.shape.push_back(r.u32());
            n *= b.shape.back();
        }
        r.need(n * 4);
        b.values.resize(n);
        for (auto& v : b.values) v = r.f32();
        f.blocks.push_back(std::move(b));
    }
    return f;
}

template <typename T>
WeightsFile to_weights_file(const PhaseNet<T>& net) {
    WeightsFile f;
    f.shape = net.shape();
    for (const auto& p : net.params()) f.blocks.push_back({p.name, p.shape, std::vector<float>(p.value.begin(), p.value.end())});
    return f;
}

/// Validates names, order and shapes of the model blocks against a network of the file's shape.
template <typename T>
PhaseNet<T> net_from_weights_file(const WeightsFile& f, const std::string& context = "weights") {
    PhaseNet<T> net(f.shape);
    auto& params = net.params();
    if (f.blocks.size() < params.size()) throw FormatError(context + ": missing parameter blocks");
    for (std::size_t i = 0; i < params.size(); ++i) {
        const auto& b = f.blocks[i];
        if (b.name != params[i].name) throw FormatError(context + ": expected block '" + params[i].name + "', found '" + b.name + "'");
        if (b.shape != params[i].shape) throw FormatError(context + ": shape mismatch for '" + b.name + "'");
        for (std::size_t j = 0; j < b.values.size(); ++j) params[i].value[j] = static_cast<T>(b.values[j]);
        if (b.name.ends_with(".running_var"))
            for (float v : b.values)
                if (!(v > 0.0f)) throw FormatError(context + ": non-positive running variance in '" + b.name + "'");
    }
    return net;
}

template <typename T>
void save_weights(const std::string& path, const PhaseNet<T>& net) {
    write_weights_file(path, to_weights_file(net));
}

template <typename T = float>
PhaseNet<T> load_weights(const std::string& path) {
    return net_from_weights_file<T>(read_weights_file(path), "weights '" + path + "'");
}

/// Signal indicator: 1 iff the confidence is strictly above 0.5.
inline std::array<int, 2> indicators(const NetOutput& o) { return {o.i_s1 > 0.5 ? 1 : 0, o.i_s2 > 0.5 ? 1 : 0}; }

}  // namespace jamcancel
