#pragma once

// Central-difference verification of PhaseNet::backward.

#include <cmath>
#include <string>
#include <vector>

#include "jamcancel/phase_net.hpp"

namespace jamcancel {

struct GradCheckBlock {
    std::string name;
    double rel_error = 0.0;      // ||analytic - numeric|| / max(||analytic||, ||numeric||)
    double max_abs_error = 0.0;
    double grad_norm = 0.0;
    std::size_t kink_refined = 0;  // elements whose step crossed a ReLU kink and were re-measured
};

namespace gradcheck_detail {

template <typename T>
std::vector<std::uint8_t> relu_mask(const ForwardCache<T>& c) {
    std::vector<std::uint8_t> m;
    for (std::size_t k = 1; k < c.act.size(); ++k)
        for (T v : c.act[k]) m.push_back(v > T(0));
    return m;
}

}  // namespace gradcheck_detail

/// Compares backward() against central differences of the mean batch loss for every trainable
/// parameter block. The differences are taken on a copy of the network held in precision R, so a
/// float network can be checked against a double reference free of float rounding in the loss.
/// Forward passes run in train mode without touching the running statistics. When the +/- step
/// lands on different sides of a ReLU kink the element is re-measured with a step 100x smaller
/// (up to three times).
template <typename T, typename R = T>
std::vector<GradCheckBlock> gradient_check(PhaseNet<T>& net, const std::vector<T>& inputs, std::size_t batch,
                                           const std::vector<PhaseLabel>& labels, double step) {
    ForwardCache<T> cache;
    std::vector<std::array<T, 4>> dlogits;
    net.zero_grad();
    const auto logits = net.forward(inputs, batch, Mode::Train, &cache, false);
    PhaseNet<T>::batch_loss(logits, labels, &dlogits);
    net.backward(cache, dlogits);

    PhaseNet<R> ref(net.shape());
    ref.copy_values_from(net);
    const std::vector<R> ref_inputs(inputs.begin(), inputs.end());
    auto loss_at = [&](std::vector<std::uint8_t>* mask) {
        ForwardCache<R> c;
        const auto z = ref.forward(ref_inputs, batch, Mode::Train, &c, false);
        if (mask) *mask = gradcheck_detail::relu_mask(c);
        return static_cast<double>(PhaseNet<R>::batch_loss(z, labels, nullptr));
    };

    std::vector<GradCheckBlock> out;
    for (std::size_t i = 0; i < net.params().size(); ++i) {
        const auto& p = net.params()[i];
        auto& q = ref.params()[i];
        if (!p.trainable) continue;
        GradCheckBlock r;
        r.name = p.name;
        double diff2 = 0.0, a2 = 0.0, n2 = 0.0;
        for (std::size_t j = 0; j < p.size(); ++j) {
            const R saved = q.value[j];
            double h = step, numeric = 0.0;
            for (int attempt = 0; attempt < 4; ++attempt) {
                std::vector<std::uint8_t> mp, mm;
                q.value[j] = static_cast<R>(static_cast<double>(saved) + h);
                const double lp = loss_at(&mp);
                q.value[j] = static_cast<R>(static_cast<double>(saved) - h);
                const double lm = loss_at(&mm);
                q.value[j] = saved;
                numeric = (lp - lm) / (2.0 * h);
                if (mp == mm) break;
                if (attempt == 0) ++r.kink_refined;
                h /= 100.0;
            }
            const double analytic = static_cast<double>(p.grad[j]);
            diff2 += (analytic - numeric) * (analytic - numeric);
            a2 += analytic * analytic;
            n2 += numeric * numeric;
            r.max_abs_error = std::max(r.max_abs_error, std::abs(analytic - numeric));
        }
        const double denom = std::max(std::sqrt(a2), std::sqrt(n2));
        r.grad_norm = std::sqrt(a2);
        r.rel_error = denom > 0.0 ? std::sqrt(diff2) / denom : 0.0;
        out.push_back(r);
    }
    return out;
}

/// The small configuration used for verification: M = 8, two filters, a batch of four mixed
/// examples, randomized weights including BN affine parameters and the output bias.
template <typename T>
struct TinyProblem {
    PhaseNet<T> net{NetShape{8, 2}};
    std::vector<T> inputs;
    std::vector<PhaseLabel> labels;
    std::size_t batch = 4;

    explicit TinyProblem(std::uint64_t seed) {
        Rng rng(seed);
        net.initialize(rng);
        for (auto& p : net.params()) {
            if (p.name.ends_with(".gamma"))
                for (auto& v : p.value) v = static_cast<T>(rng.uniform(0.5, 1.5));
            if (p.name.ends_with(".beta") || p.name == "fc.bias")
                for (auto& v : p.value) v = static_cast<T>(rng.uniform(-0.3, 0.3));
        }
        inputs.resize(batch * 4 * 8);
        for (auto& v : inputs) v = static_cast<T>(rng.gaussian());
        labels = {{0.4, 0.0, 1, 0}, {-1.0, 2.0, 1, 1}, {0.0, 0.0, 0, 0}, {2.5, -0.7, 0, 1}};
    }
};

}  // namespace jamcancel
