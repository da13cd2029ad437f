#pragma once

// Adam training loop with plateau learning-rate decay and checkpoint/resume.

#include <array>
#include <bit>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "jamcancel/dataset.hpp"
#include "jamcancel/phase_net.hpp"

namespace jamcancel {

struct TrainConfig {
    double lr = 0.005;
    std::size_t batch_size = 64;
    int epochs = 30;
    int plateau_patience = 3;
    double plateau_factor = 0.5;
    double min_lr = 1e-6;
    std::uint64_t seed = 1;
    std::size_t filters = 64;
    bool augment = true;  // fresh antenna-2 and common rotations for every example drawn

    void validate() const {
        if (!(lr > 0.0) || !std::isfinite(lr)) throw UsageError("TrainConfig: lr must be positive");
        if (!(plateau_factor > 0.0 && plateau_factor < 1.0)) throw UsageError("TrainConfig: plateau_factor must lie in (0,1)");
        if (batch_size < 2) throw UsageError("TrainConfig: batch_size must be at least 2");
        if (epochs < 1) throw UsageError("TrainConfig: epochs must be at least 1");
        if (plateau_patience < 0) throw UsageError("TrainConfig: plateau_patience must be non-negative");
        if (filters < 1) throw UsageError("TrainConfig: filters must be positive");
    }
};

/// Reduce-on-plateau in "min" mode with a relative threshold of 1e-4, matching the common
/// deep-learning-framework behaviour.
struct PlateauScheduler {
    double lr;
    double factor;
    int patience;
    double min_lr = 0.0;
    double best = std::numeric_limits<double>::infinity();
    int bad_epochs = 0;

    static constexpr double kThreshold = 1e-4;

    /// Returns true if the learning rate was reduced.
    bool step(double metric) {
        if (metric < best * (1.0 - kThreshold)) {
            best = metric;
            bad_epochs = 0;
            return false;
        }
        if (++bad_epochs > patience) {
            const double next = std::max(lr * factor, min_lr);
            bad_epochs = 0;
            if (next < lr) {
                lr = next;
                return true;
            }
        }
        return false;
    }
};

template <typename T>
class Adam {
public:
    static constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kEps = 1e-8;

    explicit Adam(const PhaseNet<T>& net) {
        for (const auto& p : net.params()) {
            m_.emplace_back(p.size(), 0.0);
            v_.emplace_back(p.size(), 0.0);
        }
    }

    void step(PhaseNet<T>& net, double lr) {
        ++t_;
        const double c1 = 1.0 - std::pow(kBeta1, static_cast<double>(t_));
        const double c2 = 1.0 - std::pow(kBeta2, static_cast<double>(t_));
        auto& ps = net.params();
        for (std::size_t i = 0; i < ps.size(); ++i) {
            if (!ps[i].trainable) continue;
            auto& m = m_[i];
            auto& v = v_[i];
            for (std::size_t j = 0; j < ps[i].size(); ++j) {
                const double g = static_cast<double>(ps[i].grad[j]);
                m[j] = kBeta1 * m[j] + (1.0 - kBeta1) * g;
                v[j] = kBeta2 * v[j] + (1.0 - kBeta2) * g * g;
                const double upd = lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + kEps);
                ps[i].value[j] = static_cast<T>(static_cast<double>(ps[i].value[j]) - upd);
            }
        }
    }

    std::uint64_t steps() const { return t_; }
    std::vector<std::vector<double>>& m() { return m_; }
    std::vector<std::vector<double>>& v() { return v_; }
    void set_steps(std::uint64_t t) { t_ = t; }

private:
    std::vector<std::vector<double>> m_, v_;
    std::uint64_t t_ = 0;
};

struct EpochRecord {
    int epoch = 0;
    double lr = 0.0;
    double train_loss = 0.0;
    double val_loss = 0.0;
};

struct TrainResult {
    PhaseNet<float> net;  // best-validation weights
    std::vector<EpochRecord> history;
    double best_val = std::numeric_limits<double>::infinity();
};

/// Flattens examples [first, first+n) of `set` (indexed through `order`) into a batch.
inline void gather_batch(const std::vector<LabeledExample>& set, const std::vector<std::size_t>& order, std::size_t first,
                         std::size_t n, std::size_t m, std::vector<float>& values, std::vector<PhaseLabel>& labels) {
    values.resize(n * 4 * m);
    labels.resize(n);
    for (std::size_t j = 0; j < n; ++j) {
        const auto& e = set[order[first + j]];
        const auto& v = e.tensor.values();
        if (v.size() != 4 * m) throw UsageError("training: example tensor M does not match the network");
        std::copy(v.begin(), v.end(), values.begin() + static_cast<std::ptrdiff_t>(j * 4 * m));
        labels[j] = PhaseLabel::of(e);
    }
}

/// Rotates antenna 2 of example j by -theta and both antennas by alpha in place. Phase labels of
/// present emitters move by +theta and a two-signal pair is re-sorted.
inline void rotate_example(float* v, std::size_t m, PhaseLabel& y, double theta, double alpha) {
    const std::complex<float> r1 = std::polar(1.0f, static_cast<float>(alpha));
    const std::complex<float> r2 = std::polar(1.0f, static_cast<float>(alpha - theta));
    for (std::size_t t = 0; t < m; ++t)
        for (std::size_t a = 0; a < 2; ++a) {
            float& re = v[t * 2 + a];
            float& im = v[(m + t) * 2 + a];
            const std::complex<float> z = std::complex<float>(re, im) * (a == 0 ? r1 : r2);
            re = z.real();
            im = z.imag();
        }
    if (y.ind_1) y.phi_1 = wrap_phase(y.phi_1 + theta);
    if (y.ind_2) y.phi_2 = wrap_phase(y.phi_2 + theta);
    if (y.ind_1 && y.ind_2 && y.phi_1 > y.phi_2) std::swap(y.phi_1, y.phi_2);
}

/// Mean total loss in inference mode.
template <typename T>
double evaluate_loss(PhaseNet<T>& net, const std::vector<LabeledExample>& set, std::size_t batch = 128) {
    if (set.empty()) return 0.0;
    std::vector<std::size_t> order(set.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::vector<float> values;
    std::vector<PhaseLabel> labels;
    double total = 0.0;
    for (std::size_t i = 0; i < set.size(); i += batch) {
        const std::size_t n = std::min(batch, set.size() - i);
        gather_batch(set, order, i, n, net.shape().m, values, labels);
        std::vector<T> tv(values.begin(), values.end());
        const auto logits = net.forward(tv, n, Mode::Infer);
        total += static_cast<double>(PhaseNet<T>::batch_loss(logits, labels, nullptr)) * static_cast<double>(n);
    }
    return total / static_cast<double>(set.size());
}

/// Optional checkpoint path: written after every epoch, and resumed from when it already exists.
struct TrainOptions {
    std::string checkpoint_path;
    std::function<void(const EpochRecord&)> on_epoch;
};

namespace train_detail {

// Raw 64-bit values carried through float32 blocks by bit pattern.
inline std::array<float, 2> pack_u64(std::uint64_t v) {
    return {std::bit_cast<float>(static_cast<std::uint32_t>(v)), std::bit_cast<float>(static_cast<std::uint32_t>(v >> 32))};
}
inline std::uint64_t unpack_u64(const float* p) {
    return static_cast<std::uint64_t>(std::bit_cast<std::uint32_t>(p[0])) |
           (static_cast<std::uint64_t>(std::bit_cast<std::uint32_t>(p[1])) << 32);
}

struct Checkpoint {
    PhaseNet<float> net;
    PhaseNet<float> best;
    PlateauScheduler sched;
    double best_val;
    int next_epoch;
    std::vector<EpochRecord> history;
};

inline void save_checkpoint(const std::string& path, const Checkpoint& ck, Adam<float>& adam) {
    WeightsFile f = to_weights_file(ck.net);
    for (const auto& p : ck.best.params()) f.blocks.push_back({"best." + p.name, p.shape, std::vector<float>(p.value.begin(), p.value.end())});
    auto& ps = ck.net.params();
    for (std::size_t i = 0; i < ps.size(); ++i) {
        // Optimizer moments are doubles; each is stored as two raw 32-bit halves so resume is exact.
        auto split = [&](const std::vector<double>& src, const std::string& tag) {
            NamedBlock b{"adam." + tag + "." + ps[i].name, {ps[i].size(), 2}, {}};
            for (double d : src) {
                const auto h = pack_u64(std::bit_cast<std::uint64_t>(d));
                b.values.insert(b.values.end(), h.begin(), h.end());
            }
            f.blocks.push_back(std::move(b));
        };
        split(adam.m()[i], "m");
        split(adam.v()[i], "v");
    }
    auto scalar = [&](const std::string& name, double d) {
        const auto h = pack_u64(std::bit_cast<std::uint64_t>(d));
        f.blocks.push_back({name, {2}, {h[0], h[1]}});
    };
    auto u64 = [&](const std::string& name, std::uint64_t v) {
        const auto h = pack_u64(v);
        f.blocks.push_back({name, {2}, {h[0], h[1]}});
    };
    scalar("state.lr", ck.sched.lr);
    scalar("state.sched_best", std::isfinite(ck.sched.best) ? ck.sched.best : -1.0);
    scalar("state.best_val", std::isfinite(ck.best_val) ? ck.best_val : -1.0);
    u64("state.bad_epochs", static_cast<std::uint64_t>(ck.sched.bad_epochs));
    u64("state.next_epoch", static_cast<std::uint64_t>(ck.next_epoch));
    u64("state.adam_steps", adam.steps());
    NamedBlock hist{"state.history", {ck.history.size(), 8}, {}};
    for (const auto& h : ck.history) {
        for (std::uint64_t v : {static_cast<std::uint64_t>(h.epoch), std::bit_cast<std::uint64_t>(h.lr),
                                std::bit_cast<std::uint64_t>(h.train_loss), std::bit_cast<std::uint64_t>(h.val_loss)}) {
            const auto p = pack_u64(v);
            hist.values.insert(hist.values.end(), p.begin(), p.end());
        }
    }
    f.blocks.push_back(std::move(hist));
    const std::string tmp = path + ".tmp";
    write_weights_file(tmp, f);
    if (std::rename(tmp.c_str(), path.c_str()) != 0) throw std::runtime_error("cannot move checkpoint into '" + path + "'");
}

}  // namespace train_detail

/// Trains from scratch (or resumes from options.checkpoint_path) and returns the best-validation
/// weights. Throws DivergenceError if a batch loss becomes non-finite.
inline TrainResult train(const DatasetSplit& data, const TrainConfig& cfg, std::size_t m, const TrainOptions& opt = {}) {
    cfg.validate();
    if (data.train.empty() || data.val.empty()) throw UsageError("train: training and validation splits must be non-empty");

    const NetShape shape{m, cfg.filters};
    PhaseNet<float> net(shape);
    Rng init_rng = Rng(cfg.seed).fork(21);
    net.initialize(init_rng);
    PhaseNet<float> best = net;
    Adam<float> adam(net);
    PlateauScheduler sched{cfg.lr, cfg.plateau_factor, cfg.plateau_patience, cfg.min_lr};
    double best_val = std::numeric_limits<double>::infinity();
    int first_epoch = 0;
    std::vector<EpochRecord> history;

    if (!opt.checkpoint_path.empty() && std::ifstream(opt.checkpoint_path).good()) {
        const WeightsFile f = read_weights_file(opt.checkpoint_path);
        const std::string ctx = "checkpoint '" + opt.checkpoint_path + "'";
        if (!(f.shape == shape)) throw FormatError(ctx + ": network shape differs from the training configuration");
        net = net_from_weights_file<float>(f, ctx);
        auto need = [&](const std::string& name) -> const NamedBlock& {
            const NamedBlock* b = f.find(name);
            if (!b) throw FormatError(ctx + ": missing block '" + name + "'");
            return *b;
        };
        for (auto& p : best.params()) {
            const auto& b = need("best." + p.name);
            if (b.values.size() != p.size()) throw FormatError(ctx + ": bad size for best." + p.name);
            std::copy(b.values.begin(), b.values.end(), p.value.begin());
        }
        auto& ps = net.params();
        for (std::size_t i = 0; i < ps.size(); ++i) {
            auto join = [&](const std::string& tag, std::vector<double>& dst) {
                const auto& b = need("adam." + tag + "." + ps[i].name);
                if (b.values.size() != 2 * dst.size()) throw FormatError(ctx + ": bad optimizer block size");
                for (std::size_t j = 0; j < dst.size(); ++j) dst[j] = std::bit_cast<double>(train_detail::unpack_u64(&b.values[2 * j]));
            };
            join("m", adam.m()[i]);
            join("v", adam.v()[i]);
        }
        auto u64 = [&](const std::string& name) {
            const auto& b = need(name);
            if (b.values.size() != 2) throw FormatError(ctx + ": bad scalar block '" + name + "'");
            return train_detail::unpack_u64(b.values.data());
        };
        auto scalar = [&](const std::string& name) { return std::bit_cast<double>(u64(name)); };
        sched.lr = scalar("state.lr");
        const double sb = scalar("state.sched_best");
        sched.best = sb < 0.0 ? std::numeric_limits<double>::infinity() : sb;
        const double bv = scalar("state.best_val");
        best_val = bv < 0.0 ? std::numeric_limits<double>::infinity() : bv;
        sched.bad_epochs = static_cast<int>(u64("state.bad_epochs"));
        first_epoch = static_cast<int>(u64("state.next_epoch"));
        adam.set_steps(u64("state.adam_steps"));
        const auto& hist = need("state.history");
        if (hist.values.size() % 8 != 0) throw FormatError(ctx + ": bad history block");
        for (std::size_t i = 0; i < hist.values.size(); i += 8) {
            const float* v = hist.values.data() + i;
            history.push_back({static_cast<int>(train_detail::unpack_u64(v)), std::bit_cast<double>(train_detail::unpack_u64(v + 2)),
                               std::bit_cast<double>(train_detail::unpack_u64(v + 4)),
                               std::bit_cast<double>(train_detail::unpack_u64(v + 6))});
        }
    }

    const std::size_t n = data.train.size();
    std::vector<std::size_t> order(n);
    std::vector<float> values;
    std::vector<PhaseLabel> labels;
    std::vector<std::array<float, 4>> dlogits;
    ForwardCache<float> cache;

    for (int epoch = first_epoch; epoch < cfg.epochs; ++epoch) {
        // Each epoch's shuffle depends only on (seed, epoch), so a resumed run matches an uninterrupted one.
        for (std::size_t i = 0; i < n; ++i) order[i] = i;
        Rng shuffle_rng = Rng(cfg.seed).fork(1000 + static_cast<std::uint64_t>(epoch));
        shuffle_rng.shuffle(order);
        Rng aug_rng = Rng(cfg.seed).fork(5000 + static_cast<std::uint64_t>(epoch));

        double loss_sum = 0.0;
        std::size_t seen = 0;
        for (std::size_t first = 0; first < n; first += cfg.batch_size) {
            const std::size_t b = std::min(cfg.batch_size, n - first);
            if (b < 2) break;  // batch statistics need at least two examples
            gather_batch(data.train, order, first, b, m, values, labels);
            if (cfg.augment)
                for (std::size_t j = 0; j < b; ++j) {
                    const double theta = aug_rng.uniform(-kPi, kPi), alpha = aug_rng.uniform(-kPi, kPi);
                    rotate_example(values.data() + j * 4 * m, m, labels[j], theta, alpha);
                }
            net.zero_grad();
            const auto logits = net.forward(values, b, Mode::Train, &cache);
            const float loss = PhaseNet<float>::batch_loss(logits, labels, &dlogits);
            if (!std::isfinite(loss)) {
                char msg[160];
                std::snprintf(msg, sizeof msg, "training diverged: non-finite loss at epoch %d, batch starting at %zu (lr=%g)",
                              epoch, first, sched.lr);
                throw DivergenceError(msg);
            }
            net.backward(cache, dlogits);
            adam.step(net, sched.lr);
            loss_sum += static_cast<double>(loss) * static_cast<double>(b);
            seen += b;
        }

        const double val = evaluate_loss(net, data.val);
        if (!std::isfinite(val)) throw DivergenceError("training diverged: non-finite validation loss at epoch " + std::to_string(epoch));
        EpochRecord rec{epoch, sched.lr, seen ? loss_sum / static_cast<double>(seen) : 0.0, val};
        history.push_back(rec);
        if (val < best_val) {
            best_val = val;
            best = net;
        }
        sched.step(val);
        if (opt.on_epoch) opt.on_epoch(rec);
        if (!opt.checkpoint_path.empty()) {
            train_detail::Checkpoint ck{net, best, sched, best_val, epoch + 1, history};
            train_detail::save_checkpoint(opt.checkpoint_path, ck, adam);
        }
    }
    return TrainResult{std::move(best), std::move(history), best_val};
}

}  // namespace jamcancel
