#pragma once

// Experiment drivers behind the CLI: channel-state confusion matrices, BER sweeps over
// scheme x SJR x separation x lambda x mode, the smoothing study and the amplitude-ratio trial.

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <functional>
#include <map>
#include <mutex>
#include <sstream>
#include <thread>

#include "jamcancel/canceller.hpp"
#include "jamcancel/channel.hpp"
#include "jamcancel/dataset.hpp"
#include "jamcancel/phase_net.hpp"

namespace jamcancel {

// ---------------------------------------------------------------- network outputs

inline ChannelState truth_channel_state(BlockState s) {
    switch (s) {
        case BlockState::Noise: return ChannelState::Noise;
        case BlockState::SenderOnly:
        case BlockState::JammerOnly: return ChannelState::Single;
        case BlockState::Collision: return ChannelState::Collision;
    }
    return ChannelState::Noise;
}

inline ChannelState label_channel_state(const LabeledExample& e) { return classify({e.ind_1, e.ind_2}); }

/// What a perfect network would emit for a block: true phase shifts in slot order, hard indicators.
inline NetOutput oracle_output(const BlockTruth& t) {
    const double s = t.gains.delta_phi_s().radians(), j = t.gains.delta_phi_j().radians();
    switch (t.state) {
        case BlockState::Noise: return {0.0, 0.0, 0.0, 0.0};
        case BlockState::SenderOnly: return {s, 0.0, 1.0, 0.0};
        case BlockState::JammerOnly: return {j, 0.0, 1.0, 0.0};
        case BlockState::Collision: return {std::min(s, j), std::max(s, j), 1.0, 1.0};
    }
    return {};
}

inline std::vector<NetOutput> oracle_outputs(const Scenario& sc) {
    std::vector<NetOutput> out;
    out.reserve(sc.n_blocks());
    for (const auto& t : sc.truth) out.push_back(oracle_output(t));
    return out;
}

/// One network output per M-sample block of a two-antenna stream.
inline std::vector<NetOutput> network_outputs(PhaseNet<float>& net, std::span<const IqSample> r1, std::span<const IqSample> r2) {
    const std::size_t M = net.shape().m;
    if (r1.size() != r2.size() || r1.size() % M != 0)
        throw UsageError("network_outputs: streams must be equal-length whole numbers of blocks");
    std::vector<InputTensor> tensors;
    tensors.reserve(r1.size() / M);
    for (std::size_t b = 0; b < r1.size() / M; ++b)
        tensors.push_back(build_input_tensor(IqBlock(IqVector(r1.begin() + b * M, r1.begin() + (b + 1) * M), 1),
                                             IqBlock(IqVector(r2.begin() + b * M, r2.begin() + (b + 1) * M), 2)));
    return net.infer(tensors, 128);
}

// ---------------------------------------------------------------- classification

class Confusion {
public:
    void add(ChannelState truth, ChannelState predicted) { ++m_[idx(truth)][idx(predicted)]; }
    std::size_t count(ChannelState truth, ChannelState predicted) const { return m_[idx(truth)][idx(predicted)]; }

    std::size_t total() const {
        std::size_t n = 0;
        for (const auto& r : m_)
            for (auto v : r) n += v;
        return n;
    }
    double accuracy() const {
        const std::size_t n = total();
        return n ? static_cast<double>(m_[0][0] + m_[1][1] + m_[2][2]) / static_cast<double>(n) : 0.0;
    }
    double recall(ChannelState s) const {
        const auto& r = m_[idx(s)];
        const std::size_t n = r[0] + r[1] + r[2];
        return n ? static_cast<double>(r[idx(s)]) / static_cast<double>(n) : 0.0;
    }
    double precision(ChannelState s) const {
        const std::size_t c = idx(s);
        const std::size_t n = m_[0][c] + m_[1][c] + m_[2][c];
        return n ? static_cast<double>(m_[c][c]) / static_cast<double>(n) : 0.0;
    }
    double f1(ChannelState s) const {
        const double p = precision(s), r = recall(s);
        return p + r > 0 ? 2 * p * r / (p + r) : 0.0;
    }
    double macro_precision() const { return macro(&Confusion::precision); }
    double macro_recall() const { return macro(&Confusion::recall); }
    double macro_f1() const { return macro(&Confusion::f1); }

private:
    static std::size_t idx(ChannelState s) { return static_cast<std::size_t>(s); }
    double macro(double (Confusion::*f)(ChannelState) const) const {
        return ((this->*f)(ChannelState::Noise) + (this->*f)(ChannelState::Single) + (this->*f)(ChannelState::Collision)) / 3.0;
    }
    std::array<std::array<std::size_t, 3>, 3> m_{};
};

inline constexpr std::array<ChannelState, 3> kAllChannelStates = {ChannelState::Noise, ChannelState::Single, ChannelState::Collision};

inline Confusion classify_examples(PhaseNet<float>& net, std::span<const LabeledExample> examples) {
    std::vector<InputTensor> tensors;
    tensors.reserve(examples.size());
    for (const auto& e : examples) tensors.push_back(e.tensor);
    const auto outs = net.infer(tensors, 128);
    Confusion c;
    for (std::size_t i = 0; i < examples.size(); ++i) c.add(label_channel_state(examples[i]), classify(indicators(outs[i])));
    return c;
}

inline void add_scenario(Confusion& c, const Scenario& sc, std::span<const NetOutput> outs) {
    for (std::size_t b = 0; b < sc.n_blocks(); ++b) c.add(truth_channel_state(sc.truth[b].state), classify(indicators(outs[b])));
}

/// Matrix rows are truth, columns prediction, followed by summary metrics.
inline std::string confusion_csv(const Confusion& c) {
    std::ostringstream o;
    o << "truth,pred_noise,pred_single,pred_collision\n";
    for (ChannelState t : kAllChannelStates) {
        o << to_string(t);
        for (ChannelState p : kAllChannelStates) o << ',' << c.count(t, p);
        o << '\n';
    }
    char buf[256];
    std::snprintf(buf, sizeof buf, "\nmetric,value\naccuracy,%.6f\nmacro_precision,%.6f\nmacro_recall,%.6f\nmacro_f1,%.6f\n",
                  c.accuracy(), c.macro_precision(), c.macro_recall(), c.macro_f1());
    o << buf;
    for (ChannelState s : kAllChannelStates) {
        std::snprintf(buf, sizeof buf, "recall_%s,%.6f\nprecision_%s,%.6f\n", to_string(s), c.recall(s), to_string(s),
                      c.precision(s));
        o << buf;
    }
    return o.str();
}

// ---------------------------------------------------------------- BER sweeps

enum class CancelMode { NoCancel, OracleCancel, CnnCancel };

inline std::string to_string(CancelMode m) {
    switch (m) {
        case CancelMode::NoCancel: return "no_cancel";
        case CancelMode::OracleCancel: return "oracle_cancel";
        case CancelMode::CnnCancel: return "cnn_cancel";
    }
    return "?";
}

inline CancelMode parse_mode(const std::string& s) {
    if (s == "no_cancel") return CancelMode::NoCancel;
    if (s == "oracle_cancel") return CancelMode::OracleCancel;
    if (s == "cnn_cancel") return CancelMode::CnnCancel;
    throw UsageError("unknown mode '" + s + "' (expected no_cancel, oracle_cancel or cnn_cancel)");
}

struct SweepSpec {
    std::vector<ModScheme> schemes{ModScheme::DBPSK};
    std::vector<double> sjr_db{-10.0};
    std::vector<double> sep_rad{2 * kPi / 3};
    std::vector<double> lambdas{0.01};
    std::vector<CancelMode> modes{CancelMode::NoCancel, CancelMode::OracleCancel, CancelMode::CnnCancel};
    double snr_db = 20.0;
    double a_j = 1.0;
    std::uint64_t bits_per_point = 100000;
    std::uint64_t seed = 1;
    SmoothingMode smoothing = SmoothingMode::Phasor;
    JammerWaveform jammer_waveform = GaussianWaveform{};
    int payload_bytes = 1000;
    int n_packets = 8;
    int warmup_blocks = 32;
    int gap_blocks = 2;

    void validate() const {
        auto bad = [](const std::string& f, const std::string& why) { throw UsageError("sweep field '" + f + "': " + why); };
        if (schemes.empty()) bad("schemes", "empty");
        if (sjr_db.empty()) bad("sjr_db", "empty");
        if (sep_rad.empty()) bad("sep_rad", "empty");
        if (lambdas.empty()) bad("lambdas", "empty");
        if (modes.empty()) bad("modes", "empty");
        if (bits_per_point < 1) bad("bits_per_point", "must be >= 1");
        if (n_packets < 1) bad("n_packets", "must be >= 1");
        for (double l : lambdas)
            if (!(l > 0 && l <= 1)) bad("lambdas", "values must lie in (0, 1]");
        for (double s : sep_rad)
            if (!(s >= 0 && s <= kPi)) bad("sep_rad", "values must lie in [0, pi]");
    }

    bool needs_network() const { return std::find(modes.begin(), modes.end(), CancelMode::CnnCancel) != modes.end(); }
};

/// Rows flagged low_confidence counted fewer than kMinErrors errors; their BER is a bound, not an estimate.
inline constexpr std::uint64_t kMinErrors = 10;

struct ResultRow {
    ModScheme scheme = ModScheme::DBPSK;
    double sjr_db = 0, sep_rad = 0, lambda = 0;
    CancelMode mode = CancelMode::NoCancel;
    double ber = 0;
    std::uint64_t bits_counted = 0, errors_counted = 0;

    bool low_confidence() const { return errors_counted < kMinErrors; }
    auto key() const { return std::make_tuple(static_cast<int>(scheme), sep_rad, static_cast<int>(mode), lambda, sjr_db); }
};

struct BitCount {
    std::uint64_t bits = 0, errors = 0;
    BitCount& operator+=(const BitCount& o) {
        bits += o.bits;
        errors += o.errors;
        return *this;
    }
};

/// Payload bit errors of every packet, demodulated with genie timing from the stream `out`.
inline BitCount count_payload_errors(const Scenario& sc, std::span<const IqSample> out) {
    BitCount c;
    const std::size_t off = payload_bit_offset(sc.config.scheme);
    for (const auto& p : sc.packets) {
        const Bits rx = demodulate(out.subspan(p.start_sample, p.n_samples), sc.config.scheme);
        c.bits += p.payload.size();
        c.errors += count_bit_errors(p.payload, std::span<const std::uint8_t>(rx).subspan(off, p.payload.size()));
    }
    return c;
}

/// Seed for one scenario of one grid point. Modes and lambdas share scenarios so that their
/// comparison is not diluted by channel draws.
inline std::uint64_t point_seed(std::uint64_t seed, ModScheme scheme, double sjr, double sep, std::uint64_t k) {
    std::uint64_t h = splitmix64(seed);
    h = splitmix64(h ^ static_cast<std::uint64_t>(scheme));
    h = splitmix64(h ^ std::bit_cast<std::uint64_t>(sjr));
    h = splitmix64(h ^ std::bit_cast<std::uint64_t>(sep));
    return splitmix64(h ^ k);
}

inline ScenarioConfig sweep_scenario(const SweepSpec& spec, ModScheme scheme, double sjr, double sep, std::uint64_t seed) {
    ScenarioConfig c;
    c.scheme = scheme;
    c.sjr_db = sjr;
    c.snr_db = spec.snr_db;
    c.sep_rad = sep;
    c.a_j = spec.a_j;
    c.jammer_waveform = spec.jammer_waveform;
    c.seed = seed;
    c.n_packets = spec.n_packets;
    c.payload_bytes = spec.payload_bytes;
    c.warmup_blocks = spec.warmup_blocks;
    c.gap_blocks = spec.gap_blocks;
    return c;
}

inline std::size_t scenarios_needed(const SweepSpec& spec) {
    const std::uint64_t per = static_cast<std::uint64_t>(spec.n_packets) * static_cast<std::uint64_t>(spec.payload_bytes) * 8;
    return static_cast<std::size_t>((spec.bits_per_point + per - 1) / per);
}

inline CancellerConfig canceller_for(const SweepSpec& spec, ModScheme scheme, double lambda) {
    CancellerConfig c;
    c.lambda = lambda;
    c.smoothing = spec.smoothing;
    c.scheme = scheme;
    return c;
}

/// Output stream of one scenario under one mode.
inline IqVector mode_output(const Scenario& sc, CancelMode mode, const CancellerConfig& cfg, std::span<const NetOutput> net_out) {
    switch (mode) {
        case CancelMode::NoCancel: return sc.r1;
        case CancelMode::OracleCancel: return cancel(sc.r1, sc.r2, sc.gains.a_j(), sc.gains.delta_phi_j());
        case CancelMode::CnnCancel: return run_canceller(sc.r1, sc.r2, net_out, sc.block_len(), cfg).output;
    }
    return {};
}

/// All lambda x mode rows of one (scheme, SJR, separation) point.
inline std::vector<ResultRow> run_point(const SweepSpec& spec, ModScheme scheme, double sjr, double sep, PhaseNet<float>* net) {
    const std::size_t n_sc = scenarios_needed(spec);
    std::map<std::pair<double, int>, BitCount> acc;
    for (std::size_t k = 0; k < n_sc; ++k) {
        const Scenario sc = build_scenario(sweep_scenario(spec, scheme, sjr, sep, point_seed(spec.seed, scheme, sjr, sep, k)));
        std::vector<NetOutput> outs;
        if (spec.needs_network()) outs = network_outputs(*net, sc.r1, sc.r2);
        for (CancelMode mode : spec.modes) {
            // Only the network-driven mode depends on lambda.
            std::optional<BitCount> shared;
            for (double lambda : spec.lambdas) {
                if (mode != CancelMode::CnnCancel && shared) {
                    acc[{lambda, static_cast<int>(mode)}] += *shared;
                    continue;
                }
                const BitCount c = count_payload_errors(sc, mode_output(sc, mode, canceller_for(spec, scheme, lambda), outs));
                acc[{lambda, static_cast<int>(mode)}] += c;
                shared = c;
            }
        }
    }
    std::vector<ResultRow> rows;
    for (const auto& [key, c] : acc) {
        ResultRow r;
        r.scheme = scheme;
        r.sjr_db = sjr;
        r.sep_rad = sep;
        r.lambda = key.first;
        r.mode = static_cast<CancelMode>(key.second);
        r.bits_counted = c.bits;
        r.errors_counted = c.errors;
        r.ber = static_cast<double>(c.errors) / static_cast<double>(c.bits);
        rows.push_back(r);
    }
    return rows;
}

/// Worker count: JC_THREADS if set, else hardware concurrency.
inline std::size_t worker_threads() {
    std::size_t n = std::max(1u, std::thread::hardware_concurrency());
    if (const char* env = std::getenv("JC_THREADS")) {
        const long v = std::strtol(env, nullptr, 10);
        if (v >= 1) n = static_cast<std::size_t>(v);
    }
    return n;
}

/// Runs `n` independent jobs on up to `threads` workers. The first exception is rethrown.
inline void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t job, std::size_t worker)>& fn) {
    threads = std::max<std::size_t>(1, std::min(threads, n));
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::mutex error_mu;
    auto work = [&](std::size_t worker) {
        for (std::size_t j; (j = next.fetch_add(1)) < n;) {
            try {
                fn(j, worker);
            } catch (...) {
                std::lock_guard lock(error_mu);
                if (!error) error = std::current_exception();
                next = n;
            }
        }
    };
    if (threads == 1) {
        work(0);
    } else {
        std::vector<std::thread> pool;
        for (std::size_t w = 0; w < threads; ++w) pool.emplace_back(work, w);
        for (auto& t : pool) t.join();
    }
    if (error) std::rethrow_exception(error);
}

/// Full grid. Each worker owns a copy of the network; rows come back sorted.
inline std::vector<ResultRow> run_sweep(const SweepSpec& spec, const PhaseNet<float>* net, std::size_t threads = worker_threads()) {
    spec.validate();
    if (spec.needs_network() && !net) throw UsageError("cnn_cancel mode needs trained weights");
    struct Job {
        ModScheme scheme;
        double sjr, sep;
    };
    std::vector<Job> jobs;
    for (ModScheme s : spec.schemes)
        for (double sep : spec.sep_rad)
            for (double sjr : spec.sjr_db) jobs.push_back({s, sjr, sep});
    threads = std::max<std::size_t>(1, std::min(threads, jobs.size()));
    std::vector<std::optional<PhaseNet<float>>> nets(threads);
    if (net)
        for (auto& n : nets) n.emplace(*net);
    std::vector<std::vector<ResultRow>> results(jobs.size());
    parallel_for(jobs.size(), threads, [&](std::size_t j, std::size_t w) {
        results[j] = run_point(spec, jobs[j].scheme, jobs[j].sjr, jobs[j].sep, nets[w] ? &*nets[w] : nullptr);
    });
    std::vector<ResultRow> rows;
    for (auto& r : results) rows.insert(rows.end(), r.begin(), r.end());
    std::sort(rows.begin(), rows.end(), [](const ResultRow& a, const ResultRow& b) { return a.key() < b.key(); });
    return rows;
}

inline std::string results_csv(std::span<const ResultRow> rows) {
    std::ostringstream o;
    o << "scheme,sjr_db,sep_rad,lambda,mode,ber,bits_counted,errors_counted,low_confidence\n";
    char buf[256];
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof buf, "%s,%.6g,%.9g,%.6g,%s,%.9g,%llu,%llu,%d\n", to_string(r.scheme).c_str(), r.sjr_db, r.sep_rad,
                      r.lambda, to_string(r.mode).c_str(), r.ber, static_cast<unsigned long long>(r.bits_counted),
                      static_cast<unsigned long long>(r.errors_counted), r.low_confidence() ? 1 : 0);
        o << buf;
    }
    return o.str();
}

/// Lowest SJR from which BER stays at or below `target` for every higher SJR, interpolated in
/// log10(BER) against the preceding point. nullopt when the highest SJR already misses the target;
/// the lowest SJR when every point meets it.
inline std::optional<double> sjr_crossing(std::vector<std::pair<double, double>> sjr_ber, double target) {
    std::sort(sjr_ber.begin(), sjr_ber.end());
    if (sjr_ber.empty() || sjr_ber.back().second > target) return std::nullopt;
    std::size_t i = sjr_ber.size() - 1;
    while (i > 0 && sjr_ber[i - 1].second <= target) --i;
    if (i == 0) return sjr_ber.front().first;
    const auto [x0, b0] = sjr_ber[i - 1];
    const auto [x1, b1] = sjr_ber[i];
    const double floor = 1e-12;
    const double l0 = std::log10(std::max(b0, floor)), l1 = std::log10(std::max(b1, floor)), lt = std::log10(target);
    return x0 + (x1 - x0) * (l0 - lt) / (l0 - l1);
}

// ---------------------------------------------------------------- smoothing study

struct SmoothingSpec {
    ModScheme scheme = ModScheme::DBPSK;
    double sep_rad = kPi / 2;
    double sjr_db = -10.0;
    double snr_db = 20.0;
    std::vector<double> lambdas{1.0, 0.1, 0.01, 0.001};
    std::uint64_t bits_per_point = 200000;
    std::uint64_t seed = 1;
    int payload_bytes = 1000;
    int n_packets = 8;
    int warmup_blocks = 32;
};

struct SmoothingRow {
    double lambda = 0;
    double energy_variance = 0;  // mean over scenarios of var(E_b) / mean(E_b)^2 on cancelled blocks
    double ber = 0;
    std::uint64_t bits_counted = 0, errors_counted = 0;
};

struct SmoothingResult {
    std::vector<SmoothingRow> rows;
    std::vector<std::vector<double>> traces;  // per lambda: block energies of the first scenario
};

inline SmoothingResult run_smoothing_study(const SmoothingSpec& spec, PhaseNet<float>& net) {
    SweepSpec sw;
    sw.schemes = {spec.scheme};
    sw.sjr_db = {spec.sjr_db};
    sw.sep_rad = {spec.sep_rad};
    sw.lambdas = spec.lambdas;
    sw.modes = {CancelMode::CnnCancel};
    sw.snr_db = spec.snr_db;
    sw.bits_per_point = spec.bits_per_point;
    sw.seed = spec.seed;
    sw.payload_bytes = spec.payload_bytes;
    sw.n_packets = spec.n_packets;
    sw.warmup_blocks = spec.warmup_blocks;
    sw.validate();

    const std::size_t n_sc = scenarios_needed(sw);
    SmoothingResult res;
    res.rows.resize(spec.lambdas.size());
    res.traces.resize(spec.lambdas.size());
    std::vector<double> var_sum(spec.lambdas.size(), 0.0);
    std::vector<BitCount> bits(spec.lambdas.size());
    for (std::size_t k = 0; k < n_sc; ++k) {
        const Scenario sc = build_scenario(sweep_scenario(sw, spec.scheme, spec.sjr_db, spec.sep_rad,
                                                          point_seed(spec.seed, spec.scheme, spec.sjr_db, spec.sep_rad, k)));
        const auto outs = network_outputs(net, sc.r1, sc.r2);
        for (std::size_t li = 0; li < spec.lambdas.size(); ++li) {
            const StreamResult sr = run_canceller(sc.r1, sc.r2, outs, sc.block_len(), canceller_for(sw, spec.scheme, spec.lambdas[li]));
            bits[li] += count_payload_errors(sc, sr.output);
            std::vector<double> e;
            for (std::size_t b = 0; b < sc.n_blocks(); ++b) {
                const double eb = measure_power(std::span<const IqSample>(sr.output).subspan(b * sc.block_len(), sc.block_len()));
                if (k == 0) res.traces[li].push_back(eb);
                if (sr.diagnostics[b].action == Action::Cancelled) e.push_back(eb);
            }
            if (e.size() >= 2) {
                double mean = 0, var = 0;
                for (double x : e) mean += x;
                mean /= static_cast<double>(e.size());
                for (double x : e) var += (x - mean) * (x - mean);
                var /= static_cast<double>(e.size());
                var_sum[li] += var / (mean * mean);
            }
        }
    }
    for (std::size_t li = 0; li < spec.lambdas.size(); ++li) {
        auto& r = res.rows[li];
        r.lambda = spec.lambdas[li];
        r.energy_variance = var_sum[li] / static_cast<double>(n_sc);
        r.bits_counted = bits[li].bits;
        r.errors_counted = bits[li].errors;
        r.ber = static_cast<double>(bits[li].errors) / static_cast<double>(bits[li].bits);
    }
    return res;
}

inline std::string smoothing_csv(const SmoothingResult& r) {
    std::ostringstream o;
    o << "lambda,energy_variance,ber,bits_counted,errors_counted\n";
    char buf[192];
    for (const auto& row : r.rows) {
        std::snprintf(buf, sizeof buf, "%.6g,%.9g,%.9g,%llu,%llu\n", row.lambda, row.energy_variance, row.ber,
                      static_cast<unsigned long long>(row.bits_counted), static_cast<unsigned long long>(row.errors_counted));
        o << buf;
    }
    return o.str();
}

inline std::string smoothing_traces_csv(const SmoothingSpec& spec, const SmoothingResult& r) {
    std::ostringstream o;
    o << "lambda,block,energy\n";
    char buf[128];
    for (std::size_t li = 0; li < r.traces.size(); ++li)
        for (std::size_t b = 0; b < r.traces[li].size(); ++b) {
            std::snprintf(buf, sizeof buf, "%.6g,%zu,%.9g\n", spec.lambdas[li], b, r.traces[li][b]);
            o << buf;
        }
    return o.str();
}

/// Energy variance ordering expected of smoothing: each smaller lambda in {1, 0.1, 0.01} is
/// strictly steadier, and 0.001 is within 10% of 0.01. Returns failure messages.
inline std::vector<std::string> check_smoothing_ordering(const SmoothingResult& r) {
    auto find = [&](double l) -> const SmoothingRow* {
        for (const auto& row : r.rows)
            if (std::abs(row.lambda - l) < 1e-12) return &row;
        return nullptr;
    };
    std::vector<std::string> fails;
    const SmoothingRow *a = find(1.0), *b = find(0.1), *c = find(0.01), *d = find(0.001);
    if (!a || !b || !c || !d) return {"smoothing ordering needs lambdas 1, 0.1, 0.01 and 0.001"};
    if (!(c->energy_variance < b->energy_variance)) fails.push_back("energy variance(0.01) is not below variance(0.1)");
    if (!(b->energy_variance < a->energy_variance)) fails.push_back("energy variance(0.1) is not below variance(1)");
    if (std::abs(d->energy_variance - c->energy_variance) > 0.1 * c->energy_variance)
        fails.push_back("energy variance(0.001) differs from variance(0.01) by more than 10%");
    if (!(c->ber <= b->ber && b->ber <= a->ber)) fails.push_back("BER does not improve from lambda 1 to 0.1 to 0.01");
    return fails;
}

// ---------------------------------------------------------------- amplitude ratio

/// One synthetic sender-first collision: a sender-only block sets E_S, then the jammer joins.
/// Returns the relative error of the estimated amplitude ratio.
inline double amplitude_ratio_trial(Rng& rng, double a_j, double snr_db, double sjr_db, std::size_t block_len = kDefaultBlockLen) {
    const ChannelGains g = make_gains(rng.uniform(kPi / 6, kPi), a_j, rng);
    const double noise = std::norm(g.h_s1()) / std::pow(10.0, snr_db / 10.0);
    const double pj = std::norm(g.h_s1()) / std::norm(g.h_j1()) * std::pow(10.0, -sjr_db / 10.0);
    const IqVector s1 = random_symbols(block_len, ModScheme::DQPSK, rng);
    const auto pre = apply_channel(&s1, nullptr, g, noise, rng);
    const PowerPair e_s{measure_power(pre.r1), measure_power(pre.r2)};
    const IqVector s2 = random_symbols(block_len, ModScheme::DQPSK, rng);
    const IqVector j = complex_noise(block_len, pj, rng);
    const auto col = apply_channel(&s2, &j, g, noise, rng);
    const RatioEstimate r = estimate_amplitude_ratio({measure_power(col.r1), measure_power(col.r2)}, e_s, std::nullopt, {1, 0}, 0, std::nullopt);
    return std::abs(r.a_j - a_j) / a_j;
}

}  // namespace jamcancel
