#pragma once

// Labeled training data: per-emitter captures labeled by cross-correlation against the known
// transmitted samples, random antenna-2 rotation, collision synthesis by summation, and the
// on-disk dataset file.
//
// Dataset file (little-endian):
//   "JCDS" | version u16 | M u32 | count u64
//   count x { float32 tensor[2][M][2] | float32 phi_1 | float32 phi_2 | u8 ind_1 | u8 ind_2 }

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "jamcancel/binio.hpp"
#include "jamcancel/channel.hpp"
#include "jamcancel/iq_core.hpp"
#include "jamcancel/modem.hpp"

namespace jamcancel {

/// 2 (I/Q row) x M (sample) x 2 (antenna) real tensor, row-major.
class InputTensor {
public:
    InputTensor() = default;

    std::size_t m() const { return m_; }
    float at(int row, std::size_t sample, int antenna) const { return data_[index(row, sample, antenna)]; }
    const std::vector<float>& values() const { return data_; }

    bool operator==(const InputTensor&) const = default;

    friend InputTensor build_input_tensor(const IqBlock& block1, const IqBlock& block2);
    friend InputTensor tensor_from_values(std::size_t m, std::vector<float> values);

private:
    std::size_t index(int row, std::size_t sample, int antenna) const {
        return (static_cast<std::size_t>(row) * m_ + sample) * 2 + static_cast<std::size_t>(antenna);
    }
    std::size_t m_ = 0;
    std::vector<float> data_;
};

/// tensor[0][m][a] = I of sample m at antenna a+1, tensor[1][m][a] = Q.
inline InputTensor build_input_tensor(const IqBlock& block1, const IqBlock& block2) {
    if (block1.size() != block2.size()) throw UsageError("build_input_tensor: block length mismatch");
    if (block1.size() == 0) throw UsageError("build_input_tensor: empty blocks");
    if (block1.antenna() != 1 || block2.antenna() != 2) throw UsageError("build_input_tensor: expected antenna 1 then antenna 2");
    InputTensor t;
    t.m_ = block1.size();
    t.data_.resize(4 * t.m_);
    const auto s1 = block1.samples();
    const auto s2 = block2.samples();
    for (std::size_t m = 0; m < t.m_; ++m) {
        t.data_[t.index(0, m, 0)] = static_cast<float>(s1[m].real());
        t.data_[t.index(1, m, 0)] = static_cast<float>(s1[m].imag());
        t.data_[t.index(0, m, 1)] = static_cast<float>(s2[m].real());
        t.data_[t.index(1, m, 1)] = static_cast<float>(s2[m].imag());
    }
    return t;
}

inline InputTensor tensor_from_values(std::size_t m, std::vector<float> values) {
    if (values.size() != 4 * m) throw FormatError("tensor: expected " + std::to_string(4 * m) + " values");
    InputTensor t;
    t.m_ = m;
    t.data_ = std::move(values);
    return t;
}

inline std::array<IqBlock, 2> tensor_to_blocks(const InputTensor& t) {
    IqVector a(t.m()), b(t.m());
    for (std::size_t m = 0; m < t.m(); ++m) {
        a[m] = {t.at(0, m, 0), t.at(1, m, 0)};
        b[m] = {t.at(0, m, 1), t.at(1, m, 1)};
    }
    return {IqBlock(std::move(a), 1), IqBlock(std::move(b), 2)};
}

struct LabeledExample {
    InputTensor tensor;
    float phi_1 = 0.0f;
    float phi_2 = 0.0f;
    std::uint8_t ind_1 = 0;
    std::uint8_t ind_2 = 0;

    bool operator==(const LabeledExample&) const = default;
};

enum class ExampleClass { Noise, Single, Collision };

inline ExampleClass class_of(const LabeledExample& e) {
    const int n = e.ind_1 + e.ind_2;
    return n == 0 ? ExampleClass::Noise : (n == 1 ? ExampleClass::Single : ExampleClass::Collision);
}

class LabelingError : public std::runtime_error {
public:
    explicit LabelingError(const std::string& what) : std::runtime_error(what) {}
};

inline constexpr double kLabelConfidence = 0.5;

/// wrap(phi_1 - phi_2), each phi_i the argument of antenna i's correlation peak against the first
/// chunk_len reference samples. A normalized peak below `min_confidence` discards the chunk.
inline Phase label_phase_shift(std::span<const IqSample> rx1, std::span<const IqSample> rx2,
                               std::span<const IqSample> reference, std::size_t chunk_len,
                               double min_confidence = kLabelConfidence) {
    if (reference.empty() || chunk_len == 0) throw UsageError("label_phase_shift: empty reference");
    const auto ref = reference.first(std::min(chunk_len, reference.size()));
    double e_ref = 0.0;
    for (const auto& r : ref) e_ref += std::norm(r);
    auto peak_phase = [&](std::span<const IqSample> rx) {
        const CorrelationPeak p = cross_correlate(rx, ref);
        const double e_win = std::max(measure_power(rx.subspan(p.lag, ref.size())) * static_cast<double>(ref.size()), 1e-300);
        const double score = p.magnitude / std::sqrt(e_ref * e_win);
        if (!(score >= min_confidence))
            throw LabelingError("label_phase_shift: correlation peak below confidence (" + std::to_string(score) + ")");
        return p.phase;
    };
    return peak_phase(rx1) - peak_phase(rx2);
}

/// Two-antenna recording of one emitter (or a synthesized collision).
struct CapturePair {
    IqVector r1, r2;
};

/// Rotates antenna 2 by -theta, which raises the phase shift phi_1 - phi_2 by theta.
inline std::pair<CapturePair, Phase> augment_rotation(const CapturePair& cap, Phase label, Phase theta) {
    CapturePair out{cap.r1, rotate(cap.r2, -theta)};
    return {std::move(out), label + theta};
}

inline std::pair<CapturePair, Phase> augment_rotation(const CapturePair& cap, Phase label, Rng& rng) {
    return augment_rotation(cap, label, Phase(rng.uniform(-kPi, kPi)));
}

struct CollisionCapture {
    CapturePair capture;
    float phi_1 = 0.0f, phi_2 = 0.0f;  // sorted ascending
};

/// Per-antenna elementwise sum; the two phase shifts become the sorted label pair.
inline CollisionCapture synthesize_collision(const CapturePair& a, Phase label_a, const CapturePair& b, Phase label_b) {
    if (a.r1.size() != b.r1.size() || a.r2.size() != b.r2.size() || a.r1.size() != a.r2.size())
        throw UsageError("synthesize_collision: capture length mismatch");
    CollisionCapture out;
    out.capture.r1.resize(a.r1.size());
    out.capture.r2.resize(a.r2.size());
    for (std::size_t t = 0; t < a.r1.size(); ++t) {
        out.capture.r1[t] = a.r1[t] + b.r1[t];
        out.capture.r2[t] = a.r2[t] + b.r2[t];
    }
    const float x = static_cast<float>(label_a.radians());
    const float y = static_cast<float>(label_b.radians());
    out.phi_1 = std::min(x, y);
    out.phi_2 = std::max(x, y);
    return out;
}

struct DatasetConfig {
    int block_len = kDefaultBlockLen;
    int chunk_len = 1024;
    int max_lag = 16;  // random capture delay searched by the correlator
    int n_noise = 20000;
    int n_single = 20000;
    int n_collision = 20000;
    double snr_db = 20.0;        // unit-power sender over per-antenna noise
    double jam_db_min = -5.0;    // jammer power relative to the sender, dB
    double jam_db_max = 22.0;
    double sender_ratio_db = 2.0;  // |h_1|/|h_2| spread for the sender, +/- dB
    double jammer_ratio_db = 6.0;
    bool augment = true;
    std::uint64_t seed = 7;

    void validate() const {
        auto bad = [](const std::string& f, const std::string& why) { throw UsageError("config field '" + f + "': " + why); };
        if (block_len < 4) bad("block_len", "must be >= 4");
        if (chunk_len < block_len) bad("chunk_len", "must be >= block_len");
        if (max_lag < 0) bad("max_lag", "must be >= 0");
        if (n_noise < 0 || n_single < 0 || n_collision < 0) bad("n_noise/n_single/n_collision", "must be >= 0");
        if (jam_db_min > jam_db_max) bad("jam_db_min", "must not exceed jam_db_max");
        if (sender_ratio_db < 0 || jammer_ratio_db < 0) bad("*_ratio_db", "must be >= 0");
    }
};

struct DatasetSplit {
    std::vector<LabeledExample> train, val, test;
    std::vector<std::string> warnings;
};

struct SplitCounts {
    std::size_t train, val, test;
};

/// 0.64 / 0.16 / 0.20 by rounding; the test split takes the remainder.
inline SplitCounts split_counts(std::size_t n) {
    const std::size_t train = static_cast<std::size_t>(std::llround(0.64 * static_cast<double>(n)));
    const std::size_t val = std::min(n - train, static_cast<std::size_t>(std::llround(0.16 * static_cast<double>(n))));
    return {train, val, n - train - val};
}

inline DatasetSplit split_examples(std::vector<LabeledExample> all) {
    const SplitCounts c = split_counts(all.size());
    DatasetSplit s;
    auto it = std::make_move_iterator(all.begin());
    s.train.assign(it, it + static_cast<std::ptrdiff_t>(c.train));
    s.val.assign(it + static_cast<std::ptrdiff_t>(c.train), it + static_cast<std::ptrdiff_t>(c.train + c.val));
    s.test.assign(it + static_cast<std::ptrdiff_t>(c.train + c.val), std::make_move_iterator(all.end()));
    return s;
}

namespace detail {

struct EmitterBlock {
    CapturePair block;  // M samples per antenna
    Phase label;
    Phase truth;  // phase shift of the injected gains, after augmentation
};

/// Records one emitter through random gains, labels the chunk by correlation, augments, and
/// cuts one block out of the aligned region.
inline EmitterBlock record_emitter(const IqVector& reference, double power, double ratio_db, double noise_power,
                                   const DatasetConfig& cfg, Rng& rng) {
    const std::size_t L = reference.size();
    const std::size_t lag_span = static_cast<std::size_t>(cfg.max_lag);
    const std::size_t delay = lag_span > 0 ? rng.uniform_index(lag_span) : 0;
    const double ratio = std::pow(10.0, rng.uniform(-ratio_db, ratio_db) / 20.0);
    const double amp = std::sqrt(power);
    const IqSample h1 = std::polar(amp * std::sqrt(ratio), rng.uniform(-kPi, kPi));
    const IqSample h2 = std::polar(amp / std::sqrt(ratio), rng.uniform(-kPi, kPi));
    CapturePair cap{IqVector(L + lag_span), IqVector(L + lag_span)};
    for (std::size_t t = 0; t < L; ++t) {
        cap.r1[t + delay] = h1 * reference[t];
        cap.r2[t + delay] = h2 * reference[t];
    }
    for (std::size_t t = 0; t < cap.r1.size(); ++t) {
        cap.r1[t] += rng.complex_gaussian(noise_power);
        cap.r2[t] += rng.complex_gaussian(noise_power);
    }
    Phase label = label_phase_shift(cap.r1, cap.r2, reference, static_cast<std::size_t>(cfg.chunk_len));
    Phase truth(std::arg(h1) - std::arg(h2));
    if (cfg.augment) {
        const Phase theta(rng.uniform(-kPi, kPi));
        auto [aug, new_label] = augment_rotation(cap, label, theta);
        cap = std::move(aug);
        label = new_label;
        truth = truth + theta;
    }
    const std::size_t M = static_cast<std::size_t>(cfg.block_len);
    const std::size_t n_blocks = L / M;
    const std::size_t start = delay + M * rng.uniform_index(n_blocks);
    EmitterBlock out{{IqVector(cap.r1.begin() + static_cast<std::ptrdiff_t>(start), cap.r1.begin() + static_cast<std::ptrdiff_t>(start + M)),
                      IqVector(cap.r2.begin() + static_cast<std::ptrdiff_t>(start), cap.r2.begin() + static_cast<std::ptrdiff_t>(start + M))},
                     label, truth};
    return out;
}

inline IqVector emitter_reference(std::size_t len, bool jammer, Rng& rng) {
    // Senders use one of the four schemes; jammers add Gaussian noise as a fifth waveform.
    const std::uint64_t pick = rng.uniform_index(jammer ? 5 : 4);
    if (pick == 4) return complex_noise(len, 1.0, rng);
    return random_symbols(len, kAllSchemes[pick], rng);
}

inline LabeledExample to_example(const CapturePair& block, float phi1, float phi2, std::uint8_t i1, std::uint8_t i2) {
    LabeledExample ex;
    ex.tensor = build_input_tensor(IqBlock(block.r1, 1), IqBlock(block.r2, 2));
    ex.phi_1 = phi1;
    ex.phi_2 = phi2;
    ex.ind_1 = i1;
    ex.ind_2 = i2;
    return ex;
}

}  // namespace detail

/// Noise, single-emitter and collision examples in the configured mix, shuffled and split.
/// A lone emitter fills slot 1; masked slots carry phase 0 with indicator 0.
inline DatasetSplit assemble_dataset(const DatasetConfig& cfg, Rng& rng) {
    cfg.validate();
    DatasetSplit split;
    if (cfg.n_noise == 0) split.warnings.push_back("class 'noise' has zero examples");
    if (cfg.n_single == 0) split.warnings.push_back("class 'single' has zero examples");
    if (cfg.n_collision == 0) split.warnings.push_back("class 'collision' has zero examples");

    const std::size_t M = static_cast<std::size_t>(cfg.block_len);
    const std::size_t L = static_cast<std::size_t>(cfg.chunk_len) / M * M;
    const double noise_power = std::pow(10.0, -cfg.snr_db / 10.0);

    std::vector<LabeledExample> all;
    all.reserve(static_cast<std::size_t>(cfg.n_noise + cfg.n_single + cfg.n_collision));

    auto jammer_power = [&](Rng& r) { return std::pow(10.0, r.uniform(cfg.jam_db_min, cfg.jam_db_max) / 10.0); };
    auto emitter = [&](bool jammer, Rng& r, double noise) {
        for (int attempt = 0;; ++attempt) {
            try {
                const IqVector ref = detail::emitter_reference(L, jammer, r);
                const double p = jammer ? jammer_power(r) : 1.0;
                return detail::record_emitter(ref, p, jammer ? cfg.jammer_ratio_db : cfg.sender_ratio_db, noise, cfg, r);
            } catch (const LabelingError&) {
                if (attempt > 16) throw;
            }
        }
    };

    Rng noise_rng = rng.fork(11), single_rng = rng.fork(12), coll_rng = rng.fork(13), order_rng = rng.fork(14);
    for (int i = 0; i < cfg.n_noise; ++i) {
        CapturePair c{complex_noise(M, noise_power, noise_rng), complex_noise(M, noise_power, noise_rng)};
        all.push_back(detail::to_example(c, 0.0f, 0.0f, 0, 0));
    }
    for (int i = 0; i < cfg.n_single; ++i) {
        const bool jammer = single_rng.bit() != 0;
        const auto e = emitter(jammer, single_rng, noise_power);
        all.push_back(detail::to_example(e.block, static_cast<float>(e.label.radians()), 0.0f, 1, 0));
    }
    for (int i = 0; i < cfg.n_collision; ++i) {
        // Each recording carries half the receiver noise so the sum sits at one noise floor.
        const auto s = emitter(false, coll_rng, noise_power / 2.0);
        const auto j = emitter(true, coll_rng, noise_power / 2.0);
        const CollisionCapture c = synthesize_collision(s.block, s.label, j.block, j.label);
        all.push_back(detail::to_example(c.capture, c.phi_1, c.phi_2, 1, 1));
    }
    order_rng.shuffle(all);
    DatasetSplit s = split_examples(std::move(all));
    s.warnings = std::move(split.warnings);
    return s;
}

inline constexpr std::uint16_t kDatasetVersion = 1;

inline void write_dataset(const std::string& path, std::size_t m, const std::vector<LabeledExample>& examples) {
    binio::Writer w;
    w.magic("JCDS");
    w.u16(kDatasetVersion);
    w.u32(static_cast<std::uint32_t>(m));
    w.u64(examples.size());
    for (const auto& e : examples) {
        if (e.tensor.m() != m) throw UsageError("write_dataset: example tensor M does not match file M");
        for (float v : e.tensor.values()) w.f32(v);
        w.f32(e.phi_1);
        w.f32(e.phi_2);
        w.u8(e.ind_1);
        w.u8(e.ind_2);
    }
    w.save(path);
}

inline void write_dataset(const std::string& path, std::size_t m, const DatasetSplit& split) {
    std::vector<LabeledExample> all;
    all.reserve(split.train.size() + split.val.size() + split.test.size());
    all.insert(all.end(), split.train.begin(), split.train.end());
    all.insert(all.end(), split.val.begin(), split.val.end());
    all.insert(all.end(), split.test.begin(), split.test.end());
    write_dataset(path, m, all);
}

struct DatasetFile {
    std::size_t m = 0;
    std::vector<LabeledExample> examples;
};

/// Validates the whole file size before decoding, so a truncated file never yields a partial read.
inline DatasetFile read_dataset(const std::string& path) {
    const auto bytes = binio::load_file(path);
    binio::Reader r(bytes, "dataset '" + path + "'");
    r.expect_magic("JCDS");
    const std::uint16_t version = r.u16();
    if (version != kDatasetVersion) throw FormatError("dataset '" + path + "': unsupported version " + std::to_string(version));
    DatasetFile f;
    f.m = r.u32();
    const std::uint64_t count = r.u64();
    if (f.m == 0) throw FormatError("dataset '" + path + "': M must be positive");
    const std::uint64_t record = 4 * 4 * f.m + 4 + 4 + 1 + 1;
    if (count > 0 && (r.remaining() / record < count || r.remaining() != count * record))
        throw FormatError("dataset '" + path + "': size does not match header count " + std::to_string(count));
    if (count == 0 && r.remaining() != 0) throw FormatError("dataset '" + path + "': trailing bytes");
    f.examples.reserve(count);
    for (std::uint64_t i = 0; i < count; ++i) {
        std::vector<float> v(4 * f.m);
        for (auto& x : v) x = r.f32();
        LabeledExample e;
        e.tensor = tensor_from_values(f.m, std::move(v));
        e.phi_1 = r.f32();
        e.phi_2 = r.f32();
        e.ind_1 = r.u8();
        e.ind_2 = r.u8();
        if (e.ind_1 > 1 || e.ind_2 > 1) throw FormatError("dataset '" + path + "': indicator out of range");
        f.examples.push_back(std::move(e));
    }
    return f;
}

}  // namespace jamcancel
