#pragma once

// Complex-sample primitives shared by the whole pipeline.

#include <cmath>
#include <complex>
#include <cstdint>
#include <limits>
#include <numbers>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "jamcancel/errors.hpp"

namespace jamcancel {

using IqSample = std::complex<double>;
using IqVector = std::vector<IqSample>;

inline constexpr double kPi = std::numbers::pi;
inline constexpr double kTwoPi = 2.0 * std::numbers::pi;
inline constexpr int kDefaultBlockLen = 128;

/// Wraps an angle into [-pi, pi). Values already in range are returned untouched.
inline double wrap_phase(double x) {
    if (x >= -kPi && x < kPi) return x;
    if (!std::isfinite(x)) throw UsageError("wrap_phase: non-finite angle");
    double r = std::remainder(x, kTwoPi);
    if (r >= kPi) r -= kTwoPi;
    if (r < -kPi) r += kTwoPi;
    return r;
}

/// Shortest signed angular distance a - b, wrapped.
inline double phase_diff(double a, double b) { return wrap_phase(a - b); }

/// Absolute circular distance in [0, pi].
inline double circular_distance(double a, double b) { return std::abs(phase_diff(a, b)); }

/// An angle in radians, always stored wrapped into [-pi, pi).
class Phase {
public:
    constexpr Phase() = default;
    explicit Phase(double radians) : rad_(wrap_phase(radians)) {}

    double radians() const { return rad_; }
    IqSample phasor() const { return std::polar(1.0, rad_); }

    Phase operator+(Phase o) const { return Phase(rad_ + o.rad_); }
    Phase operator-(Phase o) const { return Phase(rad_ - o.rad_); }
    Phase operator-() const { return Phase(-rad_); }
    bool operator==(const Phase&) const = default;

private:
    double rad_ = 0.0;
};

/// Fixed-length window of samples from one receive antenna (1 or 2).
class IqBlock {
public:
    IqBlock(IqVector samples, int antenna_id) : samples_(std::move(samples)), antenna_(antenna_id) {
        if (antenna_ != 1 && antenna_ != 2) throw UsageError("IqBlock: antenna_id must be 1 or 2");
    }

    std::span<const IqSample> samples() const { return samples_; }
    std::span<IqSample> samples() { return samples_; }
    std::size_t size() const { return samples_.size(); }
    int antenna() const { return antenna_; }

    bool operator==(const IqBlock&) const = default;

private:
    IqVector samples_;
    int antenna_;
};

/// Splits a stream into consecutive blocks of `block_len`; the stream length must divide evenly.
inline std::vector<IqBlock> to_blocks(std::span<const IqSample> stream, std::size_t block_len, int antenna) {
    if (block_len == 0 || stream.size() % block_len != 0)
        throw UsageError("to_blocks: stream length " + std::to_string(stream.size()) +
                         " is not a multiple of block length " + std::to_string(block_len));
    std::vector<IqBlock> out;
    out.reserve(stream.size() / block_len);
    for (std::size_t i = 0; i < stream.size(); i += block_len)
        out.emplace_back(IqVector(stream.begin() + i, stream.begin() + i + block_len), antenna);
    return out;
}

/// Mean squared magnitude (1/N) sum |x_t|^2.
inline double measure_power(std::span<const IqSample> x) {
    if (x.empty()) throw UsageError("measure_power: empty block");
    double acc = 0.0;
    for (const auto& s : x) acc += std::norm(s);
    return acc / static_cast<double>(x.size());
}

inline double measure_power(const IqBlock& block) { return measure_power(block.samples()); }

inline IqVector rotate(std::span<const IqSample> x, Phase theta) {
    const IqSample w = theta.phasor();
    IqVector out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * w;
    return out;
}

inline IqBlock rotate(const IqBlock& block, Phase theta) {
    return IqBlock(rotate(block.samples(), theta), block.antenna());
}

struct CorrelationPeak {
    std::size_t lag = 0;
    Phase phase;
    double magnitude = 0.0;
};

/// Direct time-domain correlation: picks the lag maximizing |sum received[t+lag] conj(reference[t])|.
/// Ties resolve to the smallest lag.
inline CorrelationPeak cross_correlate(std::span<const IqSample> received, std::span<const IqSample> reference) {
    if (reference.empty()) throw UsageError("cross_correlate: empty reference");
    if (reference.size() > received.size())
        throw UsageError("cross_correlate: reference longer than received sequence");
    CorrelationPeak best;
    double best_mag = -1.0;
    IqSample best_sum{};
    const std::size_t n_lags = received.size() - reference.size() + 1;
    for (std::size_t lag = 0; lag < n_lags; ++lag) {
        IqSample acc{};
        for (std::size_t t = 0; t < reference.size(); ++t) acc += received[t + lag] * std::conj(reference[t]);
        const double mag = std::abs(acc);
        if (mag > best_mag) {
            best_mag = mag;
            best_sum = acc;
            best.lag = lag;
        }
    }
    best.magnitude = best_mag;
    best.phase = Phase(std::arg(best_sum));
    return best;
}

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

/// Seeded random stream. The engine (mt19937_64) is fully specified by the standard; the
/// distributions are implemented here so draws are identical across standard libraries.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : seed_(seed), engine_(splitmix64(seed)) {}

    std::uint64_t seed() const { return seed_; }
    std::uint64_t next_u64() { return engine_(); }

    /// Uniform in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [0, n).
    std::uint64_t uniform_index(std::uint64_t n) {
        if (n == 0) throw UsageError("Rng::uniform_index: empty range");
        // Reject the top partial range so the modulo is unbiased.
        const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % n;
        std::uint64_t v;
        do v = engine_(); while (v >= limit);
        return v % n;
    }

    int bit() { return static_cast<int>(engine_() >> 63); }

    /// Standard normal via the Marsaglia polar method.
    double gaussian() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u, v, s;
        do {
            u = 2.0 * uniform() - 1.0;
            v = 2.0 * uniform() - 1.0;
            s = u * u + v * v;
        } while (s >= 1.0 || s == 0.0);
        const double f = std::sqrt(-2.0 * std::log(s) / s);
        spare_ = v * f;
        has_spare_ = true;
        return u * f;
    }

    /// Circular complex Gaussian with E|z|^2 = power.
    IqSample complex_gaussian(double power) {
        const double sd = std::sqrt(power / 2.0);
        const double re = gaussian();
        const double im = gaussian();
        return {re * sd, im * sd};
    }

    /// Independent child stream derived from this stream's seed and a tag.
    Rng fork(std::uint64_t tag) const { return Rng(splitmix64(seed_ ^ splitmix64(tag + 0x632BE59BD9B4E019ULL))); }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[uniform_index(i)]);
    }

private:
    std::uint64_t seed_;
    std::mt19937_64 engine_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

inline IqVector complex_noise(std::size_t n, double power, Rng& rng) {
    IqVector out(n);
    for (auto& s : out) s = rng.complex_gaussian(power);
    return out;
}

inline bool all_finite(std::span<const IqSample> x) {
    for (const auto& s : x)
        if (!std::isfinite(s.real()) || !std::isfinite(s.imag())) return false;
    return true;
}

}  // namespace jamcancel
