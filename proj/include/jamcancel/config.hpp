#pragma once

// Flat key = value configuration files. '#' starts a comment. Command-line overrides are applied
// on top with set(); every key must be consumed by the command, so typos fail loudly.

#include <charconv>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "jamcancel/canceller.hpp"
#include "jamcancel/channel.hpp"
#include "jamcancel/dataset.hpp"
#include "jamcancel/harness.hpp"
#include "jamcancel/trainer.hpp"

namespace jamcancel {

namespace config_detail {

inline std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

}  // namespace config_detail

class Config {
public:
    static Config parse(const std::string& text, const std::string& origin = "<text>") {
        Config c;
        std::istringstream in(text);
        std::string line;
        int line_no = 0;
        while (std::getline(in, line)) {
            ++line_no;
            if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
            line = config_detail::trim(line);
            if (line.empty()) continue;
            const auto eq = line.find('=');
            if (eq == std::string::npos)
                throw UsageError(origin + ":" + std::to_string(line_no) + ": expected 'key = value'");
            const std::string key = config_detail::trim(line.substr(0, eq));
            if (key.empty()) throw UsageError(origin + ":" + std::to_string(line_no) + ": empty key");
            c.values_[key] = config_detail::trim(line.substr(eq + 1));
        }
        return c;
    }

    static Config load(const std::string& path) {
        std::ifstream f(path);
        if (!f) throw UsageError("cannot open config '" + path + "'");
        std::stringstream ss;
        ss << f.rdbuf();
        return parse(ss.str(), path);
    }

    /// "key=value" as given on the command line.
    void set_override(const std::string& assignment) {
        const auto eq = assignment.find('=');
        if (eq == std::string::npos) throw UsageError("override '" + assignment + "' must look like key=value");
        set(config_detail::trim(assignment.substr(0, eq)), config_detail::trim(assignment.substr(eq + 1)));
    }
    void set(const std::string& key, const std::string& value) { values_[key] = value; }
    bool has(const std::string& key) const { return values_.count(key) != 0; }

    std::string get_string(const std::string& key, const std::string& fallback) const {
        const auto it = values_.find(key);
        if (it == values_.end()) return fallback;
        used_.insert(key);
        return it->second;
    }

    double get_double(const std::string& key, double fallback) const {
        if (!has(key)) return fallback;
        return to_double(key, get_string(key, ""));
    }

    long long get_int(const std::string& key, long long fallback) const {
        if (!has(key)) return fallback;
        const std::string v = get_string(key, "");
        long long out = 0;
        const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
        if (ec != std::errc() || p != v.data() + v.size()) throw UsageError("config field '" + key + "': '" + v + "' is not an integer");
        return out;
    }

    bool get_bool(const std::string& key, bool fallback) const {
        if (!has(key)) return fallback;
        const std::string v = get_string(key, "");
        if (v == "true" || v == "1" || v == "yes") return true;
        if (v == "false" || v == "0" || v == "no") return false;
        throw UsageError("config field '" + key + "': '" + v + "' is not a boolean");
    }

    /// Comma-separated list; "a:b:c" expands to the range a, a+c, ... up to b inclusive.
    std::vector<double> get_doubles(const std::string& key, const std::vector<double>& fallback) const {
        if (!has(key)) return fallback;
        std::vector<double> out;
        for (const std::string& item : split(get_string(key, ""))) {
            const auto c1 = item.find(':');
            if (c1 == std::string::npos) {
                out.push_back(to_double(key, item));
                continue;
            }
            const auto c2 = item.find(':', c1 + 1);
            if (c2 == std::string::npos) throw UsageError("config field '" + key + "': range must be start:stop:step");
            const double a = to_double(key, item.substr(0, c1)), b = to_double(key, item.substr(c1 + 1, c2 - c1 - 1)),
                         st = to_double(key, item.substr(c2 + 1));
            if (!(st > 0) || b < a) throw UsageError("config field '" + key + "': range needs step > 0 and stop >= start");
            const long n = std::lround(std::floor((b - a) / st + 1e-9));
            for (long i = 0; i <= n; ++i) out.push_back(a + static_cast<double>(i) * st);
        }
        if (out.empty()) throw UsageError("config field '" + key + "': empty list");
        return out;
    }

    std::vector<std::string> get_strings(const std::string& key, const std::vector<std::string>& fallback) const {
        if (!has(key)) return fallback;
        auto out = split(get_string(key, ""));
        if (out.empty()) throw UsageError("config field '" + key + "': empty list");
        return out;
    }

    /// Throws for keys nobody asked for.
    void check_all_used() const {
        for (const auto& [k, v] : values_)
            if (!used_.count(k)) throw UsageError("unknown config key '" + k + "'");
    }

private:
    static double to_double(const std::string& key, const std::string& v) {
        // "pi/3"-style values keep sweep configs readable.
        auto parse_plain = [&](const std::string& s) {
            std::size_t pos = 0;
            double x = 0;
            try {
                x = std::stod(s, &pos);
            } catch (const std::exception&) {
                pos = 0;
            }
            if (pos != s.size() || s.empty()) throw UsageError("config field '" + key + "': '" + v + "' is not a number");
            return x;
        };
        // "pi", "-pi", "2pi", "0.5pi" or a plain number.
        auto parse_term = [&](const std::string& s) {
            if (!s.ends_with("pi")) return parse_plain(s);
            const std::string k = s.substr(0, s.size() - 2);
            if (k.empty() || k == "+") return kPi;
            if (k == "-") return -kPi;
            return parse_plain(k) * kPi;
        };
        const std::string t = config_detail::trim(v);
        if (const auto slash = t.find('/'); slash != std::string::npos) return parse_term(t.substr(0, slash)) / parse_plain(t.substr(slash + 1));
        return parse_term(t);
    }

    static std::vector<std::string> split(const std::string& s) {
        std::vector<std::string> out;
        std::string item;
        std::istringstream in(s);
        while (std::getline(in, item, ',')) {
            item = config_detail::trim(item);
            if (!item.empty()) out.push_back(item);
        }
        return out;
    }

    std::map<std::string, std::string> values_;
    mutable std::set<std::string> used_;
};

inline ScenarioConfig scenario_from(const Config& c, ScenarioConfig s = {}) {
    s.scheme = parse_scheme(c.get_string("scheme", to_string(s.scheme)));
    s.sjr_db = c.get_double("sjr_db", s.sjr_db);
    s.snr_db = c.get_double("snr_db", s.snr_db);
    s.sep_rad = c.get_double("sep_rad", s.sep_rad);
    s.a_j = c.get_double("a_j", s.a_j);
    s.jammer_enabled = c.get_bool("jammer_enabled", s.jammer_enabled);
    s.jammer_waveform = parse_waveform(c.get_string("jammer_waveform", to_string(s.jammer_waveform)));
    s.jammer_schedule = parse_schedule(c.get_string("jammer_schedule", to_string(s.jammer_schedule)));
    s.seed = static_cast<std::uint64_t>(c.get_int("seed", static_cast<long long>(s.seed)));
    s.n_packets = static_cast<int>(c.get_int("n_packets", s.n_packets));
    s.payload_bytes = static_cast<int>(c.get_int("payload_bytes", s.payload_bytes));
    s.block_len = static_cast<int>(c.get_int("block_len", s.block_len));
    s.warmup_blocks = static_cast<int>(c.get_int("warmup_blocks", s.warmup_blocks));
    s.gap_blocks = static_cast<int>(c.get_int("gap_blocks", s.gap_blocks));
    s.tail_blocks = static_cast<int>(c.get_int("tail_blocks", s.tail_blocks));
    s.validate();
    return s;
}

inline DatasetConfig dataset_from(const Config& c, DatasetConfig d = {}) {
    d.block_len = static_cast<int>(c.get_int("block_len", d.block_len));
    d.chunk_len = static_cast<int>(c.get_int("chunk_len", d.chunk_len));
    d.max_lag = static_cast<int>(c.get_int("max_lag", d.max_lag));
    d.n_noise = static_cast<int>(c.get_int("n_noise", d.n_noise));
    d.n_single = static_cast<int>(c.get_int("n_single", d.n_single));
    d.n_collision = static_cast<int>(c.get_int("n_collision", d.n_collision));
    d.snr_db = c.get_double("snr_db", d.snr_db);
    d.jam_db_min = c.get_double("jam_db_min", d.jam_db_min);
    d.jam_db_max = c.get_double("jam_db_max", d.jam_db_max);
    d.sender_ratio_db = c.get_double("sender_ratio_db", d.sender_ratio_db);
    d.jammer_ratio_db = c.get_double("jammer_ratio_db", d.jammer_ratio_db);
    d.augment = c.get_bool("augment", d.augment);
    d.seed = static_cast<std::uint64_t>(c.get_int("seed", static_cast<long long>(d.seed)));
    d.validate();
    return d;
}

inline TrainConfig train_from(const Config& c, TrainConfig t = {}) {
    t.lr = c.get_double("lr", t.lr);
    t.batch_size = static_cast<std::size_t>(c.get_int("batch_size", static_cast<long long>(t.batch_size)));
    t.epochs = static_cast<int>(c.get_int("epochs", t.epochs));
    t.plateau_patience = static_cast<int>(c.get_int("plateau_patience", t.plateau_patience));
    t.plateau_factor = c.get_double("plateau_factor", t.plateau_factor);
    t.min_lr = c.get_double("min_lr", t.min_lr);
    t.seed = static_cast<std::uint64_t>(c.get_int("seed", static_cast<long long>(t.seed)));
    t.filters = static_cast<std::size_t>(c.get_int("filters", static_cast<long long>(t.filters)));
    t.augment = c.get_bool("augment", t.augment);
    t.validate();
    return t;
}

inline CancellerConfig canceller_from(const Config& c, CancellerConfig k = {}) {
    k.lambda = c.get_double("lambda", k.lambda);
    k.smoothing = parse_smoothing(c.get_string("smoothing", to_string(k.smoothing)));
    k.preamble_threshold = c.get_double("preamble_threshold", k.preamble_threshold);
    k.max_pending_blocks = static_cast<std::size_t>(c.get_int("max_pending_blocks", static_cast<long long>(k.max_pending_blocks)));
    k.validate();
    return k;
}

inline SweepSpec sweep_from(const Config& c, SweepSpec w = {}) {
    std::vector<std::string> scheme_names;
    for (ModScheme m : w.schemes) scheme_names.push_back(to_string(m));
    w.schemes.clear();
    for (const auto& n : c.get_strings("schemes", scheme_names)) w.schemes.push_back(parse_scheme(n));
    w.sjr_db = c.get_doubles("sjr_db", w.sjr_db);
    w.sep_rad = c.get_doubles("sep_rad", w.sep_rad);
    w.lambdas = c.get_doubles("lambdas", w.lambdas);
    std::vector<std::string> mode_names;
    for (CancelMode m : w.modes) mode_names.push_back(to_string(m));
    w.modes.clear();
    for (const auto& n : c.get_strings("modes", mode_names)) w.modes.push_back(parse_mode(n));
    w.snr_db = c.get_double("snr_db", w.snr_db);
    w.a_j = c.get_double("a_j", w.a_j);
    w.bits_per_point = static_cast<std::uint64_t>(c.get_int("bits_per_point", static_cast<long long>(w.bits_per_point)));
    w.seed = static_cast<std::uint64_t>(c.get_int("seed", static_cast<long long>(w.seed)));
    w.smoothing = parse_smoothing(c.get_string("smoothing", to_string(w.smoothing)));
    w.jammer_waveform = parse_waveform(c.get_string("jammer_waveform", to_string(w.jammer_waveform)));
    w.payload_bytes = static_cast<int>(c.get_int("payload_bytes", w.payload_bytes));
    w.n_packets = static_cast<int>(c.get_int("n_packets", w.n_packets));
    w.warmup_blocks = static_cast<int>(c.get_int("warmup_blocks", w.warmup_blocks));
    w.gap_blocks = static_cast<int>(c.get_int("gap_blocks", w.gap_blocks));
    w.validate();
    return w;
}

inline SmoothingSpec smoothing_from(const Config& c, SmoothingSpec s = {}) {
    s.scheme = parse_scheme(c.get_string("scheme", to_string(s.scheme)));
    s.sep_rad = c.get_double("sep_rad", s.sep_rad);
    s.sjr_db = c.get_double("sjr_db", s.sjr_db);
    s.snr_db = c.get_double("snr_db", s.snr_db);
    s.lambdas = c.get_doubles("lambdas", s.lambdas);
    s.bits_per_point = static_cast<std::uint64_t>(c.get_int("bits_per_point", static_cast<long long>(s.bits_per_point)));
    s.seed = static_cast<std::uint64_t>(c.get_int("seed", static_cast<long long>(s.seed)));
    s.payload_bytes = static_cast<int>(c.get_int("payload_bytes", s.payload_bytes));
    s.n_packets = static_cast<int>(c.get_int("n_packets", s.n_packets));
    s.warmup_blocks = static_cast<int>(c.get_int("warmup_blocks", s.warmup_blocks));
    for (double l : s.lambdas)
        if (!(l > 0 && l <= 1)) throw UsageError("config field 'lambdas': values must lie in (0, 1]");
    if (s.bits_per_point < 1 || s.n_packets < 1) throw UsageError("config fields 'bits_per_point' and 'n_packets' must be >= 1");
    return s;
}

}  // namespace jamcancel
