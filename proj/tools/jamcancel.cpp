// jamcancel: dataset generation, training and evaluation driver.
//
// Exit codes: 0 success, 1 usage, 2 data/format, 3 acceptance assertion failed.

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>

#include "jamcancel/jamcancel.hpp"

using namespace jamcancel;

namespace {

struct AssertionFailure : std::runtime_error {
    using std::runtime_error::runtime_error;
};

void write_text(const std::string& path, const std::string& text) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("cannot open '" + path + "' for writing");
    f << text;
    if (!f) throw std::runtime_error("write to '" + path + "' failed");
}

struct ConfigArgs {
    std::string path;
    std::vector<std::string> overrides;

    void attach(CLI::App* app) {
        app->add_option("-c,--config", path, "key = value config file");
        app->add_option("-s,--set", overrides, "override a config key (key=value), repeatable");
    }
    Config load() const {
        Config c = path.empty() ? Config{} : Config::load(path);
        for (const auto& o : overrides) c.set_override(o);
        return c;
    }
};

void print_dataset_summary(const DatasetSplit& split) {
    auto summarize = [](const char* name, const std::vector<LabeledExample>& v) {
        std::size_t counts[3] = {};
        double sum = 0, sq = 0;
        std::size_t n_phase = 0;
        for (const auto& e : v) {
            ++counts[static_cast<int>(label_channel_state(e))];
            for (auto [ind, phi] : {std::pair{e.ind_1, e.phi_1}, std::pair{e.ind_2, e.phi_2}})
                if (ind) {
                    sum += phi;
                    sq += static_cast<double>(phi) * phi;
                    ++n_phase;
                }
        }
        const double mean = n_phase ? sum / static_cast<double>(n_phase) : 0.0;
        const double sd = n_phase ? std::sqrt(std::max(0.0, sq / static_cast<double>(n_phase) - mean * mean)) : 0.0;
        std::printf("%-5s %7zu examples: noise %zu, single %zu, collision %zu; phase labels mean %.3f sd %.3f rad\n", name, v.size(),
                    counts[0], counts[1], counts[2], mean, sd);
    };
    summarize("train", split.train);
    summarize("val", split.val);
    summarize("test", split.test);
}

int cmd_generate_dataset(const ConfigArgs& ca, const std::string& out) {
    const Config c = ca.load();
    const DatasetConfig cfg = dataset_from(c);
    c.check_all_used();
    Rng rng(cfg.seed);
    const DatasetSplit split = assemble_dataset(cfg, rng);
    for (const auto& w : split.warnings) std::fprintf(stderr, "warning: %s\n", w.c_str());
    write_dataset(out, static_cast<std::size_t>(cfg.block_len), split);
    print_dataset_summary(split);
    std::printf("wrote %s\n", out.c_str());
    return 0;
}

std::string history_csv(const std::vector<EpochRecord>& h) {
    std::string s = "epoch,lr,train_loss,val_loss\n";
    char buf[128];
    for (const auto& r : h) {
        std::snprintf(buf, sizeof buf, "%d,%.9g,%.9g,%.9g\n", r.epoch, r.lr, r.train_loss, r.val_loss);
        s += buf;
    }
    return s;
}

int cmd_train(const ConfigArgs& ca, const std::string& dataset, const std::string& weights, std::string history,
              const std::string& checkpoint) {
    const Config c = ca.load();
    const TrainConfig cfg = train_from(c);
    c.check_all_used();
    const DatasetFile file = read_dataset(dataset);
    const DatasetSplit split = split_examples(file.examples);
    TrainOptions opt;
    opt.checkpoint_path = checkpoint;
    const auto t0 = std::chrono::steady_clock::now();
    opt.on_epoch = [&](const EpochRecord& r) {
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        std::printf("epoch %3d  lr %.3g  train %.5f  val %.5f  (%.0f s)\n", r.epoch, r.lr, r.train_loss, r.val_loss, secs);
        std::fflush(stdout);
    };
    const TrainResult res = train(split, cfg, file.m, opt);
    save_weights(weights, res.net);
    if (history.empty()) history = weights + ".history.csv";
    write_text(history, history_csv(res.history));
    std::printf("best val loss %.6f\nwrote %s and %s\n", res.best_val, weights.c_str(), history.c_str());
    return 0;
}

int cmd_classify(const ConfigArgs& ca, const std::string& weights, const std::string& dataset, bool all_examples, bool oracle,
                 const std::string& out) {
    Confusion conf;
    if (!dataset.empty()) {
        if (oracle) throw UsageError("--oracle applies to scenario configs, not datasets");
        PhaseNet<float> net = load_weights<float>(weights);
        const DatasetFile f = read_dataset(dataset);
        const std::vector<LabeledExample> examples = all_examples ? f.examples : split_examples(f.examples).test;
        conf = classify_examples(net, examples);
    } else {
        const Config c = ca.load();
        const ScenarioConfig sc_cfg = scenario_from(c);
        c.check_all_used();
        const Scenario sc = build_scenario(sc_cfg);
        std::vector<NetOutput> outs;
        if (oracle) {
            outs = oracle_outputs(sc);
        } else {
            if (weights.empty()) throw UsageError("classify needs --weights (or --oracle)");
            PhaseNet<float> net = load_weights<float>(weights);
            outs = network_outputs(net, sc.r1, sc.r2);
        }
        add_scenario(conf, sc, outs);
    }
    const std::string csv = confusion_csv(conf);
    if (!out.empty()) write_text(out, csv);
    std::printf("%s", csv.c_str());
    return 0;
}

PlotSpec sweep_plot(const std::vector<ResultRow>& rows) {
    PlotSpec p;
    p.title = "BER vs SJR";
    p.x_label = "SJR (dB)";
    p.y_label = "BER";
    p.log_y = true;
    std::map<std::string, PlotSeries> series;
    for (const auto& r : rows) {
        char label[96];
        std::snprintf(label, sizeof label, "%s sep %.2f %s l=%g", to_string(r.scheme).c_str(), r.sep_rad, to_string(r.mode).c_str(), r.lambda);
        auto& s = series[label];
        s.label = label;
        s.x.push_back(r.sjr_db);
        s.y.push_back(r.ber);
    }
    for (auto& [k, s] : series) p.series.push_back(std::move(s));
    return p;
}

int cmd_ber_sweep(const ConfigArgs& ca, const std::string& weights, const std::string& out, const std::string& svg, int threads) {
    const Config c = ca.load();
    const SweepSpec spec = sweep_from(c);
    c.check_all_used();
    std::optional<PhaseNet<float>> net;
    if (spec.needs_network()) {
        if (weights.empty()) throw UsageError("cnn_cancel mode needs --weights");
        net = load_weights<float>(weights);
    }
    const auto rows = run_sweep(spec, net ? &*net : nullptr, threads > 0 ? static_cast<std::size_t>(threads) : worker_threads());
    const std::string csv = results_csv(rows);
    write_text(out, csv);
    if (!svg.empty()) write_svg(svg, sweep_plot(rows));
    std::printf("%s", csv.c_str());
    std::size_t flagged = 0;
    for (const auto& r : rows) flagged += r.low_confidence();
    if (flagged) std::fprintf(stderr, "note: %zu rows counted fewer than %llu errors (low_confidence=1)\n", flagged,
                              static_cast<unsigned long long>(kMinErrors));
    return 0;
}

int cmd_smoothing_study(const ConfigArgs& ca, const std::string& weights, const std::string& out, const std::string& traces,
                        const std::string& svg, bool check) {
    const Config c = ca.load();
    const SmoothingSpec spec = smoothing_from(c);
    c.check_all_used();
    PhaseNet<float> net = load_weights<float>(weights);
    const SmoothingResult res = run_smoothing_study(spec, net);
    write_text(out, smoothing_csv(res));
    if (!traces.empty()) write_text(traces, smoothing_traces_csv(spec, res));
    if (!svg.empty()) {
        PlotSpec p;
        p.title = "Block energy after cancellation";
        p.x_label = "block";
        p.y_label = "energy";
        for (std::size_t i = 0; i < res.traces.size(); ++i) {
            PlotSeries s;
            s.label = "lambda " + std::to_string(spec.lambdas[i]);
            for (std::size_t b = 0; b < res.traces[i].size(); ++b) {
                s.x.push_back(static_cast<double>(b));
                s.y.push_back(res.traces[i][b]);
            }
            p.series.push_back(std::move(s));
        }
        write_svg(svg, p);
    }
    std::printf("%s", smoothing_csv(res).c_str());
    if (check) {
        const auto fails = check_smoothing_ordering(res);
        for (const auto& f : fails) std::fprintf(stderr, "check failed: %s\n", f.c_str());
        if (!fails.empty()) throw AssertionFailure("smoothing ordering check failed");
    }
    return 0;
}

std::vector<BlockState> read_truth_csv(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw FormatError("cannot open truth file '" + path + "'");
    std::string line;
    std::getline(f, line);
    if (line.rfind("block,state", 0) != 0) throw FormatError(path + ": expected header 'block,state,...'");
    std::vector<BlockState> out;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        const auto a = line.find(','), b = line.find(',', a + 1);
        if (a == std::string::npos) throw FormatError(path + ": malformed row '" + line + "'");
        const std::string st = line.substr(a + 1, b == std::string::npos ? std::string::npos : b - a - 1);
        bool found = false;
        for (BlockState s : {BlockState::Noise, BlockState::SenderOnly, BlockState::JammerOnly, BlockState::Collision})
            if (to_string(s) == st) {
                out.push_back(s);
                found = true;
            }
        if (!found) throw FormatError(path + ": unknown state '" + st + "'");
    }
    return out;
}

int cmd_cancel_stream(const ConfigArgs& ca, const std::string& weights, const std::string& in, const std::string& out,
                      const std::string& diag, const std::string& truth) {
    const Config c = ca.load();
    CancellerConfig cfg;
    cfg.scheme = parse_scheme(c.get_string("scheme", to_string(cfg.scheme)));
    cfg = canceller_from(c, cfg);
    c.check_all_used();
    PhaseNet<float> net = load_weights<float>(weights);
    IqRecording rec = read_iq2a(in);
    if (rec.block_len != net.shape().m) throw FormatError(in + ": block length " + std::to_string(rec.block_len) + " does not match the network");
    const std::size_t n = rec.r1.size() / rec.block_len * rec.block_len;
    if (n != rec.r1.size()) std::fprintf(stderr, "note: dropping %zu trailing samples (partial block)\n", rec.r1.size() - n);
    rec.r1.resize(n);
    rec.r2.resize(n);
    const auto outs = network_outputs(net, rec.r1, rec.r2);
    const StreamResult res = run_canceller(rec.r1, rec.r2, outs, rec.block_len, cfg);
    write_cf32(out, res.output);
    if (!diag.empty()) {
        std::string s = diagnostics_csv_header();
        for (const auto& d : res.diagnostics) s += diagnostics_csv_row(d);
        write_text(diag, s);
    }
    const auto& k = res.final_state.counters;
    std::printf("blocks %zu, sender packets %zu, jammer blocks %zu, low-confidence %zu, degenerate ratio %zu\n", res.diagnostics.size(),
                static_cast<std::size_t>(k.sender_packets), static_cast<std::size_t>(k.jammer_blocks),
                static_cast<std::size_t>(k.low_confidence), static_cast<std::size_t>(k.degenerate_ratio));
    if (!truth.empty()) {
        const auto states = read_truth_csv(truth);
        if (states.size() != res.diagnostics.size()) throw FormatError(truth + ": block count does not match the stream");
        std::size_t agree = 0;
        for (std::size_t b = 0; b < states.size(); ++b) agree += truth_channel_state(states[b]) == res.diagnostics[b].state;
        std::printf("state agreement %.4f (%zu / %zu)\n", static_cast<double>(agree) / static_cast<double>(states.size()), agree,
                    states.size());
    }
    return 0;
}

int cmd_simulate(const ConfigArgs& ca, const std::string& out, const std::string& truth) {
    const Config c = ca.load();
    const ScenarioConfig cfg = scenario_from(c);
    c.check_all_used();
    const Scenario sc = build_scenario(cfg);
    write_iq2a(out, IqRecording{sc.block_len(), sc.r1, sc.r2});
    if (!truth.empty()) {
        std::string s = "block,state,packet\n";
        for (std::size_t b = 0; b < sc.n_blocks(); ++b)
            s += std::to_string(b) + "," + to_string(sc.truth[b].state) + "," + std::to_string(sc.truth[b].packet) + "\n";
        write_text(truth, s);
    }
    std::printf("%zu blocks of %zu samples, %zu packets; sep %.4f rad, A_J %.4f, delta_phi_J %.4f rad\n", sc.n_blocks(), sc.block_len(),
                sc.packets.size(), sc.gains.sep(), sc.gains.a_j(), sc.gains.delta_phi_j().radians());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Two-antenna jamming detection and cancellation toolkit"};
    app.require_subcommand(1);

    ConfigArgs gen_cfg, train_cfg, cls_cfg, sweep_cfg, smooth_cfg, stream_cfg, sim_cfg;
    std::string out, dataset, weights, history, checkpoint, svg, traces, in, diag, truth;
    bool all_examples = false, oracle = false, check = false;
    int threads = 0;

    auto* gen = app.add_subcommand("generate-dataset", "synthesize a labeled training set");
    gen_cfg.attach(gen);
    gen->add_option("-o,--out", out, "dataset file")->required();

    auto* tr = app.add_subcommand("train", "train the phase network");
    train_cfg.attach(tr);
    tr->add_option("-d,--dataset", dataset, "dataset file")->required();
    tr->add_option("-w,--weights", weights, "output weights file")->required();
    tr->add_option("--history", history, "per-epoch loss CSV (default <weights>.history.csv)");
    tr->add_option("--checkpoint", checkpoint, "checkpoint file; resumes when it exists");

    auto* cls = app.add_subcommand("classify", "channel-state confusion matrix");
    cls_cfg.attach(cls);
    cls->add_option("-w,--weights", weights, "weights file");
    cls->add_option("-d,--dataset", dataset, "evaluate on a dataset's test split instead of a scenario");
    cls->add_flag("--all", all_examples, "use every example of the dataset, not just the test split");
    cls->add_flag("--oracle", oracle, "feed ground-truth indicators instead of the network");
    cls->add_option("-o,--out", out, "CSV output");

    auto* sweep = app.add_subcommand("ber-sweep", "BER over scheme x SJR x separation x lambda x mode");
    sweep_cfg.attach(sweep);
    sweep->add_option("-w,--weights", weights, "weights file (needed for cnn_cancel)");
    sweep->add_option("-o,--out", out, "CSV output")->required();
    sweep->add_option("--svg", svg, "SVG plot output");
    sweep->add_option("-j,--threads", threads, "worker threads (default JC_THREADS or all cores)");

    auto* smooth = app.add_subcommand("smoothing-study", "energy variance and BER for several lambdas");
    smooth_cfg.attach(smooth);
    smooth->add_option("-w,--weights", weights, "weights file")->required();
    smooth->add_option("-o,--out", out, "CSV output")->required();
    smooth->add_option("--traces", traces, "per-block energy trace CSV");
    smooth->add_option("--svg", svg, "SVG plot of the energy traces");
    smooth->add_flag("--check", check, "exit 3 unless the variance and BER ordering holds");

    auto* stream = app.add_subcommand("cancel-stream", "run the canceller over a recorded IQ2A file");
    stream_cfg.attach(stream);
    stream->add_option("-w,--weights", weights, "weights file")->required();
    stream->add_option("-i,--in", in, "IQ2A input")->required();
    stream->add_option("-o,--out", out, "cleaned stream, interleaved float32 I/Q")->required();
    stream->add_option("--diag", diag, "per-block diagnostics CSV");
    stream->add_option("--truth", truth, "truth CSV from simulate; reports state agreement");

    auto* sim = app.add_subcommand("simulate", "write a scenario as an IQ2A recording");
    sim_cfg.attach(sim);
    sim->add_option("-o,--out", out, "IQ2A output")->required();
    sim->add_option("--truth", truth, "per-block truth CSV");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 1;
    }

    try {
        if (gen->parsed()) return cmd_generate_dataset(gen_cfg, out);
        if (tr->parsed()) return cmd_train(train_cfg, dataset, weights, history, checkpoint);
        if (cls->parsed()) return cmd_classify(cls_cfg, weights, dataset, all_examples, oracle, out);
        if (sweep->parsed()) return cmd_ber_sweep(sweep_cfg, weights, out, svg, threads);
        if (smooth->parsed()) return cmd_smoothing_study(smooth_cfg, weights, out, traces, svg, check);
        if (stream->parsed()) return cmd_cancel_stream(stream_cfg, weights, in, out, diag, truth);
        if (sim->parsed()) return cmd_simulate(sim_cfg, out, truth);
    } catch (const UsageError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    } catch (const AssertionFailure& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 3;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }
    return 1;
}
