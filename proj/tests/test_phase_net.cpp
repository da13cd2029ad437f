#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include <unistd.h>

#include "jamcancel/gradcheck.hpp"
#include "jamcancel/trainer.hpp"

using namespace jamcancel;

namespace {

std::string temp_path(const std::string& name) {
    return (std::filesystem::temp_directory_path() / ("jc_net_" + std::to_string(::getpid()) + "_" + name)).string();
}

std::vector<InputTensor> random_tensors(std::size_t n, std::size_t m, Rng& rng) {
    std::vector<InputTensor> out;
    for (std::size_t i = 0; i < n; ++i) {
        std::vector<float> v(4 * m);
        for (auto& x : v) x = static_cast<float>(rng.gaussian());
        out.push_back(tensor_from_values(m, std::move(v)));
    }
    return out;
}

DatasetSplit tiny_split(int noise, int single, int collision, std::uint64_t seed) {
    DatasetConfig cfg;
    cfg.n_noise = noise;
    cfg.n_single = single;
    cfg.n_collision = collision;
    Rng rng(seed);
    return assemble_dataset(cfg, rng);
}

}  // namespace

TEST(Losses, PhaseMasking) {
    EXPECT_EQ(loss_phase({2.0, -1.0, 0.5, 0.5}, {0.1, 0.2, 0, 0}), 0.0);
    EXPECT_EQ(loss_phase({0.5, 3.0, 0.5, 0.5}, {0.5, 0.0, 1, 0}), 0.0);
    EXPECT_NEAR(loss_phase({0.1, 0.8, 0.5, 0.5}, {0.0, 1.0, 1, 1}), 0.05, 1e-12);
}

TEST(Losses, SignalCrossEntropy) {
    const double eps = 1e-9;
    EXPECT_NEAR(loss_signal({0, 0, 1 - eps, 1 - eps}, {0, 0, 1, 1}), 0.0, 1e-6);
    EXPECT_NEAR(loss_signal({0, 0, 0.5, 0.5}, {0, 0, 0, 0}), 2 * std::log(2.0), 1e-12);
    EXPECT_NEAR(loss_signal({0, 0, 0.9, 0.1}, {0, 0, 1, 0}), -2 * std::log(0.9), 1e-12);
    EXPECT_TRUE(std::isfinite(loss_signal({0, 0, 0.0, 1.0}, {0, 0, 1, 0})));
}

TEST(Losses, TotalIsExactSum) {
    const NetOutput o{0.1, 0.8, 0.9, 0.1};
    const PhaseLabel y{0.0, 1.0, 1, 0};
    EXPECT_EQ(loss_total(o, y), loss_phase(o, y) + loss_signal(o, y));
    EXPECT_NEAR(loss_total({5, 5, 1 - 1e-12, 1e-12}, {5, 0, 1, 0}), 0.0, 1e-6);
    EXPECT_EQ(loss_total({0.5, 0, 0.5, 0.5}, {0.5, 0, 1, 0}), loss_signal({0.5, 0, 0.5, 0.5}, {0.5, 0, 1, 0}));
    Rng rng(1);
    for (int i = 0; i < 1000; ++i) {
        const NetOutput r{rng.uniform(-4, 4), rng.uniform(-4, 4), rng.uniform(0.01, 0.99), rng.uniform(0.01, 0.99)};
        const PhaseLabel l{rng.uniform(-3, 3), rng.uniform(-3, 3), rng.bit(), rng.bit()};
        ASSERT_GE(loss_total(r, l), std::max(loss_phase(r, l), loss_signal(r, l)));
    }
}

TEST(Losses, MaskedTargetPerturbationNeverChangesLoss) {
    Rng rng(2);
    for (int i = 0; i < 1000; ++i) {
        const NetOutput o{rng.uniform(-3, 3), rng.uniform(-3, 3), rng.uniform(0.01, 0.99), rng.uniform(0.01, 0.99)};
        PhaseLabel l{rng.uniform(-3, 3), rng.uniform(-3, 3), 1, 0};
        const double before = loss_total(o, l);
        l.phi_2 += rng.uniform(-5, 5);
        ASSERT_EQ(loss_total(o, l), before);
    }
}

TEST(Losses, BatchLossMatchesPerExampleLossAndGradient) {
    const std::vector<std::array<double, 4>> z = {{0.3, -0.2, 1.5, -2.0}, {1.0, 2.0, -0.5, 0.7}};
    const std::vector<PhaseLabel> y = {{0.1, 0.0, 1, 0}, {0.5, 2.5, 1, 1}};
    std::vector<std::array<double, 4>> g;
    const double l = PhaseNet<double>::batch_loss(z, y, &g);
    double ref = 0;
    for (std::size_t b = 0; b < 2; ++b) ref += loss_total(PhaseNet<double>::to_output(z[b]), y[b]);
    EXPECT_NEAR(l, ref / 2, 1e-12);
    // d/dp_s1 of the phase term is 2 * ind (p - phi), averaged over the batch.
    EXPECT_NEAR(g[0][0], 2 * (0.3 - 0.1) / 2, 1e-15);
    EXPECT_EQ(g[0][1], 0.0);
    EXPECT_NEAR(g[1][1], 2 * (2.0 - 2.5) / 2, 1e-15);
    EXPECT_NEAR(g[0][2], (1 / (1 + std::exp(-1.5)) - 1) / 2, 1e-15);
    EXPECT_NEAR(g[0][3], (1 / (1 + std::exp(2.0))) / 2, 1e-15);
}

TEST(Forward, DeadNetworkOutputsZeroAndHalf) {
    PhaseNet<float> net(NetShape{16, 4});
    for (auto& p : net.params()) std::fill(p.value.begin(), p.value.end(), p.name.ends_with("running_var") ? 1.0f : 0.0f);
    Rng rng(3);
    const auto t = random_tensors(3, 16, rng);
    for (Mode mode : {Mode::Infer, Mode::Train}) {
        std::vector<float> v;
        for (const auto& x : t) v.insert(v.end(), x.values().begin(), x.values().end());
        const auto z = net.forward(v, 3, mode);
        for (const auto& o : z) {
            const NetOutput n = PhaseNet<float>::to_output(o);
            EXPECT_EQ(n.p_s1, 0.0);
            EXPECT_EQ(n.p_s2, 0.0);
            EXPECT_EQ(n.i_s1, 0.5);
            EXPECT_EQ(n.i_s2, 0.5);
        }
    }
}

TEST(Forward, InferIsDeterministicAndBatchIndependent) {
    PhaseNet<float> net(NetShape{32, 8});
    Rng rng(4);
    net.initialize(rng);
    for (auto& v : net.param("bn2.running_mean").value) v = static_cast<float>(rng.uniform(-0.5, 0.5));
    const auto t = random_tensors(10, 32, rng);
    const auto a = net.infer(t);
    const auto b = net.infer(t);
    for (std::size_t i = 0; i < t.size(); ++i) {
        EXPECT_EQ(a[i].p_s1, b[i].p_s1);
        EXPECT_EQ(a[i].i_s2, b[i].i_s2);
        const NetOutput alone = net.infer_one(t[i]);
        EXPECT_NEAR(alone.p_s1, a[i].p_s1, 1e-5);
        EXPECT_NEAR(alone.p_s2, a[i].p_s2, 1e-5);
        EXPECT_NEAR(alone.i_s1, a[i].i_s1, 1e-6);
        EXPECT_NEAR(alone.i_s2, a[i].i_s2, 1e-6);
    }
}

TEST(Forward, DuplicateInBatchGivesIdenticalOutputs) {
    PhaseNet<float> net(NetShape{16, 4});
    Rng rng(5);
    net.initialize(rng);
    const auto t = random_tensors(1, 16, rng);
    std::vector<float> v = t[0].values();
    v.insert(v.end(), t[0].values().begin(), t[0].values().end());
    for (Mode mode : {Mode::Train, Mode::Infer}) {
        const auto z = net.forward(v, 2, mode);
        for (int k = 0; k < 4; ++k) EXPECT_NEAR(z[0][k], z[1][k], 1e-5);
    }
}

TEST(Forward, ShapeMismatchIsUsageError) {
    PhaseNet<float> net(NetShape{16, 4});
    std::vector<float> v(4 * 16 * 2 + 1);
    EXPECT_THROW(net.forward(v, 2, Mode::Infer), UsageError);
    Rng rng(6);
    const auto t = random_tensors(1, 8, rng);
    EXPECT_THROW(net.infer(t), UsageError);
}

TEST(Backward, DoublePrecisionGradientsMatchCentralDifferences) {
    for (std::uint64_t seed : {1u, 2u, 3u}) {
        TinyProblem<double> tp(seed);
        const auto report = gradient_check(tp.net, tp.inputs, tp.batch, tp.labels, 1e-5);
        EXPECT_EQ(report.size(), 14u);
        for (const auto& r : report) {
            EXPECT_LE(r.rel_error, 1e-6) << r.name << " seed " << seed;
            EXPECT_GT(r.grad_norm, 0.0) << r.name;
        }
    }
}

TEST(Backward, SinglePrecisionGradientsMatchCentralDifferences) {
    for (std::uint64_t seed : {7u, 1u, 2u}) {
        TinyProblem<float> tp(seed);
        const auto report = gradient_check<float, double>(tp.net, tp.inputs, tp.batch, tp.labels, 1e-3);
        EXPECT_EQ(report.size(), 14u);
        for (const auto& r : report) EXPECT_LE(r.rel_error, 1e-3) << r.name << " seed " << seed;
    }
}

TEST(Backward, SaturatedCorrectAndMaskedGivesNearZeroGradients) {
    TinyProblem<double> tp(8);
    tp.net.param("fc.bias").value = {0.0, 0.0, -40.0, -40.0};
    for (auto& v : tp.net.param("fc.weight").value) v *= 1e-3;
    for (auto& l : tp.labels) l = {1.0, 2.0, 0, 0};
    ForwardCache<double> cache;
    std::vector<std::array<double, 4>> g;
    tp.net.zero_grad();
    const auto z = tp.net.forward(tp.inputs, tp.batch, Mode::Train, &cache, false);
    PhaseNet<double>::batch_loss(z, tp.labels, &g);
    tp.net.backward(cache, g);
    for (const auto& p : tp.net.params())
        for (double v : p.grad) EXPECT_LT(std::abs(v), 1e-12) << p.name;
}

TEST(Weights, RoundTripIsBitExact) {
    PhaseNet<float> net(NetShape{16, 4});
    Rng rng(9);
    net.initialize(rng);
    const std::string p = temp_path("w.jcnn");
    save_weights(p, net);
    const PhaseNet<float> back = load_weights(p);
    ASSERT_EQ(back.params().size(), net.params().size());
    for (std::size_t i = 0; i < net.params().size(); ++i) EXPECT_EQ(back.params()[i].value, net.params()[i].value);
    const auto t = random_tensors(5, 16, rng);
    PhaseNet<float> a = net, b = back;
    const auto oa = a.infer(t), ob = b.infer(t);
    for (std::size_t i = 0; i < t.size(); ++i) {
        EXPECT_EQ(oa[i].p_s1, ob[i].p_s1);
        EXPECT_EQ(oa[i].i_s2, ob[i].i_s2);
    }
    std::filesystem::remove(p);
}

TEST(Weights, CorruptHeaderAndShapeMismatchAreFormatErrors) {
    PhaseNet<float> net(NetShape{16, 4});
    Rng rng(10);
    net.initialize(rng);
    const std::string p = temp_path("bad.jcnn");
    save_weights(p, net);
    {
        std::fstream f(p, std::ios::in | std::ios::out | std::ios::binary);
        f.seekp(0);
        f.put('X');
    }
    EXPECT_THROW(load_weights(p), FormatError);

    save_weights(p, net);
    {
        std::fstream f(p, std::ios::in | std::ios::out | std::ios::binary);
        f.seekp(4);
        f.put(7);
    }
    EXPECT_THROW(load_weights(p), FormatError);

    // Header claims more filters than the blocks carry.
    save_weights(p, net);
    {
        std::fstream f(p, std::ios::in | std::ios::out | std::ios::binary);
        f.seekp(10);
        f.put(5);
    }
    EXPECT_THROW(load_weights(p), FormatError);

    save_weights(p, net);
    std::filesystem::resize_file(p, std::filesystem::file_size(p) - 2);
    EXPECT_THROW(load_weights(p), FormatError);
    std::filesystem::remove(p);
}

TEST(Scheduler, PlateauDecaysAfterPatience) {
    PlateauScheduler s{0.005, 0.5, 2};
    EXPECT_FALSE(s.step(1.0));
    EXPECT_FALSE(s.step(1.0));
    EXPECT_FALSE(s.step(1.0));
    EXPECT_TRUE(s.step(1.0));
    EXPECT_DOUBLE_EQ(s.lr, 0.0025);
    EXPECT_FALSE(s.step(0.5));
    EXPECT_DOUBLE_EQ(s.lr, 0.0025);
}

TEST(TrainConfig, Validation) {
    TrainConfig c;
    c.lr = 0;
    EXPECT_THROW(c.validate(), UsageError);
    c = {};
    c.plateau_factor = 1.0;
    EXPECT_THROW(c.validate(), UsageError);
}

TEST(Train, OverfitsSingleClassSet) {
    const DatasetSplit s = tiny_split(0, 500, 0, 11);
    DatasetSplit d;
    d.train.insert(d.train.end(), s.train.begin(), s.train.end());
    d.train.insert(d.train.end(), s.val.begin(), s.val.end());
    d.train.insert(d.train.end(), s.test.begin(), s.test.end());
    d.val = s.val;
    TrainConfig cfg;
    cfg.filters = 16;
    cfg.epochs = 40;
    cfg.batch_size = 32;
    cfg.lr = 0.005;
    cfg.plateau_patience = 2;
    cfg.augment = false;  // memorization check; rotations would keep presenting new examples
    const TrainResult r = train(d, cfg, 128);
    const double first = r.history.front().train_loss, last = r.history.back().train_loss;
    std::printf("overfit: train loss %.4f -> %.4f\n", first, last);
    EXPECT_LE(last, 0.1 * first);
}

TEST(Train, SameSeedSameWeightsAndResumeMatches) {
    const DatasetSplit d = tiny_split(40, 40, 40, 12);
    TrainConfig cfg;
    cfg.filters = 4;
    cfg.epochs = 4;
    cfg.batch_size = 16;
    const TrainResult a = train(d, cfg, 128);
    const TrainResult b = train(d, cfg, 128);
    for (std::size_t i = 0; i < a.net.params().size(); ++i) ASSERT_EQ(a.net.params()[i].value, b.net.params()[i].value);

    const std::string ck = temp_path("ck.jcnn");
    std::filesystem::remove(ck);
    TrainConfig half = cfg;
    half.epochs = 2;
    train(d, half, 128, TrainOptions{ck, {}});
    const TrainResult c = train(d, cfg, 128, TrainOptions{ck, {}});
    ASSERT_EQ(c.history.size(), a.history.size());
    for (std::size_t e = 0; e < a.history.size(); ++e) {
        EXPECT_EQ(c.history[e].lr, a.history[e].lr);
        EXPECT_EQ(c.history[e].val_loss, a.history[e].val_loss);
    }
    for (std::size_t i = 0; i < a.net.params().size(); ++i) ASSERT_EQ(c.net.params()[i].value, a.net.params()[i].value);
    std::filesystem::remove(ck);
}

TEST(Train, NonFiniteLossAborts) {
    DatasetSplit d = tiny_split(10, 10, 10, 13);
    auto v = d.train[0].tensor.values();
    v[0] = std::nanf("");
    d.train[0].tensor = tensor_from_values(128, v);
    TrainConfig cfg;
    cfg.filters = 2;
    cfg.epochs = 1;
    cfg.batch_size = 8;
    EXPECT_THROW(train(d, cfg, 128), DivergenceError);
}

TEST(Train, EmptySplitsRejected) {
    TrainConfig cfg;
    EXPECT_THROW(train(DatasetSplit{}, cfg, 128), UsageError);
}
