#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>

#include <unistd.h>

#include "jamcancel/dataset.hpp"

using namespace jamcancel;

namespace {

std::string temp_path(const std::string& name) {
    return (std::filesystem::temp_directory_path() / ("jc_test_" + std::to_string(::getpid()) + "_" + name)).string();
}

DatasetConfig small_config(int noise, int single, int collision) {
    DatasetConfig cfg;
    cfg.n_noise = noise;
    cfg.n_single = single;
    cfg.n_collision = collision;
    return cfg;
}

}  // namespace

TEST(InputTensor, LayoutFromBlocks) {
    const InputTensor t = build_input_tensor(IqBlock(IqVector(8, {1, 2}), 1), IqBlock(IqVector(8, {3, 4}), 2));
    ASSERT_EQ(t.m(), 8u);
    for (std::size_t m = 0; m < 8; ++m) {
        EXPECT_EQ(t.at(0, m, 0), 1.0f);
        EXPECT_EQ(t.at(1, m, 0), 2.0f);
        EXPECT_EQ(t.at(0, m, 1), 3.0f);
        EXPECT_EQ(t.at(1, m, 1), 4.0f);
    }
}

TEST(InputTensor, ZeroBlocksAndRoundTrip) {
    const InputTensor z = build_input_tensor(IqBlock(IqVector(16), 1), IqBlock(IqVector(16), 2));
    for (float v : z.values()) EXPECT_EQ(v, 0.0f);

    Rng rng(1);
    const InputTensor t = build_input_tensor(IqBlock(complex_noise(32, 1.0, rng), 1), IqBlock(complex_noise(32, 1.0, rng), 2));
    const auto blocks = tensor_to_blocks(t);
    EXPECT_EQ(build_input_tensor(blocks[0], blocks[1]), t);
}

TEST(InputTensor, LengthMismatchIsUsageError) {
    EXPECT_THROW(build_input_tensor(IqBlock(IqVector(8), 1), IqBlock(IqVector(9), 2)), UsageError);
    EXPECT_THROW(build_input_tensor(IqBlock(IqVector(8), 2), IqBlock(IqVector(8), 1)), UsageError);
}

TEST(LabelPhaseShift, ConstructedRotations) {
    Rng rng(2);
    const IqVector ref = random_symbols(1024, ModScheme::DQPSK, rng);
    EXPECT_NEAR(label_phase_shift(rotate(ref, Phase(0.5)), rotate(ref, Phase(0.2)), ref, 1024).radians(), 0.3, 1e-6);
    EXPECT_NEAR(label_phase_shift(ref, ref, ref, 1024).radians(), 0.0, 1e-12);
}

TEST(LabelPhaseShift, NoisyCopiesWithinTwoHundredthsOfRadian) {
    Rng rng(3);
    for (int trial = 0; trial < 200; ++trial) {
        const IqVector ref = random_symbols(1024, kAllSchemes[static_cast<std::size_t>(trial % 4)], rng);
        const double a = rng.uniform(-kPi, kPi), b = rng.uniform(-kPi, kPi);
        IqVector r1 = rotate(ref, Phase(a)), r2 = rotate(ref, Phase(b));
        for (auto& s : r1) s += rng.complex_gaussian(0.01);
        for (auto& s : r2) s += rng.complex_gaussian(0.01);
        EXPECT_LE(circular_distance(label_phase_shift(r1, r2, ref, 1024).radians(), a - b), 0.02);
    }
}

TEST(LabelPhaseShift, PureNoiseIsRejected) {
    Rng rng(4);
    const IqVector ref = random_symbols(1024, ModScheme::DBPSK, rng);
    EXPECT_THROW(label_phase_shift(complex_noise(1040, 1.0, rng), complex_noise(1040, 1.0, rng), ref, 1024), LabelingError);
}

TEST(AugmentRotation, ZeroAndQuarterTurn) {
    Rng rng(5);
    const IqVector ref = random_symbols(512, ModScheme::D8PSK, rng);
    const CapturePair cap{rotate(ref, Phase(1.0)), rotate(ref, Phase(0.4))};
    const auto [same, l0] = augment_rotation(cap, Phase(0.6), Phase(0.0));
    EXPECT_EQ(same.r1, cap.r1);
    EXPECT_EQ(same.r2, cap.r2);
    EXPECT_EQ(l0.radians(), 0.6);

    const auto [q, lq] = augment_rotation(cap, Phase(0.6), Phase(kPi / 2));
    EXPECT_NEAR(lq.radians(), 0.6 + kPi / 2, 1e-12);
}

TEST(AugmentRotation, RelabelingMatchesAdjustedLabel) {
    Rng rng(6);
    const IqVector ref = random_symbols(1024, ModScheme::DQPSK, rng);
    for (int i = 0; i < 1000; ++i) {
        const CapturePair cap{rotate(ref, Phase(rng.uniform(-kPi, kPi))), rotate(ref, Phase(rng.uniform(-kPi, kPi)))};
        const Phase label = label_phase_shift(cap.r1, cap.r2, ref, 1024);
        const auto [aug, new_label] = augment_rotation(cap, label, rng);
        ASSERT_LE(circular_distance(label_phase_shift(aug.r1, aug.r2, ref, 1024).radians(), new_label.radians()), 1e-6);
    }
}

TEST(SynthesizeCollision, ZeroJammerAndSymmetry) {
    Rng rng(7);
    const CapturePair s{complex_noise(128, 1.0, rng), complex_noise(128, 1.0, rng)};
    const CapturePair z{IqVector(128), IqVector(128)};
    const auto c = synthesize_collision(s, Phase(0.3), z, Phase(-1.0));
    EXPECT_EQ(c.capture.r1, s.r1);
    EXPECT_EQ(c.capture.r2, s.r2);
    EXPECT_FLOAT_EQ(c.phi_1, -1.0f);
    EXPECT_FLOAT_EQ(c.phi_2, 0.3f);
    const auto d = synthesize_collision(z, Phase(-1.0), s, Phase(0.3));
    EXPECT_EQ(d.phi_1, c.phi_1);
    EXPECT_EQ(d.phi_2, c.phi_2);
}

TEST(SynthesizeCollision, PowersAddForUncorrelatedCaptures) {
    Rng rng(8);
    const CapturePair a{complex_noise(20000, 1.0, rng), complex_noise(20000, 1.0, rng)};
    const CapturePair b{complex_noise(20000, 3.0, rng), complex_noise(20000, 3.0, rng)};
    const auto c = synthesize_collision(a, Phase(0.0), b, Phase(1.0));
    EXPECT_NEAR(measure_power(c.capture.r1) / (measure_power(a.r1) + measure_power(b.r1)), 1.0, 0.05);
    EXPECT_THROW(synthesize_collision(a, Phase(0.0), CapturePair{IqVector(5), IqVector(5)}, Phase(0.0)), UsageError);
}

TEST(AssembleDataset, CountsAndSplit) {
    Rng rng(9);
    const DatasetSplit s = assemble_dataset(small_config(100, 100, 100), rng);
    EXPECT_EQ(s.train.size(), 192u);
    EXPECT_EQ(s.val.size(), 48u);
    EXPECT_EQ(s.test.size(), 60u);
    const SplitCounts c = split_counts(3000);
    EXPECT_EQ(c.train, 1920u);
    EXPECT_EQ(c.val, 480u);
    EXPECT_EQ(c.test, 600u);

    std::map<ExampleClass, int> hist;
    for (const auto* set : {&s.train, &s.val, &s.test})
        for (const auto& e : *set) ++hist[class_of(e)];
    EXPECT_EQ(hist[ExampleClass::Noise], 100);
    EXPECT_EQ(hist[ExampleClass::Single], 100);
    EXPECT_EQ(hist[ExampleClass::Collision], 100);
}

TEST(AssembleDataset, LabelInvariants) {
    Rng rng(10);
    const DatasetSplit s = assemble_dataset(small_config(50, 150, 150), rng);
    for (const auto* set : {&s.train, &s.val, &s.test})
        for (const auto& e : *set) {
            switch (class_of(e)) {
                case ExampleClass::Noise:
                    EXPECT_EQ(e.phi_1, 0.0f);
                    EXPECT_EQ(e.phi_2, 0.0f);
                    break;
                case ExampleClass::Single:
                    EXPECT_EQ(e.ind_1, 1);
                    EXPECT_EQ(e.ind_2, 0);
                    EXPECT_EQ(e.phi_2, 0.0f);
                    break;
                case ExampleClass::Collision:
                    EXPECT_LE(e.phi_1, e.phi_2);
                    break;
            }
            EXPECT_GE(e.phi_1, -kPi);
            EXPECT_LT(e.phi_2, kPi);
            for (float v : e.tensor.values()) ASSERT_TRUE(std::isfinite(v));
        }
}

TEST(AssembleDataset, AllNoiseAndZeroClassWarning) {
    Rng rng(11);
    const DatasetSplit s = assemble_dataset(small_config(30, 0, 0), rng);
    for (const auto* set : {&s.train, &s.val, &s.test})
        for (const auto& e : *set) {
            EXPECT_EQ(e.ind_1, 0);
            EXPECT_EQ(e.ind_2, 0);
        }
    EXPECT_EQ(s.warnings.size(), 2u);
}

TEST(AssembleDataset, DeterministicPerSeed) {
    Rng a(12), b(12);
    const DatasetSplit x = assemble_dataset(small_config(20, 20, 20), a);
    const DatasetSplit y = assemble_dataset(small_config(20, 20, 20), b);
    EXPECT_EQ(x.train, y.train);
    EXPECT_EQ(x.test, y.test);
}

// The label of a lone emitter must agree with the phase shift of the gains that produced it.
TEST(AssembleDataset, SingleLabelsMatchInjectedGains) {
    Rng rng(13);
    DatasetConfig cfg;
    for (int i = 0; i < 200; ++i) {
        const IqVector ref = detail::emitter_reference(1024, i % 2 == 1, rng);
        const auto e = detail::record_emitter(ref, 1.0, 2.0, 0.01, cfg, rng);
        ASSERT_LE(circular_distance(e.label.radians(), e.truth.radians()), 0.02);
        // Re-deriving the label from the cut block itself stays within the noise bound.
        ASSERT_LE(circular_distance(std::arg(std::inner_product(e.block.r1.begin(), e.block.r1.end(), e.block.r2.begin(), IqSample{},
                                                                std::plus<>(), [](IqSample a, IqSample b) { return a * std::conj(b); })),
                                    e.label.radians()),
                  0.05);
    }
}

TEST(DatasetFile, RoundTripBitExact) {
    Rng rng(14);
    const DatasetSplit s = assemble_dataset(small_config(10, 10, 10), rng);
    const std::string p = temp_path("roundtrip.jcds");
    write_dataset(p, 128, s);
    const DatasetFile f = read_dataset(p);
    EXPECT_EQ(f.m, 128u);
    ASSERT_EQ(f.examples.size(), 30u);
    const DatasetSplit back = split_examples(f.examples);
    EXPECT_EQ(back.train, s.train);
    EXPECT_EQ(back.val, s.val);
    EXPECT_EQ(back.test, s.test);
    std::filesystem::remove(p);
}

TEST(DatasetFile, TruncatedFileIsFormatError) {
    Rng rng(15);
    const DatasetSplit s = assemble_dataset(small_config(5, 5, 5), rng);
    const std::string p = temp_path("trunc.jcds");
    write_dataset(p, 128, s);
    std::filesystem::resize_file(p, std::filesystem::file_size(p) - 3);
    EXPECT_THROW(read_dataset(p), FormatError);
    std::filesystem::resize_file(p, 10);
    EXPECT_THROW(read_dataset(p), FormatError);
    std::filesystem::remove(p);
}

TEST(DatasetFile, BadMagicAndVersion) {
    const std::string p = temp_path("bad.jcds");
    write_dataset(p, 16, std::vector<LabeledExample>{});
    {
        std::fstream f(p, std::ios::in | std::ios::out | std::ios::binary);
        f.seekp(4);
        f.put(9);
    }
    EXPECT_THROW(read_dataset(p), FormatError);
    {
        std::fstream f(p, std::ios::in | std::ios::out | std::ios::binary);
        f.seekp(0);
        f.put('X');
    }
    EXPECT_THROW(read_dataset(p), FormatError);
    std::filesystem::remove(p);
}

TEST(DatasetFile, EmptyDatasetIsValid) {
    const std::string p = temp_path("empty.jcds");
    write_dataset(p, 128, std::vector<LabeledExample>{});
    const DatasetFile f = read_dataset(p);
    EXPECT_EQ(f.m, 128u);
    EXPECT_TRUE(f.examples.empty());
    std::filesystem::remove(p);
}
