#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>

#include "doctest.h"
#include "phonssm/data.hpp"
#include "phonssm/errors.hpp"

using namespace phonssm;

namespace {

// hand at a given wrist position/scale; palm size is exactly `scale`
RawSequence synthetic_raw(int frames, double wrist_x, double scale, std::uint64_t seed) {
    RawSequence raw;
    raw.layout = LandmarkLayout::dominant_hand21();
    raw.frames = Tensor({frames, 21, 3});
    Rng rng(seed);
    for (int t = 0; t < frames; ++t) {
        raw.frames.at(t, 0, 0) = wrist_x;
        // knuckles 5,9,13,17 each at distance `scale` from the wrist
        const int bases[4] = {5, 9, 13, 17};
        const double dirs[4][3] = {{1, 0, 0}, {0, 1, 0}, {0, 0, 1}, {-1, 0, 0}};
        for (int b = 0; b < 4; ++b)
            for (int c = 0; c < 3; ++c)
                raw.frames.at(t, bases[b], c) =
                    (c == 0 ? wrist_x : 0.0) + scale * dirs[b][c];
        for (int j = 1; j < 21; ++j) {
            if (j == 5 || j == 9 || j == 13 || j == 17) continue;
            for (int c = 0; c < 3; ++c)
                raw.frames.at(t, j, c) = (c == 0 ? wrist_x : 0.0) +
                                         scale * (0.2 + 0.05 * j) * std::sin(0.3 * j + c + t) +
                                         0.01 * rng.normal();
        }
    }
    return raw;
}

}  // namespace

TEST_CASE("preprocess is the identity on already-normalized input") {
    RawSequence raw = synthetic_raw(30, 0.0, 1.0, 7);
    const LandmarkSequence out = preprocess(raw, 30);
    for (std::size_t i = 0; i < raw.frames.size(); ++i) CHECK(out.coords[i] == raw.frames[i]);
}

TEST_CASE("preprocess resamples with preserved endpoints") {
    RawSequence raw = synthetic_raw(60, 0.4, 2.0, 8);
    const LandmarkSequence out = preprocess(raw, 30);
    CHECK(out.coords.dim(0) == 30);
    // first/last output frames equal the normalized first/last input frames
    const auto normalized_frame = [&](int t) {
        Tensor f({21, 3});
        double palm = 0.0;
        for (int b : {5, 9, 13, 17}) {
            double d2 = 0.0;
            for (int c = 0; c < 3; ++c) {
                const double dv = raw.frames.at(t, b, c) - raw.frames.at(t, 0, c);
                d2 += dv * dv;
            }
            palm += std::sqrt(d2);
        }
        palm /= 4.0;
        for (int j = 0; j < 21; ++j)
            for (int c = 0; c < 3; ++c)
                f.at(j, c) = (raw.frames.at(t, j, c) - raw.frames.at(t, 0, c)) / palm;
        return f;
    };
    const Tensor first = normalized_frame(0), last = normalized_frame(59);
    for (int j = 0; j < 21; ++j)
        for (int c = 0; c < 3; ++c) {
            CHECK(out.coords.at(0, j, c) == first.at(j, c));
            CHECK(out.coords.at(29, j, c) == last.at(j, c));
        }
}

TEST_CASE("preprocess cancels uniform scaling and translation") {
    RawSequence raw = synthetic_raw(17, 0.3, 1.7, 9);
    const LandmarkSequence base = preprocess(raw, 30);
    SUBCASE("scaling by two is bitwise identical") {
        RawSequence scaled = raw;
        for (std::size_t i = 0; i < scaled.frames.size(); ++i) scaled.frames[i] *= 2.0;
        const LandmarkSequence out = preprocess(scaled, 30);
        for (std::size_t i = 0; i < out.coords.size(); ++i) CHECK(out.coords[i] == base.coords[i]);
    }
    SUBCASE("random scale and shift stay within 1e-12") {
        Rng rng(10);
        for (int trial = 0; trial < 5; ++trial) {
            const double alpha = std::exp(rng.uniform(-1.5, 1.5));
            const double shift[3] = {rng.normal(), rng.normal(), rng.normal()};
            RawSequence moved = raw;
            for (int t = 0; t < 17; ++t)
                for (int j = 0; j < 21; ++j)
                    for (int c = 0; c < 3; ++c)
                        moved.frames.at(t, j, c) = alpha * raw.frames.at(t, j, c) + shift[c];
            const LandmarkSequence out = preprocess(moved, 30);
            CHECK(max_abs_diff(out.coords, base.coords) < 1e-12);
        }
    }
}

TEST_CASE("preprocess is idempotent") {
    RawSequence raw = synthetic_raw(42, -0.8, 0.6, 11);
    const LandmarkSequence once = preprocess(raw, 30);
    RawSequence again;
    again.layout = once.layout;
    again.frames = once.coords;
    const LandmarkSequence twice = preprocess(again, 30);
    CHECK(max_abs_diff(once.coords, twice.coords) <= 1e-12);
}

TEST_CASE("preprocess rejects a degenerate palm") {
    RawSequence raw;
    raw.layout = LandmarkLayout::dominant_hand21();
    raw.frames = Tensor({3, 21, 3});  // every landmark at the origin
    CHECK_THROWS_AS(preprocess(raw, 30), degenerate_input);
    raw.frames = Tensor({0, 21, 3});
    CHECK_THROWS_AS(preprocess(raw, 30), std::invalid_argument);
}

TEST_CASE("augmentation contract") {
    Rng rng(12);
    Tensor coords({10, 21, 3});
    for (std::size_t i = 0; i < coords.size(); ++i) coords[i] = rng.normal();
    SUBCASE("zero shift and unit scale is the identity") {
        const Tensor out = augment_shift_scale(coords, 0, 1.0);
        for (std::size_t i = 0; i < coords.size(); ++i) CHECK(out[i] == coords[i]);
    }
    SUBCASE("shift +3 replicates the first frame") {
        const Tensor out = augment_shift_scale(coords, 3, 1.0);
        for (int t = 0; t < 3; ++t)
            for (int j = 0; j < 21; ++j)
                for (int c = 0; c < 3; ++c) CHECK(out.at(t, j, c) == coords.at(0, j, c));
        CHECK(out.at(5, 4, 1) == coords.at(2, 4, 1));
    }
    SUBCASE("scale multiplies every coordinate") {
        const Tensor out = augment_shift_scale(coords, 0, 1.1);
        for (std::size_t i = 0; i < coords.size(); ++i) CHECK(out[i] == coords[i] * 1.1);
    }
    SUBCASE("random draws stay in range") {
        for (int trial = 0; trial < 50; ++trial) {
            const Tensor out = augment(coords, rng);
            CHECK(out.dim(0) == 10);
        }
    }
}

TEST_CASE("dominant hand selection") {
    Tensor seq({5, 75, 3});
    // left hand static at x=1, right hand moving
    for (int t = 0; t < 5; ++t)
        for (int j = 0; j < 21; ++j) {
            seq.at(t, kLeftHandOffset + j, 0) = 1.0;
            seq.at(t, kRightHandOffset + j, 0) = 1.0 + 0.1 * t;
        }
    SUBCASE("the moving hand wins") {
        const Tensor hand = select_dominant_hand(seq);
        CHECK(hand.dim(1) == 21);
        CHECK(hand.at(4, 0, 0) == doctest::Approx(1.4));
    }
    SUBCASE("exact ties go to the right hand") {
        Tensor tied = seq;
        for (int t = 0; t < 5; ++t)
            for (int j = 0; j < 21; ++j) {
                tied.at(t, kLeftHandOffset + j, 0) = 1.0 + 0.1 * t;  // mirror the motion
                tied.at(t, kLeftHandOffset + j, 1) = 5.0;
                tied.at(t, kRightHandOffset + j, 1) = -5.0;
            }
        const Tensor hand = select_dominant_hand(tied);
        CHECK(hand.at(0, 0, 1) == -5.0);
    }
    SUBCASE("all-zero blocks count as missing") {
        Tensor missing_right = seq;
        for (int t = 0; t < 5; ++t)
            for (int j = 0; j < 21; ++j)
                for (int c = 0; c < 3; ++c) missing_right.at(t, kRightHandOffset + j, c) = 0.0;
        const Tensor hand = select_dominant_hand(missing_right);
        CHECK(hand.at(0, 0, 0) == 1.0);  // left block returned
        Tensor none({5, 75, 3});
        CHECK_THROWS_AS(select_dominant_hand(none), degenerate_input);
    }
    SUBCASE("matches a brute-force displacement sum") {
        Rng rng(13);
        Tensor random_seq({6, 75, 3});
        for (std::size_t i = 0; i < random_seq.size(); ++i) random_seq[i] = rng.normal();
        double disp[2] = {0.0, 0.0};
        const int offsets[2] = {kLeftHandOffset, kRightHandOffset};
        for (int h = 0; h < 2; ++h)
            for (int t = 0; t + 1 < 6; ++t)
                for (int j = 0; j < 21; ++j) {
                    double d2 = 0.0;
                    for (int c = 0; c < 3; ++c) {
                        const double dv = random_seq.at(t + 1, offsets[h] + j, c) -
                                          random_seq.at(t, offsets[h] + j, c);
                        d2 += dv * dv;
                    }
                    disp[h] += std::sqrt(d2);
                }
        const int expect_offset = disp[0] > disp[1] ? offsets[0] : offsets[1];
        const Tensor hand = select_dominant_hand(random_seq);
        for (int c = 0; c < 3; ++c) CHECK(hand.at(0, 0, c) == random_seq.at(0, expect_offset, c));
    }
}

TEST_CASE("synthetic generator: split arithmetic and coverage") {
    SUBCASE("full train fraction leaves no unseen tuples") {
        SyntheticSpec spec;
        spec.inventory = {2, 2, 2, 2};
        spec.samples_per_class = 2;
        spec.train_fraction = 1.0;
        spec.frames = 4;
        const SyntheticDataset ds = generate_synthetic(spec);
        CHECK(ds.label_names.size() == 16);
        CHECK(ds.unseen_classes.empty());
        CHECK(ds.test_unseen.records.empty());
    }
    SUBCASE("60 percent of 360 tuples") {
        SyntheticSpec spec;
        spec.seed = 5;
        spec.frames = 4;
        spec.samples_per_class = 1;
        const SyntheticDataset ds = generate_synthetic(spec);
        CHECK(ds.seen_classes.size() == 216);
        CHECK(ds.unseen_classes.size() == 144);
        // every unseen tuple shares each component value with a seen class
        std::set<int> seen_vals[4];
        for (int c : ds.seen_classes)
            for (int a = 0; a < 4; ++a)
                seen_vals[a].insert(ds.class_tuples[static_cast<std::size_t>(c)][static_cast<std::size_t>(a)]);
        for (int c : ds.unseen_classes)
            for (int a = 0; a < 4; ++a)
                CHECK(seen_vals[a].count(
                          ds.class_tuples[static_cast<std::size_t>(c)][static_cast<std::size_t>(a)]) == 1);
    }
    SUBCASE("zero noise duplicates samples of a class") {
        SyntheticSpec spec;
        spec.inventory = {2, 2, 2, 2};
        spec.samples_per_class = 3;
        spec.train_fraction = 1.0;
        spec.noise_sigma = 0.0;
        spec.frames = 5;
        const SyntheticDataset ds = generate_synthetic(spec);
        const auto& r = ds.train.records;
        CHECK(max_abs_diff(r[0].coords, r[1].coords) == 0.0);
        CHECK(max_abs_diff(r[0].coords, r[2].coords) == 0.0);
    }
    SUBCASE("a train fraction that cannot cover all values is invalid") {
        SyntheticSpec spec;
        spec.inventory = {2, 2, 2, 2};
        spec.train_fraction = 1.0 / 16.0;  // a single seen tuple
        spec.frames = 4;
        CHECK_THROWS_AS(generate_synthetic(spec), std::invalid_argument);
    }
    SUBCASE("generation is reproducible") {
        SyntheticSpec spec;
        spec.inventory = {2, 3, 2, 2};
        spec.samples_per_class = 2;
        spec.train_fraction = 1.0;
        spec.frames = 6;
        spec.seed = 99;
        const SyntheticDataset a = generate_synthetic(spec);
        const SyntheticDataset b = generate_synthetic(spec);
        REQUIRE(a.train.records.size() == b.train.records.size());
        for (std::size_t i = 0; i < a.train.records.size(); ++i)
            CHECK(max_abs_diff(a.train.records[i].coords, b.train.records[i].coords) == 0.0);
    }
}

TEST_CASE("class id round trip") {
    const std::array<int, 4> inv = {6, 5, 4, 3};
    for (int c = 0; c < 360; ++c) CHECK(class_id_of(tuple_of_class(c, inv), inv) == c);
    CHECK_THROWS_AS(class_id_of({6, 0, 0, 0}, inv), std::invalid_argument);
}

TEST_CASE("dataset container round trips bit-exactly") {
    SyntheticSpec spec;
    spec.inventory = {2, 2, 2, 2};
    spec.samples_per_class = 2;
    spec.train_fraction = 1.0;
    spec.frames = 4;
    const SyntheticDataset ds = generate_synthetic(spec);
    write_dataset(ds.train, "ds_test_a.bin");
    const DatasetFile loaded = read_dataset("ds_test_a.bin");
    CHECK(loaded.records.size() == ds.train.records.size());
    CHECK(loaded.k == 16);
    CHECK(loaded.has_phon);
    CHECK(loaded.inventory == spec.inventory);
    write_dataset(loaded, "ds_test_b.bin");
    std::ifstream f1("ds_test_a.bin", std::ios::binary), f2("ds_test_b.bin", std::ios::binary);
    std::string b1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
    std::string b2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
    CHECK(b1 == b2);

    SUBCASE("truncation names the byte offset") {
        std::ofstream tr("ds_test_c.bin", std::ios::binary);
        tr.write(b1.data(), static_cast<std::streamsize>(b1.size() - 7));
        tr.close();
        try {
            read_dataset("ds_test_c.bin");
            FAIL("expected format_error");
        } catch (const format_error& e) {
            CHECK(std::string(e.what()).find("byte") != std::string::npos);
        }
        std::remove("ds_test_c.bin");
    }
    SUBCASE("corrupt magic is refused") {
        std::string bad = b1;
        bad[0] = 'X';
        std::ofstream out("ds_test_d.bin", std::ios::binary);
        out.write(bad.data(), static_cast<std::streamsize>(bad.size()));
        out.close();
        CHECK_THROWS_AS(read_dataset("ds_test_d.bin"), format_error);
        std::remove("ds_test_d.bin");
    }
    std::remove("ds_test_a.bin");
    std::remove("ds_test_b.bin");
}

TEST_CASE("empty dataset round trips") {
    DatasetFile empty;
    empty.layout = LandmarkLayout::dominant_hand21();
    empty.t = 4;
    empty.k = 0;
    write_dataset(empty, "ds_test_e.bin");
    const DatasetFile loaded = read_dataset("ds_test_e.bin");
    CHECK(loaded.records.empty());
    std::remove("ds_test_e.bin");
}

TEST_CASE("label map round trip") {
    const std::vector<std::string> names = {"h0_l0_m0_o0", "h0_l0_m0_o1", "zeta"};
    write_label_map(names, "labels_test.tsv");
    CHECK(read_label_map("labels_test.tsv") == names);
    std::remove("labels_test.tsv");
}
