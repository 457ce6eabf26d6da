#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <random>

#include "geotopo/domains.hpp"
#include "geotopo/gvox.hpp"
#include "geotopo/voxel.hpp"

using namespace geotopo;

TEST_CASE("one_hot_encode basics") {
    LabelGrid labels;
    labels.labels = Grid3<std::uint8_t>({2, 2, 2}, 0);
    labels.num_classes = 2;

    VoxelMap v = one_hot_encode(labels, 2);
    CHECK(v.probability());
    for (std::size_t i = 0; i < 8; ++i) {
        CHECK(v.channel(0)[i] == 1.0);
        CHECK(v.channel(1)[i] == 0.0);
    }

    labels.labels[3] = 7;
    CHECK_THROWS_AS(one_hot_encode(labels, 2), std::out_of_range);
}

TEST_CASE("one_hot_encode checkerboard channel sums") {
    LabelGrid labels;
    labels.labels = Grid3<std::uint8_t>({4, 4, 4}, 0);
    // Brute-force count of parity-on voxels fixes the expected sums.
    std::size_t expected1 = 0;
    for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t j = 0; j < 4; ++j)
            for (std::size_t k = 0; k < 4; ++k) {
                const std::uint8_t c = static_cast<std::uint8_t>((i + j + k) % 2);
                labels.labels.at(i, j, k) = c;
                if (c == 1) ++expected1;
            }
    CHECK(expected1 == 32);

    VoxelMap v = one_hot_encode(labels, 2);
    double s0 = 0, s1 = 0;
    for (std::size_t i = 0; i < 64; ++i) {
        s0 += v.channel(0)[i];
        s1 += v.channel(1)[i];
    }
    CHECK(s0 == 32.0);
    CHECK(s1 == 32.0);
}

TEST_CASE("argmax re-encode is idempotent") {
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    VoxelMap probs(3, {3, 3, 3});
    for (std::size_t i = 0; i < 27; ++i) {
        double total = 0;
        for (int c = 0; c < 3; ++c) {
            probs.channel(c)[i] = uni(rng) + 1e-3;
            total += probs.channel(c)[i];
        }
        for (int c = 0; c < 3; ++c) probs.channel(c)[i] /= total;
    }
    const LabelGrid a = probs.argmax();
    const LabelGrid b = one_hot_encode(a, 3).argmax();
    CHECK(a.labels.data() == b.labels.data());
}

TEST_CASE("softmax_channels values and invariants") {
    VoxelMap logits(2, {1, 1, 1});
    logits.channel(0)[0] = 2.0;
    logits.channel(1)[0] = 0.0;

    VoxelMap p = softmax_channels(logits, 1.0);
    CHECK(p.channel(0)[0] == doctest::Approx(0.8808).epsilon(1e-4));
    CHECK(p.channel(1)[0] == doctest::Approx(0.1192).epsilon(1e-4));

    SUBCASE("uniform logits give 1/C at any temperature") {
        VoxelMap u(4, {2, 1, 1});
        for (int c = 0; c < 4; ++c) u.channel(c)[0] = 3.7, u.channel(c)[1] = -1.2;
        for (double tau : {0.5, 1.0, 25.0}) {
            VoxelMap q = softmax_channels(u, tau);
            for (int c = 0; c < 4; ++c)
                for (int i = 0; i < 2; ++i) CHECK(q.channel(c)[i] == doctest::Approx(0.25));
        }
    }

    SUBCASE("high temperature approaches one-hot argmax") {
        VoxelMap q = softmax_channels(logits, 100.0);
        CHECK(q.channel(1)[0] < 1e-8);
        CHECK(q.channel(0)[0] > 1.0 - 1e-8);
    }

    SUBCASE("rows sum to one for random finite inputs") {
        std::mt19937_64 rng(11);
        std::normal_distribution<double> gauss(0.0, 30.0);
        VoxelMap r(5, {4, 3, 2});
        for (int c = 0; c < 5; ++c)
            for (auto& v : r.channel(c).data()) v = gauss(rng);
        VoxelMap q = softmax_channels(r, 12.0);
        for (std::size_t i = 0; i < r.dims().count(); ++i) {
            double sum = 0;
            for (int c = 0; c < 5; ++c) sum += q.channel(c)[i];
            CHECK(std::abs(sum - 1.0) < 1e-9);
        }
    }

    SUBCASE("non-finite input rejected") {
        logits.channel(0)[0] = std::numeric_limits<double>::infinity();
        CHECK_THROWS(softmax_channels(logits, 1.0));
    }
    CHECK_THROWS(softmax_channels(logits, 0.0));
}

TEST_CASE("boolean_subset union via maximum") {
    VoxelMap v(2, {1, 1, 1});
    v.channel(0)[0] = 0.3;
    v.channel(1)[0] = 0.9;

    CHECK(boolean_subset(v, {true, true})[0] == 0.9);
    CHECK(boolean_subset(v, {false, true})[0] == 0.9);
    CHECK(boolean_subset(v, {true, false})[0] == 0.3);
    CHECK(boolean_subset(v, {false, false})[0] == 0.0);
    CHECK_THROWS(boolean_subset(v, {true}));
}

TEST_CASE("binarize") {
    StructureMap ones({2, 2, 2}, 1.0);
    StructureMap half({2, 2, 2}, 0.5);
    BinaryMap b1 = binarize(ones);
    BinaryMap b2 = binarize(half);
    for (std::size_t i = 0; i < 8; ++i) {
        CHECK(b1[i] == 1);
        CHECK(b2[i] == 0);
    }
    CHECK(kBinarizeThreshold == 0.9);
    CHECK_THROWS(binarize(ones, 1.5));
}

TEST_CASE("trilinear_sample interpolation nodes and padding") {
    StructureMap s({4, 4, 4}, 0.0);
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    for (auto& v : s.data()) v = uni(rng);

    SUBCASE("voxel centers reproduce stored values bit-for-bit") {
        std::vector<Vec3> pts;
        for (std::size_t i = 0; i < 4; ++i)
            for (std::size_t j = 0; j < 4; ++j)
                for (std::size_t k = 0; k < 4; ++k) pts.push_back(voxel_center(s.dims(), i, j, k));
        const auto vals = trilinear_sample(s, pts);
        std::size_t flat = 0;
        for (std::size_t i = 0; i < 4; ++i)
            for (std::size_t j = 0; j < 4; ++j)
                for (std::size_t k = 0; k < 4; ++k, ++flat) CHECK(vals[flat] == s.at(i, j, k));
    }

    SUBCASE("midpoint of two adjacent centers averages them") {
        const Vec3 a = voxel_center(s.dims(), 1, 2, 3);
        const Vec3 b = voxel_center(s.dims(), 2, 2, 3);
        const auto vals = trilinear_sample(s, {0.5 * (a + b)});
        CHECK(vals[0] == doctest::Approx(0.5 * (s.at(1, 2, 3) + s.at(2, 2, 3))).epsilon(1e-12));
    }

    SUBCASE("far outside the cube reads zero") {
        const auto vals = trilinear_sample(s, {Vec3(10, 10, 10)});
        CHECK(vals[0] == 0.0);
    }

    SUBCASE("linearity in the grid") {
        StructureMap s2({4, 4, 4}, 0.0);
        for (auto& v : s2.data()) v = uni(rng);
        std::vector<Vec3> pts;
        std::uniform_real_distribution<double> coord(-0.6, 0.6);
        for (int p = 0; p < 32; ++p) pts.emplace_back(coord(rng), coord(rng), coord(rng));

        StructureMap mix({4, 4, 4}, 0.0);
        const double a = 0.37, b = -1.25;
        for (std::size_t i = 0; i < mix.size(); ++i) mix[i] = a * s[i] + b * s2[i];

        const auto va = trilinear_sample(s, pts);
        const auto vb = trilinear_sample(s2, pts);
        const auto vm = trilinear_sample(mix, pts);
        for (std::size_t p = 0; p < pts.size(); ++p)
            CHECK(vm[p] == doctest::Approx(a * va[p] + b * vb[p]).epsilon(1e-13));
    }

    SUBCASE("VJP matches central finite differences") {
        std::vector<Vec3> pts;
        std::uniform_real_distribution<double> coord(-0.55, 0.55);
        for (int p = 0; p < 20; ++p) pts.emplace_back(coord(rng), coord(rng), coord(rng));
        SampleHandle handle(s.dims(), pts.size());
        trilinear_sample(s, pts, &handle);

        std::vector<double> cot(pts.size());
        for (auto& g : cot) g = uni(rng) - 0.5;
        const Grid3<double> grad = handle.vjp(cot);

        // Directional check: d/dt [cot . sample(s + t*dir)] == <grad, dir>.
        const double h = 1e-4;
        for (int trial = 0; trial < 10; ++trial) {
            StructureMap dir({4, 4, 4}, 0.0);
            for (auto& v : dir.data()) v = uni(rng) - 0.5;
            StructureMap plus = s, minus = s;
            for (std::size_t i = 0; i < s.size(); ++i) {
                plus[i] += h * dir[i];
                minus[i] -= h * dir[i];
            }
            const auto vp = trilinear_sample(plus, pts);
            const auto vm = trilinear_sample(minus, pts);
            double fd = 0, an = 0;
            for (std::size_t p = 0; p < pts.size(); ++p) fd += cot[p] * (vp[p] - vm[p]);
            fd /= 2 * h;
            for (std::size_t i = 0; i < s.size(); ++i) an += grad[i] * dir[i];
            CHECK(std::abs(fd - an) < 1e-6 * std::max(1.0, std::abs(fd)));
        }
    }
}

TEST_CASE("gvox round trip") {
    const std::string path_labels = "test_roundtrip_labels.gvox";
    const std::string path_values = "test_roundtrip_values.gvox";

    LabelGrid labels;
    labels.labels = Grid3<std::uint8_t>({3, 4, 5}, 0);
    labels.num_classes = 3;
    std::mt19937_64 rng(19);
    for (auto& v : labels.labels.data()) v = static_cast<std::uint8_t>(rng() % 3);
    gvox_write(path_labels, labels);
    const auto back = gvox_read(path_labels);
    REQUIRE(std::holds_alternative<LabelGrid>(back));
    CHECK(std::get<LabelGrid>(back).labels.data() == labels.labels.data());
    CHECK(std::get<LabelGrid>(back).num_classes == 3);

    VoxelMap map(2, {3, 4, 5});
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    for (int c = 0; c < 2; ++c)
        for (auto& v : map.channel(c).data()) v = static_cast<float>(uni(rng));
    gvox_write(path_values, map);
    const auto back2 = gvox_read(path_values);
    REQUIRE(std::holds_alternative<VoxelMap>(back2));
    const VoxelMap& m2 = std::get<VoxelMap>(back2);
    for (int c = 0; c < 2; ++c)
        CHECK(m2.channel(c).data() == map.channel(c).data());

    std::remove(path_labels.c_str());
    std::remove(path_values.c_str());
}
