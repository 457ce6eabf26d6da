#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "geotopo/geometry.hpp"

using namespace geotopo;

namespace {

Substructure make_sub(const GridSize& g, const AffineParams& a) {
    Substructure s;
    s.domain = make_domain(g, a);
    s.values = Grid3<double>({g.a, g.b, g.c}, 0.0);
    return s;
}

/// Independent dense-summation oracle (different accumulation path: long
/// double two-pass over explicit coordinates).
struct OracleMoments {
    long double mass_raw = 0;
    Vec3 centroid = Vec3::Zero();
    Mat3 cov = Mat3::Zero();
};

OracleMoments oracle_moments(const Substructure& s) {
    const GridSize& g = s.domain.grid_size;
    OracleMoments o;
    long double cx = 0, cy = 0, cz = 0;
    std::size_t flat = 0;
    for (std::size_t i = 0; i < g.a; ++i)
        for (std::size_t j = 0; j < g.b; ++j)
            for (std::size_t k = 0; k < g.c; ++k, ++flat) {
                const long double w = s.values[flat];
                o.mass_raw += w;
                cx += w * ((i + 0.5L) / g.a);
                cy += w * ((j + 0.5L) / g.b);
                cz += w * ((k + 0.5L) / g.c);
            }
    if (o.mass_raw <= 0) return o;
    o.centroid = Vec3(static_cast<double>(cx / o.mass_raw), static_cast<double>(cy / o.mass_raw),
                      static_cast<double>(cz / o.mass_raw));
    long double acc[3][3] = {};
    flat = 0;
    for (std::size_t i = 0; i < g.a; ++i)
        for (std::size_t j = 0; j < g.b; ++j)
            for (std::size_t k = 0; k < g.c; ++k, ++flat) {
                const long double w = s.values[flat];
                const long double r[3] = {(i + 0.5L) / g.a - o.centroid.x(),
                                          (j + 0.5L) / g.b - o.centroid.y(),
                                          (k + 0.5L) / g.c - o.centroid.z()};
                for (int p = 0; p < 3; ++p)
                    for (int q = 0; q < 3; ++q) acc[p][q] += w * r[p] * r[q];
            }
    for (int p = 0; p < 3; ++p)
        for (int q = 0; q < 3; ++q) o.cov(p, q) = static_cast<double>(acc[p][q] / o.mass_raw);
    return o;
}

Mat3 random_rotation(std::mt19937_64& rng) {
    std::normal_distribution<double> gauss;
    Eigen::Quaterniond q(gauss(rng), gauss(rng), gauss(rng), gauss(rng));
    q.normalize();
    return q.toRotationMatrix();
}

}  // namespace

TEST_CASE("moments on uniform and point substructures") {
    SUBCASE("all-ones 4^3") {
        Substructure s = make_sub({4, 4, 4}, AffineParams::identity());
        for (auto& v : s.values.data()) v = 1.0;
        const GeometricMoments m = moments(s);
        CHECK(m.defined);
        CHECK(m.mass == doctest::Approx(1.0).epsilon(1e-15));
        CHECK((m.centroid - Vec3(0.5, 0.5, 0.5)).norm() < 1e-15);
        // Per-axis variance of centers {1/8, 3/8, 5/8, 7/8} is 15/192.
        CHECK((m.covariance - Mat3(Vec3::Constant(15.0 / 192).asDiagonal())).cwiseAbs().maxCoeff() <
              1e-15);
    }
    SUBCASE("single active voxel of 2^3") {
        Substructure s = make_sub({2, 2, 2}, AffineParams::identity());
        s.values.at(0, 0, 0) = 1.0;
        const GeometricMoments m = moments(s);
        CHECK(m.mass == doctest::Approx(1.0 / 8));
        CHECK((m.centroid - Vec3(0.25, 0.25, 0.25)).norm() < 1e-15);
        CHECK(m.covariance.cwiseAbs().maxCoeff() < 1e-15);
    }
    SUBCASE("empty substructure is undefined") {
        Substructure s = make_sub({3, 3, 3}, AffineParams::identity());
        const GeometricMoments m = moments(s);
        CHECK(m.mass == 0.0);
        CHECK_FALSE(m.defined);
    }
}

TEST_CASE("moments agree with the dense oracle") {
    std::mt19937_64 rng(123);
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    std::uniform_int_distribution<std::size_t> dim(1, 16);
    for (int trial = 0; trial < 100; ++trial) {
        Substructure s = make_sub({dim(rng), dim(rng), dim(rng)}, AffineParams::identity());
        for (auto& v : s.values.data()) v = uni(rng);
        const GeometricMoments m = moments(s);
        const OracleMoments o = oracle_moments(s);
        CHECK(std::abs(m.mass - static_cast<double>(o.mass_raw) / s.domain.grid_size.count()) <
              1e-12);
        CHECK((m.centroid - o.centroid).cwiseAbs().maxCoeff() < 1e-12);
        CHECK((m.covariance - o.cov).cwiseAbs().maxCoeff() < 1e-12);
    }
}

TEST_CASE("scaling invariance of normalized quantities") {
    std::mt19937_64 rng(9);
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    Substructure s = make_sub({6, 5, 4}, AffineParams::identity());
    for (auto& v : s.values.data()) v = uni(rng);
    const GeometricMoments base = moments(s);
    const MomentDecomposition base_dec = decompose(base.covariance);

    for (double kappa : {0.7, 0.25, 1.0}) {
        Substructure scaled = s;
        for (auto& v : scaled.values.data()) v *= kappa;
        const GeometricMoments m = moments(scaled);
        CHECK(m.mass == doctest::Approx(kappa * base.mass).epsilon(1e-12));
        CHECK((m.centroid - base.centroid).cwiseAbs().maxCoeff() < 1e-9);
        const MomentDecomposition dec = decompose(m.covariance);
        CHECK((dec.normalized - base_dec.normalized).cwiseAbs().maxCoeff() < 1e-9);
    }
}

TEST_CASE("decompose") {
    SUBCASE("diag(2,1,1)") {
        const MomentDecomposition d = decompose(Vec3(2, 1, 1).asDiagonal());
        CHECK(d.size == doctest::Approx(4.0));
        CHECK(d.shape[0] == doctest::Approx(0.5).epsilon(1e-6));
        CHECK(d.shape[1] == doctest::Approx(0.25).epsilon(1e-6));
        CHECK(d.shape[2] == doctest::Approx(0.25).epsilon(1e-6));
        // Leading eigenvector is the x axis (up to the deterministic sign fix).
        CHECK(std::abs(d.orientation.col(0).x()) == doctest::Approx(1.0).epsilon(1e-9));
        CHECK(d.orientation.col(0).x() > 0);
    }
    SUBCASE("isotropic ties") {
        const MomentDecomposition d = decompose(3.0 * Mat3::Identity());
        for (int i = 0; i < 3; ++i) CHECK(d.shape[i] == doctest::Approx(1.0 / 3).epsilon(1e-9));
        CHECK((d.orientation.transpose() * d.orientation - Mat3::Identity()).cwiseAbs().maxCoeff() <
              1e-9);
    }
    SUBCASE("zero covariance is epsilon-stabilized, not an error") {
        const MomentDecomposition d = decompose(Mat3::Zero());
        CHECK(d.size == 0.0);
        CHECK(d.normalized.trace() == doctest::Approx(1.0).epsilon(1e-9));
    }
    SUBCASE("trace of normalized covariance is 1") {
        std::mt19937_64 rng(4);
        std::normal_distribution<double> gauss;
        for (int t = 0; t < 20; ++t) {
            Mat3 a;
            for (int i = 0; i < 3; ++i)
                for (int j = 0; j < 3; ++j) a(i, j) = gauss(rng);
            const Mat3 sym = a * a.transpose();
            CHECK(decompose(sym).normalized.trace() == doctest::Approx(1.0).epsilon(1e-6));
        }
    }
    SUBCASE("asymmetric input rejected") {
        Mat3 bad = Mat3::Identity();
        bad(0, 1) = 0.5;
        CHECK_THROWS(decompose(bad));
    }
}

TEST_CASE("local_to_global") {
    GeometricMoments m;
    m.defined = true;
    m.mass = 0.4;
    m.centroid = Vec3(0.5, 0.5, 0.5);
    m.covariance = Vec3(0.02, 0.01, 0.005).asDiagonal();

    SUBCASE("identity centering shift") {
        const GeometricMoments g = local_to_global(m, AffineParams::identity());
        CHECK(g.centroid.norm() < 1e-15);
        CHECK(g.mass == doctest::Approx(0.4));
    }
    SUBCASE("half scale shrinks mass by the determinant") {
        const GeometricMoments g = local_to_global(
            m, AffineParams(Mat3::Identity(), Vec3::Constant(0.5), Vec3::Zero()));
        CHECK(g.mass == doctest::Approx(0.4 / 8));
    }
    SUBCASE("rotation conjugates the covariance") {
        const Mat3 r = Eigen::AngleAxisd(std::numbers::pi / 2, Vec3::UnitZ()).toRotationMatrix();
        const GeometricMoments g = local_to_global(m, AffineParams(r, Vec3::Ones(), Vec3::Zero()));
        CHECK(g.covariance(0, 0) == doctest::Approx(0.01).epsilon(1e-9));
        CHECK(g.covariance(1, 1) == doctest::Approx(0.02).epsilon(1e-9));
        CHECK(g.covariance(2, 2) == doctest::Approx(0.005).epsilon(1e-9));
    }
    SUBCASE("undefined moments propagate") {
        GeometricMoments empty;
        const GeometricMoments g = local_to_global(empty, AffineParams::identity());
        CHECK_FALSE(g.defined);
    }
}

TEST_CASE("geometric_potential fixed point and adaptive weighting") {
    std::mt19937_64 rng(31);
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    Substructure s = make_sub({5, 5, 5}, AffineParams::identity());
    for (auto& v : s.values.data()) v = 0.2 + 0.6 * uni(rng);

    const GeometricMoments g = measure_global(s);
    const MomentDecomposition dec = decompose(g.covariance);

    GeometricTarget target;
    target.mass = g.mass;
    target.centroid = g.centroid;
    target.covariance_n = dec.normalized;
    target.lambda_mass = 1e3;
    target.lambda_centroid = 1e2;
    target.lambda_covariance = 1e1;
    target.mass_threshold = 0.0;

    SUBCASE("measured == target gives zero loss") {
        const PotentialResult r = geometric_potential(s, target);
        CHECK(std::abs(r.loss) < 1e-12);
    }
    SUBCASE("below the mass threshold only the mass term remains") {
        GeometricTarget hard = target;
        hard.mass_threshold = g.mass * 2;  // force the switch
        hard.mass = g.mass + 0.1;
        hard.centroid = g.centroid + Vec3(0.3, 0, 0);
        const PotentialResult r = geometric_potential(s, hard);
        CHECK(r.loss == doctest::Approx(hard.lambda_mass * 0.1 * 0.1).epsilon(1e-9));
    }
    SUBCASE("invalid substructures contribute nothing") {
        Substructure bad = s;
        bad.valid = false;
        GeometricTarget t2 = target;
        t2.mass += 1.0;
        const PotentialResult r = geometric_potential(bad, t2);
        CHECK(r.loss == 0.0);
        for (std::size_t i = 0; i < r.grad.size(); ++i) CHECK(r.grad[i] == 0.0);
    }
    SUBCASE("empty substructure keeps a finite mass gradient") {
        Substructure empty = make_sub({4, 4, 4}, AffineParams::identity());
        GeometricTarget t2 = target;
        t2.mass = 0.5;
        const PotentialResult r = geometric_potential(empty, t2);
        CHECK(r.loss == doctest::Approx(t2.lambda_mass * 0.25));
        CHECK(std::isfinite(r.grad[0]));
        CHECK(r.grad[0] != 0.0);
    }
}

TEST_CASE("geometric_potential gradient matches finite differences") {
    std::mt19937_64 rng(77);
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    std::normal_distribution<double> gauss;

    int checked = 0;
    for (int trial = 0; trial < 100; ++trial) {
        const AffineParams a(random_rotation(rng),
                             Vec3(0.5 + uni(rng), 0.5 + uni(rng), 0.5 + uni(rng)),
                             Vec3(0.2 * gauss(rng), 0.2 * gauss(rng), 0.2 * gauss(rng)));
        Substructure s = make_sub({6, 6, 6}, a);
        for (auto& v : s.values.data()) v = 0.05 + 0.9 * uni(rng);

        GeometricTarget target;
        target.mass = uni(rng) * 2.0;
        target.centroid = Vec3(gauss(rng), gauss(rng), gauss(rng)) * 0.2;
        const Mat3 rot = random_rotation(rng);
        const Mat3 raw =
            rot * Vec3(1.0 + uni(rng), uni(rng) + 0.1, 0.2).asDiagonal() * rot.transpose();
        target.covariance_n = decompose(0.5 * (raw + raw.transpose())).normalized;
        target.lambda_mass = 10.0;
        target.lambda_centroid = 5.0;
        target.lambda_covariance = 2.0;
        target.mass_threshold = 1e-6;  // far from the measured mass

        const PotentialResult r = geometric_potential(s, target);

        // Directional central differences.
        const double h = 1e-6;
        double worst = 0.0;
        for (int dir_trial = 0; dir_trial < 3; ++dir_trial) {
            Grid3<double> dir(s.values.dims(), 0.0);
            for (auto& v : dir.data()) v = gauss(rng);
            Substructure plus = s, minus = s;
            for (std::size_t i = 0; i < dir.size(); ++i) {
                plus.values[i] += h * dir[i];
                minus.values[i] -= h * dir[i];
            }
            const double fd =
                (geometric_potential(plus, target).loss - geometric_potential(minus, target).loss) /
                (2 * h);
            double an = 0;
            for (std::size_t i = 0; i < dir.size(); ++i) an += r.grad[i] * dir[i];
            worst = std::max(worst, std::abs(fd - an) / std::max(1e-8, std::abs(fd)));
        }
        CHECK(worst < 1e-4);
        ++checked;
    }
    CHECK(checked == 100);
}

TEST_CASE("one-sided behavior at the mass threshold switch") {
    // The loss is discontinuous exactly at mass == threshold: the centroid and
    // covariance terms are active at mass >= threshold and off below it.
    Substructure s = make_sub({3, 3, 3}, AffineParams::identity());
    for (auto& v : s.values.data()) v = 0.5;
    const GeometricMoments g = measure_global(s);

    GeometricTarget t;
    t.mass = g.mass;
    t.centroid = g.centroid + Vec3(0.25, 0, 0);
    t.covariance_n = Mat3::Identity() / 3.0;
    t.lambda_mass = 0.0;
    t.lambda_centroid = 3.0;
    t.lambda_covariance = 0.0;
    t.mass_threshold = g.mass;  // exactly at the switch

    const double at = geometric_potential(s, t).loss;
    CHECK(at == doctest::Approx(3.0 * 0.25 * 0.25 / 3.0));  // active at equality

    t.mass_threshold = std::nextafter(g.mass, 1.0);
    CHECK(geometric_potential(s, t).loss == 0.0);  // off just above
}
