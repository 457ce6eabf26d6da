#include "geotopo/geometry.hpp"

#include <cmath>
#include <stdexcept>

namespace geotopo {

namespace {

inline Vec3 local_coord(const GridSize& g, std::size_t i, std::size_t j, std::size_t k) {
    return {(static_cast<double>(i) + 0.5) / g.a, (static_cast<double>(j) + 0.5) / g.b,
            (static_cast<double>(k) + 0.5) / g.c};
}

}  // namespace

GeometricMoments moments(const Substructure& s) {
    const GridSize& g = s.domain.grid_size;
    if (s.values.dims().count() != g.count())
        throw std::invalid_argument("moments: substructure shape does not match its domain");

    GeometricMoments out;
    double raw = 0.0;
    Vec3 first = Vec3::Zero();
    Mat3 second = Mat3::Zero();
    std::size_t flat = 0;
    for (std::size_t i = 0; i < g.a; ++i)
        for (std::size_t j = 0; j < g.b; ++j)
            for (std::size_t k = 0; k < g.c; ++k, ++flat) {
                const double w = s.values[flat];
                if (w == 0.0) continue;
                const Vec3 r = local_coord(g, i, j, k);
                raw += w;
                first += w * r;
                second += w * (r * r.transpose());
            }

    out.mass = raw / static_cast<double>(g.count());
    if (raw <= 0.0) return out;  // zero mass: centroid/covariance stay undefined
    out.defined = true;
    out.centroid = first / raw;
    out.covariance = second / raw - out.centroid * out.centroid.transpose();
    return out;
}

MomentDecomposition decompose(const Mat3& sigma) {
    const double scale = std::max(1.0, sigma.cwiseAbs().maxCoeff());
    if ((sigma - sigma.transpose()).cwiseAbs().maxCoeff() > 1e-8 * scale)
        throw std::invalid_argument("decompose: covariance is not symmetric");

    MomentDecomposition out;
    out.size = sigma.trace();
    out.normalized =
        (sigma + kCovarianceEps * Mat3::Identity()) / (out.size + 3.0 * kCovarianceEps);

    Eigen::SelfAdjointEigenSolver<Mat3> eig(out.normalized);
    for (int c = 0; c < 3; ++c) {
        const int src = 2 - c;  // descending
        out.shape[c] = eig.eigenvalues()[src];
        Vec3 v = eig.eigenvectors().col(src);
        for (int r = 0; r < 3; ++r) {
            if (std::abs(v[r]) > 1e-12) {
                if (v[r] < 0) v = -v;
                break;
            }
        }
        out.orientation.col(c) = v;
    }
    return out;
}

GeometricMoments local_to_global(const GeometricMoments& m, const AffineParams& a) {
    if (m.frame != MomentFrame::Local)
        throw std::invalid_argument("local_to_global: moments are already global");
    GeometricMoments out;
    out.frame = MomentFrame::Global;
    const Mat3 jac = a.linear();
    out.mass = m.mass * std::abs(jac.determinant());
    out.defined = m.defined;
    if (!m.defined) return out;
    out.centroid = a.translation + jac * (m.centroid - Vec3::Constant(0.5));
    out.covariance = jac * m.covariance * jac.transpose();
    return out;
}

GeometricMoments measure_global(const Substructure& s) {
    return local_to_global(moments(s), s.domain.affine);
}

PotentialResult geometric_potential(const Substructure& s, const GeometricTarget& target) {
    if (target.lambda_mass < 0 || target.lambda_centroid < 0 || target.lambda_covariance < 0)
        throw std::invalid_argument("geometric_potential: weights must be nonnegative");

    PotentialResult out;
    out.grad = Grid3<double>(s.values.dims(), 0.0);
    if (!s.valid) return out;

    const GridSize& g = s.domain.grid_size;
    const double voxel_count = static_cast<double>(g.count());
    const Mat3 jac = s.domain.affine.linear();
    const double det = std::abs(jac.determinant());

    const GeometricMoments local = moments(s);
    const GeometricMoments global = local_to_global(local, s.domain.affine);

    // Mass term is always on.
    const double dm = global.mass - target.mass;
    out.loss = target.lambda_mass * dm * dm;
    const double g_mass = 2.0 * target.lambda_mass * dm * det / voxel_count;
    for (std::size_t i = 0; i < out.grad.size(); ++i) out.grad[i] = g_mass;

    // Centroid/covariance switch off below the mass threshold (and for empty
    // substructures, whose higher moments are undefined).
    const bool higher_on = local.defined && global.mass >= target.mass_threshold &&
                           (target.lambda_centroid > 0 || target.lambda_covariance > 0);
    if (!higher_on) return out;

    const double raw_mass = local.mass * voxel_count;
    const Vec3 dp = global.centroid - target.centroid;
    const double v = global.covariance.trace();
    const double denom = v + 3.0 * kCovarianceEps;
    const Mat3 sigma_stab = global.covariance + kCovarianceEps * Mat3::Identity();
    const Mat3 sigma_n = sigma_stab / denom;
    const Mat3 ds = sigma_n - target.covariance_n;

    out.loss += target.lambda_centroid * dp.squaredNorm() / 3.0;
    out.loss += target.lambda_covariance * ds.squaredNorm() / 9.0;

    // Adjoints: G_p on the global centroid, G_S on Sigma^n, folded back to the
    // local frame. d p_g/dS_i = J (r_i - p_l)/W;
    // d Sigma_l/dS_i = ((r_i - p_l)(r_i - p_l)^T - Sigma_l)/W.
    const Vec3 g_p = (2.0 * target.lambda_centroid / 3.0) * dp;
    const Mat3 g_sn = (2.0 * target.lambda_covariance / 9.0) * ds;
    const Mat3 b = g_sn / denom - (g_sn.cwiseProduct(sigma_stab).sum() / (denom * denom)) *
                                      Mat3::Identity();
    const Vec3 gp_local = jac.transpose() * g_p;
    const Mat3 c = jac.transpose() * b * jac;
    const double c_dot_sigma = c.cwiseProduct(local.covariance).sum();

    std::size_t flat = 0;
    for (std::size_t i = 0; i < g.a; ++i)
        for (std::size_t j = 0; j < g.b; ++j)
            for (std::size_t k = 0; k < g.c; ++k, ++flat) {
                const Vec3 d = local_coord(g, i, j, k) - local.centroid;
                out.grad[flat] += (gp_local.dot(d) + d.dot(c * d) - c_dot_sigma) / raw_mass;
            }
    return out;
}

}  // namespace geotopo
