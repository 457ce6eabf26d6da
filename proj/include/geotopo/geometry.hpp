#pragma once

#include "geotopo/domains.hpp"
#include "geotopo/grid.hpp"
#include "geotopo/voxel.hpp"

namespace geotopo {

/// Intensity field sliced over a control domain. `values` is (a, b, c) in
/// the domain's grid order; `valid` is false for masked-out domains (e.g.
/// rays that missed the structure), which contribute nothing to losses.
struct Substructure {
    Grid3<double> values;
    ControlDomain domain;
    bool valid = true;
};

enum class MomentFrame { Local, Global };

/// Mass/centroid/covariance triple. Mass is normalized by the domain voxel
/// count; in the local frame the centroid lives in [0,1]^3. `defined` is
/// false for zero-mass substructures (centroid and covariance meaningless).
struct GeometricMoments {
    double mass = 0.0;
    Vec3 centroid = Vec3::Zero();
    Mat3 covariance = Mat3::Zero();
    MomentFrame frame = MomentFrame::Local;
    bool defined = false;
};

struct MomentDecomposition {
    double size = 0.0;                    // tr(Sigma)
    Vec3 shape = Vec3::Zero();            // eigenvalues of Sigma^n, descending
    Mat3 orientation = Mat3::Identity();  // matching eigenvectors as columns
    Mat3 normalized = Mat3::Zero();       // Sigma^n, trace 1 up to epsilon
};

struct GeometricTarget {
    double mass = 0.0;
    Vec3 centroid = Vec3::Zero();       // global frame
    Mat3 covariance_n = Mat3::Zero();   // trace-normalized
    double lambda_mass = 0.0;
    double lambda_centroid = 0.0;
    double lambda_covariance = 0.0;
    double mass_threshold = 0.0;        // below it the centroid/covariance terms switch off
};

/// Local-frame moments over normalized coordinates r in [0,1]^3, with mass
/// divided by the domain voxel count.
GeometricMoments moments(const Substructure& s);

constexpr double kCovarianceEps = 1e-9;

/// Size/shape/orientation split of a covariance matrix. The normalized matrix
/// is (Sigma + eps*I) / (tr(Sigma) + 3*eps); eigenvalues are sorted descending
/// with a deterministic sign fix on the eigenvectors.
MomentDecomposition decompose(const Mat3& sigma);

/// Maps local moments into world coordinates through J = R*diag(s):
/// m -> m*|det J|, p -> t + J(p - 1/2), Sigma -> J Sigma J^T.
GeometricMoments local_to_global(const GeometricMoments& m, const AffineParams& a);

struct PotentialResult {
    double loss = 0.0;
    Grid3<double> grad;  // d loss / d substructure value, dense
};

/// Weighted MSE against the target in the global frame with closed-form
/// gradients. The centroid and covariance terms are active only when the
/// global mass is >= mass_threshold and strictly positive (one-sided switch);
/// MSE means are taken over entries (1 for mass, 3 for centroid, 9 for the
/// normalized covariance). Invalid substructures return zero loss and grad.
PotentialResult geometric_potential(const Substructure& s, const GeometricTarget& target);

/// Global-frame measurement convenience: moments -> local_to_global.
GeometricMoments measure_global(const Substructure& s);

}  // namespace geotopo
