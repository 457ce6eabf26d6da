#pragma once

#include <array>
#include <optional>
#include <vector>

#include "geotopo/voxel.hpp"

namespace geotopo {

/// Rigid rotation + per-axis scale + translation, world units.
/// R must be a proper rotation (R^T R = I, det R = +1) and s > 0 componentwise.
struct AffineParams {
    Mat3 rotation = Mat3::Identity();
    Vec3 scale = Vec3::Ones();
    Vec3 translation = Vec3::Zero();

    AffineParams() = default;
    AffineParams(const Mat3& r, const Vec3& s, const Vec3& t);

    Mat3 linear() const { return rotation * scale.asDiagonal(); }

    static AffineParams identity() { return {}; }
};

struct GridSize {
    std::size_t a = 1, b = 1, c = 1;
    std::size_t count() const { return a * b * c; }
    bool operator==(const GridSize&) const = default;
};

/// Centered lattice of a*b*c points; along an axis of n points the i-th
/// coordinate is (i + 0.5)/n - 1/2, so the cell footprint spans exactly
/// [-1/2, 1/2] at unit scale and size-1 axes collapse to coordinate 0.
struct TemplateGrid {
    GridSize size;
    std::vector<Vec3> points;  // order ((i * b) + j) * c + k
};

/// Affinely transformed template lattice in world coordinates.
struct ControlDomain {
    GridSize grid_size;
    AffineParams affine;
    std::vector<Vec3> points;
};

TemplateGrid make_template(const GridSize& size);
ControlDomain apply_affine(const TemplateGrid& tmpl, const AffineParams& a);
inline ControlDomain make_domain(const GridSize& size, const AffineParams& a) {
    return apply_affine(make_template(size), a);
}

/// Completes a unit vector u0 to a right-handed orthonormal triple via
/// successive cross products with `ref`; if u0 and ref are nearly parallel the
/// coordinate axis least aligned with u0 is substituted.
std::pair<Vec3, Vec3> orthonormalize(const Vec3& u0, const Vec3& ref);

/// Propagates the initial frame (f2, f3) along unit tangents by rotating each
/// step with the Rodrigues formula about tangent[i-1] x tangent[i]; parallel
/// consecutive tangents copy the frame forward.
std::pair<std::vector<Vec3>, std::vector<Vec3>> parallel_transport(
    const std::vector<Vec3>& tangents, const Vec3& f2_0, const Vec3& f3_0);

AffineParams global_domain();

/// Axis-aligned bounding box of the structure binarized at 0.9; t is the box
/// center and s the per-axis box extent (the unit template footprint maps onto
/// the box exactly).
AffineParams cartesian_domain(const VoxelMap& v, const std::vector<bool>& u);

struct InterfaceDomains {
    AffineParams a;
    AffineParams b;
    Vec3 interface_axis;  // unit vector from centroid A toward centroid B
};

/// Interface region between two structures: dilate both by a k_dil max-pool,
/// combine with a voxelwise min, and orient the shared frame along the line
/// between the masked centroids. Scale follows the native-pitch rule
/// s = (a/H, b/W, c/D).
InterfaceDomains interface_domain(const VoxelMap& v, const std::vector<bool>& u_a,
                                  const std::vector<bool>& u_b, const GridSize& grid,
                                  int k_dil = 5, const Vec3& ref = Vec3(0, 0, 1));

struct Centerline {
    std::vector<Vec3> points;  // ordered polyline, world units
    bool tubularity_warning = false;
};

/// Distance-transform ridge centerline: the two mutually farthest interior
/// voxels are joined by a shortest path weighted by 1/(EDT + eps) and smoothed
/// with a 5-point moving average. Input must be one 26-connected component.
Centerline skeletonize(const BinaryMap& b);

/// Exact Euclidean distance transform (distance to the nearest zero voxel, in
/// voxel units; volume border counts as background).
Grid3<double> distance_transform(const BinaryMap& b);

struct FramedDomain {
    AffineParams affine;
    bool valid = true;
};

std::vector<AffineParams> curvilinear_domains(const VoxelMap& v, const std::vector<bool>& u,
                                              const GridSize& grid,
                                              const std::vector<std::size_t>& subsample_indices,
                                              const Vec3& ref = Vec3(0, 0, 1),
                                              Centerline* centerline_out = nullptr);

/// Evenly distributed unit directions (golden-angle azimuth, uniform z strips).
std::vector<Vec3> fibonacci_lattice(std::size_t n);

std::vector<FramedDomain> spherical_domains(const VoxelMap& v, const std::vector<bool>& u,
                                            const GridSize& grid, std::size_t n_rays,
                                            std::size_t n_query, const Vec3& ref = Vec3(0, 0, 1),
                                            double min_ray_mass = 0.5);

std::vector<FramedDomain> cylindrical_domains(const VoxelMap& v, const std::vector<bool>& u,
                                              const GridSize& grid, std::size_t n_z,
                                              std::size_t n_theta, std::size_t n_query,
                                              const Vec3& ref = Vec3(0, 0, 1),
                                              double min_ray_mass = 0.5);

}  // namespace geotopo
