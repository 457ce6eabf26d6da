#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "geotopo/geometry.hpp"
#include "geotopo/voxel.hpp"

namespace geotopo {

// ---------------------------------------------------------------------------
// Procedural phantoms
// ---------------------------------------------------------------------------

enum class PartShape { Ellipsoid, Tube, Torus, Arc, Shell, Box };

/// One solid primitive. `radii` is shape-dependent:
///   ellipsoid/box: semi-axes / half-extents
///   tube: (radius, half-length, unused)          axis-aligned cylinder
///   torus: (major, minor, unused)                around `axis`
///   arc: (arc radius, tube radius, unused)       quarter-arc capsule
///   shell: (inner radius, outer radius, unused)
struct PhantomPart {
    PartShape shape = PartShape::Ellipsoid;
    std::uint32_t channel = 1;
    Vec3 center = Vec3::Zero();
    Vec3 center_jitter = Vec3::Zero();  // gaussian std, world units
    Vec3 radii = Vec3(0.1, 0.1, 0.1);
    double size_jitter = 0.0;           // relative gaussian std on all radii
    Vec3 axis = Vec3(0, 0, 1);
    double rot_jitter = 0.0;            // radians std about a random axis
    double arc_span = 1.5707963267948966;  // arc shape only
};

struct PhantomVariant {
    double prob = 0.0;
    std::vector<PhantomPart> parts;
};

struct PhantomSpec {
    std::uint32_t channels = 2;
    Dim3 dims{32, 32, 32};
    std::uint64_t seed = 0;
    std::vector<PhantomPart> parts;
    std::vector<PhantomVariant> variants;  // at most one is drawn per sample
};

/// Jittered part parameters as actually rasterized, with analytic moments
/// where the shape permits (ellipsoids and boxes).
struct RealizedPart {
    PhantomPart part;       // post-jitter parameters
    Mat3 rotation = Mat3::Identity();
    bool has_analytic_moments = false;
    double mass = 0.0;      // as a fraction of the unit world volume
    Vec3 centroid = Vec3::Zero();
    Mat3 covariance = Mat3::Zero();
};

struct Phantom {
    VoxelMap map;  // one-hot
    std::vector<RealizedPart> parts;
    std::size_t variant_index = 0;  // 0 = none, i>0 = variants[i-1]
};

/// Deterministic in (spec.seed, index). Later parts overwrite earlier ones.
Phantom generate_phantom(const PhantomSpec& spec, std::uint64_t index);

/// Built-in desk-scale families: blobs, twoblob, pair, tubes, tori, shell,
/// annulus. Throws on unknown names.
PhantomSpec phantom_family(const std::string& name, std::uint64_t seed = 0);
std::vector<std::string> phantom_family_names();

// ---------------------------------------------------------------------------
// Fixed encoder / field decoder
// ---------------------------------------------------------------------------

/// Latent grid of logits at 1/factor of the source resolution.
struct Latent {
    VoxelMap logits;            // channels == source channels, probability off
    std::uint32_t factor = 1;
};

constexpr double kEncodeEps = 1e-4;

/// Average-pool by `factor` per channel, then map q -> log(q + eps) - log(1/C).
Latent encode(const VoxelMap& v, std::uint32_t factor);

/// Point-decoded channel probabilities, point-major layout (npoints * C).
struct DecodedField {
    std::vector<double> probs;
    std::size_t npoints = 0;
    std::uint32_t channels = 0;

    double at(std::size_t point, std::uint32_t c) const { return probs[point * channels + c]; }
};

/// Backward map for decode_field: the softmax Jacobian composed with the
/// trilinear adjoint onto the latent grid.
class DecodeHandle {
  public:
    DecodeHandle() = default;

    /// cotangent is point-major (npoints * C); accumulates into grad
    /// (latent-shaped VoxelMap).
    void vjp(const std::vector<double>& cotangent, VoxelMap& grad) const;
    VoxelMap vjp(const std::vector<double>& cotangent) const;

    std::size_t npoints() const { return npoints_; }

  private:
    friend DecodedField decode_field(const Latent&, const std::vector<Vec3>&, double,
                                     DecodeHandle*);
    Dim3 latent_dims_;
    std::uint32_t channels_ = 0;
    std::size_t npoints_ = 0;
    double temperature_ = 1.0;
    std::vector<double> probs_;          // npoints * C
    std::vector<std::uint32_t> corner_;  // npoints * 8, flat latent indices
    std::vector<double> weight_;         // npoints * 8 (zero for padded corners)
};

/// Trilinear interpolation of latent logits at world points followed by a
/// temperature softmax over channels (the neural-field surrogate).
DecodedField decode_field(const Latent& z, const std::vector<Vec3>& points, double temperature,
                          DecodeHandle* handle = nullptr);

/// Decode at every voxel center of `dims`, returning a probability VoxelMap.
VoxelMap decode_full(const Latent& z, const Dim3& dims, double temperature,
                     DecodeHandle* handle = nullptr);

// ---------------------------------------------------------------------------
// Parsing pipelines
// ---------------------------------------------------------------------------

/// Voxel-space parsing: boolean subset then trilinear slices per domain.
struct VParse {
    StructureMap subset;
    Grid3<std::uint8_t> arg_channel;  // winning selected channel per voxel (255 = none)
    std::vector<Substructure> subs;
    std::vector<SampleHandle> handles;
};

VParse v_parse(const VoxelMap& v, const std::vector<bool>& u,
               const std::vector<ControlDomain>& domains);

/// Routes a substructure cotangent back onto the source voxel map (gradient
/// flows into the channel that won the subset max at each touched voxel).
void v_parse_vjp(const VParse& parse, std::size_t domain_index,
                 const std::vector<double>& cotangent, VoxelMap& grad);

/// Latent-space parsing: decode_field at the domain points, then subset.
struct LParse {
    std::vector<Substructure> subs;
    std::vector<DecodeHandle> handles;
    std::vector<std::vector<std::uint8_t>> arg_channel;  // per domain, per point
    std::uint32_t channels = 0;
};

LParse l_parse(const Latent& z, const std::vector<bool>& u,
               const std::vector<ControlDomain>& domains, double temperature);

void l_parse_vjp(const LParse& parse, std::size_t domain_index,
                 const std::vector<double>& cotangent, VoxelMap& grad_logits);

}  // namespace geotopo
