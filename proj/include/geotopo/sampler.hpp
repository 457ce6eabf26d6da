#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "geotopo/surrogate.hpp"
#include "geotopo/topology.hpp"

namespace geotopo {

struct NoiseSchedule {
    std::size_t steps = 0;
    double sigma_max = 0, sigma_min = 0, rho = 1;
    std::vector<double> sigmas;  // sigma_0 = sigma_max ... sigma_{N-1} = sigma_min
};

/// sigma_i = (sigma_max^(1/rho) + i/(N-1) * (sigma_min^(1/rho) - sigma_max^(1/rho)))^rho,
/// endpoints exact.
NoiseSchedule noise_schedule(std::size_t n, double sigma_max, double sigma_min, double rho);

// ---------------------------------------------------------------------------
// Closed-form denoiser over an empirical latent prior
// ---------------------------------------------------------------------------

/// Posterior mean under a point-mass mixture prior: softmax-weighted average
/// of the dataset latents with weights exp(-|z - z_i|^2 / (2 sigma^2)).
VoxelMap empirical_denoiser(const VoxelMap& z, double sigma, const std::vector<VoxelMap>& dataset);

/// Exact Jacobian-transpose product of the denoiser: (1/sigma^2) * Cov_w[z_i]
/// applied to the cotangent. O(|dataset| * latent size).
VoxelMap denoiser_vjp(const VoxelMap& z, double sigma, const std::vector<VoxelMap>& dataset,
                      const VoxelMap& cotangent);

std::vector<double> flatten(const VoxelMap& v);
VoxelMap unflatten(const std::vector<double>& flat, std::uint32_t channels, Dim3 dims);

// ---------------------------------------------------------------------------
// Constraints
// ---------------------------------------------------------------------------

enum class ParsingMode { VFull, LCoarse, LLocal };
enum class GuidanceMode { FullVjp, StopGradient };

struct DomainSource {
    enum class Kind { Explicit, Global, Cartesian, Interface, Curvilinear, Spherical, Cylindrical };
    Kind kind = Kind::Global;
    std::vector<AffineParams> affines;  // Kind::Explicit
    std::vector<bool> affine_valid;     // optional mask aligned with affines
    bool dynamic = false;               // recompute from the evolving sample
    std::vector<bool> selection_b;      // Interface: second structure
    int k_dil = 5;
    Vec3 ref = Vec3(0, 0, 1);
    std::vector<std::size_t> subsample;  // Curvilinear; empty = 5 uniform planes
    std::size_t n_rays = 16, n_z = 4, n_theta = 4, n_query = 64;
    double min_ray_mass = 0.5;
};

constexpr double kTopoTemperature = 4.0;

struct ConstraintSpec {
    std::vector<bool> selection;
    DomainSource domain;
    GridSize grid{16, 16, 16};
    // Per-substructure targets: one entry shared across all domains, or one
    // entry per domain. Empty = no geometric term.
    std::vector<GeometricTarget> geometric;
    std::optional<TopologicalPrior> topological;
    double weight_geo = 1.0;
    double weight_topo = 1.0;
    double temperature = 1.0;  // kTopoTemperature is the usual topological choice
    ParsingMode mode = ParsingMode::LLocal;
};

struct ResolvedDomains {
    std::vector<ControlDomain> domains;
    std::vector<bool> valid;
};

/// Builds the constraint's control domains; data-dependent constructors read
/// `state`. Invalid rays are masked, never dropped, so K stays stable.
ResolvedDomains resolve_domains(const ConstraintSpec& spec, const VoxelMap& state);

// ---------------------------------------------------------------------------
// Guided sampling
// ---------------------------------------------------------------------------

struct SamplerConfig {
    std::size_t steps = 100;
    double sigma_max = 80.0;
    double sigma_min = 1e-2;
    double rho = 1.0;
    double churn = 0.0;
    GuidanceMode guidance = GuidanceMode::FullVjp;
    std::uint64_t seed = 0;
    std::size_t domain_refresh_every = 10;
    double domain_freeze_sigma = 0.05;
    bool store_trajectory = false;
};

struct PotentialEval {
    double loss = 0.0;
    VoxelMap grad;  // latent-shaped d loss / d z0_hat
    std::size_t substructure_count = 0;
};

/// Composite potential (1/K) * sum_k (w_geo * L_geo + w_topo * L_topo) over
/// all constraint substructures, with the gradient pulled back to the latent
/// through the parsing VJPs. `native_dims` fixes the V-parsing decode grid.
PotentialEval composite_potential(const Latent& z0, const Dim3& native_dims,
                                  const std::vector<ConstraintSpec>& constraints,
                                  const std::vector<ResolvedDomains>& resolved);

struct StepLog {
    double sigma = 0.0;
    double loss = 0.0;
    double guidance_norm = 0.0;
};

struct SampleResult {
    VoxelMap probabilities;  // decoded final latent at native resolution
    LabelGrid labels;
    std::vector<StepLog> log;
    std::vector<VoxelMap> trajectory;  // populated when store_trajectory
    VoxelMap final_denoised;           // z0_hat at the last step
};

/// EDM-style reverse diffusion with first-order Euler steps and gradient
/// guidance D_w = D - sigma^2 * grad L. Deterministic given config.seed.
SampleResult sample(const SamplerConfig& config, const std::vector<VoxelMap>& dataset,
                    std::uint32_t latent_factor, const Dim3& native_dims,
                    const std::vector<ConstraintSpec>& constraints);

}  // namespace geotopo
