#include "geotopo/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

namespace geotopo {

NoiseSchedule noise_schedule(std::size_t n, double sigma_max, double sigma_min, double rho) {
    if (n < 2) throw std::invalid_argument("noise_schedule: need at least two steps");
    if (!(sigma_min > 0.0) || !(sigma_max > sigma_min))
        throw std::invalid_argument("noise_schedule: need 0 < sigma_min < sigma_max");
    if (!(rho > 0.0)) throw std::invalid_argument("noise_schedule: rho must be positive");

    NoiseSchedule out;
    out.steps = n;
    out.sigma_max = sigma_max;
    out.sigma_min = sigma_min;
    out.rho = rho;
    out.sigmas.resize(n);
    const double hi = std::pow(sigma_max, 1.0 / rho);
    const double lo = std::pow(sigma_min, 1.0 / rho);
    for (std::size_t i = 0; i < n; ++i) {
        const double t = static_cast<double>(i) / static_cast<double>(n - 1);
        out.sigmas[i] = std::pow(hi + t * (lo - hi), rho);
    }
    out.sigmas.front() = sigma_max;  // endpoints exact
    out.sigmas.back() = sigma_min;
    return out;
}

// ---------------------------------------------------------------------------
// Denoiser
// ---------------------------------------------------------------------------

std::vector<double> flatten(const VoxelMap& v) {
    std::vector<double> out;
    out.reserve(static_cast<std::size_t>(v.channels()) * v.dims().count());
    for (std::uint32_t c = 0; c < v.channels(); ++c)
        out.insert(out.end(), v.channel(c).data().begin(), v.channel(c).data().end());
    return out;
}

VoxelMap unflatten(const std::vector<double>& flat, std::uint32_t channels, Dim3 dims) {
    if (flat.size() != static_cast<std::size_t>(channels) * dims.count())
        throw std::invalid_argument("unflatten: size mismatch");
    VoxelMap out(channels, dims);
    const std::size_t n = dims.count();
    for (std::uint32_t c = 0; c < channels; ++c)
        std::copy(flat.begin() + c * n, flat.begin() + (c + 1) * n,
                  out.channel(c).data().begin());
    return out;
}

namespace {

struct FlatAtoms {
    std::vector<std::vector<double>> atoms;
    std::uint32_t channels = 0;
    Dim3 dims;

    static FlatAtoms from(const std::vector<VoxelMap>& dataset) {
        if (dataset.empty()) throw std::invalid_argument("empirical_denoiser: empty dataset");
        FlatAtoms out;
        out.channels = dataset.front().channels();
        out.dims = dataset.front().dims();
        out.atoms.reserve(dataset.size());
        for (const VoxelMap& v : dataset) {
            if (v.channels() != out.channels || !(v.dims() == out.dims))
                throw std::invalid_argument("empirical_denoiser: inconsistent dataset shapes");
            out.atoms.push_back(flatten(v));
        }
        return out;
    }
};

std::vector<double> mixture_weights(const std::vector<double>& z, const FlatAtoms& data,
                                    double sigma) {
    if (!(sigma > 0.0)) throw std::invalid_argument("empirical_denoiser: sigma must be positive");
    const double inv = 1.0 / (2.0 * sigma * sigma);
    std::vector<double> logw(data.atoms.size());
    for (std::size_t i = 0; i < data.atoms.size(); ++i) {
        double d2 = 0.0;
        const auto& a = data.atoms[i];
        for (std::size_t j = 0; j < z.size(); ++j) {
            const double d = z[j] - a[j];
            d2 += d * d;
        }
        logw[i] = -d2 * inv;
    }
    const double m = *std::max_element(logw.begin(), logw.end());
    double denom = 0.0;
    for (double& w : logw) {
        w = std::exp(w - m);
        denom += w;
    }
    for (double& w : logw) w /= denom;
    return logw;
}

std::vector<double> denoise_flat(const std::vector<double>& z, const FlatAtoms& data,
                                 double sigma) {
    const std::vector<double> w = mixture_weights(z, data, sigma);
    std::vector<double> out(z.size(), 0.0);
    for (std::size_t i = 0; i < data.atoms.size(); ++i) {
        const auto& a = data.atoms[i];
        const double wi = w[i];
        if (wi == 0.0) continue;
        for (std::size_t j = 0; j < out.size(); ++j) out[j] += wi * a[j];
    }
    return out;
}

std::vector<double> denoiser_vjp_flat(const std::vector<double>& z, const FlatAtoms& data,
                                      double sigma, const std::vector<double>& g) {
    const std::vector<double> w = mixture_weights(z, data, sigma);
    std::vector<double> z0(z.size(), 0.0);
    for (std::size_t i = 0; i < data.atoms.size(); ++i)
        for (std::size_t j = 0; j < z0.size(); ++j) z0[j] += w[i] * data.atoms[i][j];

    // J^T g = (1/sigma^2) sum_i w_i <z_i - z0, g> (z_i - z0)
    std::vector<double> out(z.size(), 0.0);
    const double inv_s2 = 1.0 / (sigma * sigma);
    for (std::size_t i = 0; i < data.atoms.size(); ++i) {
        const auto& a = data.atoms[i];
        double dot = 0.0;
        for (std::size_t j = 0; j < z.size(); ++j) dot += (a[j] - z0[j]) * g[j];
        const double scale = w[i] * dot * inv_s2;
        if (scale == 0.0) continue;
        for (std::size_t j = 0; j < z.size(); ++j) out[j] += scale * (a[j] - z0[j]);
    }
    return out;
}

}  // namespace

VoxelMap empirical_denoiser(const VoxelMap& z, double sigma,
                            const std::vector<VoxelMap>& dataset) {
    const FlatAtoms data = FlatAtoms::from(dataset);
    return unflatten(denoise_flat(flatten(z), data, sigma), data.channels, data.dims);
}

VoxelMap denoiser_vjp(const VoxelMap& z, double sigma, const std::vector<VoxelMap>& dataset,
                      const VoxelMap& cotangent) {
    const FlatAtoms data = FlatAtoms::from(dataset);
    return unflatten(denoiser_vjp_flat(flatten(z), data, sigma, flatten(cotangent)),
                     data.channels, data.dims);
}

// ---------------------------------------------------------------------------
// Domain resolution
// ---------------------------------------------------------------------------

namespace {

std::vector<std::size_t> uniform_indices(std::size_t n, std::size_t count) {
    std::vector<std::size_t> idx;
    if (n == 0 || count == 0) return idx;
    if (count == 1) {
        idx.push_back(n / 2);
        return idx;
    }
    for (std::size_t p = 0; p < count; ++p) idx.push_back(p * (n - 1) / (count - 1));
    return idx;
}

}  // namespace

ResolvedDomains resolve_domains(const ConstraintSpec& spec, const VoxelMap& state) {
    using Kind = DomainSource::Kind;
    ResolvedDomains out;
    const TemplateGrid tmpl = make_template(spec.grid);

    const auto push = [&](const AffineParams& a, bool valid) {
        out.domains.push_back(apply_affine(tmpl, a));
        out.valid.push_back(valid);
    };

    switch (spec.domain.kind) {
        case Kind::Explicit:
            for (std::size_t i = 0; i < spec.domain.affines.size(); ++i)
                push(spec.domain.affines[i],
                     spec.domain.affine_valid.empty() || spec.domain.affine_valid[i]);
            break;
        case Kind::Global:
            push(global_domain(), true);
            break;
        case Kind::Cartesian:
            push(cartesian_domain(state, spec.selection), true);
            break;
        case Kind::Interface: {
            const InterfaceDomains d = interface_domain(state, spec.selection,
                                                        spec.domain.selection_b, spec.grid,
                                                        spec.domain.k_dil, spec.domain.ref);
            push(d.a, true);
            push(d.b, true);
            break;
        }
        case Kind::Curvilinear: {
            Centerline center;
            std::vector<std::size_t> idx = spec.domain.subsample;
            if (idx.empty()) {
                // Default: 5 uniformly spaced planes along the centerline.
                const auto probe = curvilinear_domains(state, spec.selection, spec.grid, {0},
                                                       spec.domain.ref, &center);
                (void)probe;
                idx = uniform_indices(center.points.size(), 5);
            }
            for (const AffineParams& a :
                 curvilinear_domains(state, spec.selection, spec.grid, idx, spec.domain.ref))
                push(a, true);
            break;
        }
        case Kind::Spherical:
            for (const FramedDomain& f :
                 spherical_domains(state, spec.selection, spec.grid, spec.domain.n_rays,
                                   spec.domain.n_query, spec.domain.ref,
                                   spec.domain.min_ray_mass))
                push(f.affine, f.valid);
            break;
        case Kind::Cylindrical:
            for (const FramedDomain& f :
                 cylindrical_domains(state, spec.selection, spec.grid, spec.domain.n_z,
                                     spec.domain.n_theta, spec.domain.n_query, spec.domain.ref,
                                     spec.domain.min_ray_mass))
                push(f.affine, f.valid);
            break;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Composite potential
// ---------------------------------------------------------------------------

PotentialEval composite_potential(const Latent& z0, const Dim3& native_dims,
                                  const std::vector<ConstraintSpec>& constraints,
                                  const std::vector<ResolvedDomains>& resolved) {
    if (constraints.size() != resolved.size())
        throw std::invalid_argument("composite_potential: constraint/domain count mismatch");

    PotentialEval out;
    out.grad = VoxelMap(z0.logits.channels(), z0.logits.dims());
    std::size_t total_k = 0;
    for (const ResolvedDomains& r : resolved) total_k += r.domains.size();
    out.substructure_count = total_k;
    if (total_k == 0) return out;
    const double inv_k = 1.0 / static_cast<double>(total_k);

    for (std::size_t ci = 0; ci < constraints.size(); ++ci) {
        const ConstraintSpec& spec = constraints[ci];
        const ResolvedDomains& doms = resolved[ci];
        if (doms.domains.empty()) continue;

        // Per-substructure evaluation shared by both parse routes.
        const auto eval_sub = [&](Substructure& sub, std::size_t k,
                                  std::vector<double>& cot) -> double {
            double loss = 0.0;
            cot.assign(sub.values.size(), 0.0);
            if (!sub.valid) return 0.0;
            if (!spec.geometric.empty()) {
                const GeometricTarget& target =
                    spec.geometric[std::min(k, spec.geometric.size() - 1)];
                const PotentialResult r = geometric_potential(sub, target);
                loss += spec.weight_geo * r.loss;
                for (std::size_t i = 0; i < cot.size(); ++i)
                    cot[i] += spec.weight_geo * inv_k * r.grad[i];
            }
            if (spec.topological) {
                const PersistenceDiagram d = persistent_homology(sub.values);
                const DiagramPartition part = partition_diagram(d, *spec.topological);
                const TopoPotentialResult r = topological_potential(sub.values, part);
                loss += spec.weight_topo * r.loss;
                for (const auto& [idx, g] : r.grad) cot[idx] += spec.weight_topo * inv_k * g;
            }
            return loss;
        };

        if (spec.mode == ParsingMode::VFull) {
            DecodeHandle decode_handle;
            const VoxelMap decoded =
                decode_full(z0, native_dims, spec.temperature, &decode_handle);
            VParse parse = v_parse(decoded, spec.selection, doms.domains);
            VoxelMap grad_v(decoded.channels(), decoded.dims());
            std::vector<double> cot;
            for (std::size_t k = 0; k < parse.subs.size(); ++k) {
                parse.subs[k].valid = doms.valid[k];
                out.loss += inv_k * eval_sub(parse.subs[k], k, cot);
                v_parse_vjp(parse, k, cot, grad_v);
            }
            // Pull the voxel-map gradient back through the decoder.
            std::vector<double> cot_points(native_dims.count() * decoded.channels(), 0.0);
            for (std::uint32_t c = 0; c < decoded.channels(); ++c) {
                const auto& g = grad_v.channel(c).data();
                for (std::size_t p = 0; p < g.size(); ++p)
                    cot_points[p * decoded.channels() + c] = g[p];
            }
            decode_handle.vjp(cot_points, out.grad);
        } else {
            LParse parse = l_parse(z0, spec.selection, doms.domains, spec.temperature);
            std::vector<double> cot;
            for (std::size_t k = 0; k < parse.subs.size(); ++k) {
                parse.subs[k].valid = doms.valid[k];
                out.loss += inv_k * eval_sub(parse.subs[k], k, cot);
                l_parse_vjp(parse, k, cot, out.grad);
            }
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Sampling loop
// ---------------------------------------------------------------------------

SampleResult sample(const SamplerConfig& config, const std::vector<VoxelMap>& dataset,
                    std::uint32_t latent_factor, const Dim3& native_dims,
                    const std::vector<ConstraintSpec>& constraints) {
    const FlatAtoms data = FlatAtoms::from(dataset);
    const NoiseSchedule schedule =
        noise_schedule(config.steps, config.sigma_max, config.sigma_min, config.rho);

    std::mt19937_64 rng(config.seed);
    std::normal_distribution<double> gauss;
    const std::size_t dim = static_cast<std::size_t>(data.channels) * data.dims.count();
    std::vector<double> z(dim);
    for (double& v : z) v = config.sigma_max * gauss(rng);

    const bool any_dynamic = std::any_of(constraints.begin(), constraints.end(),
                                         [](const ConstraintSpec& c) { return c.domain.dynamic; });
    std::vector<ResolvedDomains> resolved(constraints.size());

    const auto needs_state = [](DomainSource::Kind k) {
        return k != DomainSource::Kind::Explicit && k != DomainSource::Kind::Global;
    };
    const auto refresh_domains = [&](const std::vector<double>& z0_flat, bool force) {
        VoxelMap decoded;
        bool have_decoded = false;
        for (std::size_t i = 0; i < constraints.size(); ++i) {
            const bool is_dynamic = constraints[i].domain.dynamic;
            if (!force && !is_dynamic) continue;
            if (!resolved[i].domains.empty() && !is_dynamic) continue;
            if (!have_decoded && needs_state(constraints[i].domain.kind)) {
                Latent lat;
                lat.factor = latent_factor;
                lat.logits = unflatten(z0_flat, data.channels, data.dims);
                decoded = decode_full(lat, native_dims, 1.0);
                have_decoded = true;
            }
            try {
                resolved[i] = resolve_domains(constraints[i], decoded);
            } catch (const std::exception&) {
                // Constructor not applicable to the current prediction (e.g. no
                // voxel clears the binarization threshold yet): keep the stale
                // domains, or none, until a later refresh succeeds.
            }
        }
    };

    SampleResult result;
    result.log.reserve(config.steps);

    for (std::size_t i = 0; i + 1 < config.steps; ++i) {
        double sigma = schedule.sigmas[i];
        const double sigma_next = schedule.sigmas[i + 1];

        // Churn noise is drawn before guidance evaluation for reproducibility.
        if (config.churn > 0.0) {
            const double gamma = std::min(config.churn, std::sqrt(2.0) - 1.0);
            const double sigma_hat = sigma * (1.0 + gamma);
            const double extra = std::sqrt(std::max(0.0, sigma_hat * sigma_hat - sigma * sigma));
            for (double& v : z) v += extra * gauss(rng);
            sigma = sigma_hat;
        }

        const std::vector<double> z0 = denoise_flat(z, data, sigma);

        double loss = 0.0;
        double guidance_norm = 0.0;
        std::vector<double> target = z0;  // D^w
        if (!constraints.empty()) {
            if (i == 0)
                refresh_domains(z0, true);
            else if (any_dynamic && i % config.domain_refresh_every == 0 &&
                     sigma > config.domain_freeze_sigma)
                refresh_domains(z0, false);

            Latent lat;
            lat.factor = latent_factor;
            lat.logits = unflatten(z0, data.channels, data.dims);
            const PotentialEval pe =
                composite_potential(lat, native_dims, constraints, resolved);
            loss = pe.loss;

            std::vector<double> grad = flatten(pe.grad);
            if (config.guidance == GuidanceMode::FullVjp)
                grad = denoiser_vjp_flat(z, data, sigma, grad);
            const double s2 = sigma * sigma;
            for (std::size_t j = 0; j < dim; ++j) {
                const double g = s2 * grad[j];
                guidance_norm += g * g;
                target[j] -= g;
            }
            guidance_norm = std::sqrt(guidance_norm);
            if (!std::isfinite(loss) || !std::isfinite(guidance_norm))
                throw std::runtime_error("sample: non-finite loss or gradient at step " +
                                         std::to_string(i));
        }

        const double ratio = (sigma_next - sigma) / sigma;
        for (std::size_t j = 0; j < dim; ++j) z[j] += ratio * (z[j] - target[j]);
        for (double v : z)
            if (!std::isfinite(v))
                throw std::runtime_error("sample: non-finite latent at step " + std::to_string(i));

        result.log.push_back({sigma, loss, guidance_norm});
        if (config.store_trajectory)
            result.trajectory.push_back(unflatten(z, data.channels, data.dims));
    }

    Latent final_latent;
    final_latent.factor = latent_factor;
    final_latent.logits = unflatten(z, data.channels, data.dims);
    result.probabilities = decode_full(final_latent, native_dims, 1.0);
    result.labels = result.probabilities.argmax();
    result.final_denoised =
        unflatten(denoise_flat(z, data, schedule.sigmas.back()), data.channels, data.dims);
    return result;
}

}  // namespace geotopo
