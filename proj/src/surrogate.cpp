#include "geotopo/surrogate.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <stdexcept>

namespace geotopo {

namespace {

Mat3 jitter_rotation(std::mt19937_64& rng, double angle_std) {
    if (angle_std <= 0.0) return Mat3::Identity();
    std::normal_distribution<double> gauss;
    Vec3 axis(gauss(rng), gauss(rng), gauss(rng));
    if (axis.norm() < 1e-9) axis = Vec3(0, 0, 1);
    const double angle = angle_std * gauss(rng);
    return Eigen::AngleAxisd(angle, axis.normalized()).toRotationMatrix();
}

bool valid_radii(const PhantomPart& p) {
    switch (p.shape) {
        case PartShape::Shell:
            return p.radii[0] > 0 && p.radii[1] > p.radii[0];
        case PartShape::Torus:
        case PartShape::Arc:
        case PartShape::Tube:
            return p.radii[0] > 0 && p.radii[1] > 0;
        default:
            return (p.radii.array() > 0).all();
    }
}

RealizedPart realize(const PhantomPart& base, std::mt19937_64& rng) {
    std::normal_distribution<double> gauss;
    RealizedPart out;
    for (int attempt = 0; attempt < 16; ++attempt) {
        PhantomPart p = base;
        for (int ax = 0; ax < 3; ++ax)
            if (base.center_jitter[ax] > 0) p.center[ax] += base.center_jitter[ax] * gauss(rng);
        if (base.size_jitter > 0) p.radii *= 1.0 + base.size_jitter * gauss(rng);
        out.rotation = jitter_rotation(rng, base.rot_jitter);
        if (!valid_radii(p)) continue;

        out.part = p;
        if (p.shape == PartShape::Ellipsoid) {
            out.has_analytic_moments = true;
            out.mass = 4.0 / 3.0 * std::numbers::pi * p.radii.prod();
            out.centroid = p.center;
            out.covariance = out.rotation *
                             Vec3(p.radii[0] * p.radii[0] / 5, p.radii[1] * p.radii[1] / 5,
                                  p.radii[2] * p.radii[2] / 5)
                                 .asDiagonal() *
                             out.rotation.transpose();
        } else if (p.shape == PartShape::Box) {
            out.has_analytic_moments = true;
            out.mass = 8.0 * p.radii.prod();
            out.centroid = p.center;
            out.covariance = out.rotation *
                             Vec3(p.radii[0] * p.radii[0] / 3, p.radii[1] * p.radii[1] / 3,
                                  p.radii[2] * p.radii[2] / 3)
                                 .asDiagonal() *
                             out.rotation.transpose();
        }
        return out;
    }
    throw std::runtime_error("generate_phantom: jitter produced invalid geometry repeatedly");
}

bool inside(const RealizedPart& rp, const Vec3& world) {
    const PhantomPart& p = rp.part;
    const Vec3 local = rp.rotation.transpose() * (world - p.center);
    switch (p.shape) {
        case PartShape::Ellipsoid:
            return (local.array() / p.radii.array()).matrix().squaredNorm() <= 1.0;
        case PartShape::Box:
            return (local.cwiseAbs().array() <= p.radii.array()).all();
        case PartShape::Tube: {
            const Vec3 a = p.axis.normalized();
            const double axial = local.dot(a);
            const double radial2 = (local - axial * a).squaredNorm();
            return std::abs(axial) <= p.radii[1] && radial2 <= p.radii[0] * p.radii[0];
        }
        case PartShape::Torus: {
            const Vec3 a = p.axis.normalized();
            const double w = local.dot(a);
            const double rho = (local - w * a).norm();
            const double dr = rho - p.radii[0];
            return dr * dr + w * w <= p.radii[1] * p.radii[1];
        }
        case PartShape::Arc: {
            // Partial torus in the plane orthogonal to `axis`, swept through
            // arc_span, with spherical caps at both ends.
            const Vec3 a = p.axis.normalized();
            const Vec3 helper = std::abs(a.z()) < 0.9 ? Vec3(0, 0, 1) : Vec3(1, 0, 0);
            const Vec3 e0 = a.cross(helper).normalized().cross(a).normalized();
            const Vec3 e1 = a.cross(e0);
            const double u = local.dot(e0), v = local.dot(e1), w = local.dot(a);
            const double theta = std::atan2(v, u);
            const double rho = std::hypot(u, v);
            const double rr = p.radii[1] * p.radii[1];
            if (theta >= 0.0 && theta <= p.arc_span) {
                const double dr = rho - p.radii[0];
                if (dr * dr + w * w <= rr) return true;
            }
            const Vec3 cap0 = p.radii[0] * e0;
            const Vec3 cap1 = p.radii[0] * (std::cos(p.arc_span) * e0 + std::sin(p.arc_span) * e1);
            return (local - cap0).squaredNorm() <= rr || (local - cap1).squaredNorm() <= rr;
        }
        case PartShape::Shell: {
            const double r = local.norm();
            return r >= p.radii[0] && r <= p.radii[1];
        }
    }
    return false;
}

}  // namespace

Phantom generate_phantom(const PhantomSpec& spec, std::uint64_t index) {
    if (spec.channels == 0) throw std::invalid_argument("generate_phantom: no channels");
    std::seed_seq seq{spec.seed, index};
    std::mt19937_64 rng(seq);

    // Variant draw happens first so the base-part jitter stream is shared.
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    const double pick = uni(rng);
    std::size_t variant = 0;
    double acc = 0.0;
    for (std::size_t i = 0; i < spec.variants.size(); ++i) {
        acc += spec.variants[i].prob;
        if (pick < acc) {
            variant = i + 1;
            break;
        }
    }

    Phantom out;
    out.variant_index = variant;
    for (const PhantomPart& p : spec.parts) {
        if (p.channel == 0 || p.channel >= spec.channels)
            throw std::invalid_argument("generate_phantom: part channel out of range");
        out.parts.push_back(realize(p, rng));
    }
    if (variant > 0) {
        for (const PhantomPart& p : spec.variants[variant - 1].parts) {
            if (p.channel == 0 || p.channel >= spec.channels)
                throw std::invalid_argument("generate_phantom: part channel out of range");
            out.parts.push_back(realize(p, rng));
        }
    }

    LabelGrid labels;
    labels.labels = Grid3<std::uint8_t>(spec.dims, 0);
    labels.num_classes = spec.channels;
    for (std::size_t i = 0; i < spec.dims.h; ++i)
        for (std::size_t j = 0; j < spec.dims.w; ++j)
            for (std::size_t k = 0; k < spec.dims.d; ++k) {
                const Vec3 w = voxel_center(spec.dims, i, j, k);
                std::uint8_t label = 0;
                for (const RealizedPart& rp : out.parts)
                    if (inside(rp, w)) label = static_cast<std::uint8_t>(rp.part.channel);
                labels.labels.at(i, j, k) = label;
            }
    out.map = one_hot_encode(labels, spec.channels);
    return out;
}

PhantomSpec phantom_family(const std::string& name, std::uint64_t seed) {
    PhantomSpec spec;
    spec.seed = seed;

    const auto ellipsoid = [](std::uint32_t ch, Vec3 c, Vec3 r) {
        PhantomPart p;
        p.shape = PartShape::Ellipsoid;
        p.channel = ch;
        p.center = c;
        p.radii = r;
        return p;
    };

    if (name == "blobs") {
        spec.channels = 2;
        spec.dims = {32, 32, 32};
        PhantomPart blob = ellipsoid(1, Vec3::Zero(), Vec3(0.17, 0.14, 0.12));
        blob.center_jitter = Vec3(0.045, 0.028, 0.028);
        blob.size_jitter = 0.08;
        blob.rot_jitter = 0.35;
        spec.parts = {blob};
    } else if (name == "twoblob") {
        spec.channels = 2;
        spec.dims = {32, 32, 32};
        PhantomPart left = ellipsoid(1, Vec3(-0.2, 0, 0), Vec3(0.12, 0.115, 0.115));
        left.center_jitter = Vec3(0.012, 0.02, 0.02);
        left.size_jitter = 0.06;
        PhantomPart right = ellipsoid(1, Vec3(0.2, 0, 0), Vec3(0.115, 0.11, 0.11));
        right.center_jitter = Vec3(0.012, 0.02, 0.02);
        right.size_jitter = 0.06;
        PhantomPart merged = ellipsoid(1, Vec3(0.0, 0, 0), Vec3(0.32, 0.12, 0.12));
        merged.center_jitter = Vec3(0.01, 0.015, 0.015);
        merged.size_jitter = 0.05;
        spec.parts = {left};
        spec.variants = {{0.7, {right}}, {0.3, {merged}}};
    } else if (name == "pair") {
        spec.channels = 3;
        spec.dims = {32, 32, 32};
        PhantomPart a = ellipsoid(1, Vec3(-0.13, 0, 0), Vec3(0.15, 0.13, 0.13));
        a.center_jitter = Vec3(0.015, 0.02, 0.02);
        a.size_jitter = 0.06;
        PhantomPart b = ellipsoid(2, Vec3(0.13, 0, 0), Vec3(0.15, 0.13, 0.13));
        b.center_jitter = Vec3(0.015, 0.02, 0.02);
        b.size_jitter = 0.06;
        spec.parts = {a, b};
    } else if (name == "tubes") {
        spec.channels = 2;
        spec.dims = {48, 48, 48};
        PhantomPart arc;
        arc.shape = PartShape::Arc;
        arc.channel = 1;
        arc.center = Vec3(0.03, 0.0, 0.03);
        arc.radii = Vec3(0.33, 0.055, 0.0);
        arc.axis = Vec3(0, 1, 0);
        arc.center_jitter = Vec3(0.02, 0.02, 0.02);
        arc.size_jitter = 0.06;
        arc.rot_jitter = 0.1;
        spec.parts = {arc};
    } else if (name == "tori") {
        spec.channels = 2;
        spec.dims = {32, 32, 32};
        PhantomPart torus;
        torus.shape = PartShape::Torus;
        torus.channel = 1;
        torus.radii = Vec3(0.26, 0.07, 0.0);
        torus.center_jitter = Vec3(0.02, 0.02, 0.02);
        torus.size_jitter = 0.06;
        torus.rot_jitter = 0.15;
        spec.parts = {torus};
    } else if (name == "shell") {
        spec.channels = 3;
        spec.dims = {32, 32, 32};
        PhantomPart wall;
        wall.shape = PartShape::Shell;
        wall.channel = 1;
        wall.radii = Vec3(0.22, 0.30, 0.0);
        wall.center_jitter = Vec3(0.015, 0.015, 0.015);
        wall.size_jitter = 0.05;
        PhantomPart chamber = ellipsoid(2, Vec3::Zero(), Vec3(0.2, 0.2, 0.2));
        chamber.center_jitter = Vec3(0.015, 0.015, 0.015);
        chamber.size_jitter = 0.05;
        spec.parts = {wall, chamber};
    } else if (name == "annulus") {
        spec.channels = 4;
        spec.dims = {32, 32, 32};
        PhantomPart wall;
        wall.shape = PartShape::Tube;
        wall.channel = 1;
        wall.radii = Vec3(0.24, 0.5, 0.0);
        wall.size_jitter = 0.05;
        PhantomPart lumen;
        lumen.shape = PartShape::Tube;
        lumen.channel = 2;
        lumen.radii = Vec3(0.15, 0.5, 0.0);
        lumen.size_jitter = 0.05;
        PhantomPart calcium1 = ellipsoid(3, Vec3(0.195, 0, 0.1), Vec3(0.04, 0.04, 0.05));
        calcium1.center_jitter = Vec3(0.01, 0.05, 0.08);
        calcium1.size_jitter = 0.1;
        PhantomPart calcium2 = ellipsoid(3, Vec3(-0.14, 0.14, -0.1), Vec3(0.04, 0.04, 0.05));
        calcium2.center_jitter = Vec3(0.05, 0.01, 0.08);
        calcium2.size_jitter = 0.1;
        spec.parts = {wall, lumen, calcium1, calcium2};
    } else {
        throw std::invalid_argument("phantom_family: unknown family '" + name + "'");
    }
    return spec;
}

std::vector<std::string> phantom_family_names() {
    return {"blobs", "twoblob", "pair", "tubes", "tori", "shell", "annulus"};
}

// ---------------------------------------------------------------------------
// Encoder / decoder
// ---------------------------------------------------------------------------

Latent encode(const VoxelMap& v, std::uint32_t factor) {
    if (!v.probability()) throw std::invalid_argument("encode: input must be a probability map");
    if (factor == 0 || v.dims().h % factor || v.dims().w % factor || v.dims().d % factor)
        throw std::invalid_argument("encode: factor must divide the volume dimensions");

    const Dim3 ld{v.dims().h / factor, v.dims().w / factor, v.dims().d / factor};
    Latent z;
    z.factor = factor;
    z.logits = VoxelMap(v.channels(), ld);
    const double inv_block = 1.0 / (static_cast<double>(factor) * factor * factor);
    const double uniform = std::log(1.0 / v.channels());

    for (std::uint32_t c = 0; c < v.channels(); ++c) {
        const auto& src = v.channel(c);
        auto& dst = z.logits.channel(c);
        for (std::size_t i = 0; i < ld.h; ++i)
            for (std::size_t j = 0; j < ld.w; ++j)
                for (std::size_t k = 0; k < ld.d; ++k) {
                    double acc = 0.0;
                    for (std::uint32_t di = 0; di < factor; ++di)
                        for (std::uint32_t dj = 0; dj < factor; ++dj)
                            for (std::uint32_t dk = 0; dk < factor; ++dk)
                                acc += src.at(i * factor + di, j * factor + dj, k * factor + dk);
                    dst.at(i, j, k) = std::log(acc * inv_block + kEncodeEps) - uniform;
                }
    }
    return z;
}

namespace {

// Shared trilinear stencil for all channels of one query point.
struct Stencil {
    std::uint32_t corner[8];
    double weight[8];
};

Stencil stencil_at(const Dim3& dims, const Vec3& q) {
    Stencil st{};
    const auto axis = [](double x, std::size_t n, long& i0, double& f) {
        const double u = (x + 0.5) * static_cast<double>(n) - 0.5;
        double fl = std::floor(u);
        f = u - fl;
        if (f < 1e-9) {
            f = 0.0;
        } else if (f > 1.0 - 1e-9) {
            fl += 1.0;
            f = 0.0;
        }
        i0 = static_cast<long>(fl);
    };
    long i0, j0, k0;
    double fi, fj, fk;
    axis(q.x(), dims.h, i0, fi);
    axis(q.y(), dims.w, j0, fj);
    axis(q.z(), dims.d, k0, fk);
    int slot = 0;
    for (int di = 0; di < 2; ++di)
        for (int dj = 0; dj < 2; ++dj)
            for (int dk = 0; dk < 2; ++dk, ++slot) {
                const long i = i0 + di, j = j0 + dj, k = k0 + dk;
                const double w = (di ? fi : 1 - fi) * (dj ? fj : 1 - fj) * (dk ? fk : 1 - fk);
                if (w == 0.0 || i < 0 || j < 0 || k < 0 || i >= static_cast<long>(dims.h) ||
                    j >= static_cast<long>(dims.w) || k >= static_cast<long>(dims.d)) {
                    st.weight[slot] = 0.0;
                    st.corner[slot] = 0;
                    continue;
                }
                st.weight[slot] = w;
                st.corner[slot] = static_cast<std::uint32_t>(
                    (static_cast<std::size_t>(i) * dims.w + j) * dims.d + k);
            }
    return st;
}

}  // namespace

DecodedField decode_field(const Latent& z, const std::vector<Vec3>& points, double temperature,
                          DecodeHandle* handle) {
    if (!(temperature > 0.0)) throw std::invalid_argument("decode_field: temperature must be > 0");
    const Dim3 ld = z.logits.dims();
    const std::uint32_t nc = z.logits.channels();

    DecodedField out;
    out.npoints = points.size();
    out.channels = nc;
    out.probs.resize(points.size() * nc);

    if (handle) {
        handle->latent_dims_ = ld;
        handle->channels_ = nc;
        handle->npoints_ = points.size();
        handle->temperature_ = temperature;
        handle->corner_.assign(points.size() * 8, 0);
        handle->weight_.assign(points.size() * 8, 0.0);
    }

    std::vector<double> logits(nc);
    for (std::size_t p = 0; p < points.size(); ++p) {
        if (!points[p].allFinite())
            throw std::invalid_argument("decode_field: non-finite query point");
        const Stencil st = stencil_at(ld, points[p]);
        for (std::uint32_t c = 0; c < nc; ++c) {
            double acc = 0.0;
            const auto& grid = z.logits.channel(c);
            for (int s = 0; s < 8; ++s)
                if (st.weight[s] != 0.0) acc += st.weight[s] * grid[st.corner[s]];
            logits[c] = temperature * acc;
        }
        const double m = *std::max_element(logits.begin(), logits.end());
        double denom = 0.0;
        for (std::uint32_t c = 0; c < nc; ++c) {
            logits[c] = std::exp(logits[c] - m);
            denom += logits[c];
        }
        for (std::uint32_t c = 0; c < nc; ++c) out.probs[p * nc + c] = logits[c] / denom;

        if (handle) {
            for (int s = 0; s < 8; ++s) {
                handle->corner_[p * 8 + s] = st.corner[s];
                handle->weight_[p * 8 + s] = st.weight[s];
            }
        }
    }
    if (handle) handle->probs_ = out.probs;
    return out;
}

void DecodeHandle::vjp(const std::vector<double>& cotangent, VoxelMap& grad) const {
    if (cotangent.size() != npoints_ * channels_)
        throw std::invalid_argument("DecodeHandle: cotangent length mismatch");
    for (std::size_t p = 0; p < npoints_; ++p) {
        double dot = 0.0;
        for (std::uint32_t c = 0; c < channels_; ++c)
            dot += cotangent[p * channels_ + c] * probs_[p * channels_ + c];
        for (std::uint32_t c = 0; c < channels_; ++c) {
            const double g_logit =
                temperature_ * probs_[p * channels_ + c] * (cotangent[p * channels_ + c] - dot);
            if (g_logit == 0.0) continue;
            auto& grid = grad.channel(c);
            for (int s = 0; s < 8; ++s) {
                const double w = weight_[p * 8 + s];
                if (w != 0.0) grid[corner_[p * 8 + s]] += w * g_logit;
            }
        }
    }
}

VoxelMap DecodeHandle::vjp(const std::vector<double>& cotangent) const {
    VoxelMap grad(channels_, latent_dims_);
    vjp(cotangent, grad);
    return grad;
}

VoxelMap decode_full(const Latent& z, const Dim3& dims, double temperature, DecodeHandle* handle) {
    std::vector<Vec3> centers;
    centers.reserve(dims.count());
    for (std::size_t i = 0; i < dims.h; ++i)
        for (std::size_t j = 0; j < dims.w; ++j)
            for (std::size_t k = 0; k < dims.d; ++k) centers.push_back(voxel_center(dims, i, j, k));
    const DecodedField f = decode_field(z, centers, temperature, handle);
    VoxelMap out(f.channels, dims, true);
    for (std::size_t v = 0; v < dims.count(); ++v)
        for (std::uint32_t c = 0; c < f.channels; ++c) out.channel(c)[v] = f.at(v, c);
    return out;
}

// ---------------------------------------------------------------------------
// Parsing
// ---------------------------------------------------------------------------

VParse v_parse(const VoxelMap& v, const std::vector<bool>& u,
               const std::vector<ControlDomain>& domains) {
    VParse out;
    out.subset = boolean_subset(v, u);
    out.arg_channel = Grid3<std::uint8_t>(v.dims(), 255);
    for (std::size_t i = 0; i < out.subset.size(); ++i) {
        double best = -1.0;
        std::uint8_t winner = 255;
        for (std::uint32_t c = 0; c < v.channels(); ++c) {
            if (!u[c]) continue;
            if (v.channel(c)[i] > best) {
                best = v.channel(c)[i];
                winner = static_cast<std::uint8_t>(c);
            }
        }
        out.arg_channel[i] = winner;
    }

    out.subs.reserve(domains.size());
    out.handles.reserve(domains.size());
    for (const ControlDomain& d : domains) {
        SampleHandle handle(v.dims(), d.points.size());
        const std::vector<double> vals = trilinear_sample(out.subset, d.points, &handle);
        Substructure s;
        s.domain = d;
        s.values = Grid3<double>({d.grid_size.a, d.grid_size.b, d.grid_size.c}, vals);
        out.subs.push_back(std::move(s));
        out.handles.push_back(std::move(handle));
    }
    return out;
}

void v_parse_vjp(const VParse& parse, std::size_t domain_index,
                 const std::vector<double>& cotangent, VoxelMap& grad) {
    const SampleHandle& h = parse.handles.at(domain_index);
    Grid3<double> on_subset(grad.dims(), 0.0);
    h.accumulate(cotangent, on_subset);
    for (std::size_t i = 0; i < on_subset.size(); ++i) {
        const double g = on_subset[i];
        if (g == 0.0) continue;
        const std::uint8_t c = parse.arg_channel[i];
        if (c != 255) grad.channel(c)[i] += g;
    }
}

LParse l_parse(const Latent& z, const std::vector<bool>& u,
               const std::vector<ControlDomain>& domains, double temperature) {
    if (u.size() != z.logits.channels())
        throw std::invalid_argument("l_parse: selection length does not match channels");
    LParse out;
    out.channels = z.logits.channels();
    out.subs.reserve(domains.size());
    out.handles.reserve(domains.size());
    out.arg_channel.reserve(domains.size());

    for (const ControlDomain& d : domains) {
        DecodeHandle handle;
        const DecodedField f = decode_field(z, d.points, temperature, &handle);

        Substructure s;
        s.domain = d;
        s.values = Grid3<double>({d.grid_size.a, d.grid_size.b, d.grid_size.c}, 0.0);
        std::vector<std::uint8_t> winners(f.npoints, 255);
        for (std::size_t p = 0; p < f.npoints; ++p) {
            double best = 0.0;
            std::uint8_t winner = 255;
            for (std::uint32_t c = 0; c < f.channels; ++c) {
                if (!u[c]) continue;
                const double val = f.at(p, c);
                if (winner == 255 || val > best) {
                    best = val;
                    winner = static_cast<std::uint8_t>(c);
                }
            }
            s.values[p] = winner == 255 ? 0.0 : best;
            winners[p] = winner;
        }
        out.subs.push_back(std::move(s));
        out.handles.push_back(std::move(handle));
        out.arg_channel.push_back(std::move(winners));
    }
    return out;
}

void l_parse_vjp(const LParse& parse, std::size_t domain_index,
                 const std::vector<double>& cotangent, VoxelMap& grad_logits) {
    const auto& winners = parse.arg_channel.at(domain_index);
    if (cotangent.size() != winners.size())
        throw std::invalid_argument("l_parse_vjp: cotangent length mismatch");
    std::vector<double> expanded(winners.size() * parse.channels, 0.0);
    for (std::size_t p = 0; p < winners.size(); ++p)
        if (winners[p] != 255) expanded[p * parse.channels + winners[p]] = cotangent[p];
    parse.handles.at(domain_index).vjp(expanded, grad_logits);
}

}  // namespace geotopo
