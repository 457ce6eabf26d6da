#include "geotopo/domains.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <queue>
#include <stdexcept>

namespace geotopo {

namespace {

void validate_rotation(const Mat3& r) {
    if ((r.transpose() * r - Mat3::Identity()).cwiseAbs().maxCoeff() > 1e-7 ||
        std::abs(r.determinant() - 1.0) > 1e-7)
        throw std::invalid_argument("AffineParams: R is not a proper rotation");
}

}  // namespace

AffineParams::AffineParams(const Mat3& r, const Vec3& s, const Vec3& t)
    : rotation(r), scale(s), translation(t) {
    validate_rotation(r);
    if (!(s.array() > 0.0).all())
        throw std::invalid_argument("AffineParams: scale must be positive");
    if (!s.allFinite() || !t.allFinite())
        throw std::invalid_argument("AffineParams: non-finite parameters");
}

TemplateGrid make_template(const GridSize& size) {
    if (size.a == 0 || size.b == 0 || size.c == 0)
        throw std::invalid_argument("make_template: grid size must be positive");
    TemplateGrid out;
    out.size = size;
    out.points.reserve(size.count());
    for (std::size_t i = 0; i < size.a; ++i)
        for (std::size_t j = 0; j < size.b; ++j)
            for (std::size_t k = 0; k < size.c; ++k)
                out.points.emplace_back(axis_center(i, size.a), axis_center(j, size.b),
                                        axis_center(k, size.c));
    return out;
}

ControlDomain apply_affine(const TemplateGrid& tmpl, const AffineParams& a) {
    ControlDomain out;
    out.grid_size = tmpl.size;
    out.affine = a;
    out.points.reserve(tmpl.points.size());
    const Mat3 lin = a.linear();
    for (const Vec3& p : tmpl.points) out.points.emplace_back(lin * p + a.translation);
    return out;
}

std::pair<Vec3, Vec3> orthonormalize(const Vec3& u0, const Vec3& ref) {
    const double n0 = u0.norm();
    if (n0 < 1e-12) throw std::invalid_argument("orthonormalize: zero-length direction");
    if (std::abs(n0 - 1.0) > 1e-6)
        throw std::invalid_argument("orthonormalize: direction must be unit length");

    Vec3 r = ref;
    Vec3 cross = u0.cross(r);
    if (cross.norm() < 1e-6) {
        // Degenerate reference: fall back to the axis least aligned with u0.
        int axis = 0;
        u0.cwiseAbs().minCoeff(&axis);
        r = Vec3::Unit(axis);
        cross = u0.cross(r);
    }
    const Vec3 u1 = cross.normalized();
    const Vec3 u2 = u0.cross(u1);
    return {u1, u2};
}

std::pair<std::vector<Vec3>, std::vector<Vec3>> parallel_transport(
    const std::vector<Vec3>& tangents, const Vec3& f2_0, const Vec3& f3_0) {
    if (tangents.empty()) throw std::invalid_argument("parallel_transport: no tangents");
    for (const Vec3& t : tangents)
        if (std::abs(t.norm() - 1.0) > 1e-6)
            throw std::invalid_argument("parallel_transport: tangents must be unit length");
    if (std::abs(tangents[0].dot(f2_0)) > 1e-6 || std::abs(tangents[0].dot(f3_0)) > 1e-6 ||
        std::abs(f2_0.dot(f3_0)) > 1e-6)
        throw std::invalid_argument("parallel_transport: initial frame not orthonormal");

    std::vector<Vec3> f2(tangents.size()), f3(tangents.size());
    f2[0] = f2_0;
    f3[0] = f3_0;
    for (std::size_t i = 1; i < tangents.size(); ++i) {
        const Vec3& prev = tangents[i - 1];
        const Vec3& curr = tangents[i];
        const Vec3 cross = prev.cross(curr);
        const double cn = cross.norm();
        if (cn < 1e-9) {
            f2[i] = f2[i - 1];
            f3[i] = f3[i - 1];
            continue;
        }
        const Vec3 axis = cross / cn;
        const double angle = std::acos(std::clamp(prev.dot(curr), -1.0, 1.0));
        const Eigen::AngleAxisd rot(angle, axis);
        f2[i] = rot * f2[i - 1];
        f3[i] = rot * f3[i - 1];
    }
    return {f2, f3};
}

AffineParams global_domain() { return AffineParams::identity(); }

namespace {

struct BoundsWorld {
    Vec3 lower, upper;
    bool empty = true;
};

BoundsWorld binarized_bounds(const VoxelMap& v, const std::vector<bool>& u) {
    const StructureMap s = boolean_subset(v, u);
    const BinaryMap b = binarize(s);
    const Dim3 dims = b.dims();
    BoundsWorld out;
    out.lower = Vec3::Constant(std::numeric_limits<double>::infinity());
    out.upper = Vec3::Constant(-std::numeric_limits<double>::infinity());
    const Vec3 half_pitch(0.5 / dims.h, 0.5 / dims.w, 0.5 / dims.d);
    for (std::size_t i = 0; i < dims.h; ++i)
        for (std::size_t j = 0; j < dims.w; ++j)
            for (std::size_t k = 0; k < dims.d; ++k) {
                if (!b.at(i, j, k)) continue;
                out.empty = false;
                const Vec3 c = voxel_center(dims, i, j, k);
                out.lower = out.lower.cwiseMin(c - half_pitch);
                out.upper = out.upper.cwiseMax(c + half_pitch);
            }
    return out;
}

/// Mass-weighted centroid of a structure map in world coordinates.
bool world_centroid(const StructureMap& s, Vec3& centroid, double min_mass = 1e-12) {
    const Dim3 dims = s.dims();
    double mass = 0.0;
    Vec3 acc = Vec3::Zero();
    for (std::size_t i = 0; i < dims.h; ++i)
        for (std::size_t j = 0; j < dims.w; ++j)
            for (std::size_t k = 0; k < dims.d; ++k) {
                const double w = s.at(i, j, k);
                if (w == 0.0) continue;
                mass += w;
                acc += w * voxel_center(dims, i, j, k);
            }
    if (mass < min_mass) return false;
    centroid = acc / mass;
    return true;
}

StructureMap maxpool_same(const StructureMap& s, int k) {
    const int r = k / 2;
    const Dim3 dims = s.dims();
    StructureMap out(dims, 0.0);
    const long nh = static_cast<long>(dims.h), nw = static_cast<long>(dims.w),
               nd = static_cast<long>(dims.d);
    for (long i = 0; i < nh; ++i)
        for (long j = 0; j < nw; ++j)
            for (long kk = 0; kk < nd; ++kk) {
                double m = 0.0;
                for (long di = std::max(0L, i - r); di <= std::min(nh - 1, i + r); ++di)
                    for (long dj = std::max(0L, j - r); dj <= std::min(nw - 1, j + r); ++dj)
                        for (long dk = std::max(0L, kk - r); dk <= std::min(nd - 1, kk + r); ++dk)
                            m = std::max(m, s.at(di, dj, dk));
                out.at(i, j, kk) = m;
            }
    return out;
}

Vec3 native_pitch_scale(const GridSize& grid, const Dim3& dims) {
    return {static_cast<double>(grid.a) / dims.h, static_cast<double>(grid.b) / dims.w,
            static_cast<double>(grid.c) / dims.d};
}

}  // namespace

AffineParams cartesian_domain(const VoxelMap& v, const std::vector<bool>& u) {
    const BoundsWorld box = binarized_bounds(v, u);
    if (box.empty) throw std::runtime_error("cartesian_domain: selected structure is empty");
    const Vec3 t = 0.5 * (box.upper + box.lower);
    const Vec3 s = box.upper - box.lower;
    return {Mat3::Identity(), s, t};
}

InterfaceDomains interface_domain(const VoxelMap& v, const std::vector<bool>& u_a,
                                  const std::vector<bool>& u_b, const GridSize& grid, int k_dil,
                                  const Vec3& ref) {
    if (k_dil < 1 || k_dil % 2 == 0)
        throw std::invalid_argument("interface_domain: dilation kernel must be odd and >= 1");
    const StructureMap sa = boolean_subset(v, u_a);
    const StructureMap sb = boolean_subset(v, u_b);
    const StructureMap da = maxpool_same(sa, k_dil);
    const StructureMap db = maxpool_same(sb, k_dil);

    StructureMap mask(sa.dims(), 0.0);
    double mask_mass = 0.0;
    for (std::size_t i = 0; i < mask.size(); ++i) {
        mask[i] = std::min(da[i], db[i]);
        mask_mass += mask[i];
    }
    if (mask_mass < 1e-9)
        throw std::runtime_error("interface_domain: dilated structures do not overlap");

    StructureMap ia(sa.dims(), 0.0), ib(sb.dims(), 0.0);
    for (std::size_t i = 0; i < mask.size(); ++i) {
        ia[i] = sa[i] * mask[i];
        ib[i] = sb[i] * mask[i];
    }
    Vec3 pa, pb;
    if (!world_centroid(ia, pa) || !world_centroid(ib, pb))
        throw std::runtime_error("interface_domain: interface region carries no mass");

    const Vec3 axis_raw = pb - pa;
    if (axis_raw.norm() < 1e-12)
        throw std::runtime_error("interface_domain: coincident interface centroids");
    const Vec3 axis = axis_raw.normalized();
    const auto [u1, u2] = orthonormalize(axis, ref);
    Mat3 r;
    r.col(0) = axis;
    r.col(1) = u1;
    r.col(2) = u2;
    const Vec3 s = native_pitch_scale(grid, v.dims());

    InterfaceDomains out;
    out.a = AffineParams(r, s, pa);
    out.b = AffineParams(r, s, pb);
    out.interface_axis = axis;
    return out;
}

// ---------------------------------------------------------------------------
// Skeletonization
// ---------------------------------------------------------------------------

namespace {

// Felzenszwalb-Huttenlocher 1D squared distance transform.
void dt_1d(std::vector<double>& f) {
    const int n = static_cast<int>(f.size());
    static thread_local std::vector<int> v;
    static thread_local std::vector<double> z, out;
    v.assign(n, 0);
    z.assign(n + 1, 0.0);
    out.assign(n, 0.0);
    int k = 0;
    v[0] = 0;
    z[0] = -std::numeric_limits<double>::infinity();
    z[1] = std::numeric_limits<double>::infinity();
    for (int q = 1; q < n; ++q) {
        double s;
        while (true) {
            const int p = v[k];
            s = ((f[q] + q * q) - (f[p] + p * p)) / (2.0 * q - 2.0 * p);
            if (s <= z[k]) {
                --k;
            } else {
                break;
            }
        }
        ++k;
        v[k] = q;
        z[k] = s;
        z[k + 1] = std::numeric_limits<double>::infinity();
    }
    k = 0;
    for (int q = 0; q < n; ++q) {
        while (z[k + 1] < q) ++k;
        const int p = v[k];
        out[q] = (q - p) * (q - p) + f[p];
    }
    f.assign(out.begin(), out.end());
}

}  // namespace

Grid3<double> distance_transform(const BinaryMap& b) {
    const Dim3 dims = b.dims();
    constexpr double kInf = 1e18;
    Grid3<double> sq(dims, 0.0);
    for (std::size_t i = 0; i < b.size(); ++i) sq[i] = b[i] ? kInf : 0.0;

    // First axis pass appends virtual background sentinels just outside the
    // volume so the border reads as empty space.
    std::vector<double> line;
    for (std::size_t j = 0; j < dims.w; ++j)
        for (std::size_t k = 0; k < dims.d; ++k) {
            line.assign(dims.h + 2, 0.0);
            for (std::size_t i = 0; i < dims.h; ++i) line[i + 1] = sq.at(i, j, k);
            dt_1d(line);
            for (std::size_t i = 0; i < dims.h; ++i) sq.at(i, j, k) = line[i + 1];
        }
    for (std::size_t i = 0; i < dims.h; ++i)
        for (std::size_t k = 0; k < dims.d; ++k) {
            line.assign(dims.w + 2, 0.0);
            for (std::size_t j = 0; j < dims.w; ++j) line[j + 1] = sq.at(i, j, k);
            dt_1d(line);
            for (std::size_t j = 0; j < dims.w; ++j) sq.at(i, j, k) = line[j + 1];
        }
    for (std::size_t i = 0; i < dims.h; ++i)
        for (std::size_t j = 0; j < dims.w; ++j) {
            line.assign(dims.d + 2, 0.0);
            for (std::size_t k = 0; k < dims.d; ++k) line[k + 1] = sq.at(i, j, k);
            dt_1d(line);
            for (std::size_t k = 0; k < dims.d; ++k) sq.at(i, j, k) = line[k + 1];
        }
    for (std::size_t i = 0; i < sq.size(); ++i) sq[i] = std::sqrt(sq[i]);
    return sq;
}

namespace {

struct Neighbor26 {
    int di, dj, dk;
    double step;
};

const std::vector<Neighbor26>& neighbors26() {
    static const std::vector<Neighbor26> table = [] {
        std::vector<Neighbor26> t;
        for (int di = -1; di <= 1; ++di)
            for (int dj = -1; dj <= 1; ++dj)
                for (int dk = -1; dk <= 1; ++dk) {
                    if (di == 0 && dj == 0 && dk == 0) continue;
                    t.push_back({di, dj, dk,
                                 std::sqrt(static_cast<double>(di * di + dj * dj + dk * dk))});
                }
        return t;
    }();
    return table;
}

std::size_t count_components26(const BinaryMap& b) {
    const Dim3 dims = b.dims();
    std::vector<std::uint8_t> seen(b.size(), 0);
    std::size_t components = 0;
    std::vector<std::size_t> stack;
    for (std::size_t start = 0; start < b.size(); ++start) {
        if (!b[start] || seen[start]) continue;
        ++components;
        seen[start] = 1;
        stack.assign(1, start);
        while (!stack.empty()) {
            const std::size_t cur = stack.back();
            stack.pop_back();
            const auto [ci, cj, ck] = b.unravel(cur);
            for (const auto& nb : neighbors26()) {
                const long i = static_cast<long>(ci) + nb.di;
                const long j = static_cast<long>(cj) + nb.dj;
                const long k = static_cast<long>(ck) + nb.dk;
                if (i < 0 || j < 0 || k < 0 || i >= static_cast<long>(dims.h) ||
                    j >= static_cast<long>(dims.w) || k >= static_cast<long>(dims.d))
                    continue;
                const std::size_t f = b.index(i, j, k);
                if (b[f] && !seen[f]) {
                    seen[f] = 1;
                    stack.push_back(f);
                }
            }
        }
    }
    return components;
}

struct DijkstraResult {
    std::vector<double> dist;
    std::vector<std::size_t> pred;
};

/// Dijkstra over masked voxels; cost(a, b) = step * (w(a) + w(b)) / 2.
DijkstraResult dijkstra(const Dim3& dims, const std::vector<std::uint8_t>& mask,
                        std::size_t source, const std::vector<double>& node_weight) {
    constexpr double kInf = std::numeric_limits<double>::infinity();
    DijkstraResult res;
    res.dist.assign(mask.size(), kInf);
    res.pred.assign(mask.size(), std::numeric_limits<std::size_t>::max());
    using Entry = std::pair<double, std::size_t>;
    std::priority_queue<Entry, std::vector<Entry>, std::greater<>> pq;
    res.dist[source] = 0.0;
    pq.emplace(0.0, source);
    Grid3<std::uint8_t> shape(dims);  // for index math only
    while (!pq.empty()) {
        const auto [d, cur] = pq.top();
        pq.pop();
        if (d > res.dist[cur]) continue;
        const auto [ci, cj, ck] = shape.unravel(cur);
        for (const auto& nb : neighbors26()) {
            const long i = static_cast<long>(ci) + nb.di;
            const long j = static_cast<long>(cj) + nb.dj;
            const long k = static_cast<long>(ck) + nb.dk;
            if (i < 0 || j < 0 || k < 0 || i >= static_cast<long>(dims.h) ||
                j >= static_cast<long>(dims.w) || k >= static_cast<long>(dims.d))
                continue;
            const std::size_t f = shape.index(i, j, k);
            if (!mask[f]) continue;
            const double nd = d + nb.step * 0.5 * (node_weight[cur] + node_weight[f]);
            if (nd < res.dist[f] - 1e-15) {
                res.dist[f] = nd;
                res.pred[f] = cur;
                pq.emplace(nd, f);
            }
        }
    }
    return res;
}

std::size_t farthest_reached(const DijkstraResult& r) {
    std::size_t best = 0;
    double best_d = -1.0;
    for (std::size_t i = 0; i < r.dist.size(); ++i) {
        if (std::isfinite(r.dist[i]) && r.dist[i] > best_d) {
            best_d = r.dist[i];
            best = i;
        }
    }
    return best;
}

bool mask_connected26(const Dim3& dims, const std::vector<std::uint8_t>& mask) {
    BinaryMap as_map(dims, 0);
    std::size_t n = 0;
    for (std::size_t i = 0; i < mask.size(); ++i) {
        as_map[i] = mask[i];
        n += mask[i];
    }
    return n > 0 && count_components26(as_map) == 1;
}

}  // namespace

Centerline skeletonize(const BinaryMap& b) {
    std::size_t fg = 0;
    for (std::size_t i = 0; i < b.size(); ++i)
        if (b[i]) ++fg;
    if (fg == 0) throw std::runtime_error("skeletonize: empty structure");
    if (count_components26(b) != 1)
        throw std::runtime_error("skeletonize: structure must be a single connected component");

    const Dim3 dims = b.dims();
    const Grid3<double> dt = distance_transform(b);

    // Interior voxels sit at least two voxels from the background; relax the
    // threshold for thin structures until the set is connected.
    std::vector<std::uint8_t> interior(b.size(), 0);
    for (double threshold : {2.0, 1.0, 0.0}) {
        std::size_t n = 0;
        for (std::size_t i = 0; i < b.size(); ++i) {
            interior[i] = (b[i] && dt[i] >= threshold) ? 1 : 0;
            n += interior[i];
        }
        if (n >= 2 && mask_connected26(dims, interior)) break;
    }
    std::size_t first = 0;
    while (!interior[first]) ++first;

    // Double sweep for the mutually farthest interior pair.
    std::vector<double> unit(b.size(), 1.0);
    std::size_t end_a = farthest_reached(dijkstra(dims, interior, first, unit));
    std::size_t end_b = farthest_reached(dijkstra(dims, interior, end_a, unit));

    // Endpoints land on extremal corners of the interior set; a short greedy
    // climb onto the distance-transform ridge centers them.
    Grid3<std::uint8_t> shape(dims);
    const auto climb = [&](std::size_t v) {
        for (int step = 0; step < 4; ++step) {
            const auto [ci, cj, ck] = shape.unravel(v);
            std::size_t best = v;
            double best_dt = dt[v] + 0.5;
            for (const auto& nb : neighbors26()) {
                const long i = static_cast<long>(ci) + nb.di;
                const long j = static_cast<long>(cj) + nb.dj;
                const long k = static_cast<long>(ck) + nb.dk;
                if (i < 0 || j < 0 || k < 0 || i >= static_cast<long>(dims.h) ||
                    j >= static_cast<long>(dims.w) || k >= static_cast<long>(dims.d))
                    continue;
                const std::size_t f = shape.index(i, j, k);
                if (interior[f] && (dt[f] > best_dt || (dt[f] == best_dt && f < best))) {
                    best = f;
                    best_dt = dt[f];
                }
            }
            if (best == v) break;
            v = best;
        }
        return v;
    };
    end_a = climb(end_a);
    end_b = climb(end_b);

    // Ridge-following path: cheap where the distance transform is large.
    constexpr double kEps = 0.5;
    std::vector<double> ridge_weight(b.size(), 0.0);
    for (std::size_t i = 0; i < b.size(); ++i)
        if (interior[i]) ridge_weight[i] = 1.0 / (dt[i] + kEps);
    const DijkstraResult ridge = dijkstra(dims, interior, end_a, ridge_weight);

    std::vector<std::size_t> path;
    for (std::size_t cur = end_b;; cur = ridge.pred[cur]) {
        path.push_back(cur);
        if (cur == end_a) break;
        if (ridge.pred[cur] == std::numeric_limits<std::size_t>::max())
            throw std::runtime_error("skeletonize: endpoints are not connected");
    }
    std::reverse(path.begin(), path.end());

    std::vector<Vec3> raw;
    raw.reserve(path.size());
    for (std::size_t f : path) {
        const auto [i, j, k] = b.unravel(f);
        raw.emplace_back(voxel_center(dims, i, j, k));
    }

    Centerline out;
    out.points.reserve(raw.size());
    const long n = static_cast<long>(raw.size());
    for (long i = 0; i < n; ++i) {
        const long lo = std::max(0L, i - 2), hi = std::min(n - 1, i + 2);
        Vec3 acc = Vec3::Zero();
        for (long j = lo; j <= hi; ++j) acc += raw[j];
        const Vec3 smoothed = acc / static_cast<double>(hi - lo + 1);
        if (out.points.empty() || (smoothed - out.points.back()).norm() > 1e-12)
            out.points.push_back(smoothed);
    }
    if (out.points.size() < 2) out.points = {raw.front(), raw.back()};
    if (out.points.size() < 2 || (out.points.front() - out.points.back()).norm() < 1e-12)
        throw std::runtime_error("skeletonize: degenerate centerline");

    // Tubularity check: a near-isotropic structure has no meaningful axis.
    Vec3 mean = Vec3::Zero();
    for (std::size_t i = 0; i < dims.h; ++i)
        for (std::size_t j = 0; j < dims.w; ++j)
            for (std::size_t k = 0; k < dims.d; ++k)
                if (b.at(i, j, k)) mean += voxel_center(dims, i, j, k);
    mean /= static_cast<double>(fg);
    Mat3 cov = Mat3::Zero();
    for (std::size_t i = 0; i < dims.h; ++i)
        for (std::size_t j = 0; j < dims.w; ++j)
            for (std::size_t k = 0; k < dims.d; ++k)
                if (b.at(i, j, k)) {
                    const Vec3 d = voxel_center(dims, i, j, k) - mean;
                    cov += d * d.transpose();
                }
    cov /= static_cast<double>(fg);
    Eigen::SelfAdjointEigenSolver<Mat3> eig(cov);
    const Vec3 ev = eig.eigenvalues();  // ascending
    out.tubularity_warning = ev[2] < 1.5 * std::max(ev[1], 1e-18);
    return out;
}

std::vector<AffineParams> curvilinear_domains(const VoxelMap& v, const std::vector<bool>& u,
                                              const GridSize& grid,
                                              const std::vector<std::size_t>& subsample_indices,
                                              const Vec3& ref, Centerline* centerline_out) {
    const StructureMap s = boolean_subset(v, u);
    const Centerline center = skeletonize(binarize(s));
    if (centerline_out) *centerline_out = center;

    const std::vector<Vec3>& c = center.points;
    const std::size_t n = c.size();
    std::vector<Vec3> tangents(n);
    for (std::size_t i = 0; i < n; ++i) {
        Vec3 d;
        if (i == 0)
            d = c[1] - c[0];
        else if (i + 1 == n)
            d = c[n - 1] - c[n - 2];
        else
            d = c[i + 1] - c[i - 1];
        if (d.norm() < 1e-12)
            d = (i > 0) ? tangents[i - 1] : Vec3(0, 0, 1);
        tangents[i] = d.normalized();
    }
    const auto [f2_0, f3_0] = orthonormalize(tangents[0], ref);
    auto [f2, f3] = parallel_transport(tangents, f2_0, f3_0);

    const Vec3 scale = native_pitch_scale(grid, v.dims());
    std::vector<AffineParams> out;
    out.reserve(subsample_indices.size());
    for (std::size_t idx : subsample_indices) {
        if (idx >= n)
            throw std::out_of_range("curvilinear_domains: subsample index beyond centerline");
        // Re-orthogonalize against transport drift before validation.
        const Vec3 t = tangents[idx];
        Vec3 a = f2[idx] - f2[idx].dot(t) * t;
        a.normalize();
        const Vec3 b = t.cross(a);
        Mat3 r;
        r.col(0) = t;
        r.col(1) = a;
        r.col(2) = b;
        out.emplace_back(r, scale, c[idx]);
    }
    return out;
}

std::vector<Vec3> fibonacci_lattice(std::size_t n) {
    if (n == 0) throw std::invalid_argument("fibonacci_lattice: need at least one direction");
    const double golden_angle = std::numbers::pi * (3.0 - std::sqrt(5.0));
    std::vector<Vec3> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double z = 1.0 - 2.0 * (static_cast<double>(i) + 0.5) / static_cast<double>(n);
        const double rho = std::sqrt(std::max(0.0, 1.0 - z * z));
        const double phi = golden_angle * static_cast<double>(i);
        out.emplace_back(rho * std::cos(phi), rho * std::sin(phi), z);
    }
    return out;
}

namespace {

/// Distance from `origin` (inside the world cube) to the cube boundary along
/// unit direction `dir`.
double ray_exit_distance(const Vec3& origin, const Vec3& dir) {
    double t_max = std::numeric_limits<double>::infinity();
    for (int ax = 0; ax < 3; ++ax) {
        if (std::abs(dir[ax]) < 1e-15) continue;
        const double bound = dir[ax] > 0 ? 0.5 : -0.5;
        t_max = std::min(t_max, (bound - origin[ax]) / dir[ax]);
    }
    return std::max(t_max, 0.0);
}

struct RayProbe {
    bool valid = false;
    Vec3 wall_point = Vec3::Zero();
};

RayProbe probe_wall(const StructureMap& s, const Vec3& origin, const Vec3& dir,
                    std::size_t n_query, double min_ray_mass) {
    const double t_max = ray_exit_distance(origin, dir);
    RayProbe out;
    if (t_max <= 0.0) return out;
    std::vector<Vec3> pts;
    std::vector<double> ts;
    pts.reserve(n_query);
    ts.reserve(n_query);
    for (std::size_t q = 0; q < n_query; ++q) {
        const double t = (static_cast<double>(q) + 0.5) / static_cast<double>(n_query) * t_max;
        ts.push_back(t);
        pts.emplace_back(origin + t * dir);
    }
    const std::vector<double> w = trilinear_sample(s, pts);
    double mass = 0.0, moment = 0.0;
    for (std::size_t q = 0; q < n_query; ++q) {
        mass += w[q];
        moment += w[q] * ts[q];
    }
    if (mass < min_ray_mass) return out;
    out.valid = true;
    out.wall_point = origin + (moment / mass) * dir;
    return out;
}

FramedDomain framed_from_ray(const Vec3& dir, const Vec3& ref, const Vec3& scale,
                             const RayProbe& probe) {
    FramedDomain out;
    out.valid = probe.valid;
    if (!probe.valid) return out;
    // Columns cycled as [u1, u2, dir] so the gamma axis runs along the ray
    // and det(R) stays +1.
    const auto [u1, u2] = orthonormalize(dir, ref);
    Mat3 r;
    r.col(0) = u1;
    r.col(1) = u2;
    r.col(2) = dir;
    out.affine = AffineParams(r, scale, probe.wall_point);
    return out;
}

}  // namespace

std::vector<FramedDomain> spherical_domains(const VoxelMap& v, const std::vector<bool>& u,
                                            const GridSize& grid, std::size_t n_rays,
                                            std::size_t n_query, const Vec3& ref,
                                            double min_ray_mass) {
    if (n_rays == 0 || n_query == 0)
        throw std::invalid_argument("spherical_domains: ray counts must be positive");
    const StructureMap s = boolean_subset(v, u);
    Vec3 center;
    if (!world_centroid(s, center))
        throw std::runtime_error("spherical_domains: selected structure is empty");

    const Vec3 scale = native_pitch_scale(grid, v.dims());
    std::vector<FramedDomain> out;
    out.reserve(n_rays);
    for (const Vec3& dir : fibonacci_lattice(n_rays))
        out.push_back(framed_from_ray(dir, ref, scale,
                                      probe_wall(s, center, dir, n_query, min_ray_mass)));
    return out;
}

std::vector<FramedDomain> cylindrical_domains(const VoxelMap& v, const std::vector<bool>& u,
                                              const GridSize& grid, std::size_t n_z,
                                              std::size_t n_theta, std::size_t n_query,
                                              const Vec3& ref, double min_ray_mass) {
    if (n_z == 0 || n_theta == 0 || n_query == 0)
        throw std::invalid_argument("cylindrical_domains: lattice counts must be positive");
    const StructureMap s = boolean_subset(v, u);
    Vec3 unused;
    if (!world_centroid(s, unused))
        throw std::runtime_error("cylindrical_domains: selected structure is empty");

    const Vec3 scale = native_pitch_scale(grid, v.dims());
    std::vector<FramedDomain> out;
    out.reserve(n_z * n_theta);
    for (std::size_t m = 0; m < n_z; ++m) {
        const double z = (static_cast<double>(m) + 0.5) / static_cast<double>(n_z) - 0.5;
        const Vec3 origin(0.0, 0.0, z);
        for (std::size_t a = 0; a < n_theta; ++a) {
            const double theta =
                2.0 * std::numbers::pi * static_cast<double>(a) / static_cast<double>(n_theta);
            const Vec3 dir(std::cos(theta), std::sin(theta), 0.0);
            out.push_back(framed_from_ray(dir, ref, scale,
                                          probe_wall(s, origin, dir, n_query, min_ray_mass)));
        }
    }
    return out;
}

}  // namespace geotopo
