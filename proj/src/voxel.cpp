#include "geotopo/voxel.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace geotopo {

VoxelMap::VoxelMap(std::uint32_t channels, Dim3 dims, bool probability)
    : dims_(dims), probability_(probability) {
    if (channels == 0) throw std::invalid_argument("VoxelMap: need at least one channel");
    chan_.reserve(channels);
    for (std::uint32_t c = 0; c < channels; ++c) chan_.emplace_back(dims);
}

LabelGrid VoxelMap::argmax() const {
    LabelGrid out;
    out.labels = Grid3<std::uint8_t>(dims_);
    out.num_classes = channels();
    const std::size_t n = dims_.count();
    for (std::size_t v = 0; v < n; ++v) {
        std::uint8_t best = 0;
        double best_val = chan_[0][v];
        for (std::uint32_t c = 1; c < channels(); ++c) {
            if (chan_[c][v] > best_val) {
                best_val = chan_[c][v];
                best = static_cast<std::uint8_t>(c);
            }
        }
        out.labels[v] = best;
    }
    return out;
}

VoxelMap one_hot_encode(const LabelGrid& labels, std::uint32_t channels) {
    VoxelMap out(channels, labels.labels.dims(), true);
    const std::size_t n = labels.labels.size();
    for (std::size_t v = 0; v < n; ++v) {
        const std::uint8_t c = labels.labels[v];
        if (c >= channels)
            throw std::out_of_range("one_hot_encode: label value exceeds channel count");
        out.channel(c)[v] = 1.0;
    }
    return out;
}

VoxelMap softmax_channels(const VoxelMap& logits, double temperature) {
    if (!(temperature > 0.0))
        throw std::invalid_argument("softmax_channels: temperature must be positive");
    const std::uint32_t nc = logits.channels();
    VoxelMap out(nc, logits.dims(), true);
    const std::size_t n = logits.dims().count();
    std::vector<double> scaled(nc);
    for (std::size_t v = 0; v < n; ++v) {
        double m = -std::numeric_limits<double>::infinity();
        for (std::uint32_t c = 0; c < nc; ++c) {
            const double x = logits.channel(c)[v];
            if (!std::isfinite(x))
                throw std::invalid_argument("softmax_channels: non-finite logit");
            scaled[c] = temperature * x;
            m = std::max(m, scaled[c]);
        }
        double denom = 0.0;
        for (std::uint32_t c = 0; c < nc; ++c) {
            scaled[c] = std::exp(scaled[c] - m);
            denom += scaled[c];
        }
        for (std::uint32_t c = 0; c < nc; ++c) out.channel(c)[v] = scaled[c] / denom;
    }
    return out;
}

StructureMap boolean_subset(const VoxelMap& v, const std::vector<bool>& u) {
    if (u.size() != v.channels())
        throw std::invalid_argument("boolean_subset: selection length does not match channels");
    StructureMap out(v.dims(), 0.0);
    for (std::uint32_t c = 0; c < v.channels(); ++c) {
        if (!u[c]) continue;
        const auto& g = v.channel(c);
        for (std::size_t i = 0; i < g.size(); ++i) out[i] = std::max(out[i], g[i]);
    }
    return out;
}

BinaryMap binarize(const StructureMap& s, double threshold) {
    if (!(threshold > 0.0 && threshold < 1.0))
        throw std::invalid_argument("binarize: threshold must lie in (0, 1)");
    BinaryMap out(s.dims(), 0);
    for (std::size_t i = 0; i < s.size(); ++i) out[i] = s[i] > threshold ? 1 : 0;
    return out;
}

void SampleHandle::accumulate(const std::vector<double>& cotangent, Grid3<double>& grad) const {
    if (cotangent.size() != npoints())
        throw std::invalid_argument("SampleHandle: cotangent length mismatch");
    for (std::size_t p = 0; p < cotangent.size(); ++p) {
        const double g = cotangent[p];
        if (g == 0.0) continue;
        for (int s = 0; s < 8; ++s) {
            const double w = weight_[p * 8 + s];
            if (w != 0.0) grad[corner_[p * 8 + s]] += w * g;
        }
    }
}

Grid3<double> SampleHandle::vjp(const std::vector<double>& cotangent) const {
    Grid3<double> grad(dims_, 0.0);
    accumulate(cotangent, grad);
    return grad;
}

namespace {

// Continuous grid coordinate along one axis; voxel centers land on integers.
// The 1e-9 snap keeps center queries exact despite (i+0.5)/n*n rounding.
inline void axis_coord(double x, std::size_t n, long& i0, double& frac) {
    const double u = (x + 0.5) * static_cast<double>(n) - 0.5;
    double fl = std::floor(u);
    double f = u - fl;
    if (f < 1e-9) {
        f = 0.0;
    } else if (f > 1.0 - 1e-9) {
        fl += 1.0;
        f = 0.0;
    }
    i0 = static_cast<long>(fl);
    frac = f;
}

}  // namespace

std::vector<double> trilinear_sample(const StructureMap& s, const std::vector<Vec3>& points,
                                     SampleHandle* handle) {
    const Dim3 dims = s.dims();
    const long nh = static_cast<long>(dims.h);
    const long nw = static_cast<long>(dims.w);
    const long nd = static_cast<long>(dims.d);
    std::vector<double> out(points.size(), 0.0);

    for (std::size_t p = 0; p < points.size(); ++p) {
        const Vec3& q = points[p];
        if (!q.allFinite()) throw std::invalid_argument("trilinear_sample: non-finite point");
        long i0, j0, k0;
        double fi, fj, fk;
        axis_coord(q.x(), dims.h, i0, fi);
        axis_coord(q.y(), dims.w, j0, fj);
        axis_coord(q.z(), dims.d, k0, fk);

        double value = 0.0;
        int slot = 0;
        for (int di = 0; di < 2; ++di) {
            const long i = i0 + di;
            const double wi = di ? fi : 1.0 - fi;
            for (int dj = 0; dj < 2; ++dj) {
                const long j = j0 + dj;
                const double wj = dj ? fj : 1.0 - fj;
                for (int dk = 0; dk < 2; ++dk, ++slot) {
                    const long k = k0 + dk;
                    const double w = wi * wj * (dk ? fk : 1.0 - fk);
                    if (w == 0.0) continue;
                    if (i < 0 || i >= nh || j < 0 || j >= nw || k < 0 || k >= nd)
                        continue;  // zero padding outside the volume
                    const std::size_t flat =
                        s.index(static_cast<std::size_t>(i), static_cast<std::size_t>(j),
                                static_cast<std::size_t>(k));
                    value += w * s[flat];
                    if (handle) handle->set(p, slot, flat, w);
                }
            }
        }
        out[p] = value;
    }
    return out;
}

}  // namespace geotopo
