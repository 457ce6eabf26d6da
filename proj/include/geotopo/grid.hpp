#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <vector>

namespace geotopo {

/// Voxel index triple along the (H, W, D) axes. Axis 0 maps to world x,
/// axis 1 to y, axis 2 to z.
struct Dim3 {
    std::size_t h = 0, w = 0, d = 0;

    std::size_t count() const { return h * w * d; }
    bool operator==(const Dim3&) const = default;
};

/// Dense row-major 3D grid: index (i, j, k) -> (i * W + j) * D + k.
template <typename T>
class Grid3 {
  public:
    Grid3() = default;
    explicit Grid3(Dim3 dims, T fill = T{}) : dims_(dims), data_(dims.count(), fill) {
        if (dims.h == 0 || dims.w == 0 || dims.d == 0)
            throw std::invalid_argument("Grid3: dimensions must be positive");
    }
    Grid3(Dim3 dims, std::vector<T> data) : dims_(dims), data_(std::move(data)) {
        if (data_.size() != dims.count())
            throw std::invalid_argument("Grid3: data size does not match dims");
    }

    const Dim3& dims() const { return dims_; }
    std::size_t size() const { return data_.size(); }

    std::size_t index(std::size_t i, std::size_t j, std::size_t k) const {
        return (i * dims_.w + j) * dims_.d + k;
    }

    T& at(std::size_t i, std::size_t j, std::size_t k) { return data_[index(i, j, k)]; }
    const T& at(std::size_t i, std::size_t j, std::size_t k) const { return data_[index(i, j, k)]; }

    T& operator[](std::size_t flat) { return data_[flat]; }
    const T& operator[](std::size_t flat) const { return data_[flat]; }

    std::vector<T>& data() { return data_; }
    const std::vector<T>& data() const { return data_; }

    /// Inverse of index(): flat -> (i, j, k).
    std::array<std::size_t, 3> unravel(std::size_t flat) const {
        const std::size_t k = flat % dims_.d;
        const std::size_t rest = flat / dims_.d;
        return {rest / dims_.w, rest % dims_.w, k};
    }

  private:
    Dim3 dims_;
    std::vector<T> data_;
};

using BinaryMap = Grid3<std::uint8_t>;

}  // namespace geotopo
