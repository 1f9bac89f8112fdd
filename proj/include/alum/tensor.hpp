// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace alum {

// Training runs in single precision. Gradient-check builds compile the same
// sources with ALUM_REAL_DOUBLE so finite-difference oracles are trustworthy.
#ifdef ALUM_REAL_DOUBLE
using Real = double;
#else
using Real = float;
#endif

using Shape = std::vector<std::size_t>;
using Rng = std::mt19937_64;

/// Deterministic generator for a (seed, stream...) tuple. Every randomized
/// component derives its generator this way so that a run can be resumed at
/// any step without carrying generator state around.
Rng make_rng(std::uint64_t seed, std::initializer_list<std::uint64_t> stream = {});

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape);
    Tensor(Shape shape, std::vector<Real> data);

    static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
    static Tensor filled(Shape shape, Real value);
    static Tensor scalar(Real value) { return Tensor({}, {value}); }

    const Shape& shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
    std::size_t numel() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    std::span<Real> span() noexcept { return data_; }
    std::span<const Real> span() const noexcept { return data_; }
    Real* data() noexcept { return data_.data(); }
    const Real* data() const noexcept { return data_.data(); }
    std::vector<Real>& values() noexcept { return data_; }
    const std::vector<Real>& values() const noexcept { return data_; }

    Real& operator[](std::size_t i) { return data_[i]; }
    Real operator[](std::size_t i) const { return data_[i]; }

    /// Only for rank-0 or single-element tensors.
    Real item() const;

    /// Same data, new shape with identical element count.
    Tensor reshaped(Shape shape) const;

    bool all_finite() const noexcept;
    double max_abs() const noexcept;
    void fill(Real value);

    friend bool operator==(const Tensor&, const Tensor&) = default;

private:
    Shape shape_;
    std::vector<Real> data_;
};

/// Fills `t` with iid N(0, stddev^2) draws.
void fill_normal(Tensor& t, double stddev, Rng& rng);

} // namespace alum
