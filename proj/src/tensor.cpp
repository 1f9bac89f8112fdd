// SPDX-License-Identifier: Apache-2.0
#include "alum/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "alum/error.hpp"

namespace alum {

Rng make_rng(std::uint64_t seed, std::initializer_list<std::uint64_t> stream) {
    std::vector<std::uint32_t> words;
    words.reserve(2 + 2 * stream.size());
    auto push = [&](std::uint64_t v) {
        words.push_back(static_cast<std::uint32_t>(v & 0xffffffffu));
        words.push_back(static_cast<std::uint32_t>(v >> 32));
    };
    push(seed);
    for (auto s : stream) {
        push(s);
    }
    std::seed_seq seq(words.begin(), words.end());
    return Rng(seq);
}

std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (auto d : shape) {
        n *= d;
    }
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) {
            os << ',';
        }
        os << shape[i];
    }
    os << ']';
    return os.str();
}

Tensor::Tensor(Shape shape) : shape_(std::move(shape)), data_(shape_numel(shape_), Real{0}) {}

Tensor::Tensor(Shape shape, std::vector<Real> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != shape_numel(shape_)) {
        throw Error(ErrorKind::shape_mismatch, "tensor: data length " + std::to_string(data_.size()) +
                                                   " does not match shape " + shape_str(shape_));
    }
}

Tensor Tensor::filled(Shape shape, Real value) {
    Tensor t(std::move(shape));
    t.fill(value);
    return t;
}

Real Tensor::item() const {
    if (data_.size() != 1) {
        throw Error(ErrorKind::shape_mismatch, "tensor: item() on shape " + shape_str(shape_));
    }
    return data_[0];
}

Tensor Tensor::reshaped(Shape shape) const {
    if (shape_numel(shape) != data_.size()) {
        throw Error(ErrorKind::shape_mismatch,
                    "reshape: " + shape_str(shape_) + " -> " + shape_str(shape));
    }
    return Tensor(std::move(shape), data_);
}

bool Tensor::all_finite() const noexcept {
    return std::all_of(data_.begin(), data_.end(), [](Real v) { return std::isfinite(v); });
}

double Tensor::max_abs() const noexcept {
    double m = 0.0;
    for (auto v : data_) {
        m = std::max(m, static_cast<double>(std::abs(v)));
    }
    return m;
}

void Tensor::fill(Real value) {
    std::fill(data_.begin(), data_.end(), value);
}

void fill_normal(Tensor& t, double stddev, Rng& rng) {
    std::normal_distribution<double> dist(0.0, stddev);
    for (auto& v : t.values()) {
        v = static_cast<Real>(dist(rng));
    }
}

} // namespace alum
