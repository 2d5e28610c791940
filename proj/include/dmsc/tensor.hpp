// Copyright 2026 the dmsc authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "dmsc/errors.hpp"
#include "dmsc/rng.hpp"

namespace dmsc {

/// Dense n-dimensional array of 64-bit reals, row-major flat storage.
/// This is a plain value type; gradient bookkeeping lives in the autodiff
/// graph (see autodiff.hpp), not here.
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(std::vector<std::size_t> shape)
        : shape_(std::move(shape)), data_(checked_numel(shape_), 0.0) {}

    Tensor(std::vector<std::size_t> shape, std::vector<double> data)
        : shape_(std::move(shape)), data_(std::move(data)) {
        if (checked_numel(shape_) != data_.size()) {
            throw DimError("data length " + std::to_string(data_.size()) +
                           " does not match shape " + shape_str());
        }
    }

    static Tensor scalar(double v) { return Tensor({1}, {v}); }

    static Tensor vector(std::vector<double> v) {
        const std::size_t n = v.size();
        return Tensor({n}, std::move(v));
    }

    static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> data) {
        return Tensor({rows, cols}, std::move(data));
    }

    static Tensor zeros(std::vector<std::size_t> shape) { return Tensor(std::move(shape)); }

    static Tensor full(std::vector<std::size_t> shape, double v) {
        Tensor t(std::move(shape));
        for (double& x : t.data_) x = v;
        return t;
    }

    static Tensor uniform(std::vector<std::size_t> shape, double lo, double hi,
                          rng::SplitMix64& gen) {
        Tensor t(std::move(shape));
        for (double& x : t.data_) x = gen.uniform(lo, hi);
        return t;
    }

    static Tensor gaussian(std::vector<std::size_t> shape, rng::SplitMix64& gen) {
        Tensor t(std::move(shape));
        for (double& x : t.data_) x = gen.gaussian();
        return t;
    }

    const std::vector<std::size_t>& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t numel() const { return data_.size(); }
    std::size_t size(std::size_t axis) const { return shape_.at(axis); }

    // Rank-2 helpers; most of the architecture works on [channels x frames].
    std::size_t rows() const { return shape_.at(0); }
    std::size_t cols() const { return rank() == 1 ? 1 : shape_.at(1); }

    double& at(std::size_t i) { return data_[i]; }
    double at(std::size_t i) const { return data_[i]; }
    double& at(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
    double at(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }
    double& at(std::size_t i, std::size_t j, std::size_t k) {
        return data_[(i * shape_[1] + j) * shape_[2] + k];
    }
    double at(std::size_t i, std::size_t j, std::size_t k) const {
        return data_[(i * shape_[1] + j) * shape_[2] + k];
    }

    std::vector<double>& data() { return data_; }
    const std::vector<double>& data() const { return data_; }

    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

    std::string shape_str() const {
        std::string s = "[";
        for (std::size_t i = 0; i < shape_.size(); ++i) {
            if (i) s += "x";
            s += std::to_string(shape_[i]);
        }
        return s + "]";
    }

    bool all_finite() const {
        for (double x : data_)
            if (!std::isfinite(x)) return false;
        return true;
    }

private:
    static std::size_t checked_numel(const std::vector<std::size_t>& shape) {
        if (shape.empty()) throw DimError("empty shape");
        std::size_t n = 1;
        for (std::size_t d : shape) {
            if (d == 0) throw DimError("zero-sized dimension");
            n *= d;
        }
        return n;
    }

    std::vector<std::size_t> shape_;
    std::vector<double> data_;
};

/// NaN/Inf is an error state, never silently propagated: every op output
/// passes through this check.
inline void check_finite(const Tensor& t, std::string_view op) {
    if (!t.all_finite()) {
        throw NumericError("non-finite value produced by op '" + std::string(op) + "'");
    }
}

}  // namespace dmsc
