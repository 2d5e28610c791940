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
//
// Straight-line reference implementations of the dynamic multi-scale
// equations, written as plain loops over raw arrays with no graph machinery.
// These are the oracles the library implementations are checked against and
// must stay independent of include/dmsc internals (they only consume Tensor
// as a container of numbers).

#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "dmsc/layers.hpp"
#include "dmsc/tensor.hpp"

namespace dmsc::testing::oracle {

inline constexpr double kGuard = 1e-8;

/// Same-padding dilated cross-correlation, naive sliding window.
inline Tensor conv1d_ref(const Tensor& x, const Tensor& w, std::size_t dilation) {
    const std::size_t c_out = w.size(0), c_in = w.size(1), kernel = w.size(2);
    const std::size_t frames = x.cols();
    const std::ptrdiff_t mid = static_cast<std::ptrdiff_t>(kernel - 1) / 2;
    Tensor out({c_out, frames});
    for (std::size_t co = 0; co < c_out; ++co)
        for (std::size_t t = 0; t < frames; ++t) {
            double acc = 0.0;
            for (std::size_t ci = 0; ci < c_in; ++ci)
                for (std::size_t k = 0; k < kernel; ++k) {
                    const std::ptrdiff_t src =
                        static_cast<std::ptrdiff_t>(t) +
                        (static_cast<std::ptrdiff_t>(k) - mid) * static_cast<std::ptrdiff_t>(dilation);
                    if (src < 0 || src >= static_cast<std::ptrdiff_t>(frames)) continue;
                    acc += w.at(co, ci, k) * x.at(ci, static_cast<std::size_t>(src));
                }
            out.at(co, t) = acc;
        }
    return out;
}

struct MomentsRef {
    std::vector<double> mean, stddev, skew, kurt;
};

/// Direct per-channel moment computation (biased moments, guarded variance,
/// excess kurtosis).
inline MomentsRef hosp_ref(const Tensor& x) {
    const std::size_t channels = x.rows(), frames = x.cols();
    MomentsRef m;
    m.mean.resize(channels);
    m.stddev.resize(channels);
    m.skew.resize(channels);
    m.kurt.resize(channels);
    for (std::size_t c = 0; c < channels; ++c) {
        double mu = 0.0;
        for (std::size_t t = 0; t < frames; ++t) mu += x.at(c, t);
        mu /= static_cast<double>(frames);
        double m2 = 0.0, m3 = 0.0, m4 = 0.0;
        for (std::size_t t = 0; t < frames; ++t) {
            const double d = x.at(c, t) - mu;
            m2 += d * d;
            m3 += d * d * d;
            m4 += d * d * d * d;
        }
        m2 /= static_cast<double>(frames);
        m3 /= static_cast<double>(frames);
        m4 /= static_cast<double>(frames);
        const double sigma = std::sqrt(m2 + kGuard);
        m.mean[c] = mu;
        m.stddev[c] = sigma;
        m.skew[c] = m3 / (sigma * sigma * sigma);
        m.kurt[c] = m4 / (sigma * sigma * sigma * sigma) - 3.0;
    }
    return m;
}

/// Raw parameter bundle for one dynamic kernel convolution.
struct DkParamsRef {
    Tensor w1, b1, w2, b2;       // branch convolutions
    std::size_t d1 = 1, d2 = 2;  // branch dilations
    Tensor v, vb;                // shared projection [hidden x 4C], [hidden]
    Tensor wa1, n1, wa2, n2;     // branch heads [C x hidden], [C]
};

/// Straight-line evaluation of the dynamic kernel convolution: branch sum,
/// high-order statistics, two dense layers, per-channel branch softmax, and
/// the weighted branch sum.
inline Tensor dkconv_ref(const Tensor& x, const DkParamsRef& p) {
    const std::size_t c = p.w1.size(0), frames = x.cols();
    Tensor h1 = conv1d_ref(x, p.w1, p.d1);
    Tensor h2 = conv1d_ref(x, p.w2, p.d2);
    for (std::size_t i = 0; i < c; ++i)
        for (std::size_t t = 0; t < frames; ++t) {
            h1.at(i, t) += p.b1.at(i);
            h2.at(i, t) += p.b2.at(i);
        }

    Tensor sum({c, frames});
    for (std::size_t i = 0; i < c * frames; ++i) sum.at(i) = h1.at(i) + h2.at(i);

    const MomentsRef stats = hosp_ref(sum);
    std::vector<double> cat(4 * c);
    for (std::size_t i = 0; i < c; ++i) {
        cat[i] = stats.mean[i];
        cat[c + i] = stats.stddev[i];
        cat[2 * c + i] = stats.skew[i];
        cat[3 * c + i] = stats.kurt[i];
    }

    const std::size_t hidden = p.vb.numel();
    std::vector<double> z(hidden);
    for (std::size_t h = 0; h < hidden; ++h) {
        double acc = p.vb.at(h);
        for (std::size_t j = 0; j < 4 * c; ++j) acc += p.v.at(h, j) * cat[j];
        z[h] = acc;
    }

    std::vector<double> s1(c), s2(c);
    for (std::size_t i = 0; i < c; ++i) {
        double l1 = p.n1.at(i), l2 = p.n2.at(i);
        for (std::size_t h = 0; h < hidden; ++h) {
            l1 += p.wa1.at(i, h) * z[h];
            l2 += p.wa2.at(i, h) * z[h];
        }
        const double mx = std::max(l1, l2);
        const double e1 = std::exp(l1 - mx), e2 = std::exp(l2 - mx);
        s1[i] = e1 / (e1 + e2);
        s2[i] = e2 / (e1 + e2);
    }

    Tensor out({c, frames});
    for (std::size_t i = 0; i < c; ++i)
        for (std::size_t t = 0; t < frames; ++t)
            out.at(i, t) = s1[i] * h1.at(i, t) + s2[i] * h2.at(i, t);
    return out;
}

/// Sequential oracle for the local multi-scale recurrence: group 1 passes
/// through, each later group applies its DkConv to (previous output + its
/// input slice); the result concatenates the group outputs in order.
inline Tensor multiscale_ref(const Tensor& x, const std::vector<DkParamsRef>& groups,
                             std::size_t splits) {
    const std::size_t channels = x.rows(), frames = x.cols();
    const std::size_t group = channels / splits;
    const auto slice = [&](std::size_t g) {
        Tensor s({group, frames});
        for (std::size_t i = 0; i < group; ++i)
            for (std::size_t t = 0; t < frames; ++t) s.at(i, t) = x.at(g * group + i, t);
        return s;
    };
    Tensor out({channels, frames});
    Tensor prev = slice(0);
    for (std::size_t i = 0; i < group; ++i)
        for (std::size_t t = 0; t < frames; ++t) out.at(i, t) = prev.at(i, t);
    for (std::size_t g = 1; g < splits; ++g) {
        Tensor in = slice(g);
        if (g >= 2) {
            for (std::size_t i = 0; i < group * frames; ++i) in.at(i) += prev.at(i);
        }
        prev = dkconv_ref(in, groups[g - 1]);
        for (std::size_t i = 0; i < group; ++i)
            for (std::size_t t = 0; t < frames; ++t) out.at(g * group + i, t) = prev.at(i, t);
    }
    return out;
}

/// Naive two-pass mean/std pooling over channel-concatenated taps.
inline std::vector<double> globalpool_ref(const std::vector<Tensor>& taps) {
    std::size_t channels = 0;
    const std::size_t frames = taps.front().cols();
    for (const auto& t : taps) channels += t.rows();
    std::vector<double> rows;
    rows.reserve(channels * frames);
    for (const auto& tap : taps)
        for (double v : tap.data()) rows.push_back(v);

    std::vector<double> out(2 * channels);
    for (std::size_t c = 0; c < channels; ++c) {
        double mu = 0.0;
        for (std::size_t t = 0; t < frames; ++t) mu += rows[c * frames + t];
        mu /= static_cast<double>(frames);
        double ex2 = 0.0;
        for (std::size_t t = 0; t < frames; ++t) ex2 += rows[c * frames + t] * rows[c * frames + t];
        ex2 /= static_cast<double>(frames);
        out[c] = mu;
        out[channels + c] = std::sqrt(ex2 - mu * mu + kGuard);
    }
    return out;
}

/// Pulls a parameter tensor out of a registry by exact name.
inline const Tensor& find_param(const ParamRegistry& reg, const std::string& name) {
    for (const auto& p : reg.params) {
        if (p.name == name) return p.var->value;
    }
    throw std::runtime_error("no parameter named " + name);
}

inline VarPtr find_param_var(const ParamRegistry& reg, const std::string& name) {
    for (const auto& p : reg.params) {
        if (p.name == name) return p.var;
    }
    throw std::runtime_error("no parameter named " + name);
}

/// Extracts the raw parameter bundle of a DkConv registered under `prefix`.
inline DkParamsRef dk_params(const ParamRegistry& reg, const std::string& prefix) {
    DkParamsRef p;
    p.w1 = find_param(reg, prefix + ".branch1.weight");
    p.b1 = find_param(reg, prefix + ".branch1.bias");
    p.w2 = find_param(reg, prefix + ".branch2.weight");
    p.b2 = find_param(reg, prefix + ".branch2.bias");
    p.v = find_param(reg, prefix + ".attention.v");
    p.vb = find_param(reg, prefix + ".attention.b");
    p.wa1 = find_param(reg, prefix + ".attention.w1");
    p.n1 = find_param(reg, prefix + ".attention.n1");
    p.wa2 = find_param(reg, prefix + ".attention.w2");
    p.n2 = find_param(reg, prefix + ".attention.n2");
    return p;
}

}  // namespace dmsc::testing::oracle
