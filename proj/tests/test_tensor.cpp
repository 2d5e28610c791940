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

#include <gtest/gtest.h>

#include "dmsc/autodiff.hpp"
#include "dmsc/rng.hpp"
#include "dmsc/tensor.hpp"

using namespace dmsc;

TEST(Tensor, ShapeAndStorage) {
    Tensor t({2, 3});
    EXPECT_EQ(t.numel(), 6u);
    EXPECT_EQ(t.rows(), 2u);
    EXPECT_EQ(t.cols(), 3u);
    t.at(1, 2) = 7.0;
    EXPECT_DOUBLE_EQ(t.data()[5], 7.0);  // row-major
    EXPECT_EQ(t.shape_str(), "[2x3]");
}

TEST(Tensor, ShapeDataMismatchThrows) {
    EXPECT_THROW(Tensor({2, 2}, {1.0, 2.0}), DimError);
    EXPECT_THROW(Tensor({0, 2}), DimError);
}

TEST(Matmul, IdentityCase) {
    auto a = constant(Tensor::matrix(2, 2, {1, 0, 0, 1}));
    auto b = constant(Tensor::matrix(2, 2, {1, 2, 3, 4}));
    auto c = matmul(a, b);
    EXPECT_EQ(c->value.data(), (std::vector<double>{1, 2, 3, 4}));
}

TEST(Matmul, SelectorRow) {
    auto a = constant(Tensor::matrix(1, 2, {1, 0}));
    auto b = constant(Tensor::matrix(2, 1, {2, 5}));
    auto c = matmul(a, b);
    ASSERT_EQ(c->value.numel(), 1u);
    EXPECT_DOUBLE_EQ(c->value.at(0), 2.0);
}

TEST(Matmul, ShapeMismatchNamesBothShapes) {
    auto a = constant(Tensor({2, 3}));
    auto b = constant(Tensor({2, 3}));
    try {
        matmul(a, b);
        FAIL() << "expected DimError";
    } catch (const DimError& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("[2x3]"), std::string::npos) << msg;
    }
}

TEST(Conv1d, OneTapKernelIsChannelScaling) {
    auto x = constant(Tensor::matrix(1, 3, {1, 2, 3}));
    auto w = constant(Tensor({1, 1, 1}, {2}));
    auto y = conv1d(x, w, 1);
    EXPECT_EQ(y->value.data(), (std::vector<double>{2, 4, 6}));
}

TEST(Conv1d, ShiftKernelUnderZeroPadding) {
    auto x = constant(Tensor::matrix(1, 3, {0, 1, 0}));
    auto w = constant(Tensor({1, 1, 3}, {0, 0, 1}));
    auto y = conv1d(x, w, 1);
    EXPECT_EQ(y->value.data(), (std::vector<double>{1, 0, 0}));
}

TEST(Conv1d, DilatedShiftMatchesSlidingWindowOracle) {
    auto x = constant(Tensor::matrix(1, 5, {0, 0, 1, 0, 0}));
    auto w = constant(Tensor({1, 1, 3}, {1, 0, 0}));
    auto y = conv1d(x, w, 2);
    EXPECT_EQ(y->value.data(), (std::vector<double>{0, 0, 0, 0, 1}));
}

// Direct sliding-window oracle on a random multi-channel instance.
TEST(Conv1d, MatchesNaiveLoopOracle) {
    rng::SplitMix64 gen(rng::mix(11, 22));
    const std::size_t c_in = 3, c_out = 2, frames = 9, kernel = 3, dilation = 2;
    Tensor xt = Tensor::gaussian({c_in, frames}, gen);
    Tensor wt = Tensor::gaussian({c_out, c_in, kernel}, gen);

    auto y = conv1d(constant(xt), constant(wt), dilation);

    const std::ptrdiff_t mid = (kernel - 1) / 2;
    for (std::size_t co = 0; co < c_out; ++co) {
        for (std::size_t t = 0; t < frames; ++t) {
            double acc = 0.0;
            for (std::size_t ci = 0; ci < c_in; ++ci)
                for (std::size_t k = 0; k < kernel; ++k) {
                    const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t) +
                                               (static_cast<std::ptrdiff_t>(k) - mid) *
                                                   static_cast<std::ptrdiff_t>(dilation);
                    if (src < 0 || src >= static_cast<std::ptrdiff_t>(frames)) continue;
                    acc += wt.at(co, ci, k) * xt.at(ci, static_cast<std::size_t>(src));
                }
            EXPECT_NEAR(y->value.at(co, t), acc, 1e-12);
        }
    }
}

TEST(Conv1d, EvenKernelRejected) {
    auto x = constant(Tensor({1, 8}));
    auto w = constant(Tensor({1, 1, 4}));
    EXPECT_THROW(conv1d(x, w, 1), ConfigError);
}

TEST(Conv1d, TooShortSequenceRejected) {
    auto x = constant(Tensor({1, 4}));
    auto w = constant(Tensor({1, 1, 3}));
    EXPECT_THROW(conv1d(x, w, 2), SequenceError);  // reach = 4 >= T
}

// Output length equals input length for all K, dilation within preconditions.
TEST(Conv1d, SamePaddingPreservesLength) {
    rng::SplitMix64 gen(rng::mix(5, 7));
    for (std::size_t kernel : {1u, 3u, 5u, 7u}) {
        for (std::size_t dilation : {1u, 2u, 3u}) {
            const std::size_t frames = (kernel - 1) * dilation + 3;
            Tensor xt = Tensor::gaussian({2, frames}, gen);
            Tensor wt = Tensor::gaussian({2, 2, kernel}, gen);
            auto y = conv1d(constant(xt), constant(wt), dilation);
            EXPECT_EQ(y->value.cols(), frames);
            EXPECT_EQ(y->value.rows(), 2u);
        }
    }
}

TEST(Elementwise, ReluAndMul) {
    auto r = relu(constant(Tensor::vector({-1, 0, 2})));
    EXPECT_EQ(r->value.data(), (std::vector<double>{0, 0, 2}));

    auto m = mul(constant(Tensor::vector({1, 2})), constant(Tensor::vector({3, 4})));
    EXPECT_EQ(m->value.data(), (std::vector<double>{3, 8}));
}

TEST(Elementwise, IncompatibleShapesThrow) {
    auto a = constant(Tensor({2, 2}));
    auto b = constant(Tensor({4}));
    EXPECT_THROW(add(a, b), DimError);
    EXPECT_THROW(mul_rowvec(constant(Tensor({3, 2})), constant(Tensor({2}))), DimError);
}

TEST(Elementwise, DivGuardsDenominator) {
    auto q = div(constant(Tensor::vector({1.0})), constant(Tensor::vector({0.0})));
    EXPECT_DOUBLE_EQ(q->value.at(0), 1.0 / 1e-8);
}

TEST(Elementwise, NonFiniteOutputIsAnError) {
    auto big = constant(Tensor::vector({1e308}));
    EXPECT_THROW(mul(big, big), NumericError);
    EXPECT_THROW(log(constant(Tensor::vector({-1.0}))), NumericError);
}

TEST(Softmax, SymmetricInput) {
    auto s = softmax(constant(Tensor::vector({0, 0})));
    EXPECT_DOUBLE_EQ(s->value.at(0), 0.5);
    EXPECT_DOUBLE_EQ(s->value.at(1), 0.5);
}

TEST(Softmax, LargeLogitsDoNotOverflow) {
    auto s = softmax(constant(Tensor::vector({1000, 0})));
    EXPECT_DOUBLE_EQ(s->value.at(0), 1.0);
    EXPECT_DOUBLE_EQ(s->value.at(1), 0.0);
}

TEST(Softmax, SumsToOneAlongAxis) {
    rng::SplitMix64 gen(rng::mix(3, 9));
    for (int trial = 0; trial < 50; ++trial) {
        Tensor m = Tensor::gaussian({4, 6}, gen);
        for (double& v : m.data()) v *= 10.0;
        for (std::size_t axis : {0u, 1u}) {
            auto s = softmax(constant(m), axis);
            const std::size_t slices = axis == 0 ? m.cols() : m.rows();
            for (std::size_t i = 0; i < slices; ++i) {
                double total = 0.0;
                const std::size_t n = axis == 0 ? m.rows() : m.cols();
                for (std::size_t j = 0; j < n; ++j)
                    total += axis == 0 ? s->value.at(j, i) : s->value.at(i, j);
                EXPECT_NEAR(total, 1.0, 1e-12);
            }
        }
    }
}

TEST(Structural, ConcatSliceRoundTrip) {
    auto a = constant(Tensor::matrix(2, 3, {1, 2, 3, 4, 5, 6}));
    auto b = constant(Tensor::matrix(1, 3, {7, 8, 9}));
    auto cat = concat_rows({a, b});
    EXPECT_EQ(cat->value.rows(), 3u);
    auto back = slice_rows(cat, 2, 3);
    EXPECT_EQ(back->value.data(), (std::vector<double>{7, 8, 9}));
}

TEST(Structural, StackColsLayout) {
    auto c0 = constant(Tensor::vector({1, 2}));
    auto c1 = constant(Tensor::vector({3, 4}));
    auto m = stack_cols({c0, c1});
    EXPECT_EQ(m->value.shape(), (std::vector<std::size_t>{2, 2}));
    EXPECT_DOUBLE_EQ(m->value.at(0, 1), 3.0);
    EXPECT_DOUBLE_EQ(m->value.at(1, 0), 2.0);
}

TEST(Structural, GatherScatterPerColumn) {
    auto m = constant(Tensor::matrix(3, 2, {1, 2, 3, 4, 5, 6}));
    auto g = gather_per_col(m, {2, 0});
    EXPECT_EQ(g->value.data(), (std::vector<double>{5, 2}));
    EXPECT_THROW(gather_per_col(m, {3, 0}), ConfigError);

    auto s = scatter_per_col(constant(Tensor::vector({9, 8})), {1, 2}, 3);
    EXPECT_DOUBLE_EQ(s->value.at(1, 0), 9.0);
    EXPECT_DOUBLE_EQ(s->value.at(2, 1), 8.0);
    EXPECT_DOUBLE_EQ(s->value.at(0, 0), 0.0);
}

TEST(Rng, StreamsAreStableAndIndependent) {
    auto a = rng::stream(42, "alpha");
    auto b = rng::stream(42, "alpha");
    auto c = rng::stream(42, "beta");
    const auto x = a.next_u64();
    EXPECT_EQ(x, b.next_u64());
    EXPECT_NE(x, c.next_u64());

    auto d = rng::stream(42, "alpha", 1);
    EXPECT_NE(x, d.next_u64());
}
