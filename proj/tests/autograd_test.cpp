// Copyright 2026 The vqau Authors.
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

#include "gradcheck.hpp"
#include "vqau/autograd.hpp"

namespace vqau {
namespace {

using testing::Vd;

constexpr double kTol = 1e-3;

class OpGradient : public ::testing::TestWithParam<std::size_t> {};

TEST_P(OpGradient, MatchesCentralDifferences) {
  const auto cases = testing::op_cases();
  const auto& c = cases.at(GetParam());
  Rng rng = derive_rng(7, GetParam());
  for (int trial = 0; trial < 8; ++trial) {
    EXPECT_LT(c.run(rng), kTol) << c.name << " trial " << trial;
  }
}

INSTANTIATE_TEST_SUITE_P(AllOps, OpGradient,
                         ::testing::Range<std::size_t>(0, testing::op_cases().size()),
                         [](const auto& info) { return testing::op_cases()[info.param].name; });

TEST(Autograd, StopGradientBlocksFlow) {
  Vd a = Vd::parameter(Matd::Constant(2, 2, 3.0));
  ag::sum(ag::mul(ag::stop_gradient(a), a)).backward();
  EXPECT_TRUE(a.grad().isApprox(Matd::Constant(2, 2, 3.0)));
}

TEST(Autograd, StraightThroughCopiesGradient) {
  Vd a = Vd::parameter(Matd::Zero(1, 3));
  Matd repl(1, 3);
  repl << 5, 6, 7;
  Vd y = ag::straight_through(a, repl);
  EXPECT_TRUE(y.data().isApprox(repl));
  Vd w = Vd::constant((Matd(1, 3) << 1, -2, 4).finished());
  ag::sum(ag::mul(y, w)).backward();
  EXPECT_TRUE(a.grad().isApprox(w.data()));
}

TEST(Autograd, GradientsAccumulateAcrossUses) {
  Vd a = Vd::parameter(Matd::Constant(1, 1, 2.0));
  ag::add(ag::mul(a, a), a).backward();
  EXPECT_DOUBLE_EQ(a.grad()(0, 0), 5.0);
}

TEST(Autograd, NoGradGuardDropsGraph) {
  Vd a = Vd::parameter(Matd::Ones(1, 1));
  ag::NoGradGuard guard;
  EXPECT_FALSE(ag::mul(a, a).requires_grad());
}

TEST(Autograd, BackwardNeedsScalar) {
  Vd a = Vd::parameter(Matd::Ones(2, 1));
  EXPECT_THROW(a.backward(), ShapeError);
}

TEST(Autograd, ShapeMismatchThrows) {
  Vd a = Vd::constant(Matd::Ones(2, 2)), b = Vd::constant(Matd::Ones(2, 3));
  EXPECT_THROW(ag::add(a, b), ShapeError);
  EXPECT_THROW(ag::matmul(b, b), ShapeError);
}

TEST(Autograd, ConvOutputLength) {
  EXPECT_EQ(ag::conv_out_len(128, 4, 2, 1, 1), 64);
  EXPECT_EQ(ag::conv_out_len(10, 3, 1, 1, 1), 10);
}

TEST(Autograd, Im2colZeroPads) {
  Vd x = Vd::constant((Matd(3, 1) << 1, 2, 3).finished());
  Vd y = ag::im2col(x, {1, 3}, 3, 1, 1, 3);
  Matd want(3, 3);
  want << 0, 1, 2, 1, 2, 3, 2, 3, 0;
  EXPECT_TRUE(y.data().isApprox(want));
}

TEST(Autograd, GatherMinusOneIsZeroRow) {
  Vd a = Vd::parameter(Matd::Ones(2, 2));
  Vd y = ag::gather_rows(a, {-1, 1});
  EXPECT_EQ(y.data().row(0).norm(), 0.0);
  ag::sum(y).backward();
  EXPECT_EQ(a.grad()(0, 0), 0.0);
  EXPECT_EQ(a.grad()(1, 0), 1.0);
}

TEST(Autograd, CheckFiniteCatchesNan) {
  ag::set_check_finite(true);
  Vd a = Vd::constant(Matd::Constant(1, 1, std::numeric_limits<double>::quiet_NaN()));
  EXPECT_THROW(ag::relu(a), NumericError);
  ag::set_check_finite(false);
}

}  // namespace
}  // namespace vqau
