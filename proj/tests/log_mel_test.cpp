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

#include <cmath>
#include <vector>

#include "vqau/log_mel.hpp"

namespace vqau {
namespace {

using features::MelParams;

std::vector<float> sine(double hz, int n, double rate = 16000.0) {
  std::vector<float> w(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) w[i] = static_cast<float>(std::sin(6.283185307179586 * hz * i / rate));
  return w;
}

TEST(LogMel, MelScaleRoundTrip) {
  for (double hz : {0.0, 100.0, 1000.0, 7999.0}) EXPECT_NEAR(features::mel_to_hz(features::hz_to_mel(hz)), hz, 1e-9);
  EXPECT_NEAR(features::hz_to_mel(1000.0), 1000.0, 0.5);
}

TEST(LogMel, FrameCountAndRate) {
  MelParams p;
  const auto seq = features::log_mel(sine(440, 16000), p);
  EXPECT_EQ(seq.n_frames(), 1 + (16000 - 400) / 160);
  EXPECT_EQ(seq.dim(), 40);
  EXPECT_FLOAT_EQ(seq.frame_rate_hz, 100.0f);
}

TEST(LogMel, SilenceHitsLogFloor) {
  const std::vector<float> zeros(4000, 0.0f);
  const auto seq = features::log_mel(zeros, MelParams{});
  const float floor = static_cast<float>(std::log(features::kLogFloor));
  for (Index i = 0; i < seq.frames.size(); ++i) EXPECT_FLOAT_EQ(seq.frames.data()[i], floor);
}

TEST(LogMel, FilterbankRowsPeakAtOne) {
  const Matd fb = features::mel_filterbank(MelParams{});
  EXPECT_EQ(fb.rows(), 40);
  EXPECT_EQ(fb.cols(), 257);
  for (Index m = 0; m < fb.rows(); ++m) {
    EXPECT_GT(fb.row(m).maxCoeff(), 0.0) << m;
    EXPECT_LE(fb.row(m).maxCoeff(), 1.0) << m;
    EXPECT_GE(fb.row(m).minCoeff(), 0.0) << m;
  }
}

class ToneBand : public ::testing::TestWithParam<int> {};

TEST_P(ToneBand, PeakInCenterBand) {
  MelParams p;
  const int band = GetParam();
  const auto seq = features::log_mel(sine(features::mel_center_hz(p, band), 4000), p);
  for (Index f = 0; f < seq.n_frames(); ++f) {
    Index arg = 0;
    seq.frames.row(f).maxCoeff(&arg);
    EXPECT_EQ(arg, band) << "frame " << f;
  }
}

INSTANTIATE_TEST_SUITE_P(Bands, ToneBand, ::testing::Values(8, 12, 20, 27, 33, 39));

TEST(LogMel, ShortWaveformRejected) {
  EXPECT_THROW(features::log_mel(sine(100, 100), MelParams{}), UsageError);
}

}  // namespace
}  // namespace vqau
