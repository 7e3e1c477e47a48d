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

// Log-Mel front end: Hann-windowed STFT magnitudes pooled by triangular
// filters equally spaced on the HTK mel scale, then log(x + 1e-10).

#ifndef VQAU_LOG_MEL_HPP_
#define VQAU_LOG_MEL_HPP_

#include <fftw3.h>

#include <cmath>
#include <memory>
#include <span>
#include <vector>

#include "vqau/common.hpp"
#include "vqau/io.hpp"

namespace vqau::features {

inline constexpr double kLogFloor = 1e-10;

struct MelParams {
  double sample_rate_hz = 16000.0;
  double hop_ms = 10.0;
  double win_ms = 25.0;
  int n_fft = 512;
  int n_mels = 40;
  double low_hz = 0.0;
  double high_hz = 0.0;  // 0 means Nyquist

  int hop_samples() const { return static_cast<int>(std::lround(sample_rate_hz * hop_ms / 1000.0)); }
  int win_samples() const { return static_cast<int>(std::lround(sample_rate_hz * win_ms / 1000.0)); }
  double nyquist() const { return high_hz > 0.0 ? high_hz : 0.5 * sample_rate_hz; }
};

inline double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
inline double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

/// Center frequency (Hz) of mel band `band`.
inline double mel_center_hz(const MelParams& p, int band) {
  const double lo = hz_to_mel(p.low_hz);
  const double hi = hz_to_mel(p.nyquist());
  return mel_to_hz(lo + (hi - lo) * (band + 1) / (p.n_mels + 1));
}

/// n_mels x (n_fft/2 + 1) triangular filterbank, peak weight 1.
inline Matd mel_filterbank(const MelParams& p) {
  const int n_bins = p.n_fft / 2 + 1;
  require(p.n_mels >= 1 && p.n_mels <= n_bins, "log_mel: n_mels must be in [1, n_fft/2 + 1]");
  Matd fb = Matd::Zero(p.n_mels, n_bins);
  const double lo = hz_to_mel(p.low_hz);
  const double hi = hz_to_mel(p.nyquist());
  std::vector<double> edges(static_cast<std::size_t>(p.n_mels + 2));
  for (int i = 0; i < p.n_mels + 2; ++i) edges[i] = mel_to_hz(lo + (hi - lo) * i / (p.n_mels + 1));
  for (int m = 0; m < p.n_mels; ++m) {
    const double left = edges[m], center = edges[m + 1], right = edges[m + 2];
    for (int k = 0; k < n_bins; ++k) {
      const double f = k * p.sample_rate_hz / p.n_fft;
      if (f > left && f < center) {
        fb(m, k) = (f - left) / (center - left);
      } else if (f >= center && f < right) {
        fb(m, k) = (right - f) / (right - center);
      }
    }
  }
  return fb;
}

/// Log-Mel spectrogram of a waveform. Frames are taken without padding, so
/// the output has 1 + (n - win) / hop frames.
inline FeatureSequence log_mel(std::span<const float> waveform, const MelParams& p) {
  const int win = p.win_samples();
  const int hop = p.hop_samples();
  require(hop >= 1 && win >= 1 && win <= p.n_fft, "log_mel: need 1 <= win <= n_fft and hop >= 1");
  require(!waveform.empty(), "log_mel: empty waveform");
  require(static_cast<int>(waveform.size()) >= win, "log_mel: waveform (", waveform.size(),
          " samples) is shorter than one window (", win, ")");
  const Matd fb = mel_filterbank(p);
  const int n_bins = p.n_fft / 2 + 1;
  const int n_frames = 1 + (static_cast<int>(waveform.size()) - win) / hop;

  std::vector<double> window(static_cast<std::size_t>(win));
  for (int i = 0; i < win; ++i) window[i] = 0.5 - 0.5 * std::cos(6.283185307179586 * i / win);

  auto* in = static_cast<double*>(fftw_malloc(sizeof(double) * p.n_fft));
  auto* out = static_cast<fftw_complex*>(fftw_malloc(sizeof(fftw_complex) * n_bins));
  std::unique_ptr<double, decltype(&fftw_free)> in_guard(in, &fftw_free);
  std::unique_ptr<fftw_complex, decltype(&fftw_free)> out_guard(out, &fftw_free);
  fftw_plan plan = fftw_plan_dft_r2c_1d(p.n_fft, in, out, FFTW_ESTIMATE);
  std::unique_ptr<std::remove_pointer_t<fftw_plan>, decltype(&fftw_destroy_plan)> plan_guard(
      plan, &fftw_destroy_plan);

  FeatureSequence seq;
  seq.frame_rate_hz = static_cast<float>(p.sample_rate_hz / hop);
  seq.frames.resize(n_frames, p.n_mels);
  ColVec<double> mag(n_bins);
  for (int f = 0; f < n_frames; ++f) {
    std::fill(in, in + p.n_fft, 0.0);
    for (int i = 0; i < win; ++i) in[i] = window[i] * waveform[static_cast<std::size_t>(f * hop + i)];
    fftw_execute(plan);
    for (int k = 0; k < n_bins; ++k) mag(k) = std::hypot(out[k][0], out[k][1]);
    const ColVec<double> mel = fb * mag;
    for (int m = 0; m < p.n_mels; ++m) seq.frames(f, m) = static_cast<float>(std::log(mel(m) + kLogFloor));
  }
  return seq;
}

}  // namespace vqau::features

#endif  // VQAU_LOG_MEL_HPP_
