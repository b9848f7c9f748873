#pragma once

// Waveform -> (B, 1, 80, 48) dB magnitude spectrogram.

#include <cstddef>
#include <span>
#include <vector>

#include "xtalk/siggen.hpp"
#include "xtalk/tensor.hpp"

namespace xtalk {

inline constexpr std::size_t kFftSize = 4096;
inline constexpr std::size_t kHopSize = 2048;
inline constexpr std::size_t kFirstBin = 4;  // 25 Hz
inline constexpr std::size_t kFreqBins = 80;  // bins 4..83, 25..518.75 Hz
inline constexpr std::size_t kFrames = 48;
inline constexpr double kDbEpsilon = 1e-8;

struct Spectrogram {
  Tensor<float> values;           // (B, 1, kFreqBins, kFrames)
  std::vector<double> freq_axis;  // bin centers, Hz
  std::vector<double> time_axis;  // frame centers, s
};

/// Periodic Hann window of length n.
std::vector<double> hann_window(std::size_t n);

/// 20*log10(|STFT| + 1e-8) with a 4096-point Hann window and hop 2048, no
/// padding, cropped to FFT bins 4..83 and the first 48 frames. Throws
/// ShapeError unless `samples` holds exactly 102400 values.
Spectrogram stft_db(std::span<const float> samples, double fs_hz = kSampleRateHz);
Spectrogram stft_db(const WaveSegment& segment);

/// Stack single-item spectrograms along the batch axis, order preserved.
Spectrogram batchify(std::span<const Spectrogram> items);

}  // namespace xtalk
