#include "xtalk/preprocess.hpp"

#include <fftw3.h>

#include <cmath>
#include <memory>
#include <mutex>
#include <numbers>

namespace xtalk {

namespace {

std::mutex& planner_mutex() {
  static std::mutex m;
  return m;
}

// FFTW plans are not thread-safe to create, but executing a plan on its own
// buffers is. Each thread keeps one.
class FramePlan {
 public:
  FramePlan() {
    in_ = fftwf_alloc_real(kFftSize);
    out_ = fftwf_alloc_complex(kFftSize / 2 + 1);
    std::lock_guard lock(planner_mutex());
    plan_ = fftwf_plan_dft_r2c_1d(static_cast<int>(kFftSize), in_, out_, FFTW_ESTIMATE);
  }
  ~FramePlan() {
    {
      std::lock_guard lock(planner_mutex());
      fftwf_destroy_plan(plan_);
    }
    fftwf_free(in_);
    fftwf_free(out_);
  }
  FramePlan(const FramePlan&) = delete;
  FramePlan& operator=(const FramePlan&) = delete;

  float* input() { return in_; }
  const fftwf_complex* output() const { return out_; }
  void execute() { fftwf_execute(plan_); }

 private:
  float* in_ = nullptr;
  fftwf_complex* out_ = nullptr;
  fftwf_plan plan_ = nullptr;
};

FramePlan& thread_plan() {
  thread_local FramePlan plan;
  return plan;
}

const std::vector<float>& float_window() {
  static const std::vector<float> w = [] {
    const auto d = hann_window(kFftSize);
    return std::vector<float>(d.begin(), d.end());
  }();
  return w;
}

}  // namespace

std::vector<double> hann_window(std::size_t n) {
  std::vector<double> w(n);
  for (std::size_t i = 0; i < n; ++i)
    w[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(n));
  return w;
}

Spectrogram stft_db(std::span<const float> samples, double fs_hz) {
  if (samples.size() != kSegmentSamples)
    throw ShapeError("stft_db expects " + std::to_string(kSegmentSamples) + " samples, got " +
                     std::to_string(samples.size()));
  Spectrogram out;
  out.values = Tensor<float>(1, 1, kFreqBins, kFrames);
  out.freq_axis.resize(kFreqBins);
  out.time_axis.resize(kFrames);
  const double bin_hz = fs_hz / static_cast<double>(kFftSize);
  for (std::size_t f = 0; f < kFreqBins; ++f) out.freq_axis[f] = static_cast<double>(kFirstBin + f) * bin_hz;

  auto& plan = thread_plan();
  const auto& win = float_window();
  for (std::size_t t = 0; t < kFrames; ++t) {
    const std::size_t start = t * kHopSize;
    out.time_axis[t] = (static_cast<double>(start) + 0.5 * static_cast<double>(kFftSize)) / fs_hz;
    float* in = plan.input();
    for (std::size_t i = 0; i < kFftSize; ++i) in[i] = samples[start + i] * win[i];
    plan.execute();
    const fftwf_complex* spec = plan.output();
    for (std::size_t f = 0; f < kFreqBins; ++f) {
      const auto& z = spec[kFirstBin + f];
      const double mag = std::hypot(static_cast<double>(z[0]), static_cast<double>(z[1]));
      out.values.at(0, 0, f, t) = static_cast<float>(20.0 * std::log10(mag + kDbEpsilon));
    }
  }
  return out;
}

Spectrogram stft_db(const WaveSegment& segment) { return stft_db(segment.samples, segment.fs_hz); }

Spectrogram batchify(std::span<const Spectrogram> items) {
  if (items.empty()) throw ShapeError("batchify needs at least one item");
  const Shape item_shape = items.front().values.shape();
  std::size_t total = 0;
  for (const auto& it : items) {
    const Shape s = it.values.shape();
    if (s.c != item_shape.c || s.h != item_shape.h || s.w != item_shape.w)
      throw ShapeError("batchify: mixed shapes " + item_shape.str() + " vs " + s.str());
    total += s.n;
  }
  Spectrogram out;
  out.freq_axis = items.front().freq_axis;
  out.time_axis = items.front().time_axis;
  out.values = Tensor<float>(Shape{total, item_shape.c, item_shape.h, item_shape.w});
  float* dst = out.values.data();
  for (const auto& it : items) dst = std::copy_n(it.values.data(), it.values.size(), dst);
  return out;
}

}  // namespace xtalk
