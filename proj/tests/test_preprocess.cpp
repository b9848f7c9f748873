#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <numbers>

#include "support.hpp"
#include "xtalk/errors.hpp"
#include "xtalk/preprocess.hpp"

using namespace xtalk;
using xtalk::testing::Gen;

namespace {

std::vector<float> sinusoid(double hz, double amp = 1.0, double phase = 0.0) {
  std::vector<float> x(kSegmentSamples);
  for (std::size_t i = 0; i < x.size(); ++i)
    x[i] = static_cast<float>(amp * std::sin(2.0 * std::numbers::pi * hz * static_cast<double>(i) / kSampleRateHz + phase));
  return x;
}

std::vector<double> windowed_frame(const std::vector<float>& x, std::size_t frame) {
  std::vector<double> f(kFftSize);
  for (std::size_t n = 0; n < kFftSize; ++n) {
    const double w = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(n) / kFftSize);
    f[n] = w * x[frame * kHopSize + n];
  }
  return f;
}

}  // namespace

TEST_CASE("periodic Hann window") {
  const auto w = hann_window(8);
  REQUIRE(w.size() == 8);
  CHECK(w[0] == doctest::Approx(0.0));
  CHECK(w[4] == doctest::Approx(1.0));
  CHECK(w[2] == doctest::Approx(0.5));
  CHECK(w[1] == doctest::Approx(w[7]));
}

TEST_CASE("silence sits at the dB floor") {
  const std::vector<float> zeros(kSegmentSamples, 0.0f);
  const auto sp = stft_db(zeros);
  CHECK(sp.values.shape() == Shape{1, 1, kFreqBins, kFrames});
  for (float v : sp.values.values()) CHECK(v == doctest::Approx(-160.0).epsilon(1e-6));
}

TEST_CASE("axes") {
  const auto sp = stft_db(std::vector<float>(kSegmentSamples, 0.0f));
  REQUIRE(sp.freq_axis.size() == kFreqBins);
  REQUIRE(sp.time_axis.size() == kFrames);
  CHECK(sp.freq_axis.front() == doctest::Approx(25.0));
  CHECK(sp.freq_axis.back() == doctest::Approx(518.75));
  for (std::size_t i = 1; i < kFreqBins; ++i) CHECK(sp.freq_axis[i] > sp.freq_axis[i - 1]);
  for (std::size_t i = 1; i < kFrames; ++i) CHECK(sp.time_axis[i] > sp.time_axis[i - 1]);
  CHECK(sp.freq_axis.front() >= 20.0);
  CHECK(sp.freq_axis.back() <= 520.0);
}

TEST_CASE("100 Hz tone lands in row 12 and matches a direct DFT") {
  const auto x = sinusoid(100.0);
  const auto sp = stft_db(x);
  for (std::size_t t = 0; t < kFrames; ++t) {
    std::size_t best = 0;
    for (std::size_t f = 1; f < kFreqBins; ++f)
      if (sp.values.at(0, 0, f, t) > sp.values.at(0, 0, best, t)) best = f;
    CHECK(best == 12);
  }
  for (std::size_t t : {std::size_t{0}, std::size_t{31}}) {
    const auto frame = windowed_frame(x, t);
    for (std::size_t row : {std::size_t{11}, std::size_t{12}, std::size_t{13}}) {
      const double ref = 20.0 * std::log10(xtalk::testing::dft_magnitude(frame, row + kFirstBin) + kDbEpsilon);
      CHECK(sp.values.at(0, 0, row, t) == doctest::Approx(ref).epsilon(1e-4));
    }
  }
}

TEST_CASE("scaling by 10 adds 20 dB") {
  const auto x = sinusoid(212.5, 0.7, 0.3);
  std::vector<float> y(x);
  for (auto& v : y) v *= 10.0f;
  const auto a = stft_db(x), b = stft_db(y);
  for (std::size_t i = 0; i < a.values.size(); ++i) {
    if (a.values[i] < -100.0f) continue;
    CHECK(b.values[i] - a.values[i] == doctest::Approx(20.0).epsilon(1e-3));
  }
}

TEST_CASE("wrong sample count is a shape error") {
  CHECK_THROWS_AS(stft_db(std::vector<float>(1000)), ShapeError);
  CHECK_THROWS_AS(stft_db(std::vector<float>(kSegmentSamples + 1)), ShapeError);
}

TEST_CASE("property: a bin-centred tone keeps at least 90% of frame power within one bin") {
  Gen gen(3);
  for (int trial = 0; trial < 12; ++trial) {
    const std::size_t row = 1 + gen.index(kFreqBins - 2);
    const double hz = 6.25 * static_cast<double>(row + kFirstBin);
    const auto sp = stft_db(sinusoid(hz, gen.uniform(0.1, 5.0), gen.uniform(0.0, 6.0)));
    for (std::size_t t = 0; t < kFrames; t += 7) {
      double total = 0.0, near = 0.0;
      for (std::size_t f = 0; f < kFreqBins; ++f) {
        const double p = std::pow(10.0, sp.values.at(0, 0, f, t) / 10.0);
        total += p;
        if (f + 1 >= row && f <= row + 1) near += p;
      }
      CHECK(near / total >= 0.9);
    }
  }
}

TEST_CASE("property: spectrograms are deterministic and finite") {
  Gen gen(8);
  std::vector<float> x(kSegmentSamples);
  for (auto& v : x) v = static_cast<float>(gen.normal());
  const auto a = stft_db(x), b = stft_db(x);
  CHECK(a.values == b.values);
  for (float v : a.values.values()) CHECK(std::isfinite(v));
}

TEST_CASE("batchify stacks in order") {
  Gen gen(9);
  std::vector<Spectrogram> items;
  for (int i = 0; i < 16; ++i) {
    Spectrogram s;
    s.values = gen.tensor<float>({1, 1, kFreqBins, kFrames});
    items.push_back(s);
  }
  const auto batch = batchify(items);
  CHECK(batch.values.shape() == Shape{16, 1, kFreqBins, kFrames});
  for (std::size_t i = 0; i < items.size(); ++i) CHECK(slice_rows(batch.values, i, 1) == items[i].values);

  const auto one = batchify(std::span<const Spectrogram>(items.data(), 1));
  CHECK(one.values == items[0].values);

  items[3].values = Tensor<float>(Shape{1, 1, kFreqBins, kFrames - 1});
  CHECK_THROWS_AS(batchify(items), ShapeError);
}
