#pragma once

// Shared generators and independent reference implementations for the test
// binaries. Nothing here calls into the library code it is used to check.

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <filesystem>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "xtalk/tensor.hpp"

namespace xtalk::testing {

// Seeded source of random test cases.
class Gen {
 public:
  explicit Gen(std::uint64_t seed) : rng_(seed) {}

  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng_); }
  double normal(double mean = 0.0, double sd = 1.0) { return std::normal_distribution<double>(mean, sd)(rng_); }
  int integer(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng_); }
  std::size_t index(std::size_t n) { return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng_); }
  bool coin() { return integer(0, 1) == 1; }

  template <typename T>
  Tensor<T> tensor(Shape s, double sd = 1.0, double mean = 0.0) {
    Tensor<T> t(s);
    for (auto& v : t.values()) v = static_cast<T>(normal(mean, sd));
    return t;
  }

  // Rows of (B, K, 1, 1) drawn from a flat Dirichlet.
  template <typename T>
  Tensor<T> probs(std::size_t b, std::size_t k) {
    Tensor<T> p(b, k);
    std::exponential_distribution<double> e(1.0);
    for (std::size_t r = 0; r < b; ++r) {
      double s = 0.0;
      for (std::size_t j = 0; j < k; ++j) s += (p.at(r, j) = static_cast<T>(e(rng_) + 1e-3));
      for (std::size_t j = 0; j < k; ++j) p.at(r, j) = static_cast<T>(p.at(r, j) / s);
    }
    return p;
  }

  std::mt19937_64& engine() { return rng_; }

 private:
  std::mt19937_64 rng_;
};

// Direct-summation 2-D convolution, stride 1, zero "same" padding.
inline Tensor<double> conv2d_reference(const Tensor<double>& x, const Tensor<double>& w,
                                       const Tensor<double>& bias) {
  const Shape s = x.shape();
  const std::size_t out = w.shape().n, k = w.shape().h;
  const long pad = static_cast<long>(k / 2);
  Tensor<double> y(s.n, out, s.h, s.w);
  for (std::size_t b = 0; b < s.n; ++b)
    for (std::size_t o = 0; o < out; ++o)
      for (std::size_t i = 0; i < s.h; ++i)
        for (std::size_t j = 0; j < s.w; ++j) {
          double acc = bias[o];
          for (std::size_t c = 0; c < s.c; ++c)
            for (std::size_t ky = 0; ky < k; ++ky)
              for (std::size_t kx = 0; kx < k; ++kx) {
                const long yy = static_cast<long>(i + ky) - pad, xx = static_cast<long>(j + kx) - pad;
                if (yy < 0 || xx < 0 || yy >= static_cast<long>(s.h) || xx >= static_cast<long>(s.w)) continue;
                acc += w.at(o, c, ky, kx) * x.at(b, c, static_cast<std::size_t>(yy), static_cast<std::size_t>(xx));
              }
          y.at(b, o, i, j) = acc;
        }
  return y;
}

// |X[k]| of one real frame by the defining sum.
inline double dft_magnitude(const std::vector<double>& frame, std::size_t k) {
  std::complex<double> acc = 0.0;
  const double n = static_cast<double>(frame.size());
  for (std::size_t t = 0; t < frame.size(); ++t)
    acc += frame[t] * std::polar(1.0, -2.0 * std::numbers::pi * static_cast<double>(k * t) / n);
  return std::abs(acc);
}

// Biased multi-kernel MMD^2 straight from its definition.
inline double mmd2_reference(const std::vector<std::vector<double>>& s, const std::vector<std::vector<double>>& t,
                             const std::vector<double>& multipliers) {
  auto d2 = [](const std::vector<double>& a, const std::vector<double>& b) {
    double r = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) r += (a[i] - b[i]) * (a[i] - b[i]);
    return r;
  };
  std::vector<std::vector<double>> all = s;
  all.insert(all.end(), t.begin(), t.end());
  std::vector<double> pairs;
  for (std::size_t i = 0; i < all.size(); ++i)
    for (std::size_t j = i + 1; j < all.size(); ++j) pairs.push_back(d2(all[i], all[j]));
  std::sort(pairs.begin(), pairs.end());
  const std::size_t m = pairs.size();
  double med = m % 2 ? pairs[m / 2] : 0.5 * (pairs[m / 2 - 1] + pairs[m / 2]);
  if (med == 0.0) med = 1.0;
  auto k = [&](const std::vector<double>& a, const std::vector<double>& b) {
    double r = 0.0;
    for (double mult : multipliers) r += std::exp(-d2(a, b) / (2.0 * mult * med));
    return r;
  };
  auto gram_mean = [&](const auto& a, const auto& b) {
    double r = 0.0;
    for (const auto& x : a)
      for (const auto& y : b) r += k(x, y);
    return r / static_cast<double>(a.size() * b.size());
  };
  return gram_mean(s, s) + gram_mean(t, t) - 2.0 * gram_mean(s, t);
}

// Macro-F1 from an explicit K x K confusion matrix.
inline double macro_f1_reference(const std::vector<int>& preds, const std::vector<int>& labels, int k) {
  std::vector<std::vector<int>> cm(k, std::vector<int>(k, 0));
  for (std::size_t i = 0; i < preds.size(); ++i) ++cm[labels[i]][preds[i]];
  double sum = 0.0;
  for (int c = 0; c < k; ++c) {
    int tp = cm[c][c], fp = 0, fn = 0;
    for (int o = 0; o < k; ++o) {
      if (o == c) continue;
      fp += cm[o][c];
      fn += cm[c][o];
    }
    const int den = 2 * tp + fp + fn;
    sum += den == 0 ? 0.0 : 2.0 * tp / den;
  }
  return sum / k;
}

// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto p = std::filesystem::temp_directory_path() / ("xtalk_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace xtalk::testing
