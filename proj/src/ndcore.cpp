#include "xtalk/ndcore.hpp"

#include <cmath>
#include <cstring>

#include "blas.hpp"

namespace xtalk {

// ---------------------------------------------------------------------------
// ParamStore

template <typename T>
Param<T>& ParamStore<T>::add(const std::string& name, Shape shape, bool trainable) {
  if (params_.count(name)) throw ConfigError("duplicate parameter name '" + name + "'");
  Param<T> p;
  p.value = Tensor<T>(shape);
  p.grad = Tensor<T>(shape);
  p.trainable = trainable;
  return params_.emplace(name, std::move(p)).first->second;
}

template <typename T>
Param<T>& ParamStore<T>::get(const std::string& name) {
  auto it = params_.find(name);
  if (it == params_.end()) throw ConfigError("no parameter named '" + name + "'");
  return it->second;
}

template <typename T>
const Param<T>& ParamStore<T>::get(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw ConfigError("no parameter named '" + name + "'");
  return it->second;
}

template <typename T>
void ParamStore<T>::zero_grad() {
  for (auto& [_, p] : params_) p.grad.fill(T(0));
}

template <typename T>
std::size_t ParamStore<T>::trainable_count() const {
  std::size_t n = 0;
  for (const auto& [_, p] : params_)
    if (p.trainable) n += p.value.size();
  return n;
}

template <typename T>
typename ParamStore<T>::Snapshot ParamStore<T>::snapshot() const {
  Snapshot s;
  for (const auto& [name, p] : params_) s.emplace(name, p.value);
  return s;
}

template <typename T>
void ParamStore<T>::restore(const Snapshot& snap) {
  for (auto& [name, p] : params_) {
    auto it = snap.find(name);
    if (it == snap.end()) throw ConfigError("snapshot lacks parameter '" + name + "'");
    p.value.require_same(it->second, "restore");
    p.value = it->second;
  }
}

std::string to_string(NormKind k) {
  switch (k) {
    case NormKind::FLN: return "FLN";
    case NormKind::TLN: return "TLN";
    case NormKind::BN: return "BN";
    case NormKind::IN: return "IN";
    case NormKind::LN: return "LN";
  }
  return "?";
}

NormKind norm_kind_from_string(const std::string& s) {
  if (s == "FLN") return NormKind::FLN;
  if (s == "TLN") return NormKind::TLN;
  if (s == "BN") return NormKind::BN;
  if (s == "IN") return NormKind::IN;
  if (s == "LN") return NormKind::LN;
  throw ConfigError("unknown normalization kind '" + s + "'", "norm");
}

// ---------------------------------------------------------------------------
// Conv2d (stride 1, same padding)

namespace {

// col[(ci*k*k + ky*k + kx), y*W + x] = x[ci, y + ky - p, x + kx - p]
template <typename T>
void im2col(const T* img, std::size_t ch, std::size_t h, std::size_t w, std::size_t k, T* col) {
  const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>(k / 2);
  const std::size_t hw = h * w;
  for (std::size_t ci = 0; ci < ch; ++ci) {
    const T* plane = img + ci * hw;
    for (std::size_t ky = 0; ky < k; ++ky) {
      for (std::size_t kx = 0; kx < k; ++kx) {
        T* dst = col + ((ci * k + ky) * k + kx) * hw;
        const std::ptrdiff_t dx = static_cast<std::ptrdiff_t>(kx) - pad;
        const std::ptrdiff_t dy = static_cast<std::ptrdiff_t>(ky) - pad;
        for (std::size_t y = 0; y < h; ++y) {
          T* row = dst + y * w;
          const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y) + dy;
          if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(h)) {
            std::fill_n(row, w, T(0));
            continue;
          }
          const T* src = plane + static_cast<std::size_t>(sy) * w;
          const std::size_t x_lo = dx < 0 ? static_cast<std::size_t>(-dx) : 0;
          const std::size_t x_hi = dx > 0 ? w - static_cast<std::size_t>(dx) : w;
          for (std::size_t x = 0; x < x_lo; ++x) row[x] = T(0);
          for (std::size_t x = x_hi; x < w; ++x) row[x] = T(0);
          std::memcpy(row + x_lo, src + static_cast<std::ptrdiff_t>(x_lo) + dx, (x_hi - x_lo) * sizeof(T));
        }
      }
    }
  }
}

template <typename T>
void col2im(const T* col, std::size_t ch, std::size_t h, std::size_t w, std::size_t k, T* img) {
  const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>(k / 2);
  const std::size_t hw = h * w;
  std::fill_n(img, ch * hw, T(0));
  for (std::size_t ci = 0; ci < ch; ++ci) {
    T* plane = img + ci * hw;
    for (std::size_t ky = 0; ky < k; ++ky) {
      for (std::size_t kx = 0; kx < k; ++kx) {
        const T* src = col + ((ci * k + ky) * k + kx) * hw;
        const std::ptrdiff_t dx = static_cast<std::ptrdiff_t>(kx) - pad;
        const std::ptrdiff_t dy = static_cast<std::ptrdiff_t>(ky) - pad;
        for (std::size_t y = 0; y < h; ++y) {
          const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y) + dy;
          if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(h)) continue;
          const T* row = src + y * w;
          T* dst = plane + static_cast<std::size_t>(sy) * w;
          const std::size_t x_lo = dx < 0 ? static_cast<std::size_t>(-dx) : 0;
          const std::size_t x_hi = dx > 0 ? w - static_cast<std::size_t>(dx) : w;
          for (std::size_t x = x_lo; x < x_hi; ++x) dst[static_cast<std::ptrdiff_t>(x) + dx] += row[x];
        }
      }
    }
  }
}

}  // namespace

template <typename T>
Conv2d<T>::Conv2d(ParamStore<T>& store, const std::string& prefix, std::size_t in_ch, std::size_t out_ch,
                  std::size_t kernel)
    : in_(in_ch), out_(out_ch), k_(kernel) {
  if (kernel % 2 != 1) throw ConfigError("conv kernel must be odd", prefix);
  weight_ = &store.add(prefix + "/weight", Shape{out_ch, in_ch, kernel, kernel});
  bias_ = &store.add(prefix + "/bias", Shape{out_ch, 1, 1, 1});
}

template <typename T>
Tensor<T> Conv2d<T>::forward(const Tensor<T>& x) {
  const Shape s = x.shape();
  if (s.c != in_) throw ShapeError("conv expects " + std::to_string(in_) + " channels, got " + s.str());
  input_ = x;
  const std::size_t hw = s.h * s.w;
  const std::size_t kdim = in_ * k_ * k_;
  Tensor<T> y(s.n, out_, s.h, s.w);
  if (k_ > 1) col_.resize(kdim * hw);
  const T* w = weight_->value.data();
  const T* bias = bias_->value.data();
  for (std::size_t b = 0; b < s.n; ++b) {
    const T* src = x.data() + b * in_ * hw;
    const T* col = src;
    if (k_ > 1) {
      im2col(src, in_, s.h, s.w, k_, col_.data());
      col = col_.data();
    }
    T* dst = y.data() + b * out_ * hw;
    for (std::size_t o = 0; o < out_; ++o) std::fill_n(dst + o * hw, hw, bias[o]);
    blas::gemm(false, false, static_cast<int>(out_), static_cast<int>(hw), static_cast<int>(kdim), T(1), w,
               static_cast<int>(kdim), col, static_cast<int>(hw), T(1), dst, static_cast<int>(hw));
  }
  return y;
}

template <typename T>
Tensor<T> Conv2d<T>::backward(const Tensor<T>& dy, bool input_grad) {
  const Shape s = input_.shape();
  if (!(dy.shape() == Shape{s.n, out_, s.h, s.w})) throw ShapeError("conv backward: bad dy " + dy.shape().str());
  const std::size_t hw = s.h * s.w;
  const std::size_t kdim = in_ * k_ * k_;
  Tensor<T> dx;
  if (input_grad) dx = Tensor<T>(s);
  std::vector<T> dcol(k_ > 1 && input_grad ? kdim * hw : 0);
  if (k_ > 1) col_.resize(kdim * hw);
  T* dw = weight_->grad.data();
  T* db = bias_->grad.data();
  const T* w = weight_->value.data();
  for (std::size_t b = 0; b < s.n; ++b) {
    const T* src = input_.data() + b * in_ * hw;
    const T* col = src;
    if (k_ > 1) {
      im2col(src, in_, s.h, s.w, k_, col_.data());
      col = col_.data();
    }
    const T* g = dy.data() + b * out_ * hw;
    for (std::size_t o = 0; o < out_; ++o) {
      T acc = T(0);
      for (std::size_t i = 0; i < hw; ++i) acc += g[o * hw + i];
      db[o] += acc;
    }
    blas::gemm(false, true, static_cast<int>(out_), static_cast<int>(kdim), static_cast<int>(hw), T(1), g,
               static_cast<int>(hw), col, static_cast<int>(hw), T(1), dw, static_cast<int>(kdim));
    if (!input_grad) continue;
    T* dsrc = dx.data() + b * in_ * hw;
    if (k_ > 1) {
      blas::gemm(true, false, static_cast<int>(kdim), static_cast<int>(hw), static_cast<int>(out_), T(1), w,
                 static_cast<int>(kdim), g, static_cast<int>(hw), T(0), dcol.data(), static_cast<int>(hw));
      col2im(dcol.data(), in_, s.h, s.w, k_, dsrc);
    } else {
      blas::gemm(true, false, static_cast<int>(kdim), static_cast<int>(hw), static_cast<int>(out_), T(1), w,
                 static_cast<int>(kdim), g, static_cast<int>(hw), T(0), dsrc, static_cast<int>(hw));
    }
  }
  return dx;
}

// ---------------------------------------------------------------------------
// Norm

namespace {

// For element (b, c, f, t): group = group_base + kGroupStep * t and
// affine = affine_base + kAffineStep * t.
template <NormKind K>
struct Axes {
  static constexpr std::size_t kGroupStep = K == NormKind::FLN ? 1 : 0;
  static constexpr std::size_t kAffineStep = (K == NormKind::TLN || K == NormKind::LN) ? 1 : 0;

  static std::size_t groups(const Shape& s) {
    switch (K) {
      case NormKind::FLN: return s.n * s.c * s.w;
      case NormKind::TLN: return s.n * s.c * s.h;
      case NormKind::LN: return s.n;
      case NormKind::IN: return s.n * s.c;
      case NormKind::BN: return s.c;
    }
    return 0;
  }
  static std::size_t group_size(const Shape& s) { return s.size() / groups(s); }
  static std::size_t group_base(std::size_t b, std::size_t c, std::size_t f, const Shape& s) {
    switch (K) {
      case NormKind::FLN: return (b * s.c + c) * s.w;
      case NormKind::TLN: return (b * s.c + c) * s.h + f;
      case NormKind::LN: return b;
      case NormKind::IN: return b * s.c + c;
      case NormKind::BN: return c;
    }
    return 0;
  }
  static std::size_t affine_base(std::size_t c, std::size_t f, const Shape& s) {
    switch (K) {
      case NormKind::FLN: return f;
      case NormKind::TLN: return 0;
      case NormKind::LN: return (c * s.h + f) * s.w;
      case NormKind::IN:
      case NormKind::BN: return c;
    }
    return 0;
  }
};

template <NormKind K, typename Fn>
void visit(const Shape& s, Fn&& fn) {
  using A = Axes<K>;
  for (std::size_t b = 0; b < s.n; ++b)
    for (std::size_t c = 0; c < s.c; ++c)
      for (std::size_t f = 0; f < s.h; ++f) {
        const std::size_t base = ((b * s.c + c) * s.h + f) * s.w;
        const std::size_t g0 = A::group_base(b, c, f, s);
        const std::size_t a0 = A::affine_base(c, f, s);
        for (std::size_t t = 0; t < s.w; ++t) fn(base + t, g0 + A::kGroupStep * t, a0 + A::kAffineStep * t);
      }
}

template <typename Fn>
void dispatch(NormKind kind, Fn&& fn) {
  switch (kind) {
    case NormKind::FLN: fn(std::integral_constant<NormKind, NormKind::FLN>{}); return;
    case NormKind::TLN: fn(std::integral_constant<NormKind, NormKind::TLN>{}); return;
    case NormKind::LN: fn(std::integral_constant<NormKind, NormKind::LN>{}); return;
    case NormKind::IN: fn(std::integral_constant<NormKind, NormKind::IN>{}); return;
    case NormKind::BN: fn(std::integral_constant<NormKind, NormKind::BN>{}); return;
  }
  throw ConfigError("unknown normalization kind");
}

}  // namespace

template <typename T>
std::size_t Norm<T>::affine_size(NormKind kind, Shape item) {
  switch (kind) {
    case NormKind::FLN: return item.h;
    case NormKind::TLN: return item.w;
    case NormKind::LN: return item.c * item.h * item.w;
    case NormKind::IN:
    case NormKind::BN: return item.c;
  }
  throw ConfigError("unknown normalization kind");
}

template <typename T>
Norm<T>::Norm(ParamStore<T>& store, const std::string& prefix, const NormSpec& spec, Shape item)
    : spec_(spec), item_(item) {
  if (!(spec.epsilon > 0.0)) throw ConfigError("normalization epsilon must be positive", prefix);
  const std::size_t n = affine_size(spec.kind, item);
  gamma_ = &store.add(prefix + "/gamma", Shape{n, 1, 1, 1});
  beta_ = &store.add(prefix + "/beta", Shape{n, 1, 1, 1});
  if (spec.kind == NormKind::BN) {
    running_mean_ = &store.add(prefix + "/running_mean", Shape{item.c, 1, 1, 1}, false);
    running_var_ = &store.add(prefix + "/running_var", Shape{item.c, 1, 1, 1}, false);
  }
}

template <typename T>
Tensor<T> Norm<T>::forward(const Tensor<T>& x, Pass pass) {
  const Shape s = x.shape();
  if (s.c != item_.c || s.h != item_.h || s.w != item_.w)
    throw ShapeError("norm expects items of " + Shape{1, item_.c, item_.h, item_.w}.str() + ", got " + s.str());
  xhat_ = Tensor<T>(s);
  Tensor<T> y(s);
  const T* gamma = gamma_->value.data();
  const T* beta = beta_->value.data();
  const T* xs = x.data();
  T* xh = xhat_.data();
  T* ys = y.data();
  const double eps = spec_.epsilon;

  used_batch_stats_ = !(spec_.kind == NormKind::BN && !pass.training);
  dispatch(spec_.kind, [&](auto kind_tag) {
    constexpr NormKind K = decltype(kind_tag)::value;
    using A = Axes<K>;
    const std::size_t ng = A::groups(s);
    const double count = static_cast<double>(A::group_size(s));
    std::vector<double> mean(ng, 0.0), var(ng, 0.0);
    if (used_batch_stats_) {
      visit<K>(s, [&](std::size_t i, std::size_t g, std::size_t) { mean[g] += xs[i]; });
      for (auto& m : mean) m /= count;
      visit<K>(s, [&](std::size_t i, std::size_t g, std::size_t) {
        const double d = xs[i] - mean[g];
        var[g] += d * d;
      });
      for (auto& v : var) v /= count;
      if constexpr (K == NormKind::BN) {
        if (pass.training) {
          const double m = spec_.momentum;
          const double unbias = count > 1.0 ? count / (count - 1.0) : 1.0;
          T* rm = running_mean_->value.data();
          T* rv = running_var_->value.data();
          for (std::size_t c = 0; c < ng; ++c) {
            rm[c] = static_cast<T>((1.0 - m) * rm[c] + m * mean[c]);
            rv[c] = static_cast<T>((1.0 - m) * rv[c] + m * var[c] * unbias);
          }
        }
      }
    } else {
      for (std::size_t c = 0; c < ng; ++c) {
        mean[c] = running_mean_->value[c];
        var[c] = running_var_->value[c];
      }
    }
    inv_std_.resize(ng);
    std::vector<double> inv(ng);
    for (std::size_t g = 0; g < ng; ++g) {
      inv[g] = 1.0 / std::sqrt(var[g] + eps);
      inv_std_[g] = static_cast<T>(inv[g]);
    }
    // Centre in double: a float mean rounded near a large offset biases every element.
    visit<K>(s, [&](std::size_t i, std::size_t g, std::size_t a) {
      const T h = static_cast<T>((xs[i] - mean[g]) * inv[g]);
      xh[i] = h;
      ys[i] = gamma[a] * h + beta[a];
    });
  });
  return y;
}

template <typename T>
Tensor<T> Norm<T>::backward(const Tensor<T>& dy) {
  const Shape s = xhat_.shape();
  dy.require_same(xhat_, "norm backward");
  Tensor<T> dx(s);
  const T* gamma = gamma_->value.data();
  T* dgamma = gamma_->grad.data();
  T* dbeta = beta_->grad.data();
  const T* g_in = dy.data();
  const T* xh = xhat_.data();
  T* out = dx.data();
  dispatch(spec_.kind, [&](auto kind_tag) {
    constexpr NormKind K = decltype(kind_tag)::value;
    using A = Axes<K>;
    const std::size_t ng = A::groups(s);
    const T inv_count = T(1) / static_cast<T>(A::group_size(s));
    std::vector<T> sum1(ng, T(0)), sum2(ng, T(0));
    visit<K>(s, [&](std::size_t i, std::size_t g, std::size_t a) {
      dgamma[a] += g_in[i] * xh[i];
      dbeta[a] += g_in[i];
      const T d = g_in[i] * gamma[a];
      out[i] = d;
      sum1[g] += d;
      sum2[g] += d * xh[i];
    });
    if (!used_batch_stats_) {
      visit<K>(s, [&](std::size_t i, std::size_t g, std::size_t) { out[i] *= inv_std_[g]; });
      return;
    }
    for (std::size_t g = 0; g < ng; ++g) {
      sum1[g] *= inv_count;
      sum2[g] *= inv_count;
    }
    visit<K>(s, [&](std::size_t i, std::size_t g, std::size_t) {
      out[i] = inv_std_[g] * (out[i] - sum1[g] - xh[i] * sum2[g]);
    });
  });
  return dx;
}

// ---------------------------------------------------------------------------
// Elementwise, pooling, dense

template <typename T>
Dropout<T>::Dropout(double p, std::uint64_t seed) : p_(p), rng_(seed) {
  if (!(p >= 0.0 && p < 1.0)) throw ConfigError("dropout rate must be in [0, 1)", "dropout");
}

template <typename T>
Tensor<T> Dropout<T>::forward(const Tensor<T>& x, Pass pass) {
  active_ = pass.training && pass.dropout && p_ > 0.0;
  if (!active_) return x;
  Tensor<T> y(x.shape());
  mask_.resize(x.size());
  const T scale = static_cast<T>(1.0 / (1.0 - p_));
  // Keep iff a 53-bit uniform draw is >= p.
  const auto threshold = static_cast<std::uint64_t>(p_ * 9007199254740992.0);
  for (std::size_t i = 0; i < x.size(); ++i) {
    const bool keep = (rng_() >> 11) >= threshold;
    mask_[i] = keep ? scale : T(0);
    y[i] = x[i] * mask_[i];
  }
  return y;
}

template <typename T>
Tensor<T> Dropout<T>::backward(const Tensor<T>& dy) const {
  if (!active_) return dy;
  Tensor<T> dx(dy.shape());
  for (std::size_t i = 0; i < dy.size(); ++i) dx[i] = dy[i] * mask_[i];
  return dx;
}

template <typename T>
Tensor<T> Relu<T>::forward(const Tensor<T>& x) {
  output_ = Tensor<T>(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) output_[i] = x[i] > T(0) ? x[i] : T(0);
  return output_;
}

template <typename T>
Tensor<T> Relu<T>::backward(const Tensor<T>& dy) const {
  dy.require_same(output_, "relu backward");
  Tensor<T> dx(dy.shape());
  for (std::size_t i = 0; i < dy.size(); ++i) dx[i] = output_[i] > T(0) ? dy[i] : T(0);
  return dx;
}

template <typename T>
Tensor<T> AvgPool2<T>::forward(const Tensor<T>& x) {
  in_ = x.shape();
  if (in_.h % 2 || in_.w % 2) throw ShapeError("avg pool 2x2 needs even extents, got " + in_.str());
  const std::size_t oh = in_.h / 2, ow = in_.w / 2;
  Tensor<T> y(in_.n, in_.c, oh, ow);
  for (std::size_t p = 0; p < in_.n * in_.c; ++p) {
    const T* src = x.data() + p * in_.h * in_.w;
    T* dst = y.data() + p * oh * ow;
    for (std::size_t i = 0; i < oh; ++i) {
      const T* r0 = src + 2 * i * in_.w;
      const T* r1 = r0 + in_.w;
      for (std::size_t j = 0; j < ow; ++j)
        dst[i * ow + j] = T(0.25) * (r0[2 * j] + r0[2 * j + 1] + r1[2 * j] + r1[2 * j + 1]);
    }
  }
  return y;
}

template <typename T>
Tensor<T> AvgPool2<T>::backward(const Tensor<T>& dy) const {
  const std::size_t oh = in_.h / 2, ow = in_.w / 2;
  if (!(dy.shape() == Shape{in_.n, in_.c, oh, ow})) throw ShapeError("avg pool backward: bad dy");
  Tensor<T> dx(in_);
  for (std::size_t p = 0; p < in_.n * in_.c; ++p) {
    const T* src = dy.data() + p * oh * ow;
    T* dst = dx.data() + p * in_.h * in_.w;
    for (std::size_t i = 0; i < oh; ++i) {
      T* r0 = dst + 2 * i * in_.w;
      T* r1 = r0 + in_.w;
      for (std::size_t j = 0; j < ow; ++j) {
        const T g = T(0.25) * src[i * ow + j];
        r0[2 * j] = g;
        r0[2 * j + 1] = g;
        r1[2 * j] = g;
        r1[2 * j + 1] = g;
      }
    }
  }
  return dx;
}

template <typename T>
Tensor<T> GlobalAvgPool<T>::forward(const Tensor<T>& x) {
  in_ = x.shape();
  const std::size_t hw = in_.h * in_.w;
  Tensor<T> y(in_.n, in_.c, 1, 1);
  for (std::size_t p = 0; p < in_.n * in_.c; ++p) {
    T acc = T(0);
    const T* src = x.data() + p * hw;
    for (std::size_t i = 0; i < hw; ++i) acc += src[i];
    y[p] = acc / static_cast<T>(hw);
  }
  return y;
}

template <typename T>
Tensor<T> GlobalAvgPool<T>::backward(const Tensor<T>& dy) const {
  if (dy.size() != in_.n * in_.c) throw ShapeError("global pool backward: bad dy");
  const std::size_t hw = in_.h * in_.w;
  Tensor<T> dx(in_);
  for (std::size_t p = 0; p < in_.n * in_.c; ++p) std::fill_n(dx.data() + p * hw, hw, dy[p] / static_cast<T>(hw));
  return dx;
}

template <typename T>
Linear<T>::Linear(ParamStore<T>& store, const std::string& prefix, std::size_t in, std::size_t out)
    : in_(in), out_(out) {
  weight_ = &store.add(prefix + "/weight", Shape{out, in, 1, 1});
  bias_ = &store.add(prefix + "/bias", Shape{out, 1, 1, 1});
}

template <typename T>
Tensor<T> Linear<T>::forward(const Tensor<T>& x) {
  if (x.shape().per_item() != in_) throw ShapeError("linear expects " + std::to_string(in_) + " inputs, got " + x.shape().str());
  input_ = x;
  const std::size_t b = x.shape().n;
  Tensor<T> y(b, out_, 1, 1);
  for (std::size_t r = 0; r < b; ++r) std::copy_n(bias_->value.data(), out_, y.data() + r * out_);
  blas::gemm(false, true, static_cast<int>(b), static_cast<int>(out_), static_cast<int>(in_), T(1), x.data(),
             static_cast<int>(in_), weight_->value.data(), static_cast<int>(in_), T(1), y.data(),
             static_cast<int>(out_));
  return y;
}

template <typename T>
Tensor<T> Linear<T>::backward(const Tensor<T>& dy) {
  const std::size_t b = input_.shape().n;
  if (dy.size() != b * out_) throw ShapeError("linear backward: bad dy " + dy.shape().str());
  blas::gemm(true, false, static_cast<int>(out_), static_cast<int>(in_), static_cast<int>(b), T(1), dy.data(),
             static_cast<int>(out_), input_.data(), static_cast<int>(in_), T(1), weight_->grad.data(),
             static_cast<int>(in_));
  T* db = bias_->grad.data();
  for (std::size_t r = 0; r < b; ++r)
    for (std::size_t o = 0; o < out_; ++o) db[o] += dy[r * out_ + o];
  Tensor<T> dx(input_.shape());
  blas::gemm(false, false, static_cast<int>(b), static_cast<int>(in_), static_cast<int>(out_), T(1), dy.data(),
             static_cast<int>(out_), weight_->value.data(), static_cast<int>(in_), T(0), dx.data(),
             static_cast<int>(in_));
  return dx;
}

template <typename T>
Tensor<T> Softmax<T>::forward(const Tensor<T>& logits) {
  const std::size_t b = logits.shape().n;
  const std::size_t k = logits.shape().per_item();
  probs_ = Tensor<T>(b, k, 1, 1);
  for (std::size_t r = 0; r < b; ++r) {
    const T* z = logits.data() + r * k;
    T* p = probs_.data() + r * k;
    T zmax = z[0];
    for (std::size_t j = 1; j < k; ++j) zmax = std::max(zmax, z[j]);
    T total = T(0);
    for (std::size_t j = 0; j < k; ++j) {
      p[j] = std::exp(z[j] - zmax);
      total += p[j];
    }
    for (std::size_t j = 0; j < k; ++j) p[j] /= total;
  }
  return probs_;
}

template <typename T>
Tensor<T> Softmax<T>::backward(const Tensor<T>& dprobs) const {
  if (dprobs.size() != probs_.size()) throw ShapeError("softmax backward: bad dprobs");
  const std::size_t b = probs_.shape().n;
  const std::size_t k = probs_.shape().per_item();
  Tensor<T> dz(probs_.shape());
  for (std::size_t r = 0; r < b; ++r) {
    const T* p = probs_.data() + r * k;
    const T* g = dprobs.data() + r * k;
    T dot = T(0);
    for (std::size_t j = 0; j < k; ++j) dot += p[j] * g[j];
    for (std::size_t j = 0; j < k; ++j) dz[r * k + j] = p[j] * (g[j] - dot);
  }
  return dz;
}

// ---------------------------------------------------------------------------
// ConvBlock

BlockConfig block_config(int block_index) {
  BlockConfig c;
  switch (block_index) {
    case 1: c = {1, 32, 80, 48, PoolKind::avg2x2}; break;
    case 2: c = {32, 64, 40, 24, PoolKind::avg2x2}; break;
    case 3: c = {64, 128, 20, 12, PoolKind::global}; break;
    default: throw ConfigError("block index must be 1, 2 or 3", "block");
  }
  return c;
}

template <typename T>
ConvBlock<T>::ConvBlock(ParamStore<T>& store, const std::string& prefix, const BlockConfig& cfg,
                        const NormSpec& norm, std::uint64_t dropout_seed)
    : cfg_(cfg),
      conv_(store, prefix + "/conv", cfg.in_channels, cfg.out_channels, cfg.kernel),
      norm_(store, prefix + "/norm", norm, Shape{1, cfg.out_channels, cfg.height, cfg.width}),
      dropout_(cfg.dropout, dropout_seed) {}

template <typename T>
Tensor<T> ConvBlock<T>::forward(const Tensor<T>& x, Pass pass) {
  const Shape s = x.shape();
  if (s.c != cfg_.in_channels || s.h != cfg_.height || s.w != cfg_.width)
    throw ShapeError("conv block expects (B," + std::to_string(cfg_.in_channels) + "," +
                     std::to_string(cfg_.height) + "," + std::to_string(cfg_.width) + "), got " + s.str());
  auto h = conv_.forward(x);
  h = norm_.forward(h, pass);
  h = dropout_.forward(h, pass);
  h = relu_.forward(h);
  return cfg_.pool == PoolKind::global ? gpool_.forward(h) : pool_.forward(h);
}

template <typename T>
Tensor<T> ConvBlock<T>::backward(const Tensor<T>& dy, bool input_grad) {
  auto g = cfg_.pool == PoolKind::global ? gpool_.backward(dy) : pool_.backward(dy);
  g = relu_.backward(g);
  g = dropout_.backward(g);
  g = norm_.backward(g);
  return conv_.backward(g, input_grad);
}

// ---------------------------------------------------------------------------

namespace {
bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}
}  // namespace

template <typename T>
void initialize_params(ParamStore<T>& store, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  for (auto& [name, p] : store.entries()) {
    p.grad.fill(T(0));
    if (ends_with(name, "/weight")) {
      const double bound = 1.0 / std::sqrt(static_cast<double>(p.value.shape().per_item()));
      std::uniform_real_distribution<double> u(-bound, bound);
      for (auto& v : p.value.values()) v = static_cast<T>(u(rng));
    } else if (ends_with(name, "/gamma") || ends_with(name, "/running_var")) {
      p.value.fill(T(1));
    } else {
      p.value.fill(T(0));
    }
  }
}

#define XTALK_INSTANTIATE(T)                                \
  template class ParamStore<T>;                             \
  template class Conv2d<T>;                                 \
  template class Norm<T>;                                   \
  template class Dropout<T>;                                \
  template class Relu<T>;                                   \
  template class AvgPool2<T>;                               \
  template class GlobalAvgPool<T>;                          \
  template class Linear<T>;                                 \
  template class Softmax<T>;                                \
  template class ConvBlock<T>;                              \
  template void initialize_params<T>(ParamStore<T>&, std::uint64_t);

XTALK_INSTANTIATE(float)
XTALK_INSTANTIATE(double)

#undef XTALK_INSTANTIATE

}  // namespace xtalk
