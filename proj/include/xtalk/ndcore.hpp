#pragma once

// Differentiable building blocks with explicit backward passes.
//
// Every layer caches what its backward pass needs during forward(); a layer
// instance therefore supports one outstanding forward/backward pair at a
// time. Parameters live in a ParamStore and are addressed by hierarchical
// name ("task1/block2/conv/weight"). Layers hold pointers into the store, so
// the store must outlive them and must not be copied out from under them.

#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "xtalk/tensor.hpp"

namespace xtalk {

template <typename T>
struct Param {
  Tensor<T> value;
  Tensor<T> grad;
  // Buffers (BN running statistics) are stored and checkpointed but never
  // optimized or counted as parameters.
  bool trainable = true;
};

template <typename T>
class ParamStore {
 public:
  using Map = std::map<std::string, Param<T>>;

  Param<T>& add(const std::string& name, Shape shape, bool trainable = true);
  Param<T>& get(const std::string& name);
  const Param<T>& get(const std::string& name) const;
  bool contains(const std::string& name) const { return params_.count(name) != 0; }

  Map& entries() { return params_; }
  const Map& entries() const { return params_; }

  void zero_grad();
  std::size_t trainable_count() const;

  /// Copy values (including buffers) from a store with identical names and
  /// shapes; converts scalar type.
  template <typename U>
  void assign_from(const ParamStore<U>& other) {
    for (auto& [name, p] : params_) {
      const auto& src = other.get(name).value;
      if (!(src.shape() == p.value.shape())) throw ShapeError("assign_from shape mismatch at " + name);
      for (std::size_t i = 0; i < src.size(); ++i) p.value[i] = static_cast<T>(src[i]);
    }
  }

  using Snapshot = std::map<std::string, Tensor<T>>;
  Snapshot snapshot() const;
  void restore(const Snapshot& snap);

 private:
  Map params_;
};

enum class NormKind { FLN, TLN, BN, IN, LN };

std::string to_string(NormKind k);
NormKind norm_kind_from_string(const std::string& s);

struct NormSpec {
  NormKind kind = NormKind::FLN;
  double epsilon = 1e-5;
  double momentum = 0.1;  // BN running statistics
};

/// training: batch statistics for BN. dropout: stochastic masking on.
struct Pass {
  bool training = false;
  bool dropout = false;
};

inline constexpr Pass kEval{false, false};
inline constexpr Pass kTrain{true, true};
inline constexpr Pass kTrainNoDropout{true, false};

template <typename T>
class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(ParamStore<T>& store, const std::string& prefix, std::size_t in_ch, std::size_t out_ch,
         std::size_t kernel);

  Tensor<T> forward(const Tensor<T>& x);
  /// Accumulates weight/bias gradients; returns dL/dx when `input_grad`.
  Tensor<T> backward(const Tensor<T>& dy, bool input_grad = true);

  std::size_t in_channels() const { return in_; }
  std::size_t out_channels() const { return out_; }

 private:
  Param<T>* weight_ = nullptr;  // (out, in, k, k)
  Param<T>* bias_ = nullptr;    // (out)
  std::size_t in_ = 0, out_ = 0, k_ = 1;
  Tensor<T> input_;
  std::vector<T> col_;
};

/// Normalization over the axes selected by NormKind on (B, C, F, T) input:
///   FLN  over F at fixed (b, c, t), affine in R^F
///   TLN  over T at fixed (b, c, f), affine in R^T
///   LN   over (C, F, T) per sample, elementwise affine
///   IN   over (F, T) per (b, c), per-channel affine
///   BN   over (B, F, T) per channel, per-channel affine, running statistics
template <typename T>
class Norm {
 public:
  Norm() = default;
  Norm(ParamStore<T>& store, const std::string& prefix, const NormSpec& spec, Shape item);

  Tensor<T> forward(const Tensor<T>& x, Pass pass);
  Tensor<T> backward(const Tensor<T>& dy);

  /// Normalized input before the affine map, from the last forward.
  const Tensor<T>& normalized() const { return xhat_; }
  const NormSpec& spec() const { return spec_; }
  static std::size_t affine_size(NormKind kind, Shape item);

 private:
  NormSpec spec_;
  Shape item_;
  Param<T>* gamma_ = nullptr;
  Param<T>* beta_ = nullptr;
  Param<T>* running_mean_ = nullptr;
  Param<T>* running_var_ = nullptr;
  Tensor<T> xhat_;
  std::vector<T> inv_std_;
  bool used_batch_stats_ = true;
};

/// Inverted dropout: kept units are scaled by 1/(1-p).
template <typename T>
class Dropout {
 public:
  Dropout() = default;
  Dropout(double p, std::uint64_t seed);

  Tensor<T> forward(const Tensor<T>& x, Pass pass);
  Tensor<T> backward(const Tensor<T>& dy) const;
  void reseed(std::uint64_t seed) { rng_.seed(seed); }

 private:
  double p_ = 0.0;
  std::mt19937_64 rng_;
  std::vector<T> mask_;
  bool active_ = false;
};

template <typename T>
class Relu {
 public:
  Tensor<T> forward(const Tensor<T>& x);
  Tensor<T> backward(const Tensor<T>& dy) const;

 private:
  Tensor<T> output_;
};

/// 2x2 average pooling, stride 2.
template <typename T>
class AvgPool2 {
 public:
  Tensor<T> forward(const Tensor<T>& x);
  Tensor<T> backward(const Tensor<T>& dy) const;

 private:
  Shape in_;
};

/// Adaptive average pooling to 1x1.
template <typename T>
class GlobalAvgPool {
 public:
  Tensor<T> forward(const Tensor<T>& x);
  Tensor<T> backward(const Tensor<T>& dy) const;

 private:
  Shape in_;
};

/// y = x W^T + b on (B, in, 1, 1) rows.
template <typename T>
class Linear {
 public:
  Linear() = default;
  Linear(ParamStore<T>& store, const std::string& prefix, std::size_t in, std::size_t out);

  Tensor<T> forward(const Tensor<T>& x);
  Tensor<T> backward(const Tensor<T>& dy);

 private:
  Param<T>* weight_ = nullptr;  // (out, in)
  Param<T>* bias_ = nullptr;
  std::size_t in_ = 0, out_ = 0;
  Tensor<T> input_;
};

/// Row-wise softmax over the channel axis of (B, K, 1, 1).
template <typename T>
class Softmax {
 public:
  Tensor<T> forward(const Tensor<T>& logits);
  Tensor<T> backward(const Tensor<T>& dprobs) const;

 private:
  Tensor<T> probs_;
};

enum class PoolKind { avg2x2, global };

struct BlockConfig {
  std::size_t in_channels = 1;
  std::size_t out_channels = 32;
  std::size_t height = 80;  // input spatial extent
  std::size_t width = 48;
  PoolKind pool = PoolKind::avg2x2;
  std::size_t kernel = 3;
  double dropout = 0.2;
};

/// The three extractor block configurations (1->32, 32->64, 64->128).
BlockConfig block_config(int block_index);

/// conv -> norm -> dropout -> relu -> pool
template <typename T>
class ConvBlock {
 public:
  ConvBlock() = default;
  ConvBlock(ParamStore<T>& store, const std::string& prefix, const BlockConfig& cfg,
            const NormSpec& norm, std::uint64_t dropout_seed);

  Tensor<T> forward(const Tensor<T>& x, Pass pass);
  Tensor<T> backward(const Tensor<T>& dy, bool input_grad = true);
  void reseed(std::uint64_t seed) { dropout_.reseed(seed); }
  const BlockConfig& config() const { return cfg_; }

 private:
  BlockConfig cfg_;
  Conv2d<T> conv_;
  Norm<T> norm_;
  Dropout<T> dropout_;
  Relu<T> relu_;
  AvgPool2<T> pool_;
  GlobalAvgPool<T> gpool_;
};

/// Fan-in scaled uniform initialization U(-1/sqrt(fan_in), 1/sqrt(fan_in))
/// for every "weight" of rank >= 2, zeros for biases, gamma = 1, beta = 0,
/// running variance = 1. Visits parameters in name order.
template <typename T>
void initialize_params(ParamStore<T>& store, std::uint64_t seed);

}  // namespace xtalk
