#pragma once

// The four architectures built from ndcore blocks:
//   MCC           one extractor, one 36-way head
//   MOC_STL       four independent extractors, four heads (2,2,3,3)
//   SHARED_TRUNK  one extractor feeding four heads
//   CROSSTALK     four extractors with cross-talk layers at both
//                 inter-block junctions, four heads

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "xtalk/ndcore.hpp"

namespace xtalk {

enum class Variant { MCC, MOC_STL, SHARED_TRUNK, CROSSTALK };

std::string to_string(Variant v);
Variant variant_from_string(const std::string& s);

struct ModelSpec {
  Variant variant = Variant::CROSSTALK;
  NormSpec norm;
  std::size_t tsl_hidden = 64;
  double dropout = 0.2;
  std::size_t conv_kernel = 3;
  std::size_t ctl_kernel = 1;

  /// Class count of every head: {36} for MCC, {2,2,3,3} otherwise.
  std::vector<int> heads() const;
  bool multi_output() const { return variant != Variant::MCC; }
  std::size_t extractor_count() const;
};

template <typename T>
struct TaskOutputs {
  std::vector<Tensor<T>> probs;        // per head, (B, K, 1, 1)
  std::vector<Tensor<T>> penultimate;  // per head, (B, hidden, 1, 1)
};

/// Input normalization followed by the three conv blocks.
template <typename T>
class FeatureExtractor {
 public:
  FeatureExtractor() = default;
  FeatureExtractor(ParamStore<T>& store, const std::string& prefix, const ModelSpec& spec,
                   std::uint64_t dropout_seed);

  /// Whole extractor: (B,1,80,48) -> (B,128,1,1).
  Tensor<T> forward(const Tensor<T>& x, Pass pass);
  Tensor<T> backward(const Tensor<T>& dfeat);

  // Stage access for cross-talk wiring; stage 1 includes the input norm.
  Tensor<T> forward_stage(int stage, const Tensor<T>& x, Pass pass);
  Tensor<T> backward_stage(int stage, const Tensor<T>& dy);

 private:
  Norm<T> input_norm_;
  ConvBlock<T> blocks_[3];
};

/// concat(3 feature maps) -> 1x1 conv (3C -> C, bias) -> ReLU.
template <typename T>
class CrossTalkLayer {
 public:
  CrossTalkLayer() = default;
  CrossTalkLayer(ParamStore<T>& store, const std::string& prefix, std::size_t channels, std::size_t kernel);

  Tensor<T> forward(const std::vector<const Tensor<T>*>& others);
  /// Gradients with respect to each of the concatenated inputs.
  std::vector<Tensor<T>> backward(const Tensor<T>& dcorrection);

 private:
  std::size_t channels_ = 0;
  Conv2d<T> conv_;
  Relu<T> relu_;
};

/// Task-specific layers: FC -> ReLU (penultimate) -> FC -> softmax.
template <typename T>
class TaskHead {
 public:
  TaskHead() = default;
  TaskHead(ParamStore<T>& store, const std::string& prefix, std::size_t in, std::size_t hidden,
           std::size_t classes);

  void forward(const Tensor<T>& feature, Tensor<T>& penultimate, Tensor<T>& probs);
  /// Either gradient may be empty (treated as zero).
  Tensor<T> backward(const Tensor<T>& dprobs, const Tensor<T>& dpenultimate);

 private:
  Linear<T> fc1_, fc2_;
  Relu<T> relu_;
  Softmax<T> softmax_;
};

template <typename T>
class Model {
 public:
  /// Registers every parameter and initializes them from `seed`.
  Model(const ModelSpec& spec, std::uint64_t seed);
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;

  const ModelSpec& spec() const { return spec_; }
  ParamStore<T>& params() { return store_; }
  const ParamStore<T>& params() const { return store_; }

  TaskOutputs<T> forward(const Tensor<T>& x, Pass pass);
  /// Backpropagates the loss gradients of the last forward() into the
  /// parameter gradients (accumulating) and returns dL/dx. Empty entries
  /// are treated as zero.
  Tensor<T> backward(const std::vector<Tensor<T>>& dprobs, const std::vector<Tensor<T>>& dpenultimate);

 private:
  ModelSpec spec_;
  ParamStore<T> store_;
  std::vector<std::unique_ptr<FeatureExtractor<T>>> extractors_;
  std::vector<std::unique_ptr<CrossTalkLayer<T>>> ctl_[2];  // [junction][task]
  std::vector<std::unique_ptr<TaskHead<T>>> heads_;
  std::size_t batch_ = 0;
};

/// Learnable scalars of a model built from `spec` (buffers excluded).
std::size_t param_count(const ModelSpec& spec);

/// Channel-axis concatenation and its inverse.
template <typename T>
Tensor<T> concat_channels(const std::vector<const Tensor<T>*>& parts);
template <typename T>
std::vector<Tensor<T>> split_channels(const Tensor<T>& x, std::size_t parts);

}  // namespace xtalk
