#include "xtalk/models.hpp"

#include <cstring>

#include "xtalk/siggen.hpp"

namespace xtalk {

std::string to_string(Variant v) {
  switch (v) {
    case Variant::MCC: return "MCC";
    case Variant::MOC_STL: return "MOC_STL";
    case Variant::SHARED_TRUNK: return "SHARED_TRUNK";
    case Variant::CROSSTALK: return "CROSSTALK";
  }
  return "?";
}

Variant variant_from_string(const std::string& s) {
  if (s == "MCC") return Variant::MCC;
  if (s == "MOC_STL") return Variant::MOC_STL;
  if (s == "SHARED_TRUNK") return Variant::SHARED_TRUNK;
  if (s == "CROSSTALK") return Variant::CROSSTALK;
  throw ConfigError("unknown model variant '" + s + "'", "variant");
}

std::vector<int> ModelSpec::heads() const {
  if (variant == Variant::MCC) return {kJointClasses};
  return {kTaskClasses.begin(), kTaskClasses.end()};
}

std::size_t ModelSpec::extractor_count() const {
  return (variant == Variant::MOC_STL || variant == Variant::CROSSTALK) ? kNumTasks : 1;
}

template <typename T>
Tensor<T> concat_channels(const std::vector<const Tensor<T>*>& parts) {
  if (parts.empty()) throw ShapeError("concat_channels: no inputs");
  const Shape s = parts.front()->shape();
  for (const auto* p : parts)
    if (!(p->shape() == s)) throw ShapeError("concat_channels: " + s.str() + " vs " + p->shape().str());
  const std::size_t block = s.c * s.h * s.w;
  Tensor<T> out(s.n, s.c * parts.size(), s.h, s.w);
  for (std::size_t b = 0; b < s.n; ++b)
    for (std::size_t i = 0; i < parts.size(); ++i)
      std::memcpy(out.data() + (b * parts.size() + i) * block, parts[i]->data() + b * block, block * sizeof(T));
  return out;
}

template <typename T>
std::vector<Tensor<T>> split_channels(const Tensor<T>& x, std::size_t parts) {
  const Shape s = x.shape();
  if (parts == 0 || s.c % parts) throw ShapeError("split_channels: " + s.str() + " into " + std::to_string(parts));
  const std::size_t c = s.c / parts;
  const std::size_t block = c * s.h * s.w;
  std::vector<Tensor<T>> out(parts, Tensor<T>(s.n, c, s.h, s.w));
  for (std::size_t b = 0; b < s.n; ++b)
    for (std::size_t i = 0; i < parts; ++i)
      std::memcpy(out[i].data() + b * block, x.data() + (b * parts + i) * block, block * sizeof(T));
  return out;
}

// ---------------------------------------------------------------------------

template <typename T>
FeatureExtractor<T>::FeatureExtractor(ParamStore<T>& store, const std::string& prefix, const ModelSpec& spec,
                                      std::uint64_t dropout_seed)
    : input_norm_(store, prefix + "/input_norm", spec.norm, Shape{1, 1, 80, 48}) {
  for (int i = 0; i < 3; ++i) {
    BlockConfig cfg = block_config(i + 1);
    cfg.kernel = spec.conv_kernel;
    cfg.dropout = spec.dropout;
    blocks_[i] = ConvBlock<T>(store, prefix + "/block" + std::to_string(i + 1), cfg, spec.norm,
                              dropout_seed * 4 + static_cast<std::uint64_t>(i));
  }
}

template <typename T>
Tensor<T> FeatureExtractor<T>::forward_stage(int stage, const Tensor<T>& x, Pass pass) {
  if (stage == 1) return blocks_[0].forward(input_norm_.forward(x, pass), pass);
  return blocks_[stage - 1].forward(x, pass);
}

template <typename T>
Tensor<T> FeatureExtractor<T>::backward_stage(int stage, const Tensor<T>& dy) {
  if (stage == 1) return input_norm_.backward(blocks_[0].backward(dy));
  return blocks_[stage - 1].backward(dy);
}

template <typename T>
Tensor<T> FeatureExtractor<T>::forward(const Tensor<T>& x, Pass pass) {
  auto h = forward_stage(1, x, pass);
  h = forward_stage(2, h, pass);
  return forward_stage(3, h, pass);
}

template <typename T>
Tensor<T> FeatureExtractor<T>::backward(const Tensor<T>& dfeat) {
  auto g = backward_stage(3, dfeat);
  g = backward_stage(2, g);
  return backward_stage(1, g);
}

template <typename T>
CrossTalkLayer<T>::CrossTalkLayer(ParamStore<T>& store, const std::string& prefix, std::size_t channels,
                                  std::size_t kernel)
    : channels_(channels), conv_(store, prefix + "/conv", 3 * channels, channels, kernel) {}

template <typename T>
Tensor<T> CrossTalkLayer<T>::forward(const std::vector<const Tensor<T>*>& others) {
  if (others.size() != 3) throw ShapeError("cross-talk layer takes exactly 3 feature maps");
  if (others.front()->shape().c != channels_)
    throw ShapeError("cross-talk layer expects " + std::to_string(channels_) + " channels");
  return relu_.forward(conv_.forward(concat_channels(others)));
}

template <typename T>
std::vector<Tensor<T>> CrossTalkLayer<T>::backward(const Tensor<T>& dcorrection) {
  return split_channels(conv_.backward(relu_.backward(dcorrection)), 3);
}

template <typename T>
TaskHead<T>::TaskHead(ParamStore<T>& store, const std::string& prefix, std::size_t in, std::size_t hidden,
                      std::size_t classes)
    : fc1_(store, prefix + "/fc1", in, hidden), fc2_(store, prefix + "/fc2", hidden, classes) {}

template <typename T>
void TaskHead<T>::forward(const Tensor<T>& feature, Tensor<T>& penultimate, Tensor<T>& probs) {
  penultimate = relu_.forward(fc1_.forward(feature));
  probs = softmax_.forward(fc2_.forward(penultimate));
}

template <typename T>
Tensor<T> TaskHead<T>::backward(const Tensor<T>& dprobs, const Tensor<T>& dpenultimate) {
  Tensor<T> dpen;
  if (!dprobs.empty()) dpen = fc2_.backward(softmax_.backward(dprobs));
  if (!dpenultimate.empty()) {
    if (dpen.empty())
      dpen = dpenultimate;
    else
      dpen += dpenultimate;
  }
  if (dpen.empty()) return {};
  return fc1_.backward(relu_.backward(dpen));
}

// ---------------------------------------------------------------------------

template <typename T>
Model<T>::Model(const ModelSpec& spec, std::uint64_t seed) : spec_(spec) {
  constexpr std::size_t kFeature = 128;
  const auto heads = spec.heads();
  const std::size_t n_ext = spec.extractor_count();
  auto task_prefix = [](std::size_t i) { return "task" + std::to_string(i + 1); };
  for (std::size_t e = 0; e < n_ext; ++e) {
    std::string prefix;
    switch (spec.variant) {
      case Variant::MCC: prefix = "extractor"; break;
      case Variant::SHARED_TRUNK: prefix = "trunk"; break;
      default: prefix = task_prefix(e);
    }
    extractors_.push_back(std::make_unique<FeatureExtractor<T>>(store_, prefix, spec, seed * 8 + e));
  }
  if (spec.variant == Variant::CROSSTALK) {
    constexpr std::size_t junction_channels[2] = {32, 64};
    for (int j = 0; j < 2; ++j)
      for (std::size_t t = 0; t < kNumTasks; ++t)
        ctl_[j].push_back(std::make_unique<CrossTalkLayer<T>>(
            store_, task_prefix(t) + "/ctl" + std::to_string(j + 1), junction_channels[j], spec.ctl_kernel));
  }
  for (std::size_t h = 0; h < heads.size(); ++h) {
    const std::string prefix = spec.variant == Variant::MCC ? "head" : task_prefix(h) + "/head";
    heads_.push_back(std::make_unique<TaskHead<T>>(store_, prefix, kFeature, spec.tsl_hidden,
                                                   static_cast<std::size_t>(heads[h])));
  }
  initialize_params(store_, seed);
}

template <typename T>
TaskOutputs<T> Model<T>::forward(const Tensor<T>& x, Pass pass) {
  const Shape s = x.shape();
  if (s.c != 1 || s.h != 80 || s.w != 48) throw ShapeError("model expects (B,1,80,48), got " + s.str());
  batch_ = s.n;
  std::vector<Tensor<T>> features(extractors_.size());
  if (spec_.variant == Variant::CROSSTALK) {
    std::vector<Tensor<T>> cur(kNumTasks);
    for (std::size_t t = 0; t < kNumTasks; ++t) cur[t] = extractors_[t]->forward_stage(1, x, pass);
    for (int j = 0; j < 2; ++j) {
      std::vector<Tensor<T>> mixed(kNumTasks);
      for (std::size_t t = 0; t < kNumTasks; ++t) {
        std::vector<const Tensor<T>*> others;
        for (std::size_t u = 0; u < kNumTasks; ++u)
          if (u != t) others.push_back(&cur[u]);
        mixed[t] = cur[t];
        mixed[t] += ctl_[j][t]->forward(others);
      }
      for (std::size_t t = 0; t < kNumTasks; ++t) cur[t] = extractors_[t]->forward_stage(j + 2, mixed[t], pass);
    }
    features = std::move(cur);
  } else {
    for (std::size_t e = 0; e < extractors_.size(); ++e) features[e] = extractors_[e]->forward(x, pass);
  }

  TaskOutputs<T> out;
  out.probs.resize(heads_.size());
  out.penultimate.resize(heads_.size());
  for (std::size_t h = 0; h < heads_.size(); ++h) {
    const auto& feat = features[extractors_.size() == 1 ? 0 : h];
    heads_[h]->forward(feat, out.penultimate[h], out.probs[h]);
  }
  return out;
}

template <typename T>
Tensor<T> Model<T>::backward(const std::vector<Tensor<T>>& dprobs, const std::vector<Tensor<T>>& dpenultimate) {
  const std::size_t nh = heads_.size();
  if (dprobs.size() != nh || dpenultimate.size() != nh)
    throw ShapeError("model backward expects one gradient slot per head");
  const Shape feat_shape{batch_, 128, 1, 1};
  std::vector<Tensor<T>> dfeat(extractors_.size(), Tensor<T>(feat_shape));
  for (std::size_t h = 0; h < nh; ++h) {
    auto g = heads_[h]->backward(dprobs[h], dpenultimate[h]);
    if (!g.empty()) dfeat[extractors_.size() == 1 ? 0 : h] += g;
  }

  Tensor<T> dx(Shape{batch_, 1, 80, 48});
  if (spec_.variant == Variant::CROSSTALK) {
    std::vector<Tensor<T>> g(kNumTasks);
    for (std::size_t t = 0; t < kNumTasks; ++t) g[t] = extractors_[t]->backward_stage(3, dfeat[t]);
    for (int j = 1; j >= 0; --j) {
      // g[t] is dL/d(mixed input of stage j+2) = dL/d(own block output) plus
      // routes through the other tasks' cross-talk layers.
      std::vector<Tensor<T>> dblock = g;
      for (std::size_t t = 0; t < kNumTasks; ++t) {
        auto parts = ctl_[j][t]->backward(g[t]);
        std::size_t k = 0;
        for (std::size_t u = 0; u < kNumTasks; ++u)
          if (u != t) dblock[u] += parts[k++];
      }
      for (std::size_t t = 0; t < kNumTasks; ++t) g[t] = extractors_[t]->backward_stage(j + 1, dblock[t]);
    }
    for (const auto& gi : g) dx += gi;
  } else {
    for (std::size_t e = 0; e < extractors_.size(); ++e) dx += extractors_[e]->backward(dfeat[e]);
  }
  return dx;
}

std::size_t param_count(const ModelSpec& spec) {
  Model<float> m(spec, 0);
  return m.params().trainable_count();
}

#define XTALK_INSTANTIATE(T)                                                                   \
  template class FeatureExtractor<T>;                                                          \
  template class CrossTalkLayer<T>;                                                            \
  template class TaskHead<T>;                                                                  \
  template class Model<T>;                                                                     \
  template Tensor<T> concat_channels<T>(const std::vector<const Tensor<T>*>&);                 \
  template std::vector<Tensor<T>> split_channels<T>(const Tensor<T>&, std::size_t);

XTALK_INSTANTIATE(float)
XTALK_INSTANTIATE(double)

#undef XTALK_INSTANTIATE

}  // namespace xtalk
