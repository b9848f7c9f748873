#include "xtalk/gradsuite.hpp"

#include <functional>
#include <random>

#include "xtalk/losses.hpp"
#include "xtalk/models.hpp"

namespace xtalk {

namespace {

using D = double;
using TensorD = Tensor<D>;

TensorD random_tensor(Shape s, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> nd(0.0, scale);
  TensorD t(s);
  for (auto& v : t.values()) v = nd(rng);
  return t;
}

void jitter_params(ParamStore<D>& store, std::mt19937_64& rng, double scale) {
  std::normal_distribution<double> nd(0.0, scale);
  for (auto& [name, p] : store.entries())
    if (p.trainable)
      for (auto& v : p.value.values()) v += nd(rng);
}

double dot(const TensorD& a, const TensorD& b) {
  a.require_same(b, "dot");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

// `analytic` runs forward + backward once at the base point with zeroed
// parameter gradients and returns the gradients of `inputs` in order.
GradCheckReport check(const std::string& name, ParamStore<D>* store,
                      const std::vector<std::pair<std::string, TensorD*>>& inputs,
                      const std::function<double()>& loss, const std::function<std::vector<TensorD>()>& analytic,
                      const GradCheckOptions& opts) {
  if (store) store->zero_grad();
  const auto input_grads = analytic();
  std::vector<std::vector<double>> keep;
  std::vector<GradTarget> targets;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    keep.emplace_back(input_grads[i].values().begin(), input_grads[i].values().end());
  }
  if (store)
    for (auto& [pname, p] : store->entries())
      if (p.trainable) keep.emplace_back(p.grad.values().begin(), p.grad.values().end());
  std::size_t k = 0;
  for (auto& [iname, t] : inputs) {
    targets.push_back({iname, std::span<double>(t->values()), std::span<const double>(keep[k])});
    ++k;
  }
  if (store)
    for (auto& [pname, p] : store->entries())
      if (p.trainable) {
        targets.push_back({pname, std::span<double>(p.value.values()), std::span<const double>(keep[k])});
        ++k;
      }
  return grad_check(name, loss, targets, opts);
}

GradCheckReport check_linear(const GradSuiteOptions& o, std::mt19937_64& rng) {
  ParamStore<D> store;
  Linear<D> fc(store, "fc", 5, 3);
  initialize_params(store, o.seed);
  jitter_params(store, rng, 0.3);
  TensorD x = random_tensor({4, 5, 1, 1}, rng);
  // Loss = sum(y): gradient is exact for an affine map.
  auto loss = [&] {
    const auto y = fc.forward(x);
    double s = 0.0;
    for (auto v : y.values()) s += v;
    return s;
  };
  auto analytic = [&] {
    const auto y = fc.forward(x);
    return std::vector<TensorD>{fc.backward(TensorD(y.shape(), 1.0))};
  };
  GradCheckOptions g{o.tolerance, 1e-5, 1e-3, 0, o.seed};
  return check("linear", &store, {{"x", &x}}, loss, analytic, g);
}

GradCheckReport check_norm(NormKind kind, const GradSuiteOptions& o, std::mt19937_64& rng) {
  ParamStore<D> store;
  NormSpec spec;
  spec.kind = kind;
  const Shape item{1, 3, 8, 4};
  Norm<D> norm(store, "norm", spec, item);
  initialize_params(store, o.seed);
  jitter_params(store, rng, 0.3);
  TensorD x = random_tensor({2, 3, 8, 4}, rng);
  const TensorD w = random_tensor(x.shape(), rng);
  auto loss = [&] { return dot(norm.forward(x, kTrainNoDropout), w); };
  auto analytic = [&] {
    norm.forward(x, kTrainNoDropout);
    return std::vector<TensorD>{norm.backward(w)};
  };
  GradCheckOptions g{o.tolerance, 1e-5, 1e-3, 0, o.seed};
  return check("norm/" + to_string(kind), &store, {{"x", &x}}, loss, analytic, g);
}

GradCheckReport check_block(PoolKind pool, const GradSuiteOptions& o, std::mt19937_64& rng) {
  ParamStore<D> store;
  BlockConfig cfg{2, 3, 8, 6, pool, 3, 0.2};
  ConvBlock<D> block(store, "block", cfg, NormSpec{}, o.seed);
  initialize_params(store, o.seed);
  jitter_params(store, rng, 0.2);
  TensorD x = random_tensor({2, 2, 8, 6}, rng);
  const Shape out_shape = pool == PoolKind::global ? Shape{2, 3, 1, 1} : Shape{2, 3, 4, 3};
  const TensorD w = random_tensor(out_shape, rng);
  auto loss = [&] { return dot(block.forward(x, kTrainNoDropout), w); };
  auto analytic = [&] {
    block.forward(x, kTrainNoDropout);
    return std::vector<TensorD>{block.backward(w)};
  };
  GradCheckOptions g{o.tolerance, 1e-5, 1e-3, 0, o.seed};
  return check(pool == PoolKind::global ? "conv_block/global_pool" : "conv_block/avg_pool", &store, {{"x", &x}},
               loss, analytic, g);
}

GradCheckReport check_ctl(const GradSuiteOptions& o, std::mt19937_64& rng) {
  ParamStore<D> store;
  CrossTalkLayer<D> ctl(store, "ctl", 3, 1);
  initialize_params(store, o.seed);
  jitter_params(store, rng, 0.2);
  // Bias shift keeps most pre-activations away from the ReLU kink.
  for (auto& v : store.get("ctl/conv/bias").value.values()) v += 0.5;
  TensorD a = random_tensor({2, 3, 4, 4}, rng), b = random_tensor({2, 3, 4, 4}, rng),
          c = random_tensor({2, 3, 4, 4}, rng);
  const TensorD w = random_tensor({2, 3, 4, 4}, rng);
  auto loss = [&] { return dot(ctl.forward({&a, &b, &c}), w); };
  auto analytic = [&] {
    ctl.forward({&a, &b, &c});
    return ctl.backward(w);
  };
  GradCheckOptions g{o.tolerance, 1e-5, 1e-3, 0, o.seed};
  return check("ctl", &store, {{"other0", &a}, {"other1", &b}, {"other2", &c}}, loss, analytic, g);
}

GradCheckReport check_tsl(const GradSuiteOptions& o, std::mt19937_64& rng) {
  ParamStore<D> store;
  TaskHead<D> head(store, "head", 6, 5, 3);
  initialize_params(store, o.seed);
  jitter_params(store, rng, 0.3);
  TensorD f = random_tensor({3, 6, 1, 1}, rng);
  const TensorD wp = random_tensor({3, 3, 1, 1}, rng), wh = random_tensor({3, 5, 1, 1}, rng);
  auto loss = [&] {
    TensorD pen, probs;
    head.forward(f, pen, probs);
    return dot(probs, wp) + dot(pen, wh);
  };
  auto analytic = [&] {
    TensorD pen, probs;
    head.forward(f, pen, probs);
    return std::vector<TensorD>{head.backward(wp, wh)};
  };
  GradCheckOptions g{o.tolerance, 1e-5, 1e-3, 0, o.seed};
  return check("tsl", &store, {{"feature", &f}}, loss, analytic, g);
}

TensorD random_probs(std::size_t b, std::size_t k, std::mt19937_64& rng) {
  TensorD p = random_tensor({b, k, 1, 1}, rng);
  for (std::size_t i = 0; i < b; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < k; ++j) s += p[i * k + j] = std::exp(p[i * k + j]);
    for (std::size_t j = 0; j < k; ++j) p[i * k + j] /= s;
  }
  return p;
}

GradCheckReport check_cce(const GradSuiteOptions& o, std::mt19937_64& rng) {
  TensorD p = random_probs(4, 5, rng);
  const std::vector<int> t{0, 3, 4, 1};
  auto loss = [&] { return cce(p, std::span<const int>(t)); };
  auto analytic = [&] {
    TensorD g;
    cce(p, std::span<const int>(t), &g);
    return std::vector<TensorD>{g};
  };
  GradCheckOptions g{o.tolerance, 1e-6, 1e-3, 0, o.seed};
  return check("cce", nullptr, {{"probs", &p}}, loss, analytic, g);
}

GradCheckReport check_entropy(const GradSuiteOptions& o, std::mt19937_64& rng) {
  TensorD p = random_probs(4, 5, rng);
  auto loss = [&] { return entropy_mean(p); };
  auto analytic = [&] {
    TensorD g;
    entropy_mean(p, &g);
    return std::vector<TensorD>{g};
  };
  GradCheckOptions g{o.tolerance, 1e-6, 1e-3, 0, o.seed};
  return check("entropy_mean", nullptr, {{"probs", &p}}, loss, analytic, g);
}

GradCheckReport check_mkmmd(const GradSuiteOptions& o, std::mt19937_64& rng) {
  TensorD s = random_tensor({4, 6, 1, 1}, rng);
  TensorD t = random_tensor({4, 6, 1, 1}, rng);
  for (auto& v : t.values()) v += 0.5;
  const KernelBank bank;
  auto loss = [&] { return mkmmd2(s, t, bank); };
  auto analytic = [&] {
    TensorD ds, dt;
    mkmmd2(s, t, bank, &ds, &dt);
    return std::vector<TensorD>{ds, dt};
  };
  GradCheckOptions g{o.tolerance, 1e-5, 1e-3, 0, o.seed};
  return check("mkmmd2", nullptr, {{"src", &s}, {"tgt", &t}}, loss, analytic, g);
}

GradCheckReport check_full_model(const GradSuiteOptions& o, std::mt19937_64& rng) {
  ModelSpec spec;
  spec.variant = Variant::CROSSTALK;
  Model<D> model(spec, o.seed);
  jitter_params(model.params(), rng, 0.02);
  // 2 source rows + 2 target rows, one of them labeled.
  TensorD x = random_tensor({4, 1, 80, 48}, rng, 10.0);
  const std::vector<std::size_t> labeled{0};
  const std::vector<std::vector<int>> targets{{1}, {0}, {2}, {1}};
  const LossWeights weights;
  const KernelBank bank;
  auto split = [](const TaskOutputs<D>& out, std::size_t start) {
    TaskOutputs<D> r;
    for (std::size_t h = 0; h < out.probs.size(); ++h) {
      r.probs.push_back(slice_rows(out.probs[h], start, 2));
      r.penultimate.push_back(slice_rows(out.penultimate[h], start, 2));
    }
    return r;
  };
  auto loss = [&] {
    const auto out = model.forward(x, kTrainNoDropout);
    return finetune_loss(split(out, 0), split(out, 2), std::span<const std::size_t>(labeled), targets, weights,
                         bank)
        .total;
  };
  auto analytic = [&] {
    const auto out = model.forward(x, kTrainNoDropout);
    LossGradients<D> g;
    finetune_loss(split(out, 0), split(out, 2), std::span<const std::size_t>(labeled), targets, weights, bank, &g);
    std::vector<TensorD> dprobs, dpen;
    for (std::size_t h = 0; h < out.probs.size(); ++h) {
      auto zero_if_empty = [](const TensorD& t, Shape s) { return t.empty() ? TensorD(s) : t; };
      const Shape ps{2, out.probs[h].shape().c, 1, 1}, hs{2, out.penultimate[h].shape().c, 1, 1};
      dprobs.push_back(concat_rows(zero_if_empty(g.src_probs[h], ps), zero_if_empty(g.tgt_probs[h], ps)));
      dpen.push_back(concat_rows(zero_if_empty(g.src_penultimate[h], hs), zero_if_empty(g.tgt_penultimate[h], hs)));
    }
    return std::vector<TensorD>{model.backward(dprobs, dpen)};
  };
  // Half a million ReLUs sit between input and loss; a small step keeps
  // the central difference from straddling their kinks.
  GradCheckOptions g{o.full_model_tolerance, 1e-7, 1e-3, o.full_model_coords, o.seed};
  return check("model/CROSSTALK", &model.params(), {{"x", &x}}, loss, analytic, g);
}

}  // namespace

std::vector<GradCheckReport> run_gradcheck_suite(const GradSuiteOptions& opts) {
  std::mt19937_64 rng(opts.seed * 0x9E3779B97F4A7C15ULL + 17);
  std::vector<GradCheckReport> out;
  out.push_back(check_linear(opts, rng));
  for (auto k : {NormKind::FLN, NormKind::TLN, NormKind::BN, NormKind::IN, NormKind::LN})
    out.push_back(check_norm(k, opts, rng));
  out.push_back(check_block(PoolKind::avg2x2, opts, rng));
  out.push_back(check_block(PoolKind::global, opts, rng));
  out.push_back(check_ctl(opts, rng));
  out.push_back(check_tsl(opts, rng));
  out.push_back(check_cce(opts, rng));
  out.push_back(check_entropy(opts, rng));
  out.push_back(check_mkmmd(opts, rng));
  if (opts.include_full_model) out.push_back(check_full_model(opts, rng));
  return out;
}

}  // namespace xtalk
