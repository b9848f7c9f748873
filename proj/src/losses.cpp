#include "xtalk/losses.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace xtalk {

template <typename T>
double cce(const Tensor<T>& probs, std::span<const int> targets, Tensor<T>* grad) {
  const std::size_t b = probs.shape().n;
  const std::size_t k = probs.shape().per_item();
  if (targets.size() != b) throw ShapeError("cce: " + std::to_string(targets.size()) + " targets for " + probs.shape().str());
  if (b == 0) throw DomainError("cce: empty batch");
  if (grad) *grad = Tensor<T>(probs.shape());
  double total = 0.0;
  for (std::size_t r = 0; r < b; ++r) {
    if (targets[r] < 0 || static_cast<std::size_t>(targets[r]) >= k) throw DomainError("cce: target out of range");
    const double p = static_cast<double>(probs[r * k + static_cast<std::size_t>(targets[r])]) + kLogEpsilon;
    total -= std::log(p);
    if (grad) (*grad)[r * k + static_cast<std::size_t>(targets[r])] = static_cast<T>(-1.0 / (p * static_cast<double>(b)));
  }
  return total / static_cast<double>(b);
}

template <typename T>
double cce_onehot(const Tensor<T>& probs, const Tensor<T>& onehot, Tensor<T>* grad) {
  probs.require_same(onehot, "cce");
  const std::size_t b = probs.shape().n;
  const std::size_t k = probs.shape().per_item();
  std::vector<int> targets(b, -1);
  for (std::size_t r = 0; r < b; ++r) {
    int hot = -1;
    for (std::size_t j = 0; j < k; ++j) {
      if (onehot[r * k + j] == T(1)) {
        if (hot >= 0) throw DomainError("cce: target row is not one-hot");
        hot = static_cast<int>(j);
      } else if (onehot[r * k + j] != T(0)) {
        throw DomainError("cce: target row is not one-hot");
      }
    }
    if (hot < 0) throw DomainError("cce: target row is not one-hot");
    targets[r] = hot;
  }
  return cce(probs, std::span<const int>(targets), grad);
}

template <typename T>
double entropy_mean(const Tensor<T>& probs, Tensor<T>* grad) {
  const std::size_t b = probs.shape().n;
  if (b == 0) throw DomainError("entropy_mean: empty batch");
  if (grad) *grad = Tensor<T>(probs.shape());
  double total = 0.0;
  const double inv_b = 1.0 / static_cast<double>(b);
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const double p = probs[i];
    const double lg = std::log(p + kLogEpsilon);
    total -= p * lg;
    if (grad) (*grad)[i] = static_cast<T>(-(lg + p / (p + kLogEpsilon)) * inv_b);
  }
  return total * inv_b;
}

void KernelBank::validate() const {
  if (multipliers.empty()) throw ConfigError("kernel bank needs at least one kernel", "losses.kernel_multipliers");
  for (double m : multipliers)
    if (!(m > 0.0)) throw ConfigError("kernel multipliers must be positive", "losses.kernel_multipliers");
}

void LossWeights::validate() const {
  if (!(mmd >= 0.0)) throw ConfigError("loss weight must be nonnegative", "losses.lambda_mmd");
  if (!(em >= 0.0)) throw ConfigError("loss weight must be nonnegative", "losses.lambda_em");
}

namespace {

// Pooled rows z_0..z_{n-1} = src rows then tgt rows, in double.
struct Pooled {
  std::size_t ns = 0, nt = 0, dim = 0;
  std::vector<double> z;     // n x dim
  std::vector<double> dist;  // n x n squared distances

  std::size_t n() const { return ns + nt; }
  const double* row(std::size_t i) const { return z.data() + i * dim; }
  double d(std::size_t i, std::size_t j) const { return dist[i * n() + j]; }
  // Symmetric Gram weight of the biased estimator.
  double weight(std::size_t i, std::size_t j) const {
    const bool si = i < ns, sj = j < ns;
    if (si && sj) return 1.0 / static_cast<double>(ns * ns);
    if (!si && !sj) return 1.0 / static_cast<double>(nt * nt);
    return -1.0 / static_cast<double>(ns * nt);
  }
};

template <typename T>
Pooled pool(const Tensor<T>& src, const Tensor<T>& tgt) {
  if (src.shape().per_item() != tgt.shape().per_item())
    throw ShapeError("mmd: feature width mismatch " + src.shape().str() + " vs " + tgt.shape().str());
  Pooled p;
  p.ns = src.shape().n;
  p.nt = tgt.shape().n;
  p.dim = src.shape().per_item();
  if (p.ns == 0 || p.nt == 0) throw DomainError("mmd: empty batch");
  p.z.resize(p.n() * p.dim);
  for (std::size_t i = 0; i < src.size(); ++i) p.z[i] = src[i];
  for (std::size_t i = 0; i < tgt.size(); ++i) p.z[src.size() + i] = tgt[i];
  const std::size_t n = p.n();
  p.dist.assign(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      double acc = 0.0;
      const double* a = p.row(i);
      const double* b = p.row(j);
      for (std::size_t c = 0; c < p.dim; ++c) {
        const double diff = a[c] - b[c];
        acc += diff * diff;
      }
      p.dist[i * n + j] = acc;
      p.dist[j * n + i] = acc;
    }
  return p;
}

struct MedianPick {
  double value = 0.0;
  // Pairs (i, j) whose distances define the median, each with weight
  // dmedian/dd.
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  double pair_weight = 0.0;
};

MedianPick median_of_pairs(const Pooled& p) {
  const std::size_t n = p.n();
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  pairs.reserve(n * (n - 1) / 2);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) pairs.emplace_back(i, j);
  MedianPick m;
  if (pairs.empty()) return m;
  std::stable_sort(pairs.begin(), pairs.end(),
                   [&](const auto& a, const auto& b) { return p.d(a.first, a.second) < p.d(b.first, b.second); });
  const std::size_t cnt = pairs.size();
  if (cnt % 2 == 1) {
    m.pairs = {pairs[cnt / 2]};
    m.pair_weight = 1.0;
  } else {
    m.pairs = {pairs[cnt / 2 - 1], pairs[cnt / 2]};
    m.pair_weight = 0.5;
  }
  for (const auto& [i, j] : m.pairs) m.value += m.pair_weight * p.d(i, j);
  return m;
}

// Value and dL/dd_ij over unordered pairs (stored in the upper triangle).
double mmd_core(const Pooled& p, std::span<const double> sigma2, std::vector<double>* pair_grad) {
  const std::size_t n = p.n();
  double value = 0.0;
  if (pair_grad) pair_grad->assign(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    value += p.weight(i, i) * static_cast<double>(sigma2.size());  // k(z, z) = #kernels
    for (std::size_t j = i + 1; j < n; ++j) {
      const double w = 2.0 * p.weight(i, j);  // (i, j) and (j, i)
      const double d = p.d(i, j);
      double kv = 0.0, dk = 0.0;
      for (double s : sigma2) {
        const double e = std::exp(-d / (2.0 * s));
        kv += e;
        dk -= e / (2.0 * s);
      }
      value += w * kv;
      if (pair_grad) (*pair_grad)[i * n + j] = w * dk;
    }
  }
  return value;
}

template <typename T>
void scatter_pair_grad(const Pooled& p, const std::vector<double>& pair_grad, Tensor<T>* dsrc, Tensor<T>* dtgt,
                       const Tensor<T>& src, const Tensor<T>& tgt) {
  const std::size_t n = p.n();
  std::vector<double> dz(n * p.dim, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      const double g = pair_grad[i * n + j];
      if (g == 0.0) continue;
      const double* a = p.row(i);
      const double* b = p.row(j);
      for (std::size_t c = 0; c < p.dim; ++c) {
        const double v = 2.0 * g * (a[c] - b[c]);
        dz[i * p.dim + c] += v;
        dz[j * p.dim + c] -= v;
      }
    }
  if (dsrc) {
    *dsrc = Tensor<T>(src.shape());
    for (std::size_t i = 0; i < src.size(); ++i) (*dsrc)[i] = static_cast<T>(dz[i]);
  }
  if (dtgt) {
    *dtgt = Tensor<T>(tgt.shape());
    for (std::size_t i = 0; i < tgt.size(); ++i) (*dtgt)[i] = static_cast<T>(dz[src.size() + i]);
  }
}

}  // namespace

template <typename T>
double mmd2_fixed(const Tensor<T>& src, const Tensor<T>& tgt, std::span<const double> sigma2, Tensor<T>* dsrc,
                  Tensor<T>* dtgt) {
  for (double s : sigma2)
    if (!(s > 0.0)) throw DomainError("mmd: kernel bandwidths must be positive");
  const Pooled p = pool(src, tgt);
  const bool want = dsrc || dtgt;
  std::vector<double> pair_grad;
  const double v = mmd_core(p, sigma2, want ? &pair_grad : nullptr);
  if (want) scatter_pair_grad(p, pair_grad, dsrc, dtgt, src, tgt);
  return v;
}

template <typename T>
double median_sq_distance(const Tensor<T>& src, const Tensor<T>& tgt) {
  return median_of_pairs(pool(src, tgt)).value;
}

template <typename T>
double mkmmd2(const Tensor<T>& src, const Tensor<T>& tgt, const KernelBank& bank, Tensor<T>* dsrc,
              Tensor<T>* dtgt) {
  bank.validate();
  if (src.shape().n < 2 || tgt.shape().n < 2) throw DomainError("mkmmd2 needs at least two rows per domain");
  const Pooled p = pool(src, tgt);
  const MedianPick med = median_of_pairs(p);
  const bool fallback = !(med.value > 0.0);
  const double base = fallback ? 1.0 : med.value;
  std::vector<double> sigma2;
  for (double m : bank.multipliers) sigma2.push_back(m * base);

  const bool want = dsrc || dtgt;
  std::vector<double> pair_grad;
  const double v = mmd_core(p, sigma2, want ? &pair_grad : nullptr);
  if (!want) return v;
  if (!fallback) {
    // Bandwidth path: s_j = multiplier_j * median, and the median is a
    // (half-)weighted pick of one or two pair distances.
    double dbase = 0.0;
    const std::size_t n = p.n();
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) {
        const double w = 2.0 * p.weight(i, j);
        const double d = p.d(i, j);
        for (std::size_t k = 0; k < sigma2.size(); ++k) {
          const double s = sigma2[k];
          dbase += w * std::exp(-d / (2.0 * s)) * d / (2.0 * s * s) * bank.multipliers[k];
        }
      }
    for (const auto& [i, j] : med.pairs) pair_grad[i * n + j] += dbase * med.pair_weight;
  }
  scatter_pair_grad(p, pair_grad, dsrc, dtgt, src, tgt);
  return v;
}

template <typename T>
FinetuneTerms finetune_loss(const TaskOutputs<T>& src, const TaskOutputs<T>& tgt,
                            std::span<const std::size_t> labeled_rows,
                            const std::vector<std::vector<int>>& labeled_targets, const LossWeights& weights,
                            const KernelBank& bank, LossGradients<T>* grads) {
  weights.validate();
  const std::size_t heads = tgt.probs.size();
  if (src.probs.size() != heads || src.penultimate.size() != heads || tgt.penultimate.size() != heads)
    throw ShapeError("finetune_loss: head count mismatch");
  FinetuneTerms terms;
  if (grads) {
    grads->src_probs.assign(heads, Tensor<T>());
    grads->src_penultimate.assign(heads, Tensor<T>());
    grads->tgt_probs.assign(heads, Tensor<T>());
    grads->tgt_penultimate.assign(heads, Tensor<T>());
  }
  const bool any_labeled = !labeled_rows.empty();
  if (any_labeled && labeled_targets.size() != heads) throw ShapeError("finetune_loss: need targets per head");

  for (std::size_t h = 0; h < heads; ++h) {
    const Tensor<T>& tp = tgt.probs[h];
    Tensor<T> dtp(tp.shape());
    if (any_labeled) {
      const Tensor<T> rows = gather_rows(tp, labeled_rows);
      Tensor<T> g;
      terms.cce += cce(rows, std::span<const int>(labeled_targets[h]), grads ? &g : nullptr);
      if (grads) {
        const std::size_t k = tp.shape().per_item();
        for (std::size_t i = 0; i < labeled_rows.size(); ++i)
          for (std::size_t j = 0; j < k; ++j) dtp[labeled_rows[i] * k + j] += g[i * k + j];
      }
    }
    if (weights.em > 0.0) {
      Tensor<T> g;
      terms.em += entropy_mean(tp, grads ? &g : nullptr);
      if (grads)
        for (std::size_t i = 0; i < g.size(); ++i) dtp[i] += static_cast<T>(weights.em) * g[i];
    }
    if (weights.mmd > 0.0) {
      Tensor<T> ds, dt;
      terms.mmd += mkmmd2(src.penultimate[h], tgt.penultimate[h], bank, grads ? &ds : nullptr, grads ? &dt : nullptr);
      if (grads) {
        for (auto& v : ds.values()) v *= static_cast<T>(weights.mmd);
        for (auto& v : dt.values()) v *= static_cast<T>(weights.mmd);
        grads->src_penultimate[h] = std::move(ds);
        grads->tgt_penultimate[h] = std::move(dt);
      }
    }
    if (grads) grads->tgt_probs[h] = std::move(dtp);
  }
  terms.total = terms.cce + weights.mmd * terms.mmd + weights.em * terms.em;
  return terms;
}

#define XTALK_INSTANTIATE(T)                                                                                   \
  template double cce<T>(const Tensor<T>&, std::span<const int>, Tensor<T>*);                                  \
  template double cce_onehot<T>(const Tensor<T>&, const Tensor<T>&, Tensor<T>*);                               \
  template double entropy_mean<T>(const Tensor<T>&, Tensor<T>*);                                               \
  template double mmd2_fixed<T>(const Tensor<T>&, const Tensor<T>&, std::span<const double>, Tensor<T>*,       \
                                Tensor<T>*);                                                                   \
  template double median_sq_distance<T>(const Tensor<T>&, const Tensor<T>&);                                   \
  template double mkmmd2<T>(const Tensor<T>&, const Tensor<T>&, const KernelBank&, Tensor<T>*, Tensor<T>*);    \
  template FinetuneTerms finetune_loss<T>(const TaskOutputs<T>&, const TaskOutputs<T>&,                        \
                                          std::span<const std::size_t>, const std::vector<std::vector<int>>&,  \
                                          const LossWeights&, const KernelBank&, LossGradients<T>*);

XTALK_INSTANTIATE(float)
XTALK_INSTANTIATE(double)

#undef XTALK_INSTANTIATE

}  // namespace xtalk
