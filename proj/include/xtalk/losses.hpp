#pragma once

// Training objectives. Each function returns the scalar value and, when a
// gradient pointer is supplied, writes dL/d(input) with the input's shape.

#include <span>
#include <vector>

#include "xtalk/models.hpp"

namespace xtalk {

inline constexpr double kLogEpsilon = 1e-12;

/// Mean over rows of -log(p[target] + 1e-12). `probs` is (B, K, 1, 1).
template <typename T>
double cce(const Tensor<T>& probs, std::span<const int> targets, Tensor<T>* grad = nullptr);

/// Same with one-hot target rows of shape (B, K, 1, 1).
template <typename T>
double cce_onehot(const Tensor<T>& probs, const Tensor<T>& onehot, Tensor<T>* grad = nullptr);

/// Mean over rows of -sum_k p_k log(p_k + 1e-12).
template <typename T>
double entropy_mean(const Tensor<T>& probs, Tensor<T>* grad = nullptr);

/// Gaussian kernel ladder around the median pairwise squared distance of
/// the pooled batch.
struct KernelBank {
  std::vector<double> multipliers{0.25, 0.5, 1.0, 2.0, 4.0};

  void validate() const;
};

/// Biased MMD^2 with sum-of-Gaussians kernel k = sum_j exp(-d^2 / (2 s_j)),
/// s_j given explicitly. Full Gram means including the diagonal.
template <typename T>
double mmd2_fixed(const Tensor<T>& src, const Tensor<T>& tgt, std::span<const double> sigma2,
                  Tensor<T>* dsrc = nullptr, Tensor<T>* dtgt = nullptr);

/// Multi-kernel MMD^2 with s_j = multiplier_j * median of the pairwise
/// squared distances over distinct pairs of src U tgt (1 when the median is
/// 0). The bandwidth is differentiated through. Throws DomainError unless
/// both batches hold at least two rows.
template <typename T>
double mkmmd2(const Tensor<T>& src, const Tensor<T>& tgt, const KernelBank& bank, Tensor<T>* dsrc = nullptr,
              Tensor<T>* dtgt = nullptr);

/// Median heuristic used by mkmmd2.
template <typename T>
double median_sq_distance(const Tensor<T>& src, const Tensor<T>& tgt);

struct LossWeights {
  double mmd = 1.0;
  double em = 0.1;

  void validate() const;
};

template <typename T>
struct LossGradients {
  std::vector<Tensor<T>> src_probs, src_penultimate, tgt_probs, tgt_penultimate;
};

struct FinetuneTerms {
  double total = 0.0;
  double cce = 0.0;
  double mmd = 0.0;
  double em = 0.0;
};

/// CCE over the labeled target rows (summed over heads) + w_mmd * sum over
/// heads of mkmmd2(src penultimate, tgt penultimate) + w_em * sum over heads
/// of entropy_mean(tgt probs). `labeled_targets[h][i]` is the class of
/// target row `labeled_rows[i]` for head h. The CCE term is skipped when no
/// row is labeled.
template <typename T>
FinetuneTerms finetune_loss(const TaskOutputs<T>& src, const TaskOutputs<T>& tgt,
                            std::span<const std::size_t> labeled_rows,
                            const std::vector<std::vector<int>>& labeled_targets, const LossWeights& weights,
                            const KernelBank& bank, LossGradients<T>* grads = nullptr);

}  // namespace xtalk
