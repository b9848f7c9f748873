#include "xtalk/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "xtalk/preprocess.hpp"

namespace xtalk {

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t purpose) {
  // splitmix64 finalizer over the combined words
  std::uint64_t z = seed * 0x9E3779B97F4A7C15ULL + purpose + 0x632BE59BD9B4E019ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

namespace {

enum Purpose : std::uint64_t { kSplit = 1, kMask = 2, kInit = 3, kPretrainBatches = 4, kFinetuneBatches = 5 };

std::map<int, std::vector<std::size_t>> by_class(std::span<const CompoundLabel> labels) {
  std::map<int, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < labels.size(); ++i) groups[labels[i].joint()].push_back(i);
  return groups;
}

std::size_t round_div(std::size_t n, double frac) {
  return static_cast<std::size_t>(std::llround(static_cast<double>(n) * frac));
}

void check_finite(double v, const char* what) {
  if (!std::isfinite(v)) throw NumericError(std::string("non-finite ") + what + " loss");
}

}  // namespace

// ---------------------------------------------------------------------------

void Adam::step(ParamStore<float>& store) {
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  const float b1 = static_cast<float>(cfg_.beta1);
  const float b2 = static_cast<float>(cfg_.beta2);
  const float step = static_cast<float>(cfg_.lr / bc1);
  const float inv_bc2 = static_cast<float>(1.0 / bc2);
  const float eps = static_cast<float>(cfg_.eps);
  for (auto& [name, p] : store.entries()) {
    if (!p.trainable) continue;
    auto& st = state_[name];
    if (st.m.empty()) {
      st.m.assign(p.value.size(), 0.0f);
      st.v.assign(p.value.size(), 0.0f);
    }
    float* w = p.value.data();
    const float* g = p.grad.data();
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      st.m[i] = b1 * st.m[i] + (1.0f - b1) * g[i];
      st.v[i] = b2 * st.v[i] + (1.0f - b2) * g[i] * g[i];
      w[i] -= step * st.m[i] / (std::sqrt(st.v[i] * inv_bc2) + eps);
    }
  }
}

void TrainConfig::validate() const {
  if (batch_size < 2) throw ConfigError("batch_size must be >= 2", "train.batch_size");
  if (!(labeled_fraction > 0.0 && labeled_fraction <= 1.0))
    throw ConfigError("labeled_fraction must be in (0, 1]", "train.labeled_fraction");
  if (!(adam.lr > 0.0)) throw ConfigError("learning rate must be positive", "train.adam.lr");
  if (!(adam.beta1 >= 0.0 && adam.beta1 < 1.0)) throw ConfigError("beta1 must be in [0, 1)", "train.adam.beta1");
  if (!(adam.beta2 >= 0.0 && adam.beta2 < 1.0)) throw ConfigError("beta2 must be in [0, 1)", "train.adam.beta2");
  if (seeds.empty()) throw ConfigError("need at least one seed", "train.seeds");
  if (eval_batch < 1) throw ConfigError("eval_batch must be >= 1", "train.eval_batch");
  weights.validate();
  bank.validate();
}

std::vector<std::size_t> TargetSplits::train_pool() const {
  std::vector<std::size_t> out = labeled;
  out.insert(out.end(), unlabeled.begin(), unlabeled.end());
  std::sort(out.begin(), out.end());
  return out;
}

SourceSplits split_source(std::span<const CompoundLabel> labels, std::uint64_t seed) {
  std::mt19937_64 rng(derive_seed(seed, kSplit));
  SourceSplits out;
  for (auto& [cls, members] : by_class(labels)) {
    if (members.size() < 10)
      throw ConfigError("class " + std::to_string(cls) + " has " + std::to_string(members.size()) +
                            " samples; stratified 8:1:1 needs at least 10",
                        "dataset.segments_per_class");
    std::shuffle(members.begin(), members.end(), rng);
    const std::size_t n_hold = round_div(members.size(), 0.1);
    std::size_t i = 0;
    for (; i < n_hold; ++i) out.test.push_back(members[i]);
    for (; i < 2 * n_hold; ++i) out.val.push_back(members[i]);
    for (; i < members.size(); ++i) out.train.push_back(members[i]);
  }
  for (auto* v : {&out.train, &out.val, &out.test}) std::sort(v->begin(), v->end());
  return out;
}

TargetSplits label_mask_target(std::span<const CompoundLabel> labels, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction <= 1.0))
    throw ConfigError("labeled fraction must be in (0, 1]", "train.labeled_fraction");
  std::mt19937_64 rng(derive_seed(seed, kMask));
  TargetSplits out;
  for (auto& [cls, members] : by_class(labels)) {
    const std::size_t n = members.size();
    const std::size_t n_test = round_div(n, 0.1);
    if (n <= n_test)
      throw ConfigError("class " + std::to_string(cls) + " has no labelable sample", "dataset.segments_per_class");
    std::shuffle(members.begin(), members.end(), rng);
    const std::size_t pool = std::clamp<std::size_t>(round_div(n, fraction), 1, n - n_test);
    const std::size_t n_val = pool >= 2 ? std::max<std::size_t>(1, round_div(pool, 1.0 / 3.0)) : 0;
    std::size_t i = 0;
    for (; i < n_test; ++i) out.test.push_back(members[i]);
    for (std::size_t k = 0; k < n_val; ++k, ++i) out.val.push_back(members[i]);
    for (; i < n_test + pool; ++i) out.labeled.push_back(members[i]);
    for (; i < n; ++i) out.unlabeled.push_back(members[i]);
  }
  for (auto* v : {&out.labeled, &out.val, &out.unlabeled, &out.test}) std::sort(v->begin(), v->end());
  return out;
}

PreparedDomain prepare_domain(const DomainDataset& ds, const std::string& name) {
  PreparedDomain out;
  out.name = name;
  out.labels = ds.labels();
  out.inputs = Tensor<float>(ds.size(), 1, kFreqBins, kFrames);
  const std::size_t m = kFreqBins * kFrames;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto spec = stft_db(ds.segment(i));
    std::copy_n(spec.values.data(), m, out.inputs.data() + i * m);
  }
  return out;
}

TargetLabels::TargetLabels(std::vector<CompoundLabel> labels, const TargetSplits& splits)
    : labels_(std::move(labels)), trainable_(labels_.size(), 0), test_(labels_.size(), 0) {
  for (auto i : splits.labeled) trainable_.at(i) = 1;
  for (auto i : splits.val) trainable_.at(i) = 1;
  for (auto i : splits.test) test_.at(i) = 1;
}

const CompoundLabel& TargetLabels::train_label(std::size_t i) const {
  if (i >= labels_.size() || !trainable_[i])
    throw DomainError("label of target sample " + std::to_string(i) + " is not visible to training");
  return labels_[i];
}

const CompoundLabel& TargetLabels::test_label(std::size_t i) const {
  if (i >= labels_.size() || !test_[i]) throw DomainError("sample " + std::to_string(i) + " is not a test sample");
  ++test_reads_;
  return labels_[i];
}

std::vector<int> head_targets(const ModelSpec& spec, const CompoundLabel& label) {
  if (!spec.multi_output()) return {label.joint()};
  const auto d = label.digits();
  return {d.begin(), d.end()};
}

std::vector<std::string> head_names(const ModelSpec& spec) {
  if (!spec.multi_output()) return {"joint"};
  return {kTaskNames.begin(), kTaskNames.end()};
}

std::vector<double> eval_task_losses(Model<float>& model, const Tensor<float>& inputs,
                                     std::span<const std::size_t> rows,
                                     const std::vector<std::vector<int>>& targets, std::size_t chunk) {
  const std::size_t nh = model.spec().heads().size();
  std::vector<double> sums(nh, 0.0);
  if (rows.empty()) return sums;
  for (std::size_t start = 0; start < rows.size(); start += chunk) {
    const std::size_t cnt = std::min(chunk, rows.size() - start);
    const auto x = gather_rows(inputs, rows.subspan(start, cnt));
    const auto out = model.forward(x, kEval);
    for (std::size_t h = 0; h < nh; ++h) {
      std::span<const int> t(targets[h].data() + start, cnt);
      sums[h] += cce(out.probs[h], t) * static_cast<double>(cnt);
    }
  }
  for (auto& s : sums) s /= static_cast<double>(rows.size());
  return sums;
}

namespace {

std::vector<std::vector<int>> targets_for(const ModelSpec& spec, std::span<const std::size_t> rows,
                                          const auto& label_of) {
  const std::size_t nh = spec.heads().size();
  std::vector<std::vector<int>> t(nh);
  for (auto r : rows) {
    const auto ht = head_targets(spec, label_of(r));
    for (std::size_t h = 0; h < nh; ++h) t[h].push_back(ht[h]);
  }
  return t;
}

void log_val(TrainLog& log, std::size_t epoch, const std::vector<double>& task_losses,
             const std::vector<std::string>& names) {
  double total = 0.0;
  for (std::size_t h = 0; h < task_losses.size(); ++h) {
    log.rows.push_back({epoch, "val", names[h], task_losses[h]});
    total += task_losses[h];
  }
  log.rows.push_back({epoch, "val", "total", total});
  check_finite(total, "validation");
  log.val_losses.push_back(total);
  log.val_task_losses.push_back(task_losses);
}

}  // namespace

TrainLog pretrain(Model<float>& model, const PreparedDomain& source, const SourceSplits& splits,
                  const TrainConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  const auto& spec = model.spec();
  const auto names = head_names(spec);
  const std::size_t nh = names.size();
  auto label_of = [&](std::size_t i) -> const CompoundLabel& { return source.labels.at(i); };
  const auto val_targets = targets_for(spec, splits.val, label_of);

  TrainLog log;
  log_val(log, 0, eval_task_losses(model, source.inputs, splits.val, val_targets, cfg.eval_batch), names);
  auto best = model.params().snapshot();
  double best_loss = log.val_losses.back();

  Adam adam(cfg.adam);
  std::mt19937_64 rng(derive_seed(seed, kPretrainBatches));
  std::vector<std::size_t> order = splits.train;
  for (std::size_t epoch = 1; epoch <= cfg.epochs_pretrain; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<double> train_sum(nh, 0.0);
    std::size_t seen = 0;
    for (std::size_t start = 0; start + 2 <= order.size(); start += cfg.batch_size) {
      const std::size_t cnt = std::min(cfg.batch_size, order.size() - start);
      std::span<const std::size_t> rows(order.data() + start, cnt);
      const auto x = gather_rows(source.inputs, rows);
      const auto t = targets_for(spec, rows, label_of);
      model.params().zero_grad();
      const auto out = model.forward(x, kTrain);
      std::vector<Tensor<float>> dprobs(nh), dpen(nh);
      for (std::size_t h = 0; h < nh; ++h) {
        const double l = cce(out.probs[h], std::span<const int>(t[h]), &dprobs[h]);
        check_finite(l, "training");
        train_sum[h] += l * static_cast<double>(cnt);
      }
      model.backward(dprobs, dpen);
      adam.step(model.params());
      seen += cnt;
    }
    double total = 0.0;
    for (std::size_t h = 0; h < nh; ++h) {
      const double l = seen ? train_sum[h] / static_cast<double>(seen) : 0.0;
      log.rows.push_back({epoch, "train", names[h], l});
      total += l;
    }
    log.rows.push_back({epoch, "train", "total", total});
    log_val(log, epoch, eval_task_losses(model, source.inputs, splits.val, val_targets, cfg.eval_batch), names);
    if (log.val_losses.back() < best_loss) {
      best_loss = log.val_losses.back();
      best = model.params().snapshot();
      log.selected_epoch = epoch;
    }
  }
  model.params().restore(best);
  return log;
}

TrainLog finetune(Model<float>& model, const PreparedDomain& source, const SourceSplits& source_splits,
                  const TargetDomain& target, const TargetSplits& target_splits, const TrainConfig& cfg,
                  std::uint64_t seed) {
  cfg.validate();
  const auto& spec = model.spec();
  const auto names = head_names(spec);
  const std::size_t nh = names.size();
  auto target_label = [&](std::size_t i) -> const CompoundLabel& { return target.labels.train_label(i); };
  auto source_label = [&](std::size_t i) -> const CompoundLabel& { return source.labels.at(i); };
  const auto val_targets = targets_for(spec, target_splits.val, target_label);

  TrainLog log;
  log_val(log, 0, eval_task_losses(model, target.inputs, target_splits.val, val_targets, cfg.eval_batch), names);
  auto best = model.params().snapshot();
  double best_loss = log.val_losses.back();

  const auto& labeled = target_splits.labeled;
  const auto& unlabeled = target_splits.unlabeled;
  if (labeled.empty() && unlabeled.empty()) throw ConfigError("target domain has no training samples");
  if (source_splits.train.size() < 2) throw ConfigError("source training split needs at least 2 samples");
  const std::size_t pool = labeled.size() + unlabeled.size();
  const std::size_t steps = (pool + cfg.batch_size - 1) / cfg.batch_size;
  const std::size_t bs = cfg.batch_size;
  std::size_t n_lab = labeled.empty() ? 0 : (unlabeled.empty() ? bs : bs / 2);

  Adam adam(cfg.adam);
  std::mt19937_64 rng(derive_seed(seed, kFinetuneBatches));
  auto draw = [&](const std::vector<std::size_t>& from, std::size_t n, std::vector<std::size_t>& into) {
    std::uniform_int_distribution<std::size_t> pick(0, from.size() - 1);
    for (std::size_t i = 0; i < n; ++i) into.push_back(from[pick(rng)]);
  };

  for (std::size_t epoch = 1; epoch <= cfg.epochs_finetune; ++epoch) {
    FinetuneTerms sum;
    for (std::size_t step = 0; step < steps; ++step) {
      std::vector<std::size_t> src_rows, tgt_rows;
      draw(source_splits.train, bs, src_rows);
      draw(labeled, n_lab, tgt_rows);
      draw(unlabeled, bs - n_lab, tgt_rows);

      const auto x = concat_rows(gather_rows(source.inputs, std::span<const std::size_t>(src_rows)),
                                 gather_rows(target.inputs, std::span<const std::size_t>(tgt_rows)));
      model.params().zero_grad();
      const auto out = model.forward(x, kTrain);
      TaskOutputs<float> so, to;
      for (std::size_t h = 0; h < nh; ++h) {
        so.probs.push_back(slice_rows(out.probs[h], 0, bs));
        to.probs.push_back(slice_rows(out.probs[h], bs, bs));
        so.penultimate.push_back(slice_rows(out.penultimate[h], 0, bs));
        to.penultimate.push_back(slice_rows(out.penultimate[h], bs, bs));
      }
      std::vector<std::size_t> lab_rows(n_lab);
      for (std::size_t i = 0; i < n_lab; ++i) lab_rows[i] = i;
      const auto lab_targets =
          targets_for(spec, std::span<const std::size_t>(tgt_rows.data(), n_lab), target_label);

      LossGradients<float> g;
      auto terms = finetune_loss(so, to, std::span<const std::size_t>(lab_rows), lab_targets, cfg.weights,
                                 cfg.bank, &g);
      if (cfg.source_cce_in_finetune) {
        const auto st = targets_for(spec, std::span<const std::size_t>(src_rows), source_label);
        for (std::size_t h = 0; h < nh; ++h) {
          const double l = cce(so.probs[h], std::span<const int>(st[h]), &g.src_probs[h]);
          terms.cce += l;
          terms.total += l;
        }
      }
      check_finite(terms.total, "finetune");

      std::vector<Tensor<float>> dprobs(nh), dpen(nh);
      const Shape pen_shape{bs, spec.tsl_hidden, 1, 1};
      for (std::size_t h = 0; h < nh; ++h) {
        const Shape prob_shape{bs, static_cast<std::size_t>(spec.heads()[h]), 1, 1};
        auto or_zero = [](const Tensor<float>& t, Shape s) { return t.empty() ? Tensor<float>(s) : t; };
        dprobs[h] = concat_rows(or_zero(g.src_probs[h], prob_shape), or_zero(g.tgt_probs[h], prob_shape));
        dpen[h] = concat_rows(or_zero(g.src_penultimate[h], pen_shape), or_zero(g.tgt_penultimate[h], pen_shape));
      }
      model.backward(dprobs, dpen);
      adam.step(model.params());
      sum.total += terms.total;
      sum.cce += terms.cce;
      sum.mmd += terms.mmd;
      sum.em += terms.em;
    }
    const double inv = steps ? 1.0 / static_cast<double>(steps) : 0.0;
    log.rows.push_back({epoch, "train", "total", sum.total * inv});
    log.rows.push_back({epoch, "train", "cce", sum.cce * inv});
    log.rows.push_back({epoch, "train", "mmd", sum.mmd * inv});
    log.rows.push_back({epoch, "train", "em", sum.em * inv});
    log_val(log, epoch, eval_task_losses(model, target.inputs, target_splits.val, val_targets, cfg.eval_batch),
            names);
    if (log.val_losses.back() < best_loss) {
      best_loss = log.val_losses.back();
      best = model.params().snapshot();
      log.selected_epoch = epoch;
    }
  }
  model.params().restore(best);
  return log;
}

Predictions predict(Model<float>& model, const Tensor<float>& inputs, std::span<const std::size_t> rows,
                    std::size_t chunk) {
  Predictions out;
  const bool multi = model.spec().multi_output();
  for (std::size_t start = 0; start < rows.size(); start += chunk) {
    const std::size_t cnt = std::min(chunk, rows.size() - start);
    const auto res = model.forward(gather_rows(inputs, rows.subspan(start, cnt)), kEval);
    for (std::size_t r = 0; r < cnt; ++r) {
      auto argmax = [&](const Tensor<float>& p) {
        const std::size_t k = p.shape().per_item();
        const float* row = p.data() + r * k;
        return static_cast<int>(std::max_element(row, row + k) - row);
      };
      CompoundLabel l;
      if (multi) {
        std::array<int, kNumTasks> d{};
        for (int h = 0; h < kNumTasks; ++h) d[h] = argmax(res.probs[h]);
        l = CompoundLabel::from_tasks(d);
      } else {
        l = CompoundLabel::from_joint(argmax(res.probs[0]));
      }
      out.tasks.push_back(l.digits());
      out.joint.push_back(l.joint());
    }
  }
  return out;
}

}  // namespace xtalk
