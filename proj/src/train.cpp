// SPDX-License-Identifier: Apache-2.0
#include "iclvc/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace iclvc {

Adam::Adam(double learning_rate, double beta1, double beta2, double eps)
    : lr_(learning_rate), beta1_(beta1), beta2_(beta2), eps_(eps) {}

void Adam::step(const std::vector<Matrix*>& params, const std::vector<Matrix>& grads) {
  if (params.size() != grads.size()) throw ShapeError("Adam: params/grads count mismatch");
  if (m_.empty()) {
    for (const Matrix* p : params) {
      m_.push_back(Matrix::Zero(p->rows(), p->cols()));
      v_.push_back(Matrix::Zero(p->rows(), p->cols()));
    }
  }
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    require_shape(grads[i], params[i]->rows(), params[i]->cols(), "Adam gradient");
    m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * grads[i];
    v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * grads[i].cwiseAbs2();
    params[i]->array() -= lr_ * (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + eps_);
  }
}

double clip_global_norm(std::vector<Matrix>& grads, double max_norm) {
  double sq = 0.0;
  for (const auto& g : grads) sq += g.squaredNorm();
  const double norm = std::sqrt(sq);
  if (norm > max_norm) {
    const double s = max_norm / norm;
    for (auto& g : grads) g *= s;
  }
  return norm;
}

SampleGradient sample_gradient(const VcModel& model, const SynthWorld& world, const ToyUtterance& utt, Rng& rng) {
  const int cents = model.variant() == Variant::kIclProsodyEmbed ? draw_cents(rng) : 0;
  const Conditioning cond = model.condition(world, utt, cents);
  const MaskSpec mask = sample_training_mask(static_cast<int>(utt.frames()), model.config().mask, rng);
  CfmResult r = cfm_loss(model.backbone(), utt.mel, cond.semantic, cond.prosody_ptr(), mask, rng, model.config().flow);

  SampleGradient out;
  out.loss = r.loss;
  out.grads = std::move(r.params);
  out.grads.push_back(embed_backward(model.codebook(), cond.tokens, r.s_grad));
  if (model.tables()) {
    auto [dp, de] = model.tables()->backward(*cond.prosody_tokens, r.p_grad);
    out.grads.push_back(std::move(dp));
    out.grads.push_back(std::move(de));
  }
  return out;
}

std::vector<EpochStats> train(VcModel& model, const SynthWorld& world, const std::vector<ToyUtterance>& corpus,
                              const TrainConfig& config, const EpochCallback& on_epoch) {
  if (corpus.empty()) throw std::invalid_argument("train: empty corpus");
  if (config.batch_size < 1) throw std::invalid_argument("train: batch_size must be >= 1");
  Rng rng(config.seed);

  std::vector<std::size_t> order(corpus.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return corpus[a].frames() < corpus[b].frames(); });
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t i = 0; i < order.size(); i += static_cast<std::size_t>(config.batch_size)) {
    const auto end = std::min(order.size(), i + static_cast<std::size_t>(config.batch_size));
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i), order.begin() + static_cast<std::ptrdiff_t>(end));
  }

  std::vector<Matrix*> params;
  for (auto& [name, p] : model.trainable()) params.push_back(p);
  Adam adam(config.learning_rate);

  std::vector<EpochStats> log;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(batches.begin(), batches.end(), rng);
    double loss_sum = 0.0;
    for (const auto& batch : batches) {
      std::vector<Matrix> grads;
      for (std::size_t idx : batch) {
        SampleGradient g = sample_gradient(model, world, corpus[idx], rng);
        loss_sum += g.loss;
        if (grads.empty()) {
          grads = std::move(g.grads);
        } else {
          for (std::size_t i = 0; i < grads.size(); ++i) grads[i] += g.grads[i];
        }
      }
      for (auto& g : grads) g /= static_cast<double>(batch.size());
      clip_global_norm(grads, config.clip_norm);
      adam.step(params, grads);
    }
    EpochStats stats{epoch + 1, loss_sum / static_cast<double>(corpus.size())};
    if (!std::isfinite(stats.mean_loss)) throw DivergenceError("train: non-finite loss at epoch " + std::to_string(epoch + 1));
    log.push_back(stats);
    if (on_epoch) on_epoch(stats, model);
  }
  return log;
}

}  // namespace iclvc
