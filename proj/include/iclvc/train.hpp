// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "iclvc/model.hpp"

namespace iclvc {

class Adam {
 public:
  explicit Adam(double learning_rate = 1e-3, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

  void step(const std::vector<Matrix*>& params, const std::vector<Matrix>& grads);
  long steps() const { return t_; }
  void set_learning_rate(double lr) { lr_ = lr; }

 private:
  double lr_, beta1_, beta2_, eps_;
  long t_ = 0;
  std::vector<Matrix> m_, v_;
};

// Rescales in place so the global L2 norm is at most max_norm; returns the
// norm before clipping.
double clip_global_norm(std::vector<Matrix>& grads, double max_norm);

struct TrainConfig {
  int epochs = 30;
  int batch_size = 8;
  double learning_rate = 1e-3;
  double clip_norm = 1.0;
  std::uint64_t seed = 1;
};

struct SampleGradient {
  double loss = 0.0;
  std::vector<Matrix> grads;  // aligned with VcModel::trainable()
};

// Masked-CFM loss and gradients for one utterance with a freshly drawn
// training mask, t, noise and (for the embedding variant) pitch perturbation.
SampleGradient sample_gradient(const VcModel& model, const SynthWorld& world, const ToyUtterance& utt, Rng& rng);

struct EpochStats {
  int epoch = 0;
  double mean_loss = 0.0;
};

using EpochCallback = std::function<void(const EpochStats&, const VcModel&)>;

// Length-bucketed mini-batches (batch order reshuffled each epoch), batch-mean
// gradients, global-norm clipping and Adam.
std::vector<EpochStats> train(VcModel& model, const SynthWorld& world, const std::vector<ToyUtterance>& corpus,
                              const TrainConfig& config, const EpochCallback& on_epoch = {});

}  // namespace iclvc
