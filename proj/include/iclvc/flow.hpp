// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <optional>

#include "iclvc/backbone.hpp"
#include "iclvc/mask.hpp"
#include "iclvc/tensor.hpp"

namespace iclvc {

enum class Solver { kEuler, kMidpoint };

struct FlowConfig {
  double sigma_min = 1e-5;
  int ode_steps = 32;
  Solver solver = Solver::kEuler;

  void validate() const;
};

struct PathSample {
  double t = 0.0;
  Matrix x_t;
  Matrix u_target;
};

// u_t(x | x1) = (x1 - (1 - sigma_min) x) / (1 - (1 - sigma_min) t)
Matrix conditional_field(const Matrix& x, const Matrix& x1, double t, double sigma_min);

// Draws x_t from the OT path N(t x1, (1 - (1 - sigma_min) t)^2 I) using the
// supplied standard-normal noise, and the conditional target field at x_t.
PathSample sample_path(const Matrix& x1, double t, const Matrix& noise, const FlowConfig& cfg);

// Row-wise concatenation [s_embed | mel_channel | p_embed].
Matrix assemble_condition(const Matrix& s_embed, const Matrix& mel_channel, const Matrix* p_embed);

struct ObjectiveResult {
  double loss = 0.0;
  Matrix prediction_grad;
};

// Mean of squared error over masked frames and feature dims. Rows with
// mask=false get an exactly-zero gradient and never enter the sum.
ObjectiveResult masked_cfm_objective(const Matrix& prediction, const Matrix& target, const MaskSpec& mask);

struct CfmOptions {
  // Reject an all-false mask instead of returning a zero loss.
  bool strict = true;
  std::optional<double> fixed_t;
  std::optional<Matrix> fixed_noise;
  // Test hook: may rewrite the network prediction before the objective.
  std::function<void(Matrix& prediction, const Matrix& target)> prediction_hook;
};

struct CfmResult {
  double loss = 0.0;
  double t = 0.0;
  Gradients params;
  Matrix s_grad;
  Matrix p_grad;  // empty when no prosody channel
  Matrix prediction;
  Matrix target;
};

// One masked-CFM sample: t ~ U[0,1], noise ~ N(0, I), x_t from the OT path.
// The mel channel holds x_t on masked frames and the clean x1 elsewhere.
CfmResult cfm_loss(const Backbone& model, const Matrix& x1, const Matrix& s_embed,
                   const Matrix* p_embed, const MaskSpec& mask, Rng& rng, const FlowConfig& cfg,
                   const CfmOptions& options = {});

using VectorField = std::function<Matrix(const Matrix& state, double t)>;

// Fixed-step integration from t=0 to t=1. Rows with mask=false are reset to
// frozen_values after every step (and every midpoint stage).
Matrix integrate(const VectorField& field, const Matrix& x0, const MaskSpec& mask,
                 const Matrix& frozen_values, const FlowConfig& cfg);

Matrix integrate(const Backbone& model, const Matrix& x0, const Matrix& s_embed,
                 const Matrix* p_embed, const MaskSpec& mask, const Matrix& frozen_values,
                 const FlowConfig& cfg);

}  // namespace iclvc
