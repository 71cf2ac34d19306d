// SPDX-License-Identifier: Apache-2.0
#include "iclvc/flow.hpp"

#include <string>

namespace iclvc {

void FlowConfig::validate() const {
  if (!(sigma_min > 0.0 && sigma_min < 1.0)) throw std::invalid_argument("flow: sigma_min must be in (0, 1)");
  if (ode_steps < 1) throw std::invalid_argument("flow: ode_steps must be >= 1");
}

Matrix conditional_field(const Matrix& x, const Matrix& x1, double t, double sigma_min) {
  require_shape(x, x1.rows(), x1.cols(), "conditional_field: x");
  const double denom = 1.0 - (1.0 - sigma_min) * t;
  return (x1 - (1.0 - sigma_min) * x) / denom;
}

PathSample sample_path(const Matrix& x1, double t, const Matrix& noise, const FlowConfig& cfg) {
  cfg.validate();
  require_shape(noise, x1.rows(), x1.cols(), "sample_path: noise");
  if (!(t >= 0.0 && t <= 1.0)) throw std::invalid_argument("sample_path: t outside [0, 1]");
  if (!x1.allFinite() || !noise.allFinite()) throw std::invalid_argument("sample_path: non-finite input");
  PathSample s;
  s.t = t;
  s.x_t = t * x1 + (1.0 - (1.0 - cfg.sigma_min) * t) * noise;
  s.u_target = conditional_field(s.x_t, x1, t, cfg.sigma_min);
  return s;
}

Matrix assemble_condition(const Matrix& s_embed, const Matrix& mel_channel, const Matrix* p_embed) {
  const Eigen::Index T = mel_channel.rows();
  if (s_embed.rows() != T) {
    throw ShapeError("assemble_condition: semantic rows " + std::to_string(s_embed.rows()) +
                     " != mel rows " + std::to_string(T));
  }
  const Eigen::Index pcols = p_embed ? p_embed->cols() : 0;
  if (p_embed && p_embed->rows() != T) {
    throw ShapeError("assemble_condition: prosody rows " + std::to_string(p_embed->rows()) +
                     " != mel rows " + std::to_string(T));
  }
  Matrix in(T, s_embed.cols() + mel_channel.cols() + pcols);
  in.leftCols(s_embed.cols()) = s_embed;
  in.middleCols(s_embed.cols(), mel_channel.cols()) = mel_channel;
  if (p_embed) in.rightCols(pcols) = *p_embed;
  return in;
}

ObjectiveResult masked_cfm_objective(const Matrix& prediction, const Matrix& target, const MaskSpec& mask) {
  require_shape(prediction, target.rows(), target.cols(), "masked_cfm_objective: prediction");
  if (mask.size() != static_cast<std::size_t>(target.rows())) {
    throw ShapeError("masked_cfm_objective: mask length " + std::to_string(mask.size()) +
                     " != frames " + std::to_string(target.rows()));
  }
  ObjectiveResult r;
  r.prediction_grad = Matrix::Zero(target.rows(), target.cols());
  const auto n = mask.count_masked();
  if (n == 0) return r;
  const double norm = 1.0 / (static_cast<double>(n) * static_cast<double>(target.cols()));
  double sum = 0.0;
  for (Eigen::Index i = 0; i < target.rows(); ++i) {
    if (!mask[static_cast<std::size_t>(i)]) continue;
    const RowVector diff = prediction.row(i) - target.row(i);
    sum += diff.squaredNorm();
    r.prediction_grad.row(i) = 2.0 * norm * diff;
  }
  r.loss = sum * norm;
  return r;
}

CfmResult cfm_loss(const Backbone& model, const Matrix& x1, const Matrix& s_embed,
                   const Matrix* p_embed, const MaskSpec& mask, Rng& rng, const FlowConfig& cfg,
                   const CfmOptions& options) {
  const Eigen::Index T = x1.rows();
  if (s_embed.rows() != T) throw ShapeError("cfm_loss: semantic rows != mel rows");
  if (mask.size() != static_cast<std::size_t>(T)) throw ShapeError("cfm_loss: mask length != mel rows");

  CfmResult r;
  const std::size_t masked = mask.count_masked();
  if (masked == 0) {
    if (options.strict) throw std::invalid_argument("cfm_loss: mask has no masked frames (no training signal)");
    r.params = zeros_like(model.params());
    r.s_grad = Matrix::Zero(s_embed.rows(), s_embed.cols());
    if (p_embed) r.p_grad = Matrix::Zero(p_embed->rows(), p_embed->cols());
    return r;
  }

  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  r.t = options.fixed_t ? *options.fixed_t : uniform(rng);
  const Matrix noise = options.fixed_noise ? *options.fixed_noise : standard_normal(T, x1.cols(), rng);
  PathSample path = sample_path(x1, r.t, noise, cfg);

  Matrix channel = x1;
  for (Eigen::Index i = 0; i < T; ++i) {
    if (mask[static_cast<std::size_t>(i)]) channel.row(i) = path.x_t.row(i);
  }
  const Matrix input = assemble_condition(s_embed, channel, p_embed);

  ForwardCache cache;
  r.prediction = model.forward(input, r.t, &cache);
  r.target = std::move(path.u_target);
  if (options.prediction_hook) options.prediction_hook(r.prediction, r.target);

  ObjectiveResult obj = masked_cfm_objective(r.prediction, r.target, mask);
  r.loss = obj.loss;
  BackwardResult back = model.backward(cache, obj.prediction_grad);
  r.params = std::move(back.params);
  r.s_grad = back.input.leftCols(s_embed.cols());
  if (p_embed) r.p_grad = back.input.rightCols(p_embed->cols());
  return r;
}

namespace {

void reimpose(Matrix& state, const MaskSpec& mask, const Matrix& frozen_values) {
  for (Eigen::Index i = 0; i < state.rows(); ++i) {
    if (!mask[static_cast<std::size_t>(i)]) state.row(i) = frozen_values.row(i);
  }
}

}  // namespace

Matrix integrate(const VectorField& field, const Matrix& x0, const MaskSpec& mask,
                 const Matrix& frozen_values, const FlowConfig& cfg) {
  cfg.validate();
  if (mask.size() != static_cast<std::size_t>(x0.rows())) throw ShapeError("integrate: mask length != state rows");
  require_shape(frozen_values, x0.rows(), x0.cols(), "integrate: frozen_values");

  Matrix x = x0;
  reimpose(x, mask, frozen_values);
  const double h = 1.0 / cfg.ode_steps;
  for (int step = 0; step < cfg.ode_steps; ++step) {
    const double t = step * h;
    if (cfg.solver == Solver::kEuler) {
      x += h * field(x, t);
    } else {
      Matrix mid = x + 0.5 * h * field(x, t);
      reimpose(mid, mask, frozen_values);
      x += h * field(mid, t + 0.5 * h);
    }
    reimpose(x, mask, frozen_values);
    if (!x.allFinite()) {
      throw DivergenceError("integrate: non-finite state at step " + std::to_string(step));
    }
  }
  return x;
}

Matrix integrate(const Backbone& model, const Matrix& x0, const Matrix& s_embed,
                 const Matrix* p_embed, const MaskSpec& mask, const Matrix& frozen_values,
                 const FlowConfig& cfg) {
  VectorField field = [&](const Matrix& state, double t) {
    return model.forward(assemble_condition(s_embed, state, p_embed), std::min(t, 1.0));
  };
  return integrate(field, x0, mask, frozen_values, cfg);
}

}  // namespace iclvc
