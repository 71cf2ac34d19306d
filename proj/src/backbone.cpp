// SPDX-License-Identifier: Apache-2.0
#include "iclvc/backbone.hpp"

#include <cmath>

namespace iclvc {

namespace {

constexpr double kLayerNormEps = 1e-5;
constexpr double kTimeScale = 1000.0;

// Parameter layout: 4 input/time entries, 13 per block, 4 final entries.
constexpr std::size_t kInW = 0, kInB = 1, kTimeW = 2, kTimeB = 3;
constexpr std::size_t kPerBlock = 13;
enum BlockSlot : std::size_t {
  kLn1G, kLn1B, kWq, kWk, kWv, kWo, kBo, kLn2G, kLn2B, kW1, kB1, kW2, kB2
};

std::size_t block_base(int b) { return 4 + kPerBlock * static_cast<std::size_t>(b); }
std::size_t final_base(const BackboneConfig& c) { return block_base(c.num_blocks); }

Matrix layer_norm(const Matrix& x, const Matrix& gamma, const Matrix& beta,
                  LayerNormCache& cache) {
  const Eigen::VectorXd mean = x.rowwise().mean();
  Matrix xc = x.colwise() - mean;
  const Eigen::VectorXd var = xc.array().square().rowwise().mean();
  cache.rstd = (var.array() + kLayerNormEps).rsqrt();
  cache.xhat = xc.array().colwise() * cache.rstd.array();
  Matrix y = cache.xhat.array().rowwise() * gamma.row(0).array();
  y.array().rowwise() += beta.row(0).array();
  return y;
}

Matrix layer_norm_backward(const Matrix& dy, const Matrix& gamma, const LayerNormCache& cache,
                           Matrix& dgamma, Matrix& dbeta) {
  dgamma += (dy.array() * cache.xhat.array()).colwise().sum().matrix();
  dbeta += dy.colwise().sum();
  Matrix dxhat = dy.array().rowwise() * gamma.row(0).array();
  const Eigen::VectorXd m1 = dxhat.rowwise().mean();
  const Eigen::VectorXd m2 = (dxhat.array() * cache.xhat.array()).rowwise().mean();
  Matrix dx = dxhat.colwise() - m1;
  dx.array() -= cache.xhat.array().colwise() * m2.array();
  dx.array().colwise() *= cache.rstd.array();
  return dx;
}

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

Matrix silu(const Matrix& z) {
  return z.unaryExpr([](double v) { return v * sigmoid(v); });
}

Matrix silu_backward(const Matrix& z, const Matrix& da) {
  return da.binaryExpr(z, [](double g, double v) {
    const double s = sigmoid(v);
    return g * (s + v * s * (1.0 - s));
  });
}

void softmax_rows(Matrix& s) {
  const Eigen::VectorXd mx = s.rowwise().maxCoeff();
  s.colwise() -= mx;
  s = s.array().exp();
  const Eigen::VectorXd sum = s.rowwise().sum();
  s.array().colwise() /= sum.array();
}

Matrix uniform_matrix(Eigen::Index rows, Eigen::Index cols, double bound, Rng& rng) {
  std::uniform_real_distribution<double> u(-bound, bound);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
  return m;
}

}  // namespace

void BackboneConfig::validate() const {
  if (input_dim < 1 || output_dim < 1) throw std::invalid_argument("backbone: input/output dims must be >= 1");
  if (num_blocks < 1) throw std::invalid_argument("backbone: layer count must be >= 1");
  if (time_embed_dim < 2 || time_embed_dim % 2 != 0)
    throw std::invalid_argument("backbone: time_embed_dim must be even and >= 2");
  if (time_width < 1 || time_width >= width)
    throw std::invalid_argument("backbone: time_width must be in [1, width)");
  if (num_heads < 1 || width % num_heads != 0)
    throw std::invalid_argument("backbone: width must be divisible by num_heads");
  if (ffn_dim < 1) throw std::invalid_argument("backbone: ffn_dim must be >= 1");
}

nlohmann::json BackboneConfig::to_json() const {
  return {{"input_dim", input_dim},
          {"output_dim", output_dim},
          {"width", width},
          {"time_embed_dim", time_embed_dim},
          {"time_width", time_width},
          {"num_blocks", num_blocks},
          {"num_heads", num_heads},
          {"ffn_dim", ffn_dim},
          {"attention", attention == AttentionScope::kSequence ? "sequence" : "frame"},
          {"frame_positions", frame_positions}};
}

BackboneConfig BackboneConfig::from_json(const nlohmann::json& j) {
  BackboneConfig c;
  c.input_dim = j.at("input_dim").get<int>();
  c.output_dim = j.at("output_dim").get<int>();
  c.width = j.at("width").get<int>();
  c.time_embed_dim = j.at("time_embed_dim").get<int>();
  c.time_width = j.at("time_width").get<int>();
  c.num_blocks = j.at("num_blocks").get<int>();
  c.num_heads = j.at("num_heads").get<int>();
  c.ffn_dim = j.at("ffn_dim").get<int>();
  c.attention = j.at("attention").get<std::string>() == "frame" ? AttentionScope::kFrame
                                                               : AttentionScope::kSequence;
  c.frame_positions = j.at("frame_positions").get<bool>();
  c.validate();
  return c;
}

std::size_t NetworkParams::index_of(const std::string& name) const {
  for (std::size_t i = 0; i < entries.size(); ++i) {
    if (entries[i].name == name) return i;
  }
  throw std::out_of_range("no parameter named " + name);
}

std::size_t NetworkParams::scalar_count() const {
  std::size_t n = 0;
  for (const auto& e : entries) n += static_cast<std::size_t>(e.value.size());
  return n;
}

Gradients zeros_like(const NetworkParams& params) {
  Gradients g;
  g.reserve(params.size());
  for (const auto& e : params.entries) g.push_back(Matrix::Zero(e.value.rows(), e.value.cols()));
  return g;
}

RowVector sinusoidal_time_embed(double t, int dim) {
  if (dim < 2 || dim % 2 != 0) throw std::invalid_argument("sinusoidal_time_embed: dim must be even");
  if (!(t >= 0.0 && t <= 1.0)) throw std::invalid_argument("sinusoidal_time_embed: t outside [0, 1]");
  const int half = dim / 2;
  RowVector e(dim);
  for (int i = 0; i < half; ++i) {
    const double freq = std::exp(-std::log(10000.0) * i / half);
    const double arg = kTimeScale * t * freq;
    e(i) = std::sin(arg);
    e(half + i) = std::cos(arg);
  }
  return e;
}

Matrix frame_position_encoding(Eigen::Index rows, int width) {
  Matrix pe(rows, width);
  for (Eigen::Index p = 0; p < rows; ++p) {
    for (int i = 0; i < width; i += 2) {
      const double angle = static_cast<double>(p) / std::pow(10000.0, static_cast<double>(i) / width);
      pe(p, i) = std::sin(angle);
      if (i + 1 < width) pe(p, i + 1) = std::cos(angle);
    }
  }
  return pe;
}

Backbone::Backbone(BackboneConfig config, NetworkParams params)
    : config_(config), params_(std::move(params)) {
  config_.validate();
  check_layout();
}

Backbone Backbone::initialize(const BackboneConfig& c, Rng& rng) {
  c.validate();
  NetworkParams p;
  auto add = [&](std::string name, Matrix m) { p.entries.push_back({std::move(name), std::move(m)}); };
  auto proj = [&](int fan_in, int fan_out) {
    return uniform_matrix(fan_in, fan_out, 1.0 / std::sqrt(static_cast<double>(fan_in)), rng);
  };
  const int w = c.width;
  add("in.w", proj(c.input_dim, w - c.time_width));
  add("in.b", Matrix::Zero(1, w - c.time_width));
  add("time.w", proj(c.time_embed_dim, c.time_width));
  add("time.b", Matrix::Zero(1, c.time_width));
  for (int b = 0; b < c.num_blocks; ++b) {
    const std::string pre = "block" + std::to_string(b) + ".";
    add(pre + "ln1.g", Matrix::Ones(1, w));
    add(pre + "ln1.b", Matrix::Zero(1, w));
    add(pre + "attn.wq", proj(w, w));
    add(pre + "attn.wk", proj(w, w));
    add(pre + "attn.wv", proj(w, w));
    add(pre + "attn.wo", proj(w, w));
    add(pre + "attn.bo", Matrix::Zero(1, w));
    add(pre + "ln2.g", Matrix::Ones(1, w));
    add(pre + "ln2.b", Matrix::Zero(1, w));
    add(pre + "ffn.w1", proj(w, c.ffn_dim));
    add(pre + "ffn.b1", Matrix::Zero(1, c.ffn_dim));
    add(pre + "ffn.w2", proj(c.ffn_dim, w));
    add(pre + "ffn.b2", Matrix::Zero(1, w));
  }
  add("final.ln.g", Matrix::Ones(1, w));
  add("final.ln.b", Matrix::Zero(1, w));
  add("out.w", Matrix::Zero(w, c.output_dim));
  add("out.b", Matrix::Zero(1, c.output_dim));
  return Backbone(c, std::move(p));
}

void Backbone::check_layout() const {
  const std::size_t expected = final_base(config_) + 4;
  if (params_.size() != expected) {
    throw ShapeError("backbone: expected " + std::to_string(expected) + " parameter arrays, got " +
                     std::to_string(params_.size()));
  }
  const int w = config_.width;
  require_shape(params_[kInW], config_.input_dim, w - config_.time_width, "in.w");
  require_shape(params_[kTimeW], config_.time_embed_dim, config_.time_width, "time.w");
  for (int b = 0; b < config_.num_blocks; ++b) {
    const auto base = block_base(b);
    require_shape(params_[base + kWq], w, w, params_.entries[base + kWq].name);
    require_shape(params_[base + kW1], w, config_.ffn_dim, params_.entries[base + kW1].name);
  }
  require_shape(params_[final_base(config_) + 2], w, config_.output_dim, "out.w");
  for (const auto& e : params_.entries) {
    if (!e.value.allFinite()) throw std::invalid_argument("backbone: parameter " + e.name + " not finite");
  }
}

Matrix Backbone::forward(const Matrix& input, double t, ForwardCache* cache) const {
  if (input.cols() != config_.input_dim || input.rows() < 1) {
    throw ShapeError("backbone forward: input " + shape_of(input) + " but model expects [T x " +
                     std::to_string(config_.input_dim) + "]");
  }
  if (!(t >= 0.0 && t <= 1.0)) throw std::invalid_argument("backbone forward: t outside [0, 1]");

  ForwardCache local;
  ForwardCache& c = cache ? *cache : local;
  const Eigen::Index T = input.rows();
  const int w = config_.width;
  const int tw = config_.time_width;

  c.input = input;
  c.t = t;
  c.time_features = sinusoidal_time_embed(t, config_.time_embed_dim);
  RowVector time_proj = c.time_features * params_[kTimeW] + params_[kTimeB];

  Matrix h(T, w);
  h.leftCols(w - tw).noalias() = input * params_[kInW];
  h.leftCols(w - tw).rowwise() += params_[kInB].row(0);
  h.rightCols(tw).rowwise() = time_proj;
  if (config_.frame_positions) h += frame_position_encoding(T, w);

  const int heads = config_.num_heads;
  const int head_dim = w / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(head_dim));
  c.blocks.assign(static_cast<std::size_t>(config_.num_blocks), BlockCache{});
  for (int b = 0; b < config_.num_blocks; ++b) {
    const auto base = block_base(b);
    BlockCache& bc = c.blocks[static_cast<std::size_t>(b)];
    bc.h_in = h;
    bc.u1 = layer_norm(h, params_[base + kLn1G], params_[base + kLn1B], bc.ln1);
    bc.v.noalias() = bc.u1 * params_[base + kWv];
    if (config_.attention == AttentionScope::kSequence) {
      bc.q.noalias() = bc.u1 * params_[base + kWq];
      bc.k.noalias() = bc.u1 * params_[base + kWk];
      bc.attn.resize(T, w);
      bc.probs.resize(static_cast<std::size_t>(heads));
      for (int hd = 0; hd < heads; ++hd) {
        Matrix s = (bc.q.middleCols(hd * head_dim, head_dim) * bc.k.middleCols(hd * head_dim, head_dim).transpose()) * scale;
        softmax_rows(s);
        bc.attn.middleCols(hd * head_dim, head_dim).noalias() = s * bc.v.middleCols(hd * head_dim, head_dim);
        bc.probs[static_cast<std::size_t>(hd)] = std::move(s);
      }
    } else {
      bc.attn = bc.v;
    }
    h.noalias() += bc.attn * params_[base + kWo];
    h.rowwise() += params_[base + kBo].row(0);
    bc.h_mid = h;
    bc.u2 = layer_norm(h, params_[base + kLn2G], params_[base + kLn2B], bc.ln2);
    bc.z1.noalias() = bc.u2 * params_[base + kW1];
    bc.z1.rowwise() += params_[base + kB1].row(0);
    bc.a1 = silu(bc.z1);
    h.noalias() += bc.a1 * params_[base + kW2];
    h.rowwise() += params_[base + kB2].row(0);
  }
  const auto fb = final_base(config_);
  c.h_last = h;
  c.hf = layer_norm(h, params_[fb], params_[fb + 1], c.ln_final);
  Matrix out = c.hf * params_[fb + 2];
  out.rowwise() += params_[fb + 3].row(0);
  return out;
}

BackwardResult Backbone::backward(const ForwardCache& c, const Matrix& output_grad) const {
  require_shape(output_grad, c.input.rows(), config_.output_dim, "backbone backward: output_grad");
  BackwardResult r;
  r.params = zeros_like(params_);
  Gradients& g = r.params;
  const int w = config_.width;
  const int tw = config_.time_width;
  const int heads = config_.num_heads;
  const int head_dim = w / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(head_dim));

  const auto fb = final_base(config_);
  g[fb + 2].noalias() = c.hf.transpose() * output_grad;
  g[fb + 3] = output_grad.colwise().sum();
  Matrix dhf = output_grad * params_[fb + 2].transpose();
  Matrix grad_h = layer_norm_backward(dhf, params_[fb], c.ln_final, g[fb], g[fb + 1]);

  for (int b = config_.num_blocks - 1; b >= 0; --b) {
    const auto base = block_base(b);
    const BlockCache& bc = c.blocks[static_cast<std::size_t>(b)];

    // FFN residual branch.
    g[base + kW2].noalias() = bc.a1.transpose() * grad_h;
    g[base + kB2] = grad_h.colwise().sum();
    Matrix da1 = grad_h * params_[base + kW2].transpose();
    Matrix dz1 = silu_backward(bc.z1, da1);
    g[base + kW1].noalias() = bc.u2.transpose() * dz1;
    g[base + kB1] = dz1.colwise().sum();
    Matrix du2 = dz1 * params_[base + kW1].transpose();
    grad_h += layer_norm_backward(du2, params_[base + kLn2G], bc.ln2, g[base + kLn2G], g[base + kLn2B]);

    // Attention residual branch.
    g[base + kWo].noalias() = bc.attn.transpose() * grad_h;
    g[base + kBo] = grad_h.colwise().sum();
    Matrix dattn = grad_h * params_[base + kWo].transpose();
    Matrix du1;
    if (config_.attention == AttentionScope::kSequence) {
      Matrix dq(bc.q.rows(), w), dk(bc.k.rows(), w), dv(bc.v.rows(), w);
      for (int hd = 0; hd < heads; ++hd) {
        const Matrix& a = bc.probs[static_cast<std::size_t>(hd)];
        const auto d_out = dattn.middleCols(hd * head_dim, head_dim);
        Matrix dprob = d_out * bc.v.middleCols(hd * head_dim, head_dim).transpose();
        dv.middleCols(hd * head_dim, head_dim).noalias() = a.transpose() * d_out;
        const Eigen::VectorXd rowdot = (dprob.array() * a.array()).rowwise().sum();
        Matrix ds = a.array() * (dprob.colwise() - rowdot).array();
        dq.middleCols(hd * head_dim, head_dim).noalias() = (ds * bc.k.middleCols(hd * head_dim, head_dim)) * scale;
        dk.middleCols(hd * head_dim, head_dim).noalias() = (ds.transpose() * bc.q.middleCols(hd * head_dim, head_dim)) * scale;
      }
      g[base + kWq].noalias() = bc.u1.transpose() * dq;
      g[base + kWk].noalias() = bc.u1.transpose() * dk;
      g[base + kWv].noalias() = bc.u1.transpose() * dv;
      du1 = dq * params_[base + kWq].transpose();
      du1.noalias() += dk * params_[base + kWk].transpose();
      du1.noalias() += dv * params_[base + kWv].transpose();
    } else {
      g[base + kWv].noalias() = bc.u1.transpose() * dattn;
      du1 = dattn * params_[base + kWv].transpose();
    }
    grad_h += layer_norm_backward(du1, params_[base + kLn1G], bc.ln1, g[base + kLn1G], g[base + kLn1B]);
  }

  const auto d_in = grad_h.leftCols(w - tw);
  g[kInW].noalias() = c.input.transpose() * d_in;
  g[kInB] = d_in.colwise().sum();
  const RowVector d_time = grad_h.rightCols(tw).colwise().sum();
  g[kTimeW].noalias() = c.time_features.transpose() * d_time;
  g[kTimeB] = d_time;
  r.input = d_in * params_[kInW].transpose();

  for (std::size_t i = 0; i < g.size(); ++i) {
    if (!g[i].allFinite()) {
      throw DivergenceError("non-finite gradient in " + params_.entries[i].name);
    }
  }
  return r;
}

BackwardResult Backbone::backward(const Matrix& input, double t, const Matrix& output_grad) const {
  ForwardCache cache;
  forward(input, t, &cache);
  return backward(cache, output_grad);
}

}  // namespace iclvc
