// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "iclvc/tensor.hpp"
#include "json.hpp"

namespace iclvc {

// kSequence: bidirectional self-attention over all frames of the input.
// kFrame: every row is an independent one-frame sequence (attention reduces
// to the value projection), used when rows are unrelated samples.
enum class AttentionScope { kSequence, kFrame };

struct BackboneConfig {
  int input_dim = 0;
  int output_dim = 0;
  int width = 64;
  int time_embed_dim = 32;  // sinusoidal features of t
  int time_width = 16;      // projected time channels, concatenated after the input projection
  int num_blocks = 2;
  int num_heads = 4;
  int ffn_dim = 128;
  AttentionScope attention = AttentionScope::kSequence;
  bool frame_positions = false;  // absolute sinusoidal positions added after the input projection

  void validate() const;
  nlohmann::json to_json() const;
  static BackboneConfig from_json(const nlohmann::json& j);
};

struct NamedParam {
  std::string name;
  Matrix value;
};

// Ordered parameter list. Gradients are vectors of matrices aligned with it.
struct NetworkParams {
  std::vector<NamedParam> entries;

  std::size_t size() const { return entries.size(); }
  Matrix& operator[](std::size_t i) { return entries[i].value; }
  const Matrix& operator[](std::size_t i) const { return entries[i].value; }
  std::size_t index_of(const std::string& name) const;
  std::size_t scalar_count() const;
};

using Gradients = std::vector<Matrix>;

Gradients zeros_like(const NetworkParams& params);

// [sin(s t w_0) .. sin(s t w_{n-1}), cos(s t w_0) .. cos(s t w_{n-1})] with
// n = dim/2, w_i = 10000^(-i/n), s = 1000.
RowVector sinusoidal_time_embed(double t, int dim);

// Fixed sinusoidal encoding of frame index, interleaved sin/cos per pair.
Matrix frame_position_encoding(Eigen::Index rows, int width);

struct LayerNormCache {
  Matrix xhat;
  Eigen::VectorXd rstd;
};

struct BlockCache {
  Matrix h_in;
  LayerNormCache ln1;
  Matrix u1, q, k, v;
  std::vector<Matrix> probs;  // per head, kSequence only
  Matrix attn;                // concatenated head outputs
  Matrix h_mid;
  LayerNormCache ln2;
  Matrix u2, z1, a1;
};

struct ForwardCache {
  Matrix input;
  double t = 0.0;
  RowVector time_features;
  std::vector<BlockCache> blocks;
  Matrix h_last;
  LayerNormCache ln_final;
  Matrix hf;
};

struct BackwardResult {
  Gradients params;
  Matrix input;
};

// Encoder-only Transformer approximating the conditional vector field:
// input projection, concatenated time channels, pre-norm attention/FFN
// blocks, and a final projection to the mel dimension.
class Backbone {
 public:
  Backbone() = default;
  Backbone(BackboneConfig config, NetworkParams params);

  // Uniform(+-1/sqrt(fan_in)) projections; zero output projection.
  static Backbone initialize(const BackboneConfig& config, Rng& rng);

  const BackboneConfig& config() const { return config_; }
  const NetworkParams& params() const { return params_; }
  NetworkParams& params() { return params_; }

  Matrix forward(const Matrix& input, double t, ForwardCache* cache = nullptr) const;

  // Throws DivergenceError on non-finite gradients.
  BackwardResult backward(const ForwardCache& cache, const Matrix& output_grad) const;
  BackwardResult backward(const Matrix& input, double t, const Matrix& output_grad) const;

 private:
  void check_layout() const;

  BackboneConfig config_;
  NetworkParams params_;
};

}  // namespace iclvc
