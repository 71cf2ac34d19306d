// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <vector>

#include "doctest.h"
#include "iclvc/backbone.hpp"
#include "test_util.hpp"

using namespace iclvc;
using iclvc::testing::numeric_gradient;
using iclvc::testing::randomize;
using iclvc::testing::relative_error;

namespace {

using Grid = std::vector<std::vector<double>>;

Grid to_grid(const Matrix& m) {
  Grid g(static_cast<std::size_t>(m.rows()), std::vector<double>(static_cast<std::size_t>(m.cols())));
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) g[i][j] = m(i, j);
  return g;
}

Grid matmul(const Grid& a, const Matrix& w) {
  Grid out(a.size(), std::vector<double>(static_cast<std::size_t>(w.cols()), 0.0));
  for (std::size_t i = 0; i < a.size(); ++i)
    for (Eigen::Index j = 0; j < w.cols(); ++j)
      for (std::size_t k = 0; k < a[i].size(); ++k) out[i][j] += a[i][k] * w(static_cast<Eigen::Index>(k), j);
  return out;
}

void add_bias(Grid& a, const Matrix& b) {
  for (auto& row : a)
    for (std::size_t j = 0; j < row.size(); ++j) row[j] += b(0, static_cast<Eigen::Index>(j));
}

Grid layer_norm(const Grid& x, const Matrix& g, const Matrix& b) {
  Grid out = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    double mean = 0.0, var = 0.0;
    for (double v : x[i]) mean += v;
    mean /= static_cast<double>(x[i].size());
    for (double v : x[i]) var += (v - mean) * (v - mean);
    var /= static_cast<double>(x[i].size());
    for (std::size_t j = 0; j < x[i].size(); ++j) {
      const auto jj = static_cast<Eigen::Index>(j);
      out[i][j] = (x[i][j] - mean) / std::sqrt(var + 1e-5) * g(0, jj) + b(0, jj);
    }
  }
  return out;
}

// Scalar-loop re-implementation of the backbone forward pass, written from
// the architecture description rather than from the library code.
Matrix oracle_forward(const Backbone& net, const Matrix& input, double t) {
  const BackboneConfig& c = net.config();
  const NetworkParams& p = net.params();
  auto P = [&](const std::string& name) -> const Matrix& { return p[p.index_of(name)]; };
  const std::size_t T = static_cast<std::size_t>(input.rows());
  const int w = c.width, tw = c.time_width;

  // time features: [sin(1000 t f_i) | cos(1000 t f_i)], f_i = 10000^(-i/half)
  const int half = c.time_embed_dim / 2;
  Grid tf(1, std::vector<double>(static_cast<std::size_t>(c.time_embed_dim)));
  for (int i = 0; i < half; ++i) {
    const double f = std::pow(10000.0, -static_cast<double>(i) / half);
    tf[0][i] = std::sin(1000.0 * t * f);
    tf[0][half + i] = std::cos(1000.0 * t * f);
  }
  Grid tp = matmul(tf, P("time.w"));
  add_bias(tp, P("time.b"));

  Grid xin = matmul(to_grid(input), P("in.w"));
  add_bias(xin, P("in.b"));
  Grid h(T, std::vector<double>(static_cast<std::size_t>(w)));
  for (std::size_t r = 0; r < T; ++r) {
    for (int j = 0; j < w - tw; ++j) h[r][j] = xin[r][j];
    for (int j = 0; j < tw; ++j) h[r][w - tw + j] = tp[0][j];
    if (c.frame_positions) {
      for (int j = 0; j < w; ++j) {
        const int pair = j - j % 2;
        const double ang = static_cast<double>(r) / std::pow(10000.0, static_cast<double>(pair) / w);
        h[r][j] += j % 2 == 0 ? std::sin(ang) : std::cos(ang);
      }
    }
  }

  const int heads = c.num_heads, hd = w / heads;
  for (int b = 0; b < c.num_blocks; ++b) {
    const std::string pre = "block" + std::to_string(b) + ".";
    const Grid u = layer_norm(h, P(pre + "ln1.g"), P(pre + "ln1.b"));
    const Grid q = matmul(u, P(pre + "attn.wq"));
    const Grid k = matmul(u, P(pre + "attn.wk"));
    const Grid v = matmul(u, P(pre + "attn.wv"));
    Grid attn(T, std::vector<double>(static_cast<std::size_t>(w), 0.0));
    if (c.attention == AttentionScope::kFrame) {
      attn = v;
    } else {
      for (int head = 0; head < heads; ++head) {
        for (std::size_t i = 0; i < T; ++i) {
          std::vector<double> s(T);
          double mx = -1e300;
          for (std::size_t j = 0; j < T; ++j) {
            double dot = 0.0;
            for (int d = 0; d < hd; ++d) dot += q[i][head * hd + d] * k[j][head * hd + d];
            s[j] = dot / std::sqrt(static_cast<double>(hd));
            mx = std::max(mx, s[j]);
          }
          double z = 0.0;
          for (auto& e : s) z += (e = std::exp(e - mx));
          for (std::size_t j = 0; j < T; ++j)
            for (int d = 0; d < hd; ++d) attn[i][head * hd + d] += s[j] / z * v[j][head * hd + d];
        }
      }
    }
    Grid o = matmul(attn, P(pre + "attn.wo"));
    add_bias(o, P(pre + "attn.bo"));
    for (std::size_t r = 0; r < T; ++r)
      for (int j = 0; j < w; ++j) h[r][j] += o[r][j];
    const Grid u2 = layer_norm(h, P(pre + "ln2.g"), P(pre + "ln2.b"));
    Grid z = matmul(u2, P(pre + "ffn.w1"));
    add_bias(z, P(pre + "ffn.b1"));
    for (auto& row : z)
      for (auto& e : row) e = e / (1.0 + std::exp(-e));
    Grid f = matmul(z, P(pre + "ffn.w2"));
    add_bias(f, P(pre + "ffn.b2"));
    for (std::size_t r = 0; r < T; ++r)
      for (int j = 0; j < w; ++j) h[r][j] += f[r][j];
  }
  Grid out = matmul(layer_norm(h, P("final.ln.g"), P("final.ln.b")), P("out.w"));
  add_bias(out, P("out.b"));
  Matrix m(static_cast<Eigen::Index>(T), c.output_dim);
  for (std::size_t i = 0; i < T; ++i)
    for (int j = 0; j < c.output_dim; ++j) m(static_cast<Eigen::Index>(i), j) = out[i][j];
  return m;
}

BackboneConfig small_config(int in, int out, AttentionScope scope, bool positions) {
  BackboneConfig c;
  c.input_dim = in;
  c.output_dim = out;
  c.width = 8;
  c.time_embed_dim = 6;
  c.time_width = 2;
  c.num_blocks = 2;
  c.num_heads = 2;
  c.ffn_dim = 10;
  c.attention = scope;
  c.frame_positions = positions;
  return c;
}

}  // namespace

TEST_CASE("time embedding follows the sinusoid formula") {
  const RowVector e0 = sinusoidal_time_embed(0.0, 4);
  CHECK(e0(0) == 0.0);
  CHECK(e0(1) == 0.0);
  CHECK(e0(2) == 1.0);
  CHECK(e0(3) == 1.0);
  // dim 4: half 2, frequencies 1 and 10000^(-1/2) = 0.01
  const RowVector e = sinusoidal_time_embed(0.5, 4);
  CHECK(e(0) == doctest::Approx(std::sin(500.0)).epsilon(1e-12));
  CHECK(e(1) == doctest::Approx(std::sin(5.0)).epsilon(1e-12));
  CHECK(e(2) == doctest::Approx(std::cos(500.0)).epsilon(1e-12));
  CHECK(e(3) == doctest::Approx(std::cos(5.0)).epsilon(1e-12));
  CHECK_THROWS_AS(sinusoidal_time_embed(0.5, 3), std::invalid_argument);
  CHECK_THROWS_AS(sinusoidal_time_embed(1.5, 4), std::invalid_argument);
}

TEST_CASE("forward matches the scalar-loop oracle") {
  Rng rng(101);
  for (auto scope : {AttentionScope::kSequence, AttentionScope::kFrame}) {
    for (bool positions : {true, false}) {
      const BackboneConfig c = small_config(5, 3, scope, positions);
      Backbone net = Backbone::initialize(c, rng);
      randomize(net.params(), rng);
      const Matrix x = standard_normal(7, 5, rng);
      for (double t : {0.0, 0.37, 1.0}) {
        CHECK(relative_error(net.forward(x, t), oracle_forward(net, x, t)) < 1e-12);
      }
    }
  }
}

TEST_CASE("zero-initialized output projection gives a zero field") {
  Rng rng(3);
  const Backbone net = Backbone::initialize(small_config(4, 3, AttentionScope::kSequence, true), rng);
  const Matrix y = net.forward(standard_normal(6, 4, rng), 0.4);
  CHECK(y.rows() == 6);
  CHECK(y.cols() == 3);
  CHECK(y.isZero(0.0));
}

TEST_CASE("gradients match central finite differences") {
  Rng rng(7);
  int configs = 0;
  for (auto scope : {AttentionScope::kSequence, AttentionScope::kFrame}) {
    for (bool positions : {true, false}) {
      const BackboneConfig c = small_config(3, 2, scope, positions);
      Backbone net = Backbone::initialize(c, rng);
      randomize(net.params(), rng);
      Matrix x = standard_normal(4, 3, rng);
      const Matrix weights = standard_normal(4, 2, rng);
      const double t = 0.3;
      auto loss = [&] { return (net.forward(x, t).array() * weights.array()).sum(); };
      const BackwardResult g = net.backward(x, t, weights);
      for (std::size_t i = 0; i < net.params().size(); ++i) {
        CAPTURE(net.params().entries[i].name);
        const Matrix num = numeric_gradient(net.params()[i], loss);
        CHECK(relative_error(g.params[i], num) < 1e-6);
      }
      CHECK(relative_error(g.input, numeric_gradient(x, loss)) < 1e-6);
      ++configs;
    }
  }
  CHECK(configs == 4);
}

TEST_CASE("frame scope keeps rows independent") {
  Rng rng(5);
  Backbone net = Backbone::initialize(small_config(3, 2, AttentionScope::kFrame, false), rng);
  randomize(net.params(), rng);
  Matrix x = standard_normal(5, 3, rng);
  const Matrix y = net.forward(x, 0.5);
  x.row(0) = standard_normal(1, 3, rng);
  const Matrix y2 = net.forward(x, 0.5);
  CHECK(y.bottomRows(4) == y2.bottomRows(4));
  CHECK(y.row(0) != y2.row(0));
}

TEST_CASE("sequence attention without positions is permutation-equivariant") {
  Rng rng(9);
  Backbone net = Backbone::initialize(small_config(3, 2, AttentionScope::kSequence, false), rng);
  randomize(net.params(), rng);
  const Matrix x = standard_normal(5, 3, rng);
  Eigen::PermutationMatrix<Eigen::Dynamic> perm(5);
  perm.indices() << 3, 0, 4, 1, 2;
  const Matrix a = perm * net.forward(x, 0.2);
  const Matrix b = net.forward(perm * x, 0.2);
  CHECK(relative_error(a, b) < 1e-12);
}

TEST_CASE("bad shapes and non-finite gradients are rejected") {
  Rng rng(2);
  const Backbone net = Backbone::initialize(small_config(3, 2, AttentionScope::kSequence, true), rng);
  CHECK_THROWS_AS(net.forward(Matrix::Zero(4, 5), 0.5), ShapeError);
  CHECK_THROWS_AS(net.forward(Matrix::Zero(4, 3), -0.1), std::invalid_argument);
  Matrix g = Matrix::Zero(4, 2);
  g(1, 1) = std::nan("");
  CHECK_THROWS_AS(net.backward(Matrix::Zero(4, 3), 0.5, g), DivergenceError);
  BackboneConfig bad = small_config(3, 2, AttentionScope::kSequence, true);
  bad.num_heads = 3;
  CHECK_THROWS(bad.validate());
}

TEST_CASE("config survives a JSON round trip") {
  BackboneConfig c = small_config(5, 4, AttentionScope::kFrame, false);
  const BackboneConfig d = BackboneConfig::from_json(c.to_json());
  CHECK(d.to_json() == c.to_json());
}
