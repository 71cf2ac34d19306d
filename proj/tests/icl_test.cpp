// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <cmath>
#include <vector>

#include "doctest.h"
#include "iclvc/flow.hpp"
#include "iclvc/icl.hpp"
#include "test_util.hpp"

using namespace iclvc;

namespace {

struct Window {
  int start = -1;
  int length = 0;
  int runs = 0;  // number of maximal unmasked runs
};

Window unmasked_window(const MaskSpec& m) {
  Window w;
  for (std::size_t i = 0; i < m.size(); ++i) {
    if (m[i]) continue;
    if (i == 0 || m[i - 1]) {
      ++w.runs;
      if (w.start < 0) w.start = static_cast<int>(i);
    }
    ++w.length;
  }
  return w;
}

// Two-sided one-sample Kolmogorov-Smirnov statistic against U[0, 1].
double ks_uniform(std::vector<double> u) {
  std::sort(u.begin(), u.end());
  const double n = static_cast<double>(u.size());
  double d = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    d = std::max(d, std::max(static_cast<double>(i + 1) / n - u[i], u[i] - static_cast<double>(i) / n));
  }
  return d;
}

}  // namespace

TEST_CASE("training mask has one unmasked window of 2 to 3 seconds") {
  Rng rng(1);
  const MaskPolicy policy;
  CHECK(policy.min_unmasked_frames() == 100);
  CHECK(policy.max_unmasked_frames() == 150);
  for (int n : {151, 200, 347, 500}) {
    for (int rep = 0; rep < 200; ++rep) {
      const MaskSpec m = sample_training_mask(n, policy, rng);
      const Window w = unmasked_window(m);
      REQUIRE(m.size() == static_cast<std::size_t>(n));
      CHECK(w.runs == 1);
      CHECK(w.length >= 100);
      CHECK(w.length <= 150);
    }
  }
}

TEST_CASE("window length is uniform over the integer frame counts") {
  Rng rng(2);
  const MaskPolicy policy;
  const int bins = 51, draws = 20400;
  std::vector<int> counts(bins, 0);
  for (int i = 0; i < draws; ++i) ++counts[static_cast<std::size_t>(unmasked_window(sample_training_mask(400, policy, rng)).length - 100)];
  const double expected = static_cast<double>(draws) / bins;
  double chi2 = 0.0;
  for (int c : counts) chi2 += (c - expected) * (c - expected) / expected;
  // chi-square critical value, 50 degrees of freedom, p = 0.001
  CHECK(chi2 < 86.66);
}

TEST_CASE("window placement is uniform") {
  Rng rng(3);
  const MaskPolicy policy;
  std::vector<double> u;
  const int n = 400, draws = 5000;
  for (int i = 0; i < draws; ++i) {
    const Window w = unmasked_window(sample_training_mask(n, policy, rng));
    // continuity-corrected position of the start within its admissible range
    u.push_back((w.start + 0.5) / (n - w.length + 1));
  }
  // KS critical value at the 1% level
  CHECK(ks_uniform(u) < 1.63 / std::sqrt(static_cast<double>(draws)));
}

TEST_CASE("short utterances keep half their frames as context") {
  Rng rng(4);
  const MaskPolicy policy;
  for (int n : {2, 7, 80, 100}) {
    const Window w = unmasked_window(sample_training_mask(n, policy, rng));
    CHECK(w.length == n / 2);
    CHECK(w.runs == 1);
  }
  for (int rep = 0; rep < 50; ++rep) {
    const Window w = unmasked_window(sample_training_mask(120, policy, rng));
    CHECK(w.length >= 100);
    CHECK(w.length <= 119);  // at least one frame stays masked
  }
  CHECK_THROWS_AS(sample_training_mask(1, policy, rng), std::invalid_argument);
}

TEST_CASE("apply_mask noises masked rows and copies the rest") {
  Rng rng(5);
  const Matrix mel = Matrix::Constant(2000, 4, 7.0);
  MaskSpec m = MaskSpec::filled(2000, true);
  for (int i = 0; i < 10; ++i) m.flags[static_cast<std::size_t>(i)] = false;
  const Matrix out = apply_mask(mel, m, rng);
  CHECK(out.topRows(10) == mel.topRows(10));
  const Matrix noise = out.bottomRows(1990);
  const double mean = noise.mean();
  const double var = (noise.array() - mean).square().mean();
  CHECK(std::abs(mean) < 0.05);
  CHECK(std::abs(var - 1.0) < 0.05);
  CHECK_THROWS_AS(apply_mask(mel, MaskSpec::filled(3, true), rng), ShapeError);
}

TEST_CASE("inference prompt stacks reference then source") {
  Rng rng(6);
  const Matrix ref_mel = standard_normal(5, 3, rng);
  const Matrix ref_s = standard_normal(5, 2, rng), src_s = standard_normal(4, 2, rng);
  const Matrix ref_p = standard_normal(5, 1, rng), src_p = standard_normal(4, 1, rng);
  const InferencePrompt p = build_inference_prompt(ref_mel, ref_s, src_s, &ref_p, &src_p, rng);
  CHECK(p.reference_frames == 5);
  CHECK(p.source_frames() == 4);
  CHECK(p.s_concat.topRows(5) == ref_s);
  CHECK(p.s_concat.bottomRows(4) == src_s);
  CHECK(p.m_init.topRows(5) == ref_mel);
  CHECK(p.p_concat->bottomRows(4) == src_p);
  for (std::size_t i = 0; i < 9; ++i) CHECK(p.mask[i] == (i >= 5));

  const Matrix integrated = standard_normal(9, 3, rng);
  CHECK(extract_generated(p, integrated) == integrated.bottomRows(4));
  CHECK_THROWS_AS(extract_generated(p, integrated.topRows(8)), ShapeError);

  CHECK_THROWS_AS(build_inference_prompt(ref_mel, ref_s, src_s, &ref_p, nullptr, rng), std::invalid_argument);
  CHECK_THROWS_AS(build_inference_prompt(ref_mel, ref_s.topRows(4), src_s, nullptr, nullptr, rng), ShapeError);
  CHECK_THROWS_AS(build_inference_prompt(Matrix(0, 3), Matrix(0, 2), src_s, nullptr, nullptr, rng), std::invalid_argument);
}

TEST_CASE("integrating a prompt leaves the reference rows untouched") {
  Rng rng(7);
  BackboneConfig c;
  c.input_dim = 2 + 3;
  c.output_dim = 3;
  c.width = 8;
  c.time_embed_dim = 4;
  c.time_width = 2;
  c.num_blocks = 1;
  c.num_heads = 2;
  c.ffn_dim = 8;
  Backbone net = Backbone::initialize(c, rng);
  iclvc::testing::randomize(net.params(), rng);
  const Matrix ref_mel = standard_normal(6, 3, rng);
  const InferencePrompt p =
      build_inference_prompt(ref_mel, standard_normal(6, 2, rng), standard_normal(5, 2, rng), nullptr, nullptr, rng);
  const Matrix out = integrate(net, p.m_init, p.s_concat, nullptr, p.mask, p.m_init, FlowConfig{});
  CHECK(out.topRows(6) == ref_mel);
  CHECK(extract_generated(p, out).rows() == 5);
}
