// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <fstream>
#include <iterator>

#include "doctest.h"
#include "iclvc/archive.hpp"
#include "iclvc/train.hpp"
#include "test_util.hpp"

using namespace iclvc;
using iclvc::testing::numeric_gradient;
using iclvc::testing::relative_error;

namespace {

struct Setup {
  SynthWorld world;
  Corpus corpus;
  Codebook codebook;

  Setup() {
    CorpusSpec spec;
    spec.num_speakers = 2;
    spec.utterances_per_speaker = 2;
    spec.min_seconds = 1.0;
    spec.max_seconds = 1.4;
    spec.seed = 12;
    corpus = generate_corpus(spec, world);
    Matrix feats(0, world.config().feat_dim);
    for (const auto& u : corpus.utterances) {
      Matrix grown(feats.rows() + u.frames(), feats.cols());
      grown << feats, u.ssl.at("hubert_l9");
      feats = grown;
    }
    codebook = fit_kmeans(feats, 8, 30, 2, 4).codebook;
  }

  VcModel model(Variant v, std::uint64_t seed = 1) const {
    ModelConfig mc;
    mc.variant = v;
    mc.prosody_table_dim = 3;
    mc.prosody_embed_dim = 5;
    mc.backbone.width = 12;
    mc.backbone.time_embed_dim = 6;
    mc.backbone.time_width = 4;
    mc.backbone.num_blocks = 1;
    mc.backbone.num_heads = 2;
    mc.backbone.ffn_dim = 16;
    Rng rng(seed);
    return VcModel::initialize(mc, codebook, world.config().mel_dim, rng);
  }
};

std::vector<char> read_bytes(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

}  // namespace

TEST_CASE("first Adam step moves each weight by the learning rate against its gradient") {
  Matrix p(1, 3);
  p << 1.0, -2.0, 0.5;
  Matrix g(1, 3);
  g << 0.3, -4.0, 1e-3;
  Adam adam(0.01);
  adam.step({&p}, {g});
  // m_hat = g, v_hat = g^2, so the update is lr * g / (|g| + eps)
  for (int j = 0; j < 3; ++j) {
    const double want = std::array<double, 3>{1.0, -2.0, 0.5}[j] - 0.01 * g(0, j) / (std::abs(g(0, j)) + 1e-8);
    CHECK(p(0, j) == doctest::Approx(want).epsilon(1e-14));
  }
  CHECK(adam.steps() == 1);
  CHECK_THROWS_AS(adam.step({&p}, {Matrix::Zero(2, 2)}), ShapeError);
}

TEST_CASE("global-norm clipping") {
  std::vector<Matrix> g = {Matrix::Constant(1, 1, 3.0), Matrix::Constant(1, 1, 4.0)};
  CHECK(clip_global_norm(g, 1.0) == 5.0);
  CHECK(g[0](0, 0) == doctest::Approx(0.6));
  CHECK(g[1](0, 0) == doctest::Approx(0.8));
  std::vector<Matrix> small = {Matrix::Constant(1, 2, 0.1)};
  const Matrix before = small[0];
  clip_global_norm(small, 1.0);
  CHECK(small[0] == before);
}

TEST_CASE("variants own only their prosody parameters") {
  const Setup s;
  auto names = [](const VcModel& m) {
    std::vector<std::string> out;
    for (const auto& [n, p] : m.trainable()) out.push_back(n);
    return out;
  };
  const auto icl = names(s.model(Variant::kIcl));
  for (const auto& n : icl) CHECK(n.find("prosody") == std::string::npos);
  CHECK(icl.back() == "codebook/embed_table");
  const auto pe = names(s.model(Variant::kIclPitchEnergy));
  CHECK(pe.size() == icl.size() + 2);
  CHECK(pe.back() == "prosody/energy_table");
  CHECK(names(s.model(Variant::kIclProsodyEmbed)).size() == icl.size());

  CHECK(s.model(Variant::kIcl).backbone().config().input_dim == 4 + 20);
  CHECK(s.model(Variant::kIclPitchEnergy).backbone().config().input_dim == 4 + 20 + 6);
  CHECK(s.model(Variant::kIclProsodyEmbed).backbone().config().input_dim == 4 + 20 + 5);
  CHECK_THROWS_AS(parse_variant("icl+emotion"), std::invalid_argument);
  CHECK(parse_variant(to_string(Variant::kIclProsodyEmbed)) == Variant::kIclProsodyEmbed);
}

TEST_CASE("per-utterance gradients match finite differences end to end") {
  const Setup s;
  for (Variant v : {Variant::kIclPitchEnergy, Variant::kIclProsodyEmbed}) {
    CAPTURE(to_string(v));
    VcModel m = s.model(v, 4);
    Rng init(9);
    for (auto& [name, p] : m.trainable()) {
      if (name == "backbone/out.w") *p = 0.3 * standard_normal(p->rows(), p->cols(), init);
    }
    const ToyUtterance& u = s.corpus.utterances[1];
    const Rng seed(77);
    auto loss = [&] {
      Rng r = seed;
      return sample_gradient(m, s.world, u, r).loss;
    };
    Rng r = seed;
    const SampleGradient g = sample_gradient(m, s.world, u, r);
    auto params = m.trainable();
    REQUIRE(g.grads.size() == params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
      const std::string& name = params[i].first;
      CAPTURE(name);
      CHECK(relative_error(g.grads[i], numeric_gradient(*params[i].second, loss)) < 1e-6);
    }
  }
}

TEST_CASE("training is deterministic and reduces the loss") {
  const Setup s;
  TrainConfig tc;
  tc.epochs = 12;
  tc.batch_size = 2;
  tc.learning_rate = 3e-3;
  VcModel a = s.model(Variant::kIcl);
  VcModel b = s.model(Variant::kIcl);
  int calls = 0;
  const auto log = train(a, s.world, s.corpus.utterances, tc, [&](const EpochStats& st, const VcModel&) {
    CHECK(st.epoch == ++calls);
  });
  train(b, s.world, s.corpus.utterances, tc);
  CHECK(calls == 12);
  auto pa = a.trainable();
  auto pb = b.trainable();
  for (std::size_t i = 0; i < pa.size(); ++i) CHECK(*pa[i].second == *pb[i].second);
  const double early = (log[0].mean_loss + log[1].mean_loss) / 2.0;
  const double late = (log[10].mean_loss + log[11].mean_loss) / 2.0;
  CHECK(late < early);
  CHECK_THROWS_AS(train(a, s.world, {}, tc), std::invalid_argument);
}

TEST_CASE("checkpoints round-trip byte for byte") {
  const Setup s;
  const auto dir = iclvc::testing::temp_dir("ckpt");
  for (Variant v : {Variant::kIcl, Variant::kIclPitchEnergy, Variant::kIclProsodyEmbed}) {
    const VcModel m = s.model(v);
    save_checkpoint(dir / "a.ckpt", m, {{"note", "x"}});
    nlohmann::json extra;
    const VcModel back = load_checkpoint(dir / "a.ckpt", &extra);
    CHECK(extra["note"] == "x");
    save_checkpoint(dir / "b.ckpt", back, extra);
    CHECK(read_bytes(dir / "a.ckpt") == read_bytes(dir / "b.ckpt"));
    CHECK(back.variant() == v);

    const ToyUtterance& src = s.corpus.utterances[0];
    const ToyUtterance& ref = s.corpus.utterances[2];
    Rng r1(5), r2(5);
    CHECK(convert(m, s.world, src, ref, r1).generated == convert(back, s.world, src, ref, r2).generated);
  }
  const Archive a = load_archive(dir / "a.ckpt", "checkpoint", kCheckpointVersion);
  save_checkpoint(dir / "icl.ckpt", s.model(Variant::kIcl));
  for (const auto& n : load_archive(dir / "icl.ckpt", "checkpoint", kCheckpointVersion).names()) {
    CHECK(n.find("prosody") == std::string::npos);
  }
  Archive old = a;
  old.schema_version = kCheckpointVersion + 1;
  save_archive(dir / "old.ckpt", old);
  const std::string found = "found " + std::to_string(kCheckpointVersion + 1);
  CHECK_THROWS_WITH_AS(load_checkpoint(dir / "old.ckpt"), doctest::Contains(found.c_str()), FormatError);
  std::filesystem::remove_all(dir);
}

TEST_CASE("conversion keeps source length and the reference prompt") {
  const Setup s;
  const VcModel m = s.model(Variant::kIclPitchEnergy);
  Rng rng(3);
  for (std::size_t i = 0; i < s.corpus.utterances.size(); ++i) {
    const ToyUtterance& src = s.corpus.utterances[i];
    const ToyUtterance& ref = s.corpus.utterances[(i + 1) % s.corpus.utterances.size()];
    const ConversionResult r = convert(m, s.world, src, ref, rng);
    CHECK(r.generated.rows() == src.frames());
    CHECK(r.integrated.topRows(ref.frames()) == ref.mel);
  }
}
