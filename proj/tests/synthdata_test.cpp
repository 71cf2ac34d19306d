// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <set>

#include "doctest.h"
#include "iclvc/archive.hpp"
#include "iclvc/synthdata.hpp"
#include "test_util.hpp"

using namespace iclvc;
using iclvc::testing::relative_error;

namespace {

CorpusSpec tiny_spec() {
  CorpusSpec s;
  s.num_speakers = 3;
  s.utterances_per_speaker = 2;
  s.min_seconds = 2.0;
  s.max_seconds = 3.0;
  s.seed = 4;
  return s;
}

}  // namespace

TEST_CASE("world subspaces are mutually orthonormal") {
  const SynthWorld world;
  const WorldConfig& wc = world.config();
  Matrix all(wc.mel_dim, wc.content_dim + wc.timbre_dim + 2);
  all << world.content_basis(), world.timbre_basis(), world.pitch_direction().transpose(),
      world.energy_direction().transpose();
  const Matrix gram = all.transpose() * all;
  CHECK((gram - Matrix::Identity(gram.rows(), gram.cols())).cwiseAbs().maxCoeff() < 1e-12);
  CHECK(world.symbol_content().row(0).isZero(0.0));
}

TEST_CASE("generation is a pure function of the seeds") {
  const SynthWorld world;
  const Corpus a = generate_corpus(tiny_spec(), world);
  const Corpus b = generate_corpus(tiny_spec(), world);
  REQUIRE(a.utterances.size() == 6);
  for (std::size_t i = 0; i < a.utterances.size(); ++i) {
    CHECK(a.utterances[i].id == b.utterances[i].id);
    CHECK(a.utterances[i].mel == b.utterances[i].mel);
    CHECK(a.utterances[i].ssl.at("wav2vec_l9") == b.utterances[i].ssl.at("wav2vec_l9"));
  }
  CHECK(a.utterances[0].id == "spk000_u000");
  CHECK(a.utterances[5].id == "spk002_u001");
  CorpusSpec other = tiny_spec();
  other.seed = 5;
  CHECK(generate_corpus(other, world).utterances[0].mel != a.utterances[0].mel);
  WorldConfig wc;
  wc.seed = 1;
  CHECK(SynthWorld(wc).content_basis() != world.content_basis());
}

TEST_CASE("utterances respect duration, segment and speaker ranges") {
  const SynthWorld world;
  CorpusSpec spec = tiny_spec();
  spec.num_speakers = 6;
  spec.utterances_per_speaker = 4;
  spec.min_seconds = 4.0;
  spec.max_seconds = 10.0;
  const Corpus c = generate_corpus(spec, world);
  for (const auto& sp : c.speakers) {
    CHECK(sp.f0_mean >= 100.0);
    CHECK(sp.f0_mean <= 240.0);
    CHECK(sp.f0_range >= 0.25);
    CHECK(sp.f0_range <= 0.6);
  }
  for (const auto& u : c.utterances) {
    CHECK(u.frames() >= 200);
    CHECK(u.frames() <= 500);
    CHECK(u.content.front() == 0);
    CHECK(u.content.back() == 0);
    CHECK(u.ssl.size() == 2);
    CHECK(u.ssl.at("hubert_l9").rows() == u.frames());
    CHECK(u.timbre == c.speakers[static_cast<std::size_t>(u.speaker)].timbre);
    // interior voiced segments last 4..12 frames; silence is unvoiced
    std::size_t start = 0;
    for (std::size_t i = 1; i <= u.content.size(); ++i) {
      if (i < u.content.size() && u.content[i] == u.content[start]) continue;
      const bool interior = start > 0 && i < u.content.size();
      const bool truncated = i == u.content.size() || u.content[i] == 0;
      if (u.content[start] != 0 && interior && !truncated) {
        CHECK(i - start >= 4);
        CHECK(i - start <= 12);
      }
      start = i;
    }
    for (std::size_t i = 0; i < u.content.size(); ++i) CHECK((u.pitch[i] > 0.0) == (u.content[i] != 0));
  }
}

TEST_CASE("probes invert the generator") {
  const SynthWorld world;
  Rng rng(8);
  const Speaker sp = draw_speaker(0, rng, world.config());
  const ToyUtterance u = generate_utterance(world, sp, 300, 21);
  const Matrix clean = world.render_clean(u.content, u.timbre, u.pitch, u.energy);
  CHECK(relative_error(timbre_probe(world, clean), u.timbre) < 1e-12);
  CHECK(content_probe(world, clean) == u.content);

  const auto probed = content_probe(world, u.mel);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < probed.size(); ++i) hits += probed[i] == u.content[i] ? 1 : 0;
  CHECK(static_cast<double>(hits) / probed.size() > 0.98);
  CHECK(relative_error(timbre_probe(world, u.mel), u.timbre) < 0.05);
  CHECK_THROWS_AS(timbre_probe(world, u.mel.topRows(9)), std::invalid_argument);
}

TEST_CASE("rerender reflects edited factors") {
  const SynthWorld world;
  Rng rng(9);
  const Speaker a = draw_speaker(0, rng, world.config());
  const Speaker b = draw_speaker(1, rng, world.config());
  ToyUtterance u = generate_utterance(world, a, 200, 5);
  u.timbre = b.timbre;
  rerender(world, u, 17);
  CHECK(relative_error(timbre_probe(world, u.mel), b.timbre) < 0.05);
}

TEST_CASE("feature streams differ but both follow content") {
  const SynthWorld world;
  std::vector<int> content = {0, 0, 3, 3, 3, 7, 7, 3, 3};
  const Matrix h = world.render_features(content, "hubert_l9");
  const Matrix w = world.render_features(content, "wav2vec_l9");
  CHECK(h != w);
  CHECK(h.row(2) == h.row(3));
  // same symbol, different preceding segment: context changes the feature
  CHECK(h.row(2) != h.row(7));
  CHECK_THROWS(world.render_features(content, "mfcc"));
}

TEST_CASE("corpus and utterance files round-trip") {
  const SynthWorld world;
  const Corpus c = generate_corpus(tiny_spec(), world);
  const auto dir = iclvc::testing::temp_dir("corpus");
  save_corpus(dir, c);
  const Corpus back = load_corpus(dir);
  CHECK(back.spec.to_json() == c.spec.to_json());
  CHECK(back.world.to_json() == c.world.to_json());
  REQUIRE(back.utterances.size() == c.utterances.size());
  for (std::size_t i = 0; i < c.utterances.size(); ++i) {
    const auto& x = c.utterances[i];
    const auto& y = back.utterances[i];
    CHECK(x.id == y.id);
    CHECK(x.mel == y.mel);
    CHECK(x.content == y.content);
    CHECK(x.pitch == y.pitch);
    CHECK(x.ssl.at("hubert_l9") == y.ssl.at("hubert_l9"));
  }
  CHECK(back.speakers[1].timbre == c.speakers[1].timbre);

  Archive a = load_archive(dir / "spk000_u000.utt", "utterance", kUtteranceVersion);
  a.schema_version = 9;
  save_archive(dir / "spk000_u000.utt", a);
  CHECK_THROWS_AS(load_corpus(dir), FormatError);
  std::filesystem::remove_all(dir);
  CHECK_THROWS(load_corpus(dir));
}

TEST_CASE("invalid specs are rejected") {
  CorpusSpec s;
  s.num_speakers = 0;
  CHECK_THROWS(s.validate());
  s = CorpusSpec{};
  s.max_seconds = 1.0;
  CHECK_THROWS(s.validate());
}
