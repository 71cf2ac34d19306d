// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "iclvc/tensor.hpp"
#include "json.hpp"

namespace iclvc {

// Fixed generator constants shared by every corpus drawn from the same world:
// symbol inventory, mel subspaces for content / timbre / pitch / energy, and
// the random projections standing in for self-supervised feature extractors.
struct WorldConfig {
  int mel_dim = 20;
  int content_dim = 10;
  int timbre_dim = 6;
  int feat_dim = 16;
  int num_symbols = 24;  // symbol 0 is silence
  int symbol_code_dim = 12;
  double pitch_gain = 2.5;   // mel units per octave
  double energy_gain = 1.5;
  double formant_coupling = 0.15;
  double mel_noise = 0.05;
  double feature_noise = 0.05;
  double feature_speaker_leak = 0.05;
  std::uint64_t seed = 20240917;

  nlohmann::json to_json() const;
  static WorldConfig from_json(const nlohmann::json& j);
};

inline const std::vector<std::string>& stream_names() {
  static const std::vector<std::string> names = {"hubert_l9", "wav2vec_l9"};
  return names;
}

struct FeatureStream {
  Matrix current;  // symbol_code_dim x feat_dim
  Matrix context;  // symbol_code_dim x feat_dim (previous segment)
  Matrix leak;     // timbre_dim x feat_dim
};

class SynthWorld {
 public:
  explicit SynthWorld(const WorldConfig& config = {});

  const WorldConfig& config() const { return config_; }
  const Matrix& content_basis() const { return content_basis_; }
  const Matrix& timbre_basis() const { return timbre_basis_; }
  const RowVector& pitch_direction() const { return pitch_dir_; }
  const RowVector& energy_direction() const { return energy_dir_; }
  const Matrix& symbol_content() const { return symbol_content_; }

  // Content vector of a symbol as voiced by a given timbre (formant scaling).
  RowVector voiced_content(int symbol, const RowVector& timbre) const;

  // Deterministic mel without generator noise.
  Matrix render_clean(const std::vector<int>& content, const RowVector& timbre,
                      const std::vector<double>& pitch, const std::vector<double>& energy) const;

  // Clean (noise- and leak-free) feature frames of a named stream.
  Matrix render_features(const std::vector<int>& content, const std::string& stream) const;
  Matrix render_features(const std::vector<int>& content, const RowVector& timbre, const std::string& stream,
                         Rng* noise) const;

  const FeatureStream& stream(const std::string& name) const;

 private:
  WorldConfig config_;
  Matrix content_basis_;   // mel_dim x content_dim, orthonormal columns
  Matrix timbre_basis_;    // mel_dim x timbre_dim
  RowVector pitch_dir_;
  RowVector energy_dir_;
  Matrix symbol_content_;  // num_symbols x content_dim, row 0 = 0
  Matrix formant_;         // timbre_dim x content_dim
  Matrix symbol_codes_;    // num_symbols x symbol_code_dim
  std::map<std::string, FeatureStream> streams_;
};

enum class ContourClass : int { kRising = 0, kFalling = 1, kHat = 2, kValley = 3, kWave = 4 };
inline constexpr int kNumContourClasses = 5;

struct Speaker {
  int id = 0;
  RowVector timbre;
  double f0_mean = 150.0;   // Hz
  double f0_range = 0.4;    // octaves spanned by the normalized shape
};

struct ToyUtterance {
  std::string id;
  int speaker = 0;
  int contour_class = 0;
  std::vector<int> content;     // per-frame symbol
  RowVector timbre;
  std::vector<double> pitch;    // Hz, 0 = unvoiced
  std::vector<double> energy;   // >= 0
  Matrix mel;                   // T x mel_dim
  std::map<std::string, Matrix> ssl;  // per named stream, T x feat_dim

  Eigen::Index frames() const { return mel.rows(); }
};

struct CorpusSpec {
  int num_speakers = 8;
  int utterances_per_speaker = 12;
  double min_seconds = 4.0;
  double max_seconds = 10.0;
  double frame_rate = 50.0;
  std::uint64_t seed = 1;

  void validate() const;
  nlohmann::json to_json() const;
  static CorpusSpec from_json(const nlohmann::json& j);
};

struct Corpus {
  CorpusSpec spec;
  WorldConfig world;
  std::vector<Speaker> speakers;
  std::vector<ToyUtterance> utterances;
};

Speaker draw_speaker(int id, Rng& rng, const WorldConfig& world);

// Prosody and content for one utterance of a speaker; contour_class < 0 draws one.
ToyUtterance generate_utterance(const SynthWorld& world, const Speaker& speaker, int frames,
                                std::uint64_t seed, int contour_class = -1);

// Re-renders an utterance's mel and features after its factors were edited.
void rerender(const SynthWorld& world, ToyUtterance& utt, std::uint64_t noise_seed);

Corpus generate_corpus(const CorpusSpec& spec, const SynthWorld& world);

// All frames of one feature stream, utterances stacked in order.
Matrix stack_stream(const std::vector<ToyUtterance>& utterances, const std::string& stream);

// Closed-form generator inverse: mean frame projected on the timbre subspace.
RowVector timbre_probe(const SynthWorld& world, const Matrix& mel);

// Per-frame content symbol recovered from mel (formant scaling from timbre_probe).
std::vector<int> content_probe(const SynthWorld& world, const Matrix& mel);

inline constexpr std::uint32_t kUtteranceVersion = 1;
inline constexpr std::uint32_t kManifestVersion = 1;

void save_corpus(const std::filesystem::path& dir, const Corpus& corpus);
Corpus load_corpus(const std::filesystem::path& dir);
void save_utterance(const std::filesystem::path& path, const ToyUtterance& utt);
ToyUtterance load_utterance(const std::filesystem::path& path);

}  // namespace iclvc
