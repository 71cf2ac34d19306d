// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <limits>
#include <memory>
#include <string>
#include <vector>

#include "iclvc/synthdata.hpp"
#include "iclvc/tensor.hpp"

namespace iclvc {

struct ProsodyContour {
  std::vector<double> pitch;   // Hz, 0 = unvoiced
  std::vector<double> energy;  // >= 0
};

// Unvoiced pitch frames hold NaN after normalization.
inline constexpr double kUnvoicedSentinel = std::numeric_limits<double>::quiet_NaN();

struct NormalizedContour {
  std::vector<double> pitch;
  std::vector<double> energy;

  bool voiced(std::size_t i) const { return pitch[i] == pitch[i]; }
};

inline constexpr int kProsodyBins = 256;
inline constexpr double kProsodyClamp = 4.0;

struct ProsodyTokens {
  std::vector<int> pitch;   // [0, bins) or bins for unvoiced
  std::vector<int> energy;  // [0, bins)
};

// Generator ground truth carried by the toy utterance.
ProsodyContour extract_contour(const ToyUtterance& utterance);

// Generator inverse on a (possibly generated) mel: energy and log-pitch read
// off their mel directions; frames below the voicing threshold are unvoiced.
ProsodyContour estimate_contour(const SynthWorld& world, const Matrix& mel);

// Per-utterance z-score of voiced pitch (Hz) and of energy. A stream with zero
// variance normalizes to all zeros.
NormalizedContour normalize(const ProsodyContour& contour);
NormalizedContour normalize(const NormalizedContour& contour);

// Clamp to [-4, 4], then floor into `bins` equal buckets (lower-inclusive);
// unvoiced pitch maps to the extra token `bins`.
int prosody_bin(double value, int bins = kProsodyBins);
ProsodyTokens tokenize_prosody(const NormalizedContour& contour, int bins = kProsodyBins);

// Voiced pitch scaled by 2^(cents/1200); the mel's pitch component is
// re-rendered to match. Content, energy and timbre are untouched.
ToyUtterance perturb_pitch(const SynthWorld& world, const ToyUtterance& utterance, int cents);

inline const std::vector<int>& cents_menu() {
  static const std::vector<int> menu = {-400, -200, 200, 400};
  return menu;
}
int draw_cents(Rng& rng);

// Learnable token tables for the pitch & energy variant. The per-frame
// channel is [pitch_table[pitch_tok] | energy_table[energy_tok]].
struct ProsodyTables {
  Matrix pitch;   // (bins + 1) x dim
  Matrix energy;  // bins x dim

  static ProsodyTables initialize(int dim, Rng& rng, int bins = kProsodyBins);
  int dim() const { return static_cast<int>(pitch.cols()); }
  Matrix embed(const ProsodyTokens& tokens) const;
  // Returns {d_pitch, d_energy}.
  std::pair<Matrix, Matrix> backward(const ProsodyTokens& tokens, const Matrix& output_grad) const;
};

class ProsodyProviderError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Source of the frame-aligned prosody embedding P.
class ProsodyEmbeddingProvider {
 public:
  virtual ~ProsodyEmbeddingProvider() = default;
  virtual std::string name() const = 0;
  virtual int dim() const = 0;
  virtual Matrix embed(const ToyUtterance& utterance) const = 0;
};

// Timbre-blind encoder: per-frame shape features of the normalized contour
// (value, voicing, smoothed values, slopes) through a fixed random projection
// and tanh. Invariant to pitch scaling, hence to cents perturbation.
class ToyProsodyEncoder : public ProsodyEmbeddingProvider {
 public:
  static constexpr int kFeatureCount = 9;

  explicit ToyProsodyEncoder(int dim = 16, std::uint64_t seed = 77);

  std::string name() const override { return "toy"; }
  int dim() const override { return static_cast<int>(projection_.cols()); }
  Matrix embed(const ToyUtterance& utterance) const override;

  static Matrix shape_features(const NormalizedContour& contour);

 private:
  Matrix projection_;
  std::uint64_t seed_;
};

inline constexpr std::uint32_t kProsodyEmbeddingVersion = 1;

// Reads externally computed embeddings, one file per utterance id
// ("<dir>/<id>.pemb"), each a frame-aligned T x h matrix with header fields
// frame_count, h and frame_rate.
class PrecomputedProsodyProvider : public ProsodyEmbeddingProvider {
 public:
  PrecomputedProsodyProvider(std::filesystem::path dir, int dim, double frame_rate);

  std::string name() const override { return "precomputed"; }
  int dim() const override { return dim_; }
  Matrix embed(const ToyUtterance& utterance) const override;

 private:
  std::filesystem::path dir_;
  int dim_;
  double frame_rate_;
};

void save_prosody_embedding(const std::filesystem::path& path, const Matrix& embedding, double frame_rate);
Matrix load_prosody_embedding(const std::filesystem::path& path, double* frame_rate = nullptr);

// Perturbs the pitch by `cents` first, then encodes.
Matrix prosody_embed(const SynthWorld& world, const ToyUtterance& utterance,
                     const ProsodyEmbeddingProvider& provider, int cents);

}  // namespace iclvc
