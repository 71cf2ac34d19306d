// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "iclvc/backbone.hpp"
#include "iclvc/flow.hpp"
#include "iclvc/icl.hpp"
#include "iclvc/prosody.hpp"
#include "iclvc/synthdata.hpp"
#include "iclvc/tokenizer.hpp"

namespace iclvc {

enum class Variant { kIcl, kIclPitchEnergy, kIclProsodyEmbed };

std::string to_string(Variant v);
Variant parse_variant(const std::string& s);

struct ModelConfig {
  Variant variant = Variant::kIcl;
  std::string stream = "hubert_l9";
  int prosody_table_dim = 8;
  int prosody_embed_dim = 16;
  std::uint64_t prosody_seed = 77;
  BackboneConfig backbone;  // input/output dims are derived at initialization
  FlowConfig flow;
  MaskPolicy mask;

  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
};

// Per-utterance model inputs other than the mel channel.
struct Conditioning {
  TokenSequence tokens;
  Matrix semantic;
  std::optional<ProsodyTokens> prosody_tokens;  // pitch & energy variant
  std::optional<Matrix> prosody;                // P, absent for the plain variant

  const Matrix* prosody_ptr() const { return prosody ? &*prosody : nullptr; }
};

class VcModel {
 public:
  // The codebook's centroids stay fixed; its embedding table is trained.
  static VcModel initialize(ModelConfig config, Codebook codebook, int mel_dim, Rng& rng);

  const ModelConfig& config() const { return config_; }
  Variant variant() const { return config_.variant; }
  const Backbone& backbone() const { return backbone_; }
  Backbone& backbone() { return backbone_; }
  const Codebook& codebook() const { return codebook_; }
  Codebook& codebook() { return codebook_; }
  const std::optional<ProsodyTables>& tables() const { return tables_; }
  std::optional<ProsodyTables>& tables() { return tables_; }
  int prosody_channels() const;

  // `cents` applies to the prosody-embedding variant only (pitch perturbation
  // before encoding); pass 0 for none.
  Conditioning condition(const SynthWorld& world, const ToyUtterance& utt, int cents) const;

  // Every trainable array in a fixed order, with its checkpoint name.
  std::vector<std::pair<std::string, Matrix*>> trainable();
  std::vector<std::pair<std::string, const Matrix*>> trainable() const;

 private:
  ModelConfig config_;
  Backbone backbone_;
  Codebook codebook_;
  std::optional<ProsodyTables> tables_;
  std::optional<ToyProsodyEncoder> encoder_;

  friend VcModel load_checkpoint(const std::filesystem::path& path, nlohmann::json* extra);
};

struct ConversionResult {
  InferencePrompt prompt;
  Matrix integrated;  // full [reference ; source] state at t = 1
  Matrix generated;   // source span only
};

// ICL conversion: prompt with the reference utterance, integrate the flow,
// keep the source span.
ConversionResult convert(const VcModel& model, const SynthWorld& world, const ToyUtterance& source,
                         const ToyUtterance& reference, Rng& rng);

inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const std::filesystem::path& path, const VcModel& model, const nlohmann::json& extra = {});
VcModel load_checkpoint(const std::filesystem::path& path, nlohmann::json* extra = nullptr);

}  // namespace iclvc
