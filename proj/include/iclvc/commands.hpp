// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "iclvc/eval.hpp"
#include "iclvc/model.hpp"
#include "iclvc/synthdata.hpp"
#include "iclvc/train.hpp"

namespace iclvc {

namespace fs = std::filesystem;

struct GenOptions {
  CorpusSpec corpus;
  std::uint64_t world_seed = WorldConfig{}.seed;
  fs::path out_dir;
  int pairs = 0;  // cross-speaker (source, reference) pairs written to pairs.json
  std::uint64_t pairs_seed = 7;
};

struct FitTokenizerOptions {
  fs::path corpus_dir;
  std::string stream = "hubert_l9";
  int k = 32;
  int max_iters = 100;
  int embed_dim = 32;
  std::uint64_t seed = 3;
  fs::path out;
};

struct TrainOptions {
  fs::path corpus_dir;
  fs::path codebook;
  fs::path out;       // checkpoint, rewritten atomically after every epoch
  fs::path loss_log;  // one JSON object per completed epoch
  ModelConfig model;  // stream is taken from the codebook
  TrainConfig train;
  std::uint64_t init_seed = 5;
};

struct ConvertOptions {
  fs::path checkpoint;
  fs::path source;     // single-pair mode
  fs::path reference;
  fs::path out;
  fs::path pairs;      // batch mode: convert every pair of a manifest
  fs::path corpus_dir; // where batch-mode utterance ids resolve
  std::uint64_t seed = 11;
  int jobs = 1;
};

struct EvalOptions {
  fs::path checkpoint;
  fs::path corpus_dir;
  fs::path pairs;
  fs::path out_json;
  fs::path out_table;
  int jobs = 1;
};

// One conversion job. Relative `converted` paths resolve against the
// manifest's directory.
struct PairEntry {
  std::string source;
  std::string reference;
  fs::path converted;
};

struct PairsManifest {
  std::vector<PairEntry> pairs;
};

inline constexpr std::uint32_t kPairsVersion = 1;
inline constexpr std::uint32_t kMelVersion = 1;

PairsManifest load_pairs(const fs::path& path);
void save_pairs(const fs::path& path, const PairsManifest& manifest);

// Converted mel files carry only the generated source span.
void save_mel(const fs::path& path, const Matrix& mel, const std::string& source_id, const std::string& reference_id);
Matrix load_mel(const fs::path& path);

void cmd_gen(const GenOptions& opt);
void cmd_fit_tokenizer(const FitTokenizerOptions& opt);
std::vector<EpochStats> cmd_train(const TrainOptions& opt);
void cmd_convert(const ConvertOptions& opt);
// Returns the report; throws if an aggregate metric is null.
MetricReport cmd_eval(const EvalOptions& opt);

}  // namespace iclvc
