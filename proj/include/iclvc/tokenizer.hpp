// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "iclvc/tensor.hpp"

namespace iclvc {

using TokenSequence = std::vector<int>;

// k-means centroids over a feature stream plus the learnable token embedding table.
struct Codebook {
  Matrix centroids;    // K x d_feat
  Matrix embed_table;  // K x d_embed

  int size() const { return static_cast<int>(centroids.rows()); }
  int feature_dim() const { return static_cast<int>(centroids.cols()); }
  int embed_dim() const { return static_cast<int>(embed_table.cols()); }
};

struct KMeansFit {
  Codebook codebook;
  std::vector<double> inertia;  // after each assignment step
  int iterations = 0;
  bool converged = false;
};

// Lloyd's algorithm with k-means++ seeding. A cluster that empties is
// re-seeded at the frame farthest from its current centroid. The embedding
// table is drawn N(0, 1) from the same seed.
KMeansFit fit_kmeans(const Matrix& frames, int k, int max_iters, std::uint64_t seed, int embed_dim = 32);

// Nearest centroid in squared Euclidean distance; ties go to the lowest index.
TokenSequence assign(const Codebook& codebook, const Matrix& frames);

double inertia(const Codebook& codebook, const Matrix& frames, const TokenSequence& tokens);

// Row i = embed_table[tokens[i]].
Matrix embed(const Codebook& codebook, const TokenSequence& tokens);

// Gradient w.r.t. embed_table given the gradient w.r.t. embed()'s output;
// rows of repeated tokens accumulate.
Matrix embed_backward(const Codebook& codebook, const TokenSequence& tokens, const Matrix& output_grad);

inline constexpr std::uint32_t kCodebookVersion = 1;

void save_codebook(const std::filesystem::path& path, const Codebook& codebook, const std::string& stream);
Codebook load_codebook(const std::filesystem::path& path, std::string* stream = nullptr);

}  // namespace iclvc
