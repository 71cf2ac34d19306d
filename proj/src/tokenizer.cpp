// SPDX-License-Identifier: Apache-2.0
#include "iclvc/tokenizer.hpp"

#include <limits>
#include <string>

#include "iclvc/archive.hpp"

namespace iclvc {

namespace {

Matrix kmeanspp_seed(const Matrix& frames, int k, Rng& rng) {
  const Eigen::Index n = frames.rows();
  Matrix centroids(k, frames.cols());
  std::uniform_int_distribution<Eigen::Index> pick(0, n - 1);
  centroids.row(0) = frames.row(pick(rng));
  Eigen::VectorXd d2 = (frames.rowwise() - centroids.row(0)).rowwise().squaredNorm();
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int c = 1; c < k; ++c) {
    const double total = d2.sum();
    if (!(total > 0.0)) throw std::invalid_argument("fit_kmeans: fewer distinct frames than clusters");
    double target = u(rng) * total;
    Eigen::Index chosen = n - 1;
    for (Eigen::Index i = 0; i < n; ++i) {
      target -= d2(i);
      if (target < 0.0 && d2(i) > 0.0) {
        chosen = i;
        break;
      }
    }
    while (d2(chosen) == 0.0) --chosen;  // guard against rounding at the tail
    centroids.row(c) = frames.row(chosen);
    d2 = d2.cwiseMin((frames.rowwise() - centroids.row(c)).rowwise().squaredNorm());
  }
  return centroids;
}

}  // namespace

TokenSequence assign(const Codebook& codebook, const Matrix& frames) {
  if (frames.cols() != codebook.feature_dim()) {
    throw ShapeError("assign: frame dim " + std::to_string(frames.cols()) + " != centroid dim " +
                     std::to_string(codebook.feature_dim()));
  }
  TokenSequence tokens(static_cast<std::size_t>(frames.rows()));
  for (Eigen::Index i = 0; i < frames.rows(); ++i) {
    int best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (int c = 0; c < codebook.size(); ++c) {
      const double d = (frames.row(i) - codebook.centroids.row(c)).squaredNorm();
      if (d < best_d) {
        best_d = d;
        best = c;
      }
    }
    tokens[static_cast<std::size_t>(i)] = best;
  }
  return tokens;
}

double inertia(const Codebook& codebook, const Matrix& frames, const TokenSequence& tokens) {
  double total = 0.0;
  for (Eigen::Index i = 0; i < frames.rows(); ++i) {
    total += (frames.row(i) - codebook.centroids.row(tokens[static_cast<std::size_t>(i)])).squaredNorm();
  }
  return total;
}

KMeansFit fit_kmeans(const Matrix& frames, int k, int max_iters, std::uint64_t seed, int embed_dim) {
  if (k < 2) throw std::invalid_argument("fit_kmeans: K must be >= 2");
  if (frames.rows() < k) {
    throw std::invalid_argument("fit_kmeans: " + std::to_string(frames.rows()) + " frames < K=" + std::to_string(k));
  }
  if (max_iters < 1) throw std::invalid_argument("fit_kmeans: max_iters must be >= 1");
  if (embed_dim < 1) throw std::invalid_argument("fit_kmeans: embed_dim must be >= 1");

  Rng rng(seed);
  KMeansFit fit;
  Codebook& cb = fit.codebook;
  cb.centroids = kmeanspp_seed(frames, k, rng);

  TokenSequence tokens = assign(cb, frames);
  fit.inertia.push_back(inertia(cb, frames, tokens));
  for (int iter = 0; iter < max_iters; ++iter) {
    Matrix sums = Matrix::Zero(k, frames.cols());
    std::vector<int> counts(static_cast<std::size_t>(k), 0);
    for (Eigen::Index i = 0; i < frames.rows(); ++i) {
      const int c = tokens[static_cast<std::size_t>(i)];
      sums.row(c) += frames.row(i);
      ++counts[static_cast<std::size_t>(c)];
    }
    for (int c = 0; c < k; ++c) {
      if (counts[static_cast<std::size_t>(c)] > 0) {
        cb.centroids.row(c) = sums.row(c) / counts[static_cast<std::size_t>(c)];
        continue;
      }
      // Empty cluster: move it onto the frame farthest from its centroid.
      Eigen::Index far = 0;
      double far_d = -1.0;
      for (Eigen::Index i = 0; i < frames.rows(); ++i) {
        const double d = (frames.row(i) - cb.centroids.row(tokens[static_cast<std::size_t>(i)])).squaredNorm();
        if (d > far_d) {
          far_d = d;
          far = i;
        }
      }
      cb.centroids.row(c) = frames.row(far);
      tokens[static_cast<std::size_t>(far)] = c;
    }
    TokenSequence next = assign(cb, frames);
    fit.iterations = iter + 1;
    fit.inertia.push_back(inertia(cb, frames, next));
    const bool fixpoint = next == tokens;
    tokens = std::move(next);
    if (fixpoint) {
      fit.converged = true;
      break;
    }
  }

  std::normal_distribution<double> normal(0.0, 1.0);
  cb.embed_table.resize(k, embed_dim);
  for (Eigen::Index i = 0; i < cb.embed_table.size(); ++i) cb.embed_table.data()[i] = normal(rng);
  return fit;
}

Matrix embed(const Codebook& codebook, const TokenSequence& tokens) {
  Matrix out(static_cast<Eigen::Index>(tokens.size()), codebook.embed_dim());
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    const int tok = tokens[i];
    if (tok < 0 || tok >= codebook.size()) {
      throw std::out_of_range("embed: token " + std::to_string(tok) + " outside [0, " +
                              std::to_string(codebook.size()) + ")");
    }
    out.row(static_cast<Eigen::Index>(i)) = codebook.embed_table.row(tok);
  }
  return out;
}

Matrix embed_backward(const Codebook& codebook, const TokenSequence& tokens, const Matrix& output_grad) {
  require_shape(output_grad, static_cast<Eigen::Index>(tokens.size()), codebook.embed_dim(), "embed_backward");
  Matrix g = Matrix::Zero(codebook.size(), codebook.embed_dim());
  for (std::size_t i = 0; i < tokens.size(); ++i) g.row(tokens[i]) += output_grad.row(static_cast<Eigen::Index>(i));
  return g;
}

void save_codebook(const std::filesystem::path& path, const Codebook& codebook, const std::string& stream) {
  Archive a;
  a.kind = "codebook";
  a.schema_version = kCodebookVersion;
  a.meta = {{"K", codebook.size()},
            {"d_feat", codebook.feature_dim()},
            {"d_embed", codebook.embed_dim()},
            {"stream", stream}};
  a.put("centroids", codebook.centroids);
  a.put("embed_table", codebook.embed_table);
  save_archive(path, a);
}

Codebook load_codebook(const std::filesystem::path& path, std::string* stream) {
  const Archive a = load_archive(path, "codebook", kCodebookVersion);
  Codebook cb;
  cb.centroids = a.get("centroids");
  cb.embed_table = a.get("embed_table");
  if (cb.centroids.rows() != a.meta.at("K").get<int>() || cb.embed_table.rows() != cb.centroids.rows()) {
    throw FormatError(path.string() + ": codebook shape disagrees with header");
  }
  if (stream) *stream = a.meta.value("stream", "");
  return cb;
}

}  // namespace iclvc
