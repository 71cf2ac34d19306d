// SPDX-License-Identifier: Apache-2.0
#include "iclvc/prosody.hpp"

#include <cmath>

#include "iclvc/archive.hpp"

namespace iclvc {

namespace {

constexpr double kPitchReferenceHz = 160.0;
constexpr double kVoicingThreshold = 0.2;

struct Moments {
  double mean = 0.0;
  double std = 0.0;
  std::size_t count = 0;
};

template <typename Pred>
Moments moments(const std::vector<double>& v, Pred include) {
  Moments m;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (!include(i)) continue;
    m.mean += v[i];
    ++m.count;
  }
  if (m.count == 0) return m;
  m.mean /= static_cast<double>(m.count);
  double ss = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (include(i)) ss += (v[i] - m.mean) * (v[i] - m.mean);
  }
  m.std = std::sqrt(ss / static_cast<double>(m.count));
  return m;
}

bool degenerate(const Moments& m) { return !(m.std > 1e-12 * std::max(1.0, std::abs(m.mean))); }

template <typename Pred>
std::vector<double> zscore(const std::vector<double>& v, Pred include, double excluded_value) {
  const Moments m = moments(v, include);
  std::vector<double> out(v.size(), excluded_value);
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (!include(i)) continue;
    out[i] = degenerate(m) ? 0.0 : (v[i] - m.mean) / m.std;
  }
  return out;
}

std::vector<double> smooth(const std::vector<double>& v, int half_window) {
  const auto n = static_cast<int>(v.size());
  std::vector<double> out(v.size(), 0.0);
  for (int i = 0; i < n; ++i) {
    const int lo = std::max(0, i - half_window);
    const int hi = std::min(n - 1, i + half_window);
    double s = 0.0;
    for (int j = lo; j <= hi; ++j) s += v[static_cast<std::size_t>(j)];
    out[static_cast<std::size_t>(i)] = s / (hi - lo + 1);
  }
  return out;
}

std::vector<double> slope(const std::vector<double>& v) {
  const auto n = v.size();
  std::vector<double> out(n, 0.0);
  if (n < 2) return out;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t lo = i == 0 ? 0 : i - 1;
    const std::size_t hi = i + 1 == n ? i : i + 1;
    out[i] = (v[hi] - v[lo]) / static_cast<double>(hi - lo);
  }
  return out;
}

}  // namespace

ProsodyContour extract_contour(const ToyUtterance& utterance) {
  if (utterance.pitch.empty()) throw std::invalid_argument("extract_contour: utterance has no frames");
  return {utterance.pitch, utterance.energy};
}

ProsodyContour estimate_contour(const SynthWorld& world, const Matrix& mel) {
  const WorldConfig& wc = world.config();
  if (mel.cols() != wc.mel_dim) throw ShapeError("estimate_contour: mel dim mismatch");
  ProsodyContour c;
  const Eigen::VectorXd e = mel * world.energy_direction().transpose();
  const Eigen::VectorXd p = mel * world.pitch_direction().transpose();
  for (Eigen::Index t = 0; t < mel.rows(); ++t) {
    const double energy = e(t) / wc.energy_gain;
    const bool voiced = energy > kVoicingThreshold;
    c.energy.push_back(std::max(0.0, energy));
    c.pitch.push_back(voiced ? kPitchReferenceHz * std::exp2(p(t) / wc.pitch_gain) : 0.0);
  }
  return c;
}

NormalizedContour normalize(const ProsodyContour& contour) {
  if (contour.pitch.size() != contour.energy.size()) throw ShapeError("normalize: pitch/energy lengths differ");
  std::size_t voiced = 0;
  for (double p : contour.pitch) {
    if (p < 0.0) throw std::invalid_argument("normalize: negative pitch");
    voiced += p > 0.0 ? 1 : 0;
  }
  if (voiced < 2) throw std::invalid_argument("normalize: need >= 2 voiced frames for pitch statistics");
  NormalizedContour n;
  n.pitch = zscore(contour.pitch, [&](std::size_t i) { return contour.pitch[i] > 0.0; }, kUnvoicedSentinel);
  n.energy = zscore(contour.energy, [](std::size_t) { return true; }, 0.0);
  return n;
}

NormalizedContour normalize(const NormalizedContour& contour) {
  if (contour.pitch.size() != contour.energy.size()) throw ShapeError("normalize: pitch/energy lengths differ");
  NormalizedContour n;
  n.pitch = zscore(contour.pitch, [&](std::size_t i) { return contour.voiced(i); }, kUnvoicedSentinel);
  n.energy = zscore(contour.energy, [](std::size_t) { return true; }, 0.0);
  return n;
}

int prosody_bin(double value, int bins) {
  const double clamped = std::clamp(value, -kProsodyClamp, kProsodyClamp);
  const auto b = static_cast<int>(std::floor((clamped + kProsodyClamp) / (2.0 * kProsodyClamp) * bins));
  return std::clamp(b, 0, bins - 1);
}

ProsodyTokens tokenize_prosody(const NormalizedContour& contour, int bins) {
  if (bins < 2) throw std::invalid_argument("tokenize_prosody: bins must be >= 2");
  ProsodyTokens t;
  for (std::size_t i = 0; i < contour.pitch.size(); ++i) {
    t.pitch.push_back(contour.voiced(i) ? prosody_bin(contour.pitch[i], bins) : bins);
    t.energy.push_back(prosody_bin(contour.energy[i], bins));
  }
  return t;
}

ToyUtterance perturb_pitch(const SynthWorld& world, const ToyUtterance& utterance, int cents) {
  ToyUtterance out = utterance;
  if (cents == 0) return out;
  const double ratio = std::exp2(cents / 1200.0);
  const RowVector shift = world.config().pitch_gain * (cents / 1200.0) * world.pitch_direction();
  for (std::size_t i = 0; i < out.pitch.size(); ++i) {
    if (out.pitch[i] <= 0.0) continue;
    out.pitch[i] *= ratio;
    out.mel.row(static_cast<Eigen::Index>(i)) += shift;
  }
  return out;
}

int draw_cents(Rng& rng) {
  std::uniform_int_distribution<std::size_t> pick(0, cents_menu().size() - 1);
  return cents_menu()[pick(rng)];
}

ProsodyTables ProsodyTables::initialize(int dim, Rng& rng, int bins) {
  ProsodyTables t;
  t.pitch = standard_normal(bins + 1, dim, rng);
  t.energy = standard_normal(bins, dim, rng);
  return t;
}

Matrix ProsodyTables::embed(const ProsodyTokens& tokens) const {
  const auto T = static_cast<Eigen::Index>(tokens.pitch.size());
  if (tokens.energy.size() != tokens.pitch.size()) throw ShapeError("ProsodyTables::embed: token lengths differ");
  Matrix out(T, 2 * dim());
  for (Eigen::Index t = 0; t < T; ++t) {
    const int p = tokens.pitch[static_cast<std::size_t>(t)];
    const int e = tokens.energy[static_cast<std::size_t>(t)];
    if (p < 0 || p >= pitch.rows() || e < 0 || e >= energy.rows()) {
      throw std::out_of_range("ProsodyTables::embed: token out of range");
    }
    out.row(t).head(dim()) = pitch.row(p);
    out.row(t).tail(dim()) = energy.row(e);
  }
  return out;
}

std::pair<Matrix, Matrix> ProsodyTables::backward(const ProsodyTokens& tokens, const Matrix& output_grad) const {
  require_shape(output_grad, static_cast<Eigen::Index>(tokens.pitch.size()), 2 * dim(), "ProsodyTables::backward");
  Matrix dp = Matrix::Zero(pitch.rows(), pitch.cols());
  Matrix de = Matrix::Zero(energy.rows(), energy.cols());
  for (Eigen::Index t = 0; t < output_grad.rows(); ++t) {
    dp.row(tokens.pitch[static_cast<std::size_t>(t)]) += output_grad.row(t).head(dim());
    de.row(tokens.energy[static_cast<std::size_t>(t)]) += output_grad.row(t).tail(dim());
  }
  return {dp, de};
}

ToyProsodyEncoder::ToyProsodyEncoder(int dim, std::uint64_t seed) : seed_(seed) {
  if (dim < 1) throw std::invalid_argument("ToyProsodyEncoder: dim must be >= 1");
  Rng rng(seed);
  projection_ = standard_normal(kFeatureCount, dim, rng) / std::sqrt(static_cast<double>(kFeatureCount));
}

Matrix ToyProsodyEncoder::shape_features(const NormalizedContour& c) {
  const std::size_t n = c.pitch.size();
  std::vector<double> zp(n), voiced(n);
  for (std::size_t i = 0; i < n; ++i) {
    voiced[i] = c.voiced(i) ? 1.0 : 0.0;
    zp[i] = c.voiced(i) ? c.pitch[i] : 0.0;
  }
  const auto zp5 = smooth(zp, 2), ze5 = smooth(c.energy, 2), zp15 = smooth(zp, 7), ze15 = smooth(c.energy, 7);
  const auto dp = slope(zp15), de = slope(ze15);
  Matrix f(static_cast<Eigen::Index>(n), kFeatureCount);
  for (std::size_t i = 0; i < n; ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    f.row(r) << zp[i], voiced[i], c.energy[i], zp5[i], ze5[i], zp15[i], ze15[i], 10.0 * dp[i], 10.0 * de[i];
  }
  return f;
}

Matrix ToyProsodyEncoder::embed(const ToyUtterance& utterance) const {
  const NormalizedContour c = normalize(extract_contour(utterance));
  Matrix out = shape_features(c) * projection_;
  return out.array().tanh().matrix();
}

PrecomputedProsodyProvider::PrecomputedProsodyProvider(std::filesystem::path dir, int dim, double frame_rate)
    : dir_(std::move(dir)), dim_(dim), frame_rate_(frame_rate) {}

Matrix PrecomputedProsodyProvider::embed(const ToyUtterance& utterance) const {
  const auto path = dir_ / (utterance.id + ".pemb");
  if (!std::filesystem::exists(path)) {
    throw ProsodyProviderError("precomputed prosody embedding missing for '" + utterance.id + "': " + path.string());
  }
  double rate = 0.0;
  Matrix e = load_prosody_embedding(path, &rate);
  if (e.rows() != utterance.frames()) {
    throw ProsodyProviderError(path.string() + ": " + std::to_string(e.rows()) + " frames, utterance has " +
                               std::to_string(utterance.frames()));
  }
  if (e.cols() != dim_) {
    throw ProsodyProviderError(path.string() + ": h=" + std::to_string(e.cols()) + ", expected " + std::to_string(dim_));
  }
  if (std::abs(rate - frame_rate_) > 1e-9) {
    throw ProsodyProviderError(path.string() + ": frame rate " + std::to_string(rate) + " != " + std::to_string(frame_rate_));
  }
  if (!e.allFinite()) throw ProsodyProviderError(path.string() + ": non-finite embedding values");
  return e;
}

void save_prosody_embedding(const std::filesystem::path& path, const Matrix& embedding, double frame_rate) {
  Archive a;
  a.kind = "prosody_embedding";
  a.schema_version = kProsodyEmbeddingVersion;
  a.meta = {{"frame_count", embedding.rows()}, {"h", embedding.cols()}, {"frame_rate", frame_rate}};
  a.put("embedding", embedding);
  save_archive(path, a);
}

Matrix load_prosody_embedding(const std::filesystem::path& path, double* frame_rate) {
  const Archive a = load_archive(path, "prosody_embedding", kProsodyEmbeddingVersion);
  const Matrix& e = a.get("embedding");
  if (e.rows() != a.meta.at("frame_count").get<Eigen::Index>() || e.cols() != a.meta.at("h").get<Eigen::Index>()) {
    throw FormatError(path.string() + ": embedding shape disagrees with header");
  }
  if (frame_rate) *frame_rate = a.meta.at("frame_rate").get<double>();
  return e;
}

Matrix prosody_embed(const SynthWorld& world, const ToyUtterance& utterance,
                     const ProsodyEmbeddingProvider& provider, int cents) {
  const ToyUtterance perturbed = perturb_pitch(world, utterance, cents);
  Matrix e = provider.embed(perturbed);
  if (e.rows() != utterance.frames() || e.cols() != provider.dim()) {
    throw ProsodyProviderError("prosody provider '" + provider.name() + "' returned " + shape_of(e));
  }
  return e;
}

}  // namespace iclvc
