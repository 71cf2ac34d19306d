// SPDX-License-Identifier: Apache-2.0
#include "iclvc/eval.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>

#include "iclvc/prosody.hpp"

namespace iclvc {

MetricValue cosine_similarity(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) return MetricValue::null("length mismatch");
  if (a.empty()) return MetricValue::null("empty vectors");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) return MetricValue::null("zero-norm input");
  return MetricValue::of(std::clamp(dot / (std::sqrt(na) * std::sqrt(nb)), -1.0, 1.0));
}

MetricValue cosine_similarity(const RowVector& a, const RowVector& b) {
  return cosine_similarity(std::span<const double>(a.data(), static_cast<std::size_t>(a.size())),
                           std::span<const double>(b.data(), static_cast<std::size_t>(b.size())));
}

MetricValue pearson(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) return MetricValue::null("length mismatch");
  if (x.size() < 2) return MetricValue::null("fewer than 2 samples");
  const double n = static_cast<double>(x.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return MetricValue::null("zero variance");
  return MetricValue::of(std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0));
}

double mutual_information(std::span<const int> x, std::span<const int> y) {
  if (x.size() != y.size()) throw ShapeError("mutual_information: length mismatch");
  if (x.empty()) return 0.0;
  std::map<int, double> px, py;
  std::map<std::pair<int, int>, double> pxy;
  for (std::size_t i = 0; i < x.size(); ++i) {
    px[x[i]] += 1.0;
    py[y[i]] += 1.0;
    pxy[{x[i], y[i]}] += 1.0;
  }
  const double n = static_cast<double>(x.size());
  double mi = 0.0;
  for (const auto& [key, c] : pxy) {
    mi += c / n * std::log(c * n / (px[key.first] * py[key.second]));
  }
  return mi;
}

double energy_distance(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols()) throw ShapeError("energy_distance: dimension mismatch");
  if (a.rows() == 0 || b.rows() == 0) throw std::invalid_argument("energy_distance: empty sample");
  auto mean_dist = [](const Matrix& x, const Matrix& y) {
    double total = 0.0;
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      total += (y.rowwise() - x.row(i)).rowwise().norm().sum();
    }
    return total / static_cast<double>(x.rows() * y.rows());
  };
  return 2.0 * mean_dist(a, b) - mean_dist(a, a) - mean_dist(b, b);
}

double ridge_probe_r2(const Matrix& train_x, const Matrix& train_y, const Matrix& test_x, const Matrix& test_y,
                      double ridge) {
  if (train_x.rows() != train_y.rows() || test_x.rows() != test_y.rows() || train_x.cols() != test_x.cols() ||
      train_y.cols() != test_y.cols()) {
    throw ShapeError("ridge_probe_r2: shape mismatch");
  }
  if (train_x.rows() < 2 || test_x.rows() < 2) throw std::invalid_argument("ridge_probe_r2: too few rows");
  // Centre on training statistics; the intercept is then the training mean.
  const RowVector mx = train_x.colwise().mean();
  const RowVector my = train_y.colwise().mean();
  const Matrix xc = train_x.rowwise() - mx;
  const Matrix yc = train_y.rowwise() - my;
  Matrix gram = xc.transpose() * xc;
  gram.diagonal().array() += ridge;
  const Matrix w = gram.ldlt().solve(xc.transpose() * yc);
  const Matrix pred = ((test_x.rowwise() - mx) * w).rowwise() + my;
  const double sse = (test_y - pred).squaredNorm();
  const double sst = (test_y.rowwise() - test_y.colwise().mean()).squaredNorm();
  if (sst == 0.0) throw std::invalid_argument("ridge_probe_r2: constant test targets");
  return 1.0 - sse / sst;
}

PairMetrics evaluate_conversion(const SynthWorld& world, const Matrix& converted, const ToyUtterance& source,
                                const ToyUtterance& reference, const Codebook& codebook, const std::string& stream) {
  if (converted.rows() != source.frames()) {
    throw ShapeError("evaluate_conversion: converted has " + std::to_string(converted.rows()) +
                     " frames, source has " + std::to_string(source.frames()));
  }
  PairMetrics m;
  m.source_id = source.id;
  m.reference_id = reference.id;

  const RowVector probe = timbre_probe(world, converted);
  m.secs = cosine_similarity(probe, timbre_probe(world, reference.mel));
  m.secs_source = cosine_similarity(probe, timbre_probe(world, source.mel));

  const ProsodyContour conv = estimate_contour(world, converted);
  const ProsodyContour src = extract_contour(source);
  std::vector<double> cp, sp;
  for (std::size_t i = 0; i < src.pitch.size(); ++i) {
    if (conv.pitch[i] > 0.0 && src.pitch[i] > 0.0) {
      cp.push_back(conv.pitch[i]);
      sp.push_back(src.pitch[i]);
    }
  }
  m.pitch_corr = cp.size() < static_cast<std::size_t>(kMinVoicedOverlap)
                     ? MetricValue::null("fewer than " + std::to_string(kMinVoicedOverlap) + " common voiced frames")
                     : pearson(cp, sp);
  m.energy_corr = pearson(conv.energy, src.energy);

  const TokenSequence got = assign(codebook, world.render_features(content_probe(world, converted), stream));
  const TokenSequence want = assign(codebook, world.render_features(source.content, stream));
  std::size_t hits = 0;
  for (std::size_t i = 0; i < got.size(); ++i) hits += got[i] == want[i] ? 1 : 0;
  m.content_accuracy = MetricValue::of(static_cast<double>(hits) / static_cast<double>(got.size()));
  return m;
}

namespace {

MetricValue mean_of(const std::vector<PairMetrics>& pairs, MetricValue PairMetrics::*field) {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& p : pairs) {
    const MetricValue& v = p.*field;
    if (!v.defined()) continue;
    sum += *v.value;
    ++n;
  }
  if (n == 0) return MetricValue::null("no defined per-pair values");
  return MetricValue::of(sum / static_cast<double>(n));
}

nlohmann::json to_json(const MetricValue& v) {
  if (v.defined()) return *v.value;
  return nullptr;
}

std::string cell(const MetricValue& v) {
  if (!v.defined()) return "null";
  std::ostringstream os;
  os << std::fixed << std::setprecision(4) << *v.value;
  return os.str();
}

}  // namespace

MetricReport aggregate(std::vector<PairMetrics> pairs) {
  MetricReport r;
  r.pairs = std::move(pairs);
  r.secs = mean_of(r.pairs, &PairMetrics::secs);
  r.secs_source = mean_of(r.pairs, &PairMetrics::secs_source);
  r.pitch_corr = mean_of(r.pairs, &PairMetrics::pitch_corr);
  r.energy_corr = mean_of(r.pairs, &PairMetrics::energy_corr);
  r.content_accuracy = mean_of(r.pairs, &PairMetrics::content_accuracy);
  return r;
}

nlohmann::json MetricReport::to_json() const {
  nlohmann::json j;
  j["aggregate"] = {{"secs", iclvc::to_json(secs)},
                    {"secs_source", iclvc::to_json(secs_source)},
                    {"pitch_corr", iclvc::to_json(pitch_corr)},
                    {"energy_corr", iclvc::to_json(energy_corr)},
                    {"content_accuracy", iclvc::to_json(content_accuracy)}};
  j["notes"] = "content_accuracy is a token-recovery surrogate for intelligibility; CER and MOS are not computed";
  j["pairs"] = nlohmann::json::array();
  for (const auto& p : pairs) {
    nlohmann::json row = {{"source", p.source_id},
                          {"reference", p.reference_id},
                          {"secs", iclvc::to_json(p.secs)},
                          {"secs_source", iclvc::to_json(p.secs_source)},
                          {"pitch_corr", iclvc::to_json(p.pitch_corr)},
                          {"energy_corr", iclvc::to_json(p.energy_corr)},
                          {"content_accuracy", iclvc::to_json(p.content_accuracy)}};
    if (!p.pitch_corr.defined()) row["pitch_corr_reason"] = p.pitch_corr.reason;
    if (!p.energy_corr.defined()) row["energy_corr_reason"] = p.energy_corr.reason;
    j["pairs"].push_back(std::move(row));
  }
  return j;
}

std::string MetricReport::to_table() const {
  std::ostringstream os;
  os << std::left << std::setw(14) << "source" << std::setw(14) << "reference" << std::setw(10) << "secs"
     << std::setw(12) << "secs_src" << std::setw(12) << "pitch_corr" << std::setw(13) << "energy_corr"
     << "content_acc\n";
  auto row = [&](const std::string& a, const std::string& b, const MetricValue& s, const MetricValue& ss,
                 const MetricValue& p, const MetricValue& e, const MetricValue& c) {
    os << std::setw(14) << a << std::setw(14) << b << std::setw(10) << cell(s) << std::setw(12) << cell(ss)
       << std::setw(12) << cell(p) << std::setw(13) << cell(e) << cell(c) << "\n";
  };
  for (const auto& p : pairs) {
    row(p.source_id, p.reference_id, p.secs, p.secs_source, p.pitch_corr, p.energy_corr, p.content_accuracy);
  }
  row("MEAN", "", secs, secs_source, pitch_corr, energy_corr, content_accuracy);
  return os.str();
}

std::vector<std::string> MetricReport::null_metrics() const {
  std::vector<std::string> out;
  if (!secs.defined()) out.push_back("secs");
  if (!secs_source.defined()) out.push_back("secs_source");
  if (!pitch_corr.defined()) out.push_back("pitch_corr");
  if (!energy_corr.defined()) out.push_back("energy_corr");
  if (!content_accuracy.defined()) out.push_back("content_accuracy");
  return out;
}

void write_report(const std::filesystem::path& json_path, const std::filesystem::path& table_path,
                  const MetricReport& report) {
  for (const auto& p : {json_path, table_path}) {
    if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  }
  std::ofstream(json_path) << report.to_json().dump(2) << "\n";
  std::ofstream(table_path) << report.to_table();
}

}  // namespace iclvc
