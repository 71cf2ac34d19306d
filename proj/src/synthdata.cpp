// SPDX-License-Identifier: Apache-2.0
#include "iclvc/synthdata.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numbers>
#include <sstream>

#include "iclvc/archive.hpp"

namespace iclvc {

namespace {

constexpr double kPitchReferenceHz = 160.0;

Matrix scaled_normal(Eigen::Index rows, Eigen::Index cols, double scale, Rng& rng) {
  return standard_normal(rows, cols, rng) * scale;
}

std::string utterance_id(int speaker, int index) {
  std::ostringstream os;
  os << "spk" << std::setw(3) << std::setfill('0') << speaker << "_u" << std::setw(3) << std::setfill('0')
     << index;
  return os.str();
}

std::vector<int> draw_content(int frames, int num_symbols, Rng& rng) {
  std::uniform_int_distribution<int> lead(5, 15);
  std::uniform_int_distribution<int> seg_len(4, 12);
  std::uniform_int_distribution<int> pause_len(6, 15);
  std::uniform_int_distribution<int> symbol(1, num_symbols - 1);
  std::bernoulli_distribution pause(0.08);

  std::vector<int> content;
  content.reserve(static_cast<std::size_t>(frames));
  content.insert(content.end(), static_cast<std::size_t>(lead(rng)), 0);
  const int tail = lead(rng);
  int prev = 0;
  while (static_cast<int>(content.size()) < frames - tail) {
    if (prev != 0 && pause(rng)) {
      content.insert(content.end(), static_cast<std::size_t>(pause_len(rng)), 0);
      prev = 0;
      continue;
    }
    int s = symbol(rng);
    while (s == prev) s = symbol(rng);
    content.insert(content.end(), static_cast<std::size_t>(seg_len(rng)), s);
    prev = s;
  }
  content.resize(static_cast<std::size_t>(frames - tail));
  content.insert(content.end(), static_cast<std::size_t>(tail), 0);
  return content;
}

double contour_shape(int cls, double u) {
  switch (static_cast<ContourClass>(cls)) {
    case ContourClass::kRising: return -1.0 + 2.0 * u;
    case ContourClass::kFalling: return 1.0 - 2.0 * u;
    case ContourClass::kHat: return 1.0 - 2.0 * std::abs(2.0 * u - 1.0);
    case ContourClass::kValley: return -1.0 + 2.0 * std::abs(2.0 * u - 1.0);
    case ContourClass::kWave: return std::sin(2.0 * std::numbers::pi * 1.5 * u);
  }
  return 0.0;
}

}  // namespace

nlohmann::json WorldConfig::to_json() const {
  return {{"mel_dim", mel_dim},
          {"content_dim", content_dim},
          {"timbre_dim", timbre_dim},
          {"feat_dim", feat_dim},
          {"num_symbols", num_symbols},
          {"symbol_code_dim", symbol_code_dim},
          {"pitch_gain", pitch_gain},
          {"energy_gain", energy_gain},
          {"formant_coupling", formant_coupling},
          {"mel_noise", mel_noise},
          {"feature_noise", feature_noise},
          {"feature_speaker_leak", feature_speaker_leak},
          {"seed", seed}};
}

WorldConfig WorldConfig::from_json(const nlohmann::json& j) {
  WorldConfig c;
  c.mel_dim = j.at("mel_dim");
  c.content_dim = j.at("content_dim");
  c.timbre_dim = j.at("timbre_dim");
  c.feat_dim = j.at("feat_dim");
  c.num_symbols = j.at("num_symbols");
  c.symbol_code_dim = j.at("symbol_code_dim");
  c.pitch_gain = j.at("pitch_gain");
  c.energy_gain = j.at("energy_gain");
  c.formant_coupling = j.at("formant_coupling");
  c.mel_noise = j.at("mel_noise");
  c.feature_noise = j.at("feature_noise");
  c.feature_speaker_leak = j.at("feature_speaker_leak");
  c.seed = j.at("seed");
  return c;
}

SynthWorld::SynthWorld(const WorldConfig& config) : config_(config) {
  const int f = config_.mel_dim;
  if (config_.content_dim + config_.timbre_dim + 2 > f) {
    throw std::invalid_argument("synth world: content + timbre + 2 prosody dims exceed mel_dim");
  }
  if (config_.num_symbols < 2) throw std::invalid_argument("synth world: need at least 2 symbols");
  Rng rng(config_.seed);
  const Matrix q = Eigen::HouseholderQR<Matrix>(standard_normal(f, f, rng)).householderQ();
  content_basis_ = q.leftCols(config_.content_dim);
  timbre_basis_ = q.middleCols(config_.content_dim, config_.timbre_dim);
  pitch_dir_ = q.col(config_.content_dim + config_.timbre_dim).transpose();
  energy_dir_ = q.col(config_.content_dim + config_.timbre_dim + 1).transpose();

  symbol_content_ = standard_normal(config_.num_symbols, config_.content_dim, rng);
  symbol_content_.row(0).setZero();
  formant_ = scaled_normal(config_.timbre_dim, config_.content_dim, 1.0 / std::sqrt(config_.timbre_dim), rng);
  symbol_codes_ = standard_normal(config_.num_symbols, config_.symbol_code_dim, rng);

  const double code_scale = 1.0 / std::sqrt(static_cast<double>(config_.symbol_code_dim));
  for (const auto& name : stream_names()) {
    FeatureStream s;
    s.current = scaled_normal(config_.symbol_code_dim, config_.feat_dim, 1.5 * code_scale, rng);
    s.context = scaled_normal(config_.symbol_code_dim, config_.feat_dim, 0.6 * code_scale, rng);
    s.leak = scaled_normal(config_.timbre_dim, config_.feat_dim, 1.0 / std::sqrt(config_.timbre_dim), rng);
    streams_.emplace(name, std::move(s));
  }
}

const FeatureStream& SynthWorld::stream(const std::string& name) const {
  const auto it = streams_.find(name);
  if (it == streams_.end()) throw std::invalid_argument("unknown feature stream '" + name + "'");
  return it->second;
}

RowVector SynthWorld::voiced_content(int symbol, const RowVector& timbre) const {
  const RowVector scale =
      (config_.formant_coupling * (timbre * formant_).array().tanh() + 1.0).matrix();
  return symbol_content_.row(symbol).cwiseProduct(scale);
}

Matrix SynthWorld::render_clean(const std::vector<int>& content, const RowVector& timbre,
                                const std::vector<double>& pitch, const std::vector<double>& energy) const {
  const auto T = static_cast<Eigen::Index>(content.size());
  if (pitch.size() != content.size() || energy.size() != content.size()) {
    throw ShapeError("render_clean: factor lengths differ");
  }
  if (timbre.size() != config_.timbre_dim) throw ShapeError("render_clean: timbre dim mismatch");
  Matrix scaled(config_.num_symbols, config_.content_dim);
  for (int s = 0; s < config_.num_symbols; ++s) scaled.row(s) = voiced_content(s, timbre);
  const RowVector timbre_part = timbre * timbre_basis_.transpose();

  Matrix mel(T, config_.mel_dim);
  for (Eigen::Index t = 0; t < T; ++t) {
    const auto i = static_cast<std::size_t>(t);
    const double lp = pitch[i] > 0.0 ? std::log2(pitch[i] / kPitchReferenceHz) : 0.0;
    mel.row(t) = scaled.row(content[i]) * content_basis_.transpose() + timbre_part +
                 config_.pitch_gain * lp * pitch_dir_ + config_.energy_gain * energy[i] * energy_dir_;
  }
  return mel;
}

Matrix SynthWorld::render_features(const std::vector<int>& content, const std::string& stream_name) const {
  return render_features(content, RowVector::Zero(config_.timbre_dim), stream_name, nullptr);
}

Matrix SynthWorld::render_features(const std::vector<int>& content, const RowVector& timbre,
                                   const std::string& stream_name, Rng* noise) const {
  const FeatureStream& s = stream(stream_name);
  const auto T = static_cast<Eigen::Index>(content.size());
  Matrix feats(T, config_.feat_dim);
  const RowVector leak = noise ? RowVector(config_.feature_speaker_leak * (timbre * s.leak))
                               : RowVector(RowVector::Zero(config_.feat_dim));
  int prev_segment = 0;
  std::normal_distribution<double> normal(0.0, config_.feature_noise);
  for (Eigen::Index t = 0; t < T; ++t) {
    const int c = content[static_cast<std::size_t>(t)];
    if (t > 0 && content[static_cast<std::size_t>(t - 1)] != c) prev_segment = content[static_cast<std::size_t>(t - 1)];
    RowVector pre = symbol_codes_.row(c) * s.current + symbol_codes_.row(prev_segment) * s.context;
    feats.row(t) = pre.array().tanh().matrix() + leak;
    if (noise) {
      for (Eigen::Index j = 0; j < feats.cols(); ++j) feats(t, j) += normal(*noise);
    }
  }
  return feats;
}

void CorpusSpec::validate() const {
  if (num_speakers < 1 || utterances_per_speaker < 1) throw std::invalid_argument("corpus: counts must be positive");
  if (!(min_seconds > 0.0) || max_seconds < min_seconds) throw std::invalid_argument("corpus: bad duration range");
  if (!(frame_rate > 0.0)) throw std::invalid_argument("corpus: frame_rate must be positive");
}

nlohmann::json CorpusSpec::to_json() const {
  return {{"num_speakers", num_speakers},
          {"utterances_per_speaker", utterances_per_speaker},
          {"min_seconds", min_seconds},
          {"max_seconds", max_seconds},
          {"frame_rate", frame_rate},
          {"seed", seed}};
}

CorpusSpec CorpusSpec::from_json(const nlohmann::json& j) {
  CorpusSpec s;
  s.num_speakers = j.at("num_speakers");
  s.utterances_per_speaker = j.at("utterances_per_speaker");
  s.min_seconds = j.at("min_seconds");
  s.max_seconds = j.at("max_seconds");
  s.frame_rate = j.at("frame_rate");
  s.seed = j.at("seed");
  return s;
}

Speaker draw_speaker(int id, Rng& rng, const WorldConfig& world) {
  Speaker s;
  s.id = id;
  s.timbre = standard_normal(1, world.timbre_dim, rng);
  std::uniform_real_distribution<double> log_f0(std::log(100.0), std::log(240.0));
  std::uniform_real_distribution<double> range(0.25, 0.6);
  s.f0_mean = std::exp(log_f0(rng));
  s.f0_range = range(rng);
  return s;
}

ToyUtterance generate_utterance(const SynthWorld& world, const Speaker& speaker, int frames,
                                std::uint64_t seed, int contour_class) {
  if (frames < 1) throw std::invalid_argument("generate_utterance: frames must be >= 1");
  const WorldConfig& wc = world.config();
  Rng rng(seed);
  ToyUtterance u;
  u.speaker = speaker.id;
  u.timbre = speaker.timbre;
  u.content = draw_content(frames, wc.num_symbols, rng);

  std::uniform_int_distribution<int> cls(0, kNumContourClasses - 1);
  const int drawn = cls(rng);
  u.contour_class = contour_class >= 0 ? contour_class : drawn;

  std::uniform_real_distribution<double> wiggle_freq(2.0, 5.0);
  std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
  std::uniform_real_distribution<double> jitter(-0.08, 0.08);
  const double fw = wiggle_freq(rng), pw = phase(rng);
  const double fe = wiggle_freq(rng), pe = phase(rng);

  u.pitch.assign(static_cast<std::size_t>(frames), 0.0);
  u.energy.assign(static_cast<std::size_t>(frames), 0.0);
  double segment_jitter = 0.0;
  for (int t = 0; t < frames; ++t) {
    const auto i = static_cast<std::size_t>(t);
    if (t == 0 || u.content[i] != u.content[i - 1]) segment_jitter = jitter(rng);
    if (u.content[i] == 0) continue;
    const double pos = frames > 1 ? static_cast<double>(t) / (frames - 1) : 0.0;
    const double shape = contour_shape(u.contour_class, pos);
    const double wiggle = 0.35 * std::sin(2.0 * std::numbers::pi * fw * pos + pw);
    u.pitch[i] = speaker.f0_mean * std::exp2(0.5 * speaker.f0_range * (shape + wiggle));
    u.energy[i] = 1.0 + 0.25 * (0.6 * shape + 0.4 * std::sin(2.0 * std::numbers::pi * fe * pos + pe)) + segment_jitter;
  }
  rerender(world, u, derive_seed(seed, 7));
  return u;
}

void rerender(const SynthWorld& world, ToyUtterance& u, std::uint64_t noise_seed) {
  const WorldConfig& wc = world.config();
  Rng rng(noise_seed);
  u.mel = world.render_clean(u.content, u.timbre, u.pitch, u.energy);
  std::normal_distribution<double> noise(0.0, wc.mel_noise);
  for (Eigen::Index i = 0; i < u.mel.size(); ++i) u.mel.data()[i] += noise(rng);
  u.ssl.clear();
  for (const auto& name : stream_names()) u.ssl[name] = world.render_features(u.content, u.timbre, name, &rng);
}

Corpus generate_corpus(const CorpusSpec& spec, const SynthWorld& world) {
  spec.validate();
  Corpus c;
  c.spec = spec;
  c.world = world.config();
  Rng rng(spec.seed);
  for (int s = 0; s < spec.num_speakers; ++s) c.speakers.push_back(draw_speaker(s, rng, world.config()));
  std::uniform_real_distribution<double> seconds(spec.min_seconds, spec.max_seconds);
  for (int s = 0; s < spec.num_speakers; ++s) {
    for (int k = 0; k < spec.utterances_per_speaker; ++k) {
      const int frames = std::max(1, static_cast<int>(std::lround(seconds(rng) * spec.frame_rate)));
      const auto idx = static_cast<std::uint64_t>(s * spec.utterances_per_speaker + k);
      ToyUtterance u = generate_utterance(world, c.speakers[static_cast<std::size_t>(s)], frames,
                                          derive_seed(spec.seed, idx));
      u.id = utterance_id(s, k);
      c.utterances.push_back(std::move(u));
    }
  }
  return c;
}

Matrix stack_stream(const std::vector<ToyUtterance>& utterances, const std::string& stream) {
  Eigen::Index rows = 0;
  Eigen::Index cols = -1;
  for (const auto& u : utterances) {
    const auto it = u.ssl.find(stream);
    if (it == u.ssl.end()) throw std::invalid_argument("utterance " + u.id + " has no feature stream '" + stream + "'");
    if (cols >= 0 && it->second.cols() != cols) throw ShapeError("stack_stream: feature dims differ");
    cols = it->second.cols();
    rows += it->second.rows();
  }
  Matrix out(rows, std::max<Eigen::Index>(cols, 0));
  Eigen::Index at = 0;
  for (const auto& u : utterances) {
    const Matrix& f = u.ssl.at(stream);
    out.middleRows(at, f.rows()) = f;
    at += f.rows();
  }
  return out;
}

RowVector timbre_probe(const SynthWorld& world, const Matrix& mel) {
  if (mel.rows() < 10) {
    throw std::invalid_argument("timbre_probe: need >= 10 frames, got " + std::to_string(mel.rows()));
  }
  if (mel.cols() != world.config().mel_dim) throw ShapeError("timbre_probe: mel dim mismatch");
  const RowVector mean = mel.colwise().mean();
  return mean * world.timbre_basis();
}

std::vector<int> content_probe(const SynthWorld& world, const Matrix& mel) {
  const WorldConfig& wc = world.config();
  if (mel.cols() != wc.mel_dim) throw ShapeError("content_probe: mel dim mismatch");
  const RowVector timbre = mel.rows() >= 10 ? timbre_probe(world, mel) : RowVector(RowVector::Zero(wc.timbre_dim));
  Matrix candidates(wc.num_symbols, wc.content_dim);
  for (int s = 0; s < wc.num_symbols; ++s) candidates.row(s) = world.voiced_content(s, timbre);
  const Matrix projected = mel * world.content_basis();
  std::vector<int> out(static_cast<std::size_t>(mel.rows()));
  for (Eigen::Index t = 0; t < mel.rows(); ++t) {
    Eigen::Index best;
    (candidates.rowwise() - projected.row(t)).rowwise().squaredNorm().minCoeff(&best);
    out[static_cast<std::size_t>(t)] = static_cast<int>(best);
  }
  return out;
}

void save_utterance(const std::filesystem::path& path, const ToyUtterance& u) {
  Archive a;
  a.kind = "utterance";
  a.schema_version = kUtteranceVersion;
  a.meta = {{"id", u.id}, {"speaker", u.speaker}, {"contour_class", u.contour_class}};
  a.put("mel", u.mel);
  a.put("content", column_from(u.content));
  a.put("pitch", column_from(u.pitch));
  a.put("energy", column_from(u.energy));
  a.put("timbre", u.timbre);
  for (const auto& [name, feats] : u.ssl) a.put("ssl." + name, feats);
  save_archive(path, a);
}

ToyUtterance load_utterance(const std::filesystem::path& path) {
  const Archive a = load_archive(path, "utterance", kUtteranceVersion);
  ToyUtterance u;
  u.id = a.meta.at("id");
  u.speaker = a.meta.at("speaker");
  u.contour_class = a.meta.at("contour_class");
  u.mel = a.get("mel");
  u.content = to_ints(a.get("content"));
  u.pitch = to_doubles(a.get("pitch"));
  u.energy = to_doubles(a.get("energy"));
  u.timbre = a.get("timbre");
  for (const auto& name : a.names()) {
    if (name.rfind("ssl.", 0) == 0) u.ssl[name.substr(4)] = a.get(name);
  }
  const auto T = static_cast<std::size_t>(u.mel.rows());
  if (u.content.size() != T || u.pitch.size() != T || u.energy.size() != T) {
    throw FormatError(path.string() + ": utterance fields are not frame-aligned");
  }
  return u;
}

void save_corpus(const std::filesystem::path& dir, const Corpus& corpus) {
  std::filesystem::create_directories(dir);
  nlohmann::json manifest;
  manifest["format"] = "iclvc-corpus";
  manifest["version"] = kManifestVersion;
  manifest["spec"] = corpus.spec.to_json();
  manifest["world"] = corpus.world.to_json();
  manifest["speakers"] = nlohmann::json::array();
  for (const auto& s : corpus.speakers) {
    manifest["speakers"].push_back({{"id", s.id},
                                    {"f0_mean", s.f0_mean},
                                    {"f0_range", s.f0_range},
                                    {"timbre", std::vector<double>(s.timbre.data(), s.timbre.data() + s.timbre.size())}});
  }
  manifest["utterances"] = nlohmann::json::array();
  for (const auto& u : corpus.utterances) {
    const std::string file = u.id + ".utt";
    save_utterance(dir / file, u);
    manifest["utterances"].push_back({{"id", u.id}, {"speaker", u.speaker}, {"frames", u.frames()}, {"file", file}});
  }
  const auto tmp = dir / "manifest.json.tmp";
  {
    std::ofstream out(tmp);
    out << manifest.dump(2) << "\n";
  }
  std::filesystem::rename(tmp, dir / "manifest.json");
}

Corpus load_corpus(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw std::runtime_error("no corpus manifest in " + dir.string());
  const auto manifest = nlohmann::json::parse(in);
  if (manifest.value("format", "") != "iclvc-corpus") throw FormatError(dir.string() + ": not a corpus manifest");
  const auto version = manifest.at("version").get<std::uint32_t>();
  if (version != kManifestVersion) {
    throw FormatError(dir.string() + ": corpus version mismatch: found " + std::to_string(version) + ", expected " +
                      std::to_string(kManifestVersion));
  }
  Corpus c;
  c.spec = CorpusSpec::from_json(manifest.at("spec"));
  c.world = WorldConfig::from_json(manifest.at("world"));
  for (const auto& s : manifest.at("speakers")) {
    Speaker sp;
    sp.id = s.at("id");
    sp.f0_mean = s.at("f0_mean");
    sp.f0_range = s.at("f0_range");
    const auto t = s.at("timbre").get<std::vector<double>>();
    sp.timbre = Eigen::Map<const RowVector>(t.data(), static_cast<Eigen::Index>(t.size()));
    c.speakers.push_back(sp);
  }
  for (const auto& u : manifest.at("utterances")) {
    c.utterances.push_back(load_utterance(dir / u.at("file").get<std::string>()));
  }
  return c;
}

}  // namespace iclvc
