// SPDX-License-Identifier: Apache-2.0
#include "iclvc/commands.hpp"

#include <algorithm>
#include <atomic>
#include <exception>
#include <fstream>
#include <map>
#include <mutex>
#include <thread>

#include "iclvc/archive.hpp"
#include "iclvc/tokenizer.hpp"

namespace iclvc {

namespace {

// Runs fn(i) for i in [0, n) on up to `jobs` threads. Work items must be
// independent; the first exception is rethrown after all threads join.
template <typename Fn>
void parallel_for(std::size_t n, int jobs, Fn fn) {
  const std::size_t workers = std::min<std::size_t>(n, static_cast<std::size_t>(std::max(1, jobs)));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> threads;
  for (std::size_t w = 0; w < workers; ++w) {
    threads.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(error_mutex);
          if (!error) error = std::current_exception();
        }
      }
    });
  }
  for (auto& t : threads) t.join();
  if (error) std::rethrow_exception(error);
}

void write_text_atomic(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out << text;
  }
  fs::rename(tmp, path);
}

void require_exists(const fs::path& p, const std::string& what) {
  if (p.empty()) throw std::invalid_argument(what + " path is required");
  if (!fs::exists(p)) throw std::runtime_error(what + " not found: " + p.string());
}

std::map<std::string, const ToyUtterance*> index_by_id(const Corpus& corpus) {
  std::map<std::string, const ToyUtterance*> out;
  for (const auto& u : corpus.utterances) out[u.id] = &u;
  return out;
}

const ToyUtterance& lookup(const std::map<std::string, const ToyUtterance*>& idx, const std::string& id) {
  const auto it = idx.find(id);
  if (it == idx.end()) throw std::runtime_error("utterance '" + id + "' is not in the corpus");
  return *it->second;
}

fs::path resolve(const fs::path& base, const fs::path& p) { return p.is_absolute() ? p : base / p; }

}  // namespace

PairsManifest load_pairs(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read pairs manifest " + path.string());
  const auto j = nlohmann::json::parse(in);
  if (j.value("format", "") != "iclvc-pairs") throw FormatError(path.string() + ": not a pairs manifest");
  const auto version = j.at("version").get<std::uint32_t>();
  if (version != kPairsVersion) {
    throw FormatError(path.string() + ": pairs manifest version mismatch: found " + std::to_string(version) +
                      ", expected " + std::to_string(kPairsVersion));
  }
  PairsManifest m;
  for (const auto& p : j.at("pairs")) {
    m.pairs.push_back({p.at("source"), p.at("reference"), fs::path(p.at("converted").get<std::string>())});
  }
  return m;
}

void save_pairs(const fs::path& path, const PairsManifest& manifest) {
  nlohmann::json j = {{"format", "iclvc-pairs"}, {"version", kPairsVersion}, {"pairs", nlohmann::json::array()}};
  for (const auto& p : manifest.pairs) {
    j["pairs"].push_back({{"source", p.source}, {"reference", p.reference}, {"converted", p.converted.string()}});
  }
  write_text_atomic(path, j.dump(2) + "\n");
}

void save_mel(const fs::path& path, const Matrix& mel, const std::string& source_id, const std::string& reference_id) {
  Archive a;
  a.kind = "mel";
  a.schema_version = kMelVersion;
  a.meta = {{"source", source_id}, {"reference", reference_id}, {"frames", mel.rows()}};
  a.put("mel", mel);
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  save_archive(path, a);
}

Matrix load_mel(const fs::path& path) { return load_archive(path, "mel", kMelVersion).get("mel"); }

void cmd_gen(const GenOptions& opt) {
  if (opt.out_dir.empty()) throw std::invalid_argument("gen: output directory is required");
  opt.corpus.validate();
  WorldConfig wc;
  wc.seed = opt.world_seed;
  const SynthWorld world(wc);
  const Corpus corpus = generate_corpus(opt.corpus, world);
  save_corpus(opt.out_dir, corpus);

  if (opt.pairs <= 0) return;
  if (corpus.speakers.size() < 2) throw std::invalid_argument("gen: pairs need at least two speakers");
  Rng rng(opt.pairs_seed);
  std::uniform_int_distribution<std::size_t> pick(0, corpus.utterances.size() - 1);
  PairsManifest m;
  while (static_cast<int>(m.pairs.size()) < opt.pairs) {
    const auto& s = corpus.utterances[pick(rng)];
    const auto& r = corpus.utterances[pick(rng)];
    if (s.speaker == r.speaker) continue;
    m.pairs.push_back({s.id, r.id, fs::path("converted") / (s.id + "__" + r.id + ".mel")});
  }
  save_pairs(opt.out_dir / "pairs.json", m);
}

void cmd_fit_tokenizer(const FitTokenizerOptions& opt) {
  require_exists(opt.corpus_dir, "corpus");
  if (opt.out.empty()) throw std::invalid_argument("fit-tokenizer: output path is required");
  const Corpus corpus = load_corpus(opt.corpus_dir);
  if (corpus.utterances.empty()) throw std::invalid_argument("fit-tokenizer: corpus is empty");
  if (std::find(stream_names().begin(), stream_names().end(), opt.stream) == stream_names().end()) {
    throw std::invalid_argument("fit-tokenizer: unknown stream '" + opt.stream + "'");
  }
  const Matrix frames = stack_stream(corpus.utterances, opt.stream);
  const KMeansFit fit = fit_kmeans(frames, opt.k, opt.max_iters, opt.seed, opt.embed_dim);
  if (opt.out.has_parent_path()) fs::create_directories(opt.out.parent_path());
  save_codebook(opt.out, fit.codebook, opt.stream);
}

std::vector<EpochStats> cmd_train(const TrainOptions& opt) {
  require_exists(opt.corpus_dir, "corpus");
  require_exists(opt.codebook, "codebook");
  if (opt.out.empty()) throw std::invalid_argument("train: checkpoint path is required");
  const Corpus corpus = load_corpus(opt.corpus_dir);
  if (corpus.utterances.empty()) throw std::invalid_argument("train: corpus is empty");
  const SynthWorld world(corpus.world);

  std::string stream;
  Codebook codebook = load_codebook(opt.codebook, &stream);
  ModelConfig mc = opt.model;
  mc.stream = stream;
  Rng rng(opt.init_seed);
  VcModel model = VcModel::initialize(mc, std::move(codebook), corpus.world.mel_dim, rng);

  const fs::path log_path = opt.loss_log.empty() ? fs::path(opt.out.string() + ".loss.jsonl") : opt.loss_log;
  if (opt.out.has_parent_path()) fs::create_directories(opt.out.parent_path());
  auto extra = [&](int epoch) {
    return nlohmann::json{{"world", corpus.world.to_json()},
                          {"epoch", epoch},
                          {"train",
                           {{"epochs", opt.train.epochs},
                            {"batch_size", opt.train.batch_size},
                            {"learning_rate", opt.train.learning_rate},
                            {"clip_norm", opt.train.clip_norm},
                            {"seed", opt.train.seed},
                            {"init_seed", opt.init_seed}}}};
  };
  save_checkpoint(opt.out, model, extra(0));
  write_text_atomic(log_path, "");

  std::string log;
  return train(model, world, corpus.utterances, opt.train, [&](const EpochStats& s, const VcModel& m) {
    // Checkpoint first: the log never claims an epoch the checkpoint lacks.
    save_checkpoint(opt.out, m, extra(s.epoch));
    log += nlohmann::json{{"epoch", s.epoch}, {"loss", s.mean_loss}}.dump() + "\n";
    write_text_atomic(log_path, log);
  });
}

namespace {

WorldConfig world_of(const nlohmann::json& extra) {
  if (!extra.contains("world")) throw FormatError("checkpoint has no world description");
  return WorldConfig::from_json(extra.at("world"));
}

}  // namespace

void cmd_convert(const ConvertOptions& opt) {
  require_exists(opt.checkpoint, "checkpoint");
  nlohmann::json extra;
  const VcModel model = load_checkpoint(opt.checkpoint, &extra);
  const SynthWorld world(world_of(extra));

  if (!opt.pairs.empty()) {
    require_exists(opt.pairs, "pairs manifest");
    require_exists(opt.corpus_dir, "corpus");
    const PairsManifest m = load_pairs(opt.pairs);
    const Corpus corpus = load_corpus(opt.corpus_dir);
    const auto idx = index_by_id(corpus);
    const fs::path base = opt.pairs.parent_path();
    parallel_for(m.pairs.size(), opt.jobs, [&](std::size_t i) {
      const auto& p = m.pairs[i];
      const ToyUtterance& src = lookup(idx, p.source);
      const ToyUtterance& ref = lookup(idx, p.reference);
      Rng rng(derive_seed(opt.seed, i));
      const ConversionResult r = convert(model, world, src, ref, rng);
      save_mel(resolve(base, p.converted), r.generated, src.id, ref.id);
    });
    return;
  }

  require_exists(opt.source, "source utterance");
  require_exists(opt.reference, "reference utterance");
  if (opt.out.empty()) throw std::invalid_argument("convert: output path is required");
  const ToyUtterance src = load_utterance(opt.source);
  const ToyUtterance ref = load_utterance(opt.reference);
  Rng rng(derive_seed(opt.seed, 0));
  const ConversionResult r = convert(model, world, src, ref, rng);
  save_mel(opt.out, r.generated, src.id, ref.id);
}

MetricReport cmd_eval(const EvalOptions& opt) {
  require_exists(opt.checkpoint, "checkpoint");
  require_exists(opt.corpus_dir, "corpus");
  require_exists(opt.pairs, "pairs manifest");
  if (opt.out_json.empty() || opt.out_table.empty()) throw std::invalid_argument("eval: report paths are required");
  const VcModel model = load_checkpoint(opt.checkpoint);
  const Corpus corpus = load_corpus(opt.corpus_dir);
  const SynthWorld world(corpus.world);
  const auto idx = index_by_id(corpus);
  const PairsManifest m = load_pairs(opt.pairs);
  if (m.pairs.empty()) throw std::invalid_argument("eval: pairs manifest is empty");
  const fs::path base = opt.pairs.parent_path();

  std::vector<PairMetrics> rows(m.pairs.size());
  parallel_for(m.pairs.size(), opt.jobs, [&](std::size_t i) {
    const auto& p = m.pairs[i];
    const Matrix mel = load_mel(resolve(base, p.converted));
    rows[i] = evaluate_conversion(world, mel, lookup(idx, p.source), lookup(idx, p.reference), model.codebook(),
                                  model.config().stream);
  });
  MetricReport report = aggregate(std::move(rows));
  write_report(opt.out_json, opt.out_table, report);
  const auto nulls = report.null_metrics();
  if (!nulls.empty()) {
    std::string names;
    for (const auto& n : nulls) names += (names.empty() ? "" : ", ") + n;
    throw std::runtime_error("eval: aggregate metrics undefined: " + names);
  }
  return report;
}

}  // namespace iclvc
