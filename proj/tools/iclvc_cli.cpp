// SPDX-License-Identifier: Apache-2.0
// iclvc: command-line front end for the toy ICL voice-conversion pipeline.
//
//   iclvc gen            synthesize a corpus (and optionally a pairs manifest)
//   iclvc fit-tokenizer  k-means codebook over one feature stream
//   iclvc train          masked flow-matching training
//   iclvc convert        one pair, or every pair of a manifest
//   iclvc eval           metric reports for converted pairs
//
// Every flag may also be set from a TOML config file (--config), with a
// section per subcommand; unknown keys are errors. Default artifact paths
// live under the work directory, which ICLVC_CACHE_DIR overrides.

#include <iostream>

#include "CLI11.hpp"
#include "iclvc/commands.hpp"
#include "iclvc/tokenizer.hpp"

namespace {

using iclvc::fs::path;

struct Defaults {
  path work = "iclvc_work";
  path corpus() const { return work / "corpus"; }
  path codebook() const { return work / "codebook.icb"; }
  path checkpoint() const { return work / "model.ckpt"; }
  path pairs() const { return corpus() / "pairs.json"; }
};

void fill(path& p, const path& fallback) {
  if (p.empty()) p = fallback;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Toy in-context-learning voice conversion with flow matching"};
  app.require_subcommand(1);
  app.set_config("--config", "", "TOML config file; flags given on the command line win");
  app.allow_config_extras(CLI::config_extras_mode::error);

  Defaults d;
  app.add_option("--work-dir", d.work, "Directory for default artifact paths")
      ->envname("ICLVC_CACHE_DIR")
      ->capture_default_str();

  // gen
  iclvc::GenOptions gen;
  auto* g = app.add_subcommand("gen", "Synthesize a toy corpus");
  g->add_option("--out", gen.out_dir, "Corpus directory [<work>/corpus]");
  g->add_option("--speakers", gen.corpus.num_speakers, "Number of speakers")->capture_default_str();
  g->add_option("--utterances", gen.corpus.utterances_per_speaker, "Utterances per speaker")->capture_default_str();
  g->add_option("--min-seconds", gen.corpus.min_seconds, "Shortest utterance")->capture_default_str();
  g->add_option("--max-seconds", gen.corpus.max_seconds, "Longest utterance")->capture_default_str();
  g->add_option("--seed", gen.corpus.seed, "Corpus seed")->capture_default_str();
  g->add_option("--world-seed", gen.world_seed, "Generator-world seed")->capture_default_str();
  g->add_option("--pairs", gen.pairs, "Cross-speaker pairs to write to pairs.json (0 = none)")->capture_default_str();
  g->add_option("--pairs-seed", gen.pairs_seed, "Seed for drawing pairs")->capture_default_str();

  // fit-tokenizer
  iclvc::FitTokenizerOptions fit;
  auto* f = app.add_subcommand("fit-tokenizer", "Fit the k-means semantic tokenizer");
  f->add_option("--corpus", fit.corpus_dir, "Corpus directory [<work>/corpus]");
  f->add_option("--out", fit.out, "Codebook file [<work>/codebook.icb]");
  f->add_option("--stream", fit.stream, "Feature stream")
      ->check(CLI::IsMember(iclvc::stream_names()))
      ->capture_default_str();
  f->add_option("-k,--clusters", fit.k, "Codebook size")->capture_default_str();
  f->add_option("--max-iters", fit.max_iters, "Lloyd iteration cap")->capture_default_str();
  f->add_option("--embed-dim", fit.embed_dim, "Token embedding width")->capture_default_str();
  f->add_option("--seed", fit.seed, "k-means++ and embedding seed")->capture_default_str();

  // train
  iclvc::TrainOptions tr;
  std::string variant = "icl";
  std::string solver = "euler";
  auto* t = app.add_subcommand("train", "Train with the masked flow-matching objective");
  t->add_option("--corpus", tr.corpus_dir, "Corpus directory [<work>/corpus]");
  t->add_option("--codebook", tr.codebook, "Codebook file [<work>/codebook.icb]");
  t->add_option("--out", tr.out, "Checkpoint file [<work>/model.ckpt]");
  t->add_option("--loss-log", tr.loss_log, "Per-epoch loss log [<checkpoint>.loss.jsonl]");
  t->add_option("--variant", variant, "Model variant")
      ->check(CLI::IsMember({"icl", "icl+pitch_energy", "icl+prosody_embed"}))
      ->capture_default_str();
  t->add_option("--epochs", tr.train.epochs, "Training epochs")->capture_default_str();
  t->add_option("--batch-size", tr.train.batch_size, "Mini-batch size")->capture_default_str();
  t->add_option("--lr", tr.train.learning_rate, "Adam learning rate")->capture_default_str();
  t->add_option("--clip", tr.train.clip_norm, "Global gradient-norm clip")->capture_default_str();
  t->add_option("--seed", tr.train.seed, "Batching, mask and noise seed")->capture_default_str();
  t->add_option("--init-seed", tr.init_seed, "Parameter initialization seed")->capture_default_str();
  t->add_option("--width", tr.model.backbone.width, "Transformer width")->capture_default_str();
  t->add_option("--blocks", tr.model.backbone.num_blocks, "Transformer blocks")->capture_default_str();
  t->add_option("--heads", tr.model.backbone.num_heads, "Attention heads")->capture_default_str();
  t->add_option("--ffn", tr.model.backbone.ffn_dim, "Feed-forward width")->capture_default_str();
  t->add_option("--sigma-min", tr.model.flow.sigma_min, "Probability-path floor")->capture_default_str();
  t->add_option("--ode-steps", tr.model.flow.ode_steps, "Integration steps at inference")->capture_default_str();
  t->add_option("--solver", solver, "ODE solver")->check(CLI::IsMember({"euler", "midpoint"}))->capture_default_str();

  // convert
  iclvc::ConvertOptions cv;
  auto* c = app.add_subcommand("convert", "Convert a source utterance to a reference voice");
  c->add_option("--checkpoint", cv.checkpoint, "Checkpoint file [<work>/model.ckpt]");
  c->add_option("--source", cv.source, "Source utterance file (single-pair mode)");
  c->add_option("--reference", cv.reference, "Reference utterance file (single-pair mode)");
  c->add_option("--out", cv.out, "Converted mel file (single-pair mode)");
  c->add_option("--pairs", cv.pairs, "Pairs manifest (batch mode) [<work>/corpus/pairs.json without --source]");
  c->add_option("--corpus", cv.corpus_dir, "Corpus for batch mode [<work>/corpus]");
  c->add_option("--seed", cv.seed, "Prior-noise seed")->capture_default_str();
  c->add_option("-j,--jobs", cv.jobs, "Parallel pairs in batch mode")->capture_default_str();

  // eval
  iclvc::EvalOptions ev;
  auto* e = app.add_subcommand("eval", "Score converted pairs");
  e->add_option("--checkpoint", ev.checkpoint, "Checkpoint file [<work>/model.ckpt]");
  e->add_option("--corpus", ev.corpus_dir, "Corpus directory [<work>/corpus]");
  e->add_option("--pairs", ev.pairs, "Pairs manifest [<work>/corpus/pairs.json]");
  e->add_option("--out-json", ev.out_json, "JSON report [<work>/report.json]");
  e->add_option("--out-table", ev.out_table, "Text table report [<work>/report.txt]");
  e->add_option("-j,--jobs", ev.jobs, "Parallel pairs")->capture_default_str();

  CLI11_PARSE(app, argc, argv);

  try {
    if (g->parsed()) {
      fill(gen.out_dir, d.corpus());
      iclvc::cmd_gen(gen);
      std::cout << "corpus written to " << gen.out_dir.string() << "\n";
    } else if (f->parsed()) {
      fill(fit.corpus_dir, d.corpus());
      fill(fit.out, d.codebook());
      iclvc::cmd_fit_tokenizer(fit);
      std::cout << "codebook written to " << fit.out.string() << "\n";
    } else if (t->parsed()) {
      fill(tr.corpus_dir, d.corpus());
      fill(tr.codebook, d.codebook());
      fill(tr.out, d.checkpoint());
      tr.model.variant = iclvc::parse_variant(variant);
      tr.model.flow.solver = solver == "midpoint" ? iclvc::Solver::kMidpoint : iclvc::Solver::kEuler;
      for (const auto& s : iclvc::cmd_train(tr)) {
        std::cout << "epoch " << s.epoch << " loss " << s.mean_loss << "\n";
      }
      std::cout << "checkpoint written to " << tr.out.string() << "\n";
    } else if (c->parsed()) {
      fill(cv.checkpoint, d.checkpoint());
      // without a single source, batch-convert the default pairs manifest
      if (cv.source.empty()) fill(cv.pairs, d.pairs());
      if (!cv.pairs.empty()) fill(cv.corpus_dir, d.corpus());
      iclvc::cmd_convert(cv);
    } else if (e->parsed()) {
      fill(ev.checkpoint, d.checkpoint());
      fill(ev.corpus_dir, d.corpus());
      fill(ev.pairs, d.pairs());
      fill(ev.out_json, d.work / "report.json");
      fill(ev.out_table, d.work / "report.txt");
      const auto report = iclvc::cmd_eval(ev);
      std::cout << report.to_table();
    }
  } catch (const std::exception& ex) {
    std::cerr << "iclvc: " << ex.what() << "\n";
    return 1;
  }
  return 0;
}
