// SPDX-License-Identifier: Apache-2.0
#include "iclvc/model.hpp"

#include "iclvc/archive.hpp"

namespace iclvc {

std::string to_string(Variant v) {
  switch (v) {
    case Variant::kIcl: return "icl";
    case Variant::kIclPitchEnergy: return "icl+pitch_energy";
    case Variant::kIclProsodyEmbed: return "icl+prosody_embed";
  }
  return "?";
}

Variant parse_variant(const std::string& s) {
  if (s == "icl") return Variant::kIcl;
  if (s == "icl+pitch_energy") return Variant::kIclPitchEnergy;
  if (s == "icl+prosody_embed") return Variant::kIclProsodyEmbed;
  throw std::invalid_argument("unknown variant '" + s + "' (expected icl, icl+pitch_energy, icl+prosody_embed)");
}

nlohmann::json ModelConfig::to_json() const {
  return {{"variant", to_string(variant)},
          {"stream", stream},
          {"prosody_table_dim", prosody_table_dim},
          {"prosody_embed_dim", prosody_embed_dim},
          {"prosody_seed", prosody_seed},
          {"backbone", backbone.to_json()},
          {"flow",
           {{"sigma_min", flow.sigma_min},
            {"ode_steps", flow.ode_steps},
            {"solver", flow.solver == Solver::kEuler ? "euler" : "midpoint"}}},
          {"mask",
           {{"frame_rate", mask.frame_rate},
            {"min_unmasked_seconds", mask.min_unmasked_seconds},
            {"max_unmasked_seconds", mask.max_unmasked_seconds}}}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.variant = parse_variant(j.at("variant"));
  c.stream = j.at("stream");
  c.prosody_table_dim = j.at("prosody_table_dim");
  c.prosody_embed_dim = j.at("prosody_embed_dim");
  c.prosody_seed = j.at("prosody_seed");
  c.backbone = BackboneConfig::from_json(j.at("backbone"));
  const auto& f = j.at("flow");
  c.flow.sigma_min = f.at("sigma_min");
  c.flow.ode_steps = f.at("ode_steps");
  c.flow.solver = f.at("solver").get<std::string>() == "midpoint" ? Solver::kMidpoint : Solver::kEuler;
  const auto& m = j.at("mask");
  c.mask.frame_rate = m.at("frame_rate");
  c.mask.min_unmasked_seconds = m.at("min_unmasked_seconds");
  c.mask.max_unmasked_seconds = m.at("max_unmasked_seconds");
  return c;
}

int VcModel::prosody_channels() const {
  switch (config_.variant) {
    case Variant::kIcl: return 0;
    case Variant::kIclPitchEnergy: return 2 * config_.prosody_table_dim;
    case Variant::kIclProsodyEmbed: return config_.prosody_embed_dim;
  }
  return 0;
}

VcModel VcModel::initialize(ModelConfig config, Codebook codebook, int mel_dim, Rng& rng) {
  config.flow.validate();
  VcModel m;
  m.config_ = std::move(config);
  m.codebook_ = std::move(codebook);
  if (m.config_.variant == Variant::kIclPitchEnergy) {
    m.tables_ = ProsodyTables::initialize(m.config_.prosody_table_dim, rng);
  }
  if (m.config_.variant == Variant::kIclProsodyEmbed) {
    m.encoder_.emplace(m.config_.prosody_embed_dim, m.config_.prosody_seed);
  }
  m.config_.backbone.input_dim = m.codebook_.embed_dim() + mel_dim + m.prosody_channels();
  m.config_.backbone.output_dim = mel_dim;
  m.backbone_ = Backbone::initialize(m.config_.backbone, rng);
  return m;
}

Conditioning VcModel::condition(const SynthWorld& world, const ToyUtterance& utt, int cents) const {
  Conditioning c;
  const auto it = utt.ssl.find(config_.stream);
  if (it == utt.ssl.end()) {
    throw std::invalid_argument("utterance " + utt.id + " has no feature stream '" + config_.stream + "'");
  }
  c.tokens = assign(codebook_, it->second);
  c.semantic = embed(codebook_, c.tokens);
  if (config_.variant == Variant::kIclPitchEnergy) {
    c.prosody_tokens = tokenize_prosody(normalize(extract_contour(utt)));
    c.prosody = tables_->embed(*c.prosody_tokens);
  } else if (config_.variant == Variant::kIclProsodyEmbed) {
    c.prosody = prosody_embed(world, utt, *encoder_, cents);
  }
  return c;
}

std::vector<std::pair<std::string, Matrix*>> VcModel::trainable() {
  std::vector<std::pair<std::string, Matrix*>> out;
  for (auto& e : backbone_.params().entries) out.emplace_back("backbone/" + e.name, &e.value);
  out.emplace_back("codebook/embed_table", &codebook_.embed_table);
  if (tables_) {
    out.emplace_back("prosody/pitch_table", &tables_->pitch);
    out.emplace_back("prosody/energy_table", &tables_->energy);
  }
  return out;
}

std::vector<std::pair<std::string, const Matrix*>> VcModel::trainable() const {
  std::vector<std::pair<std::string, const Matrix*>> out;
  for (auto& [name, m] : const_cast<VcModel*>(this)->trainable()) out.emplace_back(name, m);
  return out;
}

ConversionResult convert(const VcModel& model, const SynthWorld& world, const ToyUtterance& source,
                         const ToyUtterance& reference, Rng& rng) {
  // The toy encoder is invariant to the perturbation, so inference skips it.
  const Conditioning ref = model.condition(world, reference, 0);
  const Conditioning src = model.condition(world, source, 0);
  ConversionResult r;
  r.prompt = build_inference_prompt(reference.mel, ref.semantic, src.semantic, ref.prosody_ptr(),
                                    src.prosody_ptr(), rng);
  const Matrix* p = r.prompt.p_concat ? &*r.prompt.p_concat : nullptr;
  r.integrated = integrate(model.backbone(), r.prompt.m_init, r.prompt.s_concat, p, r.prompt.mask,
                           r.prompt.m_init, model.config().flow);
  r.generated = extract_generated(r.prompt, r.integrated);
  return r;
}

void save_checkpoint(const std::filesystem::path& path, const VcModel& model, const nlohmann::json& extra) {
  Archive a;
  a.kind = "checkpoint";
  a.schema_version = kCheckpointVersion;
  a.meta = {{"model", model.config().to_json()}, {"extra", extra.is_null() ? nlohmann::json::object() : extra}};
  a.put("codebook/centroids", model.codebook().centroids);
  for (const auto& [name, m] : model.trainable()) a.put(name, *m);
  save_archive(path, a);
}

VcModel load_checkpoint(const std::filesystem::path& path, nlohmann::json* extra) {
  const Archive a = load_archive(path, "checkpoint", kCheckpointVersion);
  VcModel m;
  m.config_ = ModelConfig::from_json(a.meta.at("model"));
  m.codebook_.centroids = a.get("codebook/centroids");
  m.codebook_.embed_table = a.get("codebook/embed_table");
  if (m.config_.variant == Variant::kIclPitchEnergy) {
    m.tables_ = ProsodyTables{a.get("prosody/pitch_table"), a.get("prosody/energy_table")};
  }
  if (m.config_.variant == Variant::kIclProsodyEmbed) {
    m.encoder_.emplace(m.config_.prosody_embed_dim, m.config_.prosody_seed);
  }
  NetworkParams params;
  for (const auto& [name, value] : a.arrays) {
    if (name.rfind("backbone/", 0) == 0) params.entries.push_back({name.substr(9), value});
  }
  m.backbone_ = Backbone(m.config_.backbone, std::move(params));
  if (extra) *extra = a.meta.at("extra");
  return m;
}

}  // namespace iclvc
