#pragma once

// The continual-learning method families: freeze policies, low-rank wrapping
// of attention projections, adapter stacks, the parallel narrow encoder,
// rehearsal quotas, and parameter accounting. Attachment happens before the
// freeze policy; freshly added parameters always stay trainable.

#include <cmath>
#include <set>
#include <string>
#include <vector>

#include "ckl/model.hpp"

namespace ckl {

struct LoraConfig {
  int rank = 4;
  float scaling = 1.0f;
  std::vector<std::string> targets = {"wq", "wv"};
};

struct KadapterConfig {
  int k = 2;
  std::vector<int> at;  // attachment layers; empty = evenly spaced
};

struct ModularConfig {
  int width = 0;  // small-encoder width; 0 = half the model width
};

struct MixReviewConfig {
  double mix_ratio = 0.7;
  double mix_decay = 4.0;
};

struct RecAdamConfig {
  double gamma = 5000.0;
  double t0 = 250.0;
  double k_anneal = 0.5;
};

struct MethodConfig {
  std::string kind = "vanilla";
  LoraConfig lora;
  KadapterConfig kadapter;
  ModularConfig modular;
  MixReviewConfig mixreview;
  RecAdamConfig recadam;

  static const std::set<std::string>& kinds() {
    static const std::set<std::string> k = {"initial", "vanilla", "recadam", "mixreview",
                                            "lora",    "kadapter", "modular"};
    return k;
  }

  void validate() const {
    if (!kinds().count(kind)) throw ConfigError("method: unknown kind '" + kind + "'");
    if (kind == "lora") {
      if (lora.rank < 1) throw ConfigError("lora: rank must be >= 1");
      if (lora.scaling <= 0.0f) throw ConfigError("lora: scaling must be positive");
      if (lora.targets.empty()) throw ConfigError("lora: no target projections");
      std::set<std::string> seen;
      for (const auto& t : lora.targets) {
        if (t != "wq" && t != "wk" && t != "wv" && t != "wo")
          throw ConfigError("lora: unknown target projection '" + t + "'");
        if (!seen.insert(t).second) throw ConfigError("lora: duplicate target projection '" + t + "'");
      }
    }
    if (kind == "kadapter" && kadapter.k < 1) throw ConfigError("kadapter: k must be >= 1");
    if (kind == "modular" && modular.width < 0) throw ConfigError("modular: negative width");
    if (kind == "mixreview") {
      if (mixreview.mix_ratio <= 0.0 || mixreview.mix_ratio > 1.0)
        throw ConfigError("mixreview: mix_ratio out of (0,1]");
      if (mixreview.mix_decay <= 1.0) throw ConfigError("mixreview: mix_decay must exceed 1");
    }
    if (kind == "recadam") {
      if (recadam.gamma <= 0.0) throw ConfigError("recadam: gamma must be positive");
      if (recadam.k_anneal <= 0.0) throw ConfigError("recadam: k_anneal must be positive");
      if (recadam.t0 < 0.0) throw ConfigError("recadam: negative t0");
    }
  }

  nlohmann::json to_json() const {
    validate();
    nlohmann::json j;
    j["kind"] = kind;
    if (kind == "lora")
      j["lora"] = {{"rank", lora.rank}, {"scaling", lora.scaling}, {"targets", lora.targets}};
    if (kind == "kadapter") j["kadapter"] = {{"k", kadapter.k}, {"at", kadapter.at}};
    if (kind == "modular") j["modular"] = {{"width", modular.width}};
    if (kind == "mixreview")
      j["mixreview"] = {{"mix_ratio", mixreview.mix_ratio}, {"mix_decay", mixreview.mix_decay}};
    if (kind == "recadam")
      j["recadam"] = {{"gamma", recadam.gamma}, {"t0", recadam.t0}, {"k_anneal", recadam.k_anneal}};
    return j;
  }

  static MethodConfig from_json(const nlohmann::json& j) {
    MethodConfig c;
    c.kind = j.at("kind").get<std::string>();
    if (!kinds().count(c.kind)) throw ConfigError("method: unknown kind '" + c.kind + "'");
    for (const auto& [key, value] : j.items()) {
      if (key == "kind") continue;
      if (!kinds().count(key)) throw ConfigError("method: unknown key '" + key + "'");
      if (key != c.kind)
        throw ConfigError("method: sub-config '" + key + "' present but kind is '" + c.kind + "'");
      if (key == "lora") {
        c.lora.rank = value.at("rank").get<int>();
        c.lora.scaling = value.at("scaling").get<float>();
        c.lora.targets = value.at("targets").get<std::vector<std::string>>();
      } else if (key == "kadapter") {
        c.kadapter.k = value.at("k").get<int>();
        c.kadapter.at = value.at("at").get<std::vector<int>>();
      } else if (key == "modular") {
        c.modular.width = value.at("width").get<int>();
      } else if (key == "mixreview") {
        c.mixreview.mix_ratio = value.at("mix_ratio").get<double>();
        c.mixreview.mix_decay = value.at("mix_decay").get<double>();
      } else if (key == "recadam") {
        c.recadam.gamma = value.at("gamma").get<double>();
        c.recadam.t0 = value.at("t0").get<double>();
        c.recadam.k_anneal = value.at("k_anneal").get<double>();
      }
    }
    c.validate();
    return c;
  }
};

inline bool method_expands_params(const std::string& kind) {
  return kind == "lora" || kind == "kadapter" || kind == "modular";
}

// True for parameters created by an attachment rather than the base model.
inline bool attachment_param(const ModelState& m, const std::string& name) {
  for (const auto& lp : m.attach.lora)
    if (name == lp.a_name || name == lp.b_name) return true;
  for (const auto& st : m.attach.adapters)
    if (name == st.fusion_name || name.rfind(st.prefix + ".", 0) == 0) return true;
  for (const auto& br : m.attach.modular)
    if (name.rfind(br.prefix + ".", 0) == 0) return true;
  return false;
}

// Expansion methods train only what they added (plus, for encoder-decoder
// models, the decoder); regularization and rehearsal methods train everything.
// With stacked attachments, a nonempty active_root limits training to the
// attachment under that name root; earlier attachments freeze with the base,
// since they hold knowledge from phases already finished.
inline void apply_freeze_policy(ModelState& m, const MethodConfig& cfg, const std::string& active_root = "") {
  cfg.validate();
  if (cfg.kind == "initial")
    throw ConfigError("freeze policy: method 'initial' performs no continued training");
  if (cfg.kind == "modular" && !m.arch.enc_dec())
    throw ConfigError("freeze policy: modular needs an encoder-decoder model");
  for (const auto& name : m.order) m.set_frozen(name, false);
  if (!method_expands_params(cfg.kind)) return;
  for (const auto& name : m.order) {
    if (attachment_param(m, name)) {
      if (!active_root.empty() && name.rfind(active_root + ".", 0) != 0) m.set_frozen(name, true);
      continue;
    }
    bool base_frozen = m.arch.enc_dec() ? (name.rfind("enc.", 0) == 0 || name == "tok_emb") : true;
    if (base_frozen) m.set_frozen(name, true);
  }
}

// Wraps the self-attention target projections of the soon-frozen stack with
// rank-r pairs: A random, B zero, so the initial function is unchanged. The
// root names the attachment; later phases pick fresh roots to stack pairs.
inline void lora_wrap(ModelState& m, const MethodConfig& cfg, uint64_t seed, const std::string& root = "lora") {
  cfg.validate();
  if (cfg.kind != "lora") throw ConfigError("lora_wrap: method kind is '" + cfg.kind + "'");
  int d = m.arch.d_model, r = cfg.lora.rank;
  if (r >= d) throw ConfigError("lora: rank " + std::to_string(r) + " must stay below width " + std::to_string(d));
  Rng rng(mix_seed(seed, 0x10A4));
  std::string stack = m.arch.enc_dec() ? "enc" : "dec";
  for (int i = 0; i < m.arch.layers; ++i) {
    for (const auto& t : cfg.lora.targets) {
      std::string target = stack + ".l" + std::to_string(i) + ".attn." + t;
      m.param(target);  // must exist
      std::string a_name = root + "." + target + ".a";
      std::string b_name = root + "." + target + ".b";
      detail::fill_normal(m.add_param(a_name, {d, r}), rng, detail::kInitStd);
      m.add_param(b_name, {r, d});
      m.attach.lora.push_back({target, a_name, b_name, r, cfg.lora.scaling});
    }
  }
}

// Evenly spaced attachment layers over a stack of depth L.
inline std::vector<int> kadapter_layers(int k, int layers) {
  if (k == 1) return {layers - 1};
  std::vector<int> at;
  for (int i = 0; i < k; ++i) at.push_back(i * (layers - 1) / (k - 1));
  return at;
}

// Adds k transformer-layer adapters over the hosting stack (encoder for
// encoder-decoder models, the decoder otherwise) plus a zero fusion
// projection into the final hidden state.
inline void kadapter_attach(ModelState& m, const MethodConfig& cfg, uint64_t seed,
                            const std::string& root = "kadapter") {
  cfg.validate();
  if (cfg.kind != "kadapter") throw ConfigError("kadapter_attach: method kind is '" + cfg.kind + "'");
  int k = cfg.kadapter.k, L = m.arch.layers;
  if (k > L) throw ConfigError("kadapter: k=" + std::to_string(k) + " exceeds " + std::to_string(L) + " layers");
  std::vector<int> at = cfg.kadapter.at.empty() ? kadapter_layers(k, L) : cfg.kadapter.at;
  if (static_cast<int>(at.size()) != k) throw ConfigError("kadapter: attachment list length differs from k");
  for (int a : at)
    if (a < 0 || a >= L) throw ConfigError("kadapter: attachment layer " + std::to_string(a) + " out of range");

  std::string scope = m.arch.enc_dec() ? "enc" : "dec";
  std::string prefix = root + "." + scope;
  Rng rng(mix_seed(seed, 0xADA7));
  for (int i = 0; i < k; ++i)
    add_block_params(m, prefix + ".a" + std::to_string(i), m.arch.d_model, m.arch.d_ff, false, rng);
  m.add_param(prefix + ".fusion", {m.arch.d_model, m.arch.d_model});
  m.attach.adapters.push_back({scope, prefix, at, prefix + ".fusion"});
}

// Adds the trainable narrow encoder beside the frozen one. Its input
// projection reads the shared embedding; its zero output projection keeps the
// combined encoder output identical to the frozen output at attachment time.
inline void modular_attach(ModelState& m, const MethodConfig& cfg, uint64_t seed,
                           const std::string& root = "modular") {
  cfg.validate();
  if (cfg.kind != "modular") throw ConfigError("modular_attach: method kind is '" + cfg.kind + "'");
  if (!m.arch.enc_dec()) throw ConfigError("modular: decoder-only model has no encoder");
  int d = m.arch.d_model;
  int w = cfg.modular.width > 0 ? cfg.modular.width : d / 2;
  int heads = m.arch.heads;
  if (w < heads || w % heads != 0)
    throw ConfigError("modular: width " + std::to_string(w) + " must divide into " + std::to_string(heads) +
                      " heads");
  int bff = std::max(1, static_cast<int>(static_cast<int64_t>(w) * m.arch.d_ff / d));
  std::string prefix = root + ".enc";
  Rng rng(mix_seed(seed, 0x30D0));
  detail::fill_normal(m.add_param(prefix + ".in_proj", {d, w}), rng, detail::kInitStd);
  for (int i = 0; i < m.arch.layers; ++i) add_block_params(m, prefix + ".l" + std::to_string(i), w, bff, false, rng);
  detail::fill_ones(m.add_param(prefix + ".lnf.g", {w}));
  m.add_param(prefix + ".lnf.b", {w});
  m.add_param(prefix + ".out_proj", {w, d});
  m.attach.modular.push_back({prefix, w, bff, heads});
}

// Structural setup for one method: attach whatever it adds. Freeze policy and
// snapshot-taking are separate calls so the training loop controls ordering.
// A nonempty tag suffixes the attachment root, letting each continual phase
// add its own fresh expansion parameters without name collisions.
inline void attach_method(ModelState& m, const MethodConfig& cfg, uint64_t seed, const std::string& tag = "") {
  cfg.validate();
  if (cfg.kind == "lora")
    lora_wrap(m, cfg, seed, "lora" + tag);
  else if (cfg.kind == "kadapter")
    kadapter_attach(m, cfg, seed, "kadapter" + tag);
  else if (cfg.kind == "modular")
    modular_attach(m, cfg, seed, "modular" + tag);
}

// Replay slots per batch: floor of batch_size * mix_ratio * mix_decay^(-epoch),
// with a tiny guard so exact products do not round down through floating
// point. Replay displaces that many new-corpus examples from the batch, so
// step count and batch size match an unmixed run.
inline int mixreview_quota(int epoch, int batch_size, const MethodConfig& cfg) {
  cfg.validate();
  if (cfg.kind != "mixreview") throw ConfigError("mixreview_quota: method kind is '" + cfg.kind + "'");
  if (epoch < 0) throw ConfigError("mixreview: negative epoch");
  if (batch_size < 1) throw ConfigError("mixreview: batch size must be >= 1");
  double q = batch_size * cfg.mixreview.mix_ratio * std::pow(cfg.mixreview.mix_decay, -epoch);
  return static_cast<int>(std::floor(q + 1e-9));
}

struct ParamCounts {
  int64_t trainable = 0;
  int64_t total = 0;
};

inline ParamCounts trainable_param_count(const ModelState& m) {
  return {m.trainable_param_count(), m.total_param_count()};
}

}  // namespace ckl
