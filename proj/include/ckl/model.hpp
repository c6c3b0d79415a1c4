#pragma once

// Toy transformer language models over the closed-lexicon vocabulary: an
// encoder-decoder trained with salient span masking and a decoder-only model
// trained with next-token teacher forcing. Pre-norm blocks, learned absolute
// positions, bias-free attention projections, untied output head.
//
// Method attachments (low-rank pairs, adapter stacks, a parallel narrow
// encoder) are structural records on the model state; the graph builders
// consult them so one forward path serves every method family.

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "ckl/graph.hpp"
#include "ckl/vocab.hpp"
#include "json.hpp"

namespace ckl {

struct ArchDesc {
  std::string kind = "enc-dec";  // "enc-dec" | "dec-only"
  int layers = 2;
  int heads = 2;
  int d_model = 64;
  int d_ff = 128;
  int max_len = 32;
  int vocab = -1;

  bool enc_dec() const { return kind == "enc-dec"; }

  void validate() const {
    if (kind != "enc-dec" && kind != "dec-only") throw ConfigError("arch: kind must be enc-dec or dec-only");
    if (layers < 1 || heads < 1 || d_model < 1 || d_ff < 1 || max_len < 2)
      throw ConfigError("arch: non-positive dimension");
    if (d_model % heads != 0) throw ConfigError("arch: d_model must divide evenly into heads");
    if (vocab <= kNumSpecials) throw ConfigError("arch: vocabulary too small");
  }

  nlohmann::json to_json() const {
    return {{"kind", kind},   {"layers", layers},   {"heads", heads}, {"d_model", d_model},
            {"d_ff", d_ff},   {"max_len", max_len}, {"vocab", vocab}};
  }
  static ArchDesc from_json(const nlohmann::json& j) {
    ArchDesc a;
    a.kind = j.at("kind").get<std::string>();
    a.layers = j.at("layers").get<int>();
    a.heads = j.at("heads").get<int>();
    a.d_model = j.at("d_model").get<int>();
    a.d_ff = j.at("d_ff").get<int>();
    a.max_len = j.at("max_len").get<int>();
    a.vocab = j.at("vocab").get<int>();
    // vocab <= 0 marks a template arch whose vocabulary is filled in later;
    // validation waits until then (and make_model still insists on it).
    if (a.vocab > 0) a.validate();
    return a;
  }
};

// A frozen base projection augmented with a trainable low-rank pair:
// effective W = W + scaling * A B.
struct LoraPair {
  std::string target;  // base parameter name, e.g. "enc.l0.attn.wq"
  std::string a_name, b_name;
  int rank = 4;
  float scaling = 1.0f;
};

// k adapter blocks, each shaped like one transformer layer, attached at fixed
// layers of one stack; the last adapter feeds a zero-initialized fusion
// projection added to the stack's final hidden state.
struct AdapterStack {
  std::string scope;  // "enc" | "dec"
  std::string prefix;
  std::vector<int> at;
  std::string fusion_name;
};

// A trainable narrow encoder running beside the frozen one; its output enters
// through a zero-initialized projection.
struct ModularBranch {
  std::string prefix;
  int width = 32;
  int d_ff = 64;
  int heads = 2;
};

struct Attachments {
  std::vector<LoraPair> lora;
  std::vector<AdapterStack> adapters;
  std::vector<ModularBranch> modular;

  bool empty() const { return lora.empty() && adapters.empty() && modular.empty(); }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["lora"] = nlohmann::json::array();
    for (const auto& l : lora)
      j["lora"].push_back({{"target", l.target},
                           {"a_name", l.a_name},
                           {"b_name", l.b_name},
                           {"rank", l.rank},
                           {"scaling", l.scaling}});
    j["adapters"] = nlohmann::json::array();
    for (const auto& s : adapters)
      j["adapters"].push_back(
          {{"scope", s.scope}, {"prefix", s.prefix}, {"at", s.at}, {"fusion_name", s.fusion_name}});
    j["modular"] = nlohmann::json::array();
    for (const auto& m : modular)
      j["modular"].push_back({{"prefix", m.prefix}, {"width", m.width}, {"d_ff", m.d_ff}, {"heads", m.heads}});
    return j;
  }
  static Attachments from_json(const nlohmann::json& j) {
    Attachments a;
    for (const auto& l : j.at("lora")) {
      LoraPair p;
      p.target = l.at("target").get<std::string>();
      p.a_name = l.at("a_name").get<std::string>();
      p.b_name = l.at("b_name").get<std::string>();
      p.rank = l.at("rank").get<int>();
      p.scaling = l.at("scaling").get<float>();
      a.lora.push_back(std::move(p));
    }
    for (const auto& s : j.at("adapters")) {
      AdapterStack st;
      st.scope = s.at("scope").get<std::string>();
      st.prefix = s.at("prefix").get<std::string>();
      st.at = s.at("at").get<std::vector<int>>();
      st.fusion_name = s.at("fusion_name").get<std::string>();
      a.adapters.push_back(std::move(st));
    }
    for (const auto& m : j.at("modular")) {
      ModularBranch b;
      b.prefix = m.at("prefix").get<std::string>();
      b.width = m.at("width").get<int>();
      b.d_ff = m.at("d_ff").get<int>();
      b.heads = m.at("heads").get<int>();
      a.modular.push_back(std::move(b));
    }
    return a;
  }
};

struct ModelState {
  ArchDesc arch;
  std::vector<std::string> order;  // creation order; serialization follows it
  std::map<std::string, Tensor> params;
  std::set<std::string> frozen;
  std::map<std::string, std::vector<float>> theta0;
  Attachments attach;

  bool has(const std::string& name) const { return params.count(name) > 0; }

  Tensor& param(const std::string& name) {
    auto it = params.find(name);
    if (it == params.end()) throw StateError("model: unknown parameter '" + name + "'");
    return it->second;
  }
  const Tensor& param(const std::string& name) const {
    auto it = params.find(name);
    if (it == params.end()) throw StateError("model: unknown parameter '" + name + "'");
    return it->second;
  }

  Tensor& add_param(const std::string& name, const std::vector<int>& shape) {
    if (has(name)) throw StateError("model: duplicate parameter '" + name + "'");
    order.push_back(name);
    auto& t = params[name] = Tensor::zeros(shape);
    t.requires_grad = true;
    return t;
  }

  void set_frozen(const std::string& name, bool value) {
    param(name).requires_grad = !value;
    if (value)
      frozen.insert(name);
    else
      frozen.erase(name);
  }

  bool is_frozen(const std::string& name) const { return frozen.count(name) > 0; }

  // Snapshot of every currently trainable parameter, the reference point for
  // pull-back regularization during the phase that starts now.
  void take_theta0() {
    theta0.clear();
    for (const auto& name : order)
      if (!is_frozen(name)) theta0[name] = param(name).data;
  }

  int64_t total_param_count() const {
    int64_t n = 0;
    for (const auto& name : order) n += param(name).numel();
    return n;
  }
  int64_t trainable_param_count() const {
    int64_t n = 0;
    for (const auto& name : order)
      if (!is_frozen(name)) n += param(name).numel();
    return n;
  }
};

namespace detail {

inline void fill_normal(Tensor& t, Rng& rng, float stddev) {
  for (auto& v : t.data) v = rng.normalf(0.0f, stddev);
}
inline void fill_ones(Tensor& t) {
  for (auto& v : t.data) v = 1.0f;
}

constexpr float kInitStd = 0.02f;
constexpr float kMaskValue = -1e9f;

}  // namespace detail

// Adds the parameters of one transformer block (self-attention + feed-forward,
// optionally cross-attention) under `prefix`, drawing weights from `rng`.
inline void add_block_params(ModelState& m, const std::string& prefix, int d, int d_ff, bool cross, Rng& rng) {
  auto norm = [&](const std::string& name, const std::vector<int>& shape) {
    detail::fill_normal(m.add_param(name, shape), rng, detail::kInitStd);
  };
  auto ln = [&](const std::string& name) {
    detail::fill_ones(m.add_param(name + ".g", {d}));
    m.add_param(name + ".b", {d});
  };
  auto attn = [&](const std::string& name) {
    for (const char* w : {"wq", "wk", "wv", "wo"}) norm(name + "." + w, {d, d});
  };
  ln(prefix + ".ln1");
  attn(prefix + ".attn");
  if (cross) {
    ln(prefix + ".ln2");
    attn(prefix + ".xattn");
  }
  ln(prefix + (cross ? ".ln3" : ".ln2"));
  norm(prefix + ".ff.w1", {d, d_ff});
  m.add_param(prefix + ".ff.b1", {d_ff});
  norm(prefix + ".ff.w2", {d_ff, d});
  m.add_param(prefix + ".ff.b2", {d});
}

inline int64_t block_param_count(int d, int d_ff, bool cross) {
  int64_t attn = 4LL * d * d;
  int64_t ln = 2LL * d;
  int64_t ff = int64_t(d) * d_ff + d_ff + int64_t(d_ff) * d + d;
  return cross ? 3 * ln + 2 * attn + ff : 2 * ln + attn + ff;
}

inline ModelState make_model(const ArchDesc& arch, uint64_t seed) {
  arch.validate();
  ModelState m;
  m.arch = arch;
  Rng rng(mix_seed(seed, 0xA11C));
  int d = arch.d_model, V = arch.vocab;

  detail::fill_normal(m.add_param("tok_emb", {V, d}), rng, detail::kInitStd);
  if (arch.enc_dec()) {
    detail::fill_normal(m.add_param("enc.pos", {arch.max_len, d}), rng, detail::kInitStd);
    for (int i = 0; i < arch.layers; ++i)
      add_block_params(m, "enc.l" + std::to_string(i), d, arch.d_ff, false, rng);
    detail::fill_ones(m.add_param("enc.lnf.g", {d}));
    m.add_param("enc.lnf.b", {d});
  }
  detail::fill_normal(m.add_param("dec.pos", {arch.max_len, d}), rng, detail::kInitStd);
  for (int i = 0; i < arch.layers; ++i)
    add_block_params(m, "dec.l" + std::to_string(i), d, arch.d_ff, arch.enc_dec(), rng);
  detail::fill_ones(m.add_param("dec.lnf.g", {d}));
  m.add_param("dec.lnf.b", {d});
  detail::fill_normal(m.add_param("lm_head", {d, V}), rng, detail::kInitStd);
  return m;
}

struct MaskedExample {
  std::vector<int> input_ids;
  std::vector<int> target_ids;  // empty for decoder-only examples
};

// Replaces the salient span with sentinel 0; the target reproduces the span.
inline MaskedExample ssm_mask(const std::vector<int>& ids, int span_start, int span_len) {
  if (span_len <= 0 || span_start < 0 || span_start + span_len > static_cast<int>(ids.size()))
    throw ConfigError("ssm_mask: span out of bounds");
  MaskedExample ex;
  ex.input_ids.assign(ids.begin(), ids.begin() + span_start);
  ex.input_ids.push_back(kSent0);
  ex.input_ids.insert(ex.input_ids.end(), ids.begin() + span_start + span_len, ids.end());
  ex.target_ids.push_back(kSent0);
  ex.target_ids.insert(ex.target_ids.end(), ids.begin() + span_start, ids.begin() + span_start + span_len);
  ex.target_ids.push_back(kEos);
  return ex;
}

// Decoder-only training sequence: the sentence plus a terminator.
inline MaskedExample lm_example(const std::vector<int>& ids) {
  MaskedExample ex;
  ex.input_ids = ids;
  ex.input_ids.push_back(kEos);
  return ex;
}

// ---------------------------------------------------------------------------
// Graph construction.

class ModelGraph {
 public:
  ModelGraph(Graph& g, ModelState& m) : g_(g), m_(m) {}

  int leaf(const std::string& name) {
    auto it = leaves_.find(name);
    if (it != leaves_.end()) return it->second;
    int id = g_.leaf(&m_.param(name), name);
    leaves_.emplace(name, id);
    return id;
  }

  // Projection through a base weight plus any low-rank pairs targeting it.
  int proj(int x, const std::string& wname) {
    int out = g_.matmul(x, leaf(wname));
    for (const auto& lp : m_.attach.lora) {
      if (lp.target != wname) continue;
      int low = g_.matmul(g_.matmul(x, leaf(lp.a_name)), leaf(lp.b_name));
      out = g_.add(out, lp.scaling == 1.0f ? low : g_.scale(low, lp.scaling));
    }
    return out;
  }

  int ln(int x, const std::string& prefix) { return g_.layernorm_last(x, leaf(prefix + ".g"), leaf(prefix + ".b")); }

  // Multi-head attention; queries from `q_src`, keys/values from `kv_src`,
  // optional additive mask broadcast onto the score matrix.
  int attention(int q_src, int kv_src, const std::string& prefix, int mask_node, int width, int heads) {
    int hd = width / heads;
    int q = proj(q_src, prefix + ".wq");
    int k = proj(kv_src, prefix + ".wk");
    int v = proj(kv_src, prefix + ".wv");
    std::vector<int> ctx;
    float inv_sqrt = 1.0f / std::sqrt(static_cast<float>(hd));
    for (int h = 0; h < heads; ++h) {
      int qh = g_.slice_last(q, h * hd, hd);
      int kh = g_.slice_last(k, h * hd, hd);
      int vh = g_.slice_last(v, h * hd, hd);
      int sc = g_.scale(g_.matmul(qh, g_.transpose_last2(kh)), inv_sqrt);
      if (mask_node >= 0) sc = g_.add(sc, mask_node);
      ctx.push_back(g_.matmul(g_.softmax_last(sc), vh));
    }
    return proj(g_.concat_last(ctx), prefix + ".wo");
  }

  int ff(int x, const std::string& prefix) {
    int h = g_.relu(g_.add(g_.matmul(x, leaf(prefix + ".w1")), leaf(prefix + ".b1")));
    return g_.add(g_.matmul(h, leaf(prefix + ".w2")), leaf(prefix + ".b2"));
  }

  // One pre-norm transformer block in place: self-attention, optional cross
  // attention over `memory`, feed-forward.
  int block(int x, const std::string& prefix, int self_mask, int memory, int memory_mask, int width, int heads) {
    bool cross = memory >= 0;
    int nx = ln(x, prefix + ".ln1");
    x = g_.add(x, attention(nx, nx, prefix + ".attn", self_mask, width, heads));
    if (cross) {
      nx = ln(x, prefix + ".ln2");
      x = g_.add(x, attention(nx, memory, prefix + ".xattn", memory_mask, width, heads));
    }
    nx = ln(x, prefix + (cross ? ".ln3" : ".ln2"));
    return g_.add(x, ff(nx, prefix + ".ff"));
  }

  // Token + position embedding for a padded id batch [B, L].
  int embed_ids(const std::vector<int>& ids, int batch, int len, const std::string& pos_name) {
    int tok = g_.embed(ids, {batch, len}, leaf("tok_emb"));
    std::vector<int> pos(static_cast<size_t>(batch) * static_cast<size_t>(len));
    for (int b = 0; b < batch; ++b)
      for (int t = 0; t < len; ++t) pos[static_cast<size_t>(b * len + t)] = t;
    int pe = g_.embed(pos, {batch, len}, leaf(pos_name));
    return g_.add(tok, pe);
  }

  // Full encoder: base stack, then adapter stacks and modular branches.
  int encode(const std::vector<int>& ids, int batch, int len, int pad_mask) {
    if (!m_.arch.enc_dec()) throw StateError("encode: decoder-only model has no encoder");
    int x0 = embed_ids(ids, batch, len, "enc.pos");
    int x = x0;
    std::vector<int> hidden;
    for (int i = 0; i < m_.arch.layers; ++i) {
      x = block(x, "enc.l" + std::to_string(i), pad_mask, -1, -1, m_.arch.d_model, m_.arch.heads);
      hidden.push_back(x);
    }
    x = ln(x, "enc.lnf");
    x = apply_adapters(x, hidden, "enc", pad_mask, m_.arch.d_model, m_.arch.heads);
    x = apply_modular(x, x0, pad_mask);
    return x;
  }

  // Full decoder stack; pass memory = -1 for decoder-only models.
  int decode(const std::vector<int>& ids, int batch, int len, int memory, int memory_mask) {
    int causal = causal_mask(len);
    int x = embed_ids(ids, batch, len, "dec.pos");
    std::vector<int> hidden;
    for (int i = 0; i < m_.arch.layers; ++i) {
      x = block(x, "dec.l" + std::to_string(i), causal, memory, memory_mask, m_.arch.d_model, m_.arch.heads);
      hidden.push_back(x);
    }
    x = ln(x, "dec.lnf");
    x = apply_adapters(x, hidden, "dec", causal, m_.arch.d_model, m_.arch.heads);
    return x;
  }

  int logits(int hidden) { return g_.matmul(hidden, leaf("lm_head")); }

  // Additive pad mask [B, 1, L]: zero where valid, large negative at padding.
  int pad_mask(const std::vector<int>& lengths, int len) {
    int batch = static_cast<int>(lengths.size());
    Tensor t = Tensor::zeros({batch, 1, len});
    for (int b = 0; b < batch; ++b)
      for (int p = lengths[static_cast<size_t>(b)]; p < len; ++p)
        t.data[static_cast<size_t>(b * len + p)] = detail::kMaskValue;
    return g_.input(std::move(t), "pad_mask");
  }

  int causal_mask(int len) {
    Tensor t = Tensor::zeros({len, len});
    for (int i = 0; i < len; ++i)
      for (int j = i + 1; j < len; ++j) t.data[static_cast<size_t>(i * len + j)] = detail::kMaskValue;
    return g_.input(std::move(t), "causal_mask");
  }

 private:
  int apply_adapters(int x, const std::vector<int>& hidden, const std::string& scope, int self_mask, int width,
                     int heads) {
    for (const auto& stack : m_.attach.adapters) {
      if (stack.scope != scope) continue;
      int prev = -1;
      for (size_t i = 0; i < stack.at.size(); ++i) {
        int inp = hidden.at(static_cast<size_t>(stack.at[i]));
        if (prev >= 0) inp = g_.add(inp, prev);
        prev = block(inp, stack.prefix + ".a" + std::to_string(i), self_mask, -1, -1, width, heads);
      }
      if (prev >= 0) x = g_.add(x, g_.matmul(prev, leaf(stack.fusion_name)));
    }
    return x;
  }

  int apply_modular(int x, int x0, int pad_mask) {
    for (const auto& br : m_.attach.modular) {
      int xs = g_.matmul(x0, leaf(br.prefix + ".in_proj"));
      for (int i = 0; i < m_.arch.layers; ++i)
        xs = block(xs, br.prefix + ".l" + std::to_string(i), pad_mask, -1, -1, br.width, br.heads);
      xs = ln(xs, br.prefix + ".lnf");
      x = g_.add(x, g_.matmul(xs, leaf(br.prefix + ".out_proj")));
    }
    return x;
  }

  Graph& g_;
  ModelState& m_;
  std::map<std::string, int> leaves_;
};

// ---------------------------------------------------------------------------
// Batch assembly and the training objective.

namespace detail {

struct PaddedBatch {
  std::vector<int> ids;
  std::vector<int> lengths;
  int batch = 0;
  int len = 0;
};

inline PaddedBatch pad_rows(const std::vector<std::vector<int>>& rows, int max_len) {
  PaddedBatch p;
  p.batch = static_cast<int>(rows.size());
  for (const auto& r : rows) {
    if (static_cast<int>(r.size()) > max_len)
      throw ConfigError("batch: sequence length " + std::to_string(r.size()) + " exceeds maximum " +
                        std::to_string(max_len));
    p.len = std::max(p.len, static_cast<int>(r.size()));
  }
  if (p.len == 0) throw ConfigError("batch: empty sequences");
  p.ids.assign(static_cast<size_t>(p.batch) * static_cast<size_t>(p.len), kPad);
  for (int b = 0; b < p.batch; ++b) {
    const auto& r = rows[static_cast<size_t>(b)];
    p.lengths.push_back(static_cast<int>(r.size()));
    for (size_t t = 0; t < r.size(); ++t) p.ids[static_cast<size_t>(b) * static_cast<size_t>(p.len) + t] = r[t];
  }
  return p;
}

}  // namespace detail

// Builds the scalar training loss for one batch; returns the loss node id.
// Encoder-decoder: mean cross-entropy over target positions. Decoder-only:
// next-token teacher forcing over the full sequence.
inline int build_loss(Graph& g, ModelState& m, const std::vector<MaskedExample>& batch) {
  if (batch.empty()) throw ConfigError("build_loss: empty batch");
  ModelGraph mg(g, m);
  if (m.arch.enc_dec()) {
    std::vector<std::vector<int>> enc_rows, tgt_rows;
    for (const auto& ex : batch) {
      if (ex.target_ids.empty()) throw ConfigError("build_loss: encoder-decoder example lacks targets");
      enc_rows.push_back(ex.input_ids);
      tgt_rows.push_back(ex.target_ids);
    }
    auto enc = detail::pad_rows(enc_rows, m.arch.max_len);
    auto tgt = detail::pad_rows(tgt_rows, m.arch.max_len);
    int mask = mg.pad_mask(enc.lengths, enc.len);
    int memory = mg.encode(enc.ids, enc.batch, enc.len, mask);

    // Decoder input: pad start token, then the target shifted right.
    std::vector<int> dec_ids(static_cast<size_t>(tgt.batch) * static_cast<size_t>(tgt.len), kPad);
    std::vector<int> targets(dec_ids.size(), kPad);
    std::vector<char> active(dec_ids.size(), 0);
    for (int b = 0; b < tgt.batch; ++b) {
      int n = tgt.lengths[static_cast<size_t>(b)];
      for (int t = 0; t < n; ++t) {
        size_t idx = static_cast<size_t>(b) * static_cast<size_t>(tgt.len) + static_cast<size_t>(t);
        targets[idx] = tgt.ids[idx];
        active[idx] = 1;
        if (t + 1 < tgt.len) dec_ids[idx + 1] = tgt.ids[idx];
      }
    }
    int hidden = mg.decode(dec_ids, tgt.batch, tgt.len, memory, mask);
    int lg = g.reshape(mg.logits(hidden), {tgt.batch * tgt.len, m.arch.vocab});
    return g.cross_entropy(lg, targets, active);
  }

  std::vector<std::vector<int>> rows;
  for (const auto& ex : batch) {
    if (ex.input_ids.size() < 2) throw ConfigError("build_loss: decoder-only example too short");
    rows.push_back(ex.input_ids);
  }
  auto p = detail::pad_rows(rows, m.arch.max_len);
  int hidden = mg.decode(p.ids, p.batch, p.len, -1, -1);
  int lg = g.reshape(mg.logits(hidden), {p.batch * p.len, m.arch.vocab});
  std::vector<int> targets(p.ids.size(), kPad);
  std::vector<char> active(p.ids.size(), 0);
  for (int b = 0; b < p.batch; ++b) {
    int n = p.lengths[static_cast<size_t>(b)];
    for (int t = 0; t + 1 < n; ++t) {
      size_t idx = static_cast<size_t>(b) * static_cast<size_t>(p.len) + static_cast<size_t>(t);
      targets[idx] = p.ids[idx + 1];
      active[idx] = 1;
    }
  }
  return g.cross_entropy(lg, targets, active);
}

inline float forward_loss(ModelState& m, const std::vector<MaskedExample>& batch) {
  Graph g;
  build_loss(g, m, batch);
  return g.forward().data[0];
}

// ---------------------------------------------------------------------------
// Inference: batched greedy decoding and gold-token ranking.

namespace detail {

// Logits for the next token of every ragged prefix row. Returns the full
// [B, L, V] tensor plus each row's last-position index.
struct StepLogits {
  Tensor logits;
  std::vector<int> last;
  int len = 0;
};

inline StepLogits step_logits(ModelState& m, const std::vector<std::vector<int>>& enc_rows,
                              const std::vector<std::vector<int>>& dec_rows) {
  Graph g;
  ModelGraph mg(g, m);
  int memory = -1, mem_mask = -1;
  if (m.arch.enc_dec()) {
    auto enc = pad_rows(enc_rows, m.arch.max_len);
    mem_mask = mg.pad_mask(enc.lengths, enc.len);
    memory = mg.encode(enc.ids, enc.batch, enc.len, mem_mask);
  }
  auto dec = pad_rows(dec_rows, m.arch.max_len);
  int hidden = mg.decode(dec.ids, dec.batch, dec.len, memory, mem_mask);
  int lg = mg.logits(hidden);
  g.forward();
  StepLogits out;
  out.logits = g.out(lg);
  out.len = dec.len;
  for (int n : dec.lengths) out.last.push_back(n - 1);
  return out;
}

inline int argmax_lowest_id(const float* row, int vocab) {
  int best = 0;
  for (int i = 1; i < vocab; ++i)
    if (row[i] > row[best]) best = i;
  return best;
}

inline bool is_special(int id) { return id < kNumSpecials; }

}  // namespace detail

// Argmax decoding until end-of-sequence or the answer-token limit; mask
// sentinels and padding are stripped from the returned answers. Ties in the
// logits break toward the lowest token id.
inline std::vector<std::vector<int>> greedy_decode(ModelState& m, const std::vector<std::vector<int>>& inputs,
                                                   int max_answer_tokens) {
  if (max_answer_tokens < 1) throw ConfigError("greedy_decode: max_answer_tokens must be >= 1");
  if (inputs.empty()) return {};
  size_t B = inputs.size();
  std::vector<std::vector<int>> dec_rows(B);
  std::vector<std::vector<int>> raw(B);
  std::vector<char> done(B, 0);
  if (m.arch.enc_dec()) {
    // Forced prefix: start token then the mask sentinel the answer restores.
    for (auto& r : dec_rows) r = {kPad, kSent0};
  } else {
    for (size_t b = 0; b < B; ++b) {
      dec_rows[b] = inputs[b];
      // The probe sentence carries the sentinel last; generation replaces it.
      if (!dec_rows[b].empty() && dec_rows[b].back() == kSent0) dec_rows[b].pop_back();
      if (dec_rows[b].empty()) throw ConfigError("greedy_decode: empty prefix");
    }
  }
  for (int step = 0; step < max_answer_tokens; ++step) {
    if (std::all_of(done.begin(), done.end(), [](char c) { return c != 0; })) break;
    bool room = true;
    for (const auto& r : dec_rows) room = room && static_cast<int>(r.size()) < m.arch.max_len;
    if (!room) break;
    auto st = detail::step_logits(m, inputs, dec_rows);
    int V = m.arch.vocab;
    for (size_t b = 0; b < B; ++b) {
      const float* row = st.logits.data.data() +
                         (static_cast<size_t>(b) * static_cast<size_t>(st.len) + static_cast<size_t>(st.last[b])) *
                             static_cast<size_t>(V);
      int tok = detail::argmax_lowest_id(row, V);
      if (done[b]) tok = kPad;  // keep row lengths aligned across the batch
      dec_rows[b].push_back(tok);
      if (done[b]) continue;
      if (tok == kEos) {
        done[b] = 1;
      } else {
        raw[b].push_back(tok);
      }
    }
  }
  std::vector<std::vector<int>> answers(B);
  for (size_t b = 0; b < B; ++b)
    for (int id : raw[b])
      if (!detail::is_special(id)) answers[b].push_back(id);
  return answers;
}

// Rank of each gold first token in the descending logit ordering at the first
// answer position (1-based; ties ordered by ascending token id).
inline std::vector<int> rank_answer_token(ModelState& m, const std::vector<std::vector<int>>& inputs,
                                          const std::vector<int>& gold_first) {
  if (inputs.size() != gold_first.size()) throw ConfigError("rank_answer_token: input/gold size mismatch");
  if (inputs.empty()) return {};
  size_t B = inputs.size();
  std::vector<std::vector<int>> dec_rows(B);
  if (m.arch.enc_dec()) {
    for (auto& r : dec_rows) r = {kPad, kSent0};
  } else {
    for (size_t b = 0; b < B; ++b) {
      dec_rows[b] = inputs[b];
      if (!dec_rows[b].empty() && dec_rows[b].back() == kSent0) dec_rows[b].pop_back();
      if (dec_rows[b].empty()) throw ConfigError("rank_answer_token: empty prefix");
    }
  }
  auto st = detail::step_logits(m, inputs, dec_rows);
  int V = m.arch.vocab;
  std::vector<int> ranks(B);
  for (size_t b = 0; b < B; ++b) {
    int gold = gold_first[b];
    if (gold < 0 || gold >= V) throw ConfigError("rank_answer_token: gold token out of vocabulary");
    const float* row = st.logits.data.data() +
                       (static_cast<size_t>(b) * static_cast<size_t>(st.len) + static_cast<size_t>(st.last[b])) *
                           static_cast<size_t>(V);
    int rank = 1;
    for (int i = 0; i < V; ++i) {
      if (row[i] > row[gold]) ++rank;
      else if (row[i] == row[gold] && i < gold) ++rank;
    }
    ranks[b] = rank;
  }
  return ranks;
}

}  // namespace ckl
