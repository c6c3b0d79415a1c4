#pragma once

// Zero-shot probing and metrics: normalized exact match, token-level F1,
// precision-at-k from first-token ranks, batched probe evaluation, one-epoch
// light tuning for decoder-only probing, and per-probe prediction traces.

#include <algorithm>
#include <cctype>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "ckl/model.hpp"
#include "ckl/optim.hpp"
#include "ckl/world.hpp"

namespace ckl {

// Lowercase, strip punctuation, collapse whitespace. The closed lexicon has
// no articles, so none are removed.
inline std::string normalize_answer(const std::string& s) {
  std::string cleaned;
  for (char c : s) {
    unsigned char u = static_cast<unsigned char>(c);
    if (std::ispunct(u)) continue;
    cleaned.push_back(static_cast<char>(std::tolower(u)));
  }
  return join_ws(split_ws(cleaned));
}

inline int exact_match(const std::string& pred, const std::string& gold) {
  return normalize_answer(pred) == normalize_answer(gold) ? 1 : 0;
}

// Harmonic mean of token precision and recall over normalized tokens; both
// sides empty count as a perfect match, one side empty as a total miss.
inline double token_f1(const std::string& pred, const std::string& gold) {
  auto p = split_ws(normalize_answer(pred));
  auto g = split_ws(normalize_answer(gold));
  if (p.empty() && g.empty()) return 1.0;
  if (p.empty() || g.empty()) return 0.0;
  std::map<std::string, int> counts;
  for (const auto& t : g) counts[t]++;
  int overlap = 0;
  for (const auto& t : p) {
    auto it = counts.find(t);
    if (it != counts.end() && it->second > 0) {
      --it->second;
      ++overlap;
    }
  }
  if (overlap == 0) return 0.0;
  double precision = static_cast<double>(overlap) / p.size();
  double recall = static_cast<double>(overlap) / g.size();
  return 2.0 * precision * recall / (precision + recall);
}

inline int precision_at_k(int rank, int k) {
  if (rank < 1) throw ConfigError("precision_at_k: rank must be >= 1");
  if (k < 1) throw ConfigError("precision_at_k: k must be >= 1");
  return rank <= k ? 1 : 0;
}

inline const std::vector<int>& pk_levels() {
  static const std::vector<int> levels = {1, 5, 10, 20, 50, 100};
  return levels;
}

struct TaskScore {
  std::string task;
  std::string stage;
  double em = 0.0;  // percentages
  double f1 = 0.0;
  std::map<int, double> p_at_k;
  int n = 0;

  nlohmann::json to_json() const {
    nlohmann::json pk = nlohmann::json::object();
    for (const auto& [k, v] : p_at_k) pk[std::to_string(k)] = v;
    return {{"task", task}, {"stage", stage}, {"em", em}, {"f1", f1}, {"p_at_k", pk}, {"n", n}};
  }
  static TaskScore from_json(const nlohmann::json& j) {
    TaskScore s;
    s.task = j.at("task").get<std::string>();
    s.stage = j.at("stage").get<std::string>();
    s.em = j.at("em").get<double>();
    s.f1 = j.at("f1").get<double>();
    for (const auto& [k, v] : j.at("p_at_k").items()) s.p_at_k[std::stoi(k)] = v.get<double>();
    s.n = j.at("n").get<int>();
    return s;
  }
};

namespace detail {

inline void check_probe_vocab(const ModelState& model, const std::vector<ProbeRecord>& probes,
                              const Vocabulary& vocab) {
  if (model.arch.vocab != vocab.size())
    throw ConfigError("probe: model vocabulary size " + std::to_string(model.arch.vocab) +
                      " differs from " + std::to_string(vocab.size()));
  for (const auto& p : probes)
    for (int id : vocab.tokenize(p.answer))
      if (id == kUnk) throw ConfigError("probe: answer '" + p.answer + "' falls outside the vocabulary");
}

}  // namespace detail

// Greedy-decoded answer strings, one per probe, evaluated in batches.
inline std::vector<std::string> decode_strings(ModelState& model, const std::vector<ProbeRecord>& probes,
                                               const Vocabulary& vocab, int max_answer_tokens,
                                               int batch_size = 128) {
  if (batch_size < 1) throw ConfigError("probe: batch size must be >= 1");
  std::vector<std::string> out;
  for (size_t start = 0; start < probes.size(); start += static_cast<size_t>(batch_size)) {
    size_t stop = std::min(probes.size(), start + static_cast<size_t>(batch_size));
    std::vector<std::vector<int>> inputs;
    for (size_t i = start; i < stop; ++i) inputs.push_back(vocab.tokenize(probes[i].input_text));
    for (auto& ids : greedy_decode(model, inputs, max_answer_tokens)) out.push_back(vocab.detokenize(ids));
  }
  return out;
}

// Zero-shot evaluation of one probe task: EM and F1 over greedy decodes,
// P@k over first-token ranks. Read-only on the model.
inline TaskScore probe_model(ModelState& model, const std::vector<ProbeRecord>& probes, const Vocabulary& vocab,
                             int max_answer_tokens, int batch_size = 128, const std::string& stage = "") {
  if (probes.empty()) throw ConfigError("probe_model: empty probe set");
  for (const auto& p : probes)
    if (p.task != probes[0].task)
      throw ConfigError("probe_model: mixed tasks '" + probes[0].task + "' and '" + p.task + "'");
  detail::check_probe_vocab(model, probes, vocab);

  TaskScore score;
  score.task = probes[0].task;
  score.stage = stage;
  score.n = static_cast<int>(probes.size());
  for (int k : pk_levels()) score.p_at_k[k] = 0.0;

  std::vector<std::string> decoded = decode_strings(model, probes, vocab, max_answer_tokens, batch_size);
  for (size_t start = 0; start < probes.size(); start += static_cast<size_t>(batch_size)) {
    size_t stop = std::min(probes.size(), start + static_cast<size_t>(batch_size));
    std::vector<std::vector<int>> inputs;
    std::vector<int> gold_first;
    for (size_t i = start; i < stop; ++i) {
      inputs.push_back(vocab.tokenize(probes[i].input_text));
      gold_first.push_back(vocab.tokenize(probes[i].answer).at(0));
    }
    std::vector<int> ranks = rank_answer_token(model, inputs, gold_first);
    for (size_t i = start; i < stop; ++i) {
      score.em += exact_match(decoded[i], probes[i].answer);
      score.f1 += token_f1(decoded[i], probes[i].answer);
      for (int k : pk_levels()) score.p_at_k[k] += precision_at_k(ranks[i - start], k);
    }
  }
  // Multiply before dividing so integer-valued sums stay exact at the rails.
  score.em = 100.0 * score.em / score.n;
  score.f1 = 100.0 * score.f1 / score.n;
  for (int k : pk_levels()) score.p_at_k[k] = 100.0 * score.p_at_k[k] / score.n;
  return score;
}

// One epoch of task-format tuning: each tuning sentence with its answer
// restored, trained once in order. Decoder-only probing uses this; the
// tuning facts must stay disjoint from everything probed.
inline void light_tune(ModelState& model, const std::vector<ProbeRecord>& tune_set,
                       const std::vector<int>& probe_fact_ids, const Vocabulary& vocab, int epochs,
                       int batch_size, float lr) {
  if (epochs != 1) throw ConfigError("light_tune: the procedure is defined as exactly one epoch");
  if (batch_size < 1) throw ConfigError("light_tune: batch size must be >= 1");
  std::set<int> probed(probe_fact_ids.begin(), probe_fact_ids.end());
  for (const auto& p : tune_set)
    if (probed.count(p.fact_id))
      throw ConfigError("light_tune: tuning fact " + std::to_string(p.fact_id) + " overlaps the probe set");
  if (tune_set.empty()) return;
  detail::check_probe_vocab(model, tune_set, vocab);

  std::vector<MaskedExample> examples;
  for (const auto& p : tune_set) {
    std::string text = p.input_text;
    size_t at = text.find("<mask_0>");
    if (at == std::string::npos) throw ConfigError("light_tune: tuning input lacks the mask sentinel");
    text = text.substr(0, at) + p.answer + text.substr(at + std::string("<mask_0>").size());
    std::vector<int> ids = vocab.tokenize(text);
    int alen = static_cast<int>(vocab.tokenize(p.answer).size());
    if (model.arch.enc_dec())
      examples.push_back(ssm_mask(ids, static_cast<int>(ids.size()) - alen, alen));
    else
      examples.push_back(lm_example(ids));
  }

  AdamState adam;
  for (size_t start = 0; start < examples.size(); start += static_cast<size_t>(batch_size)) {
    size_t stop = std::min(examples.size(), start + static_cast<size_t>(batch_size));
    std::vector<MaskedExample> batch(examples.begin() + static_cast<std::ptrdiff_t>(start),
                                     examples.begin() + static_cast<std::ptrdiff_t>(stop));
    for (const auto& name : model.order) {
      auto& p = model.param(name);
      if (p.requires_grad) p.grad.assign(p.data.size(), 0.0f);
    }
    Graph g;
    build_loss(g, model, batch);
    g.forward();
    g.backward();
    adam_step(model, adam, lr);
  }
}

struct PredictionTrace {
  int probe_id = -1;
  std::string gold;
  std::vector<std::string> decoded;  // one entry per completed epoch
};

inline std::vector<PredictionTrace> make_traces(const std::vector<ProbeRecord>& subset) {
  std::vector<PredictionTrace> traces;
  for (const auto& p : subset) {
    PredictionTrace t;
    t.probe_id = p.fact_id;
    t.gold = p.answer;
    traces.push_back(std::move(t));
  }
  return traces;
}

// Appends this epoch's decoded string to every tracked probe.
inline void track_predictions(ModelState& model, const std::vector<ProbeRecord>& subset,
                              const Vocabulary& vocab, int max_answer_tokens,
                              std::vector<PredictionTrace>& traces) {
  if (traces.size() != subset.size())
    throw StateError("track_predictions: trace list does not match the tracked subset");
  std::vector<std::string> decoded = decode_strings(model, subset, vocab, max_answer_tokens);
  for (size_t i = 0; i < traces.size(); ++i) traces[i].decoded.push_back(decoded[i]);
}

inline void write_traces(const std::string& path, const std::vector<PredictionTrace>& traces) {
  std::string out;
  for (const auto& t : traces) {
    nlohmann::json j = {{"probe_id", t.probe_id}, {"gold", t.gold}, {"decoded", t.decoded}};
    out += j.dump() + "\n";
  }
  write_text_file(path, out);
}

inline std::vector<PredictionTrace> read_traces(const std::string& path) {
  std::vector<PredictionTrace> traces;
  for (const auto& j : read_jsonl(path)) {
    PredictionTrace t;
    t.probe_id = j.at("probe_id").get<int>();
    t.gold = j.at("gold").get<std::string>();
    t.decoded = j.at("decoded").get<std::vector<std::string>>();
    traces.push_back(std::move(t));
  }
  return traces;
}

}  // namespace ckl
