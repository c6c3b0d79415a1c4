#pragma once

// Synthetic fact world: deterministic generation of (subject, relation, object)
// triples partitioned into invariant / updated / new classes, rendered into
// training corpora and cloze probe sets.
//
// Corpus roles, all emitted by write_world_dir:
//   corpus_d0.jsonl       initial pretraining corpus (invariant facts, tune
//                         facts, and the old side of every updated fact)
//   corpus_d1.jsonl       full later corpus: an invariant subsample plus every
//                         updated fact (new object) and every new fact; the
//                         target of single-phase continual runs
//   corpus_d1_p1.jsonl    first half of the later corpus under the phase
//   corpus_d1_p2.jsonl    split; targets of sequential two-phase runs
//   corpus_d1_rep10.jsonl small subsample of the later corpus with a raised
//                         duplication factor, for the repetition study
//
// Probe sets: probes_invariant / probes_updated / probes_new probe one class
// each; probes_new_easy prepends a trained context sentence about the same
// subject; its _p1/_p2 variants follow the phase split. tune.jsonl holds
// reserved invariant facts in probe format for light tuning; those facts are
// trained in d0 but never probed.

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "ckl/common.hpp"
#include "ckl/vocab.hpp"
#include "json.hpp"

namespace ckl {

using Json = nlohmann::json;

enum class FactClass { kInvariant, kUpdated, kNew };
enum class Phase { kD0, kD1, kD2 };

inline std::string to_string(FactClass c) {
  switch (c) {
    case FactClass::kInvariant: return "invariant";
    case FactClass::kUpdated: return "updated";
    case FactClass::kNew: return "new";
  }
  throw StateError("bad FactClass");
}

inline std::string to_string(Phase p) {
  switch (p) {
    case Phase::kD0: return "d0";
    case Phase::kD1: return "d1";
    case Phase::kD2: return "d2";
  }
  throw StateError("bad Phase");
}

struct FactTriple {
  int id = -1;
  std::string subject;
  int relation = -1;
  std::string object;
  FactClass klass = FactClass::kInvariant;
  Phase phase = Phase::kD0;
  std::string old_object;  // updated facts only: the d0-era object
  bool tune = false;       // reserved for light tuning, excluded from probes
};

struct WorldSpec {
  uint64_t seed = 7;
  int entities = 600;
  int relations = 24;
  int modifiers = 30;
  int n_invariant = 2000;
  int n_updated = 200;
  int n_new = 200;
  int n_tune = 100;
  int templates_per_relation = 3;  // the last one is reserved for held-out probing
  int dup_initial = 9;
  int dup_later = 4;
  int invariant_subsample = 100;  // invariant facts re-seen in the later corpus
  std::vector<double> phase_fractions = {0.5, 0.5};
  bool held_out_probe_template = false;
  double two_token_object_fraction = 0.25;
  double rep_fraction = 0.1;  // fact fraction kept in the repetition corpus
  int rep_dup = 20;           // duplication factor of the repetition corpus

  int train_templates() const { return templates_per_relation >= 2 ? 2 : 1; }
  int probe_template() const { return held_out_probe_template ? 2 : 0; }

  void validate() const {
    if (entities <= 0 || relations <= 0 || modifiers <= 0)
      throw ConfigError("world spec: entities, relations, modifiers must be positive");
    if (n_invariant <= 0 || n_updated < 0 || n_new < 0 || n_tune < 0)
      throw ConfigError("world spec: negative or zero fact counts");
    if (templates_per_relation < 1 || templates_per_relation > 3)
      throw ConfigError("world spec: templates_per_relation must be 1..3");
    if (held_out_probe_template && templates_per_relation < 3)
      throw ConfigError("world spec: held-out probing needs templates_per_relation == 3");
    if (dup_initial < 1 || dup_later < 1 || rep_dup < 1)
      throw ConfigError("world spec: duplication factors must be >= 1");
    if (invariant_subsample < 0 || invariant_subsample > n_invariant)
      throw ConfigError("world spec: invariant_subsample out of range");
    if (phase_fractions.size() != 2 || phase_fractions[0] <= 0 || phase_fractions[1] <= 0 ||
        std::abs(phase_fractions[0] + phase_fractions[1] - 1.0) > 1e-9)
      throw ConfigError("world spec: phase_fractions must be two positive values summing to 1");
    if (two_token_object_fraction < 0.0 || two_token_object_fraction > 1.0)
      throw ConfigError("world spec: two_token_object_fraction out of [0,1]");
    if (rep_fraction <= 0.0 || rep_fraction > 1.0)
      throw ConfigError("world spec: rep_fraction out of (0,1]");
    int64_t need = int64_t(n_invariant) + n_tune + n_updated + n_new;
    int64_t cap = int64_t(entities) * relations;
    if (need > cap)
      throw ConfigError("world spec: " + std::to_string(need) + " facts exceed entity x relation capacity " +
                        std::to_string(cap));
  }

  Json to_json() const {
    Json j;
    j["seed"] = seed;
    j["entities"] = entities;
    j["relations"] = relations;
    j["modifiers"] = modifiers;
    j["invariant_facts"] = n_invariant;
    j["updated_facts"] = n_updated;
    j["new_facts"] = n_new;
    j["tune_facts"] = n_tune;
    j["templates_per_relation"] = templates_per_relation;
    j["dup_initial"] = dup_initial;
    j["dup_later"] = dup_later;
    j["invariant_subsample"] = invariant_subsample;
    j["phase_fractions"] = phase_fractions;
    j["held_out_probe_template"] = held_out_probe_template;
    j["two_token_object_fraction"] = two_token_object_fraction;
    j["rep_fraction"] = rep_fraction;
    j["rep_dup"] = rep_dup;
    return j;
  }

  static WorldSpec from_json(const Json& j) {
    WorldSpec s;
    for (auto it = j.begin(); it != j.end(); ++it) {
      const std::string& k = it.key();
      if (k == "seed") s.seed = it.value().get<uint64_t>();
      else if (k == "entities") s.entities = it.value().get<int>();
      else if (k == "relations") s.relations = it.value().get<int>();
      else if (k == "modifiers") s.modifiers = it.value().get<int>();
      else if (k == "invariant_facts") s.n_invariant = it.value().get<int>();
      else if (k == "updated_facts") s.n_updated = it.value().get<int>();
      else if (k == "new_facts") s.n_new = it.value().get<int>();
      else if (k == "tune_facts") s.n_tune = it.value().get<int>();
      else if (k == "templates_per_relation") s.templates_per_relation = it.value().get<int>();
      else if (k == "dup_initial") s.dup_initial = it.value().get<int>();
      else if (k == "dup_later") s.dup_later = it.value().get<int>();
      else if (k == "invariant_subsample") s.invariant_subsample = it.value().get<int>();
      else if (k == "phase_fractions") s.phase_fractions = it.value().get<std::vector<double>>();
      else if (k == "held_out_probe_template") s.held_out_probe_template = it.value().get<bool>();
      else if (k == "two_token_object_fraction") s.two_token_object_fraction = it.value().get<double>();
      else if (k == "rep_fraction") s.rep_fraction = it.value().get<double>();
      else if (k == "rep_dup") s.rep_dup = it.value().get<int>();
      else throw ConfigError("world spec: unknown key '" + k + "'");
    }
    return s;
  }
};

struct World {
  WorldSpec spec;
  std::vector<FactTriple> facts;
  Vocabulary vocab;
  std::vector<std::string> entity_words;
  std::vector<std::string> relation_words;
  std::vector<std::string> modifier_words;
  std::vector<int> d1_invariant_ids;  // invariant facts re-rendered in the later corpus
  std::vector<int> rep_ids;           // facts kept in the repetition corpus
};

struct CorpusLine {
  std::string text;
  int fact_id = -1;
  int span_start = -1;
  int span_len = -1;
};

struct ProbeRecord {
  std::string task;
  std::string input_text;
  std::string answer;
  int fact_id = -1;
  std::string old_answer;  // updated probes only
};

namespace detail {

inline std::string pad_num(int v, int width) {
  std::string s = std::to_string(v);
  while (static_cast<int>(s.size()) < width) s.insert(s.begin(), '0');
  return s;
}

constexpr uint64_t kSaltKeys = 11;
constexpr uint64_t kSaltObjects = 12;
constexpr uint64_t kSaltSplit = 13;
constexpr uint64_t kSaltSubsample = 14;
constexpr uint64_t kSaltRep = 15;
constexpr uint64_t kSaltShuffleBase = 100;

inline const std::vector<std::string>& function_words() {
  static const std::vector<std::string> w = {"the", "of", "is", "has", "links", "to"};
  return w;
}

}  // namespace detail

// Renders one fact through one surface template. Every template places the
// object last so the salient span is always a suffix, which keeps cloze slots
// at the end for decoder-only models as well.
inline CorpusLine render_fact(const World& w, const FactTriple& f, int tmpl, bool old_object) {
  if (tmpl < 0 || tmpl >= w.spec.templates_per_relation)
    throw ConfigError("render_fact: template " + std::to_string(tmpl) + " out of range");
  const std::string& obj = old_object ? f.old_object : f.object;
  if (old_object && f.klass != FactClass::kUpdated)
    throw StateError("render_fact: old object requested for a non-updated fact");
  const std::string& relw = w.relation_words.at(static_cast<size_t>(f.relation));
  CorpusLine line;
  switch (tmpl) {
    case 0: line.text = "the " + relw + " of " + f.subject + " is " + obj; break;
    case 1: line.text = f.subject + " has " + relw + " of " + obj; break;
    case 2: line.text = relw + " links " + f.subject + " to " + obj; break;
    default: throw StateError("render_fact: bad template");
  }
  line.fact_id = f.id;
  int total = static_cast<int>(split_ws(line.text).size());
  line.span_len = static_cast<int>(split_ws(obj).size());
  line.span_start = total - line.span_len;
  return line;
}

// Partitions the later-phase (updated + new) facts into two sequential phases.
// Returns (phase-1 ids, phase-2 ids); updated and new facts are split
// independently so both phases carry both kinds.
inline std::pair<std::vector<int>, std::vector<int>> split_phases(const std::vector<FactTriple>& facts,
                                                                 const std::vector<double>& fractions,
                                                                 uint64_t seed) {
  if (fractions.size() != 2 || std::abs(fractions[0] + fractions[1] - 1.0) > 1e-9)
    throw ConfigError("split_phases: fractions must be two values summing to 1");
  std::vector<int> p1, p2;
  Rng rng(mix_seed(seed, detail::kSaltSplit));
  for (FactClass klass : {FactClass::kUpdated, FactClass::kNew}) {
    std::vector<int> ids;
    for (const auto& f : facts)
      if (f.klass == klass) ids.push_back(f.id);
    rng.shuffle(ids);
    size_t take = static_cast<size_t>(std::llround(fractions[0] * static_cast<double>(ids.size())));
    for (size_t i = 0; i < ids.size(); ++i) (i < take ? p1 : p2).push_back(ids[i]);
  }
  return {p1, p2};
}

inline World generate_world(const WorldSpec& spec) {
  spec.validate();
  World w;
  w.spec = spec;

  for (int i = 0; i < spec.entities; ++i) w.entity_words.push_back("ent" + detail::pad_num(i, 4));
  for (int r = 0; r < spec.relations; ++r) w.relation_words.push_back("rel" + detail::pad_num(r, 2));
  for (int m = 0; m < spec.modifiers; ++m) w.modifier_words.push_back("mod" + detail::pad_num(m, 2));

  std::vector<std::string> lexicon;
  for (const auto& v : {w.entity_words, w.relation_words, w.modifier_words, detail::function_words()})
    lexicon.insert(lexicon.end(), v.begin(), v.end());
  w.vocab = Vocabulary::over_lexicon(lexicon);

  // Draw disjoint (subject, relation) keys for every class. New facts prefer
  // subjects that already own an invariant fact so the easy probes can prepend
  // a trained context sentence about the same subject.
  std::vector<std::pair<int, int>> keys;
  keys.reserve(static_cast<size_t>(spec.entities) * static_cast<size_t>(spec.relations));
  for (int e = 0; e < spec.entities; ++e)
    for (int r = 0; r < spec.relations; ++r) keys.emplace_back(e, r);
  Rng key_rng(mix_seed(spec.seed, detail::kSaltKeys));
  key_rng.shuffle(keys);

  size_t cursor = 0;
  auto take_block = [&](int count) {
    std::vector<std::pair<int, int>> block(keys.begin() + static_cast<long>(cursor),
                                           keys.begin() + static_cast<long>(cursor) + count);
    cursor += static_cast<size_t>(count);
    return block;
  };
  auto inv_keys = take_block(spec.n_invariant);
  auto tune_keys = take_block(spec.n_tune);
  std::set<int> anchored;
  for (const auto& k : inv_keys) anchored.insert(k.first);
  std::stable_partition(keys.begin() + static_cast<long>(cursor), keys.end(),
                        [&](const std::pair<int, int>& k) { return anchored.count(k.first) > 0; });
  auto upd_keys = take_block(spec.n_updated);
  auto new_keys = take_block(spec.n_new);

  Rng obj_rng(mix_seed(spec.seed, detail::kSaltObjects));
  auto make_object = [&](int subject_idx) {
    for (int tries = 0; tries < 10000; ++tries) {
      bool two = obj_rng.uniform() < spec.two_token_object_fraction;
      int e = static_cast<int>(obj_rng.below(static_cast<uint64_t>(spec.entities)));
      if (!two && e == subject_idx) continue;
      if (two) return w.modifier_words[obj_rng.below(static_cast<uint64_t>(spec.modifiers))] + " " + w.entity_words[static_cast<size_t>(e)];
      return w.entity_words[static_cast<size_t>(e)];
    }
    throw StateError("generate_world: object draw failed");
  };

  auto add_fact = [&](const std::pair<int, int>& key, FactClass klass, bool tune) {
    FactTriple f;
    f.id = static_cast<int>(w.facts.size());
    f.subject = w.entity_words[static_cast<size_t>(key.first)];
    f.relation = key.second;
    f.klass = klass;
    f.tune = tune;
    f.object = make_object(key.first);
    if (klass == FactClass::kUpdated) {
      f.old_object = f.object;
      for (int tries = 0; tries < 10000 && f.object == f.old_object; ++tries) f.object = make_object(key.first);
      if (f.object == f.old_object) throw StateError("generate_world: could not draw a distinct updated object");
    }
    w.facts.push_back(std::move(f));
  };
  for (const auto& k : inv_keys) add_fact(k, FactClass::kInvariant, false);
  for (const auto& k : tune_keys) add_fact(k, FactClass::kInvariant, true);
  for (const auto& k : upd_keys) add_fact(k, FactClass::kUpdated, false);
  for (const auto& k : new_keys) add_fact(k, FactClass::kNew, false);

  auto [p1, p2] = split_phases(w.facts, spec.phase_fractions, spec.seed);
  for (int id : p1) w.facts[static_cast<size_t>(id)].phase = Phase::kD1;
  for (int id : p2) w.facts[static_cast<size_t>(id)].phase = Phase::kD2;

  Rng sub_rng(mix_seed(spec.seed, detail::kSaltSubsample));
  std::vector<int> inv_ids;
  for (int i = 0; i < spec.n_invariant; ++i) inv_ids.push_back(i);
  w.d1_invariant_ids = sub_rng.sample_without_replacement(inv_ids, static_cast<size_t>(spec.invariant_subsample));

  // Repetition corpus keeps rep_fraction of each later-corpus fact group.
  Rng rep_rng(mix_seed(spec.seed, detail::kSaltRep));
  auto keep_of = [&](const std::vector<int>& ids) {
    auto n = static_cast<size_t>(std::llround(spec.rep_fraction * static_cast<double>(ids.size())));
    auto kept = rep_rng.sample_without_replacement(ids, n);
    w.rep_ids.insert(w.rep_ids.end(), kept.begin(), kept.end());
  };
  std::vector<int> upd_ids, new_ids;
  for (const auto& f : w.facts) {
    if (f.klass == FactClass::kUpdated) upd_ids.push_back(f.id);
    if (f.klass == FactClass::kNew) new_ids.push_back(f.id);
  }
  keep_of(w.d1_invariant_ids);
  keep_of(upd_ids);
  keep_of(new_ids);
  return w;
}

inline const std::vector<std::string>& corpus_tags() {
  static const std::vector<std::string> tags = {"d0", "d1", "d1_p1", "d1_p2", "d1_rep10"};
  return tags;
}

inline std::vector<CorpusLine> render_corpus(const World& w, const std::string& tag) {
  const WorldSpec& s = w.spec;
  std::vector<CorpusLine> unique;
  auto push = [&](const FactTriple& f, bool old_object) {
    for (int t = 0; t < s.train_templates(); ++t) unique.push_back(render_fact(w, f, t, old_object));
  };
  auto push_ids = [&](const std::vector<int>& ids) {
    for (int id : ids) push(w.facts[static_cast<size_t>(id)], false);
  };
  int dup = 0;
  uint64_t salt = detail::kSaltShuffleBase;
  if (tag == "d0") {
    for (const auto& f : w.facts) {
      if (f.klass == FactClass::kInvariant) push(f, false);
      if (f.klass == FactClass::kUpdated) push(f, true);
    }
    dup = s.dup_initial;
    salt += 0;
  } else if (tag == "d1") {
    push_ids(w.d1_invariant_ids);
    for (const auto& f : w.facts)
      if (f.klass != FactClass::kInvariant) push(f, false);
    dup = s.dup_later;
    salt += 1;
  } else if (tag == "d1_p1" || tag == "d1_p2") {
    bool first = tag == "d1_p1";
    size_t half = static_cast<size_t>(std::llround(s.phase_fractions[0] * static_cast<double>(w.d1_invariant_ids.size())));
    std::vector<int> inv(first ? std::vector<int>(w.d1_invariant_ids.begin(), w.d1_invariant_ids.begin() + static_cast<long>(half))
                               : std::vector<int>(w.d1_invariant_ids.begin() + static_cast<long>(half), w.d1_invariant_ids.end()));
    push_ids(inv);
    Phase want = first ? Phase::kD1 : Phase::kD2;
    for (const auto& f : w.facts)
      if (f.klass != FactClass::kInvariant && f.phase == want) push(f, false);
    dup = s.dup_later;
    salt += first ? 2 : 3;
  } else if (tag == "d1_rep10") {
    push_ids(w.rep_ids);
    dup = s.rep_dup;
    salt += 4;
  } else {
    throw ConfigError("render_corpus: unknown tag '" + tag + "'");
  }

  std::vector<CorpusLine> out;
  out.reserve(unique.size() * static_cast<size_t>(dup));
  for (int d = 0; d < dup; ++d) out.insert(out.end(), unique.begin(), unique.end());
  Rng shuffle_rng(mix_seed(s.seed, salt));
  shuffle_rng.shuffle(out);
  return out;
}

// Masks the object span of a rendered sentence. Spans are suffixes, so the
// masked input is the prefix plus the sentinel word.
inline std::string mask_line(const CorpusLine& line) {
  auto toks = split_ws(line.text);
  if (line.span_start < 0 || line.span_len <= 0 ||
      line.span_start + line.span_len != static_cast<int>(toks.size()))
    throw StateError("mask_line: span does not end the sentence");
  std::vector<std::string> kept(toks.begin(), toks.begin() + line.span_start);
  kept.push_back("<mask_0>");
  return join_ws(kept);
}

inline std::vector<std::string> probe_tasks() {
  return {"invariant", "updated", "new", "new-easy", "new-easy-p1", "new-easy-p2", "tune"};
}

inline std::vector<ProbeRecord> build_probes(const World& w, const std::string& task) {
  std::vector<ProbeRecord> out;
  int tmpl = w.spec.probe_template();

  // Lowest-id probe-able invariant fact per subject, used as easy-probe context.
  std::map<std::string, int> anchor;
  int first_invariant = -1;
  for (const auto& f : w.facts) {
    if (f.klass != FactClass::kInvariant || f.tune) continue;
    if (first_invariant < 0) first_invariant = f.id;
    anchor.emplace(f.subject, f.id);
  }

  auto probe_of = [&](const FactTriple& f, const std::string& tag, int use_tmpl) {
    ProbeRecord p;
    p.task = tag;
    p.fact_id = f.id;
    p.answer = f.object;
    p.input_text = mask_line(render_fact(w, f, use_tmpl, false));
    if (f.klass == FactClass::kUpdated) p.old_answer = f.old_object;
    return p;
  };

  for (const auto& f : w.facts) {
    if (task == "invariant") {
      if (f.klass != FactClass::kInvariant || f.tune) continue;
      out.push_back(probe_of(f, task, tmpl));
    } else if (task == "updated") {
      if (f.klass != FactClass::kUpdated) continue;
      out.push_back(probe_of(f, task, tmpl));
    } else if (task == "new") {
      if (f.klass != FactClass::kNew) continue;
      out.push_back(probe_of(f, task, tmpl));
    } else if (task == "new-easy" || task == "new-easy-p1" || task == "new-easy-p2") {
      if (f.klass != FactClass::kNew) continue;
      if (task == "new-easy-p1" && f.phase != Phase::kD1) continue;
      if (task == "new-easy-p2" && f.phase != Phase::kD2) continue;
      ProbeRecord p = probe_of(f, task, tmpl);
      auto it = anchor.find(f.subject);
      int ctx_id = it != anchor.end() ? it->second : first_invariant;
      if (ctx_id >= 0) {
        int ctx_tmpl = w.spec.train_templates() - 1;
        p.input_text = render_fact(w, w.facts[static_cast<size_t>(ctx_id)], ctx_tmpl, false).text + " " + p.input_text;
      }
      out.push_back(p);
    } else if (task == "tune") {
      if (!f.tune) continue;
      out.push_back(probe_of(f, task, 0));
    } else {
      throw ConfigError("build_probes: unknown task '" + task + "'");
    }
  }
  return out;
}

inline std::string probe_file_name(const std::string& task) {
  if (task == "tune") return "tune.jsonl";
  std::string t = task;
  for (auto& c : t)
    if (c == '-') c = '_';
  return "probes_" + t + ".jsonl";
}

inline void write_jsonl(const std::string& path, const std::vector<Json>& records) {
  std::string body;
  for (const auto& r : records) {
    body += r.dump();
    body += '\n';
  }
  write_text_file(path, body);
}

inline std::vector<Json> read_jsonl(const std::string& path) {
  std::istringstream in(read_text_file(path));
  std::vector<Json> out;
  std::string line;
  size_t ln = 0;
  while (std::getline(in, line)) {
    ++ln;
    if (line.empty()) continue;
    Json j = Json::parse(line, nullptr, false);
    if (j.is_discarded()) throw IoError(path + ":" + std::to_string(ln) + ": bad JSON record");
    out.push_back(std::move(j));
  }
  return out;
}

inline void write_world_dir(const World& w, const std::string& dir) {
  std::filesystem::create_directories(dir);
  auto at = [&](const std::string& name) { return (std::filesystem::path(dir) / name).string(); };

  write_text_file(at("world.json"), w.spec.to_json().dump(2) + "\n");
  w.vocab.save(at("vocab.txt"));

  std::vector<Json> facts;
  for (const auto& f : w.facts) {
    Json j;
    j["subject"] = f.subject;
    j["relation"] = f.relation;
    j["object"] = f.object;
    j["klass"] = to_string(f.klass);
    j["phase"] = to_string(f.phase);
    if (f.klass == FactClass::kUpdated) j["old_object"] = f.old_object;
    facts.push_back(std::move(j));
  }
  write_jsonl(at("facts.jsonl"), facts);

  for (const auto& tag : corpus_tags()) {
    std::vector<Json> lines;
    for (const auto& line : render_corpus(w, tag)) {
      Json j;
      j["text"] = line.text;
      j["fact_id"] = line.fact_id;
      j["span_start"] = line.span_start;
      j["span_len"] = line.span_len;
      lines.push_back(std::move(j));
    }
    write_jsonl(at("corpus_" + tag + ".jsonl"), lines);
  }

  for (const auto& task : probe_tasks()) {
    std::vector<Json> records;
    for (const auto& p : build_probes(w, task)) {
      Json j;
      j["task"] = p.task;
      j["input_text"] = p.input_text;
      j["answer"] = p.answer;
      j["fact_id"] = p.fact_id;
      if (!p.old_answer.empty()) j["old_answer"] = p.old_answer;
      records.push_back(std::move(j));
    }
    write_jsonl(at(probe_file_name(task)), records);
  }
}

inline std::vector<CorpusLine> read_corpus_file(const std::string& path) {
  std::vector<CorpusLine> out;
  for (const auto& j : read_jsonl(path)) {
    CorpusLine line;
    line.text = j.at("text").get<std::string>();
    line.fact_id = j.at("fact_id").get<int>();
    line.span_start = j.at("span_start").get<int>();
    line.span_len = j.at("span_len").get<int>();
    out.push_back(std::move(line));
  }
  return out;
}

inline std::vector<ProbeRecord> read_probe_file(const std::string& path) {
  std::vector<ProbeRecord> out;
  for (const auto& j : read_jsonl(path)) {
    ProbeRecord p;
    p.task = j.at("task").get<std::string>();
    p.input_text = j.at("input_text").get<std::string>();
    p.answer = j.at("answer").get<std::string>();
    p.fact_id = j.at("fact_id").get<int>();
    if (j.contains("old_answer")) p.old_answer = j.at("old_answer").get<std::string>();
    out.push_back(std::move(p));
  }
  return out;
}

}  // namespace ckl
