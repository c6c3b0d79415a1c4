#pragma once

// Config-driven experiment orchestration: initial pretraining followed by
// continual phases, per-epoch probing, prediction tracking, trade-off ratios
// over the final scores, resumable state, and plot-ready CSV reports.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "ckl/checkpoint.hpp"
#include "ckl/evalprobe.hpp"
#include "ckl/fuar.hpp"
#include "ckl/methods.hpp"
#include "ckl/optim.hpp"
#include "ckl/world.hpp"

namespace ckl {

// Decode budget per probe task; invariant answers are short, the rest get
// headroom for two-token objects plus trailing noise.
inline int answer_budget(const std::string& task) { return task == "invariant" ? 4 : 10; }

struct PhaseConfig {
  std::string corpus = "d1";  // corpus tag inside the world directory
  MethodConfig method;
  int epochs = 4;
  int batch = 12;
  float lr = 1e-3f;
  std::vector<std::string> probe_tasks;

  nlohmann::json to_json() const {
    return {{"corpus", corpus}, {"method", method.to_json()}, {"epochs", epochs},
            {"batch", batch},   {"lr", lr},                   {"probe_tasks", probe_tasks}};
  }
  static PhaseConfig from_json(const nlohmann::json& j) {
    PhaseConfig p;
    p.corpus = j.at("corpus").get<std::string>();
    p.method = MethodConfig::from_json(j.at("method"));
    p.epochs = j.at("epochs").get<int>();
    p.batch = j.at("batch").get<int>();
    p.lr = j.at("lr").get<float>();
    p.probe_tasks = j.at("probe_tasks").get<std::vector<std::string>>();
    return p;
  }
};

struct RunConfig {
  std::string world_dir;
  ArchDesc arch;
  std::string init_ckpt;  // start from this checkpoint instead of a fresh model
  std::vector<PhaseConfig> phases;
  std::vector<std::pair<std::string, FuarSpec>> fuar_specs;
  int tracked = 8;                     // probes decoded every round; 0 disables
  std::string trace_task = "invariant";
  int probe_batch = 128;
  bool light_tune_probe = false;       // tune a copy on the held-out facts before probing
  int tune_batch = 8;
  float tune_lr = 1e-3f;
  uint64_t seed = 1;
  std::string out_dir;

  void validate() const {
    if (world_dir.empty()) throw ConfigError("run config: empty world directory");
    if (out_dir.empty()) throw ConfigError("run config: empty output directory");
    if (phases.empty()) throw ConfigError("run config: no phases");
    if (phases[0].method.kind != "initial")
      throw ConfigError("run config: the first phase must use plain pretraining");
    if (!init_ckpt.empty() && phases[0].epochs != 0)
      throw ConfigError("run config: starting from a checkpoint, the first phase only probes (0 epochs)");
    auto known = probe_tasks();
    for (size_t i = 0; i < phases.size(); ++i) {
      const PhaseConfig& p = phases[i];
      if (i > 0 && p.method.kind == "initial")
        throw ConfigError("run config: phase " + std::to_string(i) + " repeats plain pretraining");
      p.method.validate();
      if (p.epochs < 0) throw ConfigError("run config: negative epoch count");
      if (p.batch < 1) throw ConfigError("run config: batch size must be >= 1");
      if (!(p.lr > 0.0f)) throw ConfigError("run config: learning rate must be positive");
      if (p.corpus.empty()) throw ConfigError("run config: empty corpus tag");
      for (const auto& t : p.probe_tasks)
        if (std::find(known.begin(), known.end(), t) == known.end())
          throw ConfigError("run config: unknown probe task '" + t + "'");
    }
    if (tracked < 0) throw ConfigError("run config: negative tracked-probe count");
    if (tracked > 0 && std::find(known.begin(), known.end(), trace_task) == known.end())
      throw ConfigError("run config: unknown trace task '" + trace_task + "'");
    if (probe_batch < 1) throw ConfigError("run config: probe batch must be >= 1");
    if (tune_batch < 1) throw ConfigError("run config: tune batch must be >= 1");
    for (const auto& [name, spec] : fuar_specs) {
      if (name.empty()) throw ConfigError("run config: unnamed fuar spec");
      spec.validate();
    }
  }

  nlohmann::json to_json() const {
    nlohmann::json specs = nlohmann::json::array();
    for (const auto& [name, spec] : fuar_specs) specs.push_back({{"name", name}, {"spec", spec.to_json()}});
    nlohmann::json ph = nlohmann::json::array();
    for (const auto& p : phases) ph.push_back(p.to_json());
    return {{"world_dir", world_dir},
            {"arch", arch.to_json()},
            {"init_ckpt", init_ckpt},
            {"phases", ph},
            {"fuar", specs},
            {"tracked", tracked},
            {"trace_task", trace_task},
            {"probe_batch", probe_batch},
            {"light_tune_probe", light_tune_probe},
            {"tune_batch", tune_batch},
            {"tune_lr", tune_lr},
            {"seed", seed},
            {"out_dir", out_dir}};
  }
  static RunConfig from_json(const nlohmann::json& j) {
    RunConfig c;
    c.world_dir = j.at("world_dir").get<std::string>();
    c.arch = ArchDesc::from_json(j.at("arch"));
    if (j.contains("init_ckpt")) c.init_ckpt = j.at("init_ckpt").get<std::string>();
    for (const auto& p : j.at("phases")) c.phases.push_back(PhaseConfig::from_json(p));
    for (const auto& s : j.at("fuar"))
      c.fuar_specs.emplace_back(s.at("name").get<std::string>(), FuarSpec::from_json(s.at("spec")));
    c.tracked = j.at("tracked").get<int>();
    c.trace_task = j.at("trace_task").get<std::string>();
    c.probe_batch = j.at("probe_batch").get<int>();
    c.light_tune_probe = j.at("light_tune_probe").get<bool>();
    c.tune_batch = j.at("tune_batch").get<int>();
    c.tune_lr = j.at("tune_lr").get<float>();
    c.seed = j.at("seed").get<uint64_t>();
    if (j.contains("out_dir")) c.out_dir = j.at("out_dir").get<std::string>();
    return c;
  }
};

struct EpochRecord {
  int phase = 0;
  int epoch = 0;  // within the phase, 1-based; 0 for a probe-only round
  int global_epoch = 0;
  std::vector<TaskScore> scores;

  nlohmann::json to_json() const {
    nlohmann::json sc = nlohmann::json::array();
    for (const auto& s : scores) sc.push_back(s.to_json());
    return {{"phase", phase}, {"epoch", epoch}, {"global_epoch", global_epoch}, {"scores", sc}};
  }
  static EpochRecord from_json(const nlohmann::json& j) {
    EpochRecord r;
    r.phase = j.at("phase").get<int>();
    r.epoch = j.at("epoch").get<int>();
    r.global_epoch = j.at("global_epoch").get<int>();
    for (const auto& s : j.at("scores")) r.scores.push_back(TaskScore::from_json(s));
    return r;
  }
};

struct PhaseRecord {
  int phase = 0;
  std::string corpus;
  std::string method;
  int epochs = 0;
  int steps = 0;
  std::string checkpoint;  // relative to the run directory
  bool aborted = false;

  nlohmann::json to_json() const {
    return {{"phase", phase}, {"corpus", corpus},         {"method", method},   {"epochs", epochs},
            {"steps", steps}, {"checkpoint", checkpoint}, {"aborted", aborted}};
  }
  static PhaseRecord from_json(const nlohmann::json& j) {
    PhaseRecord r;
    r.phase = j.at("phase").get<int>();
    r.corpus = j.at("corpus").get<std::string>();
    r.method = j.at("method").get<std::string>();
    r.epochs = j.at("epochs").get<int>();
    r.steps = j.at("steps").get<int>();
    r.checkpoint = j.at("checkpoint").get<std::string>();
    r.aborted = j.at("aborted").get<bool>();
    return r;
  }
};

namespace detail {

inline nlohmann::json trace_to_json(const PredictionTrace& t) {
  return {{"probe_id", t.probe_id}, {"gold", t.gold}, {"decoded", t.decoded}};
}

inline PredictionTrace trace_from_json(const nlohmann::json& j) {
  PredictionTrace t;
  t.probe_id = j.at("probe_id").get<int>();
  t.gold = j.at("gold").get<std::string>();
  t.decoded = j.at("decoded").get<std::vector<std::string>>();
  return t;
}

}  // namespace detail

struct RunLedger {
  nlohmann::json config;  // run configuration minus the output path
  std::vector<PhaseRecord> phases;
  std::vector<EpochRecord> epochs;
  std::vector<PredictionTrace> traces;
  std::vector<std::pair<std::string, FuarResult>> fuar;

  nlohmann::json to_json() const {
    nlohmann::json ph = nlohmann::json::array(), ep = nlohmann::json::array(), tr = nlohmann::json::array(),
                   fr = nlohmann::json::array();
    for (const auto& p : phases) ph.push_back(p.to_json());
    for (const auto& e : epochs) ep.push_back(e.to_json());
    for (const auto& t : traces) tr.push_back(detail::trace_to_json(t));
    for (const auto& [name, res] : fuar) fr.push_back({{"name", name}, {"result", res.to_json()}});
    return {{"config", config}, {"phases", ph}, {"epochs", ep}, {"traces", tr}, {"fuar", fr}};
  }
  static RunLedger from_json(const nlohmann::json& j) {
    RunLedger l;
    l.config = j.at("config");
    for (const auto& p : j.at("phases")) l.phases.push_back(PhaseRecord::from_json(p));
    for (const auto& e : j.at("epochs")) l.epochs.push_back(EpochRecord::from_json(e));
    for (const auto& t : j.at("traces")) l.traces.push_back(detail::trace_from_json(t));
    for (const auto& f : j.at("fuar"))
      l.fuar.emplace_back(f.at("name").get<std::string>(), FuarResult::from_json(f.at("result")));
    return l;
  }
};

// Read-side view of a generated world directory with per-file caching.
class WorldDir {
 public:
  explicit WorldDir(std::string dir) : dir_(std::move(dir)) {
    vocab_ = Vocabulary::load(path("vocab.txt"));
  }

  const Vocabulary& vocab() const { return vocab_; }

  const std::vector<CorpusLine>& corpus(const std::string& tag) {
    auto it = corpora_.find(tag);
    if (it == corpora_.end()) it = corpora_.emplace(tag, read_corpus_file(path("corpus_" + tag + ".jsonl"))).first;
    return it->second;
  }

  const std::vector<ProbeRecord>& probes(const std::string& task) {
    auto it = probes_.find(task);
    if (it == probes_.end()) it = probes_.emplace(task, read_probe_file(path(probe_file_name(task)))).first;
    return it->second;
  }

 private:
  std::string path(const std::string& name) const {
    return (std::filesystem::path(dir_) / name).string();
  }
  std::string dir_;
  Vocabulary vocab_;
  std::map<std::string, std::vector<CorpusLine>> corpora_;
  std::map<std::string, std::vector<ProbeRecord>> probes_;
};

namespace detail {

inline std::vector<MaskedExample> build_examples(const std::vector<CorpusLine>& lines, const Vocabulary& vocab,
                                                 const ArchDesc& arch) {
  std::vector<MaskedExample> out;
  out.reserve(lines.size());
  for (const auto& line : lines) {
    std::vector<int> ids = vocab.tokenize(line.text);
    if (arch.enc_dec())
      out.push_back(ssm_mask(ids, line.span_start, line.span_len));
    else
      out.push_back(lm_example(ids));
  }
  return out;
}

inline std::vector<size_t> shuffled_indices(size_t n, uint64_t seed) {
  std::vector<size_t> idx(n);
  for (size_t i = 0; i < n; ++i) idx[i] = i;
  Rng rng(seed);
  for (size_t i = n; i > 1; --i) std::swap(idx[i - 1], idx[rng.below(i)]);
  return idx;
}

inline void zero_grads(ModelState& model) {
  for (const auto& name : model.order) {
    auto& p = model.param(name);
    if (p.requires_grad) p.grad.assign(p.data.size(), 0.0f);
  }
}

struct Progress {
  int phase = 0;
  int epochs_done = 0;
  int global_epoch = 0;
};

}  // namespace detail

// Runs the configured experiment. A partially completed run left behind in
// the output directory (by a crash or an explicit stop) is resumed from its
// last epoch snapshot; state snapshots are epoch-granular, so training,
// optimizer moments, and replay draws all pick up exactly where they left
// off. `stop_after_global_epoch` > 0 halts after that many probe rounds and
// keeps the resume state; <= 0 runs to completion.
inline RunLedger run_experiment(const RunConfig& cfg, int stop_after_global_epoch = 0) {
  cfg.validate();
  namespace fs = std::filesystem;
  fs::create_directories(cfg.out_dir);
  auto out_path = [&](const std::string& rel) { return (fs::path(cfg.out_dir) / rel).string(); };
  std::string state_dir = out_path("state");

  WorldDir world(cfg.world_dir);
  ArchDesc arch = cfg.arch;
  if (arch.vocab <= 0) arch.vocab = static_cast<int>(world.vocab().size());

  RunLedger ledger;
  ledger.config = cfg.to_json();
  ledger.config.erase("out_dir");

  ModelState model;
  AdamState adam;
  RecAdamState rec;
  detail::Progress at;

  bool resumed = fs::exists(state_dir + "/progress.json");
  if (resumed) {
    nlohmann::json pj = nlohmann::json::parse(read_text_file(state_dir + "/progress.json"));
    at.phase = pj.at("phase").get<int>();
    at.epochs_done = pj.at("epochs_done").get<int>();
    at.global_epoch = pj.at("global_epoch").get<int>();
    ledger = RunLedger::from_json(nlohmann::json::parse(read_text_file(state_dir + "/ledger.json")));
    LoadedCheckpoint ck = load_checkpoint(state_dir + "/ckpt");
    model = std::move(ck.model);
    arch = model.arch;
    if (ck.has_adam) adam = std::move(ck.adam);
    if (ck.has_recadam) rec = ck.recadam;
  } else if (!cfg.init_ckpt.empty()) {
    // The checkpoint brings its own architecture; the configured one is a
    // template at most.
    model = std::move(load_checkpoint(cfg.init_ckpt).model);
    arch = model.arch;
  } else {
    model = make_model(arch, mix_seed(cfg.seed, 0xBA5E));
  }

  // The tracked subset is fixed by the world, so resuming rebuilds it bit
  // for bit; its decoded history lives in the ledger.
  std::vector<ProbeRecord> trace_subset;
  if (cfg.tracked > 0) {
    const auto& all = world.probes(cfg.trace_task);
    size_t take = std::min<size_t>(static_cast<size_t>(cfg.tracked), all.size());
    trace_subset.assign(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(take));
    if (ledger.traces.empty()) ledger.traces = make_traces(trace_subset);
  }

  std::vector<double> phase_seconds;
  std::map<int, double> timed;

  auto save_state = [&](const detail::Progress& p) {
    save_checkpoint(state_dir + "/ckpt", model, &adam, model.theta0.empty() ? nullptr : &rec);
    write_text_file(state_dir + "/ledger.json", ledger.to_json().dump(2) + "\n");
    nlohmann::json pj = {{"phase", p.phase}, {"epochs_done", p.epochs_done}, {"global_epoch", p.global_epoch}};
    write_text_file(state_dir + "/progress.json", pj.dump(2) + "\n");
  };

  auto finish = [&]() {
    std::error_code ec;
    fs::remove_all(state_dir, ec);
    write_text_file(out_path("ledger.json"), ledger.to_json().dump(2) + "\n");
    nlohmann::json tj = nlohmann::json::object();
    for (const auto& [p, s] : timed) tj["d" + std::to_string(p)] = s;
    write_text_file(out_path("timings.json"), nlohmann::json({{"phase_seconds", tj}}).dump(2) + "\n");
  };

  auto probe_round = [&](int phase_idx, int epoch_in_phase) {
    const PhaseConfig& pc = cfg.phases[static_cast<size_t>(phase_idx)];
    std::string stage = "d" + std::to_string(phase_idx);

    ModelState* probed = &model;
    ModelState tuned;
    if (cfg.light_tune_probe) {
      tuned = model;
      std::vector<int> probed_ids;
      for (const auto& task : pc.probe_tasks)
        for (const auto& p : world.probes(task)) probed_ids.push_back(p.fact_id);
      for (const auto& p : trace_subset) probed_ids.push_back(p.fact_id);
      light_tune(tuned, world.probes("tune"), probed_ids, world.vocab(), 1, cfg.tune_batch, cfg.tune_lr);
      probed = &tuned;
    }

    EpochRecord record;
    record.phase = phase_idx;
    record.epoch = epoch_in_phase;
    record.global_epoch = at.global_epoch + 1;
    for (const auto& task : pc.probe_tasks)
      record.scores.push_back(probe_model(*probed, world.probes(task), world.vocab(), answer_budget(task),
                                          cfg.probe_batch, stage));
    if (!trace_subset.empty())
      track_predictions(*probed, trace_subset, world.vocab(), answer_budget(cfg.trace_task), ledger.traces);
    ledger.epochs.push_back(std::move(record));
    ++at.global_epoch;
  };

  bool aborted = false;
  for (int p = at.phase; p < static_cast<int>(cfg.phases.size()) && !aborted; ++p) {
    const PhaseConfig& pc = cfg.phases[static_cast<size_t>(p)];
    bool mid_phase = resumed && p == at.phase && at.epochs_done > 0;
    auto phase_start = std::chrono::steady_clock::now();

    if (!mid_phase && p > 0) {
      // Phase setup: fresh expansion parameters, freeze policy, snapshot,
      // and a fresh optimizer. The schedule restarts with the phase too.
      std::string tag = p == 1 ? "" : std::to_string(p);
      if (method_expands_params(pc.method.kind))
        attach_method(model, pc.method, mix_seed(cfg.seed, 0xA77A, static_cast<uint64_t>(p)), tag);
      apply_freeze_policy(model, pc.method, pc.method.kind + tag);
      adam = AdamState{};
      if (pc.method.kind == "recadam") {
        model.take_theta0();
        rec = RecAdamState{pc.method.recadam.gamma, pc.method.recadam.t0, pc.method.recadam.k_anneal, 0};
      } else {
        model.theta0.clear();
        rec = RecAdamState{};
      }
    }
    if (!mid_phase && p == 0) adam = AdamState{};

    const auto& lines = world.corpus(pc.corpus);
    std::vector<MaskedExample> examples = detail::build_examples(lines, world.vocab(), arch);
    int steps_per_epoch = pc.epochs == 0 || examples.empty()
                              ? 0
                              : static_cast<int>((examples.size() + pc.batch - 1) / static_cast<size_t>(pc.batch));
    int total_steps = steps_per_epoch * pc.epochs;
    LrSchedule sched{pc.lr, std::max(1, total_steps), 0.1, 0.5};

    std::vector<MaskedExample> replay;
    if (pc.method.kind == "mixreview") replay = detail::build_examples(world.corpus("d0"), world.vocab(), arch);

    int first_epoch = mid_phase ? at.epochs_done + 1 : 1;
    int phase_step = mid_phase ? at.epochs_done * steps_per_epoch : 0;

    // Probe-only phase: the model is left exactly as it arrived. No state
    // snapshot here; the completion snapshot below covers it, and replaying
    // the round after a crash is deterministic.
    if (pc.epochs == 0) probe_round(p, 0);

    for (int e = first_epoch; e <= pc.epochs && !aborted; ++e) {
      auto order = detail::shuffled_indices(examples.size(), mix_seed(cfg.seed, 0x0E0C + static_cast<uint64_t>(p),
                                                                      static_cast<uint64_t>(e)));
      std::vector<size_t> pool;
      int quota = 0;
      if (!replay.empty()) {
        quota = mixreview_quota(e - 1, pc.batch, pc.method);
        if (quota > 0)
          pool = detail::shuffled_indices(replay.size(), mix_seed(cfg.seed, 0x4E9A + static_cast<uint64_t>(p),
                                                                  static_cast<uint64_t>(e)));
      }

      try {
        size_t pool_pos = 0;
        for (size_t start = 0; start < order.size(); start += static_cast<size_t>(pc.batch)) {
          size_t stop = std::min(order.size(), start + static_cast<size_t>(pc.batch));
          // Replay fills `quota` of the batch slots, displacing that many new
          // examples; the step count and batch size stay what vanilla gets,
          // so early epochs see proportionally less of the new corpus.
          size_t take = stop - start;
          if (quota > 0 && !pool.empty())
            take -= std::min(take, static_cast<size_t>(quota));
          std::vector<MaskedExample> batch;
          for (size_t i = start; i < start + take; ++i) batch.push_back(examples[order[i]]);
          for (int r = 0; r < quota && !pool.empty(); ++r) {
            batch.push_back(replay[pool[pool_pos]]);
            pool_pos = (pool_pos + 1) % pool.size();  // exhaust before repeating
          }

          detail::zero_grads(model);
          Graph g;
          build_loss(g, model, batch);
          g.forward();
          g.backward();
          ++phase_step;
          float lr = static_cast<float>(lr_at_step(phase_step, sched));
          if (pc.method.kind == "recadam")
            recadam_step(model, adam, rec, lr);
          else
            adam_step(model, adam, lr);
        }
      } catch (const DivergenceError&) {
        aborted = true;
        break;
      }

      probe_round(p, e);
      save_state({p, e, at.global_epoch});
      if (stop_after_global_epoch > 0 && at.global_epoch >= stop_after_global_epoch) return ledger;
    }

    std::string ckpt_rel = "phase" + std::to_string(p) + "/ckpt";
    if (!aborted) save_checkpoint(out_path(ckpt_rel), model, &adam, model.theta0.empty() ? nullptr : &rec);

    PhaseRecord pr;
    pr.phase = p;
    pr.corpus = pc.corpus;
    pr.method = pc.method.kind;
    pr.epochs = pc.epochs;
    pr.steps = aborted ? phase_step : total_steps;
    pr.checkpoint = aborted ? "" : ckpt_rel;
    pr.aborted = aborted;
    ledger.phases.push_back(pr);
    timed[p] = std::chrono::duration<double>(std::chrono::steady_clock::now() - phase_start).count();

    if (!aborted) save_state({p + 1, 0, at.global_epoch});
  }

  if (!aborted) {
    ScoreTable table;
    for (size_t p = 0; p < cfg.phases.size(); ++p) {
      for (auto it = ledger.epochs.rbegin(); it != ledger.epochs.rend(); ++it) {
        if (it->phase != static_cast<int>(p)) continue;
        for (const auto& s : it->scores) table.set(s.task, static_cast<int>(p), s.em);
        break;
      }
    }
    for (const auto& [name, spec] : cfg.fuar_specs) ledger.fuar.emplace_back(name, fuar(spec, table));
  }

  finish();
  return ledger;
}

namespace detail {

inline std::string g17(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace detail

// Plot-ready artifacts: per-epoch scores, the trade-off summary, and the
// prediction traces. Score cells use shortest-exact formatting so a re-parse
// reproduces the ledger values bit for bit.
inline void emit_report(const RunLedger& ledger, const std::string& out_dir) {
  if (ledger.epochs.empty() && ledger.phases.empty()) throw ConfigError("report: empty ledger");
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  auto at = [&](const std::string& name) { return (fs::path(out_dir) / name).string(); };

  std::string csv = "epoch,task,stage,em,f1,p@1,p@5,p@10,p@20,p@50,p@100\n";
  for (const auto& e : ledger.epochs) {
    for (const auto& s : e.scores) {
      csv += std::to_string(e.global_epoch) + "," + s.task + "," + s.stage + "," + detail::g17(s.em) + "," +
             detail::g17(s.f1);
      for (int k : pk_levels()) csv += "," + detail::g17(s.p_at_k.at(k));
      csv += "\n";
    }
  }
  write_text_file(at("scores.csv"), csv);

  std::string method;
  for (const auto& p : ledger.phases) {
    if (p.method == "initial") continue;
    method += (method.empty() ? "" : "+") + p.method;
  }
  if (method.empty()) method = "initial";

  std::string summary = "method,spec,value\n";
  for (const auto& [name, res] : ledger.fuar) {
    std::string value = "no_gain";
    if (!res.no_gain) {
      char buf[32];
      std::snprintf(buf, sizeof buf, "%.2f", res.value);
      value = buf;
    }
    summary += method + "," + name + "," + value + "\n";
  }
  write_text_file(at("fuar_summary.csv"), summary);

  write_traces(at("traces.jsonl"), ledger.traces);
}

}  // namespace ckl
