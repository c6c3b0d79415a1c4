#pragma once

// The forgetting / (update + acquisition) trade-off ratio over a table of
// per-stage task scores: signed gaps, optional weighted composite tasks,
// explicit n.d. wiring, and the degenerate no-gain outcome.

#include <algorithm>
#include <cctype>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "ckl/common.hpp"

namespace ckl {

// A task slot in the metric wiring: a single task, a weighted composite, or
// the explicit not-defined marker. n.d. is always spelled out in serialized
// form so an absent task reads as a wiring mistake, not a default.
struct TaskRef {
  bool nd = true;
  std::vector<std::pair<std::string, double>> terms;

  static TaskRef none() { return TaskRef{}; }
  static TaskRef single(const std::string& task) { return TaskRef{false, {{task, 1.0}}}; }
  static TaskRef composite(std::vector<std::pair<std::string, double>> t) { return TaskRef{false, std::move(t)}; }

  void validate() const {
    if (nd) {
      if (!terms.empty()) throw ConfigError("task ref: n.d. carries no tasks");
      return;
    }
    if (terms.empty()) throw ConfigError("task ref: empty task list");
    for (const auto& [task, w] : terms) {
      if (task.empty()) throw ConfigError("task ref: empty task id");
      if (!(w > 0.0)) throw ConfigError("task ref: weight for '" + task + "' must be positive");
    }
  }

  nlohmann::json to_json() const {
    if (nd) return "n.d.";
    if (terms.size() == 1 && terms[0].second == 1.0) return terms[0].first;
    nlohmann::json j = nlohmann::json::object();
    for (const auto& [task, w] : terms) j[task] = w;
    return j;
  }

  static TaskRef from_json(const nlohmann::json& j) {
    TaskRef r;
    if (j.is_string()) {
      std::string s = j.get<std::string>();
      if (s == "n.d.") return r;
      r = single(s);
    } else if (j.is_object()) {
      std::vector<std::pair<std::string, double>> terms;
      for (const auto& [task, w] : j.items()) {
        if (!w.is_number()) throw ConfigError("task ref: weight for '" + task + "' is not a number");
        terms.emplace_back(task, w.get<double>());
      }
      r = composite(std::move(terms));
    } else {
      throw ConfigError("task ref: expected a task id, a weight map, or \"n.d.\"");
    }
    r.validate();
    return r;
  }
};

// Scores indexed by (task, stage); stage i is the model after corpus i.
// The metric never cares whether the scores are EM or F1 percentages.
struct ScoreTable {
  std::map<std::pair<std::string, int>, double> scores;

  void set(const std::string& task, int stage, double value) { scores[{task, stage}] = value; }

  bool has(const std::string& task, int stage) const { return scores.count({task, stage}) > 0; }

  double at(const std::string& task, int stage) const {
    auto it = scores.find({task, stage});
    if (it == scores.end())
      throw ConfigError("score table: no score for ('" + task + "', stage " + std::to_string(stage) + ")");
    return it->second;
  }

  // Stage labels of the form "d<i>" as written by the probe reports.
  static int parse_stage(const nlohmann::json& stage) {
    if (stage.is_number_integer()) return stage.get<int>();
    std::string s = stage.get<std::string>();
    if (s.size() < 2 || s[0] != 'd') throw ConfigError("score table: stage label '" + s + "' is not d<i>");
    for (size_t i = 1; i < s.size(); ++i)
      if (!std::isdigit(static_cast<unsigned char>(s[i])))
        throw ConfigError("score table: stage label '" + s + "' is not d<i>");
    return std::stoi(s.substr(1));
  }

  // Records shaped like probe score JSON: [{task, stage, em, f1, ...}].
  static ScoreTable from_json(const nlohmann::json& records, const std::string& field = "em") {
    if (!records.is_array()) throw ConfigError("score table: expected an array of score records");
    ScoreTable t;
    for (const auto& r : records)
      t.set(r.at("task").get<std::string>(), parse_stage(r.at("stage")), r.at(field).get<double>());
    return t;
  }

  nlohmann::json to_json() const {
    nlohmann::json out = nlohmann::json::array();
    for (const auto& [key, v] : scores)
      out.push_back({{"task", key.first}, {"stage", "d" + std::to_string(key.second)}, {"em", v}});
    return out;
  }
};

// Signed score difference between two stages; composites expand to the
// weighted sum of their members' gaps. No clamping here.
inline double gap(const TaskRef& ref, int stage_a, int stage_b, const ScoreTable& table) {
  if (ref.nd) throw ConfigError("gap: task is n.d.");
  ref.validate();
  double sum = 0.0;
  for (const auto& [task, w] : ref.terms) sum += w * (table.at(task, stage_a) - table.at(task, stage_b));
  return sum;
}

inline double gap(const std::string& task, int stage_a, int stage_b, const ScoreTable& table) {
  return gap(TaskRef::single(task), stage_a, stage_b, table);
}

struct FuarSpec {
  int n = 1;
  std::vector<TaskRef> forgetting;  // one slot per earlier stage, single or n.d.
  TaskRef update;
  TaskRef acquisition;

  void validate() const {
    if (n < 1) throw ConfigError("fuar spec: n must be >= 1");
    if (static_cast<int>(forgetting.size()) != n)
      throw ConfigError("fuar spec: expected " + std::to_string(n) + " forgetting slots, got " +
                        std::to_string(forgetting.size()));
    for (const auto& f : forgetting) {
      f.validate();
      if (!f.nd && f.terms.size() != 1)
        throw ConfigError("fuar spec: forgetting slots take a single task, not a composite");
    }
    update.validate();
    acquisition.validate();
  }

  nlohmann::json to_json() const {
    nlohmann::json f = nlohmann::json::array();
    for (const auto& r : forgetting) f.push_back(r.to_json());
    return {{"n", n}, {"forgetting", f}, {"update", update.to_json()}, {"acquisition", acquisition.to_json()}};
  }

  static FuarSpec from_json(const nlohmann::json& j) {
    FuarSpec s;
    s.n = j.at("n").get<int>();
    for (const auto& r : j.at("forgetting")) s.forgetting.push_back(TaskRef::from_json(r));
    s.update = TaskRef::from_json(j.at("update"));
    s.acquisition = TaskRef::from_json(j.at("acquisition"));
    s.validate();
    return s;
  }
};

struct FuarResult {
  bool no_gain = false;
  double value = 0.0;

  nlohmann::json to_json() const {
    if (no_gain) return {{"no_gain", true}};
    return {{"no_gain", false}, {"value", value}};
  }
  static FuarResult from_json(const nlohmann::json& j) {
    FuarResult r;
    r.no_gain = j.at("no_gain").get<bool>();
    if (!r.no_gain) r.value = j.at("value").get<double>();
    return r;
  }
};

// Forgotten / (updated + acquired): clamped forgetting gaps of each earlier
// stage against clamped update and acquisition gains over the same stages.
// Slots wired n.d. drop out of both sums; a gainless denominator is the
// distinguished worst case, not a division by zero.
inline FuarResult fuar(const FuarSpec& spec, const ScoreTable& table) {
  spec.validate();
  bool any_defined = false;
  for (const auto& f : spec.forgetting) any_defined = any_defined || !f.nd;
  if (!any_defined) throw ConfigError("fuar: every forgetting slot is n.d.");

  double num = 0.0, den = 0.0;
  for (int i = 0; i < spec.n; ++i) {
    const TaskRef& f = spec.forgetting[static_cast<size_t>(i)];
    if (f.nd) continue;
    num += std::max(0.0, gap(f, i, spec.n, table));
    if (!spec.update.nd) den += std::max(0.0, gap(spec.update, spec.n, i, table));
    if (!spec.acquisition.nd) den += std::max(0.0, gap(spec.acquisition, spec.n, i, table));
  }

  FuarResult r;
  if (den > 0.0) {
    r.value = num / den;
  } else {
    r.no_gain = true;
  }
  return r;
}

}  // namespace ckl
