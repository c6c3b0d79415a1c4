#pragma once

// Training updates: bias-corrected Adam over the trainable parameters, a
// regularized variant that anneals between the task gradient and a quadratic
// pull toward a reference snapshot, and the warmup-then-decay learning-rate
// schedule.

#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "ckl/model.hpp"

namespace ckl {

struct AdamConfig {
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float eps = 1e-8f;
};

struct AdamState {
  AdamConfig cfg;
  int64_t step = 0;  // completed updates
  std::map<std::string, std::vector<float>> m, v;
};

// One update from the gradients accumulated in each trainable parameter.
// Parameters without a populated gradient (not part of the current graph) are
// left alone; frozen parameters are never touched.
inline void adam_step(ModelState& model, AdamState& st, float lr) {
  ++st.step;
  double c1 = 1.0 - std::pow(static_cast<double>(st.cfg.beta1), static_cast<double>(st.step));
  double c2 = 1.0 - std::pow(static_cast<double>(st.cfg.beta2), static_cast<double>(st.step));
  for (const auto& name : model.order) {
    auto& p = model.param(name);
    if (!p.requires_grad || p.grad.empty()) continue;
    auto& m = st.m[name];
    auto& v = st.v[name];
    if (m.empty()) {
      m.assign(p.data.size(), 0.0f);
      v.assign(p.data.size(), 0.0f);
    }
    for (size_t i = 0; i < p.data.size(); ++i) {
      float g = p.grad[i];
      m[i] = st.cfg.beta1 * m[i] + (1.0f - st.cfg.beta1) * g;
      v[i] = st.cfg.beta2 * v[i] + (1.0f - st.cfg.beta2) * g * g;
      double mh = m[i] / c1;
      double vh = v[i] / c2;
      double upd = lr * mh / (std::sqrt(vh) + st.cfg.eps);
      if (!std::isfinite(upd)) throw DivergenceError("adam: non-finite update for '" + name + "'");
      p.data[i] -= static_cast<float>(upd);
    }
  }
}

struct RecAdamState {
  double gamma = 5000.0;  // quadratic penalty coefficient
  double t0 = 250.0;      // anneal midpoint
  double k_anneal = 0.5;  // anneal slope
  int64_t t = 0;

  void validate() const {
    if (gamma <= 0.0 || k_anneal <= 0.0) throw ConfigError("recadam: gamma and k_anneal must be positive");
    if (t < 0) throw ConfigError("recadam: negative step counter");
  }
};

// Anneal weight on the task loss: sigmoid in t, 0.5 at the midpoint, rising
// toward 1 so late training sees less regularization.
inline double recadam_lambda(double t, const RecAdamState& st) {
  return 1.0 / (1.0 + std::exp(-st.k_anneal * (t - st.t0)));
}

// Blends the task gradient with the pull toward the snapshot taken at phase
// start, then applies one Adam update:
//   g_eff = lambda(t) * g_task + (1 - lambda(t)) * gamma * (theta - theta0)
inline void recadam_step(ModelState& model, AdamState& adam, RecAdamState& rec, float lr) {
  rec.validate();
  double lam = recadam_lambda(static_cast<double>(rec.t), rec);
  for (const auto& name : model.order) {
    auto& p = model.param(name);
    if (!p.requires_grad || p.grad.empty()) continue;
    auto it = model.theta0.find(name);
    if (it == model.theta0.end())
      throw StateError("recadam: missing reference snapshot for '" + name + "'");
    if (it->second.size() != p.data.size())
      throw StateError("recadam: snapshot size mismatch for '" + name + "'");
    const auto& ref = it->second;
    for (size_t i = 0; i < p.data.size(); ++i) {
      double pull = rec.gamma * (static_cast<double>(p.data[i]) - static_cast<double>(ref[i]));
      p.grad[i] = static_cast<float>(lam * p.grad[i] + (1.0 - lam) * pull);
    }
  }
  ++rec.t;
  adam_step(model, adam, lr);
}

struct LrSchedule {
  double initial_lr = 1e-3;
  int64_t total_steps = 0;
  double warmup_fraction = 0.1;
  double final_multiplier = 0.5;

  void validate() const {
    if (initial_lr < 0.0) throw ConfigError("lr schedule: negative initial_lr");
    if (total_steps < 1) throw ConfigError("lr schedule: total_steps must be >= 1");
    if (warmup_fraction <= 0.0 || warmup_fraction >= 1.0)
      throw ConfigError("lr schedule: warmup_fraction out of (0,1)");
    if (final_multiplier < 0.0 || final_multiplier > 1.0)
      throw ConfigError("lr schedule: final_multiplier out of [0,1]");
  }
};

// Linear warmup to the peak at warmup_fraction * T, then linear decay to
// final_multiplier * initial_lr at step T.
inline double lr_at_step(int64_t s, const LrSchedule& sched) {
  sched.validate();
  if (s < 0) throw ConfigError("lr schedule: negative step");
  if (s > sched.total_steps)
    throw ConfigError("lr schedule: step " + std::to_string(s) + " beyond total " +
                      std::to_string(sched.total_steps));
  double T = static_cast<double>(sched.total_steps);
  double w = sched.warmup_fraction * T;
  double sd = static_cast<double>(s);
  if (sd <= w) return sched.initial_lr * (sd / w);
  double frac = (sd - w) / (T - w);
  return sched.initial_lr * (1.0 - (1.0 - sched.final_multiplier) * frac);
}

}  // namespace ckl
