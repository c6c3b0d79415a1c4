#pragma once

// Shared trained-model fixtures. A tiny fact world is memorized to near-zero
// loss once per process; probe-level tests then have a model whose correct
// answers are known exactly. The optimizer here is a local, test-only Adam so
// these fixtures do not depend on the production update rules.

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "ckl/model.hpp"
#include "ckl/world.hpp"

namespace fixtures {

struct TestAdam {
  float lr = 3e-3f;
  int step = 0;
  std::map<std::string, std::vector<float>> m1, m2;

  void apply(ckl::ModelState& model) {
    ++step;
    double c1 = 1.0 - std::pow(0.9, step);
    double c2 = 1.0 - std::pow(0.999, step);
    for (const auto& name : model.order) {
      auto& p = model.param(name);
      if (!p.requires_grad || p.grad.empty()) continue;
      auto& m = m1[name];
      auto& v = m2[name];
      if (m.empty()) {
        m.assign(p.data.size(), 0.0f);
        v.assign(p.data.size(), 0.0f);
      }
      for (size_t i = 0; i < p.data.size(); ++i) {
        float g = p.grad[i];
        m[i] = 0.9f * m[i] + 0.1f * g;
        v[i] = 0.999f * v[i] + 0.001f * g * g;
        double mh = m[i] / c1, vh = v[i] / c2;
        p.data[i] -= static_cast<float>(lr * mh / (std::sqrt(vh) + 1e-8));
      }
    }
  }
};

inline void zero_grads(ckl::ModelState& model) {
  for (const auto& name : model.order) {
    auto& p = model.param(name);
    if (p.requires_grad) p.grad.assign(p.data.size(), 0.0f);
  }
}

// Full-batch training until the loss drops below `stop_below` or the step cap
// is hit; returns the last observed loss.
inline float train_full_batch(ckl::ModelState& model, const std::vector<ckl::MaskedExample>& batch, TestAdam& opt,
                              int max_steps, float stop_below) {
  float loss = 0.0f;
  for (int s = 0; s < max_steps; ++s) {
    zero_grads(model);
    ckl::Graph g;
    ckl::build_loss(g, model, batch);
    loss = g.forward().data[0];
    if (loss < stop_below) return loss;
    g.backward();
    opt.apply(model);
  }
  return loss;
}

inline ckl::MaskedExample example_of(const ckl::World& w, const ckl::CorpusLine& line, const ckl::ArchDesc& arch) {
  auto ids = w.vocab.tokenize(line.text);
  if (arch.enc_dec()) return ckl::ssm_mask(ids, line.span_start, line.span_len);
  return ckl::lm_example(ids);
}

inline ckl::WorldSpec tiny_world_spec() {
  ckl::WorldSpec s;
  s.seed = 77;
  s.entities = 24;
  s.relations = 6;
  s.modifiers = 6;
  s.n_invariant = 16;
  s.n_updated = 0;
  s.n_new = 0;
  s.n_tune = 0;
  s.templates_per_relation = 2;
  s.dup_initial = 1;
  s.dup_later = 1;
  s.invariant_subsample = 10;
  return s;
}

struct Memorized {
  ckl::World world;
  ckl::ArchDesc arch;
  ckl::ModelState model;
  std::vector<ckl::ProbeRecord> probes;  // invariant probes, template 0
  float final_loss = 0.0f;
};

// kind: "enc-dec" or "dec-only". The encoder-decoder memorizes its masked
// spans to near-zero loss; the decoder-only model keeps irreducible entropy at
// ambiguous early positions, so only its continuations are exact.
inline const Memorized& memorized(const std::string& kind) {
  static std::map<std::string, Memorized> cache;
  auto it = cache.find(kind);
  if (it != cache.end()) return it->second;

  Memorized f;
  f.world = ckl::generate_world(tiny_world_spec());
  f.arch.kind = kind;
  f.arch.layers = 2;
  f.arch.heads = 2;
  f.arch.d_model = 32;
  f.arch.d_ff = 64;
  f.arch.max_len = 32;
  f.arch.vocab = f.world.vocab.size();
  f.model = ckl::make_model(f.arch, 123);
  f.probes = ckl::build_probes(f.world, "invariant");

  std::vector<ckl::MaskedExample> batch;
  for (const auto& line : ckl::render_corpus(f.world, "d0")) batch.push_back(example_of(f.world, line, f.arch));

  TestAdam opt;
  if (f.arch.enc_dec()) {
    f.final_loss = train_full_batch(f.model, batch, opt, 2500, 0.005f);
  } else {
    f.final_loss = train_full_batch(f.model, batch, opt, 1200, 0.0f);
  }
  return cache.emplace(kind, std::move(f)).first->second;
}

}  // namespace fixtures
