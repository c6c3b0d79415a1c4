#pragma once

#include <map>
#include <string>
#include <vector>

#include "ckl/graph.hpp"

namespace ckl {

struct GradCheckEntry {
  std::string name;
  double max_rel_err = 0.0;
  bool pass = true;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double worst = 0.0;
  bool pass = true;
};

// Central finite differences against the analytic backward pass, per trainable
// leaf. Error is relative to max(|analytic|, |numeric|, 1), which keeps the
// check meaningful where the true gradient is near zero and float32 forward
// noise dominates a pure ratio.
inline GradCheckReport check_gradients(Graph& g, double tol = 1e-3, double h = 1e-3) {
  g.invalidate();
  const Tensor& out = g.forward();
  if (out.numel() != 1) throw ConfigError("check_gradients requires a scalar-valued graph");

  std::vector<int> leaves = g.trainable_leaves();
  std::map<Tensor*, std::string> params;  // dedupe shared leaves
  for (int id : leaves) params.emplace(g.leaf_param(id), g.name(id));

  std::vector<std::vector<float>> saved_grads;
  for (auto& [p, name] : params) {
    saved_grads.push_back(p->grad);
    p->grad.clear();
    p->ensure_grad();
  }
  g.backward();

  GradCheckReport report;
  for (auto& [p, name] : params) {
    std::vector<float> analytic = p->grad;
    GradCheckEntry e;
    e.name = name;
    for (size_t i = 0; i < p->data.size(); ++i) {
      float saved = p->data[i];
      p->data[i] = saved + static_cast<float>(h);
      g.invalidate();
      double fp = g.forward().data[0];
      p->data[i] = saved - static_cast<float>(h);
      g.invalidate();
      double fm = g.forward().data[0];
      p->data[i] = saved;
      double fd = (fp - fm) / (2.0 * h);
      double a = analytic[i];
      double rel = std::abs(a - fd) / std::max({std::abs(a), std::abs(fd), 1.0});
      e.max_rel_err = std::max(e.max_rel_err, rel);
    }
    e.pass = e.max_rel_err < tol;
    report.worst = std::max(report.worst, e.max_rel_err);
    report.pass = report.pass && e.pass;
    report.entries.push_back(std::move(e));
  }

  // leave the graph consistent and restore caller gradients
  g.invalidate();
  g.forward();
  size_t k = 0;
  for (auto& [p, name] : params) p->grad = saved_grads[k++];
  return report;
}

}  // namespace ckl
