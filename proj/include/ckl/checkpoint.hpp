#pragma once

// Checkpoint directories: a JSON manifest describing parameter names, shapes
// and byte offsets, plus a raw little-endian float32 blob. Round-trips are
// bit-exact. Optimizer moments and the anneal counter ride along optionally
// so interrupted runs resume without drift.

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "ckl/model.hpp"
#include "ckl/optim.hpp"

namespace ckl {

namespace detail {

inline void append_f32(std::vector<char>& blob, const std::vector<float>& values) {
  const char* bytes = reinterpret_cast<const char*>(values.data());
  blob.insert(blob.end(), bytes, bytes + values.size() * sizeof(float));
}

inline std::vector<float> slice_f32(const std::vector<char>& blob, int64_t offset, int64_t count,
                                    const std::string& what) {
  int64_t need = offset + count * static_cast<int64_t>(sizeof(float));
  if (offset < 0 || need > static_cast<int64_t>(blob.size()))
    throw IoError("checkpoint: blob too small for " + what);
  std::vector<float> out(static_cast<size_t>(count));
  std::memcpy(out.data(), blob.data() + offset, static_cast<size_t>(count) * sizeof(float));
  return out;
}

}  // namespace detail

inline void save_checkpoint(const std::string& dir, const ModelState& model, const AdamState* adam = nullptr,
                            const RecAdamState* rec = nullptr) {
  std::filesystem::create_directories(dir);
  nlohmann::json man;
  man["format"] = 1;
  man["arch"] = model.arch.to_json();
  man["attachments"] = model.attach.to_json();
  std::vector<char> blob;

  man["params"] = nlohmann::json::array();
  for (const auto& name : model.order) {
    const Tensor& t = model.param(name);
    man["params"].push_back({{"name", name}, {"shape", t.shape}, {"offset", blob.size()}});
    detail::append_f32(blob, t.data);
  }
  man["frozen"] = nlohmann::json::array();
  for (const auto& name : model.order)
    if (model.is_frozen(name)) man["frozen"].push_back(name);
  man["theta0"] = nlohmann::json::array();
  for (const auto& name : model.order) {
    auto it = model.theta0.find(name);
    if (it == model.theta0.end()) continue;
    man["theta0"].push_back({{"name", name}, {"offset", blob.size()}});
    detail::append_f32(blob, it->second);
  }
  if (adam) {
    nlohmann::json opt;
    opt["step"] = adam->step;
    opt["beta1"] = adam->cfg.beta1;
    opt["beta2"] = adam->cfg.beta2;
    opt["eps"] = adam->cfg.eps;
    opt["slots"] = nlohmann::json::array();
    for (const auto& name : model.order) {
      auto it = adam->m.find(name);
      if (it == adam->m.end()) continue;
      nlohmann::json slot = {{"name", name}, {"offset_m", blob.size()}};
      detail::append_f32(blob, it->second);
      slot["offset_v"] = blob.size();
      detail::append_f32(blob, adam->v.at(name));
      opt["slots"].push_back(std::move(slot));
    }
    man["optimizer"] = std::move(opt);
  }
  if (rec) {
    man["recadam"] = {{"gamma", rec->gamma}, {"t0", rec->t0}, {"k_anneal", rec->k_anneal}, {"t", rec->t}};
  }

  write_text_file(dir + "/manifest.json", man.dump(2) + "\n");
  std::ofstream out(dir + "/weights.bin", std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("checkpoint: cannot write " + dir + "/weights.bin");
  out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
  if (!out) throw IoError("checkpoint: short write to " + dir + "/weights.bin");
}

struct LoadedCheckpoint {
  ModelState model;
  bool has_adam = false;
  AdamState adam;
  bool has_recadam = false;
  RecAdamState recadam;
};

inline LoadedCheckpoint load_checkpoint(const std::string& dir) {
  nlohmann::json man;
  try {
    man = nlohmann::json::parse(read_text_file(dir + "/manifest.json"));
  } catch (const nlohmann::json::exception& e) {
    throw IoError("checkpoint: bad manifest in " + dir + ": " + e.what());
  }
  std::ifstream in(dir + "/weights.bin", std::ios::binary);
  if (!in) throw IoError("checkpoint: cannot read " + dir + "/weights.bin");
  std::vector<char> blob((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

  LoadedCheckpoint ck;
  ck.model.arch = ArchDesc::from_json(man.at("arch"));
  ck.model.attach = Attachments::from_json(man.at("attachments"));
  for (const auto& p : man.at("params")) {
    std::string name = p.at("name").get<std::string>();
    std::vector<int> shape = p.at("shape").get<std::vector<int>>();
    Tensor& t = ck.model.add_param(name, shape);
    t.data = detail::slice_f32(blob, p.at("offset").get<int64_t>(), t.numel(), "parameter '" + name + "'");
  }
  for (const auto& name : man.at("frozen")) ck.model.set_frozen(name.get<std::string>(), true);
  for (const auto& s : man.at("theta0")) {
    std::string name = s.at("name").get<std::string>();
    ck.model.theta0[name] = detail::slice_f32(blob, s.at("offset").get<int64_t>(), ck.model.param(name).numel(),
                                              "snapshot '" + name + "'");
  }
  if (man.contains("optimizer")) {
    ck.has_adam = true;
    const auto& opt = man.at("optimizer");
    ck.adam.step = opt.at("step").get<int64_t>();
    ck.adam.cfg.beta1 = opt.at("beta1").get<float>();
    ck.adam.cfg.beta2 = opt.at("beta2").get<float>();
    ck.adam.cfg.eps = opt.at("eps").get<float>();
    for (const auto& slot : opt.at("slots")) {
      std::string name = slot.at("name").get<std::string>();
      int64_t n = ck.model.param(name).numel();
      ck.adam.m[name] = detail::slice_f32(blob, slot.at("offset_m").get<int64_t>(), n, "moment m '" + name + "'");
      ck.adam.v[name] = detail::slice_f32(blob, slot.at("offset_v").get<int64_t>(), n, "moment v '" + name + "'");
    }
  }
  if (man.contains("recadam")) {
    ck.has_recadam = true;
    const auto& r = man.at("recadam");
    ck.recadam.gamma = r.at("gamma").get<double>();
    ck.recadam.t0 = r.at("t0").get<double>();
    ck.recadam.k_anneal = r.at("k_anneal").get<double>();
    ck.recadam.t = r.at("t").get<int64_t>();
  }
  return ck;
}

}  // namespace ckl
