// Command-line front end: world generation, pretraining, continual phases,
// probing, trade-off scoring, and report emission. Failures print a one-line
// JSON error record to stderr and exit nonzero.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "ckl/runner.hpp"

namespace fs = std::filesystem;

namespace {

// A checkpoint argument may point at a checkpoint directory itself or at a
// run directory, in which case the newest phase checkpoint is meant.
std::string resolve_ckpt(const std::string& arg) {
  if (fs::exists(fs::path(arg) / "manifest.json")) return arg;
  for (int p = 63; p >= 0; --p) {
    fs::path c = fs::path(arg) / ("phase" + std::to_string(p)) / "ckpt";
    if (fs::exists(c / "manifest.json")) return c.string();
  }
  throw ckl::IoError("no checkpoint under '" + arg + "'");
}

ckl::Json load_json(const std::string& path) {
  return ckl::Json::parse(ckl::read_text_file(path));
}

// Shared run-config knobs. The phase list is assembled by the subcommand.
ckl::RunConfig config_from(const ckl::Json& j) {
  ckl::RunConfig cfg;
  if (j.contains("arch")) cfg.arch = ckl::ArchDesc::from_json(j.at("arch"));
  if (j.contains("seed")) cfg.seed = j.at("seed").get<uint64_t>();
  if (j.contains("tracked")) cfg.tracked = j.at("tracked").get<int>();
  if (j.contains("trace_task")) cfg.trace_task = j.at("trace_task").get<std::string>();
  if (j.contains("probe_batch")) cfg.probe_batch = j.at("probe_batch").get<int>();
  if (j.contains("light_tune_probe")) cfg.light_tune_probe = j.at("light_tune_probe").get<bool>();
  if (j.contains("tune_batch")) cfg.tune_batch = j.at("tune_batch").get<int>();
  if (j.contains("tune_lr")) cfg.tune_lr = j.at("tune_lr").get<float>();
  if (j.contains("fuar"))
    for (const auto& s : j.at("fuar"))
      cfg.fuar_specs.emplace_back(s.at("name").get<std::string>(), ckl::FuarSpec::from_json(s.at("spec")));
  return cfg;
}

ckl::PhaseConfig phase_from(const ckl::Json& j, const ckl::PhaseConfig& defaults) {
  ckl::PhaseConfig p = defaults;
  if (j.contains("epochs")) p.epochs = j.at("epochs").get<int>();
  if (j.contains("batch")) p.batch = j.at("batch").get<int>();
  if (j.contains("lr")) p.lr = j.at("lr").get<float>();
  if (j.contains("probe_tasks")) p.probe_tasks = j.at("probe_tasks").get<std::vector<std::string>>();
  return p;
}

// Tasks whose probe files are nonempty, in canonical order; worlds without
// tune facts or phase splits simply lack those files' records.
std::vector<std::string> default_probe_tasks(const std::string& world_dir) {
  std::vector<std::string> out;
  for (const std::string& task : {"invariant", "updated", "new"}) {
    auto probes = ckl::read_probe_file((fs::path(world_dir) / ckl::probe_file_name(task)).string());
    if (!probes.empty()) out.push_back(task);
  }
  return out;
}

int fail(const ckl::Error& e) {
  ckl::Json rec = {{"error", e.kind()}, {"message", e.what()}};
  std::cerr << rec.dump() << "\n";
  return 1;
}

int fail_other(const std::exception& e) {
  ckl::Json rec = {{"error", "internal"}, {"message", e.what()}};
  std::cerr << rec.dump() << "\n";
  return 2;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"continual knowledge learning workbench"};
  app.require_subcommand(1);

  std::string spec_path, out_dir, world_dir, config_path, ckpt, method, phase = "d1", phase2, task, stage = "d0",
              scores_dir, run_dir;

  auto* genworld = app.add_subcommand("genworld", "generate a synthetic fact world");
  genworld->add_option("--spec", spec_path, "world spec json")->required();
  genworld->add_option("--out", out_dir, "output directory")->required();

  auto* pretrain = app.add_subcommand("pretrain", "train a fresh model on the initial corpus");
  pretrain->add_option("--world", world_dir, "world directory")->required();
  pretrain->add_option("--config", config_path, "run config json");
  pretrain->add_option("--out", out_dir, "run output directory")->required();

  auto* cont = app.add_subcommand("continue", "continually pretrain a checkpoint on later corpora");
  cont->add_option("--ckpt", ckpt, "checkpoint (or run) directory")->required();
  cont->add_option("--world", world_dir, "world directory")->required();
  cont->add_option("--method", method, "continual method")
      ->required()
      ->check(CLI::IsMember({"vanilla", "recadam", "mixreview", "lora", "kadapter", "modular"}));
  cont->add_option("--phase", phase, "corpus tag of the first continual phase");
  cont->add_option("--phase2", phase2, "corpus tag of a second continual phase");
  cont->add_option("--config", config_path, "run config json");
  cont->add_option("--out", out_dir, "run output directory")->required();

  auto* probe = app.add_subcommand("probe", "score a checkpoint on one probe task");
  probe->add_option("--ckpt", ckpt, "checkpoint (or run) directory")->required();
  probe->add_option("--world", world_dir, "world directory")->required();
  probe->add_option("--task", task, "probe task")->required();
  probe->add_option("--stage", stage, "stage label recorded with the scores");
  probe->add_option("--out", out_dir, "scores json path")->required();

  auto* fuar_cmd = app.add_subcommand("fuar", "compute the trade-off ratio from score files");
  fuar_cmd->add_option("--scores", scores_dir, "directory of scores json files")->required();
  fuar_cmd->add_option("--spec", spec_path, "fuar spec json")->required();
  fuar_cmd->add_option("--out", out_dir, "result json path");

  auto* report = app.add_subcommand("report", "emit csv reports from a run ledger");
  report->add_option("--run", run_dir, "run directory")->required();
  report->add_option("--out", out_dir, "report output directory")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*genworld) {
      ckl::WorldSpec spec = ckl::WorldSpec::from_json(load_json(spec_path));
      ckl::write_world_dir(ckl::generate_world(spec), out_dir);
      std::cout << ckl::Json({{"world", out_dir}}).dump() << "\n";
      return 0;
    }

    if (*pretrain) {
      ckl::Json j = config_path.empty() ? ckl::Json::object() : load_json(config_path);
      ckl::RunConfig cfg = config_from(j);
      cfg.world_dir = world_dir;
      cfg.out_dir = out_dir;
      cfg.fuar_specs.clear();  // the ratio needs continual stages; see `continue`

      ckl::PhaseConfig p0;
      p0.corpus = "d0";
      p0.method.kind = "initial";
      p0.epochs = 4;
      p0.batch = 16;
      p0.lr = 2e-3f;
      p0.probe_tasks = default_probe_tasks(world_dir);
      cfg.phases = {phase_from(j.contains("initial") ? j.at("initial") : ckl::Json::object(), p0)};

      ckl::RunLedger ledger = ckl::run_experiment(cfg);
      std::cout << ckl::Json({{"run", out_dir}, {"checkpoint", out_dir + "/" + ledger.phases.back().checkpoint}})
                       .dump()
                << "\n";
      return 0;
    }

    if (*cont) {
      ckl::Json j = config_path.empty() ? ckl::Json::object() : load_json(config_path);
      ckl::RunConfig cfg = config_from(j);
      cfg.world_dir = world_dir;
      cfg.out_dir = out_dir;
      cfg.init_ckpt = resolve_ckpt(ckpt);

      ckl::Json mj = j.contains("method") ? j.at("method") : ckl::Json::object();
      mj["kind"] = method;
      ckl::MethodConfig mc = ckl::MethodConfig::from_json(mj);

      // A two-phase request splits the later corpus; "d1"/"d2" name the
      // halves. A single phase takes the corpus tag as given.
      std::vector<std::string> corpora;
      if (phase2.empty()) {
        corpora = {phase};
      } else {
        corpora = {phase == "d1" ? "d1_p1" : phase, phase2 == "d2" ? "d1_p2" : phase2};
      }

      ckl::PhaseConfig start;  // probe-only round on the incoming model
      start.corpus = "d0";
      start.method.kind = "initial";
      start.epochs = 0;
      start.batch = 16;
      start.probe_tasks = default_probe_tasks(world_dir);
      cfg.phases = {start};

      ckl::PhaseConfig cd;
      cd.method = mc;
      cd.epochs = 4;
      cd.batch = 16;
      cd.lr = 1e-3f;
      cd.probe_tasks = start.probe_tasks;
      for (const auto& tag : corpora) {
        ckl::PhaseConfig p = phase_from(j.contains("continual") ? j.at("continual") : ckl::Json::object(), cd);
        p.corpus = tag;
        cfg.phases.push_back(p);
      }

      ckl::RunLedger ledger = ckl::run_experiment(cfg);
      ckl::Json result = {{"run", out_dir}};
      for (const auto& [name, res] : ledger.fuar) result["fuar"][name] = res.to_json();
      std::cout << result.dump() << "\n";
      return 0;
    }

    if (*probe) {
      ckl::LoadedCheckpoint ck = ckl::load_checkpoint(resolve_ckpt(ckpt));
      ckl::Vocabulary vocab = ckl::Vocabulary::load((fs::path(world_dir) / "vocab.txt").string());
      auto probes = ckl::read_probe_file((fs::path(world_dir) / ckl::probe_file_name(task)).string());
      ckl::TaskScore score = ckl::probe_model(ck.model, probes, vocab, ckl::answer_budget(task), 128, stage);
      ckl::write_text_file(out_dir, score.to_json().dump(2) + "\n");
      std::cout << score.to_json().dump() << "\n";
      return 0;
    }

    if (*fuar_cmd) {
      if (!fs::is_directory(scores_dir)) throw ckl::IoError("no scores directory '" + scores_dir + "'");
      ckl::Json records = ckl::Json::array();
      std::vector<std::string> files;
      for (const auto& entry : fs::directory_iterator(scores_dir))
        if (entry.path().extension() == ".json") files.push_back(entry.path().string());
      std::sort(files.begin(), files.end());
      for (const auto& f : files) {
        ckl::Json j = load_json(f);
        if (j.is_array())
          for (const auto& r : j) records.push_back(r);
        else
          records.push_back(j);
      }
      ckl::ScoreTable table = ckl::ScoreTable::from_json(records);
      ckl::FuarResult res = ckl::fuar(ckl::FuarSpec::from_json(load_json(spec_path)), table);
      if (!out_dir.empty()) ckl::write_text_file(out_dir, res.to_json().dump(2) + "\n");
      std::cout << res.to_json().dump() << "\n";
      return 0;
    }

    if (*report) {
      ckl::RunLedger ledger = ckl::RunLedger::from_json(load_json((fs::path(run_dir) / "ledger.json").string()));
      ckl::emit_report(ledger, out_dir);
      std::cout << ckl::Json({{"report", out_dir}}).dump() << "\n";
      return 0;
    }
  } catch (const ckl::Error& e) {
    return fail(e);
  } catch (const std::exception& e) {
    return fail_other(e);
  }
  return 1;
}
