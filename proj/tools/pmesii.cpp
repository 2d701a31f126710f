// pmesii: command-line front end.
//
//   pmesii run       --scenario PATH --seed N --out DIR [--open-loop] [--replan-months M] [--mismatch E]
//   pmesii sweep     --scenario PATH --seed N --out DIR [--dimension D] [--values V,...] [--seeds K]
//   pmesii xgame     --scenario PATH --seed N --out DIR [--mismatch E]
//   pmesii nextstate --scenario PATH --seed N --out DIR [--trials T]
//   pmesii serve     --out DIR [--host H] [--port P]
//   pmesii replay    --manifest FILE --out DIR
//
// Exit status: 0 success, 2 invalid input, 1 anything else.

#include "pmesii/controller.hpp"
#include "pmesii/errors.hpp"
#include "pmesii/harness.hpp"
#include "pmesii/hash.hpp"
#include "pmesii/nextstate.hpp"
#include "pmesii/scenario_io.hpp"
#include "pmesii/service.hpp"
#include "pmesii/xgame.hpp"

#include <CLI11.hpp>
#include <Eigen/Core>
#include <json.hpp>

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

namespace fs = std::filesystem;
using nlohmann::json;
using namespace pmesii;

namespace {

struct Invocation {
  std::string command;
  std::string scenario_path;
  std::uint64_t seed = 0;
  std::string out;
  json options = json::object();
};

std::string iso_time(std::chrono::system_clock::time_point t) {
  const std::time_t tt = std::chrono::system_clock::to_time_t(t);
  std::tm tm{};
  gmtime_r(&tt, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void write_file(const fs::path &path, const std::string &content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << content;
  if (!out)
    throw Error("cannot write " + path.string());
}

template <typename F> std::string render(F f) {
  std::ostringstream s;
  f(s);
  return s.str();
}

json versions() {
  return {{"pmesii", version()},
          {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) +
                        "." + std::to_string(EIGEN_MINOR_VERSION)},
          {"nlohmann_json", std::to_string(NLOHMANN_JSON_VERSION_MAJOR) + "." +
                                std::to_string(NLOHMANN_JSON_VERSION_MINOR) + "." +
                                std::to_string(NLOHMANN_JSON_VERSION_PATCH)},
          {"compiler", __VERSION__}};
}

RunSettings settings_from(const json &o) {
  RunSettings s;
  s.mode = o.value("open_loop", false) ? LoopMode::Open : LoopMode::Closed;
  if (o.contains("replan_months"))
    s.replan_period_months = o.at("replan_months").get<int>();
  if (o.contains("mismatch"))
    s.mismatch_level = o.at("mismatch").get<double>();
  if (o.contains("noise_scale"))
    s.observation_noise_scale = o.at("noise_scale").get<double>();
  return s;
}

using Files = std::map<std::string, std::string>;

/// Produce the data files of one command into `files` (name -> content). A
/// failing sweep leaves its partial CSV behind.
void execute(const std::string &command, const Scenario &scenario, std::uint64_t seed,
             const json &o, Files &files, std::vector<std::string> &warnings) {
  if (command == "run") {
    const RunSettings settings = settings_from(o);
    const RunLog log = settings.mode == LoopMode::Open ? run_open_loop(scenario, seed, settings)
                                                       : run_closed_loop(scenario, seed, settings);
    files["run.csv"] = render([&](std::ostream &s) { write_run_csv(s, log); });
  } else if (command == "sweep") {
    ExperimentSpec spec;
    spec.scenario = scenario;
    spec.dimension = parse_sweep_dimension(o.at("dimension").get<std::string>());
    spec.values = o.at("values").get<std::vector<double>>();
    spec.seeds = o.at("seeds").get<int>();
    spec.first_seed = seed;
    spec.settings = settings_from(o);
    std::ostringstream csv;
    try {
      experiment_sweep(spec, &csv);
    } catch (...) {
      files["sweep.csv"] = csv.str();
      throw;
    }
    files["sweep.csv"] = csv.str();
  } else if (command == "xgame") {
    XGameOptions opts;
    if (o.contains("mismatch"))
      opts.mismatch_level = o.at("mismatch").get<double>();
    const XGameResult r = run_xgame(scenario, seed, scripted_cells(), opts);
    files["run.csv"] = render([&](std::ostream &s) { write_run_csv(s, r.log); });
    files["phases.csv"] = render([&](std::ostream &s) { write_phases_csv(s, r.phases); });
    json ledger = json::array();
    for (const auto &e : r.ledger)
      ledger.push_back(to_json(e));
    files["ledger.json"] = ledger.dump(2) + "\n";
    files["events.json"] = json(r.events).dump(2) + "\n";
  } else if (command == "nextstate") {
    NextStateOptions opts;
    if (o.contains("trials"))
      opts.trials = o.at("trials").get<int>();
    const NextStateResult r = run_nextstate(scenario, seed, opts);
    files["run.csv"] = render([&](std::ostream &s) { write_run_csv(s, r.log); });
    json directives = json::array();
    for (const auto &w : r.windows) {
      files["alternatives_" + w.milestone_id + ".csv"] = render(
          [&](std::ostream &s) { write_alternatives_csv(s, w.alternatives, w.selected); });
      directives.push_back(to_json(w.directive, scenario));
    }
    files["directives.json"] = directives.dump(2) + "\n";
    warnings.insert(warnings.end(), r.warnings.begin(), r.warnings.end());
  } else {
    throw SchemaError("command: '" + command + "' produces no artifacts");
  }
}

int run_batch(const Invocation &inv) {
  const auto started = std::chrono::system_clock::now();
  const auto t0 = std::chrono::steady_clock::now();
  std::vector<std::string> warnings;
  const Scenario scenario = load_scenario(inv.scenario_path, &warnings);
  const fs::path out(inv.out);
  fs::create_directories(out);

  Files files;
  int status = 0;
  std::string failure;
  try {
    execute(inv.command, scenario, inv.seed, inv.options, files, warnings);
  } catch (const ValidationError &) {
    throw;
  } catch (const std::exception &e) {
    if (!files.count("sweep.csv"))
      throw;
    failure = e.what();
    status = 1;
  }

  json outputs = json::object();
  for (const auto &[name, content] : files) {
    write_file(out / name, content);
    outputs[name] = sha256_hex(content);
  }
  const auto elapsed =
      std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - t0);
  json manifest = {{"tool", "pmesii"},
                   {"command", inv.command},
                   {"seed", inv.seed},
                   {"scenario_path", inv.scenario_path},
                   {"scenario_hash", scenario_hash(scenario)},
                   {"scenario", to_json(scenario)},
                   {"options", inv.options},
                   {"versions", versions()},
                   {"timings",
                    {{"started_at", iso_time(started)},
                     {"finished_at", iso_time(std::chrono::system_clock::now())},
                     {"elapsed_ms", elapsed.count()}}},
                   {"outputs", outputs},
                   {"warnings", warnings}};
  if (!failure.empty())
    manifest["failure"] = failure;
  write_file(out / "manifest.json", manifest.dump(2) + "\n");
  for (const auto &w : warnings)
    std::cerr << "warning: " << w << '\n';
  if (!failure.empty())
    std::cerr << "error: " << failure << '\n';
  else
    std::cout << "wrote " << files.size() << " file(s) and manifest.json to " << out.string() << '\n';
  return status;
}

int replay(const std::string &manifest_path, const std::string &out_dir) {
  std::ifstream in(manifest_path);
  if (!in)
    throw SchemaError("manifest: cannot read '" + manifest_path + "'");
  json manifest;
  try {
    manifest = json::parse(in);
  } catch (const json::parse_error &e) {
    throw SchemaError(std::string("manifest: ") + e.what());
  }
  for (const char *key : {"command", "seed", "scenario", "scenario_hash", "options", "outputs"})
    if (!manifest.contains(key))
      throw SchemaError(std::string("manifest.") + key + ": required");
  const Scenario scenario = validate_scenario(manifest.at("scenario"));
  if (scenario_hash(scenario) != manifest.at("scenario_hash").get<std::string>())
    throw SchemaError("manifest.scenario_hash: does not match the embedded scenario");

  std::vector<std::string> warnings;
  Files files;
  execute(manifest.at("command").get<std::string>(), scenario,
          manifest.at("seed").get<std::uint64_t>(), manifest.at("options"), files, warnings);
  const fs::path out(out_dir);
  fs::create_directories(out);
  int differ = 0;
  for (const auto &[name, expected] : manifest.at("outputs").items()) {
    const auto it = files.find(name);
    const std::string actual = it == files.end() ? "" : sha256_hex(it->second);
    if (it != files.end())
      write_file(out / name, it->second);
    const bool same = actual == expected.get<std::string>();
    differ += !same;
    std::cout << (same ? "identical " : "DIFFERS   ") << name << '\n';
  }
  return differ ? 1 : 0;
}

} // namespace

int main(int argc, char **argv) {
  CLI::App app{"Rolling-horizon PMESII planning engine and wargame harness"};
  app.set_version_flag("--version", std::string(version()));
  app.require_subcommand(1);

  Invocation inv;
  bool open_loop = false;
  std::optional<int> replan_months;
  std::optional<double> mismatch;
  std::optional<double> noise_scale;
  std::string dimension = "replan_period";
  std::vector<double> values{18, 9, 6, 3};
  int seeds = 50;
  std::optional<int> trials;
  std::string host = "127.0.0.1";
  int port = 8080;
  std::string manifest_path;

  auto batch = [&](const char *name, const char *about) {
    auto *sub = app.add_subcommand(name, about);
    sub->add_option("--scenario", inv.scenario_path, "Scenario JSON file, or 'demo'")->required();
    sub->add_option("--seed", inv.seed, "Run seed")->required();
    sub->add_option("--out", inv.out, "Output directory")->required();
    return sub;
  };
  auto *run = batch("run", "Closed-loop (or open-loop) run over the planning horizon");
  run->add_flag("--open-loop", open_loop, "Plan once and never replan");
  run->add_option("--replan-months", replan_months, "Replanning period in months");
  run->add_option("--mismatch", mismatch, "Model mismatch level in [0, 1]");
  run->add_option("--noise-scale", noise_scale, "Observation noise multiplier");

  auto *sweep = batch("sweep", "Paired open/closed runs across a swept setting");
  sweep->add_option("--dimension", dimension, "replan_period, mismatch or noise");
  sweep->add_option("--values", values, "Comma-separated sweep values")->delimiter(',');
  sweep->add_option("--seeds", seeds, "Seeds per value");
  sweep->add_option("--replan-months", replan_months, "Base replanning period");
  sweep->add_option("--mismatch", mismatch, "Base model mismatch level");

  auto *xgame = batch("xgame", "Scripted X-Game to the end of the game span");
  xgame->add_option("--mismatch", mismatch, "Model mismatch level in [0, 1]");

  auto *nextstate = batch("nextstate", "Next-state planning along the end-state path");
  nextstate->add_option("--trials", trials, "Monte Carlo draws per alternative");

  auto *serve = app.add_subcommand("serve", "JSON session service");
  serve->add_option("--out", inv.out, "State directory root")->required();
  serve->add_option("--host", host, "Bind address");
  serve->add_option("--port", port, "Port");

  auto *rep = app.add_subcommand("replay", "Re-run a manifest and compare outputs");
  rep->add_option("--manifest", manifest_path, "manifest.json of an earlier run")->required();
  rep->add_option("--out", inv.out, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp &e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp &e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion &e) {
    return app.exit(e);
  } catch (const CLI::ParseError &e) {
    app.exit(e);
    return 2;
  }

  try {
    inv.command = app.get_subcommands().front()->get_name();
    if (inv.command == "serve") {
      SessionStore store(fs::path(inv.out) / "state");
      std::cout << "listening on " << host << ':' << port << std::endl;
      return serve_session_api(store, host, port) ? 0 : 1;
    }
    if (inv.command == "replay")
      return replay(manifest_path, inv.out);

    if (open_loop)
      inv.options["open_loop"] = true;
    if (replan_months)
      inv.options["replan_months"] = *replan_months;
    if (mismatch)
      inv.options["mismatch"] = *mismatch;
    if (noise_scale)
      inv.options["noise_scale"] = *noise_scale;
    if (inv.command == "sweep") {
      inv.options["dimension"] = dimension;
      inv.options["values"] = values;
      inv.options["seeds"] = seeds;
    }
    if (trials)
      inv.options["trials"] = *trials;
    return run_batch(inv);
  } catch (const ValidationError &e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception &e) {
    std::cerr << "internal error: " << e.what() << '\n';
    return 1;
  }
}
