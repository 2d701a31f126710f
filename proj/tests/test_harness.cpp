#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "support.hpp"

#include "pmesii/errors.hpp"
#include "pmesii/harness.hpp"
#include "pmesii/service.hpp"

#include <httplib.h>

#include <sys/wait.h>

#include <algorithm>
#include <fstream>
#include <sstream>
#include <thread>

using namespace pmesii;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string &name) {
  const fs::path dir = fs::temp_directory_path() / ("pmesii_test_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::vector<std::string> lines_of(const std::string &text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  for (std::string line; std::getline(in, line);)
    out.push_back(line);
  return out;
}

std::vector<std::string> cells(const std::string &line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ','))
    out.push_back(cell);
  if (!line.empty() && line.back() == ',')
    out.push_back("");
  return out;
}

ExperimentSpec small_sweep() {
  ExperimentSpec spec;
  spec.scenario = test::demo();
  spec.values = {18, 3};
  spec.seeds = 3;
  return spec;
}

json scripted_plan_body(const XGameSession &game, CellRole role) {
  const auto cells = scripted_cells();
  if (role == CellRole::Blue)
    return {{"role", "Blue"}, {"plan", to_json(cells.blue(game), game.scenario())}};
  if (role == CellRole::Red)
    return {{"role", "red"}, {"plan", to_json(cells.red(game), game.scenario())}};
  return {{"role", "Green"}, {"plan", to_json(cells.green(game), game.scenario())}};
}

void play_phase(Session &s, std::int64_t now) {
  const int phase = s.xgame()->phase();
  for (auto role : {CellRole::Red, CellRole::Green, CellRole::Blue})
    s.submit_plan(phase, scripted_plan_body(*s.xgame(), role), now);
  s.advance(json::object(), now);
}

int run(const std::string &command) {
  const int status = std::system((command + " >/dev/null 2>&1").c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path &p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

} // namespace

TEST_CASE("sweep accounting") {
  const ExperimentSpec spec = small_sweep();
  std::ostringstream csv;
  const auto result = experiment_sweep(spec, &csv);
  CHECK(result.rows.size() == 6);
  CHECK(result.summaries.size() == 2);

  const auto lines = lines_of(csv.str());
  REQUIRE(lines.size() == 1 + 6 + 2);
  CHECK(lines[0] == "sweep_value,seed,open_cost,closed_cost,closed_minus_open,win_rate");
  int data = 0, summaries = 0;
  for (std::size_t k = 1; k < lines.size(); ++k) {
    const auto c = cells(lines[k]);
    REQUIRE(c.size() == 6);
    if (c[1] == "summary") {
      ++summaries;
      CHECK_FALSE(c[5].empty());
    } else {
      ++data;
      CHECK(c[5].empty());
      CHECK(std::stod(c[4]) == doctest::Approx(std::stod(c[3]) - std::stod(c[2])));
    }
  }
  CHECK(data == 6);
  CHECK(summaries == 2);

  for (const auto &s : result.summaries) {
    int wins = 0, n = 0;
    std::vector<double> diffs;
    for (const auto &r : result.rows)
      if (r.value == s.value) {
        ++n;
        wins += r.closed_minus_open() < 0.0;
        diffs.push_back(r.closed_minus_open());
      }
    CHECK(n == 3);
    CHECK(s.win_rate == doctest::Approx(wins / 3.0));
    std::sort(diffs.begin(), diffs.end());
    CHECK(s.median_difference == doctest::Approx(diffs[1]));
  }
  // The open-loop baseline does not depend on the replan period.
  for (int seed = 0; seed < 3; ++seed)
    CHECK(result.rows[static_cast<std::size_t>(seed)].open_cost ==
          result.rows[static_cast<std::size_t>(3 + seed)].open_cost);
}

TEST_CASE("sweep of one value and one seed") {
  ExperimentSpec spec = small_sweep();
  spec.values = {6};
  spec.seeds = 1;
  spec.first_seed = 9;
  const auto result = experiment_sweep(spec);
  REQUIRE(result.rows.size() == 1);
  CHECK(result.rows[0].seed == 9);
  CHECK(result.summaries[0].median_closed == result.rows[0].closed_cost);
}

TEST_CASE("sweep validation and failure rows") {
  ExperimentSpec spec = small_sweep();
  spec.values.clear();
  CHECK_THROWS_AS(validate(spec), PreconditionError);
  spec = small_sweep();
  spec.seeds = 0;
  CHECK_THROWS_AS(validate(spec), PreconditionError);
  spec = small_sweep();
  spec.values = {7.5};
  CHECK_THROWS_AS(validate(spec), RangeError);
  spec.values = {24};
  CHECK_THROWS_AS(validate(spec), RangeError);
  spec.dimension = SweepDimension::Mismatch;
  spec.values = {1.5};
  CHECK_THROWS_AS(validate(spec), RangeError);
  spec.dimension = SweepDimension::Noise;
  spec.values = {-1};
  CHECK_THROWS_AS(validate(spec), RangeError);
  CHECK(parse_sweep_dimension("mismatch") == SweepDimension::Mismatch);
  CHECK_THROWS_AS(parse_sweep_dimension("budget"), SchemaError);

  // A failing run still closes the CSV with a FAILED marker.
  spec = small_sweep();
  spec.values = {3};
  spec.seeds = 2;
  spec.scenario.observation.sources.clear();
  std::ostringstream csv;
  CHECK_THROWS(experiment_sweep(spec, &csv));
  const auto lines = lines_of(csv.str());
  REQUIRE(lines.size() >= 2);
  CHECK(lines.back().rfind("FAILED,", 0) == 0);
}

TEST_CASE("event log file") {
  const auto dir = scratch("log");
  const auto path = dir / "events.log";
  const std::vector<json> events{{{"type", "create"}, {"n", 1}}, {{"type", "advance"}, {"n", 2}}};
  append_event_log(path, kGenesisHash, std::span(events).first(1));
  append_event_log(path, chain_hash(kGenesisHash, events[0].dump()), std::span(events).subspan(1));
  CHECK(read_event_log(path) == events);

  const std::string text = slurp(path);
  {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out << text.substr(0, text.size() - 5);
  }
  CHECK_THROWS_AS(read_event_log(path), CorruptLogError);

  std::string tampered = text;
  tampered[tampered.find("advance")] = 'A';
  {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out << tampered;
  }
  CHECK_THROWS_AS(read_event_log(path), CorruptLogError);
  {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
  }
  CHECK_THROWS_AS(read_event_log(path), CorruptLogError);
  fs::remove_all(dir);
}

TEST_CASE("sessions") {
  const json request{{"scenario", "demo"}, {"mode", "xgame"}, {"seed", 4}};

  SUBCASE("create validation") {
    CHECK_THROWS_AS(Session::create("a", {{"scenario", "demo"}, {"mode", "chess"}, {"seed", 1}}, 0),
                    ValidationError);
    CHECK_THROWS_AS(Session::create("a", {{"scenario", "demo"}, {"mode", "xgame"}}, 0), ValidationError);
    CHECK_THROWS_AS(Session::create("a", {{"scenario", "demo"}, {"mode", "xgame"}, {"seed", -3}}, 0),
                    ValidationError);
    CHECK_THROWS_AS(Session::create("a",
                                    {{"scenario", "demo"}, {"mode", "xgame"}, {"seed", 1},
                                     {"options", {{"replan_months", 3}}}},
                                    0),
                    ValidationError);
  }
  SUBCASE("replay after three phases matches the live session") {
    auto live = Session::create("s1", request, 100);
    for (int k = 0; k < 3; ++k)
      play_phase(*live, 200 + k);
    CHECK(live->xgame()->phase() == 3);
    const auto again = Session::replay(live->events());
    CHECK(again->xgame()->week() == live->xgame()->week());
    CHECK(again->xgame()->phase() == 3);
    CHECK(again->digest() == live->digest());
    CHECK(again->record() == live->record());
    CHECK(again->state() == live->state());
  }
  SUBCASE("out of turn and nonce replay") {
    auto s = Session::create("s2", request, 0);
    const auto red = scripted_plan_body(*s->xgame(), CellRole::Red);
    CHECK_THROWS_AS(s->submit_plan(1, red, 0), OutOfTurnError);
    CHECK_THROWS_AS(s->forecast(), PreconditionError);
    json with_nonce = red;
    with_nonce["nonce"] = "abc";
    const auto first = s->submit_plan(0, with_nonce, 1);
    const auto events = s->events().size();
    CHECK(s->submit_plan(0, with_nonce, 2) == first);
    CHECK(s->events().size() == events);
    CHECK(first["pending_roles"] == json::array({"Blue", "Green"}));
  }
  SUBCASE("closed-loop session steps by replan period") {
    auto s = Session::create("s3", {{"scenario", "demo"}, {"mode", "closed_loop"}, {"seed", 2}}, 0);
    const auto r = s->advance(json::object(), 1);
    CHECK(r["week"] == 12);
    CHECK_THROWS_AS(s->advance({{"boundary_week", 5}}, 2), RangeError);
    CHECK_THROWS_AS(s->submit_plan(0, {{"role", "Blue"}, {"plan", json::object()}}, 2), OutOfTurnError);
    const auto end = s->advance({{"boundary_week", 72}}, 3);
    CHECK(end["finished"] == true);
    const RunLog log = run_closed_loop(test::demo(), 2);
    CHECK(end["realized_cost"].get<double>() == log.realized_cost);
  }
}

TEST_CASE("session store") {
  const auto root = scratch("store");
  std::int64_t tick = 1000;
  SessionStore store(root, [&] { return tick++; });
  auto s = store.create({{"scenario", "demo"}, {"mode", "xgame"}, {"seed", 8}});
  {
    std::unique_lock lock(s->mutex());
    play_phase(*s, store.now());
    s->record_ledger({{"entry", {{"kind", "NOVEL_EFFECT"}, {"variables", {"soc_support"}}, {"phase", 1}}}},
                     store.now());
    store.persist(*s);
  }
  const SessionRecord loaded = store.load(s->id());
  CHECK(loaded == s->record());
  CHECK(loaded.phase == 1);
  CHECK(fs::exists(root / s->id() / "manifest.json"));
  CHECK_FALSE(fs::exists(root / s->id() / "manifest.json.tmp"));

  SessionStore reopened(root);
  auto back = reopened.get(s->id());
  CHECK(back->digest() == s->digest());
  CHECK_THROWS_AS(reopened.get("feedfacefeedface"), NotFoundError);
  CHECK_THROWS_AS(reopened.load("../etc"), NotFoundError);

  // Tampering with the stored log is detected.
  const auto log = root / s->id() / "events.log";
  std::string text = slurp(log);
  text[text.find("NOVEL_EFFECT")] = 'M';
  {
    std::ofstream out(log, std::ios::binary | std::ios::trunc);
    out << text;
  }
  CHECK_THROWS_AS(reopened.load(s->id()), CorruptLogError);
  CHECK_THROWS_AS(SessionStore(root).get(s->id()), CorruptLogError);
  fs::remove_all(root);
}

TEST_CASE("HTTP session API") {
  const auto root = scratch("http");
  SessionStore store(root);
  httplib::Server server;
  mount_session_api(server, store);
  const int port = server.bind_to_any_port("127.0.0.1");
  REQUIRE(port > 0);
  std::thread worker([&] { server.listen_after_bind(); });
  server.wait_until_ready();
  httplib::Client client("127.0.0.1", port);
  const std::string type = "application/json";

  auto health = client.Get("/health");
  REQUIRE(health);
  CHECK(health->status == 200);
  CHECK(health->get_header_value("Access-Control-Allow-Origin") == "*");

  auto created = client.Post("/sessions", R"({"scenario":"demo","mode":"xgame","seed":5})", type);
  REQUIRE(created);
  CHECK(created->status == 201);
  const std::string id = json::parse(created->body)["session_id"];
  const std::string base = "/sessions/" + id;

  auto state = client.Get(base + "/state");
  REQUIRE(state);
  CHECK(json::parse(state->body)["phase"] == 0);
  CHECK(client.Get(base + "/forecast")->status == 409);

  auto session = store.get(id);
  for (auto role : {CellRole::Blue, CellRole::Red, CellRole::Green}) {
    json body;
    {
      std::shared_lock lock(session->mutex());
      body = scripted_plan_body(*session->xgame(), role);
    }
    auto r = client.Post(base + "/phases/0/plans", body.dump(), type);
    REQUIRE(r);
    CHECK(r->status == 200);
  }

  auto f1 = client.Get(base + "/forecast"), f2 = client.Get(base + "/forecast");
  REQUIRE(f1);
  CHECK(f1->status == 200);
  CHECK(f1->body == f2->body);
  {
    std::unique_lock lock(session->mutex());
    CHECK(json::parse(f1->body) == to_json(session->xgame()->forecast(), session->scenario()));
  }
  CHECK(client.Get(base + "/state")->body == client.Get(base + "/state")->body);

  auto adjusted = client.Post(base + "/assessment/adjustments",
                              R"({"adjustments":[{"variable":"pol_governance","first_week":2,"last_week":6,
                                  "mode":"delta","value":0.02,"rationale":"district reports"}]})",
                              type);
  REQUIRE(adjusted);
  CHECK(adjusted->status == 200);

  auto advanced = client.Post(base + "/advance", "{}", type);
  REQUIRE(advanced);
  CHECK(advanced->status == 200);
  CHECK(json::parse(client.Get(base + "/state")->body)["phase"] == 1);

  auto late = client.Post(base + "/phases/0/plans", R"({"role":"Blue","plan":{"start_month":0,"horizon_months":18,"activations":[]}})", type);
  REQUIRE(late);
  CHECK(late->status == 409);

  auto bad = client.Post(base + "/phases/1/plans", R"({"role":"Blue"})", type);
  REQUIRE(bad);
  CHECK(bad->status == 400);
  const json err = json::parse(bad->body);
  CHECK(err["error"] == "validation");
  REQUIRE(err["fields"].size() == 1);
  CHECK_FALSE(err["fields"][0]["message"].get<std::string>().empty());

  auto unknown_action = client.Post(
      base + "/phases/1/plans",
      R"({"role":"Blue","plan":{"start_month":6,"horizon_months":12,"activations":[{"action":"airlift","start_month":6,"end_month":7}]}})",
      type);
  REQUIRE(unknown_action);
  CHECK(unknown_action->status == 400);
  CHECK(json::parse(unknown_action->body)["fields"][0]["field"].get<std::string>().rfind("plan.activations", 0) == 0);

  CHECK(client.Post(base + "/advance", "{not json", type)->status == 400);
  CHECK(client.Get("/sessions/0000000000000000/state")->status == 404);

  auto entry = client.Post(base + "/ledger",
                           R"({"entry":{"kind":"COUNTERPOSITION","variables":["soc_cohesion"],"phase":1,"rationale":"Red disputes"}})",
                           type);
  REQUIRE(entry);
  CHECK(entry->status == 200);
  const json ledger = json::parse(client.Get(base + "/ledger?kind=COUNTERPOSITION")->body);
  CHECK(ledger["entries"].size() == 1);
  CHECK(client.Get(base + "/ledger?kind=RUMOR")->status == 400);

  auto trace = client.Get(base + "/trace?var=pol_governance&depth=1");
  REQUIRE(trace);
  CHECK(trace->status == 200);
  CHECK(json::parse(trace->body)["variable"] == "pol_governance");
  CHECK(client.Get(base + "/trace?var=nope")->status == 400);
  CHECK(client.Get(base + "/trace?var=pol_governance&depth=0")->status == 400);

  auto preflight = client.Options(base + "/advance");
  REQUIRE(preflight);
  CHECK(preflight->status == 204);

  server.stop();
  worker.join();

  // Everything the API accepted survives a restart.
  SessionStore reopened(root);
  CHECK(reopened.get(id)->digest() == session->digest());
  fs::remove_all(root);
}

TEST_CASE("command-line exit codes") {
  const auto dir = scratch("cli");
  const std::string cli = PMESII_CLI, demo = PMESII_DEMO;
  const std::string out = (dir / "run").string();
  CHECK(run(cli + " run --scenario " + demo + " --seed 3 --out " + out) == 0);
  CHECK(fs::exists(fs::path(out) / "run.csv"));
  CHECK(fs::exists(fs::path(out) / "manifest.json"));
  CHECK(run(cli + " replay --manifest " + out + "/manifest.json --out " + (dir / "again").string()) == 0);
  CHECK(slurp(fs::path(out) / "run.csv") == slurp(dir / "again" / "run.csv"));

  CHECK(run(cli + " run --seed 3 --out " + out) == 2);
  CHECK(run(cli + " run --scenario " + demo + " --seed 3 --mismatch 3 --out " + out) == 2);
  CHECK(run(cli + " sweep --scenario " + demo + " --seed 1 --values 7.5 --seeds 1 --out " + out) == 2);
  CHECK(run(cli + " run --scenario " + (dir / "missing.json").string() + " --seed 1 --out " + out) != 0);
  fs::remove_all(dir);
}
