#include <doctest.h>

#include <atomic>
#include <thread>

#include <httplib.h>

#include "fuzzydx/dsl.hpp"
#include "fuzzydx/service.hpp"

using namespace fdx;
using nlohmann::json;

namespace {

KnowledgeBase fixture_kb() {
  return KnowledgeBase::from_program(parse_program(read_file(FDX_FIXTURES "/angina.kb")),
                                     parse_lexicon(read_file(FDX_FIXTURES "/lexicon.tsv")));
}

std::string note() { return read_file(FDX_FIXTURES "/angina_note.txt"); }

std::string rule_id(const KnowledgeBase& kb, const char* disease) {
  for (const auto& r : kb.rules) {
    if (r.disease() == Symbol(disease)) return r.id;
  }
  return {};
}

json adjust(const KnowledgeBase& kb, double w, long long base) {
  return json{{"base_version", base},
              {"edits", json::array({{{"kind", "adjust_weight"},
                                      {"rule_id", rule_id(kb, "stable_angina")},
                                      {"literal", "symptom(chest_pain)"},
                                      {"weight", w}}})}};
}

double posterior_of(const json& diagnosis, const char* disease) {
  for (const auto& c : diagnosis["ranking"]) {
    if (c["disease"] == disease) return c["posterior"].get<double>();
  }
  return -1.0;
}

struct Fixture {
  SnapshotStore store{fixture_kb()};
  Service service{store};

  Response post(const char* path, const json& body) { return service.handle("POST", path, body.dump()); }
  Response get(const std::string& path) { return service.handle("GET", path, ""); }
};

}  // namespace

TEST_CASE("POST /diagnose ranks the motivating note") {
  Fixture f;
  auto r = f.post("/diagnose", {{"note", note()}});
  REQUIRE(r.status == 200);
  CHECK(r.body["version"] == 1);
  CHECK(r.body["ranking"][0]["disease"] == "stable_angina");
  CHECK(r.body["ranking"][0]["activation"].get<double>() == doctest::Approx(0.72));
  CHECK(r.body["ranking"][0].contains("proof"));
  CHECK_FALSE(r.body["weights"].empty());
  for (const auto& w : r.body["weights"]) {
    CHECK(w.contains("w_text"));
    CHECK(w.contains("w_retr"));
    CHECK(w.contains("blended"));
  }
  // Deterministic and side-effect free.
  CHECK(f.post("/diagnose", {{"note", note()}}).body == r.body);
  CHECK(f.store.head()->version == 1);

  auto sym = f.post("/diagnose", {{"symptoms", json::array({{{"name", "chest_pain"}, {"weight", 0.9}}})},
                                  {"demographics", {{"age", 58}, {"sex", "male"}}}});
  REQUIRE(sym.status == 200);
  CHECK_FALSE(sym.body.contains("extraction"));
}

TEST_CASE("POST /diagnose rejects malformed and empty cases") {
  Fixture f;
  CHECK(f.post("/diagnose", {{"note", "chest pain"}, {"symptoms", json::array({{{"name", "a"}}})}}).status == 400);
  CHECK(f.post("/diagnose", json::object()).status == 400);
  CHECK(f.service.handle("POST", "/diagnose", "{not json").status == 400);
  CHECK(f.post("/diagnose", {{"note", "x"}, {"bogus", 1}}).status == 400);
  CHECK(f.post("/diagnose", {{"note", "x"}, {"overrides", {{"nope", 1}}}}).status == 400);
  CHECK(f.post("/diagnose", {{"symptoms", json::array()}}).status == 422);
  CHECK(f.post("/diagnose", {{"note", "   "}}).status == 422);
  CHECK(f.get("/diagnose").status == 405);
  CHECK(f.get("/nowhere").status == 404);
  CHECK(f.post("/diagnose", {{"note", note()}, {"version", 9}}).status == 404);
}

TEST_CASE("per-request overrides never touch the stored snapshot") {
  Fixture f;
  auto base = f.post("/diagnose", {{"note", note()}});
  auto slid = f.post("/diagnose", {{"note", note()}, {"overrides", {{"overrides", {{"chest_pain", 0.1}}}}}});
  REQUIRE(slid.status == 200);
  CHECK(posterior_of(slid.body, "stable_angina") != posterior_of(base.body, "stable_angina"));
  CHECK(f.store.head()->version == 1);
  CHECK(f.post("/diagnose", {{"note", note()}}).body == base.body);
}

TEST_CASE("POST /feedback commits and the weight edit lowers the posterior") {
  Fixture f;
  double before = posterior_of(f.post("/diagnose", {{"note", note()}}).body, "stable_angina");
  auto r = f.post("/feedback", adjust(f.store.head()->kb, 0.5, 1));
  REQUIRE(r.status == 200);
  CHECK(r.body["version"] == 2);
  CHECK(r.body["diff"]["weight_deltas"].size() == 1);
  double after = posterior_of(f.post("/diagnose", {{"note", note()}}).body, "stable_angina");
  CHECK(after < before);

  // Stale base version.
  CHECK(f.post("/feedback", adjust(f.store.head()->kb, 0.4, 1)).status == 409);
  // Consistency and range problems.
  CHECK(f.post("/feedback", adjust(f.store.head()->kb, 1.5, 2)).status == 422);
  auto unknown = json{{"base_version", 2},
                      {"edits", json::array({{{"kind", "remove_rule"}, {"id", "deadbeef"}}})}};
  CHECK(f.post("/feedback", unknown).status == 422);
  auto bad_rule = json{{"base_version", 2},
                       {"edits", json::array({{{"kind", "add_rule"}, {"rule", "diagnosis(x) :- "}}})}};
  CHECK(f.post("/feedback", bad_rule).status == 400);
  CHECK(f.post("/feedback", json{{"edits", json::array()}}).status == 400);

  // Empty edits still make exactly one new version.
  auto empty = f.post("/feedback", json{{"base_version", 2}, {"edits", json::array()}});
  REQUIRE(empty.status == 200);
  CHECK(empty.body["version"] == 3);
  CHECK(empty.body["diff"]["added_rules"].empty());
  CHECK(empty.body["diff"]["weight_deltas"].empty());

  // Versions stay gap-free through failed requests.
  auto list = f.get("/snapshots").body["snapshots"];
  REQUIRE(list.size() == 3);
  for (std::size_t i = 0; i < list.size(); ++i) CHECK(list[i]["version"] == static_cast<long long>(i + 1));
}

TEST_CASE("POST /feedback routes counter-examples through the learner") {
  Fixture f;
  json body{{"base_version", 1},
            {"counter_examples",
             json::array({{{"id", "ce1"},
                           {"symptoms", json::array({{{"name", "chest_pain"}}})},
                           {"labels", json::array({"noncardiac_chest_pain"})}}})}};
  auto r = f.post("/feedback", body);
  REQUIRE(r.status == 200);
  CHECK(r.body["version"] == 2);
  REQUIRE_FALSE(r.body["events"].empty());
  CHECK(r.body["events"][0]["type"] == "pa_update");
  CHECK_FALSE(r.body["diff"]["weight_deltas"].empty());

  json no_labels = body;
  no_labels["base_version"] = 2;
  no_labels["counter_examples"][0]["labels"] = json::array();
  CHECK(f.post("/feedback", no_labels).status == 422);
}

TEST_CASE("snapshot listing and diffs") {
  Fixture f;
  REQUIRE(f.post("/feedback", adjust(f.store.head()->kb, 0.5, 1)).status == 200);
  auto list = f.get("/snapshots");
  CHECK(list.body["head"] == 2);
  CHECK(f.get("/snapshots").body == list.body);
  CHECK(f.get("/snapshots/2").body["version"] == 2);
  auto d = f.get("/snapshots/1/diff/2");
  REQUIRE(d.status == 200);
  CHECK(d.body["weight_deltas"][0]["new_weight"].get<double>() == doctest::Approx(0.5));
  auto same = f.get("/snapshots/2/diff/2");
  REQUIRE(same.status == 200);
  CHECK(same.body["weight_deltas"].empty());
  CHECK(same.body["added_rules"].empty());
  CHECK(f.get("/snapshots/7").status == 404);
  CHECK(f.get("/snapshots/1/diff/9").status == 404);
  CHECK(f.get("/snapshots/x/diff/1").status == 400);
  CHECK(f.get("/snapshots/2/diff/1").status == 400);
}

TEST_CASE("POST /replay audits across versions") {
  Fixture f;
  REQUIRE(f.post("/feedback", adjust(f.store.head()->kb, 0.5, 1)).status == 200);
  auto r = f.post("/replay", {{"case", {{"note", note()}}}, {"t1", 1}, {"t2", 2}});
  REQUIRE(r.status == 200);
  bool seen = false;
  for (const auto& d : r.body["deltas"]) {
    if (d["disease"] == "stable_angina") {
      seen = true;
      CHECK(d["delta"].get<double>() < 0.0);
    }
  }
  CHECK(seen);
  auto same = f.post("/replay", {{"case", {{"note", note()}}}, {"t1", 2}, {"t2", 2}});
  for (const auto& d : same.body["deltas"]) CHECK(d["delta"].get<double>() == 0.0);
  CHECK(f.post("/replay", {{"case", {{"note", note()}}}, {"t1", 1}, {"t2", 5}}).status == 404);
  CHECK(f.post("/replay", {{"t1", 1}, {"t2", 2}}).status == 400);
}

TEST_CASE("large proofs are served by reference") {
  SnapshotStore store(fixture_kb());
  ServiceConfig cfg;
  cfg.max_proof_nodes = 2;
  Service service(store, cfg);
  auto r = service.handle("POST", "/diagnose", json{{"note", note()}}.dump());
  REQUIRE(r.status == 200);
  const auto& top = r.body["ranking"][0];
  REQUIRE(top.contains("proof_ref"));
  CHECK_FALSE(top.contains("proof"));
  CHECK(top["proof_size"].get<std::size_t>() > 2);
  auto proof = service.handle("GET", "/proofs/" + top["proof_ref"].get<std::string>(), "");
  REQUIRE(proof.status == 200);
  CHECK(proof.body["disease"] == "stable_angina");
  CHECK_FALSE(proof.body["proof"]["rules"].empty());
  CHECK(service.handle("GET", "/proofs/none", "").status == 404);
}

TEST_CASE("concurrent diagnoses see one consistent version each") {
  Fixture f;
  std::map<long long, double> expected;
  std::mutex mu;
  std::vector<std::pair<long long, double>> seen;
  std::atomic<bool> done{false};
  std::thread reader([&] {
    while (!done) {
      auto r = f.post("/diagnose", {{"note", note()}});
      std::lock_guard lock(mu);
      seen.emplace_back(r.body["version"].get<long long>(), posterior_of(r.body, "stable_angina"));
    }
  });
  const double weights[] = {0.7, 0.6, 0.5, 0.4};
  for (int i = 0; i < 4; ++i) {
    auto r = f.post("/feedback", adjust(f.store.head()->kb, weights[i], i + 1));
    REQUIRE(r.status == 200);
  }
  done = true;
  reader.join();
  for (long long v = 1; v <= 5; ++v) {
    auto r = f.post("/diagnose", {{"note", note()}, {"version", v}});
    expected[v] = posterior_of(r.body, "stable_angina");
  }
  for (const auto& [v, p] : seen) CHECK(p == expected.at(v));
}

TEST_CASE("service answers over HTTP") {
  SnapshotStore store(fixture_kb());
  Service service(store);
  httplib::Server server;
  service.mount(server);
  int port = server.bind_to_any_port("127.0.0.1");
  REQUIRE(port > 0);
  std::thread t([&] { server.listen_after_bind(); });
  server.wait_until_ready();
  httplib::Client client("127.0.0.1", port);
  auto res = client.Post("/diagnose", json{{"note", note()}}.dump(), "application/json");
  REQUIRE(res);
  CHECK(res->status == 200);
  CHECK(json::parse(res->body)["ranking"][0]["disease"] == "stable_angina");
  auto bad = client.Post("/diagnose", "{}", "application/json");
  REQUIRE(bad);
  CHECK(bad->status == 400);
  auto snaps = client.Get("/snapshots");
  REQUIRE(snaps);
  CHECK(json::parse(snaps->body)["head"] == 1);
  server.stop();
  t.join();
}
