#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "fuzzydx/dsl.hpp"
#include "fuzzydx/error.hpp"
#include "fuzzydx/learning.hpp"
#include "learning_world.hpp"
#include "test_support.hpp"

using namespace fdx;

namespace {

KnowledgeBase kb_of(std::string_view text) { return KnowledgeBase::from_program(parse_program(text)); }

LearningCase make_case(std::string id, std::vector<std::string> x, std::vector<std::string> g) {
  LearningCase c{std::move(id), {}, {}};
  for (auto& s : x) c.symptoms.emplace_back(s);
  for (auto& d : g) c.labels.emplace_back(d);
  return c;
}

double edge(const KnowledgeBase& kb, const char* d, const char* s) {
  auto ev = edge_view(kb);
  auto it = ev.find(EdgeKey{Symbol(d), Symbol(s)});
  return it == ev.end() ? -1.0 : it->second;
}

}  // namespace

TEST_CASE("pa_update hand example moves the violating pair by tau") {
  auto kb = kb_of(
      "diagnosis(dp) :- symptom(a)@0.1, symptom(b)@0.2.\n"
      "diagnosis(dm) :- symptom(a)@0.4, symptom(b)@0.2.\n");
  auto step = pa_update(kb, make_case("k1", {"a", "b"}, {"dp"}), LearnerConfig{});
  REQUIRE(step.updated);
  const auto& pa = std::get<PAUpdate>(step.events.at(0));
  CHECK(pa.d_plus == Symbol("dp"));
  CHECK(pa.d_minus == Symbol("dm"));
  CHECK(std::abs(pa.loss - 0.8) < 1e-12);
  CHECK(std::abs(pa.tau - 0.1) < 1e-12);
  CHECK(std::abs(edge(step.kb, "dp", "a") - 0.2) < 1e-12);
  CHECK(std::abs(edge(step.kb, "dp", "b") - 0.3) < 1e-12);
  CHECK(std::abs(edge(step.kb, "dm", "a") - 0.3) < 1e-12);
  CHECK(std::abs(edge(step.kb, "dm", "b") - 0.1) < 1e-12);
  CHECK(step.events.size() == 1);
}

TEST_CASE("pa_update leaves a correctly ordered case alone") {
  auto kb = kb_of(
      "diagnosis(dp) :- symptom(a)@0.9.\n"
      "diagnosis(dm) :- symptom(a)@0.2.\n");
  auto step = pa_update(kb, make_case("k", {"a"}, {"dp"}), LearnerConfig{});
  CHECK_FALSE(step.updated);
  CHECK(step.events.empty());
  CHECK(step.kb == kb);

  // Ties are not violations.
  auto tie = kb_of("diagnosis(dp) :- symptom(a)@0.5.\ndiagnosis(dm) :- symptom(a)@0.5.\n");
  CHECK_FALSE(pa_update(tie, make_case("k", {"a"}, {"dp"}), LearnerConfig{}).updated);
}

TEST_CASE("pa_update clips to zero and flags the edge") {
  auto kb = kb_of(
      "diagnosis(dp) :- symptom(b)@0.1.\n"
      "diagnosis(dm) :- symptom(a)@0.05, symptom(b)@0.9.\n");
  auto step = pa_update(kb, make_case("k", {"a", "b"}, {"dp"}), LearnerConfig{});
  REQUIRE(step.updated);
  CHECK(edge(step.kb, "dm", "a") == 0.0);
  bool flagged = false;
  for (const auto& e : step.events) {
    if (auto z = std::get_if<ZeroFlagged>(&e)) flagged = z->disease == Symbol("dm") && z->symptom == Symbol("a");
  }
  CHECK(flagged);
  CHECK_NOTHROW(verify_consistency(step.kb));
}

TEST_CASE("pa_update adds missing edges to a learner support rule") {
  auto kb = kb_of(
      "diagnosis(dp) :- symptom(a)@0.1.\n"
      "diagnosis(dm) :- symptom(a)@0.9, symptom(c)@0.9.\n");
  auto step = pa_update(kb, make_case("k", {"a", "c"}, {"dp"}), LearnerConfig{});
  REQUIRE(step.updated);
  // loss = 0.5 - (0.1 - 1.8) = 2.2, tau = min(0.1, 2.2 / 4)
  CHECK(std::abs(edge(step.kb, "dp", "c") - 0.1) < 1e-12);
  REQUIRE(step.events.size() == 2);
  const auto& added = std::get<EdgeAdded>(step.events[1]);
  CHECK_FALSE(added.rule_before.has_value());
  const Rule* support = step.kb.find_rule(added.rule_after);
  REQUIRE(support);
  CHECK(support->provenance == Provenance::Learner);

  // A second update extends the same support rule.
  auto again = pa_update(step.kb, make_case("k2", {"c", "e"}, {"dp"}), LearnerConfig{});
  REQUIRE(again.updated);
  const auto& ext = std::get<EdgeAdded>(again.events.back());
  CHECK(ext.rule_before == added.rule_after);
  CHECK(again.kb.find_rule(ext.rule_after)->body.size() == 2);
}

TEST_CASE("pa_update input errors") {
  auto kb = kb_of("diagnosis(d) :- symptom(a).");
  CHECK_THROWS_AS(pa_update(kb, make_case("k", {}, {"d"}), LearnerConfig{}), EmptyCase);
  CHECK_THROWS_AS(pa_update(kb, make_case("k", {"a"}, {}), LearnerConfig{}), EmptyTruth);
  CHECK_THROWS_AS(score_disease(Symbol("d"), {}, kb), EmptyCase);
}

TEST_CASE("pa_update properties: bounds, passivity, margin progress") {
  std::mt19937_64 rng(7);
  const std::vector<std::string> diseases{"d1", "d2", "d3", "d4"};
  const std::vector<std::string> syms{"a", "b", "c", "d", "e", "f"};
  LearnerConfig cfg;
  for (int trial = 0; trial < 500; ++trial) {
    std::string text;
    for (const auto& d : diseases) {
      int n = std::uniform_int_distribution<int>(1, 3)(rng);
      text += "diagnosis(" + d + ") :- ";
      std::set<std::string> used;
      for (int i = 0; i < n; ++i) {
        auto s = testing::pick(rng, syms);
        if (!used.insert(s).second) continue;
        if (i && used.size() > 1) text += ", ";
        text += "symptom(" + s + ")@" + format_weight(testing::pick_weight(rng));
      }
      text += ".\n";
    }
    auto kb = kb_of(text);
    std::vector<std::string> x;
    for (const auto& s : syms) {
      if (testing::uniform01(rng) < 0.4) x.push_back(s);
    }
    if (x.empty()) x.push_back("a");
    auto c = make_case("t", x, {testing::pick(rng, diseases)});
    auto step = pa_update(kb, c, cfg);
    for (const auto& r : step.kb.rules) {
      for (const auto& b : r.body) {
        CHECK(b.edge_weight >= 0.0);
        CHECK(b.edge_weight <= 1.0);
      }
    }
    if (count_violations(kb, {c}, cfg) == 0) {
      CHECK_FALSE(step.updated);
      CHECK(step.kb == kb);
      continue;
    }
    REQUIRE(step.updated);
    const auto& pa = std::get<PAUpdate>(step.events[0]);
    CHECK(pa.tau > 0.0);
    CHECK(pa.tau <= cfg.cap + 1e-15);
    auto gap = [&](const KnowledgeBase& k) {
      return score_disease(pa.d_plus, c.symptoms, k) - score_disease(pa.d_minus, c.symptoms, k);
    };
    CHECK(gap(step.kb) > gap(kb));
  }
}

TEST_CASE("specificity and counts") {
  EdgeStats stats;
  std::set<Symbol> catalog{Symbol("d1"), Symbol("d2")};
  for (int i = 0; i < 9; ++i) update_counts(stats, make_case("p", {"a"}, {"d1"}), catalog);
  update_counts(stats, make_case("n", {"a", "a"}, {"d2"}), catalog);
  CHECK(stats[EdgeKey{Symbol("d1"), Symbol("a")}].c_plus == 9);
  CHECK(stats[EdgeKey{Symbol("d1"), Symbol("a")}].c_minus == 1);
  CHECK(specificity(stats, Symbol("d1"), Symbol("a")) == doctest::Approx(5.0));
  CHECK(specificity(stats, Symbol("d2"), Symbol("a")) == doctest::Approx(2.0 / 10.0));
  CHECK(specificity(stats, Symbol("d1"), Symbol("zz")) == 1.0);
  // Replaying the same case doubles its counts.
  auto before = stats[EdgeKey{Symbol("d2"), Symbol("a")}].c_plus;
  update_counts(stats, make_case("n", {"a"}, {"d2"}), catalog);
  CHECK(stats[EdgeKey{Symbol("d2"), Symbol("a")}].c_plus == 2 * before);
}

TEST_CASE("structure_update adds, prunes, protects clinician rules and is idempotent") {
  auto kb = kb_of(
      "diagnosis(d1) :- symptom(a)@0.5, symptom(z)@0.\n"
      "diagnosis(d2) :- symptom(b)@0.7.\n");
  kb.rules.push_back(make_rule(Symbol("d2"), {{Literal::make("symptom", {"z"}), 0.0}, {Literal::make("symptom", {"b"}), 0.2}},
                               Provenance::Clinician));
  kb.normalize();
  EdgeStats stats;
  std::set<Symbol> catalog{Symbol("d1"), Symbol("d2")};
  for (int i = 0; i < 6; ++i) update_counts(stats, make_case("p", {"c"}, {"d1"}), catalog);
  for (int i = 0; i < 4; ++i) update_counts(stats, make_case("q", {"z"}, {"d2"}), catalog);

  LearnerConfig cfg;
  auto step = structure_update(kb, stats, cfg, 5);
  // (d1, c): c+ = 6, ratio 7 -> added at w_init.
  CHECK(edge(step.kb, "d1", "c") == doctest::Approx(cfg.w_init));
  // (d1, z): weight 0 and ratio 1/5 -> pruned. The clinician copy under d2 stays.
  CHECK(edge(step.kb, "d1", "z") == -1.0);
  CHECK(edge(step.kb, "d2", "z") == 0.0);
  CHECK_NOTHROW(verify_consistency(step.kb));

  auto twice = structure_update(step.kb, stats, cfg, 5);
  CHECK_FALSE(twice.updated);
  CHECK(twice.kb.content_hash() == step.kb.content_hash());
}

TEST_CASE("structure_update removes rules left empty") {
  auto kb = kb_of("diagnosis(d1) :- symptom(z)@0.\ndiagnosis(d1) :- symptom(a)@0.4.\n");
  EdgeStats stats;
  std::set<Symbol> catalog{Symbol("d1"), Symbol("d2")};
  for (int i = 0; i < 3; ++i) update_counts(stats, make_case("q", {"z"}, {"d2"}), catalog);
  auto step = structure_update(kb, stats, LearnerConfig{});
  CHECK(step.kb.rules.size() == 1);
  const auto& ev = std::get<EdgePruned>(step.events.at(0));
  CHECK_FALSE(ev.rules.at(0).after.has_value());
  CHECK(replay(kb, step.events).content_hash() == step.kb.content_hash());
}

TEST_CASE("induce_rules scores templates with the log-odds scorer") {
  std::vector<LearningCase> batch;
  for (int i = 0; i < 9; ++i) batch.push_back(make_case("p" + std::to_string(i), {"a", "b"}, {"d"}));
  for (int i = 0; i < 4; ++i) batch.push_back(make_case("n" + std::to_string(i), {"a", "b"}, {"e"}));
  // c+ = 9, c- = 4: sigmoid(log(10/5)) = 2/3
  CHECK(log_odds_scorer(batch[0], RuleTemplate{Symbol("d"), {Symbol("a"), Symbol("b")}}, batch) ==
        doctest::Approx(std::log(2.0)));
  auto rules = induce_rules(batch, log_odds_scorer, 0.6);
  REQUIRE(rules.size() == 3);  // {a}, {a,b}, {b} for d
  for (const auto& r : rules) {
    CHECK(r.rule.disease() == Symbol("d"));
    CHECK(r.score == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
    CHECK(r.rule.provenance == Provenance::Induced);
    for (const auto& b : r.rule.body) CHECK(b.edge_weight == 1.0);
  }
  CHECK(induce_rules(batch, log_odds_scorer, 0.7).empty());

  auto existing = KnowledgeBase{};
  existing.rules.push_back(rules[0].rule);
  CHECK(induce_rules(batch, log_odds_scorer, 0.6, &existing).size() == 2);

  // The scorer is pluggable; a constant zero gives 0.5 everywhere.
  auto flat = [](const LearningCase&, const RuleTemplate&, const std::vector<LearningCase>&) { return 0.0; };
  CHECK(induce_rules(batch, flat, 0.49).size() == 6);
  CHECK(induce_rules(batch, flat, 0.5).empty());
}

TEST_CASE("induced rules replay through the log") {
  std::vector<LearningCase> batch;
  for (int i = 0; i < 3; ++i) batch.push_back(make_case("p", {"a"}, {"d"}));
  auto kb = kb_of("diagnosis(e) :- symptom(b).");
  UpdateLog log;
  auto next = kb;
  for (auto& r : induce_rules(batch, log_odds_scorer, 0.6, &kb, 3, 2, 9)) {
    next.rules.push_back(r.rule);
    log.push_back(RuleInduced{r.rule, r.score});
  }
  next.normalize();
  REQUIRE(log.size() == 1);
  auto back = log_from_jsonl(log_to_jsonl(log));
  CHECK(replay(kb, back).content_hash() == next.content_hash());
  CHECK(std::get<RuleInduced>(back[0]).rule.created_at == 9);
}

TEST_CASE("learn_stream converges on separable data and replays exactly") {
  auto w = testing::make_world(11, 300, 0.5);
  LearnerConfig cfg;
  LearnOptions opts;
  opts.max_passes = 10;
  opts.created_at = 2;
  CHECK(count_violations(w.start, w.cases, cfg) > 0);
  auto res = learn_stream(w.start, w.cases, cfg, opts);
  CHECK(count_violations(res.kb, w.cases, cfg) == 0);
  CHECK(res.updates_per_pass.size() <= 10);
  CHECK(res.updates_per_pass.back() == 0);
  CHECK_NOTHROW(verify_consistency(res.kb));

  CHECK(replay(w.start, res.log).content_hash() == res.kb.content_hash());
  auto text = log_to_jsonl(res.log);
  CHECK(log_to_jsonl(log_from_jsonl(text)) == text);
  CHECK(replay(w.start, log_from_jsonl(text)).content_hash() == res.kb.content_hash());
}

TEST_CASE("replay rejects a log that does not fit the knowledge base") {
  auto kb = kb_of("diagnosis(dp) :- symptom(a)@0.1.\ndiagnosis(dm) :- symptom(a)@0.9.\n");
  auto step = pa_update(kb, make_case("k", {"a"}, {"dp"}), LearnerConfig{});
  REQUIRE(step.updated);
  CHECK_THROWS_AS(replay(kb_of("diagnosis(x) :- symptom(q)."), step.events), Error);
  CHECK_THROWS_AS(log_from_jsonl("{\"type\":\"pa_update\"}\n"), ParseError);
  CHECK_THROWS_AS(log_from_jsonl("{\"type\":\"bogus\"}\n"), ParseError);
}

TEST_CASE("learner config and case stream JSON") {
  auto cfg = learner_config_from_json(nlohmann::json::parse(R"({"margin":0.7,"top_k":3})"));
  CHECK(cfg.margin == 0.7);
  CHECK(cfg.top_k == 3);
  CHECK(cfg.cap == 0.1);
  CHECK(learner_config_from_json(to_json(cfg)).margin == 0.7);
  CHECK_THROWS_AS(learner_config_from_json(nlohmann::json::parse(R"({"bogus":1})")), Error);
  CHECK_THROWS_AS(learner_config_from_json(nlohmann::json::parse(R"({"cap":-1})")), Error);

  auto cases = load_case_stream(
      "{\"id\":\"a\",\"symptoms\":[{\"name\":\"x\",\"weight\":0.4}],\"labels\":[\"d\"]}\n\n"
      "{\"id\":\"b\",\"symptoms\":[\"y\"],\"labels\":[\"e\"]}\n");
  REQUIRE(cases.size() == 2);
  CHECK(cases[1].symptoms[0] == Symbol("y"));
  CHECK(load_case_stream(to_json(cases[0]).dump())[0].labels == cases[0].labels);
  try {
    load_case_stream("{\"id\":\"a\",\"symptoms\":[],\"labels\":[]}\n{oops\n");
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(e.line() == 2);
  }
}
