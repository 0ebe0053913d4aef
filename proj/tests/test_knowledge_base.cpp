#include <doctest.h>

#include <filesystem>
#include <random>

#include "fuzzydx/error.hpp"
#include "fuzzydx/knowledge_base.hpp"
#include "test_support.hpp"

using namespace fdx;

namespace {

KnowledgeBase angina_kb() {
  return KnowledgeBase::from_program(
      parse_program(read_file(std::string(FDX_FIXTURES) + "/angina.kb")),
      default_hedge_lexicon());
}

CommitOptions fixed_time() {
  CommitOptions o;
  o.timestamp = "2026-01-01T00:00:00Z";
  return o;
}

EditRequest edit(decltype(EditRequest::kind) kind) {
  EditRequest e;
  e.kind = std::move(kind);
  return e;
}

const Rule& rule_for(const KnowledgeBase& kb, std::string_view disease) {
  for (const auto& r : kb.rules) {
    if (r.disease().str() == disease) return r;
  }
  throw std::runtime_error("no rule");
}

}  // namespace

TEST_CASE("commit: add rule produces the next version") {
  KnowledgeSnapshot v3 = make_snapshot(angina_kb(), 3, 2, fixed_time());
  Rule r_new = parse_rule("diagnosis(pericarditis) :- symptom(chest_pain)@0.4, symptom(fever).");
  KnowledgeSnapshot v4 = commit(v3, {edit(AddRule{r_new, std::nullopt})}, fixed_time());
  CHECK(v4.version == 4);
  CHECK(v4.parent == 3);
  const Rule* added = v4.kb.find_rule(r_new.id);
  REQUIRE(added);
  CHECK(added->provenance == Provenance::Clinician);
  CHECK(added->created_at == 4);
  CHECK(v3.kb.find_rule(r_new.id) == nullptr);
}

TEST_CASE("commit: injected weight applies to every body literal") {
  KnowledgeSnapshot v1 = make_snapshot(angina_kb(), 1, 0, fixed_time());
  Rule r = parse_rule("diagnosis(gerd) :- symptom(chest_pain), trigger(meals)@0.2.");
  auto v2 = commit(v1, {edit(AddRule{r, 0.7})}, fixed_time());
  for (const auto& b : v2.kb.find_rule(r.id)->body) CHECK(b.edge_weight == 0.7);
  CHECK_THROWS_AS(commit(v1, {edit(AddRule{r, 0.0})}, fixed_time()), WeightOutOfRange);
}

TEST_CASE("commit: empty edit set keeps the content hash") {
  KnowledgeSnapshot v1 = make_snapshot(angina_kb(), 1, 0, fixed_time());
  KnowledgeSnapshot v2 = commit(v1, {}, fixed_time());
  CHECK(v2.version == 2);
  CHECK(v2.content_hash == v1.content_hash);
  CHECK(diff(v1, v2).empty());
}

TEST_CASE("commit: rejects duplicates, unknown ids, stale versions atomically") {
  KnowledgeSnapshot v1 = make_snapshot(angina_kb(), 1, 0, fixed_time());
  Rule dup = rule_for(v1.kb, "acute_mi");
  CHECK_THROWS_AS(commit(v1, {edit(AddRule{dup, std::nullopt})}), ConsistencyViolation);
  CHECK_THROWS_AS(commit(v1, {edit(RemoveRule{"rdeadbeef"})}), UnknownRuleId);

  // First edit is fine, second is bad: nothing lands.
  std::vector<EditRequest> edits{edit(LexiconSet{"faint", 0.2}), edit(RemoveRule{"rmissing"})};
  CHECK_THROWS_AS(commit(v1, edits), UnknownRuleId);
  CHECK(v1.kb.lexicon.count("faint") == 0);

  EditRequest stale = edit(LexiconSet{"faint", 0.2});
  stale.base_version = 0;
  CHECK_THROWS_AS(commit(v1, {stale}), StaleVersion);

  Rule unknown_pred = parse_rule("diagnosis(x) :- mood(sad).");
  CHECK_THROWS_AS(commit(v1, {edit(AddRule{unknown_pred, std::nullopt})}), ConsistencyViolation);

  const Rule& sa = rule_for(v1.kb, "stable_angina");
  CHECK_THROWS_AS(commit(v1, {edit(AdjustWeight{sa.id, "symptom(chest_pain)", 1.2})}),
                  WeightOutOfRange);
}

TEST_CASE("diff: one weight shift, one add plus one remove") {
  KnowledgeSnapshot v1 = make_snapshot(angina_kb(), 1, 0, fixed_time());
  const Rule& sa = rule_for(v1.kb, "stable_angina");
  auto v2 = commit(v1, {edit(AdjustWeight{sa.id, "symptom(chest_pain)", 0.6})}, fixed_time());
  SnapshotDiff d = diff(v1, v2);
  REQUIRE(d.weight_deltas.size() == 1);
  CHECK(d.weight_deltas[0].old_weight == 0.8);
  CHECK(d.weight_deltas[0].new_weight == 0.6);
  CHECK(d.added_rules.empty());
  CHECK(d.removed_rules.empty());

  Rule extra = parse_rule("diagnosis(costochondritis) :- symptom(chest_wall_tenderness).");
  const Rule& mi = rule_for(v1.kb, "acute_mi");
  auto v3 = commit(v2, {edit(AddRule{extra, std::nullopt}), edit(RemoveRule{mi.id})},
                   fixed_time());
  SnapshotDiff d23 = diff(v2, v3);
  CHECK(d23.added_rules.size() == 1);
  CHECK(d23.removed_rules.size() == 1);
  CHECK(d23.weight_deltas.empty());

  CHECK_THROWS_AS(diff(v3, v2), VersionOrder);
  CHECK(apply_diff(v1.kb, diff(v1, v3)).content_hash() == v3.content_hash);
}

TEST_CASE("diff: JSON export/import is lossless") {
  KnowledgeSnapshot v1 = make_snapshot(angina_kb(), 1, 0, fixed_time());
  const Rule& sa = rule_for(v1.kb, "stable_angina");
  PriorEntry p = parse_program("prior(acute_mi, age_65_plus, _, _, 0.04).").priors[0];
  auto v2 = commit(v1,
                   {edit(AdjustWeight{sa.id, "trigger(exertion)", 0.25}),
                    edit(LexiconSet{"mild", 0.35}), edit(PriorSet{p}),
                    edit(AddRule{parse_rule("diagnosis(x) :- symptom(y)."), std::nullopt})},
                   fixed_time());
  SnapshotDiff d = diff(v1, v2);
  SnapshotDiff back = diff_from_json(nlohmann::json::parse(to_json(d).dump()));
  CHECK(apply_diff(v1.kb, back).content_hash() == v2.content_hash);
  CHECK(to_json(back) == to_json(d));
}

TEST_CASE("edge_view: max aggregation and symptom literals only") {
  auto kb = KnowledgeBase::from_program(parse_program("diagnosis(d) :- symptom(a)@0.8."));
  EdgeView v = edge_view(kb);
  REQUIRE(v.size() == 1);
  CHECK(v.at({Symbol("d"), Symbol("a")}) == 0.8);

  kb = KnowledgeBase::from_program(parse_program(
      "diagnosis(d) :- symptom(a)@0.3, risk(r).\ndiagnosis(d) :- symptom(a)@0.7, trigger(t)."));
  CHECK(edge_view(kb).at({Symbol("d"), Symbol("a")}) == 0.7);

  kb = KnowledgeBase::from_program(
      parse_program("diagnosis(d) :- \\+ symptom(a), risk(r), symptom(_)."));
  CHECK(edge_view(kb).empty());
}

TEST_CASE("edge_view: every edge traces to a body literal with that weight") {
  std::mt19937_64 rng(11);
  for (int i = 0; i < 100; ++i) {
    Program p = fdx::testing::random_program(rng);
    auto kb = KnowledgeBase::from_program(p);
    for (const auto& [key, w] : edge_view(kb)) {
      bool found = false;
      for (const auto& r : kb.rules) {
        if (r.disease() != key.disease) continue;
        for (const auto& b : r.body) {
          found = found || (!b.literal.negated() && b.literal.predicate.str() == "symptom" &&
                            b.literal.args[0].atom == key.symptom && b.edge_weight == w);
        }
      }
      CHECK(found);
    }
  }
}

TEST_CASE("edit JSON round-trip") {
  KnowledgeSnapshot v1 = make_snapshot(angina_kb(), 1, 0, fixed_time());
  const Rule& sa = rule_for(v1.kb, "stable_angina");
  std::vector<EditRequest> edits{
      edit(AdjustWeight{sa.id, "symptom(chest_pain)", 0.5}),
      edit(LexiconSet{"faint", 0.2}),
      edit(AddRule{parse_rule("diagnosis(x) :- symptom(y)@0.5."), 0.9}),
  };
  edits[0].base_version = 1;
  std::vector<EditRequest> back;
  for (const auto& e : edits) back.push_back(edit_from_json(to_json(e)));
  CHECK(commit(v1, back, fixed_time()).content_hash ==
        commit(v1, edits, fixed_time()).content_hash);
  CHECK_THROWS(edit_from_json(nlohmann::json{{"kind", "merge_branches"}}));
}

TEST_CASE("SnapshotStore: persists, reloads, rejects stale writers") {
  auto dir = std::filesystem::temp_directory_path() / "fdx_store_test";
  std::filesystem::remove_all(dir);
  long long head_version = 0;
  std::string head_hash;
  {
    SnapshotStore store = SnapshotStore::open(dir, angina_kb());
    CHECK(store.head()->version == 1);
    const Rule& sa = rule_for(store.head()->kb, "stable_angina");
    auto v2 = store.commit(1, {edit(AdjustWeight{sa.id, "symptom(chest_pain)", 0.5})});
    CHECK(v2->version == 2);
    CHECK_THROWS_AS(store.commit(1, {}), StaleVersion);
    auto v3 = store.commit(2, {edit(AddRule{parse_rule("diagnosis(x) :- symptom(y)."), {}})});
    head_version = v3->version;
    head_hash = v3->content_hash;
    CHECK(store.get(1)->kb.find_rule(sa.id)->find("symptom(chest_pain)")->edge_weight == 0.8);
    CHECK_THROWS_AS(store.get(42), MissingSnapshot);
  }
  SnapshotStore reopened = SnapshotStore::open(dir);
  CHECK(reopened.head()->version == head_version);
  CHECK(reopened.head()->content_hash == head_hash);
  CHECK(reopened.all().size() == 3);
  CHECK(rule_for(reopened.head()->kb, "x").provenance == Provenance::Clinician);
  CHECK(reopened.compact(2) == 1);
  CHECK_THROWS_AS(reopened.get(1), MissingSnapshot);
  CHECK(SnapshotStore::open(dir).all().size() == 2);
  std::filesystem::remove_all(dir);
}

TEST_CASE("diff/apply round-trip over random edit sequences") {
  std::mt19937_64 rng(2024);
  for (int trial = 0; trial < 100; ++trial) {
    SnapshotStore store(angina_kb(), fixed_time());
    auto random_edit = [&](const KnowledgeBase& kb) -> EditRequest {
      int kind = std::uniform_int_distribution<int>(0, 4)(rng);
      if (kind == 0 || kb.rules.empty()) {
        return edit(AddRule{fdx::testing::random_rule(rng, {"flu", "cold", "gerd"}), std::nullopt});
      }
      const Rule& r = kb.rules[std::uniform_int_distribution<std::size_t>(0, kb.rules.size() - 1)(rng)];
      if (kind == 1) return edit(RemoveRule{r.id});
      if (kind == 2) {
        const auto& b = r.body[std::uniform_int_distribution<std::size_t>(0, r.body.size() - 1)(rng)];
        return edit(AdjustWeight{r.id, b.literal.to_string(), fdx::testing::pick_weight(rng)});
      }
      if (kind == 3) return edit(LexiconSet{fdx::testing::pick(rng, {"mild", "faint", "severe"}),
                                            fdx::testing::pick_weight(rng)});
      PriorEntry p{Symbol(fdx::testing::pick(rng, {"flu", "cold", "acute_mi"})), Term::wildcard(),
                   Term::wildcard(), Term::wildcard(), 0.01 + 0.5 * fdx::testing::uniform01(rng)};
      return edit(PriorSet{p});
    };
    int steps = std::uniform_int_distribution<int>(1, 6)(rng);
    for (int s = 0; s < steps; ++s) {
      auto head = store.head();
      try {
        store.commit(head->version, {random_edit(head->kb)}, fixed_time());
      } catch (const ConsistencyViolation&) {
        // duplicate random rule; skip
      }
    }
    auto snaps = store.all();
    for (std::size_t i = 0; i < snaps.size(); ++i) {
      for (std::size_t j = i + 1; j < snaps.size(); ++j) {
        SnapshotDiff d = diff(*snaps[i], *snaps[j]);
        CHECK(apply_diff(snaps[i]->kb, d).content_hash() == snaps[j]->content_hash);
      }
      CHECK(diff_content(snaps[i]->kb, snaps[i]->kb).empty());
    }
  }
}
