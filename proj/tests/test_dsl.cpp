#include <doctest.h>

#include <filesystem>
#include <random>

#include "fuzzydx/dsl.hpp"
#include "fuzzydx/error.hpp"
#include "test_support.hpp"

using namespace fdx;

TEST_CASE("parse: motivating-example rule with per-literal weights") {
  auto p = parse_program(
      "diagnosis(stable_angina) :- symptom(chest_pain)@0.8, trigger(exertion)@0.9, risk(_), "
      "\\+ lab(troponin_elevated).");
  REQUIRE(p.rules.size() == 1);
  const Rule& r = p.rules[0];
  CHECK(r.disease().str() == "stable_angina");
  REQUIRE(r.body.size() == 4);
  CHECK(r.body[0].edge_weight == 0.8);
  CHECK(r.body[1].edge_weight == 0.9);
  CHECK(r.body[2].edge_weight == 1.0);
  CHECK(r.body[3].edge_weight == 1.0);
  CHECK(r.body[2].literal.args[0].is_wildcard());
  CHECK(r.body[3].literal.negated());
  CHECK(r.body[3].literal.atom_text() == "lab(troponin_elevated)");
}

TEST_CASE("parse: fuzzy_symptom sugar and bare facts") {
  auto p = parse_program("fuzzy_symptom(chest_pain, 0.8).\nrisk(smoking).\nlab(x)@0.25.");
  REQUIRE(p.facts.size() == 3);
  CHECK(p.facts[0].literal.to_string() == "symptom(chest_pain)");
  CHECK(p.facts[0].weight == 0.8);
  CHECK(p.facts[1].weight == 1.0);
  CHECK(p.facts[2].weight == 0.25);
}

TEST_CASE("parse: empty and comment-only programs") {
  CHECK(parse_program("").empty());
  CHECK(parse_program("% nothing here\n   \n").empty());
  CHECK(print_program(Program{}).empty());
}

TEST_CASE("parse: weight bounds") {
  CHECK_THROWS_AS(parse_program("fuzzy_symptom(chest_pain, 1.5)."), WeightOutOfRange);
  CHECK_THROWS_AS(parse_program("diagnosis(d) :- symptom(a)@1.01."), WeightOutOfRange);
  CHECK_THROWS_AS(parse_program("prior(d, _, _, _, 0)."), WeightOutOfRange);
  CHECK_THROWS_AS(parse_program("fuzzy_symptom(a, -0.1)."), WeightOutOfRange);
  // Flagged (zero) edge weights are representable.
  CHECK(parse_program("diagnosis(d) :- symptom(a)@0.").rules[0].body[0].edge_weight == 0.0);
}

TEST_CASE("parse: duplicates") {
  CHECK_THROWS_AS(parse_program("diagnosis(d) :- symptom(a), symptom(b).\n"
                                "diagnosis(d) :- symptom(b)@0.5, symptom(a)."),
                  DuplicateClause);
  CHECK_THROWS_AS(parse_program("diagnosis(d) :- symptom(a), symptom(a)."), DuplicateClause);
  CHECK_THROWS_AS(parse_program("prior(d, _, male, _, 0.1). prior(d, _, male, _, 0.2)."),
                  DuplicateClause);
  CHECK_THROWS_AS(parse_program("risk(x). risk(x)."), DuplicateClause);
}

TEST_CASE("parse: syntax errors carry positions") {
  try {
    parse_program("risk(smoking).\ndiagnosis(d) :- symptom(a) symptom(b).");
    FAIL("expected SyntaxError");
  } catch (const SyntaxError& e) {
    CHECK(e.line() == 2);
    CHECK(e.column() == 28);
  }
  CHECK_THROWS_AS(parse_program(":- initialization(main)."), SyntaxError);
  CHECK_THROWS_AS(parse_program("diagnosis(D) :- symptom(a)."), SyntaxError);
  CHECK_THROWS_AS(parse_program("risk(_)."), SyntaxError);
  CHECK_THROWS_AS(parse_program("foo(a) :- symptom(a)."), SyntaxError);
  CHECK_THROWS_AS(parse_program("fuzzy_symptom(a, 1e-3)."), SyntaxError);
  CHECK_THROWS_AS(parse_program("risk(a)"), SyntaxError);
}

TEST_CASE("rule ids are deterministic and order-insensitive") {
  auto a = parse_program("diagnosis(d) :- symptom(a)@0.3, risk(b).");
  auto b = parse_program("diagnosis(d) :- risk(b), symptom(a)@0.9.");
  CHECK(a.rules[0].id == parse_program("diagnosis(d) :- symptom(a)@0.3, risk(b).").rules[0].id);
  CHECK(a.rules[0].id == b.rules[0].id);
  CHECK(a.rules[0].id != parse_program("diagnosis(e) :- symptom(a), risk(b).").rules[0].id);
}

TEST_CASE("print: canonical text and exact weight round-trip") {
  FuzzyFact f{Literal::make("symptom", {"x"}), 0.5};
  CHECK(print_fact(f) == "fuzzy_symptom(x, 0.5).");
  auto back = parse_program(print_fact(f));
  CHECK(back.facts[0].weight == 0.5);

  auto p = parse_program(
      "diagnosis(stable_angina) :- symptom(chest_pain)@0.8, trigger(exertion)@0.9, risk(_), "
      "\\+ lab(troponin_elevated).");
  CHECK(print_program(p) ==
        "diagnosis(stable_angina) :- symptom(chest_pain)@0.8, trigger(exertion)@0.9, risk(_), "
        "\\+ lab(troponin_elevated).\n");
  CHECK(parse_program(print_program(p)) == p);

  CHECK(format_weight(0.1) == "0.1");
  CHECK(format_weight(1.0) == "1");
  CHECK(format_weight(0.00001) == "0.00001");
}

TEST_CASE("round-trip fixpoint over the fixture corpus") {
  int files = 0;
  for (const auto& entry : std::filesystem::directory_iterator(FDX_FIXTURES)) {
    if (entry.path().extension() != ".kb") continue;
    ++files;
    Program p = parse_program(read_file(entry.path().string()));
    std::string printed = print_program(p);
    CHECK_MESSAGE(parse_program(printed) == p, entry.path());
    CHECK(print_program(parse_program(printed)) == printed);
  }
  CHECK(files >= 1);
}

TEST_CASE("round-trip over random programs") {
  std::mt19937_64 rng(7);
  for (int i = 0; i < 300; ++i) {
    Program p = fdx::testing::random_program(rng);
    std::string text = print_program(p);
    CHECK(parse_program(text) == p);
  }
}

TEST_CASE("lexicon TSV") {
  auto lex = parse_lexicon("# hedges\nmild\t0.3\non-and-off\t0.5\n");
  CHECK(lex.size() == 2);
  CHECK(lex.at("on-and-off") == 0.5);
  CHECK(parse_lexicon(print_lexicon(lex)) == lex);
  CHECK_THROWS_AS(parse_lexicon("mild\t1.3\n"), WeightOutOfRange);
  CHECK_THROWS_AS(parse_lexicon("mild 0.3\n"), ParseError);
  CHECK(parse_lexicon(read_file(std::string(FDX_FIXTURES) + "/lexicon.tsv")) ==
        default_hedge_lexicon());
}
