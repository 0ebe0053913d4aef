#pragma once

#include <map>
#include <string>
#include <string_view>

#include "fuzzydx/program.hpp"

namespace fdx {

// Hedge lexicon: surface hedge term -> truth degree in [0,1].
using Lexicon = std::map<std::string, double>;

// Parses the `.kb` clause language. Clauses come back in source order.
//
//   diagnosis(d) :- symptom(a)@0.8, risk(_), \+ lab(x).   rule, `@w` defaults to 1
//   fuzzy_symptom(a, 0.8).                                sugar for symptom(a)@0.8
//   risk(smoking).                                        ground fact, weight 1
//   risk(smoking)@0.5.                                    ground fact with weight
//   prior(d, age_40_64, _, _, 0.05).                      prevalence prior
//
// Throws SyntaxError, DuplicateClause or WeightOutOfRange.
Program parse_program(std::string_view text);

// Canonical text: rules, then facts, then priors, one clause per line.
std::string print_program(const Program& program);

std::string print_rule(const Rule& rule);
std::string print_fact(const FuzzyFact& fact);
std::string print_prior(const PriorEntry& prior);

// Parses a single rule clause (the trailing `.` is optional).
Rule parse_rule(std::string_view text);

// Lexicon TSV: `term<TAB>weight` per line; blank lines and `#` comments skipped.
Lexicon parse_lexicon(std::string_view tsv);
std::string print_lexicon(const Lexicon& lexicon);
Lexicon default_hedge_lexicon();

std::string read_file(const std::string& path);
void write_file(const std::string& path, std::string_view content);

}  // namespace fdx
