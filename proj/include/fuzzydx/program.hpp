#pragma once

#include <compare>
#include <cstddef>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace fdx {

// Interned lowercase identifier matching [a-z][a-z0-9_]*. Equality compares
// the interned pointer; ordering is lexicographic on the text.
class Symbol {
 public:
  Symbol();
  explicit Symbol(std::string_view name);

  static bool is_valid(std::string_view name);

  const std::string& str() const { return *name_; }
  std::string_view view() const { return *name_; }
  bool empty() const { return name_->empty(); }

  friend bool operator==(Symbol a, Symbol b) { return a.name_ == b.name_; }
  friend std::strong_ordering operator<=>(Symbol a, Symbol b) { return *a.name_ <=> *b.name_; }

 private:
  const std::string* name_;
};

// Argument of a literal: an atom, or the anonymous wildcard `_`.
struct Term {
  std::optional<Symbol> atom;

  static Term wildcard() { return Term{}; }
  static Term of(Symbol s) { return Term{s}; }
  static Term of(std::string_view s) { return Term{Symbol(s)}; }

  bool is_wildcard() const { return !atom.has_value(); }
  std::string to_string() const { return atom ? atom->str() : "_"; }

  friend bool operator==(const Term&, const Term&) = default;
};

enum class Polarity { Positive, NegatedAsFailure };

struct Literal {
  Symbol predicate;
  std::vector<Term> args;
  Polarity polarity = Polarity::Positive;

  static Literal make(std::string_view predicate, std::initializer_list<std::string_view> args,
                      Polarity polarity = Polarity::Positive);

  bool negated() const { return polarity == Polarity::NegatedAsFailure; }
  bool is_ground() const;
  // Same predicate, arity and arguments; wildcards on this side match anything.
  bool matches(const Literal& ground) const;
  // Canonical text without the `\+` prefix, e.g. `lab(troponin_normal)`.
  std::string atom_text() const;
  // Canonical text including the negation prefix.
  std::string to_string() const;
  Literal positive() const;

  friend bool operator==(const Literal&, const Literal&) = default;
};

struct BodyLiteral {
  Literal literal;
  double edge_weight = 1.0;

  friend bool operator==(const BodyLiteral&, const BodyLiteral&) = default;
};

enum class Provenance { Curated, Induced, Learner, Clinician };

std::string_view to_string(Provenance p);
Provenance provenance_from_string(std::string_view s);

struct Rule {
  std::string id;
  Literal head;
  std::vector<BodyLiteral> body;
  Provenance provenance = Provenance::Curated;
  long long created_at = 0;

  Symbol disease() const { return *head.args.at(0).atom; }
  // Finds the body literal with this exact canonical text.
  const BodyLiteral* find(std::string_view literal_text) const;
  BodyLiteral* find(std::string_view literal_text);

  friend bool operator==(const Rule&, const Rule&) = default;
};

// Rule identifier: a digest of the head and the sorted body literal texts
// (weights excluded), so two rules with equal head and body multiset share an id.
std::string compute_rule_id(const Literal& head, const std::vector<BodyLiteral>& body);

// Builds a rule and assigns its id. Throws WeightOutOfRange / ConsistencyViolation
// when the rule breaks the type invariants.
Rule make_rule(Symbol disease, std::vector<BodyLiteral> body,
               Provenance provenance = Provenance::Curated, long long created_at = 0);
// Re-derives the id after a body change.
void refresh_rule_id(Rule& rule);

struct Span {
  std::size_t begin = 0;
  std::size_t end = 0;

  std::size_t size() const { return end - begin; }
  friend bool operator==(const Span&, const Span&) = default;
};

enum class Temporal { Untagged, Acute, Chronic };

std::string_view to_string(Temporal t);

struct FuzzyFact {
  Literal literal;
  double weight = 1.0;
  Temporal temporal = Temporal::Untagged;
  std::optional<Span> provenance;

  friend bool operator==(const FuzzyFact&, const FuzzyFact&) = default;
};

struct PriorEntry {
  Symbol disease;
  Term age_band;
  Term sex;
  Term region;
  double prevalence = 1.0;

  int wildcard_count() const {
    return int(age_band.is_wildcard()) + int(sex.is_wildcard()) + int(region.is_wildcard());
  }
  bool same_stratum(const PriorEntry& o) const {
    return disease == o.disease && age_band == o.age_band && sex == o.sex && region == o.region;
  }
  std::string to_string() const;

  friend bool operator==(const PriorEntry&, const PriorEntry&) = default;
};

// Patient stratum used for prior lookup. Missing fields match only wildcard strata.
struct Demographics {
  std::optional<int> age;
  std::optional<Symbol> sex;
  std::optional<Symbol> region;

  friend bool operator==(const Demographics&, const Demographics&) = default;
};

// age_0_17, age_18_39, age_40_64 or age_65_plus.
Symbol age_band(int years);

struct Program {
  std::vector<Rule> rules;
  std::vector<FuzzyFact> facts;
  std::vector<PriorEntry> priors;

  bool empty() const { return rules.empty() && facts.empty() && priors.empty(); }
  friend bool operator==(const Program&, const Program&) = default;
};

// Shortest fixed-notation decimal that round-trips the value exactly.
std::string format_weight(double w);

}  // namespace fdx

template <>
struct std::hash<fdx::Symbol> {
  std::size_t operator()(fdx::Symbol s) const noexcept {
    return std::hash<const void*>{}(static_cast<const void*>(&s.str()));
  }
};
