#include "fuzzydx/program.hpp"

#include <algorithm>
#include <charconv>
#include <mutex>
#include <set>
#include <unordered_set>

#include "fuzzydx/digest.hpp"
#include "fuzzydx/error.hpp"

namespace fdx {

namespace {

class SymbolTable {
 public:
  const std::string* intern(std::string_view name) {
    std::lock_guard lock(mu_);
    auto it = names_.find(std::string(name));
    if (it == names_.end()) it = names_.emplace(name).first;
    return &*it;
  }

 private:
  std::mutex mu_;
  std::unordered_set<std::string> names_;  // node-based: element addresses are stable
};

SymbolTable& table() {
  static SymbolTable t;
  return t;
}

}  // namespace

Symbol::Symbol() : name_(table().intern("")) {}

Symbol::Symbol(std::string_view name) {
  if (!is_valid(name)) throw Error("invalid symbol '" + std::string(name) + "'");
  name_ = table().intern(name);
}

bool Symbol::is_valid(std::string_view name) {
  if (name.empty() || name[0] < 'a' || name[0] > 'z') return false;
  return std::all_of(name.begin(), name.end(), [](char c) {
    return (c >= 'a' && c <= 'z') || (c >= '0' && c <= '9') || c == '_';
  });
}

Literal Literal::make(std::string_view predicate, std::initializer_list<std::string_view> args,
                      Polarity polarity) {
  Literal lit{Symbol(predicate), {}, polarity};
  for (auto a : args) lit.args.push_back(a == "_" ? Term::wildcard() : Term::of(a));
  return lit;
}

bool Literal::is_ground() const {
  return std::none_of(args.begin(), args.end(), [](const Term& t) { return t.is_wildcard(); });
}

bool Literal::matches(const Literal& ground) const {
  if (predicate != ground.predicate || args.size() != ground.args.size()) return false;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (!args[i].is_wildcard() && args[i] != ground.args[i]) return false;
  }
  return true;
}

std::string Literal::atom_text() const {
  std::string out = predicate.str();
  if (!args.empty()) {
    out += '(';
    for (std::size_t i = 0; i < args.size(); ++i) {
      if (i) out += ", ";
      out += args[i].to_string();
    }
    out += ')';
  }
  return out;
}

std::string Literal::to_string() const { return (negated() ? "\\+ " : "") + atom_text(); }

Literal Literal::positive() const {
  Literal l = *this;
  l.polarity = Polarity::Positive;
  return l;
}

std::string_view to_string(Provenance p) {
  switch (p) {
    case Provenance::Curated: return "curated";
    case Provenance::Induced: return "induced";
    case Provenance::Learner: return "learner";
    case Provenance::Clinician: return "clinician";
  }
  return "curated";
}

Provenance provenance_from_string(std::string_view s) {
  if (s == "curated") return Provenance::Curated;
  if (s == "induced") return Provenance::Induced;
  if (s == "learner") return Provenance::Learner;
  if (s == "clinician") return Provenance::Clinician;
  throw Error("unknown provenance '" + std::string(s) + "'");
}

std::string_view to_string(Temporal t) {
  switch (t) {
    case Temporal::Acute: return "acute";
    case Temporal::Chronic: return "chronic";
    case Temporal::Untagged: return "untagged";
  }
  return "untagged";
}

const BodyLiteral* Rule::find(std::string_view literal_text) const {
  for (const auto& b : body) {
    if (b.literal.to_string() == literal_text) return &b;
  }
  return nullptr;
}

BodyLiteral* Rule::find(std::string_view literal_text) {
  return const_cast<BodyLiteral*>(std::as_const(*this).find(literal_text));
}

std::string compute_rule_id(const Literal& head, const std::vector<BodyLiteral>& body) {
  std::vector<std::string> parts;
  parts.reserve(body.size());
  for (const auto& b : body) parts.push_back(b.literal.to_string());
  std::sort(parts.begin(), parts.end());
  std::string key = head.to_string() + " :-";
  for (const auto& p : parts) key += " " + p + ";";
  return "r" + sha256_hex(key).substr(0, 12);
}

Rule make_rule(Symbol disease, std::vector<BodyLiteral> body, Provenance provenance,
               long long created_at) {
  if (body.empty()) throw ConsistencyViolation("rule body for " + disease.str() + " is empty");
  std::set<std::string> seen;
  for (const auto& b : body) {
    if (!(b.edge_weight >= 0.0 && b.edge_weight <= 1.0)) {
      throw WeightOutOfRange("edge weight " + format_weight(b.edge_weight) + " outside [0,1]");
    }
    if (!seen.insert(b.literal.to_string()).second) {
      throw DuplicateClause("duplicate body literal " + b.literal.to_string());
    }
  }
  Rule r;
  r.head = Literal{Symbol("diagnosis"), {Term::of(disease)}, Polarity::Positive};
  r.body = std::move(body);
  r.provenance = provenance;
  r.created_at = created_at;
  refresh_rule_id(r);
  return r;
}

void refresh_rule_id(Rule& rule) { rule.id = compute_rule_id(rule.head, rule.body); }

std::string PriorEntry::to_string() const {
  return "prior(" + disease.str() + ", " + age_band.to_string() + ", " + sex.to_string() + ", " +
         region.to_string() + ", " + format_weight(prevalence) + ")";
}

std::string format_weight(double w) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, w, std::chars_format::fixed);
  if (ec != std::errc{}) return "0";
  return std::string(buf, end);
}

Symbol age_band(int years) {
  if (years < 18) return Symbol("age_0_17");
  if (years < 40) return Symbol("age_18_39");
  if (years < 65) return Symbol("age_40_64");
  return Symbol("age_65_plus");
}

}  // namespace fdx
