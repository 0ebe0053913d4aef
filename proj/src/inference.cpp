#include "fuzzydx/inference.hpp"

#include <algorithm>
#include <map>
#include <sstream>

#include "fuzzydx/error.hpp"

namespace fdx {

std::string_view to_string(TNormKind k) {
  switch (k) {
    case TNormKind::Product: return "product";
    case TNormKind::Minimum: return "minimum";
    case TNormKind::Lukasiewicz: return "lukasiewicz";
  }
  return "product";
}

TNormKind tnorm_from_string(std::string_view s) {
  if (s == "product") return TNormKind::Product;
  if (s == "minimum" || s == "min") return TNormKind::Minimum;
  if (s == "lukasiewicz") return TNormKind::Lukasiewicz;
  throw Error("unknown t-norm '" + std::string(s) + "'");
}

double tnorm(TNormKind kind, double a, double b) {
  switch (kind) {
    case TNormKind::Product: return a * b;
    case TNormKind::Minimum: return std::min(a, b);
    case TNormKind::Lukasiewicz: return std::max(0.0, a + b - 1.0);
  }
  return a * b;
}

LiteralMatch match_literal(const Literal& literal, std::span<const FuzzyFact> facts,
                           double gamma_neg) {
  LiteralMatch best;
  for (const auto& f : facts) {
    if (!literal.matches(f.literal)) continue;
    if (!best.fact || f.weight > best.fact->weight) best.fact = &f;
  }
  if (literal.negated()) {
    bool defeated = best.fact && best.fact->weight > gamma_neg;
    return {defeated ? 0.0 : 1.0, best.fact};
  }
  best.activation = best.fact ? best.fact->weight : 0.0;
  return best;
}

double literal_activation(const Literal& literal, std::span<const FuzzyFact> facts,
                          double gamma_neg) {
  return match_literal(literal, facts, gamma_neg).activation;
}

double rule_activation(const Rule& rule, std::span<const FuzzyFact> facts, TNormKind kind,
                       double gamma_neg) {
  double acc = 1.0;
  for (const auto& b : rule.body) {
    acc = tnorm(kind, acc, tnorm(kind, b.edge_weight, literal_activation(b.literal, facts,
                                                                          gamma_neg)));
  }
  return acc;
}

namespace {

ProofNode rule_node(const Rule& rule, std::span<const FuzzyFact> facts,
                    const InferenceConfig& config) {
  ProofNode node;
  node.kind = ProofNode::Kind::Rule;
  node.label = rule.id;
  double acc = 1.0;
  for (const auto& b : rule.body) {
    LiteralMatch m = match_literal(b.literal, facts, config.gamma_neg);
    ProofNode leaf;
    leaf.kind = ProofNode::Kind::Leaf;
    leaf.label = b.literal.to_string();
    leaf.negated = b.literal.negated();
    leaf.edge_weight = b.edge_weight;
    leaf.activation = tnorm(config.tnorm, b.edge_weight, m.activation);
    if (m.fact) leaf.fact = *m.fact;
    acc = tnorm(config.tnorm, acc, leaf.activation);
    node.children.push_back(std::move(leaf));
  }
  node.activation = acc;
  return node;
}

// Collects root-to-leaf path products in left-to-right order.
void path_products(const ProofNode& node, double prefix, std::vector<double>& out) {
  double here = node.kind == ProofNode::Kind::Leaf ? prefix * node.activation : prefix;
  if (node.children.empty()) {
    if (node.kind != ProofNode::Kind::Hypothesis) out.push_back(here);
    return;
  }
  for (const auto& c : node.children) path_products(c, here, out);
}

std::string humanize(std::string_view atom) {
  std::string s(atom);
  std::replace(s.begin(), s.end(), '_', ' ');
  return s;
}

std::string trigger_phrase(std::string_view trigger) {
  static const std::map<std::string, std::string, std::less<>> kAdjective{
      {"exertion", "exertional"}, {"meals", "postprandial"}, {"cold", "cold-induced"},
      {"stress", "stress-related"}, {"lying_down", "positional"}};
  auto it = kAdjective.find(trigger);
  if (it != kAdjective.end()) return it->second;
  return "triggered by " + humanize(trigger);
}

std::string quote_span(const FuzzyFact& f, std::string_view note) {
  if (!f.provenance || note.empty() || f.provenance->end > note.size()) return {};
  return " \"" + std::string(note.substr(f.provenance->begin, f.provenance->size())) + "\"";
}

std::string fact_text(const FuzzyFact& f) {
  return f.literal.to_string() + "@" + format_weight(f.weight);
}

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(4);
  os << v;
  return os.str();
}

}  // namespace

std::vector<DiagnosisCandidate> derive_candidates(const KnowledgeBase& kb,
                                                  std::span<const FuzzyFact> facts,
                                                  const InferenceConfig& config) {
  std::map<Symbol, DiagnosisCandidate> by_disease;
  for (const auto& rule : kb.rules) {
    ProofNode node = rule_node(rule, facts, config);
    if (!(node.activation > config.gamma)) continue;
    auto [it, inserted] = by_disease.try_emplace(rule.disease());
    DiagnosisCandidate& c = it->second;
    if (inserted) {
      c.disease = rule.disease();
      c.proof.kind = ProofNode::Kind::Hypothesis;
      c.proof.label = rule.head.to_string();
    }
    c.activation = std::max(c.activation, node.activation);
    c.proof.children.push_back(std::move(node));
  }
  std::vector<DiagnosisCandidate> out;
  out.reserve(by_disease.size());
  for (auto& [d, c] : by_disease) {
    c.proof.activation = c.activation;
    c.confidence = confidence(c.proof);
    out.push_back(std::move(c));
  }
  std::stable_sort(out.begin(), out.end(), [](const auto& a, const auto& b) {
    if (a.activation != b.activation) return a.activation > b.activation;
    return a.disease < b.disease;
  });
  return out;
}

double confidence(const ProofNode& proof) {
  std::vector<double> paths;
  path_products(proof, 1.0, paths);
  double total = 0.0;
  for (double p : paths) total += p;
  return total;
}

std::size_t proof_size(const ProofNode& node) {
  std::size_t n = 1;
  for (const auto& c : node.children) n += proof_size(c);
  return n;
}

std::string explain(const DiagnosisCandidate& candidate, std::string_view note) {
  std::ostringstream os;
  os << "Why " << humanize(candidate.disease.view()) << "?";

  // One-line summary built from the strongest rule.
  const ProofNode* best = nullptr;
  for (const auto& r : candidate.proof.children) {
    if (!best || r.activation > best->activation) best = &r;
  }
  if (best) {
    std::vector<std::string> symptoms, triggers, risks, absent, other;
    for (const auto& leaf : best->children) {
      if (leaf.negated) {
        absent.push_back(leaf.label.substr(3));
        continue;
      }
      if (!leaf.fact) continue;
      const Literal& l = leaf.fact->literal;
      std::string arg = l.args.empty() ? "" : l.args[0].to_string();
      const std::string& p = l.predicate.str();
      if (p == "symptom") {
        symptoms.push_back(humanize(arg));
      } else if (p == "trigger") {
        triggers.push_back(arg);
      } else if (p == "risk") {
        risks.push_back(humanize(arg));
      } else {
        other.push_back(humanize(l.atom_text()));
      }
    }
    std::vector<std::string> parts;
    for (const auto& s : symptoms) {
      std::string line = s;
      for (std::size_t i = 0; i < triggers.size(); ++i) {
        line += (i ? " and " : " is ") + trigger_phrase(triggers[i]);
      }
      if (triggers.empty()) line += " reported";
      parts.push_back(line);
    }
    if (symptoms.empty()) {
      for (const auto& t : triggers) parts.push_back("symptoms " + trigger_phrase(t));
    }
    if (!risks.empty()) {
      std::string line = "risk factors: ";
      for (std::size_t i = 0; i < risks.size(); ++i) line += (i ? ", " : "") + risks[i];
      parts.push_back(line);
    }
    for (const auto& o : other) parts.push_back(o + " present");
    for (const auto& a : absent) parts.push_back("no evidence of " + a);
    os << ' ';
    for (std::size_t i = 0; i < parts.size(); ++i) os << (i ? "; " : "") << parts[i];
    os << '.';
  }
  os << "\n";

  for (const auto& r : candidate.proof.children) {
    os << "  rule " << r.label << " fired with activation " << fmt(r.activation) << "\n";
    for (const auto& leaf : r.children) {
      os << "    - ";
      if (leaf.negated) {
        os << "no evidence of " << leaf.label.substr(3);
      } else if (leaf.fact) {
        os << leaf.label << " <- " << fact_text(*leaf.fact) << quote_span(*leaf.fact, note);
        if (leaf.fact->temporal != Temporal::Untagged) {
          os << " (" << to_string(leaf.fact->temporal) << ")";
        }
      } else {
        os << leaf.label << " unmatched";
      }
      os << ", edge " << fmt(leaf.edge_weight) << ", activation " << fmt(leaf.activation)
         << "\n";
    }
  }
  os << "  confidence " << fmt(candidate.confidence) << " (display "
     << fmt(candidate.display_confidence()) << ")\n";
  if (candidate.prior) os << "  prior " << fmt(*candidate.prior) << "\n";
  if (candidate.posterior) os << "  posterior " << fmt(*candidate.posterior) << "\n";
  return os.str();
}

nlohmann::json proof_to_json(const DiagnosisCandidate& candidate, std::string_view note) {
  using nlohmann::json;
  json rules = json::array();
  for (const auto& r : candidate.proof.children) {
    json leaves = json::array();
    for (const auto& leaf : r.children) {
      json l{{"literal", leaf.label},
             {"weight", leaf.activation},
             {"edge_weight", leaf.edge_weight},
             {"span", nullptr}};
      if (leaf.fact) {
        l["fact"] = fact_text(*leaf.fact);
        if (leaf.fact->provenance) {
          l["span"] = {leaf.fact->provenance->begin, leaf.fact->provenance->end};
          std::string q = quote_span(*leaf.fact, note);
          if (!q.empty()) l["text"] = q.substr(2, q.size() - 3);
        }
      }
      leaves.push_back(std::move(l));
    }
    rules.push_back({{"id", r.label}, {"activation", r.activation}, {"leaves", std::move(leaves)}});
  }
  return {{"hypothesis", candidate.proof.label},
          {"rules", std::move(rules)},
          {"confidence", candidate.confidence}};
}

}  // namespace fdx
