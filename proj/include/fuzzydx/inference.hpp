#pragma once

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "fuzzydx/knowledge_base.hpp"
#include "fuzzydx/program.hpp"

namespace fdx {

enum class TNormKind { Product, Minimum, Lukasiewicz };

std::string_view to_string(TNormKind k);
TNormKind tnorm_from_string(std::string_view s);

double tnorm(TNormKind kind, double a, double b);

struct InferenceConfig {
  TNormKind tnorm = TNormKind::Product;
  double gamma = 0.4;      // a rule fires when its activation strictly exceeds gamma
  double gamma_neg = 0.0;  // a matching fact above this defeats `\+`
};

// Best match of one literal against the fact set.
struct LiteralMatch {
  double activation = 0.0;
  const FuzzyFact* fact = nullptr;  // strongest matching fact, if any
};

// Positive literal: max weight over matching facts (0 when none). Negated
// literal: 1 when no matching fact weighs more than gamma_neg, else 0.
LiteralMatch match_literal(const Literal& literal, std::span<const FuzzyFact> facts,
                           double gamma_neg = 0.0);
double literal_activation(const Literal& literal, std::span<const FuzzyFact> facts,
                          double gamma_neg = 0.0);

// T-norm fold, starting from 1, of T(edge_weight, literal activation) per body literal.
double rule_activation(const Rule& rule, std::span<const FuzzyFact> facts, TNormKind kind,
                       double gamma_neg = 0.0);

// Proof tree: hypothesis -> fired rules -> leaves. Leaves hold the body literal,
// the matched fact and the leaf activation (edge weight combined with the fact).
struct ProofNode {
  enum class Kind { Hypothesis, Rule, Leaf };

  Kind kind = Kind::Leaf;
  std::string label;  // literal text for hypothesis/leaf, rule id for rule nodes
  double activation = 0.0;
  double edge_weight = 1.0;
  bool negated = false;
  std::optional<FuzzyFact> fact;
  std::vector<ProofNode> children;
};

struct DiagnosisCandidate {
  Symbol disease;
  double activation = 0.0;  // rho: max activation over the disease's firing rules
  double confidence = 0.0;  // raw path-sum confidence
  ProofNode proof;
  std::optional<double> prior;
  std::optional<double> posterior;

  double display_confidence() const { return confidence < 1.0 ? confidence : 1.0; }
};

// Candidates with at least one firing rule, sorted by activation descending
// then disease name.
std::vector<DiagnosisCandidate> derive_candidates(const KnowledgeBase& kb,
                                                  std::span<const FuzzyFact> facts,
                                                  const InferenceConfig& config = {});

// Sum over root-to-leaf paths of the product of leaf activations on the path.
double confidence(const ProofNode& proof);

// Human-readable trace. `note` is used to quote provenance spans when given.
std::string explain(const DiagnosisCandidate& candidate, std::string_view note = {});

nlohmann::json proof_to_json(const DiagnosisCandidate& candidate, std::string_view note = {});
std::size_t proof_size(const ProofNode& node);

}  // namespace fdx
