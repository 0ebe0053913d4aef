#pragma once

#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <json.hpp>

#include "fuzzydx/knowledge_base.hpp"

namespace fdx {

struct LearnerConfig {
  double margin = 0.5;       // m
  double cap = 0.1;          // C
  std::size_t top_k = 5;     // K
  long long m_pos = 5;       // minimum positive co-occurrences before an add
  double rho_add = 1.5;      // specificity needed to add an edge
  double rho_prune = 0.5;    // specificity below which a zero edge is pruned
  double w_init = 0.3;
  double tau_induct = 0.6;

  void validate() const;  // throws Error
};

nlohmann::json to_json(const LearnerConfig& c);
// Unknown keys are errors. Missing keys keep the values in `base`.
LearnerConfig learner_config_from_json(const nlohmann::json& j, LearnerConfig base = {});

struct LearningCase {
  std::string id;
  std::vector<Symbol> symptoms;  // x
  std::vector<Symbol> labels;    // G
};

// Stream line: {id, symptoms:[{name, weight}], labels:[...]}. Weights are ignored.
LearningCase learning_case_from_json(const nlohmann::json& j);
nlohmann::json to_json(const LearningCase& c);
std::vector<LearningCase> load_case_stream(std::string_view jsonl);

// Sum of edge weights w_{d,s} over s in x. Throws EmptyCase for an empty x.
double score_disease(Symbol d, const std::vector<Symbol>& x, const EdgeView& edges);
double score_disease(Symbol d, const std::vector<Symbol>& x, const KnowledgeBase& kb);

struct EdgeChange {
  std::string rule_id;
  Symbol symptom;
  double old_weight = 0.0;
  double new_weight = 0.0;
};

struct PAUpdate {
  std::string case_id;
  Symbol d_plus;
  Symbol d_minus;
  double loss = 0.0;
  double tau = 0.0;
  std::vector<EdgeChange> touched;
};

struct EdgeAdded {
  Symbol disease;
  Symbol symptom;
  std::optional<double> ratio;  // specificity when added structurally
  double weight = 0.0;
  std::optional<std::string> rule_before;  // support rule id, absent when created
  std::string rule_after;
  long long created_at = 0;
};

struct RuleEdit {
  std::string before;
  std::optional<std::string> after;  // absent when the rule was removed
};

struct EdgePruned {
  Symbol disease;
  Symbol symptom;
  double ratio = 0.0;
  std::vector<RuleEdit> rules;
};

struct ZeroFlagged {
  Symbol disease;
  Symbol symptom;
};

struct RuleInduced {
  Rule rule;
  double score = 0.0;
};

using LogEvent = std::variant<PAUpdate, EdgeAdded, EdgePruned, ZeroFlagged, RuleInduced>;
using UpdateLog = std::vector<LogEvent>;

nlohmann::json to_json(const LogEvent& e);
LogEvent log_event_from_json(const nlohmann::json& j);
std::string log_to_jsonl(const UpdateLog& log);
UpdateLog log_from_jsonl(std::string_view text);

// Applies recorded events to a knowledge base. Throws Error if the
// recorded rule ids do not line up.
KnowledgeBase replay(KnowledgeBase kb, const UpdateLog& log);

struct LearnStep {
  KnowledgeBase kb;
  UpdateLog events;
  bool updated = false;
};

// Single most-violating pair update. New learner rules get `created_at`.
LearnStep pa_update(const KnowledgeBase& kb, const LearningCase& c, const LearnerConfig& config,
                    long long created_at = 0);

struct EdgeCounts {
  long long c_plus = 0;
  long long c_minus = 0;
};

using EdgeStats = std::map<EdgeKey, EdgeCounts>;

void update_counts(EdgeStats& stats, const LearningCase& c, const std::set<Symbol>& catalog);
double specificity(const EdgeStats& stats, Symbol d, Symbol s);

// Rule heads plus every label seen in the cases.
std::set<Symbol> disease_catalog(const KnowledgeBase& kb, const std::vector<LearningCase>& cases = {});

LearnStep structure_update(const KnowledgeBase& kb, const EdgeStats& stats,
                           const LearnerConfig& config, long long created_at = 0);

struct RuleTemplate {
  Symbol disease;
  std::vector<Symbol> body;  // sorted symptom atoms
};

// (pair, template, batch) -> real; passed through a sigmoid and averaged.
using TemplateScorer =
    std::function<double(const LearningCase&, const RuleTemplate&, const std::vector<LearningCase>&)>;

// log((c+ + 1)/(c- + 1)) where c+ counts batch cases with the disease and the
// whole body, c- cases with the body but not the disease.
double log_odds_scorer(const LearningCase& pair, const RuleTemplate& t,
                       const std::vector<LearningCase>& batch);

struct InducedRule {
  Rule rule;
  double score = 0.0;
};

// Templates are symptom subsets of size <= max_body seen with the disease in
// at least `min_support` cases. Rules already in `existing` are skipped.
std::vector<InducedRule> induce_rules(const std::vector<LearningCase>& batch,
                                      const TemplateScorer& scorer, double tau_induct,
                                      const KnowledgeBase* existing = nullptr,
                                      std::size_t max_body = 3, std::size_t min_support = 2,
                                      long long created_at = 0);

struct LearnOptions {
  std::size_t max_passes = 1;
  bool structure_each_pass = true;
  bool stop_when_clean = true;  // stop after a pass with no updates
  long long created_at = 0;
};

struct LearnResult {
  KnowledgeBase kb;
  EdgeStats stats;
  UpdateLog log;
  std::vector<std::size_t> updates_per_pass;
};

LearnResult learn_stream(const KnowledgeBase& start, const std::vector<LearningCase>& stream,
                         const LearnerConfig& config, const LearnOptions& options = {});

// Cases where some true disease scores strictly below a top-K false one.
std::size_t count_violations(const KnowledgeBase& kb, const std::vector<LearningCase>& cases,
                             const LearnerConfig& config);

}  // namespace fdx
