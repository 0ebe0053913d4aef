#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include <json.hpp>

#include "fuzzydx/dsl.hpp"
#include "fuzzydx/program.hpp"

namespace fdx {

// Rule base content of one version: rules (sorted by id), the hedge lexicon
// that plays the role of the fuzzy membership set, and prevalence priors.
struct KnowledgeBase {
  std::vector<Rule> rules;
  Lexicon lexicon;
  std::vector<PriorEntry> priors;

  static KnowledgeBase from_program(const Program& program, Lexicon lexicon = {});

  // Sorts rules by id and priors by stratum so equal content compares equal.
  void normalize();

  const Rule* find_rule(std::string_view id) const;
  std::set<Symbol> diseases() const;
  // `.kb` text holding rules and priors.
  std::string kb_text() const;
  // Everything the content hash covers: kb text, lexicon, rule metadata.
  std::string canonical_text() const;
  std::string content_hash() const;

  friend bool operator==(const KnowledgeBase&, const KnowledgeBase&) = default;
};

enum class EditAuthor { Clinician, Learner };

std::string_view to_string(EditAuthor a);

struct AddRule {
  Rule rule;
  // Injected-rule weight; when present it replaces every body edge weight.
  std::optional<double> weight;
};
struct RemoveRule {
  std::string id;
};
struct AdjustWeight {
  std::string rule_id;
  std::string literal;  // canonical literal text, e.g. `symptom(chest_pain)`
  double weight = 0.0;
};
struct LexiconSet {
  std::string term;
  double weight = 0.0;
};
struct PriorSet {
  PriorEntry prior;
};

struct EditRequest {
  std::variant<AddRule, RemoveRule, AdjustWeight, LexiconSet, PriorSet> kind;
  EditAuthor author = EditAuthor::Clinician;
  std::string note;
  // Version the edit was authored against; checked against the head on commit.
  std::optional<long long> base_version;
};

struct ConsistencyConfig {
  std::set<std::string> body_predicates{"symptom", "trigger", "risk", "lab", "test"};
};

struct KnowledgeSnapshot {
  long long version = 0;
  long long parent = 0;
  std::string timestamp;  // ISO-8601 UTC
  std::string author;
  std::string note;
  KnowledgeBase kb;
  std::string content_hash;
};

using SnapshotPtr = std::shared_ptr<const KnowledgeSnapshot>;

struct CommitOptions {
  std::string author = "clinician";
  std::string note;
  std::optional<std::string> timestamp;  // defaults to now
  ConsistencyConfig consistency;
};

// Structural consistency: no duplicate rules, weights in bounds, diagnosis
// heads, body predicates within the vocabulary. Throws ConsistencyViolation.
void verify_consistency(const KnowledgeBase& kb, const ConsistencyConfig& config = {});

// Applies edits to a copy of `kb`. Throws UnknownRuleId, ConsistencyViolation,
// WeightOutOfRange; `kb` is never touched.
KnowledgeBase apply_edits(const KnowledgeBase& kb, const std::vector<EditRequest>& edits,
                          long long new_version);

// Produces version head.version + 1. Either every edit lands or none does.
KnowledgeSnapshot commit(const KnowledgeSnapshot& head, const std::vector<EditRequest>& edits,
                         const CommitOptions& options = {});

KnowledgeSnapshot make_snapshot(KnowledgeBase kb, long long version, long long parent,
                                const CommitOptions& options = {});

struct WeightDelta {
  std::string rule_id;
  std::string literal;
  double old_weight = 0.0;
  double new_weight = 0.0;
  friend bool operator==(const WeightDelta&, const WeightDelta&) = default;
};

struct LexiconDelta {
  std::string term;
  std::optional<double> old_weight;
  std::optional<double> new_weight;
  friend bool operator==(const LexiconDelta&, const LexiconDelta&) = default;
};

struct PriorDelta {
  PriorEntry stratum;  // prevalence field unused
  std::optional<double> old_prevalence;
  std::optional<double> new_prevalence;
};

struct SnapshotDiff {
  long long from_version = 0;
  long long to_version = 0;
  std::vector<Rule> added_rules;
  std::vector<std::string> removed_rules;
  std::vector<WeightDelta> weight_deltas;
  std::vector<LexiconDelta> lexicon_deltas;
  std::vector<PriorDelta> prior_deltas;

  bool empty() const {
    return added_rules.empty() && removed_rules.empty() && weight_deltas.empty() &&
           lexicon_deltas.empty() && prior_deltas.empty();
  }
};

// Content diff; throws VersionOrder unless older.version < newer.version.
SnapshotDiff diff(const KnowledgeSnapshot& older, const KnowledgeSnapshot& newer);
// Diff of raw content, no version check.
SnapshotDiff diff_content(const KnowledgeBase& older, const KnowledgeBase& newer);
KnowledgeBase apply_diff(const KnowledgeBase& older, const SnapshotDiff& d);

nlohmann::json to_json(const SnapshotDiff& d);
SnapshotDiff diff_from_json(const nlohmann::json& j);

struct EdgeKey {
  Symbol disease;
  Symbol symptom;
  friend auto operator<=>(const EdgeKey&, const EdgeKey&) = default;
  friend bool operator==(const EdgeKey&, const EdgeKey&) = default;
};

using EdgeView = std::map<EdgeKey, double>;

// Disease-symptom edge weights derived from positive `symptom(s)` body
// literals; several occurrences of one edge report their maximum.
EdgeView edge_view(const KnowledgeBase& kb);

nlohmann::json to_json(const EditRequest& e);
EditRequest edit_from_json(const nlohmann::json& j);
nlohmann::json manifest_json(const KnowledgeSnapshot& s);

// Append-only version log. Readers take shared pointers to immutable
// snapshots; commits are serialized through one writer lock.
class SnapshotStore {
 public:
  // In-memory store seeded with `initial` as version 1.
  explicit SnapshotStore(KnowledgeBase initial, CommitOptions options = {});
  // Opens a store directory. When it holds no versions it is seeded with `initial`.
  static SnapshotStore open(const std::filesystem::path& dir,
                            std::optional<KnowledgeBase> initial = std::nullopt);

  SnapshotStore(SnapshotStore&& other) noexcept;
  SnapshotStore& operator=(SnapshotStore&&) = delete;

  SnapshotPtr head() const;
  SnapshotPtr get(long long version) const;  // throws MissingSnapshot
  std::vector<SnapshotPtr> all() const;

  // Throws StaleVersion when base_version is not the head.
  SnapshotPtr commit(long long base_version, const std::vector<EditRequest>& edits,
                     const CommitOptions& options = {});
  // Commits precomputed content, for learners that stage their own changes.
  SnapshotPtr commit_content(long long base_version, KnowledgeBase kb,
                             const CommitOptions& options = {});
  // Stages a change under the writer lock: `stage` maps the head to new content.
  SnapshotPtr commit_with(long long base_version,
                          const std::function<KnowledgeBase(const KnowledgeSnapshot&)>& stage,
                          const CommitOptions& options = {});

  // Drops snapshots older than the newest `keep` versions; the head is always kept.
  std::size_t compact(std::size_t keep);

  const std::optional<std::filesystem::path>& directory() const { return dir_; }

 private:
  SnapshotStore() = default;
  void persist(const KnowledgeSnapshot& s) const;
  static KnowledgeSnapshot load(const std::filesystem::path& dir, long long version);

  std::optional<std::filesystem::path> dir_;
  mutable std::mutex read_mu_;
  std::mutex write_mu_;
  std::map<long long, SnapshotPtr> versions_;
  ConsistencyConfig consistency_;
};

}  // namespace fdx
