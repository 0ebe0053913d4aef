#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "fuzzydx/extraction.hpp"
#include "fuzzydx/inference.hpp"
#include "fuzzydx/knowledge_base.hpp"

namespace fdx {

inline constexpr std::size_t kDefaultDim = 256;

class Embedder {
 public:
  virtual ~Embedder() = default;
  virtual std::size_t dim() const = 0;
  // Unit vector (or zero) for one fact.
  virtual std::vector<double> embed_fact(const FuzzyFact& fact) const = 0;
};

// Signed feature hashing of "pred:atom" plus the atom's '_'-separated parts.
class HashingEmbedder : public Embedder {
 public:
  explicit HashingEmbedder(std::size_t dim = kDefaultDim) : dim_(dim) {}
  std::size_t dim() const override { return dim_; }
  std::vector<double> embed_fact(const FuzzyFact& fact) const override;

 private:
  std::size_t dim_;
};

const Embedder& default_embedder();

// Mean of per-fact vectors, L2-normalized. Throws EmptyCase without facts.
std::vector<double> embed_case(const std::vector<FuzzyFact>& facts,
                               const Embedder& embedder = default_embedder());

double cosine(const std::vector<double>& a, const std::vector<double>& b);

struct IndexEntry {
  std::string id;
  std::vector<double> vector;
  std::vector<Symbol> labels;
  std::vector<Symbol> symptoms;  // symptom atoms present in the stored case
};

class CaseIndex {
 public:
  explicit CaseIndex(std::size_t dim = kDefaultDim) : dim_(dim) {}

  // Validates dimension, unit norm and id uniqueness.
  void add(IndexEntry entry);
  void add_case(std::string id, const std::vector<FuzzyFact>& facts, std::vector<Symbol> labels,
                const Embedder& embedder = default_embedder());

  std::size_t dim() const { return dim_; }
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  const std::vector<IndexEntry>& entries() const { return entries_; }

  // One JSON object per line: {id, vector, labels, symptoms}.
  static CaseIndex from_jsonl(std::string_view text);
  std::string to_jsonl() const;

 private:
  std::size_t dim_;
  std::vector<IndexEntry> entries_;
  std::map<std::string, std::size_t> by_id_;
};

// 1 - sum of squared label frequencies. Throws EmptySet.
double gini(const std::vector<Symbol>& labels);

struct Neighbour {
  const IndexEntry* entry = nullptr;
  double cosine = 0.0;
};

// k nearest by cosine (ties by id), shrunk from the far end while the label
// Gini impurity is at or above the threshold and more than one remain.
std::vector<Neighbour> retrieve_neighbours(const CaseIndex& index, const std::vector<double>& v,
                                           std::size_t k_max = 20, double gini_threshold = 0.3);

// Max non-negative cosine over neighbours whose case holds the symptom.
double neighbour_prior(Symbol symptom, const std::vector<Neighbour>& neighbours);

// w_i = (exp(alpha w_text_i) + exp(beta w_retr_i)) / sum_j of the same.
std::vector<double> blend_weights(const std::vector<double>& w_text,
                                  const std::vector<double>& w_retr, double alpha = 3.0,
                                  double beta = 3.0);

enum class RescaleMode { MaxNormalized, Raw };

std::string_view to_string(RescaleMode m);
RescaleMode rescale_from_string(std::string_view s);

std::vector<double> rescale_for_inference(const std::vector<double>& w,
                                          RescaleMode mode = RescaleMode::MaxNormalized);

inline constexpr double kPriorFloor = 1e-4;

// Exact stratum, else the matching stratum with fewest wildcards, else the
// floor. Throws MissingPrior when nothing matches and no floor is set.
double lookup_prior(const std::vector<PriorEntry>& priors, Symbol disease,
                    const Demographics& demographics, std::optional<double> floor = kPriorFloor);

// Sets prior and posterior = rho*pi / sum(rho*pi); sorts by posterior, rho, name.
std::vector<DiagnosisCandidate> fuse_priors(std::vector<DiagnosisCandidate> candidates,
                                            const std::vector<PriorEntry>& priors,
                                            const Demographics& demographics,
                                            std::optional<double> floor = kPriorFloor);

struct EngineConfig {
  InferenceConfig inference;
  double alpha = 3.0;
  double beta = 3.0;
  RescaleMode rescale = RescaleMode::MaxNormalized;
  std::size_t k_max = 20;
  double gini_threshold = 0.3;
  bool blend = true;       // retrieval blend and rescale of symptom weights
  bool crisp = false;      // force every fact weight to 1
  bool use_priors = true;  // otherwise posterior = rho / sum(rho)
  std::optional<double> prior_floor = kPriorFloor;
  std::map<Symbol, double> overrides;  // per-symptom replacement for w_text
};

nlohmann::json to_json(const EngineConfig& c);
// Unknown keys are errors. Missing keys keep the values in `base`.
EngineConfig engine_config_from_json(const nlohmann::json& j, EngineConfig base = {});

struct CaseInput {
  std::optional<std::string> note;
  std::vector<FuzzyFact> facts;
  Demographics demographics;
};

// Demographics JSON: {age, sex, region}, all optional.
Demographics demographics_from_json(const nlohmann::json& j);
nlohmann::json to_json(const Demographics& d);

// [{name, weight}] -> symptom facts; weight defaults to 1.
std::vector<FuzzyFact> symptoms_from_json(const nlohmann::json& j);

struct SymptomWeight {
  Symbol symptom;
  double w_text = 0.0;
  double w_retr = 0.0;
  double blended = 0.0;
  double activation = 0.0;
};

struct Diagnosis {
  std::vector<DiagnosisCandidate> ranking;
  std::vector<SymptomWeight> weights;
  std::vector<std::pair<std::string, double>> neighbours;
  std::vector<FuzzyFact> facts;  // facts as given to the solver
  Demographics demographics;
  std::string note;
  std::optional<ExtractionResult> extraction;
};

struct DiagnoseContext {
  const CaseIndex* index = nullptr;
  const Extractor* extractor = nullptr;  // default lexicon extractor when null
  const TermTable* terms = nullptr;      // default term table when null
  const Embedder* embedder = nullptr;
};

Diagnosis diagnose(const CaseInput& input, const KnowledgeBase& kb, const EngineConfig& config,
                   const DiagnoseContext& ctx = {});

// Proof trees larger than `max_proof_nodes` are replaced by {proof_ref, proof_size}.
nlohmann::json to_json(const Diagnosis& d, std::size_t max_proof_nodes = SIZE_MAX);

struct AuditDelta {
  Symbol disease;
  std::optional<double> posterior_t1;
  std::optional<double> posterior_t2;
  double delta = 0.0;  // t2 - t1, absent counts as 0
  std::optional<std::size_t> rank_t1;
  std::optional<std::size_t> rank_t2;
};

struct AuditResult {
  long long t1 = 0;
  long long t2 = 0;
  Diagnosis result_t1;
  Diagnosis result_t2;
  std::vector<AuditDelta> deltas;  // sorted by disease
};

AuditResult counterfactual_audit(const CaseInput& input, const SnapshotStore& store, long long t1,
                                 long long t2, const EngineConfig& config,
                                 const DiagnoseContext& ctx = {});

nlohmann::json to_json(const AuditResult& a);

}  // namespace fdx
