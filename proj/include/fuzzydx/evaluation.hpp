#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "fuzzydx/ranking.hpp"

namespace fdx {

struct EvalCase {
  std::string id;
  std::optional<std::string> text;  // exactly one of text / symptoms
  std::vector<FuzzyFact> symptoms;
  std::vector<Symbol> labels;
  Demographics demographics;
};

EvalCase eval_case_from_json(const nlohmann::json& j);
nlohmann::json to_json(const EvalCase& c);

// JSONL. Throws ParseError with the 1-based line, EmptyDataset when no case.
std::vector<EvalCase> parse_dataset(std::string_view jsonl);
std::vector<EvalCase> load_dataset(const std::string& path);
std::string dataset_to_jsonl(const std::vector<EvalCase>& cases);

struct TopK {
  std::size_t k = 0;
  double accuracy = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

struct CaseHits {
  std::string id;
  std::vector<std::size_t> hits;  // |T_i ∩ G_i| per k, same order as MetricsReport::at
};

struct MetricsReport {
  std::vector<TopK> at;
  std::size_t cases = 0;
  std::vector<CaseHits> per_case;

  const TopK& for_k(std::size_t k) const;  // throws Error if k was not evaluated
};

inline const std::vector<std::size_t> kDefaultKs{1, 3, 5};

// predictions[i] is the ranked disease list for cases[i]. Lists shorter than k
// are scored on what they hold; k stays the precision divisor.
MetricsReport topk_metrics(const std::vector<std::vector<Symbol>>& predictions,
                           const std::vector<EvalCase>& cases,
                           const std::vector<std::size_t>& ks = kDefaultKs);

nlohmann::json to_json(const MetricsReport& r);
std::string format_report(const MetricsReport& r);

enum class AblationMode { SymbolicOnly, SymProb, SymFuzzy, FullHybrid, SimpleBaseline };

std::string_view to_string(AblationMode m);
AblationMode ablation_from_string(std::string_view s);
const std::vector<AblationMode>& all_modes();

// Engine switches for a mode, on top of `base`.
EngineConfig config_for(AblationMode mode, EngineConfig base = {});

struct CaseTrace {
  std::string id;
  std::vector<Symbol> labels;
  std::vector<Symbol> ranking;
  std::size_t accepted = 0;  // verifier counts, text cases only
  std::size_t rejected = 0;
};

struct BenchmarkResult {
  AblationMode mode = AblationMode::FullHybrid;
  MetricsReport report;
  std::vector<CaseTrace> traces;
  // Share of extracted triples the verifier rejected. A deterministic proxy,
  // not an error rate judged by a model.
  double verifier_rejection_rate = 0.0;
};

BenchmarkResult run_benchmark(const KnowledgeBase& kb, const std::vector<EvalCase>& cases,
                              AblationMode mode, const EngineConfig& base = {},
                              const DiagnoseContext& ctx = {},
                              const std::vector<std::size_t>& ks = kDefaultKs);

nlohmann::json to_json(const BenchmarkResult& r);

struct SyntheticBenchmark {
  KnowledgeBase kb;
  std::vector<EvalCase> cases;
  CaseIndex index;
};

// Hidden rule set over overlapping symptom pairs, twin diseases split by sex
// priors, hedged distractor mentions and negated noise. Deterministic per seed.
SyntheticBenchmark make_synthetic_benchmark(std::uint64_t seed = 42, std::size_t n_cases = 200,
                                            std::size_t n_index = 200);

}  // namespace fdx
