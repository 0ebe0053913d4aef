#pragma once

#include <chrono>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <json.hpp>

#include "fuzzydx/dsl.hpp"
#include "fuzzydx/program.hpp"

namespace fdx {

enum class SegmentKind { ChiefComplaint, History, Vitals, Labs, Other };

std::string_view to_string(SegmentKind k);

struct Segment {
  SegmentKind kind = SegmentKind::ChiefComplaint;
  std::string text;
  Span span;
};

// Splits on header lines ("History:", "vitals", ...). Text before the first
// header is the chief complaint. Segments cover the note in order.
std::vector<Segment> segment_note(std::string_view text);

using TripleValue = std::variant<Symbol, double>;

std::string value_to_string(const TripleValue& v);

struct Triple {
  Symbol entity;
  Symbol relation;
  TripleValue value;
  double hedge_weight = 1.0;
  Span span;  // entity mention in the note

  friend bool operator==(const Triple&, const Triple&) = default;
};

nlohmann::json to_json(const Triple& t);
Triple triple_from_json(const nlohmann::json& j);

struct TermEntry {
  std::string phrase;  // lower case, single-spaced
  Symbol entity;
  Symbol relation;
  Symbol value;
};

using TermTable = std::vector<TermEntry>;

// TSV `phrase<TAB>entity<TAB>relation<TAB>value`; `#` comments and blank lines skipped.
TermTable parse_term_table(std::string_view tsv);
std::string print_term_table(const TermTable& table);
const TermTable& default_term_table();

// A word token: maximal run of letters, digits, apostrophes and inner hyphens.
struct Token {
  std::string text;  // lower case
  Span span;
  std::size_t sentence = 0;
};

// Sentences end at '.', ';' or newline. A '.' between digits does not end one.
std::vector<Token> tokenize(std::string_view text, std::size_t offset = 0);

// Dictionary extractor over given segments. Longest phrase match wins; a hedge
// term ending within the three tokens before a match sets its weight.
std::vector<Triple> extract_triples(const std::vector<Segment>& segments, const Lexicon& lexicon,
                                    const TermTable& table = default_term_table());

class Extractor {
 public:
  virtual ~Extractor() = default;
  virtual std::vector<Triple> extract(std::string_view note, const Lexicon& lexicon) const = 0;
};

class LexiconExtractor : public Extractor {
 public:
  explicit LexiconExtractor(TermTable table = default_term_table()) : table_(std::move(table)) {}
  std::vector<Triple> extract(std::string_view note, const Lexicon& lexicon) const override;
  const TermTable& table() const { return table_; }

 private:
  TermTable table_;
};

struct RemoteExtractorConfig {
  std::string endpoint;  // e.g. http://host:port/extract
  std::string auth_token;
  std::chrono::milliseconds timeout{10000};
};

// POSTs {note} and expects {triples:[...]}. Requests are serialized.
class RemoteExtractor : public Extractor {
 public:
  explicit RemoteExtractor(RemoteExtractorConfig config) : config_(std::move(config)) {}
  std::vector<Triple> extract(std::string_view note, const Lexicon& lexicon) const override;

 private:
  RemoteExtractorConfig config_;
  mutable std::mutex mu_;
};

struct TemporalTag {
  Span entity_span;
  double duration_days = 0;
  Temporal tag = Temporal::Untagged;
};

inline constexpr double kChronicDays = 14.0;

struct Duration {
  Span phrase;
  double days = 0;
};

// "for the past N days", "N weeks ago", "since yesterday" and similar.
std::vector<Duration> find_durations(std::string_view text, std::size_t offset = 0);

// Attaches each duration in the segment to the nearest preceding triple.
std::vector<TemporalTag> normalize_temporal(const Segment& segment,
                                            const std::vector<Triple>& triples);

enum class RejectReason { Hallucination, Negated, Contradiction, UnsupportedValue };

std::string_view to_string(RejectReason r);

struct Rejection {
  Triple triple;
  RejectReason reason;
};

struct Verification {
  std::vector<Triple> accepted;
  std::vector<Rejection> rejected;
};

// Checks each triple against the note. The term table, when given, also
// counts as support for an entity or value.
Verification verify_facts(const std::vector<Triple>& triples, std::string_view note,
                          const TermTable* table = &default_term_table());

struct FactConversion {
  std::vector<FuzzyFact> facts;
  std::vector<Triple> unmappable;
};

FactConversion to_fuzzy_facts(const std::vector<Triple>& accepted,
                              const std::vector<TemporalTag>& tags = {});

// "58-year-old man" style cues.
Demographics extract_demographics(std::string_view note);

struct ExtractionResult {
  std::vector<Segment> segments;
  std::vector<Triple> triples;
  std::vector<TemporalTag> temporal;
  Verification verification;
  std::vector<FuzzyFact> facts;
  std::vector<Triple> unmappable;
  Demographics demographics;
};

ExtractionResult run_extraction(std::string_view note, const Extractor& extractor,
                                const Lexicon& lexicon,
                                const TermTable& table = default_term_table());

nlohmann::json to_json(const ExtractionResult& r);

}  // namespace fdx
