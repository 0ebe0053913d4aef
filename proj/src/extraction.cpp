#include "fuzzydx/extraction.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <map>
#include <set>
#include <sstream>

#include <httplib.h>

#include "fuzzydx/error.hpp"

namespace fdx {

namespace {

bool is_word_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '\''; }

char lower(char c) { return static_cast<char>(std::tolower(static_cast<unsigned char>(c))); }

std::string lowercase(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = lower(c);
  return out;
}

// Lower-case alphanumerics only, for loose containment checks.
std::string squash(std::string_view s) {
  std::string out;
  for (char c : s) {
    if (std::isalnum(static_cast<unsigned char>(c))) out.push_back(lower(c));
  }
  return out;
}

// Lower-cases and maps runs of other characters to '_'.
std::string symbol_text(std::string_view s) {
  std::string out;
  bool pending = false;
  for (char c : s) {
    if (std::isalnum(static_cast<unsigned char>(c))) {
      if (pending && !out.empty()) out.push_back('_');
      pending = false;
      out.push_back(lower(c));
    } else {
      pending = true;
    }
  }
  if (!out.empty() && !std::isalpha(static_cast<unsigned char>(out[0]))) out.insert(0, "v_");
  return out;
}

std::vector<std::string> token_texts(std::string_view s) {
  std::vector<std::string> out;
  for (auto& t : tokenize(s)) out.push_back(std::move(t.text));
  return out;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

const char* kDefaultTerms = R"(# phrase	entity	relation	value
chest pain	chest_pain	severity	pain
chest heaviness	chest_pain	severity	heaviness
chest tightness	chest_pain	severity	tightness
chest pressure	chest_pain	severity	pressure
chest discomfort	chest_pain	severity	discomfort
breathlessness	breathlessness	severity	present
shortness of breath	breathlessness	severity	present
dyspnea	breathlessness	severity	present
dyspnoea	breathlessness	severity	present
nausea	nausea	presence	present
vomiting	vomiting	presence	present
diaphoresis	diaphoresis	presence	present
sweating	diaphoresis	presence	present
palpitations	palpitations	presence	present
syncope	syncope	presence	present
dizziness	dizziness	presence	present
fatigue	fatigue	presence	present
fever	fever	presence	present
cough	cough	presence	present
headache	headache	presence	present
heartburn	heartburn	presence	present
abdominal pain	abdominal_pain	severity	pain
sore throat	sore_throat	presence	present
runny nose	rhinorrhea	presence	present
wheezing	wheezing	presence	present
rash	rash	presence	present
flights of stairs	exertion	trigger	stairs
on exertion	exertion	trigger	exertion
exertional	exertion	trigger	exertion
walking uphill	exertion	trigger	walking
after meals	meals	trigger	meals
after eating	meals	trigger	meals
when lying down	lying_down	trigger	lying_down
emotional stress	stress	trigger	stress
cold weather	cold	trigger	cold
smoking	smoking	risk	history
smoker	smoking	risk	history
hypertension	hypertension	risk	history
diabetes	diabetes	risk	history
hyperlipidemia	hyperlipidemia	risk	history
high cholesterol	hyperlipidemia	risk	history
obesity	obesity	risk	history
parents suffered heart attacks	family_history	risk	parents
family history of heart disease	family_history	risk	reported
non-specific st changes	ecg	finding	nonspecific
nonspecific st changes	ecg	finding	nonspecific
st elevation	ecg	finding	st_elevation
st depression	ecg	finding	st_depression
troponin is normal	troponin	level	normal
troponin normal	troponin	level	normal
troponin is negative	troponin	level	normal
troponin is elevated	troponin	level	elevated
troponin elevated	troponin	level	elevated
elevated troponin	troponin	level	elevated
)";

struct Header {
  std::string_view keyword;
  SegmentKind kind;
};

const Header kHeaders[] = {
    {"history of present illness", SegmentKind::History},
    {"past medical history", SegmentKind::History},
    {"presenting complaint", SegmentKind::ChiefComplaint},
    {"chief complaint", SegmentKind::ChiefComplaint},
    {"family history", SegmentKind::History},
    {"social history", SegmentKind::History},
    {"investigations", SegmentKind::Labs},
    {"lab results", SegmentKind::Labs},
    {"vital signs", SegmentKind::Vitals},
    {"laboratory", SegmentKind::Labs},
    {"history", SegmentKind::History},
    {"vitals", SegmentKind::Vitals},
    {"labs", SegmentKind::Labs},
    {"hpi", SegmentKind::History},
    {"pmh", SegmentKind::History},
    {"cc", SegmentKind::ChiefComplaint},
};

// Header kind if the line (leading blanks skipped) is a section header.
std::optional<SegmentKind> header_kind(std::string_view line) {
  std::size_t i = 0;
  while (i < line.size() && (line[i] == ' ' || line[i] == '\t')) ++i;
  std::string rest = lowercase(line.substr(i));
  auto ends_header = [&](std::size_t at) {
    while (at < rest.size() && (rest[at] == ' ' || rest[at] == '\t' || rest[at] == '\r')) ++at;
    return at == rest.size() || rest[at] == ':';
  };
  for (const auto& h : kHeaders) {
    if (rest.starts_with(h.keyword) && ends_header(h.keyword.size())) return h.kind;
  }
  // Unknown "Word:" header of up to three words.
  std::size_t j = 0, words = 0;
  while (j < rest.size()) {
    std::size_t start = j;
    while (j < rest.size() && std::isalpha(static_cast<unsigned char>(rest[j]))) ++j;
    if (j == start) break;
    ++words;
    if (j < rest.size() && rest[j] == ':') return words <= 3 ? std::optional(SegmentKind::Other)
                                                             : std::nullopt;
    if (j < rest.size() && rest[j] == ' ') {
      ++j;
      continue;
    }
    break;
  }
  return std::nullopt;
}

struct CompiledTerm {
  std::vector<std::string> tokens;
  const TermEntry* entry;
};

struct CompiledHedge {
  std::vector<std::string> tokens;
  std::string term;
  double weight;
};

bool same_sentence_match(const std::vector<Token>& toks, std::size_t i,
                         const std::vector<std::string>& pattern) {
  if (pattern.empty() || i + pattern.size() > toks.size()) return false;
  for (std::size_t k = 0; k < pattern.size(); ++k) {
    if (toks[i + k].text != pattern[k] || toks[i + k].sentence != toks[i].sentence) return false;
  }
  return true;
}

std::optional<double> number_word(std::string_view w) {
  static const std::map<std::string, double, std::less<>> kWords{
      {"a", 1},       {"an", 1},        {"one", 1},       {"two", 2},       {"three", 3},
      {"four", 4},    {"five", 5},      {"six", 6},       {"seven", 7},     {"eight", 8},
      {"nine", 9},    {"ten", 10},      {"eleven", 11},   {"twelve", 12},   {"thirteen", 13},
      {"fourteen", 14}, {"fifteen", 15}, {"sixteen", 16}, {"seventeen", 17}, {"eighteen", 18},
      {"nineteen", 19}, {"twenty", 20}, {"thirty", 30},   {"few", 3},       {"several", 3}};
  auto it = kWords.find(w);
  if (it != kWords.end()) return it->second;
  double v = 0;
  auto [p, ec] = std::from_chars(w.data(), w.data() + w.size(), v);
  if (ec == std::errc() && p == w.data() + w.size()) return v;
  return std::nullopt;
}

std::optional<double> unit_days(std::string_view w) {
  if (w == "day" || w == "days") return 1;
  if (w == "week" || w == "weeks") return 7;
  if (w == "month" || w == "months") return 30;
  if (w == "year" || w == "years") return 365;
  return std::nullopt;
}

bool is_negation_cue(const std::vector<Token>& toks, std::size_t j, std::size_t limit) {
  static const std::set<std::string, std::less<>> kCues{"denies", "denied", "deny", "denying",
                                                        "no",     "not",    "without"};
  if (kCues.count(toks[j].text)) return true;
  return toks[j].text == "negative" && j + 1 < limit && toks[j + 1].text == "for";
}

struct Mapped {
  Symbol predicate;
  Symbol arg;
};

std::optional<Mapped> map_relation(const Triple& t) {
  const std::string& rel = t.relation.str();
  auto entity_value = [&] {
    if (const auto* s = std::get_if<Symbol>(&t.value)) return Symbol(t.entity.str() + "_" + s->str());
    return t.entity;
  };
  if (rel == "severity" || rel == "presence" || rel == "quality" || rel == "symptom") {
    return Mapped{Symbol("symptom"), t.entity};
  }
  if (rel == "level" || rel == "result") return Mapped{Symbol("lab"), entity_value()};
  if (rel == "finding") return Mapped{Symbol("test"), entity_value()};
  if (rel == "risk" || rel == "risk_factor" || rel == "history") return Mapped{Symbol("risk"), t.entity};
  if (rel == "trigger" || rel == "aggravated_by") return Mapped{Symbol("trigger"), t.entity};
  return std::nullopt;
}

}  // namespace

std::string_view to_string(SegmentKind k) {
  switch (k) {
    case SegmentKind::ChiefComplaint: return "chief_complaint";
    case SegmentKind::History: return "history";
    case SegmentKind::Vitals: return "vitals";
    case SegmentKind::Labs: return "labs";
    case SegmentKind::Other: return "other";
  }
  return "other";
}

std::string_view to_string(RejectReason r) {
  switch (r) {
    case RejectReason::Hallucination: return "hallucination";
    case RejectReason::Negated: return "negated";
    case RejectReason::Contradiction: return "contradiction";
    case RejectReason::UnsupportedValue: return "unsupported_value";
  }
  return "hallucination";
}

std::string value_to_string(const TripleValue& v) {
  if (const auto* s = std::get_if<Symbol>(&v)) return s->str();
  return format_weight(std::get<double>(v));
}

std::vector<Token> tokenize(std::string_view text, std::size_t offset) {
  std::vector<Token> out;
  std::size_t sentence = 0;
  std::size_t i = 0;
  auto digit = [&](std::size_t k) {
    return k < text.size() && std::isdigit(static_cast<unsigned char>(text[k]));
  };
  while (i < text.size()) {
    char c = text[i];
    if (c == ';' || c == '\n' || (c == '.' && !(i > 0 && digit(i - 1) && digit(i + 1)))) {
      ++sentence;
      ++i;
      continue;
    }
    if (!is_word_char(c)) {
      ++i;
      continue;
    }
    std::size_t start = i;
    while (i < text.size()) {
      if (is_word_char(text[i])) {
        ++i;
      } else if ((text[i] == '-' || (text[i] == '.' && digit(i - 1) && digit(i + 1))) &&
                 i + 1 < text.size() && is_word_char(text[i + 1])) {
        ++i;
      } else {
        break;
      }
    }
    out.push_back({lowercase(text.substr(start, i - start)), {offset + start, offset + i}, sentence});
  }
  return out;
}

std::vector<Segment> segment_note(std::string_view text) {
  struct Cut {
    std::size_t at;
    SegmentKind kind;
  };
  std::vector<Cut> cuts;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    std::size_t nl = text.find('\n', pos);
    std::size_t end = nl == std::string_view::npos ? text.size() : nl;
    if (auto k = header_kind(text.substr(pos, end - pos))) cuts.push_back({pos, *k});
    if (nl == std::string_view::npos) break;
    pos = nl + 1;
  }
  std::vector<Segment> out;
  std::size_t first = cuts.empty() ? text.size() : cuts.front().at;
  if (!cuts.empty() && trim(text.substr(0, first)).empty()) {
    cuts.front().at = 0;
    first = 0;
  }
  if (first > 0 || cuts.empty()) {
    out.push_back({SegmentKind::ChiefComplaint, std::string(text.substr(0, first)), {0, first}});
  }
  for (std::size_t i = 0; i < cuts.size(); ++i) {
    std::size_t b = cuts[i].at;
    std::size_t e = i + 1 < cuts.size() ? cuts[i + 1].at : text.size();
    out.push_back({cuts[i].kind, std::string(text.substr(b, e - b)), {b, e}});
  }
  return out;
}

TermTable parse_term_table(std::string_view tsv) {
  TermTable out;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < tsv.size()) {
    std::size_t nl = tsv.find('\n', pos);
    std::string_view line = tsv.substr(pos, nl == std::string_view::npos ? tsv.npos : nl - pos);
    pos = nl == std::string_view::npos ? tsv.size() : nl + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (trim(line).empty() || trim(line).front() == '#') continue;
    std::vector<std::string_view> cols;
    std::size_t start = 0;
    while (true) {
      std::size_t tab = line.find('\t', start);
      cols.push_back(trim(line.substr(start, tab == line.npos ? line.npos : tab - start)));
      if (tab == line.npos) break;
      start = tab + 1;
    }
    if (cols.size() != 4) throw ParseError(line_no, "expected 4 tab-separated columns");
    for (std::size_t c = 1; c < 4; ++c) {
      if (!Symbol::is_valid(cols[c])) {
        throw ParseError(line_no, "invalid atom '" + std::string(cols[c]) + "'");
      }
    }
    auto toks = token_texts(cols[0]);
    if (toks.empty()) throw ParseError(line_no, "empty phrase");
    std::string phrase;
    for (const auto& t : toks) phrase += (phrase.empty() ? "" : " ") + t;
    out.push_back({phrase, Symbol(cols[1]), Symbol(cols[2]), Symbol(cols[3])});
  }
  return out;
}

std::string print_term_table(const TermTable& table) {
  std::string out;
  for (const auto& e : table) {
    out += e.phrase + "\t" + e.entity.str() + "\t" + e.relation.str() + "\t" + e.value.str() + "\n";
  }
  return out;
}

const TermTable& default_term_table() {
  static const TermTable table = parse_term_table(kDefaultTerms);
  return table;
}

std::vector<Triple> extract_triples(const std::vector<Segment>& segments, const Lexicon& lexicon,
                                    const TermTable& table) {
  for (const auto& [term, w] : lexicon) {
    if (!(w >= 0.0 && w <= 1.0)) throw WeightOutOfRange("hedge '" + term + "' out of [0,1]");
  }
  std::vector<CompiledTerm> terms;
  for (const auto& e : table) terms.push_back({token_texts(e.phrase), &e});
  std::vector<CompiledHedge> hedges;
  for (const auto& [term, w] : lexicon) {
    auto toks = token_texts(term);
    if (!toks.empty()) hedges.push_back({std::move(toks), term, w});
  }

  std::vector<Triple> out;
  for (const auto& seg : segments) {
    auto toks = tokenize(seg.text, seg.span.begin);
    std::size_t i = 0;
    std::size_t floor = 0;  // hedges never reach back into the previous match
    while (i < toks.size()) {
      const CompiledTerm* best = nullptr;
      for (const auto& t : terms) {
        if ((!best || t.tokens.size() > best->tokens.size()) && same_sentence_match(toks, i, t.tokens)) {
          best = &t;
        }
      }
      if (!best) {
        ++i;
        continue;
      }
      std::size_t n = best->tokens.size();
      Triple tr{best->entry->entity, best->entry->relation, best->entry->value, 1.0,
                {toks[i].span.begin, toks[i + n - 1].span.end}};

      // Nearest hedge whose last token falls in the window before the match.
      const CompiledHedge* hedge = nullptr;
      for (std::size_t back = 1; back <= 3 && back <= i - floor && !hedge; ++back) {
        std::size_t end = i - back;
        if (toks[end].sentence != toks[i].sentence) break;
        for (const auto& h : hedges) {
          if (h.tokens.size() > end + 1) continue;
          std::size_t start = end + 1 - h.tokens.size();
          if (start + 3 < i || start < floor) continue;
          if (same_sentence_match(toks, start, h.tokens) &&
              (!hedge || h.tokens.size() > hedge->tokens.size())) {
            hedge = &h;
          }
        }
      }
      if (hedge) {
        tr.hedge_weight = hedge->weight;
        std::string v = symbol_text(hedge->term);
        if (tr.relation.str() == "severity" && Symbol::is_valid(v)) tr.value = Symbol(v);
      }
      out.push_back(std::move(tr));
      i += n;
      floor = i;
    }
  }
  return out;
}

std::vector<Triple> LexiconExtractor::extract(std::string_view note, const Lexicon& lexicon) const {
  return extract_triples(segment_note(note), lexicon, table_);
}

nlohmann::json to_json(const Triple& t) {
  nlohmann::json value;
  if (const auto* s = std::get_if<Symbol>(&t.value)) {
    value = s->str();
  } else {
    value = std::get<double>(t.value);
  }
  return {{"entity", t.entity.str()},
          {"relation", t.relation.str()},
          {"value", value},
          {"hedge_weight", t.hedge_weight},
          {"span", {t.span.begin, t.span.end}}};
}

Triple triple_from_json(const nlohmann::json& j) {
  auto atom = [](const std::string& s) {
    std::string t = symbol_text(s);
    if (t.empty()) throw Error("empty atom in triple");
    return Symbol(t);
  };
  Triple t;
  t.entity = atom(j.at("entity").get<std::string>());
  t.relation = atom(j.at("relation").get<std::string>());
  const auto& v = j.at("value");
  if (v.is_number()) {
    t.value = v.get<double>();
  } else {
    t.value = atom(v.get<std::string>());
  }
  t.hedge_weight = j.value("hedge_weight", 1.0);
  if (!(t.hedge_weight >= 0.0 && t.hedge_weight <= 1.0)) {
    throw WeightOutOfRange("hedge_weight out of [0,1]");
  }
  const auto& span = j.at("span");
  t.span = {span.at(0).get<std::size_t>(), span.at(1).get<std::size_t>()};
  return t;
}

std::vector<Triple> RemoteExtractor::extract(std::string_view note, const Lexicon&) const {
  std::lock_guard lock(mu_);
  const std::string& url = config_.endpoint;
  auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) throw Error("remote extractor: bad endpoint '" + url + "'");
  auto path_begin = url.find('/', scheme_end + 3);
  std::string base = url.substr(0, path_begin);
  std::string path = path_begin == std::string::npos ? "/" : url.substr(path_begin);

  httplib::Client cli(base);
  auto secs = std::chrono::duration_cast<std::chrono::seconds>(config_.timeout);
  auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(config_.timeout - secs);
  cli.set_connection_timeout(secs.count(), usecs.count());
  cli.set_read_timeout(secs.count(), usecs.count());
  cli.set_write_timeout(secs.count(), usecs.count());
  httplib::Headers headers;
  if (!config_.auth_token.empty()) headers.emplace("Authorization", "Bearer " + config_.auth_token);

  nlohmann::json req{{"note", std::string(note)}};
  auto res = cli.Post(path, headers, req.dump(), "application/json");
  if (!res) throw Error("remote extractor: " + httplib::to_string(res.error()));
  if (res->status != 200) {
    throw Error("remote extractor: HTTP " + std::to_string(res->status));
  }
  std::vector<Triple> out;
  try {
    auto body = nlohmann::json::parse(res->body);
    for (const auto& t : body.at("triples")) out.push_back(triple_from_json(t));
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("remote extractor: bad response: ") + e.what());
  }
  return out;
}

std::vector<Duration> find_durations(std::string_view text, std::size_t offset) {
  auto toks = tokenize(text, offset);
  std::vector<Duration> out;
  auto tok = [&](std::size_t k) -> std::string_view {
    return k < toks.size() ? std::string_view(toks[k].text) : std::string_view();
  };
  auto same = [&](std::size_t a, std::size_t b) {
    return b < toks.size() && toks[a].sentence == toks[b].sentence;
  };
  for (std::size_t i = 0; i < toks.size(); ++i) {
    // for|over [the] [past|last] N unit
    if (tok(i) == "for" || tok(i) == "over") {
      std::size_t k = i + 1;
      if (tok(k) == "the") ++k;
      if (tok(k) == "past" || tok(k) == "last") ++k;
      auto n = number_word(tok(k));
      auto u = unit_days(tok(k + 1));
      if (n && u && same(i, k + 1)) {
        out.push_back({{toks[i].span.begin, toks[k + 1].span.end}, *n * *u});
        i = k + 1;
        continue;
      }
    }
    if (tok(i) == "since" && same(i, i + 1)) {
      if (tok(i + 1) == "yesterday") {
        out.push_back({{toks[i].span.begin, toks[i + 1].span.end}, 1});
        ++i;
        continue;
      }
      if (tok(i + 1) == "last" && same(i, i + 2)) {
        if (auto u = unit_days(tok(i + 2))) {
          out.push_back({{toks[i].span.begin, toks[i + 2].span.end}, *u});
          i += 2;
          continue;
        }
      }
    }
    // N unit ago
    if (auto n = number_word(tok(i))) {
      auto u = unit_days(tok(i + 1));
      if (u && tok(i + 2) == "ago" && same(i, i + 2)) {
        out.push_back({{toks[i].span.begin, toks[i + 2].span.end}, *n * *u});
        i += 2;
      }
    }
  }
  return out;
}

std::vector<TemporalTag> normalize_temporal(const Segment& segment,
                                            const std::vector<Triple>& triples) {
  std::vector<TemporalTag> out;
  for (const auto& d : find_durations(segment.text, segment.span.begin)) {
    const Triple* nearest = nullptr;
    for (const auto& t : triples) {
      if (t.span.begin < segment.span.begin || t.span.end > segment.span.end) continue;
      if (t.span.end > d.phrase.begin) continue;
      if (!nearest || t.span.end > nearest->span.end) nearest = &t;
    }
    if (!nearest) continue;
    out.push_back({nearest->span, d.days, d.days < kChronicDays ? Temporal::Acute : Temporal::Chronic});
  }
  return out;
}

Verification verify_facts(const std::vector<Triple>& triples, std::string_view note,
                          const TermTable* table) {
  auto toks = tokenize(note);
  Verification v;
  for (const auto& t : triples) {
    if (t.span.begin >= t.span.end || t.span.end > note.size()) {
      v.rejected.push_back({t, RejectReason::Hallucination});
      continue;
    }
    std::string span_text = squash(note.substr(t.span.begin, t.span.size()));
    auto table_supports = [&](bool with_value) {
      if (!table) return false;
      for (const auto& e : *table) {
        if (e.entity != t.entity) continue;
        if (with_value) {
          const auto* s = std::get_if<Symbol>(&t.value);
          if (!s || e.relation != t.relation || e.value != *s) continue;
        }
        if (span_text.find(squash(e.phrase)) != std::string::npos) return true;
      }
      return false;
    };
    if (span_text.find(squash(t.entity.str())) == std::string::npos && !table_supports(false)) {
      v.rejected.push_back({t, RejectReason::Hallucination});
      continue;
    }

    // Tokens of the sentence holding the mention.
    std::size_t first = toks.size();
    for (std::size_t i = 0; i < toks.size(); ++i) {
      if (toks[i].span.end > t.span.begin) {
        first = i;
        break;
      }
    }
    bool negated = false;
    if (first < toks.size()) {
      std::size_t lo = first >= 5 ? first - 5 : 0;
      for (std::size_t j = lo; j < first; ++j) {
        if (toks[j].sentence == toks[first].sentence && is_negation_cue(toks, j, first + 1)) {
          negated = true;
        }
      }
    }
    if (negated) {
      v.rejected.push_back({t, RejectReason::Negated});
      continue;
    }

    bool value_ok = true;
    if (first < toks.size()) {
      std::string sentence;
      for (const auto& tok : toks) {
        if (tok.sentence == toks[first].sentence) sentence += squash(tok.text);
      }
      if (const auto* s = std::get_if<Symbol>(&t.value)) {
        value_ok = s->str() == "present" || sentence.find(squash(s->str())) != std::string::npos ||
                   table_supports(true);
      } else {
        value_ok = sentence.find(squash(format_weight(std::get<double>(t.value)))) != std::string::npos;
      }
    }
    if (!value_ok) {
      v.rejected.push_back({t, RejectReason::UnsupportedValue});
      continue;
    }
    v.accepted.push_back(t);
  }

  std::set<Symbol> negated_entities;
  for (const auto& r : v.rejected) {
    if (r.reason == RejectReason::Negated) negated_entities.insert(r.triple.entity);
  }
  std::vector<Triple> kept;
  for (auto& t : v.accepted) {
    if (negated_entities.count(t.entity)) {
      v.rejected.push_back({std::move(t), RejectReason::Contradiction});
    } else {
      kept.push_back(std::move(t));
    }
  }
  v.accepted = std::move(kept);
  return v;
}

FactConversion to_fuzzy_facts(const std::vector<Triple>& accepted,
                              const std::vector<TemporalTag>& tags) {
  FactConversion out;
  std::map<std::string, std::size_t> index;
  std::vector<double> longest;
  for (const auto& t : accepted) {
    auto m = map_relation(t);
    if (!m) {
      out.unmappable.push_back(t);
      continue;
    }
    double days = -1;
    for (const auto& tag : tags) {
      if (tag.entity_span == t.span) days = std::max(days, tag.duration_days);
    }
    Literal lit = Literal::make(m->predicate.view(), {m->arg.view()});
    std::string key = lit.to_string();
    auto it = index.find(key);
    if (it == index.end()) {
      index.emplace(key, out.facts.size());
      out.facts.push_back({lit, t.hedge_weight, Temporal::Untagged, t.span});
      longest.push_back(days);
      continue;
    }
    FuzzyFact& f = out.facts[it->second];
    if (t.hedge_weight > f.weight) {
      f.weight = t.hedge_weight;
      f.provenance = t.span;
    }
    longest[it->second] = std::max(longest[it->second], days);
  }
  for (std::size_t i = 0; i < out.facts.size(); ++i) {
    if (longest[i] >= 0) {
      out.facts[i].temporal = longest[i] < kChronicDays ? Temporal::Acute : Temporal::Chronic;
    }
  }
  return out;
}

Demographics extract_demographics(std::string_view note) {
  Demographics d;
  auto toks = tokenize(note);
  for (std::size_t i = 0; i < toks.size(); ++i) {
    const std::string& w = toks[i].text;
    if (!d.age) {
      // "58-year-old", or "58 year old"
      auto dash = w.find("-year");
      std::string_view num = dash != std::string::npos ? std::string_view(w).substr(0, dash) : w;
      bool tail = dash != std::string::npos ||
                  (i + 1 < toks.size() && toks[i + 1].text.starts_with("year"));
      int age = 0;
      auto [p, ec] = std::from_chars(num.data(), num.data() + num.size(), age);
      if (tail && ec == std::errc() && p == num.data() + num.size() && age >= 0 && age < 130) {
        d.age = age;
      }
    }
    if (!d.sex) {
      if (w == "man" || w == "male" || w == "gentleman" || w == "boy") d.sex = Symbol("male");
      if (w == "woman" || w == "female" || w == "lady" || w == "girl") d.sex = Symbol("female");
    }
  }
  return d;
}

ExtractionResult run_extraction(std::string_view note, const Extractor& extractor,
                                const Lexicon& lexicon, const TermTable& table) {
  if (trim(note).empty()) throw EmptyCase("note is empty");
  ExtractionResult r;
  r.segments = segment_note(note);
  r.triples = extractor.extract(note, lexicon);
  for (const auto& seg : r.segments) {
    auto tags = normalize_temporal(seg, r.triples);
    r.temporal.insert(r.temporal.end(), tags.begin(), tags.end());
  }
  r.verification = verify_facts(r.triples, note, &table);
  auto conv = to_fuzzy_facts(r.verification.accepted, r.temporal);
  r.facts = std::move(conv.facts);
  r.unmappable = std::move(conv.unmappable);
  r.demographics = extract_demographics(note);
  return r;
}

nlohmann::json to_json(const ExtractionResult& r) {
  using nlohmann::json;
  json segs = json::array();
  for (const auto& s : r.segments) {
    segs.push_back({{"kind", to_string(s.kind)}, {"span", {s.span.begin, s.span.end}}});
  }
  json accepted = json::array();
  for (const auto& t : r.verification.accepted) accepted.push_back(to_json(t));
  json rejected = json::array();
  for (const auto& rj : r.verification.rejected) {
    json t = to_json(rj.triple);
    t["reason"] = to_string(rj.reason);
    rejected.push_back(std::move(t));
  }
  json facts = json::array();
  for (const auto& f : r.facts) {
    json jf{{"literal", f.literal.to_string()},
            {"weight", f.weight},
            {"temporal", to_string(f.temporal)},
            {"clause", print_fact(f)}};
    if (f.provenance) jf["span"] = {f.provenance->begin, f.provenance->end};
    facts.push_back(std::move(jf));
  }
  json unmappable = json::array();
  for (const auto& t : r.unmappable) unmappable.push_back(to_json(t));
  json demo = json::object();
  if (r.demographics.age) demo["age"] = *r.demographics.age;
  if (r.demographics.sex) demo["sex"] = r.demographics.sex->str();
  if (r.demographics.region) demo["region"] = r.demographics.region->str();
  return {{"segments", segs},     {"accepted", accepted},     {"rejected", rejected},
          {"facts", facts},       {"unmappable", unmappable}, {"demographics", demo}};
}

}  // namespace fdx
