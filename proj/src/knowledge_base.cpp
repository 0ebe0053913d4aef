#include "fuzzydx/knowledge_base.hpp"

#include <algorithm>
#include <chrono>
#include <ctime>
#include <regex>

#include "fuzzydx/digest.hpp"
#include "fuzzydx/error.hpp"

namespace fdx {

using nlohmann::json;

namespace {

bool prior_less(const PriorEntry& a, const PriorEntry& b) {
  auto key = [](const PriorEntry& p) {
    return std::make_tuple(p.disease.str(), p.age_band.to_string(), p.sex.to_string(),
                           p.region.to_string());
  };
  return key(a) < key(b);
}

std::string now_iso8601() {
  auto now = std::chrono::system_clock::now();
  std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void check_unit(double w, bool open_low, const std::string& what) {
  bool ok = (open_low ? w > 0.0 : w >= 0.0) && w <= 1.0;
  if (!ok) {
    throw WeightOutOfRange(what + " " + format_weight(w) + " outside " +
                           (open_low ? "(0,1]" : "[0,1]"));
  }
}

// Same rule up to edge weights.
bool same_shape(const Rule& a, const Rule& b) {
  if (a.head != b.head || a.provenance != b.provenance || a.created_at != b.created_at ||
      a.body.size() != b.body.size()) {
    return false;
  }
  for (std::size_t i = 0; i < a.body.size(); ++i) {
    if (a.body[i].literal != b.body[i].literal) return false;
  }
  return true;
}

json rule_to_json(const Rule& r) {
  return {{"id", r.id},
          {"text", print_rule(r)},
          {"provenance", std::string(to_string(r.provenance))},
          {"created_at", r.created_at}};
}

Rule rule_from_json(const json& j) {
  Rule r = parse_rule(j.at("text").get<std::string>());
  r.provenance = provenance_from_string(j.value("provenance", std::string("curated")));
  r.created_at = j.value("created_at", 0LL);
  if (j.contains("id") && j.at("id").get<std::string>() != r.id) {
    throw Error("rule id " + j.at("id").get<std::string>() + " does not match its text");
  }
  return r;
}

PriorEntry parse_prior_clause(const std::string& text) {
  std::string clause = text;
  if (clause.empty() || clause.back() != '.') clause += '.';
  Program p = parse_program(clause);
  if (p.priors.size() != 1 || !p.rules.empty() || !p.facts.empty()) {
    throw Error("expected a single prior(...) clause, got '" + text + "'");
  }
  return p.priors.front();
}

json opt(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

std::optional<double> opt_from(const json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return j.at(key).get<double>();
}

}  // namespace

KnowledgeBase KnowledgeBase::from_program(const Program& program, Lexicon lexicon) {
  KnowledgeBase kb;
  kb.rules = program.rules;
  kb.priors = program.priors;
  kb.lexicon = std::move(lexicon);
  kb.normalize();
  return kb;
}

void KnowledgeBase::normalize() {
  std::sort(rules.begin(), rules.end(),
            [](const Rule& a, const Rule& b) { return a.id < b.id; });
  std::sort(priors.begin(), priors.end(), prior_less);
}

const Rule* KnowledgeBase::find_rule(std::string_view id) const {
  for (const auto& r : rules) {
    if (r.id == id) return &r;
  }
  return nullptr;
}

std::set<Symbol> KnowledgeBase::diseases() const {
  std::set<Symbol> out;
  for (const auto& r : rules) out.insert(r.disease());
  return out;
}

std::string KnowledgeBase::kb_text() const {
  Program p;
  p.rules = rules;
  p.priors = priors;
  return print_program(p);
}

std::string KnowledgeBase::canonical_text() const {
  std::string out = kb_text();
  out += "%% rule-meta\n";
  for (const auto& r : rules) {
    out += "% " + r.id + " " + std::string(to_string(r.provenance)) + " " +
           std::to_string(r.created_at) + "\n";
  }
  out += "%% lexicon\n";
  out += print_lexicon(lexicon);
  return out;
}

std::string KnowledgeBase::content_hash() const { return sha256_hex(canonical_text()); }

std::string_view to_string(EditAuthor a) {
  return a == EditAuthor::Clinician ? "clinician" : "learner";
}

void verify_consistency(const KnowledgeBase& kb, const ConsistencyConfig& config) {
  std::set<std::string> ids;
  for (const auto& r : kb.rules) {
    if (r.head.predicate.str() != "diagnosis" || r.head.args.size() != 1 ||
        r.head.args[0].is_wildcard() || r.head.negated()) {
      throw ConsistencyViolation("rule " + r.id + " head must be diagnosis(<atom>)");
    }
    if (r.body.empty()) throw ConsistencyViolation("rule " + r.id + " has an empty body");
    if (r.id != compute_rule_id(r.head, r.body)) {
      throw ConsistencyViolation("rule id " + r.id + " does not match its content");
    }
    if (!ids.insert(r.id).second) {
      throw ConsistencyViolation("duplicate rule " + print_rule(r));
    }
    std::set<std::string> lits;
    for (const auto& b : r.body) {
      if (!(b.edge_weight >= 0.0 && b.edge_weight <= 1.0)) {
        throw ConsistencyViolation("rule " + r.id + " edge weight " +
                                   format_weight(b.edge_weight) + " outside [0,1]");
      }
      if (!config.body_predicates.count(b.literal.predicate.str())) {
        throw ConsistencyViolation("rule " + r.id + " uses unknown predicate '" +
                                   b.literal.predicate.str() + "'");
      }
      if (!lits.insert(b.literal.to_string()).second) {
        throw ConsistencyViolation("rule " + r.id + " repeats " + b.literal.to_string());
      }
    }
  }
  for (std::size_t i = 0; i < kb.priors.size(); ++i) {
    const auto& p = kb.priors[i];
    if (!(p.prevalence > 0.0 && p.prevalence <= 1.0)) {
      throw ConsistencyViolation("prior " + p.to_string() + " prevalence outside (0,1]");
    }
    for (std::size_t j = i + 1; j < kb.priors.size(); ++j) {
      if (p.same_stratum(kb.priors[j])) {
        throw ConsistencyViolation("duplicate prior stratum " + p.to_string());
      }
    }
  }
  for (const auto& [term, w] : kb.lexicon) {
    if (!(w >= 0.0 && w <= 1.0)) {
      throw ConsistencyViolation("lexicon weight for '" + term + "' outside [0,1]");
    }
  }
}

KnowledgeBase apply_edits(const KnowledgeBase& kb, const std::vector<EditRequest>& edits,
                          long long new_version) {
  KnowledgeBase next = kb;
  for (const auto& edit : edits) {
    std::visit(
        [&](const auto& e) {
          using E = std::decay_t<decltype(e)>;
          if constexpr (std::is_same_v<E, AddRule>) {
            Rule r = e.rule;
            if (e.weight) {
              check_unit(*e.weight, true, "injected rule weight");
              for (auto& b : r.body) b.edge_weight = *e.weight;
            }
            if (r.body.empty()) throw ConsistencyViolation("added rule has an empty body");
            for (const auto& b : r.body) check_unit(b.edge_weight, false, "edge weight");
            if (edit.author == EditAuthor::Clinician) r.provenance = Provenance::Clinician;
            r.created_at = new_version;
            refresh_rule_id(r);
            if (next.find_rule(r.id)) {
              throw ConsistencyViolation("rule duplicates existing " + r.id + ": " +
                                         print_rule(r));
            }
            next.rules.push_back(std::move(r));
          } else if constexpr (std::is_same_v<E, RemoveRule>) {
            auto it = std::find_if(next.rules.begin(), next.rules.end(),
                                   [&](const Rule& r) { return r.id == e.id; });
            if (it == next.rules.end()) throw UnknownRuleId("unknown rule id " + e.id);
            next.rules.erase(it);
          } else if constexpr (std::is_same_v<E, AdjustWeight>) {
            check_unit(e.weight, false, "adjusted weight");
            auto it = std::find_if(next.rules.begin(), next.rules.end(),
                                   [&](const Rule& r) { return r.id == e.rule_id; });
            if (it == next.rules.end()) throw UnknownRuleId("unknown rule id " + e.rule_id);
            BodyLiteral* b = it->find(e.literal);
            if (!b) {
              throw ConsistencyViolation("rule " + e.rule_id + " has no body literal " +
                                         e.literal);
            }
            b->edge_weight = e.weight;
          } else if constexpr (std::is_same_v<E, LexiconSet>) {
            check_unit(e.weight, false, "lexicon weight");
            next.lexicon[e.term] = e.weight;
          } else if constexpr (std::is_same_v<E, PriorSet>) {
            check_unit(e.prior.prevalence, true, "prevalence");
            auto it = std::find_if(next.priors.begin(), next.priors.end(),
                                   [&](const PriorEntry& p) { return p.same_stratum(e.prior); });
            if (it != next.priors.end()) {
              *it = e.prior;
            } else {
              next.priors.push_back(e.prior);
            }
          }
        },
        edit.kind);
  }
  next.normalize();
  return next;
}

KnowledgeSnapshot make_snapshot(KnowledgeBase kb, long long version, long long parent,
                                const CommitOptions& options) {
  kb.normalize();
  verify_consistency(kb, options.consistency);
  KnowledgeSnapshot s;
  s.version = version;
  s.parent = parent;
  s.timestamp = options.timestamp.value_or(now_iso8601());
  s.author = options.author;
  s.note = options.note;
  s.content_hash = kb.content_hash();
  s.kb = std::move(kb);
  return s;
}

KnowledgeSnapshot commit(const KnowledgeSnapshot& head, const std::vector<EditRequest>& edits,
                         const CommitOptions& options) {
  for (const auto& e : edits) {
    if (e.base_version && *e.base_version != head.version) {
      throw StaleVersion(*e.base_version, head.version);
    }
  }
  KnowledgeBase next = apply_edits(head.kb, edits, head.version + 1);
  return make_snapshot(std::move(next), head.version + 1, head.version, options);
}

SnapshotDiff diff_content(const KnowledgeBase& older, const KnowledgeBase& newer) {
  SnapshotDiff d;
  std::map<std::string, const Rule*> old_rules, new_rules;
  for (const auto& r : older.rules) old_rules[r.id] = &r;
  for (const auto& r : newer.rules) new_rules[r.id] = &r;

  for (const auto& [id, r] : old_rules) {
    auto it = new_rules.find(id);
    if (it == new_rules.end()) {
      d.removed_rules.push_back(id);
      continue;
    }
    const Rule& n = *it->second;
    if (*r == n) continue;
    if (same_shape(*r, n)) {
      for (std::size_t i = 0; i < r->body.size(); ++i) {
        if (r->body[i].edge_weight != n.body[i].edge_weight) {
          d.weight_deltas.push_back({id, r->body[i].literal.to_string(), r->body[i].edge_weight,
                                     n.body[i].edge_weight});
        }
      }
    } else {
      d.removed_rules.push_back(id);
      d.added_rules.push_back(n);
    }
  }
  for (const auto& [id, r] : new_rules) {
    if (!old_rules.count(id)) d.added_rules.push_back(*r);
  }
  std::sort(d.added_rules.begin(), d.added_rules.end(),
            [](const Rule& a, const Rule& b) { return a.id < b.id; });

  for (const auto& [term, w] : older.lexicon) {
    auto it = newer.lexicon.find(term);
    if (it == newer.lexicon.end()) {
      d.lexicon_deltas.push_back({term, w, std::nullopt});
    } else if (it->second != w) {
      d.lexicon_deltas.push_back({term, w, it->second});
    }
  }
  for (const auto& [term, w] : newer.lexicon) {
    if (!older.lexicon.count(term)) d.lexicon_deltas.push_back({term, std::nullopt, w});
  }
  std::sort(d.lexicon_deltas.begin(), d.lexicon_deltas.end(),
            [](const LexiconDelta& a, const LexiconDelta& b) { return a.term < b.term; });

  for (const auto& p : older.priors) {
    auto it = std::find_if(newer.priors.begin(), newer.priors.end(),
                           [&](const PriorEntry& q) { return q.same_stratum(p); });
    if (it == newer.priors.end()) {
      d.prior_deltas.push_back({p, p.prevalence, std::nullopt});
    } else if (it->prevalence != p.prevalence) {
      d.prior_deltas.push_back({p, p.prevalence, it->prevalence});
    }
  }
  for (const auto& p : newer.priors) {
    bool existed = std::any_of(older.priors.begin(), older.priors.end(),
                               [&](const PriorEntry& q) { return q.same_stratum(p); });
    if (!existed) d.prior_deltas.push_back({p, std::nullopt, p.prevalence});
  }
  return d;
}

SnapshotDiff diff(const KnowledgeSnapshot& older, const KnowledgeSnapshot& newer) {
  if (!(older.version < newer.version)) {
    throw VersionOrder("diff needs older.version < newer.version (got v" +
                       std::to_string(older.version) + " and v" + std::to_string(newer.version) +
                       ")");
  }
  SnapshotDiff d = diff_content(older.kb, newer.kb);
  d.from_version = older.version;
  d.to_version = newer.version;
  return d;
}

KnowledgeBase apply_diff(const KnowledgeBase& older, const SnapshotDiff& d) {
  KnowledgeBase kb = older;
  for (const auto& id : d.removed_rules) {
    auto it = std::find_if(kb.rules.begin(), kb.rules.end(),
                           [&](const Rule& r) { return r.id == id; });
    if (it == kb.rules.end()) throw UnknownRuleId("diff removes unknown rule " + id);
    kb.rules.erase(it);
  }
  for (const auto& r : d.added_rules) kb.rules.push_back(r);
  for (const auto& w : d.weight_deltas) {
    auto it = std::find_if(kb.rules.begin(), kb.rules.end(),
                           [&](const Rule& r) { return r.id == w.rule_id; });
    if (it == kb.rules.end()) throw UnknownRuleId("diff shifts unknown rule " + w.rule_id);
    BodyLiteral* b = it->find(w.literal);
    if (!b || b->edge_weight != w.old_weight) {
      throw ConsistencyViolation("diff does not apply: " + w.rule_id + " " + w.literal);
    }
    b->edge_weight = w.new_weight;
  }
  for (const auto& l : d.lexicon_deltas) {
    if (l.new_weight) {
      kb.lexicon[l.term] = *l.new_weight;
    } else {
      kb.lexicon.erase(l.term);
    }
  }
  for (const auto& p : d.prior_deltas) {
    auto it = std::find_if(kb.priors.begin(), kb.priors.end(),
                           [&](const PriorEntry& q) { return q.same_stratum(p.stratum); });
    if (p.new_prevalence) {
      PriorEntry e = p.stratum;
      e.prevalence = *p.new_prevalence;
      if (it != kb.priors.end()) {
        *it = e;
      } else {
        kb.priors.push_back(e);
      }
    } else if (it != kb.priors.end()) {
      kb.priors.erase(it);
    }
  }
  kb.normalize();
  return kb;
}

json to_json(const SnapshotDiff& d) {
  json j;
  j["from_version"] = d.from_version;
  j["to_version"] = d.to_version;
  j["added_rules"] = json::array();
  for (const auto& r : d.added_rules) j["added_rules"].push_back(rule_to_json(r));
  j["removed_rules"] = d.removed_rules;
  j["weight_deltas"] = json::array();
  for (const auto& w : d.weight_deltas) {
    j["weight_deltas"].push_back({{"rule_id", w.rule_id},
                                  {"literal", w.literal},
                                  {"old_weight", w.old_weight},
                                  {"new_weight", w.new_weight}});
  }
  j["lexicon_deltas"] = json::array();
  for (const auto& l : d.lexicon_deltas) {
    j["lexicon_deltas"].push_back(
        {{"term", l.term}, {"old_weight", opt(l.old_weight)}, {"new_weight", opt(l.new_weight)}});
  }
  j["prior_deltas"] = json::array();
  for (const auto& p : d.prior_deltas) {
    PriorEntry stratum = p.stratum;
    stratum.prevalence = p.new_prevalence.value_or(p.old_prevalence.value_or(1.0));
    j["prior_deltas"].push_back({{"prior", stratum.to_string()},
                                 {"old_prevalence", opt(p.old_prevalence)},
                                 {"new_prevalence", opt(p.new_prevalence)}});
  }
  return j;
}

SnapshotDiff diff_from_json(const json& j) {
  SnapshotDiff d;
  d.from_version = j.value("from_version", 0LL);
  d.to_version = j.value("to_version", 0LL);
  for (const auto& r : j.at("added_rules")) d.added_rules.push_back(rule_from_json(r));
  d.removed_rules = j.at("removed_rules").get<std::vector<std::string>>();
  for (const auto& w : j.at("weight_deltas")) {
    d.weight_deltas.push_back({w.at("rule_id").get<std::string>(),
                               w.at("literal").get<std::string>(),
                               w.at("old_weight").get<double>(),
                               w.at("new_weight").get<double>()});
  }
  for (const auto& l : j.value("lexicon_deltas", json::array())) {
    d.lexicon_deltas.push_back(
        {l.at("term").get<std::string>(), opt_from(l, "old_weight"), opt_from(l, "new_weight")});
  }
  for (const auto& p : j.value("prior_deltas", json::array())) {
    d.prior_deltas.push_back({parse_prior_clause(p.at("prior").get<std::string>()),
                              opt_from(p, "old_prevalence"), opt_from(p, "new_prevalence")});
  }
  return d;
}

EdgeView edge_view(const KnowledgeBase& kb) {
  static const Symbol kSymptom("symptom");
  EdgeView view;
  for (const auto& r : kb.rules) {
    for (const auto& b : r.body) {
      const Literal& l = b.literal;
      if (l.negated() || l.predicate != kSymptom || l.args.size() != 1 ||
          l.args[0].is_wildcard()) {
        continue;
      }
      EdgeKey key{r.disease(), *l.args[0].atom};
      auto [it, inserted] = view.emplace(key, b.edge_weight);
      if (!inserted) it->second = std::max(it->second, b.edge_weight);
    }
  }
  return view;
}

json to_json(const EditRequest& e) {
  json j;
  std::visit(
      [&](const auto& k) {
        using E = std::decay_t<decltype(k)>;
        if constexpr (std::is_same_v<E, AddRule>) {
          j["kind"] = "add_rule";
          j["rule"] = print_rule(k.rule);
          if (k.weight) j["weight"] = *k.weight;
        } else if constexpr (std::is_same_v<E, RemoveRule>) {
          j["kind"] = "remove_rule";
          j["id"] = k.id;
        } else if constexpr (std::is_same_v<E, AdjustWeight>) {
          j["kind"] = "adjust_weight";
          j["rule_id"] = k.rule_id;
          j["literal"] = k.literal;
          j["weight"] = k.weight;
        } else if constexpr (std::is_same_v<E, LexiconSet>) {
          j["kind"] = "lexicon_set";
          j["term"] = k.term;
          j["weight"] = k.weight;
        } else if constexpr (std::is_same_v<E, PriorSet>) {
          j["kind"] = "prior_set";
          j["prior"] = k.prior.to_string();
        }
      },
      e.kind);
  j["author"] = std::string(to_string(e.author));
  if (!e.note.empty()) j["note"] = e.note;
  if (e.base_version) j["base_version"] = *e.base_version;
  return j;
}

EditRequest edit_from_json(const json& j) {
  EditRequest e;
  const std::string kind = j.at("kind").get<std::string>();
  if (kind == "add_rule") {
    AddRule a{parse_rule(j.at("rule").get<std::string>()), opt_from(j, "weight")};
    e.kind = std::move(a);
  } else if (kind == "remove_rule") {
    e.kind = RemoveRule{j.at("id").get<std::string>()};
  } else if (kind == "adjust_weight") {
    e.kind = AdjustWeight{j.at("rule_id").get<std::string>(), j.at("literal").get<std::string>(),
                          j.at("weight").get<double>()};
  } else if (kind == "lexicon_set") {
    e.kind = LexiconSet{j.at("term").get<std::string>(), j.at("weight").get<double>()};
  } else if (kind == "prior_set") {
    e.kind = PriorSet{parse_prior_clause(j.at("prior").get<std::string>())};
  } else {
    throw Error("unknown edit kind '" + kind + "'");
  }
  std::string author = j.value("author", std::string("clinician"));
  if (author == "clinician") {
    e.author = EditAuthor::Clinician;
  } else if (author == "learner") {
    e.author = EditAuthor::Learner;
  } else {
    throw Error("unknown edit author '" + author + "'");
  }
  e.note = j.value("note", std::string());
  if (j.contains("base_version") && !j.at("base_version").is_null()) {
    e.base_version = j.at("base_version").get<long long>();
  }
  return e;
}

json manifest_json(const KnowledgeSnapshot& s) {
  json rules = json::array();
  for (const auto& r : s.kb.rules) {
    rules.push_back({{"id", r.id},
                     {"provenance", std::string(to_string(r.provenance))},
                     {"created_at", r.created_at}});
  }
  return {{"version", s.version},     {"timestamp", s.timestamp},
          {"parent", s.parent},       {"content_hash", s.content_hash},
          {"author", s.author},       {"note", s.note},
          {"rules", std::move(rules)}};
}

// ---------------------------------------------------------------------------
// SnapshotStore

namespace {

std::filesystem::path version_stem(const std::filesystem::path& dir, long long v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "v%06lld", v);
  return dir / buf;
}

}  // namespace

SnapshotStore::SnapshotStore(KnowledgeBase initial, CommitOptions options) {
  consistency_ = options.consistency;
  if (options.note.empty()) options.note = "initial import";
  auto s = std::make_shared<const KnowledgeSnapshot>(
      make_snapshot(std::move(initial), 1, 0, options));
  versions_.emplace(1, std::move(s));
}

SnapshotStore::SnapshotStore(SnapshotStore&& other) noexcept
    : dir_(std::move(other.dir_)),
      versions_(std::move(other.versions_)),
      consistency_(std::move(other.consistency_)) {}

SnapshotStore SnapshotStore::open(const std::filesystem::path& dir,
                                  std::optional<KnowledgeBase> initial) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  SnapshotStore store;
  store.dir_ = dir;
  static const std::regex kManifest(R"(v(\d+)\.json)");
  for (const auto& entry : fs::directory_iterator(dir)) {
    std::smatch m;
    std::string name = entry.path().filename().string();
    if (std::regex_match(name, m, kManifest)) {
      long long v = std::stoll(m[1].str());
      store.versions_.emplace(v, std::make_shared<const KnowledgeSnapshot>(load(dir, v)));
    }
  }
  if (store.versions_.empty()) {
    if (!initial) throw MissingSnapshot("store " + dir.string() + " holds no snapshots");
    CommitOptions opts;
    opts.note = "initial import";
    auto s = std::make_shared<const KnowledgeSnapshot>(
        make_snapshot(std::move(*initial), 1, 0, opts));
    store.persist(*s);
    store.versions_.emplace(1, std::move(s));
  }
  return store;
}

KnowledgeSnapshot SnapshotStore::load(const std::filesystem::path& dir, long long version) {
  auto stem = version_stem(dir, version);
  json manifest = json::parse(read_file(stem.string() + ".json"));
  Program program = parse_program(read_file(stem.string() + ".kb"));
  KnowledgeSnapshot s;
  s.version = manifest.at("version").get<long long>();
  s.parent = manifest.at("parent").get<long long>();
  s.timestamp = manifest.at("timestamp").get<std::string>();
  s.author = manifest.value("author", std::string());
  s.note = manifest.value("note", std::string());
  s.kb = KnowledgeBase::from_program(program, parse_lexicon(read_file(stem.string() +
                                                                      ".lexicon.tsv")));
  std::map<std::string, json> meta;
  for (const auto& r : manifest.at("rules")) meta[r.at("id").get<std::string>()] = r;
  for (auto& r : s.kb.rules) {
    auto it = meta.find(r.id);
    if (it == meta.end()) throw Error("manifest v" + std::to_string(version) + " lacks " + r.id);
    r.provenance = provenance_from_string(it->second.at("provenance").get<std::string>());
    r.created_at = it->second.at("created_at").get<long long>();
  }
  s.content_hash = s.kb.content_hash();
  if (s.content_hash != manifest.at("content_hash").get<std::string>()) {
    throw Error("snapshot v" + std::to_string(version) + " content hash mismatch");
  }
  return s;
}

void SnapshotStore::persist(const KnowledgeSnapshot& s) const {
  if (!dir_) return;
  auto stem = version_stem(*dir_, s.version);
  write_file(stem.string() + ".kb", s.kb.kb_text());
  write_file(stem.string() + ".lexicon.tsv", print_lexicon(s.kb.lexicon));
  // Manifest last: a version exists once its manifest does.
  write_file(stem.string() + ".json", manifest_json(s).dump(2) + "\n");
}

SnapshotPtr SnapshotStore::head() const {
  std::lock_guard lock(read_mu_);
  return versions_.rbegin()->second;
}

SnapshotPtr SnapshotStore::get(long long version) const {
  std::lock_guard lock(read_mu_);
  auto it = versions_.find(version);
  if (it == versions_.end()) {
    throw MissingSnapshot("snapshot v" + std::to_string(version) + " not retained");
  }
  return it->second;
}

std::vector<SnapshotPtr> SnapshotStore::all() const {
  std::lock_guard lock(read_mu_);
  std::vector<SnapshotPtr> out;
  for (const auto& [v, s] : versions_) out.push_back(s);
  return out;
}

SnapshotPtr SnapshotStore::commit_with(
    long long base_version, const std::function<KnowledgeBase(const KnowledgeSnapshot&)>& stage,
    const CommitOptions& options) {
  std::lock_guard writer(write_mu_);
  SnapshotPtr h = head();
  if (base_version != h->version) throw StaleVersion(base_version, h->version);
  CommitOptions opts = options;
  opts.consistency = consistency_;
  auto next = std::make_shared<const KnowledgeSnapshot>(
      make_snapshot(stage(*h), h->version + 1, h->version, opts));
  persist(*next);
  std::lock_guard lock(read_mu_);
  versions_.emplace(next->version, next);
  return next;
}

SnapshotPtr SnapshotStore::commit(long long base_version, const std::vector<EditRequest>& edits,
                                  const CommitOptions& options) {
  for (const auto& e : edits) {
    if (e.base_version && *e.base_version != base_version) {
      throw StaleVersion(*e.base_version, head()->version);
    }
  }
  return commit_with(
      base_version,
      [&](const KnowledgeSnapshot& h) { return apply_edits(h.kb, edits, h.version + 1); },
      options);
}

SnapshotPtr SnapshotStore::commit_content(long long base_version, KnowledgeBase kb,
                                          const CommitOptions& options) {
  return commit_with(
      base_version, [&](const KnowledgeSnapshot&) { return std::move(kb); }, options);
}

std::size_t SnapshotStore::compact(std::size_t keep) {
  std::lock_guard writer(write_mu_);
  std::lock_guard lock(read_mu_);
  if (keep == 0) keep = 1;
  std::size_t dropped = 0;
  while (versions_.size() > keep) {
    auto it = versions_.begin();
    if (dir_) {
      auto stem = version_stem(*dir_, it->first);
      for (const char* ext : {".json", ".kb", ".lexicon.tsv"}) {
        std::filesystem::remove(stem.string() + ext);
      }
    }
    versions_.erase(it);
    ++dropped;
  }
  return dropped;
}

}  // namespace fdx
