#include "fuzzydx/learning.hpp"

#include <algorithm>
#include <cmath>

#include "fuzzydx/dsl.hpp"
#include "fuzzydx/error.hpp"

namespace fdx {

namespace {

double clip01(double w) { return std::clamp(w, 0.0, 1.0); }

bool is_edge(const BodyLiteral& b, Symbol s) {
  const Literal& l = b.literal;
  return !l.negated() && l.predicate.str() == "symptom" && l.args.size() == 1 &&
         l.args[0].atom && *l.args[0].atom == s;
}

std::vector<Symbol> unique_sorted(std::vector<Symbol> v) {
  std::sort(v.begin(), v.end());
  v.erase(std::unique(v.begin(), v.end()), v.end());
  return v;
}

Rule* find_mut(KnowledgeBase& kb, std::string_view id) {
  for (auto& r : kb.rules) {
    if (r.id == id) return &r;
  }
  return nullptr;
}

Rule& require_rule(KnowledgeBase& kb, std::string_view id) {
  Rule* r = find_mut(kb, id);
  if (!r) throw Error("replay: rule " + std::string(id) + " not found");
  return *r;
}

void ensure_unique_id(const KnowledgeBase& kb, const Rule& r) {
  int n = 0;
  for (const auto& o : kb.rules) n += o.id == r.id;
  if (n > 1) throw ConsistencyViolation("rule " + r.id + " duplicates an existing rule");
}

EdgeAdded add_to_support(KnowledgeBase& kb, Symbol d, Symbol s, double w,
                         std::optional<double> ratio, long long created_at) {
  EdgeAdded ev{d, s, ratio, w, std::nullopt, {}, created_at};
  for (auto& r : kb.rules) {
    if (r.disease() == d && r.provenance == Provenance::Learner) {
      ev.rule_before = r.id;
      r.body.push_back({Literal::make("symptom", {s.view()}), w});
      refresh_rule_id(r);
      ev.rule_after = r.id;
      ev.created_at = r.created_at;
      ensure_unique_id(kb, r);
      return ev;
    }
  }
  Rule r = make_rule(d, {{Literal::make("symptom", {s.view()}), w}}, Provenance::Learner, created_at);
  ev.rule_after = r.id;
  kb.rules.push_back(std::move(r));
  ensure_unique_id(kb, kb.rules.back());
  return ev;
}

struct Violation {
  Symbol d_plus;
  Symbol d_minus;
  double loss = 0.0;
};

std::optional<Violation> find_violation(const EdgeView& ev, const std::set<Symbol>& catalog,
                                        const std::vector<Symbol>& x,
                                        const std::vector<Symbol>& labels,
                                        const LearnerConfig& config) {
  std::map<Symbol, double> score;
  for (auto d : catalog) score[d] = score_disease(d, x, ev);
  std::vector<Symbol> ranked(catalog.begin(), catalog.end());
  std::stable_sort(ranked.begin(), ranked.end(),
                   [&](Symbol a, Symbol b) { return score[a] > score[b]; });
  ranked.resize(std::min(ranked.size(), config.top_k));
  std::set<Symbol> truth(labels.begin(), labels.end());
  std::optional<Violation> best;
  for (auto dp : truth) {
    for (auto dm : ranked) {
      if (truth.count(dm) || !(score[dp] < score[dm])) continue;
      double loss = config.margin - (score[dp] - score[dm]);
      if (!best || loss > best->loss) best = Violation{dp, dm, loss};
    }
  }
  return best;
}

std::set<Symbol> catalog_for(const KnowledgeBase& kb, const std::vector<Symbol>& labels) {
  auto c = kb.diseases();
  c.insert(labels.begin(), labels.end());
  return c;
}

nlohmann::json rule_json(const Rule& r) {
  return {{"id", r.id},
          {"text", print_rule(r)},
          {"provenance", to_string(r.provenance)},
          {"created_at", r.created_at}};
}

Rule rule_from(const nlohmann::json& j) {
  Rule r = parse_rule(j.at("text").get<std::string>());
  r.provenance = provenance_from_string(j.at("provenance").get<std::string>());
  r.created_at = j.at("created_at").get<long long>();
  return r;
}

template <class T>
nlohmann::json opt_json(const std::optional<T>& o) {
  return o ? nlohmann::json(*o) : nlohmann::json(nullptr);
}

}  // namespace

void LearnerConfig::validate() const {
  auto fail = [](const std::string& what) { throw Error("learner config: " + what); };
  if (!(margin > 0)) fail("margin must be > 0");
  if (!(cap > 0)) fail("cap must be > 0");
  if (top_k < 1) fail("top_k must be >= 1");
  if (m_pos < 1) fail("m_pos must be >= 1");
  if (!(rho_add > 0) || !(rho_prune > 0)) fail("specificity thresholds must be > 0");
  if (rho_prune > rho_add) fail("rho_prune must not exceed rho_add");
  if (!(w_init > 0 && w_init <= 1)) fail("w_init must lie in (0,1]");
  if (!(tau_induct > 0 && tau_induct < 1)) fail("tau_induct must lie in (0,1)");
}

nlohmann::json to_json(const LearnerConfig& c) {
  return {{"margin", c.margin},   {"cap", c.cap},         {"top_k", c.top_k},
          {"m_pos", c.m_pos},     {"rho_add", c.rho_add}, {"rho_prune", c.rho_prune},
          {"w_init", c.w_init},   {"tau_induct", c.tau_induct}};
}

LearnerConfig learner_config_from_json(const nlohmann::json& j, LearnerConfig c) {
  if (!j.is_object()) throw Error("learner config must be a JSON object");
  try {
    for (const auto& [key, v] : j.items()) {
      if (key == "margin") c.margin = v.get<double>();
      else if (key == "cap") c.cap = v.get<double>();
      else if (key == "top_k") c.top_k = v.get<std::size_t>();
      else if (key == "m_pos") c.m_pos = v.get<long long>();
      else if (key == "rho_add") c.rho_add = v.get<double>();
      else if (key == "rho_prune") c.rho_prune = v.get<double>();
      else if (key == "w_init") c.w_init = v.get<double>();
      else if (key == "tau_induct") c.tau_induct = v.get<double>();
      else throw Error("unknown learner config key '" + key + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("learner config: ") + e.what());
  }
  c.validate();
  return c;
}

LearningCase learning_case_from_json(const nlohmann::json& j) {
  LearningCase c;
  c.id = j.at("id").is_string() ? j.at("id").get<std::string>() : j.at("id").dump();
  for (const auto& s : j.at("symptoms")) {
    c.symptoms.emplace_back(s.is_string() ? s.get<std::string>() : s.at("name").get<std::string>());
  }
  for (const auto& l : j.at("labels")) c.labels.emplace_back(l.get<std::string>());
  return c;
}

nlohmann::json to_json(const LearningCase& c) {
  nlohmann::json symptoms = nlohmann::json::array(), labels = nlohmann::json::array();
  for (auto s : c.symptoms) symptoms.push_back({{"name", s.str()}, {"weight", 1.0}});
  for (auto l : c.labels) labels.push_back(l.str());
  return {{"id", c.id}, {"symptoms", symptoms}, {"labels", labels}};
}

std::vector<LearningCase> load_case_stream(std::string_view jsonl) {
  std::vector<LearningCase> out;
  std::size_t line_no = 0, pos = 0;
  while (pos < jsonl.size()) {
    std::size_t nl = jsonl.find('\n', pos);
    std::string_view line = jsonl.substr(pos, nl == std::string_view::npos ? jsonl.npos : nl - pos);
    pos = nl == std::string_view::npos ? jsonl.size() : nl + 1;
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string_view::npos) continue;
    try {
      out.push_back(learning_case_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(line_no, e.what());
    } catch (const ParseError&) {
      throw;
    } catch (const Error& e) {
      throw ParseError(line_no, e.what());
    }
  }
  return out;
}

double score_disease(Symbol d, const std::vector<Symbol>& x, const EdgeView& edges) {
  if (x.empty()) throw EmptyCase("empty symptom set");
  double total = 0.0;
  for (auto s : x) {
    auto it = edges.find(EdgeKey{d, s});
    if (it != edges.end()) total += it->second;
  }
  return total;
}

double score_disease(Symbol d, const std::vector<Symbol>& x, const KnowledgeBase& kb) {
  return score_disease(d, x, edge_view(kb));
}

LearnStep pa_update(const KnowledgeBase& kb, const LearningCase& c, const LearnerConfig& config,
                    long long created_at) {
  if (c.symptoms.empty()) throw EmptyCase("case " + c.id + " has no symptoms");
  if (c.labels.empty()) throw EmptyTruth("case " + c.id + " has no labels");
  auto x = unique_sorted(c.symptoms);
  auto viol = find_violation(edge_view(kb), catalog_for(kb, c.labels), x, c.labels, config);
  LearnStep out{kb, {}, false};
  if (!viol) return out;

  double tau = std::min(config.cap, viol->loss / (2.0 * static_cast<double>(x.size())));
  PAUpdate pa{c.id, viol->d_plus, viol->d_minus, viol->loss, tau, {}};
  std::vector<Symbol> missing, zeroed;
  for (auto s : x) {
    bool found = false;
    for (auto& r : out.kb.rules) {
      if (r.disease() != viol->d_plus) continue;
      for (auto& b : r.body) {
        if (!is_edge(b, s)) continue;
        found = true;
        double old = b.edge_weight;
        b.edge_weight = clip01(old + tau);
        pa.touched.push_back({r.id, s, old, b.edge_weight});
      }
    }
    if (!found) missing.push_back(s);
    bool flagged = false;
    for (auto& r : out.kb.rules) {
      if (r.disease() != viol->d_minus) continue;
      for (auto& b : r.body) {
        if (!is_edge(b, s)) continue;
        double old = b.edge_weight;
        b.edge_weight = clip01(old - tau);
        pa.touched.push_back({r.id, s, old, b.edge_weight});
        if (old > 0.0 && b.edge_weight == 0.0) flagged = true;
      }
    }
    if (flagged) zeroed.push_back(s);
  }
  out.events.push_back(std::move(pa));
  for (auto s : missing) {
    out.events.push_back(add_to_support(out.kb, viol->d_plus, s, clip01(tau), std::nullopt, created_at));
  }
  for (auto s : zeroed) out.events.push_back(ZeroFlagged{viol->d_minus, s});
  out.kb.normalize();
  out.updated = true;
  return out;
}

void update_counts(EdgeStats& stats, const LearningCase& c, const std::set<Symbol>& catalog) {
  std::set<Symbol> truth(c.labels.begin(), c.labels.end());
  for (auto s : unique_sorted(c.symptoms)) {
    for (auto d : truth) ++stats[EdgeKey{d, s}].c_plus;
    for (auto d : catalog) {
      if (!truth.count(d)) ++stats[EdgeKey{d, s}].c_minus;
    }
  }
}

double specificity(const EdgeStats& stats, Symbol d, Symbol s) {
  auto it = stats.find(EdgeKey{d, s});
  if (it == stats.end()) return 1.0;
  return (static_cast<double>(it->second.c_plus) + 1.0) /
         (static_cast<double>(it->second.c_minus) + 1.0);
}

std::set<Symbol> disease_catalog(const KnowledgeBase& kb, const std::vector<LearningCase>& cases) {
  auto c = kb.diseases();
  for (const auto& k : cases) c.insert(k.labels.begin(), k.labels.end());
  return c;
}

LearnStep structure_update(const KnowledgeBase& kb, const EdgeStats& stats,
                           const LearnerConfig& config, long long created_at) {
  LearnStep out{kb, {}, false};
  EdgeView ev = edge_view(kb);
  std::set<EdgeKey> keys;
  for (const auto& [k, c] : stats) keys.insert(k);
  for (const auto& [k, w] : ev) keys.insert(k);

  for (const auto& key : keys) {
    double r = specificity(stats, key.disease, key.symptom);
    auto edge = ev.find(key);
    if (edge == ev.end()) {
      auto st = stats.find(key);
      long long c_plus = st == stats.end() ? 0 : st->second.c_plus;
      if (c_plus >= config.m_pos && r >= config.rho_add) {
        out.events.push_back(add_to_support(out.kb, key.disease, key.symptom, config.w_init, r, created_at));
      }
      continue;
    }
    if (!(edge->second == 0.0 && r < config.rho_prune)) continue;
    EdgePruned pruned{key.disease, key.symptom, r, {}};
    for (std::size_t i = 0; i < out.kb.rules.size();) {
      Rule& rule = out.kb.rules[i];
      if (rule.disease() != key.disease || rule.provenance == Provenance::Clinician) {
        ++i;
        continue;
      }
      auto it = std::find_if(rule.body.begin(), rule.body.end(), [&](const BodyLiteral& b) {
        return is_edge(b, key.symptom) && b.edge_weight == 0.0;
      });
      if (it == rule.body.end()) {
        ++i;
        continue;
      }
      RuleEdit edit{rule.id, std::nullopt};
      rule.body.erase(it);
      bool drop = rule.body.empty();
      if (!drop) {
        refresh_rule_id(rule);
        // A body that now equals another rule of the disease is redundant.
        for (const auto& o : out.kb.rules) {
          if (&o != &rule && o.id == rule.id) drop = true;
        }
      }
      if (drop) {
        out.kb.rules.erase(out.kb.rules.begin() + static_cast<std::ptrdiff_t>(i));
      } else {
        edit.after = rule.id;
        ++i;
      }
      pruned.rules.push_back(std::move(edit));
    }
    if (!pruned.rules.empty()) out.events.push_back(std::move(pruned));
  }
  out.kb.normalize();
  out.updated = !out.events.empty();
  return out;
}

double log_odds_scorer(const LearningCase&, const RuleTemplate& t,
                       const std::vector<LearningCase>& batch) {
  double c_plus = 0, c_minus = 0;
  for (const auto& c : batch) {
    bool has_body = std::all_of(t.body.begin(), t.body.end(), [&](Symbol s) {
      return std::find(c.symptoms.begin(), c.symptoms.end(), s) != c.symptoms.end();
    });
    if (!has_body) continue;
    bool has_d = std::find(c.labels.begin(), c.labels.end(), t.disease) != c.labels.end();
    (has_d ? c_plus : c_minus) += 1;
  }
  return std::log((c_plus + 1.0) / (c_minus + 1.0));
}

std::vector<InducedRule> induce_rules(const std::vector<LearningCase>& batch,
                                      const TemplateScorer& scorer, double tau_induct,
                                      const KnowledgeBase* existing, std::size_t max_body,
                                      std::size_t min_support, long long created_at) {
  std::map<Symbol, std::map<std::vector<Symbol>, std::size_t>> support;
  for (const auto& c : batch) {
    auto x = unique_sorted(c.symptoms);
    std::vector<std::vector<Symbol>> subsets{{}};
    for (auto s : x) {
      std::size_t n = subsets.size();
      for (std::size_t i = 0; i < n; ++i) {
        if (subsets[i].size() >= max_body) continue;
        auto next = subsets[i];
        next.push_back(s);
        subsets.push_back(std::move(next));
      }
    }
    for (auto d : unique_sorted(c.labels)) {
      for (const auto& sub : subsets) {
        if (!sub.empty()) ++support[d][sub];
      }
    }
  }

  std::vector<InducedRule> out;
  if (batch.empty()) return out;
  for (const auto& [d, subs] : support) {
    for (const auto& [body, count] : subs) {
      if (count < min_support) continue;
      RuleTemplate t{d, body};
      double total = 0.0;
      for (const auto& pair : batch) total += 1.0 / (1.0 + std::exp(-scorer(pair, t, batch)));
      double score = total / static_cast<double>(batch.size());
      if (!(score > tau_induct)) continue;
      std::vector<BodyLiteral> lits;
      for (auto s : body) lits.push_back({Literal::make("symptom", {s.view()}), 1.0});
      Rule r = make_rule(d, std::move(lits), Provenance::Induced, created_at);
      if (existing && existing->find_rule(r.id)) continue;
      out.push_back({std::move(r), score});
    }
  }
  return out;
}

std::size_t count_violations(const KnowledgeBase& kb, const std::vector<LearningCase>& cases,
                             const LearnerConfig& config) {
  EdgeView ev = edge_view(kb);
  std::size_t n = 0;
  for (const auto& c : cases) {
    if (c.symptoms.empty() || c.labels.empty()) continue;
    n += find_violation(ev, catalog_for(kb, c.labels), unique_sorted(c.symptoms), c.labels, config)
             .has_value();
  }
  return n;
}

LearnResult learn_stream(const KnowledgeBase& start, const std::vector<LearningCase>& stream,
                         const LearnerConfig& config, const LearnOptions& options) {
  config.validate();
  LearnResult res{start, {}, {}, {}};
  auto catalog = disease_catalog(start, stream);
  for (std::size_t pass = 0; pass < options.max_passes; ++pass) {
    std::size_t updates = 0;
    for (const auto& c : stream) {
      if (pass == 0) update_counts(res.stats, c, catalog);
      auto step = pa_update(res.kb, c, config, options.created_at);
      if (!step.updated) continue;
      ++updates;
      res.kb = std::move(step.kb);
      for (auto& e : step.events) res.log.push_back(std::move(e));
    }
    if (options.structure_each_pass) {
      auto step = structure_update(res.kb, res.stats, config, options.created_at);
      res.kb = std::move(step.kb);
      for (auto& e : step.events) res.log.push_back(std::move(e));
    }
    res.updates_per_pass.push_back(updates);
    if (options.stop_when_clean && updates == 0) break;
  }
  return res;
}

nlohmann::json to_json(const LogEvent& e) {
  using nlohmann::json;
  return std::visit(
      [](const auto& ev) -> json {
        using E = std::decay_t<decltype(ev)>;
        if constexpr (std::is_same_v<E, PAUpdate>) {
          json touched = json::array();
          for (const auto& t : ev.touched) {
            touched.push_back({{"rule_id", t.rule_id},
                               {"symptom", t.symptom.str()},
                               {"old", t.old_weight},
                               {"new", t.new_weight}});
          }
          return {{"type", "pa_update"}, {"case_id", ev.case_id}, {"d_plus", ev.d_plus.str()},
                  {"d_minus", ev.d_minus.str()}, {"loss", ev.loss}, {"tau", ev.tau},
                  {"touched", touched}};
        } else if constexpr (std::is_same_v<E, EdgeAdded>) {
          return {{"type", "edge_added"},           {"disease", ev.disease.str()},
                  {"symptom", ev.symptom.str()},    {"ratio", opt_json(ev.ratio)},
                  {"weight", ev.weight},            {"rule_before", opt_json(ev.rule_before)},
                  {"rule_after", ev.rule_after},    {"created_at", ev.created_at}};
        } else if constexpr (std::is_same_v<E, EdgePruned>) {
          json rules = json::array();
          for (const auto& r : ev.rules) rules.push_back({{"before", r.before}, {"after", opt_json(r.after)}});
          return {{"type", "edge_pruned"}, {"disease", ev.disease.str()},
                  {"symptom", ev.symptom.str()}, {"ratio", ev.ratio}, {"rules", rules}};
        } else if constexpr (std::is_same_v<E, ZeroFlagged>) {
          return {{"type", "zero_flagged"}, {"disease", ev.disease.str()}, {"symptom", ev.symptom.str()}};
        } else {
          return {{"type", "rule_induced"}, {"rule", rule_json(ev.rule)}, {"score", ev.score}};
        }
      },
      e);
}

LogEvent log_event_from_json(const nlohmann::json& j) {
  auto sym = [&](const char* k) { return Symbol(j.at(k).get<std::string>()); };
  auto opt_str = [&](const char* k) -> std::optional<std::string> {
    if (!j.contains(k) || j.at(k).is_null()) return std::nullopt;
    return j.at(k).get<std::string>();
  };
  const std::string type = j.at("type").get<std::string>();
  if (type == "pa_update") {
    PAUpdate ev{j.at("case_id").get<std::string>(), sym("d_plus"), sym("d_minus"),
                j.at("loss").get<double>(), j.at("tau").get<double>(), {}};
    for (const auto& t : j.at("touched")) {
      ev.touched.push_back({t.at("rule_id").get<std::string>(), Symbol(t.at("symptom").get<std::string>()),
                            t.at("old").get<double>(), t.at("new").get<double>()});
    }
    return ev;
  }
  if (type == "edge_added") {
    EdgeAdded ev{sym("disease"), sym("symptom"), std::nullopt, j.at("weight").get<double>(),
                 opt_str("rule_before"), j.at("rule_after").get<std::string>(),
                 j.at("created_at").get<long long>()};
    if (!j.at("ratio").is_null()) ev.ratio = j.at("ratio").get<double>();
    return ev;
  }
  if (type == "edge_pruned") {
    EdgePruned ev{sym("disease"), sym("symptom"), j.at("ratio").get<double>(), {}};
    for (const auto& r : j.at("rules")) {
      RuleEdit edit{r.at("before").get<std::string>(), std::nullopt};
      if (!r.at("after").is_null()) edit.after = r.at("after").get<std::string>();
      ev.rules.push_back(std::move(edit));
    }
    return ev;
  }
  if (type == "zero_flagged") return ZeroFlagged{sym("disease"), sym("symptom")};
  if (type == "rule_induced") return RuleInduced{rule_from(j.at("rule")), j.at("score").get<double>()};
  throw Error("unknown log event type '" + type + "'");
}

std::string log_to_jsonl(const UpdateLog& log) {
  std::string out;
  for (const auto& e : log) out += to_json(e).dump() + "\n";
  return out;
}

UpdateLog log_from_jsonl(std::string_view text) {
  UpdateLog out;
  std::size_t line_no = 0, pos = 0;
  while (pos < text.size()) {
    std::size_t nl = text.find('\n', pos);
    std::string_view line = text.substr(pos, nl == std::string_view::npos ? text.npos : nl - pos);
    pos = nl == std::string_view::npos ? text.size() : nl + 1;
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string_view::npos) continue;
    try {
      out.push_back(log_event_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(line_no, e.what());
    } catch (const ParseError&) {
      throw;
    } catch (const Error& e) {
      throw ParseError(line_no, e.what());
    }
  }
  return out;
}

KnowledgeBase replay(KnowledgeBase kb, const UpdateLog& log) {
  for (const auto& e : log) {
    std::visit(
        [&](const auto& ev) {
          using E = std::decay_t<decltype(ev)>;
          if constexpr (std::is_same_v<E, PAUpdate>) {
            for (const auto& t : ev.touched) {
              Rule& r = require_rule(kb, t.rule_id);
              bool hit = false;
              for (auto& b : r.body) {
                if (is_edge(b, t.symptom)) {
                  b.edge_weight = t.new_weight;
                  hit = true;
                }
              }
              if (!hit) throw Error("replay: " + t.rule_id + " lacks symptom(" + t.symptom.str() + ")");
            }
          } else if constexpr (std::is_same_v<E, EdgeAdded>) {
            if (ev.rule_before) {
              Rule& r = require_rule(kb, *ev.rule_before);
              r.body.push_back({Literal::make("symptom", {ev.symptom.view()}), ev.weight});
              refresh_rule_id(r);
              if (r.id != ev.rule_after) throw Error("replay: support rule id diverged");
            } else {
              Rule r = make_rule(ev.disease, {{Literal::make("symptom", {ev.symptom.view()}), ev.weight}},
                                 Provenance::Learner, ev.created_at);
              if (r.id != ev.rule_after) throw Error("replay: new support rule id diverged");
              kb.rules.push_back(std::move(r));
            }
          } else if constexpr (std::is_same_v<E, EdgePruned>) {
            for (const auto& edit : ev.rules) {
              Rule& r = require_rule(kb, edit.before);
              auto it = std::find_if(r.body.begin(), r.body.end(),
                                     [&](const BodyLiteral& b) { return is_edge(b, ev.symptom); });
              if (it == r.body.end()) throw Error("replay: prune target missing in " + edit.before);
              if (!edit.after) {
                std::string id = r.id;
                std::erase_if(kb.rules, [&](const Rule& x) { return x.id == id && &x == &r; });
                continue;
              }
              r.body.erase(it);
              refresh_rule_id(r);
              if (r.id != *edit.after) throw Error("replay: pruned rule id diverged");
            }
          } else if constexpr (std::is_same_v<E, RuleInduced>) {
            if (kb.find_rule(ev.rule.id)) throw Error("replay: induced rule already present");
            kb.rules.push_back(ev.rule);
          }
        },
        e);
    kb.normalize();
  }
  return kb;
}

}  // namespace fdx
