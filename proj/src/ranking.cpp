#include "fuzzydx/ranking.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include "fuzzydx/digest.hpp"
#include "fuzzydx/error.hpp"

namespace fdx {

namespace {

void normalize(std::vector<double>& v) {
  double n = 0.0;
  for (double x : v) n += x * x;
  n = std::sqrt(n);
  if (n > 0.0) {
    for (double& x : v) x /= n;
  }
}

bool is_symptom(const FuzzyFact& f) {
  return f.literal.predicate.str() == "symptom" && f.literal.args.size() == 1 &&
         !f.literal.args[0].is_wildcard() && !f.literal.negated();
}

void check_unit(double w, std::string_view what) {
  if (!(w >= 0.0 && w <= 1.0)) {
    throw WeightOutOfRange(std::string(what) + " " + format_weight(w) + " outside [0,1]");
  }
}

}  // namespace

std::vector<double> HashingEmbedder::embed_fact(const FuzzyFact& fact) const {
  std::vector<double> v(dim_, 0.0);
  auto add = [&](const std::string& token) {
    std::uint64_t h = fnv1a64(token);
    v[h % dim_] += (h >> 63) ? -1.0 : 1.0;
  };
  const std::string& pred = fact.literal.predicate.str();
  if (fact.literal.args.empty()) add(pred);
  for (const auto& a : fact.literal.args) {
    std::string atom = a.to_string();
    add(pred + ":" + atom);
    std::size_t start = 0;
    while (true) {
      std::size_t us = atom.find('_', start);
      std::string part = atom.substr(start, us == std::string::npos ? std::string::npos : us - start);
      if (!part.empty() && part != atom) add(part);
      if (us == std::string::npos) break;
      start = us + 1;
    }
  }
  normalize(v);
  return v;
}

const Embedder& default_embedder() {
  static const HashingEmbedder e;
  return e;
}

std::vector<double> embed_case(const std::vector<FuzzyFact>& facts, const Embedder& embedder) {
  if (facts.empty()) throw EmptyCase("no facts to embed");
  std::vector<double> v(embedder.dim(), 0.0);
  for (const auto& f : facts) {
    auto fv = embedder.embed_fact(f);
    for (std::size_t i = 0; i < v.size(); ++i) v[i] += fv[i];
  }
  for (double& x : v) x /= static_cast<double>(facts.size());
  normalize(v);
  return v;
}

double cosine(const std::vector<double>& a, const std::vector<double>& b) {
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size() && i < b.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) return 0.0;
  return std::clamp(dot / (std::sqrt(na) * std::sqrt(nb)), -1.0, 1.0);
}

void CaseIndex::add(IndexEntry entry) {
  if (entry.vector.size() != dim_) {
    throw Error("index entry '" + entry.id + "' has dimension " +
                std::to_string(entry.vector.size()) + ", expected " + std::to_string(dim_));
  }
  double n = 0.0;
  for (double x : entry.vector) n += x * x;
  if (std::abs(std::sqrt(n) - 1.0) > 1e-9) throw Error("index entry '" + entry.id + "' is not unit length");
  if (by_id_.count(entry.id)) throw DuplicateClause("duplicate case id '" + entry.id + "'");
  by_id_.emplace(entry.id, entries_.size());
  entries_.push_back(std::move(entry));
}

void CaseIndex::add_case(std::string id, const std::vector<FuzzyFact>& facts,
                         std::vector<Symbol> labels, const Embedder& embedder) {
  IndexEntry e{std::move(id), embed_case(facts, embedder), std::move(labels), {}};
  std::set<Symbol> seen;
  for (const auto& f : facts) {
    if (is_symptom(f) && seen.insert(*f.literal.args[0].atom).second) {
      e.symptoms.push_back(*f.literal.args[0].atom);
    }
  }
  add(std::move(e));
}

CaseIndex CaseIndex::from_jsonl(std::string_view text) {
  std::optional<CaseIndex> index;
  std::size_t line_no = 0, pos = 0;
  while (pos < text.size()) {
    std::size_t nl = text.find('\n', pos);
    std::string_view line = text.substr(pos, nl == std::string_view::npos ? text.npos : nl - pos);
    pos = nl == std::string_view::npos ? text.size() : nl + 1;
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string_view::npos) continue;
    try {
      auto j = nlohmann::json::parse(line);
      IndexEntry e;
      e.id = j.at("id").get<std::string>();
      e.vector = j.at("vector").get<std::vector<double>>();
      for (const auto& l : j.at("labels")) e.labels.emplace_back(l.get<std::string>());
      if (j.contains("symptoms")) {
        for (const auto& s : j.at("symptoms")) e.symptoms.emplace_back(s.get<std::string>());
      }
      if (!index) index.emplace(e.vector.size());
      index->add(std::move(e));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(line_no, e.what());
    } catch (const ParseError&) {
      throw;
    } catch (const Error& e) {
      throw ParseError(line_no, e.what());
    }
  }
  return index ? std::move(*index) : CaseIndex();
}

std::string CaseIndex::to_jsonl() const {
  std::string out;
  for (const auto& e : entries_) {
    nlohmann::json labels = nlohmann::json::array(), symptoms = nlohmann::json::array();
    for (auto l : e.labels) labels.push_back(l.str());
    for (auto s : e.symptoms) symptoms.push_back(s.str());
    out += nlohmann::json{{"id", e.id}, {"vector", e.vector}, {"labels", labels}, {"symptoms", symptoms}}
               .dump();
    out += '\n';
  }
  return out;
}

double gini(const std::vector<Symbol>& labels) {
  if (labels.empty()) throw EmptySet("gini of an empty label set");
  std::map<Symbol, std::size_t> counts;
  for (auto l : labels) ++counts[l];
  double sum = 0.0;
  for (const auto& [l, c] : counts) {
    double p = static_cast<double>(c) / static_cast<double>(labels.size());
    sum += p * p;
  }
  return 1.0 - sum;
}

std::vector<Neighbour> retrieve_neighbours(const CaseIndex& index, const std::vector<double>& v,
                                           std::size_t k_max, double gini_threshold) {
  if (index.empty()) throw EmptyIndex("case index is empty");
  if (k_max < 1) throw Error("k_max must be at least 1");
  std::vector<Neighbour> all;
  all.reserve(index.size());
  for (const auto& e : index.entries()) all.push_back({&e, cosine(v, e.vector)});
  std::sort(all.begin(), all.end(), [](const Neighbour& a, const Neighbour& b) {
    if (a.cosine != b.cosine) return a.cosine > b.cosine;
    return a.entry->id < b.entry->id;
  });
  all.resize(std::min(k_max, all.size()));
  auto impurity = [&] {
    std::vector<Symbol> labels;
    for (const auto& n : all) {
      std::set<Symbol> once(n.entry->labels.begin(), n.entry->labels.end());
      labels.insert(labels.end(), once.begin(), once.end());
    }
    return labels.empty() ? 0.0 : gini(labels);
  };
  while (all.size() > 1 && impurity() >= gini_threshold) all.pop_back();
  return all;
}

double neighbour_prior(Symbol symptom, const std::vector<Neighbour>& neighbours) {
  double best = 0.0;
  for (const auto& n : neighbours) {
    const auto& s = n.entry->symptoms;
    if (std::find(s.begin(), s.end(), symptom) != s.end()) best = std::max(best, n.cosine);
  }
  return best;
}

std::vector<double> blend_weights(const std::vector<double>& w_text,
                                  const std::vector<double>& w_retr, double alpha, double beta) {
  if (w_text.empty()) throw EmptySymptomSet("no symptoms to blend");
  if (w_text.size() != w_retr.size()) throw Error("blend_weights: size mismatch");
  std::vector<double> out(w_text.size());
  double total = 0.0;
  for (std::size_t i = 0; i < w_text.size(); ++i) {
    check_unit(w_text[i], "w_text");
    check_unit(w_retr[i], "w_retr");
    out[i] = std::exp(alpha * w_text[i]) + std::exp(beta * w_retr[i]);
    total += out[i];
  }
  for (double& w : out) w /= total;
  return out;
}

std::string_view to_string(RescaleMode m) {
  return m == RescaleMode::MaxNormalized ? "max_normalized" : "raw";
}

RescaleMode rescale_from_string(std::string_view s) {
  if (s == "max_normalized") return RescaleMode::MaxNormalized;
  if (s == "raw") return RescaleMode::Raw;
  throw Error("unknown rescale mode '" + std::string(s) + "'");
}

std::vector<double> rescale_for_inference(const std::vector<double>& w, RescaleMode mode) {
  if (mode == RescaleMode::Raw || w.empty()) return w;
  double m = *std::max_element(w.begin(), w.end());
  std::vector<double> out(w);
  if (m > 0.0) {
    for (double& x : out) x /= m;
  }
  return out;
}

double lookup_prior(const std::vector<PriorEntry>& priors, Symbol disease,
                    const Demographics& demographics, std::optional<double> floor) {
  auto fits = [](const Term& t, const std::optional<Symbol>& value) {
    return t.is_wildcard() || (value && *t.atom == *value);
  };
  std::optional<Symbol> band;
  if (demographics.age) band = age_band(*demographics.age);
  const PriorEntry* best = nullptr;
  for (const auto& p : priors) {
    if (p.disease != disease) continue;
    if (!fits(p.age_band, band) || !fits(p.sex, demographics.sex) ||
        !fits(p.region, demographics.region)) {
      continue;
    }
    if (!best || p.wildcard_count() < best->wildcard_count()) best = &p;
  }
  if (best) return best->prevalence;
  if (floor) return *floor;
  throw MissingPrior("no prior for '" + disease.str() + "'");
}

std::vector<DiagnosisCandidate> fuse_priors(std::vector<DiagnosisCandidate> candidates,
                                            const std::vector<PriorEntry>& priors,
                                            const Demographics& demographics,
                                            std::optional<double> floor) {
  double total = 0.0;
  for (auto& c : candidates) {
    c.prior = lookup_prior(priors, c.disease, demographics, floor);
    total += c.activation * *c.prior;
  }
  for (auto& c : candidates) {
    c.posterior = total > 0.0 ? c.activation * *c.prior / total : 0.0;
  }
  std::stable_sort(candidates.begin(), candidates.end(), [](const auto& a, const auto& b) {
    if (*a.posterior != *b.posterior) return *a.posterior > *b.posterior;
    if (a.activation != b.activation) return a.activation > b.activation;
    return a.disease < b.disease;
  });
  return candidates;
}

nlohmann::json to_json(const EngineConfig& c) {
  nlohmann::json overrides = nlohmann::json::object();
  for (const auto& [s, w] : c.overrides) overrides[s.str()] = w;
  nlohmann::json j{{"tnorm", to_string(c.inference.tnorm)},
                   {"gamma", c.inference.gamma},
                   {"gamma_neg", c.inference.gamma_neg},
                   {"alpha", c.alpha},
                   {"beta", c.beta},
                   {"rescale", to_string(c.rescale)},
                   {"k_max", c.k_max},
                   {"gini_threshold", c.gini_threshold},
                   {"blend", c.blend},
                   {"crisp", c.crisp},
                   {"use_priors", c.use_priors},
                   {"prior_floor", nullptr},
                   {"overrides", overrides}};
  if (c.prior_floor) j["prior_floor"] = *c.prior_floor;
  return j;
}

EngineConfig engine_config_from_json(const nlohmann::json& j, EngineConfig c) {
  if (!j.is_object()) throw Error("engine config must be a JSON object");
  try {
    for (const auto& [key, v] : j.items()) {
      if (key == "tnorm") {
        c.inference.tnorm = tnorm_from_string(v.get<std::string>());
      } else if (key == "gamma") {
        c.inference.gamma = v.get<double>();
      } else if (key == "gamma_neg") {
        c.inference.gamma_neg = v.get<double>();
      } else if (key == "alpha") {
        c.alpha = v.get<double>();
      } else if (key == "beta") {
        c.beta = v.get<double>();
      } else if (key == "rescale") {
        c.rescale = rescale_from_string(v.get<std::string>());
      } else if (key == "k_max") {
        c.k_max = v.get<std::size_t>();
      } else if (key == "gini_threshold") {
        c.gini_threshold = v.get<double>();
      } else if (key == "blend") {
        c.blend = v.get<bool>();
      } else if (key == "crisp") {
        c.crisp = v.get<bool>();
      } else if (key == "use_priors") {
        c.use_priors = v.get<bool>();
      } else if (key == "prior_floor") {
        c.prior_floor = v.is_null() ? std::nullopt : std::optional(v.get<double>());
      } else if (key == "overrides") {
        for (const auto& [s, w] : v.items()) {
          check_unit(w.get<double>(), "override");
          c.overrides[Symbol(s)] = w.get<double>();
        }
      } else {
        throw Error("unknown engine config key '" + key + "'");
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("engine config: ") + e.what());
  }
  return c;
}

Demographics demographics_from_json(const nlohmann::json& j) {
  Demographics d;
  if (j.is_null()) return d;
  if (!j.is_object()) throw Error("demographics must be an object");
  try {
    for (const auto& [key, v] : j.items()) {
      if (v.is_null()) continue;
      if (key == "age") {
        d.age = v.get<int>();
      } else if (key == "sex") {
        d.sex = Symbol(v.get<std::string>());
      } else if (key == "region") {
        d.region = Symbol(v.get<std::string>());
      } else {
        throw Error("unknown demographics key '" + key + "'");
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("demographics: ") + e.what());
  }
  return d;
}

nlohmann::json to_json(const Demographics& d) {
  nlohmann::json j = nlohmann::json::object();
  if (d.age) j["age"] = *d.age;
  if (d.sex) j["sex"] = d.sex->str();
  if (d.region) j["region"] = d.region->str();
  return j;
}

std::vector<FuzzyFact> symptoms_from_json(const nlohmann::json& j) {
  if (!j.is_array()) throw Error("symptoms must be an array");
  std::vector<FuzzyFact> out;
  try {
    for (const auto& s : j) {
      double w = s.value("weight", 1.0);
      check_unit(w, "symptom weight");
      out.push_back({Literal::make("symptom", {s.at("name").get<std::string>()}), w});
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("symptoms: ") + e.what());
  }
  return out;
}

Diagnosis diagnose(const CaseInput& input, const KnowledgeBase& kb, const EngineConfig& config,
                   const DiagnoseContext& ctx) {
  Diagnosis out;
  out.demographics = input.demographics;
  if (input.note) {
    if (!input.facts.empty()) throw Error("give either a note or facts, not both");
    LexiconExtractor fallback;
    const Extractor& ex = ctx.extractor ? *ctx.extractor : fallback;
    auto r = run_extraction(*input.note, ex, kb.lexicon,
                            ctx.terms ? *ctx.terms : default_term_table());
    out.facts = r.facts;
    const Demographics& found = r.demographics;
    if (!out.demographics.age) out.demographics.age = found.age;
    if (!out.demographics.sex) out.demographics.sex = found.sex;
    if (!out.demographics.region) out.demographics.region = found.region;
    out.note = *input.note;
    out.extraction = std::move(r);
  } else {
    if (input.facts.empty()) throw EmptyCase("case has no facts");
    out.facts = input.facts;
  }
  for (const auto& f : out.facts) check_unit(f.weight, "fact weight");
  if (out.facts.empty()) return out;

  std::vector<std::size_t> symptom_at;
  for (std::size_t i = 0; i < out.facts.size(); ++i) {
    if (!is_symptom(out.facts[i])) continue;
    symptom_at.push_back(i);
    auto& f = out.facts[i];
    auto it = config.overrides.find(*f.literal.args[0].atom);
    if (it != config.overrides.end()) f.weight = it->second;
    out.weights.push_back({*f.literal.args[0].atom, f.weight, 0.0, f.weight, f.weight});
  }

  if (config.crisp) {
    for (auto& f : out.facts) f.weight = 1.0;
    for (auto& w : out.weights) w.activation = 1.0;
  } else if (config.blend && !symptom_at.empty()) {
    if (ctx.index && !ctx.index->empty()) {
      auto v = embed_case(out.facts, ctx.embedder ? *ctx.embedder : default_embedder());
      auto nb = retrieve_neighbours(*ctx.index, v, config.k_max, config.gini_threshold);
      for (const auto& n : nb) out.neighbours.emplace_back(n.entry->id, n.cosine);
      for (auto& w : out.weights) w.w_retr = neighbour_prior(w.symptom, nb);
    }
    std::vector<double> text, retr;
    for (const auto& w : out.weights) {
      text.push_back(w.w_text);
      retr.push_back(w.w_retr);
    }
    auto blended = blend_weights(text, retr, config.alpha, config.beta);
    auto act = rescale_for_inference(blended, config.rescale);
    for (std::size_t i = 0; i < symptom_at.size(); ++i) {
      out.weights[i].blended = blended[i];
      out.weights[i].activation = act[i];
      out.facts[symptom_at[i]].weight = act[i];
    }
  }

  auto candidates = derive_candidates(kb, out.facts, config.inference);
  if (config.use_priors) {
    out.ranking = fuse_priors(std::move(candidates), kb.priors, out.demographics, config.prior_floor);
  } else {
    double total = 0.0;
    for (const auto& c : candidates) total += c.activation;
    for (auto& c : candidates) c.posterior = total > 0.0 ? c.activation / total : 0.0;
    out.ranking = std::move(candidates);
  }
  return out;
}

nlohmann::json to_json(const Diagnosis& d, std::size_t max_proof_nodes) {
  using nlohmann::json;
  json ranking = json::array();
  for (const auto& c : d.ranking) {
    json jc{{"disease", c.disease.str()},
            {"activation", c.activation},
            {"confidence", c.confidence},
            {"display_confidence", c.display_confidence()},
            {"prior", c.prior ? json(*c.prior) : json(nullptr)},
            {"posterior", c.posterior ? json(*c.posterior) : json(nullptr)}};
    std::size_t size = proof_size(c.proof);
    if (size <= max_proof_nodes) {
      jc["proof"] = proof_to_json(c, d.note);
      jc["explanation"] = explain(c, d.note);
    } else {
      jc["proof_ref"] = c.disease.str();
      jc["proof_size"] = size;
    }
    ranking.push_back(std::move(jc));
  }
  json weights = json::array();
  for (const auto& w : d.weights) {
    weights.push_back({{"symptom", w.symptom.str()},
                       {"w_text", w.w_text},
                       {"w_retr", w.w_retr},
                       {"blended", w.blended},
                       {"activation", w.activation}});
  }
  json neighbours = json::array();
  for (const auto& [id, cos] : d.neighbours) neighbours.push_back({{"id", id}, {"cosine", cos}});
  json facts = json::array();
  for (const auto& f : d.facts) facts.push_back(print_fact(f));
  json j{{"ranking", ranking},
         {"weights", weights},
         {"neighbours", neighbours},
         {"facts", facts},
         {"demographics", to_json(d.demographics)}};
  if (d.extraction) j["extraction"] = to_json(*d.extraction);
  return j;
}

AuditResult counterfactual_audit(const CaseInput& input, const SnapshotStore& store, long long t1,
                                 long long t2, const EngineConfig& config,
                                 const DiagnoseContext& ctx) {
  auto s1 = store.get(t1);
  auto s2 = store.get(t2);
  AuditResult a;
  a.t1 = t1;
  a.t2 = t2;
  a.result_t1 = diagnose(input, s1->kb, config, ctx);
  a.result_t2 = diagnose(input, s2->kb, config, ctx);
  std::map<Symbol, AuditDelta> by;
  auto collect = [&](const Diagnosis& d, bool second) {
    for (std::size_t i = 0; i < d.ranking.size(); ++i) {
      const auto& c = d.ranking[i];
      auto& e = by[c.disease];
      e.disease = c.disease;
      (second ? e.posterior_t2 : e.posterior_t1) = c.posterior.value_or(0.0);
      (second ? e.rank_t2 : e.rank_t1) = i + 1;
    }
  };
  collect(a.result_t1, false);
  collect(a.result_t2, true);
  for (auto& [d, e] : by) {
    e.delta = e.posterior_t2.value_or(0.0) - e.posterior_t1.value_or(0.0);
    a.deltas.push_back(e);
  }
  return a;
}

nlohmann::json to_json(const AuditResult& a) {
  using nlohmann::json;
  auto opt = [](const auto& o) { return o ? json(*o) : json(nullptr); };
  json deltas = json::array();
  for (const auto& d : a.deltas) {
    deltas.push_back({{"disease", d.disease.str()},
                      {"posterior_t1", opt(d.posterior_t1)},
                      {"posterior_t2", opt(d.posterior_t2)},
                      {"delta", d.delta},
                      {"rank_t1", opt(d.rank_t1)},
                      {"rank_t2", opt(d.rank_t2)}});
  }
  return {{"t1", a.t1},
          {"t2", a.t2},
          {"result_t1", to_json(a.result_t1)},
          {"result_t2", to_json(a.result_t2)},
          {"deltas", deltas}};
}

}  // namespace fdx
