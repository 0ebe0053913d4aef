#include "fuzzydx/evaluation.hpp"

#include <algorithm>
#include <cstdio>
#include <random>
#include <set>
#include <sstream>

#include "fuzzydx/dsl.hpp"
#include "fuzzydx/error.hpp"

namespace fdx {

namespace {

double sorted_sum(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  double t = 0.0;
  for (double x : v) t += x;
  return t;
}

std::vector<Symbol> ranked_names(const std::vector<DiagnosisCandidate>& ranking) {
  std::vector<Symbol> out;
  for (const auto& c : ranking) {
    if (std::find(out.begin(), out.end(), c.disease) == out.end()) out.push_back(c.disease);
  }
  return out;
}

std::optional<Symbol> first_symptom(const std::vector<FuzzyFact>& facts, bool by_span) {
  static const Symbol kSymptom("symptom");
  const FuzzyFact* best = nullptr;
  for (const auto& f : facts) {
    if (f.literal.predicate != kSymptom || f.literal.args.empty() || !f.literal.args[0].atom) continue;
    if (!best) {
      best = &f;
      if (!by_span) break;
      continue;
    }
    std::size_t a = f.provenance ? f.provenance->begin : SIZE_MAX;
    std::size_t b = best->provenance ? best->provenance->begin : SIZE_MAX;
    if (a < b) best = &f;
  }
  if (!best) return std::nullopt;
  return *best->literal.args[0].atom;
}

std::vector<Symbol> baseline_ranking(const EdgeView& edges, std::optional<Symbol> symptom) {
  if (!symptom) return {};
  std::vector<std::pair<double, Symbol>> hits;
  for (const auto& [key, w] : edges) {
    if (key.symptom == *symptom && w > 0.0) hits.emplace_back(w, key.disease);
  }
  std::stable_sort(hits.begin(), hits.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  std::vector<Symbol> out;
  for (const auto& h : hits) out.push_back(h.second);
  return out;
}

}  // namespace

EvalCase eval_case_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw Error("case must be a JSON object");
  EvalCase c;
  if (!j.contains("id")) throw Error("case is missing id");
  c.id = j.at("id").is_string() ? j.at("id").get<std::string>() : j.at("id").dump();
  bool has_text = j.contains("text") && !j.at("text").is_null();
  bool has_symptoms = j.contains("symptoms") && !j.at("symptoms").is_null();
  if (has_text == has_symptoms) throw Error("case " + c.id + " needs exactly one of text or symptoms");
  if (has_text) c.text = j.at("text").get<std::string>();
  else c.symptoms = symptoms_from_json(j.at("symptoms"));
  if (!j.contains("labels") || !j.at("labels").is_array() || j.at("labels").empty()) {
    throw Error("case " + c.id + " has no labels");
  }
  for (const auto& l : j.at("labels")) {
    auto s = l.get<std::string>();
    if (!Symbol::is_valid(s)) throw Error("invalid label '" + s + "'");
    c.labels.emplace_back(s);
  }
  if (j.contains("demographics")) c.demographics = demographics_from_json(j.at("demographics"));
  return c;
}

nlohmann::json to_json(const EvalCase& c) {
  nlohmann::json j{{"id", c.id}};
  if (c.text) {
    j["text"] = *c.text;
  } else {
    nlohmann::json s = nlohmann::json::array();
    for (const auto& f : c.symptoms) s.push_back({{"name", f.literal.args.at(0).to_string()}, {"weight", f.weight}});
    j["symptoms"] = s;
  }
  nlohmann::json labels = nlohmann::json::array();
  for (auto l : c.labels) labels.push_back(l.str());
  j["labels"] = labels;
  if (c.demographics.age || c.demographics.sex || c.demographics.region) j["demographics"] = to_json(c.demographics);
  return j;
}

std::vector<EvalCase> parse_dataset(std::string_view jsonl) {
  std::vector<EvalCase> out;
  std::size_t line_no = 0, pos = 0;
  while (pos < jsonl.size()) {
    std::size_t nl = jsonl.find('\n', pos);
    std::string_view line = jsonl.substr(pos, nl == std::string_view::npos ? jsonl.npos : nl - pos);
    pos = nl == std::string_view::npos ? jsonl.size() : nl + 1;
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string_view::npos) continue;
    try {
      out.push_back(eval_case_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(line_no, e.what());
    } catch (const Error& e) {
      throw ParseError(line_no, e.what());
    }
  }
  if (out.empty()) throw EmptyDataset("dataset holds no cases");
  return out;
}

std::vector<EvalCase> load_dataset(const std::string& path) { return parse_dataset(read_file(path)); }

std::string dataset_to_jsonl(const std::vector<EvalCase>& cases) {
  std::string out;
  for (const auto& c : cases) out += to_json(c).dump() + "\n";
  return out;
}

const TopK& MetricsReport::for_k(std::size_t k) const {
  for (const auto& t : at) {
    if (t.k == k) return t;
  }
  throw Error("k=" + std::to_string(k) + " not in report");
}

MetricsReport topk_metrics(const std::vector<std::vector<Symbol>>& predictions,
                           const std::vector<EvalCase>& cases, const std::vector<std::size_t>& ks) {
  if (predictions.size() != cases.size()) throw Error("prediction count does not match case count");
  if (cases.empty()) throw EmptyDataset("no cases to score");
  MetricsReport r;
  r.cases = cases.size();
  for (std::size_t i = 0; i < cases.size(); ++i) {
    std::set<Symbol> seen(predictions[i].begin(), predictions[i].end());
    if (seen.size() != predictions[i].size()) throw Error("duplicate disease in prediction for " + cases[i].id);
    if (cases[i].labels.empty()) throw EmptyTruth("case " + cases[i].id + " has no labels");
    r.per_case.push_back({cases[i].id, {}});
  }
  const double n = static_cast<double>(cases.size());
  for (std::size_t k : ks) {
    if (k == 0) throw Error("k must be >= 1");
    std::size_t any = 0, hit_total = 0;
    std::vector<double> recall;
    for (std::size_t i = 0; i < cases.size(); ++i) {
      std::set<Symbol> truth(cases[i].labels.begin(), cases[i].labels.end());
      std::size_t hit = 0;
      for (std::size_t j = 0; j < std::min(k, predictions[i].size()); ++j) hit += truth.count(predictions[i][j]);
      any += hit > 0;
      hit_total += hit;
      recall.push_back(static_cast<double>(hit) / static_cast<double>(truth.size()));
      r.per_case[i].hits.push_back(hit);
    }
    TopK t;
    t.k = k;
    t.accuracy = static_cast<double>(any) / n;
    t.precision = static_cast<double>(hit_total) / (static_cast<double>(k) * n);
    t.recall = sorted_sum(std::move(recall)) / n;
    double pr = t.precision + t.recall;
    t.f1 = pr > 0.0 ? 2.0 * t.precision * t.recall / pr : 0.0;
    r.at.push_back(t);
  }
  return r;
}

nlohmann::json to_json(const MetricsReport& r) {
  nlohmann::json at = nlohmann::json::array(), per_case = nlohmann::json::array();
  for (const auto& t : r.at) {
    at.push_back({{"k", t.k}, {"accuracy", t.accuracy}, {"precision", t.precision}, {"recall", t.recall}, {"f1", t.f1}});
  }
  for (const auto& c : r.per_case) per_case.push_back({{"id", c.id}, {"hits", c.hits}});
  return {{"cases", r.cases}, {"topk", at}, {"per_case", per_case}};
}

std::string format_report(const MetricsReport& r) {
  std::ostringstream out;
  char buf[128];
  std::snprintf(buf, sizeof buf, "%-4s %9s %9s %9s %9s\n", "k", "accuracy", "precision", "recall", "f1");
  out << buf;
  for (const auto& t : r.at) {
    std::snprintf(buf, sizeof buf, "%-4zu %9.4f %9.4f %9.4f %9.4f\n", t.k, t.accuracy, t.precision,
                  t.recall, t.f1);
    out << buf;
  }
  out << "cases: " << r.cases << "\n";
  return out.str();
}

std::string_view to_string(AblationMode m) {
  switch (m) {
    case AblationMode::SymbolicOnly: return "symbolic_only";
    case AblationMode::SymProb: return "sym_prob";
    case AblationMode::SymFuzzy: return "sym_fuzzy";
    case AblationMode::FullHybrid: return "full_hybrid";
    case AblationMode::SimpleBaseline: return "simple_baseline";
  }
  return "?";
}

AblationMode ablation_from_string(std::string_view s) {
  for (auto m : all_modes()) {
    if (to_string(m) == s) return m;
  }
  throw Error("unknown ablation mode '" + std::string(s) + "'");
}

const std::vector<AblationMode>& all_modes() {
  static const std::vector<AblationMode> m{AblationMode::SimpleBaseline, AblationMode::SymbolicOnly,
                                           AblationMode::SymProb, AblationMode::SymFuzzy,
                                           AblationMode::FullHybrid};
  return m;
}

EngineConfig config_for(AblationMode mode, EngineConfig c) {
  switch (mode) {
    case AblationMode::SymbolicOnly:
      c.crisp = true;
      c.blend = false;
      c.use_priors = false;
      break;
    case AblationMode::SymProb:
      c.crisp = true;
      c.blend = false;
      c.use_priors = true;
      break;
    case AblationMode::SymFuzzy:
      c.crisp = false;
      c.blend = false;
      c.use_priors = false;
      break;
    case AblationMode::FullHybrid:
      c.crisp = false;
      c.blend = true;
      c.use_priors = true;
      break;
    case AblationMode::SimpleBaseline:
      break;
  }
  return c;
}

BenchmarkResult run_benchmark(const KnowledgeBase& kb, const std::vector<EvalCase>& cases,
                              AblationMode mode, const EngineConfig& base,
                              const DiagnoseContext& ctx, const std::vector<std::size_t>& ks) {
  BenchmarkResult res;
  res.mode = mode;
  const EngineConfig config = config_for(mode, base);
  const EdgeView edges = edge_view(kb);
  LexiconExtractor fallback;
  const Extractor& extractor = ctx.extractor ? *ctx.extractor : fallback;
  const TermTable& terms = ctx.terms ? *ctx.terms : default_term_table();
  std::vector<std::vector<Symbol>> predictions;
  std::size_t accepted = 0, rejected = 0;

  for (const auto& c : cases) {
    CaseTrace trace{c.id, c.labels, {}, 0, 0};
    std::optional<ExtractionResult> extraction;
    if (mode == AblationMode::SimpleBaseline) {
      if (c.text) {
        extraction = run_extraction(*c.text, extractor, kb.lexicon, terms);
        trace.ranking = baseline_ranking(edges, first_symptom(extraction->facts, true));
      } else {
        trace.ranking = baseline_ranking(edges, first_symptom(c.symptoms, false));
      }
    } else {
      CaseInput input{c.text, c.text ? std::vector<FuzzyFact>{} : c.symptoms, c.demographics};
      try {
        Diagnosis d = diagnose(input, kb, config, ctx);
        trace.ranking = ranked_names(d.ranking);
        extraction = std::move(d.extraction);
      } catch (const EmptyCase&) {
      }
    }
    if (extraction) {
      trace.accepted = extraction->verification.accepted.size();
      trace.rejected = extraction->verification.rejected.size();
      accepted += trace.accepted;
      rejected += trace.rejected;
    }
    predictions.push_back(trace.ranking);
    res.traces.push_back(std::move(trace));
  }
  res.report = topk_metrics(predictions, cases, ks);
  if (accepted + rejected > 0) {
    res.verifier_rejection_rate = static_cast<double>(rejected) / static_cast<double>(accepted + rejected);
  }
  return res;
}

nlohmann::json to_json(const BenchmarkResult& r) {
  nlohmann::json traces = nlohmann::json::array();
  for (const auto& t : r.traces) {
    nlohmann::json labels = nlohmann::json::array(), ranking = nlohmann::json::array();
    for (auto l : t.labels) labels.push_back(l.str());
    for (auto d : t.ranking) ranking.push_back(d.str());
    traces.push_back({{"id", t.id}, {"labels", labels}, {"ranking", ranking},
                      {"verifier_accepted", t.accepted}, {"verifier_rejected", t.rejected}});
  }
  auto j = to_json(r.report);
  j["mode"] = std::string(to_string(r.mode));
  j["verifier_rejection_rate"] = r.verifier_rejection_rate;
  j["verifier_rejection_rate_note"] = "deterministic verifier proxy, not a judged error rate";
  j["traces"] = traces;
  return j;
}

SyntheticBenchmark make_synthetic_benchmark(std::uint64_t seed, std::size_t n_cases,
                                            std::size_t n_index) {
  static const std::vector<std::string> core{"fever", "cough", "rash", "wheezing", "palpitations", "heartburn"};
  static const std::vector<std::string> extra{"headache", "fatigue", "dizziness"};
  static const std::vector<std::string> hedges{"mild", "occasional", "intermittent"};
  static const std::vector<std::string> negatable{"nausea", "vomiting", "syncope", "diaphoresis"};
  const std::size_t groups = core.size();
  auto disease = [](std::size_t g, bool twin) { return "d" + std::to_string(g) + (twin ? "b" : "a"); };

  std::string text;
  for (std::size_t g = 0; g < groups; ++g) {
    for (bool twin : {false, true}) {
      text += "diagnosis(" + disease(g, twin) + ") :- symptom(" + core[g] + ")@0.9, symptom(" +
              core[(g + 1) % groups] + ")@0.9.\n";
      text += "prior(" + disease(g, twin) + ", _, male, _, " + (twin ? "0.02" : "0.08") + ").\n";
      text += "prior(" + disease(g, twin) + ", _, female, _, " + (twin ? "0.08" : "0.02") + ").\n";
    }
  }
  SyntheticBenchmark out{KnowledgeBase::from_program(parse_program(text), default_hedge_lexicon()), {}, CaseIndex{}};

  std::mt19937_64 rng(seed);
  auto coin = [&](double p) { return std::uniform_real_distribution<double>(0.0, 1.0)(rng) < p; };
  auto pick = [&](const std::vector<std::string>& xs) {
    return xs[std::uniform_int_distribution<std::size_t>(0, xs.size() - 1)(rng)];
  };
  auto make_case = [&](const std::string& id) {
    std::size_t g = std::uniform_int_distribution<std::size_t>(0, groups - 1)(rng);
    bool twin = coin(0.5);
    bool male = coin(0.85) != twin;
    int age = std::uniform_int_distribution<int>(20, 80)(rng);
    std::vector<std::string> strong{core[g], core[(g + 1) % groups]};
    if (coin(0.5)) strong.push_back(pick(extra));
    std::shuffle(strong.begin(), strong.end(), rng);
    std::string note = "A " + std::to_string(age) + "-year-old " + (male ? "male" : "female") +
                       " presents with " + strong[0];
    for (std::size_t i = 1; i < strong.size(); ++i) note += (i + 1 == strong.size() ? " and " : ", ") + strong[i];
    note += ".";
    if (coin(0.6)) {
      std::size_t other = coin(0.5) ? (g + 2) % groups : (g + groups - 1) % groups;
      note += " Also reports " + pick(hedges) + " " + core[other] + ".";
    }
    if (coin(0.4)) note += " Denies " + pick(negatable) + ".";
    EvalCase c;
    c.id = id;
    c.text = note;
    c.labels = {Symbol(disease(g, twin))};
    return c;
  };

  for (std::size_t i = 0; i < n_cases; ++i) out.cases.push_back(make_case("syn" + std::to_string(i)));
  LexiconExtractor extractor;
  for (std::size_t i = 0; i < n_index; ++i) {
    auto c = make_case("ix" + std::to_string(i));
    auto r = run_extraction(*c.text, extractor, out.kb.lexicon);
    if (!r.facts.empty()) out.index.add_case(c.id, r.facts, c.labels);
  }
  return out;
}

}  // namespace fdx
