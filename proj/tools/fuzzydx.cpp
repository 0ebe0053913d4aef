#include <cstdio>
#include <filesystem>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <httplib.h>

#include "fuzzydx/dsl.hpp"
#include "fuzzydx/error.hpp"
#include "fuzzydx/evaluation.hpp"
#include "fuzzydx/learning.hpp"
#include "fuzzydx/service.hpp"

using namespace fdx;
using nlohmann::json;

namespace {

struct Settings {
  bool as_json = false;
  std::string config_path;
  EngineConfig engine;
  LearnerConfig learner;
};

void load_config(Settings& s) {
  if (s.config_path.empty()) return;
  json j = json::parse(read_file(s.config_path), nullptr, false);
  if (j.is_discarded() || !j.is_object()) throw Error(s.config_path + ": config must be a JSON object");
  for (const auto& [key, v] : j.items()) {
    if (key == "engine") s.engine = engine_config_from_json(v, s.engine);
    else if (key == "learner") s.learner = learner_config_from_json(v, s.learner);
    else throw Error(s.config_path + ": unknown config section '" + key + "'");
  }
}

KnowledgeBase load_kb(const std::string& path, const std::string& lexicon_path) {
  Lexicon lex = lexicon_path.empty() ? default_hedge_lexicon() : parse_lexicon(read_file(lexicon_path));
  return KnowledgeBase::from_program(parse_program(read_file(path)), std::move(lex));
}

std::optional<CaseIndex> load_index(const std::string& path) {
  if (path.empty()) return std::nullopt;
  return CaseIndex::from_jsonl(read_file(path));
}

void print_json(const json& j) { std::cout << j.dump(2) << "\n"; }

void print_ranking(const Diagnosis& d) {
  if (d.ranking.empty()) {
    std::cout << "no diagnosis fired\n";
    return;
  }
  std::printf("%-4s %-28s %10s %10s %10s\n", "rank", "disease", "posterior", "activation", "prior");
  for (std::size_t i = 0; i < d.ranking.size(); ++i) {
    const auto& c = d.ranking[i];
    std::printf("%-4zu %-28s %10.4f %10.4f %10s\n", i + 1, c.disease.str().c_str(), c.posterior.value_or(0.0),
                c.activation, c.prior ? format_weight(*c.prior).c_str() : "-");
  }
  std::cout << "\n" << explain(d.ranking.front(), d.note);
}

// Engine flags that override the config file.
struct EngineFlags {
  std::optional<std::string> tnorm;
  std::optional<double> alpha, beta, gamma;
  std::optional<std::string> rescale;
  bool no_priors = false;
  bool crisp = false;
  bool no_blend = false;

  void add(CLI::App* app) {
    app->add_option("--tnorm", tnorm, "product | min | lukasiewicz");
    app->add_option("--alpha", alpha, "text weight temperature");
    app->add_option("--beta", beta, "retrieval weight temperature");
    app->add_option("--gamma", gamma, "rule firing threshold");
    app->add_option("--rescale", rescale, "max_normalized | raw");
    app->add_flag("--no-priors", no_priors, "rank by activation only");
    app->add_flag("--crisp", crisp, "force every fact weight to 1");
    app->add_flag("--no-blend", no_blend, "skip the retrieval blend");
  }

  EngineConfig apply(EngineConfig c) const {
    if (tnorm) c.inference.tnorm = tnorm_from_string(*tnorm);
    if (alpha) c.alpha = *alpha;
    if (beta) c.beta = *beta;
    if (gamma) c.inference.gamma = *gamma;
    if (rescale) c.rescale = rescale_from_string(*rescale);
    if (no_priors) c.use_priors = false;
    if (crisp) c.crisp = true;
    if (no_blend) c.blend = false;
    return c;
  }
};

CaseInput read_case(const std::string& note, const std::string& case_file) {
  if (!note.empty() && !case_file.empty()) throw Error("give either --note or --case");
  if (!note.empty()) return CaseInput{read_file(note), {}, {}};
  if (case_file.empty()) throw Error("a case is required: --note <file> or --case <file.json>");
  json j = json::parse(read_file(case_file), nullptr, false);
  if (j.is_discarded()) throw Error(case_file + ": not valid JSON");
  return case_input_from_json(j);
}

std::pair<std::string, int> parse_listen(const std::string& listen) {
  auto colon = listen.rfind(':');
  if (colon == std::string::npos) throw Error("--listen expects host:port");
  int port = 0;
  try {
    port = std::stoi(listen.substr(colon + 1));
  } catch (const std::exception&) {
    throw Error("invalid port in '" + listen + "'");
  }
  return {listen.substr(0, colon), port};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Neuro-symbolic fuzzy diagnosis engine"};
  app.require_subcommand(1);
  Settings settings;
  app.add_flag("--json", settings.as_json, "machine-readable JSON on stdout");
  app.add_option("--config", settings.config_path, "JSON config with \"engine\" and \"learner\" sections");

  auto* parse = app.add_subcommand("parse", "validate a knowledge base file");
  std::string parse_file;
  parse->add_option("file", parse_file, "rule file")->required();

  auto* diag = app.add_subcommand("diagnose", "rank diagnoses for one case");
  std::string kb_path, lexicon_path, note_path, case_path, index_path;
  bool priors_in_kb = false;
  std::size_t max_proof_nodes = SIZE_MAX;
  EngineFlags engine_flags;
  diag->add_option("--kb", kb_path, "rule file")->required();
  diag->add_option("--lexicon", lexicon_path, "hedge lexicon TSV");
  diag->add_option("--note", note_path, "clinical note text file");
  diag->add_option("--case", case_path, "case JSON {note | symptoms, demographics}");
  diag->add_option("--index", index_path, "case index JSONL");
  diag->add_flag("--priors-in-kb", priors_in_kb, "fuse the prior clauses found in the KB (default)");
  diag->add_option("--max-proof-nodes", max_proof_nodes, "inline proofs up to this size");
  engine_flags.add(diag);

  auto* eval = app.add_subcommand("eval", "top-k metrics over a dataset");
  std::string eval_kb, eval_lexicon, data_path, eval_index, mode_name = "full_hybrid";
  bool synthetic = false;
  std::uint64_t seed = 42;
  std::size_t synth_cases = 200;
  eval->add_option("--kb", eval_kb, "rule file");
  eval->add_option("--lexicon", eval_lexicon, "hedge lexicon TSV");
  eval->add_option("--data", data_path, "dataset JSONL");
  eval->add_option("--index", eval_index, "case index JSONL");
  eval->add_option("--mode", mode_name, "ablation mode or 'all'");
  eval->add_flag("--synthetic", synthetic, "use the built-in synthetic benchmark");
  eval->add_option("--seed", seed, "synthetic generator seed");
  eval->add_option("--cases", synth_cases, "synthetic case count");

  auto* synth = app.add_subcommand("synth", "write the synthetic benchmark to a directory");
  std::string synth_out;
  synth->add_option("--out", synth_out, "output directory")->required();
  synth->add_option("--seed", seed, "generator seed");
  synth->add_option("--cases", synth_cases, "case count");

  auto* learn = app.add_subcommand("learn", "run the online learner over a case stream");
  std::string learn_kb, learn_lexicon, stream_path, out_dir;
  std::size_t passes = 1;
  bool induce = false;
  learn->add_option("--kb", learn_kb, "starting rule file")->required();
  learn->add_option("--lexicon", learn_lexicon, "hedge lexicon TSV");
  learn->add_option("--stream", stream_path, "case stream JSONL")->required();
  learn->add_option("--out", out_dir, "snapshot store directory")->required();
  learn->add_option("--passes", passes, "maximum passes over the stream");
  learn->add_flag("--induce", induce, "also induce rules from the stream");

  auto* diff_cmd = app.add_subcommand("diff", "diff two snapshots or two rule files");
  std::string diff_a, diff_b, diff_store;
  diff_cmd->add_option("a", diff_a, "older version or file")->required();
  diff_cmd->add_option("b", diff_b, "newer version or file")->required();
  diff_cmd->add_option("--store", diff_store, "snapshot store directory (a and b are versions)");

  auto* audit = app.add_subcommand("audit", "counterfactual replay of one case at two versions");
  std::string audit_store, audit_case, audit_note, audit_index;
  long long t1 = 0, t2 = 0;
  audit->add_option("--store", audit_store, "snapshot store directory")->required();
  audit->add_option("--case", audit_case, "case JSON");
  audit->add_option("--note", audit_note, "note text file");
  audit->add_option("--index", audit_index, "case index JSONL");
  audit->add_option("--t1", t1, "first version")->required();
  audit->add_option("--t2", t2, "second version")->required();

  auto* serve = app.add_subcommand("serve", "serve the HTTP API");
  std::string serve_store, listen = "127.0.0.1:8080", serve_kb, serve_lexicon, serve_index;
  serve->add_option("--store", serve_store, "snapshot store directory")->required();
  serve->add_option("--listen", listen, "host:port");
  serve->add_option("--kb", serve_kb, "seed rule file for an empty store");
  serve->add_option("--lexicon", serve_lexicon, "hedge lexicon TSV for the seed");
  serve->add_option("--index", serve_index, "case index JSONL");

  auto* index_cmd = app.add_subcommand("index", "build a case index from a dataset");
  std::string index_data, index_out, index_lexicon;
  index_cmd->add_option("--data", index_data, "dataset JSONL")->required();
  index_cmd->add_option("--out", index_out, "index JSONL")->required();
  index_cmd->add_option("--lexicon", index_lexicon, "hedge lexicon TSV");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    load_config(settings);

    if (*parse) {
      Program p = parse_program(read_file(parse_file));
      auto kb = KnowledgeBase::from_program(p);
      verify_consistency(kb);
      if (settings.as_json) {
        json diseases = json::array();
        for (auto d : kb.diseases()) diseases.push_back(d.str());
        print_json({{"file", parse_file}, {"rules", p.rules.size()}, {"facts", p.facts.size()},
                    {"priors", p.priors.size()}, {"diseases", diseases}, {"content_hash", kb.content_hash()}});
      } else {
        std::cout << p.rules.size() << " rules, " << p.facts.size() << " facts, " << p.priors.size()
                  << " priors\n";
      }
      return 0;
    }

    if (*diag) {
      auto kb = load_kb(kb_path, lexicon_path);
      auto index = load_index(index_path);
      EngineConfig cfg = engine_flags.apply(settings.engine);
      if (priors_in_kb) cfg.use_priors = true;
      DiagnoseContext ctx;
      if (index) ctx.index = &*index;
      Diagnosis d = diagnose(read_case(note_path, case_path), kb, cfg, ctx);
      if (settings.as_json) print_json(to_json(d, max_proof_nodes));
      else print_ranking(d);
      return 0;
    }

    if (*eval) {
      std::vector<AblationMode> modes;
      if (mode_name == "all") modes = all_modes();
      else modes.push_back(ablation_from_string(mode_name));
      KnowledgeBase kb;
      std::vector<EvalCase> cases;
      std::optional<CaseIndex> index;
      if (synthetic) {
        if (!eval_kb.empty() || !data_path.empty()) throw Error("--synthetic replaces --kb and --data");
        auto bench = make_synthetic_benchmark(seed, synth_cases);
        kb = std::move(bench.kb);
        cases = std::move(bench.cases);
        index = std::move(bench.index);
      } else {
        if (eval_kb.empty() || data_path.empty()) throw Error("eval needs --kb and --data, or --synthetic");
        kb = load_kb(eval_kb, eval_lexicon);
        cases = load_dataset(data_path);
        index = load_index(eval_index);
      }
      DiagnoseContext ctx;
      if (index) ctx.index = &*index;
      json all = json::array();
      for (auto m : modes) {
        auto r = run_benchmark(kb, cases, m, settings.engine, ctx);
        if (settings.as_json) {
          all.push_back(to_json(r));
        } else {
          std::cout << "mode: " << to_string(m) << "\n" << format_report(r.report);
          std::printf("verifier rejection rate (proxy): %.4f\n\n", r.verifier_rejection_rate);
        }
      }
      if (settings.as_json) print_json(modes.size() == 1 ? all[0] : all);
      return 0;
    }

    if (*synth) {
      auto bench = make_synthetic_benchmark(seed, synth_cases);
      std::filesystem::create_directories(synth_out);
      write_file(synth_out + "/synthetic.kb", print_program(Program{bench.kb.rules, {}, bench.kb.priors}));
      write_file(synth_out + "/synthetic_dataset.jsonl", dataset_to_jsonl(bench.cases));
      write_file(synth_out + "/synthetic_index.jsonl", bench.index.to_jsonl());
      std::cout << bench.cases.size() << " cases, " << bench.index.size() << " index entries written to "
                << synth_out << "\n";
      return 0;
    }

    if (*learn) {
      auto start = load_kb(learn_kb, learn_lexicon);
      auto stream = load_case_stream(read_file(stream_path));
      auto store = SnapshotStore::open(out_dir, start);
      auto head = store.head();
      LearnOptions opts;
      opts.max_passes = passes;
      opts.created_at = head->version + 1;
      auto res = learn_stream(head->kb, stream, settings.learner, opts);
      if (induce) {
        for (auto& r : induce_rules(stream, log_odds_scorer, settings.learner.tau_induct, &res.kb, 3, 2,
                                    opts.created_at)) {
          res.kb.rules.push_back(r.rule);
          res.log.push_back(RuleInduced{std::move(r.rule), r.score});
        }
        res.kb.normalize();
      }
      CommitOptions copts;
      copts.author = "learner";
      copts.note = "learn " + stream_path;
      auto next = store.commit_content(head->version, res.kb, copts);
      std::string log_path = out_dir + "/update_log_v" + std::to_string(next->version) + ".jsonl";
      write_file(log_path, log_to_jsonl(res.log));
      std::size_t violations = count_violations(res.kb, stream, settings.learner);
      if (settings.as_json) {
        print_json({{"version", next->version}, {"content_hash", next->content_hash}, {"log", log_path},
                    {"events", res.log.size()}, {"updates_per_pass", res.updates_per_pass},
                    {"violations", violations}});
      } else {
        std::cout << "v" << next->version << " " << next->content_hash << "\n"
                  << res.log.size() << " events over " << res.updates_per_pass.size() << " passes, "
                  << violations << " violations remaining\nlog: " << log_path << "\n";
      }
      return 0;
    }

    if (*diff_cmd) {
      SnapshotDiff d;
      if (!diff_store.empty()) {
        auto store = SnapshotStore::open(diff_store);
        long long a = std::stoll(diff_a), b = std::stoll(diff_b);
        auto sa = store.get(a), sb = store.get(b);
        if (a == b) {
          d = diff_content(sa->kb, sb->kb);
          d.from_version = d.to_version = a;
        } else {
          d = diff(*sa, *sb);
        }
      } else {
        d = diff_content(load_kb(diff_a, ""), load_kb(diff_b, ""));
      }
      if (settings.as_json) {
        print_json(to_json(d));
      } else {
        for (const auto& r : d.added_rules) std::cout << "+ " << print_rule(r) << "\n";
        for (const auto& id : d.removed_rules) std::cout << "- " << id << "\n";
        for (const auto& w : d.weight_deltas) {
          std::cout << "~ " << w.rule_id << " " << w.literal << " " << format_weight(w.old_weight) << " -> "
                    << format_weight(w.new_weight) << "\n";
        }
        for (const auto& l : d.lexicon_deltas) std::cout << "~ lexicon " << l.term << "\n";
        for (const auto& p : d.prior_deltas) std::cout << "~ prior " << p.stratum.disease.str() << "\n";
        if (d.empty()) std::cout << "no differences\n";
      }
      return 0;
    }

    if (*audit) {
      auto store = SnapshotStore::open(audit_store);
      auto index = load_index(audit_index);
      DiagnoseContext ctx;
      if (index) ctx.index = &*index;
      auto a = counterfactual_audit(read_case(audit_note, audit_case), store, t1, t2, settings.engine, ctx);
      if (settings.as_json) {
        print_json(to_json(a));
      } else {
        std::printf("%-28s %10s %10s %10s\n", "disease", "t1", "t2", "delta");
        for (const auto& d : a.deltas) {
          std::printf("%-28s %10.4f %10.4f %+10.4f\n", d.disease.str().c_str(), d.posterior_t1.value_or(0.0),
                      d.posterior_t2.value_or(0.0), d.delta);
        }
      }
      return 0;
    }

    if (*serve) {
      std::optional<KnowledgeBase> seed_kb;
      if (!serve_kb.empty()) seed_kb = load_kb(serve_kb, serve_lexicon);
      auto store = SnapshotStore::open(serve_store, seed_kb);
      auto index = load_index(serve_index);
      DiagnoseContext ctx;
      if (index) ctx.index = &*index;
      ServiceConfig scfg;
      scfg.engine = settings.engine;
      scfg.learner = settings.learner;
      Service service(store, scfg, ctx);
      httplib::Server server;
      service.mount(server);
      auto [host, port] = parse_listen(listen);
      std::cerr << "listening on " << host << ":" << port << "\n";
      if (!server.listen(host, port)) throw IoError("cannot listen on " + listen);
      return 0;
    }

    if (*index_cmd) {
      Lexicon lex = index_lexicon.empty() ? default_hedge_lexicon() : parse_lexicon(read_file(index_lexicon));
      LexiconExtractor extractor;
      CaseIndex index;
      for (const auto& c : load_dataset(index_data)) {
        auto facts = c.text ? run_extraction(*c.text, extractor, lex).facts : c.symptoms;
        if (!facts.empty()) index.add_case(c.id, facts, c.labels);
      }
      write_file(index_out, index.to_jsonl());
      std::cout << index.size() << " entries written to " << index_out << "\n";
      return 0;
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
