#include "fuzzydx/service.hpp"

#include <charconv>

#include <httplib.h>

#include "fuzzydx/digest.hpp"
#include "fuzzydx/error.hpp"

namespace fdx {

namespace {

using nlohmann::json;

// Malformed request bodies, as opposed to well-formed ones the domain rejects.
class BadRequest : public Error {
 public:
  using Error::Error;
};

Response error_response(int status, std::string_view kind, const std::string& message) {
  return {status, json{{"error", std::string(kind)}, {"message", message}}};
}

std::vector<std::string_view> split_path(std::string_view path) {
  std::vector<std::string_view> parts;
  std::size_t pos = 0;
  while (pos < path.size()) {
    std::size_t next = path.find('/', pos);
    if (next == std::string_view::npos) next = path.size();
    if (next > pos) parts.push_back(path.substr(pos, next - pos));
    pos = next + 1;
  }
  return parts;
}

std::optional<long long> parse_version(std::string_view s) {
  if (!s.empty() && s[0] == 'v') s.remove_prefix(1);
  long long v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) return std::nullopt;
  return v;
}

long long require_version(const json& body, const char* key) {
  if (!body.contains(key) || !body.at(key).is_number_integer()) {
    throw BadRequest(std::string("missing integer field '") + key + "'");
  }
  return body.at(key).get<long long>();
}

}  // namespace

CaseInput case_input_from_json(const json& j) {
  if (!j.is_object()) throw BadRequest("case must be a JSON object");
  bool has_note = j.contains("note") && !j.at("note").is_null();
  bool has_symptoms = j.contains("symptoms") && !j.at("symptoms").is_null();
  if (has_note && has_symptoms) throw BadRequest("give either note or symptoms, not both");
  if (!has_note && !has_symptoms) throw BadRequest("case needs a note or symptoms");
  CaseInput in;
  try {
    if (has_note) in.note = j.at("note").get<std::string>();
    else in.facts = symptoms_from_json(j.at("symptoms"));
    if (j.contains("demographics")) in.demographics = demographics_from_json(j.at("demographics"));
  } catch (const json::exception& e) {
    throw BadRequest(e.what());
  }
  if (has_symptoms && in.facts.empty()) throw EmptyCase("symptom list is empty");
  return in;
}

Service::Service(SnapshotStore& store, ServiceConfig config, DiagnoseContext ctx)
    : store_(store), config_(std::move(config)), ctx_(ctx) {}

Response Service::handle(std::string_view method, std::string_view path, std::string_view body) {
  auto parts = split_path(path.substr(0, path.find('?')));
  auto parse_body = [&]() {
    json j = json::parse(body.empty() ? std::string_view("{}") : body, nullptr, false);
    if (j.is_discarded()) throw BadRequest("request body is not valid JSON");
    if (!j.is_object()) throw BadRequest("request body must be a JSON object");
    return j;
  };
  try {
    if (parts.size() == 1 && parts[0] == "diagnose") {
      if (method != "POST") return error_response(405, "MethodNotAllowed", "use POST");
      return diagnose_route(parse_body());
    }
    if (parts.size() == 1 && parts[0] == "feedback") {
      if (method != "POST") return error_response(405, "MethodNotAllowed", "use POST");
      return feedback_route(parse_body());
    }
    if (parts.size() == 1 && parts[0] == "replay") {
      if (method != "POST") return error_response(405, "MethodNotAllowed", "use POST");
      return replay_route(parse_body());
    }
    if (!parts.empty() && parts[0] == "snapshots") {
      if (method != "GET") return error_response(405, "MethodNotAllowed", "use GET");
      if (parts.size() == 1) return snapshots_route();
      auto a = parse_version(parts[1]);
      if (!a) return error_response(400, "BadRequest", "invalid version '" + std::string(parts[1]) + "'");
      if (parts.size() == 2) return snapshot_route(*a);
      if (parts.size() == 4 && parts[2] == "diff") {
        auto b = parse_version(parts[3]);
        if (!b) return error_response(400, "BadRequest", "invalid version '" + std::string(parts[3]) + "'");
        return diff_route(*a, *b);
      }
    }
    if (parts.size() == 2 && parts[0] == "proofs") {
      if (method != "GET") return error_response(405, "MethodNotAllowed", "use GET");
      return proof_route(std::string(parts[1]));
    }
    if (parts.size() == 1 && parts[0] == "health") {
      return {200, json{{"status", "ok"}, {"head", store_.head()->version}}};
    }
    return error_response(404, "NotFound", "no route for " + std::string(method) + " " + std::string(path));
  } catch (const BadRequest& e) {
    return error_response(400, "BadRequest", e.what());
  } catch (const SyntaxError& e) {
    return error_response(400, "SyntaxError", e.what());
  } catch (const StaleVersion& e) {
    return error_response(409, "StaleVersion", e.what());
  } catch (const MissingSnapshot& e) {
    return error_response(404, "MissingSnapshot", e.what());
  } catch (const VersionOrder& e) {
    return error_response(400, "VersionOrder", e.what());
  } catch (const EmptyCase& e) {
    return error_response(422, "EmptyCase", e.what());
  } catch (const EmptyTruth& e) {
    return error_response(422, "EmptyTruth", e.what());
  } catch (const ConsistencyViolation& e) {
    return error_response(422, "ConsistencyViolation", e.what());
  } catch (const WeightOutOfRange& e) {
    return error_response(422, "WeightOutOfRange", e.what());
  } catch (const UnknownRuleId& e) {
    return error_response(422, "UnknownRuleId", e.what());
  } catch (const Error& e) {
    return error_response(400, "BadRequest", e.what());
  } catch (const json::exception& e) {
    return error_response(400, "BadRequest", e.what());
  }
}

Response Service::diagnose_route(const json& body) {
  for (const auto& [key, v] : body.items()) {
    if (key != "note" && key != "symptoms" && key != "demographics" && key != "overrides" && key != "version") {
      throw BadRequest("unknown field '" + key + "'");
    }
  }
  CaseInput input = case_input_from_json(body);
  EngineConfig config = body.contains("overrides")
                            ? engine_config_from_json(body.at("overrides"), config_.engine)
                            : config_.engine;
  SnapshotPtr snap = body.contains("version") ? store_.get(require_version(body, "version")) : store_.head();
  Diagnosis d = diagnose(input, snap->kb, config, ctx_);
  json out = to_json(d, config_.max_proof_nodes);
  std::string request = sha256_hex(std::to_string(snap->version) + "\n" + body.dump()).substr(0, 16);
  for (std::size_t i = 0; i < d.ranking.size(); ++i) {
    auto& jc = out["ranking"][i];
    if (!jc.contains("proof_ref")) continue;
    std::string id = "v" + std::to_string(snap->version) + "-" + request + "-" + d.ranking[i].disease.str();
    remember_proof(id, json{{"disease", d.ranking[i].disease.str()},
                            {"proof", proof_to_json(d.ranking[i], d.note)},
                            {"explanation", explain(d.ranking[i], d.note)}});
    jc["proof_ref"] = id;
  }
  out["version"] = snap->version;
  return {200, out};
}

Response Service::feedback_route(const json& body) {
  long long base = require_version(body, "base_version");
  std::vector<EditRequest> edits;
  std::vector<LearningCase> counter;
  try {
    if (body.contains("edits")) {
      for (const auto& e : body.at("edits")) edits.push_back(edit_from_json(e));
    }
    if (body.contains("counter_examples")) {
      for (const auto& c : body.at("counter_examples")) counter.push_back(learning_case_from_json(c));
    }
  } catch (const json::exception& e) {
    throw BadRequest(e.what());
  }
  for (const auto& e : edits) {
    if (e.base_version && *e.base_version != base) throw StaleVersion(*e.base_version, store_.head()->version);
  }
  CommitOptions opts;
  opts.author = body.value("author", std::string("clinician"));
  opts.note = body.value("note", std::string());
  UpdateLog events;
  SnapshotPtr prev;
  auto next = store_.commit_with(
      base,
      [&](const KnowledgeSnapshot& head) {
        prev = store_.get(head.version);
        KnowledgeBase kb = apply_edits(head.kb, edits, head.version + 1);
        events.clear();
        for (const auto& c : counter) {
          auto step = pa_update(kb, c, config_.learner, head.version + 1);
          kb = std::move(step.kb);
          for (auto& ev : step.events) events.push_back(std::move(ev));
        }
        return kb;
      },
      opts);
  json log = json::array();
  for (const auto& e : events) log.push_back(to_json(e));
  return {200, json{{"version", next->version},
                    {"parent", next->parent},
                    {"content_hash", next->content_hash},
                    {"diff", to_json(diff(*prev, *next))},
                    {"events", log}}};
}

Response Service::snapshots_route() const {
  json list = json::array();
  for (const auto& s : store_.all()) list.push_back(manifest_json(*s));
  return {200, json{{"head", store_.head()->version}, {"snapshots", list}}};
}

Response Service::snapshot_route(long long version) const {
  auto s = store_.get(version);
  json j = manifest_json(*s);
  j["kb"] = s->kb.kb_text();
  return {200, j};
}

Response Service::diff_route(long long a, long long b) const {
  auto sa = store_.get(a);
  auto sb = store_.get(b);
  if (a == b) {
    SnapshotDiff d = diff_content(sa->kb, sb->kb);
    d.from_version = a;
    d.to_version = b;
    return {200, to_json(d)};
  }
  return {200, to_json(diff(*sa, *sb))};
}

Response Service::replay_route(const json& body) {
  if (!body.contains("case")) throw BadRequest("missing field 'case'");
  CaseInput input = case_input_from_json(body.at("case"));
  long long t1 = require_version(body, "t1");
  long long t2 = require_version(body, "t2");
  EngineConfig config =
      body.contains("overrides") ? engine_config_from_json(body.at("overrides"), config_.engine) : config_.engine;
  auto audit = counterfactual_audit(input, store_, t1, t2, config, ctx_);
  return {200, to_json(audit)};
}

Response Service::proof_route(const std::string& id) const {
  std::lock_guard lock(proofs_mu_);
  auto it = proofs_.find(id);
  if (it == proofs_.end()) return error_response(404, "NotFound", "unknown proof id '" + id + "'");
  return {200, it->second};
}

void Service::remember_proof(std::string id, json proof) {
  std::lock_guard lock(proofs_mu_);
  if (proofs_.count(id)) return;
  proofs_.emplace(id, std::move(proof));
  proof_order_.push_back(std::move(id));
  while (proof_order_.size() > config_.proof_cache) {
    proofs_.erase(proof_order_.front());
    proof_order_.pop_front();
  }
}

void Service::mount(httplib::Server& server) {
  auto handler = [this](const httplib::Request& req, httplib::Response& res) {
    Response r = handle(req.method, req.path, req.body);
    res.status = r.status;
    res.set_content(r.body.dump(), "application/json");
  };
  server.Get(R"(/.*)", handler);
  server.Post(R"(/.*)", handler);
}

}  // namespace fdx
