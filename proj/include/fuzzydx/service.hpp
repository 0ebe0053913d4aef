#pragma once

#include <deque>
#include <map>
#include <mutex>
#include <string>
#include <string_view>

#include <json.hpp>

#include "fuzzydx/learning.hpp"
#include "fuzzydx/ranking.hpp"

namespace httplib {
class Server;
}

namespace fdx {

struct ServiceConfig {
  EngineConfig engine;
  LearnerConfig learner;
  std::size_t max_proof_nodes = 64;  // larger proofs are served from /proofs/{id}
  std::size_t proof_cache = 1024;
};

struct Response {
  int status = 200;
  nlohmann::json body;
};

// HTTP/JSON front end over a snapshot store. Every request reads one
// snapshot; mutations go through the store's single writer.
class Service {
 public:
  Service(SnapshotStore& store, ServiceConfig config = {}, DiagnoseContext ctx = {});

  Response handle(std::string_view method, std::string_view path, std::string_view body);

  // Routes every GET/POST on `server` through handle().
  void mount(httplib::Server& server);

 private:
  Response diagnose_route(const nlohmann::json& body);
  Response feedback_route(const nlohmann::json& body);
  Response snapshots_route() const;
  Response snapshot_route(long long version) const;
  Response diff_route(long long a, long long b) const;
  Response replay_route(const nlohmann::json& body);
  Response proof_route(const std::string& id) const;

  void remember_proof(std::string id, nlohmann::json proof);

  SnapshotStore& store_;
  ServiceConfig config_;
  DiagnoseContext ctx_;
  mutable std::mutex proofs_mu_;
  std::map<std::string, nlohmann::json> proofs_;
  std::deque<std::string> proof_order_;
};

// Parses {note | symptoms, demographics}. Throws Error on schema problems.
CaseInput case_input_from_json(const nlohmann::json& j);

}  // namespace fdx
