#pragma once

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "observatory/collector.hpp"
#include "observatory/notifier.hpp"
#include "observatory/statistics.hpp"
#include "observatory/structurer.hpp"
#include "observatory/trace_store.hpp"

namespace httplib {
class Server;
}

namespace observatory {

// Error body {status, code, detail}; status is one of 400, 404, 409, 422, 503.
struct ApiError {
  int status = 400;
  std::string code;
  std::string detail;
};

nlohmann::json to_json(const ApiError& e);

struct ApiResponse {
  int status = 200;
  nlohmann::json body;
  std::map<std::string, std::string> headers;

  static ApiResponse ok(nlohmann::json body, std::uint64_t as_of_seq);
  static ApiResponse error(const ApiError& e);
};

using QueryParams = std::map<std::string, std::string>;

struct ServiceConfig {
  std::optional<std::filesystem::path> store_path;  // in-memory store when absent
  EntityCatalog catalog;
  std::optional<std::filesystem::path> journal_path;  // default: alerts.ndjson beside the store
  std::optional<std::string> webhook_url;
  std::vector<AlertRule> rules;
  LogGrammar grammar;
  std::int64_t default_gap_s = 1800;
  Granularity default_granularity = Granularity::ObjectIdentity;
  std::chrono::milliseconds tick_interval{5000};
};

// Business and data-access tiers: owns the single store writer, the rule set
// and the notifier state. Handlers are callable directly (tests, CLI) or
// through the HTTP binding started by listen().
class ObservatoryService {
 public:
  explicit ObservatoryService(ServiceConfig config);
  ~ObservatoryService();

  ObservatoryService(const ObservatoryService&) = delete;
  ObservatoryService& operator=(const ObservatoryService&) = delete;

  // POST /ingest. Body: JSON array of raw log lines or extraction contexts.
  ApiResponse handle_ingest(const std::string& body);

  // Read-only GET routes (everything except /rules and /alerts).
  ApiResponse handle_query(std::string_view path, const QueryParams& params);

  // GET or PUT /rules. PUT validates then swaps the whole set.
  ApiResponse handle_rules(std::string_view method, const std::string& body);

  // GET /alerts, filtered by since (instant) and level, paged by cursor.
  ApiResponse handle_alerts(const QueryParams& params);

  // Evaluates rules if the store or the rule set changed since the last tick.
  // Returns the notifications fired.
  std::vector<Notification> evaluate_tick();

  // Binds host:port and serves in a background thread together with the
  // evaluation ticker. Returns the bound port (useful with port 0).
  int listen(const std::string& host, int port);
  void stop();

  std::uint64_t last_seq() const;
  // Every as_of_seq rules were evaluated at, in order.
  std::vector<std::uint64_t> evaluated_seqs() const;
  const std::filesystem::path& journal_path() const { return journal_path_; }

 private:
  SnapshotConfig snapshot_config(const std::vector<AlertRule>& rules) const;
  std::vector<Notification> evaluate_locked();
  void ticker_loop();

  ServiceConfig config_;
  std::filesystem::path journal_path_;

  mutable std::shared_mutex store_mutex_;
  TraceStore store_;
  Quarantine quarantine_;
  std::unique_ptr<StoreLock> lock_;

  mutable std::mutex rules_mutex_;
  std::shared_ptr<const std::vector<AlertRule>> rules_;
  std::uint64_t rules_version_ = 0;

  mutable std::mutex eval_mutex_;
  NotifierState notifier_state_;
  std::optional<std::pair<std::uint64_t, std::uint64_t>> last_evaluated_;  // (seq, rules_version)
  std::vector<std::uint64_t> evaluated_seqs_;
  AlertDispatcher dispatcher_;

  std::unique_ptr<httplib::Server> server_;
  std::thread server_thread_;
  std::thread ticker_thread_;
  std::mutex ticker_mutex_;
  std::condition_variable ticker_cv_;
  bool stopping_ = false;
};

// Splits "host:port"; throws Error("BadAddress").
std::pair<std::string, int> parse_listen_address(std::string_view addr);

}  // namespace observatory
