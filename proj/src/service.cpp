#include "observatory/service.hpp"

#include <algorithm>
#include <charconv>
#include <iostream>

#include <httplib.h>

#include "observatory/error.hpp"

namespace observatory {
namespace {

ApiError bad_request(std::string code, std::string detail) { return {400, std::move(code), std::move(detail)}; }
ApiError not_found(std::string detail) { return {404, "NotFound", std::move(detail)}; }

// Maps operation errors onto API statuses.
ApiError from_error(const Error& e) {
  if (e.code() == "EmptyWindow") return {422, e.code(), e.detail()};
  return {400, e.code(), e.detail()};
}

std::optional<std::string> param(const QueryParams& params, const std::string& key) {
  auto it = params.find(key);
  if (it == params.end()) return std::nullopt;
  return it->second;
}

std::int64_t integer_param(const QueryParams& params, const std::string& key, std::int64_t fallback) {
  auto text = param(params, key);
  if (!text) return fallback;
  std::int64_t value = 0;
  auto [ptr, ec] = std::from_chars(text->data(), text->data() + text->size(), value);
  if (ec != std::errc{} || ptr != text->data() + text->size()) throw Error("BadParameter", key + "='" + *text + "'");
  return value;
}

double number_param(const QueryParams& params, const std::string& key, double fallback) {
  auto text = param(params, key);
  if (!text) return fallback;
  try {
    std::size_t used = 0;
    double v = std::stod(*text, &used);
    if (used != text->size()) throw std::invalid_argument(key);
    return v;
  } catch (const std::exception&) {
    throw Error("BadParameter", key + "='" + *text + "'");
  }
}

Window window_param(const QueryParams& params) {
  Window w;
  for (const char* key : {"from", "to"}) {
    if (auto text = param(params, key)) {
      auto t = parse_instant(*text);
      if (!t) throw Error("BadParameter", std::string{key} + "='" + *text + "'");
      (std::string_view{key} == "from" ? w.from : w.to) = *t;
    }
  }
  if (w.from && w.to && *w.to < *w.from) throw Error("BadParameter", "window 'to' precedes 'from'");
  return w;
}

// Accepts "KIND:id" or a bare id with an implied kind.
std::optional<ObjectRef> object_param(std::string_view text, std::optional<ObjectKind> implied) {
  if (auto ref = parse_object_ref(text)) return ref;
  if (implied && is_token(text)) return ObjectRef{*implied, std::string{text}};
  return std::nullopt;
}

std::vector<std::string> split_path(std::string_view path) {
  std::vector<std::string> parts;
  std::size_t pos = 0;
  while (pos < path.size()) {
    auto next = path.find('/', pos);
    if (next == std::string_view::npos) next = path.size();
    if (next > pos) parts.emplace_back(path.substr(pos, next - pos));
    pos = next + 1;
  }
  return parts;
}

bool store_has_object(const Snapshot& snap, const ObjectRef& object) {
  return std::any_of(snap.records.begin(), snap.records.end(),
                     [&](const ExtractionContext& c) { return c.object == object; });
}

bool store_has_actor(const Snapshot& snap, std::string_view actor) {
  return std::any_of(snap.records.begin(), snap.records.end(),
                     [&](const ExtractionContext& c) { return c.actor.id == actor; });
}

// Converts a JSON extraction context into a canonical log line; nullopt when
// required fields are missing or ill-typed.
std::optional<std::string> line_from_context(const nlohmann::json& j) {
  if (!j.is_object()) return std::nullopt;
  RawLogRecord r;
  for (const char* key : {"ts", "activity", "kind", "oid", "actor"}) {
    if (!j.contains(key) || !j[key].is_string()) return std::nullopt;
  }
  auto ts = parse_instant(j["ts"].get<std::string>());
  if (!ts) return std::nullopt;
  r.timestamp = *ts;
  r.activity_code = j["activity"].get<std::string>();
  r.object_kind = j["kind"].get<std::string>();
  r.object_id = j["oid"].get<std::string>();
  r.actor_id = j["actor"].get<std::string>();
  if (auto attrs = j.find("attrs"); attrs != j.end()) {
    if (!attrs->is_object()) return std::nullopt;
    for (const auto& [k, v] : attrs->items()) {
      if (!v.is_string()) return std::nullopt;
      r.attrs.emplace_back(k, v.get<std::string>());
    }
  }
  return format_line(r);
}

}  // namespace

nlohmann::json to_json(const ApiError& e) {
  return nlohmann::json{{"status", e.status}, {"code", e.code}, {"detail", e.detail}};
}

ApiResponse ApiResponse::ok(nlohmann::json body, std::uint64_t as_of_seq) {
  ApiResponse r;
  r.body = std::move(body);
  r.headers["X-As-Of-Seq"] = std::to_string(as_of_seq);
  return r;
}

ApiResponse ApiResponse::error(const ApiError& e) {
  ApiResponse r;
  r.status = e.status;
  r.body = to_json(e);
  return r;
}

std::pair<std::string, int> parse_listen_address(std::string_view addr) {
  auto colon = addr.rfind(':');
  if (colon == std::string_view::npos) throw Error("BadAddress", std::string{addr});
  int port = 0;
  auto digits = addr.substr(colon + 1);
  auto [ptr, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), port);
  if (ec != std::errc{} || ptr != digits.data() + digits.size() || port < 0 || port > 65535) {
    throw Error("BadAddress", std::string{addr});
  }
  std::string host{addr.substr(0, colon)};
  if (host.empty()) host = "0.0.0.0";
  return {host, port};
}

ObservatoryService::ObservatoryService(ServiceConfig config)
    : config_(std::move(config)),
      journal_path_(config_.journal_path
                        ? *config_.journal_path
                        : (config_.store_path ? config_.store_path->parent_path() / "alerts.ndjson"
                                              : std::filesystem::path{"alerts.ndjson"})),
      rules_(std::make_shared<const std::vector<AlertRule>>(config_.rules)),
      dispatcher_(SinkConfig{journal_path_, config_.webhook_url, nullptr}) {
  if (config_.store_path) {
    lock_ = std::make_unique<StoreLock>(*config_.store_path);
    store_ = TraceStore::open(*config_.store_path);
    quarantine_ = Quarantine(Quarantine::sidecar_for(*config_.store_path));
  }
}

ObservatoryService::~ObservatoryService() { stop(); }

std::uint64_t ObservatoryService::last_seq() const {
  std::shared_lock lock(store_mutex_);
  return store_.last_seq();
}

std::vector<std::uint64_t> ObservatoryService::evaluated_seqs() const {
  std::lock_guard lock(eval_mutex_);
  return evaluated_seqs_;
}

SnapshotConfig ObservatoryService::snapshot_config(const std::vector<AlertRule>& rules) const {
  SnapshotConfig config;
  config.catalog = config_.catalog;
  config.ip7_gap_s = config_.default_gap_s;
  config.granularity = config_.default_granularity;
  return config_for_rules(std::move(config), rules);
}

ApiResponse ObservatoryService::handle_ingest(const std::string& body) {
  nlohmann::json items;
  try {
    items = nlohmann::json::parse(body);
  } catch (const nlohmann::json::parse_error& e) {
    return ApiResponse::error({422, "MalformedBody", e.what()});
  }
  if (!items.is_array()) return ApiResponse::error({422, "MalformedBody", "body must be a JSON array"});
  if (items.empty()) return ApiResponse::error(bad_request("EmptyBody", "nothing to ingest"));

  std::vector<std::string> lines;
  std::vector<std::uint64_t> numbers;
  std::vector<QuarantineEntry> rejected;
  for (std::size_t i = 0; i < items.size(); ++i) {
    const auto& item = items[i];
    std::optional<std::string> line;
    if (item.is_string()) {
      line = item.get<std::string>();
    } else {
      line = line_from_context(item);
    }
    if (!line) {
      rejected.push_back({i + 1, item.dump(), "BadRecord", "expected a log line or an extraction context"});
      continue;
    }
    lines.push_back(std::move(*line));
    numbers.push_back(i + 1);
  }

  IngestResult result;
  {
    std::unique_lock lock(store_mutex_);
    for (auto& entry : rejected) quarantine_.add(std::move(entry));
    try {
      result = ingest_lines(store_, lines, config_.catalog, quarantine_, config_.grammar, numbers);
    } catch (const Error& e) {
      return ApiResponse::error({422, e.code(), e.detail()});
    }
  }
  result.quarantined += rejected.size();
  evaluate_tick();

  nlohmann::json out{{"accepted", result.accepted},
                     {"quarantined", result.quarantined},
                     {"duplicates", result.duplicates},
                     {"last_seq", result.last_seq}};
  if (result.accepted == 0 && result.duplicates == 0 && result.quarantined == items.size()) {
    ApiError e{422, "MalformedBody", "every item was quarantined"};
    auto r = ApiResponse::error(e);
    r.body["result"] = out;
    return r;
  }
  return ApiResponse::ok(std::move(out), result.last_seq);
}

ApiResponse ObservatoryService::handle_query(std::string_view path, const QueryParams& params) {
  std::shared_lock lock(store_mutex_);
  try {
    auto parts = split_path(path);
    auto pinned = static_cast<std::uint64_t>(integer_param(params, "as_of_seq", static_cast<std::int64_t>(store_.last_seq())));
    auto snap = store_.snapshot_at(pinned);
    auto window = window_param(params);
    auto granularity_text = param(params, "granularity");
    auto granularity = granularity_text ? parse_granularity(*granularity_text) : config_.default_granularity;
    if (!granularity) throw Error("BadParameter", "granularity='" + *granularity_text + "'");
    auto gap = integer_param(params, "gap_s", config_.default_gap_s);
    if (gap < 0) throw Error("BadParameter", "gap_s must be >= 0");
    bool include_view = param(params, "include_view") == std::optional<std::string>{"true"};

    if (parts == std::vector<std::string>{"health"}) {
      return ApiResponse::ok({{"status", "ok"}, {"last_seq", store_.last_seq()}}, store_.last_seq());
    }

    if (!parts.empty() && parts[0] == "indicators") {
      std::vector<AlertRule> rules;
      {
        std::lock_guard rl(rules_mutex_);
        rules = *rules_;
      }
      auto config = snapshot_config(rules);
      config.ip7_gap_s = gap;
      config.ip7_include_view = include_view;
      config.granularity = *granularity;
      if (parts.size() == 1) {
        if (!window.is_all()) throw Error("BadParameter", "/indicators reports the configured windows only");
        return ApiResponse::ok(to_json(snapshot_indicators(snap, config)), snap.as_of_seq);
      }
      if (parts.size() != 2) return ApiResponse::error(not_found(std::string{path}));
      auto id = canonical_indicator_id(parts[1]);
      if (!id) return ApiResponse::error(not_found("unknown indicator '" + parts[1] + "'"));

      auto object_text = param(params, "object");
      auto actor_text = param(params, "actor");
      if (*id == indicator::kIP2) {
        IndicatorScope scope;
        if (object_text) {
          auto object = object_param(*object_text, std::nullopt);
          if (!object) throw Error("BadParameter", "object='" + *object_text + "'");
          if (!store_has_object(snap, *object)) return ApiResponse::error(not_found(object->to_string()));
          scope = IndicatorScope::object(object->to_string());
        } else if (actor_text) {
          if (!store_has_actor(snap, *actor_text)) return ApiResponse::error(not_found("actor " + *actor_text));
          scope = IndicatorScope::actor(*actor_text);
        }
        return ApiResponse::ok(to_json(indicator_ip2(snap, window, scope)), snap.as_of_seq);
      }
      if (*id == indicator::kIP4) {
        if (!object_text) throw Error("BadParameter", "IP4 requires object=<process model id>");
        auto object = object_param(*object_text, ObjectKind::ProcessModel);
        if (!object) throw Error("BadParameter", "object='" + *object_text + "'");
        auto value = indicator_ip4(snap, *object, window);
        if (!store_has_object(snap, *object)) return ApiResponse::error(not_found(object->to_string()));
        return ApiResponse::ok(to_json(value), snap.as_of_seq);
      }
      if (*id == indicator::kIP11) {
        auto result = indicator_ip11(snap, config_.catalog, window);
        auto body = to_json(result.value);
        body["overdue"] = nlohmann::json::array();
        for (const auto& o : result.overdue) {
          body["overdue"].push_back({{"task_id", o.task_id}, {"duration_s", o.duration_s}, {"deadline_s", o.deadline_s}});
        }
        return ApiResponse::ok(std::move(body), snap.as_of_seq);
      }
      auto values = nlohmann::json::array();
      if (*id == indicator::kIP7) {
        for (const auto& v : indicator_ip7(snap, gap, window, include_view)) values.push_back(to_json(v));
      } else if (*id == indicator::kActivitiesByActor) {
        for (const auto& [actor, n] : activities_by_actor(snap.records, window)) {
          values.push_back(to_json(IndicatorValue{std::string{indicator::kActivitiesByActor}, IndicatorScope::actor(actor),
                                                  window, static_cast<double>(n), Unit::Count, snapshot_time(snap),
                                                  snap.as_of_seq}));
        }
      } else {
        for (const auto& [label, pct] : activity_share_by_object(snap.records, window, *granularity)) {
          values.push_back(to_json(IndicatorValue{std::string{indicator::kActivityShareByObject},
                                                  IndicatorScope::object(label), window, pct, Unit::Percent,
                                                  snapshot_time(snap), snap.as_of_seq}));
        }
      }
      return ApiResponse::ok(std::move(values), snap.as_of_seq);
    }

    if (parts == std::vector<std::string>{"triplets", "frequent"}) {
      auto function_text = param(params, "function");
      if (!function_text) throw Error("BadParameter", "function is required");
      auto function = parse_measure_function(*function_text);
      if (!function) throw Error("BadParameter", "function='" + *function_text + "'");
      MeasureSpec spec{*function, *granularity, number_param(params, "threshold", 0.0)};
      if (spec.threshold < 0) throw Error("BadParameter", "threshold must be >= 0");
      auto rows = nlohmann::json::array();
      for (const auto& [key, value] : frequent_triplets(snap.records, spec, window)) {
        rows.push_back({{"activity", key.activity}, {"object", key.object}, {"actor", key.actor}, {"value", value}});
      }
      return ApiResponse::ok(std::move(rows), snap.as_of_seq);
    }

    if (parts.size() >= 2 && parts[0] == "dashboards") {
      if (parts.size() == 2 && parts[1] == "activities-by-actor") {
        return ApiResponse::ok(nlohmann::json(activities_by_actor(snap.records, window)), snap.as_of_seq);
      }
      if (parts.size() == 2 && parts[1] == "activity-share-by-object") {
        return ApiResponse::ok(nlohmann::json(activity_share_by_object(snap.records, window, *granularity)),
                               snap.as_of_seq);
      }
      if (parts.size() == 3 && parts[1] == "process-model-changes") {
        auto object = object_param(parts[2], ObjectKind::ProcessModel);
        if (!object) throw Error("BadParameter", "object '" + parts[2] + "'");
        auto value = indicator_ip4(snap, *object, window);
        if (!store_has_object(snap, *object)) return ApiResponse::error(not_found(object->to_string()));
        auto body = to_json(value);
        std::map<std::string, std::uint64_t> by_activity;
        for (const auto& ctx : snap.records) {
          if (ctx.object == *object && window.contains(ctx.timestamp) && is_modification(ctx.activity)) {
            ++by_activity[std::string{to_string(ctx.activity)}];
          }
        }
        body["by_activity"] = by_activity;
        return ApiResponse::ok(std::move(body), snap.as_of_seq);
      }
    }

    if (parts == std::vector<std::string>{"traces"}) {
      auto cursor = integer_param(params, "cursor", 0);
      auto limit = integer_param(params, "limit", 1000);
      if (cursor < 0 || limit <= 0) throw Error("BadParameter", "cursor must be >= 0 and limit > 0");
      auto rows = nlohmann::json::array();
      std::uint64_t next = static_cast<std::uint64_t>(cursor);
      for (const auto& ctx : snap.records) {
        if (ctx.seq <= static_cast<std::uint64_t>(cursor)) continue;
        if (rows.size() >= static_cast<std::size_t>(limit)) break;
        rows.push_back(to_json(ctx));
        next = ctx.seq;
      }
      auto r = ApiResponse::ok(std::move(rows), snap.as_of_seq);
      r.headers["X-Next-Cursor"] = std::to_string(next);
      return r;
    }
    return ApiResponse::error(not_found(std::string{path}));
  } catch (const Error& e) {
    return ApiResponse::error(from_error(e));
  }
}

ApiResponse ObservatoryService::handle_rules(std::string_view method, const std::string& body) {
  if (method == "GET") {
    std::shared_ptr<const std::vector<AlertRule>> rules;
    {
      std::lock_guard lock(rules_mutex_);
      rules = rules_;
    }
    return ApiResponse::ok(to_json(std::span<const AlertRule>(*rules)), last_seq());
  }
  if (method != "PUT") return ApiResponse::error(bad_request("BadMethod", std::string{method}));

  nlohmann::json j;
  try {
    j = nlohmann::json::parse(body);
  } catch (const nlohmann::json::parse_error& e) {
    return ApiResponse::error(bad_request("MalformedBody", e.what()));
  }
  std::vector<AlertRule> rules;
  try {
    rules = parse_rules(j);
  } catch (const Error& e) {
    return ApiResponse::error({409, e.code(), e.detail()});
  }
  auto replacement = std::make_shared<const std::vector<AlertRule>>(std::move(rules));
  {
    std::lock_guard lock(rules_mutex_);
    rules_ = replacement;
    ++rules_version_;
  }
  return ApiResponse::ok(to_json(std::span<const AlertRule>(*replacement)), last_seq());
}

ApiResponse ObservatoryService::handle_alerts(const QueryParams& params) {
  try {
    std::optional<Instant> since;
    if (auto text = param(params, "since")) {
      since = parse_instant(*text);
      if (!since) return ApiResponse::error(bad_request("BadParameter", "since='" + *text + "'"));
    }
    std::optional<AlertLevel> level;
    if (auto text = param(params, "level")) {
      level = parse_alert_level(*text);
      if (!level) return ApiResponse::error(bad_request("BadParameter", "level='" + *text + "'"));
    }
    auto cursor = integer_param(params, "cursor", 0);
    auto limit = integer_param(params, "limit", 1000);
    if (cursor < 0 || limit <= 0) throw Error("BadParameter", "cursor must be >= 0 and limit > 0");

    std::vector<Notification> journal;
    {
      std::lock_guard lock(eval_mutex_);
      journal = read_journal(journal_path_);
    }
    auto rows = nlohmann::json::array();
    std::size_t next = static_cast<std::size_t>(cursor);
    for (std::size_t i = static_cast<std::size_t>(cursor); i < journal.size(); ++i) {
      if (rows.size() >= static_cast<std::size_t>(limit)) break;
      next = i + 1;
      const auto& n = journal[i];
      if (since && n.fired_at < *since) continue;
      if (level && n.level != *level) continue;
      rows.push_back(to_json(n));
    }
    auto r = ApiResponse::ok(std::move(rows), last_seq());
    r.headers["X-Next-Cursor"] = std::to_string(next);
    return r;
  } catch (const Error& e) {
    return ApiResponse::error(from_error(e));
  }
}

std::vector<Notification> ObservatoryService::evaluate_tick() {
  std::lock_guard lock(eval_mutex_);
  return evaluate_locked();
}

std::vector<Notification> ObservatoryService::evaluate_locked() {
  std::shared_ptr<const std::vector<AlertRule>> rules;
  std::uint64_t version = 0;
  {
    std::lock_guard rl(rules_mutex_);
    rules = rules_;
    version = rules_version_;
  }
  std::shared_lock store_lock(store_mutex_);
  auto snap = store_.snapshot();
  auto key = std::make_pair(snap.as_of_seq, version);
  if (last_evaluated_ == key) return {};
  last_evaluated_ = key;

  auto indicators = snapshot_indicators(snap, snapshot_config(*rules));
  store_lock.unlock();

  Evaluation evaluation;
  try {
    evaluation = evaluate_rules(indicators, *rules, notifier_state_, indicators.computed_at);
  } catch (const Error& e) {
    std::cerr << "rule evaluation failed: " << e.what() << '\n';
    return {};
  }
  notifier_state_ = std::move(evaluation.next);
  evaluated_seqs_.push_back(snap.as_of_seq);
  for (const auto& n : evaluation.notifications) {
    auto report = dispatcher_.dispatch(n);
    for (const auto& r : report.results) {
      if (!r.ok) std::cerr << "alert sink " << r.sink << " failed: " << r.detail << '\n';
    }
  }
  return evaluation.notifications;
}

int ObservatoryService::listen(const std::string& host, int port) {
  server_ = std::make_unique<httplib::Server>();
  auto reply = [](httplib::Response& res, const ApiResponse& r) {
    res.status = r.status;
    for (const auto& [k, v] : r.headers) res.set_header(k, v);
    res.set_header("Access-Control-Allow-Origin", "*");
    res.set_header("Access-Control-Expose-Headers", "X-As-Of-Seq, X-Next-Cursor");
    res.set_content(r.body.dump(), "application/json");
  };
  auto params_of = [](const httplib::Request& req) {
    QueryParams params;
    for (const auto& [k, v] : req.params) params[k] = v;
    return params;
  };

  server_->Post("/ingest", [this, reply](const httplib::Request& req, httplib::Response& res) {
    reply(res, handle_ingest(req.body));
  });
  server_->Get("/rules", [this, reply](const httplib::Request&, httplib::Response& res) {
    reply(res, handle_rules("GET", ""));
  });
  server_->Put("/rules", [this, reply](const httplib::Request& req, httplib::Response& res) {
    reply(res, handle_rules("PUT", req.body));
  });
  server_->Get("/alerts", [this, reply, params_of](const httplib::Request& req, httplib::Response& res) {
    reply(res, handle_alerts(params_of(req)));
  });
  server_->Get(".*", [this, reply, params_of](const httplib::Request& req, httplib::Response& res) {
    reply(res, handle_query(req.path, params_of(req)));
  });
  server_->Options(".*", [](const httplib::Request&, httplib::Response& res) {
    res.status = 204;
    res.set_header("Access-Control-Allow-Origin", "*");
    res.set_header("Access-Control-Allow-Methods", "GET, POST, PUT, OPTIONS");
    res.set_header("Access-Control-Allow-Headers", "Content-Type");
  });

  int bound = port == 0 ? server_->bind_to_any_port(host) : (server_->bind_to_port(host, port) ? port : -1);
  if (bound < 0) throw Error("BindFailed", host + ":" + std::to_string(port));

  {
    std::lock_guard lock(ticker_mutex_);
    stopping_ = false;
  }
  server_thread_ = std::thread([this] { server_->listen_after_bind(); });
  ticker_thread_ = std::thread([this] { ticker_loop(); });
  return bound;
}

void ObservatoryService::ticker_loop() {
  std::unique_lock lock(ticker_mutex_);
  while (!stopping_) {
    ticker_cv_.wait_for(lock, config_.tick_interval, [this] { return stopping_; });
    if (stopping_) break;
    lock.unlock();
    evaluate_tick();
    lock.lock();
  }
}

void ObservatoryService::stop() {
  {
    std::lock_guard lock(ticker_mutex_);
    stopping_ = true;
  }
  ticker_cv_.notify_all();
  if (server_) server_->stop();
  if (server_thread_.joinable()) server_thread_.join();
  if (ticker_thread_.joinable()) ticker_thread_.join();
}

}  // namespace observatory
