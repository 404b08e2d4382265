#include "observatory/notifier.hpp"

#include <cmath>
#include <fstream>
#include <set>

#include <fmt/core.h>
#include <httplib.h>

#include "json_util.hpp"
#include "observatory/error.hpp"

namespace observatory {
namespace {

constexpr std::array<std::string_view, 4> kComparatorNames = {">=", ">", "<=", "<"};
constexpr std::array<std::string_view, 3> kLevelNames = {"INFO", "WARNING", "CRITICAL"};

std::string position(std::size_t i) { return "rules[" + std::to_string(i) + "]"; }

AlertRule parse_rule(const nlohmann::json& j, std::size_t i) {
  auto where = position(i);
  if (!j.is_object()) throw Error("BadRule", where + ": rule must be an object");
  auto string_field = [&](const char* name) -> std::string {
    auto it = j.find(name);
    if (it == j.end() || !it->is_string()) throw Error("BadRule", where + "." + name + ": expected a string");
    return it->get<std::string>();
  };

  AlertRule rule;
  rule.rule_id = string_field("rule_id");
  if (!is_token(rule.rule_id)) throw Error("BadRule", where + ".rule_id: expected a token");

  auto indicator = string_field("indicator_id");
  auto canonical = canonical_indicator_id(indicator);
  if (!canonical) throw Error("UnknownIndicatorId", where + ".indicator_id: '" + indicator + "'");
  rule.indicator_id = *canonical;

  std::string scope_text = j.contains("scope") ? string_field("scope") : "global";
  auto scope = parse_scope(scope_text);
  if (!scope) throw Error("BadRule", where + ".scope: '" + scope_text + "'");
  rule.scope = *scope;

  auto comparator_text = string_field("comparator");
  auto comparator = parse_comparator(comparator_text);
  if (!comparator) throw Error("BadComparator", where + ".comparator: '" + comparator_text + "'");
  rule.comparator = *comparator;

  auto threshold = j.find("threshold");
  if (threshold == j.end() || !threshold->is_number() || !std::isfinite(threshold->get<double>())) {
    throw Error("BadRule", where + ".threshold: expected a finite number");
  }
  rule.threshold = threshold->get<double>();

  auto level_text = string_field("level");
  auto level = parse_alert_level(level_text);
  if (!level) throw Error("BadRule", where + ".level: '" + level_text + "'");
  rule.level = *level;

  if (auto w = j.find("window"); w != j.end() && !(w->is_string() && w->get<std::string>() == "ALL")) {
    if (!w->is_number_integer() || w->get<std::int64_t>() <= 0) {
      throw Error("BadRule", where + ".window: expected \"ALL\" or a positive number of seconds");
    }
    rule.window_s = w->get<std::int64_t>();
  }
  if (auto c = j.find("cooldown_s"); c != j.end() && !c->is_null()) {
    if (!c->is_number_integer() || c->get<std::int64_t>() < 0) {
      throw Error("BadRule", where + ".cooldown_s: expected null or a non-negative integer");
    }
    rule.cooldown_s = c->get<std::int64_t>();
  }
  if (!scope_allowed(rule.indicator_id, rule.scope.kind)) {
    throw Error("ScopeMismatch", where + ": " + rule.indicator_id + " does not accept scope " + rule.scope.to_string());
  }
  return rule;
}

std::string describe(const AlertRule& rule, double observed) {
  return fmt::format("{} {} = {} {} {} ({})", rule.indicator_id, rule.scope.to_string(), observed,
                     to_string(rule.comparator), rule.threshold, to_string(rule.level));
}

nlohmann::ordered_json ordered(const Notification& n) {
  nlohmann::ordered_json j;
  j["rule_id"] = n.rule_id;
  j["fired_at"] = format_instant(n.fired_at);
  j["observed"] = detail::number_json<nlohmann::ordered_json>(n.observed);
  j["threshold"] = detail::number_json<nlohmann::ordered_json>(n.threshold);
  j["level"] = to_string(n.level);
  j["scope"] = n.scope.to_string();
  j["as_of_seq"] = n.as_of_seq;
  j["message"] = n.message;
  return j;
}

}  // namespace

std::string_view to_string(Comparator c) { return kComparatorNames[static_cast<std::size_t>(c)]; }

std::optional<Comparator> parse_comparator(std::string_view text) {
  for (std::size_t i = 0; i < kComparatorNames.size(); ++i) {
    if (kComparatorNames[i] == text) return static_cast<Comparator>(i);
  }
  return std::nullopt;
}

bool compare(Comparator c, double observed, double threshold) {
  switch (c) {
    case Comparator::GreaterEqual: return observed >= threshold;
    case Comparator::Greater: return observed > threshold;
    case Comparator::LessEqual: return observed <= threshold;
    case Comparator::Less: return observed < threshold;
  }
  return false;
}

std::string_view to_string(AlertLevel l) { return kLevelNames[static_cast<std::size_t>(l)]; }

std::optional<AlertLevel> parse_alert_level(std::string_view text) {
  for (std::size_t i = 0; i < kLevelNames.size(); ++i) {
    if (kLevelNames[i] == text) return static_cast<AlertLevel>(i);
  }
  return std::nullopt;
}

nlohmann::json to_json(const AlertRule& r) {
  nlohmann::ordered_json j;
  j["rule_id"] = r.rule_id;
  j["indicator_id"] = r.indicator_id;
  j["scope"] = r.scope.to_string();
  j["comparator"] = to_string(r.comparator);
  j["threshold"] = detail::number_json<nlohmann::ordered_json>(r.threshold);
  j["level"] = to_string(r.level);
  j["window"] = r.window_s ? nlohmann::ordered_json(*r.window_s) : nlohmann::ordered_json("ALL");
  j["cooldown_s"] = r.cooldown_s ? nlohmann::ordered_json(*r.cooldown_s) : nlohmann::ordered_json(nullptr);
  return nlohmann::json(j);
}

nlohmann::json to_json(std::span<const AlertRule> rules) {
  auto j = nlohmann::json::array();
  for (const auto& r : rules) j.push_back(to_json(r));
  return j;
}

std::vector<AlertRule> parse_rules(const nlohmann::json& j) {
  if (!j.is_array()) throw Error("BadRuleSet", "rules must be a JSON array");
  std::vector<AlertRule> rules;
  std::map<std::string, std::size_t> seen;
  for (std::size_t i = 0; i < j.size(); ++i) {
    auto rule = parse_rule(j[i], i);
    if (auto [it, inserted] = seen.emplace(rule.rule_id, i); !inserted) {
      throw Error("DuplicateRuleId",
                  position(i) + ": rule_id '" + rule.rule_id + "' already used at " + position(it->second));
    }
    rules.push_back(std::move(rule));
  }
  return rules;
}

std::vector<AlertRule> load_rules(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("RulesUnavailable", path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error("BadRuleSet", path.string() + ": " + e.what());
  }
  return parse_rules(j);
}

nlohmann::json to_json(const Notification& n) { return nlohmann::json(ordered(n)); }

Notification notification_from_json(const nlohmann::json& j) {
  try {
    Notification n;
    n.rule_id = j.at("rule_id").get<std::string>();
    auto fired = parse_instant(j.at("fired_at").get<std::string>());
    auto level = parse_alert_level(j.at("level").get<std::string>());
    auto scope = parse_scope(j.at("scope").get<std::string>());
    if (!fired || !level || !scope) throw Error("BadNotification", "bad fired_at, level or scope");
    n.fired_at = *fired;
    n.level = *level;
    n.scope = *scope;
    n.observed = j.at("observed").get<double>();
    n.threshold = j.at("threshold").get<double>();
    n.as_of_seq = j.at("as_of_seq").get<std::uint64_t>();
    n.message = j.at("message").get<std::string>();
    return n;
  } catch (const nlohmann::json::exception& e) {
    throw Error("BadNotification", e.what());
  }
}

bool scope_allowed(std::string_view indicator_id, IndicatorScope::Kind kind) {
  using Kind = IndicatorScope::Kind;
  if (indicator_id == indicator::kIP2) return kind == Kind::Global || kind == Kind::Object || kind == Kind::Actor;
  if (indicator_id == indicator::kIP4) return kind == Kind::Object;
  if (indicator_id == indicator::kIP7) return kind == Kind::Object;
  if (indicator_id == indicator::kIP11) return kind == Kind::Global || kind == Kind::Task;
  if (indicator_id == indicator::kActivitiesByActor) return kind == Kind::Actor;
  if (indicator_id == indicator::kActivityShareByObject) return kind == Kind::Object;
  return false;
}

Evaluation evaluate_rules(const IndicatorSnapshot& snapshot, std::span<const AlertRule> rules,
                          const NotifierState& state, Instant now) {
  Evaluation out;
  for (const auto& rule : rules) {
    if (!snapshot.configured.contains(rule.indicator_id)) {
      throw Error("UnknownIndicator", rule.rule_id + ": snapshot has no " + rule.indicator_id);
    }
    if (!scope_allowed(rule.indicator_id, rule.scope.kind) ||
        (rule.indicator_id == indicator::kIP4 && !rule.scope.ref.starts_with("PROCESS_MODEL:"))) {
      throw Error("ScopeMismatch", rule.rule_id + ": " + rule.indicator_id + " with scope " + rule.scope.to_string());
    }
    Window window = rule.window_s ? trailing_window(snapshot.computed_at, *rule.window_s) : Window::all();
    if (std::find(snapshot.windows.begin(), snapshot.windows.end(), window) == snapshot.windows.end()) {
      throw Error("UnknownIndicator", rule.rule_id + ": snapshot lacks the rule's window");
    }

    const auto* value = snapshot.find(rule.indicator_id, rule.scope, window);
    double observed = value ? value->value : 0.0;
    bool predicate = compare(rule.comparator, observed, rule.threshold);

    RuleState previous;
    if (auto it = state.find(rule.rule_id); it != state.end()) previous = it->second;

    bool cooled = rule.cooldown_s && previous.last_fired && (now - *previous.last_fired).count() >= *rule.cooldown_s;
    bool fire = predicate && (!previous.predicate_true || cooled);

    RuleState next{predicate, previous.last_fired};
    if (fire) {
      next.last_fired = now;
      out.notifications.push_back(Notification{rule.rule_id, now, observed, rule.threshold, rule.level, rule.scope,
                                                snapshot.as_of_seq, describe(rule, observed)});
    }
    out.next.emplace(rule.rule_id, next);
  }
  return out;
}

SnapshotConfig config_for_rules(SnapshotConfig base, std::span<const AlertRule> rules) {
  for (const auto& r : rules) {
    if (r.window_s) base.trailing_windows_s.insert(*r.window_s);
  }
  return base;
}

const SinkResult* DeliveryReport::find(std::string_view sink) const {
  for (const auto& r : results) {
    if (r.sink == sink) return &r;
  }
  return nullptr;
}

AlertDispatcher::AlertDispatcher(SinkConfig config) : config_(std::move(config)) {}

std::string to_journal_line(const Notification& n) { return ordered(n).dump(); }

DeliveryReport AlertDispatcher::dispatch(const Notification& n) {
  DeliveryReport report;
  auto line = to_journal_line(n);
  {
    std::lock_guard lock(journal_mutex_);
    std::ofstream out(config_.journal, std::ios::app);
    out << line << '\n';
    out.flush();
    report.results.push_back({"journal", static_cast<bool>(out), out ? "" : "write failed"});
  }

  if (config_.webhook_url) {
    SinkResult result{"webhook", false, ""};
    const auto& url = *config_.webhook_url;
    // Split "scheme://host[:port]" from the path.
    auto scheme_end = url.find("://");
    auto path_start = url.find('/', scheme_end == std::string::npos ? 0 : scheme_end + 3);
    std::string base = path_start == std::string::npos ? url : url.substr(0, path_start);
    std::string path = path_start == std::string::npos ? "/" : url.substr(path_start);
    try {
      httplib::Client client(base);
      client.set_connection_timeout(2, 0);
      client.set_read_timeout(5, 0);
      auto res = client.Post(path, line, "application/json");
      if (!res) {
        result.detail = "SinkUnreachable: " + httplib::to_string(res.error());
      } else if (res->status < 200 || res->status >= 300) {
        result.detail = "SinkUnreachable: HTTP " + std::to_string(res->status);
      } else {
        result.ok = true;
      }
    } catch (const std::exception& e) {
      result.detail = std::string{"SinkUnreachable: "} + e.what();
    }
    report.results.push_back(std::move(result));
  }

  if (config_.stream) {
    *config_.stream << "[" << to_string(n.level) << "] " << format_instant(n.fired_at) << " " << n.rule_id << ": "
                    << n.message << '\n';
    report.results.push_back({"stdout", static_cast<bool>(*config_.stream), ""});
  }
  return report;
}

std::vector<Notification> read_journal(const std::filesystem::path& path) {
  std::vector<Notification> out;
  std::ifstream in(path);
  if (!in) return out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    try {
      out.push_back(notification_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::parse_error& e) {
      throw Error("BadNotification", e.what());
    }
  }
  return out;
}

std::vector<Notification> replay_alerts(const TraceStore& store, std::span<const AlertRule> rules,
                                        const SnapshotConfig& config, std::span<const std::uint64_t> as_of_seqs) {
  auto effective = config_for_rules(config, rules);
  std::vector<Notification> out;
  NotifierState state;
  for (auto seq : as_of_seqs) {
    auto snapshot = snapshot_indicators(store.snapshot_at(seq), effective);
    auto evaluation = evaluate_rules(snapshot, rules, state, snapshot.computed_at);
    state = std::move(evaluation.next);
    for (auto& n : evaluation.notifications) out.push_back(std::move(n));
  }
  return out;
}

}  // namespace observatory
