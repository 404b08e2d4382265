#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "observatory/statistics.hpp"

namespace observatory {

// Equality is deliberately absent: indicator values are rationals.
enum class Comparator : std::uint8_t { GreaterEqual, Greater, LessEqual, Less };

std::string_view to_string(Comparator c);
std::optional<Comparator> parse_comparator(std::string_view text);
bool compare(Comparator c, double observed, double threshold);

enum class AlertLevel : std::uint8_t { Info, Warning, Critical };

std::string_view to_string(AlertLevel l);
std::optional<AlertLevel> parse_alert_level(std::string_view text);

struct AlertRule {
  std::string rule_id;
  std::string indicator_id;
  IndicatorScope scope;
  Comparator comparator = Comparator::GreaterEqual;
  double threshold = 0.0;
  AlertLevel level = AlertLevel::Warning;
  std::optional<std::int64_t> window_s;    // nullopt = ALL
  std::optional<std::int64_t> cooldown_s;  // nullopt = never re-fire while true

  bool operator==(const AlertRule&) const = default;
};

nlohmann::json to_json(const AlertRule& r);
nlohmann::json to_json(std::span<const AlertRule> rules);

// Validates a JSON array of rules.
// Errors: BadRuleSet, DuplicateRuleId, BadComparator, UnknownIndicatorId,
// BadRule; details carry the array position ("rules[1]").
std::vector<AlertRule> parse_rules(const nlohmann::json& j);
std::vector<AlertRule> load_rules(const std::filesystem::path& path);

struct Notification {
  std::string rule_id;
  Instant fired_at;
  double observed = 0.0;
  double threshold = 0.0;
  AlertLevel level = AlertLevel::Warning;
  IndicatorScope scope;
  std::uint64_t as_of_seq = 0;
  std::string message;

  bool operator==(const Notification&) const = default;
};

nlohmann::json to_json(const Notification& n);
Notification notification_from_json(const nlohmann::json& j);

struct RuleState {
  bool predicate_true = false;
  std::optional<Instant> last_fired;

  bool operator==(const RuleState&) const = default;
};

using NotifierState = std::map<std::string, RuleState>;

struct Evaluation {
  std::vector<Notification> notifications;
  NotifierState next;
};

// Edge-triggered evaluation. A rule fires on a false->true transition of its
// predicate, or while it stays true once cooldown_s has elapsed since its last
// firing; it re-arms when the predicate turns false. A scope the snapshot has
// no entry for observes 0.
// Errors: UnknownIndicator, ScopeMismatch.
Evaluation evaluate_rules(const IndicatorSnapshot& snapshot, std::span<const AlertRule> rules,
                          const NotifierState& state, Instant now);

// Scope kinds each indicator accepts.
bool scope_allowed(std::string_view indicator_id, IndicatorScope::Kind kind);

// Snapshot configuration that covers every window referenced by the rules.
SnapshotConfig config_for_rules(SnapshotConfig base, std::span<const AlertRule> rules);

struct SinkResult {
  std::string sink;
  bool ok = false;
  std::string detail;
};

struct DeliveryReport {
  std::vector<SinkResult> results;

  const SinkResult* find(std::string_view sink) const;
};

struct SinkConfig {
  std::filesystem::path journal;           // always written
  std::optional<std::string> webhook_url;  // "http://host:port/path"
  std::ostream* stream = nullptr;          // optional human-readable echo
};

// Writes notifications to the alert journal and optional sinks. Journal
// writes are serialized; a webhook failure never prevents the journal write.
class AlertDispatcher {
 public:
  explicit AlertDispatcher(SinkConfig config);

  DeliveryReport dispatch(const Notification& n);
  const SinkConfig& config() const { return config_; }

 private:
  SinkConfig config_;
  std::mutex journal_mutex_;
};

std::string to_journal_line(const Notification& n);
std::vector<Notification> read_journal(const std::filesystem::path& path);

// Offline evaluation: one snapshot per entry of `as_of_seqs` (ascending),
// starting from an empty notifier state.
std::vector<Notification> replay_alerts(const TraceStore& store, std::span<const AlertRule> rules,
                                        const SnapshotConfig& config, std::span<const std::uint64_t> as_of_seqs);

}  // namespace observatory
