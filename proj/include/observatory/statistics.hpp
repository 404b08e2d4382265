#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "observatory/structurer.hpp"
#include "observatory/trace_model.hpp"
#include "observatory/trace_store.hpp"

namespace observatory {

// Half-open [from, to); an absent bound is unbounded.
struct Window {
  std::optional<Instant> from;
  std::optional<Instant> to;

  static Window all() { return {}; }
  bool is_all() const { return !from && !to; }
  bool contains(Instant t) const { return (!from || t >= *from) && (!to || t < *to); }
  bool operator==(const Window&) const = default;
};

nlohmann::json to_json(const Window& w);  // "ALL" or {"from": ts|null, "to": ts|null}

std::vector<ExtractionContext> filter_window(std::span<const ExtractionContext> records, const Window& window);

enum class MeasureFunction : std::uint8_t {
  OccurrenceCount,
  Frequency,
  DistinctActors,
  ModificationCount,
  TaskOutputCount,
  SpanDuration,
};

std::string_view to_string(MeasureFunction f);
std::optional<MeasureFunction> parse_measure_function(std::string_view text);

struct MeasureSpec {
  MeasureFunction function = MeasureFunction::OccurrenceCount;
  Granularity granularity = Granularity::ObjectIdentity;
  double threshold = 0.0;
};

using MeasureMap = std::map<TripletKey, double>;

// Group keys per function:
//   OCCURRENCE_COUNT, FREQUENCY, SPAN_DURATION   (activity, object, actor)
//   DISTINCT_ACTORS                               (activity, object, *)
//   MODIFICATION_COUNT, TASK_OUTPUT_COUNT         (*, object, *)
// FREQUENCY over an empty window throws Error("EmptyWindow").
MeasureMap compute_measure(std::span<const ExtractionContext> records, const MeasureSpec& spec,
                           const Window& window = Window::all());

// Keys whose measure is >= spec.threshold.
std::vector<std::pair<TripletKey, double>> frequent_triplets(std::span<const ExtractionContext> records,
                                                             const MeasureSpec& spec,
                                                             const Window& window = Window::all());

struct IndicatorScope {
  enum class Kind : std::uint8_t { Global, Object, Actor, Task };

  Kind kind = Kind::Global;
  std::string ref;  // object label, actor id or task id; empty for global

  static IndicatorScope global() { return {}; }
  static IndicatorScope object(std::string label) { return {Kind::Object, std::move(label)}; }
  static IndicatorScope actor(std::string id) { return {Kind::Actor, std::move(id)}; }
  static IndicatorScope task(std::string id) { return {Kind::Task, std::move(id)}; }

  // "global", "object:<label>", "actor:<id>", "task:<id>"
  std::string to_string() const;
  auto operator<=>(const IndicatorScope&) const = default;
};

std::optional<IndicatorScope> parse_scope(std::string_view text);

enum class Unit : std::uint8_t { Count, Seconds, Percent };
std::string_view to_string(Unit u);

namespace indicator {
inline constexpr std::string_view kIP2 = "IP2";
inline constexpr std::string_view kIP4 = "IP4";
inline constexpr std::string_view kIP7 = "IP7";
inline constexpr std::string_view kIP11 = "IP11";
inline constexpr std::string_view kActivitiesByActor = "ACTIVITIES_BY_ACTOR";
inline constexpr std::string_view kActivityShareByObject = "ACTIVITY_SHARE_BY_OBJECT";
}  // namespace indicator

inline constexpr std::array<std::string_view, 6> kIndicatorIds = {
    indicator::kIP2,  indicator::kIP4, indicator::kIP7, indicator::kIP11, indicator::kActivitiesByActor,
    indicator::kActivityShareByObject};

bool is_indicator_id(std::string_view id);
// Accepts any letter case ("ip2", "activities_by_actor") and returns the canonical id.
std::optional<std::string> canonical_indicator_id(std::string_view id);

struct IndicatorValue {
  std::string indicator_id;
  IndicatorScope scope;
  Window window;
  double value = 0.0;
  Unit unit = Unit::Count;
  Instant computed_at;
  std::uint64_t as_of_seq = 0;

  bool operator==(const IndicatorValue&) const = default;
};

nlohmann::json to_json(const IndicatorValue& v);

// Timestamp of the newest record in the snapshot (epoch when empty). Used as
// computed_at so that every result is a pure function of the snapshot.
Instant snapshot_time(const Snapshot& snap);

// Refused STATUS events. Scope may be global, an object label or an actor id.
IndicatorValue indicator_ip2(const Snapshot& snap, const Window& window = Window::all(),
                             const IndicatorScope& scope = IndicatorScope::global());

struct OverdueTask {
  std::string task_id;
  std::int64_t duration_s = 0;
  std::int64_t deadline_s = 0;

  bool operator==(const OverdueTask&) const = default;
};

struct Ip11Result {
  IndicatorValue value;
  std::vector<OverdueTask> overdue;
  std::vector<TaskSpan> closed;  // closed spans that ended inside the window
};

// Closed task spans (ending inside the window) that exceeded their deadline.
Ip11Result indicator_ip11(const Snapshot& snap, const EntityCatalog& catalog, const Window& window = Window::all());

// Search time per object: summed session durations across actors.
std::vector<IndicatorValue> indicator_ip7(const Snapshot& snap, std::int64_t gap_s,
                                          const Window& window = Window::all(), bool include_view = false);

// Modifications of a process model. Throws Error("WrongObjectKind").
IndicatorValue indicator_ip4(const Snapshot& snap, const ObjectRef& process_model,
                             const Window& window = Window::all());

std::map<std::string, std::uint64_t> activities_by_actor(std::span<const ExtractionContext> records,
                                                         const Window& window = Window::all());

// Percent of events per object label. Throws Error("EmptyWindow").
std::map<std::string, double> activity_share_by_object(std::span<const ExtractionContext> records,
                                                       const Window& window = Window::all(),
                                                       Granularity granularity = Granularity::ObjectIdentity);

struct SnapshotConfig {
  EntityCatalog catalog;
  std::int64_t ip7_gap_s = 1800;
  bool ip7_include_view = false;
  Granularity granularity = Granularity::ObjectIdentity;
  // Trailing windows (seconds) evaluated in addition to ALL; each becomes
  // [computed_at + 1s - d, computed_at + 1s).
  std::set<std::int64_t> trailing_windows_s;
  // Process models for IP4; empty means every PROCESS_MODEL object seen.
  std::vector<ObjectRef> process_models;
  std::set<std::string> indicators{kIndicatorIds.begin(), kIndicatorIds.end()};
};

struct IndicatorSnapshot {
  std::uint64_t as_of_seq = 0;
  Instant computed_at;
  std::vector<IndicatorValue> indicators;
  std::set<std::string> configured;
  std::vector<Window> windows;  // ALL first, then the trailing windows

  const IndicatorValue* find(std::string_view id, const IndicatorScope& scope, const Window& window) const;
  bool operator==(const IndicatorSnapshot&) const = default;
};

nlohmann::json to_json(const IndicatorSnapshot& s);

Window trailing_window(Instant computed_at, std::int64_t seconds);

IndicatorSnapshot snapshot_indicators(const Snapshot& snap, const SnapshotConfig& config);

}  // namespace observatory
