#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "observatory/trace_model.hpp"

namespace observatory {

// Synthetic PLM activity. Randomness comes from std::mt19937_64 (fully
// specified by the C++ standard); uniform and exponential variates are derived
// from its raw output here rather than through <random> distributions, whose
// algorithms differ between standard libraries.

struct ScenarioActor {
  std::string id;
  Affiliation affiliation = Affiliation::Internal;
  double weight = 1.0;
};

struct Anomaly {
  enum class Kind : std::uint8_t { RefusalBurst, OverdueTask, SearchStorm };

  Kind kind = Kind::RefusalBurst;
  std::int64_t at_s = 0;  // offset from the scenario start
  nlohmann::json params = nlohmann::json::object();
};

std::string_view to_string(Anomaly::Kind k);

struct Scenario {
  std::uint64_t seed = 0;
  Instant start = from_epoch_seconds(1209369600);  // 2008-04-28T08:00:00Z
  std::int64_t duration_s = 3600;
  double mean_events_per_minute = 1.0;
  std::vector<ScenarioActor> actors;
  std::vector<ObjectRef> objects;
  std::map<Activity, double> activity_mix;  // missing codes weigh 0; empty = uniform
  double refusal_rate = 0.0;                // share of STATUS events with outcome=refused
  double task_rate = 0.05;                  // share of events that open a task
  std::int64_t task_deadline_s = 3600;
  std::vector<Anomaly> anomalies;
};

// Throws Error("InvalidScenario", "<field path>: <reason>").
Scenario parse_scenario(const nlohmann::json& j);
void validate_scenario(const Scenario& s);

// Base event count: round(duration_s * mean_events_per_minute / 60).
std::uint64_t planned_event_count(const Scenario& s);

// Canonical log lines in non-decreasing timestamp order, byte-identical for
// equal scenarios. Anomalies are spliced in with inject_anomaly.
std::vector<std::string> generate(const Scenario& scenario);

// Splices the anomaly's lines after every existing line with a timestamp
// <= theirs; existing lines are left untouched.
std::vector<std::string> inject_anomaly(std::vector<std::string> lines, const Anomaly& anomaly,
                                        const Scenario& scenario);

// Catalog matching the scenario's actors and deadline.
EntityCatalog catalog_for(const Scenario& scenario);
nlohmann::json to_json(const EntityCatalog& catalog);

}  // namespace observatory
