#include "observatory/simulator.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "observatory/collector.hpp"
#include "observatory/error.hpp"

namespace observatory {
namespace {

// Uniform [0, 1) from the top 53 bits of a 64-bit draw.
double uniform01(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

// Exp(1) by inversion.
double exponential(std::mt19937_64& rng) { return -std::log1p(-uniform01(rng)); }

std::size_t pick_weighted(std::mt19937_64& rng, const std::vector<double>& weights, double total) {
  double target = uniform01(rng) * total;
  double acc = 0.0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    acc += weights[i];
    if (target < acc && weights[i] > 0.0) return i;
  }
  // Rounding at the top end: last positive weight.
  for (std::size_t i = weights.size(); i-- > 0;) {
    if (weights[i] > 0.0) return i;
  }
  return 0;
}

[[noreturn]] void invalid(const std::string& path, const std::string& reason) {
  throw Error("InvalidScenario", path + ": " + reason);
}

double number_at(const nlohmann::json& j, const char* key, const std::string& path, double fallback) {
  auto it = j.find(key);
  if (it == j.end()) return fallback;
  if (!it->is_number()) invalid(path + "." + key, "expected a number");
  return it->get<double>();
}

std::int64_t integer_at(const nlohmann::json& j, const char* key, const std::string& path, std::int64_t fallback) {
  auto it = j.find(key);
  if (it == j.end()) return fallback;
  if (!it->is_number_integer()) invalid(path + "." + key, "expected an integer");
  return it->get<std::int64_t>();
}

std::string string_at(const nlohmann::json& j, const char* key, const std::string& path, std::string fallback) {
  auto it = j.find(key);
  if (it == j.end()) return fallback;
  if (!it->is_string()) invalid(path + "." + key, "expected a string");
  return it->get<std::string>();
}

ObjectRef object_param(const nlohmann::json& params, const std::string& path, const ObjectRef& fallback) {
  auto text = string_at(params, "object", path, fallback.to_string());
  auto ref = parse_object_ref(text);
  if (!ref) invalid(path + ".object", "expected KIND:id, got '" + text + "'");
  return *ref;
}

ObjectRef default_object(const Scenario& s, ObjectKind preferred) {
  for (const auto& o : s.objects) {
    if (o.kind == preferred) return o;
  }
  return s.objects.front();
}

RawLogRecord event(Instant t, const std::string& actor, Activity activity, const ObjectRef& object, AttrList attrs) {
  RawLogRecord r;
  r.timestamp = t;
  r.actor_id = actor;
  r.activity_code = std::string{to_string(activity)};
  r.object_kind = std::string{to_string(object.kind)};
  r.object_id = object.id;
  r.attrs = std::move(attrs);
  return r;
}

std::vector<RawLogRecord> anomaly_events(const Anomaly& anomaly, const Scenario& s) {
  const auto path = std::string{"anomaly "} + std::string{to_string(anomaly.kind)};
  const auto& p = anomaly.params;
  const Instant at = s.start + Seconds{anomaly.at_s};
  const std::string first_actor = s.actors.empty() ? "u1" : s.actors.front().id;
  std::vector<RawLogRecord> out;

  switch (anomaly.kind) {
    case Anomaly::Kind::RefusalBurst: {
      auto count = integer_at(p, "count", path, 5);
      auto gap = integer_at(p, "gap_s", path, 10);
      auto actor = string_at(p, "actor", path, first_actor);
      auto object = object_param(p, path, default_object(s, ObjectKind::ProcessModel));
      if (count < 0 || gap < 0) invalid(path, "count and gap_s must be >= 0");
      for (std::int64_t k = 0; k < count; ++k) {
        out.push_back(event(at + Seconds{k * gap}, actor, Activity::Status, object, {{"outcome", "refused"}}));
      }
      break;
    }
    case Anomaly::Kind::OverdueTask: {
      auto deadline = integer_at(p, "deadline_s", path, s.task_deadline_s);
      auto factor = number_at(p, "deadline_factor", path, 2.5);
      auto actor = string_at(p, "actor", path, first_actor);
      auto object = object_param(p, path, s.objects.front());
      auto task = string_at(p, "task", path, "TX1");
      bool withhold = p.value("withhold_end", false);
      if (deadline <= 0 || factor <= 0.0 || !is_token(task)) invalid(path, "bad deadline_s, deadline_factor or task");
      out.push_back(event(at, actor, Activity::Update, object, {{"task", task}, {"phase", "start"}}));
      if (!withhold) {
        auto duration = static_cast<std::int64_t>(std::llround(factor * static_cast<double>(deadline)));
        out.push_back(event(at + Seconds{duration}, actor, Activity::Status, object,
                            {{"task", task}, {"phase", "end"}, {"role", "output"}, {"outcome", "approved"}}));
      }
      break;
    }
    case Anomaly::Kind::SearchStorm: {
      auto n = integer_at(p, "n", path, 10);
      auto gap = integer_at(p, "gap_s", path, 60);
      auto actor = string_at(p, "actor", path, first_actor);
      auto object = object_param(p, path, default_object(s, ObjectKind::Document));
      if (n < 0 || gap < 0) invalid(path, "n and gap_s must be >= 0");
      for (std::int64_t k = 0; k < n; ++k) {
        out.push_back(event(at + Seconds{k * gap}, actor, Activity::Search, object, {}));
      }
      break;
    }
  }
  return out;
}

Instant line_time(const std::string& line) {
  auto t = parse_instant(std::string_view{line}.substr(0, line.find(' ')));
  if (!t) throw Error("InvalidScenario", "line without a timestamp: " + line);
  return *t;
}

}  // namespace

std::string_view to_string(Anomaly::Kind k) {
  switch (k) {
    case Anomaly::Kind::RefusalBurst: return "REFUSAL_BURST";
    case Anomaly::Kind::OverdueTask: return "OVERDUE_TASK";
    case Anomaly::Kind::SearchStorm: return "SEARCH_STORM";
  }
  return "REFUSAL_BURST";
}

Scenario parse_scenario(const nlohmann::json& j) {
  if (!j.is_object()) invalid("$", "scenario must be a JSON object");
  Scenario s;
  if (auto it = j.find("seed"); it != j.end()) {
    if (!it->is_number_integer()) invalid("seed", "expected an integer");
    s.seed = it->is_number_unsigned() ? it->get<std::uint64_t>() : static_cast<std::uint64_t>(it->get<std::int64_t>());
  }
  if (auto it = j.find("start"); it != j.end()) {
    auto t = it->is_string() ? parse_instant(it->get<std::string>()) : std::nullopt;
    if (!t) invalid("start", "expected YYYY-MM-DDTHH:MM:SSZ");
    s.start = *t;
  }
  s.duration_s = integer_at(j, "duration_s", "$", s.duration_s);
  s.mean_events_per_minute = number_at(j, "mean_events_per_minute", "$", s.mean_events_per_minute);
  s.refusal_rate = number_at(j, "refusal_rate", "$", s.refusal_rate);
  s.task_rate = number_at(j, "task_rate", "$", s.task_rate);
  s.task_deadline_s = integer_at(j, "task_deadline_s", "$", s.task_deadline_s);

  auto actors = j.find("actors");
  if (actors == j.end() || !actors->is_array()) invalid("actors", "expected an array");
  for (std::size_t i = 0; i < actors->size(); ++i) {
    const auto& a = (*actors)[i];
    auto path = "actors[" + std::to_string(i) + "]";
    if (!a.is_object()) invalid(path, "expected an object");
    ScenarioActor actor;
    actor.id = string_at(a, "id", path, "");
    auto affiliation = parse_affiliation(string_at(a, "affiliation", path, "INTERNAL"));
    if (!affiliation) invalid(path + ".affiliation", "expected INTERNAL or EXTERNAL");
    actor.affiliation = *affiliation;
    actor.weight = number_at(a, "weight", path, 1.0);
    s.actors.push_back(std::move(actor));
  }

  auto objects = j.find("objects");
  if (objects == j.end() || !objects->is_array()) invalid("objects", "expected an array");
  for (std::size_t i = 0; i < objects->size(); ++i) {
    const auto& o = (*objects)[i];
    auto ref = o.is_string() ? parse_object_ref(o.get<std::string>()) : std::nullopt;
    if (!ref) invalid("objects[" + std::to_string(i) + "]", "expected \"KIND:id\"");
    s.objects.push_back(std::move(*ref));
  }

  if (auto mix = j.find("activity_mix"); mix != j.end()) {
    if (!mix->is_object()) invalid("activity_mix", "expected an object");
    for (const auto& [code, weight] : mix->items()) {
      auto activity = parse_activity(code);
      if (!activity) invalid("activity_mix." + code, "unknown activity");
      if (!weight.is_number()) invalid("activity_mix." + code, "expected a number");
      s.activity_mix[*activity] = weight.get<double>();
    }
  }

  if (auto anomalies = j.find("anomalies"); anomalies != j.end()) {
    if (!anomalies->is_array()) invalid("anomalies", "expected an array");
    for (std::size_t i = 0; i < anomalies->size(); ++i) {
      const auto& a = (*anomalies)[i];
      auto path = "anomalies[" + std::to_string(i) + "]";
      if (!a.is_object()) invalid(path, "expected an object");
      Anomaly anomaly;
      auto kind = string_at(a, "kind", path, "");
      if (kind == "REFUSAL_BURST") {
        anomaly.kind = Anomaly::Kind::RefusalBurst;
      } else if (kind == "OVERDUE_TASK") {
        anomaly.kind = Anomaly::Kind::OverdueTask;
      } else if (kind == "SEARCH_STORM") {
        anomaly.kind = Anomaly::Kind::SearchStorm;
      } else {
        invalid(path + ".kind", "unknown anomaly '" + kind + "'");
      }
      anomaly.at_s = integer_at(a, "at", path, 0);
      if (auto params = a.find("params"); params != a.end()) {
        if (!params->is_object()) invalid(path + ".params", "expected an object");
        anomaly.params = *params;
      }
      s.anomalies.push_back(std::move(anomaly));
    }
  }
  validate_scenario(s);
  return s;
}

void validate_scenario(const Scenario& s) {
  if (s.duration_s <= 0) invalid("duration_s", "must be > 0");
  if (!(s.mean_events_per_minute >= 0.0) || !std::isfinite(s.mean_events_per_minute)) {
    invalid("mean_events_per_minute", "must be a finite number >= 0");
  }
  if (!(s.refusal_rate >= 0.0 && s.refusal_rate <= 1.0)) invalid("refusal_rate", "must lie in [0, 1]");
  if (!(s.task_rate >= 0.0 && s.task_rate <= 1.0)) invalid("task_rate", "must lie in [0, 1]");
  if (s.task_deadline_s <= 0) invalid("task_deadline_s", "must be > 0");
  if (s.actors.empty()) invalid("actors", "at least one actor required");
  bool positive = false;
  for (std::size_t i = 0; i < s.actors.size(); ++i) {
    const auto& a = s.actors[i];
    auto path = "actors[" + std::to_string(i) + "]";
    if (!is_token(a.id)) invalid(path + ".id", "expected a token");
    if (!(a.weight >= 0.0) || !std::isfinite(a.weight)) invalid(path + ".weight", "must be >= 0");
    positive = positive || a.weight > 0.0;
  }
  if (!positive) invalid("actors", "at least one weight must be positive");
  if (s.objects.empty()) invalid("objects", "at least one object required");
  positive = s.activity_mix.empty();
  for (const auto& [activity, weight] : s.activity_mix) {
    if (!(weight >= 0.0) || !std::isfinite(weight)) {
      invalid("activity_mix." + std::string{to_string(activity)}, "must be >= 0");
    }
    positive = positive || weight > 0.0;
  }
  if (!positive) invalid("activity_mix", "at least one weight must be positive");
  for (std::size_t i = 0; i < s.anomalies.size(); ++i) {
    if (s.anomalies[i].at_s < 0) invalid("anomalies[" + std::to_string(i) + "].at", "must be >= 0");
  }
}

std::uint64_t planned_event_count(const Scenario& s) {
  return static_cast<std::uint64_t>(
      std::llround(static_cast<double>(s.duration_s) * s.mean_events_per_minute / 60.0));
}

std::vector<std::string> generate(const Scenario& scenario) {
  validate_scenario(scenario);
  std::mt19937_64 rng(scenario.seed);
  const auto n = planned_event_count(scenario);

  // Arrival times: N+1 exponential gaps rescaled onto [0, duration), which
  // fixes the count at N while keeping exponential spacing.
  std::vector<double> cumulative(n + 1);
  double acc = 0.0;
  for (auto& c : cumulative) {
    acc += exponential(rng);
    c = acc;
  }

  std::vector<double> actor_weights;
  double actor_total = 0.0;
  for (const auto& a : scenario.actors) {
    actor_weights.push_back(a.weight);
    actor_total += a.weight;
  }
  std::vector<double> mix_weights;
  double mix_total = 0.0;
  for (Activity a : kAllActivities) {
    double w = scenario.activity_mix.empty() ? 1.0 : 0.0;
    if (auto it = scenario.activity_mix.find(a); it != scenario.activity_mix.end()) w = it->second;
    mix_weights.push_back(w);
    mix_total += w;
  }

  struct Draw {
    std::int64_t offset_s;
    std::size_t actor;
    std::size_t object;
    Activity activity;
    bool refused;
    bool opens_task;
    double task_fraction;
  };
  std::vector<Draw> draws;
  draws.reserve(n);
  for (std::uint64_t i = 0; i < n; ++i) {
    Draw d{};
    d.offset_s = static_cast<std::int64_t>(
        std::floor(static_cast<double>(scenario.duration_s) * cumulative[i] / cumulative[n]));
    d.actor = pick_weighted(rng, actor_weights, actor_total);
    d.object = static_cast<std::size_t>(uniform01(rng) * static_cast<double>(scenario.objects.size()));
    d.activity = kAllActivities[pick_weighted(rng, mix_weights, mix_total)];
    d.refused = uniform01(rng) < scenario.refusal_rate;
    d.opens_task = uniform01(rng) < scenario.task_rate;
    d.task_fraction = 0.1 + 0.8 * uniform01(rng);
    draws.push_back(d);
  }

  // Task lifecycles reuse later base events as their end, so every start has
  // an end and the event count stays N.
  enum class Role { None, Start, End };
  std::vector<Role> roles(n, Role::None);
  std::vector<std::size_t> owner(n, 0);  // end index -> start index
  std::vector<std::string> task_ids(n);
  std::size_t next_task = 1;
  for (std::size_t i = 0; i < n; ++i) {
    if (roles[i] != Role::None || !draws[i].opens_task) continue;
    auto due = draws[i].offset_s +
               static_cast<std::int64_t>(draws[i].task_fraction * static_cast<double>(scenario.task_deadline_s));
    std::size_t j = i + 1;
    while (j < n && (draws[j].offset_s < due || roles[j] != Role::None)) ++j;
    if (j >= n) continue;
    roles[i] = Role::Start;
    roles[j] = Role::End;
    owner[j] = i;
    task_ids[i] = "T" + std::to_string(next_task++);
  }

  std::vector<std::string> lines;
  lines.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& d = draws[i];
    std::size_t actor = d.actor;
    std::size_t object = d.object;
    AttrList attrs;
    if (roles[i] == Role::Start) {
      attrs = {{"task", task_ids[i]}, {"phase", "start"}};
    } else if (roles[i] == Role::End) {
      actor = draws[owner[i]].actor;
      object = draws[owner[i]].object;
      attrs = {{"task", task_ids[owner[i]]}, {"phase", "end"}, {"role", "output"}};
    }
    if (d.activity == Activity::Status) attrs.emplace_back("outcome", d.refused ? "refused" : "approved");
    lines.push_back(format_line(event(scenario.start + Seconds{d.offset_s}, scenario.actors[actor].id, d.activity,
                                      scenario.objects[object], std::move(attrs))));
  }

  for (const auto& anomaly : scenario.anomalies) lines = inject_anomaly(std::move(lines), anomaly, scenario);
  return lines;
}

std::vector<std::string> inject_anomaly(std::vector<std::string> lines, const Anomaly& anomaly,
                                        const Scenario& scenario) {
  if (scenario.objects.empty()) invalid("objects", "at least one object required");
  auto extra = anomaly_events(anomaly, scenario);
  if (extra.empty()) return lines;

  std::vector<std::string> out;
  out.reserve(lines.size() + extra.size());
  std::size_t i = 0;
  for (const auto& e : extra) {
    while (i < lines.size() && line_time(lines[i]) <= e.timestamp) out.push_back(std::move(lines[i++]));
    out.push_back(format_line(e));
  }
  while (i < lines.size()) out.push_back(std::move(lines[i++]));
  return out;
}

EntityCatalog catalog_for(const Scenario& scenario) {
  EntityCatalog catalog;
  for (const auto& a : scenario.actors) catalog.actors[a.id] = a.affiliation;
  catalog.default_deadline_s = scenario.task_deadline_s;
  return catalog;
}

nlohmann::json to_json(const EntityCatalog& catalog) {
  nlohmann::json j;
  j["actors"] = nlohmann::json::object();
  for (const auto& [id, aff] : catalog.actors) j["actors"][id] = to_string(aff);
  j["task_deadlines"] = catalog.task_deadlines;
  j["default_deadline_s"] = catalog.default_deadline_s;
  return j;
}

}  // namespace observatory
