#include "observatory/statistics.hpp"

#include <algorithm>
#include <cctype>

#include "json_util.hpp"
#include "observatory/error.hpp"

namespace observatory {
namespace {

constexpr std::array<std::string_view, 6> kFunctionNames = {"OCCURRENCE_COUNT",   "FREQUENCY",
                                                            "DISTINCT_ACTORS",    "MODIFICATION_COUNT",
                                                            "TASK_OUTPUT_COUNT",  "SPAN_DURATION"};

std::string any_slot() { return std::string{kAnySlot}; }

bool scope_matches(const ExtractionContext& ctx, const IndicatorScope& scope) {
  switch (scope.kind) {
    case IndicatorScope::Kind::Global: return true;
    case IndicatorScope::Kind::Object:
      // A bare kind ("DOCUMENT") selects every object of that kind.
      if (scope.ref.find(':') == std::string::npos) return to_string(ctx.object.kind) == scope.ref;
      return ctx.object.to_string() == scope.ref;
    case IndicatorScope::Kind::Actor: return ctx.actor.id == scope.ref;
    case IndicatorScope::Kind::Task: return ctx.attr(attr::kTask) == std::optional<std::string_view>{scope.ref};
  }
  return false;
}

bool is_refusal(const ExtractionContext& ctx) {
  return ctx.activity == Activity::Status && ctx.attr(attr::kOutcome) == std::optional<std::string_view>{"refused"};
}

IndicatorValue make_value(std::string_view id, IndicatorScope scope, const Window& window, double value, Unit unit,
                          const Snapshot& snap) {
  return IndicatorValue{std::string{id}, std::move(scope), window, value, unit, snapshot_time(snap), snap.as_of_seq};
}

}  // namespace

nlohmann::json to_json(const Window& w) {
  if (w.is_all()) return "ALL";
  nlohmann::json j;
  j["from"] = w.from ? nlohmann::json(format_instant(*w.from)) : nlohmann::json(nullptr);
  j["to"] = w.to ? nlohmann::json(format_instant(*w.to)) : nlohmann::json(nullptr);
  return j;
}

std::vector<ExtractionContext> filter_window(std::span<const ExtractionContext> records, const Window& window) {
  std::vector<ExtractionContext> out;
  for (const auto& r : records) {
    if (window.contains(r.timestamp)) out.push_back(r);
  }
  return out;
}

std::string_view to_string(MeasureFunction f) { return kFunctionNames[static_cast<std::size_t>(f)]; }

std::optional<MeasureFunction> parse_measure_function(std::string_view text) {
  for (std::size_t i = 0; i < kFunctionNames.size(); ++i) {
    if (kFunctionNames[i] == text) return static_cast<MeasureFunction>(i);
  }
  return std::nullopt;
}

MeasureMap compute_measure(std::span<const ExtractionContext> records, const MeasureSpec& spec, const Window& window) {
  MeasureMap out;
  std::uint64_t total = 0;
  switch (spec.function) {
    case MeasureFunction::OccurrenceCount:
    case MeasureFunction::Frequency: {
      for (const auto& ctx : records) {
        if (!window.contains(ctx.timestamp)) continue;
        out[triplet_key(ctx, spec.granularity)] += 1.0;
        ++total;
      }
      if (spec.function == MeasureFunction::Frequency) {
        if (total == 0) throw Error("EmptyWindow", "FREQUENCY is undefined over zero events");
        for (auto& [key, value] : out) value /= static_cast<double>(total);
      }
      break;
    }
    case MeasureFunction::DistinctActors: {
      std::map<TripletKey, std::set<std::string>> actors;
      for (const auto& ctx : records) {
        if (!window.contains(ctx.timestamp)) continue;
        auto key = triplet_key(ctx, spec.granularity);
        key.actor = any_slot();
        actors[key].insert(ctx.actor.id);
      }
      for (const auto& [key, ids] : actors) out[key] = static_cast<double>(ids.size());
      break;
    }
    case MeasureFunction::ModificationCount: {
      for (const auto& ctx : records) {
        if (!window.contains(ctx.timestamp)) continue;
        out[TripletKey{any_slot(), object_label(ctx.object, spec.granularity), any_slot()}] +=
            is_modification(ctx.activity) ? 1.0 : 0.0;
      }
      break;
    }
    case MeasureFunction::TaskOutputCount: {
      std::map<TripletKey, std::set<std::string>> tasks;
      for (const auto& ctx : records) {
        if (!window.contains(ctx.timestamp)) continue;
        auto& ids = tasks[TripletKey{any_slot(), object_label(ctx.object, spec.granularity), any_slot()}];
        auto task = ctx.attr(attr::kTask);
        if (task && ctx.attr(attr::kRole) == std::optional<std::string_view>{"output"}) ids.emplace(*task);
      }
      for (const auto& [key, ids] : tasks) out[key] = static_cast<double>(ids.size());
      break;
    }
    case MeasureFunction::SpanDuration: {
      std::map<TripletKey, std::pair<Instant, Instant>> bounds;
      for (const auto& ctx : records) {
        if (!window.contains(ctx.timestamp)) continue;
        auto [it, inserted] = bounds.try_emplace(triplet_key(ctx, spec.granularity), ctx.timestamp, ctx.timestamp);
        if (!inserted) {
          it->second.first = std::min(it->second.first, ctx.timestamp);
          it->second.second = std::max(it->second.second, ctx.timestamp);
        }
      }
      for (const auto& [key, b] : bounds) out[key] = static_cast<double>((b.second - b.first).count());
      break;
    }
  }
  return out;
}

std::vector<std::pair<TripletKey, double>> frequent_triplets(std::span<const ExtractionContext> records,
                                                             const MeasureSpec& spec, const Window& window) {
  std::vector<std::pair<TripletKey, double>> out;
  for (auto& [key, value] : compute_measure(records, spec, window)) {
    if (value >= spec.threshold) out.emplace_back(key, value);
  }
  return out;
}

std::string IndicatorScope::to_string() const {
  switch (kind) {
    case Kind::Global: return "global";
    case Kind::Object: return "object:" + ref;
    case Kind::Actor: return "actor:" + ref;
    case Kind::Task: return "task:" + ref;
  }
  return "global";
}

std::optional<IndicatorScope> parse_scope(std::string_view text) {
  if (text == "global") return IndicatorScope::global();
  auto colon = text.find(':');
  if (colon == std::string_view::npos) return std::nullopt;
  auto prefix = text.substr(0, colon);
  auto ref = text.substr(colon + 1);
  if (prefix == "object") {
    if (parse_object_ref(ref) || parse_object_kind(ref)) return IndicatorScope::object(std::string{ref});
    return std::nullopt;
  }
  if (!is_token(ref)) return std::nullopt;
  if (prefix == "actor") return IndicatorScope::actor(std::string{ref});
  if (prefix == "task") return IndicatorScope::task(std::string{ref});
  return std::nullopt;
}

std::string_view to_string(Unit u) {
  switch (u) {
    case Unit::Count: return "count";
    case Unit::Seconds: return "seconds";
    case Unit::Percent: return "percent";
  }
  return "count";
}

bool is_indicator_id(std::string_view id) {
  return std::find(kIndicatorIds.begin(), kIndicatorIds.end(), id) != kIndicatorIds.end();
}

std::optional<std::string> canonical_indicator_id(std::string_view id) {
  std::string upper;
  for (char c : id) upper += static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  for (char& c : upper) {
    if (c == '-') c = '_';
  }
  if (is_indicator_id(upper)) return upper;
  return std::nullopt;
}

nlohmann::json to_json(const IndicatorValue& v) {
  nlohmann::ordered_json j;
  j["indicator_id"] = v.indicator_id;
  j["scope"] = v.scope.to_string();
  j["window"] = to_json(v.window);
  j["value"] = detail::number_json<nlohmann::ordered_json>(v.value);
  j["unit"] = to_string(v.unit);
  j["computed_at"] = format_instant(v.computed_at);
  j["as_of_seq"] = v.as_of_seq;
  return nlohmann::json(j);
}

Instant snapshot_time(const Snapshot& snap) {
  if (snap.records.empty()) return from_epoch_seconds(0);
  return snap.records.back().timestamp;
}

IndicatorValue indicator_ip2(const Snapshot& snap, const Window& window, const IndicatorScope& scope) {
  auto n = std::count_if(snap.records.begin(), snap.records.end(), [&](const ExtractionContext& ctx) {
    return window.contains(ctx.timestamp) && is_refusal(ctx) && scope_matches(ctx, scope);
  });
  return make_value(indicator::kIP2, scope, window, static_cast<double>(n), Unit::Count, snap);
}

Ip11Result indicator_ip11(const Snapshot& snap, const EntityCatalog& catalog, const Window& window) {
  Ip11Result result;
  for (auto& span : correlate_tasks(snap.records).spans) {
    if (span.status != TaskSpan::Status::Closed || !window.contains(*span.end)) continue;
    auto deadline = catalog.deadline_for(span.task_id);
    if (*span.duration_s > deadline) result.overdue.push_back({span.task_id, *span.duration_s, deadline});
    result.closed.push_back(std::move(span));
  }
  result.value = make_value(indicator::kIP11, IndicatorScope::global(), window,
                            static_cast<double>(result.overdue.size()), Unit::Count, snap);
  return result;
}

std::vector<IndicatorValue> indicator_ip7(const Snapshot& snap, std::int64_t gap_s, const Window& window,
                                          bool include_view) {
  if (gap_s < 0) throw Error("BadParameter", "gap_s must be >= 0");
  auto events = filter_window(snap.records, window);
  ActivitySet search{Activity::Search};
  if (include_view) search.insert(Activity::View);
  std::map<std::string, std::int64_t> per_object;
  for (const auto& s : sessionize(events, search, gap_s)) per_object[s.object.to_string()] += s.duration_s;

  std::vector<IndicatorValue> out;
  for (const auto& [label, seconds] : per_object) {
    out.push_back(make_value(indicator::kIP7, IndicatorScope::object(label), window, static_cast<double>(seconds),
                             Unit::Seconds, snap));
  }
  return out;
}

IndicatorValue indicator_ip4(const Snapshot& snap, const ObjectRef& process_model, const Window& window) {
  if (process_model.kind != ObjectKind::ProcessModel) {
    throw Error("WrongObjectKind", process_model.to_string() + " is not a PROCESS_MODEL");
  }
  auto n = std::count_if(snap.records.begin(), snap.records.end(), [&](const ExtractionContext& ctx) {
    return window.contains(ctx.timestamp) && ctx.object == process_model && is_modification(ctx.activity);
  });
  return make_value(indicator::kIP4, IndicatorScope::object(process_model.to_string()), window, static_cast<double>(n),
                    Unit::Count, snap);
}

std::map<std::string, std::uint64_t> activities_by_actor(std::span<const ExtractionContext> records,
                                                         const Window& window) {
  std::map<std::string, std::uint64_t> out;
  for (const auto& ctx : records) {
    if (window.contains(ctx.timestamp)) ++out[ctx.actor.id];
  }
  return out;
}

std::map<std::string, double> activity_share_by_object(std::span<const ExtractionContext> records,
                                                       const Window& window, Granularity granularity) {
  std::map<std::string, std::uint64_t> counts;
  std::uint64_t total = 0;
  for (const auto& ctx : records) {
    if (!window.contains(ctx.timestamp)) continue;
    ++counts[object_label(ctx.object, granularity)];
    ++total;
  }
  if (total == 0) throw Error("EmptyWindow", "no activity in window");
  std::map<std::string, double> out;
  for (const auto& [label, n] : counts) out[label] = 100.0 * static_cast<double>(n) / static_cast<double>(total);
  return out;
}

const IndicatorValue* IndicatorSnapshot::find(std::string_view id, const IndicatorScope& scope,
                                              const Window& window) const {
  for (const auto& v : indicators) {
    if (v.indicator_id == id && v.scope == scope && v.window == window) return &v;
  }
  return nullptr;
}

nlohmann::json to_json(const IndicatorSnapshot& s) {
  nlohmann::ordered_json j;
  j["as_of_seq"] = s.as_of_seq;
  j["computed_at"] = format_instant(s.computed_at);
  j["indicators"] = nlohmann::ordered_json::array();
  for (const auto& v : s.indicators) j["indicators"].push_back(nlohmann::ordered_json(to_json(v)));
  return nlohmann::json(j);
}

Window trailing_window(Instant computed_at, std::int64_t seconds) {
  auto end = computed_at + Seconds{1};
  return Window{end - Seconds{seconds}, end};
}

IndicatorSnapshot snapshot_indicators(const Snapshot& snap, const SnapshotConfig& config) {
  IndicatorSnapshot out;
  out.as_of_seq = snap.as_of_seq;
  out.computed_at = snapshot_time(snap);
  out.configured = config.indicators;
  auto enabled = [&](std::string_view id) { return config.indicators.contains(std::string{id}); };

  std::vector<ObjectRef> process_models = config.process_models;
  if (process_models.empty()) {
    std::set<ObjectRef> seen;
    for (const auto& ctx : snap.records) {
      if (ctx.object.kind == ObjectKind::ProcessModel) seen.insert(ctx.object);
    }
    process_models.assign(seen.begin(), seen.end());
  }

  std::vector<Window> windows{Window::all()};
  for (auto d : config.trailing_windows_s) windows.push_back(trailing_window(out.computed_at, d));
  out.windows = windows;

  auto push = [&](IndicatorValue v) { out.indicators.push_back(std::move(v)); };
  for (const auto& window : windows) {
    auto events = filter_window(snap.records, window);
    std::set<std::string> objects;
    std::set<std::string> actors;
    for (const auto& ctx : events) {
      objects.insert(ctx.object.to_string());
      actors.insert(ctx.actor.id);
    }

    if (enabled(indicator::kIP2)) {
      push(indicator_ip2(snap, window));
      for (const auto& o : objects) push(indicator_ip2(snap, window, IndicatorScope::object(o)));
      for (const auto& a : actors) push(indicator_ip2(snap, window, IndicatorScope::actor(a)));
    }
    if (enabled(indicator::kIP4)) {
      for (const auto& pm : process_models) push(indicator_ip4(snap, pm, window));
    }
    if (enabled(indicator::kIP7)) {
      for (auto& v : indicator_ip7(snap, config.ip7_gap_s, window, config.ip7_include_view)) push(std::move(v));
    }
    if (enabled(indicator::kIP11)) {
      auto ip11 = indicator_ip11(snap, config.catalog, window);
      push(ip11.value);
      // Per task id: number of its closed spans that overran.
      std::map<std::string, double> per_task;
      for (const auto& span : ip11.closed) {
        per_task[span.task_id] += *span.duration_s > config.catalog.deadline_for(span.task_id) ? 1.0 : 0.0;
      }
      for (const auto& [task, n] : per_task) {
        push(make_value(indicator::kIP11, IndicatorScope::task(task), window, n, Unit::Count, snap));
      }
    }
    if (enabled(indicator::kActivitiesByActor)) {
      for (const auto& [actor, n] : activities_by_actor(events)) {
        push(make_value(indicator::kActivitiesByActor, IndicatorScope::actor(actor), window, static_cast<double>(n),
                        Unit::Count, snap));
      }
    }
    if (enabled(indicator::kActivityShareByObject) && !events.empty()) {
      for (const auto& [label, pct] : activity_share_by_object(events, Window::all(), config.granularity)) {
        push(make_value(indicator::kActivityShareByObject, IndicatorScope::object(label), window, pct, Unit::Percent,
                        snap));
      }
    }
  }
  return out;
}

}  // namespace observatory
