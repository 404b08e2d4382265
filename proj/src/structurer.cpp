#include "observatory/structurer.hpp"

#include <algorithm>
#include <map>
#include <unordered_map>

#include "observatory/error.hpp"

namespace observatory {
namespace {

bool valid_reserved(std::string_view key, std::string_view value) {
  if (key == attr::kOutcome) return value == "approved" || value == "refused";
  if (key == attr::kPhase) return value == "start" || value == "end";
  if (key == attr::kRole) return value == "input" || value == "output";
  if (key == attr::kTask) return is_token(value);
  return true;
}

IngestResult ingest_parsed(TraceStore& store, std::vector<RawLogRecord> records, const EntityCatalog& catalog,
                           Quarantine& quarantine, const std::unordered_map<std::uint64_t, std::string>* raw_lines) {
  IngestResult result;
  auto raw_text = [&](const RawLogRecord& r) {
    if (raw_lines) {
      if (auto it = raw_lines->find(r.source_line_no); it != raw_lines->end()) return it->second;
    }
    return format_line(r);
  };

  auto total = records.size();
  result.ignored = static_cast<std::uint64_t>(std::count_if(records.begin(), records.end(),
                                                            [](const RawLogRecord& r) { return !is_action_line(r); }));
  auto cleaned = clean_records(std::move(records));
  result.duplicates = total - result.ignored - cleaned.size();

  StructureStats stats;
  for (const auto& record : cleaned) {
    auto structured = to_context(record, catalog, &stats);
    if (auto* f = std::get_if<StructureFailure>(&structured)) {
      quarantine.add({record.source_line_no, raw_text(record), std::string{to_string(f->code)}, f->token});
      ++result.quarantined;
      continue;
    }
    auto& ctx = std::get<ExtractionContext>(structured);
    if (store.contains_event(ctx)) {
      ++result.duplicates;
      continue;
    }
    if (auto last = store.last_timestamp(); last && ctx.timestamp < *last) {
      quarantine.add({record.source_line_no, raw_text(record), "OutOfOrder",
                      "timestamp precedes stored " + format_instant(*last)});
      ++result.quarantined;
      continue;
    }
    store.append(std::move(ctx));
    ++result.accepted;
  }
  store.flush();
  result.unknown_actors = stats.unknown_actors;
  result.last_seq = store.last_seq();
  return result;
}

}  // namespace

std::string_view to_string(StructureError e) {
  switch (e) {
    case StructureError::UnknownActivityCode: return "UnknownActivityCode";
    case StructureError::UnknownObjectKind: return "UnknownObjectKind";
    case StructureError::BadReservedAttr: return "BadReservedAttr";
  }
  return "Unknown";
}

std::variant<ExtractionContext, StructureFailure> to_context(const RawLogRecord& record, const EntityCatalog& catalog,
                                                             StructureStats* stats) {
  auto activity = parse_activity(record.activity_code);
  if (!activity) return StructureFailure{StructureError::UnknownActivityCode, record.activity_code};
  auto kind = parse_object_kind(record.object_kind);
  if (!kind) return StructureFailure{StructureError::UnknownObjectKind, record.object_kind};

  ExtractionContext ctx;
  ctx.timestamp = record.timestamp;
  ctx.activity = *activity;
  ctx.object = ObjectRef{*kind, record.object_id};
  ctx.actor.id = record.actor_id;
  for (const auto& [key, value] : record.attrs) {
    if (!valid_reserved(key, value)) return StructureFailure{StructureError::BadReservedAttr, key + "=" + value};
    ctx.attrs.emplace(key, value);
  }
  if (auto affiliation = catalog.affiliation_of(record.actor_id)) {
    ctx.actor.affiliation = *affiliation;
  } else {
    ctx.actor.affiliation = Affiliation::Internal;
    if (stats) ++stats->unknown_actors;
  }
  return ctx;
}

namespace {

nlohmann::ordered_json ordered(const QuarantineEntry& entry) {
  nlohmann::ordered_json j;
  j["line_no"] = entry.line_no;
  j["raw"] = entry.raw;
  j["code"] = entry.code;
  j["detail"] = entry.detail;
  return j;
}

}  // namespace

nlohmann::json to_json(const QuarantineEntry& entry) { return nlohmann::json(ordered(entry)); }

Quarantine::Quarantine(const std::filesystem::path& sidecar) : out_(sidecar, std::ios::app) {
  if (!out_) throw Error("StoreUnavailable", sidecar.string());
}

std::filesystem::path Quarantine::sidecar_for(const std::filesystem::path& store_path) {
  auto p = store_path;
  p += ".quarantine.ndjson";
  return p;
}

void Quarantine::add(QuarantineEntry entry) {
  if (out_.is_open()) {
    out_ << ordered(entry).dump() << '\n';
    out_.flush();
  }
  entries_.push_back(std::move(entry));
}

IngestResult ingest_lines(TraceStore& store, std::span<const std::string> lines, const EntityCatalog& catalog,
                          Quarantine& quarantine, const LogGrammar& grammar,
                          std::span<const std::uint64_t> line_numbers) {
  if (!line_numbers.empty() && line_numbers.size() != lines.size()) {
    throw Error("BadArgument", "line_numbers must match lines");
  }
  std::vector<RawLogRecord> records;
  std::vector<QuarantineEntry> rejected;
  std::unordered_map<std::uint64_t, std::string> raw_lines;
  records.reserve(lines.size());
  for (std::size_t i = 0; i < lines.size(); ++i) {
    std::uint64_t line_no = line_numbers.empty() ? i + 1 : line_numbers[i];
    auto parsed = parse_line(lines[i], line_no, grammar);
    if (auto* f = std::get_if<ParseFailure>(&parsed)) {
      if (grammar.strict) {
        throw Error("StrictParseAbort", "line " + std::to_string(line_no) + ": " + std::string{to_string(f->code)} +
                                            " " + f->reason);
      }
      rejected.push_back({line_no, lines[i], std::string{to_string(f->code)},
                          f->token.empty() ? f->reason : f->reason + ": " + f->token});
      continue;
    }
    raw_lines.emplace(line_no, lines[i]);
    records.push_back(std::move(std::get<RawLogRecord>(parsed)));
  }
  for (auto& entry : rejected) quarantine.add(std::move(entry));
  auto result = ingest_parsed(store, std::move(records), catalog, quarantine, &raw_lines);
  result.quarantined += rejected.size();
  return result;
}

IngestResult ingest_records(TraceStore& store, std::vector<RawLogRecord> records, const EntityCatalog& catalog,
                            Quarantine& quarantine) {
  return ingest_parsed(store, std::move(records), catalog, quarantine, nullptr);
}

TaskCorrelation correlate_tasks(std::span<const ExtractionContext> contexts) {
  TaskCorrelation out;
  std::map<std::string, std::size_t, std::less<>> open;
  for (const auto& ctx : contexts) {
    auto task = ctx.attr(attr::kTask);
    auto phase = ctx.attr(attr::kPhase);
    if (!task || !phase) continue;
    std::string task_id{*task};
    auto it = open.find(task_id);
    if (*phase == "start") {
      if (it != open.end()) out.spans[it->second].status = TaskSpan::Status::Superseded;
      TaskSpan span;
      span.task_id = task_id;
      span.object = ctx.object;
      span.actor_id = ctx.actor.id;
      span.start = ctx.timestamp;
      out.spans.push_back(std::move(span));
      open[task_id] = out.spans.size() - 1;
    } else if (*phase == "end") {
      if (it == open.end()) {
        out.orphans.push_back(OrphanTaskEnd{task_id, ctx.object, ctx.actor.id, ctx.timestamp});
        continue;
      }
      auto& span = out.spans[it->second];
      span.end = ctx.timestamp;
      span.duration_s = (ctx.timestamp - span.start).count();
      span.status = TaskSpan::Status::Closed;
      open.erase(it);
    }
  }
  return out;
}

std::vector<Session> sessionize(std::span<const ExtractionContext> contexts, ActivitySet activities,
                                std::int64_t gap_s) {
  std::map<std::pair<std::string, ObjectRef>, std::vector<const ExtractionContext*>> partitions;
  for (const auto& ctx : contexts) {
    if (activities.contains(ctx.activity)) partitions[{ctx.actor.id, ctx.object}].push_back(&ctx);
  }

  std::vector<Session> sessions;
  for (auto& [key, events] : partitions) {
    std::stable_sort(events.begin(), events.end(), [](const ExtractionContext* a, const ExtractionContext* b) {
      return a->timestamp != b->timestamp ? a->timestamp < b->timestamp : a->seq < b->seq;
    });
    Session current;
    auto open_session = [&](const ExtractionContext& e) {
      current = Session{key.first, key.second, e.activity, e.timestamp, e.timestamp, 1, 0};
    };
    open_session(*events.front());
    for (std::size_t i = 1; i < events.size(); ++i) {
      const auto& e = *events[i];
      if ((e.timestamp - current.last).count() > gap_s) {
        sessions.push_back(current);
        open_session(e);
      } else {
        current.last = e.timestamp;
        ++current.event_count;
        current.duration_s = (current.last - current.first).count();
      }
    }
    sessions.push_back(current);
  }
  return sessions;
}

}  // namespace observatory
