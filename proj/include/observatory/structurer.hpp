#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "observatory/collector.hpp"
#include "observatory/trace_model.hpp"
#include "observatory/trace_store.hpp"

namespace observatory {

enum class StructureError : std::uint8_t { UnknownActivityCode, UnknownObjectKind, BadReservedAttr };

std::string_view to_string(StructureError e);

struct StructureFailure {
  StructureError code = StructureError::UnknownActivityCode;
  std::string token;  // e.g. "FROBNICATE" or "outcome=maybe"
};

struct StructureStats {
  std::uint64_t unknown_actors = 0;
};

// Validates enumerations and reserved attribute values and resolves the actor
// affiliation. Unknown actors resolve to INTERNAL and are counted in stats.
std::variant<ExtractionContext, StructureFailure> to_context(const RawLogRecord& record,
                                                             const EntityCatalog& catalog,
                                                             StructureStats* stats = nullptr);

// Raw input that failed parsing or structuring, kept for audit.
struct QuarantineEntry {
  std::uint64_t line_no = 0;
  std::string raw;
  std::string code;
  std::string detail;
};

nlohmann::json to_json(const QuarantineEntry& entry);

// Collects quarantined inputs; mirrors them to "<store>.quarantine.ndjson"
// when bound to a file.
class Quarantine {
 public:
  Quarantine() = default;
  explicit Quarantine(const std::filesystem::path& sidecar);

  static std::filesystem::path sidecar_for(const std::filesystem::path& store_path);

  void add(QuarantineEntry entry);
  const std::vector<QuarantineEntry>& entries() const { return entries_; }

 private:
  std::vector<QuarantineEntry> entries_;
  std::ofstream out_;
};

struct IngestResult {
  std::uint64_t accepted = 0;
  std::uint64_t quarantined = 0;
  std::uint64_t duplicates = 0;  // already stored or repeated within the batch
  std::uint64_t ignored = 0;     // non-action lines
  std::uint64_t unknown_actors = 0;
  std::uint64_t last_seq = 0;
};

// The collector + structurer pipeline over a batch of raw lines: parse,
// clean, structure, drop events the store already holds, append. Records
// older than the store's last timestamp are quarantined as OutOfOrder.
// In strict mode the first malformed line aborts with StrictParseAbort
// before anything is appended.
// `line_numbers`, when given, supplies the number reported for each line
// (default: 1-based position).
IngestResult ingest_lines(TraceStore& store, std::span<const std::string> lines, const EntityCatalog& catalog,
                          Quarantine& quarantine, const LogGrammar& grammar = {},
                          std::span<const std::uint64_t> line_numbers = {});

// Same pipeline for already-parsed records (line text is re-emitted for quarantine).
IngestResult ingest_records(TraceStore& store, std::vector<RawLogRecord> records, const EntityCatalog& catalog,
                            Quarantine& quarantine);

struct TaskSpan {
  enum class Status : std::uint8_t { Closed, Open, Superseded };

  std::string task_id;
  ObjectRef object;
  std::string actor_id;
  Instant start;
  std::optional<Instant> end;
  std::optional<std::int64_t> duration_s;
  Status status = Status::Open;
};

// phase=end with no open start for its task id.
struct OrphanTaskEnd {
  std::string task_id;
  ObjectRef object;
  std::string actor_id;
  Instant end;
};

struct TaskCorrelation {
  std::vector<TaskSpan> spans;  // in start order
  std::vector<OrphanTaskEnd> orphans;
};

// Pairs each phase=start with the next phase=end of the same task id. A second
// start while a span is open supersedes the open one (flagged, never closed).
TaskCorrelation correlate_tasks(std::span<const ExtractionContext> contexts);

struct Session {
  std::string actor_id;
  ObjectRef object;
  Activity activity = Activity::Search;  // activity of the first event
  Instant first;
  Instant last;
  std::uint64_t event_count = 0;
  std::int64_t duration_s = 0;
};

// Partitions events whose activity is in `activities` by (actor, object) and
// splits each partition where consecutive events are more than gap_s apart.
// Output ordered by (actor, object, first).
std::vector<Session> sessionize(std::span<const ExtractionContext> contexts, ActivitySet activities,
                                std::int64_t gap_s);

inline std::vector<Session> sessionize(std::span<const ExtractionContext> contexts, Activity activity,
                                       std::int64_t gap_s) {
  return sessionize(contexts, ActivitySet{activity}, gap_s);
}

}  // namespace observatory
