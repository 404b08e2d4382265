#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <stop_token>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "observatory/trace_model.hpp"

namespace observatory {

// Canonical line shape:
//   <ISO-8601 UTC Z> <LEVEL> [<actor>] <ACTIVITY> <KIND>:<id> [key=value ...]
// single-space separated, attribute values without spaces.
struct LogGrammar {
  bool strict = false;  // abort on the first malformed line instead of skipping it
};

enum class ParseError : std::uint8_t {
  MalformedTimestamp,
  MissingField,
  BadAttrSyntax,
  MalformedField,  // bad level, unbracketed actor, object without ':' or with a bad id
};

std::string_view to_string(ParseError e);

struct ParseFailure {
  std::uint64_t line_no = 0;
  ParseError code = ParseError::MissingField;
  std::string token;  // offending token, empty when a field is absent
  std::string reason;
  std::string line;  // the rejected input
};

using ParseResult = std::variant<RawLogRecord, ParseFailure>;

ParseResult parse_line(std::string_view line, std::uint64_t line_no, const LogGrammar& grammar = {});

// Emits the canonical line for a record (inverse of parse_line).
std::string format_line(const RawLogRecord& record);

// Sorts by (timestamp, source_line_no), drops exact duplicates keeping the
// first, and drops non-action (WARN/ERROR diagnostic) lines.
std::vector<RawLogRecord> clean_records(std::vector<RawLogRecord> records);

bool is_action_line(const RawLogRecord& record);

struct CollectOptions {
  std::optional<Instant> since;  // keep records with timestamp >= since
  bool follow = false;           // keep polling for appended lines until stopped
  std::chrono::milliseconds poll_interval{500};
};

struct CollectReport {
  std::uint64_t lines = 0;
  std::uint64_t records = 0;
  std::uint64_t warnings = 0;  // malformed lines skipped
  std::vector<ParseFailure> failures;
};

// Receives each cleaned batch in order. A static file yields one batch.
using RecordBatchSink = std::function<void(std::vector<RawLogRecord>)>;

// Reads a log file and emits parsed, cleaned batches.
// Errors: SourceUnavailable, StrictParseAbort.
CollectReport collect_stream(const std::filesystem::path& source, const LogGrammar& grammar,
                             const CollectOptions& options, const RecordBatchSink& sink,
                             std::stop_token stop = {});

// Static-file convenience: the single cleaned batch plus its report.
std::pair<std::vector<RawLogRecord>, CollectReport> collect_file(const std::filesystem::path& source,
                                                                 const LogGrammar& grammar = {},
                                                                 std::optional<Instant> since = {});

}  // namespace observatory
