#include "observatory/collector.hpp"

#include <algorithm>
#include <fstream>
#include <thread>
#include <unordered_set>

#include "observatory/error.hpp"

namespace observatory {
namespace {

ParseFailure failure(std::uint64_t line_no, ParseError code, std::string_view token, std::string reason) {
  return ParseFailure{line_no, code, std::string{token}, std::move(reason), {}};
}

std::vector<std::string_view> split_spaces(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t pos = 0;
  while (true) {
    auto next = line.find(' ', pos);
    out.push_back(line.substr(pos, next == std::string_view::npos ? std::string_view::npos : next - pos));
    if (next == std::string_view::npos) break;
    pos = next + 1;
  }
  return out;
}

std::string content_key(const RawLogRecord& r) {
  std::string key = std::to_string(to_epoch_seconds(r.timestamp));
  auto add = [&key](std::string_view part) {
    key += '\x1f';
    key += part;
  };
  add(to_string(r.level));
  add(r.actor_id);
  add(r.activity_code);
  add(r.object_kind);
  add(r.object_id);
  for (const auto& [k, v] : r.attrs) {
    add(k);
    key += '\x1e';
    key += v;
  }
  return key;
}

ParseResult parse_fields(std::string_view line, std::uint64_t line_no, const LogGrammar& grammar);

}  // namespace

std::string_view to_string(ParseError e) {
  switch (e) {
    case ParseError::MalformedTimestamp: return "MalformedTimestamp";
    case ParseError::MissingField: return "MissingField";
    case ParseError::BadAttrSyntax: return "BadAttrSyntax";
    case ParseError::MalformedField: return "MalformedField";
  }
  return "Unknown";
}

ParseResult parse_line(std::string_view line, std::uint64_t line_no, const LogGrammar& grammar) {
  auto result = parse_fields(line, line_no, grammar);
  if (auto* f = std::get_if<ParseFailure>(&result)) f->line = std::string{line};
  return result;
}

namespace {

ParseResult parse_fields(std::string_view line, std::uint64_t line_no, const LogGrammar& /*grammar*/) {
  if (line.empty()) return failure(line_no, ParseError::MissingField, "", "empty line");
  auto tokens = split_spaces(line);
  for (auto t : tokens) {
    if (t.empty()) return failure(line_no, ParseError::MalformedField, "", "empty token (fields are single-space separated)");
  }

  RawLogRecord record;
  record.source_line_no = line_no;

  auto ts = parse_instant(tokens[0]);
  if (!ts) return failure(line_no, ParseError::MalformedTimestamp, tokens[0], "expected YYYY-MM-DDTHH:MM:SSZ");
  record.timestamp = *ts;

  if (tokens.size() < 2) return failure(line_no, ParseError::MissingField, "", "missing level");
  auto level = parse_log_level(tokens[1]);
  if (!level) return failure(line_no, ParseError::MalformedField, tokens[1], "level must be INFO, WARN or ERROR");
  record.level = *level;

  if (tokens.size() < 3) return failure(line_no, ParseError::MissingField, "", "missing [actor]");
  auto actor = tokens[2];
  if (actor.size() < 3 || actor.front() != '[' || actor.back() != ']' || !is_token(actor.substr(1, actor.size() - 2))) {
    return failure(line_no, ParseError::MalformedField, actor, "actor must be [token]");
  }
  record.actor_id = std::string{actor.substr(1, actor.size() - 2)};

  if (tokens.size() < 4) return failure(line_no, ParseError::MissingField, "", "missing activity");
  record.activity_code = std::string{tokens[3]};

  if (tokens.size() < 5) return failure(line_no, ParseError::MissingField, "", "missing KIND:id");
  auto object = tokens[4];
  auto colon = object.find(':');
  if (colon == std::string_view::npos || colon == 0 || !is_token(object.substr(colon + 1))) {
    return failure(line_no, ParseError::MalformedField, object, "object must be KIND:id");
  }
  record.object_kind = std::string{object.substr(0, colon)};
  record.object_id = std::string{object.substr(colon + 1)};

  for (std::size_t i = 5; i < tokens.size(); ++i) {
    auto token = tokens[i];
    auto eq = token.find('=');
    if (eq == std::string_view::npos || eq == 0) {
      return failure(line_no, ParseError::BadAttrSyntax, token, "attribute must be key=value");
    }
    std::string key{token.substr(0, eq)};
    bool repeated = std::any_of(record.attrs.begin(), record.attrs.end(), [&](const auto& kv) { return kv.first == key; });
    if (repeated) return failure(line_no, ParseError::BadAttrSyntax, token, "repeated attribute key");
    record.attrs.emplace_back(std::move(key), std::string{token.substr(eq + 1)});
  }
  return record;
}

}  // namespace

std::string format_line(const RawLogRecord& record) {
  std::string line = format_instant(record.timestamp);
  line += ' ';
  line += to_string(record.level);
  line += " [";
  line += record.actor_id;
  line += "] ";
  line += record.activity_code;
  line += ' ';
  line += record.object_kind;
  line += ':';
  line += record.object_id;
  for (const auto& [k, v] : record.attrs) {
    line += ' ';
    line += k;
    line += '=';
    line += v;
  }
  return line;
}

bool is_action_line(const RawLogRecord& record) { return record.level == LogLevel::Info; }

std::vector<RawLogRecord> clean_records(std::vector<RawLogRecord> records) {
  std::erase_if(records, [](const RawLogRecord& r) { return !is_action_line(r); });

  std::vector<std::pair<std::string, RawLogRecord>> keyed;
  keyed.reserve(records.size());
  for (auto& r : records) {
    auto key = content_key(r);
    keyed.emplace_back(std::move(key), std::move(r));
  }
  std::stable_sort(keyed.begin(), keyed.end(), [](const auto& a, const auto& b) {
    if (a.second.timestamp != b.second.timestamp) return a.second.timestamp < b.second.timestamp;
    if (a.second.source_line_no != b.second.source_line_no) return a.second.source_line_no < b.second.source_line_no;
    return a.first < b.first;
  });

  std::vector<RawLogRecord> out;
  out.reserve(keyed.size());
  std::unordered_set<std::string> seen;
  for (auto& [key, r] : keyed) {
    if (seen.insert(std::move(key)).second) out.push_back(std::move(r));
  }
  return out;
}

CollectReport collect_stream(const std::filesystem::path& source, const LogGrammar& grammar,
                             const CollectOptions& options, const RecordBatchSink& sink, std::stop_token stop) {
  std::ifstream in(source, std::ios::binary);
  if (!in) throw Error("SourceUnavailable", source.string());

  CollectReport report;
  std::string pending;
  std::uintmax_t offset = 0;
  std::uint64_t line_no = 0;
  std::vector<char> buffer(1 << 16);

  auto process = [&](std::vector<std::string>& lines) {
    std::vector<RawLogRecord> batch;
    for (auto& text : lines) {
      ++line_no;
      ++report.lines;
      if (!text.empty() && text.back() == '\r') text.pop_back();
      auto parsed = parse_line(text, line_no, grammar);
      if (auto* f = std::get_if<ParseFailure>(&parsed)) {
        if (grammar.strict) {
          throw Error("StrictParseAbort", source.string() + ":" + std::to_string(line_no) + ": " +
                                              std::string{to_string(f->code)} + " " + f->reason +
                                              (f->token.empty() ? "" : " '" + f->token + "'"));
        }
        ++report.warnings;
        report.failures.push_back(std::move(*f));
        continue;
      }
      auto& record = std::get<RawLogRecord>(parsed);
      if (options.since && record.timestamp < *options.since) continue;
      batch.push_back(std::move(record));
    }
    batch = clean_records(std::move(batch));
    report.records += batch.size();
    return batch;
  };

  bool first = true;
  while (true) {
    // Detect truncation (log rotation): start over from the beginning.
    std::error_code ec;
    auto size = std::filesystem::file_size(source, ec);
    if (!ec && size < offset) {
      in.close();
      in.open(source, std::ios::binary);
      offset = 0;
      pending.clear();
    }
    in.clear();
    while (in.read(buffer.data(), static_cast<std::streamsize>(buffer.size())) || in.gcount() > 0) {
      pending.append(buffer.data(), static_cast<std::size_t>(in.gcount()));
      offset += static_cast<std::uintmax_t>(in.gcount());
    }

    std::vector<std::string> lines;
    std::size_t start = 0;
    for (auto nl = pending.find('\n'); nl != std::string::npos; nl = pending.find('\n', start)) {
      lines.emplace_back(pending.substr(start, nl - start));
      start = nl + 1;
    }
    pending.erase(0, start);
    if (!options.follow && !pending.empty()) {
      lines.push_back(std::move(pending));
      pending.clear();
    }

    auto batch = process(lines);
    if (!options.follow) {
      sink(std::move(batch));
      return report;
    }
    if (!batch.empty() || first) sink(std::move(batch));
    first = false;

    auto deadline = std::chrono::steady_clock::now() + options.poll_interval;
    while (!stop.stop_requested() && std::chrono::steady_clock::now() < deadline) {
      std::this_thread::sleep_for(std::min<std::chrono::milliseconds>(options.poll_interval, std::chrono::milliseconds{20}));
    }
    if (stop.stop_requested()) return report;
  }
}

std::pair<std::vector<RawLogRecord>, CollectReport> collect_file(const std::filesystem::path& source,
                                                                 const LogGrammar& grammar,
                                                                 std::optional<Instant> since) {
  std::vector<RawLogRecord> records;
  CollectOptions options;
  options.since = since;
  auto report = collect_stream(source, grammar, options,
                               [&records](std::vector<RawLogRecord> batch) { records = std::move(batch); });
  return {std::move(records), std::move(report)};
}

}  // namespace observatory
