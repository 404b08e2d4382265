#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <span>
#include <string>
#include <unordered_set>
#include <vector>

#include <nlohmann/json.hpp>

#include "observatory/trace_model.hpp"

namespace observatory {

// Immutable view of a store prefix. Valid while the owning store is not
// appended to (the service guards this with its store lock).
struct Snapshot {
  std::span<const ExtractionContext> records;
  std::uint64_t as_of_seq = 0;
};

nlohmann::json to_json(const ExtractionContext& ctx);
// Throws Error("BadRecord") on missing or ill-typed fields.
ExtractionContext context_from_json(const nlohmann::json& j);

// Single NDJSON line, no trailing newline. Field order: seq, ts, activity,
// kind, oid, actor, affiliation, attrs.
std::string to_ndjson_line(const ExtractionContext& ctx);

// Append-only sequence of extraction contexts, optionally persisted as NDJSON.
// Single writer; readers take snapshots.
class TraceStore {
 public:
  TraceStore() = default;

  // Loads an existing file (if any) and appends to it from then on.
  static TraceStore open(const std::filesystem::path& path);

  TraceStore(TraceStore&&) = default;
  TraceStore& operator=(TraceStore&&) = default;
  TraceStore(const TraceStore&) = delete;
  TraceStore& operator=(const TraceStore&) = delete;

  // Assigns the next seq, persists, and returns the stored copy's seq.
  std::uint64_t append(ExtractionContext ctx);
  void flush();

  Snapshot snapshot() const;
  // Prefix up to and including seq (clamped to last_seq).
  Snapshot snapshot_at(std::uint64_t seq) const;

  std::uint64_t last_seq() const { return records_.empty() ? 0 : records_.back().seq; }
  std::size_t size() const { return records_.size(); }
  std::optional<Instant> last_timestamp() const;
  const std::optional<std::filesystem::path>& path() const { return path_; }

  // True when a context equal in every field but seq is already stored.
  bool contains_event(const ExtractionContext& ctx) const;

 private:
  static std::string fingerprint(const ExtractionContext& ctx);

  std::vector<ExtractionContext> records_;
  std::unordered_set<std::string> fingerprints_;
  std::optional<std::filesystem::path> path_;
  std::ofstream out_;
};

// Exclusive advisory lock on "<store>.lock", released on destruction or
// process exit. Throws Error("StoreLocked") if another process holds it.
class StoreLock {
 public:
  explicit StoreLock(const std::filesystem::path& store_path);
  ~StoreLock();
  StoreLock(const StoreLock&) = delete;
  StoreLock& operator=(const StoreLock&) = delete;

 private:
  int fd_ = -1;
};

}  // namespace observatory
