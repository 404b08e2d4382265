#include "observatory/trace_store.hpp"

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>

#include "observatory/error.hpp"

namespace observatory {
namespace {

nlohmann::ordered_json ordered(const ExtractionContext& ctx) {
  nlohmann::ordered_json j;
  j["seq"] = ctx.seq;
  j["ts"] = format_instant(ctx.timestamp);
  j["activity"] = to_string(ctx.activity);
  j["kind"] = to_string(ctx.object.kind);
  j["oid"] = ctx.object.id;
  j["actor"] = ctx.actor.id;
  j["affiliation"] = to_string(ctx.actor.affiliation);
  j["attrs"] = nlohmann::ordered_json::object();
  for (const auto& [k, v] : ctx.attrs) j["attrs"][k] = v;
  return j;
}

const std::string& string_field(const nlohmann::json& j, const char* name) {
  auto it = j.find(name);
  if (it == j.end() || !it->is_string()) throw Error("BadRecord", std::string{"missing string field '"} + name + "'");
  return it->get_ref<const std::string&>();
}

}  // namespace

nlohmann::json to_json(const ExtractionContext& ctx) { return nlohmann::json(ordered(ctx)); }

std::string to_ndjson_line(const ExtractionContext& ctx) { return ordered(ctx).dump(); }

ExtractionContext context_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw Error("BadRecord", "record must be a JSON object");
  ExtractionContext ctx;
  if (auto it = j.find("seq"); it != j.end()) {
    if (!it->is_number_unsigned() && !it->is_number_integer()) throw Error("BadRecord", "seq must be an integer");
    ctx.seq = it->get<std::uint64_t>();
  }
  const auto& ts = string_field(j, "ts");
  auto t = parse_instant(ts);
  if (!t) throw Error("BadRecord", "bad ts '" + ts + "'");
  ctx.timestamp = *t;

  const auto& activity = string_field(j, "activity");
  auto a = parse_activity(activity);
  if (!a) throw Error("BadRecord", "unknown activity '" + activity + "'");
  ctx.activity = *a;

  const auto& kind = string_field(j, "kind");
  auto k = parse_object_kind(kind);
  if (!k) throw Error("BadRecord", "unknown kind '" + kind + "'");
  ctx.object = ObjectRef{*k, string_field(j, "oid")};

  ctx.actor.id = string_field(j, "actor");
  if (auto it = j.find("affiliation"); it != j.end()) {
    auto aff = it->is_string() ? parse_affiliation(it->get<std::string>()) : std::nullopt;
    if (!aff) throw Error("BadRecord", "bad affiliation");
    ctx.actor.affiliation = *aff;
  }
  if (auto it = j.find("attrs"); it != j.end()) {
    if (!it->is_object()) throw Error("BadRecord", "attrs must be an object");
    for (const auto& [key, value] : it->items()) {
      if (!value.is_string()) throw Error("BadRecord", "attr '" + key + "' must be a string");
      ctx.attrs.emplace(key, value.get<std::string>());
    }
  }
  return ctx;
}

TraceStore TraceStore::open(const std::filesystem::path& path) {
  TraceStore store;
  store.path_ = path;
  if (std::filesystem::exists(path)) {
    std::ifstream in(path);
    if (!in) throw Error("StoreUnavailable", path.string());
    std::string line;
    std::uint64_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (line.empty()) continue;
      ExtractionContext ctx;
      try {
        ctx = context_from_json(nlohmann::json::parse(line));
      } catch (const nlohmann::json::exception& e) {
        throw Error("CorruptStore", path.string() + ":" + std::to_string(line_no) + ": " + e.what());
      } catch (const Error& e) {
        throw Error("CorruptStore", path.string() + ":" + std::to_string(line_no) + ": " + e.detail());
      }
      if (ctx.seq <= store.last_seq()) {
        throw Error("CorruptStore", path.string() + ":" + std::to_string(line_no) + ": seq not increasing");
      }
      store.fingerprints_.insert(fingerprint(ctx));
      store.records_.push_back(std::move(ctx));
    }
  }
  store.out_.open(path, std::ios::app);
  if (!store.out_) throw Error("StoreUnavailable", path.string());
  return store;
}

std::uint64_t TraceStore::append(ExtractionContext ctx) {
  ctx.seq = last_seq() + 1;
  if (out_.is_open()) {
    out_ << to_ndjson_line(ctx) << '\n';
    if (!out_) throw Error("StoreWriteFailed", path_ ? path_->string() : std::string{});
  }
  fingerprints_.insert(fingerprint(ctx));
  records_.push_back(std::move(ctx));
  return records_.back().seq;
}

void TraceStore::flush() {
  if (out_.is_open()) out_.flush();
}

Snapshot TraceStore::snapshot() const { return Snapshot{std::span<const ExtractionContext>(records_), last_seq()}; }

Snapshot TraceStore::snapshot_at(std::uint64_t seq) const {
  // seq values are dense from 1, so the prefix length equals the seq.
  std::size_t n = std::min<std::uint64_t>(seq, records_.size());
  std::span<const ExtractionContext> prefix(records_.data(), n);
  return Snapshot{prefix, n == 0 ? 0 : prefix.back().seq};
}

std::optional<Instant> TraceStore::last_timestamp() const {
  if (records_.empty()) return std::nullopt;
  return records_.back().timestamp;
}

bool TraceStore::contains_event(const ExtractionContext& ctx) const {
  return fingerprints_.contains(fingerprint(ctx));
}

std::string TraceStore::fingerprint(const ExtractionContext& ctx) {
  ExtractionContext copy = ctx;
  copy.seq = 0;
  copy.actor.affiliation = Affiliation::Internal;  // derived from the catalog, not the event
  return to_ndjson_line(copy);
}

StoreLock::StoreLock(const std::filesystem::path& store_path) {
  auto lock_path = store_path;
  lock_path += ".lock";
  fd_ = ::open(lock_path.c_str(), O_RDWR | O_CREAT | O_CLOEXEC, 0644);
  if (fd_ < 0) throw Error("StoreUnavailable", lock_path.string() + ": " + std::strerror(errno));
  if (::flock(fd_, LOCK_EX | LOCK_NB) != 0) {
    ::close(fd_);
    fd_ = -1;
    throw Error("StoreLocked", "another process holds " + lock_path.string());
  }
}

StoreLock::~StoreLock() {
  if (fd_ >= 0) {
    ::flock(fd_, LOCK_UN);
    ::close(fd_);
  }
}

}  // namespace observatory
