#pragma once

#include <array>
#include <compare>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "observatory/time.hpp"

namespace observatory {

enum class Activity : std::uint8_t { Create, Update, Delete, Link, Status, Lock, View, Index, Search };

inline constexpr std::array<Activity, 9> kAllActivities = {
    Activity::Create, Activity::Update, Activity::Delete, Activity::Link, Activity::Status,
    Activity::Lock,   Activity::View,   Activity::Index,  Activity::Search};

std::string_view to_string(Activity a);
std::optional<Activity> parse_activity(std::string_view code);

// Read set R = {VIEW, SEARCH}; every other code is a modification.
constexpr bool is_read(Activity a) { return a == Activity::View || a == Activity::Search; }
constexpr bool is_modification(Activity a) { return !is_read(a); }

// Bit set over the nine activity codes.
class ActivitySet {
 public:
  constexpr ActivitySet() = default;
  constexpr ActivitySet(std::initializer_list<Activity> codes) {
    for (Activity a : codes) insert(a);
  }
  constexpr void insert(Activity a) { bits_ |= bit(a); }
  constexpr bool contains(Activity a) const { return (bits_ & bit(a)) != 0; }
  constexpr bool empty() const { return bits_ == 0; }

 private:
  static constexpr std::uint16_t bit(Activity a) { return static_cast<std::uint16_t>(1u << static_cast<unsigned>(a)); }
  std::uint16_t bits_ = 0;
};

enum class ObjectKind : std::uint8_t { Document, CadModel, Assembly, Form, Part, ProcessModel };

std::string_view to_string(ObjectKind k);
std::optional<ObjectKind> parse_object_kind(std::string_view kind);

// Letters, digits, '-' and '_'; non-empty.
bool is_token(std::string_view s);

struct ObjectRef {
  ObjectKind kind = ObjectKind::Document;
  std::string id;

  std::string to_string() const;  // "KIND:id"
  auto operator<=>(const ObjectRef&) const = default;
};

// Parses "KIND:id"; nullopt on unknown kind or bad id.
std::optional<ObjectRef> parse_object_ref(std::string_view text);

enum class Affiliation : std::uint8_t { Internal, External };

std::string_view to_string(Affiliation a);
std::optional<Affiliation> parse_affiliation(std::string_view text);

struct Actor {
  std::string id;
  Affiliation affiliation = Affiliation::Internal;

  auto operator<=>(const Actor&) const = default;
};

enum class LogLevel : std::uint8_t { Info, Warn, Error };

std::string_view to_string(LogLevel l);
std::optional<LogLevel> parse_log_level(std::string_view text);

// Attribute pairs in source order.
using AttrList = std::vector<std::pair<std::string, std::string>>;

// One parsed log line. Tokens are kept as written; enumeration checks happen
// when the record is structured.
struct RawLogRecord {
  Instant timestamp;
  LogLevel level = LogLevel::Info;
  std::string actor_id;
  std::string activity_code;
  std::string object_kind;
  std::string object_id;
  AttrList attrs;
  std::uint64_t source_line_no = 0;

  // Equality over every field except source_line_no.
  bool same_event(const RawLogRecord& other) const;
  bool operator==(const RawLogRecord&) const = default;
};

namespace attr {
inline constexpr std::string_view kOutcome = "outcome";
inline constexpr std::string_view kTask = "task";
inline constexpr std::string_view kPhase = "phase";
inline constexpr std::string_view kRole = "role";
}  // namespace attr

struct ExtractionContext {
  std::uint64_t seq = 0;  // assigned by TraceStore::append
  Instant timestamp;
  Activity activity = Activity::Create;
  ObjectRef object;
  Actor actor;
  std::map<std::string, std::string> attrs;

  std::optional<std::string_view> attr(std::string_view key) const;
  bool operator==(const ExtractionContext&) const = default;
};

enum class Granularity : std::uint8_t { ObjectIdentity, ObjectKind };

std::string_view to_string(Granularity g);
std::optional<Granularity> parse_granularity(std::string_view text);

struct TripletKey {
  std::string activity;
  std::string object;
  std::string actor;

  auto operator<=>(const TripletKey&) const = default;
};

// Placeholder for a key slot a measure collapses.
inline constexpr std::string_view kAnySlot = "*";

TripletKey triplet_key(const ExtractionContext& ctx, Granularity granularity);

// Object label under a granularity: "KIND:id" or "KIND".
std::string object_label(const ObjectRef& object, Granularity granularity);

struct EntityCatalog {
  std::map<std::string, Affiliation> actors;
  std::map<std::string, std::int64_t> task_deadlines;  // task-id prefix -> seconds
  std::int64_t default_deadline_s = 3600;

  // Affiliation for an actor id, nullopt when the id is not catalogued.
  std::optional<Affiliation> affiliation_of(std::string_view actor_id) const;

  // Deadline of the longest matching task-id prefix, else the default.
  std::int64_t deadline_for(std::string_view task_id) const;
};

EntityCatalog load_catalog(const std::filesystem::path& path);
EntityCatalog parse_catalog(std::string_view json_text);

}  // namespace observatory
