#include "observatory/trace_model.hpp"

#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "observatory/error.hpp"

namespace observatory {
namespace {

constexpr std::array<std::string_view, 9> kActivityNames = {"CREATE", "UPDATE", "DELETE", "LINK",  "STATUS",
                                                            "LOCK",   "VIEW",   "INDEX",  "SEARCH"};
constexpr std::array<std::string_view, 6> kKindNames = {"DOCUMENT", "CAD_MODEL", "ASSEMBLY",
                                                        "FORM",     "PART",      "PROCESS_MODEL"};
constexpr std::array<std::string_view, 2> kAffiliationNames = {"INTERNAL", "EXTERNAL"};
constexpr std::array<std::string_view, 3> kLevelNames = {"INFO", "WARN", "ERROR"};
constexpr std::array<std::string_view, 2> kGranularityNames = {"OBJECT_IDENTITY", "OBJECT_KIND"};

template <typename Enum, std::size_t N>
std::optional<Enum> lookup(const std::array<std::string_view, N>& names, std::string_view text) {
  for (std::size_t i = 0; i < N; ++i) {
    if (names[i] == text) return static_cast<Enum>(i);
  }
  return std::nullopt;
}

}  // namespace

std::string_view to_string(Activity a) { return kActivityNames[static_cast<std::size_t>(a)]; }
std::optional<Activity> parse_activity(std::string_view code) { return lookup<Activity>(kActivityNames, code); }

std::string_view to_string(ObjectKind k) { return kKindNames[static_cast<std::size_t>(k)]; }
std::optional<ObjectKind> parse_object_kind(std::string_view kind) { return lookup<ObjectKind>(kKindNames, kind); }

std::string_view to_string(Affiliation a) { return kAffiliationNames[static_cast<std::size_t>(a)]; }
std::optional<Affiliation> parse_affiliation(std::string_view text) {
  return lookup<Affiliation>(kAffiliationNames, text);
}

std::string_view to_string(LogLevel l) { return kLevelNames[static_cast<std::size_t>(l)]; }
std::optional<LogLevel> parse_log_level(std::string_view text) { return lookup<LogLevel>(kLevelNames, text); }

std::string_view to_string(Granularity g) { return kGranularityNames[static_cast<std::size_t>(g)]; }
std::optional<Granularity> parse_granularity(std::string_view text) {
  return lookup<Granularity>(kGranularityNames, text);
}

bool is_token(std::string_view s) {
  if (s.empty()) return false;
  for (char c : s) {
    bool ok = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '-' || c == '_';
    if (!ok) return false;
  }
  return true;
}

std::string ObjectRef::to_string() const {
  std::string out{observatory::to_string(kind)};
  out += ':';
  out += id;
  return out;
}

std::optional<ObjectRef> parse_object_ref(std::string_view text) {
  auto colon = text.find(':');
  if (colon == std::string_view::npos) return std::nullopt;
  auto kind = parse_object_kind(text.substr(0, colon));
  auto id = text.substr(colon + 1);
  if (!kind || !is_token(id)) return std::nullopt;
  return ObjectRef{*kind, std::string{id}};
}

bool RawLogRecord::same_event(const RawLogRecord& other) const {
  return timestamp == other.timestamp && level == other.level && actor_id == other.actor_id &&
         activity_code == other.activity_code && object_kind == other.object_kind && object_id == other.object_id &&
         attrs == other.attrs;
}

std::optional<std::string_view> ExtractionContext::attr(std::string_view key) const {
  auto it = attrs.find(std::string{key});
  if (it == attrs.end()) return std::nullopt;
  return std::string_view{it->second};
}

std::string object_label(const ObjectRef& object, Granularity granularity) {
  if (granularity == Granularity::ObjectKind) return std::string{to_string(object.kind)};
  return object.to_string();
}

TripletKey triplet_key(const ExtractionContext& ctx, Granularity granularity) {
  return TripletKey{std::string{to_string(ctx.activity)}, object_label(ctx.object, granularity), ctx.actor.id};
}

std::optional<Affiliation> EntityCatalog::affiliation_of(std::string_view actor_id) const {
  auto it = actors.find(std::string{actor_id});
  if (it == actors.end()) return std::nullopt;
  return it->second;
}

std::int64_t EntityCatalog::deadline_for(std::string_view task_id) const {
  std::size_t best_len = 0;
  std::optional<std::int64_t> best;
  for (const auto& [prefix, seconds] : task_deadlines) {
    if (task_id.starts_with(prefix) && (!best || prefix.size() > best_len)) {
      best = seconds;
      best_len = prefix.size();
    }
  }
  return best.value_or(default_deadline_s);
}

EntityCatalog parse_catalog(std::string_view json_text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(json_text);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error("BadCatalog", e.what());
  }
  if (!j.is_object()) throw Error("BadCatalog", "catalog must be a JSON object");

  EntityCatalog catalog;
  if (auto it = j.find("actors"); it != j.end()) {
    if (!it->is_object()) throw Error("BadCatalog", "actors must be an object");
    for (const auto& [id, value] : it->items()) {
      auto affiliation = value.is_string() ? parse_affiliation(value.get<std::string>()) : std::nullopt;
      if (!affiliation) throw Error("BadCatalog", "actors." + id + ": expected INTERNAL or EXTERNAL");
      catalog.actors.emplace(id, *affiliation);
    }
  }
  if (auto it = j.find("task_deadlines"); it != j.end()) {
    if (!it->is_object()) throw Error("BadCatalog", "task_deadlines must be an object");
    for (const auto& [prefix, value] : it->items()) {
      if (!value.is_number_integer() || value.get<std::int64_t>() <= 0) {
        throw Error("BadCatalog", "task_deadlines." + prefix + ": expected a positive integer");
      }
      catalog.task_deadlines.emplace(prefix, value.get<std::int64_t>());
    }
  }
  if (auto it = j.find("default_deadline_s"); it != j.end()) {
    if (!it->is_number_integer()) throw Error("BadCatalog", "default_deadline_s must be an integer");
    catalog.default_deadline_s = it->get<std::int64_t>();
  }
  if (catalog.default_deadline_s <= 0) throw Error("BadCatalog", "default_deadline_s must be > 0");
  return catalog;
}

EntityCatalog load_catalog(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("CatalogUnavailable", path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_catalog(buffer.str());
}

}  // namespace observatory
