#include "observatory/cli.hpp"

#include <atomic>
#include <csignal>
#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>

#include <CLI11.hpp>
#include <fmt/core.h>

#include "observatory/collector.hpp"
#include "observatory/error.hpp"
#include "observatory/notifier.hpp"
#include "observatory/service.hpp"
#include "observatory/simulator.hpp"
#include "observatory/structurer.hpp"

namespace observatory {
namespace {

std::atomic<bool> g_interrupted{false};

extern "C" void on_signal(int) { g_interrupted.store(true); }

struct CliConfig {
  std::string store = "observatory.ndjson";
  std::string catalog;
  std::string rules;
  std::string journal;
  bool json = false;
  bool strict = false;
  std::int64_t gap_s = 1800;
  std::string granularity = "OBJECT_IDENTITY";
  std::string from;
  std::string to;
};

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

EntityCatalog catalog_of(const CliConfig& cfg) {
  return cfg.catalog.empty() ? EntityCatalog{} : load_catalog(cfg.catalog);
}

void validate_paths(const CliConfig& cfg) {
  if (!cfg.catalog.empty() && !std::filesystem::is_regular_file(cfg.catalog)) {
    throw UsageError("catalog not found: " + cfg.catalog);
  }
  if (!cfg.rules.empty() && !std::filesystem::is_regular_file(cfg.rules)) {
    throw UsageError("rules file not found: " + cfg.rules);
  }
  auto parent = std::filesystem::path(cfg.store).parent_path();
  if (!parent.empty() && !std::filesystem::is_directory(parent)) {
    throw UsageError("store directory does not exist: " + parent.string());
  }
  if (!parse_granularity(cfg.granularity)) throw UsageError("unknown granularity: " + cfg.granularity);
  for (const auto* t : {&cfg.from, &cfg.to}) {
    if (!t->empty() && !parse_instant(*t)) throw UsageError("bad instant: " + *t);
  }
}

ServiceConfig service_config(const CliConfig& cfg) {
  ServiceConfig sc;
  sc.store_path = cfg.store;
  sc.catalog = catalog_of(cfg);
  if (!cfg.rules.empty()) sc.rules = load_rules(cfg.rules);
  if (!cfg.journal.empty()) sc.journal_path = cfg.journal;
  sc.grammar.strict = cfg.strict;
  sc.default_gap_s = cfg.gap_s;
  sc.default_granularity = *parse_granularity(cfg.granularity);
  return sc;
}

QueryParams window_params(const CliConfig& cfg) {
  QueryParams params;
  if (!cfg.from.empty()) params["from"] = cfg.from;
  if (!cfg.to.empty()) params["to"] = cfg.to;
  params["gap_s"] = std::to_string(cfg.gap_s);
  params["granularity"] = cfg.granularity;
  return params;
}

// Prints a service response; non-2xx bodies go to the error stream.
int emit(const ApiResponse& r, std::ostream& out, std::ostream& err) {
  if (r.status >= 200 && r.status < 300) {
    out << r.body.dump(2) << '\n';
    return 0;
  }
  err << r.body.dump() << '\n';
  return r.status == 400 ? 2 : 1;
}

std::filesystem::path journal_of(const CliConfig& cfg) {
  if (!cfg.journal.empty()) return cfg.journal;
  return std::filesystem::path(cfg.store).parent_path() / "alerts.ndjson";
}

int cmd_ingest(const CliConfig& cfg, const std::vector<std::string>& logs, const std::string& since_text, bool follow,
               int poll_ms, std::ostream& out, std::ostream& err) {
  std::optional<Instant> since;
  if (!since_text.empty()) {
    since = parse_instant(since_text);
    if (!since) throw UsageError("bad --since: " + since_text);
  }
  if (follow && logs.size() != 1) throw UsageError("--follow takes exactly one log file");

  StoreLock lock(cfg.store);
  auto store = TraceStore::open(cfg.store);
  Quarantine quarantine(Quarantine::sidecar_for(cfg.store));
  auto catalog = catalog_of(cfg);
  LogGrammar grammar{cfg.strict};

  IngestResult total;
  std::uint64_t warnings = 0;
  auto quarantine_failures = [&](const CollectReport& report, const std::string& source) {
    for (const auto& f : report.failures) {
      quarantine.add({f.line_no, f.line, std::string{to_string(f.code)}, source + ": " + f.reason});
    }
    total.quarantined += report.failures.size();
    warnings += report.warnings;
  };
  auto accumulate = [&](const IngestResult& r) {
    total.accepted += r.accepted;
    total.quarantined += r.quarantined;
    total.duplicates += r.duplicates;
    total.ignored += r.ignored;
    total.unknown_actors += r.unknown_actors;
    total.last_seq = r.last_seq;
  };

  if (follow) {
    std::signal(SIGINT, on_signal);
    std::signal(SIGTERM, on_signal);
    std::stop_source stop;
    std::jthread watcher([&stop](std::stop_token st) {
      while (!st.stop_requested() && !g_interrupted.load()) std::this_thread::sleep_for(std::chrono::milliseconds(50));
      stop.request_stop();
    });
    CollectOptions options{since, true, std::chrono::milliseconds(poll_ms)};
    std::size_t reported_failures = 0;
    CollectReport report;
    report = collect_stream(
        logs.front(), grammar, options,
        [&](std::vector<RawLogRecord> batch) {
          auto r = ingest_records(store, std::move(batch), catalog, quarantine);
          accumulate(r);
          err << fmt::format("accepted {}, quarantined {}\n", r.accepted, r.quarantined);
        },
        stop.get_token());
    watcher.request_stop();
    (void)reported_failures;
    quarantine_failures(report, logs.front());
  } else {
    std::vector<RawLogRecord> records;
    for (const auto& log : logs) {
      auto [batch, report] = collect_file(log, grammar, since);
      quarantine_failures(report, log);
      records.insert(records.end(), std::make_move_iterator(batch.begin()), std::make_move_iterator(batch.end()));
    }
    accumulate(ingest_records(store, std::move(records), catalog, quarantine));
  }

  if (warnings > 0) err << warnings << " malformed line(s) skipped\n";
  if (total.unknown_actors > 0) err << total.unknown_actors << " record(s) from uncatalogued actors (INTERNAL)\n";
  if (total.duplicates > 0) err << total.duplicates << " duplicate(s) dropped\n";
  if (cfg.json) {
    out << nlohmann::json{{"accepted", total.accepted},
                          {"quarantined", total.quarantined},
                          {"duplicates", total.duplicates},
                          {"last_seq", total.last_seq}}
               .dump()
        << '\n';
  } else {
    out << fmt::format("accepted {}, quarantined {}\n", total.accepted, total.quarantined);
  }
  return 0;
}

int cmd_mine(const CliConfig& cfg, const std::string& function, double threshold, std::ostream& out,
             std::ostream& err) {
  ObservatoryService service(service_config(cfg));
  auto params = window_params(cfg);
  params["function"] = function;
  params["threshold"] = fmt::format("{}", threshold);
  auto r = service.handle_query("/triplets/frequent", params);
  if (r.status != 200 || cfg.json) return emit(r, out, err);

  out << fmt::format("{:<8} {:<28} {:<12} {:>12}\n", "ACTIVITY", "OBJECT", "ACTOR", "VALUE");
  for (const auto& row : r.body) {
    out << fmt::format("{:<8} {:<28} {:<12} {:>12}\n", row["activity"].get<std::string>(),
                       row["object"].get<std::string>(), row["actor"].get<std::string>(), row["value"].get<double>());
  }
  out << fmt::format("({} row{})\n", r.body.size(), r.body.size() == 1 ? "" : "s");
  return 0;
}

int cmd_indicators(const CliConfig& cfg, const std::string& id, const std::string& object, const std::string& actor,
                   std::ostream& out, std::ostream& err) {
  ObservatoryService service(service_config(cfg));
  auto params = window_params(cfg);
  if (!object.empty()) params["object"] = object;
  if (!actor.empty()) params["actor"] = actor;
  if (id.empty()) {
    params.erase("from");
    params.erase("to");
    if (!cfg.from.empty() || !cfg.to.empty()) throw UsageError("--from/--to need --id");
    return emit(service.handle_query("/indicators", params), out, err);
  }
  return emit(service.handle_query("/indicators/" + id, params), out, err);
}

int cmd_alerts(const CliConfig& cfg, bool replay, const std::string& at, const std::string& level, std::ostream& out,
               std::ostream& err) {
  std::optional<AlertLevel> level_filter;
  if (!level.empty()) {
    level_filter = parse_alert_level(level);
    if (!level_filter) throw UsageError("unknown level: " + level);
  }
  auto print = [&](const std::vector<Notification>& notifications) {
    for (const auto& n : notifications) {
      if (level_filter && n.level != *level_filter) continue;
      if (cfg.json) {
        out << to_journal_line(n) << '\n';
      } else {
        out << fmt::format("[{}] {} {} {}\n", to_string(n.level), format_instant(n.fired_at), n.rule_id, n.message);
      }
    }
  };

  if (!replay) {
    print(read_journal(journal_of(cfg)));
    return 0;
  }
  if (cfg.rules.empty()) throw UsageError("alerts --replay needs --rules");
  auto rules = load_rules(cfg.rules);

  StoreLock lock(cfg.store);
  auto store = TraceStore::open(cfg.store);
  std::vector<std::uint64_t> seqs;
  if (at.empty()) {
    for (std::uint64_t s = 1; s <= store.last_seq(); ++s) seqs.push_back(s);
  } else {
    std::stringstream ss(at);
    std::string item;
    while (std::getline(ss, item, ',')) {
      try {
        seqs.push_back(std::stoull(item));
      } catch (const std::exception&) {
        throw UsageError("bad --at entry: " + item);
      }
    }
    if (!std::is_sorted(seqs.begin(), seqs.end())) throw UsageError("--at must be ascending");
  }

  SnapshotConfig config;
  config.catalog = catalog_of(cfg);
  config.ip7_gap_s = cfg.gap_s;
  config.granularity = *parse_granularity(cfg.granularity);
  print(replay_alerts(store, rules, config, seqs));
  (void)err;
  return 0;
}

int cmd_serve(const CliConfig& cfg, const std::string& addr, int tick_ms, const std::string& webhook,
              std::ostream& err) {
  auto sc = service_config(cfg);
  sc.tick_interval = std::chrono::milliseconds(tick_ms);
  if (!webhook.empty()) sc.webhook_url = webhook;
  auto [host, port] = parse_listen_address(addr);

  ObservatoryService service(std::move(sc));
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  int bound = service.listen(host, port);
  err << "listening on " << host << ":" << bound << " (store " << cfg.store << ", last_seq " << service.last_seq()
      << ")\n";
  while (!g_interrupted.load()) std::this_thread::sleep_for(std::chrono::milliseconds(100));
  service.stop();
  return 0;
}

int cmd_simulate(const CliConfig& cfg, const std::string& scenario_path, const std::string& out_path,
                 const std::string& catalog_out, std::ostream& out, std::ostream& err) {
  std::ifstream in(scenario_path);
  if (!in) throw Error("SourceUnavailable", scenario_path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error("InvalidScenario", e.what());
  }
  auto scenario = parse_scenario(j);
  auto lines = generate(scenario);

  if (out_path.empty()) {
    for (const auto& l : lines) out << l << '\n';
  } else {
    std::ofstream f(out_path);
    for (const auto& l : lines) f << l << '\n';
    if (!f) throw Error("WriteFailed", out_path);
  }
  if (!catalog_out.empty()) {
    std::ofstream f(catalog_out);
    f << to_json(catalog_for(scenario)).dump(2) << '\n';
    if (!f) throw Error("WriteFailed", catalog_out);
  }
  if (cfg.json && !out_path.empty()) {
    out << nlohmann::json{{"lines", lines.size()}, {"out", out_path}}.dump() << '\n';
  } else {
    err << lines.size() << " lines generated\n";
  }
  return 0;
}

}  // namespace

int run_cli(std::span<const std::string> args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Trace observation for collaborative PLM activity", "observatory"};
  app.require_subcommand(1);
  app.fallthrough();

  CliConfig cfg;
  app.add_option("--store", cfg.store, "Trace store (NDJSON)")->envname("OBSERVATORY_STORE");
  app.add_option("--catalog", cfg.catalog, "Entity catalog (JSON)");
  app.add_option("--rules", cfg.rules, "Alert rules (JSON array)");
  app.add_option("--journal", cfg.journal, "Alert journal (default: alerts.ndjson beside the store)");
  app.add_flag("--json", cfg.json, "Machine-readable output");
  app.add_flag("--strict", cfg.strict, "Abort on the first malformed log line");
  app.add_option("--gap-s", cfg.gap_s, "Session gap for IP7 (seconds)")->check(CLI::NonNegativeNumber);
  app.add_option("--granularity", cfg.granularity, "OBJECT_IDENTITY or OBJECT_KIND");
  app.add_option("--from", cfg.from, "Window start (inclusive, ISO-8601 UTC)");
  app.add_option("--to", cfg.to, "Window end (exclusive, ISO-8601 UTC)");

  auto* ingest = app.add_subcommand("ingest", "Collect, structure and append log files");
  std::vector<std::string> logs;
  std::string since;
  bool follow = false;
  int poll_ms = 500;
  ingest->add_option("logs", logs, "Log files")->required()->check(CLI::ExistingFile);
  ingest->add_option("--since", since, "Skip records before this instant");
  ingest->add_flag("--follow", follow, "Keep tailing the file until interrupted");
  ingest->add_option("--poll-ms", poll_ms, "Follow-mode poll interval")->check(CLI::PositiveNumber);

  auto* mine = app.add_subcommand("mine", "Frequent triplets by measure function and threshold");
  std::string function;
  double threshold = 0.0;
  mine->add_option("--function", function, "Measure function")->required();
  mine->add_option("--threshold", threshold, "Minimum measure value")->required();

  auto* indicators = app.add_subcommand("indicators", "Monitoring indicators as JSON");
  std::string indicator_id, object, actor;
  indicators->add_option("--id", indicator_id, "IP2, IP4, IP7, IP11, ACTIVITIES_BY_ACTOR, ACTIVITY_SHARE_BY_OBJECT");
  indicators->add_option("--object", object, "Object scope (KIND:id)");
  indicators->add_option("--actor", actor, "Actor scope");

  auto* alerts = app.add_subcommand("alerts", "Show the alert journal or replay rules over the store");
  bool replay = false;
  std::string at, level;
  alerts->add_flag("--replay", replay, "Evaluate rules offline over store prefixes");
  alerts->add_option("--at", at, "Comma-separated as_of_seq values (default: every seq)");
  alerts->add_option("--level", level, "Only INFO, WARNING or CRITICAL");

  auto* serve = app.add_subcommand("serve", "Run the query and configuration service");
  std::string addr = "127.0.0.1:8080";
  int tick_ms = 5000;
  std::string webhook;
  serve->add_option("--addr", addr, "host:port")->envname("OBSERVATORY_ADDR");
  serve->add_option("--tick-ms", tick_ms, "Rule evaluation interval")->check(CLI::PositiveNumber);
  serve->add_option("--webhook", webhook, "POST each notification to this URL");

  auto* simulate = app.add_subcommand("simulate", "Generate synthetic log lines from a scenario");
  std::string scenario_path, out_path, catalog_out;
  simulate->add_option("scenario", scenario_path, "Scenario JSON")->required()->check(CLI::ExistingFile);
  simulate->add_option("--out", out_path, "Write lines here instead of standard output");
  simulate->add_option("--catalog-out", catalog_out, "Also write a matching catalog");

  std::vector<const char*> argv{"observatory"};
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return 2;
  }

  try {
    validate_paths(cfg);
    if (*ingest) return cmd_ingest(cfg, logs, since, follow, poll_ms, out, err);
    if (*mine) return cmd_mine(cfg, function, threshold, out, err);
    if (*indicators) return cmd_indicators(cfg, indicator_id, object, actor, out, err);
    if (*alerts) return cmd_alerts(cfg, replay, at, level, out, err);
    if (*serve) return cmd_serve(cfg, addr, tick_ms, webhook, err);
    if (*simulate) return cmd_simulate(cfg, scenario_path, out_path, catalog_out, out, err);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return 2;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
  return 2;
}

}  // namespace observatory
