#include <doctest.h>

#include <httplib.h>

#include "observatory/error.hpp"
#include "observatory/service.hpp"
#include "support.hpp"

using namespace observatory;

namespace {

std::string lines_body(const std::string& fixture) {
  return nlohmann::json(testing::read_lines(testing::fixture(fixture))).dump();
}

ServiceConfig memory_config(const testing::TempDir& dir) {
  ServiceConfig c;
  c.catalog = load_catalog(testing::fixture("catalog.json"));
  c.journal_path = dir / "alerts.ndjson";
  return c;
}

const char* kRefusalRule = R"([{"rule_id":"refusals","indicator_id":"IP2","scope":"global","comparator":">=",
                                 "threshold":1,"level":"WARNING","window":"ALL","cooldown_s":null}])";

}  // namespace

TEST_CASE("ingest is idempotent and reports quarantine") {
  testing::TempDir dir;
  ObservatoryService svc(memory_config(dir));
  auto r = svc.handle_ingest(lines_body("mini.log"));
  CHECK(r.status == 200);
  CHECK(r.body["accepted"] == 8);
  CHECK(r.body["quarantined"] == 0);
  CHECK(r.body["last_seq"] == 8);
  CHECK(r.headers["X-As-Of-Seq"] == "8");

  auto again = svc.handle_ingest(lines_body("mini.log"));
  CHECK(again.status == 200);
  CHECK(again.body["accepted"] == 0);
  CHECK(svc.last_seq() == 8);

  ObservatoryService other(memory_config(dir));
  auto corrupt = other.handle_ingest(lines_body("mini_corrupt.log"));
  CHECK(corrupt.body["accepted"] == 7);
  CHECK(corrupt.body["quarantined"] == 1);
}

TEST_CASE("ingest of extraction contexts and bad bodies") {
  testing::TempDir dir;
  ObservatoryService svc(memory_config(dir));
  auto ctx = R"([{"ts":"2008-04-28T09:30:00Z","activity":"STATUS","kind":"PROCESS_MODEL","oid":"P1",
                  "actor":"u3","attrs":{"outcome":"refused"}}])";
  auto r = svc.handle_ingest(ctx);
  CHECK(r.status == 200);
  CHECK(r.body["accepted"] == 1);
  CHECK(svc.handle_query("/indicators/IP2", {}).body["value"] == 1);

  CHECK(svc.handle_ingest("not json").status == 422);
  CHECK(svc.handle_ingest("{}").status == 422);
  CHECK(svc.handle_ingest("[]").status == 400);
  auto all_bad = svc.handle_ingest(R"(["garbage", 42])");
  CHECK(all_bad.status == 422);
  CHECK(all_bad.body["code"] == "MalformedBody");
}

TEST_CASE("query routes over the mini fixture") {
  testing::TempDir dir;
  ObservatoryService svc(memory_config(dir));
  svc.handle_ingest(lines_body("mini.log"));

  auto health = svc.handle_query("/health", {});
  CHECK(health.body == nlohmann::json{{"status", "ok"}, {"last_seq", 8}});

  auto ip2 = svc.handle_query("/indicators/ip2", {});
  CHECK(ip2.status == 200);
  CHECK(ip2.body["indicator_id"] == "IP2");
  CHECK(ip2.body["value"] == 1);
  CHECK(ip2.body["as_of_seq"] == 8);
  CHECK(svc.handle_query("/indicators/IP2", {{"object", "DOCUMENT:D1"}}).body["value"] == 0);
  CHECK(svc.handle_query("/indicators/IP2", {{"object", "DOCUMENT:D9"}}).status == 404);
  CHECK(svc.handle_query("/indicators/IP2", {{"actor", "ghost"}}).status == 404);

  CHECK(svc.handle_query("/indicators/IP4", {{"object", "P1"}}).body["value"] == 3);
  CHECK(svc.handle_query("/indicators/IP4", {{"object", "P1"}, {"to", "2008-04-28T09:40:00Z"}}).body["value"] == 1);
  CHECK(svc.handle_query("/indicators/IP4", {}).status == 400);
  CHECK(svc.handle_query("/indicators/IP4", {{"object", "P404"}}).status == 404);

  auto ip7 = svc.handle_query("/indicators/IP7", {});
  REQUIRE(ip7.body.size() == 1);
  CHECK(ip7.body[0]["value"] == 600);
  CHECK(ip7.body[0]["scope"] == "object:DOCUMENT:D1");
  CHECK(svc.handle_query("/indicators/IP7", {{"gap_s", "4800"}}).body[0]["value"] == 4800);

  CHECK(svc.handle_query("/dashboards/activities-by-actor", {}).body ==
        nlohmann::json{{"u1", 4}, {"u2", 3}, {"u3", 1}});
  auto share = svc.handle_query("/dashboards/activity-share-by-object", {}).body;
  CHECK(share["DOCUMENT:D1"].get<double>() == doctest::Approx(62.5));
  CHECK(share["PROCESS_MODEL:P1"].get<double>() == doctest::Approx(37.5));
  auto by_kind = svc.handle_query("/dashboards/activity-share-by-object", {{"granularity", "OBJECT_KIND"}}).body;
  CHECK(by_kind["DOCUMENT"].get<double>() == doctest::Approx(62.5));

  auto pm = svc.handle_query("/dashboards/process-model-changes/P1", {});
  CHECK(pm.body["value"] == 3);
  CHECK(pm.body["by_activity"] == nlohmann::json{{"INDEX", 1}, {"STATUS", 1}, {"UPDATE", 1}});

  auto frequent = svc.handle_query("/triplets/frequent", {{"function", "OCCURRENCE_COUNT"}, {"threshold", "2"}});
  REQUIRE(frequent.body.size() == 1);
  CHECK(frequent.body[0] ==
        nlohmann::json{{"activity", "SEARCH"}, {"object", "DOCUMENT:D1"}, {"actor", "u2"}, {"value", 3}});
  CHECK(svc.handle_query("/triplets/frequent", {{"function", "OCCURRENCE_COUNT"}, {"threshold", "4"}}).body ==
        nlohmann::json::array());

  auto all = svc.handle_query("/indicators", {});
  CHECK(all.body["as_of_seq"] == 8);
  CHECK(all.body["indicators"].size() > 5);
}

TEST_CASE("pinned queries and bad parameters") {
  testing::TempDir dir;
  ObservatoryService svc(memory_config(dir));
  svc.handle_ingest(lines_body("mini.log"));

  auto early = svc.handle_query("/dashboards/activities-by-actor", {{"as_of_seq", "2"}});
  CHECK(early.body == nlohmann::json{{"u1", 2}});
  CHECK(early.headers["X-As-Of-Seq"] == "2");
  CHECK(svc.handle_query("/indicators/IP2", {{"as_of_seq", "4"}}).body["value"] == 0);

  CHECK(svc.handle_query("/indicators/IP2", {{"from", "yesterday"}}).status == 400);
  CHECK(svc.handle_query("/indicators/IP7", {{"gap_s", "-1"}}).status == 400);
  CHECK(svc.handle_query("/indicators/IP2", {{"granularity", "FINE"}}).status == 400);
  CHECK(svc.handle_query("/triplets/frequent", {{"function", "MAGIC"}}).status == 400);
  CHECK(svc.handle_query("/triplets/frequent", {}).status == 400);
  CHECK(svc.handle_query("/indicators/IP99", {}).status == 404);
  CHECK(svc.handle_query("/nowhere", {}).status == 404);
  auto empty = svc.handle_query("/dashboards/activity-share-by-object", {{"from", "2020-01-01T00:00:00Z"}});
  CHECK(empty.status == 422);
  CHECK(empty.body["code"] == "EmptyWindow");
  CHECK(empty.body.contains("detail"));

  auto page = svc.handle_query("/traces", {{"cursor", "3"}, {"limit", "2"}});
  REQUIRE(page.body.size() == 2);
  CHECK(page.body[0]["seq"] == 4);
  CHECK(page.headers["X-Next-Cursor"] == "5");
}

TEST_CASE("queries are side-effect free") {
  testing::TempDir dir;
  ObservatoryService svc(memory_config(dir));
  svc.handle_ingest(lines_body("mini.log"));
  auto a = svc.handle_query("/indicators", {});
  auto b = svc.handle_query("/indicators", {});
  CHECK(a.body == b.body);
  CHECK(svc.last_seq() == 8);
}

TEST_CASE("rules replace atomically") {
  testing::TempDir dir;
  ObservatoryService svc(memory_config(dir));
  CHECK(svc.handle_rules("GET", "").body == nlohmann::json::array());

  auto two = testing::read_lines(testing::fixture("rules.json"));
  std::string body;
  for (const auto& l : two) body += l + "\n";
  auto put = svc.handle_rules("PUT", body);
  CHECK(put.status == 200);
  auto got = svc.handle_rules("GET", "").body;
  CHECK(got.size() == 2);
  CHECK(parse_rules(got) == load_rules(testing::fixture("rules.json")));

  auto dup = nlohmann::json::parse(kRefusalRule);
  dup.push_back(dup[0]);
  auto rejected = svc.handle_rules("PUT", dup.dump());
  CHECK(rejected.status == 409);
  CHECK(rejected.body["code"] == "DuplicateRuleId");
  CHECK(svc.handle_rules("GET", "").body == got);

  CHECK(svc.handle_rules("PUT", "[]").status == 200);
  CHECK(svc.handle_rules("GET", "").body == nlohmann::json::array());
}

TEST_CASE("alerts follow ingest and match offline replay") {
  testing::TempDir dir;
  ObservatoryService svc(memory_config(dir));
  CHECK(svc.handle_rules("PUT", kRefusalRule).status == 200);
  auto lines = testing::read_lines(testing::fixture("mini.log"));
  for (const auto& l : lines) svc.handle_ingest(nlohmann::json::array({l}).dump());

  auto alerts = svc.handle_alerts({});
  REQUIRE(alerts.body.size() == 1);
  CHECK(alerts.body[0]["rule_id"] == "refusals");
  CHECK(alerts.body[0]["as_of_seq"] == 5);
  CHECK(svc.handle_alerts({{"level", "CRITICAL"}}).body == nlohmann::json::array());
  CHECK(svc.handle_alerts({{"since", "2026-01-01T00:00:00Z"}}).body == nlohmann::json::array());
  CHECK(svc.handle_alerts({{"since", "garbage"}}).status == 400);
  CHECK(svc.evaluate_tick().empty());

  auto seqs = svc.evaluated_seqs();
  auto store = testing::store_from(lines, load_catalog(testing::fixture("catalog.json")));
  auto rules = parse_rules(nlohmann::json::parse(kRefusalRule));
  SnapshotConfig config;
  config.catalog = load_catalog(testing::fixture("catalog.json"));
  auto replayed = replay_alerts(store, rules, config, seqs);
  CHECK(replayed == read_journal(svc.journal_path()));
}

TEST_CASE("file-backed service holds the store lock") {
  testing::TempDir dir;
  auto config = memory_config(dir);
  config.store_path = dir / "store.ndjson";
  {
    ObservatoryService svc(config);
    svc.handle_ingest(lines_body("mini.log"));
    try {
      ObservatoryService second(config);
      FAIL("expected StoreLocked");
    } catch (const Error& e) {
      CHECK(e.code() == "StoreLocked");
    }
  }
  ObservatoryService reopened(config);
  CHECK(reopened.last_seq() == 8);
}

TEST_CASE("HTTP binding") {
  testing::TempDir dir;
  auto config = memory_config(dir);
  config.tick_interval = std::chrono::milliseconds(50);
  ObservatoryService svc(config);
  int port = svc.listen("127.0.0.1", 0);
  REQUIRE(port > 0);
  httplib::Client client("127.0.0.1", port);

  CHECK(client.Put("/rules", kRefusalRule, "application/json")->status == 200);
  auto ingest = client.Post("/ingest", lines_body("mini.log"), "application/json");
  REQUIRE(ingest);
  CHECK(ingest->status == 200);
  CHECK(nlohmann::json::parse(ingest->body)["accepted"] == 8);

  auto ip2 = client.Get("/indicators/ip2");
  REQUIRE(ip2);
  CHECK(nlohmann::json::parse(ip2->body)["value"] == 1);
  CHECK(ip2->get_header_value("X-As-Of-Seq") == "8");
  CHECK(ip2->get_header_value("Access-Control-Allow-Origin") == "*");

  auto by_actor = client.Get("/dashboards/activities-by-actor");
  CHECK(nlohmann::json::parse(by_actor->body) == nlohmann::json{{"u1", 4}, {"u2", 3}, {"u3", 1}});
  auto ip4 = client.Get("/indicators/IP4?object=PROCESS_MODEL:P1");
  CHECK(nlohmann::json::parse(ip4->body)["value"] == 3);
  auto missing = client.Get("/indicators/IP4?object=P404");
  CHECK(missing->status == 404);
  CHECK(nlohmann::json::parse(missing->body)["status"] == 404);

  auto alerts = client.Get("/alerts");
  CHECK(nlohmann::json::parse(alerts->body).size() == 1);
  auto health = client.Get("/health");
  CHECK(nlohmann::json::parse(health->body)["last_seq"] == 8);
  CHECK(client.Options("/rules")->status == 204);
  svc.stop();
}

TEST_CASE("listen addresses") {
  CHECK(parse_listen_address("127.0.0.1:8080") == std::pair<std::string, int>{"127.0.0.1", 8080});
  CHECK(parse_listen_address(":9000") == std::pair<std::string, int>{"0.0.0.0", 9000});
  CHECK_THROWS_AS(parse_listen_address("localhost"), Error);
  CHECK_THROWS_AS(parse_listen_address("h:99999"), Error);
}
