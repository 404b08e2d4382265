#include <doctest.h>

#include <fstream>
#include <sstream>
#include <thread>

#include <httplib.h>

#include "observatory/error.hpp"
#include "observatory/notifier.hpp"
#include "support.hpp"

using namespace observatory;
using testing::at;

namespace {

IndicatorSnapshot ip2_snapshot(double value, std::uint64_t seq) {
  IndicatorSnapshot s;
  s.as_of_seq = seq;
  s.computed_at = from_epoch_seconds(1209369600 + static_cast<std::int64_t>(seq) * 60);
  s.configured = {kIndicatorIds.begin(), kIndicatorIds.end()};
  s.windows = {Window::all()};
  s.indicators.push_back({"IP2", IndicatorScope::global(), Window::all(), value, Unit::Count, s.computed_at, seq});
  return s;
}

AlertRule ip2_rule(std::optional<std::int64_t> cooldown) {
  AlertRule r;
  r.rule_id = "refusals";
  r.indicator_id = "IP2";
  r.comparator = Comparator::GreaterEqual;
  r.threshold = 1;
  r.cooldown_s = cooldown;
  return r;
}

std::vector<std::uint64_t> firing_seqs(const std::vector<double>& values, const AlertRule& rule) {
  NotifierState state;
  std::vector<std::uint64_t> fired;
  std::uint64_t seq = 0;
  for (double v : values) {
    auto snap = ip2_snapshot(v, ++seq);
    std::vector<AlertRule> rules{rule};
    auto e = evaluate_rules(snap, rules, state, snap.computed_at);
    for (const auto& n : e.notifications) {
      CHECK(compare(rule.comparator, n.observed, n.threshold));
      fired.push_back(n.as_of_seq);
    }
    state = e.next;
  }
  return fired;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("edge trigger over 0,1,1,2") {
  CHECK(firing_seqs({0, 1, 1, 2}, ip2_rule(std::nullopt)) == std::vector<std::uint64_t>{2});
  CHECK(firing_seqs({0, 1, 1, 2}, ip2_rule(0)) == std::vector<std::uint64_t>{2, 3, 4});
  CHECK(firing_seqs({0, 0, 0}, ip2_rule(0)).empty());
}

TEST_CASE("cooldown counts seconds since the last firing") {
  // Snapshots are 60 s apart; cooldown 120 re-fires every other evaluation.
  CHECK(firing_seqs({1, 1, 1, 1, 1}, ip2_rule(120)) == std::vector<std::uint64_t>{1, 3, 5});
}

TEST_CASE("infinite cooldown fires once per false-to-true transition") {
  std::vector<double> values = {0, 1, 1, 0, 2, 3, 0, 0, 1, 0, 1};
  int transitions = 0;
  bool prev = false;
  for (double v : values) {
    transitions += (v >= 1) && !prev;
    prev = v >= 1;
  }
  CHECK(firing_seqs(values, ip2_rule(std::nullopt)).size() == static_cast<std::size_t>(transitions));
}

TEST_CASE("rule errors at evaluation") {
  auto snap = ip2_snapshot(1, 1);
  snap.configured = {"IP2"};
  auto r = ip2_rule(std::nullopt);
  r.indicator_id = "IP4";
  r.scope = IndicatorScope::object("PROCESS_MODEL:P1");
  std::vector<AlertRule> rules{r};
  try {
    evaluate_rules(snap, rules, {}, snap.computed_at);
    FAIL("expected UnknownIndicator");
  } catch (const Error& e) {
    CHECK(e.code() == "UnknownIndicator");
  }

  snap.configured = {kIndicatorIds.begin(), kIndicatorIds.end()};
  rules[0].scope = IndicatorScope::actor("u1");
  try {
    evaluate_rules(snap, rules, {}, snap.computed_at);
    FAIL("expected ScopeMismatch");
  } catch (const Error& e) {
    CHECK(e.code() == "ScopeMismatch");
  }

  rules[0] = ip2_rule(std::nullopt);
  rules[0].window_s = 600;
  CHECK_THROWS_AS(evaluate_rules(snap, rules, {}, snap.computed_at), Error);
}

TEST_CASE("rule files") {
  auto rules = load_rules(testing::fixture("rules.json"));
  REQUIRE(rules.size() == 2);
  CHECK(rules[0].rule_id == "refusals");
  CHECK_FALSE(rules[0].cooldown_s);
  CHECK_FALSE(rules[0].window_s);
  CHECK(rules[1].scope == IndicatorScope::object("PROCESS_MODEL:P1"));
  CHECK(rules[1].comparator == Comparator::Greater);
  CHECK(rules[1].level == AlertLevel::Critical);
  CHECK(rules[1].cooldown_s == 3600);
  CHECK(parse_rules(to_json(std::span<const AlertRule>(rules))) == rules);

  auto one = nlohmann::json::parse(R"([{"rule_id":"a","indicator_id":"IP2","scope":"global","comparator":">=",
                                        "threshold":1,"level":"INFO","window":"ALL","cooldown_s":0}])");
  CHECK(parse_rules(one).size() == 1);

  auto expect_code = [](nlohmann::json j, const std::string& code, const std::string& where) {
    try {
      parse_rules(j);
      FAIL("expected " << code);
    } catch (const Error& e) {
      CHECK(e.code() == code);
      CHECK(e.detail().find(where) != std::string::npos);
    }
  };
  auto dup = one;
  dup.push_back(one[0]);
  expect_code(dup, "DuplicateRuleId", "rules[1]");
  auto eq = one;
  eq[0]["comparator"] = "==";
  expect_code(eq, "BadComparator", "rules[0]");
  auto unknown = one;
  unknown[0]["indicator_id"] = "IP3";
  expect_code(unknown, "UnknownIndicatorId", "rules[0]");
  expect_code(nlohmann::json::object(), "BadRuleSet", "");
  auto inf = one;
  inf[0]["threshold"] = "x";
  expect_code(inf, "BadRule", "rules[0]");

  testing::TempDir dir;
  std::ofstream(dir / "bad.json") << "[";
  CHECK_THROWS_AS(load_rules(dir / "bad.json"), Error);
  CHECK_THROWS_AS(load_rules(dir / "missing.json"), Error);
}

TEST_CASE("journal dispatch, ordering and replay") {
  testing::TempDir dir;
  std::ostringstream echo;
  AlertDispatcher d(SinkConfig{dir / "alerts.ndjson", std::nullopt, &echo});
  std::vector<Notification> sent;
  for (std::uint64_t i = 1; i <= 3; ++i) {
    Notification n{"r" + std::to_string(i), from_epoch_seconds(1209369600 + static_cast<std::int64_t>(i)),
                   static_cast<double>(i), 1, AlertLevel::Warning, IndicatorScope::global(), i, "msg"};
    auto report = d.dispatch(n);
    REQUIRE(report.find("journal"));
    CHECK(report.find("journal")->ok);
    CHECK_FALSE(report.find("webhook"));
    sent.push_back(n);
  }
  CHECK(read_journal(dir / "alerts.ndjson") == sent);
  CHECK(testing::read_lines(dir / "alerts.ndjson").size() == 3);
  CHECK(echo.str().find("r2") != std::string::npos);
  CHECK(notification_from_json(to_json(sent[0])) == sent[0]);
}

TEST_CASE("an unreachable webhook never blocks the journal") {
  testing::TempDir dir;
  // Grab a free port, then release it so nothing listens there.
  int port;
  {
    httplib::Server probe;
    port = probe.bind_to_any_port("127.0.0.1");
  }
  AlertDispatcher d(SinkConfig{dir / "alerts.ndjson", "http://127.0.0.1:" + std::to_string(port) + "/hook"});
  Notification n{"r", at("2008-04-28T09:30:00Z"), 1, 1, AlertLevel::Warning, IndicatorScope::global(), 5, "m"};
  auto report = d.dispatch(n);
  CHECK(report.find("journal")->ok);
  REQUIRE(report.find("webhook"));
  CHECK_FALSE(report.find("webhook")->ok);
  CHECK(read_journal(dir / "alerts.ndjson").size() == 1);
}

TEST_CASE("webhook receives the notification body") {
  testing::TempDir dir;
  httplib::Server hook;
  std::mutex m;
  std::vector<std::string> bodies;
  hook.Post("/hook", [&](const httplib::Request& req, httplib::Response& res) {
    std::lock_guard lock(m);
    bodies.push_back(req.body);
    res.status = 204;
  });
  int port = hook.bind_to_any_port("127.0.0.1");
  std::thread t([&] { hook.listen_after_bind(); });
  hook.wait_until_ready();

  AlertDispatcher d(SinkConfig{dir / "alerts.ndjson", "http://127.0.0.1:" + std::to_string(port) + "/hook"});
  Notification n{"r", at("2008-04-28T09:30:00Z"), 2, 1, AlertLevel::Critical, IndicatorScope::actor("u3"), 5, "m"};
  auto report = d.dispatch(n);
  hook.stop();
  t.join();
  CHECK(report.find("webhook")->ok);
  REQUIRE(bodies.size() == 1);
  CHECK(notification_from_json(nlohmann::json::parse(bodies[0])) == n);
}

TEST_CASE("offline replay over store prefixes is reproducible") {
  std::vector<std::string> lines = {"2008-04-28T09:00:00Z INFO [u1] VIEW DOCUMENT:D1",
                                    "2008-04-28T09:01:00Z INFO [u3] STATUS PROCESS_MODEL:P1 outcome=refused",
                                    "2008-04-28T09:02:00Z INFO [u1] VIEW DOCUMENT:D1",
                                    "2008-04-28T09:03:00Z INFO [u3] STATUS PROCESS_MODEL:P1 outcome=refused"};
  auto store = testing::store_from(lines);
  std::vector<std::uint64_t> seqs = {1, 2, 3, 4};
  std::vector<AlertRule> once{ip2_rule(std::nullopt)};
  std::vector<AlertRule> every{ip2_rule(0)};
  CHECK(replay_alerts(store, once, {}, seqs).size() == 1);
  CHECK(replay_alerts(store, every, {}, seqs).size() == 3);

  testing::TempDir dir;
  for (const char* name : {"a.ndjson", "b.ndjson"}) {
    AlertDispatcher d(SinkConfig{dir / name});
    for (const auto& n : replay_alerts(store, every, {}, seqs)) d.dispatch(n);
  }
  CHECK(slurp(dir / "a.ndjson") == slurp(dir / "b.ndjson"));
  CHECK(!slurp(dir / "a.ndjson").empty());
}
