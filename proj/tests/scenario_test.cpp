#include "tycoon/scenario.hpp"

#include <gtest/gtest.h>

#include <string>

namespace tycoon::sim {
namespace {

const std::filesystem::path kScenarios = std::filesystem::path(TYCOON_SOURCE_DIR) / "scenarios";

std::vector<std::string> problems_of(const std::string& yaml) {
  try {
    parse_scenario(yaml);
  } catch (const ScenarioError& e) {
    return e.problems();
  }
  return {};
}

bool mentions(const std::vector<std::string>& problems, const std::string& needle) {
  for (const auto& p : problems) {
    if (p.find(needle) != std::string::npos) return true;
  }
  return false;
}

TEST(ScenarioTest, BundledScenariosLoad) {
  for (const char* name : {"priority", "interval_change", "bursty", "eviction"}) {
    SCOPED_TRACE(name);
    EXPECT_NO_THROW(load_scenario(kScenarios / (std::string(name) + ".yaml")));
  }
}

TEST(ScenarioTest, PriorityFileFields) {
  const auto s = load_scenario(kScenarios / "priority.yaml");
  EXPECT_EQ(s.name, "priority");
  EXPECT_EQ(s.seed, 7u);
  EXPECT_DOUBLE_EQ(s.duration, 400);
  EXPECT_DOUBLE_EQ(s.period, 10);
  ASSERT_EQ(s.hosts.size(), 1u);
  EXPECT_DOUBLE_EQ(s.hosts[0].capacity.at(ResourceKind::cpu), 1.0);
  ASSERT_EQ(s.users.size(), 2u);
  const auto& low = s.users[0];
  EXPECT_EQ(low.workload.kind, WorkloadSpec::Kind::continuous);
  ASSERT_EQ(low.actions.size(), 1u);
  EXPECT_EQ(low.actions[0].at, kSetup);
  EXPECT_EQ(low.actions[0].kind, ActionSpec::Kind::create_account);
  EXPECT_DOUBLE_EQ(low.actions[0].credits.at(ResourceKind::cpu), 10);
  EXPECT_DOUBLE_EQ(low.actions[0].interval, 100000);
  EXPECT_DOUBLE_EQ(s.users[1].actions[0].at, 220);
}

TEST(ScenarioTest, CountExpandsHosts) {
  const auto s = parse_scenario(R"(
duration: 10
hosts:
  - {name: node, count: 3, cpu: 2, memory: 4, speed: 1.5}
  - {name: solo}
)");
  ASSERT_EQ(s.hosts.size(), 4u);
  EXPECT_EQ(s.hosts[0].name, "node0");
  EXPECT_EQ(s.hosts[2].name, "node2");
  EXPECT_EQ(s.hosts[3].name, "solo");
  EXPECT_DOUBLE_EQ(s.hosts[1].capacity.at(ResourceKind::memory), 4);
  EXPECT_EQ(s.hosts[1].capacity.count(ResourceKind::disk), 0u);
  EXPECT_DOUBLE_EQ(s.hosts[1].speed, 1.5);
}

TEST(ScenarioTest, OptionalSections) {
  const auto s = parse_scenario(R"(
duration: 100
latency: {model: uniform, min: 0.01, max: 0.2}
sls: {register_interval: 15, expiry: 60}
funding: {income_period: 30, sweep_period: 45}
hosts: [{name: a}, {name: b}]
users:
  - name: u
    bank: 50
    income: 2
    workload: {kind: bursty, windows: [[0, 20], [50, never]]}
    actions:
      - {at: setup, do: create_account, hosts: all, credits: [1, 2, 3]}
      - {at: 5, do: fund, hosts: a, resource: memory, amount: 4, interval: 100}
      - {at: 6, do: set_interval, hosts: [a, b], interval: 10}
    agent: {start: 10, every: 20, budget: 5, interval: 200, weights: {a: 2}, lambda: 0.1}
kills: [{at: 40, host: b}]
)");
  EXPECT_EQ(s.latency.kind, LatencyModel::Kind::uniform);
  EXPECT_DOUBLE_EQ(s.latency.max_latency(), 0.2);
  EXPECT_DOUBLE_EQ(s.register_interval, 15);
  EXPECT_DOUBLE_EQ(s.expiry, 60);
  EXPECT_DOUBLE_EQ(s.funding.income_period, 30);
  const auto& u = s.users[0];
  ASSERT_EQ(u.workload.windows.size(), 2u);
  EXPECT_EQ(u.workload.windows[1].stop, kForever);
  EXPECT_TRUE(u.actions[0].hosts.empty());
  EXPECT_DOUBLE_EQ(u.actions[0].credits.at(ResourceKind::disk), 3);
  EXPECT_EQ(u.actions[1].resource, ResourceKind::memory);
  EXPECT_EQ(u.actions[1].hosts, std::vector<HostId>{"a"});
  EXPECT_EQ(u.actions[2].hosts, (std::vector<HostId>{"a", "b"}));
  EXPECT_TRUE(u.agent.enabled);
  EXPECT_DOUBLE_EQ(u.agent.weights.at("a"), 2);
  ASSERT_EQ(s.kills.size(), 1u);
  EXPECT_EQ(s.kills[0].host, "b");
}

TEST(ScenarioTest, ScalarLatencyIsConstant) {
  const auto s = parse_scenario("duration: 5\nlatency: 0.2\nhosts: [{name: h}]\n");
  EXPECT_EQ(s.latency.kind, LatencyModel::Kind::constant);
  EXPECT_DOUBLE_EQ(s.latency.value, 0.2);
}

TEST(ScenarioTest, UnknownFieldReportedWithLine) {
  const auto p = problems_of("duration: 10\nhosts:\n  - name: h\n    cpus: 3\n");
  ASSERT_FALSE(p.empty());
  EXPECT_TRUE(mentions(p, "line 4")) << p[0];
  EXPECT_TRUE(mentions(p, "cpus"));
}

TEST(ScenarioTest, MissingDuration) {
  const auto p = problems_of("hosts: [{name: h}]\n");
  EXPECT_TRUE(mentions(p, "duration"));
}

TEST(ScenarioTest, EveryProblemIsListed) {
  const auto p = problems_of(R"(duration: -1
hosts:
  - name: bank
users:
  - name: u
    bank: -5
    actions:
      - {at: 3, do: fund, hosts: nowhere, amount: 0, interval: 10}
)");
  EXPECT_TRUE(mentions(p, "duration: must be positive"));
  EXPECT_TRUE(mentions(p, "'bank' is reserved"));
  EXPECT_TRUE(mentions(p, "users[0].bank"));
  EXPECT_TRUE(mentions(p, "unknown host 'nowhere'"));
  EXPECT_TRUE(mentions(p, "users[0].actions[0].amount"));
  for (const auto& line : p) EXPECT_EQ(line.rfind("line ", 0), 0u) << line;
}

TEST(ScenarioTest, SemanticProblemPointsAtItsLine) {
  const auto p = problems_of("duration: 10\nhosts: [{name: h}]\nusers:\n  - name: u\n    bank: -5\n");
  ASSERT_EQ(p.size(), 1u);
  EXPECT_EQ(p[0], "line 5: users[0].bank: must be non-negative");
}

TEST(ScenarioTest, BadWindowsAndKinds) {
  EXPECT_TRUE(mentions(problems_of(R"(duration: 10
hosts: [{name: h}]
users:
  - name: u
    workload: {kind: bursty, windows: [[5, 1]]}
)"),
                       "start < stop"));
  EXPECT_TRUE(mentions(problems_of(R"(duration: 10
hosts: [{name: h}]
users:
  - {name: u, workload: {kind: sometimes}}
)"),
                       "expected continuous, bursty, batch or none"));
  EXPECT_TRUE(mentions(problems_of(R"(duration: 10
hosts: [{name: h}]
users:
  - {name: u, workload: {kind: batch}}
)"),
                       "positive total work"));
}

TEST(ScenarioTest, DuplicateNames) {
  const auto p = problems_of("duration: 10\nhosts: [{name: h}, {name: h}]\n");
  EXPECT_TRUE(mentions(p, "duplicate name 'h'"));
}

TEST(ScenarioTest, NotYaml) {
  EXPECT_THROW(parse_scenario("duration: [1, 2"), ScenarioError);
  EXPECT_THROW(parse_scenario("- just\n- a list\n"), ScenarioError);
}

TEST(ScenarioTest, MissingFile) {
  EXPECT_THROW(load_scenario(kScenarios / "does-not-exist.yaml"), ScenarioError);
}

TEST(ScenarioTest, ValidateCatchesProgrammaticScenarios) {
  Scenario s;
  s.duration = 10;
  EXPECT_THROW(validate(s), ScenarioError);
  s.hosts.push_back({"h"});
  EXPECT_NO_THROW(validate(s));
  s.kills.push_back({5, "ghost"});
  EXPECT_THROW(validate(s), ScenarioError);
}

}  // namespace
}  // namespace tycoon::sim
