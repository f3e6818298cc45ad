#pragma once

// Declarative description of a simulated cluster run. Scenario files are YAML;
// the schema is in docs/scenario_format.md.

#include <cstdint>
#include <filesystem>
#include <limits>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "tycoon/types.hpp"

namespace tycoon::sim {

inline constexpr double kForever = std::numeric_limits<double>::infinity();
// Actions at this time run in the setup phase, which completes before t = 0.
inline constexpr double kSetup = -std::numeric_limits<double>::infinity();

struct LatencyModel {
  enum class Kind { constant, uniform };
  Kind kind = Kind::constant;
  double value = 0.05;  // constant
  double min = 0.0;     // uniform
  double max = 0.0;

  double max_latency() const { return kind == Kind::constant ? value : max; }
};

struct HostSpec {
  HostId name;
  std::map<ResourceKind, double> capacity = {{ResourceKind::cpu, 1.0}};
  double speed = 1.0;  // work units per resource-second
};

struct Window {
  double start = 0.0;
  double stop = kForever;
};

struct WorkloadSpec {
  enum class Kind { none, continuous, bursty, batch };
  Kind kind = Kind::none;
  // continuous and batch start at windows[0].start; bursty uses every window.
  std::vector<Window> windows;
  double work = 0.0;        // batch: total work units
  double frame_cost = 1.0;  // work units per frame
};

struct ActionSpec {
  enum class Kind { create_account, fund, set_interval };
  double at = kSetup;
  Kind kind = Kind::fund;
  std::vector<HostId> hosts;  // empty: every host
  ResourceKind resource = ResourceKind::cpu;
  double amount = 0.0;                      // fund
  std::map<ResourceKind, double> credits;   // create_account
  double interval = 0.0;                    // 0 with create_account: host default
};

struct AgentSpec {
  bool enabled = false;
  double start = 0.0;
  double every = 60.0;
  double budget = 0.0;     // credits per round
  double interval = 600.0; // spending interval for funded bids
  std::map<HostId, double> weights;  // missing hosts weigh 1
  bool cost_effectiveness = false;
  double lambda = 0.0;
};

struct UserSpec {
  UserId name;
  double bank = 0.0;    // minted during setup
  double income = 0.0;  // minted every funding.income_period
  WorkloadSpec workload;
  std::vector<ActionSpec> actions;
  AgentSpec agent;
};

struct KillSpec {
  double at = 0.0;
  HostId host;
};

struct FundingPolicy {
  double income_period = 0.0;  // 0: no open-loop income
  double sweep_period = 0.0;   // 0: providers keep their earnings
};

struct Scenario {
  std::string name = "scenario";
  std::uint64_t seed = 1;
  double duration = 0.0;
  double period = 10.0;
  LatencyModel latency;
  double register_interval = 30.0;
  double expiry = 120.0;
  double max_skew = 300.0;
  double eviction_threshold = 0.001;
  double default_interval = 1e7;
  FundingPolicy funding;
  std::vector<HostSpec> hosts;
  std::vector<UserSpec> users;
  std::vector<KillSpec> kills;

  const HostSpec* find_host(const HostId& name) const;
};

class ScenarioError : public std::runtime_error {
 public:
  explicit ScenarioError(std::vector<std::string> problems);
  const std::vector<std::string>& problems() const { return problems_; }

 private:
  std::vector<std::string> problems_;
};

// Throws ScenarioError listing every problem found.
void validate(const Scenario& scenario);

// Problems are reported as "line N: <field>: <what>". Throws ScenarioError.
Scenario parse_scenario(const std::string& yaml_text);
Scenario load_scenario(const std::filesystem::path& path);

}  // namespace tycoon::sim
