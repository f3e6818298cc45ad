#pragma once

// Deterministic discrete-event simulation of a cluster: one bank, one
// service locator, many auctioneers and users, connected by a virtual
// network with configurable per-message latency. Every message crosses the
// network as an encoded wire frame and is handled by the same dispatcher the
// socket services use.

#include <cstdint>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "tycoon/scenario.hpp"

namespace tycoon::sim {

// One row of the run trace. Columns not meaningful for a kind are zero or
// empty.
//   alloc   host, user, resource, share (bid-proportional), granted (what the
//           workload actually received after idle shares were handed on),
//           charge (credits/s), balance, work
//   msg     host = destination node, user = source node, detail = type
//   accept  host, user, resource, detail = message type
//   reject  host = refusing node, user, detail = "type:reason"
//   fail    host = unreachable node, user = sender, detail = type
//   mint    user, balance = bank balance after the mint
//   kill    host
struct TraceEvent {
  double time = 0.0;
  std::string kind;
  std::string host;
  std::string user;
  std::string resource;
  double share = 0.0;
  double granted = 0.0;
  double charge = 0.0;
  double balance = 0.0;
  double work = 0.0;
  std::string detail;

  friend bool operator==(const TraceEvent&, const TraceEvent&) = default;
};

struct Trace {
  std::vector<TraceEvent> events;

  static std::string_view header();
  void write_csv(std::ostream& out) const;
  std::string csv() const;
};

// A set_interval accepted by an auctioneer. `effective` is the first period
// run at or after acceptance, if any ran before the end of the simulation.
struct BidChange {
  UserId user;
  HostId host;
  ResourceKind resource = ResourceKind::cpu;
  double interval = 0.0;
  double issued = 0.0;    // message sent
  double accepted = 0.0;  // auctioneer committed it
  std::optional<double> effective;
};

struct UserStats {
  double work = 0.0;
  std::uint64_t frames = 0;
  std::map<HostId, double> work_by_host;
  std::optional<double> finished_at;  // batch workloads
};

// total_issued = user bank balances + local balances + cumulative debits
//              + receipts in flight + orphaned receipts
struct Conservation {
  double total_issued = 0.0;
  double user_bank = 0.0;
  double local = 0.0;
  double debited = 0.0;
  double in_flight = 0.0;
  double orphaned = 0.0;
  double bank_sum = 0.0;  // every bank balance, providers included

  double residual() const {
    return total_issued - (user_bank + local + debited + in_flight + orphaned);
  }
};

struct RunResult {
  Trace trace;
  std::vector<BidChange> bid_changes;
  std::map<UserId, UserStats> users;
  Conservation conservation;            // at the end of the run
  double max_conservation_error = 0.0;  // largest |residual| after any period
  bool work_conserving = true;          // checked at every period
  std::uint64_t messages = 0;
  std::uint64_t periods = 0;
};

// Runs the scenario with its own seed, or with `seed` when given. The same
// scenario and seed always produce a byte-identical trace.
RunResult run_scenario(const Scenario& scenario);
RunResult run_scenario(const Scenario& scenario, std::uint64_t seed);

// Virtual time between a set_interval being accepted and the first
// allocation that uses it. Throws std::invalid_argument when the trace has no
// matching acceptance or no later allocation row.
double measure_reallocation_latency(const Trace& trace, const BidChange& change);

// Fractional work gain an infrequent user obtains from funding at
// 0.75 over proportional share's 1/(n+1), competing with `n_continuous`
// always-on users: (0.75 - 1/(n+1)) * (n+1).
double improvement_over_proportional_share(int n_continuous);

// The same expression written in terms of the total user count m.
double improvement_literal(int m);

struct ImprovementMeasurement {
  int n_continuous = 0;
  int arrival_periods = 0;          // arrival at this many periods
  double arrival_share = 0.0;       // infrequent user's first share
  double work_tycoon = 0.0;
  double work_proportional = 0.0;
  double improvement = 0.0;         // work_tycoon / work_proportional - 1
};

// Simulates n continuous users and one infrequent user, all starting with
// the same balance and a short spending interval, with the arrival chosen so
// the infrequent user's share is as close to 0.75 as the period grid allows.
// The baseline run uses effectively infinite intervals (plain proportional
// share).
ImprovementMeasurement measure_improvement(int n_continuous, std::uint64_t seed = 1);

}  // namespace tycoon::sim
