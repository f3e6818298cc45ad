#pragma once

// Bidding strategies for a user agent spreading a budget over many
// independent proportional-share markets.

#include <cstddef>
#include <deque>
#include <map>
#include <optional>
#include <shared_mutex>
#include <span>
#include <vector>

#include "tycoon/types.hpp"

namespace tycoon::agent {

// Floor applied to the competing bid on an idle host (credits/second).
inline constexpr double kIdleBidFloor = 1e-6;

struct HostMarketView {
  HostId host;
  double weight = 0.0;       // user's utility weight w_i
  double others_bid = 0.0;   // y_i, aggregate bid rate of everyone else
  double capacity = 1.0;     // R
  double total_spent = 0.0;  // advertised sum of charges at the last period
};

struct BidVector {
  std::map<HostId, double> bids;  // x_i, credits/second
  double budget = 0.0;
  double utility = 0.0;
  // Common marginal value w_i y_i / (x_i + y_i)^2 on every funded host; zero
  // when nothing is funded.
  double marginal = 0.0;

  double total() const;
};

struct BestResponseOptions {
  double idle_floor = kIdleBidFloor;
};

// Marginal utility of one more credit/second on a host.
double marginal_value(double weight, double others_bid, double bid);

// Sum of w_i x_i / (x_i + y_i).
double utility(std::span<const HostMarketView> views, const std::map<HostId, double>& bids,
               const BestResponseOptions& options = {});

// Maximizes sum w_i x_i/(x_i + y_i) subject to sum x_i = budget, x_i >= 0.
// Hosts are ranked by w_i/y_i (ties by host id) and a ranked prefix is funded.
// Throws std::invalid_argument when the budget is not positive, no views are
// given, a weight is negative or every weight is zero.
BidVector best_response(std::span<const HostMarketView> views, double budget,
                        const BestResponseOptions& options = {});

// As best_response, but a host is only funded while its marginal value stays
// at or above `threshold`, so part of the budget may be left unspent.
BidVector best_response_with_threshold(std::span<const HostMarketView> views, double budget,
                                       double threshold, const BestResponseOptions& options = {});

// Competing bid estimated from the advertised total spend minus what this
// user paid there at the last period.
double estimate_others_bid(double total_spent, double own_last_charge,
                           double floor = kIdleBidFloor);

// Bid rate that buys an expected `target_share` of `capacity` against
// competing bids totalling `others_total`: r B / (R - r).
double predictability_bid(double target_share, double others_total, double capacity);

// Sliding window of the competing totals observed at each host. One writer
// per host; readers take a snapshot under a shared lock.
class BidHistory {
 public:
  explicit BidHistory(std::size_t window = 64) : window_(window) {}

  void record(const HostId& host, double others_total);
  std::size_t size(const HostId& host) const;
  // Nearest-rank percentile, p in [0, 100]. Empty history gives nullopt.
  std::optional<double> percentile(const HostId& host, double p) const;

 private:
  std::size_t window_;
  mutable std::shared_mutex mutex_;
  std::map<HostId, std::deque<double>> samples_;
};

// Predictability bid against the p-th percentile of the recorded competing
// totals, falling back to `latest_others_total` when no history exists yet.
double assured_bid(const BidHistory& history, const HostId& host, double target_share,
                   double capacity, double latest_others_total, double percentile = 95.0);

struct WorkSample {
  double work = 0.0;   // application work-units produced
  double spent = 0.0;  // credits paid for them
};

struct CostEffectivenessOptions {
  std::size_t window = 10;  // most recent samples per host
  double epsilon = 0.05;    // fraction of the best host below which a host is dropped
};

// Work-units per credit over the most recent window for each host. Hosts
// below epsilon * best are given weight 0. Throws std::invalid_argument if a
// host spent nothing over its window.
std::map<HostId, double> measure_cost_effectiveness(
    const std::map<HostId, std::vector<WorkSample>>& trace,
    const CostEffectivenessOptions& options = {});

}  // namespace tycoon::agent
