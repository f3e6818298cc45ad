#pragma once

// Proportional-share allocation and usage-based charging for one resource
// market on one host. Everything here is a pure function of its inputs.

#include <functional>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "tycoon/types.hpp"

namespace tycoon::market {

inline constexpr double kDefaultPeriod = 10.0;
// Bidders whose share falls below this fraction of the resource are logged off.
inline constexpr double kEvictionThreshold = 0.001;

// A continuous bid: the user's local balance at this host and the number of
// seconds over which it should be spent.
struct Bid {
  UserId user;
  ResourceKind resource = ResourceKind::cpu;
  double balance = 0.0;
  double interval = 1.0;

  // credits per second
  double rate() const { return balance / interval; }

  friend bool operator==(const Bid&, const Bid&) = default;
};

struct ResourceCapacity {
  ResourceKind resource = ResourceKind::cpu;
  double total = 1.0;
  double period = kDefaultPeriod;
};

// Resource-units consumed by one user over one allocation period.
struct UsageRecord {
  UserId user;
  double consumed = 0.0;
};

using ShareMap = std::map<UserId, double>;

struct AllocationResult {
  ShareMap shares;   // resource-units per user
  ShareMap charges;  // credits per second per user
  std::vector<UserId> evicted;
};

class ContractViolation : public std::invalid_argument {
 public:
  ContractViolation(UserId user, const std::string& what)
      : std::invalid_argument(what), user_(std::move(user)) {}

  const UserId& user() const { return user_; }

 private:
  UserId user_;
};

// Throws ContractViolation if the bid breaks balance >= 0, interval > 0 or
// has a non-finite rate.
void validate(const Bid& bid);
void validate(const ResourceCapacity& capacity);

// r_i = (b_i/t_i) / sum_j(b_j/t_j) * R. Zero-balance bidders get 0 and do not
// count towards the denominator.
ShareMap allocate(std::span<const Bid> bids, const ResourceCapacity& capacity);

// s_i = min(q_i/r_i, 1) * b_i/t_i, with 0/0 taken as 0. Users holding a share
// but absent from `usage` are charged nothing.
ShareMap charge(const ShareMap& shares, std::span<const UsageRecord> usage,
                std::span<const Bid> bids);

struct Eviction {
  std::vector<Bid> retained;
  std::vector<UserId> evicted;  // in eviction order
};

// Repeatedly removes the smallest bidder (ties: lowest user id) while any
// bidder's share is below `threshold` * R.
Eviction evict_small_bidders(std::span<const Bid> bids, const ResourceCapacity& capacity,
                             double threshold = kEvictionThreshold);

struct Settlement {
  AllocationResult result;
  std::vector<Bid> bids;  // input order, balances after charging
  ShareMap debits;        // credits actually removed from each balance
};

// Reports consumption for the coming period given the shares just computed
// and the bids that survived eviction.
using UsageProbe =
    std::function<std::vector<UsageRecord>(const ShareMap& shares, std::span<const Bid> retained)>;

// One allocation period: evict, allocate, charge, then debit s_i * P from
// every retained balance (floored at zero). Evicted users are not charged.
Settlement settle_period(std::span<const Bid> bids, const ResourceCapacity& capacity,
                         std::span<const UsageRecord> usage,
                         double eviction_threshold = kEvictionThreshold);
Settlement settle_period(std::span<const Bid> bids, const ResourceCapacity& capacity,
                         const UsageProbe& probe, double eviction_threshold = kEvictionThreshold);

}  // namespace tycoon::market
