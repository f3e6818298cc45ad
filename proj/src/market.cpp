#include "tycoon/market.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace tycoon::market {

namespace {

void check_unique_users(std::span<const Bid> bids) {
  std::set<std::string_view> seen;
  for (const auto& bid : bids) {
    if (!seen.insert(bid.user).second) {
      throw ContractViolation(bid.user, "duplicate bid for user '" + bid.user + "'");
    }
  }
}

// Summed in input order so eviction and allocation see identical totals.
double rate_sum(std::span<const Bid> bids) {
  double sum = 0.0;
  for (const auto& bid : bids) {
    if (bid.balance > 0.0) sum += bid.rate();
  }
  return sum;
}

const Bid* find_bid(std::span<const Bid> bids, const UserId& user) {
  for (const auto& bid : bids) {
    if (bid.user == user) return &bid;
  }
  return nullptr;
}

}  // namespace

void validate(const Bid& bid) {
  if (!(bid.balance >= 0.0) || !std::isfinite(bid.balance)) {
    throw ContractViolation(bid.user, "bid balance must be finite and >= 0");
  }
  if (!(bid.interval > 0.0) || !std::isfinite(bid.interval)) {
    throw ContractViolation(bid.user, "bid interval must be finite and > 0");
  }
  if (!std::isfinite(bid.rate())) {
    throw ContractViolation(bid.user, "bid rate is not finite");
  }
}

void validate(const ResourceCapacity& capacity) {
  if (!(capacity.total > 0.0) || !std::isfinite(capacity.total)) {
    throw std::invalid_argument("resource capacity must be finite and > 0");
  }
  if (!(capacity.period > 0.0) || !std::isfinite(capacity.period)) {
    throw std::invalid_argument("allocation period must be finite and > 0");
  }
}

ShareMap allocate(std::span<const Bid> bids, const ResourceCapacity& capacity) {
  validate(capacity);
  for (const auto& bid : bids) validate(bid);
  check_unique_users(bids);

  ShareMap shares;
  const double total_rate = rate_sum(bids);
  for (const auto& bid : bids) {
    shares[bid.user] =
        (bid.balance > 0.0 && total_rate > 0.0) ? bid.rate() / total_rate * capacity.total : 0.0;
  }
  return shares;
}

ShareMap charge(const ShareMap& shares, std::span<const UsageRecord> usage,
                std::span<const Bid> bids) {
  ShareMap charges;
  for (const auto& [user, share] : shares) charges[user] = 0.0;

  for (const auto& record : usage) {
    if (!(record.consumed >= 0.0) || !std::isfinite(record.consumed)) {
      throw ContractViolation(record.user, "usage must be finite and >= 0");
    }
    auto share_it = shares.find(record.user);
    if (share_it == shares.end()) {
      throw ContractViolation(record.user, "usage reported for '" + record.user + "' with no share");
    }
    const Bid* bid = find_bid(bids, record.user);
    if (bid == nullptr) {
      throw ContractViolation(record.user, "usage reported for '" + record.user + "' with no bid");
    }
    const double share = share_it->second;
    // No share and no use is no charge; a zero share with use still costs at
    // most the (zero) bid rate.
    const double fraction = share > 0.0 ? std::min(record.consumed / share, 1.0) : 0.0;
    charges[record.user] = fraction * bid->rate();
  }
  return charges;
}

Eviction evict_small_bidders(std::span<const Bid> bids, const ResourceCapacity& capacity,
                             double threshold) {
  validate(capacity);
  for (const auto& bid : bids) validate(bid);
  check_unique_users(bids);

  std::vector<Bid> remaining(bids.begin(), bids.end());
  std::vector<UserId> evicted;

  // The smallest positive bidder always holds the smallest share, so only it
  // needs checking on each round.
  for (;;) {
    const double total_rate = rate_sum(remaining);
    auto smallest = remaining.end();
    for (auto it = remaining.begin(); it != remaining.end(); ++it) {
      if (!(it->balance > 0.0)) continue;
      if (smallest == remaining.end() || it->rate() < smallest->rate() ||
          (it->rate() == smallest->rate() && it->user < smallest->user)) {
        smallest = it;
      }
    }
    if (smallest == remaining.end()) break;
    const double share = smallest->rate() / total_rate * capacity.total;
    if (!(share < threshold * capacity.total)) break;
    evicted.push_back(smallest->user);
    remaining.erase(smallest);
  }
  return {std::move(remaining), std::move(evicted)};
}

Settlement settle_period(std::span<const Bid> bids, const ResourceCapacity& capacity,
                         std::span<const UsageRecord> usage, double eviction_threshold) {
  return settle_period(
      bids, capacity,
      [&](const ShareMap&, std::span<const Bid>) {
        return std::vector<UsageRecord>(usage.begin(), usage.end());
      },
      eviction_threshold);
}

Settlement settle_period(std::span<const Bid> bids, const ResourceCapacity& capacity,
                         const UsageProbe& probe, double eviction_threshold) {
  Eviction eviction = evict_small_bidders(bids, capacity, eviction_threshold);
  const ShareMap shares = allocate(eviction.retained, capacity);

  std::vector<UsageRecord> usage = probe(shares, eviction.retained);
  std::erase_if(usage, [&](const UsageRecord& record) {
    return std::find(eviction.evicted.begin(), eviction.evicted.end(), record.user) !=
           eviction.evicted.end();
  });
  const ShareMap charges = charge(shares, usage, eviction.retained);

  Settlement settlement;
  settlement.result.shares = shares;
  settlement.result.charges = charges;
  settlement.result.evicted = eviction.evicted;
  for (const auto& user : eviction.evicted) {
    settlement.result.shares[user] = 0.0;
    settlement.result.charges[user] = 0.0;
  }

  settlement.bids.assign(bids.begin(), bids.end());
  for (auto& bid : settlement.bids) {
    auto it = charges.find(bid.user);
    const double owed = it == charges.end() ? 0.0 : it->second * capacity.period;
    const double after = std::max(0.0, bid.balance - owed);
    settlement.debits[bid.user] = bid.balance - after;
    bid.balance = after;
  }
  return settlement;
}

}  // namespace tycoon::market
