#pragma once

// Per-host market: local accounts, fund/set_interval/create_account
// handling, the periodic allocation loop and signed advertisements.
//
// Not internally synchronized; the owner serializes calls (one logical event
// queue per host).

#include <functional>
#include <map>
#include <memory>
#include <ostream>
#include <span>
#include <vector>

#include "tycoon/crypto.hpp"
#include "tycoon/market.hpp"
#include "tycoon/protocol.hpp"
#include "tycoon/validation.hpp"

namespace tycoon::auctioneer {

inline constexpr double kDefaultInterval = 1e7;

// Stands in for the host's virtualization layer: reports what each user
// actually consumed of the share it was granted.
class WorkloadAdapter {
 public:
  virtual ~WorkloadAdapter() = default;
  // Consumption over [now, now + period) for the users in `retained`.
  virtual std::vector<market::UsageRecord> usage(ResourceKind resource, const market::ShareMap& shares,
                                                 std::span<const market::Bid> retained, double now,
                                                 double period) = 0;
  // The user was evicted from `resource` and should be logged off.
  virtual void disconnect(const UserId& user, ResourceKind resource) {
    (void)user;
    (void)resource;
  }
};

// Every user consumes its whole share.
class FullUsage final : public WorkloadAdapter {
 public:
  std::vector<market::UsageRecord> usage(ResourceKind resource, const market::ShareMap& shares,
                                         std::span<const market::Bid> retained, double now,
                                         double period) override;
};

struct AuctioneerConfig {
  HostId host;
  std::string endpoint;
  std::vector<market::ResourceCapacity> resources = {{ResourceKind::cpu, 1.0, market::kDefaultPeriod}};
  double default_interval = kDefaultInterval;
  double max_skew = protocol::kDefaultMaxSkew;
  double eviction_threshold = market::kEvictionThreshold;
};

struct ResourceAccount {
  double balance = 0.0;
  double interval = kDefaultInterval;
  double last_share = 0.0;
  double last_charge = 0.0;  // credits/second
  bool evicted = false;
  double credited = 0.0;  // receipts accepted
  double debited = 0.0;   // charges taken
};

struct PeriodRow {
  double time = 0.0;
  UserId user;
  ResourceKind resource = ResourceKind::cpu;
  double share = 0.0;
  double charge = 0.0;
  double balance = 0.0;
};

std::string_view trace_header();  // "timestamp,user,resource,share,charge,balance"
void write_row(std::ostream& out, const PeriodRow& row);

class Auctioneer {
 public:
  Auctioneer(AuctioneerConfig config, crypto::Ed25519Signer signer, crypto::PublicKey bank_key,
             protocol::KeyRegistry users, std::shared_ptr<WorkloadAdapter> workload = nullptr);

  const AuctioneerConfig& config() const { return config_; }
  const HostId& host() const { return config_.host; }
  // Address advertised to the service locator.
  void set_endpoint(std::string endpoint) { config_.endpoint = std::move(endpoint); }
  const crypto::PublicKey& public_key() const { return signer_.public_key(); }
  double period() const;

  // Rejects duplicate-account and unknown-resource besides the validation
  // reasons. Unfunded resources start at balance 0.
  protocol::Verdict create_account(const protocol::CreateAccountMessage& message, double now);
  protocol::Verdict handle_fund(const protocol::FundMessage& message, double now);
  protocol::Verdict handle_set_interval(const protocol::SetIntervalMessage& message, double now);

  // One allocation period for every resource: evict, allocate, probe usage,
  // charge and debit.
  std::map<ResourceKind, market::AllocationResult> run_period(double now);

  // Capacities plus the sum of last-period charges; never individual bids.
  protocol::HostAdvertisement advertise(double now) const;

  protocol::Outcome<protocol::StatusReply> get_status(const UserId& user) const;

  // Per-period rows are handed to the sink as they are produced.
  void set_trace_sink(std::function<void(const PeriodRow&)> sink) { sink_ = std::move(sink); }
  void add_user_key(const UserId& id, const crypto::PublicKey& key) { users_.add(id, key); }

  bool has_account(const UserId& user) const { return accounts_.count(user) != 0; }
  const std::map<UserId, std::map<ResourceKind, ResourceAccount>>& accounts() const {
    return accounts_;
  }
  double total_spent(ResourceKind resource) const;
  double sum_local_balances() const;
  double total_credited() const;
  double total_debited() const;
  std::uint64_t periods_run() const { return periods_; }
  std::optional<double> last_period_at() const { return last_period_at_; }

 private:
  protocol::HostContext context(double now) const;
  const market::ResourceCapacity* capacity(ResourceKind resource) const;

  AuctioneerConfig config_;
  crypto::Ed25519Signer signer_;
  crypto::PublicKey bank_key_;
  protocol::KeyRegistry users_;
  std::shared_ptr<WorkloadAdapter> workload_;
  protocol::ReplayGuard guard_;
  std::map<UserId, std::map<ResourceKind, ResourceAccount>> accounts_;
  std::map<ResourceKind, double> total_spent_;
  std::uint64_t periods_ = 0;
  std::optional<double> last_period_at_;
  std::function<void(const PeriodRow&)> sink_;
};

}  // namespace tycoon::auctioneer
