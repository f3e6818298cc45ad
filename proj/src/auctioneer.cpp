#include "tycoon/auctioneer.hpp"

#include <cmath>
#include <cstdio>
#include <set>
#include <stdexcept>

namespace tycoon::auctioneer {

using protocol::Reject;
using protocol::Verdict;

std::vector<market::UsageRecord> FullUsage::usage(ResourceKind, const market::ShareMap& shares,
                                                  std::span<const market::Bid>, double, double) {
  std::vector<market::UsageRecord> out;
  for (const auto& [user, share] : shares) out.push_back({user, share});
  return out;
}

std::string_view trace_header() { return "timestamp,user,resource,share,charge,balance"; }

void write_row(std::ostream& out, const PeriodRow& row) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%.17g,%s,%s,%.17g,%.17g,%.17g\n", row.time, row.user.c_str(),
                std::string(to_string(row.resource)).c_str(), row.share, row.charge, row.balance);
  out << buf;
}

Auctioneer::Auctioneer(AuctioneerConfig config, crypto::Ed25519Signer signer,
                       crypto::PublicKey bank_key, protocol::KeyRegistry users,
                       std::shared_ptr<WorkloadAdapter> workload)
    : config_(std::move(config)),
      signer_(std::move(signer)),
      bank_key_(bank_key),
      users_(std::move(users)),
      workload_(workload ? std::move(workload) : std::make_shared<FullUsage>()),
      guard_(config_.max_skew) {
  if (config_.host.empty()) throw std::invalid_argument("auctioneer needs a host identity");
  if (config_.resources.empty()) throw std::invalid_argument("auctioneer offers no resources");
  std::set<ResourceKind> seen;
  for (const auto& r : config_.resources) {
    market::validate(r);
    if (!seen.insert(r.resource).second) throw std::invalid_argument("resource listed twice");
    if (r.period != config_.resources.front().period) {
      throw std::invalid_argument("all resources on a host share one allocation period");
    }
  }
  if (!(config_.default_interval > 0)) throw std::invalid_argument("default interval must be positive");
}

double Auctioneer::period() const { return config_.resources.front().period; }

const market::ResourceCapacity* Auctioneer::capacity(ResourceKind resource) const {
  for (const auto& r : config_.resources) {
    if (r.resource == resource) return &r;
  }
  return nullptr;
}

protocol::HostContext Auctioneer::context(double now) const {
  return {config_.host, bank_key_, &users_, now};
}

Verdict Auctioneer::create_account(const protocol::CreateAccountMessage& message, double now) {
  auto verdict = protocol::check_create_account(message, guard_, context(now));
  if (!verdict) return verdict;
  if (has_account(message.sender)) return Verdict::reject(Reject::duplicate_account);
  for (const auto& f : message.funding) {
    if (!capacity(f.resource)) return Verdict::reject(Reject::unknown_resource);
  }
  protocol::commit_create_account(message, guard_);
  auto& account = accounts_[message.sender];
  for (const auto& r : config_.resources) {
    ResourceAccount ra;
    ra.interval = message.interval;
    account[r.resource] = ra;
  }
  for (const auto& f : message.funding) {
    auto& ra = account[f.resource];
    ra.balance += f.receipt.amount;
    ra.credited += f.receipt.amount;
  }
  return verdict;
}

Verdict Auctioneer::handle_fund(const protocol::FundMessage& message, double now) {
  auto verdict = protocol::check_fund(message, guard_, context(now));
  if (!verdict) return verdict;
  auto it = accounts_.find(message.sender);
  if (it == accounts_.end()) return Verdict::reject(Reject::unknown_account);
  if (!capacity(message.resource)) return Verdict::reject(Reject::unknown_resource);
  protocol::commit_fund(message, guard_);
  auto& ra = it->second[message.resource];
  ra.balance += message.receipt.amount;
  ra.credited += message.receipt.amount;
  ra.interval = message.interval;
  return verdict;
}

Verdict Auctioneer::handle_set_interval(const protocol::SetIntervalMessage& message, double now) {
  auto verdict = protocol::check_set_interval(message, guard_, context(now));
  if (!verdict) return verdict;
  auto it = accounts_.find(message.sender);
  if (it == accounts_.end()) return Verdict::reject(Reject::unknown_account);
  if (!capacity(message.resource)) return Verdict::reject(Reject::unknown_resource);
  protocol::commit_set_interval(message, guard_);
  it->second[message.resource].interval = message.interval;
  return verdict;
}

std::map<ResourceKind, market::AllocationResult> Auctioneer::run_period(double now) {
  std::map<ResourceKind, market::AllocationResult> results;
  for (const auto& cap : config_.resources) {
    std::vector<market::Bid> bids;
    for (const auto& [user, per_resource] : accounts_) {
      const auto& ra = per_resource.at(cap.resource);
      bids.push_back({user, cap.resource, ra.balance, ra.interval});
    }
    auto probe = [&](const market::ShareMap& shares, std::span<const market::Bid> retained) {
      return workload_->usage(cap.resource, shares, retained, now, cap.period);
    };
    auto settlement = market::settle_period(bids, cap, probe, config_.eviction_threshold);

    double spent = 0.0;
    for (std::size_t i = 0; i < bids.size(); ++i) {
      const auto& user = bids[i].user;
      auto& ra = accounts_[user][cap.resource];
      ra.balance = settlement.bids[i].balance;
      ra.last_share = settlement.result.shares.at(user);
      ra.last_charge = settlement.result.charges.at(user);
      ra.debited += settlement.debits.at(user);
      ra.evicted = false;
      spent += ra.last_charge;
    }
    for (const auto& user : settlement.result.evicted) {
      accounts_[user][cap.resource].evicted = true;
      workload_->disconnect(user, cap.resource);
    }
    total_spent_[cap.resource] = spent;
    if (sink_) {
      for (const auto& bid : bids) {
        const auto& ra = accounts_[bid.user][cap.resource];
        sink_({now, bid.user, cap.resource, ra.last_share, ra.last_charge, ra.balance});
      }
    }
    results.emplace(cap.resource, std::move(settlement.result));
  }
  guard_.prune(now);
  ++periods_;
  last_period_at_ = now;
  return results;
}

protocol::HostAdvertisement Auctioneer::advertise(double now) const {
  protocol::HostAdvertisement ad;
  ad.host = config_.host;
  ad.public_key = signer_.public_key();
  ad.endpoint = config_.endpoint;
  ad.issued_at = now;
  for (const auto& cap : config_.resources) {
    ad.resources.push_back({cap.resource, cap.total, total_spent(cap.resource)});
  }
  protocol::sign(ad, signer_);
  return ad;
}

protocol::Outcome<protocol::StatusReply> Auctioneer::get_status(const UserId& user) const {
  auto it = accounts_.find(user);
  if (it == accounts_.end()) return Reject::unknown_account;
  protocol::StatusReply reply;
  reply.user = user;
  reply.host = config_.host;
  reply.nonce_high_water = guard_.high_water(user, config_.host);
  for (const auto& [resource, ra] : it->second) {
    reply.resources.push_back(
        {resource, ra.balance, ra.interval, ra.last_share, ra.last_charge, ra.evicted});
  }
  return reply;
}

double Auctioneer::total_spent(ResourceKind resource) const {
  auto it = total_spent_.find(resource);
  return it == total_spent_.end() ? 0.0 : it->second;
}

double Auctioneer::sum_local_balances() const {
  double sum = 0.0;
  for (const auto& [user, per] : accounts_) {
    for (const auto& [r, ra] : per) sum += ra.balance;
  }
  return sum;
}

double Auctioneer::total_credited() const {
  double sum = 0.0;
  for (const auto& [user, per] : accounts_) {
    for (const auto& [r, ra] : per) sum += ra.credited;
  }
  return sum;
}

double Auctioneer::total_debited() const {
  double sum = 0.0;
  for (const auto& [user, per] : accounts_) {
    for (const auto& [r, ra] : per) sum += ra.debited;
  }
  return sum;
}

}  // namespace tycoon::auctioneer
