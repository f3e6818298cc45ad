#pragma once

// Acceptance checks for signed messages. Each validate_* function is a pure
// check_* followed by a commit_* on accept; callers that must do further
// checks between the two (the bank's funds check) call them separately.
//
// A ReplayGuard is not internally synchronized. Owners serialize mutations.

#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <utility>

#include "tycoon/crypto.hpp"
#include "tycoon/protocol.hpp"

namespace tycoon::protocol {

inline constexpr double kDefaultMaxSkew = 300.0;

// Static identity -> public key table.
class KeyRegistry {
 public:
  void add(const UserId& id, const crypto::PublicKey& key) { keys_[id] = key; }
  const crypto::PublicKey* find(const UserId& id) const;
  bool contains(const UserId& id) const { return keys_.count(id) != 0; }
  std::size_t size() const { return keys_.size(); }
  const std::map<UserId, crypto::PublicKey>& entries() const { return keys_; }

  // {"alice": "<64 hex chars>", ...}
  std::string to_json() const;
  static KeyRegistry from_json(std::string_view text);  // throws std::invalid_argument
  static KeyRegistry load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

 private:
  std::map<UserId, crypto::PublicKey> keys_;
};

class ReplayGuard {
 public:
  explicit ReplayGuard(double max_skew = kDefaultMaxSkew);

  double max_skew() const { return max_skew_; }

  // Per (sender, recipient) nonce high-water marks; 0 when nothing accepted.
  std::uint64_t high_water(const UserId& sender, const UserId& recipient) const;
  bool nonce_fresh(const UserId& sender, const UserId& recipient, std::uint64_t nonce) const {
    return nonce > high_water(sender, recipient);
  }
  void advance_nonce(const UserId& sender, const UserId& recipient, std::uint64_t nonce);

  // |timestamp - now| <= max_skew.
  bool timestamp_fresh(double timestamp, double now) const;

  // Recently accepted digests, each remembered with its message timestamp.
  bool seen(const crypto::Digest& digest) const { return digests_.count(digest) != 0; }
  void remember(const crypto::Digest& digest, double timestamp);
  // Forgets digests whose timestamp is more than 2 * max_skew before now.
  // Anything that old already fails the timestamp check.
  std::size_t prune(double now);
  std::size_t remembered() const { return digests_.size(); }

  std::string to_json() const;
  static ReplayGuard from_json(std::string_view text);

  friend bool operator==(const ReplayGuard&, const ReplayGuard&) = default;

 private:
  double max_skew_;
  std::map<std::pair<UserId, UserId>, std::uint64_t> nonces_;
  std::map<crypto::Digest, double> digests_;
};

// Bank side. Order: unknown-sender, bad-signature, non-positive-amount,
// stale-timestamp, replay.
Verdict check_transfer(const TransferRequest& request, const ReplayGuard& guard,
                       const KeyRegistry& registry, double now);
void commit_transfer(const TransferRequest& request, ReplayGuard& guard);
Verdict validate_transfer(const TransferRequest& request, ReplayGuard& guard,
                          const KeyRegistry& registry, double now);

// Only `admin` may mint. Order: unauthorized, bad-signature,
// non-positive-amount, stale-timestamp, replay.
Verdict check_mint(const MintRequest& request, const ReplayGuard& guard, const UserId& admin,
                   const crypto::PublicKey& admin_key, double now);
void commit_mint(const MintRequest& request, ReplayGuard& guard);

// What an auctioneer needs to judge a message addressed to it.
struct HostContext {
  HostId self;
  crypto::PublicKey bank_key;
  const KeyRegistry* users = nullptr;
  double now = 0.0;
};

// Order: wrong-recipient, stale-nonce, receipt-wrong-payee,
// receipt-wrong-payer, bad-bank-signature, unknown-sender,
// bad-sender-signature, receipt-replay, stale-timestamp (receipt),
// non-positive-amount, invalid-interval.
Verdict check_fund(const FundMessage& message, const ReplayGuard& guard, const HostContext& host);
void commit_fund(const FundMessage& message, ReplayGuard& guard);
Verdict validate_fund(const FundMessage& message, ReplayGuard& guard, const HostContext& host);

// Order: wrong-recipient, stale-nonce, unknown-sender, bad-sender-signature,
// invalid-interval.
Verdict check_set_interval(const SetIntervalMessage& message, const ReplayGuard& guard,
                           const HostContext& host);
void commit_set_interval(const SetIntervalMessage& message, ReplayGuard& guard);
Verdict validate_set_interval(const SetIntervalMessage& message, ReplayGuard& guard,
                              const HostContext& host);

// Fund checks applied to every embedded receipt; a resource funded twice in
// one message is malformed.
Verdict check_create_account(const CreateAccountMessage& message, const ReplayGuard& guard,
                             const HostContext& host);
void commit_create_account(const CreateAccountMessage& message, ReplayGuard& guard);
Verdict validate_create_account(const CreateAccountMessage& message, ReplayGuard& guard,
                                const HostContext& host);

}  // namespace tycoon::protocol
