#pragma once

// Central account service. Balances move only through signed transfers and
// admin mints; every accepted operation is appended to an optional journal so
// a restart reproduces the same ledger. Journal and snapshot layouts are in
// docs/journal_format.md.

#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>

#include "tycoon/crypto.hpp"
#include "tycoon/protocol.hpp"
#include "tycoon/validation.hpp"

namespace tycoon::bank {

struct BankConfig {
  UserId identity = "bank";
  UserId admin = "admin";
  double max_skew = protocol::kDefaultMaxSkew;
  // Empty: in-memory only.
  std::filesystem::path journal;
  std::filesystem::path snapshot;
  // Write a snapshot and restart the journal after this many operations.
  std::size_t snapshot_every = 1000;
};

class Bank {
 public:
  // `users` must contain the admin's key for signed mints to succeed. If
  // config.snapshot or config.journal exist the ledger is rebuilt from them.
  Bank(BankConfig config, crypto::Ed25519Signer signer, protocol::KeyRegistry users);

  const BankConfig& config() const { return config_; }
  const crypto::PublicKey& public_key() const { return signer_.public_key(); }

  // Administrative issue of new credits; accounts are created on demand.
  protocol::Verdict mint(const UserId& owner, double amount);
  protocol::Verdict mint(const protocol::MintRequest& request, double now);

  // Validates, checks funds, then moves `amount` and signs a receipt that
  // echoes the request. Any rejection leaves the ledger untouched.
  protocol::Outcome<protocol::Receipt> transfer(const protocol::TransferRequest& request, double now);

  // Unknown owners have balance 0.
  double balance_of(const UserId& owner) const;
  double total_issued() const;
  double sum_of_balances() const;
  std::map<UserId, double> balances() const;
  std::uint64_t sequence() const;

  // Adds a user key after construction (the CLI's keygen registers here).
  void register_key(const UserId& id, const crypto::PublicKey& key);

  // Canonical JSON of balances, total, sequence and replay state.
  std::string state_json() const;
  void write_snapshot() const;

 private:
  struct State {
    std::map<UserId, double> accounts;
    double total_issued = 0.0;
    std::uint64_t seq = 0;
    protocol::ReplayGuard guard;
  };

  void record(const std::string& line);
  void write_snapshot_locked() const;
  void restore();

  BankConfig config_;
  crypto::Ed25519Signer signer_;
  protocol::KeyRegistry users_;
  mutable std::mutex mu_;
  State state_;
  std::unique_ptr<std::ofstream> journal_;
};

}  // namespace tycoon::bank
