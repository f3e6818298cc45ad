#pragma once

// Message formats shared by the bank, the service locator, auctioneers and
// agents. The byte layout is documented in docs/wire_format.md; golden
// vectors live in tests/protocol_test.cpp.

#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "tycoon/crypto.hpp"
#include "tycoon/types.hpp"

namespace tycoon::protocol {

inline constexpr std::uint8_t kVersion = 1;

enum class MessageType : std::uint8_t {
  transfer_request = 0x01,
  receipt = 0x02,
  fund = 0x03,
  set_interval = 0x04,
  create_account = 0x05,
  advertisement = 0x06,
  mint_request = 0x07,
  status_query = 0x10,
  status_reply = 0x11,
  balance_query = 0x12,
  balance_reply = 0x13,
  sls_query = 0x14,
  sls_reply = 0x15,
  ack = 0x20,
  rejection = 0x21,
};

std::string_view to_string(MessageType type);

enum class Reject : std::uint8_t {
  bad_signature = 1,
  replay = 2,
  unknown_sender = 3,
  non_positive_amount = 4,
  stale_timestamp = 5,
  wrong_recipient = 6,
  stale_nonce = 7,
  receipt_wrong_payee = 8,
  receipt_wrong_payer = 9,
  bad_bank_signature = 10,
  bad_sender_signature = 11,
  receipt_replay = 12,
  insufficient_funds = 13,
  duplicate_account = 14,
  unknown_account = 15,
  unknown_resource = 16,
  invalid_interval = 17,
  malformed = 18,
  unauthorized = 19,
  key_mismatch = 20,
};

std::string_view to_string(Reject reason);
std::optional<Reject> reject_from_code(std::uint8_t code);

class Verdict {
 public:
  static Verdict accept() { return Verdict(std::nullopt); }
  static Verdict reject(Reject reason) { return Verdict(reason); }

  bool accepted() const { return !reason_; }
  explicit operator bool() const { return accepted(); }
  Reject reason() const { return reason_.value(); }

  friend bool operator==(const Verdict&, const Verdict&) = default;

 private:
  explicit Verdict(std::optional<Reject> reason) : reason_(reason) {}
  std::optional<Reject> reason_;
};

// Either a value or the reason it was refused.
template <class T>
class Outcome {
 public:
  Outcome(T value) : state_(std::move(value)) {}
  Outcome(Reject reason) : state_(reason) {}

  bool ok() const { return std::holds_alternative<T>(state_); }
  explicit operator bool() const { return ok(); }
  const T& value() const { return std::get<T>(state_); }
  T& value() { return std::get<T>(state_); }
  const T* operator->() const { return &value(); }
  Reject error() const { return std::get<Reject>(state_); }

 private:
  std::variant<T, Reject> state_;
};

class DecodeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Canonical field encoding: each field is a 4-byte big-endian length
// followed by that many payload bytes. Strings are raw UTF-8, numbers are
// 8-byte big-endian (IEEE-754 binary64 for reals), nested structures and
// lists are themselves fields whose payload is a canonical encoding.
class Encoder {
 public:
  Encoder& str(std::string_view value);
  Encoder& f64(double value);
  Encoder& u64(std::uint64_t value);
  Encoder& raw(std::span<const std::uint8_t> value);
  Encoder& nested(const Encoder& inner) { return raw(inner.bytes()); }

  const Bytes& bytes() const { return out_; }
  Bytes take() && { return std::move(out_); }

 private:
  Bytes out_;
};

class Decoder {
 public:
  explicit Decoder(std::span<const std::uint8_t> in) : in_(in) {}

  std::string str();
  double f64();
  std::uint64_t u64();
  Bytes raw();
  Decoder nested();

  bool done() const { return pos_ == in_.size(); }
  void expect_done() const;

 private:
  std::span<const std::uint8_t> field();

  std::span<const std::uint8_t> in_;
  std::size_t pos_ = 0;
};

// ---------------------------------------------------------------------------
// Messages

struct TransferRequest {
  UserId sender;
  UserId recipient;
  double amount = 0.0;
  double timestamp = 0.0;  // seconds since epoch (virtual seconds in simulation)
  crypto::Signature signature;

  friend bool operator==(const TransferRequest&, const TransferRequest&) = default;
};

// The bank echoes the request fields exactly and signs them itself.
struct Receipt {
  UserId sender;
  UserId recipient;
  double amount = 0.0;
  double timestamp = 0.0;
  crypto::Signature bank_signature;

  friend bool operator==(const Receipt&, const Receipt&) = default;
};

struct FundMessage {
  UserId sender;
  HostId recipient;
  std::uint64_t nonce = 0;
  ResourceKind resource = ResourceKind::cpu;
  double interval = 0.0;
  Receipt receipt;
  crypto::Signature signature;

  friend bool operator==(const FundMessage&, const FundMessage&) = default;
};

struct SetIntervalMessage {
  UserId sender;
  HostId recipient;
  std::uint64_t nonce = 0;
  ResourceKind resource = ResourceKind::cpu;
  double interval = 0.0;
  crypto::Signature signature;

  friend bool operator==(const SetIntervalMessage&, const SetIntervalMessage&) = default;
};

struct InitialFunding {
  ResourceKind resource = ResourceKind::cpu;
  Receipt receipt;

  friend bool operator==(const InitialFunding&, const InitialFunding&) = default;
};

// Opens an account on a host; each resource's starting balance is proven by
// its own bank receipt.
struct CreateAccountMessage {
  UserId sender;
  HostId recipient;
  std::uint64_t nonce = 0;
  double interval = 0.0;
  std::vector<InitialFunding> funding;
  crypto::Signature signature;

  friend bool operator==(const CreateAccountMessage&, const CreateAccountMessage&) = default;
};

// Issues new credits; only the bank's configured administrator may sign one.
struct MintRequest {
  UserId admin;
  UserId owner;
  double amount = 0.0;
  double timestamp = 0.0;
  crypto::Signature signature;

  friend bool operator==(const MintRequest&, const MintRequest&) = default;
};

struct ResourceAd {
  ResourceKind resource = ResourceKind::cpu;
  double capacity = 0.0;
  double total_spent = 0.0;  // credits/second charged at the last period

  friend bool operator==(const ResourceAd&, const ResourceAd&) = default;
};

struct HostAdvertisement {
  HostId host;
  crypto::PublicKey public_key;
  std::string endpoint;  // "address:port", empty inside simulations
  double issued_at = 0.0;
  std::vector<ResourceAd> resources;
  crypto::Signature signature;

  const ResourceAd* find(ResourceKind kind) const;

  friend bool operator==(const HostAdvertisement&, const HostAdvertisement&) = default;
};

struct StatusQuery {
  UserId user;

  friend bool operator==(const StatusQuery&, const StatusQuery&) = default;
};

struct ResourceStatus {
  ResourceKind resource = ResourceKind::cpu;
  double balance = 0.0;
  double interval = 0.0;
  double last_share = 0.0;
  double last_charge = 0.0;  // credits/second at the last period
  bool evicted = false;

  friend bool operator==(const ResourceStatus&, const ResourceStatus&) = default;
};

struct StatusReply {
  UserId user;
  HostId host;
  std::uint64_t nonce_high_water = 0;
  std::vector<ResourceStatus> resources;

  friend bool operator==(const StatusReply&, const StatusReply&) = default;
};

struct BalanceQuery {
  UserId owner;

  friend bool operator==(const BalanceQuery&, const BalanceQuery&) = default;
};

struct BalanceReply {
  UserId owner;
  double balance = 0.0;

  friend bool operator==(const BalanceReply&, const BalanceReply&) = default;
};

struct SlsQuery {
  std::optional<ResourceKind> resource;
  double min_capacity = 0.0;

  friend bool operator==(const SlsQuery&, const SlsQuery&) = default;
};

struct SlsReply {
  std::vector<HostAdvertisement> ads;

  friend bool operator==(const SlsReply&, const SlsReply&) = default;
};

struct Ack {
  friend bool operator==(const Ack&, const Ack&) = default;
};

struct Rejection {
  Reject reason = Reject::malformed;
  std::string detail;

  friend bool operator==(const Rejection&, const Rejection&) = default;
};

// ---------------------------------------------------------------------------
// Encoding

// Signed fields only (no signature), as laid out in the canonical encoding.
Bytes canonical_encode(const TransferRequest& m);
Bytes canonical_encode(const Receipt& m);
Bytes canonical_encode(const FundMessage& m);
Bytes canonical_encode(const SetIntervalMessage& m);
Bytes canonical_encode(const CreateAccountMessage& m);
Bytes canonical_encode(const MintRequest& m);
Bytes canonical_encode(const HostAdvertisement& m);

// Bytes covered by a signature: the message-type tag followed by the
// canonical encoding. The tag keeps a signature for one message type from
// being accepted as another.
template <class T>
Bytes signing_payload(const T& message);

// Wire frame: type tag, protocol version, then the canonical encoding with
// the signature (if any) appended as a final field.
template <class T>
Bytes encode(const T& message);

// Throws DecodeError on a wrong tag, unknown version, truncation, trailing
// bytes or an out-of-range enumeration.
template <class T>
T decode(std::span<const std::uint8_t> wire);

// Type tag of a wire frame; throws DecodeError if the frame is too short or
// the version is unknown.
MessageType peek_type(std::span<const std::uint8_t> wire);

template <class T>
void sign(T& message, const crypto::Signer& signer);

template <class T>
bool signature_valid(const T& message, const crypto::PublicKey& key);

// Replay-detection key: BLAKE2b of the signing payload.
template <class T>
crypto::Digest message_digest(const T& message);

}  // namespace tycoon::protocol
