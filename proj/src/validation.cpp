#include "tycoon/validation.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace tycoon::protocol {

using nlohmann::json;

// ---------------------------------------------------------------------------
// KeyRegistry

const crypto::PublicKey* KeyRegistry::find(const UserId& id) const {
  auto it = keys_.find(id);
  return it == keys_.end() ? nullptr : &it->second;
}

std::string KeyRegistry::to_json() const {
  json out = json::object();
  for (const auto& [id, key] : keys_) out[id] = key.hex();
  return out.dump(2);
}

KeyRegistry KeyRegistry::from_json(std::string_view text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw std::invalid_argument(std::string("key registry: ") + e.what());
  }
  if (!doc.is_object()) throw std::invalid_argument("key registry must be a JSON object");
  KeyRegistry registry;
  for (const auto& [id, value] : doc.items()) {
    if (!value.is_string()) throw std::invalid_argument("key registry: '" + id + "' is not a string");
    auto key = crypto::PublicKey::from_hex(value.get<std::string>());
    if (!key) throw std::invalid_argument("key registry: bad public key for '" + id + "'");
    registry.add(id, *key);
  }
  return registry;
}

KeyRegistry KeyRegistry::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot read key registry " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return from_json(buf.str());
}

void KeyRegistry::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write key registry " + path.string());
  out << to_json() << '\n';
}

// ---------------------------------------------------------------------------
// ReplayGuard

ReplayGuard::ReplayGuard(double max_skew) : max_skew_(max_skew) {
  if (!(max_skew > 0) || !std::isfinite(max_skew)) {
    throw std::invalid_argument("max clock skew must be positive");
  }
}

std::uint64_t ReplayGuard::high_water(const UserId& sender, const UserId& recipient) const {
  auto it = nonces_.find({sender, recipient});
  return it == nonces_.end() ? 0 : it->second;
}

void ReplayGuard::advance_nonce(const UserId& sender, const UserId& recipient,
                                std::uint64_t nonce) {
  auto& mark = nonces_[{sender, recipient}];
  if (nonce > mark) mark = nonce;
}

bool ReplayGuard::timestamp_fresh(double timestamp, double now) const {
  return std::isfinite(timestamp) && std::fabs(timestamp - now) <= max_skew_;
}

void ReplayGuard::remember(const crypto::Digest& digest, double timestamp) {
  digests_[digest] = timestamp;
}

std::size_t ReplayGuard::prune(double now) {
  const double horizon = now - 2 * max_skew_;
  std::size_t dropped = 0;
  for (auto it = digests_.begin(); it != digests_.end();) {
    if (it->second < horizon) {
      it = digests_.erase(it);
      ++dropped;
    } else {
      ++it;
    }
  }
  return dropped;
}

std::string ReplayGuard::to_json() const {
  json nonces = json::array();
  for (const auto& [pair, n] : nonces_) nonces.push_back({pair.first, pair.second, n});
  json digests = json::array();
  for (const auto& [d, ts] : digests_) digests.push_back({crypto::to_hex(d), ts});
  return json{{"max_skew", max_skew_}, {"nonces", nonces}, {"digests", digests}}.dump();
}

ReplayGuard ReplayGuard::from_json(std::string_view text) {
  try {
    auto doc = json::parse(text);
    ReplayGuard guard(doc.at("max_skew").get<double>());
    for (const auto& row : doc.at("nonces")) {
      guard.nonces_[{row.at(0).get<std::string>(), row.at(1).get<std::string>()}] =
          row.at(2).get<std::uint64_t>();
    }
    for (const auto& row : doc.at("digests")) {
      auto raw = crypto::from_hex(row.at(0).get<std::string>());
      if (!raw || raw->size() != crypto::kDigestSize) throw std::invalid_argument("bad digest");
      crypto::Digest d;
      std::copy(raw->begin(), raw->end(), d.begin());
      guard.digests_[d] = row.at(1).get<double>();
    }
    return guard;
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("replay guard: ") + e.what());
  }
}

// ---------------------------------------------------------------------------
// Checks

namespace {

bool positive_finite(double x) { return x > 0 && std::isfinite(x); }

Verdict reject(Reject r) { return Verdict::reject(r); }

// Payee, payer, bank signature.
std::optional<Reject> receipt_problem(const Receipt& receipt, const UserId& payer,
                                      const HostContext& host) {
  if (receipt.recipient != host.self) return Reject::receipt_wrong_payee;
  if (receipt.sender != payer) return Reject::receipt_wrong_payer;
  if (!signature_valid(receipt, host.bank_key)) return Reject::bad_bank_signature;
  return std::nullopt;
}

std::optional<Reject> receipt_usable(const Receipt& receipt, const ReplayGuard& guard,
                                     const HostContext& host) {
  if (guard.seen(message_digest(receipt))) return Reject::receipt_replay;
  if (!guard.timestamp_fresh(receipt.timestamp, host.now)) return Reject::stale_timestamp;
  if (!positive_finite(receipt.amount)) return Reject::non_positive_amount;
  return std::nullopt;
}

template <class M>
std::optional<Reject> sender_problem(const M& message, const HostContext& host) {
  const crypto::PublicKey* key = host.users ? host.users->find(message.sender) : nullptr;
  if (!key) return Reject::unknown_sender;
  if (!signature_valid(message, *key)) return Reject::bad_sender_signature;
  return std::nullopt;
}

}  // namespace

Verdict check_transfer(const TransferRequest& request, const ReplayGuard& guard,
                       const KeyRegistry& registry, double now) {
  const crypto::PublicKey* key = registry.find(request.sender);
  if (!key) return reject(Reject::unknown_sender);
  if (!signature_valid(request, *key)) return reject(Reject::bad_signature);
  if (!positive_finite(request.amount)) return reject(Reject::non_positive_amount);
  if (!guard.timestamp_fresh(request.timestamp, now)) return reject(Reject::stale_timestamp);
  if (guard.seen(message_digest(request))) return reject(Reject::replay);
  return Verdict::accept();
}

void commit_transfer(const TransferRequest& request, ReplayGuard& guard) {
  guard.remember(message_digest(request), request.timestamp);
}

Verdict validate_transfer(const TransferRequest& request, ReplayGuard& guard,
                          const KeyRegistry& registry, double now) {
  auto verdict = check_transfer(request, guard, registry, now);
  if (verdict) commit_transfer(request, guard);
  return verdict;
}

Verdict check_mint(const MintRequest& request, const ReplayGuard& guard, const UserId& admin,
                   const crypto::PublicKey& admin_key, double now) {
  if (request.admin != admin) return reject(Reject::unauthorized);
  if (!signature_valid(request, admin_key)) return reject(Reject::bad_signature);
  if (!positive_finite(request.amount)) return reject(Reject::non_positive_amount);
  if (!guard.timestamp_fresh(request.timestamp, now)) return reject(Reject::stale_timestamp);
  if (guard.seen(message_digest(request))) return reject(Reject::replay);
  return Verdict::accept();
}

void commit_mint(const MintRequest& request, ReplayGuard& guard) {
  guard.remember(message_digest(request), request.timestamp);
}

Verdict check_fund(const FundMessage& message, const ReplayGuard& guard, const HostContext& host) {
  if (message.recipient != host.self) return reject(Reject::wrong_recipient);
  if (!guard.nonce_fresh(message.sender, message.recipient, message.nonce)) {
    return reject(Reject::stale_nonce);
  }
  if (auto r = receipt_problem(message.receipt, message.sender, host)) return reject(*r);
  if (auto r = sender_problem(message, host)) return reject(*r);
  if (auto r = receipt_usable(message.receipt, guard, host)) return reject(*r);
  if (!positive_finite(message.interval)) return reject(Reject::invalid_interval);
  return Verdict::accept();
}

void commit_fund(const FundMessage& message, ReplayGuard& guard) {
  guard.advance_nonce(message.sender, message.recipient, message.nonce);
  guard.remember(message_digest(message.receipt), message.receipt.timestamp);
}

Verdict validate_fund(const FundMessage& message, ReplayGuard& guard, const HostContext& host) {
  auto verdict = check_fund(message, guard, host);
  if (verdict) commit_fund(message, guard);
  return verdict;
}

Verdict check_set_interval(const SetIntervalMessage& message, const ReplayGuard& guard,
                           const HostContext& host) {
  if (message.recipient != host.self) return reject(Reject::wrong_recipient);
  if (!guard.nonce_fresh(message.sender, message.recipient, message.nonce)) {
    return reject(Reject::stale_nonce);
  }
  if (auto r = sender_problem(message, host)) return reject(*r);
  if (!positive_finite(message.interval)) return reject(Reject::invalid_interval);
  return Verdict::accept();
}

void commit_set_interval(const SetIntervalMessage& message, ReplayGuard& guard) {
  guard.advance_nonce(message.sender, message.recipient, message.nonce);
}

Verdict validate_set_interval(const SetIntervalMessage& message, ReplayGuard& guard,
                              const HostContext& host) {
  auto verdict = check_set_interval(message, guard, host);
  if (verdict) commit_set_interval(message, guard);
  return verdict;
}

Verdict check_create_account(const CreateAccountMessage& message, const ReplayGuard& guard,
                             const HostContext& host) {
  if (message.recipient != host.self) return reject(Reject::wrong_recipient);
  if (!guard.nonce_fresh(message.sender, message.recipient, message.nonce)) {
    return reject(Reject::stale_nonce);
  }
  for (const auto& f : message.funding) {
    if (auto r = receipt_problem(f.receipt, message.sender, host)) return reject(*r);
  }
  if (auto r = sender_problem(message, host)) return reject(*r);
  std::set<ResourceKind> resources;
  std::set<crypto::Digest> receipts;
  for (const auto& f : message.funding) {
    if (!resources.insert(f.resource).second) return reject(Reject::malformed);
    if (!receipts.insert(message_digest(f.receipt)).second) return reject(Reject::receipt_replay);
    if (auto r = receipt_usable(f.receipt, guard, host)) return reject(*r);
  }
  if (!positive_finite(message.interval)) return reject(Reject::invalid_interval);
  return Verdict::accept();
}

void commit_create_account(const CreateAccountMessage& message, ReplayGuard& guard) {
  guard.advance_nonce(message.sender, message.recipient, message.nonce);
  for (const auto& f : message.funding) {
    guard.remember(message_digest(f.receipt), f.receipt.timestamp);
  }
}

Verdict validate_create_account(const CreateAccountMessage& message, ReplayGuard& guard,
                                const HostContext& host) {
  auto verdict = check_create_account(message, guard, host);
  if (verdict) commit_create_account(message, guard);
  return verdict;
}

}  // namespace tycoon::protocol
