#include "tycoon/protocol.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <limits>

namespace tycoon::protocol {

std::string_view to_string(MessageType type) {
  switch (type) {
    case MessageType::transfer_request: return "transfer_request";
    case MessageType::receipt: return "receipt";
    case MessageType::fund: return "fund";
    case MessageType::set_interval: return "set_interval";
    case MessageType::create_account: return "create_account";
    case MessageType::advertisement: return "advertisement";
    case MessageType::mint_request: return "mint_request";
    case MessageType::status_query: return "status_query";
    case MessageType::status_reply: return "status_reply";
    case MessageType::balance_query: return "balance_query";
    case MessageType::balance_reply: return "balance_reply";
    case MessageType::sls_query: return "sls_query";
    case MessageType::sls_reply: return "sls_reply";
    case MessageType::ack: return "ack";
    case MessageType::rejection: return "rejection";
  }
  return "unknown";
}

std::string_view to_string(Reject reason) {
  switch (reason) {
    case Reject::bad_signature: return "bad-signature";
    case Reject::replay: return "replay";
    case Reject::unknown_sender: return "unknown-sender";
    case Reject::non_positive_amount: return "non-positive-amount";
    case Reject::stale_timestamp: return "stale-timestamp";
    case Reject::wrong_recipient: return "wrong-recipient";
    case Reject::stale_nonce: return "stale-nonce";
    case Reject::receipt_wrong_payee: return "receipt-wrong-payee";
    case Reject::receipt_wrong_payer: return "receipt-wrong-payer";
    case Reject::bad_bank_signature: return "bad-bank-signature";
    case Reject::bad_sender_signature: return "bad-sender-signature";
    case Reject::receipt_replay: return "receipt-replay";
    case Reject::insufficient_funds: return "insufficient-funds";
    case Reject::duplicate_account: return "duplicate-account";
    case Reject::unknown_account: return "unknown-account";
    case Reject::unknown_resource: return "unknown-resource";
    case Reject::invalid_interval: return "invalid-interval";
    case Reject::malformed: return "malformed";
    case Reject::unauthorized: return "unauthorized";
    case Reject::key_mismatch: return "key-mismatch";
  }
  return "unknown";
}

std::optional<Reject> reject_from_code(std::uint8_t code) {
  if (code < 1 || code > static_cast<std::uint8_t>(Reject::key_mismatch)) return std::nullopt;
  return static_cast<Reject>(code);
}

// ---------------------------------------------------------------------------
// Encoder / Decoder

namespace {

void put_u32(Bytes& out, std::uint32_t v) {
  for (int shift = 24; shift >= 0; shift -= 8) out.push_back(static_cast<std::uint8_t>(v >> shift));
}

void put_u64(Bytes& out, std::uint64_t v) {
  for (int shift = 56; shift >= 0; shift -= 8) out.push_back(static_cast<std::uint8_t>(v >> shift));
}

std::uint64_t get_u64(std::span<const std::uint8_t> in) {
  std::uint64_t v = 0;
  for (auto b : in) v = v << 8 | b;
  return v;
}

}  // namespace

Encoder& Encoder::str(std::string_view value) {
  return raw({reinterpret_cast<const std::uint8_t*>(value.data()), value.size()});
}

Encoder& Encoder::f64(double value) {
  put_u32(out_, 8);
  put_u64(out_, std::bit_cast<std::uint64_t>(value));
  return *this;
}

Encoder& Encoder::u64(std::uint64_t value) {
  put_u32(out_, 8);
  put_u64(out_, value);
  return *this;
}

Encoder& Encoder::raw(std::span<const std::uint8_t> value) {
  if (value.size() > std::numeric_limits<std::uint32_t>::max()) {
    throw std::length_error("field too large for canonical encoding");
  }
  put_u32(out_, static_cast<std::uint32_t>(value.size()));
  out_.insert(out_.end(), value.begin(), value.end());
  return *this;
}

std::span<const std::uint8_t> Decoder::field() {
  if (in_.size() - pos_ < 4) throw DecodeError("truncated field length");
  const std::uint32_t len = static_cast<std::uint32_t>(in_[pos_]) << 24 |
                            static_cast<std::uint32_t>(in_[pos_ + 1]) << 16 |
                            static_cast<std::uint32_t>(in_[pos_ + 2]) << 8 | in_[pos_ + 3];
  pos_ += 4;
  if (in_.size() - pos_ < len) throw DecodeError("truncated field payload");
  auto out = in_.subspan(pos_, len);
  pos_ += len;
  return out;
}

std::string Decoder::str() {
  auto f = field();
  return {reinterpret_cast<const char*>(f.data()), f.size()};
}

double Decoder::f64() {
  auto f = field();
  if (f.size() != 8) throw DecodeError("real field must be 8 bytes");
  return std::bit_cast<double>(get_u64(f));
}

std::uint64_t Decoder::u64() {
  auto f = field();
  if (f.size() != 8) throw DecodeError("integer field must be 8 bytes");
  return get_u64(f);
}

Bytes Decoder::raw() {
  auto f = field();
  return {f.begin(), f.end()};
}

Decoder Decoder::nested() { return Decoder(field()); }

void Decoder::expect_done() const {
  if (!done()) throw DecodeError("trailing bytes after message");
}

// ---------------------------------------------------------------------------
// Per-message layouts

namespace {

ResourceKind read_resource(Decoder& d) {
  auto name = d.str();
  auto kind = parse_resource(name);
  if (!kind || name != to_string(*kind)) throw DecodeError("unknown resource '" + name + "'");
  return *kind;
}

crypto::Signature read_signature(Decoder& d) {
  auto raw = d.raw();
  auto sig = crypto::Signature::from_bytes(raw);
  if (!sig) throw DecodeError("signature must be 64 bytes");
  return *sig;
}

template <class T>
struct Traits;

template <class Item, class Fn>
void write_list(Encoder& e, const std::vector<Item>& items, Fn write_item) {
  Encoder list;
  list.u64(items.size());
  for (const auto& item : items) {
    Encoder inner;
    write_item(inner, item);
    list.nested(inner);
  }
  e.nested(list);
}

template <class Item, class Fn>
std::vector<Item> read_list(Decoder& d, Fn read_item) {
  Decoder list = d.nested();
  const auto count = list.u64();
  std::vector<Item> items;
  for (std::uint64_t i = 0; i < count; ++i) {
    Decoder inner = list.nested();
    items.push_back(read_item(inner));
    inner.expect_done();
  }
  list.expect_done();
  return items;
}

void write_receipt_body(Encoder& e, const Receipt& r) {
  e.str(r.sender).str(r.recipient).f64(r.amount).f64(r.timestamp);
}

// A receipt embedded in another message carries its bank signature.
void write_full_receipt(Encoder& e, const Receipt& r) {
  Encoder inner;
  write_receipt_body(inner, r);
  inner.raw(r.bank_signature.bytes);
  e.nested(inner);
}

Receipt read_full_receipt(Decoder& d) {
  Decoder inner = d.nested();
  Receipt r;
  r.sender = inner.str();
  r.recipient = inner.str();
  r.amount = inner.f64();
  r.timestamp = inner.f64();
  r.bank_signature = read_signature(inner);
  inner.expect_done();
  return r;
}

template <>
struct Traits<TransferRequest> {
  static constexpr MessageType type = MessageType::transfer_request;
  static constexpr bool is_signed = true;
  static void write(Encoder& e, const TransferRequest& m) {
    e.str(m.sender).str(m.recipient).f64(m.amount).f64(m.timestamp);
  }
  static void read(Decoder& d, TransferRequest& m) {
    m.sender = d.str();
    m.recipient = d.str();
    m.amount = d.f64();
    m.timestamp = d.f64();
  }
  static crypto::Signature& sig(TransferRequest& m) { return m.signature; }
  static const crypto::Signature& sig(const TransferRequest& m) { return m.signature; }
};

template <>
struct Traits<Receipt> {
  static constexpr MessageType type = MessageType::receipt;
  static constexpr bool is_signed = true;
  static void write(Encoder& e, const Receipt& m) { write_receipt_body(e, m); }
  static void read(Decoder& d, Receipt& m) {
    m.sender = d.str();
    m.recipient = d.str();
    m.amount = d.f64();
    m.timestamp = d.f64();
  }
  static crypto::Signature& sig(Receipt& m) { return m.bank_signature; }
  static const crypto::Signature& sig(const Receipt& m) { return m.bank_signature; }
};

template <>
struct Traits<FundMessage> {
  static constexpr MessageType type = MessageType::fund;
  static constexpr bool is_signed = true;
  static void write(Encoder& e, const FundMessage& m) {
    e.str(m.sender).str(m.recipient).u64(m.nonce).str(to_string(m.resource)).f64(m.interval);
    write_full_receipt(e, m.receipt);
  }
  static void read(Decoder& d, FundMessage& m) {
    m.sender = d.str();
    m.recipient = d.str();
    m.nonce = d.u64();
    m.resource = read_resource(d);
    m.interval = d.f64();
    m.receipt = read_full_receipt(d);
  }
  static crypto::Signature& sig(FundMessage& m) { return m.signature; }
  static const crypto::Signature& sig(const FundMessage& m) { return m.signature; }
};

template <>
struct Traits<SetIntervalMessage> {
  static constexpr MessageType type = MessageType::set_interval;
  static constexpr bool is_signed = true;
  static void write(Encoder& e, const SetIntervalMessage& m) {
    e.str(m.sender).str(m.recipient).u64(m.nonce).str(to_string(m.resource)).f64(m.interval);
  }
  static void read(Decoder& d, SetIntervalMessage& m) {
    m.sender = d.str();
    m.recipient = d.str();
    m.nonce = d.u64();
    m.resource = read_resource(d);
    m.interval = d.f64();
  }
  static crypto::Signature& sig(SetIntervalMessage& m) { return m.signature; }
  static const crypto::Signature& sig(const SetIntervalMessage& m) { return m.signature; }
};

template <>
struct Traits<CreateAccountMessage> {
  static constexpr MessageType type = MessageType::create_account;
  static constexpr bool is_signed = true;
  static void write(Encoder& e, const CreateAccountMessage& m) {
    e.str(m.sender).str(m.recipient).u64(m.nonce).f64(m.interval);
    write_list(e, m.funding, [](Encoder& inner, const InitialFunding& f) {
      inner.str(to_string(f.resource));
      write_full_receipt(inner, f.receipt);
    });
  }
  static void read(Decoder& d, CreateAccountMessage& m) {
    m.sender = d.str();
    m.recipient = d.str();
    m.nonce = d.u64();
    m.interval = d.f64();
    m.funding = read_list<InitialFunding>(d, [](Decoder& inner) {
      InitialFunding f;
      f.resource = read_resource(inner);
      f.receipt = read_full_receipt(inner);
      return f;
    });
  }
  static crypto::Signature& sig(CreateAccountMessage& m) { return m.signature; }
  static const crypto::Signature& sig(const CreateAccountMessage& m) { return m.signature; }
};

template <>
struct Traits<MintRequest> {
  static constexpr MessageType type = MessageType::mint_request;
  static constexpr bool is_signed = true;
  static void write(Encoder& e, const MintRequest& m) {
    e.str(m.admin).str(m.owner).f64(m.amount).f64(m.timestamp);
  }
  static void read(Decoder& d, MintRequest& m) {
    m.admin = d.str();
    m.owner = d.str();
    m.amount = d.f64();
    m.timestamp = d.f64();
  }
  static crypto::Signature& sig(MintRequest& m) { return m.signature; }
  static const crypto::Signature& sig(const MintRequest& m) { return m.signature; }
};

template <>
struct Traits<HostAdvertisement> {
  static constexpr MessageType type = MessageType::advertisement;
  static constexpr bool is_signed = true;
  static void write(Encoder& e, const HostAdvertisement& m) {
    e.str(m.host).raw(m.public_key.bytes).str(m.endpoint).f64(m.issued_at);
    write_list(e, m.resources, [](Encoder& inner, const ResourceAd& r) {
      inner.str(to_string(r.resource)).f64(r.capacity).f64(r.total_spent);
    });
  }
  static void read(Decoder& d, HostAdvertisement& m) {
    m.host = d.str();
    auto key = crypto::PublicKey::from_bytes(d.raw());
    if (!key) throw DecodeError("advertisement carries a malformed public key");
    m.public_key = *key;
    m.endpoint = d.str();
    m.issued_at = d.f64();
    m.resources = read_list<ResourceAd>(d, [](Decoder& inner) {
      ResourceAd r;
      r.resource = read_resource(inner);
      r.capacity = inner.f64();
      r.total_spent = inner.f64();
      return r;
    });
  }
  static crypto::Signature& sig(HostAdvertisement& m) { return m.signature; }
  static const crypto::Signature& sig(const HostAdvertisement& m) { return m.signature; }
};

template <>
struct Traits<StatusQuery> {
  static constexpr MessageType type = MessageType::status_query;
  static constexpr bool is_signed = false;
  static void write(Encoder& e, const StatusQuery& m) { e.str(m.user); }
  static void read(Decoder& d, StatusQuery& m) { m.user = d.str(); }
};

template <>
struct Traits<StatusReply> {
  static constexpr MessageType type = MessageType::status_reply;
  static constexpr bool is_signed = false;
  static void write(Encoder& e, const StatusReply& m) {
    e.str(m.user).str(m.host).u64(m.nonce_high_water);
    write_list(e, m.resources, [](Encoder& inner, const ResourceStatus& r) {
      inner.str(to_string(r.resource))
          .f64(r.balance)
          .f64(r.interval)
          .f64(r.last_share)
          .f64(r.last_charge)
          .u64(r.evicted ? 1 : 0);
    });
  }
  static void read(Decoder& d, StatusReply& m) {
    m.user = d.str();
    m.host = d.str();
    m.nonce_high_water = d.u64();
    m.resources = read_list<ResourceStatus>(d, [](Decoder& inner) {
      ResourceStatus r;
      r.resource = read_resource(inner);
      r.balance = inner.f64();
      r.interval = inner.f64();
      r.last_share = inner.f64();
      r.last_charge = inner.f64();
      r.evicted = inner.u64() != 0;
      return r;
    });
  }
};

template <>
struct Traits<BalanceQuery> {
  static constexpr MessageType type = MessageType::balance_query;
  static constexpr bool is_signed = false;
  static void write(Encoder& e, const BalanceQuery& m) { e.str(m.owner); }
  static void read(Decoder& d, BalanceQuery& m) { m.owner = d.str(); }
};

template <>
struct Traits<BalanceReply> {
  static constexpr MessageType type = MessageType::balance_reply;
  static constexpr bool is_signed = false;
  static void write(Encoder& e, const BalanceReply& m) { e.str(m.owner).f64(m.balance); }
  static void read(Decoder& d, BalanceReply& m) {
    m.owner = d.str();
    m.balance = d.f64();
  }
};

template <>
struct Traits<SlsQuery> {
  static constexpr MessageType type = MessageType::sls_query;
  static constexpr bool is_signed = false;
  static void write(Encoder& e, const SlsQuery& m) {
    e.str(m.resource ? to_string(*m.resource) : std::string_view{}).f64(m.min_capacity);
  }
  static void read(Decoder& d, SlsQuery& m) {
    auto name = d.str();
    if (name.empty()) {
      m.resource.reset();
    } else {
      auto kind = parse_resource(name);
      if (!kind || name != to_string(*kind)) throw DecodeError("unknown resource '" + name + "'");
      m.resource = kind;
    }
    m.min_capacity = d.f64();
  }
};

template <>
struct Traits<SlsReply> {
  static constexpr MessageType type = MessageType::sls_reply;
  static constexpr bool is_signed = false;
  static void write(Encoder& e, const SlsReply& m) {
    Encoder list;
    list.u64(m.ads.size());
    for (const auto& ad : m.ads) list.raw(encode(ad));
    e.nested(list);
  }
  static void read(Decoder& d, SlsReply& m) {
    Decoder list = d.nested();
    const auto count = list.u64();
    m.ads.clear();
    for (std::uint64_t i = 0; i < count; ++i) {
      auto wire = list.raw();
      m.ads.push_back(decode<HostAdvertisement>(wire));
    }
    list.expect_done();
  }
};

template <>
struct Traits<Ack> {
  static constexpr MessageType type = MessageType::ack;
  static constexpr bool is_signed = false;
  static void write(Encoder&, const Ack&) {}
  static void read(Decoder&, Ack&) {}
};

template <>
struct Traits<Rejection> {
  static constexpr MessageType type = MessageType::rejection;
  static constexpr bool is_signed = false;
  static void write(Encoder& e, const Rejection& m) {
    e.u64(static_cast<std::uint8_t>(m.reason)).str(m.detail);
  }
  static void read(Decoder& d, Rejection& m) {
    const auto code = d.u64();
    auto reason = code <= 0xff ? reject_from_code(static_cast<std::uint8_t>(code)) : std::nullopt;
    if (!reason) throw DecodeError("unknown rejection code");
    m.reason = *reason;
    m.detail = d.str();
  }
};

}  // namespace

// ---------------------------------------------------------------------------
// Generic entry points

template <class T>
Bytes signing_payload(const T& message) {
  Encoder e;
  Traits<T>::write(e, message);
  Bytes out;
  out.reserve(e.bytes().size() + 1);
  out.push_back(static_cast<std::uint8_t>(Traits<T>::type));
  out.insert(out.end(), e.bytes().begin(), e.bytes().end());
  return out;
}

template <class T>
Bytes encode(const T& message) {
  Encoder e;
  Traits<T>::write(e, message);
  if constexpr (Traits<T>::is_signed) e.raw(Traits<T>::sig(message).bytes);
  Bytes out;
  out.reserve(e.bytes().size() + 2);
  out.push_back(static_cast<std::uint8_t>(Traits<T>::type));
  out.push_back(kVersion);
  out.insert(out.end(), e.bytes().begin(), e.bytes().end());
  return out;
}

MessageType peek_type(std::span<const std::uint8_t> wire) {
  if (wire.size() < 2) throw DecodeError("frame shorter than header");
  if (wire[1] != kVersion) throw DecodeError("unsupported protocol version");
  return static_cast<MessageType>(wire[0]);
}

template <class T>
T decode(std::span<const std::uint8_t> wire) {
  if (peek_type(wire) != Traits<T>::type) {
    throw DecodeError("expected " + std::string(to_string(Traits<T>::type)) + " frame, got tag " +
                      std::to_string(wire[0]));
  }
  Decoder d(wire.subspan(2));
  T message;
  Traits<T>::read(d, message);
  if constexpr (Traits<T>::is_signed) Traits<T>::sig(message) = read_signature(d);
  d.expect_done();
  return message;
}

template <class T>
void sign(T& message, const crypto::Signer& signer) {
  Traits<T>::sig(message) = signer.sign(signing_payload(message));
}

template <class T>
bool signature_valid(const T& message, const crypto::PublicKey& key) {
  return crypto::verify(key, signing_payload(message), Traits<T>::sig(message));
}

template <class T>
crypto::Digest message_digest(const T& message) {
  return crypto::digest(signing_payload(message));
}

Bytes canonical_encode(const TransferRequest& m) {
  Encoder e;
  Traits<TransferRequest>::write(e, m);
  return std::move(e).take();
}
Bytes canonical_encode(const Receipt& m) {
  Encoder e;
  Traits<Receipt>::write(e, m);
  return std::move(e).take();
}
Bytes canonical_encode(const FundMessage& m) {
  Encoder e;
  Traits<FundMessage>::write(e, m);
  return std::move(e).take();
}
Bytes canonical_encode(const SetIntervalMessage& m) {
  Encoder e;
  Traits<SetIntervalMessage>::write(e, m);
  return std::move(e).take();
}
Bytes canonical_encode(const CreateAccountMessage& m) {
  Encoder e;
  Traits<CreateAccountMessage>::write(e, m);
  return std::move(e).take();
}
Bytes canonical_encode(const MintRequest& m) {
  Encoder e;
  Traits<MintRequest>::write(e, m);
  return std::move(e).take();
}
Bytes canonical_encode(const HostAdvertisement& m) {
  Encoder e;
  Traits<HostAdvertisement>::write(e, m);
  return std::move(e).take();
}

const ResourceAd* HostAdvertisement::find(ResourceKind kind) const {
  for (const auto& r : resources) {
    if (r.resource == kind) return &r;
  }
  return nullptr;
}

#define TYCOON_SIGNED_MESSAGE(T)                                               \
  template Bytes signing_payload<T>(const T&);                                 \
  template void sign<T>(T&, const crypto::Signer&);                            \
  template bool signature_valid<T>(const T&, const crypto::PublicKey&);        \
  template crypto::Digest message_digest<T>(const T&);

#define TYCOON_MESSAGE(T)                                                      \
  template Bytes encode<T>(const T&);                                          \
  template T decode<T>(std::span<const std::uint8_t>);

TYCOON_SIGNED_MESSAGE(TransferRequest)
TYCOON_SIGNED_MESSAGE(Receipt)
TYCOON_SIGNED_MESSAGE(FundMessage)
TYCOON_SIGNED_MESSAGE(SetIntervalMessage)
TYCOON_SIGNED_MESSAGE(CreateAccountMessage)
TYCOON_SIGNED_MESSAGE(MintRequest)
TYCOON_SIGNED_MESSAGE(HostAdvertisement)

TYCOON_MESSAGE(TransferRequest)
TYCOON_MESSAGE(Receipt)
TYCOON_MESSAGE(FundMessage)
TYCOON_MESSAGE(SetIntervalMessage)
TYCOON_MESSAGE(CreateAccountMessage)
TYCOON_MESSAGE(MintRequest)
TYCOON_MESSAGE(HostAdvertisement)
TYCOON_MESSAGE(StatusQuery)
TYCOON_MESSAGE(StatusReply)
TYCOON_MESSAGE(BalanceQuery)
TYCOON_MESSAGE(BalanceReply)
TYCOON_MESSAGE(SlsQuery)
TYCOON_MESSAGE(SlsReply)
TYCOON_MESSAGE(Ack)
TYCOON_MESSAGE(Rejection)

#undef TYCOON_SIGNED_MESSAGE
#undef TYCOON_MESSAGE

}  // namespace tycoon::protocol
